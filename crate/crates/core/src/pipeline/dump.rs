use std::fs;
use std::path::{Path, PathBuf};

use crate::autodiff::ParamSet;
use crate::dsp::{MagnitudeSpectrum, MAG_FLOOR};
use crate::{Error, Result};

use super::{JointModel, Pipeline};

/// Render a magnitude spectrum as a binary PGM image: one column per
/// frame, one row per frequency bin with the highest bin on top. Pixel
/// intensity is log magnitude mapped linearly from `lo..hi` to 0..255.
fn to_pgm(m: &MagnitudeSpectrum, lo: f64, hi: f64) -> Vec<u8> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let mut out = format!("P5\n{} {}\n255\n", m.frames, m.bins).into_bytes();
    for row in 0..m.bins {
        let bin = m.bins - 1 - row;
        for t in 0..m.frames {
            let v = m.at(t, bin).max(MAG_FLOOR).ln();
            let level = ((v - lo) / span * 255.0).clamp(0.0, 255.0);
            out.push(level.round() as u8);
        }
    }
    out
}

/// Plain-text dump: a `frames bins` header line, then one
/// space-separated frame of magnitudes per line.
fn to_text(m: &MagnitudeSpectrum) -> String {
    let mut out = format!("{} {}\n", m.frames, m.bins);
    for t in 0..m.frames {
        let row: Vec<String> = (0..m.bins).map(|f| format!("{:.6e}", m.at(t, f))).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

fn write_file(path: PathBuf, bytes: &[u8], written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

fn dump_matrices(
    id: &str,
    noisy: &MagnitudeSpectrum,
    enhanced: Option<&MagnitudeSpectrum>,
    clean: &MagnitudeSpectrum,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let lo = MAG_FLOOR.ln();
    let hi = [Some(noisy), enhanced, Some(clean)]
        .into_iter()
        .flatten()
        .flat_map(|m| m.values.iter())
        .fold(lo, |acc, &v| acc.max(v.max(MAG_FLOOR).ln()));

    let mut written = Vec::new();
    let dump_one = |kind: &str, m: &MagnitudeSpectrum, written: &mut Vec<PathBuf>| {
        write_file(out_dir.join(format!("{id}_{kind}.pgm")), &to_pgm(m, lo, hi), written)?;
        write_file(out_dir.join(format!("{id}_{kind}.txt")), to_text(m).as_bytes(), written)
    };
    dump_one("noisy", noisy, &mut written)?;
    if let Some(enh) = enhanced {
        dump_one("enhanced", enh, &mut written)?;
    }
    dump_one("clean", clean, &mut written)?;
    Ok(written)
}

/// Write noisy, enhanced (when the model has an enhancement stage) and
/// clean magnitude spectrograms for one utterance, each as a PGM image
/// plus a numeric text file. All images share one intensity scale so
/// they can be compared side by side. Returns the written paths.
pub fn dump_spectrograms(
    pipe: &Pipeline,
    model: &JointModel,
    params: &ParamSet,
    utt_id: &str,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let utt = pipe.utterance(utt_id)?;
    let enhanced = model
        .enhancer
        .as_ref()
        .map(|e| e.enhance(params, &utt.noisy_mag).map(|(_, m)| m))
        .transpose()?;
    dump_matrices(utt_id, &utt.noisy_mag, enhanced.as_ref(), &utt.clean_mag, out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spectrum(frames: usize, bins: usize, f: impl Fn(usize, usize) -> f64) -> MagnitudeSpectrum {
        let values = (0..frames * bins)
            .map(|i| f(i / bins, i % bins))
            .collect();
        MagnitudeSpectrum::new(values, frames, bins).unwrap()
    }

    #[test]
    fn pgm_header_and_intensity_mapping() {
        let m = spectrum(3, 2, |t, f| if t == 0 && f == 0 { 1.0 } else { 0.0 });
        let lo = MAG_FLOOR.ln();
        let bytes = to_pgm(&m, lo, 0.0);
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        let pixels = &bytes[b"P5\n3 2\n255\n".len()..];
        assert_eq!(pixels.len(), 6);
        // top row is bin 1 (all zero magnitude -> floor -> intensity 0);
        // bottom row starts with the single loud bin at full intensity.
        assert_eq!(&pixels[..3], &[0, 0, 0]);
        assert_eq!(pixels[3], 255);
        assert_eq!(&pixels[4..], &[0, 0]);
    }

    #[test]
    fn text_dump_round_trips_values() {
        let m = spectrum(2, 3, |t, f| (t * 3 + f) as f64 / 7.0);
        let text = to_text(&m);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("2 3"));
        let parsed: Vec<f64> = lines
            .flat_map(|l| l.split(' '))
            .map(|s| s.parse().unwrap())
            .collect();
        assert_eq!(parsed.len(), 6);
        for (a, b) in parsed.iter().zip(&m.values) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn matching_matrices_produce_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = spectrum(4, 3, |t, f| ((t + f) as f64).sin().abs());
        let paths = dump_matrices("u1", &m, None, &m, dir.path()).unwrap();
        assert_eq!(paths.len(), 4);
        assert!(paths.iter().all(|p| p.exists()));
        let noisy_pgm = fs::read(dir.path().join("u1_noisy.pgm")).unwrap();
        let clean_pgm = fs::read(dir.path().join("u1_clean.pgm")).unwrap();
        assert_eq!(noisy_pgm, clean_pgm);
        let noisy_txt = fs::read(dir.path().join("u1_noisy.txt")).unwrap();
        let clean_txt = fs::read(dir.path().join("u1_clean.txt")).unwrap();
        assert_eq!(noisy_txt, clean_txt);
    }

    #[test]
    fn enhanced_matrix_is_optional_but_shares_the_scale() {
        let dir = tempfile::tempdir().unwrap();
        let quiet = spectrum(2, 2, |_, _| 0.0);
        let loud = spectrum(2, 2, |_, _| 5.0);
        let paths = dump_matrices("u2", &quiet, Some(&loud), &quiet, dir.path()).unwrap();
        assert_eq!(paths.len(), 6);
        let header = b"P5\n2 2\n255\n".len();
        let noisy = fs::read(dir.path().join("u2_noisy.pgm")).unwrap();
        let enhanced = fs::read(dir.path().join("u2_enhanced.pgm")).unwrap();
        // shared scale: quiet matrix pinned to black, loud one to white.
        assert!(noisy[header..].iter().all(|&p| p == 0));
        assert!(enhanced[header..].iter().all(|&p| p == 255));
    }
}
