//! Hamming-windowed STFT analysis and overlap-add synthesis.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::dsp::{Spectrogram, Waveform};
use crate::error::{Error, Result};

/// Framing of an STFT: window and shift in seconds, FFT size in bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftParams {
    pub frame_length_s: f64,
    pub frame_shift_s: f64,
    pub fft_size: usize,
    pub sample_rate: u32,
}

impl StftParams {
    pub fn window_len(&self) -> usize {
        (self.frame_length_s * self.sample_rate as f64).round() as usize
    }

    pub fn hop(&self) -> usize {
        (self.frame_shift_s * self.sample_rate as f64).round() as usize
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count for a signal of `len` samples: no end padding, so
    /// `1 + (len - window) / hop`, zero if the signal is shorter than one
    /// window.
    pub fn frame_count(&self, len: usize) -> usize {
        let win = self.window_len();
        if len < win {
            0
        } else {
            1 + (len - win) / self.hop()
        }
    }
}

fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

fn check_params(p: &StftParams) -> Result<()> {
    if !p.fft_size.is_power_of_two() {
        return Err(Error::invalid(
            "stft",
            format!("fft_size {} is not a power of two", p.fft_size),
        ));
    }
    let win = p.window_len();
    if win == 0 {
        return Err(Error::invalid("stft", "window length rounds to zero samples"));
    }
    if win > p.fft_size {
        return Err(Error::invalid(
            "stft",
            format!("window of {win} samples exceeds fft_size {}", p.fft_size),
        ));
    }
    if p.hop() == 0 {
        return Err(Error::invalid("stft", "frame shift rounds to zero samples"));
    }
    Ok(())
}

/// One-sided STFT of a mono waveform. Frames are Hamming-windowed and
/// zero-padded to `fft_size`; the signal ends are not padded.
pub fn stft(
    w: &Waveform,
    frame_length_s: f64,
    frame_shift_s: f64,
    fft_size: usize,
) -> Result<Spectrogram> {
    if w.is_empty() {
        return Err(Error::invalid("stft", "empty waveform"));
    }
    let params = StftParams {
        frame_length_s,
        frame_shift_s,
        fft_size,
        sample_rate: w.sample_rate,
    };
    check_params(&params)?;

    let win_len = params.window_len();
    let hop = params.hop();
    let bins = params.bins();
    let frames = params.frame_count(w.len());
    let window = hamming(win_len);

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(fft_size);
    let mut buf = vec![Complex::new(0.0f64, 0.0); fft_size];
    let mut re = Vec::with_capacity(frames * bins);
    let mut im = Vec::with_capacity(frames * bins);

    for t in 0..frames {
        let start = t * hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            let v = if i < win_len {
                w.samples[start + i] * window[i]
            } else {
                0.0
            };
            *slot = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        for b in buf.iter().take(bins) {
            re.push(b.re);
            im.push(b.im);
        }
    }

    Ok(Spectrogram {
        re,
        im,
        frames,
        bins,
        params,
    })
}

/// Overlap-add synthesis taking magnitudes from `s` and phases from
/// `phase_source`. With `s` as its own phase source this inverts [`stft`]
/// exactly on all samples the frames cover.
pub fn istft(s: &Spectrogram, phase_source: &Spectrogram) -> Result<Waveform> {
    if !s.same_framing(phase_source) {
        return Err(Error::shape(
            "istft",
            format!(
                "{}x{} vs {}x{} frames",
                s.frames, s.bins, phase_source.frames, phase_source.bins
            ),
        ));
    }
    let params = s.params;
    check_params(&params)?;
    let win_len = params.window_len();
    let hop = params.hop();
    let fft_size = params.fft_size;
    let bins = params.bins();
    let window = hamming(win_len);

    let out_len = if s.frames == 0 {
        0
    } else {
        (s.frames - 1) * hop + win_len
    };
    let mut acc = vec![0.0f64; out_len];
    let mut norm = vec![0.0f64; out_len];

    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(fft_size);
    let mut buf = vec![Complex::new(0.0f64, 0.0); fft_size];

    for t in 0..s.frames {
        // combine |s| with the phase of phase_source, then mirror to a full
        // hermitian spectrum
        for f in 0..bins {
            let idx = t * bins + f;
            let mag = (s.re[idx] * s.re[idx] + s.im[idx] * s.im[idx]).sqrt();
            let (pr, pi) = (phase_source.re[idx], phase_source.im[idx]);
            let pmag = (pr * pr + pi * pi).sqrt();
            let (ur, ui) = if pmag > 0.0 {
                (pr / pmag, pi / pmag)
            } else {
                (1.0, 0.0)
            };
            buf[f] = Complex::new(mag * ur, mag * ui);
        }
        for f in 1..fft_size - bins + 1 {
            buf[fft_size - f] = buf[f].conj();
        }
        ifft.process(&mut buf);
        let start = t * hop;
        for i in 0..win_len {
            let sample = buf[i].re / fft_size as f64;
            acc[start + i] += window[i] * sample;
            norm[start + i] += window[i] * window[i];
        }
    }

    for (a, n) in acc.iter_mut().zip(&norm) {
        if *n > 1e-12 {
            *a /= n;
        }
    }
    Waveform::new(acc, params.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{FFT_SIZE, FRAME_LENGTH_S, FRAME_SHIFT_S, SAMPLE_RATE};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn default_stft(w: &Waveform) -> Spectrogram {
        stft(w, FRAME_LENGTH_S, FRAME_SHIFT_S, FFT_SIZE).unwrap()
    }

    fn sine(freq: f64, n: usize) -> Waveform {
        let samples = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64).sin())
            .collect();
        Waveform::new(samples, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn single_frame_shape() {
        let w = sine(440.0, 512);
        let s = default_stft(&w);
        assert_eq!(s.frames, 1);
        assert_eq!(s.bins, 257);
    }

    #[test]
    fn pure_tone_peak_bin_matches_direct_dft() {
        let w = sine(1000.0, 512 + 256 * 3);
        let s = default_stft(&w);
        let mag = s.magnitude();
        for t in 0..s.frames {
            let row = &mag.values[t * s.bins..(t + 1) * s.bins];
            let peak = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(peak, 32, "frame {t}: 1 kHz at 16 kHz / fft 512 lands on bin 32");
        }
        // first frame against a direct DFT loop over the windowed samples
        let dft = grf_asr_oracles::dft_magnitudes(
            &w.samples[..512]
                .iter()
                .zip(super::hamming(512))
                .map(|(x, h)| x * h)
                .collect::<Vec<_>>(),
            512,
        );
        for f in 0..257 {
            assert!(
                (dft[f] - mag.at(0, f)).abs() < 1e-8 * mag.at(0, 32).max(1.0),
                "bin {f}: {} vs {}",
                dft[f],
                mag.at(0, f)
            );
        }
    }

    #[test]
    fn zero_waveform_zero_spectrogram() {
        let w = Waveform::new(vec![0.0; 1024], SAMPLE_RATE).unwrap();
        let s = default_stft(&w);
        assert!(s.re.iter().chain(&s.im).all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_empty_and_bad_fft_size() {
        let w = Waveform::new(vec![], SAMPLE_RATE).unwrap();
        assert!(stft(&w, FRAME_LENGTH_S, FRAME_SHIFT_S, FFT_SIZE).is_err());
        let w = sine(100.0, 1024);
        assert!(stft(&w, FRAME_LENGTH_S, FRAME_SHIFT_S, 500).is_err());
        // window longer than fft_size
        assert!(stft(&w, 0.064, FRAME_SHIFT_S, 512).is_err());
    }

    #[test]
    fn round_trip_recovers_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<f64> = (0..4096).map(|_| rng.gen_range(-0.9..0.9)).collect();
        let w = Waveform::new(samples, SAMPLE_RATE).unwrap();
        let s = default_stft(&w);
        let back = istft(&s, &s).unwrap();
        let peak = w.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..back.len() {
            assert!(
                (back.samples[i] - w.samples[i]).abs() < 1e-6 * peak,
                "sample {i}"
            );
        }
    }

    #[test]
    fn zero_magnitudes_give_zero_waveform() {
        let w = sine(500.0, 2048);
        let s = default_stft(&w);
        let zero = Spectrogram {
            re: vec![0.0; s.re.len()],
            im: vec![0.0; s.im.len()],
            ..s.clone()
        };
        let out = istft(&zero, &s).unwrap();
        assert!(out.samples.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn istft_rejects_mismatched_framing() {
        let a = default_stft(&sine(500.0, 2048));
        let b = default_stft(&sine(500.0, 4096));
        assert!(istft(&a, &b).is_err());
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 2048;
        let w1 = Waveform::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), SAMPLE_RATE)
            .unwrap();
        let w2 = Waveform::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), SAMPLE_RATE)
            .unwrap();
        let (a, b) = (0.7, -1.3);
        let combo = Waveform::new(
            w1.samples
                .iter()
                .zip(&w2.samples)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            SAMPLE_RATE,
        )
        .unwrap();
        let s1 = default_stft(&w1);
        let s2 = default_stft(&w2);
        let sc = default_stft(&combo);
        let scale = sc.re.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..sc.re.len() {
            assert!((sc.re[i] - (a * s1.re[i] + b * s2.re[i])).abs() < 1e-9 * scale);
            assert!((sc.im[i] - (a * s1.im[i] + b * s2.im[i])).abs() < 1e-9 * scale);
        }
    }
}
