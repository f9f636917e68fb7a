use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::FeatureMatrix;

/// Masking augmentation: one random contiguous span of frames (width up
/// to `time_mask`) and one band of feature bins (width up to
/// `freq_mask`) are overwritten with the matrix mean. Oversized widths
/// clamp to the matrix; zero widths leave the input untouched.
pub fn spec_augment(
    features: &FeatureMatrix,
    time_mask: usize,
    freq_mask: usize,
    rng: &mut ChaCha8Rng,
) -> FeatureMatrix {
    let mut out = features.clone();
    let fill = features.mean();
    let t_width = rng.gen_range(0..=time_mask.min(features.frames));
    let t_start = rng.gen_range(0..=features.frames - t_width);
    for t in t_start..t_start + t_width {
        for f in 0..features.dim {
            out.values[t * features.dim + f] = fill;
        }
    }
    let f_width = rng.gen_range(0..=freq_mask.min(features.dim));
    let f_start = rng.gen_range(0..=features.dim - f_width);
    for t in 0..features.frames {
        for f in f_start..f_start + f_width {
            out.values[t * features.dim + f] = fill;
        }
    }
    out
}
