use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MelSpectrogram;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SpecAugmentConfig {
    pub max_freq_mask_width: usize,
    pub max_time_mask_width: usize,
    pub n_freq_masks: usize,
    pub n_time_masks: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SpecAugmentConfig {
    pub fn is_noop(&self) -> bool {
        (self.n_freq_masks == 0 || self.max_freq_mask_width == 0)
            && (self.n_time_masks == 0 || self.max_time_mask_width == 0)
    }
}

/// Zeroes random contiguous bands of mel rows and frame columns.
///
/// Each mask width is drawn uniformly from `0..=max_width` (clamped to the
/// axis extent) and its start uniformly among the positions where it fits.
/// Frequency masks are drawn first, then time masks.
pub fn spec_augment(s: &MelSpectrogram, cfg: &SpecAugmentConfig) -> MelSpectrogram {
    let mut out = s.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n_mels, n_frames) = (s.n_mels(), s.n_frames());

    for _ in 0..cfg.n_freq_masks {
        let (start, width) = draw_band(&mut rng, cfg.max_freq_mask_width, n_mels);
        for m in start..start + width {
            out.values_mut()[m * n_frames..(m + 1) * n_frames].fill(0.0);
        }
    }
    for _ in 0..cfg.n_time_masks {
        let (start, width) = draw_band(&mut rng, cfg.max_time_mask_width, n_frames);
        for m in 0..n_mels {
            out.values_mut()[m * n_frames + start..m * n_frames + start + width].fill(0.0);
        }
    }
    out
}

fn draw_band(rng: &mut ChaCha8Rng, max_width: usize, extent: usize) -> (usize, usize) {
    let width = rng.random_range(0..=max_width).min(extent);
    let start = rng.random_range(0..=extent - width);
    (start, width)
}
