//! Frequency and time masking on a constant spectrogram.
//!
//!     cargo run --example spec_augment

use lowres_asr::audio::{spec_augment, MelSpectrogram, SpecAugmentConfig};

fn main() -> lowres_asr::Result<()> {
    let (n_mels, n_frames) = (16, 48);
    let spec = MelSpectrogram::new(vec![1.0; n_mels * n_frames], n_mels, n_frames, 100.0)?;
    let cfg = SpecAugmentConfig {
        max_freq_mask_width: 4,
        max_time_mask_width: 8,
        n_freq_masks: 2,
        n_time_masks: 2,
        seed: 2,
    };
    let masked = spec_augment(&spec, &cfg);
    for m in (0..n_mels).rev() {
        let row: String = masked.row(m).iter().map(|&v| if v == 0.0 { '.' } else { '#' }).collect();
        println!("{m:2} {row}");
    }
    let zeros = masked.values().iter().filter(|&&v| v == 0.0).count();
    println!("{zeros} of {} cells masked", n_mels * n_frames);
    Ok(())
}
