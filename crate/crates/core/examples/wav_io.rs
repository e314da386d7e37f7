//! Write a WAV, read it back and resample it.
//!
//!     cargo run --example wav_io

use lowres_asr::audio::{read_wav, resample, write_wav, Waveform};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("chirp.wav");
    let sr = 8000u32;
    let samples: Vec<f64> = (0..sr as usize / 2)
        .map(|i| {
            let t = i as f64 / sr as f64;
            0.5 * (2.0 * std::f64::consts::PI * (300.0 + 800.0 * t) * t).sin()
        })
        .collect();
    write_wav(&path, &Waveform::new(samples.clone(), sr)?)?;

    let back = read_wav(&path)?;
    let max_err = samples.iter().zip(back.samples()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("{} samples at {} Hz, 16-bit round trip error {max_err:.2e}", back.len(), back.sample_rate());

    let up = resample(&back, 16_000)?;
    println!("resampled to {} Hz: {} samples, {:.3} s", up.sample_rate(), up.len(), up.duration_s());
    Ok(())
}
