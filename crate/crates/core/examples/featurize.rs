//! Log-mel features for a two-tone signal.
//!
//!     cargo run --example featurize

use lowres_asr::audio::{build_mel_filterbank, mel_spectrogram, FrontendConfig, Waveform};

fn main() -> lowres_asr::Result<()> {
    let cfg = FrontendConfig::fon();
    let sr = cfg.sample_rate as f64;
    let samples = (0..cfg.sample_rate as usize)
        .map(|i| {
            let t = i as f64 / sr;
            0.4 * (2.0 * std::f64::consts::PI * 440.0 * t).sin() + 0.2 * (2.0 * std::f64::consts::PI * 3000.0 * t).sin()
        })
        .collect();
    let wave = Waveform::new(samples, cfg.sample_rate)?;
    let fb = build_mel_filterbank(&cfg)?;
    let spec = mel_spectrogram(&wave, &cfg, &fb)?;

    println!(
        "{:.2} s at {} Hz -> {} mel bands x {} frames ({:.2} frames/s)",
        wave.duration_s(),
        cfg.sample_rate,
        spec.n_mels(),
        spec.n_frames(),
        spec.frame_rate()
    );
    let totals = spec.band_totals();
    let mut order: Vec<usize> = (0..totals.len()).collect();
    order.sort_by(|&a, &b| totals[b].total_cmp(&totals[a]));
    for &m in &order[..4] {
        println!("band {m:3} centred at {:7.1} Hz: mean log energy {:.2}", fb.center_freqs_hz()[m], totals[m] / spec.n_frames() as f64);
    }
    Ok(())
}
