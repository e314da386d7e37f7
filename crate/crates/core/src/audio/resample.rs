use crate::error::{Error, Result};

use super::Waveform;

/// Linear-interpolation resampler.
///
/// Output sample `i` sits at source position `i * src_rate / target_rate`;
/// positions past the last input sample hold the last value.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::Domain("target sample rate must be positive".into()));
    }
    if w.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    if target_rate == w.sample_rate() {
        return Ok(w.clone());
    }
    let src = w.samples();
    let ratio = w.sample_rate() as f64 / target_rate as f64;
    let out_len = (src.len() as f64 * target_rate as f64 / w.sample_rate() as f64).round() as usize;
    let last = src.len() - 1;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let left = (pos.floor() as usize).min(last);
            let right = (left + 1).min(last);
            let frac = pos - left as f64;
            if frac <= 0.0 || left == right {
                src[left]
            } else {
                src[left] + (src[right] - src[left]) * frac
            }
        })
        .collect();
    Waveform::new(samples, target_rate)
}
