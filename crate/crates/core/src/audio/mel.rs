use crate::error::{Error, Result};

use super::FrontendConfig;

/// O'Shaughnessy mel scale: `m = 2595 log10(1 + f / 700)`.
pub fn hertz_to_mel(f: f64) -> Result<f64> {
    if !(f >= 0.0) {
        return Err(Error::Domain(format!("frequency must be >= 0 Hz, got {f}")));
    }
    Ok(2595.0 * (1.0 + f / 700.0).log10())
}

pub fn mel_to_hertz(m: f64) -> Result<f64> {
    if !(m >= 0.0) {
        return Err(Error::Domain(format!("mel value must be >= 0, got {m}")));
    }
    Ok(700.0 * (10f64.powf(m / 2595.0) - 1.0))
}

/// Triangular mel filters over the one-sided power spectrum.
///
/// `weights` is row-major `(n_mels, n_fft / 2 + 1)`; each row is a triangle
/// with peak 1 at its center bin, falling to zero at the neighbouring
/// centers.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    weights: Vec<f64>,
    n_mels: usize,
    n_bins: usize,
    center_bins: Vec<usize>,
    center_freqs_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_mels, self.n_bins)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, mel: usize) -> &[f64] {
        &self.weights[mel * self.n_bins..(mel + 1) * self.n_bins]
    }

    /// FFT bin carrying each filter's peak.
    pub fn center_bins(&self) -> &[usize] {
        &self.center_bins
    }

    pub fn center_freqs_hz(&self) -> &[f64] {
        &self.center_freqs_hz
    }

    /// `weights · power` for one frame.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        debug_assert_eq!(power.len(), self.n_bins);
        for (m, o) in out.iter_mut().enumerate() {
            *o = self
                .row(m)
                .iter()
                .zip(power)
                .map(|(w, p)| w * p)
                .sum();
        }
    }
}

/// Builds `n_mels` triangular filters whose edges and centers are equally
/// spaced on the mel axis between 0 and the Nyquist frequency.
///
/// Edge points are snapped to FFT bins. Where two consecutive points would
/// land on the same bin (the mel spacing is finer than the FFT resolution),
/// the later point is pushed to the next free bin so that every filter owns
/// a distinct peak bin and no row is empty.
pub fn build_mel_filterbank(cfg: &FrontendConfig) -> Result<MelFilterbank> {
    cfg.validate()?;
    let n_bins = cfg.n_bins();
    let last_bin = cfg.n_fft / 2;
    let n_points = cfg.n_mels + 2;
    if n_points > n_bins {
        return Err(Error::Config(format!(
            "{} mel filters need {} distinct FFT bins but n_fft {} only has {}; \
             some filter would be empty",
            cfg.n_mels, n_points, cfg.n_fft, n_bins
        )));
    }

    let nyquist = cfg.sample_rate as f64 / 2.0;
    let mel_max = hertz_to_mel(nyquist)?;
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;

    let mut points = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let mel = mel_max * i as f64 / (n_points - 1) as f64;
        let hz = mel_to_hertz(mel)?;
        let ideal = (hz / bin_hz).round() as usize;
        let bin = match points.last() {
            None => 0,
            Some(&prev) => ideal.max(prev + 1),
        };
        points.push(bin);
    }
    points[n_points - 1] = last_bin;
    for i in (0..n_points - 1).rev() {
        points[i] = points[i].min(points[i + 1] - 1);
    }

    let mut weights = vec![0.0; cfg.n_mels * n_bins];
    for m in 0..cfg.n_mels {
        let (left, center, right) = (points[m], points[m + 1], points[m + 2]);
        let row = &mut weights[m * n_bins..(m + 1) * n_bins];
        for (j, w) in row.iter_mut().enumerate().take(right).skip(left + 1) {
            *w = if j <= center {
                (j - left) as f64 / (center - left) as f64
            } else {
                (right - j) as f64 / (right - center) as f64
            };
        }
    }

    let center_bins = points[1..=cfg.n_mels].to_vec();
    let center_freqs_hz = center_bins.iter().map(|&b| b as f64 * bin_hz).collect();
    Ok(MelFilterbank {
        weights,
        n_mels: cfg.n_mels,
        n_bins,
        center_bins,
        center_freqs_hz,
    })
}
