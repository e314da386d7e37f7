use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

use super::{FrontendConfig, MelFilterbank, Waveform};

/// Added before the natural log so silent bins stay finite.
pub const LOG_FLOOR: f64 = 1e-10;

/// Row-major `(n_mels, n_frames)` feature matrix.
///
/// Values are stored at single precision, which is also the on-disk
/// precision, so feature files round-trip bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    values: Vec<f32>,
    n_mels: usize,
    n_frames: usize,
    frame_rate: f32,
}

impl MelSpectrogram {
    pub fn new(values: Vec<f32>, n_mels: usize, n_frames: usize, frame_rate: f32) -> Result<Self> {
        if values.len() != n_mels * n_frames {
            return Err(Error::shape(
                "MelSpectrogram::new",
                format!("{} values for ({n_mels}, {n_frames})", values.len()),
            ));
        }
        Ok(Self {
            values,
            n_mels,
            n_frames,
            frame_rate,
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn frame_rate(&self) -> f32 {
        self.frame_rate
    }

    pub fn get(&self, mel: usize, frame: usize) -> f32 {
        self.values[mel * self.n_frames + frame]
    }

    pub fn row(&self, mel: usize) -> &[f32] {
        &self.values[mel * self.n_frames..(mel + 1) * self.n_frames]
    }

    /// Energy summed over frames for each mel band.
    pub fn band_totals(&self) -> Vec<f64> {
        (0..self.n_mels)
            .map(|m| self.row(m).iter().map(|&v| v as f64).sum())
            .collect()
    }
}

/// Frames produced for `len` samples: `floor((len - n_fft) / hop) + 1`, or a
/// single zero-padded frame when `len < n_fft`.
pub fn frame_count(len: usize, n_fft: usize, hop: usize) -> usize {
    if len < n_fft {
        1
    } else {
        (len - n_fft) / hop + 1
    }
}

/// One-sided power spectrum `|X_k|^2`, `k = 0..=n/2`, of an already windowed frame.
pub fn power_spectrum(frame: &[f64]) -> Vec<f64> {
    let n = frame.len();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut buf: Vec<Complex<f64>> = frame.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fft.process(&mut buf);
    buf[..n / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
}

pub fn mel_spectrogram(
    wave: &Waveform,
    cfg: &FrontendConfig,
    fb: &MelFilterbank,
) -> Result<MelSpectrogram> {
    cfg.validate()?;
    if wave.sample_rate() != cfg.sample_rate {
        return Err(Error::SampleRateMismatch {
            waveform: wave.sample_rate(),
            expected: cfg.sample_rate,
        });
    }
    if wave.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    if fb.n_mels() != cfg.n_mels || fb.n_bins() != cfg.n_bins() {
        return Err(Error::shape(
            "mel_spectrogram",
            format!(
                "filterbank {:?} does not match config ({}, {})",
                fb.shape(),
                cfg.n_mels,
                cfg.n_bins()
            ),
        ));
    }

    let n_fft = cfg.n_fft;
    let n_frames = frame_count(wave.len(), n_fft, cfg.hop_length);
    let window = cfg.window.coefficients(n_fft);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let samples = wave.samples();

    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0; cfg.n_bins()];
    let mut mel = vec![0.0; cfg.n_mels];
    let mut values = vec![0f32; cfg.n_mels * n_frames];
    for t in 0..n_frames {
        let start = t * cfg.hop_length;
        for (i, b) in buf.iter_mut().enumerate() {
            let x = samples.get(start + i).copied().unwrap_or(0.0);
            *b = Complex::new(x * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        fb.apply(&power, &mut mel);
        for (m, &e) in mel.iter().enumerate() {
            let v = if cfg.log_compress { (e + LOG_FLOOR).ln() } else { e };
            values[m * n_frames + t] = v as f32;
        }
    }
    MelSpectrogram::new(values, cfg.n_mels, n_frames, cfg.frame_rate() as f32)
}
