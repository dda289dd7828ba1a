//! Spectral primitives shared by the feature pipeline, the vocoder, the codec
//! and the augmentations.
//!
//! The canonical analysis is a Hann-windowed STFT with 50 ms frames, 25 ms hop
//! and 1024 FFT bins; log magnitudes keep the first `fft/2` bins (the Nyquist
//! bin is dropped). All logs are floored at [`LOG_EPS`] so silence stays finite.

use rustfft::{num_complex::Complex, FftPlanner};

use crate::audio_io::AudioClip;
use crate::error::{Error, Result};

/// Additive floor inside every `ln(magnitude + eps)`.
pub const LOG_EPS: f64 = 1e-10;

/// Value a log spectrogram takes on silence: `ln(LOG_EPS)`.
pub fn log_floor() -> f64 {
    LOG_EPS.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrogramScale {
    LogLinear,
    LogMel(usize),
}

/// Time x frequency matrix of log magnitudes, row-major over frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Vec<f64>,
    pub num_frames: usize,
    pub num_bins: usize,
    pub frame_len_samples: usize,
    pub hop_samples: usize,
    pub fft_bins: usize,
    pub scale: SpectrogramScale,
}

impl Spectrogram {
    pub fn value(&self, frame: usize, bin: usize) -> f64 {
        self.values[frame * self.num_bins + bin]
    }

    pub fn set(&mut self, frame: usize, bin: usize, v: f64) {
        self.values[frame * self.num_bins + bin] = v;
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.num_bins..(frame + 1) * self.num_bins]
    }

    /// Arithmetic mean over the frame axis; the utterance-level collapse.
    pub fn mean_over_frames(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.num_bins];
        for f in 0..self.num_frames {
            for (b, m) in mean.iter_mut().enumerate() {
                *m += self.value(f, b);
            }
        }
        for m in &mut mean {
            *m /= self.num_frames as f64;
        }
        mean
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Window {
    Hann,
    Rect,
}

pub(crate) fn window_values(kind: Window, len: usize) -> Vec<f64> {
    match kind {
        Window::Hann => (0..len)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
            .collect(),
        Window::Rect => vec![1.0; len],
    }
}

pub(crate) fn frame_count(n_samples: usize, frame_len: usize, hop: usize) -> usize {
    if n_samples < frame_len {
        0
    } else {
        1 + (n_samples - frame_len) / hop
    }
}

/// Hann-windowed log-magnitude spectrogram. Frames of `frame_ms` every
/// `hop_ms`, zero-padded to `fft_size`; bins `0..fft_size/2` kept.
pub fn stft_log_spectrogram(
    clip: &AudioClip,
    frame_ms: f64,
    hop_ms: f64,
    fft_size: usize,
) -> Result<Spectrogram> {
    stft_log_spectrogram_windowed(clip, frame_ms, hop_ms, fft_size, Window::Hann)
}

pub(crate) fn stft_log_spectrogram_windowed(
    clip: &AudioClip,
    frame_ms: f64,
    hop_ms: f64,
    fft_size: usize,
    window: Window,
) -> Result<Spectrogram> {
    let rate = clip.sample_rate_hz as f64;
    let frame_len = (frame_ms * rate / 1000.0).round() as usize;
    let hop = (hop_ms * rate / 1000.0).round() as usize;
    if fft_size < frame_len {
        return Err(Error::PreconditionViolation(format!(
            "fft_size {fft_size} < frame length {frame_len}"
        )));
    }
    if clip.len() < frame_len {
        return Err(Error::ClipTooShort {
            got: clip.len(),
            need: frame_len,
        });
    }

    let num_frames = frame_count(clip.len(), frame_len, hop);
    let num_bins = fft_size / 2;
    let win = window_values(window, frame_len);
    let fft = FftPlanner::new().plan_fft_forward(fft_size);

    let mut values = Vec::with_capacity(num_frames * num_bins);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    for f in 0..num_frames {
        let start = f * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < frame_len {
                Complex::new(clip.samples[start + i] * win[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        values.extend(buf[..num_bins].iter().map(|c| (c.norm() + LOG_EPS).ln()));
    }

    Ok(Spectrogram {
        values,
        num_frames,
        num_bins,
        frame_len_samples: frame_len,
        hop_samples: hop,
        fft_bins: fft_size,
        scale: SpectrogramScale::LogLinear,
    })
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10.0f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank weights (HTK formula, 0..=8000 Hz), one row per
/// mel band over `num_bins` linear bins. Rows are normalized to unit sum so a
/// constant spectrum maps to the same constant.
pub fn mel_filterbank(num_mel: usize, num_bins: usize, fft_size: usize, rate_hz: u32) -> Vec<Vec<f64>> {
    let f_max = 8000.0f64.min(rate_hz as f64 / 2.0);
    let mel_pts: Vec<f64> = (0..num_mel + 2)
        .map(|i| hz_to_mel(0.0) + (hz_to_mel(f_max) - hz_to_mel(0.0)) * i as f64 / (num_mel + 1) as f64)
        .collect();
    let hz_pts: Vec<f64> = mel_pts.iter().map(|&m| mel_to_hz(m)).collect();
    let bin_hz = rate_hz as f64 / fft_size as f64;

    let mut bank = vec![vec![0.0; num_bins]; num_mel];
    for (m, row) in bank.iter_mut().enumerate() {
        let (lo, center, hi) = (hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]);
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            if f > lo && f < center {
                *w = (f - lo) / (center - lo);
            } else if f >= center && f < hi {
                *w = (hi - f) / (hi - center);
            }
        }
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            for w in row.iter_mut() {
                *w /= sum;
            }
        }
    }
    bank
}

/// Project a log-linear spectrogram onto `num_mel` mel bands and re-log.
pub fn mel_project(spec: &Spectrogram, num_mel: usize) -> Result<Spectrogram> {
    if spec.scale != SpectrogramScale::LogLinear {
        return Err(Error::PreconditionViolation(
            "mel projection expects a log-linear spectrogram".into(),
        ));
    }
    if num_mel < 2 || num_mel > spec.num_bins {
        return Err(Error::InvalidNumMel(num_mel));
    }
    let bank = mel_filterbank(num_mel, spec.num_bins, spec.fft_bins, crate::CANONICAL_RATE_HZ);

    let mut values = Vec::with_capacity(spec.num_frames * num_mel);
    for f in 0..spec.num_frames {
        let frame = spec.frame(f);
        for row in &bank {
            let lin: f64 = row
                .iter()
                .zip(frame)
                .map(|(w, v)| w * v.exp())
                .sum();
            values.push((lin + LOG_EPS).ln());
        }
    }
    Ok(Spectrogram {
        values,
        num_frames: spec.num_frames,
        num_bins: num_mel,
        frame_len_samples: spec.frame_len_samples,
        hop_samples: spec.hop_samples,
        fft_bins: spec.fft_bins,
        scale: SpectrogramScale::LogMel(num_mel),
    })
}

/// High-frequency boost: `y[n] = x[n] - coeff * x[n-1]`, `y[0] = x[0]`.
pub fn pre_emphasis(clip: &AudioClip, coeff: f64) -> AudioClip {
    assert!((0.0..1.0).contains(&coeff), "coefficient must be in [0, 1)");
    let mut out = Vec::with_capacity(clip.len());
    let mut prev = 0.0;
    for (i, &x) in clip.samples.iter().enumerate() {
        out.push(if i == 0 { x } else { x - coeff * prev });
        prev = x;
    }
    AudioClip::new(out, clip.sample_rate_hz)
}

/// Exact inverse of [`pre_emphasis`]: `y[n] = x[n] + coeff * y[n-1]`.
pub fn de_emphasis(clip: &AudioClip, coeff: f64) -> AudioClip {
    assert!((0.0..1.0).contains(&coeff), "coefficient must be in [0, 1)");
    let mut out = Vec::with_capacity(clip.len());
    let mut prev = 0.0;
    for (i, &x) in clip.samples.iter().enumerate() {
        let y = if i == 0 { x } else { x + coeff * prev };
        out.push(y);
        prev = y;
    }
    AudioClip::new(out, clip.sample_rate_hz)
}

// ---------------------------------------------------------------------------
// Internal helpers used by the vocoder, augmentations and corpus synthesis.
// ---------------------------------------------------------------------------

/// Complex STFT frames (Hann window, zero-padded to `fft_size`).
pub(crate) fn stft_complex(
    samples: &[f64],
    frame_len: usize,
    hop: usize,
    fft_size: usize,
) -> Vec<Vec<Complex<f64>>> {
    let num_frames = frame_count(samples.len(), frame_len, hop);
    let win = window_values(Window::Hann, frame_len);
    let fft = FftPlanner::new().plan_fft_forward(fft_size);
    let mut frames = Vec::with_capacity(num_frames);
    for f in 0..num_frames {
        let start = f * hop;
        let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
        for i in 0..frame_len {
            buf[i] = Complex::new(samples[start + i] * win[i], 0.0);
        }
        fft.process(&mut buf);
        frames.push(buf);
    }
    frames
}

/// Weighted overlap-add inverse of [`stft_complex`] with Hann synthesis
/// window. Output is trimmed or zero-padded to `out_len`.
pub(crate) fn istft(
    frames: &[Vec<Complex<f64>>],
    frame_len: usize,
    hop: usize,
    fft_size: usize,
    out_len: usize,
) -> Vec<f64> {
    let win = window_values(Window::Hann, frame_len);
    let ifft = FftPlanner::new().plan_fft_inverse(fft_size);
    let total = ((frames.len().saturating_sub(1)) * hop + frame_len).max(out_len);
    let mut acc = vec![0.0; total];
    let mut norm = vec![0.0; total];
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    for (f, frame) in frames.iter().enumerate() {
        buf.copy_from_slice(frame);
        ifft.process(&mut buf);
        let start = f * hop;
        for i in 0..frame_len {
            let x = buf[i].re / fft_size as f64;
            acc[start + i] += x * win[i];
            norm[start + i] += win[i] * win[i];
        }
    }
    let mut out = vec![0.0; out_len];
    for i in 0..out_len.min(total) {
        if norm[i] > 1e-8 {
            out[i] = acc[i] / norm[i];
        }
    }
    out
}

/// Full linear convolution via FFT.
pub(crate) fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);

    let mut fa: Vec<Complex<f64>> = a.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fa.resize(n, Complex::new(0.0, 0.0));
    let mut fb: Vec<Complex<f64>> = b.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fb.resize(n, Complex::new(0.0, 0.0));
    fft.process(&mut fa);
    fft.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= *y;
    }
    ifft.process(&mut fa);
    fa[..out_len].iter().map(|c| c.re / n as f64).collect()
}

/// Zero-phase windowed-sinc lowpass (Kaiser, 255 taps), same length as input.
pub(crate) fn lowpass(samples: &[f64], cutoff_hz: f64, rate_hz: u32) -> Vec<f64> {
    let taps = 255usize;
    let half = (taps / 2) as isize;
    let fc = (cutoff_hz / rate_hz as f64).clamp(0.0, 0.5);
    let beta = 8.6;
    let i0b = bessel_i0(beta);
    let kernel: Vec<f64> = (-half..=half)
        .map(|k| {
            let x = k as f64;
            let sinc = if k == 0 {
                2.0 * fc
            } else {
                (2.0 * std::f64::consts::PI * fc * x).sin() / (std::f64::consts::PI * x)
            };
            let w = bessel_i0(beta * (1.0 - (x / half as f64).powi(2)).max(0.0).sqrt()) / i0b;
            sinc * w
        })
        .collect();
    let sum: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / sum.max(1e-12)).collect();

    let full = fft_convolve(samples, &kernel);
    full[half as usize..half as usize + samples.len()].to_vec()
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let x2 = x * x / 4.0;
    for k in 1..=30 {
        term *= x2 / (k * k) as f64;
        sum += term;
        if term < 1e-16 * sum {
            break;
        }
    }
    sum
}
