//! PCM audio ingestion and the canonical 16 kHz mono format.
//!
//! WAV container parsing sits on `hound`; everything rate- or level-related
//! (downmix, normalization, resampling, the 30 s ingestion cap) is here.

use std::path::Path;

use crate::error::{Error, Result};
use crate::CANONICAL_RATE_HZ;

/// Longest clip accepted at ingestion, in seconds.
pub const MAX_CLIP_SECONDS: usize = 30;

/// Mono PCM samples in `[-1.0, 1.0]` plus their sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}

/// Read a RIFF/WAVE file and canonicalize it: downmix to mono, scale to
/// `[-1, 1]`, truncate past 30 s, and resample to 16 kHz when the source rate
/// differs. Accepts PCM16 and IEEE float32, 1 or 2 channels.
pub fn load_wav(path: &Path) -> Result<AudioClip> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let reader = hound::WavReader::open(path).map_err(|e| map_hound_err(e, path))?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(Error::UnsupportedFormat(format!(
            "{} channels (supported: 1-2)",
            spec.channels
        )));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => {
            let mut reader = reader;
            reader
                .samples::<i16>()
                .map(|s| s.map(|v| v as f64 / 32768.0))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| map_hound_err(e, path))?
        }
        (hound::SampleFormat::Float, 32) => {
            let mut reader = reader;
            reader
                .samples::<f32>()
                .map(|s| s.map(|v| v as f64))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| map_hound_err(e, path))?
        }
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{bits}-bit {fmt:?} (supported: 16-bit int, 32-bit float)"
            )))
        }
    };

    let channels = spec.channels as usize;
    let mut samples: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .map(|x| x.clamp(-1.0, 1.0))
        .collect();

    let max_len = MAX_CLIP_SECONDS * spec.sample_rate as usize;
    samples.truncate(max_len);

    let clip = AudioClip::new(samples, spec.sample_rate);
    if clip.sample_rate_hz == CANONICAL_RATE_HZ {
        Ok(clip)
    } else {
        Ok(resample(&clip, CANONICAL_RATE_HZ))
    }
}

fn map_hound_err(e: hound::Error, path: &Path) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        hound::Error::FormatError(msg) => Error::CorruptHeader {
            path: path.to_path_buf(),
            detail: msg.to_string(),
        },
        hound::Error::Unsupported => {
            Error::UnsupportedFormat("codec not supported by reader".into())
        }
        other => Error::CorruptHeader {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    }
}

/// Write a clip as PCM16 WAV. Round-trip through [`load_wav`] recovers samples
/// within one 16-bit LSB.
pub fn save_wav(clip: &AudioClip, path: &Path) -> Result<()> {
    if clip.is_empty() {
        return Err(Error::PreconditionViolation(
            "cannot write an empty clip".into(),
        ));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::UnsupportedFormat(other.to_string()),
    })?;
    for &x in &clip.samples {
        let q = (x.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer
            .write_sample(q)
            .map_err(|e| Error::UnsupportedFormat(e.to_string()))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::UnsupportedFormat(e.to_string()))?;
    Ok(())
}

// Windowed-sinc resampler: Kaiser beta = 8.6, 64 taps per phase. Coefficients
// are evaluated at the exact fractional offset of each output sample and
// normalized to unity DC gain, so no phase-table quantization is involved.
const KAISER_BETA: f64 = 8.6;
const TAPS_PER_PHASE: usize = 64;

/// Band-limited resampling to `target_rate_hz` (must be >= 1000).
/// Output length is `round(n * target / source)`.
pub fn resample(clip: &AudioClip, target_rate_hz: u32) -> AudioClip {
    assert!(target_rate_hz >= 1000, "target rate must be at least 1 kHz");
    let src = clip.sample_rate_hz as f64;
    let dst = target_rate_hz as f64;
    if clip.sample_rate_hz == target_rate_hz {
        return clip.clone();
    }

    let ratio = dst / src;
    let n_in = clip.samples.len();
    let n_out = (n_in as f64 * ratio).round() as usize;
    if n_in == 0 || n_out == 0 {
        return AudioClip::new(Vec::new(), target_rate_hz);
    }

    // Downsampling stretches the kernel so the cutoff lands at the target
    // Nyquist; the touched input span grows accordingly (polyphase decimation).
    let cutoff = ratio.min(1.0);
    let half_width = (TAPS_PER_PHASE / 2) as f64 / cutoff;

    let mut out = Vec::with_capacity(n_out);
    for m in 0..n_out {
        let t = m as f64 / ratio; // position in input samples
        let k_lo = (t - half_width).ceil() as isize;
        let k_hi = (t + half_width).floor() as isize;
        let mut acc = 0.0;
        let mut norm = 0.0;
        for k in k_lo..=k_hi {
            let x = t - k as f64;
            let h = cutoff * sinc(cutoff * x) * kaiser(x / half_width);
            norm += h;
            if k >= 0 && (k as usize) < n_in {
                acc += h * clip.samples[k as usize];
            }
        }
        out.push(if norm.abs() > 1e-12 { acc / norm } else { 0.0 });
    }
    AudioClip::new(out, target_rate_hz)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn kaiser(x: f64) -> f64 {
    if x.abs() > 1.0 {
        return 0.0;
    }
    bessel_i0(KAISER_BETA * (1.0 - x * x).sqrt()) / bessel_i0(KAISER_BETA)
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
