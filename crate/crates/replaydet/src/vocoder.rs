//! Analysis/synthesis resynthesis stage of the feature pipeline.
//!
//! The built-in vocoder decomposes speech into a per-frame fundamental
//! frequency (normalized autocorrelation, voicing at peak NAC >= 0.5) and a
//! cepstrally smoothed spectral envelope, then regenerates a waveform from
//! pulse-train / white-noise excitation shaped by that envelope. The point is
//! not fidelity: resynthesis keeps content and speaker structure while
//! discarding channel fine detail, which is what the residual feature needs.
//! An external vocoder can be plugged in through [`ExternalVocoder`].

use std::path::Path;
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::audio_io::{load_wav, save_wav, AudioClip};
use crate::dsp;
use crate::error::{Error, Result};

/// Shortest clip the analyzer accepts, in milliseconds.
pub const MIN_CLIP_MS: f64 = 100.0;

#[derive(Debug, Clone, Copy)]
pub struct VocoderConfig {
    /// Analysis frame length in ms.
    pub frame_ms: f64,
    /// Analysis/synthesis hop in ms.
    pub hop_ms: f64,
    /// FFT size for envelope estimation and synthesis shaping.
    pub fft_size: usize,
    /// Voicing decision threshold on the normalized autocorrelation peak.
    pub voicing_threshold: f64,
    /// Fundamental frequency search range in Hz.
    pub f0_range_hz: (f64, f64),
    /// Number of quefrency coefficients kept for the envelope.
    pub cepstral_order: usize,
    /// Seed for the synthesis noise source.
    pub seed: u64,
}

impl Default for VocoderConfig {
    fn default() -> Self {
        Self {
            frame_ms: 25.0,
            hop_ms: 10.0,
            fft_size: 512,
            voicing_threshold: 0.5,
            f0_range_hz: (50.0, 500.0),
            cepstral_order: 48,
            seed: 0,
        }
    }
}

/// Per-frame pitch track and smoothed spectral envelope.
#[derive(Debug, Clone)]
pub struct VocoderAnalysis {
    /// Fundamental frequency per frame; 0 marks unvoiced frames.
    pub f0_hz: Vec<f64>,
    /// Linear-magnitude envelope, `num_frames x (fft/2 + 1)`.
    pub spectral_envelope: Vec<Vec<f64>>,
    pub frame_hop_ms: f64,
    /// Peak level of the analyzed clip; synthesis renormalizes to it.
    pub source_peak: f64,
}

/// Resynthesis backend, pluggable for fidelity studies.
pub trait Vocoder {
    fn resynthesize(&self, clip: &AudioClip) -> Result<AudioClip>;
}

#[derive(Debug, Clone, Default)]
pub struct BuiltinVocoder {
    pub config: VocoderConfig,
}

impl BuiltinVocoder {
    pub fn new(config: VocoderConfig) -> Self {
        Self { config }
    }

    /// Extract the pitch track and spectral envelope of a clip (>= 100 ms).
    pub fn analyze(&self, clip: &AudioClip) -> Result<VocoderAnalysis> {
        let cfg = &self.config;
        let rate = clip.sample_rate_hz as f64;
        let min_len = (MIN_CLIP_MS * rate / 1000.0) as usize;
        if clip.len() < min_len {
            return Err(Error::ClipTooShort {
                got: clip.len(),
                need: min_len,
            });
        }
        let frame_len = (cfg.frame_ms * rate / 1000.0).round() as usize;
        let hop = (cfg.hop_ms * rate / 1000.0).round() as usize;
        let num_frames = dsp::frame_count(clip.len(), frame_len, hop);

        let lag_min = (rate / cfg.f0_range_hz.1).floor().max(2.0) as usize;
        let lag_max = ((rate / cfg.f0_range_hz.0).ceil() as usize).min(frame_len - 1);

        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        let ifft = FftPlanner::new().plan_fft_inverse(cfg.fft_size);
        let win = dsp::window_values(dsp::Window::Hann, frame_len);

        let mut f0_hz = Vec::with_capacity(num_frames);
        let mut envelope = Vec::with_capacity(num_frames);
        for f in 0..num_frames {
            let frame = &clip.samples[f * hop..f * hop + frame_len];
            f0_hz.push(frame_f0(frame, rate, lag_min, lag_max, cfg.voicing_threshold));
            envelope.push(frame_envelope(
                frame,
                &win,
                cfg.fft_size,
                cfg.cepstral_order,
                fft.as_ref(),
                ifft.as_ref(),
            ));
        }

        Ok(VocoderAnalysis {
            f0_hz,
            spectral_envelope: envelope,
            frame_hop_ms: cfg.hop_ms,
            source_peak: clip.peak(),
        })
    }

    /// Regenerate a waveform of `num_samples` from an analysis: pulse-train
    /// excitation on voiced frames, white noise on unvoiced ones, shaped per
    /// frame by the spectral envelope and overlap-added.
    pub fn synthesize(&self, analysis: &VocoderAnalysis, num_samples: usize) -> AudioClip {
        let cfg = &self.config;
        let rate = crate::CANONICAL_RATE_HZ as f64;
        let frame_len = (cfg.frame_ms * rate / 1000.0).round() as usize;
        let hop = (analysis.frame_hop_ms * rate / 1000.0).round() as usize;
        let num_frames = analysis.f0_hz.len();
        if num_frames == 0 || num_samples == 0 {
            return AudioClip::new(vec![0.0; num_samples], crate::CANONICAL_RATE_HZ);
        }

        // Excitation at unit-ish RMS: impulses where the running pitch phase
        // wraps, white noise elsewhere.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let total = ((num_frames - 1) * hop + frame_len).max(num_samples);
        let mut excitation = vec![0.0; total];
        let mut phase = 0.0f64;
        for (i, e) in excitation.iter_mut().enumerate() {
            let frame_idx = (i / hop).min(num_frames - 1);
            let f0 = analysis.f0_hz[frame_idx];
            if f0 > 0.0 {
                phase += f0 / rate;
                if phase >= 1.0 {
                    phase -= 1.0;
                    // Impulse amplitude keeps per-sample RMS comparable to the
                    // unvoiced noise branch.
                    *e = (rate / f0).sqrt();
                }
            } else {
                phase = 0.0;
                *e = rng.gen_range(-1.0..1.0) * 1.732;
            }
        }

        // Frame-wise spectral shaping: multiply excitation spectra by the
        // envelope, then weighted overlap-add.
        let mut frames = dsp::stft_complex(&excitation, frame_len, hop, cfg.fft_size);
        let half = cfg.fft_size / 2;
        for (f, spec) in frames.iter_mut().enumerate() {
            let env = &analysis.spectral_envelope[f.min(num_frames - 1)];
            for k in 0..=half {
                let g = env[k];
                spec[k] *= g;
                if k > 0 && k < half {
                    spec[cfg.fft_size - k] *= g;
                }
            }
        }
        let mut out = dsp::istft(&frames, frame_len, hop, cfg.fft_size, num_samples);

        let peak = out.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        if peak > 1e-12 && analysis.source_peak > 0.0 {
            let g = analysis.source_peak / peak;
            for x in &mut out {
                *x *= g;
            }
        }
        AudioClip::new(out, crate::CANONICAL_RATE_HZ)
    }
}

impl Vocoder for BuiltinVocoder {
    fn resynthesize(&self, clip: &AudioClip) -> Result<AudioClip> {
        let analysis = self.analyze(clip)?;
        Ok(self.synthesize(&analysis, clip.len()))
    }
}

/// Normalized autocorrelation pitch for one frame; 0 when unvoiced.
fn frame_f0(frame: &[f64], rate: f64, lag_min: usize, lag_max: usize, threshold: f64) -> f64 {
    let energy: f64 = frame.iter().map(|x| x * x).sum();
    if energy < 1e-10 {
        return 0.0;
    }
    let mut best_nac = 0.0f64;
    let mut nac_at = vec![0.0; lag_max + 2];
    for lag in lag_min..=lag_max {
        let n = frame.len() - lag;
        let mut num = 0.0;
        let mut e0 = 0.0;
        let mut e1 = 0.0;
        for i in 0..n {
            num += frame[i] * frame[i + lag];
            e0 += frame[i] * frame[i];
            e1 += frame[i + lag] * frame[i + lag];
        }
        let denom = (e0 * e1).sqrt();
        let nac = if denom > 1e-12 { num / denom } else { 0.0 };
        nac_at[lag] = nac;
        if nac > best_nac {
            best_nac = nac;
        }
    }
    if best_nac < threshold {
        return 0.0;
    }
    // NAC peaks repeat at period multiples; take the smallest lag whose local
    // peak comes close to the global one to avoid sub-harmonic picks.
    let mut best_lag = 0usize;
    for lag in lag_min..=lag_max {
        let here = nac_at[lag];
        let is_peak = (lag == lag_min || here >= nac_at[lag - 1])
            && (lag == lag_max || here >= nac_at[lag + 1]);
        if is_peak && here >= threshold.max(0.9 * best_nac) {
            best_lag = lag;
            break;
        }
    }
    if best_lag == 0 {
        return 0.0;
    }
    // Parabolic refinement around the NAC peak for sub-sample lag.
    let lag = if best_lag > lag_min && best_lag < lag_max {
        let (a, b, c) = (nac_at[best_lag - 1], nac_at[best_lag], nac_at[best_lag + 1]);
        let denom = a - 2.0 * b + c;
        if denom.abs() > 1e-12 {
            best_lag as f64 + 0.5 * (a - c) / denom
        } else {
            best_lag as f64
        }
    } else {
        best_lag as f64
    };
    rate / lag
}

/// Cepstrally liftered magnitude envelope of one frame (`fft/2 + 1` bins).
fn frame_envelope(
    frame: &[f64],
    win: &[f64],
    fft_size: usize,
    cepstral_order: usize,
    fft: &dyn rustfft::Fft<f64>,
    ifft: &dyn rustfft::Fft<f64>,
) -> Vec<f64> {
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    for i in 0..frame.len() {
        buf[i] = Complex::new(frame[i] * win[i], 0.0);
    }
    fft.process(&mut buf);
    let mut log_mag: Vec<Complex<f64>> = buf
        .iter()
        .map(|c| Complex::new((c.norm() + dsp::LOG_EPS).ln(), 0.0))
        .collect();
    ifft.process(&mut log_mag);
    // Real cepstrum (inverse FFT scale), liftered to the first coefficients.
    let scale = 1.0 / fft_size as f64;
    let mut cep = vec![Complex::new(0.0, 0.0); fft_size];
    for (q, c) in cep.iter_mut().enumerate() {
        let keep = q < cepstral_order || q > fft_size - cepstral_order;
        if keep {
            *c = Complex::new(log_mag[q].re * scale, 0.0);
        }
    }
    fft.process(&mut cep);
    (0..=fft_size / 2).map(|k| cep[k].re.exp()).collect()
}

/// Subprocess adapter: runs a command template with `{input}` and `{output}`
/// WAV path placeholders. Output must keep the rate and match the input
/// length within one hop.
#[derive(Debug, Clone)]
pub struct ExternalVocoder {
    pub command_template: String,
    pub hop_ms: f64,
}

impl ExternalVocoder {
    pub fn new(command_template: impl Into<String>) -> Self {
        Self {
            command_template: command_template.into(),
            hop_ms: 10.0,
        }
    }

    fn run_in(&self, dir: &Path, clip: &AudioClip) -> Result<AudioClip> {
        let input = dir.join("in.wav");
        let output = dir.join("out.wav");
        save_wav(clip, &input)?;
        let cmd = self
            .command_template
            .replace("{input}", &input.to_string_lossy())
            .replace("{output}", &output.to_string_lossy());
        let status = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .status()
            .map_err(|e| Error::ExternalVocoderFailure(format!("spawn failed: {e}")))?;
        if !status.success() {
            return Err(Error::ExternalVocoderFailure(format!(
                "command exited with {status}"
            )));
        }
        let out = load_wav(&output)
            .map_err(|e| Error::ExternalVocoderFailure(format!("bad output wav: {e}")))?;
        if out.sample_rate_hz != clip.sample_rate_hz {
            return Err(Error::ExternalVocoderFailure(format!(
                "rate changed: {} -> {}",
                clip.sample_rate_hz, out.sample_rate_hz
            )));
        }
        let hop = (self.hop_ms * clip.sample_rate_hz as f64 / 1000.0).round() as usize;
        if out.len().abs_diff(clip.len()) > hop {
            return Err(Error::ExternalVocoderFailure(format!(
                "length {} out of tolerance of input {}",
                out.len(),
                clip.len()
            )));
        }
        let mut samples = out.samples;
        samples.resize(clip.len(), 0.0);
        Ok(AudioClip::new(samples, out.sample_rate_hz))
    }
}

impl Vocoder for ExternalVocoder {
    fn resynthesize(&self, clip: &AudioClip) -> Result<AudioClip> {
        let dir = std::env::temp_dir().join(format!(
            "replaydet-voc-{}-{:x}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_nanos())
                .unwrap_or(0)
        ));
        std::fs::create_dir_all(&dir)?;
        let result = self.run_in(&dir, clip);
        let _ = std::fs::remove_dir_all(&dir);
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sawtooth(f0: f64, rate: u32, n: usize) -> AudioClip {
        let period = rate as f64 / f0;
        let samples = (0..n)
            .map(|i| {
                let ph = (i as f64 / period).fract();
                0.6 * (2.0 * ph - 1.0)
            })
            .collect();
        AudioClip::new(samples, rate)
    }

    fn white_noise(seed: u64, n: usize) -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioClip::new((0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(), 16_000)
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    }

    #[test]
    fn analyze_tracks_sawtooth_f0() {
        let clip = sawtooth(220.0, 16_000, 16_000);
        let analysis = BuiltinVocoder::default().analyze(&clip).unwrap();
        let voiced: Vec<f64> = analysis.f0_hz.iter().copied().filter(|&f| f > 0.0).collect();
        let frac = voiced.len() as f64 / analysis.f0_hz.len() as f64;
        assert!(frac >= 0.9, "only {frac:.2} of frames voiced");
        let med = median(voiced);
        assert!((215.0..=225.0).contains(&med), "median f0 {med}");
    }

    #[test]
    fn analyze_calls_noise_unvoiced() {
        let clip = white_noise(1, 16_000);
        let analysis = BuiltinVocoder::default().analyze(&clip).unwrap();
        let unvoiced = analysis.f0_hz.iter().filter(|&&f| f == 0.0).count();
        let frac = unvoiced as f64 / analysis.f0_hz.len() as f64;
        assert!(frac >= 0.8, "only {frac:.2} of noise frames unvoiced");
    }

    #[test]
    fn analyze_silence_unvoiced_floor_envelope() {
        let clip = AudioClip::new(vec![0.0; 8000], 16_000);
        let analysis = BuiltinVocoder::default().analyze(&clip).unwrap();
        assert!(analysis.f0_hz.iter().all(|&f| f == 0.0));
        for env in &analysis.spectral_envelope {
            for &e in env {
                assert!(e <= 1e-8, "envelope {e} above silence floor");
            }
        }
    }

    #[test]
    fn analyze_rejects_short_clip() {
        let clip = AudioClip::new(vec![0.1; 800], 16_000);
        assert!(matches!(
            BuiltinVocoder::default().analyze(&clip).unwrap_err(),
            Error::ClipTooShort { .. }
        ));
    }

    #[test]
    fn f0_survives_resynthesis() {
        let voc = BuiltinVocoder::default();
        let clip = sawtooth(220.0, 16_000, 16_000);
        let first = voc.analyze(&clip).unwrap();
        let resynth = voc.synthesize(&first, clip.len());
        let second = voc.analyze(&resynth).unwrap();
        let f0_in = median(first.f0_hz.iter().copied().filter(|&f| f > 0.0).collect());
        let f0_out = median(second.f0_hz.iter().copied().filter(|&f| f > 0.0).collect());
        assert!(
            (f0_in - f0_out).abs() <= 5.0,
            "f0 {f0_in} -> {f0_out} after resynthesis"
        );
    }

    #[test]
    fn flat_envelope_noise_is_spectrally_flat() {
        let num_frames = 100;
        let env_bins = 257;
        let analysis = VocoderAnalysis {
            f0_hz: vec![0.0; num_frames],
            spectral_envelope: vec![vec![1.0; env_bins]; num_frames],
            frame_hop_ms: 10.0,
            source_peak: 0.5,
        };
        let out = BuiltinVocoder::default().synthesize(&analysis, 16_000);
        // Octave band power densities from 250 Hz up should agree within 3 dB.
        let n = out.len();
        let mut buf: Vec<Complex<f64>> =
            out.samples.iter().map(|&x| Complex::new(x, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let band_density = |lo: f64, hi: f64| {
            let (b0, b1) = (
                (lo * n as f64 / 16_000.0) as usize,
                (hi * n as f64 / 16_000.0) as usize,
            );
            buf[b0..b1].iter().map(|c| c.norm_sqr()).sum::<f64>() / (b1 - b0) as f64
        };
        let bands = [
            band_density(250.0, 500.0),
            band_density(500.0, 1000.0),
            band_density(1000.0, 2000.0),
            band_density(2000.0, 4000.0),
            band_density(4000.0, 7500.0),
        ];
        for w in bands.windows(2) {
            let db = 10.0 * (w[1] / w[0]).log10();
            assert!(db.abs() <= 3.0, "adjacent octave density jump {db:.2} dB");
        }
    }

    #[test]
    fn zero_envelope_synthesizes_near_silence() {
        let analysis = VocoderAnalysis {
            f0_hz: vec![120.0; 50],
            spectral_envelope: vec![vec![0.0; 257]; 50],
            frame_hop_ms: 10.0,
            source_peak: 0.0,
        };
        let out = BuiltinVocoder::default().synthesize(&analysis, 8000);
        assert!(out.rms() < 1e-6, "rms {}", out.rms());
    }

    #[test]
    fn resynthesize_preserves_length() {
        let voc = BuiltinVocoder::default();
        for n in [1601, 8000, 12_345] {
            let clip = sawtooth(150.0, 16_000, n);
            let out = voc.resynthesize(&clip).unwrap();
            assert_eq!(out.len(), n);
            assert_eq!(out.sample_rate_hz, 16_000);
        }
    }

    #[test]
    fn resynthesis_closer_to_source_than_noise() {
        // Vowel-like synthetic with harmonic structure and formant peaks.
        let rate = 16_000.0;
        let n = 16_000;
        let mut samples = vec![0.0; n];
        for (i, s) in samples.iter_mut().enumerate() {
            let t = i as f64 / rate;
            *s = 0.3 * (2.0 * PI * 130.0 * t).sin()
                + 0.25 * (2.0 * PI * 700.0 * t).sin()
                + 0.15 * (2.0 * PI * 1200.0 * t).sin();
        }
        let clip = AudioClip::new(samples, 16_000);
        let resynth = BuiltinVocoder::default().resynthesize(&clip).unwrap();
        let noise = white_noise(9, n);

        let lsd = |a: &AudioClip, b: &AudioClip| {
            let sa = dsp::stft_log_spectrogram(a, 50.0, 25.0, 1024).unwrap();
            let sb = dsp::stft_log_spectrogram(b, 50.0, 25.0, 1024).unwrap();
            let mut acc = 0.0;
            for (x, y) in sa.values.iter().zip(&sb.values) {
                acc += (x - y) * (x - y);
            }
            (acc / sa.values.len() as f64).sqrt()
        };
        let d_resynth = lsd(&clip, &resynth);
        let d_noise = lsd(&clip, &noise);
        assert!(
            d_resynth < d_noise,
            "resynthesis LSD {d_resynth:.3} not below noise LSD {d_noise:.3}"
        );
    }

    #[test]
    fn resynthesis_of_silence_is_near_silent() {
        let clip = AudioClip::new(vec![0.0; 8000], 16_000);
        let out = BuiltinVocoder::default().resynthesize(&clip).unwrap();
        assert!(out.rms() < 1e-6);
    }

    #[test]
    fn resynthesis_is_deterministic() {
        let clip = sawtooth(180.0, 16_000, 9000);
        let voc = BuiltinVocoder::default();
        let a = voc.resynthesize(&clip).unwrap();
        let b = voc.resynthesize(&clip).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn external_vocoder_copy_command() {
        let clip = sawtooth(200.0, 16_000, 4000);
        let voc = ExternalVocoder::new("cp {input} {output}");
        let out = voc.resynthesize(&clip).unwrap();
        assert_eq!(out.len(), clip.len());
        // PCM16 round-trip tolerance.
        for (a, b) in clip.samples.iter().zip(&out.samples) {
            assert!((a - b).abs() <= 2.0 * 2.0f64.powi(-15));
        }
    }

    #[test]
    fn external_vocoder_failure_modes() {
        let clip = sawtooth(200.0, 16_000, 4000);
        let err = ExternalVocoder::new("false").resynthesize(&clip).unwrap_err();
        assert!(matches!(err, Error::ExternalVocoderFailure(_)));
        let err = ExternalVocoder::new("head -c 100 {input} > {output}")
            .resynthesize(&clip)
            .unwrap_err();
        assert!(matches!(err, Error::ExternalVocoderFailure(_)));
    }
}
