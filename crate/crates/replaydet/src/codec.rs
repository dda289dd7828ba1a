//! Lossy compress/decompress roundtrip.
//!
//! The built-in codec is a transparent MDCT subband quantizer: 20 ms sine-window
//! blocks with 50% overlap, 32 uniform bands, per-band scale factors and greedy
//! water-filling bit allocation under the bitrate budget. Bands above a
//! bitrate-dependent cutoff get zero bits, which reproduces the loss of high
//! frequencies at low bitrates. An external command pair can stand in for a
//! real codec.

use std::path::Path;
use std::process::Command;

use crate::audio_io::{load_wav, save_wav, AudioClip};
use crate::error::{Error, Result};
use crate::CANONICAL_RATE_HZ;

/// Bitrates studied by the pipeline, bits per second.
pub const SUPPORTED_BITRATES: [u32; 5] = [8000, 10_000, 12_000, 14_000, 16_000];

/// Coefficients (and new samples) per 20 ms frame; the MDCT window spans two
/// frames for the 50% overlap.
const MDCT_N: usize = 320;
const NUM_BANDS: usize = 32;
const BAND_SIZE: usize = MDCT_N / NUM_BANDS;
const SCALE_BITS: u32 = 6;
// Scale exponents count half-log2 steps, offset-encoded into SCALE_BITS.
const SCALE_EXP_MIN: i32 = -47;
const SCALE_EXP_MAX: i32 = 16;
const MAX_BITS_PER_COEFF: u32 = 14;

#[derive(Debug, Clone, PartialEq)]
pub enum CodecMode {
    BuiltinMdct,
    /// Subprocess templates with `{input}`, `{output}`, `{bitrate}`
    /// placeholders; `encode` maps WAV to packet bytes, `decode` maps packet
    /// bytes back to WAV.
    ExternalCommand { encode: String, decode: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecConfig {
    pub bitrate_bps: u32,
    pub mode: CodecMode,
    pub sample_rate_hz: u32,
    pub channels: u8,
}

impl CodecConfig {
    pub fn builtin(bitrate_bps: u32) -> Result<Self> {
        if !SUPPORTED_BITRATES.contains(&bitrate_bps) {
            return Err(Error::PreconditionViolation(format!(
                "bitrate {bitrate_bps} outside supported range {SUPPORTED_BITRATES:?}"
            )));
        }
        Ok(Self {
            bitrate_bps,
            mode: CodecMode::BuiltinMdct,
            sample_rate_hz: CANONICAL_RATE_HZ,
            channels: 1,
        })
    }

    pub fn external(bitrate_bps: u32, encode: String, decode: String) -> Result<Self> {
        let mut cfg = Self::builtin(bitrate_bps)?;
        cfg.mode = CodecMode::ExternalCommand { encode, decode };
        Ok(cfg)
    }

    /// Highest coded frequency at this bitrate, Hz.
    pub fn cutoff_hz(&self) -> f64 {
        match self.bitrate_bps {
            16_000 => 7000.0,
            14_000 => 6500.0,
            12_000 => 6000.0,
            10_000 => 5000.0,
            _ => 4000.0,
        }
    }

    fn cutoff_band(&self) -> usize {
        // Bands are 250 Hz wide. One band below the nominal cutoff is left as
        // a transition guard so window sidelobes of coded content stay out of
        // the stopband.
        let band = (self.cutoff_hz() / (CANONICAL_RATE_HZ as f64 / 2.0 / NUM_BANDS as f64)) as usize;
        band.saturating_sub(1).max(1)
    }
}

/// Encoded frames plus the metadata required to decode deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedPackage {
    pub frames: Vec<Vec<u8>>,
    pub config: CodecConfig,
    pub original_length: usize,
}

impl CompressedPackage {
    pub fn total_bytes(&self) -> usize {
        self.frames.iter().map(|f| f.len()).sum()
    }
}

/// Compress a canonical-format clip.
pub fn encode(clip: &AudioClip, config: &CodecConfig) -> Result<CompressedPackage> {
    check_input(clip, config)?;
    match &config.mode {
        CodecMode::BuiltinMdct => encode_builtin(clip, config),
        CodecMode::ExternalCommand { encode: tpl, .. } => {
            let bytes = run_external_encode(clip, tpl, config.bitrate_bps)?;
            Ok(CompressedPackage {
                frames: vec![bytes],
                config: config.clone(),
                original_length: clip.len(),
            })
        }
    }
}

/// Decompress a package back to audio of the original length.
pub fn decode(package: &CompressedPackage) -> Result<AudioClip> {
    match &package.config.mode {
        CodecMode::BuiltinMdct => decode_builtin(package),
        CodecMode::ExternalCommand { decode: tpl, .. } => {
            let frame = package
                .frames
                .first()
                .ok_or_else(|| Error::CorruptPackage("no frames".into()))?;
            run_external_decode(frame, tpl, package)
        }
    }
}

/// `decode(encode(clip))`, the pipeline's processing branch.
pub fn roundtrip(clip: &AudioClip, config: &CodecConfig) -> Result<AudioClip> {
    decode(&encode(clip, config)?)
}

fn check_input(clip: &AudioClip, config: &CodecConfig) -> Result<()> {
    if clip.sample_rate_hz != config.sample_rate_hz {
        return Err(Error::PreconditionViolation(format!(
            "clip rate {} != codec rate {}",
            clip.sample_rate_hz, config.sample_rate_hz
        )));
    }
    if clip.is_empty() {
        return Err(Error::PreconditionViolation("empty clip".into()));
    }
    if !SUPPORTED_BITRATES.contains(&config.bitrate_bps) {
        return Err(Error::PreconditionViolation(format!(
            "bitrate {} outside supported range",
            config.bitrate_bps
        )));
    }
    Ok(())
}

// --------------------------------------------------------------------------
// Built-in MDCT codec
// --------------------------------------------------------------------------

struct Mdct {
    // basis[k][t] = cos(pi/N * (t + 0.5 + N/2) * (k + 0.5))
    basis: Vec<Vec<f64>>,
    window: Vec<f64>,
}

impl Mdct {
    fn new() -> Self {
        let n = MDCT_N;
        let two_n = 2 * n;
        let mut basis = Vec::with_capacity(n);
        for k in 0..n {
            let row: Vec<f64> = (0..two_n)
                .map(|t| {
                    (std::f64::consts::PI / n as f64
                        * (t as f64 + 0.5 + n as f64 / 2.0)
                        * (k as f64 + 0.5))
                        .cos()
                })
                .collect();
            basis.push(row);
        }
        let window: Vec<f64> = (0..two_n)
            .map(|t| (std::f64::consts::PI * (t as f64 + 0.5) / two_n as f64).sin())
            .collect();
        Self { basis, window }
    }

    fn forward(&self, block: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|row| {
                row.iter()
                    .zip(block)
                    .zip(&self.window)
                    .map(|((b, x), w)| b * x * w)
                    .sum()
            })
            .collect()
    }

    /// Windowed inverse block, ready for overlap-add.
    fn inverse(&self, coeffs: &[f64]) -> Vec<f64> {
        let two_n = 2 * MDCT_N;
        let mut out = vec![0.0; two_n];
        for (k, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let row = &self.basis[k];
            for t in 0..two_n {
                out[t] += c * row[t];
            }
        }
        let scale = 2.0 / MDCT_N as f64;
        for t in 0..two_n {
            out[t] *= scale * self.window[t];
        }
        out
    }
}

fn num_blocks(n_samples: usize) -> usize {
    n_samples.div_ceil(MDCT_N) + 1
}

/// Whole-package byte budget split evenly across blocks.
fn block_byte_budgets(n_samples: usize, bitrate_bps: u32) -> Vec<usize> {
    let blocks = num_blocks(n_samples);
    let total_bytes =
        (bitrate_bps as u64 * n_samples as u64 / (CANONICAL_RATE_HZ as u64 * 8)) as usize;
    let base = total_bytes / blocks;
    let extra = total_bytes % blocks;
    (0..blocks)
        .map(|b| base + usize::from(b < extra))
        .collect()
}

/// Greedy water-filling: repeatedly grant 2 bits/coefficient to the band with
/// the highest remaining log2 distortion until the budget runs out. Encoder
/// and decoder both run this on the transmitted scale exponents (half-log2
/// steps, so distortion drops by 4 in that scale per 2-bit step).
fn allocate_bits(active: &[(usize, i32)], mut remaining_bits: u32) -> Vec<u32> {
    let mut alloc = vec![0u32; active.len()];
    let step_cost = 2 * BAND_SIZE as u32;
    loop {
        if remaining_bits < step_cost {
            break;
        }
        let mut best: Option<(usize, i64)> = None;
        for (i, &(_, exp2)) in active.iter().enumerate() {
            if alloc[i] >= MAX_BITS_PER_COEFF {
                continue;
            }
            let priority = exp2 as i64 - 2 * alloc[i] as i64;
            if best.map_or(true, |(_, p)| priority > p) {
                best = Some((i, priority));
            }
        }
        match best {
            Some((i, _)) => {
                alloc[i] += 2;
                remaining_bits -= step_cost;
            }
            None => break,
        }
    }
    alloc
}

struct BitWriter {
    bytes: Vec<u8>,
    bit_pos: usize,
}

impl BitWriter {
    fn new() -> Self {
        Self {
            bytes: Vec::new(),
            bit_pos: 0,
        }
    }

    fn write(&mut self, value: u32, bits: u32) {
        for i in 0..bits {
            let bit = (value >> i) & 1;
            let byte_idx = self.bit_pos / 8;
            if byte_idx == self.bytes.len() {
                self.bytes.push(0);
            }
            self.bytes[byte_idx] |= (bit as u8) << (self.bit_pos % 8);
            self.bit_pos += 1;
        }
    }

    fn bits_used(&self) -> usize {
        self.bit_pos
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    bit_pos: usize,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, bit_pos: 0 }
    }

    fn read(&mut self, bits: u32) -> Result<u32> {
        let mut value = 0u32;
        for i in 0..bits {
            let byte_idx = self.bit_pos / 8;
            if byte_idx >= self.bytes.len() {
                return Err(Error::CorruptPackage("frame truncated".into()));
            }
            let bit = (self.bytes[byte_idx] >> (self.bit_pos % 8)) & 1;
            value |= (bit as u32) << i;
            self.bit_pos += 1;
        }
        Ok(value)
    }
}

fn encode_builtin(clip: &AudioClip, config: &CodecConfig) -> Result<CompressedPackage> {
    let n = clip.len();
    let mdct = Mdct::new();
    let budgets = block_byte_budgets(n, config.bitrate_bps);
    let blocks = budgets.len();
    let cutoff_band = config.cutoff_band();

    // One hop of leading zero padding; trailing zeros complete the last block.
    let padded_len = (blocks + 1) * MDCT_N;
    let mut padded = vec![0.0; padded_len];
    padded[MDCT_N..MDCT_N + n].copy_from_slice(&clip.samples);

    let mut frames = Vec::with_capacity(blocks);
    for (b, &budget_bytes) in budgets.iter().enumerate() {
        let block = &padded[b * MDCT_N..b * MDCT_N + 2 * MDCT_N];
        let coeffs = mdct.forward(block);
        let budget_bits = (budget_bytes * 8) as u32;
        let mut writer = BitWriter::new();
        if budget_bits < 32 {
            frames.push(writer.bytes);
            continue;
        }

        // Pick active bands by energy until 99.5% of in-cutoff energy is
        // covered, capped so every band affords its scale plus one step.
        let mut band_energy = [0.0f64; NUM_BANDS];
        for (band, e) in band_energy.iter_mut().enumerate().take(cutoff_band) {
            *e = coeffs[band * BAND_SIZE..(band + 1) * BAND_SIZE]
                .iter()
                .map(|c| c * c)
                .sum();
        }
        let total_energy: f64 = band_energy.iter().sum();
        let mut order: Vec<usize> = (0..cutoff_band).collect();
        order.sort_by(|&a, &b| band_energy[b].partial_cmp(&band_energy[a]).unwrap());
        let cap = ((budget_bits - 32) / (SCALE_BITS + 2 * BAND_SIZE as u32)) as usize;
        let mut active: Vec<usize> = Vec::new();
        let mut covered = 0.0;
        for &band in &order {
            if active.len() >= cap || band_energy[band] <= 0.0 {
                break;
            }
            active.push(band);
            covered += band_energy[band];
            if covered >= 0.999 * total_energy {
                break;
            }
        }
        active.sort_unstable();

        let mut mask = 0u32;
        for &band in &active {
            mask |= 1 << band;
        }
        writer.write(mask, 32);

        // Scale exponents: ceil of log2(max |coeff|) in half steps, 6 bits.
        let mut scales: Vec<(usize, i32)> = Vec::with_capacity(active.len());
        for &band in &active {
            let max_abs = coeffs[band * BAND_SIZE..(band + 1) * BAND_SIZE]
                .iter()
                .fold(0.0f64, |m, c| m.max(c.abs()));
            let exp2 = (2.0 * max_abs.log2())
                .ceil()
                .clamp(SCALE_EXP_MIN as f64, SCALE_EXP_MAX as f64) as i32;
            writer.write((exp2 - SCALE_EXP_MIN) as u32, SCALE_BITS);
            scales.push((band, exp2));
        }

        let remaining = budget_bits - 32 - SCALE_BITS * active.len() as u32;
        let alloc = allocate_bits(&scales, remaining);

        // Midrise quantizer over [-1, 1] using all 2^bits levels.
        for (i, &(band, exp2)) in scales.iter().enumerate() {
            let bits = alloc[i];
            if bits == 0 {
                continue;
            }
            let levels = 1u32 << bits;
            let scale = 2.0f64.powf(exp2 as f64 / 2.0);
            for j in 0..BAND_SIZE {
                let c_norm = (coeffs[band * BAND_SIZE + j] / scale).clamp(-1.0, 1.0);
                let q = (((c_norm + 1.0) / 2.0 * levels as f64).floor() as u32).min(levels - 1);
                writer.write(q, bits);
            }
        }
        debug_assert!(writer.bits_used() as u32 <= budget_bits);
        frames.push(writer.bytes);
    }

    Ok(CompressedPackage {
        frames,
        config: config.clone(),
        original_length: n,
    })
}

fn decode_builtin(package: &CompressedPackage) -> Result<AudioClip> {
    let n = package.original_length;
    let budgets = block_byte_budgets(n, package.config.bitrate_bps);
    if package.frames.len() != budgets.len() {
        return Err(Error::CorruptPackage(format!(
            "expected {} frames, found {}",
            budgets.len(),
            package.frames.len()
        )));
    }
    let mdct = Mdct::new();
    let blocks = budgets.len();
    let padded_len = (blocks + 1) * MDCT_N;
    let mut out = vec![0.0; padded_len];

    for (b, (frame, &budget_bytes)) in package.frames.iter().zip(&budgets).enumerate() {
        let budget_bits = (budget_bytes * 8) as u32;
        let mut coeffs = vec![0.0; MDCT_N];
        if budget_bits >= 32 && !frame.is_empty() {
            let mut reader = BitReader::new(frame);
            let mask = reader.read(32)?;
            let active: Vec<usize> = (0..NUM_BANDS).filter(|i| mask & (1 << i) != 0).collect();
            let mut scales: Vec<(usize, i32)> = Vec::with_capacity(active.len());
            for &band in &active {
                let exp2 = reader.read(SCALE_BITS)? as i32 + SCALE_EXP_MIN;
                scales.push((band, exp2));
            }
            let header = 32 + SCALE_BITS * active.len() as u32;
            if header > budget_bits {
                return Err(Error::CorruptPackage("header exceeds budget".into()));
            }
            let alloc = allocate_bits(&scales, budget_bits - header);
            for (i, &(band, exp2)) in scales.iter().enumerate() {
                let bits = alloc[i];
                if bits == 0 {
                    continue;
                }
                let levels = 1u32 << bits;
                let scale = 2.0f64.powf(exp2 as f64 / 2.0);
                for j in 0..BAND_SIZE {
                    let q = reader.read(bits)?;
                    let c_norm = (q as f64 + 0.5) * 2.0 / levels as f64 - 1.0;
                    coeffs[band * BAND_SIZE + j] = c_norm * scale;
                }
            }
        }
        let block = mdct.inverse(&coeffs);
        for (t, &x) in block.iter().enumerate() {
            out[b * MDCT_N + t] += x;
        }
    }

    Ok(AudioClip::new(
        out[MDCT_N..MDCT_N + n].to_vec(),
        CANONICAL_RATE_HZ,
    ))
}

// --------------------------------------------------------------------------
// External codec adapter
// --------------------------------------------------------------------------

fn run_template(template: &str, input: &Path, output: &Path, bitrate: u32) -> Result<()> {
    let cmd = template
        .replace("{input}", &input.to_string_lossy())
        .replace("{output}", &output.to_string_lossy())
        .replace("{bitrate}", &bitrate.to_string());
    let status = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .status()
        .map_err(|e| Error::ExternalCodecFailure(format!("spawn failed: {e}")))?;
    if !status.success() {
        return Err(Error::ExternalCodecFailure(format!(
            "command exited with {status}: {cmd}"
        )));
    }
    Ok(())
}

fn temp_dir() -> Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join(format!(
        "replaydet-codec-{}-{:x}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0)
    ));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn run_external_encode(clip: &AudioClip, template: &str, bitrate: u32) -> Result<Vec<u8>> {
    let dir = temp_dir()?;
    let input = dir.join("in.wav");
    let output = dir.join("out.pkt");
    let result = (|| {
        save_wav(clip, &input)?;
        run_template(template, &input, &output, bitrate)?;
        std::fs::read(&output)
            .map_err(|e| Error::ExternalCodecFailure(format!("no encoder output: {e}")))
    })();
    let _ = std::fs::remove_dir_all(&dir);
    result
}

fn run_external_decode(
    frame: &[u8],
    template: &str,
    package: &CompressedPackage,
) -> Result<AudioClip> {
    let dir = temp_dir()?;
    let input = dir.join("in.pkt");
    let output = dir.join("out.wav");
    let result = (|| {
        std::fs::write(&input, frame)?;
        run_template(template, &input, &output, package.config.bitrate_bps)?;
        let clip = load_wav(&output)
            .map_err(|e| Error::ExternalCodecFailure(format!("bad decoder output: {e}")))?;
        if clip.sample_rate_hz != package.config.sample_rate_hz {
            return Err(Error::ExternalCodecFailure(format!(
                "decoder rate {} != {}",
                clip.sample_rate_hz, package.config.sample_rate_hz
            )));
        }
        let mut samples = clip.samples;
        samples.resize(package.original_length, 0.0);
        Ok(AudioClip::new(samples, package.config.sample_rate_hz))
    })();
    let _ = std::fs::remove_dir_all(&dir);
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn tone(freq: f64, n: usize, amp: f64) -> AudioClip {
        AudioClip::new(
            (0..n)
                .map(|i| amp * (2.0 * PI * freq * i as f64 / 16_000.0).sin())
                .collect(),
            16_000,
        )
    }

    /// Harmonic vowel-like test signal: formant peaks over a falling tilt.
    fn speech_like(f0: f64, n: usize, seed: u64) -> AudioClip {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let formants = [
            (700.0 + rng.gen_range(-100.0..100.0), 130.0),
            (1220.0 + rng.gen_range(-150.0..150.0), 170.0),
            (2600.0 + rng.gen_range(-200.0..200.0), 250.0),
        ];
        let mut samples = vec![0.0; n];
        let mut h = 1;
        loop {
            let f = f0 * h as f64;
            if f >= 7800.0 {
                break;
            }
            let tilt = f0 / f;
            let resonance: f64 = formants
                .iter()
                .map(|&(fc, bw)| 1.0 / (1.0 + ((f - fc) / bw).powi(2)))
                .sum();
            let amp = tilt * (0.05 + resonance);
            let phase = rng.gen_range(0.0..2.0 * PI);
            for (i, s) in samples.iter_mut().enumerate() {
                *s += amp * (2.0 * PI * f * i as f64 / 16_000.0 + phase).sin();
            }
            h += 1;
        }
        let peak = samples.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        for s in &mut samples {
            *s *= 0.6 / peak;
        }
        AudioClip::new(samples, 16_000)
    }

    fn band_energy(samples: &[f64], lo_hz: f64, hi_hz: f64) -> f64 {
        use rustfft::{num_complex::Complex, FftPlanner};
        let n = samples.len();
        let mut buf: Vec<Complex<f64>> = samples.iter().map(|&x| Complex::new(x, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let (b0, b1) = (
            (lo_hz * n as f64 / 16_000.0) as usize,
            ((hi_hz * n as f64 / 16_000.0) as usize).min(n / 2),
        );
        buf[b0..b1].iter().map(|c| c.norm_sqr()).sum()
    }

    #[test]
    fn mdct_perfect_reconstruction_without_quantization() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let n = 3200;
        let samples: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.8..0.8)).collect();
        let mdct = Mdct::new();
        let blocks = num_blocks(n);
        let padded_len = (blocks + 1) * MDCT_N;
        let mut padded = vec![0.0; padded_len];
        padded[MDCT_N..MDCT_N + n].copy_from_slice(&samples);
        let mut out = vec![0.0; padded_len];
        for b in 0..blocks {
            let coeffs = mdct.forward(&padded[b * MDCT_N..b * MDCT_N + 2 * MDCT_N]);
            let block = mdct.inverse(&coeffs);
            for (t, &x) in block.iter().enumerate() {
                out[b * MDCT_N + t] += x;
            }
        }
        for i in 0..n {
            assert!(
                (out[MDCT_N + i] - samples[i]).abs() < 1e-10,
                "sample {i}: {} vs {}",
                out[MDCT_N + i],
                samples[i]
            );
        }
    }

    #[test]
    fn package_size_respects_budget() {
        let clip = speech_like(120.0, 16_000, 4);
        let config = CodecConfig::builtin(16_000).unwrap();
        let package = encode(&clip, &config).unwrap();
        assert!(
            package.total_bytes() <= 2100,
            "package {} bytes",
            package.total_bytes()
        );
    }

    #[test]
    fn silence_encodes_minimally() {
        let clip = AudioClip::new(vec![0.0; 16_000], 16_000);
        let config = CodecConfig::builtin(16_000).unwrap();
        let package = encode(&clip, &config).unwrap();
        // Mask-only frames: 4 bytes per 10 ms block.
        assert!(
            package.total_bytes() <= 4 * package.frames.len(),
            "silence used {} bytes",
            package.total_bytes()
        );
        let decoded = decode(&package).unwrap();
        assert!(decoded.rms() < 1e-9);
    }

    #[test]
    fn low_bitrate_drops_high_tone() {
        let clip = tone(6000.0, 16_000, 0.5);
        let config = CodecConfig::builtin(8000).unwrap();
        let decoded = roundtrip(&clip, &config).unwrap();
        let e_in = band_energy(&clip.samples, 5800.0, 6200.0);
        let e_out = band_energy(&decoded.samples, 5800.0, 6200.0);
        assert!(e_out / e_in < 0.01, "leak {}", e_out / e_in);
    }

    #[test]
    fn decode_preserves_length() {
        let config = CodecConfig::builtin(16_000).unwrap();
        for n in [100, 159, 160, 161, 4001, 16_000] {
            let clip = speech_like(150.0, n.max(320), 5);
            let clip = AudioClip::new(clip.samples[..n].to_vec(), 16_000);
            let decoded = roundtrip(&clip, &config).unwrap();
            assert_eq!(decoded.len(), n);
        }
    }

    #[test]
    fn tone_survives_16k_within_1db() {
        let clip = tone(1000.0, 16_000, 0.5);
        let config = CodecConfig::builtin(16_000).unwrap();
        let decoded = roundtrip(&clip, &config).unwrap();
        let e_in = band_energy(&clip.samples, 900.0, 1100.0);
        let e_out = band_energy(&decoded.samples, 900.0, 1100.0);
        let db = 10.0 * (e_out / e_in).log10();
        assert!(db.abs() <= 1.0, "tone level shifted {db:.2} dB");
        use rustfft::{num_complex::Complex, FftPlanner};
        let n = decoded.len();
        let mut buf: Vec<Complex<f64>> =
            decoded.samples.iter().map(|&x| Complex::new(x, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let peak = buf[..n / 2]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap())
            .unwrap()
            .0;
        let peak_hz = peak as f64 * 16_000.0 / n as f64;
        assert!((peak_hz - 1000.0).abs() <= 2.0, "peak at {peak_hz} Hz");
    }

    #[test]
    fn inband_snr_at_16k_on_speech() {
        let config = CodecConfig::builtin(16_000).unwrap();
        for seed in 0..5 {
            let clip = speech_like(100.0 + 30.0 * seed as f64, 16_000, seed);
            let decoded = roundtrip(&clip, &config).unwrap();
            let cutoff = config.cutoff_hz();
            let low_in = crate::dsp::lowpass(&clip.samples, cutoff, 16_000);
            let low_out = crate::dsp::lowpass(&decoded.samples, cutoff, 16_000);
            let err: f64 = low_in
                .iter()
                .zip(&low_out)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let sig: f64 = low_in.iter().map(|x| x * x).sum();
            let snr = 10.0 * (sig / err).log10();
            assert!(snr >= 10.0, "seed {seed}: band-limited SNR {snr:.1} dB");
        }
    }

    #[test]
    fn silence_roundtrip_is_silent() {
        let clip = AudioClip::new(vec![0.0; 8000], 16_000);
        let config = CodecConfig::builtin(12_000).unwrap();
        let decoded = roundtrip(&clip, &config).unwrap();
        assert!(decoded.rms() < 1e-9);
    }

    #[test]
    fn distortion_monotone_in_bitrate() {
        let clip = speech_like(130.0, 16_000, 8);
        let lsd = |a: &AudioClip, b: &AudioClip| {
            let sa = crate::dsp::stft_log_spectrogram(a, 50.0, 25.0, 1024).unwrap();
            let sb = crate::dsp::stft_log_spectrogram(b, 50.0, 25.0, 1024).unwrap();
            let acc: f64 = sa
                .values
                .iter()
                .zip(&sb.values)
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            (acc / sa.values.len() as f64).sqrt()
        };
        let rt8 = roundtrip(&clip, &CodecConfig::builtin(8000).unwrap()).unwrap();
        let rt16 = roundtrip(&clip, &CodecConfig::builtin(16_000).unwrap()).unwrap();
        let d8 = lsd(&clip, &rt8);
        let d16 = lsd(&clip, &rt16);
        assert!(d8 >= d16, "8k distortion {d8:.3} < 16k distortion {d16:.3}");
    }

    #[test]
    fn high_band_residual_grows_at_low_bitrate() {
        let clip = speech_like(140.0, 16_000, 9);
        let residual_high = |bitrate: u32| {
            let rt = roundtrip(&clip, &CodecConfig::builtin(bitrate).unwrap()).unwrap();
            let diff: Vec<f64> = clip
                .samples
                .iter()
                .zip(&rt.samples)
                .map(|(a, b)| a - b)
                .collect();
            band_energy(&diff, 4000.0, 8000.0)
        };
        let r8 = residual_high(8000);
        let r16 = residual_high(16_000);
        assert!(r8 >= r16, "high-band residual 8k {r8:.3e} < 16k {r16:.3e}");
    }

    #[test]
    fn cutoff_attenuation_on_white_noise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let clip = AudioClip::new(
            (0..16_000).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            16_000,
        );
        for bitrate in SUPPORTED_BITRATES {
            let config = CodecConfig::builtin(bitrate).unwrap();
            let decoded = roundtrip(&clip, &config).unwrap();
            let cutoff = config.cutoff_hz();
            let e_in = band_energy(&clip.samples, cutoff, 8000.0);
            let e_out = band_energy(&decoded.samples, cutoff, 8000.0);
            let db = 10.0 * (e_out / e_in).log10();
            assert!(db <= -30.0, "{bitrate} bps: above-cutoff {db:.1} dB");
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let clip = speech_like(125.0, 12_000, 21);
        let config = CodecConfig::builtin(14_000).unwrap();
        let a = encode(&clip, &config).unwrap();
        let b = encode(&clip, &config).unwrap();
        assert_eq!(a.frames, b.frames);
    }

    #[test]
    fn unsupported_bitrate_rejected() {
        assert!(matches!(
            CodecConfig::builtin(256_000).unwrap_err(),
            Error::PreconditionViolation(_)
        ));
        assert!(matches!(
            CodecConfig::builtin(0).unwrap_err(),
            Error::PreconditionViolation(_)
        ));
    }

    #[test]
    fn wrong_rate_rejected() {
        let clip = AudioClip::new(vec![0.1; 8000], 8000);
        let config = CodecConfig::builtin(16_000).unwrap();
        assert!(matches!(
            encode(&clip, &config).unwrap_err(),
            Error::PreconditionViolation(_)
        ));
    }

    #[test]
    fn corrupt_package_detected() {
        let clip = speech_like(150.0, 8000, 3);
        let config = CodecConfig::builtin(16_000).unwrap();
        let mut package = encode(&clip, &config).unwrap();
        package.frames.pop();
        assert!(matches!(
            decode(&package).unwrap_err(),
            Error::CorruptPackage(_)
        ));
    }

    #[test]
    fn external_codec_copy_pair() {
        let clip = speech_like(160.0, 8000, 6);
        let config = CodecConfig::external(
            16_000,
            "cp {input} {output}".into(),
            "cp {input} {output}".into(),
        )
        .unwrap();
        let out = roundtrip(&clip, &config).unwrap();
        assert_eq!(out.len(), clip.len());
        for (a, b) in clip.samples.iter().zip(&out.samples) {
            assert!((a - b).abs() <= 2.0 * 2.0f64.powi(-15));
        }
    }

    #[test]
    fn external_codec_failure() {
        let clip = speech_like(160.0, 8000, 6);
        let config =
            CodecConfig::external(16_000, "false".into(), "cp {input} {output}".into()).unwrap();
        assert!(matches!(
            encode(&clip, &config).unwrap_err(),
            Error::ExternalCodecFailure(_)
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn budget_invariant_holds(seed in 0u64..1000, len in 400usize..12_000, idx in 0usize..5) {
            let bitrate = SUPPORTED_BITRATES[idx];
            let clip = speech_like(110.0 + (seed % 90) as f64, len, seed);
            let config = CodecConfig::builtin(bitrate).unwrap();
            let package = encode(&clip, &config).unwrap();
            let budget = bitrate as f64 / 8.0 * clip.duration_seconds() * 1.05;
            prop_assert!(package.total_bytes() as f64 <= budget,
                "{} bytes > {budget}", package.total_bytes());
            let decoded = decode(&package).unwrap();
            prop_assert_eq!(decoded.len(), clip.len());
        }
    }
}
