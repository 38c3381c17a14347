//! Waveform representation, superposition, WAV I/O and the deterministic
//! synthetic keyword generator.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seeds;

/// Default sample rate used throughout the toolkit.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono audio with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    /// Build a waveform, validating the amplitude range and non-emptiness.
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyWaveform);
        }
        if sample_rate_hz == 0 {
            return Err(Error::InvalidWaveform("sample rate must be positive".into()));
        }
        if let Some(s) = samples.iter().find(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::InvalidWaveform(format!(
                "sample {s} outside [-1, 1]"
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Convex superposition weights for two-source mixing, as produced by
/// [`sample_mt_weights`]: each weight lies in `[0.1, 0.9]` and the pair sums
/// to one.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MixWeights {
    pub w1: f64,
    pub w2: f64,
}

impl MixWeights {
    pub fn new(w1: f64, w2: f64) -> Result<Self> {
        if !(w1.is_finite() && w2.is_finite()) {
            return Err(Error::InvalidMixWeights("weights must be finite".into()));
        }
        if ((w1 + w2) - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMixWeights(format!(
                "weights must sum to 1, got {w1} + {w2} = {}",
                w1 + w2
            )));
        }
        for w in [w1, w2] {
            if !(0.1..=0.9).contains(&w) {
                return Err(Error::InvalidMixWeights(format!(
                    "weight {w} outside [0.1, 0.9]"
                )));
            }
        }
        Ok(Self { w1, w2 })
    }

    /// Normalize two raw `Uniform(0.1, 0.9)` draws into convex weights.
    pub fn from_raw_draws(u1: f64, u2: f64) -> Result<Self> {
        if !(0.1..0.9).contains(&u1) || !(0.1..0.9).contains(&u2) {
            return Err(Error::InvalidMixWeights(format!(
                "raw draws ({u1}, {u2}) outside [0.1, 0.9)"
            )));
        }
        let sum = u1 + u2;
        Self::new(u1 / sum, u2 / sum)
    }

    pub fn swapped(self) -> Self {
        Self {
            w1: self.w2,
            w2: self.w1,
        }
    }
}

/// Draw mixing weights for mix-training: two independent `Uniform(0.1, 0.9)`
/// draws, normalized to sum to one.
pub fn sample_mt_weights(rng: &mut ChaCha8Rng) -> MixWeights {
    let u1 = rng.gen_range(0.1..0.9);
    let u2 = rng.gen_range(0.1..0.9);
    MixWeights::from_raw_draws(u1, u2).expect("raw uniform draws are in range")
}

/// Weighted sum of two waveforms with convex weights `wa + wb = 1`,
/// `wa, wb >= 0`. The shorter input is zero-padded at the end, so the output
/// has the length of the longer one; convexity keeps all samples in `[-1, 1]`.
pub fn convex_mix(a: &Waveform, b: &Waveform, wa: f64, wb: f64) -> Result<Waveform> {
    if a.sample_rate_hz != b.sample_rate_hz {
        return Err(Error::SampleRateMismatch {
            left: a.sample_rate_hz,
            right: b.sample_rate_hz,
        });
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    if !(wa.is_finite() && wb.is_finite()) || wa < 0.0 || wb < 0.0 || (wa + wb - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidMixWeights(format!(
            "({wa}, {wb}) is not a convex pair"
        )));
    }
    let len = a.len().max(b.len());
    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        let sa = a.samples.get(t).copied().unwrap_or(0.0);
        let sb = b.samples.get(t).copied().unwrap_or(0.0);
        out.push(wa * sa + wb * sb);
    }
    Waveform::new(out, a.sample_rate_hz)
}

/// Superpose two waveforms with mix-training weights.
pub fn mix_waveforms(a: &Waveform, b: &Waveform, w: &MixWeights) -> Result<Waveform> {
    convex_mix(a, b, w.w1, w.w2)
}

const PCM_SCALE: f64 = 32_768.0;

/// Load a 16-bit PCM mono RIFF/WAVE file.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| Error::WavFormat {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::WavFormat {
            path: path.to_path_buf(),
            detail: format!("unsupported channel count: {}", spec.channels),
        });
    }
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::WavFormat {
            path: path.to_path_buf(),
            detail: format!(
                "unsupported encoding: {} bits, {:?}",
                spec.bits_per_sample, spec.sample_format
            ),
        });
    }
    let samples: Vec<f64> = reader
        .samples::<i16>()
        .map(|s| {
            s.map(|v| f64::from(v) / PCM_SCALE)
                .map_err(|e| Error::WavFormat {
                    path: path.to_path_buf(),
                    detail: e.to_string(),
                })
        })
        .collect::<Result<_>>()?;
    if samples.is_empty() {
        return Err(Error::WavFormat {
            path: path.to_path_buf(),
            detail: "file contains no samples".into(),
        });
    }
    Waveform::new(samples, spec.sample_rate)
}

/// Save as 16-bit PCM mono. Quantization error per sample is at most `2^-15`,
/// so `load(save(x))` matches `x` within that bound.
pub fn save_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| Error::WavFormat {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    for &s in &wave.samples {
        let q = (s * PCM_SCALE).round().clamp(-32_768.0, 32_767.0) as i16;
        writer.write_sample(q).map_err(|e| Error::WavFormat {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    }
    writer.finalize().map_err(|e| Error::WavFormat {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    Ok(())
}

// Synthetic keyword parameterization. Fixed so that corpus generation is a
// pure function of (keyword_id, variant_seed).
const SYNTH_BASE_HZ: f64 = 300.0;
const SYNTH_STEP_HZ: f64 = 80.0;
const SYNTH_HARMONICS: [(f64, f64); 3] = [(1.0, 1.0), (2.0, 0.45), (3.0, 0.25)];
const SYNTH_FREQ_JITTER: f64 = 0.03;
const SYNTH_AMP_JITTER: f64 = 0.2;
const SYNTH_TARGET_PEAK: f64 = 0.7;
const SYNTH_PEAK_CAP: f64 = 0.9;
const SYNTH_SNR_DB: f64 = 20.0;

/// Deterministic synthetic keyword audio: three amplitude-enveloped sinusoids
/// at keyword-specific frequencies with seeded jitter and 20 dB additive
/// Gaussian noise. Peak amplitude is capped at 0.9.
pub fn synth_keyword(keyword_id: u32, variant_seed: u64, duration_s: f64) -> Waveform {
    assert!(duration_s > 0.0, "duration must be positive");
    let sr = DEFAULT_SAMPLE_RATE;
    let n = (duration_s * sr as f64).round() as usize;
    let n = n.max(1);
    let mut rng = seeds::stream(variant_seed, &format!("synth/keyword/{keyword_id}"));

    let f0 = SYNTH_BASE_HZ + SYNTH_STEP_HZ * keyword_id as f64;
    let mut partials = Vec::with_capacity(SYNTH_HARMONICS.len());
    for (mult, amp) in SYNTH_HARMONICS {
        let freq = f0 * mult * (1.0 + rng.gen_range(-SYNTH_FREQ_JITTER..SYNTH_FREQ_JITTER));
        let gain = amp * rng.gen_range(1.0 - SYNTH_AMP_JITTER..1.0 + SYNTH_AMP_JITTER);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        partials.push((freq, gain, phase));
    }
    let peak_target =
        SYNTH_TARGET_PEAK * rng.gen_range(1.0 - SYNTH_AMP_JITTER..1.0 + SYNTH_AMP_JITTER);

    let mut samples = vec![0.0f64; n];
    for (t, s) in samples.iter_mut().enumerate() {
        let time = t as f64 / sr as f64;
        // Raised-cosine envelope concentrates energy at the clip center.
        let env = (std::f64::consts::PI * t as f64 / (n.max(2) - 1) as f64).sin();
        let env = env * env;
        let mut v = 0.0;
        for &(freq, gain, phase) in &partials {
            v += gain * (std::f64::consts::TAU * freq * time + phase).sin();
        }
        *s = env * v;
    }

    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        let scale = peak_target / peak;
        for s in &mut samples {
            *s *= scale;
        }
    }

    // Additive Gaussian noise at the configured SNR relative to clean RMS.
    let rms = (samples.iter().map(|s| s * s).sum::<f64>() / n as f64).sqrt();
    let noise_std = rms / 10f64.powf(SYNTH_SNR_DB / 20.0);
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).expect("valid std");
        for s in &mut samples {
            *s += normal.sample(&mut rng);
        }
    }

    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > SYNTH_PEAK_CAP {
        let scale = SYNTH_PEAK_CAP / peak;
        for s in &mut samples {
            *s *= scale;
        }
    }

    Waveform::new(samples, sr).expect("synthetic samples are in range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn wave(samples: &[f64]) -> Waveform {
        Waveform::new(samples.to_vec(), DEFAULT_SAMPLE_RATE).unwrap()
    }

    #[test]
    fn mix_direct_arithmetic() {
        let a = wave(&[1.0, -0.5]);
        let b = wave(&[0.2, 0.4]);
        let w = MixWeights::new(0.5, 0.5).unwrap();
        let out = mix_waveforms(&a, &b, &w).unwrap();
        for (o, e) in out.samples().iter().zip(&[0.6, -0.05]) {
            assert!((o - e).abs() < 1e-12, "{o} vs {e}");
        }
    }

    #[test]
    fn mix_identical_inputs_is_identity() {
        let x = wave(&[0.3, -0.2, 0.9]);
        let w = MixWeights::new(0.25, 0.75).unwrap();
        let out = mix_waveforms(&x, &x, &w).unwrap();
        for (o, s) in out.samples().iter().zip(x.samples()) {
            assert!((o - s).abs() < 1e-15, "{o} vs {s}");
        }
    }

    #[test]
    fn mix_zero_pads_shorter_input() {
        let a = wave(&[0.8, 0.8, 0.8]);
        let b = wave(&[0.4]);
        let w = MixWeights::new(0.25, 0.75).unwrap();
        let out = mix_waveforms(&a, &b, &w).unwrap();
        let expected = [0.5, 0.2, 0.2];
        for (o, e) in out.samples().iter().zip(expected) {
            assert!((o - e).abs() < 1e-15, "{o} vs {e}");
        }
    }

    #[test]
    fn mix_rejects_rate_mismatch() {
        let a = wave(&[0.1]);
        let b = Waveform::new(vec![0.1], 8000).unwrap();
        let w = MixWeights::new(0.5, 0.5).unwrap();
        let err = mix_waveforms(&a, &b, &w).unwrap_err();
        assert!(matches!(err, Error::SampleRateMismatch { .. }));
    }

    #[test]
    fn waveform_rejects_empty_and_out_of_range() {
        assert!(matches!(
            Waveform::new(vec![], 16_000),
            Err(Error::EmptyWaveform)
        ));
        assert!(Waveform::new(vec![1.5], 16_000).is_err());
        assert!(Waveform::new(vec![0.0], 0).is_err());
    }

    #[test]
    fn raw_draw_normalization_boundaries() {
        let w = MixWeights::from_raw_draws(0.9 - 1e-12, 0.1).unwrap();
        assert!((w.w1 - 0.9).abs() < 1e-9);
        assert!((w.w2 - 0.1).abs() < 1e-9);
        let w = MixWeights::from_raw_draws(0.4, 0.4).unwrap();
        assert_eq!(w.w1, 0.5);
        assert_eq!(w.w2, 0.5);
    }

    #[test]
    fn mt_weights_empirical_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let w = sample_mt_weights(&mut rng);
            assert!((0.1..=0.9).contains(&w.w1));
            assert!((0.1..=0.9).contains(&w.w2));
            assert!((w.w1 + w.w2 - 1.0).abs() <= 1e-12);
            sum += w.w1;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn wav_round_trip_ramp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ramp.wav");
        let samples: Vec<f64> = (0..160).map(|i| (i as f64 - 80.0) / 100.0).collect();
        let x = wave(&samples);
        save_wav(&path, &x).unwrap();
        let y = load_wav(&path).unwrap();
        assert_eq!(y.len(), x.len());
        assert_eq!(y.sample_rate_hz(), x.sample_rate_hz());
        let bound = (-15f64).exp2();
        for (a, b) in x.samples().iter().zip(y.samples()) {
            assert!((a - b).abs() <= bound, "{a} vs {b}");
        }
    }

    #[test]
    fn wav_round_trip_zeros_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zeros.wav");
        let x = wave(&vec![0.0; 16_000]);
        save_wav(&path, &x).unwrap();
        let y = load_wav(&path).unwrap();
        assert_eq!(x.samples(), y.samples());
    }

    #[test]
    fn wav_rejects_stereo() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..64 {
            w.write_sample(0i16).unwrap();
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        let err = load_wav(&path).unwrap_err();
        match err {
            Error::WavFormat { detail, .. } => {
                assert!(detail.contains("unsupported channel count"), "{detail}")
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn wav_rejects_malformed_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.wav");
        std::fs::write(&path, b"not a riff file at all").unwrap();
        assert!(matches!(
            load_wav(&path).unwrap_err(),
            Error::WavFormat { .. }
        ));
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_keyword(3, 42, 0.25);
        let b = synth_keyword(3, 42, 0.25);
        assert_eq!(a.samples(), b.samples());
        let c = synth_keyword(3, 43, 0.25);
        assert_ne!(a.samples(), c.samples());
    }

    #[test]
    fn synth_peak_bounded() {
        for id in 0..6 {
            for seed in 0..4 {
                let w = synth_keyword(id, seed, 0.2);
                let peak = w.samples().iter().fold(0.0f64, |m, s| m.max(s.abs()));
                assert!(peak <= SYNTH_PEAK_CAP + 1e-12, "id {id} seed {seed}: {peak}");
            }
        }
    }

    /// Magnitude spectra of different keywords should be close to orthogonal.
    #[test]
    fn synth_distinct_keywords_have_distinct_spectra() {
        let a = synth_keyword(0, 9, 0.5);
        let b = synth_keyword(5, 9, 0.5);
        let spec_a = magnitude_spectrum(a.samples());
        let spec_b = magnitude_spectrum(b.samples());
        let corr = pearson(&spec_a, &spec_b);
        assert!(corr < 0.5, "correlation {corr}");
    }

    fn magnitude_spectrum(x: &[f64]) -> Vec<f64> {
        use rustfft::num_complex::Complex;
        let n = 4096.min(x.len());
        let mut planner = rustfft::FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let mut buf: Vec<Complex<f64>> =
            x[..n].iter().map(|&v| Complex::new(v, 0.0)).collect();
        fft.process(&mut buf);
        buf[..n / 2].iter().map(|c| c.norm()).collect()
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for (x, y) in a.iter().zip(b) {
            cov += (x - ma) * (y - mb);
            va += (x - ma) * (x - ma);
            vb += (y - mb) * (y - mb);
        }
        cov / (va.sqrt() * vb.sqrt())
    }
}
