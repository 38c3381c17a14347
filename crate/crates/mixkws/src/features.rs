//! Log-mel filterbank (Fbank) front end.
//!
//! 80 triangular mel filters over 20 Hz – 7600 Hz, 25 ms Hann window, 10 ms
//! hop, 512-point zero-padded DFT, natural log with a 1e-10 energy floor.
//! No pre-emphasis and no dither, so the transform is a pure function of the
//! waveform.

use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::signal::Waveform;

pub const NUM_MEL_BINS: usize = 80;
pub const FRAME_LENGTH_MS: usize = 25;
pub const FRAME_SHIFT_MS: usize = 10;
pub const FFT_SIZE: usize = 512;
pub const MEL_LOW_HZ: f64 = 20.0;
pub const MEL_HIGH_HZ: f64 = 7600.0;
pub const LOG_FLOOR: f64 = 1e-10;

/// Row-major `frames x 80` matrix of log mel energies.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    num_frames: usize,
}

impl FeatureMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let num_frames = rows.len();
        let mut data = Vec::with_capacity(num_frames * NUM_MEL_BINS);
        for row in &rows {
            if row.len() != NUM_MEL_BINS {
                return Err(Error::ShapeMismatch(format!(
                    "feature row has {} dims, expected {NUM_MEL_BINS}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { data, num_frames })
    }

    pub(crate) fn from_flat(data: Vec<f64>, num_frames: usize) -> Self {
        debug_assert_eq!(data.len(), num_frames * NUM_MEL_BINS);
        Self { data, num_frames }
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_bins(&self) -> usize {
        NUM_MEL_BINS
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * NUM_MEL_BINS..(t + 1) * NUM_MEL_BINS]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Per-dimension normalization statistics, persisted with model checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Identity statistics (mean 0, std 1).
    pub fn identity() -> Self {
        Self {
            mean: vec![0.0; NUM_MEL_BINS],
            std: vec![1.0; NUM_MEL_BINS],
        }
    }

    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != NUM_MEL_BINS || std.len() != NUM_MEL_BINS {
            return Err(Error::ShapeMismatch(format!(
                "stats must have {NUM_MEL_BINS} dims, got {}/{}",
                mean.len(),
                std.len()
            )));
        }
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidWaveform(
                "feature stddev entries must be positive".into(),
            ));
        }
        Ok(Self { mean, std })
    }

    /// Population mean and stddev per dimension over all frames of the given
    /// matrices, with the stddev floored at 1e-10 so constant dimensions
    /// normalize to zero instead of dividing by zero.
    pub fn compute(matrices: &[FeatureMatrix]) -> Result<Self> {
        let total: usize = matrices.iter().map(|m| m.num_frames).sum();
        if total == 0 {
            return Err(Error::Dataset(
                "cannot compute feature stats from zero frames".into(),
            ));
        }
        let mut mean = vec![0.0f64; NUM_MEL_BINS];
        for m in matrices {
            for t in 0..m.num_frames {
                for (d, v) in m.row(t).iter().enumerate() {
                    mean[d] += v;
                }
            }
        }
        for v in &mut mean {
            *v /= total as f64;
        }
        let mut var = vec![0.0f64; NUM_MEL_BINS];
        for m in matrices {
            for t in 0..m.num_frames {
                for (d, v) in m.row(t).iter().enumerate() {
                    let diff = v - mean[d];
                    var[d] += diff * diff;
                }
            }
        }
        let std = var
            .iter()
            .map(|v| (v / total as f64).sqrt().max(1e-10))
            .collect();
        Ok(Self { mean, std })
    }
}

/// Normalize each dimension to `(x - mean) / std`.
pub fn mean_var_normalize(f: &FeatureMatrix, stats: &FeatureStats) -> Result<FeatureMatrix> {
    if stats.mean.len() != NUM_MEL_BINS || stats.std.len() != NUM_MEL_BINS {
        return Err(Error::ShapeMismatch("stats dimension mismatch".into()));
    }
    if stats.std.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidWaveform(
            "feature stddev entries must be positive".into(),
        ));
    }
    let mut data = Vec::with_capacity(f.data.len());
    for t in 0..f.num_frames {
        for (d, v) in f.row(t).iter().enumerate() {
            data.push((v - stats.mean[d]) / stats.std[d]);
        }
    }
    Ok(FeatureMatrix::from_flat(data, f.num_frames))
}

/// Reusable Fbank extractor: precomputed Hann window and mel filter weights.
pub struct Fbank {
    sample_rate: u32,
    window_samples: usize,
    hop_samples: usize,
    window: Vec<f64>,
    /// `NUM_MEL_BINS` rows of `(bin, weight)` pairs over the 257 DFT bins.
    filters: Vec<Vec<(usize, f64)>>,
    fft: Arc<dyn Fft<f64>>,
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

impl Fbank {
    pub fn new(sample_rate: u32) -> Self {
        let window_samples = sample_rate as usize * FRAME_LENGTH_MS / 1000;
        let hop_samples = sample_rate as usize * FRAME_SHIFT_MS / 1000;
        let window: Vec<f64> = (0..window_samples)
            .map(|n| {
                0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / window_samples as f64).cos()
            })
            .collect();

        let num_bins = FFT_SIZE / 2 + 1;
        let bin_hz = sample_rate as f64 / FFT_SIZE as f64;
        let mel_lo = hz_to_mel(MEL_LOW_HZ);
        let mel_hi = hz_to_mel(MEL_HIGH_HZ.min(sample_rate as f64 / 2.0));
        let mel_step = (mel_hi - mel_lo) / (NUM_MEL_BINS + 1) as f64;
        let mut filters = Vec::with_capacity(NUM_MEL_BINS);
        for m in 0..NUM_MEL_BINS {
            let left = mel_lo + m as f64 * mel_step;
            let center = left + mel_step;
            let right = center + mel_step;
            let mut taps = Vec::new();
            for k in 0..num_bins {
                let mel = hz_to_mel(k as f64 * bin_hz);
                let w = if mel <= left || mel >= right {
                    0.0
                } else if mel <= center {
                    (mel - left) / mel_step
                } else {
                    (right - mel) / mel_step
                };
                if w > 0.0 {
                    taps.push((k, w));
                }
            }
            filters.push(taps);
        }

        let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);
        Self {
            sample_rate,
            window_samples,
            hop_samples,
            window,
            filters,
            fft,
        }
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn window_samples(&self) -> usize {
        self.window_samples
    }

    pub fn hop_samples(&self) -> usize {
        self.hop_samples
    }

    /// Frame count for a waveform of `num_samples` samples.
    pub fn num_frames(&self, num_samples: usize) -> usize {
        if num_samples < self.window_samples {
            0
        } else {
            (num_samples - self.window_samples) / self.hop_samples + 1
        }
    }

    /// Center frequency (Hz) of each mel filter.
    pub fn center_frequencies(&self) -> Vec<f64> {
        let mel_lo = hz_to_mel(MEL_LOW_HZ);
        let mel_hi = hz_to_mel(MEL_HIGH_HZ.min(self.sample_rate as f64 / 2.0));
        let mel_step = (mel_hi - mel_lo) / (NUM_MEL_BINS + 1) as f64;
        (0..NUM_MEL_BINS)
            .map(|m| mel_to_hz(mel_lo + (m + 1) as f64 * mel_step))
            .collect()
    }

    #[cfg_attr(not(test), allow(dead_code))]
    pub(crate) fn filter_taps(&self) -> &[Vec<(usize, f64)>] {
        &self.filters
    }

    pub fn compute(&self, x: &Waveform) -> Result<FeatureMatrix> {
        if x.sample_rate_hz() != self.sample_rate {
            return Err(Error::SampleRateMismatch {
                left: x.sample_rate_hz(),
                right: self.sample_rate,
            });
        }
        let samples = x.samples();
        if samples.len() < self.window_samples {
            return Err(Error::InputTooShort {
                got: samples.len(),
                need: self.window_samples,
            });
        }
        let num_frames = self.num_frames(samples.len());
        let num_bins = FFT_SIZE / 2 + 1;
        let mut data = Vec::with_capacity(num_frames * NUM_MEL_BINS);
        let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
        let mut power = vec![0.0f64; num_bins];
        for t in 0..num_frames {
            let start = t * self.hop_samples;
            for i in 0..FFT_SIZE {
                let v = if i < self.window_samples {
                    samples[start + i] * self.window[i]
                } else {
                    0.0
                };
                buf[i] = Complex::new(v, 0.0);
            }
            self.fft.process(&mut buf);
            for (k, p) in power.iter_mut().enumerate() {
                *p = buf[k].norm_sqr();
            }
            for taps in &self.filters {
                let mut energy = 0.0;
                for &(k, w) in taps {
                    energy += w * power[k];
                }
                data.push(energy.max(LOG_FLOOR).ln());
            }
        }
        Ok(FeatureMatrix::from_flat(data, num_frames))
    }
}

fn fbank_16k() -> &'static Fbank {
    static FBANK: OnceLock<Fbank> = OnceLock::new();
    FBANK.get_or_init(|| Fbank::new(crate::signal::DEFAULT_SAMPLE_RATE))
}

/// Compute Fbank features using a process-wide extractor for the default
/// 16 kHz rate; other rates build a fresh extractor.
pub fn fbank(x: &Waveform) -> Result<FeatureMatrix> {
    if x.sample_rate_hz() == crate::signal::DEFAULT_SAMPLE_RATE {
        fbank_16k().compute(x)
    } else {
        Fbank::new(x.sample_rate_hz()).compute(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::DEFAULT_SAMPLE_RATE;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, DEFAULT_SAMPLE_RATE).unwrap()
    }

    #[test]
    fn one_second_yields_98_frames_of_80_dims() {
        let x = wave(vec![0.01; 16_000]);
        let f = fbank(&x).unwrap();
        assert_eq!(f.num_frames(), 98);
        assert_eq!(f.num_bins(), 80);
    }

    #[test]
    fn frame_count_formula_holds() {
        let fb = Fbank::new(DEFAULT_SAMPLE_RATE);
        for n in [400usize, 401, 559, 560, 561, 1000, 16_000, 23_456] {
            let x = wave(vec![0.0; n]);
            let f = fb.compute(&x).unwrap();
            assert_eq!(f.num_frames(), (n - 400) / 160 + 1, "n = {n}");
        }
    }

    #[test]
    fn too_short_input_rejected() {
        let x = wave(vec![0.0; 399]);
        assert!(matches!(
            fbank(&x).unwrap_err(),
            Error::InputTooShort { got: 399, need: 400 }
        ));
    }

    #[test]
    fn all_zero_input_hits_log_floor_everywhere() {
        let x = wave(vec![0.0; 16_000]);
        let f = fbank(&x).unwrap();
        let expected = LOG_FLOOR.ln();
        assert!(f.data().iter().all(|&v| v == expected));
    }

    /// Reference check: a pure tone peaks in the mel filter whose center is
    /// nearest the tone frequency, and a naive DFT agrees with the FFT path
    /// on where the spectral energy sits.
    #[test]
    fn pure_tone_peaks_at_nearest_mel_center() {
        let tone_hz = 1000.0;
        let samples: Vec<f64> = (0..16_000)
            .map(|t| 0.5 * (std::f64::consts::TAU * tone_hz * t as f64 / 16_000.0).sin())
            .collect();
        let x = wave(samples.clone());
        let fb = Fbank::new(DEFAULT_SAMPLE_RATE);
        let f = fb.compute(&x).unwrap();

        let centers = fb.center_frequencies();
        let nearest = centers
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1 - tone_hz)
                    .abs()
                    .partial_cmp(&(b.1 - tone_hz).abs())
                    .unwrap()
            })
            .map(|(i, _)| i)
            .unwrap();

        for t in 0..f.num_frames() {
            let row = f.row(t);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            assert_eq!(argmax, nearest, "frame {t}");
        }

        // Naive DFT oracle on the first frame: spectral argmax must be the
        // DFT bin closest to the tone.
        let window: Vec<f64> = (0..400)
            .map(|n| 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / 400.0).cos())
            .collect();
        let mut mags = Vec::new();
        for k in 0..257 {
            let mut re = 0.0;
            let mut im = 0.0;
            for n in 0..512 {
                let v = if n < 400 { samples[n] * window[n] } else { 0.0 };
                let ang = -std::f64::consts::TAU * k as f64 * n as f64 / 512.0;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            mags.push(re * re + im * im);
        }
        let dft_argmax = mags
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        assert_eq!(dft_argmax, (tone_hz / (16_000.0 / 512.0)).round() as usize);
    }

    #[test]
    fn dropping_one_hop_drops_exactly_one_frame() {
        let samples: Vec<f64> = (0..3200)
            .map(|t| (0.3 * (t as f64 * 0.01).sin() + 0.1 * (t as f64 * 0.037).cos()) * 0.9)
            .collect();
        let full = fbank(&wave(samples.clone())).unwrap();
        let shifted = fbank(&wave(samples[160..].to_vec())).unwrap();
        assert_eq!(shifted.num_frames(), full.num_frames() - 1);
        for t in 0..shifted.num_frames() {
            for (a, b) in shifted.row(t).iter().zip(full.row(t + 1)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mel_filters_cover_band_and_sum_positive() {
        let fb = Fbank::new(DEFAULT_SAMPLE_RATE);
        for (m, taps) in fb.filter_taps().iter().enumerate() {
            let sum: f64 = taps.iter().map(|(_, w)| w).sum();
            assert!(sum > 0.0, "filter {m} sums to {sum}");
        }
        let bin_hz = 16_000.0 / FFT_SIZE as f64;
        let mut covered = vec![false; FFT_SIZE / 2 + 1];
        for taps in fb.filter_taps() {
            for &(k, _) in taps {
                covered[k] = true;
            }
        }
        for (k, c) in covered.iter().enumerate() {
            let hz = k as f64 * bin_hz;
            if hz > MEL_LOW_HZ && hz < MEL_HIGH_HZ {
                assert!(c, "bin {k} ({hz} Hz) not covered");
            }
        }
    }

    #[test]
    fn normalize_identity_stats_is_identity() {
        let x = wave(vec![0.2; 800]);
        let f = fbank(&x).unwrap();
        let g = mean_var_normalize(&f, &FeatureStats::identity()).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn normalize_constant_matrix_yields_zeros() {
        let f = FeatureMatrix::from_rows(vec![vec![3.5; 80]; 10]).unwrap();
        let stats = FeatureStats::compute(std::slice::from_ref(&f)).unwrap();
        let g = mean_var_normalize(&f, &stats).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_by_own_stats_centers_and_scales() {
        let mut rng = crate::seeds::stream(11, "feature-test");
        use rand::Rng;
        let rows: Vec<Vec<f64>> = (0..98)
            .map(|_| (0..80).map(|_| rng.gen_range(-4.0..4.0)).collect())
            .collect();
        let f = FeatureMatrix::from_rows(rows).unwrap();
        let stats = FeatureStats::compute(std::slice::from_ref(&f)).unwrap();
        let g = mean_var_normalize(&f, &stats).unwrap();
        for d in 0..80 {
            let column: Vec<f64> = (0..g.num_frames()).map(|t| g.row(t)[d]).collect();
            let n = column.len() as f64;
            let mean = column.iter().sum::<f64>() / n;
            let var = column.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9, "dim {d} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "dim {d} var {var}");
        }
    }

    #[test]
    fn normalize_rejects_nonpositive_std() {
        let f = FeatureMatrix::from_rows(vec![vec![0.0; 80]; 2]).unwrap();
        let mut std = vec![1.0; 80];
        std[3] = 0.0;
        let stats = FeatureStats {
            mean: vec![0.0; 80],
            std,
        };
        assert!(mean_var_normalize(&f, &stats).is_err());
    }
}
