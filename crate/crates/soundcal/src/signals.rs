//! Signal primitives: maximum-length sequences, sine tones, windows,
//! spectra, autocorrelation, and the recorded-power monitor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::{fft_real, ifft_real, FrequencyResponse};

/// A real-valued digital waveform and the rate it was sampled at.
/// Amplitudes are dB re digital full scale throughout the crate, so
/// samples nominally stay within [-1, 1].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampledSignal {
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
}

impl SampledSignal {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Self {
        Self { samples, sample_rate_hz }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_sec(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    pub fn nyquist_hz(&self) -> f64 {
        self.sample_rate_hz / 2.0
    }

    /// Mean squared amplitude (dimensionless linear power).
    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz <= 0.0 {
            return Err(Error::BadSignal("sample rate must be positive".into()));
        }
        if self.samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadSignal("samples must be finite".into()));
        }
        Ok(())
    }
}

/// Lower exponents (including the constant term) of one primitive
/// polynomial per order. The shift register feeds back the XOR of the
/// state bits at these positions, which walks the register through all
/// 2^n - 1 nonzero states.
const PRIMITIVE_POLY_LOW_EXPONENTS: [(u32, &[u32]); 19] = [
    (2, &[1, 0]),
    (3, &[1, 0]),
    (4, &[1, 0]),
    (5, &[2, 0]),
    (6, &[1, 0]),
    (7, &[1, 0]),
    (8, &[4, 3, 2, 0]),
    (9, &[4, 0]),
    (10, &[3, 0]),
    (11, &[2, 0]),
    (12, &[6, 4, 1, 0]),
    (13, &[4, 3, 1, 0]),
    (14, &[10, 6, 1, 0]),
    (15, &[1, 0]),
    (16, &[12, 3, 1, 0]),
    (17, &[3, 0]),
    (18, &[7, 0]),
    (19, &[5, 2, 1, 0]),
    (20, &[3, 0]),
];

pub const MIN_MLS_ORDER: u32 = 2;
pub const MAX_MLS_ORDER: u32 = 20;

fn poly_for_order(order: u32) -> Result<&'static [u32]> {
    PRIMITIVE_POLY_LOW_EXPONENTS
        .iter()
        .find(|(n, _)| *n == order)
        .map(|(_, taps)| *taps)
        .ok_or(Error::UnsupportedOrder(order))
}

/// Recipe for one maximum-length-sequence period.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlsSpec {
    pub order: u32,
    pub amplitude_db: f64,
    pub period_samples: usize,
    /// Lower exponents of the primitive polynomial used for this order.
    pub polynomial: Vec<u32>,
    pub sample_rate_hz: f64,
}

impl MlsSpec {
    pub fn new(order: u32, amplitude_db: f64, sample_rate_hz: f64) -> Result<Self> {
        let poly = poly_for_order(order)?;
        Ok(Self {
            order,
            amplitude_db,
            period_samples: (1usize << order) - 1,
            polynomial: poly.to_vec(),
            sample_rate_hz,
        })
    }

    pub fn amplitude(&self) -> f64 {
        10f64.powf(self.amplitude_db / 20.0)
    }
}

/// Generate one MLS period of 2^n - 1 samples, each +/- the linear
/// amplitude. Fibonacci LFSR seeded with state 1; the output sample
/// takes the sign of the state's low bit.
pub fn generate_mls(spec: &MlsSpec) -> Result<SampledSignal> {
    let taps = poly_for_order(spec.order)?;
    let n = (1usize << spec.order) - 1;
    let amplitude = spec.amplitude();
    let mut state: u32 = 1;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let mut feedback = 0u32;
        for &e in taps {
            feedback ^= (state >> e) & 1;
        }
        samples.push(if state & 1 == 1 { amplitude } else { -amplitude });
        state = (state >> 1) | (feedback << (spec.order - 1));
    }
    Ok(SampledSignal::new(samples, spec.sample_rate_hz))
}

/// Pick the order whose period is log-nearest to `duration * rate`
/// samples, mirroring the log-nearest rule used for sampling rates.
pub fn order_for_duration(duration_sec: f64, sample_rate_hz: f64) -> Result<u32> {
    if duration_sec <= 0.0 || sample_rate_hz <= 0.0 {
        return Err(Error::BadSignal("duration and rate must be positive".into()));
    }
    let target = (duration_sec * sample_rate_hz).ln();
    let dist = |order: u32| (((1u64 << order) - 1) as f64).ln() - target;
    let best = (MIN_MLS_ORDER..=MAX_MLS_ORDER)
        .min_by(|&a, &b| dist(a).abs().partial_cmp(&dist(b).abs()).unwrap())
        .unwrap();
    // reject targets that would really round to an order outside the table
    if best == MAX_MLS_ORDER && dist(MAX_MLS_ORDER + 1).abs() < dist(best).abs() {
        return Err(Error::NoSuitableOrder(duration_sec * sample_rate_hz));
    }
    if best == MIN_MLS_ORDER && dist(MIN_MLS_ORDER - 1).abs() < dist(best).abs() {
        return Err(Error::NoSuitableOrder(duration_sec * sample_rate_hz));
    }
    Ok(best)
}

pub fn generate_sine(
    freq_hz: f64,
    duration_sec: f64,
    amplitude_db: f64,
    sample_rate_hz: f64,
) -> Result<SampledSignal> {
    if freq_hz <= 0.0 || freq_hz >= sample_rate_hz / 2.0 {
        return Err(Error::AboveNyquist { freq_hz, nyquist_hz: sample_rate_hz / 2.0 });
    }
    let n = (duration_sec * sample_rate_hz).round() as usize;
    let a = 10f64.powf(amplitude_db / 20.0);
    let w = 2.0 * std::f64::consts::PI * freq_hz / sample_rate_hz;
    let samples = (0..n).map(|k| a * (w * k as f64).sin()).collect();
    Ok(SampledSignal::new(samples, sample_rate_hz))
}

/// Symmetric Hann window: w[k] = 0.5 (1 - cos(2 pi k / (len - 1))),
/// zero at both endpoints. Length 1 degenerates to [1].
pub fn hann_window(length: usize) -> Result<Vec<f64>> {
    if length == 0 {
        return Err(Error::BadSignal("window length must be >= 1".into()));
    }
    if length == 1 {
        return Ok(vec![1.0]);
    }
    let denom = (length - 1) as f64;
    Ok((0..length)
        .map(|k| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * k as f64 / denom).cos()))
        .collect())
}

/// Full two-sided spectrum of the signal; per-bin power in dB comes
/// from [`FrequencyResponse::power_db`], with -inf marking empty bins.
pub fn power_spectrum_db(signal: &SampledSignal) -> Result<FrequencyResponse> {
    if signal.is_empty() {
        return Err(Error::BadSignal("cannot take the spectrum of an empty signal".into()));
    }
    Ok(FrequencyResponse::from_signal(&signal.samples, signal.sample_rate_hz))
}

/// Circular autocorrelation via the power spectrum. Lag 0 carries the
/// total energy (N times the mean power).
pub fn circular_autocorrelation(signal: &SampledSignal) -> Result<Vec<f64>> {
    if signal.is_empty() {
        return Err(Error::BadSignal("cannot autocorrelate an empty signal".into()));
    }
    let mut spec = fft_real(&signal.samples);
    for v in spec.iter_mut() {
        *v = rustfft::num_complex::Complex64::new(v.norm_sqr(), 0.0);
    }
    Ok(ifft_real(&spec))
}

/// Plain (non-circular) autocorrelation, lags 0..len. Unlike the
/// circular form there is no wraparound, so a recording whose length
/// is not a whole number of periods still peaks at exact multiples of
/// the period; the peak heights decay as (1 - lag/len) because only
/// the overlapping samples contribute.
pub fn linear_autocorrelation(signal: &SampledSignal) -> Result<Vec<f64>> {
    if signal.is_empty() {
        return Err(Error::BadSignal("cannot autocorrelate an empty signal".into()));
    }
    let n = signal.len();
    let padded_len = (2 * n).next_power_of_two();
    let mut padded = signal.samples.clone();
    padded.resize(padded_len, 0.0);
    let mut spec = fft_real(&padded);
    for v in spec.iter_mut() {
        *v = rustfft::num_complex::Complex64::new(v.norm_sqr(), 0.0);
    }
    let mut r = ifft_real(&spec);
    r.truncate(n);
    Ok(r)
}

/// Recorded power over time, in non-overlapping windows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerTimeSeries {
    pub times_sec: Vec<f64>,
    pub power_db: Vec<f64>,
    pub sd_db: f64,
}

impl PowerTimeSeries {
    /// True when the recording's power wandered more than the caller's
    /// tolerance (the "wild fluctuation" detector).
    pub fn exceeds(&self, threshold_db: f64) -> bool {
        self.sd_db > threshold_db
    }
}

/// Mean power per non-overlapping window, in dB, with the standard
/// deviation across windows. Silent windows become -inf sentinels and
/// are left out of the SD.
pub fn power_over_time(recording: &SampledSignal, window_sec: f64) -> Result<PowerTimeSeries> {
    let w = (window_sec * recording.sample_rate_hz).round() as usize;
    if w < 1 {
        return Err(Error::BadSignal("power window shorter than one sample".into()));
    }
    if recording.len() < w {
        return Err(Error::BadSignal(format!(
            "recording ({} samples) shorter than one {} sample window",
            recording.len(),
            w
        )));
    }
    let mut times = Vec::new();
    let mut power = Vec::new();
    for (i, chunk) in recording.samples.chunks_exact(w).enumerate() {
        let p = chunk.iter().map(|v| v * v).sum::<f64>() / w as f64;
        times.push((i as f64 + 0.5) * w as f64 / recording.sample_rate_hz);
        power.push(if p > 0.0 { 10.0 * p.log10() } else { f64::NEG_INFINITY });
    }
    let finite: Vec<f64> = power.iter().copied().filter(|v| v.is_finite()).collect();
    let sd = population_sd(&finite);
    Ok(PowerTimeSeries { times_sec: times, power_db: power, sd_db: sd })
}

/// Population standard deviation (no Bessel correction); the spectral
/// flatness gate and the power monitor both use this convention.
pub fn population_sd(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
    var.sqrt()
}
