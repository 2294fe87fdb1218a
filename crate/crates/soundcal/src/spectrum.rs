//! FFT plumbing shared by the whole crate, plus the [`FrequencyResponse`]
//! type that carries per-bin complex gain between the measurement,
//! correction, and profile modules.
//!
//! Conventions follow the usual DFT pair: `fft` is unnormalized,
//! `ifft` divides by N, so `ifft(fft(x)) == x`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

thread_local! {
    static PLANS: RefCell<PlanCache> = RefCell::new(PlanCache {
        planner: FftPlanner::new(),
        forward: HashMap::new(),
        inverse: HashMap::new(),
    });
}

struct PlanCache {
    planner: FftPlanner<f64>,
    forward: HashMap<usize, Arc<dyn Fft<f64>>>,
    inverse: HashMap<usize, Arc<dyn Fft<f64>>>,
}

pub fn fft(buf: &mut [Complex64]) {
    let n = buf.len();
    let plan = PLANS.with(|p| {
        let mut p = p.borrow_mut();
        let PlanCache { planner, forward, .. } = &mut *p;
        forward
            .entry(n)
            .or_insert_with(|| planner.plan_fft_forward(n))
            .clone()
    });
    plan.process(buf);
}

pub fn ifft(buf: &mut [Complex64]) {
    let n = buf.len();
    let plan = PLANS.with(|p| {
        let mut p = p.borrow_mut();
        let PlanCache { planner, inverse, .. } = &mut *p;
        inverse
            .entry(n)
            .or_insert_with(|| planner.plan_fft_inverse(n))
            .clone()
    });
    plan.process(buf);
    let scale = 1.0 / n as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// Forward DFT of a real signal, full (two-sided) spectrum.
pub fn fft_real(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft(&mut buf);
    buf
}

/// Inverse DFT, returning only the real part.
pub fn ifft_real(spectrum: &[Complex64]) -> Vec<f64> {
    let mut buf = spectrum.to_vec();
    ifft(&mut buf);
    buf.into_iter().map(|v| v.re).collect()
}

/// Frequency of bin `k` on an `n`-point grid, folded onto [0, fs/2].
pub fn bin_freq_folded(k: usize, n: usize, sample_rate_hz: f64) -> f64 {
    let f = k as f64 * sample_rate_hz / n as f64;
    f.min(sample_rate_hz - f)
}

/// Circular fractional advance: x(t) -> x(t + shift) via a DFT phase
/// ramp. The Nyquist bin of an even-length signal has no usable phase,
/// so it is kept real and attenuated by cos(pi * shift), which also
/// zeroes it exactly for half-sample shifts.
pub fn frac_advance(x: &[f64], shift: f64) -> Vec<f64> {
    let n = x.len();
    if n == 0 || shift == 0.0 {
        return x.to_vec();
    }
    let mut spec = fft_real(x);
    let step = 2.0 * std::f64::consts::PI * shift / n as f64;
    let nyquist = if n % 2 == 0 { Some(spec[n / 2].re) } else { None };
    for (k, v) in spec.iter_mut().enumerate() {
        let signed = if k < n.div_ceil(2) { k as f64 } else { k as f64 - n as f64 };
        *v *= Complex64::from_polar(1.0, step * signed);
    }
    if let Some(re) = nyquist {
        spec[n / 2] = Complex64::new(re * (std::f64::consts::PI * shift).cos(), 0.0);
    }
    ifft_real(&spec)
}

/// Complex gain per FFT bin at a fixed sample rate. Bin `k` sits at
/// `k * sample_rate_hz / len()` Hz; the upper half mirrors the lower
/// half for responses derived from real signals.
#[derive(Debug, Clone)]
pub struct FrequencyResponse {
    pub bins: Vec<Complex64>,
    pub sample_rate_hz: f64,
}

impl FrequencyResponse {
    pub fn new(bins: Vec<Complex64>, sample_rate_hz: f64) -> Self {
        Self { bins, sample_rate_hz }
    }

    /// Spectrum of a real impulse response or signal.
    pub fn from_signal(samples: &[f64], sample_rate_hz: f64) -> Self {
        Self::new(fft_real(samples), sample_rate_hz)
    }

    /// Magnitude-only response (zero phase) from per-bin magnitudes.
    pub fn from_magnitudes(mags: Vec<f64>, sample_rate_hz: f64) -> Self {
        Self::new(
            mags.into_iter().map(|m| Complex64::new(m, 0.0)).collect(),
            sample_rate_hz,
        )
    }

    /// A flat unity-gain response on an `n`-bin grid.
    pub fn flat(n: usize, sample_rate_hz: f64) -> Self {
        Self::from_magnitudes(vec![1.0; n], sample_rate_hz)
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn magnitude(&self, k: usize) -> f64 {
        self.bins[k].norm()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.norm()).collect()
    }

    /// Per-bin power in dB; zero-magnitude bins come out as -inf, the
    /// sentinel every consumer is expected to exclude from statistics.
    pub fn power_db(&self) -> Vec<f64> {
        self.bins
            .iter()
            .map(|b| {
                let p = b.norm_sqr();
                if p > 0.0 {
                    10.0 * p.log10()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect()
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate_hz / self.bins.len() as f64
    }

    /// Index of the bin nearest `freq_hz` (searching positive frequencies).
    pub fn nearest_bin(&self, freq_hz: f64) -> usize {
        let k = (freq_hz / self.bin_hz()).round() as usize;
        k.min(self.bins.len() / 2)
    }

    pub fn freq_of_bin(&self, k: usize) -> f64 {
        k as f64 * self.bin_hz()
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.bins.len() == other.bins.len()
            && (self.sample_rate_hz - other.sample_rate_hz).abs()
                < 1e-9 * self.sample_rate_hz.max(1.0)
    }

    /// Time-domain reconstruction (real part of the inverse DFT).
    pub fn to_signal(&self) -> Vec<f64> {
        ifft_real(&self.bins)
    }

    pub fn require_same_grid(&self, other: &Self) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}
