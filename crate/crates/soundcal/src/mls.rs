//! Nonsynchronous MLS measurement: playback layout, period estimation
//! from the recording's autocorrelation, DFT-domain resampling onto
//! the nominal grid, impulse-response extraction by circular
//! cross-correlation, parent discounting, truncation, and Schroeder
//! decay curves.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{hann_window, linear_autocorrelation, SampledSignal};
use crate::spectrum::{fft_real, frac_advance, ifft_real, FrequencyResponse};

/// How one MLS measurement is laid out in time: a warmup period the
/// analysis ignores, the analyzed periods, and a 10% tail so the
/// recording never ends mid-period even when the clocks disagree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlaybackLayout {
    pub warmup_periods: usize,
    pub analysis_periods: usize,
    pub tail_fraction: f64,
    pub period_samples: usize,
}

impl PlaybackLayout {
    pub fn new(analysis_periods: usize, period_samples: usize) -> Result<Self> {
        if analysis_periods < 2 {
            return Err(Error::BadSignal("need at least 2 analysis periods".into()));
        }
        Ok(Self { warmup_periods: 1, analysis_periods, tail_fraction: 0.10, period_samples })
    }

    pub fn total_samples(&self) -> usize {
        (self.warmup_periods + self.analysis_periods) * self.period_samples
            + (self.tail_fraction * self.period_samples as f64).ceil() as usize
    }
}

/// A measured impulse response.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImpulseResponse {
    pub taps: Vec<f64>,
    pub sample_rate_hz: f64,
    pub peak_index: usize,
}

impl ImpulseResponse {
    pub fn new(taps: Vec<f64>, sample_rate_hz: f64) -> Self {
        let peak_index = argmax_abs(&taps);
        Self { taps, sample_rate_hz, peak_index }
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn duration_sec(&self) -> f64 {
        self.taps.len() as f64 / self.sample_rate_hz
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|v| v * v).sum()
    }

    /// Frequency response of the response, on its own length as grid.
    pub fn response(&self) -> FrequencyResponse {
        FrequencyResponse::from_signal(&self.taps, self.sample_rate_hz)
    }
}

fn argmax_abs(taps: &[f64]) -> usize {
    taps.iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Reverse-time cumulative power of an impulse response, normalized
/// to 0 dB at time zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchroederCurve {
    pub times_sec: Vec<f64>,
    pub level_db: Vec<f64>,
}

/// Concatenate warmup periods, analysis periods, and the 10% tail into
/// one gapless playback signal.
pub fn build_playback(mls_period: &SampledSignal, layout: &PlaybackLayout) -> Result<SampledSignal> {
    if mls_period.len() != layout.period_samples {
        return Err(Error::LengthMismatch {
            expected: layout.period_samples,
            got: mls_period.len(),
        });
    }
    if layout.analysis_periods < 2 {
        return Err(Error::BadSignal("need at least 2 analysis periods".into()));
    }
    let tail = (layout.tail_fraction * layout.period_samples as f64).ceil() as usize;
    let mut samples = Vec::with_capacity(layout.total_samples());
    for _ in 0..layout.warmup_periods + layout.analysis_periods {
        samples.extend_from_slice(&mls_period.samples);
    }
    samples.extend_from_slice(&mls_period.samples[..tail]);
    Ok(SampledSignal::new(samples, mls_period.sample_rate_hz))
}

fn parabolic_peak(r: &[f64], k: usize) -> f64 {
    if k == 0 || k + 1 >= r.len() {
        return k as f64;
    }
    let denom = r[k - 1] - 2.0 * r[k] + r[k + 1];
    if denom == 0.0 {
        return k as f64;
    }
    let d = (0.5 * (r[k - 1] - r[k + 1]) / denom).clamp(-0.5, 0.5);
    k as f64 + d
}

/// Measure the true repeat period of a periodic recording, in
/// fractional samples, from its autocorrelation peaks.
///
/// A coarse stage first finds the fundamental repeat lag anywhere in
/// [0.2, 4.5] x nominal, so the caller's nominal may be wrong by the
/// whole clock-ratio range. The refine stage then walks multiples of
/// that lag, parabolic-refines each peak, and fits the period as
/// (furthest - first) / multiples-spanned, which is what gives the
/// estimate its precision.
pub fn estimate_period(recording: &SampledSignal, nominal_period: usize) -> Result<f64> {
    let l = recording.len();
    if nominal_period < 16 {
        return Err(Error::BadSignal("nominal period too short".into()));
    }
    if l < 3 * nominal_period {
        return Err(Error::PeriodNotDetected(format!(
            "recording ({l} samples) holds fewer than 3 nominal periods"
        )));
    }
    let r = linear_autocorrelation(recording)?;
    let r0 = r[0];
    if r0 <= 0.0 {
        return Err(Error::PeriodNotDetected("recording is silent".into()));
    }

    // coarse: smallest local max within 10% of the range's global max.
    // The 10% slack matters because peak heights decay with lag, and
    // picking a multiple of the period instead of the period itself
    // would go unnoticed here but poison the refine stage.
    let lo = ((0.2 * nominal_period as f64).round() as usize).max(16);
    let hi = ((4.5 * nominal_period as f64).round() as usize).min(l / 2);
    if hi <= lo + 1 {
        return Err(Error::PeriodNotDetected("recording too short to search".into()));
    }
    let global = r[lo..=hi].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut coarse = None;
    for k in lo..=hi {
        if r[k] >= 0.9 * global && r[k] >= r[k - 1] && r[k] >= r[k + 1] {
            coarse = Some(parabolic_peak(&r, k));
            break;
        }
    }
    let c = coarse.ok_or_else(|| {
        Error::PeriodNotDetected("no repeat structure in the autocorrelation".into())
    })?;
    if r[c.round() as usize] < 0.1 * r0 {
        return Err(Error::PeriodNotDetected(
            "autocorrelation repeat peak is buried in noise".into(),
        ));
    }

    // refine: collect peaks at multiples of the coarse lag
    let mut peaks: Vec<(usize, f64)> = Vec::new();
    for m in 1..=64usize {
        let lag = m as f64 * c;
        let overlap = 1.0 - lag / l as f64;
        if overlap < 0.1 {
            break;
        }
        let half = (0.005 * lag).round().max(3.0);
        let w_lo = (lag - half).floor() as usize;
        let w_hi = (lag + half).ceil() as usize;
        if w_hi + 1 >= l {
            break;
        }
        let k = (w_lo..=w_hi)
            .max_by(|&a, &b| r[a].partial_cmp(&r[b]).unwrap())
            .unwrap();
        if r[k] >= 0.4 * overlap * r0 && k > 0 && k + 1 < l {
            peaks.push((m, parabolic_peak(&r, k)));
        }
    }
    if peaks.len() < 2 {
        return Err(Error::PeriodNotDetected(format!(
            "only {} autocorrelation peaks above threshold",
            peaks.len()
        )));
    }
    let (m_first, p_first) = peaks[0];
    let (m_last, p_last) = peaks[peaks.len() - 1];
    Ok((p_last - p_first) / (m_last - m_first) as f64)
}

/// Stretch or squeeze a spectrum onto a new length by padding or
/// truncating at the Nyquist end, preserving conjugate symmetry, with
/// amplitude rescaled so sinusoid amplitudes survive.
fn dft_stretch(x: &[f64], target_len: usize) -> Vec<f64> {
    let s = x.len();
    let t = target_len;
    if s == t {
        return x.to_vec();
    }
    let xs = fft_real(x);
    let mut y = vec![Complex64::new(0.0, 0.0); t];
    let keep = s.min(t);
    let half = keep / 2;
    y[..half].copy_from_slice(&xs[..half]);
    for k in 1..half {
        y[t - k] = xs[s - k];
    }
    if keep % 2 == 0 {
        if t > s {
            // the source Nyquist bin splits across the two target bins
            y[half] = xs[half] * 0.5;
            y[t - half] = xs[half] * 0.5;
        } else {
            // the two source bins alias onto the target Nyquist bin
            y[half] = xs[half] + xs[s - half];
        }
    } else {
        y[half] = xs[half];
        if half > 0 {
            y[t - half] = xs[s - half];
        }
    }
    let scale = t as f64 / s as f64;
    ifft_real(&y).into_iter().map(|v| v * scale).collect()
}

/// Resample a recorded analysis segment onto the nominal sample grid.
///
/// The segment length is the rounding of analysis_periods x the
/// measured (fractional) period; that rounding leaves each stretched
/// period drifted by a constant sub-sample offset relative to the
/// first, so after stretching, fold k is advanced by k x delta to line
/// the periods up exactly.
pub fn resample_to_period(
    segment: &SampledSignal,
    measured_period: f64,
    target_len: usize,
) -> Result<SampledSignal> {
    let s = segment.len();
    if s == 0 || target_len == 0 {
        return Err(Error::BadSignal("empty resample request".into()));
    }
    if !measured_period.is_finite() || measured_period <= 1.0 {
        return Err(Error::BadSignal(format!("invalid measured period {measured_period}")));
    }
    let ratio = target_len as f64 / s as f64;
    if !(0.25..=4.0).contains(&ratio) {
        return Err(Error::RatioOutOfRange(ratio));
    }
    let mut y = dft_stretch(&segment.samples, target_len);

    let a = (s as f64 / measured_period).round() as usize;
    if a >= 2 && target_len % a == 0 {
        let pt = target_len / a;
        let delta = pt as f64 * (a as f64 * measured_period - s as f64) / s as f64;
        if delta.abs() > 1e-9 {
            for k in 1..a {
                let advanced = frac_advance(&y[k * pt..(k + 1) * pt], k as f64 * delta);
                y[k * pt..(k + 1) * pt].copy_from_slice(&advanced);
            }
        }
    }
    Ok(SampledSignal::new(y, segment.sample_rate_hz))
}

/// Average a recording of whole repeated periods down to one period.
/// Periodic content survives untouched; uncorrelated noise power drops
/// by the number of periods folded.
pub fn fold_periods(recorded: &SampledSignal, periods: usize) -> Result<SampledSignal> {
    if periods == 0 || recorded.is_empty() || recorded.len() % periods != 0 {
        return Err(Error::BadSignal(format!(
            "cannot fold {} samples into {periods} periods",
            recorded.len()
        )));
    }
    let p = recorded.len() / periods;
    let mut folded = vec![0.0; p];
    for a in 0..periods {
        for (f, v) in folded.iter_mut().zip(&recorded.samples[a * p..(a + 1) * p]) {
            *f += v;
        }
    }
    let inv = 1.0 / periods as f64;
    for f in folded.iter_mut() {
        *f *= inv;
    }
    Ok(SampledSignal::new(folded, recorded.sample_rate_hz))
}

/// Impulse response by circular cross-correlation with the original
/// MLS: the analysis periods are folded (averaged) into one period,
/// then IR = IFFT(FFT(folded) x conj(FFT(mls))) / sum(mls^2), so an
/// identity chain yields a unit tap at zero.
pub fn impulse_response(
    recorded: &SampledSignal,
    mls: &SampledSignal,
    analysis_periods: usize,
) -> Result<ImpulseResponse> {
    let p = mls.len();
    if p == 0 || analysis_periods == 0 {
        return Err(Error::BadSignal("empty impulse-response request".into()));
    }
    if recorded.len() != analysis_periods * p {
        return Err(Error::LengthMismatch {
            expected: analysis_periods * p,
            got: recorded.len(),
        });
    }
    let mls_energy: f64 = mls.samples.iter().map(|v| v * v).sum();
    if mls_energy <= 0.0 {
        return Err(Error::AllZero("mls reference"));
    }
    let folded = fold_periods(recorded, analysis_periods)?;
    let mut spec = fft_real(&folded.samples);
    let mref = fft_real(&mls.samples);
    for (y, x) in spec.iter_mut().zip(&mref) {
        *y *= x.conj();
    }
    let taps: Vec<f64> = ifft_real(&spec).into_iter().map(|v| v / mls_energy).collect();
    Ok(ImpulseResponse::new(taps, recorded.sample_rate_hz))
}

/// Remove a known parent response from a measured system response,
/// magnitude-only. Parent bins more than 60 dB below the parent's
/// peak are floored so silent bins do not explode.
pub fn discount_parent(
    system: &FrequencyResponse,
    parent: &FrequencyResponse,
) -> Result<FrequencyResponse> {
    system.require_same_grid(parent)?;
    let parent_mags = parent.magnitudes();
    let peak = parent_mags.iter().cloned().fold(0.0f64, f64::max);
    if peak <= 0.0 {
        return Err(Error::AllZero("parent response"));
    }
    let eps = peak * 10f64.powf(-60.0 / 20.0);
    let mags: Vec<f64> = system
        .bins
        .iter()
        .zip(&parent_mags)
        .map(|(s, p)| s.norm() / p.max(eps))
        .collect();
    Ok(FrequencyResponse::from_magnitudes(mags, system.sample_rate_hz))
}

pub(crate) fn zero_phase_crop(mags: &[f64], out_len: usize) -> Result<Vec<f64>> {
    let l = mags.len();
    if out_len == 0 || out_len > l {
        return Err(Error::BadSignal(format!(
            "cannot crop a {l}-bin spectrum to {out_len} samples"
        )));
    }
    let bins: Vec<Complex64> = mags.iter().map(|&m| Complex64::new(m, 0.0)).collect();
    let zp = ifft_real(&bins);
    let c = out_len / 2;
    let w = hann_window(out_len)?;
    Ok((0..out_len).map(|i| zp[(i + l - c) % l] * w[i]).collect())
}

/// Keep `duration_sec` of the impulse response: rebuild it zero-phase
/// from its magnitude spectrum, center the energy, crop, and Hann
/// window. Discards true phase by design; everything downstream works
/// on magnitudes.
pub fn truncate_ir(ir: &ImpulseResponse, duration_sec: f64) -> Result<ImpulseResponse> {
    let out_len = (duration_sec * ir.sample_rate_hz).round() as usize;
    if out_len > ir.len() {
        return Err(Error::DurationTooLong { duration_sec });
    }
    if out_len == 0 {
        return Err(Error::BadSignal("truncation duration rounds to zero samples".into()));
    }
    let mags: Vec<f64> = ir.response().magnitudes();
    let taps = zero_phase_crop(&mags, out_len)?;
    Ok(ImpulseResponse::new(taps, ir.sample_rate_hz))
}

/// Reverse-time cumulative power curve. The value at time t is the
/// fraction of total IR energy arriving at or after t, in dB.
pub fn schroeder_curve(ir: &ImpulseResponse) -> Result<SchroederCurve> {
    if ir.is_empty() {
        return Err(Error::AllZero("impulse response"));
    }
    let n = ir.len();
    let mut tail = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        acc += ir.taps[t] * ir.taps[t];
        tail[t] = acc;
    }
    let total = tail[0];
    if total <= 0.0 {
        return Err(Error::AllZero("impulse response"));
    }
    let level_db = tail
        .into_iter()
        .map(|e| if e > 0.0 { 10.0 * (e / total).log10() } else { f64::NEG_INFINITY })
        .collect();
    let times_sec = (0..n).map(|t| t as f64 / ir.sample_rate_hz).collect();
    Ok(SchroederCurve { times_sec, level_db })
}

/// Reverberation time implied by the Schroeder curve: least-squares
/// slope over the stretch between the two levels, extrapolated to
/// -60 dB. None when the curve never reaches the fit range.
pub fn rt60_from_curve(curve: &SchroederCurve, fit_hi_db: f64, fit_lo_db: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = curve
        .times_sec
        .iter()
        .zip(&curve.level_db)
        .filter(|(_, &l)| l.is_finite() && l <= fit_hi_db && l >= fit_lo_db)
        .map(|(&t, &l)| (t, l))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if den <= 0.0 {
        return None;
    }
    let slope = num / den;
    if slope >= 0.0 {
        return None;
    }
    Some(-60.0 / slope)
}
