//! Inverse filtering: magnitude-inverse spectra, the linear-phase
//! inverse impulse response, delay-compensated correction filtering,
//! power-limited bandlimiting, and the flatness quality gate.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mls::ImpulseResponse;
use crate::signals::{hann_window, SampledSignal};
use crate::spectrum::{fft_real, frac_advance, ifft_real, FrequencyResponse};

/// Linear-phase correction filter, normalized to unit gain at the bin
/// nearest 1000 Hz of its own frequency grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InverseImpulseResponse {
    pub taps: Vec<f64>,
    pub sample_rate_hz: f64,
    pub reference_gain_note: String,
}

impl InverseImpulseResponse {
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn response(&self) -> FrequencyResponse {
        FrequencyResponse::from_signal(&self.taps, self.sample_rate_hz)
    }
}

/// A corrected spectrum whose in-band standard deviation exceeds this
/// fails the flatness gate.
pub const FLATNESS_SD_LIMIT_DB: f64 = 3.0;

/// Outcome of the spectral-flatness quality gate on a corrected
/// recording. `per_bin_spectrum_db` holds the noise-subtracted,
/// microphone-discounted in-band levels in ascending frequency order,
/// with `None` marking bins the noise drowned out; `freq_hz` is the
/// parallel array of bin frequencies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlatnessReport {
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    pub sd_db: f64,
    pub passed: bool,
    pub freq_hz: Vec<f64>,
    pub per_bin_spectrum_db: Vec<Option<f64>>,
}

/// Per-bin magnitude inverse 1/|H|, with bins more than 60 dB below
/// the peak taking the inverse of the nearest louder bin instead (an
/// inverse there would just amplify whatever the measurement could
/// not hear), then rescaled to magnitude 1 at the bin nearest 1 kHz.
pub fn inverse_spectrum(h: &FrequencyResponse) -> Result<FrequencyResponse> {
    let n = h.len();
    if n == 0 {
        return Err(Error::AllZero("response spectrum"));
    }
    let mags = h.magnitudes();
    let peak = mags.iter().cloned().fold(0.0f64, f64::max);
    if peak <= 0.0 {
        return Err(Error::AllZero("response spectrum"));
    }
    let floor = peak * 10f64.powf(-60.0 / 20.0);

    // invert on the folded half, mirror afterwards so conjugate
    // symmetry survives regardless of which bins were regularized
    let half = n / 2;
    let mut inv_half = vec![0.0; half + 1];
    for k in 0..=half {
        let src = if mags[k] >= floor {
            k
        } else {
            let mut best = None;
            for j in 0..=half {
                if mags[j] >= floor {
                    let d = j.abs_diff(k);
                    if best.map_or(true, |(bd, _)| d < bd) {
                        best = Some((d, j));
                    }
                }
            }
            best.map(|(_, j)| j).unwrap_or(k)
        };
        inv_half[k] = 1.0 / mags[src];
    }
    let mut inv = vec![0.0; n];
    for k in 0..=half {
        inv[k] = inv_half[k];
        if k > 0 && k < n - k {
            inv[n - k] = inv_half[k];
        }
    }
    let g = inv[h.nearest_bin(1000.0)];
    for v in inv.iter_mut() {
        *v /= g;
    }
    Ok(FrequencyResponse::from_magnitudes(inv, h.sample_rate_hz))
}

/// Build the linear-phase inverse filter for a truncated impulse
/// response: invert the magnitude spectrum, take the zero-phase
/// inverse DFT, shift it so the symmetry center lands mid-window, crop
/// to `iir_duration_sec`, Hann window, and renormalize the 1 kHz gain
/// on the cropped filter's own grid.
pub fn inverse_ir(
    truncated_ir: &ImpulseResponse,
    iir_duration_sec: f64,
) -> Result<InverseImpulseResponse> {
    let fs = truncated_ir.sample_rate_hz;
    let l1 = truncated_ir.len();
    let l2 = (iir_duration_sec * fs).round() as usize;
    if l2 == 0 {
        return Err(Error::BadSignal("filter duration rounds to zero samples".into()));
    }
    if l2 > l1 {
        return Err(Error::DurationTooLong { duration_sec: iir_duration_sec });
    }
    let inv = inverse_spectrum(&truncated_ir.response())?;
    let zp = ifft_real(&inv.bins);
    // advancing by -(L2-1)/2 puts the zero-phase center exactly at the
    // crop window's midpoint, half-sample positions included, so the
    // result is an exact palindrome
    let shifted = frac_advance(&zp, -((l2 as f64 - 1.0) / 2.0));
    let w = hann_window(l2)?;
    let mut taps: Vec<f64> = shifted[..l2].iter().zip(&w).map(|(v, wv)| v * wv).collect();

    let resp = FrequencyResponse::from_signal(&taps, fs);
    let g = resp.magnitude(resp.nearest_bin(1000.0));
    if g <= 0.0 {
        return Err(Error::AllZero("inverse filter at 1 kHz"));
    }
    for t in taps.iter_mut() {
        *t /= g;
    }
    Ok(InverseImpulseResponse {
        taps,
        sample_rate_hz: fs,
        reference_gain_note: "gain normalized to 1 at 1000 Hz".into(),
    })
}

/// Correct a signal by convolving it with the inverse filter and
/// compensating the filter's group delay: of the full N + L - 1
/// convolution, the first (L-1)/2 samples are dropped and the next N
/// kept, so the output lines up with the input.
pub fn apply_correction(input: &SampledSignal, iir: &InverseImpulseResponse) -> SampledSignal {
    let n = input.len();
    let l = iir.len();
    if n == 0 || l == 0 {
        return input.clone();
    }
    let full = n + l - 1;
    let m = full.next_power_of_two();
    let mut a = input.samples.clone();
    a.resize(m, 0.0);
    let mut b = iir.taps.clone();
    b.resize(m, 0.0);
    let mut fa = fft_real(&a);
    let fb = fft_real(&b);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    let conv = ifft_real(&fa);
    let delay = (l - 1) / 2;
    SampledSignal::new(conv[delay..delay + n].to_vec(), input.sample_rate_hz)
}

/// Zero the spectrum below `min_hz`, then keep the widest passband up
/// to `max_hz` whose total power stays within `power_limit_db`.
/// Returns the bandlimited signal and the chosen cutoff frequency.
pub fn bandlimit_filtered_mls(
    filtered: &SampledSignal,
    min_hz: f64,
    power_limit_db: f64,
    max_hz: f64,
) -> Result<(SampledSignal, f64)> {
    let n = filtered.len();
    let fs = filtered.sample_rate_hz;
    if n == 0 {
        return Err(Error::BadSignal("empty signal".into()));
    }
    if !(min_hz < max_hz && max_hz <= fs / 2.0) {
        return Err(Error::BadSignal(format!(
            "band {min_hz}..{max_hz} Hz does not fit below Nyquist {}",
            fs / 2.0
        )));
    }
    let spec = fft_real(&filtered.samples);
    let limit = 10f64.powf(power_limit_db / 10.0);
    let freq = |k: usize| k as f64 * fs / n as f64;

    // mean-square power of each folded bin (both spectral halves)
    let bin_power = |k: usize| {
        let p = spec[k].norm_sqr() / (n as f64 * n as f64);
        if k > 0 && k != n - k {
            2.0 * p
        } else {
            p
        }
    };

    let mut cum = 0.0;
    let mut cutoff_hz = max_hz;
    let mut any_in_band = false;
    for k in 0..=n / 2 {
        let f = freq(k);
        if f < min_hz {
            continue;
        }
        if f > max_hz {
            break;
        }
        let p = bin_power(k);
        if cum + p > limit {
            if !any_in_band {
                return Err(Error::PowerLimitUnsatisfiable {
                    limit_db: power_limit_db,
                    found_db: 10.0 * p.log10(),
                });
            }
            cutoff_hz = freq(k - 1);
            break;
        }
        cum += p;
        any_in_band = true;
    }
    if !any_in_band {
        return Err(Error::BadSignal(format!(
            "no spectral bins between {min_hz} and {max_hz} Hz"
        )));
    }

    let mut out = spec;
    for (k, v) in out.iter_mut().enumerate() {
        let f = crate::spectrum::bin_freq_folded(k, n, fs);
        if f < min_hz || f > cutoff_hz {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    Ok((SampledSignal::new(ifft_real(&out), fs), cutoff_hz))
}

/// Spectral-flatness gate: per-bin noise power (averaged over as many
/// whole chunks of the noise recording as fit) is subtracted from the
/// recording's power spectrum in linear units, bins the noise drowns
/// out are excluded, the microphone's own response is discounted, and
/// the standard deviation in dB over the remaining in-band bins
/// decides the verdict. Bins are the FFT's linearly spaced ones, so
/// high octaves weigh in proportionally to their bandwidth.
pub fn assess_flatness(
    recording: &SampledSignal,
    noise_recording: &SampledSignal,
    mic_response: &FrequencyResponse,
    band_lo: f64,
    band_hi: f64,
) -> Result<FlatnessReport> {
    let n = recording.len();
    let fs = recording.sample_rate_hz;
    if n == 0 {
        return Err(Error::BadSignal("empty recording".into()));
    }
    if !(0.0 < band_lo && band_lo < band_hi && band_hi <= fs / 2.0) {
        return Err(Error::BadSignal(format!(
            "flatness band {band_lo}..{band_hi} Hz does not fit below Nyquist {}",
            fs / 2.0
        )));
    }
    if mic_response.len() != n || mic_response.sample_rate_hz != fs {
        return Err(Error::GridMismatch);
    }
    let chunks = noise_recording.len() / n;
    if chunks == 0 {
        return Err(Error::LengthMismatch { expected: n, got: noise_recording.len() });
    }

    let nn = n as f64 * n as f64;
    let spec = fft_real(&recording.samples);
    let mut noise_power = vec![0.0; n];
    for c in 0..chunks {
        let cs = fft_real(&noise_recording.samples[c * n..(c + 1) * n]);
        for (acc, v) in noise_power.iter_mut().zip(&cs) {
            *acc += v.norm_sqr() / nn / chunks as f64;
        }
    }

    let mut per_bin = Vec::new();
    let mut freqs = Vec::new();
    let mut included = Vec::new();
    let mut excluded = 0usize;
    for k in 1..=n / 2 {
        let f = k as f64 * fs / n as f64;
        if f < band_lo || f > band_hi {
            continue;
        }
        freqs.push(f);
        let signal = spec[k].norm_sqr() / nn;
        let diff = signal - noise_power[k];
        let mic = mic_response.magnitude(k);
        if diff <= 0.0 || mic <= 0.0 {
            per_bin.push(None);
            excluded += 1;
        } else {
            let level = 10.0 * diff.log10() - 20.0 * mic.log10();
            per_bin.push(Some(level));
            included.push(level);
        }
    }
    let total = per_bin.len();
    if total == 0 {
        return Err(Error::BadSignal("no spectral bins inside the flatness band".into()));
    }
    if 2 * excluded > total {
        return Err(Error::NoiseDominates { excluded, total });
    }
    let sd_db = crate::signals::population_sd(&included);
    Ok(FlatnessReport {
        band_lo_hz: band_lo,
        band_hi_hz: band_hi,
        sd_db,
        passed: sd_db <= FLATNESS_SD_LIMIT_DB,
        freq_hz: freqs,
        per_bin_spectrum_db: per_bin,
    })
}
