//! 1 kHz tone analysis: recorded-frequency estimation under clock
//! drift, phase-independent harmonic power by cross-correlation, total
//! harmonic distortion, and gain-curve measurement through a playback
//! chain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{hann_window, SampledSignal};
use crate::sim::{simulate_playback_stream, PlaybackChain};
use crate::spectrum::fft_real;

/// Everything the sine stage extracts from one recording.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToneAnalysis {
    pub nominal_f_hz: f64,
    pub recorded_f_hz: f64,
    /// Linear power at harmonics 1..6 of the recorded frequency.
    /// Harmonics at or above Nyquist are left at zero.
    pub harmonic_powers: [f64; 6],
    pub thd: f64,
    pub out_db: f64,
}

/// One point on the digital-out versus digital-in gain curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainPoint {
    pub in_db: f64,
    pub out_db: f64,
    pub thd: f64,
}

/// Locate the played tone in a recording whose clock may drift
/// relative to the playback clock. Searches the FFT magnitude peak
/// within ±5% of nominal, then refines with parabolic interpolation
/// on the log magnitudes of the peak bin and its neighbors (a raw
/// bin is far too coarse for the drift ratios involved).
pub fn estimate_recorded_frequency(
    recording: &SampledSignal,
    nominal_f_hz: f64,
) -> Result<f64> {
    if recording.duration_sec() < 0.5 {
        return Err(Error::BadSignal(format!(
            "need at least 0.5 s to estimate frequency, got {:.3} s",
            recording.duration_sec()
        )));
    }
    if nominal_f_hz <= 0.0 || nominal_f_hz >= recording.nyquist_hz() {
        return Err(Error::AboveNyquist {
            freq_hz: nominal_f_hz,
            nyquist_hz: recording.nyquist_hz(),
        });
    }
    let n = recording.len();
    let fs = recording.sample_rate_hz;
    let w = hann_window(n)?;
    let windowed: Vec<f64> =
        recording.samples.iter().zip(&w).map(|(x, w)| x * w).collect();
    let spec = fft_real(&windowed);

    let bin = |f: f64| f * n as f64 / fs;
    let k_lo = (bin(0.95 * nominal_f_hz).ceil() as usize).max(1);
    let k_hi = (bin(1.05 * nominal_f_hz).floor() as usize).min(n / 2);
    if k_hi <= k_lo + 1 {
        return Err(Error::ToneNotDetected(format!(
            "search band around {nominal_f_hz} Hz covers too few bins"
        )));
    }
    let mags: Vec<f64> = (k_lo..=k_hi).map(|k| spec[k].norm()).collect();
    let peak_off = mags
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    let mut sorted = mags.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[sorted.len() / 2];
    if mags[peak_off] < 4.0 * median || mags[peak_off] <= 0.0 {
        return Err(Error::ToneNotDetected(format!(
            "no peak above band noise near {nominal_f_hz} Hz"
        )));
    }

    let k = k_lo + peak_off;
    let mut delta = 0.0;
    if k >= 2 && k + 1 <= n / 2 {
        let la = spec[k - 1].norm().max(1e-300).ln();
        let lb = spec[k].norm().max(1e-300).ln();
        let lc = spec[k + 1].norm().max(1e-300).ln();
        let denom = la - 2.0 * lb + lc;
        if denom < 0.0 {
            delta = (0.5 * (la - lc) / denom).clamp(-0.5, 0.5);
        }
    }
    Ok((k as f64 + delta) * fs / n as f64)
}

/// Phase-independent power at harmonic `k` of `f_hz`: correlate the
/// recording against quadrature sinusoids and combine. Normalized so
/// a unit-amplitude sine at k·f yields 1/2, the mean power of that
/// sine. Components at other frequencies cancel over the integration.
pub fn harmonic_power(recording: &SampledSignal, f_hz: f64, k: u32) -> Result<f64> {
    if recording.is_empty() {
        return Err(Error::BadSignal("empty recording".into()));
    }
    let fk = f_hz * k as f64;
    if fk >= recording.nyquist_hz() {
        return Err(Error::AboveNyquist { freq_hz: fk, nyquist_hz: recording.nyquist_hz() });
    }
    let n = recording.len();
    let w = 2.0 * std::f64::consts::PI * fk / recording.sample_rate_hz;
    let mut s = 0.0;
    let mut c = 0.0;
    for (i, &x) in recording.samples.iter().enumerate() {
        let (sin, cos) = (w * i as f64).sin_cos();
        s += x * sin;
        c += x * cos;
    }
    Ok(2.0 * (s * s + c * c) / (n as f64 * n as f64))
}

/// Total harmonic distortion: sqrt of the power in harmonics 2..6
/// relative to the fundamental. Harmonics at or above Nyquist are
/// skipped (all six fit at 48 kHz for a 1 kHz tone).
pub fn thd(recording: &SampledSignal, f_hz: f64) -> Result<f64> {
    let p1 = harmonic_power(recording, f_hz, 1)?;
    let floor = 1e-6 * recording.mean_power();
    if p1 <= floor {
        return Err(Error::ToneNotDetected(format!(
            "fundamental at {f_hz} Hz below detection floor"
        )));
    }
    let mut overtone_power = 0.0;
    for k in 2..=6u32 {
        if f_hz * k as f64 >= recording.nyquist_hz() {
            break;
        }
        overtone_power += harmonic_power(recording, f_hz, k)?;
    }
    Ok((overtone_power / p1).sqrt())
}

/// Full tone analysis of one recording: frequency, harmonic powers,
/// THD, and the output level in dB (a full-scale sine reads 0 dB).
pub fn analyze_tone(recording: &SampledSignal, nominal_f_hz: f64) -> Result<ToneAnalysis> {
    let f = estimate_recorded_frequency(recording, nominal_f_hz)?;
    let mut powers = [0.0f64; 6];
    for (i, p) in powers.iter_mut().enumerate() {
        let k = i as u32 + 1;
        if f * k as f64 >= recording.nyquist_hz() {
            break;
        }
        *p = harmonic_power(recording, f, k)?;
    }
    let floor = 1e-6 * recording.mean_power();
    if powers[0] <= floor {
        return Err(Error::ToneNotDetected(format!(
            "fundamental at {f:.1} Hz below detection floor"
        )));
    }
    let distortion = (powers[1..].iter().sum::<f64>() / powers[0]).sqrt();
    Ok(ToneAnalysis {
        nominal_f_hz,
        recorded_f_hz: f,
        harmonic_powers: powers,
        thd: distortion,
        out_db: 10.0 * (2.0 * powers[0]).log10(),
    })
}

/// One step of the gain sweep: play a 1 s sine at `level_db` on the
/// given noise stream, skip the first 10 ms of the recording to clear
/// filter transients, analyze the next 0.96 s. Returns the raw
/// recording alongside the point so callers can monitor its power.
pub fn measure_gain_point(
    chain: &PlaybackChain,
    level_db: f64,
    freq_hz: f64,
    stream: u64,
) -> Result<(GainPoint, SampledSignal)> {
    let tone = crate::signals::generate_sine(freq_hz, 1.0, level_db, chain.playback_rate_hz())?;
    let recorded = simulate_playback_stream(chain, &tone, stream)?;
    let skip = (0.01 * recorded.sample_rate_hz).round() as usize;
    let take = (0.96 * recorded.sample_rate_hz).round() as usize;
    if recorded.len() < skip + take {
        return Err(Error::BadSignal(format!(
            "recording at {level_db} dB too short for analysis"
        )));
    }
    let segment = SampledSignal::new(
        recorded.samples[skip..skip + take].to_vec(),
        recorded.sample_rate_hz,
    );
    let analysis = analyze_tone(&segment, freq_hz).map_err(|e| match e {
        Error::ToneNotDetected(msg) => {
            Error::ToneNotDetected(format!("at level {level_db} dB: {msg}"))
        }
        other => other,
    })?;
    Ok((GainPoint { in_db: level_db, out_db: analysis.out_db, thd: analysis.thd }, recorded))
}

/// Play a sine at each level through the chain and analyze the
/// recordings, one noise stream per level.
pub fn measure_gain_curve(
    chain: &PlaybackChain,
    levels_db: &[f64],
    freq_hz: f64,
) -> Result<Vec<GainPoint>> {
    if levels_db.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::BadSignal("levels must be sorted ascending".into()));
    }
    if levels_db.iter().any(|&l| l >= 0.0) {
        return Err(Error::BadSignal("levels must be below 0 dB".into()));
    }
    let mut points = Vec::with_capacity(levels_db.len());
    for (i, &level) in levels_db.iter().enumerate() {
        let (point, _) = measure_gain_point(chain, level, freq_hz, i as u64)?;
        points.push(point);
    }
    Ok(points)
}

/// The level grid the calibration session sweeps: -50 to -5 dB in
/// 3 dB steps, plus the -3.1 dB top point.
pub fn standard_gain_levels() -> Vec<f64> {
    let mut v: Vec<f64> = (0..16).map(|i| -50.0 + 3.0 * i as f64).collect();
    v.push(-3.1);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::generate_sine;

    fn sine(f: f64, secs: f64, amp_db: f64) -> SampledSignal {
        generate_sine(f, secs, amp_db, 48000.0).unwrap()
    }

    fn mix(a: &SampledSignal, b: &SampledSignal) -> SampledSignal {
        let samples = a.samples.iter().zip(&b.samples).map(|(x, y)| x + y).collect();
        SampledSignal::new(samples, a.sample_rate_hz)
    }

    #[test]
    fn finds_exact_1khz() {
        let f = estimate_recorded_frequency(&sine(1000.0, 1.0, 0.0), 1000.0).unwrap();
        assert!((f - 1000.0).abs() < 0.05, "f = {f}");
    }

    #[test]
    fn resolves_twenty_millihertz_drift() {
        let f = estimate_recorded_frequency(&sine(1000.02, 1.0, 0.0), 1000.0).unwrap();
        assert!((f - 1000.02).abs() < 0.05, "f = {f}");
    }

    #[test]
    fn tracks_large_resampling_ratios() {
        for r in [1.001, 1.01, 1.04] {
            let f = estimate_recorded_frequency(&sine(1000.0 * r, 1.0, 0.0), 1000.0).unwrap();
            assert!((f - 1000.0 * r).abs() < 0.05, "ratio {r}: f = {f}");
        }
    }

    #[test]
    fn white_noise_is_not_a_tone() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..48000).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let r = estimate_recorded_frequency(&SampledSignal::new(x, 48000.0), 1000.0);
        assert!(matches!(r, Err(Error::ToneNotDetected(_))));
    }

    #[test]
    fn short_recording_rejected() {
        let r = estimate_recorded_frequency(&sine(1000.0, 0.3, 0.0), 1000.0);
        assert!(r.is_err());
    }

    #[test]
    fn unit_sine_power_is_half() {
        let p = harmonic_power(&sine(1000.0, 1.0, 0.0), 1000.0, 1).unwrap();
        assert!((p - 0.5).abs() < 1e-9, "p = {p}");
    }

    #[test]
    fn second_harmonic_of_pure_sine_is_empty() {
        let p = harmonic_power(&sine(1000.0, 1.0, 0.0), 1000.0, 2).unwrap();
        assert!(p < 1e-6, "p = {p}");
    }

    #[test]
    fn harmonic_ratio_tracks_amplitude_ratio() {
        let a = sine(1000.0, 1.0, 0.0);
        let b = sine(2000.0, 1.0, -20.0);
        let both = mix(&a, &b);
        let p1 = harmonic_power(&both, 1000.0, 1).unwrap();
        let p2 = harmonic_power(&both, 1000.0, 2).unwrap();
        assert!((p2 / p1 - 0.01).abs() < 1e-4, "ratio {}", p2 / p1);
    }

    #[test]
    fn power_is_phase_independent() {
        let n = 48000;
        let w = 2.0 * std::f64::consts::PI * 1000.0 / 48000.0;
        let mut reference = None;
        for i in 0..8 {
            let phase = i as f64 * std::f64::consts::PI / 4.0;
            let x: Vec<f64> = (0..n).map(|k| (w * k as f64 + phase).sin()).collect();
            let p = harmonic_power(&SampledSignal::new(x, 48000.0), 1000.0, 1).unwrap();
            match reference {
                None => reference = Some(p),
                Some(r) => assert!((p - r).abs() < 1e-9, "phase {phase}: {p} vs {r}"),
            }
        }
    }

    #[test]
    fn harmonic_above_nyquist_rejected() {
        assert!(harmonic_power(&sine(1000.0, 1.0, 0.0), 9000.0, 3).is_err());
    }

    #[test]
    fn thd_of_pure_sine_is_negligible() {
        let t = thd(&sine(1000.0, 1.0, 0.0), 1000.0).unwrap();
        assert!(t < 1e-5, "thd = {t}");
    }

    #[test]
    fn thd_of_one_percent_second_harmonic() {
        let both = mix(&sine(1000.0, 1.0, 0.0), &sine(2000.0, 1.0, -40.0));
        let t = thd(&both, 1000.0).unwrap();
        assert!((t - 0.01).abs() < 1e-4, "thd = {t}");
    }

    #[test]
    fn thd_invariant_to_amplitude_scaling() {
        let both = mix(&sine(1000.0, 1.0, 0.0), &sine(3000.0, 1.0, -46.0));
        let scaled = SampledSignal::new(
            both.samples.iter().map(|v| v * 0.1).collect(),
            both.sample_rate_hz,
        );
        let t0 = thd(&both, 1000.0).unwrap();
        let t1 = thd(&scaled, 1000.0).unwrap();
        assert!((t0 - t1).abs() < 1e-9, "{t0} vs {t1}");
    }

    #[test]
    fn narrowband_interference_barely_moves_fundamental() {
        let clean = sine(1000.0, 1.0, 0.0);
        let noisy = mix(&clean, &sine(1337.0, 1.0, 0.0));
        let p0 = harmonic_power(&clean, 1000.0, 1).unwrap();
        let p1 = harmonic_power(&noisy, 1000.0, 1).unwrap();
        let delta_db = 10.0 * (p1 / p0).log10();
        assert!(delta_db.abs() < 0.01, "delta {delta_db} dB");
    }

    #[test]
    fn analyze_tone_reports_level_in_db() {
        let a = analyze_tone(&sine(1000.0, 1.0, -34.0), 1000.0).unwrap();
        assert!((a.out_db - -34.0).abs() < 0.01, "out {}", a.out_db);
        assert!((a.recorded_f_hz - 1000.0).abs() < 0.05);
        assert!(a.thd < 1e-5);
        assert!((a.harmonic_powers[0] - 10f64.powf(-34.0 / 10.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn standard_levels_match_sweep_definition() {
        let levels = standard_gain_levels();
        assert_eq!(levels.len(), 17);
        assert_eq!(levels[0], -50.0);
        assert_eq!(levels[15], -5.0);
        assert_eq!(levels[16], -3.1);
        assert!(levels.windows(2).all(|w| w[0] < w[1]));
    }
}
