//! The automatic calibration session: gain sweep, compression fit,
//! MLS impulse-response measurement, inverse-filter construction, and
//! the corrected-playback verification, all run against a simulated
//! chain. The result is one self-contained [`SessionReport`].

use chrono::{Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::correction::{
    apply_correction, assess_flatness, bandlimit_filtered_mls, inverse_ir, FlatnessReport,
    InverseImpulseResponse, FLATNESS_SD_LIMIT_DB,
};
use crate::drc::{fit_drc, DrcFit, RMS_LIMIT_DB};
use crate::error::{Error, Result};
use crate::mls::{
    build_playback, discount_parent, estimate_period, fold_periods, impulse_response,
    resample_to_period, rt60_from_curve, schroeder_curve, truncate_ir, ImpulseResponse,
    PlaybackLayout, SchroederCurve,
};
use crate::profiles::ProfileResponse;
use crate::signals::{
    generate_mls, order_for_duration, power_over_time, MlsSpec, SampledSignal,
};
use crate::sim::{simulate_playback_stream, PlaybackChain};
use crate::spectrum::{fft_real, FrequencyResponse};
use crate::tone::{measure_gain_point, standard_gain_levels, GainPoint};

/// Bumped whenever the report's JSON shape changes.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Window length for the per-recording power monitor.
const POWER_WINDOW_SEC: f64 = 0.1;

/// A recording whose windowed power wanders by more than this SD is
/// flagged as wild. Informational only; it gates nothing.
const POWER_WILD_SD_DB: f64 = 10.0;

/// Noise streams: one per gain-sweep level (0..=16), then the MLS
/// pass, the corrected check, and the silent background recording.
const STREAM_MLS: u64 = 17;
const STREAM_CHECK: u64 = 18;
const STREAM_NOISE: u64 = 19;

/// Session parameters under their external config-file names. The
/// config file is flat `key = value` text using exactly these keys;
/// `#` lines and blank lines are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Requested duration of one MLS period; the log-nearest order is
    /// used.
    #[serde(rename = "_calibrateSoundBurstSec")]
    pub burst_sec: f64,
    /// MLS periods averaged in the analysis (one more is played as
    /// warmup).
    #[serde(rename = "_calibrateSoundBurstRepeats")]
    pub burst_repeats: usize,
    /// MLS amplitude in dB re full scale, or re the fitted compression
    /// threshold T when `level_re_t` is set.
    #[serde(rename = "_calibrateSoundBurstDb")]
    pub burst_db: f64,
    /// Length the measured impulse response is cut to.
    #[serde(rename = "_calibrateSoundIRSec")]
    pub ir_sec: f64,
    /// Length of the inverse (correction) filter.
    #[serde(rename = "_calibrateSoundIIRSec")]
    pub iir_sec: f64,
    /// Lower edge of the corrected band.
    #[serde(rename = "calibrateSoundMinHz")]
    pub min_hz: f64,
    /// Upper cap on the corrected band; the power limit usually cuts
    /// off below it.
    #[serde(rename = "calibrateSoundMaxHz")]
    pub max_hz: f64,
    /// Power headroom granted to the filtered MLS over its unfiltered
    /// level; the bandlimit search keeps total power within
    /// `burst_db + filtered_extra_db`.
    #[serde(rename = "calibrateSoundBurstFilteredExtraDb")]
    pub filtered_extra_db: f64,
    /// Interpret `burst_db` relative to the fitted threshold T.
    #[serde(rename = "calibrateSoundBurstLevelReTBool")]
    pub level_re_t: bool,
    /// Requested sampling rate. The chain's own rate wins; this is
    /// echoed in the report so a mismatch is visible.
    #[serde(rename = "_calibrateSoundSamplingDesiredHz")]
    pub sampling_hz: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            burst_sec: 1.0,
            burst_repeats: 4,
            burst_db: -34.0,
            ir_sec: 0.2,
            iir_sec: 0.2,
            min_hz: 100.0,
            max_hz: 20000.0,
            filtered_extra_db: 5.0,
            level_re_t: false,
            sampling_hz: 48000.0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value for {key}: '{value}'")))
}

fn parse_flag(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("bad value for {key}: '{value}'"))),
    }
}

impl SessionConfig {
    /// Parse flat `key = value` config text. Every key is optional
    /// and defaults apply; an unknown key is an error naming it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key = value, got '{line}'",
                    idx + 1
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "_calibrateSoundBurstSec" => cfg.burst_sec = parse_num(key, value)?,
                "_calibrateSoundBurstRepeats" => cfg.burst_repeats = parse_num(key, value)?,
                "_calibrateSoundBurstDb" => cfg.burst_db = parse_num(key, value)?,
                "_calibrateSoundIRSec" => cfg.ir_sec = parse_num(key, value)?,
                "_calibrateSoundIIRSec" => cfg.iir_sec = parse_num(key, value)?,
                "calibrateSoundMinHz" => cfg.min_hz = parse_num(key, value)?,
                "calibrateSoundMaxHz" => cfg.max_hz = parse_num(key, value)?,
                "calibrateSoundBurstFilteredExtraDb" => {
                    cfg.filtered_extra_db = parse_num(key, value)?
                }
                "calibrateSoundBurstLevelReTBool" => cfg.level_re_t = parse_flag(key, value)?,
                "_calibrateSoundSamplingDesiredHz" => cfg.sampling_hz = parse_num(key, value)?,
                other => {
                    return Err(Error::Config(format!("unknown config key '{other}'")));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("_calibrateSoundBurstSec", self.burst_sec),
            ("_calibrateSoundIRSec", self.ir_sec),
            ("_calibrateSoundIIRSec", self.iir_sec),
            ("calibrateSoundMinHz", self.min_hz),
            ("_calibrateSoundSamplingDesiredHz", self.sampling_hz),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{key} must be positive, got {v}")));
            }
        }
        if !self.burst_db.is_finite() || !self.filtered_extra_db.is_finite() {
            return Err(Error::Config("burst levels must be finite".into()));
        }
        if self.burst_repeats < 2 {
            return Err(Error::Config(format!(
                "_calibrateSoundBurstRepeats must be at least 2, got {}",
                self.burst_repeats
            )));
        }
        if !(self.max_hz.is_finite() && self.max_hz > self.min_hz) {
            return Err(Error::Config(format!(
                "calibrateSoundMaxHz ({}) must exceed calibrateSoundMinHz ({})",
                self.max_hz, self.min_hz
            )));
        }
        if self.max_hz > self.sampling_hz / 2.0 {
            return Err(Error::Config(format!(
                "calibrateSoundMaxHz ({}) is above the Nyquist frequency {}",
                self.max_hz,
                self.sampling_hz / 2.0
            )));
        }
        Ok(())
    }
}

/// Verdict of one quality gate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateStatus {
    pub passed: bool,
    pub measured_db: f64,
    pub limit_db: f64,
}

/// Both gates; `None` means the pipeline was rejected before reaching
/// that gate.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SessionGates {
    pub drc_fit: Option<GateStatus>,
    pub flatness: Option<GateStatus>,
}

/// Reverse-time integrated decay in report form: silent tails are
/// `None` instead of a log of zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchroederData {
    pub times_sec: Vec<f64>,
    pub level_db: Vec<Option<f64>>,
    pub rt60_sec: Option<f64>,
}

impl SchroederData {
    fn from_curve(curve: &SchroederCurve) -> Self {
        Self {
            times_sec: curve.times_sec.clone(),
            level_db: curve
                .level_db
                .iter()
                .map(|&v| if v.is_finite() { Some(v) } else { None })
                .collect(),
            rt60_sec: rt60_from_curve(curve, -5.0, -25.0),
        }
    }
}

/// Everything the MLS stage measured.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlsMeasurement {
    pub order: u32,
    pub period_samples: usize,
    /// Digital amplitude the MLS was played at, in dB.
    pub level_db: f64,
    pub playback_samples: usize,
    pub recorded_samples: usize,
    /// Apparent MLS period in the recording, in recorded samples.
    pub measured_period_samples: f64,
    /// Microphone clock rate over playback clock rate.
    pub clock_ratio_estimate: f64,
    pub raw_ir: ImpulseResponse,
    pub truncated_ir: ImpulseResponse,
    pub schroeder: SchroederData,
    pub inverse_filter: InverseImpulseResponse,
}

/// Spectra of the correction verification, all on the one-period FFT
/// grid in raw squared-magnitude dB so the curves compare directly.
/// `None` marks bins with no power (or, for the prediction, bins
/// where the background drowned the reference measurement).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckSpectra {
    pub freq_hz: Vec<f64>,
    /// Recorded spectrum of the uncorrected MLS.
    pub mls_sound_db: Vec<Option<f64>>,
    /// Recorded spectrum of the corrected, band-limited MLS.
    pub filtered_mls_sound_db: Vec<Option<f64>>,
    /// Background-noise spectrum over a silent interval, scaled to
    /// the folded recordings' noise floor.
    pub background_db: Vec<Option<f64>>,
    /// Spectrum of the corrected MLS as played (digital domain).
    pub filtered_digital_db: Vec<Option<f64>>,
    /// Predicted corrected recording: digital spectrum plus the system
    /// gain inferred from the noise-subtracted uncorrected pass.
    pub predicted_sum_db: Vec<Option<f64>>,
}

/// Outcome of the corrected-playback verification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectionCheck {
    /// Upper band edge the power limit allowed.
    pub cutoff_hz: f64,
    /// Total-power ceiling the bandlimit search enforced.
    pub power_limit_db: f64,
    pub measured_period_samples: f64,
    pub flatness: FlatnessReport,
    pub spectra: CheckSpectra,
}

/// Windowed power monitor of one recording.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordingPower {
    pub label: String,
    pub times_sec: Vec<f64>,
    pub power_db: Vec<Option<f64>>,
    pub sd_db: f64,
    pub flagged_wild: bool,
}

/// Complete record of one calibration session. Self-contained: every
/// gate verdict can be recomputed from the data carried here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionReport {
    pub schema_version: u32,
    /// Timestamps count simulated audio time from a fixed epoch, so
    /// identical runs produce byte-identical reports.
    pub started_at_iso8601: String,
    pub finished_at_iso8601: String,
    pub sample_rate_hz: f64,
    pub config: SessionConfig,
    pub accepted: bool,
    /// Name of the gate that rejected the session, when one did.
    pub rejected_stage: Option<String>,
    pub gates: SessionGates,
    pub gain_points: Vec<GainPoint>,
    pub drc_fit: Option<DrcFit>,
    pub mls: Option<MlsMeasurement>,
    pub correction: Option<CorrectionCheck>,
    pub recording_power: Vec<RecordingPower>,
}

impl SessionReport {
    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

fn monitor(label: &str, recording: &SampledSignal) -> Result<RecordingPower> {
    let series = power_over_time(recording, POWER_WINDOW_SEC)?;
    Ok(RecordingPower {
        label: label.to_string(),
        flagged_wild: series.exceeds(POWER_WILD_SD_DB),
        times_sec: series.times_sec,
        power_db: series
            .power_db
            .iter()
            .map(|&v| if v.is_finite() { Some(v) } else { None })
            .collect(),
        sd_db: series.sd_db,
    })
}

/// One play-record-align pass: simulate the playback, estimate the
/// apparent period, cut the analysis periods after the warmup,
/// resample onto the nominal grid, and fold them into one period.
struct FoldedPass {
    recording: SampledSignal,
    folded: SampledSignal,
    measured_period_samples: f64,
}

fn record_and_fold(
    chain: &PlaybackChain,
    playback: &SampledSignal,
    layout: &PlaybackLayout,
    stream: u64,
) -> Result<FoldedPass> {
    let recording = simulate_playback_stream(chain, playback, stream)?;
    let nominal = (layout.period_samples as f64 * recording.len() as f64
        / playback.len() as f64)
        .round() as usize;
    let period = estimate_period(&recording, nominal)?;
    let start = (layout.warmup_periods as f64 * period).round() as usize;
    let take = (layout.analysis_periods as f64 * period).round() as usize;
    if start + take > recording.len() {
        return Err(Error::BadSignal(format!(
            "recording too short: need {take} samples after the warmup, have {}",
            recording.len().saturating_sub(start)
        )));
    }
    let segment = SampledSignal::new(
        recording.samples[start..start + take].to_vec(),
        recording.sample_rate_hz,
    );
    let resampled = resample_to_period(
        &segment,
        period,
        layout.analysis_periods * layout.period_samples,
    )?;
    let folded = fold_periods(&resampled, layout.analysis_periods)?;
    Ok(FoldedPass { recording, folded, measured_period_samples: period })
}

/// One-shot response measurement: a single MLS pass through the chain
/// and back to a frequency response, with the parent (microphone)
/// response divided out when one is given. This is the step the full
/// session runs between its two gates, exposed for callers that
/// already trust the chain's linearity.
#[derive(Debug, Clone)]
pub struct SpeakerMeasurement {
    pub measured_period_samples: f64,
    pub clock_ratio_estimate: f64,
    /// System impulse response as measured (speaker and microphone
    /// together, phase intact).
    pub ir: ImpulseResponse,
    /// Magnitude response with the parent discounted when given.
    pub response: FrequencyResponse,
}

pub fn measure_speaker_response(
    chain: &PlaybackChain,
    config: &SessionConfig,
    parent: Option<&ProfileResponse>,
    stream: u64,
) -> Result<SpeakerMeasurement> {
    config.validate()?;
    let fs = chain.playback_rate_hz();
    let order = order_for_duration(config.burst_sec, fs)?;
    let spec = MlsSpec::new(order, config.burst_db, fs)?;
    let mls = generate_mls(&spec)?;
    let layout = PlaybackLayout::new(config.burst_repeats, mls.len())?;
    let playback = build_playback(&mls, &layout)?;
    let pass = record_and_fold(chain, &playback, &layout, stream)?;
    let ir = impulse_response(&pass.folded, &mls, 1)?;
    let response = match parent {
        Some(p) => discount_parent(&ir.response(), &p.to_grid(mls.len(), fs))?,
        None => ir.response(),
    };
    Ok(SpeakerMeasurement {
        clock_ratio_estimate: pass.measured_period_samples / mls.len() as f64,
        measured_period_samples: pass.measured_period_samples,
        ir,
        response,
    })
}

/// Run the whole calibration pipeline against a simulated chain:
/// 1 kHz gain sweep, compression-model fit (gate: RMS residual within
/// 1 dB), MLS pass, sampling-rate alignment, impulse response, parent
/// discount, truncation, inverse filter, band-limited corrected
/// playback, verification recording, flatness gate (SD within 3 dB),
/// and a power monitor over every recording. A gate failure marks the
/// report rejected at that stage and leaves later sections empty;
/// rerunning is the caller's decision.
pub fn run_calibration_session(
    chain: &PlaybackChain,
    config: &SessionConfig,
) -> Result<SessionReport> {
    run_calibration_session_with_parent(chain, config, None)
}

/// [`run_calibration_session`] with a known response for the
/// measuring microphone, divided out of the measured system response
/// and out of the verification recording's spectrum.
pub fn run_calibration_session_with_parent(
    chain: &PlaybackChain,
    config: &SessionConfig,
    parent: Option<&ProfileResponse>,
) -> Result<SessionReport> {
    config.validate()?;
    let fs = chain.playback_rate_hz();
    let started = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let mut audio_sec = 0.0;
    let mut monitors = Vec::new();

    let levels = standard_gain_levels();
    let mut gain_points = Vec::with_capacity(levels.len());
    for (i, &level) in levels.iter().enumerate() {
        let (point, recording) = measure_gain_point(chain, level, 1000.0, i as u64)?;
        audio_sec += 1.0;
        monitors.push(monitor(&format!("tone_{level}_db"), &recording)?);
        gain_points.push(point);
    }
    let fit = fit_drc(&gain_points)?;

    let mut report = SessionReport {
        schema_version: REPORT_SCHEMA_VERSION,
        started_at_iso8601: started.to_rfc3339(),
        finished_at_iso8601: String::new(),
        sample_rate_hz: fs,
        config: config.clone(),
        accepted: false,
        rejected_stage: None,
        gates: SessionGates {
            drc_fit: Some(GateStatus {
                passed: fit.accepted,
                measured_db: fit.rms_error_db,
                limit_db: RMS_LIMIT_DB,
            }),
            flatness: None,
        },
        gain_points,
        drc_fit: Some(fit.clone()),
        mls: None,
        correction: None,
        recording_power: Vec::new(),
    };

    'pipeline: {
        if !fit.accepted {
            report.rejected_stage = Some("drc".to_string());
            break 'pipeline;
        }

        let level_db = config.burst_db + if config.level_re_t { fit.params.t } else { 0.0 };
        let order = order_for_duration(config.burst_sec, fs)?;
        let spec = MlsSpec::new(order, level_db, fs)?;
        let mls = generate_mls(&spec)?;
        let p = mls.len();
        let layout = PlaybackLayout::new(config.burst_repeats, p)?;
        let playback = build_playback(&mls, &layout)?;

        let raw = record_and_fold(chain, &playback, &layout, STREAM_MLS)?;
        audio_sec += playback.duration_sec();
        monitors.push(monitor("mls", &raw.recording)?);

        let ir = impulse_response(&raw.folded, &mls, 1)?;
        let parent_grid = parent.map(|pr| pr.to_grid(p, fs));
        // Truncation keeps only magnitudes, so a parent discount can
        // ride in as a zero-phase signal without losing anything.
        let trunc_source = match &parent_grid {
            Some(grid) => {
                ImpulseResponse::new(discount_parent(&ir.response(), grid)?.to_signal(), fs)
            }
            None => ir.clone(),
        };
        let truncated = truncate_ir(&trunc_source, config.ir_sec)?;
        let curve = schroeder_curve(&truncated)?;
        let iir = inverse_ir(&truncated, config.iir_sec)?;

        let filtered = apply_correction(&playback, &iir);
        let limit_db = level_db + config.filtered_extra_db;
        let (banded, cutoff_hz) =
            bandlimit_filtered_mls(&filtered, config.min_hz, limit_db, config.max_hz)?;

        let check = record_and_fold(chain, &banded, &layout, STREAM_CHECK)?;
        audio_sec += banded.duration_sec();
        monitors.push(monitor("corrected_mls", &check.recording)?);

        let silence =
            SampledSignal::new(vec![0.0; (layout.analysis_periods + 1) * p], fs);
        let background = simulate_playback_stream(chain, &silence, STREAM_NOISE)?;
        audio_sec += silence.duration_sec();
        monitors.push(monitor("background", &background)?);

        // Folding averaged `analysis_periods` independent noise
        // stretches and the grid alignment rescaled them; scale the
        // separately recorded background the same way so subtraction
        // sees the floor the folded recordings actually carry.
        let stretch = (layout.analysis_periods * p) as f64
            / (layout.analysis_periods as f64 * check.measured_period_samples).round();
        let noise_scale = stretch / (layout.analysis_periods as f64).sqrt();
        let scaled_noise = SampledSignal::new(
            background.samples.iter().map(|v| v * noise_scale).collect(),
            fs,
        );

        let mic_grid = match &parent_grid {
            Some(grid) => grid.clone(),
            None => FrequencyResponse::flat(p, fs),
        };
        let flatness =
            assess_flatness(&check.folded, &scaled_noise, &mic_grid, config.min_hz, cutoff_hz)?;
        report.gates.flatness = Some(GateStatus {
            passed: flatness.passed,
            measured_db: flatness.sd_db,
            limit_db: FLATNESS_SD_LIMIT_DB,
        });

        let spectra = check_spectra(&mls, &raw.folded, &check.folded, &scaled_noise, &banded);

        report.mls = Some(MlsMeasurement {
            order,
            period_samples: p,
            level_db,
            playback_samples: playback.len(),
            recorded_samples: raw.recording.len(),
            measured_period_samples: raw.measured_period_samples,
            clock_ratio_estimate: raw.measured_period_samples / p as f64,
            raw_ir: ir,
            truncated_ir: truncated,
            schroeder: SchroederData::from_curve(&curve),
            inverse_filter: iir,
        });
        report.correction = Some(CorrectionCheck {
            cutoff_hz,
            power_limit_db: limit_db,
            measured_period_samples: check.measured_period_samples,
            flatness: flatness.clone(),
            spectra,
        });

        if !flatness.passed {
            report.rejected_stage = Some("flatness".to_string());
            break 'pipeline;
        }
        report.accepted = true;
    }

    report.finished_at_iso8601 =
        (started + Duration::milliseconds((audio_sec * 1000.0).round() as i64)).to_rfc3339();
    report.recording_power = monitors;
    Ok(report)
}

fn db_or_none(power: f64) -> Option<f64> {
    if power > 0.0 {
        Some(10.0 * power.log10())
    } else {
        None
    }
}

fn check_spectra(
    mls: &SampledSignal,
    folded_raw: &SampledSignal,
    folded_check: &SampledSignal,
    scaled_noise: &SampledSignal,
    banded: &SampledSignal,
) -> CheckSpectra {
    let p = mls.len();
    let fs = mls.sample_rate_hz;
    let m = fft_real(&mls.samples);
    let raw = fft_real(&folded_raw.samples);
    let check = fft_real(&folded_check.samples);
    // One analysis period of the corrected playback; the warmup period
    // before it has absorbed the correction filter's edge transient.
    let digital = fft_real(&banded.samples[p..2 * p]);

    let chunks = scaled_noise.len() / p;
    let mut noise_power = vec![0.0; p / 2 + 1];
    for c in 0..chunks {
        let cs = fft_real(&scaled_noise.samples[c * p..(c + 1) * p]);
        for (acc, v) in noise_power.iter_mut().zip(&cs) {
            *acc += v.norm_sqr() / chunks as f64;
        }
    }

    let bins = p / 2 + 1;
    let mut out = CheckSpectra {
        freq_hz: Vec::with_capacity(bins),
        mls_sound_db: Vec::with_capacity(bins),
        filtered_mls_sound_db: Vec::with_capacity(bins),
        background_db: Vec::with_capacity(bins),
        filtered_digital_db: Vec::with_capacity(bins),
        predicted_sum_db: Vec::with_capacity(bins),
    };
    for k in 0..bins {
        out.freq_hz.push(k as f64 * fs / p as f64);
        let raw_p = raw[k].norm_sqr();
        let digital_p = digital[k].norm_sqr();
        let mls_p = m[k].norm_sqr();
        out.mls_sound_db.push(db_or_none(raw_p));
        out.filtered_mls_sound_db.push(db_or_none(check[k].norm_sqr()));
        out.background_db.push(db_or_none(noise_power[k]));
        out.filtered_digital_db.push(db_or_none(digital_p));
        // System power gain from the uncorrected pass (recording minus
        // background, over the MLS's own spectrum) applied to the
        // corrected playback's spectrum.
        let signal_p = raw_p - noise_power[k];
        let predicted = match (db_or_none(signal_p), db_or_none(digital_p), db_or_none(mls_p)) {
            (Some(sig), Some(dig), Some(mls_db)) => Some(dig + sig - mls_db),
            _ => None,
        };
        out.predicted_sum_db.push(predicted);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drc::DrcParams;
    use crate::sim::{NoiseSpectrum, SimTransducer};

    /// Shrunk measurement (order-11 MLS, 2 repeats) so unit tests run
    /// in milliseconds; the full-size path is exercised end to end by
    /// the integration suite.
    fn fast_config() -> SessionConfig {
        SessionConfig {
            burst_sec: 0.05,
            burst_repeats: 2,
            ir_sec: 0.04,
            iir_sec: 0.04,
            ..SessionConfig::default()
        }
    }

    #[test]
    fn default_config_parses_from_its_own_echo() {
        let text = "\
# session defaults
_calibrateSoundBurstSec = 1
_calibrateSoundBurstRepeats = 4
_calibrateSoundBurstDb = -34
_calibrateSoundIRSec = 0.2
_calibrateSoundIIRSec = 0.2
calibrateSoundMinHz = 100
calibrateSoundMaxHz = 20000
calibrateSoundBurstFilteredExtraDb = 5
calibrateSoundBurstLevelReTBool = FALSE
_calibrateSoundSamplingDesiredHz = 48000
";
        assert_eq!(SessionConfig::parse(text).unwrap(), SessionConfig::default());
        assert_eq!(SessionConfig::parse("").unwrap(), SessionConfig::default());
    }

    #[test]
    fn unknown_config_key_is_named_in_the_error() {
        let err = SessionConfig::parse("calibrateSoundBurstHz = 3").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("calibrateSoundBurstHz"), "{msg}");
    }

    #[test]
    fn bad_config_value_is_named_in_the_error() {
        let err = SessionConfig::parse("calibrateSoundMinHz = loud").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("calibrateSoundMinHz") && msg.contains("loud"), "{msg}");
    }

    #[test]
    fn config_rejects_band_above_nyquist() {
        let err = SessionConfig::parse("calibrateSoundMaxHz = 30000").unwrap_err();
        assert!(err.to_string().contains("Nyquist"), "{err}");
    }

    #[test]
    fn later_config_lines_override_earlier_ones() {
        let cfg =
            SessionConfig::parse("calibrateSoundMinHz = 50\ncalibrateSoundMinHz = 200").unwrap();
        assert_eq!(cfg.min_hz, 200.0);
    }

    #[test]
    fn config_echo_uses_external_key_names() {
        let json = serde_json::to_value(SessionConfig::default()).unwrap();
        for key in [
            "_calibrateSoundBurstSec",
            "_calibrateSoundBurstRepeats",
            "_calibrateSoundBurstDb",
            "_calibrateSoundIRSec",
            "_calibrateSoundIIRSec",
            "calibrateSoundMinHz",
            "calibrateSoundMaxHz",
            "calibrateSoundBurstFilteredExtraDb",
            "calibrateSoundBurstLevelReTBool",
            "_calibrateSoundSamplingDesiredHz",
        ] {
            assert!(json.get(key).is_some(), "missing key {key}");
        }
    }

    #[test]
    fn clean_chain_session_is_accepted_and_flat() {
        let chain = PlaybackChain::identity();
        let report = run_calibration_session(&chain, &fast_config()).unwrap();
        assert!(report.accepted);
        assert_eq!(report.rejected_stage, None);
        let correction = report.correction.as_ref().unwrap();
        assert!(
            correction.flatness.sd_db < 0.5,
            "sd {} dB",
            correction.flatness.sd_db
        );
        let mls = report.mls.as_ref().unwrap();
        assert!((mls.clock_ratio_estimate - 1.0).abs() < 1e-4);
        assert_eq!(report.gain_points.len(), 17);
        assert_eq!(report.recording_power.len(), 17 + 3);
        assert!(report.gates.drc_fit.as_ref().unwrap().passed);
        assert!(report.gates.flatness.as_ref().unwrap().passed);
        assert!(!report.recording_power.iter().any(|r| r.flagged_wild));
    }

    #[test]
    fn session_recovers_the_configured_compression_knee() {
        let mut chain = PlaybackChain::identity();
        chain.speaker.drc = Some(DrcParams::new(0.0, -21.0, 10.0, 0.5));
        let report = run_calibration_session(&chain, &fast_config()).unwrap();
        let fit = report.drc_fit.as_ref().unwrap();
        let floor = crate::drc::knee_floor(&fit.params);
        assert!((floor - -26.0).abs() < 0.5, "knee floor {floor} dB");
        assert!(report.accepted);
    }

    #[test]
    fn burst_level_follows_the_fitted_threshold_when_relative() {
        let mut chain = PlaybackChain::identity();
        chain.speaker.drc = Some(DrcParams::new(0.0, -21.0, 10.0, 0.5));
        let mut config = fast_config();
        config.level_re_t = true;
        config.burst_db = -14.0;
        let report = run_calibration_session(&chain, &config).unwrap();
        let fit_t = report.drc_fit.as_ref().unwrap().params.t;
        let level = report.mls.as_ref().unwrap().level_db;
        assert!((level - (fit_t - 14.0)).abs() < 1e-9, "level {level}, T {fit_t}");
        assert!((level - -35.0).abs() < 1.0, "level {level}");
    }

    #[test]
    fn identical_sessions_serialize_identically() {
        let mut chain = PlaybackChain::identity();
        chain.env.noise_level_db = -50.0;
        chain.env.noise_spectrum = NoiseSpectrum::OneOverF;
        chain.env.seed = 7;
        let a = run_calibration_session(&chain, &fast_config()).unwrap();
        let b = run_calibration_session(&chain, &fast_config()).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    }

    #[test]
    fn report_round_trips_through_json() {
        let mut chain = PlaybackChain::identity();
        chain.env.noise_level_db = -50.0;
        chain.env.noise_spectrum = NoiseSpectrum::OneOverF;
        let report = run_calibration_session(&chain, &fast_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        report.write_json(&path).unwrap();
        let back = SessionReport::read_json(&path).unwrap();
        assert_eq!(
            serde_json::to_vec(&report).unwrap(),
            serde_json::to_vec(&back).unwrap()
        );
    }

    #[test]
    fn known_microphone_response_is_discounted() {
        let fs = 48000.0;
        let mut chain = PlaybackChain::identity();
        chain.microphone = SimTransducer::with_ir(crate::sim::test_fir(64, 11));
        // Hand the session the microphone's true response as the
        // parent, on a grid dense enough that the profile's linear
        // interpolation between points is not the bottleneck.
        let mut padded = chain.microphone.ir_taps.clone();
        padded.resize(8192, 0.0);
        let mic_grid = FrequencyResponse::from_signal(&padded, fs);
        let parent = ProfileResponse::from_grid(&mic_grid, 24000.0);
        let report =
            run_calibration_session_with_parent(&chain, &fast_config(), Some(&parent)).unwrap();
        // With the mic discounted the remaining system is the identity
        // speaker, so the truncated IR's response should be flat.
        let resp = report.mls.as_ref().unwrap().truncated_ir.response();
        for k in 1..resp.len() / 2 {
            let f = resp.freq_of_bin(k);
            if !(100.0..=20000.0).contains(&f) {
                continue;
            }
            let db = 20.0 * resp.magnitude(k).log10();
            assert!(db.abs() < 0.35, "{db} dB at {f} Hz");
        }
        assert!(report.accepted);
    }

    #[test]
    fn measure_speaker_response_sees_through_clock_skew() {
        let mut chain = PlaybackChain::identity();
        chain.speaker = SimTransducer::with_ir(crate::sim::test_fir(64, 7));
        chain.env.clock_ratio = 1.001;
        let config = fast_config();
        let skewed = measure_speaker_response(&chain, &config, None, 0).unwrap();
        assert!((skewed.clock_ratio_estimate - 1.001).abs() < 1e-4);

        chain.env.clock_ratio = 1.0;
        let reference = measure_speaker_response(&chain, &config, None, 0).unwrap();
        for k in 1..reference.response.len() / 2 {
            let f = reference.response.freq_of_bin(k);
            if !(100.0..=10000.0).contains(&f) {
                continue;
            }
            let diff = 20.0
                * (skewed.response.magnitude(k) / reference.response.magnitude(k)).log10();
            assert!(diff.abs() < 0.5, "{diff} dB at {f} Hz");
        }
    }

    #[test]
    fn virtual_timestamps_cover_the_simulated_audio() {
        let report = run_calibration_session(&PlaybackChain::identity(), &fast_config()).unwrap();
        let start: chrono::DateTime<Utc> = report.started_at_iso8601.parse().unwrap();
        let finish: chrono::DateTime<Utc> = report.finished_at_iso8601.parse().unwrap();
        let elapsed = (finish - start).num_milliseconds() as f64 / 1000.0;
        // 17 one-second tones plus three MLS-scale passes.
        assert!(elapsed > 17.0, "elapsed {elapsed} s");
        assert!(elapsed < 20.0, "elapsed {elapsed} s");
    }

    #[test]
    fn predicted_sum_tracks_the_corrected_recording() {
        let mut chain = PlaybackChain::identity();
        chain.speaker = SimTransducer::with_ir(crate::sim::test_fir(64, 7));
        let report = run_calibration_session(&chain, &fast_config()).unwrap();
        let spectra = &report.correction.as_ref().unwrap().spectra;
        let mut worst = 0.0f64;
        for k in 0..spectra.freq_hz.len() {
            let f = spectra.freq_hz[k];
            if !(200.0..=10000.0).contains(&f) {
                continue;
            }
            if let (Some(predicted), Some(measured)) =
                (spectra.predicted_sum_db[k], spectra.filtered_mls_sound_db[k])
            {
                worst = worst.max((predicted - measured).abs());
            }
        }
        assert!(worst < 0.5, "worst prediction error {worst} dB");
    }
}
