//! Simulated playback chain standing in for real hardware: an FIR
//! loudspeaker behind a static compressor, environment noise with a
//! 1/f or white spectrum, an FIR microphone, and an independent
//! recording clock realized by windowed-sinc resampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::drc::{drc_out, DrcParams};
use crate::error::{Error, Result};
use crate::signals::{hann_window, SampledSignal};
use crate::spectrum::{fft_real, ifft_real};

/// One simulated transducer: its ground-truth impulse response, an
/// optional compressor (loudspeakers only), and a self-noise floor.
/// Noise levels at or below -250 dB mean "off".
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimTransducer {
    pub ir_taps: Vec<f64>,
    pub drc: Option<DrcParams>,
    pub self_noise_db: f64,
}

impl SimTransducer {
    /// A wire: unit delta response, no compression, no noise.
    pub fn delta() -> Self {
        Self { ir_taps: vec![1.0], drc: None, self_noise_db: NOISE_OFF_DB }
    }

    pub fn with_ir(ir_taps: Vec<f64>) -> Self {
        Self { ir_taps, drc: None, self_noise_db: NOISE_OFF_DB }
    }
}

pub const NOISE_OFF_DB: f64 = -250.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpectrum {
    White,
    OneOverF,
}

/// Room and clock conditions shared by every playback in a session.
/// `clock_ratio` is the microphone rate divided by the speaker rate;
/// both devices believe they run at `playback_rate_hz`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimEnvironment {
    pub noise_level_db: f64,
    pub noise_spectrum: NoiseSpectrum,
    pub clock_ratio: f64,
    pub seed: u64,
    pub playback_rate_hz: f64,
}

impl SimEnvironment {
    pub fn quiet() -> Self {
        Self {
            noise_level_db: NOISE_OFF_DB,
            noise_spectrum: NoiseSpectrum::OneOverF,
            clock_ratio: 1.0,
            seed: 0,
            playback_rate_hz: 48000.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlaybackChain {
    pub speaker: SimTransducer,
    pub microphone: SimTransducer,
    pub env: SimEnvironment,
}

impl PlaybackChain {
    pub fn identity() -> Self {
        Self {
            speaker: SimTransducer::delta(),
            microphone: SimTransducer::delta(),
            env: SimEnvironment::quiet(),
        }
    }

    pub fn playback_rate_hz(&self) -> f64 {
        self.env.playback_rate_hz
    }
}

/// Play a signal through the chain: compressor, speaker response,
/// room noise, microphone response, the microphone's clock, and its
/// self-noise. Deterministic for a given (chain, input).
pub fn simulate_playback(chain: &PlaybackChain, input: &SampledSignal) -> Result<SampledSignal> {
    simulate_playback_stream(chain, input, 0)
}

/// Like [`simulate_playback`], with an explicit noise stream index.
/// Successive recordings within one session pass distinct indices so
/// each gets an independent (but still seeded) noise draw.
pub fn simulate_playback_stream(
    chain: &PlaybackChain,
    input: &SampledSignal,
    stream: u64,
) -> Result<SampledSignal> {
    if !(0.25..=4.0).contains(&chain.env.clock_ratio) {
        return Err(Error::RatioOutOfRange(chain.env.clock_ratio));
    }
    if chain.speaker.ir_taps.is_empty() || chain.microphone.ir_taps.is_empty() {
        return Err(Error::BadSignal("transducer impulse response is empty".into()));
    }
    let fs = input.sample_rate_hz;

    let mut x = match &chain.speaker.drc {
        Some(params) => compress(&input.samples, params, fs),
        None => input.samples.clone(),
    };
    x = convolve_trim(&x, &chain.speaker.ir_taps);

    if chain.env.noise_level_db > NOISE_OFF_DB {
        let mut rng = stream_rng(chain.env.seed, stream, 0);
        let noise = match chain.env.noise_spectrum {
            NoiseSpectrum::OneOverF => one_over_f_noise(x.len(), chain.env.noise_level_db, fs, &mut rng),
            NoiseSpectrum::White => white_noise(x.len(), chain.env.noise_level_db, &mut rng),
        };
        for (v, n) in x.iter_mut().zip(&noise) {
            *v += n;
        }
    }

    x = convolve_trim(&x, &chain.microphone.ir_taps);
    if let Some(params) = &chain.microphone.drc {
        x = compress(&x, params, fs);
    }

    if chain.env.clock_ratio != 1.0 {
        x = resample_sinc(&x, chain.env.clock_ratio);
    }

    if chain.microphone.self_noise_db > NOISE_OFF_DB {
        let mut rng = stream_rng(chain.env.seed, stream, 1);
        let noise = white_noise(x.len(), chain.microphone.self_noise_db, &mut rng);
        for (v, n) in x.iter_mut().zip(&noise) {
            *v += n;
        }
    }

    // both clocks report the nominal rate; the mismatch shows up only
    // in the sample count and the apparent frequencies
    Ok(SampledSignal::new(x, fs))
}

fn stream_rng(seed: u64, stream: u64, role: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(
        seed.wrapping_mul(0x9E3779B97F4A7C15)
            .wrapping_add(stream * 2 + role),
    )
}

/// Linear convolution truncated to the input length (causal tail
/// dropped), via FFT.
fn convolve_trim(x: &[f64], h: &[f64]) -> Vec<f64> {
    if h.len() == 1 {
        return x.iter().map(|v| v * h[0]).collect();
    }
    let full = x.len() + h.len() - 1;
    let n = full.next_power_of_two();
    let mut xa = x.to_vec();
    xa.resize(n, 0.0);
    let mut ha = h.to_vec();
    ha.resize(n, 0.0);
    let mut fx = fft_real(&xa);
    let fh = fft_real(&ha);
    for (a, b) in fx.iter_mut().zip(&fh) {
        *a *= b;
    }
    let mut y = ifft_real(&fx);
    y.truncate(x.len());
    y
}

/// Static compressor: a centered moving-RMS envelope mapped through
/// the compression curve, applied as a time-varying gain. The window
/// is 6.25 ms; at 48 kHz that is a non-integer number of 1 kHz cycles,
/// so the envelope retains a slight ripple and the compressor produces
/// the mild harmonic distortion real hardware shows above the knee.
/// The background term of the curve is acoustic, not electrical, and
/// is ignored here.
fn compress(x: &[f64], params: &DrcParams, fs: f64) -> Vec<f64> {
    let electrical = DrcParams { background_db: None, ..params.clone() };
    let win = ((0.00625 * fs).round() as usize).max(1);
    let n = x.len();
    let mut csum = vec![0.0; n + 1];
    for (i, &v) in x.iter().enumerate() {
        csum[i + 1] = csum[i] + v * v;
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(win / 2).min(n);
        let hi = (i + (win - win / 2)).min(n);
        let count = (hi - lo).max(1);
        let env = ((csum[hi] - csum[lo]) / count as f64).max(0.0).sqrt();
        let level_db = 20.0 * (env * std::f64::consts::SQRT_2).max(1e-30).log10();
        let gain_db = drc_out(level_db, &electrical) - level_db;
        out.push(x[i] * 10f64.powf(gain_db / 20.0));
    }
    out
}

/// Windowed-sinc resampler modeling the recording clock. 64-tap
/// 4-term Blackman-Harris kernel; passband error sits below -100 dB,
/// far under everything the measurements are asked to resolve.
pub fn resample_sinc(x: &[f64], ratio: f64) -> Vec<f64> {
    let taps = 64.0;
    let cutoff = 0.92 * ratio.min(1.0);
    let half = taps / 2.0 / ratio.min(1.0);
    let out_len = (x.len() as f64 * ratio).round() as usize;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let center = i as f64 / ratio;
        let k0 = ((center - half).ceil() as isize).max(0) as usize;
        let k1 = ((center + half).floor() as isize).min(x.len() as isize - 1) as usize;
        let mut acc = 0.0;
        for k in k0..=k1 {
            let d = k as f64 - center;
            acc += x[k] * cutoff * sinc(cutoff * d) * blackman_harris((d / half).clamp(-1.0, 1.0));
        }
        out.push(acc);
    }
    out
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let t = std::f64::consts::PI * x;
        t.sin() / t
    }
}

fn blackman_harris(x: f64) -> f64 {
    let (a0, a1, a2, a3) = (0.35875, 0.48829, 0.14128, 0.01168);
    let t = std::f64::consts::PI * (x + 1.0);
    a0 - a1 * t.cos() + a2 * (2.0 * t).cos() - a3 * (3.0 * t).cos()
}

pub(crate) fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// White Gaussian noise scaled to the requested total power.
pub fn white_noise<R: Rng>(n: usize, level_db: f64, rng: &mut R) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n).map(|_| gaussian(rng)).collect();
    scale_to_power(&mut x, level_db);
    x
}

/// Pink-ish noise: white Gaussian shaped by 1/sqrt(f) in the frequency
/// domain (equal power per octave), scaled to the requested total
/// power. DC is zeroed.
pub fn one_over_f_noise<R: Rng>(n: usize, level_db: f64, fs: f64, rng: &mut R) -> Vec<f64> {
    let white: Vec<f64> = (0..n).map(|_| gaussian(rng)).collect();
    let mut spec = fft_real(&white);
    spec[0] = rustfft::num_complex::Complex64::new(0.0, 0.0);
    for (k, v) in spec.iter_mut().enumerate().skip(1) {
        let f = (k.min(n - k)) as f64 * fs / n as f64;
        *v *= 1.0 / f.sqrt();
    }
    let mut x = ifft_real(&spec);
    scale_to_power(&mut x, level_db);
    x
}

fn scale_to_power(x: &mut [f64], level_db: f64) {
    let p = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    if p > 0.0 {
        let s = (10f64.powf(level_db / 10.0) / p).sqrt();
        for v in x.iter_mut() {
            *v *= s;
        }
    }
}

/// Magnitude curve of the reference misbehaving laptop speaker used in
/// tests and fixtures: a 15 dB bass deficit rising to flat at 200 Hz,
/// an 8 dB dip at 1.4 kHz, ripples through the treble, and a steep
/// rolloff above 10 kHz.
pub fn ragged_speaker_magnitude_db(f_hz: f64) -> f64 {
    let f = f_hz.max(1.0);
    let lf = if f < 20.0 {
        -15.0
    } else if f < 200.0 {
        -15.0 * (200.0 / f).log10()
    } else {
        0.0
    };
    let dip = -8.0 * (-0.5 * ((f / 1400.0).log2() / 0.35).powi(2)).exp();
    let ripple = if (1000.0..=10000.0).contains(&f) {
        5.0 * (2.0 * std::f64::consts::PI * 5.5 * (f / 1000.0).log2()).sin()
    } else {
        0.0
    };
    let rolloff = if f > 10000.0 { -24.0 * (f / 10000.0).log2() } else { 0.0 };
    lf + dip + ripple + rolloff
}

/// FIR realization of [`ragged_speaker_magnitude_db`]: zero-phase synthesis,
/// rotated to causal center, Hann-windowed.
pub fn ragged_speaker_fir(len: usize, fs: f64) -> Vec<f64> {
    let mags: Vec<rustfft::num_complex::Complex64> = (0..len)
        .map(|k| {
            let f = (k.min(len - k)) as f64 * fs / len as f64;
            rustfft::num_complex::Complex64::new(10f64.powf(ragged_speaker_magnitude_db(f) / 20.0), 0.0)
        })
        .collect();
    let zp = ifft_real(&mags);
    let w = hann_window(len).expect("nonzero length");
    (0..len)
        .map(|i| zp[(i + len - len / 2) % len] * w[i])
        .collect()
}

/// Reflection gain of the `late_echo` recipe: a single echo this strong
/// carves a 20 dB comb, (1 + g) / (1 - g), into the magnitude response.
pub const LATE_ECHO_GAIN: f64 = 0.818;

/// Chain description as stored in JSON fixtures: impulse responses
/// either as literal taps or as a named recipe.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IrSpec {
    Taps(Vec<f64>),
    Recipe { recipe: String, len: usize },
}

impl IrSpec {
    pub fn realize(&self, fs: f64) -> Result<Vec<f64>> {
        match self {
            IrSpec::Taps(taps) => {
                if taps.is_empty() {
                    return Err(Error::BadSignal("ir taps empty".into()));
                }
                Ok(taps.clone())
            }
            IrSpec::Recipe { recipe, len } => match recipe.as_str() {
                "delta" => {
                    let mut taps = vec![0.0; (*len).max(1)];
                    taps[0] = 1.0;
                    Ok(taps)
                }
                "ragged_speaker" => Ok(ragged_speaker_fir(*len, fs)),
                "late_echo" => {
                    if *len < 2 {
                        return Err(Error::Config("late_echo needs len >= 2".into()));
                    }
                    let mut taps = vec![0.0; *len];
                    taps[0] = 1.0;
                    taps[*len - 1] = LATE_ECHO_GAIN;
                    Ok(taps)
                }
                other => Err(Error::Config(format!("unknown ir recipe '{other}'"))),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransducerSpec {
    pub ir: IrSpec,
    #[serde(default)]
    pub drc: Option<DrcParams>,
    #[serde(default = "noise_off")]
    pub self_noise_db: f64,
}

fn noise_off() -> f64 {
    NOISE_OFF_DB
}

fn default_ratio() -> f64 {
    1.0
}

fn default_rate() -> f64 {
    48000.0
}

fn default_spectrum() -> NoiseSpectrum {
    NoiseSpectrum::OneOverF
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    #[serde(default = "noise_off")]
    pub noise_level_db: f64,
    #[serde(default = "default_spectrum")]
    pub noise_spectrum: NoiseSpectrum,
    #[serde(default = "default_ratio")]
    pub clock_ratio: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_rate")]
    pub playback_rate_hz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainSpec {
    pub speaker: TransducerSpec,
    pub microphone: TransducerSpec,
    pub env: EnvironmentSpec,
}

impl ChainSpec {
    pub fn realize(&self) -> Result<PlaybackChain> {
        let fs = self.env.playback_rate_hz;
        Ok(PlaybackChain {
            speaker: SimTransducer {
                ir_taps: self.speaker.ir.realize(fs)?,
                drc: self.speaker.drc.clone(),
                self_noise_db: self.speaker.self_noise_db,
            },
            microphone: SimTransducer {
                ir_taps: self.microphone.ir.realize(fs)?,
                drc: self.microphone.drc.clone(),
                self_noise_db: self.microphone.self_noise_db,
            },
            env: SimEnvironment {
                noise_level_db: self.env.noise_level_db,
                noise_spectrum: self.env.noise_spectrum,
                clock_ratio: self.env.clock_ratio,
                seed: self.env.seed,
                playback_rate_hz: self.env.playback_rate_hz,
            },
        })
    }
}

pub fn load_chain(path: &std::path::Path) -> Result<PlaybackChain> {
    let text = std::fs::read_to_string(path)?;
    let spec: ChainSpec = serde_json::from_str(&text)?;
    spec.realize()
}

/// Deterministic pseudo-random FIR used as a "known unknown" system in
/// tests: dense early energy with an exponential tail, unit energy.
pub fn test_fir(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut taps: Vec<f64> = (0..len)
        .map(|k| gaussian(&mut rng) * (-(k as f64) / 12.0).exp())
        .collect();
    taps[0] = 2.0;
    let energy: f64 = taps.iter().map(|v| v * v).sum();
    let s = 1.0 / energy.sqrt();
    for t in taps.iter_mut() {
        *t *= s;
    }
    taps
}
