//! End-to-end checks of the measurement pipeline against independent
//! oracles: a windowed line-spectrum demodulator that never touches
//! the stretch-and-fold code path, a direct noise-averaging law, and
//! the measure/invert/correct round trip.

use soundcal::mls::{build_playback, PlaybackLayout};
use soundcal::session::{measure_speaker_response, run_calibration_session, SessionConfig};
use soundcal::signals::{generate_mls, hann_window, MlsSpec, SampledSignal};
use soundcal::spectrum::fft_real;
use soundcal::sim::{
    simulate_playback_stream, test_fir, white_noise, PlaybackChain, SimEnvironment,
    SimTransducer,
};

fn db(x: f64) -> f64 {
    20.0 * x.log10()
}

/// Amplitude of the component at `f_hz` in `x`, measured by Hann-windowed
/// quadrature demodulation. No resampling, no folding, no period estimate:
/// only a window and two inner products.
fn windowed_line_amplitude(x: &[f64], f_hz: f64, fs: f64) -> f64 {
    let w = hann_window(x.len()).unwrap();
    let omega = 2.0 * std::f64::consts::PI * f_hz / fs;
    let mut s = 0.0;
    let mut c = 0.0;
    let mut wsum = 0.0;
    for (i, (&xi, &wi)) in x.iter().zip(&w).enumerate() {
        let (sin, cos) = (omega * i as f64).sin_cos();
        s += xi * wi * sin;
        c += xi * wi * cos;
        wsum += wi;
    }
    2.0 * (s * s + c * c).sqrt() / wsum
}

/// The pipeline recovers the same line amplitudes as direct windowed
/// demodulation of the raw skewed-clock recording. The two estimates
/// share no machinery past the simulator, so agreement pins down the
/// period estimate, the resampling, and the fold at once.
#[test]
fn folded_response_matches_windowed_demodulation_of_the_raw_recording() {
    let fs = 48000.0;
    let ratio = 1.001;
    let chain = PlaybackChain {
        speaker: SimTransducer::with_ir(test_fir(64, 3)),
        microphone: SimTransducer::delta(),
        env: SimEnvironment { clock_ratio: ratio, ..SimEnvironment::quiet() },
    };
    let config = SessionConfig {
        burst_sec: 4095.0 / 48000.0,
        burst_repeats: 4,
        ir_sec: 0.04,
        iir_sec: 0.04,
        ..SessionConfig::default()
    };

    let measured = measure_speaker_response(&chain, &config, None, 17).unwrap();

    // Rebuild the exact playback and recording the measurement saw.
    let spec = MlsSpec::new(12, config.burst_db, fs).unwrap();
    let mls = generate_mls(&spec).unwrap();
    let p = mls.len();
    assert_eq!(measured.response.len(), p);
    let layout = PlaybackLayout::new(config.burst_repeats, p).unwrap();
    let playback = build_playback(&mls, &layout).unwrap();
    let recording = simulate_playback_stream(&chain, &playback, 17).unwrap();

    // Steady-state slice: one warmup period in, three periods long,
    // both scaled by the true clock ratio.
    let start = (1.2 * p as f64 * ratio).round() as usize;
    let take = (3.0 * p as f64 * ratio).round() as usize;
    let slice = &recording.samples[start..start + take];

    // MLS line amplitudes from one clean period of the digital signal.
    let spec_fft = fft_real(&mls.samples);

    let mut worst = 0.0f64;
    let mut lines = 0;
    for j in 1..p / 2 {
        let f_play = j as f64 * fs / p as f64;
        if !(100.0..=10000.0).contains(&f_play) {
            continue;
        }
        // Every 37th line keeps the oracle loop fast; the sample still
        // spans the whole band.
        if j % 37 != 0 {
            continue;
        }
        let x_amp = 2.0 * spec_fft[j].norm() / p as f64;
        let f_rec = f_play / ratio;
        let heard = windowed_line_amplitude(slice, f_rec, fs);
        let oracle_gain_db = db(heard / x_amp);
        let pipeline_gain_db = db(measured.response.magnitude(j));
        worst = worst.max((oracle_gain_db - pipeline_gain_db).abs());
        lines += 1;
    }
    assert!(lines > 20, "band sampled too sparsely: {lines} lines");
    assert!(
        worst < 0.5,
        "pipeline diverges from windowed demodulation by {worst:.3} dB"
    );
}

/// Folding N periods averages N independent noise realizations, so
/// uncorrelated power must drop by very nearly a factor of N.
#[test]
fn folding_suppresses_uncorrelated_noise_by_the_period_count() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(40);
    let periods = 4;
    let p = 8192;
    let noise = white_noise(periods * p, -30.0, &mut rng);
    let signal = SampledSignal::new(noise, 48000.0);
    let before = signal.mean_power();

    let folded = soundcal::mls::fold_periods(&signal, periods).unwrap();
    let after = folded.mean_power();

    let drop_db = 10.0 * (before / after).log10();
    let expect_db = 10.0 * (periods as f64).log10();
    assert!(
        (drop_db - expect_db).abs() < 1.0,
        "noise fell {drop_db:.2} dB on folding, expected about {expect_db:.2} dB"
    );
}

/// Measure, invert, correct, re-measure: a 64-tap system with matched
/// clocks and no noise comes back flat to within half a decibel.
#[test]
fn correction_round_trip_flattens_a_fir_chain() {
    let chain = PlaybackChain {
        speaker: SimTransducer::with_ir(test_fir(64, 21)),
        microphone: SimTransducer::delta(),
        env: SimEnvironment::quiet(),
    };
    let config = SessionConfig {
        burst_sec: 4095.0 / 48000.0,
        burst_repeats: 4,
        ir_sec: 0.04,
        iir_sec: 0.04,
        ..SessionConfig::default()
    };
    let report = run_calibration_session(&chain, &config).unwrap();
    assert!(report.accepted);
    let flatness = &report.correction.unwrap().flatness;
    assert!(
        flatness.sd_db < 0.5,
        "corrected spectrum sd {:.3} dB",
        flatness.sd_db
    );
}
