//! Measure a simulated room's impulse response with a repeated noise
//! burst: generate the burst, play it through a chain whose recording
//! clock runs 0.1% fast, realign and fold the periods, and deconvolve.

use soundcal::mls::{build_playback, impulse_response, PlaybackLayout};
use soundcal::session::{measure_speaker_response, SessionConfig};
use soundcal::signals::{generate_mls, MlsSpec};
use soundcal::sim::{test_fir, PlaybackChain, SimEnvironment, SimTransducer};

fn main() -> soundcal::Result<()> {
    let fs = 48000.0;

    // A 64-tap speaker stands in for the unknown system; the recording
    // clock runs 0.1% fast relative to playback.
    let chain = PlaybackChain {
        speaker: SimTransducer::with_ir(test_fir(64, 3)),
        microphone: SimTransducer::delta(),
        env: SimEnvironment { clock_ratio: 1.001, ..SimEnvironment::quiet() },
    };

    let config = SessionConfig {
        burst_sec: 0.25,
        burst_repeats: 4,
        ir_sec: 0.04,
        iir_sec: 0.04,
        ..SessionConfig::default()
    };

    let m = measure_speaker_response(&chain, &config, None, 0)?;
    println!("apparent period:   {:.2} samples", m.measured_period_samples);
    println!("clock ratio:       {:.6} (true 1.001000)", m.clock_ratio_estimate);
    println!(
        "impulse response:  {} taps, peak at {:.3} ms, energy {:.4}",
        m.ir.len(),
        m.ir.peak_index as f64 / fs * 1000.0,
        m.ir.energy()
    );

    // The same measurement by hand, without the session wrapper: build
    // the burst train, simulate, fold one period out of the recording.
    let spec = MlsSpec::new(12, -34.0, fs)?;
    let mls = generate_mls(&spec)?;
    let layout = PlaybackLayout::new(4, mls.len())?;
    let playback = build_playback(&mls, &layout)?;
    println!(
        "\nmanual pass: burst of {} samples played as {} ({} warmup + {} analysis periods)",
        mls.len(),
        playback.len(),
        layout.warmup_periods,
        layout.analysis_periods,
    );
    let ir = impulse_response(&mls, &mls, 1)?;
    println!(
        "self-deconvolution sanity: peak {:.4} at tap {}",
        ir.taps[ir.peak_index], ir.peak_index
    );
    Ok(())
}
