//! Total harmonic distortion across playback levels. Below the
//! compression knee the chain reproduces the tone cleanly; above it
//! the per-window gain changes faster than the tone period and
//! harmonics appear.

use soundcal::drc::{knee_floor, DrcParams};
use soundcal::sim::{PlaybackChain, SimEnvironment, SimTransducer};
use soundcal::tone::{measure_gain_point, standard_gain_levels};

fn main() -> soundcal::Result<()> {
    let params = DrcParams::new(0.0, -20.0, 4.0, 0.5);
    let floor = knee_floor(&params);
    let chain = PlaybackChain {
        speaker: SimTransducer { drc: Some(params), ..SimTransducer::delta() },
        microphone: SimTransducer::delta(),
        env: SimEnvironment::quiet(),
    };

    println!("compression knee floor at {floor:.1} dB\n");
    println!("   in dB     thd %   regime");
    for (i, &level) in standard_gain_levels().iter().enumerate() {
        let (point, _recording) = measure_gain_point(&chain, level, 1000.0, i as u64)?;
        let regime = if level < floor { "linear" } else { "compressed" };
        println!("{:8.1} {:9.4}   {}", point.in_db, 100.0 * point.thd, regime);
    }
    Ok(())
}
