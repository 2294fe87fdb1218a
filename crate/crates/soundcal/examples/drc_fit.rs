//! Recover a loudspeaker's dynamic range compression curve from a
//! 1 kHz level sweep and fit the four-parameter model to it.

use soundcal::drc::{fit_drc, knee_floor, DrcParams};
use soundcal::sim::{PlaybackChain, SimTransducer, SimEnvironment};
use soundcal::tone::{measure_gain_curve, standard_gain_levels};

fn main() -> soundcal::Result<()> {
    let truth = DrcParams::new(0.0, -21.0, 10.0, 0.5);
    let chain = PlaybackChain {
        speaker: SimTransducer { drc: Some(truth.clone()), ..SimTransducer::delta() },
        microphone: SimTransducer::delta(),
        env: SimEnvironment::quiet(),
    };

    let points = measure_gain_curve(&chain, &standard_gain_levels(), 1000.0)?;
    println!("   in dB    out dB      thd");
    for p in &points {
        println!("{:8.1} {:9.2} {:8.5}", p.in_db, p.out_db, p.thd);
    }

    let fit = fit_drc(&points)?;
    println!("\n             truth      fitted");
    println!("T        {:9.2} {:11.3}", truth.t, fit.params.t);
    println!("W        {:9.2} {:11.3}", truth.w, fit.params.w);
    println!("Q        {:9.2} {:11.3}", truth.q, fit.params.q);
    println!("gain     {:9.2} {:11.3}", truth.gain_db, fit.params.gain_db);
    println!("\nrms residual {:.4} dB, accepted: {}", fit.rms_error_db, fit.accepted);
    println!(
        "knee floor (largest linearly reproduced level): {:.2} dB",
        knee_floor(&fit.params)
    );
    Ok(())
}
