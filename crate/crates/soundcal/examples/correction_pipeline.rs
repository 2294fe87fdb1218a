//! The whole correction loop on a deliberately ragged loudspeaker:
//! measure its response, invert it, play a corrected burst, and
//! compare the spectral spread before and after.

use std::path::Path;

use soundcal::session::{run_calibration_session, SessionConfig};
use soundcal::signals::population_sd;
use soundcal::sim::load_chain;

fn main() -> soundcal::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let chain = load_chain(&fixtures.join("chain_ragged.json"))?;

    let report = run_calibration_session(&chain, &SessionConfig::default())?;
    let correction = report.correction.as_ref().expect("session reached the check stage");
    let flat = &correction.flatness;

    let uncorrected: Vec<f64> = correction
        .spectra
        .freq_hz
        .iter()
        .zip(&correction.spectra.mls_sound_db)
        .filter(|(f, _)| **f >= flat.band_lo_hz && **f <= flat.band_hi_hz)
        .filter_map(|(_, v)| *v)
        .collect();

    println!("band:              {:.0} Hz to {:.0} Hz", flat.band_lo_hz, flat.band_hi_hz);
    println!("correction cutoff: {:.0} Hz (power-limited)", correction.cutoff_hz);
    println!("uncorrected sd:    {:.2} dB", population_sd(&uncorrected));
    println!("corrected sd:      {:.2} dB (gate limit 3.00 dB)", flat.sd_db);
    println!("session accepted:  {}", report.accepted);

    let mls = report.mls.as_ref().unwrap();
    println!(
        "\nimpulse response {} taps at {:.0} Hz, inverse filter {} taps",
        mls.truncated_ir.len(),
        report.sample_rate_hz,
        mls.inverse_filter.taps.len(),
    );
    if let Some(rt) = mls.schroeder.rt60_sec {
        println!("decay time toward -60 dB: {rt:.3} s");
    }
    Ok(())
}
