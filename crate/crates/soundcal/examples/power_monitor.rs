//! Recording power over time. Calibration recordings should hold a
//! steady level; the monitor summarizes 100 ms windows and flags a
//! recording whose level swings wildly (loose cable, bumped stand,
//! someone talking over the measurement).

use soundcal::signals::{generate_sine, power_over_time, SampledSignal};

fn main() -> soundcal::Result<()> {
    let fs = 48000.0;

    let steady = generate_sine(1000.0, 2.0, -20.0, fs)?;
    let series = power_over_time(&steady, 0.1)?;
    println!(
        "steady tone:      sd {:.3} dB over {} windows, wild: {}",
        series.sd_db,
        series.times_sec.len(),
        series.exceeds(10.0)
    );

    // The same tone with a dropout in the middle third.
    let mut samples = steady.samples.clone();
    let third = samples.len() / 3;
    for v in &mut samples[third..2 * third] {
        *v *= 0.001;
    }
    let interrupted = SampledSignal::new(samples, fs);
    let series = power_over_time(&interrupted, 0.1)?;
    println!(
        "interrupted tone: sd {:.3} dB over {} windows, wild: {}",
        series.sd_db,
        series.times_sec.len(),
        series.exceeds(10.0)
    );

    println!("\nwindow levels of the interrupted recording (dB):");
    for (t, p) in series.times_sec.iter().zip(&series.power_db) {
        println!("  {t:5.2} s {p:9.2}");
    }
    Ok(())
}
