//! Reverberation time from backward integration: build decaying
//! impulse responses with known time constants and read the decay
//! back off the integrated energy curve.

use rand::{Rng, SeedableRng};
use soundcal::mls::{rt60_from_curve, schroeder_curve, ImpulseResponse};

fn main() -> soundcal::Result<()> {
    let fs = 48000.0;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);

    println!("  true RT    measured    error");
    for rt in [0.15, 0.3, 0.6, 1.0] {
        let lambda = 6.907755 / rt;
        let n = (1.5 * rt * fs) as usize;
        let taps: Vec<f64> = (0..n)
            .map(|i| {
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                sign * (-lambda * i as f64 / fs).exp()
            })
            .collect();
        let ir = ImpulseResponse::new(taps, fs);
        let curve = schroeder_curve(&ir)?;
        let got = rt60_from_curve(&curve, -5.0, -25.0).expect("fit range reached");
        println!("{:8.3} s {:9.3} s {:7.1} %", rt, got, 100.0 * (got - rt) / rt);
    }

    println!("\nthe -5 to -25 dB stretch of the curve is fitted and extrapolated to -60 dB");
    Ok(())
}
