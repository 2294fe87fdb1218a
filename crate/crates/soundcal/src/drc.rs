//! Static dynamic-range-compression model: forward evaluation, a
//! derivative-free least-squares fit to measured gain curves, and the
//! 1 dB RMS acceptance gate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tone::GainPoint;

/// A gain-curve fit worse than this RMS residual fails the gate.
pub const RMS_LIMIT_DB: f64 = 1.0;

/// Compression curve parameters. Below the knee the system is linear
/// (slope 1); above it the slope drops to `q` dB/dB; a knee of width
/// `w` blends the two quadratically. `background_db` models an
/// additive acoustic noise floor that dominates faint outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrcParams {
    pub gain_db: f64,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "W")]
    pub w: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    pub background_db: Option<f64>,
}

impl DrcParams {
    pub fn new(gain_db: f64, t: f64, w: f64, q: f64) -> Self {
        Self { gain_db, t, w, q, background_db: None }
    }
}

/// Result of fitting [`DrcParams`] to gain-curve points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrcFit {
    pub params: DrcParams,
    pub rms_error_db: f64,
    pub accepted: bool,
}

/// Largest input level that is still reproduced linearly.
pub fn knee_floor(params: &DrcParams) -> f64 {
    params.t - params.w / 2.0
}

fn compressed_db(in_db: f64, t: f64, w: f64, q: f64) -> f64 {
    if in_db > t + w / 2.0 {
        t + q * (in_db - t)
    } else if w > 0.0 && in_db > t - w / 2.0 {
        let d = in_db - (t - w / 2.0);
        in_db - (1.0 - q) * d * d / (2.0 * w)
    } else {
        in_db
    }
}

/// Output level for a steady input level, in dB.
pub fn drc_out(in_db: f64, params: &DrcParams) -> f64 {
    let out = compressed_db(in_db, params.t, params.w, params.q) + params.gain_db;
    match params.background_db {
        Some(bg) => 10.0 * (10f64.powf(out / 10.0) + 10f64.powf(bg / 10.0)).log10(),
        None => out,
    }
}

/// RMS residual of the model against the points, with the gain term
/// solved analytically when no background is present (it enters the
/// model linearly).
fn eval(points: &[GainPoint], x: &[f64], with_bg: bool) -> (f64, f64) {
    let (t, w, q) = (x[0], x[1], x[2]);
    if !(0.0..=1.0).contains(&q) || q == 0.0 || w < 0.0 {
        return (1e6, 0.0);
    }
    if with_bg {
        let (gain, bg) = (x[3], x[4]);
        let mut sq = 0.0;
        for p in points {
            let out = 10.0
                * (10f64.powf((compressed_db(p.in_db, t, w, q) + gain) / 10.0)
                    + 10f64.powf(bg / 10.0))
                .log10();
            sq += (p.out_db - out).powi(2);
        }
        ((sq / points.len() as f64).sqrt(), gain)
    } else {
        let gain = points
            .iter()
            .map(|p| p.out_db - compressed_db(p.in_db, t, w, q))
            .sum::<f64>()
            / points.len() as f64;
        let sq: f64 = points
            .iter()
            .map(|p| (p.out_db - compressed_db(p.in_db, t, w, q) - gain).powi(2))
            .sum();
        ((sq / points.len() as f64).sqrt(), gain)
    }
}

/// Nelder-Mead simplex descent. Returns (best point, best value,
/// converged by function-value spread).
fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    scale: f64,
    max_iter: usize,
) -> (Vec<f64>, f64, bool) {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        let step = scale * (0.5 + 0.1 * v[i].abs());
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];

        if values[worst] - values[best] < 1e-12 {
            return (simplex[best].clone(), values[best], true);
        }

        let mut centroid = vec![0.0; n];
        for (i, v) in simplex.iter().enumerate() {
            if i != worst {
                for (c, s) in centroid.iter_mut().zip(v) {
                    *c += s / n as f64;
                }
            }
        }

        let point_at = |coef: f64, centroid: &[f64], worst_pt: &[f64]| -> Vec<f64> {
            centroid
                .iter()
                .zip(worst_pt)
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let reflected = point_at(1.0, &centroid, &simplex[worst]);
        let fr = f(&reflected);
        if fr < values[best] {
            let expanded = point_at(2.0, &centroid, &simplex[worst]);
            let fe = f(&expanded);
            if fe < fr {
                simplex[worst] = expanded;
                values[worst] = fe;
            } else {
                simplex[worst] = reflected;
                values[worst] = fr;
            }
        } else if fr < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = fr;
        } else {
            let contracted = point_at(-0.5, &centroid, &simplex[worst]);
            let fc = f(&contracted);
            if fc < values[worst] {
                simplex[worst] = contracted;
                values[worst] = fc;
            } else {
                let best_pt = simplex[best].clone();
                for i in 0..=n {
                    if i == best {
                        continue;
                    }
                    for (s, b) in simplex[i].iter_mut().zip(&best_pt) {
                        *s = b + 0.5 * (*s - b);
                    }
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap())
        .unwrap();
    (simplex[best].clone(), values[best], false)
}

/// Fit the compression model to measured gain points by minimizing the
/// RMS output residual. Multi-start: a deterministic coarse grid over
/// threshold, knee width, and slope seeds a simplex refinement from the
/// three best cells. The background term is enabled only when the
/// faint end of the curve flattens out.
pub fn fit_drc(points: &[GainPoint]) -> Result<DrcFit> {
    if points.len() < 6 {
        return Err(Error::InsufficientPoints(format!(
            "need at least 6 gain points, got {}",
            points.len()
        )));
    }
    let min_in = points.iter().map(|p| p.in_db).fold(f64::INFINITY, f64::min);
    let max_in = points.iter().map(|p| p.in_db).fold(f64::NEG_INFINITY, f64::max);
    if max_in - min_in < 20.0 {
        return Err(Error::InsufficientPoints(format!(
            "gain points span only {:.1} dB of input, need 20",
            max_in - min_in
        )));
    }

    let with_bg = faint_end_flattens(points, min_in);

    let mut seeds: Vec<(f64, Vec<f64>)> = Vec::new();
    for i in 0..5 {
        let t = min_in + (max_in - min_in) * i as f64 / 4.0;
        for &w in &[1.0, 5.0, 10.0, 20.0] {
            for &q in &[0.3, 0.5, 0.7, 1.0] {
                let x = if with_bg {
                    let bg0 = points.iter().map(|p| p.out_db).fold(f64::INFINITY, f64::min) - 1.0;
                    let gain0 = gain_guess(points, min_in, max_in);
                    vec![t, w, q, gain0, bg0]
                } else {
                    vec![t, w, q]
                };
                let (rms, _) = eval(points, &x, with_bg);
                seeds.push((rms, x));
            }
        }
    }
    seeds.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut converged_any = false;
    for (_, seed) in seeds.iter().take(3) {
        let mut x = seed.clone();
        let mut fx = f64::INFINITY;
        let mut scale = 1.0;
        for restart in 0..5 {
            let (nx, nfx, conv) =
                nelder_mead(|v| eval(points, v, with_bg).0, &x, scale, 2000);
            converged_any |= conv;
            let improved = fx - nfx;
            x = nx;
            fx = nfx;
            scale = 0.1;
            if restart > 0 && improved < 1e-10 {
                break;
            }
        }
        if best.as_ref().map_or(true, |(_, b)| fx < *b) {
            best = Some((x, fx));
        }
    }
    let (x, rms) = best.unwrap();
    if !converged_any && rms > 1.0 {
        return Err(Error::NonConvergence { best_rms_db: rms });
    }

    let (_, gain) = eval(points, &x, with_bg);
    let params = DrcParams {
        gain_db: if with_bg { x[3] } else { gain },
        t: x[0],
        w: x[1].max(0.0),
        q: x[2],
        background_db: if with_bg { Some(x[4]) } else { None },
    };
    Ok(DrcFit { params, rms_error_db: rms, accepted: rms <= RMS_LIMIT_DB })
}

/// Slope of the gain curve over its lowest 10 dB of input. A linear or
/// compressive system shows slope 1 there; a floor of additive
/// background noise flattens it out.
fn faint_end_flattens(points: &[GainPoint], min_in: f64) -> bool {
    let faint: Vec<&GainPoint> =
        points.iter().filter(|p| p.in_db <= min_in + 10.0).collect();
    if faint.len() < 3 {
        return false;
    }
    let n = faint.len() as f64;
    let mx = faint.iter().map(|p| p.in_db).sum::<f64>() / n;
    let my = faint.iter().map(|p| p.out_db).sum::<f64>() / n;
    let num: f64 = faint.iter().map(|p| (p.in_db - mx) * (p.out_db - my)).sum();
    let den: f64 = faint.iter().map(|p| (p.in_db - mx).powi(2)).sum();
    den > 0.0 && num / den < 0.5
}

fn gain_guess(points: &[GainPoint], min_in: f64, max_in: f64) -> f64 {
    let mid: Vec<&GainPoint> = points
        .iter()
        .filter(|p| p.in_db >= min_in + (max_in - min_in) * 0.3)
        .collect();
    if mid.is_empty() {
        return 0.0;
    }
    mid.iter().map(|p| p.out_db - p.in_db).sum::<f64>() / mid.len() as f64
}
