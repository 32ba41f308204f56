//! Decay-curve fitting and fidelity conversions.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dominant_frequency, levenberg_marquardt, LmOptions};
use crate::rng::stream_rng;

/// Mean return probability at one sequence length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub length: usize,
    pub mean: f64,
    pub stderr: f64,
    pub n_sequences: usize,
    pub n_shots: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RbFit {
    pub a: f64,
    pub b: f64,
    pub p: f64,
    /// Row-major covariance of `(A, B, p)`.
    pub covariance: Vec<Vec<f64>>,
    pub p_std: f64,
    /// `A` and `B` are not separately identifiable (flat data).
    pub degenerate: bool,
    pub chi2: f64,
}

impl RbFit {
    pub fn model(&self, length: f64) -> f64 {
        self.a * self.p.powf(length) + self.b
    }
}

/// Weighted least-squares fit of `A·p^L + B` with `p ∈ (0, 1]`.
pub fn fit_rb(data: &[DecayPoint]) -> Result<RbFit> {
    let mut lengths: Vec<usize> = data.iter().map(|d| d.length).collect();
    lengths.sort_unstable();
    lengths.dedup();
    if lengths.len() < 3 {
        return Err(Error::Fit("RB fit needs at least three distinct lengths".into()));
    }
    let pts: Vec<(f64, f64, f64)> = data
        .iter()
        .map(|d| {
            let floor = 1.0 / (4.0 * d.n_shots.max(1) as f64);
            let var = if d.stderr > 0.0 { d.stderr * d.stderr } else { floor };
            (d.length as f64, d.mean, var.sqrt())
        })
        .collect();
    let (ymin, ymax) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    if ymax - ymin < 1e-12 {
        // No decay at all: p = 1 and only A + B is identifiable.
        return Ok(RbFit {
            a: 0.0,
            b: ymax,
            p: 1.0,
            covariance: vec![vec![f64::NAN; 3]; 3],
            p_std: 0.0,
            degenerate: true,
            chi2: 0.0,
        });
    }
    let (first, last) = (
        pts.iter().min_by(|a, b| a.0.total_cmp(&b.0)).unwrap(),
        pts.iter().max_by(|a, b| a.0.total_cmp(&b.0)).unwrap(),
    );
    let b0 = last.1.min(first.1);
    let span = (first.1 - b0).abs().max(1e-6);
    // crude p seed from the first two distinct lengths
    let p0 = {
        let mut sorted = pts.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (l1, y1) = (sorted[0].0, sorted[0].1 - b0);
        let k = sorted.iter().position(|p| p.0 > l1).unwrap();
        let (l2, y2) = (sorted[k].0, sorted[k].1 - b0);
        if y1 > 0.0 && y2 > 0.0 {
            (y2 / y1).powf(1.0 / (l2 - l1)).clamp(0.05, 1.0)
        } else {
            0.9
        }
    };
    let resid = |p: &[f64]| -> Vec<f64> { pts.iter().map(|(l, y, s)| (p[0] * p[2].powf(*l) + p[1] - y) / s).collect() };
    let opts =
        LmOptions { lower: Some(vec![-2.0, -1.0, 1e-9]), upper: Some(vec![2.0, 2.0, 1.0]), ..Default::default() };
    let mut best = None;
    for ps in [p0, 0.5, 0.9, 0.99] {
        let fit = levenberg_marquardt(resid, &[span * ps.signum(), b0, ps], &opts)?;
        if best.as_ref().is_none_or(|b: &crate::numerics::LmFit| fit.cost < b.cost) {
            best = Some(fit);
        }
    }
    let fit = best.unwrap();
    let dof = pts.len().saturating_sub(3).max(1) as f64;
    let (a, b, p) = (fit.params[0], fit.params[1], fit.params[2]);
    let degenerate_flat = p > 1.0 - 1e-9;
    let cov = if degenerate_flat { None } else { fit.covariance(false) };
    let scale = (fit.cost / dof).max(1e-300);
    let covariance: Vec<Vec<f64>> = match &cov {
        Some(c) => (0..3).map(|i| (0..3).map(|k| c[(i, k)] * scale).collect()).collect(),
        None => vec![vec![f64::NAN; 3]; 3],
    };
    let p_std = covariance[2][2].max(0.0).sqrt();
    Ok(RbFit { a, b, p, p_std, degenerate: degenerate_flat || cov.is_none(), covariance, chi2: fit.cost })
}

/// `(1 + 3p)/4`: average two-qubit Clifford fidelity.
pub fn clifford_fidelity(p: f64) -> f64 {
    (1.0 + 3.0 * p) / 4.0
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InterleavedFidelity {
    pub fidelity: f64,
    pub ratio: f64,
    /// The interleaved decay was slower than the reference; the fidelity
    /// is reported as 1.
    pub ratio_exceeds_one: bool,
}

/// `(1 + 3 p_cz/p_ref)/4`.
pub fn interleaved_cz_fidelity(p_cz: f64, p_ref: f64) -> Result<InterleavedFidelity> {
    if !(p_ref > 0.0) {
        return Err(Error::Domain("reference decay must be > 0".into()));
    }
    let ratio = p_cz / p_ref;
    let exceeds = ratio > 1.0;
    Ok(InterleavedFidelity { fidelity: (1.0 + 3.0 * ratio.min(1.0)) / 4.0, ratio, ratio_exceeds_one: exceeds })
}

/// `1 − (1.5 r_cz + 8.25 r_sq)`.
pub fn composed_clifford_fidelity(r_cz: f64, r_sq: f64) -> f64 {
    1.0 - (1.5 * r_cz + 8.25 * r_sq)
}

/// `A exp(−(t/T2)²) sin(2πft + φ) + C`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayFit {
    pub amplitude: f64,
    /// Per unit of the time axis (MHz for µs).
    pub frequency: f64,
    pub phase: f64,
    pub offset: f64,
    /// `+∞` when no decay is resolved.
    pub t2: f64,
    pub t2_std: f64,
    /// T2 exceeds 100× the sampled span; treat as a lower bound.
    pub unbounded: bool,
}

fn gaussian_decay(p: &[f64], t: f64) -> f64 {
    // p = [A, f, φ, C, γ] with γ = 1/T2²
    p[0] * (-p[4] * t * t).exp() * (2.0 * PI * p[1] * t + p[2]).sin() + p[3]
}

/// Fit a Gaussian-damped sinusoid. The frequency is seeded from the FFT
/// peak and the decay is parameterised by `γ = 1/T2² ≥ 0`.
pub fn fit_gaussian_decay(t: &[f64], y: &[f64]) -> Result<DecayFit> {
    if t.len() != y.len() || t.len() < 8 {
        return Err(Error::Fit("need at least eight samples".into()));
    }
    let span = t.last().unwrap() - t[0];
    let dt = span / (t.len() - 1) as f64;
    let f0 = dominant_frequency(y, dt).ok_or_else(|| Error::Fit("no oscillation found".into()))?;
    if f0 * span < 2.0 {
        return Err(Error::Fit("fewer than two oscillation periods sampled".into()));
    }
    // Linear seed for amplitude, phase and offset at each trial decay.
    let seed = |gamma: f64| -> ([f64; 5], f64) {
        let basis: Vec<[f64; 3]> = t
            .iter()
            .map(|&ti| {
                let e = (-gamma * ti * ti).exp();
                [e * (2.0 * PI * f0 * ti).sin(), e * (2.0 * PI * f0 * ti).cos(), 1.0]
            })
            .collect();
        let mut ata = nalgebra::Matrix3::<f64>::zeros();
        let mut aty = nalgebra::Vector3::<f64>::zeros();
        for (row, yi) in basis.iter().zip(y) {
            for i in 0..3 {
                aty[i] += row[i] * yi;
                for k in 0..3 {
                    ata[(i, k)] += row[i] * row[k];
                }
            }
        }
        let sol = ata.lu().solve(&aty).unwrap_or_default();
        let (s, c, off) = (sol[0], sol[1], sol[2]);
        let p = [s.hypot(c), f0, c.atan2(s), off, gamma];
        let cost = t.iter().zip(y).map(|(ti, yi)| (gaussian_decay(&p, *ti) - yi).powi(2)).sum();
        (p, cost)
    };
    let mut best = seed(0.0);
    for k in 0..40 {
        let t2 = span * 0.05 * 1.2f64.powi(k);
        let cand = seed(1.0 / (t2 * t2));
        if cand.1 < best.1 {
            best = cand;
        }
    }
    let opts = LmOptions {
        lower: Some(vec![f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0]),
        ..Default::default()
    };
    let fit =
        levenberg_marquardt(|p| t.iter().zip(y).map(|(ti, yi)| gaussian_decay(p, *ti) - yi).collect(), &best.0, &opts)?;
    if !fit.converged {
        return Err(Error::Fit("decay fit did not converge".into()));
    }
    let p = &fit.params;
    let (mut amp, mut phase) = (p[0], p[2]);
    if amp < 0.0 {
        amp = -amp;
        phase += PI;
    }
    let gamma = p[4];
    let unbounded = gamma * span * span < 1e-4;
    let t2 = if gamma > 0.0 { 1.0 / gamma.sqrt() } else { f64::INFINITY };
    let gamma_std = fit.covariance(true).map(|c| c[(4, 4)].max(0.0).sqrt()).unwrap_or(f64::NAN);
    let t2_std = if gamma > 0.0 { 0.5 * gamma.powf(-1.5) * gamma_std } else { f64::INFINITY };
    Ok(DecayFit {
        amplitude: amp,
        frequency: p[1],
        phase: crate::dynamics::wrap(phase),
        offset: p[3],
        t2,
        t2_std,
        unbounded,
    })
}

/// Nonparametric bootstrap standard deviation of `estimator` over
/// `records`, reproducible for a fixed seed.
pub fn bootstrap<T, F>(estimator: F, records: &[T], resamples: usize, seed: u64) -> Result<f64>
where
    T: Clone + Sync,
    F: Fn(&[T]) -> f64 + Sync,
{
    if resamples < 100 {
        return Err(Error::Config("bootstrap needs at least 100 resamples".into()));
    }
    if records.is_empty() {
        return Err(Error::Config("bootstrap needs records".into()));
    }
    let n = records.len();
    let values: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let sample: Vec<T> = (0..n).map(|_| records[rng.gen_range(0..n)].clone()).collect();
            estimator(&sample)
        })
        .collect();
    let mean = values.iter().sum::<f64>() / resamples as f64;
    Ok((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (resamples - 1) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::standard_normal;

    fn synthetic(a: f64, b: f64, p: f64, lengths: &[usize]) -> Vec<DecayPoint> {
        lengths
            .iter()
            .map(|&l| DecayPoint {
                length: l,
                mean: a * p.powi(l as i32) + b,
                stderr: 0.01,
                n_sequences: 10,
                n_shots: 250,
            })
            .collect()
    }

    #[test]
    fn exact_curve_recovered() {
        let d = synthetic(0.5, 0.5, 0.99, &[1, 5, 10, 20, 50, 100, 200]);
        let f = fit_rb(&d).unwrap();
        assert!((f.a - 0.5).abs() < 1e-6 && (f.b - 0.5).abs() < 1e-6 && (f.p - 0.99).abs() < 1e-6, "{f:?}");
    }

    #[test]
    fn flat_data_is_degenerate() {
        let d: Vec<DecayPoint> = [1, 5, 10, 20]
            .iter()
            .map(|&l| DecayPoint { length: l, mean: 1.0, stderr: 0.0, n_sequences: 10, n_shots: 250 })
            .collect();
        let f = fit_rb(&d).unwrap();
        assert!((f.p - 1.0).abs() < 1e-6);
        assert!(f.degenerate);
        assert!((f.a + f.b - 1.0).abs() < 1e-6);
    }

    #[test]
    fn too_few_lengths() {
        assert!(fit_rb(&synthetic(0.5, 0.5, 0.9, &[1, 2])).is_err());
    }

    #[test]
    fn fidelity_conversions() {
        assert_eq!(clifford_fidelity(1.0), 1.0);
        assert_eq!(clifford_fidelity(0.0), 0.25);
        assert!((clifford_fidelity(0.8024) - 0.8518).abs() < 5e-5);
        let f = interleaved_cz_fidelity(0.98480 * 0.8, 0.8).unwrap();
        assert!((f.fidelity - 0.9886).abs() < 5e-5);
        assert_eq!(interleaved_cz_fidelity(0.0, 0.8).unwrap().fidelity, 0.25);
        let over = interleaved_cz_fidelity(0.9, 0.8).unwrap();
        assert!(over.ratio_exceeds_one && over.fidelity == 1.0);
        assert_eq!(composed_clifford_fidelity(0.0, 0.0), 1.0);
        assert!((composed_clifford_fidelity(0.0114, 0.0146) - 0.86245).abs() < 1e-12);
    }

    fn ramsey(t2: f64, f: f64, span: f64, noise: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = stream_rng(seed, 0);
        let t: Vec<f64> = (0..300).map(|k| span * k as f64 / 299.0).collect();
        let y = t
            .iter()
            .map(|&ti| {
                0.4 * (-(ti / t2).powi(2)).exp() * (2.0 * PI * f * ti + 0.3).sin()
                    + 0.5
                    + noise * standard_normal(&mut rng)
            })
            .collect();
        (t, y)
    }

    #[test]
    fn ramsey_and_echo_times_recovered() {
        let (t, y) = ramsey(5.385, 1.2, 15.0, 0.01, 1);
        let f = fit_gaussian_decay(&t, &y).unwrap();
        assert!((f.t2 / 5.385 - 1.0).abs() < 0.02, "{f:?}");
        let (t, y) = ramsey(39.799, 0.15, 100.0, 0.01, 2);
        let f = fit_gaussian_decay(&t, &y).unwrap();
        assert!((f.t2 / 39.799 - 1.0).abs() < 0.02, "{f:?}");
    }

    #[test]
    fn undamped_sinusoid_flagged() {
        let t: Vec<f64> = (0..200).map(|k| k as f64 * 0.05).collect();
        let y: Vec<f64> = t.iter().map(|ti| 0.3 * (2.0 * PI * 0.8 * ti).sin() + 0.5).collect();
        let f = fit_gaussian_decay(&t, &y).unwrap();
        assert!(f.unbounded);
        assert!(f.t2 > 100.0 * 10.0);
    }

    #[test]
    fn bootstrap_properties() {
        let recs = vec![1.0; 50];
        assert_eq!(bootstrap(|r: &[f64]| r[0], &recs, 200, 1).unwrap(), 0.0);
        let mut rng = stream_rng(9, 0);
        let shots: Vec<f64> = (0..1000).map(|_| if rng.gen::<f64>() < 0.5 { 1.0 } else { 0.0 }).collect();
        let mean = |r: &[f64]| r.iter().sum::<f64>() / r.len() as f64;
        let s1 = bootstrap(mean, &shots, 500, 4).unwrap();
        let want = (0.25f64 / 1000.0).sqrt();
        assert!((s1 / want - 1.0).abs() < 0.2);
        let s2 = bootstrap(mean, &shots, 1000, 4).unwrap();
        assert!((s2 / s1 - 1.0).abs() < 0.1);
        assert_eq!(s1, bootstrap(mean, &shots, 500, 4).unwrap());
    }
}
