use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Options for [`levenberg_marquardt`].
#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Stop when the relative cost reduction falls below this.
    pub ftol: f64,
    /// Stop when the relative parameter step falls below this.
    pub xtol: f64,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iter: 500, ftol: 1e-15, xtol: 1e-12, lower: None, upper: None }
    }
}

/// Result of a least-squares fit.
#[derive(Debug, Clone)]
pub struct LmFit {
    pub params: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Jacobian of the residuals at the solution.
    pub jacobian: DMatrix<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LmFit {
    /// Parameter covariance `(JᵀJ)⁻¹`, optionally scaled by the reduced
    /// residual variance `cost / (n - m)`.
    pub fn covariance(&self, scale_by_residuals: bool) -> Option<DMatrix<f64>> {
        let jtj = self.jacobian.transpose() * &self.jacobian;
        let inv = jtj.try_inverse()?;
        if !scale_by_residuals {
            return Some(inv);
        }
        let dof = self.residuals.len().saturating_sub(self.params.len());
        let s2 = if dof > 0 { self.cost / dof as f64 } else { 0.0 };
        Some(inv * s2)
    }
}

fn clamp(p: &mut [f64], opts: &LmOptions) {
    if let Some(lo) = &opts.lower {
        for (x, l) in p.iter_mut().zip(lo) {
            if *x < *l {
                *x = *l;
            }
        }
    }
    if let Some(hi) = &opts.upper {
        for (x, h) in p.iter_mut().zip(hi) {
            if *x > *h {
                *x = *h;
            }
        }
    }
}

fn numeric_jacobian<F>(f: &F, p: &[f64], r0: &[f64], opts: &LmOptions) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = r0.len();
    let m = p.len();
    let mut jac = DMatrix::zeros(n, m);
    let mut work = p.to_vec();
    for j in 0..m {
        let h = 1e-6 * p[j].abs().max(1e-6);
        let hi_ok = opts.upper.as_ref().is_none_or(|u| p[j] + h <= u[j]);
        let lo_ok = opts.lower.as_ref().is_none_or(|l| p[j] - h >= l[j]);
        let (rp, rm, span) = match (hi_ok, lo_ok) {
            (true, true) => {
                work[j] = p[j] + h;
                let rp = f(&work);
                work[j] = p[j] - h;
                let rm = f(&work);
                (rp, rm, 2.0 * h)
            }
            (true, false) => {
                work[j] = p[j] + h;
                (f(&work), r0.to_vec(), h)
            }
            _ => {
                work[j] = p[j] - h;
                (r0.to_vec(), f(&work), h)
            }
        };
        work[j] = p[j];
        for i in 0..n {
            jac[(i, j)] = (rp[i] - rm[i]) / span;
        }
    }
    jac
}

/// Minimize `Σ r_i(p)²` with a damped Gauss-Newton iteration and a
/// central-difference Jacobian. Box bounds are enforced by clamping.
pub fn levenberg_marquardt<F>(f: F, p0: &[f64], opts: &LmOptions) -> Result<LmFit>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut p = p0.to_vec();
    clamp(&mut p, opts);
    let mut r = f(&p);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite residuals at the initial guess".into()));
    }
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let m = p.len();

    while iterations < opts.max_iter {
        iterations += 1;
        let jac = numeric_jacobian(&f, &p, &r, opts);
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        if g.amax() < 1e-300 {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for k in 0..m {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
            clamp(&mut trial, opts);
            let rt = f(&trial);
            let ct: f64 = rt.iter().map(|v| v * v).sum();
            if ct.is_finite() && ct <= cost {
                let dp: f64 = trial.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let pn: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                let rel_cost = (cost - ct) / cost.max(1e-300);
                p = trial;
                r = rt;
                let prev = cost;
                cost = ct;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if dp <= opts.xtol * (pn + opts.xtol) || rel_cost <= opts.ftol || prev == 0.0 {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // No downhill step at any damping: stationary to working precision.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    let jacobian = numeric_jacobian(&f, &p, &r, opts);
    Ok(LmFit { params: p, residuals: r, jacobian, cost, iterations, converged })
}
