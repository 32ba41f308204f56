//! Two-spin evolution under exchange schedules.
//!
//! Basis order is `|↓↓⟩, |↑↓⟩, |↓↑⟩, |↑↑⟩` with `|↑⟩ = |1⟩`. The first arrow
//! is spin 1 (Q5, least significant) and the second spin 2 (Q2), so index
//! `k` is the computational state of the register `(Q2, Q5)`.
//! Frequencies are in Hz, times in ns unless a name says otherwise.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exchange::{CoherenceTable, Exchange, T2Column};
use crate::numerics::{dominant_frequency, gaussian_expectation, Pchip};
use crate::quantum::{self, cis, CMat, ONE, ZERO};

pub const DIM: usize = 4;
/// Zeeman difference at the CZ operating point.
pub const DEFAULT_DEZ_HZ: f64 = 83e6;

/// `H / ħ` in rad/s for exchange `j_hz` and Zeeman difference `dez_hz`.
pub fn hamiltonian(j_hz: f64, dez_hz: f64) -> CMat {
    let w = 2.0 * PI;
    let mut h = CMat::zeros(4, 4);
    h[(0, 0)] = Complex64::new(w * j_hz / 4.0, 0.0);
    h[(1, 1)] = Complex64::new(w * (-j_hz / 4.0 + dez_hz), 0.0);
    h[(2, 2)] = Complex64::new(w * (-j_hz / 4.0 - dez_hz), 0.0);
    h[(3, 3)] = Complex64::new(w * j_hz / 4.0, 0.0);
    h[(1, 2)] = Complex64::new(w * j_hz / 2.0, 0.0);
    h[(2, 1)] = Complex64::new(w * j_hz / 2.0, 0.0);
    h
}

/// Propagator restricted to the structure the Hamiltonian preserves:
/// `|↓↓⟩` and `|↑↑⟩` evolve by phases, the antiparallel pair mixes.
#[derive(Debug, Clone, Copy)]
struct Block {
    d0: Complex64,
    d3: Complex64,
    m: [[Complex64; 2]; 2],
}

impl Block {
    fn identity() -> Self {
        Self { d0: ONE, d3: ONE, m: [[ONE, ZERO], [ZERO, ONE]] }
    }

    /// `exp(−i h H(j, dez))` with `h` in seconds.
    fn exp(j: f64, dez: f64, h: f64) -> Self {
        let w = 2.0 * PI;
        let outer = cis(-w * j / 4.0 * h);
        let bz = w * dez;
        let bx = w * j / 2.0;
        let om = bz.hypot(bx);
        let (s, c) = (om * h).sin_cos();
        let (sz, sx) = if om > 0.0 { (bz / om * s, bx / om * s) } else { (0.0, 0.0) };
        let pre = cis(w * j / 4.0 * h);
        Self {
            d0: outer,
            d3: outer,
            m: [
                [pre * Complex64::new(c, -sz), pre * Complex64::new(0.0, -sx)],
                [pre * Complex64::new(0.0, -sx), pre * Complex64::new(c, sz)],
            ],
        }
    }

    /// `self · other`.
    fn mul(&self, o: &Block) -> Block {
        let a = &self.m;
        let b = &o.m;
        Block {
            d0: self.d0 * o.d0,
            d3: self.d3 * o.d3,
            m: [
                [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
                [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
            ],
        }
    }

    fn to_matrix(self) -> CMat {
        let mut u = CMat::zeros(4, 4);
        u[(0, 0)] = self.d0;
        u[(3, 3)] = self.d3;
        u[(1, 1)] = self.m[0][0];
        u[(1, 2)] = self.m[0][1];
        u[(2, 1)] = self.m[1][0];
        u[(2, 2)] = self.m[1][1];
        u
    }

    fn max_diff(&self, o: &Block) -> f64 {
        let mut d = (self.d0 - o.d0).norm().max((self.d3 - o.d3).norm());
        for i in 0..2 {
            for k in 0..2 {
                d = d.max((self.m[i][k] - o.m[i][k]).norm());
            }
        }
        d
    }
}

/// Exchange shape within one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JProfile {
    Constant {
        j_hz: f64,
    },
    Ramp {
        start_hz: f64,
        end_hz: f64,
    },
    /// Linear sweep of the conveyor cycle, mapped through the exchange model.
    Cycles {
        c_start: f64,
        c_end: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub label: String,
    pub duration_ns: f64,
    pub j: JProfile,
    pub dez_hz: f64,
}

/// Piecewise exchange and Zeeman-difference trace.
#[derive(Debug, Clone)]
pub struct ExchangeSchedule {
    pub segments: Vec<Segment>,
    /// Maps cycles to exchange for `Cycles` segments.
    pub exchange: Option<Exchange>,
    /// Uniform multiplier on the exchange (a barrier-offset knob).
    pub j_scale: f64,
    /// Optional Zeeman difference versus cycle, overriding `dez_hz` in
    /// `Cycles` segments.
    pub dez_vs_cycle: Option<Pchip>,
}

#[derive(Debug, Serialize)]
struct ScheduleView<'a> {
    segments: &'a [Segment],
    j_scale: f64,
    total_ns: f64,
}

impl ExchangeSchedule {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let s = Self { segments, exchange: None, j_scale: 1.0, dez_vs_cycle: None };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(j_hz: f64, dez_hz: f64, duration_ns: f64) -> Result<Self> {
        Self::new(vec![Segment { label: "constant".into(), duration_ns, j: JProfile::Constant { j_hz }, dez_hz }])
    }

    pub fn with_exchange(mut self, ex: Exchange) -> Result<Self> {
        self.exchange = Some(ex);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.segments {
            if !(s.duration_ns >= 0.0) || !s.duration_ns.is_finite() {
                return Err(Error::Config(format!("segment {}: duration must be >= 0", s.label)));
            }
            if !s.dez_hz.is_finite() {
                return Err(Error::Config(format!("segment {}: ΔEz must be finite", s.label)));
            }
            match &s.j {
                JProfile::Constant { j_hz } if !(*j_hz >= 0.0) => {
                    return Err(Error::Config(format!("segment {}: J must be >= 0", s.label)))
                }
                JProfile::Ramp { start_hz, end_hz } if !(*start_hz >= 0.0 && *end_hz >= 0.0) => {
                    return Err(Error::Config(format!("segment {}: J must be >= 0", s.label)))
                }
                JProfile::Cycles { c_start, c_end } => {
                    let Some(ex) = &self.exchange else {
                        return Err(Error::Config(format!(
                            "segment {}: cycle profile needs an exchange model",
                            s.label
                        )));
                    };
                    let (lo, hi) = ex.domain();
                    for c in [c_start, c_end] {
                        if *c < lo || *c > hi {
                            return Err(Error::OutOfRange { value: *c, lo, hi });
                        }
                    }
                }
                _ => {}
            }
        }
        if !(self.j_scale >= 0.0) {
            return Err(Error::Config("J scale must be >= 0".into()));
        }
        Ok(())
    }

    pub fn total_ns(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_ns).sum()
    }

    /// Conveyor cycle at time `tau_ns` into segment `k`, if it is a cycle sweep.
    pub fn cycle_in(&self, k: usize, tau_ns: f64) -> Option<f64> {
        let s = &self.segments[k];
        match s.j {
            JProfile::Cycles { c_start, c_end } => {
                let f = if s.duration_ns > 0.0 { (tau_ns / s.duration_ns).clamp(0.0, 1.0) } else { 0.0 };
                Some(c_start + (c_end - c_start) * f)
            }
            _ => None,
        }
    }

    /// Exchange and Zeeman difference at time `tau_ns` into segment `k`.
    pub fn values_in(&self, k: usize, tau_ns: f64) -> Result<(f64, f64)> {
        let s = &self.segments[k];
        let f = if s.duration_ns > 0.0 { (tau_ns / s.duration_ns).clamp(0.0, 1.0) } else { 0.0 };
        let mut dez = s.dez_hz;
        let j = match s.j {
            JProfile::Constant { j_hz } => j_hz,
            JProfile::Ramp { start_hz, end_hz } => start_hz + (end_hz - start_hz) * f,
            JProfile::Cycles { .. } => {
                let c = self.cycle_in(k, tau_ns).unwrap();
                if let Some(p) = &self.dez_vs_cycle {
                    dez = p.eval(c)?;
                }
                self.exchange
                    .as_ref()
                    .ok_or_else(|| Error::Config("cycle profile needs an exchange model".into()))?
                    .j_at_cycle(c)?
            }
        };
        Ok((self.j_scale * j, dez))
    }

    /// Exchange at absolute time `t_ns`.
    pub fn j_at(&self, t_ns: f64) -> Result<f64> {
        let mut t0 = 0.0;
        for (k, s) in self.segments.iter().enumerate() {
            if t_ns <= t0 + s.duration_ns || k + 1 == self.segments.len() {
                return Ok(self.values_in(k, t_ns - t0)?.0);
            }
            t0 += s.duration_ns;
        }
        Ok(0.0)
    }

    /// `∫J dt` (dimensionless) by composite Simpson per segment.
    pub fn j_integral(&self) -> Result<f64> {
        let mut total = 0.0;
        for (k, s) in self.segments.iter().enumerate() {
            total += simpson(|tau| Ok(self.values_in(k, tau)?.0), s.duration_ns, 2000)? * 1e-9;
        }
        Ok(total)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ScheduleView {
            segments: &self.segments,
            j_scale: self.j_scale,
            total_ns: self.total_ns(),
        })?)
    }
}

fn simpson<F: Fn(f64) -> Result<f64>>(f: F, span: f64, n: usize) -> Result<f64> {
    if span <= 0.0 {
        return Ok(0.0);
    }
    let n = n + n % 2;
    let h = span / n as f64;
    let mut acc = f(0.0)? + f(span)?;
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h)?;
    }
    Ok(acc * h / 3.0)
}

const CF4_A1: f64 = (3.0 - 2.0 * 1.732_050_807_568_877_2) / 12.0;
const CF4_A2: f64 = (3.0 + 2.0 * 1.732_050_807_568_877_2) / 12.0;
const CF4_C1: f64 = 0.5 - 1.732_050_807_568_877_2 / 6.0;
const CF4_C2: f64 = 0.5 + 1.732_050_807_568_877_2 / 6.0;

fn segment_propagator(s: &ExchangeSchedule, k: usize, x_hz: f64, n: usize) -> Result<Block> {
    let d = s.segments[k].duration_ns;
    let h_ns = d / n as f64;
    let h = h_ns * 1e-9;
    let mut u = Block::identity();
    for i in 0..n {
        let t = i as f64 * h_ns;
        let (j1, z1) = s.values_in(k, t + CF4_C1 * h_ns)?;
        let (j2, z2) = s.values_in(k, t + CF4_C2 * h_ns)?;
        let first = Block::exp(2.0 * (CF4_A2 * j1 + CF4_A1 * j2), 2.0 * (CF4_A2 * z1 + CF4_A1 * z2) + x_hz, h / 2.0);
        let second = Block::exp(2.0 * (CF4_A1 * j1 + CF4_A2 * j2), 2.0 * (CF4_A1 * z1 + CF4_A2 * z2) + x_hz, h / 2.0);
        u = second.mul(&first).mul(&u);
    }
    Ok(u)
}

/// Sub-step count used for the last evolution and its convergence gap.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EvolveStats {
    pub max_substeps: usize,
    pub convergence_gap: f64,
}

/// Time-ordered propagator. `x_hz` is a static offset added to ΔEz.
/// Sub-steps double per segment until successive results agree to 1e-10
/// per entry. The `|↓↓⟩` amplitude is made real and positive.
pub fn evolve(s: &ExchangeSchedule, x_hz: f64) -> Result<CMat> {
    Ok(evolve_with_stats(s, x_hz)?.0)
}

pub fn evolve_with_stats(s: &ExchangeSchedule, x_hz: f64) -> Result<(CMat, EvolveStats)> {
    s.validate()?;
    let tol = 1e-10 / (s.segments.len().max(1) as f64);
    let mut total = Block::identity();
    let mut stats = EvolveStats { max_substeps: 0, convergence_gap: 0.0 };
    for (k, seg) in s.segments.iter().enumerate() {
        if seg.duration_ns == 0.0 {
            continue;
        }
        let mut n = 8;
        let mut prev = segment_propagator(s, k, x_hz, n)?;
        loop {
            n *= 2;
            let next = segment_propagator(s, k, x_hz, n)?;
            let gap = prev.max_diff(&next);
            prev = next;
            if gap < tol {
                stats.max_substeps = stats.max_substeps.max(n);
                stats.convergence_gap = stats.convergence_gap.max(gap);
                break;
            }
            if n > 1 << 22 {
                return Err(Error::Numerical(format!("segment {} did not converge", seg.label)));
            }
        }
        total = prev.mul(&total);
    }
    let norm = total.d0.norm();
    let phase = if norm > 0.0 { total.d0.conj() / norm } else { ONE };
    Ok((total.to_matrix() * phase, stats))
}

/// `φ00 + φ11 − φ01 − φ10` wrapped to `(−π, π]`.
pub fn conditional_phase(u: &CMat) -> f64 {
    let a = |k: usize| u[(k, k)].arg();
    wrap(a(0) + a(3) - a(1) - a(2))
}

pub fn wrap(phi: f64) -> f64 {
    let mut p = phi.rem_euclid(2.0 * PI);
    if p > PI {
        p -= 2.0 * PI;
    }
    p
}

/// Population transferred between the antiparallel states.
pub fn swap_error(u: &CMat) -> f64 {
    0.5 * (u[(1, 2)].norm_sqr() + u[(2, 1)].norm_sqr())
}

/// `(|tr(U_ideal† U_exp)|² + d) / (d(d+1))`.
pub fn average_gate_fidelity(u_exp: &CMat, u_ideal: &CMat) -> Result<f64> {
    let d = u_exp.nrows();
    if u_ideal.nrows() != d || u_exp.ncols() != d || u_ideal.ncols() != d {
        return Err(Error::Validation("unitaries must be square and of equal size".into()));
    }
    for (name, u) in [("U_exp", u_exp), ("U_ideal", u_ideal)] {
        let e = quantum::unitarity_error(u);
        if e > 1e-8 {
            return Err(Error::Validation(format!("{name} is not unitary (deviation {e:.2e})")));
        }
    }
    let t = quantum::trace(&(u_ideal.adjoint() * u_exp)).norm_sqr();
    let df = d as f64;
    Ok((t + df) / (df * (df + 1.0)))
}

/// CZ dressed with the single-qubit Z phases that best match `u`.
pub fn cz_with_local_phases(u: &CMat) -> CMat {
    let p0 = u[(0, 0)].arg();
    let a = u[(1, 1)].arg() - p0;
    let b = u[(2, 2)].arg() - p0;
    let diag = [cis(p0), cis(p0 + a), cis(p0 + b), -cis(p0 + a + b)];
    CMat::from_diagonal(&DVector::from_column_slice(&diag))
}

/// Infidelity against a CZ up to local Z rotations.
pub fn cz_infidelity(u: &CMat) -> Result<f64> {
    Ok(1.0 - average_gate_fidelity(u, &cz_with_local_phases(u))?)
}

fn diag_phase(g: &[f64; 4], x: f64) -> CMat {
    CMat::from_diagonal(&DVector::from_iterator(4, g.iter().map(|gk| cis(gk * x))))
}

/// Quasistatic diagonal-phase noise: entry `k` of the propagator picks up
/// phase `couplings[k] · x` with `x ~ N(0, σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
    pub couplings: [f64; 4],
}

/// `⟨F⟩` over the Gaussian offset, by Gauss-Hermite quadrature doubled until
/// the estimate moves by less than 1e-10.
pub fn noise_averaged_fidelity(u0: &CMat, u_ideal: &CMat, noise: &NoiseModel) -> Result<f64> {
    if !(noise.sigma >= 0.0) {
        return Err(Error::Domain("σ must be >= 0".into()));
    }
    average_gate_fidelity(u0, u_ideal)?;
    let m = u_ideal.adjoint() * u0;
    let diag: Vec<Complex64> = (0..4).map(|k| m[(k, k)]).collect();
    let offdiag_free = (0..4).all(|i| (0..4).all(|k| i == k || m[(i, k)].norm() < 1e-300));
    let d = 4.0;
    let f = |x: f64| -> f64 {
        let t = if offdiag_free {
            diag.iter().zip(&noise.couplings).map(|(z, g)| z * cis(g * x)).sum::<Complex64>()
        } else {
            quantum::trace(&(&m * diag_phase(&noise.couplings, x)))
        };
        (t.norm_sqr() + d) / (d * (d + 1.0))
    };
    Ok(gaussian_expectation(f, noise.sigma, 8, 1e-10).0)
}

/// Monte Carlo estimate of the same average, returning mean and standard error.
pub fn noise_averaged_fidelity_mc(
    u0: &CMat,
    u_ideal: &CMat,
    noise: &NoiseModel,
    samples: usize,
    seed: u64,
) -> (f64, f64) {
    use rayon::prelude::*;
    let m = u_ideal.adjoint() * u0;
    let diag: Vec<Complex64> = (0..4).map(|k| m[(k, k)]).collect();
    let chunks = 64;
    let per = samples.div_ceil(chunks);
    let (s1, s2, n) = (0..chunks)
        .into_par_iter()
        .map(|ch| {
            let mut rng = crate::rng::stream_rng(seed, ch as u64);
            let mut a = 0.0;
            let mut b = 0.0;
            let mut cnt = 0usize;
            for _ in 0..per.min(samples.saturating_sub(ch * per)) {
                let x = noise.sigma * crate::rng::standard_normal(&mut rng);
                let t: Complex64 = diag.iter().zip(&noise.couplings).map(|(z, g)| z * cis(g * x)).sum();
                let f = (t.norm_sqr() + 4.0) / 20.0;
                a += f;
                b += f * f;
                cnt += 1;
            }
            (a, b, cnt)
        })
        .reduce(|| (0.0, 0.0, 0), |x, y| (x.0 + y.0, x.1 + y.1, x.2 + y.2));
    let nf = n as f64;
    let mean = s1 / nf;
    let var = (s2 / nf - mean * mean).max(0.0);
    (mean, (var / nf).sqrt())
}

/// Rescale a quasistatic σ from one measurement horizon to another, for a
/// 1/f spectrum integrated from `1/t_m` up to the gate bandwidth.
pub fn sigma_rescale(t_e_s: f64, t_m_from_s: f64, t_m_to_s: f64) -> Result<f64> {
    if !(t_e_s > 0.0 && t_e_s < t_m_from_s && t_e_s < t_m_to_s) {
        return Err(Error::Domain("require 0 < t_e < t_m for both horizons".into()));
    }
    let a = 0.401 * t_m_to_s / t_e_s;
    let b = 0.401 * t_m_from_s / t_e_s;
    if a <= 1.0 || b <= 1.0 {
        return Err(Error::Domain("logarithm argument must exceed 1".into()));
    }
    Ok((a.ln() / b.ln()).sqrt())
}

/// Quasistatic frequency standard deviation (Hz) from a Gaussian Ramsey decay.
pub fn sigma_from_t2star(t2_us: f64) -> f64 {
    2f64.sqrt() / (2.0 * PI * t2_us * 1e-6)
}

/// Accumulated phase standard deviations along a schedule for the three
/// diagonal frequencies: `f_1` (Q5, Q2 down), `f_2` (Q2, Q5 down),
/// `f_3` (Q5, Q2 up). Each is `2π ∫ σ(c(t)) dt · rescale`.
pub fn dephasing_phase_stds(s: &ExchangeSchedule, coherence: &CoherenceTable, rescale: f64) -> Result<[f64; 3]> {
    let cols = [T2Column::Q5GivenQ2Down, T2Column::Q2GivenQ5Down, T2Column::Q5GivenQ2Up];
    let mut out = [0.0; 3];
    for (o, col) in out.iter_mut().zip(cols) {
        let mut total = 0.0;
        for (k, seg) in s.segments.iter().enumerate() {
            total += simpson(
                |tau| {
                    let c = s
                        .cycle_in(k, tau)
                        .ok_or_else(|| Error::Config(format!("segment {} has no cycle trajectory", seg.label)))?;
                    Ok(sigma_from_t2star(coherence.t2_at_cycle(c, col)?))
                },
                seg.duration_ns,
                2000,
            )?;
        }
        *o = 2.0 * PI * total * 1e-9 * rescale;
    }
    Ok(out)
}

/// Couplings `(0, Φ_1, Φ_2, Φ_1 + Φ_3)` of the diagonal-phase model for a
/// unit-variance offset.
pub fn diagonal_phase_couplings(stds: [f64; 3]) -> [f64; 4] {
    [0.0, stds[0], stds[1], stds[0] + stds[2]]
}

/// A conveyor stage of a CZ pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub label: String,
    pub duration_ns: f64,
    pub c_start: f64,
    pub c_end: f64,
    /// Conveyor frequency; when given, the cycle advance must equal
    /// frequency × duration.
    #[serde(default)]
    pub frequency_mhz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CzScheduleConfig {
    pub stages: Vec<StageConfig>,
    pub dez_mhz: f64,
}

impl Default for CzScheduleConfig {
    fn default() -> Self {
        let st = |label: &str, d: f64, a: f64, b: f64, f: Option<f64>| StageConfig {
            label: label.into(),
            duration_ns: d,
            c_start: a,
            c_end: b,
            frequency_mhz: f,
        };
        Self {
            stages: vec![
                st("load", 2.0, 0.0, 0.4, None),
                st("approach", 2.0, 0.4, 0.65, Some(125.0)),
                st("interaction", 25.0, 0.65, 0.9, Some(10.0)),
                st("separation", 25.0, 0.9, 0.65, Some(10.0)),
                st("retreat", 2.0, 0.65, 0.4, Some(125.0)),
                st("unload", 2.0, 0.4, 0.0, None),
            ],
            dez_mhz: DEFAULT_DEZ_HZ / 1e6,
        }
    }
}

/// Build the CZ exchange schedule from conveyor stages.
pub fn cz_schedule(cfg: &CzScheduleConfig, exchange: &Exchange) -> Result<ExchangeSchedule> {
    let mut segs = Vec::new();
    for st in &cfg.stages {
        if !(st.duration_ns > 0.0) {
            return Err(Error::Config(format!("stage {}: duration must be > 0", st.label)));
        }
        if let Some(f) = st.frequency_mhz {
            let advance = (st.c_end - st.c_start).abs();
            let expected = f * 1e6 * st.duration_ns * 1e-9;
            if (advance - expected).abs() > 1e-9 * expected.max(1.0) {
                return Err(Error::Config(format!(
                    "stage {}: cycle advance {advance} does not match {f} MHz × {} ns = {expected}",
                    st.label, st.duration_ns
                )));
            }
        }
        segs.push(Segment {
            label: st.label.clone(),
            duration_ns: st.duration_ns,
            j: JProfile::Cycles { c_start: st.c_start, c_end: st.c_end },
            dez_hz: cfg.dez_mhz * 1e6,
        });
    }
    ExchangeSchedule::new_unchecked(segs).with_exchange(exchange.clone())
}

impl ExchangeSchedule {
    fn new_unchecked(segments: Vec<Segment>) -> Self {
        Self { segments, exchange: None, j_scale: 1.0, dez_vs_cycle: None }
    }
}

/// Outcome of tuning the exchange scale to a conditional phase of π.
#[derive(Debug, Clone, Serialize)]
pub struct CzCalibration {
    pub j_scale: f64,
    pub conditional_phase: f64,
    pub j_integral: f64,
    pub coherent_infidelity: f64,
    pub swap_error: f64,
}

/// Find the exchange scale giving a conditional phase of exactly π.
pub fn calibrate_cz(s: &ExchangeSchedule) -> Result<(ExchangeSchedule, CzCalibration)> {
    let mut sched = s.clone();
    sched.j_scale = 1.0;
    let base = sched.j_integral()?;
    if !(base > 0.0) {
        return Err(Error::Numerical("schedule accumulates no exchange".into()));
    }
    let resid = |scale: f64, sched: &mut ExchangeSchedule| -> Result<f64> {
        sched.j_scale = scale;
        Ok(wrap(conditional_phase(&evolve(sched, 0.0)?) - PI))
    };
    let mut s0 = 0.5 / base;
    let mut r0 = resid(s0, &mut sched)?;
    let mut s1 = s0 * 1.01;
    let mut r1 = resid(s1, &mut sched)?;
    for _ in 0..50 {
        if r1.abs() < 1e-12 || r1 == r0 {
            break;
        }
        let s2 = s1 - r1 * (s1 - s0) / (r1 - r0);
        s0 = s1;
        r0 = r1;
        s1 = s2;
        r1 = resid(s1, &mut sched)?;
    }
    if r1.abs() > 1e-8 {
        return Err(Error::Numerical(format!("CZ calibration did not converge (residual {r1:.2e})")));
    }
    sched.j_scale = s1;
    let u = evolve(&sched, 0.0)?;
    let cal = CzCalibration {
        j_scale: s1,
        conditional_phase: conditional_phase(&u),
        j_integral: sched.j_integral()?,
        coherent_infidelity: cz_infidelity(&u)?,
        swap_error: swap_error(&u),
    };
    Ok((sched, cal))
}

/// Which basis state the partner spin starts in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpinState {
    Down,
    Up,
}

/// Parallel-spin probability after the decoupled controlled-phase sequence
/// `Rx(π/2)_Q2 · exchange(t/2) · Rx(π)⊗Rx(π) · exchange(t/2) · Rx(π/2)_Q2`
/// for each total exchange time in `wait_ns`.
pub fn dcphase_trace(j_hz: f64, dez_hz: f64, wait_ns: &[f64], other: SpinState) -> Result<Vec<f64>> {
    if wait_ns.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::Domain("wait times must be >= 0".into()));
    }
    let q2_half = quantum::embed(&quantum::rx(PI / 2.0), &[0], 2);
    let both_pi = quantum::kron(&quantum::rx(PI), &quantum::rx(PI));
    let psi0 = match other {
        SpinState::Down => 0,
        SpinState::Up => 1,
    };
    wait_ns
        .iter()
        .map(|&t| {
            let u = ExchangeSchedule::constant(j_hz, dez_hz, t / 2.0).and_then(|s| evolve(&s, 0.0))?;
            let total = &q2_half * &u * &both_pi * &u * &q2_half;
            let col = total.column(psi0);
            Ok(col[0].norm_sqr() + col[3].norm_sqr())
        })
        .collect()
}

/// Exchange inferred from a DCPhase trace: the trace oscillates at `J/2`
/// in the total exchange time.
pub fn dcphase_exchange(trace: &[f64], dt_ns: f64) -> Option<f64> {
    dominant_frequency(trace, dt_ns * 1e-9).map(|f| 2.0 * f)
}

/// Resonance of one spin at position `x_nm` given its partner's state:
/// `f_0(x) ± J/2`.
pub fn edsr_frequency(x_nm: f64, gradient: &Pchip, other: SpinState, j_hz: f64) -> Result<f64> {
    let f0 = gradient.eval(x_nm)?;
    Ok(match other {
        SpinState::Down => f0 - j_hz / 2.0,
        SpinState::Up => f0 + j_hz / 2.0,
    })
}

/// Built-in resonance-versus-position profile `(x_nm, f0_Hz)`.
pub fn edsr_gradient_fixture() -> Pchip {
    let (x, f) = crate::exchange::read_two_columns(include_str!("../data/edsr_gradient.csv").as_bytes())
        .expect("built-in fixture parses");
    Pchip::new(x, f).expect("built-in fixture is valid")
}

/// Fringe pair of a target-qubit Ramsey experiment around the CZ with the
/// control in `|0⟩` and `|1⟩`, for final-pulse phases `thetas`. The target
/// is Q5 (spin 1), the control Q2. `heating_shift_hz` adds a detuning on the
/// target for the duration of the gate.
pub fn cz_fringes(u_cz: &CMat, thetas: &[f64], gate_ns: f64, heating_shift_hz: f64) -> (Vec<f64>, Vec<f64>) {
    let extra = quantum::embed(&quantum::rz(2.0 * PI * heating_shift_hz * gate_ns * 1e-9), &[1], 2);
    let pre = quantum::embed(&quantum::rx(PI / 2.0), &[1], 2);
    let u = &extra * u_cz;
    let fringe = |ctrl: usize, theta: f64| {
        let post =
            quantum::embed(&(quantum::rz(theta).adjoint() * quantum::rx(PI / 2.0) * quantum::rz(theta)), &[1], 2);
        let psi = &post * &u * &pre * CMat::from_fn(4, 1, |i, _| if i == 2 * ctrl { ONE } else { ZERO });
        // probability that the target ends in |1⟩
        psi[(2 * ctrl + 1, 0)].norm_sqr()
    };
    (thetas.iter().map(|&t| fringe(0, t)).collect(), thetas.iter().map(|&t| fringe(1, t)).collect())
}

/// Per-offset fringe-pair metric and the chosen barrier offset.
#[derive(Debug, Clone, Serialize)]
pub struct CalibrationSearch {
    pub offsets_mv: Vec<f64>,
    /// Variance over the fringe phase of `P(ctrl=0) + P(ctrl=1)`, zero when
    /// the fringes are shifted by exactly π.
    pub stripe_variance: Vec<f64>,
    pub conditional_phase: Vec<f64>,
    pub best_offset_mv: f64,
    pub on_boundary: bool,
}

/// Scan barrier offsets, each scaling the exchange by `exp((v − v_ref)/v_0)`,
/// and pick the offset whose fringe pair is closest to a π shift.
pub fn cz_calibration_search(
    base: &ExchangeSchedule,
    offsets_mv: &[f64],
    v_ref_mv: f64,
    v0_mv: f64,
    heating_shift_hz: f64,
) -> Result<CalibrationSearch> {
    if offsets_mv.len() < 3 {
        return Err(Error::Config("calibration search needs at least three offsets".into()));
    }
    if !(v0_mv > 0.0) {
        return Err(Error::Config("v0 must be > 0".into()));
    }
    let thetas: Vec<f64> = (0..32).map(|k| 2.0 * PI * k as f64 / 32.0).collect();
    let gate_ns = base.total_ns();
    let mut var = Vec::new();
    let mut cph = Vec::new();
    for &v in offsets_mv {
        let mut s = base.clone();
        s.j_scale = base.j_scale * ((v - v_ref_mv) / v0_mv).exp();
        let u = evolve(&s, 0.0)?;
        let (p0, p1) = cz_fringes(&u, &thetas, gate_ns, heating_shift_hz);
        let sums: Vec<f64> = p0.iter().zip(&p1).map(|(a, b)| a + b).collect();
        let mean = sums.iter().sum::<f64>() / sums.len() as f64;
        var.push(sums.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / sums.len() as f64);
        cph.push(conditional_phase(&u));
    }
    let k = (0..var.len()).min_by(|&a, &b| var[a].total_cmp(&var[b])).unwrap();
    Ok(CalibrationSearch {
        offsets_mv: offsets_mv.to_vec(),
        best_offset_mv: offsets_mv[k],
        on_boundary: k == 0 || k + 1 == var.len(),
        stripe_variance: var,
        conditional_phase: cph,
    })
}

/// Phase of the fringe `P(θ) ≈ ½(1 + V cos(θ − φ))`, from its first Fourier
/// coefficient.
pub fn fringe_phase(thetas: &[f64], p: &[f64]) -> f64 {
    let (mut a, mut b) = (0.0, 0.0);
    for (t, v) in thetas.iter().zip(p) {
        a += v * t.cos();
        b += v * t.sin();
    }
    b.atan2(a)
}

/// Mixed-unitary form of quasistatic noise acting after `u`: Gauss-Hermite
/// nodes `(weight, D(x)·u)`.
pub fn dephasing_channel(u: &CMat, noise: &NoiseModel, nodes: usize) -> Vec<(f64, CMat)> {
    let (xs, ws) = crate::numerics::gauss_hermite(nodes);
    xs.iter().zip(ws).map(|(x, w)| (w, diag_phase(&noise.couplings, x * noise.sigma) * u)).collect()
}

/// Same couplings with σ chosen so that the averaged CZ infidelity is `target`.
pub fn scale_noise_to_infidelity(noise: &NoiseModel, target: f64) -> Result<NoiseModel> {
    if !(target > 0.0 && target < 0.5) {
        return Err(Error::Domain("target infidelity must lie in (0, 0.5)".into()));
    }
    let cz = quantum::cz();
    let infid =
        |sigma: f64| -> Result<f64> { Ok(1.0 - noise_averaged_fidelity(&cz, &cz, &NoiseModel { sigma, ..*noise })?) };
    let mut hi = noise.sigma.max(1e-6);
    while infid(hi)? < target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Numerical("noise couplings cannot reach the target infidelity".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if infid(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(NoiseModel { sigma: 0.5 * (lo + hi), ..*noise })
}

/// Coherent and dephasing error budget of the calibrated shuttle CZ.
#[derive(Debug, Clone, Serialize)]
pub struct CzBudget {
    pub calibration: CzCalibration,
    pub sigma_rescale: f64,
    pub phase_stds: [f64; 3],
    pub noise: NoiseModel,
    pub coherent_infidelity: f64,
    pub dephasing_infidelity: f64,
    pub gate_ns: f64,
}

/// Calibrate the CZ and evaluate its error budget, rescaling σ from a
/// `t_m_from_s` to a `t_m_to_s` measurement horizon. Returns the calibrated
/// schedule, its propagator and the budget.
pub fn cz_fidelity_budget(
    cfg: &CzScheduleConfig,
    exchange: &Exchange,
    coherence: &CoherenceTable,
    t_m_from_s: f64,
    t_m_to_s: f64,
) -> Result<(ExchangeSchedule, CMat, CzBudget)> {
    let (sched, cal) = calibrate_cz(&cz_schedule(cfg, exchange)?)?;
    let u = evolve(&sched, 0.0)?;
    let gate_ns = sched.total_ns();
    let r = sigma_rescale(gate_ns * 1e-9, t_m_from_s, t_m_to_s)?;
    let stds = dephasing_phase_stds(&sched, coherence, r)?;
    let noise = NoiseModel { sigma: 1.0, couplings: diagonal_phase_couplings(stds) };
    let cz = quantum::cz();
    let dephasing = 1.0 - noise_averaged_fidelity(&cz, &cz, &noise)?;
    let budget = CzBudget {
        coherent_infidelity: cal.coherent_infidelity,
        calibration: cal,
        sigma_rescale: r,
        phase_stds: stds,
        noise,
        dephasing_infidelity: dephasing,
        gate_ns,
    };
    Ok((sched, u, budget))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eig(m: &CMat) -> Vec<f64> {
        quantum::hermitian_eigenvalues(m)
    }

    #[test]
    fn hamiltonian_spectra() {
        let h = hamiltonian(0.0, 83e6);
        let w = 2.0 * PI;
        let want = [-w * 83e6, 0.0, 0.0, w * 83e6];
        for (a, b) in eig(&h).iter().zip(want) {
            assert!((a - b).abs() < 1e-3);
        }
        let j = 10e6;
        let ev = eig(&hamiltonian(j, 0.0));
        assert!((ev[0] + w * 0.75 * j).abs() < 1e-3);
        for e in &ev[1..] {
            assert!((e - w * 0.25 * j).abs() < 1e-3);
        }
    }

    #[test]
    fn block_exp_matches_dense_exponential() {
        for (j, z, h) in [(33e6, 83e6, 1e-9), (5e6, -20e6, 3e-9), (0.0, 0.0, 1e-9)] {
            let dense = quantum::expm_hermitian(&hamiltonian(j, z), h);
            let blk = Block::exp(j, z, h).to_matrix();
            assert!(quantum::max_abs_diff(&dense, &blk) < 1e-12);
        }
    }

    #[test]
    fn zero_duration_is_identity() {
        let s = ExchangeSchedule::constant(10e6, 83e6, 0.0).unwrap();
        assert!(quantum::max_abs_diff(&evolve(&s, 0.0).unwrap(), &quantum::identity(4)) < 1e-15);
    }

    #[test]
    fn constant_exchange_half_integral_gives_pi() {
        let s = ExchangeSchedule::constant(25e6, 830e6, 20.0).unwrap();
        let u = evolve(&s, 0.0).unwrap();
        assert!((conditional_phase(&u).abs() - PI).abs() < 1e-3);
    }

    #[test]
    fn constant_exchange_is_exact_against_dense_exponential() {
        let s = ExchangeSchedule::constant(12e6, 40e6, 17.0).unwrap();
        let u = evolve(&s, 0.0).unwrap();
        let mut want = quantum::expm_hermitian(&hamiltonian(12e6, 40e6), 17e-9);
        let ph = want[(0, 0)].conj() / want[(0, 0)].norm();
        want *= ph;
        assert!(quantum::max_abs_diff(&u, &want) < 1e-10);
    }

    #[test]
    fn cz_schedule_defaults() {
        let ex = Exchange::cz_operation();
        let s = cz_schedule(&CzScheduleConfig::default(), &ex).unwrap();
        assert!((s.total_ns() - 58.0).abs() < 1e-12);
        let mut bad = CzScheduleConfig::default();
        bad.stages[2].frequency_mhz = Some(12.0);
        assert!(matches!(cz_schedule(&bad, &ex), Err(Error::Config(_))));
    }

    #[test]
    fn stage_arithmetic() {
        assert!((0.25f64 / 125e6 * 1e9 - 2.0).abs() < 1e-12);
        assert!((0.25f64 / 10e6 * 1e9 - 25.0).abs() < 1e-12);
    }

    #[test]
    fn fidelity_formula() {
        let u = quantum::cz();
        assert!((average_gate_fidelity(&u, &u).unwrap() - 1.0).abs() < 1e-15);
        let x = quantum::kron(&quantum::pauli(1), &quantum::identity(2));
        assert!((average_gate_fidelity(&x, &quantum::identity(4)).unwrap() - 0.2).abs() < 1e-15);
        let bad = CMat::identity(4, 4) * Complex64::new(1.1, 0.0);
        assert!(matches!(average_gate_fidelity(&bad, &u), Err(Error::Validation(_))));
    }

    #[test]
    fn small_phase_expansion() {
        // For diag phases ε_k, 1 - F ≈ (d/(d+1)) Var(ε) to second order.
        let eps = [0.0, 0.003, -0.002, 0.001];
        let u = diag_phase(&eps, 1.0);
        let exact = 1.0 - average_gate_fidelity(&u, &quantum::identity(4)).unwrap();
        let mean = eps.iter().sum::<f64>() / 4.0;
        let var = eps.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 4.0;
        let series = 4.0 * 4.0 / 20.0 * var;
        assert!((exact - series).abs() < 1e-3 * series);
    }

    #[test]
    fn noise_average_limits() {
        let u = quantum::cz();
        let zero = NoiseModel { sigma: 0.0, couplings: [0.0, 1.0, 2.0, 3.0] };
        assert_eq!(noise_averaged_fidelity(&u, &u, &zero).unwrap(), 1.0);
        let global = NoiseModel { sigma: 3.0, couplings: [1.0; 4] };
        assert!((noise_averaged_fidelity(&u, &u, &global).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gauss_hermite_matches_monte_carlo() {
        let u = quantum::cz();
        let noise = NoiseModel { sigma: 0.7, couplings: [0.0, 0.3, 0.5, 1.1] };
        let gh = noise_averaged_fidelity(&u, &u, &noise).unwrap();
        let (mc, se) = noise_averaged_fidelity_mc(&u, &u, &noise, 1_000_000, 11);
        assert!((gh - mc).abs() < 3.0 * se, "gh {gh} mc {mc} se {se}");
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(sigma_rescale(58e-9, 138.0, 138.0).unwrap(), 1.0);
        let r = sigma_rescale(58e-9, 138.0, 5160.0).unwrap();
        assert!((r - 1.084).abs() < 1e-3);
        assert!(sigma_rescale(1.0, 2.0, 3.0).is_err());
        assert!(sigma_rescale(0.0, 2.0, 3.0).is_err());
    }

    #[test]
    fn dcphase_behaviour() {
        let dt = 2.0;
        let ts: Vec<f64> = (0..400).map(|k| k as f64 * dt).collect();
        let flat = dcphase_trace(0.0, 83e6, &ts, SpinState::Down).unwrap();
        assert!(flat.iter().all(|p| (p - flat[0]).abs() < 1e-9));
        let tr = dcphase_trace(10e6, 83e6, &ts, SpinState::Down).unwrap();
        let j = dcphase_exchange(&tr, dt).unwrap();
        assert!((j - 10e6).abs() < 0.01 * 10e6, "{j}");
    }

    #[test]
    fn edsr_branches() {
        let g = edsr_gradient_fixture();
        let f0 = g.eval(150.0).unwrap();
        assert_eq!(edsr_frequency(150.0, &g, SpinState::Up, 0.0).unwrap(), f0);
        let up = edsr_frequency(150.0, &g, SpinState::Up, 4e6).unwrap();
        let dn = edsr_frequency(150.0, &g, SpinState::Down, 4e6).unwrap();
        assert!((up - dn - 4e6).abs() < 1e-3);
        // Q2 moves toward the channel centre as c grows: frequency drifts down.
        let xs: Vec<f64> = (0..=9).map(|k| 90.0 + 180.0 * 0.1 * k as f64 * 0.7).collect();
        let fs: Vec<f64> = xs.iter().map(|x| edsr_frequency(*x, &g, SpinState::Down, 0.0).unwrap()).collect();
        assert!(fs.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn ramped_pulse_beats_rectangular() {
        // Equal ∫J dt and peak J; the ramped pulse is longer but adiabatic.
        let peak = 33e6;
        let area = 0.5;
        let rect = ExchangeSchedule::constant(peak, 83e6, area / peak * 1e9).unwrap();
        let ramp_ns = 10.0;
        let flat_ns = area / peak * 1e9 - ramp_ns;
        let seg = |label: &str, d: f64, j: JProfile| Segment { label: label.into(), duration_ns: d, j, dez_hz: 83e6 };
        let ramped = ExchangeSchedule::new(vec![
            seg("up", ramp_ns, JProfile::Ramp { start_hz: 0.0, end_hz: peak }),
            seg("flat", flat_ns, JProfile::Constant { j_hz: peak }),
            seg("down", ramp_ns, JProfile::Ramp { start_hz: peak, end_hz: 0.0 }),
        ])
        .unwrap();
        assert!((rect.j_integral().unwrap() - ramped.j_integral().unwrap()).abs() < 1e-9);
        let e_rect = swap_error(&evolve(&rect, 0.0).unwrap());
        let e_ramp = swap_error(&evolve(&ramped, 0.0).unwrap());
        assert!(e_ramp < e_rect, "ramp {e_ramp} rect {e_rect}");
    }

    #[test]
    fn calibration_search_finds_constructed_optimum() {
        let ex = Exchange::cz_operation();
        let s = cz_schedule(&CzScheduleConfig::default(), &ex).unwrap();
        let (cal, _) = calibrate_cz(&s).unwrap();
        // The calibrated scale corresponds to offset 10 mV for v_ref = 10 mV.
        let offs: Vec<f64> = (0..9).map(|k| 6.0 + k as f64).collect();
        let res = cz_calibration_search(&cal, &offs, 10.0, 14.0, 0.0).unwrap();
        assert_eq!(res.best_offset_mv, 10.0);
        assert!(!res.on_boundary);
        let thetas: Vec<f64> = (0..64).map(|k| 2.0 * PI * k as f64 / 64.0).collect();
        let u = evolve(&cal, 0.0).unwrap();
        let (p0, p1) = cz_fringes(&u, &thetas, 58.0, 0.0);
        let d = wrap(fringe_phase(&thetas, &p0) - fringe_phase(&thetas, &p1));
        assert!((d.abs() - PI).abs() < 1e-6);
        // A heating detuning shifts both fringes the same way.
        let (h0, _) = cz_fringes(&u, &thetas, 58.0, 2e6);
        let shift = wrap(fringe_phase(&thetas, &h0) - fringe_phase(&thetas, &p0));
        assert!(shift.abs() > 0.1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn random_schedules_stay_unitary_and_converged(
            js in prop::collection::vec(0.0f64..40e6, 1..4),
            ds in prop::collection::vec(0.5f64..20.0, 1..4),
            dez in -100e6f64..100e6,
        ) {
            let segs: Vec<Segment> = js.iter().zip(&ds).enumerate().map(|(i, (j, d))| Segment {
                label: format!("s{i}"),
                duration_ns: *d,
                j: if i % 2 == 0 { JProfile::Constant { j_hz: *j } } else { JProfile::Ramp { start_hz: 0.0, end_hz: *j } },
                dez_hz: dez,
            }).collect();
            let s = ExchangeSchedule::new(segs).unwrap();
            let (u, stats) = evolve_with_stats(&s, 0.0).unwrap();
            prop_assert!(quantum::unitarity_error(&u) < 1e-10);
            prop_assert!(stats.convergence_gap < 1e-9);
        }

        #[test]
        fn zz_phase_law(j in 1e6f64..20e6, d in 5.0f64..60.0) {
            let s = ExchangeSchedule::constant(j, 10.0 * j, d).unwrap();
            let u = evolve(&s, 0.0).unwrap();
            let want = wrap(-2.0 * PI * j * d * 1e-9);
            prop_assert!(wrap(conditional_phase(&u) - want).abs() < 1e-3);
        }

        #[test]
        fn rescale_monotone(a in 140.0f64..1e4, b in 1.0f64..1e3) {
            let r1 = sigma_rescale(58e-9, 138.0, a).unwrap();
            let r2 = sigma_rescale(58e-9, 138.0, a + b).unwrap();
            prop_assert!(r2 > r1);
        }
    }
}
