//! Phenomenological exchange and coherence models versus conveyor cycle and
//! barrier voltage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{levenberg_marquardt, LmOptions, Pchip};

/// `J_0 · exp(v / v_0)`.
pub fn j_exponential(v_b3_mv: f64, j0_hz: f64, v0_mv: f64) -> Result<f64> {
    if !(v0_mv > 0.0) {
        return Err(Error::Domain(format!("v_0 must be > 0, got {v0_mv}")));
    }
    Ok(j0_hz * (v_b3_mv / v0_mv).exp())
}

/// Logistic saturation `J_max / (1 + exp(−(c − c_0)/w))`.
pub fn j_saturating(c: f64, j_max_hz: f64, c0: f64, w: f64) -> f64 {
    j_max_hz / (1.0 + (-(c - c0) / w).exp())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ExchangeModel {
    Exponential { j0_hz: f64, v0_mv: f64 },
    Table { c: Vec<f64>, j_hz: Vec<f64> },
    Saturating { j_max_hz: f64, c0: f64, w: f64 },
}

/// An exchange model ready for queries.
#[derive(Debug, Clone)]
pub struct Exchange {
    model: ExchangeModel,
    interp: Option<Pchip>,
}

impl Exchange {
    pub fn new(model: ExchangeModel) -> Result<Self> {
        let interp = match &model {
            ExchangeModel::Exponential { v0_mv, .. } => {
                if !(*v0_mv > 0.0) {
                    return Err(Error::Config("v0_mv must be > 0".into()));
                }
                None
            }
            ExchangeModel::Table { c, j_hz } => {
                if j_hz.iter().any(|&j| j < 0.0) {
                    return Err(Error::Config("tabulated J must be >= 0".into()));
                }
                Some(Pchip::new(c.clone(), j_hz.clone())?)
            }
            ExchangeModel::Saturating { j_max_hz, w, .. } => {
                if !(*j_max_hz >= 0.0) || !(*w > 0.0) {
                    return Err(Error::Config("saturating model needs J_max >= 0 and w > 0".into()));
                }
                None
            }
        };
        Ok(Self { model, interp })
    }

    pub fn table(c: Vec<f64>, j_hz: Vec<f64>) -> Result<Self> {
        Self::new(ExchangeModel::Table { c, j_hz })
    }

    pub fn model(&self) -> &ExchangeModel {
        &self.model
    }

    /// Cycle range over which queries are defined.
    pub fn domain(&self) -> (f64, f64) {
        match &self.interp {
            Some(p) => p.domain(),
            None => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// Exchange at conveyor cycle `c`. For the exponential variant the
    /// argument is the barrier offset in mV.
    pub fn j_at_cycle(&self, c: f64) -> Result<f64> {
        let j = match &self.model {
            ExchangeModel::Exponential { j0_hz, v0_mv } => j_exponential(c, *j0_hz, *v0_mv)?,
            ExchangeModel::Table { .. } => self.interp.as_ref().unwrap().eval(c)?,
            ExchangeModel::Saturating { j_max_hz, c0, w } => j_saturating(c, *j_max_hz, *c0, *w),
        };
        Ok(j.max(0.0))
    }

    /// Load a `(c, J_Hz)` fixture.
    pub fn from_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let (c, j) = read_two_columns(r)?;
        Self::table(c, j)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_csv(std::fs::File::open(path)?)
    }

    /// The exchange trajectory at the CZ operating point.
    pub fn cz_operation() -> Self {
        Self::from_csv(include_str!("../data/exchange_cz_operation.csv").as_bytes()).expect("built-in fixture parses")
    }
}

/// Read a two-column numeric CSV with a header row.
pub fn read_two_columns<R: std::io::Read>(r: R) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut a = Vec::new();
    let mut b = Vec::new();
    for rec in rdr.deserialize::<(f64, f64)>() {
        let (x, y) = rec?;
        a.push(x);
        b.push(y);
    }
    if a.is_empty() {
        return Err(Error::Config("fixture has no rows".into()));
    }
    Ok((a, b))
}

pub fn peak_vs_barrier_fixture() -> (Vec<f64>, Vec<f64>) {
    read_two_columns(include_str!("../data/exchange_peak_vs_b3.csv").as_bytes()).expect("built-in fixture parses")
}

pub fn merged_fixture() -> (Vec<f64>, Vec<f64>) {
    read_two_columns(include_str!("../data/exchange_merged.csv").as_bytes()).expect("built-in fixture parses")
}

/// Least-squares fit of `ln J = ln J_0 + v/v_0` over points with `J > 0`.
pub fn fit_exponential(v_mv: &[f64], j_hz: &[f64]) -> Result<ExchangeModel> {
    let pts: Vec<(f64, f64)> = v_mv.iter().zip(j_hz).filter(|(_, j)| **j > 0.0).map(|(v, j)| (*v, j.ln())).collect();
    if pts.len() < 2 {
        return Err(Error::Fit("need at least two positive J values".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all barrier offsets are equal".into()));
    }
    let slope = sxy / sxx;
    if !(slope > 0.0) {
        return Err(Error::Fit("J does not increase with barrier offset".into()));
    }
    Ok(ExchangeModel::Exponential { j0_hz: (my - slope * mx).exp(), v0_mv: 1.0 / slope })
}

/// Fit the logistic saturation model on `ln J` over points with `J > 0`.
pub fn fit_saturating(c: &[f64], j_hz: &[f64]) -> Result<ExchangeModel> {
    let pts: Vec<(f64, f64)> = c.iter().zip(j_hz).filter(|(_, j)| **j > 0.0).map(|(c, j)| (*c, *j)).collect();
    if pts.len() < 3 {
        return Err(Error::Fit("need at least three positive J values".into()));
    }
    let j_peak = pts.iter().map(|p| p.1).fold(0.0, f64::max);
    let c_mid = pts.iter().min_by(|a, b| (a.1 - 0.5 * j_peak).abs().total_cmp(&(b.1 - 0.5 * j_peak).abs())).unwrap().0;
    // Parameters: ln J_max, c0, ln w.
    let p0 = [j_peak.ln(), c_mid, (0.1f64).ln()];
    let fit = levenberg_marquardt(
        |p| pts.iter().map(|(c, j)| (j_saturating(*c, p[0].exp(), p[1], p[2].exp())).ln() - j.ln()).collect(),
        &p0,
        &LmOptions::default(),
    )?;
    if !fit.converged {
        return Err(Error::Fit("saturating fit did not converge".into()));
    }
    Ok(ExchangeModel::Saturating { j_max_hz: fit.params[0].exp(), c0: fit.params[1], w: fit.params[2].exp() })
}

/// Which dephasing time: qubit and the state of its partner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum T2Column {
    Q2GivenQ5Down,
    Q2GivenQ5Up,
    Q5GivenQ2Down,
    Q5GivenQ2Up,
}

impl T2Column {
    pub const ALL: [T2Column; 4] =
        [T2Column::Q2GivenQ5Down, T2Column::Q2GivenQ5Up, T2Column::Q5GivenQ2Down, T2Column::Q5GivenQ2Up];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoherenceRow {
    pub c: f64,
    pub t2_us: [f64; 4],
}

/// Dephasing times versus conveyor cycle, interpolated monotonically.
#[derive(Debug, Clone)]
pub struct CoherenceTable {
    rows: Vec<CoherenceRow>,
    interp: Vec<Pchip>,
}

impl CoherenceTable {
    pub fn new(rows: Vec<CoherenceRow>) -> Result<Self> {
        if rows.iter().any(|r| r.t2_us.iter().any(|t| !(*t > 0.0))) {
            return Err(Error::Config("all T2* values must be > 0".into()));
        }
        let cs: Vec<f64> = rows.iter().map(|r| r.c).collect();
        let interp = (0..4)
            .map(|k| Pchip::new(cs.clone(), rows.iter().map(|r| r.t2_us[k]).collect()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows, interp })
    }

    pub fn from_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let mut rows = Vec::new();
        for rec in rdr.deserialize::<(f64, f64, f64, f64, f64)>() {
            let (c, a, b, d, e) = rec?;
            rows.push(CoherenceRow { c, t2_us: [a, b, d, e] });
        }
        Self::new(rows)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_csv(std::fs::File::open(path)?)
    }

    pub fn cz_operation() -> Self {
        Self::from_csv(include_str!("../data/coherence_cz_operation.csv").as_bytes()).expect("built-in fixture parses")
    }

    pub fn rows(&self) -> &[CoherenceRow] {
        &self.rows
    }

    pub fn domain(&self) -> (f64, f64) {
        self.interp[0].domain()
    }

    /// T2* in µs at cycle `c`.
    pub fn t2_at_cycle(&self, c: f64, which: T2Column) -> Result<f64> {
        self.interp[which.index()].eval(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exponential_examples() {
        assert_eq!(j_exponential(0.0, 3e5, 14.0).unwrap(), 3e5);
        assert!((j_exponential(14.0 * 2f64.ln(), 3e5, 14.0).unwrap() - 6e5).abs() < 1e-6);
        assert!(j_exponential(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn table_knots_and_hull() {
        let ex = Exchange::table(vec![0.0, 0.9], vec![0.0, 33e6]).unwrap();
        assert_eq!(ex.j_at_cycle(0.9).unwrap(), 33e6);
        assert!(matches!(ex.j_at_cycle(0.95), Err(Error::OutOfRange { .. })));
        let fixture = Exchange::cz_operation();
        assert_eq!(fixture.j_at_cycle(0.9).unwrap(), 33e6);
    }

    #[test]
    fn peak_fit_reproduces_fixture() {
        let (v, j) = peak_vs_barrier_fixture();
        let model = fit_exponential(&v, &j).unwrap();
        let ex = Exchange::new(model).unwrap();
        for (vi, ji) in v.iter().zip(&j) {
            let rel = (ex.j_at_cycle(*vi).unwrap() - ji).abs() / ji;
            assert!(rel < 0.15, "offset {vi}: {rel}");
        }
    }

    #[test]
    fn exponential_fit_is_exact_on_log_linear_data() {
        let v: Vec<f64> = (0..6).map(|i| 60.0 + 10.0 * i as f64).collect();
        let j: Vec<f64> = v.iter().map(|x| j_exponential(*x, 1234.0, 13.0).unwrap()).collect();
        match fit_exponential(&v, &j).unwrap() {
            ExchangeModel::Exponential { j0_hz, v0_mv } => {
                assert!((j0_hz / 1234.0 - 1.0).abs() < 1e-9);
                assert!((v0_mv - 13.0).abs() < 1e-9);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn saturating_fit_tracks_merged_fixture() {
        let (c, j) = merged_fixture();
        let ex = Exchange::new(fit_saturating(&c, &j).unwrap()).unwrap();
        for (ci, ji) in c.iter().zip(&j) {
            let rel = (ex.j_at_cycle(*ci).unwrap() - ji).abs() / ji;
            assert!(rel < 0.25, "c={ci}: {rel}");
        }
        let ExchangeModel::Saturating { j_max_hz, .. } = ex.model().clone() else { unreachable!() };
        assert!((ex.j_at_cycle(50.0).unwrap() - j_max_hz).abs() < 1e-6 * j_max_hz);
    }

    #[test]
    fn coherence_fixture_knots() {
        let t = CoherenceTable::cz_operation();
        assert_eq!(t.t2_at_cycle(0.0, T2Column::Q2GivenQ5Down).unwrap(), 5.39);
        assert_eq!(t.t2_at_cycle(0.0, T2Column::Q5GivenQ2Up).unwrap(), 7.14);
        assert!(t.t2_at_cycle(1.1, T2Column::Q2GivenQ5Up).is_err());
    }

    proptest! {
        #[test]
        fn log_linear(v in -50.0f64..150.0, dv in 0.1f64..30.0) {
            let a = j_exponential(v, 1e5, 12.0).unwrap().ln();
            let b = j_exponential(v + dv, 1e5, 12.0).unwrap().ln();
            prop_assert!(((b - a) - dv / 12.0).abs() < 1e-9);
        }

        #[test]
        fn saturating_monotone_bounded(c in -2.0f64..3.0, dc in 0.0f64..1.0, w in 0.01f64..0.5) {
            let a = j_saturating(c, 20e6, 0.8, w);
            let b = j_saturating(c + dc, 20e6, 0.8, w);
            prop_assert!(b >= a && b <= 20e6);
        }

        #[test]
        fn fixture_interpolant_nonnegative_and_bracketed(c in 0.0f64..1.0) {
            let ex = Exchange::cz_operation();
            prop_assert!(ex.j_at_cycle(c).unwrap() >= 0.0);
            let t = CoherenceTable::cz_operation();
            let rows = t.rows();
            let k = rows.iter().rposition(|r| r.c <= c).unwrap().min(rows.len() - 2);
            for col in T2Column::ALL {
                let v = t.t2_at_cycle(c, col).unwrap();
                let (a, b) = (rows[k].t2_us[col as usize], rows[k + 1].t2_us[col as usize]);
                prop_assert!(v >= a.min(b) - 1e-12 && v <= a.max(b) + 1e-12);
            }
        }
    }
}
