//! The shipped scenarios. Each reads its own `[section]` of the config and
//! writes CSV/JSON files into the output directory.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{merge, ResolvedConfig};
use crate::benchmarking::{
    clifford_fidelity, engineered_cz_error, fit_rb, run_irb, Depolarizing, Ideal, NoiseChannel, RbConfig, RbSimulator,
};
use crate::conveyor::{table_conveyor, BuiltinTable, DcTreatment, WaveformTable};
use crate::dynamics::{
    calibrate_cz, cz_calibration_search, cz_fidelity_budget, cz_fringes, cz_schedule, dcphase_exchange, dcphase_trace,
    evolve, fringe_phase, CzScheduleConfig, SpinState, StageConfig, DEFAULT_DEZ_HZ,
};
use crate::error::{Error, Result};
use crate::exchange::{
    fit_exponential, fit_saturating, merged_fixture, peak_vs_barrier_fixture, CoherenceTable, Exchange, ExchangeModel,
    T2Column,
};
use crate::readout::correct_readout;
use crate::rng::{mix_seed, stream_rng};
use crate::teleport::{
    exact_outcome, run_with_circuit, teleport_fidelity_from_bell, teleport_qpt, BellLabel, Circuit, InputPrep,
    Ordering, TeleportConfig, TeleportNoise, TomoSetting,
};
use crate::tomography::{bell_fidelity, bootstrap_bell_fidelity, pauli_bases, qst_mle, sampled_counts};

pub const SCENARIOS: [&str; 10] = [
    "potential-sweep",
    "j-vs-cycle",
    "dcphase-map",
    "cz-fidelity-budget",
    "rb",
    "irb",
    "cz-calibration",
    "teleport-rabi",
    "teleport-phase-map",
    "teleport-qpt",
];

/// Library modules each scenario draws on, recorded in the manifest.
pub fn scenario_modules(name: &str) -> &'static [&'static str] {
    match name {
        "potential-sweep" => &["conveyor"],
        "j-vs-cycle" => &["exchange"],
        "dcphase-map" => &["exchange", "dynamics"],
        "cz-fidelity-budget" => &["exchange", "dynamics"],
        "rb" => &["benchmarking"],
        "irb" => &["benchmarking", "dynamics", "exchange"],
        "cz-calibration" => &["dynamics", "exchange"],
        "teleport-rabi" | "teleport-phase-map" => &["teleport", "readout"],
        "teleport-qpt" => &["teleport", "readout", "tomography"],
        _ => &[],
    }
}

/// Config section name for a scenario (`teleport-qpt` → `teleport_qpt`).
pub fn section_name(scenario: &str) -> String {
    scenario.replace('-', "_")
}

/// Files written by a scenario, in write order.
pub struct Outputs<'a> {
    dir: &'a Path,
    pub files: Vec<String>,
}

impl<'a> Outputs<'a> {
    pub fn new(dir: &'a Path) -> Self {
        Self { dir, files: Vec::new() }
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.dir.join(name))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        self.files.push(name.into());
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(self.dir.join(name), text)?;
        self.files.push(name.into());
        Ok(())
    }

    pub fn raw(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.files.push(name.into());
        Ok(())
    }
}

/// Parse and check a scenario's section without running it.
pub fn validate_scenario(name: &str, cfg: &ResolvedConfig) -> Result<()> {
    let sec = section_name(name);
    for key in cfg.table.keys() {
        if key != "scenario" && key != "include" && key != &sec {
            return Err(Error::Config(format!("unexpected top-level key '{key}' for scenario '{name}'")));
        }
    }
    match name {
        "potential-sweep" => cfg.section::<PotentialSweep>(&sec)?.check(cfg).map(|_| ()),
        "j-vs-cycle" => cfg.section::<JVsCycle>(&sec)?.check(),
        "dcphase-map" => cfg.section::<DcphaseMap>(&sec)?.check(cfg).map(|_| ()),
        "cz-fidelity-budget" => cfg.section::<CzBudgetParams>(&sec)?.schedule().map(|_| ()),
        "rb" => cfg.section::<RbParams>(&sec)?.rb_config(0).and_then(|c| c.validate()),
        "irb" => {
            let p = cfg.section::<IrbParams>(&sec)?;
            p.rb.rb_config(0)?.validate()?;
            p.check()
        }
        "cz-calibration" => cfg.section::<CzCalibrationParams>(&sec)?.check(),
        "teleport-rabi" => cfg.section::<TeleportRabi>(&sec)?.check().map(|_| ()),
        "teleport-phase-map" => cfg.section::<TeleportPhaseMap>(&sec)?.check().map(|_| ()),
        "teleport-qpt" => cfg.section::<TeleportQpt>(&sec)?.check().map(|_| ()),
        _ => Err(Error::Config(format!("unknown scenario '{name}'; expected one of {}", SCENARIOS.join(", ")))),
    }
}

pub fn run_scenario(name: &str, cfg: &ResolvedConfig, seed: u64, out: &mut Outputs) -> Result<()> {
    validate_scenario(name, cfg)?;
    let sec = section_name(name);
    match name {
        "potential-sweep" => potential_sweep(&cfg.section(&sec)?, cfg, out),
        "j-vs-cycle" => j_vs_cycle(&cfg.section(&sec)?, out),
        "dcphase-map" => dcphase_map(&cfg.section(&sec)?, cfg, out),
        "cz-fidelity-budget" => cz_budget(&cfg.section(&sec)?, out),
        "rb" => rb(&cfg.section(&sec)?, seed, out),
        "irb" => irb(&cfg.section(&sec)?, seed, out),
        "cz-calibration" => cz_calibration(&cfg.section(&sec)?, out),
        "teleport-rabi" => teleport_rabi(&cfg.section(&sec)?, seed, out),
        "teleport-phase-map" => teleport_phase_map(&cfg.section(&sec)?, seed, out),
        "teleport-qpt" => teleport_qpt_scenario(&cfg.section(&sec)?, seed, out),
        _ => unreachable!("validated above"),
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Validation(format!("{name} must be a finite value > 0, got {v}")))
    }
}

fn at_least(name: &str, v: usize, min: usize) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(Error::Validation(format!("{name} must be >= {min}, got {v}")))
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
}

// ---------------------------------------------------------------- conveyor

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialSweep {
    /// `exchange_sweep`, `cz_operation` or `merge`.
    pub table: String,
    /// CSV waveform table, overrides `table`.
    pub table_file: Option<String>,
    #[serde(rename = "v_b3_mV")]
    pub v_b3_mv: f64,
    pub c_max: f64,
    pub n_cycles: usize,
    pub grid_step_nm: f64,
    /// `flat_band` or `verbatim`.
    pub dc_mode: String,
}

impl Default for PotentialSweep {
    fn default() -> Self {
        Self {
            table: "exchange_sweep".into(),
            table_file: None,
            v_b3_mv: 9.5,
            c_max: 1.2,
            n_cycles: 13,
            grid_step_nm: 1.0,
            dc_mode: "flat_band".into(),
        }
    }
}

impl PotentialSweep {
    fn check(&self, cfg: &ResolvedConfig) -> Result<WaveformTable> {
        positive("c_max", self.c_max)?;
        positive("grid_step_nm", self.grid_step_nm)?;
        at_least("n_cycles", self.n_cycles, 2)?;
        if !self.v_b3_mv.is_finite() {
            return Err(Error::Validation("v_b3_mV must be finite".into()));
        }
        self.dc()?;
        match &self.table_file {
            Some(f) => WaveformTable::from_path(&cfg.resolve_path(f)),
            None => Ok(WaveformTable::builtin(match self.table.as_str() {
                "exchange_sweep" => BuiltinTable::ExchangeSweep,
                "cz_operation" => BuiltinTable::CzOperation,
                "merge" => BuiltinTable::Merge,
                t => {
                    return Err(Error::Validation(format!("table '{t}' is not exchange_sweep, cz_operation or merge")))
                }
            })),
        }
    }

    fn dc(&self) -> Result<DcTreatment> {
        match self.dc_mode.as_str() {
            "flat_band" => Ok(DcTreatment::default()),
            "verbatim" => Ok(DcTreatment::Verbatim),
            m => Err(Error::Validation(format!("dc_mode '{m}' is not flat_band or verbatim"))),
        }
    }
}

fn potential_sweep(p: &PotentialSweep, cfg: &ResolvedConfig, out: &mut Outputs) -> Result<()> {
    let table = p.check(cfg)?;
    let params = HashMap::from([("V_B3".to_string(), p.v_b3_mv)]);
    let conv = table_conveyor(&table, &p.dc()?, &params, p.grid_step_nm)?;
    #[derive(Serialize)]
    struct ProfileRow {
        c: f64,
        x_nm: f64,
        #[serde(rename = "U_meV")]
        u_mev: f64,
    }
    #[derive(Serialize)]
    struct WellRow {
        c: f64,
        n_minima: usize,
        left_nm: f64,
        right_nm: f64,
        #[serde(rename = "barrier_meV")]
        barrier_mev: f64,
    }
    let mut profiles = Vec::new();
    let mut wells = Vec::new();
    for c in linspace(0.0, p.c_max, p.n_cycles) {
        let u = conv.profile(c)?;
        profiles.extend(conv.grid.iter().zip(&u).map(|(&x, &u)| ProfileRow { c, x_nm: x, u_mev: u }));
        let st = conv.state(c)?;
        let pos: Vec<f64> = st.minima.iter().map(|m| m.position_nm).collect();
        wells.push(WellRow {
            c,
            n_minima: pos.len(),
            left_nm: pos.first().copied().unwrap_or(f64::NAN),
            right_nm: pos.last().copied().unwrap_or(f64::NAN),
            barrier_mev: st.barrier.map_or(f64::NAN, |b| b.height_mev),
        });
    }
    out.csv("profiles.csv", &profiles)?;
    out.csv("wells.csv", &wells)?;
    let merge = conv.merge_cycle(p.c_max, 10 * p.n_cycles)?;
    out.json(
        "summary.json",
        &json!({
            "table": p.table_file.clone().unwrap_or_else(|| p.table.clone()),
            "v_b3_mV": p.v_b3_mv,
            "origin_cycle": conv.origin,
            "merge_cycle": merge,
            "nominal_displacement_nm_per_cycle": 2.0 * conv.stack.plunger_pitch_nm,
        }),
    )
}

// ---------------------------------------------------------------- exchange

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JVsCycle {
    pub c_start: f64,
    pub c_end: f64,
    pub n_points: usize,
}

impl Default for JVsCycle {
    fn default() -> Self {
        Self { c_start: 0.0, c_end: 1.0, n_points: 51 }
    }
}

impl JVsCycle {
    fn check(&self) -> Result<()> {
        at_least("n_points", self.n_points, 2)?;
        let (lo, hi) = Exchange::cz_operation().domain();
        let (clo, chi) = CoherenceTable::cz_operation().domain();
        let (lo, hi) = (lo.max(clo), hi.min(chi));
        if !(self.c_start >= lo && self.c_end <= hi && self.c_start < self.c_end) {
            return Err(Error::Validation(format!("cycle range must satisfy {lo} <= c_start < c_end <= {hi}")));
        }
        Ok(())
    }
}

fn j_vs_cycle(p: &JVsCycle, out: &mut Outputs) -> Result<()> {
    p.check()?;
    let cz = Exchange::cz_operation();
    let coh = CoherenceTable::cz_operation();
    let (mc, mj) = merged_fixture();
    let merged = Exchange::new(fit_saturating(&mc, &mj)?)?;
    let (v, j) = peak_vs_barrier_fixture();
    let expo_model = fit_exponential(&v, &j)?;
    let expo = Exchange::new(expo_model.clone())?;
    #[derive(Serialize)]
    #[allow(non_snake_case)]
    struct Row {
        c: f64,
        J_cz_Hz: f64,
        J_merged_fit_Hz: f64,
        T2star_Q2_Q5down_us: f64,
        T2star_Q2_Q5up_us: f64,
        T2star_Q5_Q2down_us: f64,
        T2star_Q5_Q2up_us: f64,
    }
    let rows = linspace(p.c_start, p.c_end, p.n_points)
        .into_iter()
        .map(|c| {
            let t = |k: T2Column| coh.t2_at_cycle(c, k);
            Ok(Row {
                c,
                J_cz_Hz: cz.j_at_cycle(c)?,
                J_merged_fit_Hz: merged.j_at_cycle(c)?,
                T2star_Q2_Q5down_us: t(T2Column::Q2GivenQ5Down)?,
                T2star_Q2_Q5up_us: t(T2Column::Q2GivenQ5Up)?,
                T2star_Q5_Q2down_us: t(T2Column::Q5GivenQ2Down)?,
                T2star_Q5_Q2up_us: t(T2Column::Q5GivenQ2Up)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.csv("j_vs_cycle.csv", &rows)?;
    #[derive(Serialize)]
    #[allow(non_snake_case)]
    struct PeakRow {
        v_b3_mV: f64,
        J_Hz: f64,
        J_fit_Hz: f64,
    }
    let peaks = v
        .iter()
        .zip(&j)
        .map(|(&v, &j)| Ok(PeakRow { v_b3_mV: v, J_Hz: j, J_fit_Hz: expo.j_at_cycle(v)? }))
        .collect::<Result<Vec<_>>>()?;
    out.csv("peak_vs_b3.csv", &peaks)?;
    out.json("fits.json", &json!({ "peak_vs_b3": expo_model, "merged": merged.model() }))
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcphaseMap {
    pub c_start: f64,
    pub c_end: f64,
    pub n_cycles: usize,
    pub wait_max_ns: f64,
    pub n_wait: usize,
    #[serde(rename = "dez_MHz")]
    pub dez_mhz: f64,
    /// `(c, J_Hz)` CSV; defaults to the built-in CZ-operation trajectory.
    pub exchange_file: Option<String>,
    /// Multiply the oscillation by the Gaussian T2* envelope of Q2 at `c`.
    pub dephasing: bool,
}

impl Default for DcphaseMap {
    fn default() -> Self {
        Self {
            c_start: 0.6,
            c_end: 1.0,
            n_cycles: 9,
            wait_max_ns: 10000.0,
            n_wait: 1024,
            dez_mhz: DEFAULT_DEZ_HZ / 1e6,
            exchange_file: None,
            dephasing: true,
        }
    }
}

impl DcphaseMap {
    fn check(&self, cfg: &ResolvedConfig) -> Result<Exchange> {
        positive("wait_max_ns", self.wait_max_ns)?;
        positive("dez_MHz", self.dez_mhz)?;
        at_least("n_wait", self.n_wait, 16)?;
        at_least("n_cycles", self.n_cycles, 1)?;
        let ex = match &self.exchange_file {
            Some(f) => Exchange::from_path(&cfg.resolve_path(f))?,
            None => Exchange::cz_operation(),
        };
        let (lo, hi) = ex.domain();
        if !(self.c_start >= lo && self.c_end <= hi && self.c_start <= self.c_end) {
            return Err(Error::Validation(format!("cycle range must lie within [{lo}, {hi}]")));
        }
        Ok(ex)
    }
}

fn dcphase_map(p: &DcphaseMap, cfg: &ResolvedConfig, out: &mut Outputs) -> Result<()> {
    let ex = p.check(cfg)?;
    let waits = linspace(0.0, p.wait_max_ns, p.n_wait);
    let dt = waits[1] - waits[0];
    #[derive(Serialize)]
    struct MapRow {
        c: f64,
        wait_ns: f64,
        p_parallel: f64,
        p_parallel_coherent: f64,
    }
    #[derive(Serialize)]
    #[allow(non_snake_case)]
    struct JRow {
        c: f64,
        J_true_Hz: f64,
        J_extracted_Hz: f64,
        T2star_us: f64,
    }
    let coh = CoherenceTable::cz_operation();
    let mut map = Vec::new();
    let mut js = Vec::new();
    for c in linspace(p.c_start, p.c_end, p.n_cycles) {
        let j = ex.j_at_cycle(c)?;
        let trace = dcphase_trace(j, p.dez_mhz * 1e6, &waits, SpinState::Down)?;
        let t2 = if p.dephasing { coh.t2_at_cycle(c, T2Column::Q2GivenQ5Down)? } else { f64::INFINITY };
        let decayed: Vec<f64> =
            waits.iter().zip(&trace).map(|(&w, &v)| 0.5 + (v - 0.5) * (-(w * 1e-3 / t2).powi(2)).exp()).collect();
        map.extend(waits.iter().zip(trace.iter().zip(&decayed)).map(|(&w, (&v, &d))| MapRow {
            c,
            wait_ns: w,
            p_parallel: d,
            p_parallel_coherent: v,
        }));
        js.push(JRow {
            c,
            J_true_Hz: j,
            J_extracted_Hz: dcphase_exchange(&decayed, dt).unwrap_or(f64::NAN),
            T2star_us: t2,
        });
    }
    out.csv("dcphase_map.csv", &map)?;
    out.csv("exchange.csv", &js)
}

// ---------------------------------------------------------------- CZ gate

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub label: String,
    pub duration_ns: f64,
    pub c_start: f64,
    pub c_end: f64,
    #[serde(rename = "frequency_MHz", default)]
    pub frequency_mhz: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CzBudgetParams {
    #[serde(rename = "dez_MHz")]
    pub dez_mhz: f64,
    pub t_m_from_s: f64,
    pub t_m_to_s: f64,
    /// Replaces the default six-stage pulse when non-empty.
    pub stages: Vec<StageSpec>,
}

impl Default for CzBudgetParams {
    fn default() -> Self {
        Self { dez_mhz: DEFAULT_DEZ_HZ / 1e6, t_m_from_s: 138.0, t_m_to_s: 5160.0, stages: Vec::new() }
    }
}

impl CzBudgetParams {
    fn schedule(&self) -> Result<CzScheduleConfig> {
        positive("dez_MHz", self.dez_mhz)?;
        positive("t_m_from_s", self.t_m_from_s)?;
        positive("t_m_to_s", self.t_m_to_s)?;
        let mut cfg = CzScheduleConfig { dez_mhz: self.dez_mhz, ..CzScheduleConfig::default() };
        if !self.stages.is_empty() {
            cfg.stages = self
                .stages
                .iter()
                .map(|s| StageConfig {
                    label: s.label.clone(),
                    duration_ns: s.duration_ns,
                    c_start: s.c_start,
                    c_end: s.c_end,
                    frequency_mhz: s.frequency_mhz,
                })
                .collect();
        }
        cz_schedule(&cfg, &Exchange::cz_operation())?;
        Ok(cfg)
    }
}

fn cz_budget(p: &CzBudgetParams, out: &mut Outputs) -> Result<()> {
    let cfg = p.schedule()?;
    let (sched, _, b) =
        cz_fidelity_budget(&cfg, &Exchange::cz_operation(), &CoherenceTable::cz_operation(), p.t_m_from_s, p.t_m_to_s)?;
    #[derive(Serialize)]
    #[allow(non_snake_case)]
    struct Row {
        t_ns: f64,
        J_Hz: f64,
    }
    let n = 581;
    let rows = linspace(0.0, sched.total_ns(), n)
        .into_iter()
        .map(|t| Ok(Row { t_ns: t, J_Hz: sched.j_at(t)? }))
        .collect::<Result<Vec<_>>>()?;
    out.csv("schedule.csv", &rows)?;
    out.json(
        "budget.json",
        &json!({
            "gate_ns": b.gate_ns,
            "j_scale": b.calibration.j_scale,
            "conditional_phase_rad": b.calibration.conditional_phase,
            "swap_error": b.calibration.swap_error,
            "coherent_infidelity": b.coherent_infidelity,
            "dephasing_infidelity": b.dephasing_infidelity,
            "total_infidelity": b.coherent_infidelity + b.dephasing_infidelity,
            "sigma_rescale": b.sigma_rescale,
            "phase_stds_rad": b.phase_stds,
        }),
    )
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CzCalibrationParams {
    #[serde(rename = "offsets_mV")]
    pub offsets_mv: Vec<f64>,
    #[serde(rename = "v_ref_mV")]
    pub v_ref_mv: f64,
    /// Exponential scale of J with barrier voltage; fitted from the
    /// built-in peak-exchange fixture when absent.
    #[serde(rename = "v0_mV")]
    pub v0_mv: Option<f64>,
    #[serde(rename = "heating_shift_MHz")]
    pub heating_shift_mhz: f64,
    pub n_theta: usize,
}

impl Default for CzCalibrationParams {
    fn default() -> Self {
        Self { offsets_mv: linspace(-10.0, 10.0, 11), v_ref_mv: 0.0, v0_mv: None, heating_shift_mhz: 0.0, n_theta: 32 }
    }
}

impl CzCalibrationParams {
    fn check(&self) -> Result<()> {
        at_least("offsets_mV length", self.offsets_mv.len(), 3)?;
        at_least("n_theta", self.n_theta, 8)?;
        if let Some(v0) = self.v0_mv {
            positive("v0_mV", v0)?;
        }
        if self.offsets_mv.iter().any(|v| !v.is_finite()) || !self.heating_shift_mhz.is_finite() {
            return Err(Error::Validation("offsets and heating shift must be finite".into()));
        }
        Ok(())
    }

    fn v0(&self) -> Result<f64> {
        if let Some(v) = self.v0_mv {
            return Ok(v);
        }
        let (v, j) = peak_vs_barrier_fixture();
        match fit_exponential(&v, &j)? {
            ExchangeModel::Exponential { v0_mv, .. } => Ok(v0_mv),
            _ => Err(Error::Numerical("exponential fit returned another model".into())),
        }
    }
}

fn cz_calibration(p: &CzCalibrationParams, out: &mut Outputs) -> Result<()> {
    p.check()?;
    let (base, _) = calibrate_cz(&cz_schedule(&CzScheduleConfig::default(), &Exchange::cz_operation())?)?;
    let v0 = p.v0()?;
    let shift = p.heating_shift_mhz * 1e6;
    let search = cz_calibration_search(&base, &p.offsets_mv, p.v_ref_mv, v0, shift)?;
    let thetas = linspace(0.0, 2.0 * PI * (1.0 - 1.0 / p.n_theta as f64), p.n_theta);
    #[derive(Serialize)]
    struct Row {
        offset_mv: f64,
        theta_rad: f64,
        p_ctrl_down: f64,
        p_ctrl_up: f64,
    }
    let mut rows = Vec::new();
    let mut best_shift = f64::NAN;
    for &v in &p.offsets_mv {
        let mut s = base.clone();
        s.j_scale = base.j_scale * ((v - p.v_ref_mv) / v0).exp();
        let u = evolve(&s, 0.0)?;
        let (a, b) = cz_fringes(&u, &thetas, s.total_ns(), shift);
        if v == search.best_offset_mv {
            best_shift = crate::dynamics::wrap(fringe_phase(&thetas, &b) - fringe_phase(&thetas, &a)).abs();
        }
        rows.extend(thetas.iter().zip(a.iter().zip(&b)).map(|(&t, (&x, &y))| Row {
            offset_mv: v,
            theta_rad: t,
            p_ctrl_down: x,
            p_ctrl_up: y,
        }));
    }
    out.csv("fringes.csv", &rows)?;
    out.json(
        "search.json",
        &json!({
            "offsets_mV": search.offsets_mv,
            "stripe_variance": search.stripe_variance,
            "conditional_phase_rad": search.conditional_phase,
            "best_offset_mV": search.best_offset_mv,
            "on_boundary": search.on_boundary,
            "fringe_shift_at_best_rad": best_shift,
            "v0_mV": v0,
        }),
    )
}

// ---------------------------------------------------------------- RB

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CliffordNoise {
    Ideal,
    Depolarizing { p: f64 },
}

impl CliffordNoise {
    fn channel(&self) -> Result<Box<dyn NoiseChannel>> {
        match *self {
            CliffordNoise::Ideal => Ok(Box::new(Ideal)),
            CliffordNoise::Depolarizing { p } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Validation(format!("depolarizing p = {p} outside [0, 1]")));
                }
                Ok(Box::new(Depolarizing { p }))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbParams {
    pub lengths: Vec<usize>,
    pub sequences_per_length: usize,
    pub shots: usize,
    pub keep_probability: f64,
    pub noise: CliffordNoise,
}

impl Default for RbParams {
    fn default() -> Self {
        Self {
            lengths: vec![1, 2, 3, 4, 5, 6, 8, 10, 12, 15, 20, 30, 50, 100],
            sequences_per_length: 120,
            shots: 800,
            keep_probability: 0.3125,
            noise: CliffordNoise::Depolarizing { p: 0.8024 },
        }
    }
}

impl RbParams {
    fn rb_config(&self, seed: u64) -> Result<RbConfig> {
        self.noise.channel()?;
        Ok(RbConfig {
            lengths: self.lengths.clone(),
            sequences_per_length: self.sequences_per_length,
            shots: self.shots,
            keep_probability: self.keep_probability,
            seed,
        })
    }
}

fn fit_json(f: &crate::benchmarking::RbFit) -> serde_json::Value {
    json!({
        "a": f.a, "b": f.b, "p": f.p, "p_std": f.p_std,
        "covariance": f.covariance, "degenerate": f.degenerate, "chi2": f.chi2,
        "clifford_fidelity": clifford_fidelity(f.p),
    })
}

fn rb(p: &RbParams, seed: u64, out: &mut Outputs) -> Result<()> {
    let cfg = p.rb_config(seed)?;
    let noise = p.noise.channel()?;
    let data = RbSimulator::new().run(&cfg, noise.as_ref(), None)?;
    out.csv("decay.csv", &data.points)?;
    out.csv("sequences.csv", &data.sequences)?;
    let fit = fit_rb(&data.points)?;
    out.json("fit.json", &fit_json(&fit))
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrbParams {
    #[serde(flatten)]
    pub rb: RbParams,
    /// Average infidelity engineered into the interleaved CZ.
    pub cz_infidelity: f64,
}

impl Default for IrbParams {
    fn default() -> Self {
        Self { rb: RbParams::default(), cz_infidelity: 0.0114 }
    }
}

impl IrbParams {
    fn check(&self) -> Result<()> {
        if !(self.cz_infidelity > 0.0 && self.cz_infidelity < 0.5) {
            return Err(Error::Validation(format!("cz_infidelity = {} outside (0, 0.5)", self.cz_infidelity)));
        }
        Ok(())
    }
}

fn irb(p: &IrbParams, seed: u64, out: &mut Outputs) -> Result<()> {
    p.check()?;
    let cfg = p.rb.rb_config(seed)?;
    let noise = p.rb.noise.channel()?;
    let (_, _, budget) = cz_fidelity_budget(
        &CzScheduleConfig::default(),
        &Exchange::cz_operation(),
        &CoherenceTable::cz_operation(),
        138.0,
        5160.0,
    )?;
    let (err, scaled) = engineered_cz_error(&budget.noise, p.cz_infidelity)?;
    let r = run_irb(&RbSimulator::new(), &cfg, noise.as_ref(), &err)?;
    out.csv("decay_reference.csv", &r.reference_data.points)?;
    out.csv("decay_interleaved.csv", &r.interleaved_data.points)?;
    out.json(
        "irb.json",
        &json!({
            "reference": fit_json(&r.reference),
            "interleaved": fit_json(&r.interleaved),
            "ratio": r.cz.ratio,
            "ratio_exceeds_one": r.cz.ratio_exceeds_one,
            "cz_fidelity": r.cz.fidelity,
            "injected_infidelity": p.cz_infidelity,
            "dephasing_sigma_scale": scaled.sigma,
        }),
    )
}

// ---------------------------------------------------------------- teleport

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// `ideal` or `calibrated`.
    pub noise_preset: String,
    /// Field-wise overrides of the preset.
    pub noise: Option<toml::Table>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { noise_preset: "calibrated".into(), noise: None }
    }
}

impl NoiseSpec {
    pub fn build(&self) -> Result<TeleportNoise> {
        let base = match self.noise_preset.as_str() {
            "ideal" => TeleportNoise::ideal(),
            "calibrated" => TeleportNoise::calibrated(),
            s => return Err(Error::Validation(format!("noise_preset '{s}' is not ideal or calibrated"))),
        };
        let Some(over) = &self.noise else { return Ok(base) };
        let mut t = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut t, over.clone());
        let n: TeleportNoise = toml::Value::Table(t)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("noise: {}", e.message())))?;
        n.validate()?;
        Ok(n)
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeleportRabi {
    pub n_angles: usize,
    pub angle_max_rad: f64,
    pub shots: usize,
    #[serde(flatten)]
    pub noise: NoiseSpec,
}

impl Default for TeleportRabi {
    fn default() -> Self {
        Self { n_angles: 25, angle_max_rad: 2.0 * PI, shots: 2000, noise: NoiseSpec::default() }
    }
}

impl TeleportRabi {
    fn check(&self) -> Result<TeleportNoise> {
        at_least("n_angles", self.n_angles, 2)?;
        at_least("shots", self.shots, 1)?;
        positive("angle_max_rad", self.angle_max_rad)?;
        self.noise.build()
    }
}

#[derive(Serialize)]
struct BranchRow {
    theta1_rad: f64,
    theta2_rad: f64,
    bell_label: &'static str,
    kept: usize,
    p_parallel: f64,
    p_parallel_corrected: f64,
    p_parallel_exact: f64,
}

fn branch_rows(cfg: &TeleportConfig, circuit: &Circuit, seed: u64, theta1: f64, theta2: f64) -> Result<Vec<BranchRow>> {
    let run = run_with_circuit(cfg, circuit, seed)?;
    let ex = exact_outcome(cfg, circuit)?;
    let mut rows = Vec::new();
    for label in [BellLabel::PsiPlus, BellLabel::PhiMinus] {
        let kept: Vec<_> = run.records.iter().filter(|r| r.kept && r.bell_label == label).collect();
        let n = kept.len();
        let raw = if n == 0 { f64::NAN } else { kept.iter().filter(|r| r.q2_bit() == 1).count() as f64 / n as f64 };
        let corr = if n == 0 { f64::NAN } else { correct_readout([1.0 - raw, raw], &cfg.noise.verification)?.probs[1] };
        rows.push(BranchRow {
            theta1_rad: theta1,
            theta2_rad: theta2,
            bell_label: label.as_str(),
            kept: n,
            p_parallel: raw,
            p_parallel_corrected: corr,
            p_parallel_exact: ex.q2_one_given(label),
        });
    }
    Ok(rows)
}

fn teleport_rabi(p: &TeleportRabi, seed: u64, out: &mut Outputs) -> Result<()> {
    let noise = p.check()?;
    let circuit = Circuit::new(&noise)?;
    let mut rows = Vec::new();
    for (k, a) in linspace(0.0, p.angle_max_rad, p.n_angles).into_iter().enumerate() {
        let cfg = TeleportConfig {
            input: InputPrep::Rabi { angle_rad: a },
            tomo: TomoSetting::Z,
            noise: noise.clone(),
            shots: p.shots,
            ordering: Ordering::TomographyFirst,
        };
        rows.extend(branch_rows(&cfg, &circuit, mix_seed(seed, k as u64), a, 0.0)?);
    }
    out.csv("rabi.csv", &rows)
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeleportPhaseMap {
    pub n_theta1: usize,
    pub n_theta2: usize,
    pub shots: usize,
    #[serde(flatten)]
    pub noise: NoiseSpec,
}

impl Default for TeleportPhaseMap {
    fn default() -> Self {
        Self { n_theta1: 9, n_theta2: 9, shots: 1000, noise: NoiseSpec::default() }
    }
}

impl TeleportPhaseMap {
    fn check(&self) -> Result<TeleportNoise> {
        at_least("n_theta1", self.n_theta1, 2)?;
        at_least("n_theta2", self.n_theta2, 2)?;
        at_least("shots", self.shots, 1)?;
        self.noise.build()
    }
}

fn teleport_phase_map(p: &TeleportPhaseMap, seed: u64, out: &mut Outputs) -> Result<()> {
    let noise = p.check()?;
    let circuit = Circuit::new(&noise)?;
    let mut rows = Vec::new();
    let mut k = 0u64;
    for t1 in linspace(0.0, 2.0 * PI, p.n_theta1) {
        for t2 in linspace(0.0, 2.0 * PI, p.n_theta2) {
            let cfg = TeleportConfig {
                input: InputPrep::Superposition { theta1_rad: t1 },
                tomo: TomoSetting::Phase { theta2_rad: t2 },
                noise: noise.clone(),
                shots: p.shots,
                ordering: Ordering::TomographyFirst,
            };
            rows.extend(branch_rows(&cfg, &circuit, mix_seed(seed, k), t1, t2)?);
            k += 1;
        }
    }
    out.csv("phase_map.csv", &rows)
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeleportQpt {
    /// Shots per (input, basis) setting; 0 evaluates exact probabilities.
    pub shots: usize,
    pub resamples: usize,
    /// Shots per basis for the Bell-pair state tomography.
    pub bell_shots: usize,
    #[serde(flatten)]
    pub noise: NoiseSpec,
}

impl Default for TeleportQpt {
    fn default() -> Self {
        Self { shots: 20000, resamples: 200, bell_shots: 1000, noise: NoiseSpec::default() }
    }
}

impl TeleportQpt {
    fn check(&self) -> Result<TeleportNoise> {
        if self.shots > 0 {
            at_least("resamples", self.resamples, 2)?;
        }
        at_least("bell_shots", self.bell_shots, 1)?;
        self.noise.build()
    }
}

fn teleport_qpt_scenario(p: &TeleportQpt, seed: u64, out: &mut Outputs) -> Result<()> {
    let noise = p.check()?;
    let shots = (p.shots > 0).then_some(p.shots);
    let rep = teleport_qpt(&noise, shots, p.resamples, seed)?;
    let mut counts = Vec::new();
    rep.counts.to_csv(&mut counts)?;
    out.raw("counts.csv", &counts)?;
    out.json("ptm.json", &rep.ptm)?;

    // Bell pairs: exact Q2–Q5 state and the local Q5–Q6 resource, each
    // through sampled state tomography with MLE.
    let circuit = Circuit::new(&noise)?;
    let pairs = [("q2q5", circuit.bell_pair()), ("q5q6", noise.local_cz.bell_state())];
    let bases = pauli_bases(2);
    let bases: Vec<&str> = bases.iter().map(String::as_str).collect();
    let mut bell = serde_json::Map::new();
    for (k, (name, rho)) in pairs.iter().enumerate() {
        let exact = bell_fidelity(rho)?;
        let mut rng = stream_rng(mix_seed(seed, 0xbe11), k as u64);
        let table = sampled_counts(rho, "bell", &bases, p.bell_shots, &mut rng);
        let est = qst_mle(&table, 2)?;
        let fit = bell_fidelity(&est.rho)?;
        let std = bootstrap_bell_fidelity(&table, p.resamples.max(2), mix_seed(seed, 0xb007 + k as u64))?;
        bell.insert(
            name.to_string(),
            json!({
                "fidelity_exact": exact.fidelity,
                "fidelity_mle": fit.fidelity,
                "fidelity_mle_std": std,
                "phase_rad": fit.phase,
                "teleport_fidelity_from_bell": teleport_fidelity_from_bell(exact.fidelity.clamp(0.0, 1.0))?,
            }),
        );
    }
    out.json(
        "qpt.json",
        &json!({
            "f_avg": rep.f_avg,
            "f_avg_raw": rep.f_avg_raw,
            "f_avg_std": rep.f_avg_std,
            "kept_shots": rep.kept_shots,
            "clamped_rows": rep.clamped_rows,
            "classical_bound": 2.0 / 3.0,
            "min_choi_eigenvalue": rep.ptm.min_choi_eigenvalue(),
            "tp_error": rep.ptm.tp_error(),
            "bell": bell,
        }),
    )
}
