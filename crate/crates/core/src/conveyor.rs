//! Traveling-wave potentials from two-tone gate drives.
//!
//! Each gate carries `V(t) = V_DC + (A/2)[sin(2πft − φ) + sin(πft − θ)]`.
//! The potential along the channel is the lever-arm-weighted sum of
//! Gaussian gate kernels. Voltages are in mV, energies in meV, lengths in nm,
//! and the conveyor cycle `c = f·t` counts periods of the primary tone.

use std::collections::HashMap;
use std::f64::consts::{LN_2, PI};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-tone drive on one gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateWaveform {
    pub gate_id: String,
    pub amplitude_mv: f64,
    pub dc_offset_mv: f64,
    /// Phase of the primary tone, radians.
    pub phase_f: f64,
    /// Phase of the half-frequency tone, radians.
    pub phase_f2: f64,
    pub tone_f: bool,
    pub tone_f2: bool,
}

impl GateWaveform {
    pub fn new(gate_id: &str, amplitude_mv: f64, dc_offset_mv: f64, phase_f: f64, phase_f2: f64) -> Self {
        Self {
            gate_id: gate_id.to_string(),
            amplitude_mv,
            dc_offset_mv,
            phase_f,
            phase_f2,
            tone_f: true,
            tone_f2: true,
        }
    }

    /// A gate held at a fixed voltage.
    pub fn dc(gate_id: &str, dc_offset_mv: f64) -> Self {
        Self::new(gate_id, 0.0, dc_offset_mv, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude_mv >= 0.0) || !self.amplitude_mv.is_finite() {
            return Err(Error::Validation(format!("gate {}: amplitude must be finite and >= 0", self.gate_id)));
        }
        if !self.dc_offset_mv.is_finite() || !self.phase_f.is_finite() || !self.phase_f2.is_finite() {
            return Err(Error::Validation(format!("gate {}: offsets and phases must be finite", self.gate_id)));
        }
        Ok(())
    }

    /// Voltage at conveyor cycle `c`.
    pub fn voltage_at_cycle(&self, c: f64) -> f64 {
        let mut s = 0.0;
        if self.tone_f {
            s += (2.0 * PI * c - self.phase_f).sin();
        }
        if self.tone_f2 {
            s += (PI * c - self.phase_f2).sin();
        }
        self.dc_offset_mv + 0.5 * self.amplitude_mv * s
    }
}

/// Gate voltage (mV) at time `t_ns` for primary-tone frequency `f_hz`.
pub fn gate_voltage_at(w: &GateWaveform, f_hz: f64, t_ns: f64) -> f64 {
    w.voltage_at_cycle(f_hz * t_ns * 1e-9)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateGeometry {
    pub gate_id: String,
    pub center_nm: f64,
    /// Full width at half maximum of the gate kernel.
    pub kernel_width_nm: f64,
    /// Potential energy per unit gate voltage, meV/mV.
    pub lever_arm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateStack {
    pub gates: Vec<GateGeometry>,
    pub plunger_pitch_nm: f64,
}

pub const DEFAULT_LEVER_ARM: f64 = 0.1;
pub const DEFAULT_GATE_SPACING_NM: f64 = 45.0;

/// Gate names of the twelve-gate channel, alternating plungers and barriers.
pub const CHANNEL_GATES: [&str; 12] = ["P1", "B1", "P2", "B2", "P3", "B3", "P4", "B4", "P5", "B5", "P6", "B6"];

impl GateStack {
    pub fn new(gates: Vec<GateGeometry>, plunger_pitch_nm: f64) -> Result<Self> {
        let stack = Self { gates, plunger_pitch_nm };
        stack.validate()?;
        Ok(stack)
    }

    /// Evenly spaced gates with shared kernel width and lever arm.
    pub fn uniform(ids: &[&str], spacing_nm: f64, kernel_width_nm: f64, lever_arm: f64) -> Result<Self> {
        let gates = ids
            .iter()
            .enumerate()
            .map(|(i, id)| GateGeometry {
                gate_id: id.to_string(),
                center_nm: i as f64 * spacing_nm,
                kernel_width_nm,
                lever_arm,
            })
            .collect();
        Self::new(gates, 2.0 * spacing_nm)
    }

    /// The twelve-gate channel with 45 nm gate spacing (90 nm plunger pitch).
    pub fn channel() -> Self {
        Self::uniform(&CHANNEL_GATES, DEFAULT_GATE_SPACING_NM, 2.0 * DEFAULT_GATE_SPACING_NM, DEFAULT_LEVER_ARM)
            .expect("built-in stack is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.gates.is_empty() {
            return Err(Error::Config("gate stack is empty".into()));
        }
        if self.gates.windows(2).any(|w| w[1].center_nm <= w[0].center_nm) {
            return Err(Error::Config("gate centers must be strictly increasing".into()));
        }
        for g in &self.gates {
            if !(g.kernel_width_nm > 0.0) {
                return Err(Error::Config(format!("gate {}: kernel width must be > 0", g.gate_id)));
            }
            if !(g.lever_arm > 0.0) {
                return Err(Error::Config(format!("gate {}: lever arm must be > 0", g.gate_id)));
            }
        }
        if !(self.plunger_pitch_nm > 0.0) {
            return Err(Error::Config("plunger pitch must be > 0".into()));
        }
        Ok(())
    }

    pub fn extent(&self) -> (f64, f64) {
        (self.gates[0].center_nm, self.gates.last().unwrap().center_nm)
    }

    pub fn center_of(&self, gate_id: &str) -> Option<f64> {
        self.gates.iter().find(|g| g.gate_id == gate_id).map(|g| g.center_nm)
    }

    pub fn set_lever_arm(&mut self, gate_id: &str, lever_arm: f64) -> Result<()> {
        let g = self
            .gates
            .iter_mut()
            .find(|g| g.gate_id == gate_id)
            .ok_or_else(|| Error::Config(format!("unknown gate {gate_id}")))?;
        g.lever_arm = lever_arm;
        self.validate()
    }

    /// Uniform grid across the stack extent.
    pub fn grid(&self, step_nm: f64) -> Vec<f64> {
        let (lo, hi) = self.extent();
        let n = ((hi - lo) / step_nm).floor() as usize;
        (0..=n).map(|i| lo + i as f64 * step_nm).collect()
    }
}

/// Unit-peak Gaussian with the given full width at half maximum.
pub fn kernel(u: f64) -> f64 {
    (-4.0 * LN_2 * u * u).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialProfile {
    pub x_nm: Vec<f64>,
    pub u_mev: Vec<f64>,
    pub t_ns: f64,
}

impl PotentialProfile {
    pub fn to_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["x_nm", "U_meV"])?;
        for (x, u) in self.x_nm.iter().zip(&self.u_mev) {
            wtr.write_record([x.to_string(), u.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Potential from explicit gate voltages (mV), one per stack gate.
pub fn potential_from_voltages(stack: &GateStack, voltages: &[f64], x_grid: &[f64]) -> Result<Vec<f64>> {
    stack.validate()?;
    if voltages.len() != stack.gates.len() {
        return Err(Error::Config("one voltage per gate is required".into()));
    }
    let (lo, hi) = stack.extent();
    if x_grid.iter().any(|&x| x < lo || x > hi || !x.is_finite()) {
        return Err(Error::Config(format!("grid points must lie within the stack extent [{lo}, {hi}] nm")));
    }
    Ok(x_grid
        .iter()
        .map(|&x| {
            stack
                .gates
                .iter()
                .zip(voltages)
                .map(|(g, v)| -g.lever_arm * v * kernel((x - g.center_nm) / g.kernel_width_nm))
                .sum()
        })
        .collect())
}

fn voltages_at_cycle(stack: &GateStack, waveforms: &[GateWaveform], c: f64) -> Result<Vec<f64>> {
    let mut v = vec![0.0; stack.gates.len()];
    for w in waveforms {
        w.validate()?;
        let idx = stack
            .gates
            .iter()
            .position(|g| g.gate_id == w.gate_id)
            .ok_or_else(|| Error::Config(format!("waveform for unknown gate {}", w.gate_id)))?;
        v[idx] = w.voltage_at_cycle(c);
    }
    Ok(v)
}

/// Potential at time `t_ns` for primary frequency `f_hz`. Gates without a
/// waveform are held at zero.
pub fn synthesize_potential(
    stack: &GateStack,
    waveforms: &[GateWaveform],
    f_hz: f64,
    t_ns: f64,
    x_grid: &[f64],
) -> Result<PotentialProfile> {
    if !(f_hz > 0.0) {
        return Err(Error::Config("drive frequency must be > 0".into()));
    }
    let v = voltages_at_cycle(stack, waveforms, f_hz * t_ns * 1e-9)?;
    Ok(PotentialProfile { x_nm: x_grid.to_vec(), u_mev: potential_from_voltages(stack, &v, x_grid)?, t_ns })
}

/// Potential at conveyor cycle `c`, independent of the drive frequency.
pub fn potential_at_cycle(stack: &GateStack, waveforms: &[GateWaveform], c: f64, x_grid: &[f64]) -> Result<Vec<f64>> {
    let v = voltages_at_cycle(stack, waveforms, c)?;
    potential_from_voltages(stack, &v, x_grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub position_nm: f64,
    pub depth_mev: f64,
    /// Second derivative of the potential, meV/nm².
    pub curvature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Barrier {
    pub position_nm: f64,
    /// Height above the deeper of the two wells.
    pub height_mev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConveyorState {
    pub cycle: f64,
    pub minima: Vec<Minimum>,
    pub barrier: Option<Barrier>,
}

fn refine(x: &[f64], u: &[f64], i: usize) -> (f64, f64, f64) {
    let (a, b, c) = (u[i - 1], u[i], u[i + 1]);
    let h = 0.5 * (x[i + 1] - x[i - 1]);
    let den = a - 2.0 * b + c;
    if den.abs() < 1e-300 {
        return (x[i], b, 0.0);
    }
    let delta = (0.5 * (a - c) / den).clamp(-0.5, 0.5);
    (x[i] + delta * h, b - 0.25 * (a - c) * delta, den / (h * h))
}

/// Strict local minima with parabolic refinement, and the barrier between
/// the two deepest minima.
pub fn find_extrema(p: &PotentialProfile, cycle: f64) -> Result<ConveyorState> {
    find_extrema_raw(&p.x_nm, &p.u_mev, cycle)
}

pub fn find_extrema_raw(x: &[f64], u: &[f64], cycle: f64) -> Result<ConveyorState> {
    if x.len() != u.len() {
        return Err(Error::Validation("grid and values differ in length".into()));
    }
    if x.len() < 3 {
        return Err(Error::Validation("at least three grid points are required".into()));
    }
    let mut idx = Vec::new();
    for i in 1..u.len() - 1 {
        if u[i] < u[i - 1] && u[i] < u[i + 1] {
            idx.push(i);
        }
    }
    let minima: Vec<Minimum> = idx
        .iter()
        .map(|&i| {
            let (pos, depth, curv) = refine(x, u, i);
            Minimum { position_nm: pos, depth_mev: depth, curvature: curv }
        })
        .collect();
    let barrier = if idx.len() >= 2 {
        let mut order: Vec<usize> = (0..idx.len()).collect();
        order.sort_by(|&a, &b| minima[a].depth_mev.total_cmp(&minima[b].depth_mev));
        let (m1, m2) = (order[0].min(order[1]), order[0].max(order[1]));
        let (i1, i2) = (idx[m1], idx[m2]);
        let top = (i1..=i2).max_by(|&a, &b| u[a].total_cmp(&u[b])).unwrap();
        let (pos, val, _) = if top > 0 && top + 1 < u.len() { refine(x, u, top) } else { (x[top], u[top], 0.0) };
        let deeper = minima[m1].depth_mev.min(minima[m2].depth_mev);
        Some(Barrier { position_nm: pos, height_mev: val - deeper })
    } else {
        None
    };
    Ok(ConveyorState { cycle, minima, barrier })
}

/// Nominal displacement for `c` cycles: two plunger pitches per cycle.
pub fn displacement_for_cycles(c: f64, plunger_pitch_nm: f64) -> Result<f64> {
    if !(c >= 0.0) {
        return Err(Error::Domain(format!("cycle count must be >= 0, got {c}")));
    }
    Ok(2.0 * plunger_pitch_nm * c)
}

/// How printed phase columns map to radians.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PhaseUnit {
    /// One unit is π radians.
    #[default]
    HalfTurn,
    /// One unit is 2π radians.
    Turn,
    Radian,
}

impl PhaseUnit {
    pub fn to_radians(self, v: f64) -> f64 {
        match self {
            PhaseUnit::HalfTurn => PI * v,
            PhaseUnit::Turn => 2.0 * PI * v,
            PhaseUnit::Radian => v,
        }
    }
}

/// How DC columns enter the potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DcTreatment {
    /// Every DC offset is applied as printed.
    Verbatim,
    /// The static offsets are assumed to flatten the background; only the
    /// listed gates keep their DC column as a pulse offset.
    FlatBand { pulsed: Vec<String> },
}

impl Default for DcTreatment {
    fn default() -> Self {
        DcTreatment::FlatBand { pulsed: vec!["B3".into()] }
    }
}

#[derive(Debug, Clone, Deserialize)]
struct TableRow {
    gate: String,
    #[serde(rename = "amplitude_mV")]
    amplitude_mv: f64,
    #[serde(rename = "dc_offset_mV")]
    dc_offset_mv: String,
    phase_f: Option<f64>,
    phase_f2: Option<f64>,
}

/// A waveform table as printed: phases in table units, DC entries either
/// numbers or named parameters such as `V_B3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformTable {
    pub rows: Vec<TableEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub gate: String,
    pub amplitude_mv: f64,
    pub dc: DcEntry,
    pub phase_f: Option<f64>,
    pub phase_f2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DcEntry {
    Value(f64),
    Parameter(String),
}

/// Built-in tables shipped with the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinTable {
    /// Barrier-voltage sweep; B3 DC is the parameter `V_B3`.
    ExchangeSweep,
    /// Symmetry-tuned CZ operating point.
    CzOperation,
    /// Half-tone-only drive merging the two wells.
    Merge,
}

impl BuiltinTable {
    pub fn csv(self) -> &'static str {
        match self {
            BuiltinTable::ExchangeSweep => include_str!("../data/conveyor_table1.csv"),
            BuiltinTable::CzOperation => include_str!("../data/conveyor_table2.csv"),
            BuiltinTable::Merge => include_str!("../data/conveyor_table3.csv"),
        }
    }
}

impl WaveformTable {
    pub fn from_reader<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let mut rows = Vec::new();
        for rec in rdr.deserialize::<TableRow>() {
            let row = rec?;
            let dc = match row.dc_offset_mv.parse::<f64>() {
                Ok(v) => DcEntry::Value(v),
                Err(_) if !row.dc_offset_mv.is_empty() => DcEntry::Parameter(row.dc_offset_mv.clone()),
                Err(_) => return Err(Error::Config(format!("gate {}: empty DC offset", row.gate))),
            };
            if row.phase_f.is_none() && row.phase_f2.is_none() {
                return Err(Error::Config(format!("gate {}: no phase given for either tone", row.gate)));
            }
            rows.push(TableEntry {
                gate: row.gate,
                amplitude_mv: row.amplitude_mv,
                dc,
                phase_f: row.phase_f,
                phase_f2: row.phase_f2,
            });
        }
        if rows.is_empty() {
            return Err(Error::Config("waveform table is empty".into()));
        }
        Ok(Self { rows })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn builtin(t: BuiltinTable) -> Self {
        Self::from_reader(t.csv().as_bytes()).expect("built-in table parses")
    }

    /// Resolve the table into waveforms. A missing phase disables that tone.
    pub fn waveforms(
        &self,
        unit: PhaseUnit,
        dc: &DcTreatment,
        params: &HashMap<String, f64>,
    ) -> Result<Vec<GateWaveform>> {
        self.rows
            .iter()
            .map(|r| {
                let raw_dc = match &r.dc {
                    DcEntry::Value(v) => *v,
                    DcEntry::Parameter(name) => *params
                        .get(name)
                        .ok_or_else(|| Error::Config(format!("gate {}: parameter {name} not supplied", r.gate)))?,
                };
                let dc_mv = match dc {
                    DcTreatment::Verbatim => raw_dc,
                    DcTreatment::FlatBand { pulsed } => {
                        if pulsed.iter().any(|g| g == &r.gate) {
                            raw_dc
                        } else {
                            0.0
                        }
                    }
                };
                let w = GateWaveform {
                    gate_id: r.gate.clone(),
                    amplitude_mv: r.amplitude_mv,
                    dc_offset_mv: dc_mv,
                    phase_f: unit.to_radians(r.phase_f.unwrap_or(0.0)),
                    phase_f2: unit.to_radians(r.phase_f2.unwrap_or(0.0)),
                    tone_f: r.phase_f.is_some(),
                    tone_f2: r.phase_f2.is_some(),
                };
                w.validate()?;
                Ok(w)
            })
            .collect()
    }
}

/// A driven channel: geometry, waveforms, evaluation grid and a cycle origin
/// chosen so that `c = 0` places the moving wells under their start plungers.
#[derive(Debug, Clone)]
pub struct Conveyor {
    pub stack: GateStack,
    pub waveforms: Vec<GateWaveform>,
    pub grid: Vec<f64>,
    /// Window (nm) in which minima count as conveyor wells.
    pub window_nm: (f64, f64),
    /// Absolute cycle that corresponds to `c = 0`.
    pub origin: f64,
}

impl Conveyor {
    pub fn new(stack: GateStack, waveforms: Vec<GateWaveform>, grid_step_nm: f64) -> Result<Self> {
        if !(grid_step_nm > 0.0) {
            return Err(Error::Config("grid step must be > 0".into()));
        }
        stack.validate()?;
        for w in &waveforms {
            w.validate()?;
        }
        let grid = stack.grid(grid_step_nm);
        let (lo, hi) = stack.extent();
        Ok(Self { stack, waveforms, grid, window_nm: (lo, hi), origin: 0.0 })
    }

    pub fn profile(&self, c: f64) -> Result<Vec<f64>> {
        potential_at_cycle(&self.stack, &self.waveforms, self.origin + c, &self.grid)
    }

    /// Extrema at relative cycle `c`, restricted to the conveyor window.
    pub fn state(&self, c: f64) -> Result<ConveyorState> {
        let u = self.profile(c)?;
        let mut st = find_extrema_raw(&self.grid, &u, c)?;
        let (lo, hi) = self.window_nm;
        st.minima.retain(|m| m.position_nm > lo && m.position_nm < hi);
        if st.minima.len() < 2 {
            st.barrier = None;
        }
        Ok(st)
    }

    /// Place the origin at the first absolute cycle in `[0, search_span)`
    /// where a well sits within `tol_nm` of `gate_id`.
    pub fn align_origin(&mut self, gate_id: &str, search_span: f64, tol_nm: f64) -> Result<f64> {
        let target = self.stack.center_of(gate_id).ok_or_else(|| Error::Config(format!("unknown gate {gate_id}")))?;
        self.origin = 0.0;
        let steps = 2000;
        let mut best: Option<(f64, f64)> = None;
        for k in 0..steps {
            let c = search_span * k as f64 / steps as f64;
            let st = self.state(c)?;
            if let Some(d) = st.minima.iter().map(|m| (m.position_nm - target).abs()).min_by(f64::total_cmp) {
                if d <= tol_nm {
                    if best.is_none_or(|(_, bd)| d < bd) {
                        best = Some((c, d));
                    }
                } else if best.is_some() {
                    break;
                }
            }
        }
        let (c0, _) =
            best.ok_or_else(|| Error::Config(format!("no well passes under {gate_id} within the search span")))?;
        self.origin = c0;
        Ok(c0)
    }

    /// Cycles (relative) sampled on `[0, c_max]` with their well counts.
    pub fn sweep(&self, c_max: f64, n: usize) -> Result<Vec<ConveyorState>> {
        (0..=n).map(|k| self.state(c_max * k as f64 / n as f64)).collect()
    }

    /// Follow the well nearest `start_nm` from `c = 0` in `steps` increments
    /// up to `c_max`. Stops when the well vanishes, jumps by more than
    /// `max_jump_nm`, or is the only well left (merged).
    pub fn track_well(&self, start_nm: f64, c_max: f64, steps: usize, max_jump_nm: f64) -> Result<Vec<(f64, f64)>> {
        let mut path = Vec::new();
        let mut last = start_nm;
        for k in 0..=steps {
            let c = c_max * k as f64 / steps as f64;
            let st = self.state(c)?;
            if st.minima.len() < 2 && k > 0 {
                break;
            }
            let Some(m) =
                st.minima.iter().min_by(|a, b| (a.position_nm - last).abs().total_cmp(&(b.position_nm - last).abs()))
            else {
                break;
            };
            if (m.position_nm - last).abs() > max_jump_nm {
                break;
            }
            last = m.position_nm;
            path.push((c, last));
        }
        Ok(path)
    }

    /// First sampled relative cycle at which exactly one well remains.
    pub fn merge_cycle(&self, c_max: f64, n: usize) -> Result<Option<f64>> {
        for st in self.sweep(c_max, n)? {
            if st.minima.len() == 1 {
                return Ok(Some(st.cycle));
            }
        }
        Ok(None)
    }
}

/// Conveyor for a waveform table on the standard twelve-gate channel, with
/// the cycle origin aligned to the left well under P2.
pub fn table_conveyor(
    table: &WaveformTable,
    dc: &DcTreatment,
    params: &HashMap<String, f64>,
    grid_step_nm: f64,
) -> Result<Conveyor> {
    let wf = table.waveforms(PhaseUnit::HalfTurn, dc, params)?;
    let stack = GateStack::channel();
    let p2 = stack.center_of("P2").unwrap();
    let p5 = stack.center_of("P5").unwrap();
    let mut conv = Conveyor::new(stack, wf, grid_step_nm)?;
    conv.window_nm = (p2 - 50.0, p5 + 50.0);
    conv.align_origin("P2", 2.0, 5.0)?;
    Ok(conv)
}

/// [`table_conveyor`] for a built-in table with the default DC treatment
/// and a 1 nm grid.
pub fn builtin_conveyor(table: BuiltinTable, v_b3_mv: Option<f64>) -> Result<Conveyor> {
    let mut params = HashMap::new();
    if let Some(v) = v_b3_mv {
        params.insert("V_B3".to_string(), v);
    }
    table_conveyor(&WaveformTable::builtin(table), &DcTreatment::default(), &params, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn voltage_examples() {
        let w = GateWaveform::new("P2", 120.0, -90.0, 0.0, 0.0);
        assert_eq!(gate_voltage_at(&w, 10e6, 0.0), -90.0);
        assert!((gate_voltage_at(&w, 10e6, 100.0) + 90.0).abs() < 1e-12);
        let w = GateWaveform::new("P2", 120.0, -90.0, PI / 2.0, 0.0);
        assert!((gate_voltage_at(&w, 10e6, 0.0) + 150.0).abs() < 1e-12);
    }

    #[test]
    fn disabled_tone_equals_zero_amplitude() {
        let mut w = GateWaveform::new("B3", 100.0, 5.0, 0.3, 1.1);
        w.tone_f = false;
        let mut only_half = w.clone();
        only_half.tone_f = true;
        for k in 0..20 {
            let c = 0.13 * k as f64;
            let expect = 5.0 + 50.0 * (PI * c - 1.1).sin();
            assert!((w.voltage_at_cycle(c) - expect).abs() < 1e-12);
            assert_ne!(only_half.voltage_at_cycle(c), 0.0);
        }
    }

    #[test]
    fn single_gate_profile() {
        let stack = GateStack::channel();
        let mut v = vec![0.0; 12];
        v[4] = 100.0;
        let grid = stack.grid(1.0);
        let u = potential_from_voltages(&stack, &v, &grid).unwrap();
        let p3 = stack.center_of("P3").unwrap();
        let i = grid.iter().position(|&x| x == p3).unwrap();
        assert!((u[i] + 10.0).abs() < 1e-12);
        let half = grid.iter().position(|&x| x == p3 + 45.0).unwrap();
        assert!((u[half] + 5.0).abs() < 1e-12);
    }

    #[test]
    fn empty_stack_is_config_error() {
        assert!(matches!(GateStack::new(vec![], 90.0), Err(Error::Config(_))));
    }

    #[test]
    fn double_well_and_parabola() {
        let x: Vec<f64> = (0..=400).map(|i| i as f64 * 0.01).collect();
        let cosw: Vec<f64> = x.iter().map(|&x| (PI * x).cos()).collect();
        let st = find_extrema_raw(&x, &cosw, 0.0).unwrap();
        assert_eq!(st.minima.len(), 2);
        let b = st.barrier.unwrap();
        assert!((b.position_nm - 2.0).abs() < 1e-6);
        assert!((b.height_mev - 2.0).abs() < 1e-6);

        let par: Vec<f64> = x.iter().map(|&x| (x - 1.234).powi(2)).collect();
        let st = find_extrema_raw(&x, &par, 0.0).unwrap();
        assert_eq!(st.minima.len(), 1);
        assert!((st.minima[0].position_nm - 1.234).abs() < 1e-9);
        assert!((st.minima[0].curvature - 2.0).abs() < 1e-6);
        assert!(st.barrier.is_none());

        let mono: Vec<f64> = x.clone();
        assert!(find_extrema_raw(&x, &mono, 0.0).unwrap().minima.is_empty());
    }

    #[test]
    fn displacement() {
        assert_eq!(displacement_for_cycles(0.0, 90.0).unwrap(), 0.0);
        assert_eq!(displacement_for_cycles(1.0, 90.0).unwrap(), 180.0);
        assert!((displacement_for_cycles(0.9, 90.0).unwrap() - 162.0).abs() < 1e-12);
        assert!(displacement_for_cycles(-0.1, 90.0).is_err());
    }

    #[test]
    fn tables_parse() {
        let t1 = WaveformTable::builtin(BuiltinTable::ExchangeSweep);
        assert!(t1.waveforms(PhaseUnit::HalfTurn, &DcTreatment::default(), &HashMap::new()).is_err());
        let t3 = WaveformTable::builtin(BuiltinTable::Merge);
        let wf = t3.waveforms(PhaseUnit::HalfTurn, &DcTreatment::Verbatim, &HashMap::new()).unwrap();
        assert!(wf.iter().all(|w| !w.tone_f && w.tone_f2));
        assert_eq!(wf[5].dc_offset_mv, -10.0);
    }

    #[test]
    fn merge_table_ends_in_one_well() {
        let conv = builtin_conveyor(BuiltinTable::Merge, None).unwrap();
        assert_eq!(conv.state(0.0).unwrap().minima.len(), 2);
        assert_eq!(conv.state(1.0).unwrap().minima.len(), 1);
        let m = conv.merge_cycle(1.0, 100).unwrap().unwrap();
        assert!(m > 0.5 && m <= 1.0, "{m}");
    }

    #[test]
    fn tracked_wells_approach_center() {
        let conv = builtin_conveyor(BuiltinTable::ExchangeSweep, Some(9.5)).unwrap();
        let b3 = conv.stack.center_of("B3").unwrap();
        let left = conv.track_well(conv.stack.center_of("P2").unwrap(), 0.8, 80, 20.0).unwrap();
        let right = conv.track_well(conv.stack.center_of("P5").unwrap(), 0.8, 80, 20.0).unwrap();
        assert!(left.last().unwrap().0 >= 0.4);
        for ((_, a), (_, b)) in left.iter().zip(&right) {
            assert!((a - b3 + b - b3).abs() < 1e-6);
        }
        assert!(left.windows(2).all(|w| w[1].1 > w[0].1));
        let at = |c: f64| left.iter().find(|p| (p.0 - c).abs() < 1e-9).unwrap().1;
        let speed = (at(0.4) - at(0.0)) / 0.4;
        assert!((speed / 180.0 - 1.0).abs() < 0.2, "{speed}");
    }

    fn mirror_voltages(half: &[f64]) -> Vec<f64> {
        // B3 (index 5) is the mirror axis; B6 has no partner and stays at 0.
        let mut v = vec![0.0; 12];
        for i in 0..=5 {
            v[i] = half[i];
            v[10 - i] = half[i];
        }
        v
    }

    proptest! {
        #[test]
        fn potential_is_linear(a in prop::collection::vec(-200.0f64..200.0, 12), b in prop::collection::vec(-200.0f64..200.0, 12), s in -3.0f64..3.0, t in -3.0f64..3.0) {
            let stack = GateStack::channel();
            let grid = stack.grid(5.0);
            let ua = potential_from_voltages(&stack, &a, &grid).unwrap();
            let ub = potential_from_voltages(&stack, &b, &grid).unwrap();
            let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| s * x + t * y).collect();
            let um = potential_from_voltages(&stack, &mix, &grid).unwrap();
            let scale = ua.iter().chain(&ub).fold(1.0f64, |m, v| m.max(v.abs()));
            for i in 0..grid.len() {
                prop_assert!((um[i] - (s * ua[i] + t * ub[i])).abs() <= 1e-12 * scale * (1.0 + s.abs() + t.abs()));
            }
        }

        #[test]
        fn symmetric_drive_gives_symmetric_profile(half in prop::collection::vec(-200.0f64..200.0, 6)) {
            let stack = GateStack::channel();
            let axis = stack.center_of("B3").unwrap();
            let grid: Vec<f64> = (0..=90).map(|k| k as f64 * axis / 45.0).collect();
            let mirrored: Vec<f64> = grid.iter().map(|x| 2.0 * axis - x).collect();
            let v = mirror_voltages(&half);
            let u = potential_from_voltages(&stack, &v, &grid).unwrap();
            let w = potential_from_voltages(&stack, &v, &mirrored).unwrap();
            for (x, y) in u.iter().zip(&w) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn table_drive_is_mirror_symmetric(c in 0.0f64..2.0) {
            let conv = builtin_conveyor(BuiltinTable::ExchangeSweep, Some(9.5)).unwrap();
            let st = conv.state(c).unwrap();
            let axis = conv.stack.center_of("B3").unwrap();
            let mut pos: Vec<f64> = st.minima.iter().map(|m| m.position_nm).collect();
            let mut mirrored: Vec<f64> = pos.iter().map(|x| 2.0 * axis - x).collect();
            pos.sort_by(f64::total_cmp);
            mirrored.sort_by(f64::total_cmp);
            for (a, b) in pos.iter().zip(&mirrored) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn waveform_period_is_two_cycles(a in 0.0f64..200.0, dc in -150.0f64..150.0, p in -7.0f64..7.0, q in -7.0f64..7.0, c in 0.0f64..5.0) {
            let w = GateWaveform::new("g", a, dc, p, q);
            let v0 = w.voltage_at_cycle(c);
            let v1 = w.voltage_at_cycle(c + 2.0);
            prop_assert!((v0 - v1).abs() <= 1e-9 * (1.0 + v0.abs()));
        }
    }
}
