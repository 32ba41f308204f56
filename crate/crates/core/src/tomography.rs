//! State and process tomography in the Pauli basis.
//!
//! Pauli strings are ordered (I, X, Y, Z) per qubit, qubit 0 most
//! significant. PTMs use the normalized basis `P/√d`, so
//! `R[i][j] = tr(P_i E(P_j)) / d`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{
    c, hermitian_eigenvalues, identity, kron_all, pauli, pauli_string, psd_projection, trace, CMat, ZERO,
};
use crate::readout::{correct_readout, ConfusionMatrix};
use crate::rng::{mix_seed, stream_rng};

/// One row of a counts table: outcome counts indexed by bit string
/// (qubit 0 first, `0` = `+1` eigenvalue of the basis Pauli).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountsRow {
    pub prep: String,
    pub basis: String,
    pub counts: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CountsTable {
    pub rows: Vec<CountsRow>,
}

#[derive(Debug, Deserialize, Serialize)]
struct CountsCsvRow {
    prep: String,
    basis: String,
    outcome: String,
    count: f64,
}

impl CountsTable {
    pub fn push(&mut self, prep: &str, basis: &str, counts: Vec<f64>) {
        self.rows.push(CountsRow { prep: prep.into(), basis: basis.into(), counts });
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        for r in &self.rows {
            if r.basis.len() != n_qubits || !r.basis.chars().all(|ch| matches!(ch, 'X' | 'Y' | 'Z')) {
                return Err(Error::Validation(format!(
                    "basis label '{}' is not a {n_qubits}-qubit X/Y/Z string",
                    r.basis
                )));
            }
            if r.counts.len() != 1 << n_qubits {
                return Err(Error::Validation(format!(
                    "basis '{}' has {} outcomes, expected {}",
                    r.basis,
                    r.counts.len(),
                    1 << n_qubits
                )));
            }
            if r.counts.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Validation(format!("negative or non-finite count in basis '{}'", r.basis)));
            }
        }
        Ok(())
    }

    /// Read the long CSV form `prep,basis,outcome,count`.
    pub fn from_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut grouped: BTreeMap<(String, String), Vec<(usize, f64)>> = BTreeMap::new();
        let mut order = Vec::new();
        for rec in rd.deserialize() {
            let row: CountsCsvRow = rec?;
            let k = usize::from_str_radix(&row.outcome, 2)
                .map_err(|_| Error::Validation(format!("outcome '{}' is not a bit string", row.outcome)))?;
            let key = (row.prep, row.basis);
            if !grouped.contains_key(&key) {
                order.push(key.clone());
            }
            grouped.entry(key).or_default().push((k, row.count));
        }
        let mut t = CountsTable::default();
        for key in order {
            let entries = &grouped[&key];
            let n = key.1.len();
            let mut counts = vec![0.0; 1 << n];
            for &(k, v) in entries {
                if k >= counts.len() {
                    return Err(Error::Validation(format!("outcome index {k} too large for basis '{}'", key.1)));
                }
                counts[k] += v;
            }
            t.rows.push(CountsRow { prep: key.0, basis: key.1, counts });
        }
        Ok(t)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_csv(std::fs::File::open(path)?)
    }

    pub fn to_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            let n = r.basis.len();
            for (k, v) in r.counts.iter().enumerate() {
                wr.serialize(CountsCsvRow {
                    prep: r.prep.clone(),
                    basis: r.basis.clone(),
                    outcome: format!("{k:0n$b}"),
                    count: *v,
                })?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Eigenprojector of a single-qubit Pauli basis: outcome 0 is `+1`.
pub fn basis_eigenprojector(basis: char, outcome: usize) -> CMat {
    let k = match basis {
        'X' => 1,
        'Y' => 2,
        'Z' => 3,
        _ => panic!("unknown basis {basis}"),
    };
    let sign = if outcome == 0 { 1.0 } else { -1.0 };
    (identity(2) + pauli(k) * c(sign, 0.0)) * c(0.5, 0.0)
}

/// Projector for outcome bit string `k` in a multi-qubit basis.
pub fn outcome_projector(basis: &str, k: usize) -> CMat {
    let n = basis.len();
    let ops: Vec<CMat> =
        basis.chars().enumerate().map(|(q, b)| basis_eigenprojector(b, (k >> (n - 1 - q)) & 1)).collect();
    kron_all(&ops)
}

/// Single-qubit preparation state by label: `0`, `1`, `+`, `-`, `+i`, `-i`.
pub fn prep_state(label: &str) -> Result<CMat> {
    let (basis, outcome) = match label {
        "0" => ('Z', 0),
        "1" => ('Z', 1),
        "+" => ('X', 0),
        "-" => ('X', 1),
        "+i" => ('Y', 0),
        "-i" => ('Y', 1),
        _ => return Err(Error::Validation(format!("unknown preparation label '{label}'"))),
    };
    Ok(basis_eigenprojector(basis, outcome))
}

fn pauli_label(index: usize, n: usize) -> String {
    (0..n).map(|q| ['I', 'X', 'Y', 'Z'][(index >> (2 * (n - 1 - q))) & 3]).collect()
}

fn n_qubits_of(d: usize) -> Result<usize> {
    if d < 2 || !d.is_power_of_two() {
        return Err(Error::Validation(format!("dimension {d} is not a qubit register")));
    }
    Ok(d.trailing_zeros() as usize)
}

#[derive(Debug, Clone, Serialize)]
pub struct DensityMatrixEstimate {
    #[serde(serialize_with = "ser_cmat")]
    pub rho: CMat,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn ser_cmat<S: serde::Serializer>(m: &CMat, s: S) -> std::result::Result<S::Ok, S::Error> {
    ComplexMatrixJson::from(m).serialize(s)
}

/// Row-major JSON form with `[re, im]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexMatrixJson {
    pub dim: usize,
    pub entries: Vec<[f64; 2]>,
}

impl From<&CMat> for ComplexMatrixJson {
    fn from(m: &CMat) -> Self {
        let mut entries = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for col in 0..m.ncols() {
                entries.push([m[(r, col)].re, m[(r, col)].im]);
            }
        }
        ComplexMatrixJson { dim: m.nrows(), entries }
    }
}

impl ComplexMatrixJson {
    pub fn to_matrix(&self) -> CMat {
        let v: Vec<Complex64> = self.entries.iter().map(|[re, im]| c(*re, *im)).collect();
        CMat::from_row_slice(self.dim, self.dim, &v)
    }
}

/// Check that every non-identity Pauli string is measurable from the
/// given bases.
pub fn check_state_completeness(bases: &[&str], n: usize) -> Result<()> {
    let mut missing = Vec::new();
    for idx in 1..(1usize << (2 * n)) {
        let label = pauli_label(idx, n);
        let covered = bases.iter().any(|b| label.chars().zip(b.chars()).all(|(p, m)| p == 'I' || p == m));
        if !covered {
            missing.push(label);
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::RankDeficient(format!("unmeasured Pauli directions: {}", missing.join(", "))))
    }
}

fn log_likelihood(rho: &CMat, data: &[(CMat, f64)]) -> f64 {
    data.iter().filter(|(_, f)| *f > 0.0).map(|(pi, f)| f * trace(&(pi * rho)).re.max(1e-300).ln()).sum()
}

/// Maximum-likelihood state estimate by the diluted `RρR` iteration.
pub fn qst_mle(counts: &CountsTable, n_qubits: usize) -> Result<DensityMatrixEstimate> {
    counts.validate(n_qubits)?;
    let bases: Vec<&str> = counts.rows.iter().map(|r| r.basis.as_str()).collect();
    check_state_completeness(&bases, n_qubits)?;
    let d = 1usize << n_qubits;
    let total: f64 = counts.rows.iter().flat_map(|r| r.counts.iter()).sum();
    if total <= 0.0 {
        return Err(Error::Validation("counts table is empty".into()));
    }
    let mut data = Vec::new();
    for r in &counts.rows {
        for (k, &n) in r.counts.iter().enumerate() {
            data.push((outcome_projector(&r.basis, k), n / total));
        }
    }
    let mut rho = identity(d) * c(1.0 / d as f64, 0.0);
    let mut ll = log_likelihood(&rho, &data);
    let mut eps = 1e3;
    let max_iter = 100_000;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let mut r = CMat::zeros(d, d);
        for (pi, f) in &data {
            if *f > 0.0 {
                let p = trace(&(pi * &rho)).re.max(1e-300);
                r += pi * c(f / p, 0.0);
            }
        }
        let (next, next_ll) = loop {
            let step = (identity(d) + &r * c(eps, 0.0)) * c(1.0 / (1.0 + eps), 0.0);
            let cand = &step * &rho * step.adjoint();
            let cand = (&cand + cand.adjoint()) * c(0.5 / trace(&cand).re, 0.0);
            let cand_ll = log_likelihood(&cand, &data);
            if cand_ll >= ll - 1e-14 || eps < 1e-8 {
                break (cand, cand_ll);
            }
            eps *= 0.5;
        };
        let gain = next_ll - ll;
        rho = next;
        ll = next_ll;
        if gain < 1e-10 && iterations > 1 {
            converged = true;
            break;
        }
    }
    Ok(DensityMatrixEstimate { rho, log_likelihood: ll * total, iterations, converged })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BellFamily {
    /// `(|00⟩ + e^{iφ}|11⟩)/√2`
    Phi,
    /// `(|01⟩ + e^{iφ}|10⟩)/√2`
    Psi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BellFit {
    pub fidelity: f64,
    pub phase: f64,
    pub family: BellFamily,
}

/// Overlap with the closest Bell state over both families and a free
/// relative phase.
pub fn bell_fidelity(rho: &CMat) -> Result<BellFit> {
    if rho.nrows() != 4 || rho.ncols() != 4 {
        return Err(Error::Validation("Bell fidelity needs a 4×4 density matrix".into()));
    }
    let fam = |a: usize, b: usize, family| {
        let coh = rho[(b, a)];
        BellFit { fidelity: 0.5 * (rho[(a, a)].re + rho[(b, b)].re) + coh.norm(), phase: coh.arg(), family }
    };
    let phi = fam(0, 3, BellFamily::Phi);
    let psi = fam(1, 2, BellFamily::Psi);
    Ok(if psi.fidelity > phi.fidelity { psi } else { phi })
}

/// Real `d² × d²` Pauli transfer matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliTransferMatrix {
    pub d: usize,
    pub r: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct PtmJson {
    dim: usize,
    labels: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Serialize for PauliTransferMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.d.trailing_zeros() as usize;
        PtmJson {
            dim: self.d,
            labels: (0..self.r.nrows()).map(|i| pauli_label(i, n)).collect(),
            rows: (0..self.r.nrows()).map(|i| self.r.row(i).iter().copied().collect()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PauliTransferMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let j = PtmJson::deserialize(de)?;
        let m = j.dim * j.dim;
        if j.rows.len() != m || j.rows.iter().any(|r| r.len() != m) {
            return Err(serde::de::Error::custom("PTM rows do not match dimension"));
        }
        let flat: Vec<f64> = j.rows.into_iter().flatten().collect();
        Ok(PauliTransferMatrix { d: j.dim, r: DMatrix::from_row_slice(m, m, &flat) })
    }
}

impl PauliTransferMatrix {
    /// PTM of an arbitrary linear map on `d × d` matrices.
    pub fn from_map<F: Fn(&CMat) -> CMat>(d: usize, f: F) -> Result<Self> {
        let n = n_qubits_of(d)?;
        let m = d * d;
        let paulis: Vec<CMat> = (0..m).map(|i| pauli_string(i, n)).collect();
        let mut r = DMatrix::zeros(m, m);
        for j in 0..m {
            let out = f(&paulis[j]);
            for i in 0..m {
                r[(i, j)] = trace(&(&paulis[i] * &out)).re / d as f64;
            }
        }
        Ok(PauliTransferMatrix { d, r })
    }

    pub fn from_unitary(u: &CMat) -> Result<Self> {
        Self::from_map(u.nrows(), |p| u * p * u.adjoint())
    }

    pub fn identity(d: usize) -> Self {
        PauliTransferMatrix { d, r: DMatrix::identity(d * d, d * d) }
    }

    /// Depolarizing channel `ρ → (1 − λ) ρ + λ I/d`.
    pub fn depolarizing(d: usize, lambda: f64) -> Self {
        let mut r = DMatrix::identity(d * d, d * d) * (1.0 - lambda);
        r[(0, 0)] = 1.0;
        PauliTransferMatrix { d, r }
    }

    pub fn apply(&self, rho: &CMat) -> Result<CMat> {
        let n = n_qubits_of(self.d)?;
        let m = self.d * self.d;
        let v = DVector::from_iterator(m, (0..m).map(|j| trace(&(pauli_string(j, n) * rho)).re / self.d as f64));
        let out = &self.r * v;
        Ok((0..m).fold(CMat::zeros(self.d, self.d), |acc, i| acc + pauli_string(i, n) * c(out[i], 0.0)))
    }

    /// Choi matrix `Σ |a⟩⟨b| ⊗ E(|a⟩⟨b|)`, trace `d`.
    pub fn choi(&self) -> CMat {
        let n = self.d.trailing_zeros() as usize;
        let m = self.d * self.d;
        let mut jm = CMat::zeros(m, m);
        for i in 0..m {
            let pi = pauli_string(i, n);
            for j in 0..m {
                let v = self.r[(i, j)];
                if v != 0.0 {
                    jm += pauli_string(j, n).transpose().kronecker(&pi) * c(v / self.d as f64, 0.0);
                }
            }
        }
        jm
    }

    pub fn from_choi(choi: &CMat, d: usize) -> Result<Self> {
        let n = n_qubits_of(d)?;
        let m = d * d;
        let paulis: Vec<CMat> = (0..m).map(|i| pauli_string(i, n)).collect();
        let mut r = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                let op = paulis[j].transpose().kronecker(&paulis[i]);
                r[(i, j)] = trace(&(choi * op)).re / d as f64;
            }
        }
        Ok(PauliTransferMatrix { d, r })
    }

    pub fn min_choi_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(&self.choi())[0]
    }

    /// Largest deviation of the first row from `(1, 0, …, 0)`.
    pub fn tp_error(&self) -> f64 {
        (0..self.r.ncols()).map(|j| (self.r[(0, j)] - if j == 0 { 1.0 } else { 0.0 }).abs()).fold(0.0, f64::max)
    }

    pub fn distance(&self, other: &Self) -> f64 {
        (&self.r - &other.r).abs().max()
    }
}

/// One QPT observation: input state, measurement effect and observed
/// frequency.
#[derive(Debug, Clone)]
pub struct QptObservation {
    pub input: CMat,
    pub effect: CMat,
    pub frequency: f64,
}

/// Turn a counts table with preparation labels into observations.
/// Preparation labels are per-qubit labels joined by `,` for multi-qubit
/// inputs.
pub fn observations_from_counts(counts: &CountsTable, n_qubits: usize) -> Result<Vec<QptObservation>> {
    counts.validate(n_qubits)?;
    let mut out = Vec::new();
    for r in &counts.rows {
        let parts: Vec<&str> = r.prep.split(',').collect();
        if parts.len() != n_qubits {
            return Err(Error::Validation(format!("preparation '{}' does not name {n_qubits} qubits", r.prep)));
        }
        let input = kron_all(&parts.iter().map(|p| prep_state(p)).collect::<Result<Vec<_>>>()?);
        let total: f64 = r.counts.iter().sum();
        if total <= 0.0 {
            return Err(Error::Validation(format!("row ({}, {}) has no counts", r.prep, r.basis)));
        }
        for (k, &n) in r.counts.iter().enumerate() {
            out.push(QptObservation {
                input: input.clone(),
                effect: outcome_projector(&r.basis, k),
                frequency: n / total,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct QptResult {
    pub ptm: PauliTransferMatrix,
    pub unconstrained: PauliTransferMatrix,
    /// Root-sum-square data residual before and after the CPTP projection.
    pub residual_pre: f64,
    pub residual_post: f64,
    pub projection_iterations: usize,
}

fn qpt_design(obs: &[QptObservation], d: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = n_qubits_of(d)?;
    let m = d * d;
    let norm = 1.0 / (d as f64).sqrt();
    let paulis: Vec<CMat> = (0..m).map(|i| pauli_string(i, n) * c(norm, 0.0)).collect();
    let mut a = DMatrix::zeros(obs.len(), m * m);
    let mut y = DVector::zeros(obs.len());
    for (row, o) in obs.iter().enumerate() {
        if o.input.nrows() != d || o.effect.nrows() != d {
            return Err(Error::Validation("observation dimension mismatch".into()));
        }
        let ev: Vec<f64> = paulis.iter().map(|p| trace(&(&o.effect * p)).re).collect();
        let rv: Vec<f64> = paulis.iter().map(|p| trace(&(p * &o.input)).re).collect();
        for i in 0..m {
            for j in 0..m {
                a[(row, i * m + j)] = ev[i] * rv[j];
            }
        }
        y[row] = o.frequency;
    }
    Ok((a, y))
}

fn residual(a: &DMatrix<f64>, y: &DVector<f64>, r: &DMatrix<f64>) -> f64 {
    let m = r.nrows();
    let x = DVector::from_iterator(m * m, (0..m * m).map(|k| r[(k / m, k % m)]));
    (a * x - y).norm()
}

/// Least-squares PTM followed by projection onto CPTP maps.
pub fn qpt_ptm(obs: &[QptObservation], d: usize) -> Result<QptResult> {
    let n = n_qubits_of(d)?;
    let m = d * d;
    let (a, y) = qpt_design(obs, d)?;
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * (m * m) as f64;
    let vt = svd.v_t.as_ref().expect("svd computed with v");
    let null: Vec<usize> = (0..svd.singular_values.len()).filter(|&k| svd.singular_values[k] <= tol).collect();
    if null.len() + svd.singular_values.len() < m * m || !null.is_empty() {
        let mut dirs: Vec<String> = null
            .iter()
            .map(|&k| {
                let row = vt.row(k);
                let (idx, _) =
                    row.iter()
                        .enumerate()
                        .fold((0, 0.0), |best, (i, v)| if v.abs() > best.1 { (i, v.abs()) } else { best });
                format!("R[{},{}]", pauli_label(idx / m, n), pauli_label(idx % m, n))
            })
            .collect();
        if svd.singular_values.len() < m * m {
            dirs.push(format!("{} unknowns beyond {} observations", m * m - svd.singular_values.len(), obs.len()));
        }
        dirs.dedup();
        return Err(Error::RankDeficient(format!("unconstrained PTM directions: {}", dirs.join(", "))));
    }
    let x = svd.solve(&y, tol).map_err(|e| Error::Numerical(e.to_string()))?;
    let r_ls = DMatrix::from_fn(m, m, |i, j| x[i * m + j]);
    let unconstrained = PauliTransferMatrix { d, r: r_ls };
    let (ptm, iters) = cptp_project(&unconstrained)?;
    Ok(QptResult {
        residual_pre: residual(&a, &y, &unconstrained.r),
        residual_post: residual(&a, &y, &ptm.r),
        ptm,
        unconstrained,
        projection_iterations: iters,
    })
}

fn tp_project(r: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = r.clone();
    out[(0, 0)] = 1.0;
    for j in 1..out.ncols() {
        out[(0, j)] = 0.0;
    }
    out
}

fn psd_project(r: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    let p = PauliTransferMatrix { d, r: r.clone() };
    Ok(PauliTransferMatrix::from_choi(&psd_projection(&p.choi()), d)?.r)
}

/// Frobenius projection onto CPTP maps by Dykstra's alternating
/// projections between the PSD Choi cone and the TP affine set.
pub fn cptp_project(ptm: &PauliTransferMatrix) -> Result<(PauliTransferMatrix, usize)> {
    let d = ptm.d;
    let mut x = ptm.r.clone();
    let mut p = DMatrix::zeros(x.nrows(), x.ncols());
    let max_iter = 10_000;
    let mut iters = 0;
    loop {
        iters += 1;
        let y = psd_project(&(&x + &p), d)?;
        p = &x + &p - &y;
        let next = tp_project(&y);
        let update = (&next - &x).norm();
        x = next;
        if update < 1e-12 || iters >= max_iter {
            break;
        }
    }
    // Remove any residual negativity by mixing in the fully depolarizing map,
    // which keeps the TP row exact.
    let out = PauliTransferMatrix { d, r: x };
    let lam = out.min_choi_eigenvalue();
    let out = if lam < 0.0 {
        let t = -lam / (1.0 / d as f64 - lam);
        let dep = PauliTransferMatrix::depolarizing(d, 1.0);
        PauliTransferMatrix { d, r: &out.r * (1.0 - t) + &dep.r * t }
    } else {
        out
    };
    Ok((out, iters))
}

/// Average gate fidelity between two TP channels from their PTMs.
pub fn ptm_average_fidelity(r: &PauliTransferMatrix, r_ideal: &PauliTransferMatrix, d: usize) -> Result<f64> {
    if r.d != d || r_ideal.d != d {
        return Err(Error::Validation("PTM dimension mismatch".into()));
    }
    for (name, m) in [("estimate", r), ("ideal", r_ideal)] {
        if m.tp_error() > 1e-9 {
            return Err(Error::Validation(format!("{name} PTM is not trace preserving")));
        }
    }
    let t = (r_ideal.r.transpose() * &r.r).trace();
    Ok((t / d as f64 + 1.0) / (d as f64 + 1.0))
}

#[derive(Debug, Clone, Serialize)]
pub struct StrippedCounts {
    pub table: CountsTable,
    /// Rows whose inverted probabilities had to be clamped.
    pub clamped_rows: Vec<usize>,
}

/// Undo readout errors row by row. `confusion[q]` is the matrix of qubit
/// `q`'s readout.
pub fn spam_strip(counts: &CountsTable, confusion: &[ConfusionMatrix]) -> Result<StrippedCounts> {
    let n = confusion.len();
    counts.validate(n)?;
    let mut table = CountsTable::default();
    let mut clamped_rows = Vec::new();
    for (idx, r) in counts.rows.iter().enumerate() {
        let total: f64 = r.counts.iter().sum();
        if total <= 0.0 {
            table.rows.push(r.clone());
            continue;
        }
        let mut probs: Vec<f64> = r.counts.iter().map(|v| v / total).collect();
        let mut clamped = false;
        if n == 1 {
            let out = correct_readout([probs[0], probs[1]], &confusion[0])?;
            clamped = out.clamped;
            probs = out.probs.to_vec();
        } else {
            for (q, m) in confusion.iter().enumerate() {
                let det = m.det();
                if det.abs() < 1e-12 {
                    return Err(Error::Singular(format!("confusion matrix of qubit {q}")));
                }
                let a = &m.matrix;
                let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
                let bit = n - 1 - q;
                let mut next = vec![0.0; probs.len()];
                for (k, slot) in next.iter_mut().enumerate() {
                    let o = (k >> bit) & 1;
                    let k0 = k & !(1 << bit);
                    *slot = inv[o][0] * probs[k0] + inv[o][1] * probs[k0 | (1 << bit)];
                }
                probs = next;
            }
            if probs.iter().any(|p| *p < 0.0 || *p > 1.0) {
                clamped = true;
                for p in probs.iter_mut() {
                    *p = p.clamp(0.0, 1.0);
                }
                let s: f64 = probs.iter().sum();
                for p in probs.iter_mut() {
                    *p /= s;
                }
            }
        }
        if clamped {
            clamped_rows.push(idx);
        }
        table.rows.push(CountsRow {
            prep: r.prep.clone(),
            basis: r.basis.clone(),
            counts: probs.iter().map(|p| p * total).collect(),
        });
    }
    Ok(StrippedCounts { table, clamped_rows })
}

/// Exact outcome frequencies of measuring `rho` in every basis.
pub fn ideal_counts(rho: &CMat, prep: &str, bases: &[&str], shots: f64) -> CountsTable {
    let mut t = CountsTable::default();
    for b in bases {
        let counts = (0..rho.nrows()).map(|k| shots * trace(&(outcome_projector(b, k) * rho)).re.max(0.0)).collect();
        t.push(prep, b, counts);
    }
    t
}

/// Multinomial sample of `shots` outcomes per basis.
pub fn sampled_counts<R: Rng>(rho: &CMat, prep: &str, bases: &[&str], shots: usize, rng: &mut R) -> CountsTable {
    let mut t = CountsTable::default();
    for b in bases {
        let probs: Vec<f64> = (0..rho.nrows()).map(|k| trace(&(outcome_projector(b, k) * rho)).re.max(0.0)).collect();
        t.push(prep, b, sample_multinomial(&probs, shots, rng));
    }
    t
}

pub fn sample_multinomial<R: Rng>(probs: &[f64], shots: usize, rng: &mut R) -> Vec<f64> {
    let total: f64 = probs.iter().sum();
    let mut counts = vec![0.0; probs.len()];
    for _ in 0..shots {
        let mut u = rng.gen::<f64>() * total;
        let mut k = 0;
        while k + 1 < probs.len() && u >= probs[k] {
            u -= probs[k];
            k += 1;
        }
        counts[k] += 1.0;
    }
    counts
}

/// All `3^n` Pauli measurement bases.
pub fn pauli_bases(n: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    for _ in 0..n {
        out = out.iter().flat_map(|s| ['X', 'Y', 'Z'].iter().map(move |ch| format!("{s}{ch}"))).collect();
    }
    out
}

/// Bootstrap standard deviation of the Bell fidelity from multinomial
/// resampling of each basis row.
pub fn bootstrap_bell_fidelity(counts: &CountsTable, resamples: usize, seed: u64) -> Result<f64> {
    use rayon::prelude::*;
    if resamples < 2 {
        return Err(Error::Validation("bootstrap needs at least two resamples".into()));
    }
    let vals: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|b| -> Result<f64> {
            let mut rng = stream_rng(mix_seed(seed, 0xb0075), b as u64);
            let mut t = CountsTable::default();
            for r in &counts.rows {
                let total: f64 = r.counts.iter().sum();
                let probs: Vec<f64> = r.counts.iter().map(|v| v / total).collect();
                t.push(&r.prep, &r.basis, sample_multinomial(&probs, total.round() as usize, &mut rng));
            }
            Ok(bell_fidelity(&qst_mle(&t, 2)?.rho)?.fidelity)
        })
        .collect::<Result<_>>()?;
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    Ok((vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt())
}

/// Pure Bell state `(|ab⟩ + e^{iφ}|āb̄⟩)/√2` as a density matrix.
pub fn bell_state(family: BellFamily, phase: f64) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut v = vec![ZERO; 4];
    let (a, b) = match family {
        BellFamily::Phi => (0, 3),
        BellFamily::Psi => (1, 2),
    };
    v[a] = c(s, 0.0);
    v[b] = Complex64::from_polar(s, phase);
    crate::quantum::ket_to_density(&v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{density_projection, embed, max_abs_diff, rx, rz, trace_distance};
    use crate::readout::apply_confusion;
    use proptest::prelude::*;

    fn qpt_observations<F: Fn(&CMat) -> CMat>(channel: F) -> Vec<QptObservation> {
        let mut obs = Vec::new();
        for prep in ["0", "1", "+", "+i"] {
            let input = prep_state(prep).unwrap();
            let out = channel(&input);
            for b in ['X', 'Y', 'Z'] {
                for k in 0..2 {
                    let effect = basis_eigenprojector(b, k);
                    let frequency = trace(&(&effect * &out)).re;
                    obs.push(QptObservation { input: input.clone(), effect, frequency });
                }
            }
        }
        obs
    }

    /// Linear inversion from Pauli expectations, then projection to the
    /// nearest density matrix.
    fn linear_inversion(counts: &CountsTable, n: usize) -> CMat {
        let d = 1usize << n;
        let mut rho = identity(d) * c(1.0 / d as f64, 0.0);
        for idx in 1..d * d {
            let label = pauli_label(idx, n);
            let mut sum = 0.0;
            let mut used = 0.0;
            for r in &counts.rows {
                if !label.chars().zip(r.basis.chars()).all(|(p, m)| p == 'I' || p == m) {
                    continue;
                }
                let total: f64 = r.counts.iter().sum();
                let mut e = 0.0;
                for (k, v) in r.counts.iter().enumerate() {
                    let sign: i32 = label
                        .chars()
                        .enumerate()
                        .filter(|(_, p)| *p != 'I')
                        .map(|(q, _)| if (k >> (n - 1 - q)) & 1 == 1 { -1 } else { 1 })
                        .product();
                    e += sign as f64 * v / total;
                }
                sum += e;
                used += 1.0;
            }
            rho += pauli_string(idx, n) * c(sum / used / d as f64, 0.0);
        }
        density_projection(&rho)
    }

    #[test]
    fn mle_recovers_pure_states() {
        let zero = crate::quantum::basis_projector(2, 0);
        let est = qst_mle(&ideal_counts(&zero, "", &["X", "Y", "Z"], 1000.0), 1).unwrap();
        assert!(max_abs_diff(&est.rho, &zero) < 1e-6, "{}", est.rho);

        let phi = bell_state(BellFamily::Phi, 0.0);
        let bases = pauli_bases(2);
        let refs: Vec<&str> = bases.iter().map(String::as_str).collect();
        let est = qst_mle(&ideal_counts(&phi, "", &refs, 1000.0), 2).unwrap();
        let f = bell_fidelity(&est.rho).unwrap();
        assert!((f.fidelity - 1.0).abs() < 1e-6, "{f:?}");
        let ev = hermitian_eigenvalues(&est.rho);
        assert!(ev[0] > -1e-10);
        assert!((trace(&est.rho).re - 1.0).abs() < 1e-10);
    }

    #[test]
    fn mle_finite_shots_agrees_with_linear_inversion() {
        let mut rng = stream_rng(17, 0);
        let rho = density_projection(&(bell_state(BellFamily::Psi, 0.7) * c(0.8, 0.0) + identity(4) * c(0.05, 0.0)));
        let bases = pauli_bases(2);
        let refs: Vec<&str> = bases.iter().map(String::as_str).collect();
        let counts = sampled_counts(&rho, "", &refs, 1000, &mut rng);
        let mle = qst_mle(&counts, 2).unwrap();
        let lin = linear_inversion(&counts, 2);
        assert!(trace_distance(&mle.rho, &rho) < 0.05);
        assert!(trace_distance(&lin, &rho) < 0.05);
        assert!(trace_distance(&mle.rho, &lin) < 0.05);
        assert!(hermitian_eigenvalues(&mle.rho)[0] > -1e-10);
    }

    #[test]
    fn incomplete_bases_rejected() {
        let zero = crate::quantum::basis_projector(2, 0);
        let err = qst_mle(&ideal_counts(&zero, "", &["X", "Z"], 100.0), 1).unwrap_err();
        assert!(matches!(err, Error::RankDeficient(ref m) if m.contains('Y')));
    }

    #[test]
    fn bell_fidelity_examples() {
        let f = bell_fidelity(&bell_state(BellFamily::Phi, 0.0)).unwrap();
        assert!((f.fidelity - 1.0).abs() < 1e-12 && f.phase.abs() < 1e-12);
        let f = bell_fidelity(&(identity(4) * c(0.25, 0.0))).unwrap();
        assert!((f.fidelity - 0.25).abs() < 1e-12);
        let f = bell_fidelity(&bell_state(BellFamily::Psi, 1.1)).unwrap();
        assert!((f.fidelity - 1.0).abs() < 1e-12);
        assert!((f.phase - 1.1).abs() < 1e-12);
        assert_eq!(f.family, BellFamily::Psi);
    }

    #[test]
    fn qpt_examples() {
        let x = pauli(1);
        let res = qpt_ptm(&qpt_observations(|r| &x * r * &x), 2).unwrap();
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, -1.0, -1.0]));
        assert!((&res.ptm.r - &want).abs().max() < 1e-6);

        let res = qpt_ptm(&qpt_observations(|r| r.clone()), 2).unwrap();
        assert!((&res.ptm.r - DMatrix::<f64>::identity(4, 4)).abs().max() < 1e-6);

        let lambda = 0.3;
        let res =
            qpt_ptm(&qpt_observations(|r| r * c(1.0 - lambda, 0.0) + identity(2) * c(lambda / 2.0, 0.0)), 2).unwrap();
        assert!(res.ptm.distance(&PauliTransferMatrix::depolarizing(2, lambda)) < 1e-6);
        assert!(res.residual_pre < 1e-9);
    }

    #[test]
    fn qpt_rank_deficiency_reported() {
        let obs: Vec<_> = qpt_observations(|r| r.clone())
            .into_iter()
            .filter(|o| o.input[(0, 0)].re != 0.5 || o.input[(0, 1)].im == 0.0)
            .collect();
        let err = qpt_ptm(&obs, 2).unwrap_err();
        assert!(matches!(err, Error::RankDeficient(ref m) if m.contains("R[")), "{err}");
    }

    #[test]
    fn ptm_fidelity_examples() {
        let ideal = PauliTransferMatrix::from_unitary(&pauli(1)).unwrap();
        assert!((ptm_average_fidelity(&ideal, &ideal, 2).unwrap() - 1.0).abs() < 1e-12);
        let dep = PauliTransferMatrix::depolarizing(2, 1.0);
        assert!((ptm_average_fidelity(&dep, &ideal, 2).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn choi_round_trip() {
        let u = rx(0.3) * rz(1.2);
        let p = PauliTransferMatrix::from_unitary(&u).unwrap();
        let back = PauliTransferMatrix::from_choi(&p.choi(), 2).unwrap();
        assert!(p.distance(&back) < 1e-12);
        assert!((trace(&p.choi()).re - 2.0).abs() < 1e-12);
        let rho = prep_state("+i").unwrap();
        assert!(max_abs_diff(&p.apply(&rho).unwrap(), &(&u * &rho * u.adjoint())) < 1e-12);
    }

    #[test]
    fn spam_strip_examples() {
        let mut t = CountsTable::default();
        t.push("0", "Z", vec![700.0, 300.0]);
        let same = spam_strip(&t, &[ConfusionMatrix::identity()]).unwrap();
        assert_eq!(same.table, t);

        let m = ConfusionMatrix::verification();
        let noisy = apply_confusion([0.7, 0.3], &m);
        let mut t2 = CountsTable::default();
        t2.push("0", "Z", vec![noisy[0] * 1000.0, noisy[1] * 1000.0]);
        let back = spam_strip(&t2, &[m]).unwrap();
        assert!((back.table.rows[0].counts[0] - 700.0).abs() < 1e-9);
        assert!(back.clamped_rows.is_empty());

        // Two-qubit stripping matches the tensor-product oracle.
        let m2 = ConfusionMatrix::symmetric(0.1).unwrap();
        let truth = [0.4, 0.1, 0.2, 0.3];
        let mut noisy2 = [0.0; 4];
        for (k, slot) in noisy2.iter_mut().enumerate() {
            for (j, p) in truth.iter().enumerate() {
                *slot += m.matrix[k >> 1][j >> 1] * m2.matrix[k & 1][j & 1] * p;
            }
        }
        let mut t3 = CountsTable::default();
        t3.push("0,0", "ZZ", noisy2.to_vec());
        let back = spam_strip(&t3, &[m, m2]).unwrap();
        for k in 0..4 {
            assert!((back.table.rows[0].counts[k] - truth[k]).abs() < 1e-12);
        }
    }

    /// X-channel data corrupted by the full confusion matrix; stripping with
    /// a progressively stronger correction raises the fidelity monotonically.
    #[test]
    fn spam_strip_improves_fidelity_monotonically() {
        let m = ConfusionMatrix::verification();
        let x = pauli(1);
        let ideal = PauliTransferMatrix::from_unitary(&x).unwrap();
        let mut t = CountsTable::default();
        for prep in ["0", "1", "+", "+i"] {
            let out = &x * prep_state(prep).unwrap() * &x;
            for b in ["X", "Y", "Z"] {
                let p = [trace(&(outcome_projector(b, 0) * &out)).re, trace(&(outcome_projector(b, 1) * &out)).re];
                let q = apply_confusion(p, &m);
                t.push(prep, b, vec![q[0] * 1000.0, q[1] * 1000.0]);
            }
        }
        let mut last = 0.0;
        for step in 0..=10 {
            let s = step as f64 / 10.0;
            let stripped = spam_strip(&t, &[m.scaled(s)]).unwrap();
            let res = qpt_ptm(&observations_from_counts(&stripped.table, 1).unwrap(), 2).unwrap();
            let f = ptm_average_fidelity(&res.ptm, &ideal, 2).unwrap();
            assert!(f >= last - 1e-12, "step {step}: {f} < {last}");
            last = f;
        }
        assert!((last - 1.0).abs() < 1e-6);
    }

    #[test]
    fn estimator_error_scales_as_inverse_sqrt_shots() {
        let lambda = 0.2;
        let truth = PauliTransferMatrix::depolarizing(2, lambda);
        let ideal = PauliTransferMatrix::identity(2);
        let f_true = ptm_average_fidelity(&truth, &ideal, 2).unwrap();
        let rms = |shots: usize, seed: u64| {
            let mut acc = 0.0;
            let reps = 60;
            for rep in 0..reps {
                let mut rng = stream_rng(seed, rep);
                let mut t = CountsTable::default();
                for prep in ["0", "1", "+", "+i"] {
                    let out = truth.apply(&prep_state(prep).unwrap()).unwrap();
                    for b in ["X", "Y", "Z"] {
                        let probs =
                            [trace(&(outcome_projector(b, 0) * &out)).re, trace(&(outcome_projector(b, 1) * &out)).re];
                        t.push(prep, b, sample_multinomial(&probs, shots, &mut rng));
                    }
                }
                let res = qpt_ptm(&observations_from_counts(&t, 1).unwrap(), 2).unwrap();
                acc += (ptm_average_fidelity(&res.ptm, &ideal, 2).unwrap() - f_true).powi(2);
            }
            (acc / reps as f64).sqrt()
        };
        let ratio = rms(200, 1) / rms(3200, 2);
        assert!((2.0..=8.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn json_formats() {
        let p = PauliTransferMatrix::from_unitary(&pauli(1)).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"labels\":[\"I\",\"X\",\"Y\",\"Z\"]"));
        let back: PauliTransferMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        let rho = bell_state(BellFamily::Phi, 0.4);
        let j = ComplexMatrixJson::from(&rho);
        assert!(max_abs_diff(&j.to_matrix(), &rho) < 1e-15);

        let mut t = CountsTable::default();
        t.push("0,+", "XZ", vec![1.0, 2.0, 3.0, 4.0]);
        let mut buf = Vec::new();
        t.to_csv(&mut buf).unwrap();
        assert_eq!(CountsTable::from_csv(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn bootstrap_spread_is_small_for_many_shots() {
        let mut rng = stream_rng(4, 0);
        let bases = pauli_bases(2);
        let refs: Vec<&str> = bases.iter().map(String::as_str).collect();
        let rho = density_projection(&(bell_state(BellFamily::Phi, 0.0) * c(0.9, 0.0) + identity(4) * c(0.025, 0.0)));
        let counts = sampled_counts(&rho, "", &refs, 500, &mut rng);
        let sd = bootstrap_bell_fidelity(&counts, 40, 9).unwrap();
        assert!(sd > 1e-4 && sd < 0.03, "sd {sd}");
    }

    fn random_unitary(v: &[f64]) -> CMat {
        rz(v[0]) * rx(v[1]) * rz(v[2])
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn projection_is_cptp_and_optimal(noise in proptest::collection::vec(-0.3..0.3f64, 16), angles in proptest::collection::vec(-3.0..3.0f64, 6), w in 0.0..1.0f64) {
            let truth = PauliTransferMatrix::from_unitary(&random_unitary(&angles[..3])).unwrap();
            let r = &truth.r + DMatrix::from_row_slice(4, 4, &noise);
            let raw = PauliTransferMatrix { d: 2, r };
            let (proj, _) = cptp_project(&raw).unwrap();
            prop_assert!(proj.min_choi_eigenvalue() >= -1e-9);
            prop_assert!(proj.tp_error() == 0.0);
            // Hand-constructed CPTP candidate: mixture of two unitary channels.
            let other = PauliTransferMatrix::from_unitary(&random_unitary(&angles[3..])).unwrap();
            let cand = &truth.r * w + &other.r * (1.0 - w);
            let d_proj = (&proj.r - &raw.r).norm();
            let d_cand = (&cand - &raw.r).norm();
            prop_assert!(d_proj <= d_cand + 1e-7, "{d_proj} > {d_cand}");
        }

        #[test]
        fn bell_fidelity_phase_invariant(theta in -3.0..3.0f64, mix in 0.0..0.5f64, phase in -3.0..3.0f64) {
            let rho = bell_state(BellFamily::Phi, phase) * c(1.0 - mix, 0.0) + identity(4) * c(mix / 4.0, 0.0);
            let u = embed(&rz(theta), &[0], 2);
            let rotated = &u * &rho * u.adjoint();
            let a = bell_fidelity(&rho).unwrap().fidelity;
            let b = bell_fidelity(&rotated).unwrap().fidelity;
            prop_assert!((a - b).abs() < 1e-10);
        }
    }
}
