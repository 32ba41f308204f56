//! Parity readout, initialization sequence and readout-error correction.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{c, embed, pauli, CMat, ONE};
use crate::rng::{mix_seed, stream_rng, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn of_bits(a: u8, b: u8) -> Self {
        if a == b {
            Parity::Even
        } else {
            Parity::Odd
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Parity::Even => "even",
            Parity::Odd => "odd",
        }
    }
}

/// Projective parity measurement on two qubits of an `n`-qubit register.
#[derive(Debug, Clone, PartialEq)]
pub struct ParityChannel {
    pub pair: (usize, usize),
    pub n_qubits: usize,
    /// Destroy coherence between `|01⟩` and `|10⟩` on odd outcomes.
    pub dephase_odd: bool,
    /// Phase-flip probability applied to both pair qubits after the
    /// measurement (idle period). Zero by default.
    pub idle_dephasing: f64,
}

impl ParityChannel {
    pub fn new(pair: (usize, usize), n_qubits: usize) -> Result<Self> {
        let ch = ParityChannel { pair, n_qubits, dephase_odd: true, idle_dephasing: 0.0 };
        ch.validate()?;
        Ok(ch)
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.pair;
        if a == b || a >= self.n_qubits || b >= self.n_qubits {
            return Err(Error::Validation(format!("invalid parity pair {:?} for {} qubits", self.pair, self.n_qubits)));
        }
        if !(0.0..=1.0).contains(&self.idle_dephasing) {
            return Err(Error::Validation("idle_dephasing must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn pair_projector(&self, local: &[usize]) -> CMat {
        let mut p = CMat::zeros(4, 4);
        for &k in local {
            p[(k, k)] = ONE;
        }
        embed(&p, &[self.pair.0, self.pair.1], self.n_qubits)
    }

    /// Kraus operators of the branch with the given outcome.
    pub fn kraus(&self, outcome: Parity) -> Vec<CMat> {
        match outcome {
            Parity::Even => vec![self.pair_projector(&[0, 3])],
            Parity::Odd if self.dephase_odd => vec![self.pair_projector(&[1]), self.pair_projector(&[2])],
            Parity::Odd => vec![self.pair_projector(&[1, 2])],
        }
    }

    /// Unnormalized post-measurement state of one branch, including the idle
    /// dephasing.
    pub fn branch(&self, rho: &CMat, outcome: Parity) -> CMat {
        let mut out = CMat::zeros(rho.nrows(), rho.ncols());
        for k in self.kraus(outcome) {
            out += &k * rho * k.adjoint();
        }
        if self.idle_dephasing > 0.0 {
            for q in [self.pair.0, self.pair.1] {
                out = phase_flip(&out, q, self.n_qubits, self.idle_dephasing);
            }
        }
        out
    }

    /// Branch probability and normalized post-state.
    pub fn outcome(&self, rho: &CMat, outcome: Parity) -> (f64, Option<CMat>) {
        let b = self.branch(rho, outcome);
        let p = b.trace().re.max(0.0);
        if p < 1e-15 {
            (0.0, None)
        } else {
            (p, Some(b.unscale(p)))
        }
    }

    /// Full channel summed over outcomes, as a superoperator acting on
    /// column-stacked density matrices.
    pub fn superoperator(&self) -> CMat {
        let d = 1usize << self.n_qubits;
        let mut s = CMat::zeros(d * d, d * d);
        for col in 0..d * d {
            let mut e = CMat::zeros(d, d);
            e[(col % d, col / d)] = ONE;
            let out = self.branch(&e, Parity::Even) + self.branch(&e, Parity::Odd);
            for (k, v) in out.iter().enumerate() {
                s[(k, col)] = *v;
            }
        }
        s
    }

    /// Choi matrix `Σ |a⟩⟨b| ⊗ E(|a⟩⟨b|)` of the summed channel.
    pub fn choi(&self) -> CMat {
        let d = 1usize << self.n_qubits;
        let mut j = CMat::zeros(d * d, d * d);
        for a in 0..d {
            for b in 0..d {
                let mut e = CMat::zeros(d, d);
                e[(a, b)] = ONE;
                let out = self.branch(&e, Parity::Even) + self.branch(&e, Parity::Odd);
                for r in 0..d {
                    for s in 0..d {
                        j[(a * d + r, b * d + s)] = out[(r, s)];
                    }
                }
            }
        }
        j
    }
}

/// `ρ → (1 − p) ρ + p Z ρ Z` on qubit `q`.
pub fn phase_flip(rho: &CMat, q: usize, n: usize, p: f64) -> CMat {
    let z = embed(&pauli(3), &[q], n);
    rho * c(1.0 - p, 0.0) + (&z * rho * &z) * c(p, 0.0)
}

/// Sample a parity measurement. Returns the outcome and normalized post-state.
pub fn parity_measure<R: Rng>(rho: &CMat, channel: &ParityChannel, rng: &mut R) -> (Parity, CMat) {
    let (p_even, even) = channel.outcome(rho, Parity::Even);
    let (_, odd) = channel.outcome(rho, Parity::Odd);
    let u: f64 = rng.gen();
    match (u < p_even, even, odd) {
        (true, Some(s), _) | (false, Some(s), None) => (Parity::Even, s),
        (_, _, Some(s)) => (Parity::Odd, s),
        _ => unreachable!("both parity branches empty"),
    }
}

/// Column-stochastic 2×2 readout matrix, `m[measured][prepared]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub matrix: [[f64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn new(matrix: [[f64; 2]; 2]) -> Result<Self> {
        let m = ConfusionMatrix { matrix };
        m.validate()?;
        Ok(m)
    }

    pub fn identity() -> Self {
        ConfusionMatrix { matrix: [[1.0, 0.0], [0.0, 1.0]] }
    }

    /// Q1–Q2 verification readout matrix used for SPAM removal.
    pub fn verification() -> Self {
        Self::from_json(include_str!("../data/confusion_matrix.json")).expect("bundled confusion matrix")
    }

    /// Symmetric flip probability `e` on both outcomes.
    pub fn symmetric(e: f64) -> Result<Self> {
        Self::new([[1.0 - e, e], [e, 1.0 - e]])
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: ConfusionMatrix = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.matrix;
        if m.iter().flatten().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::Validation("confusion entries must lie in [0, 1]".into()));
        }
        for col in 0..2 {
            let s = m[0][col] + m[1][col];
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!("confusion column {col} sums to {s}")));
            }
        }
        Ok(())
    }

    pub fn det(&self) -> f64 {
        let m = &self.matrix;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    /// Interpolate between the identity (`t = 0`) and this matrix (`t = 1`).
    pub fn scaled(&self, t: f64) -> Self {
        let mut out = [[0.0; 2]; 2];
        for r in 0..2 {
            for col in 0..2 {
                let id = if r == col { 1.0 } else { 0.0 };
                out[r][col] = id + t * (self.matrix[r][col] - id);
            }
        }
        ConfusionMatrix { matrix: out }
    }

    /// Draw a measured outcome given the prepared one.
    pub fn sample<R: Rng>(&self, prepared: u8, rng: &mut R) -> u8 {
        let p_flip = self.matrix[1 - prepared as usize][prepared as usize];
        if rng.gen::<f64>() < p_flip {
            1 - prepared
        } else {
            prepared
        }
    }
}

pub fn apply_confusion(p: [f64; 2], m: &ConfusionMatrix) -> [f64; 2] {
    let a = &m.matrix;
    [a[0][0] * p[0] + a[0][1] * p[1], a[1][0] * p[0] + a[1][1] * p[1]]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectedProbs {
    pub probs: [f64; 2],
    /// The raw inversion left the simplex and was clamped.
    pub clamped: bool,
}

pub fn correct_readout(measured: [f64; 2], m: &ConfusionMatrix) -> Result<CorrectedProbs> {
    let det = m.det();
    if det.abs() < 1e-12 {
        return Err(Error::Singular(format!("confusion matrix determinant {det}")));
    }
    let a = &m.matrix;
    let raw =
        [(a[1][1] * measured[0] - a[0][1] * measured[1]) / det, (-a[1][0] * measured[0] + a[0][0] * measured[1]) / det];
    let clamped = raw.iter().any(|v| *v < 0.0 || *v > 1.0);
    if !clamped {
        return Ok(CorrectedProbs { probs: raw, clamped });
    }
    let q = [raw[0].clamp(0.0, 1.0), raw[1].clamp(0.0, 1.0)];
    let s = q[0] + q[1];
    let probs = if s > 0.0 { [q[0] / s, q[1] / s] } else { [0.5, 0.5] };
    Ok(CorrectedProbs { probs, clamped })
}

/// Average of the two state-assignment fidelities.
pub fn parity_readout_fidelity(p1: f64, p0: f64) -> f64 {
    0.5 * (p1 + p0)
}

/// Error knobs of the feedback initialization of the (Q1,Q2) and (Q5,Q6)
/// pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitKnobs {
    /// Probability that a parity check reports the wrong parity.
    pub parity_error: f64,
    /// Probability that a feedback or final X gate has no effect.
    pub x_error: f64,
    /// Probability that the adiabatic map lands in the swapped odd state.
    pub adiabatic_error: f64,
    /// Probability that a shot survives post-selection steps outside the
    /// initialization (e.g. sequence-level charge checks).
    pub sequence_keep: f64,
    /// Number of initialization rounds tried before the shot is discarded.
    pub max_attempts: usize,
}

impl Default for InitKnobs {
    fn default() -> Self {
        InitKnobs { parity_error: 0.0, x_error: 0.0, adiabatic_error: 0.0, sequence_keep: 1.0, max_attempts: 1 }
    }
}

impl InitKnobs {
    /// Error rates matching the reported readout performance and shot
    /// economics.
    pub fn experimental() -> Self {
        InitKnobs {
            parity_error: 0.0144,
            x_error: 0.0,
            adiabatic_error: 0.0,
            sequence_keep: 1.0 / 3.0,
            max_attempts: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("parity_error", self.parity_error),
            ("x_error", self.x_error),
            ("adiabatic_error", self.adiabatic_error),
            ("sequence_keep", self.sequence_keep),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.max_attempts == 0 {
            return Err(Error::Validation("max_attempts must be at least 1".into()));
        }
        Ok(())
    }

    /// Closed-form probability that one round keeps the shot.
    pub fn expected_keep_rate(&self) -> f64 {
        let e = self.parity_error;
        let x = self.x_error;
        // After the feedback step the pair is odd with probability q.
        let q = 0.5 * (1.0 - e) + 0.5 * ((1.0 - e) * (1.0 - x) + e * x);
        let pair = q * (1.0 - e) + (1.0 - q) * e;
        pair * pair * self.sequence_keep
    }
}

/// Result of one initialization shot. `bits` are (Q1, Q2, Q5, Q6).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InitOutcome {
    pub bits: [u8; 4],
    pub kept: bool,
    pub attempts: usize,
}

impl InitOutcome {
    pub fn basis_index(&self) -> usize {
        self.bits.iter().fold(0, |acc, b| (acc << 1) | *b as usize)
    }
}

fn flip_unless<R: Rng>(bit: &mut u8, p_fail: f64, rng: &mut R) {
    if rng.gen::<f64>() >= p_fail {
        *bit ^= 1;
    }
}

fn reported<R: Rng>(truth: Parity, e: f64, rng: &mut R) -> Parity {
    if rng.gen::<f64>() < e {
        truth.flipped()
    } else {
        truth
    }
}

/// Initialize one pair; `feedback_on_second` selects which spin receives
/// the feedback X. Returns the spins and whether the recheck reported odd.
fn init_pair<R: Rng>(k: &InitKnobs, feedback_on_second: bool, rng: &mut R) -> ([u8; 2], bool) {
    let mut s = [rng.gen_range(0..2u8), rng.gen_range(0..2u8)];
    let target = usize::from(feedback_on_second);
    if reported(Parity::of_bits(s[0], s[1]), k.parity_error, rng) == Parity::Even {
        flip_unless(&mut s[target], k.x_error, rng);
    }
    let ok = reported(Parity::of_bits(s[0], s[1]), k.parity_error, rng) == Parity::Odd;
    if Parity::of_bits(s[0], s[1]) == Parity::Odd {
        s = if rng.gen::<f64>() < k.adiabatic_error { [0, 1] } else { [1, 0] };
    }
    (s, ok)
}

/// Feedback initialization of (Q1,Q2,Q5,Q6) towards `|1000⟩`.
pub fn initialize_sequence<R: Rng>(k: &InitKnobs, rng: &mut R) -> InitOutcome {
    let mut attempts = 0;
    loop {
        attempts += 1;
        let (left, ok_left) = init_pair(k, true, rng);
        let (right, ok_right) = init_pair(k, false, rng);
        let mut q5 = right[0];
        flip_unless(&mut q5, k.x_error, rng);
        let bits = [left[0], left[1], q5, right[1]];
        let kept = ok_left && ok_right;
        if kept || attempts >= k.max_attempts {
            let kept = kept && rng.gen::<f64>() < k.sequence_keep;
            return InitOutcome { bits, kept, attempts };
        }
    }
}

/// Exact distribution over initialized basis states given that the shot was
/// kept, together with the keep probability of a single round. Obtained by
/// enumerating every branch of the sampled procedure.
pub fn init_distribution(k: &InitKnobs) -> ([f64; 16], f64) {
    // Per pair: distribution over (spins, recheck ok).
    let pair = |feedback_on_second: bool| -> Vec<([u8; 2], bool, f64)> {
        let e = k.parity_error;
        let mut out = Vec::new();
        for s0 in 0..2u8 {
            for s1 in 0..2u8 {
                for rep1 in [false, true] {
                    let p_rep1 = if rep1 { e } else { 1.0 - e };
                    let seen_even = (Parity::of_bits(s0, s1) == Parity::Even) != rep1;
                    let x_branches: Vec<(bool, f64)> =
                        if seen_even { vec![(true, 1.0 - k.x_error), (false, k.x_error)] } else { vec![(false, 1.0)] };
                    for (flip, px) in x_branches {
                        let mut s = [s0, s1];
                        if flip {
                            s[usize::from(feedback_on_second)] ^= 1;
                        }
                        for rep2 in [false, true] {
                            let p_rep2 = if rep2 { e } else { 1.0 - e };
                            let odd = Parity::of_bits(s[0], s[1]) == Parity::Odd;
                            let ok = odd != rep2;
                            let base = 0.25 * p_rep1 * px * p_rep2;
                            if odd {
                                out.push(([1, 0], ok, base * (1.0 - k.adiabatic_error)));
                                out.push(([0, 1], ok, base * k.adiabatic_error));
                            } else {
                                out.push((s, ok, base));
                            }
                        }
                    }
                }
            }
        }
        out
    };
    let left = pair(true);
    let right = pair(false);
    let mut dist = [0.0; 16];
    let mut keep = 0.0;
    for (l, okl, pl) in &left {
        for (r, okr, pr) in &right {
            if !(okl & okr) {
                continue;
            }
            for (q5, px) in [(r[0] ^ 1, 1.0 - k.x_error), (r[0], k.x_error)] {
                let idx = ((l[0] as usize) << 3) | ((l[1] as usize) << 2) | ((q5 as usize) << 1) | r[1] as usize;
                let w = pl * pr * px;
                dist[idx] += w;
                keep += w;
            }
        }
    }
    if keep > 0.0 {
        for v in dist.iter_mut() {
            *v /= keep;
        }
    }
    (dist, keep * k.sequence_keep)
}

/// One CSV row of a shot record.
#[derive(Debug, Clone, Serialize)]
pub struct ShotRecord {
    pub shot_id: usize,
    pub pair: String,
    pub outcome: String,
    pub kept: bool,
}

/// Run `shots` initialization shots and record the parity of both pairs
/// after initialization. Every shot draws from its own stream.
pub fn simulate_init_shots(k: &InitKnobs, shots: usize, seed: u64) -> Vec<(InitOutcome, Vec<ShotRecord>)> {
    use rayon::prelude::*;
    (0..shots)
        .into_par_iter()
        .map(|i| {
            let mut rng: StreamRng = stream_rng(mix_seed(seed, 0x1417), i as u64);
            let o = initialize_sequence(k, &mut rng);
            let recs = [("Q1Q2", o.bits[0], o.bits[1]), ("Q5Q6", o.bits[2], o.bits[3])]
                .into_iter()
                .map(|(pair, a, b)| ShotRecord {
                    shot_id: i,
                    pair: pair.into(),
                    outcome: Parity::of_bits(a, b).as_str().into(),
                    kept: o.kept,
                })
                .collect();
            (o, recs)
        })
        .collect()
}

pub fn write_shot_records<W: std::io::Write>(records: &[ShotRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{hermitian_eigenvalues, ket_to_density, max_abs_diff, ZERO};
    use proptest::prelude::*;

    fn bell(sign: f64, odd: bool) -> CMat {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut v = vec![ZERO; 4];
        if odd {
            v[1] = c(s, 0.0);
            v[2] = c(sign * s, 0.0);
        } else {
            v[0] = c(s, 0.0);
            v[3] = c(sign * s, 0.0);
        }
        ket_to_density(&v)
    }

    #[test]
    fn parity_examples() {
        let ch = ParityChannel::new((0, 1), 2).unwrap();
        let mut rng = stream_rng(1, 0);
        let zero = crate::quantum::basis_projector(4, 0);
        let (o, post) = parity_measure(&zero, &ch, &mut rng);
        assert_eq!(o, Parity::Even);
        assert!(max_abs_diff(&post, &zero) < 1e-15);

        let (p_odd, post) = ch.outcome(&bell(1.0, true), Parity::Odd);
        assert!((p_odd - 1.0).abs() < 1e-15);
        let post = post.unwrap();
        assert!(post[(1, 2)].norm() < 1e-15);
        assert!((post[(1, 1)].re - 0.5).abs() < 1e-15);

        // Bell state: matrix-level projector oracle P ρ P with P = diag(1,0,0,1).
        let rho = bell(1.0, false);
        let mut p = CMat::zeros(4, 4);
        p[(0, 0)] = ONE;
        p[(3, 3)] = ONE;
        let oracle = &p * &rho * &p;
        let (pe, post) = ch.outcome(&rho, Parity::Even);
        assert!((pe - 1.0).abs() < 1e-15);
        assert!(max_abs_diff(&post.unwrap(), &oracle) < 1e-15);
        assert!((oracle[(0, 3)].re - 0.5).abs() < 1e-15);
    }

    #[test]
    fn channel_is_cptp() {
        for dephase in [true, false] {
            for idle in [0.0, 0.3] {
                let ch = ParityChannel { pair: (0, 1), n_qubits: 2, dephase_odd: dephase, idle_dephasing: idle };
                let j = ch.choi();
                assert!(hermitian_eigenvalues(&j)[0] > -1e-10);
                // Trace preservation: partial trace over the output equals I.
                for a in 0..4 {
                    for b in 0..4 {
                        let t: num_complex::Complex64 = (0..4).map(|r| j[(a * 4 + r, b * 4 + r)]).sum();
                        let want = if a == b { 1.0 } else { 0.0 };
                        assert!((t - c(want, 0.0)).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn embedded_pair_in_larger_register() {
        // Q5, Q6 in a four-qubit register: |0010⟩ has odd (Q5,Q6) parity.
        let ch = ParityChannel::new((2, 3), 4).unwrap();
        let rho = crate::quantum::basis_projector(16, 0b0010);
        assert!((ch.outcome(&rho, Parity::Odd).0 - 1.0).abs() < 1e-15);
        let rho = crate::quantum::basis_projector(16, 0b1011);
        assert!((ch.outcome(&rho, Parity::Even).0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn confusion_examples() {
        let m = ConfusionMatrix::verification();
        let r = apply_confusion([1.0, 0.0], &m);
        assert!((r[0] - 0.951).abs() < 1e-15 && (r[1] - 0.049).abs() < 1e-15);
        let r = apply_confusion([0.5, 0.5], &m);
        assert!((r[0] - 0.538).abs() < 1e-12 && (r[1] - 0.462).abs() < 1e-12);
        assert_eq!(apply_confusion([0.3, 0.7], &ConfusionMatrix::identity()), [0.3, 0.7]);

        let back = correct_readout([0.951, 0.049], &m).unwrap();
        assert!((back.probs[0] - 1.0).abs() < 1e-12 && !back.clamped);
        let back = correct_readout([0.125, 0.875], &m).unwrap();
        assert!((back.probs[1] - 1.0).abs() < 1e-12);

        let flagged = correct_readout([1.0, 0.0], &m).unwrap();
        assert!(flagged.clamped);
        assert_eq!(flagged.probs, [1.0, 0.0]);

        let singular = ConfusionMatrix { matrix: [[0.5, 0.5], [0.5, 0.5]] };
        assert!(matches!(correct_readout([0.5, 0.5], &singular), Err(Error::Singular(_))));
        assert!(ConfusionMatrix::new([[0.9, 0.1], [0.2, 0.9]]).is_err());
    }

    #[test]
    fn readout_fidelity_examples() {
        assert_eq!(parity_readout_fidelity(1.0, 1.0), 1.0);
        assert!((parity_readout_fidelity(0.9799, 0.9912) - 0.98555).abs() < 1e-12);
        assert_eq!(parity_readout_fidelity(0.3, 0.8), parity_readout_fidelity(0.8, 0.3));
    }

    #[test]
    fn ideal_initialization() {
        let mut rng = stream_rng(3, 0);
        for _ in 0..200 {
            let o = initialize_sequence(&InitKnobs::default(), &mut rng);
            assert!(o.kept);
            assert_eq!(o.bits, [1, 0, 0, 0]);
            assert_eq!(o.basis_index(), 0b1000);
        }
        let (dist, keep) = init_distribution(&InitKnobs::default());
        assert_eq!(keep, 1.0);
        assert_eq!(dist[0b1000], 1.0);
    }

    #[test]
    fn keep_rate_matches_closed_form() {
        let k = InitKnobs { parity_error: 0.05, ..InitKnobs::default() };
        let shots = 10_000;
        let kept = simulate_init_shots(&k, shots, 11).iter().filter(|(o, _)| o.kept).count() as f64;
        let p = k.expected_keep_rate();
        assert!((p - (0.95f64.powi(2) + 0.05f64.powi(2)).powi(2)).abs() < 1e-12);
        let sd = (p * (1.0 - p) / shots as f64).sqrt();
        assert!((kept / shots as f64 - p).abs() < 4.0 * sd);
        assert!((init_distribution(&k).1 - p).abs() < 1e-12);
    }

    #[test]
    fn enumeration_matches_sampling() {
        let k =
            InitKnobs { parity_error: 0.05, x_error: 0.04, adiabatic_error: 0.06, sequence_keep: 1.0, max_attempts: 1 };
        let (dist, keep) = init_distribution(&k);
        let shots = 40_000;
        let runs = simulate_init_shots(&k, shots, 5);
        let kept: Vec<_> = runs.iter().filter(|(o, _)| o.kept).collect();
        assert!((kept.len() as f64 / shots as f64 - keep).abs() < 0.01);
        let frac = kept.iter().filter(|(o, _)| o.basis_index() == 0b1000).count() as f64 / kept.len() as f64;
        assert!((frac - dist[0b1000]).abs() < 0.01);
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn experimental_shot_economics() {
        let rate = InitKnobs::experimental().expected_keep_rate();
        let kept = 800.0 * rate;
        assert!((125.0..=375.0).contains(&kept), "kept {kept} of 800");
    }

    #[test]
    fn shot_records_csv() {
        let runs = simulate_init_shots(&InitKnobs::default(), 3, 0);
        let recs: Vec<ShotRecord> = runs.into_iter().flat_map(|(_, r)| r).collect();
        let mut buf = Vec::new();
        write_shot_records(&recs, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("shot_id,pair,outcome,kept\n0,Q1Q2,odd,true\n0,Q5Q6,even,true"));
    }

    proptest! {
        #[test]
        fn confusion_round_trip(p0 in 0.0..=1.0f64, a in 0.5..1.0f64, b in 0.5..1.0f64) {
            let m = ConfusionMatrix::new([[a, 1.0 - b], [1.0 - a, b]]).unwrap();
            let back = correct_readout(apply_confusion([p0, 1.0 - p0], &m), &m).unwrap();
            prop_assert!((back.probs[0] - p0).abs() < 1e-12);
            prop_assert!((back.probs[1] - (1.0 - p0)).abs() < 1e-12);
        }

        #[test]
        fn repeated_parity_is_projective(re in proptest::collection::vec(-1.0..1.0f64, 4), im in proptest::collection::vec(-1.0..1.0f64, 4), seed in 0u64..1000) {
            let norm: f64 = re.iter().zip(&im).map(|(a, b)| a * a + b * b).sum::<f64>().sqrt();
            prop_assume!(norm > 1e-3);
            let v: Vec<_> = re.iter().zip(&im).map(|(a, b)| c(a / norm, b / norm)).collect();
            let ch = ParityChannel::new((0, 1), 2).unwrap();
            let mut rng = stream_rng(seed, 0);
            let (first, post) = parity_measure(&ket_to_density(&v), &ch, &mut rng);
            for _ in 0..5 {
                let (again, _) = parity_measure(&post, &ch, &mut rng);
                prop_assert_eq!(again, first);
            }
            let total = ch.outcome(&ket_to_density(&v), Parity::Even).0 + ch.outcome(&ket_to_density(&v), Parity::Odd).0;
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
