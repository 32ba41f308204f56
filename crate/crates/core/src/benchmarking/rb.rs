//! Randomized-benchmarking sequence simulation on two-qubit density matrices.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::clifford::{cz2, two_qubit_clifford_group, CliffordGroup, TwoQubitSampler, U4};
use super::fit::DecayPoint;
use crate::error::{Error, Result};
use crate::rng::{mix_seed, stream_rng, StreamRng};

pub type Rho4 = U4;

/// Error process applied after each ideal gate.
pub trait NoiseChannel: Sync + Send {
    fn apply(&self, rho: &mut Rho4);
}

/// No error.
#[derive(Debug, Clone, Copy, Default)]
pub struct Ideal;

impl NoiseChannel for Ideal {
    fn apply(&self, _rho: &mut Rho4) {}
}

/// `ρ → p ρ + (1 − p) I/4`.
#[derive(Debug, Clone, Copy)]
pub struct Depolarizing {
    pub p: f64,
}

impl NoiseChannel for Depolarizing {
    fn apply(&self, rho: &mut Rho4) {
        let tr = rho.trace();
        *rho *= num_complex::Complex64::new(self.p, 0.0);
        for k in 0..4 {
            rho[(k, k)] += tr * (1.0 - self.p) / 4.0;
        }
    }
}

/// Depolarizing parameter for a given average gate infidelity.
pub fn depolarizing_from_infidelity(r: f64) -> f64 {
    1.0 - 4.0 * r / 3.0
}

/// A fixed coherent error `ρ → E ρ E†`.
#[derive(Debug, Clone, Copy)]
pub struct UnitaryError {
    pub e: U4,
}

impl NoiseChannel for UnitaryError {
    fn apply(&self, rho: &mut Rho4) {
        *rho = self.e * *rho * self.e.adjoint();
    }
}

/// Channels applied in order.
pub struct Composite(pub Vec<Box<dyn NoiseChannel>>);

impl NoiseChannel for Composite {
    fn apply(&self, rho: &mut Rho4) {
        for c in &self.0 {
            c.apply(rho);
        }
    }
}

/// Interleaved gate: ideal unitary followed by its own error channel.
pub struct Interleave<'a> {
    pub ideal: U4,
    pub error: &'a dyn NoiseChannel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RbConfig {
    pub lengths: Vec<usize>,
    pub sequences_per_length: usize,
    /// Shots taken per sequence before post-selection.
    pub shots: usize,
    /// Probability that a shot survives post-selection.
    pub keep_probability: f64,
    pub seed: u64,
}

impl RbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lengths.is_empty() || self.lengths.contains(&0) {
            return Err(Error::Config("RB lengths must be >= 1".into()));
        }
        if self.sequences_per_length == 0 || self.shots == 0 {
            return Err(Error::Config("sequences and shots must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.keep_probability) || self.keep_probability == 0.0 {
            return Err(Error::Config("keep probability must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Outcome of one simulated sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub length: usize,
    pub sequence: usize,
    pub return_probability: f64,
    pub kept_shots: usize,
    pub successes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RbData {
    pub points: Vec<DecayPoint>,
    pub sequences: Vec<SequenceRecord>,
}

/// Prepared simulator holding the group tables.
pub struct RbSimulator {
    group: CliffordGroup<4>,
    sampler: TwoQubitSampler,
}

impl Default for RbSimulator {
    fn default() -> Self {
        Self::new()
    }
}

impl RbSimulator {
    pub fn new() -> Self {
        Self { group: two_qubit_clifford_group(), sampler: TwoQubitSampler::new() }
    }

    pub fn group(&self) -> &CliffordGroup<4> {
        &self.group
    }

    /// Random Clifford word of `length` and the recovery element, with the
    /// optional interleaved gate included in the ideal product.
    pub fn sequence(&self, length: usize, interleaved: Option<&U4>, rng: &mut StreamRng) -> (Vec<U4>, U4) {
        let mut word = Vec::with_capacity(length);
        let mut total = U4::identity();
        for _ in 0..length {
            let g = self.sampler.sample(rng);
            total = g * total;
            if let Some(c) = interleaved {
                total = c * total;
            }
            word.push(g);
        }
        let inv = self.group.find(&total.adjoint()).expect("Clifford product closes");
        (word, self.group.elements[inv])
    }

    /// Return probability of `|00⟩` for one sequence under `noise`.
    pub fn simulate(word: &[U4], recovery: &U4, noise: &dyn NoiseChannel, interleave: Option<&Interleave>) -> f64 {
        let mut rho = Rho4::zeros();
        rho[(0, 0)] = num_complex::Complex64::new(1.0, 0.0);
        for g in word {
            rho = g * rho * g.adjoint();
            noise.apply(&mut rho);
            if let Some(il) = interleave {
                rho = il.ideal * rho * il.ideal.adjoint();
                il.error.apply(&mut rho);
            }
        }
        rho = recovery * rho * recovery.adjoint();
        noise.apply(&mut rho);
        rho[(0, 0)].re.clamp(0.0, 1.0)
    }

    /// Full RB (or IRB when `interleave` is given) experiment.
    pub fn run(&self, cfg: &RbConfig, noise: &dyn NoiseChannel, interleave: Option<&Interleave>) -> Result<RbData> {
        cfg.validate()?;
        let ideal_il = interleave.map(|il| il.ideal);
        let jobs: Vec<(usize, usize, usize)> = cfg
            .lengths
            .iter()
            .enumerate()
            .flat_map(|(li, &l)| (0..cfg.sequences_per_length).map(move |s| (li, l, s)))
            .collect();
        let records: Vec<SequenceRecord> = jobs
            .par_iter()
            .map(|&(li, length, s)| {
                let stream = (li * cfg.sequences_per_length + s) as u64;
                let mut rng = stream_rng(mix_seed(cfg.seed, SEQUENCE_TAG), stream);
                let (word, rec) = self.sequence(length, ideal_il.as_ref(), &mut rng);
                let p = Self::simulate(&word, &rec, noise, interleave);
                let mut kept = 0;
                let mut ok = 0;
                for _ in 0..cfg.shots {
                    if rng.gen::<f64>() < cfg.keep_probability {
                        kept += 1;
                        if rng.gen::<f64>() < p {
                            ok += 1;
                        }
                    }
                }
                SequenceRecord { length, sequence: s, return_probability: p, kept_shots: kept, successes: ok }
            })
            .collect();
        let points = cfg
            .lengths
            .iter()
            .map(|&l| {
                let fr: Vec<(f64, usize)> = records
                    .iter()
                    .filter(|r| r.length == l && r.kept_shots > 0)
                    .map(|r| (r.successes as f64 / r.kept_shots as f64, r.kept_shots))
                    .collect();
                let n = fr.len().max(1) as f64;
                let mean = fr.iter().map(|f| f.0).sum::<f64>() / n;
                let var =
                    if fr.len() > 1 { fr.iter().map(|f| (f.0 - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
                let shots = (fr.iter().map(|f| f.1).sum::<usize>() as f64 / n).round() as usize;
                DecayPoint { length: l, mean, stderr: (var / n).sqrt(), n_sequences: fr.len(), n_shots: shots }
            })
            .collect();
        Ok(RbData { points, sequences: records })
    }
}

const SEQUENCE_TAG: u64 = 0x5e9;

/// The ideal CZ as an interleaving target.
pub fn ideal_cz() -> U4 {
    cz2()
}

pub fn decay_csv<W: std::io::Write>(points: &[DecayPoint], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for p in points {
        wtr.serialize(p)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_decay_csv<R: std::io::Read>(r: R) -> Result<Vec<DecayPoint>> {
    let mut rdr = csv::Reader::from_reader(r);
    let pts: std::result::Result<Vec<DecayPoint>, _> = rdr.deserialize().collect();
    Ok(pts?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarking::fit::fit_rb;

    #[test]
    fn noiseless_sequences_return_to_ground() {
        let sim = RbSimulator::new();
        for s in 0..1000u64 {
            let mut rng = stream_rng(17, s);
            let len = 1 + (s as usize % 100);
            let (w, rec) = sim.sequence(len, None, &mut rng);
            let p = RbSimulator::simulate(&w, &rec, &Ideal, None);
            assert!((p - 1.0).abs() < 1e-9, "seq {s}: {p}");
        }
    }

    #[test]
    fn ideal_run_is_flat() {
        let sim = RbSimulator::new();
        let cfg =
            RbConfig { lengths: vec![1, 4, 16], sequences_per_length: 5, shots: 50, keep_probability: 1.0, seed: 1 };
        let d = sim.run(&cfg, &Ideal, None).unwrap();
        assert!(d.points.iter().all(|p| p.mean == 1.0));
        let cz = ideal_cz();
        let il = Interleave { ideal: cz, error: &Ideal };
        let d = sim.run(&cfg, &Ideal, Some(&il)).unwrap();
        assert!(d.points.iter().all(|p| p.mean == 1.0));
    }

    #[test]
    fn depolarizing_recovered() {
        let sim = RbSimulator::new();
        let cfg = RbConfig {
            lengths: vec![1, 2, 4, 8, 16, 32],
            sequences_per_length: 30,
            shots: 250,
            keep_probability: 1.0,
            seed: 5,
        };
        let d = sim.run(&cfg, &Depolarizing { p: 0.95 }, None).unwrap();
        let f = fit_rb(&d.points).unwrap();
        assert!((f.p - 0.95).abs() < 2.0 * f.p_std.max(1e-3), "{f:?}");
    }

    #[test]
    fn keep_mask_reduces_shots() {
        let sim = RbSimulator::new();
        let cfg = RbConfig {
            lengths: vec![1, 2, 3],
            sequences_per_length: 20,
            shots: 800,
            keep_probability: 0.3125,
            seed: 2,
        };
        let d = sim.run(&cfg, &Ideal, None).unwrap();
        let mean_kept = d.sequences.iter().map(|r| r.kept_shots as f64).sum::<f64>() / d.sequences.len() as f64;
        assert!((mean_kept - 250.0).abs() < 15.0);
    }

    #[test]
    fn decay_csv_round_trip() {
        let pts = vec![DecayPoint { length: 3, mean: 0.5, stderr: 0.01, n_sequences: 4, n_shots: 100 }];
        let mut buf = Vec::new();
        decay_csv(&pts, &mut buf).unwrap();
        assert_eq!(read_decay_csv(buf.as_slice()).unwrap(), pts);
    }
}
