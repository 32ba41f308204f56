//! Interleaved randomized benchmarking of a noisy CZ.

use serde::Serialize;

use super::clifford::U4;
use super::fit::{fit_rb, interleaved_cz_fidelity, InterleavedFidelity, RbFit};
use super::rb::{ideal_cz, Interleave, NoiseChannel, RbConfig, RbData, RbSimulator, Rho4};
use crate::dynamics::{dephasing_channel, scale_noise_to_infidelity, NoiseModel};
use crate::error::Result;
use crate::quantum::{self, CMat};
use crate::rng::mix_seed;

/// Probabilistic mixture of unitaries, `ρ → Σ w_k U_k ρ U_k†`.
#[derive(Debug, Clone)]
pub struct MixedUnitary {
    pub terms: Vec<(f64, U4)>,
}

impl MixedUnitary {
    pub fn from_channel(terms: &[(f64, CMat)]) -> Self {
        MixedUnitary { terms: terms.iter().map(|(w, u)| (*w, U4::from_fn(|r, c| u[(r, c)]))).collect() }
    }
}

impl NoiseChannel for MixedUnitary {
    fn apply(&self, rho: &mut Rho4) {
        let mut out = Rho4::zeros();
        for (w, u) in &self.terms {
            out += (u * *rho * u.adjoint()) * num_complex::Complex64::new(*w, 0.0);
        }
        *rho = out;
    }
}

/// Error channel of a CZ whose quasistatic dephasing (with the couplings
/// of `noise`) is scaled to the given average infidelity. The channel acts
/// after the ideal gate.
pub fn engineered_cz_error(noise: &NoiseModel, infidelity: f64) -> Result<(MixedUnitary, NoiseModel)> {
    let scaled = scale_noise_to_infidelity(noise, infidelity)?;
    let terms = dephasing_channel(&quantum::identity(4), &scaled, 32);
    Ok((MixedUnitary::from_channel(&terms), scaled))
}

#[derive(Debug, Clone, Serialize)]
pub struct IrbResult {
    pub reference: RbFit,
    pub interleaved: RbFit,
    pub cz: InterleavedFidelity,
    #[serde(skip)]
    pub reference_data: RbData,
    #[serde(skip)]
    pub interleaved_data: RbData,
}

/// Reference and CZ-interleaved RB with the same configuration; the
/// interleaved run uses an independent seed stream.
pub fn run_irb(
    sim: &RbSimulator,
    cfg: &RbConfig,
    clifford_noise: &dyn NoiseChannel,
    cz_error: &dyn NoiseChannel,
) -> Result<IrbResult> {
    let reference_data = sim.run(cfg, clifford_noise, None)?;
    let il = Interleave { ideal: ideal_cz(), error: cz_error };
    let icfg = RbConfig { seed: mix_seed(cfg.seed, 0x1eb), ..cfg.clone() };
    let interleaved_data = sim.run(&icfg, clifford_noise, Some(&il))?;
    let reference = fit_rb(&reference_data.points)?;
    let interleaved = fit_rb(&interleaved_data.points)?;
    let cz = interleaved_cz_fidelity(interleaved.p, reference.p)?;
    Ok(IrbResult { reference, interleaved, cz, reference_data, interleaved_data })
}
