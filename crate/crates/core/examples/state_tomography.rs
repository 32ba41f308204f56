//! Sampled two-qubit state tomography of a noisy Bell pair.

use mobile_spin::rng::stream_rng;
use mobile_spin::teleport::{Circuit, TeleportNoise};
use mobile_spin::tomography::{bell_fidelity, bootstrap_bell_fidelity, pauli_bases, qst_mle, sampled_counts};

fn main() -> mobile_spin::Result<()> {
    let circuit = Circuit::new(&TeleportNoise::calibrated())?;
    let rho = circuit.bell_pair();
    let bases = pauli_bases(2);
    let bases: Vec<&str> = bases.iter().map(String::as_str).collect();
    let counts = sampled_counts(&rho, "bell", &bases, 2000, &mut stream_rng(3, 0));
    let est = qst_mle(&counts, 2)?;
    let fit = bell_fidelity(&est.rho)?;
    let std = bootstrap_bell_fidelity(&counts, 100, 3)?;
    println!("exact Bell fidelity {:.4}", bell_fidelity(&rho)?.fidelity);
    println!("MLE   Bell fidelity {:.4} +- {:.4} ({:?}, phase {:.3})", fit.fidelity, std, fit.family, fit.phase);
    Ok(())
}
