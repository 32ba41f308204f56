//! Two-qubit RB and interleaved RB of a CZ with an engineered dephasing error.

use mobile_spin::benchmarking::{
    clifford_fidelity, engineered_cz_error, fit_rb, run_irb, Depolarizing, RbConfig, RbSimulator,
};
use mobile_spin::dynamics::{cz_fidelity_budget, CzScheduleConfig};
use mobile_spin::exchange::{CoherenceTable, Exchange};

fn main() -> mobile_spin::Result<()> {
    let cfg = RbConfig {
        lengths: vec![1, 2, 4, 8, 16, 32, 64],
        sequences_per_length: 40,
        shots: 250,
        keep_probability: 1.0,
        seed: 7,
    };
    let noise = Depolarizing { p: 0.8024 };
    let sim = RbSimulator::new();
    let data = sim.run(&cfg, &noise, None)?;
    let fit = fit_rb(&data.points)?;
    println!("p = {:.4} +- {:.4}, Clifford fidelity {:.4}", fit.p, fit.p_std, clifford_fidelity(fit.p));

    let (_, _, budget) = cz_fidelity_budget(
        &CzScheduleConfig::default(),
        &Exchange::cz_operation(),
        &CoherenceTable::cz_operation(),
        138.0,
        5160.0,
    )?;
    let (cz, _) = engineered_cz_error(&budget.noise, 0.0114)?;
    let irb = run_irb(&sim, &cfg, &noise, &cz)?;
    println!("interleaved CZ fidelity {:.4} (injected 0.9886)", irb.cz.fidelity);
    Ok(())
}
