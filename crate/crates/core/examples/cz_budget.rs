//! Calibrate the shuttled CZ pulse and print its error budget.

use mobile_spin::dynamics::{cz_fidelity_budget, CzScheduleConfig};
use mobile_spin::exchange::{CoherenceTable, Exchange};

fn main() -> mobile_spin::Result<()> {
    let (sched, _u, b) = cz_fidelity_budget(
        &CzScheduleConfig::default(),
        &Exchange::cz_operation(),
        &CoherenceTable::cz_operation(),
        138.0,
        5160.0,
    )?;
    println!("gate length      {:.1} ns", sched.total_ns());
    println!("J scale          {:.4}", b.calibration.j_scale);
    println!("coherent error   {:.3e}", b.coherent_infidelity);
    println!("dephasing error  {:.3e}", b.dephasing_infidelity);
    println!("sigma rescale    {:.4}", b.sigma_rescale);
    Ok(())
}
