//! Exchange along the CZ trajectory and the fitted exchange models.

use mobile_spin::exchange::{fit_exponential, fit_saturating, merged_fixture, peak_vs_barrier_fixture, Exchange};

fn main() -> mobile_spin::Result<()> {
    let ex = Exchange::cz_operation();
    for c in [0.5, 0.7, 0.8, 0.9, 1.0] {
        println!("J({c:.1}) = {:7.3} MHz", ex.j_at_cycle(c)? / 1e6);
    }

    let (v, j) = peak_vs_barrier_fixture();
    println!("peak J vs V_B3: {:?}", fit_exponential(&v, &j)?);
    let (c, j) = merged_fixture();
    println!("merged-dot J: {:?}", fit_saturating(&c, &j)?);
    Ok(())
}
