//! Gate-teleportation process tomography, ideal and with calibrated noise.

use mobile_spin::teleport::{teleport_fidelity_from_bell, teleport_qpt, TeleportNoise};

fn main() -> mobile_spin::Result<()> {
    let ideal = teleport_qpt(&TeleportNoise::ideal(), None, 0, 0)?;
    println!("ideal:      F_avg = {:.6}", ideal.f_avg);

    let noisy = teleport_qpt(&TeleportNoise::calibrated(), None, 0, 0)?;
    println!("calibrated: F_avg = {:.4} (raw {:.4})", noisy.f_avg, noisy.f_avg_raw);
    for row in noisy.ptm.r.row_iter() {
        println!("  {}", row.iter().map(|v| format!("{v:+.3}")).collect::<Vec<_>>().join(" "));
    }

    let sampled = teleport_qpt(&TeleportNoise::calibrated(), Some(20000), 100, 1)?;
    println!("sampled:    F_avg = {:.4} +- {:.4}", sampled.f_avg, sampled.f_avg_std.unwrap_or(f64::NAN));
    println!("Bell fidelity 0.902 gives F_avg {:.4}", teleport_fidelity_from_bell(0.902)?);
    Ok(())
}
