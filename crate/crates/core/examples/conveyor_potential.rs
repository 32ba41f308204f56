//! Sweep the conveyor potential and follow the two wells as they approach.

use mobile_spin::conveyor::{builtin_conveyor, BuiltinTable};

fn main() -> mobile_spin::Result<()> {
    let conv = builtin_conveyor(BuiltinTable::ExchangeSweep, Some(9.5))?;
    println!("origin at cycle {:.3}", conv.origin);
    for k in 0..=6 {
        let c = 0.1 * k as f64;
        let st = conv.state(c)?;
        let wells: Vec<String> =
            st.minima.iter().map(|m| format!("{:.0} nm ({:.1} meV)", m.position_nm, m.depth_mev)).collect();
        let barrier = st.barrier.map_or("-".to_string(), |b| format!("{:.2} meV", b.height_mev));
        println!("c = {c:.1}: {}  barrier {barrier}", wells.join(", "));
    }

    let track = conv.track_well(90.0, 0.8, 80, 20.0)?;
    let (c_end, x_end) = track.last().copied().unwrap();
    println!("left well tracked to c = {c_end:.2} at {x_end:.1} nm");

    let merged = builtin_conveyor(BuiltinTable::Merge, None)?;
    println!("merge table: single well from c = {:?}", merged.merge_cycle(1.0, 200)?);
    Ok(())
}
