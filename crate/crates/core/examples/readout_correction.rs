//! Readout-error inversion and the feedback initialization statistics.

use mobile_spin::readout::{
    apply_confusion, correct_readout, init_distribution, parity_readout_fidelity, ConfusionMatrix, InitKnobs,
};

fn main() -> mobile_spin::Result<()> {
    let m = ConfusionMatrix::verification();
    let truth = [0.3, 0.7];
    let measured = apply_confusion(truth, &m);
    let back = correct_readout(measured, &m)?;
    println!("measured {measured:?} -> corrected {:?}", back.probs);
    println!("parity readout fidelity {:.5}", parity_readout_fidelity(0.9799, 0.9912));

    let knobs = InitKnobs::experimental();
    let (dist, keep) = init_distribution(&knobs);
    println!("keep rate {keep:.3}, P(target basis state) {:.4}", dist.iter().cloned().fold(0.0, f64::max));
    Ok(())
}
