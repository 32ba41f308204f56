//! Small dense linear-algebra helpers for qubit registers.
//!
//! Registers are ordered most-significant-first: qubit 0 of an `n`-qubit
//! register is the leftmost tensor factor. `|1⟩` is spin up.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn cis(phase: f64) -> Complex64 {
    Complex64::from_polar(1.0, phase)
}

pub fn from_rows(n: usize, entries: &[Complex64]) -> CMat {
    DMatrix::from_row_slice(n, n, entries)
}

pub fn identity(d: usize) -> CMat {
    DMatrix::identity(d, d)
}

pub fn pauli(k: usize) -> CMat {
    match k {
        0 => identity(2),
        1 => from_rows(2, &[ZERO, ONE, ONE, ZERO]),
        2 => from_rows(2, &[ZERO, -I, I, ZERO]),
        3 => from_rows(2, &[ONE, ZERO, ZERO, -ONE]),
        _ => panic!("pauli index {k} out of range"),
    }
}

pub fn dagger(m: &CMat) -> CMat {
    m.adjoint()
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn kron_all(ms: &[CMat]) -> CMat {
    ms.iter().skip(1).fold(ms[0].clone(), |acc, m| kron(&acc, m))
}

/// Pauli string operator for digits in base 4, qubit 0 first.
pub fn pauli_string(index: usize, n: usize) -> CMat {
    let mut ops = Vec::with_capacity(n);
    for q in 0..n {
        let shift = 2 * (n - 1 - q);
        ops.push(pauli((index >> shift) & 3));
    }
    kron_all(&ops)
}

pub fn rx(theta: f64) -> CMat {
    let (s, co) = (theta / 2.0).sin_cos();
    from_rows(2, &[c(co, 0.0), c(0.0, -s), c(0.0, -s), c(co, 0.0)])
}

pub fn ry(theta: f64) -> CMat {
    let (s, co) = (theta / 2.0).sin_cos();
    from_rows(2, &[c(co, 0.0), c(-s, 0.0), c(s, 0.0), c(co, 0.0)])
}

pub fn rz(theta: f64) -> CMat {
    from_rows(2, &[cis(-theta / 2.0), ZERO, ZERO, cis(theta / 2.0)])
}

pub fn hadamard() -> CMat {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    from_rows(2, &[c(h, 0.0), c(h, 0.0), c(h, 0.0), c(-h, 0.0)])
}

pub fn phase_s() -> CMat {
    from_rows(2, &[ONE, ZERO, ZERO, I])
}

pub fn cz() -> CMat {
    CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![ONE, ONE, ONE, -ONE]))
}

/// CNOT with qubit 0 as control.
pub fn cnot() -> CMat {
    let mut m = CMat::zeros(4, 4);
    m[(0, 0)] = ONE;
    m[(1, 1)] = ONE;
    m[(2, 3)] = ONE;
    m[(3, 2)] = ONE;
    m
}

pub fn swap() -> CMat {
    let mut m = CMat::zeros(4, 4);
    m[(0, 0)] = ONE;
    m[(1, 2)] = ONE;
    m[(2, 1)] = ONE;
    m[(3, 3)] = ONE;
    m
}

pub fn iswap() -> CMat {
    let mut m = CMat::zeros(4, 4);
    m[(0, 0)] = ONE;
    m[(1, 2)] = I;
    m[(2, 1)] = I;
    m[(3, 3)] = ONE;
    m
}

/// Lift a `k`-qubit operator acting on `targets` (in the operator's own
/// qubit order) to the full `n`-qubit register.
pub fn embed(op: &CMat, targets: &[usize], n: usize) -> CMat {
    let k = targets.len();
    assert_eq!(op.nrows(), 1 << k, "operator size does not match target count");
    assert!(targets.iter().all(|&t| t < n), "target outside register");
    let dim = 1usize << n;
    let bit = |q: usize| n - 1 - q;
    let target_mask: usize = targets.iter().map(|&t| 1 << bit(t)).sum();
    let sub_index = |full: usize| -> usize { targets.iter().fold(0, |acc, &t| (acc << 1) | ((full >> bit(t)) & 1)) };
    let mut out = CMat::zeros(dim, dim);
    for col in 0..dim {
        let rest = col & !target_mask;
        let sc = sub_index(col);
        for sr in 0..(1 << k) {
            let v = op[(sr, sc)];
            if v == ZERO {
                continue;
            }
            let mut row = rest;
            for (j, &t) in targets.iter().enumerate() {
                if (sr >> (k - 1 - j)) & 1 == 1 {
                    row |= 1 << bit(t);
                }
            }
            out[(row, col)] += v;
        }
    }
    out
}

/// `exp(-i H t)` for Hermitian `H`.
pub fn expm_hermitian(h: &CMat, t: f64) -> CMat {
    let eig = SymmetricEigen::new(h.clone());
    let phases = eig.eigenvalues.map(|e| cis(-e * t));
    let v = &eig.eigenvectors;
    v * CMat::from_diagonal(&phases) * v.adjoint()
}

pub fn conjugate(u: &CMat, rho: &CMat) -> CMat {
    u * rho * u.adjoint()
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn unitarity_error(u: &CMat) -> f64 {
    max_abs_diff(&(u.adjoint() * u), &identity(u.nrows()))
}

pub fn trace(m: &CMat) -> Complex64 {
    m.diagonal().iter().sum()
}

/// Eigenvalues of a Hermitian matrix in ascending order.
pub fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    let herm = (m + m.adjoint()) * c(0.5, 0.0);
    let mut ev: Vec<f64> = SymmetricEigen::new(herm).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Project a Hermitian matrix onto the PSD cone (clip negative eigenvalues).
pub fn psd_projection(m: &CMat) -> CMat {
    let herm = (m + m.adjoint()) * c(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let vals = eig.eigenvalues.map(|e| c(e.max(0.0), 0.0));
    let v = &eig.eigenvectors;
    v * CMat::from_diagonal(&vals) * v.adjoint()
}

/// Project a Hermitian matrix onto density matrices (PSD, unit trace) by
/// simplex projection of the spectrum.
pub fn density_projection(m: &CMat) -> CMat {
    let herm = (m + m.adjoint()) * c(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let lam: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let mut sorted = lam.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut shift = 0.0;
    for (k, v) in sorted.iter().enumerate() {
        cum += v;
        let t = (cum - 1.0) / (k as f64 + 1.0);
        if v - t > 0.0 {
            shift = t;
        }
    }
    let vals = nalgebra::DVector::from_iterator(lam.len(), lam.iter().map(|e| c((e - shift).max(0.0), 0.0)));
    let v = &eig.eigenvectors;
    v * CMat::from_diagonal(&vals) * v.adjoint()
}

/// `|ψ⟩⟨ψ|` for a basis index.
pub fn basis_projector(d: usize, k: usize) -> CMat {
    let mut m = CMat::zeros(d, d);
    m[(k, k)] = ONE;
    m
}

pub fn ket_to_density(psi: &[Complex64]) -> CMat {
    let v = nalgebra::DVector::from_column_slice(psi);
    &v * v.adjoint()
}

/// Trace distance `½‖a − b‖₁` between Hermitian matrices.
pub fn trace_distance(a: &CMat, b: &CMat) -> f64 {
    0.5 * hermitian_eigenvalues(&(a - b)).iter().map(|e| e.abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embed_matches_kron_for_adjacent_targets() {
        let x = pauli(1);
        let full = embed(&x, &[1], 3);
        let want = kron_all(&[identity(2), x.clone(), identity(2)]);
        assert!(max_abs_diff(&full, &want) < 1e-15);
    }

    #[test]
    fn embed_reversed_cnot_is_reverse_control() {
        let rev = embed(&cnot(), &[1, 0], 2);
        let h = kron(&hadamard(), &hadamard());
        let want = &h * cnot() * &h;
        assert!(max_abs_diff(&rev, &want) < 1e-12);
    }

    #[test]
    fn expm_of_pauli_is_rotation() {
        let u = expm_hermitian(&(pauli(1) * c(0.5, 0.0)), 0.7);
        assert!(max_abs_diff(&u, &rx(0.7)) < 1e-12);
    }

    #[test]
    fn density_projection_is_idempotent_on_states() {
        let rho = ket_to_density(&[c(0.6, 0.0), c(0.0, 0.8)]);
        assert!(max_abs_diff(&density_projection(&rho), &rho) < 1e-12);
        let bad = from_rows(2, &[c(1.2, 0.0), ZERO, ZERO, c(-0.2, 0.0)]);
        let p = density_projection(&bad);
        assert!((p[(0, 0)].re - 1.0).abs() < 1e-12);
    }
}
