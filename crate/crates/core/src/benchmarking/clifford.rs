//! One- and two-qubit Clifford groups.
//!
//! Elements are stored as unitaries; identity up to global phase is decided
//! by the action on Pauli generators, which also yields the binary
//! symplectic tableau.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::SMatrix;
use num_complex::Complex64;
use rand::Rng;

pub type Unitary<const D: usize> = SMatrix<Complex64, D, D>;
pub type U2 = Unitary<2>;
pub type U4 = Unitary<4>;

const O: Complex64 = Complex64::new(0.0, 0.0);
const L: Complex64 = Complex64::new(1.0, 0.0);
const J: Complex64 = Complex64::new(0.0, 1.0);

pub fn h1() -> U2 {
    let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
    U2::new(h, h, h, -h)
}

pub fn s1() -> U2 {
    U2::new(L, O, O, J)
}

pub fn rx1(theta: f64) -> U2 {
    let (s, c) = (theta / 2.0).sin_cos();
    U2::new(Complex64::new(c, 0.0), Complex64::new(0.0, -s), Complex64::new(0.0, -s), Complex64::new(c, 0.0))
}

pub fn ry1(theta: f64) -> U2 {
    let (s, c) = (theta / 2.0).sin_cos();
    U2::new(Complex64::new(c, 0.0), Complex64::new(-s, 0.0), Complex64::new(s, 0.0), Complex64::new(c, 0.0))
}

pub fn rz1(theta: f64) -> U2 {
    U2::new(Complex64::from_polar(1.0, -theta / 2.0), O, O, Complex64::from_polar(1.0, theta / 2.0))
}

pub fn kron2(a: &U2, b: &U2) -> U4 {
    U4::from_fn(|r, c| a[(r / 2, c / 2)] * b[(r % 2, c % 2)])
}

pub fn cz2() -> U4 {
    U4::from_diagonal(&nalgebra::Vector4::new(L, L, L, -L))
}

pub fn cnot2() -> U4 {
    let mut m = U4::zeros();
    m[(0, 0)] = L;
    m[(1, 1)] = L;
    m[(2, 3)] = L;
    m[(3, 2)] = L;
    m
}

pub fn iswap2() -> U4 {
    let mut m = U4::zeros();
    m[(0, 0)] = L;
    m[(1, 2)] = J;
    m[(2, 1)] = J;
    m[(3, 3)] = L;
    m
}

pub fn swap2() -> U4 {
    let mut m = U4::zeros();
    m[(0, 0)] = L;
    m[(1, 2)] = L;
    m[(2, 1)] = L;
    m[(3, 3)] = L;
    m
}

fn pauli_x<const D: usize>(q: usize, n: usize) -> Unitary<D> {
    let bit = 1 << (n - 1 - q);
    Unitary::<D>::from_fn(|r, c| if r == c ^ bit { L } else { O })
}

fn pauli_z<const D: usize>(q: usize, n: usize) -> Unitary<D> {
    let bit = 1 << (n - 1 - q);
    Unitary::<D>::from_fn(|r, c| {
        if r == c {
            if c & bit == 0 {
                L
            } else {
                -L
            }
        } else {
            O
        }
    })
}

fn quarter(z: Complex64) -> u64 {
    // phase quantised to multiples of π/2
    (((z.arg() / (PI / 2.0)).round() as i64).rem_euclid(4)) as u64
}

/// Image of a Pauli under conjugation, as `(x bits, z bits, packed column phases)`.
fn pauli_image<const D: usize>(m: &Unitary<D>) -> (usize, usize, u64) {
    let n = D.trailing_zeros() as usize;
    let x = (0..D).max_by(|&a, &b| m[(a, 0)].norm().total_cmp(&m[(b, 0)].norm())).unwrap();
    let p0 = m[(x, 0)];
    let mut z = 0usize;
    for b in 0..n {
        let col = 1 << b;
        let ratio = m[(col ^ x, col)] / p0;
        if ratio.re < 0.0 {
            z |= col;
        }
    }
    let mut phases = 0u64;
    for col in 0..D {
        phases = (phases << 2) | quarter(m[(col ^ x, col)]);
    }
    (x, z, phases)
}

/// Canonical key: identical for unitaries equal up to global phase.
pub fn clifford_key<const D: usize>(u: &Unitary<D>) -> u64 {
    let n = D.trailing_zeros() as usize;
    let ud = u.adjoint();
    let mut key = 0u64;
    for q in 0..n {
        for p in [pauli_x::<D>(q, n), pauli_z::<D>(q, n)] {
            let (x, _, ph) = pauli_image(&(u * p * ud));
            key = (key << (n as u64 + 2 * D as u64)) | ((x as u64) << (2 * D as u64)) | ph;
        }
    }
    key
}

/// Binary symplectic matrix: row `k` is the `(x | z)` image of generator
/// `k` in the order X_0, Z_0, X_1, Z_1, …
pub fn tableau<const D: usize>(u: &Unitary<D>) -> Vec<Vec<u8>> {
    let n = D.trailing_zeros() as usize;
    let ud = u.adjoint();
    let mut rows = Vec::new();
    for q in 0..n {
        for p in [pauli_x::<D>(q, n), pauli_z::<D>(q, n)] {
            let (x, z, _) = pauli_image(&(u * p * ud));
            let mut row = vec![0u8; 2 * n];
            for k in 0..n {
                let bit = 1 << (n - 1 - k);
                row[2 * k] = u8::from(x & bit != 0);
                row[2 * k + 1] = u8::from(z & bit != 0);
            }
            rows.push(row);
        }
    }
    rows
}

/// `S Λ Sᵀ = Λ (mod 2)` for the interleaved `(x_k, z_k)` column ordering.
pub fn is_symplectic(t: &[Vec<u8>]) -> bool {
    let m = t.len();
    let form = |a: &[u8], b: &[u8]| -> u8 {
        (0..m / 2).map(|k| a[2 * k] * b[2 * k + 1] + a[2 * k + 1] * b[2 * k]).sum::<u8>() % 2
    };
    (0..m).all(|i| (0..m).all(|k| form(&t[i], &t[k]) == u8::from(i / 2 == k / 2 && i != k)))
}

/// A finite Clifford group with multiplication by lookup.
#[derive(Debug, Clone)]
pub struct CliffordGroup<const D: usize> {
    pub elements: Vec<Unitary<D>>,
    index: HashMap<u64, usize>,
}

impl<const D: usize> CliffordGroup<D> {
    /// Closure of `generators` by breadth-first search from the identity.
    pub fn generate(generators: &[Unitary<D>]) -> Self {
        let id = Unitary::<D>::identity();
        let mut elements = vec![id];
        let mut index = HashMap::new();
        index.insert(clifford_key(&id), 0);
        let mut frontier = 0;
        while frontier < elements.len() {
            let g = elements[frontier];
            for h in generators {
                let p = h * g;
                let k = clifford_key(&p);
                if let std::collections::hash_map::Entry::Vacant(e) = index.entry(k) {
                    e.insert(elements.len());
                    elements.push(p);
                }
            }
            frontier += 1;
        }
        Self { elements, index }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn find(&self, u: &Unitary<D>) -> Option<usize> {
        self.index.get(&clifford_key(u)).copied()
    }

    /// Index of `elements[a] · elements[b]`.
    pub fn compose(&self, a: usize, b: usize) -> usize {
        self.find(&(self.elements[a] * self.elements[b])).expect("group is closed")
    }

    pub fn inverse(&self, a: usize) -> usize {
        self.find(&self.elements[a].adjoint()).expect("group is closed")
    }

    pub fn uniform<R: Rng>(&self, rng: &mut R) -> usize {
        rng.gen_range(0..self.len())
    }
}

pub fn single_qubit_clifford_group() -> CliffordGroup<2> {
    CliffordGroup::generate(&[h1(), s1()])
}

pub fn two_qubit_clifford_group() -> CliffordGroup<4> {
    let id = U2::identity();
    CliffordGroup::generate(&[kron2(&h1(), &id), kron2(&s1(), &id), kron2(&id, &h1()), kron2(&id, &s1()), cz2()])
}

/// The order-three Cliffords `{I, R, R²}` with `R` cycling X → Y → Z.
pub fn s1_subgroup() -> [U2; 3] {
    // R = S·H maps X→Y, Y→Z, Z→X up to signs
    let r = s1() * h1();
    [U2::identity(), r, r * r]
}

/// Two-qubit class in the canonical decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CliffordClass {
    SingleQubit,
    CnotLike,
    IswapLike,
    SwapLike,
}

impl CliffordClass {
    pub const ALL: [CliffordClass; 4] =
        [CliffordClass::SingleQubit, CliffordClass::CnotLike, CliffordClass::IswapLike, CliffordClass::SwapLike];

    pub fn size(self) -> usize {
        match self {
            CliffordClass::SingleQubit | CliffordClass::SwapLike => 576,
            CliffordClass::CnotLike | CliffordClass::IswapLike => 5184,
        }
    }

    pub fn cz_count(self) -> usize {
        match self {
            CliffordClass::SingleQubit => 0,
            CliffordClass::CnotLike => 1,
            CliffordClass::IswapLike => 2,
            CliffordClass::SwapLike => 3,
        }
    }
}

/// Coordinates of an element in the decomposition
/// `(A ⊗ B) · R_class · (S ⊗ S')`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassCoordinates {
    pub class: CliffordClass,
    pub a: usize,
    pub b: usize,
    pub s: usize,
    pub s2: usize,
}

/// Uniform sampler over the two-qubit Clifford group via its class
/// decomposition.
#[derive(Debug, Clone)]
pub struct TwoQubitSampler {
    c1: CliffordGroup<2>,
    s1: [U2; 3],
}

impl Default for TwoQubitSampler {
    fn default() -> Self {
        Self::new()
    }
}

impl TwoQubitSampler {
    pub fn new() -> Self {
        Self { c1: single_qubit_clifford_group(), s1: s1_subgroup() }
    }

    pub fn unitary(&self, k: &ClassCoordinates) -> U4 {
        let left = kron2(&self.c1.elements[k.a], &self.c1.elements[k.b]);
        let right = kron2(&self.s1[k.s], &self.s1[k.s2]);
        match k.class {
            CliffordClass::SingleQubit => left,
            CliffordClass::CnotLike => left * cnot2() * right,
            CliffordClass::IswapLike => left * iswap2() * right,
            CliffordClass::SwapLike => left * swap2(),
        }
    }

    pub fn sample_coordinates<R: Rng>(&self, rng: &mut R) -> ClassCoordinates {
        let r = rng.gen_range(0..11520usize);
        let class = if r < 576 {
            CliffordClass::SingleQubit
        } else if r < 576 + 5184 {
            CliffordClass::CnotLike
        } else if r < 576 + 2 * 5184 {
            CliffordClass::IswapLike
        } else {
            CliffordClass::SwapLike
        };
        let with_s = matches!(class, CliffordClass::CnotLike | CliffordClass::IswapLike);
        ClassCoordinates {
            class,
            a: rng.gen_range(0..24),
            b: rng.gen_range(0..24),
            s: if with_s { rng.gen_range(0..3) } else { 0 },
            s2: if with_s { rng.gen_range(0..3) } else { 0 },
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> U4 {
        self.unitary(&self.sample_coordinates(rng))
    }

    /// Every coordinate tuple of a class.
    pub fn class_members(&self, class: CliffordClass) -> Vec<U4> {
        let ns = if matches!(class, CliffordClass::CnotLike | CliffordClass::IswapLike) { 3 } else { 1 };
        let mut out = Vec::with_capacity(class.size());
        for a in 0..24 {
            for b in 0..24 {
                for s in 0..ns {
                    for s2 in 0..ns {
                        out.push(self.unitary(&ClassCoordinates { class, a, b, s, s2 }));
                    }
                }
            }
        }
        out
    }
}

/// Native-gate cost of every element of a group: minimal number of
/// `entangler` uses, then minimal physical single-qubit pulses, with free
/// virtual Z rotations.
#[derive(Debug, Clone)]
pub struct CompilationCost {
    pub entanglers: Vec<u32>,
    pub pulses: Vec<u32>,
}

impl CompilationCost {
    pub fn mean_entanglers(&self) -> f64 {
        self.entanglers.iter().map(|&v| v as f64).sum::<f64>() / self.entanglers.len() as f64
    }

    pub fn mean_pulses(&self) -> f64 {
        self.pulses.iter().map(|&v| v as f64).sum::<f64>() / self.pulses.len() as f64
    }
}

/// Shortest-path compilation over `{Rx(±π/2) (cost 1), Rz(π/2) (free), CZ}`
/// on every qubit. CZ is weighted so that entangler count is minimised first.
pub fn native_compilation<const D: usize>(group: &CliffordGroup<D>) -> CompilationCost {
    const CZ_WEIGHT: u32 = 1000;
    let n = D.trailing_zeros() as usize;
    let embed = |g: &U2, q: usize| -> Unitary<D> {
        let bit = 1 << (n - 1 - q);
        Unitary::<D>::from_fn(|r, c| {
            if (r & !bit) != (c & !bit) {
                return O;
            }
            g[(usize::from(r & bit != 0), usize::from(c & bit != 0))]
        })
    };
    let mut moves: Vec<(usize, u32)> = Vec::new();
    let mut mats: Vec<Unitary<D>> = Vec::new();
    for q in 0..n {
        for (g, w) in [(rx1(PI / 2.0), 1), (rx1(-PI / 2.0), 1), (rz1(PI / 2.0), 0)] {
            mats.push(embed(&g, q));
            moves.push((mats.len() - 1, w));
        }
    }
    if D == 4 {
        let cz = Unitary::<D>::from_fn(|r, c| {
            if r == c {
                if r == 3 {
                    -L
                } else {
                    L
                }
            } else {
                O
            }
        });
        mats.push(cz);
        moves.push((mats.len() - 1, CZ_WEIGHT));
    }
    let mut dist = vec![u32::MAX; group.len()];
    let mut heap = BinaryHeap::new();
    dist[0] = 0;
    heap.push(Reverse((0u32, 0usize)));
    while let Some(Reverse((d, i))) = heap.pop() {
        if d > dist[i] {
            continue;
        }
        for &(m, w) in &moves {
            let j = group.find(&(mats[m] * group.elements[i])).expect("generators are Clifford");
            let nd = d + w;
            if nd < dist[j] {
                dist[j] = nd;
                heap.push(Reverse((nd, j)));
            }
        }
    }
    CompilationCost {
        entanglers: dist.iter().map(|d| d / CZ_WEIGHT).collect(),
        pulses: dist.iter().map(|d| d % CZ_WEIGHT).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use std::collections::HashSet;

    #[test]
    fn single_qubit_group() {
        let g = single_qubit_clifford_group();
        assert_eq!(g.len(), 24);
        for a in 0..24 {
            assert!(is_symplectic(&tableau(&g.elements[a])));
            let inv = g.inverse(a);
            assert_eq!(g.compose(a, inv), 0);
            for b in 0..24 {
                let _ = g.compose(a, b);
            }
        }
    }

    #[test]
    fn two_qubit_group_and_classes() {
        let g = two_qubit_clifford_group();
        assert_eq!(g.len(), 11520);
        let sampler = TwoQubitSampler::new();
        let mut union = HashSet::new();
        for class in CliffordClass::ALL {
            let keys: HashSet<u64> = sampler.class_members(class).iter().map(clifford_key).collect();
            assert_eq!(keys.len(), class.size(), "{class:?}");
            for k in &keys {
                assert!(union.insert(*k), "classes overlap");
            }
        }
        assert_eq!(union.len(), 11520);
        assert_eq!(576 + 5184 + 5184 + 576, 11520);
    }

    #[test]
    fn sampled_tableaux_are_symplectic() {
        let s = TwoQubitSampler::new();
        let mut rng = stream_rng(3, 0);
        for _ in 0..200 {
            assert!(is_symplectic(&tableau(&s.sample(&mut rng))));
        }
    }

    #[test]
    fn class_frequencies() {
        let s = TwoQubitSampler::new();
        let mut rng = stream_rng(5, 1);
        let n = 100_000;
        let mut counts: HashMap<CliffordClass, usize> = HashMap::new();
        for _ in 0..n {
            *counts.entry(s.sample_coordinates(&mut rng).class).or_default() += 1;
        }
        for class in CliffordClass::ALL {
            let p = class.size() as f64 / 11520.0;
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            let got = counts[&class] as f64;
            assert!((got - n as f64 * p).abs() < 3.0 * sd, "{class:?}: {got}");
        }
    }

    #[test]
    fn compilation_costs() {
        let c1 = native_compilation(&single_qubit_clifford_group());
        assert_eq!(c1.pulses.iter().filter(|&&p| p == 0).count(), 4);
        assert!((c1.mean_pulses() - 1.0).abs() < 1e-12);
        let c2 = native_compilation(&two_qubit_clifford_group());
        assert!((c2.mean_entanglers() - 1.5).abs() < 1e-12);
    }
}
