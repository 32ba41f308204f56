//! Clifford groups, randomized benchmarking and decay fitting.

pub mod clifford;
pub mod fit;
pub mod irb;
pub mod rb;

pub use clifford::{
    native_compilation, single_qubit_clifford_group, two_qubit_clifford_group, CliffordClass, CliffordGroup,
    TwoQubitSampler,
};
pub use fit::{
    bootstrap, clifford_fidelity, composed_clifford_fidelity, fit_gaussian_decay, fit_rb, interleaved_cz_fidelity,
    DecayFit, DecayPoint, InterleavedFidelity, RbFit,
};
pub use irb::{engineered_cz_error, run_irb, IrbResult, MixedUnitary};
pub use rb::{
    decay_csv, read_decay_csv, Depolarizing, Ideal, Interleave, NoiseChannel, RbConfig, RbData, RbSimulator,
    UnitaryError,
};
