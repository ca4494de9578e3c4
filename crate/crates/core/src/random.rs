//! Random operators and states for property tests and scenario generation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dynamics::{
    ControlVector, ControlledHamiltonian, CostSchedule, CostSpec, InitialState, Scenario, StageSpec,
    DEFAULT_SUBSTEPS,
};
use crate::qcore::{ComplexMatrix, HermitianOperator, Ket, Projector, Tolerances, C64};

fn entry<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

/// Hermitian matrix with entries of modulus at most `scale`.
pub fn hermitian<R: Rng + ?Sized>(rng: &mut R, dim: usize, scale: f64) -> HermitianOperator {
    let a = DMatrix::from_fn(dim, dim, |_, _| entry(rng));
    let h = (&a + a.adjoint()) * C64::new(0.5 * scale, 0.0);
    HermitianOperator::symmetrized(&ComplexMatrix::from_dmatrix(h).expect("finite"))
        .expect("square")
}

/// Unit vector with uniformly drawn components before normalization.
pub fn ket<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Ket {
    loop {
        let v = DVector::from_fn(dim, |_, _| entry(rng));
        if let Ok(k) = Ket::normalized(v) {
            return k;
        }
    }
}

/// Orthonormal basis from the eigenvectors of a random Hermitian matrix.
pub fn orthonormal_basis<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<Ket> {
    let spec = hermitian(rng, dim, 1.0).spectral();
    (0..dim)
        .map(|j| Ket::normalized(spec.vectors.column(j).into_owned()).expect("unit column"))
        .collect()
}

/// Rank-one projectors onto a random orthonormal basis, labelled `"0"`, `"1"`, ...
pub fn complete_measurement<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<Projector> {
    orthonormal_basis(rng, dim)
        .iter()
        .enumerate()
        .map(|(i, k)| Projector::onto(k, i.to_string()))
        .collect()
}

/// Positive semidefinite `A^dag A` with `A` entries of modulus at most `scale`.
pub fn psd<R: Rng + ?Sized>(rng: &mut R, dim: usize, scale: f64) -> HermitianOperator {
    let a = DMatrix::from_fn(dim, dim, |_, _| entry(rng) * scale);
    HermitianOperator::symmetrized(&ComplexMatrix::from_dmatrix(a.adjoint() * a).expect("finite"))
        .expect("square")
}

/// Two-outcome measurement: a rank-one projector and its complement.
pub fn coarse_measurement<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<Projector> {
    let basis = orthonormal_basis(rng, dim);
    let p = Projector::onto(&basis[0], "a");
    let rest = ComplexMatrix::from_dmatrix(DMatrix::identity(dim, dim) - p.matrix.as_dmatrix()).expect("finite");
    vec![p, Projector { label: "b".into(), matrix: rest }]
}

/// Shape of a generated scenario.
#[derive(Clone, Copy, Debug)]
pub struct Shape {
    pub dim: usize,
    pub stages: usize,
    pub grid: usize,
    pub controls: usize,
    /// Rank-one measurements at every stage; otherwise each stage is coarse
    /// with probability one half.
    pub complete: bool,
}

/// Random scenario: Hamiltonian terms of scale one, durations in `[0.5, 1.5]`,
/// controls in `[-1, 1]`, PSD stage and terminal costs, random initial ket.
pub fn scenario<R: Rng + ?Sized>(rng: &mut R, shape: Shape) -> Scenario {
    let tol = Tolerances::default();
    let d = shape.dim;
    let ham = ControlledHamiltonian::new(
        hermitian(rng, d, 1.0),
        (0..shape.controls).map(|_| hermitian(rng, d, 1.0)).collect(),
    )
    .expect("matching dimensions");
    let stages = (0..shape.stages)
        .map(|_| {
            let projectors = if shape.complete || rng.random_bool(0.5) {
                complete_measurement(rng, d)
            } else {
                coarse_measurement(rng, d)
            };
            let grid = (0..shape.grid)
                .map(|_| {
                    ControlVector::new((0..shape.controls).map(|_| rng.random_range(-1.0..1.0)).collect())
                        .expect("finite")
                })
                .collect();
            StageSpec::new(rng.random_range(0.5..1.5), projectors, grid, DEFAULT_SUBSTEPS, &tol)
                .expect("valid measurement")
        })
        .collect();
    let cost = CostSpec::new(psd(rng, d, 0.3), Vec::new(), vec![0.1; shape.controls]).expect("valid cost");
    Scenario::new(
        ham,
        stages,
        CostSchedule::Uniform(cost),
        psd(rng, d, 0.7),
        InitialState::Ket(ket(rng, d)),
        tol,
    )
    .expect("consistent scenario")
}
