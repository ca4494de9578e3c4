//! Controlled Schrödinger evolution between measurement times.
//!
//! Stage `k` holds a constant control `u` for its duration `tau_k`, evolves by
//! `T_k(u) = exp(-i H(u) tau_k)` with `H(u) = H_0 + sum_i u_i H_i`, and then
//! measures the stage's projectors. Its instrument therefore has Kraus
//! operators `E_v T_k(u)` and its running cost is the Heisenberg-picture
//! integral `S_k(u) = int_0^tau T(t)^dag S(u) T(t) dt`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::instrument::{Instrument, OutcomeLabel};
use crate::qcore::{
    max_abs_diff, ComplexMatrix, DensityOperator, HermitianOperator, Ket, Projector, Spectral,
    Tolerances, C64,
};

pub const DEFAULT_SUBSTEPS: usize = 16;

/// `H(u) = H_0 + sum_i u_i H_i`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ControlledHamiltonian {
    pub h0: HermitianOperator,
    pub controls: Vec<HermitianOperator>,
}

impl ControlledHamiltonian {
    pub fn new(h0: HermitianOperator, controls: Vec<HermitianOperator>) -> Result<Self> {
        let d = h0.dim();
        if let Some((i, h)) = controls.iter().enumerate().find(|(_, h)| h.dim() != d) {
            return Err(Error::Dimension(format!(
                "control Hamiltonian {i} has dimension {}, expected {d}",
                h.dim()
            )));
        }
        Ok(Self { h0, controls })
    }

    /// Uncontrolled dynamics.
    pub fn free(h0: HermitianOperator) -> Self {
        Self {
            h0,
            controls: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.h0.dim()
    }

    pub fn num_controls(&self) -> usize {
        self.controls.len()
    }

    pub fn at(&self, u: &ControlVector) -> Result<HermitianOperator> {
        if u.len() != self.num_controls() {
            return Err(Error::Dimension(format!(
                "control vector has {} entries, Hamiltonian has {} control channels",
                u.len(),
                self.num_controls()
            )));
        }
        let mut terms = vec![(1.0, &self.h0)];
        terms.extend(u.values().iter().copied().zip(&self.controls));
        HermitianOperator::linear_combination(&terms, self.dim())
    }
}

/// Control amplitudes held over one stage.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ControlVector(Vec<f64>);

impl TryFrom<Vec<f64>> for ControlVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ControlVector> for Vec<f64> {
    fn from(u: ControlVector) -> Self {
        u.0
    }
}

impl ControlVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("control amplitudes must be finite".into()));
        }
        Ok(Self(values))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One interval between measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct StageSpec {
    pub duration: f64,
    pub projectors: Vec<Projector>,
    pub control_grid: Vec<ControlVector>,
    pub substeps: usize,
}

impl StageSpec {
    /// Validates the measurement (resolution of identity, orthogonality) and
    /// the control grid. Invariant errors carry locations relative to the stage.
    pub fn new(
        duration: f64,
        projectors: Vec<Projector>,
        control_grid: Vec<ControlVector>,
        substeps: usize,
        tol: &Tolerances,
    ) -> Result<Self> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(invariant("duration", "positive stage duration", duration));
        }
        if substeps == 0 {
            return Err(invariant("substeps", "at least one quadrature substep", 0.0));
        }
        if control_grid.is_empty() {
            return Err(invariant("control_grid", "nonempty control grid", 0.0));
        }
        let first = projectors
            .first()
            .ok_or_else(|| invariant("projectors", "nonempty measurement", 1.0))?;
        let d = first.dim();
        if projectors.iter().any(|p| p.dim() != d) {
            return Err(Error::Dimension("projectors differ in dimension".into()));
        }
        for (i, p) in projectors.iter().enumerate() {
            if projectors[..i].iter().any(|q| q.label == p.label) {
                return Err(invariant("projectors", &format!("distinct label {:?}", p.label), 0.0));
            }
        }
        let mut sum = DMatrix::<C64>::zeros(d, d);
        for p in &projectors {
            sum += p.matrix.as_dmatrix();
        }
        let residual = max_abs_diff(&sum, &DMatrix::identity(d, d));
        if residual > tol.idempotency {
            return Err(invariant("projectors", "resolution of identity", residual));
        }
        let mut orth = 0.0f64;
        for (i, p) in projectors.iter().enumerate() {
            for q in &projectors[i + 1..] {
                let prod = p.matrix.as_dmatrix() * q.matrix.as_dmatrix();
                orth = orth.max(prod.iter().map(|z| z.norm()).fold(0.0, f64::max));
            }
        }
        if orth > tol.idempotency {
            return Err(invariant("projectors", "orthogonality of projectors", orth));
        }
        Ok(Self {
            duration,
            projectors,
            control_grid,
            substeps,
        })
    }

    /// Stage without observation: a single trivial projector `I`.
    pub fn unobserved(
        dim: usize,
        duration: f64,
        control_grid: Vec<ControlVector>,
        substeps: usize,
        tol: &Tolerances,
    ) -> Result<Self> {
        let p = Projector::new(ComplexMatrix::identity(dim), "none", tol)?;
        Self::new(duration, vec![p], control_grid, substeps, tol)
    }

    pub fn dim(&self) -> usize {
        self.projectors[0].dim()
    }

    pub fn outcome_labels(&self) -> Vec<OutcomeLabel> {
        self.projectors
            .iter()
            .map(|p| OutcomeLabel::single(&p.label))
            .collect()
    }

    /// Every projector is rank one (non-degenerate observable).
    pub fn is_complete(&self) -> bool {
        self.projectors.len() == self.dim() && self.projectors.iter().all(|p| p.rank() == 1)
    }

    /// Eigenvectors `psi_v` of a complete measurement, in projector order.
    pub fn basis(&self) -> Result<Vec<Ket>> {
        if !self.is_complete() {
            return Err(Error::NotCompleteMeasurement(format!(
                "stage has {} projectors of ranks {:?} in dimension {}",
                self.projectors.len(),
                self.projectors.iter().map(Projector::rank).collect::<Vec<_>>(),
                self.dim()
            )));
        }
        self.projectors.iter().map(Projector::range_vector).collect()
    }
}

fn invariant(location: &str, check: &str, residual: f64) -> Error {
    Error::Invariant {
        location: location.into(),
        check: check.into(),
        residual,
    }
}


impl Serialize for StageSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("StageSpec", 4)?;
        st.serialize_field("duration", &self.duration)?;
        st.serialize_field("projectors", &self.projectors)?;
        st.serialize_field("control_grid", &self.control_grid)?;
        st.serialize_field("substeps", &self.substeps)?;
        st.end()
    }
}

/// Running-cost density `S(u) = s0 + sum_i u_i L_i + (sum_i c_i u_i^2) I`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostSpec {
    pub s0: HermitianOperator,
    pub linear: Vec<HermitianOperator>,
    pub quad_penalty: Vec<f64>,
}

impl CostSpec {
    pub fn new(s0: HermitianOperator, linear: Vec<HermitianOperator>, quad_penalty: Vec<f64>) -> Result<Self> {
        let d = s0.dim();
        if linear.iter().any(|l| l.dim() != d) {
            return Err(Error::Dimension("linear cost operators differ in dimension".into()));
        }
        if quad_penalty.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::Config("quadratic penalties must be nonnegative".into()));
        }
        Ok(Self {
            s0,
            linear,
            quad_penalty,
        })
    }

    pub fn zero(d: usize) -> Self {
        Self {
            s0: HermitianOperator::zeros(d),
            linear: Vec::new(),
            quad_penalty: Vec::new(),
        }
    }

    /// `c * sum_i u_i^2 * I` with one shared coefficient per channel.
    pub fn quadratic(d: usize, c: f64, channels: usize) -> Result<Self> {
        Self::new(HermitianOperator::zeros(d), Vec::new(), vec![c; channels])
    }

    pub fn dim(&self) -> usize {
        self.s0.dim()
    }

    /// Channels beyond the given linear/penalty lists contribute nothing.
    pub fn at(&self, u: &ControlVector) -> Result<HermitianOperator> {
        if self.linear.len() > u.len() || self.quad_penalty.len() > u.len() {
            return Err(Error::Dimension(format!(
                "cost has {} linear terms and {} penalties for a {}-channel control",
                self.linear.len(),
                self.quad_penalty.len(),
                u.len()
            )));
        }
        let penalty: f64 = self
            .quad_penalty
            .iter()
            .zip(u.values())
            .map(|(c, x)| c * x * x)
            .sum();
        let id = HermitianOperator::identity(self.dim());
        let mut terms = vec![(1.0, &self.s0), (penalty, &id)];
        terms.extend(u.values().iter().copied().zip(&self.linear));
        HermitianOperator::linear_combination(&terms, self.dim())
    }
}

/// Cost densities over the horizon: shared by all stages or one per stage.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum CostSchedule {
    Uniform(CostSpec),
    PerStage(Vec<CostSpec>),
}

impl CostSchedule {
    pub fn for_stage(&self, k: usize) -> &CostSpec {
        match self {
            CostSchedule::Uniform(c) => c,
            CostSchedule::PerStage(v) => &v[k],
        }
    }
}

/// Initial state: vector or mixed.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialState {
    Ket(Ket),
    Density(DensityOperator),
}

impl InitialState {
    pub fn dim(&self) -> usize {
        match self {
            InitialState::Ket(k) => k.dim(),
            InitialState::Density(r) => r.dim(),
        }
    }

    pub fn as_ket(&self) -> Option<&Ket> {
        match self {
            InitialState::Ket(k) => Some(k),
            InitialState::Density(_) => None,
        }
    }
}

impl Serialize for InitialState {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("InitialState", 1)?;
        match self {
            InitialState::Ket(k) => st.serialize_field("ket", k)?,
            InitialState::Density(r) => st.serialize_field("density", r)?,
        }
        st.end()
    }
}

/// A full control problem: dynamics, measurement schedule, costs and start state.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub dim: usize,
    pub hamiltonian: ControlledHamiltonian,
    pub stages: Vec<StageSpec>,
    pub cost: CostSchedule,
    pub terminal: HermitianOperator,
    pub initial: InitialState,
    pub tolerances: Tolerances,
}

impl Scenario {
    /// Cross-field validation. Locations in errors follow the file schema.
    pub fn new(
        hamiltonian: ControlledHamiltonian,
        stages: Vec<StageSpec>,
        cost: CostSchedule,
        terminal: HermitianOperator,
        initial: InitialState,
        tolerances: Tolerances,
    ) -> Result<Self> {
        let dim = hamiltonian.dim();
        let dim_err = |what: &str, got: usize| {
            Error::Dimension(format!("{what} has dimension {got}, scenario dimension is {dim}"))
        };
        let m = hamiltonian.num_controls();
        for (k, st) in stages.iter().enumerate() {
            if st.dim() != dim {
                return Err(dim_err(&format!("stages/{k}/projectors"), st.dim()));
            }
            if let Some(j) = st.control_grid.iter().position(|u| u.len() != m) {
                return Err(Error::Dimension(format!(
                    "stages/{k}/control_grid/{j} has {} entries, Hamiltonian has {m} control channels",
                    st.control_grid[j].len()
                )));
            }
        }
        match &cost {
            CostSchedule::Uniform(c) => check_cost(c, dim, m, "cost")?,
            CostSchedule::PerStage(v) => {
                if v.len() != stages.len() {
                    return Err(Error::Config(format!(
                        "{} per-stage costs for {} stages",
                        v.len(),
                        stages.len()
                    )));
                }
                for (k, c) in v.iter().enumerate() {
                    check_cost(c, dim, m, &format!("cost/{k}"))?;
                }
            }
        }
        if terminal.dim() != dim {
            return Err(dim_err("terminal", terminal.dim()));
        }
        let min = terminal.min_eigenvalue();
        if min < -tolerances.psd {
            return Err(invariant("terminal", "positive semidefinite terminal cost", min));
        }
        if initial.dim() != dim {
            return Err(dim_err("initial", initial.dim()));
        }
        Ok(Self {
            dim,
            hamiltonian,
            stages,
            cost,
            terminal,
            initial,
            tolerances,
        })
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn cost_for(&self, k: usize) -> &CostSpec {
        self.cost.for_stage(k)
    }

    pub fn is_complete(&self) -> bool {
        self.stages.iter().all(StageSpec::is_complete)
    }

    /// Basis of the sufficient coordinate entering stage `k`, for `k` in
    /// `0..=K`. Entry `k >= 1` is the eigenbasis of stage `k - 1`'s measurement;
    /// entry 0 is the eigenbasis of stage 0's own measurement, i.e. the initial
    /// state is taken to be prepared in the first measured basis.
    pub fn coordinate_basis(&self, k: usize) -> Result<Vec<Ket>> {
        if self.stages.is_empty() {
            return Err(Error::NotCompleteMeasurement("scenario has no stages".into()));
        }
        if k > self.horizon() {
            return Err(Error::Dimension(format!(
                "coordinate index {k} beyond horizon {}",
                self.horizon()
            )));
        }
        self.stages[k.saturating_sub(1)].basis()
    }

    pub fn coordinate_labels(&self, k: usize) -> Vec<OutcomeLabel> {
        self.stages[k.saturating_sub(1)].outcome_labels()
    }
}

fn check_cost(c: &CostSpec, dim: usize, m: usize, loc: &str) -> Result<()> {
    if c.dim() != dim {
        return Err(Error::Dimension(format!(
            "{loc} has dimension {}, scenario dimension is {dim}",
            c.dim()
        )));
    }
    if c.linear.len() > m || c.quad_penalty.len() > m {
        return Err(Error::Config(format!(
            "{loc} has more cost terms than the {m} control channels"
        )));
    }
    Ok(())
}

impl Serialize for Scenario {
    /// Canonical form: every shorthand expanded, `hbar` normalized to 1.
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("Scenario", 8)?;
        st.serialize_field("dim", &self.dim)?;
        st.serialize_field("hbar", &1.0)?;
        st.serialize_field("hamiltonian", &self.hamiltonian)?;
        st.serialize_field("stages", &self.stages)?;
        st.serialize_field("cost", &self.cost)?;
        st.serialize_field("terminal", &self.terminal)?;
        st.serialize_field("initial", &self.initial)?;
        st.serialize_field("tolerances", &self.tolerances)?;
        st.end()
    }
}

/// `T_k(u) = exp(-i H(u) tau)`.
pub fn stage_propagator(ham: &ControlledHamiltonian, u: &ControlVector, tau: f64) -> Result<ComplexMatrix> {
    crate::qcore::propagator_step(&ham.at(u)?, tau)
}

/// Instrument with Kraus operators `E_v T_k(u)` under the counting measure.
pub fn stage_instrument(ham: &ControlledHamiltonian, stage: &StageSpec, u: &ControlVector) -> Result<Instrument> {
    let t = stage_propagator(ham, u, stage.duration)?;
    instrument_from(stage, &t)
}

fn instrument_from(stage: &StageSpec, t: &ComplexMatrix) -> Result<Instrument> {
    if stage.dim() != t.rows() {
        return Err(Error::Dimension(format!(
            "stage measures dimension {} but dynamics has dimension {}",
            stage.dim(),
            t.rows()
        )));
    }
    Instrument::counting(
        stage.outcome_labels(),
        stage.projectors.iter().map(|p| &p.matrix * t).collect(),
    )
}

/// `int_0^tau T(t)^dag S(u) T(t) dt` by composite Simpson quadrature.
///
/// `substeps` is the number of subintervals, rounded up to even. The
/// integrand is evaluated in the eigenbasis of `H(u)`, so one decomposition
/// serves every node.
pub fn stage_cost(
    ham: &ControlledHamiltonian,
    cost: &CostSpec,
    u: &ControlVector,
    tau: f64,
    substeps: usize,
) -> Result<HermitianOperator> {
    if substeps == 0 {
        return Err(Error::Config("stage cost needs at least one substep".into()));
    }
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::Domain(format!("stage duration must be nonnegative, got {tau}")));
    }
    let h = ham.at(u)?;
    let s = cost.at(u)?;
    if s.dim() != h.dim() {
        return Err(Error::Dimension(format!(
            "cost has dimension {}, Hamiltonian has dimension {}",
            s.dim(),
            h.dim()
        )));
    }
    Ok(simpson_heisenberg(&h.spectral(), &s, tau, substeps))
}

fn simpson_heisenberg(spec: &Spectral, s: &HermitianOperator, tau: f64, substeps: usize) -> HermitianOperator {
    let n = substeps + substeps % 2;
    let step = tau / n as f64;
    let d = spec.values.len();
    let v = &spec.vectors;
    let s_eig = v.adjoint() * s.matrix().as_dmatrix() * v;
    // sum_j w_j exp(i (l_a - l_b) t_j) for every pair (a, b)
    let mut kernel = DMatrix::<C64>::zeros(d, d);
    for j in 0..=n {
        let w = if j == 0 || j == n {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let t = j as f64 * step;
        for a in 0..d {
            for b in 0..d {
                let phase = (spec.values[a] - spec.values[b]) * t;
                kernel[(a, b)] += C64::new(0.0, phase).exp() * w;
            }
        }
    }
    let integrated = s_eig.component_mul(&kernel) * C64::new(step / 3.0, 0.0);
    let x = v * integrated * v.adjoint();
    let herm = (&x + x.adjoint()) * C64::new(0.5, 0.0);
    HermitianOperator::symmetrized(&ComplexMatrix::wrap(herm)).expect("square")
}

/// Everything the solvers need for one `(stage, control)` pair.
#[derive(Clone, Debug)]
pub struct StageControl {
    pub control: ControlVector,
    pub propagator: ComplexMatrix,
    pub instrument: Instrument,
    pub cost: HermitianOperator,
}

/// A scenario with per-`(stage, control)` operators precomputed once and
/// shared by the dynamic program, the oracle, the evaluator and the simulator.
#[derive(Clone, Debug)]
pub struct Model {
    scenario: Scenario,
    stages: Vec<Vec<StageControl>>,
}

impl Model {
    pub fn compile(scenario: Scenario) -> Result<Self> {
        let jobs: Vec<(usize, usize)> = scenario
            .stages
            .iter()
            .enumerate()
            .flat_map(|(k, st)| (0..st.control_grid.len()).map(move |j| (k, j)))
            .collect();
        let built: Vec<Result<StageControl>> = jobs
            .par_iter()
            .map(|&(k, j)| {
                let st = &scenario.stages[k];
                let u = &st.control_grid[j];
                let h = scenario.hamiltonian.at(u)?;
                let spec = h.spectral();
                let propagator = spec.propagator(st.duration);
                let instrument = instrument_from(st, &propagator)?;
                let s = scenario.cost_for(k).at(u)?;
                let cost = simpson_heisenberg(&spec, &s, st.duration, st.substeps);
                Ok(StageControl {
                    control: u.clone(),
                    propagator,
                    instrument,
                    cost,
                })
            })
            .collect();
        let mut stages: Vec<Vec<StageControl>> = scenario.stages.iter().map(|_| Vec::new()).collect();
        for ((k, _), r) in jobs.into_iter().zip(built) {
            stages[k].push(r?);
        }
        Ok(Self { scenario, stages })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.scenario.tolerances
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn dim(&self) -> usize {
        self.scenario.dim
    }

    /// Precomputed operators for every grid control of stage `k`.
    pub fn stage(&self, k: usize) -> &[StageControl] {
        &self.stages[k]
    }

    pub fn outcomes(&self, k: usize) -> usize {
        self.scenario.stages[k].projectors.len()
    }

    pub fn terminal(&self) -> &HermitianOperator {
        &self.scenario.terminal
    }
}
