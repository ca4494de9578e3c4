//! A posteriori filtering along measurement records, and the classical
//! Markov kernels of the complete-measurement coordinate.

use nalgebra::DMatrix;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use crate::dynamics::{stage_instrument, stage_propagator, ControlVector, InitialState, Scenario};
use crate::error::{Error, Result};
use crate::instrument::{compose, posterior_density, Instrument, OutcomeLabel};
use crate::qcore::{ComplexMatrix, DensityOperator, Ket};

/// Chosen outcome index per stage, starting at stage 0.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeasurementRecord(pub Vec<usize>);

impl MeasurementRecord {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Outcome labels, resolved against stages `first..`.
    pub fn labels(&self, scenario: &Scenario, first: usize) -> Vec<String> {
        self.0
            .iter()
            .enumerate()
            .map(|(i, &v)| scenario.stages[first + i].projectors[v].label.clone())
            .collect()
    }

    /// Parse labels (or, failing that, decimal indices) for stages `0..`.
    pub fn from_labels(scenario: &Scenario, labels: &[&str]) -> Result<Self> {
        if labels.len() > scenario.horizon() {
            return Err(Error::Config(format!(
                "record has {} outcomes but the scenario has {} stages",
                labels.len(),
                scenario.horizon()
            )));
        }
        labels
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let ps = &scenario.stages[k].projectors;
                ps.iter()
                    .position(|p| p.label == *l)
                    .or_else(|| l.parse::<usize>().ok().filter(|&i| i < ps.len()))
                    .ok_or_else(|| Error::Config(format!("stage {k} has no outcome {l:?}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }
}

/// Conditional state: vector or mixed.
#[derive(Clone, Debug, PartialEq)]
pub enum FilterState {
    Ket(Ket),
    Density(DensityOperator),
}

impl Serialize for FilterState {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("FilterState", 1)?;
        match self {
            FilterState::Ket(k) => st.serialize_field("ket", k)?,
            FilterState::Density(r) => st.serialize_field("density", r)?,
        }
        st.end()
    }
}

/// Posterior after each stage of a record, with the record's joint probability.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FilteredTrajectory {
    pub record: MeasurementRecord,
    pub states: Vec<FilterState>,
    pub probability: f64,
    pub stage_probs: Vec<f64>,
}

/// Filter the scenario's own initial state.
pub fn filter_trajectory(
    scenario: &Scenario,
    controls: &[ControlVector],
    record: &MeasurementRecord,
) -> Result<FilteredTrajectory> {
    filter_from(scenario, &scenario.initial, controls, record)
}

/// Iterate the posterior map through stages `0..record.len()`.
pub fn filter_from(
    scenario: &Scenario,
    initial: &InitialState,
    controls: &[ControlVector],
    record: &MeasurementRecord,
) -> Result<FilteredTrajectory> {
    if controls.len() != record.len() {
        return Err(Error::Config(format!(
            "{} controls for a record of length {}",
            controls.len(),
            record.len()
        )));
    }
    if record.len() > scenario.horizon() {
        return Err(Error::Config(format!(
            "record of length {} exceeds horizon {}",
            record.len(),
            scenario.horizon()
        )));
    }
    let tol = &scenario.tolerances;
    let mut state = match initial {
        InitialState::Ket(k) => FilterState::Ket(k.clone()),
        InitialState::Density(r) => FilterState::Density(r.clone()),
    };
    let mut states = Vec::with_capacity(record.len());
    let mut stage_probs = Vec::with_capacity(record.len());
    let mut probability = 1.0;
    for (k, (&v, u)) in record.0.iter().zip(controls).enumerate() {
        let ins = stage_instrument(&scenario.hamiltonian, &scenario.stages[k], u)?;
        if v >= ins.len() {
            return Err(Error::Config(format!("stage {k} has no outcome index {v}")));
        }
        let impossible = |p: f64| {
            let prefix = MeasurementRecord(record.0[..=k].to_vec()).labels(scenario, 0);
            Error::ZeroProbability(format!(
                "record prefix [{}] has conditional probability {p:.3e}",
                prefix.join(",")
            ))
        };
        let (next, p) = match &state {
            FilterState::Ket(psi) => {
                let (phi, p) = ins.branch(psi, v);
                if p <= tol.zero_probability {
                    return Err(impossible(p));
                }
                (FilterState::Ket(Ket::normalized(phi)?), p)
            }
            FilterState::Density(rho) => {
                let f = ins.kraus()[v].as_dmatrix();
                let p = (f * rho.matrix().as_dmatrix() * f.adjoint()).trace().re * ins.weights()[v];
                if p <= tol.zero_probability {
                    return Err(impossible(p));
                }
                (FilterState::Density(posterior_density(&ins, rho, v, tol)?), p)
            }
        };
        probability *= p;
        stage_probs.push(p);
        states.push(next.clone());
        state = next;
    }
    Ok(FilteredTrajectory {
        record: record.clone(),
        states,
        probability,
        stage_probs,
    })
}

/// Chronological composition of the stage instruments of `first..first + controls.len()`.
pub fn composed_instrument(scenario: &Scenario, first: usize, controls: &[ControlVector]) -> Result<Instrument> {
    if controls.is_empty() {
        return Ok(Instrument::identity(scenario.dim));
    }
    if first + controls.len() > scenario.horizon() {
        return Err(Error::Config("composition runs past the horizon".into()));
    }
    let mut acc = stage_instrument(&scenario.hamiltonian, &scenario.stages[first], &controls[0])?;
    for (i, u) in controls.iter().enumerate().skip(1) {
        let next = stage_instrument(&scenario.hamiltonian, &scenario.stages[first + i], u)?;
        acc = compose(&acc, &next)?;
    }
    Ok(acc)
}

/// Row-stochastic transition matrices `pi(v -> v' | u)`, one per grid control.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransitionKernel {
    pub stage: usize,
    pub source_outcomes: Vec<OutcomeLabel>,
    pub target_outcomes: Vec<OutcomeLabel>,
    pub controls: Vec<ControlVector>,
    pub matrices: Vec<Vec<Vec<f64>>>,
}

impl TransitionKernel {
    pub fn matrix(&self, j: usize) -> DMatrix<f64> {
        let m = &self.matrices[j];
        DMatrix::from_fn(m.len(), self.target_outcomes.len(), |r, c| m[r][c])
    }
}

/// `|<target_v' | T source_v>|^2`, validated row-stochastic then clipped.
pub(crate) fn transition_matrix(source: &[Ket], target: &[Ket], t: &ComplexMatrix) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::<f64>::zeros(source.len(), target.len());
    for (a, psi) in source.iter().enumerate() {
        let moved = t.as_dmatrix() * psi.amplitudes();
        for (b, phi) in target.iter().enumerate() {
            m[(a, b)] = phi.amplitudes().dotc(&moved).norm_sqr();
        }
        let row: f64 = m.row(a).sum();
        if (row - 1.0).abs() > 1e-10 {
            return Err(Error::Numerics(format!("kernel row {a} sums to {row}")));
        }
    }
    m.apply(|x| *x = x.clamp(0.0, 1.0));
    Ok(m)
}

/// Transition kernel of stage `k`: from the coordinate basis entering stage `k`
/// to the eigenbasis of stage `k`'s own measurement.
pub fn complete_measurement_kernel(scenario: &Scenario, k: usize) -> Result<TransitionKernel> {
    if k >= scenario.horizon() {
        return Err(Error::Config(format!("stage {k} beyond horizon {}", scenario.horizon())));
    }
    let source = scenario.coordinate_basis(k)?;
    let target = scenario.coordinate_basis(k + 1)?;
    let stage = &scenario.stages[k];
    let matrices = stage
        .control_grid
        .iter()
        .map(|u| {
            let t = stage_propagator(&scenario.hamiltonian, u, stage.duration)?;
            let m = transition_matrix(&source, &target, &t)?;
            Ok(m.row_iter().map(|r| r.iter().copied().collect()).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TransitionKernel {
        stage: k,
        source_outcomes: scenario.coordinate_labels(k),
        target_outcomes: scenario.coordinate_labels(k + 1),
        controls: stage.control_grid.clone(),
        matrices,
    })
}

/// Chapman–Kolmogorov residuals for a run of consecutive stages.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChapmanKolmogorovReport {
    pub first_stage: usize,
    /// `|pi_k pi_{k+1} - pi_{k,k+2}|_max` for each consecutive pair.
    pub pair_residuals: Vec<f64>,
    /// Same comparison for the product over the whole run.
    pub chain_residual: f64,
    pub max_residual: f64,
    pub passed: bool,
}

/// Compare products of one-stage kernels with kernels read off the composed
/// instrument, aggregating composed outcomes by their final component.
pub fn verify_chapman_kolmogorov(
    scenario: &Scenario,
    first: usize,
    controls: &[ControlVector],
) -> Result<ChapmanKolmogorovReport> {
    if controls.len() < 2 {
        return Err(Error::Config("need at least two stages".into()));
    }
    if first + controls.len() > scenario.horizon() {
        return Err(Error::Config("run extends past the horizon".into()));
    }
    let mut kernels = Vec::with_capacity(controls.len());
    for (i, u) in controls.iter().enumerate() {
        let k = first + i;
        let t = stage_propagator(&scenario.hamiltonian, u, scenario.stages[k].duration)?;
        kernels.push(transition_matrix(
            &scenario.coordinate_basis(k)?,
            &scenario.coordinate_basis(k + 1)?,
            &t,
        )?);
    }
    for w in kernels.windows(2) {
        if w[0].ncols() != w[1].nrows() {
            return Err(Error::Dimension("consecutive kernels do not chain".into()));
        }
    }
    let mut pair_residuals = Vec::with_capacity(controls.len() - 1);
    for i in 0..controls.len() - 1 {
        let product = &kernels[i] * &kernels[i + 1];
        let aggregated = aggregated_kernel(scenario, first + i, &controls[i..i + 2])?;
        pair_residuals.push((product - aggregated).abs().max());
    }
    let chain = kernels[1..].iter().fold(kernels[0].clone(), |acc, m| acc * m);
    let chain_residual = (chain - aggregated_kernel(scenario, first, controls)?).abs().max();
    let max_residual = pair_residuals.iter().copied().fold(chain_residual, f64::max);
    Ok(ChapmanKolmogorovReport {
        first_stage: first,
        pair_residuals,
        chain_residual,
        max_residual,
        passed: max_residual <= 1e-10,
    })
}

/// Probability of ending in each final outcome, from each source basis vector,
/// summed over every intermediate outcome of the composed instrument.
fn aggregated_kernel(scenario: &Scenario, first: usize, controls: &[ControlVector]) -> Result<DMatrix<f64>> {
    let composed = composed_instrument(scenario, first, controls)?;
    let source = scenario.coordinate_basis(first)?;
    let last = first + controls.len() - 1;
    let n_last = scenario.stages[last].projectors.len();
    let mut m = DMatrix::<f64>::zeros(source.len(), n_last);
    for (a, psi) in source.iter().enumerate() {
        for v in 0..composed.len() {
            // first outcome varies slowest, so the final one is the fastest digit
            m[(a, v % n_last)] += composed.branch(psi, v).1;
        }
    }
    Ok(m)
}

/// Node of the reachable-posterior tree.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorNode {
    pub record: MeasurementRecord,
    pub posterior: Ket,
    pub probability: f64,
    pub children: Vec<PosteriorNode>,
}

/// Every record with probability above the floor, depth first in outcome order.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorTree {
    pub first_stage: usize,
    pub root: PosteriorNode,
    /// Probability mass of pruned branches at each depth.
    pub pruned_mass: Vec<f64>,
}

impl PosteriorTree {
    /// Nodes in depth-first pre-order.
    pub fn nodes(&self) -> Vec<&PosteriorNode> {
        fn walk<'a>(n: &'a PosteriorNode, out: &mut Vec<&'a PosteriorNode>) {
            out.push(n);
            for c in &n.children {
                walk(c, out);
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    pub fn leaves(&self) -> Vec<&PosteriorNode> {
        self.nodes().into_iter().filter(|n| n.children.is_empty()).collect()
    }

    /// Total retained probability at each depth, `0..=depth`.
    pub fn depth_mass(&self) -> Vec<f64> {
        let mut mass = Vec::new();
        for n in self.nodes() {
            let d = n.record.len();
            if mass.len() <= d {
                mass.resize(d + 1, 0.0);
            }
            mass[d] += n.probability;
        }
        mass
    }
}

/// Enumerate the posterior tree from `state` at stage `from`, applying
/// `controls[i]` at stage `from + i`.
pub fn reachable_posteriors(
    scenario: &Scenario,
    from: usize,
    state: &Ket,
    controls: &[ControlVector],
) -> Result<PosteriorTree> {
    if from + controls.len() > scenario.horizon() {
        return Err(Error::Config("controls run past the horizon".into()));
    }
    let instruments = controls
        .iter()
        .enumerate()
        .map(|(i, u)| stage_instrument(&scenario.hamiltonian, &scenario.stages[from + i], u))
        .collect::<Result<Vec<_>>>()?;
    let mut pruned_mass = vec![0.0; controls.len() + 1];
    let root = expand(
        &instruments,
        MeasurementRecord::default(),
        state.clone(),
        1.0,
        scenario.tolerances.zero_probability,
        &mut pruned_mass,
    )?;
    Ok(PosteriorTree {
        first_stage: from,
        root,
        pruned_mass,
    })
}

fn expand(
    instruments: &[Instrument],
    record: MeasurementRecord,
    posterior: Ket,
    probability: f64,
    floor: f64,
    pruned: &mut [f64],
) -> Result<PosteriorNode> {
    let depth = record.len();
    let mut children = Vec::new();
    if let Some(ins) = instruments.get(depth) {
        for v in 0..ins.len() {
            let (phi, p) = ins.branch(&posterior, v);
            if p <= floor {
                pruned[depth + 1] += probability * p;
                continue;
            }
            let mut r = record.clone();
            r.0.push(v);
            children.push(expand(instruments, r, Ket::normalized(phi)?, probability * p, floor, pruned)?);
        }
    }
    Ok(PosteriorNode {
        record,
        posterior,
        probability,
        children,
    })
}

/// Flat row for CSV export: record labels, probability, interleaved re/im amplitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorRow {
    pub record: Vec<String>,
    pub probability: f64,
    pub amplitudes: Vec<f64>,
}

pub fn posterior_rows(scenario: &Scenario, tree: &PosteriorTree) -> Vec<PosteriorRow> {
    tree.nodes()
        .into_iter()
        .map(|n| PosteriorRow {
            record: n.record.labels(scenario, tree.first_stage),
            probability: n.probability,
            amplitudes: n.posterior.amplitudes().iter().flat_map(|z| [z.re, z.im]).collect(),
        })
        .collect()
}

/// Nested JSON view of a posterior tree with outcome labels.
pub fn posterior_tree_json(scenario: &Scenario, tree: &PosteriorTree) -> serde_json::Value {
    fn node(scenario: &Scenario, first: usize, n: &PosteriorNode) -> serde_json::Value {
        serde_json::json!({
            "record": n.record.labels(scenario, first),
            "probability": n.probability,
            "posterior": n.posterior,
            "children": n.children.iter().map(|c| node(scenario, first, c)).collect::<Vec<_>>(),
        })
    }
    serde_json::json!({
        "first_stage": tree.first_stage,
        "pruned_mass": tree.pruned_mass,
        "root": node(scenario, tree.first_stage, &tree.root),
    })
}
