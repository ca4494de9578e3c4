//! Finite-horizon optimal measurement-feedback control.
//!
//! Two dynamic programs are provided:
//!
//! * [`bellman_ket`] works on the posterior ket itself. At stage `k` it solves
//!   `q_k(psi) = min_u <psi|S_k(u)|psi> + sum_v p_v q_{k+1}(psi_v)` over the
//!   tree of reachable posteriors, with `q_K(psi) = <psi|Q|psi>`.
//! * [`bellman_complete`] applies when every stage measures a non-degenerate
//!   observable. The last outcome is then a sufficient coordinate and the
//!   problem collapses to a classical finite Markov decision process.
//!
//! [`enumerate_strategies_oracle`] scores every deterministic non-anticipating
//! strategy by a forward pass and keeps the best; it exists to check the
//! dynamic programs and shares none of their backup code.
//!
//! Minima are over finite control grids; ties go to the lowest grid index.
//! The ket recursion has no memoization, so its cost is
//! `O((|U| |V|)^K d^3)`.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::Model;
use crate::error::{Error, Result};
use crate::filter::transition_matrix;
use crate::qcore::Ket;

/// Default cap on the number of strategies the oracle will enumerate.
pub const ORACLE_LIMIT: u64 = 10_000_000;

/// Node of a history-indexed decision tree.
///
/// A node at depth `k < K` holds the grid index of the control applied at
/// stage `k`, and one child slot per outcome of that stage (`None` where the
/// branch is unreachable). Depth-`K` nodes carry no control.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct TreeNode {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<usize>,
    /// Optimal cost-to-go, when the tree came from the dynamic program.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<Option<TreeNode>>,
}

impl TreeNode {
    fn find(&self, record: &[usize]) -> Option<&TreeNode> {
        match record.split_first() {
            None => Some(self),
            Some((&v, rest)) => self.children.get(v)?.as_ref()?.find(rest),
        }
    }

    /// Number of decision nodes.
    pub fn decisions(&self) -> usize {
        usize::from(self.control.is_some())
            + self.children.iter().flatten().map(TreeNode::decisions).sum::<usize>()
    }
}

/// Form A: control chosen per record prefix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeStrategy {
    pub root: TreeNode,
}

/// Form B: control chosen per `(stage, last outcome)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovStrategy {
    /// `controls[k][v]` is the grid index used at stage `k` when the
    /// coordinate entering stage `k` is `v`.
    pub controls: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Strategy {
    Tree(TreeStrategy),
    Markov(MarkovStrategy),
}

impl Strategy {
    /// Grid index for stage `k` after `record` (outcomes of stages `0..k`).
    /// `start` is the stage-0 coordinate, needed only by Markov strategies.
    pub fn decide(&self, k: usize, record: &[usize], start: Option<usize>) -> Result<usize> {
        let missing = || {
            Error::Strategy(format!(
                "no control assigned at stage {k} after record {record:?}"
            ))
        };
        match self {
            Strategy::Tree(t) => t.root.find(record).and_then(|n| n.control).ok_or_else(missing),
            Strategy::Markov(m) => {
                let coord = if k == 0 {
                    start.ok_or_else(|| {
                        Error::Strategy(
                            "Markov strategy needs an initial state aligned with the first measured basis".into(),
                        )
                    })?
                } else {
                    *record.get(k - 1).ok_or_else(missing)?
                };
                m.controls
                    .get(k)
                    .and_then(|row| row.get(coord))
                    .copied()
                    .ok_or_else(missing)
            }
        }
    }
}

/// Result of a solver run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: String,
    /// Optimal expected cost from the initial state; `None` for a Markov
    /// solution whose initial state is not a coordinate basis vector.
    pub value: Option<f64>,
    pub strategy: Strategy,
    /// Form-B value table `q_k(v)`, `k = 0..=K`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<Vec<f64>>>,
    pub nodes_expanded: u64,
    /// Probability mass of branches treated as impossible under the strategy.
    pub pruned_mass: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategies_enumerated: Option<u64>,
}

fn check_state(model: &Model, psi0: &Ket) -> Result<()> {
    if psi0.dim() != model.dim() {
        return Err(Error::Dimension(format!(
            "initial ket has dimension {}, scenario has dimension {}",
            psi0.dim(),
            model.dim()
        )));
    }
    if let Some(k) = (0..model.horizon()).find(|&k| model.stage(k).is_empty()) {
        return Err(Error::Config(format!("stage {k} has an empty control grid")));
    }
    Ok(())
}

struct Backup {
    node: TreeNode,
    /// Pruned probability inside this subtree, conditional on reaching it.
    pruned: f64,
}

/// Dynamic program over the reachable posterior tree.
pub fn bellman_ket(model: &Model, psi0: &Ket) -> Result<SolveReport> {
    check_state(model, psi0)?;
    let expanded = AtomicU64::new(0);
    let top = backup(model, 0, psi0, &expanded)?;
    Ok(SolveReport {
        method: "bellman_ket".into(),
        value: top.node.value,
        strategy: Strategy::Tree(TreeStrategy { root: top.node }),
        values: None,
        nodes_expanded: expanded.into_inner(),
        pruned_mass: top.pruned,
        strategies_enumerated: None,
    })
}

/// Expected cost, child nodes and pruned mass for one control candidate.
type Candidate = (f64, Vec<Option<TreeNode>>, f64);

fn backup(model: &Model, k: usize, psi: &Ket, expanded: &AtomicU64) -> Result<Backup> {
    expanded.fetch_add(1, Ordering::Relaxed);
    if k == model.horizon() {
        return Ok(Backup {
            node: TreeNode {
                control: None,
                value: Some(psi.expectation(model.terminal())),
                children: Vec::new(),
            },
            pruned: 0.0,
        });
    }
    let floor = model.tolerances().zero_probability;
    let candidate = |j: usize| -> Result<(f64, Vec<Option<TreeNode>>, f64)> {
        let sc = &model.stage(k)[j];
        let mut q = psi.expectation(&sc.cost);
        let mut pruned = 0.0;
        let mut children = Vec::with_capacity(sc.instrument.len());
        for v in 0..sc.instrument.len() {
            let (phi, p) = sc.instrument.branch(psi, v);
            if p <= floor {
                pruned += p;
                children.push(None);
                continue;
            }
            let child = backup(model, k + 1, &Ket::normalized(phi)?, expanded)?;
            q += p * child.node.value.expect("backup sets values");
            pruned += p * child.pruned;
            children.push(Some(child.node));
        }
        Ok((q, children, pruned))
    };
    let n = model.stage(k).len();
    let results: Vec<Result<Candidate>> = if model.horizon() - k >= 2 {
        (0..n).into_par_iter().map(candidate).collect()
    } else {
        (0..n).map(candidate).collect()
    };
    let mut best: Option<(usize, f64, Vec<Option<TreeNode>>, f64)> = None;
    for (j, r) in results.into_iter().enumerate() {
        let (q, children, pruned) = r?;
        if best.as_ref().is_none_or(|b| q < b.1) {
            best = Some((j, q, children, pruned));
        }
    }
    let (j, q, children, pruned) = best.expect("nonempty grid");
    Ok(Backup {
        node: TreeNode {
            control: Some(j),
            value: Some(q),
            children,
        },
        pruned,
    })
}

/// Index `v` with `|<basis_v|psi>| = 1` within `1e-10`, if any.
pub fn aligned_index(basis: &[Ket], psi: &Ket) -> Option<usize> {
    basis
        .iter()
        .position(|b| b.dim() == psi.dim() && b.fidelity(psi) >= 1.0 - 1e-10)
}

/// Stage-0 coordinate of `psi0` for Markov strategies.
pub fn start_coordinate(model: &Model, psi0: &Ket) -> Option<usize> {
    let basis = model.scenario().coordinate_basis(0).ok()?;
    aligned_index(&basis, psi0)
}

/// Classical dynamic program over the last complete-measurement outcome.
pub fn bellman_complete(model: &Model) -> Result<SolveReport> {
    let scenario = model.scenario();
    let horizon = model.horizon();
    if horizon == 0 {
        return Err(Error::NotCompleteMeasurement(
            "scenario has no stages, so no measured coordinate".into(),
        ));
    }
    let bases = (0..=horizon)
        .map(|k| scenario.coordinate_basis(k))
        .collect::<Result<Vec<_>>>()?;
    let mut values = vec![Vec::new(); horizon + 1];
    values[horizon] = bases[horizon]
        .iter()
        .map(|psi| psi.expectation(model.terminal()))
        .collect();
    let mut table = vec![Vec::new(); horizon];
    let mut expanded = 0u64;
    for k in (0..horizon).rev() {
        let kernels: Vec<DMatrix<f64>> = model
            .stage(k)
            .iter()
            .map(|sc| transition_matrix(&bases[k], &bases[k + 1], &sc.propagator))
            .collect::<Result<_>>()?;
        let next = &values[k + 1];
        let mut qk = Vec::with_capacity(bases[k].len());
        let mut uk = Vec::with_capacity(bases[k].len());
        for (v, psi) in bases[k].iter().enumerate() {
            expanded += 1;
            let mut best: Option<(usize, f64)> = None;
            for (j, sc) in model.stage(k).iter().enumerate() {
                let future: f64 = (0..next.len()).map(|w| kernels[j][(v, w)] * next[w]).sum();
                let q = psi.expectation(&sc.cost) + future;
                if best.is_none_or(|b| q < b.1) {
                    best = Some((j, q));
                }
            }
            let (j, q) = best.ok_or_else(|| Error::Config(format!("stage {k} has an empty control grid")))?;
            qk.push(q);
            uk.push(j);
        }
        values[k] = qk;
        table[k] = uk;
    }
    let value = scenario
        .initial
        .as_ket()
        .and_then(|psi| aligned_index(&bases[0], psi))
        .map(|v| values[0][v]);
    Ok(SolveReport {
        method: "bellman_complete".into(),
        value,
        strategy: Strategy::Markov(MarkovStrategy { controls: table }),
        values: Some(values),
        nodes_expanded: expanded,
        pruned_mass: 0.0,
        strategies_enumerated: None,
    })
}

/// Source of per-node decisions for the forward evaluator.
trait Policy {
    fn choose(&self, k: usize, record: &[usize]) -> Result<usize>;
}

struct StrategyPolicy<'a> {
    strategy: &'a Strategy,
    start: Option<usize>,
}

impl Policy for StrategyPolicy<'_> {
    fn choose(&self, k: usize, record: &[usize]) -> Result<usize> {
        self.strategy.decide(k, record, self.start)
    }
}

struct Forward {
    expected: f64,
    pruned: f64,
    nodes: u64,
}

/// Expected accumulated cost: sum over reachable records of path probability
/// times (stage costs along the path + terminal cost).
fn forward_value(model: &Model, policy: &dyn Policy, psi0: &Ket) -> Result<Forward> {
    let mut out = Forward {
        expected: 0.0,
        pruned: 0.0,
        nodes: 0,
    };
    let mut record = Vec::with_capacity(model.horizon());
    walk(model, policy, psi0, 1.0, 0.0, &mut record, &mut out)?;
    Ok(out)
}

fn walk(
    model: &Model,
    policy: &dyn Policy,
    psi: &Ket,
    path_prob: f64,
    path_cost: f64,
    record: &mut Vec<usize>,
    out: &mut Forward,
) -> Result<()> {
    out.nodes += 1;
    let k = record.len();
    if k == model.horizon() {
        out.expected += path_prob * (path_cost + psi.expectation(model.terminal()));
        return Ok(());
    }
    let j = policy.choose(k, record)?;
    let sc = model.stage(k).get(j).ok_or_else(|| {
        Error::Strategy(format!("stage {k} has no grid control with index {j}"))
    })?;
    let cost = path_cost + psi.expectation(&sc.cost);
    let floor = model.tolerances().zero_probability;
    for v in 0..sc.instrument.len() {
        let (phi, p) = sc.instrument.branch(psi, v);
        if p <= floor {
            out.pruned += path_prob * p;
            continue;
        }
        record.push(v);
        walk(model, policy, &Ket::normalized(phi)?, path_prob * p, cost, record, out)?;
        record.pop();
    }
    Ok(())
}

/// Expected total cost of a fixed strategy from `psi0`.
pub fn evaluate_strategy(model: &Model, strategy: &Strategy, psi0: &Ket) -> Result<f64> {
    check_state(model, psi0)?;
    let policy = StrategyPolicy {
        strategy,
        start: start_coordinate(model, psi0),
    };
    Ok(forward_value(model, &policy, psi0)?.expected)
}

/// Number of deterministic non-anticipating strategies from `psi0`, or
/// `None` once the count exceeds `limit`.
pub fn count_strategies(model: &Model, psi0: &Ket, limit: u64) -> Result<Option<u64>> {
    check_state(model, psi0)?;
    count_from(model, 0, psi0, limit)
}

fn count_from(model: &Model, k: usize, psi: &Ket, limit: u64) -> Result<Option<u64>> {
    if k == model.horizon() {
        return Ok(Some(1));
    }
    let floor = model.tolerances().zero_probability;
    let mut total = 0u64;
    for sc in model.stage(k) {
        let mut product = 1u64;
        for v in 0..sc.instrument.len() {
            let (phi, p) = sc.instrument.branch(psi, v);
            if p <= floor {
                continue;
            }
            match count_from(model, k + 1, &Ket::normalized(phi)?, limit)? {
                Some(c) => product = product.saturating_mul(c),
                None => return Ok(None),
            }
            if product > limit {
                return Ok(None);
            }
        }
        total = total.saturating_add(product);
        if total > limit {
            return Ok(None);
        }
    }
    Ok(Some(total))
}

/// Mutable odometer over strategies: each node holds its current choice and
/// the subtrees reachable under it.
struct Choice {
    psi: Ket,
    choice: usize,
    children: Vec<Option<Choice>>,
}

impl Choice {
    fn first(model: &Model, k: usize, psi: Ket) -> Result<Option<Self>> {
        if k == model.horizon() {
            return Ok(None);
        }
        let mut node = Self {
            psi,
            choice: 0,
            children: Vec::new(),
        };
        node.rebuild(model, k)?;
        Ok(Some(node))
    }

    fn rebuild(&mut self, model: &Model, k: usize) -> Result<()> {
        let floor = model.tolerances().zero_probability;
        let ins = &model.stage(k)[self.choice].instrument;
        self.children = (0..ins.len())
            .map(|v| {
                let (phi, p) = ins.branch(&self.psi, v);
                if p <= floor {
                    Ok(None)
                } else {
                    Choice::first(model, k + 1, Ket::normalized(phi)?)
                }
            })
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// Step to the next strategy; on wrap-around reset to the first and return false.
    fn advance(&mut self, model: &Model, k: usize) -> Result<bool> {
        for child in self.children.iter_mut().rev().flatten() {
            if child.advance(model, k + 1)? {
                return Ok(true);
            }
        }
        self.choice += 1;
        let wrapped = self.choice == model.stage(k).len();
        if wrapped {
            self.choice = 0;
        }
        self.rebuild(model, k)?;
        Ok(!wrapped)
    }

    fn find(&self, record: &[usize]) -> Option<&Choice> {
        match record.split_first() {
            None => Some(self),
            Some((&v, rest)) => self.children.get(v)?.as_ref()?.find(rest),
        }
    }

    fn to_tree(&self) -> TreeNode {
        TreeNode {
            control: Some(self.choice),
            value: None,
            children: self
                .children
                .iter()
                .map(|c| c.as_ref().map(Choice::to_tree))
                .collect(),
        }
    }
}

struct ChoicePolicy<'a>(&'a Choice);

impl Policy for ChoicePolicy<'_> {
    fn choose(&self, _k: usize, record: &[usize]) -> Result<usize> {
        self.0
            .find(record)
            .map(|c| c.choice)
            .ok_or_else(|| Error::Strategy(format!("oracle tree lacks node {record:?}")))
    }
}

/// Exhaustive minimum over deterministic non-anticipating strategies, each
/// scored by [`evaluate_strategy`]'s forward pass.
pub fn enumerate_strategies_oracle(model: &Model, psi0: &Ket) -> Result<SolveReport> {
    enumerate_strategies_oracle_with_limit(model, psi0, ORACLE_LIMIT)
}

pub fn enumerate_strategies_oracle_with_limit(model: &Model, psi0: &Ket, limit: u64) -> Result<SolveReport> {
    let count = count_strategies(model, psi0, limit)?.ok_or(Error::OracleTooLarge {
        count: limit.saturating_add(1),
        limit,
    })?;
    let Some(mut current) = Choice::first(model, 0, psi0.clone())? else {
        let f = forward_value(model, &ChoicePolicyNone, psi0)?;
        return Ok(SolveReport {
            method: "oracle".into(),
            value: Some(f.expected),
            strategy: Strategy::Tree(TreeStrategy {
                root: TreeNode::default(),
            }),
            values: None,
            nodes_expanded: f.nodes,
            pruned_mass: f.pruned,
            strategies_enumerated: Some(1),
        });
    };
    let mut best: Option<(f64, TreeNode, f64)> = None;
    let mut enumerated = 0u64;
    let mut nodes = 0u64;
    loop {
        let f = forward_value(model, &ChoicePolicy(&current), psi0)?;
        enumerated += 1;
        nodes += f.nodes;
        if best.as_ref().is_none_or(|b| f.expected < b.0) {
            best = Some((f.expected, current.to_tree(), f.pruned));
        }
        if !current.advance(model, 0)? {
            break;
        }
    }
    debug_assert_eq!(enumerated, count);
    let (value, root, pruned) = best.expect("at least one strategy");
    Ok(SolveReport {
        method: "oracle".into(),
        value: Some(value),
        strategy: Strategy::Tree(TreeStrategy { root }),
        values: None,
        nodes_expanded: nodes,
        pruned_mass: pruned,
        strategies_enumerated: Some(enumerated),
    })
}

struct ChoicePolicyNone;

impl Policy for ChoicePolicyNone {
    fn choose(&self, k: usize, _record: &[usize]) -> Result<usize> {
        Err(Error::Strategy(format!("no decision expected at stage {k}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{
        ControlVector, ControlledHamiltonian, CostSchedule, CostSpec, InitialState, Scenario, StageSpec,
    };
    use crate::instrument::apriori_channel;
    use crate::qcore::{
        expect, ket_to_density, pauli, propagator_step, ComplexMatrix, HermitianOperator, Projector,
        Tolerances, C64,
    };
    use std::f64::consts::PI;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn u(x: f64) -> ControlVector {
        ControlVector::new(vec![x]).unwrap()
    }

    fn q1() -> HermitianOperator {
        HermitianOperator::new(ComplexMatrix::from_real(2, 2, &[0.0, 0.0, 0.0, 1.0]).unwrap(), &tol()).unwrap()
    }

    fn z_stage(grid: Vec<ControlVector>) -> StageSpec {
        let ps: Vec<Projector> = (0..2)
            .map(|k| Projector::onto(&Ket::basis(2, k).unwrap(), k.to_string()))
            .collect();
        StageSpec::new(1.0, ps, grid, 16, &tol()).unwrap()
    }

    fn rabi_model(k: usize, grid: &[f64], c: f64, psi0: Ket) -> Model {
        let t = tol();
        let grid: Vec<ControlVector> = grid.iter().map(|&x| u(x)).collect();
        let sc = Scenario::new(
            ControlledHamiltonian::new(
                HermitianOperator::zeros(2),
                vec![HermitianOperator::new(pauli::x(), &t).unwrap()],
            )
            .unwrap(),
            vec![z_stage(grid); k],
            CostSchedule::Uniform(CostSpec::quadratic(2, c, 1).unwrap()),
            q1(),
            InitialState::Ket(psi0),
            t,
        )
        .unwrap();
        Model::compile(sc).unwrap()
    }

    fn zero() -> Ket {
        Ket::basis(2, 0).unwrap()
    }

    #[test]
    fn terminal_only() {
        let psi = Ket::new(vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)], &tol()).unwrap();
        let m = rabi_model(0, &[0.0], 0.1, psi.clone());
        let r = bellman_ket(&m, &psi).unwrap();
        assert!((r.value.unwrap() - 0.64).abs() < 1e-15);
        assert_eq!(r.strategy, Strategy::Tree(TreeStrategy { root: TreeNode { control: None, value: Some(r.value.unwrap()), children: vec![] } }));
        let o = enumerate_strategies_oracle(&m, &psi).unwrap();
        assert!((o.value.unwrap() - 0.64).abs() < 1e-15);
        assert_eq!(o.strategies_enumerated, Some(1));
        let s = Strategy::Tree(TreeStrategy { root: TreeNode::default() });
        assert!((evaluate_strategy(&m, &s, &psi).unwrap() - 0.64).abs() < 1e-15);
    }

    #[test]
    fn closed_loop_unitary_case() {
        let t = tol();
        let st = StageSpec::unobserved(2, 1.0, vec![u(0.4)], 16, &t).unwrap();
        let sc = Scenario::new(
            ControlledHamiltonian::new(HermitianOperator::zeros(2), vec![HermitianOperator::new(pauli::x(), &t).unwrap()]).unwrap(),
            vec![st],
            CostSchedule::Uniform(CostSpec::zero(2)),
            q1(),
            InitialState::Ket(zero()),
            t,
        )
        .unwrap();
        let m = Model::compile(sc).unwrap();
        let r = bellman_ket(&m, &zero()).unwrap();
        let tt = propagator_step(&HermitianOperator::new(pauli::x().scale(C64::new(0.4, 0.0)), &t).unwrap(), 1.0).unwrap();
        let moved = Ket::normalized(tt.as_dmatrix() * zero().amplitudes()).unwrap();
        assert!((r.value.unwrap() - moved.expectation(&q1())).abs() < 1e-14);
        assert!((r.value.unwrap() - 0.4f64.sin().powi(2)).abs() < 1e-14);
    }

    #[test]
    fn dp_matches_oracle_two_stages() {
        let m = rabi_model(2, &[0.0, PI / 4.0], 0.1, zero());
        let dp = bellman_ket(&m, &zero()).unwrap();
        let or = enumerate_strategies_oracle(&m, &zero()).unwrap();
        assert!((dp.value.unwrap() - or.value.unwrap()).abs() < 1e-9);
        assert!((evaluate_strategy(&m, &dp.strategy, &zero()).unwrap() - dp.value.unwrap()).abs() < 1e-10);
        assert!((evaluate_strategy(&m, &or.strategy, &zero()).unwrap() - or.value.unwrap()).abs() < 1e-12);
        // Doing nothing keeps |0>, so the optimum is zero cost.
        assert!(dp.value.unwrap().abs() < 1e-15);
    }

    #[test]
    fn oracle_counts_match_enumeration() {
        // Real amplitudes stay nonzero under every x rotation, so no branch is pruned.
        let psi = Ket::new(vec![C64::new(0.6, 0.0), C64::new(0.8, 0.0)], &tol()).unwrap();
        let m = rabi_model(2, &[0.0, PI / 8.0, PI / 4.0], 0.1, psi.clone());
        // 3 choices at the root, each with two reachable outcomes of 3 choices: 3 * 9.
        assert_eq!(count_strategies(&m, &psi, ORACLE_LIMIT).unwrap(), Some(27));
        let or = enumerate_strategies_oracle(&m, &psi).unwrap();
        assert_eq!(or.strategies_enumerated, Some(27));
        let dp = bellman_ket(&m, &psi).unwrap();
        assert!((dp.value.unwrap() - or.value.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn oracle_guard() {
        let m = rabi_model(3, &[0.0, PI / 8.0, PI / 4.0], 0.1, zero());
        assert!(matches!(
            enumerate_strategies_oracle_with_limit(&m, &zero(), 10),
            Err(Error::OracleTooLarge { limit: 10, .. })
        ));
    }

    #[test]
    fn complete_absorbing_chain() {
        let m = rabi_model(3, &[0.0], 0.0, zero());
        let r = bellman_complete(&m).unwrap();
        for q in r.values.as_ref().unwrap() {
            assert_eq!(q, &vec![0.0, 1.0]);
        }
        assert_eq!(r.value, Some(0.0));
    }

    #[test]
    fn complete_half_kernel() {
        let m = rabi_model(1, &[PI / 4.0], 0.0, zero());
        let r = bellman_complete(&m).unwrap();
        let q0 = &r.values.as_ref().unwrap()[0];
        assert!((q0[0] - 0.5).abs() < 1e-14 && (q0[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn complete_matches_ket_and_oracle() {
        let grid = [0.0, PI / 8.0, PI / 4.0];
        for start in 0..2 {
            let psi = Ket::basis(2, start).unwrap();
            let m = rabi_model(3, &grid, 0.1, psi.clone());
            let c = bellman_complete(&m).unwrap();
            let k = bellman_ket(&m, &psi).unwrap();
            let o = enumerate_strategies_oracle(&m, &psi).unwrap();
            assert!((c.value.unwrap() - k.value.unwrap()).abs() < 1e-9);
            assert!((o.value.unwrap() - k.value.unwrap()).abs() < 1e-9);
            let markov = evaluate_strategy(&m, &c.strategy, &psi).unwrap();
            assert!((markov - k.value.unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn complete_rejects_degenerate_measurement() {
        let t = tol();
        let st = StageSpec::unobserved(2, 1.0, vec![u(0.0)], 16, &t).unwrap();
        let sc = Scenario::new(
            ControlledHamiltonian::new(HermitianOperator::zeros(2), vec![HermitianOperator::new(pauli::x(), &t).unwrap()]).unwrap(),
            vec![st],
            CostSchedule::Uniform(CostSpec::zero(2)),
            q1(),
            InitialState::Ket(zero()),
            t,
        )
        .unwrap();
        let m = Model::compile(sc).unwrap();
        assert!(matches!(bellman_complete(&m), Err(Error::NotCompleteMeasurement(_))));
    }

    #[test]
    fn evaluate_constant_zero_control_by_channels() {
        let psi = Ket::new(vec![C64::new(0.6, 0.0), C64::new(0.8, 0.0)], &tol()).unwrap();
        let m = rabi_model(2, &[0.0, 0.5], 0.0, psi.clone());
        let zero_tree = TreeNode {
            control: Some(0),
            value: None,
            children: vec![
                Some(TreeNode { control: Some(0), value: None, children: vec![] }),
                Some(TreeNode { control: Some(0), value: None, children: vec![] }),
            ],
        };
        let s = Strategy::Tree(TreeStrategy { root: zero_tree });
        let got = evaluate_strategy(&m, &s, &psi).unwrap();
        let mut rho = ket_to_density(&psi, &tol()).unwrap();
        for k in 0..2 {
            rho = apriori_channel(&m.stage(k)[0].instrument, &rho).unwrap();
        }
        let want = expect(&rho, &q1(), &tol()).unwrap();
        assert!((got - want).abs() < 1e-14);
        assert!((got - 0.64).abs() < 1e-14);
    }

    #[test]
    fn missing_assignment_is_a_strategy_error() {
        let psi = Ket::new(vec![C64::new(0.6, 0.0), C64::new(0.8, 0.0)], &tol()).unwrap();
        let m = rabi_model(2, &[0.0], 0.0, psi.clone());
        let s = Strategy::Tree(TreeStrategy {
            root: TreeNode { control: Some(0), value: None, children: vec![None, None] },
        });
        assert!(matches!(evaluate_strategy(&m, &s, &psi), Err(Error::Strategy(_))));
        let markov = Strategy::Markov(MarkovStrategy { controls: vec![vec![0, 0]; 2] });
        assert!(matches!(evaluate_strategy(&m, &markov, &psi), Err(Error::Strategy(_))));
    }

    #[test]
    fn nested_grids_are_monotone() {
        let psi = Ket::new(vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)], &tol()).unwrap();
        let mut last = f64::INFINITY;
        for grid in [&[0.0][..], &[0.0, PI / 8.0], &[0.0, PI / 8.0, PI / 4.0]] {
            let m = rabi_model(3, grid, 0.1, psi.clone());
            let v = bellman_ket(&m, &psi).unwrap().value.unwrap();
            assert!(v <= last + 1e-15);
            assert!(v >= 0.0);
            last = v;
        }
    }

    #[test]
    fn strategy_json_round_trip() {
        let m = rabi_model(2, &[0.0, PI / 4.0], 0.1, zero());
        let r = bellman_ket(&m, &zero()).unwrap();
        let s = serde_json::to_string(&r).unwrap();
        let back: SolveReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
        let c = bellman_complete(&m).unwrap();
        let v = serde_json::to_value(&c.strategy).unwrap();
        assert_eq!(v["form"], "markov");
    }
}
