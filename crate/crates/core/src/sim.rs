//! Monte Carlo closed-loop simulation.
//!
//! Trajectory `i` of a run draws from ChaCha8 seeded with the run seed on
//! stream `i`, so results do not depend on how trajectories are scheduled
//! across threads. Sums are taken in trajectory order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{start_coordinate, Strategy};
use crate::dynamics::Model;
use crate::error::{Error, Result};
use crate::filter::MeasurementRecord;
use crate::qcore::Ket;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub trajectories: u64,
    pub seed: u64,
    /// Keep `(record, cost)` for every trajectory.
    #[serde(default)]
    pub keep_trajectories: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub record: MeasurementRecord,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageFrequencies {
    pub stage: usize,
    pub outcomes: Vec<String>,
    pub frequencies: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub trajectories: u64,
    pub seed: u64,
    pub mean: f64,
    pub stderr: f64,
    pub frequencies: Vec<StageFrequencies>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<TrajectorySample>>,
}

/// Runs one closed-loop trajectory and returns its record and accrued cost.
pub fn sample_trajectory<R: Rng + ?Sized>(
    model: &Model,
    strategy: &Strategy,
    psi0: &Ket,
    rng: &mut R,
) -> Result<TrajectorySample> {
    if psi0.dim() != model.dim() {
        return Err(Error::Dimension(format!(
            "initial ket has dimension {}, scenario has dimension {}",
            psi0.dim(),
            model.dim()
        )));
    }
    let start = start_coordinate(model, psi0);
    sample_from(model, strategy, psi0, start, rng)
}

fn sample_from<R: Rng + ?Sized>(
    model: &Model,
    strategy: &Strategy,
    psi0: &Ket,
    start: Option<usize>,
    rng: &mut R,
) -> Result<TrajectorySample> {
    let floor = model.tolerances().zero_probability;
    let mut psi = psi0.clone();
    let mut record = Vec::with_capacity(model.horizon());
    let mut cost = 0.0;
    for k in 0..model.horizon() {
        let j = strategy.decide(k, &record, start)?;
        let sc = model.stage(k).get(j).ok_or_else(|| {
            Error::Strategy(format!("stage {k} has no grid control with index {j}"))
        })?;
        cost += psi.expectation(&sc.cost);
        let branches: Vec<_> = (0..sc.instrument.len()).map(|v| sc.instrument.branch(&psi, v)).collect();
        let x: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = None;
        for (v, (_, p)) in branches.iter().enumerate() {
            if *p <= floor {
                continue;
            }
            acc += p;
            pick = Some(v);
            if x < acc {
                break;
            }
        }
        // Rounding can leave x just above the cumulative sum; `pick` is then
        // the last outcome with nonzero probability.
        let v = pick.ok_or_else(|| {
            Error::ZeroProbability(format!("every outcome of stage {k} has zero probability"))
        })?;
        psi = Ket::normalized(branches[v].0.clone())?;
        record.push(v);
    }
    cost += psi.expectation(model.terminal());
    Ok(TrajectorySample {
        record: MeasurementRecord(record),
        cost,
    })
}

/// Monte Carlo estimate of the expected cost of `strategy` from `psi0`.
pub fn estimate_risk(model: &Model, strategy: &Strategy, cfg: &SimConfig, psi0: &Ket) -> Result<SimResult> {
    if cfg.trajectories == 0 {
        return Err(Error::Config("trajectory count must be at least 1".into()));
    }
    if psi0.dim() != model.dim() {
        return Err(Error::Dimension(format!(
            "initial ket has dimension {}, scenario has dimension {}",
            psi0.dim(),
            model.dim()
        )));
    }
    let start = start_coordinate(model, psi0);
    let samples: Vec<TrajectorySample> = (0..cfg.trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i);
            sample_from(model, strategy, psi0, start, &mut rng)
        })
        .collect::<Result<_>>()?;

    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.cost).sum::<f64>() / n;
    let stderr = if samples.len() > 1 {
        let var = samples.iter().map(|s| (s.cost - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };

    let frequencies = (0..model.horizon())
        .map(|k| {
            let mut counts = vec![0u64; model.outcomes(k)];
            for s in &samples {
                counts[s.record.0[k]] += 1;
            }
            StageFrequencies {
                stage: k,
                outcomes: model.scenario().stages[k].outcome_labels().iter().map(|l| l.to_string()).collect(),
                frequencies: counts.iter().map(|&c| c as f64 / n).collect(),
            }
        })
        .collect();

    Ok(SimResult {
        trajectories: cfg.trajectories,
        seed: cfg.seed,
        mean,
        stderr,
        frequencies,
        samples: cfg.keep_trajectories.then_some(samples),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{bellman_ket, TreeNode, TreeStrategy};
    use crate::dynamics::{ControlVector, ControlledHamiltonian, CostSchedule, CostSpec, InitialState, Scenario, StageSpec};
    use crate::qcore::{pauli, ComplexMatrix, HermitianOperator, Projector, Tolerances, C64};
    use std::f64::consts::PI;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn model(h1: ComplexMatrix, k: usize, grid: &[f64], psi0: Ket) -> Model {
        let t = tol();
        let ps: Vec<Projector> = (0..2)
            .map(|k| Projector::onto(&Ket::basis(2, k).unwrap(), k.to_string()))
            .collect();
        let grid: Vec<ControlVector> = grid.iter().map(|&x| ControlVector::new(vec![x]).unwrap()).collect();
        let st = StageSpec::new(1.0, ps, grid, 16, &t).unwrap();
        let q = HermitianOperator::new(ComplexMatrix::from_real(2, 2, &[0.0, 0.0, 0.0, 1.0]).unwrap(), &t).unwrap();
        let sc = Scenario::new(
            ControlledHamiltonian::new(HermitianOperator::zeros(2), vec![HermitianOperator::new(h1, &t).unwrap()]).unwrap(),
            vec![st; k],
            CostSchedule::Uniform(CostSpec::quadratic(2, 0.1, 1).unwrap()),
            q,
            InitialState::Ket(psi0),
            t,
        )
        .unwrap();
        Model::compile(sc).unwrap()
    }

    fn constant(k: usize) -> Strategy {
        let mut node = TreeNode::default();
        for _ in 0..k {
            node = TreeNode {
                control: Some(0),
                value: None,
                children: vec![Some(node.clone()), Some(node)],
            };
        }
        Strategy::Tree(TreeStrategy { root: node })
    }

    #[test]
    fn zero_hamiltonian_is_deterministic() {
        let psi = Ket::basis(2, 0).unwrap();
        let m = model(ComplexMatrix::zeros(2, 2), 3, &[0.0], psi.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_trajectory(&m, &constant(3), &psi, &mut rng).unwrap();
        assert_eq!(s.record.0, vec![0, 0, 0]);
        assert_eq!(s.cost, 0.0);
        let r = estimate_risk(&m, &constant(3), &SimConfig { trajectories: 500, seed: 3, keep_trajectories: false }, &psi).unwrap();
        assert!(r.stderr <= 1e-12);
        assert_eq!(r.mean, 0.0);
    }

    #[test]
    fn single_trajectory_has_zero_stderr() {
        let psi = Ket::new(vec![C64::new(0.6, 0.0), C64::new(0.8, 0.0)], &tol()).unwrap();
        let m = model(pauli::x(), 2, &[0.3], psi.clone());
        let cfg = SimConfig { trajectories: 1, seed: 11, keep_trajectories: true };
        let r = estimate_risk(&m, &constant(2), &cfg, &psi).unwrap();
        assert_eq!(r.stderr, 0.0);
        assert_eq!(r.mean, r.samples.unwrap()[0].cost);
    }

    #[test]
    fn balanced_kernel_frequencies() {
        // A quarter-period x rotation sends either z state to equal weights.
        let psi = Ket::basis(2, 0).unwrap();
        let m = model(pauli::x(), 2, &[PI / 4.0], psi.clone());
        let n = 20_000u64;
        let r = estimate_risk(&m, &constant(2), &SimConfig { trajectories: n, seed: 5, keep_trajectories: false }, &psi).unwrap();
        for f in &r.frequencies {
            for x in &f.frequencies {
                assert!((x - 0.5).abs() <= 4.0 / (n as f64).sqrt());
            }
        }
    }

    #[test]
    fn reproducible_and_schedule_independent() {
        let psi = Ket::basis(2, 0).unwrap();
        let m = model(pauli::x(), 3, &[0.0, PI / 8.0, PI / 4.0], psi.clone());
        let s = bellman_ket(&m, &psi).unwrap().strategy;
        let cfg = SimConfig { trajectories: 2000, seed: 7, keep_trajectories: true };
        let a = estimate_risk(&m, &s, &cfg, &psi).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| estimate_risk(&m, &s, &cfg, &psi)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn optimal_strategy_mean_within_three_stderr() {
        let psi = Ket::new(vec![C64::new(0.6, 0.0), C64::new(0.8, 0.0)], &tol()).unwrap();
        let m = model(pauli::x(), 2, &[0.0, PI / 8.0, PI / 4.0], psi.clone());
        let dp = bellman_ket(&m, &psi).unwrap();
        let r = estimate_risk(&m, &dp.strategy, &SimConfig { trajectories: 20_000, seed: 9, keep_trajectories: false }, &psi).unwrap();
        assert!(r.stderr > 0.0);
        assert!((r.mean - dp.value.unwrap()).abs() <= 3.0 * r.stderr);
    }

    #[test]
    fn zero_trajectories_rejected() {
        let psi = Ket::basis(2, 0).unwrap();
        let m = model(pauli::x(), 1, &[0.0], psi.clone());
        let cfg = SimConfig { trajectories: 0, seed: 0, keep_trajectories: false };
        assert!(matches!(estimate_risk(&m, &constant(1), &cfg, &psi), Err(Error::Config(_))));
    }
}
