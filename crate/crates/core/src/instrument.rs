//! Kraus-form measurement instruments over finite outcome sets.
//!
//! An instrument is a family `{F_v}` with weights `mu_v` (the reference
//! measure, counting by default) such that `sum_v mu_v F_v^dag F_v = I`.
//! Outcome `v` occurs with probability `mu_v tr(F_v rho F_v^dag)` and leaves the
//! system in the normalized a posteriori state `F_v rho F_v^dag / tr(...)`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::{
    check_complete_positivity, max_abs_diff, ComplexMatrix, CpReport, DensityOperator, Ket,
    Projector, Tolerances, C64,
};

/// Outcome label; composed instruments carry the chronological tuple of parts.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OutcomeLabel(Vec<String>);

impl OutcomeLabel {
    pub fn new(parts: Vec<String>) -> Self {
        Self(parts)
    }

    pub fn single(s: impl Into<String>) -> Self {
        Self(vec![s.into()])
    }

    pub fn parts(&self) -> &[String] {
        &self.0
    }

    /// `(self, later)` flattened left to right.
    pub fn then(&self, later: &OutcomeLabel) -> Self {
        Self(self.0.iter().chain(later.0.iter()).cloned().collect())
    }
}

impl fmt::Display for OutcomeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(","))
    }
}

impl From<&str> for OutcomeLabel {
    fn from(s: &str) -> Self {
        Self::single(s)
    }
}

impl Serialize for OutcomeLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.len() == 1 {
            s.serialize_str(&self.0[0])
        } else {
            self.0.serialize(s)
        }
    }
}

impl<'de> Deserialize<'de> for OutcomeLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            One(String),
            Many(Vec<String>),
        }
        Ok(match Repr::deserialize(d)? {
            Repr::One(s) => Self::single(s),
            Repr::Many(v) => Self(v),
        })
    }
}

/// Outcome-indexed Kraus family with reference weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<InstrumentEntry>", into = "Vec<InstrumentEntry>")]
pub struct Instrument {
    outcomes: Vec<OutcomeLabel>,
    kraus: Vec<ComplexMatrix>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstrumentEntry {
    outcome: OutcomeLabel,
    #[serde(default = "unit_weight")]
    weight: f64,
    kraus: ComplexMatrix,
}

fn unit_weight() -> f64 {
    1.0
}

impl TryFrom<Vec<InstrumentEntry>> for Instrument {
    type Error = Error;

    fn try_from(entries: Vec<InstrumentEntry>) -> Result<Self> {
        let mut outcomes = Vec::with_capacity(entries.len());
        let mut kraus = Vec::with_capacity(entries.len());
        let mut weights = Vec::with_capacity(entries.len());
        for e in entries {
            outcomes.push(e.outcome);
            kraus.push(e.kraus);
            weights.push(e.weight);
        }
        Instrument::new(outcomes, kraus, weights)
    }
}

impl From<Instrument> for Vec<InstrumentEntry> {
    fn from(ins: Instrument) -> Self {
        ins.outcomes
            .into_iter()
            .zip(ins.kraus)
            .zip(ins.weights)
            .map(|((outcome, kraus), weight)| InstrumentEntry {
                outcome,
                weight,
                kraus,
            })
            .collect()
    }
}

impl Instrument {
    /// Checks shapes, label uniqueness and weight positivity. Normalization is
    /// left to [`validate_instrument`].
    pub fn new(
        outcomes: Vec<OutcomeLabel>,
        kraus: Vec<ComplexMatrix>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if kraus.is_empty() {
            return Err(Error::Dimension("instrument needs at least one outcome".into()));
        }
        if outcomes.len() != kraus.len() || weights.len() != kraus.len() {
            return Err(Error::Dimension(format!(
                "{} outcomes, {} Kraus operators and {} weights",
                outcomes.len(),
                kraus.len(),
                weights.len()
            )));
        }
        let (r, c) = (kraus[0].rows(), kraus[0].cols());
        if let Some(bad) = kraus.iter().find(|f| f.rows() != r || f.cols() != c) {
            return Err(Error::Dimension(format!(
                "Kraus operators must share shape {r}x{c}, found {}x{}",
                bad.rows(),
                bad.cols()
            )));
        }
        for (i, a) in outcomes.iter().enumerate() {
            if outcomes[..i].contains(a) {
                return Err(Error::Config(format!("duplicate outcome label {a}")));
            }
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::Config(format!("outcome weights must be positive, got {w}")));
        }
        Ok(Self {
            outcomes,
            kraus,
            weights,
        })
    }

    /// Counting-measure instrument.
    pub fn counting(outcomes: Vec<OutcomeLabel>, kraus: Vec<ComplexMatrix>) -> Result<Self> {
        let n = kraus.len();
        Self::new(outcomes, kraus, vec![1.0; n])
    }

    /// Single-outcome identity instrument (no observation).
    pub fn identity(d: usize) -> Self {
        Self {
            outcomes: vec![OutcomeLabel::single("none")],
            kraus: vec![ComplexMatrix::identity(d)],
            weights: vec![1.0],
        }
    }

    /// Projective (von Neumann) instrument with Kraus operators `E_v`.
    pub fn projective(projectors: &[Projector]) -> Result<Self> {
        Self::counting(
            projectors.iter().map(|p| OutcomeLabel::single(&p.label)).collect(),
            projectors.iter().map(|p| p.matrix.clone()).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.kraus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kraus.is_empty()
    }

    pub fn d_in(&self) -> usize {
        self.kraus[0].cols()
    }

    pub fn d_out(&self) -> usize {
        self.kraus[0].rows()
    }

    pub fn outcomes(&self) -> &[OutcomeLabel] {
        &self.outcomes
    }

    pub fn kraus(&self) -> &[ComplexMatrix] {
        &self.kraus
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn index_of(&self, label: &OutcomeLabel) -> Option<usize> {
        self.outcomes.iter().position(|l| l == label)
    }

    fn check_outcome(&self, v: usize) -> Result<()> {
        if v >= self.len() {
            return Err(Error::Dimension(format!(
                "outcome index {v} out of range for {} outcomes",
                self.len()
            )));
        }
        Ok(())
    }

    fn check_input_dim(&self, d: usize) -> Result<()> {
        if d != self.d_in() {
            return Err(Error::Dimension(format!(
                "instrument acts on dimension {}, state has dimension {d}",
                self.d_in()
            )));
        }
        Ok(())
    }

    /// Unnormalized branch `F_v psi` and its weighted probability `mu_v |F_v psi|^2`.
    pub fn branch(&self, psi: &Ket, v: usize) -> (DVector<C64>, f64) {
        let phi = self.kraus[v].as_dmatrix() * psi.amplitudes();
        let p = self.weights[v] * phi.norm_squared();
        (phi, p)
    }

    /// `mu_v F_v rho F_v^dag` (unnormalized).
    fn density_branch(&self, rho: &DensityOperator, v: usize) -> DMatrix<C64> {
        let f = self.kraus[v].as_dmatrix();
        f * rho.matrix().as_dmatrix() * f.adjoint() * C64::new(self.weights[v], 0.0)
    }
}

/// Report produced by [`validate_instrument`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstrumentReport {
    pub normalization_residual: f64,
    pub normalized: bool,
    pub complete_positivity: CpReport,
    pub passed: bool,
}

/// `max |sum_v mu_v F_v^dag F_v - I|`.
pub fn normalization_residual(ins: &Instrument) -> f64 {
    let d = ins.d_in();
    let mut acc = DMatrix::<C64>::zeros(d, d);
    for (f, &w) in ins.kraus.iter().zip(&ins.weights) {
        let m = f.as_dmatrix();
        acc += m.adjoint() * m * C64::new(w, 0.0);
    }
    max_abs_diff(&acc, &DMatrix::identity(d, d))
}

/// Normalization residual plus a Choi test of the weighted Kraus family.
pub fn validate_instrument(ins: &Instrument, tol: &Tolerances) -> InstrumentReport {
    let normalization_residual = normalization_residual(ins);
    let normalized = normalization_residual <= tol.normalization;
    let weighted: Vec<ComplexMatrix> = ins
        .kraus
        .iter()
        .zip(&ins.weights)
        .map(|(f, w)| f.scale(C64::new(w.sqrt(), 0.0)))
        .collect();
    let complete_positivity =
        check_complete_positivity(&weighted, tol).expect("instrument shapes checked at construction");
    let passed = normalized && complete_positivity.passed;
    InstrumentReport {
        normalization_residual,
        normalized,
        complete_positivity,
        passed,
    }
}

/// `first` followed by `second`: outcomes `(v, v')` with `v` slowest and Kraus
/// operators `F'_{v'} F_v`; weights multiply.
pub fn compose(first: &Instrument, second: &Instrument) -> Result<Instrument> {
    if first.d_out() != second.d_in() {
        return Err(Error::Dimension(format!(
            "first instrument outputs dimension {} but second expects {}",
            first.d_out(),
            second.d_in()
        )));
    }
    let n = first.len() * second.len();
    let mut outcomes = Vec::with_capacity(n);
    let mut kraus = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for (i, (f, w)) in first.kraus.iter().zip(&first.weights).enumerate() {
        for (j, (g, w2)) in second.kraus.iter().zip(&second.weights).enumerate() {
            outcomes.push(first.outcomes[i].then(&second.outcomes[j]));
            kraus.push(g * f);
            weights.push(w * w2);
        }
    }
    Instrument::new(outcomes, kraus, weights)
}

/// Unconditional post-measurement state `sum_v mu_v F_v rho F_v^dag`.
pub fn apriori_channel(ins: &Instrument, rho: &DensityOperator) -> Result<DensityOperator> {
    ins.check_input_dim(rho.dim())?;
    let d = ins.d_out();
    let mut acc = DMatrix::<C64>::zeros(d, d);
    for v in 0..ins.len() {
        acc += ins.density_branch(rho, v);
    }
    Ok(DensityOperator::wrap(ComplexMatrix::wrap(acc)))
}

/// Probabilities of each outcome, in instrument order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutcomeDistribution {
    pub outcomes: Vec<OutcomeLabel>,
    pub probabilities: Vec<f64>,
}

impl OutcomeDistribution {
    pub fn get(&self, label: &OutcomeLabel) -> Option<f64> {
        self.outcomes
            .iter()
            .position(|l| l == label)
            .map(|i| self.probabilities[i])
    }
}

/// `p_v = mu_v tr(F_v rho F_v^dag)`, checked then clipped to `[0, 1]`.
pub fn outcome_probabilities(
    ins: &Instrument,
    rho: &DensityOperator,
    tol: &Tolerances,
) -> Result<OutcomeDistribution> {
    ins.check_input_dim(rho.dim())?;
    let raw: Vec<f64> = (0..ins.len())
        .map(|v| ins.density_branch(rho, v).trace().re)
        .collect();
    finish_distribution(ins, raw, tol)
}

/// Same as [`outcome_probabilities`] for a vector state.
pub fn outcome_probabilities_ket(
    ins: &Instrument,
    psi: &Ket,
    tol: &Tolerances,
) -> Result<OutcomeDistribution> {
    ins.check_input_dim(psi.dim())?;
    let raw: Vec<f64> = (0..ins.len()).map(|v| ins.branch(psi, v).1).collect();
    finish_distribution(ins, raw, tol)
}

fn finish_distribution(
    ins: &Instrument,
    raw: Vec<f64>,
    tol: &Tolerances,
) -> Result<OutcomeDistribution> {
    if let Some((v, p)) = raw.iter().enumerate().find(|(_, p)| **p < -tol.psd) {
        return Err(Error::Numerics(format!(
            "outcome {} has negative probability {p:.3e}",
            ins.outcomes[v]
        )));
    }
    let total: f64 = raw.iter().sum();
    if (total - 1.0).abs() > tol.normalization {
        return Err(Error::Numerics(format!(
            "outcome probabilities sum to {total}, instrument is not normalized"
        )));
    }
    Ok(OutcomeDistribution {
        outcomes: ins.outcomes.clone(),
        probabilities: raw.into_iter().map(|p| p.clamp(0.0, 1.0)).collect(),
    })
}

/// `F_v rho F_v^dag / tr(F_v rho F_v^dag)`.
pub fn posterior_density(
    ins: &Instrument,
    rho: &DensityOperator,
    v: usize,
    tol: &Tolerances,
) -> Result<DensityOperator> {
    ins.check_input_dim(rho.dim())?;
    ins.check_outcome(v)?;
    let b = ins.density_branch(rho, v);
    let p = b.trace().re;
    if p <= tol.zero_probability {
        return Err(Error::ZeroProbability(format!(
            "outcome {} has probability {p:.3e}",
            ins.outcomes[v]
        )));
    }
    let normalized = (&b + b.adjoint()) * C64::new(0.5 / p, 0.0);
    Ok(DensityOperator::wrap(ComplexMatrix::wrap(normalized)))
}

/// `F_v psi / |F_v psi|`; the global phase is whatever the formula produces.
pub fn posterior_ket(ins: &Instrument, psi: &Ket, v: usize, tol: &Tolerances) -> Result<Ket> {
    ins.check_input_dim(psi.dim())?;
    ins.check_outcome(v)?;
    let (phi, p) = ins.branch(psi, v);
    if p <= tol.zero_probability {
        return Err(Error::ZeroProbability(format!(
            "outcome {} has probability {p:.3e}",
            ins.outcomes[v]
        )));
    }
    Ket::normalized(phi)
}
