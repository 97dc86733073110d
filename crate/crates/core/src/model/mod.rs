//! Linear decision boundary trained on labeled samples and boundary
//! annotations.
//!
//! The objective combines a mean hinge loss over labeled samples with a mean
//! squared residual over annotated boundary points:
//!
//! ```text
//! L(w, b) = c · mean_A max(0, 1 − y(w·z + b)) + r · mean_B (w·z + b)² + λ‖w‖²
//! ```
//!
//! with `c = r = ½` by default. The bias is not regularized.

mod dual;
mod subgradient;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, is_finite, norm};

pub use dual::{solve_dual, DualSolution};
pub use subgradient::solve_subgradient;

/// Binary class label, serialized as `-1` / `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn value(self) -> f64 {
        match self {
            Label::Negative => -1.0,
            Label::Positive => 1.0,
        }
    }

    /// Sign rule with ties going to the positive class.
    pub fn from_decision(value: f64) -> Self {
        if value < 0.0 {
            Label::Negative
        } else {
            Label::Positive
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Negative => Label::Positive,
            Label::Positive => Label::Negative,
        }
    }
}

impl TryFrom<i64> for Label {
    type Error = Error;

    fn try_from(v: i64) -> Result<Self> {
        match v {
            -1 => Ok(Label::Negative),
            1 => Ok(Label::Positive),
            other => Err(Error::InvalidData(format!("label {other} is not -1 or +1"))),
        }
    }
}

impl From<Label> for i64 {
    fn from(l: Label) -> i64 {
        match l {
            Label::Negative => -1,
            Label::Positive => 1,
        }
    }
}

/// Hyperplane `w·z + b = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearBoundary {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearBoundary {
    pub fn new(w: Vec<f64>, b: f64) -> Self {
        Self { w, b }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { w: vec![0.0; dim], b: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn decision_value(&self, z: &[f64]) -> Result<f64> {
        check_dim(self.dim(), z.len())?;
        Ok(dot(&self.w, z) + self.b)
    }

    pub fn predict(&self, z: &[f64]) -> Result<Label> {
        self.decision_value(z).map(Label::from_decision)
    }

    pub fn predict_batch<P: AsRef<[f64]>>(&self, points: &[P]) -> Result<Vec<Label>> {
        points.iter().map(|p| self.predict(p.as_ref())).collect()
    }

    /// Euclidean distance from `z` to the hyperplane; infinite when `w = 0`.
    pub fn distance(&self, z: &[f64]) -> Result<f64> {
        let n = norm(&self.w);
        let v = self.decision_value(z)?;
        Ok(if n > 0.0 { v.abs() / n } else { f64::INFINITY })
    }

    pub fn is_finite(&self) -> bool {
        is_finite(&self.w) && self.b.is_finite()
    }
}

/// The labeled-sample set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    entries: Vec<(Vec<f64>, Label)>,
}

impl LabeledSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a sample. Rejects dimension changes and exact duplicates.
    pub fn push(&mut self, z: Vec<f64>, y: Label) -> Result<()> {
        if let Some((first, _)) = self.entries.first() {
            check_dim(first.len(), z.len())?;
        }
        if self.entries.iter().any(|(e, _)| *e == z) {
            return Err(Error::InvalidData("duplicate labeled latent vector".into()));
        }
        self.entries.push((z, y));
        Ok(())
    }

    pub fn entries(&self) -> &[(Vec<f64>, Label)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|(z, _)| z.len())
    }

    pub fn with_flipped_labels(&self) -> Self {
        Self {
            entries: self.entries.iter().map(|(z, y)| (z.clone(), y.flipped())).collect(),
        }
    }
}

impl TryFrom<Vec<(Vec<f64>, Label)>> for LabeledSet {
    type Error = Error;

    fn try_from(entries: Vec<(Vec<f64>, Label)>) -> Result<Self> {
        let mut set = Self::new();
        for (z, y) in entries {
            set.push(z, y)?;
        }
        Ok(set)
    }
}

/// Annotated decision-boundary points.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundarySet {
    entries: Vec<Vec<f64>>,
}

impl BoundarySet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, z: Vec<f64>) -> Result<()> {
        if let Some(first) = self.entries.first() {
            check_dim(first.len(), z.len())?;
        }
        self.entries.push(z);
        Ok(())
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl TryFrom<Vec<Vec<f64>>> for BoundarySet {
    type Error = Error;

    fn try_from(entries: Vec<Vec<f64>>) -> Result<Self> {
        let mut set = Self::new();
        for z in entries {
            set.push(z)?;
        }
        Ok(set)
    }
}

/// Regularization strength and the weights of the two data terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub lambda: f64,
    pub class_weight: f64,
    pub regress_weight: f64,
}

impl Default for Objective {
    fn default() -> Self {
        Self::new(1.0)
    }
}

impl Objective {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            class_weight: 0.5,
            regress_weight: 0.5,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if ok(self.lambda) && ok(self.class_weight) && ok(self.regress_weight) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("objective weights must be finite and non-negative: {self:?}")))
        }
    }

    fn check_inputs(&self, boundary: &LinearBoundary, a: &LabeledSet, b: &BoundarySet) -> Result<()> {
        self.validate()?;
        if a.is_empty() {
            return Err(Error::NoLabeledData);
        }
        for (z, _) in a.entries() {
            check_dim(boundary.dim(), z.len())?;
        }
        for z in b.entries() {
            check_dim(boundary.dim(), z.len())?;
        }
        Ok(())
    }

    pub fn loss(&self, boundary: &LinearBoundary, a: &LabeledSet, b: &BoundarySet) -> Result<f64> {
        self.check_inputs(boundary, a, b)?;
        Ok(self.loss_unchecked(boundary, a, b))
    }

    pub(crate) fn loss_unchecked(&self, boundary: &LinearBoundary, a: &LabeledSet, b: &BoundarySet) -> f64 {
        let hinge: f64 = a
            .entries()
            .iter()
            .map(|(z, y)| (1.0 - y.value() * (dot(&boundary.w, z) + boundary.b)).max(0.0))
            .sum::<f64>()
            / a.len() as f64;
        let regress = if b.is_empty() {
            0.0
        } else {
            b.entries()
                .iter()
                .map(|z| (dot(&boundary.w, z) + boundary.b).powi(2))
                .sum::<f64>()
                / b.len() as f64
        };
        self.class_weight * hinge + self.regress_weight * regress + self.lambda * dot(&boundary.w, &boundary.w)
    }

    /// A subgradient of [`Objective::loss`] with respect to `(w, b)`. Hinge
    /// terms sitting exactly at margin 1 contribute the zero branch.
    pub fn subgradient(
        &self,
        boundary: &LinearBoundary,
        a: &LabeledSet,
        b: &BoundarySet,
    ) -> Result<(Vec<f64>, f64)> {
        self.check_inputs(boundary, a, b)?;
        Ok(self.subgradient_unchecked(boundary, a, b))
    }

    pub(crate) fn subgradient_unchecked(
        &self,
        boundary: &LinearBoundary,
        a: &LabeledSet,
        b: &BoundarySet,
    ) -> (Vec<f64>, f64) {
        let mut gw: Vec<f64> = boundary.w.iter().map(|w| 2.0 * self.lambda * w).collect();
        let mut gb = 0.0;
        let hinge_scale = self.class_weight / a.len() as f64;
        for (z, y) in a.entries() {
            let y = y.value();
            if y * (dot(&boundary.w, z) + boundary.b) < 1.0 {
                crate::linalg::axpy(-hinge_scale * y, z, &mut gw);
                gb -= hinge_scale * y;
            }
        }
        if !b.is_empty() {
            let sq_scale = 2.0 * self.regress_weight / b.len() as f64;
            for z in b.entries() {
                let r = dot(&boundary.w, z) + boundary.b;
                crate::linalg::axpy(sq_scale * r, z, &mut gw);
                gb += sq_scale * r;
            }
        }
        (gw, gb)
    }
}

/// Joint loss with the default equal weights.
pub fn loss(boundary: &LinearBoundary, a: &LabeledSet, b: &BoundarySet, lambda: f64) -> Result<f64> {
    Objective::new(lambda).loss(boundary, a, b)
}

pub fn subgradient(
    boundary: &LinearBoundary,
    a: &LabeledSet,
    b: &BoundarySet,
    lambda: f64,
) -> Result<(Vec<f64>, f64)> {
    Objective::new(lambda).subgradient(boundary, a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    /// Exact dual solver: SMO when there are no boundary points, coordinate
    /// ascent otherwise. Falls back to subgradient descent when `λ = 0`.
    #[default]
    Dual,
    /// Full-batch subgradient descent with `c/√k` steps and iterate averaging.
    Subgradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: SolverMethod,
    /// Subgradient: iteration budget.
    pub max_iter: usize,
    /// Subgradient: step size at iteration `k` is `step_scale / √k`.
    pub step_scale: f64,
    /// Subgradient: stop once the subgradient norm drops below this.
    pub grad_tol: f64,
    /// Dual: stop once the maximal KKT violation drops below this.
    pub dual_tol: f64,
    /// Dual: update budget.
    pub dual_max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::Dual,
            max_iter: 5_000,
            step_scale: 0.1,
            grad_tol: 1e-6,
            dual_tol: 1e-10,
            dual_max_iter: 10_000_000,
        }
    }
}

impl SolverConfig {
    pub fn subgradient() -> Self {
        Self {
            method: SolverMethod::Subgradient,
            ..Self::default()
        }
    }
}

/// Minimizes the joint objective. `init` seeds subgradient descent (warm
/// start); the dual solver is exact and ignores it.
pub fn train(
    a: &LabeledSet,
    b: &BoundarySet,
    objective: &Objective,
    init: Option<&LinearBoundary>,
    config: &SolverConfig,
) -> Result<LinearBoundary> {
    let dim = a.dim().ok_or(Error::NoLabeledData)?;
    let start = init.cloned().unwrap_or_else(|| LinearBoundary::zeros(dim));
    objective.check_inputs(&start, a, b)?;
    let finite = a.entries().iter().all(|(z, _)| is_finite(z))
        && b.entries().iter().all(|z| is_finite(z))
        && start.is_finite();
    if !finite {
        return Err(Error::InvalidData("non-finite latent vector".into()));
    }
    let use_dual = config.method == SolverMethod::Dual && objective.lambda > 0.0 && objective.class_weight > 0.0;
    if use_dual {
        if let Some(sol) = solve_dual(a, b, objective, config) {
            return Ok(sol.boundary);
        }
    }
    Ok(solve_subgradient(a, b, objective, start, config))
}
