use super::{BoundarySet, LabeledSet, LinearBoundary, Objective, SolverConfig};
use crate::linalg::norm_sq;

/// Full-batch subgradient descent with step `step_scale/√k`. Returns the
/// lower-loss of the running iterate average and the best iterate seen.
pub fn solve_subgradient(
    a: &LabeledSet,
    b: &BoundarySet,
    objective: &Objective,
    start: LinearBoundary,
    config: &SolverConfig,
) -> LinearBoundary {
    let mut x = start;
    let mut best_loss = objective.loss_unchecked(&x, a, b);
    let mut best = x.clone();
    let mut avg = x.clone();
    for k in 1..=config.max_iter {
        let (gw, gb) = objective.subgradient_unchecked(&x, a, b);
        if (norm_sq(&gw) + gb * gb).sqrt() <= config.grad_tol {
            return x;
        }
        let step = config.step_scale / (k as f64).sqrt();
        for (xi, gi) in x.w.iter_mut().zip(&gw) {
            *xi -= step * gi;
        }
        x.b -= step * gb;
        let weight = 1.0 / (k as f64 + 1.0);
        for (ai, xi) in avg.w.iter_mut().zip(&x.w) {
            *ai += weight * (xi - *ai);
        }
        avg.b += weight * (x.b - avg.b);
        let l = objective.loss_unchecked(&x, a, b);
        if l < best_loss {
            best_loss = l;
            best = x.clone();
        }
    }
    if objective.loss_unchecked(&avg, a, b) < best_loss {
        avg
    } else {
        best
    }
}
