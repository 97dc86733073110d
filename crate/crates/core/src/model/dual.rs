//! Exact dual solvers for the joint objective.
//!
//! Writing `x = (w, b)`, `u_i = y_i (z_i, 1)` and `C = c / |A|`, the primal is
//!
//! ```text
//! min_x ½ xᵀHx + C Σ_i max(0, 1 − u_i·x),   H = 2λ·diag(I, 0) + (2r/|B|) Σ_B (z,1)(z,1)ᵀ
//! ```
//!
//! With boundary points, `H` is positive definite and the dual
//! `max_α Σα − ½ αᵀ(UᵀH⁻¹U)α, 0 ≤ α ≤ C` is solved by cyclic coordinate
//! ascent while maintaining `x = H⁻¹Uα`. Without boundary points the bias
//! has no curvature, the dual gains the constraint `Σ α_i y_i = 0`, and the
//! problem is a linear-kernel SVM solved by SMO with second-order working
//! set selection.

use nalgebra::{DMatrix, DVector};

use super::{BoundarySet, LabeledSet, LinearBoundary, Objective, SolverConfig};
use crate::linalg::{axpy, dot};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct DualSolution {
    pub boundary: LinearBoundary,
    /// Dual objective at the returned multipliers; a lower bound on the
    /// primal minimum.
    pub dual_objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Returns `None` when the problem is outside the dual solver's reach
/// (`λ = 0` or a singular curvature matrix); callers fall back to
/// subgradient descent.
pub fn solve_dual(
    a: &LabeledSet,
    b: &BoundarySet,
    objective: &Objective,
    config: &SolverConfig,
) -> Option<DualSolution> {
    if !(objective.lambda > 0.0 && objective.class_weight > 0.0) {
        return None;
    }
    if b.is_empty() || objective.regress_weight == 0.0 {
        Some(smo(a, objective, config))
    } else {
        coordinate_ascent(a, b, objective, config)
    }
}

fn coordinate_ascent(
    a: &LabeledSet,
    b: &BoundarySet,
    objective: &Objective,
    config: &SolverConfig,
) -> Option<DualSolution> {
    let k = a.dim()?;
    let d = k + 1;
    let mut h = DMatrix::<f64>::zeros(d, d);
    for i in 0..k {
        h[(i, i)] = 2.0 * objective.lambda;
    }
    let scale = 2.0 * objective.regress_weight / b.len() as f64;
    let mut p = vec![1.0; d];
    for z in b.entries() {
        p[..k].copy_from_slice(z);
        for r in 0..d {
            let pr = scale * p[r];
            for c in 0..d {
                h[(r, c)] += pr * p[c];
            }
        }
    }
    let chol = h.clone().cholesky()?;

    let n = a.len();
    let cap = objective.class_weight / n as f64;
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut diag = Vec::with_capacity(n);
    for (z, y) in a.entries() {
        let y = y.value();
        let mut ui: Vec<f64> = z.iter().map(|x| y * x).collect();
        ui.push(y);
        let vi: Vec<f64> = chol.solve(&DVector::from_column_slice(&ui)).iter().copied().collect();
        let q = dot(&ui, &vi);
        if q.is_nan() || q <= 0.0 || q.is_infinite() {
            return None;
        }
        diag.push(q);
        u.push(ui);
        v.push(vi);
    }

    let mut alpha = vec![0.0; n];
    let mut x = vec![0.0; d];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.dual_max_iter {
        let mut max_violation = 0.0f64;
        for i in 0..n {
            iterations += 1;
            let g = 1.0 - dot(&u[i], &x);
            let pg = if alpha[i] <= 0.0 {
                g.max(0.0)
            } else if alpha[i] >= cap {
                g.min(0.0)
            } else {
                g
            };
            max_violation = max_violation.max(pg.abs());
            if pg == 0.0 {
                continue;
            }
            let new = (alpha[i] + g / diag[i]).clamp(0.0, cap);
            let delta = new - alpha[i];
            if delta != 0.0 {
                alpha[i] = new;
                axpy(delta, &v[i], &mut x);
            }
        }
        if max_violation < config.dual_tol {
            converged = true;
            break;
        }
    }

    // xᵀHx = αᵀUᵀH⁻¹Uα
    let hx = &h * DVector::from_column_slice(&x);
    let quad = dot(&x, hx.as_slice());
    let dual_objective = alpha.iter().sum::<f64>() - 0.5 * quad;
    let bias = x.pop()?;
    Some(DualSolution {
        boundary: LinearBoundary::new(x, bias),
        dual_objective,
        iterations,
        converged,
    })
}

/// SMO for `min ½αᵀQα − Σα, yᵀα = 0, 0 ≤ α ≤ C` with
/// `Q_ij = y_i y_j z_i·z_j / (2λ)`.
fn smo(a: &LabeledSet, objective: &Objective, config: &SolverConfig) -> DualSolution {
    let entries = a.entries();
    let n = entries.len();
    let k = entries[0].0.len();
    let cap = objective.class_weight / n as f64;
    let kscale = 1.0 / (2.0 * objective.lambda);
    let y: Vec<f64> = entries.iter().map(|(_, l)| l.value()).collect();
    let z: Vec<&[f64]> = entries.iter().map(|(z, _)| z.as_slice()).collect();
    let qd: Vec<f64> = z.iter().map(|zi| dot(zi, zi) * kscale).collect();
    let column = |i: usize, out: &mut Vec<f64>| {
        out.clear();
        out.extend((0..n).map(|t| y[i] * y[t] * dot(z[i], z[t]) * kscale));
    };

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let upper = |a: f64| a >= cap;
    let lower = |a: f64| a <= 0.0;
    let mut qi = Vec::with_capacity(n);
    let mut qj = Vec::with_capacity(n);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.dual_max_iter {
        // Maximal violating index i, then j by second-order gain.
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax_idx = None;
        for t in 0..n {
            let cand = if y[t] > 0.0 {
                (!upper(alpha[t])).then_some(-grad[t])
            } else {
                (!lower(alpha[t])).then_some(grad[t])
            };
            if let Some(v) = cand {
                if v >= gmax {
                    gmax = v;
                    gmax_idx = Some(t);
                }
            }
        }
        let Some(i) = gmax_idx else {
            converged = true;
            break;
        };
        column(i, &mut qi);
        let mut gmax2 = f64::NEG_INFINITY;
        let mut gmin_idx = None;
        let mut obj_diff_min = f64::INFINITY;
        for t in 0..n {
            let (eligible, grad_diff, quad) = if y[t] > 0.0 {
                if lower(alpha[t]) {
                    continue;
                }
                gmax2 = gmax2.max(grad[t]);
                (true, gmax + grad[t], qd[i] + qd[t] - 2.0 * y[i] * qi[t])
            } else {
                if upper(alpha[t]) {
                    continue;
                }
                gmax2 = gmax2.max(-grad[t]);
                (true, gmax - grad[t], qd[i] + qd[t] + 2.0 * y[i] * qi[t])
            };
            if eligible && grad_diff > 0.0 {
                let obj_diff = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                if obj_diff <= obj_diff_min {
                    obj_diff_min = obj_diff;
                    gmin_idx = Some(t);
                }
            }
        }
        let Some(j) = gmin_idx.filter(|_| gmax + gmax2 >= config.dual_tol) else {
            converged = true;
            break;
        };
        iterations += 1;
        column(j, &mut qj);

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (qd[i] + qd[j] + 2.0 * qi[j]).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > cap {
                    alpha[i] = cap;
                    alpha[j] = cap - diff;
                }
            } else if alpha[j] > cap {
                alpha[j] = cap;
                alpha[i] = cap + diff;
            }
        } else {
            let quad = (qd[i] + qd[j] - 2.0 * qi[j]).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > cap {
                if alpha[i] > cap {
                    alpha[i] = cap;
                    alpha[j] = sum - cap;
                }
                if alpha[j] > cap {
                    alpha[j] = cap;
                    alpha[i] = sum - cap;
                }
            } else {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += qi[t] * di + qj[t] * dj;
        }
    }

    // Bias from the KKT conditions: mean over free vectors, else the middle
    // of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut n_free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else if ub.is_finite() && lb.is_finite() {
        (ub + lb) / 2.0
    } else if ub.is_finite() {
        ub
    } else {
        lb
    };

    let mut w = vec![0.0; k];
    for t in 0..n {
        if alpha[t] != 0.0 {
            axpy(alpha[t] * y[t] * kscale, z[t], &mut w);
        }
    }
    // ½αᵀQα = ½ Σ α_t (grad_t + 1)
    let half_quad: f64 = alpha.iter().zip(&grad).map(|(a, g)| a * (g + 1.0)).sum::<f64>() / 2.0;
    let dual_objective = alpha.iter().sum::<f64>() - half_quad;
    DualSolution {
        boundary: LinearBoundary::new(w, -rho),
        dual_objective,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Label, SolverMethod};
    use crate::rng::Rng;

    fn problem(rng: &mut Rng, k: usize, na: usize, nb: usize, shift: f64) -> (LabeledSet, BoundarySet) {
        let mut a = LabeledSet::new();
        for i in 0..na {
            let y = if i % 3 == 0 { Label::Negative } else { Label::Positive };
            let mut z: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
            z[0] += shift * y.value();
            a.push(z, y).unwrap();
        }
        let mut b = BoundarySet::new();
        for _ in 0..nb {
            let mut z: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
            z[0] = 0.1 * rng.normal();
            b.push(z).unwrap();
        }
        (a, b)
    }

    #[test]
    fn duality_gap_closes() {
        let mut rng = Rng::seed_from_u64(9);
        let objective = Objective::new(1.0);
        for &(k, na, nb) in &[(2, 5, 0), (8, 20, 0), (8, 20, 5), (16, 60, 30), (3, 40, 1)] {
            for shift in [0.0, 1.0, 4.0] {
                let (a, b) = problem(&mut rng, k, na, nb, shift);
                let sol = solve_dual(&a, &b, &objective, &SolverConfig::default()).unwrap();
                assert!(sol.converged);
                let primal = objective.loss(&sol.boundary, &a, &b).unwrap();
                let gap = primal - sol.dual_objective;
                assert!(gap >= -1e-12, "negative gap {gap}");
                assert!(gap <= 1e-8 * primal.max(1.0), "gap {gap} for k={k} na={na} nb={nb}");
            }
        }
    }

    #[test]
    fn subgradient_agrees_with_dual() {
        let mut rng = Rng::seed_from_u64(10);
        let objective = Objective::new(1.0);
        for nb in [0, 6] {
            let (a, b) = problem(&mut rng, 4, 24, nb, 1.0);
            let exact = solve_dual(&a, &b, &objective, &SolverConfig::default()).unwrap();
            let config = SolverConfig {
                method: SolverMethod::Subgradient,
                max_iter: 50_000,
                ..SolverConfig::default()
            };
            let approx = super::super::train(&a, &b, &objective, None, &config).unwrap();
            let le = objective.loss(&exact.boundary, &a, &b).unwrap();
            let la = objective.loss(&approx, &a, &b).unwrap();
            assert!(la >= le - 1e-12);
            assert!(la - le < 1e-3 * le.max(1.0), "exact {le} subgradient {la}");
        }
    }
}
