//! Small dense quadratic program `min ½‖v − π‖²` over half-spaces
//! `aⱼᵀv ≥ bⱼ`, solved by a dual active-set method with full KKT
//! certification.
//!
//! The objective Hessian is the identity, so every equality-constrained
//! subproblem is an orthogonal projection and the active-set Gram matrices
//! stay tiny (≤ n×n). Constraint entry/removal follows Bland's rule
//! (lowest index) for anti-cycling. An independent brute-force oracle
//! (grid screen plus Dykstra's alternating projections) lives alongside for
//! tests and never touches the solver path.

use nalgebra::DMatrix;

use crate::cbf::{ConstraintKind, ConstraintRow};
use crate::dynamics::VecN;
use crate::error::{Error, Result};

const TOL_FEAS: f64 = 1e-10;
const TOL_RANK: f64 = 1e-10;
const TOL_DUAL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Degenerate,
}

/// Independent recomputation of the KKT residuals at a solution.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktReport {
    /// ‖(v − π) − Σ λⱼ aⱼ‖.
    pub stationarity_residual: f64,
    /// maxⱼ |λⱼ (aⱼᵀv − bⱼ)|.
    pub max_complementarity: f64,
    /// minⱼ λⱼ (0 when there are no rows).
    pub min_dual: f64,
    /// maxⱼ (bⱼ − aⱼᵀv); negative when strictly feasible.
    pub max_primal_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub v_star: VecN,
    /// One multiplier per input row, in row order.
    pub multipliers: Vec<f64>,
    pub active_set: Vec<usize>,
    pub kkt: KktReport,
    pub status: QpStatus,
}

impl QpSolution {
    fn infeasible(n: usize, m: usize) -> Self {
        Self {
            v_star: VecN::zeros(n),
            multipliers: vec![0.0; m],
            active_set: vec![],
            kkt: KktReport::default(),
            status: QpStatus::Infeasible,
        }
    }

    fn degenerate(n: usize, m: usize) -> Self {
        Self {
            v_star: VecN::zeros(n),
            multipliers: vec![0.0; m],
            active_set: vec![],
            kkt: KktReport::default(),
            status: QpStatus::Degenerate,
        }
    }
}

struct NormRow {
    a: VecN,
    b: f64,
    scale: f64,
}

/// Solve for the row coefficients r of a_j in the active basis and the
/// residual z of a_j orthogonal to it: a_j = Σ rᵢ aᵢ + z.
fn split_against_active(
    a_j: &VecN,
    active: &[usize],
    rows: &[NormRow],
) -> Option<(Vec<f64>, VecN)> {
    let k = active.len();
    if k == 0 {
        return Some((vec![], a_j.clone()));
    }
    let mut gram = DMatrix::zeros(k, k);
    let mut rhs = DMatrix::zeros(k, 1);
    for (p, &i) in active.iter().enumerate() {
        for (q, &j) in active.iter().enumerate() {
            gram[(p, q)] = rows[i].a.dot(&rows[j].a);
        }
        rhs[(p, 0)] = rows[i].a.dot(a_j);
    }
    let sol = gram.clone().cholesky().map(|c| c.solve(&rhs)).or_else(|| {
        gram.lu().solve(&rhs)
    })?;
    if sol.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let mut z = a_j.clone();
    for (p, &i) in active.iter().enumerate() {
        z -= &rows[i].a * sol[(p, 0)];
    }
    Some((sol.column(0).iter().cloned().collect(), z))
}

/// Among active rows with positive dual-step rate, pick the one whose
/// multiplier hits zero first; ties break on the lowest row index.
fn blocking_constraint(active: &[usize], lam: &[f64], r: &[f64]) -> (f64, Option<usize>) {
    let mut t_dual = f64::INFINITY;
    let mut blocker = None;
    for (idx, &i) in active.iter().enumerate() {
        if r[idx] > TOL_DUAL {
            let t = lam[idx] / r[idx];
            let better = match blocker {
                None => true,
                Some(b_idx) => {
                    let b_row: usize = active[b_idx];
                    t < t_dual - 1e-15 || (t <= t_dual + 1e-15 && i < b_row)
                }
            };
            if better {
                t_dual = t;
                blocker = Some(idx);
            }
        }
    }
    (t_dual, blocker)
}

/// Exact projection of π onto the equality system of the active rows;
/// returns (v, multipliers over the active set).
fn polish(pi: &VecN, active: &[usize], rows: &[NormRow]) -> Option<(VecN, Vec<f64>)> {
    let k = active.len();
    if k == 0 {
        return Some((pi.clone(), vec![]));
    }
    let mut gram = DMatrix::zeros(k, k);
    let mut rhs = DMatrix::zeros(k, 1);
    for (p, &i) in active.iter().enumerate() {
        for (q, &j) in active.iter().enumerate() {
            gram[(p, q)] = rows[i].a.dot(&rows[j].a);
        }
        rhs[(p, 0)] = rows[i].b - rows[i].a.dot(pi);
    }
    let lam = gram.clone().cholesky().map(|c| c.solve(&rhs)).or_else(|| gram.lu().solve(&rhs))?;
    let mut v = pi.clone();
    for (p, &i) in active.iter().enumerate() {
        v += &rows[i].a * lam[(p, 0)];
    }
    Some((v, lam.column(0).iter().cloned().collect()))
}

/// Minimize ½‖v − π‖² subject to aⱼᵀv ≥ bⱼ for every row.
///
/// Returns the unique minimizer with its multipliers and a recomputed KKT
/// report when feasible; `Infeasible` carries a Farkas-style certificate
/// discovered during the dual iteration; `Degenerate` signals numerical
/// breakdown (ill-conditioned active Gram matrix or iteration overrun).
pub fn solve(pi: &VecN, rows: &[ConstraintRow]) -> QpSolution {
    let n = pi.len();
    let m = rows.len();

    // normalize; degenerate rows are either vacuous or immediately infeasible
    let mut norm_rows = Vec::with_capacity(m);
    for row in rows {
        let s = row.a.norm();
        if s < 1e-12 {
            if row.b > TOL_FEAS {
                return QpSolution::infeasible(n, m);
            }
            // vacuous: keep a placeholder that can never activate
            norm_rows.push(NormRow {
                a: VecN::zeros(n),
                b: -1.0,
                scale: 1.0,
            });
        } else {
            norm_rows.push(NormRow {
                a: &row.a / s,
                b: row.b / s,
                scale: s,
            });
        }
    }

    let mut v = pi.clone();
    let mut active: Vec<usize> = Vec::new();
    let mut lam: Vec<f64> = Vec::new();
    let budget = 64 + (1usize << m.min(16)) * 4;
    let mut iters = 0usize;

    loop {
        iters += 1;
        if iters > budget {
            return QpSolution::degenerate(n, m);
        }
        // Bland: lowest-index violated row
        let mut incoming = None;
        for (j, row) in norm_rows.iter().enumerate() {
            if active.contains(&j) {
                continue;
            }
            if row.a.dot(&v) - row.b < -TOL_FEAS {
                incoming = Some(j);
                break;
            }
        }
        let Some(j) = incoming else {
            // candidate optimum: polish on the active set, drop any
            // multiplier that lands negative, re-check feasibility
            let Some((v_polished, lam_polished)) = polish(pi, &active, &norm_rows) else {
                return QpSolution::degenerate(n, m);
            };
            if let Some(worst) = lam_polished
                .iter()
                .enumerate()
                .filter(|(_, l)| **l < -1e-10)
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(idx, _)| idx)
            {
                active.remove(worst);
                lam.remove(worst);
                v = v_polished;
                continue;
            }
            v = v_polished;
            lam = lam_polished.iter().map(|l| l.max(0.0)).collect();
            let still_violated = norm_rows
                .iter()
                .enumerate()
                .any(|(jj, row)| !active.contains(&jj) && row.a.dot(&v) - row.b < -TOL_FEAS);
            if still_violated {
                continue;
            }
            let mut multipliers = vec![0.0; m];
            for (idx, &i) in active.iter().enumerate() {
                multipliers[i] = lam[idx] / norm_rows[i].scale;
            }
            let mut sorted_active = active.clone();
            sorted_active.sort_unstable();
            let mut sol = QpSolution {
                v_star: v,
                multipliers,
                active_set: sorted_active,
                kkt: KktReport::default(),
                status: QpStatus::Optimal,
            };
            sol.kkt = verify_kkt(&sol, pi, rows);
            return sol;
        };

        let mut lam_j = 0.0;
        loop {
            iters += 1;
            if iters > budget {
                return QpSolution::degenerate(n, m);
            }
            let Some((r, z)) = split_against_active(&norm_rows[j].a, &active, &norm_rows) else {
                return QpSolution::degenerate(n, m);
            };
            if z.norm() > TOL_RANK {
                let denom = z.dot(&z);
                let t_full = (norm_rows[j].b - norm_rows[j].a.dot(&v)) / denom;
                let (t_dual, blocker) = blocking_constraint(&active, &lam, &r);
                let t = t_full.min(t_dual).max(0.0);
                v += &z * t;
                for idx in 0..active.len() {
                    lam[idx] -= t * r[idx];
                }
                lam_j += t;
                if t_full <= t_dual {
                    active.push(j);
                    lam.push(lam_j);
                    break;
                }
                let Some(idx) = blocker else {
                    return QpSolution::degenerate(n, m);
                };
                active.remove(idx);
                lam.remove(idx);
            } else {
                // incoming row is dependent on the active set
                if r.iter().all(|&ri| ri <= TOL_DUAL) {
                    // Farkas: a_j = Σ rᵢaᵢ with r ≤ 0, yet a_jᵀv < b_j
                    return QpSolution::infeasible(n, m);
                }
                let (t_dual, blocker) = blocking_constraint(&active, &lam, &r);
                let Some(idx) = blocker else {
                    return QpSolution::degenerate(n, m);
                };
                for i2 in 0..active.len() {
                    lam[i2] -= t_dual * r[i2];
                }
                lam_j += t_dual;
                active.remove(idx);
                lam.remove(idx);
            }
        }
    }
}

/// Closed-form solution with a single row: the half-space projection
/// v = π + max(0, (b − aᵀπ)/‖a‖²)·a.
pub fn closed_form_single(pi: &VecN, row: &ConstraintRow) -> Result<VecN> {
    let denom = row.a.dot(&row.a);
    if denom < 1e-24 {
        return Err(Error::DegenerateRow(
            "closed-form projection needs ‖a‖ > 0".into(),
        ));
    }
    let lambda = ((row.b - row.a.dot(pi)) / denom).max(0.0);
    Ok(pi + &row.a * lambda)
}

/// Recompute stationarity, complementarity, dual feasibility, and primal
/// feasibility from scratch, independent of solver internals.
pub fn verify_kkt(sol: &QpSolution, pi: &VecN, rows: &[ConstraintRow]) -> KktReport {
    let mut grad = &sol.v_star - pi;
    let mut max_comp = 0.0f64;
    let mut min_dual = f64::INFINITY;
    let mut max_primal = f64::NEG_INFINITY;
    for (j, row) in rows.iter().enumerate() {
        let lambda = sol.multipliers.get(j).copied().unwrap_or(0.0);
        grad -= &row.a * lambda;
        let slack = row.a.dot(&sol.v_star) - row.b;
        max_comp = max_comp.max((lambda * slack).abs());
        min_dual = min_dual.min(lambda);
        max_primal = max_primal.max(-slack);
    }
    if rows.is_empty() {
        min_dual = 0.0;
        max_primal = 0.0;
    }
    KktReport {
        stationarity_residual: grad.norm(),
        max_complementarity: max_comp,
        min_dual,
        max_primal_violation: max_primal,
    }
}

// ───────────────────── independent oracle ─────────────────────

fn project_halfspace(y: &VecN, a: &VecN, b: f64) -> VecN {
    let denom = a.dot(a);
    if denom < 1e-24 {
        return y.clone();
    }
    let lambda = ((b - a.dot(y)) / denom).max(0.0);
    y + a * lambda
}

fn feasible(v: &VecN, rows: &[ConstraintRow], tol: f64) -> bool {
    rows.iter().all(|r| r.a.dot(v) - r.b >= -tol)
}

/// Dykstra's alternating projections onto the half-space intersection.
/// Converges to the exact projection of π when the intersection is
/// nonempty; stalls without reaching feasibility when it is empty.
fn dykstra(pi: &VecN, rows: &[ConstraintRow], max_cycles: usize) -> (VecN, bool) {
    let mut x = pi.clone();
    let mut corrections: Vec<VecN> = rows.iter().map(|_| VecN::zeros(pi.len())).collect();
    for _ in 0..max_cycles {
        let before = x.clone();
        for (j, row) in rows.iter().enumerate() {
            let y = &x + &corrections[j];
            let proj = project_halfspace(&y, &row.a, row.b);
            corrections[j] = &y - &proj;
            x = proj;
        }
        if (&x - &before).norm() < 1e-14 {
            break;
        }
    }
    let ok = feasible(&x, rows, 1e-9);
    (x, ok)
}

/// Exhaustive grid search over `[π ± radius]ⁿ` refined by alternating
/// projections. Test oracle only: independent of the active-set path.
pub fn brute_force_oracle(
    pi: &VecN,
    rows: &[ConstraintRow],
    radius: f64,
    grid_n: usize,
) -> Result<VecN> {
    let n = pi.len();
    assert!(n <= 3, "oracle is exhaustive; dimensions above 3 are not supported");
    assert!(grid_n >= 2 && grid_n <= 201);

    let (refined, converged) = dykstra(pi, rows, 20_000);
    if converged {
        return Ok(refined);
    }

    // grid screen for feasibility
    let mut best: Option<(f64, VecN)> = None;
    let total = grid_n.pow(n as u32);
    for flat in 0..total {
        let mut idx = flat;
        let mut v = pi.clone();
        for d in 0..n {
            let g = idx % grid_n;
            idx /= grid_n;
            v[d] = pi[d] + radius * (2.0 * g as f64 / (grid_n as f64 - 1.0) - 1.0);
        }
        if feasible(&v, rows, 1e-9) {
            let dist = (&v - pi).norm();
            if best.as_ref().map_or(true, |(d, _)| dist < *d) {
                best = Some((dist, v));
            }
        }
    }
    match best {
        Some((_, v)) => {
            // the set is nonempty after all; give Dykstra a longer leash
            let (refined, converged) = dykstra(pi, rows, 200_000);
            if converged {
                Ok(refined)
            } else {
                Ok(v)
            }
        }
        None => Err(Error::DegenerateRow("no feasible grid point".into())),
    }
}

// ───────────────────── lexicographic relaxation ─────────────────────

/// Result of a soft-constrained solve: selected rows get a slack variable
/// with quadratic weight, hard rows stay exact.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedSolution {
    pub v: VecN,
    /// Slack per input row (0 for hard rows).
    pub slacks: Vec<f64>,
    /// Multiplier per input row from the augmented program.
    pub multipliers: Vec<f64>,
    /// KKT report of the augmented program.
    pub kkt: KktReport,
    pub status: QpStatus,
}

/// Solve with the rows marked in `soft` relaxed through weighted slacks:
/// minimize ½‖v − π‖² + ½·weight·Σ sᵢ² subject to aⱼᵀv (+ sⱼ) ≥ bⱼ, s ≥ 0.
pub fn solve_relaxed(
    pi: &VecN,
    rows: &[ConstraintRow],
    soft: &[bool],
    weight: f64,
) -> RelaxedSolution {
    assert_eq!(rows.len(), soft.len());
    let n = pi.len();
    let m = rows.len();
    let ns = soft.iter().filter(|s| **s).count();
    let sqrt_w = weight.sqrt();

    // augmented variables ξ = (v, √w·s): objective ½‖ξ − (π, 0)‖²
    let dim = n + ns;
    let mut pi_aug = VecN::zeros(dim);
    for i in 0..n {
        pi_aug[i] = pi[i];
    }

    let mut rows_aug: Vec<ConstraintRow> = Vec::with_capacity(m + ns);
    let mut slack_slot = vec![usize::MAX; m];
    let mut next = 0usize;
    for (j, row) in rows.iter().enumerate() {
        let mut a = VecN::zeros(dim);
        for i in 0..n {
            a[i] = row.a[i];
        }
        if soft[j] {
            a[n + next] = 1.0 / sqrt_w;
            slack_slot[j] = next;
            next += 1;
        }
        rows_aug.push(ConstraintRow {
            a,
            b: row.b,
            kind: row.kind,
            h_value: row.h_value,
            hbar_value: row.hbar_value,
        });
    }
    for s in 0..ns {
        let mut a = VecN::zeros(dim);
        a[n + s] = 1.0;
        rows_aug.push(ConstraintRow {
            a,
            b: 0.0,
            kind: ConstraintKind::Input, // placeholder kind for slack bounds
            h_value: 0.0,
            hbar_value: 0.0,
        });
    }

    let sol = solve(&pi_aug, &rows_aug);
    let mut v = VecN::zeros(n);
    for i in 0..n {
        v[i] = sol.v_star[i];
    }
    let mut slacks = vec![0.0; m];
    for j in 0..m {
        if slack_slot[j] != usize::MAX {
            slacks[j] = sol.v_star[n + slack_slot[j]] / sqrt_w;
        }
    }
    RelaxedSolution {
        v,
        slacks,
        multipliers: sol.multipliers[..m].to_vec(),
        kkt: sol.kkt,
        status: sol.status,
    }
}
