//! Switch strategy between the nominal policy and the QP safety filter.
//!
//! Each step the raw constraint rows are preprocessed (normalized, with
//! vacuous and implausible rows removed), the nominal action is classified
//! against them, and — only when some row is violated — the QP projects the
//! action onto the feasible set. Joint infeasibility is handled by a
//! lexicographic slack relaxation: input first, then sensing, never
//! collision.

use crate::cbf::{ConstraintKind, ConstraintRow};
use crate::dynamics::VecN;
use crate::error::{Error, Result};
use crate::qp::{self, KktReport, QpSolution, QpStatus};

/// Quadratic weight on relaxation slacks. Large enough that slack is a
/// last resort, small enough that a soft row pinched against a hard row at
/// a narrow angle cannot command a wedge-vertex excursion beyond ~√W/2
/// times the slack.
pub const RELAX_WEIGHT: f64 = 100.0;

/// Switch region: R1 means the nominal action already satisfies every row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    R1,
    R2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchDecision {
    pub region: Region,
    /// aⱼᵀπ − bⱼ per effective row, in row order.
    pub margins: Vec<f64>,
    pub filtered: bool,
}

/// How far the relaxation ladder had to go for one solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RelaxLevel {
    None,
    InputSoft,
    InputAndSensingSoft,
    /// Soft rows dropped entirely: only collision rows constrain v.
    CollisionOnly,
}

/// Why a row was removed before the QP saw it.
#[derive(Debug, Clone, PartialEq)]
pub struct DroppedRow {
    pub kind: ConstraintKind,
    pub reason: DropReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    /// ‖a‖ ≈ 0 with b ≤ 0: satisfied by every v.
    Vacuous,
    /// ‖a‖ ≈ 0 with b > 0, or satisfying the row alone would demand an
    /// acceleration beyond the plausibility cap.
    Unsatisfiable,
    /// Demand clipped to the plausibility cap; the row stays, weakened
    /// (sensing only: brake as hard as plausible rather than give up).
    Clipped,
}

/// Rows after preprocessing plus the bookkeeping of what was removed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EffectiveRows {
    pub rows: Vec<ConstraintRow>,
    pub dropped: Vec<DroppedRow>,
}

/// Normalize rows to ‖a‖ = 1 and strip the ones no finite action can
/// satisfy. A collision row that cannot be satisfied is a hard fault —
/// collision is never relaxed.
pub fn preprocess_rows(raw: &[ConstraintRow], v_cap: f64) -> Result<EffectiveRows> {
    let mut out = EffectiveRows::default();
    for row in raw {
        let norm = row.a.norm();
        if norm < 1e-9 {
            if row.b <= 1e-12 {
                out.dropped.push(DroppedRow {
                    kind: row.kind,
                    reason: DropReason::Vacuous,
                });
                continue;
            }
            match row.kind {
                ConstraintKind::Collision(_) => {
                    return Err(Error::DegenerateRow(format!(
                        "collision row {:?} has no lever (‖a‖ = {norm:e}) and b = {} > 0",
                        row.kind, row.b
                    )));
                }
                _ => {
                    out.dropped.push(DroppedRow {
                        kind: row.kind,
                        reason: DropReason::Unsatisfiable,
                    });
                    continue;
                }
            }
        }
        let mut b_norm = row.b / norm;
        if b_norm > v_cap {
            match row.kind {
                ConstraintKind::Collision(_) => {
                    // keep it: collision rows retain a healthy lever
                    // (‖a‖ ≥ 2r) so this only trips in pathological states,
                    // and relaxing collision is not an option
                }
                ConstraintKind::Sensing => {
                    // brake as hard as plausible instead of giving up
                    b_norm = v_cap;
                    out.dropped.push(DroppedRow {
                        kind: row.kind,
                        reason: DropReason::Clipped,
                    });
                }
                ConstraintKind::Input => {
                    out.dropped.push(DroppedRow {
                        kind: row.kind,
                        reason: DropReason::Unsatisfiable,
                    });
                    continue;
                }
            }
        }
        out.rows.push(ConstraintRow {
            a: &row.a / norm,
            b: b_norm,
            kind: row.kind,
            h_value: row.h_value,
            hbar_value: row.hbar_value,
        });
    }
    Ok(out)
}

/// Region membership of the nominal action: R1 iff every margin is
/// non-negative (ties inclusive).
pub fn classify(pi: &VecN, rows: &[ConstraintRow]) -> SwitchDecision {
    let margins: Vec<f64> = rows.iter().map(|r| r.a.dot(pi) - r.b).collect();
    let region = if margins.iter().all(|m| *m >= 0.0) {
        Region::R1
    } else {
        Region::R2
    };
    SwitchDecision {
        region,
        margins,
        filtered: region == Region::R2,
    }
}

/// Outcome of one hybrid-control evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub v: VecN,
    pub decision: SwitchDecision,
    pub sol: Option<QpSolution>,
    pub relaxation: RelaxLevel,
    pub kkt: KktReport,
}

/// Hybrid control law: pass the nominal action through untouched in R1,
/// otherwise solve the QP, escalating the relaxation ladder on
/// infeasibility.
///
/// An Optimal solve whose action magnitude exceeds `v_limit` while a
/// non-collision row is active is treated as infeasible-in-practice: the
/// row set has pinched into a wedge whose vertex no actuator can reach, so
/// the lexicographic relaxation takes over. Pure collision-driven escapes
/// are never magnitude-gated.
pub fn hybrid_control(pi: &VecN, effective: &EffectiveRows, v_limit: f64) -> Result<FilterOutcome> {
    let rows = &effective.rows;
    let decision = classify(pi, rows);
    if decision.region == Region::R1 {
        return Ok(FilterOutcome {
            v: pi.clone(),
            decision,
            sol: None,
            relaxation: RelaxLevel::None,
            kkt: KktReport::default(),
        });
    }

    let baseline = pi.norm().max(v_limit);
    let sol = qp::solve(pi, rows);
    match sol.status {
        QpStatus::Optimal => {
            let wedged = sol.v_star.norm() > baseline
                && sol
                    .active_set
                    .iter()
                    .any(|&j| !matches!(rows[j].kind, ConstraintKind::Collision(_)));
            if !wedged {
                let kkt = sol.kkt;
                return Ok(FilterOutcome {
                    v: sol.v_star.clone(),
                    decision,
                    sol: Some(sol),
                    relaxation: RelaxLevel::None,
                    kkt,
                });
            }
        }
        // numerical degeneracy falls through to the relaxation ladder:
        // the slack-augmented problems are better conditioned
        QpStatus::Degenerate | QpStatus::Infeasible => {}
    }

    let mut fallback: Option<(RelaxLevel, qp::RelaxedSolution)> = None;
    for (level, relax_sensing) in [
        (RelaxLevel::InputSoft, false),
        (RelaxLevel::InputAndSensingSoft, true),
    ] {
        let soft: Vec<bool> = rows
            .iter()
            .map(|r| match r.kind {
                ConstraintKind::Input => true,
                ConstraintKind::Sensing => relax_sensing,
                ConstraintKind::Collision(_) => false,
            })
            .collect();
        if !soft.iter().any(|s| *s) {
            continue;
        }
        let relaxed = qp::solve_relaxed(pi, rows, &soft, RELAX_WEIGHT);
        if relaxed.status == QpStatus::Optimal {
            if relaxed.v.norm() > baseline {
                // still wedged: escalate
                fallback = Some((level, relaxed));
                continue;
            }
            return Ok(finish_relaxed(decision, level, relaxed));
        }
    }

    // last rung: collision rows only; sensing and input yield entirely
    let hard_only: Vec<ConstraintRow> = rows
        .iter()
        .filter(|r| matches!(r.kind, ConstraintKind::Collision(_)))
        .cloned()
        .collect();
    let sol = qp::solve(pi, &hard_only);
    if sol.status == QpStatus::Optimal {
        let kkt = sol.kkt;
        // map multipliers back to the full row order
        let mut multipliers = vec![0.0; rows.len()];
        let mut h_idx = 0usize;
        for (j, row) in rows.iter().enumerate() {
            if matches!(row.kind, ConstraintKind::Collision(_)) {
                multipliers[j] = sol.multipliers[h_idx];
                h_idx += 1;
            }
        }
        return Ok(FilterOutcome {
            v: sol.v_star.clone(),
            decision,
            sol: Some(QpSolution {
                v_star: sol.v_star,
                multipliers,
                active_set: vec![],
                kkt,
                status: QpStatus::Optimal,
            }),
            relaxation: RelaxLevel::CollisionOnly,
            kkt,
        });
    }
    if let Some((level, relaxed)) = fallback {
        return Ok(finish_relaxed(decision, level, relaxed));
    }

    Err(Error::SafetyFault {
        pursuer: usize::MAX,
        t: f64::NAN,
        dump: "collision rows mutually infeasible after relaxing input and sensing".into(),
    })
}

fn finish_relaxed(
    decision: SwitchDecision,
    level: RelaxLevel,
    relaxed: qp::RelaxedSolution,
) -> FilterOutcome {
    let kkt = relaxed.kkt;
    let sol = QpSolution {
        v_star: relaxed.v.clone(),
        multipliers: relaxed.multipliers,
        active_set: vec![],
        kkt,
        status: QpStatus::Optimal,
    };
    FilterOutcome {
        v: relaxed.v,
        decision,
        sol: Some(sol),
        relaxation: level,
        kkt,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::brute_force_oracle;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vec3(a: f64, b: f64, c: f64) -> VecN {
        DVector::from_vec(vec![a, b, c])
    }

    fn row(a: VecN, b: f64, kind: ConstraintKind) -> ConstraintRow {
        ConstraintRow {
            a,
            b,
            kind,
            h_value: 1.0,
            hbar_value: 1.0,
        }
    }

    #[test]
    fn empty_rows_mean_r1() {
        let pi = vec3(1.0, 2.0, 3.0);
        let eff = EffectiveRows::default();
        let out = hybrid_control(&pi, &eff, 100.0).unwrap();
        assert_eq!(out.decision.region, Region::R1);
        assert_eq!(out.v, pi);
        assert!(out.sol.is_none());
    }

    #[test]
    fn boundary_margin_is_r1() {
        // π exactly on the row boundary: non-strict inequality keeps R1
        let pi = vec3(1.0, 0.0, 0.0);
        let rows = vec![row(vec3(1.0, 0.0, 0.0), 1.0, ConstraintKind::Sensing)];
        let d = classify(&pi, &rows);
        assert_eq!(d.region, Region::R1);
        assert_relative_eq!(d.margins[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn r1_passthrough_is_bitwise() {
        let pi = vec3(0.123456789, -0.987654321, 0.5);
        let rows = vec![row(vec3(1.0, 0.0, 0.0), -5.0, ConstraintKind::Input)];
        let eff = preprocess_rows(&rows, 100.0).unwrap();
        let out = hybrid_control(&pi, &eff, 100.0).unwrap();
        assert_eq!(out.decision.region, Region::R1);
        assert!(out.v == pi, "R1 must return π bitwise");
    }

    #[test]
    fn r2_projects_to_single_row_closed_form() {
        let pi = vec3(0.0, 0.0, 0.0);
        let rows = vec![row(vec3(0.0, 1.0, 0.0), 0.5, ConstraintKind::Sensing)];
        let eff = preprocess_rows(&rows, 100.0).unwrap();
        let out = hybrid_control(&pi, &eff, 100.0).unwrap();
        assert_eq!(out.decision.region, Region::R2);
        let cf = qp::closed_form_single(&pi, &eff.rows[0]).unwrap();
        assert!((out.v - cf).norm() < 1e-12);
    }

    #[test]
    fn filtered_v_satisfies_all_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let pi = vec3(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let mut rows = Vec::new();
            let v0 = vec3(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            for k in 0..4 {
                let mut a = vec3(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                if a.norm() < 1e-3 {
                    a = vec3(0.0, 0.0, 1.0);
                }
                let b = a.dot(&v0) - rng.gen_range(0.0..0.3);
                rows.push(row(a, b, ConstraintKind::Collision(k)));
            }
            let eff = preprocess_rows(&rows, 100.0).unwrap();
            let out = hybrid_control(&pi, &eff, 100.0).unwrap();
            for r in &eff.rows {
                assert!(
                    r.a.dot(&out.v) - r.b >= -1e-9,
                    "filtered action violates a row"
                );
            }
        }
    }

    #[test]
    fn minimal_intervention_vs_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut r2_seen = 0;
        while r2_seen < 50 {
            let pi = vec3(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let v0 = vec3(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let mut rows = Vec::new();
            for k in 0..3 {
                let mut a = vec3(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                if a.norm() < 1e-3 {
                    a = vec3(0.0, 1.0, 0.0);
                }
                let b = a.dot(&v0) - rng.gen_range(0.0..0.2);
                rows.push(row(a, b, ConstraintKind::Collision(k)));
            }
            let eff = preprocess_rows(&rows, 100.0).unwrap();
            let out = hybrid_control(&pi, &eff, 100.0).unwrap();
            if out.decision.region != Region::R2 {
                continue;
            }
            r2_seen += 1;
            let oracle = brute_force_oracle(&pi, &eff.rows, 8.0, 41).unwrap();
            assert!(
                (&out.v - &pi).norm() <= (&oracle - &pi).norm() + 1e-4,
                "filter moved farther from π than the oracle optimum"
            );
        }
    }

    #[test]
    fn idempotent_on_safe_inputs() {
        let rows = vec![
            row(vec3(1.0, 0.0, 0.0), -1.0, ConstraintKind::Input),
            row(vec3(0.0, 1.0, 0.0), -1.0, ConstraintKind::Sensing),
        ];
        let eff = preprocess_rows(&rows, 100.0).unwrap();
        let v = vec3(0.3, 0.3, 0.0);
        let out = hybrid_control(&v, &eff, 100.0).unwrap();
        assert!(out.v == v);
        let out2 = hybrid_control(&out.v, &eff, 100.0).unwrap();
        assert!(out2.v == v);
    }

    #[test]
    fn ladder_relaxes_input_first() {
        // collision demands x ≥ 1, input demands −x ≥ 0.5: jointly empty
        let rows = vec![
            row(vec3(1.0, 0.0, 0.0), 1.0, ConstraintKind::Collision(0)),
            row(vec3(-1.0, 0.0, 0.0), 0.5, ConstraintKind::Input),
        ];
        let eff = preprocess_rows(&rows, 100.0).unwrap();
        let out = hybrid_control(&vec3(0.0, 0.0, 0.0), &eff, 100.0).unwrap();
        assert_eq!(out.relaxation, RelaxLevel::InputSoft);
        // collision satisfied exactly
        assert!(out.v[0] >= 1.0 - 1e-9);
    }

    #[test]
    fn ladder_reaches_sensing_when_needed() {
        let rows = vec![
            row(vec3(1.0, 0.0, 0.0), 1.0, ConstraintKind::Collision(0)),
            row(vec3(-1.0, 0.0, 0.0), 0.5, ConstraintKind::Sensing),
        ];
        let eff = preprocess_rows(&rows, 100.0).unwrap();
        let out = hybrid_control(&vec3(0.0, 0.0, 0.0), &eff, 100.0).unwrap();
        assert_eq!(out.relaxation, RelaxLevel::InputAndSensingSoft);
        assert!(out.v[0] >= 1.0 - 1e-9);
    }

    #[test]
    fn collision_conflict_is_a_hard_fault() {
        let rows = vec![
            row(vec3(1.0, 0.0, 0.0), 1.0, ConstraintKind::Collision(0)),
            row(vec3(-1.0, 0.0, 0.0), 1.0, ConstraintKind::Collision(1)),
        ];
        let eff = preprocess_rows(&rows, 100.0).unwrap();
        assert!(hybrid_control(&vec3(0.0, 0.0, 0.0), &eff, 100.0).is_err());
    }

    #[test]
    fn preprocess_drops_vacuous_and_unsatisfiable() {
        let rows = vec![
            row(vec3(0.0, 0.0, 0.0), -0.5, ConstraintKind::Input),
            row(vec3(0.0, 0.0, 0.0), 0.5, ConstraintKind::Sensing),
            row(vec3(1e-6, 0.0, 0.0), 1.0, ConstraintKind::Input), // demand 1e6 > cap
            row(vec3(1.0, 0.0, 0.0), 0.5, ConstraintKind::Collision(0)),
        ];
        let eff = preprocess_rows(&rows, 100.0).unwrap();
        assert_eq!(eff.rows.len(), 1);
        assert_eq!(eff.dropped.len(), 3);
        assert_eq!(eff.dropped[0].reason, DropReason::Vacuous);
        assert_eq!(eff.dropped[1].reason, DropReason::Unsatisfiable);
        assert_eq!(eff.dropped[2].reason, DropReason::Unsatisfiable);
        assert_relative_eq!(eff.rows[0].a.norm(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn preprocess_faults_on_degenerate_collision() {
        let rows = vec![row(vec3(0.0, 0.0, 0.0), 0.5, ConstraintKind::Collision(0))];
        assert!(preprocess_rows(&rows, 100.0).is_err());
    }

    #[test]
    fn continuity_across_region_boundary() {
        // slide π across the boundary of a single row; v must be continuous
        let rows = vec![row(vec3(1.0, 0.0, 0.0), 0.0, ConstraintKind::Sensing)];
        let eff = preprocess_rows(&rows, 100.0).unwrap();
        let delta = 1e-9;
        let inside = vec3(delta, 0.3, 0.0);
        let outside = vec3(-delta, 0.3, 0.0);
        let v_in = hybrid_control(&inside, &eff, 100.0).unwrap().v;
        let v_out = hybrid_control(&outside, &eff, 100.0).unwrap().v;
        assert!(
            (v_in - v_out).norm() <= 1e-6,
            "hybrid law jumps across the R1/R2 boundary"
        );
    }
}
