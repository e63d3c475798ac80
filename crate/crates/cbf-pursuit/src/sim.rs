//! Scenario construction, closed-loop execution, and run metrics.
//!
//! The per-step pipeline for each pursuer: advance the estimator on the
//! trailing window, assemble relative positions against every other agent
//! and obstacle, generate the constraint rows, classify the nominal action,
//! apply the hybrid control law, then integrate the whole world once all
//! auxiliary inputs are chosen. Runs are deterministic: identical scenarios
//! produce identical logs.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DVector;

use crate::cbf::{self, ConstraintContext, ConstraintKind, SafetyParams};
use crate::dynamics::{
    integrate_step, reference_signal, target_derivative, DisturbanceModel, Integrator, Obstacle, Plant,
    PursuerState, ReferenceKind, TargetDynamicsConfig, TargetState, VecN, WorldState,
};
use crate::error::{Error, Result};
use crate::estimator::{self, EstimatorConfig, EstimatorState, History, HistoryEntry};
use crate::filter::{self, RelaxLevel, Region};
use crate::policy::{nominal_action, NominalPolicy};

/// Complete description of one reproducible experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
    pub pursuers: Vec<PursuerState>,
    pub targets: Vec<TargetState>,
    pub obstacles: Vec<Obstacle>,
    pub safety: SafetyParams,
    pub estimator: EstimatorConfig,
    pub disturbance: DisturbanceModel,
    pub policies: Vec<NominalPolicy>,
    pub plant: Plant,
    pub target_cfg: TargetDynamicsConfig,
    pub integrator: Integrator,
}

/// One failed construction-time condition, named for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionViolation {
    pub name: String,
    pub value: f64,
}

impl Scenario {
    pub fn dim(&self) -> usize {
        self.pursuers.first().map_or(3, |p| p.x.len())
    }

    /// Number of avoided bodies per pursuer: other pursuers + all targets
    /// + obstacles.
    pub fn n_others(&self) -> usize {
        self.pursuers.len() - 1 + self.targets.len() + self.obstacles.len()
    }

    /// Fixed λ-vector width in logs: input + sensing + one per avoided body.
    pub fn lambda_width(&self) -> usize {
        2 + self.n_others()
    }

    /// Positions of everything pursuer `i` must avoid, in the canonical
    /// order: other pursuers, then all targets, then obstacles.
    pub fn others_of(world: &WorldState, i: usize) -> Vec<VecN> {
        let mut list = Vec::with_capacity(world.pursuers.len() - 1 + world.targets.len() + world.obstacles.len());
        for (j, p) in world.pursuers.iter().enumerate() {
            if j != i {
                list.push(p.x.clone());
            }
        }
        for tg in &world.targets {
            list.push(tg.p0.clone());
        }
        for ob in &world.obstacles {
            list.push(ob.center.clone());
        }
        list
    }

    pub fn initial_world(&self) -> WorldState {
        WorldState {
            t: 0.0,
            pursuers: self.pursuers.clone(),
            targets: self.targets.clone(),
            obstacles: self.obstacles.clone(),
        }
    }

    /// Evaluate every construction-time safety condition at t = 0 with the
    /// true disturbance coefficients: barrier positivity and the
    /// second-element chain values ħ₂(0) = ḣ(0) + α₀ h(0).
    pub fn initial_condition_report(&self) -> Vec<ConditionViolation> {
        let mut bad = Vec::new();
        let world = self.initial_world();
        let p = &self.safety;
        // true velocities of all bodies at t = 0, same order as others_of
        for (i, pursuer) in world.pursuers.iter().enumerate() {
            let x_dot_i =
                cbf::exact::x_dot_true(&pursuer.x, &pursuer.u, &self.disturbance, &self.plant);
            let mut other_vel = Vec::new();
            for (j, other) in world.pursuers.iter().enumerate() {
                if j != i {
                    other_vel.push(cbf::exact::x_dot_true(
                        &other.x,
                        &other.u,
                        &self.disturbance,
                        &self.plant,
                    ));
                }
            }
            for tg in &world.targets {
                other_vel.push(tg.p0_dot.clone());
            }
            for _ in &world.obstacles {
                other_vel.push(VecN::zeros(self.dim()));
            }

            let others = Self::others_of(&world, i);
            let tg = &world.targets[i];
            let zeta = &pursuer.x - &tg.p0;
            let kappa_val = cbf::kappa(&zeta, p);
            let h_u = kappa_val * kappa_val - pursuer.u.dot(&pursuer.u);
            if h_u <= 0.0 {
                bad.push(ConditionViolation {
                    name: format!("h_u(0) pursuer {i}"),
                    value: h_u,
                });
            }
            let h_s = p.big_r * p.big_r - zeta.dot(&zeta);
            let h_s_dot = cbf::exact::h_s_dot(&zeta, &x_dot_i, &tg.p0_dot);
            if h_s <= 0.0 {
                bad.push(ConditionViolation {
                    name: format!("h_s(0) pursuer {i}"),
                    value: h_s,
                });
            }
            let (_, hbar_s) = cbf::hocbf_chain(h_s, h_s_dot, p.alpha0);
            if h_s > 0.0 && hbar_s <= 0.0 {
                bad.push(ConditionViolation {
                    name: format!("hbar_s(0) pursuer {i}"),
                    value: hbar_s,
                });
            }
            for (k, p_k) in others.iter().enumerate() {
                let kv = &pursuer.x - p_k;
                let h_c = kv.dot(&kv) - p.r * p.r;
                if h_c <= 0.0 {
                    bad.push(ConditionViolation {
                        name: format!("h_c(0) pursuer {i} vs body {k}"),
                        value: h_c,
                    });
                    continue;
                }
                let h_c_dot = cbf::exact::h_c_dot(&kv, &x_dot_i, &other_vel[k]);
                let (_, hbar_c) = cbf::hocbf_chain(h_c, h_c_dot, p.alpha0);
                if hbar_c <= 0.0 {
                    bad.push(ConditionViolation {
                        name: format!("hbar_c(0) pursuer {i} vs body {k}"),
                        value: hbar_c,
                    });
                }
            }
        }
        bad
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.pursuers.len();
        if n == 0 {
            return Err(Error::InvalidScenario("need at least one pursuer".into()));
        }
        if self.targets.len() != n {
            return Err(Error::InvalidScenario(format!(
                "pursuers ({n}) must pair 1:1 with targets ({})",
                self.targets.len()
            )));
        }
        if self.policies.len() != n {
            return Err(Error::InvalidScenario(format!(
                "need one policy per pursuer, got {}",
                self.policies.len()
            )));
        }
        let dim = self.dim();
        for p in &self.pursuers {
            if p.x.len() != dim || p.u.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.x.len().min(p.u.len()),
                    context: "pursuer state",
                });
            }
        }
        for tg in &self.targets {
            if tg.p0.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: tg.p0.len(),
                    context: "target state",
                });
            }
        }
        for ob in &self.obstacles {
            if ob.radius <= 0.0 {
                return Err(Error::InvalidScenario("obstacle radius must be > 0".into()));
            }
        }
        if self.dt <= 0.0 || self.steps == 0 {
            return Err(Error::InvalidScenario(
                "need dt > 0 and at least one step".into(),
            ));
        }
        self.safety.validate()?;
        self.estimator.validate()?;
        // disturbance regressors stay finite on a sample of states
        for s in 0..20 {
            let x = DVector::from_fn(dim, |r, _| ((s * 7 + r) as f64 * 0.37).sin() * 10.0);
            if !crate::dynamics::all_finite(&self.disturbance.y_theta(&x))
                || !crate::dynamics::all_finite(&self.disturbance.z_xi(&x))
            {
                return Err(Error::InvalidScenario(
                    "disturbance regressors not finite on sampled states".into(),
                ));
            }
        }
        let bad = self.initial_condition_report();
        if !bad.is_empty() {
            let mut msg = String::from("initial safety conditions violated: ");
            for v in &bad {
                let _ = write!(msg, "{} = {:.6}; ", v.name, v.value);
            }
            return Err(Error::InvalidScenario(msg));
        }
        Ok(())
    }
}

/// Per-(step, pursuer) log record. Field order mirrors the CSV schema.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub pursuer: usize,
    pub x: VecN,
    pub u: VecN,
    pub v: VecN,
    pub pi: VecN,
    pub region: Region,
    pub h_u: f64,
    pub h_s: f64,
    pub h_c_min: f64,
    /// Fixed-width multiplier vector: input, sensing, then one per body.
    pub lambdas: Vec<f64>,
    pub theta_hat: VecN,
    pub xi_hat: f64,
    pub nu_bar: f64,
    pub eta_bar: f64,
    pub reward: f64,
    pub kkt_stat: f64,
    pub kkt_comp: f64,
}

/// A relaxation or row-drop event worth surfacing in diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxEvent {
    pub step: usize,
    pub pursuer: usize,
    pub level: RelaxLevel,
    pub dropped_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub scenario_name: String,
    pub dim: usize,
    pub n_pursuers: usize,
    pub lambda_width: usize,
    pub dt: f64,
    pub safety: SafetyParams,
    pub obstacles: Vec<Obstacle>,
    pub records: Vec<StepRecord>,
    /// Target positions per step (for h recomputation in metrics).
    pub target_positions: Vec<Vec<VecN>>,
    pub relax_events: Vec<RelaxEvent>,
    /// Wall-clock seconds of the run loop (not compared for determinism).
    pub wall_seconds: f64,
}

impl SimLog {
    pub fn records_of_pursuer(&self, i: usize) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter(move |r| r.pursuer == i)
    }
}

/// Aggregate metrics over one run.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Metrics {
    pub min_h_u: Vec<f64>,
    pub min_h_s: Vec<f64>,
    pub min_h_c: Vec<f64>,
    /// Records where any barrier dipped below −1e-6.
    pub violations: usize,
    pub mean_reward: f64,
    /// Fraction of records classified R2.
    pub activation_fraction: f64,
    pub wall_seconds: f64,
    /// Largest |logged − recomputed| barrier discrepancy.
    pub recompute_max_dev: f64,
}

pub const VIOLATION_TOL: f64 = 1e-6;

/// Run the full pipeline with the safety filter active.
pub fn run(sc: &Scenario) -> Result<SimLog> {
    run_loop(sc, true)
}

/// Same loop with the filter disabled: v = π always, violations recorded
/// rather than prevented.
pub fn nominal_only_run(sc: &Scenario) -> Result<SimLog> {
    run_loop(sc, false)
}

fn state_dump(world: &WorldState, i: usize) -> String {
    let mut s = format!("t = {:.3}, pursuer {i}: ", world.t);
    let p = &world.pursuers[i];
    let _ = write!(s, "x = {:?}, u = {:?}; ", p.x.as_slice(), p.u.as_slice());
    for (j, tg) in world.targets.iter().enumerate() {
        let _ = write!(s, "target {j} at {:?}; ", tg.p0.as_slice());
    }
    for (j, q) in world.pursuers.iter().enumerate() {
        if j != i {
            let _ = write!(s, "pursuer {j} at {:?}; ", q.x.as_slice());
        }
    }
    s
}

fn run_loop(sc: &Scenario, filter_on: bool) -> Result<SimLog> {
    sc.validate()?;
    let start = Instant::now();
    let n = sc.pursuers.len();
    let lambda_width = sc.lambda_width();
    let mut world = sc.initial_world();
    let window_steps = (sc.estimator.window / sc.dt).ceil() as usize + 2;
    let mut estimators: Vec<EstimatorState> =
        (0..n).map(|_| EstimatorState::new(&sc.estimator)).collect();
    let mut histories: Vec<History> = (0..n)
        .map(|_| History::with_capacity(window_steps))
        .collect();

    let mut records = Vec::with_capacity(sc.steps * n);
    let mut target_positions = Vec::with_capacity(sc.steps);
    let mut relax_events = Vec::new();

    for step in 0..sc.steps {
        target_positions.push(world.targets.iter().map(|tg| tg.p0.clone()).collect());
        // estimate snapshot taken before the per-pursuer loop so shared
        // teammate state does not depend on pursuer iteration order
        let theta_snapshot: Vec<VecN> =
            estimators.iter().map(|e| e.theta_hat.clone()).collect();
        let mut v_all = Vec::with_capacity(n);
        for i in 0..n {
            let pursuer = &world.pursuers[i];
            estimator::advance(
                &mut estimators[i],
                &histories[i],
                (world.t, &pursuer.x, &pursuer.u),
                &sc.estimator,
                &sc.disturbance,
                &sc.plant,
                sc.dt,
            );
            let est = &estimators[i];
            let others = Scenario::others_of(&world, i);
            // the avoided bodies are all tracked: teammates share their
            // estimated kinematic state, target motion comes from the
            // tracking loop, obstacles are static; rho_v/rho_a then hedge
            // only tracker residuals
            let dim = sc.dim();
            let mut others_vel: Vec<Option<VecN>> = Vec::with_capacity(others.len());
            let mut others_acc: Vec<Option<VecN>> = Vec::with_capacity(others.len());
            for (j, q) in world.pursuers.iter().enumerate() {
                if j != i {
                    let vel = sc.plant.f(&q.x)
                        + sc.plant.g_mul(&q.x, &q.u)
                        + sc.disturbance.y(&q.x) * &theta_snapshot[j];
                    others_vel.push(Some(vel));
                    // no teammate acceleration feed: closing the loop over
                    // commanded accelerations couples the two filters into
                    // a mutual-excitation chatter; rho_a hedges instead
                    others_acc.push(None);
                }
            }
            for tg in &world.targets {
                others_vel.push(Some(tg.p0_dot.clone()));
                let acc = target_derivative(tg, world.t, &world.obstacles, &sc.target_cfg)
                    .map(|(_, a)| a)
                    .unwrap_or_else(|_| VecN::zeros(dim));
                others_acc.push(Some(acc));
            }
            for _ in &world.obstacles {
                others_vel.push(Some(VecN::zeros(dim)));
                others_acc.push(Some(VecN::zeros(dim)));
            }
            let own_target_acc = others_acc[n - 1 + i]
                .clone()
                .unwrap_or_else(|| VecN::zeros(dim));
            let ctx = ConstraintContext::build_with_tracking(
                pursuer.x.clone(),
                pursuer.u.clone(),
                &world.targets[i].p0,
                &world.targets[i].p0_dot,
                own_target_acc,
                &others,
                others_vel,
                others_acc,
                est.theta_hat.clone(),
                est.xi_hat,
                est.nu_bar,
                est.eta_bar,
                &sc.disturbance,
                sc.plant,
            )
            .map_err(|e| Error::SafetyFault {
                pursuer: i,
                t: world.t,
                dump: format!("{e}; {}", state_dump(&world, i)),
            })?;
            let raw_rows = cbf::all_rows(&ctx, &sc.safety).map_err(|e| Error::SafetyFault {
                pursuer: i,
                t: world.t,
                dump: format!("{e}; {}", state_dump(&world, i)),
            })?;
            let effective =
                filter::preprocess_rows(&raw_rows, sc.safety.v_cap).map_err(|e| {
                    Error::SafetyFault {
                        pursuer: i,
                        t: world.t,
                        dump: format!("{e}; {}", state_dump(&world, i)),
                    }
                })?;

            let pi_vec = nominal_action(&sc.policies[i], pursuer, &world.targets[i], world.t);

            let (v, region, lambdas, kkt_stat, kkt_comp, relaxation) = if filter_on {
                let outcome =
                    filter::hybrid_control(&pi_vec, &effective, sc.safety.v_cap).map_err(|e| Error::SafetyFault {
                        pursuer: i,
                        t: world.t,
                        dump: format!("{e}; {}", state_dump(&world, i)),
                    })?;
                let mut lambdas = vec![0.0; lambda_width];
                if let Some(sol) = &outcome.sol {
                    for (j, row) in effective.rows.iter().enumerate() {
                        let slot = match row.kind {
                            ConstraintKind::Input => 0,
                            ConstraintKind::Sensing => 1,
                            ConstraintKind::Collision(k) => 2 + k,
                        };
                        lambdas[slot] = sol.multipliers[j];
                    }
                }
                (
                    outcome.v,
                    outcome.decision.region,
                    lambdas,
                    outcome.kkt.stationarity_residual,
                    outcome.kkt.max_complementarity,
                    outcome.relaxation,
                )
            } else {
                let decision = filter::classify(&pi_vec, &effective.rows);
                (
                    pi_vec.clone(),
                    decision.region,
                    vec![0.0; lambda_width],
                    0.0,
                    0.0,
                    RelaxLevel::None,
                )
            };

            let dropped_unsat = effective
                .dropped
                .iter()
                .filter(|d| d.reason == filter::DropReason::Unsatisfiable)
                .count();
            if relaxation != RelaxLevel::None || dropped_unsat > 0 {
                relax_events.push(RelaxEvent {
                    step,
                    pursuer: i,
                    level: relaxation,
                    dropped_rows: dropped_unsat,
                });
            }

            let hv = cbf::barrier_values(&ctx, &sc.safety);
            let h_c_min = hv.h_c.iter().cloned().fold(f64::INFINITY, f64::min);
            records.push(StepRecord {
                step,
                t: world.t,
                pursuer: i,
                x: pursuer.x.clone(),
                u: pursuer.u.clone(),
                v: v.clone(),
                pi: pi_vec,
                region,
                h_u: hv.h_u,
                h_s: hv.h_s,
                h_c_min,
                lambdas,
                theta_hat: est.theta_hat.clone(),
                xi_hat: est.xi_hat,
                nu_bar: est.nu_bar,
                eta_bar: est.eta_bar,
                reward: crate::policy::reward(ctx.zeta.norm(), sc.safety.r, sc.safety.big_r),
                kkt_stat,
                kkt_comp,
            });
            histories[i].push(HistoryEntry {
                t: world.t,
                x: pursuer.x.clone(),
                u: pursuer.u.clone(),
                v: v.clone(),
            });
            v_all.push(v);
        }

        world = integrate_step(
            &world,
            &v_all,
            &sc.disturbance,
            &sc.plant,
            &sc.target_cfg,
            sc.integrator,
            sc.dt,
        )?;
    }

    Ok(SimLog {
        scenario_name: sc.name.clone(),
        dim: sc.dim(),
        n_pursuers: n,
        lambda_width,
        dt: sc.dt,
        safety: sc.safety.clone(),
        obstacles: sc.obstacles.clone(),
        records,
        target_positions,
        relax_events,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Aggregate a log into metrics, recomputing the barrier values from the
/// logged states as a logging-integrity cross-check.
pub fn metrics(log: &SimLog) -> Metrics {
    let n = log.n_pursuers;
    let mut min_h_u = vec![f64::INFINITY; n];
    let mut min_h_s = vec![f64::INFINITY; n];
    let mut min_h_c = vec![f64::INFINITY; n];
    let mut violations = 0usize;
    let mut reward_sum = 0.0;
    let mut r2 = 0usize;
    let mut recompute_max_dev = 0.0f64;

    // positions of every pursuer per step, for h_c recomputation
    let steps = log.target_positions.len();
    let mut pursuer_pos: Vec<Vec<VecN>> = vec![Vec::with_capacity(n); steps];
    for rec in &log.records {
        pursuer_pos[rec.step].push(rec.x.clone());
    }

    for rec in &log.records {
        let i = rec.pursuer;
        min_h_u[i] = min_h_u[i].min(rec.h_u);
        min_h_s[i] = min_h_s[i].min(rec.h_s);
        min_h_c[i] = min_h_c[i].min(rec.h_c_min);
        if rec.h_u < -VIOLATION_TOL || rec.h_s < -VIOLATION_TOL || rec.h_c_min < -VIOLATION_TOL {
            violations += 1;
        }
        reward_sum += rec.reward;
        if rec.region == Region::R2 {
            r2 += 1;
        }

        // recompute h values from the logged state
        let q = &log.target_positions[rec.step][i];
        let zeta = &rec.x - q;
        let kappa_val = cbf::kappa(&zeta, &log.safety);
        let h_u = kappa_val * kappa_val - rec.u.dot(&rec.u);
        let h_s = log.safety.big_r * log.safety.big_r - zeta.dot(&zeta);
        let mut h_c = f64::INFINITY;
        for (j, other) in pursuer_pos[rec.step].iter().enumerate() {
            if j != i {
                let d = &rec.x - other;
                h_c = h_c.min(d.dot(&d) - log.safety.r * log.safety.r);
            }
        }
        for tp in &log.target_positions[rec.step] {
            let d = &rec.x - tp;
            h_c = h_c.min(d.dot(&d) - log.safety.r * log.safety.r);
        }
        for ob in &log.obstacles {
            let d = &rec.x - &ob.center;
            h_c = h_c.min(d.dot(&d) - log.safety.r * log.safety.r);
        }
        recompute_max_dev = recompute_max_dev
            .max((h_u - rec.h_u).abs())
            .max((h_s - rec.h_s).abs())
            .max((h_c - rec.h_c_min).abs());
    }

    let count = log.records.len().max(1) as f64;
    Metrics {
        min_h_u,
        min_h_s,
        min_h_c,
        violations,
        mean_reward: reward_sum / count,
        activation_fraction: r2 as f64 / count,
        wall_seconds: log.wall_seconds,
        recompute_max_dev,
    }
}

// ───────────────────────── presets ─────────────────────────

fn preset_base(name: &str, targets: Vec<TargetState>) -> Scenario {
    let offset = DVector::from_vec(vec![0.7, 0.0, 0.0]);
    let pursuers = targets
        .iter()
        .enumerate()
        .map(|(i, tg)| PursuerState {
            x: &tg.p0 + &offset,
            u: DVector::zeros(3),
            id: i,
        })
        .collect::<Vec<_>>();
    let n = pursuers.len();
    Scenario {
        name: name.to_string(),
        dt: 0.1,
        steps: 600,
        seed: 0,
        pursuers,
        targets,
        obstacles: vec![
            Obstacle {
                center: DVector::from_vec(vec![4.70, 3.25, 3.00]),
                radius: 0.3,
            },
            Obstacle {
                center: DVector::from_vec(vec![-4.20, 3.00, 4.75]),
                radius: 0.3,
            },
        ],
        safety: SafetyParams::default(),
        estimator: EstimatorConfig::default(),
        disturbance: DisturbanceModel::sinusoidal(1.0, 1.0),
        policies: vec![
            NominalPolicy {
                kind: crate::policy::PolicyKind::PdTracker { kp: 3.5, kd: 2.0 },
                clamp: Some(6.0),
            };
            n
        ],
        plant: Plant::SingleIntegrator,
        target_cfg: TargetDynamicsConfig::default(),
        integrator: Integrator::SemiImplicitEuler,
    }
}

fn target_on_reference(reference: ReferenceKind) -> TargetState {
    let (p0, p0_dot, _) = reference_signal(&reference, 0.0);
    TargetState {
        p0,
        p0_dot,
        reference,
    }
}

/// The two shipped two-pursuer scenarios.
pub fn preset(name: &str) -> Result<Scenario> {
    match name {
        "circle" => Ok(preset_base(
            "circle",
            vec![
                target_on_reference(ReferenceKind::Circle {
                    amplitude: 5.0,
                    frequency: 0.1,
                    plane: crate::dynamics::Plane::Xy,
                }),
                target_on_reference(ReferenceKind::Circle {
                    amplitude: 5.0,
                    frequency: 0.1,
                    plane: crate::dynamics::Plane::Xz,
                }),
            ],
        )),
        "figure8" => Ok(preset_base(
            "figure8",
            vec![
                target_on_reference(ReferenceKind::FigureEight {
                    amplitude: 5.0,
                    f1: 0.1,
                    f2: 0.2,
                    offset: vec![0.0, 0.0, 3.0],
                    axes: (0, 1),
                }),
                target_on_reference(ReferenceKind::FigureEight {
                    amplitude: 5.0,
                    f1: 0.1,
                    f2: 0.2,
                    offset: vec![0.0, 3.0, 0.0],
                    axes: (0, 2),
                }),
            ],
        )),
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn preset_circle_constants() {
        let sc = preset("circle").unwrap();
        assert_relative_eq!(sc.obstacles[0].center[0], 4.70);
        assert_relative_eq!(sc.obstacles[0].center[1], 3.25);
        assert_relative_eq!(sc.obstacles[0].center[2], 3.00);
        assert_relative_eq!(sc.obstacles[1].center[0], -4.20);
        assert_relative_eq!(sc.dt, 0.1);
        assert_eq!(sc.steps, 600);
        assert_relative_eq!(sc.safety.r, 0.5);
        assert_relative_eq!(sc.safety.big_r, 1.0);
        assert_eq!(sc.pursuers.len(), 2);
        assert_eq!(sc.n_others(), 5);
    }

    #[test]
    fn preset_figure8_reference_layout() {
        let sc = preset("figure8").unwrap();
        // second target: [5 sin(0.1 t), 3, 5 sin(0.2 t)]
        let (p, _, _) = reference_signal(&sc.targets[1].reference, 0.0);
        assert_relative_eq!(p[0], 0.0);
        assert_relative_eq!(p[1], 3.0);
        assert_relative_eq!(p[2], 0.0);
        let (p2, _, _) = reference_signal(&sc.targets[1].reference, 7.0);
        assert_relative_eq!(p2[0], 5.0 * (0.7f64).sin(), epsilon = 1e-12);
        assert_relative_eq!(p2[1], 3.0);
        assert_relative_eq!(p2[2], 5.0 * (1.4f64).sin(), epsilon = 1e-12);
    }

    #[test]
    fn unknown_preset_rejected() {
        assert!(matches!(preset("bogus"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn presets_validate() {
        preset("circle").unwrap().validate().unwrap();
        preset("figure8").unwrap().validate().unwrap();
    }

    fn equilibrium_scenario() -> Scenario {
        // single pursuer parked inside the band around a static target,
        // zero disturbance, zero nominal action
        let reference = ReferenceKind::Custom {
            samples: vec![(0.0, vec![0.0, 0.0, 0.0]), (1e6, vec![0.0, 0.0, 0.0])],
        };
        let target = TargetState {
            p0: DVector::zeros(3),
            p0_dot: DVector::zeros(3),
            reference,
        };
        Scenario {
            name: "equilibrium".into(),
            dt: 0.1,
            steps: 50,
            seed: 0,
            pursuers: vec![PursuerState {
                x: DVector::from_vec(vec![0.7, 0.0, 0.0]),
                u: DVector::zeros(3),
                id: 0,
            }],
            targets: vec![target],
            obstacles: vec![],
            safety: SafetyParams::default(),
            estimator: EstimatorConfig::default(),
            disturbance: DisturbanceModel::zero(1),
            policies: vec![NominalPolicy::constant(DVector::zeros(3))],
            plant: Plant::SingleIntegrator,
            target_cfg: TargetDynamicsConfig::default(),
            integrator: Integrator::SemiImplicitEuler,
        }
    }

    #[test]
    fn equilibrium_stays_fixed_and_r1() {
        let sc = equilibrium_scenario();
        let log = run(&sc).unwrap();
        for rec in &log.records {
            assert_eq!(rec.region, Region::R1);
            assert_relative_eq!(rec.x[0], 0.7, epsilon = 1e-12);
            assert_relative_eq!(rec.v.norm(), 0.0, epsilon = 1e-15);
        }
        let m = metrics(&log);
        assert_eq!(m.violations, 0);
        assert_relative_eq!(m.activation_fraction, 0.0);
    }

    #[test]
    fn equilibrium_nominal_matches_filtered() {
        let sc = equilibrium_scenario();
        let filtered = run(&sc).unwrap();
        let nominal = nominal_only_run(&sc).unwrap();
        assert_eq!(filtered.records, nominal.records);
    }

    #[test]
    fn identical_scenarios_give_identical_logs() {
        let sc = preset("circle").unwrap();
        let mut short = sc.clone();
        short.steps = 80;
        let a = run(&short).unwrap();
        let b = run(&short).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.relax_events, b.relax_events);
    }

    #[test]
    fn metrics_recompute_matches_logged() {
        let mut sc = preset("circle").unwrap();
        sc.steps = 60;
        let log = run(&sc).unwrap();
        let m = metrics(&log);
        assert!(
            m.recompute_max_dev < 1e-12,
            "logged h values drift from recomputation: {}",
            m.recompute_max_dev
        );
    }

    #[test]
    fn invalid_initial_condition_names_h_s() {
        let mut sc = equilibrium_scenario();
        // park the pursuer outside the sensing radius
        sc.pursuers[0].x = DVector::from_vec(vec![1.5, 0.0, 0.0]);
        let err = sc.validate().unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("h_s(0)"), "message was: {msg}");
    }
}
