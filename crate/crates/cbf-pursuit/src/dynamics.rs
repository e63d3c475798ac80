//! Agent dynamics and fixed-step integration.
//!
//! Pursuers follow the augmented control-affine system
//!
//! ```text
//!     ẋ = f(x) + g(x) u + Y(x) θ
//!     u̇ = v + Z(x) ξ
//! ```
//!
//! where `v` is the auxiliary (acceleration-level) input produced by the
//! safety filter and `Y(x) θ`, `Z(x) ξ` are structured disturbances with
//! unknown constant coefficients. Targets follow a PD law around an analytic
//! reference with a repulsive potential field around obstacles.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column vector in the ambient space (positions m, velocities m/s,
/// accelerations m/s²). Dimension is configurable, 3 in the shipped
/// scenarios.
pub type VecN = DVector<f64>;

/// n×p regressor matrix type for the θ disturbance channel.
pub type MatNP = DMatrix<f64>;

pub fn all_finite(v: &VecN) -> bool {
    v.iter().all(|x| x.is_finite())
}

// ───────────────────────── domain types ─────────────────────────

/// One pursuit agent: position `x` and integrated (velocity-level) input `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct PursuerState {
    pub x: VecN,
    pub u: VecN,
    pub id: usize,
}

impl PursuerState {
    pub fn new(x: VecN, u: VecN, id: usize) -> Result<Self> {
        if x.len() != u.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: u.len(),
                context: "pursuer x vs u",
            });
        }
        Ok(Self { x, u, id })
    }
}

/// Analytic reference signal a target tracks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ReferenceKind {
    /// `amplitude·[sin(ωt), cos(ωt)]` laid into the given plane, third axis 0.
    Circle {
        amplitude: f64,
        frequency: f64,
        plane: Plane,
    },
    /// Lissajous-style curve: `amplitude·sin(f1·t)` on `axes.0`,
    /// `amplitude·sin(f2·t)` on `axes.1`, plus a constant offset.
    FigureEight {
        amplitude: f64,
        f1: f64,
        f2: f64,
        offset: Vec<f64>,
        axes: (usize, usize),
    },
    /// Piecewise-linear interpolation of a sample table `(t, position)`.
    Custom { samples: Vec<(f64, Vec<f64>)> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Plane {
    Xy,
    Xz,
}

impl ReferenceKind {
    pub fn dim(&self) -> usize {
        match self {
            ReferenceKind::Circle { .. } => 3,
            ReferenceKind::FigureEight { offset, .. } => offset.len(),
            ReferenceKind::Custom { samples } => samples.first().map_or(0, |(_, p)| p.len()),
        }
    }
}

/// One target agent with its reference law.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetState {
    pub p0: VecN,
    pub p0_dot: VecN,
    pub reference: ReferenceKind,
}

/// Rigid spherical obstacle.
#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub center: VecN,
    pub radius: f64,
}

impl Obstacle {
    pub fn new(center: VecN, radius: f64) -> Result<Self> {
        if radius <= 0.0 {
            return Err(Error::InvalidScenario(format!(
                "obstacle radius must be positive, got {radius}"
            )));
        }
        Ok(Self { center, radius })
    }
}

/// Built-in disturbance regressor families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DisturbanceKind {
    /// `Y(x)θ = sin(x)` elementwise (p = 1), `Z(x)ξ = cos(x)` elementwise.
    Sinusoidal,
    /// Both regressors identically zero.
    Zero,
}

/// Structured disturbance with unknown constant coefficients.
///
/// `theta` and `xi` are the ground-truth values used by the simulator; the
/// estimator never reads them directly.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceModel {
    pub kind: DisturbanceKind,
    pub theta: VecN,
    pub xi: f64,
}

impl DisturbanceModel {
    pub fn sinusoidal(theta: f64, xi: f64) -> Self {
        Self {
            kind: DisturbanceKind::Sinusoidal,
            theta: DVector::from_vec(vec![theta]),
            xi,
        }
    }

    pub fn zero(dim_p: usize) -> Self {
        Self {
            kind: DisturbanceKind::Zero,
            theta: DVector::zeros(dim_p.max(1)),
            xi: 0.0,
        }
    }

    /// Number of unknown θ coefficients.
    pub fn dim_p(&self) -> usize {
        self.theta.len()
    }

    /// Regressor Y(x): n×p.
    pub fn y(&self, x: &VecN) -> MatNP {
        let n = x.len();
        match self.kind {
            DisturbanceKind::Sinusoidal => {
                MatNP::from_fn(n, 1, |i, _| x[i].sin())
            }
            DisturbanceKind::Zero => MatNP::zeros(n, self.dim_p()),
        }
    }

    /// Regressor Z(x): length n.
    pub fn z(&self, x: &VecN) -> VecN {
        match self.kind {
            DisturbanceKind::Sinusoidal => x.map(|c| c.cos()),
            DisturbanceKind::Zero => VecN::zeros(x.len()),
        }
    }

    /// Time derivative of Y along a flow with velocity `x_dot`.
    pub fn y_dot(&self, x: &VecN, x_dot: &VecN) -> MatNP {
        let n = x.len();
        match self.kind {
            DisturbanceKind::Sinusoidal => {
                MatNP::from_fn(n, 1, |i, _| x[i].cos() * x_dot[i])
            }
            DisturbanceKind::Zero => MatNP::zeros(n, self.dim_p()),
        }
    }

    /// Disturbance velocity term Y(x)θ with the true coefficients.
    pub fn y_theta(&self, x: &VecN) -> VecN {
        &self.y(x) * &self.theta
    }

    /// Disturbance input term Z(x)ξ with the true coefficient.
    pub fn z_xi(&self, x: &VecN) -> VecN {
        self.z(x) * self.xi
    }
}

/// Drift/control structure of the pursuer plant. The shipped instantiation
/// is f ≡ 0, g ≡ I (single integrator at the position level with
/// velocity-level input u); the slot exists so other affine plants can be
/// configured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Plant {
    #[default]
    SingleIntegrator,
}

impl Plant {
    pub fn f(&self, x: &VecN) -> VecN {
        match self {
            Plant::SingleIntegrator => VecN::zeros(x.len()),
        }
    }

    /// g(x)·w.
    pub fn g_mul(&self, _x: &VecN, w: &VecN) -> VecN {
        match self {
            Plant::SingleIntegrator => w.clone(),
        }
    }

    /// g(x)ᵀ·w.
    pub fn g_transpose_mul(&self, _x: &VecN, w: &VecN) -> VecN {
        match self {
            Plant::SingleIntegrator => w.clone(),
        }
    }

    /// d/dt f(x) along a flow with velocity `x_dot`.
    pub fn f_dot(&self, x: &VecN, _x_dot: &VecN) -> VecN {
        match self {
            Plant::SingleIntegrator => VecN::zeros(x.len()),
        }
    }

    /// (d/dt g(x))·u along a flow with velocity `x_dot`.
    pub fn g_dot_mul(&self, x: &VecN, _x_dot: &VecN, _u: &VecN) -> VecN {
        match self {
            Plant::SingleIntegrator => VecN::zeros(x.len()),
        }
    }
}

/// Snapshot of every agent and obstacle at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub t: f64,
    pub pursuers: Vec<PursuerState>,
    pub targets: Vec<TargetState>,
    pub obstacles: Vec<Obstacle>,
}

impl WorldState {
    pub fn dim(&self) -> usize {
        self.pursuers.first().map_or(0, |p| p.x.len())
    }
}

/// Target PD-law configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetDynamicsConfig {
    pub kp: f64,
    pub kd: f64,
    /// Use the (position − velocity) mixed damping term verbatim instead of
    /// the standard (ṗ_r − ṗ₀) form. Off by default; kept for fidelity
    /// experiments.
    pub literal_velocity_term: bool,
    /// Clamp the potential-field magnitude coefficient at zero so the field
    /// is repulsive-only. Off by default: the formula as written turns
    /// attractive beyond 1/d = 0.1.
    pub repulsive_only: bool,
}

impl Default for TargetDynamicsConfig {
    fn default() -> Self {
        Self {
            kp: 1.0,
            kd: 1.0,
            literal_velocity_term: false,
            repulsive_only: false,
        }
    }
}

/// Fixed-step integration scheme for the world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Integrator {
    /// u first, then x with the updated u; targets via velocity-Verlet.
    #[default]
    SemiImplicitEuler,
    /// Classical RK4 on the joint smooth ODE with zero-order-hold v.
    Rk4,
}

// ───────────────────────── operations ─────────────────────────

/// Continuous-time derivative of one pursuer under auxiliary input `v`.
///
/// Returns `(ẋ, u̇)` with `ẋ = f + g·u + Y(x)θ` and `u̇ = v + Z(x)ξ`.
pub fn pursuer_derivative(
    s: &PursuerState,
    v: &VecN,
    d: &DisturbanceModel,
    plant: &Plant,
) -> Result<(VecN, VecN)> {
    let n = s.x.len();
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: v.len(),
            context: "auxiliary input v",
        });
    }
    let x_dot = plant.f(&s.x) + plant.g_mul(&s.x, &s.u) + d.y_theta(&s.x);
    let u_dot = v + d.z_xi(&s.x);
    Ok((x_dot, u_dot))
}

/// Analytic position, velocity, and acceleration of a reference at time t.
pub fn reference_signal(kind: &ReferenceKind, t: f64) -> (VecN, VecN, VecN) {
    match kind {
        ReferenceKind::Circle {
            amplitude: a,
            frequency: w,
            plane,
        } => {
            let (s, c) = ((w * t).sin(), (w * t).cos());
            let (p1, v1, a1) = (a * s, a * w * c, -a * w * w * s);
            let (p2, v2, a2) = (a * c, -a * w * s, -a * w * w * c);
            match plane {
                Plane::Xy => (
                    DVector::from_vec(vec![p1, p2, 0.0]),
                    DVector::from_vec(vec![v1, v2, 0.0]),
                    DVector::from_vec(vec![a1, a2, 0.0]),
                ),
                Plane::Xz => (
                    DVector::from_vec(vec![p1, 0.0, p2]),
                    DVector::from_vec(vec![v1, 0.0, v2]),
                    DVector::from_vec(vec![a1, 0.0, a2]),
                ),
            }
        }
        ReferenceKind::FigureEight {
            amplitude: a,
            f1,
            f2,
            offset,
            axes,
        } => {
            let n = offset.len();
            let mut p = DVector::from_vec(offset.clone());
            let mut v = DVector::zeros(n);
            let mut acc = DVector::zeros(n);
            p[axes.0] += a * (f1 * t).sin();
            v[axes.0] = a * f1 * (f1 * t).cos();
            acc[axes.0] = -a * f1 * f1 * (f1 * t).sin();
            p[axes.1] += a * (f2 * t).sin();
            v[axes.1] = a * f2 * (f2 * t).cos();
            acc[axes.1] = -a * f2 * f2 * (f2 * t).sin();
            (p, v, acc)
        }
        ReferenceKind::Custom { samples } => {
            let n = samples.first().map_or(0, |(_, p)| p.len());
            if samples.is_empty() {
                return (DVector::zeros(n), DVector::zeros(n), DVector::zeros(n));
            }
            // clamp outside the table, linear interpolation inside
            let first = &samples[0];
            let last = &samples[samples.len() - 1];
            if t <= first.0 {
                return (
                    DVector::from_vec(first.1.clone()),
                    DVector::zeros(n),
                    DVector::zeros(n),
                );
            }
            if t >= last.0 {
                return (
                    DVector::from_vec(last.1.clone()),
                    DVector::zeros(n),
                    DVector::zeros(n),
                );
            }
            let idx = samples.partition_point(|(ts, _)| *ts <= t) - 1;
            let (t0, p0) = &samples[idx];
            let (t1, p1) = &samples[idx + 1];
            let h = t1 - t0;
            let w = (t - t0) / h;
            let p0 = DVector::from_vec(p0.clone());
            let p1 = DVector::from_vec(p1.clone());
            let vel = (&p1 - &p0) / h;
            (&p0 * (1.0 - w) + &p1 * w, vel, DVector::zeros(n))
        }
    }
}

/// Potential-field acceleration pushing a target position away from
/// obstacles: Σ (1/‖d‖ − 0.1)·d/‖d‖³ with d = p₀ − centerᵢ.
pub fn potential_field(
    p0: &VecN,
    obstacles: &[Obstacle],
    repulsive_only: bool,
) -> Result<VecN> {
    let mut field = VecN::zeros(p0.len());
    for ob in obstacles {
        let d = p0 - &ob.center;
        let dist = d.norm();
        if dist < 1e-9 {
            return Err(Error::Singularity(format!(
                "target coincides with obstacle center (distance {dist:e})"
            )));
        }
        let mut coeff = 1.0 / dist - 0.1;
        if repulsive_only {
            coeff = coeff.max(0.0);
        }
        field += d * (coeff / dist.powi(3));
    }
    Ok(field)
}

/// Second-order target dynamics: PD tracking of the reference plus the
/// obstacle potential field. Returns `(ṗ₀, p̈₀)`.
pub fn target_derivative(
    tg: &TargetState,
    t: f64,
    obstacles: &[Obstacle],
    cfg: &TargetDynamicsConfig,
) -> Result<(VecN, VecN)> {
    let (p_r, p_r_dot, p_r_ddot) = reference_signal(&tg.reference, t);
    let field = potential_field(&tg.p0, obstacles, cfg.repulsive_only)?;
    let damping = if cfg.literal_velocity_term {
        // the mixed form: (p_r − ṗ₀)
        &p_r - &tg.p0_dot
    } else {
        &p_r_dot - &tg.p0_dot
    };
    let p0_ddot = p_r_ddot + (&p_r - &tg.p0) * cfg.kp + damping * cfg.kd + field;
    Ok((tg.p0_dot.clone(), p0_ddot))
}

/// Advance the whole world by one fixed step under zero-order-hold
/// auxiliary inputs `v_all` (one per pursuer).
///
/// Pursuers use semi-implicit Euler (u first, then x with the updated u);
/// targets use velocity-Verlet with the linear damping term solved exactly.
/// The RK4 option integrates the joint smooth ODE instead.
pub fn integrate_step(
    w: &WorldState,
    v_all: &[VecN],
    d: &DisturbanceModel,
    plant: &Plant,
    target_cfg: &TargetDynamicsConfig,
    integrator: Integrator,
    dt: f64,
) -> Result<WorldState> {
    if dt <= 0.0 {
        return Err(Error::InvalidScenario(format!("dt must be positive, got {dt}")));
    }
    if v_all.len() != w.pursuers.len() {
        return Err(Error::DimensionMismatch {
            expected: w.pursuers.len(),
            got: v_all.len(),
            context: "one v per pursuer",
        });
    }
    let next = match integrator {
        Integrator::SemiImplicitEuler => step_semi_implicit(w, v_all, d, plant, target_cfg, dt)?,
        Integrator::Rk4 => step_rk4(w, v_all, d, plant, target_cfg, dt)?,
    };
    for p in &next.pursuers {
        if !all_finite(&p.x) || !all_finite(&p.u) {
            return Err(Error::Diverged { t: next.t });
        }
    }
    for tg in &next.targets {
        if !all_finite(&tg.p0) || !all_finite(&tg.p0_dot) {
            return Err(Error::Diverged { t: next.t });
        }
    }
    Ok(next)
}

fn step_semi_implicit(
    w: &WorldState,
    v_all: &[VecN],
    d: &DisturbanceModel,
    plant: &Plant,
    target_cfg: &TargetDynamicsConfig,
    dt: f64,
) -> Result<WorldState> {
    let mut pursuers = Vec::with_capacity(w.pursuers.len());
    for (p, v) in w.pursuers.iter().zip(v_all) {
        if v.len() != p.x.len() {
            return Err(Error::DimensionMismatch {
                expected: p.x.len(),
                got: v.len(),
                context: "auxiliary input v",
            });
        }
        let u_next = &p.u + (v + d.z_xi(&p.x)) * dt;
        let x_next =
            &p.x + (plant.f(&p.x) + plant.g_mul(&p.x, &u_next) + d.y_theta(&p.x)) * dt;
        pursuers.push(PursuerState {
            x: x_next,
            u: u_next,
            id: p.id,
        });
    }

    let mut targets = Vec::with_capacity(w.targets.len());
    for tg in &w.targets {
        let (_, a0) = target_derivative(tg, w.t, &w.obstacles, target_cfg)?;
        let p_next = &tg.p0 + &tg.p0_dot * dt + &a0 * (0.5 * dt * dt);
        // velocity update: ṗ' = ṗ + dt/2 (a₀ + a₁) where a₁ contains the
        // damping −kd·ṗ'; linear in ṗ', solved in closed form
        let t_next = w.t + dt;
        let (p_r, p_r_dot, p_r_ddot) = reference_signal(&tg.reference, t_next);
        let field = potential_field(&p_next, &w.obstacles, target_cfg.repulsive_only)?;
        let a1_without_damping = if target_cfg.literal_velocity_term {
            &p_r_ddot + (&p_r - &p_next) * target_cfg.kp + &p_r * target_cfg.kd + field
        } else {
            &p_r_ddot + (&p_r - &p_next) * target_cfg.kp + &p_r_dot * target_cfg.kd + field
        };
        let denom = 1.0 + 0.5 * dt * target_cfg.kd;
        let v_next = (&tg.p0_dot + (&a0 + &a1_without_damping) * (0.5 * dt)) / denom;
        targets.push(TargetState {
            p0: p_next,
            p0_dot: v_next,
            reference: tg.reference.clone(),
        });
    }

    Ok(WorldState {
        t: w.t + dt,
        pursuers,
        targets,
        obstacles: w.obstacles.clone(),
    })
}

/// Flattened world derivative with zero-order-hold v, for RK4 and for
/// finite-difference oracles in tests.
pub fn world_derivative(
    w: &WorldState,
    v_all: &[VecN],
    d: &DisturbanceModel,
    plant: &Plant,
    target_cfg: &TargetDynamicsConfig,
) -> Result<WorldState> {
    // Encodes the derivative in the same layout as the state: pursuer x/u
    // slots hold ẋ/u̇, target p0/p0_dot slots hold ṗ₀/p̈₀.
    let mut pursuers = Vec::with_capacity(w.pursuers.len());
    for (p, v) in w.pursuers.iter().zip(v_all) {
        let (x_dot, u_dot) = pursuer_derivative(p, v, d, plant)?;
        pursuers.push(PursuerState {
            x: x_dot,
            u: u_dot,
            id: p.id,
        });
    }
    let mut targets = Vec::with_capacity(w.targets.len());
    for tg in &w.targets {
        let (p_dot, p_ddot) = target_derivative(tg, w.t, &w.obstacles, target_cfg)?;
        targets.push(TargetState {
            p0: p_dot,
            p0_dot: p_ddot,
            reference: tg.reference.clone(),
        });
    }
    Ok(WorldState {
        t: 1.0, // dt/dt
        pursuers,
        targets,
        obstacles: w.obstacles.clone(),
    })
}

fn world_axpy(w: &WorldState, k: &WorldState, h: f64) -> WorldState {
    WorldState {
        t: w.t + k.t * h,
        pursuers: w
            .pursuers
            .iter()
            .zip(&k.pursuers)
            .map(|(p, kp)| PursuerState {
                x: &p.x + &kp.x * h,
                u: &p.u + &kp.u * h,
                id: p.id,
            })
            .collect(),
        targets: w
            .targets
            .iter()
            .zip(&k.targets)
            .map(|(tg, kt)| TargetState {
                p0: &tg.p0 + &kt.p0 * h,
                p0_dot: &tg.p0_dot + &kt.p0_dot * h,
                reference: tg.reference.clone(),
            })
            .collect(),
        obstacles: w.obstacles.clone(),
    }
}

fn step_rk4(
    w: &WorldState,
    v_all: &[VecN],
    d: &DisturbanceModel,
    plant: &Plant,
    target_cfg: &TargetDynamicsConfig,
    dt: f64,
) -> Result<WorldState> {
    let k1 = world_derivative(w, v_all, d, plant, target_cfg)?;
    let w2 = world_axpy(w, &k1, dt / 2.0);
    let k2 = world_derivative(&w2, v_all, d, plant, target_cfg)?;
    let w3 = world_axpy(w, &k2, dt / 2.0);
    let k3 = world_derivative(&w3, v_all, d, plant, target_cfg)?;
    let w4 = world_axpy(w, &k3, dt);
    let k4 = world_derivative(&w4, v_all, d, plant, target_cfg)?;

    let mut out = w.clone();
    out.t = w.t + dt;
    for i in 0..w.pursuers.len() {
        out.pursuers[i].x = &w.pursuers[i].x
            + (&k1.pursuers[i].x + &k2.pursuers[i].x * 2.0 + &k3.pursuers[i].x * 2.0
                + &k4.pursuers[i].x)
                * (dt / 6.0);
        out.pursuers[i].u = &w.pursuers[i].u
            + (&k1.pursuers[i].u + &k2.pursuers[i].u * 2.0 + &k3.pursuers[i].u * 2.0
                + &k4.pursuers[i].u)
                * (dt / 6.0);
    }
    for j in 0..w.targets.len() {
        out.targets[j].p0 = &w.targets[j].p0
            + (&k1.targets[j].p0 + &k2.targets[j].p0 * 2.0 + &k3.targets[j].p0 * 2.0
                + &k4.targets[j].p0)
                * (dt / 6.0);
        out.targets[j].p0_dot = &w.targets[j].p0_dot
            + (&k1.targets[j].p0_dot
                + &k2.targets[j].p0_dot * 2.0
                + &k3.targets[j].p0_dot * 2.0
                + &k4.targets[j].p0_dot)
                * (dt / 6.0);
    }
    Ok(out)
}
