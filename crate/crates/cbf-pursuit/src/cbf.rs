//! Barrier functions and robustified linear-in-v constraint rows.
//!
//! Three families of safety conditions are encoded as half-spaces
//! `aᵀv ≥ b` in the auxiliary input:
//!
//! * input saturation, via the state-dependent bound `h_u = κ(ζ)² − ‖u‖²`
//!   with `κ(ζ) = c + 1/((ζᵀζ − ℓ²)² + ε)` (relative degree 1 in v),
//! * collision, via `h_c = ‖ϰ_k‖² − r²` for every other agent and obstacle
//!   (relative degree 2, second-order condition ḧ + ι ḣ + α h ≥ 0),
//! * sensing, via `h_s = R² − ‖ζ‖²` (relative degree 2).
//!
//! All derivative coefficients are computed exactly from the closed forms;
//! uncertainty enters split into a mean part evaluated at the current
//! estimates (θ̂, ξ̂) and a worst case weighted by the certified bounds
//! (ν̄, η̄) and the agent motion bounds (ρ_v, ρ_a). The positive
//! `‖ẋ − ṗ‖²` curvature term of ḧ_c is dropped, which only tightens the
//! collision rows; the sensing row follows the admissible-set statement,
//! which carries no curvature term.

use serde::{Deserialize, Serialize};

use crate::dynamics::{DisturbanceModel, MatNP, Plant, VecN};
use crate::error::{Error, Result};

/// Gains and radii of the safety filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyParams {
    /// Collision radius r.
    pub r: f64,
    /// Sensing radius R.
    pub big_r: f64,
    /// Static floor c of the input bound κ.
    pub kappa_c: f64,
    /// Resonance radius ℓ of κ (where the bound relaxes).
    pub kappa_ell: f64,
    /// Regularizer ε of κ.
    pub kappa_eps: f64,
    /// Linear class-K slope: α(h) = alpha0·h.
    pub alpha0: f64,
    /// First-derivative gain ι of the collision chain.
    pub iota: f64,
    /// First-derivative gain ı_t of the sensing chain.
    pub iota_t: f64,
    /// Bound on the own-target velocity ‖q̇‖ hedged in the input row.
    /// The hedge multiplies the κ-gradient norm, which peaks in the
    /// hundreds near the relaxation radius ℓ, so only small values keep
    /// the input row satisfiable across the operating band.
    pub rho_v: f64,
    /// Bound on other-agent acceleration ‖p̈_k‖.
    pub rho_a: f64,
    /// Plausibility cap on per-row demand b/‖a‖; rows demanding more than
    /// this acceleration are treated as unsatisfiable and handed to the
    /// relaxation fallback.
    pub v_cap: f64,
}

impl Default for SafetyParams {
    fn default() -> Self {
        Self {
            r: 0.5,
            big_r: 1.0,
            kappa_c: 2.0,
            kappa_ell: 1.0,
            kappa_eps: 0.1,
            alpha0: 6.0,
            // collision chains slightly under critical damping, sensing
            // chain critically damped: ι = 0.65·2√α₀, ı_t = 2√α₀
            iota: 3.184_336_665_618_131,
            iota_t: 4.898_979_485_566_356,
            rho_v: 0.1,
            rho_a: 0.35,
            v_cap: 8.0,
        }
    }
}

impl SafetyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.big_r > self.r) {
            return Err(Error::InvalidScenario(format!(
                "need 0 < r < R, got r = {}, R = {}",
                self.r, self.big_r
            )));
        }
        for (name, v) in [
            ("kappa_c", self.kappa_c),
            ("kappa_ell", self.kappa_ell),
            ("kappa_eps", self.kappa_eps),
            ("alpha0", self.alpha0),
            ("iota", self.iota),
            ("iota_t", self.iota_t),
            ("v_cap", self.v_cap),
        ] {
            if v <= 0.0 {
                return Err(Error::InvalidScenario(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.rho_v < 0.0 || self.rho_a < 0.0 {
            return Err(Error::InvalidScenario("rho_v, rho_a must be >= 0".into()));
        }
        Ok(())
    }
}

/// Which safety condition a row encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Input,
    /// Index into the ϰ list (other pursuers, then targets, then obstacles).
    Collision(usize),
    Sensing,
}

/// One linear-in-v constraint: the half-space `aᵀv ≥ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub a: VecN,
    pub b: f64,
    pub kind: ConstraintKind,
    /// Barrier value h of the encoded condition.
    pub h_value: f64,
    /// Chain value ḣ|mean + α·h, the second element of the HOCBF chain
    /// evaluated with the mean disturbance model (monitoring only).
    pub hbar_value: f64,
}

/// Per-step snapshot everything row generation needs.
#[derive(Debug, Clone)]
pub struct ConstraintContext {
    pub x: VecN,
    pub u: VecN,
    /// ζ = x − q (own target).
    pub zeta: VecN,
    /// ϰ_k = x − p_k for every other agent and obstacle.
    pub kappas: Vec<VecN>,
    /// Measured velocity of p_k where available (tracked bodies); None
    /// falls back to the position-only treatment with worst-case motion
    /// bounds.
    pub others_vel: Vec<Option<VecN>>,
    /// Measured acceleration of p_k where available; the rho_a bound then
    /// only hedges the tracker residual.
    pub others_acc: Vec<Option<VecN>>,
    pub theta_hat: VecN,
    pub xi_hat: f64,
    pub nu_bar: f64,
    pub eta_bar: f64,
    pub y: MatNP,
    pub z: VecN,
    /// Ẏ along the estimated flow ẋ = f + g u + Y θ̂.
    pub y_dot: MatNP,
    /// Estimated own velocity f + g u + Y θ̂.
    pub x_dot_est: VecN,
    /// Estimated band-relative velocity ζ̇ = ẋ_est − q̇ (measured q̇).
    pub zeta_dot_est: VecN,
    /// Measured own-target acceleration q̈.
    pub target_acc: VecN,
    pub plant: Plant,
}

impl ConstraintContext {
    /// Assemble the snapshot. `others` holds the positions p_k of every
    /// agent and obstacle the pursuer must avoid, in a fixed order, with
    /// measured velocities where available.
    #[allow(clippy::too_many_arguments)]
    #[allow(clippy::too_many_arguments)]
    pub fn build_with_tracking(
        x: VecN,
        u: VecN,
        target_pos: &VecN,
        target_vel: &VecN,
        target_acc: VecN,
        others: &[VecN],
        others_vel: Vec<Option<VecN>>,
        others_acc: Vec<Option<VecN>>,
        theta_hat: VecN,
        xi_hat: f64,
        nu_bar: f64,
        eta_bar: f64,
        d: &DisturbanceModel,
        plant: Plant,
    ) -> Result<Self> {
        let zeta = &x - target_pos;
        let mut kappas = Vec::with_capacity(others.len());
        for p_k in others {
            let kappa = &x - p_k;
            let dist = kappa.norm();
            if dist < 1e-9 {
                return Err(Error::CoincidentPositions { dist });
            }
            kappas.push(kappa);
        }
        let others_vel = if others_vel.is_empty() {
            vec![None; others.len()]
        } else {
            others_vel
        };
        let others_acc = if others_acc.is_empty() {
            vec![None; others.len()]
        } else {
            others_acc
        };
        if others_vel.len() != others.len() || others_acc.len() != others.len() {
            return Err(Error::DimensionMismatch {
                expected: others.len(),
                got: others_vel.len().min(others_acc.len()),
                context: "one velocity/acceleration slot per avoided body",
            });
        }
        let y = d.y(&x);
        let z = d.z(&x);
        let x_dot_est = plant.f(&x) + plant.g_mul(&x, &u) + &y * &theta_hat;
        let y_dot = d.y_dot(&x, &x_dot_est);
        let zeta_dot_est = &x_dot_est - target_vel;
        Ok(Self {
            x,
            u,
            zeta,
            kappas,
            others_vel,
            others_acc,
            theta_hat,
            xi_hat,
            nu_bar,
            eta_bar,
            y,
            z,
            y_dot,
            x_dot_est,
            zeta_dot_est,
            target_acc,
            plant,
        })
    }

    /// Position/velocity-only snapshot: no measured accelerations.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        x: VecN,
        u: VecN,
        target_pos: &VecN,
        target_vel: &VecN,
        others: &[VecN],
        others_vel: Vec<Option<VecN>>,
        theta_hat: VecN,
        xi_hat: f64,
        nu_bar: f64,
        eta_bar: f64,
        d: &DisturbanceModel,
        plant: Plant,
    ) -> Result<Self> {
        let n = x.len();
        Self::build_with_tracking(
            x,
            u,
            target_pos,
            target_vel,
            VecN::zeros(n),
            others,
            others_vel,
            vec![],
            theta_hat,
            xi_hat,
            nu_bar,
            eta_bar,
            d,
            plant,
        )
    }
}

// ───────────────────────── barrier evaluations ─────────────────────────

/// State-dependent input bound κ(ζ) = c + 1/((ζᵀζ − ℓ²)² + ε).
pub fn kappa(zeta: &VecN, p: &SafetyParams) -> f64 {
    let d = zeta.dot(zeta) - p.kappa_ell * p.kappa_ell;
    p.kappa_c + 1.0 / (d * d + p.kappa_eps)
}

/// Coefficient w such that ∂(κ²)/∂ζ = w·ζ.
pub fn kappa_sq_grad_coeff(zeta: &VecN, p: &SafetyParams) -> f64 {
    let d = zeta.dot(zeta) - p.kappa_ell * p.kappa_ell;
    let denom = d * d + p.kappa_eps;
    -8.0 * kappa(zeta, p) * d / (denom * denom)
}

/// All barrier values at once.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierValues {
    pub h_u: f64,
    pub h_s: f64,
    pub h_c: Vec<f64>,
}

pub fn barrier_values(ctx: &ConstraintContext, p: &SafetyParams) -> BarrierValues {
    let k = kappa(&ctx.zeta, p);
    BarrierValues {
        h_u: k * k - ctx.u.dot(&ctx.u),
        h_s: p.big_r * p.big_r - ctx.zeta.dot(&ctx.zeta),
        h_c: ctx
            .kappas
            .iter()
            .map(|kv| kv.dot(kv) - p.r * p.r)
            .collect(),
    }
}

// ───────────────────────── constraint rows ─────────────────────────

/// Input-saturation row: ḣ_u + α h_u ≥ 0 with the v coefficient −2u.
pub fn input_row(ctx: &ConstraintContext, p: &SafetyParams) -> ConstraintRow {
    let w = kappa_sq_grad_coeff(&ctx.zeta, p);
    let grad = &ctx.zeta * w;
    let k = kappa(&ctx.zeta, p);
    let h_u = k * k - ctx.u.dot(&ctx.u);

    let mean_kappa_term = grad.dot(&ctx.zeta_dot_est);
    let u_z = ctx.u.dot(&ctx.z);
    // ‖Y‖ as the Frobenius norm: equals the column norm for p = 1 and
    // upper-bounds the operator norm otherwise.
    let y_norm = ctx.y.norm();
    let worst = grad.norm() * (y_norm * ctx.nu_bar + p.rho_v) + 2.0 * u_z.abs() * ctx.eta_bar;
    let l = mean_kappa_term - 2.0 * u_z * ctx.xi_hat - worst;

    let mean_h_dot = mean_kappa_term - 2.0 * u_z * ctx.xi_hat;
    ConstraintRow {
        a: &ctx.u * -2.0,
        b: -l - p.alpha0 * h_u,
        kind: ConstraintKind::Input,
        h_value: h_u,
        hbar_value: mean_h_dot + p.alpha0 * h_u,
    }
}

/// Collision row for the k-th avoided agent/obstacle:
/// ḧ_c + ι ḣ_c + α h_c ≥ 0 with the v coefficient +2 gᵀϰ.
pub fn collision_row(ctx: &ConstraintContext, k: usize, p: &SafetyParams) -> Result<ConstraintRow> {
    let kv = &ctx.kappas[k];
    let dist = kv.norm();
    if dist < 1e-9 {
        return Err(Error::CoincidentPositions { dist });
    }
    let h_c = dist * dist - p.r * p.r;

    let g_t_kappa = ctx.plant.g_transpose_mul(&ctx.x, kv);
    // exact second-derivative pieces (zero for the single-integrator plant)
    let f_dot = ctx.plant.f_dot(&ctx.x, &ctx.x_dot_est);
    let g_dot_u = ctx.plant.g_dot_mul(&ctx.x, &ctx.x_dot_est, &ctx.u);
    let exact_second = 2.0 * kv.dot(&(f_dot + g_dot_u));

    let ydot_t_kappa = ctx.y_dot.transpose() * kv;
    let y_t_kappa = ctx.y.transpose() * kv;
    let gz = g_t_kappa.dot(&ctx.z);
    // relative velocity: measured for the own target, estimated-own-only
    // (worst-case bounds cover the rest) for position-only bodies
    let rel_vel = match &ctx.others_vel[k] {
        Some(vel) => &ctx.x_dot_est - vel,
        None => ctx.x_dot_est.clone(),
    };
    let acc_mean = match &ctx.others_acc[k] {
        Some(acc) => -2.0 * kv.dot(acc),
        None => 0.0,
    };

    let l = exact_second
        + acc_mean
        + 2.0 * ydot_t_kappa.dot(&ctx.theta_hat)
        - 2.0 * ydot_t_kappa.norm() * ctx.nu_bar
        - 2.0 * dist * p.rho_a
        + 2.0 * gz * ctx.xi_hat
        - 2.0 * gz.abs() * ctx.eta_bar
        + p.iota * (2.0 * kv.dot(&rel_vel) - 2.0 * y_t_kappa.norm() * ctx.nu_bar);

    let mean_h_dot = 2.0 * kv.dot(&rel_vel);
    Ok(ConstraintRow {
        a: g_t_kappa * 2.0,
        b: -l - p.alpha0 * h_c,
        kind: ConstraintKind::Collision(k),
        h_value: h_c,
        hbar_value: mean_h_dot + p.alpha0 * h_c,
    })
}

/// Sensing-range row: ḧ_s + ı_t ḣ_s + α h_s ≥ 0 with the v coefficient −2 gᵀζ.
pub fn sensing_row(ctx: &ConstraintContext, p: &SafetyParams) -> ConstraintRow {
    let zeta = &ctx.zeta;
    let dist = zeta.norm();
    let h_s = p.big_r * p.big_r - dist * dist;

    let g_t_zeta = ctx.plant.g_transpose_mul(&ctx.x, zeta);
    let f_dot = ctx.plant.f_dot(&ctx.x, &ctx.x_dot_est);
    let g_dot_u = ctx.plant.g_dot_mul(&ctx.x, &ctx.x_dot_est, &ctx.u);
    let exact_second = -2.0 * zeta.dot(&(f_dot + g_dot_u));

    let ydot_t_zeta = ctx.y_dot.transpose() * zeta;
    let y_t_zeta = ctx.y.transpose() * zeta;
    let gz = g_t_zeta.dot(&ctx.z);

    // the −2‖ζ̇‖² curvature of ḧ_s is sign-adverse for sensing (omitting
    // it overstates the recovery rate), and the mean relative velocity is
    // fully known, so it enters as an exact term
    let curvature = -2.0 * ctx.zeta_dot_est.dot(&ctx.zeta_dot_est);

    let acc_mean = 2.0 * zeta.dot(&ctx.target_acc);

    let l = exact_second
        + curvature
        + acc_mean
        - 2.0 * ydot_t_zeta.dot(&ctx.theta_hat)
        - (2.0 * p.iota_t * y_t_zeta.norm() + 2.0 * ydot_t_zeta.norm()) * ctx.nu_bar
        - 2.0 * dist * p.rho_a
        - 2.0 * gz * ctx.xi_hat
        - 2.0 * gz.abs() * ctx.eta_bar
        - p.iota_t * 2.0 * zeta.dot(&ctx.zeta_dot_est);

    let mean_h_dot = -2.0 * zeta.dot(&ctx.zeta_dot_est);
    ConstraintRow {
        a: g_t_zeta * -2.0,
        b: -l - p.alpha0 * h_s,
        kind: ConstraintKind::Sensing,
        h_value: h_s,
        hbar_value: mean_h_dot + p.alpha0 * h_s,
    }
}

/// Build the full row set for one pursuer: input, sensing, then one
/// collision row per avoided agent/obstacle.
pub fn all_rows(ctx: &ConstraintContext, p: &SafetyParams) -> Result<Vec<ConstraintRow>> {
    let mut rows = Vec::with_capacity(2 + ctx.kappas.len());
    rows.push(input_row(ctx, p));
    rows.push(sensing_row(ctx, p));
    for k in 0..ctx.kappas.len() {
        rows.push(collision_row(ctx, k, p)?);
    }
    Ok(rows)
}

// ───────────────────────── HOCBF chain ─────────────────────────

/// First two elements of the barrier chain: ħ₁ = h, ħ₂ = ḣ + α₀·h.
/// Used to monitor the initial-condition requirement ħ(0) > 0.
pub fn hocbf_chain(h: f64, h_dot: f64, alpha0: f64) -> (f64, f64) {
    (h, h_dot + alpha0 * h)
}

/// Second-order chain residual ḧ + gain·ḣ + α₀·h encoded by the
/// relative-degree-2 rows.
pub fn hocbf_residual(h: f64, h_dot: f64, h_ddot: f64, gain: f64, alpha0: f64) -> f64 {
    h_ddot + gain * h_dot + alpha0 * h
}

// ───────────────────── exact derivatives (full knowledge) ─────────────────────

/// Time derivatives of the barrier functions evaluated with the true
/// disturbance coefficients and true neighbor motion. These power the
/// finite-difference fidelity tests and scenario validation; the rows above
/// never see the true values.
pub mod exact {
    use super::*;

    /// True ẋ = f + g u + Y(x)θ.
    pub fn x_dot_true(x: &VecN, u: &VecN, d: &DisturbanceModel, plant: &Plant) -> VecN {
        plant.f(x) + plant.g_mul(x, u) + d.y_theta(x)
    }

    /// True ẍ = ḟ + ġ u + g(v + Zξ) + Ẏθ.
    pub fn x_ddot_true(x: &VecN, u: &VecN, v: &VecN, d: &DisturbanceModel, plant: &Plant) -> VecN {
        let x_dot = x_dot_true(x, u, d, plant);
        plant.f_dot(x, &x_dot)
            + plant.g_dot_mul(x, &x_dot, u)
            + plant.g_mul(x, &(v + d.z_xi(x)))
            + d.y_dot(x, &x_dot) * &d.theta
    }

    pub fn h_u_dot(
        zeta: &VecN,
        x: &VecN,
        u: &VecN,
        v: &VecN,
        q_dot: &VecN,
        d: &DisturbanceModel,
        plant: &Plant,
        p: &SafetyParams,
    ) -> f64 {
        let w = kappa_sq_grad_coeff(zeta, p);
        let zeta_dot = x_dot_true(x, u, d, plant) - q_dot;
        w * zeta.dot(&zeta_dot) - 2.0 * u.dot(&(v + d.z_xi(x)))
    }

    pub fn h_c_dot(kappa_v: &VecN, x_dot: &VecN, p_dot: &VecN) -> f64 {
        2.0 * kappa_v.dot(&(x_dot - p_dot))
    }

    pub fn h_c_ddot(kappa_v: &VecN, kappa_dot: &VecN, x_ddot: &VecN, p_ddot: &VecN) -> f64 {
        2.0 * kappa_dot.dot(kappa_dot) + 2.0 * kappa_v.dot(&(x_ddot - p_ddot))
    }

    pub fn h_s_dot(zeta: &VecN, x_dot: &VecN, q_dot: &VecN) -> f64 {
        -2.0 * zeta.dot(&(x_dot - q_dot))
    }

    pub fn h_s_ddot(zeta: &VecN, zeta_dot: &VecN, x_ddot: &VecN, q_ddot: &VecN) -> f64 {
        -2.0 * zeta_dot.dot(zeta_dot) - 2.0 * zeta.dot(&(x_ddot - q_ddot))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DisturbanceModel;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn vec3(a: f64, b: f64, c: f64) -> VecN {
        DVector::from_vec(vec![a, b, c])
    }

    fn unit_params() -> SafetyParams {
        SafetyParams {
            alpha0: 1.0,
            iota: 1.0,
            iota_t: 1.0,
            rho_v: 0.0,
            rho_a: 0.0,
            ..SafetyParams::default()
        }
    }

    /// Context with no disturbance, zero bounds, explicit geometry.
    fn bare_ctx(x: VecN, u: VecN, target: VecN, others: Vec<VecN>) -> ConstraintContext {
        let d = DisturbanceModel::zero(1);
        let zero_vel = DVector::zeros(x.len());
        ConstraintContext::build(
            x,
            u,
            &target,
            &zero_vel,
            &others,
            vec![],
            DVector::zeros(1),
            0.0,
            0.0,
            0.0,
            &d,
            Plant::SingleIntegrator,
        )
        .unwrap()
    }

    #[test]
    fn kappa_at_resonance_radius() {
        let p = SafetyParams::default();
        // ‖ζ‖ = ℓ → κ = c + 1/ε = 2 + 10
        let zeta = vec3(p.kappa_ell, 0.0, 0.0);
        assert_relative_eq!(kappa(&zeta, &p), 12.0, epsilon = 1e-12);
    }

    #[test]
    fn kappa_far_field() {
        let p = SafetyParams::default();
        let zeta = vec3(10.0, 0.0, 0.0);
        let expected = 2.0 + 1.0 / (99.0f64 * 99.0 + 0.1);
        assert_relative_eq!(kappa(&zeta, &p), expected, epsilon = 1e-12);
        assert!((kappa(&zeta, &p) - 2.000102).abs() < 1e-6);
    }

    #[test]
    fn kappa_symmetric() {
        let p = SafetyParams::default();
        for i in 0..20 {
            let z = vec3(0.1 * i as f64, (i as f64).sin(), 0.3);
            assert_relative_eq!(kappa(&z, &p), kappa(&(-&z), &p), epsilon = 1e-15);
        }
    }

    #[test]
    fn barrier_value_examples() {
        let p = SafetyParams::default();
        let ctx = bare_ctx(
            vec3(1.0, 0.0, 0.0),
            vec3(0.0, 0.0, 0.0),
            vec3(0.0, 0.0, 0.0),
            vec![vec3(0.0, 0.0, 0.0)],
        );
        let hv = barrier_values(&ctx, &p);
        assert_relative_eq!(hv.h_c[0], 0.75, epsilon = 1e-12);
        // ‖ζ‖ = R = 1 → h_s = 0 (boundary case)
        assert_relative_eq!(hv.h_s, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn h_u_from_kappa_and_speed() {
        let p = SafetyParams::default();
        // put ζ exactly at ℓ so κ = 12, then h_u = 144 − 9
        let ctx = bare_ctx(
            vec3(1.0, 0.0, 0.0),
            vec3(3.0, 0.0, 0.0),
            vec3(0.0, 0.0, 0.0),
            vec![vec3(5.0, 5.0, 5.0)],
        );
        let hv = barrier_values(&ctx, &p);
        assert_relative_eq!(hv.h_u, 135.0, epsilon = 1e-9);
    }

    #[test]
    fn input_row_degenerates_at_zero_u() {
        let p = unit_params();
        let ctx = bare_ctx(
            vec3(0.7, 0.0, 0.0),
            vec3(0.0, 0.0, 0.0),
            vec3(0.0, 0.0, 0.0),
            vec![vec3(5.0, 0.0, 0.0)],
        );
        let row = input_row(&ctx, &p);
        assert_relative_eq!(row.a.norm(), 0.0, epsilon = 1e-15);
        // with no disturbance and zero bounds, b = −α·h_u ≤ 0: vacuous
        let k = kappa(&ctx.zeta, &p);
        assert_relative_eq!(row.b, -k * k, epsilon = 1e-9);
        assert!(row.b <= 0.0);
    }

    #[test]
    fn input_row_stationary_geometry() {
        // u ≠ 0 gives the row a lever; stationary geometry (zero estimated
        // flow) leaves b = −α h_u − (−2uᵀZξ̂) with Z active
        let p = unit_params();
        let d = DisturbanceModel::sinusoidal(1.0, 1.0);
        let x = vec3(0.7, 0.0, 0.0);
        let u = vec3(0.2, 0.0, 0.0);
        let ctx = ConstraintContext::build(
            x.clone(),
            u.clone(),
            &vec3(0.0, 0.0, 0.0),
            &vec3(0.0, 0.0, 0.0),
            &[vec3(5.0, 0.0, 0.0)],
            vec![],
            DVector::zeros(1),
            0.8,
            0.0,
            0.0,
            &d,
            Plant::SingleIntegrator,
        )
        .unwrap();
        let row = input_row(&ctx, &p);
        let k = kappa(&ctx.zeta, &p);
        let h_u = k * k - u.dot(&u);
        let w = kappa_sq_grad_coeff(&ctx.zeta, &p);
        let mean = w * ctx.zeta.dot(&ctx.zeta_dot_est);
        let uz = u.dot(&ctx.z);
        let expected_b = -(mean - 2.0 * uz * 0.8) - h_u;
        assert_relative_eq!(row.b, expected_b, epsilon = 1e-12);
        assert_relative_eq!(row.a, &u * -2.0, epsilon = 1e-15);
    }

    #[test]
    fn collision_row_static_geometry() {
        let p = unit_params();
        let ctx = bare_ctx(
            vec3(1.0, 0.0, 0.0),
            vec3(0.0, 0.0, 0.0),
            vec3(2.0, 0.0, 0.0),
            vec![vec3(0.0, 0.0, 0.0)],
        );
        let row = collision_row(&ctx, 0, &p).unwrap();
        // hand expansion: ħ_c = 2ϰᵀv + ι·0 + α·h_c with h_c = 0.75
        assert_relative_eq!(row.a, vec3(2.0, 0.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(row.b, -0.75, epsilon = 1e-12);
    }

    #[test]
    fn collision_row_velocity_lowers_b() {
        let p = unit_params();
        let base = bare_ctx(
            vec3(1.0, 0.0, 0.0),
            vec3(0.0, 0.0, 0.0),
            vec3(2.0, 0.0, 0.0),
            vec![vec3(0.0, 0.0, 0.0)],
        );
        let moving = bare_ctx(
            vec3(1.0, 0.0, 0.0),
            vec3(1.0, 0.0, 0.0),
            vec3(2.0, 0.0, 0.0),
            vec![vec3(0.0, 0.0, 0.0)],
        );
        let row0 = collision_row(&base, 0, &p).unwrap();
        let row1 = collision_row(&moving, 0, &p).unwrap();
        // ḣ_c = 2ϰᵀu = 2; the exact ḧ_c term 2‖u‖² = 2 is dropped, so b
        // falls by exactly ι·2
        assert_relative_eq!(row0.b - row1.b, p.iota * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn collision_row_rho_a_tightens_exactly() {
        let mut p = unit_params();
        let ctx = bare_ctx(
            vec3(1.0, 0.0, 0.0),
            vec3(0.3, 0.1, 0.0),
            vec3(2.0, 0.0, 0.0),
            vec![vec3(0.0, 0.0, 0.0)],
        );
        let b0 = collision_row(&ctx, 0, &p).unwrap().b;
        p.rho_a = 0.7;
        let b1 = collision_row(&ctx, 0, &p).unwrap().b;
        let dist = ctx.kappas[0].norm();
        assert_relative_eq!(b1 - b0, 2.0 * dist * 0.7, epsilon = 1e-12);
    }

    #[test]
    fn collision_row_coincident_error() {
        let d = DisturbanceModel::zero(1);
        let r = ConstraintContext::build(
            vec3(1.0, 0.0, 0.0),
            vec3(0.0, 0.0, 0.0),
            &vec3(0.0, 0.0, 0.0),
            &vec3(0.0, 0.0, 0.0),
            &[vec3(1.0, 0.0, 0.0)],
            vec![],
            DVector::zeros(1),
            0.0,
            0.0,
            0.0,
            &d,
            Plant::SingleIntegrator,
        );
        assert!(matches!(r, Err(Error::CoincidentPositions { .. })));
    }

    #[test]
    fn sensing_row_boundary_case() {
        let p = unit_params();
        let ctx = bare_ctx(
            vec3(0.6, 0.8, 0.0),
            vec3(0.0, 0.0, 0.0),
            vec3(0.0, 0.0, 0.0),
            vec![vec3(5.0, 0.0, 0.0)],
        );
        let row = sensing_row(&ctx, &p);
        // ‖ζ‖ = 1 = R → h_s = 0, row: −2(0.6 v₁ + 0.8 v₂) ≥ 0
        assert_relative_eq!(row.a, vec3(-1.2, -1.6, 0.0), epsilon = 1e-12);
        assert_relative_eq!(row.b, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sensing_row_vacuous_at_center() {
        let p = unit_params();
        let ctx = bare_ctx(
            vec3(0.0, 0.0, 0.0),
            vec3(0.1, 0.0, 0.0),
            vec3(0.0, 0.0, 0.0),
            vec![vec3(5.0, 0.0, 0.0)],
        );
        let row = sensing_row(&ctx, &p);
        assert_relative_eq!(row.a.norm(), 0.0, epsilon = 1e-15);
        // b = −α·R² plus the 2‖ζ̇‖² curvature (ζ̇ = u here): still vacuous
        let expected = -p.alpha0 * p.big_r * p.big_r + 2.0 * ctx.u.dot(&ctx.u);
        assert_relative_eq!(row.b, expected, epsilon = 1e-12);
        assert!(row.b <= 0.0);
    }

    #[test]
    fn sensing_row_rho_a_tightens_exactly() {
        let mut p = unit_params();
        let ctx = bare_ctx(
            vec3(0.5, 0.3, 0.0),
            vec3(0.2, 0.0, 0.1),
            vec3(0.0, 0.0, 0.0),
            vec![vec3(5.0, 0.0, 0.0)],
        );
        let b0 = sensing_row(&ctx, &p).b;
        p.rho_a *= 2.0;
        p.rho_a += 0.4; // from 0 in unit_params; set a real delta
        let b1 = sensing_row(&ctx, &p).b;
        assert_relative_eq!(b1 - b0, 2.0 * ctx.zeta.norm() * 0.4, epsilon = 1e-12);
    }

    #[test]
    fn rows_only_tighten_with_bounds() {
        // monotone conservatism: raising ν̄, η̄, ρ_v, ρ_a never lowers b
        let d = DisturbanceModel::sinusoidal(1.0, 1.0);
        let mk = |nu: f64, eta: f64| {
            ConstraintContext::build(
                vec3(0.6, 0.2, -0.3),
                vec3(0.4, -0.1, 0.2),
                &vec3(0.0, 0.0, 0.1),
                &vec3(0.2, -0.1, 0.0),
                &[vec3(1.5, 0.0, 0.0), vec3(-0.4, 0.8, 0.0)],
                vec![],
                DVector::from_vec(vec![0.9]),
                0.9,
                nu,
                eta,
                &d,
                Plant::SingleIntegrator,
            )
            .unwrap()
        };
        let base_p = SafetyParams::default();
        let base = all_rows(&mk(0.1, 0.1), &base_p).unwrap();
        let raised_nu = all_rows(&mk(0.5, 0.1), &base_p).unwrap();
        let raised_eta = all_rows(&mk(0.1, 0.5), &base_p).unwrap();
        let mut p_rho_v = base_p.clone();
        p_rho_v.rho_v += 1.0;
        let raised_rho_v = all_rows(&mk(0.1, 0.1), &p_rho_v).unwrap();
        let mut p_rho_a = base_p.clone();
        p_rho_a.rho_a += 1.0;
        let raised_rho_a = all_rows(&mk(0.1, 0.1), &p_rho_a).unwrap();
        for raised in [raised_nu, raised_eta, raised_rho_v, raised_rho_a] {
            for (r0, r1) in base.iter().zip(raised.iter()) {
                assert!(
                    r1.b >= r0.b - 1e-12,
                    "row {:?} loosened when a bound grew",
                    r0.kind
                );
            }
        }
    }

    #[test]
    fn chain_examples() {
        assert_relative_eq!(hocbf_chain(1.0, 0.0, 1.0).1, 1.0);
        assert_relative_eq!(hocbf_chain(0.0, -1.0, 1.0).1, -1.0);
        assert_relative_eq!(hocbf_residual(0.75, 2.0, 0.5, 1.0, 1.0), 3.25);
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        // ∂(κ²)/∂ζ, ∂h_u/∂(ζ,u), ∂h_s/∂ζ, ∂h_c/∂ϰ over 200 pseudo-random states
        let p = SafetyParams::default();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..200 {
            let s = i as f64;
            let zeta = vec3(
                0.3 + (s * 0.37).sin().abs() + 0.05,
                (s * 0.73).cos() * 0.8,
                (s * 0.19).sin() * 0.6,
            );
            let u = vec3((s * 0.11).sin(), (s * 0.29).cos() * 0.5, 0.3);
            let kappa_sq = |z: &VecN| {
                let kk = kappa(z, &p);
                kk * kk
            };
            let w = kappa_sq_grad_coeff(&zeta, &p);
            for dim in 0..3 {
                let mut zp = zeta.clone();
                let mut zm = zeta.clone();
                zp[dim] += h;
                zm[dim] -= h;
                let fd = (kappa_sq(&zp) - kappa_sq(&zm)) / (2.0 * h);
                let analytic = w * zeta[dim];
                let denom = fd.abs().max(analytic.abs()).max(1e-3);
                worst = worst.max((fd - analytic).abs() / denom);
                // h_s gradient: −2ζ
                let fd_hs = ((p.big_r.powi(2) - zp.dot(&zp)) - (p.big_r.powi(2) - zm.dot(&zm)))
                    / (2.0 * h);
                worst = worst.max((fd_hs + 2.0 * zeta[dim]).abs() / fd_hs.abs().max(1e-3));
                // h_c gradient: +2ϰ (same quadratic form)
                let fd_hc = ((zp.dot(&zp) - p.r.powi(2)) - (zm.dot(&zm) - p.r.powi(2)))
                    / (2.0 * h);
                worst = worst.max((fd_hc - 2.0 * zeta[dim]).abs() / fd_hc.abs().max(1e-3));
                // h_u gradient in u: −2u
                let mut up = u.clone();
                let mut um = u.clone();
                up[dim] += h;
                um[dim] -= h;
                let fd_hu = (-up.dot(&up) + um.dot(&um)) / (2.0 * h);
                worst = worst.max((fd_hu + 2.0 * u[dim]).abs() / fd_hu.abs().max(1e-3));
            }
        }
        assert!(worst < 1e-5, "worst relative gradient error {worst}");
    }

    #[test]
    fn rows_scale_consistently() {
        // multiplying (a, b) by s > 0 keeps the same half-space
        let ctx = bare_ctx(
            vec3(0.9, 0.1, 0.0),
            vec3(0.5, -0.2, 0.1),
            vec3(0.2, 0.0, 0.0),
            vec![vec3(0.0, 0.0, 0.0)],
        );
        let p = unit_params();
        let row = collision_row(&ctx, 0, &p).unwrap();
        let v = vec3(0.3, 0.7, -0.2);
        for s in [0.5, 2.0, 13.0] {
            let sat0 = row.a.dot(&v) >= row.b;
            let sat1 = (&row.a * s).dot(&v) >= row.b * s;
            assert_eq!(sat0, sat1);
        }
    }
}
