//! Integral concurrent-learning estimation of the disturbance coefficients
//! θ and ξ with certified error bounds.
//!
//! A ring buffer of window integrals drives the adaptive laws
//!
//! ```text
//!     θ̂̇ = γ_θ Σ_j 𝓨ⱼᵀ (Δxⱼ − 𝓨ⱼ θ̂ − 𝓕ⱼ − 𝓖ⱼ)
//!     ξ̂̇ = γ_ξ Σ_j 𝓩ⱼᵀ (Δuⱼ − 𝓩ⱼ ξ̂ − 𝓥ⱼ)
//! ```
//!
//! where 𝓕, 𝓨, 𝓖, 𝓩, 𝓥 are integrals of f, Y, g·u, Z, v over the trailing
//! window. The residual of the x-channel isolates 𝓨θ̃ and the residual of
//! the u-channel isolates 𝓩ξ̃ (the u-channel increment is Δu = 𝓥 + 𝓩ξ, so
//! its regression must difference u, not x). Estimates stay inside their
//! configured boxes by projection; the certified error bounds ν̄, η̄ decay
//! as exp(−γ ∫ λ_min(Σ 𝓨ᵀ𝓨)).

use std::collections::VecDeque;

use nalgebra::DVector;

use crate::dynamics::{DisturbanceModel, MatNP, Plant, VecN};
use crate::error::{Error, Result};

/// How window integrals are discretized over the stored integrator steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, Default)]
pub enum Quadrature {
    /// Rectangle rules aligned with the semi-implicit Euler flow map:
    /// state regressors at the left node, g·u at the right node, v held
    /// zero-order. Reproduces the discrete window increments exactly, so
    /// the regression residual is exactly 𝓨θ̃ / 𝓩ξ̃.
    #[default]
    SchemeMatched,
    /// Composite trapezoid on all integrands sampled at the step nodes.
    Trapezoid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub gamma_theta: f64,
    pub gamma_xi: f64,
    /// Window length ΔT in seconds.
    pub window: f64,
    /// Ring-buffer capacity M.
    pub samples: usize,
    /// Interval box Θ per θ component.
    pub theta_box: Vec<(f64, f64)>,
    /// Interval box Ξ.
    pub xi_box: (f64, f64),
    pub theta0: VecN,
    pub xi0: f64,
    /// Maximum possible initial estimation error ‖θ − θ̂(0)‖.
    pub eps_theta: f64,
    pub eps_xi: f64,
    pub quadrature: Quadrature,
    /// Floor for ν̄/η̄ covering floating-point quantization of the estimates.
    pub bound_floor: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            gamma_theta: 0.3,
            gamma_xi: 0.3,
            window: 1.0,
            samples: 10,
            theta_box: vec![(0.85, 1.15)],
            xi_box: (0.85, 1.15),
            theta0: DVector::from_vec(vec![0.95]),
            xi0: 0.95,
            eps_theta: 0.2,
            eps_xi: 0.2,
            quadrature: Quadrature::SchemeMatched,
            bound_floor: 1e-12,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window <= 0.0 {
            return Err(Error::InvalidScenario("estimator window must be > 0".into()));
        }
        if self.samples == 0 {
            return Err(Error::InvalidScenario("estimator needs samples >= 1".into()));
        }
        if self.theta0.len() != self.theta_box.len() {
            return Err(Error::DimensionMismatch {
                expected: self.theta_box.len(),
                got: self.theta0.len(),
                context: "theta0 vs theta box",
            });
        }
        let mut worst = 0.0f64;
        for (i, (lo, hi)) in self.theta_box.iter().enumerate() {
            if self.theta0[i] < *lo || self.theta0[i] > *hi {
                return Err(Error::InvalidScenario(format!(
                    "theta0[{i}] = {} outside box [{lo}, {hi}]",
                    self.theta0[i]
                )));
            }
            worst = worst.max((self.theta0[i] - lo).abs().max((hi - self.theta0[i]).abs()));
        }
        if self.eps_theta + 1e-12 < worst {
            return Err(Error::InvalidScenario(format!(
                "eps_theta = {} below worst-case box distance {worst}",
                self.eps_theta
            )));
        }
        let (lo, hi) = self.xi_box;
        if self.xi0 < lo || self.xi0 > hi {
            return Err(Error::InvalidScenario(format!(
                "xi0 = {} outside box [{lo}, {hi}]",
                self.xi0
            )));
        }
        let worst_xi = (self.xi0 - lo).abs().max((hi - self.xi0).abs());
        if self.eps_xi + 1e-12 < worst_xi {
            return Err(Error::InvalidScenario(format!(
                "eps_xi = {} below worst-case box distance {worst_xi}",
                self.eps_xi
            )));
        }
        Ok(())
    }
}

/// One integrator step as seen by the estimator: state at `t` and the
/// auxiliary input `v` held over the following interval.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub t: f64,
    pub x: VecN,
    pub u: VecN,
    pub v: VecN,
}

/// Rolling trajectory history, long enough to cover one window.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    entries: VecDeque<HistoryEntry>,
    cap: usize,
}

impl History {
    pub fn with_capacity(cap: usize) -> Self {
        Self {
            entries: VecDeque::with_capacity(cap + 1),
            cap,
        }
    }

    pub fn push(&mut self, entry: HistoryEntry) {
        self.entries.push_back(entry);
        while self.entries.len() > self.cap {
            self.entries.pop_front();
        }
    }

    pub fn entries(&self) -> &VecDeque<HistoryEntry> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Window integrals recorded at one sampling time.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub t_j: f64,
    /// x(t_j) − x(t_j − ΔT).
    pub delta_x: VecN,
    /// u(t_j) − u(t_j − ΔT).
    pub delta_u: VecN,
    /// 𝓕 = ∫ f(x) dτ.
    pub f_int: VecN,
    /// 𝓨 = ∫ Y(x) dτ, n×p.
    pub y_int: MatNP,
    /// 𝓖 = ∫ g(x)·u dτ.
    pub g_int: VecN,
    /// 𝓩 = ∫ Z(x) dτ.
    pub z_int: VecN,
    /// 𝓥 = ∫ v dτ.
    pub v_int: VecN,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub theta_hat: VecN,
    pub xi_hat: f64,
    pub buffer: VecDeque<SampleRecord>,
    pub nu_bar: f64,
    pub eta_bar: f64,
    lambda_theta_integral: f64,
    lambda_xi_integral: f64,
}

impl EstimatorState {
    pub fn new(cfg: &EstimatorConfig) -> Self {
        Self {
            theta_hat: cfg.theta0.clone(),
            xi_hat: cfg.xi0,
            buffer: VecDeque::with_capacity(cfg.samples + 1),
            nu_bar: cfg.eps_theta,
            eta_bar: cfg.eps_xi,
            lambda_theta_integral: 0.0,
            lambda_xi_integral: 0.0,
        }
    }
}

/// Compute the window integrals ending at `current = (t, x, u)`.
///
/// Returns `None` while the history does not yet span a full window.
pub fn record_sample(
    history: &History,
    current: (f64, &VecN, &VecN),
    cfg: &EstimatorConfig,
    d: &DisturbanceModel,
    plant: &Plant,
) -> Option<SampleRecord> {
    let (t_now, x_now, u_now) = current;
    // locate the entry at t_now − ΔT, tolerating accumulated float drift
    // in the step timestamps
    let t_start = t_now - cfg.window;
    let entries = history.entries();
    let mut first = None;
    for (i, e) in entries.iter().enumerate() {
        if e.t >= t_start - 1e-6 {
            first = Some(i);
            break;
        }
    }
    let first = first?;
    // the window must actually start ΔT ago
    if entries[first].t > t_start + 1e-6 {
        return None;
    }
    let n = x_now.len();
    let p = d.dim_p();
    let mut f_int = VecN::zeros(n);
    let mut y_int = MatNP::zeros(n, p);
    let mut g_int = VecN::zeros(n);
    let mut z_int = VecN::zeros(n);
    let mut v_int = VecN::zeros(n);

    let count = entries.len() - first;
    for k in 0..count {
        let e = &entries[first + k];
        let (t_next, x_next, u_next, v_next) = if k + 1 < count {
            let nx = &entries[first + k + 1];
            (nx.t, &nx.x, &nx.u, Some(&nx.v))
        } else {
            (t_now, x_now, u_now, None)
        };
        let dt = t_next - e.t;
        match cfg.quadrature {
            Quadrature::SchemeMatched => {
                f_int += plant.f(&e.x) * dt;
                y_int += d.y(&e.x) * dt;
                z_int += d.z(&e.x) * dt;
                v_int += &e.v * dt;
                g_int += plant.g_mul(&e.x, u_next) * dt;
            }
            Quadrature::Trapezoid => {
                f_int += (plant.f(&e.x) + plant.f(x_next)) * (0.5 * dt);
                y_int += (d.y(&e.x) + d.y(x_next)) * (0.5 * dt);
                z_int += (d.z(&e.x) + d.z(x_next)) * (0.5 * dt);
                let v_right = v_next.unwrap_or(&e.v);
                v_int += (&e.v + v_right) * (0.5 * dt);
                g_int += (plant.g_mul(&e.x, &e.u) + plant.g_mul(x_next, u_next)) * (0.5 * dt);
            }
        }
    }

    Some(SampleRecord {
        t_j: t_now,
        delta_x: x_now - &entries[first].x,
        delta_u: u_now - &entries[first].u,
        f_int,
        y_int,
        g_int,
        z_int,
        v_int,
    })
}

fn project_box(v: &mut VecN, box_: &[(f64, f64)]) {
    for (i, (lo, hi)) in box_.iter().enumerate() {
        v[i] = v[i].clamp(*lo, *hi);
    }
}

/// One Euler step of the θ adaptive law, projected onto Θ.
pub fn update_theta(es: &mut EstimatorState, cfg: &EstimatorConfig, dt: f64) {
    if es.buffer.is_empty() {
        return;
    }
    let p = es.theta_hat.len();
    let mut s = VecN::zeros(p);
    for rec in &es.buffer {
        let residual = &rec.delta_x - &rec.y_int * &es.theta_hat - &rec.f_int - &rec.g_int;
        s += rec.y_int.transpose() * residual;
    }
    es.theta_hat += s * (cfg.gamma_theta * dt);
    project_box(&mut es.theta_hat, &cfg.theta_box);
}

/// One Euler step of the ξ adaptive law, projected onto Ξ.
pub fn update_xi(es: &mut EstimatorState, cfg: &EstimatorConfig, dt: f64) {
    if es.buffer.is_empty() {
        return;
    }
    let mut s = 0.0;
    for rec in &es.buffer {
        let residual = &rec.delta_u - &rec.z_int * es.xi_hat - &rec.v_int;
        s += rec.z_int.dot(&residual);
    }
    es.xi_hat += cfg.gamma_xi * dt * s;
    es.xi_hat = es.xi_hat.clamp(cfg.xi_box.0, cfg.xi_box.1);
}

/// Advance the certified error bounds by one step and return `(ν̄, η̄)`.
///
/// The excitation rates are λ_θ = λ_min(Σⱼ 𝓨ⱼᵀ𝓨ⱼ) and λ_ξ = Σⱼ 𝓩ⱼᵀ𝓩ⱼ,
/// accumulated by a left rectangle rule so that the discrete estimate decays
/// at least as fast as the bound ((1 − γλdt) ≤ e^(−γλdt)). Before the buffer
/// fills the bounds hold at ε. The floor covers f64 quantization of θ̂.
pub fn error_bounds(es: &mut EstimatorState, cfg: &EstimatorConfig, dt: f64) -> (f64, f64) {
    if !es.buffer.is_empty() {
        let p = es.theta_hat.len();
        let mut gram = MatNP::zeros(p, p);
        let mut z_sq = 0.0;
        for rec in &es.buffer {
            gram += rec.y_int.transpose() * &rec.y_int;
            z_sq += rec.z_int.dot(&rec.z_int);
        }
        let lambda_theta = if p == 1 {
            gram[(0, 0)]
        } else {
            gram.symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min)
        };
        es.lambda_theta_integral += dt * lambda_theta.max(0.0);
        es.lambda_xi_integral += dt * z_sq;
    }
    es.nu_bar = (cfg.eps_theta * (-cfg.gamma_theta * es.lambda_theta_integral).exp())
        .max(cfg.bound_floor);
    es.eta_bar =
        (cfg.eps_xi * (-cfg.gamma_xi * es.lambda_xi_integral).exp()).max(cfg.bound_floor);
    (es.nu_bar, es.eta_bar)
}

/// Full per-step estimator advance: sample the window when available, run
/// both adaptive laws on the buffer, refresh the bounds. The laws and the
/// bound accumulation always see the same buffer, so the discrete estimate
/// contracts at least as fast as the certified bound.
pub fn advance(
    es: &mut EstimatorState,
    history: &History,
    current: (f64, &VecN, &VecN),
    cfg: &EstimatorConfig,
    d: &DisturbanceModel,
    plant: &Plant,
    dt: f64,
) {
    if let Some(rec) = record_sample(history, current, cfg, d, plant) {
        es.buffer.push_back(rec);
        while es.buffer.len() > cfg.samples {
            es.buffer.pop_front();
        }
    }
    update_theta(es, cfg, dt);
    update_xi(es, cfg, dt);
    error_bounds(es, cfg, dt);
}
