//! Nominal control providers and the tracking-band reward.
//!
//! The trained policy the filter wraps is out of scope here; a PD tracker
//! is the stand-in that produces both safe and unsafe episodes, a constant
//! provider covers equilibrium tests, and a recorded table lets externally
//! produced action traces replay through the filter.

use serde::{Deserialize, Serialize};

use crate::dynamics::{PursuerState, TargetState, VecN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicyKind {
    /// kp(q − x) + kd(q̇ − u) at the acceleration level.
    PdTracker { kp: f64, kd: f64 },
    Constant(Vec<f64>),
    /// Nearest-in-time replay of a recorded action table.
    Recorded { samples: Vec<(f64, Vec<f64>)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalPolicy {
    pub kind: PolicyKind,
    /// Optional norm clamp on the output.
    pub clamp: Option<f64>,
}

impl NominalPolicy {
    pub fn pd(kp: f64, kd: f64) -> Self {
        Self {
            kind: PolicyKind::PdTracker { kp, kd },
            clamp: None,
        }
    }

    pub fn constant(v: VecN) -> Self {
        Self {
            kind: PolicyKind::Constant(v.iter().cloned().collect()),
            clamp: None,
        }
    }
}

impl Default for NominalPolicy {
    fn default() -> Self {
        Self::pd(1.0, 2.0)
    }
}

/// Evaluate the nominal action for one pursuer at time `t`.
pub fn nominal_action(pol: &NominalPolicy, s: &PursuerState, tg: &TargetState, t: f64) -> VecN {
    let mut out = match &pol.kind {
        PolicyKind::PdTracker { kp, kd } => {
            (&tg.p0 - &s.x) * *kp + (&tg.p0_dot - &s.u) * *kd
        }
        PolicyKind::Constant(v) => VecN::from_vec(v.clone()),
        PolicyKind::Recorded { samples } => {
            if samples.is_empty() {
                VecN::zeros(s.x.len())
            } else {
                let nearest = samples
                    .iter()
                    .min_by(|a, b| {
                        (a.0 - t).abs().partial_cmp(&(b.0 - t).abs()).unwrap()
                    })
                    .unwrap();
                VecN::from_vec(nearest.1.clone())
            }
        }
    };
    if let Some(limit) = pol.clamp {
        let norm = out.norm();
        if norm > limit && norm > 0.0 {
            out *= limit / norm;
        }
    }
    out
}

/// Tracking reward: flat bonus inside the band [r, R], linear penalty in
/// the distance outside it.
pub fn reward(zeta_norm: f64, r: f64, big_r: f64) -> f64 {
    if zeta_norm < r {
        -0.1 * (zeta_norm - r).abs()
    } else if zeta_norm > big_r {
        -0.1 * (zeta_norm - big_r).abs()
    } else {
        0.1
    }
}
