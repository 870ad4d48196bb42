//! Clipped group-relative surrogate with a KL penalty toward the reference
//! policy, and its analytic gradient.
//!
//! For a group of N members with advantages `A_i`:
//!
//! ```text
//! J = 1/N * sum_i [ min(rho_i A_i, clip(rho_i, 1-eps, 1+eps) A_i) - beta * KL_i ]
//! rho_i = exp(sum_t logp_theta(t) - logp_old(t))
//! ```
//!
//! Only tokens selected by the member's mask enter `rho_i` and `KL_i`.

use serde::{Deserialize, Serialize};

use super::{HyperParams, KlReduction};
use crate::error::{Error, Result};
use crate::policy::{self, PolicyParams, TokenForward};

/// Log-ratios are clamped to this magnitude before exponentiation.
pub const LOG_RATIO_CLAMP: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub objective_value: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub kl_value: f64,
    pub grad_norm: f64,
}

/// `min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)`.
pub fn clipped_term(ratio: f64, advantage: f64, clip_eps: f64) -> Result<f64> {
    if !(ratio > 0.0) {
        return Err(Error::NonPositiveRatio(ratio));
    }
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    Ok((ratio * advantage).min(clipped * advantage))
}

/// k3 estimator of `KL(pi_theta || pi_ref)` from one sampled token:
/// `exp(d) - d - 1` with `d = logp_ref - logp_theta`.
pub fn kl_term(logp_theta: f64, logp_ref: f64) -> f64 {
    let d = logp_ref - logp_theta;
    d.exp() - d - 1.0
}

/// `d kl_term / d logp_theta`
fn kl_term_grad(logp_theta: f64, logp_ref: f64) -> f64 {
    1.0 - (logp_ref - logp_theta).exp()
}

/// Tokens of one group member.
#[derive(Debug, Clone)]
pub struct MemberTokens {
    /// Forward records under the current parameters, in token order.
    pub records: Vec<TokenForward>,
    /// Which tokens belong to this objective; the rest are stop-gradient.
    pub mask: Vec<bool>,
    /// Behaviour log-probabilities (under theta_old).
    pub old_logps: Vec<f64>,
    /// Reference-policy log-probabilities.
    pub ref_logps: Vec<f64>,
    pub advantage: f64,
}

#[derive(Debug, Clone)]
pub struct Objective {
    pub value: f64,
    pub grad: Vec<f64>,
    pub stats: UpdateStats,
}

/// Evaluate the surrogate and its gradient for one group.
pub fn surrogate(params: &PolicyParams, members: &[MemberTokens], hp: &HyperParams) -> Result<Objective> {
    let n = members.len();
    if n == 0 {
        return Err(Error::GroupTooSmall { min: 1, got: 0 });
    }
    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    let mut ratio_sum = 0.0;
    let mut clipped_count = 0usize;
    let mut kl_sum = 0.0;
    let mut terms: Vec<(&TokenForward, f64)> = Vec::new();
    let mut mask: Vec<bool> = Vec::new();

    for m in members {
        let len = m.records.len();
        if m.mask.len() != len || m.old_logps.len() != len || m.ref_logps.len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                got: m.mask.len().min(m.old_logps.len()).min(m.ref_logps.len()),
            });
        }
        let active = m.mask.iter().filter(|&&on| on).count();
        let mut log_ratio = 0.0;
        let mut kl = 0.0;
        for t in 0..len {
            if m.mask[t] {
                let lp = m.records[t].logp();
                log_ratio += lp - m.old_logps[t];
                kl += kl_term(lp, m.ref_logps[t]);
            }
        }
        let kl_scale = match hp.kl_reduction {
            KlReduction::TokenMean if active > 0 => 1.0 / active as f64,
            KlReduction::TokenMean => 0.0,
            KlReduction::SequenceSum => 1.0,
        };
        let kl = kl * kl_scale;
        if !log_ratio.is_finite() {
            return Err(Error::NonFinite(format!("log-ratio {log_ratio}")));
        }
        let clamped = log_ratio.clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP);
        let ratio = clamped.exp();
        let term = clipped_term(ratio, m.advantage, hp.clip_eps)?;
        let clip_active = ratio.clamp(1.0 - hp.clip_eps, 1.0 + hp.clip_eps) * m.advantage
            < ratio * m.advantage;
        if clip_active {
            clipped_count += 1;
        }
        // d term / d log_ratio
        let d_term = if clip_active || clamped != log_ratio {
            0.0
        } else {
            ratio * m.advantage
        };
        value += inv_n * (term - hp.beta_kl * kl);
        ratio_sum += ratio;
        kl_sum += kl;
        for t in 0..len {
            let w = if m.mask[t] {
                let lp = m.records[t].logp();
                inv_n * (d_term - hp.beta_kl * kl_scale * kl_term_grad(lp, m.ref_logps[t]))
            } else {
                0.0
            };
            terms.push((&m.records[t], w));
            mask.push(m.mask[t]);
        }
    }
    let grad = policy::backward(params, &terms, &mask)?;
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    Ok(Objective {
        value,
        grad,
        stats: UpdateStats {
            objective_value: value,
            mean_ratio: ratio_sum * inv_n,
            clip_fraction: clipped_count as f64 * inv_n,
            kl_value: kl_sum * inv_n,
            grad_norm,
        },
    })
}
