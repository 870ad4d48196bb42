//! Critic-free credit assignment: group-whitened advantages, best-member
//! selection, and the leave-one-out baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageVector {
    pub values: Vec<f64>,
    pub mu: f64,
    /// Population standard deviation (divides by N).
    pub sigma: f64,
    pub eps: f64,
}

/// `(R_i - mean) / (std + eps)` with the population standard deviation.
///
/// Returns are centered on the first member before any summation, so adding
/// a constant that leaves every `R_i + c` exactly representable gives
/// bit-identical advantages, and identical returns give exact zeros.
pub fn group_advantage(returns: &[f64], eps: f64) -> Result<AdvantageVector> {
    let Some(&pivot) = returns.first() else {
        return Err(Error::GroupTooSmall { min: 1, got: 0 });
    };
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig(format!("eps {eps} must be positive")));
    }
    if let Some(r) = returns.iter().find(|r| !r.is_finite()) {
        return Err(Error::NonFinite(format!("return {r}")));
    }
    let n = returns.len() as f64;
    let shifted: Vec<f64> = returns.iter().map(|r| r - pivot).collect();
    let mean_shift = shifted.iter().sum::<f64>() / n;
    let centered: Vec<f64> = shifted.iter().map(|d| d - mean_shift).collect();
    let sigma = (centered.iter().map(|c| c * c).sum::<f64>() / n).sqrt();
    let values = centered.iter().map(|c| c / (sigma + eps)).collect();
    Ok(AdvantageVector {
        values,
        mu: pivot + mean_shift,
        sigma,
        eps,
    })
}

/// Index of the largest return; ties go to the lowest index.
pub fn argmax_lowest(returns: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &r) in returns.iter().enumerate() {
        match best {
            Some(b) if r <= returns[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// `z* = argmax_i R(z_i)`, lowest index on ties.
pub fn select_best_blueprint<T: Clone>(blueprints: &[T], returns: &[f64]) -> Result<(T, usize)> {
    if blueprints.len() != returns.len() {
        return Err(Error::LengthMismatch {
            expected: blueprints.len(),
            got: returns.len(),
        });
    }
    let idx = argmax_lowest(returns).ok_or(Error::GroupTooSmall { min: 1, got: 0 })?;
    Ok((blueprints[idx].clone(), idx))
}

/// `A_i = R_i - mean_{j != i} R_j`.
pub fn rloo_advantage(returns: &[f64]) -> Result<Vec<f64>> {
    let n = returns.len();
    if n < 2 {
        return Err(Error::GroupTooSmall { min: 2, got: n });
    }
    let total: f64 = returns.iter().sum();
    Ok(returns
        .iter()
        .map(|&r| r - (total - r) / (n - 1) as f64)
        .collect())
}
