//! Gradient of the per-ray weight entropy with respect to each `α_i`.
//!
//! For a pixel with blended alphas `α_1..α_N`, transmittances `T_i` and
//! weights `w_i = T_i α_i`, `w_{N+1} = T_{N+1}`:
//!
//! ```text
//! ∂H/∂α_i = (-ln w_i - 1)·T_i + R_{i+1} / (1 - α_i)
//! R_i     = (ln w_i + 1)·w_i + R_{i+1},    R_{N+1} = (ln w_{N+1} + 1)·w_{N+1}
//! ```
//!
//! evaluated in one reverse sweep. Weights are floored at [`W_FLOOR`]; a weight
//! below the floor sits on the flat part of `w̃ ln w̃` and contributes nothing.

use crate::losses::W_FLOOR;

/// `∂(w̃ ln w̃)/∂w`.
#[inline]
pub(crate) fn log_weight_slope(w: f64) -> f64 {
    debug_assert!(w >= 0.0 && w.is_finite(), "invalid blending weight {w}");
    if w > W_FLOOR {
        w.ln() + 1.0
    } else {
        0.0
    }
}

/// Running state of the reverse sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EntropyBackwardState {
    /// `R_i`, the suffix sum of `(ln w_k + 1) w_k`.
    pub r: f64,
    /// `T_i` of the entry last processed.
    pub t: f64,
}

/// Returns `∂H/∂α_i` for `i = 1..N` and the final sweep state (`r = R_1`).
///
/// `weights` has `N + 1` entries, the last being the residual transmittance.
pub fn entropy_grad_alpha_with_state(
    weights: &[f64],
    alphas: &[f64],
    transmittances: &[f64],
) -> (Vec<f64>, EntropyBackwardState) {
    let n = alphas.len();
    assert_eq!(weights.len(), n + 1, "weights must include the background weight");
    assert_eq!(transmittances.len(), n);
    let bg = weights[n];
    let mut state = EntropyBackwardState {
        r: log_weight_slope(bg) * bg,
        t: bg,
    };
    let mut grad = vec![0.0; n];
    for i in (0..n).rev() {
        let w = weights[i];
        let slope = log_weight_slope(w);
        grad[i] = -slope * transmittances[i] + state.r / (1.0 - alphas[i]);
        state.r += slope * w;
        state.t = transmittances[i];
    }
    (grad, state)
}

pub fn entropy_grad_alpha(weights: &[f64], alphas: &[f64], transmittances: &[f64]) -> Vec<f64> {
    entropy_grad_alpha_with_state(weights, alphas, transmittances).0
}

/// Weights, transmittances and background weight of an un-truncated alpha list.
pub fn blend_weights(alphas: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut t = 1.0;
    let mut weights = Vec::with_capacity(alphas.len() + 1);
    let mut trans = Vec::with_capacity(alphas.len());
    for &a in alphas {
        trans.push(t);
        weights.push(t * a);
        t *= 1.0 - a;
    }
    weights.push(t);
    (weights, trans)
}
