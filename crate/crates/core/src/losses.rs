//! Pose-regression objectives.
//!
//! Every loss comes with its analytic derivative so the autograd graph can
//! reuse the exact same formulas in its backward pass.

use serde::{Deserialize, Serialize};

use crate::error::LossError;

const UNIT_TOL: f64 = 1e-3;
const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub w_x: f64,
    pub w_q: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            alpha: 0.6,
            beta: 0.4,
            w_x: 0.0,
            w_q: -2.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.lambda.is_nan() || self.lambda < 1.0 {
            return Err(LossError::LambdaBelowOne(self.lambda));
        }
        check_weight_sum(self.alpha, self.beta)
    }
}

fn check_weight_sum(alpha: f64, beta: f64) -> Result<(), LossError> {
    let s = alpha + beta;
    if (s - 1.0).abs() > WEIGHT_SUM_TOL {
        Err(LossError::WeightSum(s))
    } else {
        Ok(())
    }
}

fn check_unit(q: &[f64; 4]) -> Result<(), LossError> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (n - 1.0).abs() > UNIT_TOL || !n.is_finite() {
        Err(LossError::NonUnitQuaternion(n))
    } else {
        Ok(())
    }
}

/// Hamilton product `q ⊗ conj(g)`, `(w, x, y, z)` layout.
fn mul_conj(q: &[f64; 4], g: &[f64; 4]) -> [f64; 4] {
    let p = [g[0], -g[1], -g[2], -g[3]];
    [
        q[0] * p[0] - q[1] * p[1] - q[2] * p[2] - q[3] * p[3],
        q[0] * p[1] + q[1] * p[0] + q[2] * p[3] - q[3] * p[2],
        q[0] * p[2] - q[1] * p[3] + q[2] * p[0] + q[3] * p[1],
        q[0] * p[3] + q[1] * p[2] - q[2] * p[1] + q[3] * p[0],
    ]
}

fn half_angle(r: &[f64; 4]) -> f64 {
    let s = (r[1] * r[1] + r[2] * r[2] + r[3] * r[3]).sqrt();
    s.atan2(r[0].abs())
}

/// Angular distance `atan2(|v|, |w|)` of `q ⊗ q_gt⁻¹`; half the geodesic angle.
pub fn rotation_loss(q: &[f64; 4], q_gt: &[f64; 4]) -> Result<f64, LossError> {
    check_unit(q)?;
    check_unit(q_gt)?;
    Ok(half_angle(&mul_conj(q, q_gt)))
}

/// Gradient of the rotation loss with respect to `q` (treated as a free
/// 4-vector). Zero at an exact match, where the loss has a cusp.
pub fn rotation_loss_grad(q: &[f64; 4], q_gt: &[f64; 4]) -> [f64; 4] {
    let r = mul_conj(q, q_gt);
    let s = (r[1] * r[1] + r[2] * r[2] + r[3] * r[3]).sqrt();
    let a = r[0].abs();
    let denom = s * s + a * a;
    if s < 1e-15 || denom < 1e-30 {
        return [0.0; 4];
    }
    let d_s = a / denom;
    let d_a = -s / denom;
    let sign = if r[0] >= 0.0 { 1.0 } else { -1.0 };
    let dr = [d_a * sign, d_s * r[1] / s, d_s * r[2] / s, d_s * r[3] / s];
    // r = M q with M the right-multiplication matrix by conj(q_gt); dq = Mᵀ dr
    let p = [q_gt[0], -q_gt[1], -q_gt[2], -q_gt[3]];
    [
        dr[0] * p[0] + dr[1] * p[1] + dr[2] * p[2] + dr[3] * p[3],
        -dr[0] * p[1] + dr[1] * p[0] - dr[2] * p[3] + dr[3] * p[2],
        -dr[0] * p[2] + dr[1] * p[3] + dr[2] * p[0] - dr[3] * p[1],
        -dr[0] * p[3] - dr[1] * p[2] + dr[2] * p[1] + dr[3] * p[0],
    ]
}

#[inline]
pub fn smooth_l1(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

#[inline]
pub fn smooth_l1_grad(d: f64) -> f64 {
    if d.abs() < 1.0 {
        d
    } else {
        d.signum()
    }
}

/// Smooth-L1 summed over the three components.
pub fn translation_loss(t: &[f64; 3], t_gt: &[f64; 3]) -> f64 {
    t.iter().zip(t_gt).map(|(a, b)| smooth_l1(a - b)).sum()
}

pub fn translation_loss_grad(t: &[f64; 3], t_gt: &[f64; 3]) -> [f64; 3] {
    [
        smooth_l1_grad(t[0] - t_gt[0]),
        smooth_l1_grad(t[1] - t_gt[1]),
        smooth_l1_grad(t[2] - t_gt[2]),
    ]
}

/// `L_t + λ·L_q`.
pub fn pose_loss(
    t: &[f64; 3],
    q: &[f64; 4],
    t_gt: &[f64; 3],
    q_gt: &[f64; 4],
    lambda: f64,
) -> Result<f64, LossError> {
    combine_pose_loss(translation_loss(t, t_gt), rotation_loss(q, q_gt)?, lambda)
}

pub fn combine_pose_loss(l_t: f64, l_q: f64, lambda: f64) -> Result<f64, LossError> {
    if lambda.is_nan() || lambda < 1.0 {
        return Err(LossError::LambdaBelowOne(lambda));
    }
    Ok(l_t + lambda * l_q)
}

/// `α·L_p0 + β·L_p1` with `α + β = 1`.
pub fn offline_total_loss(lp0: f64, lp1: f64, alpha: f64, beta: f64) -> Result<f64, LossError> {
    check_weight_sum(alpha, beta)?;
    Ok(alpha * lp0 + beta * lp1)
}

/// Homoscedastic-uncertainty weighting `e^{-w_x}L_t + w_x + e^{-w_q}L_q + w_q`.
pub fn online_total_loss(l_t: f64, l_q: f64, w_x: f64, w_q: f64) -> f64 {
    (-w_x).exp() * l_t + w_x + (-w_q).exp() * l_q + w_q
}

/// Partial derivatives `(∂/∂L_t, ∂/∂L_q, ∂/∂w_x, ∂/∂w_q)`.
pub fn online_total_loss_grad(l_t: f64, l_q: f64, w_x: f64, w_q: f64) -> [f64; 4] {
    let ex = (-w_x).exp();
    let eq = (-w_q).exp();
    [ex, eq, 1.0 - ex * l_t, 1.0 - eq * l_q]
}
