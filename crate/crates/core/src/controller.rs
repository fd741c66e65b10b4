//! Dynamic inversion with slack augmentation.
//!
//! The desired error dynamics `Xdot - Xd_dot = -K (X - Xd)` give
//! `B u = Xd_dot - f_hat - K (X - Xd)`. `B` is 4x2, so two slack columns
//! `B_s` are appended and the square system
//! `[B B_s] [u; u_s] = Xd_dot - f_hat - K (X - Xd) + B_s u_s` is solved by
//! LU with partial pivoting. The first two entries of the solution are the
//! joint torques.

use nalgebra::{Matrix2, Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{ReferenceSignal, StateVector};

/// Condition estimate above which the augmented matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMatrixSource {
    /// `B(q)` from the plant inertia at the current measurement.
    #[default]
    Exact,
    /// `B(q0)` frozen at the initial configuration.
    Nominal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Diagonal of the tracking gain `K`.
    pub k: [f64; 4],
    /// `c` in the slack block `B_s = [I; -c I]`. Zero leaves the slack
    /// columns on the kinematic rows only.
    pub slack_gain: f64,
    /// Slack control `u_s`.
    pub u_slack: [f64; 2],
    /// Symmetric per-joint torque saturation.
    pub torque_limit: Option<[f64; 2]>,
    pub control_matrix: ControlMatrixSource,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            k: [7.5; 4],
            slack_gain: 7.5,
            u_slack: [0.0; 2],
            torque_limit: None,
            control_matrix: ControlMatrixSource::Exact,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
            return Err(Error::Config(format!(
                "controller gain k must be positive definite, got {:?}",
                self.k
            )));
        }
        if !self.slack_gain.is_finite() || self.u_slack.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("slack parameters must be finite".into()));
        }
        if let Some(lim) = self.torque_limit {
            if lim.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Config("torque limits must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn gain(&self) -> Matrix4<f64> {
        Matrix4::from_diagonal(&Vector4::from(self.k))
    }

    /// Smallest eigenvalue of the diagonal gain.
    pub fn min_gain(&self) -> f64 {
        self.k.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn slack_matrix(&self) -> Matrix4x2<f64> {
        let mut bs = Matrix4x2::zeros();
        bs.fixed_view_mut::<2, 2>(0, 0).copy_from(&Matrix2::identity());
        bs.fixed_view_mut::<2, 2>(2, 0)
            .copy_from(&(Matrix2::identity() * -self.slack_gain));
        bs
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedMatrix {
    pub matrix: Matrix4<f64>,
    /// 2-norm condition number.
    pub condition: f64,
}

/// `[B | B_s]`, rejected when numerically singular.
pub fn augment_control_matrix(b: &Matrix4x2<f64>, b_slack: &Matrix4x2<f64>) -> Result<AugmentedMatrix> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<4, 2>(0, 0).copy_from(b);
    m.fixed_view_mut::<4, 2>(0, 2).copy_from(b_slack);
    let sv = m.singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Inversion { condition });
    }
    Ok(AugmentedMatrix { matrix: m, condition })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    /// Applied joint torques (after saturation).
    pub u: Vector2<f64>,
    /// Full solution `[u; u_s]` before saturation.
    pub u_bar: Vector4<f64>,
    pub rhs: Vector4<f64>,
    pub condition: f64,
    pub saturated: bool,
}

/// `Xd_dot - f_hat - K (x - Xd) + B_s u_s`.
pub fn control_rhs(
    cfg: &ControllerConfig,
    f_hat: &Vector4<f64>,
    x: &StateVector,
    reference: &ReferenceSignal,
) -> Vector4<f64> {
    let k = Vector4::from(cfg.k);
    let us = Vector2::from(cfg.u_slack);
    reference.x_d_dot - f_hat - k.component_mul(&(x - reference.x_d)) + cfg.slack_matrix() * us
}

pub fn compute_control(
    cfg: &ControllerConfig,
    f_hat: &Vector4<f64>,
    x: &StateVector,
    reference: &ReferenceSignal,
    b: &Matrix4x2<f64>,
) -> Result<ControlOutput> {
    let aug = augment_control_matrix(b, &cfg.slack_matrix())?;
    let rhs = control_rhs(cfg, f_hat, x, reference);
    let u_bar = aug
        .matrix
        .lu()
        .solve(&rhs)
        .ok_or(Error::Inversion { condition: aug.condition })?;
    let mut u = Vector2::new(u_bar[0], u_bar[1]);
    let mut saturated = false;
    if let Some(lim) = cfg.torque_limit {
        for i in 0..2 {
            let c = u[i].clamp(-lim[i], lim[i]);
            saturated |= c != u[i];
            u[i] = c;
        }
    }
    Ok(ControlOutput {
        u,
        u_bar,
        rhs,
        condition: aug.condition,
        saturated,
    })
}
