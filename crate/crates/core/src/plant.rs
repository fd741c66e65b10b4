//! Two-link planar arm with point masses at the link tips.
//!
//! Angles are measured from the horizontal and are never wrapped. The state
//! is `[q1, q2, q1dot, q2dot]`.
//!
//! ```text
//! M11 = m1 l1^2 + m2 (l1^2 + 2 l1 l2 c2 + l2^2)
//! M12 = M21 = m2 (l1 l2 c2 + l2^2)
//! M22 = m2 l2^2
//! Vm  = h [[q2dot, q1dot + q2dot], [-q1dot, 0]],  h = -m2 l1 l2 s2
//! G   = [(m1 + m2) g l1 c1 + m2 g l2 c12, m2 g l2 c12]
//! ```
//!
//! `Vm` comes from the Christoffel symbols of `M`, so `dM/dt - 2 Vm` is skew.

use nalgebra::{Matrix2, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type StateVector = Vector4<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    pub l1: f64,
    pub l2: f64,
    pub m1: f64,
    pub m2: f64,
    pub gravity: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            l1: 1.0,
            l2: 1.0,
            m1: 1.0,
            m2: 2.3,
            gravity: 9.81,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("l1", self.l1), ("l2", self.l2), ("m1", self.m1), ("m2", self.m2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("plant {name} must be positive, got {v}")));
            }
        }
        if !self.gravity.is_finite() {
            return Err(Error::Config("plant gravity must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManipulatorMatrices {
    /// Inertia.
    pub m: Matrix2<f64>,
    /// Coriolis/centripetal.
    pub vm: Matrix2<f64>,
    /// Gravity torques.
    pub g: Vector2<f64>,
}

pub fn manipulator_matrices(p: &PlantParams, x: &StateVector) -> ManipulatorMatrices {
    let (q1, q2, dq1, dq2) = (x[0], x[1], x[2], x[3]);
    let (s2, c2) = q2.sin_cos();
    let c1 = q1.cos();
    let c12 = (q1 + q2).cos();
    let (l1, l2, m1, m2, g) = (p.l1, p.l2, p.m1, p.m2, p.gravity);

    let m11 = m1 * l1 * l1 + m2 * (l1 * l1 + 2.0 * l1 * l2 * c2 + l2 * l2);
    let m12 = m2 * (l1 * l2 * c2 + l2 * l2);
    let m22 = m2 * l2 * l2;
    let h = -m2 * l1 * l2 * s2;

    ManipulatorMatrices {
        m: Matrix2::new(m11, m12, m12, m22),
        vm: Matrix2::new(h * dq2, h * (dq1 + dq2), -h * dq1, 0.0),
        g: Vector2::new((m1 + m2) * g * l1 * c1 + m2 * g * l2 * c12, m2 * g * l2 * c12),
    }
}

fn inverse2(m: &Matrix2<f64>) -> Matrix2<f64> {
    // M is symmetric positive definite for positive masses and lengths.
    m.try_inverse().expect("inertia matrix is invertible")
}

/// `[qdot; M^-1 (tau - Vm qdot - G)]`.
pub fn plant_derivative(p: &PlantParams, x: &StateVector, tau: &Vector2<f64>) -> StateVector {
    let mm = manipulator_matrices(p, x);
    let qd = Vector2::new(x[2], x[3]);
    let qdd = inverse2(&mm.m) * (tau - mm.vm * qd - mm.g);
    Vector4::new(x[2], x[3], qdd[0], qdd[1])
}

/// The unforced dynamics `f(X)`, i.e. everything the learned estimator has
/// to reproduce.
pub fn drift(p: &PlantParams, x: &StateVector) -> StateVector {
    plant_derivative(p, x, &Vector2::zeros())
}

/// `B(q) = [0; M^-1(q)]`.
pub fn control_matrix(p: &PlantParams, x: &StateVector) -> Matrix4x2<f64> {
    let minv = inverse2(&manipulator_matrices(p, x).m);
    let mut b = Matrix4x2::zeros();
    b.fixed_view_mut::<2, 2>(2, 0).copy_from(&minv);
    b
}

/// Kinetic plus potential energy.
pub fn energy(p: &PlantParams, x: &StateVector) -> f64 {
    let mm = manipulator_matrices(p, x);
    let qd = Vector2::new(x[2], x[3]);
    let kinetic = 0.5 * qd.dot(&(mm.m * qd));
    let potential = p.gravity
        * ((p.m1 + p.m2) * p.l1 * x[0].sin() + p.m2 * p.l2 * (x[0] + x[1]).sin());
    kinetic + potential
}

/// Desired state and its time derivative at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSignal {
    pub x_d: StateVector,
    pub x_d_dot: StateVector,
}

/// Joint references `q1 = sin(0.5 t)`, `q2 = cos(0.5 t)` with their exact
/// derivatives.
pub fn reference(t: f64) -> ReferenceSignal {
    let (s, c) = (0.5 * t).sin_cos();
    ReferenceSignal {
        x_d: Vector4::new(s, c, 0.5 * c, -0.5 * s),
        x_d_dot: Vector4::new(0.5 * c, -0.5 * s, -0.25 * s, -0.25 * c),
    }
}
