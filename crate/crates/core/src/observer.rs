//! Deep-network modified state observer.
//!
//! A single network `f_hat(X)` stands in for the whole plant drift. The
//! estimate is propagated as
//!
//! ```text
//! Xhat_dot = f_hat(X) + B u + K2 (X - Xhat)
//! ```
//!
//! and the network is trained online on the estimation error
//! `e_a = X - Xhat`, treated as the output-layer error of the loss
//! `0.5 |Lambda e_a|^2`.

use nalgebra::{DVector, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::madam::MadamState;
use crate::net::{GradientSet, Network};
use crate::plant::StateVector;

/// Which state the network sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetInput {
    /// The measured plant state.
    #[default]
    Measured,
    /// The observer's own estimate.
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObserverConfig {
    /// Diagonal of the estimation feedback gain `K2`.
    pub k2: [f64; 4],
    /// Diagonal of the training error gain `Lambda`.
    pub lambda: [f64; 4],
    pub net_input: NetInput,
    /// Network input is `(x - input_offset) * input_scale` when either is set.
    pub input_offset: Option<[f64; 4]>,
    pub input_scale: Option<[f64; 4]>,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self {
            k2: [30.0; 4],
            lambda: [1.0; 4],
            net_input: NetInput::Measured,
            input_offset: None,
            input_scale: None,
        }
    }
}

impl ObserverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k2.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
            return Err(Error::Config(format!(
                "observer gain k2 must be positive definite, got {:?}",
                self.k2
            )));
        }
        if self.lambda.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("observer lambda must be finite".into()));
        }
        let finite = |o: &Option<[f64; 4]>| o.is_none_or(|a| a.iter().all(|v| v.is_finite()));
        if !finite(&self.input_offset) || !finite(&self.input_scale) {
            return Err(Error::Config("observer input scaling must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Observer {
    x_hat: StateVector,
    net: Network,
    opt: MadamState,
    cfg: ObserverConfig,
}

fn to_state(v: &DVector<f64>) -> StateVector {
    Vector4::new(v[0], v[1], v[2], v[3])
}

fn check_finite<const N: usize>(v: &nalgebra::SVector<f64, N>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Observer(format!("non-finite {what}")))
    }
}

impl Observer {
    pub fn new(cfg: ObserverConfig, x_hat0: StateVector, net: Network, opt: MadamState) -> Result<Self> {
        cfg.validate()?;
        if net.input_dim() != 4 || net.output_dim() != 4 {
            return Err(Error::Config(format!(
                "observer network must map 4 -> 4, got {} -> {}",
                net.input_dim(),
                net.output_dim()
            )));
        }
        check_finite(&x_hat0, "initial estimate")?;
        Ok(Self {
            x_hat: x_hat0,
            net,
            opt,
            cfg,
        })
    }

    pub fn x_hat(&self) -> &StateVector {
        &self.x_hat
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn optimizer(&self) -> &MadamState {
        &self.opt
    }

    pub fn config(&self) -> &ObserverConfig {
        &self.cfg
    }

    fn network_input(&self, x_meas: &StateVector) -> DVector<f64> {
        let src = match self.cfg.net_input {
            NetInput::Measured => x_meas,
            NetInput::Estimate => &self.x_hat,
        };
        let mut v = DVector::from_column_slice(src.as_slice());
        if let Some(off) = self.cfg.input_offset {
            v.iter_mut().zip(off).for_each(|(x, o)| *x -= o);
        }
        if let Some(sc) = self.cfg.input_scale {
            v.iter_mut().zip(sc).for_each(|(x, s)| *x *= s);
        }
        v
    }

    /// Network estimate of the plant drift.
    pub fn f_hat(&self, x_meas: &StateVector) -> Result<StateVector> {
        check_finite(x_meas, "measurement")?;
        let y = self
            .net
            .eval(&self.network_input(x_meas))
            .map_err(|e| Error::Observer(e.to_string()))?;
        Ok(to_state(&y))
    }

    pub fn estimation_error(&self, x_meas: &StateVector) -> StateVector {
        x_meas - self.x_hat
    }

    /// Observer right-hand side for a given drift estimate.
    pub fn derivative_with(
        &self,
        f_hat: &StateVector,
        x_meas: &StateVector,
        u: &Vector2<f64>,
        b: &Matrix4x2<f64>,
    ) -> StateVector {
        let k2 = Vector4::from(self.cfg.k2);
        f_hat + b * u + k2.component_mul(&(x_meas - self.x_hat))
    }

    pub fn derivative(&self, x_meas: &StateVector, u: &Vector2<f64>, b: &Matrix4x2<f64>) -> Result<StateVector> {
        check_finite(x_meas, "measurement")?;
        check_finite(u, "control")?;
        let f_hat = self.f_hat(x_meas)?;
        let d = self.derivative_with(&f_hat, x_meas, u, b);
        check_finite(&d, "observer derivative")?;
        Ok(d)
    }

    /// Explicit Euler step with a precomputed drift estimate.
    pub fn propagate(
        &mut self,
        f_hat: &StateVector,
        x_meas: &StateVector,
        u: &Vector2<f64>,
        b: &Matrix4x2<f64>,
        dt: f64,
    ) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::Usage(format!("time step must be positive, got {dt}")));
        }
        let next = self.x_hat + self.derivative_with(f_hat, x_meas, u, b) * dt;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Observer("state estimate diverged".into()));
        }
        self.x_hat = next;
        Ok(())
    }

    /// Returns `(e_a, f_hat)` at the pre-step measurement, then advances the
    /// estimate by one Euler step.
    pub fn step(
        &mut self,
        x_meas: &StateVector,
        u: &Vector2<f64>,
        b: &Matrix4x2<f64>,
        dt: f64,
    ) -> Result<(StateVector, StateVector)> {
        check_finite(u, "control")?;
        let e_a = self.estimation_error(x_meas);
        let f_hat = self.f_hat(x_meas)?;
        self.propagate(&f_hat, x_meas, u, b, dt)?;
        Ok((e_a, f_hat))
    }

    /// Parameter gradients of the training loss, with `-Lambda e_a` as the
    /// output-layer error.
    pub fn gradient(&self, x_meas: &StateVector, e_a: &StateVector) -> Result<GradientSet> {
        let lambda = Vector4::from(self.cfg.lambda);
        let out_err = DVector::from_iterator(4, lambda.component_mul(e_a).iter().map(|v| -v));
        let (_, cache) = self
            .net
            .forward(&self.network_input(x_meas))
            .map_err(|e| Error::Observer(e.to_string()))?;
        self.net.backward(&cache, &out_err)
    }

    /// One optimizer step on `0.5 |Lambda e_a|^2`; returns the loss.
    pub fn train(&mut self, x_meas: &StateVector, e_a: &StateVector) -> Result<f64> {
        let lambda = Vector4::from(self.cfg.lambda);
        let loss = 0.5 * lambda.component_mul(e_a).norm_squared();
        let grads = self.gradient(x_meas, e_a)?;
        self.opt.step(&mut self.net, &grads)?;
        Ok(loss)
    }
}
