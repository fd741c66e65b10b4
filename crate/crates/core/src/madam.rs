//! Multiplicative adaptive-moments optimizer.
//!
//! Every parameter is scaled by `exp(-eta * sign(w) * clamp(g / gbar))` where
//! `gbar` is the root of an exponential moving average of `g^2`. Only the
//! sign of the parameter and the normalized gradient enter the update, so the
//! relative change per step is bounded by `eta_max` regardless of the raw
//! gradient scale. Magnitudes are then clamped to `sigma_max`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{GradientSet, Network};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MadamHyper {
    /// Learning rate.
    pub eta: f64,
    /// Largest admissible per-step exponent `eta * |r|`.
    pub eta_max: f64,
    /// Hard bound on parameter magnitude.
    pub sigma_max: f64,
    /// EMA factor of the squared-gradient estimate.
    pub beta: f64,
}

impl Default for MadamHyper {
    fn default() -> Self {
        Self {
            eta: 0.001,
            eta_max: 0.1,
            sigma_max: 1250.0,
            beta: 0.999,
        }
    }
}

impl MadamHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.eta_max >= self.eta && self.eta_max.is_finite()) {
            return Err(Error::Config(format!(
                "eta_max ({}) must be at least eta ({})",
                self.eta_max, self.eta
            )));
        }
        if !(self.sigma_max > 0.0) {
            return Err(Error::Config(format!(
                "sigma_max must be positive, got {}",
                self.sigma_max
            )));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        Ok(())
    }

    /// Bound on `|g / gbar|` after clamping.
    pub fn ratio_limit(&self) -> f64 {
        self.eta_max / self.eta
    }
}

/// Shape of the per-parameter multiplicative factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateForm {
    /// `w * exp(-eta * sign(w) * clamp(g / gbar))`.
    #[default]
    Exponential,
    /// `w * (1 - eta * sign(w) * sign(g))`, the first-order form the descent
    /// guarantee is stated for.
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MadamState {
    gbar_sq: Vec<(DMatrix<f64>, DVector<f64>)>,
    pub hyper: MadamHyper,
    pub form: UpdateForm,
    step_count: u64,
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl MadamState {
    pub fn new(hyper: MadamHyper, shape_of: &Network) -> Result<Self> {
        hyper.validate()?;
        let gbar_sq = shape_of
            .layers()
            .iter()
            .map(|l| {
                (
                    DMatrix::zeros(l.output_dim(), l.input_dim()),
                    DVector::zeros(l.output_dim()),
                )
            })
            .collect();
        Ok(Self {
            gbar_sq,
            hyper,
            form: UpdateForm::Exponential,
            step_count: 0,
        })
    }

    pub fn with_form(mut self, form: UpdateForm) -> Self {
        self.form = form;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Second-moment estimates, one `(weights, biases)` pair per layer.
    pub fn second_moments(&self) -> &[(DMatrix<f64>, DVector<f64>)] {
        &self.gbar_sq
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut Network, grads: &GradientSet) -> Result<()> {
        if !grads.congruent_with(params) || grads.layers.len() != self.gbar_sq.len() {
            return Err(Error::Usage(
                "gradient set is not congruent with the optimized network".into(),
            ));
        }
        if !grads.is_finite() {
            return Err(Error::Optimizer("non-finite gradient".into()));
        }
        let state_fits = grads
            .layers
            .iter()
            .zip(&self.gbar_sq)
            .all(|(g, (w_sq, b_sq))| g.weights.shape() == w_sq.shape() && g.biases.len() == b_sq.len());
        if !state_fits {
            return Err(Error::Usage("optimizer state shape mismatch".into()));
        }
        let hyper = self.hyper;
        let form = self.form;
        for ((layer, g), (w_sq, b_sq)) in params
            .layers_mut()
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.gbar_sq.iter_mut())
        {
            for ((w, gv), m) in layer
                .weights
                .iter_mut()
                .zip(g.weights.iter())
                .zip(w_sq.iter_mut())
            {
                *w = update_scalar(*w, *gv, m, &hyper, form);
            }
            for ((w, gv), m) in layer
                .biases
                .iter_mut()
                .zip(g.biases.iter())
                .zip(b_sq.iter_mut())
            {
                *w = update_scalar(*w, *gv, m, &hyper, form);
            }
        }
        self.step_count += 1;
        Ok(())
    }
}

/// One parameter update; `gbar_sq` is advanced in place.
#[inline]
pub fn update_scalar(w: f64, g: f64, gbar_sq: &mut f64, hyper: &MadamHyper, form: UpdateForm) -> f64 {
    *gbar_sq = (1.0 - hyper.beta) * g * g + hyper.beta * *gbar_sq;
    let factor = match form {
        UpdateForm::Exponential => {
            let gbar = gbar_sq.sqrt();
            let r = if gbar > 0.0 { g / gbar } else { 0.0 };
            let limit = hyper.ratio_limit();
            let r = r.clamp(-limit, limit);
            (-hyper.eta * sign(w) * r).exp()
        }
        UpdateForm::Linear => 1.0 - hyper.eta * sign(w) * sign(g),
    };
    (w * factor).clamp(-hyper.sigma_max, hyper.sigma_max)
}

/// Largest learning rate for which the linear multiplicative law provably
/// decreases the loss of a depth-`depth` network whose gradient makes angle
/// `gamma` with the weights: `(1 + cos gamma)^(1/depth) - 1`.
pub fn max_stable_eta(gamma: f64, depth: usize) -> Result<f64> {
    if depth == 0 {
        return Err(Error::Usage("depth must be at least 1".into()));
    }
    if !(0.0..=std::f64::consts::FRAC_PI_2 + 1e-12).contains(&gamma) {
        return Err(Error::Usage(format!("angle {gamma} outside [0, pi/2]")));
    }
    Ok((1.0 + gamma.cos()).powf(1.0 / depth as f64) - 1.0)
}

/// Angle between `|g|` and `|w|` (elementwise absolute values) for one layer.
/// `None` when either side has zero norm.
pub fn layer_gamma(weights: &DMatrix<f64>, grads: &DMatrix<f64>) -> Option<f64> {
    let dot: f64 = weights
        .iter()
        .zip(grads.iter())
        .map(|(w, g)| w.abs() * g.abs())
        .sum();
    let nw = weights.norm();
    let ng = grads.norm();
    if nw == 0.0 || ng == 0.0 {
        return None;
    }
    Some((dot / (nw * ng)).clamp(0.0, 1.0).acos())
}

/// Per-layer angles between `|g_k|` and `|W_k|` over weight matrices.
pub fn gradient_angles(net: &Network, grads: &GradientSet) -> Vec<Option<f64>> {
    net.layers()
        .iter()
        .zip(&grads.layers)
        .map(|(l, g)| layer_gamma(&l.weights, &g.weights))
        .collect()
}

/// The tightest learning-rate bound over all layers with a defined angle.
pub fn network_stable_eta(net: &Network, grads: &GradientSet) -> Option<f64> {
    let depth = net.depth();
    gradient_angles(net, grads)
        .into_iter()
        .flatten()
        .map(|g| max_stable_eta(g.min(std::f64::consts::FRAC_PI_2), depth).unwrap_or(0.0))
        .reduce(f64::min)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrustRatio {
    /// `||dW_l||_F / ||W_l||_F` per layer; `None` where `||W_l||_F = 0`.
    pub per_layer: Vec<Option<f64>>,
    /// `prod_l (1 + ratio_l) - 1`; `None` if any layer is unavailable.
    pub product: Option<f64>,
}

/// Relative Frobenius perturbation between two congruent networks, the
/// quantity bounding relative gradient change under deep relative trust.
pub fn relative_trust_ratio(before: &Network, after: &Network) -> Result<TrustRatio> {
    if before.specs() != after.specs() {
        return Err(Error::Usage("networks are not congruent".into()));
    }
    let per_layer: Vec<Option<f64>> = before
        .layers()
        .iter()
        .zip(after.layers())
        .map(|(b, a)| {
            let base = b.param_norm();
            if base == 0.0 {
                return None;
            }
            let dw = (&a.weights - &b.weights).norm_squared();
            let db = (&a.biases - &b.biases).norm_squared();
            Some((dw + db).sqrt() / base)
        })
        .collect();
    let product = per_layer
        .iter()
        .try_fold(1.0, |acc, r| r.map(|r| acc * (1.0 + r)))
        .map(|p| p - 1.0);
    Ok(TrustRatio { per_layer, product })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{mlp_specs, Activation, Layer};

    fn scalar_net(w: f64) -> Network {
        Network::from_layers(vec![Layer {
            weights: DMatrix::from_element(1, 1, w),
            biases: DVector::zeros(1),
            activation: Activation::Linear,
        }])
        .unwrap()
    }

    fn scalar_grads(g: f64) -> GradientSet {
        GradientSet {
            layers: vec![crate::net::LayerGradient {
                weights: DMatrix::from_element(1, 1, g),
                biases: DVector::zeros(1),
            }],
        }
    }

    #[test]
    fn default_hyper_is_valid_and_zeroed() {
        let net = Network::init(&mlp_specs(4, &[20, 20, 20], 4), 1).unwrap();
        let hyper = MadamHyper::default();
        assert_eq!(hyper.eta, 0.001);
        assert!((hyper.eta_max - 100.0 * hyper.eta).abs() < 1e-15);
        let st = MadamState::new(hyper, &net).unwrap();
        assert_eq!(st.step_count(), 0);
        assert!(st
            .second_moments()
            .iter()
            .all(|(w, b)| w.iter().chain(b.iter()).all(|v| *v == 0.0)));
    }

    #[test]
    fn invalid_hyper_rejected() {
        let net = scalar_net(1.0);
        for h in [
            MadamHyper { beta: 1.0, ..Default::default() },
            MadamHyper { beta: -0.1, ..Default::default() },
            MadamHyper { eta: 0.0, ..Default::default() },
            MadamHyper { eta_max: 0.0001, ..Default::default() },
            MadamHyper { sigma_max: 0.0, ..Default::default() },
        ] {
            assert!(matches!(MadamState::new(h, &net), Err(Error::Config(_))), "{h:?}");
        }
    }

    #[test]
    fn hand_evaluated_step() {
        let hyper = MadamHyper {
            eta: 0.1,
            eta_max: 1.0,
            sigma_max: 10.0,
            beta: 0.0,
        };
        let mut net = scalar_net(1.0);
        let mut st = MadamState::new(hyper, &net).unwrap();
        st.step(&mut net, &scalar_grads(0.5)).unwrap();
        let w = net.layers()[0].weights[(0, 0)];
        assert!((w - 0.904837418).abs() < 1e-9, "{w}");
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut net = Network::init(&mlp_specs(4, &[6, 6], 4), 3).unwrap();
        let before = net.clone();
        let mut st = MadamState::new(MadamHyper::default(), &net).unwrap();
        let g = GradientSet::zeros_like(&net);
        st.step(&mut net, &g).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn weight_clamp_binds() {
        let hyper = MadamHyper {
            eta: 1e-9,
            eta_max: 1e-8,
            sigma_max: 2.0,
            beta: 0.5,
        };
        let mut net = scalar_net(5.0);
        let mut st = MadamState::new(hyper, &net).unwrap();
        st.step(&mut net, &scalar_grads(0.3)).unwrap();
        assert_eq!(net.layers()[0].weights[(0, 0)], 2.0);
    }

    #[test]
    fn non_finite_gradient_is_optimizer_error() {
        let mut net = scalar_net(1.0);
        let mut st = MadamState::new(MadamHyper::default(), &net).unwrap();
        assert!(matches!(
            st.step(&mut net, &scalar_grads(f64::INFINITY)),
            Err(Error::Optimizer(_))
        ));
    }

    #[test]
    fn first_step_ratio_matches_bias_free_moment() {
        // gbar^2 = (1 - beta) g^2 on step one, so r = 1 / sqrt(1 - beta)
        let hyper = MadamHyper::default();
        let mut m = 0.0;
        let w = update_scalar(1.0, 0.2, &mut m, &hyper, UpdateForm::Exponential);
        let r = 1.0 / (1.0 - hyper.beta).sqrt();
        assert!((w - (-hyper.eta * r).exp()).abs() < 1e-14);
    }

    #[test]
    fn linear_form_uses_gradient_sign() {
        let hyper = MadamHyper {
            eta: 0.1,
            eta_max: 1.0,
            sigma_max: 10.0,
            beta: 0.0,
        };
        let mut m = 0.0;
        assert!((update_scalar(2.0, 7.0, &mut m, &hyper, UpdateForm::Linear) - 1.8).abs() < 1e-15);
        assert!((update_scalar(-2.0, 7.0, &mut m, &hyper, UpdateForm::Linear) + 2.2).abs() < 1e-15);
    }

    #[test]
    fn stable_eta_closed_form() {
        assert!((max_stable_eta(0.0, 1).unwrap() - 1.0).abs() < 1e-15);
        assert!(max_stable_eta(std::f64::consts::FRAC_PI_2, 3).unwrap().abs() < 1e-15);
        assert!((max_stable_eta(0.0, 4).unwrap() - 0.189207115).abs() < 1e-9);
        assert!(max_stable_eta(0.1, 0).is_err());
        assert!(max_stable_eta(2.0, 2).is_err());
    }

    #[test]
    fn trust_ratio_identity_and_uniform_scaling() {
        let net = Network::init(&mlp_specs(3, &[5, 5], 2), 9).unwrap();
        let r = relative_trust_ratio(&net, &net).unwrap();
        assert_eq!(r.product, Some(0.0));
        let eta = 0.05;
        let mut scaled = net.clone();
        for l in scaled.layers_mut() {
            l.weights *= 1.0 + eta;
        }
        let r = relative_trust_ratio(&net, &scaled).unwrap();
        let expect = (1.0 + eta).powi(3) - 1.0;
        assert!((r.product.unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn trust_ratio_reports_zero_layers() {
        let mut net = Network::init(&mlp_specs(3, &[5], 2), 9).unwrap();
        net.layers_mut()[1].weights.fill(0.0);
        let r = relative_trust_ratio(&net, &net).unwrap();
        assert_eq!(r.per_layer[1], None);
        assert!(r.per_layer[0].is_some());
        assert_eq!(r.product, None);
    }

    #[test]
    fn gamma_of_aligned_magnitudes_is_zero() {
        let w = DMatrix::from_row_slice(1, 3, &[1.0, -2.0, 3.0]);
        let g = DMatrix::from_row_slice(1, 3, &[-2.0, 4.0, 6.0]);
        assert!(layer_gamma(&w, &g).unwrap().abs() < 1e-7);
        assert_eq!(layer_gamma(&w, &DMatrix::zeros(1, 3)), None);
    }
}
