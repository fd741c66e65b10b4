//! Closed-loop episodes: plant, observer, controller and online training
//! advanced together with a fixed step, plus the tracking and
//! ultimate-boundedness diagnostics computed from the resulting log.

use nalgebra::{Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::controller::{compute_control, ControlMatrixSource, ControllerConfig};
use crate::error::{Error, Result};
use crate::madam::{self, MadamHyper, MadamState};
use crate::net::{mlp_specs, InitOptions, InitScale, Network};
use crate::observer::{Observer, ObserverConfig};
use crate::plant::{self, PlantParams, StateVector};

/// Source of the drift estimate used by the controller and observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Online-trained network.
    #[default]
    On,
    /// No estimate (`f_hat = 0`), no training.
    Off,
    /// True plant drift; only possible in simulation.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    Euler,
    /// Explicit midpoint for the plant with the torque held over the step.
    Midpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Hidden layer widths; input and output are fixed at 4.
    pub hidden: Vec<usize>,
    pub init_scale: InitScale,
    pub bias_std: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![20, 20, 20],
            init_scale: InitScale::FanIn,
            bias_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub dt: f64,
    pub t_final: f64,
    pub x0: [f64; 4],
    /// Initial observer estimate; defaults to `x0`.
    pub x_hat0: Option<[f64; 4]>,
    pub nn: Estimator,
    pub seed: u64,
    pub integrator: Integrator,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            dt: 0.001,
            t_final: 10.0,
            x0: [0.5, 0.5, 0.0, 0.0],
            x_hat0: None,
            nn: Estimator::On,
            seed: 1,
            integrator: Integrator::Euler,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub plant: PlantParams,
    pub controller: ControllerConfig,
    pub observer: ObserverConfig,
    pub network: NetworkConfig,
    pub madam: MadamHyper,
    pub sim: RunSettings,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.controller.validate()?;
        self.observer.validate()?;
        self.madam.validate()?;
        let s = &self.sim;
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", s.dt)));
        }
        if !(s.t_final >= s.dt && s.t_final.is_finite()) {
            return Err(Error::Config(format!(
                "t_final ({}) must be at least dt ({})",
                s.t_final, s.dt
            )));
        }
        if s.x0.iter().chain(s.x_hat0.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Config("initial states must be finite".into()));
        }
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            return Err(Error::Config(
                "network needs at least one hidden layer of non-zero width".into(),
            ));
        }
        if !(self.network.bias_std >= 0.0 && self.network.bias_std.is_finite()) {
            return Err(Error::Config("bias_std must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Number of logged steps, `floor(t_final / dt) + 1`.
    pub fn record_count(&self) -> usize {
        steps(self.sim.t_final, self.sim.dt) + 1
    }

    pub fn build_network(&self) -> Result<Network> {
        let specs = mlp_specs(4, &self.network.hidden, 4);
        let opts = InitOptions {
            scale: self.network.init_scale,
            bias_std: self.network.bias_std,
        };
        Network::init_with(&specs, self.sim.seed, &opts)
    }
}

fn steps(t_final: f64, dt: f64) -> usize {
    // guard against 10.0 / 0.001 = 9999.999...
    (t_final / dt + 1e-9).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub x: StateVector,
    pub x_d: StateVector,
    pub x_hat: StateVector,
    pub u: Vector2<f64>,
    /// `x - x_d`.
    pub e_r: StateVector,
    /// `x - x_hat`.
    pub e_a: StateVector,
    pub f_hat: StateVector,
    /// True drift from the simulated plant.
    pub f_true: StateVector,
    /// `|f_true - f_hat|`.
    pub ftilde_norm: f64,
    /// `0.5 |Lambda e_a|^2`.
    pub loss: f64,
    pub condition: f64,
    pub saturated: bool,
}

impl StepRecord {
    /// `x_hat - x_d`.
    pub fn e_r_hat(&self) -> StateVector {
        self.x_hat - self.x_d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub dt: f64,
    pub t_final: f64,
    /// Smallest eigenvalue of the tracking gain.
    pub min_gain: f64,
    pub records: Vec<StepRecord>,
    pub abort: Option<String>,
    /// Largest parameter magnitude observed after any training step.
    pub max_param_magnitude: f64,
    /// Per-layer angle between `|g|` and `|W|` at the last training step.
    pub final_gammas: Vec<Option<f64>>,
    /// Tightest descent-guaranteeing learning rate for those angles.
    pub final_stable_eta: Option<f64>,
}

impl RunLog {
    pub fn is_complete(&self) -> bool {
        self.abort.is_none()
    }
}

fn nominal_or_exact(cfg: &SimConfig, x: &StateVector, nominal: &Matrix4x2<f64>) -> Matrix4x2<f64> {
    match cfg.controller.control_matrix {
        ControlMatrixSource::Exact => plant::control_matrix(&cfg.plant, x),
        ControlMatrixSource::Nominal => *nominal,
    }
}

fn advance_plant(p: &PlantParams, x: &StateVector, u: &Vector2<f64>, dt: f64, scheme: Integrator) -> StateVector {
    match scheme {
        Integrator::Euler => x + plant::plant_derivative(p, x, u) * dt,
        Integrator::Midpoint => {
            let mid = x + plant::plant_derivative(p, x, u) * (0.5 * dt);
            x + plant::plant_derivative(p, &mid, u) * dt
        }
    }
}

/// Runs one episode. Configuration problems are returned as errors; a
/// numerical breakdown mid-run yields a partial log with `abort` set.
pub fn run_episode(cfg: &SimConfig) -> Result<RunLog> {
    cfg.validate()?;
    let s = &cfg.sim;
    let n = steps(s.t_final, s.dt);
    let x0 = Vector4::from(s.x0);
    let x_hat0 = s.x_hat0.map(Vector4::from).unwrap_or(x0);
    let net = cfg.build_network()?;
    let opt = MadamState::new(cfg.madam, &net)?;
    let mut observer = Observer::new(cfg.observer, x_hat0, net, opt)?;
    let nominal_b = plant::control_matrix(&cfg.plant, &x0);
    let lambda = Vector4::from(cfg.observer.lambda);

    let mut log = RunLog {
        dt: s.dt,
        t_final: s.t_final,
        min_gain: cfg.controller.min_gain(),
        records: Vec::with_capacity(n + 1),
        abort: None,
        max_param_magnitude: observer.network().max_abs_param(),
        final_gammas: Vec::new(),
        final_stable_eta: None,
    };

    let mut x = x0;
    for i in 0..=n {
        let t = i as f64 * s.dt;
        match closed_loop_step(cfg, &mut observer, &mut x, &nominal_b, &lambda, t, i == n, &mut log) {
            Ok(()) => {}
            Err(e) => {
                log.abort = Some(format!("t = {t}: {e}"));
                break;
            }
        }
    }
    Ok(log)
}

#[allow(clippy::too_many_arguments)]
fn closed_loop_step(
    cfg: &SimConfig,
    observer: &mut Observer,
    x: &mut StateVector,
    nominal_b: &Matrix4x2<f64>,
    lambda: &Vector4<f64>,
    t: f64,
    last: bool,
    log: &mut RunLog,
) -> Result<()> {
    let s = &cfg.sim;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("plant state is not finite".into()));
    }
    let reference = plant::reference(t);
    let e_a = observer.estimation_error(x);
    let f_true = plant::drift(&cfg.plant, x);
    let f_hat = match s.nn {
        Estimator::On => observer.f_hat(x)?,
        Estimator::Off => Vector4::zeros(),
        Estimator::Oracle => f_true,
    };
    let b = nominal_or_exact(cfg, x, nominal_b);
    let control = compute_control(&cfg.controller, &f_hat, x, &reference, &b)?;
    let u = control.u;

    let loss = if s.nn == Estimator::On {
        if last {
            let grads = observer.gradient(x, &e_a)?;
            log.final_gammas = madam::gradient_angles(observer.network(), &grads);
            log.final_stable_eta = madam::network_stable_eta(observer.network(), &grads);
        }
        let loss = observer.train(x, &e_a)?;
        log.max_param_magnitude = log.max_param_magnitude.max(observer.network().max_abs_param());
        loss
    } else {
        0.5 * lambda.component_mul(&e_a).norm_squared()
    };

    log.records.push(StepRecord {
        t,
        x: *x,
        x_d: reference.x_d,
        x_hat: *observer.x_hat(),
        u,
        e_r: *x - reference.x_d,
        e_a,
        f_hat,
        f_true,
        ftilde_norm: (f_true - f_hat).norm(),
        loss,
        condition: control.condition,
        saturated: control.saturated,
    });

    if !last {
        let next = advance_plant(&cfg.plant, x, &u, s.dt, s.integrator);
        observer.propagate(&f_hat, x, &u, &b, s.dt)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("plant state diverged".into()));
        }
        *x = next;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrackingMetrics {
    /// RMS of `|e_r|` over the window.
    pub rms_e_r: f64,
    pub max_e_r: f64,
    /// RMS of each error component; the first two are the joint angles.
    pub component_rms: [f64; 4],
    pub final_e_r: f64,
    pub samples: usize,
}

impl TrackingMetrics {
    pub fn joint_rms(&self) -> [f64; 2] {
        [self.component_rms[0], self.component_rms[1]]
    }
}

fn in_window(t: f64, settle: f64, dt: f64) -> bool {
    t >= settle - 1e-6 * dt
}

pub fn tracking_metrics(log: &RunLog, settle: f64) -> Result<TrackingMetrics> {
    let window: Vec<&StepRecord> = log
        .records
        .iter()
        .filter(|r| in_window(r.t, settle, log.dt))
        .collect();
    if window.is_empty() {
        return Err(Error::Usage(format!(
            "no samples at or after t = {settle} (log ends at t = {})",
            log.records.last().map_or(0.0, |r| r.t)
        )));
    }
    let count = window.len() as f64;
    let mut sq = [0.0; 4];
    let mut total = 0.0;
    let mut max_e: f64 = 0.0;
    for r in &window {
        for (acc, v) in sq.iter_mut().zip(r.e_r.iter()) {
            *acc += v * v;
        }
        let n2 = r.e_r.norm_squared();
        total += n2;
        max_e = max_e.max(n2.sqrt());
    }
    Ok(TrackingMetrics {
        rms_e_r: (total / count).sqrt(),
        max_e_r: max_e,
        component_rms: sq.map(|v| (v / count).sqrt()),
        final_e_r: window[window.len() - 1].e_r.norm(),
        samples: window.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovReport {
    /// Steps outside the ultimate bound at which `|e_r|^2` still grew.
    pub violations: usize,
    /// Steps examined (those with a successor inside the window).
    pub checked: usize,
    /// `|e_r| / (eps_t / lambda_min(K))` per examined step.
    #[serde(skip)]
    pub ratio_series: Vec<f64>,
    /// Largest `|f_true - f_hat|` over the window.
    pub epsilon_hat: f64,
    /// `epsilon_hat / lambda_min(K)`.
    pub uub_radius: f64,
}

impl LyapunovReport {
    pub fn violation_fraction(&self) -> f64 {
        if self.checked == 0 {
            0.0
        } else {
            self.violations as f64 / self.checked as f64
        }
    }
}

/// Discrete check of `dL/dt <= 2 |e_r| eps - 2 lambda_min(K) |e_r|^2` with
/// `L = |e_r|^2`: outside the radius `eps / lambda_min(K)` the candidate must
/// not grow. The growth rate is a forward difference, allowed a slack of
/// `10 dt` for the one-step integration error.
pub fn lyapunov_diagnostic(log: &RunLog, settle: f64) -> LyapunovReport {
    let lam = log.min_gain;
    let tol = 10.0 * log.dt;
    let mut violations = 0;
    let mut ratio_series = Vec::new();
    let mut epsilon_hat: f64 = 0.0;
    for pair in log.records.windows(2) {
        let (cur, next) = (&pair[0], &pair[1]);
        if !in_window(cur.t, settle, log.dt) {
            continue;
        }
        let eps = cur.ftilde_norm;
        epsilon_hat = epsilon_hat.max(eps);
        let radius = eps / lam;
        let err = cur.e_r.norm();
        ratio_series.push(if radius > 0.0 { err / radius } else { f64::INFINITY });
        let rate = (next.e_r.norm_squared() - cur.e_r.norm_squared()) / (next.t - cur.t);
        if err > radius && rate > tol {
            violations += 1;
        }
    }
    if let Some(last) = log.records.last() {
        if in_window(last.t, settle, log.dt) {
            epsilon_hat = epsilon_hat.max(last.ftilde_norm);
        }
    }
    LyapunovReport {
        violations,
        checked: ratio_series.len(),
        ratio_series,
        epsilon_hat,
        uub_radius: epsilon_hat / lam,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(nn: Estimator) -> SimConfig {
        let mut cfg = SimConfig::default();
        cfg.sim.t_final = 0.5;
        cfg.sim.nn = nn;
        cfg
    }

    fn synthetic(errors: &[f64], ftilde: f64) -> RunLog {
        let dt = 0.001;
        RunLog {
            dt,
            t_final: dt * (errors.len() - 1) as f64,
            min_gain: 7.5,
            records: errors
                .iter()
                .enumerate()
                .map(|(i, e)| StepRecord {
                    t: i as f64 * dt,
                    x: Vector4::zeros(),
                    x_d: Vector4::zeros(),
                    x_hat: Vector4::zeros(),
                    u: Vector2::zeros(),
                    e_r: Vector4::new(*e, 0.0, 0.0, 0.0),
                    e_a: Vector4::zeros(),
                    f_hat: Vector4::zeros(),
                    f_true: Vector4::zeros(),
                    ftilde_norm: ftilde,
                    loss: 0.0,
                    condition: 1.0,
                    saturated: false,
                })
                .collect(),
            abort: None,
            max_param_magnitude: 0.0,
            final_gammas: vec![],
            final_stable_eta: None,
        }
    }

    #[test]
    fn record_count_contract() {
        let cfg = SimConfig::default();
        assert_eq!(cfg.record_count(), 10001);
        let log = run_episode(&short(Estimator::On)).unwrap();
        assert_eq!(log.records.len(), 501);
        assert!(log.is_complete());
    }

    #[test]
    fn invalid_config_is_an_error() {
        let mut cfg = short(Estimator::On);
        cfg.sim.dt = 0.0;
        assert!(matches!(run_episode(&cfg), Err(Error::Config(_))));
        let mut cfg = short(Estimator::On);
        cfg.sim.t_final = 0.0001;
        assert!(matches!(run_episode(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_log() {
        let a = run_episode(&short(Estimator::On)).unwrap();
        let b = run_episode(&short(Estimator::On)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn estimation_error_logged_from_same_step() {
        let log = run_episode(&short(Estimator::On)).unwrap();
        for r in &log.records {
            assert_eq!(r.e_a, r.x - r.x_hat);
        }
        assert_eq!(log.records[0].e_a, Vector4::zeros());
    }

    #[test]
    fn divergence_aborts_with_partial_log() {
        let mut cfg = short(Estimator::Off);
        cfg.sim.x0 = [0.5, 0.5, 1e300, 1e300];
        let log = run_episode(&cfg).unwrap();
        assert!(log.abort.is_some());
        assert!(log.records.len() < cfg.record_count());
    }

    #[test]
    fn metrics_of_zero_and_constant_errors() {
        let m = tracking_metrics(&synthetic(&[0.0; 20], 0.0), 0.0).unwrap();
        assert_eq!((m.rms_e_r, m.max_e_r, m.final_e_r), (0.0, 0.0, 0.0));
        let m = tracking_metrics(&synthetic(&[0.2; 20], 0.0), 0.005).unwrap();
        assert!((m.rms_e_r - 0.2).abs() < 1e-15);
        assert_eq!(m.samples, 15);
        assert!(matches!(
            tracking_metrics(&synthetic(&[0.2; 20], 0.0), 1.0),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn growing_error_with_exact_estimate_is_flagged_everywhere() {
        let errors: Vec<f64> = (0..50).map(|i| 0.1 + 0.01 * i as f64).collect();
        let rep = lyapunov_diagnostic(&synthetic(&errors, 0.0), 0.0);
        assert_eq!(rep.checked, 49);
        assert_eq!(rep.violations, 49);
        assert_eq!(rep.epsilon_hat, 0.0);
    }

    #[test]
    fn decaying_error_has_no_violations() {
        let errors: Vec<f64> = (0..200).map(|i| (-7.5 * 0.001 * i as f64).exp()).collect();
        let rep = lyapunov_diagnostic(&synthetic(&errors, 0.0), 0.0);
        assert_eq!(rep.violations, 0);
    }

    #[test]
    fn growth_inside_the_bound_is_allowed() {
        let errors: Vec<f64> = (0..50).map(|i| 0.01 + 0.001 * i as f64).collect();
        // radius = 7.5 / 7.5 = 1 > every error
        let rep = lyapunov_diagnostic(&synthetic(&errors, 7.5), 0.0);
        assert_eq!(rep.violations, 0);
        assert_eq!(rep.uub_radius, 1.0);
    }
}
