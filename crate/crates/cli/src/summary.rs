use deepmso::sim::{lyapunov_diagnostic, tracking_metrics, LyapunovReport, TrackingMetrics};
use deepmso::{Estimator, RunLog, SimConfig};
use serde::Serialize;

/// Start of the evaluation window; transients before it are ignored.
pub const SETTLE_TIME: f64 = 2.0;

pub fn settle_for(t_final: f64) -> f64 {
    if t_final > SETTLE_TIME {
        SETTLE_TIME
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub estimator: Estimator,
    pub seed: u64,
    pub records: usize,
    pub complete: bool,
    pub abort: Option<String>,
    pub window_start: f64,
    pub metrics: Option<TrackingMetrics>,
    pub lyapunov: LyapunovReport,
    /// Descent-guaranteeing learning rate for the final-step gradient angles.
    pub max_stable_eta: Option<f64>,
    pub final_gammas: Vec<Option<f64>>,
    pub max_param_magnitude: f64,
    pub config: SimConfig,
}

impl RunSummary {
    pub fn from_log(cfg: &SimConfig, log: &RunLog) -> Self {
        let settle = settle_for(cfg.sim.t_final);
        Self {
            estimator: cfg.sim.nn,
            seed: cfg.sim.seed,
            records: log.records.len(),
            complete: log.is_complete(),
            abort: log.abort.clone(),
            window_start: settle,
            metrics: tracking_metrics(log, settle).ok(),
            lyapunov: lyapunov_diagnostic(log, settle),
            max_stable_eta: log.final_stable_eta,
            final_gammas: log.final_gammas.clone(),
            max_param_magnitude: log.max_param_magnitude,
            config: cfg.clone(),
        }
    }

    pub fn rms(&self) -> Option<f64> {
        self.metrics.map(|m| m.rms_e_r)
    }
}
