//! Model-free tracking control with an online-trained deep network.
//!
//! A deep perceptron inside a modified state observer learns the complete
//! plant drift from the estimation error, trained every control cycle by a
//! multiplicative, sign-driven optimizer. A dynamic inversion law with slack
//! augmentation uses that estimate to impose first-order error dynamics on a
//! simulated two-link planar arm.

pub mod controller;
pub mod error;
pub mod madam;
pub mod net;
pub mod observer;
pub mod plant;
pub mod sim;
pub mod trace;

pub use controller::{ControlOutput, ControllerConfig};
pub use error::{Error, Result};
pub use madam::{MadamHyper, MadamState, UpdateForm};
pub use net::{Activation, GradientSet, LayerSpec, Network};
pub use observer::{Observer, ObserverConfig};
pub use plant::{PlantParams, ReferenceSignal, StateVector};
pub use sim::{run_episode, Estimator, RunLog, SimConfig, StepRecord};
