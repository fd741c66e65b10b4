//! Independent oracles shared by the integration tests. Nothing here calls
//! the code paths it is used to check.

#![allow(dead_code)]

use deepmso::madam::MadamHyper;
use deepmso::net::{Activation, Layer, Network};
use deepmso::plant::{manipulator_matrices, PlantParams};
use nalgebra::{DMatrix, DVector, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Layer-by-layer evaluation with explicit loops.
pub fn straight_line_forward(net: &Network, x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    for layer in net.layers() {
        let mut next = vec![0.0; layer.output_dim()];
        for (i, out) in next.iter_mut().enumerate() {
            let mut z = layer.biases[i];
            for (j, aj) in a.iter().enumerate() {
                z += layer.weights[(i, j)] * aj;
            }
            *out = match layer.activation {
                Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
                Activation::Linear => z,
            };
        }
        a = next;
    }
    a
}

fn half_sq_loss(net: &Network, x: &[f64], target: &[f64]) -> f64 {
    straight_line_forward(net, x)
        .iter()
        .zip(target)
        .map(|(y, t)| 0.5 * (y - t).powi(2))
        .sum()
}

/// Central differences of `0.5 |y - target|^2` for every weight and bias,
/// returned in the same layout as `GradientSet`.
pub fn fd_gradients(net: &Network, x: &[f64], target: &[f64], h: f64) -> Vec<(DMatrix<f64>, DVector<f64>)> {
    let mut probe = net.clone();
    let mut out = Vec::new();
    for l in 0..net.depth() {
        let (r, c) = net.layers()[l].weights.shape();
        let mut gw = DMatrix::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                let orig = probe.layers()[l].weights[(i, j)];
                probe.layers_mut()[l].weights[(i, j)] = orig + h;
                let up = half_sq_loss(&probe, x, target);
                probe.layers_mut()[l].weights[(i, j)] = orig - h;
                let down = half_sq_loss(&probe, x, target);
                probe.layers_mut()[l].weights[(i, j)] = orig;
                gw[(i, j)] = (up - down) / (2.0 * h);
            }
        }
        let mut gb = DVector::zeros(r);
        for i in 0..r {
            let orig = probe.layers()[l].biases[i];
            probe.layers_mut()[l].biases[i] = orig + h;
            let up = half_sq_loss(&probe, x, target);
            probe.layers_mut()[l].biases[i] = orig - h;
            let down = half_sq_loss(&probe, x, target);
            probe.layers_mut()[l].biases[i] = orig;
            gb[i] = (up - down) / (2.0 * h);
        }
        out.push((gw, gb));
    }
    out
}

/// Random network with random (non-zero) biases.
pub fn random_network(rng: &mut ChaCha8Rng, dims: &[usize]) -> Network {
    let n = dims.len() - 1;
    let layers = (0..n)
        .map(|i| Layer {
            weights: DMatrix::from_fn(dims[i + 1], dims[i], |_, _| rng.random_range(-1.5..1.5)),
            biases: DVector::from_fn(dims[i + 1], |_, _| rng.random_range(-0.5..0.5)),
            activation: if i + 1 == n {
                Activation::Linear
            } else {
                Activation::Sigmoid
            },
        })
        .collect();
    Network::from_layers(layers).unwrap()
}

/// Largest entrywise mismatch between analytic and finite-difference
/// gradients, relative where the magnitude allows it.
pub fn worst_gradient_error(
    analytic: &deepmso::GradientSet,
    numeric: &[(DMatrix<f64>, DVector<f64>)],
) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, (nw, nb)) in analytic.layers.iter().zip(numeric) {
        let pairs = a
            .weights
            .iter()
            .zip(nw.iter())
            .chain(a.biases.iter().zip(nb.iter()));
        for (x, y) in pairs {
            let diff = (x - y).abs();
            let scale = x.abs().max(y.abs());
            let err = if scale < 1e-3 { diff / 1e-3 } else { diff / scale };
            worst = worst.max(err);
        }
    }
    worst
}

/// Plain transcription of one multiplicative adaptive-moments update:
/// moment EMA, normalized ratio (0 for 0/0), ratio clamp, exponential
/// factor, magnitude clamp.
pub fn madam_reference(w: f64, g: f64, gbar_sq: f64, h: &MadamHyper) -> (f64, f64) {
    let m = (1.0 - h.beta) * g.powi(2) + h.beta * gbar_sq;
    let gbar = m.sqrt();
    let mut r = if gbar == 0.0 { 0.0 } else { g / gbar };
    let lim = h.eta_max / h.eta;
    if r > lim {
        r = lim;
    }
    if r < -lim {
        r = -lim;
    }
    let s = if w > 0.0 {
        1.0
    } else if w < 0.0 {
        -1.0
    } else {
        0.0
    };
    let mut next = w * (-h.eta * s * r).exp();
    if next > h.sigma_max {
        next = h.sigma_max;
    }
    if next < -h.sigma_max {
        next = -h.sigma_max;
    }
    (next, m)
}

/// `0.5 |A (W1^T v) - b|^2`: a two-layer deep-linear parameterization of a
/// least-squares problem.
pub struct DeepLinear {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl DeepLinear {
    pub fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Self {
        Self {
            a: DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0)),
            b: DVector::from_fn(rows, |_, _| rng.random_range(-1.0..1.0)),
        }
    }

    pub fn residual(&self, w1: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
        &self.a * (w1.transpose() * v) - &self.b
    }

    pub fn loss(&self, w1: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
        0.5 * self.residual(w1, v).norm_squared()
    }

    /// `(dL/dW1, dL/dv)`.
    pub fn gradients(&self, w1: &DMatrix<f64>, v: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let gw = self.a.transpose() * self.residual(w1, v);
        (v * gw.transpose(), w1 * gw)
    }
}

/// Classical RK4 for the arm with torque `tau(t)`, also integrating the
/// supplied power `qdot . tau`. Returns the worst `|E(t) - E(0) - W(t)|`.
pub fn energy_residual_rk4(
    p: &PlantParams,
    x0: Vector4<f64>,
    tau: impl Fn(f64) -> Vector2<f64>,
    dt: f64,
    t_final: f64,
) -> f64 {
    let accel = |x: &Vector4<f64>, u: &Vector2<f64>| -> Vector4<f64> {
        // independent of plant_derivative: explicit 2x2 inverse
        let mm = manipulator_matrices(p, x);
        let m = mm.m;
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        let rhs = u - mm.vm * Vector2::new(x[2], x[3]) - mm.g;
        let a1 = (m[(1, 1)] * rhs[0] - m[(0, 1)] * rhs[1]) / det;
        let a2 = (-m[(1, 0)] * rhs[0] + m[(0, 0)] * rhs[1]) / det;
        Vector4::new(x[2], x[3], a1, a2)
    };
    let energy = |x: &Vector4<f64>| -> f64 {
        // point masses: kinetic energy from tip velocities
        let (q1, q2, d1, d2) = (x[0], x[1], x[2], x[3]);
        let v1 = Vector2::new(-p.l1 * q1.sin() * d1, p.l1 * q1.cos() * d1);
        let v2 = v1
            + Vector2::new(
                -p.l2 * (q1 + q2).sin() * (d1 + d2),
                p.l2 * (q1 + q2).cos() * (d1 + d2),
            );
        let kin = 0.5 * p.m1 * v1.norm_squared() + 0.5 * p.m2 * v2.norm_squared();
        let y1 = p.l1 * q1.sin();
        let y2 = y1 + p.l2 * (q1 + q2).sin();
        kin + p.gravity * (p.m1 * y1 + p.m2 * y2)
    };
    let n = (t_final / dt).round() as usize;
    let mut x = x0;
    let mut work = 0.0;
    let e0 = energy(&x);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let t = i as f64 * dt;
        let power = |x: &Vector4<f64>, t: f64| x[2] * tau(t)[0] + x[3] * tau(t)[1];
        let k1 = accel(&x, &tau(t));
        let p1 = power(&x, t);
        let x2 = x + k1 * (0.5 * dt);
        let k2 = accel(&x2, &tau(t + 0.5 * dt));
        let p2 = power(&x2, t + 0.5 * dt);
        let x3 = x + k2 * (0.5 * dt);
        let k3 = accel(&x3, &tau(t + 0.5 * dt));
        let p3 = power(&x3, t + 0.5 * dt);
        let x4 = x + k3 * dt;
        let k4 = accel(&x4, &tau(t + dt));
        let p4 = power(&x4, t + dt);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        work += (p1 + 2.0 * p2 + 2.0 * p3 + p4) * (dt / 6.0);
        worst = worst.max((energy(&x) - e0 - work).abs());
    }
    worst
}
