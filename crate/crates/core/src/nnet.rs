//! Single-hidden-layer tanh network for regression, trained full-batch with
//! Adam from several seeded restarts.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub hidden: usize,
    /// Penalty on the sum of squared weights, added to the sum (not mean) of
    /// squared errors.
    pub weight_decay: f64,
    pub steps: usize,
    pub step_size: f64,
    pub restarts: usize,
    /// Half-width of the uniform initialization interval.
    pub init_range: f64,
}

impl Default for NetParams {
    fn default() -> Self {
        Self { hidden: 8, weight_decay: 0.01, steps: 500, step_size: 0.01, restarts: 3, init_range: 0.7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralNet {
    x_mean: Vec<f64>,
    x_scale: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    /// p × hidden, column-major.
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
    /// Penalized training loss of the retained restart.
    pub training_loss: f64,
    /// False when the retained restart was still improving at the last step
    /// or produced a non-finite loss.
    pub converged: bool,
}

/// Flat parameter layout: `w1` (p × hidden, column-major), `b1`, `w2`, `b2`.
#[derive(Clone, Copy)]
struct Layout {
    p: usize,
    h: usize,
}

impl Layout {
    fn len(self) -> usize {
        self.p * self.h + 2 * self.h + 1
    }

    fn b1(self) -> usize {
        self.p * self.h
    }

    fn w2(self) -> usize {
        self.p * self.h + self.h
    }

    fn b2(self) -> usize {
        self.p * self.h + 2 * self.h
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = B1 * self.m[k] + (1.0 - B1) * grad[k];
            self.v[k] = B2 * self.v[k] + (1.0 - B2) * grad[k] * grad[k];
            params[k] -= lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + 1e-8);
        }
    }
}

fn standardize(x: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let m = x.nrows() as f64;
    let mut mean = Vec::with_capacity(x.ncols());
    let mut scale = Vec::with_capacity(x.ncols());
    for j in 0..x.ncols() {
        let col = x.column(j);
        let mu = col.sum() / m;
        let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / m;
        mean.push(mu);
        scale.push(if var > 1e-24 { var.sqrt() } else { 1.0 });
    }
    (mean, scale)
}

impl NeuralNet {
    /// Fits from `params.restarts` initializations drawn from the stream
    /// `(seed, stream_name, restart)` and keeps the lowest training loss.
    pub fn fit(x: &DMatrix<f64>, y: &[f64], params: NetParams, seed: u64, stream_name: &str) -> Self {
        let (m, p) = x.shape();
        let (x_mean, x_scale) = standardize(x);
        let xs: Vec<f64> = (0..m)
            .flat_map(|i| (0..p).map(move |j| (i, j)))
            .map(|(i, j)| (x[(i, j)] - x_mean[j]) / x_scale[j])
            .collect();
        let y_mean = y.iter().sum::<f64>() / m as f64;
        let y_var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / m as f64;
        let y_scale = if y_var > 1e-24 { y_var.sqrt() } else { 1.0 };
        let t: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();
        let layout = Layout { p, h: params.hidden };

        let mut best: Option<(f64, bool, Vec<f64>)> = None;
        for restart in 0..params.restarts.max(1) {
            let mut rng = rng::stream(seed, stream_name, &[restart as u64]);
            let r = params.init_range;
            let init: Vec<f64> = (0..layout.len()).map(|_| rng.gen_range(-r..=r)).collect();
            let (loss, converged, fitted) = train(&xs, &t, init, layout, params);
            let better = match &best {
                None => true,
                Some((b, _, _)) => loss < *b || !b.is_finite(),
            };
            if better {
                best = Some((loss, converged, fitted));
            }
        }
        let (training_loss, converged, fitted) = best.expect("at least one restart");
        NeuralNet {
            x_mean,
            x_scale,
            y_mean,
            y_scale,
            w1: fitted[..layout.b1()].to_vec(),
            b1: fitted[layout.b1()..layout.w2()].to_vec(),
            w2: fitted[layout.w2()..layout.b2()].to_vec(),
            b2: fitted[layout.b2()],
            training_loss,
            converged,
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let p = self.x_mean.len();
        let h = self.b1.len();
        let mut out = self.b2;
        for k in 0..h {
            let mut z = self.b1[k];
            for j in 0..p {
                // w1 is p × hidden, column-major.
                z += self.w1[k * p + j] * (row[j] - self.x_mean[j]) / self.x_scale[j];
            }
            out += self.w2[k] * z.tanh();
        }
        self.y_mean + self.y_scale * out
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let mut row = vec![0.0; x.ncols()];
        (0..x.nrows())
            .map(|i| {
                for (j, r) in row.iter_mut().enumerate() {
                    *r = x[(i, j)];
                }
                self.predict_row(&row)
            })
            .collect()
    }
}

/// Penalized loss at `theta`, writing its gradient into `grad`. `x` is
/// row-major with `layout.p` columns.
fn loss_and_grad(x: &[f64], t: &[f64], theta: &[f64], layout: Layout, decay: f64, grad: &mut [f64]) -> f64 {
    let Layout { p, h } = layout;
    let m = t.len() as f64;
    let (w1, rest) = theta.split_at(layout.b1());
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(h);
    let b2 = b2[0];
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut hidden = vec![0.0; h];
    let mut sse = 0.0;
    for (row, &ti) in x.chunks_exact(p).zip(t) {
        let mut out = b2;
        for k in 0..h {
            let col = &w1[k * p..(k + 1) * p];
            let z = b1[k] + col.iter().zip(row).map(|(w, v)| w * v).sum::<f64>();
            hidden[k] = z.tanh();
            out += w2[k] * hidden[k];
        }
        let r = out - ti;
        sse += r * r;
        let d = 2.0 * r / m;
        grad[layout.b2()] += d;
        for k in 0..h {
            grad[layout.w2() + k] += d * hidden[k];
            let dh = d * w2[k] * (1.0 - hidden[k] * hidden[k]);
            grad[layout.b1() + k] += dh;
            for (g, v) in grad[k * p..(k + 1) * p].iter_mut().zip(row) {
                *g += dh * v;
            }
        }
    }
    let penalty = decay / m;
    let mut norm = 0.0;
    for (k, w) in w1.iter().enumerate() {
        norm += w * w;
        grad[k] += 2.0 * penalty * w;
    }
    for (k, w) in w2.iter().enumerate() {
        norm += w * w;
        grad[layout.w2() + k] += 2.0 * penalty * w;
    }
    sse / m + penalty * norm
}

fn train(x: &[f64], t: &[f64], mut theta: Vec<f64>, layout: Layout, params: NetParams) -> (f64, bool, Vec<f64>) {
    let mut adam = Adam::new(theta.len());
    let mut grad = vec![0.0; theta.len()];
    let mut best_loss = f64::INFINITY;
    let mut best_theta = theta.clone();
    let mut history = Vec::with_capacity(params.steps + 1);
    for _ in 0..params.steps {
        let loss = loss_and_grad(x, t, &theta, layout, params.weight_decay, &mut grad);
        history.push(loss);
        if loss.is_finite() && loss < best_loss {
            best_loss = loss;
            best_theta.copy_from_slice(&theta);
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            break;
        }
        adam.step(&mut theta, &grad, params.step_size);
    }
    let final_loss = loss_and_grad(x, t, &theta, layout, params.weight_decay, &mut grad);
    if final_loss.is_finite() && final_loss < best_loss {
        best_loss = final_loss;
        best_theta.copy_from_slice(&theta);
    }
    let window = (params.steps / 10).max(1);
    let converged = best_loss.is_finite()
        && history.len() > window
        && (history[history.len() - window] - best_loss) <= 1e-3 * best_loss.abs().max(1e-12);
    (best_loss, converged, best_theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_finite_differences() {
        let x: Vec<f64> = (0..60).map(|k| ((k / 2 * 7 + k % 2 * 3) % 11) as f64 / 5.0 - 1.0).collect();
        let t: Vec<f64> = (0..30).map(|i| ((i % 5) as f64 - 2.0) / 2.0).collect();
        let layout = Layout { p: 2, h: 4 };
        let mut rng = rng::stream(1, "fd", &[]);
        let theta: Vec<f64> = (0..layout.len()).map(|_| rng.gen_range(-0.7..0.7)).collect();
        let mut grad = vec![0.0; layout.len()];
        let mut scratch = grad.clone();
        loss_and_grad(&x, &t, &theta, layout, 0.05, &mut grad);
        for k in 0..theta.len() {
            let h = 1e-6;
            let mut up = theta.clone();
            up[k] += h;
            let mut dn = theta.clone();
            dn[k] -= h;
            let lu = loss_and_grad(&x, &t, &up, layout, 0.05, &mut scratch);
            let ld = loss_and_grad(&x, &t, &dn, layout, 0.05, &mut scratch);
            let fd = (lu - ld) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-6, "component {k}: {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn learns_a_smooth_curve() {
        let x = DMatrix::from_fn(200, 1, |i, _| -2.0 + 4.0 * i as f64 / 199.0);
        let y: Vec<f64> = (0..200).map(|i| (x[(i, 0)] * 1.5).sin()).collect();
        let net = NeuralNet::fit(&x, &y, NetParams::default(), 11, "curve");
        let mse = net.predict(&x).iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 200.0;
        assert!(mse < 0.05, "mse {mse}");
    }

    #[test]
    fn prediction_reproduces_training_loss_with_several_inputs() {
        let x = DMatrix::from_fn(150, 3, |i, j| ((i * 7 + j * 13) % 17) as f64 / 8.0 - 1.0);
        let y: Vec<f64> = (0..150).map(|i| x[(i, 0)] - 0.5 * x[(i, 2)]).collect();
        let net = NeuralNet::fit(&x, &y, NetParams::default(), 2, "multi");
        let mse = net.predict(&x).iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 150.0;
        assert!(mse < 0.02, "mse {mse}");
    }

    #[test]
    fn restarts_are_reproducible() {
        let x = DMatrix::from_fn(50, 2, |i, j| ((i + j) % 9) as f64);
        let y: Vec<f64> = (0..50).map(|i| (i % 4) as f64).collect();
        let a = NeuralNet::fit(&x, &y, NetParams::default(), 5, "net");
        let b = NeuralNet::fit(&x, &y, NetParams::default(), 5, "net");
        assert_eq!(a, b);
    }
}
