//! The Q-function approximator: a fully connected net (input -> 128 -> 64
//! -> 1, ReLU hidden, linear output) in f64, trained on Huber loss with
//! mini-batch gradient descent and per-parameter moment estimates. Written
//! by hand so the gradients can be verified against finite differences and
//! every run is bit-reproducible for a fixed seed.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HIDDEN1: usize = 128;
pub const HIDDEN2: usize = 64;

/// Fully connected Q-network. Weight matrices are (out x in).
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub input_width: usize,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

impl QNetwork {
    /// Fresh network with scaled uniform fan-in initialization
    /// (U[-1/sqrt(fan_in), 1/sqrt(fan_in)]) and zero biases.
    pub fn new(input_width: usize, seed: u64) -> Self {
        assert!(input_width > 0, "network needs at least one input");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |rows: usize, cols: usize| {
            let bound = 1.0 / (cols as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
        };
        let w1 = init(HIDDEN1, input_width);
        let w2 = init(HIDDEN2, HIDDEN1);
        let w3 = init(1, HIDDEN2);
        Self {
            input_width,
            w1,
            b1: Array1::zeros(HIDDEN1),
            w2,
            b2: Array1::zeros(HIDDEN2),
            w3,
            b3: Array1::zeros(1),
        }
    }

    pub fn forward_one(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.input_width);
        let mut a1 = vec![0.0; HIDDEN1];
        for (h, out) in a1.iter_mut().enumerate() {
            let row = self.w1.row(h);
            let mut z = self.b1[h];
            for (w, xi) in row.iter().zip(x) {
                z += w * xi;
            }
            *out = z.max(0.0);
        }
        let mut a2 = vec![0.0; HIDDEN2];
        for (h, out) in a2.iter_mut().enumerate() {
            let row = self.w2.row(h);
            let mut z = self.b2[h];
            for (w, ai) in row.iter().zip(&a1) {
                z += w * ai;
            }
            *out = z.max(0.0);
        }
        let mut y = self.b3[0];
        for (w, ai) in self.w3.row(0).iter().zip(&a2) {
            y += w * ai;
        }
        y
    }

    /// Predictions for a batch (one sample per row).
    pub fn forward_batch(&self, x: &ArrayView2<f64>) -> Array1<f64> {
        debug_assert_eq!(x.ncols(), self.input_width);
        let mut a1 = x.dot(&self.w1.t());
        a1 += &self.b1;
        a1.mapv_inplace(|v| v.max(0.0));
        let mut a2 = a1.dot(&self.w2.t());
        a2 += &self.b2;
        a2.mapv_inplace(|v| v.max(0.0));
        let mut out = a2.dot(&self.w3.t());
        out += self.b3[0];
        out.index_axis_move(Axis(1), 0)
    }

    /// Mean Huber loss over a batch and its gradient with respect to every
    /// parameter, via backpropagation.
    pub fn loss_and_gradients(
        &self,
        x: &ArrayView2<f64>,
        y: &[f64],
        delta: f64,
    ) -> (f64, Gradients) {
        let n = x.nrows();
        debug_assert_eq!(n, y.len());
        let mut z1 = x.dot(&self.w1.t());
        z1 += &self.b1;
        let a1 = z1.mapv(|v| v.max(0.0));
        let mut z2 = a1.dot(&self.w2.t());
        z2 += &self.b2;
        let a2 = z2.mapv(|v| v.max(0.0));
        let mut pred = a2.dot(&self.w3.t());
        pred += self.b3[0];

        let scale = 1.0 / n as f64;
        let mut loss = 0.0;
        // d(mean loss)/d(pred), one column.
        let mut g = Array2::<f64>::zeros((n, 1));
        for i in 0..n {
            let r = pred[(i, 0)] - y[i];
            loss += huber_loss(r, delta);
            g[(i, 0)] = r.clamp(-delta, delta) * scale;
        }
        loss *= scale;

        let gw3 = g.t().dot(&a2);
        let gb3 = ndarray::arr1(&[g.sum()]);
        let mut d2 = g.dot(&self.w3);
        d2.zip_mut_with(&z2, |d, &z| {
            if z <= 0.0 {
                *d = 0.0;
            }
        });
        let gw2 = d2.t().dot(&a1);
        let gb2 = d2.sum_axis(Axis(0));
        let mut d1 = d2.dot(&self.w2);
        d1.zip_mut_with(&z1, |d, &z| {
            if z <= 0.0 {
                *d = 0.0;
            }
        });
        let gw1 = d1.t().dot(x);
        let gb1 = d1.sum_axis(Axis(0));

        (
            loss,
            Gradients {
                w1: gw1,
                b1: gb1,
                w2: gw2,
                b2: gb2,
                w3: gw3,
                b3: gb3,
            },
        )
    }

    pub fn to_json(&self) -> serde_json::Value {
        let layer = |w: &Array2<f64>, b: &Array1<f64>| NetworkLayerJson {
            rows: w.nrows(),
            cols: w.ncols(),
            weights: w.iter().copied().collect(),
            bias: b.to_vec(),
        };
        serde_json::to_value(NetworkJson {
            input_width: self.input_width,
            layers: vec![
                layer(&self.w1, &self.b1),
                layer(&self.w2, &self.b2),
                layer(&self.w3, &self.b3),
            ],
        })
        .expect("network serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let parsed: NetworkJson = serde_json::from_value(value.clone())?;
        if parsed.layers.len() != 3 {
            return Err(Error::Training(format!(
                "expected 3 layers, found {}",
                parsed.layers.len()
            )));
        }
        let tensor = |l: &NetworkLayerJson| -> Result<(Array2<f64>, Array1<f64>)> {
            if l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(Error::Training("layer shape mismatch".into()));
            }
            Ok((
                Array2::from_shape_vec((l.rows, l.cols), l.weights.clone())
                    .map_err(|e| Error::Training(e.to_string()))?,
                Array1::from_vec(l.bias.clone()),
            ))
        };
        let (w1, b1) = tensor(&parsed.layers[0])?;
        let (w2, b2) = tensor(&parsed.layers[1])?;
        let (w3, b3) = tensor(&parsed.layers[2])?;
        if w1.ncols() != parsed.input_width
            || w2.ncols() != w1.nrows()
            || w3.ncols() != w2.nrows()
            || w3.nrows() != 1
        {
            return Err(Error::Training("layer widths do not chain".into()));
        }
        Ok(Self {
            input_width: parsed.input_width,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
        })
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, &self.to_json())?;
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let value: serde_json::Value = serde_json::from_reader(file)?;
        Self::from_json(&value)
    }
}

#[derive(Serialize, Deserialize)]
struct NetworkJson {
    input_width: usize,
    layers: Vec<NetworkLayerJson>,
}

#[derive(Serialize, Deserialize)]
struct NetworkLayerJson {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Parameter gradients, same shapes as the network.
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

/// Huber loss of a residual: quadratic inside `delta`, linear outside.
pub fn huber_loss(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a <= delta {
        0.5 * residual * residual
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Knobs for one fitting run.
#[derive(Debug, Clone, Copy)]
pub struct TrainParams {
    pub epochs: usize,
    pub min_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub huber_delta: f64,
    /// Relative epoch-loss improvement below which an epoch counts as
    /// stalled; `patience` stalled epochs end training early.
    pub early_stop_tolerance: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub epochs_run: usize,
    pub final_loss: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        const BETA1: f64 = 0.9;
        const BETA2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t as i32);
        let c2 = 1.0 - BETA2.powi(self.t as i32);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= lr * mhat / (vhat.sqrt() + EPS);
        }
    }
}

/// Fit the network to (inputs, targets) by mini-batch gradient descent on
/// the mean Huber loss, with per-parameter moment estimates. Deterministic
/// for a fixed seed: fixed shuffle order, fixed batch boundaries. Stops
/// early when the epoch loss stops improving. Errors if the loss turns
/// non-finite.
pub fn train_network(
    net: &mut QNetwork,
    x: &ArrayView2<f64>,
    y: &[f64],
    params: &TrainParams,
) -> Result<TrainStats> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Training("empty training set".into()));
    }
    if n != y.len() {
        return Err(Error::Training(format!(
            "{n} inputs but {} targets",
            y.len()
        )));
    }
    if y.iter().any(|t| !t.is_finite()) {
        return Err(Error::Training("non-finite target".into()));
    }
    let batch_size = params.batch_size.clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut batch_x = Array2::<f64>::zeros((batch_size, net.input_width));
    let mut batch_y = vec![0.0; batch_size];

    let mut adam = [
        Adam::new(net.w1.len()),
        Adam::new(net.b1.len()),
        Adam::new(net.w2.len()),
        Adam::new(net.b2.len()),
        Adam::new(net.w3.len()),
        Adam::new(net.b3.len()),
    ];

    let mut best_loss = f64::INFINITY;
    let mut stalled = 0;
    let mut epochs_run = 0;
    let mut epoch_loss = f64::INFINITY;
    for epoch in 0..params.epochs {
        // Fisher-Yates with our own rng so the order is seed-stable.
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            let m = chunk.len();
            for (row, &idx) in chunk.iter().enumerate() {
                batch_x.row_mut(row).assign(&x.row(idx));
                batch_y[row] = y[idx];
            }
            let bx = batch_x.slice(ndarray::s![..m, ..]);
            let (loss, grads) = net.loss_and_gradients(&bx, &batch_y[..m], params.huber_delta);
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "loss became non-finite in epoch {epoch}"
                )));
            }
            loss_sum += loss;
            batches += 1;
            let lr = params.learning_rate;
            adam[0].step(
                net.w1.as_slice_mut().unwrap(),
                grads.w1.as_slice().unwrap(),
                lr,
            );
            adam[1].step(
                net.b1.as_slice_mut().unwrap(),
                grads.b1.as_slice().unwrap(),
                lr,
            );
            adam[2].step(
                net.w2.as_slice_mut().unwrap(),
                grads.w2.as_slice().unwrap(),
                lr,
            );
            adam[3].step(
                net.b2.as_slice_mut().unwrap(),
                grads.b2.as_slice().unwrap(),
                lr,
            );
            adam[4].step(
                net.w3.as_slice_mut().unwrap(),
                grads.w3.as_slice().unwrap(),
                lr,
            );
            adam[5].step(
                net.b3.as_slice_mut().unwrap(),
                grads.b3.as_slice().unwrap(),
                lr,
            );
        }
        epoch_loss = loss_sum / batches as f64;
        epochs_run = epoch + 1;
        if epoch_loss < best_loss * (1.0 - params.early_stop_tolerance) {
            best_loss = epoch_loss;
            stalled = 0;
        } else {
            best_loss = best_loss.min(epoch_loss);
            stalled += 1;
            if epochs_run >= params.min_epochs && stalled >= params.early_stop_patience {
                break;
            }
        }
    }
    Ok(TrainStats {
        epochs_run,
        final_loss: epoch_loss,
    })
}
