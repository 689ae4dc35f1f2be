//! Desk-scale model production: synthetic 2-D data, mini-batch gradient
//! descent with softmax cross-entropy, and PGD adversarial training.
//!
//! Everything is single-threaded and seeded so that two runs with the same
//! configuration produce identical weights.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Activation, DataPoint, Dataset, Layer, Network};

/// PGD attack settings used during adversarial training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgdConfig {
    /// Attack radius.
    pub tau: f64,
    pub iters: usize,
    /// Step size; `None` picks `2.5 * tau / iters`.
    pub step: Option<f64>,
}

impl PgdConfig {
    pub fn step_size(&self) -> f64 {
        self.step.unwrap_or(2.5 * self.tau / self.iters.max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub adversarial: Option<PgdConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 200, learning_rate: 0.05, batch_size: 128, seed: 0, adversarial: None }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || self.batch_size == 0 {
            return Err(Error::InvalidArg("learning rate and batch size must be positive".into()));
        }
        if let Some(adv) = &self.adversarial {
            if !(adv.tau >= 0.0) || !adv.tau.is_finite() {
                return Err(Error::InvalidArg("adversarial tau must be finite and nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// Seeded uniform init in +-sqrt(6 / (fan_in + fan_out)).
pub fn init_network(sizes: &[usize], activation: Activation, seed: u64) -> Result<Network> {
    if sizes.len() < 2 {
        return Err(Error::InvalidArg("need at least input and output sizes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    for w in sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Matrix::new(
            fan_out,
            fan_in,
            (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect(),
        )?;
        layers.push(Layer { weight, bias: vec![0.0; fan_out] });
    }
    Network::new(layers, activation)
}

/// Nearest-seed labeled points in [-1, 1]^2, split into train and test.
///
/// Draws one seed point per class, then labels uniform samples by the closest
/// seed (ties to the lowest class index). The first `floor(train_frac * n)`
/// points form the training set.
pub fn gen_synthetic_2d(
    seed: u64,
    n_classes: usize,
    n_points: usize,
    train_frac: f64,
) -> Result<(Dataset, Dataset)> {
    if n_classes < 2 {
        return Err(Error::InvalidArg("need at least two classes".into()));
    }
    if !(0.0..=1.0).contains(&train_frac) {
        return Err(Error::InvalidArg("train_frac must be in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let class_seeds: Vec<[f64; 2]> = (0..n_classes)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect();
    let mut points = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (k, s) in class_seeds.iter().enumerate() {
            let d = (p[0] - s[0]).powi(2) + (p[1] - s[1]).powi(2);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        points.push(DataPoint { features: p.to_vec(), label: best });
    }
    let cut = (train_frac * n_points as f64).floor() as usize;
    let test = points.split_off(cut);
    Ok((Dataset::new(points)?, Dataset::new(test)?))
}

struct ForwardTape {
    /// Pre-activation per level.
    pre: Vec<Vec<f64>>,
    /// Post-activation inputs per layer, starting with the raw input.
    post: Vec<Vec<f64>>,
}

fn forward_tape(net: &Network, x: &[f64]) -> ForwardTape {
    let mut post = vec![x.to_vec()];
    let mut pre = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        let mut z = layer.weight.matvec(post.last().unwrap());
        crate::linalg::vadd_assign(&mut z, &layer.bias);
        if i + 1 < net.layers().len() {
            post.push(net.activation().apply_vec(&z));
        }
        pre.push(z);
    }
    ForwardTape { pre, post }
}

fn log_softmax(z: &[f64]) -> (Vec<f64>, f64) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    (z.iter().map(|v| (v - lse).exp()).collect(), lse)
}

/// Mean cross-entropy of the dataset under the network.
pub fn dataset_loss(net: &Network, ds: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for p in &ds.points {
        let z = net.forward(&p.features)?;
        let (_, lse) = log_softmax(&z);
        total += lse - z[p.label];
    }
    Ok(total / ds.len().max(1) as f64)
}

/// Fraction of points whose argmax logit matches the label.
pub fn accuracy(net: &Network, ds: &Dataset) -> Result<f64> {
    let mut hits = 0usize;
    for p in &ds.points {
        let z = net.forward(&p.features)?;
        let mut arg = 0usize;
        for k in 1..z.len() {
            if z[k] > z[arg] {
                arg = k;
            }
        }
        if arg == p.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / ds.len().max(1) as f64)
}

/// Cross-entropy gradients of one example: per-layer weight/bias grads plus
/// the gradient w.r.t. the input.
fn backprop(net: &Network, x: &[f64], label: usize) -> (Vec<Matrix>, Vec<Vec<f64>>, Vec<f64>, f64) {
    let tape = forward_tape(net, x);
    let logits = tape.pre.last().unwrap();
    let (p, lse) = log_softmax(logits);
    let loss = lse - logits[label];

    let layers = net.layers();
    let mut dw: Vec<Matrix> = layers
        .iter()
        .map(|l| Matrix::zeros(l.weight.rows(), l.weight.cols()))
        .collect();
    let mut db: Vec<Vec<f64>> = layers.iter().map(|l| vec![0.0; l.bias.len()]).collect();

    let mut dz: Vec<f64> = p;
    dz[label] -= 1.0;
    for t in (0..layers.len()).rev() {
        let a = &tape.post[t];
        for r in 0..dz.len() {
            let row = dw[t].row_mut(r);
            for c in 0..a.len() {
                row[c] += dz[r] * a[c];
            }
            db[t][r] += dz[r];
        }
        let da = layers[t].weight.transpose().matvec(&dz);
        if t == 0 {
            return (dw, db, da, loss);
        }
        let z = &tape.pre[t - 1];
        dz = da
            .iter()
            .zip(z)
            .map(|(g, &zz)| g * net.activation().derivative(zz))
            .collect();
    }
    unreachable!("networks always have one layer")
}

/// One projected-gradient ascent run on the cross-entropy loss.
///
/// Every iterate, not just the result, stays inside `x +- tau`.
pub fn pgd_attack(
    net: &Network,
    x: &[f64],
    label: usize,
    tau: f64,
    iters: usize,
    step: f64,
) -> Result<Vec<f64>> {
    if tau < 0.0 {
        return Err(Error::InvalidArg("tau must be nonnegative".into()));
    }
    if label >= net.output_size() {
        return Err(Error::InvalidArg(format!("label {label} out of range")));
    }
    let mut adv = x.to_vec();
    for _ in 0..iters {
        let (_, _, dx, _) = backprop(net, &adv, label);
        for j in 0..adv.len() {
            let s = if dx[j] > 0.0 {
                1.0
            } else if dx[j] < 0.0 {
                -1.0
            } else {
                0.0
            };
            adv[j] = (adv[j] + step * s).clamp(x[j] - tau, x[j] + tau);
        }
    }
    Ok(adv)
}

fn train_impl(
    net: &Network,
    ds: &Dataset,
    cfg: &TrainConfig,
    attack: Option<&PgdConfig>,
) -> Result<Network> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::InvalidArg("empty dataset".into()));
    }
    if ds.feature_len() != net.input_size() {
        return Err(Error::DimMismatch(format!(
            "feature length {} != network input {}",
            ds.feature_len(),
            net.input_size()
        )));
    }
    if let Some(p) = ds.points.iter().find(|p| p.label >= net.output_size()) {
        return Err(Error::InvalidArg(format!(
            "label {} out of range for {} outputs",
            p.label,
            net.output_size()
        )));
    }
    let mut net = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc_w: Vec<Matrix> = net
                .layers()
                .iter()
                .map(|l| Matrix::zeros(l.weight.rows(), l.weight.cols()))
                .collect();
            let mut acc_b: Vec<Vec<f64>> =
                net.layers().iter().map(|l| vec![0.0; l.bias.len()]).collect();
            for &i in batch {
                let p = &ds.points[i];
                let input = match attack {
                    Some(a) => pgd_attack(&net, &p.features, p.label, a.tau, a.iters, a.step_size())?,
                    None => p.features.clone(),
                };
                let (dw, db, _, _) = backprop(&net, &input, p.label);
                for (a, d) in acc_w.iter_mut().zip(&dw) {
                    a.add_assign(d);
                }
                for (a, d) in acc_b.iter_mut().zip(&db) {
                    crate::linalg::vadd_assign(a, d);
                }
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            for (layer, (dw, db)) in net.layers_mut().iter_mut().zip(acc_w.iter().zip(&acc_b)) {
                let update = dw.scale(-scale);
                layer.weight.add_assign(&update);
                for (b, d) in layer.bias.iter_mut().zip(db) {
                    *b -= scale * d;
                }
            }
        }
    }
    Ok(net)
}

/// Mini-batch gradient descent on softmax cross-entropy. The `adversarial`
/// field of the config is ignored here; use [`adversarial_train`] for it.
pub fn train(net: &Network, ds: &Dataset, cfg: &TrainConfig) -> Result<Network> {
    train_impl(net, ds, cfg, None)
}

/// Like [`train`], but every example is replaced by its PGD attack before the
/// gradient step.
pub fn adversarial_train(net: &Network, ds: &Dataset, cfg: &TrainConfig) -> Result<Network> {
    let adv = cfg
        .adversarial
        .as_ref()
        .ok_or_else(|| Error::InvalidArg("adversarial config missing".into()))?;
    train_impl(net, ds, cfg, Some(adv))
}
