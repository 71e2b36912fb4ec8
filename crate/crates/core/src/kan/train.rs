use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::KanNetwork;
use crate::error::{invalid, Error, Result};
use crate::oracle::armijo_ascent;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    /// Full-batch gradient descent; each epoch backtracks (halving, Armijo
    /// constant 1e-4) from `learning_rate`.
    LineSearch,
    /// Adam with a fixed step on shuffled mini-batches.
    Adam { batch_size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 500, learning_rate: 0.01, seed: 0, optimizer: Optimizer::Adam { batch_size: 16 } }
    }
}

/// Raw (un-normalised) supervised pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainData {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    /// Training MSE (normalised targets) after each epoch.
    pub loss_history: Vec<f64>,
    /// Running minimum of `loss_history`; the returned network is the best one.
    pub best_history: Vec<f64>,
    pub best_loss: f64,
}

/// Losses above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Trains `net` in place on `data`, minimising mean squared error on
/// normalised targets.
///
/// The network keeps the parameters with the lowest training loss seen, and
/// its edge statistics are refreshed on the training inputs.
pub fn train(net: &mut KanNetwork, data: &TrainData, cfg: &TrainConfig) -> Result<TrainReport> {
    if data.xs.is_empty() || data.xs.len() != data.ys.len() {
        return Err(invalid("training data must be non-empty with one target per input"));
    }
    if data.xs.iter().any(|x| x.len() != net.in_dim()) || data.ys.iter().any(|y| y.len() != net.out_dim()) {
        return Err(invalid("training data width does not match the network"));
    }
    let (lo, hi) = (net.output_norm.lo, net.output_norm.hi);
    let tol = 1e-9 * (hi - lo).abs();
    if data.ys.iter().flatten().any(|&y| !(y >= lo - tol && y <= hi + tol)) {
        return Err(invalid(format!("targets must lie in [{lo}, {hi}]")));
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(invalid("learning rate must be positive"));
    }

    let zs: Vec<Vec<f64>> = data.xs.iter().map(|x| net.normalize_input(x)).collect();
    let ts: Vec<Vec<f64>> = data
        .ys
        .iter()
        .map(|y| y.iter().map(|&v| net.output_norm.normalize(v)).collect())
        .collect();
    let all: Vec<usize> = (0..zs.len()).collect();

    let initial_loss = net.loss(&zs, &ts);
    check_divergence(0, initial_loss)?;
    let mut params = net.params();
    let mut best = (initial_loss, params.clone());
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    let mut best_history = Vec::with_capacity(cfg.epochs);

    let mut rng = seed::rng(cfg.seed, seed::KAN_SHUFFLE, 0);
    let mut adam = Adam::new(params.len());
    let mut order = all.clone();

    for epoch in 1..=cfg.epochs {
        match &cfg.optimizer {
            Optimizer::LineSearch => {
                let (loss, grad) = net.loss_and_grad(&zs, &ts, &all);
                let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                let mut probe = net.clone();
                let step = armijo_ascent(
                    &params,
                    -loss,
                    &neg,
                    &neg,
                    cfg.learning_rate,
                    1e-4,
                    |_| {},
                    |p| {
                        probe.set_params(p);
                        Ok(-probe.loss(&zs, &ts))
                    },
                )?;
                if let Some(step) = step {
                    params = step.point;
                    net.set_params(&params);
                }
            }
            Optimizer::Adam { batch_size } => {
                let bs = (*batch_size).max(1);
                order.shuffle(&mut rng);
                for batch in order.chunks(bs) {
                    let (_, grad) = net.loss_and_grad(&zs, &ts, batch);
                    adam.step(&mut params, &grad, cfg.learning_rate);
                    net.set_params(&params);
                }
            }
        }
        let loss = net.loss(&zs, &ts);
        check_divergence(epoch, loss)?;
        if loss < best.0 {
            best = (loss, params.clone());
        }
        loss_history.push(loss);
        best_history.push(best.0);
    }
    net.set_params(&best.1);
    net.record_stats(&data.xs);
    Ok(TrainReport { initial_loss, loss_history, best_history, best_loss: best.0 })
}

fn check_divergence(epoch: usize, loss: f64) -> Result<()> {
    if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
        return Err(Error::Diverged { epoch, loss });
    }
    Ok(())
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kan::{silu, Architecture, FeatureKind, InputNorm, KanConfig, OutputNorm};

    fn grid_inputs(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![-1.0 + 2.0 * i as f64 / (n - 1) as f64]).collect()
    }

    #[test]
    fn fits_a_constant() {
        let cfg = KanConfig::default();
        let mut net = KanNetwork::new(&cfg.dims(2, 1), &cfg, &[FeatureKind::Raw; 2], OutputNorm { lo: 0.0, hi: 1.0 }, 3).unwrap();
        let xs: Vec<Vec<f64>> = (0..64).map(|i| vec![(i % 8) as f64 / 7.0, (i / 8) as f64 / 7.0]).collect();
        net.initialize_from_data(&xs, cfg.hidden_margin).unwrap();
        let data = TrainData { ys: vec![vec![0.3]; xs.len()], xs };
        let tc = TrainConfig { epochs: 200, learning_rate: 0.01, seed: 1, optimizer: Optimizer::Adam { batch_size: 16 } };
        let report = train(&mut net, &data, &tc).unwrap();
        assert!(report.best_loss <= 1e-4, "{}", report.best_loss);
        assert!(report.best_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn recovers_scaled_silu_on_single_edge() {
        let cfg = KanConfig { architecture: Architecture::Direct, ..Default::default() };
        let norm = OutputNorm { lo: -1.0, hi: 2.0 };
        let mut net = KanNetwork::new(&[1, 1], &cfg, &[FeatureKind::Raw], norm, 5).unwrap();
        net.input_norm = InputNorm::identity(1);
        let xs = grid_inputs(101);
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![2.0 * silu(x[0])]).collect();
        let data = TrainData { xs, ys };
        let tc = TrainConfig { epochs: 300, learning_rate: 0.02, seed: 2, optimizer: Optimizer::Adam { batch_size: 16 } };
        let report = train(&mut net, &data, &tc).unwrap();
        assert!(report.best_loss <= 1e-5, "{}", report.best_loss);
    }

    #[test]
    fn line_search_decreases_loss() {
        let cfg = KanConfig { architecture: Architecture::Direct, ..Default::default() };
        let mut net = KanNetwork::new(&[1, 1], &cfg, &[FeatureKind::Raw], OutputNorm { lo: -1.0, hi: 2.0 }, 5).unwrap();
        net.input_norm = InputNorm::identity(1);
        let xs = grid_inputs(41);
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[0] * x[0]]).collect();
        let data = TrainData { xs, ys };
        let tc = TrainConfig { epochs: 50, learning_rate: 1.0, seed: 0, optimizer: Optimizer::LineSearch };
        let report = train(&mut net, &data, &tc).unwrap();
        assert!(report.best_loss < report.initial_loss * 0.1);
        assert!(report.loss_history.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn rejects_bad_data_and_divergence() {
        let cfg = KanConfig { architecture: Architecture::Direct, ..Default::default() };
        let mut net = KanNetwork::new(&[1, 1], &cfg, &[FeatureKind::Raw], OutputNorm { lo: 0.0, hi: 1.0 }, 0).unwrap();
        let tc = TrainConfig::default();
        assert!(train(&mut net, &TrainData::default(), &tc).is_err());
        let out_of_range = TrainData { xs: vec![vec![0.0]], ys: vec![vec![2.0]] };
        assert!(train(&mut net, &out_of_range, &tc).is_err());

        let mut huge = net.clone();
        huge.layers[0].omega[0] = 1e5;
        huge.input_norm = InputNorm::identity(1);
        let data = TrainData { xs: vec![vec![0.9]], ys: vec![vec![0.5]] };
        let err = train(&mut huge, &data, &TrainConfig { epochs: 1, ..tc });
        assert!(matches!(err, Err(Error::Diverged { .. })));
    }

    #[test]
    fn zero_epochs_leave_parameters() {
        let cfg = KanConfig::default();
        let mut net = KanNetwork::new(&cfg.dims(1, 1), &cfg, &[FeatureKind::Raw], OutputNorm { lo: 0.0, hi: 1.0 }, 0).unwrap();
        let before = net.params();
        let data = TrainData { xs: grid_inputs(5), ys: vec![vec![0.5]; 5] };
        let report = train(&mut net, &data, &TrainConfig { epochs: 0, ..Default::default() }).unwrap();
        assert!(report.loss_history.is_empty());
        assert_eq!(net.params(), before);
        assert!(net.stats.is_some());
    }
}
