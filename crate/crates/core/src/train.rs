//! Training with Jacobian-free backpropagation, and regret-based evaluation.
//!
//! Each sample runs `predictor -> splitting layer -> l2 loss` forward and
//! `loss gradient -> JFB cost gradient -> predictor backward` in reverse.
//! Samples of a minibatch are processed in parallel and their gradients are
//! summed in sample order, so results do not depend on the worker count.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dys::{solve, DysConfig};
use crate::error::{check_len, Error, Result};
use crate::jfb::{grad_wrt_cost, loss_grad_x_l2};
use crate::predictor::{backward, forward, init_params, MlpConfig, MlpGradients, MlpParams};
use crate::problems::{Dataset, Problem, Record};

/// Squared Euclidean distance.
pub fn l2_loss(x_pred: &DVector<f64>, x_star: &DVector<f64>) -> Result<f64> {
    check_len("l2_loss", x_star.len(), x_pred.len())?;
    Ok((x_pred - x_star).norm_squared())
}

/// Regret of a minimization problem, `w^T (x_pred - x_star)`.
pub fn regret(w_true: &DVector<f64>, x_pred: &DVector<f64>, x_star: &DVector<f64>) -> Result<f64> {
    check_len("regret prediction", w_true.len(), x_pred.len())?;
    check_len("regret label", w_true.len(), x_star.len())?;
    Ok(w_true.dot(x_pred) - w_true.dot(x_star))
}

/// Summed regret over summed optimal objective values.
pub fn normalized_regret(problem: &Problem, records: &[Record], decoded: &[DVector<f64>]) -> Result<f64> {
    check_len("normalized_regret predictions", records.len(), decoded.len())?;
    let mut total_regret = 0.0;
    let mut total_optimal = 0.0;
    for (r, x) in records.iter().zip(decoded) {
        total_regret += problem.regret(&r.w, x, &r.x)?;
        total_optimal += r.w.dot(&r.x);
    }
    if total_optimal == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(total_regret / total_optimal.abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning-rate multiplier applied when the validation loss plateaus.
    pub plateau_factor: f64,
    /// Epochs without validation-loss improvement before the rate is cut.
    pub plateau_patience: usize,
    pub weight_decay: f64,
    pub dys: DysConfig,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Optional wall-clock cap in seconds.
    pub time_budget: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            plateau_factor: 0.1,
            plateau_patience: 10,
            weight_decay: 5e-4,
            dys: DysConfig::default(),
            validation_fraction: 0.1,
            seed: 0,
            time_budget: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return bad(format!(
                "plateau_factor must lie in (0, 1], got {}",
                self.plateau_factor
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!(
                "validation_fraction must lie in [0, 1), got {}",
                self.validation_fraction
            ));
        }
        if let Some(t) = self.time_budget {
            if !(t > 0.0) {
                return bad(format!("time_budget must be positive, got {t}"));
            }
        }
        self.dys.validate()
    }
}

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl AdamW {
    pub fn new(params: &MlpParams, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .layers
            .iter()
            .flat_map(|l| [vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]])
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpGradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        for (((p, g), m), v) in params
            .slices_mut()
            .into_iter()
            .zip(grads.slices())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * p[i]);
            }
        }
    }
}

/// Cuts the learning rate by `factor` after `patience` epochs without a
/// relative improvement of at least `1e-4` in the monitored loss.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize) -> Self {
        Self {
            factor,
            patience,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Returns the learning rate to use for the next epoch.
    pub fn observe(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best * (1.0 - 1e-4) {
            self.best = loss;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.patience {
            self.bad_epochs = 0;
            lr * self.factor
        } else {
            lr
        }
    }
}

/// Per-sample forward pass through the predictor and the splitting layer.
pub struct Prediction {
    /// Predicted native cost vector.
    pub w_hat: DVector<f64>,
    /// Relaxed solution in canonical coordinates.
    pub x_canonical: DVector<f64>,
    /// Relaxed solution in native coordinates.
    pub x_native: DVector<f64>,
    pub z: DVector<f64>,
}

/// Eval-mode prediction for one context.
pub fn predict(params: &MlpParams, problem: &Problem, d: &DVector<f64>, dys: &DysConfig) -> Result<Prediction> {
    let mut no_rng = ChaCha8Rng::seed_from_u64(0);
    let (w_hat, _) = forward(params, d, false, &mut no_rng)?;
    let st = solve(problem.polytope(), &problem.canonical_cost(&w_hat)?, dys)?;
    let x_native = problem.native_solution(&st.x)?;
    Ok(Prediction {
        w_hat,
        x_canonical: st.x,
        x_native,
        z: st.z,
    })
}

/// Loss and JFB parameter gradient for one record.
pub fn sample_loss_and_grad<R: rand::Rng + ?Sized>(
    params: &MlpParams,
    problem: &Problem,
    record: &Record,
    dys: &DysConfig,
    train_mode: bool,
    rng: &mut R,
) -> Result<(f64, MlpGradients)> {
    let (w_hat, cache) = forward(params, &record.d, train_mode, rng)?;
    let st = solve(problem.polytope(), &problem.canonical_cost(&w_hat)?, dys)?;
    let x = problem.native_solution(&st.x)?;
    let loss = l2_loss(&x, &record.x)?;
    let dl_dx = problem.lift_solution_grad(&loss_grad_x_l2(&x, &record.x)?)?;
    let g_canonical = grad_wrt_cost(problem.polytope(), &st.z, &dl_dx, dys.alpha)?;
    let g_native = problem.cost_grad_to_native(&g_canonical.grad_w)?;
    let grads = backward(params, &cache, &g_native)?;
    Ok((loss, grads))
}

/// Mean loss and mean JFB gradient over `records`, without dropout.
pub fn full_batch_loss_and_grad(
    params: &MlpParams,
    problem: &Problem,
    records: &[Record],
    dys: &DysConfig,
) -> Result<(f64, MlpGradients)> {
    let results = records
        .par_iter()
        .map(|r| {
            let mut no_rng = ChaCha8Rng::seed_from_u64(0);
            sample_loss_and_grad(params, problem, r, dys, false, &mut no_rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = params.zero_gradients();
    let mut loss = 0.0;
    for (l, g) in &results {
        loss += l;
        total.add_assign(g);
    }
    let scale = 1.0 / records.len().max(1) as f64;
    total.scale(scale);
    Ok((loss * scale, total))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub mean_loss: f64,
    pub normalized_regret: f64,
    pub mean_regret: f64,
    /// Fraction of records whose decoded decision equals the label.
    pub exact_match: f64,
    /// Fraction of records decoded to an optimal decision (zero regret).
    pub optimal: f64,
}

/// Eval-mode loss and regret of `params` on `records`.
pub fn evaluate(params: &MlpParams, problem: &Problem, records: &[Record], dys: &DysConfig) -> Result<EvalMetrics> {
    if records.is_empty() {
        return Err(Error::ZeroDenominator);
    }
    check_len("evaluate output dimension", problem.cost_dim(), params.output_dim())?;
    let per_sample = records
        .par_iter()
        .map(|r| {
            let p = predict(params, problem, &r.d, dys)?;
            let loss = l2_loss(&p.x_native, &r.x)?;
            let decoded = problem.decode(&p.x_canonical)?;
            Ok((loss, decoded))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = records.len() as f64;
    let mean_loss = per_sample.iter().map(|(l, _)| l).sum::<f64>() / n;
    let decoded: Vec<DVector<f64>> = per_sample.into_iter().map(|(_, x)| x).collect();
    let mut total_regret = 0.0;
    let mut exact = 0usize;
    let mut optimal = 0usize;
    for (r, x) in records.iter().zip(&decoded) {
        let reg = problem.regret(&r.w, x, &r.x)?;
        total_regret += reg;
        exact += usize::from(x == &r.x);
        optimal += usize::from(reg <= 1e-9 * r.w.dot(&r.x).abs().max(1.0));
    }
    Ok(EvalMetrics {
        mean_loss,
        normalized_regret: normalized_regret(problem, records, &decoded)?,
        mean_regret: total_regret / n,
        exact_match: exact as f64 / n,
        optimal: optimal as f64 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_normalized_regret: f64,
    pub learning_rate: f64,
    /// Wall-clock seconds since training started.
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Validation metrics of the parameters training started from.
    pub initial: EvalMetrics,
    pub epochs: Vec<EpochMetrics>,
    /// Epoch (1-based) with the lowest validation normalized regret; 0 if
    /// no epoch beat the starting parameters.
    pub best_epoch: usize,
    pub best_params: MlpParams,
    pub final_params: MlpParams,
    /// True when training stopped early on the time budget.
    pub timed_out: bool,
}

impl TrainReport {
    pub fn best_val_normalized_regret(&self) -> f64 {
        match self.best_epoch {
            0 => self.initial.normalized_regret,
            e => self.epochs[e - 1].val_normalized_regret,
        }
    }

    /// Delimited per-epoch metrics with a header row.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_normalized_regret,learning_rate,seconds\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{:.3}\n",
                e.epoch, e.train_loss, e.val_loss, e.val_normalized_regret, e.learning_rate, e.seconds
            ));
        }
        out
    }

    pub fn write_metrics(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.metrics_csv().as_bytes())?;
        Ok(())
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * epoch as u64);
    rng
}

fn sample_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(2 * epoch as u64 + 1);
    rng
}

/// Initializes a predictor from `model` and trains it on `dataset`.
pub fn train(model: &MlpConfig, problem: &Problem, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    let params = init_params(model)?;
    train_from(params, problem, dataset, cfg, |_| {})
}

/// Trains `params` on `dataset`, holding out the last `validation_fraction`
/// of the records for the scheduler and model selection. When the split
/// leaves no validation records the training records are used instead.
pub fn train_from(
    mut params: MlpParams,
    problem: &Problem,
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainReport> {
    cfg.validate()?;
    check_len("predictor output dimension", problem.cost_dim(), params.output_dim())?;
    if dataset.is_empty() {
        return Err(Error::InvalidSize("training dataset is empty".into()));
    }
    let (train_set, val_set) = dataset.split(cfg.validation_fraction);
    if train_set.is_empty() {
        return Err(Error::InvalidSize("validation split leaves no training records".into()));
    }
    let val_records = if val_set.is_empty() {
        &train_set.records
    } else {
        &val_set.records
    };

    let start = Instant::now();
    let initial = evaluate(&params, problem, val_records, &cfg.dys)?;
    let mut best_regret = initial.normalized_regret;
    let mut best_epoch = 0;
    let mut best_params = params.clone();

    let mut optimizer = AdamW::new(&params, cfg.weight_decay);
    let mut scheduler = PlateauScheduler::new(cfg.plateau_factor, cfg.plateau_patience);
    let mut lr = cfg.learning_rate;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut timed_out = false;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut epoch_rng(cfg.seed, epoch));
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (batch_index, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = sample_rng(cfg.seed, epoch, i);
                    sample_loss_and_grad(&params, problem, &train_set.records[i], &cfg.dys, true, &mut rng)
                })
                .collect::<Vec<_>>();
            let mut grads = params.zero_gradients();
            for r in results {
                let (loss, g) = r.map_err(|e| Error::TrainingDiverged {
                    epoch,
                    batch: batch_index,
                    source: Box::new(e),
                })?;
                loss_sum += loss;
                grads.add_assign(&g);
            }
            seen += batch.len();
            grads.scale(1.0 / batch.len() as f64);
            optimizer.step(&mut params, &grads, lr);
            if !params.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    batch: batch_index,
                    source: Box::new(Error::NonFinite {
                        iteration: 0,
                        residual: f64::NAN,
                    }),
                });
            }
            if cfg.time_budget.is_some_and(|t| start.elapsed().as_secs_f64() > t) {
                timed_out = true;
                break;
            }
        }

        let val = evaluate(&params, problem, val_records, &cfg.dys).map_err(|e| match e {
            Error::ZeroDenominator => e,
            other => Error::TrainingDiverged {
                epoch,
                batch: usize::MAX,
                source: Box::new(other),
            },
        })?;
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            val_loss: val.mean_loss,
            val_normalized_regret: val.normalized_regret,
            learning_rate: lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&metrics);
        epochs.push(metrics);
        if val.normalized_regret < best_regret {
            best_regret = val.normalized_regret;
            best_epoch = epoch;
            best_params = params.clone();
        }
        lr = scheduler.observe(val.mean_loss, lr);
        if timed_out {
            break;
        }
    }

    Ok(TrainReport {
        initial,
        epochs,
        best_epoch,
        best_params,
        final_params: params,
        timed_out,
    })
}
