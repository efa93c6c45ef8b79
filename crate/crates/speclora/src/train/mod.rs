//! Desk-scale training harness: MSE regression of an adapter onto a
//! planted teacher, with AdamW, a linear warmup/decay schedule, and the
//! sweep protocols for the k / rank / direction ablations.
//!
//! Runs are deterministic per (adapter seed, train seed): data order,
//! initialization, and dropout are all derived from seeds. Independent
//! grid points of a sweep may run in parallel; a single run is
//! sequential over steps.

pub mod optim;
pub mod task;

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterConfig, Direction, ForwardMode, SpecLoraAdapter};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::stream;

pub use optim::{adamw_step, linear_schedule, AdamState};
pub use task::{gen_planted_task, PlantedTask, TaskSpec};

const SHUFFLE_STREAM_TAG: u64 = 0x7a5c_0004;

/// Optimizer and schedule hyper-parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Fraction of total steps spent ramping the learning rate, in `[0, 1)`.
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 16,
            warmup_ratio: 0.1,
            weight_decay: 0.0,
            betas: (0.9, 0.999),
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::config("warmup_ratio must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::config("weight_decay must be finite and >= 0"));
        }
        let (b1, b2) = self.betas;
        if !(0.0 < b1 && b1 < 1.0 && 0.0 < b2 && b2 < 1.0) {
            return Err(Error::config("betas must lie in (0, 1)"));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::config("eps must be positive"));
        }
        Ok(())
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub final_train_loss: f64,
    pub final_eval_loss: f64,
    /// Mean training loss per epoch; empty when `epochs == 0`.
    pub loss_curve: Vec<f64>,
    pub trainable_params: usize,
    pub wall_time_s: f64,
    /// Full snapshot of the configs that produced this run.
    pub config_echo: serde_json::Value,
}

/// Mean squared error of the adapter's eval-mode predictions.
pub fn eval_loss(adapter: &SpecLoraAdapter, x: &DenseMatrix, y: &DenseMatrix) -> Result<f64> {
    let pred = adapter.forward(x, ForwardMode::Eval)?;
    if pred.rows() != y.rows() || pred.cols() != y.cols() {
        return Err(Error::dimension(format!(
            "predictions are {}x{} but targets are {}x{}",
            pred.rows(),
            pred.cols(),
            y.rows(),
            y.cols()
        )));
    }
    let n_elems = (y.rows() * y.cols()) as f64;
    let sum_sq: f64 = pred
        .data()
        .iter()
        .zip(y.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum_sq / n_elems)
}

/// Train `(d, A, B)` against the dataset by mini-batch MSE regression
/// with AdamW and the linear schedule; `w_base` stays frozen.
///
/// Numeric divergence (NaN/Inf loss) aborts with [`Error::Numeric`]
/// carrying the offending step.
pub fn train_adapter(
    w_base: &DenseMatrix,
    x: &DenseMatrix,
    y: &DenseMatrix,
    acfg: &AdapterConfig,
    tcfg: &TrainConfig,
) -> Result<(SpecLoraAdapter, RunResult)> {
    tcfg.validate()?;
    if x.rows() != y.rows() {
        return Err(Error::dimension(format!(
            "{} inputs but {} targets",
            x.rows(),
            y.rows()
        )));
    }
    if x.cols() != w_base.cols() || y.cols() != w_base.rows() {
        return Err(Error::dimension(format!(
            "dataset of {}->{} does not fit a {}x{} weight",
            x.cols(),
            y.cols(),
            w_base.rows(),
            w_base.cols()
        )));
    }

    let started = Instant::now();
    let mut adapter = SpecLoraAdapter::init(w_base.clone(), acfg.clone())?;
    let num_samples = x.rows();
    let batches_per_epoch = num_samples.div_ceil(tcfg.batch_size);
    let total_steps = (tcfg.epochs * batches_per_epoch) as u64;

    let mut d_state = AdamState::new(adapter.d().len());
    let mut a_state = AdamState::new(adapter.a().data().len());
    let mut b_state = AdamState::new(adapter.b().data().len());

    let mut loss_curve = Vec::with_capacity(tcfg.epochs);
    let mut step: u64 = 0;
    for epoch in 0..tcfg.epochs {
        let mut order: Vec<usize> = (0..num_samples).collect();
        let mut shuffle_rng = stream(tcfg.seed, SHUFFLE_STREAM_TAG ^ epoch as u64);
        order.shuffle(&mut shuffle_rng);

        let mut epoch_sq_sum = 0.0;
        for chunk in order.chunks(tcfg.batch_size) {
            step += 1;
            let lr_t = linear_schedule(step, total_steps, tcfg.warmup_ratio, tcfg.learning_rate);

            let (xb, yb) = gather_batch(x, y, chunk);
            let mode = ForwardMode::Train { step };
            let pred = adapter.forward(&xb, mode)?;

            let elems = (chunk.len() * y.cols()) as f64;
            let mut g_y = DenseMatrix::zeros(chunk.len(), y.cols());
            let mut sq_sum = 0.0;
            for (i, (p, t)) in pred.data().iter().zip(yb.data()).enumerate() {
                let diff = p - t;
                sq_sum += diff * diff;
                g_y.data_mut()[i] = 2.0 * diff / elems;
            }
            let loss = sq_sum / elems;
            if !loss.is_finite() {
                return Err(Error::numeric(format!(
                    "loss diverged to {loss} at step {step}"
                )));
            }
            epoch_sq_sum += sq_sum;

            let grads = adapter.backward(&xb, &g_y, mode)?;
            adamw_step(adapter.d_mut(), &grads.grad_d, &mut d_state, step, lr_t, tcfg);
            adamw_step(
                adapter.a_mut().data_mut(),
                grads.grad_a.data(),
                &mut a_state,
                step,
                lr_t,
                tcfg,
            );
            adamw_step(
                adapter.b_mut().data_mut(),
                grads.grad_b.data(),
                &mut b_state,
                step,
                lr_t,
                tcfg,
            );
        }
        let epoch_loss = epoch_sq_sum / (num_samples * y.cols()) as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::numeric(format!(
                "loss diverged to {epoch_loss} in epoch {epoch}"
            )));
        }
        loss_curve.push(epoch_loss);
    }

    let final_eval_loss = eval_loss(&adapter, x, y)?;
    let final_train_loss = loss_curve.last().copied().unwrap_or(final_eval_loss);
    let result = RunResult {
        final_train_loss,
        final_eval_loss,
        loss_curve,
        trainable_params: adapter.trainable_params(),
        wall_time_s: started.elapsed().as_secs_f64(),
        config_echo: serde_json::json!({ "adapter": acfg, "train": tcfg }),
    };
    Ok((adapter, result))
}

fn gather_batch(x: &DenseMatrix, y: &DenseMatrix, rows: &[usize]) -> (DenseMatrix, DenseMatrix) {
    let mut xb = DenseMatrix::zeros(rows.len(), x.cols());
    let mut yb = DenseMatrix::zeros(rows.len(), y.cols());
    for (out_row, &src_row) in rows.iter().enumerate() {
        for c in 0..x.cols() {
            xb[(out_row, c)] = x[(src_row, c)];
        }
        for c in 0..y.cols() {
            yb[(out_row, c)] = y[(src_row, c)];
        }
    }
    (xb, yb)
}

/// Which hyper-parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    K,
    Rank,
    Direction,
}

impl SweepKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepKind::K => "k",
            SweepKind::Rank => "rank",
            SweepKind::Direction => "direction",
        }
    }
}

/// One point of a sweep grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridValue {
    Count(usize),
    Direction(Direction),
}

impl std::fmt::Display for GridValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GridValue::Count(v) => write!(f, "{v}"),
            GridValue::Direction(d) => write!(f, "{d}"),
        }
    }
}

/// One row of a sweep results table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub kind: String,
    pub grid_value: String,
    pub seed: u64,
    pub trainable_params: usize,
    pub final_train_loss: f64,
    pub final_eval_loss: f64,
    pub wall_time_s: f64,
}

impl SweepRow {
    pub const CSV_HEADER: [&'static str; 7] = [
        "kind",
        "grid_value",
        "seed",
        "trainable_params",
        "final_train_loss",
        "final_eval_loss",
        "wall_time_s",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.kind.clone(),
            self.grid_value.clone(),
            self.seed.to_string(),
            self.trainable_params.to_string(),
            self.final_train_loss.to_string(),
            self.final_eval_loss.to_string(),
            self.wall_time_s.to_string(),
        ]
    }
}

/// Run one seeded training per grid point per seed, regenerating the
/// planted task for each seed. Rows come back ordered by
/// (grid position, seed position) regardless of `jobs`.
pub fn run_ablation(
    kind: SweepKind,
    grid: &[GridValue],
    task_template: &TaskSpec,
    acfg_base: &AdapterConfig,
    tcfg_base: &TrainConfig,
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::config("sweep grid must be non-empty"));
    }
    if seeds.is_empty() {
        return Err(Error::config("sweep needs at least one seed"));
    }
    for value in grid {
        match (kind, value) {
            (SweepKind::K, GridValue::Count(_)) => {}
            (SweepKind::Rank, GridValue::Count(r)) if *r >= 1 => {}
            (SweepKind::Direction, GridValue::Direction(_)) => {}
            _ => {
                return Err(Error::config(format!(
                    "grid value {value} does not fit sweep kind {}",
                    kind.as_str()
                )))
            }
        }
    }

    let items: Vec<(usize, GridValue, u64)> = grid
        .iter()
        .flat_map(|&g| seeds.iter().map(move |&s| (g, s)))
        .enumerate()
        .map(|(i, (g, s))| (i, g, s))
        .collect();

    let run_one = |value: GridValue, seed: u64| -> Result<SweepRow> {
        let mut task_spec = task_template.clone();
        task_spec.seed = seed;
        let mut acfg = acfg_base.clone();
        acfg.seed = seed.wrapping_add(1);
        let mut tcfg = tcfg_base.clone();
        tcfg.seed = seed.wrapping_add(2);
        match value {
            GridValue::Count(v) => match kind {
                SweepKind::K => acfg.k = v,
                SweepKind::Rank => acfg.rank = v,
                SweepKind::Direction => unreachable!("validated above"),
            },
            GridValue::Direction(d) => acfg.direction = d,
        }
        let task = gen_planted_task(&task_spec)?;
        let (_, result) = train_adapter(&task.w_base, &task.x, &task.y, &acfg, &tcfg)?;
        Ok(SweepRow {
            kind: kind.as_str().to_string(),
            grid_value: value.to_string(),
            seed,
            trainable_params: result.trainable_params,
            final_train_loss: result.final_train_loss,
            final_eval_loss: result.final_eval_loss,
            wall_time_s: result.wall_time_s,
        })
    };

    let mut rows: Vec<Option<SweepRow>> = vec![None; items.len()];
    if jobs <= 1 {
        for (i, value, seed) in items {
            rows[i] = Some(run_one(value, seed)?);
        }
    } else {
        use std::sync::Mutex;
        let next = Mutex::new(0usize);
        let out = Mutex::new(&mut rows);
        let first_err: Mutex<Option<Error>> = Mutex::new(None);
        std::thread::scope(|scope| {
            for _ in 0..jobs.min(items.len()) {
                scope.spawn(|| loop {
                    let i = {
                        let mut guard = next.lock().unwrap();
                        let i = *guard;
                        *guard += 1;
                        i
                    };
                    if i >= items.len() || first_err.lock().unwrap().is_some() {
                        break;
                    }
                    let (_, value, seed) = items[i];
                    match run_one(value, seed) {
                        Ok(row) => out.lock().unwrap()[i] = Some(row),
                        Err(e) => {
                            let mut slot = first_err.lock().unwrap();
                            if slot.is_none() {
                                *slot = Some(e);
                            }
                            break;
                        }
                    }
                });
            }
        });
        if let Some(e) = first_err.into_inner().unwrap() {
            return Err(e);
        }
    }
    Ok(rows.into_iter().map(|r| r.expect("all items ran")).collect())
}
