//! Loss, optimizer, batch sampling and the training loops (individual,
//! joint, zero-shot and linear probing).

use std::collections::HashMap;
use std::path::PathBuf;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_state, save_checkpoint, state_dict, NamedTensors};
use crate::config::{ModelConfig, LONG_TERM_HORIZONS};
use crate::error::{Error, Result};
use crate::eval::{append_jsonl, evaluate, pooled, ForecastMetrics, MetricsRecord};
use crate::model::{MetaTst, Mode};
use crate::nn::Module;
use crate::prepared::{PreparedDataset, Split};

/// Mean squared error and its gradient with respect to `pred`.
pub fn l2_loss(pred: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "loss: predictions {:?} vs targets {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Empty("loss input"));
    }
    let n = pred.len() as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}

#[derive(Debug, Clone, Default)]
pub struct Moments {
    pub m: Array2<f64>,
    pub v: Array2<f64>,
}

/// Adam without weight decay. Frozen parameters are skipped entirely.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub moments: HashMap<String, Moments>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: HashMap::new(),
        }
    }

    pub fn step(&mut self, model: &mut impl Module) {
        self.t += 1;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let moments = &mut self.moments;
        model.visit_mut("", &mut |name, p| {
            if !p.trainable {
                return;
            }
            let st = moments.entry(name.to_string()).or_insert_with(|| Moments {
                m: Array2::zeros(p.value.dim()),
                v: Array2::zeros(p.value.dim()),
            });
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(&mut st.m)
                .and(&mut st.v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        });
    }
}

/// One batch drawn by the sampler: indices into one dataset's train split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchRef {
    pub dataset: usize,
    pub indices: Vec<usize>,
}

/// RNG of a given epoch; independent streams per epoch.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Shuffle `0..n` and cut it into batches; the last one may be short.
pub fn shuffled_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Batches for one epoch over several datasets.
///
/// Every batch comes from a single dataset. Each dataset's samples are
/// shuffled and chunked; then at each step a dataset is picked with
/// probability proportional to its remaining samples, so every sample is
/// seen exactly once per epoch. With one dataset this reduces to
/// [`shuffled_batches`] on the same RNG.
pub fn mixed_batch_sampler(sizes: &[usize], batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<BatchRef>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rng = epoch_rng(seed, epoch);
    let mut queues: Vec<std::collections::VecDeque<Vec<usize>>> = sizes
        .iter()
        .map(|&n| shuffled_batches(n, batch_size, &mut rng).into())
        .collect();
    let mut remaining: Vec<usize> = sizes.to_vec();
    let mut out = Vec::with_capacity(queues.iter().map(|q| q.len()).sum());
    loop {
        let total: usize = remaining.iter().sum();
        if total == 0 {
            break;
        }
        let mut r = rng.random_range(0..total);
        let mut pick = 0;
        for (i, &left) in remaining.iter().enumerate() {
            if r < left {
                pick = i;
                break;
            }
            r -= left;
        }
        let indices = queues[pick].pop_front().expect("remaining count tracks queue");
        remaining[pick] -= indices.len();
        out.push(BatchRef { dataset: pick, indices });
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub seed: u64,
    pub run_id: String,
    /// Where `checkpoint.safetensors` and `metrics.jsonl` go.
    pub out_dir: Option<PathBuf>,
    pub model_id: String,
    /// Overrides `config.train_epochs`.
    pub epochs: Option<usize>,
    /// Split used for model selection.
    pub select_on: Option<Split>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";
pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub epoch: usize,
    pub best_val_mse: Option<f64>,
    pub best_epoch: Option<usize>,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    #[serde(skip)]
    pub optimizer: Option<Adam>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub records: Vec<MetricsRecord>,
}

fn check_joint(config: &ModelConfig, datasets: &[&PreparedDataset]) -> Result<()> {
    if datasets.is_empty() {
        return Err(Error::Empty("dataset list"));
    }
    for ds in datasets {
        ds.check_compatible(config)?;
        if ds.train.is_empty() {
            return Err(Error::Empty("training split"));
        }
    }
    Ok(())
}

/// Train `model` on the union of the datasets' train splits, keeping the
/// parameters with the lowest pooled validation MSE. On return the model
/// holds the best parameters (unchanged when no epoch ran).
pub fn fit(model: &mut MetaTst, datasets: &[&PreparedDataset], opts: &TrainOptions) -> Result<TrainOutcome> {
    let config = model.config().clone();
    check_joint(&config, datasets)?;
    let epochs = opts.epochs.unwrap_or(config.train_epochs);
    let select = opts.select_on.unwrap_or(Split::Val);
    let head_only = model.only_head_trainable();
    let sizes: Vec<usize> = datasets.iter().map(|d| d.train.len()).collect();
    let mut adam = Adam::new(config.learning_rate);
    let mut state = TrainState {
        step: 0,
        epoch: 0,
        best_val_mse: None,
        best_epoch: None,
        seed: opts.seed,
        checkpoint: None,
        optimizer: None,
    };
    let mut records = Vec::new();
    let mut best: Option<NamedTensors> = None;
    let metrics_path = opts.out_dir.as_ref().map(|d| d.join(METRICS_FILE));

    for epoch in 1..=epochs {
        let batches = mixed_batch_sampler(&sizes, config.batch_size, opts.seed, epoch)?;
        let mut drop_rng = epoch_rng(opts.seed ^ 0x5eed_d20f, epoch);
        let mut sq = vec![(0.0, 0.0, 0usize); datasets.len()];
        for (bi, b) in batches.iter().enumerate() {
            let ds = datasets[b.dataset];
            let batch = ds.train.batch(&b.indices)?;
            let (pred, cache) = model.forward(&batch, Mode::Train(&mut drop_rng))?;
            let (loss, dpred) = l2_loss(&pred, &batch.y)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: bi,
                    value: loss,
                });
            }
            let acc = &mut sq[b.dataset];
            acc.0 += loss * pred.len() as f64;
            acc.1 += (&pred - &batch.y).iter().map(|d| d.abs()).sum::<f64>();
            acc.2 += pred.len();
            model.zero_grad();
            if head_only {
                model.backward_head(&cache, &dpred);
            } else {
                model.backward(&cache, &dpred);
            }
            adam.step(model);
            state.step += 1;
        }
        state.epoch = epoch;

        let mut epoch_records = Vec::new();
        for (ds, (se, ae, n)) in datasets.iter().zip(&sq) {
            epoch_records.push(MetricsRecord {
                run_id: opts.run_id.clone(),
                dataset: ds.id.clone(),
                epoch,
                split: "train".into(),
                mse: se / *n as f64,
                mae: ae / *n as f64,
            });
        }
        let mut val = Vec::new();
        for ds in datasets {
            if ds.split(select).is_empty() {
                continue;
            }
            let m = evaluate(model, ds, select, config.batch_size)?;
            epoch_records.push(record(&opts.run_id, epoch, &m));
            val.push(m);
        }
        let score = if val.is_empty() {
            // No validation windows: fall back to training loss.
            let (se, n) = sq.iter().fold((0.0, 0), |a, x| (a.0 + x.0, a.1 + x.2));
            se / n as f64
        } else {
            pooled(&val)?.0
        };
        log::info!("epoch {epoch}: {} score {score:.6}", select.as_str());
        if let Some(p) = &metrics_path {
            append_jsonl(p, &epoch_records)?;
        }
        records.extend(epoch_records);

        if state.best_val_mse.is_none_or(|b| score < b) {
            state.best_val_mse = Some(score);
            state.best_epoch = Some(epoch);
            best = Some(state_dict(model));
            if let Some(dir) = &opts.out_dir {
                let path = dir.join(CHECKPOINT_FILE);
                save_checkpoint(model, &opts.model_id, &path)?;
                state.checkpoint = Some(path);
            }
        }
    }
    if let Some(b) = best {
        load_state(model, &b)?;
    }
    state.optimizer = Some(adam);
    Ok(TrainOutcome { state, records })
}

fn record(run_id: &str, epoch: usize, m: &ForecastMetrics) -> MetricsRecord {
    MetricsRecord {
        run_id: run_id.to_string(),
        dataset: m.dataset_id.clone(),
        epoch,
        split: m.split.clone(),
        mse: m.mse,
        mae: m.mae,
    }
}

/// A fresh model trained on several datasets at once.
pub fn train_joint(
    config: &ModelConfig,
    datasets: &[&PreparedDataset],
    opts: &TrainOptions,
) -> Result<(MetaTst, TrainOutcome)> {
    check_joint(config, datasets)?;
    let mut model = MetaTst::new(config, opts.seed)?;
    let out = fit(&mut model, datasets, opts)?;
    Ok((model, out))
}

/// Joint training over a single dataset.
pub fn train_individual(
    config: &ModelConfig,
    dataset: &PreparedDataset,
    opts: &TrainOptions,
) -> Result<(MetaTst, TrainOutcome)> {
    train_joint(config, &[dataset], opts)
}

/// Test metrics of an unmodified model on an unseen dataset.
pub fn zero_shot_eval(model: &MetaTst, dataset: &PreparedDataset) -> Result<ForecastMetrics> {
    dataset.check_compatible(model.config())?;
    evaluate(model, dataset, Split::Test, model.config().batch_size)
}

/// Freeze everything except the forecasting head.
pub fn freeze_backbone(model: &mut MetaTst) {
    let head = format!("{}.", MetaTst::HEAD);
    model.visit_mut("", &mut |name, p| p.trainable = name.starts_with(&head));
}

/// Fine-tune only the head of a copy of `model`, starting from its current
/// head weights, then report test metrics.
pub fn linear_probe(
    model: &MetaTst,
    dataset: &PreparedDataset,
    opts: &TrainOptions,
) -> Result<(MetaTst, TrainOutcome, ForecastMetrics)> {
    let mut probe = model.clone();
    freeze_backbone(&mut probe);
    let out = fit(&mut probe, &[dataset], opts)?;
    let m = zero_shot_eval(&probe, dataset)?;
    Ok((probe, out, m))
}

/// Configurations of the long-term run matrix (one per horizon).
pub fn long_term_run_matrix(base: &ModelConfig) -> Vec<ModelConfig> {
    LONG_TERM_HORIZONS
        .iter()
        .map(|&h| ModelConfig {
            pred_len: h,
            ..base.clone()
        })
        .collect()
}
