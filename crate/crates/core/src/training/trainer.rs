use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::ModelConfig;
use crate::error::{Error, Result};
use crate::model::Mpnn;
use crate::molgraph::{EncodedGraph, MolecularGraph};
use crate::params::ModelParams;

use super::data::{TargetSelection, TargetStats};
use super::metrics::{loss_and_metrics, Metrics};
use super::optim::{Adam, AdamHyper, LrSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: usize,
    pub init_lr: f64,
    pub decay_start_fraction: f64,
    pub decay_factor: f64,
    pub seed: u64,
    pub targets: TargetSelection,
    /// Validation cadence in steps.
    pub eval_every: usize,
    /// At most this many training molecules enter the logged training MSE.
    pub train_eval_cap: usize,
    pub adam: AdamHyper,
    /// Hash of the split manifest, copied into every run log record.
    pub split_hash: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 20,
            total_steps: 2000,
            init_lr: 5e-4,
            decay_start_fraction: 0.5,
            decay_factor: 0.1,
            seed: 0,
            targets: TargetSelection::Single(0),
            eval_every: 1000,
            train_eval_cap: 1000,
            adam: AdamHyper::default(),
            split_hash: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || self.total_steps == 0 || self.eval_every == 0 {
            return fail("batch size, step count and evaluation cadence must be positive".into());
        }
        if !(1e-5..=5e-4).contains(&self.init_lr) {
            return fail(format!("initial learning rate {} is outside [1e-5, 5e-4]", self.init_lr));
        }
        if !(0.1..=0.9).contains(&self.decay_start_fraction) {
            return fail(format!(
                "decay start fraction {} is outside [0.1, 0.9]",
                self.decay_start_fraction
            ));
        }
        if !(0.01..=1.0).contains(&self.decay_factor) {
            return fail(format!("decay factor {} is outside [0.01, 1]", self.decay_factor));
        }
        self.targets.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            init_lr: self.init_lr,
            decay_start_fraction: self.decay_start_fraction,
            decay_factor: self.decay_factor,
            total_steps: self.total_steps,
        }
    }
}

/// One line of the JSON-lines run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub step: usize,
    pub lr: f64,
    pub train_mse: f64,
    pub valid_mae_per_target: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_hash: Option<String>,
}

/// Graphs encoded for one model configuration with normalized targets.
#[derive(Debug, Clone)]
pub struct PreparedSet {
    pub graphs: Vec<EncodedGraph>,
    pub targets: Vec<Vec<f64>>,
}

impl PreparedSet {
    pub fn new(cfg: &ModelConfig, stats: &TargetStats, mols: &[MolecularGraph]) -> Result<Self> {
        let graphs = mols
            .par_iter()
            .map(|m| cfg.prepare_graph(m))
            .collect::<Result<Vec<_>>>()?;
        let targets = mols.iter().map(|m| stats.normalized_targets(m)).collect();
        Ok(Self { graphs, targets })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    fn head(&self, n: usize) -> PreparedSet {
        let n = n.min(self.len());
        PreparedSet {
            graphs: self.graphs[..n].to_vec(),
            targets: self.targets[..n].to_vec(),
        }
    }
}

/// Normalized predictions, one row per graph.
pub fn predict_all(model: &Mpnn, graphs: &[EncodedGraph]) -> Result<Vec<Vec<f64>>> {
    graphs.par_iter().map(|g| model.predict(g)).collect()
}

pub fn evaluate_prepared(model: &Mpnn, set: &PreparedSet, stats: &TargetStats) -> Result<Metrics> {
    let pred = predict_all(model, &set.graphs)?;
    loss_and_metrics(&pred, &set.targets, stats)
}

/// Encodes `mols` under the model's configuration and scores it.
pub fn evaluate(model: &Mpnn, stats: &TargetStats, mols: &[MolecularGraph]) -> Result<Metrics> {
    let set = PreparedSet::new(&model.config, stats, mols)?;
    evaluate_prepared(model, &set, stats)
}

/// Mean of per-target MAEs scaled by the target standard deviations; the
/// model selection criterion.
pub fn selection_score(mae: &[f64], stats: &TargetStats) -> f64 {
    mae.iter().zip(&stats.std).map(|(m, s)| m / s).sum::<f64>() / mae.len().max(1) as f64
}

/// Mean loss and mean gradient over a batch; per-molecule work runs in
/// parallel and is summed in batch order.
pub fn batch_gradient(model: &Mpnn, set: &PreparedSet, batch: &[usize]) -> Result<(f64, ModelParams)> {
    let per_molecule: Vec<(f64, ModelParams)> = batch
        .par_iter()
        .map(|&i| model.loss_and_grad(&set.graphs[i], &set.targets[i]))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut total = model.params.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &per_molecule {
        loss += l;
        for (name, acc) in total.iter_mut() {
            for (a, v) in acc.data_mut().iter_mut().zip(g.get(name)?.data()) {
                *a += v;
            }
        }
    }
    for (_, acc) in total.iter_mut() {
        acc.data_mut().iter_mut().for_each(|a| *a *= scale);
    }
    Ok((loss * scale, total))
}

/// Shuffled passes over the training indices, cut into batches.
struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self {
            order: (0..n).collect(),
            cursor: n,
            rng,
        }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model configuration actually trained (output width set from the
    /// target selection).
    pub config: ModelConfig,
    pub stats: TargetStats,
    pub records: Vec<RunRecord>,
    /// Step whose parameters scored best on validation.
    pub best_step: usize,
    pub best_params: ModelParams,
    pub final_params: ModelParams,
}

impl TrainOutcome {
    pub fn best_model(&self) -> Mpnn {
        Mpnn {
            config: self.config.clone(),
            params: self.best_params.clone(),
        }
    }

    pub fn final_model(&self) -> Mpnn {
        Mpnn {
            config: self.config.clone(),
            params: self.final_params.clone(),
        }
    }

    pub fn best_record(&self) -> Option<&RunRecord> {
        self.records.iter().find(|r| r.step == self.best_step)
    }
}

/// Trains one model. `on_record` receives each evaluation record as it is
/// produced. With an empty validation set the final parameters are kept.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train_mols: &[MolecularGraph],
    valid_mols: &[MolecularGraph],
    on_record: &mut dyn FnMut(&RunRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model_cfg = model_cfg.clone();
    model_cfg.outputs = cfg.targets.len();
    let stats = TargetStats::fit(train_mols, cfg.targets)?;
    let train_set = PreparedSet::new(&model_cfg, &stats, train_mols)?;
    let valid_set = PreparedSet::new(&model_cfg, &stats, valid_mols)?;
    let train_probe = train_set.head(cfg.train_eval_cap);

    let mut model = Mpnn::new(model_cfg.clone(), cfg.seed)?;
    let mut adam = Adam::new(&model.params, cfg.adam);
    let schedule = cfg.schedule();
    let mut sampler = BatchSampler::new(train_set.len(), cfg.seed);

    let mut records = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut record = |step: usize, model: &Mpnn| -> Result<()> {
        let train_mse = evaluate_prepared(model, &train_probe, &stats)?.mse;
        if !train_mse.is_finite() {
            return Err(Error::Divergence(format!("training loss is {train_mse} at step {step}")));
        }
        let valid_mae = if valid_set.is_empty() {
            Vec::new()
        } else {
            evaluate_prepared(model, &valid_set, &stats)?.mae
        };
        let score = if valid_set.is_empty() {
            f64::NEG_INFINITY
        } else {
            selection_score(&valid_mae, &stats)
        };
        if best.as_ref().map_or(true, |(s, _, _)| score <= *s) {
            best = Some((score, step, model.params.clone()));
        }
        let r = RunRecord {
            step,
            lr: schedule.lr_at(step),
            train_mse,
            valid_mae_per_target: valid_mae,
            split_hash: cfg.split_hash.clone(),
        };
        log::info!("step {step}: train mse {train_mse:.6}, valid mae {:?}", r.valid_mae_per_target);
        on_record(&r)?;
        records.push(r);
        Ok(())
    };

    record(0, &model)?;
    for step in 1..=cfg.total_steps {
        let batch = sampler.next(cfg.batch_size);
        let (loss, grads) = batch_gradient(&model, &train_set, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("batch loss is {loss} at step {step}")));
        }
        adam.step(&mut model.params, &grads, schedule.lr_at(step - 1))?;
        if step % cfg.eval_every == 0 || step == cfg.total_steps {
            record(step, &model)?;
        }
    }

    let (_, best_step, best_params) = best.expect("at least one evaluation ran");
    Ok(TrainOutcome {
        config: model_cfg,
        stats,
        records,
        best_step,
        best_params,
        final_params: model.params,
    })
}
