use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{MessageFn, ModelConfig};
use crate::error::{Error, Result};
use crate::molgraph::MolecularGraph;

use super::trainer::{evaluate, selection_score, train, TrainConfig};

/// Ranges sampled uniformly and independently per trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    /// Message passing steps `T`, inclusive.
    pub steps: (usize, usize),
    /// set2set steps `M`, inclusive.
    pub set2set_steps: (usize, usize),
    pub init_lr: (f64, f64),
    pub decay_start_fraction: (f64, f64),
    pub decay_factor: (f64, f64),
    pub messages: Vec<MessageFn>,
    pub trials: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            steps: (3, 8),
            set2set_steps: (1, 12),
            init_lr: (1e-5, 5e-4),
            decay_start_fraction: (0.1, 0.9),
            decay_factor: (0.01, 1.0),
            messages: vec![MessageFn::EdgeNetwork],
            trials: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub index: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum TrialStatus {
    Completed {
        best_step: usize,
        valid_score: f64,
        valid_mae: Vec<f64>,
        test_mae: Vec<f64>,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub config: TrialConfig,
    pub status: TrialStatus,
}

impl TrialResult {
    pub fn valid_score(&self) -> Option<f64> {
        match self.status {
            TrialStatus::Completed { valid_score, .. } => Some(valid_score),
            TrialStatus::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub trials: Vec<TrialResult>,
    /// Completed trial indices, best validation score first.
    pub ranking: Vec<usize>,
}

impl SearchReport {
    pub fn best(&self) -> &TrialResult {
        &self.trials[self.ranking[0]]
    }

    pub fn failed(&self) -> usize {
        self.trials.len() - self.ranking.len()
    }
}

/// Draws every trial's configuration up front. Trial `i` trains with seed
/// `base_train.seed + i`.
pub fn sample_trials(
    space: &SearchSpace,
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    seed: u64,
) -> Result<Vec<TrialConfig>> {
    if space.trials == 0 {
        return Err(Error::Contract("search budget must be at least one trial".into()));
    }
    if space.messages.is_empty() {
        return Err(Error::Config("search space has no message functions".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..space.trials)
        .map(|index| {
            let model = ModelConfig {
                steps: rng.gen_range(space.steps.0..=space.steps.1),
                set2set_steps: rng.gen_range(space.set2set_steps.0..=space.set2set_steps.1),
                message: space.messages[rng.gen_range(0..space.messages.len())],
                ..base_model.clone()
            };
            let train = TrainConfig {
                init_lr: rng.gen_range(space.init_lr.0..=space.init_lr.1),
                decay_start_fraction: rng
                    .gen_range(space.decay_start_fraction.0..=space.decay_start_fraction.1),
                decay_factor: rng.gen_range(space.decay_factor.0..=space.decay_factor.1),
                seed: base_train.seed.wrapping_add(index as u64),
                ..base_train.clone()
            };
            TrialConfig { index, model, train }
        })
        .collect())
}

/// Trains every sampled trial in parallel, selects by validation score and
/// reports the test MAE of each completed trial's best checkpoint.
pub fn random_search(
    space: &SearchSpace,
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    seed: u64,
    train_mols: &[MolecularGraph],
    valid_mols: &[MolecularGraph],
    test_mols: &[MolecularGraph],
) -> Result<SearchReport> {
    if valid_mols.is_empty() {
        return Err(Error::Contract("model selection needs a validation split".into()));
    }
    let configs = sample_trials(space, base_model, base_train, seed)?;
    let trials: Vec<TrialResult> = configs
        .into_par_iter()
        .map(|config| {
            let status = match run_trial(&config, train_mols, valid_mols, test_mols) {
                Ok(status) => status,
                Err(e) => {
                    log::warn!("trial {} failed: {e}", config.index);
                    TrialStatus::Failed { error: e.to_string() }
                }
            };
            TrialResult { config, status }
        })
        .collect();
    let mut ranking: Vec<usize> = (0..trials.len()).filter(|&i| trials[i].valid_score().is_some()).collect();
    if ranking.is_empty() {
        return Err(Error::SearchFailed(trials.len()));
    }
    ranking.sort_by(|&a, &b| {
        let (sa, sb) = (trials[a].valid_score().unwrap(), trials[b].valid_score().unwrap());
        sa.total_cmp(&sb).then(a.cmp(&b))
    });
    Ok(SearchReport { trials, ranking })
}

fn run_trial(
    config: &TrialConfig,
    train_mols: &[MolecularGraph],
    valid_mols: &[MolecularGraph],
    test_mols: &[MolecularGraph],
) -> Result<TrialStatus> {
    let outcome = train(&config.model, &config.train, train_mols, valid_mols, &mut |_| Ok(()))?;
    let best = outcome.best_record().expect("best step was recorded");
    let valid_mae = best.valid_mae_per_target.clone();
    let test_mae = if test_mols.is_empty() {
        Vec::new()
    } else {
        evaluate(&outcome.best_model(), &outcome.stats, test_mols)?.mae
    };
    Ok(TrialStatus::Completed {
        best_step: outcome.best_step,
        valid_score: selection_score(&valid_mae, &outcome.stats),
        valid_mae,
        test_mae,
    })
}
