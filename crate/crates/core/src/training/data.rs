use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::molgraph::{MolecularGraph, NUM_TARGETS, TARGET_NAMES};

/// Which targets a model regresses: one model per target, or all jointly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetSelection {
    All,
    Single(usize),
}

impl TargetSelection {
    pub fn indices(&self) -> Vec<usize> {
        match *self {
            TargetSelection::All => (0..NUM_TARGETS).collect(),
            TargetSelection::Single(i) => vec![i],
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TargetSelection::All => NUM_TARGETS,
            TargetSelection::Single(_) => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TargetSelection::Single(i) if i >= NUM_TARGETS => Err(Error::Contract(format!(
                "target index {i} is outside 0..{NUM_TARGETS}"
            ))),
            _ => Ok(()),
        }
    }

    /// Selected target values of one molecule, in selection order.
    pub fn pick(&self, mol: &MolecularGraph) -> Vec<f64> {
        self.indices().into_iter().map(|i| mol.targets[i]).collect()
    }
}

impl FromStr for TargetSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(TargetSelection::All);
        }
        if let Some(i) = TARGET_NAMES.iter().position(|n| *n == s) {
            return Ok(TargetSelection::Single(i));
        }
        let i: usize = s
            .parse()
            .map_err(|_| Error::Config(format!("target must be `all` or an index, got `{s}`")))?;
        let sel = TargetSelection::Single(i);
        sel.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(sel)
    }
}

/// Per-target mean and population standard deviation of the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub targets: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl TargetStats {
    /// Reads only the selected target columns.
    pub fn fit(train: &[MolecularGraph], selection: TargetSelection) -> Result<Self> {
        selection.validate()?;
        if train.is_empty() {
            return Err(Error::Contract("cannot compute target statistics of an empty split".into()));
        }
        let targets = selection.indices();
        let n = train.len() as f64;
        let mut mean = Vec::with_capacity(targets.len());
        let mut std = Vec::with_capacity(targets.len());
        for &t in &targets {
            let mu = train.iter().map(|m| m.targets[t]).sum::<f64>() / n;
            let var = train.iter().map(|m| (m.targets[t] - mu).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if !(sd > 0.0) || !sd.is_finite() {
                return Err(Error::DegenerateTarget { target: t });
            }
            mean.push(mu);
            std.push(sd);
        }
        Ok(Self { targets, mean, std })
    }

    pub fn normalize(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(y, (m, s))| (y - m) / s)
            .collect()
    }

    pub fn denormalize(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(y, (m, s))| y * s + m)
            .collect()
    }

    /// Normalized selected targets of one molecule.
    pub fn normalized_targets(&self, mol: &MolecularGraph) -> Vec<f64> {
        let raw: Vec<f64> = self.targets.iter().map(|&t| mol.targets[t]).collect();
        self.normalize(&raw)
    }
}

/// Fits stats on `train` and returns every molecule's normalized targets.
pub fn normalize_targets(
    train: &[MolecularGraph],
    selection: TargetSelection,
) -> Result<(Vec<Vec<f64>>, TargetStats)> {
    let stats = TargetStats::fit(train, selection)?;
    let normalized = train.iter().map(|m| stats.normalized_targets(m)).collect();
    Ok((normalized, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub valid: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            valid: 10_000,
            test: 10_000,
        }
    }
}

/// Seeded partition of dataset indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("split serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }
}

pub fn split_dataset(n: usize, sizes: SplitSizes, seed: u64) -> Result<Split> {
    if sizes.valid + sizes.test >= n {
        return Err(Error::Contract(format!(
            "dataset of {n} molecules is too small for {} validation and {} test molecules",
            sizes.valid, sizes.test
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut valid = order[..sizes.valid].to_vec();
    let mut test = order[sizes.valid..sizes.valid + sizes.test].to_vec();
    let mut train = order[sizes.valid + sizes.test..].to_vec();
    for part in [&mut train, &mut valid, &mut test] {
        part.sort_unstable();
    }
    Ok(Split {
        seed,
        train,
        valid,
        test,
    })
}

pub fn select<'a>(data: &'a [MolecularGraph], indices: &[usize]) -> Vec<&'a MolecularGraph> {
    indices.iter().map(|&i| &data[i]).collect()
}
