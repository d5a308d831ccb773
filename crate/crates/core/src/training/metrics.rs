use crate::error::{Error, Result};
use crate::molgraph::{NUM_TARGETS, TARGET_NAMES};

use super::data::TargetStats;

/// Chemical accuracy per target, in target units, indexed like
/// [`TARGET_NAMES`].
pub struct ChemicalAccuracyTable;

impl ChemicalAccuracyTable {
    pub const VALUES: [f64; NUM_TARGETS] = [
        0.1, 0.1, 0.043, 0.043, 0.043, 1.2, 0.0012, 0.043, 0.043, 0.043, 0.043, 0.050, 10.0,
    ];

    pub fn get(target: usize) -> Result<f64> {
        Self::VALUES
            .get(target)
            .copied()
            .ok_or_else(|| Error::Contract(format!("unknown target index {target}")))
    }

    pub fn by_name(name: &str) -> Result<f64> {
        let i = TARGET_NAMES
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| Error::Contract(format!("unknown target `{name}`")))?;
        Self::get(i)
    }
}

pub fn error_ratio(mae: f64, target: usize) -> Result<f64> {
    Ok(mae / ChemicalAccuracyTable::get(target)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Mean squared error over all predictions, normalized space.
    pub mse: f64,
    /// Mean absolute error per selected target, original units.
    pub mae: Vec<f64>,
}

/// `pred` and `target` hold normalized rows, one per molecule.
pub fn loss_and_metrics(pred: &[Vec<f64>], target: &[Vec<f64>], stats: &TargetStats) -> Result<Metrics> {
    if pred.len() != target.len() {
        return Err(Error::Contract("prediction and target counts differ".into()));
    }
    let width = stats.targets.len();
    if pred.iter().chain(target).any(|r| r.len() != width) {
        return Err(Error::Dimension(format!("every row must hold {width} targets")));
    }
    if pred.is_empty() {
        return Ok(Metrics {
            mse: 0.0,
            mae: vec![0.0; width],
        });
    }
    let n = pred.len() as f64;
    let mut sq = 0.0;
    let mut mae = vec![0.0; width];
    for (p, t) in pred.iter().zip(target) {
        let (pd, td) = (stats.denormalize(p), stats.denormalize(t));
        for j in 0..width {
            sq += (p[j] - t[j]).powi(2);
            mae[j] += (pd[j] - td[j]).abs();
        }
    }
    for m in &mut mae {
        *m /= n;
    }
    Ok(Metrics {
        mse: sq / (n * width as f64),
        mae,
    })
}

/// One report row: `(target name, mae, chemical accuracy, error ratio)`.
pub fn report_rows(stats: &TargetStats, mae: &[f64]) -> Result<Vec<(&'static str, f64, f64, f64)>> {
    stats
        .targets
        .iter()
        .zip(mae)
        .map(|(&t, &m)| Ok((TARGET_NAMES[t], m, ChemicalAccuracyTable::get(t)?, error_ratio(m, t)?)))
        .collect()
}

pub const REPORT_HEADER: &str = "target,mae,chemical_accuracy,error_ratio";

pub fn report_csv(stats: &TargetStats, mae: &[f64]) -> Result<String> {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for (name, m, acc, ratio) in report_rows(stats, mae)? {
        out.push_str(&format!("{name},{m},{acc},{ratio}\n"));
    }
    Ok(out)
}
