//! Weighted averages of forecasts from several models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::ForecastResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightProvenance {
    McsEqual,
    InverseError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationWeights {
    pub model_labels: Vec<u32>,
    pub weights: Vec<f64>,
    pub provenance: WeightProvenance,
}

impl CombinationWeights {
    pub fn weight_of(&self, label: u32) -> Option<f64> {
        self.model_labels.iter().position(|&l| l == label).map(|i| self.weights[i])
    }

    /// Keeps only the labels in `keep` and rescales their weights to sum to 1.
    pub fn restrict(&self, keep: &[u32]) -> Result<Self> {
        let pairs: Vec<(u32, f64)> = self
            .model_labels
            .iter()
            .zip(&self.weights)
            .filter(|(l, _)| keep.contains(l))
            .map(|(&l, &w)| (l, w))
            .collect();
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        if pairs.is_empty() || total <= 0.0 {
            return Err(Error::invalid("no weighted model left after restriction"));
        }
        Ok(CombinationWeights {
            model_labels: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
            provenance: self.provenance,
        })
    }
}

pub fn equal_weights(superior_set: &[u32]) -> Result<CombinationWeights> {
    if superior_set.is_empty() {
        return Err(Error::invalid("cannot weight an empty model set"));
    }
    let w = 1.0 / superior_set.len() as f64;
    Ok(CombinationWeights {
        model_labels: superior_set.to_vec(),
        weights: vec![w; superior_set.len()],
        provenance: WeightProvenance::McsEqual,
    })
}

/// Weights proportional to `1 / loss`. Models with zero loss share all the
/// weight.
pub fn inverse_error_weights(labels: &[u32], mean_losses: &[f64]) -> Result<CombinationWeights> {
    if labels.len() != mean_losses.len() {
        return Err(Error::dims("one mean loss per model is required"));
    }
    if labels.is_empty() {
        return Err(Error::invalid("cannot weight an empty model set"));
    }
    if let Some(bad) = mean_losses.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Error::invalid(format!("mean losses must be finite and non-negative, got {bad}")));
    }
    let zeros: Vec<usize> = (0..labels.len()).filter(|&i| mean_losses[i] == 0.0).collect();
    let weights = if zeros.is_empty() {
        let inv: Vec<f64> = mean_losses.iter().map(|l| 1.0 / l).collect();
        let total: f64 = inv.iter().sum();
        inv.iter().map(|v| v / total).collect()
    } else {
        let zero_labels: Vec<u32> = zeros.iter().map(|&i| labels[i]).collect();
        log::warn!("models {zero_labels:?} have zero validation loss; they take all the weight");
        let w = 1.0 / zeros.len() as f64;
        (0..labels.len()).map(|i| if mean_losses[i] == 0.0 { w } else { 0.0 }).collect()
    };
    Ok(CombinationWeights {
        model_labels: labels.to_vec(),
        weights,
        provenance: WeightProvenance::InverseError,
    })
}

/// Weighted mean of points and of each bound. Inputs are summed in label
/// order so the result does not depend on the order of `results`.
pub fn combine_forecasts(results: &[ForecastResult], weights: &CombinationWeights, label: u32) -> Result<ForecastResult> {
    let mut pairs = Vec::with_capacity(weights.model_labels.len());
    for (&l, &w) in weights.model_labels.iter().zip(&weights.weights) {
        let mut hits = results.iter().filter(|r| r.model_label == l);
        let r = hits
            .next()
            .ok_or_else(|| Error::invalid(format!("no forecast for weighted model {l}")))?;
        if hits.next().is_some() {
            return Err(Error::invalid(format!("several forecasts carry model label {l}")));
        }
        pairs.push((l, w, r));
    }
    pairs.sort_by_key(|p| p.0);
    let first = pairs[0].2;
    for (_, _, r) in &pairs {
        if r.ages != first.ages || r.horizons != first.horizons || r.alpha != first.alpha {
            return Err(Error::dims("forecasts to combine differ in ages, horizons or alpha"));
        }
    }
    let shape = first.point.shape();
    let mut out = first.clone();
    out.point.fill(0.0);
    out.lower.fill(0.0);
    out.upper.fill(0.0);
    for (_, w, r) in &pairs {
        debug_assert_eq!(r.point.shape(), shape);
        out.point += r.point.scale(*w);
        out.lower += r.lower.scale(*w);
        out.upper += r.upper.scale(*w);
    }
    out.model_label = label;
    out.metadata.clear();
    out.metadata.insert(
        "members".to_string(),
        pairs.iter().map(|p| p.0.to_string()).collect::<Vec<_>>().join(" "),
    );
    Ok(out)
}
