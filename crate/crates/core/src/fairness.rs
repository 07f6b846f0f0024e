//! Per-subject accuracy of a trained encoder and the largest gap between groups.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::encoder::{confusion, EncoderError, EncoderModel};
use crate::features::FeatureVector;
use crate::ingest::EegEpoch;
use crate::label::NUM_CLASSES;

#[derive(Debug, Error)]
pub enum FairnessError {
    #[error("fairness evaluation needs at least two subject groups, found {0}")]
    NeedTwoGroups(usize),
    #[error("epoch {0} has no label")]
    Unlabeled(usize),
    #[error("epoch {0} has no subject tag")]
    MissingSubject(usize),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub subject: String,
    pub n: usize,
    pub accuracy: f64,
    /// `[true][predicted]` counts.
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairnessReport {
    /// Sorted by subject tag.
    pub groups: Vec<GroupReport>,
    /// Highest minus lowest group accuracy.
    pub max_gap: f64,
    pub best_group: String,
    pub worst_group: String,
}

/// Groups `epochs` by subject tag and scores each group separately.
pub fn evaluate_fairness(model: &EncoderModel, epochs: &[EegEpoch]) -> Result<FairnessReport, FairnessError> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in epochs.iter().enumerate() {
        if e.label.is_none() {
            return Err(FairnessError::Unlabeled(i));
        }
        let subject = e.subject.as_deref().ok_or(FairnessError::MissingSubject(i))?;
        groups.entry(subject).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(FairnessError::NeedTwoGroups(groups.len()));
    }
    let mut reports = Vec::with_capacity(groups.len());
    for (subject, rows) in groups {
        let features: Vec<FeatureVector> = rows
            .iter()
            .map(|&i| model.features(&epochs[i]))
            .collect::<Result<_, _>>()?;
        let labels: Vec<usize> = rows.iter().map(|&i| epochs[i].label.expect("checked").code()).collect();
        let (accuracy, confusion) = confusion(model, &features.iter().collect::<Vec<_>>(), &labels)?;
        reports.push(GroupReport {
            subject: subject.to_string(),
            n: rows.len(),
            accuracy,
            confusion,
        });
    }
    // ties resolve to the first group in subject order
    let best = reports.iter().fold(&reports[0], |b, g| if g.accuracy > b.accuracy { g } else { b });
    let worst = reports.iter().fold(&reports[0], |w, g| if g.accuracy < w.accuracy { g } else { w });
    Ok(FairnessReport {
        max_gap: best.accuracy - worst.accuracy,
        best_group: best.subject.clone(),
        worst_group: worst.subject.clone(),
        groups: reports,
    })
}
