//! Agreement statistics, ICC, classifier ranking and replication stability.

mod agreement;
mod icc;
mod rank;

pub use agreement::{bootstrap_ci, overall_agreement, prevalence, specific_agreement, RatingTable, MIN_BOOTSTRAP};
pub use icc::{icc_pair, icc_two_way_agreement, IccResult};
pub use rank::{
    critical_difference, friedman_test, mean_ranks, nemenyi_q, nemenyi_test, rank_errors, FriedmanResult,
    RankTestResult, NEMENYI_Q_005, NEMENYI_Q_010,
};

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::bagcore::io::Labels;
use crate::bagcore::ExtentInterval;
use crate::{Error, Result};

pub fn extent_to_interval(extent: f64) -> Result<ExtentInterval> {
    ExtentInterval::from_extent(extent)
}

/// A classifier's prediction for one bag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagPrediction {
    pub bag_id: String,
    pub extent: f64,
    pub instance_labels: Vec<bool>,
}

/// Specific agreement per extent interval (absent when undefined) and
/// overall agreement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalAgreement {
    pub intervals: Vec<String>,
    pub specific: Vec<Option<f64>>,
    pub overall: f64,
}

pub fn interval_agreement(table: &RatingTable) -> Result<IntervalAgreement> {
    Ok(IntervalAgreement {
        intervals: ExtentInterval::ALL.iter().map(|i| i.label().to_string()).collect(),
        specific: (0..ExtentInterval::ALL.len()).map(|c| specific_agreement(table, c)).collect(),
        overall: overall_agreement(table)?,
    })
}

fn average_agreements(items: &[IntervalAgreement]) -> Option<IntervalAgreement> {
    let first = items.first()?;
    let specific = (0..first.specific.len())
        .map(|c| {
            let vals: Vec<f64> = items.iter().filter_map(|a| a.specific[c]).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect();
    Some(IntervalAgreement {
        intervals: first.intervals.clone(),
        specific,
        overall: items.iter().map(|a| a.overall).sum::<f64>() / items.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterAgreement {
    pub rater: String,
    pub cases: usize,
    pub agreement: IntervalAgreement,
    pub overall_ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub cases: usize,
    pub icc: IccResult,
    pub mean_absolute_error: f64,
    /// Share of predicted bags in each interval.
    pub predicted_prevalence: Vec<f64>,
    /// Share of rater assessments in each interval (empty for extent labels).
    pub reference_prevalence: Vec<f64>,
    /// Classifier vs each rater, two ratings per case.
    pub per_rater: Vec<RaterAgreement>,
    pub mean_rater_agreement: Option<IntervalAgreement>,
    /// Raters against each other on the evaluated bags.
    pub inter_rater: Option<IntervalAgreement>,
    pub inter_rater_overall_ci: Option<(f64, f64)>,
}

fn extent_lookup(labels: &Labels, preds: &[BagPrediction]) -> Result<Vec<f64>> {
    let reference = labels.extents()?;
    preds
        .iter()
        .map(|p| {
            reference
                .get(&p.bag_id)
                .copied()
                .ok_or_else(|| Error::data(format!("no reference label for bag `{}`", p.bag_id)))
        })
        .collect()
}

/// Compares predictions with reference labels: ICC against the reference
/// extent and, for rater labels, interval agreement with each rater.
pub fn evaluate(preds: &[BagPrediction], labels: &Labels, n_boot: usize, seed: u64) -> Result<EvaluationReport> {
    if preds.is_empty() {
        return Err(Error::domain("no predictions to evaluate"));
    }
    let reference = extent_lookup(labels, preds)?;
    let predicted: Vec<f64> = preds.iter().map(|p| p.extent).collect();
    let icc = icc_pair(&predicted, &reference)?;
    let mae = predicted.iter().zip(&reference).map(|(a, b)| (a - b).abs()).sum::<f64>() / preds.len() as f64;
    let pred_intervals: Vec<usize> =
        predicted.iter().map(|&e| extent_to_interval(e).map(|i| i.index())).collect::<Result<_>>()?;
    let n_cat = ExtentInterval::ALL.len();
    let predicted_prevalence = (0..n_cat)
        .map(|c| pred_intervals.iter().filter(|&&v| v == c).count() as f64 / preds.len() as f64)
        .collect();

    let raters = labels.raters();
    let rater_maps: Vec<HashMap<String, ExtentInterval>> = raters.iter().map(|r| labels.rater_intervals(r)).collect();
    let mut per_rater = Vec::new();
    for (r, (name, map)) in raters.iter().zip(&rater_maps).enumerate() {
        let cases: Vec<Vec<usize>> = preds
            .iter()
            .zip(&pred_intervals)
            .filter_map(|(p, &c)| map.get(&p.bag_id).map(|i| vec![c, i.index()]))
            .collect();
        if cases.is_empty() {
            continue;
        }
        let table = RatingTable::new(n_cat, cases)?;
        let agreement = interval_agreement(&table)?;
        let overall_ci =
            bootstrap_ci(|t| overall_agreement(t).ok(), &table, n_boot, 0.95, crate::seed::derive(seed, &[r as u64]))?;
        per_rater.push(RaterAgreement {
            rater: name.clone(),
            cases: table.len(),
            agreement,
            overall_ci,
        });
    }
    let mean_rater_agreement = average_agreements(&per_rater.iter().map(|r| r.agreement.clone()).collect::<Vec<_>>());

    let (mut inter_rater, mut inter_rater_overall_ci, mut reference_prevalence) = (None, None, Vec::new());
    if raters.len() >= 2 {
        let cases: Vec<Vec<usize>> = preds
            .iter()
            .map(|p| rater_maps.iter().filter_map(|m| m.get(&p.bag_id).map(|i| i.index())).collect::<Vec<_>>())
            .filter(|c| c.len() >= 2)
            .collect();
        if !cases.is_empty() {
            let table = RatingTable::new(n_cat, cases)?;
            inter_rater = Some(interval_agreement(&table)?);
            inter_rater_overall_ci = Some(bootstrap_ci(
                |t| overall_agreement(t).ok(),
                &table,
                n_boot,
                0.95,
                crate::seed::derive_str(seed, "inter-rater"),
            )?);
            reference_prevalence = (0..n_cat).map(|c| prevalence(&table, c)).collect::<Result<_>>()?;
        }
    }
    Ok(EvaluationReport {
        cases: preds.len(),
        icc,
        mean_absolute_error: mae,
        predicted_prevalence,
        reference_prevalence,
        per_rater,
        mean_rater_agreement,
        inter_rater,
        inter_rater_overall_ci,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub classifiers: Vec<String>,
    pub cases: usize,
    pub result: RankTestResult,
}

/// Ranks classifiers by absolute extent error on the bags they all predicted.
pub fn rank_classifiers(
    names: &[String],
    predictions: &[Vec<BagPrediction>],
    labels: &Labels,
    alpha: f64,
) -> Result<RankReport> {
    if names.len() != predictions.len() {
        return Err(Error::domain("one name per prediction set required"));
    }
    let reference = labels.extents()?;
    let maps: Vec<BTreeMap<&str, f64>> =
        predictions.iter().map(|p| p.iter().map(|b| (b.bag_id.as_str(), b.extent)).collect()).collect();
    let first = maps.first().ok_or_else(|| Error::domain("no prediction sets"))?;
    let mut errors = Vec::new();
    for id in first.keys() {
        let row: Option<Vec<f64>> = maps.iter().map(|m| m.get(id).copied()).collect();
        let (Some(row), Some(r)) = (row, reference.get(*id)) else {
            continue;
        };
        errors.push(row.iter().map(|e| (e - r).abs()).collect::<Vec<f64>>());
    }
    if errors.len() < first.len() {
        log::warn!("rank: {} of {} bags lack a prediction or label and were dropped", first.len() - errors.len(), first.len());
    }
    let ranks = rank_errors(&errors)?;
    Ok(RankReport {
        classifiers: names.to_vec(),
        cases: errors.len(),
        result: nemenyi_test(&ranks, alpha)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub replications: usize,
    pub bags: usize,
    pub instances: usize,
    pub bag: IntervalAgreement,
    /// Specific agreement on positive instance labels.
    pub instance_positive: Option<f64>,
    /// Specific agreement on negative instance labels.
    pub instance_negative: Option<f64>,
}

/// Treats each replication as a rater of the same bags and instances.
pub fn stability_report(replications: &[Vec<BagPrediction>]) -> Result<StabilityReport> {
    if replications.len() < 2 {
        return Err(Error::domain("stability needs at least 2 replications"));
    }
    let index: Vec<HashMap<&str, &BagPrediction>> =
        replications.iter().map(|r| r.iter().map(|p| (p.bag_id.as_str(), p)).collect()).collect();
    let base = &replications[0];
    if index.iter().zip(replications).any(|(m, r)| m.len() != r.len() || r.len() != base.len()) {
        return Err(Error::domain("replications predicted different bag sets"));
    }
    let mut bag_cases = Vec::with_capacity(base.len());
    let mut inst_cases = Vec::new();
    for p in base {
        let row: Vec<&BagPrediction> = index
            .iter()
            .map(|m| m.get(p.bag_id.as_str()).copied())
            .collect::<Option<_>>()
            .ok_or_else(|| Error::domain(format!("bag `{}` missing from a replication", p.bag_id)))?;
        bag_cases.push(row.iter().map(|b| extent_to_interval(b.extent).map(|i| i.index())).collect::<Result<_>>()?);
        let n = p.instance_labels.len();
        if row.iter().any(|b| b.instance_labels.len() != n) {
            return Err(Error::domain(format!("bag `{}` has different instance counts across replications", p.bag_id)));
        }
        for j in 0..n {
            inst_cases.push(row.iter().map(|b| usize::from(b.instance_labels[j])).collect());
        }
    }
    let bag_table = RatingTable::new(ExtentInterval::ALL.len(), bag_cases)?;
    let inst_table = RatingTable::new(2, inst_cases)?;
    Ok(StabilityReport {
        replications: replications.len(),
        bags: bag_table.len(),
        instances: inst_table.len(),
        bag: interval_agreement(&bag_table)?,
        instance_positive: specific_agreement(&inst_table, 1),
        instance_negative: specific_agreement(&inst_table, 0),
    })
}
