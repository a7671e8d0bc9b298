//! Replicated train/test experiment over several classifiers.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::grid::{grid_or_default, run_grid_search, GridSearch};
use super::io::BagOutput;
use crate::bagcore::io::{apply_labels, format_real, Labels};
use crate::bagcore::{split_dataset, Bag, BagDataset, ExtentInterval};
use crate::eval::{
    evaluate, icc_pair, interval_agreement, rank_classifiers, stability_report, BagPrediction, EvaluationReport,
    IccResult, IntervalAgreement, RankReport, RatingTable, StabilityReport,
};
use crate::weak::{threshold_from_probabilities, Hyperparams, Method};
use crate::{seed, Error, Result};

pub const RANDOM_BASELINE: &str = "random";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    /// Grid description per method name; missing methods use the default
    /// grid.
    pub grids: BTreeMap<String, Value>,
    pub replications: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub cv_folds: usize,
    pub alpha: f64,
    pub n_boot: usize,
    /// Adds a classifier with uniformly random instance probabilities.
    pub random_baseline: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            methods: Method::ALL.to_vec(),
            grids: BTreeMap::new(),
            replications: 3,
            n_train: 400,
            n_test: 200,
            cv_folds: 2,
            alpha: 0.05,
            n_boot: 1000,
            random_baseline: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() && !self.random_baseline {
            return Err(Error::config("experiment needs at least one method"));
        }
        if self.replications == 0 || self.n_train == 0 || self.n_test == 0 {
            return Err(Error::config("replications, n_train and n_test must be positive"));
        }
        if self.cv_folds < 2 {
            return Err(Error::config("cv_folds must be at least 2"));
        }
        if self.alpha != 0.05 && self.alpha != 0.10 {
            return Err(Error::config("alpha must be 0.05 or 0.10"));
        }
        if self.n_boot < crate::eval::MIN_BOOTSTRAP {
            return Err(Error::config(format!("n_boot must be at least {}", crate::eval::MIN_BOOTSTRAP)));
        }
        for key in self.grids.keys() {
            let m: Method = key.parse()?;
            grid_or_default(m, self.grids.get(key))?;
        }
        Ok(())
    }

    fn grid(&self, method: Method) -> Result<Vec<Hyperparams>> {
        grid_or_default(method, self.grids.get(method.name()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierRun {
    pub classifier: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_search: Option<GridSearch>,
    pub instance_threshold: f64,
    /// ICC against the evaluation reference.
    pub icc: IccResult,
    pub evaluation: EvaluationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub replication_id: usize,
    pub train_bags: usize,
    pub test_bags: usize,
    pub classifiers: Vec<ClassifierRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking: Option<RankReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IccRow {
    pub classifier: String,
    pub per_replication: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub classifier: String,
    /// Averaged over raters and replications.
    pub agreement: IntervalAgreement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub classifier: String,
    pub report: StabilityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub classifiers: Vec<String>,
    pub replications: Vec<ReplicationReport>,
    pub icc: Vec<IccRow>,
    pub agreement: Vec<AgreementRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rater_agreement: Option<IntervalAgreement>,
    pub stability: Vec<StabilityRow>,
    /// Raters as replications on the pooled test bags, the reference row of
    /// the stability table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rater_stability: Option<IntervalAgreement>,
    pub thresholds: Vec<(String, Vec<f64>)>,
}

/// A "model" with independent uniform instance probabilities and a
/// threshold fitted on the training bags.
fn random_outputs(train: &[Bag], test: &[Bag], seed: u64) -> Result<(f64, Vec<BagOutput>)> {
    let probs = |b: &Bag| -> Vec<f64> {
        let mut rng = seed::rng(seed::derive(seed, &[seed::hash_str(&b.id)]));
        (0..b.len()).map(|_| rng.random::<f64>()).collect()
    };
    let train_probs: Vec<Vec<f64>> = train.iter().map(probs).collect();
    let extents: Vec<f64> = train.iter().map(Bag::require_extent).collect::<Result<_>>()?;
    let t = threshold_from_probabilities(&train_probs, &extents)?;
    let outputs = test
        .iter()
        .map(|b| {
            let probabilities = probs(b);
            let labels: Vec<bool> = probabilities.iter().map(|&p| p > t).collect();
            BagOutput {
                bag_id: b.id.clone(),
                extent: labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64,
                instance_ids: b.instances.iter().map(|i| i.id.clone()).collect(),
                probabilities,
                labels,
            }
        })
        .collect();
    Ok((t, outputs))
}

enum Fitted {
    Model(Box<crate::weak::TrainedBagModel>),
    Random { seed: u64, threshold: f64 },
}

impl Fitted {
    fn outputs(&self, train: &[Bag], bags: &[Bag]) -> Result<Vec<BagOutput>> {
        match self {
            Fitted::Model(m) => bags.iter().map(|b| BagOutput::predict(m, b)).collect(),
            Fitted::Random { seed, .. } => Ok(random_outputs(train, bags, *seed)?.1),
        }
    }
}

fn reference_extents(labels: &Labels, preds: &[BagPrediction]) -> Result<Vec<f64>> {
    let map = labels.extents()?;
    preds
        .iter()
        .map(|p| map.get(&p.bag_id).copied().ok_or_else(|| Error::data(format!("no reference for bag `{}`", p.bag_id))))
        .collect()
}

/// Runs the full protocol. `labels` train the classifiers and provide rater
/// agreement; `reference` (when given) replaces them as the extent that ICC
/// and ranks are computed against.
pub fn run_experiment(
    dataset: &BagDataset,
    labels: &Labels,
    reference: Option<&Labels>,
    config: &ExperimentConfig,
    root_seed: u64,
) -> Result<ExperimentReport> {
    config.validate()?;
    let mut data = dataset.clone();
    apply_labels(&mut data, labels).map_err(|e| e.in_stage("labels"))?;
    let truth = reference.unwrap_or(labels);
    let plans = split_dataset(&data, config.replications, config.n_train, config.n_test, root_seed)
        .map_err(|e| e.in_stage("split"))?;
    let mut names: Vec<String> = config.methods.iter().map(|m| m.name().to_string()).collect();
    if config.random_baseline {
        names.push(RANDOM_BASELINE.to_string());
    }

    let mut all_test: Vec<Bag> = Vec::new();
    let mut fitted: Vec<(Vec<Bag>, Vec<Fitted>)> = Vec::new();
    let mut reports = Vec::new();
    for plan in &plans {
        let r = plan.replication_id;
        let train = data.subset(&plan.train_ids)?;
        let test = data.subset(&plan.test_ids)?;
        all_test.extend(test.iter().cloned());
        let mut runs = Vec::new();
        let mut models = Vec::new();
        let mut preds_all = Vec::new();
        for name in &names {
            let stage = format!("replication {r} / {name}");
            let method_seed = seed::derive(root_seed, &[r as u64, seed::hash_str(name)]);
            let (fit, grid_search) = if name == RANDOM_BASELINE {
                let (threshold, _) = random_outputs(&train, &[], method_seed).map_err(|e| e.in_stage(&stage))?;
                (Fitted::Random { seed: method_seed, threshold }, None)
            } else {
                let method: Method = name.parse()?;
                log::info!("{stage}: grid search");
                let (model, gs) = run_grid_search(method, &config.grid(method)?, &train, config.cv_folds, method_seed)
                    .map_err(|e| e.in_stage(&stage))?;
                (Fitted::Model(Box::new(model)), Some(gs))
            };
            let threshold = match &fit {
                Fitted::Model(m) => m.instance_threshold,
                Fitted::Random { threshold, .. } => *threshold,
            };
            let preds: Vec<BagPrediction> =
                fit.outputs(&train, &test).map_err(|e| e.in_stage(&stage))?.iter().map(BagOutput::to_prediction).collect();
            let evaluation = evaluate(&preds, labels, config.n_boot, seed::derive(method_seed, &[1]))
                .map_err(|e| e.in_stage(&stage))?;
            let icc = match reference {
                Some(refl) => {
                    let ext: Vec<f64> = preds.iter().map(|p| p.extent).collect();
                    icc_pair(&ext, &reference_extents(refl, &preds)?).map_err(|e| e.in_stage(&stage))?
                }
                None => evaluation.icc,
            };
            runs.push(ClassifierRun {
                classifier: name.clone(),
                grid_search,
                instance_threshold: threshold,
                icc,
                evaluation,
            });
            preds_all.push(preds);
            models.push(fit);
        }
        let ranking = if names.len() >= 2 {
            Some(rank_classifiers(&names, &preds_all, truth, config.alpha).map_err(|e| e.in_stage(format!("replication {r} / ranking")))?)
        } else {
            None
        };
        reports.push(ReplicationReport {
            replication_id: r,
            train_bags: train.len(),
            test_bags: test.len(),
            classifiers: runs,
            ranking,
        });
        fitted.push((train, models));
    }

    // every replication's models predict the pooled test bags
    let mut stability = Vec::new();
    if plans.len() >= 2 {
        for (j, name) in names.iter().enumerate() {
            let preds: Vec<Vec<BagPrediction>> = fitted
                .iter()
                .map(|(train, models)| {
                    Ok(models[j].outputs(train, &all_test)?.iter().map(BagOutput::to_prediction).collect())
                })
                .collect::<Result<_>>()
                .map_err(|e| e.in_stage(format!("stability / {name}")))?;
            stability.push(StabilityRow {
                classifier: name.clone(),
                report: stability_report(&preds)?,
            });
        }
    }
    let rater_stability = rater_table(labels, &all_test)?.map(|t| interval_agreement(&t)).transpose()?;

    let icc = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let per: Vec<f64> = reports.iter().map(|r| r.classifiers[j].icc.icc).collect();
            IccRow {
                classifier: name.clone(),
                mean: per.iter().sum::<f64>() / per.len() as f64,
                per_replication: per,
            }
        })
        .collect();
    let agreement = names
        .iter()
        .enumerate()
        .filter_map(|(j, name)| {
            let items: Vec<IntervalAgreement> =
                reports.iter().filter_map(|r| r.classifiers[j].evaluation.mean_rater_agreement.clone()).collect();
            mean_agreement(&items).map(|agreement| AgreementRow {
                classifier: name.clone(),
                agreement,
            })
        })
        .collect();
    let rater_agreement =
        mean_agreement(&reports.iter().filter_map(|r| r.classifiers.first()?.evaluation.inter_rater.clone()).collect::<Vec<_>>());
    let thresholds = names
        .iter()
        .enumerate()
        .map(|(j, name)| (name.clone(), reports.iter().map(|r| r.classifiers[j].instance_threshold).collect()))
        .collect();
    Ok(ExperimentReport {
        classifiers: names,
        replications: reports,
        icc,
        agreement,
        rater_agreement,
        stability,
        rater_stability,
        thresholds,
    })
}

fn mean_agreement(items: &[IntervalAgreement]) -> Option<IntervalAgreement> {
    let first = items.first()?;
    let specific = (0..first.specific.len())
        .map(|c| {
            let v: Vec<f64> = items.iter().filter_map(|a| a.specific[c]).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    Some(IntervalAgreement {
        intervals: first.intervals.clone(),
        specific,
        overall: items.iter().map(|a| a.overall).sum::<f64>() / items.len() as f64,
    })
}

fn rater_table(labels: &Labels, bags: &[Bag]) -> Result<Option<RatingTable>> {
    let raters = labels.raters();
    if raters.len() < 2 {
        return Ok(None);
    }
    let maps: Vec<HashMap<String, ExtentInterval>> = raters.iter().map(|r| labels.rater_intervals(r)).collect();
    let cases: Vec<Vec<usize>> = bags
        .iter()
        .map(|b| maps.iter().filter_map(|m| m.get(&b.id).map(|i| i.index())).collect::<Vec<_>>())
        .filter(|c| c.len() >= 2)
        .collect();
    if cases.is_empty() {
        return Ok(None);
    }
    Ok(Some(RatingTable::new(ExtentInterval::ALL.len(), cases)?))
}

fn opt(v: Option<f64>) -> String {
    v.map(format_real).unwrap_or_default()
}

impl ExperimentReport {
    /// `classifier,rep1,...,repR,mean`.
    pub fn write_icc_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        let mut header = vec!["classifier".to_string()];
        header.extend((1..=self.replications.len()).map(|r| format!("rep{r}")));
        header.push("mean".into());
        w.write_record(&header)?;
        for row in &self.icc {
            let mut rec = vec![row.classifier.clone()];
            rec.extend(row.per_replication.iter().map(|v| format_real(*v)));
            rec.push(format_real(row.mean));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    fn interval_header(first: &str, extra: &[&str]) -> Vec<String> {
        let mut h = vec![first.to_string()];
        h.extend(ExtentInterval::ALL.iter().map(|i| i.label().to_string()));
        h.push("overall".into());
        h.extend(extra.iter().map(|s| s.to_string()));
        h
    }

    fn interval_record(name: &str, a: &IntervalAgreement) -> Vec<String> {
        let mut rec = vec![name.to_string()];
        rec.extend(a.specific.iter().map(|v| opt(*v)));
        rec.push(format_real(a.overall));
        rec
    }

    /// Agreement with raters: one row per classifier plus `rater`.
    pub fn write_agreement_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(Self::interval_header("classifier", &[]))?;
        for row in &self.agreement {
            w.write_record(Self::interval_record(&row.classifier, &row.agreement))?;
        }
        if let Some(r) = &self.rater_agreement {
            w.write_record(Self::interval_record("rater", r))?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Bag interval and instance label stability per classifier.
    pub fn write_stability_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(Self::interval_header("classifier", &["instance_positive", "instance_negative"]))?;
        for row in &self.stability {
            let mut rec = Self::interval_record(&row.classifier, &row.report.bag);
            rec.push(opt(row.report.instance_positive));
            rec.push(opt(row.report.instance_negative));
            w.write_record(&rec)?;
        }
        if let Some(r) = &self.rater_stability {
            let mut rec = Self::interval_record("rater", r);
            rec.extend([String::new(), String::new()]);
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// `replication,classifier,mean_rank,position,group_ids,friedman_p,cd`.
    pub fn write_ranks_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["replication", "classifier", "mean_rank", "position", "groups", "friedman_p", "critical_difference"])?;
        for rep in &self.replications {
            let Some(rank) = &rep.ranking else { continue };
            let res = &rank.result;
            for (pos, &j) in res.order.iter().enumerate() {
                let groups: Vec<String> = res
                    .groups
                    .iter()
                    .enumerate()
                    .filter(|(_, &(s, e))| s <= pos && pos <= e)
                    .map(|(g, _)| (g + 1).to_string())
                    .collect();
                w.write_record([
                    rep.replication_id.to_string(),
                    rank.classifiers[j].clone(),
                    format_real(res.mean_ranks[j]),
                    (pos + 1).to_string(),
                    groups.join(" "),
                    format_real(res.p_value),
                    format_real(res.critical_difference),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// `classifier,rep1,...` fitted instance thresholds.
    pub fn write_thresholds_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        let mut header = vec!["classifier".to_string()];
        header.extend((1..=self.replications.len()).map(|r| format!("rep{r}")));
        w.write_record(&header)?;
        for (name, t) in &self.thresholds {
            let mut rec = vec![name.clone()];
            rec.extend(t.iter().map(|v| format_real(*v)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}
