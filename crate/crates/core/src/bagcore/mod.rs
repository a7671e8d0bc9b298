//! Bags, instances, labels and the bag-labeling operators.

mod interval;
pub mod io;
mod split;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use interval::ExtentInterval;
pub use split::{split_dataset, SplitPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub features: Vec<f64>,
    /// Ground-truth label, only known for synthetic data.
    pub true_label: Option<bool>,
}

impl Instance {
    pub fn new(id: impl Into<String>, features: Vec<f64>) -> Self {
        Instance {
            id: id.into(),
            features,
            true_label: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bag {
    pub id: String,
    pub instances: Vec<Instance>,
    /// Proportion of positive instances, in [0, 1].
    pub extent: Option<f64>,
    pub binary_label: Option<bool>,
}

impl Bag {
    pub fn new(id: impl Into<String>, instances: Vec<Instance>) -> Result<Self> {
        let id = id.into();
        if instances.is_empty() {
            return Err(Error::data(format!("bag `{id}` has no instances")));
        }
        let mut seen = HashSet::new();
        for inst in &instances {
            if !seen.insert(inst.id.as_str()) {
                return Err(Error::data(format!(
                    "bag `{id}`: duplicate instance id `{}`",
                    inst.id
                )));
            }
        }
        Ok(Bag {
            id,
            instances,
            extent: None,
            binary_label: None,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Sets the extent label and the binary label implied by it.
    pub fn set_extent(&mut self, extent: f64) -> Result<()> {
        let binary = binarize_extent(extent)?;
        self.extent = Some(extent);
        self.binary_label = Some(binary);
        Ok(())
    }

    pub fn require_extent(&self) -> Result<f64> {
        self.extent
            .ok_or_else(|| Error::data(format!("bag `{}` has no extent label", self.id)))
    }

    pub fn require_binary(&self) -> Result<bool> {
        match (self.binary_label, self.extent) {
            (Some(b), _) => Ok(b),
            (None, Some(e)) => binarize_extent(e),
            (None, None) => Err(Error::data(format!("bag `{}` has no label", self.id))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagDataset {
    bags: Vec<Bag>,
    feature_dim: usize,
}

impl BagDataset {
    pub fn new(bags: Vec<Bag>) -> Result<Self> {
        let feature_dim = bags
            .first()
            .and_then(|b| b.instances.first())
            .map(|i| i.features.len())
            .unwrap_or(0);
        let mut ids = HashSet::new();
        for bag in &bags {
            if !ids.insert(bag.id.as_str()) {
                return Err(Error::data(format!("duplicate bag id `{}`", bag.id)));
            }
            if bag.instances.is_empty() {
                return Err(Error::data(format!("bag `{}` has no instances", bag.id)));
            }
            for inst in &bag.instances {
                if inst.features.len() != feature_dim {
                    return Err(Error::data(format!(
                        "bag `{}` instance `{}`: dimension {} != {}",
                        bag.id,
                        inst.id,
                        inst.features.len(),
                        feature_dim
                    )));
                }
                if inst.features.iter().any(|v| !v.is_finite()) {
                    return Err(Error::data(format!(
                        "bag `{}` instance `{}`: non-finite feature",
                        bag.id, inst.id
                    )));
                }
            }
            if let (Some(e), Some(b)) = (bag.extent, bag.binary_label) {
                if (e > 0.0) != b {
                    return Err(Error::data(format!(
                        "bag `{}`: binary label inconsistent with extent {e}",
                        bag.id
                    )));
                }
            }
        }
        Ok(BagDataset { bags, feature_dim })
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn bags_mut(&mut self) -> &mut [Bag] {
        &mut self.bags
    }

    pub fn into_bags(self) -> Vec<Bag> {
        self.bags
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Bag> {
        self.bags.iter().find(|b| b.id == id)
    }

    /// Bags whose ids are listed, in the order given.
    pub fn subset(&self, ids: &[String]) -> Result<Vec<Bag>> {
        let index: std::collections::HashMap<&str, &Bag> =
            self.bags.iter().map(|b| (b.id.as_str(), b)).collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|b| (*b).clone())
                    .ok_or_else(|| Error::data(format!("unknown bag id `{id}`")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterAssessment {
    pub rater_id: String,
    pub bag_id: String,
    pub interval: ExtentInterval,
}

/// Max rule: a bag is positive if at least one instance is positive.
pub fn theta_max(labels: &[bool]) -> Result<bool> {
    if labels.is_empty() {
        return Err(Error::domain("theta_max of an empty label list"));
    }
    Ok(labels.iter().any(|&l| l))
}

/// Mean rule: the bag label is the proportion of positive instances.
pub fn theta_mean(labels: &[bool]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::domain("theta_mean of an empty label list"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok(pos as f64 / labels.len() as f64)
}

pub fn interval_midpoint(interval: ExtentInterval) -> f64 {
    interval.midpoint_percent()
}

/// Averages the interval midpoints of all assessments of one bag, as a
/// proportion in [0, 1].
pub fn combine_raters(assessments: &[ExtentInterval]) -> Result<f64> {
    if assessments.is_empty() {
        return Err(Error::domain("combine_raters needs at least one assessment"));
    }
    // Twice every midpoint is an integer, so the sum is exact and the result
    // does not depend on argument order.
    let twice: u64 = assessments.iter().map(|a| a.twice_midpoint()).sum();
    Ok(twice as f64 / (200.0 * assessments.len() as f64))
}

pub fn binarize_extent(extent: f64) -> Result<bool> {
    check_proportion(extent, "extent")?;
    Ok(extent > 0.0)
}

/// Instance label is positive iff its probability strictly exceeds `t`.
pub fn threshold_instances(probabilities: &[f64], t: f64) -> Vec<bool> {
    probabilities.iter().map(|&p| p > t).collect()
}

pub(crate) fn check_proportion(v: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::domain(format!("{what} {v} outside [0, 1]")));
    }
    Ok(())
}
