//! Synthetic bags with known instance labels, and simulated raters.
//!
//! An instance is `mean(component) + label * separation * u + noise_sd * e`
//! with `u = (1, ..., 1) / sqrt(d)`, a component drawn from the class
//! mixture and `e` standard normal. With the default single-component
//! mixtures the Bayes instance AUC is `Phi(separation / (noise_sd sqrt 2))`.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bagcore::{Bag, BagDataset, ExtentInterval, Instance, RaterAssessment};
use crate::features::{Mask, Volume};
use crate::{seed, Error, Result};

/// Share of reference assessments per interval in the reference data, in
/// percent (sums to 99.9 from rounding; normalised on use).
pub const REFERENCE_PREVALENCE: [f64; 6] = [75.2, 14.7, 7.0, 2.0, 0.9, 0.1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub d: usize,
    pub n_bags: usize,
    pub instances_per_bag: usize,
    /// Empty means a single component at the origin.
    pub negative_components: Vec<MixtureComponent>,
    pub positive_components: Vec<MixtureComponent>,
    pub noise_sd: f64,
    pub separation: f64,
    /// Relative weights of the six extent intervals.
    pub interval_weights: Vec<f64>,
    /// Probability that a rater reports an adjacent interval.
    pub confusion: f64,
    pub n_raters: usize,
    pub seed: u64,
}

/// Separation giving Bayes instance AUC `auc` for single-component classes.
pub fn separation_for_auc(auc: f64, noise_sd: f64) -> Result<f64> {
    if !(0.5..1.0).contains(&auc) {
        return Err(Error::domain(format!("target AUC {auc} outside [0.5, 1)")));
    }
    let n = Normal::standard();
    Ok(noise_sd * 2f64.sqrt() * n.inverse_cdf(auc))
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            d: 10,
            n_bags: 600,
            instances_per_bag: 100,
            negative_components: Vec::new(),
            positive_components: Vec::new(),
            noise_sd: 1.0,
            // sqrt(2) * Phi^-1(0.95)
            separation: 2f64.sqrt() * 1.644_853_626_951_472_2,
            interval_weights: REFERENCE_PREVALENCE.to_vec(),
            confusion: 0.2,
            n_raters: 2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_bags == 0 || self.instances_per_bag == 0 {
            return Err(Error::config("d, n_bags and instances_per_bag must be positive"));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::config("separation must be finite and >= 0"));
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::config("noise_sd must be positive"));
        }
        if self.interval_weights.len() != 6
            || self.interval_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite()))
            || self.interval_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::config("interval_weights needs six non-negative weights with a positive sum"));
        }
        if !(0.0..=0.5).contains(&self.confusion) {
            return Err(Error::config("confusion must lie in [0, 0.5]"));
        }
        for comps in [&self.negative_components, &self.positive_components] {
            for c in comps {
                if c.mean.len() != self.d || !(c.weight > 0.0 && c.weight.is_finite()) {
                    return Err(Error::config(format!("mixture components need positive weight and {} means", self.d)));
                }
            }
        }
        Ok(())
    }

    /// Interval probabilities normalised to sum to 1.
    pub fn interval_distribution(&self) -> Vec<f64> {
        let s: f64 = self.interval_weights.iter().sum();
        self.interval_weights.iter().map(|w| w / s).collect()
    }

    fn components(&self, positive: bool) -> Vec<MixtureComponent> {
        let given = if positive { &self.positive_components } else { &self.negative_components };
        if given.is_empty() {
            vec![MixtureComponent {
                weight: 1.0,
                mean: vec![0.0; self.d],
            }]
        } else {
            given.clone()
        }
    }

    /// Log density ratio `log p(x | positive) - log p(x | negative)`, the
    /// Bayes-optimal instance score.
    pub fn log_likelihood_ratio(&self, x: &[f64]) -> f64 {
        let u = 1.0 / (self.d as f64).sqrt();
        let log_mix = |positive: bool| {
            let comps = self.components(positive);
            let total: f64 = comps.iter().map(|c| c.weight).sum();
            let shift = if positive { self.separation * u } else { 0.0 };
            let terms: Vec<f64> = comps
                .iter()
                .map(|c| {
                    let sq: f64 = x.iter().zip(&c.mean).map(|(v, m)| (v - m - shift).powi(2)).sum();
                    (c.weight / total).ln() - sq / (2.0 * self.noise_sd * self.noise_sd)
                })
                .collect();
            let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
        };
        log_mix(true) - log_mix(false)
    }

    /// Bayes instance AUC when both classes are single Gaussians.
    pub fn single_component_auc(&self) -> Option<f64> {
        if self.negative_components.len() > 1 || self.positive_components.len() > 1 {
            return None;
        }
        let neg = self.components(false).remove(0).mean;
        let pos = self.components(true).remove(0).mean;
        let u = self.separation / (self.d as f64).sqrt();
        let dist: f64 = pos.iter().zip(&neg).map(|(p, n)| (p + u - n).powi(2)).sum::<f64>().sqrt();
        Some(Normal::standard().cdf(dist / (self.noise_sd * 2f64.sqrt())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthBag {
    pub bag_id: String,
    pub instance_ids: Vec<String>,
    pub labels: Vec<bool>,
    pub extent: f64,
    pub interval: ExtentInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bags: Vec<TruthBag>,
}

impl GroundTruth {
    /// `bag_id,instance_id,label,bag_extent`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["bag_id", "instance_id", "label", "bag_extent"])?;
        for b in &self.bags {
            let extent = crate::bagcore::io::format_real(b.extent);
            for (id, &l) in b.instance_ids.iter().zip(&b.labels) {
                w.write_record([b.bag_id.as_str(), id.as_str(), if l { "1" } else { "0" }, extent.as_str()])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn extents(&self) -> Vec<(String, f64)> {
        self.bags.iter().map(|b| (b.bag_id.clone(), b.extent)).collect()
    }
}

fn sample_mixture(comps: &[MixtureComponent], rng: &mut impl Rng) -> usize {
    if comps.len() == 1 {
        return 0;
    }
    WeightedIndex::new(comps.iter().map(|c| c.weight)).expect("validated weights").sample(rng)
}

/// Round-half-up positive count for a drawn extent.
pub fn positive_count(extent: f64, n: usize) -> usize {
    ((extent * n as f64 + 0.5).floor() as usize).min(n)
}

pub fn generate_dataset(config: &SynthConfig) -> Result<(BagDataset, GroundTruth)> {
    config.validate()?;
    let intervals = WeightedIndex::new(config.interval_distribution()).map_err(|e| Error::config(e.to_string()))?;
    let neg = config.components(false);
    let pos = config.components(true);
    let u = 1.0 / (config.d as f64).sqrt();
    let n = config.instances_per_bag;
    let width = (config.n_bags - 1).to_string().len().max(4);
    let generated: Vec<(Bag, TruthBag)> = (0..config.n_bags)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(seed::derive(config.seed, &[i as u64]));
            let drawn = ExtentInterval::ALL[intervals.sample(&mut rng)];
            let (lo, hi) = drawn.bounds_percent();
            let target = rng.random_range(lo as f64..=hi as f64) / 100.0;
            let count = positive_count(target, n);
            let mut labels: Vec<bool> = (0..n).map(|j| j < count).collect();
            labels.shuffle(&mut rng);
            let bag_id = format!("b{i:0width$}");
            let instance_ids: Vec<String> = (0..n).map(|j| format!("i{j:03}")).collect();
            let instances = labels
                .iter()
                .zip(&instance_ids)
                .map(|(&l, id)| {
                    let comps = if l { &pos } else { &neg };
                    let c = &comps[sample_mixture(comps, &mut rng)];
                    let shift = if l { config.separation * u } else { 0.0 };
                    let x = c
                        .mean
                        .iter()
                        .map(|m| {
                            let e: f64 = StandardNormal.sample(&mut rng);
                            m + shift + config.noise_sd * e
                        })
                        .collect();
                    let mut inst = Instance::new(id.clone(), x);
                    inst.true_label = Some(l);
                    inst
                })
                .collect();
            let extent = count as f64 / n as f64;
            let mut bag = Bag::new(bag_id.clone(), instances)?;
            bag.set_extent(extent)?;
            let truth = TruthBag {
                bag_id,
                instance_ids,
                labels,
                extent,
                interval: ExtentInterval::from_extent(extent)?,
            };
            Ok((bag, truth))
        })
        .collect::<Result<_>>()?;
    let (bags, truth): (Vec<Bag>, Vec<TruthBag>) = generated.into_iter().unzip();
    Ok((BagDataset::new(bags)?, GroundTruth { bags: truth }))
}

/// Each rater reports the true interval, moved to a uniformly chosen
/// neighbour with probability `confusion` (clamped at the ends).
pub fn simulate_raters(truth: &GroundTruth, confusion: f64, n_raters: usize, seed: u64) -> Result<Vec<RaterAssessment>> {
    if !(0.0..=0.5).contains(&confusion) {
        return Err(Error::domain(format!("confusion {confusion} outside [0, 0.5]")));
    }
    let mut out = Vec::with_capacity(truth.bags.len() * n_raters);
    for (b, bag) in truth.bags.iter().enumerate() {
        for r in 0..n_raters {
            let mut rng = seed::rng(seed::derive(seed, &[r as u64, b as u64]));
            let true_idx = bag.interval.index() as i64;
            let idx = if rng.random_bool(confusion) {
                let step = if rng.random_bool(0.5) { 1 } else { -1 };
                (true_idx + step).clamp(0, 5)
            } else {
                true_idx
            };
            out.push(RaterAssessment {
                rater_id: format!("r{}", r + 1),
                bag_id: bag.bag_id.clone(),
                interval: ExtentInterval::ALL[idx as usize],
            });
        }
    }
    Ok(out)
}

/// Expected two-rater overall agreement under `simulate_raters` given the
/// true interval distribution.
pub fn expected_rater_agreement(interval_probs: &[f64], confusion: f64) -> f64 {
    let p = confusion;
    interval_probs
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let end = i == 0 || i + 1 == interval_probs.len();
            let a = if end {
                (1.0 - p / 2.0).powi(2) + (p / 2.0).powi(2)
            } else {
                (1.0 - p).powi(2) + 2.0 * (p / 2.0).powi(2)
            };
            w * a
        })
        .sum()
}

/// Settings for synthetic CT-like volumes: noisy parenchyma with
/// low-intensity spherical lesions filling a target fraction of the mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VolumePreset {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub background: f64,
    pub lesion: f64,
    pub noise_sd: f64,
    pub lesion_radius_mm: f64,
}

impl Default for VolumePreset {
    fn default() -> Self {
        VolumePreset {
            dims: [48, 48, 48],
            spacing_mm: [1.0, 1.0, 1.0],
            background: -850.0,
            lesion: -980.0,
            noise_sd: 25.0,
            lesion_radius_mm: 3.0,
        }
    }
}

/// A synthetic volume with a full mask; returns the lesion voxel fraction
/// actually reached.
pub fn generate_volume(preset: &VolumePreset, target_fraction: f64, seed: u64) -> Result<(Volume, Mask, f64)> {
    crate::bagcore::check_proportion(target_fraction, "lesion fraction")?;
    let [nx, ny, nz] = preset.dims;
    let total = nx * ny * nz;
    let mut rng = seed::rng(seed);
    let mut lesion = vec![false; total];
    let mut filled = 0usize;
    let r = preset.lesion_radius_mm;
    let s = preset.spacing_mm;
    let target = (target_fraction * total as f64).round() as usize;
    while filled < target {
        let c: Vec<f64> = (0..3).map(|a| rng.random_range(0.0..preset.dims[a] as f64 * s[a])).collect();
        let lo = |a: usize| ((c[a] - r) / s[a]).floor().max(0.0) as usize;
        let hi = |a: usize| (((c[a] + r) / s[a]).ceil() as usize).min(preset.dims[a] - 1);
        'outer: for z in lo(2)..=hi(2) {
            for y in lo(1)..=hi(1) {
                for x in lo(0)..=hi(0) {
                    let d2 = (x as f64 * s[0] - c[0]).powi(2) + (y as f64 * s[1] - c[1]).powi(2) + (z as f64 * s[2] - c[2]).powi(2);
                    let i = x + nx * (y + ny * z);
                    if d2 <= r * r && !lesion[i] {
                        lesion[i] = true;
                        filled += 1;
                        if filled >= target {
                            break 'outer;
                        }
                    }
                }
            }
        }
    }
    let data = lesion
        .iter()
        .map(|&l| {
            let e: f64 = StandardNormal.sample(&mut rng);
            (if l { preset.lesion } else { preset.background }) + preset.noise_sd * e
        })
        .collect();
    let volume = Volume::new(preset.dims, preset.spacing_mm, data)?;
    Ok((volume, Mask::full(preset.dims), filled as f64 / total as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bagcore::combine_raters;
    use crate::eval::{overall_agreement, RatingTable};

    fn small(n_bags: usize, separation: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            n_bags,
            separation,
            seed,
            ..SynthConfig::default()
        }
    }

    fn auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        let (mut rank_sum, mut npos) = (0.0, 0.0);
        for (r, &i) in idx.iter().enumerate() {
            if labels[i] {
                rank_sum += r as f64 + 1.0;
                npos += 1.0;
            }
        }
        let nneg = scores.len() as f64 - npos;
        (rank_sum - npos * (npos + 1.0) / 2.0) / (npos * nneg)
    }

    fn instance_scores(config: &SynthConfig, data: &BagDataset, truth: &GroundTruth) -> (Vec<f64>, Vec<bool>) {
        let mut s = Vec::new();
        let mut l = Vec::new();
        for (b, t) in data.bags().iter().zip(&truth.bags) {
            for (inst, &lab) in b.instances.iter().zip(&t.labels) {
                s.push(config.log_likelihood_ratio(&inst.features));
                l.push(lab);
            }
        }
        (s, l)
    }

    #[test]
    fn default_separation_targets_auc_095() {
        let c = SynthConfig::default();
        assert!((c.single_component_auc().unwrap() - 0.95).abs() < 1e-9);
        assert!((separation_for_auc(0.95, 1.0).unwrap() - c.separation).abs() < 1e-8);
    }

    #[test]
    fn truth_is_consistent_and_deterministic() {
        let c = small(50, 2.0, 3);
        let (data, truth) = generate_dataset(&c).unwrap();
        assert_eq!(data.len(), 50);
        for (b, t) in data.bags().iter().zip(&truth.bags) {
            let mean = t.labels.iter().filter(|&&l| l).count() as f64 / t.labels.len() as f64;
            assert_eq!(t.extent, mean);
            assert_eq!(b.extent, Some(mean));
            assert_eq!((t.extent * 100.0).round() / 100.0, t.extent);
            assert_eq!(b.len(), 100);
            assert_eq!(b.instances[0].features.len(), 10);
        }
        assert_eq!(generate_dataset(&c).unwrap(), (data, truth));
    }

    #[test]
    fn all_zero_interval_gives_negative_bags() {
        let c = SynthConfig {
            interval_weights: vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            ..small(40, 2.0, 1)
        };
        let (_, truth) = generate_dataset(&c).unwrap();
        assert!(truth.bags.iter().all(|b| b.extent == 0.0 && b.labels.iter().all(|&l| !l)));
    }

    #[test]
    fn zero_separation_is_indistinguishable() {
        let c = SynthConfig {
            interval_weights: vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0],
            ..small(200, 0.0, 2)
        };
        let (data, truth) = generate_dataset(&c).unwrap();
        let mut s = Vec::new();
        let mut l = Vec::new();
        for (b, t) in data.bags().iter().zip(&truth.bags) {
            for (inst, &lab) in b.instances.iter().zip(&t.labels) {
                s.push(inst.features.iter().sum::<f64>());
                l.push(lab);
            }
        }
        assert!(s.len() >= 10_000);
        assert!((auc(&s, &l) - 0.5).abs() < 0.05);
    }

    #[test]
    fn default_prevalences_follow_reference() {
        let c = small(1800, 2.0, 9);
        let (_, truth) = generate_dataset(&c).unwrap();
        let probs = c.interval_distribution();
        for (i, p) in probs.iter().enumerate() {
            let observed = truth.bags.iter().filter(|b| b.interval.index() == i).count() as f64 / 1800.0;
            // 2 percentage points is about 2 binomial SDs for the 0% interval
            assert!((observed - p).abs() < 0.02, "interval {i}: {observed} vs {p}");
        }
    }

    #[test]
    fn bayes_auc_increases_with_separation() {
        let mut prev = 0.5;
        for sep in [0.5, 1.5, 2.5] {
            let c = SynthConfig {
                interval_weights: vec![0.0, 0.0, 0.0, 1.0, 1.0, 0.0],
                ..small(60, sep, 4)
            };
            let (data, truth) = generate_dataset(&c).unwrap();
            let (s, l) = instance_scores(&c, &data, &truth);
            let a = auc(&s, &l);
            assert!(a > prev + 0.05, "separation {sep}: AUC {a} after {prev}");
            assert!((a - c.single_component_auc().unwrap()).abs() < 0.02);
            prev = a;
        }
    }

    #[test]
    fn mixture_components_use_likelihood_ratio() {
        let c = SynthConfig {
            d: 2,
            negative_components: vec![
                MixtureComponent { weight: 1.0, mean: vec![-3.0, 0.0] },
                MixtureComponent { weight: 1.0, mean: vec![3.0, 0.0] },
            ],
            interval_weights: vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            ..small(60, 2.0, 5)
        };
        assert!(c.single_component_auc().is_none());
        let (data, truth) = generate_dataset(&c).unwrap();
        let (s, l) = instance_scores(&c, &data, &truth);
        assert!(auc(&s, &l) > 0.7);
    }

    #[test]
    fn raters_follow_confusion() {
        let (_, truth) = generate_dataset(&small(300, 2.0, 6)).unwrap();
        let exact = simulate_raters(&truth, 0.0, 2, 1).unwrap();
        for pair in exact.chunks(2) {
            assert_eq!(pair[0].interval, pair[1].interval);
            let t = truth.bags.iter().find(|b| b.bag_id == pair[0].bag_id).unwrap();
            assert_eq!(pair[0].interval, t.interval);
            let mid = combine_raters(&[pair[0].interval, pair[1].interval]).unwrap();
            assert_eq!(mid, t.interval.midpoint_percent() / 100.0);
        }
        assert!(simulate_raters(&truth, 0.6, 2, 1).is_err());
    }

    #[test]
    fn noisy_rater_agreement_matches_closed_form() {
        let c = SynthConfig {
            interval_weights: vec![1.0; 6],
            instances_per_bag: 100,
            ..small(4000, 2.0, 7)
        };
        let (_, truth) = generate_dataset(&c).unwrap();
        let ratings = simulate_raters(&truth, 0.5, 2, 8).unwrap();
        let cases: Vec<Vec<usize>> = ratings.chunks(2).map(|p| vec![p[0].interval.index(), p[1].interval.index()]).collect();
        let observed = overall_agreement(&RatingTable::new(6, cases).unwrap()).unwrap();
        let mut probs = [0.0; 6];
        for b in &truth.bags {
            probs[b.interval.index()] += 1.0 / truth.bags.len() as f64;
        }
        let expected = expected_rater_agreement(&probs, 0.5);
        assert!(observed < 1.0 && observed > 1.0 / 6.0);
        // binomial SD at n = 4000 is below 0.008
        assert!((observed - expected).abs() < 0.025, "{observed} vs {expected}");
    }

    #[test]
    fn truth_csv_layout() {
        let (_, truth) = generate_dataset(&small(2, 2.0, 1)).unwrap();
        let mut buf = Vec::new();
        truth.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("bag_id,instance_id,label,bag_extent"));
        assert_eq!(text.lines().count(), 201);
    }

    #[test]
    fn volume_preset_hits_target_fraction() {
        let preset = VolumePreset {
            dims: [24, 24, 24],
            ..VolumePreset::default()
        };
        let (v, m, f) = generate_volume(&preset, 0.2, 1).unwrap();
        assert!((f - 0.2).abs() < 1e-3);
        assert_eq!(v.dims(), m.dims());
        let (_, _, zero) = generate_volume(&preset, 0.0, 1).unwrap();
        assert_eq!(zero, 0.0);
        assert_eq!(generate_volume(&preset, 0.2, 1).unwrap().0, v);
    }
}
