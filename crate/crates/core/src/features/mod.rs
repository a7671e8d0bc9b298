//! Patch features from 3-D volumes: a multi-scale Gaussian-derivative filter
//! bank summarized by quantile-equalized histograms inside random patches.

mod bank;
mod gaussian;
mod histogram;
mod patches;
mod volume;

pub use bank::{filter_bank, symmetric_eigenvalues, FilterBankConfig, FILTERS_PER_SCALE, FILTER_NAMES};
pub use gaussian::{derivatives, gaussian_derivative, Derivatives};
pub use histogram::{bin_index, fit_quantile_edges, histogram, quantile_sorted, QuantileEdges};
pub use patches::{patch_voxels, sample_patches, Patch};
pub use volume::{read_mask, read_volume, write_mask, write_volume, Mask, Volume};

use crate::{Error, Result};

fn patch_values(patch: &Patch, response: &Volume, out: &mut Vec<f64>) {
    out.clear();
    let [(x0, x1), (y0, y1), (z0, z1)] = patch.bounds();
    for z in z0..z1 {
        for y in y0..y1 {
            let start = response.index(x0, y, z);
            out.extend_from_slice(&response.data()[start..start + (x1 - x0)]);
        }
    }
}

/// Concatenated per-channel histograms of the responses inside `patch`;
/// length `channels * bins`.
pub fn extract_features(patch: &Patch, responses: &[Volume], edges: &QuantileEdges) -> Result<Vec<f64>> {
    if responses.len() != edges.edges.len() {
        return Err(Error::domain(format!(
            "{} response channels but edges for {}",
            responses.len(),
            edges.edges.len()
        )));
    }
    let mut out = Vec::with_capacity(responses.len() * edges.bins);
    let mut buf = Vec::new();
    for (r, e) in responses.iter().zip(&edges.edges) {
        for (a, (_, hi)) in patch.bounds().iter().enumerate() {
            if *hi > r.dims()[a] {
                return Err(Error::domain("patch extends past the volume"));
            }
        }
        patch_values(patch, r, &mut buf);
        out.extend(histogram(&buf, e));
    }
    Ok(out)
}

/// Response values of every voxel of every patch, pooled per channel.
pub fn pooled_samples(patches: &[Patch], responses: &[Volume]) -> Vec<Vec<f64>> {
    let mut buf = Vec::new();
    responses
        .iter()
        .map(|r| {
            let mut all = Vec::new();
            for p in patches {
                patch_values(p, r, &mut buf);
                all.extend_from_slice(&buf);
            }
            all
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractConfig {
    pub patches: usize,
    pub side_mm: f64,
    pub bank: FilterBankConfig,
    pub seed: u64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            patches: 100,
            side_mm: 11.0,
            bank: FilterBankConfig::default(),
            seed: 0,
        }
    }
}

/// Features for one bag (one masked region). When `edges` is `None` they
/// are fitted on the voxels of the sampled patches and returned.
pub fn extract_bag(
    volume: &Volume,
    mask: &Mask,
    config: &ExtractConfig,
    edges: Option<&QuantileEdges>,
) -> Result<(Vec<Vec<f64>>, QuantileEdges)> {
    config.bank.validate()?;
    if mask.dims() != volume.dims() {
        return Err(Error::data(format!(
            "mask dims {:?} differ from volume dims {:?}",
            mask.dims(),
            volume.dims()
        )));
    }
    let responses = filter_bank(volume, &config.bank)?;
    let patches = sample_patches(mask, volume.spacing(), config.patches, config.side_mm, config.seed)?;
    let edges = match edges {
        Some(e) => {
            if e.edges.len() != responses.len() || e.bins != config.bank.bins {
                return Err(Error::config(format!(
                    "edges describe {} channels x {} bins, configuration needs {} x {}",
                    e.edges.len(),
                    e.bins,
                    responses.len(),
                    config.bank.bins
                )));
            }
            e.clone()
        }
        None => fit_quantile_edges(&pooled_samples(&patches, &responses), config.bank.bins)?,
    };
    let features = patches
        .iter()
        .map(|p| extract_features(p, &responses, &edges))
        .collect::<Result<Vec<_>>>()?;
    Ok((features, edges))
}
