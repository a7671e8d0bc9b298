use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gaussian::{derivatives, Derivatives};
use super::volume::Volume;
use crate::{Error, Result};

pub const FILTER_NAMES: [&str; 8] = [
    "blur",
    "gradient_magnitude",
    "hessian_eigenvalue_1",
    "hessian_eigenvalue_2",
    "hessian_eigenvalue_3",
    "laplacian",
    "gaussian_curvature",
    "hessian_frobenius",
];

pub const FILTERS_PER_SCALE: usize = FILTER_NAMES.len();

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBankConfig {
    /// Gaussian scales in mm.
    pub scales: Vec<f64>,
    /// Histogram bins per channel.
    pub bins: usize,
}

impl Default for FilterBankConfig {
    fn default() -> Self {
        FilterBankConfig {
            scales: vec![1.0, 2.0, 4.0],
            bins: 16,
        }
    }
}

impl FilterBankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::config(format!("scales must be positive, got {:?}", self.scales)));
        }
        if self.bins < 2 {
            return Err(Error::config(format!("need at least 2 bins, got {}", self.bins)));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.scales.len() * FILTERS_PER_SCALE
    }

    /// `"<filter>@<scale>mm"` for every channel, in output order.
    pub fn channel_names(&self) -> Vec<String> {
        self.scales
            .iter()
            .flat_map(|s| FILTER_NAMES.iter().map(move |f| format!("{f}@{s}mm")))
            .collect()
    }
}

/// Eigenvalues of a symmetric 3x3 matrix, largest first.
pub fn symmetric_eigenvalues(a11: f64, a22: f64, a33: f64, a12: f64, a13: f64, a23: f64) -> [f64; 3] {
    let p1 = a12 * a12 + a13 * a13 + a23 * a23;
    let q = (a11 + a22 + a33) / 3.0;
    let (b11, b22, b33) = (a11 - q, a22 - q, a33 - q);
    let p2 = b11 * b11 + b22 * b22 + b33 * b33 + 2.0 * p1;
    if p2 == 0.0 {
        return [q; 3];
    }
    let p = (p2 / 6.0).sqrt();
    // det(B / p) / 2
    let det = b11 * (b22 * b33 - a23 * a23) - a12 * (a12 * b33 - a23 * a13) + a13 * (a12 * a23 - b22 * a13);
    let r = (det / (2.0 * p * p * p)).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let l1 = q + 2.0 * p * phi.cos();
    let l3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let l2 = 3.0 * q - l1 - l3;
    let mut out = [l1, l2, l3];
    out.sort_by(|a, b| b.total_cmp(a));
    out
}

const GRAD_EPS: f64 = 1e-8;

fn responses_at_scale(d: &Derivatives) -> [Vec<f64>; FILTERS_PER_SCALE] {
    let n = d.f.len();
    let mut out: [Vec<f64>; FILTERS_PER_SCALE] = Default::default();
    for o in out.iter_mut() {
        *o = vec![0.0; n];
    }
    let [blur, grad, e1, e2, e3, log, curv, frob] = &mut out;
    blur.copy_from_slice(&d.f);
    for i in 0..n {
        let (fx, fy, fz) = (d.fx[i], d.fy[i], d.fz[i]);
        let (hxx, hyy, hzz) = (d.fxx[i], d.fyy[i], d.fzz[i]);
        let (hxy, hxz, hyz) = (d.fxy[i], d.fxz[i], d.fyz[i]);
        let g2 = fx * fx + fy * fy + fz * fz;
        let g = g2.sqrt();
        grad[i] = g;
        let ev = symmetric_eigenvalues(hxx, hyy, hzz, hxy, hxz, hyz);
        e1[i] = ev[0];
        e2[i] = ev[1];
        e3[i] = ev[2];
        log[i] = hxx + hyy + hzz;
        frob[i] = (hxx * hxx + hyy * hyy + hzz * hzz + 2.0 * (hxy * hxy + hxz * hxz + hyz * hyz)).sqrt();
        curv[i] = if g < GRAD_EPS {
            0.0
        } else {
            let a11 = hyy * hzz - hyz * hyz;
            let a22 = hxx * hzz - hxz * hxz;
            let a33 = hxx * hyy - hxy * hxy;
            let a12 = hxz * hyz - hxy * hzz;
            let a13 = hxy * hyz - hxz * hyy;
            let a23 = hxy * hxz - hxx * hyz;
            let num = fx * fx * a11
                + fy * fy * a22
                + fz * fz * a33
                + 2.0 * (fx * fy * a12 + fx * fz * a13 + fy * fz * a23);
            num / (g2 * g2)
        };
    }
    out
}

/// Eight responses per scale: blur, gradient magnitude, Hessian eigenvalues
/// (descending), Laplacian, Gaussian curvature of the isophote surface and
/// Frobenius norm of the Hessian. Channel `s * 8 + f` is filter `f` at
/// scale `s`.
pub fn filter_bank(volume: &Volume, config: &FilterBankConfig) -> Result<Vec<Volume>> {
    config.validate()?;
    let per_scale: Vec<Result<[Vec<f64>; FILTERS_PER_SCALE]>> = config
        .scales
        .par_iter()
        .map(|&s| Ok(responses_at_scale(&derivatives(volume, s)?)))
        .collect();
    let mut out = Vec::with_capacity(config.channels());
    for r in per_scale {
        for data in r? {
            out.push(volume.with_data(data));
        }
    }
    Ok(out)
}
