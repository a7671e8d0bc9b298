//! Separable Gaussian and Gaussian-derivative filtering.
//!
//! Kernels are sampled on `[-ceil(4 sigma), ceil(4 sigma)]` as a Gaussian
//! times a low-degree polynomial whose coefficients are chosen so the kernel
//! moments up to order four equal those of the untruncated continuous filter.
//! Polynomials of degree four (five for odd orders) are therefore filtered
//! exactly away from the border, and truncation error elsewhere is small.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::volume::Volume;
use crate::{Error, Result};

pub(crate) fn kernel(sigma: f64, order: usize) -> Vec<f64> {
    let radius = ((4.0 * sigma).ceil() as i64).max(1);
    let ks: Vec<f64> = (-radius..=radius).map(|k| k as f64).collect();
    let g: Vec<f64> = ks.iter().map(|k| (-k * k / (2.0 * sigma * sigma)).exp()).collect();
    let s2 = sigma * sigma;
    // (power, target moment sum_k k^power h[k])
    let targets: &[(i32, f64)] = match order {
        0 => &[(0, 1.0), (2, s2), (4, 3.0 * s2 * s2)],
        1 => &[(1, -1.0), (3, -3.0 * s2)],
        2 => &[(0, 0.0), (2, 2.0), (4, 12.0 * s2)],
        _ => unreachable!("derivative order above 2"),
    };
    // Basis g(k) (k/sigma)^p with the same powers as the constraints. Below
    // one voxel the outer taps carry almost no Gaussian weight and the
    // highest moment is dropped.
    let n = if sigma < 1.0 { targets.len() - 1 } else { targets.len() };
    let targets = &targets[..n];
    let basis = |p: i32, k: f64, gk: f64| gk * (k / sigma).powi(p);
    let a = DMatrix::from_fn(n, n, |i, j| {
        ks.iter()
            .zip(&g)
            .map(|(&k, &gk)| k.powi(targets[i].0) * basis(targets[j].0, k, gk))
            .sum()
    });
    let b = DVector::from_iterator(n, targets.iter().map(|t| t.1));
    let c = a.lu().solve(&b).expect("moment system is nonsingular");
    ks.iter()
        .zip(&g)
        .map(|(&k, &gk)| (0..n).map(|j| c[j] * basis(targets[j].0, k, gk)).sum())
        .collect()
}

#[inline]
fn clamp_index(i: i64, n: usize) -> usize {
    i.clamp(0, n as i64 - 1) as usize
}

/// `out[i] = sum_k h[k] in[i - k]` along one axis with edge replication.
fn convolve_axis(data: &[f64], dims: [usize; 3], axis: usize, h: &[f64]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let r = (h.len() / 2) as i64;
    let mut out = vec![0.0; data.len()];
    match axis {
        0 => {
            out.par_chunks_mut(nx).zip(data.par_chunks(nx)).for_each(|(o, row)| {
                for (i, oi) in o.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (t, &hk) in h.iter().enumerate() {
                        let k = t as i64 - r;
                        acc += hk * row[clamp_index(i as i64 - k, nx)];
                    }
                    *oi = acc;
                }
            });
        }
        1 => {
            let slice = nx * ny;
            out.par_chunks_mut(slice).zip(data.par_chunks(slice)).for_each(|(o, s)| {
                for y in 0..ny {
                    let dst = &mut o[y * nx..(y + 1) * nx];
                    for (t, &hk) in h.iter().enumerate() {
                        let src = clamp_index(y as i64 - (t as i64 - r), ny);
                        for (d, v) in dst.iter_mut().zip(&s[src * nx..(src + 1) * nx]) {
                            *d += hk * v;
                        }
                    }
                }
            });
        }
        _ => {
            let slice = nx * ny;
            out.par_chunks_mut(slice).enumerate().for_each(|(z, o)| {
                for (t, &hk) in h.iter().enumerate() {
                    let src = clamp_index(z as i64 - (t as i64 - r), nz);
                    for (d, v) in o.iter_mut().zip(&data[src * slice..(src + 1) * slice]) {
                        *d += hk * v;
                    }
                }
            });
        }
    }
    out
}

fn check_scale(scale_mm: f64) -> Result<()> {
    if !(scale_mm > 0.0 && scale_mm.is_finite()) {
        return Err(Error::domain(format!("scale must be positive, got {scale_mm}")));
    }
    Ok(())
}

/// Gaussian derivative of the given per-axis order (total order at most 2)
/// at physical scale `scale_mm`, in units of intensity per mm^order.
pub fn gaussian_derivative(volume: &Volume, scale_mm: f64, order: [usize; 3]) -> Result<Volume> {
    check_scale(scale_mm)?;
    if order.iter().sum::<usize>() > 2 {
        return Err(Error::domain("derivative order above 2 is not supported"));
    }
    let dims = volume.dims();
    let spacing = volume.spacing();
    let mut data = volume.data().to_vec();
    let mut norm = 1.0;
    for axis in [2, 1, 0] {
        let h = kernel(scale_mm / spacing[axis], order[axis]);
        data = convolve_axis(&data, dims, axis, &h);
        norm *= spacing[axis].powi(order[axis] as i32);
    }
    if norm != 1.0 {
        data.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(volume.with_data(data))
}

/// All derivatives up to second order at one scale.
pub struct Derivatives {
    pub f: Vec<f64>,
    pub fx: Vec<f64>,
    pub fy: Vec<f64>,
    pub fz: Vec<f64>,
    pub fxx: Vec<f64>,
    pub fyy: Vec<f64>,
    pub fzz: Vec<f64>,
    pub fxy: Vec<f64>,
    pub fxz: Vec<f64>,
    pub fyz: Vec<f64>,
}

/// Computes the ten derivative volumes, sharing the z and y passes.
pub fn derivatives(volume: &Volume, scale_mm: f64) -> Result<Derivatives> {
    check_scale(scale_mm)?;
    let dims = volume.dims();
    let sp = volume.spacing();
    let k = |axis: usize, order: usize| kernel(scale_mm / sp[axis], order);
    let kx = [k(0, 0), k(0, 1), k(0, 2)];
    let ky = [k(1, 0), k(1, 1), k(1, 2)];
    let kz = [k(2, 0), k(2, 1), k(2, 2)];
    let z: Vec<Vec<f64>> = kz.iter().map(|h| convolve_axis(volume.data(), dims, 2, h)).collect();
    let yz = |oy: usize, oz: usize| convolve_axis(&z[oz], dims, 1, &ky[oy]);
    let (y0z0, y1z0, y2z0) = (yz(0, 0), yz(1, 0), yz(2, 0));
    let (y0z1, y1z1, y0z2) = (yz(0, 1), yz(1, 1), yz(0, 2));
    let x = |src: &[f64], ox: usize, scale: f64| {
        let mut v = convolve_axis(src, dims, 0, &kx[ox]);
        if scale != 1.0 {
            v.iter_mut().for_each(|e| *e /= scale);
        }
        v
    };
    let [sx, sy, sz] = sp;
    Ok(Derivatives {
        f: x(&y0z0, 0, 1.0),
        fx: x(&y0z0, 1, sx),
        fxx: x(&y0z0, 2, sx * sx),
        fy: x(&y1z0, 0, sy),
        fxy: x(&y1z0, 1, sx * sy),
        fyy: x(&y2z0, 0, sy * sy),
        fz: x(&y0z1, 0, sz),
        fxz: x(&y0z1, 1, sx * sz),
        fyz: x(&y1z1, 0, sy * sz),
        fzz: x(&y0z2, 0, sz * sz),
    })
}
