use rand::Rng;
use serde::{Deserialize, Serialize};

use super::volume::Mask;
use crate::{seed, Error, Result};

/// Axis-aligned cube of voxels centred on `center`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub center: [usize; 3],
    /// Voxels on each side of the centre, per axis.
    pub half_width: [usize; 3],
}

impl Patch {
    /// Voxel index ranges `[lo, hi)` per axis.
    pub fn bounds(&self) -> [(usize, usize); 3] {
        let mut b = [(0, 0); 3];
        for a in 0..3 {
            b[a] = (self.center[a] - self.half_width[a], self.center[a] + self.half_width[a] + 1);
        }
        b
    }
}

/// Voxel count per axis for a cube with physical edge `side_mm`, rounded to
/// the nearest odd number (at least 1).
pub fn patch_voxels(side_mm: f64, spacing: [f64; 3]) -> [usize; 3] {
    let mut out = [1; 3];
    for a in 0..3 {
        let v = side_mm / spacing[a];
        let k = ((v - 1.0) / 2.0).round().max(0.0) as usize;
        out[a] = 2 * k + 1;
    }
    out
}

/// Erodes the mask by a box so that a voxel survives only if the whole
/// cube around it is inside the volume and inside the mask.
fn admissible(mask: &Mask, half: [usize; 3]) -> Vec<bool> {
    let dims = mask.dims();
    let mut cur = mask.data().to_vec();
    let strides = [1, dims[0], dims[0] * dims[1]];
    for a in 0..3 {
        let h = half[a] as i64;
        if h == 0 {
            continue;
        }
        let n = dims[a] as i64;
        let mut next = vec![false; cur.len()];
        for (idx, out) in next.iter_mut().enumerate() {
            let pos = ((idx / strides[a]) % dims[a]) as i64;
            if pos - h < 0 || pos + h >= n {
                continue;
            }
            let base = idx as i64 - pos * strides[a] as i64;
            *out = (pos - h..=pos + h).all(|p| cur[(base + p * strides[a] as i64) as usize]);
        }
        cur = next;
    }
    cur
}

/// Draws `n` patch centres uniformly (with replacement) from the admissible
/// voxels.
pub fn sample_patches(mask: &Mask, spacing: [f64; 3], n: usize, side_mm: f64, seed: u64) -> Result<Vec<Patch>> {
    if n == 0 {
        return Err(Error::domain("need at least one patch"));
    }
    if !(side_mm > 0.0 && side_mm.is_finite()) {
        return Err(Error::domain(format!("patch side must be positive, got {side_mm}")));
    }
    let size = patch_voxels(side_mm, spacing);
    let half = [size[0] / 2, size[1] / 2, size[2] / 2];
    let ok = admissible(mask, half);
    let centers: Vec<usize> = ok.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
    if centers.is_empty() {
        return Err(Error::domain(format!(
            "no voxel admits a {}x{}x{} patch inside the mask",
            size[0], size[1], size[2]
        )));
    }
    let dims = mask.dims();
    let mut rng = seed::rng(seed::derive_str(seed, "patches"));
    Ok((0..n)
        .map(|_| {
            let idx = centers[rng.random_range(0..centers.len())];
            Patch {
                center: [idx % dims[0], (idx / dims[0]) % dims[1], idx / (dims[0] * dims[1])],
                half_width: half,
            }
        })
        .collect())
}
