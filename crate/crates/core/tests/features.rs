use bagwise::features::*;
use rand::Rng;

const DIMS: [usize; 3] = [36, 36, 36];

fn interior(scale: f64, spacing: f64) -> std::ops::Range<usize> {
    let r = (4.0 * scale / spacing).ceil() as usize;
    r..DIMS[0] - r
}

fn each_interior(scale: f64, mut f: impl FnMut(usize, usize, usize)) {
    let range = interior(scale, 1.0);
    for z in range.clone() {
        for y in range.clone() {
            for x in range.clone() {
                f(x, y, z);
            }
        }
    }
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(1.0)
}

#[test]
fn constant_volume_has_only_blur() {
    let v = Volume::from_fn(DIMS, [1.0; 3], |_, _, _| 2.5).unwrap();
    let r = filter_bank(&v, &FilterBankConfig::default()).unwrap();
    assert_eq!(r.len(), 24);
    for (c, vol) in r.iter().enumerate() {
        let want = if c % 8 == 0 { 2.5 } else { 0.0 };
        assert!(vol.data().iter().all(|x| (x - want).abs() < 1e-9), "channel {c}");
    }
}

#[test]
fn linear_and_quadratic_derivatives() {
    let lin = Volume::from_fn(DIMS, [1.0; 3], |x, _, _| x).unwrap();
    let quad = Volume::from_fn(DIMS, [1.0; 3], |x, _, _| x * x).unwrap();
    for scale in [1.0, 2.0, 4.0] {
        let d1 = gaussian_derivative(&lin, scale, [1, 0, 0]).unwrap();
        let d2 = gaussian_derivative(&quad, scale, [2, 0, 0]).unwrap();
        each_interior(scale, |x, y, z| {
            assert!(close(d1.get(x, y, z), 1.0, 1e-3));
            assert!(close(d2.get(x, y, z), 2.0, 1e-3));
        });
    }
    // anisotropic spacing: derivatives are per mm
    let aniso = Volume::from_fn(DIMS, [0.78, 0.78, 1.0], |x, y, z| x * x + 3.0 * y - z).unwrap();
    let dxx = gaussian_derivative(&aniso, 1.0, [2, 0, 0]).unwrap();
    let dy = gaussian_derivative(&aniso, 1.0, [0, 1, 0]).unwrap();
    let dz = gaussian_derivative(&aniso, 1.0, [0, 0, 1]).unwrap();
    for z in 6..30 {
        for y in 6..30 {
            for x in 6..30 {
                assert!(close(dxx.get(x, y, z), 2.0, 1e-3));
                assert!(close(dy.get(x, y, z), 3.0, 1e-3));
                assert!(close(dz.get(x, y, z), -1.0, 1e-3));
            }
        }
    }
}

#[test]
fn paraboloid_hessian() {
    let v = Volume::from_fn(DIMS, [1.0; 3], |x, y, z| x * x + y * y + z * z).unwrap();
    let r = filter_bank(&v, &FilterBankConfig::default()).unwrap();
    for (s, scale) in [1.0, 2.0, 4.0].iter().enumerate() {
        each_interior(*scale, |x, y, z| {
            let at = |f: usize| r[s * 8 + f].get(x, y, z);
            for f in 2..5 {
                assert!(close(at(f), 2.0, 1e-3));
            }
            assert!(close(at(5), 6.0, 1e-3));
            assert!(close(at(7), 2.0 * 3f64.sqrt(), 1e-3));
        });
    }
}

#[test]
fn gaussian_blob_laplacian_at_centre() {
    // f = exp(-r^2 / 2 s^2); smoothing at sigma gives LoG(0) = -3 s^3 / (s^2 + sigma^2)^(5/2)
    // wide enough to be smooth across the 4-sigma kernel window
    let s: f64 = 6.0;
    let c = 17.0;
    let v = Volume::from_fn(DIMS, [1.0; 3], |x, y, z| {
        let r2 = (x - c).powi(2) + (y - c).powi(2) + (z - c).powi(2);
        (-r2 / (2.0 * s * s)).exp()
    })
    .unwrap();
    for sigma in [1.0f64, 2.0] {
        let cfg = FilterBankConfig {
            scales: vec![sigma],
            bins: 16,
        };
        let r = filter_bank(&v, &cfg).unwrap();
        let got = r[5].get(17, 17, 17);
        let want = -3.0 * s.powi(3) / (s * s + sigma * sigma).powf(2.5);
        assert!((got - want).abs() <= 1e-3 * want.abs(), "sigma {sigma}: {got} vs {want}");
    }
}

fn noise_volume(seed: u64) -> Volume {
    let mut rng = bagwise::seed::rng(seed);
    let data: Vec<f64> = (0..DIMS.iter().product::<usize>()).map(|_| rng.random::<f64>()).collect();
    Volume::new(DIMS, [1.0; 3], data).unwrap()
}

#[test]
fn eigenvalue_identities() {
    let v = noise_volume(1);
    let r = filter_bank(&v, &FilterBankConfig::default()).unwrap();
    for s in 0..3 {
        for i in 0..v.len() {
            let l: Vec<f64> = (2..5).map(|f| r[s * 8 + f].data()[i]).collect();
            assert!(l[0] >= l[1] && l[1] >= l[2]);
            let log = r[s * 8 + 5].data()[i];
            let frob = r[s * 8 + 7].data()[i];
            let sum: f64 = l.iter().sum();
            let scale = l.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
            assert!((log - sum).abs() <= 1e-12 * scale);
            let sq: f64 = l.iter().map(|v| v * v).sum();
            assert!((frob * frob - sq).abs() <= 1e-9 * sq.max(1e-300));
        }
    }
}

#[test]
fn rotation_invariance() {
    let v = noise_volume(2);
    let n = DIMS[0];
    // 90 degrees about z: (x, y) -> (n - 1 - y, x)
    let rot = Volume::from_fn(DIMS, [1.0; 3], |x, y, z| {
        let (x, y, z) = (x as usize, y as usize, z as usize);
        v.get(y, n - 1 - x, z)
    })
    .unwrap();
    let cfg = FilterBankConfig {
        scales: vec![1.0, 2.0],
        bins: 16,
    };
    let a = filter_bank(&v, &cfg).unwrap();
    let b = filter_bank(&rot, &cfg).unwrap();
    for (s, scale) in [1.0, 2.0].iter().enumerate() {
        for f in [1, 7] {
            each_interior(*scale, |x, y, z| {
                let orig = a[s * 8 + f].get(y, n - 1 - x, z);
                let turned = b[s * 8 + f].get(x, y, z);
                assert!((orig - turned).abs() <= 1e-3 * orig.abs().max(1e-12));
            });
        }
    }
}

#[test]
fn training_pool_histograms_are_flat() {
    let v = noise_volume(3);
    let mask = Mask::full(DIMS);
    let cfg = ExtractConfig {
        patches: 40,
        side_mm: 5.0,
        ..Default::default()
    };
    let (_, edges) = extract_bag(&v, &mask, &cfg, None).unwrap();
    let responses = filter_bank(&v, &cfg.bank).unwrap();
    let patches = sample_patches(&mask, [1.0; 3], 40, 5.0, cfg.seed).unwrap();
    let pool = pooled_samples(&patches, &responses);
    for (samples, e) in pool.iter().zip(&edges.edges) {
        let h = histogram(samples, e);
        let per_bin = samples.len() as f64 / edges.bins as f64;
        for p in h {
            assert!((p * edges.bins as f64 - 1.0).abs() <= 2.0 / per_bin.sqrt());
        }
    }
}

#[test]
fn extraction_shape_and_determinism() {
    let v = noise_volume(4);
    let mut mask_data = vec![false; v.len()];
    for z in 4..30 {
        for y in 4..30 {
            for x in 4..30 {
                mask_data[v.index(x, y, z)] = true;
            }
        }
    }
    let mask = Mask::new(DIMS, mask_data).unwrap();
    let cfg = ExtractConfig {
        patches: 100,
        side_mm: 11.0,
        seed: 9,
        ..Default::default()
    };
    let (f1, e1) = extract_bag(&v, &mask, &cfg, None).unwrap();
    let (f2, _) = extract_bag(&v, &mask, &cfg, Some(&e1)).unwrap();
    assert_eq!(f1, f2);
    assert_eq!(f1.len(), 100);
    assert!(f1.iter().all(|f| f.len() == 384));
    for f in &f1 {
        for ch in f.chunks(16) {
            assert!((ch.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
    let below = Patch {
        center: [10, 10, 10],
        half_width: [1, 1, 1],
    };
    let high = QuantileEdges {
        bins: 16,
        edges: vec![vec![1e9; 15]; 24],
    };
    let responses = filter_bank(&v, &cfg.bank).unwrap();
    let feats = extract_features(&below, &responses, &high).unwrap();
    for ch in feats.chunks(16) {
        assert_eq!(ch[0], 1.0);
        assert!(ch[1..].iter().all(|&x| x == 0.0));
    }
}
