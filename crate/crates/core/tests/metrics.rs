//! Image metrics and remapping against direct reference computations.

mod common;

use fisheye_convert::eval::{psnr, psnr_masked, remap, ssim, ssim_masked, Raster, SSIM_WINDOW};
use fisheye_convert::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(w: usize, h: usize, ch: usize, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Raster::new(w, h, ch, (0..w * h * ch).map(|_| rng.gen()).collect()).unwrap()
}

/// Adds bounded noise to `r`.
fn degrade(r: &Raster, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = r
        .data()
        .iter()
        .map(|&v| (v as i32 + rng.gen_range(-20..=20)).clamp(0, 255) as u8)
        .collect();
    Raster::new(r.width(), r.height(), r.channels(), data).unwrap()
}

fn reference_psnr(a: &Raster, b: &Raster) -> f64 {
    let n = a.data().len() as f64;
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        / n;
    10.0 * (255.0f64.powi(2) / mse).log10()
}

fn reference_luma(r: &Raster, x: usize, y: usize) -> f64 {
    if r.channels() == 1 {
        r.get(x, y, 0) as f64
    } else {
        0.299 * r.get(x, y, 0) as f64 + 0.587 * r.get(x, y, 1) as f64 + 0.114 * r.get(x, y, 2) as f64
    }
}

fn reference_ssim(a: &Raster, b: &Raster, mask: Option<&[bool]>) -> f64 {
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let n = SSIM_WINDOW;
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=a.height() - n {
        for x0 in 0..=a.width() - n {
            let mut pa = Vec::new();
            let mut pb = Vec::new();
            let mut inside = true;
            for y in y0..y0 + n {
                for x in x0..x0 + n {
                    inside &= mask.is_none_or(|m| m[y * a.width() + x]);
                    pa.push(reference_luma(a, x, y));
                    pb.push(reference_luma(b, x, y));
                }
            }
            if !inside {
                continue;
            }
            let k = pa.len() as f64;
            let ma = pa.iter().sum::<f64>() / k;
            let mb = pb.iter().sum::<f64>() / k;
            let va = pa.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / k;
            let vb = pb.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / k;
            let cov = pa.iter().zip(&pb).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / k;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn psnr_matches_reference() {
    for ch in [1, 3] {
        let a = noise(40, 30, ch, 1);
        let b = degrade(&a, 2);
        assert!((psnr(&a, &b).unwrap() - reference_psnr(&a, &b)).abs() < 1e-9);
    }
}

#[test]
fn ssim_matches_reference() {
    for ch in [1, 3] {
        let a = noise(40, 30, ch, 3);
        let b = degrade(&a, 4);
        assert!((ssim(&a, &b).unwrap() - reference_ssim(&a, &b, None)).abs() < 1e-9);
    }
}

#[test]
fn masked_ssim_matches_reference() {
    let a = noise(40, 30, 1, 5);
    let b = degrade(&a, 6);
    let mask: Vec<bool> = (0..40 * 30).map(|i| (i % 40) < 25 || (i / 40) > 20).collect();
    let got = ssim_masked(&a, &b, Some(&mask)).unwrap();
    assert!((got - reference_ssim(&a, &b, Some(&mask))).abs() < 1e-9);
}

#[test]
fn identical_images() {
    let a = noise(32, 32, 3, 7);
    assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn opposite_extremes() {
    let black = Raster::filled(20, 20, 3, 0).unwrap();
    let white = Raster::filled(20, 20, 3, 255).unwrap();
    assert_eq!(psnr(&black, &white).unwrap(), 0.0);
    assert!(ssim(&black, &white).unwrap() < 1e-3);
}

#[test]
fn metrics_are_symmetric() {
    let a = noise(24, 24, 3, 8);
    let b = degrade(&a, 9);
    assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
}

#[test]
fn psnr_ignores_channel_order() {
    let swap = |r: &Raster| {
        let data = r.data().chunks_exact(3).flat_map(|p| [p[2], p[0], p[1]]).collect();
        Raster::new(r.width(), r.height(), 3, data).unwrap()
    };
    let a = noise(24, 24, 3, 10);
    let b = degrade(&a, 11);
    assert!((psnr(&a, &b).unwrap() - psnr(&swap(&a), &swap(&b)).unwrap()).abs() < 1e-12);
}

#[test]
fn shape_mismatch_is_an_error() {
    let a = noise(24, 24, 1, 12);
    let b = noise(24, 25, 1, 13);
    let c = noise(24, 24, 3, 14);
    assert!(matches!(psnr(&a, &b), Err(Error::DimensionMismatch(_))));
    assert!(matches!(ssim(&a, &c), Err(Error::DimensionMismatch(_))));
    assert!(matches!(psnr_masked(&a, &a, Some(&[true; 3])), Err(Error::DimensionMismatch(_))));
}

#[test]
fn identity_remap_is_exact() {
    for camera in [common::ucm(), common::kb(), common::ds_desk()] {
        let image = common::checkerboard(&camera);
        let out = remap(&image, &camera, &camera).unwrap();
        for (i, &valid) in out.mask.iter().enumerate() {
            if valid {
                assert_eq!(out.image.data()[i], image.data()[i]);
            } else {
                assert!(camera
                    .unproject(&nalgebra::Vector2::new((i % image.width()) as f64, (i / image.width()) as f64))
                    .is_err());
            }
        }
    }
}

#[test]
fn constant_image_stays_constant() {
    let camera = common::ds_desk();
    let kb = common::kb();
    let gray = Raster::filled(512, 512, 3, 128).unwrap();
    let out = remap(&gray, &camera, &kb).unwrap();
    for (i, &valid) in out.mask.iter().enumerate() {
        let px = &out.image.data()[i * 3..i * 3 + 3];
        assert_eq!(px, if valid { [128; 3] } else { [0; 3] });
    }
    assert_eq!(out.invalid, out.mask.iter().filter(|m| !**m).count());
}

#[test]
fn remap_rejects_mismatched_raster() {
    let image = Raster::filled(100, 100, 1, 0).unwrap();
    assert!(matches!(
        remap(&image, &common::ucm(), &common::ucm()),
        Err(Error::DimensionMismatch(_))
    ));
}
