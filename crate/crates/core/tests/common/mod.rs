//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::sync::OnceLock;

use fisheye_convert::convert::{fit_occ_forward_poly, provider_for};
use fisheye_convert::eval::Raster;
use fisheye_convert::lm::ResidualProvider;
use fisheye_convert::model::*;
use fisheye_convert::sampler::Correspondence;
use nalgebra::{Matrix2xX, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn size(w: u32, h: u32) -> ImageSize {
    ImageSize::new(w, h).unwrap()
}

pub fn model(params: ModelParams, w: u32, h: u32) -> CameraModel {
    CameraModel::new(params, size(w, h)).unwrap()
}

/// Synthetic desk camera: DS(α=0.57, ξ=-0.27, f=158) on 512×512.
pub fn ds_desk() -> CameraModel {
    model(
        ModelParams::Ds(DsParams {
            fx: 158.0,
            fy: 158.0,
            cx: 256.0,
            cy: 256.0,
            alpha: 0.57,
            xi: -0.27,
        }),
        512,
        512,
    )
}

/// The UCM of the Table 3 comparison, image size assumed to be twice the
/// principal point.
pub fn ucm_table3() -> CameraModel {
    model(
        ModelParams::Ucm(UcmParams {
            fx: 131.5893,
            fy: 131.3089,
            cx: 514.168,
            cy: 382.797,
            alpha: 0.4937,
        }),
        1028,
        766,
    )
}

pub fn ucm() -> CameraModel {
    model(
        ModelParams::Ucm(UcmParams {
            fx: 300.0,
            fy: 305.0,
            cx: 320.0,
            cy: 240.0,
            alpha: 0.6,
        }),
        640,
        480,
    )
}

pub fn eucm() -> CameraModel {
    model(
        ModelParams::Eucm(EucmParams {
            fx: 300.0,
            fy: 305.0,
            cx: 320.0,
            cy: 240.0,
            alpha: 0.6,
            beta: 1.1,
        }),
        640,
        480,
    )
}

/// TUM-VI style Kannala-Brandt calibration.
pub fn kb() -> CameraModel {
    model(
        ModelParams::Kb(KbParams {
            fx: 190.97,
            fy: 190.98,
            cx: 254.93,
            cy: 256.90,
            k: [0.0034823, 0.00071503, -0.0020532, 0.00020293],
        }),
        512,
        512,
    )
}

/// WoodScape style calibration, focal folded into `k`.
pub fn woodscape() -> CameraModel {
    model(
        ModelParams::Woodscape(WoodscapeParams {
            fx: 1.0,
            fy: 1.0,
            cx: 643.942,
            cy: 479.907,
            k: [339.749, -31.988, 48.275, -7.201],
        }),
        1280,
        966,
    )
}

/// EuRoC style radial-tangential calibration.
pub fn rt() -> CameraModel {
    model(
        ModelParams::Rt(RtParams {
            fx: 458.654,
            fy: 457.296,
            cx: 367.215,
            cy: 248.375,
            k1: -0.28340811,
            k2: 0.07395907,
            k3: 0.0,
            p1: 0.00019359,
            p2: 1.76187114e-05,
        }),
        752,
        480,
    )
}

/// OCC on a 440×440 sensor with a forward polynomial fitted to its
/// unprojection polynomial over the whole image.
pub fn occ_fixture(c: f64, d: f64, e: f64) -> CameraModel {
    let mut params = OccParams {
        c,
        d,
        e,
        cx: 220.5,
        cy: 219.5,
        a: [214.9, 0.068, -2.54e-3, 4.96e-6, -1.13e-8],
        k: vec![0.0, 0.0],
    };
    let samples: Vec<Correspondence> = pixel_grid(size(440, 440), 64, 64)
        .into_iter()
        .map(|u| Correspondence {
            u,
            bearing: params.unproject_unchecked(&u).unwrap(),
        })
        .collect();
    params.k = fit_occ_forward_poly(&samples, &params, 15).unwrap().coeffs;
    model(ModelParams::Occ(params), 440, 440)
}

/// OCC with a slightly misaligned sensor.
pub fn occ() -> CameraModel {
    static CACHE: OnceLock<CameraModel> = OnceLock::new();
    CACHE.get_or_init(|| occ_fixture(1.002, 0.001, -0.0015)).clone()
}

/// OCC with an identity affine part, as produced by conversions.
pub fn occ_aligned() -> CameraModel {
    static CACHE: OnceLock<CameraModel> = OnceLock::new();
    CACHE.get_or_init(|| occ_fixture(1.0, 0.0, 0.0)).clone()
}

/// One representative model per family.
pub fn representatives() -> Vec<CameraModel> {
    vec![ucm(), eucm(), ds_desk(), kb(), woodscape(), occ(), rt()]
}

/// `nx × ny` pixel grid spanning the image, corners included.
pub fn pixel_grid(size: ImageSize, nx: usize, ny: usize) -> Vec<Vector2<f64>> {
    let (w, h) = (size.width as f64 - 1.0, size.height as f64 - 1.0);
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            out.push(Vector2::new(
                w * i as f64 / (nx - 1) as f64,
                h * j as f64 / (ny - 1) as f64,
            ));
        }
    }
    out
}

/// Renders a checkerboard painted on the sphere through `camera`, with 4×4
/// supersampling. Cells are 0.1 wide in stereographic coordinates.
pub fn checkerboard(camera: &CameraModel) -> Raster {
    const SS: usize = 4;
    let size = camera.image_size();
    let (w, h) = (size.width as usize, size.height as usize);
    let mut data = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut sum, mut hits) = (0.0f64, 0.0f64);
            for sy in 0..SS {
                for sx in 0..SS {
                    let u = Vector2::new(
                        x as f64 + (sx as f64 + 0.5) / SS as f64 - 0.5,
                        y as f64 + (sy as f64 + 0.5) / SS as f64 - 0.5,
                    );
                    if let Ok(b) = camera.unproject(&u) {
                        sum += checker_value(&b);
                        hits += 1.0;
                    }
                }
            }
            if hits > 0.0 {
                data[y * w + x] = (sum / hits).round() as u8;
            }
        }
    }
    Raster::new(w, h, 1, data).unwrap()
}

fn checker_value(b: &Vector3<f64>) -> f64 {
    let (px, py) = (b.x / (1.0 + b.z), b.y / (1.0 + b.z));
    let parity = ((px / 0.1).floor() as i64 + (py / 0.1).floor() as i64).rem_euclid(2);
    if parity == 0 {
        30.0
    } else {
        225.0
    }
}

pub const DRAWS: usize = 100;

fn central_difference(provider: &dyn ResidualProvider, p: &[f64], s: &Correspondence) -> Matrix2xX<f64> {
    let mut j = Matrix2xX::zeros(p.len());
    for i in 0..p.len() {
        let h = 1e-4 * p[i].abs().max(1e-2);
        let mut hi = p.to_vec();
        let mut lo = p.to_vec();
        hi[i] += h;
        lo[i] -= h;
        let d = (provider.residual(&hi, s) - provider.residual(&lo, s)) / (2.0 * h);
        j.set_column(i, &d);
    }
    j
}

/// Largest column-wise relative difference between analytic and numeric
/// Jacobians.
fn max_relative_error(analytic: &Matrix2xX<f64>, numeric: &Matrix2xX<f64>) -> f64 {
    (0..numeric.ncols())
        .map(|c| {
            let diff = (analytic.column(c) - numeric.column(c)).norm();
            diff / numeric.column(c).norm().max(1e-8)
        })
        .fold(0.0, f64::max)
}

/// Columns scaling with high powers of the incidence angle vanish on the
/// axis, where a relative comparison is meaningless, so draws start at
/// `MIN_ANGLE`.
pub const MIN_ANGLE: f64 = 0.2;

pub fn unit_bearing(rng: &mut ChaCha8Rng, max_angle: f64) -> Vector3<f64> {
    let theta = rng.gen_range(MIN_ANGLE..max_angle);
    let phi = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

/// Checks one provider around `base`, perturbing every parameter by up to
/// `spread` relative and drawing bearings up to `max_angle` off axis.
pub fn check_provider(kind: ModelKind, base: &CameraModel, spread: f64, max_angle: f64, seed: u64) -> f64 {
    let provider = provider_for(kind);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = base.params().to_vector();
    let size = base.image_size();
    let mut worst = 0.0f64;
    let mut draws = 0;
    while draws < DRAWS {
        let p: Vec<f64> = x0
            .iter()
            .map(|v| v * (1.0 + rng.gen_range(-spread..spread)))
            .collect();
        let s = Correspondence {
            u: Vector2::new(
                rng.gen_range(0.0..size.width as f64),
                rng.gen_range(0.0..size.height as f64),
            ),
            bearing: unit_bearing(&mut rng, max_angle),
        };
        if !provider.valid(&p, &s) {
            continue;
        }
        let analytic = provider.jacobian(&p, &s);
        let numeric = central_difference(provider.as_ref(), &p, &s);
        worst = worst.max(max_relative_error(&analytic, &numeric));
        draws += 1;
    }
    worst
}
