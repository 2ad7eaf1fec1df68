//! Closed-form linear initialization of output-model distortion parameters.
//!
//! Intrinsics are inherited from the input model; each family then solves a
//! small linear least-squares system `A χ = b` obtained by rearranging its
//! projection equation around the sampled correspondences. Every sample
//! contributes one row per pixel coordinate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{CameraModel, ModelParams};
use crate::numeric::solve_lsq;
use crate::sampler::Correspondence;

/// Rows whose divisor is smaller than this are left out of the system.
pub const ROW_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InheritedIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl InheritedIntrinsics {
    fn focal(&self, axis: usize) -> f64 {
        [self.fx, self.fy][axis]
    }

    fn center(&self, axis: usize) -> f64 {
        [self.cx, self.cy][axis]
    }
}

/// Copies focal lengths and principal point from the input model. OCC has no
/// focal length, so its `a0` stands in for both.
pub fn inherit_intrinsics(model: &CameraModel) -> InheritedIntrinsics {
    let (fx, fy, cx, cy) = match model.params() {
        ModelParams::Ucm(p) => (p.fx, p.fy, p.cx, p.cy),
        ModelParams::Eucm(p) => (p.fx, p.fy, p.cx, p.cy),
        ModelParams::Ds(p) => (p.fx, p.fy, p.cx, p.cy),
        ModelParams::Kb(p) => (p.fx, p.fy, p.cx, p.cy),
        ModelParams::Woodscape(p) => (p.fx, p.fy, p.cx, p.cy),
        ModelParams::Rt(p) => (p.fx, p.fy, p.cx, p.cy),
        ModelParams::Occ(p) => (p.a[0], p.a[0], p.cx, p.cy),
    };
    InheritedIntrinsics { fx, fy, cx, cy }
}

/// Accumulates design rows, then solves.
struct LinearSystem {
    cols: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl LinearSystem {
    fn new(cols: usize) -> Self {
        Self {
            cols,
            a: Vec::new(),
            b: Vec::new(),
        }
    }

    fn push(&mut self, row: &[f64], rhs: f64) {
        debug_assert_eq!(row.len(), self.cols);
        self.a.extend_from_slice(row);
        self.b.push(rhs);
    }

    fn solve(self) -> Result<DVector<f64>> {
        let rows = self.b.len();
        if rows < self.cols {
            return Err(Error::RankDeficient {
                rank: rows,
                cols: self.cols,
            });
        }
        let a = DMatrix::from_row_slice(rows, self.cols, &self.a);
        solve_lsq(&a, &DVector::from_vec(self.b))
    }
}

/// Linear estimate of the UCM `alpha`, clamped to `[0, 1]`.
///
/// Rearranging `u - c = f x / (α d + (1 - α) z)` gives
/// `α (d - z)(u - c) = f x - z (u - c)`, one row per coordinate.
pub fn init_ucm_alpha(samples: &[Correspondence], intr: &InheritedIntrinsics) -> Result<f64> {
    let mut sys = LinearSystem::new(1);
    for s in samples {
        let d = s.bearing.norm();
        let z = s.bearing.z;
        for axis in 0..2 {
            let du = s.u[axis] - intr.center(axis);
            sys.push(&[(d - z) * du], intr.focal(axis) * s.bearing[axis] - z * du);
        }
    }
    Ok(sys.solve()?[0].clamp(0.0, 1.0))
}

/// EUCM starts from `beta = 1`, where it coincides with UCM.
pub fn init_eucm(samples: &[Correspondence], intr: &InheritedIntrinsics) -> Result<(f64, f64)> {
    Ok((init_ucm_alpha(samples, intr)?, 1.0))
}

/// DS starts from `xi = 0`, where it coincides with UCM.
pub fn init_ds(samples: &[Correspondence], intr: &InheritedIntrinsics) -> Result<(f64, f64)> {
    Ok((init_ucm_alpha(samples, intr)?, 0.0))
}

/// Solves `Σ k_i θ^(2i+1) = (u - c) r / (f x) - θ` for the KB coefficients.
pub fn init_kb(samples: &[Correspondence], intr: &InheritedIntrinsics) -> Result<[f64; 4]> {
    let mut sys = LinearSystem::new(4);
    for s in samples {
        let p = s.bearing;
        let r = p.x.hypot(p.y);
        let theta = r.atan2(p.z);
        let powers = [3, 5, 7, 9].map(|e| theta.powi(e));
        for axis in 0..2 {
            if p[axis].abs() < ROW_EPS {
                continue;
            }
            let du = s.u[axis] - intr.center(axis);
            sys.push(&powers, du * r / (intr.focal(axis) * p[axis]) - theta);
        }
    }
    let k = sys.solve()?;
    Ok([k[0], k[1], k[2], k[3]])
}

/// Solves `Σ k_i θ^i = (u - c) r / (f x)` for the WoodScape coefficients.
pub fn init_woodscape(samples: &[Correspondence], intr: &InheritedIntrinsics) -> Result<[f64; 4]> {
    let mut sys = LinearSystem::new(4);
    for s in samples {
        let p = s.bearing;
        let r = p.x.hypot(p.y);
        let theta = r.atan2(p.z);
        let powers = [1, 2, 3, 4].map(|e| theta.powi(e));
        for axis in 0..2 {
            if p[axis].abs() < ROW_EPS {
                continue;
            }
            let du = s.u[axis] - intr.center(axis);
            sys.push(&powers, du * r / (intr.focal(axis) * p[axis]));
        }
    }
    let k = sys.solve()?;
    Ok([k[0], k[1], k[2], k[3]])
}

/// Unprojection polynomial `a` of an OCC model with identity affine part.
///
/// Since the bearing is parallel to `(u - c, m_z(r_u))`, each coordinate
/// gives `a · [1, r_u, .., r_u⁴] = z (u - c) / x`.
pub fn init_occ(samples: &[Correspondence], cx: f64, cy: f64) -> Result<[f64; 5]> {
    let mut sys = LinearSystem::new(5);
    let center = [cx, cy];
    for s in samples {
        let p = s.bearing;
        let r_u = (s.u.x - cx).hypot(s.u.y - cy);
        let powers = [0, 1, 2, 3, 4].map(|e| r_u.powi(e));
        for axis in 0..2 {
            if p[axis].abs() < ROW_EPS {
                continue;
            }
            sys.push(&powers, p.z * (s.u[axis] - center[axis]) / p[axis]);
        }
    }
    let a = sys.solve()?;
    Ok([a[0], a[1], a[2], a[3], a[4]])
}

/// Radial RT coefficients with the tangential terms fixed at zero:
/// `k · [r², r⁴, r⁶] = (u - c) / (f x') - 1`. Samples behind the camera are
/// skipped.
pub fn init_rt(samples: &[Correspondence], intr: &InheritedIntrinsics) -> Result<[f64; 3]> {
    let mut sys = LinearSystem::new(3);
    for s in samples {
        let p = s.bearing;
        if p.z <= 0.0 {
            continue;
        }
        let n = [p.x / p.z, p.y / p.z];
        let r2 = n[0] * n[0] + n[1] * n[1];
        let powers = [r2, r2 * r2, r2 * r2 * r2];
        for axis in 0..2 {
            if n[axis].abs() < ROW_EPS {
                continue;
            }
            let du = s.u[axis] - intr.center(axis);
            sys.push(&powers, du / (intr.focal(axis) * n[axis]) - 1.0);
        }
    }
    let k = sys.solve()?;
    Ok([k[0], k[1], k[2]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        CameraModel, EucmParams, ImageSize, KbParams, ModelParams, OccParams, Projection,
        RtParams, UcmParams,
    };
    use crate::sampler::sample_grid;
    use nalgebra::{Vector2, Vector3};

    const F: f64 = 300.0;
    const CX: f64 = 320.0;
    const CY: f64 = 240.0;

    fn intr() -> InheritedIntrinsics {
        InheritedIntrinsics {
            fx: F,
            fy: F,
            cx: CX,
            cy: CY,
        }
    }

    fn samples(params: ModelParams) -> Vec<Correspondence> {
        let model = CameraModel::new(params, ImageSize::new(640, 480).unwrap()).unwrap();
        sample_grid(&model, 200).unwrap().samples
    }

    fn ucm(alpha: f64) -> ModelParams {
        ModelParams::Ucm(UcmParams {
            fx: F,
            fy: F,
            cx: CX,
            cy: CY,
            alpha,
        })
    }

    fn kb(k: [f64; 4]) -> ModelParams {
        ModelParams::Kb(KbParams {
            fx: F,
            fy: F,
            cx: CX,
            cy: CY,
            k,
        })
    }

    #[test]
    fn ucm_alpha_recovered() {
        let alpha = init_ucm_alpha(&samples(ucm(0.6)), &intr()).unwrap();
        assert!((alpha - 0.6).abs() < 1e-9);
        assert_eq!(init_ucm_alpha(&samples(ucm(0.0)), &intr()).unwrap(), 0.0);
        let high = init_ucm_alpha(&samples(ucm(0.97)), &intr()).unwrap();
        assert!(high <= 1.0 && (high - 0.97).abs() < 1e-6);
    }

    #[test]
    fn ucm_alpha_axial_samples_rank_deficient() {
        let axial = vec![
            Correspondence {
                u: Vector2::new(CX, CY),
                bearing: Vector3::new(0.0, 0.0, 1.0),
            };
            10
        ];
        assert!(matches!(
            init_ucm_alpha(&axial, &intr()),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn eucm_and_ds_fix_their_extra_parameter() {
        let eucm = ModelParams::Eucm(EucmParams {
            fx: F,
            fy: F,
            cx: CX,
            cy: CY,
            alpha: 0.5,
            beta: 1.0,
        });
        let (alpha, beta) = init_eucm(&samples(eucm), &intr()).unwrap();
        assert!((alpha - 0.5).abs() < 1e-9);
        assert_eq!(beta, 1.0);
        assert_eq!(init_eucm(&samples(ucm(0.0)), &intr()).unwrap(), (0.0, 1.0));

        let skewed = ModelParams::Eucm(EucmParams {
            fx: F,
            fy: F,
            cx: CX,
            cy: CY,
            alpha: 0.6,
            beta: 2.0,
        });
        assert_eq!(init_eucm(&samples(skewed), &intr()).unwrap().1, 1.0);

        let (alpha, xi) = init_ds(&samples(ucm(0.45)), &intr()).unwrap();
        assert!((alpha - 0.45).abs() < 1e-9);
        assert_eq!(xi, 0.0);
    }

    #[test]
    fn kb_coefficients_recovered() {
        let zero = init_kb(&samples(kb([0.0; 4])), &intr()).unwrap();
        assert!(zero.iter().all(|k| k.abs() < 1e-10));
        let k = init_kb(&samples(kb([-0.01, 0.002, 0.0, 0.0])), &intr()).unwrap();
        for (got, want) in k.iter().zip([-0.01, 0.002, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-8, "{k:?}");
        }
    }

    #[test]
    fn kb_single_angle_is_rank_deficient() {
        let theta: f64 = 0.4;
        let ring: Vec<_> = (0..12)
            .map(|i| {
                let phi = i as f64 * 0.5;
                let bearing = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
                let u = Vector2::new(CX + F * theta * phi.cos(), CY + F * theta * phi.sin());
                Correspondence { u, bearing }
            })
            .collect();
        assert!(matches!(
            init_kb(&ring, &intr()),
            Err(Error::RankDeficient { .. })
        ));
    }

    fn occ(a: [f64; 5]) -> OccParams {
        OccParams {
            c: 1.0,
            d: 0.0,
            e: 0.0,
            cx: CX,
            cy: CY,
            a,
            k: vec![0.0, 1.0],
        }
    }

    /// Correspondences straight from the OCC unprojection, bypassing the
    /// forward-polynomial consistency check.
    fn occ_samples(params: &OccParams) -> Vec<Correspondence> {
        crate::sampler::grid_pixels(ImageSize::new(640, 480).unwrap(), 200)
            .into_iter()
            .map(|u| Correspondence {
                u,
                bearing: params.unproject_unchecked(&u).unwrap(),
            })
            .collect()
    }

    #[test]
    fn occ_polynomial_recovered() {
        let truth = [131.0074, 0.0, -0.0018, 0.0, 0.0];
        let a = init_occ(&occ_samples(&occ(truth)), CX, CY).unwrap();
        for (got, want) in a.iter().zip(truth) {
            assert!((got - want).abs() < 1e-6, "{a:?}");
        }
        let pinhole = init_occ(&occ_samples(&occ([F, 0.0, 0.0, 0.0, 0.0])), CX, CY).unwrap();
        assert!((pinhole[0] - F).abs() < 1e-8);
        assert!(pinhole[1..].iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn occ_axial_sample_is_filtered() {
        let params = occ([F, 0.0, -0.001, 0.0, 0.0]);
        let mut s = occ_samples(&params);
        s.push(Correspondence {
            u: Vector2::new(CX, CY),
            bearing: Vector3::new(0.0, 0.0, 1.0),
        });
        let a = init_occ(&s, CX, CY).unwrap();
        assert!((a[0] - F).abs() < 1e-6 && (a[2] + 0.001).abs() < 1e-9);
    }

    fn rt(k1: f64, k2: f64) -> ModelParams {
        ModelParams::Rt(RtParams {
            fx: F,
            fy: F,
            cx: CX,
            cy: CY,
            k1,
            k2,
            k3: 0.0,
            p1: 0.0,
            p2: 0.0,
        })
    }

    #[test]
    fn rt_radial_terms_recovered() {
        let zero = init_rt(&samples(rt(0.0, 0.0)), &intr()).unwrap();
        assert!(zero.iter().all(|k| k.abs() < 1e-10));
        let k = init_rt(&samples(rt(-0.2, 0.05)), &intr()).unwrap();
        assert!((k[0] + 0.2).abs() < 1e-8 && (k[1] - 0.05).abs() < 1e-8 && k[2].abs() < 1e-8);
    }

    #[test]
    fn rt_single_radius_is_rank_deficient() {
        let r: f64 = 0.3;
        let ring: Vec<_> = (0..12)
            .map(|i| {
                let phi = i as f64 * 0.5;
                let bearing = Vector3::new(r * phi.cos(), r * phi.sin(), 1.0).normalize();
                let u = Vector2::new(CX + F * r * phi.cos(), CY + F * r * phi.sin());
                Correspondence { u, bearing }
            })
            .collect();
        assert!(matches!(init_rt(&ring, &intr()), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn occ_input_inherits_a0_as_focal() {
        let model = CameraModel::new(
            ModelParams::Occ(OccParams {
                cx: 516.4379,
                cy: 383.014,
                ..occ([131.0074, 0.0, -0.0018, 0.0, 0.0])
            }),
            ImageSize::new(1032, 766).unwrap(),
        )
        .unwrap();
        let i = inherit_intrinsics(&model);
        assert_eq!((i.fx, i.fy, i.cx, i.cy), (131.0074, 131.0074, 516.4379, 383.014));
    }
}
