//! Model-to-model conversion: sample the input model, initialize the output
//! family linearly, then refine it with Levenberg-Marquardt.
//!
//! Parameter vectors follow the canonical order of
//! [`ModelParams::to_vector`]. The UCM, EUCM and DS residuals are the
//! denominator-multiplied forms `f x - (u - c) D`, OCC uses the
//! unprojection-side residual `(u - c) - m_z(r_u) x / z`, and the remaining
//! families use the plain pixel residual `π(x̃) - u`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2xX, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::eval::{reprojection_stats, ReprojectionStats};
use crate::init::{
    inherit_intrinsics, init_ds, init_eucm, init_kb, init_occ, init_rt, init_ucm_alpha,
    init_woodscape, ROW_EPS,
};
use crate::lm::{minimize, LmOptions, LmStatus, ResidualProvider};
use crate::model::{
    CameraModel, DsParams, EucmParams, KbParams, ModelKind, ModelParams, OccParams, Projection,
    RtParams, UcmParams, WoodscapeParams, AXIS_EPS,
};
use crate::numeric::{poly_derivative, poly_eval, solve_lsq};
use crate::sampler::{sample_grid, Correspondence, SampleSet, MIN_SAMPLES};

/// Highest forward-polynomial order tried for OCC outputs.
pub const MAX_FORWARD_ORDER: usize = 15;

/// Smallest `β` the EUCM solve may reach.
const BETA_FLOOR: f64 = 1e-9;

fn jac(rows: [&[f64]; 2]) -> Matrix2xX<f64> {
    Matrix2xX::from_fn(rows[0].len(), |r, c| rows[r][c])
}

pub struct UcmResidual;

impl ResidualProvider for UcmResidual {
    fn dim(&self) -> usize {
        5
    }

    fn residual(&self, p: &[f64], s: &Correspondence) -> Vector2<f64> {
        let b = s.bearing;
        let den = p[4] * b.norm() + (1.0 - p[4]) * b.z;
        Vector2::new(
            p[0] * b.x - (s.u.x - p[2]) * den,
            p[1] * b.y - (s.u.y - p[3]) * den,
        )
    }

    fn jacobian(&self, p: &[f64], s: &Correspondence) -> Matrix2xX<f64> {
        let b = s.bearing;
        let d = b.norm();
        let den = p[4] * d + (1.0 - p[4]) * b.z;
        let (du, dv) = (s.u.x - p[2], s.u.y - p[3]);
        jac([
            &[b.x, 0.0, den, 0.0, (b.z - d) * du],
            &[0.0, b.y, 0.0, den, (b.z - d) * dv],
        ])
    }

    fn valid(&self, p: &[f64], s: &Correspondence) -> bool {
        ucm_params(p).in_projection_domain(&s.bearing)
    }

    fn clamp(&self, p: &mut [f64]) {
        p[4] = p[4].clamp(0.0, 1.0);
    }
}

fn ucm_params(p: &[f64]) -> UcmParams {
    UcmParams {
        fx: p[0],
        fy: p[1],
        cx: p[2],
        cy: p[3],
        alpha: p[4],
    }
}

pub struct EucmResidual;

impl ResidualProvider for EucmResidual {
    fn dim(&self) -> usize {
        6
    }

    fn residual(&self, p: &[f64], s: &Correspondence) -> Vector2<f64> {
        let b = s.bearing;
        let d = (p[5] * (b.x * b.x + b.y * b.y) + b.z * b.z).sqrt();
        let den = p[4] * d + (1.0 - p[4]) * b.z;
        Vector2::new(
            p[0] * b.x - (s.u.x - p[2]) * den,
            p[1] * b.y - (s.u.y - p[3]) * den,
        )
    }

    fn jacobian(&self, p: &[f64], s: &Correspondence) -> Matrix2xX<f64> {
        let b = s.bearing;
        let rho2 = b.x * b.x + b.y * b.y;
        let d = (p[5] * rho2 + b.z * b.z).sqrt();
        let den = p[4] * d + (1.0 - p[4]) * b.z;
        let (du, dv) = (s.u.x - p[2], s.u.y - p[3]);
        let beta_scale = -p[4] * rho2 / (2.0 * d);
        jac([
            &[b.x, 0.0, den, 0.0, (b.z - d) * du, beta_scale * du],
            &[0.0, b.y, 0.0, den, (b.z - d) * dv, beta_scale * dv],
        ])
    }

    fn valid(&self, p: &[f64], s: &Correspondence) -> bool {
        eucm_params(p).in_projection_domain(&s.bearing)
    }

    fn clamp(&self, p: &mut [f64]) {
        p[4] = p[4].clamp(0.0, 1.0);
        p[5] = p[5].max(BETA_FLOOR);
    }
}

fn eucm_params(p: &[f64]) -> EucmParams {
    EucmParams {
        fx: p[0],
        fy: p[1],
        cx: p[2],
        cy: p[3],
        alpha: p[4],
        beta: p[5],
    }
}

pub struct DsResidual;

impl DsResidual {
    /// `(d1, ξ d1 + z, d2, D)`
    fn terms(p: &[f64], b: &Vector3<f64>) -> (f64, f64, f64, f64) {
        let d1 = b.norm();
        let zs = p[5] * d1 + b.z;
        let d2 = (b.x * b.x + b.y * b.y + zs * zs).sqrt();
        (d1, zs, d2, p[4] * d2 + (1.0 - p[4]) * zs)
    }
}

impl ResidualProvider for DsResidual {
    fn dim(&self) -> usize {
        6
    }

    fn residual(&self, p: &[f64], s: &Correspondence) -> Vector2<f64> {
        let b = s.bearing;
        let (_, _, _, den) = Self::terms(p, &b);
        Vector2::new(
            p[0] * b.x - (s.u.x - p[2]) * den,
            p[1] * b.y - (s.u.y - p[3]) * den,
        )
    }

    fn jacobian(&self, p: &[f64], s: &Correspondence) -> Matrix2xX<f64> {
        let b = s.bearing;
        let (d1, zs, d2, den) = Self::terms(p, &b);
        let (du, dv) = (s.u.x - p[2], s.u.y - p[3]);
        let alpha = p[4];
        let dden_dxi = alpha * d1 * zs / d2 + (1.0 - alpha) * d1;
        jac([
            &[b.x, 0.0, den, 0.0, (zs - d2) * du, -du * dden_dxi],
            &[0.0, b.y, 0.0, den, (zs - d2) * dv, -dv * dden_dxi],
        ])
    }

    fn valid(&self, p: &[f64], s: &Correspondence) -> bool {
        ds_params(p).in_projection_domain(&s.bearing)
    }

    fn clamp(&self, p: &mut [f64]) {
        p[4] = p[4].clamp(0.0, 1.0);
    }
}

fn ds_params(p: &[f64]) -> DsParams {
    DsParams {
        fx: p[0],
        fy: p[1],
        cx: p[2],
        cy: p[3],
        alpha: p[4],
        xi: p[5],
    }
}

/// Pixel residual of a `d(θ)` radial family. `powers` lists the exponents of
/// θ multiplying `k1..k4`, `fixed_linear` adds the unit θ term of KB.
pub struct RadialResidual {
    powers: [i32; 4],
    fixed_linear: bool,
}

impl RadialResidual {
    pub const KB: RadialResidual = RadialResidual {
        powers: [3, 5, 7, 9],
        fixed_linear: true,
    };
    pub const WOODSCAPE: RadialResidual = RadialResidual {
        powers: [1, 2, 3, 4],
        fixed_linear: false,
    };

    /// `(x / r, y / r, θ, d(θ))`, or `None` on the optical axis.
    fn terms(&self, p: &[f64], b: &Vector3<f64>) -> Option<(f64, f64, f64, f64)> {
        let r = b.x.hypot(b.y);
        if r < AXIS_EPS {
            return None;
        }
        let theta = r.atan2(b.z);
        let base = if self.fixed_linear { theta } else { 0.0 };
        let d = base
            + self
                .powers
                .iter()
                .zip(&p[4..8])
                .map(|(&e, k)| k * theta.powi(e))
                .sum::<f64>();
        Some((b.x / r, b.y / r, theta, d))
    }
}

impl ResidualProvider for RadialResidual {
    fn dim(&self) -> usize {
        8
    }

    fn residual(&self, p: &[f64], s: &Correspondence) -> Vector2<f64> {
        let (ex, ey) = match self.terms(p, &s.bearing) {
            Some((nx, ny, _, d)) => (p[0] * d * nx, p[1] * d * ny),
            None => (0.0, 0.0),
        };
        Vector2::new(ex + p[2] - s.u.x, ey + p[3] - s.u.y)
    }

    fn jacobian(&self, p: &[f64], s: &Correspondence) -> Matrix2xX<f64> {
        let Some((nx, ny, theta, d)) = self.terms(p, &s.bearing) else {
            return jac([
                &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            ]);
        };
        let t = self.powers.map(|e| theta.powi(e));
        let (gx, gy) = (p[0] * nx, p[1] * ny);
        jac([
            &[d * nx, 0.0, 1.0, 0.0, gx * t[0], gx * t[1], gx * t[2], gx * t[3]],
            &[0.0, d * ny, 0.0, 1.0, gy * t[0], gy * t[1], gy * t[2], gy * t[3]],
        ])
    }

    fn valid(&self, _: &[f64], s: &Correspondence) -> bool {
        s.bearing.iter().any(|v| *v != 0.0)
    }
}

/// OCC residual with the affine part fixed to identity. Parameters are
/// `cx, cy, a0..a4`.
pub struct OccResidual;

impl ResidualProvider for OccResidual {
    fn dim(&self) -> usize {
        7
    }

    fn residual(&self, p: &[f64], s: &Correspondence) -> Vector2<f64> {
        let b = s.bearing;
        let (du, dv) = (s.u.x - p[0], s.u.y - p[1]);
        let mz = poly_eval(&p[2..7], du.hypot(dv));
        Vector2::new(du - mz * b.x / b.z, dv - mz * b.y / b.z)
    }

    fn jacobian(&self, p: &[f64], s: &Correspondence) -> Matrix2xX<f64> {
        let b = s.bearing;
        let (du, dv) = (s.u.x - p[0], s.u.y - p[1]);
        let r = du.hypot(dv);
        let (tx, ty) = (b.x / b.z, b.y / b.z);
        // m_z depends on the principal point through r_u.
        let (gx, gy) = if r > AXIS_EPS {
            let slope = poly_derivative(&p[2..7], r);
            (slope * du / r, slope * dv / r)
        } else {
            (0.0, 0.0)
        };
        let pw = [1.0, r, r * r, r * r * r, r * r * r * r];
        jac([
            &[-1.0 + tx * gx, tx * gy, -tx * pw[0], -tx * pw[1], -tx * pw[2], -tx * pw[3], -tx * pw[4]],
            &[ty * gx, -1.0 + ty * gy, -ty * pw[0], -ty * pw[1], -ty * pw[2], -ty * pw[3], -ty * pw[4]],
        ])
    }

    fn valid(&self, _: &[f64], s: &Correspondence) -> bool {
        s.bearing.z.abs() > ROW_EPS
    }
}

pub struct RtResidual;

impl ResidualProvider for RtResidual {
    fn dim(&self) -> usize {
        9
    }

    fn residual(&self, p: &[f64], s: &Correspondence) -> Vector2<f64> {
        let rt = rt_params(p);
        let b = s.bearing;
        let d = rt.distort(&Vector2::new(b.x / b.z, b.y / b.z));
        Vector2::new(p[0] * d.x + p[2] - s.u.x, p[1] * d.y + p[3] - s.u.y)
    }

    fn jacobian(&self, p: &[f64], s: &Correspondence) -> Matrix2xX<f64> {
        let rt = rt_params(p);
        let b = s.bearing;
        let (x, y) = (b.x / b.z, b.y / b.z);
        let d = rt.distort(&Vector2::new(x, y));
        let r2 = x * x + y * y;
        let (r4, r6) = (r2 * r2, r2 * r2 * r2);
        let (fx, fy) = (p[0], p[1]);
        jac([
            &[
                d.x,
                0.0,
                1.0,
                0.0,
                fx * x * r2,
                fx * x * r4,
                fx * x * r6,
                fx * 2.0 * x * y,
                fx * (r2 + 2.0 * x * x),
            ],
            &[
                0.0,
                d.y,
                0.0,
                1.0,
                fy * y * r2,
                fy * y * r4,
                fy * y * r6,
                fy * (r2 + 2.0 * y * y),
                fy * 2.0 * x * y,
            ],
        ])
    }

    fn valid(&self, _: &[f64], s: &Correspondence) -> bool {
        s.bearing.z > 0.0
    }
}

fn rt_params(p: &[f64]) -> RtParams {
    RtParams {
        fx: p[0],
        fy: p[1],
        cx: p[2],
        cy: p[3],
        k1: p[4],
        k2: p[5],
        k3: p[6],
        p1: p[7],
        p2: p[8],
    }
}

/// Residual provider for an output family.
pub fn provider_for(kind: ModelKind) -> Box<dyn ResidualProvider> {
    match kind {
        ModelKind::Ucm => Box::new(UcmResidual),
        ModelKind::Eucm => Box::new(EucmResidual),
        ModelKind::Ds => Box::new(DsResidual),
        ModelKind::Kb => Box::new(RadialResidual::KB),
        ModelKind::Woodscape => Box::new(RadialResidual::WOODSCAPE),
        ModelKind::Occ => Box::new(OccResidual),
        ModelKind::Rt => Box::new(RtResidual),
    }
}

/// Rebuilds family parameters from a canonical vector. OCC needs its forward
/// polynomial supplied separately.
pub fn params_from_vector(kind: ModelKind, p: &[f64], occ_forward: Option<Vec<f64>>) -> ModelParams {
    let k4 = |p: &[f64]| [p[4], p[5], p[6], p[7]];
    match kind {
        ModelKind::Ucm => ModelParams::Ucm(ucm_params(p)),
        ModelKind::Eucm => ModelParams::Eucm(eucm_params(p)),
        ModelKind::Ds => ModelParams::Ds(ds_params(p)),
        ModelKind::Kb => ModelParams::Kb(KbParams {
            fx: p[0],
            fy: p[1],
            cx: p[2],
            cy: p[3],
            k: k4(p),
        }),
        ModelKind::Woodscape => ModelParams::Woodscape(WoodscapeParams {
            fx: p[0],
            fy: p[1],
            cx: p[2],
            cy: p[3],
            k: k4(p),
        }),
        ModelKind::Rt => ModelParams::Rt(rt_params(p)),
        ModelKind::Occ => ModelParams::Occ(OccParams {
            c: 1.0,
            d: 0.0,
            e: 0.0,
            cx: p[0],
            cy: p[1],
            a: [p[2], p[3], p[4], p[5], p[6]],
            k: occ_forward.unwrap_or_else(|| vec![0.0, 0.0]),
        }),
    }
}

/// Linear initialization of the output family as a canonical vector.
pub fn initialize(input: &CameraModel, target: ModelKind, samples: &[Correspondence]) -> Result<Vec<f64>> {
    let mut intr = inherit_intrinsics(input);
    // WoodScape folds its focal length into the linear coefficient.
    if let (ModelParams::Woodscape(w), false) = (input.params(), target == ModelKind::Woodscape) {
        intr.fx *= w.k[0];
        intr.fy *= w.k[0];
    }
    let base = vec![intr.fx, intr.fy, intr.cx, intr.cy];
    let with = |tail: &[f64]| {
        let mut v = base.clone();
        v.extend_from_slice(tail);
        v
    };
    Ok(match target {
        ModelKind::Ucm => with(&[init_ucm_alpha(samples, &intr)?]),
        ModelKind::Eucm => {
            let (alpha, beta) = init_eucm(samples, &intr)?;
            with(&[alpha, beta])
        }
        ModelKind::Ds => {
            let (alpha, xi) = init_ds(samples, &intr)?;
            with(&[alpha, xi])
        }
        ModelKind::Kb => with(&init_kb(samples, &intr)?),
        ModelKind::Woodscape => with(&init_woodscape(samples, &intr)?),
        ModelKind::Rt => {
            let k = init_rt(samples, &intr)?;
            with(&[k[0], k[1], k[2], 0.0, 0.0])
        }
        ModelKind::Occ => {
            let mut v = vec![intr.cx, intr.cy];
            v.extend_from_slice(&init_occ(samples, intr.cx, intr.cy)?);
            v
        }
    })
}

/// Forward polynomial fitted for an OCC output.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPolyFit {
    /// `k0..kp`.
    pub coeffs: Vec<f64>,
    pub order: usize,
    pub rms: f64,
}

/// Fits the OCC forward polynomial `ρ(θ) = Σ k_j θ^j`, `θ = atan(z / r)`, by
/// linear least squares `(x / r, y / r) ρ(θ) = A⁻¹ (u - c)` for
/// every order from 2 to `max_order`, and keeps the lowest order whose
/// reprojection RMS is within 1% of the best.
pub fn fit_occ_forward_poly(samples: &[Correspondence], occ: &OccParams, max_order: usize) -> Result<ForwardPolyFit> {
    let usable: Vec<&Correspondence> = samples
        .iter()
        .filter(|s| s.bearing.x.hypot(s.bearing.y) >= AXIS_EPS)
        .collect();
    let rows = 2 * usable.len();
    let affine_inverse = Matrix2::new(occ.c, occ.d, occ.e, 1.0)
        .try_inverse()
        .ok_or_else(|| Error::Validation("OCC affine matrix must be invertible".into()))?;
    let mut fits: Vec<ForwardPolyFit> = Vec::new();
    let mut last_err = None;
    for order in 2..=max_order.max(2) {
        let cols = order + 1;
        if rows < cols {
            break;
        }
        let mut a = DMatrix::zeros(rows, cols);
        let mut b = DVector::zeros(rows);
        for (i, s) in usable.iter().enumerate() {
            let p = s.bearing;
            let r = p.x.hypot(p.y);
            let theta = (p.z / r).atan();
            let mut power = 1.0;
            for j in 0..cols {
                a[(2 * i, j)] = p.x / r * power;
                a[(2 * i + 1, j)] = p.y / r * power;
                power *= theta;
            }
            let sensor = affine_inverse * Vector2::new(s.u.x - occ.cx, s.u.y - occ.cy);
            b[2 * i] = sensor.x;
            b[2 * i + 1] = sensor.y;
        }
        match solve_lsq(&a, &b) {
            Ok(k) => {
                let candidate = OccParams {
                    k: k.iter().copied().collect(),
                    ..occ.clone()
                };
                let sq: f64 = samples
                    .iter()
                    .map(|s| (candidate.project_unchecked(&s.bearing) - s.u).norm_squared())
                    .sum();
                let rms = (sq / samples.len() as f64).sqrt();
                if rms.is_finite() {
                    fits.push(ForwardPolyFit {
                        coeffs: candidate.k,
                        order,
                        rms,
                    });
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let best = fits
        .iter()
        .map(|f| f.rms)
        .fold(f64::INFINITY, f64::min);
    fits.into_iter()
        .find(|f| f.rms <= best * 1.01)
        .ok_or_else(|| {
            last_err.unwrap_or(Error::RankDeficient {
                rank: rows,
                cols: 3,
            })
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvertOptions {
    pub samples: usize,
    pub lm: LmOptions,
    /// Drop samples whose bearing is more than this many radians off the
    /// optical axis.
    pub max_incidence: Option<f64>,
    pub max_forward_order: usize,
}

impl Default for ConvertOptions {
    fn default() -> Self {
        Self {
            samples: crate::sampler::DEFAULT_SAMPLES,
            lm: LmOptions::default(),
            max_incidence: None,
            max_forward_order: MAX_FORWARD_ORDER,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversionReport {
    pub requested_n: usize,
    /// Samples the input model could unproject.
    pub accepted_n: usize,
    /// Samples entering the fit after output-family and field-of-view
    /// filtering.
    pub used_n: usize,
    /// Samples dropped because the output family cannot represent them.
    pub coverage_loss: usize,
    pub init_params: Vec<f64>,
    pub final_params: Vec<f64>,
    pub iterations: usize,
    pub status: LmStatus,
    pub final_cost: f64,
    pub init_rms_reprojection_error: f64,
    pub rms_reprojection_error: f64,
    pub max_reprojection_error: f64,
    /// Set when refinement raised the reprojection error and the linear
    /// initialization was returned instead.
    pub kept_initialization: bool,
    /// Forward-polynomial order chosen for OCC outputs.
    pub forward_order: Option<usize>,
    pub wall_time_ms: f64,
}

/// Converts `input` into the `target` family from `n` grid samples.
pub fn convert(input: &CameraModel, target: ModelKind, n: usize, opts: &LmOptions) -> Result<(CameraModel, ConversionReport)> {
    convert_with(
        input,
        target,
        &ConvertOptions {
            samples: n,
            lm: *opts,
            ..ConvertOptions::default()
        },
    )
}

/// Builds the output model for a canonical vector, fitting the OCC forward
/// polynomial when needed.
fn assemble(
    input: &CameraModel,
    target: ModelKind,
    params: &[f64],
    samples: &[Correspondence],
    opts: &ConvertOptions,
) -> Result<(CameraModel, ReprojectionStats, Option<usize>)> {
    let (forward, order) = if target == ModelKind::Occ {
        let ModelParams::Occ(partial) = params_from_vector(target, params, None) else {
            unreachable!()
        };
        let fit = fit_occ_forward_poly(samples, &partial, opts.max_forward_order)?;
        (Some(fit.coeffs), Some(fit.order))
    } else {
        (None, None)
    };
    let model = CameraModel::new(params_from_vector(target, params, forward), input.image_size())?;
    let stats = reprojection_stats(&model, samples)?;
    Ok((model, stats, order))
}

pub fn convert_with(
    input: &CameraModel,
    target: ModelKind,
    opts: &ConvertOptions,
) -> Result<(CameraModel, ConversionReport)> {
    let start = Instant::now();
    let sampled: SampleSet = sample_grid(input, opts.samples)?;
    let provider = provider_for(target);
    let max_incidence = opts.max_incidence.unwrap_or(f64::INFINITY);
    let within_fov = |s: &Correspondence| {
        let b = s.bearing;
        b.x.hypot(b.y).atan2(b.z) <= max_incidence
    };
    let static_valid = |s: &Correspondence| match target {
        ModelKind::Rt => s.bearing.z > 0.0,
        ModelKind::Occ => s.bearing.z.abs() > ROW_EPS,
        _ => true,
    };
    let set = sampled.filtered(|s| within_fov(s) && static_valid(s));
    let coverage_loss = sampled.iter().filter(|s| within_fov(s) && !static_valid(s)).count();
    if set.len() < MIN_SAMPLES {
        return Err(Error::TooFewValidSamples {
            accepted: set.len(),
            required: MIN_SAMPLES,
        });
    }

    let x0 = initialize(input, target, &set.samples)?;
    let outcome = minimize(provider.as_ref(), &set.samples, &x0, &opts.lm)?;

    let initial = assemble(input, target, &x0, &set.samples, opts);
    let refined = assemble(input, target, &outcome.params, &set.samples, opts);
    let init_rms = initial.as_ref().map(|(_, s, _)| s.rms).unwrap_or(f64::INFINITY);
    // The optimized costs weight pixels unevenly, so keep the linear start if
    // refinement made the true reprojection error worse.
    let (model, stats, order, kept_initialization) = match (refined, initial) {
        (Ok((_, s, _)), Ok((m0, s0, o0))) if s.rms > s0.rms => (m0, s0, o0, true),
        (Ok((m, s, o)), _) => (m, s, o, false),
        (Err(_), Ok((m, s, o))) => (m, s, o, true),
        (Err(e), Err(_)) => return Err(e),
    };

    let report = ConversionReport {
        requested_n: sampled.requested_n,
        accepted_n: sampled.accepted_n,
        used_n: set.len(),
        coverage_loss,
        final_params: model.params().to_vector(),
        init_params: x0,
        iterations: outcome.iterations,
        status: outcome.status,
        final_cost: outcome.final_cost,
        init_rms_reprojection_error: init_rms,
        rms_reprojection_error: stats.rms,
        max_reprojection_error: stats.max,
        kept_initialization,
        forward_order: order,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok((model, report))
}
