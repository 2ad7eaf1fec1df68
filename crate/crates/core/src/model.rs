//! Camera model parameter records with projection, unprojection and the
//! validity domains of each family.
//!
//! Every family maps a 3D point `x = [x, y, z]` to a pixel `u` through
//! `project`, and a pixel back to a unit bearing through `unproject`. The
//! sets on which those maps are defined are exposed as
//! `in_projection_domain` / `in_unprojection_domain`; `project` and
//! `unproject` return [`Error::OutOfDomain`] exactly when the matching
//! predicate is false.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::numeric::{
    newton_2d, newton_scalar_in, poly_derivative, poly_eval, NewtonOptions,
};

/// Radius below which a point is treated as lying on the optical axis.
pub const AXIS_EPS: f64 = 1e-12;

/// Largest incidence angle a KB-type polynomial is ever inverted over.
pub const THETA_MAX: f64 = PI;

/// Sample count for locating where a KB-type polynomial stops increasing.
const MONOTONE_SAMPLES: usize = 1000;

/// Maximum pixel discrepancy accepted by the OCC self-consistency check.
const OCC_CONSISTENCY_PX: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::Validation(format!(
                "image size must be at least 2x2, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }
}

/// Unified camera model in the `(fx, fy, cx, cy, alpha)` parameterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UcmParams {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub alpha: f64,
}

/// Enhanced unified camera model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EucmParams {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Double sphere model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsParams {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub alpha: f64,
    pub xi: f64,
}

/// Kannala-Brandt model, `d(θ) = θ + k1 θ³ + k2 θ⁵ + k3 θ⁷ + k4 θ⁹`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KbParams {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k: [f64; 4],
}

/// OCamCalib-style omnidirectional model.
///
/// `a` maps the sensor radius to the bearing's z component during
/// unprojection; `k` maps the elevation angle `atan(z / r)` to the sensor
/// radius during projection.
#[derive(Debug, Clone, PartialEq)]
pub struct OccParams {
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub cx: f64,
    pub cy: f64,
    pub a: [f64; 5],
    pub k: Vec<f64>,
}

/// Pinhole model with radial-tangential distortion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtParams {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub p1: f64,
    pub p2: f64,
}

/// WoodScape variant of KB, `d(θ) = k1 θ + k2 θ² + k3 θ³ + k4 θ⁴`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WoodscapeParams {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Ucm,
    Eucm,
    Ds,
    Kb,
    Occ,
    Rt,
    Woodscape,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Ucm,
        ModelKind::Eucm,
        ModelKind::Ds,
        ModelKind::Kb,
        ModelKind::Occ,
        ModelKind::Rt,
        ModelKind::Woodscape,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Ucm => "ucm",
            ModelKind::Eucm => "eucm",
            ModelKind::Ds => "ds",
            ModelKind::Kb => "kb",
            ModelKind::Occ => "occ",
            ModelKind::Rt => "rt",
            ModelKind::Woodscape => "woodscape",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown model kind '{s}'")))
    }
}

/// Family-specific parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Ucm(UcmParams),
    Eucm(EucmParams),
    Ds(DsParams),
    Kb(KbParams),
    Occ(OccParams),
    Rt(RtParams),
    Woodscape(WoodscapeParams),
}

/// A validated camera model together with its image size.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    params: ModelParams,
    image_size: ImageSize,
    /// Cached end of the increasing branch for KB-type models.
    theta_limit: f64,
}

/// Projection and unprojection for one model family.
pub trait Projection {
    fn in_projection_domain(&self, p: &Vector3<f64>) -> bool;
    fn in_unprojection_domain(&self, u: &Vector2<f64>) -> bool;
    /// Projection without input checks; callers must have checked the domain.
    fn project_unchecked(&self, p: &Vector3<f64>) -> Vector2<f64>;
    /// Unprojection without domain checks; the result is normalized.
    fn unproject_unchecked(&self, u: &Vector2<f64>) -> Result<Vector3<f64>>;
    fn validate(&self) -> Result<()>;

    fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>> {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if !self.in_projection_domain(p) {
            return Err(Error::OutOfDomain);
        }
        let u = self.project_unchecked(p);
        if u.iter().all(|v| v.is_finite()) {
            Ok(u)
        } else {
            Err(Error::NumericalFailure("non-finite projection".into()))
        }
    }

    fn unproject(&self, u: &Vector2<f64>) -> Result<Vector3<f64>> {
        if !u.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if !self.in_unprojection_domain(u) {
            return Err(Error::OutOfDomain);
        }
        self.unproject_unchecked(u)
    }
}

fn check_focal(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<()> {
    if ![fx, fy, cx, cy].iter().all(|v| v.is_finite()) {
        return Err(Error::Validation("intrinsics must be finite".into()));
    }
    if fx <= 0.0 || fy <= 0.0 {
        return Err(Error::Validation("fx > 0 and fy > 0".into()));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Validation("alpha in [0,1]".into()));
    }
    Ok(())
}

fn normalized(v: Vector3<f64>) -> Result<Vector3<f64>> {
    let n = v.norm();
    if n > 0.0 && n.is_finite() {
        Ok(v / n)
    } else {
        Err(Error::NumericalFailure("degenerate bearing".into()))
    }
}

fn nonzero(p: &Vector3<f64>) -> bool {
    p.x != 0.0 || p.y != 0.0 || p.z != 0.0
}

/// Sphere offset `w` shared by the UCM and DS domain definitions.
fn sphere_offset(alpha: f64) -> f64 {
    if alpha <= 0.5 {
        alpha / (1.0 - alpha)
    } else {
        (1.0 - alpha) / alpha
    }
}

impl UcmParams {
    /// Converts the classic `(γ, ξ)` parameterization.
    pub fn from_legacy(gamma_x: f64, gamma_y: f64, cx: f64, cy: f64, xi: f64) -> Self {
        let alpha = xi / (1.0 + xi);
        Self {
            fx: gamma_x * (1.0 - alpha),
            fy: gamma_y * (1.0 - alpha),
            cx,
            cy,
            alpha,
        }
    }

    fn denominator(&self, p: &Vector3<f64>) -> f64 {
        let d = p.norm();
        self.alpha * d + (1.0 - self.alpha) * p.z
    }
}

/// See [`UcmParams::from_legacy`].
pub fn ucm_from_legacy(gamma_x: f64, gamma_y: f64, cx: f64, cy: f64, xi: f64) -> UcmParams {
    UcmParams::from_legacy(gamma_x, gamma_y, cx, cy, xi)
}

impl Projection for UcmParams {
    fn in_projection_domain(&self, p: &Vector3<f64>) -> bool {
        nonzero(p) && p.z > -sphere_offset(self.alpha) * p.norm()
    }

    fn in_unprojection_domain(&self, u: &Vector2<f64>) -> bool {
        if self.alpha <= 0.5 {
            return true;
        }
        let mx = (u.x - self.cx) / self.fx * (1.0 - self.alpha);
        let my = (u.y - self.cy) / self.fy * (1.0 - self.alpha);
        mx * mx + my * my <= (1.0 - self.alpha).powi(2) / (2.0 * self.alpha - 1.0)
    }

    fn project_unchecked(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let den = self.denominator(p);
        Vector2::new(self.fx * p.x / den + self.cx, self.fy * p.y / den + self.cy)
    }

    fn unproject_unchecked(&self, u: &Vector2<f64>) -> Result<Vector3<f64>> {
        if self.alpha >= 1.0 {
            // ξ is unbounded at α = 1; use the EUCM form with β = 1.
            return EucmParams {
                fx: self.fx,
                fy: self.fy,
                cx: self.cx,
                cy: self.cy,
                alpha: self.alpha,
                beta: 1.0,
            }
            .unproject_unchecked(u);
        }
        let mx = (u.x - self.cx) / self.fx * (1.0 - self.alpha);
        let my = (u.y - self.cy) / self.fy * (1.0 - self.alpha);
        let r2 = mx * mx + my * my;
        let xi = self.alpha / (1.0 - self.alpha);
        let disc = 1.0 + (1.0 - xi * xi) * r2;
        if disc < 0.0 {
            return Err(Error::OutOfDomain);
        }
        let factor = (xi + disc.sqrt()) / (1.0 + r2);
        normalized(Vector3::new(factor * mx, factor * my, factor - xi))
    }

    fn validate(&self) -> Result<()> {
        check_focal(self.fx, self.fy, self.cx, self.cy)?;
        check_alpha(self.alpha)
    }
}

impl EucmParams {
    fn d(&self, p: &Vector3<f64>) -> f64 {
        (self.beta * (p.x * p.x + p.y * p.y) + p.z * p.z).sqrt()
    }
}

impl Projection for EucmParams {
    fn in_projection_domain(&self, p: &Vector3<f64>) -> bool {
        if !nonzero(p) {
            return false;
        }
        let den = self.alpha * self.d(p) + (1.0 - self.alpha) * p.z;
        if self.alpha <= 0.5 {
            den > 0.0
        } else {
            den > 0.0
                && p.z >= (self.alpha - 1.0) * den / (2.0 * self.alpha - 1.0)
        }
    }

    fn in_unprojection_domain(&self, u: &Vector2<f64>) -> bool {
        if self.alpha <= 0.5 {
            return true;
        }
        let mx = (u.x - self.cx) / self.fx;
        let my = (u.y - self.cy) / self.fy;
        mx * mx + my * my <= 1.0 / (self.beta * (2.0 * self.alpha - 1.0))
    }

    fn project_unchecked(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let den = self.alpha * self.d(p) + (1.0 - self.alpha) * p.z;
        Vector2::new(self.fx * p.x / den + self.cx, self.fy * p.y / den + self.cy)
    }

    fn unproject_unchecked(&self, u: &Vector2<f64>) -> Result<Vector3<f64>> {
        let mx = (u.x - self.cx) / self.fx;
        let my = (u.y - self.cy) / self.fy;
        let r2 = mx * mx + my * my;
        let (a, b) = (self.alpha, self.beta);
        let root = 1.0 - (2.0 * a - 1.0) * b * r2;
        if root < 0.0 {
            return Err(Error::OutOfDomain);
        }
        let mz = (1.0 - b * a * a * r2) / (a * root.sqrt() + (1.0 - a));
        normalized(Vector3::new(mx, my, mz))
    }

    fn validate(&self) -> Result<()> {
        check_focal(self.fx, self.fy, self.cx, self.cy)?;
        check_alpha(self.alpha)?;
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Validation("beta > 0".into()));
        }
        Ok(())
    }
}

impl Projection for DsParams {
    fn in_projection_domain(&self, p: &Vector3<f64>) -> bool {
        if !nonzero(p) {
            return false;
        }
        let w1 = sphere_offset(self.alpha);
        let xi = self.xi;
        let w2 = (w1 + xi) / (2.0 * w1 * xi + xi * xi + 1.0).sqrt();
        p.z > -w2 * p.norm()
    }

    fn in_unprojection_domain(&self, u: &Vector2<f64>) -> bool {
        let mx = (u.x - self.cx) / self.fx;
        let my = (u.y - self.cy) / self.fy;
        let r2 = mx * mx + my * my;
        if self.alpha > 0.5 && r2 > 1.0 / (2.0 * self.alpha - 1.0) {
            return false;
        }
        let mz = ds_mz(self.alpha, r2);
        mz * mz + (1.0 - self.xi * self.xi) * r2 >= 0.0
    }

    fn project_unchecked(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let d1 = p.norm();
        let zs = self.xi * d1 + p.z;
        let d2 = (p.x * p.x + p.y * p.y + zs * zs).sqrt();
        let den = self.alpha * d2 + (1.0 - self.alpha) * zs;
        Vector2::new(self.fx * p.x / den + self.cx, self.fy * p.y / den + self.cy)
    }

    fn unproject_unchecked(&self, u: &Vector2<f64>) -> Result<Vector3<f64>> {
        let mx = (u.x - self.cx) / self.fx;
        let my = (u.y - self.cy) / self.fy;
        let r2 = mx * mx + my * my;
        let mz = ds_mz(self.alpha, r2);
        let disc = mz * mz + (1.0 - self.xi * self.xi) * r2;
        if disc < 0.0 || !mz.is_finite() {
            return Err(Error::OutOfDomain);
        }
        let factor = (mz * self.xi + disc.sqrt()) / (mz * mz + r2);
        normalized(Vector3::new(
            factor * mx,
            factor * my,
            factor * mz - self.xi,
        ))
    }

    fn validate(&self) -> Result<()> {
        check_focal(self.fx, self.fy, self.cx, self.cy)?;
        check_alpha(self.alpha)?;
        if !self.xi.is_finite() {
            return Err(Error::Validation("xi must be finite".into()));
        }
        Ok(())
    }
}

fn ds_mz(alpha: f64, r2: f64) -> f64 {
    let root = (1.0 - (2.0 * alpha - 1.0) * r2).max(0.0).sqrt();
    (1.0 - alpha * alpha * r2) / (alpha * root + 1.0 - alpha)
}

/// Radial polynomial shared by the KB and WoodScape families.
trait RadialPoly {
    fn intrinsics(&self) -> (f64, f64, f64, f64);
    /// Ascending coefficients of `d(θ)`.
    fn coefficients(&self) -> Vec<f64>;
    fn initial_theta(&self, r_u: f64) -> f64;

    fn radial_project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let (fx, fy, cx, cy) = self.intrinsics();
        let r = p.x.hypot(p.y);
        if r < AXIS_EPS {
            return Vector2::new(cx, cy);
        }
        let theta = r.atan2(p.z);
        let d = poly_eval(&self.coefficients(), theta);
        Vector2::new(fx * d * p.x / r + cx, fy * d * p.y / r + cy)
    }

    /// End of the increasing branch of `d`: the first stationary point in
    /// `(0, π]`, or `π`. Zero when `d` does not increase at the origin.
    fn theta_limit(&self) -> f64 {
        let coeffs = self.coefficients();
        let slope = |t: f64| poly_derivative(&coeffs, t);
        if !(slope(0.0) > 0.0) {
            return 0.0;
        }
        let step = THETA_MAX / MONOTONE_SAMPLES as f64;
        for i in 1..=MONOTONE_SAMPLES {
            let hi = i as f64 * step;
            if slope(hi) > 0.0 {
                continue;
            }
            let mut lo = hi - step;
            let mut hi = hi;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if slope(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return lo;
        }
        THETA_MAX
    }

    fn radial_in_unprojection_domain(&self, u: &Vector2<f64>, limit: f64) -> bool {
        let (fx, fy, cx, cy) = self.intrinsics();
        let r_u = ((u.x - cx) / fx).hypot((u.y - cy) / fy);
        r_u <= poly_eval(&self.coefficients(), limit)
    }

    fn radial_unproject(&self, u: &Vector2<f64>, limit: f64) -> Result<Vector3<f64>> {
        let (fx, fy, cx, cy) = self.intrinsics();
        let mx = (u.x - cx) / fx;
        let my = (u.y - cy) / fy;
        let r_u = mx.hypot(my);
        if r_u < AXIS_EPS {
            return Ok(Vector3::new(0.0, 0.0, 1.0));
        }
        let coeffs = self.coefficients();
        let theta = newton_scalar_in(
            |t| poly_eval(&coeffs, t) - r_u,
            |t| poly_derivative(&coeffs, t),
            self.initial_theta(r_u).clamp(0.0, limit),
            0.0,
            limit,
            &NewtonOptions::default(),
        )?;
        let s = theta.sin();
        normalized(Vector3::new(s * mx / r_u, s * my / r_u, theta.cos()))
    }

    /// Checks that the increasing branch of `d` reaches every pixel of an
    /// image, unless it already spans the whole sphere.
    fn covers_image(&self, size: ImageSize) -> Result<()> {
        let limit = self.theta_limit();
        if limit >= THETA_MAX {
            return Ok(());
        }
        let (fx, fy, cx, cy) = self.intrinsics();
        let (w, h) = (size.width as f64 - 1.0, size.height as f64 - 1.0);
        let corner = [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)]
            .iter()
            .map(|(x, y)| ((x - cx) / fx).hypot((y - cy) / fy))
            .fold(0.0, f64::max);
        if corner <= poly_eval(&self.coefficients(), limit) {
            Ok(())
        } else {
            Err(Error::Validation(
                "d(theta) strictly increasing up to the image corners".into(),
            ))
        }
    }
}

impl KbParams {
    pub fn poly(&self) -> [f64; 10] {
        let k = self.k;
        [0.0, 1.0, 0.0, k[0], 0.0, k[1], 0.0, k[2], 0.0, k[3]]
    }
}

impl RadialPoly for KbParams {
    fn intrinsics(&self) -> (f64, f64, f64, f64) {
        (self.fx, self.fy, self.cx, self.cy)
    }
    fn coefficients(&self) -> Vec<f64> {
        self.poly().to_vec()
    }
    fn initial_theta(&self, r_u: f64) -> f64 {
        r_u
    }
}

impl WoodscapeParams {
    pub fn poly(&self) -> [f64; 5] {
        let k = self.k;
        [0.0, k[0], k[1], k[2], k[3]]
    }
}

impl RadialPoly for WoodscapeParams {
    fn intrinsics(&self) -> (f64, f64, f64, f64) {
        (self.fx, self.fy, self.cx, self.cy)
    }
    fn coefficients(&self) -> Vec<f64> {
        self.poly().to_vec()
    }
    fn initial_theta(&self, r_u: f64) -> f64 {
        r_u / self.k[0]
    }
}

fn validate_radial<P: RadialPoly>(poly: &P) -> Result<()> {
    let (fx, fy, cx, cy) = poly.intrinsics();
    check_focal(fx, fy, cx, cy)?;
    let coeffs = poly.coefficients();
    if !coeffs.iter().all(|v| v.is_finite()) {
        return Err(Error::Validation("distortion coefficients must be finite".into()));
    }
    if poly.theta_limit() <= 0.0 {
        return Err(Error::Validation("d(theta) strictly increasing at 0".into()));
    }
    Ok(())
}

impl Projection for KbParams {
    fn in_projection_domain(&self, p: &Vector3<f64>) -> bool {
        nonzero(p)
    }
    fn in_unprojection_domain(&self, u: &Vector2<f64>) -> bool {
        self.radial_in_unprojection_domain(u, self.theta_limit())
    }
    fn project_unchecked(&self, p: &Vector3<f64>) -> Vector2<f64> {
        self.radial_project(p)
    }
    fn unproject_unchecked(&self, u: &Vector2<f64>) -> Result<Vector3<f64>> {
        self.radial_unproject(u, self.theta_limit())
    }
    fn validate(&self) -> Result<()> {
        validate_radial(self)
    }
}

impl Projection for WoodscapeParams {
    fn in_projection_domain(&self, p: &Vector3<f64>) -> bool {
        nonzero(p)
    }
    fn in_unprojection_domain(&self, u: &Vector2<f64>) -> bool {
        self.radial_in_unprojection_domain(u, self.theta_limit())
    }
    fn project_unchecked(&self, p: &Vector3<f64>) -> Vector2<f64> {
        self.radial_project(p)
    }
    fn unproject_unchecked(&self, u: &Vector2<f64>) -> Result<Vector3<f64>> {
        self.radial_unproject(u, self.theta_limit())
    }
    fn validate(&self) -> Result<()> {
        validate_radial(self)
    }
}

impl OccParams {
    fn affine(&self) -> Matrix2<f64> {
        Matrix2::new(self.c, self.d, self.e, 1.0)
    }

    /// Unprojection-side normalized coordinates and `m_z`.
    fn lift(&self, u: &Vector2<f64>) -> Option<Vector3<f64>> {
        let m = self
            .affine()
            .try_inverse()?
            * Vector2::new(u.x - self.cx, u.y - self.cy);
        let r_u = m.norm();
        let mz = poly_eval(&self.a, r_u);
        mz.is_finite().then(|| Vector3::new(m.x, m.y, mz))
    }
}

impl Projection for OccParams {
    fn in_projection_domain(&self, p: &Vector3<f64>) -> bool {
        nonzero(p)
    }

    fn in_unprojection_domain(&self, u: &Vector2<f64>) -> bool {
        let Some(m) = self.lift(u) else {
            return false;
        };
        if m.norm() == 0.0 {
            return false;
        }
        let back = self.project_unchecked(&m);
        back.iter().all(|v| v.is_finite()) && (back - u).norm() <= OCC_CONSISTENCY_PX
    }

    fn project_unchecked(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let r = p.x.hypot(p.y);
        if r < AXIS_EPS {
            return Vector2::new(self.cx, self.cy);
        }
        let theta = (p.z / r).atan();
        let rho = poly_eval(&self.k, theta);
        let s = self.affine() * Vector2::new(rho * p.x / r, rho * p.y / r);
        Vector2::new(s.x + self.cx, s.y + self.cy)
    }

    fn unproject_unchecked(&self, u: &Vector2<f64>) -> Result<Vector3<f64>> {
        let m = self.lift(u).ok_or(Error::OutOfDomain)?;
        normalized(m)
    }

    fn validate(&self) -> Result<()> {
        let scalars = [self.c, self.d, self.e, self.cx, self.cy];
        if !scalars
            .iter()
            .chain(self.a.iter())
            .chain(self.k.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::Validation("occ parameters must be finite".into()));
        }
        if self.c - self.d * self.e == 0.0 {
            return Err(Error::Validation("affine determinant c - d*e != 0".into()));
        }
        if !(2..=16).contains(&self.k.len()) {
            return Err(Error::Validation(
                "forward polynomial needs between 2 and 16 coefficients".into(),
            ));
        }
        Ok(())
    }
}

impl RtParams {
    /// Distorts normalized pinhole coordinates.
    pub fn distort(&self, p: &Vector2<f64>) -> Vector2<f64> {
        let (x, y) = (p.x, p.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        Vector2::new(
            radial * x + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x),
            radial * y + 2.0 * self.p2 * x * y + self.p1 * (r2 + 2.0 * y * y),
        )
    }

    /// Jacobian of [`RtParams::distort`] with respect to `(x', y')`.
    pub fn distort_jacobian(&self, p: &Vector2<f64>) -> Matrix2<f64> {
        let (x, y) = (p.x, p.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        // d(radial)/d(r²)
        let slope = self.k1 + 2.0 * r2 * self.k2 + 3.0 * r2 * r2 * self.k3;
        let cross = 2.0 * x * y * slope + 2.0 * self.p1 * x + 2.0 * self.p2 * y;
        Matrix2::new(
            radial + 2.0 * x * x * slope + 2.0 * self.p1 * y + 6.0 * self.p2 * x,
            cross,
            cross,
            radial + 2.0 * y * y * slope + 2.0 * self.p2 * x + 6.0 * self.p1 * y,
        )
    }

    fn undistort(&self, u: &Vector2<f64>) -> Result<Vector2<f64>> {
        let target = Vector2::new((u.x - self.cx) / self.fx, (u.y - self.cy) / self.fy);
        newton_2d(
            |p| self.distort(p) - target,
            |p| self.distort_jacobian(p),
            target,
            &NewtonOptions::default(),
        )
    }
}

impl Projection for RtParams {
    fn in_projection_domain(&self, p: &Vector3<f64>) -> bool {
        p.z > 0.0
    }

    fn in_unprojection_domain(&self, u: &Vector2<f64>) -> bool {
        self.undistort(u).is_ok()
    }

    fn project_unchecked(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let d = self.distort(&Vector2::new(p.x / p.z, p.y / p.z));
        Vector2::new(self.fx * d.x + self.cx, self.fy * d.y + self.cy)
    }

    fn unproject_unchecked(&self, u: &Vector2<f64>) -> Result<Vector3<f64>> {
        let p = self.undistort(u)?;
        normalized(Vector3::new(p.x, p.y, 1.0))
    }

    fn validate(&self) -> Result<()> {
        check_focal(self.fx, self.fy, self.cx, self.cy)?;
        if ![self.k1, self.k2, self.k3, self.p1, self.p2]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Validation("distortion coefficients must be finite".into()));
        }
        Ok(())
    }
}

macro_rules! dispatch {
    ($params:expr, $p:ident => $body:expr) => {
        match $params {
            ModelParams::Ucm($p) => $body,
            ModelParams::Eucm($p) => $body,
            ModelParams::Ds($p) => $body,
            ModelParams::Kb($p) => $body,
            ModelParams::Occ($p) => $body,
            ModelParams::Rt($p) => $body,
            ModelParams::Woodscape($p) => $body,
        }
    };
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Ucm(_) => ModelKind::Ucm,
            ModelParams::Eucm(_) => ModelKind::Eucm,
            ModelParams::Ds(_) => ModelKind::Ds,
            ModelParams::Kb(_) => ModelKind::Kb,
            ModelParams::Occ(_) => ModelKind::Occ,
            ModelParams::Rt(_) => ModelKind::Rt,
            ModelParams::Woodscape(_) => ModelKind::Woodscape,
        }
    }

    /// Parameters in canonical order: intrinsics then distortion, or
    /// `cx, cy, a0..a4` for OCC.
    pub fn to_vector(&self) -> Vec<f64> {
        match self {
            ModelParams::Ucm(p) => vec![p.fx, p.fy, p.cx, p.cy, p.alpha],
            ModelParams::Eucm(p) => vec![p.fx, p.fy, p.cx, p.cy, p.alpha, p.beta],
            ModelParams::Ds(p) => vec![p.fx, p.fy, p.cx, p.cy, p.alpha, p.xi],
            ModelParams::Kb(p) => {
                let mut v = vec![p.fx, p.fy, p.cx, p.cy];
                v.extend_from_slice(&p.k);
                v
            }
            ModelParams::Woodscape(p) => {
                let mut v = vec![p.fx, p.fy, p.cx, p.cy];
                v.extend_from_slice(&p.k);
                v
            }
            ModelParams::Occ(p) => {
                let mut v = vec![p.cx, p.cy];
                v.extend_from_slice(&p.a);
                v
            }
            ModelParams::Rt(p) => vec![p.fx, p.fy, p.cx, p.cy, p.k1, p.k2, p.k3, p.p1, p.p2],
        }
    }

    /// Distortion coefficients only (the tail of [`ModelParams::to_vector`]).
    pub fn distortion_vector(&self) -> Vec<f64> {
        let skip = if self.kind() == ModelKind::Occ { 2 } else { 4 };
        self.to_vector()[skip..].to_vec()
    }
}

impl CameraModel {
    pub fn new(params: ModelParams, image_size: ImageSize) -> Result<Self> {
        ImageSize::new(image_size.width, image_size.height)?;
        dispatch!(&params, p => p.validate())?;
        let theta_limit = match &params {
            ModelParams::Kb(p) => {
                p.covers_image(image_size)?;
                p.theta_limit()
            }
            ModelParams::Woodscape(p) => {
                p.covers_image(image_size)?;
                p.theta_limit()
            }
            _ => THETA_MAX,
        };
        Ok(Self {
            params,
            image_size,
            theta_limit,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn image_size(&self) -> ImageSize {
        self.image_size
    }

    pub fn kind(&self) -> ModelKind {
        self.params.kind()
    }

    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>> {
        dispatch!(&self.params, m => m.project(p))
    }

    pub fn unproject(&self, u: &Vector2<f64>) -> Result<Vector3<f64>> {
        if !u.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if !self.in_unprojection_domain(u) {
            return Err(Error::OutOfDomain);
        }
        match &self.params {
            ModelParams::Kb(p) => p.radial_unproject(u, self.theta_limit),
            ModelParams::Woodscape(p) => p.radial_unproject(u, self.theta_limit),
            params => dispatch!(params, m => m.unproject_unchecked(u)),
        }
    }

    pub fn in_projection_domain(&self, p: &Vector3<f64>) -> bool {
        dispatch!(&self.params, m => m.in_projection_domain(p))
    }

    pub fn in_unprojection_domain(&self, u: &Vector2<f64>) -> bool {
        match &self.params {
            ModelParams::Kb(p) => p.radial_in_unprojection_domain(u, self.theta_limit),
            ModelParams::Woodscape(p) => p.radial_in_unprojection_domain(u, self.theta_limit),
            params => dispatch!(params, m => m.in_unprojection_domain(u)),
        }
    }
}
