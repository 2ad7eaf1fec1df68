//! Conversion quality metrics: reprojection error, parameter error,
//! recovered-image remapping, PSNR and SSIM.

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::model::{CameraModel, ModelParams};
use crate::sampler::Correspondence;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReprojectionStats {
    /// Root mean squared pixel distance.
    pub rms: f64,
    pub max: f64,
    /// Samples the output model could project.
    pub count: usize,
}

/// Reprojection statistics of `output` over correspondences whose bearings
/// came from the input model. Samples outside the output's projection domain
/// are skipped.
pub fn reprojection_stats(output: &CameraModel, samples: &[Correspondence]) -> Result<ReprojectionStats> {
    let mut sum = 0.0;
    let mut max = 0.0f64;
    let mut count = 0;
    for s in samples {
        if let Ok(p) = output.project(&s.bearing) {
            let err = (p - s.u).norm();
            sum += err * err;
            max = max.max(err);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::AllSamplesInvalid);
    }
    Ok(ReprojectionStats {
        rms: (sum / count as f64).sqrt(),
        max,
        count,
    })
}

/// Reprojection error `π(π⁻¹(u, input), output) - u` over `pixels`.
pub fn reprojection_error(
    input: &CameraModel,
    output: &CameraModel,
    pixels: &[Vector2<f64>],
) -> Result<ReprojectionStats> {
    let samples: Vec<Correspondence> = pixels
        .iter()
        .filter_map(|u| {
            input
                .unproject(u)
                .ok()
                .map(|bearing| Correspondence { u: *u, bearing })
        })
        .collect();
    reprojection_stats(output, &samples)
}

fn check_lengths(est: &[f64], gt: &[f64]) -> Result<()> {
    if est.len() != gt.len() || est.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "parameter vectors of length {} and {}",
            est.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// L2 norm of `est - gt`.
pub fn parameter_error(est: &[f64], gt: &[f64]) -> Result<f64> {
    check_lengths(est, gt)?;
    Ok(est
        .iter()
        .zip(gt)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Root mean squared difference of coefficient vectors.
pub fn coeff_rmse(est: &[f64], gt: &[f64]) -> Result<f64> {
    Ok(parameter_error(est, gt)? / (est.len() as f64).sqrt())
}

fn same_family(est: &ModelParams, gt: &ModelParams) -> Result<()> {
    if est.kind() == gt.kind() {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "cannot compare {} parameters against {}",
            est.kind(),
            gt.kind()
        )))
    }
}

/// Parameter error of two models of one family, over the canonical vectors.
pub fn model_parameter_error(est: &ModelParams, gt: &ModelParams) -> Result<f64> {
    same_family(est, gt)?;
    parameter_error(&est.to_vector(), &gt.to_vector())
}

/// Coefficient RMSE over the distortion coefficients, up to the last one
/// that is nonzero in `gt`.
pub fn distortion_rmse(est: &ModelParams, gt: &ModelParams) -> Result<f64> {
    same_family(est, gt)?;
    let gt_coeffs = gt.distortion_vector();
    let len = gt_coeffs.iter().rposition(|v| *v != 0.0).map_or(gt_coeffs.len(), |i| i + 1);
    coeff_rmse(&est.distortion_vector()[..len], &gt_coeffs[..len])
}

/// 8-bit image with 1 or 3 interleaved channels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::DimensionMismatch(format!("{channels} channels")));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for a {width}x{height}x{channels} raster",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    fn same_shape(&self, other: &Raster) -> Result<()> {
        if (self.width, self.height, self.channels) != (other.width, other.height, other.channels) {
            return Err(Error::DimensionMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )));
        }
        Ok(())
    }

    /// ITU-R BT.601 luma, or the single channel as-is.
    pub fn luma(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.data.iter().map(|&v| v as f64).collect();
        }
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }

    /// Bilinear sample at continuous pixel coordinates, `None` outside the
    /// image. Pixel centers sit at integer coordinates.
    fn bilinear(&self, x: f64, y: f64, out: &mut [u8]) -> bool {
        const EDGE: f64 = 1e-6;
        let (wmax, hmax) = ((self.width - 1) as f64, (self.height - 1) as f64);
        if !(x >= -EDGE && y >= -EDGE && x <= wmax + EDGE && y <= hmax + EDGE) {
            return false;
        }
        let x = x.clamp(0.0, wmax);
        let y = y.clamp(0.0, hmax);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (tx, ty) = (x - x0 as f64, y - y0 as f64);
        for (c, slot) in out.iter_mut().enumerate() {
            let top = (1.0 - tx) * self.get(x0, y0, c) as f64 + tx * self.get(x1, y0, c) as f64;
            let bottom = (1.0 - tx) * self.get(x0, y1, c) as f64 + tx * self.get(x1, y1, c) as f64;
            let v = (1.0 - ty) * top + ty * bottom;
            *slot = v.round().clamp(0.0, 255.0) as u8;
        }
        true
    }
}

/// Result of [`remap`]: the recovered image and its validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Remapped {
    pub image: Raster,
    /// Row-major, one flag per pixel.
    pub mask: Vec<bool>,
    pub invalid: usize,
}

/// Recovers `image`, taken with `input`, as seen through `output`.
///
/// Each output pixel is unprojected through `output`, projected through
/// `input` and bilinearly sampled from the source. Pixels failing either
/// model's domain or landing outside the source are zero and masked out.
pub fn remap(image: &Raster, input: &CameraModel, output: &CameraModel) -> Result<Remapped> {
    for model in [input, output] {
        let size = model.image_size();
        if (size.width as usize, size.height as usize) != (image.width, image.height) {
            return Err(Error::DimensionMismatch(format!(
                "model image size {}x{} vs raster {}x{}",
                size.width, size.height, image.width, image.height
            )));
        }
    }
    let (w, h, ch) = (image.width, image.height, image.channels);
    let mut data = vec![0u8; w * h * ch];
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let u = Vector2::new(x as f64, y as f64);
            let Ok(src) = output.unproject(&u).and_then(|b| input.project(&b)) else {
                continue;
            };
            let idx = y * w + x;
            if image.bilinear(src.x, src.y, &mut data[idx * ch..(idx + 1) * ch]) {
                mask[idx] = true;
            }
        }
    }
    let invalid = mask.iter().filter(|m| !**m).count();
    Ok(Remapped {
        image: Raster::new(w, h, ch, data)?,
        mask,
        invalid,
    })
}

fn check_mask(a: &Raster, mask: Option<&[bool]>) -> Result<()> {
    if let Some(m) = mask {
        if m.len() != a.width * a.height {
            return Err(Error::DimensionMismatch("mask length".into()));
        }
    }
    Ok(())
}

/// PSNR in dB with peak 255 over all channels; infinite for identical
/// images.
pub fn psnr(a: &Raster, b: &Raster) -> Result<f64> {
    psnr_masked(a, b, None)
}

/// PSNR restricted to pixels whose mask flag is set.
pub fn psnr_masked(a: &Raster, b: &Raster, mask: Option<&[bool]>) -> Result<f64> {
    a.same_shape(b)?;
    check_mask(a, mask)?;
    let ch = a.channels;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, (pa, pb)) in a.data.chunks_exact(ch).zip(b.data.chunks_exact(ch)).enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        for (x, y) in pa.iter().zip(pb) {
            let d = *x as f64 - *y as f64;
            sum += d * d;
        }
        count += ch;
    }
    if count == 0 {
        return Err(Error::Validation("no pixels to compare".into()));
    }
    let mse = sum / count as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// SSIM window side.
pub const SSIM_WINDOW: usize = 8;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// Mean SSIM over all 8×8 windows (stride 1) of the luma planes.
pub fn ssim(a: &Raster, b: &Raster) -> Result<f64> {
    ssim_masked(a, b, None)
}

/// Sums of every `SSIM_WINDOW`-wide horizontal then vertical run.
fn box_sums(plane: &[f64], w: usize, h: usize) -> Vec<f64> {
    let n = SSIM_WINDOW;
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = line[x..x + n].iter().sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|k| rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over windows lying entirely inside the mask.
pub fn ssim_masked(a: &Raster, b: &Raster, mask: Option<&[bool]>) -> Result<f64> {
    a.same_shape(b)?;
    check_mask(a, mask)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::DimensionMismatch(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels"
        )));
    }
    let la = a.luma();
    let lb = b.luma();
    let aa: Vec<f64> = la.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = lb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = la.iter().zip(&lb).map(|(x, y)| x * y).collect();
    let sa = box_sums(&la, w, h);
    let sb = box_sums(&lb, w, h);
    let saa = box_sums(&aa, w, h);
    let sbb = box_sums(&bb, w, h);
    let sab = box_sums(&ab, w, h);
    let inside = mask.map(|m| {
        let plane: Vec<f64> = m.iter().map(|&v| if v { 0.0 } else { 1.0 }).collect();
        box_sums(&plane, w, h)
    });

    let area = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for i in 0..sa.len() {
        if inside.as_ref().is_some_and(|bad| bad[i] > 0.0) {
            continue;
        }
        let (ma, mb) = (sa[i] / area, sb[i] / area);
        let va = saa[i] / area - ma * ma;
        let vb = sbb[i] / area - mb * mb;
        let cov = sab[i] / area - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        windows += 1;
    }
    if windows == 0 {
        return Err(Error::Validation("no complete ssim window inside the mask".into()));
    }
    Ok(total / windows as f64)
}
