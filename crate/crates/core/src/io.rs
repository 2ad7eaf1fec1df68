//! Model parameter documents (YAML) and binary PGM/PPM images.
//!
//! A model document looks like
//!
//! ```yaml
//! model: kb
//! image_size: {width: 512, height: 512}
//! intrinsics: {fx: 190.97, fy: 190.98, cx: 254.93, cy: 256.90}
//! distortion: {k1: 0.0034823, k2: 0.00071503, k3: -0.0020532, k4: 0.00020293}
//! ```
//!
//! OCC documents carry `intrinsics: {c, d, e, cx, cy}` and
//! `distortion: {a: [a0..a4], k: [k0..kp]}`. A UCM document may instead give
//! `legacy_ucm: {gamma_x, gamma_y, xi}` together with `intrinsics: {cx, cy}`
//! and no `distortion` block.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Raster;
use crate::model::{
    ucm_from_legacy, CameraModel, DsParams, EucmParams, ImageSize, KbParams, ModelKind, ModelParams,
    OccParams, RtParams, WoodscapeParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SizeDoc {
    width: u32,
    height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PinholeDoc {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AffineDoc {
    c: f64,
    d: f64,
    e: f64,
    cx: f64,
    cy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrincipalPointDoc {
    cx: f64,
    cy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlphaDoc {
    alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlphaBetaDoc {
    alpha: f64,
    beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlphaXiDoc {
    alpha: f64,
    xi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct K4Doc {
    k1: f64,
    k2: f64,
    k3: f64,
    k4: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RtDoc {
    k1: f64,
    k2: f64,
    k3: f64,
    p1: f64,
    p2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OccDoc {
    a: [f64; 5],
    k: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LegacyUcmDoc {
    gamma_x: f64,
    gamma_y: f64,
    xi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document<I, D> {
    model: String,
    image_size: SizeDoc,
    intrinsics: I,
    distortion: D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LegacyDocument {
    model: String,
    image_size: SizeDoc,
    intrinsics: PrincipalPointDoc,
    legacy_ucm: LegacyUcmDoc,
}

#[derive(Deserialize)]
struct Header {
    model: String,
    legacy_ucm: Option<serde_yaml::Value>,
}

fn parse_error(err: serde_yaml::Error) -> Error {
    let line = err.location().map_or(0, |l| l.line());
    let mut message = err.to_string();
    if let Some(pos) = message.rfind(" at line ") {
        message.truncate(pos);
    }
    Error::Parse { line, message }
}

fn typed<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_yaml::from_str(text).map_err(parse_error)
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Validation("numbers must be finite".into()))
    }
}

fn pinhole_doc<D: DeserializeOwned>(text: &str) -> Result<(ImageSize, PinholeDoc, D)> {
    let doc: Document<PinholeDoc, D> = typed(text)?;
    let i = doc.intrinsics;
    check_finite(&[i.fx, i.fy, i.cx, i.cy])?;
    Ok((ImageSize::new(doc.image_size.width, doc.image_size.height)?, i, doc.distortion))
}

/// Parses and validates a model document.
pub fn parse_model(text: &str) -> Result<CameraModel> {
    let header: Header = typed(text)?;
    let kind: ModelKind = header
        .model
        .parse()
        .map_err(|_| Error::Validation(format!("unknown model kind `{}`", header.model)))?;

    if header.legacy_ucm.is_some() {
        if kind != ModelKind::Ucm {
            return Err(Error::Validation("legacy_ucm is only valid for model ucm".into()));
        }
        let doc: LegacyDocument = typed(text)?;
        let (pp, l) = (doc.intrinsics, doc.legacy_ucm);
        check_finite(&[pp.cx, pp.cy, l.gamma_x, l.gamma_y, l.xi])?;
        if !(l.xi >= 0.0 && l.gamma_x > 0.0 && l.gamma_y > 0.0) {
            return Err(Error::Validation("legacy_ucm needs xi >= 0 and gamma > 0".into()));
        }
        let params = ucm_from_legacy(l.gamma_x, l.gamma_y, pp.cx, pp.cy, l.xi);
        let size = ImageSize::new(doc.image_size.width, doc.image_size.height)?;
        return CameraModel::new(ModelParams::Ucm(params), size);
    }

    let (size, params) = match kind {
        ModelKind::Ucm => {
            let (size, i, d) = pinhole_doc::<AlphaDoc>(text)?;
            check_finite(&[d.alpha])?;
            let params = ModelParams::Ucm(crate::model::UcmParams {
                fx: i.fx,
                fy: i.fy,
                cx: i.cx,
                cy: i.cy,
                alpha: d.alpha,
            });
            (size, params)
        }
        ModelKind::Eucm => {
            let (size, i, d) = pinhole_doc::<AlphaBetaDoc>(text)?;
            check_finite(&[d.alpha, d.beta])?;
            let params = ModelParams::Eucm(EucmParams {
                fx: i.fx,
                fy: i.fy,
                cx: i.cx,
                cy: i.cy,
                alpha: d.alpha,
                beta: d.beta,
            });
            (size, params)
        }
        ModelKind::Ds => {
            let (size, i, d) = pinhole_doc::<AlphaXiDoc>(text)?;
            check_finite(&[d.alpha, d.xi])?;
            let params = ModelParams::Ds(DsParams {
                fx: i.fx,
                fy: i.fy,
                cx: i.cx,
                cy: i.cy,
                alpha: d.alpha,
                xi: d.xi,
            });
            (size, params)
        }
        ModelKind::Kb | ModelKind::Woodscape => {
            let (size, i, d) = pinhole_doc::<K4Doc>(text)?;
            let k = [d.k1, d.k2, d.k3, d.k4];
            check_finite(&k)?;
            let params = if kind == ModelKind::Kb {
                ModelParams::Kb(KbParams {
                    fx: i.fx,
                    fy: i.fy,
                    cx: i.cx,
                    cy: i.cy,
                    k,
                })
            } else {
                ModelParams::Woodscape(WoodscapeParams {
                    fx: i.fx,
                    fy: i.fy,
                    cx: i.cx,
                    cy: i.cy,
                    k,
                })
            };
            (size, params)
        }
        ModelKind::Rt => {
            let (size, i, d) = pinhole_doc::<RtDoc>(text)?;
            check_finite(&[d.k1, d.k2, d.k3, d.p1, d.p2])?;
            let params = ModelParams::Rt(RtParams {
                fx: i.fx,
                fy: i.fy,
                cx: i.cx,
                cy: i.cy,
                k1: d.k1,
                k2: d.k2,
                k3: d.k3,
                p1: d.p1,
                p2: d.p2,
            });
            (size, params)
        }
        ModelKind::Occ => {
            let doc: Document<AffineDoc, OccDoc> = typed(text)?;
            let (i, d) = (doc.intrinsics, doc.distortion);
            check_finite(&[i.c, i.d, i.e, i.cx, i.cy])?;
            check_finite(&d.a)?;
            check_finite(&d.k)?;
            let size = ImageSize::new(doc.image_size.width, doc.image_size.height)?;
            let params = ModelParams::Occ(OccParams {
                c: i.c,
                d: i.d,
                e: i.e,
                cx: i.cx,
                cy: i.cy,
                a: d.a,
                k: d.k,
            });
            (size, params)
        }
    };
    CameraModel::new(params, size)
}

fn emit<T: Serialize>(doc: &T) -> String {
    serde_yaml::to_string(doc).expect("model documents always serialize")
}

/// Serializes a model with shortest round-trip number formatting.
pub fn model_to_yaml(model: &CameraModel) -> String {
    let size = model.image_size();
    let image_size = SizeDoc {
        width: size.width,
        height: size.height,
    };
    let model_name = model.kind().as_str().to_string();
    let doc = |fx, fy, cx, cy| PinholeDoc { fx, fy, cx, cy };
    macro_rules! pinhole {
        ($p:expr, $d:expr) => {
            emit(&Document {
                model: model_name,
                image_size,
                intrinsics: doc($p.fx, $p.fy, $p.cx, $p.cy),
                distortion: $d,
            })
        };
    }
    match model.params() {
        ModelParams::Ucm(p) => pinhole!(p, AlphaDoc { alpha: p.alpha }),
        ModelParams::Eucm(p) => pinhole!(
            p,
            AlphaBetaDoc {
                alpha: p.alpha,
                beta: p.beta
            }
        ),
        ModelParams::Ds(p) => pinhole!(
            p,
            AlphaXiDoc {
                alpha: p.alpha,
                xi: p.xi
            }
        ),
        ModelParams::Kb(p) => pinhole!(
            p,
            K4Doc {
                k1: p.k[0],
                k2: p.k[1],
                k3: p.k[2],
                k4: p.k[3]
            }
        ),
        ModelParams::Woodscape(p) => pinhole!(
            p,
            K4Doc {
                k1: p.k[0],
                k2: p.k[1],
                k3: p.k[2],
                k4: p.k[3]
            }
        ),
        ModelParams::Rt(p) => pinhole!(
            p,
            RtDoc {
                k1: p.k1,
                k2: p.k2,
                k3: p.k3,
                p1: p.p1,
                p2: p.p2
            }
        ),
        ModelParams::Occ(p) => emit(&Document {
            model: model_name,
            image_size,
            intrinsics: AffineDoc {
                c: p.c,
                d: p.d,
                e: p.e,
                cx: p.cx,
                cy: p.cy,
            },
            distortion: OccDoc {
                a: p.a,
                k: p.k.clone(),
            },
        }),
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CameraModel> {
    parse_model(&fs::read_to_string(path)?)
}

pub fn save_model(model: &CameraModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model_to_yaml(model))?;
    Ok(())
}

/// Reads a binary 8-bit PGM (`P5`) or PPM (`P6`) image.
pub fn load_raster(path: impl AsRef<Path>) -> Result<Raster> {
    decode_raster(&fs::read(path)?)
}

pub fn decode_raster(bytes: &[u8]) -> Result<Raster> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        Some(magic) if magic[0] == b'P' => {
            return Err(Error::UnsupportedFormat(format!(
                "netpbm variant {}",
                String::from_utf8_lossy(magic)
            )))
        }
        _ => return Err(Error::UnsupportedFormat("not a PGM/PPM file".into())),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Whitespace and comments may separate header fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedHeader("expected an unsigned integer".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedHeader("header value out of range".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::MalformedHeader("missing separator before pixel data".into()));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("maxval {maxval}, only 255 is supported")));
    }
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader("zero image dimension".into()));
    }
    let len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::MalformedHeader("image dimensions overflow".into()))?;
    let data = bytes
        .get(pos..pos + len)
        .ok_or_else(|| Error::MalformedHeader(format!("expected {len} bytes of pixel data")))?;
    Raster::new(width, height, channels, data.to_vec())
}

pub fn encode_raster(image: &Raster) -> Vec<u8> {
    let magic = if image.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.data());
    out
}

pub fn save_raster(image: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode_raster(image))?;
    Ok(())
}
