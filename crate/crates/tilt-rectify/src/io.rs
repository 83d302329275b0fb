//! Bit-exact file formats: 16-bit PNG normal/depth maps, strict JSON schemas
//! for intrinsics, histograms, summaries and rectifier results, and CSV rows.
//!
//! All writers are canonical (sorted keys, fixed float formatting) so outputs
//! are diffable, and atomic (temp file + rename). Normal maps encode each
//! component as `round((n + 1)/2 * 65535)` per 16-bit channel with the
//! all-zero pixel reserved for invalid; depth maps store millimeters in a
//! 16-bit gray channel with 0 reserved for invalid.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::geometry::{CameraIntrinsics, UnitVec3};
use crate::math::Vec3;
use crate::metrics::EvalSummary;
use crate::planes::DepthMap;
use crate::rectifier::RectifierResult;
use crate::stats::{Binning, SphericalHistogram, StatsError};
use crate::warp::{ImageGrid, NormalMap};

#[derive(Debug, Error)]
pub enum IoFormatError {
    #[error("file error for {path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("range error: {0}")]
    Range(String),
}

fn file_err(path: &Path, source: std::io::Error) -> IoFormatError {
    IoFormatError::File { path: path.display().to_string(), source }
}

/// Writes bytes through a temp file in the target directory, then renames.
fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), IoFormatError> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);

    let file_name = path
        .file_name()
        .ok_or_else(|| IoFormatError::Validation(format!("{} has no file name", path.display())))?;
    let tmp_name = format!(
        ".{}.{}.{}.tmp",
        file_name.to_string_lossy(),
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    );
    let tmp_path = path.with_file_name(tmp_name);
    let write_then_rename = (|| {
        let mut f = fs::File::create(&tmp_path)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp_path, path)
    })();
    if let Err(e) = write_then_rename {
        let _ = fs::remove_file(&tmp_path);
        return Err(file_err(path, e));
    }
    Ok(())
}

/// Canonical float formatting: 9 significant digits, shortest of decimal and
/// exponential styles (a `%.9g` analogue with Rust-style exponents).
pub fn fmt_g9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    debug_assert!(v.is_finite());
    // Exponent from the normalized scientific form.
    let sci = format!("{:.8e}", v);
    let exp: i32 = sci
        .split('e')
        .nth(1)
        .and_then(|e| e.parse().ok())
        .unwrap_or(0);
    if (-4..9).contains(&exp) {
        let frac_digits = (8 - exp).max(0) as usize;
        let s = format!("{:.*}", frac_digits, v);
        // Only fractional zeros are padding; integer zeros are significant.
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let mantissa = sci.split('e').next().unwrap();
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        format!("{mantissa}e{exp}")
    }
}

fn fmt_array(values: impl Iterator<Item = f64>) -> String {
    let items: Vec<String> = values.map(fmt_g9).collect();
    format!("[{}]", items.join(","))
}

// ---------------------------------------------------------------------------
// Normal maps: 16-bit RGB PNG.
// ---------------------------------------------------------------------------

const U16_MAX: f64 = 65535.0;

fn encode_component(c: f64) -> u16 {
    (((c + 1.0) / 2.0 * U16_MAX).round().clamp(0.0, U16_MAX)) as u16
}

pub fn write_normal_map(map: &NormalMap, path: &Path) -> Result<(), IoFormatError> {
    let (w, h) = (map.width(), map.height());
    let mut raw = Vec::with_capacity((w * h * 6) as usize);
    for y in 0..h {
        for x in 0..w {
            let mut px = [0u16; 3];
            if map.is_valid(x, y) {
                let n = map.raw(x, y);
                px = [
                    encode_component(n.x),
                    encode_component(n.y),
                    encode_component(n.z),
                ];
                if px == [0, 0, 0] {
                    // Unreachable for unit vectors, but the invalid code must
                    // never collide with a valid pixel: nudge one step.
                    px[2] = 1;
                }
            }
            for v in px {
                raw.extend_from_slice(&v.to_be_bytes());
            }
        }
    }
    let mut bytes = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut bytes, w, h);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Sixteen);
        let mut writer = encoder
            .write_header()
            .map_err(|e| IoFormatError::Format(e.to_string()))?;
        writer
            .write_image_data(&raw)
            .map_err(|e| IoFormatError::Format(e.to_string()))?;
    }
    atomic_write(path, &bytes)
}

pub fn read_normal_map(path: &Path) -> Result<NormalMap, IoFormatError> {
    let file = fs::File::open(path).map_err(|e| file_err(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| IoFormatError::Format(e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| IoFormatError::Format(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Sixteen || info.color_type != png::ColorType::Rgb {
        return Err(IoFormatError::Format(format!(
            "normal maps are 16-bit RGB PNG, found {:?} {:?}",
            info.bit_depth, info.color_type
        )));
    }
    let (w, h) = (info.width, info.height);
    let mut map = NormalMap::invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            let base = ((y * w + x) * 6) as usize;
            let c = |i: usize| u16::from_be_bytes([buf[base + 2 * i], buf[base + 2 * i + 1]]);
            let px = [c(0), c(1), c(2)];
            if px == [0, 0, 0] {
                continue;
            }
            let v = Vec3::new(
                px[0] as f64 / U16_MAX * 2.0 - 1.0,
                px[1] as f64 / U16_MAX * 2.0 - 1.0,
                px[2] as f64 / U16_MAX * 2.0 - 1.0,
            );
            // Re-normalize to absorb quantization; reject garbage encodings.
            if v.norm() > 1e-6 {
                map.set(x, y, UnitVec3::from_vec3(v).expect("norm checked"));
            }
        }
    }
    Ok(map)
}

// ---------------------------------------------------------------------------
// Images: 16-bit RGB PNG over linear [0, 1] samples.
// ---------------------------------------------------------------------------

/// Writes a 3-channel image, clamping samples to `[0, 1]` and scaling to the
/// full 16-bit range.
pub fn write_image(img: &ImageGrid, path: &Path) -> Result<(), IoFormatError> {
    if img.channels() != 3 {
        return Err(IoFormatError::Validation(format!(
            "image files hold 3 channels, got {}",
            img.channels()
        )));
    }
    let (w, h) = (img.width(), img.height());
    let mut raw = Vec::with_capacity((w * h * 6) as usize);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = (img.get(x, y, c).clamp(0.0, 1.0) * U16_MAX).round() as u16;
                raw.extend_from_slice(&v.to_be_bytes());
            }
        }
    }
    let mut bytes = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut bytes, w, h);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Sixteen);
        let mut writer = encoder
            .write_header()
            .map_err(|e| IoFormatError::Format(e.to_string()))?;
        writer
            .write_image_data(&raw)
            .map_err(|e| IoFormatError::Format(e.to_string()))?;
    }
    atomic_write(path, &bytes)
}

pub fn read_image(path: &Path) -> Result<ImageGrid, IoFormatError> {
    let file = fs::File::open(path).map_err(|e| file_err(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| IoFormatError::Format(e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| IoFormatError::Format(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Sixteen || info.color_type != png::ColorType::Rgb {
        return Err(IoFormatError::Format(format!(
            "images are 16-bit RGB PNG, found {:?} {:?}",
            info.bit_depth, info.color_type
        )));
    }
    let (w, h) = (info.width, info.height);
    let mut img = ImageGrid::zeros(w, h, 3);
    for y in 0..h {
        for x in 0..w {
            let base = ((y * w + x) * 6) as usize;
            for c in 0..3u32 {
                let i = base + 2 * c as usize;
                let v = u16::from_be_bytes([buf[i], buf[i + 1]]);
                img.set(x, y, c, v as f64 / U16_MAX);
            }
        }
    }
    Ok(img)
}

// ---------------------------------------------------------------------------
// Plane masks: 8-bit grayscale PNG, 255 = in-mask.
// ---------------------------------------------------------------------------

pub fn write_mask(
    mask: &crate::planes::PlaneMask,
    width: u32,
    height: u32,
    path: &Path,
) -> Result<(), IoFormatError> {
    if !mask.in_bounds(width, height) {
        return Err(IoFormatError::Validation("mask pixel out of bounds".into()));
    }
    let mut raw = vec![0u8; (width * height) as usize];
    for &(x, y) in mask.iter() {
        raw[(y * width + x) as usize] = 255;
    }
    let mut bytes = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut bytes, width, height);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| IoFormatError::Format(e.to_string()))?;
        writer
            .write_image_data(&raw)
            .map_err(|e| IoFormatError::Format(e.to_string()))?;
    }
    atomic_write(path, &bytes)
}

/// Reads a mask; any nonzero sample is in-mask. Returns the mask plus the
/// image dimensions.
pub fn read_mask(path: &Path) -> Result<(crate::planes::PlaneMask, u32, u32), IoFormatError> {
    let file = fs::File::open(path).map_err(|e| file_err(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| IoFormatError::Format(e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| IoFormatError::Format(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight || info.color_type != png::ColorType::Grayscale {
        return Err(IoFormatError::Format(format!(
            "masks are 8-bit grayscale PNG, found {:?} {:?}",
            info.bit_depth, info.color_type
        )));
    }
    let (w, h) = (info.width, info.height);
    let mut mask = crate::planes::PlaneMask::new();
    for y in 0..h {
        for x in 0..w {
            if buf[(y * w + x) as usize] != 0 {
                mask.insert(x, y);
            }
        }
    }
    Ok((mask, w, h))
}

// ---------------------------------------------------------------------------
// Depth maps: 16-bit grayscale PNG, millimeters.
// ---------------------------------------------------------------------------

pub fn write_depth_map(map: &DepthMap, path: &Path) -> Result<(), IoFormatError> {
    let (w, h) = (map.width(), map.height());
    let mut raw = Vec::with_capacity((w * h * 2) as usize);
    for y in 0..h {
        for x in 0..w {
            let mm: u16 = match map.get(x, y) {
                Some(d) => {
                    if d > 65.535 {
                        return Err(IoFormatError::Range(format!(
                            "depth {d} m at ({x}, {y}) exceeds the 65.535 m encoding range"
                        )));
                    }
                    // Valid depths must stay distinguishable from invalid 0.
                    ((d * 1000.0).round() as u16).max(1)
                }
                None => 0,
            };
            raw.extend_from_slice(&mm.to_be_bytes());
        }
    }
    let mut bytes = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut bytes, w, h);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Sixteen);
        let mut writer = encoder
            .write_header()
            .map_err(|e| IoFormatError::Format(e.to_string()))?;
        writer
            .write_image_data(&raw)
            .map_err(|e| IoFormatError::Format(e.to_string()))?;
    }
    atomic_write(path, &bytes)
}

pub fn read_depth_map(path: &Path) -> Result<DepthMap, IoFormatError> {
    let file = fs::File::open(path).map_err(|e| file_err(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| IoFormatError::Format(e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| IoFormatError::Format(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Sixteen || info.color_type != png::ColorType::Grayscale {
        return Err(IoFormatError::Format(format!(
            "depth maps are 16-bit grayscale PNG, found {:?} {:?}",
            info.bit_depth, info.color_type
        )));
    }
    let (w, h) = (info.width, info.height);
    let mut map = DepthMap::invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            let base = ((y * w + x) * 2) as usize;
            let mm = u16::from_be_bytes([buf[base], buf[base + 1]]);
            if mm > 0 {
                map.set(x, y, mm as f64 / 1000.0);
            }
        }
    }
    Ok(map)
}

// ---------------------------------------------------------------------------
// JSON schemas.
// ---------------------------------------------------------------------------

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics, IoFormatError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let k: CameraIntrinsics =
        serde_json::from_str(&text).map_err(|e| IoFormatError::Schema(e.to_string()))?;
    k.validate()
        .map_err(|e| IoFormatError::Validation(e.to_string()))?;
    Ok(k)
}

pub fn intrinsics_json(k: &CameraIntrinsics) -> String {
    format!(
        "{{\"cx\":{},\"cy\":{},\"fx\":{},\"fy\":{},\"height\":{},\"width\":{}}}",
        fmt_g9(k.cx),
        fmt_g9(k.cy),
        fmt_g9(k.fx),
        fmt_g9(k.fy),
        k.height,
        k.width
    )
}

pub fn write_intrinsics(k: &CameraIntrinsics, path: &Path) -> Result<(), IoFormatError> {
    k.validate()
        .map_err(|e| IoFormatError::Validation(e.to_string()))?;
    atomic_write(path, intrinsics_json(k).as_bytes())
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct HistogramDto {
    n_theta: u32,
    n_phi: u32,
    floor: f64,
    mass: Vec<f64>,
}

pub fn read_histogram(path: &Path) -> Result<SphericalHistogram, IoFormatError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let dto: HistogramDto =
        serde_json::from_str(&text).map_err(|e| IoFormatError::Schema(e.to_string()))?;
    if dto.n_theta == 0 || dto.n_phi == 0 {
        return Err(IoFormatError::Validation("binning must be at least 1x1".into()));
    }
    SphericalHistogram::from_mass(Binning::new(dto.n_theta, dto.n_phi), dto.floor, dto.mass)
        .map_err(|e: StatsError| IoFormatError::Validation(e.to_string()))
}

pub fn histogram_json(hist: &SphericalHistogram) -> String {
    format!(
        "{{\"floor\":{},\"mass\":{},\"n_phi\":{},\"n_theta\":{}}}",
        fmt_g9(hist.floor()),
        fmt_array(hist.mass().iter().copied()),
        hist.binning().n_phi,
        hist.binning().n_theta
    )
}

pub fn write_histogram(hist: &SphericalHistogram, path: &Path) -> Result<(), IoFormatError> {
    atomic_write(path, histogram_json(hist).as_bytes())
}

pub fn read_eval_summary(path: &Path) -> Result<EvalSummary, IoFormatError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoFormatError::Schema(e.to_string()))
}

pub fn eval_summary_json(s: &EvalSummary) -> String {
    format!(
        "{{\"count\":{},\"mean\":{},\"median\":{},\"p11_25\":{},\"p22_5\":{},\"p30\":{},\"p5\":{},\"p7_5\":{},\"rmse\":{}}}",
        s.count,
        fmt_g9(s.mean),
        fmt_g9(s.median),
        fmt_g9(s.p11_25),
        fmt_g9(s.p22_5),
        fmt_g9(s.p30),
        fmt_g9(s.p5),
        fmt_g9(s.p7_5),
        fmt_g9(s.rmse)
    )
}

pub fn write_eval_summary(s: &EvalSummary, path: &Path) -> Result<(), IoFormatError> {
    atomic_write(path, eval_summary_json(s).as_bytes())
}

pub const EVAL_CSV_HEADER: &str = "mean,median,rmse,p5,p7_5,p11_25,p22_5,p30,count";

pub fn eval_summary_csv_row(s: &EvalSummary) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        fmt_g9(s.mean),
        fmt_g9(s.median),
        fmt_g9(s.rmse),
        fmt_g9(s.p5),
        fmt_g9(s.p7_5),
        fmt_g9(s.p11_25),
        fmt_g9(s.p22_5),
        fmt_g9(s.p30),
        s.count
    )
}

pub fn rectifier_result_json(r: &RectifierResult) -> String {
    format!(
        "{{\"converged\":{},\"e_star\":[{},{},{}],\"objective_trace\":{}}}",
        r.converged,
        fmt_g9(r.e_star.x()),
        fmt_g9(r.e_star.y()),
        fmt_g9(r.e_star.z()),
        fmt_array(r.objective_trace.iter().copied())
    )
}

pub fn write_rectifier_result(r: &RectifierResult, path: &Path) -> Result<(), IoFormatError> {
    atomic_write(path, rectifier_result_json(r).as_bytes())
}

/// Writes arbitrary text atomically (used by CLI manifests).
pub fn write_text(path: &Path, text: &str) -> Result<(), IoFormatError> {
    atomic_write(path, text.as_bytes())
}
