//! File formats: binary PGM for 2-D images and masks, MetaImage-style
//! header + raw pairs for 3-D data and level-set fields, and contour
//! overlay rendering.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, LevelSetField, ScalarField};

/// Conventional extension for images and masks on a grid of this rank.
pub fn image_extension(ndim: usize) -> &'static str {
    if ndim == 2 {
        "pgm"
    } else {
        "mhd"
    }
}

fn format_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}: {msg}", path.display()))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn pgm_bytes(dims: &[usize], samples: impl Iterator<Item = u16>, maxval: u16) -> Vec<u8> {
    let (rows, cols) = (dims[0], dims[1]);
    let mut out = Vec::with_capacity(32 + rows * cols * 2);
    out.extend_from_slice(format!("P5\n{cols} {rows}\n{maxval}\n").as_bytes());
    if maxval > 255 {
        for s in samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    } else {
        for s in samples {
            out.push(s as u8);
        }
    }
    out
}

struct PgmPayload {
    dims: Vec<usize>,
    maxval: u16,
    samples: Vec<u16>,
}

fn parse_pgm(bytes: &[u8], path: &Path) -> Result<PgmPayload> {
    // header tokens are whitespace-separated, with # comments to end of line
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token()? != "P5" {
        return Err(format_err(path, "not a binary PGM (missing P5 magic)"));
    }
    let cols: usize = token()?
        .parse()
        .map_err(|_| format_err(path, "bad width"))?;
    let rows: usize = token()?
        .parse()
        .map_err(|_| format_err(path, "bad height"))?;
    let maxval: u32 = token()?
        .parse()
        .map_err(|_| format_err(path, "bad maxval"))?;
    if !(1..=65535).contains(&maxval) {
        return Err(format_err(path, format!("unsupported maxval {maxval}")));
    }
    let maxval = maxval as u16;
    // exactly one whitespace byte separates the header from the samples
    pos += 1;
    let n = rows * cols;
    let data = &bytes[pos.min(bytes.len())..];
    let samples: Vec<u16> = if maxval > 255 {
        if data.len() < n * 2 {
            return Err(format_err(path, "sample data truncated"));
        }
        data[..n * 2]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        if data.len() < n {
            return Err(format_err(path, "sample data truncated"));
        }
        data[..n].iter().map(|&b| b as u16).collect()
    };
    Ok(PgmPayload {
        dims: vec![rows, cols],
        maxval,
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ElementType {
    Uchar,
    Ushort,
    Double,
}

impl ElementType {
    fn name(self) -> &'static str {
        match self {
            ElementType::Uchar => "MET_UCHAR",
            ElementType::Ushort => "MET_USHORT",
            ElementType::Double => "MET_DOUBLE",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "MET_UCHAR" => Some(ElementType::Uchar),
            "MET_USHORT" => Some(ElementType::Ushort),
            "MET_DOUBLE" => Some(ElementType::Double),
            _ => None,
        }
    }

    fn byte_width(self) -> usize {
        match self {
            ElementType::Uchar => 1,
            ElementType::Ushort => 2,
            ElementType::Double => 8,
        }
    }
}

/// DimSize lists the fastest-varying axis first; grid dims store it last.
fn write_meta(path: &Path, dims: &[usize], elem: ElementType, payload: &[u8]) -> Result<()> {
    let raw_path = path.with_extension("raw");
    let raw_name = raw_path
        .file_name()
        .ok_or_else(|| format_err(path, "path has no file name"))?
        .to_string_lossy()
        .into_owned();
    let dim_size: Vec<String> = dims.iter().rev().map(|d| d.to_string()).collect();
    let header = format!(
        "ObjectType = Image\nNDims = {}\nDimSize = {}\nElementType = {}\nElementByteOrderMSB = False\nElementDataFile = {}\n",
        dims.len(),
        dim_size.join(" "),
        elem.name(),
        raw_name,
    );
    write_bytes(path, header.as_bytes())?;
    write_bytes(&raw_path, payload)
}

struct MetaPayload {
    dims: Vec<usize>,
    elem: ElementType,
    bytes: Vec<u8>,
}

fn read_meta(path: &Path, bytes: &[u8]) -> Result<MetaPayload> {
    let text = std::str::from_utf8(bytes).map_err(|_| format_err(path, "header is not text"))?;
    let mut ndims = None;
    let mut dim_size: Option<Vec<usize>> = None;
    let mut elem = None;
    let mut data_file = None;
    let mut msb_first = false;
    for line in text.lines() {
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "NDims" => ndims = value.parse::<usize>().ok(),
            "DimSize" => {
                let parsed: Option<Vec<usize>> =
                    value.split_whitespace().map(|t| t.parse().ok()).collect();
                dim_size = parsed;
            }
            "ElementType" => elem = ElementType::parse(value),
            "ElementDataFile" => data_file = Some(value.to_string()),
            "ElementByteOrderMSB" => msb_first = value.eq_ignore_ascii_case("true"),
            _ => {}
        }
    }
    let ndims = ndims.ok_or_else(|| format_err(path, "missing NDims"))?;
    let dim_size = dim_size.ok_or_else(|| format_err(path, "missing DimSize"))?;
    let elem = elem.ok_or_else(|| format_err(path, "missing or unsupported ElementType"))?;
    let data_file = data_file.ok_or_else(|| format_err(path, "missing ElementDataFile"))?;
    if msb_first {
        return Err(format_err(path, "big-endian payloads are not supported"));
    }
    if dim_size.len() != ndims || dim_size.contains(&0) {
        return Err(format_err(path, "inconsistent NDims/DimSize"));
    }
    let dims: Vec<usize> = dim_size.into_iter().rev().collect();
    let raw_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&data_file);
    let payload = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let expected: usize = dims.iter().product::<usize>() * elem.byte_width();
    if payload.len() < expected {
        return Err(format_err(&raw_path, "voxel data truncated"));
    }
    Ok(MetaPayload {
        dims,
        elem,
        bytes: payload,
    })
}

fn looks_like_pgm(bytes: &[u8]) -> bool {
    bytes.starts_with(b"P5")
}

/// Reads an image and normalizes intensities to [0,1] by the dtype maximum.
pub fn read_image(path: &Path) -> Result<ScalarField> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if looks_like_pgm(&bytes) {
        let pgm = parse_pgm(&bytes, path)?;
        let scale = 1.0 / pgm.maxval as f64;
        let data = pgm.samples.iter().map(|&s| s as f64 * scale).collect();
        return ScalarField::from_data(&pgm.dims, data);
    }
    let meta = read_meta(path, &bytes)?;
    let data: Vec<f64> = match meta.elem {
        ElementType::Uchar => meta.bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        ElementType::Ushort => meta
            .bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64 / 65535.0)
            .collect(),
        ElementType::Double => {
            return Err(format_err(path, "expected integer voxels for an image"))
        }
    };
    ScalarField::from_data(&meta.dims, data)
}

/// Reads a mask; any nonzero voxel is foreground.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if looks_like_pgm(&bytes) {
        let pgm = parse_pgm(&bytes, path)?;
        let data = pgm.samples.iter().map(|&s| s != 0).collect();
        return BinaryMask::from_data(&pgm.dims, data);
    }
    let meta = read_meta(path, &bytes)?;
    let data: Vec<bool> = match meta.elem {
        ElementType::Uchar => meta.bytes.iter().map(|&b| b != 0).collect(),
        ElementType::Ushort => meta
            .bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) != 0)
            .collect(),
        ElementType::Double => return Err(format_err(path, "expected integer voxels for a mask")),
    };
    BinaryMask::from_data(&meta.dims, data)
}

/// Writes 16-bit voxels: PGM for 2-D grids, MetaImage-style for 3-D.
pub fn write_image(path: &Path, img: &ScalarField) -> Result<()> {
    let samples = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16);
    if img.ndim() == 2 {
        write_bytes(path, &pgm_bytes(img.dims(), samples, 65535))
    } else {
        let mut payload = Vec::with_capacity(img.len() * 2);
        for s in samples {
            payload.extend_from_slice(&s.to_le_bytes());
        }
        write_meta(path, img.dims(), ElementType::Ushort, &payload)
    }
}

/// Writes 8-bit voxels, foreground as 255.
pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let samples = mask.data().iter().map(|&b| if b { 255u16 } else { 0 });
    if mask.ndim() == 2 {
        write_bytes(path, &pgm_bytes(mask.dims(), samples, 255))
    } else {
        let payload: Vec<u8> = samples.map(|s| s as u8).collect();
        write_meta(path, mask.dims(), ElementType::Uchar, &payload)
    }
}

/// Level-set fields always use the header + raw f64 pair, any rank.
pub fn write_level_set(path: &Path, phi: &LevelSetField) -> Result<()> {
    let mut payload = Vec::with_capacity(phi.len() * 8);
    for v in phi.values() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    write_meta(path, phi.dims(), ElementType::Double, &payload)
}

pub fn read_level_set(path: &Path) -> Result<LevelSetField> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let meta = read_meta(path, &bytes)?;
    if meta.elem != ElementType::Double {
        return Err(format_err(path, "expected MET_DOUBLE voxels"));
    }
    let data: Vec<f64> = meta
        .bytes
        .chunks_exact(8)
        .take(meta.dims.iter().product())
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(LevelSetField::from_field(ScalarField::from_data(
        &meta.dims, data,
    )?))
}

const OVERLAY_IMAGE_CEILING: f64 = 0.65;
const OVERLAY_TRUTH_LEVEL: f64 = 0.85;
const OVERLAY_PREDICTION_LEVEL: f64 = 1.0;

fn paint_overlay(
    img: &ScalarField,
    prediction: &BinaryMask,
    truth: Option<&BinaryMask>,
) -> ScalarField {
    let lo = img.min();
    let hi = img.max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut data: Vec<f64> = img
        .data()
        .iter()
        .map(|&v| (v - lo) / span * OVERLAY_IMAGE_CEILING)
        .collect();
    if let Some(t) = truth {
        for i in t.boundary() {
            data[i] = OVERLAY_TRUTH_LEVEL;
        }
    }
    for i in prediction.boundary() {
        data[i] = OVERLAY_PREDICTION_LEVEL;
    }
    ScalarField::from_data(img.dims(), data).expect("overlay keeps image dims")
}

fn central_slice(field: &ScalarField, axis: usize) -> ScalarField {
    let dims = field.dims();
    let fixed = dims[axis] / 2;
    let out_dims: Vec<usize> = dims
        .iter()
        .enumerate()
        .filter(|&(a, _)| a != axis)
        .map(|(_, &e)| e)
        .collect();
    let mut out = ScalarField::new(&out_dims, 0.0).expect("slice dims are valid");
    for i in 0..out.len() {
        let oc = out.coords_of(i);
        let mut full = Vec::with_capacity(dims.len());
        let mut it = oc.iter();
        for a in 0..dims.len() {
            if a == axis {
                full.push(fixed);
            } else {
                full.push(*it.next().unwrap());
            }
        }
        out.data_mut()[i] = field.at(&full);
    }
    out
}

fn write_gray_pgm(path: &Path, field: &ScalarField) -> Result<()> {
    let samples = field
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u16);
    write_bytes(path, &pgm_bytes(field.dims(), samples, 255))
}

/// Renders prediction (white) and optional ground-truth (light gray)
/// contours on the dimmed image. 2-D gives one PGM; 3-D gives the central
/// slice along each axis. Returns the written paths.
pub fn write_overlays(
    base: &Path,
    img: &ScalarField,
    prediction: &BinaryMask,
    truth: Option<&BinaryMask>,
) -> Result<Vec<PathBuf>> {
    let painted = paint_overlay(img, prediction, truth);
    if img.ndim() == 2 {
        let path = base.with_extension("pgm");
        write_gray_pgm(&path, &painted)?;
        return Ok(vec![path]);
    }
    let stem = base
        .file_name()
        .ok_or_else(|| format_err(base, "path has no file name"))?
        .to_string_lossy()
        .into_owned();
    let dir = base.parent().unwrap_or_else(|| Path::new("."));
    let mut written = Vec::new();
    for axis in 0..img.ndim() {
        let path = dir.join(format!("{stem}_axis{axis}.pgm"));
        write_gray_pgm(&path, &central_slice(&painted, axis))?;
        written.push(path);
    }
    Ok(written)
}

/// Writes a list of text lines with LF endings regardless of platform.
pub fn write_text(path: &Path, lines: &[String]) -> Result<()> {
    let mut out = Vec::new();
    for line in lines {
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}
