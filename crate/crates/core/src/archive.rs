//! On-disk model container: a magic header, a JSON manifest, and raw
//! little-endian f64 arrays, each guarded by a SHA-256 digest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::density::{IntensityKde, SpatialKde};
use crate::error::{Error, Result};
use crate::grid::{LevelSetField, ScalarField};
use crate::model::{PriorModel, ShapeAtlas, FORMAT_VERSION};

const MAGIC: &[u8; 8] = b"SPNCMODL";

#[derive(Debug, Serialize, Deserialize)]
struct EstimatorMeta {
    n: u64,
    bandwidth: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayMeta {
    name: String,
    len: u64,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    dims: Vec<usize>,
    intensity_fg: EstimatorMeta,
    intensity_bg: EstimatorMeta,
    context_fg: EstimatorMeta,
    context_bg: EstimatorMeta,
    shape_bandwidth: f64,
    arrays: Vec<ArrayMeta>,
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn to_le_bytes(xs: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn intensity_arrays(name: &str, kde: &IntensityKde) -> (EstimatorMeta, Vec<(String, Vec<f64>)>) {
    let (values, counts, n, bandwidth, table) = kde.to_parts();
    let meta = EstimatorMeta { n, bandwidth };
    let arrays = vec![
        (format!("{name}.values"), values),
        (format!("{name}.counts"), counts),
        (format!("{name}.table"), table),
    ];
    (meta, arrays)
}

pub fn save_model(model: &PriorModel, path: &Path) -> Result<()> {
    let (meta_ifg, ifg) = intensity_arrays("intensity_fg", model.intensity_fg());
    let (meta_ibg, ibg) = intensity_arrays("intensity_bg", model.intensity_bg());

    let mut arrays: Vec<(String, Vec<f64>)> = Vec::new();
    arrays.extend(ifg);
    arrays.extend(ibg);
    arrays.push((
        "context_fg.map".into(),
        model.context_fg().map().data().to_vec(),
    ));
    arrays.push((
        "context_bg.map".into(),
        model.context_bg().map().data().to_vec(),
    ));
    for (i, field) in model.shapes().fields().iter().enumerate() {
        arrays.push((format!("shape_{i:03}"), field.values().to_vec()));
    }

    let mut metas = Vec::with_capacity(arrays.len());
    let mut payloads = Vec::with_capacity(arrays.len());
    for (name, xs) in &arrays {
        let bytes = to_le_bytes(xs);
        metas.push(ArrayMeta {
            name: name.clone(),
            len: xs.len() as u64,
            sha256: hex_digest(&bytes),
        });
        payloads.push(bytes);
    }

    let manifest = Manifest {
        format_version: model.format_version(),
        dims: model.dims().to_vec(),
        intensity_fg: meta_ifg,
        intensity_bg: meta_ibg,
        context_fg: EstimatorMeta {
            n: model.context_fg().n_samples(),
            bandwidth: model.context_fg().bandwidth(),
        },
        context_bg: EstimatorMeta {
            n: model.context_bg().n_samples(),
            bandwidth: model.context_bg().bandwidth(),
        },
        shape_bandwidth: model.shapes().bandwidth(),
        arrays: metas,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)
        .map_err(|e| Error::Format(format!("manifest serialization failed: {e}")))?;

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write =
        |bytes: &[u8]| -> Result<()> { w.write_all(bytes).map_err(|e| Error::io(path, e)) };
    write(MAGIC)?;
    write(&(manifest_bytes.len() as u64).to_le_bytes())?;
    write(&manifest_bytes)?;
    for bytes in &payloads {
        write(bytes)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads exactly `buf.len()` bytes, treating a short file as corruption.
fn read_or_truncated(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::ChecksumMismatch("archive is truncated".into())
        } else {
            Error::io(path, e)
        }
    })
}

fn read_array(r: &mut impl Read, meta: &ArrayMeta, path: &Path) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; (meta.len as usize) * 8];
    read_or_truncated(r, &mut bytes, path)?;
    if hex_digest(&bytes) != meta.sha256 {
        return Err(Error::ChecksumMismatch(meta.name.clone()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn load_model(path: &Path) -> Result<PriorModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    read_or_truncated(&mut r, &mut magic, path)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a model archive".into()));
    }
    let mut len_bytes = [0u8; 8];
    read_or_truncated(&mut r, &mut len_bytes, path)?;
    let manifest_len = u64::from_le_bytes(len_bytes) as usize;
    if manifest_len > (1 << 30) {
        return Err(Error::Format(format!(
            "implausible manifest length {manifest_len}"
        )));
    }
    let mut manifest_bytes = vec![0u8; manifest_len];
    read_or_truncated(&mut r, &mut manifest_bytes, path)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::Format(format!("bad manifest: {e}")))?;

    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::FormatVersionMismatch {
            found: manifest.format_version,
            expected: FORMAT_VERSION,
        });
    }

    let mut arrays = Vec::with_capacity(manifest.arrays.len());
    for meta in &manifest.arrays {
        arrays.push(read_array(&mut r, meta, path)?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Format("trailing data after arrays".into()));
    }

    let expect = |name: &str, idx: usize| -> Result<()> {
        match manifest.arrays.get(idx) {
            Some(m) if m.name == name => Ok(()),
            _ => Err(Error::Format(format!(
                "array {name} missing or out of order"
            ))),
        }
    };
    let names = [
        "intensity_fg.values",
        "intensity_fg.counts",
        "intensity_fg.table",
        "intensity_bg.values",
        "intensity_bg.counts",
        "intensity_bg.table",
        "context_fg.map",
        "context_bg.map",
    ];
    for (i, name) in names.iter().enumerate() {
        expect(name, i)?;
    }
    let n_shapes = manifest.arrays.len().saturating_sub(names.len());
    for i in 0..n_shapes {
        expect(&format!("shape_{i:03}"), names.len() + i)?;
    }

    let mut it = arrays.into_iter();
    let mut next = || it.next().expect("array count checked above");
    let intensity_fg = IntensityKde::from_parts(
        next(),
        next(),
        manifest.intensity_fg.n,
        manifest.intensity_fg.bandwidth,
        next(),
    )?;
    let intensity_bg = IntensityKde::from_parts(
        next(),
        next(),
        manifest.intensity_bg.n,
        manifest.intensity_bg.bandwidth,
        next(),
    )?;
    let context_fg = SpatialKde::from_raw(
        ScalarField::from_data(&manifest.dims, next())?,
        manifest.context_fg.bandwidth,
        manifest.context_fg.n,
    );
    let context_bg = SpatialKde::from_raw(
        ScalarField::from_data(&manifest.dims, next())?,
        manifest.context_bg.bandwidth,
        manifest.context_bg.n,
    );
    let mut fields = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        fields.push(LevelSetField::from_field(ScalarField::from_data(
            &manifest.dims,
            next(),
        )?));
    }
    let shapes = ShapeAtlas::from_parts(fields, manifest.shape_bandwidth)?;

    Ok(PriorModel {
        intensity_fg,
        intensity_bg,
        context_fg,
        context_bg,
        shapes,
        dims: manifest.dims,
        format_version: manifest.format_version,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BinaryMask;
    use crate::model::{build_model, BuildConfig, TrainingSet};

    fn sample_model() -> PriorModel {
        let mut img = ScalarField::new(&[6, 5], 0.3).unwrap();
        let mut mask = BinaryMask::new(&[6, 5], false).unwrap();
        for r in 1..4 {
            for c in 1..3 {
                img.set(&[r, c], 0.7 + 0.01 * (r + c) as f64);
                mask.set(&[r, c], true);
            }
        }
        let mut mask2 = BinaryMask::new(&[6, 5], false).unwrap();
        for r in 2..5 {
            for c in 2..4 {
                mask2.set(&[r, c], true);
            }
        }
        let ts = TrainingSet::new(vec![(img.clone(), mask), (img, mask2)]).unwrap();
        build_model(&ts, &BuildConfig::default()).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let model = sample_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(model, loaded);
    }

    #[test]
    fn truncated_archive_is_a_checksum_error() {
        let model = sample_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        for keep in [bytes.len() - 100, bytes.len() / 2] {
            let cut = dir.path().join("cut.bin");
            std::fs::write(&cut, &bytes[..keep]).unwrap();
            assert!(matches!(load_model(&cut), Err(Error::ChecksumMismatch(_))));
        }
    }

    #[test]
    fn corrupted_array_names_the_culprit() {
        let model = sample_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&model, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 5;
        bytes[last] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        match load_model(&path) {
            Err(Error::ChecksumMismatch(name)) => {
                assert!(name.starts_with("shape_"), "got {name}");
            }
            other => panic!("expected checksum mismatch, got {other:?}"),
        }
    }

    #[test]
    fn future_version_is_rejected() {
        let model = sample_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let needle = b"\"format_version\":1";
        let pos = bytes
            .windows(needle.len())
            .position(|w| w == needle)
            .unwrap();
        let mut patched = bytes.clone();
        patched[pos + needle.len() - 1] = b'9';
        std::fs::write(&path, &patched).unwrap();
        match load_model(&path) {
            Err(Error::FormatVersionMismatch { found, expected }) => {
                assert_eq!(found, 9);
                assert_eq!(expected, FORMAT_VERSION);
            }
            other => panic!("expected version mismatch, got {other:?}"),
        }
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"PNG\x0d\x0a\x1a\x0a padding beyond the header").unwrap();
        assert!(matches!(load_model(&path), Err(Error::Format(_))));
    }
}
