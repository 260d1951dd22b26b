//! On-disk formats.
//!
//! * Snapshots: `SNP1` magic, `u32` rows, `u32` cols (little endian), then
//!   `rows·cols` little-endian `f64` in column-major order. Metadata lives in
//!   a JSON sidecar next to it (same stem, `.json` extension).
//! * Models: JSON with `layer_sizes`, `l_enc`, row-major nested `weights`,
//!   `biases` and free-form `metadata`.
//! * Metrics: CSV with one row per epoch.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{Architecture, MlpAutoencoder, Params};
use crate::optim::MetricsRecord;
use crate::pde_data::{Dataset, Equation, SnapshotMeta, SnapshotSet};

const MAGIC: &[u8; 4] = b"SNP1";
const HEADER: usize = 12;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn json_error(what: &'static str, e: serde_json::Error) -> Error {
    Error::Parse {
        what,
        location: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    }
}

pub fn encode_matrix(x: &Mat) -> Result<Vec<u8>> {
    let dims = [x.rows(), x.cols()].map(u32::try_from);
    let [Ok(rows), Ok(cols)] = dims else {
        return Err(Error::invalid(format!("matrix {:?} too large for the snapshot format", x.shape())));
    };
    let mut out = Vec::with_capacity(HEADER + 8 * x.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for v in x.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Mat> {
    let err = |offset: usize, message: String| Error::Parse {
        what: "snapshot file",
        location: format!("byte {offset}"),
        message,
    };
    if bytes.len() < HEADER {
        return Err(err(bytes.len(), format!("header needs {HEADER} bytes, file has {}", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(err(0, "missing SNP1 magic".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (rows, cols) = (word(4), word(8));
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER))
        .ok_or_else(|| err(4, format!("dimensions {rows}x{cols} overflow")))?;
    if bytes.len() != expected {
        return Err(err(
            bytes.len().min(expected),
            format!("{rows}x{cols} matrix needs {expected} bytes, file has {}", bytes.len()),
        ));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (k, chunk) in bytes[HEADER..].chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        if !v.is_finite() {
            return Err(err(HEADER + 8 * k, format!("non-finite value {v}")));
        }
        data.push(v);
    }
    Mat::from_col_major(rows, cols, data)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_snapshots(path: &Path, set: &SnapshotSet) -> Result<()> {
    set.validate()?;
    write(path, &encode_matrix(&set.x)?)?;
    let meta = serde_json::to_vec_pretty(&set.meta).expect("metadata serialises");
    write(&sidecar_path(path), &meta)
}

pub fn load_snapshots(path: &Path) -> Result<SnapshotSet> {
    let x = decode_matrix(&read(path)?)?;
    let side = sidecar_path(path);
    let meta: SnapshotMeta =
        serde_json::from_slice(&read(&side)?).map_err(|e| json_error("snapshot metadata", e))?;
    let set = SnapshotSet { x, meta };
    set.validate()?;
    Ok(set)
}

/// Standard file names of a generated dataset inside `dir`.
pub fn dataset_paths(dir: &Path, equation: Equation) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{equation}_train.snp")),
        dir.join(format!("{equation}_test.snp")),
    )
}

pub fn save_dataset(dir: &Path, equation: Equation, data: &Dataset) -> Result<(PathBuf, PathBuf)> {
    let (train, test) = dataset_paths(dir, equation);
    save_snapshots(&train, &data.train)?;
    save_snapshots(&test, &data.test)?;
    Ok((train, test))
}

pub fn load_dataset(dir: &Path, equation: Equation) -> Result<Dataset> {
    let (train, test) = dataset_paths(dir, equation);
    let data = Dataset {
        train: load_snapshots(&train)?,
        test: load_snapshots(&test)?,
    };
    if data.train.dim() != data.test.dim() {
        return Err(Error::DimensionMismatch {
            op: "train/test snapshots",
            left: data.train.x.shape(),
            right: data.test.x.shape(),
        });
    }
    Ok(data)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    layer_sizes: Vec<usize>,
    l_enc: usize,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
    #[serde(default)]
    metadata: ModelMetadata,
}

pub fn model_to_json(model: &MlpAutoencoder, metadata: &ModelMetadata) -> String {
    let file = ModelFile {
        layer_sizes: model.arch().layer_sizes().to_vec(),
        l_enc: model.l_enc(),
        weights: model.params.weights.iter().map(Mat::to_rows).collect(),
        biases: model.params.biases.clone(),
        metadata: metadata.clone(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("model serialises");
    s.push('\n');
    s
}

pub fn model_from_json(text: &str) -> Result<(MlpAutoencoder, ModelMetadata)> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| json_error("model file", e))?;
    let field_err = |location: String, message: String| Error::Parse {
        what: "model file",
        location,
        message,
    };
    let arch = Architecture::new(file.layer_sizes.clone(), file.l_enc)
        .map_err(|e| field_err("layer_sizes".into(), e.to_string()))?;
    if file.weights.len() != arch.depth() {
        return Err(field_err(
            "weights".into(),
            format!("{} layers listed, layer_sizes implies {}", file.weights.len(), arch.depth()),
        ));
    }
    if file.biases.len() != arch.depth() {
        return Err(field_err(
            "biases".into(),
            format!("{} layers listed, layer_sizes implies {}", file.biases.len(), arch.depth()),
        ));
    }
    let sizes = arch.layer_sizes();
    let mut weights = Vec::with_capacity(arch.depth());
    for (k, rows) in file.weights.iter().enumerate() {
        let (r, c) = (sizes[k + 1], sizes[k]);
        if rows.len() != r {
            return Err(field_err(format!("weights[{k}]"), format!("expected {r} rows, found {}", rows.len())));
        }
        if let Some(i) = rows.iter().position(|row| row.len() != c) {
            return Err(field_err(
                format!("weights[{k}][{i}]"),
                format!("expected {c} entries, found {}", rows[i].len()),
            ));
        }
        weights.push(Mat::from_rows(rows)?);
    }
    for (k, b) in file.biases.iter().enumerate() {
        if b.len() != sizes[k + 1] {
            return Err(field_err(
                format!("biases[{k}]"),
                format!("expected {} entries, found {}", sizes[k + 1], b.len()),
            ));
        }
    }
    let model = MlpAutoencoder::from_params(
        arch,
        Params {
            weights,
            biases: file.biases,
        },
    )?;
    Ok((model, file.metadata))
}

pub fn save_model(path: &Path, model: &MlpAutoencoder, metadata: &ModelMetadata) -> Result<()> {
    write(path, model_to_json(model, metadata).as_bytes())
}

pub fn load_model(path: &Path) -> Result<(MlpAutoencoder, ModelMetadata)> {
    let bytes = read(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse {
        what: "model file",
        location: format!("byte {}", e.valid_up_to()),
        message: "invalid UTF-8".into(),
    })?;
    model_from_json(text)
}

pub const METRICS_HEADER: &str =
    "epoch,train_loss,test_loss,reg_value,weight_density,nonzero_weights,latent_dim,wall_time_s";

pub fn metrics_to_csv(records: &[MetricsRecord]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(METRICS_HEADER.split(','))
        .and_then(|_| records.iter().try_for_each(|r| w.serialize(r)))
        .map_err(|e| Error::invalid(format!("metrics serialisation failed: {e}")))?;
    w.into_inner()
        .map_err(|e| Error::invalid(format!("metrics serialisation failed: {e}")))
}

pub fn save_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    write(path, &metrics_to_csv(records)?)
}

pub fn load_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let bytes = read(path)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let header = r.headers().map_err(|e| Error::Parse {
        what: "metrics file",
        location: "header".into(),
        message: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>().join(",") != METRICS_HEADER {
        return Err(Error::Parse {
            what: "metrics file",
            location: "header".into(),
            message: format!("expected `{METRICS_HEADER}`"),
        });
    }
    r.deserialize()
        .enumerate()
        .map(|(i, rec)| {
            rec.map_err(|e| Error::Parse {
                what: "metrics file",
                location: format!("record {}", i + 1),
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("report serialises");
    s.push('\n');
    write(path, s.as_bytes())
}

pub fn save_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    write(path, bytes)
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_dense, sparsify_rows};
    use crate::pde_data::{gen_advection, AdvectionConfig, Split};

    #[test]
    fn matrix_round_trip_and_layout() {
        let x = Mat::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, -6.5]]).unwrap();
        let bytes = encode_matrix(&x).unwrap();
        assert_eq!(&bytes[..4], b"SNP1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        // column-major: second stored value is x[1, 0]
        assert_eq!(f64::from_le_bytes(bytes[20..28].try_into().unwrap()), 4.0);
        assert_eq!(decode_matrix(&bytes).unwrap(), x);
    }

    #[test]
    fn corrupt_snapshots_report_offsets() {
        let x = Mat::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let bytes = encode_matrix(&x).unwrap();
        let msg = decode_matrix(&bytes[..30]).unwrap_err().to_string();
        assert!(msg.contains("byte 30"), "{msg}");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_matrix(&bad).unwrap_err().to_string().contains("byte 0"));
        let mut nan = bytes.clone();
        nan[20..28].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_matrix(&nan).unwrap_err().to_string().contains("byte 20"));
        assert!(decode_matrix(b"SNP").is_err());
    }

    #[test]
    fn snapshot_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let set = gen_advection(&[0.6], &AdvectionConfig { n_x: 16, n_t: 5, t_end: 1.0 }, Split::Test).unwrap();
        let path = dir.path().join("adv.snp");
        save_snapshots(&path, &set).unwrap();
        assert!(sidecar_path(&path).exists());
        assert_eq!(load_snapshots(&path).unwrap(), set);
    }

    #[test]
    fn model_round_trip_is_exact() {
        let mut m = init_dense(&Architecture::new(vec![5, 4, 2, 4, 5], 2).unwrap(), 3);
        sparsify_rows(&mut m, 0.5, 3).unwrap();
        m.params.biases[1][0] = 1.0 / 3.0;
        let meta = ModelMetadata {
            seed: Some(3),
            config_hash: Some("abc".into()),
            note: None,
        };
        let text = model_to_json(&m, &meta);
        let (back, meta2) = model_from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(meta2, meta);
        assert_eq!(model_to_json(&back, &meta2), text);
    }

    #[test]
    fn ragged_post_processed_shapes_round_trip() {
        let arch = Architecture::new(vec![6, 4, 3, 5, 6], 2).unwrap();
        let m = init_dense(&arch, 1);
        let (back, _) = model_from_json(&model_to_json(&m, &ModelMetadata::default())).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.effective_latent_dim(), 3);
    }

    #[test]
    fn corrupt_models_name_the_problem() {
        let m = init_dense(&Architecture::new(vec![3, 2, 3], 1).unwrap(), 1);
        let text = model_to_json(&m, &ModelMetadata::default());
        let truncated = &text[..text.len() / 2];
        assert!(matches!(model_from_json(truncated), Err(Error::Parse { .. })));

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["weights"][1][2] = serde_json::json!([1.0]);
        let msg = model_from_json(&v.to_string()).unwrap_err().to_string();
        assert!(msg.contains("weights[1][2]"), "{msg}");

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v.as_object_mut().unwrap().remove("biases");
        let msg = model_from_json(&v.to_string()).unwrap_err().to_string();
        assert!(msg.contains("biases"), "{msg}");
    }

    #[test]
    fn metrics_csv_layout() {
        let rec = MetricsRecord {
            epoch: 1,
            train_loss: 0.5,
            test_loss: 0.25,
            reg_value: 1.0,
            weight_density: 0.2,
            nonzero_weights: 10,
            latent_dim: 3,
            wall_time_s: 0.0,
        };
        let bytes = metrics_to_csv(&[rec.clone(), rec.clone()]).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], METRICS_HEADER);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        save_metrics(&p, std::slice::from_ref(&rec)).unwrap();
        assert_eq!(load_metrics(&p).unwrap(), vec![rec]);
        assert_eq!(metrics_to_csv(&[]).unwrap(), format!("{METRICS_HEADER}\n").into_bytes());
    }
}
