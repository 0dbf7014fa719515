//! On-disk formats. Binary files start with an 8-byte magic; files with a
//! JSON header store its length as a little-endian u64 right after the magic.
//! All floats are little-endian IEEE-754 doubles. CSV floats use the
//! shortest decimal that round-trips.

use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use nudgenet_core::datagen::{Dataset, DatasetMeta};
use nudgenet_core::dynamics::Trajectory;
use nudgenet_core::nudging::{ObservationOperator, ObservationSeries};
use nudgenet_core::resnet::{ResNetArch, ResNetParams};
use nudgenet_core::trainer::{Normalizer, TrainedModel};

use crate::error::{AppError, InModule, Result};

pub const TRAJECTORY_MAGIC: &[u8; 8] = b"NNTRAJ01";
pub const ENSEMBLE_MAGIC: &[u8; 8] = b"NNENSM01";
pub const DATASET_MAGIC: &[u8; 8] = b"NNDATA01";
pub const MODEL_MAGIC: &[u8; 8] = b"NNMODL01";

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| AppError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| AppError::format(path, e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| AppError::format(path, e.to_string()))
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    out.reserve(vs.len() * 8);
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Sequential reader over a byte buffer that reports errors against a path.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Cursor {
            bytes,
            pos: 0,
            path,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| AppError::format(self.path, "unexpected end of file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, magic: &[u8; 8]) -> Result<()> {
        if self.take(8)? != magic {
            return Err(AppError::format(
                self.path,
                format!("expected magic {}", String::from_utf8_lossy(magic)),
            ));
        }
        Ok(())
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| AppError::format(self.path, "length overflows"))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| AppError::format(self.path, "length overflows"))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn json<T: DeserializeOwned>(&mut self) -> Result<T> {
        let n = self.usize()?;
        let raw = self.take(n)?;
        serde_json::from_slice(raw).map_err(|e| AppError::format(self.path, e.to_string()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(AppError::format(self.path, "trailing bytes"));
        }
        Ok(())
    }
}

fn push_json<T: Serialize>(out: &mut Vec<u8>, value: &T) {
    let header = serde_json::to_vec(value).expect("header serialises");
    push_u64(out, header.len() as u64);
    out.extend_from_slice(&header);
}

fn trajectory_body(out: &mut Vec<u8>, traj: &Trajectory) {
    push_u64(out, traj.dim() as u64);
    push_u64(out, traj.len() as u64);
    push_f64s(out, traj.times());
    push_f64s(out, traj.data());
}

fn read_trajectory_body(c: &mut Cursor<'_>) -> Result<Trajectory> {
    let dim = c.usize()?;
    let n = c.usize()?;
    let times = c.f64s(n)?;
    let data = c.f64s(
        n.checked_mul(dim)
            .ok_or_else(|| AppError::format(c.path, "length overflows"))?,
    )?;
    Trajectory::from_parts(dim, times, data).map_err(|e| AppError::format(c.path, e.to_string()))
}

/// Magic, dim, count, the `count` times, then the row-major states.
pub fn trajectory_to_bytes(traj: &Trajectory) -> Vec<u8> {
    let mut out = TRAJECTORY_MAGIC.to_vec();
    trajectory_body(&mut out, traj);
    out
}

pub fn trajectory_from_bytes(bytes: &[u8], path: &Path) -> Result<Trajectory> {
    let mut c = Cursor::new(bytes, path);
    c.magic(TRAJECTORY_MAGIC)?;
    let t = read_trajectory_body(&mut c)?;
    c.finish()?;
    Ok(t)
}

/// Several trajectories with their member ids.
pub fn ensemble_to_bytes(ids: &[usize], trajectories: &[Trajectory]) -> Vec<u8> {
    let mut out = ENSEMBLE_MAGIC.to_vec();
    push_u64(&mut out, trajectories.len() as u64);
    for (id, t) in ids.iter().zip(trajectories) {
        push_u64(&mut out, *id as u64);
        trajectory_body(&mut out, t);
    }
    out
}

pub fn ensemble_from_bytes(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, Vec<Trajectory>)> {
    let mut c = Cursor::new(bytes, path);
    c.magic(ENSEMBLE_MAGIC)?;
    let n = c.usize()?;
    let (mut ids, mut trajs) = (Vec::new(), Vec::new());
    for _ in 0..n {
        ids.push(c.usize()?);
        trajs.push(read_trajectory_body(&mut c)?);
    }
    c.finish()?;
    Ok((ids, trajs))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> AppError + '_ {
    move |e| AppError::format(path, e.to_string())
}

fn write_rows<'a>(
    path: &Path,
    header: Vec<String>,
    rows: impl Iterator<Item = (f64, &'a [f64])>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(csv_err(path))?;
    for (t, xs) in rows {
        let mut rec = Vec::with_capacity(xs.len() + 1);
        rec.push(t.to_string());
        rec.extend(xs.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| AppError::format(path, e.to_string()))?;
    write_file(path, &bytes)
}

fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<f64>, Vec<f64>)> {
    let bytes = read_file(path)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let header: Vec<String> = r
        .headers()
        .map_err(csv_err(path))?
        .iter()
        .map(String::from)
        .collect();
    if header.first().map(String::as_str) != Some("t") {
        return Err(AppError::format(path, "first column must be t"));
    }
    let width = header.len() - 1;
    let (mut times, mut values) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        if rec.len() != header.len() {
            return Err(AppError::format(path, "ragged row"));
        }
        for (i, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| AppError::format(path, format!("not a number: {field:?}")))?;
            if i == 0 {
                times.push(v);
            } else {
                values.push(v);
            }
        }
    }
    debug_assert_eq!(values.len(), times.len() * width);
    Ok((header, times, values))
}

fn state_header(prefix: &str, dim: usize) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((1..=dim).map(|i| format!("{prefix}{i}")))
        .collect()
}

/// CSV with header `t,x1,...,xd`.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    write_rows(path, state_header("x", traj.dim()), traj.iter())
}

pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let (header, times, values) = read_rows(path)?;
    Trajectory::from_parts(header.len() - 1, times, values)
        .map_err(|e| AppError::format(path, e.to_string()))
}

/// Reads either format, chosen by extension.
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_trajectory_csv(path),
        _ => trajectory_from_bytes(&read_file(path)?, path),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSidecar {
    pub observed_indices: Vec<usize>,
    pub state_dim: usize,
    pub delta: f64,
    pub mu: Option<f64>,
    pub seed: Option<u64>,
    /// Hash of the reference trajectory file the observations were taken from.
    pub reference_hash: Option<String>,
}

/// CSV `t,x<i>,...` over the observed indices.
pub fn write_observations_csv(path: &Path, obs: &ObservationSeries) -> Result<()> {
    let m = obs.operator().len();
    let header = std::iter::once("t".to_string())
        .chain(
            obs.operator()
                .observed_indices()
                .iter()
                .map(|i| format!("x{i}")),
        )
        .collect();
    let rows = (0..obs.len()).map(|k| (obs.times()[k], &obs.values()[k * m..(k + 1) * m]));
    write_rows(path, header, rows)
}

pub fn read_observations_csv(
    path: &Path,
    sidecar: &ObservationSidecar,
) -> Result<ObservationSeries> {
    let (header, times, values) = read_rows(path)?;
    let expected: Vec<String> = sidecar
        .observed_indices
        .iter()
        .map(|i| format!("x{i}"))
        .collect();
    if header[1..] != expected[..] {
        return Err(AppError::format(path, "columns disagree with the sidecar"));
    }
    let op = ObservationOperator::new(sidecar.observed_indices.clone(), sidecar.state_dim)
        .in_module("nudging")?;
    ObservationSeries::new(times, values, op).map_err(|e| AppError::format(path, e.to_string()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetHeader {
    meta: DatasetMeta,
    len: usize,
    input_dim: usize,
    output_dim: usize,
    ref_ids: Vec<usize>,
    window_indices: Vec<usize>,
}

/// Magic, JSON header, inputs block, outputs block.
pub fn dataset_to_bytes(ds: &Dataset) -> Vec<u8> {
    let header = DatasetHeader {
        meta: ds.meta.clone(),
        len: ds.len(),
        input_dim: ds.input_dim(),
        output_dim: ds.output_dim(),
        ref_ids: ds.ref_ids().to_vec(),
        window_indices: ds.window_indices().to_vec(),
    };
    let mut out = DATASET_MAGIC.to_vec();
    push_json(&mut out, &header);
    push_f64s(&mut out, ds.inputs());
    push_f64s(&mut out, ds.outputs());
    out
}

/// The raw float blocks of a dataset file, for determinism checks.
pub fn dataset_data_block(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    payload_after_header(bytes, path, DATASET_MAGIC)
}

pub fn dataset_from_bytes(bytes: &[u8], path: &Path) -> Result<Dataset> {
    let mut c = Cursor::new(bytes, path);
    c.magic(DATASET_MAGIC)?;
    let h: DatasetHeader = c.json()?;
    let inputs = c.f64s(h.len * h.input_dim)?;
    let outputs = c.f64s(h.len * h.output_dim)?;
    c.finish()?;
    Dataset::from_parts(
        h.meta,
        h.input_dim,
        h.output_dim,
        inputs,
        outputs,
        h.ref_ids,
        h.window_indices,
    )
    .map_err(|e| AppError::format(path, e.to_string()))
}

/// Everything in a model file except the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub arch: ResNetArch,
    pub normalizer: Normalizer,
    /// 1-based component for per-component networks.
    pub component: Option<usize>,
    pub dataset_hash: String,
    pub init: String,
    /// Resolved training and loss settings.
    pub training: serde_json::Value,
    pub param_count: usize,
}

pub fn model_to_bytes(model: &TrainedModel, header: &ModelHeader) -> Vec<u8> {
    let mut out = MODEL_MAGIC.to_vec();
    push_json(&mut out, header);
    push_f64s(&mut out, &model.params.values);
    out
}

/// The raw parameter block of a model file.
pub fn model_params_block(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    payload_after_header(bytes, path, MODEL_MAGIC)
}

fn payload_after_header(bytes: &[u8], path: &Path, magic: &[u8; 8]) -> Result<Vec<u8>> {
    let mut c = Cursor::new(bytes, path);
    c.magic(magic)?;
    let n = c.usize()?;
    c.take(n)?;
    Ok(bytes[c.pos..].to_vec())
}

pub fn model_from_bytes(bytes: &[u8], path: &Path) -> Result<(TrainedModel, ModelHeader)> {
    let mut c = Cursor::new(bytes, path);
    c.magic(MODEL_MAGIC)?;
    let h: ModelHeader = c.json()?;
    let values = c.f64s(h.param_count)?;
    c.finish()?;
    let params = ResNetParams::from_values(&h.arch, values)
        .map_err(|e| AppError::format(path, e.to_string()))?;
    let model = TrainedModel {
        arch: h.arch.clone(),
        params,
        normalizer: h.normalizer.clone(),
    };
    Ok((model, h))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSidecar {
    pub method: String,
    pub provenance: String,
    /// Hashes of the model files used, in component order.
    pub model_hashes: Vec<String>,
    pub observations_file: String,
    pub observations_hash: String,
    pub reference_file: String,
    pub reference_hash: String,
    pub config_hash: String,
}

/// CSV with header `t,w1,...,wd`.
pub fn write_run_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    write_rows(path, state_header("w", traj.dim()), traj.iter())
}

pub fn read_run_csv(path: &Path) -> Result<Trajectory> {
    read_trajectory_csv(path)
}

/// One `t,v` row per sample.
pub fn write_series_csv(path: &Path, column: &str, times: &[f64], values: &[f64]) -> Result<()> {
    let header = vec!["t".to_string(), column.to_string()];
    write_rows(
        path,
        header,
        times
            .iter()
            .zip(values)
            .map(|(t, v)| (*t, std::slice::from_ref(v))),
    )
}

/// Writes a CSV with arbitrary header and numeric rows.
pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row.iter().map(f64::to_string))
            .map_err(csv_err(path))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| AppError::format(path, e.to_string()))?;
    write_file(path, &bytes)
}
