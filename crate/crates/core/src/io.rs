//! File formats.
//!
//! Tensor container (`OPSH`), all integers little-endian:
//!
//! ```text
//! magic "OPSH" | version u32 = 1 | header_len u32 | header (UTF-8 JSON)
//! tensor_count u32
//! per tensor: name_len u16 | name | ndim u8 | dims u32 × ndim | dtype u8 | payload
//! ```
//!
//! dtype 0 is 32-bit float, dtype 1 is one byte per mask flag. Weight files
//! carry the model config as header; mask files carry `{"kind":"masks"}`.
//!
//! Calibration data is JSON lines (`{"tokens":[...]}` per sequence), stats are
//! JSON keyed by sub-module name, results are JSON or CSV.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerWeights, ModelConfig, ModelWeights, SubModule, SubModuleId};
use crate::objective::{ActivationStats, CalibrationSet};
use crate::prune::{Mask, MaskSet};
use crate::search::{SearchResult, TableRow};
use crate::tensor::{Matrix, Vector};

pub const MAGIC: &[u8; 4] = b"OPSH";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
const DTYPE_U8: u8 = 1;
const MASKS_HEADER: &str = r#"{"kind":"masks"}"#;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: String,
    pub tensors: Vec<NamedTensor>,
}

impl Container {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn to_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} {n} exceeds u32")))
}

pub fn encode_container(c: &Container) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(c.header.len(), "header length")?.to_le_bytes());
    out.extend_from_slice(c.header.as_bytes());
    out.extend_from_slice(&to_u32(c.tensors.len(), "tensor count")?.to_le_bytes());
    let mut names = HashSet::new();
    for t in &c.tensors {
        if !names.insert(t.name.as_str()) {
            return Err(Error::DuplicateTensor(t.name.clone()));
        }
        let name_len = u16::try_from(t.name.len())
            .map_err(|_| Error::Format(format!("tensor name too long: {}", t.name)))?;
        let ndim = u8::try_from(t.dims.len())
            .map_err(|_| Error::Format(format!("{}: too many dims", t.name)))?;
        if t.dims.iter().product::<usize>() != t.data.len() {
            return Err(Error::Format(format!(
                "{}: dims {:?} do not match {} values",
                t.name,
                t.dims,
                t.data.len()
            )));
        }
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(ndim);
        for &d in &t.dims {
            out.extend_from_slice(&to_u32(d, "dimension")?.to_le_bytes());
        }
        match &t.data {
            TensorData::F32(v) => {
                out.push(DTYPE_F32);
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            TensorData::U8(v) => {
                out.push(DTYPE_U8);
                out.extend_from_slice(v);
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Truncated(format!("{what} at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn utf8(&mut self, n: usize, what: &str) -> Result<String> {
        String::from_utf8(self.take(n, what)?.to_vec())
            .map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }
}

pub fn decode_container(bytes: &[u8]) -> Result<Container> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    cur.pos = 4;
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let header_len = cur.u32("header length")? as usize;
    let header = cur.utf8(header_len, "header")?;
    let count = cur.u32("tensor count")?;
    let mut tensors = Vec::new();
    let mut names = HashSet::new();
    for _ in 0..count {
        let name_len = cur.u16("tensor name length")? as usize;
        let name = cur.utf8(name_len, "tensor name")?;
        if !names.insert(name.clone()) {
            return Err(Error::DuplicateTensor(name));
        }
        let ndim = cur.u8("ndim")? as usize;
        let dims = (0..ndim)
            .map(|_| cur.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("{name}: dims overflow")))?;
        let data = match cur.u8("dtype")? {
            DTYPE_F32 => {
                let len = numel
                    .checked_mul(4)
                    .ok_or_else(|| Error::Format(format!("{name}: payload overflow")))?;
                let raw = cur.take(len, &format!("payload of {name}"))?;
                TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                        .collect(),
                )
            }
            DTYPE_U8 => TensorData::U8(cur.take(numel, &format!("payload of {name}"))?.to_vec()),
            other => return Err(Error::Format(format!("{name}: unknown dtype {other}"))),
        };
        tensors.push(NamedTensor { name, dims, data });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - cur.pos
        )));
    }
    Ok(Container { header, tensors })
}

fn f32_payload(name: &str, data: &[f64]) -> Result<TensorData> {
    data.iter()
        .map(|&x| {
            let y = x as f32;
            if y.is_finite() {
                Ok(y)
            } else {
                Err(Error::Format(format!("{name}: value {x} overflows f32")))
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(TensorData::F32)
}

fn matrix_tensor(name: String, m: &Matrix) -> Result<NamedTensor> {
    Ok(NamedTensor {
        data: f32_payload(&name, m.data())?,
        dims: vec![m.rows(), m.cols()],
        name,
    })
}

fn vector_tensor(name: String, v: &Vector) -> Result<NamedTensor> {
    Ok(NamedTensor {
        data: f32_payload(&name, v.data())?,
        dims: vec![v.len()],
        name,
    })
}

fn norm_name(layer: usize, which: &str) -> String {
    format!("layer.{layer}.{which}")
}

pub fn model_to_container(weights: &ModelWeights) -> Result<Container> {
    weights.validate()?;
    let mut tensors = vec![
        matrix_tensor("token_embedding".into(), &weights.token_embedding)?,
        matrix_tensor("position_embedding".into(), &weights.position_embedding)?,
    ];
    for (l, layer) in weights.layers.iter().enumerate() {
        for kind in SubModule::ALL {
            tensors.push(matrix_tensor(SubModuleId::new(l, kind).to_string(), layer.get(kind))?);
        }
        tensors.push(vector_tensor(norm_name(l, "attn_norm"), &layer.attn_norm)?);
        tensors.push(vector_tensor(norm_name(l, "mlp_norm"), &layer.mlp_norm)?);
    }
    tensors.push(vector_tensor("final_norm".into(), &weights.final_norm)?);
    Ok(Container {
        header: serde_json::to_string(&weights.config).map_err(|e| Error::Format(e.to_string()))?,
        tensors,
    })
}

fn f32_values<'a>(c: &'a Container, name: &str, dims: &[usize]) -> Result<&'a [f32]> {
    let t = c
        .get(name)
        .ok_or_else(|| Error::Format(format!("missing tensor {name:?}")))?;
    if t.dims != dims {
        return Err(Error::Shape(format!("{name}: expected dims {dims:?}, got {:?}", t.dims)));
    }
    match &t.data {
        TensorData::F32(v) => Ok(v),
        TensorData::U8(_) => Err(Error::Format(format!("{name}: expected f32 payload"))),
    }
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub fn model_from_container(c: &Container) -> Result<ModelWeights> {
    let config: ModelConfig = serde_json::from_str(&c.header)
        .map_err(|e| Error::Format(format!("model config header: {e}")))?;
    config.validate()?;
    let matrix = |name: &str, (r, cols): (usize, usize)| -> Result<Matrix> {
        Matrix::new(r, cols, widen(f32_values(c, name, &[r, cols])?))
    };
    let vector = |name: &str| -> Result<Vector> { Vector::new(widen(f32_values(c, name, &[config.d_model])?)) };
    let token_embedding = matrix("token_embedding", (config.vocab_size, config.d_model))?;
    let position_embedding = matrix("position_embedding", (config.max_seq_len, config.d_model))?;
    let mut layers = Vec::with_capacity(config.n_layers);
    for l in 0..config.n_layers {
        let sub = |kind: SubModule| matrix(&SubModuleId::new(l, kind).to_string(), kind.shape(&config));
        layers.push(LayerWeights {
            q: sub(SubModule::Q)?,
            k: sub(SubModule::K)?,
            v: sub(SubModule::V)?,
            o: sub(SubModule::O)?,
            gate: sub(SubModule::Gate)?,
            up: sub(SubModule::Up)?,
            down: sub(SubModule::Down)?,
            attn_norm: vector(&norm_name(l, "attn_norm"))?,
            mlp_norm: vector(&norm_name(l, "mlp_norm"))?,
        });
    }
    let final_norm = vector("final_norm")?;
    let expected = 3 + 9 * config.n_layers;
    if c.tensors.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} tensors for this config, found {}",
            c.tensors.len()
        )));
    }
    Ok(ModelWeights {
        config,
        token_embedding,
        position_embedding,
        layers,
        final_norm,
    })
}

pub fn write_model(path: &Path, weights: &ModelWeights) -> Result<()> {
    write_file(path, &encode_container(&model_to_container(weights)?)?)
}

pub fn read_model(path: &Path) -> Result<ModelWeights> {
    model_from_container(&decode_container(&read_file(path)?)?)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibLine {
    tokens: Vec<u32>,
}

pub fn encode_calib(calib: &CalibrationSet) -> String {
    let mut out = String::new();
    for seq in &calib.sequences {
        let line = serde_json::to_string(&CalibLine { tokens: seq.clone() }).expect("plain data");
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn decode_calib(text: &str) -> Result<CalibrationSet> {
    let mut sequences = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let parsed: CalibLine = serde_json::from_str(line)
            .map_err(|e| Error::Format(format!("calibration line {}: {e}", i + 1)))?;
        if parsed.tokens.is_empty() {
            return Err(Error::EmptySequence(i));
        }
        sequences.push(parsed.tokens);
    }
    if sequences.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    Ok(CalibrationSet { sequences })
}

pub fn write_calib(path: &Path, calib: &CalibrationSet) -> Result<()> {
    write_file(path, encode_calib(calib).as_bytes())
}

pub fn read_calib(path: &Path) -> Result<CalibrationSet> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Format("calibration file is not UTF-8".into()))?;
    decode_calib(&text)
}

fn to_json_pretty<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn from_json_with_path<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

pub fn encode_stats(stats: &ActivationStats) -> Result<Vec<u8>> {
    to_json_pretty(stats)
}

pub fn decode_stats(bytes: &[u8]) -> Result<ActivationStats> {
    let stats: ActivationStats = from_json_with_path(bytes)?;
    for (id, s) in &stats.modules {
        if s.v.len() != s.l1.len() {
            return Err(Error::Schema {
                path: format!("{id}.l1"),
                message: format!("length {} differs from v length {}", s.l1.len(), s.v.len()),
            });
        }
        for (field, vec) in [("v", &s.v), ("l1", &s.l1)] {
            if let Some(j) = vec.data().iter().position(|&x| x < 0.0) {
                return Err(Error::Schema {
                    path: format!("{id}.{field}[{j}]"),
                    message: "negative norm".into(),
                });
            }
        }
    }
    Ok(stats)
}

pub fn write_stats(path: &Path, stats: &ActivationStats) -> Result<()> {
    write_file(path, &encode_stats(stats)?)
}

pub fn read_stats(path: &Path) -> Result<ActivationStats> {
    decode_stats(&read_file(path)?)
}

pub fn masks_to_container(masks: &MaskSet) -> Container {
    let tensors = masks
        .iter()
        .map(|(id, m)| NamedTensor {
            name: id.to_string(),
            dims: vec![m.rows(), m.cols()],
            data: TensorData::U8(m.bits().iter().map(|&b| b as u8).collect()),
        })
        .collect();
    Container {
        header: MASKS_HEADER.to_string(),
        tensors,
    }
}

pub fn masks_from_container(c: &Container) -> Result<MaskSet> {
    if c.header != MASKS_HEADER {
        return Err(Error::Format(format!("not a mask file (header {:?})", c.header)));
    }
    let mut masks = MaskSet::new();
    for t in &c.tensors {
        let id: SubModuleId = t.name.parse()?;
        let [rows, cols] = t.dims[..] else {
            return Err(Error::Format(format!("{}: masks are 2-D", t.name)));
        };
        let TensorData::U8(flags) = &t.data else {
            return Err(Error::Format(format!("{}: masks use the u8 dtype", t.name)));
        };
        let bits = flags
            .iter()
            .map(|&f| match f {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Format(format!("{}: mask flag {other} is not 0/1", t.name))),
            })
            .collect::<Result<Vec<_>>>()?;
        masks.insert(id, Mask::new(rows, cols, bits)?);
    }
    Ok(masks)
}

pub fn write_masks(path: &Path, masks: &MaskSet) -> Result<()> {
    write_file(path, &encode_container(&masks_to_container(masks))?)
}

pub fn read_masks(path: &Path) -> Result<MaskSet> {
    masks_from_container(&decode_container(&read_file(path)?)?)
}

pub const RESULTS_CSV_HEADER: [&str; 6] = ["trial", "alpha", "beta", "f1", "f2", "l_div"];

fn results_csv<'a>(rows: impl Iterator<Item = (usize, &'a crate::metric::MetricConfig, f64)>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULTS_CSV_HEADER)?;
    for (trial, c, l_div) in rows {
        w.write_record([
            trial.to_string(),
            c.alpha.to_string(),
            c.beta.to_string(),
            c.f1.to_string(),
            c.f2.to_string(),
            l_div.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

/// Trial log as CSV, one row per trial.
pub fn encode_results_csv(result: &SearchResult) -> Result<Vec<u8>> {
    results_csv(result.trials.iter().map(|t| (t.index, &t.config, t.l_div)))
}

/// Exhaustive table as CSV; `trial` holds the config index.
pub fn encode_table_csv(table: &[TableRow]) -> Result<Vec<u8>> {
    results_csv(table.iter().map(|r| (r.config.index(), &r.config, r.l_div)))
}

pub fn write_results_json(path: &Path, result: &SearchResult) -> Result<()> {
    write_file(path, &to_json_pretty(result)?)
}

pub fn read_results_json(path: &Path) -> Result<SearchResult> {
    from_json_with_path(&read_file(path)?)
}

pub fn write_results_csv(path: &Path, result: &SearchResult) -> Result<()> {
    write_file(path, &encode_results_csv(result)?)
}

pub fn write_table_json(path: &Path, table: &[TableRow]) -> Result<()> {
    write_file(path, &to_json_pretty(&table)?)
}

pub fn read_table_json(path: &Path) -> Result<Vec<TableRow>> {
    from_json_with_path(&read_file(path)?)
}

pub fn write_table_csv(path: &Path, table: &[TableRow]) -> Result<()> {
    write_file(path, &encode_table_csv(table)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;
    use crate::objective::{collect_activation_stats, synthetic_calibration};
    use crate::prune::{build_mask, SparsitySpec};

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 30,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 12,
            max_seq_len: 6,
        }
    }

    #[test]
    fn model_round_trip_is_exact_and_deterministic() {
        let w = init_model(cfg(), 42).unwrap();
        let bytes = encode_container(&model_to_container(&w).unwrap()).unwrap();
        assert_eq!(&bytes[..4], b"OPSH");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        let c = decode_container(&bytes).unwrap();
        let q = c.get("layer.0.q").unwrap();
        assert_eq!(q.dims, vec![8, 8]);
        let back = model_from_container(&c).unwrap();
        assert_eq!(back, w);
        let again = encode_container(&model_to_container(&back).unwrap()).unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn container_rejections() {
        let w = init_model(cfg(), 1).unwrap();
        let bytes = encode_container(&model_to_container(&w).unwrap()).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        let err = decode_container(&bad).unwrap_err();
        assert!(matches!(err, Error::BadMagic));
        assert!(err.to_string().contains("bad magic"));

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode_container(&bad), Err(Error::Version(2))));

        assert!(matches!(decode_container(&bytes[..bytes.len() - 3]), Err(Error::Truncated(_))));

        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_container(&extra), Err(Error::Format(_))));

        let t = NamedTensor {
            name: "a".into(),
            dims: vec![1],
            data: TensorData::F32(vec![1.0]),
        };
        let dup = Container {
            header: "{}".into(),
            tensors: vec![t.clone(), t],
        };
        assert!(matches!(encode_container(&dup), Err(Error::DuplicateTensor(_))));
    }

    #[test]
    fn decoder_rejects_duplicate_names() {
        let t = NamedTensor {
            name: "a".into(),
            dims: vec![1],
            data: TensorData::U8(vec![1]),
        };
        let single = encode_container(&Container {
            header: "{}".into(),
            tensors: vec![t],
        })
        .unwrap();
        // splice a second copy of the tensor record and bump the count
        let header_end = 4 + 4 + 4 + 2;
        let record = single[header_end + 4..].to_vec();
        let mut dup = single[..header_end].to_vec();
        dup.extend_from_slice(&2u32.to_le_bytes());
        dup.extend_from_slice(&record);
        dup.extend_from_slice(&record);
        assert!(matches!(decode_container(&dup), Err(Error::DuplicateTensor(_))));
    }

    #[test]
    fn model_reader_rejects_mask_file() {
        let masks = MaskSet::new();
        let bytes = encode_container(&masks_to_container(&masks)).unwrap();
        assert!(model_from_container(&decode_container(&bytes).unwrap()).is_err());
    }

    #[test]
    fn calib_round_trip() {
        let calib = synthetic_calibration(30, 8, 5, 3);
        let text = encode_calib(&calib);
        assert_eq!(text.lines().count(), 8);
        assert!(text.starts_with("{\"tokens\":["));
        assert_eq!(decode_calib(&text).unwrap(), calib);
        assert!(matches!(decode_calib(""), Err(Error::EmptyCalibration)));
        assert!(decode_calib("{\"tokens\":[1,2]}\nnot json\n").is_err());
        assert!(decode_calib("{\"tokens\":[-1]}\n").is_err());
    }

    #[test]
    fn stats_round_trip_exact() {
        let w = init_model(cfg(), 2).unwrap();
        let stats = collect_activation_stats(&w, &synthetic_calibration(30, 3, 6, 0)).unwrap();
        let bytes = encode_stats(&stats).unwrap();
        let back = decode_stats(&bytes).unwrap();
        assert_eq!(back, stats);
        for (id, s) in &stats.modules {
            let b = back.get(*id).unwrap();
            for (x, y) in s.v.data().iter().zip(b.v.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(encode_stats(&back).unwrap(), bytes);
    }

    #[test]
    fn stats_schema_errors_carry_paths() {
        let bad = br#"{"layer.0.q": {"v": [1.0, "x"], "l1": [1.0, 2.0], "token_count": 2}}"#;
        match decode_stats(bad) {
            Err(Error::Schema { path, .. }) => assert!(path.starts_with("layer.0.q.v"), "{path}"),
            other => panic!("unexpected {other:?}"),
        }
        let neg = br#"{"layer.0.q": {"v": [1.0, -2.0], "l1": [1.0, 2.0], "token_count": 2}}"#;
        match decode_stats(neg) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "layer.0.q.v[1]"),
            other => panic!("unexpected {other:?}"),
        }
        let short = br#"{"layer.0.q": {"v": [1.0], "l1": [1.0, 2.0], "token_count": 2}}"#;
        assert!(matches!(decode_stats(short), Err(Error::Schema { .. })));
        let bad_name = br#"{"layer.x.q": {"v": [1.0], "l1": [1.0], "token_count": 2}}"#;
        assert!(matches!(decode_stats(bad_name), Err(Error::Schema { .. })));
    }

    #[test]
    fn masks_round_trip() {
        let w = init_model(cfg(), 2).unwrap();
        let mut masks = MaskSet::new();
        for (id, m) in w.submodules() {
            masks.insert(id, build_mask(&m.abs(), &SparsitySpec::n_m(2, 4).unwrap()).unwrap());
        }
        let bytes = encode_container(&masks_to_container(&masks)).unwrap();
        let back = masks_from_container(&decode_container(&bytes).unwrap()).unwrap();
        assert_eq!(back, masks);
        for (id, m) in &masks {
            assert_eq!(back[id].kept(), m.kept());
        }

        let mut c = masks_to_container(&masks);
        c.tensors[0].data = TensorData::U8(vec![2; 64]);
        assert!(masks_from_container(&c).is_err());
    }
}
