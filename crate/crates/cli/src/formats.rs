//! On-disk artifact formats: architecture JSON, loss-weight report, prune
//! log, history CSV, metric reports, the named-tensor archive, and the
//! checkpoint container. Everything written here is byte-deterministic for
//! a given input.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use mef_core::bilevel::{Adam, HistoryRecord, SearchResult};
use mef_core::loss::{LossParams, CATALOG};
use mef_core::metrics::{MetricReport, METRIC_ORDER};
use mef_core::net::{FusionModel, NetConfig};
use mef_core::ops::{EdgeSnapshot, OpKind};
use mef_core::wsras::{PruneEvent, WsrasConfig};

/// One retained operation of a finalized edge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetainedOp {
    pub kind: String,
    pub weight: f64,
}

/// A finalized edge: the retained operations in descending-weight order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetainedEdge {
    pub name: String,
    pub ops: Vec<RetainedOp>,
}

/// The architecture document emitted by the search and consumed by training
/// and inference. Alpha logits are serialized in full precision.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureDoc {
    pub net: NetConfig,
    pub wsras: WsrasConfig,
    pub edges: Vec<EdgeSnapshot>,
    pub retained: Vec<RetainedEdge>,
}

impl ArchitectureDoc {
    pub fn from_search(net: NetConfig, wsras: WsrasConfig, result: &SearchResult) -> Self {
        ArchitectureDoc {
            net,
            wsras,
            edges: result.arch_snapshots.clone(),
            retained: result
                .retained
                .iter()
                .map(|(name, ops)| RetainedEdge {
                    name: name.clone(),
                    ops: ops
                        .iter()
                        .map(|(kind, weight)| RetainedOp {
                            kind: kind.name().to_string(),
                            weight: *weight,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// The retained structure in the form the model constructor takes.
    pub fn retained_specs(&self) -> Result<Vec<(String, Vec<(OpKind, f64)>)>> {
        self.retained
            .iter()
            .map(|edge| {
                let ops = edge
                    .ops
                    .iter()
                    .map(|op| {
                        OpKind::from_name(&op.kind)
                            .map(|k| (k, op.weight))
                            .ok_or_else(|| anyhow!("unknown operation kind `{}`", op.kind))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((edge.name.clone(), ops))
            })
            .collect()
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

/// Loss-weight report: candidate name to searched weight (softmax of the
/// final logits over the full candidate set), plus the raw logits.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossReport {
    pub weights: BTreeMap<String, f64>,
    pub logits: BTreeMap<String, f64>,
}

impl LossReport {
    pub fn from_params(params: &LossParams) -> Self {
        let w = params.weights();
        let mut weights = BTreeMap::new();
        let mut logits = BTreeMap::new();
        for (i, cand) in CATALOG.iter().enumerate() {
            weights.insert(cand.name().to_string(), w[i]);
            logits.insert(cand.name().to_string(), params.beta[i]);
        }
        LossReport { weights, logits }
    }

    pub fn to_params(&self) -> Result<LossParams> {
        let mut beta = Vec::with_capacity(CATALOG.len());
        for cand in CATALOG.iter() {
            let v = self
                .logits
                .get(cand.name())
                .ok_or_else(|| anyhow!("loss report is missing candidate `{}`", cand.name()))?;
            beta.push(*v);
        }
        Ok(LossParams { beta })
    }
}

/// Newline-delimited JSON prune log.
pub fn write_prune_log(path: &Path, events: &[PruneEvent]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::new();
    for ev in events {
        out.push_str(&serde_json::to_string(ev)?);
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_prune_log(path: &Path) -> Result<Vec<PruneEvent>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Into::into))
        .collect()
}

/// Search history CSV: `step,epoch,l_train,l_val,gamma_h`.
pub fn write_history_csv(path: &Path, history: &[HistoryRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::from("step,epoch,l_train,l_val,gamma_h\n");
    for rec in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            rec.step, rec.epoch, rec.l_train, rec.l_val, rec.gamma_h
        ));
    }
    std::fs::write(path, out).with_context(|| format!("cannot write {}", path.display()))
}

/// Metric report CSV matching the canonical column order; absent values
/// leave empty cells, and a final `aggregate` row carries the means.
pub fn write_report_csv(path: &Path, report: &MetricReport) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::from("id,");
    out.push_str(&METRIC_ORDER.join(","));
    out.push('\n');
    let cell = |row: &BTreeMap<String, f64>, name: &str| -> String {
        row.get(name).map(|v| v.to_string()).unwrap_or_default()
    };
    for (id, row) in &report.per_image {
        out.push_str(id);
        for name in METRIC_ORDER {
            out.push(',');
            out.push_str(&cell(row, name));
        }
        out.push('\n');
    }
    out.push_str("aggregate");
    for name in METRIC_ORDER {
        out.push(',');
        out.push_str(&cell(&report.aggregate, name));
    }
    out.push('\n');
    std::fs::write(path, out).with_context(|| format!("cannot write {}", path.display()))
}

const TENSOR_MAGIC: &[u8; 8] = b"MEFTENS1";
const CKPT_MAGIC: &[u8; 8] = b"MEFCKPT1";

/// A named tensor: shape plus row-major data.
pub type NamedTensor = (String, Vec<usize>, Vec<f64>);

fn write_tensors(out: &mut Vec<u8>, tensors: &[NamedTensor]) {
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, shape, data) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).context("truncated archive")?;
    Ok(buf)
}

fn read_tensors(r: &mut impl Read) -> Result<Vec<NamedTensor>> {
    let count = u32::from_le_bytes(read_exact::<4>(r)?) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(read_exact::<4>(r)?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).context("truncated tensor name")?;
        let name = String::from_utf8(name).context("tensor name is not UTF-8")?;
        let ndim = u32::from_le_bytes(read_exact::<4>(r)?) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(read_exact::<8>(r)?) as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_le_bytes(read_exact::<8>(r)?));
        }
        tensors.push((name, shape, data));
    }
    Ok(tensors)
}

/// Write a standalone named-tensor archive (extractor weights).
pub fn write_tensor_archive(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = Vec::new();
    out.extend_from_slice(TENSOR_MAGIC);
    write_tensors(&mut out, tensors);
    std::fs::write(path, out).with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_tensor_archive(path: &Path) -> Result<Vec<NamedTensor>> {
    let bytes =
        std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut r = bytes.as_slice();
    if read_exact::<8>(&mut r)? != *TENSOR_MAGIC {
        bail!("{} is not a tensor archive", path.display());
    }
    read_tensors(&mut r)
}

/// Checkpoint metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub adam_t: u64,
    pub adam_lr: f64,
}

/// A training checkpoint: the architecture, a config snapshot, metadata, and
/// every parameter plus optimizer slot as named tensors.
#[derive(Debug)]
pub struct Checkpoint {
    pub arch: ArchitectureDoc,
    pub config_snapshot: String,
    pub meta: CheckpointMeta,
    pub tensors: Vec<NamedTensor>,
}

/// Collect a model's parameters (and optionally Adam state) as tensors.
pub fn model_tensors(model: &FusionModel, adam: Option<&Adam>) -> Vec<NamedTensor> {
    let mut tensors = Vec::new();
    model.visit_convs(&mut |name, conv| {
        tensors.push((
            format!("omega.{name}.w"),
            vec![conv.out_ch, conv.in_ch, conv.kh, conv.kw],
            conv.weights.clone(),
        ));
        tensors.push((format!("omega.{name}.b"), vec![conv.out_ch], conv.bias.clone()));
    });
    if let Some(adam) = adam {
        for (key, m, v) in adam.state() {
            tensors.push((format!("adam.m.{key}"), vec![m.len()], m.clone()));
            tensors.push((format!("adam.v.{key}"), vec![v.len()], v.clone()));
        }
    }
    tensors
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let arch_json = serde_json::to_vec(&ckpt.arch)?;
    let meta_json = serde_json::to_vec(&ckpt.meta)?;
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    for section in [
        arch_json.as_slice(),
        ckpt.config_snapshot.as_bytes(),
        meta_json.as_slice(),
    ] {
        out.extend_from_slice(&(section.len() as u32).to_le_bytes());
        out.extend_from_slice(section);
    }
    write_tensors(&mut out, &ckpt.tensors);
    std::fs::write(path, out).with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes =
        std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut r = bytes.as_slice();
    if read_exact::<8>(&mut r)? != *CKPT_MAGIC {
        bail!("{} is not a checkpoint", path.display());
    }
    let mut section = || -> Result<Vec<u8>> {
        let len = u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).context("truncated checkpoint")?;
        Ok(buf)
    };
    let arch: ArchitectureDoc = serde_json::from_slice(&section()?)?;
    let config_snapshot = String::from_utf8(section()?).context("config snapshot not UTF-8")?;
    let meta: CheckpointMeta = serde_json::from_slice(&section()?)?;
    let tensors = read_tensors(&mut r)?;
    Ok(Checkpoint {
        arch,
        config_snapshot,
        meta,
        tensors,
    })
}

/// Restore a model's parameters from checkpoint tensors; fails loudly on any
/// missing tensor or shape mismatch.
pub fn restore_model(model: &mut FusionModel, tensors: &[NamedTensor]) -> Result<()> {
    let map: BTreeMap<&str, (&Vec<usize>, &Vec<f64>)> = tensors
        .iter()
        .map(|(n, s, d)| (n.as_str(), (s, d)))
        .collect();
    let mut err: Option<anyhow::Error> = None;
    model.visit_convs_mut(&mut |name, conv| {
        if err.is_some() {
            return;
        }
        let wname = format!("omega.{name}.w");
        let bname = format!("omega.{name}.b");
        match (map.get(wname.as_str()), map.get(bname.as_str())) {
            (Some((wshape, wdata)), Some((bshape, bdata))) => {
                let expect_w = vec![conv.out_ch, conv.in_ch, conv.kh, conv.kw];
                if **wshape != expect_w || **bshape != vec![conv.out_ch] {
                    err = Some(anyhow!(
                        "checkpoint shape mismatch for {name}: {wshape:?}/{bshape:?}, expected {expect_w:?}/[{}]",
                        conv.out_ch
                    ));
                    return;
                }
                conv.weights.copy_from_slice(wdata);
                conv.bias.copy_from_slice(bdata);
            }
            _ => {
                err = Some(anyhow!("checkpoint is missing tensors for {name}"));
            }
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Rebuild the optimizer from checkpoint tensors.
pub fn restore_adam(meta: &CheckpointMeta, tensors: &[NamedTensor]) -> Adam {
    let mut slots: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (name, _, data) in tensors {
        if let Some(key) = name.strip_prefix("adam.m.") {
            slots.entry(key.to_string()).or_default().0 = data.clone();
        } else if let Some(key) = name.strip_prefix("adam.v.") {
            slots.entry(key.to_string()).or_default().1 = data.clone();
        }
    }
    Adam::restore(
        meta.adam_lr,
        meta.adam_t,
        slots.into_iter().map(|(k, (m, v))| (k, m, v)),
    )
}
