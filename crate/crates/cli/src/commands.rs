//! The four commands: search, train, fuse, eval. Each is a plain function
//! over a loaded configuration so tests can drive them in-process.

use std::path::{Path, PathBuf};

use anyhow::anyhow;

use mef_core::bilevel::{run_search, run_train, Adam, CheckpointSink, TrainConfig};
use mef_core::extractor::FeatureExtractor;
use mef_core::loss::LossCtx;
use mef_core::metrics::{evaluate_report, EvalItem};
use mef_core::net::FusionModel;

use crate::config::{snapshot, RunConfig};
use crate::error::{CliError, CliResult};
use crate::formats::{
    model_tensors, read_checkpoint, read_json, restore_model, write_checkpoint, write_history_csv,
    write_json, write_prune_log, write_report_csv, ArchitectureDoc, Checkpoint, CheckpointMeta,
    LossReport,
};
use crate::imgio::{load_image, save_png};
use crate::manifest::{load_manifest, load_pairs, load_pool};

/// Construct the configured feature extractor.
pub fn build_extractor(cfg: &RunConfig) -> CliResult<FeatureExtractor> {
    match cfg.contrastive.backend.as_str() {
        "deterministic_fallback" | "fallback" => {
            FeatureExtractor::fallback_with_layers(&cfg.contrastive.layers)
                .map_err(|e| CliError::config(e.to_string()))
        }
        "pretrained_vgg16" | "vgg16" => {
            let path = cfg.paths.extractor_weights.as_deref().ok_or_else(|| {
                CliError::config("contrastive.backend = vgg16 requires paths.extractor_weights")
            })?;
            let tensors = crate::formats::read_tensor_archive(path).map_err(CliError::Runtime)?;
            FeatureExtractor::vgg16(&tensors).map_err(|e| CliError::Runtime(anyhow!("{e}")))
        }
        other => Err(CliError::config(format!(
            "unknown contrastive backend `{other}`"
        ))),
    }
}

fn require<'a>(path: Option<&'a Path>, what: &str) -> CliResult<&'a Path> {
    path.ok_or_else(|| CliError::config(format!("paths.{what} is required for this command")))
}

/// Run the dual search and write its four artifacts.
pub fn cmd_search(cfg: &RunConfig) -> CliResult<()> {
    let manifest_path = require(cfg.paths.train_manifest.as_deref(), "train_manifest")?;
    let pool_path = require(cfg.paths.natural_pool.as_deref(), "natural_pool")?;
    let out_dir = cfg.output_dir()?.to_path_buf();
    let extractor = build_extractor(cfg)?;
    let search_cfg = cfg.search_config()?;

    let manifest = load_manifest(manifest_path).map_err(CliError::Runtime)?;
    let pairs = load_pairs(&manifest).map_err(CliError::Runtime)?;
    let pool = load_pool(pool_path).map_err(CliError::Runtime)?;
    if pool.is_empty() {
        return Err(CliError::config(format!(
            "natural pool {} lists no images",
            pool_path.display()
        )));
    }
    let ctx = LossCtx::new(&extractor);
    let result =
        run_search(&search_cfg, &pairs, &pool, &ctx).map_err(|e| CliError::Runtime(anyhow!("{e}")))?;

    let arch = ArchitectureDoc::from_search(cfg.net_config(), search_cfg.wsras, &result);
    write_json(&out_dir.join("architecture.json"), &arch).map_err(CliError::Runtime)?;
    write_json(
        &out_dir.join("loss_weights.json"),
        &LossReport::from_params(&result.loss),
    )
    .map_err(CliError::Runtime)?;
    write_prune_log(&out_dir.join("prune_log.ndjson"), &result.prune_log)
        .map_err(CliError::Runtime)?;
    write_history_csv(&out_dir.join("history.csv"), &result.history).map_err(CliError::Runtime)?;
    Ok(())
}

struct DiskSink {
    dir: PathBuf,
    arch: ArchitectureDoc,
    config_snapshot: String,
}

impl CheckpointSink for DiskSink {
    fn save(
        &mut self,
        epoch: usize,
        model: &FusionModel,
        adam: &Adam,
    ) -> mef_core::error::CoreResult<()> {
        let ckpt = Checkpoint {
            arch: self.arch.clone(),
            config_snapshot: self.config_snapshot.clone(),
            meta: CheckpointMeta {
                epoch,
                adam_t: adam.step_count(),
                adam_lr: adam.lr,
            },
            tensors: model_tensors(model, Some(adam)),
        };
        let epoch_path = self.dir.join(format!("checkpoints/epoch_{epoch:04}.mefc"));
        write_checkpoint(&epoch_path, &ckpt)
            .and_then(|_| write_checkpoint(&self.dir.join("model.mefc"), &ckpt))
            .map_err(|e| mef_core::error::CoreError::InvalidConfig(e.to_string()))
    }
}

/// Train the finalized architecture under the searched loss weights.
pub fn cmd_train(cfg: &RunConfig) -> CliResult<()> {
    let manifest_path = require(cfg.paths.train_manifest.as_deref(), "train_manifest")?;
    let out_dir = cfg.output_dir()?.to_path_buf();

    // The search artifacts are configuration for this stage: failing to
    // read or parse them is a usage error.
    let arch: ArchitectureDoc = read_json(&out_dir.join("architecture.json"))
        .map_err(|e| CliError::config(format!("{e:#}")))?;
    let loss_report: LossReport = read_json(&out_dir.join("loss_weights.json"))
        .map_err(|e| CliError::config(format!("{e:#}")))?;
    let loss_params = loss_report
        .to_params()
        .map_err(|e| CliError::config(format!("{e:#}")))?;
    let retained = arch
        .retained_specs()
        .map_err(|e| CliError::config(format!("{e:#}")))?;
    if retained.is_empty() {
        return Err(CliError::config("architecture document retains no edges"));
    }

    let extractor = build_extractor(cfg)?;
    let manifest = load_manifest(manifest_path).map_err(CliError::Runtime)?;
    let pairs = load_pairs(&manifest).map_err(CliError::Runtime)?;
    let ctx = LossCtx::new(&extractor);
    let train_cfg: TrainConfig = cfg.train_config();
    if train_cfg.epochs == 0 {
        return Err(CliError::config("train.epochs must be at least 1"));
    }
    let mut sink = DiskSink {
        dir: out_dir.clone(),
        arch: arch.clone(),
        config_snapshot: snapshot(cfg),
    };
    run_train(
        &train_cfg,
        cfg.net_config(),
        &retained,
        &loss_params,
        &pairs,
        &ctx,
        &mut sink,
    )
    .map_err(|e| CliError::Runtime(anyhow!("{e}")))?;
    Ok(())
}

fn load_model_from_checkpoint(path: &Path) -> CliResult<FusionModel> {
    let ckpt = read_checkpoint(path).map_err(CliError::Runtime)?;
    let specs = ckpt.arch.retained_specs().map_err(CliError::Runtime)?;
    let mut model = FusionModel::new_finalized(ckpt.arch.net, &specs, 0)
        .map_err(|e| CliError::Runtime(anyhow!("{e}")))?;
    restore_model(&mut model, &ckpt.tensors).map_err(CliError::Runtime)?;
    Ok(model)
}

/// Fuse pairs with a trained checkpoint: either one explicit pair or every
/// entry of the eval manifest.
pub fn cmd_fuse(cfg: &RunConfig, explicit: Option<(&Path, &Path, &Path)>) -> CliResult<()> {
    let model = load_model_from_checkpoint(&cfg.checkpoint_path()?)?;
    match explicit {
        Some((under, over, out)) => {
            let pair = mef_core::data::ExposurePair::new(
                "pair",
                load_image(under).map_err(CliError::Runtime)?,
                load_image(over).map_err(CliError::Runtime)?,
                None,
            )
            .map_err(|e| CliError::Runtime(anyhow!("{e}")))?;
            let fused = model
                .forward(&pair)
                .map_err(|e| CliError::Runtime(anyhow!("{e}")))?;
            save_png(out, &fused).map_err(CliError::Runtime)?;
        }
        None => {
            let manifest_path = require(cfg.paths.eval_manifest.as_deref(), "eval_manifest")?;
            let fused_dir = cfg.fused_dir()?;
            let manifest = load_manifest(manifest_path).map_err(CliError::Runtime)?;
            let pairs = load_pairs(&manifest).map_err(CliError::Runtime)?;
            for pair in &pairs {
                let fused = model
                    .forward(pair)
                    .map_err(|e| CliError::Runtime(anyhow!("{e}")))?;
                save_png(&fused_dir.join(format!("{}.png", pair.id)), &fused)
                    .map_err(CliError::Runtime)?;
            }
        }
    }
    Ok(())
}

/// Evaluate fused outputs against the manifest and write the report.
pub fn cmd_eval(cfg: &RunConfig) -> CliResult<()> {
    let manifest_path = require(cfg.paths.eval_manifest.as_deref(), "eval_manifest")?;
    let fused_dir = cfg.fused_dir()?;
    let out_dir = cfg.output_dir()?.to_path_buf();
    let manifest = load_manifest(manifest_path).map_err(CliError::Runtime)?;
    let pairs = load_pairs(&manifest).map_err(CliError::Runtime)?;

    let mut items = Vec::new();
    let mut load_failures = Vec::new();
    for pair in pairs {
        let path = fused_dir.join(format!("{}.png", pair.id));
        match load_image(&path) {
            Ok(fused) if fused.shape() == pair.under.shape() => items.push(EvalItem {
                id: pair.id.clone(),
                fused,
                pair,
            }),
            Ok(fused) => load_failures.push(format!(
                "{}: fused {:?} does not match sources {:?}",
                pair.id,
                fused.shape(),
                pair.under.shape()
            )),
            Err(e) => load_failures.push(format!("{}: {e:#}", pair.id)),
        }
    }
    if items.is_empty() {
        return Err(CliError::Runtime(anyhow!(
            "no fused images found under {} ({})",
            fused_dir.display(),
            load_failures.join("; ")
        )));
    }
    for failure in &load_failures {
        eprintln!("warning: skipping {failure}");
    }
    let report = evaluate_report(&items);
    write_json(&out_dir.join("report.json"), &report).map_err(CliError::Runtime)?;
    write_report_csv(&out_dir.join("report.csv"), &report).map_err(CliError::Runtime)?;
    Ok(())
}
