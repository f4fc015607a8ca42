//! Acceptance suite: runs every criterion at its stated tolerance and
//! prints one pass/fail line per criterion (`--nocapture` to see them on
//! success; they are replayed automatically on failure).

mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use common::{tiny_config, write_toy_dataset};
use mef_core::bilevel::{
    beta_gradient, run_search, run_train, step_alpha, step_beta, step_omega, NoopSink,
    SearchConfig, SearchState, TrainConfig,
};
use mef_core::contrastive::gamma_p;
use mef_core::extractor::FeatureExtractor;
use mef_core::gradcheck::check_gradient;
use mef_core::loss::{eval_candidate, eval_candidate_grad, LossCtx, CATALOG};
use mef_core::metrics;
use mef_core::net::NetConfig;
use mef_core::ssim::{MefSsimConfig, SsimConfig};
use mef_core::tensor::{luminance, Image, Tensor};
use mef_core::wsras::{ThetaRule, WsrasConfig};
use mef_testkit::{noise_tensor, oracle, synthetic_scene, toy_dataset, toy_pair, toy_pool};

type CriterionResult = Result<String, String>;

fn luma01(t: &Tensor) -> Vec<f64> {
    luminance(t)
}

fn luma255(t: &Tensor) -> Vec<f64> {
    luminance(t).into_iter().map(|v| v * 255.0).collect()
}

/// Criterion 1: full-dataset benchmark numbers need hundreds of training
/// pairs, pretrained backbone weights, and GPU-scale epochs; reproducing
/// them is out of scope at desk scale. The remaining criteria are the
/// property-based substitute.
fn c1_scope() -> CriterionResult {
    Ok("full-scale benchmark reproduction out of scope; property-based criteria below".into())
}

/// Criterion 2: all 17 loss candidates pass central finite-difference
/// gradient checks on 8x8 double-precision images, rel err <= 1e-4.
fn c2_loss_gradients() -> CriterionResult {
    let extractor = FeatureExtractor::fallback();
    // 8x8 images cannot carry the default 11-pixel SSIM window; the checks
    // run the same gradient code with a 7-pixel window.
    let ctx = LossCtx {
        extractor: &extractor,
        ssim: SsimConfig::with_window(7),
        mef: MefSsimConfig { patch: 8, stride: 1 },
    };
    let under = Image::new(noise_tensor(3, 8, 8, 201).map(|v| 0.2 + 0.6 * v)).unwrap();
    let over = Image::new(noise_tensor(3, 8, 8, 202).map(|v| 0.2 + 0.6 * v)).unwrap();
    let reference = Image::new(noise_tensor(3, 8, 8, 203).map(|v| 0.2 + 0.6 * v)).unwrap();
    let pair = mef_core::data::ExposurePair::new("fx", under, over, Some(reference)).unwrap();
    let f = noise_tensor(3, 8, 8, 204).map(|v| 0.2 + 0.6 * v);
    let mut worst: (f64, &str) = (0.0, "");
    for cand in &CATALOG {
        let (_, grad) = eval_candidate_grad(cand, &pair, &f, &ctx)
            .map_err(|e| format!("{}: {e}", cand.name()))?;
        let res = check_gradient(f.data(), grad.data(), 1e-6, 1e-3, |vals| {
            let ft = Tensor::from_vec(3, 8, 8, vals.to_vec()).unwrap();
            eval_candidate(cand, &pair, &ft, &ctx).unwrap()
        });
        if res.max_rel_err > worst.0 {
            worst = (res.max_rel_err, cand.name());
        }
        if res.max_rel_err > 1e-4 {
            return Err(format!(
                "{}: rel err {:.3e} exceeds 1e-4 ({res:?})",
                cand.name(),
                res.max_rel_err
            ));
        }
    }
    Ok(format!(
        "17/17 candidates within 1e-4 (worst {:.2e} at {})",
        worst.0, worst.1
    ))
}

/// Criterion 3: every metric matches its independent oracle within 1e-4 on
/// the fixture set, and the named identity cases hold exactly.
fn c3_metric_oracles() -> CriterionResult {
    let pair = toy_pair("fx", 64, 64, 301);
    let fused = Image::new(pair.under.zip(&pair.over, |a, b| 0.5 * (a + b))).unwrap();
    let reference = pair.reference.clone().unwrap();
    let tol = 1e-4;
    let mut lines = Vec::new();

    let check = |name: &str, got: f64, expect: f64| -> Result<String, String> {
        if (got - expect).abs() <= tol {
            Ok(format!("{name} {got:.6}~{expect:.6}"))
        } else {
            Err(format!("{name}: {got} vs oracle {expect}"))
        }
    };
    lines.push(check(
        "sd",
        metrics::sd(&fused),
        oracle::std_pop(&luma255(&fused)),
    )?);
    lines.push(check(
        "en",
        metrics::en(&fused),
        oracle::entropy_bits(&luma255(&fused)),
    )?);
    lines.push(check(
        "cc",
        metrics::cc(&fused, &reference).map_err(|e| e.to_string())?,
        oracle::pearson(&luma01(&fused), &luma01(&reference)),
    )?);
    lines.push(check(
        "ms_ssim",
        metrics::ms_ssim(&fused, &reference).map_err(|e| e.to_string())?,
        oracle::ms_ssim_naive(&luma01(&fused), &luma01(&reference), 64, 64),
    )?);
    // Five-scale case on a larger fixture.
    let big = synthetic_scene(176, 176, 302);
    let big_off = Image::clamped(big.map(|v| v + 0.05)).unwrap();
    lines.push(check(
        "ms_ssim@5scale",
        metrics::ms_ssim(&big, &big_off).map_err(|e| e.to_string())?,
        oracle::ms_ssim_naive(&luma01(&big), &luma01(&big_off), 176, 176),
    )?);
    lines.push(check(
        "mef_ssim",
        metrics::mef_ssim_metric(&fused, &pair).map_err(|e| e.to_string())?,
        oracle::mef_ssim_naive(
            &luma01(&fused),
            &luma01(&pair.under),
            &luma01(&pair.over),
            64,
            64,
            8,
            1,
        ),
    )?);
    lines.push(check(
        "vif",
        metrics::vif(&fused, &pair).map_err(|e| e.to_string())?,
        oracle::vifp_naive(&luma255(&pair.under), &luma255(&fused), 64, 64)
            + oracle::vifp_naive(&luma255(&pair.over), &luma255(&fused), 64, 64),
    )?);
    lines.push(check(
        "tmqi",
        metrics::tmqi(&fused, &reference).map_err(|e| e.to_string())?,
        oracle::tmqi_naive(&luma255(&fused), &luma255(&reference), 64, 64),
    )?);
    lines.push(check(
        "qabf",
        metrics::qabf(&fused, &pair).map_err(|e| e.to_string())?,
        oracle::qabf_naive(
            &luma01(&fused),
            &luma01(&pair.under),
            &luma01(&pair.over),
            64,
            64,
        ),
    )?);

    // Exact identity cases.
    let exact = |name: &str, got: f64, expect: f64| -> Result<(), String> {
        if got == expect {
            Ok(())
        } else {
            Err(format!("{name}: {got} != {expect} (must be exact)"))
        }
    };
    exact(
        "cc identity",
        metrics::cc(&fused, &fused).map_err(|e| e.to_string())?,
        1.0,
    )?;
    exact(
        "ms_ssim identity",
        metrics::ms_ssim(&fused, &fused).map_err(|e| e.to_string())?,
        1.0,
    )?;
    exact("en constant", metrics::en(&Tensor::filled(3, 16, 16, 0.5)), 0.0)?;
    exact(
        "sd {0,255}",
        metrics::sd(&Tensor::from_vec(1, 1, 2, vec![0.0, 1.0]).unwrap()),
        127.5,
    )?;
    Ok(format!(
        "8 metrics within 1e-4 of oracles; identity cases exact ({})",
        lines.len()
    ))
}

/// Criterion 4: the contrastive ratio returns 1/8 on the scalar stub
/// fixture, and interpolating toward the positive never increases it.
fn c4_contrastive() -> CriterionResult {
    let stub = FeatureExtractor::linear_stub();
    let scalar = |v: f64| Tensor::filled(1, 1, 1, v);
    let (f, p, u, o) = (scalar(2.0), scalar(1.0), scalar(0.0), scalar(4.0));
    let v = gamma_p(&stub, &f, &p, &[(&u, &o)]).map_err(|e| e.to_string())?;
    if (v - 0.125).abs() > 1e-9 {
        return Err(format!("stub fixture returned {v}, expected 1/8"));
    }

    let f = noise_tensor(1, 8, 8, 401);
    let pos = noise_tensor(1, 8, 8, 402);
    let u = noise_tensor(1, 8, 8, 403);
    let o = noise_tensor(1, 8, 8, 404);
    let mut prev = f64::INFINITY;
    let mut values = Vec::new();
    for k in 0..=4 {
        let t = 0.25 * k as f64;
        let ft = f.zip(&pos, |a, b| (1.0 - t) * a + t * b);
        let g = gamma_p(&stub, &ft, &pos, &[(&u, &o)]).map_err(|e| e.to_string())?;
        if g > prev + 1e-12 {
            return Err(format!("gamma increased at t={t}: {g} > {prev}"));
        }
        values.push(g);
        prev = g;
    }
    Ok(format!(
        "stub fixture = 1/8; monotone over t=0..1: {values:?}"
    ))
}

fn toy_search_config(seed: u64) -> SearchConfig {
    SearchConfig {
        lr_alpha: 2e-1,
        lr_beta: 3e-2,
        lr_omega: 5e-3,
        search_epochs: 3,
        batch_size: 2,
        seed,
        crop: 24,
        wsras: WsrasConfig {
            theta: ThetaRule::HalfUniform,
            retain_p: 2,
        },
        net: NetConfig {
            width: 8,
            stream_edges: 1,
            t_iters: 2,
        },
    }
}

/// Criterion 5: the refinement invariants on a toy search — retention floor,
/// audited prune weights, and brute-force agreement of the retained sets.
fn c5_wsras_invariants() -> CriterionResult {
    let extractor = FeatureExtractor::fallback();
    let ctx = LossCtx::new(&extractor);
    let pairs = toy_dataset(8, 32, 32, 501);
    let pool = toy_pool(2, 32, 32, 502);
    let cfg = toy_search_config(55);
    let result = run_search(&cfg, &pairs, &pool, &ctx).map_err(|e| e.to_string())?;

    for snap in &result.arch_snapshots {
        let active = snap.active.iter().filter(|&&a| a).count();
        if active < cfg.wsras.retain_p {
            return Err(format!("edge {} fell below P: {active}", snap.name));
        }
    }
    for ev in &result.prune_log {
        if ev.weight_at_prune >= ev.theta {
            return Err(format!(
                "prune event on {} recorded weight {} >= theta {}",
                ev.edge_name, ev.weight_at_prune, ev.theta
            ));
        }
    }
    // Brute-force argmax-P oracle over each edge's final softmax weights.
    for (snap, (name, retained)) in result.arch_snapshots.iter().zip(result.retained.iter()) {
        let weights = mef_core::fmath::softmax(&snap.alpha);
        let live: Vec<usize> = (0..snap.active.len()).filter(|&i| snap.active[i]).collect();
        let p = cfg.wsras.retain_p;
        let mut best: Option<(f64, Vec<usize>)> = None;
        for mask in 0u32..(1 << live.len()) {
            if mask.count_ones() as usize != p {
                continue;
            }
            let subset: Vec<usize> = (0..live.len()).filter(|i| mask & (1 << i) != 0).collect();
            let total: f64 = subset.iter().map(|&i| weights[i]).sum();
            let better = match &best {
                None => true,
                Some((bt, bs)) => total > *bt + 1e-12 || (total > *bt - 1e-12 && subset < *bs),
            };
            if better {
                best = Some((total, subset));
            }
        }
        let (_, oracle_subset) = best.unwrap();
        let mut got: Vec<usize> = retained
            .iter()
            .map(|(kind, _)| {
                live.iter()
                    .position(|&i| snap.kinds[i] == kind.name())
                    .expect("retained kind is active")
            })
            .collect();
        got.sort_unstable();
        if got != oracle_subset {
            return Err(format!(
                "edge {name}: retained {got:?} != brute force {oracle_subset:?}"
            ));
        }
    }
    Ok(format!(
        "floors held, {} prune events audited, retention = brute-force argmax-P on {} edges",
        result.prune_log.len(),
        result.arch_snapshots.len()
    ))
}

/// Criterion 6: identical seeds produce byte-identical artifacts.
fn c6_determinism() -> CriterionResult {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = write_toy_dataset(dir.path(), 4, 1, 32, 61, &tiny_config(61));
    for out in ["o1", "o2"] {
        let cfg = mef_cli::config::load_config(
            Some(&config),
            &[format!("paths.output_dir={out}")],
            None,
        )
        .map_err(|e| e.to_string())?;
        // Output dir resolves relative to the CWD of the override, so pin it.
        let mut cfg = cfg;
        cfg.paths.output_dir = Some(dir.path().join(out));
        mef_cli::commands::cmd_search(&cfg).map_err(|e| e.to_string())?;
    }
    for name in ["architecture.json", "loss_weights.json", "history.csv"] {
        let a = std::fs::read(dir.path().join("o1").join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dir.path().join("o2").join(name)).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{name} differs between identical runs"));
        }
    }
    Ok("architecture JSON, loss-weight report, and history CSV byte-identical".into())
}

/// Criterion 7: after a toy search and training run, the fused outputs beat
/// simple average fusion on mean MEF-SSIM over four held-out pairs.
fn c7_end_to_end() -> CriterionResult {
    let extractor = FeatureExtractor::fallback();
    let ctx = LossCtx::new(&extractor);
    let train_pairs = toy_dataset(8, 48, 48, 701);
    let holdout = toy_dataset(4, 48, 48, 702);
    let pool = toy_pool(3, 48, 48, 703);
    let net = NetConfig {
        width: 8,
        stream_edges: 2,
        t_iters: 2,
    };
    let mut scfg = toy_search_config(42);
    scfg.net = net;
    scfg.crop = 32;
    let search = run_search(&scfg, &train_pairs, &pool, &ctx).map_err(|e| e.to_string())?;
    let tcfg = TrainConfig {
        epochs: 150,
        batch_size: 4,
        lr: 3e-3,
        seed: 42,
        crop: 32,
    };
    let trained = run_train(
        &tcfg,
        net,
        &search.retained,
        &search.loss,
        &train_pairs,
        &ctx,
        &mut NoopSink,
    )
    .map_err(|e| e.to_string())?;

    let mut model_sum = 0.0;
    let mut baseline_sum = 0.0;
    for pair in &holdout {
        let fused = trained.model.forward(pair).map_err(|e| e.to_string())?;
        let avg = Image::new(pair.under.zip(&pair.over, |a, b| 0.5 * (a + b))).unwrap();
        model_sum += metrics::mef_ssim_metric(&fused, pair).map_err(|e| e.to_string())?;
        baseline_sum += metrics::mef_ssim_metric(&avg, pair).map_err(|e| e.to_string())?;
    }
    let model_mean = model_sum / holdout.len() as f64;
    let baseline_mean = baseline_sum / holdout.len() as f64;
    if model_mean >= baseline_mean {
        Ok(format!(
            "mean MEF-SSIM {model_mean:.4} >= average-fusion baseline {baseline_mean:.4}"
        ))
    } else {
        Err(format!(
            "mean MEF-SSIM {model_mean:.4} < baseline {baseline_mean:.4}"
        ))
    }
}

/// Criterion 8: each step function leaves the other two parameter groups
/// bitwise unchanged across 100 random steps.
fn c8_update_isolation() -> CriterionResult {
    let extractor = FeatureExtractor::fallback();
    let ctx = LossCtx::new(&extractor);
    let pairs = toy_dataset(4, 16, 16, 801);
    let pool = toy_pool(1, 16, 16, 802);
    let natural = pool.images[0].clone();
    let mut cfg = toy_search_config(88);
    cfg.crop = 16;
    cfg.net = NetConfig {
        width: 4,
        stream_edges: 1,
        t_iters: 2,
    };
    let mut state = SearchState::new(cfg).map_err(|e| e.to_string())?;
    for step in 0..100u64 {
        // Rotate through batches deterministically.
        let i = (step as usize) % pairs.len();
        let j = (step as usize + 1) % pairs.len();
        let batch = vec![pairs[i].clone(), pairs[j].clone()];
        match step % 3 {
            0 => {
                let alpha0 = state.model.alpha_snapshot();
                let beta0 = state.loss.beta.clone();
                step_omega(&mut state, &batch, &ctx).map_err(|e| e.to_string())?;
                if state.model.alpha_snapshot() != alpha0 || state.loss.beta != beta0 {
                    return Err(format!("step_omega touched alpha or beta at step {step}"));
                }
            }
            1 => {
                let omega0 = state.model.omega_snapshot();
                let alpha0 = state.model.alpha_snapshot();
                step_beta(&mut state, &batch, &natural, &ctx).map_err(|e| e.to_string())?;
                if state.model.omega_snapshot() != omega0
                    || state.model.alpha_snapshot() != alpha0
                {
                    return Err(format!("step_beta touched omega or alpha at step {step}"));
                }
            }
            _ => {
                let omega0 = state.model.omega_snapshot();
                let beta0 = state.loss.beta.clone();
                step_alpha(&mut state, &batch, &ctx).map_err(|e| e.to_string())?;
                if state.model.omega_snapshot() != omega0 || state.loss.beta != beta0 {
                    return Err(format!("step_alpha touched omega or beta at step {step}"));
                }
            }
        }
    }
    // The beta path must also carry a usable gradient on this fixture.
    let (_, dbeta) = beta_gradient(&state, &pairs[..2].to_vec(), &natural, &ctx)
        .map_err(|e| e.to_string())?;
    if dbeta.iter().all(|g| *g == 0.0) {
        return Err("loss-logit gradient is identically zero".into());
    }
    Ok("100 steps: untouched parameter groups bitwise identical".into())
}

/// Criterion 9: the CLI round-trip completes with exit 0 and coherent
/// artifacts on the bundled fixture.
fn c9_cli_roundtrip() -> CriterionResult {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = write_toy_dataset(dir.path(), 4, 2, 48, 91, &tiny_config(91));
    let cfg = config.to_str().unwrap();
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(env!("CARGO_BIN_EXE_mef"))
            .args(args)
            .current_dir(dir.path())
            .output()
            .map_err(|e| e.to_string())?;
        if out.status.code() != Some(0) {
            return Err(format!(
                "`mef {}` exited {:?}: {}",
                args.join(" "),
                out.status.code(),
                String::from_utf8_lossy(&out.stderr)
            ));
        }
        Ok(())
    };
    run(&["search", "--config", cfg])?;
    run(&["train", "--config", cfg])?;
    run(&["fuse", "--config", cfg])?;
    run(&["eval", "--config", cfg])?;

    let fused = image::open(dir.path().join("out/fused/eval00.png")).map_err(|e| e.to_string())?;
    if (fused.width(), fused.height()) != (48, 48) {
        return Err(format!(
            "fused PNG is {}x{}, inputs were 48x48",
            fused.width(),
            fused.height()
        ));
    }
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/report.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let aggregate = report["aggregate"]
        .as_object()
        .ok_or("report has no aggregate section")?;
    for name in metrics::METRIC_ORDER {
        if !aggregate.contains_key(name) {
            return Err(format!("report is missing metric `{name}`"));
        }
    }
    Ok("search/train/fuse/eval all exit 0; fused PNG 48x48; report has all 8 metrics".into())
}

#[test]
fn acceptance() {
    let criteria: Vec<(
        &str,
        Option<Duration>,
        fn() -> CriterionResult,
    )> = vec![
        ("1 scope", None, c1_scope),
        ("2 loss gradient suite", Some(Duration::from_secs(60)), c2_loss_gradients),
        ("3 metric oracle suite", Some(Duration::from_secs(120)), c3_metric_oracles),
        ("4 contrastive ratio", None, c4_contrastive),
        ("5 refinement invariants", Some(Duration::from_secs(300)), c5_wsras_invariants),
        ("6 search determinism", None, c6_determinism),
        ("7 end-to-end improvement", Some(Duration::from_secs(600)), c7_end_to_end),
        ("8 update isolation", None, c8_update_isolation),
        ("9 cli round-trip", None, c9_cli_roundtrip),
    ];
    let mut failures = Vec::new();
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let within_budget = budget.map(|b| elapsed <= b).unwrap_or(true);
        match (&outcome, within_budget) {
            (Ok(detail), true) => {
                println!("PASS criterion {name} [{elapsed:.1?}]: {detail}");
            }
            (Ok(detail), false) => {
                println!(
                    "FAIL criterion {name} [{elapsed:.1?}]: over budget {budget:?} ({detail})"
                );
                failures.push(name);
            }
            (Err(msg), _) => {
                println!("FAIL criterion {name} [{elapsed:.1?}]: {msg}");
                failures.push(name);
            }
        }
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}
