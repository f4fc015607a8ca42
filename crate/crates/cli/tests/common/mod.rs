//! Shared fixture plumbing for the integration and acceptance suites.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mef_cli::imgio::save_png;
use mef_testkit::{synthetic_scene, toy_pair};

/// Write a toy dataset (pairs with references, pool, manifests, config) and
/// return the config path.
pub fn write_toy_dataset(
    root: &Path,
    n_train: usize,
    n_eval: usize,
    size: usize,
    seed: u64,
    config_body: &str,
) -> PathBuf {
    std::fs::create_dir_all(root.join("pairs")).unwrap();
    std::fs::create_dir_all(root.join("pool")).unwrap();
    let mut write_split = |prefix: &str, count: usize, base: u64| -> String {
        let mut csv = String::from("id,under,over,reference\n");
        for i in 0..count {
            let pair = toy_pair(&format!("{prefix}{i:02}"), size, size, base + i as u64);
            save_png(&root.join(format!("pairs/{}_u.png", pair.id)), &pair.under).unwrap();
            save_png(&root.join(format!("pairs/{}_o.png", pair.id)), &pair.over).unwrap();
            let r = pair.reference.as_ref().unwrap();
            save_png(&root.join(format!("pairs/{}_r.png", pair.id)), r).unwrap();
            writeln!(
                csv,
                "{id},pairs/{id}_u.png,pairs/{id}_o.png,pairs/{id}_r.png",
                id = pair.id
            )
            .unwrap();
        }
        csv
    };
    let train = write_split("train", n_train, seed * 100);
    std::fs::write(root.join("train.csv"), train).unwrap();
    let eval = write_split("eval", n_eval, seed * 100 + 50);
    std::fs::write(root.join("eval.csv"), eval).unwrap();

    let mut pool_txt = String::new();
    for i in 0..3u64 {
        let img = synthetic_scene(size.max(48), size.max(48), seed * 100 + 90 + i);
        save_png(&root.join(format!("pool/nat{i:02}.png")), &img).unwrap();
        writeln!(pool_txt, "pool/nat{i:02}.png").unwrap();
    }
    std::fs::write(root.join("pool.txt"), pool_txt).unwrap();

    let config_path = root.join("config.toml");
    std::fs::write(&config_path, config_body).unwrap();
    config_path
}

/// A small config fast enough for integration tests.
pub fn tiny_config(seed: u64) -> String {
    format!(
        "\
seed = {seed}

[paths]
train_manifest = \"train.csv\"
eval_manifest = \"eval.csv\"
natural_pool = \"pool.txt\"
output_dir = \"out\"

[model]
width = 4
stream_edges = 1
t_iters = 2

[search]
epochs = 2
batch_size = 2
crop = 16
lr_omega = 0.005

[train]
epochs = 2
batch_size = 2
lr = 0.002
crop = 16
"
    )
}
