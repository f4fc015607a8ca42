//! Writes a small synthetic dataset ready for the CLI: exposure pairs with
//! references, a natural-light pool, manifests, and a desk-scale config.
//!
//! Usage: cargo run -p mef-cli --example make_toy_dataset -- [OUT_DIR]

use std::fmt::Write as _;
use std::path::Path;

use mef_cli::imgio::save_png;
use mef_testkit::{synthetic_scene, toy_pair};

fn main() -> anyhow::Result<()> {
    let root = std::env::args().nth(1).unwrap_or_else(|| "toy-data".into());
    let root = Path::new(&root);
    std::fs::create_dir_all(root.join("pairs"))?;
    std::fs::create_dir_all(root.join("pool"))?;

    let size = 48;
    let mut train_csv = String::from("id,under,over,reference\n");
    for i in 0..8u64 {
        let pair = toy_pair(&format!("train{i:02}"), size, size, 1000 + i);
        save_png(&root.join(format!("pairs/{}_u.png", pair.id)), &pair.under)?;
        save_png(&root.join(format!("pairs/{}_o.png", pair.id)), &pair.over)?;
        let r = pair.reference.as_ref().unwrap();
        save_png(&root.join(format!("pairs/{}_r.png", pair.id)), r)?;
        writeln!(
            train_csv,
            "{id},pairs/{id}_u.png,pairs/{id}_o.png,pairs/{id}_r.png",
            id = pair.id
        )?;
    }
    std::fs::write(root.join("train.csv"), train_csv)?;

    let mut eval_csv = String::from("id,under,over,reference\n");
    for i in 0..4u64 {
        let pair = toy_pair(&format!("eval{i:02}"), size, size, 2000 + i);
        save_png(&root.join(format!("pairs/{}_u.png", pair.id)), &pair.under)?;
        save_png(&root.join(format!("pairs/{}_o.png", pair.id)), &pair.over)?;
        let r = pair.reference.as_ref().unwrap();
        save_png(&root.join(format!("pairs/{}_r.png", pair.id)), r)?;
        writeln!(
            eval_csv,
            "{id},pairs/{id}_u.png,pairs/{id}_o.png,pairs/{id}_r.png",
            id = pair.id
        )?;
    }
    std::fs::write(root.join("eval.csv"), eval_csv)?;

    let mut pool_txt = String::new();
    for i in 0..4u64 {
        let img = synthetic_scene(64, 64, 3000 + i);
        save_png(&root.join(format!("pool/nat{i:02}.png")), &img)?;
        writeln!(pool_txt, "pool/nat{i:02}.png")?;
    }
    std::fs::write(root.join("pool.txt"), pool_txt)?;

    std::fs::write(
        root.join("config.toml"),
        "\
seed = 42

[paths]
train_manifest = \"train.csv\"
eval_manifest = \"eval.csv\"
natural_pool = \"pool.txt\"
output_dir = \"out\"

[model]
width = 8
stream_edges = 2
t_iters = 2

[search]
epochs = 3
batch_size = 2
crop = 32
lr_omega = 0.005

[train]
epochs = 8
batch_size = 4
lr = 0.002
crop = 32
",
    )?;
    println!("toy dataset written to {}", root.display());
    println!("next: mef search --config {}/config.toml", root.display());
    Ok(())
}
