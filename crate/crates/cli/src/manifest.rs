//! Dataset manifests: an explicit CSV listing of exposure pairs (no
//! directory discovery) and a plain-text listing for the natural pool.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use mef_core::data::{ExposurePair, NaturalPool};

use crate::imgio::load_image;

/// One manifest row with resolved paths.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub id: String,
    pub under: PathBuf,
    pub over: PathBuf,
    pub reference: Option<PathBuf>,
}

/// A validated dataset manifest.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

/// Minimum image side accepted by the pipeline.
pub const MIN_IMAGE_SIDE: usize = 8;

/// Parse and validate a manifest file.
///
/// Format: UTF-8 CSV with header `id,under,over,reference`; the reference
/// column may be empty. Paths resolve relative to the manifest's directory.
/// Every referenced file must exist and ids must be unique.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .with_context(|| format!("cannot open manifest {}", path.display()))?;
    {
        let headers = reader.headers().context("manifest has no header row")?;
        let expect = ["id", "under", "over", "reference"];
        let got: Vec<&str> = headers.iter().collect();
        if got != expect {
            return Err(anyhow!(
                "malformed manifest {}: header must be `id,under,over,reference`, got {:?}",
                path.display(),
                got
            ));
        }
    }
    let mut entries = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (i, row) in reader.records().enumerate() {
        let rownum = i + 2; // header is row 1
        let row = row.with_context(|| {
            format!("malformed manifest {} at row {rownum}", path.display())
        })?;
        if row.len() != 4 {
            return Err(anyhow!(
                "malformed manifest {} at row {rownum}: expected 4 columns, got {}",
                path.display(),
                row.len()
            ));
        }
        let id = row[0].trim().to_string();
        if id.is_empty() {
            return Err(anyhow!(
                "malformed manifest {} at row {rownum}: empty id",
                path.display()
            ));
        }
        if !seen.insert(id.clone()) {
            return Err(anyhow!("duplicate id `{id}` in manifest {}", path.display()));
        }
        let resolve = |cell: &str, what: &str| -> Result<PathBuf> {
            let p = base.join(cell.trim());
            if !p.is_file() {
                return Err(anyhow!(
                    "manifest {} row {rownum}: missing {what} file {}",
                    path.display(),
                    p.display()
                ));
            }
            Ok(p)
        };
        let under = resolve(&row[1], "under")?;
        let over = resolve(&row[2], "over")?;
        let reference = if row[3].trim().is_empty() {
            None
        } else {
            Some(resolve(&row[3], "reference")?)
        };
        entries.push(ManifestEntry {
            id,
            under,
            over,
            reference,
        });
    }
    Ok(DatasetManifest { entries })
}

/// Decode one manifest entry into a validated exposure pair.
pub fn load_exposure_pair(entry: &ManifestEntry) -> Result<ExposurePair> {
    let under = load_image(&entry.under)?;
    let over = load_image(&entry.over)?;
    let reference = entry.reference.as_deref().map(load_image).transpose()?;
    if under.height() < MIN_IMAGE_SIDE || under.width() < MIN_IMAGE_SIDE {
        return Err(anyhow!(
            "pair {}: images must be at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}, got {}x{}",
            entry.id,
            under.height(),
            under.width()
        ));
    }
    ExposurePair::new(entry.id.clone(), under, over, reference)
        .map_err(|e| anyhow!("pair {}: {e}", entry.id))
}

/// Load every pair of a manifest.
pub fn load_pairs(manifest: &DatasetManifest) -> Result<Vec<ExposurePair>> {
    manifest.entries.iter().map(load_exposure_pair).collect()
}

/// Load the natural pool from a listing file: one image path per line,
/// relative to the listing, `#` lines ignored.
pub fn load_pool(path: &Path) -> Result<NaturalPool> {
    let base = path.parent().unwrap_or(Path::new("."));
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read pool listing {}", path.display()))?;
    let mut images = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let p = base.join(line);
        let img = load_image(&p)
            .with_context(|| format!("pool listing {} line {}", path.display(), i + 1))?;
        images.push(img);
    }
    Ok(NaturalPool::new(images))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgio::save_png;
    use mef_testkit::synthetic_scene;

    fn write_scene(dir: &Path, name: &str, seed: u64) -> PathBuf {
        let p = dir.join(name);
        save_png(&p, &synthetic_scene(16, 16, seed)).unwrap();
        p
    }

    #[test]
    fn valid_three_row_manifest_parses() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            write_scene(dir.path(), &format!("u{i}.png"), i as u64);
            write_scene(dir.path(), &format!("o{i}.png"), 10 + i as u64);
        }
        write_scene(dir.path(), "r0.png", 20);
        let mpath = dir.path().join("m.csv");
        std::fs::write(
            &mpath,
            "id,under,over,reference\ns0,u0.png,o0.png,r0.png\ns1,u1.png,o1.png,\ns2,u2.png,o2.png,\n",
        )
        .unwrap();
        let m = load_manifest(&mpath).unwrap();
        assert_eq!(m.entries.len(), 3);
        assert!(m.entries[0].reference.is_some());
        assert!(m.entries[1].reference.is_none());
        let pairs = load_pairs(&m).unwrap();
        assert_eq!(pairs[0].id, "s0");
    }

    #[test]
    fn missing_image_file_is_rejected_with_row() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path(), "u.png", 1);
        let mpath = dir.path().join("m.csv");
        std::fs::write(&mpath, "id,under,over,reference\ns0,u.png,absent.png,\n").unwrap();
        let err = load_manifest(&mpath).unwrap_err().to_string();
        assert!(err.contains("missing over file"), "{err}");
        assert!(err.contains("row 2"), "{err}");
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path(), "u.png", 1);
        write_scene(dir.path(), "o.png", 2);
        let mpath = dir.path().join("m.csv");
        std::fs::write(
            &mpath,
            "id,under,over,reference\ns01,u.png,o.png,\ns01,u.png,o.png,\n",
        )
        .unwrap();
        let err = load_manifest(&mpath).unwrap_err().to_string();
        assert!(err.contains("duplicate id `s01`"), "{err}");
    }

    #[test]
    fn malformed_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mpath = dir.path().join("m.csv");
        std::fs::write(&mpath, "under,over\n").unwrap();
        let err = load_manifest(&mpath).unwrap_err().to_string();
        assert!(err.contains("header"), "{err}");
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path(), "u.png", 1);
        let big = dir.path().join("o.png");
        save_png(&big, &synthetic_scene(32, 32, 2)).unwrap();
        let mpath = dir.path().join("m.csv");
        std::fs::write(&mpath, "id,under,over,reference\ns0,u.png,o.png,\n").unwrap();
        let m = load_manifest(&mpath).unwrap();
        let err = load_pairs(&m).unwrap_err().to_string();
        assert!(err.contains("dimension mismatch"), "{err}");
    }

    #[test]
    fn pool_listing_loads_and_skips_comments() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path(), "n0.png", 3);
        write_scene(dir.path(), "n1.png", 4);
        let lpath = dir.path().join("pool.txt");
        std::fs::write(&lpath, "# comment\nn0.png\n\nn1.png\n").unwrap();
        let pool = load_pool(&lpath).unwrap();
        assert_eq!(pool.images.len(), 2);
    }
}
