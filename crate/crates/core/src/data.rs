//! Exposure pairs, the natural-image pool, and deterministic batching.
//!
//! Decoding and manifest parsing live in the companion crate; this module
//! owns the validated in-memory types and every operation whose result must
//! be a pure function of `(data, seed)`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{CoreError, CoreResult};
use crate::rng::{self, Rng};
use crate::tensor::Image;

/// One under-/over-exposed source pair with an optional reference image.
#[derive(Debug, Clone)]
pub struct ExposurePair {
    pub id: String,
    pub under: Image,
    pub over: Image,
    pub reference: Option<Image>,
}

impl ExposurePair {
    /// Validate that all members share one shape.
    pub fn new(
        id: impl Into<String>,
        under: Image,
        over: Image,
        reference: Option<Image>,
    ) -> CoreResult<Self> {
        let id = id.into();
        if under.shape() != over.shape() {
            return Err(CoreError::DimensionMismatch(format!(
                "pair {id}: under {:?} vs over {:?}",
                under.shape(),
                over.shape()
            )));
        }
        if let Some(r) = &reference {
            if r.shape() != under.shape() {
                return Err(CoreError::DimensionMismatch(format!(
                    "pair {id}: reference {:?} vs sources {:?}",
                    r.shape(),
                    under.shape()
                )));
            }
        }
        Ok(ExposurePair {
            id,
            under,
            over,
            reference,
        })
    }

    pub fn height(&self) -> usize {
        self.under.height()
    }

    pub fn width(&self) -> usize {
        self.under.width()
    }
}

/// Crop all members of a pair at one shared random offset.
pub fn random_crop_pair(pair: &ExposurePair, size: usize, rng: &mut Rng) -> CoreResult<ExposurePair> {
    let (h, w) = (pair.height(), pair.width());
    if size > h || size > w {
        return Err(CoreError::CropTooLarge { size, h, w });
    }
    let y0 = if h == size { 0 } else { rng.random_range(0..=h - size) };
    let x0 = if w == size { 0 } else { rng.random_range(0..=w - size) };
    let crop = |img: &Image| Image::new(img.crop(y0, x0, size, size)).expect("crop stays valid");
    Ok(ExposurePair {
        id: pair.id.clone(),
        under: crop(&pair.under),
        over: crop(&pair.over),
        reference: pair.reference.as_ref().map(crop),
    })
}

/// Pool of natural-light images used as contrastive positives.
#[derive(Debug, Clone)]
pub struct NaturalPool {
    pub images: Vec<Image>,
}

impl NaturalPool {
    pub fn new(images: Vec<Image>) -> Self {
        NaturalPool { images }
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Draw one pool image and fit it to `h x w`: center-cropped, bilinearly
/// upsampled first when smaller (no aspect warping).
pub fn sample_natural(pool: &NaturalPool, h: usize, w: usize, rng: &mut Rng) -> CoreResult<Image> {
    if pool.images.is_empty() {
        return Err(CoreError::EmptyPool);
    }
    let idx = rng.random_range(0..pool.images.len());
    let img = &pool.images[idx];
    let (ih, iw) = (img.height(), img.width());
    let fitted = if ih < h || iw < w {
        let scale_h = h as f64 / ih as f64;
        let scale_w = w as f64 / iw as f64;
        let scale = scale_h.max(scale_w);
        let nh = ((ih as f64 * scale) + 0.999_999).max(h as f64) as usize;
        let nw = ((iw as f64 * scale) + 0.999_999).max(w as f64) as usize;
        img.resize_bilinear(nh, nw)
    } else {
        img.tensor().clone()
    };
    let y0 = (fitted.height() - h) / 2;
    let x0 = (fitted.width() - w) / 2;
    Image::clamped(fitted.crop(y0, x0, h, w))
}

/// Deterministic 50/50 split by hashed id: entries sorted by
/// `(fnv1a(id), id)` alternate between train (even positions) and
/// validation (odd positions). Returns indices into the input order.
pub fn split_half_by_hash(ids: &[String]) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by_key(|&i| (rng::fnv1a(ids[i].as_bytes()), ids[i].clone()));
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if pos % 2 == 0 {
            train.push(i);
        } else {
            val.push(i);
        }
    }
    (train, val)
}

/// Shuffle indices and chunk them into batches; the final partial batch is
/// kept. Pure function of `(len, batch, rng state)`.
pub fn epoch_batches(len: usize, batch: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    assert!(batch >= 1);
    let mut idx: Vec<usize> = (0..len).collect();
    // Fisher-Yates.
    for i in (1..len).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx.chunks(batch).map(|c| c.to_vec()).collect()
}
