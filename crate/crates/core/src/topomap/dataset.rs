use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array2, Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{head_mask, RasterOperator};
use crate::eeg::{maps_at, EegRecording};
use crate::error::{Error, Result};
use crate::vade::config::IMAGE_SIDE;

/// Normalized pixels are clipped to ±this many training standard deviations.
pub const CLIP_SIGMA: f64 = 5.0;
/// Fraction of images kept for training.
pub const SPLIT_RATIO: f64 = 0.9;
const MAGIC: &[u8; 4] = b"TMAP";

/// Topographic images with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct TopomapDataset {
    /// `(N, 1, 40, 40)`.
    pub images: Array4<f64>,
    pub head_mask: Array2<bool>,
    /// Peak sample index each image was taken from.
    pub source_indices: Vec<u64>,
    pub is_augmented: Vec<bool>,
}

impl TopomapDataset {
    pub fn new(images: Array4<f64>, source_indices: Vec<u64>, is_augmented: Vec<bool>) -> Result<Self> {
        let n = images.len_of(Axis(0));
        if images.shape()[1..] != [1, IMAGE_SIDE, IMAGE_SIDE] {
            return Err(Error::shape(format!("images must be (N, 1, {IMAGE_SIDE}, {IMAGE_SIDE}), got {:?}", images.shape())));
        }
        if source_indices.len() != n || is_augmented.len() != n {
            return Err(Error::shape("one source index and flag per image"));
        }
        Ok(Self { images, head_mask: head_mask(), source_indices, is_augmented })
    }

    pub fn len(&self) -> usize {
        self.source_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Images flattened to `(N, 1600)`.
    pub fn flat(&self) -> Array2<f64> {
        let n = self.len();
        self.images.to_shape((n, IMAGE_SIDE * IMAGE_SIDE)).expect("contiguous images").into_owned()
    }

    pub fn images_f32(&self) -> Array4<f32> {
        self.images.mapv(|v| v as f32)
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            images: self.images.select(Axis(0), idx),
            head_mask: self.head_mask.clone(),
            source_indices: idx.iter().map(|&i| self.source_indices[i]).collect(),
            is_augmented: idx.iter().map(|&i| self.is_augmented[i]).collect(),
        }
    }

    /// Images that are not sign-flipped twins.
    pub fn unaugmented(&self) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| !self.is_augmented[i]).collect();
        self.subset(&idx)
    }

    fn mask_flat(&self) -> Vec<bool> {
        self.head_mask.iter().copied().collect()
    }
}

/// One unnormalized image per peak.
pub fn build_dataset(rec: &EegRecording, peaks: &[usize]) -> Result<TopomapDataset> {
    build_dataset_with(&RasterOperator::for_montage(&rec.montage)?, rec, peaks)
}

/// As [`build_dataset`] with a precomputed operator for the recording's montage.
pub fn build_dataset_with(op: &RasterOperator, rec: &EegRecording, peaks: &[usize]) -> Result<TopomapDataset> {
    if peaks.is_empty() {
        return Err(Error::invalid("no GFP peaks to rasterize"));
    }
    if let Some(&p) = peaks.iter().find(|&&p| p >= rec.n_samples()) {
        return Err(Error::invalid(format!("peak index {p} beyond recording length {}", rec.n_samples())));
    }
    let flat = op.apply_rows(&maps_at(rec, peaks))?;
    let n = peaks.len();
    let images = flat.into_shape_with_order((n, 1, IMAGE_SIDE, IMAGE_SIDE)).expect("image shape");
    TopomapDataset::new(images, peaks.iter().map(|&p| p as u64).collect(), vec![false; n])
}

/// Random partition into `round(ratio·N)` training and the remaining evaluation images.
pub fn split(ds: &TopomapDataset, ratio: f64, seed: u64) -> Result<(TopomapDataset, TopomapDataset)> {
    let n = ds.len();
    if n < 10 {
        return Err(Error::invalid(format!("need at least 10 images to split, got {n}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (mut tr, mut ev) = (idx[..n_train].to_vec(), idx[n_train..].to_vec());
    tr.sort_unstable();
    ev.sort_unstable();
    Ok((ds.subset(&tr), ds.subset(&ev)))
}

/// Scalar z-score statistics over in-mask training pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn fit(train: &TopomapDataset) -> Result<Self> {
        let mask = train.mask_flat();
        let flat = train.flat();
        let vals: Vec<f64> = flat.outer_iter().flat_map(|r| r.iter().zip(&mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect::<Vec<_>>()).collect();
        if vals.is_empty() {
            return Err(Error::invalid("cannot fit normalization on an empty dataset"));
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        if !(std > 0.0) {
            return Err(Error::degenerate("training pixels have zero variance"));
        }
        Ok(Self { mean, std })
    }

    pub fn normalize_value(&self, x: f64) -> f64 {
        ((x - self.mean) / self.std).clamp(-CLIP_SIGMA, CLIP_SIGMA)
    }

    pub fn denormalize_value(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    /// Z-scores and clips in-mask pixels; out-of-mask pixels are set to 0.
    pub fn apply(&self, ds: &TopomapDataset) -> TopomapDataset {
        self.map_masked(ds, |v| self.normalize_value(v))
    }

    pub fn invert(&self, ds: &TopomapDataset) -> TopomapDataset {
        self.map_masked(ds, |v| self.denormalize_value(v))
    }

    fn map_masked(&self, ds: &TopomapDataset, f: impl Fn(f64) -> f64) -> TopomapDataset {
        let mut out = ds.clone();
        for mut img in out.images.outer_iter_mut() {
            let mut plane = img.slice_mut(s![0, .., ..]);
            ndarray::Zip::from(&mut plane).and(&ds.head_mask).for_each(|v, &m| *v = if m { f(*v) } else { 0.0 });
        }
        out
    }
}

/// Appends a negated twin of every image, flagged as augmented.
pub fn augment_signflip(train: &TopomapDataset) -> Result<TopomapDataset> {
    if train.is_augmented.iter().any(|&a| a) {
        return Err(Error::invalid("dataset is already augmented"));
    }
    let neg = train.images.mapv(|v| -v);
    let images = ndarray::concatenate(Axis(0), &[train.images.view(), neg.view()]).expect("same shape");
    let mut src = train.source_indices.clone();
    src.extend_from_slice(&train.source_indices);
    let mut flags = vec![false; train.len()];
    flags.extend(std::iter::repeat(true).take(train.len()));
    Ok(TopomapDataset { images, head_mask: train.head_mask.clone(), source_indices: src, is_augmented: flags })
}

/// Writes the binary `TMAP` layout; pixels are stored as `f32`.
pub fn save_dataset(ds: &TopomapDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    for d in [ds.len(), IMAGE_SIDE, IMAGE_SIDE] {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in ds.images.iter() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    for &s in &ds.source_indices {
        w.write_all(&s.to_le_bytes())?;
    }
    for &a in &ds.is_augmented {
        w.write_all(&[a as u8])?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<TopomapDataset> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let mut cur = bytes.as_slice();
    let mut take = |n: usize| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(Error::Format(format!("{}: truncated TMAP file", path.display())));
        }
        let (head, rest) = cur.split_at(n);
        cur = rest;
        Ok(head)
    };
    if take(4)? != MAGIC {
        return Err(Error::Format(format!("{}: missing TMAP magic", path.display())));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
    }
    let [n, h, w] = dims;
    if h != IMAGE_SIDE || w != IMAGE_SIDE {
        return Err(Error::Format(format!("{}: expected {IMAGE_SIDE}×{IMAGE_SIDE} images, found {h}×{w}", path.display())));
    }
    let px: Vec<f64> =
        take(n * h * w * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
    let src: Vec<u64> = take(n * 8)?.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let flags: Vec<bool> = take(n)?.iter().map(|&b| b != 0).collect();
    let images = Array4::from_shape_vec((n, 1, h, w), px).map_err(|e| Error::Format(e.to_string()))?;
    TopomapDataset::new(images, src, flags)
}
