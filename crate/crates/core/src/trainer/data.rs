use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::eeg::{maps_at, preprocess, EegRecording, Electrode};
use crate::error::{Error, Result};
use crate::topomap::{
    augment_signflip, build_dataset_with, load_dataset, project_electrodes, save_dataset, split, NormStats,
    RasterOperator, TopomapDataset, SPLIT_RATIO,
};

/// Everything training and evaluation need from one recording.
#[derive(Debug, Clone)]
pub struct SubjectData {
    /// Normalized, sign-flip augmented training images.
    pub train: TopomapDataset,
    /// Normalized evaluation images (never augmented).
    pub eval: TopomapDataset,
    /// Filtered electrode maps at the evaluation peaks, `(N_eval, channels)`.
    pub eval_maps: Array2<f64>,
    /// Projected electrode positions for sampling decoded images.
    pub pos2d: Vec<[f64; 2]>,
    pub stats: NormStats,
}

impl SubjectData {
    pub fn train_images(&self) -> Array4<f32> {
        self.train.images_f32()
    }

    pub fn eval_images(&self) -> Array4<f32> {
        self.eval.images_f32()
    }

    /// Training images without their sign-flipped twins.
    pub fn unaugmented_train_images(&self) -> Array4<f32> {
        self.train.unaugmented().images_f32()
    }
}

/// Preprocess, rasterize, split, normalize with training statistics, and augment.
pub fn prepare_subject(rec: &EegRecording, split_seed: u64) -> Result<SubjectData> {
    let (filtered, series) = preprocess(rec)?;
    let pos2d = project_electrodes(&rec.montage);
    let op = RasterOperator::new(&pos2d)?;
    let ds = build_dataset_with(&op, &filtered, &series.peak_indices)?;
    let (train, eval) = split(&ds, SPLIT_RATIO, split_seed)?;
    let stats = NormStats::fit(&train)?;
    let train = augment_signflip(&stats.apply(&train))?;
    let eval_peaks: Vec<usize> = eval.source_indices.iter().map(|&i| i as usize).collect();
    let eval_maps = maps_at(&filtered, &eval_peaks);
    let eval = stats.apply(&eval);
    Ok(SubjectData { train, eval, eval_maps, pos2d, stats })
}

#[derive(Serialize, Deserialize)]
struct SubjectMeta {
    montage: Vec<Electrode>,
    stats: NormStats,
    eval_maps: Vec<Vec<f64>>,
}

const TRAIN_FILE: &str = "train.tmap";
const EVAL_FILE: &str = "eval.tmap";
const META_FILE: &str = "subject.json";

/// Writes a prepared subject as `train.tmap`, `eval.tmap` and `subject.json`.
pub fn save_subject(data: &SubjectData, montage: &[Electrode], dir: &Path) -> Result<()> {
    if montage.len() != data.eval_maps.ncols() {
        return Err(Error::MontageMismatch { data: data.eval_maps.ncols(), montage: montage.len() });
    }
    std::fs::create_dir_all(dir)?;
    save_dataset(&data.train, &dir.join(TRAIN_FILE))?;
    save_dataset(&data.eval, &dir.join(EVAL_FILE))?;
    let meta = SubjectMeta {
        montage: montage.to_vec(),
        stats: data.stats,
        eval_maps: data.eval_maps.outer_iter().map(|r| r.to_vec()).collect(),
    };
    serde_json::to_writer(BufWriter::new(File::create(dir.join(META_FILE))?), &meta)?;
    Ok(())
}

pub fn load_subject(dir: &Path) -> Result<SubjectData> {
    let meta: SubjectMeta = serde_json::from_reader(BufReader::new(File::open(dir.join(META_FILE))?))?;
    let c = meta.montage.len();
    if meta.eval_maps.iter().any(|r| r.len() != c) {
        return Err(Error::MontageMismatch { data: meta.eval_maps.first().map_or(0, Vec::len), montage: c });
    }
    let flat: Vec<f64> = meta.eval_maps.iter().flatten().copied().collect();
    let eval_maps = Array2::from_shape_vec((meta.eval_maps.len(), c), flat).map_err(|e| Error::shape(e.to_string()))?;
    let eval = load_dataset(&dir.join(EVAL_FILE))?;
    if eval.len() != eval_maps.nrows() {
        return Err(Error::Format(format!("{} evaluation images but {} electrode maps", eval.len(), eval_maps.nrows())));
    }
    Ok(SubjectData {
        train: load_dataset(&dir.join(TRAIN_FILE))?,
        eval,
        eval_maps,
        pos2d: project_electrodes(&meta.montage),
        stats: meta.stats,
    })
}
