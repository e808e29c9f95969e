use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::Args;
use log::info;
use ndarray::Array2;

use msvade::eeg::{
    default_montage, generate_synthetic, load_montage, maps_at, preprocess as preprocess_recording, read_csv,
    save_montage, EegRecording, Electrode, SyntheticSpec,
};
use msvade::metrics::{backfit as backfit_maps, centroid_correlation_matrix, cluster_distribution, pca_project, write_matrix_csv};
use msvade::nn::checkpoint::{export, import, read_tensors, write_tensors};
use msvade::sweep::{self, render_topomap_image, write_heatmap_pgm, RecordStore, SweepGrid};
use msvade::topomap::head_mask;
use msvade::trainer::{
    centroid_templates, fit_subject, load_subject, prepare_subject, responsibilities_of, save_subject, RunOutputs,
    TrainConfig,
};
use msvade::vade::{ConvVade, ModelConfig, IMAGE_SIDE};
use msvade::{Error, Result};

const MODEL_CONFIG: &str = "model.json";
const MODEL_WEIGHTS: &str = "best.cvde";
const MONTAGE_FILE: &str = "montage.json";

fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), value)?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn montage_or_default(path: Option<&Path>) -> Result<Vec<Electrode>> {
    path.map_or_else(|| Ok(default_montage()), load_montage)
}

fn train_config(path: Option<&Path>) -> Result<TrainConfig> {
    let cfg = match path {
        Some(p) => serde_json::from_str(&read_text(p)?)?,
        None => TrainConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Loads `model.json` and `best.cvde` from a model directory.
fn load_model(dir: &Path) -> Result<(ModelConfig, ConvVade<f32>)> {
    let cfg = ModelConfig::from_json(&read_text(&dir.join(MODEL_CONFIG))?)?;
    let mut model = ConvVade::<f32>::new(cfg.arch, 0)?;
    import(&mut model, read_tensors(std::io::BufReader::new(File::open(dir.join(MODEL_WEIGHTS))?))?)?;
    Ok((cfg, model))
}

fn recording(input: &Path, montage: Option<&Path>, fs: f64) -> Result<EegRecording> {
    read_csv(input, montage_or_default(montage)?, fs)
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    templates: usize,
    /// Seconds.
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    #[arg(long, default_value_t = 250.0)]
    fs: f64,
    /// Signal-to-noise power ratio; `inf` for a noiseless recording.
    #[arg(long, default_value_t = 5.0)]
    snr: f64,
    /// Mean state duration in ms.
    #[arg(long, default_value_t = 80.0)]
    mean_state_ms: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    montage: Option<PathBuf>,
}

/// Writes `recording.csv`, `montage.json`, `templates.csv`, `states.csv` and `spec.json`.
pub fn gen_synthetic(a: GenSyntheticArgs) -> Result<()> {
    let montage = montage_or_default(a.montage.as_deref())?;
    let spec = SyntheticSpec {
        n_templates: a.templates,
        duration: a.duration,
        fs: a.fs,
        mean_state_duration: a.mean_state_ms,
        snr: a.snr,
        seed: a.seed,
    };
    let syn = generate_synthetic(&spec, &montage)?;
    fs::create_dir_all(&a.out)?;
    syn.recording.write_csv(&a.out.join("recording.csv"))?;
    save_montage(&montage, &a.out.join(MONTAGE_FILE))?;
    let names = syn.recording.channel_names();
    let mut w = csv_writer(&a.out.join("templates.csv"))?;
    w.write_record(&names)?;
    for row in syn.templates.outer_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    fs::write(a.out.join("states.csv"), syn.states.iter().map(|s| format!("{s}\n")).collect::<String>())?;
    // An infinite SNR is written as null.
    write_json(&spec, &a.out.join("spec.json"))?;
    info!("wrote {} samples × {} channels to {}", syn.recording.n_samples(), names.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Recording CSV: a header of channel names, then one sample per row.
    #[arg(long)]
    input: PathBuf,
    /// Electrode positions JSON; the bundled 10-20 montage when omitted.
    #[arg(long)]
    montage: Option<PathBuf>,
    #[arg(long, default_value_t = 250.0)]
    fs: f64,
    #[arg(long)]
    out: PathBuf,
    /// Seed of the train/eval split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn preprocess(a: PreprocessArgs) -> Result<()> {
    let rec = recording(&a.input, a.montage.as_deref(), a.fs)?;
    let data = prepare_subject(&rec, a.seed)?;
    save_subject(&data, &rec.montage, &a.out)?;
    info!("{} training images (with sign flips), {} evaluation images", data.train.len(), data.eval.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Prepared subject directory.
    #[arg(long)]
    data: PathBuf,
    /// Model configuration JSON (`K`, `dz`, `depth`, `ndf` and optional loss weights).
    #[arg(long)]
    config: PathBuf,
    /// Training hyperparameters JSON; defaults when omitted.
    #[arg(long)]
    train_config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed of the training configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the maximum number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

/// Writes `model.json`, `best.cvde`, `history.jsonl` and `report.json`.
pub fn train(a: TrainArgs) -> Result<()> {
    let model_cfg = ModelConfig::from_json(&read_text(&a.config)?)?;
    let mut cfg = train_config(a.train_config.as_deref())?;
    cfg.weights = model_cfg.weights;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.max_epochs = e;
    }
    let data = load_subject(&a.data)?;
    fs::create_dir_all(&a.out)?;
    let history = a.out.join("history.jsonl");
    if history.exists() {
        fs::remove_file(&history)?;
    }
    let out = RunOutputs { history: Some(history), checkpoint: None };
    let mut run = fit_subject(model_cfg.arch, &data, &cfg, &out)?;
    fs::write(a.out.join(MODEL_CONFIG), model_cfg.to_json())?;
    write_tensors(BufWriter::new(File::create(a.out.join(MODEL_WEIGHTS))?), &export(&mut run.model))?;
    write_json(&run.report, &a.out.join("report.json"))?;
    info!("best epoch {} composite {:.4} gev {:.4}", run.best_epoch, run.best_composite, run.report.gev);
    Ok(())
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Sweep grid JSON; the desk-scale grid over every subject directory when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory with one prepared subject directory per subject id.
    #[arg(long)]
    data_root: PathBuf,
    #[arg(long)]
    train_config: Option<PathBuf>,
    /// Record store directory; rerunning resumes.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Overrides the grid's base seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn subject_dirs(root: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| invalid(format!("cannot list {}: {e}", root.display())))? {
        let entry = entry?;
        if entry.path().is_dir() {
            out.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    Ok(out)
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    let mut grid: SweepGrid = match &a.config {
        Some(p) => serde_json::from_str(&read_text(p)?)?,
        None => SweepGrid::desk_scale(subject_dirs(&a.data_root)?, 0),
    };
    if let Some(s) = a.seed {
        grid.base_seed = s;
    }
    let cfg = train_config(a.train_config.as_deref())?;
    let store = RecordStore::open(&a.out)?;
    let s = sweep::run_sweep_dir(&grid, &a.data_root, &cfg, &store, a.jobs)?;
    info!("sweep: {} trained, {} skipped, {} failed", s.trained, s.skipped, s.failed);
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Model directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Directory for `report.json`, `latent_pca.csv` and `distribution.csv`; stdout only when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let data = load_subject(&a.data)?;
    let (cfg, mut model) = load_model(&a.model)?;
    let report = msvade::trainer::evaluate(&mut model, &data)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(out) = a.out {
        fs::create_dir_all(&out)?;
        write_json(&report, &out.join("report.json"))?;
        let (mu, gamma) = responsibilities_of(&mut model, &data.eval_images())?;
        let labels: Vec<usize> = gamma
            .outer_iter()
            .map(|r| r.iter().enumerate().fold(0, |b, (j, &v)| if v > r[b] { j } else { b }))
            .collect();
        let pca = pca_project(mu.view(), 2)?;
        let mut w = csv_writer(&out.join("latent_pca.csv"))?;
        w.write_record(["pc1", "pc2", "label"])?;
        for (row, l) in pca.scores.outer_iter().zip(&labels) {
            w.write_record([row[0].to_string(), row[1].to_string(), l.to_string()])?;
        }
        w.flush()?;
        let dist = cluster_distribution(&labels, cfg.arch.k)?;
        let mut w = csv_writer(&out.join("distribution.csv"))?;
        w.write_record(["cluster", "count", "coverage"])?;
        for (j, (c, f)) in dist.counts.iter().zip(&dist.coverage).enumerate() {
            w.write_record([j.to_string(), c.to_string(), f.to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct BackfitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    montage: Option<PathBuf>,
    #[arg(long, default_value_t = 250.0)]
    fs: f64,
    /// Model directory whose decoded centroids are the templates.
    #[arg(long, conflicts_with = "templates", required_unless_present = "templates")]
    model: Option<PathBuf>,
    /// Template CSV with the recording's channel header, one template per row.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Output directory for `labels.csv` and `summary.json`.
    #[arg(long)]
    out: PathBuf,
}

fn read_templates(path: &Path, rec: &EegRecording) -> Result<Array2<f64>> {
    // Same layout as a recording: channel header, one row per template.
    let t = read_csv(path, rec.montage.clone(), 1.0)?;
    if t.channel_names() != rec.channel_names() {
        return Err(invalid("template columns must match the recording's channel order"));
    }
    Ok(t.data.t().to_owned())
}

/// Backfits the filtered recording at every sample; GEV is reported at GFP peaks and over all samples.
pub fn backfit(a: BackfitArgs) -> Result<()> {
    let rec = recording(&a.input, a.montage.as_deref(), a.fs)?;
    let templates = match (&a.model, &a.templates) {
        (Some(m), _) => {
            let (_, mut model) = load_model(m)?;
            centroid_templates(&mut model, &msvade::topomap::project_electrodes(&rec.montage))?
        }
        (None, Some(t)) => read_templates(t, &rec)?,
        (None, None) => return Err(invalid("either --model or --templates is required")),
    };
    let (filtered, series) = preprocess_recording(&rec)?;
    let all: Vec<usize> = (0..filtered.n_samples()).collect();
    let fit = backfit_maps(maps_at(&filtered, &all).view(), templates.view())?;
    let peaks = backfit_maps(maps_at(&filtered, &series.peak_indices).view(), templates.view())?;
    fs::create_dir_all(&a.out)?;
    let mut w = csv_writer(&a.out.join("labels.csv"))?;
    w.write_record(["sample", "label", "rho"])?;
    for (t, (l, r)) in fit.labels.iter().zip(&fit.rho).enumerate() {
        w.write_record([t.to_string(), l.to_string(), r.to_string()])?;
    }
    w.flush()?;
    let dist = cluster_distribution(&fit.labels, templates.nrows())?;
    let summary = serde_json::json!({
        "gev_all_samples": fit.gev,
        "gev_gfp_peaks": peaks.gev,
        "counts": dist.counts,
        "coverage": dist.coverage,
    });
    write_json(&summary, &a.out.join("summary.json"))?;
    info!("GEV {:.4} over all samples, {:.4} at GFP peaks", fit.gev, peaks.gev);
    Ok(())
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Montage for electrode sampling; the bundled one when omitted.
    #[arg(long)]
    montage: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Writes `centroid_<k>.ppm`, `centroids.csv` (electrode space), and the
/// centroid correlation matrix as CSV and PGM (−1 black, +1 white).
pub fn decode_centroids(a: DecodeArgs) -> Result<()> {
    let (cfg, mut model) = load_model(&a.model)?;
    let montage = montage_or_default(a.montage.as_deref())?;
    fs::create_dir_all(&a.out)?;
    let images = model.decode_centroids()?.mapv(f64::from);
    let mask = head_mask();
    for k in 0..cfg.arch.k {
        let img = images.slice(ndarray::s![k, 0, .., ..]);
        render_topomap_image(img, mask.view(), &a.out.join(format!("centroid_{k}.ppm")))?;
    }
    let flat = images.into_shape_with_order((cfg.arch.k, IMAGE_SIDE * IMAGE_SIDE)).map_err(|e| Error::Shape(e.to_string()))?;
    let electrodes = msvade::metrics::centroids_to_electrodes(flat.view(), &montage)?;
    let names: Vec<&str> = montage.iter().map(|e| e.name.as_str()).collect();
    let mut w = csv_writer(&a.out.join("centroids.csv"))?;
    w.write_record(&names)?;
    for row in electrodes.outer_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    let corr = centroid_correlation_matrix(electrodes.view())?;
    write_matrix_csv(&corr, &a.out.join("centroid_correlation.csv"))?;
    write_heatmap_pgm(corr.view(), -1.0, 1.0, &a.out.join("centroid_correlation.pgm"))?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Record store directory written by `sweep`.
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

pub fn report(a: ReportArgs) -> Result<()> {
    if !a.store.is_dir() {
        return Err(invalid(format!("no record store at {}", a.store.display())));
    }
    let records = RecordStore::open(&a.store)?.records()?;
    for p in sweep::report(&records, &a.out)? {
        info!("wrote {}", p.display());
    }
    Ok(())
}
