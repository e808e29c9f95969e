use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{debug, info};
use ndarray::{s, Array2, Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::clusters::{composite_score, detect_dead_clusters, reinit_all};
use super::data::SubjectData;
use super::kmeans::init_gmm_bisecting;
use super::optim::{clip_grad_norm, Adam};
use crate::error::{Error, Result};
use crate::metrics::{
    backfit, cluster_distribution, electrode_samples, mse, normalize_templates, silhouette, spatial_correlation, ssim,
    validity_indices, MetricsReport, SSIM_RANGE,
};
use crate::nn::checkpoint::{export, import, read_tensors, write_tensors};
use crate::nn::Module;
use crate::vade::config::IMAGE_SIDE;
use crate::vade::loss::responsibilities;
use crate::vade::{aux_ramp, beta_schedule, loss_and_grads, ArchConfig, ConvVade, LossBreakdown, LossWeights, StepConfig};

/// Hyperparameters of the training procedure. Missing JSON fields take the defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub pretrain_steps: usize,
    pub pretrain_beta: f64,
    pub lr: f64,
    pub lr_prior: f64,
    pub weight_decay: f64,
    pub clip_net: f64,
    pub clip_prior: f64,
    pub freeze_epochs: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_lr: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            batch_size: 128,
            pretrain_steps: 200,
            pretrain_beta: 1e-3,
            lr: 1e-3,
            lr_prior: 5e-4,
            weight_decay: 1e-5,
            clip_net: 5.0,
            clip_prior: 1.0,
            freeze_epochs: 5,
            plateau_patience: 10,
            plateau_factor: 0.5,
            min_lr: 1e-5,
            early_stop_patience: 20,
            seed: 0,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size < 2 {
            return Err(Error::invalid("max_epochs must be positive and batch_size at least 2"));
        }
        if !(self.lr > 0.0 && self.lr_prior > 0.0 && self.clip_net > 0.0 && self.clip_prior > 0.0) {
            return Err(Error::invalid("learning rates and clipping norms must be positive"));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::invalid("plateau factor must lie in (0, 1)"));
        }
        self.weights.validate()
    }
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batch-mean loss terms.
    pub loss: LossBreakdown,
    pub beta: f64,
    pub ramp: f64,
    pub silhouette: Option<f64>,
    pub gev: f64,
    pub composite: f64,
    pub lr: f64,
    pub lr_prior: f64,
    pub prior_frozen: bool,
    /// Largest pre-clipping gradient norm of the mixture parameters in this epoch.
    pub prior_grad_norm: f64,
    pub dead_clusters: Vec<usize>,
    /// SHA-256 of the mixture parameters at the end of the epoch.
    pub prior_digest: String,
}

/// Learning-rate halving when the monitored score stops improving.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub best: f64,
    pub bad_epochs: usize,
    pub patience: usize,
    pub factor: f64,
}

impl Plateau {
    pub fn new(patience: usize, factor: f64) -> Self {
        Self { best: f64::NEG_INFINITY, bad_epochs: 0, patience, factor }
    }

    /// Records a score; returns the multiplier to apply to the learning rates.
    pub fn observe(&mut self, score: f64) -> f64 {
        if score > self.best {
            self.best = score;
            self.bad_epochs = 0;
            return 1.0;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.bad_epochs = 0;
            return self.factor;
        }
        1.0
    }
}

/// Mutable state of a training run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub epoch: usize,
    pub opt_net: Adam<f32>,
    pub opt_prior: Adam<f32>,
    pub plateau: Plateau,
    pub best_composite: f64,
    pub best_epoch: Option<usize>,
    pub best_model: Option<ConvVade<f32>>,
    pub epochs_since_best: usize,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            epoch: 0,
            opt_net: Adam::new(cfg.lr, cfg.weight_decay),
            opt_prior: Adam::new(cfg.lr_prior, 0.0),
            plateau: Plateau::new(cfg.plateau_patience, cfg.plateau_factor),
            best_composite: f64::NEG_INFINITY,
            best_epoch: None,
            best_model: None,
            epochs_since_best: 0,
        }
    }
}

/// Result of a full training run.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    /// Best checkpoint by composite score.
    pub model: ConvVade<f32>,
    pub best_epoch: usize,
    pub best_composite: f64,
    pub history: Vec<EpochRecord>,
    pub pretrain_losses: Vec<LossBreakdown>,
    /// Evaluation of the best checkpoint.
    pub report: MetricsReport,
}

fn batch(x: &Array4<f32>, idx: &[usize]) -> Array4<f32> {
    x.select(Axis(0), idx)
}

/// Index batches of one shuffled pass; a trailing batch of one sample is dropped.
fn epoch_batches(n: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(size).filter(|c| c.len() >= 2).map(|c| c.to_vec()).collect()
}

fn step_net(model: &mut ConvVade<f32>, opt: &mut Adam<f32>, clip: f64) {
    clip_grad_norm(&mut |f| model.visit_network_params(f), clip);
    let mut step = opt.begin_step();
    model.visit_network_params(&mut |_, t| step.update(t));
}

fn step_prior(model: &mut ConvVade<f32>, opt: &mut Adam<f32>, clip: f64) -> f64 {
    let norm = clip_grad_norm(&mut |f| model.prior.visit_params("prior", f), clip);
    let mut step = opt.begin_step();
    model.prior.visit_params("prior", &mut |_, t| step.update(t));
    norm
}

fn prior_grad_norm(model: &mut ConvVade<f32>) -> f64 {
    let mut sq = 0.0;
    model.prior.visit_params("prior", &mut |_, t| sq += t.grad_sq_norm());
    sq.sqrt()
}

/// Hex SHA-256 over the raw bytes of the mixture parameters.
pub fn prior_digest(model: &mut ConvVade<f32>) -> String {
    let mut h = Sha256::new();
    model.prior.visit_params("prior", &mut |n, t| {
        h.update(n.as_bytes());
        for v in t.data.iter() {
            h.update(v.to_le_bytes());
        }
    });
    format!("{:x}", h.finalize())
}

/// Reconstruction plus `β·KL` only, for `steps` minibatches. The prior is untouched.
pub fn pretrain(
    model: &mut ConvVade<f32>,
    train: &Array4<f32>,
    cfg: &TrainConfig,
    opt: &mut Adam<f32>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LossBreakdown>> {
    let n = train.dim().0;
    if n < 2 {
        return Err(Error::invalid("pretraining needs at least 2 images"));
    }
    let step_cfg = StepConfig {
        beta: cfg.pretrain_beta,
        ramp: 0.0,
        weights: cfg.weights,
        lambda_e: model.cfg.lambda_e(),
        train_prior: false,
    };
    let mut losses = Vec::with_capacity(cfg.pretrain_steps);
    let mut queue: Vec<Vec<usize>> = Vec::new();
    while losses.len() < cfg.pretrain_steps {
        if queue.is_empty() {
            queue = epoch_batches(n, cfg.batch_size, rng);
            queue.reverse();
        }
        let idx = queue.pop().expect("refilled");
        model.zero_grad();
        let l = loss_and_grads(model, &batch(train, &idx), &step_cfg, rng)?;
        step_net(model, opt, cfg.clip_net);
        losses.push(l);
    }
    Ok(losses)
}

/// `γ` for eval-mode latent means of `x`.
pub fn responsibilities_of(model: &mut ConvVade<f32>, x: &Array4<f32>) -> Result<(Array2<f64>, Array2<f64>)> {
    let mu = model.latent_means(x, 256)?;
    let gamma = responsibilities(&mu, &model.prior.params());
    Ok((mu, gamma))
}

fn argmax_rows(gamma: &Array2<f64>) -> Vec<usize> {
    gamma.outer_iter().map(|r| r.iter().enumerate().fold(0, |b, (j, &v)| if v > r[b] { j } else { b })).collect()
}

/// Electrode-space templates of the decoded centroids; rows without spatial variance are dropped.
pub fn centroid_templates(model: &mut ConvVade<f32>, pos2d: &[[f64; 2]]) -> Result<Array2<f64>> {
    let k = model.cfg.k;
    let dec = model.decode_centroids()?.mapv(|v| v as f64);
    let flat = dec.into_shape_with_order((k, IMAGE_SIDE * IMAGE_SIDE)).map_err(|e| Error::shape(e.to_string()))?;
    let raw = electrode_samples(flat.view(), pos2d)?;
    let keep: Vec<usize> = (0..k).filter(|&j| normalize_templates(raw.slice(s![j..j + 1, ..])).is_ok()).collect();
    if keep.is_empty() {
        return Err(Error::degenerate("every decoded centroid is flat"));
    }
    normalize_templates(raw.select(Axis(0), &keep).view())
}

/// GEV of the decoded centroids over the evaluation maps, 0 if every centroid is flat.
fn eval_gev(model: &mut ConvVade<f32>, data: &SubjectData) -> Result<f64> {
    match centroid_templates(model, &data.pos2d) {
        Ok(t) => Ok(backfit(data.eval_maps.view(), t.view())?.gev),
        Err(Error::Degenerate(_)) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Latent silhouette (hard labels `argmax γ`) and GEV on the evaluation split.
pub fn quick_eval(model: &mut ConvVade<f32>, data: &SubjectData) -> Result<(Option<f64>, f64)> {
    let (mu, gamma) = responsibilities_of(model, &data.eval_images())?;
    let sil = silhouette(mu.view(), &argmax_rows(&gamma)).ok();
    Ok((sil, eval_gev(model, data)?))
}

/// Composite score with an undefined silhouette treated as −1.
pub fn composite_of(sil: Option<f64>, gev: f64) -> f64 {
    composite_score(sil.unwrap_or(-1.0).clamp(-1.0, 1.0), gev.clamp(0.0, 1.0)).expect("clamped inputs")
}

/// Full metric report on the evaluation split.
///
/// Reconstructions are compared after choosing the sign that minimizes the
/// squared error, matching the polarity-invariant reconstruction loss.
pub fn evaluate(model: &mut ConvVade<f32>, data: &SubjectData) -> Result<MetricsReport> {
    let x = data.eval_images();
    let (mu, gamma) = responsibilities_of(model, &x)?;
    let labels = argmax_rows(&gamma);
    let mut report = MetricsReport::default();
    report.set_latent_indices(validity_indices(mu.view(), &labels).ok());

    let n = x.dim().0;
    let xhat = model.decode_eval(&mu.mapv(|v| v as f32))?.mapv(|v| v as f64);
    let x = x.mapv(|v| v as f64);
    let mask = &data.eval.head_mask;
    let in_mask: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    let mut rec_flat = Array2::zeros((n, in_mask.len()));
    let (mut m_sum, mut s_sum, mut r_sum) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let a = x.slice(s![i, 0, .., ..]);
        let mut b = xhat.slice(s![i, 0, .., ..]).to_owned();
        let neg = b.mapv(|v| -v);
        if mse(neg.view(), a)? < mse(b.view(), a)? {
            b = neg;
        }
        m_sum += mse(b.view(), a)?;
        s_sum += ssim(b.view(), a, SSIM_RANGE)?;
        r_sum += spatial_correlation(b.view(), a, mask.view()).unwrap_or(0.0);
        let flat: Vec<f64> = b.iter().copied().collect();
        for (j, &p) in in_mask.iter().enumerate() {
            rec_flat[[i, j]] = flat[p];
        }
    }
    report.mse = m_sum / n as f64;
    report.ssim = s_sum / n as f64;
    report.spatial_correlation = r_sum / n as f64;
    report.set_topographic_indices(validity_indices(rec_flat.view(), &labels).ok());
    report.gev = eval_gev(model, data)?;
    let dist = cluster_distribution(&labels, model.cfg.k)?;
    report.counts = dist.counts;
    report.coverage = dist.coverage;
    Ok(report)
}

/// Initialises the prior from unaugmented training latents.
pub fn init_prior(model: &mut ConvVade<f32>, data: &SubjectData, seed: u64) -> Result<()> {
    let mu = model.latent_means(&data.unaugmented_train_images(), 256)?;
    let p = init_gmm_bisecting(mu.view(), model.cfg.k, seed)?;
    model.prior.set_params(&p)
}

/// Options that do not affect the numerical result.
#[derive(Debug, Clone, Default)]
pub struct RunOutputs {
    /// Per-epoch JSON lines are appended here.
    pub history: Option<PathBuf>,
    /// Best checkpoint is written here whenever it improves.
    pub checkpoint: Option<PathBuf>,
}

/// Main training loop from a pretrained model with an initialised prior.
pub fn train(model: &mut ConvVade<f32>, data: &SubjectData, cfg: &TrainConfig, state: &mut TrainState, out: &RunOutputs, rng: &mut ChaCha8Rng) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    let train_x = data.train_images();
    let n = train_x.dim().0;
    let weights = cfg.weights;
    let lambda_e = model.cfg.lambda_e();
    let mut history = Vec::new();
    let mut hist_file = match &out.history {
        Some(p) => Some(BufWriter::new(OpenOptions::new().create(true).append(true).open(p)?)),
        None => None,
    };
    while state.epoch < cfg.max_epochs {
        let epoch = state.epoch;
        let beta = beta_schedule(epoch as f64, cfg.max_epochs, &weights);
        let ramp = aux_ramp(epoch as f64);
        let frozen = epoch < cfg.freeze_epochs;
        let step_cfg = StepConfig { beta, ramp, weights, lambda_e, train_prior: !frozen };
        let mut sum = LossBreakdown::default();
        let mut count = 0.0f64;
        let mut max_prior_norm: f64 = 0.0;
        for idx in epoch_batches(n, cfg.batch_size, rng) {
            model.zero_grad();
            let l = loss_and_grads(model, &batch(&train_x, &idx), &step_cfg, rng)?;
            step_net(model, &mut state.opt_net, cfg.clip_net);
            let pn = if frozen { prior_grad_norm(model) } else { step_prior(model, &mut state.opt_prior, cfg.clip_prior) };
            max_prior_norm = max_prior_norm.max(pn);
            accumulate(&mut sum, &l);
            count += 1.0;
        }
        let mean = scale(&sum, 1.0 / count.max(1.0), beta, ramp);

        let mut dead = Vec::new();
        if !frozen {
            let (_, gamma) = responsibilities_of(model, &train_x)?;
            dead = detect_dead_clusters(&gamma);
            if !dead.is_empty() {
                debug!("epoch {epoch}: reinitialising dead clusters {dead:?}");
                let p = reinit_all(&model.prior.params(), &gamma, &dead, rng)?;
                model.prior.set_params(&p)?;
            }
        }

        let (sil, gev) = quick_eval(model, data)?;
        let composite = composite_of(sil, gev);
        let factor = state.plateau.observe(composite);
        if factor < 1.0 {
            state.opt_net.lr = (state.opt_net.lr * factor).max(cfg.min_lr);
            state.opt_prior.lr = (state.opt_prior.lr * factor).max(cfg.min_lr);
            debug!("epoch {epoch}: learning rates now {} / {}", state.opt_net.lr, state.opt_prior.lr);
        }
        if composite > state.best_composite {
            state.best_composite = composite;
            state.best_epoch = Some(epoch);
            state.best_model = Some(model.clone());
            state.epochs_since_best = 0;
            if let Some(p) = &out.checkpoint {
                save_checkpoint(model, p)?;
            }
        } else {
            state.epochs_since_best += 1;
        }
        let rec = EpochRecord {
            epoch,
            loss: mean,
            beta,
            ramp,
            silhouette: sil,
            gev,
            composite,
            lr: state.opt_net.lr,
            lr_prior: state.opt_prior.lr,
            prior_frozen: frozen,
            prior_grad_norm: max_prior_norm,
            dead_clusters: dead,
            prior_digest: prior_digest(model),
        };
        info!("epoch {epoch}: loss {:.3} sil {:?} gev {gev:.4} composite {composite:.4}", mean.total, sil);
        if let Some(f) = hist_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&rec)?)?;
            f.flush()?;
        }
        history.push(rec);
        state.epoch += 1;
        if state.epochs_since_best >= cfg.early_stop_patience {
            info!("early stop after epoch {epoch}");
            break;
        }
    }
    Ok(history)
}

fn accumulate(sum: &mut LossBreakdown, l: &LossBreakdown) {
    sum.recon += l.recon;
    sum.kl += l.kl;
    sum.entropy += l.entropy;
    sum.separation += l.separation;
    sum.batch += l.batch;
    sum.tight += l.tight;
    sum.polarity += l.polarity;
    sum.total += l.total;
    sum.degenerate_pairs += l.degenerate_pairs;
}

fn scale(sum: &LossBreakdown, s: f64, beta: f64, ramp: f64) -> LossBreakdown {
    LossBreakdown {
        recon: sum.recon * s,
        kl: sum.kl * s,
        entropy: sum.entropy * s,
        separation: sum.separation * s,
        batch: sum.batch * s,
        tight: sum.tight * s,
        polarity: sum.polarity * s,
        beta,
        ramp,
        total: sum.total * s,
        degenerate_pairs: sum.degenerate_pairs,
    }
}

/// Pretraining, prior initialisation and the main loop, returning the best checkpoint and its evaluation.
pub fn fit_subject(arch: ArchConfig, data: &SubjectData, cfg: &TrainConfig, out: &RunOutputs) -> Result<TrainedModel> {
    cfg.validate()?;
    let mut model = ConvVade::<f32>::new(arch, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut state = TrainState::new(cfg);
    let pretrain_losses = pretrain(&mut model, &data.train_images(), cfg, &mut state.opt_net, &mut rng)?;
    init_prior(&mut model, data, cfg.seed)?;
    let history = train(&mut model, data, cfg, &mut state, out, &mut rng)?;
    let mut best = state.best_model.take().unwrap_or(model);
    let report = evaluate(&mut best, data)?;
    Ok(TrainedModel {
        model: best,
        best_epoch: state.best_epoch.unwrap_or(0),
        best_composite: state.best_composite.max(0.0),
        history,
        pretrain_losses,
        report,
    })
}

pub fn save_checkpoint(model: &mut ConvVade<f32>, path: &Path) -> Result<()> {
    write_tensors(BufWriter::new(File::create(path)?), &export(model))
}

pub fn load_checkpoint(arch: ArchConfig, path: &Path) -> Result<ConvVade<f32>> {
    let mut m = ConvVade::<f32>::new(arch, 0)?;
    import(&mut m, read_tensors(BufReader::new(File::open(path)?))?)?;
    Ok(m)
}
