use ndarray::{concatenate, s, Array1, Array2, Array4, Axis, Ix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{ArchConfig, IMAGE_SIDE, STAGE_SIZES};
use crate::error::{Error, Result};
use crate::nn::{
    adaptive_avg_pool2d, adaptive_avg_pool2d_backward, join, Affine, AffineCache, BatchNorm2d, BatchNormCache,
    Conv2d, Conv2dCache, ConvTranspose2d, ConvTranspose2dCache, Dropout, DropoutCache, LeakyRelu, LeakyReluCache,
    Mode, Module, Real, Tensor, DROPOUT_P,
};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Per-sample Gaussian posterior `(μ_φ, log σ²_φ)`, one row per sample.
#[derive(Debug, Clone)]
pub struct LatentPosterior<T> {
    pub mu: Array2<T>,
    pub logvar: Array2<T>,
}

#[derive(Debug, Clone)]
struct EncoderStage<T> {
    conv: Conv2d<T>,
    bn: BatchNorm2d<T>,
}

#[derive(Debug, Clone)]
pub struct Encoder<T> {
    stages: Vec<EncoderStage<T>>,
    act: LeakyRelu,
    dropout: Dropout,
    pub mu_head: Affine<T>,
    pub logvar_head: Affine<T>,
}

type StageTape<T> = (Conv2dCache<T>, BatchNormCache<T>, LeakyReluCache<T, ndarray::Ix4>, DropoutCache<T, ndarray::Ix4>);

pub struct EncoderTape<T> {
    stages: Vec<StageTape<T>>,
    pooled_hw: (usize, usize),
    mu: AffineCache<T>,
    logvar: AffineCache<T>,
    logvar_pass: Array2<T>,
}

impl<T: Real> Encoder<T> {
    fn new<R: Rng>(cfg: &ArchConfig, rng: &mut R) -> Self {
        let mut stages = Vec::with_capacity(cfg.depth);
        let mut cin = 1;
        for i in 0..cfg.depth {
            let cout = cfg.stage_channels(i);
            stages.push(EncoderStage { conv: Conv2d::new(cin, cout, 4, 2, 1, rng), bn: BatchNorm2d::new(cout) });
            cin = cout;
        }
        Self {
            stages,
            act: LeakyRelu::default(),
            dropout: Dropout::new(DROPOUT_P).expect("valid dropout"),
            mu_head: Affine::new(cin, cfg.dz, rng),
            logvar_head: Affine::new(cin, cfg.dz, rng),
        }
    }

    pub fn forward<R: Rng>(
        &mut self,
        x: &Array4<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(LatentPosterior<T>, EncoderTape<T>)> {
        let (_, c, h, w) = x.dim();
        if c != 1 || h != IMAGE_SIDE || w != IMAGE_SIDE {
            return Err(Error::shape(format!("encoder expects (B, 1, 40, 40) input, got (_, {c}, {h}, {w})")));
        }
        let mut tapes = Vec::with_capacity(self.stages.len());
        let mut a = x.clone();
        for st in self.stages.iter_mut() {
            let (y, cc) = st.conv.forward(&a)?;
            let (y, bc) = st.bn.forward(&y, mode)?;
            let (y, ac) = self.act.forward(&y);
            let (y, dc) = self.dropout.forward(&y, mode, rng);
            tapes.push((cc, bc, ac, dc));
            a = y;
        }
        let pooled_hw = (a.dim().2, a.dim().3);
        let pooled = adaptive_avg_pool2d(&a);
        let (mu, mu_cache) = self.mu_head.forward(&pooled)?;
        let (raw_lv, lv_cache) = self.logvar_head.forward(&pooled)?;
        let (lo, hi) = (T::lit(LOGVAR_MIN), T::lit(LOGVAR_MAX));
        let logvar_pass = raw_lv.mapv(|v| if v >= lo && v <= hi { T::one() } else { T::zero() });
        let logvar = raw_lv.mapv(|v| v.max(lo).min(hi));
        Ok((
            LatentPosterior { mu, logvar },
            EncoderTape { stages: tapes, pooled_hw, mu: mu_cache, logvar: lv_cache, logvar_pass },
        ))
    }

    pub fn backward(&mut self, tape: &EncoderTape<T>, dmu: &Array2<T>, dlogvar: &Array2<T>) -> Array4<T> {
        let dlv_raw = dlogvar * &tape.logvar_pass;
        let dpool = self.mu_head.backward(&tape.mu, dmu) + self.logvar_head.backward(&tape.logvar, &dlv_raw);
        let mut g = adaptive_avg_pool2d_backward(&dpool, tape.pooled_hw.0, tape.pooled_hw.1);
        for (st, (cc, bc, ac, dc)) in self.stages.iter_mut().zip(tape.stages.iter()).rev() {
            g = self.dropout.backward(dc, &g);
            g = self.act.backward(ac, &g);
            g = st.bn.backward(bc, &g);
            g = st.conv.backward(cc, &g);
        }
        g
    }
}

impl<T: Real> Module<T> for Encoder<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, st) in self.stages.iter_mut().enumerate() {
            st.conv.visit_params(&join(prefix, &format!("stage{i}.conv")), f);
            st.bn.visit_params(&join(prefix, &format!("stage{i}.bn")), f);
        }
        self.mu_head.visit_params(&join(prefix, "mu_head"), f);
        self.logvar_head.visit_params(&join(prefix, "logvar_head"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, st) in self.stages.iter_mut().enumerate() {
            st.bn.visit_buffers(&join(prefix, &format!("stage{i}.bn")), f);
        }
    }
}

#[derive(Debug, Clone)]
struct DecoderStage<T> {
    convt: ConvTranspose2d<T>,
    /// `None` on the final, linear stage.
    bn: Option<BatchNorm2d<T>>,
}

/// Mirror of the encoder: affine seed, then transposed-conv stages back to 40×40.
#[derive(Debug, Clone)]
pub struct Decoder<T> {
    seed: Affine<T>,
    seed_channels: usize,
    seed_side: usize,
    stages: Vec<DecoderStage<T>>,
    act: LeakyRelu,
}

pub struct DecoderTape<T> {
    seed: AffineCache<T>,
    seed_act: LeakyReluCache<T, ndarray::Ix4>,
    stages: Vec<(ConvTranspose2dCache<T>, Option<(BatchNormCache<T>, LeakyReluCache<T, ndarray::Ix4>)>)>,
}

impl<T: Real> Decoder<T> {
    fn new<R: Rng>(cfg: &ArchConfig, rng: &mut R) -> Self {
        let depth = cfg.depth;
        let seed_channels = cfg.stage_channels(depth - 1);
        let seed_side = cfg.seed_side();
        let mut stages = Vec::with_capacity(depth);
        for j in 0..depth {
            let from = STAGE_SIZES[depth - j];
            let to = STAGE_SIZES[depth - j - 1];
            let cin = cfg.stage_channels(depth - 1 - j);
            let last = j + 1 == depth;
            let cout = if last { 1 } else { cfg.stage_channels(depth - 2 - j) };
            let convt = ConvTranspose2d::new(cin, cout, 4, 2, 1, to - 2 * from, rng);
            stages.push(DecoderStage { convt, bn: (!last).then(|| BatchNorm2d::new(cout)) });
        }
        Self {
            seed: Affine::new(cfg.dz, seed_channels * seed_side * seed_side, rng),
            seed_channels,
            seed_side,
            stages,
            act: LeakyRelu::default(),
        }
    }

    pub fn forward(&mut self, z: &Array2<T>, mode: Mode) -> Result<(Array4<T>, DecoderTape<T>)> {
        let b = z.nrows();
        let (h, seed) = self.seed.forward(z)?;
        let h = h
            .into_shape_with_order((b, self.seed_channels, self.seed_side, self.seed_side))
            .map_err(|e| Error::shape(e.to_string()))?;
        let (mut a, seed_act) = self.act.forward(&h);
        let mut tapes = Vec::with_capacity(self.stages.len());
        for st in self.stages.iter_mut() {
            let (y, ct) = st.convt.forward(&a)?;
            match st.bn.as_mut() {
                Some(bn) => {
                    let (y, bc) = bn.forward(&y, mode)?;
                    let (y, ac) = self.act.forward(&y);
                    tapes.push((ct, Some((bc, ac))));
                    a = y;
                }
                None => {
                    tapes.push((ct, None));
                    a = y;
                }
            }
        }
        Ok((a, DecoderTape { seed, seed_act, stages: tapes }))
    }

    /// Returns the gradient with respect to `z`.
    pub fn backward(&mut self, tape: &DecoderTape<T>, dx: &Array4<T>) -> Array2<T> {
        let mut g = dx.clone();
        for (st, (ct, rest)) in self.stages.iter_mut().zip(tape.stages.iter()).rev() {
            if let (Some(bn), Some((bc, ac))) = (st.bn.as_mut(), rest) {
                g = self.act.backward(ac, &g);
                g = bn.backward(bc, &g);
            }
            g = st.convt.backward(ct, &g);
        }
        g = self.act.backward(&tape.seed_act, &g);
        let b = g.dim().0;
        let g2 = g.into_shape_with_order((b, self.seed_channels * self.seed_side * self.seed_side)).expect("flatten");
        self.seed.backward(&tape.seed, &g2)
    }
}

impl<T: Real> Module<T> for Decoder<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.seed.visit_params(&join(prefix, "seed"), f);
        for (j, st) in self.stages.iter_mut().enumerate() {
            st.convt.visit_params(&join(prefix, &format!("stage{j}.convt")), f);
            if let Some(bn) = st.bn.as_mut() {
                bn.visit_params(&join(prefix, &format!("stage{j}.bn")), f);
            }
        }
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (j, st) in self.stages.iter_mut().enumerate() {
            if let Some(bn) = st.bn.as_mut() {
                bn.visit_buffers(&join(prefix, &format!("stage{j}.bn")), f);
            }
        }
    }
}

/// Plain-`f64` view of a Gaussian mixture: weights, means and log-variances.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    pub pi: Array1<f64>,
    pub mu: Array2<f64>,
    pub logvar: Array2<f64>,
}

impl GmmParams {
    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn dz(&self) -> usize {
        self.mu.ncols()
    }

    pub fn log_pi(&self) -> Array1<f64> {
        self.pi.mapv(|p| p.max(super::loss::LOG_FLOOR).ln())
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.pi.len();
        if self.mu.nrows() != k || self.logvar.dim() != self.mu.dim() {
            return Err(Error::shape("mixture parameter shapes disagree"));
        }
        if self.pi.iter().any(|&p| !(p > 0.0)) || (self.pi.sum() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid("mixture weights must be positive and sum to 1"));
        }
        if self.mu.iter().chain(self.logvar.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("mixture parameters must be finite"));
        }
        Ok(())
    }
}

/// Trainable mixture prior. Weights are stored as unconstrained logits.
#[derive(Debug, Clone)]
pub struct GmmPrior<T> {
    pub logits: Tensor<T>,
    pub mu: Tensor<T>,
    pub logvar: Tensor<T>,
}

impl<T: Real> GmmPrior<T> {
    fn new<R: Rng>(k: usize, dz: usize, rng: &mut R) -> Self {
        let mu = Array2::from_shape_simple_fn((k, dz), || T::lit(rng.sample::<f64, _>(StandardNormal)));
        Self { logits: Tensor::zeros(&[k]), mu: Tensor::from_array(mu.into_dyn()), logvar: Tensor::zeros(&[k, dz]) }
    }

    pub fn k(&self) -> usize {
        self.logits.len()
    }

    pub fn params(&self) -> GmmParams {
        let logits: Vec<f64> = self.logits.data.iter().map(|v| v.as_f64()).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Array1<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let pi = &e / e.sum();
        let to2 = |t: &Tensor<T>| {
            t.data.view().into_dimensionality::<Ix2>().expect("2-D prior tensor").mapv(|v| v.as_f64())
        };
        GmmParams { pi, mu: to2(&self.mu), logvar: to2(&self.logvar) }
    }

    pub fn set_params(&mut self, p: &GmmParams) -> Result<()> {
        p.validate()?;
        if p.k() != self.k() || p.mu.dim() != (self.mu.shape()[0], self.mu.shape()[1]) {
            return Err(Error::shape("mixture parameters do not match prior dimensions"));
        }
        self.logits.data = p.pi.mapv(|v| T::lit(v.ln())).into_dyn();
        self.mu.data = p.mu.mapv(T::lit).into_dyn();
        self.logvar.data = p.logvar.mapv(T::lit).into_dyn();
        Ok(())
    }

    /// Accumulates gradients given with respect to `log π`, `μ` and `log σ²`.
    pub fn accumulate(&mut self, g: &PriorGrad) {
        let pi = self.params().pi;
        let total = g.log_pi.sum();
        let dlogits = &g.log_pi - &(&pi * total);
        *self.logits.grad_mut() += &dlogits.mapv(T::lit).into_dyn();
        *self.mu.grad_mut() += &g.mu.mapv(T::lit).into_dyn();
        *self.logvar.grad_mut() += &g.logvar.mapv(T::lit).into_dyn();
    }
}

impl<T: Real> Module<T> for GmmPrior<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "logits"), &mut self.logits);
        f(&join(prefix, "mu"), &mut self.mu);
        f(&join(prefix, "logvar"), &mut self.logvar);
    }
}

/// Gradient of a scalar with respect to mixture parameters, in `f64`.
#[derive(Debug, Clone)]
pub struct PriorGrad {
    pub log_pi: Array1<f64>,
    pub mu: Array2<f64>,
    pub logvar: Array2<f64>,
}

impl PriorGrad {
    pub fn zeros(k: usize, dz: usize) -> Self {
        Self { log_pi: Array1::zeros(k), mu: Array2::zeros((k, dz)), logvar: Array2::zeros((k, dz)) }
    }

    pub fn add_scaled(&mut self, other: &PriorGrad, s: f64) {
        self.log_pi.scaled_add(s, &other.log_pi);
        self.mu.scaled_add(s, &other.mu);
        self.logvar.scaled_add(s, &other.logvar);
    }
}

/// Convolutional VAE with a Gaussian-mixture latent prior.
#[derive(Debug, Clone)]
pub struct ConvVade<T> {
    pub cfg: ArchConfig,
    pub encoder: Encoder<T>,
    pub decoder: Decoder<T>,
    pub prior: GmmPrior<T>,
}

impl<T: Real> ConvVade<T> {
    pub fn new(cfg: ArchConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            cfg,
            encoder: Encoder::new(&cfg, &mut rng),
            decoder: Decoder::new(&cfg, &mut rng),
            prior: GmmPrior::new(cfg.k, cfg.dz, &mut rng),
        })
    }

    /// Copies all parameters and buffers into another float type.
    pub fn cast<U: Real>(&mut self) -> ConvVade<U> {
        let mut out = ConvVade::<U>::new(self.cfg, 0).expect("config already validated");
        let mut src: Vec<ndarray::ArrayD<f64>> = Vec::new();
        self.visit_params("", &mut |_, t| src.push(t.data.mapv(|v| v.as_f64())));
        self.visit_buffers("", &mut |_, t| src.push(t.data.mapv(|v| v.as_f64())));
        let mut it = src.into_iter();
        out.visit_params("", &mut |_, t| t.data = it.next().expect("same layout").mapv(U::lit));
        out.visit_buffers("", &mut |_, t| t.data = it.next().expect("same layout").mapv(U::lit));
        out
    }

    /// Deterministic encoding (eval mode).
    pub fn encode_eval(&mut self, x: &Array4<T>) -> Result<LatentPosterior<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.encoder.forward(x, Mode::Eval, &mut rng)?.0)
    }

    /// Eval-mode encoding in chunks, returning `μ_φ` as `f64`.
    pub fn latent_means(&mut self, x: &Array4<T>, chunk: usize) -> Result<Array2<f64>> {
        let mut parts = Vec::new();
        let n = x.dim().0;
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let xb = x.slice(s![start..end, .., .., ..]).to_owned();
            parts.push(self.encode_eval(&xb)?.mu.mapv(|v| v.as_f64()));
            start = end;
        }
        if parts.is_empty() {
            return Ok(Array2::zeros((0, self.cfg.dz)));
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        concatenate(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))
    }

    /// Deterministic decoding (eval mode).
    pub fn decode_eval(&mut self, z: &Array2<T>) -> Result<Array4<T>> {
        if z.ncols() != self.cfg.dz {
            return Err(Error::shape(format!("decoder expects dz = {}, got {}", self.cfg.dz, z.ncols())));
        }
        Ok(self.decoder.forward(z, Mode::Eval)?.0)
    }

    /// Decoded mixture means, one 40×40 image per component.
    pub fn decode_centroids(&mut self) -> Result<Array4<T>> {
        let mu = self.prior.mu.data.view().into_dimensionality::<Ix2>().expect("2-D").to_owned();
        self.decode_eval(&mu)
    }

    pub fn visit_network_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.encoder.visit_params("encoder", f);
        self.decoder.visit_params("decoder", f);
    }
}

impl<T: Real> Module<T> for ConvVade<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.encoder.visit_params(&join(prefix, "encoder"), f);
        self.decoder.visit_params(&join(prefix, "decoder"), f);
        self.prior.visit_params(&join(prefix, "prior"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.encoder.visit_buffers(&join(prefix, "encoder"), f);
        self.decoder.visit_buffers(&join(prefix, "decoder"), f);
    }
}

/// `z = μ + exp(logvar/2) ⊙ ε` with `ε ~ N(0, I)` drawn from `rng`. Returns `(z, ε)`.
pub fn reparameterize<T: Real, R: Rng>(post: &LatentPosterior<T>, rng: &mut R) -> (Array2<T>, Array2<T>) {
    let eps = Array2::from_shape_simple_fn(post.mu.raw_dim(), || T::lit(rng.sample::<f64, _>(StandardNormal)));
    let half = T::lit(0.5);
    let mut z = post.mu.clone();
    ndarray::Zip::from(&mut z).and(&post.logvar).and(&eps).for_each(|z, &lv, &e| *z += (lv * half).exp() * e);
    (z, eps)
}
