//! Full training objective: forward pass, all loss terms, and backward pass.

use ndarray::{concatenate, s, Array2, Array4, Axis, Ix2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{LossWeights, D_X, IMAGE_SIDE};
use super::loss;
use super::model::{reparameterize, ConvVade, PriorGrad};
use crate::error::{Error, Result};
use crate::nn::{Mode, Real};
use crate::topomap::head_mask;

/// Multipliers for one optimisation step.
#[derive(Debug, Clone, Copy)]
pub struct StepConfig {
    pub beta: f64,
    pub ramp: f64,
    pub weights: LossWeights,
    pub lambda_e: f64,
    /// When false the mixture parameters receive no gradient.
    pub train_prior: bool,
}

/// Raw loss terms plus the multipliers used to combine them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub kl: f64,
    pub entropy: f64,
    pub separation: f64,
    pub batch: f64,
    pub tight: f64,
    pub polarity: f64,
    pub beta: f64,
    pub ramp: f64,
    pub total: f64,
    /// Centroid pairs skipped by the separation term for zero variance.
    pub degenerate_pairs: usize,
}

impl LossBreakdown {
    /// The weighted terms in the order they are summed into `total`.
    pub fn weighted_terms(&self, w: &LossWeights, lambda_e: f64) -> [f64; 7] {
        [
            self.recon,
            self.beta * self.kl,
            self.ramp * lambda_e * self.entropy,
            self.ramp * w.lambda_s * self.separation,
            self.ramp * w.lambda_b * self.batch,
            self.ramp * w.lambda_t * self.tight,
            self.ramp * w.lambda_pol * self.polarity,
        ]
    }
}

fn finite(term: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { term: term.to_string() })
    }
}

fn to_f64<T: Real>(a: &Array2<T>) -> Array2<f64> {
    a.mapv(|v| v.as_f64())
}

fn to_t<T: Real>(a: &Array2<f64>) -> Array2<T> {
    a.mapv(T::lit)
}

/// Flattened head mask, row-major over the 40×40 grid.
pub fn flat_mask() -> Vec<bool> {
    head_mask().iter().copied().collect()
}

/// Computes every loss term on batch `x` and accumulates parameter gradients into `model`.
///
/// Gradients are added to whatever is already stored; callers zero them
/// beforehand. Responsibilities are taken at the sampled `z`.
pub fn loss_and_grads<T: Real, R: Rng>(
    model: &mut ConvVade<T>,
    x: &Array4<T>,
    step: &StepConfig,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let b = x.dim().0;
    if b < 2 {
        return Err(Error::invalid("training batch needs at least 2 samples"));
    }
    let k = model.cfg.k;
    let dz = model.cfg.dz;
    let w = step.weights;
    let aux = step.ramp > 0.0;
    let params = model.prior.params();
    let mut pg = PriorGrad::zeros(k, dz);
    let mut out = LossBreakdown { beta: step.beta, ramp: step.ramp, ..Default::default() };

    if aux {
        // Centroid maps use running BN statistics, so this comes before the train-mode passes.
        let mu_c: Array2<T> = model.prior.mu.data.view().into_dimensionality::<Ix2>().expect("2-D").to_owned();
        let (maps, tape) = model.decoder.forward(&mu_c, Mode::Eval)?;
        let flat = maps.mapv(|v| v.as_f64()).into_shape_with_order((k, D_X)).map_err(|e| Error::shape(e.to_string()))?;
        let sep = loss::separation(&flat, &flat_mask());
        out.separation = finite("separation", sep.value)?;
        out.degenerate_pairs = sep.degenerate_pairs;
        let dmaps = (sep.grad * (step.ramp * w.lambda_s))
            .into_shape_with_order((k, 1, IMAGE_SIDE, IMAGE_SIDE))
            .map_err(|e| Error::shape(e.to_string()))?;
        let dmu_c = model.decoder.backward(&tape, &dmaps.mapv(T::lit));
        pg.mu += &to_f64(&dmu_c);

        let (ent, dlogpi) = loss::entropy(&params);
        out.entropy = finite("entropy", ent)?;
        pg.log_pi.scaled_add(step.ramp * step.lambda_e, &dlogpi);
    }

    let use_pol = aux && w.lambda_pol > 0.0;
    let enc_in = if use_pol {
        let neg = x.mapv(|v| -v);
        concatenate(Axis(0), &[x.view(), neg.view()]).map_err(|e| Error::shape(e.to_string()))?
    } else {
        x.clone()
    };
    let (post_all, enc_tape) = model.encoder.forward(&enc_in, Mode::Train, rng)?;
    let post = super::model::LatentPosterior {
        mu: post_all.mu.slice(s![..b, ..]).to_owned(),
        logvar: post_all.logvar.slice(s![..b, ..]).to_owned(),
    };
    let (z, eps) = reparameterize(&post, rng);
    let (xhat, dec_tape) = model.decoder.forward(&z, Mode::Train)?;
    let (rec, dxhat) = loss::recon(&xhat, x);
    out.recon = finite("recon", rec)?;

    let mu = to_f64(&post.mu);
    let lv = to_f64(&post.logvar);
    let zf = to_f64(&z);
    let gamma = loss::responsibilities(&zf, &params);

    let (klv, klg) = loss::kl(&mu, &lv, &params, &gamma);
    out.kl = finite("kl", klv)?;
    let mut dmu = klg.mu * step.beta;
    let mut dlv = klg.logvar * step.beta;
    let mut dgamma = klg.gamma * step.beta;
    pg.add_scaled(&klg.prior, step.beta);

    let mut dmu_neg = None;
    if aux {
        let (bv, bg) = loss::batch_usage(&gamma);
        out.batch = finite("batch", bv)?;
        dgamma.scaled_add(step.ramp * w.lambda_b, &bg);

        let (tv, tg) = loss::tight(&mu, &gamma, &params);
        out.tight = finite("tight", tv)?;
        dgamma.scaled_add(step.ramp * w.lambda_t, &tg.gamma);
        dmu.scaled_add(step.ramp * w.lambda_t, &tg.mu);
        pg.mu.scaled_add(step.ramp * w.lambda_t, &tg.prior_mu);

        if use_pol {
            let mu_neg = to_f64(&post_all.mu.slice(s![b.., ..]).to_owned());
            let (pv, gp, gn) = loss::polarity(&mu, &mu_neg);
            out.polarity = finite("polarity", pv)?;
            dmu.scaled_add(step.ramp * w.lambda_pol, &gp);
            dmu_neg = Some(gn * (step.ramp * w.lambda_pol));
        }
    }

    let (dz_gamma, pg_gamma) = loss::responsibilities_backward(&zf, &params, &gamma, &dgamma);
    pg.add_scaled(&pg_gamma, 1.0);

    let dz_dec = to_f64(&model.decoder.backward(&dec_tape, &dxhat));
    let dz_total = dz_dec + dz_gamma;
    dmu += &dz_total;
    let epsf = to_f64(&eps);
    ndarray::Zip::from(&mut dlv).and(&dz_total).and(&epsf).and(&lv).for_each(|d, &g, &e, &l| {
        *d += g * e * 0.5 * (0.5 * l).exp();
    });

    let (dmu_all, dlv_all) = match dmu_neg {
        Some(gn) => (
            concatenate(Axis(0), &[dmu.view(), gn.view()]).map_err(|e| Error::shape(e.to_string()))?,
            concatenate(Axis(0), &[dlv.view(), Array2::zeros((b, dz)).view()]).map_err(|e| Error::shape(e.to_string()))?,
        ),
        None => (dmu, dlv),
    };
    model.encoder.backward(&enc_tape, &to_t(&dmu_all), &to_t(&dlv_all));

    if step.train_prior {
        model.prior.accumulate(&pg);
    }

    out.total = finite("total", out.weighted_terms(&w, step.lambda_e).iter().sum())?;
    Ok(out)
}
