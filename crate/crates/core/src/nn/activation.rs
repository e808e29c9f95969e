use ndarray::{Array, Dimension, Zip};
use rand::Rng;

use super::{Mode, Real};
use crate::error::{Error, Result};

/// `max(x, αx)` elementwise.
#[derive(Debug, Clone, Copy)]
pub struct LeakyRelu {
    pub slope: f64,
}

#[derive(Debug, Clone)]
pub struct LeakyReluCache<T, D: Dimension> {
    slope_at: Array<T, D>,
}

impl Default for LeakyRelu {
    fn default() -> Self {
        Self { slope: super::LEAKY_SLOPE }
    }
}

impl LeakyRelu {
    pub fn forward<T: Real, D: Dimension>(&self, x: &Array<T, D>) -> (Array<T, D>, LeakyReluCache<T, D>) {
        let a = T::lit(self.slope);
        let slope_at = x.mapv(|v| if v > T::zero() { T::one() } else { a });
        let y = x * &slope_at;
        (y, LeakyReluCache { slope_at })
    }

    pub fn backward<T: Real, D: Dimension>(&self, cache: &LeakyReluCache<T, D>, dy: &Array<T, D>) -> Array<T, D> {
        dy * &cache.slope_at
    }
}

/// Inverted dropout: survivors are scaled by `1/(1−p)` in train mode.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub p: f64,
}

#[derive(Debug, Clone)]
pub struct DropoutCache<T, D: Dimension> {
    mask: Option<Array<T, D>>,
}

impl Dropout {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout probability {p} outside [0, 1)")));
        }
        Ok(Self { p })
    }

    pub fn forward<T: Real, D: Dimension, R: Rng>(
        &self,
        x: &Array<T, D>,
        mode: Mode,
        rng: &mut R,
    ) -> (Array<T, D>, DropoutCache<T, D>) {
        if mode == Mode::Eval || self.p == 0.0 {
            return (x.clone(), DropoutCache { mask: None });
        }
        let keep = T::lit(1.0 / (1.0 - self.p));
        // Drop when a uniform u32 falls below p·2³².
        let threshold = (self.p * 4294967296.0) as u64;
        let mut mask = Array::zeros(x.raw_dim());
        let mut y = x.clone();
        Zip::from(&mut mask).and(&mut y).for_each(|m, v| {
            if u64::from(rng.next_u32()) >= threshold {
                *m = keep;
                *v *= keep;
            } else {
                *v = T::zero();
            }
        });
        (y, DropoutCache { mask: Some(mask) })
    }

    pub fn backward<T: Real, D: Dimension>(&self, cache: &DropoutCache<T, D>, dy: &Array<T, D>) -> Array<T, D> {
        match &cache.mask {
            None => dy.clone(),
            Some(mask) => {
                let mut dx = dy.clone();
                Zip::from(&mut dx).and(mask).for_each(|d, &m| *d *= m);
                dx
            }
        }
    }
}
