use super::schedule::WarmRestarts;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Length of the first annealing cycle, in steps.
    pub t0: u64,
    pub t_mult: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr_max: 0.03,
            lr_min: 1e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
            t0: 50,
            t_mult: 2,
        }
    }
}

/// SGD with heavy-ball momentum and coupled weight decay:
/// `g' = g + wd theta; v = mu v + g'; theta -= lr v`.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    pub config: SgdConfig,
    velocity: Vec<Vec<f64>>,
    schedule: WarmRestarts,
    steps: u64,
}

impl SgdState {
    /// `sizes` lists the element count of every parameter tensor, in the
    /// order they will be passed to [`SgdState::step`].
    pub fn new(config: SgdConfig, sizes: impl IntoIterator<Item = usize>) -> Self {
        SgdState {
            velocity: sizes.into_iter().map(|n| vec![0.0; n]).collect(),
            schedule: WarmRestarts::new(config.lr_max, config.lr_min, config.t0, config.t_mult),
            config,
            steps: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.schedule.lr()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.velocity[i]
    }

    /// Applies one update and advances the schedule. Parameters without a
    /// gradient are left untouched. Returns the learning rate used.
    pub fn step<'a, I>(&mut self, params: I) -> Result<f64>
    where
        I: IntoIterator<Item = (&'a mut [f64], Option<&'a [f64]>)>,
    {
        let lr = self.lr();
        let SgdConfig {
            momentum: mu,
            weight_decay: wd,
            ..
        } = self.config;
        let mut count = 0;
        for (i, (theta, grad)) in params.into_iter().enumerate() {
            count += 1;
            let v = self
                .velocity
                .get_mut(i)
                .ok_or_else(|| Error::shape("sgd", format!("unexpected parameter #{i}")))?;
            let Some(grad) = grad else { continue };
            if theta.len() != v.len() || grad.len() != v.len() {
                return Err(Error::shape(
                    "sgd",
                    format!("parameter #{i} has {} values, state has {}", theta.len(), v.len()),
                ));
            }
            for ((t, v), g) in theta.iter_mut().zip(v.iter_mut()).zip(grad) {
                *v = mu * *v + (g + wd * *t);
                *t -= lr * *v;
            }
        }
        if count != self.velocity.len() {
            return Err(Error::shape(
                "sgd",
                format!("{count} parameters for {} state slots", self.velocity.len()),
            ));
        }
        self.schedule.step();
        self.steps += 1;
        Ok(lr)
    }
}
