use crate::error::{Error, Result};
use crate::tensor::{Gradients, ParamStore, Tensor};

/// Linear warmup to `peak` over `warmup` steps, then decay with the inverse
/// square root of the step. Steps count from 1.
pub fn inverse_sqrt_lr(step: usize, peak: f64, warmup: usize) -> f64 {
    let s = step.max(1) as f64;
    if warmup == 0 {
        return peak / s.sqrt();
    }
    let w = warmup as f64;
    peak * (s / w).min((w / s).sqrt())
}

/// Adam with decoupled moment buffers keyed by parameter name.
///
/// Parameters and both moments are rounded to `f32` after every update, so
/// saving them to a checkpoint and resuming is exact.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: usize,
    pub m: ParamStore,
    pub v: ParamStore,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = |p: &ParamStore| {
            let mut z = ParamStore::new();
            for (name, t) in p.iter() {
                z.insert(name, Tensor::zeros(t.shape().to_vec()));
            }
            z
        };
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            step: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    /// One update with learning rate `lr`. Parameters without a gradient are
    /// left untouched.
    pub fn update(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, g) in grads.iter() {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::UnknownParameters(vec![name.to_string()]))?;
            let m = self
                .m
                .get_mut(name)
                .ok_or_else(|| Error::MissingParameters(vec![format!("adam.m.{name}")]))?;
            let v = self
                .v
                .get_mut(name)
                .ok_or_else(|| Error::MissingParameters(vec![format!("adam.v.{name}")]))?;
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..g.len() {
                let mi = (self.beta1 * md[i] + (1.0 - self.beta1) * g[i]) as f32 as f64;
                let vi = (self.beta2 * vd[i] + (1.0 - self.beta2) * g[i] * g[i]) as f32 as f64;
                md[i] = mi;
                vd[i] = vi;
                let upd = lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
                pd[i] = (pd[i] - upd) as f32 as f64;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_peaks_at_warmup() {
        assert_eq!(inverse_sqrt_lr(100, 0.002, 100), 0.002);
        assert!((inverse_sqrt_lr(50, 0.002, 100) - 0.001).abs() < 1e-15);
        assert!((inverse_sqrt_lr(400, 0.002, 100) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(vec![2], vec![1.0, -1.0]).unwrap());
        let mut g = Gradients::new();
        g.accumulate("w", &[0.5, -2.0]);
        let mut adam = Adam::new(&p);
        adam.update(&mut p, &g, 0.25).unwrap();
        // Bias-corrected first step is lr * sign(g), up to eps.
        assert!((p.get("w").unwrap().data()[0] - 0.75).abs() < 1e-6);
        assert!((p.get("w").unwrap().data()[1] + 0.75).abs() < 1e-6);
    }
}
