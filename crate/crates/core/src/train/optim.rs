use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// AdamW with decoupled weight decay and bias-corrected moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        Self {
            cfg,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update at learning rate `lr`: `θ ← θ(1 - lr·wd)`, then the adaptive step.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adamw_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let decay = 1.0 - lr * weight_decay;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let (m, v) = (m.data_mut(), v.data_mut());
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *w = *w * decay - lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `base · gamma^epoch`.
pub fn lr_schedule(base: f64, gamma: f64, epoch: usize) -> f64 {
    base * gamma.powi(epoch as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one(theta: f64, g: f64, wd: f64, lr: f64) -> f64 {
        let cfg = AdamWConfig {
            weight_decay: wd,
            ..AdamWConfig::default()
        };
        let mut p = vec![Tensor::scalar(theta)];
        let mut opt = AdamW::new(cfg, &p);
        opt.step(&mut p, &[Tensor::scalar(g)], lr).unwrap();
        p[0].data()[0]
    }

    #[test]
    fn first_step_cases() {
        assert_abs_diff_eq!(
            one(1.0, 1.0, 0.0, 1e-3),
            1.0 - 1e-3 / (1.0 + 1e-8),
            epsilon = 1e-15
        );
        assert_eq!(one(0.7, 0.0, 0.0, 1e-3), 0.7);
        assert_abs_diff_eq!(
            one(2.0, 0.0, 1e-2, 0.5),
            2.0 * (1.0 - 0.5 * 1e-2),
            epsilon = 1e-15
        );
        assert!(one(0.0, -3.0, 0.0, 1e-3) > 0.0);
    }

    #[test]
    fn schedule() {
        assert_eq!(lr_schedule(1e-3, 0.8, 0), 1e-3);
        assert_abs_diff_eq!(lr_schedule(1e-3, 0.8, 1), 8e-4, epsilon = 1e-18);
        assert_abs_diff_eq!(lr_schedule(1e-3, 0.8, 25), 3.777_893_186e-6, epsilon = 1e-14);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = vec![Tensor::zeros(vec![2])];
        let mut opt = AdamW::new(AdamWConfig::default(), &p);
        assert!(opt.step(&mut p, &[Tensor::zeros(vec![3])], 1e-3).is_err());
    }
}
