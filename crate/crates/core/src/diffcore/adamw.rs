use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DiffError, Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 5e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<(), DiffError> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && self.beta1 > 0.0
            && (0.0..1.0).contains(&self.beta2)
            && self.beta2 > 0.0
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(DiffError::invalid("adamw", format!("hyperparameters out of range: {self:?}")))
        }
    }
}

#[derive(Clone, Debug)]
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

/// AdamW with bias-corrected moments and decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    step_count: u64,
    moments: BTreeMap<String, Moments<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Result<Self, DiffError> {
        config.validate()?;
        Ok(Self { config, step_count: 0, moments: BTreeMap::new() })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update over `(name, parameter, gradient)` triples:
    /// `theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)`.
    ///
    /// Nothing is modified when any gradient is non-finite or mis-shaped.
    pub fn step<'a, I>(&mut self, params: I) -> Result<(), DiffError>
    where
        I: IntoIterator<Item = (&'a str, &'a mut Tensor<T>, &'a Tensor<T>)>,
    {
        let items: Vec<_> = params.into_iter().collect();
        for (name, p, g) in &items {
            if p.shape() != g.shape() {
                return Err(DiffError::shape("adamw", format!("gradient of {name}"), p.numel(), g.numel()));
            }
            if !g.is_finite() {
                return Err(DiffError::NonFinite { what: format!("gradient of {name}") });
            }
            if let Some(mo) = self.moments.get(*name) {
                if mo.m.len() != p.numel() {
                    return Err(DiffError::shape("adamw", format!("moments of {name}"), mo.m.len(), p.numel()));
                }
            }
        }

        self.step_count += 1;
        let c = &self.config;
        let t = self.step_count as i32;
        let bc1 = T::lit(1.0 - c.beta1.powi(t));
        let bc2 = T::lit(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let (lr, eps, wd) = (T::lit(c.lr), T::lit(c.eps), T::lit(c.weight_decay));

        for (name, p, g) in items {
            let mo = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| Moments { m: vec![T::zero(); p.numel()], v: vec![T::zero(); p.numel()] });
            for (((theta, &gv), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(&mut mo.m).zip(&mut mo.v) {
                *m = b1 * *m + one_b1 * gv;
                *v = b2 * *v + one_b2 * gv * gv;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta = *theta - lr * (m_hat / (v_hat.sqrt() + eps) + wd * *theta);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, wd: f64) -> AdamWConfig {
        AdamWConfig { lr, weight_decay: wd, ..AdamWConfig::default() }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut opt = AdamW::<f64>::new(cfg(0.1, 0.0)).unwrap();
        let mut p = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = Tensor::zeros(&[3]);
        opt.step([("p", &mut p, &g)]).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0, 0.5]);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_gradient_applies_decoupled_decay() {
        let mut opt = AdamW::<f64>::new(cfg(0.1, 0.01)).unwrap();
        let mut p = Tensor::new(&[2], vec![2.0, -4.0]).unwrap();
        let g = Tensor::zeros(&[2]);
        opt.step([("p", &mut p, &g)]).unwrap();
        assert!((p.data()[0] - 0.999 * 2.0).abs() < 1e-15);
        assert!((p.data()[1] + 0.999 * 4.0).abs() < 1e-15);
    }

    #[test]
    fn first_step_matches_hand_recursion() {
        let mut opt = AdamW::<f64>::new(cfg(1e-3, 0.01)).unwrap();
        let mut p = Tensor::scalar(0.5);
        let g = Tensor::scalar(2.0);
        opt.step([("p", &mut p, &g)]).unwrap();
        // m = 0.1*2 = 0.2, v = 0.001*4 = 0.004; m_hat = 2, v_hat = 4
        let m_hat = (0.1 * 2.0) / (1.0 - 0.9);
        let v_hat = (0.001 * 4.0) / (1.0 - 0.999);
        let want = 0.5 - 1e-3 * (m_hat / (f64::sqrt(v_hat) + 1e-8) + 0.01 * 0.5);
        assert!((p.data()[0] - want).abs() < 1e-10);
        // hand value: 0.5 - 1e-3 * (1 - 5e-9 + 0.005)
        assert!((p.data()[0] - 0.498995).abs() < 1e-10);
    }

    #[test]
    fn nan_gradient_names_the_parameter_and_changes_nothing() {
        let mut opt = AdamW::<f32>::new(AdamWConfig::default()).unwrap();
        let mut a = Tensor::scalar(1.0f32);
        let mut b = Tensor::scalar(1.0f32);
        let ga = Tensor::scalar(1.0f32);
        let gb = Tensor::scalar(f32::NAN);
        let err = opt.step([("a", &mut a, &ga), ("enc1.conv1.w", &mut b, &gb)]).unwrap_err();
        assert_eq!(err, DiffError::NonFinite { what: "gradient of enc1.conv1.w".into() });
        assert_eq!(a.data(), &[1.0]);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn identical_runs_are_bitwise_equal() {
        let run = || {
            let mut opt = AdamW::<f32>::new(cfg(1e-2, 0.01)).unwrap();
            let mut p = Tensor::new(&[4], vec![0.3, -0.7, 1.1, 0.0]).unwrap();
            for k in 0..25 {
                let g = p.map(|v| v * 1.5 - 0.1 * k as f32);
                opt.step([("p", &mut p, &g)]).unwrap();
            }
            p
        };
        assert_eq!(run().data(), run().data());
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(AdamW::<f32>::new(cfg(0.0, 0.0)).is_err());
        assert!(AdamW::<f32>::new(AdamWConfig { beta1: 1.0, ..AdamWConfig::default() }).is_err());
    }
}
