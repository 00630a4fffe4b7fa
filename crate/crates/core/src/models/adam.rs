use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn from_state(config: AdamConfig, m: Vec<f64>, v: Vec<f64>, step: u64) -> Result<Self> {
        if m.len() != v.len() {
            return Err(Error::Shape("moment buffers differ in length".into()));
        }
        Ok(Self { config, m, v, step })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.step = 0;
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} moments, got {} params and {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for k in 0..params.len() {
            let g = grad[k];
            self.m[k] = beta1 * self.m[k] + (1.0 - beta1) * g;
            self.v[k] = beta2 * self.v[k] + (1.0 - beta2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            params[k] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut opt = Adam::new(AdamConfig::default(), 3);
        let mut x = vec![1.0, -2.0, 3.0];
        opt.update(&mut x, &[0.0; 3]).unwrap();
        assert_eq!(x, vec![1.0, -2.0, 3.0]);
        // moments decay geometrically once the gradient vanishes
        opt.update(&mut x, &[0.5, 0.5, 0.5]).unwrap();
        let (m1, v1) = (opt.moments().0.to_vec(), opt.moments().1.to_vec());
        opt.update(&mut x, &[0.0; 3]).unwrap();
        let (m2, v2) = opt.moments();
        for k in 0..3 {
            assert!((m2[k] - 0.9 * m1[k]).abs() < 1e-15);
            assert!((v2[k] - 0.999 * v1[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_gradient_step_tends_to_learning_rate() {
        let cfg = AdamConfig::default();
        let mut opt = Adam::new(cfg, 2);
        let mut x = vec![0.0, 0.0];
        let mut prev = x.clone();
        for _ in 0..5000 {
            prev.copy_from_slice(&x);
            opt.update(&mut x, &[3.0, -0.2]).unwrap();
        }
        // m̂ = g and v̂ = g² exactly under a constant gradient
        let step0 = x[0] - prev[0];
        let step1 = x[1] - prev[1];
        assert!((step0 + cfg.learning_rate).abs() < 1e-10);
        assert!((step1 - cfg.learning_rate).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch() {
        let mut opt = Adam::new(AdamConfig::default(), 2);
        assert!(matches!(opt.update(&mut [0.0; 3], &[0.0; 3]), Err(Error::Shape(_))));
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut opt = Adam::new(AdamConfig::default(), 4);
            let mut x = vec![0.1, 0.2, 0.3, 0.4];
            for t in 0..100 {
                let g: Vec<f64> = x.iter().map(|v| v * (t as f64).sin() + 0.01).collect();
                opt.update(&mut x, &g).unwrap();
            }
            x
        };
        assert_eq!(run(), run());
    }
}
