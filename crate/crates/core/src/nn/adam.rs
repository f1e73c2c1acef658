use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use super::model::{Gradients, ModelParams};
use super::{cast, NnError, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(NnError::InvalidConfig(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// First and second moment estimates, one pair per learnable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<ArrayD<T>>,
    pub v: Vec<ArrayD<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros: Vec<ArrayD<T>> = params
            .tensors()
            .iter()
            .map(|t| ArrayD::zeros(t.raw_dim()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// One bias-corrected Adam update of every learnable tensor.
    pub fn step(&mut self, cfg: &AdamConfig, params: &mut ModelParams<T>, grads: &Gradients<T>) {
        self.step += 1;
        let t = self.step as i32;
        let b1: T = cast(cfg.beta1);
        let b2: T = cast(cfg.beta2);
        let one_b1: T = cast(1.0 - cfg.beta1);
        let one_b2: T = cast(1.0 - cfg.beta2);
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        // lr·m̂/(√v̂+ε) with the corrections folded into the step size and ε.
        let step_size: T = cast(cfg.learning_rate * c2.sqrt() / c1);
        let eps_hat: T = cast(cfg.epsilon * c2.sqrt());
        let grads = grads.tensors();
        for (((mut p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            Zip::from(&mut p)
                .and(&g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + one_b1 * g;
                    *v = b2 * *v + one_b2 * g * g;
                    *p = *p - step_size * *m / (v.sqrt() + eps_hat);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::ModelConfig;
    use crate::rng::rng_from_seed;

    fn small() -> ModelParams<f64> {
        let cfg = ModelConfig {
            input_len: 8,
            input_channels: 2,
            conv_filters: [3, 3],
            kernel_size: 2,
            dense_hidden: 4,
            classes: 3,
            ..Default::default()
        };
        ModelParams::init(cfg, &mut rng_from_seed(0)).unwrap()
    }

    fn constant_grads(p: &ModelParams<f64>, value: f64) -> Gradients<f64> {
        let g = crate::nn::model::Gradients {
            conv1: p.conv1.clone(),
            bn1: (p.bn1.gamma.clone(), p.bn1.beta.clone()),
            conv2: p.conv2.clone(),
            bn2: (p.bn2.gamma.clone(), p.bn2.beta.clone()),
            dense1: p.dense1.clone(),
            bn3: (p.bn3.gamma.clone(), p.bn3.beta.clone()),
            dense2: p.dense2.clone(),
        };
        let mut g = g;
        for mut t in g.tensors_mut() {
            t.fill(value);
        }
        g
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction, m̂ = g and v̂ = g², so the first step is lr·sign(g).
        let mut p = small();
        let before = p.clone();
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig::default();
        let g = constant_grads(&p, 0.37);
        st.step(&cfg, &mut p, &g);
        for (a, b) in p.tensors().iter().zip(before.tensors()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((y - x - 1e-3).abs() < 1e-9, "{y} -> {x}");
            }
        }
    }

    #[test]
    fn matches_textbook_update() {
        let cfg = AdamConfig::default();
        let gs = [0.5, -0.2, 0.1, 0.9];
        let mut p = small();
        let start = p.dense2.bias[0];
        let mut st = AdamState::new(&p);
        for &g in &gs {
            let grads = constant_grads(&p, g);
            st.step(&cfg, &mut p, &grads);
        }
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, start);
        for (i, &g) in gs.iter().enumerate() {
            let t = (i + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 1e-3 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((p.dense2.bias[0] - x).abs() < 1e-12);
        assert_eq!(st.step, 4);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = small();
        let before = p.clone();
        let mut st = AdamState::new(&p);
        st.step(&AdamConfig::default(), &mut p, &constant_grads(&before, 0.0));
        assert_eq!(p, before);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(w) = w² in every coordinate, w₀ = 1.
        let cfg = AdamConfig::default();
        let mut p = small();
        for mut t in p.tensors_mut() {
            t.fill(1.0);
        }
        let mut st = AdamState::new(&p);
        for _ in 0..5000 {
            let mut g = constant_grads(&p, 0.0);
            for (mut gt, pt) in g.tensors_mut().into_iter().zip(p.tensors()) {
                gt.zip_mut_with(&pt, |gv, &w| *gv = 2.0 * w);
            }
            st.step(&cfg, &mut p, &g);
        }
        let (mut m, mut v, mut w) = (0.0f64, 0.0f64, 1.0f64);
        for t in 1..=5000 {
            let g = 2.0 * w;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            w -= 1e-3 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
        }
        assert!(w.abs() < 1e-2, "oracle ended at {w}");
        for t in p.tensors() {
            for &x in t.iter() {
                assert!(x.abs() < 1e-2);
                assert!((x - w).abs() < 1e-9, "{x} vs oracle {w}");
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let c = AdamConfig { learning_rate: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
        assert!(AdamConfig::default().validate().is_ok());
    }
}
