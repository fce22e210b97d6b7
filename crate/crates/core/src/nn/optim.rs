use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::param::Param;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// L2 penalty added to the gradient (coupled, not decoupled, decay).
    pub weight_decay: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f32>,
    v: Vec<f32>,
}

/// Adam with bias correction. State is keyed by param path so that the set of
/// updated params can be restricted (linear probing) without reindexing.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u32,
    state: HashMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            state: HashMap::new(),
        }
    }

    /// One update over `params`; non-trainable entries are skipped.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = (String, &'a mut Param)>) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (name, p) in params {
            if !p.trainable {
                continue;
            }
            let st = self.state.entry(name).or_insert_with(|| Moments {
                m: vec![0.0; p.len()],
                v: vec![0.0; p.len()],
            });
            for i in 0..p.value.len() {
                let g = p.grad[i] + c.weight_decay * p.value[i];
                st.m[i] = c.beta1 * st.m[i] + (1.0 - c.beta1) * g;
                st.v[i] = c.beta2 * st.v[i] + (1.0 - c.beta2) * g * g;
                let mhat = st.m[i] / bc1;
                let vhat = st.v[i] / bc2;
                p.value[i] -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // with bias correction the first Adam step has magnitude ~lr
        let mut p = Param::new(vec![2], vec![1.0, -1.0]);
        p.grad = vec![0.3, -5.0];
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        });
        adam.step([("p".to_string(), &mut p)]);
        assert!((p.value[0] - 0.9).abs() < 1e-5);
        assert!((p.value[1] + 0.9).abs() < 1e-5);
    }

    #[test]
    fn buffers_untouched() {
        let mut p = Param::buffer(vec![1], 2.0);
        p.grad = vec![1.0];
        let mut adam = Adam::new(AdamConfig::default());
        adam.step([("b".to_string(), &mut p)]);
        assert_eq!(p.value, vec![2.0]);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = Param::new(vec![1], vec![5.0]);
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        });
        for _ in 0..500 {
            p.grad = vec![2.0 * (p.value[0] - 1.5)];
            adam.step([("p".to_string(), &mut p)]);
        }
        assert!((p.value[0] - 1.5).abs() < 1e-2);
    }
}
