use ndarray::ArrayD;

use crate::error::{invalid, Result};
use crate::slimnet::{Grads, ParamStore};

/// SGD with heavy-ball momentum and coupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<ArrayD<f64>>,
}

impl Sgd {
    pub fn new(store: &ParamStore, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: store.params().iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect(),
        }
    }

    pub fn velocity(&self) -> &[ArrayD<f64>] {
        &self.velocity
    }

    pub fn set_velocity(&mut self, velocity: Vec<ArrayD<f64>>) -> Result<()> {
        if velocity.len() != self.velocity.len() || velocity.iter().zip(&self.velocity).any(|(a, b)| a.shape() != b.shape()) {
            return Err(invalid!("optimizer state does not match the parameter layout"));
        }
        self.velocity = velocity;
        Ok(())
    }

    /// `v ← μv + g + λθ`, `θ ← θ − lr·v` for every parameter except the
    /// normalization parameters of widths outside `active_widths`, which keep
    /// both their values and their velocity.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64, active_widths: &[usize]) {
        for ((p, g), v) in store.params_mut().iter_mut().zip(&grads.tensors).zip(&mut self.velocity) {
            if p.role.owner_width().is_some_and(|w| !active_widths.contains(&w)) {
                continue;
            }
            let (mu, wd) = (self.momentum, self.weight_decay);
            ndarray::Zip::from(&mut p.value).and(v).and(g).for_each(|t, v, &g| {
                *v = mu * *v + g + wd * *t;
                *t -= lr * *v;
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slimnet::{mlp_backbone, mlp_head, Architecture, ParamRole, SlimModel, WidthConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn momentum_recurrence_and_frozen_norms() {
        let arch = Architecture {
            backbone: mlp_backbone(3, &[4]),
            projector: mlp_head(4, 4, 2, true, false),
            predictor: None,
        };
        let (_, mut store) = SlimModel::build(&arch, WidthConfig::new(vec![1.0, 0.5]).unwrap(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let before = store.clone();
        let mut grads = Grads::zeros_like(&store);
        for t in &mut grads.tensors {
            t.fill(1.0);
        }
        let mut opt = Sgd::new(&store, 0.5, 0.0);
        opt.step(&mut store, &grads, 0.1, &[0]);
        opt.step(&mut store, &grads, 0.1, &[0]);
        for (p, q) in store.params().iter().zip(before.params()) {
            let moved = (&p.value - &q.value).iter().copied().fold(0.0f64, f64::max);
            if matches!(p.role, ParamRole::NormScale { width: 1 } | ParamRole::NormShift { width: 1 }) {
                assert_eq!(p.value, q.value, "{}", p.name);
            } else {
                // two steps: 0.1·1 + 0.1·1.5 downhill
                let drop = (&q.value - &p.value).iter().all(|d| (d - 0.25).abs() < 1e-15);
                assert!(drop, "{} moved {moved}", p.name);
            }
        }
        assert!(opt.set_velocity(vec![]).is_err());
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let arch = Architecture {
            backbone: mlp_backbone(2, &[2]),
            projector: mlp_head(2, 2, 2, true, false),
            predictor: None,
        };
        let (_, mut store) = SlimModel::build(&arch, WidthConfig::full_only(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let before = store.flat_values();
        let grads = Grads::zeros_like(&store);
        Sgd::new(&store, 0.0, 0.1).step(&mut store, &grads, 1.0, &[0]);
        for (a, b) in store.flat_values().iter().zip(&before) {
            assert!((a - 0.9 * b).abs() < 1e-15);
        }
    }
}
