use crate::error::{invalid, Result};
use crate::slimnet::ParamStore;

/// Exponential moving average `ξ` of the online parameters `θ`.
///
/// `ξ` never receives gradients: the target branch reads it, and only
/// [`MomentumState::update`] writes it.
#[derive(Debug, Clone)]
pub struct MomentumState {
    xi: ParamStore,
    m: f64,
}

impl MomentumState {
    pub fn new(theta: &ParamStore, m: f64) -> Result<Self> {
        check_m(m)?;
        Ok(Self { xi: theta.clone(), m })
    }

    pub fn from_parts(xi: ParamStore, m: f64) -> Result<Self> {
        check_m(m)?;
        Ok(Self { xi, m })
    }

    pub fn params(&self) -> &ParamStore {
        &self.xi
    }

    /// Mutable access for restoring checkpoints; training code goes through
    /// [`MomentumState::update`].
    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.xi
    }

    pub fn coefficient(&self) -> f64 {
        self.m
    }

    pub fn update(&mut self, theta: &ParamStore) -> Result<()> {
        momentum_update(theta, &mut self.xi, self.m)
    }
}

fn check_m(m: f64) -> Result<()> {
    if !(0.0..1.0).contains(&m) {
        return Err(invalid!("momentum coefficient must be in [0, 1), got {m}"));
    }
    Ok(())
}

/// `ξ ← m ξ + (1 − m) θ` over every learnable parameter.
pub fn momentum_update(theta: &ParamStore, xi: &mut ParamStore, m: f64) -> Result<()> {
    check_m(m)?;
    if theta.params().len() != xi.params().len() {
        return Err(invalid!("parameter layouts differ"));
    }
    for (x, t) in xi.params_mut().iter_mut().zip(theta.params()) {
        if x.value.shape() != t.value.shape() {
            return Err(invalid!("shape mismatch for {}", t.name));
        }
        ndarray::Zip::from(&mut x.value)
            .and(&t.value)
            .for_each(|x, &t| *x = m * *x + (1.0 - m) * t);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slimnet::{mlp_backbone, Stack, WidthConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stores() -> (ParamStore, ParamStore) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut a = ParamStore::new(WidthConfig::new(vec![1.0, 0.5]).unwrap());
        Stack::build("b", &mlp_backbone(3, &[4]), false, &mut a, &mut rng).unwrap();
        let mut b = a.clone();
        for p in b.params_mut() {
            p.value.fill(0.0);
        }
        for p in a.params_mut() {
            p.value.fill(1.0);
        }
        (a, b)
    }

    #[test]
    fn zero_momentum_copies() {
        let (theta, mut xi) = stores();
        momentum_update(&theta, &mut xi, 0.0).unwrap();
        for (x, t) in xi.params().iter().zip(theta.params()) {
            assert_eq!(x.value, t.value);
        }
    }

    #[test]
    fn single_step_from_zero() {
        let (theta, mut xi) = stores();
        momentum_update(&theta, &mut xi, 0.999).unwrap();
        for x in xi.params() {
            assert!(x.value.iter().all(|&v| (v - 0.001).abs() < 1e-15));
        }
    }

    #[test]
    fn geometric_recursion() {
        let (mut theta, mut xi) = stores();
        for p in theta.params_mut() {
            p.value.fill(0.7);
        }
        for p in xi.params_mut() {
            p.value.fill(-1.3);
        }
        let m = 0.9;
        for _ in 0..10 {
            momentum_update(&theta, &mut xi, m).unwrap();
        }
        let expected = 0.7 + m.powi(10) * (-1.3 - 0.7);
        for x in xi.params() {
            assert!(x.value.iter().all(|&v| (v - expected).abs() <= 1e-10));
        }
    }

    #[test]
    fn rejects_bad_coefficient() {
        let (theta, mut xi) = stores();
        assert!(momentum_update(&theta, &mut xi, 1.0).is_err());
        assert!(momentum_update(&theta, &mut xi, -0.1).is_err());
        assert!(MomentumState::new(&theta, 1.0).is_err());
    }
}
