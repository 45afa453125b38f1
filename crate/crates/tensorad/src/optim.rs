use crate::error::{shape_err, Result, TensorError};
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment estimates, keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: AdamConfig,
    pub step: u64,
    pub first: ParamSet,
    pub second: ParamSet,
}

impl OptimState {
    /// Zero moments shaped like `params`.
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let mut first = ParamSet::new();
        let mut second = ParamSet::new();
        for (n, t) in params.iter() {
            first.insert(n, Tensor::zeros(t.shape()));
            second.insert(n, Tensor::zeros(t.shape()));
        }
        Self {
            config,
            step: 0,
            first,
            second,
        }
    }
}

/// One bias-corrected Adam update of every parameter that has a gradient.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut OptimState,
    lr: f64,
) -> Result<()> {
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = (state.step + 1) as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (name, g) in grads.iter() {
        let p = params.get_mut(name).ok_or_else(|| {
            TensorError::Invalid(format!("gradient for unknown parameter `{name}`"))
        })?;
        let m = state
            .first
            .get_mut(name)
            .ok_or_else(|| TensorError::Invalid(format!("no optimizer state for `{name}`")))?;
        if p.shape() != g.shape() || m.shape() != g.shape() {
            return Err(shape_err(
                "adam_step",
                format!("`{name}`: param {:?}, grad {:?}", p.shape(), g.shape()),
            ));
        }
        for (mv, &gv) in m.data_mut().iter_mut().zip(g.data()) {
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
        }
        let v = state
            .second
            .get_mut(name)
            .expect("moments are created together");
        for (vv, &gv) in v.data_mut().iter_mut().zip(g.data()) {
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
        }
        let m = state.first.get(name).expect("checked above");
        let v = state.second.get(name).expect("checked above");
        for ((pv, &mv), &vv) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
            let m_hat = mv / c1;
            let v_hat = vv / c2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    state.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::scalar(v));
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = scalar_set(0.3);
        let mut st = OptimState::new(&p, AdamConfig::default());
        for _ in 0..100 {
            adam_step(&mut p, &scalar_set(0.0), &mut st, 0.1).unwrap();
        }
        assert_eq!(p.get("x").unwrap().item(), 0.3);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        for g in [2.5, -0.01] {
            let mut p = scalar_set(1.0);
            let mut st = OptimState::new(&p, AdamConfig::default());
            adam_step(&mut p, &scalar_set(g), &mut st, 0.01).unwrap();
            // m̂ = g, v̂ = g² → Δ = -lr·g/(|g|+ε)
            let expected = 1.0 - 0.01 * g / (g.abs() + 1e-8);
            assert!((p.get("x").unwrap().item() - expected).abs() < 1e-15);
            assert!((p.get("x").unwrap().item() - (1.0 - 0.01 * g.signum())).abs() < 1e-8);
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = scalar_set(1.0);
        let mut st = OptimState::new(&p, AdamConfig::default());
        for _ in 0..500 {
            let x = p.get("x").unwrap().item();
            adam_step(&mut p, &scalar_set(2.0 * x), &mut st, 0.05).unwrap();
        }
        assert!(p.get("x").unwrap().item().abs() < 1e-2);
        assert_eq!(st.step, 500);
    }

    #[test]
    fn mismatched_gradient_shape_is_rejected() {
        let mut p = scalar_set(1.0);
        let mut st = OptimState::new(&p, AdamConfig::default());
        let mut g = ParamSet::new();
        g.insert("x", Tensor::zeros(&[2]));
        assert!(adam_step(&mut p, &g, &mut st, 0.1).is_err());
    }
}
