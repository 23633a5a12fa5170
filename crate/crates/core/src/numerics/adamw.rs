use std::collections::BTreeMap;

use super::{Gradients, NumericsError, ParamStore, Scalar, Tensor};

/// AdamW hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments per parameter plus the shared step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamWState<S = f32> {
    pub step: u64,
    pub first_moment: BTreeMap<String, Tensor<S>>,
    pub second_moment: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> AdamWState<S> {
    pub fn new() -> Self {
        Self {
            step: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    /// One decoupled-weight-decay Adam update of every parameter that has a
    /// gradient. Decay is applied to `θ` before the adaptive step and does not
    /// pass through the moments.
    pub fn step(
        &mut self,
        params: &mut ParamStore<S>,
        grads: &Gradients<S>,
        cfg: &AdamWConfig,
    ) -> Result<(), NumericsError> {
        if cfg.lr < 0.0 || !cfg.lr.is_finite() {
            return Err(NumericsError::Unsupported(format!("learning rate {}", cfg.lr)));
        }
        for (name, g) in grads.iter() {
            let p = params
                .get(name)
                .ok_or_else(|| NumericsError::MissingParameter(name.clone()))?;
            if p.shape() != g.shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "adamw",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = S::of(1.0 - cfg.beta1.powi(t));
        let bc2 = S::of(1.0 - cfg.beta2.powi(t));
        let (b1, b2) = (S::of(cfg.beta1), S::of(cfg.beta2));
        let (ob1, ob2) = (S::of(1.0 - cfg.beta1), S::of(1.0 - cfg.beta2));
        let lr = S::of(cfg.lr);
        let decay = S::of(cfg.lr * cfg.weight_decay);
        let eps = S::of(cfg.eps);

        for (name, g) in grads.iter() {
            let p = params.get_mut(name).expect("checked above");
            let m = self
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            let v = self
                .second_moment
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            for (((pv, mv), vv), &gv) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *pv = *pv - decay * *pv;
                *mv = b1 * *mv + ob1 * gv;
                *vv = b2 * *vv + ob2 * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: f64, grad: f64) -> (ParamStore<f64>, Gradients<f64>) {
        let mut ps = ParamStore::new();
        ps.insert("w", Tensor::scalar(value));
        let mut g = BTreeMap::new();
        g.insert("w".to_owned(), Tensor::scalar(grad));
        (ps, Gradients::from_map(g))
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let (mut ps, g) = one_param(0.37, 0.0);
        let mut st = AdamWState::new();
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        st.step(&mut ps, &g, &cfg).unwrap();
        assert_eq!(ps.get("w").unwrap().item(), 0.37);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut ps, g) = one_param(0.0, 1.0);
        let mut st = AdamWState::new();
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        st.step(&mut ps, &g, &cfg).unwrap();
        // m̂ = v̂ = 1 after bias correction: θ = -0.1 / (1 + 1e-8)
        let w = ps.get("w").unwrap().item();
        assert!((w - (-0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn decay_only_update() {
        let (mut ps, g) = one_param(1.0, 0.0);
        let mut st = AdamWState::new();
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.01,
            ..Default::default()
        };
        st.step(&mut ps, &g, &cfg).unwrap();
        assert!((ps.get("w").unwrap().item() - 0.999).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_rejected_without_side_effects() {
        let mut ps = ParamStore::<f64>::new();
        ps.insert("w", Tensor::zeros(vec![2]));
        let mut g = BTreeMap::new();
        g.insert("w".to_owned(), Tensor::zeros(vec![3]));
        let mut st = AdamWState::new();
        let err = st.step(&mut ps, &Gradients::from_map(g), &AdamWConfig::default());
        assert!(matches!(err, Err(NumericsError::ShapeMismatch { .. })));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn step_counter_increments_by_one() {
        let (mut ps, g) = one_param(0.5, 0.2);
        let mut st = AdamWState::new();
        for k in 1..=5 {
            st.step(&mut ps, &g, &AdamWConfig::default()).unwrap();
            assert_eq!(st.step, k);
            assert_eq!(st.first_moment["w"].shape(), ps.get("w").unwrap().shape());
        }
    }
}
