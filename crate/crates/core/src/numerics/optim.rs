use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Gradients, NumericsError, ParameterSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order optimizer with persistent per-parameter state.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Steps taken so far.
    pub step: u64,
    /// Adam first moments, keyed by parameter name.
    pub first_moment: BTreeMap<String, Tensor>,
    /// Adam second moments.
    pub second_moment: BTreeMap<String, Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            step: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::adam(), lr)
    }

    /// Same hyperparameters, no accumulated state.
    pub fn fresh(&self) -> Self {
        Self::new(self.kind, self.lr)
    }

    /// Updates every parameter in place. All parameters need a gradient entry.
    pub fn step(
        &mut self,
        params: &mut ParameterSet,
        grads: &Gradients,
    ) -> Result<(), NumericsError> {
        if let Some(missing) = params.names().find(|n| grads.get(n).is_none()) {
            return Err(NumericsError::MissingGrad(missing.clone()));
        }
        self.step += 1;
        let names: Vec<String> = params.names().cloned().collect();
        for name in names {
            let g = grads.get(&name).expect("checked above");
            let w = params.get_mut(&name).expect("name from params");
            if g.shape() != w.shape() {
                return Err(NumericsError::Shape(format!(
                    "gradient for {name} has shape {:?}, parameter {:?}",
                    g.shape(),
                    w.shape()
                )));
            }
            match self.kind {
                OptimizerKind::Sgd => {
                    for (wv, gv) in w.data_mut().iter_mut().zip(g.data()) {
                        *wv -= self.lr * gv;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let m = self
                        .first_moment
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(g.shape()));
                    let v = self
                        .second_moment
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(g.shape()));
                    let t = self.step as i32;
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for (((wv, &gv), mv), vv) in w
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        let mhat = *mv / c1;
                        let vhat = *vv / c2;
                        *wv -= self.lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        params.bump_version();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64, g: f64) -> (ParameterSet, Gradients) {
        let mut ps = ParameterSet::new();
        ps.insert("w", Tensor::row(&[w]));
        let grads = Gradients::from_map([("w".to_string(), Tensor::row(&[g]))].into());
        (ps, grads)
    }

    #[test]
    fn sgd_step() {
        let (mut ps, g) = single(1.0, 1.0);
        Optimizer::sgd(0.1).step(&mut ps, &g).unwrap();
        assert!((ps.get("w").unwrap().data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so Δw = -lr·g/(|g|+ε) ≈ -lr·sign(g)
        for g in [0.3, -2.0, 17.0] {
            let (mut ps, grads) = single(1.0, g);
            Optimizer::adam(0.01).step(&mut ps, &grads).unwrap();
            let dw = ps.get("w").unwrap().data()[0] - 1.0;
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((dw - expected).abs() < 1e-12, "{dw} vs {expected}");
        }
    }

    #[test]
    fn zero_grad_no_change() {
        for mut opt in [Optimizer::sgd(0.5), Optimizer::adam(0.5)] {
            let (mut ps, g) = single(3.0, 0.0);
            opt.step(&mut ps, &g).unwrap();
            assert_eq!(ps.get("w").unwrap().data()[0], 3.0);
        }
    }

    #[test]
    fn missing_grad_is_error() {
        let (mut ps, _) = single(1.0, 1.0);
        let err = Optimizer::sgd(0.1).step(&mut ps, &Gradients::default());
        assert!(matches!(err, Err(NumericsError::MissingGrad(_))));
    }

    #[test]
    fn adam_moments_persist() {
        let (mut ps, g) = single(0.0, 1.0);
        let mut opt = Optimizer::adam(0.1);
        opt.step(&mut ps, &g).unwrap();
        opt.step(&mut ps, &g).unwrap();
        assert_eq!(opt.step, 2);
        let m = opt.first_moment["w"].data()[0];
        assert!((m - (0.1 * 0.9 + 0.1)).abs() < 1e-15);
    }
}
