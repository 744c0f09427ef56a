use serde::{Deserialize, Serialize};

use super::{Gradients, Mlp, NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// SGD or Adam (beta1 = 0.9, beta2 = 0.999, eps = 1e-8, bias-corrected).
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
    first_moment: Option<Gradients>,
    second_moment: Option<Gradients>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(NnError::BadLearningRate(learning_rate));
        }
        Ok(Self {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: None,
            second_moment: None,
        })
    }

    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. Gradients are checked for shape and
    /// finiteness before any parameter is touched.
    pub fn apply(&mut self, model: &mut Mlp, grads: &Gradients) -> Result<()> {
        if !grads.matches(model) {
            return Err(NnError::Shape {
                what: "gradients",
                expected: model.num_params(),
                got: grads.iter().count(),
            });
        }
        if !grads.is_finite() {
            return Err(NnError::NonFiniteGradient);
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (layer, (gw, gb)) in model
                    .layers_mut()
                    .iter_mut()
                    .zip(grads.weights.iter().zip(&grads.biases))
                {
                    sgd_step(&mut layer.weights, gw, lr);
                    sgd_step(&mut layer.biases, gb, lr);
                }
            }
            OptimizerKind::Adam => {
                let m = self
                    .first_moment
                    .get_or_insert_with(|| Gradients::zeros_like(model));
                let v = self
                    .second_moment
                    .get_or_insert_with(|| Gradients::zeros_like(model));
                let t = self.step as i32;
                let hyper = AdamStep {
                    lr,
                    beta1: self.beta1,
                    beta2: self.beta2,
                    epsilon: self.epsilon,
                    correction1: 1.0 - self.beta1.powi(t),
                    correction2: 1.0 - self.beta2.powi(t),
                };
                for (k, layer) in model.layers_mut().iter_mut().enumerate() {
                    hyper.apply(
                        &mut layer.weights,
                        &grads.weights[k],
                        &mut m.weights[k],
                        &mut v.weights[k],
                    );
                    hyper.apply(
                        &mut layer.biases,
                        &grads.biases[k],
                        &mut m.biases[k],
                        &mut v.biases[k],
                    );
                }
            }
        }
        if !model.params_finite() {
            return Err(NnError::NonFiniteParameters);
        }
        Ok(())
    }
}

fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) {
    params.iter_mut().zip(grads).for_each(|(p, g)| *p -= lr * g);
}

struct AdamStep {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    correction1: f64,
    correction2: f64,
}

impl AdamStep {
    fn apply(&self, params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64]) {
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / self.correction1;
            let v_hat = v[i] / self.correction2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Dense, LayerSpec};

    fn scalar_model(w: f64) -> Mlp {
        Mlp::from_layers(
            vec![Dense {
                spec: LayerSpec::new(1, 1, Activation::Identity),
                weights: vec![w],
                biases: vec![0.0],
            }],
            0,
        )
        .unwrap()
    }

    fn scalar_grad(g: f64) -> Gradients {
        Gradients {
            weights: vec![vec![g]],
            biases: vec![vec![0.0]],
        }
    }

    #[test]
    fn sgd_step_value() {
        let mut m = scalar_model(1.0);
        Optimizer::sgd(0.1)
            .unwrap()
            .apply(&mut m, &scalar_grad(0.5))
            .unwrap();
        assert!((m.layers()[0].weights[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_bounded_by_lr() {
        for g in [1e-3, 0.5, -7.0] {
            let mut m = scalar_model(1.0);
            Optimizer::adam(0.01)
                .unwrap()
                .apply(&mut m, &scalar_grad(g))
                .unwrap();
            let step = m.layers()[0].weights[0] - 1.0;
            assert!(step * g < 0.0, "step must oppose the gradient");
            assert!(step.abs() <= 0.01 * (1.0 + 1e-6));
            assert!(step.abs() > 0.0099);
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        for mut opt in [Optimizer::sgd(0.1).unwrap(), Optimizer::adam(0.1).unwrap()] {
            let mut m = scalar_model(0.3);
            opt.apply(&mut m, &scalar_grad(0.0)).unwrap();
            assert_eq!(m.layers()[0].weights[0], 0.3);
        }
    }

    #[test]
    fn rejects_bad_gradients() {
        let mut m = scalar_model(0.3);
        let mut opt = Optimizer::adam(0.1).unwrap();
        assert!(matches!(
            opt.apply(&mut m, &scalar_grad(f64::NAN)),
            Err(NnError::NonFiniteGradient)
        ));
        assert_eq!(m.layers()[0].weights[0], 0.3);
        assert_eq!(opt.steps(), 0);
        let wrong = Gradients {
            weights: vec![vec![0.0, 1.0]],
            biases: vec![vec![0.0]],
        };
        assert!(matches!(
            opt.apply(&mut m, &wrong),
            Err(NnError::Shape { .. })
        ));
        assert!(Optimizer::sgd(0.0).is_err());
    }
}
