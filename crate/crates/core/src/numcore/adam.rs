use serde::{Deserialize, Serialize};

use super::{NumError, Real, Result, Tensor};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Step counter and moment accumulators, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
}

impl<T> Default for AdamState<T> {
    fn default() -> Self {
        Self {
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub state: AdamState<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: AdamState::default(),
        }
    }

    pub fn with_state(config: AdamConfig, state: AdamState<T>) -> Self {
        Self { config, state }
    }

    /// Applies one update in place. Moments are allocated on the first call.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(NumError::ShapeMismatch {
                op: "adam_step",
                lhs: vec![params.len()],
                rhs: vec![grads.len()],
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(NumError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        let st = &mut self.state;
        if st.first_moment.is_empty() && st.step == 0 {
            st.first_moment = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            st.second_moment = st.first_moment.clone();
        }
        let moments_match = st.first_moment.len() == params.len()
            && st.second_moment.len() == params.len()
            && params
                .iter()
                .zip(&st.first_moment)
                .zip(&st.second_moment)
                .all(|((p, m), v)| m.len() == p.len() && v.len() == p.len());
        if !moments_match {
            return Err(NumError::ShapeMismatch {
                op: "adam_step",
                lhs: params.iter().map(|p| p.len()).collect(),
                rhs: st.first_moment.iter().map(|m| m.len()).collect(),
            });
        }

        st.step += 1;
        let cfg = self.config;
        let t = st.step as i32;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
        let corr1 = T::lit(1.0 / (1.0 - cfg.beta1.powi(t)));
        let corr2 = T::lit(1.0 / (1.0 - cfg.beta2.powi(t)));
        let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(st.first_moment.iter_mut().zip(st.second_moment.iter_mut()))
        {
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                let m_hat = *mi * corr1;
                let v_hat = *vi * corr2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
