use crate::error::{Error, Result};
use crate::model::lstm::ModelWeights;

pub const LEARNING_RATE: f64 = 1e-3;
pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(weights: &mut ModelWeights, grads: &ModelWeights, state: &mut AdamState) -> Result<()> {
    let n = weights.params.len();
    if grads.params.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Shape(format!(
            "adam: {} weights, {} gradients, {}/{} moments",
            n,
            grads.params.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if let Some((index, &value)) = grads.params.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteGradient { index, value });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (((w, &g), m), v) in weights
        .params
        .iter_mut()
        .zip(&grads.params)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *w -= LEARNING_RATE * m_hat / (v_hat.sqrt() + EPSILON);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::lstm::ModelDims;

    fn weights() -> ModelWeights {
        let mut w = ModelWeights::zeros(ModelDims { hidden: 2, dense: 2 });
        for (i, p) in w.params.iter_mut().enumerate() {
            *p = (i as f64 * 0.37).sin();
        }
        w
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        let mut w = weights();
        let before = w.clone();
        let mut st = AdamState::new(w.params.len());
        adam_step(&mut w, &before.zeros_like(), &mut st).unwrap();
        assert_eq!(w, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut w = weights();
        let before = w.clone();
        let mut g = w.zeros_like();
        for (i, v) in g.params.iter_mut().enumerate() {
            *v = if i % 2 == 0 { 3.0 } else { -0.02 };
        }
        let mut st = AdamState::new(w.params.len());
        adam_step(&mut w, &g, &mut st).unwrap();
        for ((a, b), gv) in w.params.iter().zip(&before.params).zip(&g.params) {
            let step = a - b;
            assert!((step + LEARNING_RATE * gv.signum()).abs() < 1e-8);
        }
    }

    #[test]
    fn identical_runs_identical_trajectories() {
        let run = || {
            let mut w = weights();
            let mut st = AdamState::new(w.params.len());
            for s in 0..10 {
                let mut g = w.zeros_like();
                for (i, v) in g.params.iter_mut().enumerate() {
                    *v = ((i + s) as f64).cos();
                }
                adam_step(&mut w, &g, &mut st).unwrap();
            }
            (w, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_is_reported() {
        let mut w = weights();
        let mut g = w.zeros_like();
        g.params[3] = f64::INFINITY;
        let mut st = AdamState::new(w.params.len());
        assert!(matches!(
            adam_step(&mut w, &g, &mut st),
            Err(Error::NonFiniteGradient { index: 3, .. })
        ));
        assert_eq!(st.step, 0);
    }
}
