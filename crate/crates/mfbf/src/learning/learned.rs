//! Barrier functions backed by trained regressors.
//!
//! The value is the conservative network output `mean − n_sigma·σ`. The
//! one-step change comes in two flavors:
//!
//! - hybrid: the plant steps once and the learned value is evaluated at
//!   the next state, so only a black-box simulator is needed;
//! - fully model-free: a second regressor predicts the post-step worst
//!   margin directly from `(state, action index)`, so admissibility
//!   reduces to `g(x, u) >= (1 − λ)·value(x)` with no plant access.

use crate::barrier::BarrierFunction;
use crate::dynamics::{ActionSet, ControlVector, FlatState, Plant};
use crate::error::{Error, Result};
use crate::learning::mlp::MlpRegressor;

enum DeltaMode<P: Plant> {
    Hybrid { plant: P },
    Surrogate {
        delta_model: MlpRegressor,
        actions: ActionSet<P::Control>,
    },
}

/// Learned barrier function over a plant's state space.
pub struct LearnedBarrier<P: Plant> {
    value_model: MlpRegressor,
    mode: DeltaMode<P>,
    n_sigma: f64,
    mc_samples: usize,
}

impl<P> LearnedBarrier<P>
where
    P: Plant,
    P::State: FlatState,
    P::Control: ControlVector,
{
    fn check_common(value_model: &MlpRegressor, n_sigma: f64, mc_samples: usize) -> Result<()> {
        if value_model.encoder().raw_dim() != P::State::DIM {
            return Err(Error::DimensionMismatch(format!(
                "value model expects {}-dim states, plant has {}",
                value_model.encoder().raw_dim(),
                P::State::DIM
            )));
        }
        if value_model.encoder().action_count != 0 {
            return Err(Error::DimensionMismatch(
                "value model must not take an action input".into(),
            ));
        }
        if n_sigma < 0.0 {
            return Err(Error::InvalidConfig("n_sigma must be >= 0".into()));
        }
        if mc_samples == 0 {
            return Err(Error::InvalidConfig("mc_samples must be >= 1".into()));
        }
        Ok(())
    }

    /// Learned value with exact one-step plant evaluation for Δh.
    pub fn hybrid(
        value_model: MlpRegressor,
        plant: P,
        n_sigma: f64,
        mc_samples: usize,
    ) -> Result<Self> {
        Self::check_common(&value_model, n_sigma, mc_samples)?;
        Ok(Self {
            value_model,
            mode: DeltaMode::Hybrid { plant },
            n_sigma,
            mc_samples,
        })
    }

    /// Fully model-free: Δh comes from the one-step surrogate.
    pub fn model_free(
        value_model: MlpRegressor,
        delta_model: MlpRegressor,
        actions: ActionSet<P::Control>,
        n_sigma: f64,
        mc_samples: usize,
    ) -> Result<Self> {
        Self::check_common(&value_model, n_sigma, mc_samples)?;
        if delta_model.encoder().raw_dim() != P::State::DIM {
            return Err(Error::DimensionMismatch(
                "surrogate model state dimension mismatch".into(),
            ));
        }
        if delta_model.encoder().action_count != actions.len() {
            return Err(Error::DimensionMismatch(format!(
                "surrogate encodes {} actions, set has {}",
                delta_model.encoder().action_count,
                actions.len()
            )));
        }
        Ok(Self {
            value_model,
            mode: DeltaMode::Surrogate {
                delta_model,
                actions,
            },
            n_sigma,
            mc_samples,
        })
    }

    pub fn value_model(&self) -> &MlpRegressor {
        &self.value_model
    }

    pub fn is_model_free(&self) -> bool {
        matches!(self.mode, DeltaMode::Surrogate { .. })
    }

    fn conservative(&self, raws: &[f64]) -> Vec<f64> {
        self.value_model
            .conservative_rows(raws, None, self.mc_samples, self.n_sigma)
    }

    /// Map filter actions onto surrogate action indices; actions not in
    /// the set resolve to the nearest member so the barrier stays total.
    fn action_indices(actions_in_set: &ActionSet<P::Control>, asked: &[P::Control]) -> Vec<usize> {
        asked
            .iter()
            .map(|u| {
                actions_in_set.index_of(u).unwrap_or_else(|| {
                    let mut best = (0usize, f64::INFINITY);
                    for (i, a) in actions_in_set.actions().iter().enumerate() {
                        let d = a.dist_sq(u);
                        if d < best.1 {
                            best = (i, d);
                        }
                    }
                    best.0
                })
            })
            .collect()
    }
}

impl<P> BarrierFunction<P::State, P::Control> for LearnedBarrier<P>
where
    P: Plant,
    P::State: FlatState,
    P::Control: ControlVector,
{
    fn value(&self, x: &P::State) -> f64 {
        self.conservative(&x.to_flat())[0]
    }

    fn delta(&self, x: &P::State, u: &P::Control) -> f64 {
        let (v, deltas) = self.value_and_deltas(x, std::slice::from_ref(u));
        let _ = v;
        deltas[0]
    }

    fn value_multi(&self, states: &[P::State]) -> Vec<f64> {
        let dim = P::State::DIM;
        let mut raws = Vec::with_capacity(states.len() * dim);
        for s in states {
            raws.extend_from_slice(&s.to_flat());
        }
        self.conservative(&raws)
    }

    fn value_and_deltas(&self, x: &P::State, actions: &[P::Control]) -> (f64, Vec<f64>) {
        self.value_and_deltas_multi(std::slice::from_ref(x), actions)
            .pop()
            .unwrap()
    }

    fn value_and_deltas_multi(
        &self,
        states: &[P::State],
        actions: &[P::Control],
    ) -> Vec<(f64, Vec<f64>)> {
        let n = states.len();
        let k = actions.len();
        let dim = P::State::DIM;
        if n == 0 {
            return Vec::new();
        }
        match &self.mode {
            DeltaMode::Hybrid { plant } => {
                // One batched evaluation over current plus candidate next
                // states: rows are [x_0, f(x_0,u_1..u_k), x_1, ...].
                let mut raws = Vec::with_capacity(n * (1 + k) * dim);
                for x in states {
                    raws.extend_from_slice(&x.to_flat());
                    for u in actions {
                        raws.extend_from_slice(&plant.step(x, u).to_flat());
                    }
                }
                let vals = self.conservative(&raws);
                (0..n)
                    .map(|i| {
                        let base = i * (1 + k);
                        let v = vals[base];
                        let deltas = (0..k).map(|j| vals[base + 1 + j] - v).collect();
                        (v, deltas)
                    })
                    .collect()
            }
            DeltaMode::Surrogate {
                delta_model,
                actions: set,
            } => {
                let idx = Self::action_indices(set, actions);
                let mut raws = Vec::with_capacity(n * dim);
                for x in states {
                    raws.extend_from_slice(&x.to_flat());
                }
                let values = self.conservative(&raws);
                // Surrogate rows: each state repeated per action.
                let mut g_raws = Vec::with_capacity(n * k * dim);
                let mut g_actions = Vec::with_capacity(n * k);
                for x in states {
                    let flat = x.to_flat();
                    for &a in &idx {
                        g_raws.extend_from_slice(&flat);
                        g_actions.push(a);
                    }
                }
                let g = delta_model.conservative_rows(
                    &g_raws,
                    Some(&g_actions),
                    self.mc_samples,
                    self.n_sigma,
                );
                (0..n)
                    .map(|i| {
                        let v = values[i];
                        let deltas = (0..k).map(|j| g[i * k + j] - v).collect();
                        (v, deltas)
                    })
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DoubleIntegratorPlant, DoubleIntegratorState};
    use crate::learning::mlp::{AngleMode, InputEncoder, MlpRegressor};

    fn di_encoder(action_count: usize) -> InputEncoder {
        InputEncoder::new(
            vec![-3.0, -3.0],
            vec![3.0, 3.0],
            vec![],
            AngleMode::Raw,
            action_count,
        )
        .unwrap()
    }

    fn di_barrier(dropout: f64, n_sigma: f64) -> LearnedBarrier<DoubleIntegratorPlant> {
        let model = MlpRegressor::new_random(di_encoder(0), &[16], dropout, 5);
        LearnedBarrier::hybrid(model, DoubleIntegratorPlant::new(0.1), n_sigma, 8).unwrap()
    }

    #[test]
    fn zero_sigma_zero_dropout_matches_deterministic_network() {
        let model = MlpRegressor::new_random(di_encoder(0), &[16], 0.0, 5);
        let expected = model.predict(&[0.5, -1.0], None);
        let h = LearnedBarrier::hybrid(model, DoubleIntegratorPlant::new(0.1), 0.0, 8).unwrap();
        assert_eq!(h.value(&DoubleIntegratorState::new(0.5, -1.0)), expected);
    }

    #[test]
    fn value_never_increases_with_n_sigma() {
        let x = DoubleIntegratorState::new(0.4, 0.2);
        let v0 = di_barrier(0.5, 0.0).value(&x);
        let v3 = di_barrier(0.5, 3.0).value(&x);
        assert!(v3 <= v0);
    }

    #[test]
    fn hybrid_delta_is_exact_one_step_difference() {
        let h = di_barrier(0.5, 1.0);
        let plant = DoubleIntegratorPlant::new(0.1);
        let x = DoubleIntegratorState::new(1.0, -0.5);
        let u = 2.0;
        let d = h.delta(&x, &u);
        let expected = h.value(&plant.step(&x, &u)) - h.value(&x);
        assert!((d - expected).abs() < 1e-12);
    }

    #[test]
    fn batched_and_single_evaluations_agree() {
        let h = di_barrier(0.5, 2.0);
        let states: Vec<DoubleIntegratorState> = (0..5)
            .map(|i| DoubleIntegratorState::new(i as f64 * 0.3 - 0.7, 0.1 * i as f64))
            .collect();
        let actions = [0.0, 1.0, 2.0];
        let multi = h.value_and_deltas_multi(&states, &actions);
        for (x, got) in states.iter().zip(multi.iter()) {
            assert_eq!(got.0, h.value(x));
            for (j, u) in actions.iter().enumerate() {
                assert_eq!(got.1[j], h.delta(x, u));
            }
        }
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        let wrong = MlpRegressor::new_random(
            InputEncoder::new(vec![-1.0; 3], vec![1.0; 3], vec![], AngleMode::Raw, 0).unwrap(),
            &[8],
            0.0,
            1,
        );
        assert!(LearnedBarrier::<DoubleIntegratorPlant>::hybrid(
            wrong,
            DoubleIntegratorPlant::new(0.1),
            0.0,
            4
        )
        .is_err());

        let value = MlpRegressor::new_random(di_encoder(0), &[8], 0.0, 1);
        let surrogate = MlpRegressor::new_random(di_encoder(2), &[8], 0.0, 1);
        let actions = ActionSet::new(vec![0.0, 1.0, 2.0]).unwrap();
        assert!(LearnedBarrier::<DoubleIntegratorPlant>::model_free(
            value, surrogate, actions, 0.0, 4
        )
        .is_err());
    }
}
