//! Barrier functions built from evasive-maneuver rollouts, the
//! discrete-action safety filter, and max composition.
//!
//! A barrier function `h` certifies a safe set `{x : h(x) >= 0}`. The
//! exact construction rolls the plant forward under a fixed evasive
//! maneuver and takes the worst safety margin seen along the way; the
//! one-step change `Δh(x, u) = h(f(x, u)) - h(x)` then defines which
//! controls are admissible at a state: `Δh(x, u) + λ·h(x) >= 0`.
//! The safety filter projects a nominal control onto the admissible
//! subset of a finite action set by enumeration.

use crate::dynamics::{ActionSet, ControlBounds, ControlInput, ControlVector, JointState, Plant, VehicleControl};
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Safety functions
// ---------------------------------------------------------------------------

/// A pointwise safety margin: the system is instantaneously safe at `x`
/// iff `rho(x) >= 0`.
pub trait SafetyFunction<S> {
    fn rho(&self, x: &S) -> f64;
}

impl<S, T: SafetyFunction<S> + ?Sized> SafetyFunction<S> for &T {
    fn rho(&self, x: &S) -> f64 {
        (**self).rho(x)
    }
}

/// Clipped inter-vehicle distance margin `min(clip, d12(x) - ds)`.
///
/// `ds` is the required separation; distances are full 3-D. The upper
/// clip bounds the target range for regression and does not change the
/// zero level set as long as `clip > 0`.
#[derive(Debug, Clone, Copy)]
pub struct SeparationMargin {
    pub ds: f64,
    pub clip: Option<f64>,
}

impl SeparationMargin {
    pub fn new(ds: f64, clip: Option<f64>) -> Result<Self> {
        if !(ds > 0.0) {
            return Err(Error::InvalidConfig(format!("ds must be > 0, got {ds}")));
        }
        if let Some(c) = clip {
            if !(c > 0.0) {
                return Err(Error::InvalidConfig(format!("clip must be > 0, got {c}")));
            }
        }
        Ok(Self { ds, clip })
    }
}

impl SafetyFunction<JointState> for SeparationMargin {
    fn rho(&self, x: &JointState) -> f64 {
        let margin = x.separation() - self.ds;
        match self.clip {
            Some(c) => c.min(margin),
            None => margin,
        }
    }
}

/// Adapter turning a closure into a [`SafetyFunction`].
#[derive(Debug, Clone, Copy)]
pub struct FnSafety<F>(pub F);

impl<S, F: Fn(&S) -> f64> SafetyFunction<S> for FnSafety<F> {
    fn rho(&self, x: &S) -> f64 {
        (self.0)(x)
    }
}

// ---------------------------------------------------------------------------
// Evasive maneuvers
// ---------------------------------------------------------------------------

/// A total state-feedback policy used to construct barrier functions.
/// Implementations must return bounds-satisfying controls for every state.
pub trait Maneuver<S, C> {
    fn control(&self, x: &S) -> C;

    /// Control plus its action-set index when the maneuver selects from a
    /// finite menu. Used by dataset generation to label one-step samples.
    fn control_with_index(&self, x: &S) -> (C, Option<usize>) {
        (self.control(x), None)
    }
}

impl<S, C, T: Maneuver<S, C> + ?Sized> Maneuver<S, C> for &T {
    fn control(&self, x: &S) -> C {
        (**self).control(x)
    }
    fn control_with_index(&self, x: &S) -> (C, Option<usize>) {
        (**self).control_with_index(x)
    }
}

/// Maneuver applying the same control at every state.
#[derive(Debug, Clone)]
pub struct ConstantManeuver<C: Clone>(pub C);

impl<S, C: Clone> Maneuver<S, C> for ConstantManeuver<C> {
    fn control(&self, _x: &S) -> C {
        self.0.clone()
    }
}

/// Adapter turning a closure into a [`Maneuver`].
#[derive(Clone)]
pub struct FnManeuver<F>(pub F);

impl<S, C, F: Fn(&S) -> C> Maneuver<S, C> for FnManeuver<F> {
    fn control(&self, x: &S) -> C {
        (self.0)(x)
    }
}

/// Both vehicles hold heading: constant `(v1, 0, ζ1, v2, 0, ζ2)`.
pub fn gamma_straight(
    v1: f64,
    v2: f64,
    zeta1: f64,
    zeta2: f64,
    bounds: &ControlBounds,
) -> Result<ConstantManeuver<ControlInput>> {
    let u = ControlInput::new(
        VehicleControl::new(v1, 0.0, zeta1),
        VehicleControl::new(v2, 0.0, zeta2),
    );
    bounds.check(&u)?;
    Ok(ConstantManeuver(u))
}

/// Both vehicles turn at the same rate, the first at a speed scaled by
/// `eta`: constant `(η·v, ω, 0, v, ω, 0)` with `0 < η <= 1`.
pub fn gamma_turn(
    eta: f64,
    v: f64,
    omega: f64,
    bounds: &ControlBounds,
) -> Result<ConstantManeuver<ControlInput>> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::BoundsViolation(format!(
            "eta must be in (0, 1], got {eta}"
        )));
    }
    let u = ControlInput::new(
        VehicleControl::new(eta * v, omega, 0.0),
        VehicleControl::new(v, omega, 0.0),
    );
    bounds.check(&u)?;
    Ok(ConstantManeuver(u))
}

// ---------------------------------------------------------------------------
// Barrier functions
// ---------------------------------------------------------------------------

/// A barrier function with its one-step change.
///
/// For exact rollout backings `delta(x, u) = value(f(x, u)) - value(x)`
/// identically; learned backings substitute regressor predictions. The
/// `*_multi` methods exist so that batched backings (neural models) can
/// amortize evaluation across states; results must not depend on how
/// calls are batched.
pub trait BarrierFunction<S, C> {
    fn value(&self, x: &S) -> f64;

    fn delta(&self, x: &S, u: &C) -> f64;

    /// Barrier value at `x` together with `Δh(x, u)` for each action.
    fn value_and_deltas(&self, x: &S, actions: &[C]) -> (f64, Vec<f64>) {
        let v = self.value(x);
        (v, actions.iter().map(|u| self.delta(x, u)).collect())
    }

    /// Batched [`BarrierFunction::value`].
    fn value_multi(&self, states: &[S]) -> Vec<f64> {
        states.iter().map(|x| self.value(x)).collect()
    }

    /// Batched [`BarrierFunction::value_and_deltas`] over many states with
    /// a shared action set.
    fn value_and_deltas_multi(&self, states: &[S], actions: &[C]) -> Vec<(f64, Vec<f64>)> {
        states
            .iter()
            .map(|x| self.value_and_deltas(x, actions))
            .collect()
    }
}

macro_rules! forward_barrier_impl {
    () => {
        fn value(&self, x: &S) -> f64 {
            (**self).value(x)
        }
        fn delta(&self, x: &S, u: &C) -> f64 {
            (**self).delta(x, u)
        }
        fn value_and_deltas(&self, x: &S, actions: &[C]) -> (f64, Vec<f64>) {
            (**self).value_and_deltas(x, actions)
        }
        fn value_multi(&self, states: &[S]) -> Vec<f64> {
            (**self).value_multi(states)
        }
        fn value_and_deltas_multi(&self, states: &[S], actions: &[C]) -> Vec<(f64, Vec<f64>)> {
            (**self).value_and_deltas_multi(states, actions)
        }
    };
}

impl<S, C, T: BarrierFunction<S, C> + ?Sized> BarrierFunction<S, C> for &T {
    forward_barrier_impl!();
}

impl<S, C, T: BarrierFunction<S, C> + ?Sized> BarrierFunction<S, C> for Box<T> {
    forward_barrier_impl!();
}

impl<S, C, T: BarrierFunction<S, C> + ?Sized> BarrierFunction<S, C> for std::sync::Arc<T> {
    forward_barrier_impl!();
}

/// Barrier functions usable across worker threads.
pub type DynBarrier<S, C> = dyn BarrierFunction<S, C> + Send + Sync;

/// Worst-case safety margin along a finite rollout under an evasive
/// maneuver: `min over k = 0..=horizon of rho(x_k)` with
/// `x_{k+1} = f(x_k, γ(x_k))`.
pub fn rollout_barrier<P, M, R>(
    plant: &P,
    x0: &P::State,
    gamma: &M,
    rho: &R,
    horizon: usize,
) -> f64
where
    P: Plant,
    M: Maneuver<P::State, P::Control> + ?Sized,
    R: SafetyFunction<P::State> + ?Sized,
{
    assert!(horizon >= 1, "rollout horizon must be at least 1");
    let mut x = x0.clone();
    let mut worst = rho.rho(&x);
    for _ in 0..horizon {
        let u = gamma.control(&x);
        x = plant.step(&x, &u);
        worst = worst.min(rho.rho(&x));
    }
    worst
}

/// Exact barrier function backed by maneuver rollouts of a plant.
#[derive(Debug, Clone)]
pub struct RolloutBarrier<P, M, R> {
    pub plant: P,
    pub gamma: M,
    pub rho: R,
    pub horizon: usize,
}

impl<P, M, R> RolloutBarrier<P, M, R>
where
    P: Plant,
    M: Maneuver<P::State, P::Control>,
    R: SafetyFunction<P::State>,
{
    pub fn new(plant: P, gamma: M, rho: R, horizon: usize) -> Self {
        assert!(horizon >= 1, "rollout horizon must be at least 1");
        Self {
            plant,
            gamma,
            rho,
            horizon,
        }
    }
}

impl<P, M, R> BarrierFunction<P::State, P::Control> for RolloutBarrier<P, M, R>
where
    P: Plant,
    M: Maneuver<P::State, P::Control>,
    R: SafetyFunction<P::State>,
{
    fn value(&self, x: &P::State) -> f64 {
        rollout_barrier(&self.plant, x, &self.gamma, &self.rho, self.horizon)
    }

    fn delta(&self, x: &P::State, u: &P::Control) -> f64 {
        self.value(&self.plant.step(x, u)) - self.value(x)
    }

    fn value_and_deltas(&self, x: &P::State, actions: &[P::Control]) -> (f64, Vec<f64>) {
        let v = self.value(x);
        let deltas = actions
            .iter()
            .map(|u| self.value(&self.plant.step(x, u)) - v)
            .collect();
        (v, deltas)
    }
}

/// Pointwise maximum of two barrier functions.
///
/// The composed one-step change is evaluated consistently with the
/// components: `Δh3(x,u) = max over next-state values - max over current
/// values`, where each next-state value is `value(x) + delta(x, u)` of
/// the component (exact for rollout backings).
#[derive(Debug, Clone)]
pub struct MaxBarrier<A, B> {
    pub first: A,
    pub second: B,
}

/// Compose two barrier functions by pointwise maximum.
pub fn max_compose<A, B>(first: A, second: B) -> MaxBarrier<A, B> {
    MaxBarrier { first, second }
}

impl<S, C, A, B> BarrierFunction<S, C> for MaxBarrier<A, B>
where
    A: BarrierFunction<S, C>,
    B: BarrierFunction<S, C>,
{
    fn value(&self, x: &S) -> f64 {
        self.first.value(x).max(self.second.value(x))
    }

    fn delta(&self, x: &S, u: &C) -> f64 {
        let va = self.first.value(x);
        let vb = self.second.value(x);
        let next = (va + self.first.delta(x, u)).max(vb + self.second.delta(x, u));
        next - va.max(vb)
    }

    fn value_and_deltas(&self, x: &S, actions: &[C]) -> (f64, Vec<f64>) {
        let (va, da) = self.first.value_and_deltas(x, actions);
        let (vb, db) = self.second.value_and_deltas(x, actions);
        let v = va.max(vb);
        let deltas = da
            .iter()
            .zip(db.iter())
            .map(|(a, b)| (va + a).max(vb + b) - v)
            .collect();
        (v, deltas)
    }

    fn value_multi(&self, states: &[S]) -> Vec<f64> {
        let a = self.first.value_multi(states);
        let b = self.second.value_multi(states);
        a.into_iter().zip(b).map(|(x, y)| x.max(y)).collect()
    }

    fn value_and_deltas_multi(&self, states: &[S], actions: &[C]) -> Vec<(f64, Vec<f64>)> {
        let a = self.first.value_and_deltas_multi(states, actions);
        let b = self.second.value_and_deltas_multi(states, actions);
        a.into_iter()
            .zip(b)
            .map(|((va, da), (vb, db))| {
                let v = va.max(vb);
                let deltas = da
                    .iter()
                    .zip(db.iter())
                    .map(|(x, y)| (va + x).max(vb + y) - v)
                    .collect();
                (v, deltas)
            })
            .collect()
    }
}

/// Whether `u` keeps the barrier inequality at `x`:
/// `Δh(x, u) + λ·h(x) >= 0`.
pub fn admissible<S, C, H>(h: &H, x: &S, u: &C, lambda: f64) -> bool
where
    H: BarrierFunction<S, C> + ?Sized,
{
    h.delta(x, u) + lambda * h.value(x) >= 0.0
}

// ---------------------------------------------------------------------------
// Safety filter
// ---------------------------------------------------------------------------

/// What the filter does when no action in the set is admissible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfeasiblePolicy {
    /// Apply the action maximizing `Δh(x, u) + λ·h(x)` (slack relaxation).
    MaxSlack,
    /// Keep the nominal control.
    HoldNominal,
}

/// Safety-filter parameters: barrier decay rate, the action menu, and the
/// infeasibility fallback.
#[derive(Debug, Clone)]
pub struct FilterConfig<C> {
    pub lambda: f64,
    pub actions: ActionSet<C>,
    pub fallback: InfeasiblePolicy,
}

impl<C> FilterConfig<C> {
    pub fn new(lambda: f64, actions: ActionSet<C>) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be in [0, 1], got {lambda}"
            )));
        }
        Ok(Self {
            lambda,
            actions,
            fallback: InfeasiblePolicy::MaxSlack,
        })
    }

    pub fn with_fallback(mut self, fallback: InfeasiblePolicy) -> Self {
        self.fallback = fallback;
        self
    }
}

/// Outcome of one safety-filter evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterDecision<C> {
    pub control: C,
    /// Index of the chosen action in the action set.
    pub index: usize,
    /// True when the chosen control differs from the nominal one.
    pub overridden: bool,
    /// False when no action was admissible and the fallback applied.
    pub feasible: bool,
}

impl<C: ControlVector> FilterConfig<C> {
    /// Resolve a decision from precomputed scores. `value` is `h(x)` and
    /// `deltas[i]` is `Δh(x, actions[i])`.
    ///
    /// Among admissible actions the one closest to `u_nom` in squared
    /// Euclidean distance wins; ties go to the smallest action index, so
    /// the decision is a deterministic function of its inputs.
    pub fn select(&self, value: f64, deltas: &[f64], u_nom: &C) -> FilterDecision<C> {
        debug_assert_eq!(deltas.len(), self.actions.len());
        let mut best: Option<(usize, f64)> = None;
        let mut best_slack: (usize, f64) = (0, f64::NEG_INFINITY);
        for (i, u) in self.actions.actions().iter().enumerate() {
            let slack = deltas[i] + self.lambda * value;
            if slack > best_slack.1 {
                best_slack = (i, slack);
            }
            if slack >= 0.0 {
                let d = u.dist_sq(u_nom);
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((i, d));
                }
            }
        }
        match best {
            Some((i, _)) => {
                let control = self.actions.get(i).clone();
                let overridden = control != *u_nom;
                FilterDecision {
                    control,
                    index: i,
                    overridden,
                    feasible: true,
                }
            }
            None => match self.fallback {
                InfeasiblePolicy::MaxSlack => {
                    let control = self.actions.get(best_slack.0).clone();
                    let overridden = control != *u_nom;
                    FilterDecision {
                        control,
                        index: best_slack.0,
                        overridden,
                        feasible: false,
                    }
                }
                InfeasiblePolicy::HoldNominal => FilterDecision {
                    control: u_nom.clone(),
                    index: self
                        .actions
                        .index_of(u_nom)
                        .unwrap_or(best_slack.0),
                    overridden: false,
                    feasible: false,
                },
            },
        }
    }
}

/// Project a nominal control onto the admissible subset of the action
/// set: the admissible action minimizing `‖u - u_nom‖²`. When nothing is
/// admissible the configured fallback applies and `feasible` is false.
pub fn safety_filter<S, C, H>(
    h: &H,
    x: &S,
    u_nom: &C,
    cfg: &FilterConfig<C>,
) -> FilterDecision<C>
where
    C: ControlVector,
    H: BarrierFunction<S, C> + ?Sized,
{
    let (value, deltas) = h.value_and_deltas(x, cfg.actions.actions());
    cfg.select(value, &deltas, u_nom)
}

/// The safety filter viewed as a maneuver: at each state, filter the
/// nominal policy's control through the barrier. This is the policy used
/// to roll out expanded barrier functions.
#[derive(Debug, Clone)]
pub struct FilterManeuver<H, M, C> {
    pub barrier: H,
    pub nominal: M,
    pub config: FilterConfig<C>,
}

impl<H, M, C> FilterManeuver<H, M, C> {
    pub fn new(barrier: H, nominal: M, config: FilterConfig<C>) -> Self {
        Self {
            barrier,
            nominal,
            config,
        }
    }
}

impl<S, C, H, M> Maneuver<S, C> for FilterManeuver<H, M, C>
where
    C: ControlVector,
    H: BarrierFunction<S, C>,
    M: Maneuver<S, C>,
{
    fn control(&self, x: &S) -> C {
        self.control_with_index(x).0
    }

    fn control_with_index(&self, x: &S) -> (C, Option<usize>) {
        let u_nom = self.nominal.control(x);
        let decision = safety_filter(&self.barrier, x, &u_nom, &self.config);
        (decision.control, Some(decision.index))
    }
}
