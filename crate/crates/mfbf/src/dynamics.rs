//! Deterministic discrete-time plant models.
//!
//! Two plants live here behind the common [`Plant`] stepping interface:
//! a pair of fixed-wing vehicles with unicycle-plus-altitude kinematics,
//! and a scalar double integrator used as a low-dimensional test system.
//! Everything is a pure function of immutable inputs.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Wrap an angle to the half-open interval (−π, π].
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let w = theta.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w - two_pi
    } else {
        w
    }
}

/// A black-box discrete-time plant `x_{k+1} = f(x_k, u_k)`.
///
/// `step` assumes the control is admissible for the plant; bounds are
/// enforced where controls are constructed (action sets, maneuvers) and
/// by the checked entry points [`step_fw_uav`] / [`FwUavPlant::step_checked`].
pub trait Plant {
    type State: Clone;
    type Control: Clone;

    fn step(&self, x: &Self::State, u: &Self::Control) -> Self::State;
}

/// States that serialize to/from a flat `f64` vector in a fixed order.
pub trait FlatState: Clone {
    const DIM: usize;

    fn to_flat(&self) -> Vec<f64>;
    fn from_flat(v: &[f64]) -> Self;
}

/// Controls with a Euclidean distance, used by the safety filter's
/// nearest-action projection.
pub trait ControlVector: Clone + PartialEq {
    fn dist_sq(&self, other: &Self) -> f64;
}

impl ControlVector for f64 {
    fn dist_sq(&self, other: &Self) -> f64 {
        (self - other) * (self - other)
    }
}

// ---------------------------------------------------------------------------
// Fixed-wing pair
// ---------------------------------------------------------------------------

/// Pose of one fixed-wing vehicle: planar position, heading, altitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// x position, meters.
    pub px: f64,
    /// y position, meters.
    pub py: f64,
    /// Heading, radians, wrapped to (−π, π].
    pub theta: f64,
    /// Altitude, meters.
    pub pz: f64,
}

impl VehicleState {
    pub fn new(px: f64, py: f64, theta: f64, pz: f64) -> Self {
        Self {
            px,
            py,
            theta: wrap_angle(theta),
            pz,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.px.is_finite() && self.py.is_finite() && self.theta.is_finite() && self.pz.is_finite()
    }
}

/// Joint state of the two-vehicle system.
///
/// Flattens to `(x1, y1, θ1, z1, x2, y2, θ2, z2)`; this ordering is the
/// serialization contract shared with datasets and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub vehicles: [VehicleState; 2],
}

impl JointState {
    pub fn new(v1: VehicleState, v2: VehicleState) -> Self {
        Self { vehicles: [v1, v2] }
    }

    /// 3-D Euclidean distance between the two vehicles.
    pub fn separation(&self) -> f64 {
        let [a, b] = &self.vehicles;
        let dx = a.px - b.px;
        let dy = a.py - b.py;
        let dz = a.pz - b.pz;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

impl FlatState for JointState {
    const DIM: usize = 8;

    fn to_flat(&self) -> Vec<f64> {
        let [a, b] = &self.vehicles;
        vec![a.px, a.py, a.theta, a.pz, b.px, b.py, b.theta, b.pz]
    }

    fn from_flat(v: &[f64]) -> Self {
        assert_eq!(v.len(), Self::DIM, "joint state needs 8 components");
        Self::new(
            VehicleState::new(v[0], v[1], v[2], v[3]),
            VehicleState::new(v[4], v[5], v[6], v[7]),
        )
    }
}

/// Control for one vehicle: translational, rotational, vertical velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleControl {
    /// Forward speed, m/s.
    pub v: f64,
    /// Turn rate, rad/s.
    pub omega: f64,
    /// Climb rate, m/s.
    pub zeta: f64,
}

impl VehicleControl {
    pub fn new(v: f64, omega: f64, zeta: f64) -> Self {
        Self { v, omega, zeta }
    }
}

/// Joint control of both vehicles; flat order `(v1, ω1, ζ1, v2, ω2, ζ2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub per_vehicle: [VehicleControl; 2],
}

impl ControlInput {
    pub fn new(c1: VehicleControl, c2: VehicleControl) -> Self {
        Self {
            per_vehicle: [c1, c2],
        }
    }

    pub fn to_flat(&self) -> [f64; 6] {
        let [a, b] = &self.per_vehicle;
        [a.v, a.omega, a.zeta, b.v, b.omega, b.zeta]
    }

    pub fn from_flat(v: &[f64; 6]) -> Self {
        Self::new(
            VehicleControl::new(v[0], v[1], v[2]),
            VehicleControl::new(v[3], v[4], v[5]),
        )
    }
}

impl ControlVector for ControlInput {
    fn dist_sq(&self, other: &Self) -> f64 {
        let a = self.to_flat();
        let b = other.to_flat();
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    }
}

/// Per-vehicle control bounds. `v_min` must be positive: a fixed-wing
/// vehicle cannot hover.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    pub v_min: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub zeta_max: f64,
}

impl Default for ControlBounds {
    fn default() -> Self {
        Self {
            v_min: 10.0,
            v_max: 20.0,
            omega_max: 12.0_f64.to_radians(),
            zeta_max: 5.0,
        }
    }
}

impl ControlBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_min > 0.0 && self.v_max >= self.v_min) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < v_min <= v_max, got [{}, {}]",
                self.v_min, self.v_max
            )));
        }
        if self.omega_max < 0.0 || self.zeta_max < 0.0 {
            return Err(Error::InvalidConfig(
                "omega_max and zeta_max must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Check a single vehicle's control against the bounds.
    pub fn check_vehicle(&self, c: &VehicleControl) -> Result<()> {
        if c.v < self.v_min || c.v > self.v_max {
            return Err(Error::BoundsViolation(format!(
                "v = {} outside [{}, {}]",
                c.v, self.v_min, self.v_max
            )));
        }
        if c.omega.abs() > self.omega_max {
            return Err(Error::BoundsViolation(format!(
                "|omega| = {} exceeds {}",
                c.omega.abs(),
                self.omega_max
            )));
        }
        if c.zeta.abs() > self.zeta_max {
            return Err(Error::BoundsViolation(format!(
                "|zeta| = {} exceeds {}",
                c.zeta.abs(),
                self.zeta_max
            )));
        }
        Ok(())
    }

    pub fn check(&self, u: &ControlInput) -> Result<()> {
        for c in &u.per_vehicle {
            self.check_vehicle(c)?;
        }
        Ok(())
    }
}

/// Plant parameters: step size and control bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// Step size, seconds.
    pub dt: f64,
    pub bounds: ControlBounds,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            bounds: ControlBounds::default(),
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt must be > 0, got {}", self.dt)));
        }
        self.bounds.validate()
    }
}

/// Two fixed-wing vehicles, each a unicycle with altitude rate.
#[derive(Debug, Clone, Copy)]
pub struct FwUavPlant {
    pub params: PlantParams,
}

impl FwUavPlant {
    pub fn new(params: PlantParams) -> Self {
        Self { params }
    }

    fn step_vehicle(&self, x: &VehicleState, c: &VehicleControl) -> VehicleState {
        let dt = self.params.dt;
        VehicleState {
            px: x.px + c.v * x.theta.cos() * dt,
            py: x.py + c.v * x.theta.sin() * dt,
            theta: wrap_angle(x.theta + c.omega * dt),
            pz: x.pz + c.zeta * dt,
        }
    }

    /// Step with bounds validation; out-of-bounds controls are rejected,
    /// never clamped.
    pub fn step_checked(&self, x: &JointState, u: &ControlInput) -> Result<JointState> {
        self.params.bounds.check(u)?;
        Ok(self.step(x, u))
    }
}

impl Plant for FwUavPlant {
    type State = JointState;
    type Control = ControlInput;

    fn step(&self, x: &JointState, u: &ControlInput) -> JointState {
        debug_assert!(self.params.bounds.check(u).is_ok(), "unchecked out-of-bounds control");
        JointState {
            vehicles: [
                self.step_vehicle(&x.vehicles[0], &u.per_vehicle[0]),
                self.step_vehicle(&x.vehicles[1], &u.per_vehicle[1]),
            ],
        }
    }
}

/// One step of the two-vehicle plant with bounds checking.
pub fn step_fw_uav(x: &JointState, u: &ControlInput, p: &PlantParams) -> Result<JointState> {
    FwUavPlant::new(*p).step_checked(x, u)
}

// ---------------------------------------------------------------------------
// Double integrator
// ---------------------------------------------------------------------------

/// Scalar double-integrator state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubleIntegratorState {
    pub position: f64,
    pub velocity: f64,
}

impl DoubleIntegratorState {
    pub fn new(position: f64, velocity: f64) -> Self {
        Self { position, velocity }
    }
}

impl FlatState for DoubleIntegratorState {
    const DIM: usize = 2;

    fn to_flat(&self) -> Vec<f64> {
        vec![self.position, self.velocity]
    }

    fn from_flat(v: &[f64]) -> Self {
        assert_eq!(v.len(), Self::DIM, "double integrator state needs 2 components");
        Self::new(v[0], v[1])
    }
}

/// Discrete double integrator: position advances by the pre-step velocity,
/// velocity by the commanded acceleration.
#[derive(Debug, Clone, Copy)]
pub struct DoubleIntegratorPlant {
    pub dt: f64,
}

impl DoubleIntegratorPlant {
    pub fn new(dt: f64) -> Self {
        Self { dt }
    }
}

impl Plant for DoubleIntegratorPlant {
    type State = DoubleIntegratorState;
    type Control = f64;

    fn step(&self, x: &DoubleIntegratorState, u: &f64) -> DoubleIntegratorState {
        DoubleIntegratorState {
            position: x.position + self.dt * x.velocity,
            velocity: x.velocity + self.dt * u,
        }
    }
}

/// One step of the double integrator.
pub fn step_double_integrator(
    x: &DoubleIntegratorState,
    u: f64,
    dt: f64,
) -> DoubleIntegratorState {
    DoubleIntegratorPlant::new(dt).step(x, &u)
}

// ---------------------------------------------------------------------------
// Action sets
// ---------------------------------------------------------------------------

/// A finite, ordered set of admissible controls. The enumeration order is
/// part of the contract: the safety filter breaks ties by smallest index,
/// and learned models identify actions by index.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSet<C> {
    actions: Vec<C>,
}

impl<C> ActionSet<C> {
    pub fn new(actions: Vec<C>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::EmptyActionSet);
        }
        Ok(Self { actions })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn actions(&self) -> &[C] {
        &self.actions
    }

    pub fn get(&self, idx: usize) -> &C {
        &self.actions[idx]
    }
}

impl<C: PartialEq> ActionSet<C> {
    /// Index of an action equal to `u`, if present.
    pub fn index_of(&self, u: &C) -> Option<usize> {
        self.actions.iter().position(|a| a == u)
    }
}

/// Per-vehicle action choices: a shared turn-rate menu with fixed speed
/// and climb rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionChoices {
    /// Turn-rate choices, rad/s, in enumeration order.
    pub omegas: Vec<f64>,
    pub v: f64,
    pub zeta: f64,
}

impl ActionChoices {
    pub fn new(omegas: Vec<f64>, v: f64, zeta: f64) -> Self {
        Self { omegas, v, zeta }
    }

    pub fn vehicle_control(&self, omega_idx: usize) -> VehicleControl {
        VehicleControl::new(self.v, self.omegas[omega_idx], self.zeta)
    }

    /// Joint index of a pair of per-vehicle choices, consistent with
    /// [`make_action_set`] enumeration (vehicle 1 on the outer loop).
    pub fn joint_index(&self, i1: usize, i2: usize) -> usize {
        i1 * self.omegas.len() + i2
    }
}

/// Build the joint action set as the Cartesian product of per-vehicle
/// turn-rate choices, with speed and climb rate held fixed. Vehicle 1
/// iterates on the outer loop, so choices `{a, b, c}` enumerate as
/// `(a,a), (a,b), (a,c), (b,a), ...`.
pub fn make_action_set(
    omega_choices: &[f64],
    v_fixed: f64,
    zeta_fixed: f64,
    bounds: &ControlBounds,
) -> Result<ActionSet<ControlInput>> {
    if omega_choices.is_empty() {
        return Err(Error::EmptyActionSet);
    }
    for &w in omega_choices {
        bounds.check_vehicle(&VehicleControl::new(v_fixed, w, zeta_fixed))?;
    }
    let mut actions = Vec::with_capacity(omega_choices.len() * omega_choices.len());
    for &w1 in omega_choices {
        for &w2 in omega_choices {
            actions.push(ControlInput::new(
                VehicleControl::new(v_fixed, w1, zeta_fixed),
                VehicleControl::new(v_fixed, w2, zeta_fixed),
            ));
        }
    }
    ActionSet::new(actions)
}
