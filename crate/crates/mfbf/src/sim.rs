//! Two-vehicle episode simulation: waypoint-following nominal control,
//! filtered episode rollouts, collision-rate evaluation with paired
//! starts, safe-set grids, and canned scenarios.

use crate::barrier::{DynBarrier, FilterConfig, SeparationMargin};
use crate::dynamics::{
    wrap_angle, ActionChoices, ControlInput, FwUavPlant, JointState, VehicleControl, VehicleState,
};
use crate::error::{Error, Result};
use crate::learning::{run_episodes, EpisodeOptions, RolloutPolicy, SamplerSpec};
use crate::seeds;
use rayon::prelude::*;
use std::io::{BufWriter, Write};
use std::path::Path;

/// A capture point for the waypoint controller. Capture tests planar
/// distance; altitude is carried for bookkeeping only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub capture_radius: f64,
}

impl Waypoint {
    pub fn new(x: f64, y: f64, z: f64, capture_radius: f64) -> Result<Self> {
        if !(capture_radius > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "capture radius must be > 0, got {capture_radius}"
            )));
        }
        Ok(Self {
            x,
            y,
            z,
            capture_radius,
        })
    }

    fn planar_distance(&self, v: &VehicleState) -> f64 {
        ((self.x - v.px).powi(2) + (self.y - v.py).powi(2)).sqrt()
    }
}

/// Pick the turn rate whose post-step heading leaves the smallest bearing
/// error toward the waypoint; speed and climb rate are fixed by the
/// action choices. Exact error ties break toward the larger (left) rate.
/// Returns the control and the index of the chosen rate.
pub fn waypoint_controller(
    x: &VehicleState,
    wp: &Waypoint,
    choices: &ActionChoices,
    dt: f64,
) -> Result<(VehicleControl, usize)> {
    if choices.omegas.is_empty() {
        return Err(Error::EmptyActionSet);
    }
    let desired = (wp.y - x.py).atan2(wp.x - x.px);
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, &w) in choices.omegas.iter().enumerate() {
        let residual = wrap_angle(desired - x.theta - w * dt).abs();
        let better = match best {
            None => true,
            Some((_, br, bw)) => residual < br || (residual == br && w > bw),
        };
        if better {
            best = Some((i, residual, w));
        }
    }
    let (idx, _, _) = best.unwrap();
    Ok((choices.vehicle_control(idx), idx))
}

/// How each vehicle's waypoint list is determined.
#[derive(Debug, Clone, PartialEq)]
pub enum WaypointScheme {
    /// Fixed per-vehicle lists.
    Fixed([Vec<Waypoint>; 2]),
    /// One waypoint per vehicle at the other vehicle's start position.
    OtherStart { capture_radius: f64 },
}

/// Waypoint-following nominal policy for the two-vehicle plant. Tracks
/// per-episode waypoint progress: a waypoint is consumed when the vehicle
/// is within its capture radius, and the last waypoint is held forever.
#[derive(Debug, Clone)]
pub struct WaypointPolicy {
    pub choices: ActionChoices,
    pub dt: f64,
    scheme: WaypointScheme,
    lists: [Vec<Waypoint>; 2],
    cursor: [usize; 2],
}

impl WaypointPolicy {
    pub fn new(choices: ActionChoices, dt: f64, scheme: WaypointScheme) -> Self {
        Self {
            choices,
            dt,
            scheme,
            lists: [Vec::new(), Vec::new()],
            cursor: [0, 0],
        }
    }

    fn current_waypoint(&mut self, vehicle: usize, v: &VehicleState) -> Waypoint {
        let list = &self.lists[vehicle];
        debug_assert!(!list.is_empty(), "waypoint list must not be empty");
        let mut i = self.cursor[vehicle];
        while i + 1 < list.len() && list[i].planar_distance(v) <= list[i].capture_radius {
            i += 1;
        }
        self.cursor[vehicle] = i;
        list[i]
    }
}

impl RolloutPolicy<JointState, ControlInput> for WaypointPolicy {
    fn begin_episode(&mut self, x0: &JointState) {
        self.cursor = [0, 0];
        self.lists = match &self.scheme {
            WaypointScheme::Fixed(lists) => lists.clone(),
            WaypointScheme::OtherStart { capture_radius } => {
                let mk = |v: &VehicleState| Waypoint {
                    x: v.px,
                    y: v.py,
                    z: v.pz,
                    capture_radius: *capture_radius,
                };
                [vec![mk(&x0.vehicles[1])], vec![mk(&x0.vehicles[0])]]
            }
        };
    }

    fn act(&mut self, x: &JointState) -> (ControlInput, Option<usize>) {
        let wp0 = self.current_waypoint(0, &x.vehicles[0]);
        let wp1 = self.current_waypoint(1, &x.vehicles[1]);
        let (c0, i0) = waypoint_controller(&x.vehicles[0], &wp0, &self.choices, self.dt)
            .expect("action choices validated at construction");
        let (c1, i1) = waypoint_controller(&x.vehicles[1], &wp1, &self.choices, self.dt)
            .expect("action choices validated at construction");
        (
            ControlInput::new(c0, c1),
            Some(self.choices.joint_index(i0, i1)),
        )
    }
}

/// Configuration for one episode.
#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    pub start: JointState,
    pub waypoints: [Vec<Waypoint>; 2],
    pub steps: usize,
    pub choices: ActionChoices,
    pub filter: FilterConfig<ControlInput>,
    /// Collision threshold for statistics.
    pub ds: f64,
    pub record_trajectory: bool,
}

/// Statistics from one episode.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub min_distance: f64,
    pub collided: bool,
    pub override_count: usize,
    pub infeasible_count: usize,
    pub trajectory: Option<Vec<JointState>>,
}

/// Run one episode: waypoint nominal control, filtered through the
/// barrier when one is given. `collided` holds exactly when the minimum
/// inter-vehicle distance dropped below `ds`.
pub fn run_episode(
    cfg: &EpisodeConfig,
    plant: &FwUavPlant,
    barrier: Option<&DynBarrier<JointState, ControlInput>>,
) -> Result<EpisodeResult> {
    if cfg.steps == 0 {
        return Err(Error::InvalidConfig("episode needs at least one step".into()));
    }
    if cfg.waypoints.iter().any(|l| l.is_empty()) {
        return Err(Error::InvalidConfig("each vehicle needs a waypoint".into()));
    }
    let margin = SeparationMargin::new(cfg.ds, None)?;
    let policy = WaypointPolicy::new(
        cfg.choices.clone(),
        plant.params.dt,
        WaypointScheme::Fixed(cfg.waypoints.clone()),
    );
    let mut opts = EpisodeOptions::new(cfg.steps);
    opts.record_trajectory = cfg.record_trajectory;
    let outcome = run_episodes(
        plant,
        &margin,
        std::slice::from_ref(&cfg.start),
        &policy,
        barrier.map(|h| (h, &cfg.filter)),
        &opts,
    )
    .pop()
    .unwrap();
    let min_distance = outcome.rho_min + cfg.ds;
    Ok(EpisodeResult {
        min_distance,
        collided: min_distance < cfg.ds,
        override_count: outcome.overridden_steps,
        infeasible_count: outcome.infeasible_steps,
        trajectory: outcome.trajectory,
    })
}

// ---------------------------------------------------------------------------
// Collision rates
// ---------------------------------------------------------------------------

/// Options for [`evaluate_collision_rates`].
#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub episodes: usize,
    pub steps: usize,
    pub choices: ActionChoices,
    pub filter: FilterConfig<ControlInput>,
    pub ds: f64,
    /// Start-state box and master seed for the shared candidate stream.
    pub sampler: SamplerSpec,
    pub capture_radius: f64,
    /// Candidate budget per accepted episode before giving up.
    pub max_reject_factor: usize,
}

/// One episode row of the summary CSV.
#[derive(Debug, Clone)]
pub struct EpisodeRow {
    pub seed: u64,
    pub min_distance: f64,
    pub collided: bool,
    pub override_count: usize,
    pub infeasible_count: usize,
}

/// Per-variant collision statistics.
#[derive(Debug, Clone)]
pub struct VariantReport {
    pub name: String,
    pub episodes: usize,
    pub collisions: usize,
    pub rate_pct: f64,
    pub wilson_lo_pct: f64,
    pub wilson_hi_pct: f64,
    pub override_steps: usize,
    pub infeasible_episodes: usize,
    pub rows: Vec<EpisodeRow>,
}

/// 95% Wilson score interval for `k` successes out of `n`.
pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959963984540054_f64;
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    // Guard rounding so the interval always contains the point estimate.
    (
        (center - half).max(0.0).min(p),
        (center + half).min(1.0).max(p),
    )
}

/// Compare barrier variants on identical episode starts.
///
/// Starts come from one shared candidate stream and are accepted only
/// where every barrier-backed variant is nonnegative, so each episode
/// index runs the same initial condition under every variant and all
/// variants start inside their safe sets.
pub fn evaluate_collision_rates(
    plant: &FwUavPlant,
    variants: &[(String, Option<&DynBarrier<JointState, ControlInput>>)],
    cfg: &EvalConfig,
) -> Result<Vec<VariantReport>> {
    if cfg.episodes == 0 {
        return Err(Error::InvalidConfig("need at least one episode".into()));
    }
    if variants.is_empty() {
        return Err(Error::InvalidConfig("need at least one variant".into()));
    }

    // Shared accepted starts.
    let mut starts: Vec<JointState> = Vec::with_capacity(cfg.episodes);
    let mut start_seeds: Vec<u64> = Vec::with_capacity(cfg.episodes);
    let budget = cfg.episodes.saturating_mul(cfg.max_reject_factor.max(1)) as u64;
    let batch = 256usize;
    let mut next_candidate = 0u64;
    while starts.len() < cfg.episodes {
        if next_candidate >= budget {
            return Err(Error::InvalidData(format!(
                "exhausted {budget} candidates finding nonnegative-barrier starts"
            )));
        }
        let upto = (next_candidate + batch as u64).min(budget);
        let candidates: Vec<JointState> = (next_candidate..upto)
            .map(|j| cfg.sampler.sample_state(j))
            .collect();
        let mut accept = vec![true; candidates.len()];
        for (_, barrier) in variants {
            if let Some(h) = barrier {
                for (a, v) in accept.iter_mut().zip(h.value_multi(&candidates)) {
                    *a &= v >= 0.0;
                }
            }
        }
        for (off, (cand, ok)) in candidates.iter().zip(accept).enumerate() {
            if ok && starts.len() < cfg.episodes {
                starts.push(*cand);
                start_seeds.push(seeds::derive(cfg.sampler.seed, next_candidate + off as u64));
            }
        }
        next_candidate = upto;
    }

    let margin = SeparationMargin::new(cfg.ds, None)?;
    let policy = WaypointPolicy::new(
        cfg.choices.clone(),
        plant.params.dt,
        WaypointScheme::OtherStart {
            capture_radius: cfg.capture_radius,
        },
    );
    let opts = EpisodeOptions::new(cfg.steps);

    let mut reports = Vec::with_capacity(variants.len());
    for (name, barrier) in variants {
        let outcomes = run_episodes(
            plant,
            &margin,
            &starts,
            &policy,
            barrier.as_ref().map(|h| (*h, &cfg.filter)),
            &opts,
        );
        let rows: Vec<EpisodeRow> = outcomes
            .iter()
            .zip(start_seeds.iter())
            .map(|(o, &seed)| EpisodeRow {
                seed,
                min_distance: o.rho_min + cfg.ds,
                collided: o.rho_min < 0.0,
                override_count: o.overridden_steps,
                infeasible_count: o.infeasible_steps,
            })
            .collect();
        let collisions = rows.iter().filter(|r| r.collided).count();
        let (lo, hi) = wilson_interval(collisions, rows.len());
        reports.push(VariantReport {
            name: name.clone(),
            episodes: rows.len(),
            collisions,
            rate_pct: 100.0 * collisions as f64 / rows.len() as f64,
            wilson_lo_pct: 100.0 * lo,
            wilson_hi_pct: 100.0 * hi,
            override_steps: rows.iter().map(|r| r.override_count).sum(),
            infeasible_episodes: rows.iter().filter(|r| r.infeasible_count > 0).count(),
            rows,
        });
    }
    Ok(reports)
}

/// Write per-episode rows as CSV.
pub fn write_episode_csv(path: &Path, rows: &[EpisodeRow]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "seed,min_distance,collided,override_count,infeasible_count")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.seed,
            r.min_distance,
            r.collided as u8,
            r.override_count,
            r.infeasible_count
        )?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Safe-set grids
// ---------------------------------------------------------------------------

/// Grid sweep of vehicle-2 positions against a fixed vehicle-1 pose.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub vehicle1: VehicleState,
    pub x_lo: f64,
    pub x_hi: f64,
    pub nx: usize,
    pub y_lo: f64,
    pub y_hi: f64,
    pub ny: usize,
    pub vehicle2_heading: f64,
    pub vehicle2_z: f64,
}

impl GridSpec {
    /// Default sweep: vehicle 1 at the origin heading +x, vehicle 2 over
    /// `[-200, 200]²` on an 81×81 grid at the given heading.
    pub fn standard(vehicle2_heading: f64) -> Self {
        Self {
            vehicle1: VehicleState::new(0.0, 0.0, 0.0, 0.0),
            x_lo: -200.0,
            x_hi: 200.0,
            nx: 81,
            y_lo: -200.0,
            y_hi: 200.0,
            ny: 81,
            vehicle2_heading,
            vehicle2_z: 0.0,
        }
    }

    /// The four canonical vehicle-2 headings: left, up, right, down.
    pub fn canonical_headings() -> [(&'static str, f64); 4] {
        use std::f64::consts::{FRAC_PI_2, PI};
        [
            ("left", PI),
            ("up", FRAC_PI_2),
            ("right", 0.0),
            ("down", -FRAC_PI_2),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::InvalidConfig(
                "grid needs at least one cell per axis".into(),
            ));
        }
        Ok(())
    }

    fn coord(lo: f64, hi: f64, n: usize, i: usize) -> f64 {
        if n <= 1 {
            lo
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx)
            .map(|i| Self::coord(self.x_lo, self.x_hi, self.nx, i))
            .collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        (0..self.ny)
            .map(|i| Self::coord(self.y_lo, self.y_hi, self.ny, i))
            .collect()
    }

    pub fn state_at(&self, x: f64, y: f64) -> JointState {
        JointState::new(
            self.vehicle1,
            VehicleState::new(x, y, self.vehicle2_heading, self.vehicle2_z),
        )
    }
}

/// Barrier values over a grid; `values` is row-major with y on the outer
/// axis, matching the CSV row order.
#[derive(Debug, Clone)]
pub struct GridResult {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<f64>,
}

impl GridResult {
    pub fn value_at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.xs.len() + ix]
    }

    pub fn unsafe_count(&self) -> usize {
        self.values.iter().filter(|v| **v < 0.0).count()
    }

    /// CSV rows `x,y,h,unsafe`, y-major.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "x,y,h,unsafe")?;
        for (iy, &y) in self.ys.iter().enumerate() {
            for (ix, &x) in self.xs.iter().enumerate() {
                let h = self.values[iy * self.xs.len() + ix];
                writeln!(w, "{x},{y},{h},{}", (h < 0.0) as u8)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluate a barrier over the grid. Cells are independent; evaluation
/// order never affects the result.
pub fn grid_unsafe_set(
    barrier: &DynBarrier<JointState, ControlInput>,
    spec: &GridSpec,
) -> Result<GridResult> {
    spec.validate()?;
    let xs = spec.xs();
    let ys = spec.ys();
    let states: Vec<JointState> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .map(|(x, y)| spec.state_at(x, y))
        .collect();
    let values: Vec<f64> = states
        .par_chunks(1024)
        .flat_map_iter(|chunk| barrier.value_multi(chunk))
        .collect();
    Ok(GridResult { xs, ys, values })
}

// ---------------------------------------------------------------------------
// Scenarios
// ---------------------------------------------------------------------------

/// Canned scenario setups.
///
/// - `head_on`: vehicles face each other `separation` meters apart with
///   waypoints at each other's start.
/// - `pass_left`: anti-parallel straight tracks with lateral gap
///   `separation`, the oncoming vehicle passing on the left; waypoints
///   far ahead keep the nominal flight straight.
/// - `pass_left_close`: `pass_left` pinned at a 100 m gap, inside the
///   window where the turn barrier overrides and the straight one does
///   not.
pub fn scenario(
    name: &str,
    separation: Option<f64>,
    choices: ActionChoices,
    filter: FilterConfig<ControlInput>,
    ds: f64,
    steps: usize,
    capture_radius: f64,
) -> Result<EpisodeConfig> {
    let wp = |x: f64, y: f64| Waypoint::new(x, y, 0.0, capture_radius);
    match name {
        "head_on" => {
            let sep = separation.unwrap_or(600.0);
            let start = JointState::new(
                VehicleState::new(-sep / 2.0, 0.0, 0.0, 0.0),
                VehicleState::new(sep / 2.0, 0.0, std::f64::consts::PI, 0.0),
            );
            Ok(EpisodeConfig {
                start,
                waypoints: [vec![wp(sep / 2.0, 0.0)?], vec![wp(-sep / 2.0, 0.0)?]],
                steps,
                choices,
                filter,
                ds,
                record_trajectory: false,
            })
        }
        "pass_left" | "pass_left_close" => {
            let gap = if name == "pass_left_close" {
                100.0
            } else {
                separation.unwrap_or(100.0)
            };
            let reach = 400.0;
            let start = JointState::new(
                VehicleState::new(-reach, 0.0, 0.0, 0.0),
                VehicleState::new(reach, gap, std::f64::consts::PI, 0.0),
            );
            Ok(EpisodeConfig {
                start,
                waypoints: [vec![wp(3.0 * reach, 0.0)?], vec![wp(-3.0 * reach, gap)?]],
                steps,
                choices,
                filter,
                ds,
                record_trajectory: false,
            })
        }
        other => Err(Error::UnknownScenario(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{gamma_straight, gamma_turn, BarrierFunction, RolloutBarrier};
    use crate::dynamics::{make_action_set, ControlBounds, PlantParams};

    const DEG: f64 = std::f64::consts::PI / 180.0;

    fn plant() -> FwUavPlant {
        FwUavPlant::new(PlantParams::default())
    }

    fn choices() -> ActionChoices {
        ActionChoices::new(vec![-12.0 * DEG, 0.0, 12.0 * DEG], 15.0, 0.0)
    }

    fn filter_cfg() -> FilterConfig<ControlInput> {
        let actions = make_action_set(
            &[-12.0 * DEG, 0.0, 12.0 * DEG],
            15.0,
            0.0,
            &ControlBounds::default(),
        )
        .unwrap();
        FilterConfig::new(1.0, actions).unwrap()
    }

    type ExactBarrier = RolloutBarrier<
        FwUavPlant,
        crate::barrier::ConstantManeuver<ControlInput>,
        SeparationMargin,
    >;

    fn turn_barrier() -> ExactBarrier {
        RolloutBarrier::new(
            plant(),
            gamma_turn(1.0, 15.0, 12.0 * DEG, &ControlBounds::default()).unwrap(),
            SeparationMargin::new(25.0, Some(50.0)).unwrap(),
            500,
        )
    }

    fn straight_barrier() -> ExactBarrier {
        RolloutBarrier::new(
            plant(),
            gamma_straight(15.0, 15.0, 0.0, 0.0, &ControlBounds::default()).unwrap(),
            SeparationMargin::new(25.0, Some(50.0)).unwrap(),
            500,
        )
    }

    #[test]
    fn controller_dead_ahead_goes_straight() {
        let v = VehicleState::new(0.0, 0.0, 0.0, 0.0);
        let wp = Waypoint::new(100.0, 0.0, 0.0, 10.0).unwrap();
        let (c, idx) = waypoint_controller(&v, &wp, &choices(), 0.1).unwrap();
        assert_eq!(c.omega, 0.0);
        assert_eq!(idx, 1);
    }

    #[test]
    fn controller_turns_left_toward_left_waypoint() {
        let v = VehicleState::new(0.0, 0.0, 0.0, 0.0);
        let wp = Waypoint::new(0.0, 100.0, 0.0, 10.0).unwrap();
        let (c, _) = waypoint_controller(&v, &wp, &choices(), 0.1).unwrap();
        assert_eq!(c.omega, 12.0 * DEG);
    }

    #[test]
    fn controller_breaks_exact_reverse_tie_positive() {
        let v = VehicleState::new(0.0, 0.0, 0.0, 0.0);
        let wp = Waypoint::new(-100.0, 0.0, 0.0, 10.0).unwrap();
        let (c, _) = waypoint_controller(&v, &wp, &choices(), 0.1).unwrap();
        assert_eq!(c.omega, 12.0 * DEG, "exact 180° ties break toward +");

        // Slightly off-axis targets pick the matching side.
        let wp_left = Waypoint::new(-100.0, 1.0, 0.0, 10.0).unwrap();
        let (c, _) = waypoint_controller(&v, &wp_left, &choices(), 0.1).unwrap();
        assert_eq!(c.omega, 12.0 * DEG);
        let wp_right = Waypoint::new(-100.0, -1.0, 0.0, 10.0).unwrap();
        let (c, _) = waypoint_controller(&v, &wp_right, &choices(), 0.1).unwrap();
        assert_eq!(c.omega, -12.0 * DEG);
    }

    #[test]
    fn empty_choices_error() {
        let v = VehicleState::new(0.0, 0.0, 0.0, 0.0);
        let wp = Waypoint::new(1.0, 0.0, 0.0, 10.0).unwrap();
        let empty = ActionChoices::new(vec![], 15.0, 0.0);
        assert!(matches!(
            waypoint_controller(&v, &wp, &empty, 0.1),
            Err(Error::EmptyActionSet)
        ));
    }

    #[test]
    fn head_on_without_barrier_collides() {
        let cfg =
            scenario("head_on", Some(600.0), choices(), filter_cfg(), 25.0, 500, 15.0).unwrap();
        let r = run_episode(&cfg, &plant(), None).unwrap();
        assert!(r.collided);
        assert!(r.min_distance < 25.0);
        assert_eq!(r.override_count, 0);
    }

    #[test]
    fn head_on_with_turn_barrier_keeps_separation() {
        let cfg =
            scenario("head_on", Some(600.0), choices(), filter_cfg(), 25.0, 500, 15.0).unwrap();
        let h = turn_barrier();
        assert!(h.value(&cfg.start) >= 0.0, "start must be feasible");
        let r = run_episode(&cfg, &plant(), Some(&h)).unwrap();
        assert!(!r.collided, "min distance {}", r.min_distance);
        assert!(r.min_distance >= 25.0);
        assert!(r.override_count > 0);
        assert_eq!(r.infeasible_count, 0);
    }

    #[test]
    fn far_parallel_tracks_never_override() {
        // Same-direction tracks 300 m apart, beyond four turn radii.
        let start = JointState::new(
            VehicleState::new(0.0, 0.0, 0.0, 0.0),
            VehicleState::new(0.0, 300.0, 0.0, 0.0),
        );
        let cfg = EpisodeConfig {
            start,
            waypoints: [
                vec![Waypoint::new(2000.0, 0.0, 0.0, 15.0).unwrap()],
                vec![Waypoint::new(2000.0, 300.0, 0.0, 15.0).unwrap()],
            ],
            steps: 500,
            choices: choices(),
            filter: filter_cfg(),
            ds: 25.0,
            record_trajectory: false,
        };
        let h = turn_barrier();
        let r = run_episode(&cfg, &plant(), Some(&h)).unwrap();
        assert_eq!(r.override_count, 0);
        assert_eq!(r.infeasible_count, 0);
    }

    #[test]
    fn pass_left_close_overrides_turn_but_not_straight() {
        let cfg =
            scenario("pass_left_close", None, choices(), filter_cfg(), 25.0, 500, 15.0).unwrap();
        let turn = turn_barrier();
        let straight = straight_barrier();
        let with_turn = run_episode(&cfg, &plant(), Some(&turn)).unwrap();
        let with_straight = run_episode(&cfg, &plant(), Some(&straight)).unwrap();
        assert!(with_turn.override_count > 0);
        assert_eq!(with_straight.override_count, 0);
        assert!(!with_turn.collided);
        assert!(!with_straight.collided);
    }

    #[test]
    fn wide_pass_overrides_neither() {
        // Under the shared left turn, oncoming circles shift toward each
        // other's track, so the clean no-override threshold is four turn
        // radii plus the safety distance (about 312 m here).
        let cfg =
            scenario("pass_left", Some(340.0), choices(), filter_cfg(), 25.0, 500, 15.0).unwrap();
        let turn = turn_barrier();
        let straight = straight_barrier();
        assert_eq!(
            run_episode(&cfg, &plant(), Some(&turn)).unwrap().override_count,
            0
        );
        assert_eq!(
            run_episode(&cfg, &plant(), Some(&straight))
                .unwrap()
                .override_count,
            0
        );
    }

    #[test]
    fn unknown_scenario_is_an_error() {
        assert!(matches!(
            scenario("sideways", None, choices(), filter_cfg(), 25.0, 100, 15.0),
            Err(Error::UnknownScenario(_))
        ));
    }

    #[test]
    fn collision_table_pairs_starts_across_variants() {
        let pi = std::f64::consts::PI;
        let sampler = SamplerSpec::new(
            vec![-200.0, -200.0, -pi, 0.0, -200.0, -200.0, -pi, 0.0],
            vec![200.0, 200.0, pi, 0.0, 200.0, 200.0, pi, 0.0],
            13,
        )
        .unwrap();
        let cfg = EvalConfig {
            episodes: 12,
            steps: 120,
            choices: choices(),
            filter: filter_cfg(),
            ds: 25.0,
            sampler,
            capture_radius: 15.0,
            max_reject_factor: 1000,
        };
        let turn = turn_barrier();
        let variants: Vec<(String, Option<&DynBarrier<_, _>>)> =
            vec![("none".into(), None), ("turn".into(), Some(&turn))];
        let reports = evaluate_collision_rates(&plant(), &variants, &cfg).unwrap();
        assert_eq!(reports.len(), 2);
        for r in &reports {
            assert_eq!(r.episodes, 12);
            assert!(r.rate_pct >= 0.0 && r.rate_pct <= 100.0);
            assert!(r.wilson_lo_pct <= r.rate_pct && r.rate_pct <= r.wilson_hi_pct);
            for row in &r.rows {
                assert_eq!(row.collided, row.min_distance < 25.0);
            }
        }
        // Paired: same starts, in the same order, for every variant.
        let a: Vec<u64> = reports[0].rows.iter().map(|r| r.seed).collect();
        let b: Vec<u64> = reports[1].rows.iter().map(|r| r.seed).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn straight_barrier_grid_flags_head_on_cells() {
        let h = straight_barrier();
        // Vehicle 2 on the +x axis facing vehicle 1 (heading left).
        let mut spec = GridSpec::standard(std::f64::consts::PI);
        spec.nx = 9;
        spec.ny = 9;
        let grid = grid_unsafe_set(&h, &spec).unwrap();
        let xs = spec.xs();
        let ys = spec.ys();
        let iy = ys.iter().position(|&y| y == 0.0).unwrap();
        for (ix, &x) in xs.iter().enumerate() {
            if x > 0.0 {
                assert!(
                    grid.value_at(ix, iy) < 0.0,
                    "head-on cell at x={x} should be unsafe"
                );
            }
        }
        // Facing away and ahead of vehicle 1: diverging, safe.
        let mut away = GridSpec::standard(0.0);
        away.nx = 3;
        away.ny = 3;
        away.x_lo = 150.0;
        away.x_hi = 200.0;
        away.y_lo = 100.0;
        away.y_hi = 200.0;
        let grid = grid_unsafe_set(&h, &away).unwrap();
        assert_eq!(grid.unsafe_count(), 0);
    }

    #[test]
    fn head_on_scenario_builds_the_stated_geometry() {
        let cfg =
            scenario("head_on", Some(600.0), choices(), filter_cfg(), 25.0, 100, 15.0).unwrap();
        let [a, b] = &cfg.start.vehicles;
        assert_eq!((a.px, a.py, a.theta), (-300.0, 0.0, 0.0));
        assert_eq!((b.px, b.py), (300.0, 0.0));
        assert_eq!(b.theta, std::f64::consts::PI);
        assert_eq!(cfg.waypoints[0][0].x, 300.0, "waypoint at the other start");
        assert_eq!(cfg.waypoints[1][0].x, -300.0);
    }

    #[test]
    fn conservative_unsafe_mask_contains_mean_only_mask() {
        use crate::learning::{AngleMode, InputEncoder, LearnedBarrier, MlpRegressor};
        let pi = std::f64::consts::PI;
        let encoder = InputEncoder::new(
            vec![-200.0, -200.0, -pi, 0.0, -200.0, -200.0, -pi, 0.0],
            vec![200.0, 200.0, pi, 0.0, 200.0, 200.0, pi, 0.0],
            vec![2, 6],
            AngleMode::CosSin,
            0,
        )
        .unwrap();
        let model = MlpRegressor::new_random(encoder, &[16], 0.4, 3);
        let conservative: LearnedBarrier<FwUavPlant> =
            LearnedBarrier::hybrid(model.clone(), plant(), 3.0, 8).unwrap();
        let mean_only: LearnedBarrier<FwUavPlant> =
            LearnedBarrier::hybrid(model, plant(), 0.0, 8).unwrap();
        let mut spec = GridSpec::standard(std::f64::consts::PI);
        spec.nx = 11;
        spec.ny = 11;
        let g3 = grid_unsafe_set(&conservative, &spec).unwrap();
        let g0 = grid_unsafe_set(&mean_only, &spec).unwrap();
        for (v3, v0) in g3.values.iter().zip(g0.values.iter()) {
            assert!(v3 <= v0, "sigma subtraction can only lower values");
            if *v0 < 0.0 {
                assert!(*v3 < 0.0, "mean-only unsafe cell must stay unsafe");
            }
        }
        assert!(g3.unsafe_count() >= g0.unsafe_count());
    }

    #[test]
    fn grid_evaluation_is_repeatable_and_csv_has_all_rows() {
        let h = turn_barrier();
        let mut spec = GridSpec::standard(std::f64::consts::FRAC_PI_2);
        spec.nx = 7;
        spec.ny = 5;
        let a = grid_unsafe_set(&h, &spec).unwrap();
        let b = grid_unsafe_set(&h, &spec).unwrap();
        assert_eq!(a.values, b.values);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.csv");
        a.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + 7 * 5);
        assert!(text.starts_with("x,y,h,unsafe\n"));
    }
}
