//! Rollout dataset generation and the episode engine.
//!
//! Episodes are deterministic given a master seed: episode `j` draws its
//! start from a seed derived as `derive(master, j)`, and all work is
//! merged by episode index, so worker count and batching never change
//! results. The engine runs episodes in lockstep chunks so that batched
//! barrier backings (learned models) can amortize evaluation across
//! episodes.

use crate::barrier::{BarrierFunction, DynBarrier, FilterConfig, Maneuver, SafetyFunction};
use crate::dynamics::{ControlVector, FlatState, Plant};
use crate::error::{Error, Result};
use crate::seeds;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

/// `filter` argument for unfiltered runs, with the barrier type pinned so
/// inference works.
pub fn no_filter<S, C>() -> Option<(&'static DynBarrier<S, C>, &'static FilterConfig<C>)> {
    None
}

/// Uniform box sampler for episode start states.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub seed: u64,
}

impl SamplerSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, seed: u64) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::DimensionMismatch(
                "sampler bounds must have equal nonzero length".into(),
            ));
        }
        for (i, (l, h)) in lo.iter().zip(hi.iter()).enumerate() {
            if !(l.is_finite() && h.is_finite() && l <= h) {
                return Err(Error::InvalidConfig(format!(
                    "sampler dim {i}: need finite lo <= hi, got [{l}, {h}]"
                )));
            }
        }
        Ok(Self { lo, hi, seed })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn sample_flat(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(self.hi.iter())
            .map(|(&l, &h)| if h > l { rng.random_range(l..h) } else { l })
            .collect()
    }

    /// Start state for episode `j`, via the derived per-episode stream.
    pub fn sample_state<S: FlatState>(&self, episode: u64) -> S {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(self.seed, episode));
        S::from_flat(&self.sample_flat(&mut rng))
    }
}

/// One training row for the barrier regressor: episode start and the
/// worst safety margin seen along the whole rollout (including the start).
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutSample {
    pub x0: Vec<f64>,
    pub rho_min: f64,
}

/// One training row for the one-step surrogate: episode start, the first
/// applied action (by action-set index), and the worst safety margin over
/// the states strictly after the start.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSample {
    pub x0: Vec<f64>,
    pub u_index: Option<usize>,
    pub rho_min_tail: f64,
}

/// Dataset produced by [`generate_dataset`]: one rollout sample per
/// episode, plus matching one-step samples when recording was enabled.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeDataset {
    pub samples: Vec<RolloutSample>,
    pub deltas: Option<Vec<DeltaSample>>,
}

/// A per-episode control policy. Unlike [`Maneuver`], a policy may carry
/// episode state (for example waypoint progress) and is told when an
/// episode begins.
pub trait RolloutPolicy<S, C> {
    fn begin_episode(&mut self, x0: &S);

    /// Control plus its action-set index when the policy picks from a
    /// finite menu.
    fn act(&mut self, x: &S) -> (C, Option<usize>);
}

/// Any pure maneuver is a stateless policy.
impl<S, C, M: Maneuver<S, C>> RolloutPolicy<S, C> for M {
    fn begin_episode(&mut self, _x0: &S) {}

    fn act(&mut self, x: &S) -> (C, Option<usize>) {
        self.control_with_index(x)
    }
}

/// Everything recorded about one episode.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome<S> {
    pub start: S,
    /// Worst safety margin including the start state.
    pub rho_min: f64,
    /// Worst safety margin over post-step states only.
    pub rho_min_tail: f64,
    /// Action index of the first applied control, when known.
    pub first_action: Option<usize>,
    pub overridden_steps: usize,
    pub infeasible_steps: usize,
    pub trajectory: Option<Vec<S>>,
}

/// Episode engine options.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeOptions {
    pub steps: usize,
    pub record_trajectory: bool,
    /// Episodes per lockstep batch; affects performance only, never results.
    pub chunk: usize,
}

impl EpisodeOptions {
    pub fn new(steps: usize) -> Self {
        Self {
            steps,
            record_trajectory: false,
            chunk: 32,
        }
    }
}

/// Run episodes from the given starts, filtering each nominal control
/// through the barrier when one is configured. Episodes evolve in
/// lockstep within a chunk so batched barriers evaluate once per step.
pub fn run_episodes<P, Pol, H>(
    plant: &P,
    rho: &(dyn SafetyFunction<P::State> + Sync),
    starts: &[P::State],
    policy: &Pol,
    filter: Option<(&H, &FilterConfig<P::Control>)>,
    opts: &EpisodeOptions,
) -> Vec<EpisodeOutcome<P::State>>
where
    P: Plant + Sync,
    P::State: Send + Sync,
    P::Control: ControlVector + Send + Sync,
    Pol: RolloutPolicy<P::State, P::Control> + Clone + Send + Sync,
    H: BarrierFunction<P::State, P::Control> + Sync + ?Sized,
{
    assert!(opts.steps >= 1, "episodes need at least one step");
    let chunk = opts.chunk.max(1);
    starts
        .par_chunks(chunk)
        .flat_map_iter(|chunk_starts| run_chunk(plant, rho, chunk_starts, policy, filter, opts))
        .collect()
}

fn run_chunk<P, Pol, H>(
    plant: &P,
    rho: &(dyn SafetyFunction<P::State> + Sync),
    starts: &[P::State],
    policy: &Pol,
    filter: Option<(&H, &FilterConfig<P::Control>)>,
    opts: &EpisodeOptions,
) -> Vec<EpisodeOutcome<P::State>>
where
    P: Plant,
    P::Control: ControlVector,
    Pol: RolloutPolicy<P::State, P::Control> + Clone,
    H: BarrierFunction<P::State, P::Control> + ?Sized,
{
    let n = starts.len();
    let mut states: Vec<P::State> = starts.to_vec();
    let mut policies: Vec<Pol> = starts
        .iter()
        .map(|x0| {
            let mut p = policy.clone();
            p.begin_episode(x0);
            p
        })
        .collect();
    let mut outcomes: Vec<EpisodeOutcome<P::State>> = starts
        .iter()
        .map(|x0| EpisodeOutcome {
            start: x0.clone(),
            rho_min: rho.rho(x0),
            rho_min_tail: f64::INFINITY,
            first_action: None,
            overridden_steps: 0,
            infeasible_steps: 0,
            trajectory: opts.record_trajectory.then(|| vec![x0.clone()]),
        })
        .collect();

    for t in 0..opts.steps {
        let nominal: Vec<(P::Control, Option<usize>)> = states
            .iter()
            .zip(policies.iter_mut())
            .map(|(x, p)| p.act(x))
            .collect();

        let chosen: Vec<(P::Control, Option<usize>, bool, bool)> = match filter {
            Some((barrier, cfg)) => {
                let scored = barrier.value_and_deltas_multi(&states, cfg.actions.actions());
                nominal
                    .iter()
                    .zip(scored.iter())
                    .map(|((u_nom, _), (value, deltas))| {
                        let d = cfg.select(*value, deltas, u_nom);
                        (d.control, Some(d.index), d.overridden, d.feasible)
                    })
                    .collect()
            }
            None => nominal
                .into_iter()
                .map(|(u, idx)| (u, idx, false, true))
                .collect(),
        };

        for i in 0..n {
            let (u, idx, overridden, feasible) = &chosen[i];
            let out = &mut outcomes[i];
            if t == 0 {
                out.first_action = *idx;
            }
            if *overridden {
                out.overridden_steps += 1;
            }
            if !feasible {
                out.infeasible_steps += 1;
            }
            states[i] = plant.step(&states[i], u);
            let r = rho.rho(&states[i]);
            out.rho_min = out.rho_min.min(r);
            out.rho_min_tail = out.rho_min_tail.min(r);
            if let Some(traj) = &mut out.trajectory {
                traj.push(states[i].clone());
            }
        }
    }
    outcomes
}

/// Generate a rollout dataset: `episodes` starts drawn from the sampler,
/// each rolled `horizon` steps under the policy. Records the worst
/// margin per episode and, when `record_deltas` is set, the first applied
/// action with the post-start worst margin.
#[allow(clippy::too_many_arguments)]
pub fn generate_dataset<P, Pol, H>(
    plant: &P,
    rho: &(dyn SafetyFunction<P::State> + Sync),
    policy: &Pol,
    filter: Option<(&H, &FilterConfig<P::Control>)>,
    sampler: &SamplerSpec,
    episodes: usize,
    horizon: usize,
    record_deltas: bool,
) -> Result<EpisodeDataset>
where
    P: Plant + Sync,
    P::State: FlatState + Send + Sync,
    P::Control: ControlVector + Send + Sync,
    Pol: RolloutPolicy<P::State, P::Control> + Clone + Send + Sync,
    H: BarrierFunction<P::State, P::Control> + Sync + ?Sized,
{
    if episodes == 0 {
        return Err(Error::InvalidData("dataset needs at least one episode".into()));
    }
    if sampler.dim() != P::State::DIM {
        return Err(Error::DimensionMismatch(format!(
            "sampler has {} dims, state has {}",
            sampler.dim(),
            P::State::DIM
        )));
    }
    let starts: Vec<P::State> = (0..episodes as u64)
        .map(|j| sampler.sample_state(j))
        .collect();
    let opts = EpisodeOptions::new(horizon);
    let outcomes = run_episodes(plant, rho, &starts, policy, filter, &opts);

    let samples = outcomes
        .iter()
        .map(|o| RolloutSample {
            x0: o.start.to_flat(),
            rho_min: o.rho_min,
        })
        .collect();
    let deltas = record_deltas.then(|| {
        outcomes
            .iter()
            .map(|o| DeltaSample {
                x0: o.start.to_flat(),
                u_index: o.first_action,
                rho_min_tail: o.rho_min_tail,
            })
            .collect()
    });
    Ok(EpisodeDataset { samples, deltas })
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Write a dataset as CSV: columns `x0_0..x0_{D-1}, u_idx, rho_min` and,
/// when one-step samples are present, `rho_min_tail`. A missing action
/// index is written as -1.
pub fn write_dataset_csv(path: &Path, data: &EpisodeDataset) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let dim = data.samples.first().map_or(0, |s| s.x0.len());
    let mut header: Vec<String> = (0..dim).map(|i| format!("x0_{i}")).collect();
    header.push("u_idx".into());
    header.push("rho_min".into());
    if data.deltas.is_some() {
        header.push("rho_min_tail".into());
    }
    writeln!(w, "{}", header.join(","))?;
    for (i, s) in data.samples.iter().enumerate() {
        for v in &s.x0 {
            write!(w, "{v},")?;
        }
        match data.deltas.as_ref().map(|d| &d[i]) {
            Some(d) => {
                let idx = d.u_index.map_or(-1i64, |u| u as i64);
                writeln!(w, "{idx},{},{}", s.rho_min, d.rho_min_tail)?;
            }
            None => writeln!(w, "-1,{}", s.rho_min)?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a dataset written by [`write_dataset_csv`].
pub fn read_dataset_csv(path: &Path) -> Result<EpisodeDataset> {
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    let perr = |msg: String| Error::Parse {
        path: path.display().to_string(),
        msg,
    };
    let header = lines
        .next()
        .ok_or_else(|| perr("empty file".into()))??;
    let cols: Vec<&str> = header.trim().split(',').collect();
    let dim = cols.iter().filter(|c| c.starts_with("x0_")).count();
    let has_tail = cols.contains(&"rho_min_tail");
    let idx_col = cols
        .iter()
        .position(|c| *c == "u_idx")
        .ok_or_else(|| perr("missing u_idx column".into()))?;
    let rho_col = cols
        .iter()
        .position(|c| *c == "rho_min")
        .ok_or_else(|| perr("missing rho_min column".into()))?;
    let tail_col = cols.iter().position(|c| *c == "rho_min_tail");

    let mut samples = Vec::new();
    let mut deltas = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != cols.len() {
            return Err(perr(format!("line {}: wrong field count", lineno + 2)));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| perr(format!("line {}: {e}", lineno + 2)))
        };
        let x0: Vec<f64> = (0..dim)
            .map(|i| parse(fields[i]))
            .collect::<Result<_>>()?;
        let rho_min = parse(fields[rho_col])?;
        samples.push(RolloutSample {
            x0: x0.clone(),
            rho_min,
        });
        if has_tail {
            let raw_idx: i64 = fields[idx_col]
                .parse()
                .map_err(|e| perr(format!("line {}: {e}", lineno + 2)))?;
            deltas.push(DeltaSample {
                x0,
                u_index: (raw_idx >= 0).then_some(raw_idx as usize),
                rho_min_tail: parse(fields[tail_col.unwrap()])?,
            });
        }
    }
    Ok(EpisodeDataset {
        samples,
        deltas: has_tail.then_some(deltas),
    })
}
