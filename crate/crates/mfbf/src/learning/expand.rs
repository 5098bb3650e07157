//! Iterative safe-set expansion.
//!
//! Each round rolls episodes whose controls come from the safety filter
//! wrapped around a nominal policy, fits a regressor to the per-episode
//! worst margins, and uses the fitted barrier to filter the next round.
//! The max variant keeps targets from shrinking below the current
//! barrier, which grows the admissible control space along with the safe
//! set; plain targets can shrink it.

use crate::barrier::{BarrierFunction, FilterConfig, SafetyFunction};
use crate::dynamics::{ControlVector, FlatState, Plant};
use crate::error::{Error, Result};
use crate::learning::dataset::{
    run_episodes, DeltaSample, EpisodeDataset, EpisodeOptions, RolloutPolicy, RolloutSample,
    SamplerSpec,
};
use crate::learning::learned::LearnedBarrier;
use crate::learning::mlp::{
    fit_regressor, AngleMode, InputEncoder, MlpRegressor, TrainConfig, TrainReport, TrainRow,
};
use crate::seeds;

/// Options shared by the expansion rounds.
#[derive(Debug, Clone)]
pub struct ExpandConfig<C> {
    pub filter: FilterConfig<C>,
    pub train: TrainConfig,
    /// Clamp regression targets to `±clip`, matching the safety function's
    /// upper clip.
    pub target_clip: Option<f64>,
    /// Also fit the one-step surrogate from `(x0, first action, tail min)`.
    pub record_deltas: bool,
    /// Raw state dims holding headings (for cos/sin features).
    pub angle_dims: Vec<usize>,
    pub angle_mode: AngleMode,
    /// Optional relative-frame feature block.
    pub relative: Option<crate::learning::mlp::RelativePose>,
}

/// Result of one expansion round.
pub struct Expansion {
    pub value_model: MlpRegressor,
    pub value_report: TrainReport,
    pub delta_model: Option<MlpRegressor>,
    pub delta_report: Option<TrainReport>,
    pub dataset: EpisodeDataset,
}

fn clip_target(v: f64, clip: Option<f64>) -> f64 {
    match clip {
        Some(c) => v.clamp(-c, c),
        None => v,
    }
}

#[allow(clippy::too_many_arguments)]
fn expand_inner<P, Pol, H>(
    h: &H,
    rho: &(dyn SafetyFunction<P::State> + Sync),
    episodes: usize,
    nominal: &Pol,
    horizon: usize,
    plant: &P,
    sampler: &SamplerSpec,
    cfg: &ExpandConfig<P::Control>,
    max_targets: bool,
) -> Result<Expansion>
where
    P: Plant + Sync,
    P::State: FlatState + Send + Sync,
    P::Control: ControlVector + Send + Sync,
    Pol: RolloutPolicy<P::State, P::Control> + Clone + Send + Sync,
    H: BarrierFunction<P::State, P::Control> + Sync + ?Sized,
{
    if episodes == 0 {
        return Err(Error::InvalidData("expansion needs at least one episode".into()));
    }
    if sampler.dim() != P::State::DIM {
        return Err(Error::DimensionMismatch(format!(
            "sampler has {} dims, state has {}",
            sampler.dim(),
            P::State::DIM
        )));
    }
    cfg.train.validate()?;

    let starts: Vec<P::State> = (0..episodes as u64)
        .map(|j| sampler.sample_state(j))
        .collect();
    let outcomes = run_episodes(
        plant,
        rho,
        &starts,
        nominal,
        Some((h, &cfg.filter)),
        &EpisodeOptions::new(horizon),
    );

    let base_values = if max_targets {
        h.value_multi(&starts)
    } else {
        Vec::new()
    };

    let mut samples = Vec::with_capacity(episodes);
    let mut deltas = Vec::with_capacity(episodes);
    for (i, o) in outcomes.iter().enumerate() {
        let mut target = o.rho_min;
        if max_targets {
            target = target.max(base_values[i]);
        }
        samples.push(RolloutSample {
            x0: o.start.to_flat(),
            rho_min: clip_target(target, cfg.target_clip),
        });
        deltas.push(DeltaSample {
            x0: o.start.to_flat(),
            u_index: o.first_action,
            rho_min_tail: clip_target(o.rho_min_tail, cfg.target_clip),
        });
    }
    let dataset = EpisodeDataset {
        samples,
        deltas: cfg.record_deltas.then_some(deltas),
    };

    let mut value_encoder = InputEncoder::for_state::<P::State>(
        sampler.lo.clone(),
        sampler.hi.clone(),
        cfg.angle_dims.clone(),
        cfg.angle_mode,
        0,
    )?;
    if let Some(rel) = cfg.relative {
        value_encoder = value_encoder.with_relative(rel)?;
    }
    let value_rows: Vec<TrainRow> = dataset
        .samples
        .iter()
        .map(|s| TrainRow {
            x: s.x0.clone(),
            action: None,
            target: s.rho_min,
        })
        .collect();

    let delta_rows: Vec<TrainRow> = dataset
        .deltas
        .as_deref()
        .unwrap_or(&[])
        .iter()
        .filter_map(|d| {
            d.u_index.map(|a| TrainRow {
                x: d.x0.clone(),
                action: Some(a),
                target: d.rho_min_tail,
            })
        })
        .collect();

    let fit_value = || fit_regressor(&value_rows, value_encoder.clone(), &cfg.train);
    let fit_delta = || -> Result<Option<(MlpRegressor, TrainReport)>> {
        if !cfg.record_deltas || delta_rows.len() < 2 {
            return Ok(None);
        }
        let mut delta_encoder = InputEncoder::for_state::<P::State>(
            sampler.lo.clone(),
            sampler.hi.clone(),
            cfg.angle_dims.clone(),
            cfg.angle_mode,
            cfg.filter.actions.len(),
        )?;
        if let Some(rel) = cfg.relative {
            delta_encoder = delta_encoder.with_relative(rel)?;
        }
        let mut delta_cfg = cfg.train.clone();
        delta_cfg.seed = seeds::derive(cfg.train.seed, 0xD17A);
        Ok(Some(fit_regressor(&delta_rows, delta_encoder, &delta_cfg)?))
    };
    // The two fits are independent; run them side by side.
    let (value_res, delta_res) = rayon::join(fit_value, fit_delta);
    let (value_model, value_report) = value_res?;
    let (delta_model, delta_report) = match delta_res? {
        Some((m, r)) => (Some(m), Some(r)),
        None => (None, None),
    };

    Ok(Expansion {
        value_model,
        value_report,
        delta_model,
        delta_report,
        dataset,
    })
}

/// One expansion round with plain targets `ρ_min`.
#[allow(clippy::too_many_arguments)]
pub fn expand_safe_set<P, Pol, H>(
    h: &H,
    rho: &(dyn SafetyFunction<P::State> + Sync),
    episodes: usize,
    nominal: &Pol,
    horizon: usize,
    plant: &P,
    sampler: &SamplerSpec,
    cfg: &ExpandConfig<P::Control>,
) -> Result<Expansion>
where
    P: Plant + Sync,
    P::State: FlatState + Send + Sync,
    P::Control: ControlVector + Send + Sync,
    Pol: RolloutPolicy<P::State, P::Control> + Clone + Send + Sync,
    H: BarrierFunction<P::State, P::Control> + Sync + ?Sized,
{
    expand_inner(h, rho, episodes, nominal, horizon, plant, sampler, cfg, false)
}

/// One expansion round with targets `max(h(x0), ρ_min)`, so the new
/// barrier dominates the old one on the sampled starts.
#[allow(clippy::too_many_arguments)]
pub fn expand_safe_set_with_max<P, Pol, H>(
    h: &H,
    rho: &(dyn SafetyFunction<P::State> + Sync),
    episodes: usize,
    nominal: &Pol,
    horizon: usize,
    plant: &P,
    sampler: &SamplerSpec,
    cfg: &ExpandConfig<P::Control>,
) -> Result<Expansion>
where
    P: Plant + Sync,
    P::State: FlatState + Send + Sync,
    P::Control: ControlVector + Send + Sync,
    Pol: RolloutPolicy<P::State, P::Control> + Clone + Send + Sync,
    H: BarrierFunction<P::State, P::Control> + Sync + ?Sized,
{
    expand_inner(h, rho, episodes, nominal, horizon, plant, sampler, cfg, true)
}

/// Sampler and train seeds for expansion round `i` (1-based). Exposed so
/// resumed runs reproduce exactly the seeds a full run would use.
pub fn iteration_seeds(master: u64, iteration: usize) -> (u64, u64) {
    (
        seeds::derive(master, 1000 + iteration as u64),
        seeds::derive(master, 2000 + iteration as u64),
    )
}

/// Run `iterations` max-target expansion rounds starting from `h0`,
/// rebuilding a hybrid learned barrier between rounds. Returns every
/// round's models and reports, in order.
#[allow(clippy::too_many_arguments)]
pub fn iterate_expansion<P, Pol, H>(
    h0: &H,
    iterations: usize,
    rho: &(dyn SafetyFunction<P::State> + Sync),
    episodes_per_iteration: usize,
    nominal: &Pol,
    horizon: usize,
    plant: &P,
    bounds: (&[f64], &[f64]),
    cfg: &ExpandConfig<P::Control>,
    master_seed: u64,
) -> Result<Vec<Expansion>>
where
    P: Plant + Clone + Send + Sync,
    P::State: FlatState + Send + Sync,
    P::Control: ControlVector + Send + Sync,
    Pol: RolloutPolicy<P::State, P::Control> + Clone + Send + Sync,
    H: BarrierFunction<P::State, P::Control> + Sync + ?Sized,
{
    if iterations == 0 {
        return Err(Error::InvalidConfig("need at least one iteration".into()));
    }
    let mut results: Vec<Expansion> = Vec::with_capacity(iterations);
    let mut current: Option<LearnedBarrier<P>> = None;
    for i in 1..=iterations {
        let (sampler_seed, train_seed) = iteration_seeds(master_seed, i);
        let sampler = SamplerSpec::new(bounds.0.to_vec(), bounds.1.to_vec(), sampler_seed)?;
        let mut round_cfg = cfg.clone();
        round_cfg.train.seed = train_seed;
        let expansion = match &current {
            None => expand_safe_set_with_max(
                h0,
                rho,
                episodes_per_iteration,
                nominal,
                horizon,
                plant,
                &sampler,
                &round_cfg,
            )?,
            Some(h) => expand_safe_set_with_max(
                h,
                rho,
                episodes_per_iteration,
                nominal,
                horizon,
                plant,
                &sampler,
                &round_cfg,
            )?,
        };
        current = Some(LearnedBarrier::hybrid(
            expansion.value_model.clone(),
            plant.clone(),
            cfg.train.n_sigma,
            cfg.train.mc_samples,
        )?);
        results.push(expansion);
    }
    Ok(results)
}
