//! Command implementations behind the `mfbf` binary: dataset generation,
//! training, iterative expansion, collision-rate evaluation, safe-set
//! grids, and canned scenarios.
//!
//! Every command is reproducible from `(config, seed)` alone and leaves a
//! `*.meta.json` sidecar with the config hash and seed next to its
//! outputs.

use crate::barrier::{gamma_straight, gamma_turn, DynBarrier, RolloutBarrier};
use crate::config::RunConfig;
use crate::dynamics::{ControlInput, FwUavPlant, JointState};
use crate::error::{Error, Result};
use crate::learning::{
    expand_safe_set_with_max, fit_regressor, generate_dataset, iteration_seeds, load_checkpoint,
    read_dataset_csv, save_checkpoint, write_dataset_csv, EpisodeDataset, ExpandConfig,
    Expansion, InputEncoder, LearnedBarrier, MlpRegressor, RelativePose, TrainRow,
};
use crate::seeds;
use crate::sim::{
    evaluate_collision_rates, grid_unsafe_set, run_episode, scenario, write_episode_csv,
    EvalConfig, GridSpec, WaypointPolicy, WaypointScheme,
};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Heading dimensions in the flat joint state.
const ANGLE_DIMS: [usize; 2] = [2, 6];

/// Length scale of the relative-pose features: the start box spans 400 m.
const RELATIVE_SCALE: f64 = 400.0;

fn state_encoder(cfg: &RunConfig, action_count: usize) -> Result<InputEncoder> {
    let mut enc = InputEncoder::new(
        cfg.sampler_lo.clone(),
        cfg.sampler_hi.clone(),
        ANGLE_DIMS.to_vec(),
        cfg.angle_mode(),
        action_count,
    )?;
    if cfg.relative_features {
        enc = enc.with_relative(RelativePose::fw_uav(RELATIVE_SCALE))?;
    }
    Ok(enc)
}

/// Which barrier backs a command.
#[derive(Debug, Clone, PartialEq)]
pub enum BarrierSpec {
    None,
    /// Exact rollout barrier under the hold-heading maneuver.
    Straight,
    /// Exact rollout barrier under the shared-turn maneuver.
    Turn,
    /// Learned value model, one-step change via the plant (hybrid).
    Checkpoint(PathBuf),
    /// Learned value and one-step surrogate models; no plant access.
    ModelFree(PathBuf, PathBuf),
}

impl BarrierSpec {
    /// Accepts `none`, `straight`, `turn`, `ckpt=<path>`, or
    /// `mf=<value path>,<delta path>`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "straight" => Ok(Self::Straight),
            "turn" => Ok(Self::Turn),
            other => {
                if let Some(path) = other.strip_prefix("ckpt=") {
                    Ok(Self::Checkpoint(PathBuf::from(path)))
                } else if let Some(paths) = other.strip_prefix("mf=") {
                    let (v, d) = paths.split_once(',').ok_or_else(|| {
                        Error::InvalidConfig("mf= takes <value ckpt>,<delta ckpt>".into())
                    })?;
                    Ok(Self::ModelFree(PathBuf::from(v), PathBuf::from(d)))
                } else {
                    Err(Error::InvalidConfig(format!(
                        "barrier spec {other:?}: expected none|straight|turn|ckpt=<path>|mf=<v>,<d>"
                    )))
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::None => "none".into(),
            Self::Straight => "straight".into(),
            Self::Turn => "turn".into(),
            Self::Checkpoint(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "learned".into()),
            Self::ModelFree(p, _) => format!(
                "mf_{}",
                p.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "learned".into())
            ),
        }
    }
}

type BoxedBarrier = Box<DynBarrier<JointState, ControlInput>>;

/// Build the barrier a spec names; `None` yields no barrier.
pub fn build_barrier(cfg: &RunConfig, spec: &BarrierSpec) -> Result<Option<BoxedBarrier>> {
    let plant = cfg.plant()?;
    let margin = cfg.safety_margin()?;
    let bounds = cfg.control_bounds();
    match spec {
        BarrierSpec::None => Ok(None),
        BarrierSpec::Straight => {
            let gamma = gamma_straight(cfg.v_fixed, cfg.v_fixed, cfg.zeta_fixed, cfg.zeta_fixed, &bounds)?;
            Ok(Some(Box::new(RolloutBarrier::new(
                plant,
                gamma,
                margin,
                cfg.barrier_horizon,
            ))))
        }
        BarrierSpec::Turn => {
            // Strongest turn available in the action menu, so the
            // maneuver itself is always selectable by the filter.
            let omega = cfg
                .omega_choices_rad()
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max);
            let gamma = gamma_turn(1.0, cfg.v_fixed, omega, &bounds)?;
            Ok(Some(Box::new(RolloutBarrier::new(
                plant,
                gamma,
                margin,
                cfg.barrier_horizon,
            ))))
        }
        BarrierSpec::Checkpoint(path) => {
            let model = load_checkpoint(path)?;
            Ok(Some(Box::new(LearnedBarrier::hybrid(
                model,
                plant,
                cfg.n_sigma,
                cfg.barrier_mc(),
            )?)))
        }
        BarrierSpec::ModelFree(value_path, delta_path) => {
            let value = load_checkpoint(value_path)?;
            let delta = load_checkpoint(delta_path)?;
            Ok(Some(Box::new(LearnedBarrier::<FwUavPlant>::model_free(
                value,
                delta,
                cfg.action_set()?,
                cfg.n_sigma,
                cfg.barrier_mc(),
            )?)))
        }
    }
}

fn nominal_policy(cfg: &RunConfig) -> WaypointPolicy {
    WaypointPolicy::new(
        cfg.action_choices(),
        cfg.dt,
        WaypointScheme::OtherStart {
            capture_radius: cfg.capture_radius,
        },
    )
}

fn expand_config(cfg: &RunConfig) -> Result<ExpandConfig<ControlInput>> {
    Ok(ExpandConfig {
        filter: cfg.filter_config()?,
        train: cfg.train_config(),
        target_clip: Some(cfg.clip),
        record_deltas: cfg.record_deltas,
        angle_dims: ANGLE_DIMS.to_vec(),
        angle_mode: cfg.angle_mode(),
        relative: cfg
            .relative_features
            .then(|| RelativePose::fw_uav(RELATIVE_SCALE)),
    })
}

fn write_meta(dir_or_file: &Path, cfg: &RunConfig, command: &str) -> Result<()> {
    let meta_path = if dir_or_file.is_dir() {
        dir_or_file.join("meta.json")
    } else {
        let mut name = dir_or_file
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into());
        name.push_str(".meta.json");
        dir_or_file.with_file_name(name)
    };
    let meta = serde_json::json!({
        "command": command,
        "config_hash": cfg.content_hash(),
        "seed": cfg.seed,
        "version": env!("CARGO_PKG_VERSION"),
    });
    std::fs::write(meta_path, serde_json::to_string_pretty(&meta).unwrap() + "\n")?;
    Ok(())
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

/// Generate the initial dataset: nominal-only waypoint episodes from
/// sampled starts, recorded as rollout (and optionally one-step) samples.
pub fn cmd_generate(cfg: &RunConfig, out_path: &Path, episodes: Option<usize>) -> Result<()> {
    cfg.validate()?;
    let plant = cfg.plant()?;
    let margin = cfg.safety_margin()?;
    let sampler = cfg.sampler(seeds::derive(cfg.seed, 10))?;
    let policy = nominal_policy(cfg);
    let n = episodes.unwrap_or(cfg.initial_episodes);
    let data = generate_dataset(
        &plant,
        &margin,
        &policy,
        crate::learning::no_filter(),
        &sampler,
        n,
        cfg.episode_steps,
        cfg.record_deltas,
    )?;
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_dataset_csv(out_path, &data)?;
    write_meta(out_path, cfg, "generate")?;
    println!(
        "generate: wrote {} episodes to {} (deltas: {})",
        data.samples.len(),
        out_path.display(),
        data.deltas.is_some()
    );
    Ok(())
}

struct MetricsWriter {
    file: std::fs::File,
}

impl MetricsWriter {
    fn create(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "iteration,val_loss,overprediction_pct,unsafe_cells")?;
        Ok(Self { file })
    }

    fn row(&mut self, iteration: usize, val_loss: f64, overpred: f64, unsafe_cells: usize) -> Result<()> {
        writeln!(
            self.file,
            "{iteration},{val_loss},{},{unsafe_cells}",
            100.0 * overpred
        )?;
        Ok(())
    }
}

/// Unsafe-cell count of the four standard grids under a barrier.
pub fn standard_unsafe_cells(barrier: &DynBarrier<JointState, ControlInput>) -> Result<usize> {
    let mut total = 0;
    for (_, heading) in GridSpec::canonical_headings() {
        total += grid_unsafe_set(barrier, &GridSpec::standard(heading))?.unsafe_count();
    }
    Ok(total)
}

fn hybrid_from_model(cfg: &RunConfig, model: MlpRegressor) -> Result<LearnedBarrier<FwUavPlant>> {
    LearnedBarrier::hybrid(model, cfg.plant()?, cfg.n_sigma, cfg.barrier_mc())
}

/// Fit the initial barrier model from a generated dataset; writes
/// `h0.ckpt` (plus `h0_delta.ckpt` when one-step samples are present) and
/// a one-row metrics CSV.
pub fn cmd_train(cfg: &RunConfig, dataset_path: &Path, out_dir: &Path) -> Result<()> {
    cfg.validate()?;
    ensure_dir(out_dir)?;
    let data: EpisodeDataset = read_dataset_csv(dataset_path)?;
    if data.samples.len() < 2 {
        return Err(Error::InvalidData("dataset has fewer than 2 rows".into()));
    }
    let encoder = state_encoder(cfg, 0)?;
    let clip = cfg.clip;
    let rows: Vec<TrainRow> = data
        .samples
        .iter()
        .map(|s| TrainRow {
            x: s.x0.clone(),
            action: None,
            target: s.rho_min.clamp(-clip, clip),
        })
        .collect();
    let train_cfg = cfg.train_config();
    let delta_rows: Vec<TrainRow> = data
        .deltas
        .as_deref()
        .unwrap_or(&[])
        .iter()
        .filter_map(|d| {
            d.u_index.map(|a| TrainRow {
                x: d.x0.clone(),
                action: Some(a),
                target: d.rho_min_tail.clamp(-clip, clip),
            })
        })
        .collect();
    let fit_value = || fit_regressor(&rows, encoder, &train_cfg);
    let fit_delta = || -> Result<Option<(MlpRegressor, crate::learning::TrainReport)>> {
        if delta_rows.len() < 2 {
            return Ok(None);
        }
        let delta_encoder = state_encoder(cfg, cfg.action_set()?.len())?;
        let mut delta_cfg = train_cfg.clone();
        delta_cfg.seed = seeds::derive(train_cfg.seed, 0xD17A);
        Ok(Some(fit_regressor(&delta_rows, delta_encoder, &delta_cfg)?))
    };
    let (value_res, delta_res) = rayon::join(fit_value, fit_delta);
    let (model, report) = value_res?;
    let delta = delta_res?;

    save_checkpoint(&model, &out_dir.join("h0.ckpt"))?;
    if let Some((dm, _)) = &delta {
        save_checkpoint(dm, &out_dir.join("h0_delta.ckpt"))?;
    }
    let barrier = hybrid_from_model(cfg, model)?;
    let cells = standard_unsafe_cells(&barrier)?;
    let mut metrics = MetricsWriter::create(&out_dir.join("metrics.csv"))?;
    metrics.row(0, report.final_val_loss, report.overprediction_rate, cells)?;
    write_meta(out_dir, cfg, "train")?;
    println!(
        "train: val loss {:.4}, over-prediction {:.2}%, unsafe cells {}",
        report.final_val_loss,
        100.0 * report.overprediction_rate,
        cells
    );
    Ok(())
}

fn save_iteration(out_dir: &Path, i: usize, expansion: &Expansion) -> Result<()> {
    save_checkpoint(&expansion.value_model, &out_dir.join(format!("iter_{i}.ckpt")))?;
    if let Some(dm) = &expansion.delta_model {
        save_checkpoint(dm, &out_dir.join(format!("iter_{i}_delta.ckpt")))?;
    }
    write_dataset_csv(&out_dir.join(format!("dataset_{i}.csv")), &expansion.dataset)?;
    Ok(())
}

/// Run max-target expansion rounds, one checkpoint and metrics row per
/// round. `resume` continues from a saved round using that round's
/// checkpoint as the barrier; the derived per-round seeds make resumed
/// rounds identical to a full run.
pub fn cmd_iterate(
    cfg: &RunConfig,
    h0: &BarrierSpec,
    out_dir: &Path,
    resume: Option<(usize, &Path)>,
) -> Result<()> {
    cfg.validate()?;
    if *h0 == BarrierSpec::None {
        return Err(Error::InvalidConfig("iterate needs a starting barrier".into()));
    }
    ensure_dir(out_dir)?;
    let plant = cfg.plant()?;
    let margin = cfg.safety_margin()?;
    let nominal = nominal_policy(cfg);
    let ex_cfg = expand_config(cfg)?;

    let (start_round, mut current): (usize, BoxedBarrier) = match resume {
        None => (0, build_barrier(cfg, h0)?.expect("checked above")),
        Some((i, path)) => {
            let model = load_checkpoint(path)?;
            (i, Box::new(hybrid_from_model(cfg, model)?))
        }
    };

    let mut metrics = MetricsWriter::create(&out_dir.join("metrics.csv"))?;
    for i in (start_round + 1)..=cfg.iterations {
        let (sampler_seed, train_seed) = iteration_seeds(cfg.seed, i);
        let sampler = cfg.sampler(sampler_seed)?;
        let mut round_cfg = ex_cfg.clone();
        round_cfg.train.seed = train_seed;
        let expansion = expand_safe_set_with_max(
            current.as_ref(),
            &margin,
            cfg.episodes_per_iteration,
            &nominal,
            cfg.episode_steps,
            &plant,
            &sampler,
            &round_cfg,
        )?;
        save_iteration(out_dir, i, &expansion)?;
        let barrier = hybrid_from_model(cfg, expansion.value_model.clone())?;
        let cells = standard_unsafe_cells(&barrier)?;
        metrics.row(
            i,
            expansion.value_report.final_val_loss,
            expansion.value_report.overprediction_rate,
            cells,
        )?;
        println!(
            "iterate {i}: val loss {:.4}, over-prediction {:.2}%, unsafe cells {}",
            expansion.value_report.final_val_loss,
            100.0 * expansion.value_report.overprediction_rate,
            cells
        );
        current = Box::new(barrier);
    }
    write_meta(out_dir, cfg, "iterate")?;
    Ok(())
}

/// Compare barrier variants on paired episode starts; writes the rate
/// table plus one episode CSV per variant.
pub fn cmd_evaluate(cfg: &RunConfig, variant_specs: &[BarrierSpec], out_dir: &Path) -> Result<()> {
    cfg.validate()?;
    if variant_specs.is_empty() {
        return Err(Error::InvalidConfig("evaluate needs at least one variant".into()));
    }
    ensure_dir(out_dir)?;
    let plant = cfg.plant()?;
    let built: Vec<(String, Option<BoxedBarrier>)> = variant_specs
        .iter()
        .map(|s| Ok((s.label(), build_barrier(cfg, s)?)))
        .collect::<Result<_>>()?;
    let variants: Vec<(String, Option<&DynBarrier<JointState, ControlInput>>)> = built
        .iter()
        .map(|(n, b)| (n.clone(), b.as_ref().map(|x| x.as_ref())))
        .collect();
    let eval_cfg = EvalConfig {
        episodes: cfg.eval_episodes,
        steps: cfg.episode_steps,
        choices: cfg.action_choices(),
        filter: cfg.filter_config()?,
        ds: cfg.ds,
        sampler: cfg.sampler(seeds::derive(cfg.seed, 20))?,
        capture_radius: cfg.capture_radius,
        max_reject_factor: 1000,
    };
    let reports = evaluate_collision_rates(&plant, &variants, &eval_cfg)?;

    let table = out_dir.join("rates.csv");
    let mut w = std::fs::File::create(&table)?;
    writeln!(
        w,
        "variant,episodes,collisions,rate_pct,wilson_lo_pct,wilson_hi_pct,override_steps,infeasible_episodes"
    )?;
    for r in &reports {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.name,
            r.episodes,
            r.collisions,
            r.rate_pct,
            r.wilson_lo_pct,
            r.wilson_hi_pct,
            r.override_steps,
            r.infeasible_episodes
        )?;
        write_episode_csv(&out_dir.join(format!("episodes_{}.csv", r.name)), &r.rows)?;
        println!(
            "evaluate {}: {:.2}% collisions ({} of {}), overrides {}, infeasible episodes {}",
            r.name, r.rate_pct, r.collisions, r.episodes, r.override_steps, r.infeasible_episodes
        );
    }
    write_meta(out_dir, cfg, "evaluate")?;
    Ok(())
}

/// Evaluate a barrier over the four standard grids, one CSV per heading.
pub fn cmd_grid(cfg: &RunConfig, spec: &BarrierSpec, out_dir: &Path) -> Result<()> {
    cfg.validate()?;
    let barrier = build_barrier(cfg, spec)?
        .ok_or_else(|| Error::InvalidConfig("grid needs a barrier".into()))?;
    ensure_dir(out_dir)?;
    for (name, heading) in GridSpec::canonical_headings() {
        let grid = grid_unsafe_set(barrier.as_ref(), &GridSpec::standard(heading))?;
        let path = out_dir.join(format!("grid_{name}.csv"));
        grid.write_csv(&path)?;
        println!(
            "grid {name}: {} unsafe of {} cells -> {}",
            grid.unsafe_count(),
            grid.values.len(),
            path.display()
        );
    }
    write_meta(out_dir, cfg, "grid")?;
    Ok(())
}

/// Run a named scenario once and write its trajectory and summary.
pub fn cmd_scenario(
    cfg: &RunConfig,
    name: &str,
    separation: Option<f64>,
    spec: &BarrierSpec,
    out_dir: &Path,
) -> Result<()> {
    cfg.validate()?;
    let plant = cfg.plant()?;
    let barrier = build_barrier(cfg, spec)?;
    let mut episode = scenario(
        name,
        separation,
        cfg.action_choices(),
        cfg.filter_config()?,
        cfg.ds,
        cfg.episode_steps,
        cfg.capture_radius,
    )?;
    episode.record_trajectory = true;
    let result = run_episode(&episode, &plant, barrier.as_ref().map(|b| b.as_ref()))?;
    ensure_dir(out_dir)?;

    let traj_path = out_dir.join("trajectory.csv");
    let mut w = std::fs::File::create(&traj_path)?;
    writeln!(w, "step,x1,y1,theta1,z1,x2,y2,theta2,z2,distance")?;
    for (k, s) in result.trajectory.as_deref().unwrap_or(&[]).iter().enumerate() {
        let [a, b] = &s.vehicles;
        writeln!(
            w,
            "{k},{},{},{},{},{},{},{},{},{}",
            a.px,
            a.py,
            a.theta,
            a.pz,
            b.px,
            b.py,
            b.theta,
            b.pz,
            s.separation()
        )?;
    }
    let mut sw = std::fs::File::create(out_dir.join("summary.csv"))?;
    writeln!(sw, "scenario,barrier,min_distance,collided,override_count,infeasible_count")?;
    writeln!(
        sw,
        "{name},{},{},{},{},{}",
        spec.label(),
        result.min_distance,
        result.collided as u8,
        result.override_count,
        result.infeasible_count
    )?;
    write_meta(out_dir, cfg, "scenario")?;
    println!(
        "scenario {name} ({}): min distance {:.2}, collided {}, overrides {}, infeasible {}",
        spec.label(),
        result.min_distance,
        result.collided,
        result.override_count,
        result.infeasible_count
    );
    Ok(())
}
