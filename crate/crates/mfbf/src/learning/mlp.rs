//! Feed-forward regressor with Monte-Carlo dropout uncertainty.
//!
//! The network is a plain MLP (ReLU hidden layers, linear scalar output)
//! trained with minibatch SGD on squared error. Uncertainty comes from
//! keeping dropout active at prediction time: the sample standard
//! deviation over stochastic forward passes is the `σ` that conservative
//! barrier values subtract.
//!
//! Dropout mask streams are derived from the model seed and the *bits of
//! the input*, so a prediction is a deterministic function of
//! `(model, input)` no matter how calls are batched or scheduled.

use crate::dynamics::FlatState;
use crate::error::{Error, Result};
use crate::seeds;
use ndarray::{Array1, Array2, Axis, Zip};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// How heading-like dimensions enter the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleMode {
    /// Normalized raw angle only.
    Raw,
    /// Normalized raw angle plus appended `(cos θ, sin θ)` features,
    /// removing the wrap discontinuity.
    CosSin,
}

/// Relative-frame feature block for states holding two planar poses:
/// the second pose expressed in the first pose's frame, the relative
/// heading, and the range. These features are invariant to global
/// translation and rotation, which matches how the rollout targets
/// behave and makes them far easier to fit at small network sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub pos_a: [usize; 2],
    pub heading_a: usize,
    pub pos_b: [usize; 2],
    pub heading_b: usize,
    /// Length normalization for positions and range.
    pub scale: f64,
}

impl RelativePose {
    /// Layout of the two-vehicle joint state `(x1,y1,th1,z1,x2,y2,th2,z2)`.
    pub fn fw_uav(scale: f64) -> Self {
        Self {
            pos_a: [0, 1],
            heading_a: 2,
            pos_b: [4, 5],
            heading_b: 6,
            scale,
        }
    }

    const FEATURES: usize = 5;

    fn encode_into(&self, raw: &[f64], out: &mut [f64]) {
        let dx = raw[self.pos_b[0]] - raw[self.pos_a[0]];
        let dy = raw[self.pos_b[1]] - raw[self.pos_a[1]];
        let (sin_a, cos_a) = raw[self.heading_a].sin_cos();
        let dth = raw[self.heading_b] - raw[self.heading_a];
        out[0] = (cos_a * dx + sin_a * dy) / self.scale;
        out[1] = (-sin_a * dx + cos_a * dy) / self.scale;
        out[2] = dth.cos();
        out[3] = dth.sin();
        out[4] = (dx * dx + dy * dy).sqrt() / self.scale;
    }
}

/// Maps raw state vectors (plus an optional discrete-action index) to
/// network inputs: per-dimension affine normalization to `[-1, 1]` against
/// the sampling bounds, optional cos/sin features for angles, an optional
/// relative-frame block, and a one-hot block for the action.
#[derive(Debug, Clone, PartialEq)]
pub struct InputEncoder {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub angle_dims: Vec<usize>,
    pub angle_mode: AngleMode,
    pub relative: Option<RelativePose>,
    /// Size of the trailing action one-hot block; 0 for state-only models.
    pub action_count: usize,
}

impl InputEncoder {
    pub fn new(
        lo: Vec<f64>,
        hi: Vec<f64>,
        angle_dims: Vec<usize>,
        angle_mode: AngleMode,
        action_count: usize,
    ) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "encoder bounds have lengths {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        for (i, (l, h)) in lo.iter().zip(hi.iter()).enumerate() {
            if !(l.is_finite() && h.is_finite() && l <= h) {
                return Err(Error::InvalidConfig(format!(
                    "sampler bounds for dim {i} must be finite with lo <= hi, got [{l}, {h}]"
                )));
            }
        }
        for &d in &angle_dims {
            if d >= lo.len() {
                return Err(Error::DimensionMismatch(format!(
                    "angle dim {d} out of range for {}-dim state",
                    lo.len()
                )));
            }
        }
        Ok(Self {
            lo,
            hi,
            angle_dims,
            angle_mode,
            relative: None,
            action_count,
        })
    }

    pub fn with_relative(mut self, relative: RelativePose) -> Result<Self> {
        let dims = [
            relative.pos_a[0],
            relative.pos_a[1],
            relative.heading_a,
            relative.pos_b[0],
            relative.pos_b[1],
            relative.heading_b,
        ];
        if dims.iter().any(|&d| d >= self.raw_dim()) {
            return Err(Error::DimensionMismatch(
                "relative-pose dims out of range".into(),
            ));
        }
        if !(relative.scale > 0.0 && relative.scale.is_finite()) {
            return Err(Error::InvalidConfig("relative scale must be > 0".into()));
        }
        self.relative = Some(relative);
        Ok(self)
    }

    /// Convenience constructor for a state type's heading layout.
    pub fn for_state<S: FlatState>(
        lo: Vec<f64>,
        hi: Vec<f64>,
        angle_dims: Vec<usize>,
        angle_mode: AngleMode,
        action_count: usize,
    ) -> Result<Self> {
        if lo.len() != S::DIM {
            return Err(Error::DimensionMismatch(format!(
                "bounds have {} dims, state has {}",
                lo.len(),
                S::DIM
            )));
        }
        Self::new(lo, hi, angle_dims, angle_mode, action_count)
    }

    pub fn raw_dim(&self) -> usize {
        self.lo.len()
    }

    pub fn encoded_dim(&self) -> usize {
        let angles = match self.angle_mode {
            AngleMode::Raw => 0,
            AngleMode::CosSin => 2 * self.angle_dims.len(),
        };
        let relative = if self.relative.is_some() {
            RelativePose::FEATURES
        } else {
            0
        };
        self.raw_dim() + angles + relative + self.action_count
    }

    /// Affine map of a raw dimension into `[-1, 1]`; degenerate bounds
    /// collapse to 0.
    fn normalize_dim(&self, i: usize, x: f64) -> f64 {
        let (l, h) = (self.lo[i], self.hi[i]);
        if h > l {
            2.0 * (x - l) / (h - l) - 1.0
        } else {
            0.0
        }
    }

    pub fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(i, &x)| self.normalize_dim(i, x))
            .collect()
    }

    pub fn denormalize(&self, norm: &[f64]) -> Vec<f64> {
        norm.iter()
            .enumerate()
            .map(|(i, &v)| {
                let (l, h) = (self.lo[i], self.hi[i]);
                if h > l {
                    l + (v + 1.0) / 2.0 * (h - l)
                } else {
                    l
                }
            })
            .collect()
    }

    /// Encode into a preallocated row of length [`InputEncoder::encoded_dim`].
    pub fn encode_into(&self, raw: &[f64], action: Option<usize>, out: &mut [f64]) {
        debug_assert_eq!(raw.len(), self.raw_dim());
        debug_assert_eq!(out.len(), self.encoded_dim());
        let mut k = 0;
        for (i, &x) in raw.iter().enumerate() {
            out[k] = self.normalize_dim(i, x);
            k += 1;
        }
        if self.angle_mode == AngleMode::CosSin {
            for &d in &self.angle_dims {
                out[k] = raw[d].cos();
                out[k + 1] = raw[d].sin();
                k += 2;
            }
        }
        if let Some(rel) = &self.relative {
            rel.encode_into(raw, &mut out[k..k + RelativePose::FEATURES]);
            k += RelativePose::FEATURES;
        }
        for slot in out[k..].iter_mut() {
            *slot = 0.0;
        }
        if let Some(a) = action {
            debug_assert!(a < self.action_count, "action index out of range");
            out[k + a] = 1.0;
        }
    }
}

/// Gradient update rule. The momentum field of [`TrainConfig`] only
/// applies to `Sgd`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Hyperparameters for [`fit_regressor`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden_layers: Vec<usize>,
    pub learning_rate: f64,
    /// Classical momentum; 0 gives plain SGD.
    pub momentum: f64,
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    /// Stochastic forward passes per σ estimate.
    pub mc_samples: usize,
    /// Standard deviations subtracted for conservative predictions.
    pub n_sigma: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![128, 128],
            learning_rate: 1e-4,
            momentum: 0.0,
            optimizer: Optimizer::Sgd,
            epochs: 2000,
            batch_size: 256,
            dropout: 0.5,
            mc_samples: 50,
            n_sigma: 3.0,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers.is_empty() || self.hidden_layers.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig("hidden layers must be nonempty".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must be in [0, 1)".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig("dropout must be in [0, 1)".into()));
        }
        if self.mc_samples < 2 {
            return Err(Error::InvalidConfig("mc_samples must be >= 2".into()));
        }
        if self.n_sigma < 0.0 {
            return Err(Error::InvalidConfig("n_sigma must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidConfig(
                "validation fraction must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Per-epoch loss history and validation audit from a fit.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub final_val_loss: f64,
    /// Fraction of validation rows whose conservative prediction
    /// (mean − n_sigma·σ) still exceeds the true target.
    pub overprediction_rate: f64,
    pub train_rows: usize,
    pub val_rows: usize,
}

/// One training row: raw state, optional action index, regression target.
#[derive(Debug, Clone)]
pub struct TrainRow {
    pub x: Vec<f64>,
    pub action: Option<usize>,
    pub target: f64,
}

/// MLP regressor with dropout; immutable once trained.
#[derive(Debug, Clone)]
pub struct MlpRegressor {
    encoder: InputEncoder,
    /// Layer widths including input and output: `[d, h1, ..., 1]`.
    sizes: Vec<usize>,
    /// Per layer, shape `(fan_in, fan_out)`.
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    dropout: f64,
    /// Base seed for prediction-time dropout streams.
    seed: u64,
}

impl MlpRegressor {
    pub fn new_random(encoder: InputEncoder, hidden: &[usize], dropout: f64, seed: u64) -> Self {
        let mut sizes = vec![encoder.encoded_dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, 0x1217));
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            // He-uniform init.
            let bound = (6.0 / fan_in as f64).sqrt();
            let wmat = Array2::from_shape_fn((fan_in, fan_out), |_| {
                rng.random::<f64>() * 2.0 * bound - bound
            });
            weights.push(wmat);
            biases.push(Array1::zeros(fan_out));
        }
        Self {
            encoder,
            sizes,
            weights,
            biases,
            dropout,
            seed,
        }
    }

    /// Reassemble a model from checkpoint parts.
    pub fn from_parts(
        encoder: InputEncoder,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        dropout: f64,
        seed: u64,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::DimensionMismatch("weight/bias layer mismatch".into()));
        }
        let mut sizes = vec![weights[0].nrows()];
        for (i, w) in weights.iter().enumerate() {
            if w.nrows() != sizes[i] {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i} expects fan-in {}, got {}",
                    sizes[i],
                    w.nrows()
                )));
            }
            if biases[i].len() != w.ncols() {
                return Err(Error::DimensionMismatch(format!("bias {i} width mismatch")));
            }
            sizes.push(w.ncols());
        }
        if sizes[0] != encoder.encoded_dim() || *sizes.last().unwrap() != 1 {
            return Err(Error::DimensionMismatch(
                "network does not map encoded input to a scalar".into(),
            ));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidConfig("dropout must be in [0, 1)".into()));
        }
        Ok(Self {
            encoder,
            sizes,
            weights,
            biases,
            dropout,
            seed,
        })
    }

    pub fn encoder(&self) -> &InputEncoder {
        &self.encoder
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub(crate) fn weights(&self) -> (&[Array2<f64>], &[Array1<f64>]) {
        (&self.weights, &self.biases)
    }

    fn hidden_count(&self) -> usize {
        self.weights.len() - 1
    }

    /// Forward pass; `masks[l]`, when given, multiplies the post-ReLU
    /// activations of hidden layer `l` (mask values already carry the
    /// `1/keep` inverted-dropout scale).
    fn forward(&self, input: Array2<f64>, masks: Option<&[Array2<f64>]>) -> Array1<f64> {
        let mut a = input;
        for l in 0..self.weights.len() {
            let mut z = a.dot(&self.weights[l]) + &self.biases[l];
            if l < self.hidden_count() {
                z.mapv_inplace(|v| v.max(0.0));
                if let Some(ms) = masks {
                    z *= &ms[l];
                }
            }
            a = z;
        }
        a.index_axis_move(Axis(1), 0)
    }

    fn encode_rows(&self, raws: &[f64], actions: Option<&[usize]>) -> Array2<f64> {
        let rd = self.encoder.raw_dim();
        assert_eq!(raws.len() % rd, 0, "raw buffer must be a whole number of rows");
        let n = raws.len() / rd;
        let d = self.encoder.encoded_dim();
        let mut out = Array2::zeros((n, d));
        for i in 0..n {
            let action = actions.map(|a| a[i]);
            self.encoder.encode_into(
                &raws[i * rd..(i + 1) * rd],
                action,
                out.row_mut(i).as_slice_mut().unwrap(),
            );
        }
        out
    }

    /// Deterministic (dropout-off) prediction.
    pub fn predict(&self, raw: &[f64], action: Option<usize>) -> f64 {
        let x = self.encode_rows(raw, action.map(|a| vec![a]).as_deref());
        self.forward(x, None)[0]
    }

    /// Deterministic predictions for rows packed in a flat buffer.
    pub fn predict_rows(&self, raws: &[f64], actions: Option<&[usize]>) -> Vec<f64> {
        let x = self.encode_rows(raws, actions);
        self.forward(x, None).to_vec()
    }

    /// Monte-Carlo dropout statistics for rows packed in a flat buffer:
    /// `(mean, sample σ)` over `mc` stochastic passes per row. With zero
    /// dropout the passes coincide, so σ is exactly 0 and a single
    /// deterministic pass is used.
    pub fn mc_stats_rows(
        &self,
        raws: &[f64],
        actions: Option<&[usize]>,
        mc: usize,
    ) -> Vec<(f64, f64)> {
        let rd = self.encoder.raw_dim();
        let n = raws.len() / rd;
        if self.dropout == 0.0 || mc <= 1 {
            return self
                .predict_rows(raws, actions)
                .into_iter()
                .map(|m| (m, 0.0))
                .collect();
        }
        let keep = 1.0 - self.dropout;
        let inv_keep = 1.0 / keep;
        let d = self.encoder.encoded_dim();

        // Tile each encoded row mc times.
        let mut tiled = Array2::zeros((n * mc, d));
        let mut row = vec![0.0; d];
        for i in 0..n {
            let action = actions.map(|a| a[i]);
            self.encoder
                .encode_into(&raws[i * rd..(i + 1) * rd], action, &mut row);
            for s in 0..mc {
                tiled.row_mut(i * mc + s).as_slice_mut().unwrap().copy_from_slice(&row);
            }
        }

        // Per-input mask streams, derived from the input bits so results
        // are independent of batch composition.
        let hidden = self.hidden_count();
        let mut masks: Vec<Array2<f64>> = (0..hidden)
            .map(|l| Array2::zeros((n * mc, self.sizes[l + 1])))
            .collect();
        for i in 0..n {
            let tag = actions.map_or(u64::MAX, |a| a[i] as u64);
            let input_hash = seeds::hash_floats(&raws[i * rd..(i + 1) * rd], tag);
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(self.seed, input_hash));
            for mask in masks.iter_mut() {
                for s in 0..mc {
                    for v in mask.row_mut(i * mc + s).iter_mut() {
                        *v = if rng.random::<f64>() < keep { inv_keep } else { 0.0 };
                    }
                }
            }
        }

        let outs = self.forward(tiled, Some(&masks));
        let mut stats = Vec::with_capacity(n);
        for i in 0..n {
            let block = outs.slice(ndarray::s![i * mc..(i + 1) * mc]);
            let mean = block.sum() / mc as f64;
            let var = block.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (mc as f64 - 1.0);
            stats.push((mean, var.sqrt()));
        }
        stats
    }

    /// Conservative predictions `mean − n_sigma·σ` for packed rows.
    pub fn conservative_rows(
        &self,
        raws: &[f64],
        actions: Option<&[usize]>,
        mc: usize,
        n_sigma: f64,
    ) -> Vec<f64> {
        self.mc_stats_rows(raws, actions, mc)
            .into_iter()
            .map(|(m, s)| m - n_sigma * s)
            .collect()
    }
}

/// Mean and sample standard deviation over `mc_samples` stochastic
/// forward passes with dropout active.
pub fn predict_with_uncertainty(model: &MlpRegressor, x: &[f64], mc_samples: usize) -> (f64, f64) {
    model.mc_stats_rows(x, None, mc_samples)[0]
}

/// Fit an MLP to `(x, action, target)` rows with minibatch SGD on mean
/// squared error. Returns the model and per-epoch loss history; the
/// validation split also gets an over-prediction audit of the
/// conservative output.
pub fn fit_regressor(
    rows: &[TrainRow],
    encoder: InputEncoder,
    cfg: &TrainConfig,
) -> Result<(MlpRegressor, TrainReport)> {
    cfg.validate()?;
    if rows.len() < 2 {
        return Err(Error::InvalidData(format!(
            "need at least 2 training rows, got {}",
            rows.len()
        )));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.x.len() != encoder.raw_dim() {
            return Err(Error::DimensionMismatch(format!(
                "row {i} has {} dims, encoder expects {}",
                r.x.len(),
                encoder.raw_dim()
            )));
        }
        if r.x.iter().any(|v| !v.is_finite()) || !r.target.is_finite() {
            return Err(Error::InvalidData(format!("row {i} contains non-finite values")));
        }
        if let Some(a) = r.action {
            if a >= encoder.action_count {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} action index {a} out of range {}",
                    encoder.action_count
                )));
            }
        }
    }

    let n = rows.len();
    let d = encoder.encoded_dim();
    let mut encoded = Array2::zeros((n, d));
    for (i, r) in rows.iter().enumerate() {
        encoder.encode_into(&r.x, r.action, encoded.row_mut(i).as_slice_mut().unwrap());
    }
    let targets: Vec<f64> = rows.iter().map(|r| r.target).collect();

    // Deterministic shuffled split: the first slice validates.
    let mut order: Vec<usize> = (0..n).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, 1));
    order.shuffle(&mut split_rng);
    let n_val = ((n as f64) * cfg.validation_fraction).floor() as usize;
    let n_val = n_val.min(n - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let val_idx = val_idx.to_vec();
    let mut train_idx = train_idx.to_vec();

    let mut model = MlpRegressor::new_random(
        encoder,
        &cfg.hidden_layers,
        cfg.dropout,
        seeds::derive(cfg.seed, 2),
    );
    let layers = model.weights.len();
    let mut vel_w: Vec<Array2<f64>> = model.weights.iter().map(|w| Array2::zeros(w.dim())).collect();
    let mut vel_b: Vec<Array1<f64>> = model.biases.iter().map(|b| Array1::zeros(b.len())).collect();
    // Second moments, used by adam only.
    let mut sq_w: Vec<Array2<f64>> = model.weights.iter().map(|w| Array2::zeros(w.dim())).collect();
    let mut sq_b: Vec<Array1<f64>> = model.biases.iter().map(|b| Array1::zeros(b.len())).collect();
    let mut step_count: u64 = 0;

    let gather = |idx: &[usize]| -> (Array2<f64>, Array1<f64>) {
        let mut x = Array2::zeros((idx.len(), d));
        let mut y = Array1::zeros(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            x.row_mut(r).assign(&encoded.row(i));
            y[r] = targets[i];
        }
        (x, y)
    };
    let (val_x, val_y) = gather(if val_idx.is_empty() { &train_idx } else { &val_idx });

    let keep = 1.0 - cfg.dropout;
    let inv_keep = if keep > 0.0 { 1.0 / keep } else { 0.0 };
    let mut epoch_rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, 3));
    let mut mask_rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, 4));

    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut val_loss = Vec::with_capacity(cfg.epochs);

    for _epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut epoch_rng);
        let mut epoch_se = 0.0;
        for batch in train_idx.chunks(cfg.batch_size) {
            let (bx, by) = gather(batch);
            let b = batch.len() as f64;

            // Forward, keeping pre-activation signs and dropped activations.
            let mut acts: Vec<Array2<f64>> = Vec::with_capacity(layers);
            let mut relu_live: Vec<Array2<f64>> = Vec::with_capacity(layers - 1);
            let mut masks: Vec<Option<Array2<f64>>> = Vec::with_capacity(layers - 1);
            let mut a = bx;
            for l in 0..layers {
                acts.push(a.clone());
                let mut z = a.dot(&model.weights[l]) + &model.biases[l];
                if l < layers - 1 {
                    let live = z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    z.mapv_inplace(|v| v.max(0.0));
                    if cfg.dropout > 0.0 {
                        let m = Array2::from_shape_fn(z.dim(), |_| {
                            if mask_rng.random::<f64>() < keep {
                                inv_keep
                            } else {
                                0.0
                            }
                        });
                        z *= &m;
                        masks.push(Some(m));
                    } else {
                        masks.push(None);
                    }
                    relu_live.push(live);
                }
                a = z;
            }
            let out = a.index_axis_move(Axis(1), 0);
            let err = &out - &by;
            epoch_se += err.iter().map(|e| e * e).sum::<f64>();

            // Backward.
            step_count += 1;
            let mut g = err.mapv(|e| 2.0 * e / b).insert_axis(Axis(1));
            for l in (0..layers).rev() {
                let gw = acts[l].t().dot(&g);
                let gb = g.sum_axis(Axis(0));
                if l > 0 {
                    let mut ga = g.dot(&model.weights[l].t());
                    if let Some(m) = &masks[l - 1] {
                        ga *= m;
                    }
                    ga *= &relu_live[l - 1];
                    g = ga;
                }
                match cfg.optimizer {
                    Optimizer::Sgd => {
                        if cfg.momentum > 0.0 {
                            vel_w[l] *= cfg.momentum;
                            vel_w[l] += &gw;
                            vel_b[l] *= cfg.momentum;
                            vel_b[l] += &gb;
                            model.weights[l].scaled_add(-cfg.learning_rate, &vel_w[l]);
                            model.biases[l].scaled_add(-cfg.learning_rate, &vel_b[l]);
                        } else {
                            model.weights[l].scaled_add(-cfg.learning_rate, &gw);
                            model.biases[l].scaled_add(-cfg.learning_rate, &gb);
                        }
                    }
                    Optimizer::Adam { beta1, beta2, eps } => {
                        let bc1 = 1.0 - beta1.powi(step_count as i32);
                        let bc2 = 1.0 - beta2.powi(step_count as i32);
                        let scale = cfg.learning_rate * bc2.sqrt() / bc1;
                        Zip::from(&mut vel_w[l])
                            .and(&gw)
                            .for_each(|m, &gq| *m = beta1 * *m + (1.0 - beta1) * gq);
                        Zip::from(&mut sq_w[l])
                            .and(&gw)
                            .for_each(|v, &gq| *v = beta2 * *v + (1.0 - beta2) * gq * gq);
                        Zip::from(&mut model.weights[l])
                            .and(&vel_w[l])
                            .and(&sq_w[l])
                            .for_each(|w, &m, &v| *w -= scale * m / (v.sqrt() + eps));
                        Zip::from(&mut vel_b[l])
                            .and(&gb)
                            .for_each(|m, &gq| *m = beta1 * *m + (1.0 - beta1) * gq);
                        Zip::from(&mut sq_b[l])
                            .and(&gb)
                            .for_each(|v, &gq| *v = beta2 * *v + (1.0 - beta2) * gq * gq);
                        Zip::from(&mut model.biases[l])
                            .and(&vel_b[l])
                            .and(&sq_b[l])
                            .for_each(|w, &m, &v| *w -= scale * m / (v.sqrt() + eps));
                    }
                }
            }
        }
        train_loss.push(epoch_se / train_idx.len() as f64);

        let val_pred = model.forward(val_x.clone(), None);
        let vl = val_pred
            .iter()
            .zip(val_y.iter())
            .map(|(p, y)| (p - y) * (p - y))
            .sum::<f64>()
            / val_y.len() as f64;
        val_loss.push(vl);
    }

    // Over-prediction audit on the validation rows.
    let audit_idx: &[usize] = if val_idx.is_empty() { &train_idx } else { &val_idx };
    let rd = model.encoder.raw_dim();
    let mut raw_buf = Vec::with_capacity(audit_idx.len() * rd);
    let mut act_buf = Vec::with_capacity(audit_idx.len());
    let mut has_actions = false;
    for &i in audit_idx {
        raw_buf.extend_from_slice(&rows[i].x);
        if let Some(a) = rows[i].action {
            has_actions = true;
            act_buf.push(a);
        } else {
            act_buf.push(0);
        }
    }
    let cons = model.conservative_rows(
        &raw_buf,
        if has_actions { Some(&act_buf) } else { None },
        cfg.mc_samples,
        cfg.n_sigma,
    );
    let over = audit_idx
        .iter()
        .zip(cons.iter())
        .filter(|(&i, &c)| c > rows[i].target)
        .count();
    let overprediction_rate = over as f64 / audit_idx.len() as f64;

    let final_val_loss = *val_loss.last().unwrap();
    Ok((
        model,
        TrainReport {
            train_loss,
            val_loss,
            final_val_loss,
            overprediction_rate,
            train_rows: train_idx.len(),
            val_rows: val_idx.len(),
        },
    ))
}
