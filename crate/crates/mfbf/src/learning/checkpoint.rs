//! Plain-text model checkpoints.
//!
//! Layout (line oriented, space separated, floats printed in shortest
//! round-trip form so reload is bit exact):
//!
//! ```text
//! mlp-regressor v1
//! layer_sizes: <d h1 ... 1>
//! dropout: <rate>
//! seed: <u64>
//! angle_mode: raw|cos_sin
//! angle_dims: <i ...>
//! relative: none | <pa0 pa1 ha pb0 pb1 hb scale>
//! action_count: <k>
//! norm_lo: <f ...>
//! norm_hi: <f ...>
//! layer <l> weights:
//! <fan_in rows of fan_out floats>
//! layer <l> bias:
//! <fan_out floats>
//! ```

use crate::error::{Error, Result};
use crate::learning::mlp::{AngleMode, InputEncoder, MlpRegressor, RelativePose};
use ndarray::{Array1, Array2};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

const MAGIC: &str = "mlp-regressor v1";

pub fn save_checkpoint(model: &MlpRegressor, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{MAGIC}")?;
    let sizes: Vec<String> = model.layer_sizes().iter().map(|s| s.to_string()).collect();
    writeln!(w, "layer_sizes: {}", sizes.join(" "))?;
    writeln!(w, "dropout: {}", model.dropout())?;
    writeln!(w, "seed: {}", model.seed())?;
    let enc = model.encoder();
    let mode = match enc.angle_mode {
        AngleMode::Raw => "raw",
        AngleMode::CosSin => "cos_sin",
    };
    writeln!(w, "angle_mode: {mode}")?;
    let dims: Vec<String> = enc.angle_dims.iter().map(|d| d.to_string()).collect();
    writeln!(w, "angle_dims: {}", dims.join(" "))?;
    match &enc.relative {
        None => writeln!(w, "relative: none")?,
        Some(r) => writeln!(
            w,
            "relative: {} {} {} {} {} {} {}",
            r.pos_a[0], r.pos_a[1], r.heading_a, r.pos_b[0], r.pos_b[1], r.heading_b, r.scale
        )?,
    }
    writeln!(w, "action_count: {}", enc.action_count)?;
    writeln!(w, "norm_lo: {}", join_floats(&enc.lo))?;
    writeln!(w, "norm_hi: {}", join_floats(&enc.hi))?;
    let (weights, biases) = model.weights();
    for (l, (wm, b)) in weights.iter().zip(biases.iter()).enumerate() {
        writeln!(w, "layer {l} weights:")?;
        for row in wm.rows() {
            writeln!(w, "{}", join_floats(row.as_slice().unwrap()))?;
        }
        writeln!(w, "layer {l} bias:")?;
        writeln!(w, "{}", join_floats(b.as_slice().unwrap()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MlpRegressor> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut lines = reader.lines();
    let perr = |msg: String| Error::Parse {
        path: path.display().to_string(),
        msg,
    };
    let mut next_line = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| perr("unexpected end of file".into()))?
            .map_err(Error::Io)
    };

    if next_line()?.trim() != MAGIC {
        return Err(perr(format!("not a {MAGIC} checkpoint")));
    }
    let sizes = parse_tagged::<usize>(&next_line()?, "layer_sizes", path)?;
    if sizes.len() < 2 {
        return Err(perr("need at least input and output layers".into()));
    }
    let dropout = parse_tagged::<f64>(&next_line()?, "dropout", path)?
        .first()
        .copied()
        .ok_or_else(|| perr("missing dropout".into()))?;
    let seed = parse_tagged::<u64>(&next_line()?, "seed", path)?
        .first()
        .copied()
        .ok_or_else(|| perr("missing seed".into()))?;
    let mode_line = next_line()?;
    let mode_str = strip_tag(&mode_line, "angle_mode", path)?;
    let angle_mode = match mode_str.trim() {
        "raw" => AngleMode::Raw,
        "cos_sin" => AngleMode::CosSin,
        other => return Err(perr(format!("unknown angle mode {other:?}"))),
    };
    let angle_dims = parse_tagged::<usize>(&next_line()?, "angle_dims", path)?;
    let rel_line = next_line()?;
    let rel_body = strip_tag(&rel_line, "relative", path)?.trim().to_string();
    let action_count = parse_tagged::<usize>(&next_line()?, "action_count", path)?
        .first()
        .copied()
        .ok_or_else(|| perr("missing action_count".into()))?;
    let lo = parse_tagged::<f64>(&next_line()?, "norm_lo", path)?;
    let hi = parse_tagged::<f64>(&next_line()?, "norm_hi", path)?;
    let mut encoder = InputEncoder::new(lo, hi, angle_dims, angle_mode, action_count)?;
    if rel_body != "none" {
        let parts: Vec<&str> = rel_body.split_whitespace().collect();
        if parts.len() != 7 {
            return Err(perr("relative block needs 6 indices and a scale".into()));
        }
        let idx = |i: usize| -> Result<usize> {
            parts[i].parse().map_err(|e| perr(format!("relative: {e}")))
        };
        let scale: f64 = parts[6].parse().map_err(|e| perr(format!("relative: {e}")))?;
        encoder = encoder.with_relative(RelativePose {
            pos_a: [idx(0)?, idx(1)?],
            heading_a: idx(2)?,
            pos_b: [idx(3)?, idx(4)?],
            heading_b: idx(5)?,
            scale,
        })?;
    }

    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..sizes.len() - 1 {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let header = next_line()?;
        if header.trim() != format!("layer {l} weights:") {
            return Err(perr(format!("expected layer {l} weights, got {header:?}")));
        }
        let mut data = Vec::with_capacity(fan_in * fan_out);
        for _ in 0..fan_in {
            let row = parse_floats(&next_line()?, path)?;
            if row.len() != fan_out {
                return Err(perr(format!("layer {l}: row width {} != {fan_out}", row.len())));
            }
            data.extend_from_slice(&row);
        }
        weights.push(
            Array2::from_shape_vec((fan_in, fan_out), data)
                .map_err(|e| perr(format!("layer {l}: {e}")))?,
        );
        let header = next_line()?;
        if header.trim() != format!("layer {l} bias:") {
            return Err(perr(format!("expected layer {l} bias, got {header:?}")));
        }
        let b = parse_floats(&next_line()?, path)?;
        if b.len() != fan_out {
            return Err(perr(format!("layer {l}: bias width {} != {fan_out}", b.len())));
        }
        biases.push(Array1::from_vec(b));
    }
    MlpRegressor::from_parts(encoder, weights, biases, dropout, seed)
}

fn join_floats(vals: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in vals.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(&format!("{v}"));
    }
    s
}

fn strip_tag<'a>(line: &'a str, tag: &str, path: &Path) -> Result<&'a str> {
    line.strip_prefix(&format!("{tag}:"))
        .ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            msg: format!("expected `{tag}:` line, got {line:?}"),
        })
}

fn parse_tagged<T: std::str::FromStr>(line: &str, tag: &str, path: &Path) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let body = strip_tag(line, tag, path)?;
    body.split_whitespace()
        .map(|tok| {
            tok.parse::<T>().map_err(|e| Error::Parse {
                path: path.display().to_string(),
                msg: format!("{tag}: {e}"),
            })
        })
        .collect()
}

fn parse_floats(line: &str, path: &Path) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|e| Error::Parse {
                path: path.display().to_string(),
                msg: e.to_string(),
            })
        })
        .collect()
}
