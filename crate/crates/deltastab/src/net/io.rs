//! Plain-text weight files.
//!
//! The format is line-oriented and self-describing so that trained networks
//! can be inspected with ordinary shell tools and diffed meaningfully:
//!
//! ```text
//! deltastab-net 1
//! layers 2
//! activations tanh
//! layer 1 40
//! <40 rows, each `cols` whitespace-separated numbers>
//! bias <rows numbers>
//! layer 40 1   <- wait, rows cols of the SECOND layer
//! ...
//! ```
//!
//! Floats are printed with Rust's shortest-roundtrip formatting, so a
//! write/read cycle reproduces every weight bit for bit. Non-finite values
//! are rejected on both paths: a weight file containing `NaN` is evidence of
//! a corrupted training run and must not propagate silently.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::net::{Activation, FeedforwardNet, Layer};

const MAGIC: &str = "deltastab-net";
const VERSION: u32 = 1;

/// Serializes a network into the text format.
pub fn to_string(net: &FeedforwardNet) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(out, "layers {}", net.layers().len());
    if net.activations().is_empty() {
        let _ = writeln!(out, "activations -");
    } else {
        let tags: Vec<&str> = net.activations().iter().map(|a| a.tag()).collect();
        let _ = writeln!(out, "activations {}", tags.join(" "));
    }
    for (idx, layer) in net.layers().iter().enumerate() {
        let _ = writeln!(out, "layer {} {}", layer.weight.nrows(), layer.weight.ncols());
        for r in 0..layer.weight.nrows() {
            let row: Vec<String> = (0..layer.weight.ncols())
                .map(|c| fmt_f64(layer.weight[(r, c)], &format!("layer {idx} weight")))
                .collect::<Result<_>>()?;
            let _ = writeln!(out, "{}", row.join(" "));
        }
        let bias: Vec<String> = layer
            .bias
            .iter()
            .map(|&b| fmt_f64(b, &format!("layer {idx} bias")))
            .collect::<Result<_>>()?;
        let _ = writeln!(out, "bias {}", bias.join(" "));
    }
    Ok(out)
}

/// Writes a network to a file in the text format.
pub fn save(net: &FeedforwardNet, path: &Path) -> Result<()> {
    let text = to_string(net)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a network from a file in the text format.
pub fn load(path: &Path) -> Result<FeedforwardNet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text, path)
}

/// Parses the text format; `path` is used only for error reporting.
pub fn from_str(text: &str, path: &Path) -> Result<FeedforwardNet> {
    let mut lines = text.lines().enumerate();
    let fail = |line: usize, detail: String| Error::Format {
        path: path.display().to_string(),
        line,
        detail,
    };

    let (n, header) = next_line(&mut lines, path, "header")?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(fail(n, format!("expected `{MAGIC}` magic")));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| fail(n, "missing format version".into()))?;
    if version != VERSION {
        return Err(fail(n, format!("unsupported version {version}, expected {VERSION}")));
    }

    let (n, layers_line) = next_line(&mut lines, path, "layer count")?;
    let layer_count: usize = layers_line
        .strip_prefix("layers ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| fail(n, "expected `layers <count>`".into()))?;
    if layer_count == 0 {
        return Err(fail(n, "a network needs at least one layer".into()));
    }

    let (n, act_line) = next_line(&mut lines, path, "activations")?;
    let act_body = act_line
        .strip_prefix("activations ")
        .ok_or_else(|| fail(n, "expected `activations <tags>`".into()))?;
    let activations: Vec<Activation> = if act_body.trim() == "-" {
        Vec::new()
    } else {
        act_body
            .split_whitespace()
            .map(|tag| {
                Activation::from_tag(tag)
                    .ok_or_else(|| fail(n, format!("unknown activation tag `{tag}`")))
            })
            .collect::<Result<_>>()?
    };
    if activations.len() + 1 != layer_count {
        return Err(fail(
            n,
            format!(
                "{} activation tags do not match {} layers (need layers - 1)",
                activations.len(),
                layer_count
            ),
        ));
    }

    let mut layers = Vec::with_capacity(layer_count);
    for idx in 0..layer_count {
        let (n, dims_line) = next_line(&mut lines, path, "layer header")?;
        let body = dims_line
            .strip_prefix("layer ")
            .ok_or_else(|| fail(n, format!("expected `layer <rows> <cols>` for layer {idx}")))?;
        let mut it = body.split_whitespace();
        let rows: usize = it
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| fail(n, "bad row count".into()))?;
        let cols: usize = it
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| fail(n, "bad column count".into()))?;
        if rows == 0 || cols == 0 {
            return Err(fail(n, "zero-sized layer".into()));
        }

        let mut weight = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            let (n, row_line) = next_line(&mut lines, path, "weight row")?;
            let values = parse_floats(row_line, n, path)?;
            if values.len() != cols {
                return Err(fail(
                    n,
                    format!("weight row has {} values, expected {cols}", values.len()),
                ));
            }
            for (c, v) in values.into_iter().enumerate() {
                weight[(r, c)] = v;
            }
        }

        let (n, bias_line) = next_line(&mut lines, path, "bias")?;
        let bias_body = bias_line
            .strip_prefix("bias ")
            .ok_or_else(|| fail(n, "expected `bias <values>`".into()))?;
        let bias_values = parse_floats(bias_body, n, path)?;
        if bias_values.len() != rows {
            return Err(fail(
                n,
                format!("bias has {} values, expected {rows}", bias_values.len()),
            ));
        }
        layers.push(Layer {
            weight,
            bias: DVector::from_vec(bias_values),
        });
    }

    if let Some((n, extra)) = lines.next() {
        if !extra.trim().is_empty() {
            return Err(fail(n + 1, format!("unexpected trailing content `{extra}`")));
        }
    }

    FeedforwardNet::new(layers, activations)
}

fn next_line<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    path: &Path,
    what: &str,
) -> Result<(usize, &'a str)> {
    for (i, line) in lines.by_ref() {
        if !line.trim().is_empty() {
            return Ok((i + 1, line));
        }
    }
    Err(Error::Format {
        path: path.display().to_string(),
        line: 0,
        detail: format!("file ended while expecting {what}"),
    })
}

fn parse_floats(line: &str, line_no: usize, path: &Path) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            let v: f64 = tok.parse().map_err(|_| Error::Format {
                path: path.display().to_string(),
                line: line_no,
                detail: format!("`{tok}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    line: line_no,
                    detail: format!("non-finite value `{tok}`"),
                });
            }
            Ok(v)
        })
        .collect()
}

fn fmt_f64(v: f64, context: &str) -> Result<String> {
    if !v.is_finite() {
        return Err(Error::InvalidValue {
            name: context.to_string(),
            value: v,
            requirement: "finite weight values".into(),
        });
    }
    Ok(format!("{v}"))
}
