//! On-disk forms of trained artifacts: network weight files and the
//! auxiliary training state.
//!
//! Weight files are plain text — a header naming the architecture followed
//! by one line per matrix row — with floats printed shortest-roundtrip, so
//! a save/load cycle reproduces every parameter bit for bit and the files
//! diff and hash cleanly for provenance.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Activation, FeedforwardNet, Layer};

const MAGIC: &str = "deltastab-weights";
const VERSION: &str = "v1";

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Tanh => "tanh",
        Activation::Softplus => "softplus",
        Activation::Relu => "relu",
        Activation::HardTanh => "hard-tanh",
    }
}

fn activation_from_name(name: &str) -> Option<Activation> {
    match name {
        "tanh" => Some(Activation::Tanh),
        "softplus" => Some(Activation::Softplus),
        "relu" => Some(Activation::Relu),
        "hard-tanh" => Some(Activation::HardTanh),
        _ => None,
    }
}

/// Writes a network as a plain-text weight file.
pub fn save_network(net: &FeedforwardNet, path: &Path) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(out, "layers {}", net.layers().len());
    let _ = write!(out, "activations {}", net.activations().len());
    for a in net.activations() {
        let _ = write!(out, " {}", activation_name(*a));
    }
    out.push('\n');
    for (i, layer) in net.layers().iter().enumerate() {
        let (rows, cols) = layer.weight.shape();
        let _ = writeln!(out, "layer {i} {rows} {cols}");
        for r in 0..rows {
            let mut first = true;
            for c in 0..cols {
                if !first {
                    out.push(' ');
                }
                let _ = write!(out, "{}", layer.weight[(r, c)]);
                first = false;
            }
            out.push('\n');
        }
        let _ = writeln!(out, "bias {i} {rows}");
        let mut first = true;
        for r in 0..rows {
            if !first {
                out.push(' ');
            }
            let _ = write!(out, "{}", layer.bias[r]);
            first = false;
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct LineReader<'a> {
    path: &'a Path,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> LineReader<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        for (idx, line) in self.lines.by_ref() {
            if !line.trim().is_empty() {
                return Ok((idx + 1, line.trim()));
            }
        }
        Err(self.at(0, "unexpected end of file"))
    }

    fn at(&self, line: usize, detail: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.display().to_string(),
            line,
            detail: detail.into(),
        }
    }
}

fn parse_usize(reader: &LineReader, line: usize, tok: &str, what: &str) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| reader.at(line, format!("`{tok}` is not a valid {what}")))
}

fn parse_f64(reader: &LineReader, line: usize, tok: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| reader.at(line, format!("`{tok}` is not a number")))
}

/// Reads a network written by [`save_network`].
pub fn load_network(path: &Path) -> Result<FeedforwardNet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = LineReader {
        path,
        lines: text.lines().enumerate(),
    };

    let (ln, header) = reader.next_line()?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some(MAGIC) || toks.next() != Some(VERSION) {
        return Err(reader.at(ln, format!("expected header `{MAGIC} {VERSION}`")));
    }

    let (ln, line) = reader.next_line()?;
    let mut toks = line.split_whitespace();
    if toks.next() != Some("layers") {
        return Err(reader.at(ln, "expected `layers <count>`"));
    }
    let n_layers = parse_usize(
        &reader,
        ln,
        toks.next().ok_or_else(|| reader.at(ln, "missing layer count"))?,
        "layer count",
    )?;
    if n_layers == 0 {
        return Err(reader.at(ln, "a network needs at least one layer"));
    }

    let (ln, line) = reader.next_line()?;
    let mut toks = line.split_whitespace();
    if toks.next() != Some("activations") {
        return Err(reader.at(ln, "expected `activations <count> <names…>`"));
    }
    let n_act = parse_usize(
        &reader,
        ln,
        toks.next()
            .ok_or_else(|| reader.at(ln, "missing activation count"))?,
        "activation count",
    )?;
    let mut activations = Vec::with_capacity(n_act);
    for _ in 0..n_act {
        let name = toks
            .next()
            .ok_or_else(|| reader.at(ln, "fewer activation names than declared"))?;
        let a = activation_from_name(name)
            .ok_or_else(|| reader.at(ln, format!("unknown activation `{name}`")))?;
        activations.push(a);
    }
    if n_act + 1 != n_layers {
        return Err(reader.at(
            ln,
            format!("{n_layers} layers need {} activations, found {n_act}", n_layers - 1),
        ));
    }

    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let (ln, line) = reader.next_line()?;
        let mut toks = line.split_whitespace();
        if toks.next() != Some("layer") {
            return Err(reader.at(ln, format!("expected `layer {i} <rows> <cols>`")));
        }
        let idx = parse_usize(
            &reader,
            ln,
            toks.next().ok_or_else(|| reader.at(ln, "missing layer index"))?,
            "layer index",
        )?;
        if idx != i {
            return Err(reader.at(ln, format!("expected layer {i}, found {idx}")));
        }
        let rows = parse_usize(
            &reader,
            ln,
            toks.next().ok_or_else(|| reader.at(ln, "missing row count"))?,
            "row count",
        )?;
        let cols = parse_usize(
            &reader,
            ln,
            toks.next().ok_or_else(|| reader.at(ln, "missing column count"))?,
            "column count",
        )?;
        let mut weight = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            let (ln, line) = reader.next_line()?;
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() != cols {
                return Err(reader.at(
                    ln,
                    format!("row has {} values, expected {cols}", vals.len()),
                ));
            }
            for (c, tok) in vals.iter().enumerate() {
                weight[(r, c)] = parse_f64(&reader, ln, tok)?;
            }
        }
        let (ln, line) = reader.next_line()?;
        let mut toks = line.split_whitespace();
        if toks.next() != Some("bias") {
            return Err(reader.at(ln, format!("expected `bias {i} <rows>`")));
        }
        let _ = toks.next();
        let brows = parse_usize(
            &reader,
            ln,
            toks.next().ok_or_else(|| reader.at(ln, "missing bias length"))?,
            "bias length",
        )?;
        if brows != rows {
            return Err(reader.at(
                ln,
                format!("bias length {brows} does not match {rows} rows"),
            ));
        }
        let (ln, line) = reader.next_line()?;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != rows {
            return Err(reader.at(
                ln,
                format!("bias line has {} values, expected {rows}", vals.len()),
            ));
        }
        let mut bias = DVector::zeros(rows);
        for (r, tok) in vals.iter().enumerate() {
            bias[r] = parse_f64(&reader, ln, tok)?;
        }
        layers.push(Layer { weight, bias });
    }
    FeedforwardNet::new(layers, activations)
}

/// Auxiliary training state that the verifier needs alongside the weight
/// files: the trained margin and the spectral multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedAux {
    /// Trained margin η.
    pub eta: f64,
    /// Multipliers for the certificate network check.
    pub lambda_v: Vec<f64>,
    /// Multipliers for the derivative-surrogate check.
    pub lambda_dv: Vec<f64>,
    /// Multipliers for the controller check.
    pub lambda_c: Vec<f64>,
    /// Whether training confirmed convergence.
    pub converged: bool,
    /// Epochs the run actually executed.
    pub epochs_run: usize,
    /// Final scenario hinge loss.
    #[serde(default)]
    pub loss_main: f64,
    /// Final spectral loss.
    #[serde(default)]
    pub loss_lip: f64,
    /// Final validity loss.
    #[serde(default)]
    pub loss_validity: f64,
}

/// Writes the auxiliary training state as JSON.
pub fn save_trained_aux(aux: &TrainedAux, path: &Path) -> Result<()> {
    let body = serde_json::to_string_pretty(aux).map_err(|e| Error::Config {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Reads the auxiliary training state.
pub fn load_trained_aux(path: &Path) -> Result<TrainedAux> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn weight_files_round_trip_bit_for_bit() {
        let dir = tempdir().expect("tempdir");
        for (seed, act) in [
            (1, Activation::Tanh),
            (2, Activation::Softplus),
            (3, Activation::Relu),
            (4, Activation::HardTanh),
        ] {
            let net =
                FeedforwardNet::with_shape(3, &[7, 5], 2, act, seed).expect("net");
            let path = dir.path().join(format!("n{seed}.weights"));
            save_network(&net, &path).expect("save");
            let back = load_network(&path).expect("load");
            assert_eq!(back.activations(), net.activations());
            assert_eq!(back.layers().len(), net.layers().len());
            for (a, b) in back.layers().iter().zip(net.layers()) {
                assert_eq!(a.weight.shape(), b.weight.shape());
                for (x, y) in a.weight.iter().zip(b.weight.iter()) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
                for (x, y) in a.bias.iter().zip(b.bias.iter()) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn subnormal_and_extreme_values_survive_the_text_form() {
        let dir = tempdir().expect("tempdir");
        let mut net = FeedforwardNet::with_shape(2, &[2], 1, Activation::Tanh, 9).expect("net");
        net.layers_mut()[0].weight[(0, 0)] = f64::MIN_POSITIVE / 8.0;
        net.layers_mut()[0].weight[(0, 1)] = -1.234_567_890_123_456_7e300;
        net.layers_mut()[0].bias[1] = f64::EPSILON;
        net.layers_mut()[1].weight[(0, 1)] = -0.0;
        let path = dir.path().join("extreme.weights");
        save_network(&net, &path).expect("save");
        let back = load_network(&path).expect("load");
        for (a, b) in back.layers().iter().zip(net.layers()) {
            for (x, y) in a.weight.iter().zip(b.weight.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn malformed_weight_files_name_the_line() {
        let dir = tempdir().expect("tempdir");
        let net = FeedforwardNet::with_shape(2, &[3], 1, Activation::Tanh, 5).expect("net");
        let path = dir.path().join("net.weights");
        save_network(&net, &path).expect("save");
        let good = std::fs::read_to_string(&path).expect("read");

        // Wrong magic.
        std::fs::write(&path, good.replacen(MAGIC, "other-magic", 1)).expect("write");
        match load_network(&path) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected format error, got {other:?}"),
        }

        // Truncated matrix.
        let cut: String = good.lines().take(4).collect::<Vec<_>>().join("\n");
        std::fs::write(&path, cut).expect("write");
        assert!(matches!(load_network(&path), Err(Error::Format { .. })));

        // Non-numeric entry.
        std::fs::write(&path, good.replacen("0.", "zero.", 1)).expect("write");
        assert!(matches!(load_network(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn trained_aux_round_trips() {
        let dir = tempdir().expect("tempdir");
        let aux = TrainedAux {
            eta: -0.52,
            lambda_v: vec![0.5, 0.25],
            lambda_dv: vec![0.5],
            lambda_c: vec![1.0, 2.0],
            converged: true,
            epochs_run: 29,
            loss_main: 0.125,
            loss_lip: -3.5,
            loss_validity: -0.4,
        };
        let path = dir.path().join("trained.json");
        save_trained_aux(&aux, &path).expect("save");
        let back = load_trained_aux(&path).expect("load");
        assert_eq!(back, aux);
    }
}
