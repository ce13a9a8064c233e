//! Deterministic sample covers of boxes, their on-disk form, and the random
//! index batches used during training.
//!
//! A cover with radius `ε` is a finite set of points such that every point of
//! the box lies within ℓ₂ distance `ε` of some sample. The construction is a
//! regular grid with per-axis spacing `h = 2ε/√d` (the worst point of a grid
//! cell — its center — then sits exactly `ε` away), endpoints included. A box
//! entirely within `ε` of its own center collapses to that single point.
//!
//! [`verify_cover`] re-checks the radius claim *without assuming the grid
//! structure*: it throws random probes at the box and finds each probe's
//! nearest sample through a cell-hash, so a buggy construction cannot verify
//! itself.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::BoxDomain;
use crate::error::{Error, Result};

/// A finite ε-cover of a box.
#[derive(Debug, Clone, PartialEq)]
pub struct Cover {
    /// Sample points, in grid-iteration order (last axis fastest).
    pub points: Vec<DVector<f64>>,
    /// Radius the cover was built for.
    pub epsilon: f64,
    /// The covered box.
    pub domain: BoxDomain,
    /// Grid shape (all ones for the single-center special case).
    pub per_axis: Vec<usize>,
}

/// Result of an independent radius check.
#[derive(Debug, Clone, Copy)]
pub struct CoverCheck {
    /// Number of random probes thrown.
    pub probes: usize,
    /// Largest probe-to-nearest-sample distance observed.
    pub max_nearest: f64,
    /// Whether that distance stayed within the claimed radius.
    pub ok: bool,
}

/// Builds the grid cover, refusing to materialize more than `budget` points.
pub fn build_cover(domain: &BoxDomain, epsilon: f64, budget: usize) -> Result<Cover> {
    if epsilon <= 0.0 || !epsilon.is_finite() {
        return Err(Error::InvalidValue {
            name: "cover radius".into(),
            value: epsilon,
            requirement: "finite and positive".into(),
        });
    }
    let d = domain.dim();

    // Whole box within ε of its center: one point suffices.
    if domain.half_diagonal() <= epsilon {
        return Ok(Cover {
            points: vec![domain.center()],
            epsilon,
            domain: domain.clone(),
            per_axis: vec![1; d],
        });
    }

    let h = 2.0 * epsilon / (d as f64).sqrt();
    let mut per_axis = Vec::with_capacity(d);
    let mut required: u128 = 1;
    for i in 0..d {
        let n = (domain.span(i) / h).ceil() as usize + 1;
        per_axis.push(n);
        required = required.saturating_mul(n as u128);
    }
    if required > budget as u128 {
        return Err(Error::CoverBudgetExceeded {
            required: usize::try_from(required).unwrap_or(usize::MAX),
            budget,
        });
    }

    let total = required as usize;
    let mut points = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    loop {
        let p = DVector::from_fn(d, |i, _| {
            let n = per_axis[i];
            if n == 1 {
                0.5 * (domain.lo()[i] + domain.hi()[i])
            } else {
                let t = idx[i] as f64 / (n - 1) as f64;
                domain.lo()[i] + t * domain.span(i)
            }
        });
        points.push(p);
        // Mixed-radix increment, last axis fastest.
        let mut axis = d;
        loop {
            if axis == 0 {
                return Ok(Cover { points, epsilon, domain: domain.clone(), per_axis });
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < per_axis[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
}

/// Independently re-checks the radius claim with random probes. Nearest
/// neighbours are found through a cell-hash with cell side `ε`: any sample
/// within `ε` of a probe lies in one of the 3^d neighbouring cells. When a
/// neighbourhood is empty the probe falls back to a full scan so the reported
/// distance stays exact.
pub fn verify_cover(cover: &Cover, probes: usize, seed: u64) -> Result<CoverCheck> {
    if cover.points.is_empty() {
        return Err(Error::InvalidValue {
            name: "cover size".into(),
            value: 0.0,
            requirement: "at least one point".into(),
        });
    }
    let d = cover.domain.dim();
    let eps = cover.epsilon;
    let cell_of = |x: &DVector<f64>| -> Vec<i64> {
        (0..d)
            .map(|i| ((x[i] - cover.domain.lo()[i]) / eps).floor() as i64)
            .collect()
    };
    let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for (k, p) in cover.points.iter().enumerate() {
        buckets.entry(cell_of(p)).or_default().push(k);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_nearest: f64 = 0.0;
    for _ in 0..probes {
        let probe = cover.domain.sample_uniform(&mut rng);
        let home = cell_of(&probe);
        // Scan the 3^d neighbourhood.
        let mut best = f64::INFINITY;
        let mut offsets = vec![-1i64; d];
        'cells: loop {
            let cell: Vec<i64> = home.iter().zip(&offsets).map(|(h, o)| h + o).collect();
            if let Some(members) = buckets.get(&cell) {
                for &k in members {
                    best = best.min((&cover.points[k] - &probe).norm());
                }
            }
            let mut axis = d;
            loop {
                if axis == 0 {
                    break 'cells;
                }
                axis -= 1;
                offsets[axis] += 1;
                if offsets[axis] <= 1 {
                    break;
                }
                offsets[axis] = -1;
            }
        }
        if !best.is_finite() {
            // Empty neighbourhood: exact fallback.
            for p in &cover.points {
                best = best.min((p - &probe).norm());
            }
        }
        max_nearest = max_nearest.max(best);
    }
    Ok(CoverCheck {
        probes,
        max_nearest,
        // Allow strict rounding slack only: the claim is geometric.
        ok: max_nearest <= eps * (1.0 + 1e-12),
    })
}

/// One training tuple: indices into the state cover (`q`, `r`) and the
/// external-input cover (`s`, `p`), plus the separation flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TupleSample {
    /// First state index.
    pub q: usize,
    /// Second state index.
    pub r: usize,
    /// External input paired with `q`.
    pub s: usize,
    /// External input paired with `r`.
    pub p: usize,
    /// True when `|x_q − x_r| < d_min`: the tuple is kept for conditions
    /// that read a single state but excluded from pair-distance conditions,
    /// which become mutually contradictory as the two points merge.
    pub flagged: bool,
}

/// Draws `n_batches` random tuple batches of size `batch_size` from the two
/// covers, flagging state pairs closer than `d_min`. Deterministic in the
/// seed; indices are uniform over the two covers independently.
#[must_use]
pub fn make_pair_batches(
    xs: &Cover,
    ws: &Cover,
    batch_size: usize,
    n_batches: usize,
    d_min: f64,
    seed: u64,
) -> Vec<Vec<TupleSample>> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_states = xs.points.len();
    let n_inputs = ws.points.len();
    (0..n_batches)
        .map(|_| {
            (0..batch_size)
                .map(|_| {
                    let q = rng.gen_range(0..n_states);
                    let r = rng.gen_range(0..n_states);
                    TupleSample {
                        q,
                        r,
                        s: rng.gen_range(0..n_inputs),
                        p: rng.gen_range(0..n_inputs),
                        flagged: (&xs.points[q] - &xs.points[r]).norm() < d_min,
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct CoverMeta {
    epsilon: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    per_axis: Vec<usize>,
    count: usize,
}

fn meta_path(csv_path: &Path) -> PathBuf {
    let mut name = csv_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cover".into());
    name.push_str(".meta.json");
    csv_path.with_file_name(name)
}

/// Writes a cover as CSV (shortest-roundtrip floats, one point per row,
/// header `x0,x1,…`) plus a `<stem>.meta.json` sidecar carrying the radius,
/// box, and grid shape.
pub fn save_cover(cover: &Cover, csv_path: &Path) -> Result<()> {
    let d = cover.domain.dim();
    let mut csv = String::new();
    let header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    let _ = writeln!(csv, "{}", header.join(","));
    for p in &cover.points {
        let row: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(csv, "{}", row.join(","));
    }
    fs::write(csv_path, csv).map_err(|e| Error::io(csv_path, e))?;

    let meta = CoverMeta {
        epsilon: cover.epsilon,
        lo: cover.domain.lo().iter().copied().collect(),
        hi: cover.domain.hi().iter().copied().collect(),
        per_axis: cover.per_axis.clone(),
        count: cover.points.len(),
    };
    let mp = meta_path(csv_path);
    let body = serde_json::to_string_pretty(&meta).map_err(|e| Error::Config {
        path: mp.display().to_string(),
        detail: e.to_string(),
    })?;
    fs::write(&mp, body).map_err(|e| Error::io(&mp, e))
}

/// Reads a cover written by [`save_cover`], validating the sidecar against
/// the data.
pub fn load_cover(csv_path: &Path) -> Result<Cover> {
    let mp = meta_path(csv_path);
    let meta_text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let meta: CoverMeta = serde_json::from_str(&meta_text).map_err(|e| Error::Config {
        path: mp.display().to_string(),
        detail: e.to_string(),
    })?;
    let domain = BoxDomain::from_slices(&meta.lo, &meta.hi)?;

    let text = fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut lines = text.lines().enumerate();
    let d = domain.dim();
    match lines.next() {
        Some((_, header)) if header.split(',').count() == d => {}
        Some((_, header)) => {
            return Err(Error::Format {
                path: csv_path.display().to_string(),
                line: 1,
                detail: format!(
                    "header has {} columns, box has {d} axes",
                    header.split(',').count()
                ),
            });
        }
        None => {
            return Err(Error::Format {
                path: csv_path.display().to_string(),
                line: 1,
                detail: "empty file".into(),
            });
        }
    }
    let mut points = Vec::with_capacity(meta.count);
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| Error::Format {
                    path: csv_path.display().to_string(),
                    line: n + 1,
                    detail: format!("`{tok}` is not a number"),
                })
            })
            .collect::<Result<_>>()?;
        if vals.len() != d {
            return Err(Error::Format {
                path: csv_path.display().to_string(),
                line: n + 1,
                detail: format!("row has {} values, expected {d}", vals.len()),
            });
        }
        points.push(DVector::from_vec(vals));
    }
    if points.len() != meta.count {
        return Err(Error::Format {
            path: csv_path.display().to_string(),
            line: 0,
            detail: format!(
                "sidecar promises {} points, file holds {}",
                meta.count,
                points.len()
            ),
        });
    }
    Ok(Cover {
        points,
        epsilon: meta.epsilon,
        domain,
        per_axis: meta.per_axis,
    })
}
