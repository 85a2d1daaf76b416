//! Zero-contour extraction from a function sampled on a tensor grid.

use std::collections::HashMap;

use crate::domain::DomainBox;
use crate::error::{CloverError, Result};
use crate::scalar::Scalar;

pub const DEFAULT_RESOLUTION: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct Polyline<T> {
    pub points: Vec<[T; 2]>,
    /// The last point connects back to the first.
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourResult<T> {
    /// Grid coordinates per axis.
    pub axes: Vec<Vec<T>>,
    /// Function values, last axis fastest.
    pub values: Vec<T>,
    /// Zero crossings along the axis (1D only).
    pub crossings: Vec<T>,
    /// Zero-level polylines (2D only).
    pub polylines: Vec<Polyline<T>>,
}

impl<T: Scalar> ContourResult<T> {
    /// `+1` where the value is positive, `-1` otherwise.
    pub fn signs(&self) -> Vec<i8> {
        self.values.iter().map(|&v| if v > T::zero() { 1 } else { -1 }).collect()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    /// Grid point of a flat index.
    pub fn point(&self, mut flat: usize) -> Vec<T> {
        let mut x = vec![T::zero(); self.axes.len()];
        for k in (0..self.axes.len()).rev() {
            let n = self.axes[k].len();
            x[k] = self.axes[k][flat % n];
            flat /= n;
        }
        x
    }
}

fn axes<T: Scalar>(domain: &DomainBox<T>, per_dim: usize) -> Vec<Vec<T>> {
    (0..domain.dim())
        .map(|k| {
            let (lo, hi) = (domain.lower()[k], domain.upper()[k]);
            (0..per_dim)
                .map(|i| {
                    if i == per_dim - 1 {
                        hi
                    } else {
                        lo + (hi - lo) * T::from_count(i) / T::from_count(per_dim - 1)
                    }
                })
                .collect()
        })
        .collect()
}

/// Samples `f` on a `per_dim`-per-axis grid and extracts its zero level:
/// crossings in 1D and marching-squares polylines in 2D. Ambiguous saddle
/// cells are resolved by the sign of `f` at the cell centre.
pub fn extract_contour<T: Scalar>(f: impl Fn(&[T]) -> T, domain: &DomainBox<T>, per_dim: usize) -> Result<ContourResult<T>> {
    if per_dim < 2 {
        return Err(CloverError::Config(format!("contour grid needs at least 2 points per axis, got {per_dim}")));
    }
    let axes = axes(domain, per_dim);
    let total = per_dim
        .checked_pow(domain.dim() as u32)
        .ok_or_else(|| CloverError::Config("contour grid is too large".into()))?;
    let mut result = ContourResult {
        axes,
        values: Vec::with_capacity(total),
        crossings: Vec::new(),
        polylines: Vec::new(),
    };
    for i in 0..total {
        let x = result.point(i);
        result.values.push(f(&x));
    }
    match domain.dim() {
        1 => result.crossings = crossings_1d(&result.axes[0], &result.values),
        2 => result.polylines = marching_squares(&result.axes[0], &result.axes[1], &result.values, &f),
        _ => {}
    }
    Ok(result)
}

#[inline]
fn positive<T: Scalar>(v: T) -> bool {
    v > T::zero()
}

// Fraction along a→b where the linear interpolant vanishes.
#[inline]
fn root<T: Scalar>(a: T, b: T) -> T {
    a / (a - b)
}

fn crossings_1d<T: Scalar>(x: &[T], v: &[T]) -> Vec<T> {
    (0..x.len() - 1)
        .filter(|&i| positive(v[i]) != positive(v[i + 1]))
        .map(|i| x[i] + root(v[i], v[i + 1]) * (x[i + 1] - x[i]))
        .collect()
}

// Edge between grid nodes (i, j) and (i + 1, j) is (0, i, j); between
// (i, j) and (i, j + 1) it is (1, i, j).
type EdgeKey = (u8, usize, usize);

fn marching_squares<T: Scalar>(xs: &[T], ys: &[T], v: &[T], f: &impl Fn(&[T]) -> T) -> Vec<Polyline<T>> {
    let ny = ys.len();
    let at = |i: usize, j: usize| v[i * ny + j];
    let mut segments: Vec<(EdgeKey, EdgeKey)> = Vec::new();
    for i in 0..xs.len() - 1 {
        for j in 0..ny - 1 {
            // Corners counter-clockwise from (i, j); edge k joins corner k
            // and corner k + 1.
            let c = [at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)];
            let edges: [EdgeKey; 4] = [(0, i, j), (1, i + 1, j), (0, i, j + 1), (1, i, j)];
            let s: Vec<bool> = c.iter().map(|&x| positive(x)).collect();
            let cut: Vec<usize> = (0..4).filter(|&k| s[k] != s[(k + 1) % 4]).collect();
            match cut.len() {
                2 => segments.push((edges[cut[0]], edges[cut[1]])),
                4 => {
                    let centre = [
                        (xs[i] + xs[i + 1]) * T::lit(0.5),
                        (ys[j] + ys[j + 1]) * T::lit(0.5),
                    ];
                    // Corners sharing the centre's sign stay connected, so
                    // the segments cut off the two other corners.
                    let keep = positive(f(&centre));
                    for k in 0..4 {
                        if s[k] != keep {
                            segments.push((edges[(k + 3) % 4], edges[k]));
                        }
                    }
                }
                _ => {}
            }
        }
    }
    let point = |e: EdgeKey| -> [T; 2] {
        let (dir, i, j) = e;
        if dir == 0 {
            let t = root(at(i, j), at(i + 1, j));
            [xs[i] + t * (xs[i + 1] - xs[i]), ys[j]]
        } else {
            let t = root(at(i, j), at(i, j + 1));
            [xs[i], ys[j] + t * (ys[j + 1] - ys[j])]
        }
    };
    chain(&segments)
        .into_iter()
        .map(|(keys, closed)| Polyline {
            points: keys.into_iter().map(point).collect(),
            closed,
        })
        .collect()
}

// Joins segments sharing an edge into maximal chains. Open chains start at
// edges used once; the rest are closed loops.
fn chain(segments: &[(EdgeKey, EdgeKey)]) -> Vec<(Vec<EdgeKey>, bool)> {
    let mut adj: HashMap<EdgeKey, Vec<usize>> = HashMap::new();
    for (s, &(a, b)) in segments.iter().enumerate() {
        adj.entry(a).or_default().push(s);
        adj.entry(b).or_default().push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut out = Vec::new();
    let walk = |start: usize, from: EdgeKey, used: &mut Vec<bool>| -> Vec<EdgeKey> {
        let mut keys = vec![from];
        let mut seg = start;
        let mut at = from;
        loop {
            used[seg] = true;
            let (a, b) = segments[seg];
            let next = if a == at { b } else { a };
            keys.push(next);
            match adj[&next].iter().find(|&&t| !used[t]) {
                Some(&t) => {
                    seg = t;
                    at = next;
                }
                None => return keys,
            }
        }
    };
    for s in 0..segments.len() {
        if used[s] {
            continue;
        }
        let (a, b) = segments[s];
        let end = if adj[&a].len() == 1 {
            Some(a)
        } else if adj[&b].len() == 1 {
            Some(b)
        } else {
            None
        };
        if let Some(e) = end {
            out.push((walk(s, e, &mut used), false));
        }
    }
    for s in 0..segments.len() {
        if !used[s] {
            let mut keys = walk(s, segments[s].0, &mut used);
            keys.pop();
            out.push((keys, true));
        }
    }
    out
}
