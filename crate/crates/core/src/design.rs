//! Space-filling and random initial designs.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{DomainBox, PointSet};
use crate::error::{CloverError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DesignKind {
    /// Stratified permutation sampling: each axis is cut into `n` equal
    /// strata and every stratum holds exactly one point.
    #[default]
    Lhs,
    Uniform,
    /// Points given explicitly, in domain coordinates.
    Fixed { points: Vec<Vec<f64>> },
}

pub fn latin_hypercube<T: Scalar, R: Rng + ?Sized>(domain: &DomainBox<T>, n: usize, rng: &mut R) -> PointSet<T> {
    let d = domain.dim();
    let mut unit = vec![0.0f64; n * d];
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..d {
        perm.shuffle(rng);
        for (i, &p) in perm.iter().enumerate() {
            unit[i * d + k] = (p as f64 + rng.gen::<f64>()) / n as f64;
        }
    }
    to_domain(domain, &unit)
}

pub fn uniform_random<T: Scalar, R: Rng + ?Sized>(domain: &DomainBox<T>, n: usize, rng: &mut R) -> PointSet<T> {
    let unit: Vec<f64> = (0..n * domain.dim()).map(|_| rng.gen::<f64>()).collect();
    to_domain(domain, &unit)
}

/// Tensor grid with `per_dim` points per axis, endpoints included, first
/// coordinate varying slowest.
pub fn uniform_grid<T: Scalar>(domain: &DomainBox<T>, per_dim: usize) -> Result<PointSet<T>> {
    if per_dim < 2 {
        return Err(CloverError::Config(format!("a grid needs at least 2 points per axis, got {per_dim}")));
    }
    let d = domain.dim();
    let total = per_dim
        .checked_pow(d as u32)
        .ok_or_else(|| CloverError::Config("grid is too large".into()))?;
    let mut out = PointSet::new(d);
    let mut x = vec![T::zero(); d];
    for mut idx in 0..total {
        for k in (0..d).rev() {
            let i = idx % per_dim;
            idx /= per_dim;
            x[k] = if i == per_dim - 1 {
                domain.upper()[k]
            } else {
                let t = T::from_count(i) / T::from_count(per_dim - 1);
                domain.lower()[k] + t * (domain.upper()[k] - domain.lower()[k])
            };
        }
        out.push(&x);
    }
    Ok(out)
}

/// Draws an initial design of `n` points, or validates a fixed one.
pub fn initial_points<T: Scalar, R: Rng + ?Sized>(
    domain: &DomainBox<T>,
    kind: &DesignKind,
    n: usize,
    rng: &mut R,
) -> Result<PointSet<T>> {
    match kind {
        DesignKind::Lhs => Ok(latin_hypercube(domain, n, rng)),
        DesignKind::Uniform => Ok(uniform_random(domain, n, rng)),
        DesignKind::Fixed { points } => {
            let mut out = PointSet::new(domain.dim());
            for p in points {
                let x: Vec<T> = p.iter().map(|&v| T::lit(v)).collect();
                if !domain.contains(&x) {
                    return Err(CloverError::Config(format!("design point {p:?} lies outside the domain")));
                }
                out.try_push(&x)?;
            }
            Ok(out)
        }
    }
}

fn to_domain<T: Scalar>(domain: &DomainBox<T>, unit: &[f64]) -> PointSet<T> {
    let d = domain.dim();
    let mut out = PointSet::new(d);
    for u in unit.chunks_exact(d) {
        let u: Vec<T> = u.iter().map(|&v| T::lit(v)).collect();
        out.push(&domain.from_unit(&u));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lhs_fills_every_stratum() {
        let dom = DomainBox::new(vec![-4.0, -3.0], vec![7.0, 8.0]).unwrap();
        let n = 10;
        let p = latin_hypercube(&dom, n, &mut ChaCha8Rng::seed_from_u64(3));
        for k in 0..2 {
            let mut hit = vec![false; n];
            for x in p.iter() {
                let u = (x[k] - dom.lower()[k]) / 11.0;
                hit[(u * n as f64) as usize] = true;
            }
            assert!(hit.iter().all(|&h| h));
        }
    }

    #[test]
    fn grid_covers_corners() {
        let dom = DomainBox::new(vec![0.0, 1.0], vec![1.0, 3.0]).unwrap();
        let g = uniform_grid(&dom, 3).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g.get(0), &[0.0, 1.0]);
        assert_eq!(g.get(1), &[0.0, 2.0]);
        assert_eq!(g.get(8), &[1.0, 3.0]);
    }

    #[test]
    fn fixed_points_must_lie_in_domain() {
        let dom = DomainBox::new(vec![0.0], vec![1.0]).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let ok = DesignKind::Fixed { points: vec![vec![0.2], vec![0.9]] };
        assert_eq!(initial_points::<f64, _>(&dom, &ok, 0, &mut r).unwrap().len(), 2);
        let bad = DesignKind::Fixed { points: vec![vec![1.5]] };
        assert!(initial_points::<f64, _>(&dom, &bad, 0, &mut r).is_err());
    }
}
