//! Input domain, sample records and the information-source abstraction.

use std::fmt;
use std::sync::Arc;

use crate::error::{CloverError, Result, SourceError};
use crate::scalar::Scalar;

/// Compact rectangular domain `[lower, upper] ⊂ ℝᵈ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox<T> {
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Scalar> DomainBox<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(CloverError::Dimension {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(CloverError::Config("domain must have at least one dimension".into()));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(u > l) || !l.is_finite() || !u.is_finite() {
                return Err(CloverError::Config(format!(
                    "domain bound {i}: upper {u} must exceed lower {l}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    /// Edge lengths `upper - lower`.
    pub fn ranges(&self) -> Vec<T> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| *u - *l).collect()
    }

    pub fn volume(&self) -> T {
        self.ranges().into_iter().fold(T::one(), |acc, r| acc * r)
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| v >= l && v <= u)
    }

    /// Maps a point of the unit cube into the box.
    pub fn from_unit(&self, u: &[T]) -> Vec<T> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (l, h))| *l + *t * (*h - *l))
            .collect()
    }
}

/// Flat storage for a list of points of equal dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointSet<T> {
    dim: usize,
    coords: Vec<T>,
}

impl<T: Scalar> PointSet<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            coords: Vec::new(),
        }
    }

    pub fn from_flat(dim: usize, coords: Vec<T>) -> Self {
        assert!(dim > 0 && coords.len() % dim == 0, "flat coordinates must be a multiple of dim");
        Self { dim, coords }
    }

    pub fn from_rows(dim: usize, rows: &[Vec<T>]) -> Result<Self> {
        let mut set = Self::new(dim);
        for r in rows {
            set.try_push(r)?;
        }
        Ok(set)
    }

    pub fn try_push(&mut self, x: &[T]) -> Result<()> {
        if x.len() != self.dim {
            return Err(CloverError::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        self.coords.extend_from_slice(x);
        Ok(())
    }

    pub fn push(&mut self, x: &[T]) {
        self.try_push(x).expect("point dimension mismatch");
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.coords.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> &[T] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.coords.chunks_exact(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[T] {
        &self.coords
    }
}

/// One evaluation record `(ℓ, x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T> {
    pub source: usize,
    pub x: Vec<T>,
    pub y: T,
}

impl<T> Observation<T> {
    pub fn new(source: usize, x: Vec<T>, y: T) -> Self {
        Self { source, x, y }
    }
}

/// Ordered evaluation records `(X_n, Y_n)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleSet<T> {
    records: Vec<Observation<T>>,
}

impl<T: Scalar> SampleSet<T> {
    pub fn new() -> Self {
        Self {
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, obs: Observation<T>) {
        self.records.push(obs);
    }

    pub fn records(&self) -> &[Observation<T>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Observation<T>> {
        self.records.iter()
    }

    /// Records of a single source.
    pub fn of_source(&self, source: usize) -> impl Iterator<Item = &Observation<T>> + '_ {
        self.records.iter().filter(move |r| r.source == source)
    }

    /// Checks every record against the source count and the domain.
    pub fn validate(&self, num_sources: usize, domain: &DomainBox<T>) -> Result<()> {
        for r in &self.records {
            if r.source >= num_sources {
                return Err(CloverError::InvalidSource {
                    index: r.source,
                    count: num_sources,
                });
            }
            if !domain.contains(&r.x) {
                return Err(CloverError::Config(format!(
                    "sample location {:?} is outside the domain",
                    r.x
                )));
            }
        }
        Ok(())
    }
}

impl<T: Scalar> FromIterator<Observation<T>> for SampleSet<T> {
    fn from_iter<I: IntoIterator<Item = Observation<T>>>(iter: I) -> Self {
        Self {
            records: iter.into_iter().collect(),
        }
    }
}

/// An information source `g_ℓ` with known query cost and observation noise.
pub trait InformationSource<T>: Send + Sync {
    fn evaluate(&self, x: &[T]) -> Result<T, SourceError>;

    /// Query cost `c_ℓ(x) > 0`.
    fn cost(&self, x: &[T]) -> T;

    /// Observation noise variance `λ_ℓ(x) ≥ 0`.
    fn noise_variance(&self, x: &[T]) -> T;
}

pub type SharedSource<T> = Arc<dyn InformationSource<T>>;

type EvalFn<T> = dyn Fn(&[T]) -> Result<T, SourceError> + Send + Sync;

/// Information source built from a closure with constant cost and noise.
pub struct FnSource<T> {
    eval: Box<EvalFn<T>>,
    cost: T,
    noise: T,
}

impl<T: Scalar> FnSource<T> {
    pub fn new<F>(eval: F, cost: T, noise: T) -> Self
    where
        F: Fn(&[T]) -> Result<T, SourceError> + Send + Sync + 'static,
    {
        Self {
            eval: Box::new(eval),
            cost,
            noise,
        }
    }

    /// Wraps an infallible function.
    pub fn infallible<F>(f: F, cost: T, noise: T) -> Self
    where
        F: Fn(&[T]) -> T + Send + Sync + 'static,
    {
        Self::new(move |x| Ok(f(x)), cost, noise)
    }
}

impl<T: Scalar> InformationSource<T> for FnSource<T> {
    fn evaluate(&self, x: &[T]) -> Result<T, SourceError> {
        (self.eval)(x)
    }

    fn cost(&self, _x: &[T]) -> T {
        self.cost
    }

    fn noise_variance(&self, _x: &[T]) -> T {
        self.noise
    }
}

impl<T: Scalar> fmt::Debug for FnSource<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnSource")
            .field("cost", &self.cost)
            .field("noise", &self.noise)
            .finish_non_exhaustive()
    }
}

pub(crate) fn to_f64_vec<T: Scalar>(x: &[T]) -> Vec<f64> {
    x.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
}
