//! Stationary covariance kernels and parametric mean functions.

use serde::{Deserialize, Serialize};

use crate::error::{CloverError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    SquaredExponential,
    Matern52,
}

/// ARD stationary kernel `k(x, x') = s · ρ(r)` with
/// `r² = Σ_i ((x_i - x'_i) / l_i)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec<T> {
    family: KernelFamily,
    signal_variance: T,
    inv_length_scales: Vec<T>,
    length_scales: Vec<T>,
}

impl<T: Scalar> KernelSpec<T> {
    pub fn new(family: KernelFamily, signal_variance: T, length_scales: Vec<T>) -> Result<Self> {
        if !(signal_variance > T::zero()) || !signal_variance.is_finite() {
            return Err(CloverError::Config(format!(
                "signal variance must be positive, got {signal_variance}"
            )));
        }
        if length_scales.is_empty() || length_scales.iter().any(|l| !(*l > T::zero()) || !l.is_finite()) {
            return Err(CloverError::Config(format!(
                "length scales must be positive, got {length_scales:?}"
            )));
        }
        Ok(Self {
            family,
            signal_variance,
            inv_length_scales: length_scales.iter().map(|l| l.recip()).collect(),
            length_scales,
        })
    }

    pub fn squared_exponential(signal_variance: T, length_scales: Vec<T>) -> Result<Self> {
        Self::new(KernelFamily::SquaredExponential, signal_variance, length_scales)
    }

    pub fn matern52(signal_variance: T, length_scales: Vec<T>) -> Result<Self> {
        Self::new(KernelFamily::Matern52, signal_variance, length_scales)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn signal_variance(&self) -> T {
        self.signal_variance
    }

    pub fn length_scales(&self) -> &[T] {
        &self.length_scales
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    #[inline]
    fn scaled_sq_dist(&self, x: &[T], y: &[T]) -> T {
        let mut r2 = T::zero();
        for ((a, b), w) in x.iter().zip(y).zip(&self.inv_length_scales) {
            let d = (*a - *b) * *w;
            r2 += d * d;
        }
        r2
    }

    #[inline]
    pub fn eval(&self, x: &[T], y: &[T]) -> T {
        let r2 = self.scaled_sq_dist(x, y);
        match self.family {
            KernelFamily::SquaredExponential => self.signal_variance * (-T::lit(0.5) * r2).exp(),
            KernelFamily::Matern52 => {
                let s5r = (T::lit(5.0) * r2).sqrt();
                self.signal_variance * (T::one() + s5r + T::lit(5.0 / 3.0) * r2) * (-s5r).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanFamily {
    Zero,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeanSpec<T> {
    Zero,
    Constant(T),
}

impl<T: Scalar> MeanSpec<T> {
    #[inline]
    pub fn eval(&self, _x: &[T]) -> T {
        match *self {
            MeanSpec::Zero => T::zero(),
            MeanSpec::Constant(c) => c,
        }
    }

    pub fn family(&self) -> MeanFamily {
        match self {
            MeanSpec::Zero => MeanFamily::Zero,
            MeanSpec::Constant(_) => MeanFamily::Constant,
        }
    }
}
