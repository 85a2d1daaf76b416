//! Multi-information-source Gaussian process.
//!
//! The belief about source `ℓ` is `f(ℓ, x) = f(0, x) + δ_ℓ(x)` where
//! `f(0, ·) ~ GP(μ₀, Σ₀)` models the unbiased source and each bias
//! `δ_ℓ ~ GP(μ_ℓ, Σ_ℓ)` is independent. Hence
//!
//! ```text
//! μ(ℓ, x)              = μ₀(x) + μ_ℓ(x)
//! Σ((ℓ, x), (m, x'))   = Σ₀(x, x') + 1[ℓ = m ≥ 1] Σ_ℓ(x, x')
//! ```
//!
//! Source 0 carries no bias process at all.

use std::fmt;
use std::sync::Arc;

use crate::domain::{Observation, SampleSet};
use crate::error::{CloverError, Result};
use crate::kernel::{KernelSpec, MeanSpec};
use crate::linalg::{Cholesky, JitterPolicy};
use crate::scalar::Scalar;

type NoiseFn<T> = dyn Fn(&[T]) -> T + Send + Sync;

/// Observation noise variance `λ_ℓ(x)`.
#[derive(Clone)]
pub enum NoiseVariance<T> {
    Constant(T),
    Function(Arc<NoiseFn<T>>),
}

impl<T: Scalar> NoiseVariance<T> {
    #[inline]
    pub fn eval(&self, x: &[T]) -> T {
        match self {
            NoiseVariance::Constant(v) => *v,
            NoiseVariance::Function(f) => f(x),
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for NoiseVariance<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseVariance::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            NoiseVariance::Function(_) => f.write_str("Function(..)"),
        }
    }
}

/// Mean and kernel of a bias process `δ_ℓ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasModel<T> {
    pub mean: MeanSpec<T>,
    pub kernel: KernelSpec<T>,
}

/// Prior over all information sources.
#[derive(Debug, Clone)]
pub struct MisGp<T> {
    base_mean: MeanSpec<T>,
    base_kernel: KernelSpec<T>,
    biases: Vec<BiasModel<T>>,
    noise: Vec<NoiseVariance<T>>,
    jitter: JitterPolicy,
}

impl<T: Scalar> MisGp<T> {
    /// Single-source model with noise-free observations.
    pub fn new(base_mean: MeanSpec<T>, base_kernel: KernelSpec<T>) -> Self {
        Self {
            base_mean,
            base_kernel,
            biases: Vec::new(),
            noise: vec![NoiseVariance::Constant(T::zero())],
            jitter: JitterPolicy::default(),
        }
    }

    /// Appends a biased source `ℓ = num_sources()`.
    pub fn with_bias(mut self, mean: MeanSpec<T>, kernel: KernelSpec<T>) -> Self {
        self.biases.push(BiasModel { mean, kernel });
        self.noise.push(NoiseVariance::Constant(T::zero()));
        self
    }

    pub fn with_noise(mut self, source: usize, noise: NoiseVariance<T>) -> Result<Self> {
        self.check_source(source)?;
        self.noise[source] = noise;
        Ok(self)
    }

    pub fn with_jitter(mut self, jitter: JitterPolicy) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn num_sources(&self) -> usize {
        self.biases.len() + 1
    }

    pub fn dim(&self) -> usize {
        self.base_kernel.dim()
    }

    pub fn base_mean(&self) -> &MeanSpec<T> {
        &self.base_mean
    }

    pub fn base_kernel(&self) -> &KernelSpec<T> {
        &self.base_kernel
    }

    /// Bias model of source `ℓ ≥ 1`.
    pub fn bias(&self, source: usize) -> Option<&BiasModel<T>> {
        source.checked_sub(1).and_then(|i| self.biases.get(i))
    }

    pub fn set_base(&mut self, mean: MeanSpec<T>, kernel: KernelSpec<T>) {
        self.base_mean = mean;
        self.base_kernel = kernel;
    }

    pub fn set_bias(&mut self, source: usize, model: BiasModel<T>) -> Result<()> {
        match source.checked_sub(1).and_then(|i| self.biases.get_mut(i)) {
            Some(slot) => {
                *slot = model;
                Ok(())
            }
            None => Err(CloverError::InvalidSource {
                index: source,
                count: self.num_sources(),
            }),
        }
    }

    pub fn jitter_policy(&self) -> JitterPolicy {
        self.jitter
    }

    fn check_source(&self, source: usize) -> Result<()> {
        if source < self.num_sources() {
            Ok(())
        } else {
            Err(CloverError::InvalidSource {
                index: source,
                count: self.num_sources(),
            })
        }
    }

    fn check_dim(&self, x: &[T]) -> Result<()> {
        if x.len() == self.dim() {
            Ok(())
        } else {
            Err(CloverError::Dimension {
                expected: self.dim(),
                got: x.len(),
            })
        }
    }

    pub fn noise_variance(&self, source: usize, x: &[T]) -> Result<T> {
        self.check_source(source)?;
        Ok(self.noise[source].eval(x))
    }

    /// `μ(ℓ, x) = μ₀(x) + μ_ℓ(x)`.
    pub fn prior_mean(&self, source: usize, x: &[T]) -> Result<T> {
        self.check_source(source)?;
        self.check_dim(x)?;
        Ok(self.prior_mean_unchecked(source, x))
    }

    #[inline]
    pub(crate) fn prior_mean_unchecked(&self, source: usize, x: &[T]) -> T {
        let base = self.base_mean.eval(x);
        match self.bias(source) {
            Some(b) => base + b.mean.eval(x),
            None => base,
        }
    }

    /// `Σ((ℓ, x), (m, x'))`.
    pub fn prior_cov(&self, (l, x): (usize, &[T]), (m, xp): (usize, &[T])) -> Result<T> {
        self.check_source(l)?;
        self.check_source(m)?;
        self.check_dim(x)?;
        self.check_dim(xp)?;
        Ok(self.prior_cov_unchecked(l, x, m, xp))
    }

    #[inline]
    pub(crate) fn prior_cov_unchecked(&self, l: usize, x: &[T], m: usize, xp: &[T]) -> T {
        let base = self.base_kernel.eval(x, xp);
        if l == m {
            if let Some(b) = self.bias(l) {
                return base + b.kernel.eval(x, xp);
            }
        }
        base
    }

    /// Conditions the prior on noisy observations. The Gram diagonal always
    /// carries jitter from the model's [`JitterPolicy`], on top of `λ_ℓ(x)`.
    pub fn condition(&self, samples: &SampleSet<T>) -> Result<Posterior<T>> {
        self.condition_impl(samples, None)
    }

    /// Conditions with a fixed absolute diagonal jitter instead of the
    /// escalating policy. Reconditioning a posterior at its own
    /// [`Posterior::jitter`] reproduces exactly the regularization the
    /// look-ahead algebra assumes.
    pub fn condition_with_jitter(&self, samples: &SampleSet<T>, jitter: T) -> Result<Posterior<T>> {
        self.condition_impl(samples, Some(jitter))
    }

    fn condition_impl(&self, samples: &SampleSet<T>, fixed: Option<T>) -> Result<Posterior<T>> {
        for r in samples.iter() {
            self.check_source(r.source)?;
            self.check_dim(&r.x)?;
        }
        let records = samples.records();
        let n = records.len();
        let mut gram = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = self.prior_cov_unchecked(records[i].source, &records[i].x, records[j].source, &records[j].x);
                gram[i * n + j] = v;
                gram[j * n + i] = v;
            }
            gram[i * n + i] += self.noise[records[i].source].eval(&records[i].x);
        }
        let factored = match fixed {
            Some(j) => Cholesky::factor_shifted(&gram, n, j).map_err(|e| (e, j)),
            None => Cholesky::factor_jittered(&gram, n, self.jitter),
        };
        let chol = factored.map_err(|(e, jitter)| {
            let p = e.pivot;
            let partner = (0..p)
                .max_by(|&a, &b| {
                    let ca = gram[p * n + a].abs() / (gram[a * n + a] * gram[p * n + p]).sqrt();
                    let cb = gram[p * n + b].abs() / (gram[b * n + b] * gram[p * n + p]).sqrt();
                    ca.partial_cmp(&cb).unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap_or(p);
            CloverError::IllConditioned {
                first: partner,
                second: p,
                jitter: jitter.to_f64().unwrap_or(f64::NAN),
            }
        })?;
        let residual: Vec<T> = records
            .iter()
            .map(|r| r.y - self.prior_mean_unchecked(r.source, &r.x))
            .collect();
        let alpha = chol.solve(&residual);
        Ok(Posterior {
            model: self.clone(),
            samples: samples.clone(),
            chol,
            alpha,
        })
    }
}

/// Variance of the updated mean `μⁿ⁺¹(0, x')` induced by an observation at
/// `(ℓ, x)` that has not been made yet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LookaheadVariance<T> {
    pub value: T,
    /// The denominator `λ_ℓ(x) + Σⁿ((ℓ,x),(ℓ,x))` fell below the jitter floor
    /// and the value was set to zero.
    pub degenerate: bool,
}

/// Immutable posterior snapshot; every query is a pure read.
#[derive(Debug, Clone)]
pub struct Posterior<T> {
    model: MisGp<T>,
    samples: SampleSet<T>,
    chol: Cholesky<T>,
    alpha: Vec<T>,
}

impl<T: Scalar> Posterior<T> {
    pub fn model(&self) -> &MisGp<T> {
        &self.model
    }

    pub fn samples(&self) -> &SampleSet<T> {
        &self.samples
    }

    pub fn num_sources(&self) -> usize {
        self.model.num_sources()
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Absolute jitter that ended up on the Gram diagonal.
    pub fn jitter(&self) -> T {
        self.chol.jitter()
    }

    pub(crate) fn cholesky(&self) -> &Cholesky<T> {
        &self.chol
    }

    /// `(K + Λ)⁻¹ (Y − μ(X))`.
    pub fn alpha(&self) -> &[T] {
        &self.alpha
    }

    pub fn prior_mean(&self, source: usize, x: &[T]) -> Result<T> {
        self.model.prior_mean(source, x)
    }

    pub fn prior_cov(&self, a: (usize, &[T]), b: (usize, &[T])) -> Result<T> {
        self.model.prior_cov(a, b)
    }

    /// Prior covariances between every sample and `(ℓ, x)`.
    pub fn cross_cov(&self, source: usize, x: &[T]) -> Vec<T> {
        self.samples
            .iter()
            .map(|r| self.model.prior_cov_unchecked(r.source, &r.x, source, x))
            .collect()
    }

    /// `L⁻¹ k` where `k` is [`Self::cross_cov`].
    pub fn whitened_cross_cov(&self, source: usize, x: &[T]) -> Vec<T> {
        let mut k = self.cross_cov(source, x);
        self.chol.solve_lower_in_place(&mut k);
        k
    }

    pub fn mean(&self, source: usize, x: &[T]) -> Result<T> {
        self.model.check_source(source)?;
        self.model.check_dim(x)?;
        Ok(self.mean_unchecked(source, x))
    }

    #[inline]
    pub(crate) fn mean_unchecked(&self, source: usize, x: &[T]) -> T {
        let mut m = self.model.prior_mean_unchecked(source, x);
        for (r, a) in self.samples.iter().zip(&self.alpha) {
            m += self.model.prior_cov_unchecked(r.source, &r.x, source, x) * *a;
        }
        m
    }

    /// Posterior mean of the unbiased source, `μⁿ(0, x)`.
    pub fn mean0(&self, x: &[T]) -> T {
        self.mean_unchecked(0, x)
    }

    pub fn cov(&self, (l, x): (usize, &[T]), (m, xp): (usize, &[T])) -> Result<T> {
        let prior = self.model.prior_cov((l, x), (m, xp))?;
        if self.samples.is_empty() {
            return Ok(prior);
        }
        let a = self.whitened_cross_cov(l, x);
        let b = if l == m && x == xp {
            a.clone()
        } else {
            self.whitened_cross_cov(m, xp)
        };
        let c = prior - T::dot(&a, &b);
        if l == m && x == xp {
            Ok(c.max(T::zero()))
        } else {
            Ok(c)
        }
    }

    /// Posterior variance `Σⁿ((ℓ,x),(ℓ,x))`, clamped at zero.
    pub fn variance(&self, source: usize, x: &[T]) -> Result<T> {
        self.cov((source, x), (source, x))
    }

    /// Mean and variance of `f(0, x)` in one pass.
    pub fn mean_variance0(&self, x: &[T]) -> (T, T) {
        let k = self.cross_cov(0, x);
        let mean = self.model.prior_mean_unchecked(0, x) + T::dot(&k, &self.alpha);
        let mut w = k;
        self.chol.solve_lower_in_place(&mut w);
        let var = self.model.prior_cov_unchecked(0, x, 0, x) - T::dot(&w, &w);
        (mean, var.max(T::zero()))
    }

    /// `σ̄²(x'; ℓ, x) = Σⁿ((0,x'),(ℓ,x))² / (λ_ℓ(x) + Σⁿ((ℓ,x),(ℓ,x)))`.
    ///
    /// The denominator also includes the Gram jitter, matching what
    /// reconditioning on the fantasy sample would do.
    pub fn lookahead_mean_variance(&self, xp: &[T], source: usize, x: &[T]) -> Result<LookaheadVariance<T>> {
        let cross = self.cov((0, xp), (source, x))?;
        let denom = self.model.noise_variance(source, x)? + self.variance(source, x)? + self.jitter();
        let floor = self.jitter_floor();
        if !(denom > floor) {
            return Ok(LookaheadVariance {
                value: T::zero(),
                degenerate: true,
            });
        }
        Ok(LookaheadVariance {
            value: cross * cross / denom,
            degenerate: false,
        })
    }

    /// `Σⁿ⁺¹((0,x'),(0,x'))` after hypothetically observing `(ℓ, x)`.
    /// Does not depend on the value of the observation.
    pub fn fantasy_posterior_variance(&self, xp: &[T], source: usize, x: &[T]) -> Result<T> {
        let current = self.variance(0, xp)?;
        let drop = self.lookahead_mean_variance(xp, source, x)?.value;
        Ok((current - drop).max(T::zero()))
    }

    /// Smallest denominator treated as informative.
    pub(crate) fn jitter_floor(&self) -> T {
        let s = self.model.base_kernel.signal_variance();
        T::lit(1e-14) * s
    }

    /// Reconditions from scratch with one more record.
    pub fn with_observation(&self, obs: Observation<T>) -> Result<Posterior<T>> {
        let mut samples = self.samples.clone();
        samples.push(obs);
        self.model.condition(&samples)
    }
}
