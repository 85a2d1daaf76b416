//! Analytic test problems and Monte Carlo ground-truth oracles.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::domain::{to_f64_vec, DomainBox, FnSource, SharedSource};
use crate::error::{CloverError, Result, SourceError};
use crate::linalg::Cholesky;
use crate::scalar::Scalar;

/// `g(x) = (x₁² + 4)(x₂ − 1)/20 − sin(5x₁/2) − 2` on `[−4, 7] × [−3, 8]`.
pub fn multimodal<T: Scalar>(x: &[T]) -> T {
    let (a, b) = (x[0], x[1]);
    (a * a + T::lit(4.0)) * (b - T::one()) / T::lit(20.0) - (T::lit(2.5) * a).sin() - T::lit(2.0)
}

/// `g + sin(5/22 (x₁ + x₂/2) + 5/4)`.
pub fn multimodal_g1<T: Scalar>(x: &[T]) -> T {
    multimodal(x) + (T::lit(5.0 / 22.0) * (x[0] + x[1] * T::lit(0.5)) + T::lit(1.25)).sin()
}

/// `g + 3 sin(5/11 (x₁ + x₂ + 7))`.
pub fn multimodal_g2<T: Scalar>(x: &[T]) -> T {
    multimodal(x) + T::lit(3.0) * (T::lit(5.0 / 11.0) * (x[0] + x[1] + T::lit(7.0))).sin()
}

/// Branin–Hoo with `a = 1, b = 5.1/(4π²), c = 5/π, r = 6, s = 10, t = 1/(8π)`.
pub fn branin<T: Scalar>(x: &[T]) -> T {
    let pi = T::PI();
    let b = T::lit(5.1) / (T::lit(4.0) * pi * pi);
    let c = T::lit(5.0) / pi;
    let t = T::one() / (T::lit(8.0) * pi);
    let inner = x[1] - b * x[0] * x[0] + c * x[0] - T::lit(6.0);
    inner * inner + T::lit(10.0) * (T::one() - t) * x[0].cos() + T::lit(10.0)
}

pub const MULTIMODAL_AREA: f64 = 36.5541;
pub const BRANIN_AREA: f64 = 57.8137;
pub const MULTIMODAL_PF: f64 = 0.03133;

/// Gaussian input distribution for failure-probability estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct InputDistribution {
    pub mean: Vec<f64>,
    /// Row-major covariance.
    pub cov: Vec<f64>,
}

/// A problem recast as locating the zero contour of `truth − level`.
#[derive(Clone)]
pub struct AnalyticProblem<T> {
    pub name: &'static str,
    pub description: &'static str,
    pub domain: DomainBox<T>,
    pub level: T,
    pub truth: fn(&[T]) -> T,
    pub sources: Vec<SharedSource<T>>,
    /// Region for the excursion-area metric and its reference value.
    pub area_region: DomainBox<T>,
    pub area_reference: f64,
    pub input: Option<InputDistribution>,
    pub pf_reference: Option<f64>,
}

impl<T: Scalar> AnalyticProblem<T> {
    pub fn shifted_truth(&self, x: &[T]) -> T {
        (self.truth)(x) - self.level
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn costs(&self, x: &[T]) -> Vec<T> {
        self.sources.iter().map(|s| s.cost(x)).collect()
    }
}

impl<T: Scalar> std::fmt::Debug for AnalyticProblem<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnalyticProblem")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("level", &self.level)
            .field("sources", &self.sources.len())
            .finish_non_exhaustive()
    }
}

fn bounded<T: Scalar>(domain: DomainBox<T>, f: impl Fn(&[T]) -> T + Send + Sync + 'static, cost: f64) -> SharedSource<T> {
    let src = FnSource::new(
        move |x: &[T]| {
            if domain.contains(x) {
                Ok(f(x))
            } else {
                Err(SourceError::OutOfDomain { point: to_f64_vec(x) })
            }
        },
        T::lit(cost),
        T::zero(),
    );
    Arc::new(src)
}

fn multimodal_domain<T: Scalar>() -> DomainBox<T> {
    DomainBox::new(vec![T::lit(-4.0), T::lit(-3.0)], vec![T::lit(7.0), T::lit(8.0)]).expect("valid box")
}

fn multimodal_problem<T: Scalar>(name: &'static str, description: &'static str, sources: usize) -> AnalyticProblem<T> {
    let domain = multimodal_domain::<T>();
    let fns: [fn(&[T]) -> T; 3] = [multimodal, multimodal_g1, multimodal_g2];
    let costs = [1.0, 0.01, 0.001];
    AnalyticProblem {
        name,
        description,
        domain: domain.clone(),
        level: T::zero(),
        truth: multimodal,
        sources: (0..sources).map(|l| bounded(domain.clone(), fns[l], costs[l])).collect(),
        area_region: DomainBox::new(vec![T::lit(-4.0), T::lit(1.4)], vec![T::lit(7.0), T::lit(8.0)]).expect("valid box"),
        area_reference: MULTIMODAL_AREA,
        input: Some(InputDistribution {
            mean: vec![1.5, 2.5],
            cov: vec![1.0, 0.0, 0.0, 1.0],
        }),
        pf_reference: Some(MULTIMODAL_PF),
    }
}

fn branin_problem<T: Scalar>() -> AnalyticProblem<T> {
    let domain = DomainBox::new(vec![T::lit(-5.0), T::zero()], vec![T::lit(10.0), T::lit(15.0)]).expect("valid box");
    let level = T::lit(80.0);
    AnalyticProblem {
        name: "branin",
        description: "Branin-Hoo, contour g = 80 on [-5, 10] x [0, 15], one source",
        domain: domain.clone(),
        level,
        truth: branin,
        sources: vec![bounded(domain.clone(), move |x| branin(x) - level, 1.0)],
        area_region: domain,
        area_reference: BRANIN_AREA,
        input: None,
        pf_reference: None,
    }
}

pub const PROBLEM_NAMES: [&str; 3] = ["multimodal", "multimodal-single", "branin"];

/// Looks up a problem by name.
pub fn problem<T: Scalar>(name: &str) -> Result<AnalyticProblem<T>> {
    match name {
        "multimodal" => Ok(multimodal_problem(
            "multimodal",
            "multimodal g with biased g1, g2 on [-4, 7] x [-3, 8], costs 1, 0.01, 0.001",
            3,
        )),
        "multimodal-single" => Ok(multimodal_problem(
            "multimodal-single",
            "multimodal g on [-4, 7] x [-3, 8], unbiased source only",
            1,
        )),
        "branin" => Ok(branin_problem()),
        _ => Err(CloverError::Config(format!(
            "unknown problem '{name}' (known: {})",
            PROBLEM_NAMES.join(", ")
        ))),
    }
}

// Samples per independent stream; results do not depend on how streams
// are scheduled.
const STREAM_LEN: usize = 1 << 16;

fn stream(seed: u64, index: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index as u64);
    r
}

/// `(hits / n_mc) · vol(region)` with uniform samples in `region`.
pub fn excursion_area<T: Scalar>(indicator: impl Fn(&[T]) -> bool, region: &DomainBox<T>, n_mc: usize, seed: u64) -> Result<f64> {
    if n_mc == 0 {
        return Err(CloverError::Config("excursion area needs at least one sample".into()));
    }
    let d = region.dim();
    let mut hits = 0usize;
    let mut u = vec![T::zero(); d];
    for (c, start) in (0..n_mc).step_by(STREAM_LEN).enumerate() {
        let mut r = stream(seed, c);
        for _ in start..(start + STREAM_LEN).min(n_mc) {
            for v in u.iter_mut() {
                *v = T::lit(r.gen::<f64>());
            }
            if indicator(&region.from_unit(&u)) {
                hits += 1;
            }
        }
    }
    let vol = region.volume().to_f64().unwrap_or(f64::NAN);
    Ok(hits as f64 / n_mc as f64 * vol)
}

/// How samples of the input distribution that fall outside the domain count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutsideDomain {
    /// Evaluate the indicator there anyway.
    #[default]
    Evaluate,
    /// Count them as not failing.
    Safe,
}

/// `P(indicator(x))` for `x ~ N(mean, cov)` by Monte Carlo.
pub fn failure_probability<T: Scalar>(
    indicator: impl Fn(&[T]) -> bool,
    input: &InputDistribution,
    n_mc: usize,
    seed: u64,
    outside: Option<(&DomainBox<T>, OutsideDomain)>,
) -> Result<f64> {
    if n_mc == 0 {
        return Err(CloverError::Config("failure probability needs at least one sample".into()));
    }
    let d = input.mean.len();
    if input.cov.len() != d * d {
        return Err(CloverError::Dimension {
            expected: d * d,
            got: input.cov.len(),
        });
    }
    let chol = Cholesky::factor(&input.cov, d)
        .map_err(|_| CloverError::Config("input covariance is not positive definite".into()))?;
    let mut hits = 0usize;
    let mut z = vec![0.0; d];
    let mut x = vec![T::zero(); d];
    for (c, start) in (0..n_mc).step_by(STREAM_LEN).enumerate() {
        let mut r = stream(seed, c);
        for _ in start..(start + STREAM_LEN).min(n_mc) {
            for v in z.iter_mut() {
                *v = r.sample(StandardNormal);
            }
            for (i, xi) in x.iter_mut().enumerate() {
                let row = chol.row(i);
                *xi = T::lit(input.mean[i] + (0..=i).map(|k| row[k] * z[k]).sum::<f64>());
            }
            let counted = match outside {
                Some((dom, OutsideDomain::Safe)) => dom.contains(&x),
                _ => true,
            };
            if counted && indicator(&x) {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / n_mc as f64)
}
