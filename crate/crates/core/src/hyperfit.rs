//! Hyperparameter estimation by maximum likelihood or maximum a posteriori,
//! and the pairing of co-located evaluations into bias data.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use argmin::core::{CostFunction, Error as ArgminError, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{DomainBox, PointSet, SampleSet};
use crate::error::{CloverError, Result};
use crate::kernel::{KernelFamily, KernelSpec, MeanFamily, MeanSpec};
use crate::linalg::{Cholesky, JitterPolicy};
use crate::scalar::Scalar;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
// Objective assigned to rejected points; finite so simplex ordering stays
// well defined.
const REJECTED: f64 = 1e300;

/// Prior on one hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    #[default]
    None,
    Normal { mean: f64, sd: f64 },
}

impl Prior {
    pub fn normal(mean: f64, sd: f64) -> Result<Self> {
        if !(sd > 0.0) || !sd.is_finite() || !mean.is_finite() {
            return Err(CloverError::Config(format!("prior sd must be positive, got {sd}")));
        }
        Ok(Prior::Normal { mean, sd })
    }

    fn log_density(&self, v: f64) -> f64 {
        match *self {
            Prior::None => 0.0,
            Prior::Normal { mean, sd } => {
                let z = (v - mean) / sd;
                -0.5 * z * z - sd.ln() - 0.5 * LN_2PI
            }
        }
    }

    fn mean(&self) -> Option<f64> {
        match *self {
            Prior::None => None,
            Prior::Normal { mean, .. } => Some(mean),
        }
    }
}

/// Priors on the log signal variance, each length scale and the constant
/// mean. A single length-scale prior applies to every dimension.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HyperPriors {
    #[serde(default)]
    pub log_signal_variance: Prior,
    #[serde(default)]
    pub length_scales: Vec<Prior>,
    #[serde(default)]
    pub constant_mean: Prior,
}

impl HyperPriors {
    /// Length-scale priors centred on the domain range in each dimension.
    pub fn range_centred(ranges: &[f64], length_sd: f64) -> Result<Self> {
        Ok(Self {
            length_scales: ranges.iter().map(|&r| Prior::normal(r, length_sd * r)).collect::<Result<_>>()?,
            ..Self::default()
        })
    }

    fn length(&self, i: usize) -> Prior {
        match self.length_scales.len() {
            0 => Prior::None,
            1 => self.length_scales[0],
            _ => self.length_scales.get(i).copied().unwrap_or(Prior::None),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let n = self.length_scales.len();
        if n > 1 && n != dim {
            return Err(CloverError::Config(format!(
                "{n} length-scale priors given for a {dim}-dimensional domain"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    #[default]
    Mle,
    Map,
}

/// Locations, observations and per-observation noise variances of one GP.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData<T> {
    pub points: PointSet<T>,
    pub y: Vec<T>,
    pub noise: Vec<T>,
}

impl<T: Scalar> TrainingData<T> {
    pub fn new(points: PointSet<T>, y: Vec<T>, noise: Vec<T>) -> Result<Self> {
        if points.len() != y.len() || y.len() != noise.len() {
            return Err(CloverError::Config("training data needs one y and one noise variance per point".into()));
        }
        Ok(Self { points, y, noise })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    // Lexicographic order of (x, y, noise), so fitting does not depend on
    // record order.
    fn canonical(&self) -> Self {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            let pa = self.points.get(a).iter().chain([&self.y[a], &self.noise[a]]);
            let pb = self.points.get(b).iter().chain([&self.y[b], &self.noise[b]]);
            pa.zip(pb)
                .map(|(u, v)| u.partial_cmp(v).unwrap_or(Ordering::Equal))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        });
        let mut points = PointSet::new(self.points.dim());
        for &i in &idx {
            points.push(self.points.get(i));
        }
        Self {
            points,
            y: idx.iter().map(|&i| self.y[i]).collect(),
            noise: idx.iter().map(|&i| self.noise[i]).collect(),
        }
    }
}

/// `-½ rᵀ(K+Λ)⁻¹r - ½ ln|K+Λ| - (n/2) ln 2π` with `r = y - m(X)`.
/// Returns `-∞` when the Gram matrix cannot be factored.
pub fn log_marginal_likelihood<T: Scalar>(data: &TrainingData<T>, mean: &MeanSpec<T>, kernel: &KernelSpec<T>) -> T {
    log_marginal_likelihood_with(data, mean, kernel, JitterPolicy::default())
}

pub fn log_marginal_likelihood_with<T: Scalar>(
    data: &TrainingData<T>,
    mean: &MeanSpec<T>,
    kernel: &KernelSpec<T>,
    jitter: JitterPolicy,
) -> T {
    let n = data.len();
    let mut gram = vec![T::zero(); n * n];
    for i in 0..n {
        let xi = data.points.get(i);
        for j in 0..i {
            let v = kernel.eval(xi, data.points.get(j));
            gram[i * n + j] = v;
            gram[j * n + i] = v;
        }
        gram[i * n + i] = kernel.signal_variance() + data.noise[i];
    }
    let chol = match Cholesky::factor_jittered(&gram, n, jitter) {
        Ok(c) => c,
        Err(_) => return T::neg_infinity(),
    };
    let mut r: Vec<T> = (0..n).map(|i| data.y[i] - mean.eval(data.points.get(i))).collect();
    chol.solve_lower_in_place(&mut r);
    let fit = T::dot(&r, &r);
    -T::lit(0.5) * fit - T::lit(0.5) * chol.log_det() - T::lit(0.5 * LN_2PI) * T::from_count(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub kernel: KernelFamily,
    pub mean: MeanFamily,
    #[serde(default)]
    pub mode: FitMode,
    #[serde(default)]
    pub priors: HyperPriors,
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: u64,
    #[serde(default)]
    pub seed: u64,
}

fn default_starts() -> usize {
    8
}

fn default_max_iters() -> u64 {
    400
}

impl FitSettings {
    pub fn new(kernel: KernelFamily, mean: MeanFamily) -> Self {
        Self {
            kernel,
            mean,
            mode: FitMode::Mle,
            priors: HyperPriors::default(),
            starts: default_starts(),
            max_iters: default_max_iters(),
            seed: 0,
        }
    }

    pub fn map(mut self, priors: HyperPriors) -> Self {
        self.mode = FitMode::Map;
        self.priors = priors;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T> {
    pub mean: MeanSpec<T>,
    pub kernel: KernelSpec<T>,
    /// Log likelihood, plus log prior density for MAP.
    pub objective: f64,
    /// No start produced a finite objective; the returned values are
    /// prior means (MAP) or data heuristics (MLE).
    pub fallback: bool,
}

// Optimization runs in θ = (ln s, ln l₁ … ln l_d [, m]).
struct Space {
    dim: usize,
    has_mean: bool,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Space {
    fn clamp(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (lo, hi))| t.clamp(*lo, *hi))
            .collect()
    }

    fn excess(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (lo, hi))| (lo - t).max(0.0) + (t - hi).max(0.0))
            .map(|e| e * e)
            .sum()
    }

    fn decode<T: Scalar>(&self, theta: &[f64], family: KernelFamily) -> Option<(MeanSpec<T>, KernelSpec<T>)> {
        let s = T::lit(theta[0].exp());
        let ls = theta[1..=self.dim].iter().map(|t| T::lit(t.exp())).collect();
        let kernel = KernelSpec::new(family, s, ls).ok()?;
        let mean = if self.has_mean {
            MeanSpec::Constant(T::lit(theta[self.dim + 1]))
        } else {
            MeanSpec::Zero
        };
        Some((mean, kernel))
    }
}

#[derive(Clone, Copy)]
struct Objective<'a, T> {
    data: &'a TrainingData<T>,
    space: &'a Space,
    settings: &'a FitSettings,
}

impl<T: Scalar> Objective<'_, T> {
    fn value(&self, theta: &[f64]) -> f64 {
        let Some((mean, kernel)) = self.space.decode::<T>(theta, self.settings.kernel) else {
            return f64::NEG_INFINITY;
        };
        let mut v = log_marginal_likelihood(self.data, &mean, &kernel).to_f64().unwrap_or(f64::NAN);
        if self.settings.mode == FitMode::Map {
            let p = &self.settings.priors;
            v += p.log_signal_variance.log_density(theta[0]);
            for i in 0..self.space.dim {
                v += p.length(i).log_density(theta[1 + i].exp());
            }
            if self.space.has_mean {
                v += p.constant_mean.log_density(theta[self.space.dim + 1]);
            }
        }
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }
}

impl<T: Scalar> CostFunction for Objective<'_, T> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, theta: &Vec<f64>) -> std::result::Result<f64, ArgminError> {
        let inside = self.space.clamp(theta);
        let v = self.value(&inside);
        if !v.is_finite() {
            return Ok(REJECTED);
        }
        Ok(-v + 1e3 * self.space.excess(theta))
    }
}

/// Multi-start Nelder–Mead over log hyperparameters. Deterministic for a
/// given seed and independent of the order of the training data.
pub fn fit<T: Scalar>(data: &TrainingData<T>, domain: &DomainBox<T>, settings: &FitSettings) -> Result<FitResult<T>> {
    if data.len() < 2 {
        return Err(CloverError::Config(format!(
            "hyperparameter fitting needs at least 2 samples, got {}",
            data.len()
        )));
    }
    if data.points.dim() != domain.dim() {
        return Err(CloverError::Dimension {
            expected: domain.dim(),
            got: data.points.dim(),
        });
    }
    settings.priors.validate(domain.dim())?;
    let data = data.canonical();
    let dim = domain.dim();
    let has_mean = settings.mean == MeanFamily::Constant;
    let ys: Vec<f64> = data.y.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
    if ys.iter().any(|v| !v.is_finite()) {
        return Err(CloverError::Numerical("non-finite observation in training data".into()));
    }
    let n = ys.len() as f64;
    let y_mean = ys.iter().sum::<f64>() / n;
    let raw_scale = if has_mean {
        ys.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n
    } else {
        ys.iter().map(|v| v * v).sum::<f64>() / n
    };
    let scale = if raw_scale > 0.0 && raw_scale.is_finite() { raw_scale } else { 1.0 };
    let ranges: Vec<f64> = domain.ranges().iter().map(|r| r.to_f64().unwrap_or(1.0)).collect();

    let mut lower = vec![(1e-8 * scale).ln()];
    let mut upper = vec![(1e4 * scale).ln()];
    for r in &ranges {
        lower.push((1e-3 * r).ln());
        upper.push((10.0 * r).ln());
    }
    let (y_lo, y_hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let spread = (y_hi - y_lo).max(scale.sqrt());
    if has_mean {
        lower.push(y_lo - spread);
        upper.push(y_hi + spread);
    }
    let space = Space {
        dim,
        has_mean,
        lower,
        upper,
    };

    let mut heuristic = vec![scale.ln()];
    heuristic.extend(ranges.iter().map(|r| (0.2 * r).ln()));
    if has_mean {
        heuristic.push(y_mean);
    }
    let heuristic = space.clamp(&heuristic);
    let first = match settings.mode {
        FitMode::Mle => heuristic.clone(),
        FitMode::Map => {
            let p = &settings.priors;
            let mut t = heuristic.clone();
            if let Some(m) = p.log_signal_variance.mean() {
                t[0] = m;
            }
            for i in 0..dim {
                if let Some(m) = p.length(i).mean() {
                    t[1 + i] = m.max(f64::MIN_POSITIVE).ln();
                }
            }
            if has_mean {
                if let Some(m) = p.constant_mean.mean() {
                    t[dim + 1] = m;
                }
            }
            t
        }
    };

    let objective = Objective {
        data: &data,
        space: &space,
        settings,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in 0..settings.starts.max(1) {
        let theta0 = if start == 0 {
            first.clone()
        } else {
            space
                .lower
                .iter()
                .zip(&space.upper)
                .map(|(lo, hi)| rng.gen_range(*lo..=*hi))
                .collect()
        };
        if let Some((v, theta)) = local_search(&objective, &space, theta0, settings.max_iters) {
            let better = match &best {
                None => true,
                Some((bv, _)) => v > *bv,
            };
            if better {
                best = Some((v, theta));
            }
        }
    }

    match best {
        Some((v, theta)) => {
            let (mean, kernel) = space
                .decode(&theta, settings.kernel)
                .ok_or_else(|| CloverError::Numerical("optimizer returned invalid hyperparameters".into()))?;
            Ok(FitResult {
                mean,
                kernel,
                objective: v,
                fallback: false,
            })
        }
        None => {
            let (mean, kernel) = space
                .decode(&first, settings.kernel)
                .ok_or_else(|| CloverError::Numerical("fallback hyperparameters are invalid".into()))?;
            Ok(FitResult {
                mean,
                kernel,
                objective: f64::NEG_INFINITY,
                fallback: true,
            })
        }
    }
}

fn local_search<T: Scalar>(objective: &Objective<'_, T>, space: &Space, theta0: Vec<f64>, max_iters: u64) -> Option<(f64, Vec<f64>)> {
    let k = theta0.len();
    let mut simplex = vec![theta0.clone()];
    for i in 0..k {
        let mut v = theta0.clone();
        let width = space.upper[i] - space.lower[i];
        let step = if i == 0 || i <= space.dim { 0.5f64.min(0.25 * width) } else { 0.1 * width };
        // Step inward when the start sits on the upper bound.
        v[i] = if v[i] + step <= space.upper[i] { v[i] + step } else { v[i] - step };
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-9).ok()?;
    let res = Executor::new(*objective, solver)
        .configure(|s| s.max_iters(max_iters))
        .run()
        .ok()?;
    let theta = space.clamp(res.state().get_best_param()?);
    let v = objective.value(&theta);
    v.is_finite().then_some((v, theta))
}

/// `δ_ℓ = y_ℓ - y₀` at a location where both were observed.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasSample<T> {
    pub source: usize,
    pub x: Vec<T>,
    pub delta: T,
}

/// Pairs every biased source's evaluations with IS0 evaluations at exactly
/// the same location. Entry `ℓ - 1` holds the bias data of source `ℓ`,
/// sorted by location; repeated evaluations at one location are averaged.
pub fn pair_biases<T: Scalar>(samples: &SampleSet<T>, num_sources: usize) -> Vec<Vec<BiasSample<T>>> {
    let mut by_loc: BTreeMap<Vec<u64>, (Vec<T>, Vec<Vec<T>>)> = BTreeMap::new();
    for r in samples.iter().filter(|r| r.source < num_sources) {
        let key = r.x.iter().map(|v| v.to_f64().unwrap_or(f64::NAN).to_bits()).collect();
        let entry = by_loc
            .entry(key)
            .or_insert_with(|| (r.x.clone(), vec![Vec::new(); num_sources]));
        entry.1[r.source].push(r.y);
    }
    let mut out: Vec<Vec<BiasSample<T>>> = vec![Vec::new(); num_sources.saturating_sub(1)];
    for (x, ys) in by_loc.into_values() {
        let Some(y0) = sorted_mean(&ys[0]) else {
            continue;
        };
        for l in 1..num_sources {
            if let Some(yl) = sorted_mean(&ys[l]) {
                out[l - 1].push(BiasSample {
                    source: l,
                    x: x.clone(),
                    delta: yl - y0,
                });
            }
        }
    }
    for list in &mut out {
        list.sort_by(|a, b| {
            a.x.iter()
                .zip(&b.x)
                .map(|(u, v)| u.partial_cmp(v).unwrap_or(Ordering::Equal))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        });
    }
    out
}

fn sorted_mean<T: Scalar>(v: &[T]) -> Option<T> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    Some(s.iter().copied().sum::<T>() / T::from_count(s.len()))
}

/// Whether a new sample from `source` triggers a hyperparameter refresh.
/// A refresh also requires co-located evaluations of every other source.
pub fn refresh_schedule(source: usize) -> bool {
    source == 0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Observation;

    fn data(xs: &[f64], ys: &[f64]) -> TrainingData<f64> {
        TrainingData::new(PointSet::from_flat(1, xs.to_vec()), ys.to_vec(), vec![0.0; xs.len()]).unwrap()
    }

    #[test]
    fn single_sample_likelihood() {
        let (y, s) = (1.3, 0.7);
        let k = KernelSpec::squared_exponential(s, vec![1.0]).unwrap();
        let v = log_marginal_likelihood_with(&data(&[0.2], &[y]), &MeanSpec::Zero, &k, JitterPolicy {
            initial: 0.0,
            growth: 10.0,
            max: 0.0,
        });
        let expect = -0.5 * y * y / s - 0.5 * (2.0 * std::f64::consts::PI * s).ln();
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn likelihood_is_deterministic() {
        let d = data(&[0.0, 0.4, 0.9], &[1.0, -0.2, 0.3]);
        let k = KernelSpec::matern52(1.5, vec![0.3]).unwrap();
        let a = log_marginal_likelihood(&d, &MeanSpec::Constant(0.1), &k);
        assert_eq!(a, log_marginal_likelihood(&d.clone(), &MeanSpec::Constant(0.1), &k));
    }

    #[test]
    fn too_few_samples_rejected() {
        let dom = DomainBox::new(vec![0.0], vec![1.0]).unwrap();
        let s = FitSettings::new(KernelFamily::SquaredExponential, MeanFamily::Zero);
        assert!(fit(&data(&[0.5], &[1.0]), &dom, &s).is_err());
    }

    #[test]
    fn bias_pairing() {
        let s: SampleSet<f64> = [
            Observation::new(0, vec![0.0, 1.0], 2.0),
            Observation::new(1, vec![0.0, 1.0], 2.5),
            Observation::new(1, vec![3.0, 1.0], 9.0),
            Observation::new(2, vec![0.0, 1.0], 1.0),
        ]
        .into_iter()
        .collect();
        let b = pair_biases(&s, 3);
        assert_eq!(b[0], vec![BiasSample {
            source: 1,
            x: vec![0.0, 1.0],
            delta: 0.5
        }]);
        assert_eq!(b[1][0].delta, -1.0);
    }

    #[test]
    fn refresh_only_on_unbiased_source() {
        assert!(refresh_schedule(0));
        assert!(!refresh_schedule(2));
    }
}
