//! The sequential contour-location loop: initial design, select, evaluate,
//! refit, recondition, until a stopping rule fires.

use std::sync::Arc;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{select_with, CandidateSet, EntropyBaseline, Lookahead, LookaheadTolerance};
use crate::contour::{extract_contour, ContourResult, DEFAULT_RESOLUTION};
use crate::design::{initial_points, uniform_grid, DesignKind};
use crate::domain::{DomainBox, Observation, PointSet, SampleSet, SharedSource};
use crate::entropy::{IntegrationGrid, ToleranceRule};
use crate::error::{CloverError, Result};
use crate::hyperfit::{fit, pair_biases, refresh_schedule, FitMode, FitSettings, HyperPriors, TrainingData};
use crate::kernel::{KernelFamily, MeanFamily, MeanSpec};
use crate::misgp::{BiasModel, MisGp, NoiseVariance, Posterior};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CloverConfig {
    pub initial_design: DesignKind,
    /// Ignored for a fixed design.
    pub n_initial: usize,
    /// Uniform candidate grid `𝒜`, points per axis.
    pub candidates_per_dim: usize,
    /// Trapezoid integration grid, nodes per axis.
    pub grid_per_dim: usize,
    pub c_eps: f64,
    /// Stop once the cumulative query cost reaches this value.
    pub budget: Option<f64>,
    pub entropy_floor: Option<f64>,
    pub acquisition_floor: Option<f64>,
    /// Counts every evaluation, including the initial design and refresh
    /// co-evaluations.
    pub max_evaluations: Option<usize>,
    pub seed: u64,
    pub kernel: KernelFamily,
    pub mean: MeanFamily,
    pub bias_mean: MeanFamily,
    pub fit_mode: FitMode,
    pub priors: HyperPriors,
    pub bias_priors: HyperPriors,
    pub fit_starts: usize,
    pub fit_max_iters: u64,
    /// Sources the acquisition may choose; all by default.
    pub allowed_sources: Option<Vec<usize>>,
    pub lookahead: LookaheadTolerance,
    pub baseline: EntropyBaseline,
    pub contour_resolution: usize,
}

impl Default for CloverConfig {
    fn default() -> Self {
        Self {
            initial_design: DesignKind::Lhs,
            n_initial: 10,
            candidates_per_dim: 30,
            grid_per_dim: 50,
            c_eps: 2.0,
            budget: None,
            entropy_floor: None,
            acquisition_floor: None,
            max_evaluations: Some(100),
            seed: 0,
            kernel: KernelFamily::SquaredExponential,
            mean: MeanFamily::Zero,
            bias_mean: MeanFamily::Zero,
            fit_mode: FitMode::Mle,
            priors: HyperPriors::default(),
            bias_priors: HyperPriors::default(),
            fit_starts: 8,
            fit_max_iters: 400,
            allowed_sources: None,
            lookahead: LookaheadTolerance::default(),
            baseline: EntropyBaseline::default(),
            contour_resolution: DEFAULT_RESOLUTION,
        }
    }
}

impl CloverConfig {
    pub fn validate(&self, num_sources: usize) -> Result<()> {
        let bad = |m: String| Err(CloverError::Config(m));
        if self.budget.is_none() && self.max_evaluations.is_none() {
            return bad("either budget or max_evaluations must be set".into());
        }
        if let Some(b) = self.budget {
            if !(b > 0.0) {
                return bad(format!("budget must be positive, got {b}"));
            }
        }
        if self.max_evaluations == Some(0) {
            return bad("max_evaluations must be positive".into());
        }
        for (name, v) in [("entropy_floor", self.entropy_floor), ("acquisition_floor", self.acquisition_floor)] {
            if let Some(v) = v {
                if !(v >= 0.0) {
                    return bad(format!("{name} must be nonnegative, got {v}"));
                }
            }
        }
        if !(self.c_eps >= 0.0) || !self.c_eps.is_finite() {
            return bad(format!("c_eps must be finite and nonnegative, got {}", self.c_eps));
        }
        let n0 = match &self.initial_design {
            DesignKind::Fixed { points } => points.len(),
            _ => self.n_initial,
        };
        if n0 < 2 {
            return bad(format!("the initial design needs at least 2 points, got {n0}"));
        }
        if num_sources == 0 {
            return bad("at least one information source is required".into());
        }
        if let Some(allowed) = &self.allowed_sources {
            if allowed.is_empty() {
                return bad("allowed_sources is empty".into());
            }
            if let Some(&l) = allowed.iter().find(|&&l| l >= num_sources) {
                return Err(CloverError::InvalidSource {
                    index: l,
                    count: num_sources,
                });
            }
        }
        if self.fit_starts == 0 {
            return bad("fit_starts must be positive".into());
        }
        Ok(())
    }

    fn fit_settings(&self, mean: MeanFamily, priors: &HyperPriors, seed: u64) -> FitSettings {
        FitSettings {
            kernel: self.kernel,
            mean,
            mode: self.fit_mode,
            priors: priors.clone(),
            starts: self.fit_starts,
            max_iters: self.fit_max_iters,
            seed,
        }
    }
}

/// One evaluation. Rows of the initial design have iteration 0; refresh
/// co-evaluations share the iteration of the decision that triggered them.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace<T> {
    pub iter: usize,
    pub source: usize,
    pub x: Vec<T>,
    pub y: T,
    pub step_cost: T,
    pub cum_cost: T,
    /// Contour entropy of the surrogate once the batch holding this row has
    /// been assimilated.
    pub entropy: T,
    /// Acquisition value for decision rows, `None` otherwise.
    pub acquisition: Option<T>,
    /// Hyperparameters were refit after this row's batch.
    pub refreshed: bool,
    /// Caller-defined metrics of the same surrogate as `entropy`.
    pub metrics: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    EntropyFloor,
    AcquisitionFloor,
    MaxEvaluations,
    Error,
}

#[derive(Debug)]
pub struct RunOutput<T> {
    pub trace: Vec<IterationTrace<T>>,
    pub stop: StopReason,
    pub error: Option<CloverError>,
    /// Last successfully conditioned surrogate.
    pub posterior: Option<Posterior<T>>,
    pub contour: Option<ContourResult<T>>,
    /// Number of hyperparameter fits that fell back to default values.
    pub fit_fallbacks: usize,
}

/// Evaluates every source at every design location, location-major.
pub fn initial_design<T: Scalar>(
    config: &CloverConfig,
    domain: &DomainBox<T>,
    sources: &[SharedSource<T>],
) -> Result<SampleSet<T>> {
    config.validate(sources.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let points = initial_points(domain, &config.initial_design, config.n_initial, &mut rng)?;
    let mut samples = SampleSet::new();
    for x in points.iter() {
        for (l, s) in sources.iter().enumerate() {
            samples.push(Observation::new(l, x.to_vec(), evaluate(s, l, x)?));
        }
    }
    Ok(samples)
}

fn evaluate<T: Scalar>(source: &SharedSource<T>, index: usize, x: &[T]) -> Result<T> {
    let y = source.evaluate(x).map_err(|error| CloverError::Source {
        source_index: index,
        error,
    })?;
    if !y.is_finite() {
        return Err(CloverError::Numerical(format!("source {index} returned {y}")));
    }
    Ok(y)
}

fn check_cost<T: Scalar>(source: &SharedSource<T>, index: usize, x: &[T]) -> Result<T> {
    let c = source.cost(x);
    if c > T::zero() && c.is_finite() {
        Ok(c)
    } else {
        Err(CloverError::Config(format!("query cost of source {index} must be positive, got {c}")))
    }
}

pub fn run<T: Scalar>(config: &CloverConfig, domain: &DomainBox<T>, sources: &[SharedSource<T>]) -> RunOutput<T> {
    run_with_metrics(config, domain, sources, |_| Vec::new())
}

/// Runs the loop and records `metrics(posterior)` alongside the entropy of
/// every assimilated batch.
pub fn run_with_metrics<T, M>(config: &CloverConfig, domain: &DomainBox<T>, sources: &[SharedSource<T>], metrics: M) -> RunOutput<T>
where
    T: Scalar,
    M: FnMut(&Posterior<T>) -> Vec<f64>,
{
    let mut state = Loop {
        config,
        domain,
        sources,
        metrics,
        trace: Vec::new(),
        samples: SampleSet::new(),
        pending: 0,
        cum_cost: T::zero(),
        model: None,
        fits: 0,
        fit_fallbacks: 0,
    };
    let (posterior, outcome) = state.execute();
    let (stop, error) = match outcome {
        Ok(s) => (s, None),
        Err(e) => (StopReason::Error, Some(e)),
    };
    let contour = posterior
        .as_ref()
        .and_then(|p| extract_contour(|x| p.mean0(x), domain, config.contour_resolution.max(2)).ok());
    RunOutput {
        trace: state.trace,
        stop,
        error,
        posterior,
        contour,
        fit_fallbacks: state.fit_fallbacks,
    }
}

struct Loop<'a, T: Scalar, M> {
    config: &'a CloverConfig,
    domain: &'a DomainBox<T>,
    sources: &'a [SharedSource<T>],
    metrics: M,
    trace: Vec<IterationTrace<T>>,
    samples: SampleSet<T>,
    // Trailing trace rows still waiting for their surrogate's entropy.
    pending: usize,
    cum_cost: T,
    model: Option<MisGp<T>>,
    fits: u64,
    fit_fallbacks: usize,
}

impl<T: Scalar, M: FnMut(&Posterior<T>) -> Vec<f64>> Loop<'_, T, M> {
    fn execute(&mut self) -> (Option<Posterior<T>>, Result<StopReason>) {
        let mut last = None;
        let outcome = self.execute_into(&mut last);
        if outcome.is_err() {
            self.settle(T::nan(), Vec::new());
        }
        (last, outcome)
    }

    fn execute_into(&mut self, last: &mut Option<Posterior<T>>) -> Result<StopReason> {
        let cfg = self.config;
        let m = self.sources.len();
        cfg.validate(m)?;
        let rule = ToleranceRule::new(T::lit(cfg.c_eps))?;
        let grid = IntegrationGrid::trapezoid(self.domain, cfg.grid_per_dim)?;
        let allowed = cfg.allowed_sources.clone().unwrap_or_else(|| (0..m).collect());
        let candidates = CandidateSet::new(uniform_grid(self.domain, cfg.candidates_per_dim)?, allowed, self.domain)?;

        // Recorded as evaluated so a failing source leaves a partial trace.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let points = initial_points(self.domain, &cfg.initial_design, cfg.n_initial, &mut rng)?;
        for x in points.iter() {
            for (l, s) in self.sources.iter().enumerate() {
                let y = evaluate(s, l, x)?;
                self.record(0, Observation::new(l, x.to_vec(), y), None, true)?;
            }
        }
        self.refit()?;
        let mut posterior = self.condition()?;
        *last = Some(posterior.clone());

        let mut iter = 0;
        loop {
            let la = Lookahead::new(&posterior, &grid, &rule, cfg.lookahead);
            let entropy = la.current_entropy();
            let metrics = (self.metrics)(&posterior);
            self.settle(entropy, metrics);
            if let Some(stop) = self.stop_reason(entropy) {
                return Ok(stop);
            }
            iter += 1;
            let sources = self.sources;
            let decision = select_with(&la, &candidates, |l, x| sources[l].cost(x), cfg.baseline)?;
            if let Some(floor) = cfg.acquisition_floor {
                if decision.value <= T::lit(floor) {
                    return Ok(StopReason::AcquisitionFloor);
                }
            }
            let x = decision.x;
            let l = decision.source;
            let refresh = refresh_schedule(l);
            let y = evaluate(&sources[l], l, &x)?;
            self.record(iter, Observation::new(l, x.clone(), y), Some(decision.value), refresh)?;
            if refresh {
                for k in (0..m).filter(|&k| k != l) {
                    let yk = evaluate(&sources[k], k, &x)?;
                    self.record(iter, Observation::new(k, x.clone(), yk), None, true)?;
                }
                self.refit()?;
            }
            posterior = self.condition()?;
            *last = Some(posterior.clone());
        }
    }

    fn record(&mut self, iter: usize, obs: Observation<T>, acquisition: Option<T>, refreshed: bool) -> Result<()> {
        let cost = check_cost(&self.sources[obs.source], obs.source, &obs.x)?;
        self.cum_cost += cost;
        self.trace.push(IterationTrace {
            iter,
            source: obs.source,
            x: obs.x.clone(),
            y: obs.y,
            step_cost: cost,
            cum_cost: self.cum_cost,
            entropy: T::nan(),
            acquisition,
            refreshed,
            metrics: Vec::new(),
        });
        self.samples.push(obs);
        self.pending += 1;
        Ok(())
    }

    fn settle(&mut self, entropy: T, metrics: Vec<f64>) {
        let n = self.trace.len();
        for row in &mut self.trace[n - self.pending..] {
            row.entropy = entropy;
            row.metrics = metrics.clone();
        }
        self.pending = 0;
    }

    fn stop_reason(&self, entropy: T) -> Option<StopReason> {
        let cfg = self.config;
        if let Some(b) = cfg.budget {
            if self.cum_cost >= T::lit(b) {
                return Some(StopReason::Budget);
            }
        }
        if let Some(f) = cfg.entropy_floor {
            if entropy <= T::lit(f) {
                return Some(StopReason::EntropyFloor);
            }
        }
        if let Some(k) = cfg.max_evaluations {
            if self.trace.len() >= k {
                return Some(StopReason::MaxEvaluations);
            }
        }
        None
    }

    fn noise(&self, l: usize) -> NoiseVariance<T> {
        let s = Arc::clone(&self.sources[l]);
        NoiseVariance::Function(Arc::new(move |x: &[T]| s.noise_variance(x)))
    }

    // Refits the base process on IS0 data and each bias process on paired
    // differences. A bias without two pairs keeps its previous values.
    fn refit(&mut self) -> Result<()> {
        let cfg = self.config;
        let m = self.sources.len();
        let d = self.domain.dim();
        let seed = cfg.seed.wrapping_add(self.fits);
        self.fits += 1;

        let mut points = PointSet::new(d);
        let (mut y, mut noise) = (Vec::new(), Vec::new());
        for o in self.samples.of_source(0) {
            points.push(&o.x);
            y.push(o.y);
            noise.push(self.sources[0].noise_variance(&o.x));
        }
        let base = fit(
            &TrainingData::new(points, y, noise)?,
            self.domain,
            &cfg.fit_settings(cfg.mean, &cfg.priors, seed),
        )?;
        self.fit_fallbacks += usize::from(base.fallback);

        let mut model = match self.model.take() {
            Some(mut model) => {
                model.set_base(base.mean, base.kernel);
                model
            }
            None => {
                let mut model = MisGp::new(base.mean, base.kernel.clone());
                for _ in 1..m {
                    model = model.with_bias(default_mean(cfg.bias_mean), base.kernel.clone());
                }
                for l in 0..m {
                    model = model.with_noise(l, self.noise(l))?;
                }
                model
            }
        };
        for (i, pairs) in pair_biases(&self.samples, m).into_iter().enumerate() {
            let l = i + 1;
            if pairs.len() < 2 {
                continue;
            }
            let mut points = PointSet::new(d);
            let (mut y, mut noise) = (Vec::new(), Vec::new());
            for p in &pairs {
                points.push(&p.x);
                y.push(p.delta);
                noise.push(self.sources[0].noise_variance(&p.x) + self.sources[l].noise_variance(&p.x));
            }
            let settings = cfg.fit_settings(cfg.bias_mean, &cfg.bias_priors, seed.wrapping_add(l as u64 * 7919));
            let res = fit(&TrainingData::new(points, y, noise)?, self.domain, &settings)?;
            self.fit_fallbacks += usize::from(res.fallback);
            model.set_bias(
                l,
                BiasModel {
                    mean: res.mean,
                    kernel: res.kernel,
                },
            )?;
        }
        self.model = Some(model);
        Ok(())
    }

    fn condition(&self) -> Result<Posterior<T>> {
        self.model
            .as_ref()
            .ok_or_else(|| CloverError::Numerical("surrogate used before its first fit".into()))?
            .condition(&self.samples)
    }
}

fn default_mean<T: Scalar>(family: MeanFamily) -> MeanSpec<T> {
    match family {
        MeanFamily::Zero => MeanSpec::Zero,
        MeanFamily::Constant => MeanSpec::Constant(T::zero()),
    }
}

