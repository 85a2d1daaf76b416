//! Cost-normalized expected reduction of contour entropy.
//!
//! A fantasy observation at `(ℓ, x)` leaves the posterior covariance
//! independent of its value and shifts `μ(0, x')` by a normal amount with
//! variance `σ̄²(x'; ℓ, x)`. Replacing `Φ ln Φ` by a scaled Gaussian bump
//! turns the expectation of the pointwise entropy over that shift into a
//! closed form, so the expected look-ahead contour entropy costs one pass
//! over the integration nodes per candidate.

use serde::{Deserialize, Serialize};

use crate::domain::{DomainBox, PointSet};
use crate::entropy::{entropy_at, IntegrationGrid, ToleranceRule, SIGMA_FLOOR};
use crate::error::{CloverError, Result};
use crate::misgp::Posterior;
use crate::scalar::Scalar;
use crate::special::{norm_cdf, norm_quantile, xlnx};

/// Nodes whose standardized mean exceeds the band half-width plus `|x̄|` by
/// this many units contribute below `e^-40` to every term and are skipped.
pub const PRUNE_MARGIN: f64 = 9.0;

/// `x̄ = Φ⁻¹(e⁻¹)` and `c = Φ(x̄) ln Φ(x̄) = -e⁻¹`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxConstants<T> {
    pub x_bar: T,
    pub c: T,
}

impl<T: Scalar> ApproxConstants<T> {
    pub fn new() -> Self {
        let p = (-T::one()).exp();
        let x_bar = norm_quantile(p);
        let phi = norm_cdf(x_bar);
        Self {
            x_bar,
            c: phi * phi.ln(),
        }
    }
}

impl<T: Scalar> Default for ApproxConstants<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// `Φ(x) ln Φ(x)`.
pub fn phi_ln_phi<T: Scalar>(x: T) -> T {
    xlnx(norm_cdf(x))
}

/// `(Φ(x+d) − Φ(x−d)) ln (Φ(x+d) − Φ(x−d))`.
pub fn band_ln_band<T: Scalar>(x: T, d: T) -> T {
    xlnx(norm_cdf(x + d) - norm_cdf(x - d))
}

/// `√(2π) c φ(x − x̄)`.
pub fn approx_phi_ln_phi<T: Scalar>(x: T) -> T {
    let k = ApproxConstants::<T>::new();
    k.c * bump(x - k.x_bar)
}

/// `√(2π) c (φ(x − d + x̄) + φ(x + d − x̄))`.
pub fn approx_band_ln_band<T: Scalar>(x: T, d: T) -> T {
    let k = ApproxConstants::<T>::new();
    k.c * (bump(x - d + k.x_bar) + bump(x + d - k.x_bar))
}

#[inline]
fn bump<T: Scalar>(z: T) -> T {
    (-T::lit(0.5) * z * z).exp()
}

/// Which standard deviation sets `ε` inside the look-ahead expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LookaheadTolerance {
    /// `ε = c_ε σⁿ`, frozen at the current iteration.
    ///
    /// With `ε = c_ε σ̂` the closed form measures how much the fantasy
    /// sample settles each node against a fixed band.
    #[default]
    Current,
    /// `ε = c_ε σⁿ⁺¹`, the fantasy posterior's own deviation. The band
    /// shrinks along with `σ`, so near the contour the expected entropy
    /// usually rises and most queries score below zero.
    Fantasy,
}

/// What the expected look-ahead entropy is subtracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyBaseline {
    /// The same closed form with a zero mean shift, so an uninformative
    /// query scores exactly zero.
    #[default]
    Approximate,
    /// The exact contour entropy of the current posterior.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AcquisitionOptions {
    pub tolerance: LookaheadTolerance,
    pub baseline: EntropyBaseline,
}

/// Per-snapshot precomputation for evaluating many candidates.
#[derive(Debug)]
pub struct Lookahead<'a, T> {
    posterior: &'a Posterior<T>,
    consts: ApproxConstants<T>,
    c_eps: T,
    tolerance: LookaheadTolerance,
    n: usize,
    points: Vec<T>,
    weights: Vec<T>,
    z: Vec<T>,
    var: Vec<T>,
    whitened: Vec<T>,
    volume: T,
    approx_current: T,
    exact_current: T,
    total_nodes: usize,
}

impl<'a, T: Scalar> Lookahead<'a, T> {
    pub fn new(
        posterior: &'a Posterior<T>,
        grid: &IntegrationGrid<T>,
        rule: &ToleranceRule<T>,
        tolerance: LookaheadTolerance,
    ) -> Self {
        let consts = ApproxConstants::<T>::new();
        let c_eps = rule.c_eps();
        let n = posterior.samples().len();
        let dim = grid.nodes().dim();
        let cut = c_eps + consts.x_bar.abs() + T::lit(PRUNE_MARGIN);
        let floor = T::lit(SIGMA_FLOOR);
        let mut out = Self {
            posterior,
            consts,
            c_eps,
            tolerance,
            n,
            points: Vec::new(),
            weights: Vec::new(),
            z: Vec::new(),
            var: Vec::new(),
            whitened: Vec::new(),
            volume: grid.volume(),
            approx_current: T::zero(),
            exact_current: T::zero(),
            total_nodes: grid.len(),
        };
        let chol = posterior.cholesky();
        let model = posterior.model();
        let mut exact = T::zero();
        let mut approx = T::zero();
        for (x, &w) in grid.nodes().iter().zip(grid.weights()) {
            let mut k = posterior.cross_cov(0, x);
            let mean = model.prior_mean_unchecked(0, x) + T::dot(&k, posterior.alpha());
            chol.solve_lower_in_place(&mut k);
            let var = (model.prior_cov_unchecked(0, x, 0, x) - T::dot(&k, &k)).max(T::zero());
            let sd = var.sqrt();
            exact += w * entropy_at(mean, sd, rule);
            if sd < floor {
                continue;
            }
            let z = mean / sd;
            if z.abs() >= cut {
                continue;
            }
            approx += w * out.node_term(z, T::one());
            out.points.extend_from_slice(x);
            out.weights.push(w);
            out.z.push(z);
            out.var.push(var);
            out.whitened.extend_from_slice(&k);
        }
        debug_assert_eq!(out.points.len(), out.weights.len() * dim);
        out.exact_current = exact / out.volume;
        out.approx_current = approx / out.volume;
        out
    }

    /// Number of integration nodes that can still change.
    pub fn active_nodes(&self) -> usize {
        self.weights.len()
    }

    pub fn total_nodes(&self) -> usize {
        self.total_nodes
    }

    /// Exact contour entropy of the current posterior over the grid.
    pub fn current_entropy(&self) -> T {
        self.exact_current
    }

    /// Closed-form entropy of the current posterior (zero mean shift).
    pub fn approximate_current_entropy(&self) -> T {
        self.approx_current
    }

    pub fn baseline(&self, baseline: EntropyBaseline) -> T {
        match baseline {
            EntropyBaseline::Approximate => self.approx_current,
            EntropyBaseline::Exact => self.exact_current,
        }
    }

    // -c r Σ_ij exp(-½ (z ± e ± x̄ r)²), with e the band half-width in
    // units of σⁿ.
    #[inline]
    fn node_term(&self, z: T, r: T) -> T {
        let e = match self.tolerance {
            LookaheadTolerance::Fantasy => self.c_eps * r,
            LookaheadTolerance::Current => self.c_eps,
        };
        let s = self.consts.x_bar * r;
        let sum = bump(z + e + s) + bump(z + e - s) + bump(z - e + s) + bump(z - e - s);
        -self.consts.c * r * sum
    }

    /// Expected contour entropy after observing source `ℓ` at `x`.
    pub fn expected_entropy(&self, source: usize, x: &[T]) -> Result<T> {
        let base: Vec<T> = self.base_column(x)?;
        self.expected_entropy_with_column(source, x, &base)
    }

    /// Expected entropies for several sources at the same location.
    pub fn expected_entropies(&self, sources: &[usize], x: &[T]) -> Result<Vec<T>> {
        let base = self.base_column(x)?;
        sources
            .iter()
            .map(|&s| self.expected_entropy_with_column(s, x, &base))
            .collect()
    }

    fn base_column(&self, x: &[T]) -> Result<Vec<T>> {
        let model = self.posterior.model();
        if x.len() != model.dim() {
            return Err(CloverError::Dimension {
                expected: model.dim(),
                got: x.len(),
            });
        }
        let d = model.dim();
        let kernel = model.base_kernel();
        Ok(self.points.chunks_exact(d).map(|p| kernel.eval(p, x)).collect())
    }

    fn expected_entropy_with_column(&self, source: usize, x: &[T], base: &[T]) -> Result<T> {
        let post = self.posterior;
        let model = post.model();
        let noise = model.noise_variance(source, x)?;
        // An exact repeat of a noise-free observation returns the recorded
        // value; only the jitter would make it look informative.
        if noise == T::zero() && post.samples().iter().any(|o| o.source == source && o.x.as_slice() == x) {
            return Ok(self.approx_current);
        }
        let mut w = post.cross_cov(source, x);
        post.cholesky().solve_lower_in_place(&mut w);
        let var = (model.prior_cov_unchecked(source, x, source, x) - T::dot(&w, &w)).max(T::zero());
        let denom = noise + var + post.jitter();
        if !(denom > post.jitter_floor()) {
            return Ok(self.approx_current);
        }
        let inv = denom.recip();
        let n = self.n;
        let mut acc = T::zero();
        for j in 0..self.weights.len() {
            let row = &self.whitened[j * n..(j + 1) * n];
            let cross = base[j] - T::dot(row, &w);
            let drop = cross * cross * inv;
            let r2 = (T::one() - drop / self.var[j]).max(T::zero()).min(T::one());
            acc += self.weights[j] * self.node_term(self.z[j], r2.sqrt());
        }
        Ok(acc / self.volume)
    }
}

/// Closed-form `E_y[L(fⁿ⁺¹) | ℓⁿ⁺¹ = ℓ, xⁿ⁺¹ = x]`.
pub fn expected_lookahead_entropy<T: Scalar>(
    posterior: &Posterior<T>,
    source: usize,
    x: &[T],
    grid: &IntegrationGrid<T>,
    rule: &ToleranceRule<T>,
    tolerance: LookaheadTolerance,
) -> Result<T> {
    Lookahead::new(posterior, grid, rule, tolerance).expected_entropy(source, x)
}

/// `u(ℓ, x) = (L(fⁿ) − E_y[L(fⁿ⁺¹)]) / c_ℓ(x)`. Not clamped: small negative
/// values are approximation artifacts.
pub fn acquisition_value<T: Scalar>(
    posterior: &Posterior<T>,
    source: usize,
    x: &[T],
    cost: T,
    grid: &IntegrationGrid<T>,
    rule: &ToleranceRule<T>,
    options: AcquisitionOptions,
) -> Result<T> {
    check_cost(source, cost)?;
    let la = Lookahead::new(posterior, grid, rule, options.tolerance);
    let expected = la.expected_entropy(source, x)?;
    Ok((la.baseline(options.baseline) - expected) / cost)
}

fn check_cost<T: Scalar>(source: usize, cost: T) -> Result<()> {
    if cost > T::zero() && cost.is_finite() {
        Ok(())
    } else {
        Err(CloverError::Config(format!(
            "query cost of source {source} must be positive, got {cost}"
        )))
    }
}

/// Discrete search set `𝒜` and the sources allowed to be queried on it.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet<T> {
    points: PointSet<T>,
    sources: Vec<usize>,
}

impl<T: Scalar> CandidateSet<T> {
    pub fn new(points: PointSet<T>, mut sources: Vec<usize>, domain: &DomainBox<T>) -> Result<Self> {
        if points.is_empty() || sources.is_empty() {
            return Err(CloverError::Config("candidate set needs at least one point and one source".into()));
        }
        if points.dim() != domain.dim() {
            return Err(CloverError::Dimension {
                expected: domain.dim(),
                got: points.dim(),
            });
        }
        if let Some(p) = points.iter().find(|p| !domain.contains(p)) {
            return Err(CloverError::Config(format!("candidate {p:?} is outside the domain")));
        }
        sources.sort_unstable();
        sources.dedup();
        Ok(Self { points, sources })
    }

    pub fn points(&self) -> &PointSet<T> {
        &self.points
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn len(&self) -> usize {
        self.points.len() * self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Acquisition value of one `(ℓ, x)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateScore<T> {
    pub source: usize,
    pub point: usize,
    pub value: T,
    pub expected_entropy: T,
}

/// The maximizer of `u` over the candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionDecision<T> {
    pub source: usize,
    pub x: Vec<T>,
    pub value: T,
    pub expected_lookahead_entropy: T,
    pub current_entropy: T,
}

/// Scores every candidate, source-major.
pub fn score_candidates<T, C>(
    lookahead: &Lookahead<'_, T>,
    candidates: &CandidateSet<T>,
    cost: C,
    baseline: EntropyBaseline,
) -> Result<Vec<CandidateScore<T>>>
where
    T: Scalar,
    C: Fn(usize, &[T]) -> T,
{
    let base_value = lookahead.baseline(baseline);
    let sources = candidates.sources();
    let mut by_point = Vec::with_capacity(candidates.points().len());
    for (i, x) in candidates.points().iter().enumerate() {
        let expected = lookahead.expected_entropies(sources, x)?;
        let mut row = Vec::with_capacity(sources.len());
        for (&s, e) in sources.iter().zip(expected) {
            let c = cost(s, x);
            check_cost(s, c)?;
            row.push(CandidateScore {
                source: s,
                point: i,
                value: (base_value - e) / c,
                expected_entropy: e,
            });
        }
        by_point.push(row);
    }
    let mut out = Vec::with_capacity(candidates.len());
    for k in 0..sources.len() {
        out.extend(by_point.iter().map(|row| row[k]));
    }
    Ok(out)
}

/// Deterministic argmax: highest value, ties to the lower source and then
/// the lexicographically smaller location. Independent of candidate order.
pub fn argmax<T: Scalar>(scores: &[CandidateScore<T>], points: &PointSet<T>) -> Option<CandidateScore<T>> {
    let mut best: Option<CandidateScore<T>> = None;
    for s in scores.iter().filter(|s| s.value.is_finite()) {
        best = match best {
            None => Some(*s),
            Some(b) => {
                let better = s.value > b.value
                    || (s.value == b.value && precedes((s.source, points.get(s.point)), (b.source, points.get(b.point))));
                Some(if better { *s } else { b })
            }
        };
    }
    best
}

fn precedes<T: Scalar>((la, xa): (usize, &[T]), (lb, xb): (usize, &[T])) -> bool {
    if la != lb {
        return la < lb;
    }
    for (a, b) in xa.iter().zip(xb) {
        if a < b {
            return true;
        }
        if a > b {
            return false;
        }
    }
    false
}

/// Maximizes `u(ℓ, x)` over `candidates`.
pub fn select_next<T, C>(
    posterior: &Posterior<T>,
    candidates: &CandidateSet<T>,
    cost: C,
    grid: &IntegrationGrid<T>,
    rule: &ToleranceRule<T>,
    options: AcquisitionOptions,
) -> Result<AcquisitionDecision<T>>
where
    T: Scalar,
    C: Fn(usize, &[T]) -> T,
{
    let la = Lookahead::new(posterior, grid, rule, options.tolerance);
    select_with(&la, candidates, cost, options.baseline)
}

/// [`select_next`] on a prepared [`Lookahead`].
pub fn select_with<T, C>(
    lookahead: &Lookahead<'_, T>,
    candidates: &CandidateSet<T>,
    cost: C,
    baseline: EntropyBaseline,
) -> Result<AcquisitionDecision<T>>
where
    T: Scalar,
    C: Fn(usize, &[T]) -> T,
{
    let scores = score_candidates(lookahead, candidates, cost, baseline)?;
    let best = argmax(&scores, candidates.points()).ok_or_else(|| {
        let dump: Vec<String> = scores
            .iter()
            .take(16)
            .map(|s| format!("(source {}, point {}) -> {}", s.source, s.point, s.value))
            .collect();
        CloverError::Numerical(format!(
            "no finite acquisition value among {} candidates; first entries: {}",
            scores.len(),
            dump.join(", ")
        ))
    })?;
    Ok(AcquisitionDecision {
        source: best.source,
        x: candidates.points().get(best.point).to_vec(),
        value: best.value,
        expected_lookahead_entropy: best.expected_entropy,
        current_entropy: lookahead.current_entropy(),
    })
}
