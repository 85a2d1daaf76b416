//! Contour entropy.
//!
//! At each `x` the posterior `f(0, x) ~ N(μ, σ²)` is classified against the
//! band `±ε(x)` into three events: below (L), inside (C) and above (U). The
//! pointwise entropy of that three-way variable, averaged over the domain,
//! measures how uncertain the zero contour still is.

use rand::Rng;

use crate::domain::{DomainBox, PointSet};
use crate::error::{CloverError, Result};
use crate::misgp::Posterior;
use crate::scalar::Scalar;
use crate::special::{norm_cdf, xlnx};

/// Standard deviations below this are clamped before dividing.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Probabilities of the events L, C and U.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventProbs<T> {
    pub below: T,
    pub within: T,
    pub above: T,
}

impl<T: Scalar> EventProbs<T> {
    pub fn new(mean: T, sd: T, eps: T) -> Result<Self> {
        if !(sd > T::zero()) {
            return Err(CloverError::DegenerateDistribution(sd.to_f64().unwrap_or(f64::NAN)));
        }
        let eps = eps.max(T::zero());
        let below = norm_cdf((-mean - eps) / sd);
        let above = norm_cdf((mean - eps) / sd);
        // The band probability is taken as the complement so the three
        // masses sum to one to rounding.
        let within = (T::one() - below - above).max(T::zero());
        Ok(Self { below, within, above })
    }

    pub fn sum(&self) -> T {
        self.below + self.within + self.above
    }

    /// `H = -Σ p ln p`, in nats.
    pub fn entropy(&self) -> T {
        -(xlnx(self.below) + xlnx(self.within) + xlnx(self.above))
    }
}

pub fn pointwise_entropy<T: Scalar>(p: &EventProbs<T>) -> T {
    p.entropy()
}

/// `ε(x) = c_ε σ(0, x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceRule<T> {
    c_eps: T,
}

impl<T: Scalar> ToleranceRule<T> {
    pub fn new(c_eps: T) -> Result<Self> {
        if !(c_eps > T::zero()) || !c_eps.is_finite() {
            return Err(CloverError::Config(format!("c_eps must be positive, got {c_eps}")));
        }
        Ok(Self { c_eps })
    }

    pub fn c_eps(&self) -> T {
        self.c_eps
    }

    pub fn tolerance(&self, sd: T) -> T {
        self.c_eps * sd
    }
}

impl<T: Scalar> Default for ToleranceRule<T> {
    fn default() -> Self {
        Self { c_eps: T::lit(2.0) }
    }
}

/// Quadrature nodes and weights over the domain; weights sum to `V(D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationGrid<T> {
    nodes: PointSet<T>,
    weights: Vec<T>,
    volume: T,
}

impl<T: Scalar> IntegrationGrid<T> {
    pub fn new(nodes: PointSet<T>, weights: Vec<T>, domain: &DomainBox<T>) -> Result<Self> {
        if nodes.len() != weights.len() || nodes.is_empty() {
            return Err(CloverError::Config("integration grid needs one positive weight per node".into()));
        }
        if weights.iter().any(|w| !(*w > T::zero())) {
            return Err(CloverError::Config("integration weights must be positive".into()));
        }
        if nodes.iter().any(|x| !domain.contains(x)) {
            return Err(CloverError::Config("integration node outside the domain".into()));
        }
        Ok(Self {
            nodes,
            weights,
            volume: domain.volume(),
        })
    }

    /// Tensor-product trapezoid rule with `per_dim` nodes per axis,
    /// endpoints included.
    pub fn trapezoid(domain: &DomainBox<T>, per_dim: usize) -> Result<Self> {
        if per_dim < 2 {
            return Err(CloverError::Config("trapezoid rule needs at least 2 nodes per dimension".into()));
        }
        let d = domain.dim();
        let axes: Vec<Vec<(T, T)>> = (0..d)
            .map(|i| {
                let lo = domain.lower()[i];
                let h = (domain.upper()[i] - lo) / T::from_count(per_dim - 1);
                (0..per_dim)
                    .map(|k| {
                        let x = if k == per_dim - 1 {
                            domain.upper()[i]
                        } else {
                            lo + h * T::from_count(k)
                        };
                        let w = if k == 0 || k == per_dim - 1 { h * T::lit(0.5) } else { h };
                        (x, w)
                    })
                    .collect()
            })
            .collect();
        let mut nodes = PointSet::new(d);
        let mut weights = Vec::with_capacity(per_dim.pow(d as u32));
        let mut idx = vec![0usize; d];
        let mut point = vec![T::zero(); d];
        loop {
            let mut w = T::one();
            for (i, &k) in idx.iter().enumerate() {
                point[i] = axes[i][k].0;
                w *= axes[i][k].1;
            }
            nodes.push(&point);
            weights.push(w);
            // Odometer increment, last axis fastest.
            let mut axis = d;
            loop {
                if axis == 0 {
                    return Self::new(nodes, weights, domain);
                }
                axis -= 1;
                idx[axis] += 1;
                if idx[axis] < per_dim {
                    break;
                }
                idx[axis] = 0;
            }
        }
    }

    /// Equal-weight Monte Carlo nodes.
    pub fn monte_carlo<R: Rng + ?Sized>(domain: &DomainBox<T>, n: usize, rng: &mut R) -> Result<Self> {
        if n == 0 {
            return Err(CloverError::Config("Monte Carlo grid needs at least one node".into()));
        }
        let d = domain.dim();
        let mut nodes = PointSet::new(d);
        let mut u = vec![T::zero(); d];
        for _ in 0..n {
            for v in u.iter_mut() {
                *v = T::lit(rng.gen::<f64>());
            }
            nodes.push(&domain.from_unit(&u));
        }
        let w = domain.volume() / T::from_count(n);
        Self::new(nodes, vec![w; n], domain)
    }

    /// 50-per-axis trapezoid for `d ≤ 2`, 10⁴ Monte Carlo nodes above.
    pub fn default_for<R: Rng + ?Sized>(domain: &DomainBox<T>, rng: &mut R) -> Result<Self> {
        if domain.dim() <= 2 {
            Self::trapezoid(domain, 50)
        } else {
            Self::monte_carlo(domain, 10_000, rng)
        }
    }

    pub fn nodes(&self) -> &PointSet<T> {
        &self.nodes
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `V(D)` of the domain the grid was built for.
    pub fn volume(&self) -> T {
        self.volume
    }

    /// `(1/V) Σ w_i f(x_i)`.
    pub fn average<F: FnMut(&[T]) -> T>(&self, mut f: F) -> T {
        let total: T = self.nodes.iter().zip(&self.weights).map(|(x, w)| *w * f(x)).sum();
        total / self.volume
    }
}

/// Entropy of the three-way event variable for `N(mean, sd²)` with the
/// band set by `rule`. The standard deviation is floored at [`SIGMA_FLOOR`].
pub fn entropy_at<T: Scalar>(mean: T, sd: T, rule: &ToleranceRule<T>) -> T {
    let sd = sd.max(T::lit(SIGMA_FLOOR));
    EventProbs::new(mean, sd, rule.tolerance(sd))
        .map(|p| p.entropy())
        .unwrap_or(T::zero())
}

/// `L(f) = (1/V(D)) ∫ H(W_x; f) dx` by quadrature over `grid`.
pub fn contour_entropy<T: Scalar>(posterior: &Posterior<T>, grid: &IntegrationGrid<T>, rule: &ToleranceRule<T>) -> T {
    grid.average(|x| {
        let (mean, var) = posterior.mean_variance0(x);
        entropy_at(mean, var.sqrt(), rule)
    })
}

#[cfg(test)]
mod tests {
    const BAND_ENTROPY: f64 = 0.216_584_945_545_085_26;

    use super::*;
    use crate::domain::{Observation, SampleSet};
    use crate::kernel::{KernelSpec, MeanSpec};
    use crate::misgp::MisGp;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn symmetric_band_probabilities() {
        let p = EventProbs::<f64>::new(0.0, 1.0, 2.0).unwrap();
        assert!((p.below - 0.0227501).abs() < 1e-7);
        assert!((p.within - 0.9544997).abs() < 1e-7);
        assert!((p.above - 0.0227501).abs() < 1e-7);
    }

    #[test]
    fn far_field_limit() {
        let p = EventProbs::<f64>::new(10.0, 1.0, 1.0).unwrap();
        assert!((p.above - 1.0).abs() < 1e-9);
        assert!(p.below < 1e-9 && p.within < 1e-9);
    }

    #[test]
    fn zero_width_band() {
        let p = EventProbs::<f64>::new(0.7, 1.3, 0.0).unwrap();
        assert_eq!(p.within, 0.0);
        assert!((p.below - norm_cdf(-0.7 / 1.3)).abs() < 1e-15);
        assert!((p.above - (1.0 - p.below)).abs() < 1e-15);
    }

    #[test]
    fn degenerate_sd_is_an_error() {
        assert!(matches!(
            EventProbs::<f64>::new(0.0, 0.0, 1.0),
            Err(CloverError::DegenerateDistribution(_))
        ));
    }

    #[test]
    fn entropy_reference_values() {
        let third = 1.0 / 3.0;
        let uniform = EventProbs {
            below: third,
            within: third,
            above: third,
        };
        assert!((uniform.entropy() - 3.0f64.ln()).abs() < 1e-15);
        let sure = EventProbs {
            below: 1.0,
            within: 0.0,
            above: 0.0,
        };
        assert_eq!(sure.entropy(), 0.0);
        // -Σ p ln p at (Φ(-2), Φ(2)-Φ(-2), Φ(-2)), evaluated at 20 digits.
        let band = EventProbs::<f64>::new(0.0, 1.0, 2.0).unwrap();
        assert!((band.below - 0.022_750_131_948_179_2).abs() < 1e-15);
        assert!((band.within - 0.954_499_736_103_641_6).abs() < 1e-15);
        assert!((band.entropy() - BAND_ENTROPY).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_weights_sum_to_volume() {
        let d = DomainBox::new(vec![-5.0, 0.0], vec![10.0, 15.0]).unwrap();
        let g = IntegrationGrid::trapezoid(&d, 50).unwrap();
        assert_eq!(g.len(), 2500);
        let s: f64 = g.weights().iter().sum();
        assert!((s - 225.0).abs() < 1e-10);
        // Exact for bilinear integrands.
        let avg = g.average(|x| x[0] * x[1]);
        assert!((avg - 2.5 * 7.5).abs() < 1e-10);
    }

    #[test]
    fn monte_carlo_grid_in_domain() {
        let d = DomainBox::new(vec![0.0; 3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = IntegrationGrid::default_for(&d, &mut rng).unwrap();
        assert_eq!(g.len(), 10_000);
        let s: f64 = g.weights().iter().sum();
        assert!((s - 6.0).abs() < 1e-9);
    }

    fn prior_state(mean: f64, var: f64) -> Posterior<f64> {
        MisGp::new(MeanSpec::Constant(mean), KernelSpec::squared_exponential(var, vec![0.3]).unwrap())
            .condition(&SampleSet::new())
            .unwrap()
    }

    #[test]
    fn resolved_surrogate_has_negligible_entropy() {
        let d = DomainBox::new(vec![0.0], vec![1.0]).unwrap();
        let g = IntegrationGrid::trapezoid(&d, 50).unwrap();
        let p = prior_state(10.0, 0.25);
        assert!(contour_entropy(&p, &g, &ToleranceRule::default()) < 1e-6);
    }

    #[test]
    fn constant_integrand_reduces_to_pointwise_value() {
        let d = DomainBox::new(vec![0.0], vec![1.0]).unwrap();
        let g = IntegrationGrid::trapezoid(&d, 50).unwrap();
        let p = prior_state(0.0, 1.7);
        let l = contour_entropy(&p, &g, &ToleranceRule::default());
        assert!((l - BAND_ENTROPY).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_matches_monte_carlo_integration() {
        let d = DomainBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let m = MisGp::new(MeanSpec::Zero, KernelSpec::squared_exponential(1.0, vec![0.3, 0.3]).unwrap());
        let s: SampleSet<f64> = [
            Observation::new(0, vec![0.2, 0.3], 0.8),
            Observation::new(0, vec![0.7, 0.6], -0.5),
            Observation::new(0, vec![0.5, 0.9], 0.1),
        ]
        .into_iter()
        .collect();
        let p = m.condition(&s).unwrap();
        let rule = ToleranceRule::default();
        let trap = contour_entropy(&p, &IntegrationGrid::trapezoid(&d, 200).unwrap(), &rule);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let x = [rand::Rng::gen::<f64>(&mut rng), rand::Rng::gen::<f64>(&mut rng)];
            let (m, v) = p.mean_variance0(&x);
            acc += entropy_at(m, v.sqrt(), &rule);
        }
        let mc = acc / n as f64;
        assert!((trap - mc).abs() < 1e-3, "trapezoid {trap} vs MC {mc}");
    }

    #[test]
    fn grid_permutation_invariance() {
        let d = DomainBox::new(vec![0.0], vec![1.0]).unwrap();
        let g = IntegrationGrid::trapezoid(&d, 20).unwrap();
        let mut idx: Vec<usize> = (0..g.len()).collect();
        idx.reverse();
        idx.swap(3, 11);
        let mut nodes = PointSet::new(1);
        let mut w = Vec::new();
        for &i in &idx {
            nodes.push(g.nodes().get(i));
            w.push(g.weights()[i]);
        }
        let shuffled = IntegrationGrid::new(nodes, w, &d).unwrap();
        let m = MisGp::new(MeanSpec::Zero, KernelSpec::squared_exponential(1.0, vec![0.2]).unwrap());
        let s: SampleSet<f64> = [Observation::new(0, vec![0.4], 0.3)].into_iter().collect();
        let p = m.condition(&s).unwrap();
        let rule = ToleranceRule::default();
        let a = contour_entropy(&p, &g, &rule);
        let b = contour_entropy(&p, &shuffled, &rule);
        assert!((a - b).abs() < 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn probabilities_form_a_simplex(mu in -50.0f64..50.0, sd in 1e-6f64..20.0, eps in 0.0f64..40.0) {
            let p = EventProbs::<f64>::new(mu, sd, eps).unwrap();
            prop_assert!((p.sum() - 1.0).abs() <= 1e-12);
            prop_assert!(p.below >= 0.0 && p.within >= 0.0 && p.above >= 0.0);
            let h = p.entropy();
            prop_assert!(h >= 0.0 && h <= 3.0f64.ln() + 1e-12);
        }
    }

    #[test]
    fn entropy_vanishes_in_both_limits() {
        let wide = EventProbs::<f64>::new(0.0, 1.0, 40.0).unwrap().entropy();
        assert!(wide < 1e-12);
        let far = EventProbs::<f64>::new(60.0, 1.0, 0.0).unwrap().entropy();
        assert!(far < 1e-12);
        // Continuity in ε. The C term has a p ln p cusp at ε = 0.
        let mut prev = EventProbs::<f64>::new(0.0, 1.0, 0.0).unwrap().entropy();
        assert!((prev - 2f64.ln()).abs() < 1e-15);
        for k in 1..=4000 {
            let h = EventProbs::<f64>::new(0.0, 1.0, k as f64 * 1e-3).unwrap().entropy();
            assert!((h - prev).abs() < 1e-2, "k = {k}");
            prev = h;
        }
    }
}
