#![allow(dead_code)]

use clover::domain::{DomainBox, Observation, SampleSet};
use clover::acquisition::LookaheadTolerance;
use clover::entropy::{EventProbs, IntegrationGrid, ToleranceRule, SIGMA_FLOOR};
use clover::kernel::{KernelSpec, MeanSpec};
use clover::misgp::{MisGp, NoiseVariance, Posterior};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random surrogate over `[0, 1]^d` with a few samples of a smooth
/// function that crosses zero, plus a query `(source, x)`.
pub struct RandomState {
    pub domain: DomainBox<f64>,
    pub posterior: Posterior<f64>,
    pub source: usize,
    pub x: Vec<f64>,
}

pub fn random_state(seed: u64, dim: usize) -> RandomState {
    let mut r = rng(seed);
    let domain = DomainBox::new(vec![0.0; dim], vec![1.0; dim]).unwrap();
    let ls: Vec<f64> = (0..dim).map(|_| r.gen_range(0.15..0.45)).collect();
    let var = r.gen_range(0.5..2.0);
    let two_sources = r.gen_bool(0.5);
    let mut model = MisGp::new(MeanSpec::Zero, KernelSpec::squared_exponential(var, ls.clone()).unwrap());
    if two_sources {
        model = model.with_bias(
            MeanSpec::Zero,
            KernelSpec::squared_exponential(0.1 * var, ls.iter().map(|l| 2.0 * l).collect()).unwrap(),
        );
    }
    let noise0 = if r.gen_bool(0.3) { 1e-3 * var } else { 0.0 };
    model = model.with_noise(0, NoiseVariance::Constant(noise0)).unwrap();
    let phase: Vec<f64> = (0..dim).map(|_| r.gen_range(0.0..6.0)).collect();
    let shift = r.gen_range(-0.3..0.3);
    let truth = move |x: &[f64]| x.iter().zip(&phase).map(|(a, p)| (5.0 * a + p).sin()).sum::<f64>() + shift;
    let n = r.gen_range(3..=7);
    let mut samples = SampleSet::new();
    for _ in 0..n {
        let x: Vec<f64> = (0..dim).map(|_| r.gen::<f64>()).collect();
        let y = truth(&x);
        samples.push(Observation::new(0, x.clone(), y));
        if two_sources {
            samples.push(Observation::new(1, x.clone(), y + 0.2 * x[0]));
        }
    }
    let posterior = model.condition(&samples).unwrap();
    let source = if two_sources { r.gen_range(0..2) } else { 0 };
    let x: Vec<f64> = (0..dim).map(|_| r.gen::<f64>()).collect();
    RandomState {
        domain,
        posterior,
        source,
        x,
    }
}

/// Exact contour entropy with the band half-width taken from `band_sd`
/// (the posterior's own deviation when `None`).
pub fn exact_entropy(post: &Posterior<f64>, grid: &IntegrationGrid<f64>, c_eps: f64, band_sd: Option<&[f64]>) -> f64 {
    let mut total = 0.0;
    for (i, (x, w)) in grid.nodes().iter().zip(grid.weights()).enumerate() {
        let mean = post.mean(0, x).unwrap();
        let sd = post.variance(0, x).unwrap().sqrt().max(SIGMA_FLOOR);
        let eps = c_eps * band_sd.map_or(sd, |b| b[i]);
        total += w * EventProbs::new(mean, sd, eps).unwrap().entropy();
    }
    total / grid.volume()
}

/// Brute-force `E_y[L(fⁿ⁺¹)]`: draw the fantasy observation from its
/// predictive distribution, recondition from scratch and integrate the
/// exact entropy.
pub fn mc_lookahead(
    post: &Posterior<f64>,
    source: usize,
    x: &[f64],
    grid: &IntegrationGrid<f64>,
    rule: &ToleranceRule<f64>,
    draws: usize,
    seed: u64,
) -> (f64, f64) {
    mc_lookahead_with(post, source, x, grid, rule, LookaheadTolerance::default(), draws, seed)
}

#[allow(clippy::too_many_arguments)]
pub fn mc_lookahead_with(
    post: &Posterior<f64>,
    source: usize,
    x: &[f64],
    grid: &IntegrationGrid<f64>,
    rule: &ToleranceRule<f64>,
    tolerance: LookaheadTolerance,
    draws: usize,
    seed: u64,
) -> (f64, f64) {
    let frozen: Option<Vec<f64>> = match tolerance {
        LookaheadTolerance::Current => Some(
            grid.nodes()
                .iter()
                .map(|p| post.variance(0, p).unwrap().sqrt().max(SIGMA_FLOOR))
                .collect(),
        ),
        LookaheadTolerance::Fantasy => None,
    };
    let mut r = rng(seed);
    let mean = post.mean(source, x).unwrap();
    let sd = (post.variance(source, x).unwrap() + post.model().noise_variance(source, x).unwrap()).sqrt();
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for _ in 0..draws {
        let z: f64 = StandardNormal.sample(&mut r);
        let next = post.with_observation(Observation::new(source, x.to_vec(), mean + sd * z)).unwrap();
        let l = exact_entropy(&next, grid, rule.c_eps(), frozen.as_deref());
        sum += l;
        sum2 += l * l;
    }
    let m = sum / draws as f64;
    let se = ((sum2 / draws as f64 - m * m).max(0.0) / draws as f64).sqrt();
    (m, se)
}

pub fn grid_for(domain: &DomainBox<f64>) -> IntegrationGrid<f64> {
    let per = if domain.dim() == 1 { 200 } else { 30 };
    IntegrationGrid::trapezoid(domain, per).unwrap()
}
