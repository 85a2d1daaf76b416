mod common;

use clover::domain::{Observation, SampleSet};
use clover::kernel::{KernelFamily, KernelSpec, MeanSpec};
use clover::misgp::{MisGp, NoiseVariance, Posterior};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_model(r: &mut impl Rng, dim: usize, sources: usize) -> MisGp<f64> {
    let fam = if r.gen_bool(0.5) {
        KernelFamily::SquaredExponential
    } else {
        KernelFamily::Matern52
    };
    let ls = |r: &mut dyn rand::RngCore| (0..dim).map(|_| r.gen_range(0.2..1.0)).collect::<Vec<f64>>();
    let mut m = MisGp::new(MeanSpec::Constant(r.gen_range(-1.0..1.0)), KernelSpec::new(fam, r.gen_range(0.5..2.0), ls(r)).unwrap());
    for _ in 1..sources {
        m = m.with_bias(
            MeanSpec::Constant(r.gen_range(-0.5..0.5)),
            KernelSpec::new(fam, r.gen_range(0.05..0.5), ls(r)).unwrap(),
        );
    }
    for s in 0..sources {
        let lam = if r.gen_bool(0.5) { 0.0 } else { r.gen_range(1e-4..1e-1) };
        m = m.with_noise(s, NoiseVariance::Constant(lam)).unwrap();
    }
    m
}

fn random_samples(r: &mut impl Rng, dim: usize, sources: usize, n: usize) -> SampleSet<f64> {
    (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..dim).map(|_| r.gen_range(0.0..2.0)).collect();
            let y = x.iter().map(|v| (2.0 * v).sin()).sum::<f64>() + r.gen_range(-0.1..0.1);
            Observation::new(r.gen_range(0..sources), x, y)
        })
        .collect()
}

fn invert(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i * n + c].abs().total_cmp(&m[j * n + c].abs())).unwrap();
        for k in 0..n {
            m.swap(c * n + k, p * n + k);
            inv.swap(c * n + k, p * n + k);
        }
        let d = m[c * n + c];
        for k in 0..n {
            m[c * n + k] /= d;
            inv[c * n + k] /= d;
        }
        for i in 0..n {
            if i != c {
                let f = m[i * n + c];
                for k in 0..n {
                    m[i * n + k] -= f * m[c * n + k];
                    inv[i * n + k] -= f * inv[c * n + k];
                }
            }
        }
    }
    inv
}

// Dense textbook formulas with an explicit inverse.
struct Naive {
    inv: Vec<f64>,
    resid: Vec<f64>,
}

impl Naive {
    fn new(post: &Posterior<f64>) -> Self {
        let m = post.model();
        let recs = post.samples().records();
        let n = recs.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] = m.prior_cov((recs[i].source, &recs[i].x), (recs[j].source, &recs[j].x)).unwrap();
            }
            k[i * n + i] += m.noise_variance(recs[i].source, &recs[i].x).unwrap() + post.jitter();
        }
        let resid = recs.iter().map(|r| r.y - m.prior_mean(r.source, &r.x).unwrap()).collect();
        Self { inv: invert(&k, n), resid }
    }

    fn kvec(post: &Posterior<f64>, l: usize, x: &[f64]) -> Vec<f64> {
        post.samples()
            .iter()
            .map(|r| post.model().prior_cov((r.source, &r.x), (l, x)).unwrap())
            .collect()
    }

    fn quad(&self, a: &[f64], b: &[f64]) -> f64 {
        let n = a.len();
        (0..n).map(|i| (0..n).map(|j| a[i] * self.inv[i * n + j] * b[j]).sum::<f64>()).sum()
    }

    fn mean(&self, post: &Posterior<f64>, l: usize, x: &[f64]) -> f64 {
        let k = Self::kvec(post, l, x);
        post.model().prior_mean(l, x).unwrap() + self.quad(&k, &self.resid)
    }

    fn cov(&self, post: &Posterior<f64>, a: (usize, &[f64]), b: (usize, &[f64])) -> f64 {
        let ka = Self::kvec(post, a.0, a.1);
        let kb = Self::kvec(post, b.0, b.1);
        post.model().prior_cov(a, b).unwrap() - self.quad(&ka, &kb)
    }
}

#[test]
fn posterior_matches_naive_dense_formulas() {
    for seed in 0..10 {
        let mut r = common::rng(seed);
        let dim = 1 + (seed as usize % 2);
        let model = random_model(&mut r, dim, 3);
        let samples = random_samples(&mut r, dim, 3, 5);
        let post = model.condition(&samples).unwrap();
        let naive = Naive::new(&post);
        for _ in 0..3 {
            let x: Vec<f64> = (0..dim).map(|_| r.gen_range(0.0..2.0)).collect();
            let xp: Vec<f64> = (0..dim).map(|_| r.gen_range(0.0..2.0)).collect();
            for l in 0..3 {
                let m = post.mean(l, &x).unwrap();
                assert!((m - naive.mean(&post, l, &x)).abs() < 1e-8, "mean, seed {seed}");
                for k in 0..3 {
                    let c = post.cov((l, &x), (k, &xp)).unwrap();
                    assert!((c - naive.cov(&post, (l, &x), (k, &xp))).abs() < 1e-8, "cov, seed {seed}");
                }
            }
        }
    }
}

#[test]
fn lookahead_variance_matches_resampled_updates() {
    let mut r = common::rng(7);
    let model = random_model(&mut r, 1, 2);
    let samples = random_samples(&mut r, 1, 2, 5);
    let post = model.condition(&samples).unwrap();
    let (xp, l, x) = ([0.9], 1, [1.1]);
    let sigma_bar2 = post.lookahead_mean_variance(&xp, l, &x).unwrap();
    assert!(!sigma_bar2.degenerate);
    let mean = post.mean(l, &x).unwrap();
    let sd = (post.variance(l, &x).unwrap() + model.noise_variance(l, &x).unwrap()).sqrt();
    let draws = 100_000;
    let mut updated = Vec::with_capacity(draws);
    for _ in 0..draws {
        let z: f64 = StandardNormal.sample(&mut r);
        let next = post.with_observation(Observation::new(l, x.to_vec(), mean + sd * z)).unwrap();
        updated.push(next.mean0(&xp));
    }
    let m = updated.iter().sum::<f64>() / draws as f64;
    let var = updated.iter().map(|u| (u - m) * (u - m)).sum::<f64>() / (draws - 1) as f64;
    let se = sigma_bar2.value * (2.0 / (draws - 1) as f64).sqrt();
    assert!(
        (var - sigma_bar2.value).abs() < 3.0 * se,
        "empirical {var} vs closed form {} (se {se})",
        sigma_bar2.value
    );
}

#[test]
fn fantasy_variance_matches_reconditioning() {
    for seed in 0..100 {
        let mut r = common::rng(1000 + seed);
        let dim = 1 + (seed as usize % 2);
        let sources = 1 + (seed as usize % 3);
        let model = random_model(&mut r, dim, sources);
        let n = r.gen_range(1..8);
        let post = model.condition(&random_samples(&mut r, dim, sources, n)).unwrap();
        let xp: Vec<f64> = (0..dim).map(|_| r.gen_range(0.0..2.0)).collect();
        let x: Vec<f64> = (0..dim).map(|_| r.gen_range(0.0..2.0)).collect();
        let l = r.gen_range(0..sources);
        let fantasy = post.fantasy_posterior_variance(&xp, l, &x).unwrap();
        let mut augmented = post.samples().clone();
        augmented.push(Observation::new(l, x.clone(), 0.0));
        let dummy = model.condition_with_jitter(&augmented, post.jitter()).unwrap();
        let recond = dummy.variance(0, &xp).unwrap();
        assert!((fantasy - recond).abs() < 1e-8, "seed {seed}: {fantasy} vs {recond}");
        let bar = post.lookahead_mean_variance(&xp, l, &x).unwrap().value;
        let now = post.variance(0, &xp).unwrap();
        assert!((now - (recond + bar)).abs() < 1e-8, "decomposition, seed {seed}");
    }
}

#[test]
fn posterior_is_invariant_to_record_order() {
    for seed in 0..10 {
        let mut r = common::rng(50 + seed);
        let model = random_model(&mut r, 2, 3);
        let samples = random_samples(&mut r, 2, 3, 8);
        let mut shuffled: Vec<Observation<f64>> = samples.records().to_vec();
        shuffled.shuffle(&mut r);
        let a = model.condition(&samples).unwrap();
        let b = model.condition(&shuffled.into_iter().collect()).unwrap();
        for _ in 0..5 {
            let x = [r.gen_range(0.0..2.0), r.gen_range(0.0..2.0)];
            assert!((a.mean0(&x) - b.mean0(&x)).abs() < 1e-10);
            assert!((a.variance(0, &x).unwrap() - b.variance(0, &x).unwrap()).abs() < 1e-10);
        }
    }
}

#[test]
fn uncorrelated_fantasy_leaves_variance_unchanged() {
    let model = MisGp::new(MeanSpec::Zero, KernelSpec::<f64>::squared_exponential(1.0, vec![0.1]).unwrap());
    let post = model.condition(&[Observation::new(0, vec![0.0], 1.0)].into_iter().collect()).unwrap();
    let before: f64 = post.variance(0, &[0.5]).unwrap();
    let after = post.fantasy_posterior_variance(&[0.5], 0, &[5.0]).unwrap();
    assert!((before - after).abs() < 1e-10);
    assert!(post.fantasy_posterior_variance(&[0.5], 0, &[0.5]).unwrap() < 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cross_source_covariance_is_the_base_kernel(
        seed in 0u64..10_000, l in 0usize..3, m in 0usize..3,
        x in prop::array::uniform2(-3.0f64..3.0), xp in prop::array::uniform2(-3.0f64..3.0),
    ) {
        prop_assume!(l != m);
        let mut r = common::rng(seed);
        let model = random_model(&mut r, 2, 3);
        let base = model.base_kernel().eval(&x, &xp);
        prop_assert_eq!(model.prior_cov((l, &x), (m, &xp)).unwrap() - base, 0.0);
    }

    #[test]
    fn gram_factorizes_with_small_jitter(seed in 0u64..10_000, n in 1usize..25) {
        // Duplicated noise-free locations make the Gram matrix singular.
        let mut r = common::rng(seed);
        let model = random_model(&mut r, 1, 2)
            .with_noise(0, NoiseVariance::Constant(0.0)).unwrap()
            .with_noise(1, NoiseVariance::Constant(0.0)).unwrap();
        let mut samples = random_samples(&mut r, 1, 2, n);
        let dup = samples.records()[0].clone();
        samples.push(dup);
        let post = model.condition(&samples).unwrap();
        let recs = samples.records();
        let mean_diag = recs.iter().map(|o| model.prior_cov((o.source, &o.x), (o.source, &o.x)).unwrap()).sum::<f64>()
            / recs.len() as f64;
        prop_assert!(post.jitter() <= 1e-6 * mean_diag);
    }
}
