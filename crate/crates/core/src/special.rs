//! Standard normal distribution functions.

use crate::scalar::Scalar;

const MAX_TERMS: usize = 1000;

/// Error function.
pub fn erf<T: Scalar>(x: T) -> T {
    if x < T::zero() {
        return -erf(-x);
    }
    if x < T::lit(2.0) {
        erf_series(x)
    } else {
        T::one() - erfc_continued_fraction(x)
    }
}

/// Complementary error function, accurate in relative terms deep into the
/// upper tail.
pub fn erfc<T: Scalar>(x: T) -> T {
    if x.is_nan() {
        return x;
    }
    if x < T::zero() {
        return T::lit(2.0) - erfc(-x);
    }
    if x < T::lit(2.0) {
        T::one() - erf_series(x)
    } else {
        erfc_continued_fraction(x)
    }
}

// erf(x) = 2/sqrt(pi) exp(-x^2) sum_n 2^n x^(2n+1) / (2n+1)!!
// All terms are positive, so there is no cancellation.
fn erf_series<T: Scalar>(x: T) -> T {
    let two_x2 = T::lit(2.0) * x * x;
    let mut term = x;
    let mut sum = x;
    for n in 1..MAX_TERMS {
        term = term * two_x2 / T::from_count(2 * n + 1);
        sum += term;
        if term <= sum * T::epsilon() {
            break;
        }
    }
    T::FRAC_2_SQRT_PI() * (-x * x).exp() * sum
}

// erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))),
// evaluated with the modified Lentz method.
fn erfc_continued_fraction<T: Scalar>(x: T) -> T {
    let tiny = T::min_positive_value().sqrt();
    let mut f = x;
    let mut c = f;
    let mut d = T::zero();
    for k in 1..MAX_TERMS {
        let a = T::from_count(k) * T::lit(0.5);
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        d = d.recip();
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        let delta = c * d;
        f = f * delta;
        if (delta - T::one()).abs() <= T::epsilon() {
            break;
        }
    }
    (-x * x).exp() * T::lit(0.5) * T::FRAC_2_SQRT_PI() / f
}

/// Standard normal density.
#[inline]
pub fn norm_pdf<T: Scalar>(x: T) -> T {
    T::lit(0.5) * T::FRAC_1_SQRT_2() * T::FRAC_2_SQRT_PI() * (-T::lit(0.5) * x * x).exp()
}

/// Standard normal cumulative distribution function.
#[inline]
pub fn norm_cdf<T: Scalar>(x: T) -> T {
    T::lit(0.5) * erfc(-x * T::FRAC_1_SQRT_2())
}

/// Inverse of [`norm_cdf`]: rational initial guess followed by Newton
/// polishing. Returns `-inf`/`+inf` at 0 and 1, NaN outside [0, 1].
pub fn norm_quantile<T: Scalar>(p: T) -> T {
    if p.is_nan() || p < T::zero() || p > T::one() {
        return T::nan();
    }
    if p == T::zero() {
        return T::neg_infinity();
    }
    if p == T::one() {
        return T::infinity();
    }
    let mut x = T::lit(quantile_guess(p.to_f64().unwrap_or(0.5)));
    for _ in 0..4 {
        let density = norm_pdf(x);
        if density <= T::zero() {
            break;
        }
        let step = (norm_cdf(x) - p) / density;
        x -= step;
        if step.abs() <= T::epsilon() * (T::one() + x.abs()) {
            break;
        }
    }
    x
}

fn quantile_guess(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    }
}

/// `p ln p` with the convention `0 ln 0 = 0`.
#[inline]
pub fn xlnx<T: Scalar>(p: T) -> T {
    if p <= T::zero() {
        T::zero()
    } else {
        p * p.ln()
    }
}
