//! Dense Cholesky factorization with diagonal jitter escalation.

use crate::scalar::Scalar;

/// Diagonal regularization schedule, relative to the mean of the diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterPolicy {
    pub initial: f64,
    pub growth: f64,
    pub max: f64,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self {
            initial: 1e-10,
            growth: 10.0,
            max: 1e-4,
        }
    }
}

/// The factorization hit a non-positive pivot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NotPositiveDefinite {
    pub pivot: usize,
}

/// Lower-triangular factor `L` with `A + jitter I = L Lᵀ`, stored row-major.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    n: usize,
    lower: Vec<T>,
    jitter: T,
}

impl<T: Scalar> Cholesky<T> {
    /// Factors the symmetric `n × n` row-major matrix as given.
    pub fn factor(matrix: &[T], n: usize) -> Result<Self, NotPositiveDefinite> {
        Self::factor_shifted(matrix, n, T::zero())
    }

    /// Factors `matrix + jitter I`, escalating the jitter per `policy` until
    /// the factorization succeeds. The first attempt already carries
    /// `policy.initial` jitter. On failure returns the pivot of the last
    /// attempt and the largest jitter tried.
    pub fn factor_jittered(
        matrix: &[T],
        n: usize,
        policy: JitterPolicy,
    ) -> Result<Self, (NotPositiveDefinite, T)> {
        if n == 0 {
            return Ok(Self {
                n,
                lower: Vec::new(),
                jitter: T::zero(),
            });
        }
        let mean_diag = (0..n).map(|i| matrix[i * n + i]).sum::<T>() / T::from_count(n);
        let scale = if mean_diag > T::zero() {
            mean_diag
        } else {
            T::one()
        };
        let mut rel = policy.initial;
        loop {
            let jitter = T::lit(rel) * scale;
            match Self::factor_shifted(matrix, n, jitter) {
                Ok(f) => return Ok(f),
                Err(e) if rel * policy.growth > policy.max * (1.0 + 1e-9) => return Err((e, jitter)),
                Err(_) => rel *= policy.growth,
            }
        }
    }

    /// Factors `matrix + jitter I` with a fixed absolute jitter.
    pub fn factor_shifted(matrix: &[T], n: usize, jitter: T) -> Result<Self, NotPositiveDefinite> {
        assert_eq!(matrix.len(), n * n, "matrix must be n × n");
        let mut lower = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let dot = T::dot(&lower[i * n..i * n + j], &lower[j * n..j * n + j]);
                let mut s = matrix[i * n + j] - dot;
                if i == j {
                    s += jitter;
                    // Pivots at rounding level relative to the diagonal are
                    // treated as zero.
                    let floor = T::lit(4.0) * T::epsilon() * (matrix[i * n + i] + jitter).abs();
                    if !(s > floor) || !s.is_finite() {
                        return Err(NotPositiveDefinite { pivot: i });
                    }
                    lower[i * n + i] = s.sqrt();
                } else {
                    lower[i * n + j] = s / lower[j * n + j];
                }
            }
        }
        Ok(Self { n, lower, jitter })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Absolute jitter added to the diagonal before factoring.
    pub fn jitter(&self) -> T {
        self.jitter
    }

    /// Row `i` of `L`, up to and including the diagonal.
    pub fn row(&self, i: usize) -> &[T] {
        &self.lower[i * self.n..i * self.n + i + 1]
    }

    /// Solves `L y = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [T]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.lower[i * n..i * n + i];
            let s = b[i] - T::dot(row, &b[..i]);
            b[i] = s / self.lower[i * n + i];
        }
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn solve_upper_in_place(&self, y: &mut [T]) {
        let n = self.n;
        for i in (0..n).rev() {
            let xi = y[i] / self.lower[i * n + i];
            y[i] = xi;
            let row = &self.lower[i * n..i * n + i];
            for (yk, &lik) in y[..i].iter_mut().zip(row) {
                *yk -= lik * xi;
            }
        }
    }

    /// Returns `L⁻¹ b`.
    pub fn whiten(&self, b: &[T]) -> Vec<T> {
        let mut out = b.to_vec();
        self.solve_lower_in_place(&mut out);
        out
    }

    /// Returns `(L Lᵀ)⁻¹ b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut out = b.to_vec();
        self.solve_lower_in_place(&mut out);
        self.solve_upper_in_place(&mut out);
        out
    }

    /// `ln det(L Lᵀ)`.
    pub fn log_det(&self) -> T {
        (0..self.n)
            .map(|i| self.lower[i * self.n + i].ln())
            .sum::<T>()
            * T::lit(2.0)
    }
}
