//! Dense double-precision kernels shared by every other module: norms,
//! spectral radius estimation, ridge least squares, order statistics and
//! correlation. Everything is deterministic; routines that need randomness
//! take or derive an explicit seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seed for reproducible random streams. Derived seeds and numbered streams
/// give statistically independent generators without shared state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngSeed {
    /// Deterministically derives an independent seed for a sub-purpose.
    pub fn derive(self, tag: u64) -> RngSeed {
        RngSeed(splitmix64(self.0 ^ splitmix64(tag)))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Generator on an independent stream; same seed with different stream
    /// numbers yields unrelated sequences.
    pub fn stream_rng(self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(stream);
        rng
    }
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::Dimension("rows have differing lengths".into()));
        }
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: n_rows,
            cols: n_cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Rebuilds a matrix from its row-major backing store.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "buffer of length {} cannot back a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a_ik) in a_row.iter().enumerate() {
                if a_ik == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a_ik * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.cols != v.len() {
            return Err(Error::Dimension(format!(
                "cannot apply {}x{} to vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, c: f64) -> Matrix {
        let data = self.data.iter().map(|&a| a * c).collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let data = self.data.iter().map(|&a| f(a)).collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &a| m.max(a.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }

    /// Squared Frobenius norm; unchecked fast path for internal use.
    pub fn frob_sq(&self) -> f64 {
        self.data.iter().map(|&a| a * a).sum()
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Frobenius norm of a nonempty matrix.
pub fn frobenius_norm(m: &Matrix) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::Dimension("frobenius norm of an empty matrix".into()));
    }
    Ok(m.frob_sq().sqrt())
}

/// Largest absolute eigenvalue of a square matrix. Symmetric inputs use a
/// Gershgorin-shifted power iteration on both spectrum ends, which stays
/// correct when the largest and smallest eigenvalues tie in magnitude (as
/// for bipartite adjacency structures); other inputs fall back to plain
/// power iteration, which assumes a unique dominant magnitude. Convergence
/// is declared when successive Rayleigh estimates agree to `tol` in relative
/// terms; running out of iterations reports the last estimate.
pub fn spectral_radius(m: &Matrix, tol: f64, max_iter: usize) -> Result<f64> {
    if !m.is_square() || m.is_empty() {
        return Err(Error::Dimension(format!(
            "spectral radius needs a nonempty square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let n = m.rows();
    let symmetric = (0..n).all(|i| (0..i).all(|j| m[(i, j)] == m[(j, i)]));
    if !symmetric {
        return power_rayleigh(m, tol, max_iter);
    }
    // All eigenvalues lie within the largest absolute row sum s, so A + sI
    // and -(A - sI) are both nonnegative definite with their dominant
    // eigenvalues at the two spectrum ends.
    let shift = (0..n)
        .map(|i| m.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    if shift == 0.0 {
        return Ok(0.0);
    }
    let shifted = |sign: f64| {
        let mut s = m.scale(sign);
        for i in 0..n {
            s[(i, i)] += shift;
        }
        s
    };
    let high = power_rayleigh(&shifted(1.0), tol, max_iter)? - shift;
    let low = shift - power_rayleigh(&shifted(-1.0), tol, max_iter)?;
    Ok(high.abs().max(low.abs()))
}

fn power_rayleigh(m: &Matrix, tol: f64, max_iter: usize) -> Result<f64> {
    let n = m.rows();
    let mut rng = RngSeed(0x5eed_f00d).rng();
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm0 = dot(&v, &v).sqrt();
    for x in v.iter_mut() {
        *x /= norm0;
    }
    let mut estimate = f64::NAN;
    for iter in 0..max_iter {
        let w = m.matvec(&v)?;
        let w_norm = dot(&w, &w).sqrt();
        if w_norm < f64::MIN_POSITIVE {
            // The iterate was annihilated; for the matrices this library
            // builds (nonnegative, generic) that only happens for zero maps.
            return Ok(0.0);
        }
        // Rayleigh magnitude with the previous (unit) iterate.
        let next = dot(&v, &w).abs();
        v = w.into_iter().map(|x| x / w_norm).collect();
        if iter >= 2 && (next - estimate).abs() <= tol * next.max(f64::MIN_POSITIVE) {
            return Ok(next);
        }
        estimate = next;
    }
    Err(Error::Convergence {
        last_estimate: estimate,
        iterations: max_iter,
    })
}

/// Solves the ridge least-squares problem
/// `argmin_W ||X W - Y||_F^2 + lambda ||W||_F^2`
/// through the normal equations with a Cholesky factorization.
/// `design` is n_samples x n_features, `targets` n_samples x n_out; the
/// result is n_features x n_out.
pub fn ridge_solve(design: &Matrix, targets: &Matrix, lambda: f64) -> Result<Matrix> {
    if design.rows() != targets.rows() {
        return Err(Error::Dimension(format!(
            "design has {} samples but targets have {}",
            design.rows(),
            targets.rows()
        )));
    }
    if design.rows() == 0 || design.cols() == 0 {
        return Err(Error::Dimension("ridge solve on an empty design".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!(
            "ridge lambda must be nonnegative, got {lambda}"
        )));
    }
    let xt = design.transpose();
    let mut gram = xt.matmul(design)?;
    for i in 0..gram.rows() {
        gram[(i, i)] += lambda;
    }
    let rhs = xt.matmul(targets)?;
    cholesky_solve(&gram, &rhs)
}

/// Solves `A X = B` for symmetric positive-definite `A`.
pub fn cholesky_solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if !a.is_square() || a.rows() != b.rows() {
        return Err(Error::Dimension("cholesky solve shape mismatch".into()));
    }
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    let scale = (0..n).fold(0.0f64, |m, i| m.max(a[(i, i)].abs()));
    let floor = scale * n as f64 * f64::EPSILON;
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if s <= floor {
                    return Err(Error::Rank(format!(
                        "matrix is not positive definite at pivot {i}; \
                         the system is singular (a larger ridge term fixes this)"
                    )));
                }
                l[(i, j)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    // Forward then backward substitution, one right-hand-side column at a time.
    let mut x = Matrix::zeros(n, b.cols());
    for c in 0..b.cols() {
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(x)
}

/// Inverts a square matrix by Gauss-Jordan elimination with partial pivoting.
pub fn invert(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() || a.is_empty() {
        return Err(Error::Dimension(
            "inverse needs a nonempty square matrix".into(),
        ));
    }
    let n = a.rows();
    let mut work = a.clone();
    let mut inv = Matrix::identity(n);
    let floor = work.max_abs() * n as f64 * f64::EPSILON;
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| work[(i, col)].abs().total_cmp(&work[(j, col)].abs()))
            .unwrap();
        if work[(pivot_row, col)].abs() <= floor {
            return Err(Error::Rank(format!("matrix is singular at column {col}")));
        }
        if pivot_row != col {
            for j in 0..n {
                let tmp = work[(col, j)];
                work[(col, j)] = work[(pivot_row, j)];
                work[(pivot_row, j)] = tmp;
                let tmp = inv[(col, j)];
                inv[(col, j)] = inv[(pivot_row, j)];
                inv[(pivot_row, j)] = tmp;
            }
        }
        let p = work[(col, col)];
        for j in 0..n {
            work[(col, j)] /= p;
            inv[(col, j)] /= p;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = work[(i, col)];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                work[(i, j)] -= f * work[(col, j)];
                inv[(i, j)] -= f * inv[(col, j)];
            }
        }
    }
    Ok(inv)
}

/// Entry-wise median across a stack of equally shaped matrices. An even
/// stack takes the midpoint of the two central order statistics.
pub fn elementwise_median(stack: &[Matrix]) -> Result<Matrix> {
    let first = stack
        .first()
        .ok_or_else(|| Error::Dimension("median of an empty stack".into()))?;
    if stack
        .iter()
        .any(|m| m.rows() != first.rows() || m.cols() != first.cols())
    {
        return Err(Error::Dimension("median stack has mixed shapes".into()));
    }
    let n = stack.len();
    let mut out = Matrix::zeros(first.rows(), first.cols());
    let mut scratch = vec![0.0f64; n];
    for idx in 0..first.rows() * first.cols() {
        for (s, m) in scratch.iter_mut().zip(stack) {
            *s = m.as_slice()[idx];
        }
        scratch.sort_unstable_by(f64::total_cmp);
        out.as_mut_slice()[idx] = if n % 2 == 1 {
            scratch[n / 2]
        } else {
            (scratch[n / 2 - 1] + scratch[n / 2]) / 2.0
        };
    }
    Ok(out)
}

/// Pearson correlation of two equally long slices. Inputs whose variance
/// sits at or below the floating-point cancellation floor count as constant
/// and return 0 by convention.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "correlation of slices with lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::Dimension("correlation of empty slices".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let raw_x: f64 = x.iter().map(|&a| a * a).sum();
    let raw_y: f64 = y.iter().map(|&a| a * a).sum();
    // Variance indistinguishable from rounding noise of the mean subtraction.
    let noise_floor = 1e-24;
    if sxx <= noise_floor * raw_x.max(f64::MIN_POSITIVE)
        || syy <= noise_floor * raw_y.max(f64::MIN_POSITIVE)
    {
        return Ok(0.0);
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}
