//! Dense complex linear algebra, norms and the seeded random source.
//!
//! Everything here works on `nalgebra` dynamic matrices of `Complex64`.
//! Factorizations (LU, SVD, Schur) and the Padé matrix exponential come
//! from `nalgebra`; this module adds shape and range checking, weighted
//! norms and deterministic matrix-vector products on top.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Shorthand for a complex scalar.
#[inline]
pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

fn ensure_square(op: &'static str, a: &CMatrix) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(Error::NotSquare {
            op,
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(a.nrows())
}

pub fn ensure_finite(what: &'static str, a: &CMatrix) -> Result<()> {
    if a.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what })
    }
}

/// `e^{tA}` by scaling and squaring with a degree-13 Padé approximant.
pub fn expm(a: &CMatrix, t: f64) -> Result<CMatrix> {
    let n = ensure_square("expm", a)?;
    ensure_finite("expm input", a)?;
    if n == 0 {
        return Ok(CMatrix::zeros(0, 0));
    }
    if t == 0.0 {
        return Ok(CMatrix::identity(n, n));
    }
    let scaled = a * c64(t, 0.0);
    if scaled.iter().all(|z| *z == ZERO) {
        return Ok(CMatrix::identity(n, n));
    }
    let e = scaled.exp();
    ensure_finite("expm result", &e).map_err(|_| Error::Range { op: "expm" })?;
    Ok(e)
}

/// LU factorization with partial pivoting, checked for numerical singularity.
pub struct Lu {
    lu: nalgebra::linalg::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    n: usize,
}

impl Lu {
    pub fn new(a: &CMatrix) -> Result<Self> {
        let n = ensure_square("solve", a)?;
        ensure_finite("solve matrix", a)?;
        let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let lu = a.clone().lu();
        let u = lu.u();
        let tiny = (n.max(1) as f64) * f64::EPSILON * scale;
        for i in 0..n {
            let m = u[(i, i)].norm();
            if m <= tiny || m == 0.0 {
                return Err(Error::Singular {
                    pivot: i,
                    magnitude: m,
                });
            }
        }
        Ok(Self { lu, n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &CMatrix) -> Result<CMatrix> {
        if b.nrows() != self.n {
            return Err(Error::ShapeMismatch {
                op: "solve",
                expected: format!("{} rows", self.n),
                actual: format!("{} rows", b.nrows()),
            });
        }
        self.lu
            .solve(b)
            .ok_or(Error::Singular { pivot: 0, magnitude: 0.0 })
    }

    pub fn solve_vec(&self, b: &CVector) -> Result<CVector> {
        if b.len() != self.n {
            return Err(Error::ShapeMismatch {
                op: "solve",
                expected: format!("length {}", self.n),
                actual: format!("length {}", b.len()),
            });
        }
        self.lu
            .solve(b)
            .ok_or(Error::Singular { pivot: 0, magnitude: 0.0 })
    }

    pub fn inverse(&self) -> Result<CMatrix> {
        self.solve(&CMatrix::identity(self.n, self.n))
    }
}

/// Solve `A X = B` for a matrix right-hand side.
pub fn solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    Lu::new(a)?.solve(b)
}

pub fn solve_vec(a: &CMatrix, b: &CVector) -> Result<CVector> {
    Lu::new(a)?.solve_vec(b)
}

pub fn inverse(a: &CMatrix) -> Result<CMatrix> {
    Lu::new(a)?.inverse()
}

/// Matrix-vector product summing each row in increasing column order.
///
/// Structured operators that skip zero blocks but keep the same order
/// reproduce this product bit for bit.
pub fn matvec(a: &CMatrix, x: &CVector) -> Result<CVector> {
    if a.ncols() != x.len() {
        return Err(Error::ShapeMismatch {
            op: "matvec",
            expected: format!("length {}", a.ncols()),
            actual: format!("length {}", x.len()),
        });
    }
    let mut y = CVector::zeros(a.nrows());
    for i in 0..a.nrows() {
        let mut acc = ZERO;
        for j in 0..a.ncols() {
            acc += a[(i, j)] * x[j];
        }
        y[i] = acc;
    }
    Ok(y)
}

/// Quadrature-weighted discrete `p`-norm `(Σ w_k |x_k|^p)^{1/p}`.
///
/// `p = f64::INFINITY` gives the max norm and ignores the weights.
pub fn weighted_norm(x: &[Complex64], p: f64, weight: f64) -> f64 {
    if p.is_infinite() {
        return x.iter().map(|z| z.norm()).fold(0.0, f64::max);
    }
    if p == 2.0 {
        return (weight * x.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt();
    }
    if p == 1.0 {
        return weight * x.iter().map(|z| z.norm()).sum::<f64>();
    }
    (weight * x.iter().map(|z| z.norm().powf(p)).sum::<f64>()).powf(1.0 / p)
}

pub fn one_norm(a: &CMatrix) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn inf_norm(a: &CMatrix) -> f64 {
    (0..a.nrows())
        .map(|i| a.row(i).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn two_norm(a: &CMatrix) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Exact induced norm for `p ∈ {1, 2, ∞}`.
pub fn induced_norm(a: &CMatrix, p: f64) -> Result<f64> {
    ensure_finite("induced_norm", a)?;
    if p == 1.0 {
        Ok(one_norm(a))
    } else if p == 2.0 {
        Ok(two_norm(a))
    } else if p.is_infinite() && p > 0.0 {
        Ok(inf_norm(a))
    } else {
        Err(Error::UnsupportedExponent { p })
    }
}

/// `D_out^{1/p} A D_in^{-1/p}`: turns quadrature-weighted norms into plain ones.
fn weight_similarity(a: &CMatrix, p: f64, w_in: f64, w_out: f64) -> CMatrix {
    if p.is_infinite() {
        return a.clone();
    }
    let s = (w_out / w_in).powf(1.0 / p);
    a * c64(s, 0.0)
}

/// Induced norm between `ℓ^p` spaces carrying uniform quadrature weights.
pub fn induced_norm_weighted(a: &CMatrix, p: f64, w_in: f64, w_out: f64) -> Result<f64> {
    induced_norm(&weight_similarity(a, p, w_in, w_out), p)
}

/// Certified bracket of an induced `p`-norm for arbitrary `p ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormBracket {
    pub lower: f64,
    pub upper: f64,
}

/// Lower bound from ≥ 200 random probes, upper bound from Riesz–Thorin
/// interpolation between the exact 1- and ∞-norms.
pub fn norm_bounds(a: &CMatrix, p: f64, w_in: f64, w_out: f64, rng: &mut Rng) -> Result<NormBracket> {
    if !(p >= 1.0) {
        return Err(Error::UnsupportedExponent { p });
    }
    let m = weight_similarity(a, p, w_in, w_out);
    ensure_finite("norm_bounds", &m)?;
    if p == 1.0 || p == 2.0 || p.is_infinite() {
        let v = induced_norm(&m, p)?;
        return Ok(NormBracket { lower: v, upper: v });
    }
    let upper = one_norm(&m).powf(1.0 / p) * inf_norm(&m).powf(1.0 - 1.0 / p);
    let mut lower: f64 = 0.0;
    for _ in 0..256 {
        let x = rng.vector(m.ncols());
        let nx = weighted_norm(x.as_slice(), p, 1.0);
        if nx == 0.0 {
            continue;
        }
        let y = matvec(&m, &x)?;
        lower = lower.max(weighted_norm(y.as_slice(), p, 1.0) / nx);
    }
    // unit vectors attain the 1-norm direction and often dominate random probes
    for j in 0..m.ncols() {
        let col: Vec<Complex64> = m.column(j).iter().cloned().collect();
        lower = lower.max(weighted_norm(&col, p, 1.0));
    }
    Ok(NormBracket {
        lower,
        upper: upper.max(lower),
    })
}

/// All eigenvalues via the complex Schur form.
pub fn eigenvalues(a: &CMatrix) -> Result<Vec<Complex64>> {
    let n = ensure_square("eigenvalues", a)?;
    ensure_finite("eigenvalues input", a)?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let max_iter = 200 * n.max(10);
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, max_iter)
        .ok_or(Error::NoConvergence {
            iterations: max_iter,
        })?;
    let (_, t) = schur.unpack();
    Ok((0..n).map(|i| t[(i, i)]).collect())
}

pub fn spectral_abscissa_of(a: &CMatrix) -> Result<f64> {
    Ok(eigenvalues(a)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Reproducible random source (ChaCha8). Complex entries have real and
/// imaginary parts uniform on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream `stream` of the same seed; used for per-trial
    /// generators so parallel loops stay deterministic.
    pub fn fork(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Self {
            seed: self.seed,
            inner,
        }
    }

    /// Uniform on `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on `[-1, 1]`.
    pub fn symmetric(&mut self) -> f64 {
        2.0 * self.unit() - 1.0
    }

    pub fn index(&mut self, upper: usize) -> usize {
        self.inner.random_range(0..upper)
    }

    pub fn complex(&mut self) -> Complex64 {
        let re = self.symmetric();
        let im = self.symmetric();
        c64(re, im)
    }

    pub fn matrix(&mut self, rows: usize, cols: usize) -> CMatrix {
        // row-major fill so the stream order matches the documented layout
        let mut m = CMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = self.complex();
            }
        }
        m
    }

    pub fn vector(&mut self, n: usize) -> CVector {
        CVector::from_fn(n, |_, _| self.complex())
    }
}
