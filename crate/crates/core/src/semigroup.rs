//! System triples `(A, B, C)` in the two concrete worlds the crate supports.
//!
//! * Matrix world: `A ∈ ℂ^{n×n}`, `B ∈ ℂ^{n×m}`, `C ∈ ℂ^{m×n}`. Here
//!   `X_{-1} = X = Z`, so the triple is always compatible.
//! * Transport world: `X = L^p[0,1]` sampled on `s_k = k/N`, `A = d/ds` with
//!   `f(1) = 0` (nilpotent left shift), `U = ℂ`, `B = -A_{-1} D_0`, `C = Φ`
//!   given by a Borel measure. Sample `N` (the point `s = 1`) carries the
//!   boundary trace and has zero quadrature weight.
//!
//! The extrapolation space is never materialized: each world evaluates
//! `T_{-1}` and `A_{-1}` through closed forms.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numkit::{self, c64, CMatrix, CVector, Lu, ZERO};
use crate::transport::BorelMeasure;

/// Tolerance for deciding that a time is an integer multiple of `1/N`.
const GRID_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixTriple {
    pub a: CMatrix,
    pub b: CMatrix,
    pub c: CMatrix,
}

impl MatrixTriple {
    pub fn new(a: CMatrix, b: CMatrix, c: CMatrix) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        if a.ncols() != n || b.nrows() != n || c.nrows() != m || c.ncols() != n || n == 0 || m == 0 {
            return Err(Error::ShapeMismatch {
                op: "MatrixTriple::new",
                expected: "A n x n, B n x m, C m x n with n, m >= 1".into(),
                actual: format!(
                    "A {}x{}, B {}x{}, C {}x{}",
                    a.nrows(),
                    a.ncols(),
                    b.nrows(),
                    b.ncols(),
                    c.nrows(),
                    c.ncols()
                ),
            });
        }
        numkit::ensure_finite("A", &a)?;
        numkit::ensure_finite("B", &b)?;
        numkit::ensure_finite("C", &c)?;
        Ok(Self { a, b, c })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportTriple {
    n: usize,
    p: f64,
    measure: BorelMeasure,
    mu_shift: f64,
    phi: Vec<Complex64>,
}

impl TransportTriple {
    pub fn new(n: usize, p: f64, measure: BorelMeasure) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidArgument {
                op: "TransportTriple::new",
                reason: format!("grid size N = {n} must be at least 4"),
            });
        }
        if !(p >= 1.0 && p.is_finite()) {
            return Err(Error::InvalidArgument {
                op: "TransportTriple::new",
                reason: format!("exponent p = {p} must lie in [1, inf)"),
            });
        }
        let phi = measure.weights(n)?;
        Ok(Self {
            n,
            p,
            measure,
            mu_shift: 0.0,
            phi,
        })
    }

    pub fn grid_size(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn measure(&self) -> &BorelMeasure {
        &self.measure
    }

    pub fn mu_shift(&self) -> f64 {
        self.mu_shift
    }

    /// Discrete functional `Φf = Σ_k φ_k f_k` over the `N + 1` samples.
    pub fn phi(&self) -> &[Complex64] {
        &self.phi
    }

    /// Weight of `Φ` on the sample `s = 1`.
    pub fn phi_at_one(&self) -> Complex64 {
        self.phi[self.n]
    }

    pub fn apply_phi(&self, f: &CVector) -> Complex64 {
        self.phi.iter().zip(f.iter()).fold(ZERO, |acc, (w, v)| acc + w * v)
    }

    /// Number of `1/N` steps in `t`.
    pub fn steps_of(&self, t: f64) -> Result<usize> {
        grid_steps(t, self.n)
    }
}

/// Number of `1/N` steps in `t`, rejecting off-grid or negative times.
pub fn grid_steps(t: f64, n: usize) -> Result<usize> {
    let k = t * n as f64;
    let r = k.round();
    if t < 0.0 || !t.is_finite() || (k - r).abs() > GRID_SNAP * n as f64 {
        return Err(Error::OffGrid { t, n });
    }
    Ok(r as usize)
}

/// Sampled element of `L^p[0,1]`: `N + 1` values on `s_k = k/N`, norm
/// `(1/N Σ_{k<N} |f_k|^p)^{1/p}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    values: CVector,
    p: f64,
}

impl GridFunction {
    pub fn new(values: CVector, p: f64) -> Result<Self> {
        if values.len() < 5 {
            return Err(Error::TooFewSamples {
                op: "GridFunction::new",
                needed: 5,
                got: values.len(),
            });
        }
        if values.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite { what: "grid function" });
        }
        Ok(Self { values, p })
    }

    pub fn from_fn(n: usize, p: f64, f: impl Fn(f64) -> Complex64) -> Self {
        Self {
            values: CVector::from_fn(n + 1, |k, _| f(k as f64 / n as f64)),
            p,
        }
    }

    pub fn zeros(n: usize, p: f64) -> Self {
        Self {
            values: CVector::zeros(n + 1),
            p,
        }
    }

    /// Number of cells `N`.
    pub fn n(&self) -> usize {
        self.values.len() - 1
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn values(&self) -> &CVector {
        &self.values
    }

    pub fn into_values(self) -> CVector {
        self.values
    }

    pub fn at(&self, k: usize) -> Complex64 {
        self.values[k]
    }

    pub fn norm(&self) -> f64 {
        l_p_norm(&self.values, self.p)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// `L^p[0,1]` norm of a sampled function (left-endpoint cells, sample `N` excluded).
pub fn l_p_norm(values: &CVector, p: f64) -> f64 {
    let n = values.len() - 1;
    numkit::weighted_norm(&values.as_slice()[..n], p, 1.0 / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SystemTriple {
    Matrix(MatrixTriple),
    Transport(TransportTriple),
}

/// Spectral abscissa with an explicit flag for nilpotent semigroups, whose
/// spectrum is empty and abscissa is `-∞`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpectralAbscissa {
    pub value: f64,
    pub nilpotent: bool,
}

/// Stand-in for `-∞` in serialized reports.
pub const NILPOTENT_SENTINEL: f64 = -1.0e300;

impl SystemTriple {
    pub fn world(&self) -> &'static str {
        match self {
            SystemTriple::Matrix(_) => "matrix",
            SystemTriple::Transport(_) => "transport",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            SystemTriple::Matrix(m) => m.state_dim(),
            SystemTriple::Transport(t) => t.n + 1,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            SystemTriple::Matrix(m) => m.input_dim(),
            SystemTriple::Transport(_) => 1,
        }
    }

    /// Norm on `X`: Euclidean in the matrix world, `L^p` in the transport world.
    pub fn state_norm(&self, x: &CVector, p: f64) -> f64 {
        match self {
            SystemTriple::Matrix(_) => x.norm(),
            SystemTriple::Transport(_) => l_p_norm(x, p),
        }
    }

    /// Quadrature weight of one state entry (uniform in both worlds).
    pub fn state_weight(&self) -> f64 {
        match self {
            SystemTriple::Matrix(_) => 1.0,
            SystemTriple::Transport(t) => 1.0 / t.n as f64,
        }
    }

    /// Indices of state entries that carry norm (drops the transport trace sample).
    pub fn norm_dim(&self) -> usize {
        match self {
            SystemTriple::Matrix(m) => m.state_dim(),
            SystemTriple::Transport(t) => t.n,
        }
    }

    fn check_state(&self, x: &CVector, op: &'static str) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::ShapeMismatch {
                op,
                expected: format!("state of length {}", self.state_dim()),
                actual: format!("length {}", x.len()),
            });
        }
        Ok(())
    }

    /// `T(t)x`. Transport times must be multiples of `1/N`.
    pub fn apply_semigroup(&self, t: f64, x: &CVector) -> Result<CVector> {
        self.check_state(x, "apply_semigroup")?;
        if t < 0.0 {
            return Err(Error::InvalidArgument {
                op: "apply_semigroup",
                reason: format!("negative time {t}"),
            });
        }
        match self {
            SystemTriple::Matrix(m) => numkit::matvec(&numkit::expm(&m.a, t)?, x),
            SystemTriple::Transport(tr) => {
                let j = tr.steps_of(t)?;
                let n = tr.n;
                let damp = c64((-tr.mu_shift * t).exp(), 0.0);
                if j == 0 {
                    return Ok(x * damp);
                }
                Ok(CVector::from_fn(n + 1, |k, _| {
                    if k + j < n {
                        x[k + j] * damp
                    } else {
                        ZERO
                    }
                }))
            }
        }
    }

    /// `T(t)` as a dense matrix.
    pub fn semigroup_matrix(&self, t: f64) -> Result<CMatrix> {
        match self {
            SystemTriple::Matrix(m) => numkit::expm(&m.a, t),
            SystemTriple::Transport(tr) => {
                let j = tr.steps_of(t)?;
                Ok(shift_matrix(tr.n, j, (-tr.mu_shift * t).exp()))
            }
        }
    }

    pub fn resolvent(&self, lambda: Complex64) -> Result<Resolvent> {
        match self {
            SystemTriple::Matrix(m) => {
                let n = m.state_dim();
                let dist = numkit::eigenvalues(&m.a)?
                    .iter()
                    .map(|z| (lambda - z).norm())
                    .fold(f64::INFINITY, f64::min);
                if dist < 1e-8 {
                    return Err(Error::NearSpectrum {
                        lambda: format!("{lambda}"),
                        distance: dist,
                    });
                }
                let shifted = CMatrix::identity(n, n) * lambda - &m.a;
                let inv = Lu::new(&shifted)?.inverse()?;
                Ok(Resolvent::Matrix { lambda, inverse: inv })
            }
            SystemTriple::Transport(tr) => Ok(Resolvent::Transport {
                lambda,
                effective: lambda + tr.mu_shift,
                n: tr.n,
            }),
        }
    }

    /// The triple `(A - μ, B, C)`.
    pub fn rescale(&self, mu_shift: f64) -> SystemTriple {
        match self {
            SystemTriple::Matrix(m) => {
                let n = m.state_dim();
                SystemTriple::Matrix(MatrixTriple {
                    a: &m.a - CMatrix::identity(n, n) * c64(mu_shift, 0.0),
                    b: m.b.clone(),
                    c: m.c.clone(),
                })
            }
            SystemTriple::Transport(tr) => {
                let mut out = tr.clone();
                out.mu_shift += mu_shift;
                SystemTriple::Transport(out)
            }
        }
    }

    pub fn spectral_abscissa(&self) -> Result<SpectralAbscissa> {
        match self {
            SystemTriple::Matrix(m) => Ok(SpectralAbscissa {
                value: numkit::spectral_abscissa_of(&m.a)?,
                nilpotent: false,
            }),
            SystemTriple::Transport(_) => Ok(SpectralAbscissa {
                value: NILPOTENT_SENTINEL,
                nilpotent: true,
            }),
        }
    }

    /// Compatibility `rg(R(λ, A_{-1})B) ⊂ Z`: automatic for matrices; for
    /// transport it follows from the Dirichlet-operator range and is checked
    /// numerically elsewhere.
    pub fn trivially_compatible(&self) -> bool {
        matches!(self, SystemTriple::Matrix(_))
    }
}

/// `(N+1)²` left shift by `j` cells with zero fill, scaled by `damp`. The
/// trace sample `N` owns no cell, so for `j ≥ 1` it neither moves nor survives.
pub(crate) fn shift_matrix(n: usize, j: usize, damp: f64) -> CMatrix {
    if j == 0 {
        return CMatrix::identity(n + 1, n + 1) * c64(damp, 0.0);
    }
    let mut m = CMatrix::zeros(n + 1, n + 1);
    for k in 0..n {
        if k + j < n {
            m[(k, k + j)] = c64(damp, 0.0);
        }
    }
    m
}

/// `R(λ, A)` in either world.
#[derive(Debug, Clone)]
pub enum Resolvent {
    Matrix {
        lambda: Complex64,
        inverse: CMatrix,
    },
    /// `(R(λ,A)f)(s) = ∫_s^1 e^{λ(s-r)} f(r) dr`, evaluated at `λ + μ_shift`.
    Transport {
        lambda: Complex64,
        effective: Complex64,
        n: usize,
    },
}

impl Resolvent {
    pub fn lambda(&self) -> Complex64 {
        match self {
            Resolvent::Matrix { lambda, .. } | Resolvent::Transport { lambda, .. } => *lambda,
        }
    }

    pub fn apply(&self, x: &CVector) -> Result<CVector> {
        match self {
            Resolvent::Matrix { inverse, .. } => numkit::matvec(inverse, x),
            Resolvent::Transport { effective, n, .. } => {
                if x.len() != n + 1 {
                    return Err(Error::ShapeMismatch {
                        op: "Resolvent::apply",
                        expected: format!("length {}", n + 1),
                        actual: format!("length {}", x.len()),
                    });
                }
                Ok(transport_resolvent(*effective, x))
            }
        }
    }

    pub fn to_matrix(&self) -> Result<CMatrix> {
        match self {
            Resolvent::Matrix { inverse, .. } => Ok(inverse.clone()),
            Resolvent::Transport { n, .. } => {
                let dim = n + 1;
                let mut m = CMatrix::zeros(dim, dim);
                for j in 0..dim {
                    let mut e = CVector::zeros(dim);
                    e[j] = numkit::ONE;
                    m.set_column(j, &self.apply(&e)?);
                }
                Ok(m)
            }
        }
    }
}

/// Backward recursion `g_k = e^{-λh} g_{k+1} + h/2 (f_k + e^{-λh} f_{k+1})`,
/// `g_N = 0`: the trapezoidal rule on each cell of the Volterra integral.
pub(crate) fn transport_resolvent(lambda: Complex64, f: &CVector) -> CVector {
    let n = f.len() - 1;
    let h = 1.0 / n as f64;
    let decay = (-lambda * h).exp();
    let half = c64(0.5 * h, 0.0);
    let mut g = CVector::zeros(n + 1);
    for k in (0..n).rev() {
        g[k] = decay * g[k + 1] + half * (f[k] + decay * f[k + 1]);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{Rng, ONE};

    fn scalar_triple(a: f64, b: f64, c: f64) -> SystemTriple {
        let s = |v: f64| CMatrix::from_element(1, 1, c64(v, 0.0));
        SystemTriple::Matrix(MatrixTriple::new(s(a), s(b), s(c)).unwrap())
    }

    fn transport(n: usize) -> SystemTriple {
        SystemTriple::Transport(TransportTriple::new(n, 2.0, BorelMeasure::zero()).unwrap())
    }

    fn random_matrix_triple(seed: u64, n: usize, m: usize) -> SystemTriple {
        let mut rng = Rng::new(seed);
        SystemTriple::Matrix(MatrixTriple::new(rng.matrix(n, n), rng.matrix(n, m), rng.matrix(m, n)).unwrap())
    }

    #[test]
    fn shape_validation() {
        let r = MatrixTriple::new(CMatrix::zeros(2, 2), CMatrix::zeros(3, 1), CMatrix::zeros(1, 2));
        assert!(matches!(r, Err(Error::ShapeMismatch { .. })));
        assert!(TransportTriple::new(3, 2.0, BorelMeasure::zero()).is_err());
        assert!(TransportTriple::new(8, 0.5, BorelMeasure::zero()).is_err());
    }

    #[test]
    fn semigroup_at_zero_is_identity() {
        let x = Rng::new(1).vector(3);
        let t = random_matrix_triple(2, 3, 1);
        assert!((t.apply_semigroup(0.0, &x).unwrap() - &x).norm() < 1e-15);
        let tr = transport(4);
        let f = Rng::new(3).vector(5);
        assert_eq!(tr.apply_semigroup(0.0, &f).unwrap(), f);
    }

    #[test]
    fn transport_shift_is_nilpotent() {
        let tr = transport(4);
        let f = Rng::new(3).vector(5);
        assert_eq!(tr.apply_semigroup(1.0, &f).unwrap(), CVector::zeros(5));
        let half = tr.apply_semigroup(0.5, &f).unwrap();
        assert_eq!(half[0], f[2]);
        assert_eq!(half[1], f[3]);
        assert_eq!(half[2], ZERO);
        assert_eq!(half[4], ZERO);
    }

    #[test]
    fn transport_rejects_off_grid_time() {
        let tr = transport(4);
        assert!(matches!(
            tr.apply_semigroup(0.3, &CVector::zeros(5)),
            Err(Error::OffGrid { .. })
        ));
    }

    #[test]
    fn scalar_semigroup() {
        let t = scalar_triple(-1.0, 1.0, 1.0);
        let y = t.apply_semigroup(2.0, &CVector::from_element(1, ONE)).unwrap();
        assert!((y[0] - c64((-2.0f64).exp(), 0.0)).norm() < 1e-15);
    }

    #[test]
    fn semigroup_law_both_worlds() {
        let t = random_matrix_triple(4, 4, 2);
        let x = Rng::new(5).vector(4);
        let lhs = t.apply_semigroup(0.2, &t.apply_semigroup(0.5, &x).unwrap()).unwrap();
        let rhs = t.apply_semigroup(0.7, &x).unwrap();
        assert!((lhs - &rhs).norm() <= 1e-9 * rhs.norm());

        let tr = SystemTriple::Transport(TransportTriple::new(16, 2.0, BorelMeasure::zero()).unwrap());
        let f = Rng::new(6).vector(17);
        let lhs = tr.apply_semigroup(0.25, &tr.apply_semigroup(0.5, &f).unwrap()).unwrap();
        assert_eq!(lhs, tr.apply_semigroup(0.75, &f).unwrap());
    }

    #[test]
    fn transport_shift_is_contractive() {
        let tr = transport(32);
        let mut rng = Rng::new(7);
        for p in [1.0, 1.5, 2.0, 3.0] {
            let f = rng.vector(33);
            for j in 0..=32 {
                let t = j as f64 / 32.0;
                let g = tr.apply_semigroup(t, &f).unwrap();
                assert!(l_p_norm(&g, p) <= l_p_norm(&f, p));
            }
        }
    }

    #[test]
    fn scalar_resolvent() {
        let t = scalar_triple(-1.0, 1.0, 1.0);
        let r = t.resolvent(ZERO).unwrap();
        let y = r.apply(&CVector::from_element(1, c64(3.0, 0.0))).unwrap();
        assert!((y[0] - c64(3.0, 0.0)).norm() < 1e-15);
        assert_eq!(r.apply(&CVector::zeros(1)).unwrap(), CVector::zeros(1));
    }

    #[test]
    fn resolvent_rejects_spectrum() {
        let t = scalar_triple(-1.0, 1.0, 1.0);
        assert!(matches!(
            t.resolvent(c64(-1.0, 0.0)),
            Err(Error::NearSpectrum { .. })
        ));
    }

    #[test]
    fn resolvent_equation_matrix() {
        let t = random_matrix_triple(8, 5, 2);
        let (l, v) = (c64(3.0, 1.0), c64(2.5, -2.0));
        let rl = t.resolvent(l).unwrap().to_matrix().unwrap();
        let rv = t.resolvent(v).unwrap().to_matrix().unwrap();
        let lhs = &rl - &rv;
        let rhs = &rl * &rv * (v - l);
        assert!((lhs - rhs).norm() < 1e-8);
    }

    #[test]
    fn transport_resolvent_closed_form() {
        let n = 256;
        let tr = transport(n);
        let lam = ONE;
        let g = tr.resolvent(lam).unwrap().apply(&CVector::from_element(n + 1, ONE)).unwrap();
        for k in 0..=n {
            let s = k as f64 / n as f64;
            let exact = (1.0 - (s - 1.0f64).exp()) / 1.0;
            assert!((g[k].re - exact).abs() < 1e-3 && g[k].im.abs() < 1e-12);
        }
    }

    #[test]
    fn transport_resolvent_inverts_discrete_derivative() {
        for n in [64usize, 128, 256] {
            let tr = transport(n);
            let lam = c64(0.5, 2.0);
            let f = GridFunction::from_fn(n, 2.0, |s| c64((3.0 * s).sin(), s * s)).into_values();
            let g = tr.resolvent(lam).unwrap().apply(&f).unwrap();
            assert_eq!(g[n], ZERO);
            let h = 1.0 / n as f64;
            let worst = (0..n)
                .map(|k| (lam * g[k] - (g[k + 1] - g[k]) / h - f[k]).norm())
                .fold(0.0, f64::max);
            assert!(worst < 10.0 * h, "N={n}: {worst}");
        }
    }

    #[test]
    fn rescale_shifts_spectrum_and_damps_shift() {
        let t = scalar_triple(-1.0, 1.0, 1.0);
        assert_eq!(t.rescale(0.0), t);
        let d = SystemTriple::Matrix(
            MatrixTriple::new(
                CMatrix::from_diagonal(&CVector::from_vec(vec![c64(-1.0, 0.0), c64(-3.0, 0.0)])),
                CMatrix::zeros(2, 1),
                CMatrix::zeros(1, 2),
            )
            .unwrap(),
        );
        assert!((d.spectral_abscissa().unwrap().value + 1.0).abs() < 1e-12);
        assert!((d.rescale(2.0).spectral_abscissa().unwrap().value + 3.0).abs() < 1e-12);

        let tr = transport(16);
        let f = Rng::new(9).vector(17);
        let shifted = tr.rescale(1.0);
        for j in 0..=16 {
            let t = j as f64 / 16.0;
            let a = tr.apply_semigroup(t, &f).unwrap() * c64((-t).exp(), 0.0);
            let b = shifted.apply_semigroup(t, &f).unwrap();
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn abscissa_cases() {
        let tr = transport(8);
        let ab = tr.spectral_abscissa().unwrap();
        assert!(ab.nilpotent);
        assert_eq!(ab.value, NILPOTENT_SENTINEL);
        let t = random_matrix_triple(10, 4, 1);
        let SystemTriple::Matrix(m) = &t else { unreachable!() };
        let ev = numkit::eigenvalues(&m.a).unwrap();
        let max_re = ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(t.spectral_abscissa().unwrap().value, max_re);
    }
}
