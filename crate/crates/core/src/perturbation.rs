//! The perturbed generator `A_BC = (A_{-1} + BC)|_X`, its resolvent
//! `Q(λ) = R(λ,A) + R(λ,A_{-1})B (Id - C R(λ,A_{-1})B)^{-1} C R(λ,A)`, the
//! semigroup `S(t) = T(t) + B_t (Id - F_t)^{-1} C_t` on a finite horizon and
//! the generation certificate.
//!
//! Only finite horizons enter: `S(t)` on `[0, t]` needs `F` on `[0, t]` by causality.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::admissibility::{
    self, estimate_constants_with, feedback_verdict, loglog_slope, random_state, DiscreteMaps, TimeGrid,
};
use crate::error::{Error, Result};
use crate::numkit::{self, c64, CMatrix, CVector, Rng, ONE, ZERO};
use crate::semigroup::{transport_resolvent, SystemTriple, TransportTriple};
use crate::toeplitz;
use crate::transport::{self, BorelMeasure};

/// Offset of the sampled `λ` line beyond `1 + max(abscissa, certified shift)`.
pub const LAMBDA_MARGIN: f64 = 0.5;
/// Halvings of the horizon before a search gives up.
pub const MAX_HALVINGS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub enum PerturbedGenerator {
    Matrix(CMatrix),
    /// `generator` is `None` when the atom at 1 has weight 1 (`A^Φ = A_m`).
    Transport {
        generator: Option<CMatrix>,
        degenerate: bool,
        n: usize,
        measure: BorelMeasure,
    },
}

impl PerturbedGenerator {
    pub fn matrix(&self) -> Option<&CMatrix> {
        match self {
            PerturbedGenerator::Matrix(m) => Some(m),
            PerturbedGenerator::Transport { generator, .. } => generator.as_ref(),
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self, PerturbedGenerator::Transport { degenerate: true, .. })
    }
}

pub fn perturbed_generator(triple: &SystemTriple) -> Result<PerturbedGenerator> {
    match triple {
        SystemTriple::Matrix(m) => Ok(PerturbedGenerator::Matrix(&m.a + &m.b * &m.c)),
        SystemTriple::Transport(tr) => {
            let n = tr.grid_size();
            let generator = match transport::upwind_generator(tr.measure(), n) {
                Ok(a) => Some(a - CMatrix::identity(n, n) * c64(tr.mu_shift(), 0.0)),
                Err(Error::DegenerateBoundary { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(PerturbedGenerator::Transport {
                degenerate: generator.is_none(),
                generator,
                n,
                measure: tr.measure().clone(),
            })
        }
    }
}

/// `C R(λ, A_{-1}) B`: `m × m` in the matrix world, the closed form
/// `H(λ + μ_shift) = ∫ e^{(λ+μ)(r-1)} dμ(r)` in the transport world.
pub fn transfer_function(triple: &SystemTriple, lambda: Complex64) -> Result<CMatrix> {
    match triple {
        SystemTriple::Matrix(m) => {
            let r = triple.resolvent(lambda)?.to_matrix()?;
            Ok(&m.c * r * &m.b)
        }
        SystemTriple::Transport(tr) => Ok(CMatrix::from_element(
            1,
            1,
            tr.measure().transfer(lambda + tr.mu_shift()),
        )),
    }
}

/// Transport transfer function by quadrature: `Φ((Id - λR(λ,A)) D_0 1)`.
pub fn quadrature_transfer(triple: &TransportTriple, lambda: Complex64) -> Complex64 {
    let n = triple.grid_size();
    let eff = lambda + triple.mu_shift();
    let one = CVector::from_element(n + 1, ONE);
    let dl = &one - transport_resolvent(eff, &one) * eff;
    triple.apply_phi(&dl)
}

fn transfer_margin(h: &CMatrix) -> Result<f64> {
    Ok(numkit::eigenvalues(h)?
        .iter()
        .map(|z| (ONE - z).norm())
        .fold(f64::INFINITY, f64::min))
}

/// `Q(λ)` in either world.
#[derive(Debug, Clone)]
pub enum PerturbedResolvent {
    Matrix {
        lambda: Complex64,
        q: CMatrix,
    },
    /// `Q f = R f + D_λ Φ(R f) / (1 - Φ(D_λ))` on the grid.
    Transport {
        lambda: Complex64,
        effective: Complex64,
        phi: Vec<Complex64>,
        dirichlet: CVector,
        gain: Complex64,
    },
}

pub fn perturbed_resolvent(triple: &SystemTriple, lambda: Complex64, spectral_tol: f64) -> Result<PerturbedResolvent> {
    match triple {
        SystemTriple::Matrix(m) => {
            let r = triple.resolvent(lambda)?.to_matrix()?;
            let rb = &r * &m.b;
            let h = &m.c * &rb;
            let margin = transfer_margin(&h)?;
            if margin < spectral_tol {
                return Err(Error::FeedbackSingularAt {
                    lambda: format!("{lambda}"),
                    margin,
                });
            }
            let q_dim = h.nrows();
            let inner = numkit::inverse(&(CMatrix::identity(q_dim, q_dim) - h))?;
            let q = &r + rb * inner * &m.c * &r;
            Ok(PerturbedResolvent::Matrix { lambda, q })
        }
        SystemTriple::Transport(tr) => {
            let n = tr.grid_size();
            let effective = lambda + tr.mu_shift();
            let dirichlet = transport::dirichlet_operator(effective, ONE, n).into_values();
            let h = tr.apply_phi(&dirichlet);
            let margin = (ONE - h).norm();
            if margin < spectral_tol {
                return Err(Error::FeedbackSingularAt {
                    lambda: format!("{lambda}"),
                    margin,
                });
            }
            Ok(PerturbedResolvent::Transport {
                lambda,
                effective,
                phi: tr.phi().to_vec(),
                dirichlet,
                gain: ONE / (ONE - h),
            })
        }
    }
}

impl PerturbedResolvent {
    pub fn lambda(&self) -> Complex64 {
        match self {
            PerturbedResolvent::Matrix { lambda, .. } | PerturbedResolvent::Transport { lambda, .. } => *lambda,
        }
    }

    pub fn apply(&self, x: &CVector) -> Result<CVector> {
        match self {
            PerturbedResolvent::Matrix { q, .. } => numkit::matvec(q, x),
            PerturbedResolvent::Transport {
                effective,
                phi,
                dirichlet,
                gain,
                ..
            } => {
                if x.len() != phi.len() {
                    return Err(Error::ShapeMismatch {
                        op: "PerturbedResolvent::apply",
                        expected: format!("length {}", phi.len()),
                        actual: format!("length {}", x.len()),
                    });
                }
                let rf = transport_resolvent(*effective, x);
                let c = phi.iter().zip(rf.iter()).fold(ZERO, |s, (w, v)| s + w * v) * gain;
                Ok(rf + dirichlet * c)
            }
        }
    }

    pub fn to_matrix(&self) -> Result<CMatrix> {
        match self {
            PerturbedResolvent::Matrix { q, .. } => Ok(q.clone()),
            PerturbedResolvent::Transport { phi, .. } => {
                let dim = phi.len();
                let mut m = CMatrix::zeros(dim, dim);
                for j in 0..dim {
                    let mut e = CVector::zeros(dim);
                    e[j] = ONE;
                    m.set_column(j, &self.apply(&e)?);
                }
                Ok(m)
            }
        }
    }
}

/// Outcome of the finite-horizon perturbed semigroup.
#[derive(Debug, Clone, PartialEq)]
pub struct WeissStaffans {
    /// `S(t)x`; transport states carry the boundary value in sample `N`.
    pub state: CVector,
    /// Closed-loop output `y = (Id - F_t)^{-1} C_t x`, for the triple actually used.
    pub feedback: CVector,
    /// Shift applied per the growth lemma; the state is already compensated.
    pub mu_shift: f64,
}

fn check_horizon(grid: &TimeGrid, t: f64) -> Result<()> {
    if (t - grid.t0()).abs() > 1e-12 * grid.t0().max(1.0) {
        return Err(Error::InvalidArgument {
            op: "weiss_staffans_semigroup",
            reason: format!("time {t} must equal the grid horizon {}", grid.t0()),
        });
    }
    Ok(())
}

fn check_state(triple: &SystemTriple, x: &CVector) -> Result<()> {
    if x.len() != triple.state_dim() {
        return Err(Error::ShapeMismatch {
            op: "weiss_staffans_semigroup",
            expected: format!("state of length {}", triple.state_dim()),
            actual: format!("length {}", x.len()),
        });
    }
    if let SystemTriple::Transport(_) = triple {
        let trace = x[x.len() - 1].norm();
        if trace > 1e-12 * x.iter().map(|z| z.norm()).fold(1.0, f64::max) {
            return Err(Error::OutsideDomain { value: trace });
        }
    }
    Ok(())
}

/// `(S(t)x, y)` from precomputed maps, without rescaling.
fn closed_loop_apply(triple: &SystemTriple, maps: &DiscreteMaps, x: &CVector) -> Result<(CVector, CVector)> {
    let cx = numkit::matvec(&maps.observe, x)?;
    let y = maps.io.solve_identity_minus(&cx)?;
    let mut state = numkit::matvec(&maps.semigroup, x)? + numkit::matvec(&maps.control, &y)?;
    if let SystemTriple::Transport(tr) = triple {
        let n = tr.grid_size();
        let interior = state.rows(0, n).into_owned();
        state = transport::extend_by_boundary(tr.measure(), &interior)?;
    }
    Ok((state, y))
}

fn ensure_feedback(maps: &DiscreteMaps, spectral_tol: f64) -> Result<()> {
    let margin = numkit::eigenvalues(&maps.io.blocks()[0])?
        .iter()
        .map(|z| (ONE - z).norm())
        .fold(f64::INFINITY, f64::min);
    if margin < spectral_tol {
        return Err(Error::FeedbackSingular { margin });
    }
    Ok(())
}

/// Norm-carrying block of `S(t0) = T(t0) + B_{t0}(Id - F_{t0})^{-1}C_{t0}`
/// (transport: samples `0..N-1`, i.e. states in `D(A)`), column by column.
pub fn closed_loop_matrix(triple: &SystemTriple, maps: &DiscreteMaps) -> Result<CMatrix> {
    let d = triple.norm_dim();
    let cols: Vec<CVector> = (0..d)
        .into_par_iter()
        .map(|j| {
            let mut e = CVector::zeros(triple.state_dim());
            e[j] = ONE;
            let (s, _) = closed_loop_apply(triple, maps, &e)?;
            Ok(s.rows(0, d).into_owned())
        })
        .collect::<Result<_>>()?;
    Ok(CMatrix::from_columns(&cols))
}

/// `max(0, ln‖S(t0)‖ / t0)`: the smallest shift with `‖S^μ(t0)‖ ≤ 1`.
pub fn certified_shift(triple: &SystemTriple, maps: &DiscreteMaps) -> Result<f64> {
    let ns = numkit::two_norm(&closed_loop_matrix(triple, maps)?);
    Ok(if ns > 0.0 { (ns.ln() / maps.grid.t0()).max(0.0) } else { 0.0 })
}

pub fn weiss_staffans_semigroup(triple: &SystemTriple, grid: &TimeGrid, t: f64, x: &CVector) -> Result<CVector> {
    Ok(weiss_staffans_detail(triple, grid, t, x)?.state)
}

/// When `‖S(t0)‖ ≥ 1` the computation runs on `(A - μ, B, C)` with
/// `‖S^μ(t0)‖ < 1` and the state is multiplied by `e^{μt}`.
pub fn weiss_staffans_detail(triple: &SystemTriple, grid: &TimeGrid, t: f64, x: &CVector) -> Result<WeissStaffans> {
    check_horizon(grid, t)?;
    check_state(triple, x)?;
    let maps = DiscreteMaps::build(triple, grid)?;
    ensure_feedback(&maps, admissibility::FEEDBACK_MARGIN)?;
    let shift = certified_shift(triple, &maps)?;
    if shift == 0.0 {
        let (state, feedback) = closed_loop_apply(triple, &maps, x)?;
        return Ok(WeissStaffans { state, feedback, mu_shift: 0.0 });
    }
    let mu = shift + 1.0;
    let shifted = triple.rescale(mu);
    let maps = DiscreteMaps::build(&shifted, grid)?;
    let (state, feedback) = closed_loop_apply(&shifted, &maps, x)?;
    Ok(WeissStaffans {
        state: state * c64((mu * t).exp(), 0.0),
        feedback,
        mu_shift: mu,
    })
}

/// `‖S(t)x - T(t)x - ∫_0^t T_{-1}(t-s) B C S(s)x ds‖ / ‖x‖` with the
/// integral taken over the piecewise-linear interpolant of `s ↦ C S(s)x`
/// (trapezoid rule in the matrix world, exact transport of the interpolant
/// otherwise). The left-endpoint rule would reproduce `S` exactly.
pub fn variation_of_parameters_residual(triple: &SystemTriple, grid: &TimeGrid, t: f64, x: &CVector, p: f64) -> Result<f64> {
    check_horizon(grid, t)?;
    check_state(triple, x)?;
    let maps = DiscreteMaps::build(triple, grid)?;
    ensure_feedback(&maps, admissibility::FEEDBACK_MARGIN)?;
    let (state, y) = closed_loop_apply(triple, &maps, x)?;
    let steps = grid.steps();
    let tx = numkit::matvec(&maps.semigroup, x)?;
    let rhs = match triple {
        SystemTriple::Matrix(m) => {
            let q = m.input_dim();
            let mut v: Vec<CVector> = (0..steps).map(|k| y.rows(k * q, q).into_owned()).collect();
            v.push(&m.c * &state);
            // column block k of the controllability matrix is h T(t - t_k) B
            let ctrl = |k: usize| -> CMatrix {
                if k == steps {
                    &m.b * c64(grid.h(), 0.0)
                } else {
                    maps.control.columns(k * q, q).into_owned()
                }
            };
            let mut acc = tx.clone();
            for k in 0..steps {
                acc += (ctrl(k) * &v[k] + ctrl(k + 1) * &v[k + 1]) * c64(0.5, 0.0);
            }
            acc
        }
        SystemTriple::Transport(tr) => {
            let n = tr.grid_size();
            let mu = tr.mu_shift();
            let h = grid.h();
            let mut v: Vec<Complex64> = y.iter().copied().collect();
            v.push(state[n]);
            let mut acc = tx.clone();
            for j in 0..n {
                let s = j as f64 / n as f64;
                let tau = s + t - 1.0;
                if tau < -1e-12 {
                    continue;
                }
                let pos = (tau.max(0.0) / h).min(steps as f64);
                let k = (pos.floor() as usize).min(steps - 1);
                let w = pos - k as f64;
                let val = v[k] * (1.0 - w) + v[k + 1] * w;
                acc[j] += val * (-mu * (1.0 - s)).exp();
            }
            acc[n] = v[steps];
            acc
        }
    };
    let nx = triple.state_norm(x, p);
    if nx == 0.0 {
        return Ok(0.0);
    }
    Ok(triple.state_norm(&(state - rhs), p) / nx)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftCheck {
    pub mu: f64,
    pub bound: f64,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockHorizonCheck {
    pub n: usize,
    /// `‖(Id - F_{n t0})^{-1}‖_2` from the directly discretized long horizon.
    pub inverse_norm: f64,
    /// The same norm from the explicit block inverse.
    pub structured_inverse_norm: f64,
    pub bound: f64,
    /// `max |(Id - F_{n t0}) - block form|`.
    pub structure_residual: f64,
    /// `‖block form · block inverse - Id‖_max`.
    pub product_residual: f64,
    pub dominated: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthReport {
    pub t0: f64,
    /// `‖T(t0) + B_{t0}(Id - F_{t0})^{-1}C_{t0}‖_2` on the discrete state space.
    pub surrogate_norm: f64,
    pub shifts: Vec<ShiftCheck>,
    pub horizons: Vec<BlockHorizonCheck>,
    pub certified_shift: f64,
}

/// Norm-carrying blocks `(T, B, C)` rescaled so plain 2-norms are the
/// quadrature-weighted ones.
fn weighted_blocks(triple: &SystemTriple, maps: &DiscreteMaps) -> (CMatrix, CMatrix, CMatrix) {
    let d = triple.norm_dim();
    let q = maps.control.ncols();
    let s = (triple.state_weight() / maps.grid.h()).sqrt();
    let t = maps.semigroup.view((0, 0), (d, d)).into_owned();
    let b = maps.control.view((0, 0), (d, q)).into_owned() * c64(s, 0.0);
    let c = maps.observe.view((0, 0), (q, d)).into_owned() * c64(1.0 / s, 0.0);
    (t, b, c)
}

pub fn lemma33_growth_check(
    triple: &SystemTriple,
    grid: &TimeGrid,
    mu_candidates: &[f64],
    n_max: usize,
) -> Result<GrowthReport> {
    let maps = DiscreteMaps::build(triple, grid)?;
    ensure_feedback(&maps, admissibility::FEEDBACK_MARGIN)?;
    let s = closed_loop_matrix(triple, &maps)?;
    let surrogate_norm = numkit::two_norm(&s);
    let t0 = grid.t0();
    let shifts = mu_candidates
        .iter()
        .map(|&mu| {
            let bound = (mu * t0).exp();
            ShiftCheck { mu, bound, passes: surrogate_norm < bound }
        })
        .collect();
    let (t, b, c) = weighted_blocks(triple, &maps);
    let f = maps.io.to_dense()?;
    let q = f.nrows();
    let mut horizons = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        if n * q > toeplitz::DENSE_CAP {
            break;
        }
        let long = TimeGrid::new(n as f64 * t0, n * grid.steps())?;
        let long_f = DiscreteMaps::build(triple, &long)?.io.to_dense()?;
        let one_minus = CMatrix::identity(n * q, n * q) - &long_f;
        let direct_inv = numkit::inverse(&one_minus)?;
        let pair = toeplitz::lemma33_inverse(&f, &b, &c, &t, n)?;
        let fwd = pair.forward.to_dense()?;
        let inv = pair.inverse.to_dense()?;
        let structure_residual = (&one_minus - &fwd).camax();
        let product_residual = (&fwd * &inv - CMatrix::identity(n * q, n * q)).camax();
        let inverse_norm = numkit::two_norm(&direct_inv);
        let bound = toeplitz::block_inverse_bound(&pair.g, &b, &c, &t, n);
        horizons.push(BlockHorizonCheck {
            n,
            inverse_norm,
            structured_inverse_norm: numkit::two_norm(&inv),
            bound,
            structure_residual,
            product_residual,
            dominated: inverse_norm <= bound * (1.0 + 1e-10),
        });
    }
    Ok(GrowthReport {
        t0,
        surrogate_norm,
        shifts,
        horizons,
        certified_shift: if surrogate_norm > 0.0 { (surrogate_norm.ln() / t0).max(0.0) } else { 0.0 },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonSample {
    pub t: f64,
    pub steps: usize,
    /// Upper bound of the discrete `‖F_t‖_{p→p}` (exact for `p ∈ {1, 2, ∞}`).
    pub norm_upper: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonSearch {
    pub samples: Vec<HorizonSample>,
    /// First horizon with `‖F_t‖ < 1`.
    pub t1: Option<f64>,
    pub fitted_exponent: Option<f64>,
    pub predicted_exponent: f64,
    pub rate_ok: bool,
    pub passes: bool,
}

/// Next horizon: matrix grids keep the step count, transport grids keep the step.
fn halve(triple: &SystemTriple, grid: &TimeGrid) -> Option<TimeGrid> {
    match triple {
        SystemTriple::Matrix(_) => TimeGrid::new(grid.t0() / 2.0, grid.steps()).ok(),
        SystemTriple::Transport(_) => {
            if grid.steps() < 2 {
                None
            } else {
                grid.prefix(grid.steps() / 2).ok()
            }
        }
    }
}

fn horizon_sample(triple: &SystemTriple, grid: &TimeGrid, p: f64) -> Result<HorizonSample> {
    let maps = DiscreteMaps::build(triple, grid)?;
    let v = feedback_verdict(&maps.io, p)?;
    Ok(HorizonSample {
        t: grid.t0(),
        steps: grid.steps(),
        norm_upper: v.norm.upper,
        margin: v.margin,
    })
}

/// Horizon samples from `grid` by halving, until `stop` holds on a sample
/// and at least `min_samples` are taken, or `MAX_HALVINGS` is reached.
fn search_horizons(
    triple: &SystemTriple,
    grid: &TimeGrid,
    p: f64,
    min_samples: usize,
    stop: impl Fn(&HorizonSample) -> bool,
) -> Result<Vec<HorizonSample>> {
    let mut samples = Vec::new();
    let mut current = Some(*grid);
    let mut hit = false;
    while let Some(g) = current {
        let s = horizon_sample(triple, &g, p)?;
        hit |= stop(&s);
        samples.push(s);
        if (hit && samples.len() >= min_samples) || samples.len() > MAX_HALVINGS {
            break;
        }
        current = halve(triple, &g);
    }
    Ok(samples)
}

/// Predicted decay of `‖F_t‖_{p→p}` from Jensen scaling of the `(α, β)` bound.
pub fn predicted_exponent(p: f64, alpha: f64, beta: f64) -> f64 {
    let inv = |q: f64| if q.is_infinite() { 0.0 } else { 1.0 / q };
    (inv(alpha) - inv(p)).max(inv(p) - inv(beta))
}

/// Shrinks the horizon until the discrete `‖F_t‖_p < 1` and fits the decay
/// rate of `‖F_t‖` against the predicted Jensen exponent.
pub fn holder_scaling_check(triple: &SystemTriple, grid: &TimeGrid, p: f64, alpha: f64, beta: f64) -> Result<HorizonSearch> {
    let samples = search_horizons(triple, grid, p, 4, |s| s.norm_upper < 1.0)?;
    let t1 = samples.iter().find(|s| s.norm_upper < 1.0).map(|s| s.t);
    let ts: Vec<f64> = samples.iter().map(|s| s.t).collect();
    let ns: Vec<f64> = samples.iter().map(|s| s.norm_upper).collect();
    let fitted = loglog_slope(&ts, &ns);
    let predicted = predicted_exponent(p, alpha, beta);
    let rate_ok = fitted.map_or(true, |s| s >= predicted - 0.25);
    Ok(HorizonSearch {
        samples,
        t1,
        fitted_exponent: fitted,
        predicted_exponent: predicted,
        rate_ok,
        passes: t1.is_some() && rate_ok,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exponents {
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Exponents {
    pub fn new(p: f64, alpha: f64, beta: f64) -> Result<Self> {
        let ok = alpha >= 1.0 && alpha <= p && p <= beta && p.is_finite() && (alpha < beta || (alpha == p && beta == p));
        if !ok {
            return Err(Error::InvalidArgument {
                op: "Exponents::new",
                reason: format!("need 1 <= alpha <= p <= beta, p finite, alpha < beta or alpha = beta = p; got p = {p}, alpha = {alpha}, beta = {beta}"),
            });
        }
        Ok(Self { p, alpha, beta })
    }

    pub fn uses_small_horizon(&self) -> bool {
        self.alpha < self.beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub algebraic: f64,
    pub spectral: f64,
    pub quadrature_order: u32,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            algebraic: 1e-10,
            spectral: 1e-8,
            quadrature_order: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Generated,
    NotGenerated,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// `1 ∈ ρ(F_{t0})` checked directly.
    InvertibleFeedback,
    /// `α < β`: a horizon with `‖F_t‖ < 1` replaces invertibility.
    SmallHorizon,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub passed: bool,
    pub value: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackCondition {
    pub passed: bool,
    pub route: Route,
    /// `dist(1, σ(F_t))` at the accepted horizon (or at `t0` on failure).
    pub margin: f64,
    pub horizon: f64,
    pub norm_upper: f64,
    pub samples: Vec<HorizonSample>,
    pub fitted_exponent: Option<f64>,
    pub predicted_exponent: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolventResidual {
    pub lambda_re: f64,
    pub lambda_im: f64,
    /// `None` when `Q(λ)` does not exist.
    pub residual: Option<f64>,
    pub tolerance: f64,
    /// `dist(1, σ(C R(λ, A_{-1}) B))`.
    pub transfer_margin: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationCertificate {
    pub world: String,
    pub exponents: Exponents,
    pub t0: f64,
    pub steps: usize,
    pub compatibility: Condition,
    pub control: Condition,
    pub observation: Condition,
    pub input_output: Condition,
    pub feedback: FeedbackCondition,
    pub mu_shift: f64,
    pub resolvent_residuals: Vec<ResolventResidual>,
    pub trials: usize,
    pub constants_are_lower_bounds: bool,
    pub verdict: Verdict,
    pub scope: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateOptions {
    pub tolerances: Tolerances,
    pub trials: usize,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        Self {
            tolerances: Tolerances::default(),
            trials: 32,
        }
    }
}

/// Ten points on `Re λ = base + 1 + LAMBDA_MARGIN`, imaginary parts
/// log-spaced on `[0.1, ω_max]`.
pub fn lambda_line(base: f64, omega_max: f64) -> Vec<Complex64> {
    let re = base + 1.0 + LAMBDA_MARGIN;
    let (lo, hi) = (0.1f64.ln(), omega_max.max(0.2).ln());
    (0..10)
        .map(|k| c64(re, (lo + (hi - lo) * k as f64 / 9.0).exp()))
        .collect()
}

fn omega_max(triple: &SystemTriple) -> f64 {
    match triple {
        SystemTriple::Matrix(_) => 100.0,
        SystemTriple::Transport(tr) => (tr.grid_size() as f64 / 16.0).min(100.0),
    }
}

/// `(residual, tolerance)` of `(λ - A_BC) Q(λ) x = x` for one probe.
fn resolvent_residual(
    triple: &SystemTriple,
    q: &PerturbedResolvent,
    probe: &CVector,
    tol: &Tolerances,
) -> Result<(f64, f64)> {
    let lambda = q.lambda();
    let g = q.apply(probe)?;
    match triple {
        SystemTriple::Matrix(m) => {
            let n = m.state_dim();
            let op = CMatrix::identity(n, n) * lambda - &m.a - &m.b * &m.c;
            let r = (numkit::matvec(&op, &g)? - probe).norm() / probe.norm();
            let PerturbedResolvent::Matrix { q: qm, .. } = q else { unreachable!() };
            let cond = numkit::two_norm(&op) * numkit::two_norm(qm);
            Ok((r, tol.algebraic * cond.max(1.0)))
        }
        SystemTriple::Transport(tr) => {
            let n = tr.grid_size();
            let nf = n as f64;
            let lam = lambda + tr.mu_shift();
            let sup = |v: &mut dyn Iterator<Item = f64>| v.fold(0.0, f64::max);
            let interior = sup(&mut (0..n).map(|k| (lam * g[k] - (g[k + 1] - g[k]) * nf - probe[k]).norm()));
            let boundary = (g[n] - tr.apply_phi(&g)).norm();
            let fs = sup(&mut probe.iter().map(|z| z.norm())).max(1e-300);
            let gs = sup(&mut g.iter().map(|z| z.norm()));
            let df = sup(&mut (0..n).map(|k| (probe[k + 1] - probe[k]).norm())) * nf;
            let budget = (lam.norm_sqr() * gs + lam.norm() * fs + df) / nf + tol.algebraic * (gs * nf + fs);
            Ok((interior.max(boundary) / fs, budget / fs))
        }
    }
}

/// Smooth probe for transport residuals: a few random Fourier modes.
fn smooth_probe(n: usize, rng: &mut Rng) -> CVector {
    let coeffs: Vec<Complex64> = (0..4).map(|_| rng.complex()).collect();
    CVector::from_fn(n + 1, |k, _| {
        let s = k as f64 / n as f64;
        coeffs
            .iter()
            .enumerate()
            .fold(ZERO, |acc, (j, c)| acc + c * (std::f64::consts::PI * (j as f64 + 1.0) * s).sin())
    })
}

pub fn generation_certificate(
    triple: &SystemTriple,
    grid: &TimeGrid,
    p: f64,
    alpha: f64,
    beta: f64,
    rng: &Rng,
) -> Result<GenerationCertificate> {
    generation_certificate_with(triple, grid, Exponents::new(p, alpha, beta)?, rng, &CertificateOptions::default())
}

pub fn generation_certificate_with(
    triple: &SystemTriple,
    grid: &TimeGrid,
    exps: Exponents,
    rng: &Rng,
    opts: &CertificateOptions,
) -> Result<GenerationCertificate> {
    let tol = opts.tolerances;
    let maps = DiscreteMaps::build(triple, grid)?;
    let report = estimate_constants_with(triple, &maps, exps.p, exps.alpha, exps.beta, opts.trials, rng)?;

    let compatibility = match triple {
        SystemTriple::Matrix(_) => Condition {
            passed: true,
            value: 0.0,
            note: "finite dimension: Z = X, compatibility is automatic".into(),
        },
        SystemTriple::Transport(tr) => {
            let n = tr.grid_size();
            let r = transport::greiner_compatibility(ONE, n);
            Condition {
                passed: r <= 10.0 / n as f64,
                value: r,
                note: "sup |(Id - R(1,A)) D_0 1 - D_1 1| against the first-order budget 10/N".into(),
            }
        }
    };
    let finite = |v: f64, note: &str| Condition {
        passed: v.is_finite(),
        value: v,
        note: note.into(),
    };
    let control = finite(report.m_control, "max ||B_t0 u|| / ||u||_p over trials");
    let observation = finite(report.m_observe, "max ||C_t0 x||_p over unit states in D(A)");
    let input_output = finite(report.m_io, "max ||F_t0 u||_beta / ||u||_alpha over trials");

    let (feedback, working) = if exps.uses_small_horizon() {
        let search = holder_scaling_check(triple, grid, exps.p, exps.alpha, exps.beta)?;
        let accepted = search.samples.iter().find(|s| s.norm_upper < 1.0).copied();
        let pick = accepted.unwrap_or(search.samples[0]);
        let working = match (accepted, triple) {
            (Some(s), SystemTriple::Matrix(_)) => Some(TimeGrid::new(s.t, s.steps)?),
            (Some(s), SystemTriple::Transport(_)) => Some(grid.prefix(s.steps)?),
            (None, _) => None,
        };
        (
            FeedbackCondition {
                passed: search.passes,
                route: Route::SmallHorizon,
                margin: pick.margin,
                horizon: pick.t,
                norm_upper: pick.norm_upper,
                samples: search.samples,
                fitted_exponent: search.fitted_exponent,
                predicted_exponent: search.predicted_exponent,
                note: "horizon halved until the discrete ||F_t|| < 1; only [0, t] enters S(t)".into(),
            },
            working,
        )
    } else {
        let samples = search_horizons(triple, grid, exps.p, 1, |s| s.margin >= tol.spectral)?;
        let accepted = samples.iter().find(|s| s.margin >= tol.spectral).copied();
        let pick = accepted.unwrap_or(samples[0]);
        let working = match (accepted, triple) {
            (Some(s), SystemTriple::Matrix(_)) => Some(TimeGrid::new(s.t, s.steps)?),
            (Some(s), SystemTriple::Transport(_)) => Some(grid.prefix(s.steps)?),
            (None, _) => None,
        };
        (
            FeedbackCondition {
                passed: accepted.is_some(),
                route: Route::InvertibleFeedback,
                margin: pick.margin,
                horizon: pick.t,
                norm_upper: pick.norm_upper,
                samples,
                fitted_exponent: None,
                predicted_exponent: 0.0,
                note: "dist(1, spectrum of the discrete F_t); only [0, t] enters S(t)".into(),
            },
            working,
        )
    };

    let mu_shift = match &working {
        Some(g) => certified_shift(triple, &DiscreteMaps::build(triple, g)?)?,
        None => 0.0,
    };
    let abscissa = triple.spectral_abscissa()?;
    let base = if abscissa.nilpotent { mu_shift } else { mu_shift.max(abscissa.value) };
    let lambdas = lambda_line(base, omega_max(triple));
    let resolvent_residuals: Vec<ResolventResidual> = lambdas
        .par_iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let mut r = rng.fork(1_000_000 + i as u64);
            let transfer_margin = transfer_margin(&transfer_function(triple, lambda)?)?;
            let probe = match triple {
                SystemTriple::Matrix(_) => random_state(triple, 2.0, &mut r),
                SystemTriple::Transport(tr) => smooth_probe(tr.grid_size(), &mut r),
            };
            match perturbed_resolvent(triple, lambda, tol.spectral) {
                Ok(q) => {
                    let (residual, tolerance) = resolvent_residual(triple, &q, &probe, &tol)?;
                    Ok(ResolventResidual {
                        lambda_re: lambda.re,
                        lambda_im: lambda.im,
                        residual: Some(residual),
                        tolerance,
                        transfer_margin,
                    })
                }
                Err(Error::FeedbackSingularAt { .. }) => Ok(ResolventResidual {
                    lambda_re: lambda.re,
                    lambda_im: lambda.im,
                    residual: None,
                    tolerance: tol.algebraic,
                    transfer_margin,
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let residuals_ok = resolvent_residuals
        .iter()
        .all(|r| r.residual.is_some_and(|v| v <= r.tolerance));
    let all_flags = compatibility.passed && control.passed && observation.passed && input_output.passed && feedback.passed;
    let singular_everywhere = feedback.samples.iter().all(|s| s.margin < tol.spectral)
        && resolvent_residuals.iter().all(|r| r.transfer_margin < tol.spectral);
    let verdict = if all_flags && residuals_ok {
        Verdict::Generated
    } else if singular_everywhere {
        Verdict::NotGenerated
    } else {
        Verdict::Inconclusive
    };

    Ok(GenerationCertificate {
        world: triple.world().into(),
        exponents: exps,
        t0: grid.t0(),
        steps: grid.steps(),
        compatibility,
        control,
        observation,
        input_output,
        feedback,
        mu_shift,
        resolvent_residuals,
        trials: opts.trials,
        constants_are_lower_bounds: true,
        verdict,
        scope: "all checks are discrete surrogates on the stated grid; constants are lower bounds over the trials".into(),
    })
}
