//! Controllability, observability and input-output maps on a time grid,
//! admissibility constants and the feedback test.
//!
//! Signals are sampled at left endpoints `t_k = k h` and carry the norm
//! `(h Σ_k Σ_i |u_k^i|^p)^{1/p}`, i.e. `ℓ^p` on the components of `U`.
//! Matrix-world states use the Euclidean norm, transport states the `L^p`
//! norm of the grid function.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numkit::{self, c64, CMatrix, CVector, NormBracket, Rng, ZERO};
use crate::semigroup::{shift_matrix, SystemTriple, TransportTriple};
use crate::toeplitz::{BlockToeplitz, DENSE_CAP};

/// Spectral distance of 1 from `σ(F)` below which `Id - F` counts as singular.
pub const FEEDBACK_MARGIN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeGrid {
    t0: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, steps: usize) -> Result<Self> {
        if !(t0 > 0.0 && t0.is_finite()) || steps == 0 {
            return Err(Error::InvalidArgument {
                op: "TimeGrid::new",
                reason: format!("need t0 > 0 and steps >= 1, got t0 = {t0}, steps = {steps}"),
            });
        }
        Ok(Self { t0, steps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn h(&self) -> f64 {
        self.t0 / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.h()
    }

    /// The first `steps` steps of this grid.
    pub fn prefix(&self, steps: usize) -> Result<Self> {
        Self::new(steps as f64 * self.h(), steps)
    }
}

/// Number of `1/N` cells per time step; the grid must be compatible with the triple.
pub fn cells_per_step(triple: &TransportTriple, grid: &TimeGrid) -> Result<usize> {
    let n = triple.grid_size();
    let ratio = grid.h() * n as f64;
    let r = ratio.round();
    if r < 1.0 || (ratio - r).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::InvalidArgument {
            op: "cells_per_step",
            reason: format!("time step {} is not a positive multiple of 1/{n}", grid.h()),
        });
    }
    Ok(r as usize)
}

/// `U`-valued signal: `steps` samples of `dim` components, stored step-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    grid: TimeGrid,
    dim: usize,
    p: f64,
    values: CVector,
}

impl SampledSignal {
    pub fn new(grid: TimeGrid, dim: usize, p: f64, values: CVector) -> Result<Self> {
        if values.len() != grid.steps() * dim {
            return Err(Error::ShapeMismatch {
                op: "SampledSignal::new",
                expected: format!("{} values", grid.steps() * dim),
                actual: format!("{} values", values.len()),
            });
        }
        Ok(Self { grid, dim, p, values })
    }

    pub fn zeros(grid: TimeGrid, dim: usize, p: f64) -> Self {
        Self {
            grid,
            dim,
            p,
            values: CVector::zeros(grid.steps() * dim),
        }
    }

    pub fn from_fn(grid: TimeGrid, dim: usize, p: f64, f: impl Fn(f64) -> CVector) -> Self {
        let mut values = CVector::zeros(grid.steps() * dim);
        for k in 0..grid.steps() {
            values.rows_mut(k * dim, dim).copy_from(&f(grid.time(k)));
        }
        Self { grid, dim, p, values }
    }

    /// `𝟙 ⊗ v`.
    pub fn constant(grid: TimeGrid, v: &CVector, p: f64) -> Self {
        Self::from_fn(grid, v.len(), p, |_| v.clone())
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn values(&self) -> &CVector {
        &self.values
    }

    pub fn sample(&self, k: usize) -> CVector {
        self.values.rows(k * self.dim, self.dim).into_owned()
    }

    pub fn norm(&self) -> f64 {
        self.norm_with(self.p)
    }

    pub fn norm_with(&self, p: f64) -> f64 {
        numkit::weighted_norm(self.values.as_slice(), p, self.grid.h())
    }

    /// `e^{μ t_k} u(t_k)`.
    pub fn weighted_by_exp(&self, mu: f64) -> Self {
        let mut out = self.clone();
        for k in 0..self.grid.steps() {
            let w = c64((mu * self.grid.time(k)).exp(), 0.0);
            for i in 0..self.dim {
                out.values[k * self.dim + i] *= w;
            }
        }
        out
    }
}

/// The three maps, discretized once, plus `T(t0)`.
#[derive(Debug, Clone)]
pub struct DiscreteMaps {
    pub grid: TimeGrid,
    /// `state_dim × steps·m`.
    pub control: CMatrix,
    /// `steps·m × state_dim`.
    pub observe: CMatrix,
    /// Block lower-triangular Toeplitz, blocks `m × m`.
    pub io: BlockToeplitz,
    pub semigroup: CMatrix,
}

impl DiscreteMaps {
    pub fn build(triple: &SystemTriple, grid: &TimeGrid) -> Result<Self> {
        let cols = grid.steps() * triple.input_dim();
        if cols > DENSE_CAP {
            return Err(Error::SizeCap { cols, cap: DENSE_CAP });
        }
        match triple {
            SystemTriple::Matrix(m) => {
                let h = grid.h();
                let props: Vec<CMatrix> = (0..=grid.steps())
                    .into_par_iter()
                    .map(|k| numkit::expm(&m.a, k as f64 * h))
                    .collect::<Result<_>>()?;
                let (n, q) = (m.state_dim(), m.input_dim());
                let steps = grid.steps();
                let hc = c64(h, 0.0);
                let mut control = CMatrix::zeros(n, steps * q);
                let mut observe = CMatrix::zeros(steps * q, n);
                let mut blocks = Vec::with_capacity(steps);
                for k in 0..steps {
                    control
                        .view_mut((0, k * q), (n, q))
                        .copy_from(&(&props[steps - k] * &m.b * hc));
                    observe.view_mut((k * q, 0), (q, n)).copy_from(&(&m.c * &props[k]));
                    blocks.push(if k == 0 {
                        CMatrix::zeros(q, q)
                    } else {
                        &m.c * &props[k] * &m.b * hc
                    });
                }
                Ok(Self {
                    grid: *grid,
                    control,
                    observe,
                    io: BlockToeplitz::new(blocks)?,
                    semigroup: props[steps].clone(),
                })
            }
            SystemTriple::Transport(tr) => transport_maps(tr, grid),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.control.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.io.block_dim()
    }
}

fn transport_maps(tr: &TransportTriple, grid: &TimeGrid) -> Result<DiscreteMaps> {
    let n = tr.grid_size();
    let cells = cells_per_step(tr, grid)?;
    let steps = grid.steps();
    let mu = tr.mu_shift();
    let phi = tr.phi();
    let t0 = grid.t0();

    // Sample j of B_{t0}u carries the input that entered at t0 - (1 - s_j).
    let mut control = CMatrix::zeros(n + 1, steps);
    for j in 0..n {
        let idx = (j + steps * cells) as isize - n as isize;
        if idx >= 0 {
            let k = idx as usize / cells;
            control[(j, k)] = c64((-mu * (t0 - grid.time(k))).exp(), 0.0);
        }
    }

    // (C_{t0}x)(t_i) = Φ(T(t_i)x).
    let mut observe = CMatrix::zeros(steps, n + 1);
    for i in 0..steps {
        let damp = (-mu * grid.time(i)).exp();
        let shift = i * cells;
        for q in shift..n {
            observe[(i, q)] = phi[q - shift] * damp;
        }
    }
    observe[(0, n)] = phi[n];

    // Output at t_i from the input held on [t_{i-d}, t_{i-d+1}).
    let mut blocks = Vec::with_capacity(steps);
    for d in 0..steps {
        let s = if d == 0 {
            phi[n]
        } else if d * cells < n + cells {
            let lo = n.saturating_sub(d * cells);
            let hi = (n + cells - 1 - d * cells).min(n - 1);
            let sum = (lo..=hi).fold(ZERO, |acc, l| acc + phi[l]);
            sum * (-mu * d as f64 * grid.h()).exp()
        } else {
            ZERO
        };
        blocks.push(CMatrix::from_element(1, 1, s));
    }

    Ok(DiscreteMaps {
        grid: *grid,
        control,
        observe,
        io: BlockToeplitz::new(blocks)?,
        semigroup: shift_matrix(n, steps * cells, (-mu * t0).exp()),
    })
}

fn check_signal(triple: &SystemTriple, grid: &TimeGrid, u: &SampledSignal, op: &'static str) -> Result<()> {
    if u.grid() != grid || u.dim() != triple.input_dim() {
        return Err(Error::ShapeMismatch {
            op,
            expected: format!("signal of dim {} on {} steps of {}", triple.input_dim(), grid.steps(), grid.h()),
            actual: format!("dim {} on {} steps of {}", u.dim(), u.grid().steps(), u.grid().h()),
        });
    }
    Ok(())
}

fn check_domain(triple: &SystemTriple, x: &CVector) -> Result<()> {
    if x.len() != triple.state_dim() {
        return Err(Error::ShapeMismatch {
            op: "observability_map",
            expected: format!("state of length {}", triple.state_dim()),
            actual: format!("length {}", x.len()),
        });
    }
    if let SystemTriple::Transport(_) = triple {
        let trace = x[x.len() - 1].norm();
        let scale = x.iter().map(|z| z.norm()).fold(1.0, f64::max);
        if trace > 1e-12 * scale {
            return Err(Error::OutsideDomain { value: trace });
        }
    }
    Ok(())
}

pub fn controllability_matrix(triple: &SystemTriple, grid: &TimeGrid) -> Result<CMatrix> {
    Ok(DiscreteMaps::build(triple, grid)?.control)
}

pub fn observability_matrix(triple: &SystemTriple, grid: &TimeGrid) -> Result<CMatrix> {
    Ok(DiscreteMaps::build(triple, grid)?.observe)
}

pub fn io_operator(triple: &SystemTriple, grid: &TimeGrid) -> Result<BlockToeplitz> {
    Ok(DiscreteMaps::build(triple, grid)?.io)
}

/// Dense `F_{t0}`; signal weights cancel, so `induced_norm` is the discrete `L^p → L^p` norm.
pub fn io_matrix(triple: &SystemTriple, grid: &TimeGrid) -> Result<CMatrix> {
    io_operator(triple, grid)?.to_dense()
}

pub fn controllability_map(triple: &SystemTriple, grid: &TimeGrid, u: &SampledSignal) -> Result<CVector> {
    check_signal(triple, grid, u, "controllability_map")?;
    numkit::matvec(&controllability_matrix(triple, grid)?, u.values())
}

pub fn observability_map(triple: &SystemTriple, grid: &TimeGrid, x: &CVector, p: f64) -> Result<SampledSignal> {
    check_domain(triple, x)?;
    let y = numkit::matvec(&observability_matrix(triple, grid)?, x)?;
    SampledSignal::new(*grid, triple.input_dim(), p, y)
}

pub fn io_map(triple: &SystemTriple, grid: &TimeGrid, u: &SampledSignal) -> Result<SampledSignal> {
    check_signal(triple, grid, u, "io_map")?;
    let y = io_operator(triple, grid)?.apply(u.values())?;
    SampledSignal::new(*grid, u.dim(), u.p(), y)
}

/// Piecewise-cubic Hermite signal through random complex knots, with value
/// and slope zero at `t = 0`.
pub fn smooth_trial(grid: &TimeGrid, dim: usize, p: f64, rng: &mut Rng) -> SampledSignal {
    let knots = 2 + rng.index(7);
    let dt = grid.t0() / knots as f64;
    let vals: Vec<CVector> = (0..=knots)
        .map(|j| if j == 0 { CVector::zeros(dim) } else { rng.vector(dim) })
        .collect();
    let slopes: Vec<CVector> = (0..=knots)
        .map(|j| {
            if j == 0 {
                CVector::zeros(dim)
            } else if j == knots {
                (&vals[j] - &vals[j - 1]) / c64(dt, 0.0)
            } else {
                (&vals[j + 1] - &vals[j - 1]) / c64(2.0 * dt, 0.0)
            }
        })
        .collect();
    SampledSignal::from_fn(*grid, dim, p, |t| {
        let j = ((t / dt) as usize).min(knots - 1);
        let s = (t - j as f64 * dt) / dt;
        let (h00, h10) = (2.0 * s * s * s - 3.0 * s * s + 1.0, s * s * s - 2.0 * s * s + s);
        let (h01, h11) = (-2.0 * s * s * s + 3.0 * s * s, s * s * s - s * s);
        &vals[j] * c64(h00, 0.0)
            + &slopes[j] * c64(h10 * dt, 0.0)
            + &vals[j + 1] * c64(h01, 0.0)
            + &slopes[j + 1] * c64(h11 * dt, 0.0)
    })
}

/// Random state of unit norm; transport states vanish at `s = 1` (so lie in `D(A)`).
pub fn random_state(triple: &SystemTriple, p: f64, rng: &mut Rng) -> CVector {
    let mut x = rng.vector(triple.state_dim());
    if let SystemTriple::Transport(_) = triple {
        let n = x.len() - 1;
        x[n] = ZERO;
    }
    let nx = triple.state_norm(&x, p);
    x / c64(nx, 0.0)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmissibilityReport {
    pub m_control: f64,
    pub m_observe: f64,
    pub m_io: f64,
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
    pub feedback_ok: bool,
    pub margin: f64,
    pub samples: usize,
    pub skipped: usize,
    /// The constants are maxima over trials, hence lower bounds of the suprema.
    pub lower_bounds: bool,
}

pub fn estimate_constants(
    triple: &SystemTriple,
    grid: &TimeGrid,
    p: f64,
    alpha: f64,
    beta: f64,
    trials: usize,
    rng: &Rng,
) -> Result<AdmissibilityReport> {
    let maps = DiscreteMaps::build(triple, grid)?;
    estimate_constants_with(triple, &maps, p, alpha, beta, trials, rng)
}

pub fn estimate_constants_with(
    triple: &SystemTriple,
    maps: &DiscreteMaps,
    p: f64,
    alpha: f64,
    beta: f64,
    trials: usize,
    rng: &Rng,
) -> Result<AdmissibilityReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument {
            op: "estimate_constants",
            reason: "trials must be at least 1".into(),
        });
    }
    let grid = maps.grid;
    let m = maps.input_dim();
    let h = grid.h();
    let per_trial: Vec<Result<(Option<(f64, f64)>, f64)>> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.fork(i);
            let u = smooth_trial(&grid, m, p, &mut r);
            let x = random_state(triple, p, &mut r);
            let observe = numkit::weighted_norm(numkit::matvec(&maps.observe, &x)?.as_slice(), p, h);
            let (nu_p, nu_a) = (u.norm_with(p), u.norm_with(alpha));
            if nu_p == 0.0 || nu_a == 0.0 {
                return Ok((None, observe));
            }
            let bu = numkit::matvec(&maps.control, u.values())?;
            let fu = maps.io.apply(u.values())?;
            let c = triple.state_norm(&bu, p) / nu_p;
            let f = numkit::weighted_norm(fu.as_slice(), beta, h) / nu_a;
            Ok((Some((c, f)), observe))
        })
        .collect();
    let (mut m_control, mut m_observe, mut m_io, mut skipped) = (0.0f64, 0.0f64, 0.0f64, 0);
    for r in per_trial {
        let (cf, o) = r?;
        m_observe = m_observe.max(o);
        match cf {
            Some((c, f)) => {
                m_control = m_control.max(c);
                m_io = m_io.max(f);
            }
            None => skipped += 1,
        }
    }
    if skipped == trials {
        return Err(Error::AllTrialsSkipped { trials });
    }
    let verdict = feedback_verdict(&maps.io, p)?;
    Ok(AdmissibilityReport {
        m_control,
        m_observe,
        m_io,
        p,
        alpha,
        beta,
        feedback_ok: verdict.admissible,
        margin: verdict.margin,
        samples: trials,
        skipped,
        lower_bounds: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackVerdict {
    pub admissible: bool,
    /// `dist(1, σ(F))`.
    pub margin: f64,
    /// Discrete `‖F‖_{p→p}`, exact for `p ∈ {1, 2, ∞}`.
    pub norm: NormBracket,
    /// The sufficient condition `‖F‖ < 1`, from the upper bound.
    pub contraction: bool,
}

pub fn feedback_admissible(triple: &SystemTriple, grid: &TimeGrid, p: f64) -> Result<FeedbackVerdict> {
    feedback_verdict(&io_operator(triple, grid)?, p)
}

/// `σ(F)` of a block lower-triangular Toeplitz operator is `σ(F_0)`.
pub fn feedback_verdict(io: &BlockToeplitz, p: f64) -> Result<FeedbackVerdict> {
    let margin = numkit::eigenvalues(&io.blocks()[0])?
        .iter()
        .map(|z| (numkit::ONE - z).norm())
        .fold(f64::INFINITY, f64::min);
    let dense = io.to_dense()?;
    let norm = numkit::norm_bounds(&dense, p, 1.0, 1.0, &mut Rng::new(0))?;
    Ok(FeedbackVerdict {
        admissible: margin >= FEEDBACK_MARGIN,
        margin,
        norm,
        contraction: norm.upper < 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RescalingResiduals {
    pub control: f64,
    pub observe: f64,
    pub io: f64,
}

impl RescalingResiduals {
    pub fn max(&self) -> f64 {
        self.control.max(self.observe).max(self.io)
    }
}

/// Relative residuals of `B^μ = e^{-μt0} B M`, `C^μ = M^{-1} C`,
/// `F^μ = M^{-1} F M` with `M` multiplication by `e^{μ t_k}`.
pub fn rescaled_map_identities(
    triple: &SystemTriple,
    grid: &TimeGrid,
    mu_shift: f64,
    rng: &Rng,
) -> Result<RescalingResiduals> {
    if !(mu_shift >= 0.0) {
        return Err(Error::InvalidArgument {
            op: "rescaled_map_identities",
            reason: format!("mu_shift = {mu_shift} must be >= 0"),
        });
    }
    let base = DiscreteMaps::build(triple, grid)?;
    let shifted = DiscreteMaps::build(&triple.rescale(mu_shift), grid)?;
    let m = base.input_dim();
    let rel = |a: &CVector, b: &CVector| (a - b).norm() / b.norm().max(1.0);
    let mut out = RescalingResiduals { control: 0.0, observe: 0.0, io: 0.0 };
    for i in 0..4 {
        let mut r = rng.fork(i);
        let u = smooth_trial(grid, m, 2.0, &mut r);
        let x = random_state(triple, 2.0, &mut r);
        let mu_u = u.weighted_by_exp(mu_shift);

        let lhs = numkit::matvec(&shifted.control, u.values())?;
        let rhs = numkit::matvec(&base.control, mu_u.values())? * c64((-mu_shift * grid.t0()).exp(), 0.0);
        out.control = out.control.max(rel(&lhs, &rhs));

        let lhs = numkit::matvec(&shifted.observe, &x)?;
        let cx = SampledSignal::new(*grid, m, 2.0, numkit::matvec(&base.observe, &x)?)?;
        out.observe = out.observe.max(rel(&lhs, cx.weighted_by_exp(-mu_shift).values()));

        let lhs = shifted.io.apply(u.values())?;
        let fmu = SampledSignal::new(*grid, m, 2.0, base.io.apply(mu_u.values())?)?;
        out.io = out.io.max(rel(&lhs, fmu.weighted_by_exp(-mu_shift).values()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularityReport {
    pub times: Vec<f64>,
    pub quantity: Vec<f64>,
    /// Least-squares slope of `log q` against `log t` over the positive values.
    pub fitted_exponent: Option<f64>,
    pub predicted_exponent: f64,
    pub decreasing: bool,
    pub passes: bool,
}

/// Cesàro quantity `q(t) = ‖(1/t) ∫_0^t (F_t (𝟙 ⊗ v))(s) ds‖` along decreasing
/// on-grid times. By causality `F_t` is the leading block of `F_{t0}`.
pub fn regularity_check(
    triple: &SystemTriple,
    grid: &TimeGrid,
    v: &CVector,
    t_sequence: &[f64],
    alpha: f64,
    beta: f64,
) -> Result<RegularityReport> {
    if t_sequence.len() < 3 {
        return Err(Error::TooFewSamples {
            op: "regularity_check",
            needed: 3,
            got: t_sequence.len(),
        });
    }
    let h = grid.h();
    let mut prefix = Vec::with_capacity(t_sequence.len());
    for &t in t_sequence {
        let k = t / h;
        let r = k.round();
        if !(t > 0.0) || t > grid.t0() * (1.0 + 1e-12) || (k - r).abs() > 1e-9 * k.max(1.0) {
            return Err(Error::InvalidArgument {
                op: "regularity_check",
                reason: format!("time {t} is not a grid point in (0, {}]", grid.t0()),
            });
        }
        prefix.push(r as usize);
    }
    let u = SampledSignal::constant(*grid, v, 2.0);
    let fu = io_operator(triple, grid)?.apply(u.values())?;
    let m = v.len();
    let quantity: Vec<f64> = prefix
        .iter()
        .zip(t_sequence)
        .map(|(&k, &t)| {
            let mut acc = CVector::zeros(m);
            for j in 0..k {
                acc += fu.rows(j * m, m);
            }
            (acc * c64(h / t, 0.0)).norm()
        })
        .collect();
    let predicted = 1.0 / alpha - 1.0 / beta;
    let fitted = loglog_slope(t_sequence, &quantity);
    let tiny = 1e-14 * v.norm().max(1e-300);
    let decreasing = quantity.windows(2).all(|w| w[1] < w[0] || w[1] <= tiny);
    let rate_ok = match fitted {
        Some(s) => s >= predicted - 0.25,
        None => true,
    };
    Ok(RegularityReport {
        times: t_sequence.to_vec(),
        quantity,
        fitted_exponent: fitted,
        predicted_exponent: predicted,
        decreasing,
        passes: decreasing && rate_ok,
    })
}

/// Least-squares slope of `log y` on `log x` over pairs with `y > 0`; `None`
/// if fewer than two such pairs (the quantity has already reached zero).
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(_, &y)| y > 0.0)
        .map(|(&x, &y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let (sxy, sxx) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx) * (x - mx)));
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

/// Discrete Hölder factor `(m t)^{1/r - 1/s}` for `‖u‖_r ≤ factor · ‖u‖_s`, `r ≤ s`.
pub fn jensen_factor(input_dim: usize, t: f64, r: f64, s: f64) -> f64 {
    let inv = |q: f64| if q.is_infinite() { 0.0 } else { 1.0 / q };
    (input_dim as f64 * t).powf(inv(r) - inv(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::ONE;
    use crate::semigroup::MatrixTriple;
    use crate::transport::{Atom, BorelMeasure};
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn scalar(a: f64, b: f64, c: f64) -> SystemTriple {
        let s = |v: f64| CMatrix::from_element(1, 1, c64(v, 0.0));
        SystemTriple::Matrix(MatrixTriple::new(s(a), s(b), s(c)).unwrap())
    }

    fn transport(n: usize, measure: BorelMeasure) -> SystemTriple {
        SystemTriple::Transport(TransportTriple::new(n, 2.0, measure).unwrap())
    }

    fn two_atoms() -> BorelMeasure {
        BorelMeasure::new(
            vec![
                Atom { location: 0.5, weight: c64(0.3, 0.0) },
                Atom { location: 0.9, weight: c64(0.2, 0.0) },
            ],
            vec![],
        )
        .unwrap()
    }

    fn random_matrix(seed: u64, n: usize, m: usize) -> SystemTriple {
        let mut r = Rng::new(seed);
        SystemTriple::Matrix(MatrixTriple::new(r.matrix(n, n), r.matrix(n, m), r.matrix(m, n)).unwrap())
    }

    #[test]
    fn zero_signal_maps_to_zero() {
        let t = random_matrix(1, 3, 2);
        let g = TimeGrid::new(1.0, 8).unwrap();
        let u = SampledSignal::zeros(g, 2, 2.0);
        assert_eq!(controllability_map(&t, &g, &u).unwrap(), CVector::zeros(3));
        assert_eq!(io_map(&t, &g, &u).unwrap().values(), &CVector::zeros(16));
        let y = observability_map(&t, &g, &CVector::zeros(3), 2.0).unwrap();
        assert_eq!(y.values(), &CVector::zeros(16));
    }

    #[test]
    fn scalar_controllability_converges_first_order() {
        let t = scalar(-1.0, 1.0, 1.0);
        let exact = 1.0 - (-1.0f64).exp();
        let errs: Vec<f64> = [32usize, 64, 128, 256]
            .iter()
            .map(|&n| {
                let g = TimeGrid::new(1.0, n).unwrap();
                let u = SampledSignal::constant(g, &CVector::from_element(1, ONE), 2.0);
                (controllability_map(&t, &g, &u).unwrap()[0].re - exact).abs()
            })
            .collect();
        assert!(errs[3] < 3e-3);
        for w in errs.windows(2) {
            assert!((1.6..2.4).contains(&(w[0] / w[1])), "{errs:?}");
        }
    }

    #[test]
    fn scalar_observability_is_exponential() {
        let t = scalar(-1.0, 1.0, 1.0);
        let g = TimeGrid::new(1.0, 10).unwrap();
        let y = observability_map(&t, &g, &CVector::from_element(1, ONE), 2.0).unwrap();
        for k in 0..10 {
            assert!((y.sample(k)[0] - c64((-g.time(k)).exp(), 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn scalar_io_converges_first_order() {
        let t = scalar(-1.0, 1.0, 1.0);
        let errs: Vec<f64> = [32usize, 64, 128, 256]
            .iter()
            .map(|&n| {
                let g = TimeGrid::new(1.0, n).unwrap();
                let u = SampledSignal::constant(g, &CVector::from_element(1, ONE), 2.0);
                let y = io_map(&t, &g, &u).unwrap();
                (0..n)
                    .map(|j| (y.sample(j)[0].re - (1.0 - (-g.time(j)).exp())).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        for w in errs.windows(2) {
            assert!((1.6..2.4).contains(&(w[0] / w[1])), "{errs:?}");
        }
    }

    #[test]
    fn transport_control_window() {
        let t = transport(4, BorelMeasure::zero());
        let g = TimeGrid::new(0.5, 2).unwrap();
        let (u0, u1) = (c64(2.0, 1.0), c64(-1.0, 3.0));
        let u = SampledSignal::new(g, 1, 2.0, CVector::from_vec(vec![u0, u1])).unwrap();
        let x = controllability_map(&t, &g, &u).unwrap();
        assert_eq!(x.as_slice(), &[ZERO, ZERO, u0, u1, ZERO]);
    }

    #[test]
    fn transport_control_with_coarse_steps() {
        let t = transport(8, BorelMeasure::zero());
        let g = TimeGrid::new(0.5, 2).unwrap();
        let u = SampledSignal::new(g, 1, 2.0, CVector::from_vec(vec![ONE, c64(2.0, 0.0)])).unwrap();
        let x = controllability_map(&t, &g, &u).unwrap();
        let expect: Vec<f64> = vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 0.0];
        assert_eq!(x.iter().map(|z| z.re).collect::<Vec<_>>(), expect);
        assert!((t.state_norm(&x, 2.0) - u.norm()).abs() < 1e-15);
    }

    #[test]
    fn dirac_at_one_examples() {
        let alpha = c64(0.5, 0.0);
        let t = transport(16, BorelMeasure::dirac(1.0, alpha).unwrap());
        let g = TimeGrid::new(1.0, 16).unwrap();
        let x = random_state(&t, 2.0, &mut Rng::new(3));
        let y = observability_map(&t, &g, &x, 2.0).unwrap();
        assert!(y.values().iter().all(|z| *z == ZERO));
        let u = smooth_trial(&g, 1, 2.0, &mut Rng::new(4));
        let fu = io_map(&t, &g, &u).unwrap();
        assert_eq!(fu.values(), &(u.values() * alpha));
        assert_eq!(io_matrix(&t, &g).unwrap(), CMatrix::identity(16, 16) * alpha);
        let v = feedback_admissible(&t, &g, 2.0).unwrap();
        assert!(v.admissible && (v.margin - 0.5).abs() < 1e-15 && v.contraction);
        let d1 = transport(16, BorelMeasure::dirac(1.0, ONE).unwrap());
        let v = feedback_admissible(&d1, &g, 2.0).unwrap();
        assert!(!v.admissible && v.margin < 1e-15);
    }

    #[test]
    fn transport_observability_rejects_trace() {
        let t = transport(10, two_atoms());
        let g = TimeGrid::new(1.0, 10).unwrap();
        let mut x = CVector::zeros(11);
        x[10] = ONE;
        assert!(matches!(observability_map(&t, &g, &x, 2.0), Err(Error::OutsideDomain { .. })));
    }

    #[test]
    fn io_matrix_examples() {
        let s = |v: f64| CMatrix::from_element(1, 1, c64(v, 0.0));
        let t = SystemTriple::Matrix(MatrixTriple::new(s(-1.0), s(0.0), s(1.0)).unwrap());
        let g = TimeGrid::new(1.0, 3).unwrap();
        assert_eq!(io_matrix(&t, &g).unwrap(), CMatrix::zeros(3, 3));
        let t = random_matrix(5, 3, 2);
        let g = TimeGrid::new(0.7, 9).unwrap();
        let u = smooth_trial(&g, 2, 2.0, &mut Rng::new(6));
        let dense = io_matrix(&t, &g).unwrap();
        let a = io_map(&t, &g, &u).unwrap();
        assert_eq!(&numkit::matvec(&dense, u.values()).unwrap(), a.values());
        let v = feedback_admissible(&t, &g, 2.0).unwrap();
        assert!(v.admissible && v.margin == 1.0);
    }

    #[test]
    fn causality() {
        for t in [random_matrix(7, 3, 2), transport(20, two_atoms())] {
            let m = t.input_dim();
            let g = if m == 1 { TimeGrid::new(1.0, 20).unwrap() } else { TimeGrid::new(1.0, 12).unwrap() };
            let u = smooth_trial(&g, m, 2.0, &mut Rng::new(8));
            let full = io_map(&t, &g, &u).unwrap();
            for k in 1..g.steps() {
                let mut cut = u.values().clone();
                for i in k * m..cut.len() {
                    cut[i] = ZERO;
                }
                let cut = SampledSignal::new(g, m, 2.0, cut).unwrap();
                let part = io_map(&t, &g, &cut).unwrap();
                for j in 0..k * m {
                    assert_eq!(part.values()[j], full.values()[j]);
                }
            }
        }
    }

    #[test]
    fn transport_bounds_hold() {
        let meas = BorelMeasure::new(
            vec![
                Atom { location: 0.25, weight: c64(0.4, -0.2) },
                Atom { location: 0.9, weight: c64(0.3, 0.0) },
                Atom { location: 1.0, weight: c64(-0.2, 0.1) },
            ],
            vec![],
        )
        .unwrap();
        let tail = |t0: f64| meas.tail_variation(t0);
        let total = meas.total_variation();
        let t = transport(40, meas.clone());
        for (t0, steps) in [(1.0, 40), (0.5, 20), (0.2, 8), (0.5, 10)] {
            let g = TimeGrid::new(t0, steps).unwrap();
            let r = estimate_constants(&t, &g, 2.0, 2.0, 2.0, 48, &Rng::new(9)).unwrap();
            assert!(r.m_control <= 1.0 + 1e-12, "{r:?}");
            assert!(r.m_observe <= total + 1e-9, "{r:?}");
            assert!(r.m_io <= tail(t0) + 1e-9, "{r:?}");
            let v = feedback_admissible(&t, &g, 2.0).unwrap();
            assert!(v.norm.upper <= tail(t0) + 1e-9);
            for p in [1.0, f64::INFINITY] {
                let exact = numkit::induced_norm(&io_matrix(&t, &g).unwrap(), p).unwrap();
                assert!(exact <= tail(t0) + 1e-9);
            }
        }
    }

    #[test]
    fn zero_control_gives_zero_constant() {
        let s = |v: f64| CMatrix::from_element(1, 1, c64(v, 0.0));
        let t = SystemTriple::Matrix(MatrixTriple::new(s(-1.0), s(0.0), s(1.0)).unwrap());
        let g = TimeGrid::new(1.0, 16).unwrap();
        let r = estimate_constants(&t, &g, 2.0, 2.0, 2.0, 8, &Rng::new(1)).unwrap();
        assert_eq!(r.m_control, 0.0);
        assert_eq!(r.m_io, 0.0);
        assert!(r.m_observe > 0.0 && r.lower_bounds);
    }

    #[test]
    fn estimates_are_deterministic() {
        let t = random_matrix(11, 4, 2);
        let g = TimeGrid::new(1.0, 32).unwrap();
        let a = estimate_constants(&t, &g, 2.0, 1.5, 3.0, 24, &Rng::new(5)).unwrap();
        let b = estimate_constants(&t, &g, 2.0, 1.5, 3.0, 24, &Rng::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn jensen_monotonicity_in_p() {
        let t = random_matrix(12, 3, 2);
        let g = TimeGrid::new(0.8, 40).unwrap();
        let (r, s) = (1.5, 3.0);
        let lo = estimate_constants(&t, &g, r, r, r, 16, &Rng::new(2)).unwrap();
        let hi = estimate_constants(&t, &g, s, s, s, 16, &Rng::new(2)).unwrap();
        assert!(hi.m_control <= jensen_factor(2, g.t0(), r, s) * lo.m_control * (1.0 + 1e-12));
    }

    #[test]
    fn rescaling_identities() {
        let g = TimeGrid::new(1.0, 16).unwrap();
        let t = random_matrix(13, 3, 2);
        assert_eq!(rescaled_map_identities(&t, &g, 0.0, &Rng::new(1)).unwrap().max(), 0.0);
        assert!(rescaled_map_identities(&t, &g, 1.0, &Rng::new(1)).unwrap().max() <= 1e-9);
        let tr = transport(40, two_atoms());
        let g = TimeGrid::new(1.0, 40).unwrap();
        assert!(rescaled_map_identities(&tr, &g, 2.0, &Rng::new(1)).unwrap().max() <= 1e-9);
        assert!(rescaled_map_identities(&t, &TimeGrid::new(1.0, 4).unwrap(), -1.0, &Rng::new(1)).is_err());
    }

    #[test]
    fn regularity_examples() {
        let times: Vec<f64> = (0..6).map(|k| 0.5f64.powi(k)).collect();
        let s = |v: f64| CMatrix::from_element(1, 1, c64(v, 0.0));
        let zero_b = SystemTriple::Matrix(MatrixTriple::new(s(-1.0), s(0.0), s(1.0)).unwrap());
        let g = TimeGrid::new(1.0, 64).unwrap();
        let v = CVector::from_element(1, ONE);
        let r = regularity_check(&zero_b, &g, &v, &times, 2.0, 2.0).unwrap();
        assert!(r.quantity.iter().all(|&q| q == 0.0) && r.passes);

        let tr = transport(80, two_atoms());
        let g = TimeGrid::new(1.0, 80).unwrap();
        let times = [0.8, 0.4, 0.2, 0.1, 0.05];
        let r = regularity_check(&tr, &g, &v, &times, 2.0, 2.0).unwrap();
        assert!(r.passes, "{r:?}");
        assert_eq!(*r.quantity.last().unwrap(), 0.0);

        let d1 = transport(80, BorelMeasure::dirac(1.0, ONE).unwrap());
        let r = regularity_check(&d1, &g, &v, &times, 1.5, 3.0).unwrap();
        assert!(r.quantity.iter().all(|&q| (q - 1.0).abs() < 1e-14));
        assert!(!r.passes);
        assert!(regularity_check(&d1, &g, &v, &times[..2], 2.0, 2.0).is_err());
    }

    #[test]
    fn trial_signals_vanish_at_zero() {
        let g = TimeGrid::new(1.0, 50).unwrap();
        let mut r = Rng::new(3);
        for _ in 0..10 {
            let u = smooth_trial(&g, 2, 2.0, &mut r);
            assert_eq!(u.sample(0), CVector::zeros(2));
            assert!(u.sample(1).norm() < 0.2);
            assert!(u.norm() > 0.0);
        }
    }

    #[test]
    fn grid_mismatch_rejected() {
        let t = transport(10, BorelMeasure::zero());
        assert!(DiscreteMaps::build(&t, &TimeGrid::new(1.0, 7).unwrap()).is_err());
        let m = random_matrix(1, 2, 1);
        let g = TimeGrid::new(1.0, 4).unwrap();
        let u = SampledSignal::zeros(TimeGrid::new(1.0, 5).unwrap(), 1, 2.0);
        assert!(controllability_map(&m, &g, &u).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn transport_control_is_contractive(seed in 0u64..1000, cells in 1usize..4, steps in 1usize..12) {
            let n = 12 * cells.max(1);
            let t = transport(n, BorelMeasure::zero());
            let steps = steps.min(n / cells);
            let g = TimeGrid::new((steps * cells) as f64 / n as f64, steps).unwrap();
            let u = SampledSignal::new(g, 1, 2.0, Rng::new(seed).vector(steps)).unwrap();
            let x = controllability_map(&t, &g, &u).unwrap();
            for p in [1.0, 2.0, 3.5] {
                let u = SampledSignal::new(g, 1, p, u.values().clone()).unwrap();
                prop_assert!(t.state_norm(&x, p) <= u.norm() * (1.0 + 1e-12));
            }
        }
    }
}
