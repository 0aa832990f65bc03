//! Desch–Schappacher (`C = Id`) and Miyadera–Voigt (`B = Id`) perturbations
//! as verification suites over the general machinery.
//!
//! Every operator here is bounded, so the suites exercise the inequalities and
//! reductions, not unboundedness.

use rayon::prelude::*;

use crate::admissibility::{loglog_slope, smooth_trial, DiscreteMaps, TimeGrid};
use crate::error::{Error, Result};
use crate::numkit::{self, c64, CMatrix, CVector, Rng};
use crate::perturbation::{generation_certificate, weiss_staffans_semigroup, GenerationCertificate, Verdict};
use crate::semigroup::{MatrixTriple, SystemTriple};

pub const BOUNDED_SCOPE: &str =
    "finite-dimensional surrogate: all operators are bounded; the suite checks the inequalities and reductions only";

const ROUNDING: f64 = 1e-10;

/// `M - (s(M) + 1) I` for a random `M`, so the spectral abscissa is `-1`.
pub fn stable_matrix(n: usize, rng: &mut Rng) -> Result<CMatrix> {
    let m = rng.matrix(n, n);
    let s = numkit::spectral_abscissa_of(&m)?;
    Ok(m - CMatrix::identity(n, n) * c64(s + 1.0, 0.0))
}

/// Random matrix rescaled to spectral norm `target`.
pub fn matrix_with_norm(rows: usize, cols: usize, target: f64, rng: &mut Rng) -> CMatrix {
    let m = rng.matrix(rows, cols);
    let n = numkit::two_norm(&m);
    m * c64(target / n, 0.0)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirstOrder {
    pub steps: Vec<usize>,
    /// `‖S(t0)x - expm(t0(A + BC))x‖ / ‖x‖` per grid.
    pub errors: Vec<f64>,
    pub ratios: Vec<f64>,
    pub first_order: bool,
}

/// Perturbed semigroup against the matrix exponential on `steps · 2^k` grids.
pub fn semigroup_agreement(triple: &MatrixTriple, t0: f64, steps: usize, refinements: usize, x: &CVector) -> Result<FirstOrder> {
    let exact = numkit::matvec(&numkit::expm(&(&triple.a + &triple.b * &triple.c), t0)?, x)?;
    let st = SystemTriple::Matrix(triple.clone());
    let counts: Vec<usize> = (0..=refinements).map(|k| steps << k).collect();
    let errors = counts
        .iter()
        .map(|&s| {
            let g = TimeGrid::new(t0, s)?;
            Ok((weiss_staffans_semigroup(&st, &g, t0, x)? - &exact).norm() / x.norm())
        })
        .collect::<Result<Vec<f64>>>()?;
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let first_order = ratios.iter().all(|r| (1.6..=2.4).contains(r));
    Ok(FirstOrder {
        steps: counts,
        errors,
        ratios,
        first_order,
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuityCheck {
    pub r0: f64,
    pub r1: f64,
    /// `‖v(r0) - v(r1)‖`.
    pub lhs: f64,
    /// `‖B_t0‖ · ‖u_{r0} - u_{r1}‖_p`.
    pub rhs: f64,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DsVariant {
    pub certificate: GenerationCertificate,
    pub agreement: FirstOrder,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DsReport {
    pub scope: String,
    pub p: f64,
    pub beta: f64,
    /// Discrete `‖B_t0‖_{L^p → X}`.
    pub control_norm: f64,
    pub continuity: Vec<ContinuityCheck>,
    /// Log-log slope of the largest `‖v(r0) - v(r1)‖` against the gap.
    pub continuity_slope: Option<f64>,
    /// `max_r ‖v(r)‖ / (‖B_t0‖ ‖u‖_p)` over all trials.
    pub sup_ratio: f64,
    pub direct: DsVariant,
    /// The triple `(A, BF, Id)` for a random `F` with `‖F‖_2 ≤ 2`.
    pub bf: DsVariant,
    pub passes: bool,
}

/// `v(r_k) = Σ_{i<k} h T(r_k - t_i) B u_i`, from freshly computed propagators.
fn convolution_path(a: &CMatrix, b: &CMatrix, grid: &TimeGrid, u: &CVector) -> Result<Vec<CVector>> {
    let steps = grid.steps();
    let h = grid.h();
    let m = b.ncols();
    let props: Vec<CMatrix> = (0..=steps)
        .into_par_iter()
        .map(|k| numkit::expm(a, k as f64 * h))
        .collect::<Result<_>>()?;
    let bu: Vec<CVector> = (0..steps).map(|i| b * u.rows(i * m, m) * c64(h, 0.0)).collect();
    Ok((0..=steps)
        .map(|k| (0..k).fold(CVector::zeros(a.nrows()), |acc, i| acc + &props[k - i] * &bu[i]))
        .collect())
}

/// Samples of the right translate `u_{r_k}`: `u_{r_k}(t_j) = u(t_j - (t0 - r_k))`.
fn translate(u: &CVector, m: usize, steps: usize, k: usize) -> CVector {
    let lag = steps - k;
    let mut out = CVector::zeros(u.len());
    for j in lag..steps {
        out.rows_mut(j * m, m).copy_from(&u.rows((j - lag) * m, m));
    }
    out
}

fn ds_variant(triple: &MatrixTriple, grid: &TimeGrid, p: f64, beta: f64, rng: &Rng) -> Result<DsVariant> {
    let st = SystemTriple::Matrix(triple.clone());
    let certificate = generation_certificate(&st, grid, p, p, beta, rng)?;
    let x = rng.fork(7).vector(triple.state_dim());
    let agreement = semigroup_agreement(triple, grid.t0(), grid.steps(), 2, &x)?;
    let passes = certificate.verdict == Verdict::Generated && (agreement.first_order || agreement.errors[0] < ROUNDING);
    Ok(DsVariant {
        certificate,
        agreement,
        passes,
    })
}

/// Desch–Schappacher suite for `(A, B, Id)`; certificate exponents `α = p < β = 2p`.
pub fn ds_suite(triple: &MatrixTriple, grid: &TimeGrid, p: f64, rng: &Rng) -> Result<DsReport> {
    let n = triple.state_dim();
    if triple.c != CMatrix::identity(n, n) {
        return Err(Error::InvalidArgument {
            op: "ds_suite",
            reason: "observation must be the identity".into(),
        });
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::UnsupportedExponent { p });
    }
    let st = SystemTriple::Matrix(triple.clone());
    let maps = DiscreteMaps::build(&st, grid)?;
    let h = grid.h();
    let steps = grid.steps();
    let m = triple.input_dim();
    let control_norm = numkit::norm_bounds(&maps.control, p, h, 1.0, &mut rng.fork(1))?.upper;

    let trials: Vec<(Vec<ContinuityCheck>, f64)> = (0..8u64)
        .into_par_iter()
        .map(|trial| {
            let mut r = rng.fork(100 + trial);
            let u = smooth_trial(grid, m, p, &mut r);
            let path = convolution_path(&triple.a, &triple.b, grid, u.values())?;
            let unorm = u.norm();
            let sup = path.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let sup_ratio = if unorm > 0.0 && control_norm > 0.0 { sup / (control_norm * unorm) } else { 0.0 };
            let mut checks = Vec::new();
            let mut gap = steps / 2;
            while gap >= 1 {
                let k0 = r.index(steps - gap + 1);
                let k1 = k0 + gap;
                let du = translate(u.values(), m, steps, k0) - translate(u.values(), m, steps, k1);
                let lhs = (&path[k0] - &path[k1]).norm();
                let rhs = control_norm * numkit::weighted_norm(du.as_slice(), p, h);
                checks.push(ContinuityCheck {
                    r0: grid.time(k0),
                    r1: grid.time(k1),
                    lhs,
                    rhs,
                    passes: lhs <= rhs * (1.0 + ROUNDING) + 1e-14,
                });
                gap /= 2;
            }
            Ok((checks, sup_ratio))
        })
        .collect::<Result<_>>()?;
    let sup_ratio = trials.iter().map(|t| t.1).fold(0.0, f64::max);
    let continuity: Vec<ContinuityCheck> = trials.into_iter().flat_map(|t| t.0).collect();
    let (gaps, worst) = continuity_profile(&continuity);
    let continuity_slope = loglog_slope(&gaps, &worst);

    let beta = 2.0 * p;
    let direct = ds_variant(triple, grid, p, beta, &rng.fork(2))?;
    let f = matrix_with_norm(m, m, 2.0 * (0.5 + 0.5 * rng.fork(3).unit()), &mut rng.fork(4));
    let bf_triple = MatrixTriple::new(triple.a.clone(), &triple.b * f, triple.c.clone())?;
    let bf = ds_variant(&bf_triple, grid, p, beta, &rng.fork(5))?;

    let passes = continuity.iter().all(|c| c.passes) && sup_ratio <= 1.0 + ROUNDING && direct.passes && bf.passes;
    Ok(DsReport {
        scope: BOUNDED_SCOPE.into(),
        p,
        beta,
        control_norm,
        continuity,
        continuity_slope,
        sup_ratio,
        direct,
        bf,
        passes,
    })
}

/// Largest `lhs` per distinct gap, gaps ascending.
fn continuity_profile(checks: &[ContinuityCheck]) -> (Vec<f64>, Vec<f64>) {
    let mut by_gap: Vec<(f64, f64)> = Vec::new();
    for c in checks {
        let gap = c.r1 - c.r0;
        match by_gap.iter_mut().find(|(g, _)| (g - gap).abs() < 1e-12) {
            Some(entry) => entry.1 = entry.1.max(c.lhs),
            None => by_gap.push((gap, c.lhs)),
        }
    }
    by_gap.sort_by(|a, b| a.0.total_cmp(&b.0));
    by_gap.into_iter().unzip()
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndicatorCheck {
    pub gamma: f64,
    pub delta: f64,
    pub m_used: f64,
    /// `∫_0^t0 ‖C ∫_0^r T(r-s) u(s) ds‖^p dr` per grid, coarse to fine.
    pub lhs: Vec<f64>,
    /// `M(1 + 1/p)(δ - γ)^p ‖x‖^p`.
    pub rhs: f64,
    /// `|lhs - lhs on the finest grid|` for all but the finest grid.
    pub slack: Vec<f64>,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepCheck {
    pub pieces: usize,
    /// `‖F u‖_p`.
    pub lhs: f64,
    /// `K ‖u‖_1`, `K = (M(1 + 1/p))^{1/p}`.
    pub rhs: f64,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MvVariant {
    pub certificate: GenerationCertificate,
    pub agreement: FirstOrder,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MvReport {
    pub scope: String,
    pub p: f64,
    /// `max ∫_0^t0 ‖C T(s) x‖^p ds` over random unit states.
    pub m_trial: f64,
    pub indicators: Vec<IndicatorCheck>,
    pub steps_checks: Vec<StepCheck>,
    pub direct: MvVariant,
    /// The triple `(A, Id, FC)` for a random `F` with `‖F‖_2 ≤ 2`.
    pub fc: MvVariant,
    pub passes: bool,
}

pub const MV_INDICATOR_TRIALS: usize = 20;
const MV_STEP_TRIALS: usize = 8;
const MV_REFINEMENTS: usize = 3;

/// `∫_0^t0 ‖C T(s) x‖^p ds` on the grid.
fn observation_energy(maps: &DiscreteMaps, x: &CVector, p: f64) -> Result<f64> {
    let y = numkit::matvec(&maps.observe, x)?;
    Ok(numkit::weighted_norm(y.as_slice(), p, maps.grid.h()).powf(p))
}

/// `Σ_i 1_{[γ_i, δ_i]} ⊗ x_i` sampled on `grid`; intervals in units of `1/base` of `t0`.
fn step_signal(grid: &TimeGrid, base: usize, pieces: &[(usize, usize, CVector)]) -> CVector {
    let m = pieces[0].2.len();
    let per = grid.steps() / base;
    let mut u = CVector::zeros(grid.steps() * m);
    for (g, d, x) in pieces {
        for k in g * per..d * per {
            u.rows_mut(k * m, m).copy_from(x);
        }
    }
    u
}

fn mv_variant(triple: &MatrixTriple, grid: &TimeGrid, p: f64, rng: &Rng) -> Result<MvVariant> {
    let st = SystemTriple::Matrix(triple.clone());
    let certificate = generation_certificate(&st, grid, p, 1.0, p, rng)?;
    let x = rng.fork(7).vector(triple.state_dim());
    let agreement = semigroup_agreement(triple, grid.t0(), grid.steps(), 2, &x)?;
    let passes = certificate.verdict == Verdict::Generated && (agreement.first_order || agreement.errors[0] < ROUNDING);
    Ok(MvVariant {
        certificate,
        agreement,
        passes,
    })
}

/// Miyadera–Voigt suite for `(A, Id, C)`, `p > 1`; certificate exponents `α = 1, β = p`.
pub fn mv_suite(triple: &MatrixTriple, grid: &TimeGrid, p: f64, rng: &Rng) -> Result<MvReport> {
    let n = triple.state_dim();
    if triple.b != CMatrix::identity(n, n) {
        return Err(Error::InvalidArgument {
            op: "mv_suite",
            reason: "control must be the identity".into(),
        });
    }
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidArgument {
            op: "mv_suite",
            reason: format!("need 1 < p < infinity, got {p}"),
        });
    }
    let st = SystemTriple::Matrix(triple.clone());
    let grids: Vec<TimeGrid> = (0..=MV_REFINEMENTS)
        .map(|k| TimeGrid::new(grid.t0(), grid.steps() << k))
        .collect::<Result<_>>()?;
    let maps: Vec<DiscreteMaps> = grids.iter().map(|g| DiscreteMaps::build(&st, g)).collect::<Result<_>>()?;
    let coarse = &maps[0];
    let base = grid.steps();

    let m_trial = (0..32u64)
        .map(|k| {
            let x = rng.fork(200 + k).vector(n);
            let x = &x / c64(x.norm(), 0.0);
            observation_energy(coarse, &x, p)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let lhs_on = |pieces: &[(usize, usize, CVector)]| -> Result<Vec<f64>> {
        maps.iter()
            .map(|mp| {
                let u = step_signal(&mp.grid, base, pieces);
                let y = mp.io.apply(&u)?;
                Ok(numkit::weighted_norm(y.as_slice(), p, mp.grid.h()))
            })
            .collect()
    };

    let indicators: Vec<IndicatorCheck> = (0..MV_INDICATOR_TRIALS as u64)
        .into_par_iter()
        .map(|trial| {
            let mut r = rng.fork(300 + trial);
            let g = r.index(base);
            let d = g + 1 + r.index(base - g);
            let x = r.vector(n);
            let nx = x.norm();
            let m_x = observation_energy(coarse, &(&x / c64(nx, 0.0)), p)?;
            let m_used = m_trial.max(m_x);
            let (gamma, delta) = (grid.time(g), grid.time(d));
            let lhs: Vec<f64> = lhs_on(&[(g, d, x)])?.into_iter().map(|v| v.powf(p)).collect();
            let rhs = m_used * (1.0 + 1.0 / p) * (delta - gamma).powf(p) * nx.powf(p);
            let fine = lhs[lhs.len() - 1];
            let slack: Vec<f64> = lhs[..lhs.len() - 1].iter().map(|v| (v - fine).abs()).collect();
            let holds = lhs.iter().zip(slack.iter().chain([&0.0])).all(|(l, s)| *l <= rhs + s + ROUNDING * rhs);
            let shrinking = slack.windows(2).all(|w| w[1] <= w[0] + ROUNDING * rhs);
            Ok(IndicatorCheck {
                gamma,
                delta,
                m_used,
                lhs,
                rhs,
                slack,
                passes: holds && shrinking,
            })
        })
        .collect::<Result<_>>()?;

    let steps_checks: Vec<StepCheck> = (0..MV_STEP_TRIALS as u64)
        .into_par_iter()
        .map(|trial| {
            let mut r = rng.fork(400 + trial);
            let pieces_n = 1 + r.index(4.min(base));
            // disjoint supports: increasing cut points
            let mut cuts: Vec<usize> = (0..2 * pieces_n).map(|_| r.index(base + 1)).collect();
            cuts.sort_unstable();
            let pieces: Vec<(usize, usize, CVector)> = cuts
                .chunks(2)
                .filter(|c| c[1] > c[0])
                .map(|c| (c[0], c[1], r.vector(n)))
                .collect();
            if pieces.is_empty() {
                return Ok(StepCheck { pieces: 0, lhs: 0.0, rhs: 0.0, passes: true });
            }
            let m_used = pieces
                .iter()
                .map(|(_, _, x)| observation_energy(coarse, &(x / c64(x.norm(), 0.0)), p))
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(m_trial, f64::max);
            let k = (m_used * (1.0 + 1.0 / p)).powf(1.0 / p);
            let l1: f64 = pieces.iter().map(|(g, d, x)| grid.time(*d - *g) * x.norm()).sum();
            let lhs_all = lhs_on(&pieces)?;
            let fine = lhs_all[lhs_all.len() - 1];
            let slack = (lhs_all[0] - fine).abs();
            let rhs = k * l1;
            Ok(StepCheck {
                pieces: pieces.len(),
                lhs: lhs_all[0],
                rhs,
                passes: lhs_all[0] <= rhs + slack + ROUNDING * rhs,
            })
        })
        .collect::<Result<_>>()?;

    let direct = mv_variant(triple, grid, p, &rng.fork(2))?;
    let f = matrix_with_norm(triple.c.nrows(), triple.c.nrows(), 2.0 * (0.5 + 0.5 * rng.fork(3).unit()), &mut rng.fork(4));
    let fc_triple = MatrixTriple::new(triple.a.clone(), triple.b.clone(), f * &triple.c)?;
    let fc = mv_variant(&fc_triple, grid, p, &rng.fork(5))?;

    let passes = indicators.iter().all(|c| c.passes) && steps_checks.iter().all(|c| c.passes) && direct.passes && fc.passes;
    Ok(MvReport {
        scope: BOUNDED_SCOPE.into(),
        p,
        m_trial,
        indicators,
        steps_checks,
        direct,
        fc,
        passes,
    })
}
