//! Boundary-perturbed transport on `[0,1]`: the measure-valued functional
//! `Φf = ∫ f dμ`, Dirichlet operators, the little-mass test, the method of
//! steps, the upwind generator and the characteristic equation
//! `1 = ∫ e^{λ(r-1)} dμ(r)`.

use std::io::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numkit::{c64, CMatrix, CVector, ONE, ZERO};
use crate::semigroup::{grid_steps, transport_resolvent, GridFunction};

/// Atom weights closer than this to 1 at `r = 1` make the boundary condition degenerate.
pub const DEGENERATE_MARGIN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub location: f64,
    pub weight: Complex64,
}

/// Regular complex Borel measure on `[0,1]`: finitely many atoms plus a
/// density that is constant on each of `K` equal cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BorelMeasure {
    atoms: Vec<Atom>,
    density: Vec<Complex64>,
}

impl BorelMeasure {
    pub fn new(atoms: Vec<Atom>, density: Vec<Complex64>) -> Result<Self> {
        for a in &atoms {
            if !(0.0..=1.0).contains(&a.location) || !a.weight.re.is_finite() || !a.weight.im.is_finite() {
                return Err(Error::InvalidArgument {
                    op: "BorelMeasure::new",
                    reason: format!("atom ({}, {}) outside [0,1] or non-finite", a.location, a.weight),
                });
            }
        }
        let mut locs: Vec<f64> = atoms.iter().map(|a| a.location).collect();
        locs.sort_by(f64::total_cmp);
        if locs.windows(2).any(|w| w[1] - w[0] < 1e-12) {
            return Err(Error::InvalidArgument {
                op: "BorelMeasure::new",
                reason: "atom locations must be distinct".into(),
            });
        }
        if density.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite { what: "density" });
        }
        Ok(Self { atoms, density })
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn dirac(location: f64, weight: Complex64) -> Result<Self> {
        Self::new(vec![Atom { location, weight }], Vec::new())
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn density(&self) -> &[Complex64] {
        &self.density
    }

    fn cell_width(&self) -> f64 {
        1.0 / self.density.len() as f64
    }

    /// `‖μ‖ = Σ|w_k| + ∫|ρ|`.
    pub fn total_variation(&self) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|a| a.weight.norm()).sum();
        let dens: f64 = self.density.iter().map(|z| z.norm()).sum::<f64>() * self.cell_width_or_zero();
        atoms + dens
    }

    fn cell_width_or_zero(&self) -> f64 {
        if self.density.is_empty() {
            0.0
        } else {
            self.cell_width()
        }
    }

    /// `|μ|[1-δ, 1]`.
    pub fn tail_variation(&self, delta: f64) -> f64 {
        let lo = 1.0 - delta;
        let atoms: f64 = self
            .atoms
            .iter()
            .filter(|a| a.location >= lo - 1e-12)
            .map(|a| a.weight.norm())
            .sum();
        let w = self.cell_width_or_zero();
        let dens: f64 = self
            .density
            .iter()
            .enumerate()
            .map(|(c, z)| {
                let (a, b) = (c as f64 * w, (c + 1) as f64 * w);
                z.norm() * (b - a.max(lo)).max(0.0)
            })
            .sum();
        atoms + dens
    }

    /// Weight of the atom at `r = 1` (zero if none).
    pub fn atom_at_one(&self) -> Complex64 {
        self.atoms
            .iter()
            .filter(|a| (a.location - 1.0).abs() < 1e-12)
            .map(|a| a.weight)
            .fold(ZERO, |s, w| s + w)
    }

    /// Quadrature weights `φ ∈ ℂ^{N+1}` with `Φf ≈ Σ_k φ_k f(k/N)`: atoms exact
    /// on grid nodes, each density cell split evenly over its two endpoints.
    pub fn weights(&self, n: usize) -> Result<Vec<Complex64>> {
        let mut phi = vec![ZERO; n + 1];
        for a in &self.atoms {
            let k = a.location * n as f64;
            let r = k.round();
            if (k - r).abs() > 1e-9 * n as f64 {
                return Err(Error::AtomOffGrid { r: a.location, n });
            }
            phi[r as usize] += a.weight;
        }
        if !self.density.is_empty() {
            let cells = self.density.len();
            if n % cells != 0 {
                return Err(Error::InvalidArgument {
                    op: "BorelMeasure::weights",
                    reason: format!("grid size {n} is not a multiple of the {cells} density cells"),
                });
            }
            let per = n / cells;
            let half = 0.5 / n as f64;
            for k in 0..n {
                let rho = self.density[k / per];
                phi[k] += rho * half;
                phi[k + 1] += rho * half;
            }
        }
        Ok(phi)
    }

    /// Closed-form `H(λ) = ∫ e^{λ(r-1)} dμ(r)`.
    pub fn transfer(&self, lambda: Complex64) -> Complex64 {
        let mut h = self
            .atoms
            .iter()
            .fold(ZERO, |s, a| s + a.weight * (lambda * (a.location - 1.0)).exp());
        if !self.density.is_empty() {
            let w = self.cell_width();
            for (c, rho) in self.density.iter().enumerate() {
                let a = c as f64 * w;
                h += rho * w * (lambda * (a - 1.0)).exp() * exprel(lambda * w);
            }
        }
        h
    }

    /// `H'(λ) = ∫ (r-1) e^{λ(r-1)} dμ(r)`; density cells by 8-point Gauss–Legendre.
    pub fn transfer_derivative(&self, lambda: Complex64) -> Complex64 {
        let mut d = self.atoms.iter().fold(ZERO, |s, a| {
            s + a.weight * (a.location - 1.0) * (lambda * (a.location - 1.0)).exp()
        });
        if !self.density.is_empty() {
            let w = self.cell_width();
            for (c, rho) in self.density.iter().enumerate() {
                let mid = (c as f64 + 0.5) * w;
                let cell: Complex64 = GAUSS8
                    .iter()
                    .map(|&(x, wt)| {
                        let r = mid + 0.5 * w * x;
                        (r - 1.0) * (lambda * (r - 1.0)).exp() * wt
                    })
                    .sum();
                d += rho * cell * (0.5 * w);
            }
        }
        d
    }
}

/// `(e^z - 1)/z`, with the series near zero.
fn exprel(z: Complex64) -> Complex64 {
    if z.norm() < 1e-4 {
        ONE + z / 2.0 + z * z / 6.0 + z * z * z / 24.0
    } else {
        (z.exp() - ONE) / z
    }
}

const GAUSS8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

/// `Φf` for a sampled function.
pub fn apply_phi(measure: &BorelMeasure, f: &GridFunction) -> Result<Complex64> {
    let phi = measure.weights(f.n())?;
    Ok(phi.iter().zip(f.values().iter()).fold(ZERO, |s, (w, v)| s + w * v))
}

/// `D_λα = α e^{λ(s-1)}`, the unique `f ∈ ker(λ - d/ds)` with `f(1) = α`.
pub fn dirichlet_operator(lambda: Complex64, alpha: Complex64, n: usize) -> GridFunction {
    if lambda == ZERO {
        return GridFunction::from_fn(n, 2.0, |_| alpha);
    }
    GridFunction::from_fn(n, 2.0, |s| alpha * (lambda * (s - 1.0)).exp())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LittleMassReport {
    pub delta_grid: Vec<f64>,
    pub mass: Vec<f64>,
    pub q_found: f64,
    pub passes: bool,
}

pub fn little_mass(measure: &BorelMeasure, delta_grid: &[f64]) -> Result<LittleMassReport> {
    if delta_grid.is_empty() {
        return Err(Error::TooFewSamples {
            op: "little_mass",
            needed: 1,
            got: 0,
        });
    }
    if let Some(d) = delta_grid.iter().find(|d| !(**d > 0.0 && **d <= 1.0)) {
        return Err(Error::InvalidArgument {
            op: "little_mass",
            reason: format!("delta = {d} outside (0, 1]"),
        });
    }
    let mut deltas = delta_grid.to_vec();
    deltas.sort_by(|a, b| b.total_cmp(a));
    let mass: Vec<f64> = deltas.iter().map(|&d| measure.tail_variation(d)).collect();
    let q_found = mass.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(LittleMassReport {
        delta_grid: deltas,
        mass,
        q_found,
        passes: q_found < 1.0,
    })
}

/// Time levels `t_j = j/N` and the states `x(·, t_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<CVector>,
}

impl Trajectory {
    pub fn last(&self) -> &CVector {
        self.states.last().expect("trajectory has at least one level")
    }

    /// CSV with header `t,s,re,im`, one row per (level, sample).
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,s,re,im")?;
        for (t, x) in self.times.iter().zip(&self.states) {
            let n = x.len() - 1;
            for (k, v) in x.iter().enumerate() {
                writeln!(out, "{t},{},{},{}", k as f64 / n as f64, v.re, v.im)?;
            }
        }
        Ok(())
    }
}

fn boundary_divisor(phi: &[Complex64]) -> Result<Complex64> {
    let w1 = phi[phi.len() - 1];
    let d = ONE - w1;
    if d.norm() < DEGENERATE_MARGIN {
        return Err(Error::DegenerateBoundary { weight: format!("{w1}") });
    }
    Ok(d)
}

fn inflow(phi: &[Complex64], x: &CVector, divisor: Complex64) -> Complex64 {
    let n = phi.len() - 1;
    (0..n).fold(ZERO, |s, k| s + phi[k] * x[k]) / divisor
}

/// Method of steps with time step `1/N`: shift left one sample, then solve the
/// boundary relation `b = Φx` for the inflow value, including the atom at 1.
pub fn solve_pde(measure: &BorelMeasure, x0: &GridFunction, horizon: f64) -> Result<Trajectory> {
    let n = x0.n();
    let levels = grid_steps(horizon, n)?;
    let phi = measure.weights(n)?;
    let divisor = boundary_divisor(&phi)?;
    let mut x = x0.values().clone();
    x[n] = inflow(&phi, &x, divisor);
    let mut times = Vec::with_capacity(levels + 1);
    let mut states = Vec::with_capacity(levels + 1);
    times.push(0.0);
    states.push(x.clone());
    for j in 1..=levels {
        let mut next = CVector::zeros(n + 1);
        for k in 0..n {
            next[k] = x[k + 1];
        }
        next[n] = inflow(&phi, &next, divisor);
        x = next;
        times.push(j as f64 / n as f64);
        states.push(x.clone());
    }
    Ok(Trajectory { times, states })
}

/// Eliminated boundary row `ψ_k = φ_k / (1 - φ_N)`, `k < N`.
fn eliminated_row(measure: &BorelMeasure, n: usize) -> Result<Vec<Complex64>> {
    let phi = measure.weights(n)?;
    let d = boundary_divisor(&phi)?;
    Ok(phi[..n].iter().map(|w| w / d).collect())
}

/// `N × N` upwind discretization of `A^Φ` on samples `0..N-1`: rows
/// `N(f_{k+1} - f_k)` with `f_N = Σ ψ_k f_k` eliminated.
pub fn upwind_generator(measure: &BorelMeasure, n: usize) -> Result<CMatrix> {
    let psi = eliminated_row(measure, n)?;
    let nf = c64(n as f64, 0.0);
    let mut a = CMatrix::zeros(n, n);
    for k in 0..n {
        a[(k, k)] = -nf;
        if k + 1 < n {
            a[(k, k + 1)] = nf;
        }
    }
    for k in 0..n {
        a[(n - 1, k)] += nf * psi[k];
    }
    Ok(a)
}

/// Fill sample `N` of a state on samples `0..N-1` from the boundary relation.
pub fn extend_by_boundary(measure: &BorelMeasure, interior: &CVector) -> Result<CVector> {
    let n = interior.len();
    let psi = eliminated_row(measure, n)?;
    let mut x = CVector::zeros(n + 1);
    x.rows_mut(0, n).copy_from(interior);
    x[n] = psi.iter().zip(interior.iter()).fold(ZERO, |s, (w, v)| s + w * v);
    Ok(x)
}

/// Eigenvalue of `upwind_generator(measure, N)` nearest to `shift`, by inverse
/// iteration. Each solve is `O(N)`: the matrix minus `shift` is upper
/// bidiagonal plus the rank-one boundary row (Sherman–Morrison).
pub fn upwind_eigenvalue_near(measure: &BorelMeasure, n: usize, shift: Complex64) -> Result<Complex64> {
    let psi = eliminated_row(measure, n)?;
    let nf = n as f64;
    let diag = c64(-nf, 0.0) - shift;
    let back = |r: &[Complex64]| -> Vec<Complex64> {
        let mut z = vec![ZERO; n];
        z[n - 1] = r[n - 1] / diag;
        for k in (0..n - 1).rev() {
            z[k] = (r[k] - nf * z[k + 1]) / diag;
        }
        z
    };
    let mut e = vec![ZERO; n];
    e[n - 1] = c64(nf, 0.0);
    let ue = back(&e);
    let dot = |z: &[Complex64]| psi.iter().zip(z).fold(ZERO, |s, (a, b)| s + a * b);
    let denom = ONE + dot(&ue);
    if denom.norm() < 1e-300 {
        return Ok(shift);
    }
    let solve = |r: &[Complex64]| -> Vec<Complex64> {
        let z = back(r);
        let coef = dot(&z) / denom;
        z.iter().zip(&ue).map(|(a, b)| a - b * coef).collect()
    };
    let mut z: Vec<Complex64> = (0..n).map(|k| c64(1.0, 0.1 * k as f64 / nf)).collect();
    let mut estimate = shift;
    for _ in 0..200 {
        let w = solve(&z);
        let (wz, zz) = w
            .iter()
            .zip(&z)
            .fold((ZERO, 0.0), |(a, b), (wi, zi)| (a + zi.conj() * wi, b + zi.norm_sqr()));
        let nu = wz / zz;
        if nu.norm() == 0.0 || !nu.re.is_finite() {
            return Err(Error::NoConvergence { iterations: 0 });
        }
        let next = shift + ONE / nu;
        let scale = w.iter().map(|c| c.norm()).fold(0.0, f64::max);
        z = w.iter().map(|c| c / scale).collect();
        if (next - estimate).norm() <= 1e-13 * (1.0 + next.norm()) {
            return Ok(next);
        }
        estimate = next;
    }
    Err(Error::NoConvergence { iterations: 200 })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchBox {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

/// Roots of `1 - H(λ)` in the box: Newton from a lattice of starts with
/// spacing 1/2, deduplicated and sorted by imaginary then real part.
pub fn characteristic_roots(measure: &BorelMeasure, search: SearchBox, tol: f64) -> Vec<Complex64> {
    let spacing = 0.5;
    let nr = ((search.re_max - search.re_min) / spacing).ceil() as usize + 1;
    let ni = ((search.im_max - search.im_min) / spacing).ceil() as usize + 1;
    let inside = |z: Complex64| {
        z.re >= search.re_min - 1e-9
            && z.re <= search.re_max + 1e-9
            && z.im >= search.im_min - 1e-9
            && z.im <= search.im_max + 1e-9
    };
    let mut roots: Vec<Complex64> = Vec::new();
    for i in 0..nr {
        for j in 0..ni {
            let mut z = c64(
                (search.re_min + i as f64 * spacing).min(search.re_max),
                (search.im_min + j as f64 * spacing).min(search.im_max),
            );
            let mut ok = false;
            for _ in 0..60 {
                let g = ONE - measure.transfer(z);
                let dg = -measure.transfer_derivative(z);
                if dg.norm() < 1e-300 || !g.re.is_finite() {
                    break;
                }
                let step = g / dg;
                z -= step;
                if !(z.re.is_finite() && z.im.is_finite()) || z.norm() > 1e6 {
                    break;
                }
                if step.norm() <= 1e-15 * (1.0 + z.norm()) {
                    ok = true;
                    break;
                }
            }
            if !ok {
                let g = ONE - measure.transfer(z);
                ok = g.norm() <= tol;
            }
            if ok && inside(z) && (ONE - measure.transfer(z)).norm() <= tol && !roots.iter().any(|r| (r - z).norm() < 1e-7) {
                roots.push(z);
            }
        }
    }
    roots.sort_by(|a, b| a.im.total_cmp(&b.im).then(a.re.total_cmp(&b.re)));
    roots
}

/// Sup-norm gap between `(Id - λR(λ,A))D₀α` and `D_λα` on the grid, with
/// `α = 1`. Independent of `Φ`: it concerns only the pair `(A, B)`.
pub fn greiner_compatibility(lambda: Complex64, n: usize) -> f64 {
    let d0 = dirichlet_operator(ZERO, ONE, n).into_values();
    let rd0 = transport_resolvent(lambda, &d0);
    let lhs = &d0 - rd0 * lambda;
    let rhs = dirichlet_operator(lambda, ONE, n).into_values();
    (lhs - rhs).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{self, Rng};
    use std::f64::consts::{E, PI};

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

    fn smooth(n: usize) -> GridFunction {
        GridFunction::from_fn(n, 2.0, |s| {
            if s > 0.55 && s < 0.85 {
                let u = (s - 0.55) / 0.3;
                c64((-1.0 / (u * (1.0 - u))).exp() * 50.0, 0.0)
            } else {
                ZERO
            }
        })
    }

    #[test]
    fn measure_validation() {
        assert!(BorelMeasure::dirac(1.2, ONE).is_err());
        let dup = vec![Atom { location: 0.5, weight: ONE }, Atom { location: 0.5, weight: ONE }];
        assert!(BorelMeasure::new(dup, vec![]).is_err());
        assert!(matches!(
            BorelMeasure::dirac(0.3, ONE).unwrap().weights(8),
            Err(Error::AtomOffGrid { .. })
        ));
        let dens = BorelMeasure::new(vec![], vec![ONE; 3]).unwrap();
        assert!(dens.weights(8).is_err());
        assert_eq!(dens.weights(9).unwrap().len(), 10);
    }

    #[test]
    fn variations() {
        let m = BorelMeasure::new(
            vec![Atom { location: 1.0, weight: c64(0.0, -0.5) }],
            vec![c64(2.0, 0.0), c64(-4.0, 0.0)],
        )
        .unwrap();
        assert!((m.total_variation() - 3.5).abs() < 1e-15);
        assert!((m.tail_variation(0.25) - 1.5).abs() < 1e-15);
        assert!((m.tail_variation(1.0) - 3.5).abs() < 1e-15);
        assert_eq!(m.atom_at_one(), c64(0.0, -0.5));
    }

    #[test]
    fn apply_phi_examples() {
        let f = GridFunction::from_fn(16, 2.0, |s| c64(s, 1.0 - s));
        assert_eq!(apply_phi(&BorelMeasure::zero(), &f).unwrap(), ZERO);
        let alpha = c64(0.7, 0.2);
        assert_eq!(apply_phi(&BorelMeasure::dirac(1.0, alpha).unwrap(), &f).unwrap(), alpha * f.at(16));
        let unit = BorelMeasure::new(vec![], vec![ONE]).unwrap();
        let one = GridFunction::from_fn(64, 2.0, |_| ONE);
        assert!((apply_phi(&unit, &one).unwrap() - ONE).norm() < 1e-12);
    }

    #[test]
    fn phi_weights_integrate_linear_functions_exactly() {
        let m = BorelMeasure::new(vec![], vec![c64(1.0, 0.0), c64(3.0, -1.0)]).unwrap();
        let f = GridFunction::from_fn(32, 2.0, |s| c64(2.0 * s - 0.5, 0.0));
        // ∫_0^{1/2} (2s - 1/2) ds = 0, ∫_{1/2}^1 (2s - 1/2) ds = 1/2.
        let exact = c64(3.0, -1.0) * 0.5;
        assert!((apply_phi(&m, &f).unwrap() - exact).norm() < 1e-14);
    }

    #[test]
    fn dirichlet_examples() {
        let d0 = dirichlet_operator(ZERO, ONE, 32);
        assert!(d0.values().iter().all(|&z| z == ONE));
        let zero = dirichlet_operator(c64(1.0, 2.0), ZERO, 32);
        assert!(zero.values().iter().all(|&z| z == ZERO));
        for n in [64usize, 128, 256] {
            let d = dirichlet_operator(ONE, ONE, n);
            assert!((d.at(n) - ONE).norm() < 1e-15);
            let worst = (0..n)
                .map(|k| (d.at(k) - (d.at(k + 1) - d.at(k)) * n as f64).norm())
                .fold(0.0, f64::max);
            assert!(worst < 1.0 / n as f64, "N={n}: {worst}");
        }
    }

    #[test]
    fn little_mass_examples() {
        let deltas = [0.5, 0.2, 0.1, 0.05, 0.01];
        let d1 = little_mass(&BorelMeasure::dirac(1.0, ONE).unwrap(), &deltas).unwrap();
        assert!(d1.mass.iter().all(|&m| m == 1.0));
        assert!(!d1.passes);
        let z = little_mass(&BorelMeasure::zero(), &deltas).unwrap();
        assert!(z.passes && z.q_found == 0.0);
        let two = little_mass(&two_atoms(), &deltas).unwrap();
        assert_eq!(two.mass, vec![0.5, 0.2, 0.2, 0.0, 0.0]);
        assert!(two.passes && two.q_found == 0.0);
        assert!(little_mass(&BorelMeasure::zero(), &[0.0]).is_err());
    }

    #[test]
    fn solve_pde_zero_measure_is_pure_transport() {
        let n = 32;
        let x0 = GridFunction::from_fn(n, 2.0, |s| c64(s * (1.0 - s), s));
        let traj = solve_pde(&BorelMeasure::zero(), &x0, 1.0).unwrap();
        assert_eq!(traj.states.len(), n + 1);
        for (j, x) in traj.states.iter().enumerate() {
            for k in 0..n {
                let expect = if k + j < n { x0.at(k + j) } else { ZERO };
                assert_eq!(x[k], expect);
            }
            assert_eq!(x[n], ZERO);
        }
    }

    #[test]
    fn atom_at_one_alone_gives_zero_inflow() {
        let n = 32;
        let x0 = smooth(n);
        let a = solve_pde(&BorelMeasure::zero(), &x0, 1.5).unwrap();
        let b = solve_pde(&BorelMeasure::dirac(1.0, c64(0.5, 0.0)).unwrap(), &x0, 1.5).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            upwind_generator(&BorelMeasure::zero(), 8).unwrap(),
            upwind_generator(&BorelMeasure::dirac(1.0, c64(0.5, 0.0)).unwrap(), 8).unwrap()
        );
    }

    #[test]
    fn degenerate_boundary_rejected() {
        let m = BorelMeasure::dirac(1.0, ONE).unwrap();
        let x0 = smooth(16);
        assert!(matches!(solve_pde(&m, &x0, 0.5), Err(Error::DegenerateBoundary { .. })));
        assert!(matches!(upwind_generator(&m, 16), Err(Error::DegenerateBoundary { .. })));
    }

    #[test]
    fn boundary_relation_holds_at_every_level() {
        let n = 64;
        let m = BorelMeasure::new(
            vec![
                Atom { location: 0.25, weight: c64(0.4, 0.3) },
                Atom { location: 1.0, weight: c64(-0.6, 0.0) },
            ],
            vec![c64(0.5, 0.0), c64(0.0, 1.0)],
        )
        .unwrap();
        let phi = m.weights(n).unwrap();
        let x0 = GridFunction::from_fn(n, 2.0, |s| c64((5.0 * s).cos(), s));
        let traj = solve_pde(&m, &x0, 2.0).unwrap();
        for x in &traj.states {
            let phix = phi.iter().zip(x.iter()).fold(ZERO, |s, (w, v)| s + w * v);
            assert!((x[n] - phix).norm() < 1e-12);
        }
    }

    #[test]
    fn method_of_steps_matches_upwind_exponential_structure() {
        // One step of the method of steps is exactly the matrix I + A_up / N.
        let n = 40;
        let m = two_atoms();
        let a = upwind_generator(&m, n).unwrap();
        let step = CMatrix::identity(n, n) + &a / c64(n as f64, 0.0);
        let x0 = smooth(n);
        let traj = solve_pde(&m, &x0, 1.0).unwrap();
        for j in 0..n {
            let cur = traj.states[j].rows(0, n).into_owned();
            let next = numkit::matvec(&step, &cur).unwrap();
            assert!((next - traj.states[j + 1].rows(0, n)).norm() < 1e-13);
        }
    }

    #[test]
    fn trajectory_csv_shape() {
        let traj = solve_pde(&BorelMeasure::zero(), &smooth(8), 0.25).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,s,re,im");
        assert_eq!(lines.len(), 1 + 3 * 9);
    }

    #[test]
    fn transfer_closed_forms() {
        let lam = c64(0.3, -1.7);
        assert_eq!(BorelMeasure::zero().transfer(lam), ZERO);
        let a = c64(0.4, 0.1);
        assert_eq!(BorelMeasure::dirac(1.0, a).unwrap().transfer(lam), a);
        let unit = BorelMeasure::new(vec![], vec![ONE, ONE, ONE, ONE]).unwrap();
        let exact = (ONE - (-lam).exp()) / lam;
        assert!((unit.transfer(lam) - exact).norm() < 1e-14);
        assert!((unit.transfer(ZERO) - ONE).norm() < 1e-14);
    }

    #[test]
    fn transfer_derivative_matches_difference_quotient() {
        let m = BorelMeasure::new(
            vec![Atom { location: 0.2, weight: c64(1.0, 0.5) }],
            vec![c64(0.3, 0.0), c64(-1.0, 2.0)],
        )
        .unwrap();
        let lam = c64(0.7, 2.0);
        let h = 1e-6;
        let fd = (m.transfer(lam + h) - m.transfer(lam - h)) / (2.0 * h);
        assert!((fd - m.transfer_derivative(lam)).norm() < 1e-8);
    }

    #[test]
    fn characteristic_roots_examples() {
        let bx = SearchBox { re_min: -2.0, re_max: 3.0, im_min: -20.0, im_max: 20.0 };
        assert!(characteristic_roots(&BorelMeasure::zero(), bx, 1e-10).is_empty());
        assert!(characteristic_roots(&BorelMeasure::dirac(1.0, c64(0.5, 0.0)).unwrap(), bx, 1e-10).is_empty());
        let m = BorelMeasure::dirac(0.0, c64(E, 0.0)).unwrap();
        let roots = characteristic_roots(&m, bx, 1e-10);
        let expected: Vec<Complex64> = (-3..=3).map(|k| c64(1.0, 2.0 * PI * k as f64)).collect();
        assert_eq!(roots.len(), expected.len());
        for (r, e) in roots.iter().zip(&expected) {
            assert!((r - e).norm() < 1e-10, "{r} vs {e}");
        }
    }

    #[test]
    fn upwind_eigenvalues_match_dense_and_characteristic_equation() {
        let m = BorelMeasure::dirac(0.0, c64(E, 0.0)).unwrap();
        let n = 64;
        let dense = numkit::eigenvalues(&upwind_generator(&m, n).unwrap()).unwrap();
        for k in -2i32..=2 {
            let root = c64(1.0, 2.0 * PI * k as f64);
            let fast = upwind_eigenvalue_near(&m, n, root).unwrap();
            let nearest = dense
                .iter()
                .copied()
                .min_by(|a, b| (a - root).norm().total_cmp(&(b - root).norm()))
                .unwrap();
            assert!((fast - nearest).norm() < 1e-9, "{fast} vs {nearest}");
            // Discrete eigenvalues solve (1 + λ/N)^N = e exactly.
            let exact = (root / n as f64).exp() * n as f64 - n as f64;
            assert!((fast - exact).norm() < 1e-9);
        }
    }

    #[test]
    fn upwind_eigenvalues_converge_first_order() {
        let m = BorelMeasure::dirac(0.0, c64(E, 0.0)).unwrap();
        let root = c64(1.0, 2.0 * PI);
        let errs: Vec<f64> = [250usize, 500, 1000, 2000]
            .iter()
            .map(|&n| (upwind_eigenvalue_near(&m, n, root).unwrap() - root).norm())
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.8..2.2).contains(&ratio), "{errs:?}");
        }
    }

    #[test]
    fn greiner_examples() {
        assert_eq!(greiner_compatibility(ZERO, 64), 0.0);
        let mut prev = f64::INFINITY;
        for n in [128usize, 256, 512] {
            let r = greiner_compatibility(ONE, n);
            assert!(r <= 5e-3);
            assert!(r <= 0.5 * prev + 1e-15);
            prev = r;
        }
        let lam = c64(-2.0, 3.0);
        let (a, b) = (greiner_compatibility(lam, 128), greiner_compatibility(lam, 256));
        assert!(b <= 5e-3 && b <= 0.5 * a);
    }

    #[test]
    fn random_measure_weights_total_mass() {
        let mut rng = Rng::new(11);
        for _ in 0..20 {
            let dens: Vec<Complex64> = (0..4).map(|_| rng.complex()).collect();
            let m = BorelMeasure::new(vec![Atom { location: 0.75, weight: rng.complex() }], dens).unwrap();
            let total: Complex64 = m.weights(64).unwrap().iter().sum();
            assert!((total - m.transfer(ZERO)).norm() < 1e-13);
        }
    }
}
