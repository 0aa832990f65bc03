//! Block lower-triangular Toeplitz operators.
//!
//! `T = (T_{i-j})` with `T_k = 0` for `k < 0`: block row `i` of `T x` is
//! `Σ_{j ≤ i} T_{i-j} x_j`. These carry the input-output map of `n`
//! consecutive horizons and its inverse.

use crate::error::{Error, Result};
use crate::numkit::{self, CMatrix, CVector, ZERO};

/// Largest dense size (rows = columns) materialized anywhere in the crate.
pub const DENSE_CAP: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockToeplitz {
    blocks: Vec<CMatrix>,
    dim: usize,
}

impl BlockToeplitz {
    /// `blocks[k]` is the `k`-th subdiagonal block; `blocks[0]` sits on the diagonal.
    pub fn new(blocks: Vec<CMatrix>) -> Result<Self> {
        let first = blocks.first().ok_or(Error::InvalidArgument {
            op: "BlockToeplitz::new",
            reason: "at least one block is required".into(),
        })?;
        let dim = first.nrows();
        for b in &blocks {
            if b.nrows() != dim || b.ncols() != dim {
                return Err(Error::ShapeMismatch {
                    op: "BlockToeplitz::new",
                    expected: format!("{dim}x{dim} blocks"),
                    actual: format!("{}x{}", b.nrows(), b.ncols()),
                });
            }
        }
        Ok(Self { blocks, dim })
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[CMatrix] {
        &self.blocks
    }

    pub fn size(&self) -> usize {
        self.blocks.len() * self.dim
    }

    pub fn to_dense(&self) -> Result<CMatrix> {
        let size = self.size();
        if size > DENSE_CAP {
            return Err(Error::SizeCap {
                cols: size,
                cap: DENSE_CAP,
            });
        }
        let d = self.dim;
        let mut m = CMatrix::zeros(size, size);
        for i in 0..self.blocks.len() {
            for j in 0..=i {
                m.view_mut((i * d, j * d), (d, d))
                    .copy_from(&self.blocks[i - j]);
            }
        }
        Ok(m)
    }

    /// Block convolution. Sums in increasing column order so the result is
    /// bit-identical to `numkit::matvec` on the dense matrix.
    pub fn apply(&self, x: &CVector) -> Result<CVector> {
        let d = self.dim;
        let n = self.blocks.len();
        if x.len() != n * d {
            return Err(Error::ShapeMismatch {
                op: "BlockToeplitz::apply",
                expected: format!("length {}", n * d),
                actual: format!("length {}", x.len()),
            });
        }
        let mut y = CVector::zeros(n * d);
        for i in 0..n {
            for a in 0..d {
                let mut acc = ZERO;
                for j in 0..=i {
                    let blk = &self.blocks[i - j];
                    for b in 0..d {
                        acc += blk[(a, b)] * x[j * d + b];
                    }
                }
                y[i * d + a] = acc;
            }
        }
        Ok(y)
    }

    /// Solves `(Id - T) y = r` by block forward substitution.
    pub fn solve_identity_minus(&self, r: &CVector) -> Result<CVector> {
        let d = self.dim;
        let n = self.blocks.len();
        if r.len() != n * d {
            return Err(Error::ShapeMismatch {
                op: "BlockToeplitz::solve_identity_minus",
                expected: format!("length {}", n * d),
                actual: format!("length {}", r.len()),
            });
        }
        let diag = numkit::Lu::new(&(CMatrix::identity(d, d) - &self.blocks[0]))?;
        let mut y = CVector::zeros(n * d);
        for i in 0..n {
            let mut rhs = r.rows(i * d, d).into_owned();
            for j in 0..i {
                rhs += &self.blocks[i - j] * y.rows(j * d, d);
            }
            y.rows_mut(i * d, d).copy_from(&diag.solve_vec(&rhs)?);
        }
        Ok(y)
    }

    /// Young-inequality bound `Σ_j ‖T_j‖_p`, valid for every `p ∈ [1, ∞]`
    /// when the block norms are the matching induced norms.
    pub fn norm_bound(&self, p: f64) -> Result<f64> {
        self.blocks
            .iter()
            .map(|b| numkit::induced_norm(b, p))
            .sum()
    }
}

/// The `n`-horizon operator `1 - F_{n t0}` in block form and its explicit inverse.
#[derive(Debug, Clone)]
pub struct BlockInversePair {
    /// Blocks `1 - F`, then `-C T^{k-1} B` for `k ≥ 1`.
    pub forward: BlockToeplitz,
    /// Blocks `G`, then `G C (T + B G C)^{k-1} B G` for `k ≥ 1`.
    pub inverse: BlockToeplitz,
    /// `G = (1 - F)^{-1}`.
    pub g: CMatrix,
}

fn check_block_shapes(f: &CMatrix, b: &CMatrix, c: &CMatrix, t: &CMatrix) -> Result<()> {
    let q = f.nrows();
    let d = t.nrows();
    let ok = f.ncols() == q
        && t.ncols() == d
        && b.nrows() == d
        && b.ncols() == q
        && c.nrows() == q
        && c.ncols() == d;
    if ok {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            op: "lemma33_inverse",
            expected: format!("F {q}x{q}, B {d}x{q}, C {q}x{d}, T {d}x{d}"),
            actual: format!(
                "F {}x{}, B {}x{}, C {}x{}, T {}x{}",
                f.nrows(),
                f.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols(),
                t.nrows(),
                t.ncols()
            ),
        })
    }
}

pub fn lemma33_inverse(
    f: &CMatrix,
    b: &CMatrix,
    c: &CMatrix,
    t: &CMatrix,
    n: usize,
) -> Result<BlockInversePair> {
    check_block_shapes(f, b, c, t)?;
    if n == 0 {
        return Err(Error::InvalidArgument {
            op: "lemma33_inverse",
            reason: "n must be at least 1".into(),
        });
    }
    let q = f.nrows();
    let id = CMatrix::identity(q, q);
    let one_minus_f = &id - f;
    // singular 1 - F: spectral margin below 1e-8
    let margin = numkit::eigenvalues(&one_minus_f)?
        .iter()
        .map(|z| z.norm())
        .fold(f64::INFINITY, f64::min);
    if margin < 1e-8 {
        return Err(Error::FeedbackSingular { margin });
    }
    let g = numkit::inverse(&one_minus_f)?;
    let gc = &g * c;
    let bg = b * &g;
    let closed = t + b * &gc;

    let mut fwd = Vec::with_capacity(n);
    let mut inv = Vec::with_capacity(n);
    fwd.push(one_minus_f);
    inv.push(g.clone());
    let mut t_pow = CMatrix::identity(t.nrows(), t.nrows());
    let mut s_pow = CMatrix::identity(t.nrows(), t.nrows());
    for _ in 1..n {
        fwd.push(-(c * &t_pow * b));
        inv.push(&gc * &s_pow * &bg);
        t_pow = &t_pow * t;
        s_pow = &s_pow * &closed;
    }
    Ok(BlockInversePair {
        forward: BlockToeplitz::new(fwd)?,
        inverse: BlockToeplitz::new(inv)?,
        g,
    })
}

/// `(lhs, rhs)` with `lhs = ‖(1 - F_{n t0})^{-1}‖_2` from the materialized
/// inverse and `rhs = ‖G‖ + ‖GC‖·‖BG‖·Σ_{l=1}^{n-1} ‖T + BGC‖^{l-1}`.
pub fn lemma33_norm_chain(
    f: &CMatrix,
    b: &CMatrix,
    c: &CMatrix,
    t: &CMatrix,
    n: usize,
) -> Result<(f64, f64)> {
    let pair = lemma33_inverse(f, b, c, t, n)?;
    let lhs = numkit::two_norm(&pair.inverse.to_dense()?);
    let rhs = block_inverse_bound(&pair.g, b, c, t, n);
    Ok((lhs, rhs))
}

pub(crate) fn block_inverse_bound(g: &CMatrix, b: &CMatrix, c: &CMatrix, t: &CMatrix, n: usize) -> f64 {
    let ng = numkit::two_norm(g);
    let ngc = numkit::two_norm(&(g * c));
    let nbg = numkit::two_norm(&(b * g));
    let ns = numkit::two_norm(&(t + b * g * c));
    let geometric: f64 = (1..n).map(|l| ns.powi(l as i32 - 1)).sum();
    ng + ngc * nbg * geometric
}
