//! Block preconditioned conjugate gradient eigensolver (LOBPCG) for the lowest
//! eigenpairs of a Hermitian positive semidefinite operator.
//!
//! The trial subspace `[X, W, P]` is orthonormalized with SVQB (eigendecomposition
//! of the scaled Gram matrix, dropping near-dependent directions) before each
//! Rayleigh–Ritz step. Projected problems are solved in double precision
//! regardless of the working scalar.

use log::trace;
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex;
use num_traits::{Float, Zero};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::{Cplx, Real};

/// Operator interface required by [`lobpcg`].
pub trait BlockOperator<T: Real>: Sync {
    fn dim(&self) -> usize;
    fn apply_block(&self, xs: &[Vec<Cplx<T>>]) -> Vec<Vec<Cplx<T>>>;
    fn precondition(&self, r: &mut [Cplx<T>], shift: T);
}

impl<T: Real> BlockOperator<T> for super::operator::TeOperator<T> {
    fn dim(&self) -> usize {
        super::operator::TeOperator::dim(self)
    }

    fn apply_block(&self, xs: &[Vec<Cplx<T>>]) -> Vec<Vec<Cplx<T>>> {
        super::operator::TeOperator::apply_block(self, xs)
    }

    fn precondition(&self, r: &mut [Cplx<T>], shift: T) {
        super::operator::TeOperator::precondition(self, r, shift)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LobpcgOptions<T> {
    /// Convergence threshold on `‖A x − θ x‖ / max(|θ|, 1)`.
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Real> Default for LobpcgOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::solver_tolerance(),
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Eigenpairs<T> {
    /// Ascending eigenvalues.
    pub values: Vec<T>,
    /// Unit-norm eigenvectors matching `values`.
    pub vectors: Vec<Vec<Cplx<T>>>,
    pub residuals: Vec<T>,
    pub iterations: usize,
}

type CMat = DMatrix<Complex<f64>>;

fn to_c64<T: Real>(z: Cplx<T>) -> Complex<f64> {
    Complex::new(z.re.to_f64_lossy(), z.im.to_f64_lossy())
}

fn from_c64<T: Real>(z: Complex<f64>) -> Cplx<T> {
    Complex::new(T::lit(z.re), T::lit(z.im))
}

pub(crate) fn dot<T: Real>(a: &[Cplx<T>], b: &[Cplx<T>]) -> Cplx<T> {
    a.iter().zip(b).fold(Complex::zero(), |acc, (x, y)| acc + x.conj() * y)
}

pub(crate) fn norm<T: Real>(a: &[Cplx<T>]) -> T {
    a.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr()).sqrt()
}

/// `A^H B` for column blocks.
fn gram<T: Real>(a: &[&Vec<Cplx<T>>], b: &[&Vec<Cplx<T>>]) -> CMat {
    let entries: Vec<Complex<f64>> = (0..a.len() * b.len())
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx % a.len(), idx / a.len());
            to_c64(dot(a[i], b[j]))
        })
        .collect();
    CMat::from_vec(a.len(), b.len(), entries)
}

/// Columns `Σ_i S_i C_ij` for `j` in `0..c.ncols()`.
fn combine<T: Real>(s: &[&Vec<Cplx<T>>], c: &CMat) -> Vec<Vec<Cplx<T>>> {
    let n = s.first().map_or(0, |v| v.len());
    (0..c.ncols())
        .into_par_iter()
        .map(|j| {
            let mut out = vec![Complex::zero(); n];
            for (i, col) in s.iter().enumerate() {
                let w: Cplx<T> = from_c64(c[(i, j)]);
                if w.is_zero() {
                    continue;
                }
                for (o, v) in out.iter_mut().zip(col.iter()) {
                    *o = *o + *v * w;
                }
            }
            out
        })
        .collect()
}

fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()) * Complex::new(0.5, 0.0)
}

/// Sorted eigendecomposition of a Hermitian matrix.
fn eigh(m: CMat) -> (Vec<f64>, CMat) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMat::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Removes from every column of `v` its components along the orthonormal
/// columns of `basis` (two Gram–Schmidt passes), updating the images `av`
/// with the images of `basis` alongside.
fn project_out<T: Real>(
    v: &mut [Vec<Cplx<T>>],
    av: Option<&mut Vec<Vec<Cplx<T>>>>,
    basis: &[&Vec<Cplx<T>>],
    images: Option<&[&Vec<Cplx<T>>]>,
) {
    let update = |col: &mut Vec<Cplx<T>>, mut acol: Option<&mut Vec<Cplx<T>>>| {
        for _ in 0..2 {
            for (i, b) in basis.iter().enumerate() {
                let c = dot(b, col);
                for (vv, bv) in col.iter_mut().zip(b.iter()) {
                    *vv = *vv - *bv * c;
                }
                if let (Some(a), Some(imgs)) = (acol.as_deref_mut(), images) {
                    for (aa, ib) in a.iter_mut().zip(imgs[i].iter()) {
                        *aa = *aa - *ib * c;
                    }
                }
            }
        }
    };
    match av {
        Some(av) => v
            .par_iter_mut()
            .zip(av.par_iter_mut())
            .for_each(|(col, acol)| update(col, Some(acol))),
        None => v.par_iter_mut().for_each(|col| update(col, None)),
    }
}

/// Orthonormalizes the columns of `v` by two SVQB passes, dropping
/// numerically dependent directions; `av` receives the same transformation.
#[allow(clippy::type_complexity)]
fn svqb<T: Real>(
    mut v: Vec<Vec<Cplx<T>>>,
    mut av: Option<Vec<Vec<Cplx<T>>>>,
) -> (Vec<Vec<Cplx<T>>>, Option<Vec<Vec<Cplx<T>>>>) {
    let rel = T::epsilon().sqrt().to_f64_lossy() * 1e-2;
    for _ in 0..2 {
        let nonzero: Vec<bool> = v.iter().map(|c| norm(c) > T::zero()).collect();
        let mut flags = nonzero.iter();
        v.retain(|_| *flags.next().unwrap());
        if let Some(a) = av.as_mut() {
            let mut flags = nonzero.iter();
            a.retain(|_| *flags.next().unwrap());
        }
        if v.is_empty() {
            break;
        }
        let refs: Vec<&Vec<Cplx<T>>> = v.iter().collect();
        let k = refs.len();
        let g = hermitize(&gram(&refs, &refs));
        let scale: Vec<f64> = (0..k)
            .map(|i| 1.0 / g[(i, i)].re.max(f64::MIN_POSITIVE).sqrt())
            .collect();
        let gs = CMat::from_fn(k, k, |i, j| g[(i, j)] * (scale[i] * scale[j]));
        let (d, e) = eigh(gs);
        let dmax = d.iter().cloned().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..k).filter(|&i| d[i] > rel * dmax).collect();
        let q = CMat::from_fn(k, keep.len(), |r, c| e[(r, keep[c])] * (scale[r] / d[keep[c]].sqrt()));
        let next = combine(&refs, &q);
        av = av.map(|a| {
            let arefs: Vec<&Vec<Cplx<T>>> = a.iter().collect();
            combine(&arefs, &q)
        });
        v = next;
    }
    (v, av)
}

/// Rayleigh–Ritz on span(S). Returns the `m` lowest Ritz values and the
/// coefficient matrix `(|S| × m)` of the Ritz vectors.
fn rayleigh_ritz<T: Real>(s: &[&Vec<Cplx<T>>], as_: &[&Vec<Cplx<T>>], m: usize) -> Option<(Vec<f64>, CMat)> {
    let k = s.len();
    let g = hermitize(&gram(s, s));
    let scale: Vec<f64> = (0..k)
        .map(|i| 1.0 / g[(i, i)].re.max(f64::MIN_POSITIVE).sqrt())
        .collect();
    let gs = CMat::from_fn(k, k, |i, j| g[(i, j)] * (scale[i] * scale[j]));
    let (d, v) = eigh(gs);
    let dmax = d.iter().cloned().fold(0.0, f64::max);
    let drop = T::epsilon().sqrt().to_f64_lossy() * 0.1 * dmax;
    let keep: Vec<usize> = (0..k).filter(|&i| d[i] > drop).collect();
    if keep.len() < m {
        return None;
    }
    let q = CMat::from_fn(k, keep.len(), |r, c| v[(r, keep[c])] * (scale[r] / d[keep[c]].sqrt()));
    let mm = hermitize(&gram(s, as_));
    let h = hermitize(&(q.adjoint() * &mm * &q));
    let (theta, y) = eigh(h);
    let coeffs = &q * y.columns(0, m);
    Some((theta[..m].to_vec(), coeffs))
}

/// Lowest `n_wanted` eigenpairs of `op`, starting from the block `x0`
/// (`x0.len() ≥ n_wanted`; extra columns act as guard vectors).
pub fn lobpcg<T, Op>(op: &Op, x0: Vec<Vec<Cplx<T>>>, n_wanted: usize, opts: LobpcgOptions<T>) -> Result<Eigenpairs<T>>
where
    T: Real,
    Op: BlockOperator<T>,
{
    let m = x0.len();
    assert!(n_wanted <= m && m <= op.dim(), "block size out of range");
    let floor = T::one();

    let ax0 = op.apply_block(&x0);
    let refs: Vec<&Vec<Cplx<T>>> = x0.iter().collect();
    let arefs: Vec<&Vec<Cplx<T>>> = ax0.iter().collect();
    let (theta0, c0) =
        rayleigh_ritz(&refs, &arefs, m).ok_or_else(|| Error::Domain("initial block is rank deficient".into()))?;
    let mut x = combine(&refs, &c0);
    let mut ax = combine(&arefs, &c0);
    let mut theta: Vec<T> = theta0.iter().map(|&t| T::lit(t)).collect();
    let mut p: Vec<Vec<Cplx<T>>> = Vec::new();
    let mut ap: Vec<Vec<Cplx<T>>> = Vec::new();
    let mut residuals = vec![T::infinity(); m];

    for iter in 0..=opts.max_iter {
        let r: Vec<Vec<Cplx<T>>> = x
            .par_iter()
            .zip(ax.par_iter())
            .zip(theta.par_iter())
            .map(|((xj, axj), &t)| axj.iter().zip(xj.iter()).map(|(a, b)| *a - *b * t).collect())
            .collect();
        for j in 0..m {
            let scale = Float::max(Float::abs(theta[j]), floor) * norm(&x[j]);
            residuals[j] = norm(&r[j]) / scale;
        }
        let worst = (0..n_wanted)
            .max_by(|&i, &j| residuals[i].partial_cmp(&residuals[j]).unwrap())
            .unwrap_or(0);
        trace!(
            "lobpcg iteration {iter}: worst residual {} (band {worst})",
            residuals[worst]
        );
        if n_wanted == 0 || residuals[worst] < opts.tol {
            return Ok(Eigenpairs {
                values: theta[..n_wanted].to_vec(),
                vectors: x.into_iter().take(n_wanted).collect(),
                residuals: residuals[..n_wanted].to_vec(),
                iterations: iter,
            });
        }
        if iter == opts.max_iter {
            return Err(Error::Solver {
                iterations: iter,
                band: worst,
                residual: residuals[worst].to_f64_lossy(),
            });
        }

        // Every column gets a search direction: locking converged columns
        // lets them drift under later Rayleigh–Ritz rotations. W and P are kept
        // orthonormal and orthogonal to X (and P to W) so that the projected
        // problem stays well conditioned as the residuals shrink.
        let mut w: Vec<Vec<Cplx<T>>> = r
            .into_par_iter()
            .zip(theta.par_iter())
            .map(|(mut v, &t)| {
                op.precondition(&mut v, t);
                v
            })
            .collect();
        let xr: Vec<&Vec<Cplx<T>>> = x.iter().collect();
        project_out(&mut w, None, &xr, None);
        let (w, _) = svqb(w, None);
        let aw = op.apply_block(&w);
        if !p.is_empty() {
            let basis: Vec<&Vec<Cplx<T>>> = x.iter().chain(&w).collect();
            let images: Vec<&Vec<Cplx<T>>> = ax.iter().chain(&aw).collect();
            project_out(&mut p, Some(&mut ap), &basis, Some(&images));
            let (p2, ap2) = svqb(p, Some(ap));
            p = p2;
            ap = ap2.expect("images requested");
        }

        let s: Vec<&Vec<Cplx<T>>> = x.iter().chain(&w).chain(&p).collect();
        let as_: Vec<&Vec<Cplx<T>>> = ax.iter().chain(&aw).chain(&ap).collect();
        let rr = rayleigh_ritz(&s, &as_, m).or_else(|| {
            // Drop the search directions if they made the basis degenerate.
            let s2: Vec<&Vec<Cplx<T>>> = x.iter().chain(&w).collect();
            let as2: Vec<&Vec<Cplx<T>>> = ax.iter().chain(&aw).collect();
            rayleigh_ritz(&s2, &as2, m).map(|(t, c)| {
                let mut full = CMat::zeros(s.len(), m);
                full.rows_mut(0, s2.len()).copy_from(&c);
                (t, full)
            })
        });
        let (theta_new, c) = rr.ok_or_else(|| Error::Solver {
            iterations: iter,
            band: worst,
            residual: residuals[worst].to_f64_lossy(),
        })?;

        let x_new = combine(&s, &c);
        let ax_new = combine(&as_, &c);
        let tail = c.rows(m, s.len() - m).into_owned();
        p = combine(&s[m..], &tail);
        ap = combine(&as_[m..], &tail);
        x = x_new;
        ax = ax_new;
        theta = theta_new.iter().map(|&t| T::lit(t)).collect();
    }
    unreachable!("loop returns on the final iteration")
}
