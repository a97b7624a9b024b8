//! Plane-wave discretization of the TE operator `-∇·(ε⁻¹ ∇ Hz)`.
//!
//! Lengths are measured in units of the lattice constant. The Bloch-periodic
//! part of `Hz` is expanded in plane waves `exp(i G·r)` whose indices satisfy
//! `|k̃ + m| ≤ n/2 − 1/2` along each axis (`k̃` is the wavevector in units of
//! the reciprocal period, `n` the FFT length). The set is symmetric under
//! `k → −k`, which keeps time reversal exact. The operator is applied as
//! `Σ_c D_c† F η F⁻¹ D_c` with `D_c = diag(i (k+G)_c)` and `η = 1/ε` sampled on
//! the grid, so it is Hermitian positive semidefinite by construction.

use std::sync::Arc;

use num_complex::Complex;
use num_traits::{Float, Zero};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::grid::Grid2;
use crate::scalar::{half, Cplx, Real};

/// 2D FFT on `x`-fast row-major buffers.
pub(crate) struct Fft2<T: Real> {
    nx: usize,
    ny: usize,
    fwd_x: Arc<dyn Fft<T>>,
    inv_x: Arc<dyn Fft<T>>,
    fwd_y: Arc<dyn Fft<T>>,
    inv_y: Arc<dyn Fft<T>>,
}

/// Per-thread scratch for [`Fft2`].
pub struct FftWork<T> {
    grid: Vec<Cplx<T>>,
    transposed: Vec<Cplx<T>>,
    scratch: Vec<Cplx<T>>,
    acc: Vec<Cplx<T>>,
}

impl<T: Real> Fft2<T> {
    pub fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            nx,
            ny,
            fwd_x: planner.plan_fft_forward(nx),
            inv_x: planner.plan_fft_inverse(nx),
            fwd_y: planner.plan_fft_forward(ny),
            inv_y: planner.plan_fft_inverse(ny),
        }
    }

    pub fn work(&self) -> FftWork<T> {
        let scratch_len = [&self.fwd_x, &self.inv_x, &self.fwd_y, &self.inv_y]
            .iter()
            .map(|p| p.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        let n = self.nx * self.ny;
        FftWork {
            grid: vec![Complex::zero(); n],
            transposed: vec![Complex::zero(); n],
            scratch: vec![Complex::zero(); scratch_len],
            acc: vec![Complex::zero(); n],
        }
    }

    /// Unnormalized transform of `buf` in place.
    pub fn process(&self, buf: &mut [Cplx<T>], inverse: bool, work: &mut FftWork<T>) {
        let (px, py) = if inverse {
            (&self.inv_x, &self.inv_y)
        } else {
            (&self.fwd_x, &self.fwd_y)
        };
        let (nx, ny) = (self.nx, self.ny);
        px.process_with_scratch(buf, &mut work.scratch);
        let t = &mut work.transposed;
        for iy in 0..ny {
            for ix in 0..nx {
                t[ix * ny + iy] = buf[iy * nx + ix];
            }
        }
        py.process_with_scratch(t, &mut work.scratch);
        for ix in 0..nx {
            for iy in 0..ny {
                buf[iy * nx + ix] = t[ix * ny + iy];
            }
        }
    }
}

/// Truncated plane-wave set for a given Bloch wavevector.
#[derive(Debug, Clone)]
pub struct PlaneWaveBasis<T> {
    pub nx: usize,
    pub ny: usize,
    /// Supercell periods in units of the lattice constant.
    pub lx: T,
    pub ly: T,
    /// Bloch wavevector in units of 1/a.
    pub kx: T,
    pub ky: T,
    /// Integer reciprocal-lattice indices `(mx, my)`.
    pub indices: Vec<(i32, i32)>,
    /// Position of each plane wave in the FFT buffer.
    pub offsets: Vec<usize>,
    /// Components of `k + G` in units of 1/a.
    pub qx: Vec<T>,
    pub qy: Vec<T>,
}

impl<T: Real> PlaneWaveBasis<T> {
    pub fn new(nx: usize, ny: usize, lx: T, ly: T, kx: T, ky: T) -> Self {
        let two_pi = T::TAU();
        // Reduced wavevectors in units of the reciprocal periods.
        let kxr = kx * lx / two_pi;
        let kyr = ky * ly / two_pi;
        let mx = admissible(nx, kxr);
        let my = admissible(ny, kyr);
        let mut indices = Vec::with_capacity(mx.len() * my.len());
        let mut offsets = Vec::with_capacity(mx.len() * my.len());
        let mut qx = Vec::with_capacity(mx.len() * my.len());
        let mut qy = Vec::with_capacity(mx.len() * my.len());
        for &j in &my {
            for &i in &mx {
                indices.push((i, j));
                let ox = i.rem_euclid(nx as i32) as usize;
                let oy = j.rem_euclid(ny as i32) as usize;
                offsets.push(oy * nx + ox);
                qx.push(kx + two_pi * T::from_i32(i).unwrap() / lx);
                qy.push(ky + two_pi * T::from_i32(j).unwrap() / ly);
            }
        }
        Self {
            nx,
            ny,
            lx,
            ly,
            kx,
            ky,
            indices,
            offsets,
            qx,
            qy,
        }
    }

    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    /// `|k + G|²` for every plane wave.
    pub fn kinetic(&self) -> Vec<T> {
        self.qx.iter().zip(&self.qy).map(|(&a, &b)| a * a + b * b).collect()
    }
}

/// Integer indices `m` with `|k̃ + m| ≤ n/2 − 1/2`.
fn admissible<T: Real>(n: usize, kr: T) -> Vec<i32> {
    let limit = T::from_usize_lossy(n) * half::<T>() - half::<T>() + T::lit(1e-9);
    let lo = (-limit - kr).ceil().to_i32().unwrap();
    let hi = (limit - kr).floor().to_i32().unwrap();
    (lo..=hi).collect()
}

/// The discretized TE operator for one wavevector.
pub struct TeOperator<T: Real> {
    pub basis: PlaneWaveBasis<T>,
    /// Inverse permittivity tensor `(xx, xy, yy)` acting on `E`, per grid point.
    pub inv_eps: Vec<[T; 3]>,
    pub mean_eta: T,
    fft: Fft2<T>,
}

impl<T: Real> TeOperator<T> {
    /// Isotropic medium `η = 1/ε`.
    pub fn new(basis: PlaneWaveBasis<T>, eps: &Grid2<T>) -> Self {
        assert_eq!(eps.shape(), (basis.nx, basis.ny));
        let inv_eps = eps
            .iter()
            .map(|&e| {
                let eta = T::one() / e;
                [eta, T::zero(), eta]
            })
            .collect();
        Self::with_tensor(basis, inv_eps)
    }

    /// Anisotropic medium; every tensor must be symmetric positive definite.
    pub fn with_tensor(basis: PlaneWaveBasis<T>, inv_eps: Vec<[T; 3]>) -> Self {
        assert_eq!(inv_eps.len(), basis.nx * basis.ny);
        let mean_eta =
            inv_eps.iter().fold(T::zero(), |a, m| a + half::<T>() * (m[0] + m[2])) / T::from_usize_lossy(inv_eps.len());
        let fft = Fft2::new(basis.nx, basis.ny);
        Self {
            basis,
            inv_eps,
            mean_eta,
            fft,
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn work(&self) -> FftWork<T> {
        self.fft.work()
    }

    /// Scatters plane-wave coefficients multiplied by `factor(i)` into the
    /// FFT buffer and transforms to real space.
    pub(crate) fn to_real_space(
        &self,
        coeffs: &[Cplx<T>],
        factor: impl Fn(usize) -> Cplx<T>,
        work: &mut FftWork<T>,
    ) -> Vec<Cplx<T>> {
        let mut buf = std::mem::take(&mut work.grid);
        buf.iter_mut().for_each(|v| *v = Complex::zero());
        for (i, (&off, &c)) in self.basis.offsets.iter().zip(coeffs).enumerate() {
            buf[off] = c * factor(i);
        }
        self.fft.process(&mut buf, true, work);
        let out = buf.clone();
        work.grid = buf;
        out
    }

    /// `y = A x` for a single vector.
    ///
    /// With `∇×(Hz ẑ) = R ∇Hz`, `R = [[0, 1], [−1, 0]]`, the operator is
    /// `−∇·(Rᵀ M R ∇Hz)` for the inverse permittivity tensor `M`.
    pub fn apply_into(&self, x: &[Cplx<T>], y: &mut [Cplx<T>], work: &mut FftWork<T>) {
        let n = (self.basis.nx * self.basis.ny) as f64;
        let inv_n = T::lit(1.0 / n);
        let mut gx = std::mem::take(&mut work.grid);
        let mut gy = std::mem::take(&mut work.acc);
        for (buf, q) in [(&mut gx, &self.basis.qx), (&mut gy, &self.basis.qy)] {
            buf.iter_mut().for_each(|v| *v = Complex::zero());
            for ((&off, &c), &qc) in self.basis.offsets.iter().zip(x).zip(q) {
                // i q c
                buf[off] = Complex::new(-c.im * qc, c.re * qc);
            }
            self.fft.process(buf, true, work);
        }
        for ((u, v), m) in gx.iter_mut().zip(gy.iter_mut()).zip(&self.inv_eps) {
            // Rᵀ M R = [[M_yy, −M_xy], [−M_xy, M_xx]]
            let (a, b) = (*u, *v);
            *u = a * m[2] - b * m[1];
            *v = b * m[0] - a * m[1];
        }
        y.iter_mut().for_each(|v| *v = Complex::zero());
        for (buf, q) in [(&mut gx, &self.basis.qx), (&mut gy, &self.basis.qy)] {
            self.fft.process(buf, false, work);
            for ((&off, out), &qc) in self.basis.offsets.iter().zip(y.iter_mut()).zip(q) {
                let f = buf[off] * inv_n;
                // -i q f
                *out = *out + Complex::new(f.im * qc, -f.re * qc);
            }
        }
        work.grid = gx;
        work.acc = gy;
    }

    /// Applies the operator to every column of a block, in parallel.
    pub fn apply_block(&self, xs: &[Vec<Cplx<T>>]) -> Vec<Vec<Cplx<T>>> {
        xs.par_iter()
            .map_init(
                || self.work(),
                |work, x| {
                    let mut y = vec![Complex::zero(); x.len()];
                    self.apply_into(x, &mut y, work);
                    y
                },
            )
            .collect()
    }

    /// Diagonal preconditioner `(η̄ |k+G|² + shift)⁻¹` applied in place.
    pub fn precondition(&self, r: &mut [Cplx<T>], shift: T) {
        let floor = T::lit(1e-2);
        for ((v, &qx), &qy) in r.iter_mut().zip(&self.basis.qx).zip(&self.basis.qy) {
            let d = self.mean_eta * (qx * qx + qy * qy) + Float::max(shift, floor);
            *v = *v / d;
        }
    }
}
