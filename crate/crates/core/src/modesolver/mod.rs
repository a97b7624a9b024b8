//! TE Bloch modes of a periodic supercell.
//!
//! Solves `-∇·(ε⁻¹ ∇Hz) = (ω/c)² Hz` with Bloch phase `exp(i k x)` by plane-wave
//! expansion (see [`operator`]) and LOBPCG (see [`lobpcg`]). In-plane electric
//! fields follow from `E = (i / ω ε) (∂y Hz, −∂x Hz)`.
//!
//! Units: wavenumbers in `2π/a`, frequencies in `2πc/a`; field grids are placed
//! in nm through the [`GridFrame`] of the dielectric grid.

pub mod bands;
pub mod lobpcg;
pub mod operator;

use log::debug;
use num_complex::Complex;
use num_traits::{Float, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::DielectricGrid;
use crate::grid::{Grid2, GridFrame};
use crate::scalar::{half, two, Cplx, Real};

pub use bands::{band_scan, band_scan_with, linspace, BandSample, BandStructure};
use lobpcg::{lobpcg, LobpcgOptions};
use operator::{PlaneWaveBasis, TeOperator};

/// Minimum fraction of `|E|²` inside the core for a mode to count as guided.
pub const GUIDED_CONFINEMENT: f64 = 0.5;

/// One guided or extended eigenmode of the supercell.
#[derive(Debug, Clone, PartialEq)]
pub struct BlochMode<T> {
    /// Wavenumber, units of 2π/a.
    pub k: T,
    /// Angular frequency, units of 2πc/a.
    pub omega: T,
    pub band_index: usize,
    pub ex: Grid2<Cplx<T>>,
    pub ey: Grid2<Cplx<T>>,
    pub hz: Grid2<Cplx<T>>,
    /// Grid placement in nm.
    pub frame: GridFrame<T>,
    /// Permittivity the mode was computed on, when known.
    pub eps: Option<Grid2<T>>,
    pub n_g: Option<T>,
    pub guided: bool,
    pub confinement: T,
}

impl<T: Real> BlochMode<T> {
    pub fn nx(&self) -> usize {
        self.ex.nx()
    }

    pub fn ny(&self) -> usize {
        self.ex.ny()
    }

    /// Lattice constant in nm (the supercell length along x).
    pub fn lattice_constant(&self) -> T {
        self.frame.dx * T::from_usize_lossy(self.nx())
    }

    pub fn period_y(&self) -> T {
        self.frame.dy * T::from_usize_lossy(self.ny())
    }

    /// In-plane field at a grid point.
    #[inline]
    pub fn e_at(&self, ix: usize, iy: usize) -> [Cplx<T>; 2] {
        [self.ex[(ix, iy)], self.ey[(ix, iy)]]
    }

    /// In-plane field at an arbitrary point (nm) by biquadratic interpolation
    /// over the 3×3 nodes around the nearest one. Local, so interface jumps of
    /// the normal field do not ring; the Bloch phase is applied across the
    /// cell edge in x and the supercell is periodic in y.
    pub fn e_interpolated(&self, x: T, y: T) -> [Cplx<T>; 2] {
        let (nx, ny) = (self.nx() as i64, self.ny() as i64);
        let fx = (x - self.frame.x0) / self.frame.dx;
        let fy = (y - self.frame.y0) / self.frame.dy;
        let (cx, cy) = (fx.round(), fy.round());
        let weights = |t: T| {
            let h = half::<T>();
            [h * t * (t - T::one()), T::one() - t * t, h * t * (t + T::one())]
        };
        let (wx, wy) = (weights(fx - cx), weights(fy - cy));
        let (cx, cy) = (cx.to_i64().unwrap_or(0), cy.to_i64().unwrap_or(0));
        let mut out = [Cplx::zero(); 2];
        for (sy, wy) in wy.iter().enumerate() {
            let jy = (cy + sy as i64 - 1).rem_euclid(ny) as usize;
            for (sx, wx) in wx.iter().enumerate() {
                let gx = cx + sx as i64 - 1;
                let cells = T::from_i64(gx.div_euclid(nx)).unwrap();
                let jx = gx.rem_euclid(nx) as usize;
                let w = Cplx::from_polar(*wx * *wy, T::TAU() * self.k * cells);
                out[0] = out[0] + self.ex[(jx, jy)] * w;
                out[1] = out[1] + self.ey[(jx, jy)] * w;
            }
        }
        out
    }

    /// The same mode with every field multiplied by `factor`.
    pub fn scaled(&self, factor: Cplx<T>) -> Self {
        let mut out = self.clone();
        for g in [&mut out.ex, &mut out.ey, &mut out.hz] {
            g.as_mut_slice().iter_mut().for_each(|v| *v = *v * factor);
        }
        out
    }

    /// Mirror image `y → −y`: `(Ex, Ey, Hz) → (Ex, −Ey, −Hz)` on the reflected grid.
    pub fn mirrored_y(&self) -> Self {
        let (nx, ny) = (self.nx(), self.ny());
        let flip = |g: &Grid2<Cplx<T>>, sign: T| Grid2::from_fn(nx, ny, |ix, iy| g[(ix, ny - 1 - iy)] * sign);
        Self {
            ex: flip(&self.ex, T::one()),
            ey: flip(&self.ey, -T::one()),
            hz: flip(&self.hz, -T::one()),
            eps: self
                .eps
                .as_ref()
                .map(|e| Grid2::from_fn(nx, ny, |ix, iy| e[(ix, ny - 1 - iy)])),
            ..self.clone()
        }
    }
}

/// Eigensolver controls.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions<T> {
    pub tol: T,
    pub max_iter: usize,
    /// Extra block columns beyond the requested bands.
    pub guard_bands: usize,
    /// Half-width of the core used for the confinement ratio, in units of a.
    pub core_half_width: T,
    /// Solve the defect-free reference crystal to locate the bulk gap.
    pub bulk_reference: bool,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::solver_tolerance(),
            max_iter: 1000,
            guard_bands: 4,
            core_half_width: T::lit(3.0).sqrt() * half(),
            bulk_reference: true,
        }
    }
}

/// Raw eigen-solution for one wavevector: eigenvalues `(ωa/c)²` and
/// plane-wave coefficients of the periodic part of `Hz`.
pub(crate) struct RawSolution<T: Real> {
    pub op: TeOperator<T>,
    pub values: Vec<T>,
    pub vectors: Vec<Vec<Cplx<T>>>,
}

fn check_k<T: Real>(k: T) -> Result<()> {
    if !k.is_finite() || Float::abs(k) > half::<T>() + T::lit(1e-12) {
        return Err(Error::Domain(format!(
            "wavenumber {k} lies outside the first Brillouin zone [-0.5, 0.5] (units 2π/a)"
        )));
    }
    Ok(())
}

/// Solves for the `n_bands` lowest eigenpairs at reduced wavevector
/// `(kx, ky)` in units of `1/a`.
pub(crate) fn solve_raw<T: Real>(
    eps: &DielectricGrid<T>,
    kx: T,
    ky: T,
    n_bands: usize,
    opts: &SolverOptions<T>,
) -> Result<RawSolution<T>> {
    let a = eps.period_x;
    let basis = PlaneWaveBasis::new(eps.nx(), eps.ny(), T::one(), eps.period_y / a, kx, ky);
    let dim = basis.dim();
    if n_bands == 0 || n_bands > dim {
        return Err(Error::Domain(format!(
            "requested {n_bands} bands but the plane-wave basis has {dim} functions"
        )));
    }
    let op = TeOperator::with_tensor(basis, eps.inverse_permittivity());
    let block = (n_bands + opts.guard_bands).min(dim);
    let x0 = initial_block(&op, block);
    let pairs = lobpcg(
        &op,
        x0,
        n_bands,
        LobpcgOptions {
            tol: opts.tol,
            max_iter: opts.max_iter,
        },
    )?;
    debug!(
        "k = ({}, {}): {} bands converged in {} iterations",
        kx, ky, n_bands, pairs.iterations
    );
    Ok(RawSolution {
        op,
        values: pairs.values,
        vectors: pairs.vectors,
    })
}

/// Lowest-kinetic-energy plane waves plus a fixed pseudo-random admixture.
fn initial_block<T: Real>(op: &TeOperator<T>, m: usize) -> Vec<Vec<Cplx<T>>> {
    let kin = op.basis.kinetic();
    let mut order: Vec<usize> = (0..kin.len()).collect();
    order.sort_by(|&i, &j| kin[i].partial_cmp(&kin[j]).unwrap().then(i.cmp(&j)));
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c0de);
    let n = op.dim();
    order
        .iter()
        .take(m)
        .map(|&g| {
            let mut v: Vec<Cplx<T>> = (0..n)
                .map(|i| {
                    let w = T::lit(0.05) / (T::one() + kin[i]);
                    Complex::new(
                        w * T::lit(rng.random::<f64>() - 0.5),
                        w * T::lit(rng.random::<f64>() - 0.5),
                    )
                })
                .collect();
            v[g] = v[g] + Complex::new(T::one(), T::zero());
            v
        })
        .collect()
}

/// Builds real-space fields for one eigenvector.
pub(crate) fn build_mode<T: Real>(
    raw: &RawSolution<T>,
    eps: &DielectricGrid<T>,
    k: T,
    band: usize,
    opts: &SolverOptions<T>,
) -> BlochMode<T> {
    let op = &raw.op;
    let basis = &op.basis;
    let (nx, ny) = (basis.nx, basis.ny);
    let coeffs = &raw.vectors[band];
    let lambda = Float::max(raw.values[band], T::zero());
    let omega = lambda.sqrt();
    let mut work = op.work();

    let one = Complex::new(T::one(), T::zero());
    let hz_p = op.to_real_space(coeffs, |_| one, &mut work);
    let dx_p = op.to_real_space(coeffs, |i| Complex::new(T::zero(), basis.qx[i]), &mut work);
    let dy_p = op.to_real_space(coeffs, |i| Complex::new(T::zero(), basis.qy[i]), &mut work);

    // Bloch factor exp(i k x) with x measured from the grid origin in units of a.
    let kx = basis.kx;
    let bloch: Vec<Cplx<T>> = (0..nx)
        .map(|ix| {
            let x = T::from_usize_lossy(ix) / T::from_usize_lossy(nx);
            Complex::from_polar(T::one(), kx * x)
        })
        .collect();

    let mut hz = Vec::with_capacity(nx * ny);
    let mut ex = Vec::with_capacity(nx * ny);
    let mut ey = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let o = iy * nx + ix;
            let b = bloch[ix];
            let m = op.inv_eps[o];
            hz.push(hz_p[o] * b);
            if omega > T::zero() {
                // E = (i/ω) M (∂y Hz, −∂x Hz)
                let vx = dy_p[o] * b;
                let vy = -(dx_p[o] * b);
                let fx = (vx * m[0] + vy * m[1]) / omega;
                let fy = (vx * m[1] + vy * m[2]) / omega;
                ex.push(Complex::new(-fx.im, fx.re));
                ey.push(Complex::new(-fy.im, fy.re));
            } else {
                ex.push(Complex::zero());
                ey.push(Complex::zero());
            }
        }
    }

    // Global phase: the largest-|Ey| point (first in storage order) is real positive.
    let reference = if omega > T::zero() { &ey } else { &hz };
    let mut best = 0usize;
    let mut best_mag = T::zero();
    for (i, v) in reference.iter().enumerate() {
        let m = v.norm_sqr();
        if m > best_mag {
            best_mag = m;
            best = i;
        }
    }
    if best_mag > T::zero() {
        let phase = reference[best].conj() / best_mag.sqrt();
        for v in hz.iter_mut().chain(ex.iter_mut()).chain(ey.iter_mut()) {
            *v = *v * phase;
        }
        ey[best].im = T::zero();
        if omega <= T::zero() {
            hz[best].im = T::zero();
        }
    }

    let two_pi = T::TAU();
    let mut mode = BlochMode {
        k,
        omega: omega / two_pi,
        band_index: band,
        ex: Grid2::from_vec(nx, ny, ex).unwrap(),
        ey: Grid2::from_vec(nx, ny, ey).unwrap(),
        hz: Grid2::from_vec(nx, ny, hz).unwrap(),
        frame: eps.frame,
        eps: Some(eps.eps.clone()),
        n_g: None,
        guided: false,
        confinement: T::zero(),
    };
    // Energy density consistent with the smoothed tensor the operator used.
    mode.n_g = group_index_by(&mode, |o, ex, ey| {
        let m = op.inv_eps[o];
        let det = m[0] * m[2] - m[1] * m[1];
        (m[2] * ex.norm_sqr() + m[0] * ey.norm_sqr() - two::<T>() * m[1] * (ex.conj() * ey).re) / det
    })
    .ok();
    mode.confinement = confinement_ratio(&mode, opts.core_half_width * eps.period_x);
    mode
}

/// Lower and upper edge of the projected bulk band gap at wavenumber `k`
/// (units 2π/a, frequencies in 2πc/a), from the defect-free reference crystal.
pub fn bulk_gap<T: Real>(eps: &DielectricGrid<T>, k: T, opts: &SolverOptions<T>) -> Result<Option<(T, T)>> {
    check_k(k)?;
    let Some(bulk) = eps.bulk_reference()? else {
        return Ok(None);
    };
    let ly = bulk.period_y / bulk.period_x;
    let two_pi = T::TAU();
    let samples = 7usize;
    let kx = two_pi * k;
    let ky_max = T::PI() / ly;
    let sub = SolverOptions {
        bulk_reference: false,
        ..*opts
    };
    let bands: Vec<Vec<T>> = (0..samples)
        .into_par_iter()
        .map(|j| {
            let ky = ky_max * T::from_usize_lossy(j) / T::from_usize_lossy(samples - 1);
            solve_raw(&bulk, kx, ky, 4, &sub).map(|raw| {
                raw.values
                    .iter()
                    .map(|&l| Float::max(l, T::zero()).sqrt() / two_pi)
                    .collect()
            })
        })
        .collect::<Result<_>>()?;
    let lower = bands.iter().map(|b| b[1]).fold(T::neg_infinity(), Float::max);
    let upper = bands.iter().map(|b| b[2]).fold(T::infinity(), Float::min);
    Ok((upper > lower).then_some((lower, upper)))
}

/// Marks modes below the light line, inside the bulk gap and confined to the core.
pub(crate) fn classify<T: Real>(mode: &mut BlochMode<T>, gap: Option<(T, T)>, has_holes: bool) {
    let below_light_line = mode.omega < Float::abs(mode.k);
    let in_gap = match gap {
        Some((lo, hi)) => mode.omega > lo && mode.omega < hi,
        None => !has_holes,
    };
    mode.guided = below_light_line && in_gap && mode.confinement >= T::lit(GUIDED_CONFINEMENT);
}

/// The `n_bands` lowest TE Bloch modes at wavenumber `k` (units 2π/a).
pub fn solve_modes<T: Real>(eps: &DielectricGrid<T>, k: T, n_bands: usize) -> Result<Vec<BlochMode<T>>> {
    solve_modes_with(eps, k, n_bands, &SolverOptions::default())
}

pub fn solve_modes_with<T: Real>(
    eps: &DielectricGrid<T>,
    k: T,
    n_bands: usize,
    opts: &SolverOptions<T>,
) -> Result<Vec<BlochMode<T>>> {
    check_k(k)?;
    let raw = solve_raw(eps, T::TAU() * k, T::zero(), n_bands, opts)?;
    let gap = if opts.bulk_reference {
        bulk_gap(eps, k, opts)?
    } else {
        None
    };
    let has_holes = !eps.holes.is_empty();
    Ok((0..n_bands)
        .into_par_iter()
        .map(|b| {
            let mut mode = build_mode(&raw, eps, k, b, opts);
            classify(&mut mode, gap, has_holes);
            mode
        })
        .collect())
}

/// The best-confined guided mode among the `n_bands` lowest, if any.
pub fn solve_guided<T: Real>(
    eps: &DielectricGrid<T>,
    k: T,
    n_bands: usize,
    opts: &SolverOptions<T>,
) -> Result<Option<BlochMode<T>>> {
    let modes = solve_modes_with(eps, k, n_bands, opts)?;
    Ok(modes
        .into_iter()
        .filter(|m| m.guided)
        .max_by(|a, b| a.confinement.partial_cmp(&b.confinement).unwrap()))
}

/// Energy-velocity group index `c (U_e + U_h) / |∫ S_x|` over the supercell.
///
/// Uses the physical flux `Re[E × H*]` and the scalar permittivity attached to
/// the mode. Independent of the field normalization. Modes produced by the
/// solver carry an `n_g` evaluated with the smoothed permittivity tensor
/// instead, which differs from this only through the interface cells.
pub fn group_index<T: Real>(mode: &BlochMode<T>) -> Result<T> {
    let eps = mode.eps.as_ref().ok_or_else(|| Error::MissingComponent("eps".into()))?;
    eps.ensure_shape(mode.ex.shape())?;
    let eps = eps.as_slice();
    group_index_by(mode, |o, ex, ey| eps[o] * (ex.norm_sqr() + ey.norm_sqr()))
}

/// Group index with the electric energy density `E*·ε E` supplied per point.
fn group_index_by<T: Real>(mode: &BlochMode<T>, electric: impl Fn(usize, Cplx<T>, Cplx<T>) -> T) -> Result<T> {
    let quarter = T::lit(0.25);
    let mut energy = T::zero();
    let mut flux = T::zero();
    for o in 0..mode.hz.len() {
        let ex = mode.ex.as_slice()[o];
        let ey = mode.ey.as_slice()[o];
        let hz = mode.hz.as_slice()[o];
        energy = energy + quarter * (electric(o, ex, ey) + hz.norm_sqr());
        flux = flux + half::<T>() * (ey * hz.conj()).re;
    }
    if !(Float::abs(flux) >= T::lit(1e-12) * energy) || energy <= T::zero() {
        return Err(Error::DegenerateFlux {
            flux: flux.to_f64_lossy(),
            energy: energy.to_f64_lossy(),
        });
    }
    Ok(energy / Float::abs(flux))
}

/// Fraction of `Σ|E|²` on grid rows with `|y| ≤ half_width` (nm).
pub fn confinement_ratio<T: Real>(mode: &BlochMode<T>, half_width: T) -> T {
    let mut inside = T::zero();
    let mut total = T::zero();
    for iy in 0..mode.ny() {
        let y = mode.frame.y(iy);
        let row: T = (0..mode.nx()).fold(T::zero(), |acc, ix| {
            acc + mode.ex[(ix, iy)].norm_sqr() + mode.ey[(ix, iy)].norm_sqr()
        });
        total = total + row;
        if Float::abs(y) <= half_width {
            inside = inside + row;
        }
    }
    if total > T::zero() {
        inside / total
    } else {
        T::zero()
    }
}
