//! Stokes parameters, polarization-ellipse angles and C points.
//!
//! Conventions: a Jones vector `(vx, vy)` has `S1 = |vx|² − |vy|²`,
//! `S2 = 2 Re(vx* vy)`, `S3 = 2 Im(vx* vy)`. The ellipticity angle
//! `χ = ½ asin(S3/S0)` lies in `[−π/4, π/4]` and is positive for right-handed
//! light; the orientation angle `Ψ = ½ atan2(S2, S1)` lies in `[−π/2, π/2)`.
//! The alternate `(α, δ)` parameterization writes the state as
//! `(cos α, sin α e^{iδ})` with `α ∈ [0, π/2]`, `δ ∈ [0, 2π)`. When one
//! component vanishes the relative phase is meaningless and `δ = 0` is used.

use log::warn;
use num_complex::Complex;
use num_traits::Float;

use crate::error::{Error, Result};
use crate::grid::{Grid2, GridFrame};
use crate::modesolver::BlochMode;
use crate::scalar::{half, two, Jones, Real};

/// `|S3|/S0` above which a point counts as circularly polarized.
pub const CIRCULAR_THRESHOLD: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseAngles<T> {
    /// Ellipticity angle, `[−π/4, π/4]`.
    pub chi: T,
    /// Orientation angle, `[−π/2, π/2)`; 0 for circular states.
    pub psi: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StokesVector<T> {
    pub s0: T,
    pub s1: T,
    pub s2: T,
    pub s3: T,
}

impl<T: Real> StokesVector<T> {
    /// `|S3|/S0`, or 0 for a null vector.
    pub fn circularity(&self) -> T {
        if self.s0 > T::zero() {
            Float::abs(self.s3) / self.s0
        } else {
            T::zero()
        }
    }

    /// `(S1² + S2²)/S0²`; vanishes at circular polarization.
    pub fn linear_fraction_sq(&self) -> T {
        if self.s0 > T::zero() {
            (self.s1 * self.s1 + self.s2 * self.s2) / (self.s0 * self.s0)
        } else {
            T::zero()
        }
    }

    pub fn handedness(&self) -> Option<Handedness> {
        if self.s3 > T::zero() {
            Some(Handedness::Right)
        } else if self.s3 < T::zero() {
            Some(Handedness::Left)
        } else {
            None
        }
    }
}

/// Sign of `S3`: right-handed for `S3 > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Handedness {
    Right,
    Left,
}

impl Handedness {
    pub fn sign<T: Real>(self) -> T {
        match self {
            Handedness::Right => T::one(),
            Handedness::Left => -T::one(),
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Handedness::Right => Handedness::Left,
            Handedness::Left => Handedness::Right,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Handedness::Right => "R",
            Handedness::Left => "L",
        }
    }
}

/// Emitter transition dipole; only its direction matters for rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DipoleState<T> {
    pub psi_d: T,
    pub chi_d: T,
    pub d0: T,
}

impl<T: Real> DipoleState<T> {
    pub fn new(psi_d: T, chi_d: T) -> Self {
        Self {
            psi_d,
            chi_d,
            d0: T::one(),
        }
    }

    pub fn linear(psi_d: T) -> Self {
        Self::new(psi_d, T::zero())
    }

    pub fn circular(handedness: Handedness) -> Self {
        Self::new(T::zero(), handedness.sign::<T>() * T::FRAC_PI_4())
    }

    pub fn from_alpha_delta(alpha: T, delta: T) -> Result<Self> {
        let j = jones_from_alpha_delta(alpha, delta);
        let a = stokes_to_angles(&jones_to_stokes(&j)?)?;
        Ok(Self::new(a.psi, a.chi))
    }

    /// Unit Jones vector `d̂`.
    pub fn unit_jones(&self) -> Jones<T> {
        angles_to_jones(self.chi_d, self.psi_d)
    }

    /// `d0 · d̂`.
    pub fn jones(&self) -> Jones<T> {
        let u = self.unit_jones();
        let s = Complex::new(self.d0, T::zero());
        [u[0] * s, u[1] * s]
    }

    pub fn alpha_delta(&self) -> (T, T) {
        alpha_delta_from_angles(self.chi_d, self.psi_d)
    }

    /// The time-reversed (complex-conjugate) dipole.
    pub fn conjugate(&self) -> Self {
        Self {
            chi_d: -self.chi_d,
            ..*self
        }
    }
}

/// Unit Jones vector of the ellipse `(χ, Ψ)`.
pub fn angles_to_jones<T: Real>(chi: T, psi: T) -> Jones<T> {
    let quarter = T::FRAC_PI_4();
    let halfpi = T::FRAC_PI_2();
    let slack = T::lit(1e-12);
    if Float::abs(chi) > quarter + slack || psi < -halfpi - slack || psi > halfpi + slack {
        warn!("ellipse angles (chi = {chi}, psi = {psi}) outside canonical ranges; evaluating as given");
    }
    let (sc, cc) = chi.sin_cos();
    let (sp, cp) = psi.sin_cos();
    [Complex::new(cc * cp, -sc * sp), Complex::new(cc * sp, sc * cp)]
}

pub fn jones_to_stokes<T: Real>(v: &Jones<T>) -> Result<StokesVector<T>> {
    let (ax, ay) = (v[0].norm_sqr(), v[1].norm_sqr());
    let s0 = ax + ay;
    if !(s0 > T::zero()) || !s0.is_finite() {
        return Err(Error::Polarization(
            "zero or non-finite field: polarization undefined".into(),
        ));
    }
    let c = v[0].conj() * v[1];
    Ok(StokesVector {
        s0,
        s1: ax - ay,
        s2: two::<T>() * c.re,
        s3: two::<T>() * c.im,
    })
}

/// Canonical ellipse angles. Circular states (`S1 = S2 = 0`) get `Ψ = 0`.
pub fn stokes_to_angles<T: Real>(s: &StokesVector<T>) -> Result<EllipseAngles<T>> {
    if !(s.s0 > T::zero()) {
        return Err(Error::Polarization("S0 must be positive".into()));
    }
    let ratio = Float::max(-T::one(), Float::min(T::one(), s.s3 / s.s0));
    let chi = half::<T>() * ratio.asin();
    let psi = if s.s1 == T::zero() && s.s2 == T::zero() {
        T::zero()
    } else {
        canonical_psi(half::<T>() * s.s2.atan2(s.s1))
    };
    Ok(EllipseAngles { chi, psi })
}

/// Maps an orientation angle into `[−π/2, π/2)`.
pub fn canonical_psi<T: Real>(psi: T) -> T {
    let pi = T::PI();
    let halfpi = T::FRAC_PI_2();
    let mut p = psi;
    if p >= halfpi || p < -halfpi {
        p = wrap(p + halfpi, pi) - halfpi;
        if p >= halfpi {
            p = -halfpi;
        }
    }
    p
}

/// `x` reduced to `[0, period)` (up to rounding at the upper end).
fn wrap<T: Real>(x: T, period: T) -> T {
    x - period * (x / period).floor()
}

/// `(α, δ)` of the state `(χ, Ψ)`, read off its Jones vector.
pub fn alpha_delta_from_angles<T: Real>(chi: T, psi: T) -> (T, T) {
    alpha_delta_from_jones(&angles_to_jones(chi, psi))
}

pub fn alpha_delta_from_jones<T: Real>(v: &Jones<T>) -> (T, T) {
    let (mx, my) = (v[0].norm(), v[1].norm());
    let alpha = my.atan2(mx);
    let tiny = T::epsilon() * (mx + my);
    let delta = if mx <= tiny || my <= tiny {
        T::zero()
    } else {
        let d = wrap(v[1].arg() - v[0].arg(), T::TAU());
        if d >= T::TAU() {
            T::zero()
        } else {
            d
        }
    };
    (alpha, delta)
}

pub fn jones_from_alpha_delta<T: Real>(alpha: T, delta: T) -> Jones<T> {
    [
        Complex::new(alpha.cos(), T::zero()),
        Complex::from_polar(alpha.sin(), delta),
    ]
}

/// `|⟨a, b⟩|² / (|a|² |b|²)`: 1 when the states agree up to global phase.
pub fn fidelity<T: Real>(a: &Jones<T>, b: &Jones<T>) -> T {
    let ip = a[0].conj() * b[0] + a[1].conj() * b[1];
    let na = a[0].norm_sqr() + a[1].norm_sqr();
    let nb = b[0].norm_sqr() + b[1].norm_sqr();
    ip.norm_sqr() / (na * nb)
}

pub fn conjugate_jones<T: Real>(v: &Jones<T>) -> Jones<T> {
    [v[0].conj(), v[1].conj()]
}

/// Local polarization of a mode on its grid.
#[derive(Debug, Clone)]
pub struct PolarizationField<T> {
    pub frame: GridFrame<T>,
    pub stokes: Grid2<StokesVector<T>>,
    /// `None` where masked out (inside holes) or where the field vanishes.
    pub angles: Grid2<Option<EllipseAngles<T>>>,
    /// Dielectric points with a non-vanishing field.
    pub valid: Grid2<bool>,
}

impl<T: Real> PolarizationField<T> {
    pub fn nx(&self) -> usize {
        self.stokes.nx()
    }

    pub fn ny(&self) -> usize {
        self.stokes.ny()
    }

    /// Valid points with `|S3|/S0 > 0.999`.
    pub fn circular_points(&self) -> usize {
        self.stokes
            .iter()
            .zip(self.valid.iter())
            .filter(|(s, &v)| v && s.circularity() > T::lit(CIRCULAR_THRESHOLD))
            .count()
    }
}

/// Permittivity separating air from dielectric: halfway between 1 and the maximum.
pub fn dielectric_threshold<T: Real>(eps: &Grid2<T>) -> T {
    let max = eps.iter().fold(T::one(), |m, &e| Float::max(m, e));
    half::<T>() * (T::one() + max)
}

/// Dielectric-point mask of a mode; every point when no permittivity is attached.
pub fn dielectric_mask<T: Real>(mode: &BlochMode<T>) -> Grid2<bool> {
    match &mode.eps {
        Some(eps) => {
            let thr = dielectric_threshold(eps);
            eps.map(|&e| e >= thr)
        }
        None => Grid2::filled(mode.nx(), mode.ny(), true),
    }
}

pub fn polarization_field<T: Real>(mode: &BlochMode<T>) -> PolarizationField<T> {
    let dielectric = dielectric_mask(mode);
    let (nx, ny) = (mode.nx(), mode.ny());
    let zero = StokesVector {
        s0: T::zero(),
        s1: T::zero(),
        s2: T::zero(),
        s3: T::zero(),
    };
    let stokes = Grid2::from_fn(nx, ny, |ix, iy| jones_to_stokes(&mode.e_at(ix, iy)).unwrap_or(zero));
    let valid = Grid2::from_fn(nx, ny, |ix, iy| dielectric[(ix, iy)] && stokes[(ix, iy)].s0 > T::zero());
    let angles = Grid2::from_fn(nx, ny, |ix, iy| {
        if valid[(ix, iy)] {
            stokes_to_angles(&stokes[(ix, iy)]).ok()
        } else {
            None
        }
    });
    PolarizationField {
        frame: mode.frame,
        stokes,
        angles,
        valid,
    }
}

/// A point of exactly circular local polarization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CPoint<T> {
    /// Sub-grid position in nm.
    pub x: T,
    pub y: T,
    /// Nearest grid node.
    pub ix: usize,
    pub iy: usize,
    pub handedness: Handedness,
    /// `|S3|/S0` at the interpolated minimum.
    pub circularity: T,
}

/// Locates C points as interpolated minima of `(S1² + S2²)/S0²`.
///
/// Each grid-local minimum whose 3×3 neighbourhood lies in the dielectric is
/// refined by a quadratic fit; it is reported if the fitted minimum stays
/// within one cell and its circularity exceeds [`CIRCULAR_THRESHOLD`]. A field
/// that is circular everywhere has no isolated C points and yields none.
pub fn find_c_points<T: Real>(field: &PolarizationField<T>) -> Vec<CPoint<T>> {
    let (nx, ny) = (field.nx(), field.ny());
    let valid_count = field.valid.iter().filter(|&&v| v).count();
    if valid_count > 0 && field.circular_points() == valid_count {
        warn!("field is circularly polarized everywhere; no isolated C points");
        return Vec::new();
    }
    let q = field.stokes.map(|s| s.linear_fraction_sq());
    let thr = T::lit(CIRCULAR_THRESHOLD);
    let q_max = T::one() - thr * thr;
    let mut out = Vec::new();
    for iy in 1..ny.saturating_sub(1) {
        for ix in 0..nx {
            if !field.valid[(ix, iy)] {
                continue;
            }
            let centre = q[(ix, iy)];
            let mut stencil = [[T::zero(); 3]; 3];
            let mut ok = true;
            'outer: for (sy, row) in stencil.iter_mut().enumerate() {
                for (sx, cell) in row.iter_mut().enumerate() {
                    let jx = (ix + nx + sx - 1) % nx;
                    let jy = iy + sy - 1;
                    if !field.valid[(jx, jy)] {
                        ok = false;
                        break 'outer;
                    }
                    let v = q[(jx, jy)];
                    if (sx, sy) != (1, 1) {
                        // Ties resolved towards the earlier storage position.
                        let earlier = (jy, jx) < (iy, ix);
                        if v < centre || (earlier && v == centre) {
                            ok = false;
                            break 'outer;
                        }
                    }
                    *cell = v;
                }
            }
            if !ok {
                continue;
            }
            let Some((ox, oy, qmin)) = quadratic_minimum(&stencil) else {
                continue;
            };
            let qmin = Float::max(qmin, T::zero());
            if qmin > q_max {
                continue;
            }
            let circ = (T::one() - qmin).sqrt();
            let Some(handedness) = field.stokes[(ix, iy)].handedness() else {
                continue;
            };
            out.push(CPoint {
                x: field.frame.x(ix) + ox * field.frame.dx,
                y: field.frame.y(iy) + oy * field.frame.dy,
                ix,
                iy,
                handedness,
                circularity: circ,
            });
        }
    }
    out
}

/// Value at offset `(ox, oy)` (cells) of the quadratic model of a 3×3 stencil:
/// centred gradient and Hessian at the middle node.
pub fn quadratic_model<T: Real>(s: &[[T; 3]; 3], ox: T, oy: T) -> T {
    let (c, gx, gy, hxx, hyy, hxy) = stencil_terms(s);
    c + gx * ox + gy * oy + half::<T>() * (hxx * ox * ox + two::<T>() * hxy * ox * oy + hyy * oy * oy)
}

fn stencil_terms<T: Real>(s: &[[T; 3]; 3]) -> (T, T, T, T, T, T) {
    let h = half::<T>();
    let c = s[1][1];
    let gx = h * (s[1][2] - s[1][0]);
    let gy = h * (s[2][1] - s[0][1]);
    let hxx = s[1][2] - two::<T>() * c + s[1][0];
    let hyy = s[2][1] - two::<T>() * c + s[0][1];
    let hxy = T::lit(0.25) * (s[2][2] - s[2][0] - s[0][2] + s[0][0]);
    (c, gx, gy, hxx, hyy, hxy)
}

/// Minimum of the quadratic model of a 3×3 stencil (unit spacing, centre at 0).
/// `None` unless the model is convex and its minimum lies within the stencil cell.
fn quadratic_minimum<T: Real>(s: &[[T; 3]; 3]) -> Option<(T, T, T)> {
    let (c, gx, gy, hxx, hyy, hxy) = stencil_terms(s);
    let det = hxx * hyy - hxy * hxy;
    if !(hxx > T::zero() && det > T::zero()) {
        // Flat or saddle-shaped: the grid node itself is the best estimate.
        return if gx == T::zero() && gy == T::zero() {
            Some((T::zero(), T::zero(), c))
        } else {
            None
        };
    }
    let ox = -(hyy * gx - hxy * gy) / det;
    let oy = -(hxx * gy - hxy * gx) / det;
    if Float::abs(ox) > T::one() || Float::abs(oy) > T::one() {
        return None;
    }
    Some((ox, oy, quadratic_model(s, ox, oy)))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4, PI};

    use super::*;
    use crate::grid::GridFrame;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    fn close(a: Complex<f64>, b: Complex<f64>, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn jones_of_reference_angles() {
        let j = angles_to_jones(0.0, 0.0);
        assert!(close(j[0], c(1.0, 0.0), 1e-15) && close(j[1], c(0.0, 0.0), 1e-15));
        let j = angles_to_jones(FRAC_PI_4, 0.0);
        assert!(close(j[0], c(FRAC_1_SQRT_2, 0.0), 1e-15));
        assert!(close(j[1], c(0.0, FRAC_1_SQRT_2), 1e-15));
        let j = angles_to_jones(-0.178 * PI, 0.0);
        assert!((j[0].re - 0.848).abs() < 5e-4 && j[0].im.abs() < 1e-15);
        // Printed as 0.53 (two decimals); the exact value is sin(0.178π) = 0.5306.
        assert!(j[1].re.abs() < 1e-15 && (j[1].im + 0.53).abs() < 5e-3);
    }

    #[test]
    fn stokes_of_reference_vectors() {
        let s = jones_to_stokes(&[c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert_eq!((s.s0, s.s1, s.s2, s.s3), (1.0, 1.0, 0.0, 0.0));
        let s = jones_to_stokes(&[c(FRAC_1_SQRT_2, 0.0), c(0.0, FRAC_1_SQRT_2)]).unwrap();
        assert!((s.s0 - 1.0).abs() < 1e-15 && s.s1.abs() < 1e-15);
        assert!(s.s2.abs() < 1e-15 && (s.s3 - 1.0).abs() < 1e-15);
        // Direct evaluation: S1 = 0.848² − 0.53², S3 = 2·0.848·(−0.53).
        let s = jones_to_stokes(&[c(0.848, 0.0), c(0.0, -0.53)]).unwrap();
        assert!((s.s3 - (-0.899)).abs() < 5e-4);
        assert!((s.s1 - 0.438).abs() < 5e-4);
        assert_eq!(s.s2, 0.0);
        assert!(matches!(
            jones_to_stokes(&[c(0.0, 0.0), c(0.0, 0.0)]),
            Err(Error::Polarization(_))
        ));
    }

    #[test]
    fn angles_of_reference_stokes() {
        let a = stokes_to_angles(&StokesVector {
            s0: 1.0,
            s1: 1.0,
            s2: 0.0,
            s3: 0.0,
        })
        .unwrap();
        assert_eq!((a.chi, a.psi), (0.0, 0.0));
        // χ = −0.178π from S3/S0 = sin(2χ).
        let s3 = (-0.356 * PI).sin();
        let s1 = (1.0 - s3 * s3).sqrt();
        let a = stokes_to_angles(&StokesVector {
            s0: 1.0,
            s1,
            s2: 0.0,
            s3,
        })
        .unwrap();
        assert!((a.chi + 0.178 * PI).abs() < 1e-12);
        let circ = stokes_to_angles(&StokesVector {
            s0: 1.0,
            s1: 0.0,
            s2: 0.0,
            s3: -1.0,
        })
        .unwrap();
        assert_eq!(circ.psi, 0.0);
        assert!((circ.chi + FRAC_PI_4).abs() < 1e-15);
        assert!(stokes_to_angles(&StokesVector {
            s0: 0.0,
            s1: 0.0,
            s2: 0.0,
            s3: 0.0
        })
        .is_err());
    }

    #[test]
    fn psi_branch_follows_quadrant() {
        for &psi in &[-1.5, -0.9, -0.2, 0.0, 0.4, 1.2, 1.55] {
            let s = jones_to_stokes(&angles_to_jones(0.1, psi)).unwrap();
            let a = stokes_to_angles(&s).unwrap();
            assert!((a.psi - psi).abs() < 1e-12, "{psi} -> {}", a.psi);
        }
        assert!((canonical_psi(FRAC_PI_2) + FRAC_PI_2).abs() < 1e-15);
        assert!((canonical_psi(PI + 0.3) - 0.3).abs() < 1e-12);
        assert!((canonical_psi(-PI - 0.3) + 0.3).abs() < 1e-12);
    }

    #[test]
    fn alpha_delta_reference_cases() {
        let (alpha, delta) = alpha_delta_from_angles(FRAC_PI_4, 0.0);
        assert!((alpha - FRAC_PI_4).abs() < 1e-12 && (delta - FRAC_PI_2).abs() < 1e-12);
        let (alpha, delta) = alpha_delta_from_angles(FRAC_PI_4, 0.7);
        assert!((alpha - FRAC_PI_4).abs() < 1e-12 && (delta - FRAC_PI_2).abs() < 1e-12);
        let (alpha, delta) = alpha_delta_from_angles(0.0, FRAC_PI_4);
        assert!((alpha - FRAC_PI_4).abs() < 1e-12 && delta.abs() < 1e-12);
        // Ψ = 0 with χ ≠ 0: δ = ±π/2 (−π/2 represented as 3π/2).
        let (_, delta) = alpha_delta_from_angles(-0.3, 0.0);
        assert!((delta - 1.5 * PI).abs() < 1e-12);
        assert_eq!(alpha_delta_from_angles(0.0, 0.0), (0.0, 0.0));
    }

    #[test]
    fn alpha_delta_matches_closed_forms() {
        // cos 2α = cos 2χ cos 2Ψ and tan δ = tan 2χ / sin 2Ψ.
        for &(chi, psi) in &[(0.3, 0.5), (-0.2, 1.1), (0.7, -0.4), (-0.05, -1.3)] {
            let (alpha, delta) = alpha_delta_from_angles(chi, psi);
            let lhs = (2.0 * alpha).cos();
            let rhs = (2.0 * chi).cos() * (2.0 * psi).cos();
            assert!((lhs - rhs).abs() < 1e-12);
            let t = (2.0 * chi).tan() / (2.0 * psi).sin();
            assert!((delta.tan() - t).abs() < 1e-9 * (1.0 + t.abs()));
        }
    }

    #[test]
    fn dipole_state_round_trips() {
        let d = DipoleState::new(0.4, -0.3);
        let (alpha, delta) = d.alpha_delta();
        let back = DipoleState::from_alpha_delta(alpha, delta).unwrap();
        assert!((back.psi_d - 0.4).abs() < 1e-12 && (back.chi_d + 0.3).abs() < 1e-12);
        let u = d.unit_jones();
        assert!(((u[0].norm_sqr() + u[1].norm_sqr()) - 1.0).abs() < 1e-15);
        assert_eq!(d.conjugate().chi_d, 0.3);
        let j = DipoleState { d0: 2.5, ..d }.jones();
        assert!(((j[0].norm_sqr() + j[1].norm_sqr()) - 6.25).abs() < 1e-12);
        assert_eq!(Handedness::Right.flipped(), Handedness::Left);
        assert_eq!(DipoleState::<f64>::circular(Handedness::Left).chi_d, -FRAC_PI_4);
    }

    #[test]
    fn quadratic_model_reproduces_quadratics() {
        let q = |x: f64, y: f64| 0.7 - 0.2 * x + 0.5 * y + 1.3 * x * x - 0.4 * x * y + 0.9 * y * y;
        let mut s = [[0.0; 3]; 3];
        for (iy, row) in s.iter_mut().enumerate() {
            for (ix, v) in row.iter_mut().enumerate() {
                *v = q(ix as f64 - 1.0, iy as f64 - 1.0);
            }
        }
        for (x, y) in [(0.0, 0.0), (0.3, -0.45), (-0.9, 0.8)] {
            assert!((quadratic_model(&s, x, y) - q(x, y)).abs() < 1e-13);
        }
        let (ox, oy, v) = quadratic_minimum(&s).unwrap();
        // Stationary point of q: [2.6 −0.4; −0.4 1.8]·(x, y) = (0.2, −0.5).
        let det = 2.6 * 1.8 - 0.16;
        let (mx, my) = ((1.8 * 0.2 - 0.4 * 0.5) / det, (2.6 * -0.5 + 0.4 * 0.2) / det);
        assert!((ox - mx).abs() < 1e-13 && (oy - my).abs() < 1e-13 && (v - q(mx, my)).abs() < 1e-13);
    }

    /// Mode on a small grid whose in-plane field is `f(x, y)`, x and y in cell units.
    fn synthetic(nx: usize, ny: usize, f: impl Fn(f64, f64) -> [Complex<f64>; 2]) -> BlochMode<f64> {
        let frame = GridFrame {
            dx: 1.0,
            dy: 1.0,
            x0: 0.0,
            y0: -(ny as f64 - 1.0) / 2.0,
        };
        let ex = Grid2::from_fn(nx, ny, |ix, iy| f(frame.x(ix), frame.y(iy))[0]);
        let ey = Grid2::from_fn(nx, ny, |ix, iy| f(frame.x(ix), frame.y(iy))[1]);
        BlochMode {
            k: 0.3,
            omega: 0.25,
            band_index: 0,
            hz: Grid2::filled(nx, ny, c(1.0, 0.0)),
            ex,
            ey,
            frame,
            eps: None,
            n_g: None,
            guided: true,
            confinement: 1.0,
        }
    }

    #[test]
    fn isolated_c_point_is_located() {
        // Ey = i Ex exactly at (5.3, 0.6): a right-handed C point.
        let mode = synthetic(12, 13, |x, y| {
            [c(1.0, 0.0), c(0.0, 1.0) + c(0.08 * (x - 5.3), 0.05 * (y - 0.6))]
        });
        let pts = find_c_points(&polarization_field(&mode));
        assert_eq!(pts.len(), 1, "{pts:?}");
        let p = pts[0];
        assert_eq!(p.handedness, Handedness::Right);
        assert!((p.x - 5.3).abs() < 0.1 && (p.y - 0.6).abs() < 0.1, "{p:?}");
        assert!(p.circularity > CIRCULAR_THRESHOLD);
    }

    #[test]
    fn mirrored_field_mirrors_c_points() {
        let mode = synthetic(12, 15, |x, y| {
            [
                c(1.0, 0.0),
                c(0.0, 1.0) + c(0.08 * (x - 5.3), 0.05 * (y - 0.6)) * c(1.0, 0.3),
            ]
        });
        let orig = find_c_points(&polarization_field(&mode));
        let mirr = find_c_points(&polarization_field(&mode.mirrored_y()));
        assert_eq!(orig.len(), mirr.len());
        assert!(!orig.is_empty());
        for p in &orig {
            let q = mirr
                .iter()
                .find(|q| q.ix == p.ix && q.iy == mode.ny() - 1 - p.iy)
                .expect("mirror partner");
            assert_eq!(q.handedness, p.handedness.flipped());
            assert!((q.x - p.x).abs() < 1e-12 && (q.y + p.y).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_circular_field_has_no_c_points() {
        let mode = synthetic(8, 8, |_, _| [c(1.0, 0.0), c(0.0, 1.0)]);
        let field = polarization_field(&mode);
        assert_eq!(field.circular_points(), 64);
        assert!(find_c_points(&field).is_empty());
    }

    #[test]
    fn holes_are_masked() {
        let mut mode = synthetic(8, 8, |_, _| [c(1.0, 0.0), c(0.5, 0.0)]);
        let mut eps = Grid2::filled(8, 8, 8.41);
        eps[(3, 3)] = 1.0;
        eps[(4, 3)] = 4.0; // below (1 + 8.41)/2
        mode.eps = Some(eps);
        let field = polarization_field(&mode);
        assert!(field.angles[(3, 3)].is_none() && field.angles[(4, 3)].is_none());
        assert!(field.angles[(5, 3)].is_some());
        assert_eq!(field.valid.iter().filter(|&&v| v).count(), 62);
    }
}
