//! Chiral emitter–mode coupling: emission rates into the two propagation
//! directions, directionality maps and averages, and Purcell factors.
//!
//! The backward mode is the time reverse of the forward one, `e₋ₖ = eₖ*`, so a
//! dipole `d̂` emits forward at `γ₊ = |d̂*·e|²` and backward at `γ₋ = |d̂*·e*|²`.
//! The directionality is `D = (γ₊ − γ₋)/(γ₊ + γ₋)`.

use std::fmt;
use std::str::FromStr;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::grid::Grid2;
use crate::modesolver::{group_index, BlochMode};
use crate::polarization::{dielectric_mask, quadratic_model, DipoleState};
use crate::scalar::{Jones, Real};

/// Points whose total rate falls below this fraction of the map maximum are undefined.
pub const UNDEFINED_RATE: f64 = 1e-14;

/// Effective membrane thickness (units of a) turning area integrals into volumes.
pub const DEFAULT_H_EFF: f64 = 0.64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    /// `0 ≤ y ≤ y_core`.
    Half,
    /// `|y| ≤ y_core`.
    Full,
}

impl FromStr for MaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half" => Ok(MaskKind::Half),
            "full" => Ok(MaskKind::Full),
            other => Err(Error::Config(format!("unknown mask `{other}` (expected half or full)"))),
        }
    }
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskKind::Half => "half",
            MaskKind::Full => "full",
        })
    }
}

/// How points of a mask are weighted in an average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    #[default]
    Uniform,
    /// Weighted by the local `|E|²`, i.e. by the total emission rate.
    Intensity,
}

impl FromStr for Weighting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Weighting::Uniform),
            "intensity" => Ok(Weighting::Intensity),
            other => Err(Error::Config(format!(
                "unknown weighting `{other}` (expected uniform or intensity)"
            ))),
        }
    }
}

/// Emitter positions entering an average: dielectric points of the core.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragingMask {
    pub kind: MaskKind,
    /// Core half-width in nm.
    pub y_core: f64,
    /// Points closer than this to an air region (nm) are excluded.
    pub exclusion_radius: f64,
    pub cells: Grid2<bool>,
}

impl AveragingMask {
    /// Mask with the default core half-width `a√3/2` and no exclusion zone.
    pub fn for_mode<T: Real>(mode: &BlochMode<T>, kind: MaskKind) -> Self {
        let a = mode.lattice_constant().to_f64_lossy();
        Self::new(mode, kind, a * 3f64.sqrt() / 2.0, 0.0)
    }

    pub fn new<T: Real>(mode: &BlochMode<T>, kind: MaskKind, y_core: f64, exclusion_radius: f64) -> Self {
        let dielectric = dielectric_mask(mode);
        let near = (exclusion_radius > 0.0).then(|| near_air(mode, exclusion_radius));
        let slack = 1e-9 * mode.frame.dy.to_f64_lossy();
        let cells = Grid2::from_fn(mode.nx(), mode.ny(), |ix, iy| {
            let y = mode.frame.y(iy).to_f64_lossy();
            let in_band = match kind {
                MaskKind::Half => y >= -slack && y <= y_core + slack,
                MaskKind::Full => y.abs() <= y_core + slack,
            };
            in_band && dielectric[(ix, iy)] && !near.as_ref().is_some_and(|n| n[(ix, iy)])
        });
        Self {
            kind,
            y_core,
            exclusion_radius,
            cells,
        }
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }
}

/// Dielectric points within `radius` (nm) of an air–dielectric interface.
///
/// The interface is placed half a cell from the centre of the nearest air
/// cell. Without an attached permittivity nothing is near air.
pub fn near_air<T: Real>(mode: &BlochMode<T>, radius: f64) -> Grid2<bool> {
    let (nx, ny) = (mode.nx(), mode.ny());
    if mode.eps.is_none() {
        return Grid2::filled(nx, ny, false);
    }
    let dielectric = dielectric_mask(mode);
    let dx = mode.frame.dx.to_f64_lossy();
    let dy = mode.frame.dy.to_f64_lossy();
    let reach = radius + 0.5 * dx.min(dy);
    let rx = (reach / dx).ceil() as isize;
    let ry = (reach / dy).ceil() as isize;
    Grid2::from_fn(nx, ny, |ix, iy| {
        if !dielectric[(ix, iy)] {
            return false;
        }
        for sy in -ry..=ry {
            for sx in -rx..=rx {
                let d2 = (sx as f64 * dx).powi(2) + (sy as f64 * dy).powi(2);
                if d2 > reach * reach {
                    continue;
                }
                let jx = (ix as isize + sx).rem_euclid(nx as isize) as usize;
                let jy = (iy as isize + sy).rem_euclid(ny as isize) as usize;
                if !dielectric[(jx, jy)] {
                    return true;
                }
            }
        }
        false
    })
}

/// `(γ₊, γ₋) = (|d̂*·e|², |d̂*·e*|²)` for a unit dipole `d̂`.
#[inline]
pub fn emission_rates<T: Real>(d: &Jones<T>, e: &Jones<T>) -> (T, T) {
    let dx = d[0].conj();
    let dy = d[1].conj();
    let plus = dx * e[0] + dy * e[1];
    let minus = dx * e[0].conj() + dy * e[1].conj();
    (plus.norm_sqr(), minus.norm_sqr())
}

/// Pointwise directionality; `None` where the total rate is negligible.
pub fn directionality_map<T: Real>(d: &DipoleState<T>, mode: &BlochMode<T>) -> Grid2<Option<T>> {
    map_with(&d.unit_jones(), mode)
}

/// Directionality at a sub-grid point (nm) from the quadratic model of the
/// nodal values around the nearest node — the local model C points are
/// located with. `None` if a stencil node is undefined or the point lies
/// within one row of the supercell edge in y.
pub fn directionality_at<T: Real>(d: &DipoleState<T>, mode: &BlochMode<T>, x: T, y: T) -> Option<T> {
    let (nx, ny) = (mode.nx() as i64, mode.ny() as i64);
    let fx = (x - mode.frame.x0) / mode.frame.dx;
    let fy = (y - mode.frame.y0) / mode.frame.dy;
    let (cx, cy) = (fx.round(), fy.round());
    let (ix, iy) = (cx.to_i64()?, cy.to_i64()?);
    if iy < 1 || iy >= ny - 1 {
        return None;
    }
    let u = d.unit_jones();
    let mut stencil = [[T::zero(); 3]; 3];
    for (sy, row) in stencil.iter_mut().enumerate() {
        for (sx, cell) in row.iter_mut().enumerate() {
            // D is phase-invariant, so no Bloch factor across the cell edge.
            let jx = (ix + sx as i64 - 1).rem_euclid(nx) as usize;
            let jy = (iy + sy as i64 - 1) as usize;
            let (p, q) = emission_rates(&u, &mode.e_at(jx, jy));
            if !(p + q > T::zero()) {
                return None;
            }
            *cell = (p - q) / (p + q);
        }
    }
    let v = quadratic_model(&stencil, fx - cx, fy - cy);
    Some(Float::max(-T::one(), Float::min(T::one(), v)))
}

/// [`directionality_map`] for a unit Jones vector `u`.
pub(crate) fn map_with<T: Real>(u: &Jones<T>, mode: &BlochMode<T>) -> Grid2<Option<T>> {
    let rates = mode.ex.as_slice().iter().zip(mode.ey.as_slice());
    let rates: Vec<(T, T)> = rates.map(|(&ex, &ey)| emission_rates(u, &[ex, ey])).collect();
    let max = rates.iter().fold(T::zero(), |m, &(p, q)| Float::max(m, p + q));
    let floor = T::lit(UNDEFINED_RATE) * max;
    let values = rates
        .into_iter()
        .map(|(p, q)| {
            let total = p + q;
            if total > floor && total > T::zero() {
                let v = (p - q) / total;
                debug_assert!(Float::abs(v) <= T::one() + T::epsilon() * T::lit(4.0));
                Some(Float::max(-T::one(), Float::min(T::one(), v)))
            } else {
                None
            }
        })
        .collect();
    Grid2::from_vec(mode.nx(), mode.ny(), values).expect("mode grids share a shape")
}

/// Mean of `D` over the defined points of `mask`, accumulated in storage order.
pub fn average_directionality<T: Real>(
    d: &DipoleState<T>,
    mode: &BlochMode<T>,
    mask: &AveragingMask,
    weighting: Weighting,
) -> Result<T> {
    mask.cells.ensure_shape(mode.ex.shape())?;
    average_with(&d.unit_jones(), mode, mask, weighting)
}

pub(crate) fn average_with<T: Real>(
    u: &Jones<T>,
    mode: &BlochMode<T>,
    mask: &AveragingMask,
    weighting: Weighting,
) -> Result<T> {
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    let map = map_with(u, mode);
    let mut sum = T::zero();
    let mut weight = T::zero();
    for (o, (&inside, d)) in mask.cells.iter().zip(map.iter()).enumerate() {
        let (true, Some(d)) = (inside, d) else {
            continue;
        };
        let w = match weighting {
            Weighting::Uniform => T::one(),
            Weighting::Intensity => mode.ex.as_slice()[o].norm_sqr() + mode.ey.as_slice()[o].norm_sqr(),
        };
        sum = sum + w * *d;
        weight = weight + w;
    }
    if weight > T::zero() {
        Ok(sum / weight)
    } else {
        Err(Error::EmptyMask)
    }
}

/// Purcell factor at every grid point.
///
/// `F = 3π n_g |d̂*·ê|² / (ω² √ε)` in units `a = c = 1`, where `ê` is normalized
/// by `∫ ε|e|²` over the supercell area times `h_eff` (units of a).
pub fn purcell_map<T: Real>(d: &DipoleState<T>, mode: &BlochMode<T>, h_eff: T) -> Result<Grid2<T>> {
    let eps = mode.eps.as_ref().ok_or_else(|| Error::MissingComponent("eps".into()))?;
    eps.ensure_shape(mode.ex.shape())?;
    let n_g = match mode.n_g {
        Some(n) => n,
        None => group_index(mode)?,
    };
    let a = mode.lattice_constant();
    let cell = mode.frame.cell_area() / (a * a);
    let norm = mode
        .ex
        .iter()
        .zip(mode.ey.iter())
        .zip(eps.iter())
        .fold(T::zero(), |acc, ((ex, ey), &e)| {
            acc + e * (ex.norm_sqr() + ey.norm_sqr())
        })
        * cell
        * h_eff;
    let omega = T::TAU() * mode.omega;
    if !(norm > T::zero()) || !(omega > T::zero()) {
        return Err(Error::Domain("mode has no field energy or zero frequency".into()));
    }
    let u = d.unit_jones();
    let prefactor = T::lit(3.0) * T::PI() * n_g / (omega * omega * norm);
    let values = mode
        .ex
        .iter()
        .zip(mode.ey.iter())
        .zip(eps.iter())
        .map(|((&ex, &ey), &e)| {
            let (p, _) = emission_rates(&u, &[ex, ey]);
            prefactor * p / e.sqrt()
        })
        .collect();
    Grid2::from_vec(mode.nx(), mode.ny(), values)
}

/// Thresholds for the area metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreaThresholds {
    /// `|D|` counted as highly directional.
    pub d_threshold: f64,
    /// Purcell threshold as a fraction of the map maximum over the region.
    pub purcell_fraction: f64,
    /// Emitter localization length ξ (nm).
    pub xi_nm: f64,
    /// Distance from hole boundaries treated as fabrication-sensitive (nm).
    pub proximity_nm: f64,
}

impl Default for AreaThresholds {
    fn default() -> Self {
        Self {
            d_threshold: 0.9,
            purcell_fraction: 0.5,
            xi_nm: 40.0,
            proximity_nm: 40.0,
        }
    }
}

/// Directionality and Purcell maps of one dipole with their area statistics.
/// Areas are in units of a².
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalityResult<T> {
    pub dipole: DipoleState<T>,
    pub d_map: Grid2<Option<T>>,
    pub d_avg: T,
    pub purcell_map: Grid2<T>,
    /// Area of defined points in the analysis region.
    pub region_area: T,
    /// Area with `D ≥ d_threshold`.
    pub area_plus: T,
    /// Area with `D ≤ −d_threshold`.
    pub area_minus: T,
    /// `area_plus + area_minus`.
    pub threshold_area: T,
    /// `threshold_area / (π ξ²)`.
    pub xi_ratio: T,
    /// Absolute Purcell threshold used for the overlap.
    pub purcell_threshold: T,
    pub purcell_max: T,
    /// Area with `|D| ≥ d_threshold` and `F ≥ purcell_threshold`.
    pub overlap_area: T,
    /// Fraction of `threshold_area` within `proximity_nm` of a hole.
    pub proximity_fraction: T,
}

/// Area statistics of a `D` map and a Purcell map over `region`.
#[allow(clippy::too_many_arguments)]
pub fn area_metrics<T: Real>(
    dipole: DipoleState<T>,
    d_map: Grid2<Option<T>>,
    d_avg: T,
    purcell_map: Grid2<T>,
    region: &Grid2<bool>,
    proximity: &Grid2<bool>,
    cell_area: T,
    lattice_constant: T,
    thresholds: &AreaThresholds,
) -> Result<DirectionalityResult<T>> {
    let shape = d_map.shape();
    purcell_map.ensure_shape(shape)?;
    region.ensure_shape(shape)?;
    proximity.ensure_shape(shape)?;
    let d_thr = T::lit(thresholds.d_threshold);
    let purcell_max = purcell_map
        .iter()
        .zip(region.iter())
        .filter(|(_, &r)| r)
        .fold(T::zero(), |m, (&f, _)| Float::max(m, f));
    let purcell_threshold = T::lit(thresholds.purcell_fraction) * purcell_max;
    let (mut region_n, mut plus_n, mut minus_n, mut overlap_n, mut near_n) = (0usize, 0, 0, 0, 0);
    for o in 0..region.len() {
        if !region.as_slice()[o] {
            continue;
        }
        let Some(d) = d_map.as_slice()[o] else {
            continue;
        };
        region_n += 1;
        let high = if d >= d_thr {
            plus_n += 1;
            true
        } else if d <= -d_thr {
            minus_n += 1;
            true
        } else {
            false
        };
        if high {
            if purcell_map.as_slice()[o] >= purcell_threshold {
                overlap_n += 1;
            }
            if proximity.as_slice()[o] {
                near_n += 1;
            }
        }
    }
    let area = |n: usize| T::from_usize_lossy(n) * cell_area;
    let high_n = plus_n + minus_n;
    let xi = T::lit(thresholds.xi_nm) / lattice_constant;
    Ok(DirectionalityResult {
        dipole,
        d_map,
        d_avg,
        purcell_map,
        region_area: area(region_n),
        area_plus: area(plus_n),
        area_minus: area(minus_n),
        threshold_area: area(high_n),
        xi_ratio: area(high_n) / (T::PI() * xi * xi),
        purcell_threshold,
        purcell_max,
        overlap_area: area(overlap_n),
        proximity_fraction: if high_n > 0 {
            T::from_usize_lossy(near_n) / T::from_usize_lossy(high_n)
        } else {
            T::zero()
        },
    })
}

/// Full analysis of one dipole: maps, average over `mask`, and area
/// statistics over the dielectric core `|y| ≤ y_core` of the same mask.
pub fn analyze_dipole<T: Real>(
    d: &DipoleState<T>,
    mode: &BlochMode<T>,
    mask: &AveragingMask,
    weighting: Weighting,
    h_eff: T,
    thresholds: &AreaThresholds,
) -> Result<DirectionalityResult<T>> {
    let d_map = directionality_map(d, mode);
    let d_avg = average_directionality(d, mode, mask, weighting)?;
    let f_map = purcell_map(d, mode, h_eff)?;
    let region = AveragingMask::new(mode, MaskKind::Full, mask.y_core, mask.exclusion_radius);
    let proximity = near_air(mode, thresholds.proximity_nm);
    let a = mode.lattice_constant();
    area_metrics(
        *d,
        d_map,
        d_avg,
        f_map,
        &region.cells,
        &proximity,
        mode.frame.cell_area() / (a * a),
        a,
        thresholds,
    )
}
