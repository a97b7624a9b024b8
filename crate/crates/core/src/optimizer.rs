//! Dipole-polarization optimization of the averaged directionality.
//!
//! The objective `⟨D⟩(Ψ_d, χ_d)` is evaluated on a dense grid and then
//! refined around its extrema on successively 10× finer local grids.

use log::warn;
use num_traits::Float;
use rayon::prelude::*;

use crate::coupling::{
    analyze_dipole, average_with, AreaThresholds, AveragingMask, DirectionalityResult, MaskKind, Weighting,
};
use crate::error::{Error, Result};
use crate::geometry::DielectricGrid;
use crate::grid::Grid2;
use crate::modesolver::{solve_guided, BlochMode, SolverOptions};
use crate::polarization::{angles_to_jones, canonical_psi, DipoleState};
use crate::scalar::Real;

/// Values closer than this are treated as tied.
const TIE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanOptions {
    pub n_psi: usize,
    pub n_chi: usize,
    /// Number of local 10× refinement levels after the coarse scan.
    pub refine_levels: usize,
    pub weighting: Weighting,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            n_psi: 181,
            n_chi: 91,
            refine_levels: 2,
            weighting: Weighting::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint<T> {
    pub psi: T,
    pub chi: T,
    pub value: T,
}

impl<T: Real> ScanPoint<T> {
    pub fn dipole(&self) -> DipoleState<T> {
        DipoleState::new(self.psi, self.chi)
    }
}

/// Best point found at one refinement level (level 0 is the coarse scan).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinementLevel<T> {
    pub level: usize,
    pub step_psi: T,
    pub step_chi: T,
    pub best: ScanPoint<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult<T> {
    /// Ψ grid, `[−π/2, π/2]` inclusive.
    pub psi: Vec<T>,
    /// χ grid, `[−π/4, π/4]` inclusive and symmetric about 0.
    pub chi: Vec<T>,
    /// `⟨D⟩` indexed as `(psi index, chi index)`.
    pub values: Grid2<T>,
    pub argmax: ScanPoint<T>,
    pub argmin: ScanPoint<T>,
    pub max_trace: Vec<RefinementLevel<T>>,
    pub min_trace: Vec<RefinementLevel<T>>,
}

impl<T: Real> OptimizationResult<T> {
    /// The extremum whose dipole has `χ ≤ 0`: the two are time-reversal partners.
    pub fn negative_chi_optimum(&self) -> ScanPoint<T> {
        if self.argmax.chi <= T::zero() {
            self.argmax
        } else {
            self.argmin
        }
    }
}

/// `n` points spanning `[−h, h]` with exact antisymmetry about the centre.
pub fn symmetric_grid<T: Real>(n: usize, h: T) -> Vec<T> {
    if n == 1 {
        return vec![T::zero()];
    }
    let m = T::from_usize_lossy(n - 1);
    (0..n)
        .map(|i| {
            let num = T::from_usize_lossy(2 * i) - m;
            num / m * h
        })
        .collect()
}

pub fn scan_objective<T: Real>(
    mode: &BlochMode<T>,
    mask: &AveragingMask,
    opts: &ScanOptions,
) -> Result<OptimizationResult<T>> {
    if opts.n_psi < 8 || opts.n_chi < 8 {
        return Err(Error::Domain(format!(
            "scan grid {}×{} too coarse (at least 8×8)",
            opts.n_psi, opts.n_chi
        )));
    }
    mask.cells.ensure_shape(mode.ex.shape())?;
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    let psi = symmetric_grid(opts.n_psi, T::FRAC_PI_2());
    let chi = symmetric_grid(opts.n_chi, T::FRAC_PI_4());
    let points: Vec<(T, T)> = chi.iter().flat_map(|&c| psi.iter().map(move |&p| (p, c))).collect();
    let values = evaluate(mode, mask, opts.weighting, &points)?;
    let grid = Grid2::from_vec(opts.n_psi, opts.n_chi, values.clone())?;
    let scanned: Vec<ScanPoint<T>> = points
        .iter()
        .zip(&values)
        .map(|(&(p, c), &v)| ScanPoint {
            psi: p,
            chi: c,
            value: v,
        })
        .collect();
    let step_psi = psi[1] - psi[0];
    let step_chi = chi[1] - chi[0];
    let max_trace = refine(mode, mask, opts, &scanned, step_psi, step_chi, T::one())?;
    let min_trace = refine(mode, mask, opts, &scanned, step_psi, step_chi, -T::one())?;
    Ok(OptimizationResult {
        psi,
        chi,
        values: grid,
        argmax: max_trace.last().expect("coarse level present").best,
        argmin: min_trace.last().expect("coarse level present").best,
        max_trace,
        min_trace,
    })
}

fn evaluate<T: Real>(
    mode: &BlochMode<T>,
    mask: &AveragingMask,
    weighting: Weighting,
    points: &[(T, T)],
) -> Result<Vec<T>> {
    points
        .par_iter()
        .map(|&(p, c)| average_with(&angles_to_jones(c, canonical_psi(p)), mode, mask, weighting))
        .collect()
}

/// Best of `points` for `sign · value`, ties broken by smallest `|χ|`, then `|Ψ|`.
fn select<T: Real>(points: &[ScanPoint<T>], sign: T) -> ScanPoint<T> {
    let top = points
        .iter()
        .map(|p| sign * p.value)
        .fold(T::neg_infinity(), Float::max);
    let tie = T::lit(TIE);
    *points
        .iter()
        .filter(|p| sign * p.value >= top - tie)
        .min_by(|a, b| {
            Float::abs(a.chi)
                .partial_cmp(&Float::abs(b.chi))
                .unwrap()
                .then(Float::abs(a.psi).partial_cmp(&Float::abs(b.psi)).unwrap())
        })
        .expect("non-empty scan")
}

fn refine<T: Real>(
    mode: &BlochMode<T>,
    mask: &AveragingMask,
    opts: &ScanOptions,
    coarse: &[ScanPoint<T>],
    step_psi: T,
    step_chi: T,
    sign: T,
) -> Result<Vec<RefinementLevel<T>>> {
    let mut best = select(coarse, sign);
    let mut trace = vec![RefinementLevel {
        level: 0,
        step_psi,
        step_chi,
        best,
    }];
    let (mut sp, mut sc) = (step_psi, step_chi);
    let ten = T::lit(10.0);
    let chi_limit = T::FRAC_PI_4();
    for level in 1..=opts.refine_levels {
        let (fp, fc) = (sp / ten, sc / ten);
        let mut points = Vec::with_capacity(21 * 21);
        for j in -10i32..=10 {
            let c = best.chi + fc * T::from_i32(j).unwrap();
            if Float::abs(c) > chi_limit {
                continue;
            }
            for i in -10i32..=10 {
                points.push((canonical_psi(best.psi + fp * T::from_i32(i).unwrap()), c));
            }
        }
        let values = evaluate(mode, mask, opts.weighting, &points)?;
        let mut candidates: Vec<ScanPoint<T>> = points
            .iter()
            .zip(&values)
            .map(|(&(p, c), &v)| ScanPoint {
                psi: p,
                chi: c,
                value: v,
            })
            .collect();
        // The seed itself always competes, so refinement never loses ground.
        candidates.push(best);
        best = select(&candidates, sign);
        trace.push(RefinementLevel {
            level,
            step_psi: fp,
            step_chi: fc,
            best,
        });
        sp = fp;
        sc = fc;
    }
    Ok(trace)
}

/// Side-by-side analysis of two dipoles on one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct DipoleComparison<T> {
    pub a: DirectionalityResult<T>,
    pub b: DirectionalityResult<T>,
    /// High-|D| area of `a` over that of `b`.
    pub area_ratio: T,
    /// High-|D| ∩ high-F area of `a` over that of `b`.
    pub overlap_ratio: T,
}

fn ratio<T: Real>(a: T, b: T) -> T {
    if b > T::zero() {
        a / b
    } else if a > T::zero() {
        T::infinity()
    } else {
        T::one()
    }
}

pub fn compare_dipoles<T: Real>(
    mode: &BlochMode<T>,
    a: &DipoleState<T>,
    b: &DipoleState<T>,
    mask: &AveragingMask,
    weighting: Weighting,
    h_eff: T,
    thresholds: &AreaThresholds,
) -> Result<DipoleComparison<T>> {
    let ra = analyze_dipole(a, mode, mask, weighting, h_eff, thresholds)?;
    let rb = analyze_dipole(b, mode, mask, weighting, h_eff, thresholds)?;
    Ok(DipoleComparison {
        area_ratio: ratio(ra.threshold_area, rb.threshold_area),
        overlap_ratio: ratio(ra.overlap_area, rb.overlap_area),
        a: ra,
        b: rb,
    })
}

/// Optimum of the guided mode at one wavenumber.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint<T> {
    pub k: T,
    pub omega: T,
    pub n_g: Option<T>,
    pub result: OptimizationResult<T>,
}

/// Solves the guided mode at each `k` and optimizes the dipole on it.
/// Wavenumbers without a guided mode among the lowest `n_bands` are skipped.
pub fn k_sweep<T: Real>(
    eps: &DielectricGrid<T>,
    k_list: &[T],
    mask: MaskKind,
    n_bands: usize,
    solver: &SolverOptions<T>,
    opts: &ScanOptions,
) -> Result<Vec<SweepPoint<T>>> {
    let mut out = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let Some(mode) = solve_guided(eps, k, n_bands, solver)? else {
            warn!("no guided mode at k = {k}; skipped");
            continue;
        };
        let m = AveragingMask::for_mode(&mode, mask);
        let result = scan_objective(&mode, &m, opts)?;
        out.push(SweepPoint {
            k,
            omega: mode.omega,
            n_g: mode.n_g,
            result,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use num_complex::Complex;

    use super::*;
    use crate::grid::GridFrame;

    fn elliptical_mode() -> BlochMode<f64> {
        let (nx, ny) = (12, 16);
        let frame = GridFrame {
            dx: 433.0 / nx as f64,
            dy: 30.0,
            x0: 0.0,
            y0: -30.0 * (ny as f64 - 1.0) / 2.0,
        };
        let f = |ix: usize, iy: usize| {
            let x = ix as f64 / nx as f64 * std::f64::consts::TAU;
            let y = frame.y(iy) / 200.0;
            [
                Complex::new(x.cos() * (1.0 + y), 0.3 * y),
                Complex::new(0.2 * x.sin(), 0.8 * y + 0.1 * x.cos()),
            ]
        };
        BlochMode {
            k: 0.31,
            omega: 0.27,
            band_index: 0,
            ex: Grid2::from_fn(nx, ny, |ix, iy| f(ix, iy)[0]),
            ey: Grid2::from_fn(nx, ny, |ix, iy| f(ix, iy)[1]),
            hz: Grid2::filled(nx, ny, Complex::new(1.0, 0.0)),
            frame,
            eps: Some(Grid2::filled(nx, ny, 8.41)),
            n_g: Some(3.5),
            guided: true,
            confinement: 1.0,
        }
    }

    fn small_opts() -> ScanOptions {
        ScanOptions {
            n_psi: 37,
            n_chi: 19,
            ..Default::default()
        }
    }

    #[test]
    fn grids_are_symmetric() {
        let g = symmetric_grid(91, std::f64::consts::FRAC_PI_4);
        assert_eq!(g[45], 0.0);
        for i in 0..91 {
            assert_eq!(g[i], -g[90 - i]);
        }
        assert_eq!(g[0], -std::f64::consts::FRAC_PI_4);
    }

    #[test]
    fn objective_structure() {
        let mode = elliptical_mode();
        let mask = AveragingMask::for_mode(&mode, MaskKind::Half);
        let r = scan_objective(&mode, &mask, &small_opts()).unwrap();
        let (np, nc) = (r.psi.len(), r.chi.len());
        for ip in 0..np {
            // Linear dipoles give exactly zero.
            assert_eq!(r.values[(ip, nc / 2)], 0.0);
            for ic in 0..nc {
                let v = r.values[(ip, ic)];
                assert!(v.abs() <= 1.0);
                assert!((v + r.values[(ip, nc - 1 - ic)]).abs() < 1e-10);
            }
        }
        // Ψ = ±π/2 describe the same ellipse.
        for ic in 0..nc {
            assert!((r.values[(0, ic)] - r.values[(np - 1, ic)]).abs() < 1e-12);
        }
        assert!((r.argmax.value + r.argmin.value).abs() < 1e-10);
        assert!(r.argmax.value > 0.0);
    }

    #[test]
    fn refinement_never_loses_ground() {
        let mode = elliptical_mode();
        let mask = AveragingMask::for_mode(&mode, MaskKind::Half);
        let r = scan_objective(&mode, &mask, &small_opts()).unwrap();
        assert_eq!(r.max_trace.len(), 3);
        for w in r.max_trace.windows(2) {
            assert!(w[1].best.value >= w[0].best.value);
            assert!((w[1].step_psi - w[0].step_psi / 10.0).abs() < 1e-15);
        }
        for w in r.min_trace.windows(2) {
            assert!(w[1].best.value <= w[0].best.value);
        }
        // The refined optimum beats every coarse grid value.
        let coarse_max = r.values.iter().cloned().fold(f64::MIN, f64::max);
        assert!(r.argmax.value >= coarse_max);
        let direct = average_with(&r.argmax.dipole().unit_jones(), &mode, &mask, Weighting::Uniform).unwrap();
        assert!((direct - r.argmax.value).abs() < 1e-14);
        assert!(r.negative_chi_optimum().chi <= 0.0);
    }

    #[test]
    fn rejects_coarse_grids() {
        let mode = elliptical_mode();
        let mask = AveragingMask::for_mode(&mode, MaskKind::Half);
        let opts = ScanOptions {
            n_chi: 5,
            ..small_opts()
        };
        assert!(matches!(scan_objective(&mode, &mask, &opts), Err(Error::Domain(_))));
    }

    #[test]
    fn identical_dipoles_compare_equal() {
        let mode = elliptical_mode();
        let mask = AveragingMask::for_mode(&mode, MaskKind::Half);
        let d = DipoleState::new(0.1, -0.4);
        let cmp = compare_dipoles(
            &mode,
            &d,
            &d,
            &mask,
            Weighting::Uniform,
            0.64,
            &AreaThresholds::default(),
        )
        .unwrap();
        assert_eq!(cmp.area_ratio, 1.0);
        assert_eq!(cmp.overlap_ratio, 1.0);
        assert_eq!(cmp.a, cmp.b);
        assert_eq!(ratio(0.0, 0.0), 1.0);
        assert_eq!(ratio(1.0, 0.0), f64::INFINITY);
    }

    #[test]
    fn ties_prefer_small_angles() {
        let pts = [
            ScanPoint {
                psi: 0.3,
                chi: -0.2,
                value: 0.5,
            },
            ScanPoint {
                psi: -0.1,
                chi: 0.2,
                value: 0.5,
            },
            ScanPoint {
                psi: 0.05,
                chi: 0.1,
                value: 0.5,
            },
            ScanPoint {
                psi: 0.0,
                chi: 0.1,
                value: 0.5,
            },
        ];
        let best = select(&pts, 1.0);
        assert_eq!((best.psi, best.chi), (0.0, 0.1));
    }
}
