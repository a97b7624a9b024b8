//! Glide-plane waveguide supercell and its rasterized dielectric function.
//!
//! The supercell spans one lattice constant along the waveguide (`x`) and
//! `supercell_width_wy` across it (`y`), centred on the missing row at `y = 0`.
//! Each side carries `rows_per_side` rows of air holes on a hexagonal lattice.
//! The first row on each side is pulled toward the core by `first_row_shift_l1`;
//! the remaining rows keep their lattice positions, so the gap between the
//! outermost rows of neighbouring supercells is narrowed by `2·l1`.
//!
//! Permittivity values are cell averages: each grid point gets the area-weighted
//! mean of air and dielectric over a square of side `smoothing_width` (or over
//! its own grid cell when no width is given), computed from exact disc/rectangle
//! intersection areas.

use num_traits::Float;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Grid2, GridFrame};
use crate::scalar::{half, two, Real};

/// Number of lattice rows on each side of the line defect.
pub const DEFAULT_ROWS_PER_SIDE: usize = 8;

/// Parametric description of the waveguide supercell. Lengths are in nm.
#[derive(Debug, Clone, PartialEq)]
pub struct SupercellGeometry<T> {
    pub lattice_constant_a: T,
    pub hole_radius_r: T,
    pub first_row_shift_l1: T,
    pub glide: bool,
    pub effective_index: T,
    pub supercell_width_wy: T,
    pub grid_nx: usize,
    pub grid_ny: usize,
    /// Side of the averaging square; `None` averages over the grid cell.
    pub smoothing_width: Option<T>,
    pub rows_per_side: usize,
}

impl<T: Real> SupercellGeometry<T> {
    /// Default glide-plane waveguide for lattice constant `a` (nm).
    pub fn glide_waveguide(a: T) -> Self {
        let sqrt3 = T::lit(3.0).sqrt();
        let l1 = a * sqrt3 / T::lit(20.0);
        Self {
            lattice_constant_a: a,
            hole_radius_r: T::lit(0.3) * a,
            first_row_shift_l1: l1,
            glide: true,
            effective_index: T::lit(2.9),
            supercell_width_wy: T::lit(8.5) * a * sqrt3 - two::<T>() * l1,
            grid_nx: 16,
            grid_ny: 256,
            smoothing_width: None,
            rows_per_side: DEFAULT_ROWS_PER_SIDE,
        }
    }

    /// Slab of uniform index `n` filling the default supercell footprint.
    pub fn homogeneous(a: T, n: T) -> Self {
        Self {
            hole_radius_r: T::zero(),
            effective_index: n,
            ..Self::glide_waveguide(a)
        }
    }

    pub fn dx(&self) -> T {
        self.lattice_constant_a / T::from_usize_lossy(self.grid_nx)
    }

    pub fn dy(&self) -> T {
        self.supercell_width_wy / T::from_usize_lossy(self.grid_ny)
    }

    /// Largest admissible grid spacing, `0.4·a/n`.
    pub fn mesh_limit(&self) -> T {
        T::lit(0.4) * self.lattice_constant_a / self.effective_index
    }

    pub fn row_spacing(&self) -> T {
        self.lattice_constant_a * T::lit(3.0).sqrt() * half()
    }

    /// Hole centres inside the supercell (before periodic imaging).
    pub fn holes(&self) -> Vec<Hole<T>> {
        let a = self.lattice_constant_a;
        let r = self.hole_radius_r;
        if r <= T::zero() {
            return Vec::new();
        }
        let mut holes = Vec::with_capacity(2 * self.rows_per_side);
        for side in [-1i32, 1] {
            for row in 1..=self.rows_per_side {
                let mut dist = T::from_usize_lossy(row) * self.row_spacing();
                if row == 1 {
                    dist = dist - self.first_row_shift_l1;
                }
                let mut cx = if row % 2 == 1 { half::<T>() * a } else { T::zero() };
                if self.glide && side > 0 {
                    cx = cx + half::<T>() * a;
                }
                if cx >= a {
                    cx = cx - a;
                }
                let cy = if side > 0 { dist } else { -dist };
                holes.push(Hole { cx, cy, r });
            }
        }
        holes
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.lattice_constant_a;
        if !(a > T::zero()) {
            return Err(Error::Geometry("lattice constant must be positive".into()));
        }
        if self.grid_nx == 0 || self.grid_ny == 0 {
            return Err(Error::Geometry("grid dimensions must be positive".into()));
        }
        if !(self.effective_index >= T::one()) {
            return Err(Error::Geometry("effective index must be at least 1".into()));
        }
        if !(self.supercell_width_wy > T::zero()) {
            return Err(Error::Geometry("supercell width must be positive".into()));
        }
        if self.hole_radius_r < T::zero() || self.hole_radius_r >= half::<T>() * a {
            return Err(Error::Geometry(format!(
                "hole radius {} must lie in [0, a/2)",
                self.hole_radius_r
            )));
        }
        if let Some(w) = self.smoothing_width {
            if !(w > T::zero()) {
                return Err(Error::Geometry("smoothing width must be positive".into()));
            }
        }
        let limit = self.mesh_limit();
        for (axis, spacing) in [("x", self.dx()), ("y", self.dy())] {
            if spacing > limit {
                return Err(Error::Resolution {
                    axis,
                    spacing: spacing.to_f64_lossy(),
                    limit: limit.to_f64_lossy(),
                });
            }
        }
        let extent = self.row_spacing() * T::from_usize_lossy(self.rows_per_side) + self.hole_radius_r;
        if extent > half::<T>() * self.supercell_width_wy {
            return Err(Error::Geometry(format!(
                "{} rows per side do not fit in a supercell of width {}",
                self.rows_per_side, self.supercell_width_wy
            )));
        }
        self.check_overlaps(&self.holes(), self.supercell_width_wy)
    }

    fn check_overlaps(&self, holes: &[Hole<T>], period_y: T) -> Result<()> {
        let a = self.lattice_constant_a;
        for (i, p) in holes.iter().enumerate() {
            for q in holes.iter().skip(i) {
                for (sx, sy) in image_shifts(a, period_y) {
                    let ddx = q.cx + sx - p.cx;
                    let ddy = q.cy + sy - p.cy;
                    let d2 = ddx * ddx + ddy * ddy;
                    if d2 == T::zero() {
                        // The hole itself.
                        continue;
                    }
                    if d2.sqrt() < p.r + q.r {
                        return Err(Error::Geometry(format!(
                            "holes at ({}, {}) and ({}, {}) overlap",
                            p.cx, p.cy, q.cx, q.cy
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

impl Default for SupercellGeometry<f64> {
    fn default() -> Self {
        Self::glide_waveguide(433.0)
    }
}

/// Circular air hole.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hole<T> {
    pub cx: T,
    pub cy: T,
    pub r: T,
}

/// Rasterized relative permittivity on a periodic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DielectricGrid<T> {
    pub eps: Grid2<T>,
    pub frame: GridFrame<T>,
    /// Period along x (the lattice constant), nm.
    pub period_x: T,
    /// Period along y (the supercell width), nm.
    pub period_y: T,
    pub background_eps: T,
    pub holes: Vec<Hole<T>>,
    pub smoothing_width: Option<T>,
}

impl<T: Real> DielectricGrid<T> {
    pub fn nx(&self) -> usize {
        self.eps.nx()
    }

    pub fn ny(&self) -> usize {
        self.eps.ny()
    }

    pub fn lattice_constant(&self) -> T {
        self.period_x
    }

    /// Uniform medium of permittivity `eps` on the given grid.
    pub fn uniform(nx: usize, ny: usize, period_x: T, period_y: T, eps: T) -> Self {
        let frame = centred_frame(nx, ny, period_x, period_y);
        Self {
            eps: Grid2::filled(nx, ny, eps),
            frame,
            period_x,
            period_y,
            background_eps: eps,
            holes: Vec::new(),
            smoothing_width: None,
        }
    }

    /// Defect-free reference crystal matching this grid's holes, or `None` for
    /// structures without holes. See [`build_bulk_reference`].
    pub fn bulk_reference(&self) -> Result<Option<DielectricGrid<T>>> {
        let Some(hole) = self.holes.first() else {
            return Ok(None);
        };
        let geom = SupercellGeometry {
            lattice_constant_a: self.period_x,
            hole_radius_r: hole.r,
            first_row_shift_l1: T::zero(),
            glide: false,
            effective_index: self.background_eps.sqrt(),
            supercell_width_wy: self.period_y,
            grid_nx: self.nx(),
            grid_ny: self.ny(),
            smoothing_width: self.smoothing_width,
            rows_per_side: 0,
        };
        build_bulk_reference(&geom).map(Some)
    }

    /// Distance from `(x, y)` to the nearest hole boundary (negative inside a hole).
    /// Returns `None` when the structure has no holes.
    pub fn distance_to_holes(&self, x: T, y: T) -> Option<T> {
        let mut best: Option<T> = None;
        for h in &self.holes {
            for (sx, sy) in image_shifts(self.period_x, self.period_y) {
                let ddx = x - h.cx - sx;
                let ddy = y - h.cy - sy;
                let d = (ddx * ddx + ddy * ddy).sqrt() - h.r;
                best = Some(match best {
                    Some(b) if b <= d => b,
                    _ => d,
                });
            }
        }
        best
    }

    /// Inverse permittivity tensor `(xx, xy, yy)` per cell.
    ///
    /// Interface cells use `P⟨ε⁻¹⟩ + (1 − P)⟨ε⟩⁻¹`, with `P` the projector on
    /// the local interface normal (radial from the nearest hole centre), so
    /// fields normal to the interface see the harmonic mean and tangential ones
    /// the arithmetic mean. Cells away from interfaces get `1/ε`.
    pub fn inverse_permittivity(&self) -> Vec<[T; 3]> {
        let bg = self.background_eps;
        let contrast = bg - T::one();
        let tiny = T::lit(1e-12);
        let mut out = Vec::with_capacity(self.eps.len());
        for iy in 0..self.ny() {
            for ix in 0..self.nx() {
                let e = self.eps[(ix, iy)];
                let alpha = T::one() / e;
                let fill = if contrast > T::zero() {
                    (bg - e) / contrast
                } else {
                    T::zero()
                };
                if fill <= tiny || fill >= T::one() - tiny || self.holes.is_empty() {
                    out.push([alpha, T::zero(), alpha]);
                    continue;
                }
                let (x, y) = (self.frame.x(ix), self.frame.y(iy));
                let mut best = (T::infinity(), T::zero(), T::zero());
                for h in &self.holes {
                    for (sx, sy) in image_shifts(self.period_x, self.period_y) {
                        let (ddx, ddy) = (x - h.cx - sx, y - h.cy - sy);
                        let d = (ddx * ddx + ddy * ddy).sqrt() - h.r;
                        if Float::abs(d) < best.0 {
                            best = (Float::abs(d), ddx, ddy);
                        }
                    }
                }
                let len = (best.1 * best.1 + best.2 * best.2).sqrt();
                if !(len > T::zero()) {
                    out.push([alpha, T::zero(), alpha]);
                    continue;
                }
                let (nx, ny) = (best.1 / len, best.2 / len);
                let beta = fill + (T::one() - fill) / bg - alpha;
                out.push([alpha + beta * nx * nx, beta * nx * ny, alpha + beta * ny * ny]);
            }
        }
        out
    }

    /// Mean permittivity over grid cells whose centre lies in `[y_lo, y_hi)`.
    pub fn mean_eps_in_band(&self, y_lo: T, y_hi: T) -> Option<T> {
        let mut sum = T::zero();
        let mut count = 0usize;
        for iy in 0..self.ny() {
            let y = self.frame.y(iy);
            if y >= y_lo && y < y_hi {
                for ix in 0..self.nx() {
                    sum = sum + self.eps[(ix, iy)];
                    count += 1;
                }
            }
        }
        (count > 0).then(|| sum / T::from_usize_lossy(count))
    }

    /// Total air area implied by the cell averages, in nm².
    pub fn air_area(&self) -> T {
        let contrast = self.background_eps - T::one();
        if contrast <= T::zero() {
            return T::zero();
        }
        let area = self.frame.cell_area();
        self.eps
            .iter()
            .fold(T::zero(), |acc, &e| acc + (self.background_eps - e) / contrast * area)
    }
}

/// Grid with `x` nodes starting at 0 and `y` cell centres symmetric about 0.
fn centred_frame<T: Real>(nx: usize, ny: usize, period_x: T, period_y: T) -> GridFrame<T> {
    let dx = period_x / T::from_usize_lossy(nx);
    let dy = period_y / T::from_usize_lossy(ny);
    GridFrame {
        dx,
        dy,
        x0: T::zero(),
        y0: -half::<T>() * period_y + half::<T>() * dy,
    }
}

fn image_shifts<T: Real>(px: T, py: T) -> impl Iterator<Item = (T, T)> {
    (-1i32..=1)
        .flat_map(move |i| (-1i32..=1).map(move |j| (T::from_i32(i).unwrap() * px, T::from_i32(j).unwrap() * py)))
}

/// Rasterizes the supercell permittivity.
pub fn build_dielectric<T: Real>(geom: &SupercellGeometry<T>) -> Result<DielectricGrid<T>> {
    geom.validate()?;
    let holes = geom.holes();
    Ok(rasterize(
        geom.grid_nx,
        geom.grid_ny,
        geom.lattice_constant_a,
        geom.supercell_width_wy,
        geom.effective_index,
        geom.smoothing_width,
        holes,
    ))
}

/// Defect-free reference crystal on the rectangular `a × √3·a` cell with the
/// same hole radius, index and grid spacing. Used to locate the projected bulk
/// bands.
pub fn build_bulk_reference<T: Real>(geom: &SupercellGeometry<T>) -> Result<DielectricGrid<T>> {
    let a = geom.lattice_constant_a;
    let height = two::<T>() * geom.row_spacing();
    let limit = geom.mesh_limit();
    let spacing = geom.dy().min(limit);
    let mut ny = (height / spacing).ceil().to_usize().unwrap_or(2).max(2);
    if ny % 2 == 1 {
        ny += 1;
    }
    let r = geom.hole_radius_r;
    let holes = if r > T::zero() {
        vec![
            Hole {
                cx: T::zero(),
                cy: T::zero(),
                r,
            },
            Hole {
                cx: half::<T>() * a,
                cy: geom.row_spacing(),
                r,
            },
        ]
    } else {
        Vec::new()
    };
    let probe = SupercellGeometry {
        supercell_width_wy: height,
        grid_ny: ny,
        rows_per_side: 0,
        ..geom.clone()
    };
    if r >= half::<T>() * a {
        return Err(Error::Geometry("hole radius must be below a/2".into()));
    }
    probe.check_overlaps(&holes, height)?;
    Ok(rasterize(
        geom.grid_nx,
        ny,
        a,
        height,
        geom.effective_index,
        geom.smoothing_width,
        holes,
    ))
}

fn rasterize<T: Real>(
    nx: usize,
    ny: usize,
    period_x: T,
    period_y: T,
    index: T,
    smoothing_width: Option<T>,
    holes: Vec<Hole<T>>,
) -> DielectricGrid<T> {
    let frame = centred_frame(nx, ny, period_x, period_y);
    let background = index * index;
    let (wx, wy) = match smoothing_width {
        Some(w) => (w, w),
        None => (frame.dx, frame.dy),
    };
    let window = wx * wy;
    let mut eps = vec![background; nx * ny];
    eps.par_chunks_mut(nx).enumerate().for_each(|(iy, row)| {
        let y = frame.y(iy);
        let (y0, y1) = (y - half::<T>() * wy, y + half::<T>() * wy);
        for (ix, cell) in row.iter_mut().enumerate() {
            let x = frame.x(ix);
            let (x0, x1) = (x - half::<T>() * wx, x + half::<T>() * wx);
            let mut air = T::zero();
            for h in &holes {
                for (sx, sy) in image_shifts(period_x, period_y) {
                    air = air + disc_rect_area(h.cx + sx, h.cy + sy, h.r, x0, x1, y0, y1);
                }
            }
            let fill = (air / window).min(T::one()).max(T::zero());
            *cell = fill + (T::one() - fill) * background;
        }
    });
    DielectricGrid {
        eps: Grid2::from_vec(nx, ny, eps).expect("rasterized grid has nx*ny cells"),
        frame,
        period_x,
        period_y,
        background_eps: background,
        holes,
        smoothing_width,
    }
}

/// Exact area of the intersection of a disc and an axis-aligned rectangle.
pub fn disc_rect_area<T: Real>(cx: T, cy: T, r: T, x0: T, x1: T, y0: T, y1: T) -> T {
    if r <= T::zero() || x1 <= x0 || y1 <= y0 {
        return T::zero();
    }
    // Shift to the disc centre.
    let (x0, x1, y0, y1) = (x0 - cx, x1 - cx, y0 - cy, y1 - cy);
    let lo = x0.max(-r);
    let hi = x1.min(r);
    if hi <= lo || y0 >= r || y1 <= -r {
        return T::zero();
    }
    let r2 = r * r;
    let chord = |x: T| (r2 - x * x).max(T::zero()).sqrt();
    // Antiderivative of the half-chord sqrt(r² - x²).
    let prim = |x: T| {
        let x = x.max(-r).min(r);
        half::<T>() * (x * chord(x) + r2 * (x / r).max(-T::one()).min(T::one()).asin())
    };

    let mut cuts = vec![lo, hi];
    for yb in [y0, y1] {
        if Float::abs(yb) < r {
            let c = chord(yb);
            cuts.push(-c);
            cuts.push(c);
        }
    }
    cuts.retain(|&c| c >= lo && c <= hi);
    cuts.sort_by(|p, q| p.partial_cmp(q).unwrap());

    let mut area = T::zero();
    for w in cuts.windows(2) {
        let (u, v) = (w[0], w[1]);
        if v <= u {
            continue;
        }
        let mid = half::<T>() * (u + v);
        let h = chord(mid);
        let top_is_chord = h < y1;
        let bottom_is_chord = -h > y0;
        let top = if top_is_chord { h } else { y1 };
        let bottom = if bottom_is_chord { -h } else { y0 };
        if top <= bottom {
            continue;
        }
        let chord_int = prim(v) - prim(u);
        let len = v - u;
        let top_int = if top_is_chord { chord_int } else { y1 * len };
        let bottom_int = if bottom_is_chord { -chord_int } else { y0 * len };
        area = area + (top_int - bottom_int);
    }
    area.max(T::zero())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Midpoint rule over x of the clipped chord length.
    fn brute_area(cx: f64, cy: f64, r: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
        let n = 400_000;
        let h = (x1 - x0) / n as f64;
        (0..n)
            .map(|i| {
                let x = x0 + (i as f64 + 0.5) * h - cx;
                if x.abs() >= r {
                    return 0.0;
                }
                let c = (r * r - x * x).sqrt();
                let top = (cy + c).min(y1);
                let bottom = (cy - c).max(y0);
                (top - bottom).max(0.0) * h
            })
            .sum()
    }

    #[test]
    fn disc_rect_area_matches_quadrature() {
        let cases = [
            (0.0, 0.0, 1.0, -2.0, 2.0, -2.0, 2.0),
            (0.0, 0.0, 1.0, 0.0, 2.0, 0.0, 2.0),
            (0.3, -0.2, 0.7, -0.1, 0.5, -0.4, 0.1),
            (0.0, 0.0, 1.0, 0.5, 0.9, -0.3, 0.95),
            (0.0, 0.0, 1.0, -0.2, 0.2, 0.9, 1.5),
        ];
        for (cx, cy, r, x0, x1, y0, y1) in cases {
            let exact = disc_rect_area(cx, cy, r, x0, x1, y0, y1);
            let counted = brute_area(cx, cy, r, x0, x1, y0, y1);
            assert!((exact - counted).abs() < 1e-6, "{exact} vs {counted}");
        }
        assert!((disc_rect_area(0.0, 0.0, 1.0, -3.0, 3.0, -3.0, 3.0) - PI).abs() < 1e-14);
        assert_eq!(disc_rect_area(0.0, 0.0, 1.0, 2.0, 3.0, 0.0, 1.0), 0.0);
    }

    #[test]
    fn no_holes_gives_uniform_slab() {
        let geom = SupercellGeometry::<f64>::homogeneous(433.0, 2.9);
        let grid = build_dielectric(&geom).unwrap();
        assert!(grid.eps.iter().all(|&e| e == 2.9 * 2.9));
    }

    #[test]
    fn bulk_fill_fraction_matches_hexagonal_lattice() {
        let geom = SupercellGeometry::<f64>::default();
        let grid = build_dielectric(&geom).unwrap();
        let a = geom.lattice_constant_a;
        let r = geom.hole_radius_r;
        let f = 2.0 * PI * r * r / (3f64.sqrt() * a * a);
        assert!((f - 0.3265).abs() < 1e-3);
        let n2 = geom.effective_index.powi(2);
        let expected = f + (1.0 - f) * n2;
        // Rows 2..=6 on the lower side: a band of five whole row spacings.
        let s = geom.row_spacing();
        let mean = grid.mean_eps_in_band(-6.5 * s, -1.5 * s).unwrap();
        assert!((mean - expected).abs() / expected < 0.01, "{mean} vs {expected}");
    }

    #[test]
    fn glide_shifts_upper_side_by_half_period() {
        let glide = SupercellGeometry::<f64>::default();
        let plain = SupercellGeometry {
            glide: false,
            ..glide.clone()
        };
        let eg = build_dielectric(&glide).unwrap();
        let ep = build_dielectric(&plain).unwrap();
        let nx = glide.grid_nx;
        let ny = glide.grid_ny;
        for iy in ny / 2..ny - 4 {
            for ix in 0..nx {
                let shifted = (ix + nx - nx / 2) % nx;
                assert_eq!(eg.eps[(ix, iy)], ep.eps[(shifted, iy)]);
            }
        }
        // The lower side is untouched.
        for iy in 4..ny / 2 {
            for ix in 0..nx {
                assert_eq!(eg.eps[(ix, iy)], ep.eps[(ix, iy)]);
            }
        }
    }

    #[test]
    fn glide_symmetry_of_grid() {
        let geom = SupercellGeometry {
            first_row_shift_l1: 0.0,
            ..SupercellGeometry::<f64>::default()
        };
        let g = build_dielectric(&geom).unwrap();
        let (nx, ny) = (g.nx(), g.ny());
        for iy in 0..ny {
            for ix in 0..nx {
                let mirrored = g.eps[((ix + nx / 2) % nx, ny - 1 - iy)];
                assert!((g.eps[(ix, iy)] - mirrored).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn periodic_in_x() {
        // Holes sitting on x = 0 must rasterize symmetrically across the seam.
        let g = build_dielectric(&SupercellGeometry::<f64>::default()).unwrap();
        let nx = g.nx();
        for iy in 0..g.ny() {
            for ix in 1..nx {
                assert!((g.eps[(ix, iy)] - g.eps[(nx - ix, iy)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn refinement_changes_hole_area_little() {
        let coarse = SupercellGeometry::<f64>::default();
        let fine = SupercellGeometry {
            grid_nx: 2 * coarse.grid_nx,
            grid_ny: 2 * coarse.grid_ny,
            ..coarse.clone()
        };
        let ac = build_dielectric(&coarse).unwrap().air_area();
        let af = build_dielectric(&fine).unwrap().air_area();
        assert!(((ac - af) / af).abs() < 0.005);
        let exact = 16.0 * PI * coarse.hole_radius_r.powi(2);
        assert!(((af - exact) / exact).abs() < 1e-9);
    }

    #[test]
    fn smoothing_square_keeps_fill() {
        let geom = SupercellGeometry {
            smoothing_width: Some(40.0),
            ..SupercellGeometry::<f64>::default()
        };
        let g = build_dielectric(&geom).unwrap();
        assert!(g.eps.iter().all(|&e| (1.0..=2.9 * 2.9 + 1e-12).contains(&e)));
        let exact = 16.0 * PI * geom.hole_radius_r.powi(2);
        assert!(((g.air_area() - exact) / exact).abs() < 0.01);
    }

    #[test]
    fn invalid_geometries_rejected() {
        let base = SupercellGeometry::<f64>::default();
        let big = SupercellGeometry {
            hole_radius_r: 0.5 * base.lattice_constant_a,
            ..base.clone()
        };
        assert!(matches!(build_dielectric(&big), Err(Error::Geometry(_))));
        let coarse = SupercellGeometry {
            grid_nx: 4,
            ..base.clone()
        };
        assert!(matches!(
            build_dielectric(&coarse),
            Err(Error::Resolution { axis: "x", .. })
        ));
        // Pulling the first rows deep into the core makes them collide across it.
        let crowded = SupercellGeometry {
            first_row_shift_l1: 0.8 * base.lattice_constant_a,
            ..base
        };
        assert!(matches!(build_dielectric(&crowded), Err(Error::Geometry(_))));
    }

    #[test]
    fn f32_rasterization_agrees() {
        let g64 = build_dielectric(&SupercellGeometry::<f64>::default()).unwrap();
        let g32 = build_dielectric(&SupercellGeometry::<f32>::glide_waveguide(433.0)).unwrap();
        for (a, b) in g64.eps.iter().zip(g32.eps.iter()) {
            assert!((a - *b as f64).abs() < 1e-3);
        }
    }

    #[test]
    fn bulk_reference_fill_fraction() {
        let geom = SupercellGeometry::<f64>::default();
        let bulk = build_bulk_reference(&geom).unwrap();
        let a = geom.lattice_constant_a;
        let f = 2.0 * PI * geom.hole_radius_r.powi(2) / (3f64.sqrt() * a * a);
        let area = bulk.period_x * bulk.period_y;
        assert!((bulk.air_area() / area - f).abs() < 1e-9);
    }
}
