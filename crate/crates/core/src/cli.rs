//! Command-line front end: run configuration, subcommands and the end-to-end
//! pipeline with its self-checks.
//!
//! Configuration files are TOML. Geometry keys sit at the top level (so a bare
//! geometry file is a valid run configuration); `[solver]`, `[analysis]` and
//! `[output]` tables hold the rest. Lengths are in nm; angles are in radians
//! unless the key ends in `_deg`. Unknown keys are rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coupling::{
    analyze_dipole, average_directionality, directionality_map, purcell_map, AreaThresholds, AveragingMask,
    DirectionalityResult, MaskKind, Weighting, DEFAULT_H_EFF,
};
use crate::error::{Error, Result};
use crate::geometry::{build_dielectric, DielectricGrid, SupercellGeometry, DEFAULT_ROWS_PER_SIDE};
use crate::grid::Grid2;
use crate::io::{fmt_num, write_heatmap, write_mode_file, CsvTable, FieldGridFile, Provenance};
use crate::modesolver::{band_scan_with, linspace, solve_modes_with, BandStructure, BlochMode, SolverOptions};
use crate::optimizer::{k_sweep, scan_objective, OptimizationResult, ScanOptions, SweepPoint};
use crate::polarization::{find_c_points, polarization_field, DipoleState, Handedness, PolarizationField};

/// Dipole-state angles: radians, or with a `pi` / `deg` suffix.
pub fn parse_angle(s: &str) -> Result<f64> {
    let t = s.trim();
    let bad = || Error::Config(format!("invalid angle `{s}`"));
    let (num, scale) = if let Some(v) = t.strip_suffix("pi").or_else(|| t.strip_suffix('π')) {
        (v, std::f64::consts::PI)
    } else if let Some(v) = t.strip_suffix("deg") {
        (v, std::f64::consts::PI / 180.0)
    } else {
        (t, 1.0)
    };
    let num = num.trim();
    let v: f64 = match num {
        "" | "+" => 1.0,
        "-" => -1.0,
        _ => num.parse().map_err(|_| bad())?,
    };
    if scale == 1.0 && (num.is_empty() || num == "+" || num == "-") {
        return Err(bad());
    }
    let v = v * scale;
    if !v.is_finite() {
        return Err(bad());
    }
    Ok(v)
}

/// `psi,chi` pair.
pub fn parse_dipole(s: &str) -> Result<DipoleState<f64>> {
    let (p, c) = s
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("dipole `{s}` must be `psi,chi`")))?;
    Ok(DipoleState::new(parse_angle(p)?, parse_angle(c)?))
}

/// Angle as `0.1234 rad (0.0393π)`.
pub fn fmt_angle(x: f64) -> String {
    format!("{x:+.4} rad ({:+.4}π)", x / std::f64::consts::PI)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub lattice_constant_a: Option<f64>,
    pub hole_radius_r: Option<f64>,
    pub first_row_shift_l1: Option<f64>,
    pub glide: Option<bool>,
    pub effective_index: Option<f64>,
    #[serde(rename = "supercell_width_Wy")]
    pub supercell_width_wy: Option<f64>,
    pub grid_nx: Option<usize>,
    pub grid_ny: Option<usize>,
    pub smoothing_width: Option<f64>,
    pub rows_per_side: Option<usize>,
    pub solver: SolverConfig,
    pub analysis: AnalysisConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub n_bands: usize,
    /// Wavenumber of the analysed mode (2π/a).
    pub k: f64,
    /// Band index of the analysed mode; the best-confined guided mode when absent.
    pub band: Option<usize>,
    pub kmin: f64,
    pub kmax: f64,
    /// Band-scan samples; 0 skips the scan.
    pub nk: usize,
    /// Wavenumbers of the optimization sweep; empty skips it.
    pub k_sweep: Vec<f64>,
    pub tol: Option<f64>,
    pub max_iter: usize,
    pub bulk_reference: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_bands: 24,
            k: 0.31,
            band: None,
            kmin: 0.30,
            kmax: 0.50,
            nk: 11,
            k_sweep: Vec::new(),
            tol: None,
            max_iter: 1000,
            bulk_reference: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// `half` or `full`.
    pub mask: String,
    /// `uniform` or `intensity`.
    pub weighting: String,
    /// Core half-width (nm); `a√3/2` when absent.
    pub y_core: Option<f64>,
    pub exclusion_radius: f64,
    pub d_threshold: f64,
    pub purcell_fraction: f64,
    pub xi: f64,
    pub proximity: f64,
    /// Effective thickness (nm); `0.64 a` when absent.
    pub h_eff: Option<f64>,
    pub n_psi: usize,
    pub n_chi: usize,
    pub refine_levels: usize,
    /// Dipoles compared in the report: `opt`, `circ`, `lin`, `rcp`, `lcp`, `custom`.
    pub dipoles: Vec<String>,
    pub dipole_psi: Option<f64>,
    pub dipole_chi: Option<f64>,
    pub dipole_psi_deg: Option<f64>,
    pub dipole_chi_deg: Option<f64>,
    /// Pixels per grid cell in heatmaps.
    pub heatmap_scale: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        let t = AreaThresholds::default();
        let s = ScanOptions::default();
        Self {
            mask: "half".into(),
            weighting: "uniform".into(),
            y_core: None,
            exclusion_radius: 0.0,
            d_threshold: t.d_threshold,
            purcell_fraction: t.purcell_fraction,
            xi: t.xi_nm,
            proximity: t.proximity_nm,
            h_eff: None,
            n_psi: s.n_psi,
            n_chi: s.n_chi,
            refine_levels: s.refine_levels,
            dipoles: vec!["opt".into(), "circ".into()],
            dipole_psi: None,
            dipole_chi: None,
            dipole_psi_deg: None,
            dipole_chi_deg: None,
            heatmap_scale: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub geometry: String,
    pub bands: String,
    pub mode: String,
    pub polarization: String,
    pub cpoints: String,
    pub objective: String,
    pub comparison: String,
    pub sweep: String,
    pub report: String,
    pub heatmaps: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            geometry: "eps.grid".into(),
            bands: "bands.csv".into(),
            mode: "mode.field".into(),
            polarization: "pol.csv".into(),
            cpoints: "cpoints.csv".into(),
            objective: "objective.csv".into(),
            comparison: "compare.csv".into(),
            sweep: "sweep.csv".into(),
            report: "report.txt".into(),
            heatmaps: true,
        }
    }
}

fn cfg_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(cfg_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.mask_kind()?;
        self.weighting()?;
        self.custom_dipole()?;
        for name in &self.analysis.dipoles {
            if !["opt", "circ", "lin", "rcp", "lcp", "custom"].contains(&name.as_str()) {
                return Err(Error::Config(format!("unknown dipole `{name}`")));
            }
        }
        if self.solver.n_bands == 0 {
            return Err(Error::Config("solver.n_bands must be positive".into()));
        }
        Ok(())
    }

    /// The geometry with unspecified fields at their defaults for the given `a`.
    pub fn geometry(&self) -> SupercellGeometry<f64> {
        let a = self.lattice_constant_a.unwrap_or(433.0);
        let base = SupercellGeometry::glide_waveguide(a);
        let l1 = self.first_row_shift_l1.unwrap_or(base.first_row_shift_l1);
        SupercellGeometry {
            lattice_constant_a: a,
            hole_radius_r: self.hole_radius_r.unwrap_or(base.hole_radius_r),
            first_row_shift_l1: l1,
            glide: self.glide.unwrap_or(base.glide),
            effective_index: self.effective_index.unwrap_or(base.effective_index),
            supercell_width_wy: self.supercell_width_wy.unwrap_or(8.5 * a * 3f64.sqrt() - 2.0 * l1),
            grid_nx: self.grid_nx.unwrap_or(base.grid_nx),
            grid_ny: self.grid_ny.unwrap_or(base.grid_ny),
            smoothing_width: self.smoothing_width,
            rows_per_side: self.rows_per_side.unwrap_or(DEFAULT_ROWS_PER_SIDE),
        }
    }

    pub fn solver_options(&self) -> SolverOptions<f64> {
        let d = SolverOptions::default();
        SolverOptions {
            tol: self.solver.tol.unwrap_or(d.tol),
            max_iter: self.solver.max_iter,
            bulk_reference: self.solver.bulk_reference,
            ..d
        }
    }

    pub fn mask_kind(&self) -> Result<MaskKind> {
        self.analysis.mask.parse()
    }

    pub fn weighting(&self) -> Result<Weighting> {
        self.analysis.weighting.parse()
    }

    pub fn thresholds(&self) -> AreaThresholds {
        AreaThresholds {
            d_threshold: self.analysis.d_threshold,
            purcell_fraction: self.analysis.purcell_fraction,
            xi_nm: self.analysis.xi,
            proximity_nm: self.analysis.proximity,
        }
    }

    pub fn scan_options(&self) -> Result<ScanOptions> {
        Ok(ScanOptions {
            n_psi: self.analysis.n_psi,
            n_chi: self.analysis.n_chi,
            refine_levels: self.analysis.refine_levels,
            weighting: self.weighting()?,
        })
    }

    /// `h_eff` in units of a for a mode with lattice constant `a` (nm).
    pub fn h_eff(&self, a: f64) -> f64 {
        self.analysis.h_eff.map_or(DEFAULT_H_EFF, |h| h / a)
    }

    pub fn mask(&self, mode: &BlochMode<f64>, kind: MaskKind) -> AveragingMask {
        let a = mode.lattice_constant();
        let y_core = self.analysis.y_core.unwrap_or(a * 3f64.sqrt() / 2.0);
        AveragingMask::new(mode, kind, y_core, self.analysis.exclusion_radius)
    }

    /// The `custom` dipole of the analysis table, if one is configured.
    pub fn custom_dipole(&self) -> Result<Option<DipoleState<f64>>> {
        let an = &self.analysis;
        let pick = |rad: Option<f64>, deg: Option<f64>, name: &str| match (rad, deg) {
            (Some(_), Some(_)) => Err(Error::Config(format!("both {name} and {name}_deg given"))),
            (Some(r), None) => Ok(Some(r)),
            (None, Some(d)) => Ok(Some(d.to_radians())),
            (None, None) => Ok(None),
        };
        let psi = pick(an.dipole_psi, an.dipole_psi_deg, "dipole_psi")?;
        let chi = pick(an.dipole_chi, an.dipole_chi_deg, "dipole_chi")?;
        match (psi, chi) {
            (None, None) => Ok(None),
            (p, c) => Ok(Some(DipoleState::new(p.unwrap_or(0.0), c.unwrap_or(0.0)))),
        }
    }

    /// Stable text of the configuration that determines the results
    /// (output locations excluded).
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        toml::to_string(&c).expect("configuration serializes")
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::for_config(&self.canonical())
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

pub fn bands_table(bands: &BandStructure<f64>) -> CsvTable {
    let mut t = CsvTable::new(&["k", "band", "omega", "n_g", "confinement", "guided_flag"]);
    for s in &bands.samples {
        let mut order: Vec<usize> = (0..s.omega.len()).collect();
        order.sort_by_key(|&i| s.label[i]);
        for i in order {
            t.push(vec![
                fmt_num(s.k),
                s.label[i].to_string(),
                fmt_num(s.omega[i]),
                opt_num(s.n_g[i]),
                fmt_num(s.confinement[i]),
                s.guided[i].to_string(),
            ]);
        }
    }
    t
}

pub fn polarization_table(field: &PolarizationField<f64>) -> CsvTable {
    let mut t = CsvTable::new(&["x", "y", "S0", "S1", "S2", "S3", "chi", "psi", "handedness"]);
    for iy in 0..field.ny() {
        for ix in 0..field.nx() {
            let s = field.stokes[(ix, iy)];
            let a = field.angles[(ix, iy)];
            let hand = if field.valid[(ix, iy)] {
                s.handedness().map_or("", |h| h.label())
            } else {
                ""
            };
            t.push(vec![
                fmt_num(field.frame.x(ix)),
                fmt_num(field.frame.y(iy)),
                fmt_num(s.s0),
                fmt_num(s.s1),
                fmt_num(s.s2),
                fmt_num(s.s3),
                opt_num(a.map(|a| a.chi)),
                opt_num(a.map(|a| a.psi)),
                hand.to_string(),
            ]);
        }
    }
    t
}

pub fn cpoints_table(field: &PolarizationField<f64>) -> CsvTable {
    let mut t = CsvTable::new(&["x", "y", "ix", "iy", "handedness", "circularity"]);
    for p in find_c_points(field) {
        t.push(vec![
            fmt_num(p.x),
            fmt_num(p.y),
            p.ix.to_string(),
            p.iy.to_string(),
            p.handedness.label().to_string(),
            fmt_num(p.circularity),
        ]);
    }
    t
}

pub fn objective_table(r: &OptimizationResult<f64>) -> CsvTable {
    let mut t = CsvTable::new(&["psi", "chi", "d_avg"]);
    for (ic, &chi) in r.chi.iter().enumerate() {
        for (ip, &psi) in r.psi.iter().enumerate() {
            t.push(vec![fmt_num(psi), fmt_num(chi), fmt_num(r.values[(ip, ic)])]);
        }
    }
    t
}

pub fn map_table(mode: &BlochMode<f64>, d: &Grid2<Option<f64>>, f: &Grid2<f64>) -> CsvTable {
    let mut t = CsvTable::new(&["x", "y", "D", "F"]);
    for iy in 0..mode.ny() {
        for ix in 0..mode.nx() {
            t.push(vec![
                fmt_num(mode.frame.x(ix)),
                fmt_num(mode.frame.y(iy)),
                opt_num(d[(ix, iy)]),
                fmt_num(f[(ix, iy)]),
            ]);
        }
    }
    t
}

pub fn sweep_table(points: &[SweepPoint<f64>]) -> CsvTable {
    let mut t = CsvTable::new(&["k", "omega", "n_g", "psi", "chi", "d_avg"]);
    for p in points {
        let b = p.result.argmax;
        t.push(vec![
            fmt_num(p.k),
            fmt_num(p.omega),
            opt_num(p.n_g),
            fmt_num(b.psi),
            fmt_num(b.chi),
            fmt_num(b.value),
        ]);
    }
    t
}

/// Fraction of valid core points in each half carrying that half's majority handedness.
pub fn handedness_purity(field: &PolarizationField<f64>, y_core: f64) -> [(usize, usize); 2] {
    let mut counts = [[0usize; 2]; 2];
    for iy in 0..field.ny() {
        let y = field.frame.y(iy);
        if y.abs() > y_core {
            continue;
        }
        for ix in 0..field.nx() {
            if !field.valid[(ix, iy)] {
                continue;
            }
            let half = usize::from(y < 0.0);
            match field.stokes[(ix, iy)].handedness() {
                Some(Handedness::Right) => counts[half][0] += 1,
                Some(Handedness::Left) => counts[half][1] += 1,
                None => {}
            }
        }
    }
    counts.map(|[r, l]| (r.max(l), r + l))
}

/// Named dipoles for reports. `opt` needs the optimization result.
pub fn resolve_dipole(
    name: &str,
    optimum: Option<&OptimizationResult<f64>>,
    config: &RunConfig,
) -> Result<DipoleState<f64>> {
    let opt = || {
        optimum
            .map(|r| r.argmax.dipole())
            .ok_or_else(|| Error::Config("`opt` dipole needs an optimization".into()))
    };
    Ok(match name {
        "opt" => opt()?,
        "circ" => {
            // Circular dipole emitting into the same direction as the optimum.
            let chi = opt()?.chi_d;
            DipoleState::circular(if chi < 0.0 { Handedness::Left } else { Handedness::Right })
        }
        "lin" => DipoleState::linear(0.0),
        "rcp" => DipoleState::circular(Handedness::Right),
        "lcp" => DipoleState::circular(Handedness::Left),
        "custom" => config
            .custom_dipole()?
            .ok_or_else(|| Error::Config("`custom` dipole not configured".into()))?,
        other => return Err(Error::Config(format!("unknown dipole `{other}`"))),
    })
}

struct Writer<'a> {
    dir: &'a Path,
    provenance: Provenance,
    heatmaps: bool,
    scale: usize,
    written: Vec<PathBuf>,
}

impl Writer<'_> {
    fn csv(&mut self, name: &str, table: &CsvTable) -> Result<()> {
        let path = self.dir.join(name);
        table.write_file(&path, &self.provenance)?;
        self.written.push(path);
        Ok(())
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.dir.join(name);
        let mut s = String::new();
        for line in self.provenance.lines("#") {
            s.push_str(&line);
            s.push('\n');
        }
        s.push_str(body);
        fs::write(&path, s)?;
        self.written.push(path);
        Ok(())
    }

    fn heatmap(&mut self, name: &str, grid: &Grid2<Option<f64>>, lo: f64, hi: f64) -> Result<()> {
        if !self.heatmaps {
            return Ok(());
        }
        let path = self.dir.join(name);
        write_heatmap(&path, grid, lo, hi, self.scale, &self.provenance)?;
        self.written.push(path);
        Ok(())
    }

    fn field(&mut self, name: &str, file: &FieldGridFile) -> Result<()> {
        let path = self.dir.join(name);
        file.write_file(&path, Some(&self.provenance))?;
        self.written.push(path);
        Ok(())
    }
}

fn comparison_text(names: &[String], results: &[DirectionalityResult<f64>], xi: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Dipole comparison (areas in a², core |y| ≤ y_core)");
    let _ = writeln!(
        s,
        "{:<8} {:>26} {:>26} {:>9} {:>9} {:>9} {:>8} {:>9} {:>9} {:>7}",
        "dipole", "psi", "chi", "<D>", "A(+)", "A(-)", "A/pi.xi2", "F_max", "A∩F", "near"
    );
    for (n, r) in names.iter().zip(results) {
        let _ = writeln!(
            s,
            "{:<8} {:>26} {:>26} {:>9.4} {:>9.4} {:>9.4} {:>8.3} {:>9.4} {:>9.4} {:>7.3}",
            n,
            fmt_angle(r.dipole.psi_d),
            fmt_angle(r.dipole.chi_d),
            r.d_avg,
            r.area_plus,
            r.area_minus,
            r.xi_ratio,
            r.purcell_max,
            r.overlap_area,
            r.proximity_fraction
        );
    }
    let _ = writeln!(
        s,
        "(xi = {xi} nm; 'near' = fraction of |D| ≥ threshold area near holes)"
    );
    if results.len() >= 2 {
        let ratio = |a: f64, b: f64| {
            if b > 0.0 {
                format!("{:.3}", a / b)
            } else if a > 0.0 {
                "inf".into()
            } else {
                "1".into()
            }
        };
        let (a, b) = (&results[0], &results[1]);
        let _ = writeln!(
            s,
            "{} vs {}: high-|D| area ratio {}, overlap ratio {}, F_max ratio {}",
            names[0],
            names[1],
            ratio(a.threshold_area, b.threshold_area),
            ratio(a.overlap_area, b.overlap_area),
            ratio(a.purcell_max, b.purcell_max)
        );
    }
    s
}

fn optimization_text(r: &OptimizationResult<f64>, mask: MaskKind) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "Averaged directionality over the {mask} core, {}×{} scan",
        r.psi.len(),
        r.chi.len()
    );
    let _ = writeln!(
        s,
        "  argmax  psi {}  chi {}  <D> {:+.6}",
        fmt_angle(r.argmax.psi),
        fmt_angle(r.argmax.chi),
        r.argmax.value
    );
    let _ = writeln!(
        s,
        "  argmin  psi {}  chi {}  <D> {:+.6}",
        fmt_angle(r.argmin.psi),
        fmt_angle(r.argmin.chi),
        r.argmin.value
    );
    for l in &r.max_trace {
        let _ = writeln!(
            s,
            "  refinement level {}: step {:.3e} × {:.3e} rad, best {:+.8}",
            l.level, l.step_psi, l.step_chi, l.best.value
        );
    }
    s
}

fn mode_text(mode: &BlochMode<f64>) -> String {
    format!(
        "Mode: k = {} (2π/a), omega = {:.6} (2πc/a), band {}, n_g = {}, guided {}, confinement {:.3}\n",
        fmt_num(mode.k),
        mode.omega,
        mode.band_index,
        mode.n_g.map_or("n/a".into(), |n| format!("{n:.4}")),
        mode.guided,
        mode.confinement
    )
}

/// Maps, CSV and heatmaps for the listed dipoles; returns the summary text.
fn write_comparison(
    w: &mut Writer<'_>,
    mode: &BlochMode<f64>,
    config: &RunConfig,
    names: &[String],
    optimum: Option<&OptimizationResult<f64>>,
) -> Result<String> {
    let kind = config.mask_kind()?;
    let mask = config.mask(mode, kind);
    let h_eff = config.h_eff(mode.lattice_constant());
    let weighting = config.weighting()?;
    let thresholds = config.thresholds();
    let mut results = Vec::with_capacity(names.len());
    let mut table = CsvTable::new(&[
        "dipole",
        "psi",
        "chi",
        "d_avg",
        "area_plus",
        "area_minus",
        "threshold_area",
        "xi_ratio",
        "purcell_max",
        "overlap_area",
        "proximity_fraction",
    ]);
    for name in names {
        let d = resolve_dipole(name, optimum, config)?;
        let r = analyze_dipole(&d, mode, &mask, weighting, h_eff, &thresholds)?;
        table.push(vec![
            name.clone(),
            fmt_num(d.psi_d),
            fmt_num(d.chi_d),
            fmt_num(r.d_avg),
            fmt_num(r.area_plus),
            fmt_num(r.area_minus),
            fmt_num(r.threshold_area),
            fmt_num(r.xi_ratio),
            fmt_num(r.purcell_max),
            fmt_num(r.overlap_area),
            fmt_num(r.proximity_fraction),
        ]);
        w.csv(&format!("map_{name}.csv"), &map_table(mode, &r.d_map, &r.purcell_map))?;
        w.heatmap(&format!("D_{name}.ppm"), &r.d_map, -1.0, 1.0)?;
        let fmax = r.purcell_map.iter().fold(0.0f64, |m, &f| m.max(f));
        let f = r.purcell_map.map(|&v| Some(v));
        w.heatmap(&format!("F_{name}.ppm"), &f, -fmax, fmax)?;
        results.push(r);
    }
    w.csv(&config.output.comparison, &table)?;
    Ok(comparison_text(names, &results, config.analysis.xi))
}

/// Outcome of one invariant check run by the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, worst: f64, limit: f64) -> SelfCheck {
    SelfCheck {
        name,
        passed: worst <= limit,
        detail: format!("worst {worst:.3e} (limit {limit:.0e})"),
    }
}

/// Invariants of the polarization and coupling stages on `mode`, probed with
/// dipoles drawn from `seed`.
pub fn self_checks(
    mode: &BlochMode<f64>,
    field: &PolarizationField<f64>,
    optimum: &OptimizationResult<f64>,
    mask: &AveragingMask,
    h_eff: f64,
    seed: u64,
) -> Result<Vec<SelfCheck>> {
    let mut out = Vec::new();
    let mut worst = 0.0f64;
    for (s, &v) in field.stokes.iter().zip(field.valid.iter()) {
        if v {
            let r = (s.s1 * s.s1 + s.s2 * s.s2 + s.s3 * s.s3 - s.s0 * s.s0).abs() / (s.s0 * s.s0);
            worst = worst.max(r);
        }
    }
    out.push(check("stokes-identity", worst, 1e-9));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let quarter = std::f64::consts::FRAC_PI_4;
    let half = std::f64::consts::FRAC_PI_2;
    let (mut range, mut anti, mut linear, mut negative) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..8 {
        let d = DipoleState::new(rng.random_range(-half..half), rng.random_range(-quarter..quarter));
        let map = directionality_map(&d, mode);
        let conj = directionality_map(&d.conjugate(), mode);
        for (a, b) in map.iter().zip(conj.iter()) {
            if let (Some(a), Some(b)) = (a, b) {
                range = range.max(a.abs() - 1.0);
                anti = anti.max((a + b).abs());
            }
        }
        let lin = DipoleState::linear(d.psi_d);
        linear = linear.max(average_directionality(&lin, mode, mask, Weighting::Uniform)?.abs());
        if mode.eps.is_some() {
            let f = purcell_map(&d, mode, h_eff)?;
            negative = negative.max(f.iter().fold(0.0f64, |m, &v| m.max(-v)));
        }
    }
    out.push(check("directionality-range", range.max(0.0), 0.0));
    out.push(check("conjugation-antisymmetry", anti, 1e-12));
    out.push(check("linear-dipole-zero", linear, 1e-12));
    out.push(check("purcell-nonnegative", negative, 0.0));

    let nc = optimum.chi.len();
    let mut worst = 0.0f64;
    for ip in 0..optimum.psi.len() {
        for ic in 0..nc {
            worst = worst.max((optimum.values[(ip, ic)] + optimum.values[(ip, nc - 1 - ic)]).abs());
        }
    }
    out.push(check("objective-antisymmetry", worst, 1e-10));
    Ok(out)
}

/// Pipeline inputs beyond the configuration.
#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub out_dir: PathBuf,
    /// Analyse this field file instead of solving.
    pub field: Option<PathBuf>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub artifacts: Vec<PathBuf>,
    pub checks: Vec<SelfCheck>,
    pub mode: BlochMode<f64>,
    pub optimum: OptimizationResult<f64>,
}

impl PipelineReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Failure of one pipeline stage.
#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Picks the configured band, or the best-confined guided mode.
pub fn select_mode(modes: Vec<BlochMode<f64>>, band: Option<usize>) -> Result<BlochMode<f64>> {
    match band {
        Some(b) => {
            let n = modes.len();
            modes
                .into_iter()
                .nth(b)
                .ok_or_else(|| Error::Config(format!("band {b} not among the {n} solved bands")))
        }
        None => modes
            .into_iter()
            .filter(|m| m.guided)
            .max_by(|a, b| a.confinement.partial_cmp(&b.confinement).unwrap())
            .ok_or_else(|| Error::Domain("no guided mode among the solved bands".into())),
    }
}

/// Geometry → bands → mode → polarization → optimization → report.
///
/// With `field` set, the geometry, band and solve stages are skipped and the
/// downstream artifacts are computed from the file.
pub fn run_pipeline(config: &RunConfig, opts: &PipelineOptions) -> std::result::Result<PipelineReport, StageError> {
    config.validate().stage("config")?;
    fs::create_dir_all(&opts.out_dir).map_err(Error::from).stage("output")?;
    let mut w = Writer {
        dir: &opts.out_dir,
        provenance: config.provenance(),
        heatmaps: config.output.heatmaps,
        scale: config.analysis.heatmap_scale,
        written: Vec::new(),
    };
    let out = &config.output;

    let mode = match &opts.field {
        Some(path) => {
            info!("ingesting {}", path.display());
            crate::io::parse_field_file(path).stage("ingest")?
        }
        None => {
            let geom = config.geometry();
            let eps = build_dielectric(&geom).stage("geometry")?;
            w.field(&out.geometry, &FieldGridFile::from_dielectric(&eps.eps, eps.frame))
                .stage("geometry")?;
            let solver = config.solver_options();
            let s = &config.solver;
            if s.nk > 0 {
                let ks = linspace(s.kmin, s.kmax, s.nk);
                let bands = band_scan_with(&eps, &ks, s.n_bands, &solver).stage("bands")?;
                w.csv(&out.bands, &bands_table(&bands)).stage("bands")?;
            }
            let modes = solve_modes_with(&eps, s.k, s.n_bands, &solver).stage("mode")?;
            let mode = select_mode(modes, s.band).stage("mode")?;
            w.field(&out.mode, &FieldGridFile::from_mode(&mode)).stage("mode")?;
            if !s.k_sweep.is_empty() {
                sweep(&mut w, config, &eps).stage("sweep")?;
            }
            mode
        }
    };

    let field = polarization_field(&mode);
    w.csv(&out.polarization, &polarization_table(&field))
        .stage("polarization")?;
    w.csv(&out.cpoints, &cpoints_table(&field)).stage("polarization")?;

    let kind = config.mask_kind().stage("optimize")?;
    let mask = config.mask(&mode, kind);
    let scan = config.scan_options().stage("optimize")?;
    let optimum = scan_objective(&mode, &mask, &scan).stage("optimize")?;
    w.csv(&out.objective, &objective_table(&optimum)).stage("optimize")?;

    let comparison =
        write_comparison(&mut w, &mode, config, &config.analysis.dipoles, Some(&optimum)).stage("report")?;
    let h_eff = config.h_eff(mode.lattice_constant());
    let checks = self_checks(&mode, &field, &optimum, &mask, h_eff, opts.seed).stage("self-check")?;

    let mut text = mode_text(&mode);
    let full = config.mask(&mode, MaskKind::Full);
    if full.count() > 0 {
        let avg = average_directionality(&optimum.argmax.dipole(), &mode, &full, scan.weighting).stage("report")?;
        let _ = writeln!(text, "Optimal dipole averaged over the full core: {avg:+.6}");
    }
    let y_core = mask.y_core;
    let purity = handedness_purity(&field, y_core);
    let cps = find_c_points(&field);
    let _ = writeln!(
        text,
        "C points: {} total, {} within the core; majority handedness upper half {}/{}, lower half {}/{}",
        cps.len(),
        cps.iter().filter(|p| p.y.abs() <= y_core).count(),
        purity[0].0,
        purity[0].1,
        purity[1].0,
        purity[1].1
    );
    text.push('\n');
    text.push_str(&optimization_text(&optimum, kind));
    text.push('\n');
    text.push_str(&comparison);
    text.push_str("\nSelf-checks\n");
    for c in &checks {
        let _ = writeln!(
            text,
            "  {:<26} {}  {}",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.detail
        );
    }
    w.text(&out.report, &text).stage("report")?;

    Ok(PipelineReport {
        artifacts: w.written,
        checks,
        mode,
        optimum,
    })
}

fn sweep(w: &mut Writer<'_>, config: &RunConfig, eps: &DielectricGrid<f64>) -> Result<()> {
    let points = k_sweep(
        eps,
        &config.solver.k_sweep,
        config.mask_kind()?,
        config.solver.n_bands,
        &config.solver_options(),
        &config.scan_options()?,
    )?;
    w.csv(&config.output.sweep, &sweep_table(&points))
}

#[derive(Debug, Parser)]
#[command(
    name = "chiralwave",
    version,
    about = "Bloch modes, local polarization and chiral emitter coupling in glide-plane photonic-crystal waveguides"
)]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, env = "CHIRALWAVE_THREADS")]
    pub threads: Option<usize>,
    /// Directory for outputs given as relative paths.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Seed of the randomized self-checks.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ModeInput {
    /// Mode in the Field Grid Format.
    #[arg(long)]
    pub mode: PathBuf,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    /// `half` or `full`.
    #[arg(long)]
    pub mask: Option<String>,
    /// `uniform` or `intensity`.
    #[arg(long)]
    pub weighting: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rasterize the supercell permittivity.
    Geometry {
        #[arg(long, default_value = "eps.grid")]
        out: PathBuf,
    },
    /// Band structure over a range of wavenumbers.
    Bands {
        /// Lowest wavenumber (2π/a).
        #[arg(long)]
        kmin: Option<f64>,
        /// Highest wavenumber (2π/a).
        #[arg(long)]
        kmax: Option<f64>,
        /// Number of wavenumbers.
        #[arg(long)]
        nk: Option<usize>,
        /// Bands solved per wavenumber.
        #[arg(long)]
        bands: Option<usize>,
        #[arg(long, default_value = "bands.csv")]
        out: PathBuf,
    },
    /// Solve one mode and write it in the Field Grid Format.
    Mode {
        /// Wavenumber (2π/a).
        #[arg(long)]
        k: Option<f64>,
        /// Band index, or `guided` for the best-confined guided mode.
        #[arg(long)]
        band: Option<String>,
        /// Bands solved.
        #[arg(long)]
        bands: Option<usize>,
        #[arg(long, default_value = "mode.field")]
        out: PathBuf,
    },
    /// Stokes parameters, ellipse angles and C points of a mode.
    Polarization {
        #[command(flatten)]
        input: ModeInput,
        #[arg(long, default_value = "pol.csv")]
        out: PathBuf,
        /// Detected C points.
        #[arg(long, default_value = "cpoints.csv")]
        cpoints: PathBuf,
    },
    /// Directionality map and its average for one dipole.
    Directionality {
        #[command(flatten)]
        input: ModeInput,
        /// `psi,chi` in radians (suffix `pi` or `deg` for other units).
        #[arg(long, allow_hyphen_values = true)]
        dipole: String,
        #[command(flatten)]
        mask: MaskArgs,
        #[arg(long, default_value = "D.csv")]
        out: PathBuf,
        /// Optional PPM heatmap.
        #[arg(long)]
        pixmap: Option<PathBuf>,
    },
    /// Purcell-factor map for one dipole.
    Purcell {
        #[command(flatten)]
        input: ModeInput,
        /// `psi,chi` as for `directionality`.
        #[arg(long, allow_hyphen_values = true)]
        dipole: String,
        #[arg(long, default_value = "F.csv")]
        out: PathBuf,
        /// Optional PPM heatmap.
        #[arg(long)]
        pixmap: Option<PathBuf>,
    },
    /// Scan the dipole polarization for the largest averaged directionality.
    Optimize {
        #[command(flatten)]
        input: ModeInput,
        #[command(flatten)]
        mask: MaskArgs,
        #[arg(long, default_value = "objective.csv")]
        out: PathBuf,
        /// Optimum summary.
        #[arg(long, default_value = "optimize.txt")]
        report: PathBuf,
    },
    /// Side-by-side comparison of dipoles: CSV, heatmaps and a summary table.
    Report {
        #[command(flatten)]
        input: ModeInput,
        /// Comma-separated names: opt, circ, lin, rcp, lcp, custom.
        #[arg(long, default_value = "opt,circ")]
        dipoles: String,
        #[command(flatten)]
        mask: MaskArgs,
    },
    /// The whole pipeline.
    Run {
        /// Analyse this field file instead of solving.
        #[arg(long)]
        field: Option<PathBuf>,
    },
}

/// Thread pool of the requested size (rayon's default when `None`).
pub fn thread_pool(threads: Option<usize>) -> anyhow::Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        b = b.num_threads(n);
    }
    Ok(b.build()?)
}

fn resolve(out_dir: &Option<PathBuf>, p: &Path) -> PathBuf {
    match out_dir {
        Some(d) if p.is_relative() => d.join(p),
        _ => p.to_path_buf(),
    }
}

fn apply_mask_args(config: &mut RunConfig, m: &MaskArgs) -> Result<()> {
    if let Some(k) = &m.mask {
        config.analysis.mask = k.clone();
    }
    if let Some(w) = &m.weighting {
        config.analysis.weighting = w.clone();
    }
    config.validate()
}

/// Entry point of the binary.
pub fn main_with(cli: Cli) -> ExitCode {
    let pool = match thread_pool(cli.threads) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| dispatch(cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("stage `config`: reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    let out_dir = cli.out_dir.clone();
    if let Some(d) = &out_dir {
        fs::create_dir_all(d)?;
    }
    let prov = config.provenance();
    let load_mode =
        |p: &Path| crate::io::parse_field_file(p).with_context(|| format!("stage `ingest`: reading {}", p.display()));
    match cli.command {
        Command::Geometry { out } => {
            let eps = build_dielectric(&config.geometry()).context("stage `geometry`")?;
            FieldGridFile::from_dielectric(&eps.eps, eps.frame).write_file(&resolve(&out_dir, &out), Some(&prov))?;
            println!("mean eps {:.6}", eps.eps.iter().sum::<f64>() / eps.eps.len() as f64);
        }
        Command::Bands {
            kmin,
            kmax,
            nk,
            bands,
            out,
        } => {
            let s = &config.solver;
            let ks = linspace(kmin.unwrap_or(s.kmin), kmax.unwrap_or(s.kmax), nk.unwrap_or(s.nk));
            let eps = build_dielectric(&config.geometry()).context("stage `geometry`")?;
            let bs = band_scan_with(&eps, &ks, bands.unwrap_or(s.n_bands), &config.solver_options())
                .context("stage `bands`")?;
            bands_table(&bs).write_file(&resolve(&out_dir, &out), &prov)?;
            match bs.guided_band() {
                Some(b) => println!("guided band label {b}"),
                None => println!("no guided band"),
            }
        }
        Command::Mode { k, band, bands, out } => {
            let eps = build_dielectric(&config.geometry()).context("stage `geometry`")?;
            let band = match band.as_deref() {
                None | Some("guided") => config.solver.band,
                Some(b) => Some(b.parse().with_context(|| format!("invalid band `{b}`"))?),
            };
            let n = bands.unwrap_or(config.solver.n_bands);
            let modes = solve_modes_with(&eps, k.unwrap_or(config.solver.k), n, &config.solver_options())
                .context("stage `mode`")?;
            let mode = select_mode(modes, band).context("stage `mode`")?;
            write_mode_file(&resolve(&out_dir, &out), &mode, Some(&prov))?;
            print!("{}", mode_text(&mode));
        }
        Command::Polarization { input, out, cpoints } => {
            let mode = load_mode(&input.mode)?;
            let field = polarization_field(&mode);
            polarization_table(&field).write_file(&resolve(&out_dir, &out), &prov)?;
            let cp = cpoints_table(&field);
            cp.write_file(&resolve(&out_dir, &cpoints), &prov)?;
            println!("{} C points", cp.rows.len());
        }
        Command::Directionality {
            input,
            dipole,
            mask,
            out,
            pixmap,
        } => {
            apply_mask_args(&mut config, &mask)?;
            let mode = load_mode(&input.mode)?;
            let d = parse_dipole(&dipole)?;
            let map = directionality_map(&d, &mode);
            let m = config.mask(&mode, config.mask_kind()?);
            let avg = average_directionality(&d, &mode, &m, config.weighting()?).context("stage `directionality`")?;
            let mut t = CsvTable::new(&["x", "y", "D"]);
            for iy in 0..mode.ny() {
                for ix in 0..mode.nx() {
                    t.push(vec![
                        fmt_num(mode.frame.x(ix)),
                        fmt_num(mode.frame.y(iy)),
                        opt_num(map[(ix, iy)]),
                    ]);
                }
            }
            t.write_file(&resolve(&out_dir, &out), &prov)?;
            if let Some(p) = pixmap {
                write_heatmap(
                    &resolve(&out_dir, &p),
                    &map,
                    -1.0,
                    1.0,
                    config.analysis.heatmap_scale,
                    &prov,
                )?;
            }
            println!("average directionality ({} mask): {avg:+.6}", config.analysis.mask);
        }
        Command::Purcell {
            input,
            dipole,
            out,
            pixmap,
        } => {
            let mode = load_mode(&input.mode)?;
            let d = parse_dipole(&dipole)?;
            let f = purcell_map(&d, &mode, config.h_eff(mode.lattice_constant())).context("stage `purcell`")?;
            let mut t = CsvTable::new(&["x", "y", "F"]);
            for iy in 0..mode.ny() {
                for ix in 0..mode.nx() {
                    t.push(vec![
                        fmt_num(mode.frame.x(ix)),
                        fmt_num(mode.frame.y(iy)),
                        fmt_num(f[(ix, iy)]),
                    ]);
                }
            }
            t.write_file(&resolve(&out_dir, &out), &prov)?;
            let fmax = f.iter().fold(0.0f64, |m, &v| m.max(v));
            if let Some(p) = pixmap {
                let g = f.map(|&v| Some(v));
                write_heatmap(
                    &resolve(&out_dir, &p),
                    &g,
                    -fmax,
                    fmax,
                    config.analysis.heatmap_scale,
                    &prov,
                )?;
            }
            println!("maximum Purcell factor {fmax:.6}");
        }
        Command::Optimize {
            input,
            mask,
            out,
            report,
        } => {
            apply_mask_args(&mut config, &mask)?;
            let mode = load_mode(&input.mode)?;
            let kind = config.mask_kind()?;
            let m = config.mask(&mode, kind);
            let r = scan_objective(&mode, &m, &config.scan_options()?).context("stage `optimize`")?;
            objective_table(&r).write_file(&resolve(&out_dir, &out), &prov)?;
            let text = format!("{}{}", mode_text(&mode), optimization_text(&r, kind));
            let mut w = Writer {
                dir: out_dir.as_deref().unwrap_or(Path::new(".")),
                provenance: prov,
                heatmaps: false,
                scale: 1,
                written: Vec::new(),
            };
            w.text(&report.to_string_lossy(), &text)?;
            print!("{text}");
        }
        Command::Report { input, dipoles, mask } => {
            apply_mask_args(&mut config, &mask)?;
            let names: Vec<String> = dipoles.split(',').map(|s| s.trim().to_string()).collect();
            config.analysis.dipoles = names.clone();
            config.validate()?;
            let mode = load_mode(&input.mode)?;
            let optimum = if names.iter().any(|n| n == "opt" || n == "circ") {
                let m = config.mask(&mode, config.mask_kind()?);
                Some(scan_objective(&mode, &m, &config.scan_options()?).context("stage `optimize`")?)
            } else {
                None
            };
            let dir = out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
            let mut w = Writer {
                dir: &dir,
                provenance: prov,
                heatmaps: config.output.heatmaps,
                scale: config.analysis.heatmap_scale,
                written: Vec::new(),
            };
            let mut text = mode_text(&mode);
            if let Some(r) = &optimum {
                text.push_str(&optimization_text(r, config.mask_kind()?));
            }
            text.push_str(
                &write_comparison(&mut w, &mode, &config, &names, optimum.as_ref()).context("stage `report`")?,
            );
            let report = config.output.report.clone();
            w.text(&report, &text)?;
            print!("{text}");
        }
        Command::Run { field } => {
            let opts = PipelineOptions {
                out_dir: out_dir.unwrap_or_else(|| config.output.dir.clone()),
                field,
                seed: cli.seed,
            };
            let report = run_pipeline(&config, &opts)?;
            for c in &report.checks {
                if !c.passed {
                    warn!("self-check {} failed: {}", c.name, c.detail);
                }
            }
            println!("wrote {} files to {}", report.artifacts.len(), opts.out_dir.display());
            if !report.passed() {
                eprintln!("error: stage `self-check` failed");
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
