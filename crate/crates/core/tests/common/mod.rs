#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use chiralwave::geometry::build_dielectric;
use chiralwave::modesolver::{solve_modes_with, SolverOptions};
use chiralwave::{BlochMode, DielectricGrid, SupercellGeometry};

pub const K_DEFAULT: f64 = 0.31;
pub const N_BANDS: usize = 24;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn default_eps() -> DielectricGrid {
    build_dielectric(&SupercellGeometry::default()).unwrap()
}

/// All bands of the default geometry at the default wavenumber, solved once per test binary.
pub fn default_modes() -> &'static [BlochMode] {
    static MODES: OnceLock<Vec<BlochMode>> = OnceLock::new();
    MODES.get_or_init(|| solve_modes_with(&default_eps(), K_DEFAULT, N_BANDS, &SolverOptions::default()).unwrap())
}

pub fn guided_mode() -> &'static BlochMode {
    default_modes().iter().find(|m| m.guided).expect("a guided mode")
}

/// Reference half-core average of the synthetic fixture, as printed by
/// `fixtures/make_synthetic.py`, and the number of averaged points.
pub fn synthetic_expected() -> (f64, usize) {
    let text = std::fs::read_to_string(fixture("synthetic_expected.txt")).unwrap();
    let mut it = text.split_whitespace();
    (it.next().unwrap().parse().unwrap(), it.next().unwrap().parse().unwrap())
}
