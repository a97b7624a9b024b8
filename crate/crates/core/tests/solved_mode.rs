//! Properties of the guided mode of the default waveguide and of the analysis
//! built on it.

mod common;

use std::f64::consts::{FRAC_PI_2, PI};

use chiralwave::coupling::{
    analyze_dipole, average_directionality, purcell_map, AreaThresholds, AveragingMask, MaskKind, Weighting,
    DEFAULT_H_EFF,
};
use chiralwave::geometry::build_dielectric;
use chiralwave::io::{parse_field_file, write_mode_file};
use chiralwave::modesolver::{solve_guided, SolverOptions};
use chiralwave::optimizer::{scan_objective, ScanOptions};
use chiralwave::polarization::{dielectric_mask, find_c_points, polarization_field, DipoleState, Handedness};
use chiralwave::SupercellGeometry;
use common::*;

#[test]
fn exactly_one_guided_mode_in_the_gap() {
    let modes = default_modes();
    let guided: Vec<_> = modes.iter().filter(|m| m.guided).collect();
    assert_eq!(
        guided.len(),
        1,
        "guided bands {:?}",
        guided.iter().map(|m| m.band_index).collect::<Vec<_>>()
    );
    let m = guided[0];
    assert!(m.omega < K_DEFAULT, "below the light line");
    assert!(m.confinement > 0.9);
    assert!(m.n_g.unwrap() > 1.0);
}

#[test]
fn field_maxima_carry_quadrature_components() {
    let m = guided_mode();
    let dielectric = dielectric_mask(m);
    let y_core = m.lattice_constant() * 3f64.sqrt() / 2.0;
    // Strongest dielectric point of each core half.
    for upper in [true, false] {
        let mut best = (0.0, 0, 0);
        for iy in 0..m.ny() {
            let y = m.frame.y(iy);
            if (y >= 0.0) != upper || y.abs() > y_core {
                continue;
            }
            for ix in 0..m.nx() {
                let [ex, ey] = m.e_at(ix, iy);
                let i = ex.norm_sqr() + ey.norm_sqr();
                if dielectric[(ix, iy)] && i > best.0 {
                    best = (i, ix, iy);
                }
            }
        }
        let [ex, ey] = m.e_at(best.1, best.2);
        let mut phase = ey.arg() - ex.arg();
        if phase > PI {
            phase -= 2.0 * PI;
        } else if phase <= -PI {
            phase += 2.0 * PI;
        }
        assert!(
            (phase.abs() - FRAC_PI_2).abs() < 0.1 * PI,
            "upper {upper}: relative phase {:.3}π",
            phase / PI
        );
    }
}

#[test]
fn guided_frequency_converges_with_cutoff() {
    let coarse = guided_mode().omega;
    let geom = SupercellGeometry {
        grid_nx: 32,
        grid_ny: 512,
        ..SupercellGeometry::default()
    };
    let fine = solve_guided(
        &build_dielectric(&geom).unwrap(),
        K_DEFAULT,
        N_BANDS,
        &SolverOptions::default(),
    )
    .unwrap()
    .expect("guided mode at doubled cutoff");
    let rel = ((fine.omega - coarse) / fine.omega).abs();
    assert!(rel < 1e-3, "{coarse} vs {fine}: {rel:.2e}", fine = fine.omega);
}

#[test]
fn each_core_half_has_its_own_helicity() {
    let m = guided_mode();
    let field = polarization_field(m);
    let y_core = m.lattice_constant() * 3f64.sqrt() / 2.0;
    let cps = find_c_points(&field);
    for (upper, hand) in [(true, Handedness::Left), (false, Handedness::Right)] {
        let inside: Vec<_> = cps
            .iter()
            .filter(|p| (p.y >= 0.0) == upper && p.y.abs() <= y_core)
            .collect();
        assert!(
            !inside.is_empty(),
            "no C point in the {} half",
            if upper { "upper" } else { "lower" }
        );
        assert!(inside.iter().all(|p| p.handedness == hand));
        let (mut same, mut total) = (0usize, 0usize);
        for iy in 0..m.ny() {
            let y = m.frame.y(iy);
            if (y >= 0.0) != upper || y.abs() > y_core {
                continue;
            }
            for ix in 0..m.nx() {
                if let (true, Some(h)) = (field.valid[(ix, iy)], field.stokes[(ix, iy)].handedness()) {
                    total += 1;
                    same += usize::from(h == hand);
                }
            }
        }
        assert!(same as f64 > 0.9 * total as f64, "{same}/{total}");
    }
}

#[test]
fn mirror_image_flips_c_points() {
    let m = guided_mode();
    let cps = find_c_points(&polarization_field(m));
    let mirrored = find_c_points(&polarization_field(&m.mirrored_y()));
    assert_eq!(cps.len(), mirrored.len());
    for p in &cps {
        let q = mirrored
            .iter()
            .find(|q| (q.x - p.x).abs() < 1e-6 && (q.y + p.y).abs() < 1e-6)
            .unwrap_or_else(|| panic!("no image of C point at ({}, {})", p.x, p.y));
        assert_eq!(q.handedness, p.handedness.flipped());
    }
}

#[test]
fn optimal_dipole_beats_circular() {
    let m = guided_mode();
    let half = AveragingMask::for_mode(m, MaskKind::Half);
    let full = AveragingMask::for_mode(m, MaskKind::Full);
    let r = scan_objective(m, &half, &ScanOptions::default()).unwrap();
    let opt = r.argmax;
    assert!(opt.value > 0.0);
    assert!(
        opt.psi.abs() < 0.05 * PI && opt.chi > -0.25 * PI && opt.chi < -0.05 * PI,
        "{opt:?}"
    );
    assert!(
        average_directionality(&opt.dipole(), m, &full, Weighting::Uniform)
            .unwrap()
            .abs()
            < 0.02
    );

    let circ = DipoleState::circular(Handedness::Left);
    let t = AreaThresholds::default();
    let a = analyze_dipole(&opt.dipole(), m, &half, Weighting::Uniform, DEFAULT_H_EFF, &t).unwrap();
    let b = analyze_dipole(&circ, m, &half, Weighting::Uniform, DEFAULT_H_EFF, &t).unwrap();
    assert!(a.d_avg > b.d_avg);
    assert!(
        a.threshold_area >= 2.0 * b.threshold_area,
        "{} vs {}",
        a.threshold_area,
        b.threshold_area
    );
    let ratio = a.purcell_max / b.purcell_max;
    assert!((0.5..=1.0).contains(&ratio), "Purcell ratio {ratio}");
    assert!(purcell_map(&opt.dipole(), m, DEFAULT_H_EFF)
        .unwrap()
        .iter()
        .all(|&f| f >= 0.0));
}

#[test]
fn solved_mode_survives_the_field_file() {
    let m = guided_mode();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mode.field");
    write_mode_file(&path, m, None).unwrap();
    let back = parse_field_file(&path).unwrap();
    assert_eq!(back.ex, m.ex);
    assert_eq!(back.ey, m.ey);
    assert_eq!(back.hz, m.hz);
    assert_eq!(back.eps, m.eps);
    assert_eq!((back.k, back.omega, back.n_g), (m.k, m.omega, m.n_g));
    assert_eq!(back.frame, m.frame);
}
