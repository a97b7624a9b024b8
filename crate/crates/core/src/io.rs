//! File formats: the Field Grid Format for mode fields and permittivity,
//! CSV tables with a provenance header, and binary pixmap (P6) heatmaps.
//!
//! # Field Grid Format
//!
//! A plain-text header of `key value` lines, optionally interleaved with `#`
//! comment lines, closed by `end_header`:
//!
//! ```text
//! # chiralwave 0.1.0
//! version 1
//! nx 16
//! ny 256
//! dx 27.0625          (nm)
//! dy 24.62...         (nm)
//! x0 0                (nm, position of node ix = 0)
//! y0 -3139.5...       (nm, position of node iy = 0)
//! k 0.31              (2π/a)
//! omega 0.2706...     (2πc/a)
//! n_g 3.55...         (or `none`)
//! band 17             (optional)
//! guided true         (optional)
//! components Ex Ey Hz eps
//! end_header
//! ```
//!
//! followed by exactly `nx·ny` lines `ix iy <values>`, `ix` varying fastest.
//! Complex components contribute a real and an imaginary column, `eps` a
//! single real column, in the order listed. Numbers use the shortest
//! representation that round-trips exactly, with `.` as radix.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{Grid2, GridFrame};
use crate::modesolver::{confinement_ratio, BlochMode};

pub const FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Tool version and configuration hash stamped on every output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
}

impl Provenance {
    /// Hashes the canonical text of a configuration.
    pub fn for_config(canonical: &str) -> Self {
        let digest = Sha256::digest(canonical.as_bytes());
        let hash = digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
        Self {
            tool_version: TOOL_VERSION.to_string(),
            config_hash: hash,
        }
    }

    /// Comment lines (without trailing newline) prefixed by `marker`.
    pub fn lines(&self, marker: &str) -> [String; 2] {
        [
            format!("{marker} chiralwave {}", self.tool_version),
            format!("{marker} config sha256 {}", self.config_hash),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Ex,
    Ey,
    Hz,
    Eps,
}

impl Component {
    fn name(self) -> &'static str {
        match self {
            Component::Ex => "Ex",
            Component::Ey => "Ey",
            Component::Hz => "Hz",
            Component::Eps => "eps",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "Ex" => Some(Component::Ex),
            "Ey" => Some(Component::Ey),
            "Hz" => Some(Component::Hz),
            "eps" => Some(Component::Eps),
            _ => None,
        }
    }

    fn columns(self) -> usize {
        if self == Component::Eps {
            1
        } else {
            2
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldHeader {
    pub version: u32,
    pub nx: usize,
    pub ny: usize,
    pub frame: GridFrame<f64>,
    pub k: Option<f64>,
    pub omega: Option<f64>,
    pub n_g: Option<f64>,
    pub band: Option<usize>,
    pub guided: Option<bool>,
    pub components: Vec<Component>,
}

/// Contents of a Field Grid Format file.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGridFile {
    pub header: FieldHeader,
    pub ex: Option<Grid2<Complex64>>,
    pub ey: Option<Grid2<Complex64>>,
    pub hz: Option<Grid2<Complex64>>,
    pub eps: Option<Grid2<f64>>,
}

impl FieldGridFile {
    pub fn from_mode(mode: &BlochMode<f64>) -> Self {
        let mut components = vec![Component::Ex, Component::Ey, Component::Hz];
        if mode.eps.is_some() {
            components.push(Component::Eps);
        }
        Self {
            header: FieldHeader {
                version: FORMAT_VERSION,
                nx: mode.nx(),
                ny: mode.ny(),
                frame: mode.frame,
                k: Some(mode.k),
                omega: Some(mode.omega),
                n_g: mode.n_g,
                band: Some(mode.band_index),
                guided: Some(mode.guided),
                components,
            },
            ex: Some(mode.ex.clone()),
            ey: Some(mode.ey.clone()),
            hz: Some(mode.hz.clone()),
            eps: mode.eps.clone(),
        }
    }

    pub fn from_dielectric(eps: &Grid2<f64>, frame: GridFrame<f64>) -> Self {
        Self {
            header: FieldHeader {
                version: FORMAT_VERSION,
                nx: eps.nx(),
                ny: eps.ny(),
                frame,
                k: None,
                omega: None,
                n_g: None,
                band: None,
                guided: None,
                components: vec![Component::Eps],
            },
            ex: None,
            ey: None,
            hz: None,
            eps: Some(eps.clone()),
        }
    }

    /// Converts to a mode; `Ex`, `Ey`, `Hz`, `k` and `omega` must be present.
    pub fn into_mode(self) -> Result<BlochMode<f64>> {
        let missing = |c: &str| Error::MissingComponent(c.to_string());
        let ex = self.ex.ok_or_else(|| missing("Ex"))?;
        let ey = self.ey.ok_or_else(|| missing("Ey"))?;
        let hz = self.hz.ok_or_else(|| missing("Hz"))?;
        let h = self.header;
        let mut mode = BlochMode {
            k: h.k.ok_or_else(|| missing("k"))?,
            omega: h.omega.ok_or_else(|| missing("omega"))?,
            band_index: h.band.unwrap_or(0),
            ex,
            ey,
            hz,
            frame: h.frame,
            eps: self.eps,
            n_g: h.n_g,
            guided: h.guided.unwrap_or(false),
            confinement: 0.0,
        };
        let a = mode.lattice_constant();
        mode.confinement = confinement_ratio(&mode, a * 3f64.sqrt() / 2.0);
        Ok(mode)
    }

    fn data(&self, c: Component) -> Option<DataRef<'_>> {
        match c {
            Component::Ex => self.ex.as_ref().map(DataRef::Complex),
            Component::Ey => self.ey.as_ref().map(DataRef::Complex),
            Component::Hz => self.hz.as_ref().map(DataRef::Complex),
            Component::Eps => self.eps.as_ref().map(DataRef::Real),
        }
    }

    /// Header text, provenance comments first.
    pub fn header_text(&self, provenance: Option<&Provenance>) -> String {
        let h = &self.header;
        let mut s = String::new();
        if let Some(p) = provenance {
            for line in p.lines("#") {
                s.push_str(&line);
                s.push('\n');
            }
        }
        let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), fmt_num);
        let _ = writeln!(s, "version {}", h.version);
        let _ = writeln!(s, "nx {}", h.nx);
        let _ = writeln!(s, "ny {}", h.ny);
        let _ = writeln!(s, "dx {}", fmt_num(h.frame.dx));
        let _ = writeln!(s, "dy {}", fmt_num(h.frame.dy));
        let _ = writeln!(s, "x0 {}", fmt_num(h.frame.x0));
        let _ = writeln!(s, "y0 {}", fmt_num(h.frame.y0));
        let _ = writeln!(s, "k {}", opt(h.k));
        let _ = writeln!(s, "omega {}", opt(h.omega));
        let _ = writeln!(s, "n_g {}", opt(h.n_g));
        if let Some(b) = h.band {
            let _ = writeln!(s, "band {b}");
        }
        if let Some(g) = h.guided {
            let _ = writeln!(s, "guided {g}");
        }
        let names: Vec<&str> = h.components.iter().map(|c| c.name()).collect();
        let _ = writeln!(s, "components {}", names.join(" "));
        s.push_str("end_header\n");
        s
    }

    /// Data lines only.
    pub fn body_text(&self) -> String {
        let h = &self.header;
        let columns: Vec<DataRef<'_>> = h
            .components
            .iter()
            .map(|&c| self.data(c).expect("declared components are present"))
            .collect();
        let mut s = String::with_capacity(h.nx * h.ny * 64);
        for iy in 0..h.ny {
            for ix in 0..h.nx {
                let _ = write!(s, "{ix} {iy}");
                for col in &columns {
                    match col {
                        DataRef::Complex(g) => {
                            let v = g[(ix, iy)];
                            let _ = write!(s, " {} {}", fmt_num(v.re), fmt_num(v.im));
                        }
                        DataRef::Real(g) => {
                            let _ = write!(s, " {}", fmt_num(g[(ix, iy)]));
                        }
                    }
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn write_to(&self, mut w: impl Write, provenance: Option<&Provenance>) -> Result<()> {
        w.write_all(self.header_text(provenance).as_bytes())?;
        w.write_all(self.body_text().as_bytes())?;
        Ok(())
    }

    pub fn write_file(&self, path: &Path, provenance: Option<&Provenance>) -> Result<()> {
        let mut text = self.header_text(provenance);
        text.push_str(&self.body_text());
        fs::write(path, text)?;
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        parse(r)
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let f = fs::File::open(path)?;
        parse(BufReader::new(f))
    }
}

enum DataRef<'a> {
    Complex(&'a Grid2<Complex64>),
    Real(&'a Grid2<f64>),
}

/// Shortest exactly round-tripping decimal form.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        // Normalizes -0 so that identical fields print identically.
        "0".to_string()
    } else {
        format!("{v:e}")
    }
}

/// Reads a field file and converts it to a mode.
pub fn parse_field_file(path: &Path) -> Result<BlochMode<f64>> {
    FieldGridFile::read_file(path)?.into_mode()
}

pub fn write_mode_file(path: &Path, mode: &BlochMode<f64>, provenance: Option<&Provenance>) -> Result<()> {
    FieldGridFile::from_mode(mode).write_file(path, provenance)
}

fn perr(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse(r: impl BufRead) -> Result<FieldGridFile> {
    let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut version = None;
    let (mut nx, mut ny) = (None, None);
    let (mut dx, mut dy, mut x0, mut y0) = (None, None, None, None);
    let (mut k, mut omega, mut n_g) = (None, None, None);
    let (mut band, mut guided) = (None, None);
    let mut components: Option<Vec<Component>> = None;
    let mut last = 0usize;
    let mut closed = false;
    for (no, line) in lines.by_ref() {
        let line = line?;
        last = no;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if t == "end_header" {
            closed = true;
            break;
        }
        let (key, rest) = t.split_once(char::is_whitespace).unwrap_or((t, ""));
        let rest = rest.trim();
        let num = |v: &str| -> Result<f64> {
            let x: f64 = v
                .parse()
                .map_err(|_| perr(no, format!("invalid number `{v}` for `{key}`")))?;
            if !x.is_finite() {
                return Err(perr(no, format!("non-finite value for `{key}`")));
            }
            Ok(x)
        };
        let opt_num = |v: &str| -> Result<Option<f64>> {
            if v == "none" {
                Ok(None)
            } else {
                num(v).map(Some)
            }
        };
        let int = |v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| perr(no, format!("invalid integer `{v}` for `{key}`")))
        };
        match key {
            "version" => {
                let v = int(rest)?;
                if v != FORMAT_VERSION as usize {
                    return Err(perr(no, format!("unsupported format version {v}")));
                }
                version = Some(v as u32);
            }
            "nx" => nx = Some(int(rest)?),
            "ny" => ny = Some(int(rest)?),
            "dx" => dx = Some(num(rest)?),
            "dy" => dy = Some(num(rest)?),
            "x0" => x0 = Some(num(rest)?),
            "y0" => y0 = Some(num(rest)?),
            "k" => k = opt_num(rest)?,
            "omega" => omega = opt_num(rest)?,
            "n_g" => n_g = opt_num(rest)?,
            "band" => band = Some(int(rest)?),
            "guided" => {
                guided = Some(match rest {
                    "true" => true,
                    "false" => false,
                    other => return Err(perr(no, format!("invalid boolean `{other}`"))),
                })
            }
            "components" => {
                let mut list = Vec::new();
                for name in rest.split_whitespace() {
                    let c = Component::parse(name).ok_or_else(|| perr(no, format!("unknown component `{name}`")))?;
                    if list.contains(&c) {
                        return Err(perr(no, format!("duplicate component `{name}`")));
                    }
                    list.push(c);
                }
                if list.is_empty() {
                    return Err(perr(no, "empty component list"));
                }
                components = Some(list);
            }
            other => return Err(perr(no, format!("unknown header key `{other}`"))),
        }
    }
    if !closed {
        return Err(perr(last + 1, "missing `end_header`"));
    }
    let need = |v: Option<f64>, key: &str| v.ok_or_else(|| perr(last, format!("header lacks `{key}`")));
    version.ok_or_else(|| perr(last, "header lacks `version`"))?;
    let nx = nx.ok_or_else(|| perr(last, "header lacks `nx`"))?;
    let ny = ny.ok_or_else(|| perr(last, "header lacks `ny`"))?;
    if nx == 0 || ny == 0 {
        return Err(perr(last, "grid dimensions must be positive"));
    }
    let frame = GridFrame {
        dx: need(dx, "dx")?,
        dy: need(dy, "dy")?,
        x0: need(x0, "x0")?,
        y0: need(y0, "y0")?,
    };
    let components = components.ok_or_else(|| perr(last, "header lacks `components`"))?;
    let width: usize = 2 + components.iter().map(|c| c.columns()).sum::<usize>();

    let n = nx * ny;
    let mut complex: Vec<Vec<Complex64>> = components.iter().map(|_| Vec::with_capacity(n)).collect();
    let mut real: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for (no, line) in lines {
        let line = line?;
        last = no;
        if line.trim().is_empty() {
            continue;
        }
        if count == n {
            return Err(perr(no, format!("more than nx·ny = {n} data lines")));
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != width {
            return Err(perr(no, format!("expected {width} columns, found {}", fields.len())));
        }
        let (ex_ix, ex_iy) = (count % nx, count / nx);
        let ix: usize = fields[0]
            .parse()
            .map_err(|_| perr(no, format!("invalid index `{}`", fields[0])))?;
        let iy: usize = fields[1]
            .parse()
            .map_err(|_| perr(no, format!("invalid index `{}`", fields[1])))?;
        if (ix, iy) != (ex_ix, ex_iy) {
            return Err(perr(
                no,
                format!("expected point ({ex_ix}, {ex_iy}), found ({ix}, {iy})"),
            ));
        }
        let mut values = fields[2..].iter().map(|v| {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| perr(no, format!("invalid or non-finite value `{v}`")))
        });
        for (slot, c) in complex.iter_mut().zip(&components) {
            if *c == Component::Eps {
                real.push(values.next().expect("width checked")?);
            } else {
                let re = values.next().expect("width checked")?;
                let im = values.next().expect("width checked")?;
                slot.push(Complex64::new(re, im));
            }
        }
        count += 1;
    }
    if count != n {
        return Err(perr(
            last + 1,
            format!("expected nx·ny = {n} data lines, found {count}"),
        ));
    }
    let mut file = FieldGridFile {
        header: FieldHeader {
            version: FORMAT_VERSION,
            nx,
            ny,
            frame,
            k,
            omega,
            n_g,
            band,
            guided,
            components: components.clone(),
        },
        ex: None,
        ey: None,
        hz: None,
        eps: None,
    };
    for (data, c) in complex.into_iter().zip(&components) {
        match c {
            Component::Ex => file.ex = Some(Grid2::from_vec(nx, ny, data)?),
            Component::Ey => file.ey = Some(Grid2::from_vec(nx, ny, data)?),
            Component::Hz => file.hz = Some(Grid2::from_vec(nx, ny, data)?),
            Component::Eps => {}
        }
    }
    if components.contains(&Component::Eps) {
        file.eps = Some(Grid2::from_vec(nx, ny, real)?);
    }
    Ok(file)
}

/// A CSV table; numeric cells are formatted by the caller.
#[derive(Debug, Clone, Default)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Column header and rows, without provenance.
    pub fn body(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn write_file(&self, path: &Path, provenance: &Provenance) -> Result<()> {
        let mut s = String::new();
        for line in provenance.lines("#") {
            s.push_str(&line);
            s.push('\n');
        }
        s.push_str(&self.body());
        fs::write(path, s)?;
        Ok(())
    }
}

/// Body of a provenance-stamped text file (everything after the leading `#` lines).
pub fn strip_provenance(text: &str) -> &str {
    let mut rest = text;
    while rest.starts_with('#') {
        rest = rest.split_once('\n').map_or("", |(_, r)| r);
    }
    rest
}

/// Linear diverging colour map on `[lo, hi]`: blue at `lo`, white at the
/// midpoint, red at `hi`. Undefined cells are mid-grey.
pub fn diverging_rgb(v: Option<f64>, lo: f64, hi: f64) -> [u8; 3] {
    let Some(v) = v else {
        return [128, 128, 128];
    };
    let t = if hi > lo {
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.5
    };
    let ramp = |u: f64| (255.0 * u).round() as u8;
    if t < 0.5 {
        let u = t / 0.5;
        [ramp(u), ramp(u), 255]
    } else {
        let u = (1.0 - t) / 0.5;
        [255, ramp(u), ramp(u)]
    }
}

/// Writes a P6 heatmap with `y` increasing upwards; every grid cell becomes a
/// `scale × scale` block of pixels.
pub fn write_heatmap(
    path: &Path,
    grid: &Grid2<Option<f64>>,
    lo: f64,
    hi: f64,
    scale: usize,
    provenance: &Provenance,
) -> Result<()> {
    let scale = scale.max(1);
    let (w, h) = (grid.nx() * scale, grid.ny() * scale);
    let mut out = Vec::with_capacity(w * h * 3 + 128);
    out.extend_from_slice(b"P6\n");
    for line in provenance.lines("#") {
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    let _ = writeln!(out, "# linear map [{}, {}] blue-white-red", fmt_num(lo), fmt_num(hi));
    let _ = write!(out, "{w} {h}\n255\n");
    for py in 0..h {
        let iy = grid.ny() - 1 - py / scale;
        for px in 0..w {
            out.extend_from_slice(&diverging_rgb(grid[(px / scale, iy)], lo, hi));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_mode() -> BlochMode<f64> {
        let (nx, ny) = (3, 4);
        let f = |ix: usize, iy: usize, s: f64| Complex64::new(s * (ix as f64 + 0.1) / 3.0, -(iy as f64) * 1.0e-7 + s);
        BlochMode {
            k: 0.31,
            omega: 0.270_643_123_456_789,
            band_index: 17,
            ex: Grid2::from_fn(nx, ny, |ix, iy| f(ix, iy, 1.0)),
            ey: Grid2::from_fn(nx, ny, |ix, iy| f(ix, iy, -0.3)),
            hz: Grid2::from_fn(nx, ny, |ix, iy| f(ix, iy, 2.0 / 3.0)),
            frame: GridFrame {
                dx: 433.0 / 3.0,
                dy: 1.0 / 7.0,
                x0: 0.0,
                y0: -0.2,
            },
            eps: Some(Grid2::from_fn(nx, ny, |ix, _| if ix == 1 { 1.0 } else { 8.41 })),
            n_g: Some(3.554_984_455_204_307_7),
            guided: true,
            confinement: 0.0,
        }
    }

    fn text(mode: &BlochMode<f64>) -> String {
        let mut buf = Vec::new();
        FieldGridFile::from_mode(mode)
            .write_to(&mut buf, Some(&Provenance::for_config("x")))
            .unwrap();
        String::from_utf8(buf).unwrap()
    }

    fn read(s: &str) -> Result<FieldGridFile> {
        FieldGridFile::read_from(s.as_bytes())
    }

    #[test]
    fn round_trip_is_exact() {
        let mode = sample_mode();
        let t1 = text(&mode);
        let back = read(&t1).unwrap().into_mode().unwrap();
        assert_eq!(back.ex, mode.ex);
        assert_eq!(back.ey, mode.ey);
        assert_eq!(back.hz, mode.hz);
        assert_eq!(back.eps, mode.eps);
        assert_eq!((back.k, back.omega, back.n_g), (mode.k, mode.omega, mode.n_g));
        assert_eq!((back.band_index, back.guided), (17, true));
        assert_eq!(back.frame, mode.frame);
        assert_eq!(text(&back), t1);
    }

    #[test]
    fn numbers_are_locale_free_and_exact() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 6.02e23, f64::MIN_POSITIVE] {
            let s = fmt_num(v);
            assert!(!s.contains(','));
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_num(-0.0), "0");
    }

    #[test]
    fn header_without_optional_fields() {
        let eps = Grid2::filled(2, 2, 4.0);
        let frame = GridFrame {
            dx: 1.0,
            dy: 1.0,
            x0: 0.0,
            y0: 0.0,
        };
        let file = FieldGridFile::from_dielectric(&eps, frame);
        let s = {
            let mut b = Vec::new();
            file.write_to(&mut b, None).unwrap();
            String::from_utf8(b).unwrap()
        };
        assert!(s.contains("n_g none\n") && s.contains("components eps\n"));
        let back = read(&s).unwrap();
        assert_eq!(back, file);
        assert!(matches!(back.into_mode(), Err(Error::MissingComponent(c)) if c == "Ex"));
    }

    #[test]
    fn missing_hz_is_named() {
        let t = text(&sample_mode());
        // Drop Hz from the header and the two Hz columns from every line.
        let mut out = String::new();
        let mut body = false;
        for line in t.lines() {
            if body {
                let f: Vec<&str> = line.split_whitespace().collect();
                out.push_str(&[&f[..6], &f[8..]].concat().join(" "));
            } else if line.starts_with("components") {
                out.push_str("components Ex Ey eps");
            } else {
                out.push_str(line);
            }
            body |= line == "end_header";
            out.push('\n');
        }
        let err = read(&out).unwrap().into_mode().unwrap_err();
        assert!(matches!(&err, Error::MissingComponent(c) if c == "Hz"), "{err}");
    }

    fn line_of(err: Error) -> usize {
        match err {
            Error::Parse { line, .. } => line,
            other => panic!("expected a parse error, got {other}"),
        }
    }

    #[test]
    fn malformed_files_report_lines() {
        let t = text(&sample_mode());
        let lines: Vec<&str> = t.lines().collect();
        let header_end = lines.iter().position(|l| *l == "end_header").unwrap();
        let first_data = header_end + 2; // 1-based line number

        // Body shorter than nx·ny.
        let short = lines[..lines.len() - 1].join("\n");
        assert_eq!(line_of(read(&short).unwrap_err()), lines.len());

        // Out-of-order index.
        let mut swapped = lines.clone();
        swapped.swap(first_data - 1, first_data);
        assert_eq!(line_of(read(&swapped.join("\n")).unwrap_err()), first_data);

        // Non-finite value.
        let mut f: Vec<String> = lines[first_data].split(' ').map(String::from).collect();
        f[3] = "NaN".into();
        let mut nan = lines.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        nan[first_data] = f.join(" ");
        assert_eq!(line_of(read(&nan.join("\n")).unwrap_err()), first_data + 1);

        // Too few columns.
        let mut cut = lines.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        cut[first_data - 1] = "0 0 1 2".into();
        assert_eq!(line_of(read(&cut.join("\n")).unwrap_err()), first_data);

        // Unknown key and bad version.
        let unknown = t.replacen("version 1", "version 1\ncolour blue", 1);
        assert_eq!(line_of(read(&unknown).unwrap_err()), 4);
        let v2 = t.replacen("version 1", "version 2", 1);
        assert_eq!(line_of(read(&v2).unwrap_err()), 3);

        // Truncated header.
        assert!(matches!(read("version 1\nnx 2\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn extra_lines_rejected() {
        let mut t = text(&sample_mode());
        t.push_str("0 0 1 1 1 1 1 1 1\n");
        assert!(matches!(read(&t), Err(Error::Parse { .. })));
    }

    #[test]
    fn provenance_and_csv() {
        let p = Provenance::for_config("a = 1\n");
        assert_eq!(p.config_hash.len(), 64);
        assert_ne!(p.config_hash, Provenance::for_config("a = 2\n").config_hash);
        let mut t = CsvTable::new(&["k", "omega"]);
        t.push(vec!["0.3".into(), "0.27".into()]);
        assert_eq!(t.body(), "k,omega\n0.3,0.27\n");
        let full = format!("{}\n{}\n{}", p.lines("#")[0], p.lines("#")[1], t.body());
        assert_eq!(strip_provenance(&full), t.body());
    }

    #[test]
    fn colour_map_endpoints() {
        assert_eq!(diverging_rgb(Some(-1.0), -1.0, 1.0), [0, 0, 255]);
        assert_eq!(diverging_rgb(Some(0.0), -1.0, 1.0), [255, 255, 255]);
        assert_eq!(diverging_rgb(Some(1.0), -1.0, 1.0), [255, 0, 0]);
        assert_eq!(diverging_rgb(Some(7.0), -1.0, 1.0), [255, 0, 0]);
        assert_eq!(diverging_rgb(None, -1.0, 1.0), [128, 128, 128]);
    }

    #[test]
    fn pixmap_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ppm");
        let g = Grid2::from_fn(2, 3, |ix, iy| if (ix, iy) == (0, 0) { Some(1.0) } else { None });
        write_heatmap(&path, &g, -1.0, 1.0, 2, &Provenance::for_config("")).unwrap();
        let bytes = fs::read(&path).unwrap();
        let body_start = bytes.len() - 4 * 6 * 3;
        let header = String::from_utf8_lossy(&bytes[..body_start]);
        assert!(header.starts_with("P6\n# chiralwave"));
        assert!(header.ends_with("4 6\n255\n"));
        // Grid point (0, 0) is the bottom-left 2×2 block.
        let px = |x: usize, y: usize| &bytes[body_start + 3 * (y * 4 + x)..][..3];
        assert_eq!(px(0, 5), &[255, 0, 0]);
        assert_eq!(px(1, 4), &[255, 0, 0]);
        assert_eq!(px(0, 0), &[128, 128, 128]);
        assert_eq!(px(2, 5), &[128, 128, 128]);
    }
}
