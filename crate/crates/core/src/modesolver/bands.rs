//! Band structures sampled over wavenumber, with bands followed by modal overlap.

use std::collections::HashMap;

use log::warn;
use rayon::prelude::*;

use super::{build_mode, bulk_gap, check_k, classify, solve_raw, SolverOptions};
use crate::error::{Error, Result};
use crate::geometry::DielectricGrid;
use crate::scalar::{Cplx, Real};

/// Minimum overlap of periodic parts for two samples to belong to one band.
pub const TRACKING_OVERLAP: f64 = 0.5;

/// All computed modes at one wavenumber.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSample<T> {
    pub k: T,
    /// Ascending frequencies (units 2πc/a).
    pub omega: Vec<T>,
    /// Tracked band label of each entry of `omega`.
    pub label: Vec<usize>,
    pub n_g: Vec<Option<T>>,
    pub confinement: Vec<T>,
    pub guided: Vec<bool>,
    pub bulk_gap: Option<(T, T)>,
}

impl<T: Real> BandSample<T> {
    /// Position in `omega` of the entry carrying `label`.
    pub fn index_of(&self, label: usize) -> Option<usize> {
        self.label.iter().position(|&l| l == label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandStructure<T> {
    pub samples: Vec<BandSample<T>>,
    /// Cladding index of the light line `ω = c k / n`.
    pub light_line_index: T,
    /// Sample indices where overlap tracking was ambiguous and energy ordering was used.
    pub fallback_steps: Vec<usize>,
}

impl<T: Real> BandStructure<T> {
    pub fn n_bands(&self) -> usize {
        self.samples.first().map_or(0, |s| s.omega.len())
    }

    /// `(k, ω)` along the tracked band `label`.
    pub fn band(&self, label: usize) -> Vec<(T, T)> {
        self.samples
            .iter()
            .filter_map(|s| s.index_of(label).map(|i| (s.k, s.omega[i])))
            .collect()
    }

    /// Label of the band flagged guided at the most samples (ties: higher mean confinement).
    pub fn guided_band(&self) -> Option<usize> {
        let mut best: Option<(usize, usize, T)> = None;
        for label in 0..self.n_bands() {
            let mut count = 0usize;
            let mut conf = T::zero();
            for s in &self.samples {
                if let Some(i) = s.index_of(label) {
                    conf = conf + s.confinement[i];
                    if s.guided[i] {
                        count += 1;
                    }
                }
            }
            if count == 0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((_, c, f)) => count > c || (count == c && conf > f),
            };
            if better {
                best = Some((label, count, conf));
            }
        }
        best.map(|(l, _, _)| l)
    }
}

struct SampleData<T: Real> {
    sample: BandSample<T>,
    indices: Vec<(i32, i32)>,
    vectors: Vec<Vec<Cplx<T>>>,
}

/// Solves every wavenumber in `k_samples` (strictly increasing, units 2π/a).
pub fn band_scan<T: Real>(eps: &DielectricGrid<T>, k_samples: &[T], n_bands: usize) -> Result<BandStructure<T>> {
    band_scan_with(eps, k_samples, n_bands, &SolverOptions::default())
}

pub fn band_scan_with<T: Real>(
    eps: &DielectricGrid<T>,
    k_samples: &[T],
    n_bands: usize,
    opts: &SolverOptions<T>,
) -> Result<BandStructure<T>> {
    for &k in k_samples {
        check_k(k)?;
    }
    if k_samples.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("k samples must be strictly increasing".into()));
    }
    let has_holes = !eps.holes.is_empty();
    let data: Vec<SampleData<T>> = k_samples
        .par_iter()
        .map(|&k| {
            let raw = solve_raw(eps, T::TAU() * k, T::zero(), n_bands, opts)?;
            let gap = if opts.bulk_reference {
                bulk_gap(eps, k, opts)?
            } else {
                None
            };
            let mut sample = BandSample {
                k,
                omega: Vec::with_capacity(n_bands),
                label: (0..n_bands).collect(),
                n_g: Vec::with_capacity(n_bands),
                confinement: Vec::with_capacity(n_bands),
                guided: Vec::with_capacity(n_bands),
                bulk_gap: gap,
            };
            for b in 0..n_bands {
                let mut mode = build_mode(&raw, eps, k, b, opts);
                classify(&mut mode, gap, has_holes);
                sample.omega.push(mode.omega);
                sample.n_g.push(mode.n_g);
                sample.confinement.push(mode.confinement);
                sample.guided.push(mode.guided);
            }
            Ok(SampleData {
                sample,
                indices: raw.op.basis.indices.clone(),
                vectors: raw.vectors,
            })
        })
        .collect::<Result<_>>()?;

    let mut fallback_steps = Vec::new();
    let mut samples: Vec<BandSample<T>> = Vec::with_capacity(data.len());
    for (step, current) in data.iter().enumerate() {
        let mut sample = current.sample.clone();
        if step > 0 {
            let prev = &data[step - 1];
            let prev_labels = &samples[step - 1].label;
            match match_bands(prev, current) {
                Some(assign) => {
                    for (j_prev, j_cur) in assign {
                        sample.label[j_cur] = prev_labels[j_prev];
                    }
                }
                None => {
                    warn!(
                        "band tracking ambiguous between k = {} and k = {}; using energy ordering",
                        prev.sample.k, current.sample.k
                    );
                    fallback_steps.push(step);
                }
            }
        }
        samples.push(sample);
    }
    Ok(BandStructure {
        samples,
        light_line_index: T::one(),
        fallback_steps,
    })
}

/// Greedy maximum-overlap pairing of bands between neighbouring samples.
/// Returns `None` when some pairing falls below [`TRACKING_OVERLAP`].
fn match_bands<T: Real>(prev: &SampleData<T>, cur: &SampleData<T>) -> Option<Vec<(usize, usize)>> {
    let lookup: HashMap<(i32, i32), usize> = cur.indices.iter().enumerate().map(|(i, &g)| (g, i)).collect();
    let n = prev.vectors.len().min(cur.vectors.len());
    let mut pairs = Vec::with_capacity(n * n);
    for (i, pv) in prev.vectors.iter().enumerate().take(n) {
        for (j, cv) in cur.vectors.iter().enumerate().take(n) {
            let mut acc = Cplx::new(T::zero(), T::zero());
            let (mut np, mut nc) = (T::zero(), T::zero());
            for (idx, &g) in prev.indices.iter().enumerate() {
                np = np + pv[idx].norm_sqr();
                if let Some(&c) = lookup.get(&g) {
                    acc = acc + pv[idx].conj() * cv[c];
                }
            }
            for v in cv {
                nc = nc + v.norm_sqr();
            }
            pairs.push((acc.norm() / (np * nc).sqrt(), i, j));
        }
    }
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut used_prev = vec![false; n];
    let mut used_cur = vec![false; n];
    let mut out = Vec::with_capacity(n);
    for (o, i, j) in pairs {
        if used_prev[i] || used_cur[j] {
            continue;
        }
        if o < T::lit(TRACKING_OVERLAP) {
            return None;
        }
        used_prev[i] = true;
        used_cur[j] = true;
        out.push((i, j));
    }
    Some(out)
}

/// Helper for callers that want a uniformly spaced scan.
pub fn linspace<T: Real>(lo: T, hi: T, n: usize) -> Vec<T> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * T::from_usize_lossy(i) / T::from_usize_lossy(n - 1))
            .collect(),
    }
}
