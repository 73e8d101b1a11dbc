//! Slices, heavy dyadic cubes of projections, cover regularization and heavy sets.

use crate::dyadic::{dyadic_content, DyadicSet, GridCube, ShiftedGrid};
use crate::error::{Error, Result};
use crate::measures::{
    finest_grid_level, grid_masses, maximal_function, project, DiscreteMeasure, Frame, ProjectedMeasure,
    COARSEST_GRID_LEVEL,
};
use crate::spectral::{sobolev_norm, transform, SobolevKind};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

/// The plane V = anchor + L^⊥ for L spanned by `frame`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SliceSpec {
    pub frame: Frame,
    pub anchor: [f64; 3],
    pub thickness: f64,
}

impl SliceSpec {
    pub fn new(frame: Frame, anchor: [f64; 3], depth: u32) -> Self {
        SliceSpec { frame, anchor, thickness: (-(depth as f64)).exp2() }
    }
}

/// Orthonormal basis of the complement of the frame's span.
pub fn complement_basis(frame: &Frame) -> Vec<[f64; 3]> {
    let d = frame.dim;
    let mut basis: Vec<[f64; 3]> = frame.vecs[..frame.n].to_vec();
    let mut out = Vec::new();
    for axis in 0..d {
        let mut v = [0.0; 3];
        v[axis] = 1.0;
        for b in &basis {
            let dot: f64 = (0..d).map(|i| v[i] * b[i]).sum();
            for i in 0..d {
                v[i] -= dot * b[i];
            }
        }
        let norm = (0..d).map(|i| v[i] * v[i]).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for x in v.iter_mut() {
                *x /= norm;
            }
            basis.push(v);
            out.push(v);
        }
        if out.len() + frame.n == d {
            break;
        }
    }
    out
}

/// Cells of a set meeting V, with their coordinates along L^⊥ quantised at the cell size.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceSet {
    pub dim: usize,
    pub depth: u32,
    /// The cells of the original set whose closed cube meets V.
    pub ambient: DyadicSet,
    /// floor(((centre − anchor)·w_k)/h) for the complement basis w, sorted and deduplicated.
    pub coords: Vec<[i64; 2]>,
}

impl SliceSet {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Number of occupied level-j cubes of L^⊥ (relative to the slice coordinates).
    pub fn covering_number(&self, j: u32) -> Result<usize> {
        if j > self.depth {
            return Err(Error::Resolution(format!("scale level {j} finer than depth {}", self.depth)));
        }
        let sh = self.depth - j;
        let set: HashSet<[i64; 2]> = self.coords.iter().map(|c| [c[0] >> sh, c[1] >> sh]).collect();
        Ok(set.len())
    }
}

fn closed_cube_meets_plane(frame: &Frame, normal_basis: &[[f64; 3]], lo: [f64; 3], h: f64, x: &[f64; 3]) -> bool {
    let d = frame.dim;
    if frame.n == 1 {
        let v = frame.vecs[0];
        let c: f64 = (0..d).map(|i| v[i] * (lo[i] + h / 2.0 - x[i])).sum();
        let reach: f64 = (0..d).map(|i| v[i].abs()).sum::<f64>() * h / 2.0;
        return c.abs() <= reach;
    }
    // V is the line x + t·w; slab test against the closed box.
    let w = normal_basis[0];
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..d {
        let (a, b) = (lo[i], lo[i] + h);
        if w[i].abs() < 1e-15 {
            if x[i] < a || x[i] > b {
                return false;
            }
        } else {
            let (u, v) = ((a - x[i]) / w[i], (b - x[i]) / w[i]);
            t0 = t0.max(u.min(v));
            t1 = t1.min(u.max(v));
        }
    }
    t0 <= t1
}

pub fn slice_set(set: &DyadicSet, spec: &SliceSpec) -> Result<SliceSet> {
    let frame = &spec.frame;
    if frame.dim != set.dim() || frame.n >= set.dim() {
        return Err(Error::Parameter("slice frame must span a proper subspace of R^d".into()));
    }
    Frame::new(frame.dim, &frame.vecs[..frame.n]).map_err(|_| Error::Parameter("degenerate slice frame".into()))?;
    let comp = complement_basis(frame);
    let h = set.cell_size();
    let hits: Vec<bool> = set
        .cells()
        .map(|c| closed_cube_meets_plane(frame, &comp, c.origin(), h, &spec.anchor))
        .collect();
    let ambient = set.subset(|i| hits[i]);
    let mut coords: Vec<[i64; 2]> = ambient
        .cells()
        .map(|c| {
            let ctr = c.center();
            let mut k = [0i64; 2];
            for (m, w) in comp.iter().enumerate() {
                let t: f64 = (0..set.dim()).map(|i| (ctr[i] - spec.anchor[i]) * w[i]).sum();
                k[m] = (t / h).floor() as i64;
            }
            k
        })
        .collect();
    coords.sort_unstable();
    coords.dedup();
    Ok(SliceSet { dim: set.dim() - frame.n, depth: set.depth(), ambient, coords })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeavyFamily {
    pub grid: ShiftedGrid,
    pub threshold: f64,
    pub cubes: Vec<GridCube>,
    /// The standing assumption M > 3^n·mass failed; the family was still computed.
    pub degenerate: bool,
}

impl HeavyFamily {
    pub fn contains_point(&self, x: &[f64]) -> bool {
        self.cubes.iter().any(|q| q.contains_point(x))
    }
}

/// Maximal cubes of `grid` with ν(Q)/side^n ≥ threshold.
pub fn heavy_cubes_with_threshold(p: &ProjectedMeasure, threshold: f64, grid: ShiftedGrid) -> Vec<GridCube> {
    let n = p.n() as i32;
    let mut heavy: HashSet<GridCube> = HashSet::new();
    let mut out = Vec::new();
    for level in COARSEST_GRID_LEVEL..=finest_grid_level(p) {
        let side = (-(level as f64)).exp2();
        let masses = grid_masses(p, grid, level);
        let mut here: Vec<GridCube> =
            masses.into_iter().filter(|(_, m)| *m / side.powi(n) >= threshold).map(|(q, _)| q).collect();
        here.sort();
        for q in here {
            let mut a = q;
            let mut covered = false;
            while a.level > COARSEST_GRID_LEVEL {
                a = a.parent();
                if heavy.contains(&a) {
                    covered = true;
                    break;
                }
            }
            if !covered {
                out.push(q);
            }
            heavy.insert(q);
        }
    }
    out
}

/// Maximal cubes with ν(Q)/side^n ≥ 3^{-n}·M.
pub fn dyadic_heavy_cubes(p: &ProjectedMeasure, m: f64, grid: ShiftedGrid) -> Result<HeavyFamily> {
    if !(m > 0.0) {
        return Err(Error::Parameter(format!("threshold M must be positive, got {m}")));
    }
    let n = p.n() as i32;
    let threshold = 3f64.powi(-n) * m;
    let degenerate = m <= 3f64.powi(n) * p.total_mass();
    Ok(HeavyFamily { grid, threshold, cubes: heavy_cubes_with_threshold(p, threshold, grid), degenerate })
}

/// Bins whose maximal function reaches M (the set H′).
pub fn thresholded_bins(p: &ProjectedMeasure, m: f64) -> Vec<[i64; 2]> {
    let vals = maximal_function(p, &p.centers());
    p.bins.iter().zip(vals).filter(|(_, v)| v.value >= m).map(|(b, _)| b.0).collect()
}

/// Bins of H′ lying in no cube of ∪_e H^e at threshold (c*)^{-n}M; empty when the containment holds.
pub fn containment_failures(p: &ProjectedMeasure, m: f64, c_star: f64) -> Vec<[i64; 2]> {
    let n = p.n();
    let thr = c_star.powi(-(n as i32)) * m;
    let fams: Vec<Vec<GridCube>> =
        ShiftedGrid::all(n).into_iter().map(|g| heavy_cubes_with_threshold(p, thr, g)).collect();
    thresholded_bins(p, m)
        .into_iter()
        .filter(|k| {
            let c = p.center(k);
            !fams.iter().any(|f| f.iter().any(|q| q.contains_point(&c[..n])))
        })
        .collect()
}

/// Standard dyadic cube of R^n: [k·2^{-level}, (k+1)·2^{-level}).
fn std_cube(n: usize, level: i32, k: [i64; 2]) -> GridCube {
    GridCube { grid: ShiftedGrid::standard(n), level, k }
}

fn ancestor_k(k: [i64; 2], levels_up: i32) -> [i64; 2] {
    [k[0] >> levels_up, k[1] >> levels_up]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegularizedCover {
    pub cubes: Vec<GridCube>,
    pub exponent: f64,
    pub sum_cover: f64,
    pub sum_regularized: f64,
    /// Measured constant C in Σ_P side^t ≤ C·Σ_Q side^t.
    pub ratio: f64,
    pub covers: bool,
    /// Some cover cube has no ancestor (down to level 0) leaving H′.
    pub degenerate: bool,
}

/// Replace each cover cube by its smallest ancestor meeting the complement of H′, then keep the maximal ones.
///
/// `h_prime` holds bin indices at `bin_level` of the standard grid; cover cubes must be standard-grid cubes.
pub fn regularize_cover(cover: &[GridCube], h_prime: &[[i64; 2]], bin_level: i32, n: usize, t: f64) -> Result<RegularizedCover> {
    for q in cover {
        if q.grid != ShiftedGrid::standard(n) || q.level > bin_level {
            return Err(Error::Parameter("cover cubes must be standard cubes no finer than the bins".into()));
        }
    }
    let mut sorted: Vec<GridCube> = cover.to_vec();
    sorted.sort_by_key(|q| q.level);
    let set: HashSet<GridCube> = sorted.iter().copied().collect();
    if set.len() != sorted.len() {
        return Err(Error::Parameter("cover contains repeated cubes".into()));
    }
    for q in &sorted {
        let mut a = *q;
        while a.level > COARSEST_GRID_LEVEL.min(0) && a.level > sorted[0].level {
            a = a.parent();
            if set.contains(&a) {
                return Err(Error::Parameter("cover cubes are not disjoint".into()));
            }
        }
    }
    let hp: HashSet<[i64; 2]> = h_prime.iter().copied().collect();
    // Count of H′ bins under each cube, built lazily per level.
    let mut counts: HashMap<(i32, [i64; 2]), u64> = HashMap::new();
    for k in &hp {
        for level in 0..=bin_level {
            *counts.entry((level, ancestor_k(*k, bin_level - level))).or_insert(0) += 1;
        }
    }
    let inside_h = |level: i32, k: [i64; 2]| {
        let full = 1u64 << (n as i32 * (bin_level - level));
        counts.get(&(level, k)).copied().unwrap_or(0) == full
    };
    let meets_h = |level: i32, k: [i64; 2]| counts.get(&(level, k)).copied().unwrap_or(0) > 0;
    let mut degenerate = false;
    let mut lifted: BTreeSet<GridCube> = BTreeSet::new();
    let mut used: Vec<GridCube> = Vec::new();
    for q in cover {
        if !meets_h(q.level, q.k) {
            continue;
        }
        used.push(*q);
        let mut a = *q;
        while inside_h(a.level, a.k) {
            if a.level == 0 {
                degenerate = true;
                break;
            }
            a = a.parent();
        }
        lifted.insert(a);
    }
    let cubes: Vec<GridCube> = lifted
        .iter()
        .copied()
        .filter(|q| {
            let mut a = *q;
            while a.level > 0 {
                a = a.parent();
                if lifted.contains(&a) {
                    return false;
                }
            }
            true
        })
        .collect();
    let covers = hp.iter().all(|k| {
        cubes.iter().any(|q| ancestor_k(*k, bin_level - q.level) == q.k)
    });
    let sum = |v: &[GridCube]| v.iter().map(|q| q.side().powf(t)).sum::<f64>();
    let (sum_cover, sum_regularized) = (sum(&used), sum(&cubes));
    let ratio = if sum_cover > 0.0 { sum_regularized / sum_cover } else { 0.0 };
    Ok(RegularizedCover { cubes, exponent: t, sum_cover, sum_regularized, ratio, covers, degenerate })
}

/// Optimal dyadic-content cover (standard grid, levels 0..=bin_level) of a bin set.
pub fn content_cover_of_bins(bins: &[[i64; 2]], bin_level: i32, n: usize, t: f64) -> Vec<GridCube> {
    let mut values: BTreeMap<(i32, [i64; 2]), (f64, bool)> = BTreeMap::new();
    let leaf = (-(bin_level as f64) * t).exp2();
    let mut current: BTreeMap<[i64; 2], f64> = bins.iter().map(|k| (*k, leaf)).collect();
    for (k, v) in &current {
        values.insert((bin_level, *k), (*v, true));
    }
    for level in (0..bin_level).rev() {
        let own = (-(level as f64) * t).exp2();
        let mut next: BTreeMap<[i64; 2], f64> = BTreeMap::new();
        for (k, v) in &current {
            let pk = if n == 1 { [k[0] >> 1, 0] } else { ancestor_k(*k, 1) };
            *next.entry(pk).or_insert(0.0) += v;
        }
        for (k, v) in next.iter_mut() {
            let own_wins = own <= *v;
            if own_wins {
                *v = own;
            }
            values.insert((level, *k), (*v, own_wins));
        }
        current = next;
    }
    let mut out = Vec::new();
    let mut stack: Vec<(i32, [i64; 2])> = current.keys().map(|k| (0, *k)).collect();
    while let Some((level, k)) = stack.pop() {
        let Some(&(_, own)) = values.get(&(level, k)) else { continue };
        if own {
            out.push(std_cube(n, level, k));
        } else {
            for bx in 0..2 {
                for by in 0..(if n == 2 { 2 } else { 1 }) {
                    stack.push((level + 1, [2 * k[0] + bx, 2 * k[1] + by]));
                }
            }
        }
    }
    out.sort();
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeavySetReport {
    pub threshold: f64,
    pub cells: usize,
    pub content_exponent: f64,
    pub content: f64,
    pub sigma: f64,
    pub sobolev: f64,
    /// M^{-1}·‖ν_L‖²_{H^σ}.
    pub bound: f64,
    pub ratio: f64,
    pub flags: Vec<String>,
    #[serde(skip)]
    pub set: Option<DyadicSet>,
}

/// F_M = cells whose projected bin has maximal function ≥ M, with both sides of the content bound.
pub fn heavy_set(
    set: &DyadicSet,
    measure: &DiscreteMeasure,
    frame: &Frame,
    m: f64,
    s: f64,
    eps: f64,
) -> Result<HeavySetReport> {
    let n = frame.n as f64;
    let mut flags = Vec::new();
    if !(s > n && s <= (2.0 * n).min(set.dim() as f64)) {
        flags.push(format!("s = {s} outside (n, min(2n, d)]"));
    }
    if m <= 3f64.powi(frame.n as i32) * measure.total_mass {
        flags.push(format!("M = {m} ≤ 3^n·mass"));
    }
    let p = project(measure, frame)?;
    let h = p.bin_width;
    let heavy: HashSet<[i64; 2]> = thresholded_bins(&p, m).into_iter().collect();
    let centers: Vec<[f64; 3]> = set.cells().map(|c| c.center()).collect();
    let keep: Vec<bool> = centers
        .iter()
        .map(|c| {
            let q = frame.coords(c);
            let mut k = [0i64; 2];
            for j in 0..frame.n {
                k[j] = (q[j] / h).floor() as i64;
            }
            heavy.contains(&k)
        })
        .collect();
    let f_m = set.subset(|i| keep[i]);
    let content_exponent = n + 2.0 * eps;
    let content = if f_m.is_empty() { 0.0 } else { dyadic_content(&f_m, content_exponent)? };
    let sigma = (s - n - eps) / 2.0;
    let cutoff = ((0.5 / h).round() as i64).max(1);
    let sobolev = sobolev_norm(&transform(&p, cutoff)?, sigma, SobolevKind::Inhomogeneous);
    let bound = sobolev / m;
    Ok(HeavySetReport {
        threshold: m,
        cells: f_m.len(),
        content_exponent,
        content,
        sigma,
        sobolev,
        bound,
        ratio: if bound > 0.0 { content / bound } else { 0.0 },
        flags,
        set: Some(f_m),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SliceSpectrumRow {
    pub scale: f64,
    pub threshold_exponent: f64,
    pub fraction_heavy: f64,
    pub slice_count_p50: usize,
    pub slice_count_max: usize,
}

/// For each level j, the fraction of occupied δ-slabs (δ = 2^{-j}) of L whose slice needs more than δ^{-(s−n)−β} δ-cubes.
pub fn slice_spectrum(set: &DyadicSet, frame: &Frame, s: f64, beta: f64, levels: &[u32]) -> Result<Vec<SliceSpectrumRow>> {
    if !(beta > 0.0) {
        return Err(Error::Parameter("beta must be positive".into()));
    }
    let n = frame.n;
    let d = set.dim() as u32;
    let centers: Vec<[f64; 2]> = set.cells().map(|c| frame.coords(&c.center())).collect();
    let mut rows = Vec::new();
    for &j in levels {
        if j > set.depth() {
            return Err(Error::Resolution(format!("level {j} finer than depth {}", set.depth())));
        }
        let delta = (-(j as f64)).exp2();
        let sh = d * (set.depth() - j);
        let mut pairs: Vec<([i64; 2], u64)> = centers
            .iter()
            .zip(set.codes())
            .map(|(p, code)| {
                let mut k = [0i64; 2];
                for i in 0..n {
                    k[i] = (p[i] / delta).floor() as i64;
                }
                (k, code >> sh)
            })
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        let mut counts: Vec<usize> = Vec::new();
        let mut i = 0;
        while i < pairs.len() {
            let mut e = i;
            while e < pairs.len() && pairs[e].0 == pairs[i].0 {
                e += 1;
            }
            counts.push(e - i);
            i = e;
        }
        let expo = (s - n as f64) + beta;
        let thr = delta.powf(-expo);
        let heavy = counts.iter().filter(|&&c| c as f64 > thr).count();
        counts.sort_unstable();
        rows.push(SliceSpectrumRow {
            scale: delta,
            threshold_exponent: expo,
            fraction_heavy: if counts.is_empty() { 0.0 } else { heavy as f64 / counts.len() as f64 },
            slice_count_p50: counts.get(counts.len().saturating_sub(1) / 2).copied().unwrap_or(0),
            slice_count_max: counts.last().copied().unwrap_or(0),
        });
    }
    Ok(rows)
}

pub fn slice_spectrum_csv(rows: &[SliceSpectrumRow]) -> String {
    let mut out = String::from("scale,thresholdExponent,fractionHeavy,sliceCountP50,sliceCountMax\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.scale, r.threshold_exponent, r.fraction_heavy, r.slice_count_p50, r.slice_count_max
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::natural_measure;

    fn x_axis() -> Frame {
        Frame::new(2, &[[1.0, 0.0, 0.0]]).unwrap()
    }

    #[test]
    fn vertical_line_slice_of_square() {
        let sq = DyadicSet::full(2, 5).unwrap();
        let spec = SliceSpec::new(x_axis(), [0.5 + 1e-9, 0.3, 0.0], 5);
        let sl = slice_set(&sq, &spec).unwrap();
        assert_eq!(sl.len(), 32);
        assert_eq!(sl.ambient.len(), 32);
        let empty = DyadicSet::empty(2, 5).unwrap();
        assert!(slice_set(&empty, &spec).unwrap().is_empty());
    }

    #[test]
    fn uniform_line_has_no_heavy_cubes() {
        let m = natural_measure(&DyadicSet::full(1, 6).unwrap(), 1.0).unwrap();
        let p = project(&m, &Frame::new(1, &[[1.0, 0.0, 0.0]]).unwrap()).unwrap();
        let fam = dyadic_heavy_cubes(&p, 4.0, ShiftedGrid::standard(1)).unwrap();
        assert!(fam.cubes.is_empty() && !fam.degenerate);
        let empty = ProjectedMeasure { bins: vec![], ..p.clone() };
        assert!(dyadic_heavy_cubes(&empty, 4.0, ShiftedGrid::standard(1)).unwrap().cubes.is_empty());
        assert!(dyadic_heavy_cubes(&p, 0.0, ShiftedGrid::standard(1)).is_err());
    }

    #[test]
    fn regularize_toy_tree() {
        // H′ = the level-2 cube [1/4, 1/2) made of two level-3 bins.
        let hp = vec![[2, 0], [3, 0]];
        let q = std_cube(1, 2, [1, 0]);
        let r = regularize_cover(&[q], &hp, 3, 1, 0.5).unwrap();
        assert_eq!(r.cubes, vec![std_cube(1, 1, [0, 0])]);
        assert!(r.covers && !r.degenerate);
        let r = regularize_cover(&[], &[], 3, 1, 0.5).unwrap();
        assert!(r.cubes.is_empty());
        let all: Vec<[i64; 2]> = (0..8).map(|k| [k, 0]).collect();
        let r = regularize_cover(&[std_cube(1, 0, [0, 0])], &all, 3, 1, 0.5).unwrap();
        assert!(r.degenerate);
        let bad = regularize_cover(&[std_cube(1, 0, [0, 0]), std_cube(1, 2, [1, 0])], &hp, 3, 1, 0.5);
        assert!(bad.is_err());
    }

    #[test]
    fn content_cover_of_interval() {
        let bins: Vec<[i64; 2]> = (0..4).map(|k| [k, 0]).collect();
        assert_eq!(content_cover_of_bins(&bins, 3, 1, 1.0), vec![std_cube(1, 1, [0, 0])]);
    }

    #[test]
    fn square_heavy_set_is_empty() {
        let sq = DyadicSet::full(2, 6).unwrap();
        let m = natural_measure(&sq, 2.0).unwrap();
        let r = heavy_set(&sq, &m, &x_axis(), 8.0, 2.0, 0.01).unwrap();
        assert_eq!(r.cells, 0);
    }

    #[test]
    fn square_slices_are_never_heavy() {
        let sq = DyadicSet::full(2, 8).unwrap();
        let rows = slice_spectrum(&sq, &x_axis(), 2.0, 0.1, &[4, 6, 8]).unwrap();
        assert!(rows.iter().all(|r| r.fraction_heavy == 0.0));
        assert_eq!(rows[2].slice_count_max, 256);
    }
}
