//! Discrete measures on dyadic sets, their projections, maximal functions and energies.

use crate::dyadic::{ContentTree, DyadicCube, DyadicSet, GridCube, ShiftedGrid};
use crate::error::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;
use std::fmt::Write as _;

/// Orthonormal vectors spanning a subspace of R^d (θ^⊥ or a plane L).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Frame {
    pub dim: usize,
    pub n: usize,
    pub vecs: [[f64; 3]; 2],
}

impl Frame {
    pub fn new(dim: usize, vecs: &[[f64; 3]]) -> Result<Self> {
        let n = vecs.len();
        if !(1..=2).contains(&n) || n > dim || !(1..=3).contains(&dim) {
            return Err(Error::Parameter(format!("frame of {n} vectors in R^{dim} unsupported")));
        }
        for (a, va) in vecs.iter().enumerate() {
            for (b, vb) in vecs.iter().enumerate() {
                let dot: f64 = (0..dim).map(|i| va[i] * vb[i]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-12 {
                    return Err(Error::Parameter("non-orthonormal frame".into()));
                }
            }
            if va[dim..].iter().any(|&v| v != 0.0) {
                return Err(Error::Parameter("frame vector has components beyond d".into()));
            }
        }
        let mut v = [[0.0; 3]; 2];
        v[..n].copy_from_slice(vecs);
        Ok(Frame { dim, n, vecs: v })
    }

    /// Coordinates of the orthogonal projection of `x`.
    pub fn coords(&self, x: &[f64; 3]) -> [f64; 2] {
        let mut p = [0.0; 2];
        for (k, pk) in p.iter_mut().enumerate().take(self.n) {
            *pk = (0..self.dim).map(|i| self.vecs[k][i] * x[i]).sum();
        }
        p
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    pub support: DyadicSet,
    /// Aligned with the support's cell order; all strictly positive.
    pub weights: Vec<f64>,
    pub total_mass: f64,
    pub normalized: bool,
}

impl DiscreteMeasure {
    /// Cells with non-positive weight are dropped from the support.
    pub fn new(set: &DyadicSet, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != set.len() {
            return Err(Error::Arity("one weight per cell required".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Parameter("weights must be finite and non-negative".into()));
        }
        let support = set.subset(|i| weights[i] > 0.0);
        let weights: Vec<f64> = weights.into_iter().filter(|&w| w > 0.0).collect();
        let total_mass = pairwise_sum(&weights);
        Ok(DiscreteMeasure { support, weights, total_mass, normalized: false })
    }

    pub fn zero(dim: usize, depth: u32) -> Result<Self> {
        Ok(DiscreteMeasure {
            support: DyadicSet::empty(dim, depth)?,
            weights: Vec::new(),
            total_mass: 0.0,
            normalized: false,
        })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let weights: Vec<f64> = self.weights.iter().map(|w| w * factor).collect();
        let total_mass = pairwise_sum(&weights);
        DiscreteMeasure { support: self.support.clone(), weights, total_mass, normalized: false }
    }

    pub fn normalize(&self) -> Self {
        if self.total_mass == 0.0 {
            return self.clone();
        }
        let mut m = self.scaled(1.0 / self.total_mass);
        m.normalized = true;
        m
    }

    /// Mass of the cells inside a dyadic cube.
    pub fn mass_in(&self, cube: &DyadicCube) -> f64 {
        pairwise_sum(&self.weights[self.support.range_in(cube)])
    }
}

/// Summation by recursive halving, so results do not depend on thread count.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Uniform weight 2^{-depth·s} per cell.
pub fn natural_measure(set: &DyadicSet, s: f64) -> Result<DiscreteMeasure> {
    if set.is_empty() {
        return Err(Error::Domain("natural measure of an empty set".into()));
    }
    let w = (-(set.depth() as f64) * s).exp2();
    DiscreteMeasure::new(set, vec![w; set.len()])
}

fn check_t(set: &DyadicSet, t: f64) -> Result<()> {
    if !(t > 0.0) || t > set.dim() as f64 {
        return Err(Error::Parameter(format!("Frostman exponent {t} outside (0, {}]", set.dim())));
    }
    Ok(())
}

/// Node masses of the top-down Frostman construction, level by level (same layout as the content tree).
fn frostman_nodes(tree: &ContentTree) -> Vec<Vec<f64>> {
    let mut mass: Vec<Vec<f64>> = tree.levels.iter().map(|l| vec![0.0; l.len()]).collect();
    if tree.levels[0].is_empty() {
        return mass;
    }
    mass[0][0] = tree.levels[0][0].1;
    for j in 0..tree.depth as usize {
        let (parents, children) = (&tree.levels[j], &tree.levels[j + 1]);
        let mut start = 0;
        for (pi, p) in parents.iter().enumerate() {
            let mut end = start;
            let mut sum = 0.0;
            while end < children.len() && children[end].0 >> tree.dim == p.0 {
                sum += children[end].1;
                end += 1;
            }
            for ci in start..end {
                mass[j + 1][ci] = mass[j][pi] * children[ci].1 / sum;
            }
            start = end;
        }
    }
    mass
}

/// Measure with ν(Q) ≤ content_t(K ∩ Q) ≤ side(Q)^t for every dyadic Q and ν(K) = content_t(K).
pub fn frostman_dyadic(set: &DyadicSet, t: f64) -> Result<DiscreteMeasure> {
    check_t(set, t)?;
    let tree = ContentTree::build(set, t)?;
    let nodes = frostman_nodes(&tree);
    DiscreteMeasure::new(set, nodes[set.depth() as usize].clone())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrostmanBounds {
    pub exponent: f64,
    /// min over occupied nodes of ν(Q) / min(content_t(K∩Q), side^d).
    pub lower_constant: f64,
    /// max over occupied nodes of ν(Q) / side^t.
    pub upper_constant: f64,
}

/// Frostman measure plus a full tree scan of its lower and upper bounds.
pub fn frostman_with_lower_bound(set: &DyadicSet, t: f64) -> Result<(DiscreteMeasure, FrostmanBounds)> {
    check_t(set, t)?;
    let tree = ContentTree::build(set, t)?;
    let nodes = frostman_nodes(&tree);
    let d = set.dim() as f64;
    let mut lower = f64::INFINITY;
    let mut upper: f64 = 0.0;
    for (j, level) in tree.levels.iter().enumerate() {
        let side = (-(j as f64)).exp2();
        for (k, e) in level.iter().enumerate() {
            let nu = nodes[j][k];
            lower = lower.min(nu / e.1.min(side.powf(d)));
            upper = upper.max(nu / side.powf(t));
        }
    }
    if !lower.is_finite() {
        lower = 1.0;
    }
    let m = DiscreteMeasure::new(set, nodes[set.depth() as usize].clone())?;
    Ok((m, FrostmanBounds { exponent: t, lower_constant: lower, upper_constant: upper }))
}

/// Keep the mass inside `cube` (halo 1) or inside 3Q clipped to the unit cube (halo 3).
pub fn restrict(measure: &DiscreteMeasure, cube: &DyadicCube, halo: u32) -> Result<DiscreteMeasure> {
    if cube.level > measure.support.depth() {
        return Err(Error::Resolution("restriction cube finer than the measure".into()));
    }
    let keep: Vec<bool> = measure
        .support
        .cells()
        .map(|c| if halo == 3 { cube.triple_contains(&c) } else { cube.contains(&c) })
        .collect();
    let support = measure.support.subset(|i| keep[i]);
    let weights: Vec<f64> = measure.weights.iter().zip(&keep).filter(|(_, k)| **k).map(|(w, _)| *w).collect();
    let total_mass = pairwise_sum(&weights);
    Ok(DiscreteMeasure { support, weights, total_mass, normalized: false })
}

/// Push-forward binned on the level-`depth` grid of R^n; atoms sit at bin centres.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProjectedMeasure {
    pub frame: Frame,
    pub bin_width: f64,
    pub offset: [f64; 2],
    /// Sorted by bin index.
    pub bins: Vec<([i64; 2], f64)>,
}

impl ProjectedMeasure {
    pub fn n(&self) -> usize {
        self.frame.n
    }

    pub fn center(&self, k: &[i64; 2]) -> [f64; 2] {
        let mut c = [0.0; 2];
        for i in 0..self.n() {
            c[i] = self.offset[i] + (k[i] as f64 + 0.5) * self.bin_width;
        }
        c
    }

    pub fn centers(&self) -> Vec<[f64; 2]> {
        self.bins.iter().map(|(k, _)| self.center(k)).collect()
    }

    pub fn total_mass(&self) -> f64 {
        let w: Vec<f64> = self.bins.iter().map(|b| b.1).collect();
        pairwise_sum(&w)
    }

    /// Same atoms, every position moved by `shift` (bin indices unchanged).
    pub fn translated(&self, shift: [f64; 2]) -> Self {
        let mut p = self.clone();
        for i in 0..self.n() {
            p.offset[i] += shift[i];
        }
        p
    }

    pub fn to_csv(&self) -> String {
        let n = self.n();
        let mut head: Vec<String> = (0..n).map(|i| format!("bin{i}")).collect();
        head.extend((0..n).map(|i| format!("center{i}")));
        head.push("weight".into());
        let mut out = head.join(",") + "\n";
        for (k, w) in &self.bins {
            let c = self.center(k);
            let mut row: Vec<String> = k[..n].iter().map(|v| v.to_string()).collect();
            row.extend(c[..n].iter().map(|v| v.to_string()));
            row.push(w.to_string());
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// Deposit each cell's weight in the bin containing its projected centre.
pub fn project(measure: &DiscreteMeasure, frame: &Frame) -> Result<ProjectedMeasure> {
    if frame.dim != measure.support.dim() {
        return Err(Error::Parameter("frame dimension differs from the measure".into()));
    }
    Frame::new(frame.dim, &frame.vecs[..frame.n])?;
    let h = measure.support.cell_size();
    let mut acc: HashMap<[i64; 2], Vec<f64>> = HashMap::new();
    for (i, c) in measure.support.cells().enumerate() {
        let p = frame.coords(&c.center());
        let mut k = [0i64; 2];
        for j in 0..frame.n {
            k[j] = (p[j] / h).floor() as i64;
        }
        acc.entry(k).or_default().push(measure.weights[i]);
    }
    let mut bins: Vec<([i64; 2], f64)> = acc.into_iter().map(|(k, w)| (k, pairwise_sum(&w))).collect();
    bins.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(ProjectedMeasure { frame: *frame, bin_width: h, offset: [0.0; 2], bins })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MaximalValue {
    pub value: f64,
    /// Radius attaining the sup; `None` when no mass lies within the largest admissible radius.
    pub radius: Option<f64>,
}

/// Dense row-wise prefix sums over the bounding box of the bins.
struct PrefixGrid {
    k0: [i64; 2],
    w: usize,
    rows: Vec<Vec<f64>>,
}

impl PrefixGrid {
    fn new(p: &ProjectedMeasure) -> Self {
        let n = p.n();
        let mut lo = [i64::MAX, 0];
        let mut hi = [i64::MIN, 0];
        for (k, _) in &p.bins {
            for i in 0..n {
                lo[i] = lo[i].min(k[i]);
                hi[i] = hi[i].max(k[i]);
            }
        }
        let w = (hi[0] - lo[0] + 1) as usize;
        let hgt = (hi[1] - lo[1] + 1) as usize;
        let mut dense = vec![vec![0.0; w]; hgt];
        for (k, m) in &p.bins {
            dense[(k[1] - lo[1]) as usize][(k[0] - lo[0]) as usize] += m;
        }
        let rows = dense
            .into_iter()
            .map(|r| {
                let mut pre = Vec::with_capacity(w + 1);
                let mut s = 0.0;
                pre.push(0.0);
                for v in r {
                    s += v;
                    pre.push(s);
                }
                pre
            })
            .collect();
        PrefixGrid { k0: lo, w, rows }
    }

    /// Mass of atoms at distance < r from x.
    fn ball(&self, p: &ProjectedMeasure, x: &[f64; 2], r: f64) -> f64 {
        let h = p.bin_width;
        let off = p.offset;
        let n = p.n();
        let coord = |i: usize, k: i64| off[i] + (k as f64 + 0.5) * h;
        let (ylo, yhi) = if n == 2 {
            let a = ((x[1] - r - off[1]) / h - 0.5).floor() as i64 - 1;
            let b = ((x[1] + r - off[1]) / h - 0.5).ceil() as i64 + 1;
            (a.max(self.k0[1]), b.min(self.k0[1] + self.rows.len() as i64 - 1))
        } else {
            (0, 0)
        };
        let mut total = 0.0;
        for ky in ylo..=yhi {
            let dy = if n == 2 { coord(1, ky) - x[1] } else { 0.0 };
            let rem = r * r - dy * dy;
            if rem <= 0.0 {
                continue;
            }
            let inside = |kx: i64| {
                let dx = coord(0, kx) - x[0];
                dx * dx + dy * dy < r * r
            };
            let wd = rem.sqrt();
            let mut a = ((x[0] - wd - off[0]) / h - 0.5).ceil() as i64;
            let mut b = ((x[0] + wd - off[0]) / h - 0.5).floor() as i64;
            while inside(a - 1) {
                a -= 1;
            }
            while a <= b && !inside(a) {
                a += 1;
            }
            while inside(b + 1) {
                b += 1;
            }
            while b >= a && !inside(b) {
                b -= 1;
            }
            let a = a.max(self.k0[0]);
            let b = b.min(self.k0[0] + self.w as i64 - 1);
            if a > b {
                continue;
            }
            let row = &self.rows[(ky - self.k0[1]) as usize];
            total += row[(b - self.k0[0] + 1) as usize] - row[(a - self.k0[0]) as usize];
        }
        total
    }
}

/// Largest radius of the lattice {binWidth·2^j}.
pub const MAX_RADIUS: f64 = 2.0;

/// sup over r ∈ {binWidth·2^j ≤ 2} of ν(B(x,r))/r^n, with open balls.
pub fn maximal_function(p: &ProjectedMeasure, queries: &[[f64; 2]]) -> Vec<MaximalValue> {
    if p.bins.is_empty() {
        return queries.iter().map(|_| MaximalValue { value: 0.0, radius: None }).collect();
    }
    let grid = PrefixGrid::new(p);
    let n = p.n() as i32;
    let mut radii = Vec::new();
    let mut r = p.bin_width;
    while r <= MAX_RADIUS {
        radii.push(r);
        r *= 2.0;
    }
    queries
        .par_iter()
        .map(|x| {
            let mut best = MaximalValue { value: 0.0, radius: None };
            for &r in &radii {
                let m = grid.ball(p, x, r);
                let v = m / r.powi(n);
                if m > 0.0 && v > best.value {
                    best = MaximalValue { value: v, radius: Some(r) };
                }
            }
            best
        })
        .collect()
}

/// Coarsest level used for grid cubes of R^n (side 4 contains every projection of [0,1]^d).
pub const COARSEST_GRID_LEVEL: i32 = -2;

/// Masses of the cubes of one grid at one level.
pub fn grid_masses(p: &ProjectedMeasure, grid: ShiftedGrid, level: i32) -> HashMap<GridCube, f64> {
    let mut m: HashMap<GridCube, f64> = HashMap::new();
    for (k, w) in &p.bins {
        let c = p.center(k);
        *m.entry(grid.cube_at(&c[..p.n()], level)).or_insert(0.0) += w;
    }
    m
}

/// Finest grid level considered: cubes no smaller than a bin.
pub fn finest_grid_level(p: &ProjectedMeasure) -> i32 {
    (1.0 / p.bin_width).log2().round() as i32
}

/// For each bin centre, max over grid cubes Q ∋ x of ν(Q)/side(Q)^n.
pub fn dyadic_maximal(p: &ProjectedMeasure, grid: ShiftedGrid) -> Vec<f64> {
    let n = p.n() as i32;
    let mut out = vec![0.0f64; p.bins.len()];
    for level in COARSEST_GRID_LEVEL..=finest_grid_level(p) {
        let masses = grid_masses(p, grid, level);
        let side = (-(level as f64)).exp2();
        for (i, (k, _)) in p.bins.iter().enumerate() {
            let c = p.center(k);
            let q = grid.cube_at(&c[..p.n()], level);
            let v = masses.get(&q).copied().unwrap_or(0.0) / side.powi(n);
            out[i] = out[i].max(v);
        }
    }
    out
}

const GL8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
];

/// E|X−Y|^{-s} for X, Y independent uniform on the unit cube of R^d.
pub fn self_energy_constant(d: usize, s: f64) -> f64 {
    let nodes = GL8.map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w));
    match d {
        1 => 2.0 / ((1.0 - s) * (2.0 - s)),
        2 => {
            let mut acc = 0.0;
            for (u, w) in nodes {
                let inner = 1.0 / (2.0 - s) - (1.0 + u) / (3.0 - s) + u / (4.0 - s);
                acc += w * inner * (1.0 + u * u).powf(-s / 2.0);
            }
            8.0 * acc
        }
        3 => {
            let mut acc = 0.0;
            for (u, wu) in nodes {
                for (v, wv) in nodes {
                    let b = u * v;
                    let inner = 1.0 / (3.0 - s) - (1.0 + u + b) / (4.0 - s) + (u + b + u * b) / (5.0 - s)
                        - u * b / (6.0 - s);
                    acc += wu * wv * u * inner * (1.0 + u * u + b * b).powf(-s / 2.0);
                }
            }
            48.0 * acc
        }
        _ => f64::NAN,
    }
}

/// ∬|x−y|^{-s} dμ dμ with atoms at cell centres and the exact mean self-energy of a uniform cell.
pub fn riesz_energy(measure: &DiscreteMeasure, s: f64) -> Result<f64> {
    let d = measure.support.dim();
    if !(s > 0.0) || s >= d as f64 {
        return Err(Error::Parameter(format!("Riesz exponent {s} outside (0, {d})")));
    }
    if measure.weights.is_empty() {
        return Ok(0.0);
    }
    let pts: Vec<[f64; 3]> = measure.support.cells().map(|c| c.center()).collect();
    let w = &measure.weights;
    let rows: Vec<f64> = (0..pts.len())
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for j in i + 1..pts.len() {
                let r2: f64 = (0..d).map(|k| (pts[i][k] - pts[j][k]).powi(2)).sum();
                acc += w[j] * r2.powf(-s / 2.0);
            }
            2.0 * w[i] * acc
        })
        .collect();
    let cross = pairwise_sum(&rows);
    let h = measure.support.cell_size();
    let sq: Vec<f64> = w.iter().map(|x| x * x).collect();
    let selfe = pairwise_sum(&sq) * self_energy_constant(d, s) * h.powf(-s);
    Ok(cross + selfe)
}

/// Energy of point atoms only (no self term), for atomic configurations.
pub fn atomic_energy(points: &[([f64; 3], f64)], d: usize, s: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let r2: f64 = (0..d).map(|k| (points[i].0[k] - points[j].0[k]).powi(2)).sum();
            acc += 2.0 * points[i].1 * points[j].1 * r2.powf(-s / 2.0);
        }
    }
    acc
}

pub fn write_dmeas(m: &DiscreteMeasure) -> String {
    let set = &m.support;
    let mut out = format!(
        "DMEAS1 d={} depth={} count={} mass={}\n",
        set.dim(),
        set.depth(),
        set.len(),
        m.total_mass
    );
    let mut rows: Vec<([u32; 3], f64)> = set.cells().zip(&m.weights).map(|(c, w)| (c.coords, *w)).collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    for (c, w) in rows {
        let parts: Vec<String> = c[..set.dim()].iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{} {}", parts.join(" "), w);
    }
    out
}

pub fn read_dmeas(text: &str) -> Result<DiscreteMeasure> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let head = lines.next().ok_or_else(|| Error::Format("empty DMEAS1 input".into()))?;
    let tokens: Vec<&str> = head.split_whitespace().collect();
    if tokens.first() != Some(&"DMEAS1") {
        return Err(Error::Format("missing DMEAS1 magic".into()));
    }
    let get = |k: &str| -> Result<&str> {
        tokens
            .iter()
            .find_map(|t| t.strip_prefix(k).and_then(|r| r.strip_prefix('=')))
            .ok_or_else(|| Error::Format(format!("header missing `{k}=`")))
    };
    let bad = |k: &str| Error::Format(format!("bad header value for `{k}`"));
    let d: usize = get("d")?.parse().map_err(|_| bad("d"))?;
    let depth: u32 = get("depth")?.parse().map_err(|_| bad("depth"))?;
    let count: usize = get("count")?.parse().map_err(|_| bad("count"))?;
    let mut cells = Vec::new();
    let mut weights = HashMap::new();
    for line in lines {
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != d + 1 {
            return Err(Error::Format(format!("expected {} fields in `{line}`", d + 1)));
        }
        let mut c = [0u32; 3];
        for i in 0..d {
            c[i] = vals[i].parse().map_err(|_| Error::Format(format!("bad coordinate in `{line}`")))?;
        }
        let w: f64 = vals[d].parse().map_err(|_| Error::Format(format!("bad weight in `{line}`")))?;
        cells.push(c);
        weights.insert(c, w);
    }
    if cells.len() != count {
        return Err(Error::Format(format!("header says {count} cells, found {}", cells.len())));
    }
    let set = DyadicSet::from_coords(d, depth, cells)?;
    let w: Vec<f64> = set.cells().map(|c| weights[&c.coords]).collect();
    DiscreteMeasure::new(&set, w)
}
