//! Dyadic cubes, sparse cell sets, dyadic content and shifted grids.

mod content;
mod grid;
mod io;
pub mod morton;

pub use content::{dyadic_content, ContentTree};
pub use grid::{
    calibrate_grid_constant, calibrate_on_samples, find_covering_cube, CoveringCube, GridCube,
    ShiftedGrid,
};
pub use io::{read_dyset, set_to_pgm, write_dyset};
pub(crate) use io::set_to_pgm_shaded;

use crate::error::{Error, Result};

/// Deepest level supported per ambient dimension.
pub fn max_depth(dim: usize) -> u32 {
    match dim {
        1 => 24,
        2 => 14,
        3 => 9,
        _ => 0,
    }
}

fn check_dim_depth(dim: usize, depth: u32) -> Result<()> {
    if !(1..=3).contains(&dim) {
        return Err(Error::Parameter(format!("dimension {dim} not in 1..=3")));
    }
    if depth > max_depth(dim) {
        return Err(Error::Resolution(format!(
            "depth {depth} exceeds cap {} for d={dim}",
            max_depth(dim)
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DyadicCube {
    pub dim: usize,
    pub level: u32,
    pub coords: [u32; 3],
}

impl DyadicCube {
    pub fn new(dim: usize, level: u32, coords: [u32; 3]) -> Result<Self> {
        check_dim_depth(dim, level)?;
        for (i, &c) in coords.iter().enumerate() {
            let bad = if i < dim { (c as u64) >= 1u64 << level } else { c != 0 };
            if bad {
                return Err(Error::Domain(format!(
                    "coordinate {c} out of range at level {level}"
                )));
            }
        }
        Ok(DyadicCube { dim, level, coords })
    }

    pub fn root(dim: usize) -> Self {
        DyadicCube { dim, level: 0, coords: [0; 3] }
    }

    pub fn side(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    pub fn parent(&self) -> Option<Self> {
        if self.level == 0 {
            return None;
        }
        let mut c = self.coords;
        for v in c.iter_mut().take(self.dim) {
            *v >>= 1;
        }
        Some(DyadicCube { dim: self.dim, level: self.level - 1, coords: c })
    }

    pub fn ancestor(&self, level: u32) -> Self {
        assert!(level <= self.level);
        let sh = self.level - level;
        let mut c = self.coords;
        for v in c.iter_mut().take(self.dim) {
            *v >>= sh;
        }
        DyadicCube { dim: self.dim, level, coords: c }
    }

    pub fn children(&self) -> Vec<Self> {
        (0..1u32 << self.dim)
            .map(|m| {
                let mut c = self.coords;
                for (i, v) in c.iter_mut().enumerate().take(self.dim) {
                    *v = (*v << 1) | ((m >> i) & 1);
                }
                DyadicCube { dim: self.dim, level: self.level + 1, coords: c }
            })
            .collect()
    }

    pub fn code(&self) -> u64 {
        morton::encode(self.dim, self.coords)
    }

    /// Lower corner.
    pub fn origin(&self) -> [f64; 3] {
        let h = self.side();
        let mut o = [0.0; 3];
        for i in 0..self.dim {
            o[i] = self.coords[i] as f64 * h;
        }
        o
    }

    pub fn center(&self) -> [f64; 3] {
        let h = self.side();
        let mut o = [0.0; 3];
        for i in 0..self.dim {
            o[i] = (self.coords[i] as f64 + 0.5) * h;
        }
        o
    }

    /// Whether `other` (at this level or finer) lies inside this cube.
    pub fn contains(&self, other: &DyadicCube) -> bool {
        other.level >= self.level && other.ancestor(self.level) == *self
    }

    /// Whether `other` lies inside 3Q, the cube together with its neighbours, clipped to the unit cube.
    pub fn triple_contains(&self, other: &DyadicCube) -> bool {
        if other.level < self.level {
            return false;
        }
        let a = other.ancestor(self.level);
        (0..self.dim).all(|i| (a.coords[i] as i64 - self.coords[i] as i64).abs() <= 1)
    }
}

/// Occupied cells at a single depth, stored as sorted Morton codes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DyadicSet {
    dim: usize,
    depth: u32,
    codes: Vec<u64>,
}

impl DyadicSet {
    pub fn empty(dim: usize, depth: u32) -> Result<Self> {
        check_dim_depth(dim, depth)?;
        Ok(DyadicSet { dim, depth, codes: Vec::new() })
    }

    pub fn from_coords<I: IntoIterator<Item = [u32; 3]>>(dim: usize, depth: u32, cells: I) -> Result<Self> {
        check_dim_depth(dim, depth)?;
        let mut codes = Vec::new();
        for c in cells {
            DyadicCube::new(dim, depth, c)?;
            codes.push(morton::encode(dim, c));
        }
        Ok(Self::from_codes_unchecked(dim, depth, codes))
    }

    pub fn from_cubes<I: IntoIterator<Item = DyadicCube>>(dim: usize, depth: u32, cells: I) -> Result<Self> {
        Self::from_coords(dim, depth, cells.into_iter().map(|c| c.coords))
    }

    pub(crate) fn from_codes_unchecked(dim: usize, depth: u32, mut codes: Vec<u64>) -> Self {
        codes.sort_unstable();
        codes.dedup();
        DyadicSet { dim, depth, codes }
    }

    /// Every cell at the given depth.
    pub fn full(dim: usize, depth: u32) -> Result<Self> {
        check_dim_depth(dim, depth)?;
        let n = 1u64 << (dim as u32 * depth);
        Ok(DyadicSet { dim, depth, codes: (0..n).collect() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn depth(&self) -> u32 {
        self.depth
    }
    pub fn len(&self) -> usize {
        self.codes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
    pub fn codes(&self) -> &[u64] {
        &self.codes
    }
    pub fn cell_size(&self) -> f64 {
        (-(self.depth as f64)).exp2()
    }

    pub fn cell(&self, i: usize) -> DyadicCube {
        DyadicCube { dim: self.dim, level: self.depth, coords: morton::decode(self.dim, self.codes[i]) }
    }

    pub fn cells(&self) -> impl Iterator<Item = DyadicCube> + '_ {
        (0..self.codes.len()).map(move |i| self.cell(i))
    }

    pub fn center(&self, i: usize) -> [f64; 3] {
        self.cell(i).center()
    }

    pub fn index_of(&self, cube: &DyadicCube) -> Option<usize> {
        if cube.level != self.depth || cube.dim != self.dim {
            return None;
        }
        self.codes.binary_search(&cube.code()).ok()
    }

    pub fn contains(&self, cube: &DyadicCube) -> bool {
        self.index_of(cube).is_some()
    }

    /// Index range of the cells lying inside `cube`.
    pub fn range_in(&self, cube: &DyadicCube) -> std::ops::Range<usize> {
        if cube.level > self.depth {
            return 0..0;
        }
        let sh = self.dim as u32 * (self.depth - cube.level);
        let lo = cube.code() << sh;
        let hi = lo + (1u64 << sh);
        let a = self.codes.partition_point(|&c| c < lo);
        let b = self.codes.partition_point(|&c| c < hi);
        a..b
    }

    /// Keep the cells at the given indices.
    pub fn subset(&self, keep: impl Fn(usize) -> bool) -> Self {
        let codes = (0..self.codes.len()).filter(|&i| keep(i)).map(|i| self.codes[i]).collect();
        DyadicSet { dim: self.dim, depth: self.depth, codes }
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim || self.depth != other.depth {
            return Err(Error::Parameter("sets differ in dimension or depth".into()));
        }
        Ok(())
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let mut codes = self.codes.clone();
        codes.extend_from_slice(&other.codes);
        Ok(Self::from_codes_unchecked(self.dim, self.depth, codes))
    }

    pub fn intersection(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let codes = self.codes.iter().copied().filter(|c| other.codes.binary_search(c).is_ok()).collect();
        Ok(DyadicSet { dim: self.dim, depth: self.depth, codes })
    }

    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let codes = self.codes.iter().copied().filter(|c| other.codes.binary_search(c).is_err()).collect();
        Ok(DyadicSet { dim: self.dim, depth: self.depth, codes })
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.depth == other.depth
            && self.codes.iter().all(|c| other.codes.binary_search(c).is_ok())
    }

    /// Same set viewed at a coarser depth (parents of occupied cells).
    pub fn coarsen(&self, depth: u32) -> Result<Self> {
        if depth > self.depth {
            return Err(Error::Resolution(format!("cannot coarsen depth {} to {depth}", self.depth)));
        }
        let sh = self.dim as u32 * (self.depth - depth);
        let codes = self.codes.iter().map(|c| c >> sh).collect();
        Ok(Self::from_codes_unchecked(self.dim, depth, codes))
    }

    /// Cells in lexicographic coordinate order (last coordinate slowest is not used; plain tuple order).
    pub fn sorted_coords(&self) -> Vec<[u32; 3]> {
        let mut v: Vec<[u32; 3]> = self.cells().map(|c| c.coords).collect();
        v.sort_unstable();
        v
    }
}

/// Number of level-`j` dyadic cubes containing a cell of the set.
pub fn covering_number(set: &DyadicSet, j: u32) -> Result<usize> {
    if j > set.depth {
        return Err(Error::Resolution(format!("scale level {j} finer than depth {}", set.depth)));
    }
    let sh = set.dim as u32 * (set.depth - j);
    let mut n = 0usize;
    let mut last = None;
    for &c in &set.codes {
        let a = c >> sh;
        if last != Some(a) {
            n += 1;
            last = Some(a);
        }
    }
    Ok(n)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of log N about the fitted line.
    pub residual: f64,
    pub points: usize,
}

impl BoxFit {
    pub fn within(&self, dim: usize) -> bool {
        self.slope >= -1e-9 && self.slope <= dim as f64 + 1e-9
    }
}

/// Least-squares slope of log N against log(1/δ).
pub fn box_dimension_fit(counts: &[(f64, f64)]) -> Result<BoxFit> {
    let pts: Vec<(f64, f64)> = counts
        .iter()
        .filter(|(d, n)| *d > 0.0 && *n > 0.0)
        .map(|(d, n)| ((1.0 / d).ln(), n.ln()))
        .collect();
    let mut xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if xs.len() < 2 {
        return Err(Error::Arity("box dimension fit needs at least two distinct scales".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    Ok(BoxFit { slope, intercept, residual: (ss / n).sqrt(), points: pts.len() })
}

/// Box-counting fit from the covering numbers of a set at levels `lo..=hi`.
pub fn box_dimension_of(set: &DyadicSet, lo: u32, hi: u32) -> Result<BoxFit> {
    let mut pts = Vec::new();
    for j in lo..=hi {
        pts.push(((-(j as f64)).exp2(), covering_number(set, j)? as f64));
    }
    box_dimension_fit(&pts)
}
