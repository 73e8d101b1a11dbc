//! Self-similar test sets and Ahlfors-regularity diagnostics.

use crate::dyadic::{morton, DyadicSet};
use crate::error::{Error, Result};
use crate::rng::job_rng;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

/// x ↦ ratio · R(angle) · x + translation. `angle` (radians) is only used in the plane.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimMap {
    pub ratio: f64,
    pub translation: [f64; 3],
    pub angle: f64,
}

impl SimMap {
    pub fn homothety(ratio: f64, t: [f64; 3]) -> Self {
        SimMap { ratio, translation: t, angle: 0.0 }
    }

    fn apply(&self, dim: usize, x: [f64; 3]) -> [f64; 3] {
        let mut y = [0.0; 3];
        if dim == 2 && self.angle != 0.0 {
            let (s, c) = self.angle.sin_cos();
            y[0] = self.ratio * (c * x[0] - s * x[1]) + self.translation[0];
            y[1] = self.ratio * (s * x[0] + c * x[1]) + self.translation[1];
        } else {
            for i in 0..dim {
                y[i] = self.ratio * x[i] + self.translation[i];
            }
        }
        y
    }

    fn fixed_point(&self, dim: usize) -> [f64; 3] {
        let mut p = [0.0; 3];
        for i in 0..dim {
            p[i] = self.translation[i] / (1.0 - self.ratio);
        }
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IFSSpec {
    pub dim: usize,
    pub maps: Vec<SimMap>,
    pub name: String,
}

pub const BUILTINS: &[&str] = &[
    "carpet",
    "four-corner",
    "triangle",
    "sponge",
    "square",
    "segment",
    "product",
    "cantor",
    "interval",
];

fn grid_maps(dim: usize, ratio: f64, steps: &[f64], keep: impl Fn(&[usize]) -> bool) -> Vec<SimMap> {
    let mut out = Vec::new();
    let m = steps.len();
    let total = m.pow(dim as u32);
    for idx in 0..total {
        let mut digits = [0usize; 3];
        let mut r = idx;
        for d in digits.iter_mut().take(dim) {
            *d = r % m;
            r /= m;
        }
        if keep(&digits[..dim]) {
            let mut t = [0.0; 3];
            for i in 0..dim {
                t[i] = steps[digits[i]];
            }
            out.push(SimMap::homothety(ratio, t));
        }
    }
    out
}

impl IFSSpec {
    /// Built-in named sets.
    pub fn builtin(name: &str) -> Result<Self> {
        let third = [0.0, 1.0 / 3.0, 2.0 / 3.0];
        let (dim, maps) = match name {
            "carpet" => (2, grid_maps(2, 1.0 / 3.0, &third, |d| !(d[0] == 1 && d[1] == 1))),
            "four-corner" => (2, grid_maps(2, 0.25, &[0.0, 0.75], |_| true)),
            "triangle" => (
                2,
                vec![
                    SimMap::homothety(0.5, [0.0, 0.0, 0.0]),
                    SimMap::homothety(0.5, [0.5, 0.0, 0.0]),
                    SimMap::homothety(0.5, [0.0, 0.5, 0.0]),
                ],
            ),
            "sponge" => (3, grid_maps(3, 1.0 / 3.0, &third, |d| d.iter().filter(|&&v| v == 1).count() <= 1)),
            "square" => (2, grid_maps(2, 0.5, &[0.0, 0.5], |_| true)),
            "segment" => (
                2,
                vec![
                    SimMap::homothety(0.5, [0.0, 1.0 / 6.0, 0.0]),
                    SimMap::homothety(0.5, [0.5, 1.0 / 6.0, 0.0]),
                ],
            ),
            "product" => {
                let mut maps = Vec::new();
                for a in [0.0, 0.75] {
                    for b in [0.0, 0.25, 0.5, 0.75] {
                        maps.push(SimMap::homothety(0.25, [a, b, 0.0]));
                    }
                }
                (2, maps)
            }
            "cantor" => (1, grid_maps(1, 1.0 / 3.0, &[0.0, 2.0 / 3.0], |_| true)),
            "interval" => (1, grid_maps(1, 0.5, &[0.0, 0.5], |_| true)),
            _ => {
                return Err(Error::Config(format!(
                    "unknown builtin `{name}`; available: {}",
                    BUILTINS.join(", ")
                )))
            }
        };
        Ok(IFSSpec { dim, maps, name: name.to_string() })
    }

    /// Parse the `dim=`, `map=r,tx,ty[,tz][,angle]`, `name=` text format. Angles are in degrees.
    pub fn parse(text: &str) -> Result<Self> {
        let mut dim = None;
        let mut name = String::from("custom");
        let mut raw: Vec<Vec<f64>> = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("expected key=value, got `{line}`")))?;
            match k.trim() {
                "dim" => {
                    dim = Some(v.trim().parse::<usize>().map_err(|_| Error::Format(format!("bad dim `{v}`")))?)
                }
                "name" => name = v.trim().to_string(),
                "map" => {
                    let nums: std::result::Result<Vec<f64>, _> = v.split(',').map(|x| x.trim().parse::<f64>()).collect();
                    raw.push(nums.map_err(|_| Error::Format(format!("bad map `{v}`")))?);
                }
                other => return Err(Error::Format(format!("unknown IFS key `{other}`"))),
            }
        }
        let dim = dim.ok_or_else(|| Error::Format("IFS spec lacks `dim=`".into()))?;
        if !(1..=3).contains(&dim) {
            return Err(Error::Format(format!("unsupported dim {dim}")));
        }
        let mut maps = Vec::new();
        for nums in raw {
            let n = nums.len();
            let ok = n == 1 + dim || (dim == 2 && n == 4);
            if !ok {
                return Err(Error::Format(format!("map with {n} numbers does not fit dim={dim}")));
            }
            let mut t = [0.0; 3];
            t[..dim].copy_from_slice(&nums[1..1 + dim]);
            let angle = if n == 4 && dim == 2 { nums[3].to_radians() } else { 0.0 };
            maps.push(SimMap { ratio: nums[0], translation: t, angle });
        }
        let spec = IFSSpec { dim, maps, name };
        spec.validate()?;
        Ok(spec)
    }

    fn is_homothetic(&self) -> bool {
        self.maps.iter().all(|m| m.angle == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.maps.is_empty() {
            return Err(Error::Parameter("IFS needs at least one map".into()));
        }
        if self.maps.iter().any(|m| !(m.ratio > 0.0 && m.ratio < 1.0)) {
            return Err(Error::Parameter("similarity ratios must lie in (0,1)".into()));
        }
        let inside = |p: [f64; 3]| (0..self.dim).all(|i| (-1e-12..=1.0 + 1e-12).contains(&p[i]));
        if self.is_homothetic() {
            // The attractor's hull is the hull of the fixed points.
            if !self.maps.iter().all(|m| inside(m.fixed_point(self.dim))) {
                return Err(Error::Domain(format!("attractor of `{}` escapes the unit cube", self.name)));
            }
        } else {
            for m in &self.maps {
                for corner in 0..1u32 << self.dim {
                    let mut x = [0.0; 3];
                    for (i, v) in x.iter_mut().enumerate().take(self.dim) {
                        *v = ((corner >> i) & 1) as f64;
                    }
                    if !inside(m.apply(self.dim, x)) {
                        return Err(Error::Domain(format!(
                            "map of `{}` sends the unit cube outside itself",
                            self.name
                        )));
                    }
                }
            }
        }
        let s = similarity_dimension(self);
        if s > self.dim as f64 + 1e-9 {
            return Err(Error::Parameter(format!("similarity dimension {s} exceeds d={}", self.dim)));
        }
        Ok(())
    }
}

/// Root of Σ r_i^s = 1 by bisection.
pub fn similarity_dimension(spec: &IFSSpec) -> f64 {
    let f = |s: f64| spec.maps.iter().map(|m| m.ratio.powf(s)).sum::<f64>() - 1.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while f(hi) > 0.0 {
        hi *= 2.0;
    }
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex hull (monotone chain); collinear input collapses to its two extreme points.
pub(crate) fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Clip a convex polygon to the closed box [lo, hi] (Sutherland–Hodgman).
fn clip_to_box(poly: &[[f64; 2]], lo: [f64; 2], hi: [f64; 2]) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = poly.to_vec();
    for axis in 0..2 {
        for (bound, keep_below) in [(lo[axis], false), (hi[axis], true)] {
            if out.is_empty() {
                return out;
            }
            let inside = |p: &[f64; 2]| if keep_below { p[axis] <= bound } else { p[axis] >= bound };
            let input = std::mem::take(&mut out);
            let n = input.len();
            for i in 0..n {
                let cur = input[i];
                let prev = input[(i + n - 1) % n];
                let (ci, pi) = (inside(&cur), inside(&prev));
                if ci != pi {
                    let t = (bound - prev[axis]) / (cur[axis] - prev[axis]);
                    let mut q = [prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])];
                    q[axis] = bound;
                    out.push(q);
                }
                if ci {
                    out.push(cur);
                }
            }
        }
    }
    out
}

struct Raster<'a> {
    spec: &'a IFSSpec,
    n: u64,
    h: f64,
    hull2: Vec<[f64; 2]>,
    lo: [f64; 3],
    hi: [f64; 3],
}

impl Raster<'_> {
    fn index(&self, v: f64) -> u32 {
        ((v * self.n as f64).floor().max(0.0) as u64).min(self.n - 1) as u32
    }

    /// Whether the closed box [a, b] (per axis) sits in one half-open cell.
    fn single_cell(&self, a: &[f64; 3], b: &[f64; 3]) -> Option<[u32; 3]> {
        let mut c = [0u32; 3];
        for i in 0..self.spec.dim {
            let (ia, ib) = (self.index(a[i]), self.index(b[i]));
            if ia != ib {
                return None;
            }
            c[i] = ia;
        }
        Some(c)
    }

    fn mark_piece(&self, scale: f64, t: [f64; 3], out: &mut Vec<u64>) {
        let dim = self.spec.dim;
        let mut a = [0.0; 3];
        let mut b = [0.0; 3];
        for i in 0..dim {
            a[i] = scale * self.lo[i] + t[i];
            b[i] = scale * self.hi[i] + t[i];
        }
        if let Some(c) = self.single_cell(&a, &b) {
            out.push(morton::encode(dim, c));
            return;
        }
        let diam = (0..dim).map(|i| b[i] - a[i]).fold(0.0f64, f64::max);
        if diam < self.h {
            self.mark_touching(scale, t, &a, &b, out);
            return;
        }
        for m in &self.spec.maps {
            let mut t2 = [0.0; 3];
            for i in 0..dim {
                t2[i] = m.ratio * t[i] + m.translation[i];
            }
            self.mark_piece(scale * m.ratio, t2, out);
        }
    }

    /// Mark every half-open cell meeting the closed piece; the top cell of each axis is closed.
    fn mark_touching(&self, scale: f64, t: [f64; 3], a: &[f64; 3], b: &[f64; 3], out: &mut Vec<u64>) {
        let dim = self.spec.dim;
        let mut ranges = [(0u32, 0u32); 3];
        for i in 0..dim {
            ranges[i] = (self.index(a[i]), self.index(b[i]));
        }
        let poly: Vec<[f64; 2]> = if dim == 2 {
            self.hull2.iter().map(|p| [scale * p[0] + t[0], scale * p[1] + t[1]]).collect()
        } else {
            Vec::new()
        };
        let top = (self.n - 1) as u32;
        for x in ranges[0].0..=ranges[0].1 {
            for y in ranges[1].0..=ranges[1].1 {
                for z in ranges[2].0..=ranges[2].1 {
                    let c = [x, y, z];
                    if dim == 2 {
                        let lo = [x as f64 * self.h, y as f64 * self.h];
                        let hi = [(x + 1) as f64 * self.h, (y + 1) as f64 * self.h];
                        let k = clip_to_box(&poly, lo, hi);
                        if k.is_empty() {
                            continue;
                        }
                        if x != top && k.iter().all(|p| p[0] == hi[0]) {
                            continue;
                        }
                        if y != top && k.iter().all(|p| p[1] == hi[1]) {
                            continue;
                        }
                    }
                    out.push(morton::encode(dim, c));
                }
            }
        }
    }

    fn mark_rotated(&self, maps: &[&SimMap], out: &mut Vec<u64>) {
        // Oversampled: images of the unit cube's centre under words shrunk below h/16.
        let dim = self.spec.dim;
        let mut x = [0.5; 3];
        for m in maps.iter().rev() {
            x = m.apply(dim, x);
        }
        let mut c = [0u32; 3];
        for i in 0..dim {
            c[i] = self.index(x[i]);
        }
        out.push(morton::encode(dim, c));
    }

    fn rotated_words(&self, prefix: &mut Vec<usize>, scale: f64, out: &mut Vec<u64>) {
        if scale * (self.spec.dim as f64).sqrt() < self.h / 16.0 {
            let maps: Vec<&SimMap> = prefix.iter().map(|&i| &self.spec.maps[i]).collect();
            self.mark_rotated(&maps, out);
            return;
        }
        for i in 0..self.spec.maps.len() {
            prefix.push(i);
            self.rotated_words(prefix, scale * self.spec.maps[i].ratio, out);
            prefix.pop();
        }
    }
}

/// Cells at `depth` meeting the attractor.
///
/// Homothetic specs are resolved exactly against the convex hull of the fixed points;
/// specs with rotations are oversampled.
pub fn rasterize_ifs(spec: &IFSSpec, depth: u32) -> Result<DyadicSet> {
    spec.validate()?;
    let dim = spec.dim;
    let empty = DyadicSet::empty(dim, depth)?;
    let fixed: Vec<[f64; 3]> = spec.maps.iter().map(|m| m.fixed_point(dim)).collect();
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    for i in 0..dim {
        lo[i] = fixed.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min);
        hi[i] = fixed.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max);
    }
    let hull2 = if dim == 2 { convex_hull(fixed.iter().map(|p| [p[0], p[1]]).collect()) } else { Vec::new() };
    let n = 1u64 << depth;
    let r = Raster { spec, n, h: 1.0 / n as f64, hull2, lo, hi };
    let parts: Vec<Vec<u64>> = if spec.is_homothetic() {
        spec.maps
            .par_iter()
            .map(|m| {
                let mut out = Vec::new();
                r.mark_piece(m.ratio, m.translation, &mut out);
                out.sort_unstable();
                out.dedup();
                out
            })
            .collect()
    } else {
        (0..spec.maps.len())
            .into_par_iter()
            .map(|i| {
                let mut out = Vec::new();
                let mut prefix = vec![i];
                r.rotated_words(&mut prefix, spec.maps[i].ratio, &mut out);
                out.sort_unstable();
                out.dedup();
                out
            })
            .collect()
    };
    let codes: Vec<u64> = parts.into_iter().flatten().collect();
    Ok(DyadicSet::from_codes_unchecked(dim, depth, codes).union(&empty)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegularityReport {
    pub exponent: f64,
    pub c_low: f64,
    pub c_high: f64,
    pub radii: Vec<f64>,
    pub centers: usize,
}

/// Sampled ratios cellCount(B(x,r))·h^s / r^s over dyadic radii from the cell size up to 1.
pub fn ahlfors_constants(set: &DyadicSet, s: f64, sample_centers: usize, seed: u64) -> Result<RegularityReport> {
    if set.is_empty() {
        return Err(Error::Domain("regularity of an empty set".into()));
    }
    let dim = set.dim();
    let mut rng = job_rng(seed, 0);
    let centers: Vec<usize> = (0..sample_centers.max(1)).map(|_| rng.gen_range(0..set.len())).collect();
    let pts: Vec<[f64; 3]> = (0..set.len()).map(|i| set.center(i)).collect();
    let radii: Vec<f64> = (0..=set.depth()).rev().map(|j| (-(j as f64)).exp2()).collect();
    let cell_mass = (-(set.depth() as f64) * s).exp2();
    let ratios: Vec<(f64, f64)> = centers
        .par_iter()
        .map(|&c| {
            let x = pts[c];
            let mut dist: Vec<f64> = pts
                .iter()
                .map(|p| (0..dim).map(|i| (p[i] - x[i]).powi(2)).sum::<f64>().sqrt())
                .collect();
            dist.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut lo = f64::INFINITY;
            let mut hi: f64 = 0.0;
            for &r in &radii {
                let count = dist.partition_point(|&d| d < r) as f64;
                let ratio = count * cell_mass / r.powf(s);
                lo = lo.min(ratio);
                hi = hi.max(ratio);
            }
            (lo, hi)
        })
        .collect();
    let c_low = ratios.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let c_high = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(RegularityReport { exponent: s, c_low, c_high, radii, centers: centers.len() })
}
