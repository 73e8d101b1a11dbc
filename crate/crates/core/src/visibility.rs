//! Directions, tubes, discrete visible parts and the four-way decomposition.

use crate::dyadic::{box_dimension_fit, dyadic_content, max_depth, morton, set_to_pgm_shaded, DyadicCube, DyadicSet};
use crate::error::{Error, Result};
use crate::fractals::convex_hull;
use crate::measures::{
    frostman_with_lower_bound, maximal_function, natural_measure, pairwise_sum, project, DiscreteMeasure, Frame,
    ProjectedMeasure, MAX_RADIUS,
};
use crate::rng::job_rng;
use crate::spectral::direction_sobolev;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::f64::consts::PI;
use std::fmt::Write as _;

/// Unit vector θ with an orthonormal frame of θ^⊥.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Direction {
    pub dim: usize,
    pub unit: [f64; 3],
    pub frame: Frame,
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalized(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

impl Direction {
    /// Planar direction (cos φ, sin φ); the frame is (θ_y, −θ_x).
    pub fn from_angle(phi: f64) -> Self {
        let (s, c) = phi.sin_cos();
        Self::from_vector(2, [c, s, 0.0]).expect("planar unit vector")
    }

    /// Spatial direction from polar angle (from +z) and azimuth.
    pub fn from_spherical(polar: f64, azimuth: f64) -> Self {
        let (sp, cp) = polar.sin_cos();
        let (sa, ca) = azimuth.sin_cos();
        Self::from_vector(3, [sp * ca, sp * sa, cp]).expect("spatial unit vector")
    }

    pub fn from_vector(dim: usize, v: [f64; 3]) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::Parameter(format!("directions need d in 2..=3, got {dim}")));
        }
        let mut w = v;
        if dim == 2 {
            w[2] = 0.0;
        }
        if w.iter().all(|&x| x == 0.0) {
            return Err(Error::Parameter("zero direction vector".into()));
        }
        let u = normalized(w);
        let frame = if dim == 2 {
            Frame::new(2, &[[u[1], -u[0], 0.0]])?
        } else {
            let mut axis = 0;
            for i in 1..3 {
                if u[i].abs() < u[axis].abs() {
                    axis = i;
                }
            }
            let mut a = [0.0; 3];
            a[axis] = 1.0;
            let e1 = normalized(cross(u, a));
            let e2 = normalized(cross(u, e1));
            Frame::new(3, &[e1, e2])?
        };
        Ok(Direction { dim, unit: u, frame })
    }

    /// Uniform on the circle (d=2) or area-uniform on the sphere (d=3).
    pub fn sample<R: Rng>(dim: usize, rng: &mut R) -> Result<Self> {
        match dim {
            2 => Ok(Self::from_angle(2.0 * PI * rng.gen::<f64>())),
            3 => {
                let z: f64 = 2.0 * rng.gen::<f64>() - 1.0;
                let az = 2.0 * PI * rng.gen::<f64>();
                Ok(Self::from_spherical(z.clamp(-1.0, 1.0).acos(), az))
            }
            _ => Err(Error::Parameter(format!("directions need d in 2..=3, got {dim}"))),
        }
    }

    /// Angle(s) identifying the direction: φ in the plane, (polar, azimuth) in space.
    pub fn angles(&self) -> Vec<f64> {
        if self.dim == 2 {
            vec![self.unit[1].atan2(self.unit[0])]
        } else {
            vec![self.unit[2].clamp(-1.0, 1.0).acos(), self.unit[1].atan2(self.unit[0])]
        }
    }

    pub fn height(&self, x: &[f64; 3]) -> f64 {
        (0..self.dim).map(|i| self.unit[i] * x[i]).sum()
    }

    pub fn project(&self, x: &[f64; 3]) -> [f64; 2] {
        self.frame.coords(x)
    }
}


#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Regular,
    General,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regular" => Ok(Mode::Regular),
            "general" => Ok(Mode::General),
            _ => Err(Error::Config(format!("unknown mode '{s}' (expected regular or general)"))),
        }
    }
}

/// The optimal α = 1 − √6/3, root of −3α² + 6α − 1 in (0, 1/2).
pub fn optimal_alpha() -> f64 {
    1.0 - 6f64.sqrt() / 3.0
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Params {
    pub mode: Mode,
    pub s: f64,
    pub d: usize,
    pub eps: f64,
    pub depth: u32,
    pub delta: f64,
    pub coarse_level: u32,
    pub big_delta: f64,
    /// Unused in general mode.
    pub alpha: Option<f64>,
    pub kappa: f64,
    pub tau: f64,
    pub sigma: f64,
    pub warnings: Vec<String>,
}

/// Strict solver: every precondition violation is an error.
pub fn solve_parameters(s: f64, d: usize, eps: f64, mode: Mode, depth: u32) -> Result<Params> {
    build_params(s, d, eps, mode, depth, true)
}

/// Same formulas, but range violations (s ≤ d−1, τ ≤ 0, ...) become warnings.
pub fn solve_parameters_relaxed(s: f64, d: usize, eps: f64, mode: Mode, depth: u32) -> Result<Params> {
    build_params(s, d, eps, mode, depth, false)
}

fn build_params(s: f64, d: usize, eps: f64, mode: Mode, depth: u32, strict: bool) -> Result<Params> {
    if !(2..=3).contains(&d) {
        return Err(Error::Parameter(format!("decompositions need d in 2..=3, got {d}")));
    }
    if !(eps >= 0.0) || !s.is_finite() {
        return Err(Error::Parameter(format!("need eps ≥ 0 and finite s, got eps={eps}, s={s}")));
    }
    if depth == 0 || depth > max_depth(d) {
        return Err(Error::Resolution(format!("depth {depth} outside 1..={}", max_depth(d))));
    }
    let mut warnings = Vec::new();
    let mut violation = |msg: String| -> Result<()> {
        if strict {
            Err(Error::Parameter(msg))
        } else {
            warnings.push(msg);
            Ok(())
        }
    };
    let (alpha, kappa, tau, sigma) = match mode {
        Mode::Regular => {
            let e = s - d as f64 + 1.0;
            if !(e > 0.0 && s <= d as f64) {
                violation(format!("regular mode needs d−1 < s ≤ d, got s={s}, d={d}"))?;
            }
            let a = optimal_alpha();
            let k = a / (1.0 - a);
            let check = 2.0 * k + 3.0 * a;
            if (check - 1.0).abs() > 1e-12 {
                return Err(Error::Parameter(format!("2κ+3α = {check} differs from 1")));
            }
            let tau = a * e - 5.0 * eps;
            if !(tau > 0.0) {
                violation(format!("eps={eps} too large: need eps < α(s−d+1)/5 = {} for τ > 0", a * e / 5.0))?;
            }
            (Some(a), k, tau, (e - eps) / 2.0)
        }
        Mode::General => {
            let tau = 1.0 / 6.0 - 5.0 * eps;
            if !(tau > 0.0) {
                violation(format!("eps={eps} too large: need eps < 1/30 for τ > 0"))?;
            }
            (None, 1.0 / 6.0, tau, (1.0 - tau - eps) / 2.0)
        }
    };
    let delta = (-(depth as f64)).exp2();
    let coarse_level = ((kappa * depth as f64).ceil() as i64 - 1).max(0) as u32;
    let big_delta = (-(coarse_level as f64)).exp2();
    if delta.powf(eps) > 0.5 {
        warnings.push(format!("δ^ε = {:.4} > 1/2: δ may not be small enough for eps={eps}", delta.powf(eps)));
    }
    Ok(Params {
        mode,
        s: if mode == Mode::General { d as f64 } else { s },
        d,
        eps,
        depth,
        delta,
        coarse_level,
        big_delta,
        alpha,
        kappa,
        tau,
        sigma,
        warnings,
    })
}

impl Params {
    fn excess(&self) -> f64 {
        self.s - self.d as f64 + 1.0
    }

    /// s−τ (regular) or d−τ (general).
    pub fn content_exponent(&self) -> f64 {
        match self.mode {
            Mode::Regular => self.s - self.tau,
            Mode::General => self.d as f64 - self.tau,
        }
    }

    /// δ^{-2ε}γ^{-(s−d+1)}.
    pub fn heavy_threshold(&self, gamma: f64) -> Option<f64> {
        (self.mode == Mode::Regular).then(|| self.delta.powf(-2.0 * self.eps) * gamma.powf(-self.excess()))
    }

    /// δ^{(κ−1)(s−d+1)−κτ−4ε}.
    pub fn heavy_in_cube_threshold(&self) -> Option<f64> {
        (self.mode == Mode::Regular).then(|| {
            self.delta.powf((self.kappa - 1.0) * self.excess() - self.kappa * self.tau - 4.0 * self.eps)
        })
    }

    pub fn light_threshold(&self) -> f64 {
        match self.mode {
            Mode::Regular => self.delta.powf(-self.excess() + self.tau + self.eps),
            Mode::General => self.delta.powf(-1.0 + self.tau + self.eps),
        }
    }

    pub fn substantial_threshold(&self) -> f64 {
        match self.mode {
            Mode::Regular => self.delta.powf((self.kappa - 1.0) * self.excess() + self.tau + 4.0 * self.eps),
            Mode::General => self.delta.powf(self.tau + self.kappa - 1.0 + 2.0 * self.eps),
        }
    }

    /// General mode: a δ-cube with μ(Q) ≤ δ^{d+ε} is light.
    pub fn light_cube_threshold(&self) -> f64 {
        self.delta.powf(self.d as f64 + self.eps)
    }

    /// Per-tube bound on N(vis ∩ E_G ∩ T, δ), without implied constants.
    pub fn good_part_bound(&self) -> f64 {
        let (e, k, t, eps) = (self.excess(), self.kappa, self.tau, self.eps);
        match self.mode {
            Mode::Regular => {
                let a = self.alpha.unwrap_or_else(optimal_alpha);
                self.delta.powf((k - 1.0 - k * a) * e - 4.0 * eps) + self.delta.powf((a - 1.0) * e - 3.0 * eps)
            }
            Mode::General => self.delta.powf(t - 1.0 + 2.0 * eps) + self.delta.powf(k - 1.0),
        }
    }
}

/// π_θ^{-1} of the base cube [k·γ, (k+1)·γ)^{d−1} (θ^⊥ coordinates), γ = 2^{-level}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tube {
    pub direction: Direction,
    pub level: u32,
    pub base: [i64; 2],
}

impl Tube {
    pub fn width(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    /// Whether this tube's base contains the other's (same direction assumed).
    pub fn contains(&self, other: &Tube) -> bool {
        other.level >= self.level && ancestor_base(other.base, other.level - self.level) == self.base
    }
}

fn ancestor_base(k: [i64; 2], up: u32) -> [i64; 2] {
    [k[0] >> up, k[1] >> up]
}

fn projected_corners(dir: &Direction) -> Vec<[f64; 2]> {
    let d = dir.dim;
    (0..1usize << d)
        .map(|m| {
            let mut x = [0.0; 3];
            for (i, xi) in x.iter_mut().enumerate().take(d) {
                *xi = ((m >> i) & 1) as f64;
            }
            dir.project(&x)
        })
        .collect()
}

fn separated(a: &[[f64; 2]], b: &[[f64; 2]], axis: [f64; 2]) -> bool {
    let proj = |v: &[[f64; 2]]| {
        v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let t = p[0] * axis[0] + p[1] * axis[1];
            (lo.min(t), hi.max(t))
        })
    };
    let ((alo, ahi), (blo, bhi)) = (proj(a), proj(b));
    ahi <= blo + 1e-12 || bhi <= alo + 1e-12
}

fn family_bases(dir: &Direction, level: u32) -> Vec<[i64; 2]> {
    let gamma = (-(level as f64)).exp2();
    let corners = projected_corners(dir);
    let lo = |i: usize| corners.iter().map(|c| c[i]).fold(f64::INFINITY, f64::min);
    let hi = |i: usize| corners.iter().map(|c| c[i]).fold(f64::NEG_INFINITY, f64::max);
    let range = |i: usize| ((lo(i) / gamma).floor() as i64 - 1)..=((hi(i) / gamma).ceil() as i64 + 1);
    let mut out = Vec::new();
    if dir.dim == 2 {
        let (a, b) = (lo(0), hi(0));
        for k in range(0) {
            let (u, v) = (k as f64 * gamma, (k + 1) as f64 * gamma);
            if u < b - 1e-12 && v > a + 1e-12 {
                out.push([k, 0]);
            }
        }
        return out;
    }
    let hull = convex_hull(corners.clone());
    let mut axes = vec![[1.0, 0.0], [0.0, 1.0]];
    for i in 0..hull.len() {
        let (p, q) = (hull[i], hull[(i + 1) % hull.len()]);
        axes.push([q[1] - p[1], p[0] - q[0]]);
    }
    for kx in range(0) {
        for ky in range(1) {
            let (x0, y0) = (kx as f64 * gamma, ky as f64 * gamma);
            let sq = [[x0, y0], [x0 + gamma, y0], [x0 + gamma, y0 + gamma], [x0, y0 + gamma]];
            if !axes.iter().any(|&ax| separated(&sq, &hull, ax)) {
                out.push([kx, ky]);
            }
        }
    }
    out
}

/// Tubes of width γ = 2^{-level} whose open base meets the interior of π_θ([0,1]^d).
pub fn tube_family(direction: &Direction, level: u32) -> Vec<Tube> {
    family_bases(direction, level).into_iter().map(|base| Tube { direction: *direction, level, base }).collect()
}

/// Occlusion rule shared by the sweep and the brute-force oracle: `b` hides `a`.
fn occludes(pa: [f64; 2], ha: f64, pb: [f64; 2], hb: f64, half: f64, gap: f64) -> bool {
    let (dx, dy) = (pb[0] - pa[0], pb[1] - pa[1]);
    hb - ha >= gap && (dx * dx + dy * dy).sqrt() <= half
}

struct Layout {
    dim: usize,
    h: f64,
    /// Half-widths of a cell's projection onto each frame axis.
    half: [f64; 2],
    pts: Vec<[f64; 2]>,
    heights: Vec<f64>,
}

impl Layout {
    fn new(set: &DyadicSet, dir: &Direction) -> Self {
        let (pts, heights) = (0..set.len())
            .map(|i| {
                let c = set.center(i);
                (dir.project(&c), dir.height(&c))
            })
            .unzip();
        let h = set.cell_size();
        let mut half = [0.0; 2];
        for (j, hj) in half.iter_mut().enumerate().take(set.dim() - 1) {
            // Shrunk slightly so that cells merely touching a base edge (up to rounding) do not count.
            *hj = h / 2.0 * dir.frame.vecs[j][..set.dim()].iter().map(|v| v.abs()).sum::<f64>() * (1.0 - 1e-9);
        }
        Layout { dim: set.dim(), h, half, pts, heights }
    }

    /// Base indices k whose base meets the open projected extent of cell i in every coordinate.
    fn bases(&self, i: usize, level: u32) -> Vec<[i64; 2]> {
        let r = |j: usize| self.range(i, j, level);
        let (a0, b0) = r(0);
        if self.dim == 2 {
            return (a0..=b0).map(|k| [k, 0]).collect();
        }
        let (a1, b1) = r(1);
        let mut out = Vec::with_capacity(((b0 - a0 + 1).max(0) * (b1 - a1 + 1).max(0)) as usize);
        for k0 in a0..=b0 {
            for k1 in a1..=b1 {
                out.push([k0, k1]);
            }
        }
        out
    }

    /// k with c − w < (k+1)γ and kγ < c + w.
    fn range(&self, i: usize, j: usize, level: u32) -> (i64, i64) {
        let gamma = (-(level as f64)).exp2();
        let (c, w) = (self.pts[i][j], self.half[j]);
        (((c - w) / gamma).floor() as i64, ((c + w) / gamma).ceil() as i64 - 1)
    }

    fn incident(&self, i: usize, tube: &Tube) -> bool {
        (0..self.dim - 1).all(|j| {
            let (a, b) = self.range(i, j, tube.level);
            (a..=b).contains(&tube.base[j])
        })
    }

    fn max_half(&self) -> f64 {
        self.half[0].max(self.half[1])
    }

    /// The unique base of width δ containing the centre's projection.
    fn core(&self, i: usize) -> [i64; 2] {
        let p = self.pts[i];
        let mut k = [0i64; 2];
        for j in 0..self.dim - 1 {
            k[j] = (p[j] / self.h).floor() as i64;
        }
        k
    }
}

fn check_direction(set: &DyadicSet, dir: &Direction) -> Result<()> {
    if set.dim() != dir.dim {
        return Err(Error::Parameter(format!("set dimension {} but direction dimension {}", set.dim(), dir.dim)));
    }
    Ok(())
}

/// Relative slack on the occlusion thresholds, absorbing rounding in projected coordinates.
const OCCLUSION_SLACK: f64 = 1e-9;

fn occlusion_gap(dir: &Direction, h: f64) -> f64 {
    h * dir.unit[..dir.dim].iter().map(|u| u.abs()).sum::<f64>() * (1.0 - OCCLUSION_SLACK)
}

/// Cells not hidden by another cell at least h·‖θ‖₁ higher whose centre projects within δ/2.
pub fn visible_cells(set: &DyadicSet, direction: &Direction) -> Result<DyadicSet> {
    check_direction(set, direction)?;
    let lay = Layout::new(set, direction);
    let half = lay.h / 2.0 * (1.0 + OCCLUSION_SLACK);
    let gap = occlusion_gap(direction, lay.h);
    let key = |p: [f64; 2]| [(p[0] / half).floor() as i64, (p[1] / half).floor() as i64];
    let mut buckets: HashMap<[i64; 2], Vec<usize>> = HashMap::new();
    for (i, p) in lay.pts.iter().enumerate() {
        buckets.entry(key(*p)).or_default().push(i);
    }
    for v in buckets.values_mut() {
        v.sort_by(|&a, &b| lay.heights[b].total_cmp(&lay.heights[a]).then(a.cmp(&b)));
    }
    let ny = if set.dim() == 3 { 1 } else { 0 };
    let hidden: Vec<bool> = (0..set.len())
        .into_par_iter()
        .map(|a| {
            let (pa, ha) = (lay.pts[a], lay.heights[a]);
            let k = key(pa);
            for dx in -1..=1 {
                for dy in -ny..=ny {
                    let Some(list) = buckets.get(&[k[0] + dx, k[1] + dy]) else { continue };
                    for &b in list {
                        if lay.heights[b] - ha < gap {
                            break;
                        }
                        if occludes(pa, ha, lay.pts[b], lay.heights[b], half, gap) {
                            return true;
                        }
                    }
                }
            }
            false
        })
        .collect();
    Ok(set.subset(|i| !hidden[i]))
}

/// O(cells²) reference for `visible_cells`.
pub fn visible_cells_bruteforce(set: &DyadicSet, direction: &Direction) -> Result<DyadicSet> {
    check_direction(set, direction)?;
    let lay = Layout::new(set, direction);
    let (half, gap) = (lay.h / 2.0 * (1.0 + OCCLUSION_SLACK), occlusion_gap(direction, lay.h));
    let n = set.len();
    let hidden: Vec<bool> = (0..n)
        .map(|a| (0..n).any(|b| b != a && occludes(lay.pts[a], lay.heights[a], lay.pts[b], lay.heights[b], half, gap)))
        .collect();
    Ok(set.subset(|i| !hidden[i]))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TubeKind {
    Light,
    Heavy,
    HeavyInCube(DyadicCube),
    Substantial(DyadicCube),
}

/// Cell/tube incidence counts for one set, direction and parameter bundle.
pub struct TubeCounter<'a> {
    set: &'a DyadicSet,
    params: &'a Params,
    lay: Layout,
    /// Cells entering the counts: all of them (regular) or the non-light cubes (general).
    counted: Vec<bool>,
    measure: DiscreteMeasure,
}

fn weights_on(set: &DyadicSet, m: &DiscreteMeasure) -> Vec<f64> {
    set.cells().map(|c| m.support.index_of(&c).map(|j| m.weights[j]).unwrap_or(0.0)).collect()
}

impl<'a> TubeCounter<'a> {
    pub fn new(set: &'a DyadicSet, direction: &Direction, params: &'a Params) -> Result<Self> {
        check_direction(set, direction)?;
        if set.dim() != params.d {
            return Err(Error::Parameter("parameter dimension differs from the set".into()));
        }
        if set.depth() != params.depth {
            return Err(Error::Resolution(format!(
                "set depth {} differs from the parameter scale δ = 2^-{}",
                set.depth(),
                params.depth
            )));
        }
        let lay = Layout::new(set, direction);
        let (measure, counted) = if set.is_empty() {
            (DiscreteMeasure::zero(set.dim(), set.depth())?, vec![])
        } else {
            match params.mode {
                Mode::Regular => (natural_measure(set, params.s)?, vec![true; set.len()]),
                Mode::General => {
                    let (m, _) = frostman_with_lower_bound(set, params.d as f64 - params.tau)?;
                    let w = weights_on(set, &m);
                    let thr = params.light_cube_threshold();
                    (m, w.iter().map(|&x| x > thr).collect())
                }
            }
        };
        Ok(TubeCounter { set, params, lay, counted, measure })
    }

    pub fn measure(&self) -> &DiscreteMeasure {
        &self.measure
    }

    fn shift(&self, level: u32) -> u32 {
        self.set.dim() as u32 * (self.set.depth() - level)
    }

    /// N(T∩E, γ) at the tube's own width, optionally restricted to a cube.
    pub fn count(&self, tube: &Tube, within: Option<&DyadicCube>) -> usize {
        let sh = self.shift(tube.level);
        let mut anc: Vec<u64> = (0..self.set.len())
            .filter(|&i| self.counted[i] && self.lay.incident(i, tube))
            .filter(|&i| within.is_none_or(|q| q.contains(&self.set.cell(i))))
            .map(|i| self.set.codes()[i] >> sh)
            .collect();
        anc.sort_unstable();
        anc.dedup();
        anc.len()
    }

    pub fn classify(&self, tube: &Tube, kind: TubeKind) -> Result<bool> {
        let p = self.params;
        if tube.level > p.depth {
            return Err(Error::Resolution("tube narrower than δ".into()));
        }
        let needs_delta = !matches!(kind, TubeKind::Heavy);
        if needs_delta && tube.level != p.depth {
            return Err(Error::Parameter("light, heavy-in-cube and substantial tests use δ-tubes".into()));
        }
        let mode_err = || Error::Parameter("heavy tubes are defined in regular mode only".into());
        let cube_check = |q: &DyadicCube| {
            if q.level != p.coarse_level || q.dim != self.set.dim() {
                Err(Error::Parameter(format!("cube must be a level-{} cube", p.coarse_level)))
            } else {
                Ok(())
            }
        };
        Ok(match kind {
            TubeKind::Light => self.count(tube, None) as f64 <= p.light_threshold(),
            TubeKind::Heavy => self.count(tube, None) as f64 >= p.heavy_threshold(tube.width()).ok_or_else(mode_err)?,
            TubeKind::HeavyInCube(q) => {
                cube_check(&q)?;
                self.count(tube, Some(&q)) as f64 >= p.heavy_in_cube_threshold().ok_or_else(mode_err)?
            }
            TubeKind::Substantial(q) => {
                cube_check(&q)?;
                self.count(tube, Some(&q)) as f64 >= p.substantial_threshold()
            }
        })
    }
}

pub fn classify_tube(tube: &Tube, set: &DyadicSet, params: &Params, kind: TubeKind) -> Result<bool> {
    TubeCounter::new(set, &tube.direction, params)?.classify(tube, kind)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScaleStats {
    pub width: f64,
    pub tubes: usize,
    pub heavy: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TubeStats {
    pub per_scale: Vec<ScaleStats>,
    pub light: usize,
    pub substantial: usize,
    pub bad: usize,
    /// δ-tubes neither light nor inside a heavy tube.
    pub normal: usize,
    /// Normal tubes with no cube Q for which they are substantial.
    pub normal_without_cube: usize,
    pub heavy_in_cube_pairs: usize,
    pub max_same_height: usize,
}

/// Q_T and the below/same/above split of D_{Δ,T} for one normal tube.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TubeStack {
    pub base: [i64; 2],
    pub top: [u32; 3],
    pub below: usize,
    pub same: usize,
    pub above: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PartSummary {
    pub cells: usize,
    pub content: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecompositionReport {
    pub params: Params,
    pub direction: Direction,
    pub content_exponent: f64,
    pub heavy: PartSummary,
    pub light: PartSummary,
    pub bad: PartSummary,
    pub good: PartSummary,
    pub light_cubes: usize,
    pub tube_stats: TubeStats,
    pub stacks: Vec<TubeStack>,
    /// ‖μ_θ‖²_{H^σ} for the measure driving the decomposition.
    pub sobolev: f64,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub e_h: DyadicSet,
    #[serde(skip)]
    pub e_l: DyadicSet,
    #[serde(skip)]
    pub e_b: DyadicSet,
    #[serde(skip)]
    pub e_g: DyadicSet,
}

impl DecompositionReport {
    pub fn parts(&self) -> [&DyadicSet; 4] {
        [&self.e_h, &self.e_l, &self.e_b, &self.e_g]
    }

    /// Grey levels per part (H darkest, G white); d=2 only.
    pub fn to_pgm(&self, set: &DyadicSet) -> Result<Vec<u8>> {
        if set.dim() != 2 {
            return Err(Error::Parameter("overlays are drawn for d=2".into()));
        }
        let shades = [64u8, 128, 192, 255];
        let label: Vec<u8> = set
            .cells()
            .map(|c| self.parts().iter().position(|p| p.contains(&c)).map(|k| shades[k]).unwrap_or(0))
            .collect();
        set_to_pgm_shaded(set, |i| label[i])
    }
}

/// Sorted (key, count) groups of a sorted slice.
fn group_counts<K: Ord + Copy>(v: &[K]) -> Vec<(K, usize)> {
    let mut out: Vec<(K, usize)> = Vec::new();
    for k in v {
        match out.last_mut() {
            Some((last, c)) if last == k => *c += 1,
            _ => out.push((*k, 1)),
        }
    }
    out
}

fn cube_neighbours(dim: usize, level: u32, code: u64, reach: i64) -> Vec<u64> {
    let c = morton::decode(dim, code);
    let n = 1i64 << level;
    let mut out = Vec::new();
    let r = |i: usize| if i < dim { -reach..=reach } else { 0..=0 };
    for dx in r(0) {
        for dy in r(1) {
            for dz in r(2) {
                let q = [c[0] as i64 + dx, c[1] as i64 + dy, c[2] as i64 + dz];
                if (0..dim).all(|i| (0..n).contains(&q[i])) {
                    out.push(morton::encode(dim, [q[0] as u32, q[1] as u32, q[2] as u32]));
                }
            }
        }
    }
    out
}

/// inf and sup of x·θ over the (reach·2+1)-fold enlargement of a level-m cube.
fn height_range(dir: &Direction, level: u32, coords: [u32; 3], reach: f64) -> (f64, f64) {
    let side = (-(level as f64)).exp2();
    let (mut lo, mut hi) = (0.0, 0.0);
    for i in 0..dir.dim {
        let a = (coords[i] as f64 - reach) * side;
        let b = (coords[i] as f64 + 1.0 + reach) * side;
        let u = dir.unit[i];
        lo += if u >= 0.0 { u * a } else { u * b };
        hi += if u >= 0.0 { u * b } else { u * a };
    }
    (lo, hi)
}

struct Analysis {
    heavy_levels: Vec<HashSet<[i64; 2]>>,
    /// Sorted ((δ-base, Q code), count of counted incident cells in Q).
    tube_cube: Vec<(([i64; 2], u64), usize)>,
    heavy_pairs: HashSet<([i64; 2], u64)>,
    family: Vec<[i64; 2]>,
    eh_prime: Vec<bool>,
    per_scale: Vec<ScaleStats>,
}

impl TubeCounter<'_> {
    fn incidences(&self, level: u32, family: &HashSet<[i64; 2]>, only_counted: bool) -> Vec<([i64; 2], usize)> {
        let mut out = Vec::new();
        for i in 0..self.set.len() {
            if only_counted && !self.counted[i] {
                continue;
            }
            for b in self.lay.bases(i, level) {
                if family.contains(&b) {
                    out.push((b, i));
                }
            }
        }
        out
    }

    fn analyse(&self, dir: &Direction) -> Analysis {
        let p = self.params;
        let d = self.set.dim() as u32;
        let depth = p.depth;
        let codes = self.set.codes();
        let mut heavy_levels = Vec::new();
        let mut per_scale = Vec::new();
        let mut eh_prime = vec![false; self.set.len()];
        for level in 0..=depth {
            let fam: HashSet<[i64; 2]> = family_bases(dir, level).into_iter().collect();
            let mut heavy = HashSet::new();
            if let Some(thr) = p.heavy_threshold((-(level as f64)).exp2()) {
                let inc = self.incidences(level, &fam, true);
                let sh = d * (depth - level);
                let mut pairs: Vec<([i64; 2], u64)> = inc.iter().map(|&(b, i)| (b, codes[i] >> sh)).collect();
                pairs.par_sort_unstable();
                pairs.dedup();
                let bases: Vec<[i64; 2]> = pairs.iter().map(|x| x.0).collect();
                for (b, c) in group_counts(&bases) {
                    if c as f64 >= thr {
                        heavy.insert(b);
                    }
                }
                for (b, i) in inc {
                    if heavy.contains(&b) {
                        eh_prime[i] = true;
                    }
                }
            }
            per_scale.push(ScaleStats { width: (-(level as f64)).exp2(), tubes: fam.len(), heavy: heavy.len() });
            heavy_levels.push(heavy);
        }
        let mut family = family_bases(dir, depth);
        family.sort_unstable();
        let fam: HashSet<[i64; 2]> = family.iter().copied().collect();
        let qsh = d * (depth - p.coarse_level);
        let mut tq: Vec<([i64; 2], u64)> =
            self.incidences(depth, &fam, true).into_iter().map(|(b, i)| (b, codes[i] >> qsh)).collect();
        tq.par_sort_unstable();
        let tube_cube = group_counts(&tq);
        let heavy_pairs = match p.heavy_in_cube_threshold() {
            Some(thr) => tube_cube.iter().filter(|(_, c)| *c as f64 >= thr).map(|(k, _)| *k).collect(),
            None => HashSet::new(),
        };
        Analysis { heavy_levels, tube_cube, heavy_pairs, family, eh_prime, per_scale }
    }
}

fn content_of(set: &DyadicSet, t: f64) -> Result<f64> {
    if set.is_empty() {
        Ok(0.0)
    } else {
        dyadic_content(set, t)
    }
}

/// Four-way partition E_H ⊔ E_L ⊔ E_B ⊔ E_G of a set at scale δ = cell size, with precedence H > L > B > G.
pub fn decompose(set: &DyadicSet, direction: &Direction, params: &Params) -> Result<DecompositionReport> {
    let counter = TubeCounter::new(set, direction, params)?;
    let p = params;
    let dim = set.dim();
    let depth = p.depth;
    let codes = set.codes();
    let mut warnings = p.warnings.clone();
    if let (Some(h), l) = (p.heavy_threshold(p.delta), p.light_threshold()) {
        if !(l < h) {
            warnings.push(format!("light threshold {l} ≥ heavy threshold {h}: light and heavy may overlap"));
        }
    }
    let an = counter.analyse(direction);
    let lay = &counter.lay;
    let n = set.len();
    let qsh = dim as u32 * (depth - p.coarse_level);
    let reach = if p.mode == Mode::Regular { 1 } else { 0 };

    // Heavy part: E_H' and the Q_H.
    let mut eh = an.eh_prime.clone();
    if !an.heavy_pairs.is_empty() {
        let fam: HashSet<[i64; 2]> = an.family.iter().copied().collect();
        for i in 0..n {
            let nbrs = cube_neighbours(dim, p.coarse_level, codes[i] >> qsh, 1);
            eh[i] = eh[i]
                || lay.bases(i, depth).iter().filter(|b| fam.contains(*b)).any(|b| nbrs.iter().any(|q| an.heavy_pairs.contains(&(*b, *q))));
        }
    }

    // Light tubes.
    let mut totals: HashMap<[i64; 2], usize> = HashMap::new();
    for ((b, _), c) in &an.tube_cube {
        *totals.entry(*b).or_insert(0) += c;
    }
    let light_thr = p.light_threshold();
    let light: HashSet<[i64; 2]> =
        an.family.iter().copied().filter(|b| totals.get(b).copied().unwrap_or(0) as f64 <= light_thr).collect();

    // Substantial and bad pairs; a bad pair has no cell of E (in 3Q or Q) whose centre projects into the base.
    let sub_thr = p.substantial_threshold();
    let core: HashSet<([i64; 2], u64)> = (0..n).map(|i| (lay.core(i), codes[i] >> qsh)).collect();
    let substantial: Vec<([i64; 2], u64)> =
        an.tube_cube.iter().filter(|(_, c)| *c as f64 >= sub_thr).map(|(k, _)| *k).collect();
    let bad_tubes: HashSet<[i64; 2]> = substantial
        .iter()
        .filter(|(b, q)| !cube_neighbours(dim, p.coarse_level, *q, reach).iter().any(|q2| core.contains(&(*b, *q2))))
        .map(|(b, _)| *b)
        .collect();
    let sub_tubes: BTreeSet<[i64; 2]> = substantial.iter().map(|x| x.0).collect();

    let fam: HashSet<[i64; 2]> = an.family.iter().copied().collect();
    let mut label = vec![3u8; n];
    for i in 0..n {
        let bases: Vec<[i64; 2]> = lay.bases(i, depth).into_iter().filter(|b| fam.contains(b)).collect();
        label[i] = if eh[i] {
            0
        } else if !counter.counted[i] || bases.iter().any(|b| light.contains(b)) {
            1
        } else if bases.iter().any(|b| bad_tubes.contains(b)) {
            2
        } else {
            3
        };
    }

    // Normal tubes, Q_T and the height trichotomy.
    let in_heavy = |b: &[i64; 2]| (0..=depth).any(|j| an.heavy_levels[j as usize].contains(&ancestor_base(*b, depth - j)));
    let mut stacks = Vec::new();
    let mut normal = 0;
    let mut normal_without_cube = 0;
    let mut by_tube: BTreeMap<[i64; 2], Vec<(u64, usize)>> = BTreeMap::new();
    for ((b, q), c) in &an.tube_cube {
        by_tube.entry(*b).or_default().push((*q, *c));
    }
    let reach_f = reach as f64;
    for b in &an.family {
        if light.contains(b) || in_heavy(b) {
            continue;
        }
        normal += 1;
        let cubes = by_tube.get(b).cloned().unwrap_or_default();
        let top = cubes
            .iter()
            .filter(|(_, c)| *c as f64 >= sub_thr)
            .map(|(q, _)| {
                let coords = morton::decode(dim, *q);
                (height_range(direction, p.coarse_level, coords, reach_f).0, coords)
            })
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        let Some((top_inf, top_coords)) = top else {
            normal_without_cube += 1;
            continue;
        };
        let (mut below, mut same, mut above) = (0, 0, 0);
        for (q, _) in &cubes {
            let (lo, hi) = height_range(direction, p.coarse_level, morton::decode(dim, *q), reach_f);
            if hi < top_inf {
                below += 1;
            } else if lo > top_inf {
                above += 1;
            } else {
                same += 1;
            }
        }
        stacks.push(TubeStack { base: *b, top: top_coords, below, same, above });
    }

    let part = |k: u8| set.subset(|i| label[i] == k);
    let (e_h, e_l, e_b, e_g) = (part(0), part(1), part(2), part(3));
    let t = p.content_exponent();
    let summary = |s: &DyadicSet| -> Result<PartSummary> { Ok(PartSummary { cells: s.len(), content: content_of(s, t)? }) };
    let sobolev = if counter.measure.weights.is_empty() {
        0.0
    } else {
        direction_sobolev(&counter.measure, direction, p.sigma)?
    };
    let tube_stats = TubeStats {
        per_scale: an.per_scale.clone(),
        light: light.len(),
        substantial: sub_tubes.len(),
        bad: bad_tubes.len(),
        normal,
        normal_without_cube,
        heavy_in_cube_pairs: an.heavy_pairs.len(),
        max_same_height: stacks.iter().map(|s| s.same).max().unwrap_or(0),
    };
    Ok(DecompositionReport {
        params: p.clone(),
        direction: *direction,
        content_exponent: t,
        heavy: summary(&e_h)?,
        light: summary(&e_l)?,
        bad: summary(&e_b)?,
        good: summary(&e_g)?,
        light_cubes: counter.counted.iter().filter(|c| !**c).count(),
        tube_stats,
        stacks,
        sobolev,
        warnings,
        e_h,
        e_l,
        e_b,
        e_g,
    })
}

/// δ-tubes substantial for Q that meet no cell of E in 3Q (regular) or Q (general) through their core.
pub fn bad_lines(set: &DyadicSet, direction: &Direction, params: &Params, q: &DyadicCube) -> Result<Vec<Tube>> {
    let counter = TubeCounter::new(set, direction, params)?;
    let reach = if params.mode == Mode::Regular { 1 } else { 0 };
    let near = |c: &DyadicCube| {
        let a = c.ancestor(q.level);
        (0..set.dim()).all(|i| (a.coords[i] as i64 - q.coords[i] as i64).abs() <= reach)
    };
    let mut out = Vec::new();
    for tube in tube_family(direction, params.depth) {
        if !counter.classify(&tube, TubeKind::Substantial(*q))? {
            continue;
        }
        let hit = (0..set.len()).any(|i| near(&set.cell(i)) && counter.lay.core(i) == tube.base);
        if !hit {
            out.push(tube);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GoodPartCheck {
    pub bound: f64,
    pub max_count: usize,
    pub max_ratio: f64,
    pub tubes: usize,
}

/// max over δ-tubes of N(vis ∩ E_G ∩ T, δ) against the bound's leading terms.
pub fn good_part_covering_check(
    report: &DecompositionReport,
    set: &DyadicSet,
    direction: &Direction,
    params: &Params,
) -> Result<GoodPartCheck> {
    if report.params != *params || report.direction != *direction {
        return Err(Error::Parameter("report was computed for other parameters or direction".into()));
    }
    let vis = visible_cells(set, direction)?;
    let good_vis = vis.intersection(&report.e_g)?;
    let lay = Layout::new(&good_vis, direction);
    let fam: HashSet<[i64; 2]> = family_bases(direction, params.depth).into_iter().collect();
    let mut counts: HashMap<[i64; 2], usize> = HashMap::new();
    for i in 0..good_vis.len() {
        for b in lay.bases(i, params.depth) {
            if fam.contains(&b) {
                *counts.entry(b).or_insert(0) += 1;
            }
        }
    }
    let max_count = counts.values().copied().max().unwrap_or(0);
    let bound = params.good_part_bound();
    Ok(GoodPartCheck { bound, max_count, max_ratio: max_count as f64 / bound, tubes: fam.len() })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MaximalHeavyReport {
    pub heavy_tube_cells: usize,
    pub heavy_cube_cells: usize,
    pub maximal_cells: usize,
    pub maximal_cube_cells: usize,
    /// Derived factor K: every cell of E_H' has Mμ_θ ≥ δ^{-ε}/K.
    pub slack: f64,
    pub cube_slack: f64,
    pub containment_violations: usize,
    pub cube_containment_violations: usize,
    pub content_heavy_tubes: f64,
    pub content_heavy_cubes: f64,
    pub sobolev: f64,
    /// content(E_H', d−1+2ε)·δ^{-ε}/‖μ_θ‖².
    pub ratio: f64,
    #[serde(skip)]
    pub e_h_prime: DyadicSet,
    #[serde(skip)]
    pub e_h_tilde: DyadicSet,
}

/// Smallest lattice radius h·2^k strictly above r, if within the maximal-function range.
fn lattice_radius_above(h: f64, r: f64) -> Option<f64> {
    let mut x = h;
    while x <= r {
        x *= 2.0;
    }
    (x <= MAX_RADIUS).then_some(x)
}

fn bin_query(p: &ProjectedMeasure, x: [f64; 2]) -> [f64; 2] {
    let mut k = [0i64; 2];
    for j in 0..p.n() {
        k[j] = (x[j] / p.bin_width).floor() as i64;
    }
    p.center(&k)
}

/// Tube-count heavy parts against their maximal-function counterparts.
pub fn maximal_heavy_parts(
    set: &DyadicSet,
    measure: &DiscreteMeasure,
    direction: &Direction,
    params: &Params,
) -> Result<MaximalHeavyReport> {
    if params.mode != Mode::Regular {
        return Err(Error::Parameter("maximal heavy parts are defined in regular mode".into()));
    }
    if measure.support.depth() != set.depth() || measure.support.dim() != set.dim() {
        return Err(Error::Resolution("measure and set live on different grids".into()));
    }
    let counter = TubeCounter::new(set, direction, params)?;
    let an = counter.analyse(direction);
    let lay = &counter.lay;
    let (p, dim, depth) = (params, set.dim(), params.depth);
    let nn = (dim - 1) as i32;
    let codes = set.codes();
    let w = weights_on(set, measure);
    let h = p.delta;

    // Slack from the measured mass of each heavy tube.
    let mut slack: f64 = 0.0;
    for level in 0..=depth {
        let heavy = &an.heavy_levels[level as usize];
        if heavy.is_empty() {
            continue;
        }
        let gamma = (-(level as f64)).exp2();
        let sh = dim as u32 * (depth - level);
        let mut mass: HashMap<[i64; 2], f64> = HashMap::new();
        let mut anc: HashMap<[i64; 2], HashSet<u64>> = HashMap::new();
        for i in 0..set.len() {
            for b in lay.bases(i, level) {
                if heavy.contains(&b) {
                    *mass.entry(b).or_insert(0.0) += w[i];
                    anc.entry(b).or_default().insert(codes[i] >> sh);
                }
            }
        }
        let r = (gamma + 2.0 * lay.max_half() + h) * (nn as f64).sqrt();
        let rr = lattice_radius_above(h, r).unwrap_or(f64::INFINITY);
        for (b, m) in &mass {
            let lambda = m / (anc[b].len() as f64 * gamma.powf(p.s));
            slack = slack.max((rr / gamma).powi(nn) / lambda);
        }
    }
    let proj = project(measure, &direction.frame)?;
    let queries: Vec<[f64; 2]> = lay.pts.iter().map(|x| bin_query(&proj, *x)).collect();
    let mf = maximal_function(&proj, &queries);
    let thr = h.powf(-p.eps);
    let tilde: Vec<bool> = mf.iter().map(|v| v.value >= thr).collect();
    let violations = (0..set.len()).filter(|&i| an.eh_prime[i] && !(mf[i].value >= thr / slack)).count();

    // Heavy-in-cube pairs, checked against the maximal function of μ restricted to 3Q.
    let qsh = dim as u32 * (depth - p.coarse_level);
    let fam: HashSet<[i64; 2]> = an.family.iter().copied().collect();
    let mut qh = vec![false; set.len()];
    let mut members: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    let mut pair_mass: HashMap<([i64; 2], u64), f64> = HashMap::new();
    for i in 0..set.len() {
        let own = codes[i] >> qsh;
        let bases: Vec<[i64; 2]> = lay.bases(i, depth).into_iter().filter(|b| fam.contains(b)).collect();
        for b in &bases {
            if an.heavy_pairs.contains(&(*b, own)) {
                *pair_mass.entry((*b, own)).or_insert(0.0) += w[i];
            }
            for q in cube_neighbours(dim, p.coarse_level, own, 1) {
                if an.heavy_pairs.contains(&(*b, q)) {
                    qh[i] = true;
                    members.entry(q).or_default().push(i);
                }
            }
        }
    }
    let counts: HashMap<([i64; 2], u64), usize> = an.tube_cube.iter().copied().collect();
    let r = (h + 2.0 * lay.max_half() + h) * (nn as f64).sqrt();
    let rr = lattice_radius_above(h, r).unwrap_or(f64::INFINITY);
    let mut cube_slack: f64 = 0.0;
    for (k, m) in &pair_mass {
        let lambda = m / (counts[k] as f64 * h.powf(p.s));
        cube_slack = cube_slack.max((rr / h).powi(nn) / lambda);
    }
    let cube_thr = h.powf(p.kappa * p.excess() - p.kappa * p.tau - 3.0 * p.eps);
    let mut qtilde = vec![false; set.len()];
    let mut cube_violations = 0;
    let mut occupied: Vec<u64> = codes.iter().map(|c| c >> qsh).collect();
    occupied.dedup();
    for q in occupied {
        let region: Vec<usize> = (0..set.len())
            .filter(|&i| cube_neighbours(dim, p.coarse_level, codes[i] >> qsh, 1).contains(&q))
            .collect();
        let restricted = DiscreteMeasure::new(
            &set.subset(|i| region.binary_search(&i).is_ok()),
            region.iter().map(|&i| w[i]).collect(),
        )?;
        if restricted.weights.is_empty() {
            continue;
        }
        let pq = project(&restricted, &direction.frame)?;
        let qs: Vec<[f64; 2]> = region.iter().map(|&i| bin_query(&pq, lay.pts[i])).collect();
        let vals = maximal_function(&pq, &qs);
        for (j, &i) in region.iter().enumerate() {
            if vals[j].value >= cube_thr {
                qtilde[i] = true;
            }
        }
        if let Some(list) = members.get(&q) {
            for &i in list {
                let j = region.binary_search(&i).expect("member lies in 3Q");
                if !(vals[j].value >= cube_thr / cube_slack) {
                    cube_violations += 1;
                }
            }
        }
    }
    let e_h_prime = set.subset(|i| an.eh_prime[i]);
    let e_h_tilde = set.subset(|i| tilde[i]);
    let q_h = set.subset(|i| qh[i]);
    let content_heavy_tubes = content_of(&e_h_prime, dim as f64 - 1.0 + 2.0 * p.eps)?;
    let sobolev = direction_sobolev(measure, direction, p.sigma)?;
    Ok(MaximalHeavyReport {
        heavy_tube_cells: e_h_prime.len(),
        heavy_cube_cells: q_h.len(),
        maximal_cells: e_h_tilde.len(),
        maximal_cube_cells: qtilde.iter().filter(|x| **x).count(),
        slack,
        cube_slack,
        containment_violations: violations,
        cube_containment_violations: cube_violations,
        content_heavy_tubes,
        content_heavy_cubes: content_of(&q_h, p.content_exponent())?,
        sobolev,
        ratio: if sobolev > 0.0 { content_heavy_tubes * thr / sobolev } else { 0.0 },
        e_h_prime,
        e_h_tilde,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub delta: f64,
    pub direction: usize,
    pub vis_content: f64,
    pub vis_cells: usize,
    pub heavy: f64,
    pub light: f64,
    pub bad: f64,
    pub good_vis: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScaleAverage {
    pub delta: f64,
    pub content_exponent: f64,
    pub mean_vis_content: f64,
    pub mean_vis_cells: f64,
    pub mean_heavy: f64,
    pub mean_light: f64,
    pub mean_bad: f64,
    pub mean_good_vis: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentTable {
    pub rows: Vec<ExperimentRow>,
    pub averages: Vec<ScaleAverage>,
    /// Slope of log(mean visible cells) against log(1/δ).
    pub vis_dimension: Option<f64>,
    pub warnings: Vec<String>,
}

impl ExperimentTable {
    /// A(δ) strictly decreasing as δ shrinks.
    pub fn strictly_decreasing(&self) -> bool {
        let mut a = self.averages.clone();
        a.sort_by(|x, y| y.delta.total_cmp(&x.delta));
        a.windows(2).all(|w| w[1].mean_vis_content < w[0].mean_vis_content)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("delta,direction,visContent,EH,EL,EB,EGvis\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{},{},{}", r.delta, r.direction, r.vis_content, r.heavy, r.light, r.bad, r.good_vis);
        }
        out
    }
}

/// Direction-averaged contents of visible parts and of the four parts, one row per (δ, direction).
///
/// `set` is given at the finest requested depth and coarsened for the others; direction j uses stream j of `seed`.
pub fn direction_average_experiment(
    set: &DyadicSet,
    base: &Params,
    directions: usize,
    seed: u64,
    levels: &[u32],
    relaxed: bool,
) -> Result<ExperimentTable> {
    let dim = set.dim();
    let dirs: Vec<Direction> =
        (0..directions).map(|j| Direction::sample(dim, &mut job_rng(seed, j as u64))).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut averages = Vec::new();
    let mut warnings = Vec::new();
    for &level in levels {
        let solve = if relaxed { solve_parameters_relaxed } else { solve_parameters };
        let params = solve(base.s, base.d, base.eps, base.mode, level)?;
        for w in &params.warnings {
            if !warnings.contains(w) {
                warnings.push(w.clone());
            }
        }
        let coarse = set.coarsen(level)?;
        let t = params.content_exponent();
        let mut here: Vec<ExperimentRow> = dirs
            .par_iter()
            .enumerate()
            .map(|(j, dir)| -> Result<ExperimentRow> {
                let vis = visible_cells(&coarse, dir)?;
                let rep = decompose(&coarse, dir, &params)?;
                Ok(ExperimentRow {
                    delta: params.delta,
                    direction: j,
                    vis_content: content_of(&vis, t)?,
                    vis_cells: vis.len(),
                    heavy: rep.heavy.content,
                    light: rep.light.content,
                    bad: rep.bad.content,
                    good_vis: content_of(&vis.intersection(&rep.e_g)?, t)?,
                })
            })
            .collect::<Result<_>>()?;
        let k = here.len().max(1) as f64;
        let mean = |f: &dyn Fn(&ExperimentRow) -> f64| pairwise_sum(&here.iter().map(f).collect::<Vec<_>>()) / k;
        averages.push(ScaleAverage {
            delta: params.delta,
            content_exponent: t,
            mean_vis_content: mean(&|r| r.vis_content),
            mean_vis_cells: mean(&|r| r.vis_cells as f64),
            mean_heavy: mean(&|r| r.heavy),
            mean_light: mean(&|r| r.light),
            mean_bad: mean(&|r| r.bad),
            mean_good_vis: mean(&|r| r.good_vis),
        });
        rows.append(&mut here);
    }
    let pts: Vec<(f64, f64)> = averages.iter().filter(|a| a.mean_vis_cells > 0.0).map(|a| (a.delta, a.mean_vis_cells)).collect();
    let vis_dimension = box_dimension_fit(&pts).ok().map(|f| f.slope);
    Ok(ExperimentTable { rows, averages, vis_dimension, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames() {
        let d = Direction::from_angle(PI / 2.0);
        assert!((d.frame.vecs[0][0] - 1.0).abs() < 1e-15);
        let d = Direction::from_vector(3, [0.0, 0.0, 1.0]).unwrap();
        assert!(Frame::new(3, &d.frame.vecs).is_ok());
        let d = Direction::from_spherical(1.0, 2.0);
        let dot: f64 = (0..3).map(|i| d.unit[i] * d.frame.vecs[0][i]).sum();
        assert!(dot.abs() < 1e-12);
    }

    #[test]
    fn parameter_examples() {
        let p = solve_parameters(2.0, 2, 0.0, Mode::Regular, 8).unwrap();
        assert!((p.alpha.unwrap() - 0.1835034191).abs() < 1e-9);
        assert!((p.kappa - 0.2247448714).abs() < 1e-9);
        assert!((p.tau - 0.1835034191).abs() < 1e-9);
        assert!((2.0 * p.kappa + 3.0 * p.alpha.unwrap() - 1.0).abs() < 1e-12);
        assert!(p.delta.powf(p.kappa) < p.big_delta && p.big_delta <= 2.0 * p.delta.powf(p.kappa));
        let g = solve_parameters(2.0, 2, 0.01, Mode::General, 8).unwrap();
        assert!((g.tau - (1.0 / 6.0 - 0.05)).abs() < 1e-12 && g.kappa == 1.0 / 6.0);
        assert!(solve_parameters(1.0, 2, 0.01, Mode::Regular, 8).is_err());
        assert!(solve_parameters(1.9, 2, 0.05, Mode::Regular, 8).is_err());
        assert!(!solve_parameters_relaxed(1.9, 2, 0.05, Mode::Regular, 8).unwrap().warnings.is_empty());
    }

    #[test]
    fn tube_counts() {
        assert_eq!(tube_family(&Direction::from_angle(PI / 2.0), 4).len(), 16);
        assert_eq!(tube_family(&Direction::from_angle(-PI / 2.0), 4).len(), 16);
        let n = tube_family(&Direction::from_angle(PI / 4.0), 4).len();
        assert!((16..=32).contains(&n), "{n}");
        assert_eq!(tube_family(&Direction::from_vector(3, [0.0, 0.0, 1.0]).unwrap(), 3).len(), 64);
    }

    #[test]
    fn square_shows_top_row() {
        let sq = DyadicSet::full(2, 5).unwrap();
        let vis = visible_cells(&sq, &Direction::from_angle(PI / 2.0)).unwrap();
        assert_eq!(vis.sorted_coords(), (0..32).map(|x| [x, 31, 0]).collect::<Vec<_>>());
        let rows = DyadicSet::from_coords(2, 4, (0..16).flat_map(|x| [[x, 3, 0], [x, 9, 0]])).unwrap();
        let vis = visible_cells(&rows, &Direction::from_angle(PI / 2.0)).unwrap();
        assert!(vis.sorted_coords().iter().all(|c| c[1] == 9) && vis.len() == 16);
    }

    #[test]
    fn sweep_matches_bruteforce() {
        let set = DyadicSet::from_coords(2, 4, (0..16u32).flat_map(|x| (0..16u32).filter(move |y| (x * 7 + y * 3) % 5 < 2).map(move |y| [x, y, 0])))
            .unwrap();
        for phi in [0.3, 1.1, 2.0, 4.4] {
            let dir = Direction::from_angle(phi);
            assert_eq!(visible_cells(&set, &dir).unwrap(), visible_cells_bruteforce(&set, &dir).unwrap());
        }
    }

    #[test]
    fn classification_examples() {
        let sq = DyadicSet::full(2, 10).unwrap();
        let p = solve_parameters(2.0, 2, 0.01, Mode::Regular, 10).unwrap();
        let dir = Direction::from_angle(PI / 2.0);
        let t = Tube { direction: dir, level: 10, base: [300, 0] };
        assert!(!classify_tube(&t, &sq, &p, TubeKind::Heavy).unwrap());
        let seg = DyadicSet::from_coords(2, 10, (0..1024).map(|y| [300, y, 0])).unwrap();
        let p1 = solve_parameters_relaxed(1.0, 2, 0.05, Mode::Regular, 10).unwrap();
        assert!(classify_tube(&t, &seg, &p1, TubeKind::Heavy).unwrap());
        let empty = DyadicSet::empty(2, 10).unwrap();
        assert!(classify_tube(&t, &empty, &p, TubeKind::Light).unwrap());
    }

    #[test]
    fn bad_tubes_next_to_a_column() {
        let p = solve_parameters(2.0, 2, 0.01, Mode::Regular, 6).unwrap();
        let col = DyadicSet::from_coords(2, 6, (0..32).map(|y| [20, y, 0])).unwrap();
        let q = DyadicCube::new(2, p.coarse_level, [0, 0, 0]).unwrap();
        // Straight down the column every incident cell is a core cell.
        assert!(bad_lines(&col, &Direction::from_angle(PI / 2.0), &p, &q).unwrap().is_empty());
        // Tilted, the column's cells overhang the neighbouring tubes without projecting into them.
        let dir = Direction::from_angle(PI / 2.0 + 0.005);
        let bad = bad_lines(&col, &dir, &p, &q).unwrap();
        assert!(!bad.is_empty());
        let r = decompose(&col, &dir, &p).unwrap();
        let mut all: Vec<[i64; 2]> = Vec::new();
        for x in 0..(1u32 << p.coarse_level) {
            for y in 0..(1u32 << p.coarse_level) {
                let q = DyadicCube::new(2, p.coarse_level, [x, y, 0]).unwrap();
                all.extend(bad_lines(&col, &dir, &p, &q).unwrap().iter().map(|t| t.base));
            }
        }
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), r.tube_stats.bad);
        let sq = DyadicSet::full(2, 6).unwrap();
        assert!(bad_lines(&sq, &dir, &p, &q).unwrap().is_empty());
    }

    #[test]
    fn square_decomposition() {
        let sq = DyadicSet::full(2, 8).unwrap();
        let p = solve_parameters_relaxed(2.0, 2, 0.05, Mode::Regular, 8).unwrap();
        let dir = Direction::from_angle(PI / 2.0);
        let r = decompose(&sq, &dir, &p).unwrap();
        assert!(r.e_h.is_empty());
        let total: usize = r.parts().iter().map(|s| s.len()).sum();
        assert_eq!(total, sq.len());
        assert_eq!(r.tube_stats.normal_without_cube, 0);
        let g = good_part_covering_check(&r, &sq, &dir, &p).unwrap();
        assert!(g.max_count <= 2);
    }
}
