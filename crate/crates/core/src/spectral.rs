//! Fourier transforms of projected measures, Sobolev norms and the energy identity.

use crate::error::{Error, Result};
use crate::measures::{pairwise_sum, project, riesz_energy, DiscreteMeasure, ProjectedMeasure};
use crate::rng::job_rng;
use crate::visibility::Direction;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;
use std::f64::consts::PI;
use std::fmt::Write as _;

/// |ν̂(ξ)|² for integer ξ with |ξ|∞ ≤ cutoff, kernel e^{-2πi x·ξ}.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectralProfile {
    pub n: usize,
    pub cutoff: i64,
    /// Lexicographic in ξ (first coordinate slowest).
    pub amplitudes: Vec<f64>,
}

impl SpectralProfile {
    fn side(&self) -> usize {
        (2 * self.cutoff + 1) as usize
    }

    pub fn frequency(&self, idx: usize) -> [i64; 2] {
        let side = self.side();
        if self.n == 1 {
            [idx as i64 - self.cutoff, 0]
        } else {
            [(idx / side) as i64 - self.cutoff, (idx % side) as i64 - self.cutoff]
        }
    }

    pub fn index(&self, xi: [i64; 2]) -> Option<usize> {
        let k = self.cutoff;
        if (0..self.n).any(|i| xi[i].abs() > k) {
            return None;
        }
        let side = self.side() as i64;
        Some(if self.n == 1 { (xi[0] + k) as usize } else { ((xi[0] + k) * side + xi[1] + k) as usize })
    }

    pub fn amplitude(&self, xi: [i64; 2]) -> f64 {
        self.index(xi).map_or(0.0, |i| self.amplitudes[i])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let head: Vec<String> = (0..self.n).map(|i| format!("xi{i}")).collect();
        let _ = writeln!(out, "{},amplitude", head.join(","));
        for (i, a) in self.amplitudes.iter().enumerate() {
            let f = self.frequency(i);
            let cols: Vec<String> = f[..self.n].iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{},{}", cols.join(","), a);
        }
        out
    }
}

fn frequencies(n: usize, cutoff: i64) -> Vec<[i64; 2]> {
    let mut v = Vec::new();
    if n == 1 {
        for a in -cutoff..=cutoff {
            v.push([a, 0]);
        }
    } else {
        for a in -cutoff..=cutoff {
            for b in -cutoff..=cutoff {
                v.push([a, b]);
            }
        }
    }
    v
}

/// Direct atomic sum.
pub fn transform_exact(p: &ProjectedMeasure, cutoff: i64) -> Result<SpectralProfile> {
    if cutoff < 1 {
        return Err(Error::Parameter("cutoff must be ≥ 1".into()));
    }
    let n = p.n();
    let atoms: Vec<([f64; 2], f64)> = p.bins.iter().map(|(k, w)| (p.center(k), *w)).collect();
    let amplitudes = frequencies(n, cutoff)
        .par_iter()
        .map(|xi| {
            let mut re = Vec::with_capacity(atoms.len());
            let mut im = Vec::with_capacity(atoms.len());
            for (x, w) in &atoms {
                let ph = -2.0 * PI * (0..n).map(|i| xi[i] as f64 * x[i]).sum::<f64>();
                re.push(w * ph.cos());
                im.push(w * ph.sin());
            }
            let (a, b) = (pairwise_sum(&re), pairwise_sum(&im));
            a * a + b * b
        })
        .collect();
    Ok(SpectralProfile { n, cutoff, amplitudes })
}

/// Largest grid handled by the FFT path.
pub const FFT_LIMIT: usize = 1 << 22;

fn fft_nd(data: &mut [Complex64], size: usize, n: usize) {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(size);
    if n == 1 {
        fft.process(data);
        return;
    }
    for row in data.chunks_mut(size) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); size];
    for c in 0..size {
        for r in 0..size {
            col[r] = data[r * size + c];
        }
        fft.process(&mut col);
        for r in 0..size {
            data[r * size + c] = col[r];
        }
    }
}

/// FFT path for bins on the 1/N lattice; `None` when not applicable.
pub fn transform_fft(p: &ProjectedMeasure, cutoff: i64) -> Option<SpectralProfile> {
    let inv = 1.0 / p.bin_width;
    let size = inv.round() as usize;
    let n = p.n();
    if (inv - size as f64).abs() > 1e-9 || size == 0 || size.pow(n as u32) > FFT_LIMIT || cutoff < 1 {
        return None;
    }
    // Atoms sit at offset + (k + 1/2)/N; the common phase drops out of |ν̂|², so ν̂(ξ) depends on k mod N only.
    let mut grid = vec![Complex64::new(0.0, 0.0); size.pow(n as u32)];
    for (k, w) in &p.bins {
        let mut idx = 0usize;
        for i in 0..n {
            idx = idx * size + k[i].rem_euclid(size as i64) as usize;
        }
        grid[idx].re += w;
    }
    fft_nd(&mut grid, size, n);
    let wrap = |x: i64| x.rem_euclid(size as i64) as usize;
    let amplitudes = frequencies(n, cutoff)
        .iter()
        .map(|xi| {
            let idx = if n == 1 { wrap(xi[0]) } else { wrap(xi[0]) * size + wrap(xi[1]) };
            grid[idx].norm_sqr()
        })
        .collect();
    Some(SpectralProfile { n, cutoff, amplitudes })
}

/// Exact transform; uses the FFT when the bins sit on a 1/N lattice small enough to grid.
pub fn transform(p: &ProjectedMeasure, cutoff: i64) -> Result<SpectralProfile> {
    if cutoff < 1 {
        return Err(Error::Parameter("cutoff must be ≥ 1".into()));
    }
    match transform_fft(p, cutoff) {
        Some(prof) => Ok(prof),
        None => transform_exact(p, cutoff),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SobolevKind {
    Homogeneous,
    Inhomogeneous,
}

/// Unit-spacing lattice sum of |ν̂|² against (1+|ξ|²)^σ or |ξ|^{2σ}.
pub fn sobolev_norm(profile: &SpectralProfile, sigma: f64, kind: SobolevKind) -> f64 {
    let terms: Vec<f64> = profile
        .amplitudes
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let f = profile.frequency(i);
            let r2: f64 = (0..profile.n).map(|j| (f[j] * f[j]) as f64).sum();
            match kind {
                SobolevKind::Inhomogeneous => a * (1.0 + r2).powf(sigma),
                SobolevKind::Homogeneous if r2 == 0.0 => 0.0,
                SobolevKind::Homogeneous => a * r2.powf(sigma),
            }
        })
        .collect();
    pairwise_sum(&terms)
}

/// Σ over ξ with 0 < |ξ|∞ ≤ 1 of |ν̂(ξ)|² (the low-frequency term in the H^σ ≲ mass² + Ḣ^σ comparison).
pub fn low_frequency_mass(profile: &SpectralProfile) -> f64 {
    let mut s = 0.0;
    for (i, a) in profile.amplitudes.iter().enumerate() {
        let f = profile.frequency(i);
        let m = (0..profile.n).map(|j| f[j].abs()).max().unwrap_or(0);
        if m == 1 {
            s += a;
        }
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnergyFourierOptions {
    /// Frequency lattice spacing is 1/refinement.
    pub refinement: u32,
    /// Multiply |μ̂|² by the squared transform of a uniform cell.
    pub form_factor: bool,
}

impl Default for EnergyFourierOptions {
    fn default() -> Self {
        EnergyFourierOptions { refinement: 4, form_factor: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyFourierResult {
    pub energy: f64,
    pub lattice_sum: f64,
    pub ratio: f64,
    pub options: EnergyFourierOptions,
    /// Set for inputs where the lattice sum is dominated by the cutoff (single atoms).
    pub flagged: bool,
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Riemann sum of |μ̂(ξ)|²|ξ|^{s-d} over ξ ∈ (1/P)Z^d, 0 < |ξ|∞ ≤ cutoff.
pub fn fourier_energy_sum(m: &DiscreteMeasure, s: f64, cutoff: i64, opt: EnergyFourierOptions) -> Result<f64> {
    let d = m.support.dim();
    let depth = m.support.depth();
    let p = opt.refinement.max(1) as usize;
    let size = (1usize << depth) * p;
    if size.pow(d as u32) > FFT_LIMIT * 4 {
        return Err(Error::Resolution(format!("frequency grid {size}^{d} too large")));
    }
    let mut grid = vec![Complex64::new(0.0, 0.0); size.pow(d as u32)];
    for (c, w) in m.support.cells().zip(&m.weights) {
        let mut idx = 0usize;
        for i in 0..d {
            idx = idx * size + c.coords[i] as usize;
        }
        grid[idx].re += w;
    }
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(size);
    let stride = |axis: usize| size.pow((d - 1 - axis) as u32);
    let mut line = vec![Complex64::new(0.0, 0.0); size];
    for axis in 0..d {
        let st = stride(axis);
        let total = grid.len();
        for start in 0..total {
            if (start / st) % size != 0 {
                continue;
            }
            for (t, v) in line.iter_mut().enumerate() {
                *v = grid[start + t * st];
            }
            fft.process(&mut line);
            for (t, v) in line.iter().enumerate() {
                grid[start + t * st] = *v;
            }
        }
    }
    let h = m.support.cell_size();
    let kmax = cutoff * p as i64;
    let wrap = |x: i64| x.rem_euclid(size as i64) as usize;
    let mut rows = Vec::new();
    let mut idxs = vec![-kmax; d];
    loop {
        if idxs.iter().any(|&v| v != 0) {
            let mut flat = 0usize;
            let mut r2 = 0.0;
            let mut ff = 1.0;
            for &v in &idxs {
                flat = flat * size + wrap(v);
                let xi = v as f64 / p as f64;
                r2 += xi * xi;
                if opt.form_factor {
                    ff *= sinc(xi * h).powi(2);
                }
            }
            rows.push(grid[flat].norm_sqr() * ff * r2.powf((s - d as f64) / 2.0));
        }
        let mut ax = d;
        loop {
            if ax == 0 {
                let w = (p as f64).powi(-(d as i32));
                return Ok(pairwise_sum(&rows) * w);
            }
            ax -= 1;
            if idxs[ax] < kmax {
                idxs[ax] += 1;
                break;
            }
            idxs[ax] = -kmax;
        }
    }
}

/// Riesz energy over the Fourier lattice sum: the empirical constant C_{d,s}.
pub fn energy_fourier_check(m: &DiscreteMeasure, s: f64, cutoff: i64) -> Result<EnergyFourierResult> {
    energy_fourier_check_with(m, s, cutoff, EnergyFourierOptions::default())
}

pub fn energy_fourier_check_with(
    m: &DiscreteMeasure,
    s: f64,
    cutoff: i64,
    opt: EnergyFourierOptions,
) -> Result<EnergyFourierResult> {
    let d = m.support.dim() as f64;
    if !(s > 0.0) || s >= d {
        return Err(Error::Parameter(format!("energy exponent {s} outside (0, {d})")));
    }
    let energy = riesz_energy(m, s)?;
    let lattice_sum = fourier_energy_sum(m, s, cutoff, opt)?;
    let ratio = if lattice_sum > 0.0 { energy / lattice_sum } else { f64::NAN };
    Ok(EnergyFourierResult { energy, lattice_sum, ratio, options: opt, flagged: m.support.len() < 2 })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirectionNorm {
    pub index: usize,
    pub angles: Vec<f64>,
    pub norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirectionAverage {
    pub sigma: f64,
    pub mean: f64,
    pub per_direction: Vec<DirectionNorm>,
    pub warning: Option<String>,
}

impl DirectionAverage {
    pub fn to_csv(&self) -> String {
        let three = self.per_direction.first().is_some_and(|r| r.angles.len() == 2);
        let mut out =
            String::from(if three { "thetaIndex,polar,azimuth,norm\n" } else { "thetaIndex,angle,norm\n" });
        for r in &self.per_direction {
            let a: Vec<String> = r.angles.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{},{},{}", r.index, a.join(","), r.norm);
        }
        out
    }
}

/// ‖π_θ μ‖²_{H^σ} at the bin Nyquist cutoff.
pub fn direction_sobolev(m: &DiscreteMeasure, dir: &Direction, sigma: f64) -> Result<f64> {
    let p = project(m, &dir.frame)?;
    let cutoff = ((0.5 / p.bin_width).round() as i64).max(1);
    Ok(sobolev_norm(&transform(&p, cutoff)?, sigma, SobolevKind::Inhomogeneous))
}

/// Monte Carlo average over sampled directions; direction j draws from stream j of the seed.
pub fn direction_average_sobolev(
    m: &DiscreteMeasure,
    sigma: f64,
    directions: usize,
    seed: u64,
    frostman_exponent: Option<f64>,
) -> Result<DirectionAverage> {
    let dim = m.support.dim();
    let n = dim as f64 - 1.0;
    let warning = frostman_exponent
        .filter(|t| sigma >= (t - n) / 2.0)
        .map(|t| format!("sigma {sigma} ≥ (t−n)/2 = {}; the lattice sum may grow with the cutoff", (t - n) / 2.0));
    let dirs: Vec<Direction> = (0..directions)
        .map(|j| Direction::sample(dim, &mut job_rng(seed, j as u64)))
        .collect::<Result<_>>()?;
    let norms: Vec<f64> = if m.weights.is_empty() {
        vec![0.0; directions]
    } else {
        dirs.par_iter().map(|d| direction_sobolev(m, d, sigma)).collect::<Result<_>>()?
    };
    let per_direction: Vec<DirectionNorm> = dirs
        .iter()
        .zip(&norms)
        .enumerate()
        .map(|(index, (d, &norm))| DirectionNorm { index, angles: d.angles(), norm })
        .collect();
    let mean = if directions == 0 { 0.0 } else { pairwise_sum(&norms) / directions as f64 };
    Ok(DirectionAverage { sigma, mean, per_direction, warning })
}
