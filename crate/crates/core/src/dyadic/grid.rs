//! Dyadic grids on R^n translated by e/3, e ∈ {0,1}^n.

use crate::error::{Error, Result};
use crate::rng::job_rng;
use rand::Rng;
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ShiftedGrid {
    pub dim: usize,
    pub e: [u8; 2],
}

impl ShiftedGrid {
    pub fn standard(dim: usize) -> Self {
        ShiftedGrid { dim, e: [0, 0] }
    }

    /// All 2^n grids in lexicographic order of e.
    pub fn all(dim: usize) -> Vec<Self> {
        match dim {
            1 => vec![ShiftedGrid { dim, e: [0, 0] }, ShiftedGrid { dim, e: [1, 0] }],
            _ => {
                let mut v = Vec::new();
                for a in 0..2u8 {
                    for b in 0..2u8 {
                        v.push(ShiftedGrid { dim, e: [a, b] });
                    }
                }
                v
            }
        }
    }

    pub fn shift(&self, i: usize) -> f64 {
        self.e[i] as f64 / 3.0
    }

    /// The level-`level` cube of this grid containing `x`.
    pub fn cube_at(&self, x: &[f64], level: i32) -> GridCube {
        let side = (-(level as f64)).exp2();
        let mut k = [0i64; 2];
        for i in 0..self.dim {
            k[i] = ((x[i] - self.shift(i)) / side).floor() as i64;
        }
        GridCube { grid: *self, level, k }
    }
}

/// Half-open cube Π [e_i/3 + k_i·2^{-level}, e_i/3 + (k_i+1)·2^{-level}).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct GridCube {
    pub grid: ShiftedGrid,
    pub level: i32,
    pub k: [i64; 2],
}

impl GridCube {
    pub fn side(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    pub fn lower(&self, i: usize) -> f64 {
        self.grid.shift(i) + self.k[i] as f64 * self.side()
    }

    pub fn upper(&self, i: usize) -> f64 {
        self.grid.shift(i) + (self.k[i] + 1) as f64 * self.side()
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        (0..self.grid.dim).all(|i| self.lower(i) <= x[i] && x[i] < self.upper(i))
    }

    pub fn parent(&self) -> GridCube {
        let mut k = self.k;
        for v in k.iter_mut().take(self.grid.dim) {
            *v = v.div_euclid(2);
        }
        GridCube { grid: self.grid, level: self.level - 1, k }
    }

    /// Whether the open ball B(x, r) lies inside this cube.
    pub fn contains_ball(&self, x: &[f64], r: f64) -> bool {
        (0..self.grid.dim).all(|i| self.lower(i) <= x[i] - r && x[i] + r <= self.upper(i))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CoveringCube {
    pub grid: ShiftedGrid,
    pub cube: GridCube,
    pub side: f64,
}

/// Coarsest level searched; cubes of side 4 already contain every admissible ball centred in [0,1)^n.
const COARSEST: i32 = -2;

/// Smallest cube of the shifted grids containing the open ball B(x, r) with side ≤ c·r.
///
/// Levels are scanned fine to coarse; at a level, e is scanned lexicographically.
pub fn find_covering_cube(x: &[f64], r: f64, c: f64) -> Result<Option<CoveringCube>> {
    let n = x.len();
    if !(1..=2).contains(&n) {
        return Err(Error::Parameter(format!("covering search needs n in 1..=2, got {n}")));
    }
    if !(r > 0.0) || r >= 1.0 / 3.0 {
        return Err(Error::Domain(format!("radius {r} outside (0, 1/3)")));
    }
    let finest = (1.0 / (2.0 * r)).log2().floor() as i32;
    for level in (COARSEST..=finest).rev() {
        let side = (-(level as f64)).exp2();
        if side > c * r {
            return Ok(None);
        }
        for g in ShiftedGrid::all(n) {
            let q = g.cube_at(x, level);
            if q.contains_ball(x, r) {
                return Ok(Some(CoveringCube { grid: g, cube: q, side }));
            }
        }
    }
    Ok(None)
}

/// Worst ratio side(Q)/r over the given samples, with no cap on the side.
pub fn calibrate_on_samples(samples: &[(Vec<f64>, f64)]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (x, r) in samples {
        match find_covering_cube(x, *r, f64::INFINITY)? {
            Some(cc) => worst = worst.max(cc.side / r),
            None => {
                return Err(Error::Domain(format!("no shifted-grid cube contains B({x:?}, {r})")));
            }
        }
    }
    Ok(worst)
}

/// Radii are drawn log-uniformly from [2^-14, 1/6); centres uniformly from [0,1)^n.
pub fn calibration_samples(n: usize, trials: usize, seed: u64) -> Vec<(Vec<f64>, f64)> {
    let mut rng = job_rng(seed, 0);
    let (lo, hi) = ((2f64).powi(-14).ln(), (1.0f64 / 6.0).ln());
    (0..trials)
        .map(|_| {
            let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let r = (lo + (hi - lo) * rng.gen::<f64>()).exp();
            (x, r)
        })
        .collect()
}

/// Empirical constant c* = max over sampled balls of the best achievable side/r.
pub fn calibrate_grid_constant(n: usize, trials: usize, seed: u64) -> Result<f64> {
    if !(1..=2).contains(&n) || trials == 0 {
        return Err(Error::Parameter("calibration needs n in 1..=2 and trials ≥ 1".into()));
    }
    calibrate_on_samples(&calibration_samples(n, trials, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_examples() {
        let c = find_covering_cube(&[0.1], 0.05, 6.0).unwrap().unwrap();
        assert_eq!(c.grid.e[0], 0);
        assert_eq!((c.cube.lower(0), c.cube.upper(0)), (0.0, 0.25));
        let c = find_covering_cube(&[0.5], 0.1, 6.0).unwrap().unwrap();
        assert_eq!(c.grid.e[0], 1);
        assert!((c.cube.lower(0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((c.cube.upper(0) - 5.0 / 6.0).abs() < 1e-15);
        let r = (2f64).powi(-10) / 4.0;
        let c = find_covering_cube(&[1.0 / 3.0], r, 6.0).unwrap().unwrap();
        assert_eq!((c.grid.e[0], c.cube.level), (0, 10));
        assert!(find_covering_cube(&[0.5], 0.1, 4.0).unwrap().is_none());
        assert!(find_covering_cube(&[0.5], 0.34, 6.0).is_err());
    }

    #[test]
    fn fixed_sample_calibration() {
        assert_eq!(calibrate_on_samples(&[(vec![0.5], 0.1)]).unwrap(), 5.0);
    }
}
