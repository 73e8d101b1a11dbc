use super::{DyadicCube, DyadicSet};
use crate::error::{Error, Result};

/// Dyadic content of every occupied tree node, level by level.
///
/// `value = min(side^s, sum over children)`, ties kept at the coarser cube.
#[derive(Clone, Debug)]
pub struct ContentTree {
    pub dim: usize,
    pub depth: u32,
    pub exponent: f64,
    /// `levels[j]` holds (code, content, covered-by-itself) for occupied level-j nodes, sorted by code.
    pub levels: Vec<Vec<(u64, f64, bool)>>,
}

impl ContentTree {
    pub fn build(set: &DyadicSet, s: f64) -> Result<Self> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Parameter(format!("content exponent must be positive, got {s}")));
        }
        let dim = set.dim();
        let depth = set.depth();
        let mut levels: Vec<Vec<(u64, f64, bool)>> = vec![Vec::new(); depth as usize + 1];
        let leaf = (-(depth as f64) * s).exp2();
        levels[depth as usize] = set.codes().iter().map(|&c| (c, leaf, true)).collect();
        for j in (0..depth).rev() {
            let own = (-(j as f64) * s).exp2();
            let below = &levels[j as usize + 1];
            let mut cur: Vec<(u64, f64, bool)> = Vec::new();
            for &(c, v, _) in below {
                let p = c >> dim;
                match cur.last_mut() {
                    Some(last) if last.0 == p => last.1 += v,
                    _ => cur.push((p, v, false)),
                }
            }
            for e in cur.iter_mut() {
                if own <= e.1 {
                    e.1 = own;
                    e.2 = true;
                }
            }
            levels[j as usize] = cur;
        }
        Ok(ContentTree { dim, depth, exponent: s, levels })
    }

    pub fn total(&self) -> f64 {
        self.levels[0].first().map_or(0.0, |e| e.1)
    }

    fn find(&self, cube: &DyadicCube) -> Option<&(u64, f64, bool)> {
        let lv = self.levels.get(cube.level as usize)?;
        let code = cube.code();
        lv.binary_search_by_key(&code, |e| e.0).ok().map(|i| &lv[i])
    }

    /// Content of the part of the set inside `cube` (zero if unoccupied).
    pub fn node_content(&self, cube: &DyadicCube) -> f64 {
        self.find(cube).map_or(0.0, |e| e.1)
    }

    /// The optimal covering the DP selects, coarse cubes first.
    pub fn optimal_cover(&self) -> Vec<DyadicCube> {
        let mut out = Vec::new();
        let mut stack: Vec<DyadicCube> = Vec::new();
        if !self.levels[0].is_empty() {
            stack.push(DyadicCube::root(self.dim));
        }
        while let Some(q) = stack.pop() {
            let Some(e) = self.find(&q) else { continue };
            if e.2 {
                out.push(q);
            } else {
                for ch in q.children().into_iter().rev() {
                    stack.push(ch);
                }
            }
        }
        out
    }
}

/// Minimum of Σ side(Q)^s over coverings of the set by dyadic cubes of any level.
pub fn dyadic_content(set: &DyadicSet, s: f64) -> Result<f64> {
    Ok(ContentTree::build(set, s)?.total())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let full = DyadicSet::full(2, 5).unwrap();
        assert_eq!(dyadic_content(&full, 2.0).unwrap(), 1.0);
        let t = ContentTree::build(&full, 2.0).unwrap();
        assert_eq!(t.optimal_cover(), vec![DyadicCube::root(2)]);
        let one = DyadicSet::from_coords(2, 3, [[3, 5, 0]]).unwrap();
        assert_eq!(dyadic_content(&one, 1.0).unwrap(), 0.125);
        assert!(dyadic_content(&one, 0.0).is_err());
        let empty = DyadicSet::empty(2, 3).unwrap();
        assert_eq!(dyadic_content(&empty, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn cover_sums_to_content() {
        let s = DyadicSet::from_coords(2, 4, [[0, 0, 0], [1, 0, 0], [15, 15, 0], [8, 3, 0]]).unwrap();
        let t = ContentTree::build(&s, 1.3).unwrap();
        let sum: f64 = t.optimal_cover().iter().map(|q| q.side().powf(1.3)).sum();
        assert!((sum - t.total()).abs() < 1e-12);
    }
}
