use proptest::prelude::*;
use visifrac::dyadic::{DyadicSet, GridCube, ShiftedGrid};
use visifrac::measures::{maximal_function, natural_measure, project, riesz_energy, DiscreteMeasure, Frame};
use visifrac::slicing::{containment_failures, content_cover_of_bins, heavy_set, regularize_cover, thresholded_bins};
use visifrac::spectral::{sobolev_norm, transform, SobolevKind};
use visifrac::visibility::Direction;

fn measure(dim: usize, depth: u32, max_cells: usize) -> impl Strategy<Value = DiscreteMeasure> {
    let side = 1u32 << depth;
    prop::collection::vec((prop::array::uniform3(0..side), 0.05f64..1.0), 1..max_cells).prop_map(move |v| {
        let mut cells: Vec<([u32; 3], f64)> = v
            .into_iter()
            .map(|(mut c, w)| {
                for x in c.iter_mut().skip(dim) {
                    *x = 0;
                }
                (c, w)
            })
            .collect();
        cells.sort_by_key(|c| c.0);
        cells.dedup_by_key(|c| c.0);
        let set = DyadicSet::from_coords(dim, depth, cells.iter().map(|c| c.0)).unwrap();
        let weight = |c: [u32; 3]| cells.iter().find(|x| x.0 == c).unwrap().1;
        let w = set.cells().map(|q| weight(q.coords)).collect();
        DiscreteMeasure::new(&set, w).unwrap()
    })
}

proptest! {
    #[test]
    fn projection_preserves_mass(m in measure(2, 6, 80), phi in 0.0f64..6.3) {
        let p = project(&m, &Direction::from_angle(phi).frame).unwrap();
        prop_assert!((p.total_mass() - m.total_mass).abs() <= 1e-12 * m.total_mass.max(1.0));
    }

    #[test]
    fn maximal_function_dominates_atoms(m in measure(2, 5, 60), phi in 0.0f64..6.3) {
        let p = project(&m, &Direction::from_angle(phi).frame).unwrap();
        let vals = maximal_function(&p, &p.centers());
        for ((_, w), v) in p.bins.iter().zip(vals) {
            prop_assert!(v.value >= w / p.bin_width - 1e-12);
        }
    }

    #[test]
    fn heavy_sets_shrink_as_threshold_grows(m in measure(2, 5, 80), phi in 0.0f64..6.3, base in 0.1f64..4.0) {
        let dir = Direction::from_angle(phi);
        let set = m.support.clone();
        let mut prev: Option<DyadicSet> = None;
        for j in 0..6 {
            let r = heavy_set(&set, &m, &dir.frame, base * (1u64 << j) as f64, 1.5, 0.01).unwrap();
            let f = r.set.unwrap();
            prop_assert!(f.is_subset(&set));
            if let Some(p) = &prev {
                prop_assert!(f.is_subset(p));
            }
            prev = Some(f);
        }
    }

    #[test]
    fn eight_suffices_for_lattice_radii(m in measure(3, 4, 40), polar in 0.0f64..3.14, az in 0.0f64..6.28, k in 0i32..4) {
        let p = project(&m, &Direction::from_spherical(polar, az).frame).unwrap();
        let big_m = 36.0 * m.total_mass * 2f64.powi(k);
        prop_assert!(containment_failures(&p, big_m, 8.0).is_empty());
    }

    #[test]
    fn eight_suffices_on_the_line(m in measure(2, 6, 60), phi in 0.0f64..6.3, k in 0i32..5) {
        let p = project(&m, &Direction::from_angle(phi).frame).unwrap();
        prop_assert!(containment_failures(&p, 6.0 * m.total_mass * 2f64.powi(k), 8.0).is_empty());
    }

    #[test]
    fn regularized_cover_still_covers(m in measure(2, 6, 80), phi in 0.0f64..6.3, k in 0i32..4, t in 0.3f64..1.0) {
        let p = project(&m, &Direction::from_angle(phi).frame).unwrap();
        let bins = thresholded_bins(&p, m.total_mass * 2f64.powi(k));
        let level = 6;
        let cover = content_cover_of_bins(&bins, level, 1, t);
        let r = regularize_cover(&cover, &bins, level, 1, t).unwrap();
        prop_assert!(r.covers || r.degenerate);
        for (i, a) in r.cubes.iter().enumerate() {
            for b in r.cubes.iter().skip(i + 1) {
                let (lo, hi) = if a.level <= b.level { (a, b) } else { (b, a) };
                prop_assert!(hi.k[0] >> (hi.level - lo.level) != lo.k[0]);
            }
        }
    }

    #[test]
    fn spectral_sums_translation_invariant(m in measure(2, 5, 60), phi in 0.0f64..6.3, shift in -3.0f64..3.0, sigma in -0.5f64..0.5) {
        let p = project(&m, &Direction::from_angle(phi).frame).unwrap();
        let a = sobolev_norm(&transform(&p, 32).unwrap(), sigma, SobolevKind::Inhomogeneous);
        let b = sobolev_norm(&transform(&p.translated([shift, 0.0]), 32).unwrap(), sigma, SobolevKind::Inhomogeneous);
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-300));
    }

    #[test]
    fn energy_scales_quadratically(m in measure(2, 4, 30), c in 0.1f64..10.0, s in 0.2f64..1.8) {
        let e = riesz_energy(&m, s).unwrap();
        let f = riesz_energy(&m.scaled(c), s).unwrap();
        prop_assert!(e > 0.0);
        prop_assert!((f - c * c * e).abs() <= 1e-10 * f);
    }
}

#[test]
fn natural_measure_mass() {
    let set = DyadicSet::full(2, 5).unwrap();
    for s in [1.0, 1.5, 2.0] {
        let m = natural_measure(&set, s).unwrap();
        assert!((m.total_mass - 1024.0 * (1.0f64 / 32.0).powf(s)).abs() < 1e-12);
    }
}

#[test]
fn regularize_rejects_nested_cover() {
    let g = ShiftedGrid::standard(1);
    let cover = [GridCube { grid: g, level: 1, k: [0, 0] }, GridCube { grid: g, level: 2, k: [1, 0] }];
    assert!(regularize_cover(&cover, &[[1, 0]], 3, 1, 0.5).is_err());
}

#[test]
fn frame_rejects_dependent_vectors() {
    assert!(Frame::new(3, &[[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).is_err());
}
