use proptest::prelude::*;
use visifrac::dyadic::morton::{decode, encode};
use visifrac::dyadic::{dyadic_content, read_dyset, write_dyset, ContentTree, DyadicSet};

fn planar_set(max_depth: u32, max_cells: usize) -> impl Strategy<Value = DyadicSet> {
    (1..=max_depth).prop_flat_map(move |depth| {
        let side = 1u32 << depth;
        prop::collection::vec((0..side, 0..side), 0..max_cells)
            .prop_map(move |v| DyadicSet::from_coords(2, depth, v.into_iter().map(|(x, y)| [x, y, 0])).unwrap())
    })
}

fn set_pair() -> impl Strategy<Value = (DyadicSet, DyadicSet)> {
    (1..=5u32).prop_flat_map(|depth| {
        let side = 1u32 << depth;
        let cells = prop::collection::vec((0..side, 0..side), 0..30);
        (cells.clone(), cells).prop_map(move |(a, b)| {
            let mk = |v: Vec<(u32, u32)>| DyadicSet::from_coords(2, depth, v.into_iter().map(|(x, y)| [x, y, 0])).unwrap();
            (mk(a), mk(b))
        })
    })
}

proptest! {
    #[test]
    fn content_is_monotone_and_subadditive((a, b) in set_pair(), s in 0.2f64..2.0) {
        let u = a.union(&b).unwrap();
        let (ca, cb, cu) = (dyadic_content(&a, s).unwrap(), dyadic_content(&b, s).unwrap(), dyadic_content(&u, s).unwrap());
        prop_assert!(ca <= cu + 1e-12);
        prop_assert!(cb <= cu + 1e-12);
        prop_assert!(cu <= ca + cb + 1e-12);
    }

    #[test]
    fn content_bounded_by_trivial_covers(a in planar_set(6, 60), s in 0.0f64..2.0) {
        let c = dyadic_content(&a, s).unwrap();
        let cells = a.len() as f64 * a.cell_size().powf(s);
        prop_assert!(c <= 1.0 + 1e-12);
        prop_assert!(c <= cells + 1e-12);
    }

    #[test]
    fn optimal_cover_attains_content(a in planar_set(5, 40), s in 0.3f64..2.0) {
        let tree = ContentTree::build(&a, s).unwrap();
        let cover = tree.optimal_cover();
        let sum: f64 = cover.iter().map(|q| q.side().powf(s)).sum();
        prop_assert!((sum - tree.total()).abs() <= 1e-12);
        for c in a.cells() {
            prop_assert!(cover.iter().filter(|q| q.contains(&c)).count() == 1);
        }
    }

    #[test]
    fn dyset_round_trip(a in planar_set(8, 80)) {
        prop_assert_eq!(read_dyset(&write_dyset(&a)).unwrap(), a);
    }

    #[test]
    fn coarsening_is_nested(a in planar_set(7, 80), up in 0u32..7) {
        let j = a.depth().saturating_sub(up);
        let c = a.coarsen(j).unwrap();
        prop_assert!(c.len() <= a.len());
        for q in a.cells() {
            prop_assert!(c.contains(&q.ancestor(j)));
        }
        for p in c.cells() {
            prop_assert!(!a.range_in(&p).is_empty());
        }
    }

    #[test]
    fn morton_round_trip(x in 0u32..(1 << 20), y in 0u32..(1 << 20), z in 0u32..(1 << 20)) {
        prop_assert_eq!(decode(2, encode(2, [x, y, 0])), [x, y, 0]);
        prop_assert_eq!(decode(3, encode(3, [x, y, z])), [x, y, z]);
    }

    #[test]
    fn set_algebra((a, b) in set_pair()) {
        let i = a.intersection(&b).unwrap();
        let d = a.difference(&b).unwrap();
        prop_assert!(i.is_subset(&a) && i.is_subset(&b));
        prop_assert_eq!(i.len() + d.len(), a.len());
        prop_assert_eq!(i.union(&d).unwrap(), a);
    }
}

#[test]
fn full_square_content_is_one() {
    for s in [0.5, 1.0, 2.0] {
        let c = dyadic_content(&DyadicSet::full(2, 6).unwrap(), s).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
    }
}
