use std::path::Path;

use cityproj_core::io::{read_panel, read_panel_from, write_panel};
use cityproj_core::{CellId, Error, GridPanel};
use proptest::prelude::*;

fn panel_5x5() -> GridPanel {
    GridPanel::full(5, 5, vec![2020], vec![(0..25).map(f64::from).collect()]).unwrap()
}

#[test]
fn neighborhood_sizes() {
    let p = panel_5x5();
    assert_eq!(p.neighbors8(CellId::new(2, 2)).unwrap().len(), 8);
    assert_eq!(p.neighbors8(CellId::new(0, 0)).unwrap().len(), 3);
    assert_eq!(p.neighbors8(CellId::new(0, 2)).unwrap().len(), 5);
    assert!(p.neighbors8(CellId::new(5, 0)).is_err());
}

#[test]
fn ring_mean_around_center() {
    let snap = vec![10.0, 20.0, 30.0, 40.0, 999.0, 50.0, 60.0, 70.0, 80.0];
    let p = GridPanel::full(3, 3, vec![2020], vec![snap]).unwrap();
    assert_eq!(p.neighbor_mean_series(CellId::new(1, 1)).unwrap(), vec![45.0]);
}

#[test]
fn corner_mean_and_isolated_cell() {
    let snap = vec![0.0, 1.0, 9.0, 2.0, 3.0, 9.0, 9.0, 9.0, 9.0];
    let p = GridPanel::full(3, 3, vec![2020], vec![snap.clone()]).unwrap();
    assert_eq!(p.neighbor_mean_series(CellId::new(0, 0)).unwrap(), vec![2.0]);

    let mut valid = vec![false; 9];
    valid[4] = true;
    let mut lone = vec![0.0; 9];
    lone[4] = 5.0;
    let p = GridPanel::new(3, 3, vec![2020], vec![lone], valid).unwrap();
    assert!(p.neighbor_mean_series(CellId::new(1, 1)).is_err());
}

#[test]
fn written_panel_reads_back_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("panel.csv");
    let p = GridPanel::full(2, 3, vec![2015, 2020], vec![vec![0.1, 2.0, 3.5, 0.0, 7.25, 1e6], vec![1.0 / 3.0, 2.0, 3.0, 4.0, 5.0, 6.0]]).unwrap();
    write_panel(&p, std::fs::File::create(&path).unwrap()).unwrap();
    let back = read_panel(&path, None).unwrap();
    assert_eq!(back.snapshots(), p.snapshots());
    assert_eq!(back.years(), p.years());
}

#[test]
fn negative_population_names_its_line() {
    let text = "row,col,year,pop\n0,0,2020,1\n0,1,2020,-5\n";
    match read_panel_from(text.as_bytes(), Path::new("p.csv"), None) {
        Err(Error::Schema { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

fn arb_mask() -> impl Strategy<Value = (usize, usize, Vec<bool>)> {
    (1usize..8, 1usize..8).prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(prop::bool::weighted(0.8), r * c)))
}

proptest! {
    #[test]
    fn neighbors_are_symmetric((r, c, valid) in arb_mask()) {
        let snaps = vec![valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()];
        let p = GridPanel::new(r, c, vec![2020], snaps, valid).unwrap();
        for a in p.valid_cells() {
            for b in p.neighbors8(a).unwrap() {
                prop_assert!(p.is_valid(b));
                prop_assert!(p.neighbors8(b).unwrap().contains(&a));
            }
        }
    }

    #[test]
    fn padding_with_invalid_cells_keeps_neighbor_means(
        (r, c, vals) in (1usize..6, 1usize..6).prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(0.0f64..1e4, r * c * 2)))
    ) {
        let n = r * c;
        let inner = GridPanel::full(r, c, vec![2015, 2020], vec![vals[..n].to_vec(), vals[n..].to_vec()]).unwrap();
        let (pr, pc) = (r + 3, c + 2);
        let pad = |s: &[f64]| {
            let mut out = vec![0.0; pr * pc];
            for i in 0..r {
                for j in 0..c {
                    out[(i + 2) * pc + j + 1] = s[i * c + j];
                }
            }
            out
        };
        let mut valid = vec![false; pr * pc];
        for i in 0..r {
            for j in 0..c {
                valid[(i + 2) * pc + j + 1] = true;
            }
        }
        let outer = GridPanel::new(pr, pc, vec![2015, 2020], vec![pad(&vals[..n]), pad(&vals[n..])], valid).unwrap();
        for i in 0..r {
            for j in 0..c {
                let a = inner.neighbor_mean_series(CellId::new(i, j)).ok();
                let b = outer.neighbor_mean_series(CellId::new(i + 2, j + 1)).ok();
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn panel_round_trip_is_bit_exact(
        (r, c, vals) in (1usize..5, 1usize..5).prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(prop_oneof![0.0f64..1.0, 0.0f64..1e9, Just(0.0)], r * c * 3)))
    ) {
        let n = r * c;
        let snaps: Vec<Vec<f64>> = vals.chunks(n).map(|s| s.to_vec()).collect();
        let p = GridPanel::full(r, c, vec![2010, 2015, 2020], snaps).unwrap();
        let mut buf = Vec::new();
        write_panel(&p, &mut buf).unwrap();
        let back = read_panel_from(buf.as_slice(), Path::new("mem"), None).unwrap();
        prop_assert_eq!(back.snapshots(), p.snapshots());
        let mut again = Vec::new();
        write_panel(&back, &mut again).unwrap();
        prop_assert_eq!(buf, again);
    }
}
