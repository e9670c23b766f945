use cadnet_core::grid::CellRef;
use cadnet_core::scoring::*;
use proptest::prelude::*;

fn report(id: u64, x: &[f32], xh: &[f32], s: usize, c: usize) -> AnomalyReport {
    score(id, x, xh, s, c, DEFAULT_PRESENCE_FLOOR, DEFAULT_THRESHOLD).unwrap()
}

#[test]
fn perfect_reconstruction_flags_nothing() {
    let x = [0.0, 0.9, 0.7, 0.0];
    assert!(report(0, &x, &x, 1, 4).flagged.is_empty());
}

#[test]
fn threshold_arithmetic() {
    let x = [1.0, 0.0, 0.0, 0.0];
    let xh = [0.3, 0.0, 0.0, 0.0];
    let r = report(7, &x, &xh, 1, 4);
    assert_eq!(r.flagged.len(), 1);
    assert_eq!(r.flagged[0].cell, CellRef::new(0, 0, 0));
    assert!((r.flagged[0].error - 0.7).abs() < 1e-6);
    assert_eq!(r.sample_id, 7);
    assert_eq!(r.threshold, 0.6);
    // error 0.5 does not clear 0.6
    assert!(report(0, &x, &[0.5, 0.0, 0.0, 0.0], 1, 4).flagged.is_empty());
}

#[test]
fn presence_gate() {
    let x = vec![0.0; 2 * 2 * 3];
    let xh = vec![0.99; 2 * 2 * 3];
    assert!(report(0, &x, &xh, 2, 3).flagged.is_empty());
    // present below the floor is not flagged either
    let mut x = vec![0.0; 12];
    x[5] = 0.45;
    assert!(score(0, &x, &vec![0.0; 12], 2, 3, 0.5, 0.4).unwrap().flagged.is_empty());
}

#[test]
fn flag_coordinates_follow_grid_layout() {
    let (s, c) = (3, 2);
    let mut x = vec![0.0; s * s * c];
    let i = (2 * s + 1) * c + 1;
    x[i] = 0.95;
    let r = report(0, &x, &vec![0.0; s * s * c], s, c);
    assert_eq!(r.flagged_cells().collect::<Vec<_>>(), vec![CellRef::new(2, 1, 1)]);
}

#[test]
fn threshold_one_never_flags() {
    let x = vec![1.0; 8];
    let xh = vec![1e-6; 8];
    assert!(score(0, &x, &xh, 2, 2, 0.5, 1.0).unwrap().flagged.is_empty());
}

#[test]
fn shape_mismatch_is_error() {
    assert!(score(0, &[0.0; 4], &[0.0; 3], 1, 4, 0.5, 0.6).is_err());
}

#[test]
fn reconstruction_error_examples() {
    let x = vec![0.2f32, 0.8, 0.0];
    assert_eq!(reconstruction_error([(x.as_slice(), x.as_slice())]).unwrap(), 0.0);
    let xh = vec![0.2f32, 0.3, 0.0];
    let e = reconstruction_error([(x.as_slice(), xh.as_slice())]).unwrap();
    assert!((e - 0.5).abs() < 1e-7);
    let empty: Vec<(&[f32], &[f32])> = Vec::new();
    assert!(reconstruction_error(empty).is_err());
}

#[test]
fn accuracy_extremes() {
    let gt = vec![vec![CellRef::new(0, 0, 0)], vec![CellRef::new(0, 0, 1)]];
    let hit = |id, k: usize| {
        let mut x = [0.0f32; 2];
        x[k] = 1.0;
        report(id, &x, &[0.0, 0.0], 1, 2)
    };
    let a = detection_accuracy(&[hit(0, 0), hit(1, 1)], &gt).unwrap();
    assert_eq!((a.accuracy, a.false_positive_rate), (100.0, 0.0));
    let none = report(0, &[0.0, 0.0], &[0.0, 0.0], 1, 2);
    let a = detection_accuracy(&[none.clone(), none], &gt).unwrap();
    assert_eq!(a.accuracy, 0.0);
    assert!(detection_accuracy(&[], &[]).is_err());
}

#[test]
fn hand_counted_accuracy() {
    // Four 2x2x1 samples. Ground truth: one triple each, except sample 3 with two.
    let gt = vec![
        vec![CellRef::new(0, 0, 0)],
        vec![CellRef::new(1, 1, 0)],
        vec![CellRef::new(0, 1, 0)],
        vec![CellRef::new(1, 0, 0), CellRef::new(0, 0, 0)],
    ];
    let xs: [[f32; 4]; 4] = [[0.9, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.9], [0.9, 0.9, 0.0, 0.0], [0.9, 0.0, 0.9, 0.0]];
    let xhs: [[f32; 4]; 4] = [
        [0.1, 0.0, 0.0, 0.0], // hit
        [0.0, 0.0, 0.0, 0.8], // miss
        [0.1, 0.1, 0.0, 0.0], // hit plus one false flag at (0,0)
        [0.1, 0.0, 0.8, 0.0], // one of two
    ];
    let reports: Vec<AnomalyReport> = (0..4).map(|i| report(i as u64, &xs[i], &xhs[i], 2, 1)).collect();
    let a = detection_accuracy(&reports, &gt).unwrap();
    // 3 hits over 5 injected; 4 flags of which 1 false.
    assert_eq!((a.hits, a.injected, a.flags), (3, 5, 4));
    assert!((a.accuracy - 60.0).abs() < 1e-12);
    assert!((a.false_positive_rate - 0.25).abs() < 1e-12);
}

#[test]
fn summary_table_layout() {
    let row = |v: &str, e: Option<f64>| SummaryRow {
        variant: v.into(),
        reconstruction_error: e,
        point_accuracy: e.map(|_| 90.0),
        point_fpr: e.map(|_| 0.01),
        contextual_accuracy: e.map(|_| 80.0),
        failure: if e.is_none() { Some("diverged".into()) } else { None },
    };
    let s = EvalSummary { rows: vec![row("full", Some(0.01)), row("wo-skip", None)] };
    let t = s.to_table();
    let lines: Vec<&str> = t.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[2].contains("FAILED"));
    assert!(s.row("full").is_some() && s.row("nope").is_none());
}

proptest! {
    #[test]
    fn raising_threshold_shrinks_flag_set(
        pairs in proptest::collection::vec((0.0f32..=1.0, 0.0f32..=1.0), 18),
        floor in 0.0f64..1.0,
        t1 in 0.0f64..1.0,
        dt in 0.0f64..1.0,
    ) {
        let x: Vec<f32> = pairs.iter().map(|p| p.0).collect();
        let xh: Vec<f32> = pairs.iter().map(|p| p.1).collect();
        let lo = score(0, &x, &xh, 3, 2, floor, t1).unwrap();
        let hi = score(0, &x, &xh, 3, 2, floor, t1 + dt).unwrap();
        let lo: std::collections::BTreeSet<CellRef> = lo.flagged_cells().collect();
        for c in hi.flagged_cells() {
            prop_assert!(lo.contains(&c));
        }
        // flagged cells satisfy the definition
        for f in score(0, &x, &xh, 3, 2, floor, t1).unwrap().flagged {
            let i = (f.cell.row as usize * 3 + f.cell.col as usize) * 2 + f.cell.class as usize;
            prop_assert!(x[i] as f64 >= floor && (x[i] - xh[i]) as f64 > t1);
        }
    }

    #[test]
    fn dataset_error_ignores_order(grids in proptest::collection::vec(proptest::collection::vec((0.0f32..=1.0, 0.0f32..=1.0), 4), 1..10), seed in 0u64..100) {
        let split = |g: &Vec<(f32, f32)>| (g.iter().map(|p| p.0).collect::<Vec<_>>(), g.iter().map(|p| p.1).collect::<Vec<_>>());
        let mut data: Vec<(Vec<f32>, Vec<f32>)> = grids.iter().map(split).collect();
        let e1 = reconstruction_error(data.iter().map(|(a, b)| (a.as_slice(), b.as_slice()))).unwrap();
        let k = (seed as usize) % data.len();
        data.rotate_left(k);
        data.reverse();
        let e2 = reconstruction_error(data.iter().map(|(a, b)| (a.as_slice(), b.as_slice()))).unwrap();
        prop_assert!((e1 - e2).abs() <= 1e-9 * e1.max(1.0));
    }

    #[test]
    fn accuracy_in_range(flags in proptest::collection::vec(proptest::bool::ANY, 1..20)) {
        let gt: Vec<Vec<CellRef>> = flags.iter().map(|_| vec![CellRef::new(0, 0, 0)]).collect();
        let reports: Vec<AnomalyReport> = flags
            .iter()
            .enumerate()
            .map(|(i, &f)| report(i as u64, &[1.0, 1.0], if f { &[0.0, 0.0] } else { &[1.0, 1.0] }, 1, 2))
            .collect();
        let a = detection_accuracy(&reports, &gt).unwrap();
        prop_assert!((0.0..=100.0).contains(&a.accuracy));
        prop_assert!((0.0..=1.0).contains(&a.false_positive_rate));
    }
}
