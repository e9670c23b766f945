use cadnet_core::grid::*;
use cadnet_core::Error;
use proptest::prelude::*;

fn det(row: usize, col: usize, objectness: f32, probs: &[f32], dx: f32, dy: f32, w: f32, h: f32) -> RawDetection {
    RawDetection { row, col, objectness, class_probabilities: probs.to_vec(), dx, dy, width: w, height: h }
}

fn onehot(c: usize, k: usize, p: f32) -> Vec<f32> {
    let mut v = vec![0.0; c];
    v[k] = p;
    v
}

#[test]
fn default_vocabulary_order() {
    let v = ClassVocabulary::default();
    assert_eq!(v.0, ["car", "pedestrian", "van", "truck", "bicycle", "motorbike", "trailer", "bus"]);
    assert_eq!(v.index("trailer"), Some(6));
}

#[test]
fn empty_scene_gives_zero_grid() {
    let g = build_encoder_input(&[], 13, 8).unwrap();
    assert!(g.values().iter().all(|&v| v == 0.0));
    assert_eq!(g.values().len(), 13 * 13 * 8);
}

#[test]
fn channel_is_objectness_times_class_probability() {
    let mut probs = vec![0.0; 8];
    probs[0] = 0.9;
    probs[1] = 0.1;
    let g = build_encoder_input(&[det(2, 3, 0.8, &probs, 0.5, 0.5, 1.0, 1.0)], 13, 8).unwrap();
    assert!((g.get(2, 3, 0) - 0.72).abs() < 1e-6);
    assert!((g.get(2, 3, 1) - 0.08).abs() < 1e-6);
    for k in 2..8 {
        assert_eq!(g.get(2, 3, k), 0.0);
    }
    assert_eq!(g.nonzero().count(), 2);
}

#[test]
fn two_cells_two_nonzero_vectors() {
    let d = [det(0, 0, 0.9, &onehot(4, 1, 1.0), 0.0, 0.0, 1.0, 1.0), det(3, 2, 0.7, &onehot(4, 2, 0.5), 0.0, 0.0, 1.0, 1.0)];
    let g = build_encoder_input(&d, 4, 4).unwrap();
    let cells: std::collections::BTreeSet<(usize, usize)> = g.nonzero().map(|(r, c, _, _)| (r, c)).collect();
    assert_eq!(cells.into_iter().collect::<Vec<_>>(), vec![(0, 0), (3, 2)]);
}

#[test]
fn out_of_range_cell_is_data_error() {
    let e = build_encoder_input(&[det(4, 0, 0.9, &onehot(4, 0, 1.0), 0.0, 0.0, 1.0, 1.0)], 4, 4).unwrap_err();
    assert!(matches!(e, Error::Data(_)));
    let e = build_encoder_input(&[det(0, 0, 0.9, &onehot(3, 0, 1.0), 0.0, 0.0, 1.0, 1.0)], 4, 4).unwrap_err();
    assert!(matches!(e, Error::Data(_)));
}

#[test]
fn grid_rejects_values_outside_unit_interval() {
    assert!(DetectionGrid::from_values(1, 1, vec![1.5]).is_err());
    let mut g = DetectionGrid::empty(2, 2);
    assert!(g.set(0, 0, 0, -0.1).is_err());
    assert!(g.set(2, 0, 0, 0.5).is_err());
}

#[test]
fn nms_single_and_duplicate() {
    let a = det(1, 1, 0.9, &onehot(2, 0, 1.0), 0.5, 0.5, 1.0, 1.0);
    assert_eq!(nms(std::slice::from_ref(&a), 0.5), vec![a.clone()]);
    let b = det(1, 1, 0.8, &onehot(2, 0, 1.0), 0.5, 0.5, 1.0, 1.0);
    assert_eq!(nms(&[b, a.clone()], 0.5), vec![a]);
}

#[test]
fn iou_hand_values() {
    // Unit boxes offset by half a cell: intersection 0.5, union 1.5.
    let a = det(0, 0, 0.9, &[1.0], 0.5, 0.5, 1.0, 1.0);
    let b = det(0, 0, 0.8, &[1.0], 1.0, 0.5, 1.0, 1.0);
    assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-6);
    let c = det(0, 3, 0.8, &[1.0], 0.5, 0.5, 1.0, 1.0);
    assert_eq!(iou(&a, &c), 0.0);
}

// Exhaustive oracle: the greedy keep-set is the unique subset S such that, walking boxes by
// descending score, a box is in S iff it overlaps no earlier member of S of its class.
fn nms_oracle(d: &[RawDetection], thr: f32) -> Vec<usize> {
    let n = d.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].objectness.total_cmp(&d[i].objectness).then(i.cmp(&j)));
    for mask in 0u32..(1 << n) {
        let member = |i: usize| mask & (1 << i) != 0;
        let consistent = order.iter().enumerate().all(|(pos, &i)| {
            let blocked = order[..pos].iter().any(|&j| member(j) && d[j].class() == d[i].class() && iou(&d[j], &d[i]) >= thr);
            member(i) == !blocked
        });
        if consistent {
            return order.iter().copied().filter(|&i| member(i)).collect();
        }
    }
    unreachable!("a consistent keep-set always exists")
}

#[test]
fn nms_three_boxes_matches_oracle() {
    // a-b IoU 1/3, b-c IoU 1/3, a-c IoU 0. At 0.3, b is suppressed by a and c survives.
    let d = vec![
        det(0, 0, 0.9, &[1.0], 0.5, 0.5, 1.0, 1.0),
        det(0, 0, 0.8, &[1.0], 1.0, 0.5, 1.0, 1.0),
        det(0, 1, 0.7, &[1.0], 0.5, 0.5, 1.0, 1.0),
    ];
    let kept = nms(&d, 0.3);
    assert_eq!(kept, vec![d[0].clone(), d[2].clone()]);
    let oracle: Vec<RawDetection> = nms_oracle(&d, 0.3).into_iter().map(|i| d[i].clone()).collect();
    assert_eq!(kept, oracle);
    assert_eq!(nms(&d, 0.5).len(), 3);
}

fn arb_detection(s: usize, c: usize) -> impl Strategy<Value = RawDetection> {
    (0..s, 0..s, 0.0f32..=1.0, proptest::collection::vec(0.0f32..=1.0, c), 0.0f32..1.0, 0.0f32..1.0, 0.2f32..2.0, 0.2f32..2.0)
        .prop_map(|(row, col, objectness, class_probabilities, dx, dy, width, height)| RawDetection {
            row,
            col,
            objectness,
            class_probabilities,
            dx,
            dy,
            width,
            height,
        })
}

proptest! {
    #[test]
    fn nms_agrees_with_oracle(d in proptest::collection::vec(arb_detection(3, 2), 0..8), thr in 0.05f32..0.95) {
        let kept = nms(&d, thr);
        let oracle: Vec<RawDetection> = nms_oracle(&d, thr).into_iter().map(|i| d[i].clone()).collect();
        prop_assert_eq!(&kept, &oracle);
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(a.class() != b.class() || iou(a, b) < thr);
            }
        }
    }

    #[test]
    fn encoder_input_bounded_by_objectness(d in proptest::collection::vec(arb_detection(4, 3), 0..12)) {
        let g = build_encoder_input(&d, 4, 3).unwrap();
        for (r, c, k, v) in g.nonzero() {
            prop_assert!((0.0..=1.0).contains(&v));
            let best = d.iter().filter(|x| x.row == r && x.col == c).map(|x| x.objectness).fold(0.0f32, f32::max);
            prop_assert!(v <= best, "cell ({r},{c},{k}) value {v} above objectness {best}");
        }
    }
}
