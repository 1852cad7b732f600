use adatrans::ctc::{
    collapse, ctc_greedy_boundaries, ctc_head_forward, ctc_loss, forward_backward, greedy_path, min_frames, CtcPath,
    CtcPosterior, SourceTranscription,
};
use adatrans::tensor::layers::init_linear;
use adatrans::tensor::{ParamStore, Tensor};
use adatrans::Error;
use proptest::prelude::*;

const A: usize = 0;
const B: usize = 1;

/// Sums path probabilities directly, merging repeats and dropping blanks by
/// hand; shares no code with the library.
fn enumerate_paths(rows: &[Vec<f64>], target: &[usize]) -> f64 {
    let t = rows.len();
    let c = rows[0].len();
    let blank = c - 1;
    let mut total = 0.0;
    let mut path = vec![0usize; t];
    loop {
        let mut out = Vec::new();
        let mut prev = None;
        for &l in &path {
            if Some(l) != prev && l != blank {
                out.push(l);
            }
            prev = Some(l);
        }
        if out == target {
            total += path.iter().enumerate().map(|(f, &l)| rows[f][l]).product::<f64>();
        }
        let mut i = 0;
        while i < t {
            path[i] += 1;
            if path[i] < c {
                break;
            }
            path[i] = 0;
            i += 1;
        }
        if i == t {
            return total;
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
    (1usize..=3, 1usize..=3).prop_flat_map(|(v, z)| {
        let target = proptest::collection::vec(0..v, z);
        (Just(v), target).prop_flat_map(|(v, target)| {
            let lo = min_frames(&target);
            (lo..=6).prop_flat_map(move |t| {
                let target = target.clone();
                proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, v + 1), t)
                    .prop_map(move |logits| (logits.iter().map(|r| softmax(r)).collect(), target.clone()))
            })
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn loss_matches_path_enumeration((rows, target) in instance()) {
        let post = CtcPosterior::from_rows(&rows).unwrap();
        let z = SourceTranscription::new(target.clone(), rows[0].len() - 1).unwrap();
        let loss = ctc_loss(&post, &z).unwrap().loss;
        let oracle = -enumerate_paths(&rows, &target).ln();
        prop_assert!((loss - oracle).abs() < 1e-6, "loss {} oracle {}", loss, oracle);
    }

    #[test]
    fn greedy_collapse_has_no_blank_or_run_duplicates(rows in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 4), 1..12)) {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| { let s: f64 = r.iter().sum(); r.iter().map(|x| x / s).collect() }).collect();
        let post = CtcPosterior::from_rows(&rows).unwrap();
        let path = greedy_path(&post);
        let out = collapse(&path);
        prop_assert!(out.iter().all(|&l| l != post.blank()));
        let runs = path.labels.windows(2).filter(|w| w[0] != w[1]).count() + 1;
        prop_assert!(out.len() <= runs);
    }

    #[test]
    fn trailing_blank_frame_keeps_target_reachable((rows, target) in instance()) {
        let mut longer = rows.clone();
        let c = rows[0].len();
        let mut blank_row = vec![0.0; c];
        blank_row[c - 1] = 1.0;
        longer.push(blank_row);
        prop_assert!(enumerate_paths(&longer, &target) > 0.0);
        let before = enumerate_paths(&rows, &target);
        prop_assert!((enumerate_paths(&longer, &target) - before).abs() < 1e-12);
    }
}

#[test]
fn two_frame_example() {
    let post = CtcPosterior::from_rows(&[[0.6, 0.4], [0.5, 0.5]]).unwrap();
    let z = SourceTranscription::new(vec![A], 1).unwrap();
    let loss = ctc_loss(&post, &z).unwrap().loss;
    assert!((loss + 0.8f64.ln()).abs() < 1e-12);
    assert!((loss - 0.22314).abs() < 1e-5);
}

#[test]
fn single_frame_single_token() {
    let post = CtcPosterior::from_rows(&[[0.7, 0.1, 0.2]]).unwrap();
    let z = SourceTranscription::new(vec![B], 2).unwrap();
    assert!((ctc_loss(&post, &z).unwrap().loss + 0.1f64.ln()).abs() < 1e-12);
}

#[test]
fn too_short_input_is_an_admissibility_error() {
    let post = CtcPosterior::from_rows(&[[0.5, 0.5], [0.5, 0.5]]).unwrap();
    let z = SourceTranscription::new(vec![A, A], 1).unwrap();
    assert!(matches!(ctc_loss(&post, &z), Err(Error::Admissibility { .. })));
    assert_eq!(min_frames(&[A, A, B]), 4);
}

#[test]
fn transcription_rejects_empty_and_out_of_vocabulary() {
    assert!(SourceTranscription::new(vec![], 3).is_err());
    assert!(SourceTranscription::new(vec![3], 3).is_err());
}

#[test]
fn posterior_rows_must_be_distributions() {
    assert!(CtcPosterior::from_rows(&[[0.5, 0.6]]).is_err());
    assert!(CtcPosterior::from_rows(&[[1.2, -0.2]]).is_err());
}

#[test]
fn logit_gradient_matches_finite_differences() {
    let logits = [0.3, -0.2, 0.5, 1.1, 0.0, -0.7, 0.4, 0.2, -0.1, 0.8, -0.4, 0.6];
    let (t, c) = (4, 3);
    let target = [A, B];
    let lp = |x: &[f64]| -> Vec<f64> { x.chunks(c).flat_map(|r| { let s = softmax(r); s.into_iter().map(f64::ln).collect::<Vec<_>>() }).collect() };
    let loss_of = |x: &[f64]| forward_backward(&lp(x), t, c, &target).unwrap().0;

    // Through log_softmax, d loss / d logit = softmax - occupancy.
    let (_, occ) = forward_backward(&lp(&logits), t, c, &target).unwrap();
    let probs: Vec<f64> = logits.chunks(c).flat_map(softmax).collect();
    let eps = 1e-6;
    for i in 0..logits.len() {
        let mut p = logits;
        p[i] += eps;
        let mut m = logits;
        m[i] -= eps;
        let numeric = (loss_of(&p) - loss_of(&m)) / (2.0 * eps);
        let analytic = probs[i] - occ[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        assert!(rel < 1e-4, "entry {i}: analytic {analytic} numeric {numeric}");
    }
}

#[test]
fn collapse_examples() {
    let bl = 2;
    assert_eq!(collapse(&CtcPath::new(vec![A, A, bl, B, B, bl, B], bl)), vec![A, B, B]);
    assert!(collapse(&CtcPath::new(vec![bl, bl, bl], bl)).is_empty());
    assert_eq!(collapse(&CtcPath::new(vec![A], bl)), vec![A]);
}

#[test]
fn greedy_path_tie_breaks_toward_lower_ids() {
    let post = CtcPosterior::from_rows(&[[1.0 / 3.0; 3], [0.0, 0.0, 1.0], [0.1, 0.9, 0.0]]).unwrap();
    assert_eq!(greedy_path(&post).labels, vec![A, 2, B]);
}

#[test]
fn greedy_path_reproduces_a_mid_segment_flip() {
    // One spoken token whose argmax briefly flips to another label.
    let post = CtcPosterior::from_rows(&[[0.6, 0.3, 0.1], [0.4, 0.5, 0.1], [0.7, 0.2, 0.1], [0.1, 0.1, 0.8]]).unwrap();
    let path = greedy_path(&post);
    assert_eq!(path.labels, vec![A, B, A, 2]);
    assert_eq!(collapse(&path), vec![A, B, A]);
}

#[test]
fn greedy_boundary_examples() {
    let bl = 2;
    let seg = ctc_greedy_boundaries(&CtcPath::new(vec![A, A, bl, B, B], bl)).unwrap();
    assert_eq!(seg.boundary_frames, vec![1, 4]);
    let seg = ctc_greedy_boundaries(&CtcPath::new(vec![bl, bl, bl], bl)).unwrap();
    assert!(seg.boundary_frames.is_empty());
    assert_eq!(seg.spans, vec![(0, 2)]);
    let seg = ctc_greedy_boundaries(&CtcPath::new(vec![A, B], bl)).unwrap();
    assert_eq!(seg.boundary_frames, vec![0, 1]);
}

#[test]
fn zero_head_gives_uniform_rows() {
    let mut store = ParamStore::new();
    init_linear(&mut store, 1, "ctc", 4, 5);
    for (_, t) in store.iter_mut() {
        t.data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let states = Tensor::filled(vec![3, 4], 0.7);
    let post = ctc_head_forward(&states, &store).unwrap();
    assert!(post.probs().data().iter().all(|&p| (p - 0.2).abs() < 1e-12));
}

#[test]
fn posterior_csv_lists_frame_then_probabilities() {
    let post = CtcPosterior::from_rows(&[[0.25, 0.75]]).unwrap();
    let mut buf = Vec::new();
    post.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("0,0.25,0.75"));
}
