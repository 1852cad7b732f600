use std::collections::HashMap;
use std::time::Duration;

use adatrans::data::{synth_corpus, Corpus, SynthSpec};
use adatrans::eval::{
    attention_entropy, boundary_prf_frames, corpus_bleu, diff_le_k, edit_distance, efficiency_bench, evaluate_corpus,
    median, normalize_variants, parse_grid, positional_accuracy, row_entropy, threshold_sweep, token_accuracy,
    BenchConfig, BoundaryPrf, EvalOptions, ProbabilityHistogram, ShrinkQualityReport, EVAL_REPORT_FILES,
    SUMMARY_HEADER,
};
use adatrans::model::{AdaTrans, ModelConfig, ShrinkerKind, Stage};
use adatrans::parallel::Execution;
use adatrans::tensor::layers::subsampled_len;
use adatrans::tensor::Tensor;
use proptest::prelude::*;

fn tiny_config(shrinker: ShrinkerKind) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 2,
        ffn_dim: 32,
        acoustic_layers: 1,
        semantic_layers: 1,
        decoder_layers: 1,
        max_decode_len: 12,
        shrinker,
        ..ModelConfig::default()
    }
}

fn tiny_corpus() -> Corpus {
    let spec = SynthSpec {
        train_utterances: 4,
        test_utterances: 12,
        ..SynthSpec::default()
    };
    synth_corpus(&spec).unwrap().test
}

/// Straightforward clipped n-gram precision, written independently of the
/// library version.
fn reference_bleu(hyps: &[Vec<usize>], refs: &[Vec<usize>], max_n: usize) -> f64 {
    let count = |s: &[usize], n: usize| {
        let mut m: HashMap<Vec<usize>, usize> = HashMap::new();
        for i in 0..(s.len() + 1).saturating_sub(n) {
            *m.entry(s[i..i + n].to_vec()).or_default() += 1;
        }
        m
    };
    let mut logp = 0.0;
    for n in 1..=max_n {
        let (mut hit, mut tot) = (0usize, 0usize);
        for (h, r) in hyps.iter().zip(refs) {
            let rc = count(r, n);
            for (g, c) in count(h, n) {
                hit += c.min(*rc.get(&g).unwrap_or(&0));
                tot += c;
            }
        }
        if n == 1 && hit == 0 {
            return 0.0;
        }
        let p = if n == 1 { hit as f64 / tot as f64 } else { (hit + 1) as f64 / (tot + 1) as f64 };
        logp += p.ln() / max_n as f64;
    }
    let h: usize = hyps.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    let bp = if h > r { 1.0 } else { (1.0 - r as f64 / h as f64).exp() };
    100.0 * bp * logp.exp()
}

#[test]
fn diff_examples() {
    assert!((diff_le_k(&[5, 7, 10], &[5, 9, 13], 2).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(diff_le_k(&[5, 7, 10], &[5, 9, 13], 0).unwrap(), 1.0 / 3.0);
    assert_eq!(diff_le_k(&[4, 4], &[4, 4], 0).unwrap(), 1.0);
    assert!(diff_le_k(&[1], &[1, 2], 0).is_err());
    let report = ShrinkQualityReport::new(&[5, 7, 10], &[5, 9, 13]).unwrap();
    assert_eq!(report.diffs, vec![0, 2, 3]);
    assert!((report.mean_diff - 5.0 / 3.0).abs() < 1e-12);
    assert!((report.diff_le_2() - 2.0 / 3.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn diff_fraction_grows_with_k(
        pairs in proptest::collection::vec((0usize..20, 0usize..20), 1..30),
    ) {
        let (s, r): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let mut prev = 0.0;
        for k in 0..25 {
            let v = diff_le_k(&s, &r, k).unwrap();
            prop_assert!(v >= prev && v <= 1.0);
            prev = v;
        }
        prop_assert_eq!(prev, 1.0);
    }

    #[test]
    fn bleu_matches_independent_counter(
        pairs in proptest::collection::vec(
            (proptest::collection::vec(0usize..4, 0..8), proptest::collection::vec(0usize..4, 1..8)),
            1..6,
        ),
    ) {
        let (h, r): (Vec<Vec<usize>>, Vec<Vec<usize>>) = pairs.into_iter().unzip();
        let got = corpus_bleu(&h, &r, 4).unwrap();
        prop_assert!((got - reference_bleu(&h, &r, 4)).abs() < 1e-9);
        prop_assert!((0.0..=100.0 + 1e-9).contains(&got));
    }

    #[test]
    fn bleu_ignores_sentence_order(
        pairs in proptest::collection::vec(
            (proptest::collection::vec(0usize..5, 1..8), proptest::collection::vec(0usize..5, 1..8)),
            2..6,
        ),
    ) {
        let (h, r): (Vec<Vec<usize>>, Vec<Vec<usize>>) = pairs.iter().cloned().unzip();
        let (hr, rr): (Vec<Vec<usize>>, Vec<Vec<usize>>) = pairs.into_iter().rev().unzip();
        prop_assert!((corpus_bleu(&h, &r, 4).unwrap() - corpus_bleu(&hr, &rr, 4).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn entropy_is_bounded_by_log_width(row in proptest::collection::vec(0.0f64..1.0, 1..12)) {
        let total: f64 = row.iter().sum();
        prop_assume!(total > 1e-3);
        let p: Vec<f64> = row.iter().map(|v| v / total).collect();
        let h = row_entropy(&p);
        prop_assert!(h >= -1e-12 && h <= (p.len() as f64).ln() + 1e-9);
    }
}

#[test]
fn boundary_prf_examples() {
    let prf = boundary_prf_frames(&[3, 9], &[2, 4], 1);
    assert_eq!((prf.precision, prf.recall, prf.f1), (0.5, 0.5, 0.5));
    let exact = boundary_prf_frames(&[2, 4], &[2, 4], 1);
    assert_eq!(exact.f1, 1.0);
    let none = boundary_prf_frames(&[], &[2, 4], 1);
    assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
    // One prediction cannot claim two gold boundaries.
    let greedy = boundary_prf_frames(&[3], &[2, 4], 1);
    assert_eq!(greedy.matched, 1);
    let pooled = BoundaryPrf::pooled(&[prf, exact]);
    assert_eq!((pooled.matched, pooled.predicted, pooled.gold), (3, 4, 4));
    assert_eq!(pooled.f1, 0.75);
}

#[test]
fn bleu_hand_example() {
    let (a, b, c, d, e) = (1, 2, 3, 4, 5);
    let got = corpus_bleu(&[vec![a, b, c, d]], &[vec![a, b, c, e]], 4).unwrap();
    let expect = 100.0 * (0.75f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25);
    assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
    assert!((got - 65.8037).abs() < 1e-3);
}

#[test]
fn bleu_limits() {
    let refs = vec![vec![1, 2, 3, 4, 5], vec![6, 7, 8]];
    assert!((corpus_bleu(&refs, &refs, 4).unwrap() - 100.0).abs() < 1e-9);
    assert_eq!(corpus_bleu(&[vec![9, 9], vec![10]], &refs, 4).unwrap(), 0.0);
    assert_eq!(corpus_bleu(&[vec![], vec![]], &refs, 4).unwrap(), 0.0);
    // A short hypothesis is penalized by brevity.
    let short = corpus_bleu(&[vec![1, 2, 3, 4], vec![6, 7, 8]], &refs, 4).unwrap();
    assert!((short - 100.0 * (1.0f64 - 8.0 / 7.0).exp()).abs() < 1e-9);
    assert!(corpus_bleu(&refs, &refs[..1], 4).is_err());
    assert!(corpus_bleu(&refs, &refs, 0).is_err());
}

#[test]
fn edit_distance_and_accuracy() {
    assert_eq!(edit_distance(&[1, 2, 3], &[1, 2, 3]), 0);
    assert_eq!(edit_distance(&[], &[1, 2]), 2);
    assert_eq!(edit_distance(&[1, 2, 3], &[2, 3]), 1);
    assert_eq!(edit_distance(&[1, 2, 3, 4], &[4, 3, 2, 1]), 4);
    let hyps = vec![vec![2, 3, 4], vec![9]];
    let refs = vec![vec![1, 2, 3, 4], vec![9]];
    assert!((token_accuracy(&hyps, &refs).unwrap() - 4.0 / 5.0).abs() < 1e-12);
    // Position-wise scoring punishes the missing first token everywhere.
    assert!((positional_accuracy(&hyps, &refs).unwrap() - 1.0 / 5.0).abs() < 1e-12);
    assert_eq!(token_accuracy(&[vec![7; 20]], &[vec![1]]).unwrap(), 0.0);
    assert_eq!(token_accuracy(&refs, &refs).unwrap(), 1.0);
}

#[test]
fn entropy_unit_cases() {
    let uniform = vec![0.25; 4];
    assert!((row_entropy(&uniform) - 4f64.ln()).abs() < 1e-12);
    for n in 1..40 {
        let row = vec![1.0 / n as f64; n];
        assert!((row_entropy(&row) - (n as f64).ln()).abs() < 1e-12, "n = {n}");
    }
    assert_eq!(row_entropy(&[0.0, 1.0, 0.0]), 0.0);
}

#[test]
fn attention_entropy_averages_rows_per_layer() {
    let l0 = Tensor::from_rows(&[[0.5, 0.5, 0.0], [0.2, 0.3, 0.5]]).unwrap();
    let l1 = Tensor::from_rows(&[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
    let u2 = Tensor::from_rows(&[[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]]).unwrap();
    let maps = vec![vec![l0.clone(), l1.clone()], vec![u2.clone(), u2.clone()]];
    let h = |r: &[f64]| -r.iter().filter(|&&a| a > 0.0).map(|a| a * a.ln()).sum::<f64>();
    let report = attention_entropy(&maps, None).unwrap();
    assert_eq!(report.tokens, 3);
    let expect0 = (h(l0.row(0)) + h(l0.row(1)) + 3f64.ln()) / 3.0;
    assert!((report.per_layer[0] - expect0).abs() < 1e-12);
    assert!((report.per_layer[1] - 3f64.ln() / 3.0).abs() < 1e-12);

    let masks = vec![vec![true, false], vec![false]];
    let masked = attention_entropy(&maps, Some(&masks)).unwrap();
    assert_eq!(masked.tokens, 1);
    assert!((masked.per_layer[0] - 2f64.ln()).abs() < 1e-12);

    let bad = Tensor::from_rows(&[[0.5, 0.4]]).unwrap();
    assert!(attention_entropy(&[vec![bad]], None).is_err());
}

#[test]
fn grids() {
    let g = parse_grid("0.1:0.9:0.1").unwrap();
    assert_eq!(g.len(), 9);
    assert!((g[0] - 0.1).abs() < 1e-12 && (g[8] - 0.9).abs() < 1e-12);
    assert_eq!(parse_grid("0.2,0.4,0.6").unwrap(), vec![0.2, 0.4, 0.6]);
    for bad in ["", "0.5,0.3", "0:0.5:0.1", "0.1:0.9:0", "0.1:1.0:0.1", "x", "0.4,0.4"] {
        assert!(parse_grid(bad).is_err(), "{bad:?}");
    }
}

#[test]
fn histogram_buckets() {
    let mut h = ProbabilityHistogram::default();
    for p in [0.0, 0.05, 0.1, 0.5, 0.9, 0.99, 1.0] {
        h.add(p);
    }
    assert_eq!(h.total(), 7);
    assert_eq!(h.counts[0], 2);
    assert_eq!(h.counts[9], 3);
    assert!((h.confident_fraction() - 5.0 / 7.0).abs() < 1e-12);
    assert_eq!(ProbabilityHistogram::bucket_bounds(3), (0.3, 0.4));
}

#[test]
fn sweep_counts_every_frame_and_shrinks_with_theta() {
    let model = AdaTrans::new(tiny_config(ShrinkerKind::Boundary)).unwrap();
    let params = model.init_params(Stage::StFinetune, 5);
    let corpus = tiny_corpus();
    let grid = parse_grid("0.1:0.9:0.2").unwrap();
    let report = threshold_sweep(&model, &params, &corpus, &grid, Execution::Sequential).unwrap();
    assert_eq!(report.points.len(), grid.len());
    let frames: usize = corpus.utterances.iter().map(|u| subsampled_len(u.frames.rows(), 2)).sum();
    assert_eq!(report.frames, frames);
    assert_eq!(report.histogram.total(), frames);
    assert!(report.shrunk_len_monotone());
    for w in report.points.windows(2) {
        assert!(w[1].mean_shrunk_len <= w[0].mean_shrunk_len);
    }
    let par = threshold_sweep(&model, &params, &corpus, &grid, Execution::Parallel).unwrap();
    assert_eq!(par, report);

    let fixed = AdaTrans::new(tiny_config(ShrinkerKind::Fixed)).unwrap();
    assert!(threshold_sweep(&fixed, &params, &corpus, &grid, Execution::Sequential).is_err());
}

#[test]
fn bench_helpers() {
    let ms = Duration::from_millis;
    assert_eq!(median(&[ms(5), ms(1), ms(3)]), ms(3));
    assert_eq!(median(&[ms(4), ms(1), ms(3), ms(2)]), Duration::from_micros(2500));
    assert_eq!(median(&[]), Duration::ZERO);
    assert_eq!(
        normalize_variants(&[ShrinkerKind::Boundary, ShrinkerKind::Fixed, ShrinkerKind::Boundary]),
        vec![ShrinkerKind::None, ShrinkerKind::Boundary, ShrinkerKind::Fixed]
    );
    assert_eq!(normalize_variants(&[ShrinkerKind::None]), vec![ShrinkerKind::None]);
}

#[test]
fn small_bench_normalizes_to_none() {
    let cfg = tiny_config(ShrinkerKind::Boundary);
    let model = AdaTrans::new(cfg.clone()).unwrap();
    let params = model.init_params(Stage::StFinetune, 5);
    let bench = BenchConfig {
        variants: vec![ShrinkerKind::Fixed, ShrinkerKind::Boundary],
        batch_size: 4,
        repetitions: 20,
        fixed_steps: Some(4),
    };
    let report = efficiency_bench(&cfg, &params, &tiny_corpus(), &bench).unwrap();
    assert_eq!(report.results.len(), 3);
    let none = report.get(ShrinkerKind::None).unwrap();
    assert_eq!(none.semantic_speedup, 1.0);
    assert_eq!(none.relative_memory, 1.0);
    assert_eq!(none.semantic_samples.len(), 20);
    let fixed = report.get(ShrinkerKind::Fixed).unwrap();
    assert!(fixed.semantic_input_len < none.semantic_input_len);
    assert!(report.get(ShrinkerKind::CtcGreedy).is_none());
    let few = BenchConfig { repetitions: 19, ..bench };
    assert!(efficiency_bench(&cfg, &params, &tiny_corpus(), &few).is_err());
}

#[test]
fn oracle_segmentation_report() {
    let model = AdaTrans::new(tiny_config(ShrinkerKind::Boundary)).unwrap();
    let params = model.init_params(Stage::StFinetune, 5);
    let corpus = tiny_corpus();
    let mut opts = EvalOptions::new(&model);
    opts.oracle_segmentation = true;
    opts.exec = Execution::Sequential;
    let report = evaluate_corpus(&model, &params, &corpus, &opts).unwrap();
    assert_eq!(report.summary.shrink.diff_le_2(), 1.0);
    assert_eq!(report.summary.shrink.within[0], 1.0);
    assert_eq!(report.summary.boundary.f1, 1.0);
    assert_eq!(report.utterances.len(), corpus.len());

    let dir = tempfile::tempdir().unwrap();
    let written = report.write(dir.path()).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    let mut expect: Vec<String> = EVAL_REPORT_FILES.iter().map(|s| s.to_string()).collect();
    expect.sort();
    assert_eq!(names, expect);
    assert_eq!(written.len(), EVAL_REPORT_FILES.len());
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().next().unwrap(), SUMMARY_HEADER);
    assert!(evaluate_corpus(&model, &params, &Corpus::new(16, 32, 32, vec![]).unwrap(), &opts).is_err());
}
