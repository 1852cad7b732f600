//! Metrics, reports, threshold sweeps and the efficiency benchmark.

pub mod bench;
pub mod metrics;
pub mod report;
pub mod sweep;

pub use bench::{efficiency_bench, median, normalize_variants, BenchConfig, BenchReport, VariantResult, BENCH_FILE, BENCH_HEADER};
pub use metrics::{
    attention_entropy, boundary_prf, boundary_prf_frames, corpus_bleu, diff_le_k, edit_distance, positional_accuracy,
    row_entropy, token_accuracy,
    AttentionEntropyReport, BoundaryPrf, ShrinkQualityReport,
};
pub use report::{
    evaluate_corpus, summarize, write_summary_table, EvalOptions, EvalReport, Summary, UtteranceResult,
    BOUNDARY_TOLERANCE, EVAL_REPORT_FILES, SUMMARY_HEADER,
};
pub use sweep::{
    parse_grid, threshold_sweep, ProbabilityHistogram, SweepPoint, SweepReport, HISTOGRAM_HEADER, SWEEP_FILES,
    SWEEP_HEADER,
};
