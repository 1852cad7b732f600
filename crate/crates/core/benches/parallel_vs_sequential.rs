//! Batch forward/backward and batched inference under both execution modes.

use std::hint::black_box;

use adatrans::data::{synth_corpus, SynthSpec};
use adatrans::eval::{evaluate_corpus, EvalOptions};
use adatrans::model::{AdaTrans, Example, ModelConfig, Stage};
use adatrans::parallel::Execution;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn modes() -> [(&'static str, Execution); 2] {
    [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)]
}

fn training_batch(c: &mut Criterion) {
    let spec = SynthSpec {
        train_utterances: 16,
        test_utterances: 1,
        ..SynthSpec::default()
    };
    let corpus = synth_corpus(&spec).unwrap().train;
    let model = AdaTrans::new(ModelConfig::default()).unwrap();
    let params = model.init_params(Stage::StFinetune, 1);
    let examples: Vec<Example<'_>> = corpus.utterances.iter().map(Example::from_utterance).collect();
    let mut group = c.benchmark_group("st_finetune_batch16");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(model.forward_examples(&params, Stage::StFinetune, &examples, true, exec).unwrap()))
        });
    }
    group.finish();
}

fn inference(c: &mut Criterion) {
    let spec = SynthSpec {
        train_utterances: 1,
        test_utterances: 16,
        ..SynthSpec::default()
    };
    let corpus = synth_corpus(&spec).unwrap().test;
    let model = AdaTrans::new(ModelConfig::default()).unwrap();
    let params = model.init_params(Stage::StFinetune, 1);
    let mut group = c.benchmark_group("evaluate_16_utterances");
    group.sample_size(10);
    for (name, exec) in modes() {
        let mut opts = EvalOptions::new(&model);
        opts.exec = exec;
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(evaluate_corpus(&model, &params, &corpus, &opts).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, training_batch, inference);
criterion_main!(benches);
