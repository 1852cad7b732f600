use std::fs;

use adatrans::ctc::SourceTranscription;
use adatrans::data::{
    load_corpus, load_split, make_batches, plan_batches, prototype, save_corpus, synth_corpus, Corpus, CorpusFiles,
    SynthSpec, TargetSequence, TranslationRule, Utterance, EOS,
};
use adatrans::tensor::Tensor;
use adatrans::Error;
use proptest::prelude::*;

fn small_spec() -> SynthSpec {
    SynthSpec {
        train_utterances: 40,
        test_utterances: 10,
        ..SynthSpec::default()
    }
}

/// Recovers the token runs of a noiseless utterance by comparing frames.
fn runs(frames: &Tensor) -> Vec<usize> {
    let mut ends = Vec::new();
    for t in 0..frames.rows() {
        if t + 1 == frames.rows() || frames.row(t) != frames.row(t + 1) {
            ends.push(t);
        }
    }
    ends
}

#[test]
fn same_seed_gives_identical_corpora() {
    let a = synth_corpus(&small_spec()).unwrap();
    let b = synth_corpus(&small_spec()).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.test, b.test);
    let other = synth_corpus(&SynthSpec { seed: 2, ..small_spec() }).unwrap();
    assert_ne!(a.train.utterances[0].frames, other.train.utterances[0].frames);
}

#[test]
fn saved_corpora_are_byte_identical() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let spec = small_spec();
    let files1 = save_corpus(d1.path(), &synth_corpus(&spec).unwrap(), Some(&spec)).unwrap();
    save_corpus(d2.path(), &synth_corpus(&spec).unwrap(), Some(&spec)).unwrap();
    for f in files1 {
        let name = f.file_name().unwrap();
        assert_eq!(fs::read(&f).unwrap(), fs::read(d2.path().join(name)).unwrap(), "{name:?}");
    }
}

#[test]
fn noiseless_frames_equal_prototypes() {
    let spec = SynthSpec { noise: 0.0, ..small_spec() };
    let corpus = synth_corpus(&spec).unwrap();
    for u in corpus.train.utterances.iter().take(10) {
        let mut start = 0;
        for (&tok, &end) in u.transcription.tokens().iter().zip(&u.gold_boundaries) {
            let proto = prototype(&spec, tok);
            for t in start..=end {
                assert_eq!(u.frames.row(t), proto.as_slice(), "{} frame {t}", u.id);
            }
            start = end + 1;
        }
    }
}

#[test]
fn gold_boundaries_end_each_token_run() {
    let spec = SynthSpec { noise: 0.0, ..small_spec() };
    let corpus = synth_corpus(&spec).unwrap();
    for u in &corpus.train.utterances {
        assert_eq!(u.gold_boundaries.len(), u.transcription.len());
        // Adjacent repeats of one token merge into a single visible run.
        let distinct: Vec<usize> = u
            .gold_boundaries
            .iter()
            .enumerate()
            .filter(|(k, _)| k + 1 == u.gold_boundaries.len() || u.transcription.tokens()[k + 1] != u.transcription.tokens()[*k])
            .map(|(_, &b)| b)
            .collect();
        assert_eq!(runs(&u.frames), distinct, "{}", u.id);
    }
}

#[test]
fn hand_built_utterance_matches_construction_rule() {
    let frames = Tensor::filled(vec![5, 2], 0.0);
    let make = |gold: Vec<usize>| Utterance {
        id: "u".into(),
        frames: frames.clone(),
        transcription: SourceTranscription::new(vec![5, 2], 8).unwrap(),
        translation: TargetSequence::from_content(&[3], 8).unwrap(),
        gold_boundaries: gold,
    };
    assert!(Corpus::new(2, 8, 8, vec![make(vec![2, 4])]).is_ok());
    assert!(Corpus::new(2, 8, 8, vec![make(vec![2, 3])]).is_err());
    assert!(Corpus::new(2, 8, 8, vec![make(vec![4])]).is_err());
}

#[test]
fn subsampled_gold_stays_strictly_increasing() {
    let spec = small_spec();
    let corpus = synth_corpus(&spec).unwrap();
    for u in corpus.train.utterances.iter().chain(&corpus.test.utterances) {
        let g = u.subsampled_gold(spec.subsample_factor);
        assert!(g.windows(2).all(|w| w[0] < w[1]), "{}: {g:?}", u.id);
    }
}

#[test]
fn translation_rules() {
    let ident = synth_corpus(&SynthSpec { rule: TranslationRule::IdentityMap, ..small_spec() }).unwrap();
    for u in &ident.train.utterances {
        let expect: Vec<usize> = u.transcription.tokens().iter().map(|v| v + 1).collect();
        assert_eq!(u.translation.content(), expect.as_slice());
        assert_eq!(*u.translation.tokens().last().unwrap(), EOS);
    }
    let dict = synth_corpus(&SynthSpec { rule: TranslationRule::DictionaryMap, ..small_spec() }).unwrap();
    let rev = synth_corpus(&SynthSpec { rule: TranslationRule::Reverse, ..small_spec() }).unwrap();
    for (d, r) in dict.train.utterances.iter().zip(&rev.train.utterances) {
        let mut reversed = d.translation.content().to_vec();
        reversed.reverse();
        assert_eq!(r.translation.content(), reversed.as_slice());
    }
    // The dictionary is injective: equal targets imply equal sources.
    let mut map = std::collections::HashMap::new();
    for u in &dict.train.utterances {
        for (s, t) in u.transcription.tokens().iter().zip(u.translation.content()) {
            assert_eq!(*map.entry(*t).or_insert(*s), *s);
        }
    }
}

#[test]
fn default_spec_sizes() {
    let spec = SynthSpec::default();
    assert_eq!((spec.src_vocab, spec.tgt_vocab), (32, 32));
    assert_eq!((spec.train_utterances, spec.test_utterances), (2000, 200));
    assert_eq!((spec.min_tokens, spec.max_tokens, spec.min_duration, spec.max_duration), (4, 10, 4, 12));
    assert_eq!((spec.feature_dim, spec.subsample_factor), (16, 2));
    assert_eq!(spec.noise, 0.3);
    assert_eq!(spec.rule, TranslationRule::DictionaryMap);
}

#[test]
fn impossible_specs_are_rejected() {
    let bad = SynthSpec { min_duration: 9, max_duration: 5, ..small_spec() };
    assert!(matches!(synth_corpus(&bad), Err(Error::Config(_))));
    let bad = SynthSpec { min_tokens: 0, ..small_spec() };
    assert!(synth_corpus(&bad).is_err());
}

#[test]
fn spec_text_round_trip() {
    let spec = SynthSpec { noise: 0.125, seed: 99, rule: TranslationRule::Reverse, ..small_spec() };
    assert_eq!(SynthSpec::from_config_text(&spec.to_config_text()).unwrap(), spec);
    let partial = SynthSpec::from_config_text("seed = 5\n").unwrap();
    assert_eq!(partial, SynthSpec { seed: 5, ..SynthSpec::default() });
    assert!(SynthSpec::from_config_text("bogus = 1\n").is_err());
}

#[test]
fn io_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec();
    let corpus = synth_corpus(&spec).unwrap();
    save_corpus(dir.path(), &corpus, Some(&spec)).unwrap();
    let loaded = load_corpus(dir.path()).unwrap();
    assert_eq!(loaded.train, corpus.train);
    assert_eq!(loaded.test, corpus.test);
}

#[test]
fn corrupt_magic_is_a_format_error_at_offset_zero() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec();
    save_corpus(dir.path(), &synth_corpus(&spec).unwrap(), Some(&spec)).unwrap();
    let path = CorpusFiles::new(dir.path()).features("test");
    let mut bytes = fs::read(&path).unwrap();
    bytes[0] = b'X';
    fs::write(&path, &bytes).unwrap();
    match load_split(dir.path(), "test") {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn truncated_features_report_an_offset() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec();
    save_corpus(dir.path(), &synth_corpus(&spec).unwrap(), Some(&spec)).unwrap();
    let path = CorpusFiles::new(dir.path()).features("test");
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
    match load_split(dir.path(), "test") {
        Err(Error::Format { offset, .. }) => assert!(offset > 8 && (offset as usize) < bytes.len()),
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn manifest_and_features_must_agree() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec();
    save_corpus(dir.path(), &synth_corpus(&spec).unwrap(), Some(&spec)).unwrap();
    let path = CorpusFiles::new(dir.path()).manifest("test");
    let text = fs::read_to_string(&path).unwrap();
    let trimmed: Vec<&str> = text.lines().take(text.lines().count() - 1).collect();
    fs::write(&path, trimmed.join("\n") + "\n").unwrap();
    assert!(load_split(dir.path(), "test").is_err());
}

#[test]
fn oversized_utterance_is_named() {
    let err = plan_batches(&[4, 30, 5], &["a", "big", "c"], 20, 0).unwrap_err();
    assert!(err.to_string().contains("big"));
}

#[test]
fn budget_of_one_utterance_gives_singletons() {
    let batches = plan_batches(&[10, 10, 10], &["a", "b", "c"], 10, 3).unwrap();
    assert_eq!(batches.len(), 3);
    assert!(batches.iter().all(|b| b.len() == 1));
}

#[test]
fn corpus_batches_respect_budget_and_seed() {
    let corpus = synth_corpus(&small_spec()).unwrap().train;
    let a = make_batches(&corpus, 400, 11).unwrap();
    let b = make_batches(&corpus, 400, 11).unwrap();
    assert_eq!(a.iter().map(|x| x.indices.clone()).collect::<Vec<_>>(), b.iter().map(|x| x.indices.clone()).collect::<Vec<_>>());
    for batch in &a {
        assert!(batch.padded_frames() <= 400);
        assert_eq!(batch.max_frames, batch.frames.iter().map(|f| f.len()).max().unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn batches_partition_within_budget(
        lengths in proptest::collection::vec(1usize..50, 1..60),
        extra in 0usize..100,
        seed in any::<u64>(),
    ) {
        let budget = lengths.iter().copied().max().unwrap() + extra;
        let names: Vec<String> = (0..lengths.len()).map(|i| i.to_string()).collect();
        let ids: Vec<&str> = names.iter().map(String::as_str).collect();
        let batches = plan_batches(&lengths, &ids, budget, seed).unwrap();
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..lengths.len()).collect::<Vec<_>>());
        for b in &batches {
            prop_assert!(!b.is_empty());
            let max = b.iter().map(|&i| lengths[i]).max().unwrap();
            prop_assert!(b.len() * max <= budget);
        }
        prop_assert_eq!(plan_batches(&lengths, &ids, budget, seed).unwrap(), batches);
    }
}
