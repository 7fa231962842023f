use std::collections::BTreeSet;

use proptest::prelude::*;

use knowpron::corpus::{extract_candidates, read_corpus, write_corpus};
use knowpron::features::KnowledgeFeatureVector;
use knowpron::model::{prune, KnowledgeSource, Model, ModelConfig};
use knowpron::neural::Vocabulary;
use knowpron::spkb::BucketId;
use knowpron::synth::{generate, SynthConfig};

fn model_with_sources(sources: Vec<KnowledgeSource>) -> Model {
    let config = ModelConfig {
        sources,
        ..ModelConfig::reduced()
    };
    Model::new(config, Vocabulary::new(["x"]), 3).unwrap()
}

/// Copies every array of `from` into the same-named array of `to`.
fn copy_by_name(from: &Model, to: &mut Model) {
    let pairs: Vec<_> = from
        .params()
        .iter()
        .map(|(id, p)| (id, to.params().id(&p.name).unwrap_or_else(|| panic!("{} missing", p.name))))
        .collect();
    for (src, dst) in pairs {
        let values = from.params().values(src).to_vec();
        to.params_mut().values_mut(dst).copy_from_slice(&values);
    }
}

fn features() -> impl Strategy<Value = KnowledgeFeatureVector> {
    (0u8..2, 0u8..2, 0u8..BucketId::COUNT as u8).prop_map(|(plurality, ag, sp)| KnowledgeFeatureVector {
        plurality,
        ag,
        sp: BucketId::new(sp).unwrap(),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn permuting_sources_permutes_weights_only(
        n in 2usize..5,
        seed in any::<u64>(),
        feats in prop::collection::vec(features(), 4),
    ) {
        use rand::{Rng, SeedableRng};
        let base = model_with_sources(KnowledgeSource::ALL.to_vec());
        let order = [KnowledgeSource::Sp, KnowledgeSource::Plurality, KnowledgeSource::Ag];
        let mut permuted = model_with_sources(order.to_vec());
        copy_by_name(&base, &mut permuted);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dim = base.config().span_dim();
        let spans: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let a = base.knowledge_layer(&spans, &feats[..n]).unwrap();
        let b = permuted.knowledge_layer(&spans, &feats[..n]).unwrap();
        for (fa, fb) in a.scores.iter().zip(&b.scores) {
            prop_assert!((fa - fb).abs() < 1e-12);
        }
        for (pa, pb) in a.pairs.iter().zip(&b.pairs) {
            prop_assert_eq!((pa.candidate, pa.other), (pb.candidate, pb.other));
            for (j, s) in order.iter().enumerate() {
                let i = KnowledgeSource::ALL.iter().position(|x| x == s).unwrap();
                prop_assert!((pa.weights[i] - pb.weights[j]).abs() < 1e-12);
                prop_assert!((pa.source_scores[i] - pb.source_scores[j]).abs() < 1e-12);
            }
            prop_assert!((pa.score - pb.score).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_threshold_keeps_everything(scores in prop::collection::vec(-80.0f64..80.0, 1..10)) {
        prop_assert!(prune(&scores, 0.0).iter().all(|k| *k));
    }

    #[test]
    fn pruning_keeps_the_best_candidate(
        scores in prop::collection::vec(-80.0f64..80.0, 1..10),
        t in 0.0f64..1.0,
    ) {
        let kept = prune(&scores, t);
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(scores.iter().zip(&kept).any(|(s, k)| *k && *s == best));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn synthetic_windows_are_well_formed(seed in any::<u64>()) {
        let corpus = generate(&SynthConfig {
            seed,
            num_documents: 30,
            ..SynthConfig::default()
        })
        .unwrap();
        for doc in corpus.train.iter().chain(&corpus.dev).chain(&corpus.test) {
            for p in &doc.pronouns {
                let window = extract_candidates(doc, p).unwrap();
                let ids: Vec<&str> = window.iter().map(|m| m.mention_id.as_str()).collect();
                let unique: BTreeSet<&str> = ids.iter().copied().collect();
                prop_assert_eq!(unique.len(), ids.len());
                prop_assert!(window.iter().all(|m| doc.mentions.iter().any(|d| std::ptr::eq(d, *m))));
                prop_assert!(window.iter().all(|m| !m.is_pronominal));
                let positions: Vec<(usize, usize)> = window.iter().map(|m| (m.sentence_idx, m.start)).collect();
                prop_assert!(positions.windows(2).all(|w| w[0] <= w[1]));
                let gold_in_window: BTreeSet<&str> =
                    p.gold_refs.iter().map(String::as_str).filter(|g| unique.contains(g)).collect();
                let expected: BTreeSet<&str> = p.gold_refs.iter().map(String::as_str).collect();
                prop_assert_eq!(gold_in_window, expected);
            }
        }
        let mut first = Vec::new();
        write_corpus(&mut first, &corpus.train).unwrap();
        let reread = read_corpus(first.as_slice()).unwrap();
        prop_assert_eq!(&reread, &corpus.train);
        let mut second = Vec::new();
        write_corpus(&mut second, &reread).unwrap();
        prop_assert_eq!(first, second);
    }
}
