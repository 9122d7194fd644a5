use stylus_core::corpus::{
    build_lm_stream, sample_fragments, split_by_piece_stratified, Fragment, LabelSet, Manifest,
    SplitRatios, SynthConfig, SyntheticCorpus, TokenizedPage,
};
use stylus_core::inference::model_input;
use stylus_core::nn::{class_loss, Arch, DropoutConfig, Graph, Model, ModelConfig};
use stylus_core::tokenizer::{Tokenizer, TokenizerKind};
use stylus_core::train::{
    finetune_classifier, init_classifier, lm_perplexity, lr_range_test, pretrain_lm, AdamW,
    AdamWConfig, FinetunePlan, LmTrainConfig, OneCycleConfig, Stage,
};

struct Toy {
    vocab: usize,
    train: Vec<TokenizedPage>,
    val: Vec<TokenizedPage>,
    labels: LabelSet,
}

fn toy(pieces: usize) -> Toy {
    let corpus = SyntheticCorpus::new(SynthConfig {
        classes: 3,
        pieces_per_class: pieces,
        pages_per_piece: 2,
        columns_per_page: 200,
        alphabet: 16,
        shared_alphabet: true,
        class_mix: 1.0,
        peakiness: 6.0,
        seed: 11,
    })
    .unwrap();
    let pages = corpus.pages();
    let scores: Vec<_> = pages.iter().map(|(_, s)| s.clone()).collect();
    let tok = Tokenizer::train(TokenizerKind::Word, &scores, 1000).unwrap();
    let manifest = Manifest::new(pages.iter().map(|(r, _)| r.clone()).collect(), ".").unwrap();
    let labels = LabelSet::from_manifest(&manifest);
    let splits = split_by_piece_stratified(&manifest, SplitRatios::CLASSIFICATION, 0).unwrap();
    let tokenize = |m: &Manifest| -> Vec<TokenizedPage> {
        m.records
            .iter()
            .map(|r| {
                let score = &pages.iter().find(|(x, _)| x == r).unwrap().1;
                TokenizedPage {
                    record: r.clone(),
                    label: labels.id(&r.composer),
                    ids: tok.encode_score(score).ids,
                }
            })
            .collect()
    };
    Toy {
        vocab: tok.vocab_size(),
        train: tokenize(&splits.train),
        val: tokenize(&splits.val),
        labels,
    }
}

fn stream(pages: &[TokenizedPage], context: usize) -> Vec<Vec<u32>> {
    build_lm_stream(pages.iter().map(|p| p.ids.as_slice()), context)
}

fn small(arch: Arch, vocab: usize) -> ModelConfig {
    ModelConfig {
        embed_dim: 16,
        hidden_dim: 16,
        n_heads: 2,
        context: 40,
        head_dim: 12,
        ..ModelConfig::desk(arch, vocab)
    }
}

fn lm_config(seed: u64) -> LmTrainConfig {
    LmTrainConfig {
        batch_size: 8,
        epochs: 1,
        cycle: OneCycleConfig::new(1e-2, 1),
        seed,
        ..LmTrainConfig::default()
    }
}

#[test]
fn one_epoch_beats_the_uniform_model() {
    let data = toy(6);
    let train = stream(&data.train, 40);
    let val = stream(&data.val, 40);
    for arch in [Arch::Causal, Arch::Masked, Arch::Lstm] {
        let model = Model::new(small(arch, data.vocab), 1).unwrap();
        let result = pretrain_lm(model, &train, &val, &lm_config(1)).unwrap();
        let ppl = result.best_val_ppl.unwrap();
        assert!(
            ppl < data.vocab as f64,
            "{arch}: perplexity {ppl} vs vocabulary {}",
            data.vocab
        );
        let again = lm_perplexity(&result.model, &val, &lm_config(1).mask, 1 ^ 0x5eed, 8).unwrap();
        assert_eq!(
            again, ppl,
            "{arch}: best model reported with its own perplexity"
        );
    }
}

#[test]
fn loss_traces_reproduce() {
    let data = toy(4);
    let train = stream(&data.train, 40);
    for arch in [Arch::Causal, Arch::Masked, Arch::Lstm] {
        let run = |seed| {
            let model = Model::new(small(arch, data.vocab), seed).unwrap();
            let r = pretrain_lm(model, &train, &[], &lm_config(seed)).unwrap();
            r.log
                .iter()
                .map(|l| (l.step, l.lr.to_bits(), l.loss.to_bits()))
                .collect::<Vec<_>>()
        };
        let a = run(5);
        assert!(!a.is_empty());
        assert_eq!(a, run(5), "{arch}");
        assert_ne!(a, run(6), "{arch}");
    }
}

fn fragments(data: &Toy, pages: &[TokenizedPage], n: usize, seed: u64) -> Vec<Fragment> {
    sample_fragments(pages, &data.labels, 32, n, seed).unwrap()
}

#[test]
fn frozen_groups_stay_bit_identical() {
    let data = toy(4);
    let train = fragments(&data, &data.train, 20, 0);
    for arch in [Arch::Causal, Arch::Masked, Arch::Lstm, Arch::Cnn] {
        let model = Model::new(small(arch, data.vocab).classifier(3), 2).unwrap();
        let before = model.params.clone();
        let n = model.n_groups();
        // Head only, then the top two groups.
        for unfrozen in [1, 2] {
            let plan = FinetunePlan {
                stages: vec![Stage {
                    unfrozen,
                    steps: 5,
                    lr_max: 1e-2,
                }],
                ..FinetunePlan::unfrozen(n, 1e-2, 5, 3)
            };
            let after = finetune_classifier(model.clone(), &train, &[], &plan)
                .unwrap()
                .model
                .params;
            for ((_, p), (_, q)) in before.iter().zip(after.iter()) {
                let frozen = p.group + unfrozen < n;
                let same = p
                    .value
                    .data()
                    .iter()
                    .zip(q.value.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
                if frozen {
                    assert!(same, "{arch}: frozen {} moved", p.name);
                } else if p.trainable && p.name.ends_with(".w") {
                    assert!(!same, "{arch}: trainable {} did not move", p.name);
                }
            }
        }
    }
}

#[test]
fn pretrained_body_reaches_the_classifier() {
    let data = toy(4);
    let lm = Model::new(small(Arch::Causal, data.vocab), 9).unwrap();
    let clf =
        init_classifier(small(Arch::Causal, data.vocab).classifier(3), Some(&lm), 10).unwrap();
    let scratch = init_classifier(small(Arch::Causal, data.vocab).classifier(3), None, 10).unwrap();
    let mut copied = 0;
    for (_, p) in clf.params.iter() {
        match lm.params.id(&p.name) {
            Some(id) => {
                assert_eq!(&p.value, lm.params.value(id), "{}", p.name);
                copied += 1;
            }
            None => assert!(p.name.starts_with("head."), "{} has no source", p.name),
        }
    }
    assert!(copied > 0);
    assert_ne!(clf.params, scratch.params);
}

#[test]
fn range_test_on_a_real_model() {
    let data = toy(4);
    let train = fragments(&data, &data.train, 30, 1);
    let mut cfg = small(Arch::Causal, data.vocab).classifier(3);
    cfg.dropout = DropoutConfig::NONE;
    let mut model = Model::new(cfg, 4).unwrap();
    let n = model.n_groups();
    let inputs: Vec<Vec<u32>> = train.iter().map(|f| model_input(&model, &f.ids)).collect();
    let batch: Vec<&[u32]> = inputs.iter().map(Vec::as_slice).collect();
    let labels: Vec<usize> = train.iter().map(|f| f.label).collect();
    let mut opt = AdamW::new(AdamWConfig::default(), model.params.len());
    let (lo, hi) = (1e-5, 10.0);
    let result = lr_range_test(lo, hi, 40, |lr| {
        let (loss, grads) = {
            let mut g = Graph::new(&model.params);
            let out = model.forward_classifier(&mut g, &batch, None)?;
            let loss = class_loss(&mut g, out.logits, &labels)?;
            (g.scalar(loss), g.backward(loss))
        };
        opt.step(
            &mut model.params,
            &grads,
            &vec![lr; n],
            0.9,
            &vec![false; n],
        );
        Ok(loss)
    })
    .unwrap();
    let s = result
        .suggestion
        .expect("loss decreases somewhere in the sweep");
    assert!(s > lo && s < hi);
    assert_eq!(result.lrs[0], lo);
}
