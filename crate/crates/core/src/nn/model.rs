//! Model state and the architecture-independent forward entry points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Arch, ModelConfig};
use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::{softmax, Tensor};
use super::{cnn, lstm, transformer};
use crate::error::{Error, Result};
use crate::tokenizer::{BOS, EOS, PAD};

/// Running-statistics momentum for batch normalization.
pub const BN_MOMENTUM: f64 = 0.1;

/// Parameters plus the configuration that shaped them.
///
/// The LM decoder has no matrix of its own: logits are computed against
/// `embed.tok`, so tied weights share one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// Hidden states and per-position vocabulary logits for a batch of
/// equal-length sequences stacked row-wise.
pub struct LmForward {
    pub hidden: Var,
    pub logits: Var,
    pub seq: usize,
    pub batch: usize,
}

/// Running-statistics update produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub batch_mean: Tensor,
    pub batch_var: Tensor,
}

pub struct ClassForward {
    /// Input to the final dense layer, one row per sequence.
    pub features: Var,
    pub logits: Var,
    pub bn_updates: Vec<BnUpdate>,
}

pub(super) struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: ChaCha8Rng,
}

impl Init<'_> {
    pub fn uniform(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        a: f64,
        group: usize,
    ) -> ParamId {
        let data = (0..rows * cols)
            .map(|_| self.rng.gen_range(-a..=a))
            .collect();
        self.store
            .add(name, Tensor::from_vec(rows, cols, data), group)
    }

    pub fn constant(&mut self, name: &str, cols: usize, v: f64, group: usize) -> ParamId {
        self.store.add(name, Tensor::full(1, cols, v), group)
    }

    /// `name.w` (`fan_in × fan_out`) with fan-in scaling and a zero `name.b`.
    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, group: usize) {
        let a = 1.0 / (fan_in as f64).sqrt();
        self.uniform(&format!("{name}.w"), fan_in, fan_out, a, group);
        self.constant(&format!("{name}.b"), fan_out, 0.0, group);
    }

    pub fn embedding(&mut self, name: &str, rows: usize, cols: usize, group: usize) {
        let a = 1.0 / (cols as f64).sqrt();
        self.uniform(name, rows, cols, a, group);
    }

    /// `name.g`, `name.b`; with `running`, also `name.mean` and `name.var` buffers.
    pub fn norm(&mut self, name: &str, cols: usize, group: usize, running: bool) {
        self.constant(&format!("{name}.g"), cols, 1.0, group);
        self.constant(&format!("{name}.b"), cols, 0.0, group);
        if running {
            self.store
                .add_buffer(&format!("{name}.mean"), Tensor::zeros(1, cols), group);
            self.store
                .add_buffer(&format!("{name}.var"), Tensor::full(1, cols, 1.0), group);
        }
    }
}

impl Model {
    /// Fresh parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::default();
        let mut init = Init {
            store: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        match config.arch {
            Arch::Causal | Arch::Masked => transformer::init(&config, &mut init),
            Arch::Lstm => lstm::init(&config, &mut init),
            Arch::Cnn => cnn::init(&config, &mut init),
        }
        let head = config.n_layers + 1;
        match config.n_classes {
            None => {
                init.constant("decoder.bias", config.vocab_size, 0.0, head);
            }
            Some(c) => match config.arch {
                Arch::Lstm => lstm::init_head(&config, c, &mut init),
                _ => init.linear("head.fc", config.feature_dim(), c, head),
            },
        }
        Ok(Model { config, params })
    }

    /// Layer groups: embeddings, one per body layer, then the head.
    pub fn n_groups(&self) -> usize {
        self.config.n_layers + 2
    }

    pub fn head_group(&self) -> usize {
        self.config.n_layers + 1
    }

    pub fn is_classifier(&self) -> bool {
        self.config.n_classes.is_some()
    }

    pub(super) fn p(&self, g: &mut Graph<'_>, name: &str) -> Var {
        let id = self
            .params
            .id(name)
            .unwrap_or_else(|| panic!("missing parameter `{name}`"));
        g.param(id)
    }

    /// `x · name.w + name.b`.
    pub(super) fn linear(&self, g: &mut Graph<'_>, x: Var, name: &str) -> Var {
        let w = self.p(g, &format!("{name}.w"));
        let b = self.p(g, &format!("{name}.b"));
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    /// `x · w + b` with explicit parameter names.
    pub(super) fn linear_named(&self, g: &mut Graph<'_>, x: Var, w: &str, b: &str) -> Var {
        let w = self.p(g, w);
        let b = self.p(g, b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    /// Validates a batch and returns its common length.
    fn check_batch(&self, batch: &[&[u32]], classifier: bool) -> Result<usize> {
        let first = batch.first().ok_or(Error::EmptySequence)?;
        let seq = first.len();
        if seq == 0 {
            return Err(Error::EmptySequence);
        }
        if batch.iter().any(|s| s.len() != seq) {
            return Err(Error::InputContract(
                "sequences in a batch must share one length".into(),
            ));
        }
        let v = self.config.vocab_size as u32;
        if let Some(&bad) = batch.iter().flat_map(|s| s.iter()).find(|&&id| id >= v) {
            return Err(Error::InvalidTokenId(bad));
        }
        if self.config.arch.is_transformer() {
            if seq > self.config.context {
                return Err(Error::ContextOverflow {
                    len: seq,
                    context: self.config.context,
                });
            }
            if classifier && batch.iter().any(|s| s[0] != BOS || s[seq - 1] != EOS) {
                return Err(Error::InputContract(
                    "transformer classifiers expect <s> ... </s> around every input".into(),
                ));
            }
        }
        Ok(seq)
    }

    /// Body forward pass over stacked sequences; returns `B·T × d` states.
    fn body<'p>(
        &'p self,
        g: &mut Graph<'p>,
        ids: &[u32],
        seq: usize,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Var {
        match self.config.arch {
            Arch::Causal => transformer::body(self, g, ids, seq, true, rng),
            Arch::Masked => transformer::body(self, g, ids, seq, false, rng),
            Arch::Lstm => lstm::body(self, g, ids, seq, rng),
            Arch::Cnn => cnn::body(self, g, ids, seq),
        }
    }

    /// Language-model forward pass. `rng` enables dropout; `None` is eval mode.
    pub fn forward_lm<'p>(
        &'p self,
        g: &mut Graph<'p>,
        batch: &[&[u32]],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<LmForward> {
        if self.is_classifier() || !self.config.arch.supports_lm() {
            return Err(Error::Config(format!(
                "{} model has no language-model decoder",
                self.config.arch
            )));
        }
        let seq = self.check_batch(batch, false)?;
        let ids: Vec<u32> = batch.iter().flat_map(|s| s.iter().copied()).collect();
        let hidden = self.body(g, &ids, seq, rng.as_deref_mut());
        let out = self.output_dropout(g, hidden, batch.len(), seq, rng);
        let emb = self.p(g, "embed.tok");
        let bias = self.p(g, "decoder.bias");
        let logits = g.matmul_bt(out, emb);
        let logits = g.add_row(logits, bias);
        Ok(LmForward {
            hidden,
            logits,
            seq,
            batch: batch.len(),
        })
    }

    pub(super) fn output_dropout(
        &self,
        g: &mut Graph<'_>,
        x: Var,
        blocks: usize,
        seq: usize,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Var {
        let p = self.config.dropout.output;
        match rng {
            Some(rng) if p > 0.0 => {
                let cols = g.value(x).cols();
                let mask = match self.config.arch {
                    Arch::Lstm => super::dropout::locked_mask(rng, blocks, seq, cols, p),
                    _ => super::dropout::element_mask(rng, blocks * seq, cols, p),
                };
                g.mul_const(x, mask)
            }
            _ => x,
        }
    }

    /// Classifier forward pass over a batch of equal-length sequences.
    pub fn forward_classifier<'p>(
        &'p self,
        g: &mut Graph<'p>,
        batch: &[&[u32]],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ClassForward> {
        if !self.is_classifier() {
            return Err(Error::Config("model has no classification head".into()));
        }
        let mut seq = self.check_batch(batch, true)?;
        let mut ids: Vec<u32> = batch.iter().flat_map(|s| s.iter().copied()).collect();
        if self.config.arch == Arch::Cnn && seq < self.config.cnn_min_len() {
            let min = self.config.cnn_min_len();
            ids = batch
                .iter()
                .flat_map(|s| {
                    s.iter()
                        .copied()
                        .chain(std::iter::repeat_n(PAD, min - seq))
                })
                .collect();
            seq = min;
        }
        let nb = batch.len();
        let hidden = self.body(g, &ids, seq, rng.as_deref_mut());
        match self.config.arch {
            Arch::Lstm => lstm::head(self, g, hidden, nb, seq, rng),
            Arch::Causal | Arch::Masked | Arch::Cnn => {
                let pooled = match self.config.arch {
                    // Last position (</s>) for causal models, <s> for masked ones.
                    Arch::Causal => {
                        let rows: Vec<u32> = (0..nb).map(|b| (b * seq + seq - 1) as u32).collect();
                        g.gather(hidden, &rows)
                    }
                    Arch::Masked => {
                        let rows: Vec<u32> = (0..nb).map(|b| (b * seq) as u32).collect();
                        g.gather(hidden, &rows)
                    }
                    _ => hidden,
                };
                let dropped = self.output_dropout(g, pooled, nb, 1, rng);
                let logits = self.linear(g, dropped, "head.fc");
                Ok(ClassForward {
                    features: pooled,
                    logits,
                    bn_updates: Vec::new(),
                })
            }
        }
    }

    /// Folds batch statistics into the running buffers.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        for u in updates {
            blend(self.params.value_mut(u.mean), &u.batch_mean);
            blend(self.params.value_mut(u.var), &u.batch_var);
        }
    }

    /// Eval-mode vocabulary logits for one sequence (`T × V`).
    pub fn lm_logits(&self, ids: &[u32]) -> Result<Tensor> {
        let mut g = Graph::new(&self.params);
        let out = self.forward_lm(&mut g, &[ids], None)?;
        Ok(g.value(out.logits).clone())
    }

    /// Eval-mode final hidden states for one sequence (`T × d`).
    pub fn hidden_states(&self, ids: &[u32]) -> Result<Tensor> {
        let mut g = Graph::new(&self.params);
        let seq = self.check_batch(&[ids], false)?;
        let h = self.body(&mut g, ids, seq, None);
        Ok(g.value(h).clone())
    }

    /// Eval-mode class logits and features for one sequence.
    pub fn classify(&self, ids: &[u32]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new(&self.params);
        let out = self.forward_classifier(&mut g, &[ids], None)?;
        Ok((
            g.value(out.logits).data().to_vec(),
            g.value(out.features).data().to_vec(),
        ))
    }

    /// Eval-mode class probabilities for one sequence.
    pub fn class_probs(&self, ids: &[u32]) -> Result<Vec<f64>> {
        Ok(softmax(&self.classify(ids)?.0))
    }

    /// Copies every parameter of `other` whose name and shape match; returns
    /// the number copied. Used to start a classifier from a language model.
    pub fn load_body_from(&mut self, other: &Model) -> Result<usize> {
        if other.config.arch != self.config.arch {
            return Err(Error::Config(format!(
                "cannot initialize a {} model from a {} model",
                self.config.arch, other.config.arch
            )));
        }
        if other.config.vocab_size != self.config.vocab_size {
            return Err(Error::VocabMismatch {
                expected: self.config.vocab_size.to_string(),
                found: other.config.vocab_size.to_string(),
            });
        }
        let head = self.head_group();
        let mut copied = 0;
        let names: Vec<(ParamId, String)> = self
            .params
            .iter()
            .filter(|(_, p)| p.group != head)
            .map(|(id, p)| (id, p.name.clone()))
            .collect();
        for (id, name) in names {
            if let Some(src) = other.params.id(&name) {
                let src = other.params.value(src);
                if src.shape() == self.params.value(id).shape() {
                    *self.params.value_mut(id) = src.clone();
                    copied += 1;
                }
            }
        }
        Ok(copied)
    }
}

fn blend(running: &mut Tensor, batch: &Tensor) {
    for (r, b) in running.data_mut().iter_mut().zip(batch.data()) {
        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::config::DropoutConfig;
    use crate::nn::gradcheck::grad_check;
    use crate::nn::loss::{class_loss, masked_loss, next_token_loss};

    fn toy(arch: Arch) -> ModelConfig {
        ModelConfig {
            arch,
            vocab_size: 64,
            embed_dim: 16,
            hidden_dim: 16,
            n_layers: 2,
            n_heads: 2,
            context: 20,
            dropout: DropoutConfig::NONE,
            head_dim: 12,
            cnn_kernel: 3,
            n_classes: None,
        }
    }

    fn seqs() -> Vec<Vec<u32>> {
        vec![
            vec![1, 7, 9, 33, 12, 60, 5, 2],
            vec![1, 40, 8, 8, 21, 13, 63, 2],
            vec![1, 6, 6, 50, 19, 27, 11, 2],
        ]
    }

    fn refs(v: &[Vec<u32>]) -> Vec<&[u32]> {
        v.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let data = seqs();
        let batch = refs(&data);
        for arch in [Arch::Lstm, Arch::Causal, Arch::Masked] {
            let model = Model::new(toy(arch), 3).unwrap();
            let report = grad_check(
                &model,
                |m, g| {
                    let out = m.forward_lm(g, &batch, None)?;
                    if arch == Arch::Masked {
                        masked_loss(
                            g,
                            &out,
                            &[vec![(2, 9), (5, 60)], vec![(3, 8)], vec![(1, 6)]],
                        )
                    } else {
                        next_token_loss(g, &out, &batch)
                    }
                },
                1e-5,
                6,
                1,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{arch} LM: {report:?}");
        }
        for arch in [Arch::Lstm, Arch::Causal, Arch::Masked, Arch::Cnn] {
            let model = Model::new(toy(arch).classifier(3), 4).unwrap();
            let report = grad_check(
                &model,
                |m, g| {
                    // Training mode exercises batch statistics in the LSTM head.
                    let mut rng = ChaCha8Rng::seed_from_u64(0);
                    let out = m.forward_classifier(g, &batch, Some(&mut rng))?;
                    class_loss(g, out.logits, &[0, 2, 1])
                },
                1e-5,
                6,
                2,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{arch} classifier: {report:?}");
        }
    }

    #[test]
    fn causal_prefix_invariance_is_bitwise() {
        let model = Model::new(toy(Arch::Causal), 5).unwrap();
        let a = vec![1, 7, 9, 33, 12, 60, 5, 2];
        let base = model.lm_logits(&a).unwrap();
        for t in 0..a.len() {
            let mut b = a.clone();
            b[t] = 40;
            let other = model.lm_logits(&b).unwrap();
            for r in 0..t {
                assert_eq!(
                    base.row(r),
                    other.row(r),
                    "position {r} changed after editing {t}"
                );
            }
        }
    }

    #[test]
    fn masked_model_sees_the_future() {
        let model = Model::new(toy(Arch::Masked), 5).unwrap();
        let a = vec![1, 7, 9, 33, 12, 60, 5, 2];
        let mut b = a.clone();
        b[6] = 40;
        assert_ne!(
            model.lm_logits(&a).unwrap().row(0),
            model.lm_logits(&b).unwrap().row(0)
        );
    }

    #[test]
    fn tied_decoder_follows_embedding_edits() {
        for arch in [Arch::Causal, Arch::Lstm] {
            let mut model = Model::new(toy(arch), 6).unwrap();
            let ids = [1u32, 7, 9, 33, 12];
            let before = model.lm_logits(&ids).unwrap();
            let hidden = model.hidden_states(&ids).unwrap();
            let tok = model.params.id("embed.tok").unwrap();
            let target = 50usize;
            let delta: Vec<f64> = (0..16).map(|k| 0.01 * (k as f64 - 7.5)).collect();
            for (w, d) in model
                .params
                .value_mut(tok)
                .row_mut(target)
                .iter_mut()
                .zip(&delta)
            {
                *w += d;
            }
            let after = model.lm_logits(&ids).unwrap();
            for r in 0..ids.len() {
                for c in 0..64 {
                    if c == target {
                        let expect: f64 =
                            hidden.row(r).iter().zip(&delta).map(|(h, d)| h * d).sum();
                        assert!((after.get(r, c) - before.get(r, c) - expect).abs() < 1e-12);
                    } else {
                        assert_eq!(after.get(r, c), before.get(r, c));
                    }
                }
            }
        }
    }

    #[test]
    fn zero_decoder_gives_vocabulary_perplexity() {
        let mut model = Model::new(toy(Arch::Causal), 7).unwrap();
        let tok = model.params.id("embed.tok").unwrap();
        *model.params.value_mut(tok) = Tensor::zeros(64, 16);
        let data = seqs();
        let batch = refs(&data);
        let mut g = Graph::new(&model.params);
        let out = model.forward_lm(&mut g, &batch, None).unwrap();
        let logits = g.value(out.logits);
        for r in 0..logits.rows() {
            let p = softmax(logits.row(r));
            assert!(p.iter().all(|&x| x == 1.0 / 64.0));
        }
        let loss = next_token_loss(&mut g, &out, &batch).unwrap();
        assert!((g.scalar(loss) - 64f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn classifier_shapes() {
        for arch in [Arch::Lstm, Arch::Causal, Arch::Masked, Arch::Cnn] {
            let model = Model::new(toy(arch).classifier(9), 1).unwrap();
            let (logits, features) = model.classify(&seqs()[0]).unwrap();
            assert_eq!(logits.len(), 9);
            assert_eq!(features.len(), model.config.feature_dim());
            let p = model.class_probs(&seqs()[1]).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let lstm = Model::new(toy(Arch::Lstm).classifier(9), 1).unwrap();
        let fc1 = lstm.params.id("head.fc1.w").unwrap();
        assert_eq!(lstm.params.value(fc1).rows(), 3 * lstm.config.hidden_dim);
    }

    #[test]
    fn cnn_constant_input_pools_to_the_local_feature() {
        let model = Model::new(toy(Arch::Cnn).classifier(3), 2).unwrap();
        let short = vec![9u32; model.config.cnn_min_len()];
        let long = vec![9u32; 40];
        let (_, a) = model.classify(&short).unwrap();
        let (_, b) = model.classify(&long).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        // Shorter than the receptive field: padded rather than rejected.
        assert!(model.classify(&[9, 9]).is_ok());
    }

    #[test]
    fn input_contracts() {
        let model = Model::new(toy(Arch::Causal).classifier(3), 1).unwrap();
        assert!(matches!(
            model.classify(&[7, 9, 2]),
            Err(Error::InputContract(_))
        ));
        assert!(matches!(model.classify(&[]), Err(Error::EmptySequence)));
        let long: Vec<u32> = std::iter::once(1).chain(vec![7; 30]).chain([2]).collect();
        assert!(matches!(
            model.classify(&long),
            Err(Error::ContextOverflow { .. })
        ));
        assert!(matches!(
            model.classify(&[1, 99, 2]),
            Err(Error::InvalidTokenId(99))
        ));
        let lm = Model::new(toy(Arch::Causal), 1).unwrap();
        assert!(lm.lm_logits(&[7, 9, 11]).is_ok());
    }

    #[test]
    fn dropout_is_seeded() {
        let mut cfg = toy(Arch::Lstm);
        cfg.dropout = DropoutConfig::default();
        let model = Model::new(cfg, 1).unwrap();
        let data = seqs();
        let batch = refs(&data);
        let run = |seed: u64| {
            let mut g = Graph::new(&model.params);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = model.forward_lm(&mut g, &batch, Some(&mut rng)).unwrap();
            g.value(out.logits).clone()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
        assert_eq!(
            model.lm_logits(&data[0]).unwrap(),
            model.lm_logits(&data[0]).unwrap()
        );
    }

    #[test]
    fn body_transfer_skips_the_head() {
        let lm = Model::new(toy(Arch::Causal), 1).unwrap();
        let mut clf = Model::new(toy(Arch::Causal).classifier(3), 2).unwrap();
        let copied = clf.load_body_from(&lm).unwrap();
        let body = clf
            .params
            .iter()
            .filter(|(_, p)| p.group != clf.head_group())
            .count();
        assert_eq!(copied, body);
        assert_eq!(
            clf.params.value(clf.params.id("embed.tok").unwrap()),
            lm.params.value(lm.params.id("embed.tok").unwrap())
        );
    }
}
