//! The two-layer pronoun scorer.
//!
//! Every candidate gets a span representation and a contextual score `F_c`
//! against the pronoun. Candidates whose softmaxed `F_c` falls below the
//! pruning threshold are dropped. Each survivor is then compared with every
//! other survivor through per-source knowledge embeddings, weighted by a
//! learned attention over sources, and the mean comparison score `F_k` is
//! added to `F_c`. A candidate is predicted when `F_c + F_k > 0`.

mod config;
mod prediction;

pub use config::{width_bucket, HeadSource, KnowledgeSource, ModelConfig, Variant, WIDTH_BUCKETS};
pub use prediction::{
    load_predictions, read_predictions, save_predictions, write_predictions, CandidateRecord, PairAttention,
    PronounPrediction,
};

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{candidates_unchecked, extract_candidates, Document, Mention, PronounInstance};
use crate::error::{Error, Result};
use crate::features::KnowledgeFeatureVector;
use crate::neural::{
    softmax, BiLstm, Dropout, EmbeddingProvider, FeedForward, FeedForwardSpec, Gradients, Graph, ParamId,
    ParameterStore, Var, Vocabulary,
};
use crate::spkb::SpKnowledgeBase;

/// Keeps candidate `n` iff its softmaxed score is at least `threshold`. The
/// best-scoring candidate always survives.
pub fn prune(scores: &[f64], threshold: f64) -> Vec<bool> {
    if scores.is_empty() {
        return Vec::new();
    }
    let probs = softmax(scores);
    let best = probs
        .iter()
        .enumerate()
        .fold(0, |best, (i, p)| if *p > probs[best] { i } else { best });
    probs.iter().enumerate().map(|(i, p)| i == best || *p >= threshold).collect()
}

/// Softmax over per-source attention logits.
pub fn knowledge_attention_weights(betas: &[f64]) -> Vec<f64> {
    softmax(betas)
}

pub fn pairwise_knowledge_score(weights: &[f64], source_scores: &[f64]) -> f64 {
    weights.iter().zip(source_scores).map(|(w, f)| w * f).sum()
}

/// Mean of the pairwise scores against the other survivors; 0 with none.
pub fn overall_knowledge_score(pairwise: &[f64]) -> f64 {
    if pairwise.is_empty() {
        0.0
    } else {
        pairwise.iter().sum::<f64>() / pairwise.len() as f64
    }
}

/// A pronoun together with its candidate window and feature values.
#[derive(Debug, Clone)]
pub struct Instance<'d> {
    pub doc: &'d Document,
    pub pronoun: &'d PronounInstance,
    pub candidates: Vec<&'d Mention>,
    pub features: Vec<KnowledgeFeatureVector>,
    pub gold: Vec<bool>,
}

impl<'d> Instance<'d> {
    pub fn new(doc: &'d Document, pronoun: &'d PronounInstance, kb: &SpKnowledgeBase) -> Result<Self> {
        let candidates = extract_candidates(doc, pronoun)?;
        Ok(Self::build(doc, pronoun, candidates, kb))
    }

    fn build(doc: &'d Document, pronoun: &'d PronounInstance, candidates: Vec<&'d Mention>, kb: &SpKnowledgeBase) -> Self {
        let features = candidates
            .iter()
            .map(|m| KnowledgeFeatureVector::compute(m, pronoun, kb))
            .collect();
        let gold = candidates
            .iter()
            .map(|m| pronoun.gold_refs.contains(&m.mention_id))
            .collect();
        Instance {
            doc,
            pronoun,
            candidates,
            features,
            gold,
        }
    }

    pub fn from_document(doc: &'d Document, kb: &SpKnowledgeBase) -> Vec<Self> {
        doc.pronouns
            .iter()
            .map(|p| Self::build(doc, p, candidates_unchecked(doc, p), kb))
            .collect()
    }

    pub fn from_corpus(docs: &'d [Document], kb: &SpKnowledgeBase) -> Vec<Self> {
        docs.iter().flat_map(|d| Self::from_document(d, kb)).collect()
    }

    pub fn has_gold_candidate(&self) -> bool {
        self.gold.iter().any(|g| *g)
    }
}

/// Span vector and its inner-span attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanRepresentation {
    pub e: Vec<f64>,
    pub attention: Vec<f64>,
}

/// Output of the second layer over a set of survivors.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeLayerOutput {
    /// `F_k` per survivor.
    pub scores: Vec<f64>,
    /// One entry per ordered pair.
    pub pairs: Vec<KnowledgePair>,
}

/// Attention of survivor `candidate` against survivor `other`, as indices
/// into the survivor list.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgePair {
    pub candidate: usize,
    pub other: usize,
    pub weights: Vec<f64>,
    pub source_scores: Vec<f64>,
    pub score: f64,
}

struct PairVars {
    candidate: usize,
    other: usize,
    weights: Var,
    source_scores: Vec<Var>,
    score: Var,
}

struct Pass {
    context: Vec<Var>,
    kept: Vec<bool>,
    knowledge: Vec<Option<Var>>,
    scores: Vec<Option<Var>>,
    pairs: Vec<PairVars>,
}

struct Sentence {
    raw: Vec<Var>,
    states: Vec<Var>,
}

/// Model structure: configuration and parameter handles. Values live in a
/// separate [`ParameterStore`] so the same structure can be evaluated
/// against perturbed parameters.
#[derive(Debug, Clone)]
pub struct Network {
    config: ModelConfig,
    embeddings: EmbeddingProvider,
    width: ParamId,
    encoder: BiLstm,
    span_attention: FeedForward,
    pair: FeedForward,
    tables: Vec<ParamId>,
    weighting: Option<FeedForward>,
    scoring: Option<FeedForward>,
}

impl Network {
    fn build(store: &mut ParameterStore, config: ModelConfig, embeddings: EmbeddingProvider, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        if embeddings.dim() != config.word_dim {
            return Err(Error::Config(format!(
                "word vectors have {} dimensions but word_dim is {}",
                embeddings.dim(),
                config.word_dim
            )));
        }
        let scalar = |input_dim| FeedForwardSpec {
            input_dim,
            hidden_dims: config.ffnn_hidden.clone(),
            output_dim: 1,
            output_bias: false,
        };
        let width = store.add_uniform("width_emb", &[WIDTH_BUCKETS, config.width_dim], rng)?;
        let encoder = BiLstm::new(store, "lstm", config.word_dim, config.lstm_hidden, rng)?;
        let span_attention = FeedForward::new(store, "ffnn_alpha", scalar(config.encoder_dim()), rng)?;
        let pair_name = match config.variant {
            Variant::TwoLayer => "ffnn_c",
            Variant::FeatureConcat => "ffnn_fc",
        };
        let pair = FeedForward::new(store, pair_name, scalar(config.pair_input_dim()), rng)?;
        let tables = config
            .sources
            .iter()
            .map(|s| store.add_uniform(&format!("know.{s}"), &[s.rows(), config.knowledge_dim], rng))
            .collect::<Result<Vec<_>>>()?;
        let (weighting, scoring) = if config.has_knowledge_layer() {
            let weighting = if config.knowledge_attention {
                let o = config.span_dim() + config.knowledge_dim;
                Some(FeedForward::new(store, "ffnn_ka", scalar(3 * o), rng)?)
            } else {
                None
            };
            let scoring = FeedForward::new(store, "ffnn_ks", scalar(3 * config.knowledge_dim), rng)?;
            (weighting, Some(scoring))
        } else {
            (None, None)
        };
        Ok(Network {
            config,
            embeddings,
            width,
            encoder,
            span_attention,
            pair,
            tables,
            weighting,
            scoring,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn embeddings(&self) -> &EmbeddingProvider {
        &self.embeddings
    }

    /// `NN_α`.
    pub fn span_attention_net(&self) -> &FeedForward {
        &self.span_attention
    }

    /// `NN_c`, or the concatenation scorer in that variant.
    pub fn pair_net(&self) -> &FeedForward {
        &self.pair
    }

    /// `NN_ka`; absent without a second layer or with fixed weights.
    pub fn weighting_net(&self) -> Option<&FeedForward> {
        self.weighting.as_ref()
    }

    /// `NN_ks`; absent without a second layer.
    pub fn scoring_net(&self) -> Option<&FeedForward> {
        self.scoring.as_ref()
    }

    fn encode(&self, g: &mut Graph, tokens: &[String], dropout: &mut Dropout) -> Result<Sentence> {
        let raw = self.embeddings.embed_all(g, tokens);
        let states = self
            .encoder
            .encode(g, &raw)?
            .into_iter()
            .map(|s| dropout.apply(g, s))
            .collect();
        Ok(Sentence { raw, states })
    }

    /// Returns `(e, a)` for tokens `start..=end` of an encoded sentence.
    fn span(&self, g: &mut Graph, s: &Sentence, start: usize, end: usize, dropout: &mut Dropout) -> Result<(Var, Var)> {
        if start > end || end >= s.states.len() {
            return Err(Error::EmptyInput("span must cover at least one token of its sentence"));
        }
        let mut alphas = Vec::with_capacity(end - start + 1);
        for t in start..=end {
            alphas.push(self.span_attention.forward(g, s.states[t], dropout)?);
        }
        let alphas = g.concat(&alphas);
        let a = g.softmax(alphas);
        let heads = match self.config.head_source {
            HeadSource::Embedding => &s.raw[start..=end],
            HeadSource::Encoded => &s.states[start..=end],
        };
        let head = g.weighted_sum(a, heads);
        let phi = g.row(self.width, width_bucket(end - start + 1));
        Ok((g.concat(&[s.states[start], s.states[end], head, phi]), a))
    }

    /// Scores each item against `anchor` through `[x, anchor, x ⊙ anchor]`.
    fn pair_scores(&self, g: &mut Graph, items: &[Var], anchor: Var, dropout: &mut Dropout) -> Result<Vec<Var>> {
        let d = g.dim(anchor);
        let expected = self.pair.spec().input_dim;
        if 3 * d != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: 3 * d,
            });
        }
        let fixed = self.pair.first_layer_block(g, d, anchor);
        let mut out = Vec::with_capacity(items.len());
        for &x in items {
            if g.dim(x) != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: g.dim(x),
                });
            }
            let own = self.pair.first_layer_block(g, 0, x);
            let prod = g.mul(x, anchor);
            let joint = self.pair.first_layer_block(g, 2 * d, prod);
            let pre = g.add(own, fixed);
            let pre = g.add(pre, joint);
            out.push(self.pair.forward_from_first(g, pre, dropout));
        }
        Ok(out)
    }

    fn knowledge_rows(&self, g: &mut Graph, features: &[KnowledgeFeatureVector]) -> Vec<Vec<Var>> {
        let mut cache: HashMap<(usize, usize), Var> = HashMap::new();
        features
            .iter()
            .map(|f| {
                self.config
                    .sources
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let v = s.value(f);
                        *cache.entry((i, v)).or_insert_with(|| g.row(self.tables[i], v))
                    })
                    .collect()
            })
            .collect()
    }

    /// Second layer over survivors with span vectors `spans`.
    fn knowledge_layer(
        &self,
        g: &mut Graph,
        spans: &[Var],
        features: &[KnowledgeFeatureVector],
        dropout: &mut Dropout,
    ) -> Result<(Vec<Var>, Vec<PairVars>)> {
        let scoring = self
            .scoring
            .as_ref()
            .ok_or_else(|| Error::Config("model has no knowledge layer".into()))?;
        let m = self.config.sources.len();
        let k = self.knowledge_rows(g, features);
        let o: Vec<Vec<Var>> = spans
            .iter()
            .zip(&k)
            .map(|(e, ks)| ks.iter().map(|kv| g.concat(&[*e, *kv])).collect())
            .collect();
        let projected = self.weighting.as_ref().map(|ka| {
            let width = self.config.span_dim() + self.config.knowledge_dim;
            let left: Vec<Vec<Var>> = o.iter().map(|os| os.iter().map(|x| ka.first_layer_block(g, 0, *x)).collect()).collect();
            let right: Vec<Vec<Var>> = o.iter().map(|os| os.iter().map(|x| ka.first_layer_block(g, width, *x)).collect()).collect();
            (ka, width, left, right)
        });
        let mut source_cache: HashMap<(usize, usize, usize), Var> = HashMap::new();
        let mut scores = Vec::with_capacity(spans.len());
        let mut pairs = Vec::new();
        for a in 0..spans.len() {
            let mut against = Vec::with_capacity(spans.len().saturating_sub(1));
            for b in (0..spans.len()).filter(|b| *b != a) {
                let weights = match &projected {
                    Some((ka, width, left, right)) => {
                        let mut betas = Vec::with_capacity(m);
                        for i in 0..m {
                            let prod = g.mul(o[a][i], o[b][i]);
                            let joint = ka.first_layer_block(g, 2 * width, prod);
                            let pre = g.add(left[a][i], right[b][i]);
                            let pre = g.add(pre, joint);
                            betas.push(ka.forward_from_first(g, pre, dropout));
                        }
                        let betas = g.concat(&betas);
                        g.softmax(betas)
                    }
                    None => g.input(vec![1.0 / m as f64; m]),
                };
                let mut source_scores = Vec::with_capacity(m);
                for (i, s) in self.config.sources.iter().enumerate() {
                    let key = (i, s.value(&features[a]), s.value(&features[b]));
                    let f = match source_cache.get(&key) {
                        Some(f) => *f,
                        None => {
                            let prod = g.mul(k[a][i], k[b][i]);
                            let x = g.concat(&[k[a][i], k[b][i], prod]);
                            let f = scoring.forward(g, x, dropout)?;
                            source_cache.insert(key, f);
                            f
                        }
                    };
                    source_scores.push(f);
                }
                let score = g.weighted_sum(weights, &source_scores);
                against.push(score);
                pairs.push(PairVars {
                    candidate: a,
                    other: b,
                    weights,
                    source_scores,
                    score,
                });
            }
            if !against.is_empty() {
                scores.push(g.mean(&against));
            } else {
                scores.push(g.zeros(1));
            }
        }
        Ok((scores, pairs))
    }

    fn forward(&self, g: &mut Graph, inst: &Instance, threshold: f64, dropout: &mut Dropout) -> Result<Pass> {
        let n = inst.candidates.len();
        let mut pass = Pass {
            context: Vec::with_capacity(n),
            kept: Vec::new(),
            knowledge: vec![None; n],
            scores: vec![None; n],
            pairs: Vec::new(),
        };
        if n == 0 {
            return Ok(pass);
        }
        let p = inst.pronoun;
        let wanted: BTreeSet<usize> = inst
            .candidates
            .iter()
            .map(|m| m.sentence_idx)
            .chain(std::iter::once(p.sentence_idx))
            .collect();
        let mut sentences = HashMap::new();
        for idx in wanted {
            let tokens = inst.doc.sentences.get(idx).ok_or_else(|| {
                Error::validation(&inst.doc.doc_id, "sentence_idx", format!("no sentence {idx}"))
            })?;
            sentences.insert(idx, self.encode(g, tokens, dropout)?);
        }
        let (e_p, _) = self.span(g, &sentences[&p.sentence_idx], p.token_idx, p.token_idx, dropout)?;
        let mut spans = Vec::with_capacity(n);
        for m in &inst.candidates {
            spans.push(self.span(g, &sentences[&m.sentence_idx], m.start, m.end, dropout)?.0);
        }

        pass.context = match self.config.variant {
            Variant::TwoLayer => self.pair_scores(g, &spans, e_p, dropout)?,
            Variant::FeatureConcat => {
                let rows = self.knowledge_rows(g, &inst.features);
                let extended: Vec<Var> = spans
                    .iter()
                    .zip(&rows)
                    .map(|(e, ks)| g.concat(&[&[*e][..], ks].concat()))
                    .collect();
                let slots = g.zeros(self.config.sources.len() * self.config.knowledge_dim);
                let anchor = g.concat(&[e_p, slots]);
                self.pair_scores(g, &extended, anchor, dropout)?
            }
        };
        let values: Vec<f64> = pass.context.iter().map(|v| g.scalar(*v)).collect();
        pass.kept = prune(&values, threshold);

        let survivors: Vec<usize> = (0..n).filter(|i| pass.kept[*i]).collect();
        if self.config.has_knowledge_layer() && survivors.len() > 1 {
            let s_spans: Vec<Var> = survivors.iter().map(|i| spans[*i]).collect();
            let s_feats: Vec<KnowledgeFeatureVector> = survivors.iter().map(|i| inst.features[*i]).collect();
            let (scores, pairs) = self.knowledge_layer(g, &s_spans, &s_feats, dropout)?;
            for (local, fk) in scores.into_iter().enumerate() {
                pass.knowledge[survivors[local]] = Some(fk);
            }
            pass.pairs = pairs
                .into_iter()
                .map(|pv| PairVars {
                    candidate: survivors[pv.candidate],
                    other: survivors[pv.other],
                    ..pv
                })
                .collect();
        }
        for &i in &survivors {
            pass.scores[i] = Some(match pass.knowledge[i] {
                Some(fk) => g.add(pass.context[i], fk),
                None => pass.context[i],
            });
        }
        Ok(pass)
    }

    /// Marginal negative log-likelihood of the correct survivors, or `None`
    /// when no correct candidate survives pruning.
    fn loss(&self, g: &mut Graph, inst: &Instance, threshold: f64, dropout: &mut Dropout) -> Result<Option<Var>> {
        if !inst.has_gold_candidate() {
            return Ok(None);
        }
        let pass = self.forward(g, inst, threshold, dropout)?;
        let mut scores = Vec::new();
        let mut gold = Vec::new();
        for (i, s) in pass.scores.iter().enumerate() {
            if let Some(s) = s {
                if inst.gold[i] {
                    gold.push(scores.len());
                }
                scores.push(*s);
            }
        }
        if gold.is_empty() {
            return Ok(None);
        }
        let all = g.concat(&scores);
        Ok(Some(g.marginal_nll(all, &gold)))
    }

    /// Loss with dropout masks drawn from `ChaCha8Rng::seed_from_u64(seed)`
    /// when `dropout_seed` is given, evaluation mode otherwise.
    pub fn loss_value(
        &self,
        store: &ParameterStore,
        inst: &Instance,
        threshold: f64,
        dropout_seed: Option<u64>,
    ) -> Result<Option<f64>> {
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let mut dropout = self.dropout(rng.as_mut())?;
        let mut g = Graph::new(store);
        Ok(self.loss(&mut g, inst, threshold, &mut dropout)?.map(|l| g.scalar(l)))
    }

    /// Adds the loss gradient into `grads` and returns the loss.
    pub fn accumulate_gradients(
        &self,
        store: &ParameterStore,
        inst: &Instance,
        threshold: f64,
        rng: Option<&mut ChaCha8Rng>,
        grads: &mut Gradients,
    ) -> Result<Option<f64>> {
        let mut dropout = self.dropout(rng)?;
        let mut g = Graph::new(store);
        let Some(loss) = self.loss(&mut g, inst, threshold, &mut dropout)? else {
            return Ok(None);
        };
        g.backward(loss, grads);
        Ok(Some(g.scalar(loss)))
    }

    fn dropout<'r>(&self, rng: Option<&'r mut ChaCha8Rng>) -> Result<Dropout<'r>> {
        match rng {
            Some(r) => Dropout::train(self.config.dropout, r),
            None => Ok(Dropout::eval()),
        }
    }

    pub fn resolve(&self, store: &ParameterStore, inst: &Instance, threshold: f64) -> Result<PronounPrediction> {
        let mut g = Graph::new(store);
        let pass = self.forward(&mut g, inst, threshold, &mut Dropout::eval())?;
        let values: Vec<f64> = pass.context.iter().map(|v| g.scalar(*v)).collect();
        let probs = softmax(&values);
        let layer = self.config.has_knowledge_layer();
        let candidates = inst
            .candidates
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let kept = pass.kept[i];
                let score = pass.scores[i].map(|s| g.scalar(s));
                let knowledge_score = match pass.knowledge[i] {
                    Some(k) => Some(g.scalar(k)),
                    None if kept && layer => Some(0.0),
                    None => None,
                };
                CandidateRecord {
                    mention_id: m.mention_id.clone(),
                    context_score: values[i],
                    pruning_probability: probs[i],
                    kept,
                    knowledge_score,
                    score,
                    predicted: kept && score.is_some_and(|s| s > 0.0),
                }
            })
            .collect();
        let attention_trace = pass
            .pairs
            .iter()
            .map(|pv| PairAttention {
                candidate: inst.candidates[pv.candidate].mention_id.clone(),
                other: inst.candidates[pv.other].mention_id.clone(),
                weights: g.value(pv.weights).to_vec(),
                source_scores: pv.source_scores.iter().map(|f| g.scalar(*f)).collect(),
                score: g.scalar(pv.score),
            })
            .collect();
        Ok(PronounPrediction {
            doc_id: inst.doc.doc_id.clone(),
            pronoun_id: inst.pronoun.pronoun_id.clone(),
            sources: self.config.sources.clone(),
            candidates,
            attention_trace,
        })
    }
}

/// A network together with its parameter values.
#[derive(Debug, Clone)]
pub struct Model {
    network: Network,
    params: ParameterStore,
}

impl Model {
    /// Randomly initialized model with trainable word embeddings over `vocab`.
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterStore::new();
        let embeddings = EmbeddingProvider::random(&mut params, vocab, config.word_dim, &mut rng)?;
        let network = Network::build(&mut params, config, embeddings, &mut rng)?;
        Ok(Model { network, params })
    }

    /// Model whose word embeddings are read from a vector file and frozen.
    pub fn with_pretrained(config: ModelConfig, vectors: &Path, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterStore::new();
        let embeddings = EmbeddingProvider::pretrained(&mut params, vectors)?;
        let network = Network::build(&mut params, config, embeddings, &mut rng)?;
        Ok(Model { network, params })
    }

    pub fn config(&self) -> &ModelConfig {
        self.network.config()
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    pub fn parts_mut(&mut self) -> (&Network, &mut ParameterStore) {
        (&self.network, &mut self.params)
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        self.network.embeddings.vocabulary()
    }

    pub fn resolve(&self, inst: &Instance, threshold: f64) -> Result<PronounPrediction> {
        self.network.resolve(&self.params, inst, threshold)
    }

    pub fn resolve_document(&self, doc: &Document, kb: &SpKnowledgeBase, threshold: f64) -> Result<Vec<PronounPrediction>> {
        Instance::from_document(doc, kb)
            .iter()
            .map(|inst| self.resolve(inst, threshold))
            .collect()
    }

    /// Resolves every pronoun of `docs`, in corpus order, on up to `jobs` threads.
    pub fn resolve_corpus(
        &self,
        docs: &[Document],
        kb: &SpKnowledgeBase,
        threshold: f64,
        jobs: usize,
    ) -> Result<Vec<PronounPrediction>> {
        let jobs = jobs.max(1).min(docs.len().max(1));
        if jobs == 1 {
            let mut out = Vec::new();
            for d in docs {
                out.extend(self.resolve_document(d, kb, threshold)?);
            }
            return Ok(out);
        }
        let chunk = docs.len().div_ceil(jobs);
        let parts: Vec<Result<Vec<PronounPrediction>>> = std::thread::scope(|s| {
            let handles: Vec<_> = docs
                .chunks(chunk)
                .map(|part| {
                    s.spawn(move || {
                        let mut out = Vec::new();
                        for d in part {
                            out.extend(self.resolve_document(d, kb, threshold)?);
                        }
                        Ok(out)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("resolver thread panicked")).collect()
        });
        let mut out = Vec::new();
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Evaluation-mode loss.
    pub fn loss(&self, inst: &Instance, threshold: f64) -> Result<Option<f64>> {
        self.network.loss_value(&self.params, inst, threshold, None)
    }

    pub fn accumulate_gradients(
        &self,
        inst: &Instance,
        threshold: f64,
        rng: Option<&mut ChaCha8Rng>,
        grads: &mut Gradients,
    ) -> Result<Option<f64>> {
        self.network.accumulate_gradients(&self.params, inst, threshold, rng, grads)
    }

    /// Span representation of `tokens[start..=end]` inside sentence `tokens`.
    pub fn span_representation(&self, tokens: &[String], start: usize, end: usize) -> Result<SpanRepresentation> {
        let mut g = Graph::new(&self.params);
        let mut dropout = Dropout::eval();
        let sentence = self.network.encode(&mut g, tokens, &mut dropout)?;
        let (e, a) = self.network.span(&mut g, &sentence, start, end, &mut dropout)?;
        Ok(SpanRepresentation {
            e: g.value(e).to_vec(),
            attention: g.value(a).to_vec(),
        })
    }

    /// `F_c` for span vectors of a candidate and a pronoun.
    pub fn context_score(&self, e_n: &[f64], e_p: &[f64]) -> Result<f64> {
        if self.config().variant != Variant::TwoLayer {
            return Err(Error::Config("context_score needs the two-layer variant".into()));
        }
        if e_n.len() != e_p.len() {
            return Err(Error::DimensionMismatch {
                expected: e_p.len(),
                actual: e_n.len(),
            });
        }
        let mut g = Graph::new(&self.params);
        let x = g.input(e_n.to_vec());
        let p = g.input(e_p.to_vec());
        let s = self.network.pair_scores(&mut g, &[x], p, &mut Dropout::eval())?;
        Ok(g.scalar(s[0]))
    }

    /// Concatenation-variant score of a candidate with feature values `features`.
    pub fn feature_concat_score(&self, e_n: &[f64], e_p: &[f64], features: &KnowledgeFeatureVector) -> Result<f64> {
        if self.config().variant != Variant::FeatureConcat {
            return Err(Error::Config("feature_concat_score needs the feature_concat variant".into()));
        }
        let mut g = Graph::new(&self.params);
        let x = g.input(e_n.to_vec());
        let p = g.input(e_p.to_vec());
        let rows = self.network.knowledge_rows(&mut g, std::slice::from_ref(features));
        let x = g.concat(&[&[x][..], &rows[0]].concat());
        let slots = g.zeros(self.config().sources.len() * self.config().knowledge_dim);
        let anchor = g.concat(&[p, slots]);
        let s = self.network.pair_scores(&mut g, &[x], anchor, &mut Dropout::eval())?;
        Ok(g.scalar(s[0]))
    }

    /// Embedding row of `value` for `source`.
    pub fn knowledge_embedding(&self, source: KnowledgeSource, value: usize) -> Result<Vec<f64>> {
        let i = self
            .config()
            .sources
            .iter()
            .position(|s| *s == source)
            .ok_or_else(|| Error::Config(format!("source {source} is disabled")))?;
        if value >= source.rows() {
            return Err(Error::Config(format!("{source} has no value {value}")));
        }
        let d = self.config().knowledge_dim;
        Ok(self.params.values(self.network.tables[i])[value * d..(value + 1) * d].to_vec())
    }

    /// Second layer over survivors given their span vectors and features.
    pub fn knowledge_layer(&self, spans: &[Vec<f64>], features: &[KnowledgeFeatureVector]) -> Result<KnowledgeLayerOutput> {
        if spans.len() != features.len() {
            return Err(Error::DimensionMismatch {
                expected: spans.len(),
                actual: features.len(),
            });
        }
        if let Some(bad) = spans.iter().find(|e| e.len() != self.config().span_dim()) {
            return Err(Error::DimensionMismatch {
                expected: self.config().span_dim(),
                actual: bad.len(),
            });
        }
        let mut g = Graph::new(&self.params);
        let vars: Vec<Var> = spans.iter().map(|e| g.input(e.clone())).collect();
        let (scores, pairs) = self.network.knowledge_layer(&mut g, &vars, features, &mut Dropout::eval())?;
        Ok(KnowledgeLayerOutput {
            scores: scores.iter().map(|v| g.scalar(*v)).collect(),
            pairs: pairs
                .iter()
                .map(|p| KnowledgePair {
                    candidate: p.candidate,
                    other: p.other,
                    weights: g.value(p.weights).to_vec(),
                    source_scores: p.source_scores.iter().map(|f| g.scalar(*f)).collect(),
                    score: g.scalar(p.score),
                })
                .collect(),
        })
    }
}
