use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParameterStore};
use crate::error::{Error, Result};

/// Inverted-dropout mask: kept units are scaled by `1 / (1 - rate)`.
fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::InvalidDropout(rate))
    }
}

pub fn dropout<R: Rng + ?Sized>(x: &[f64], rate: f64, training: bool, rng: &mut R) -> Result<Vec<f64>> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(x.to_vec());
    }
    let mask = dropout_mask(x.len(), rate, rng);
    Ok(x.iter().zip(mask).map(|(v, m)| v * m).collect())
}

/// Dropout state threaded through a forward pass. `None` rng means evaluation mode.
pub struct Dropout<'r> {
    rate: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> Dropout<'r> {
    pub fn eval() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn train(rate: f64, rng: &'r mut ChaCha8Rng) -> Result<Self> {
        check_rate(rate)?;
        Ok(Dropout { rate, rng: Some(rng) })
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Var {
        match self.rng.as_deref_mut() {
            Some(rng) if self.rate > 0.0 => {
                let mask = dropout_mask(g.dim(x), self.rate, rng);
                g.mask(x, mask)
            }
            _ => x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedForwardSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    /// Scalar scorers whose outputs only enter a softmax carry no output bias.
    pub output_bias: bool,
}

#[derive(Debug, Clone)]
struct Dense {
    weight: ParamId,
    bias: Option<ParamId>,
}

/// Rectifier feed-forward network with dropout on every hidden layer.
#[derive(Debug, Clone)]
pub struct FeedForward {
    spec: FeedForwardSpec,
    layers: Vec<Dense>,
}

impl FeedForward {
    pub fn new(store: &mut ParameterStore, name: &str, spec: FeedForwardSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut layers = Vec::new();
        let mut fan_in = spec.input_dim;
        let n_hidden = spec.hidden_dims.len();
        for (i, &out) in spec.hidden_dims.iter().chain(std::iter::once(&spec.output_dim)).enumerate() {
            let weight = store.add_uniform(&format!("{name}.{i}.w"), &[out, fan_in], rng)?;
            let bias = if i < n_hidden || spec.output_bias {
                Some(store.add_uniform(&format!("{name}.{i}.b"), &[out], rng)?)
            } else {
                None
            };
            layers.push(Dense { weight, bias });
            fan_in = out;
        }
        Ok(FeedForward { spec, layers })
    }

    pub fn spec(&self) -> &FeedForwardSpec {
        &self.spec
    }

    pub fn forward(&self, g: &mut Graph, x: Var, dropout: &mut Dropout) -> Result<Var> {
        if g.dim(x) != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                actual: g.dim(x),
            });
        }
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = g.linear(layer.weight, layer.bias, h);
            if i < last {
                h = g.relu(h);
                h = dropout.apply(g, h);
            }
        }
        Ok(h)
    }

    /// First-layer product with the input columns `start..start + dim(x)`,
    /// without bias. Summing the blocks of a concatenated input and handing the
    /// total to [`FeedForward::forward_from_first`] equals [`FeedForward::forward`].
    pub fn first_layer_block(&self, g: &mut Graph, start: usize, x: Var) -> Var {
        g.linear_cols(self.layers[0].weight, start, x)
    }

    pub fn forward_from_first(&self, g: &mut Graph, pre: Var, dropout: &mut Dropout) -> Var {
        let last = self.layers.len() - 1;
        let mut h = pre;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = g.linear(layer.weight, layer.bias, h);
            } else if let Some(b) = layer.bias {
                let bias = g.param(b);
                h = g.add(h, bias);
            }
            if i < last {
                h = g.relu(h);
                h = dropout.apply(g, h);
            }
        }
        h
    }
}

/// Applies `net` to `input` with evaluation-mode dropout and returns plain values.
pub fn ffnn_apply(net: &FeedForward, store: &ParameterStore, input: &[f64]) -> Result<Vec<f64>> {
    let mut g = Graph::new(store);
    let x = g.input(input.to_vec());
    let y = net.forward(&mut g, x, &mut Dropout::eval())?;
    Ok(g.value(y).to_vec())
}

/// One LSTM direction with gate order input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct Lstm {
    weight: ParamId,
    bias: ParamId,
    input_dim: usize,
    hidden: usize,
}

impl Lstm {
    pub fn new(store: &mut ParameterStore, name: &str, input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Lstm {
            weight: store.add_uniform(&format!("{name}.w"), &[4 * hidden, input_dim + hidden], rng)?,
            bias: store.add_uniform(&format!("{name}.b"), &[4 * hidden], rng)?,
            input_dim,
            hidden,
        })
    }

    fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> (Var, Var) {
        let n = self.hidden;
        let xh = g.concat(&[x, h]);
        let z = g.linear(self.weight, Some(self.bias), xh);
        let zi = g.slice(z, 0, n);
        let zf = g.slice(z, n, n);
        let zg = g.slice(z, 2 * n, n);
        let zo = g.slice(z, 3 * n, n);
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let cand = g.tanh(zg);
        let o = g.sigmoid(zo);
        let keep = g.mul(f, c);
        let write = g.mul(i, cand);
        let c_next = g.add(keep, write);
        let squashed = g.tanh(c_next);
        (g.mul(o, squashed), c_next)
    }

    fn run(&self, g: &mut Graph, xs: impl Iterator<Item = Var>) -> Vec<Var> {
        let mut h = g.zeros(self.hidden);
        let mut c = g.zeros(self.hidden);
        let mut out = Vec::new();
        for x in xs {
            (h, c) = self.step(g, x, h, c);
            out.push(h);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct BiLstm {
    forward: Lstm,
    backward: Lstm,
}

impl BiLstm {
    pub fn new(store: &mut ParameterStore, name: &str, input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(BiLstm {
            forward: Lstm::new(store, &format!("{name}.fwd"), input_dim, hidden, rng)?,
            backward: Lstm::new(store, &format!("{name}.bwd"), input_dim, hidden, rng)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden
    }

    /// Encodes a sequence; output `t` is `[forward_t, backward_t]`.
    pub fn encode(&self, g: &mut Graph, xs: &[Var]) -> Result<Vec<Var>> {
        if xs.is_empty() {
            return Err(Error::EmptyInput("recurrent encoder needs at least one token"));
        }
        if let Some(bad) = xs.iter().find(|x| g.dim(**x) != self.forward.input_dim) {
            return Err(Error::DimensionMismatch {
                expected: self.forward.input_dim,
                actual: g.dim(*bad),
            });
        }
        let fwd = self.forward.run(g, xs.iter().copied());
        let mut bwd = self.backward.run(g, xs.iter().rev().copied());
        bwd.reverse();
        Ok(fwd.into_iter().zip(bwd).map(|(f, b)| g.concat(&[f, b])).collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from words in the given order, skipping repeats.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocabulary::default();
        for w in words {
            let w = w.into();
            if !v.index.contains_key(&w) {
                v.index.insert(w.clone(), v.words.len());
                v.words.push(w);
            }
        }
        v
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    TrainableRandom,
    PretrainedFile,
}

/// Token lookup table. Tokens are lowercased; unknown tokens embed as zeros.
#[derive(Debug, Clone)]
pub struct EmbeddingProvider {
    vocab: Vocabulary,
    dim: usize,
    mode: EmbeddingMode,
    table: ParamId,
}

impl EmbeddingProvider {
    pub fn random(store: &mut ParameterStore, vocab: Vocabulary, dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let rows = vocab.len().max(1);
        let table = store.add_uniform("word_emb", &[rows, dim], rng)?;
        Ok(EmbeddingProvider {
            vocab,
            dim,
            mode: EmbeddingMode::TrainableRandom,
            table,
        })
    }

    /// Frozen table from a `word v1 ... vd` text file.
    pub fn pretrained(store: &mut ParameterStore, path: &Path) -> Result<Self> {
        let (vocab, values, dim) = load_vectors(path)?;
        let table = store.add("word_emb", &[vocab.len(), dim], values, false)?;
        Ok(EmbeddingProvider {
            vocab,
            dim,
            mode: EmbeddingMode::PretrainedFile,
            table,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> EmbeddingMode {
        self.mode
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn embed(&self, g: &mut Graph, token: &str) -> Var {
        match self.vocab.get(&token.to_lowercase()) {
            Some(row) => g.row(self.table, row),
            None => g.zeros(self.dim),
        }
    }

    pub fn embed_all(&self, g: &mut Graph, tokens: &[String]) -> Vec<Var> {
        tokens.iter().map(|t| self.embed(g, t)).collect()
    }

    /// Plain-value lookup of a token sequence.
    pub fn embed_tokens(&self, store: &ParameterStore, tokens: &[String]) -> Vec<Vec<f64>> {
        let table = store.values(self.table);
        tokens
            .iter()
            .map(|t| match self.vocab.get(&t.to_lowercase()) {
                Some(row) => table[row * self.dim..(row + 1) * self.dim].to_vec(),
                None => vec![0.0; self.dim],
            })
            .collect()
    }
}

/// Reads a whitespace-separated vector file: one `word v1 ... vd` per line.
pub fn load_vectors(path: &Path) -> Result<(Vocabulary, Vec<f64>, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut words = Vec::new();
    let mut values = Vec::new();
    let mut dim = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut cols = line.split_whitespace();
        let Some(word) = cols.next() else { continue };
        let row: Vec<f64> = cols
            .map(|c| c.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected {d} values, found {}", row.len()),
                })
            }
            _ => {}
        }
        words.push(word.to_lowercase());
        values.extend(row);
    }
    let dim = dim.ok_or(Error::EmptyInput("vector file has no rows"))?;
    let vocab = Vocabulary::new(words.iter().cloned());
    if vocab.len() != words.len() {
        return Err(Error::Config(format!("{}: repeated word in vector file", path.display())));
    }
    Ok((vocab, values, dim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    #[test]
    fn dropout_eval_and_zero_rate_are_identity() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let mut r = rng();
        assert_eq!(dropout(&x, 0.2, false, &mut r).unwrap(), x);
        assert_eq!(dropout(&x, 0.0, true, &mut r).unwrap(), x);
        assert!(matches!(dropout(&x, 1.0, true, &mut r), Err(Error::InvalidDropout(_))));
        assert!(dropout(&x, -0.1, false, &mut r).is_err());
    }

    #[test]
    fn inverted_dropout_preserves_mean() {
        let x = vec![1.0; 100_000];
        let y = dropout(&x, 0.2, true, &mut rng()).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
        assert!(y.iter().all(|v| *v == 0.0 || (*v - 1.25).abs() < 1e-12));
    }

    #[test]
    fn embeddings_zero_for_oov_and_deterministic() {
        let mut store = ParameterStore::new();
        let emb = EmbeddingProvider::random(&mut store, Vocabulary::new(["cat", "dog"]), 4, &mut rng()).unwrap();
        let toks: Vec<String> = ["cat", "zebra", "Cat"].iter().map(|s| s.to_string()).collect();
        let rows = emb.embed_tokens(&store, &toks);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1], vec![0.0; 4]);
        assert_eq!(rows[0], rows[2]);
        assert!(emb.embed_tokens(&store, &[]).is_empty());
    }

    #[test]
    fn pretrained_vectors_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vec.txt");
        std::fs::write(&path, "cat 0.5 1\ndog -1 2\n").unwrap();
        let mut store = ParameterStore::new();
        let emb = EmbeddingProvider::pretrained(&mut store, &path).unwrap();
        assert_eq!(emb.dim(), 2);
        assert_eq!(emb.mode(), EmbeddingMode::PretrainedFile);
        let rows = emb.embed_tokens(&store, &["dog".to_string(), "owl".to_string()]);
        assert_eq!(rows, vec![vec![-1.0, 2.0], vec![0.0, 0.0]]);
        std::fs::write(&path, "cat 0.5 1\ndog -1\n").unwrap();
        assert!(matches!(load_vectors(&path), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn bilstm_shapes() {
        let mut store = ParameterStore::new();
        let mut r = rng();
        let lstm = BiLstm::new(&mut store, "lstm", 3, 5, &mut r).unwrap();
        let mut g = Graph::new(&store);
        assert!(lstm.encode(&mut g, &[]).is_err());
        let x = g.input(vec![0.1, 0.2, 0.3]);
        let out = lstm.encode(&mut g, &[x]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(g.dim(out[0]), 10);
        let bad = g.input(vec![0.0; 2]);
        assert!(matches!(lstm.encode(&mut g, &[bad]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn bilstm_default_width() {
        let mut store = ParameterStore::new();
        let lstm = BiLstm::new(&mut store, "lstm", 50, 200, &mut rng()).unwrap();
        assert_eq!(lstm.output_dim(), 400);
    }

    #[test]
    fn bilstm_outputs_see_both_directions() {
        let mut store = ParameterStore::new();
        let lstm = BiLstm::new(&mut store, "lstm", 2, 3, &mut rng()).unwrap();
        let encode_first = |last: f64| {
            let mut g = Graph::new(&store);
            let xs = vec![g.input(vec![0.3, -0.2]), g.input(vec![0.1, last])];
            let out = lstm.encode(&mut g, &xs).unwrap();
            g.value(out[0]).to_vec()
        };
        let (a, b) = (encode_first(0.5), encode_first(-0.5));
        assert_eq!(a[..3], b[..3], "forward half only sees the prefix");
        assert_ne!(a[3..], b[3..], "backward half sees the suffix");
    }

    #[test]
    fn ffnn_zero_output_layer_gives_zero() {
        let mut store = ParameterStore::new();
        let spec = FeedForwardSpec {
            input_dim: 4,
            hidden_dims: vec![6, 6],
            output_dim: 1,
            output_bias: true,
        };
        let net = FeedForward::new(&mut store, "nn", spec, &mut rng()).unwrap();
        let input = [0.3, -0.1, 0.7, 0.2];
        let first = ffnn_apply(&net, &store, &input).unwrap();
        assert_eq!(first, ffnn_apply(&net, &store, &input).unwrap());
        assert!(matches!(
            ffnn_apply(&net, &store, &input[..3]),
            Err(Error::DimensionMismatch { expected: 4, actual: 3 })
        ));
        for name in ["nn.2.w", "nn.2.b"] {
            let id = store.id(name).unwrap();
            store.values_mut(id).iter_mut().for_each(|v| *v = 0.0);
        }
        assert_eq!(ffnn_apply(&net, &store, &input).unwrap(), vec![0.0]);
    }

    #[test]
    fn block_first_layer_matches_concatenated_input() {
        let mut store = ParameterStore::new();
        let spec = FeedForwardSpec {
            input_dim: 5,
            hidden_dims: vec![4],
            output_dim: 1,
            output_bias: false,
        };
        let net = FeedForward::new(&mut store, "nn", spec, &mut rng()).unwrap();
        let (a, b) = (vec![0.4, -0.3], vec![0.9, 0.1, -0.6]);
        let whole = ffnn_apply(&net, &store, &[a.clone(), b.clone()].concat()).unwrap();
        let mut g = Graph::new(&store);
        let (va, vb) = (g.input(a), g.input(b));
        let pa = net.first_layer_block(&mut g, 0, va);
        let pb = net.first_layer_block(&mut g, 2, vb);
        let pre = g.add(pa, pb);
        let out = net.forward_from_first(&mut g, pre, &mut Dropout::eval());
        assert!((g.scalar(out) - whole[0]).abs() < 1e-12);
    }
}
