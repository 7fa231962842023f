//! Marginal-likelihood training with Adam, dev-set epoch selection and
//! checkpoint storage.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::eval::score_predictions;
use crate::model::{Instance, Model, ModelConfig};
use crate::neural::{log_sum_exp, Gradients, ParameterStore, Vocabulary};
use crate::spkb::SpKnowledgeBase;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub prune_threshold: f64,
    pub seed: u64,
    /// Frozen word vectors; random trainable embeddings when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrained_vectors: Option<PathBuf>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            prune_threshold: 1e-7,
            seed: 0,
            pretrained_vectors: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("moment decay rates must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.prune_threshold) {
            return Err(Error::Config("prune_threshold must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// `-ln(Σ_{c ∈ C} e^{F_c} / Σ_n e^{F_n})` over survivor scores, or `None`
/// when no survivor is correct.
pub fn pronoun_loss(scores: &[f64], correct: &[bool]) -> Option<f64> {
    let gold: Vec<f64> = scores.iter().zip(correct).filter(|(_, c)| **c).map(|(s, _)| *s).collect();
    if gold.is_empty() {
        return None;
    }
    Some((log_sum_exp(scores.iter().copied()) - log_sum_exp(gold.iter().copied())).max(0.0))
}

/// Adam over every trainable array of a store.
#[derive(Debug, Clone)]
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParameterStore, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        Adam {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn from_config(store: &ParameterStore, c: &TrainConfig) -> Self {
        Self::new(store, c.learning_rate, c.beta1, c.beta2, c.epsilon)
    }

    /// Applies one update and rounds the parameters back onto the `f32` grid.
    pub fn step(&mut self, store: &mut ParameterStore, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
        for id in ids {
            let g = grads.get(id);
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            for (((w, gi), mi), vi) in store.values_mut(id).iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let update = self.learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + self.epsilon);
                *w = (*w - update) as f32 as f64;
            }
        }
    }
}

/// Lowercased tokens of `docs` in order of first appearance.
pub fn build_vocabulary(docs: &[Document]) -> Vocabulary {
    Vocabulary::new(docs.iter().flat_map(|d| d.sentences.iter().flatten().map(|t| t.to_lowercase())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub trained_pronouns: usize,
    pub skipped_pronouns: usize,
    pub dev_f1: f64,
}

pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters `model` holds.
    pub best_epoch: usize,
}

/// 1-based index of the highest value; ties go to the earlier epoch.
pub fn select_best_epoch(dev_f1: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, f) in dev_f1.iter().enumerate() {
        if best.is_none_or(|(_, b)| *f > b) {
            best = Some((i, *f));
        }
    }
    best.map(|(i, _)| i + 1)
}

pub fn initial_model(train_docs: &[Document], config: &TrainConfig) -> Result<Model> {
    config.validate()?;
    match &config.pretrained_vectors {
        Some(path) => Model::with_pretrained(config.model.clone(), path, config.seed),
        None => Model::new(config.model.clone(), build_vocabulary(train_docs), config.seed),
    }
}

/// One pass over `instances` in order with one update per trainable pronoun.
/// Returns `(mean loss, trained, skipped)`.
pub fn train_epoch(
    model: &mut Model,
    adam: &mut Adam,
    instances: &[Instance],
    threshold: f64,
    rng: &mut ChaCha8Rng,
    grads: &mut Gradients,
) -> Result<(f64, usize, usize)> {
    let (mut total, mut trained, mut skipped) = (0.0, 0, 0);
    for inst in instances {
        grads.clear();
        let (network, params) = model.parts_mut();
        match network.accumulate_gradients(params, inst, threshold, Some(&mut *rng), grads)? {
            Some(loss) => {
                adam.step(params, grads);
                total += loss;
                trained += 1;
            }
            None => skipped += 1,
        }
    }
    let mean = if trained == 0 { 0.0 } else { total / trained as f64 };
    Ok((mean, trained, skipped))
}

/// Trains for `config.epochs` epochs and returns the parameters of the epoch
/// with the best dev F1. Without dev documents the last epoch is returned.
pub fn train(train_docs: &[Document], dev_docs: &[Document], kb: &SpKnowledgeBase, config: &TrainConfig) -> Result<TrainOutcome> {
    let mut model = initial_model(train_docs, config)?;
    let instances = Instance::from_corpus(train_docs, kb);
    if !instances.iter().any(Instance::has_gold_candidate) {
        return Err(Error::NoTrainablePronouns);
    }
    let mut adam = Adam::from_config(model.params(), config);
    let mut grads = Gradients::zeros_like(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, ParameterStore)> = None;
    for epoch in 1..=config.epochs {
        let (mean_loss, trained, skipped) =
            train_epoch(&mut model, &mut adam, &instances, config.prune_threshold, &mut rng, &mut grads)?;
        if trained == 0 {
            return Err(Error::NoTrainablePronouns);
        }
        if !model.params().all_finite() {
            return Err(Error::Config(format!("parameters diverged in epoch {epoch}")));
        }
        let dev_f1 = if dev_docs.is_empty() {
            0.0
        } else {
            let preds = model.resolve_corpus(dev_docs, kb, config.prune_threshold, 1)?;
            score_predictions(&preds, dev_docs)?.all.f1
        };
        info!("epoch {epoch}: loss {mean_loss:.4} over {trained} pronouns ({skipped} skipped), dev F1 {dev_f1:.4}");
        let improves = match &best {
            None => true,
            Some((_, f, _)) => dev_f1 > *f || dev_docs.is_empty(),
        };
        if improves {
            best = Some((epoch, dev_f1, model.params().clone()));
        }
        history.push(EpochRecord {
            epoch,
            mean_loss,
            trained_pronouns: trained,
            skipped_pronouns: skipped,
            dev_f1,
        });
    }
    let (best_epoch, _, params) = best.expect("at least one epoch");
    *model.params_mut() = params;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into `params.bin`.
    offset: usize,
    trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: u32,
    config: ModelConfig,
    vocabulary: Vec<String>,
    arrays: Vec<ArrayEntry>,
}

const MANIFEST: &str = "manifest.json";
const PARAMS: &str = "params.bin";

/// Writes `manifest.json` and `params.bin` under `dir`.
pub fn save_checkpoint(model: &Model, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut arrays = Vec::new();
    let mut bytes = Vec::with_capacity(4 * model.params().num_values());
    for (_, p) in model.params().iter() {
        arrays.push(ArrayEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            offset: bytes.len(),
            trainable: p.trainable,
        });
        for v in &p.values {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: 1,
        config: model.config().clone(),
        vocabulary: model.vocabulary().words().to_vec(),
        arrays,
    };
    let path = dir.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    let path = dir.join(PARAMS);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Model> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if manifest.format != 1 {
        return Err(Error::Checkpoint(format!("unsupported format {}", manifest.format)));
    }
    let path = dir.join(PARAMS);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let mut model = Model::new(manifest.config, Vocabulary::new(manifest.vocabulary), 0)?;
    if manifest.arrays.len() != model.params().len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} arrays, configuration needs {}",
            manifest.arrays.len(),
            model.params().len()
        )));
    }
    let mut end = 0;
    for entry in &manifest.arrays {
        let id = model
            .params()
            .id(&entry.name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected array {}", entry.name)))?;
        let expected = model.params().get(id).shape.clone();
        if expected != entry.shape {
            return Err(Error::ShapeMismatch {
                name: entry.name.clone(),
                expected,
                found: entry.shape.clone(),
            });
        }
        let n: usize = entry.shape.iter().product();
        let stop = entry.offset + 4 * n;
        let raw = bytes
            .get(entry.offset..stop)
            .ok_or_else(|| Error::Checkpoint(format!("{PARAMS} truncated inside array {}", entry.name)))?;
        let values = model.params_mut().values_mut(id);
        for (dst, chunk) in values.iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")) as f64;
        }
        model.params_mut().set_trainable(id, entry.trainable);
        end = end.max(stop);
    }
    if end != bytes.len() {
        return Err(Error::Checkpoint(format!("{PARAMS} has {} bytes, manifest covers {end}", bytes.len())));
    }
    if !model.params().all_finite() {
        return Err(Error::Checkpoint("non-finite parameter value".into()));
    }
    Ok(model)
}
