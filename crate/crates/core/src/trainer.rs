//! The fine-tuning loop: per iteration draw fresh synonym labels and shadow
//! negatives, evaluate the objective, and take one SGD step on the
//! trainable parameter blocks.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{EncoderPair, ParamStore, VideoSample};
use crate::error::{config_err, AceError, Result};
use crate::loss::{total_loss_with_grad, LossConfig, LossFlags};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub temperature: f64,
    /// Truncate every tree to these children counts; `None` keeps the trees
    /// as loaded.
    pub m_per_level: Option<Vec<usize>>,
    pub flags: LossFlags,
    pub rand_weight: f64,
    pub seed: u64,
    /// Parameter blocks that receive updates; every other block is frozen.
    pub trainable: Vec<String>,
    /// Write a checkpoint every this many iterations (CLI only).
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 15,
            learning_rate: 0.01,
            momentum: 0.9,
            temperature: 0.02,
            m_per_level: None,
            flags: LossFlags::full(),
            rand_weight: 1.0,
            seed: 0,
            trainable: vec![
                crate::embedding::VIDEO_PROJ.to_string(),
                crate::embedding::TEXT_PROJ.to_string(),
            ],
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config_err("batch_size must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(config_err("epochs must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(config_err("momentum must lie in [0, 1)"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(config_err("checkpoint_every must be >= 1"));
        }
        self.loss_config().validate()
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            temperature: self.temperature,
            flags: self.flags,
            rand_weight: self.rand_weight,
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub l_fixed: f64,
    pub l_rand: f64,
    pub l_total: f64,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub params: ParamStore,
    pub velocity: ParamStore,
    pub epoch: usize,
    /// Batches already consumed in `epoch`.
    pub batch_in_epoch: usize,
    pub iteration: usize,
    pub rng: ChaCha8Rng,
    pub history: Vec<IterationRecord>,
    pub vocab_hash: String,
    pub config: TrainConfig,
}

impl TrainState {
    /// Mean `l_total` per epoch over the recorded history.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut sums: Vec<(f64, usize)> = Vec::new();
        for r in &self.history {
            if sums.len() <= r.epoch {
                sums.resize(r.epoch + 1, (0.0, 0));
            }
            sums[r.epoch].0 += r.l_total;
            sums[r.epoch].1 += 1;
        }
        sums.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    /// Writes the state with a SHA-256 header line over the JSON payload.
    pub fn save(&self, path: &Path) -> Result<()> {
        let payload = serde_json::to_string(self)?;
        let digest = hex::encode(Sha256::digest(payload.as_bytes()));
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "{CHECKPOINT_MAGIC} sha256={digest}")?;
        f.write_all(payload.as_bytes())?;
        Ok(())
    }

    /// Loads a checkpoint, verifying its checksum.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AceError::IngestError {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let corrupt = || AceError::ChecksumError(path.to_path_buf());
        let (header, payload) = text.split_once('\n').ok_or_else(corrupt)?;
        let digest = header
            .strip_prefix(CHECKPOINT_MAGIC)
            .and_then(|h| h.trim().strip_prefix("sha256="))
            .ok_or_else(corrupt)?;
        if hex::encode(Sha256::digest(payload.as_bytes())) != digest {
            return Err(corrupt());
        }
        serde_json::from_str(payload).map_err(|_| corrupt())
    }
}

const CHECKPOINT_MAGIC: &str = "ACE-CHECKPOINT v1";

/// Drives training over a fixed dataset and vocabulary.
pub struct Trainer<'a, E: EncoderPair> {
    data: &'a [VideoSample],
    vocab: Vocabulary,
    encoders: E,
    state: TrainState,
}

impl<'a, E: EncoderPair> Trainer<'a, E> {
    pub fn new(config: TrainConfig, data: &'a [VideoSample], vocab: &Vocabulary, encoders: E) -> Result<Self> {
        config.validate()?;
        let vocab = prepare_vocab(&config, vocab)?;
        check_data(data, &vocab)?;
        check_trainable(&config, encoders.params())?;
        let state = TrainState {
            params: encoders.params().clone(),
            velocity: encoders.params().zeros_like(),
            epoch: 0,
            batch_in_epoch: 0,
            iteration: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            history: Vec::new(),
            vocab_hash: vocab.content_hash(),
            config,
        };
        Ok(Self {
            data,
            vocab,
            encoders,
            state,
        })
    }

    /// Continues from a saved state. The vocabulary must hash to the value
    /// recorded in the state; the encoder parameters are replaced by the
    /// saved ones.
    pub fn resume(state: TrainState, data: &'a [VideoSample], vocab: &Vocabulary, mut encoders: E) -> Result<Self> {
        let prepared = prepare_vocab(&state.config, vocab)?;
        let hash = prepared.content_hash();
        if hash != state.vocab_hash {
            return Err(AceError::VocabMismatch {
                expected: state.vocab_hash.clone(),
                found: hash,
            });
        }
        check_data(data, &prepared)?;
        if state.params.zeros_like() != encoders.params().zeros_like() {
            return Err(AceError::ShapeError {
                expected: "encoder parameter blocks matching the checkpoint".into(),
                got: "different names or shapes".into(),
            });
        }
        *encoders.params_mut() = state.params.clone();
        Ok(Self {
            data,
            vocab: prepared,
            encoders,
            state,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn encoders(&self) -> &E {
        &self.encoders
    }

    /// Vocabulary after any configured tree truncation.
    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn into_parts(self) -> (E, TrainState) {
        (self.encoders, self.state)
    }

    fn epoch_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(self.state.config.seed);
        shuffle_rng.set_stream(self.state.epoch as u64 + 1);
        order.shuffle(&mut shuffle_rng);
        order
    }

    /// Runs one iteration. Returns `None` once every epoch is done.
    pub fn step(&mut self) -> Result<Option<IterationRecord>> {
        if self.state.is_finished() {
            return Ok(None);
        }
        let cfg = self.state.config.clone();
        let order = self.epoch_order();
        let start = self.state.batch_in_epoch * cfg.batch_size;
        let end = (start + cfg.batch_size).min(order.len());
        let batch: Vec<VideoSample> = order[start..end].iter().map(|&i| self.data[i].clone()).collect();

        let out = total_loss_with_grad(
            &batch,
            &self.vocab,
            &self.encoders,
            &mut self.state.rng,
            &cfg.loss_config(),
        );
        let out = match out {
            Ok(o) => o,
            Err(AceError::NumericsError(msg)) => {
                return Err(AceError::NumericsError(format!(
                    "{msg} at iteration {} (epoch {}); batch {:?}",
                    self.state.iteration,
                    self.state.epoch,
                    batch.iter().map(|s| s.clip_id.as_str()).collect::<Vec<_>>()
                )))
            }
            Err(e) => return Err(e),
        };
        let grads = out.grads.expect("gradient requested");
        if !grads.all_finite() {
            let dump = serde_json::to_string(&out.labels).unwrap_or_default();
            log::error!("non-finite gradient; sampled labels {dump}");
            return Err(AceError::NumericsError(format!(
                "non-finite gradient at iteration {}; batch {:?}; sampled labels {dump}",
                self.state.iteration,
                batch.iter().map(|s| s.clip_id.as_str()).collect::<Vec<_>>()
            )));
        }
        self.apply(&grads, &cfg);

        let record = IterationRecord {
            iteration: self.state.iteration,
            epoch: self.state.epoch,
            l_fixed: out.breakdown.l_fixed,
            l_rand: out.breakdown.l_rand,
            l_total: out.breakdown.l_total,
        };
        self.state.history.push(record.clone());
        self.state.iteration += 1;
        self.state.batch_in_epoch += 1;
        if self.state.batch_in_epoch * cfg.batch_size >= self.data.len() {
            self.state.epoch += 1;
            self.state.batch_in_epoch = 0;
        }
        Ok(Some(record))
    }

    fn apply(&mut self, grads: &ParamStore, cfg: &TrainConfig) {
        let params = self.encoders.params_mut();
        for name in &cfg.trainable {
            let g = grads.get(name).expect("checked at construction");
            let v = self.state.velocity.get_mut(name).expect("velocity mirrors params");
            v.zip_mut_with(g, |v, g| *v = cfg.momentum * *v + g);
            let p = params.get_mut(name).expect("checked at construction");
            p.scaled_add(-cfg.learning_rate, v);
        }
        self.state.params = params.clone();
    }

    /// Runs until finished, calling `on_iter` after every step.
    pub fn run_with<F>(&mut self, mut on_iter: F) -> Result<()>
    where
        F: FnMut(&IterationRecord, &TrainState) -> Result<()>,
    {
        while let Some(r) = self.step()? {
            on_iter(&r, &self.state)?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_with(|_, _| Ok(()))
    }
}

fn prepare_vocab(config: &TrainConfig, vocab: &Vocabulary) -> Result<Vocabulary> {
    let vocab = match &config.m_per_level {
        Some(m) => vocab.truncated(m)?,
        None => vocab.clone(),
    };
    if config.flags.shadow_negatives {
        vocab.validate_for_training()?;
    } else if vocab.len() < 2 {
        return Err(AceError::SchemaError("training needs at least 2 actions".into()));
    }
    Ok(vocab)
}

fn check_data(data: &[VideoSample], vocab: &Vocabulary) -> Result<()> {
    if data.is_empty() {
        return Err(config_err("empty training set"));
    }
    if let Some(s) = data.iter().find(|s| s.label_index >= vocab.len()) {
        return Err(AceError::SchemaError(format!(
            "clip {} has label {} outside 0..{}",
            s.clip_id,
            s.label_index,
            vocab.len()
        )));
    }
    Ok(())
}

fn check_trainable(config: &TrainConfig, params: &ParamStore) -> Result<()> {
    for name in &config.trainable {
        if params.get(name).is_none() {
            return Err(config_err(format!(
                "trainable block {name:?} not found; encoder has {:?}",
                params.names().collect::<Vec<_>>()
            )));
        }
    }
    Ok(())
}

/// Trains `encoders` to completion and returns them with the final state.
pub fn train<E: EncoderPair>(
    config: TrainConfig,
    data: &[VideoSample],
    vocab: &Vocabulary,
    encoders: E,
) -> Result<(E, TrainState)> {
    let mut t = Trainer::new(config, data, vocab, encoders)?;
    t.run()?;
    Ok(t.into_parts())
}

/// Newline-delimited JSON rendering of the metrics log.
pub fn metrics_log(history: &[IterationRecord]) -> String {
    let mut out = String::new();
    for r in history {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{generate_synthetic_dataset, SyntheticConfig};

    fn world() -> crate::embedding::SyntheticDataset {
        generate_synthetic_dataset(&SyntheticConfig {
            num_base: 4,
            num_novel: 2,
            train_per_class: 6,
            test_per_class: 2,
            m_per_level: vec![3, 2],
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 5,
            epochs: 2,
            learning_rate: 0.005,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_rejected() {
        let w = world();
        let c = TrainConfig { epochs: 0, ..cfg() };
        assert!(matches!(
            Trainer::new(c, &w.train, &w.base_vocab, w.encoders.clone()),
            Err(AceError::ConfigError(_))
        ));
    }

    #[test]
    fn unknown_trainable_block_rejected() {
        let w = world();
        let c = TrainConfig {
            trainable: vec!["nope".into()],
            ..cfg()
        };
        assert!(Trainer::new(c, &w.train, &w.base_vocab, w.encoders.clone()).is_err());
    }

    #[test]
    fn iterations_cover_epochs() {
        let w = world();
        let (_, state) = train(cfg(), &w.train, &w.base_vocab, w.encoders.clone()).unwrap();
        // 24 samples, batch 5 -> 5 batches per epoch
        assert_eq!(state.history.len(), 10);
        assert_eq!(state.epoch_means().len(), 2);
        assert!(state
            .history
            .iter()
            .all(|r| (r.l_total - r.l_fixed - r.l_rand).abs() < 1e-12));
        let log = metrics_log(&state.history);
        assert_eq!(log.lines().count(), 10);
        assert!(log.lines().next().unwrap().contains("\"l_total\""));
    }

    #[test]
    fn checksum_detects_corruption() {
        let w = world();
        let mut t = Trainer::new(cfg(), &w.train, &w.base_vocab, w.encoders.clone()).unwrap();
        t.step().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        t.state().save(&path).unwrap();
        let back = TrainState::load(&path).unwrap();
        assert_eq!(&back, t.state());
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replacen("\"iteration\":1", "\"iteration\":2", 1)).unwrap();
        assert!(matches!(TrainState::load(&path), Err(AceError::ChecksumError(_))));
    }
}
