//! Leaf-averaged video-text similarity, class probabilities with an optional
//! shadow-negative column, and the fixed-label and randomized-synonym
//! classification losses.
//!
//! The scalar functions at the top work on plain numbers. [`total_loss`] and
//! [`total_loss_with_grad`] run one training step's worth of label sampling,
//! encoding and loss evaluation against any [`EncoderPair`].

use std::fmt;
use std::str::FromStr;

use indexmap::IndexSet;
use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedding, EncoderPair, ParamStore, VideoSample};
use crate::error::{config_err, AceError, Result};
use crate::vocab::{ActionLabel, Vocabulary};

/// Which parts of the objective are active.
///
/// Deserializes from a table of booleans (missing keys on) or from the
/// string form accepted by [`FromStr`](#impl-FromStr-for-LossFlags).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "FlagsRepr")]
pub struct LossFlags {
    /// Average similarity over a label's children instead of the label alone.
    pub leaf_augment: bool,
    /// Add one shadow negative per sample to the softmax denominator.
    pub shadow_negatives: bool,
    /// Classify against randomized synonym labels as well.
    pub l_rand: bool,
    /// Classify against the root labels.
    pub l_fixed: bool,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FlagsRepr {
    Text(String),
    Table(FlagsTable),
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FlagsTable {
    leaf_augment: bool,
    shadow_negatives: bool,
    l_rand: bool,
    l_fixed: bool,
}

impl Default for FlagsTable {
    fn default() -> Self {
        let f = LossFlags::full();
        Self {
            leaf_augment: f.leaf_augment,
            shadow_negatives: f.shadow_negatives,
            l_rand: f.l_rand,
            l_fixed: f.l_fixed,
        }
    }
}

impl TryFrom<FlagsRepr> for LossFlags {
    type Error = AceError;

    fn try_from(r: FlagsRepr) -> Result<Self> {
        match r {
            FlagsRepr::Text(s) => s.parse(),
            FlagsRepr::Table(t) => Ok(Self {
                leaf_augment: t.leaf_augment,
                shadow_negatives: t.shadow_negatives,
                l_rand: t.l_rand,
                l_fixed: t.l_fixed,
            }),
        }
    }
}

impl Default for LossFlags {
    fn default() -> Self {
        Self::full()
    }
}

impl LossFlags {
    pub const fn full() -> Self {
        Self {
            leaf_augment: true,
            shadow_negatives: true,
            l_rand: true,
            l_fixed: true,
        }
    }

    /// Plain cross-entropy over the root labels.
    pub const fn fixed_only() -> Self {
        Self {
            leaf_augment: false,
            shadow_negatives: false,
            l_rand: false,
            l_fixed: true,
        }
    }

    /// Every configuration that drops exactly one switch from the full set,
    /// labelled the way the ablation rows are usually named.
    pub fn single_ablations() -> Vec<(&'static str, Self)> {
        let f = Self::full();
        vec![
            (
                "w/o leaf augmentation",
                Self {
                    leaf_augment: false,
                    ..f
                },
            ),
            (
                "w/o shadow negatives",
                Self {
                    shadow_negatives: false,
                    ..f
                },
            ),
            ("w/o l_rand", Self { l_rand: false, ..f }),
            ("w/o l_fixed", Self { l_fixed: false, ..f }),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !self.l_fixed && !self.l_rand {
            return Err(config_err("at least one of l_fixed and l_rand must be enabled"));
        }
        Ok(())
    }
}

impl fmt::Display for LossFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        for (on, name) in [
            (self.leaf_augment, "leaf"),
            (self.shadow_negatives, "shadow"),
            (self.l_rand, "rand"),
            (self.l_fixed, "fixed"),
        ] {
            if on {
                parts.push(name);
            }
        }
        write!(f, "{}", parts.join(","))
    }
}

/// Parses a comma-separated flag list. `all` / `none` reset the set,
/// `<name>` enables and `no-<name>` disables. Names: `leaf`, `shadow`,
/// `rand`, `fixed`. Applied left to right starting from the full set.
impl FromStr for LossFlags {
    type Err = AceError;

    fn from_str(s: &str) -> Result<Self> {
        let mut flags = Self::full();
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (on, name) = match item.strip_prefix("no-") {
                Some(rest) => (false, rest),
                None => (true, item),
            };
            match name {
                "all" if on => flags = Self::full(),
                "none" if on => {
                    flags = Self {
                        leaf_augment: false,
                        shadow_negatives: false,
                        l_rand: false,
                        l_fixed: false,
                    }
                }
                "leaf" => flags.leaf_augment = on,
                "shadow" => flags.shadow_negatives = on,
                "rand" => flags.l_rand = on,
                "fixed" => flags.l_fixed = on,
                "fixed-only" if on => flags = Self::fixed_only(),
                _ => return Err(config_err(format!("unknown loss flag {item:?}"))),
            }
        }
        Ok(flags)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Softmax temperature τ.
    pub temperature: f64,
    pub flags: LossFlags,
    /// Weight on the randomized-synonym term. Both terms are weighted
    /// equally in the reference objective.
    pub rand_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.02,
            flags: LossFlags::full(),
            rand_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        check_temperature(self.temperature)?;
        if !self.rand_weight.is_finite() || self.rand_weight < 0.0 {
            return Err(config_err("rand_weight must be finite and >= 0"));
        }
        self.flags.validate()
    }
}

pub(crate) fn check_temperature(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(config_err(format!("temperature must be positive, got {tau}")))
    }
}

/// Similarity of a video with a label represented by `texts`: the mean
/// cosine over the texts, divided by τ.
pub fn leaf_similarity(video: &Embedding, texts: &[Embedding], tau: f64) -> Result<f64> {
    check_temperature(tau)?;
    if texts.is_empty() {
        return Err(config_err("a label needs at least one text"));
    }
    let sum: f64 = texts.iter().map(|t| video.dot(t)).sum();
    let s = sum / (tau * texts.len() as f64);
    if !s.is_finite() {
        return Err(AceError::NumericsError(format!("similarity {s}")));
    }
    Ok(s)
}

/// Texts that stand for `label` in the similarity: each child of the
/// label's verb joined with the object when leaf augmentation is on and the
/// verb has children (looked up in the tree of `action_index` first), the
/// label alone otherwise.
pub fn label_texts(vocab: &Vocabulary, action_index: usize, label: &ActionLabel, leaf_augment: bool) -> Vec<String> {
    if leaf_augment {
        if let Some(kids) = vocab.children_for(action_index, label.verb()) {
            return kids.iter().map(|k| format!("{k} {}", label.object())).collect();
        }
    }
    vec![label.text()]
}

/// Similarity of an encoded video with one label.
pub fn similarity<E: EncoderPair + ?Sized>(
    encoders: &E,
    video: &Embedding,
    vocab: &Vocabulary,
    action_index: usize,
    label: &ActionLabel,
    leaf_augment: bool,
    tau: f64,
) -> Result<f64> {
    let texts = label_texts(vocab, action_index, label, leaf_augment)
        .iter()
        .map(|t| encoders.encode_text(t))
        .collect::<Result<Vec<_>>>()?;
    leaf_similarity(video, &texts, tau)
}

/// Softmax output over the `C` classes and the optional shadow column.
#[derive(Debug, Clone, PartialEq)]
pub struct Probabilities {
    pub classes: Vec<f64>,
    pub shadow: Option<f64>,
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(AceError::NumericsError(format!("similarity {v}"))),
        None => Ok(()),
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Softmax of one similarity row. A shadow similarity only enlarges the
/// normalizer; its own mass is reported separately.
pub fn class_probabilities(sims: &[f64], shadow: Option<f64>) -> Result<Probabilities> {
    if sims.is_empty() {
        return Err(config_err("no classes to normalize over"));
    }
    check_finite(sims)?;
    if let Some(s) = shadow {
        check_finite(&[s])?;
    }
    let lse = log_sum_exp(sims.iter().copied().chain(shadow));
    Ok(Probabilities {
        classes: sims.iter().map(|s| (s - lse).exp()).collect(),
        shadow: shadow.map(|s| (s - lse).exp()),
    })
}

/// `log P` of the target class for one similarity row.
pub fn target_log_prob(sims: &[f64], target: usize, shadow: Option<f64>) -> Result<f64> {
    if target >= sims.len() {
        return Err(config_err(format!(
            "target {target} out of range for {} classes",
            sims.len()
        )));
    }
    check_finite(sims)?;
    if let Some(s) = shadow {
        check_finite(&[s])?;
    }
    Ok(sims[target] - log_sum_exp(sims.iter().copied().chain(shadow)))
}

/// Mean negative log-probability of the targets over a batch of similarity
/// rows (`B × C`), each row optionally extended by its own shadow column.
pub fn classification_loss(sims: &Array2<f64>, targets: &[usize], shadow: Option<&[f64]>) -> Result<f64> {
    let b = sims.nrows();
    if b == 0 || targets.len() != b || shadow.is_some_and(|s| s.len() != b) {
        return Err(config_err(
            "similarity rows, targets and shadow columns must have equal, non-zero length",
        ));
    }
    let mut total = 0.0;
    for (n, row) in sims.rows().into_iter().enumerate() {
        let row = row.to_vec();
        total -= target_log_prob(&row, targets[n], shadow.map(|s| s[n]))?;
    }
    Ok(total / b as f64)
}

/// Root-label term. Same form as [`loss_rand`]; only the label columns the
/// similarities were computed against differ.
pub fn loss_fixed(sims: &Array2<f64>, targets: &[usize], shadow: Option<&[f64]>) -> Result<f64> {
    classification_loss(sims, targets, shadow)
}

/// Randomized-synonym term; `0` when disabled.
pub fn loss_rand(sims: &Array2<f64>, targets: &[usize], shadow: Option<&[f64]>, enabled: bool) -> Result<f64> {
    if enabled {
        classification_loss(sims, targets, shadow)
    } else {
        Ok(0.0)
    }
}

/// Loss values of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_fixed: f64,
    pub l_rand: f64,
    pub l_total: f64,
    /// `log P(n, a, ã⁻)` per sample; empty when the term is off.
    pub log_prob_fixed: Vec<f64>,
    /// `log P(n, ã⁺, ã⁻)` per sample; empty when the term is off.
    pub log_prob_rand: Vec<f64>,
}

/// Labels drawn for one step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SampledLabels {
    /// `ã⁺`, empty when the randomized term is off.
    pub positives: Vec<ActionLabel>,
    /// `ã⁻`, one per class, empty when shadow negatives are off.
    pub shadows: Vec<ActionLabel>,
}

impl SampledLabels {
    /// Draws the labels one step needs, in a fixed order: `ã⁺` when the
    /// randomized term is on, then `ã⁻` when shadow negatives are on.
    pub fn draw<R: Rng + ?Sized>(vocab: &Vocabulary, flags: &LossFlags, rng: &mut R) -> Result<Self> {
        let positives = if flags.l_rand {
            vocab.sample_positive_labels(rng)
        } else {
            Vec::new()
        };
        let shadows = if flags.shadow_negatives {
            vocab.sample_shadow_negatives(rng)?
        } else {
            Vec::new()
        };
        Ok(Self { positives, shadows })
    }
}

#[derive(Debug)]
pub struct LossOutput {
    pub breakdown: LossBreakdown,
    pub labels: SampledLabels,
    /// Parameter gradient of `l_total`, present for
    /// [`total_loss_with_grad`].
    pub grads: Option<ParamStore>,
}

/// Text columns of one classification task: per class the ids of the texts
/// averaged into its similarity.
struct Task {
    columns: Vec<Vec<usize>>,
    shadow: Option<Vec<Vec<usize>>>,
}

struct TextCache {
    texts: IndexSet<String>,
}

impl TextCache {
    fn ids(&mut self, texts: Vec<String>) -> Vec<usize> {
        texts.into_iter().map(|t| self.texts.insert_full(t).0).collect()
    }
}

fn build_task(
    cache: &mut TextCache,
    vocab: &Vocabulary,
    labels: &[ActionLabel],
    shadows: &[ActionLabel],
    leaf: bool,
) -> Task {
    let columns = labels
        .iter()
        .enumerate()
        .map(|(i, l)| cache.ids(label_texts(vocab, i, l, leaf)))
        .collect();
    let shadow = (!shadows.is_empty()).then(|| {
        shadows
            .iter()
            .enumerate()
            .map(|(i, l)| cache.ids(label_texts(vocab, i, l, leaf)))
            .collect()
    });
    Task { columns, shadow }
}

struct TaskResult {
    loss: f64,
    log_probs: Vec<f64>,
}

/// Video and text embedding gradient buffers.
type GradSlots<'a> = (&'a mut [Array1<f64>], &'a mut [Array1<f64>]);

/// Evaluates one classification task; when `grad` is given, accumulates
/// `weight * dLoss` into the video and text embedding gradients.
fn run_task(
    task: &Task,
    videos: &[Embedding],
    texts: &[Embedding],
    targets: &[usize],
    tau: f64,
    weight: f64,
    grad: Option<GradSlots<'_>>,
) -> Result<TaskResult> {
    let b = videos.len();
    let col_sim = |v: &Embedding, ids: &[usize]| -> f64 {
        ids.iter().map(|&j| v.dot(&texts[j])).sum::<f64>() / (tau * ids.len() as f64)
    };
    let mut log_probs = Vec::with_capacity(b);
    let mut dlogits = Vec::with_capacity(b);
    for (n, v) in videos.iter().enumerate() {
        let mut row: Vec<f64> = task.columns.iter().map(|ids| col_sim(v, ids)).collect();
        if let Some(sh) = &task.shadow {
            row.push(col_sim(v, &sh[targets[n]]));
        }
        check_finite(&row)?;
        let lse = log_sum_exp(row.iter().copied());
        log_probs.push(row[targets[n]] - lse);
        let mut d: Vec<f64> = row.iter().map(|s| (s - lse).exp()).collect();
        d[targets[n]] -= 1.0;
        dlogits.push(d);
    }
    let loss = -log_probs.iter().sum::<f64>() / b as f64;
    if let Some((gv, gt)) = grad {
        let scale = weight / b as f64;
        for (n, d) in dlogits.iter().enumerate() {
            let mut cols: Vec<&[usize]> = task.columns.iter().map(Vec::as_slice).collect();
            if let Some(sh) = &task.shadow {
                cols.push(&sh[targets[n]]);
            }
            for (k, ids) in cols.into_iter().enumerate() {
                let g = d[k] * scale / (tau * ids.len() as f64);
                if g == 0.0 {
                    continue;
                }
                for &j in ids {
                    gv[n].scaled_add(g, &texts[j].vector());
                    gt[j].scaled_add(g, &videos[n].vector());
                }
            }
        }
    }
    Ok(TaskResult { loss, log_probs })
}

fn check_batch(batch: &[VideoSample], vocab: &Vocabulary) -> Result<Vec<usize>> {
    if batch.is_empty() {
        return Err(config_err("empty batch"));
    }
    batch
        .iter()
        .map(|s| {
            if s.label_index < vocab.len() {
                Ok(s.label_index)
            } else {
                Err(AceError::SchemaError(format!(
                    "clip {} has label {} outside 0..{}",
                    s.clip_id,
                    s.label_index,
                    vocab.len()
                )))
            }
        })
        .collect()
}

fn evaluate<E: EncoderPair + ?Sized>(
    batch: &[VideoSample],
    vocab: &Vocabulary,
    encoders: &E,
    labels: SampledLabels,
    cfg: &LossConfig,
    with_grad: bool,
) -> Result<LossOutput> {
    cfg.validate()?;
    let targets = check_batch(batch, vocab)?;
    let flags = cfg.flags;
    let tau = cfg.temperature;

    let mut cache = TextCache { texts: IndexSet::new() };
    let fixed = flags
        .l_fixed
        .then(|| build_task(&mut cache, vocab, vocab.actions(), &labels.shadows, flags.leaf_augment));
    let rand = flags.l_rand.then(|| {
        build_task(
            &mut cache,
            vocab,
            &labels.positives,
            &labels.shadows,
            flags.leaf_augment,
        )
    });

    let videos = batch
        .iter()
        .map(|s| encoders.encode_video(s))
        .collect::<Result<Vec<_>>>()?;
    let texts = cache
        .texts
        .iter()
        .map(|t| encoders.encode_text(t))
        .collect::<Result<Vec<_>>>()?;

    let d = encoders.dim();
    let mut gv = vec![Array1::<f64>::zeros(d); if with_grad { videos.len() } else { 0 }];
    let mut gt = vec![Array1::<f64>::zeros(d); if with_grad { texts.len() } else { 0 }];

    let mut run = |task: &Option<Task>, weight: f64| -> Result<Option<TaskResult>> {
        task.as_ref()
            .map(|t| {
                let g = with_grad.then_some((gv.as_mut_slice(), gt.as_mut_slice()));
                run_task(t, &videos, &texts, &targets, tau, weight, g)
            })
            .transpose()
    };
    let fixed_res = run(&fixed, 1.0)?;
    let rand_res = run(&rand, cfg.rand_weight)?;

    let l_fixed = fixed_res.as_ref().map_or(0.0, |r| r.loss);
    let l_rand = rand_res.as_ref().map_or(0.0, |r| r.loss);
    let l_total = l_fixed + cfg.rand_weight * l_rand;
    if !l_total.is_finite() {
        return Err(AceError::NumericsError(format!("loss {l_total}")));
    }
    let breakdown = LossBreakdown {
        l_fixed,
        l_rand,
        l_total,
        log_prob_fixed: fixed_res.map(|r| r.log_probs).unwrap_or_default(),
        log_prob_rand: rand_res.map(|r| r.log_probs).unwrap_or_default(),
    };

    let grads = if with_grad {
        let mut grads = encoders.params().zeros_like();
        for (s, g) in batch.iter().zip(&gv) {
            encoders.backward_video(s, g.view(), &mut grads)?;
        }
        for (t, g) in cache.texts.iter().zip(&gt) {
            if g.iter().any(|x| *x != 0.0) {
                encoders.backward_text(t, g.view(), &mut grads)?;
            }
        }
        Some(grads)
    } else {
        None
    };
    Ok(LossOutput {
        breakdown,
        labels,
        grads,
    })
}

/// Draws `ã⁺`/`ã⁻` from `rng` and evaluates the objective on `batch`.
pub fn total_loss<E: EncoderPair + ?Sized, R: Rng + ?Sized>(
    batch: &[VideoSample],
    vocab: &Vocabulary,
    encoders: &E,
    rng: &mut R,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    cfg.validate()?;
    let labels = SampledLabels::draw(vocab, &cfg.flags, rng)?;
    evaluate(batch, vocab, encoders, labels, cfg, false)
}

/// [`total_loss`] plus the parameter gradient of `l_total`.
pub fn total_loss_with_grad<E: EncoderPair + ?Sized, R: Rng + ?Sized>(
    batch: &[VideoSample],
    vocab: &Vocabulary,
    encoders: &E,
    rng: &mut R,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    cfg.validate()?;
    let labels = SampledLabels::draw(vocab, &cfg.flags, rng)?;
    evaluate(batch, vocab, encoders, labels, cfg, true)
}

/// Evaluates the objective with labels drawn elsewhere.
pub fn loss_with_labels<E: EncoderPair + ?Sized>(
    batch: &[VideoSample],
    vocab: &Vocabulary,
    encoders: &E,
    labels: SampledLabels,
    cfg: &LossConfig,
    with_grad: bool,
) -> Result<LossOutput> {
    evaluate(batch, vocab, encoders, labels, cfg, with_grad)
}

/// Similarity of every video with every label column (`B × K`), no shadow
/// columns. Used at inference time.
pub fn similarity_matrix<E: EncoderPair + ?Sized>(
    encoders: &E,
    videos: &[Embedding],
    columns: &[Vec<String>],
    tau: f64,
) -> Result<Array2<f64>> {
    check_temperature(tau)?;
    let mut cache = TextCache { texts: IndexSet::new() };
    let ids: Vec<Vec<usize>> = columns.iter().map(|c| cache.ids(c.clone())).collect();
    if ids.iter().any(Vec::is_empty) {
        return Err(config_err("every label column needs at least one text"));
    }
    let texts = cache
        .texts
        .iter()
        .map(|t| encoders.encode_text(t))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Array2::zeros((videos.len(), columns.len()));
    for (n, v) in videos.iter().enumerate() {
        for (k, col) in ids.iter().enumerate() {
            out[[n, k]] = col.iter().map(|&j| v.dot(&texts[j])).sum::<f64>() / (tau * col.len() as f64);
        }
    }
    Ok(out)
}
