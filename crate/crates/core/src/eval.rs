//! Inference and evaluation: similarity argmax over a label universe, top-1
//! accuracy and macro F1, harmonic mean, the random-guess baseline, the
//! synonym robustness test and the base/novel class split.
//!
//! Nothing here takes shadow negatives; they exist only at training time.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{EncoderPair, VideoSample};
use crate::error::{config_err, AceError, Result};
use crate::loss::{check_temperature, label_texts, similarity_matrix};
use crate::vocab::{decompose_with_object, ActionLabel, PhrasalLexicon, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Base,
    Novel,
}

/// Which children a synonym label is averaged over under leaf augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeafSource {
    /// The queried label's own verb node.
    #[default]
    Queried,
    /// The class's root verb node.
    Root,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdKind {
    #[default]
    Population,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub leaf_augment: bool,
    pub leaf_source: LeafSource,
    pub temperature: f64,
    pub srt_runs: usize,
    pub seed: u64,
    pub std_kind: StdKind,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: EvalMode::Novel,
            leaf_augment: true,
            leaf_source: LeafSource::Queried,
            temperature: 0.02,
            srt_runs: 10,
            seed: 0,
            std_kind: StdKind::Population,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.srt_runs == 0 {
            return Err(config_err("srt_runs must be >= 1"));
        }
        check_temperature(self.temperature)
    }
}

/// Top-1 accuracy and macro F1, both in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
}

fn argmax_lowest(row: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in row.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Texts standing for each class when it is labelled `labels[i]`.
pub fn label_columns(
    vocab: &Vocabulary,
    labels: &[ActionLabel],
    leaf_augment: bool,
    source: LeafSource,
) -> Vec<Vec<String>> {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| match (leaf_augment, source) {
            (true, LeafSource::Root) => {
                let kids = vocab.tree_for(i).first_order();
                if kids.is_empty() {
                    vec![l.text()]
                } else {
                    kids.iter().map(|k| format!("{k} {}", l.object())).collect()
                }
            }
            _ => label_texts(vocab, i, l, leaf_augment),
        })
        .collect()
}

/// Predicted class per sample: argmax of the similarity against the label
/// universe `labels` (one label per class of `vocab`), ties to the lowest
/// index.
pub fn predict<E: EncoderPair + ?Sized>(
    encoders: &E,
    samples: &[VideoSample],
    vocab: &Vocabulary,
    labels: &[ActionLabel],
    leaf_augment: bool,
    source: LeafSource,
    tau: f64,
) -> Result<Vec<usize>> {
    if labels.is_empty() {
        return Err(config_err("empty label universe"));
    }
    if labels.len() != vocab.len() {
        return Err(AceError::LabelTableMismatch(format!(
            "{} labels for {} classes",
            labels.len(),
            vocab.len()
        )));
    }
    let videos = samples
        .iter()
        .map(|s| encoders.encode_video(s))
        .collect::<Result<Vec<_>>>()?;
    let sims = similarity_matrix(
        encoders,
        &videos,
        &label_columns(vocab, labels, leaf_augment, source),
        tau,
    )?;
    Ok(argmax_rows(&sims))
}

/// Argmax of every row, ties to the lowest column.
pub fn argmax_rows(sims: &Array2<f64>) -> Vec<usize> {
    sims.axis_iter(Axis(0))
        .map(|r| argmax_lowest(r.iter().copied()))
        .collect()
}

/// Class of one sample.
pub fn classify<E: EncoderPair + ?Sized>(
    encoders: &E,
    sample: &VideoSample,
    vocab: &Vocabulary,
    labels: &[ActionLabel],
    leaf_augment: bool,
    tau: f64,
) -> Result<usize> {
    Ok(predict(
        encoders,
        std::slice::from_ref(sample),
        vocab,
        labels,
        leaf_augment,
        LeafSource::Queried,
        tau,
    )?[0])
}

/// Accuracy over all samples and F1 averaged over the classes that occur in
/// `truth`. A class's F1 is 0 when its precision or recall is undefined.
pub fn metrics(predictions: &[usize], truth: &[usize], num_classes: usize) -> Result<Metrics> {
    if predictions.is_empty() {
        return Err(AceError::EmptyEvalSet);
    }
    if predictions.len() != truth.len() {
        return Err(config_err(format!(
            "{} predictions for {} ground-truth labels",
            predictions.len(),
            truth.len()
        )));
    }
    if let Some(bad) = predictions.iter().chain(truth).find(|&&c| c >= num_classes) {
        return Err(config_err(format!("class {bad} outside 0..{num_classes}")));
    }
    let mut tp = vec![0usize; num_classes];
    let mut predicted = vec![0usize; num_classes];
    let mut actual = vec![0usize; num_classes];
    for (&p, &t) in predictions.iter().zip(truth) {
        predicted[p] += 1;
        actual[t] += 1;
        if p == t {
            tp[p] += 1;
        }
    }
    let correct: usize = tp.iter().sum();
    let mut f1_sum = 0.0;
    let mut present = 0usize;
    for c in 0..num_classes {
        if actual[c] == 0 {
            continue;
        }
        present += 1;
        // equals 2pr/(p+r) but rounds once
        f1_sum += (2 * tp[c]) as f64 / (predicted[c] + actual[c]) as f64;
    }
    Ok(Metrics {
        accuracy: 100.0 * correct as f64 / predictions.len() as f64,
        macro_f1: 100.0 * f1_sum / present as f64,
    })
}

/// `2xy / (x + y)`, 0 when both are 0.
pub fn harmonic_mean(x: f64, y: f64) -> f64 {
    if x + y == 0.0 {
        0.0
    } else {
        2.0 * x * y / (x + y)
    }
}

/// Expected metrics of guessing uniformly among `C′ = distribution.len()`
/// classes when class `i` makes up `distribution[i]` of the test set.
pub fn random_baseline(distribution: &[f64]) -> Result<Metrics> {
    let c = distribution.len();
    if c == 0 {
        return Err(config_err("random baseline needs at least one class"));
    }
    let total: f64 = distribution.iter().sum();
    if distribution.iter().any(|p| *p < 0.0 || !p.is_finite()) || (total - 1.0).abs() > 1e-9 {
        return Err(config_err(format!(
            "class distribution must be non-negative and sum to 1, sums to {total}"
        )));
    }
    let recall = 1.0 / c as f64;
    let f1: f64 = distribution
        .iter()
        .map(|&p| {
            if p + recall == 0.0 {
                0.0
            } else {
                2.0 * p * recall / (p + recall)
            }
        })
        .sum::<f64>()
        / c as f64;
    Ok(Metrics {
        accuracy: 100.0 / c as f64,
        macro_f1: 100.0 * f1,
    })
}

/// Empirical class distribution of a label sequence over `num_classes`.
pub fn class_distribution(truth: &[usize], num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0.0; num_classes];
    for &t in truth {
        counts[t] += 1.0;
    }
    let n = truth.len().max(1) as f64;
    counts.into_iter().map(|c| c / n).collect()
}

/// Synonym label sets for each run: `runs[r][class]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTable {
    pub runs: Vec<Vec<String>>,
}

impl LabelTable {
    /// Run 1 uses the root labels; every later run draws one first-order
    /// synonym per class independently.
    pub fn generate(vocab: &Vocabulary, runs: usize, seed: u64) -> Result<Self> {
        if runs == 0 {
            return Err(config_err("srt_runs must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = vec![vocab.actions().iter().map(ActionLabel::text).collect()];
        for _ in 1..runs {
            out.push(
                vocab
                    .sample_positive_labels_independent(&mut rng)
                    .iter()
                    .map(ActionLabel::text)
                    .collect(),
            );
        }
        Ok(Self { runs: out })
    }

    pub fn num_classes(&self) -> usize {
        self.runs.first().map_or(0, Vec::len)
    }

    /// Parses `run,class_index,label` rows; runs are 1-based.
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            run: usize,
            class_index: usize,
            label: String,
        }
        let mut cells: BTreeMap<usize, BTreeMap<usize, String>> = BTreeMap::new();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for row in rdr.deserialize() {
            let row: Row = row?;
            if row.run == 0 {
                return Err(AceError::LabelTableMismatch("runs are numbered from 1".into()));
            }
            if cells
                .entry(row.run)
                .or_default()
                .insert(row.class_index, row.label)
                .is_some()
            {
                return Err(AceError::LabelTableMismatch(format!(
                    "duplicate cell run {} class {}",
                    row.run, row.class_index
                )));
            }
        }
        let mut runs = Vec::with_capacity(cells.len());
        for (expect, (run, classes)) in (1..).zip(cells) {
            if run != expect {
                return Err(AceError::LabelTableMismatch(format!("run {expect} missing")));
            }
            let labels: Vec<String> = classes.values().cloned().collect();
            if classes.keys().copied().ne(0..labels.len()) {
                return Err(AceError::LabelTableMismatch(format!(
                    "run {run} has gaps in class_index"
                )));
            }
            runs.push(labels);
        }
        if runs.is_empty() {
            return Err(AceError::LabelTableMismatch("empty label table".into()));
        }
        let width = runs[0].len();
        if let Some((i, r)) = runs.iter().enumerate().find(|(_, r)| r.len() != width) {
            return Err(AceError::LabelTableMismatch(format!(
                "run {} has {} classes, run 1 has {width}",
                i + 1,
                r.len()
            )));
        }
        Ok(Self { runs })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| AceError::IngestError {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_csv_reader(f)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["run", "class_index", "label"])
            .expect("in-memory write");
        for (r, labels) in self.runs.iter().enumerate() {
            for (c, l) in labels.iter().enumerate() {
                w.write_record([(r + 1).to_string(), c.to_string(), l.clone()])
                    .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// Resolves every cell into an [`ActionLabel`] of the matching class.
    pub fn resolve(&self, vocab: &Vocabulary) -> Result<Vec<Vec<ActionLabel>>> {
        if self.num_classes() != vocab.len() {
            return Err(AceError::LabelTableMismatch(format!(
                "table has {} classes, vocabulary has {}",
                self.num_classes(),
                vocab.len()
            )));
        }
        let lex = PhrasalLexicon::from_vocabulary(vocab);
        self.runs
            .iter()
            .map(|run| {
                run.iter()
                    .enumerate()
                    .map(|(i, text)| decompose_with_object(text, vocab.action(i).object(), &lex))
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64], kind: StdKind) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        let denom = match kind {
            StdKind::Population => n,
            StdKind::Sample => (n - 1.0).max(1.0),
        };
        Self {
            mean,
            std: (ss / denom).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrtRun {
    pub run: usize,
    pub labels: Vec<String>,
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Per-run results of a synonym robustness test and their mean ± std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrtReport {
    pub config: EvalConfig,
    pub runs: Vec<SrtRun>,
    pub accuracy: Summary,
    pub macro_f1: Summary,
}

impl SrtReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per run plus a final `mean` and `std` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("run,accuracy,macro_f1\n");
        for r in &self.runs {
            let _ = writeln!(s, "{},{:.4},{:.4}", r.run, r.accuracy, r.macro_f1);
        }
        let _ = writeln!(s, "mean,{:.4},{:.4}", self.accuracy.mean, self.macro_f1.mean);
        let _ = writeln!(s, "std,{:.4},{:.4}", self.accuracy.std, self.macro_f1.std);
        s
    }
}

/// Classifies `test` once per run of `table`, each time with that run's
/// labels as the label universe.
pub fn srt<E: EncoderPair + ?Sized>(
    config: &EvalConfig,
    encoders: &E,
    vocab: &Vocabulary,
    test: &[VideoSample],
    table: &LabelTable,
) -> Result<SrtReport> {
    config.validate()?;
    if test.is_empty() {
        return Err(AceError::EmptyEvalSet);
    }
    if table.runs.len() != config.srt_runs {
        return Err(AceError::LabelTableMismatch(format!(
            "table has {} runs, configuration asks for {}",
            table.runs.len(),
            config.srt_runs
        )));
    }
    let resolved = table.resolve(vocab)?;
    let truth: Vec<usize> = test.iter().map(|s| s.label_index).collect();
    let videos = test
        .iter()
        .map(|s| encoders.encode_video(s))
        .collect::<Result<Vec<_>>>()?;
    let mut runs = Vec::with_capacity(resolved.len());
    for (r, labels) in resolved.iter().enumerate() {
        let cols = label_columns(vocab, labels, config.leaf_augment, config.leaf_source);
        let preds = argmax_rows(&similarity_matrix(encoders, &videos, &cols, config.temperature)?);
        let m = metrics(&preds, &truth, vocab.len())?;
        runs.push(SrtRun {
            run: r + 1,
            labels: table.runs[r].clone(),
            accuracy: m.accuracy,
            macro_f1: m.macro_f1,
        });
    }
    let acc: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
    let f1: Vec<f64> = runs.iter().map(|r| r.macro_f1).collect();
    Ok(SrtReport {
        config: config.clone(),
        accuracy: Summary::of(&acc, config.std_kind),
        macro_f1: Summary::of(&f1, config.std_kind),
        runs,
    })
}

/// Root-label evaluation in base or novel mode.
pub fn evaluate<E: EncoderPair + ?Sized>(
    config: &EvalConfig,
    encoders: &E,
    vocab: &Vocabulary,
    test: &[VideoSample],
) -> Result<Metrics> {
    config.validate()?;
    let preds = predict(
        encoders,
        test,
        vocab,
        vocab.actions(),
        config.leaf_augment,
        config.leaf_source,
        config.temperature,
    )?;
    let truth: Vec<usize> = test.iter().map(|s| s.label_index).collect();
    metrics(&preds, &truth, vocab.len())
}

/// How `⌈C/3⌉` vs `⌊C/3⌋` is resolved when picking the novel third.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rounding {
    #[default]
    Floor,
    Ceil,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    /// Indices into the full class list, ascending.
    pub base: Vec<usize>,
    pub novel: Vec<usize>,
}

/// Picks the third of the classes whose verb is least frequent as novel.
///
/// Classes are ordered by their verb's frequency ascending, ties broken by
/// the label text; verbs missing from `verb_frequency` count as 0.
pub fn select_base_novel_split(
    classes: &[ActionLabel],
    verb_frequency: &BTreeMap<String, usize>,
    rounding: Rounding,
) -> Result<ClassSplit> {
    let c = classes.len();
    if c < 3 {
        return Err(config_err(format!("need at least 3 classes to split, got {c}")));
    }
    let n_novel = match rounding {
        Rounding::Floor => c / 3,
        Rounding::Ceil => c.div_ceil(3),
    };
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        let fa = verb_frequency.get(classes[a].verb()).copied().unwrap_or(0);
        let fb = verb_frequency.get(classes[b].verb()).copied().unwrap_or(0);
        fa.cmp(&fb).then_with(|| classes[a].text().cmp(&classes[b].text()))
    });
    let mut novel: Vec<usize> = order[..n_novel].to_vec();
    let mut base: Vec<usize> = order[n_novel..].to_vec();
    novel.sort_unstable();
    base.sort_unstable();
    Ok(ClassSplit { base, novel })
}

/// Maps `n × d` points to `n × 2`.
pub trait ProjectionReducer {
    fn reduce(&self, points: &Array2<f64>) -> Result<Array2<f64>>;
}

/// Projection onto the top two principal components, found by power
/// iteration from a fixed start so the output is deterministic.
#[derive(Debug, Clone, Copy)]
pub struct PcaReducer {
    pub iterations: usize,
}

impl Default for PcaReducer {
    fn default() -> Self {
        Self { iterations: 500 }
    }
}

impl ProjectionReducer for PcaReducer {
    fn reduce(&self, points: &Array2<f64>) -> Result<Array2<f64>> {
        let (n, d) = points.dim();
        if n == 0 || d == 0 {
            return Err(config_err("nothing to project"));
        }
        let mean = points.mean_axis(Axis(0)).expect("non-empty");
        let centered = points - &mean;
        let mut cov = centered.t().dot(&centered) / n as f64;
        let mut out = Array2::zeros((n, 2));
        for k in 0..2.min(d) {
            let mut v = Array1::from_shape_fn(d, |i| 1.0 / ((i + k + 1) as f64));
            for _ in 0..self.iterations {
                let w = cov.dot(&v);
                let norm = w.dot(&w).sqrt();
                if norm < 1e-300 {
                    break;
                }
                v = w / norm;
            }
            // sign convention: largest-magnitude coordinate positive
            let idx = argmax_lowest(v.iter().map(|x| x.abs()));
            if v[idx] < 0.0 {
                v.mapv_inplace(|x| -x);
            }
            let lambda = v.dot(&cov.dot(&v));
            let outer = v.view().insert_axis(Axis(1)).dot(&v.view().insert_axis(Axis(0)));
            cov.scaled_add(-lambda, &outer);
            out.column_mut(k).assign(&centered.dot(&v));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    pub label: String,
    pub group: String,
    pub x: f64,
    pub y: f64,
}

/// Encodes every `(label, group)` text and projects the embeddings to 2-D.
pub fn export_projection<E: EncoderPair + ?Sized, P: ProjectionReducer + ?Sized>(
    encoders: &E,
    items: &[(String, String)],
    reducer: &P,
) -> Result<Vec<ProjectionRow>> {
    let d = encoders.dim();
    let mut points = Array2::zeros((items.len(), d));
    for (i, (label, _)) in items.iter().enumerate() {
        points.row_mut(i).assign(&encoders.encode_text(label)?.vector());
    }
    let xy = reducer.reduce(&points)?;
    Ok(items
        .iter()
        .enumerate()
        .map(|(i, (label, group))| ProjectionRow {
            label: label.clone(),
            group: group.clone(),
            x: xy[[i, 0]],
            y: xy[[i, 1]],
        })
        .collect())
}

/// Every synonym of every class (first- and second-order), grouped by the
/// class's root label.
pub fn concept_items(vocab: &Vocabulary) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (i, a) in vocab.actions().iter().enumerate() {
        let mut seen = indexmap::IndexSet::new();
        for (node, kids) in vocab.tree_for(i).nodes() {
            seen.insert(node.clone());
            for k in kids {
                seen.insert(k.clone());
            }
        }
        for v in seen {
            out.push((format!("{v} {}", a.object()), a.text()));
        }
    }
    out
}

pub fn projection_csv(rows: &[ProjectionRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| AceError::Io(e.into_error()))?).expect("utf-8"))
}
