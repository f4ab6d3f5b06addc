//! Shared helpers for the integration tests: random toy instances and
//! brute-force oracles written without the library's math.

#![allow(dead_code)]

use ace_core::embedding::{
    Embedding, EncoderPair, ParamStore, ToyEncoderConfig, ToyEncoders, VideoSample, TEXT_PROJ, TEXT_TABLE, VIDEO_PROJ,
};
use ace_core::loss::{LossConfig, LossFlags, SampledLabels};
use ace_core::vocab::{ActionLabel, SynonymTree, Vocabulary};
use ace_core::Result;
use indexmap::IndexMap;
use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ROOTS: &[&str] = &["spin", "hammer", "drop", "balance", "pick up", "screw"];
const OBJECTS: &[&str] = &["block", "pin", "red wheel", "nut", "car body"];

/// Lowercase alphabetic token for an integer, so generated synonyms are
/// valid verbs.
pub fn word(mut i: usize) -> String {
    let mut s = String::new();
    loop {
        s.push((b'a' + (i % 26) as u8) as char);
        i /= 26;
        if i == 0 {
            break;
        }
    }
    s
}

/// A depth-2 tree over `root` with `m1` first-order and `m2` second-order
/// children per node (parents replicated). `m2 = 0` gives a depth-1 tree.
pub fn make_tree(root: &str, tag: &str, m1: usize, m2: usize, shared: &[String]) -> SynonymTree {
    let mut first: Vec<String> = shared.iter().take(m1.saturating_sub(1)).cloned().collect();
    let mut j = 0;
    while first.len() < m1 - 1 {
        first.push(format!("{tag}x{}", word(j)));
        j += 1;
    }
    first.push(root.to_string());
    let mut children = IndexMap::new();
    children.insert(root.to_string(), first.clone());
    if m2 > 0 {
        for node in first.iter().filter(|n| *n != root) {
            let mut kids: Vec<String> = (0..m2 - 1).map(|k| format!("{node}y{}", word(k))).collect();
            kids.push(node.clone());
            children.insert(node.clone(), kids);
        }
    }
    SynonymTree::new(root, children).unwrap()
}

/// A vocabulary over `actions` where every root verb gets a tree with the
/// given children counts.
pub fn vocab_with(actions: &[(&str, &str)], m1: usize, m2: usize) -> Vocabulary {
    let actions: Vec<ActionLabel> = actions.iter().map(|(v, o)| ActionLabel::new(v, o).unwrap()).collect();
    let mut trees = IndexMap::new();
    for (i, a) in actions.iter().enumerate() {
        trees
            .entry(a.verb().to_string())
            .or_insert_with(|| make_tree(a.verb(), &word(i + 7), m1, m2, &[]));
    }
    Vocabulary::new(actions, trees).unwrap()
}

/// A random vocabulary with `2..=max_c` actions, at least two distinct root
/// verbs, per-tree children counts in `1..=max_m` and occasional first-order
/// synonyms shared between trees.
pub fn random_vocab<R: Rng>(rng: &mut R, max_c: usize, max_m: usize) -> Vocabulary {
    let c = rng.random_range(2..=max_c);
    let k = rng.random_range(2..=c.min(ROOTS.len()));
    let mut verbs: Vec<&str> = ROOTS.to_vec();
    for i in 0..k {
        let j = rng.random_range(i..verbs.len());
        verbs.swap(i, j);
    }
    let mut actions: Vec<(String, String)> = Vec::new();
    while actions.len() < c {
        let v = if actions.len() < k {
            verbs[actions.len()]
        } else {
            verbs[rng.random_range(0..k)]
        };
        let o = OBJECTS[rng.random_range(0..OBJECTS.len())];
        if !actions.iter().any(|(a, b)| a == v && b == o) {
            actions.push((v.to_string(), o.to_string()));
        }
    }
    let m2 = rng.random_range(0..=max_m);
    let mut trees = IndexMap::new();
    let mut pool: Vec<String> = Vec::new();
    for (i, verb) in verbs[..k].iter().enumerate() {
        let m1 = rng.random_range(1..=max_m);
        let shared: Vec<String> = if !pool.is_empty() && rng.random_bool(0.3) {
            vec![pool[rng.random_range(0..pool.len())].clone()]
        } else {
            Vec::new()
        };
        let t = make_tree(verb, &word(i), m1, m2, &shared);
        pool.extend(t.first_order().iter().filter(|v| *v != verb).cloned());
        trees.insert(verb.to_string(), t);
    }
    let actions = actions.iter().map(|(v, o)| ActionLabel::new(v, o).unwrap()).collect();
    Vocabulary::new(actions, trees).unwrap()
}

/// A loss instance small enough to check by hand.
pub struct Instance {
    pub vocab: Vocabulary,
    pub encoders: ToyEncoders,
    pub batch: Vec<VideoSample>,
    pub cfg: LossConfig,
}

pub struct Bounds {
    pub max_c: usize,
    pub max_m: usize,
    pub max_b: usize,
    pub max_d: usize,
}

pub fn random_flags<R: Rng>(rng: &mut R) -> LossFlags {
    loop {
        let f = LossFlags {
            leaf_augment: rng.random_bool(0.5),
            shadow_negatives: rng.random_bool(0.5),
            l_rand: rng.random_bool(0.5),
            l_fixed: rng.random_bool(0.5),
        };
        if f.validate().is_ok() {
            return f;
        }
    }
}

pub fn random_encoders<R: Rng>(rng: &mut R, feature_dim: usize, dim: usize) -> ToyEncoders {
    ToyEncoders::new(&ToyEncoderConfig {
        feature_dim,
        dim,
        token_dim: rng.random_range(2..=6),
        buckets: rng.random_range(8..=32),
        seed: rng.random(),
    })
    .unwrap()
}

pub fn random_batch<R: Rng>(rng: &mut R, b: usize, feature_dim: usize, classes: usize) -> Vec<VideoSample> {
    (0..b)
        .map(|n| {
            let frames = rng.random_range(1..=3);
            VideoSample {
                clip_id: format!("clip{n}"),
                features: Array2::from_shape_simple_fn((frames, feature_dim), || rng.random_range(-1.0..1.0)),
                label_index: rng.random_range(0..classes),
            }
        })
        .collect()
}

pub fn random_instance(seed: u64, bounds: &Bounds) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = random_vocab(&mut rng, bounds.max_c, bounds.max_m);
    let feature_dim = rng.random_range(2..=6);
    let dim = rng.random_range(2..=bounds.max_d);
    let encoders = random_encoders(&mut rng, feature_dim, dim);
    let b = rng.random_range(1..=bounds.max_b);
    let batch = random_batch(&mut rng, b, feature_dim, vocab.len());
    let cfg = LossConfig {
        temperature: [0.02, 0.07, 0.5, 1.0][rng.random_range(0..4)],
        flags: random_flags(&mut rng),
        rand_weight: rng.random_range(0.0..2.0),
    };
    Instance {
        vocab,
        encoders,
        batch,
        cfg,
    }
}

fn matrix(p: &ParamStore, name: &str) -> Vec<Vec<f64>> {
    p.get(name).unwrap().rows().into_iter().map(|r| r.to_vec()).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn matvec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn fnv(token: &str, buckets: usize) -> usize {
    let mut h: u64 = 14695981039346656037;
    for b in token.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(1099511628211);
    }
    (h % buckets as u64) as usize
}

/// Plain-loop re-implementation of the toy encoders.
pub struct OracleEncoders {
    video: Vec<Vec<f64>>,
    table: Vec<Vec<f64>>,
    proj: Vec<Vec<f64>>,
}

impl OracleEncoders {
    pub fn new(p: &ParamStore) -> Self {
        Self {
            video: matrix(p, VIDEO_PROJ),
            table: matrix(p, TEXT_TABLE),
            proj: matrix(p, TEXT_PROJ),
        }
    }

    pub fn video(&self, s: &VideoSample) -> Vec<f64> {
        let frames = s.features.nrows() as f64;
        let mut mean = vec![0.0; s.features.ncols()];
        for row in s.features.rows() {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        let mean: Vec<f64> = mean.into_iter().map(|m| m / frames).collect();
        unit(matvec(&self.video, &mean))
    }

    pub fn text(&self, t: &str) -> Vec<f64> {
        let tokens: Vec<&str> = t.split_whitespace().collect();
        let mut u = vec![0.0; self.table[0].len()];
        for tok in &tokens {
            for (a, b) in u.iter_mut().zip(&self.table[fnv(tok, self.table.len())]) {
                *a += b;
            }
        }
        let u: Vec<f64> = u.into_iter().map(|a| a / tokens.len() as f64).collect();
        unit(matvec(&self.proj, &u))
    }
}

/// Children texts of `label` as seen from action `i`: the own tree wins,
/// then trees in vocabulary order, else the label itself.
pub fn oracle_texts(vocab: &Vocabulary, i: usize, label: &ActionLabel, leaf: bool) -> Vec<String> {
    if leaf {
        let own = vocab.tree_for(i);
        let kids = own
            .nodes()
            .get(label.verb())
            .or_else(|| vocab.trees().values().find_map(|t| t.nodes().get(label.verb())));
        if let Some(kids) = kids {
            return kids.iter().map(|k| format!("{k} {}", label.object())).collect();
        }
    }
    vec![format!("{} {}", label.verb(), label.object())]
}

fn oracle_sim(enc: &OracleEncoders, v: &[f64], texts: &[String], tau: f64) -> f64 {
    let mut s = 0.0;
    for t in texts {
        s += enc.text(t).iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
    s / texts.len() as f64 / tau
}

fn oracle_task(inst: &Instance, enc: &OracleEncoders, columns: &[ActionLabel], shadows: &[ActionLabel]) -> f64 {
    let leaf = inst.cfg.flags.leaf_augment;
    let tau = inst.cfg.temperature;
    let mut total = 0.0;
    for s in &inst.batch {
        let v = enc.video(s);
        let mut logits: Vec<f64> = columns
            .iter()
            .enumerate()
            .map(|(k, l)| oracle_sim(enc, &v, &oracle_texts(&inst.vocab, k, l, leaf), tau))
            .collect();
        if !shadows.is_empty() {
            let t = s.label_index;
            logits.push(oracle_sim(
                enc,
                &v,
                &oracle_texts(&inst.vocab, t, &shadows[t], leaf),
                tau,
            ));
        }
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        total += -(logits[s.label_index].exp() / z).ln();
    }
    total / inst.batch.len() as f64
}

/// `(l_fixed, l_rand, l_total)` computed from scratch for given labels.
pub fn oracle_loss(inst: &Instance, labels: &SampledLabels) -> (f64, f64, f64) {
    let enc = OracleEncoders::new(inst.encoders.params());
    let flags = inst.cfg.flags;
    let l_fixed = if flags.l_fixed {
        oracle_task(inst, &enc, inst.vocab.actions(), &labels.shadows)
    } else {
        0.0
    };
    let l_rand = if flags.l_rand {
        oracle_task(inst, &enc, &labels.positives, &labels.shadows)
    } else {
        0.0
    };
    (l_fixed, l_rand, l_fixed + inst.cfg.rand_weight * l_rand)
}

/// Accuracy and macro-F1 (percent) from an explicit confusion matrix.
pub fn oracle_metrics(pred: &[usize], truth: &[usize], classes: usize) -> (f64, f64) {
    let mut cm = vec![vec![0usize; classes]; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        cm[t][p] += 1;
    }
    let diag: usize = (0..classes).map(|c| cm[c][c]).sum();
    let mut f1 = 0.0;
    let mut present = 0;
    for (c, cm_row) in cm.iter().enumerate() {
        let row: usize = cm_row.iter().sum();
        if row == 0 {
            continue;
        }
        present += 1;
        let col: usize = (0..classes).map(|r| cm[r][c]).sum();
        let fp = col - cm[c][c];
        let fn_ = row - cm[c][c];
        f1 += (2 * cm[c][c]) as f64 / (2 * cm[c][c] + fp + fn_) as f64;
    }
    (100.0 * diag as f64 / pred.len() as f64, 100.0 * f1 / present as f64)
}

/// An encoder pair that maps every video and every text to the same unit
/// vector, so all similarities tie.
pub struct ConstantEncoders {
    pub params: ParamStore,
    pub dim: usize,
}

impl ConstantEncoders {
    pub fn new(dim: usize) -> Self {
        let mut params = ParamStore::new();
        params.insert("unused", Array2::zeros((1, 1)));
        Self { params, dim }
    }

    fn e(&self) -> Embedding {
        let mut v = Array1::zeros(self.dim);
        v[0] = 1.0;
        Embedding::normalized(v).unwrap()
    }
}

impl EncoderPair for ConstantEncoders {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_video(&self, _: &VideoSample) -> Result<Embedding> {
        Ok(self.e())
    }

    fn encode_text(&self, _: &str) -> Result<Embedding> {
        Ok(self.e())
    }

    fn backward_video(&self, _: &VideoSample, _: ArrayView1<f64>, _: &mut ParamStore) -> Result<()> {
        Ok(())
    }

    fn backward_text(&self, _: &str, _: ArrayView1<f64>, _: &mut ParamStore) -> Result<()> {
        Ok(())
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}
