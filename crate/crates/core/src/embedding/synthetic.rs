//! Synthetic concept data with a known latent structure.
//!
//! Every concept is a (verb concept, object) pair with a latent vector
//! `[u_verb; w_object]`. Clips are frames of `A z + σ ξ`. Each token of the
//! text side gets a "pretrained" row in the toy text table: verb synonyms of
//! one concept share the verb latent up to a small spread, and every token
//! also carries a token-specific component in a nuisance subspace. The
//! returned encoders start from that pretrained state: the text projection
//! is the identity and the video projection recovers the latent with a
//! down-weighted verb part plus a random perturbation.

use std::collections::HashSet;

use indexmap::IndexMap;
use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::toy::{token_bucket, ToyEncoders, TEXT_PROJ, TEXT_TABLE, VIDEO_PROJ};
use super::{ParamStore, VideoSample};
use crate::error::{config_err, Result};
use crate::vocab::{ActionLabel, SynonymTree, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    /// Base (seen) concept count `C`.
    pub num_base: usize,
    /// Novel (unseen) concept count `Ć`.
    pub num_novel: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub frames: usize,
    /// Per-frame feature noise σ.
    pub noise: f64,
    pub seed: u64,
    /// Children per tree level, replicated parent included.
    pub m_per_level: Vec<usize>,
    /// Embedding, token and feature dimension.
    pub dim: usize,
    pub verb_latent: usize,
    pub object_latent: usize,
    pub buckets: usize,
    /// Spread of a first-order synonym's verb latent around its concept;
    /// second-order synonyms get twice this.
    pub synonym_spread: f64,
    /// Norm of the token-specific nuisance component of verb tokens.
    pub nuisance: f64,
    /// Norm of the nuisance component of object tokens.
    pub object_nuisance: f64,
    /// Weight of the verb latent in the pretrained video projection.
    pub verb_gain: f64,
    /// Scale of the random perturbation of the pretrained video projection.
    pub video_perturbation: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_base: 10,
            num_novel: 5,
            train_per_class: 50,
            test_per_class: 20,
            frames: 4,
            noise: 0.4,
            seed: 7,
            m_per_level: vec![5, 5],
            dim: 32,
            verb_latent: 8,
            object_latent: 8,
            buckets: 4096,
            synonym_spread: 0.35,
            nuisance: 1.5,
            object_nuisance: 0.3,
            verb_gain: 0.1,
            video_perturbation: 0.6,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.num_base < 2 || self.num_novel < 2 {
            return Err(config_err("synthetic data needs at least 2 base and 2 novel concepts"));
        }
        if self.noise.is_nan() || self.noise < 0.0 {
            return Err(config_err(format!("noise must be >= 0, got {}", self.noise)));
        }
        if self.m_per_level.is_empty() || self.m_per_level.len() > 2 || self.m_per_level.contains(&0) {
            return Err(config_err("m_per_level must hold one or two positive counts"));
        }
        if self.frames == 0 || self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(config_err("frames and per-class sample counts must be positive"));
        }
        if self.verb_latent + self.object_latent >= self.dim {
            return Err(config_err(
                "latent dimensions must leave room for the nuisance subspace",
            ));
        }
        Ok(())
    }
}

/// Splits, vocabularies and pretrained encoders of one synthetic world.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub config: SyntheticConfig,
    /// Labels index `base_vocab`.
    pub train: Vec<VideoSample>,
    pub base_test: Vec<VideoSample>,
    /// Labels index `novel_vocab`.
    pub novel_test: Vec<VideoSample>,
    pub base_vocab: Vocabulary,
    pub novel_vocab: Vocabulary,
    pub encoders: ToyEncoders,
}

struct WordGen {
    used: HashSet<String>,
    used_buckets: HashSet<usize>,
    buckets: usize,
}

impl WordGen {
    const CONSONANTS: &'static [u8] = b"bdfgklmnprstvz";
    const VOWELS: &'static [u8] = b"aeiou";

    fn word<R: Rng>(&mut self, rng: &mut R) -> String {
        loop {
            let syllables = rng.random_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push(Self::CONSONANTS[rng.random_range(0..Self::CONSONANTS.len())] as char);
                w.push(Self::VOWELS[rng.random_range(0..Self::VOWELS.len())] as char);
            }
            let b = token_bucket(&w, self.buckets);
            if !self.used.contains(&w) && !self.used_buckets.contains(&b) {
                self.used.insert(w.clone());
                self.used_buckets.insert(b);
                return w;
            }
        }
    }
}

fn gaussian<R: Rng>(rng: &mut R, n: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || StandardNormal.sample(rng))
}

fn unit<R: Rng>(rng: &mut R, n: usize) -> Array1<f64> {
    let v = gaussian(rng, n);
    let norm = v.dot(&v).sqrt();
    v / norm
}

/// Random orthogonal matrix by Gram-Schmidt on Gaussian columns.
fn orthogonal<R: Rng>(rng: &mut R, n: usize) -> Array2<f64> {
    let mut q = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut v = gaussian(rng, n);
        for k in 0..j {
            let col = q.column(k).to_owned();
            let p = col.dot(&v);
            v = v - col * p;
        }
        let norm = v.dot(&v).sqrt();
        q.column_mut(j).assign(&(v / norm));
    }
    q
}

struct Concept {
    verb_latent: Array1<f64>,
    object: usize,
    tree: SynonymTree,
}

/// Generates a deterministic synthetic world from `config`.
pub fn generate_synthetic_dataset(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.dim;
    let (lv, lo) = (config.verb_latent, config.object_latent);
    let ln = d - lv - lo;

    let basis = orthogonal(&mut rng, d);
    let q_verb = basis.slice(s![.., 0..lv]).to_owned();
    let q_obj = basis.slice(s![.., lv..lv + lo]).to_owned();
    let q_nuis = basis.slice(s![.., lv + lo..]).to_owned();

    let mut words = WordGen {
        used: HashSet::new(),
        used_buckets: HashSet::new(),
        buckets: config.buckets,
    };
    let mut table_rows: Vec<(String, Array1<f64>)> = Vec::new();
    let nuisance = |rng: &mut ChaCha8Rng, scale: f64| q_nuis.dot(&(unit(rng, ln) * scale));

    // objects: base concepts own one each, novel concepts reuse them in pairs
    let objects: Vec<(String, Array1<f64>)> = (0..config.num_base)
        .map(|_| (words.word(&mut rng), unit(&mut rng, lo)))
        .collect();
    for (name, w) in &objects {
        let row = q_obj.dot(w) + nuisance(&mut rng, config.object_nuisance);
        table_rows.push((name.clone(), row));
    }

    let m1 = config.m_per_level[0];
    let m2 = config.m_per_level.get(1).copied();
    let total = config.num_base + config.num_novel;
    let mut concepts = Vec::with_capacity(total);
    for k in 0..total {
        let u = unit(&mut rng, lv);
        let object = if k < config.num_base {
            k
        } else {
            ((k - config.num_base) / 2) % config.num_base
        };
        let mut emit = |rng: &mut ChaCha8Rng, spread: f64| {
            let w = words.word(rng);
            let lat = &u + &(gaussian(rng, lv) * (spread / (lv as f64).sqrt()));
            let row = q_verb.dot(&lat) + nuisance(rng, config.nuisance);
            table_rows.push((w.clone(), row));
            w
        };
        let root = emit(&mut rng, 0.0);
        let first: Vec<String> = (1..m1).map(|_| emit(&mut rng, config.synonym_spread)).collect();
        let mut second = IndexMap::new();
        if let Some(m2) = m2 {
            for node in &first {
                let kids: Vec<String> = (1..m2).map(|_| emit(&mut rng, 2.0 * config.synonym_spread)).collect();
                second.insert(node.clone(), kids);
            }
        }
        let tree = SynonymTree::from_synonyms(&root, &first, &second)?;
        concepts.push(Concept {
            verb_latent: u,
            object,
            tree,
        });
    }

    // video side: x = A z with A having orthonormal columns, scaled to unit frames
    let a_full = orthogonal(&mut rng, d);
    let a = a_full.slice(s![.., 0..lv + lo]).to_owned();
    let mut mix = Array2::<f64>::zeros((d, lv + lo));
    mix.slice_mut(s![.., 0..lv]).assign(&(&q_verb * config.verb_gain));
    mix.slice_mut(s![.., lv..]).assign(&q_obj);
    let perturb = Array2::from_shape_simple_fn((d, d), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * config.video_perturbation / (d as f64).sqrt()
    });
    let video_proj = mix.dot(&a.t()) + perturb;

    let mut table = Array2::<f64>::zeros((config.buckets, d));
    for (w, row) in &table_rows {
        table.row_mut(token_bucket(w, config.buckets)).assign(row);
    }
    let mut params = ParamStore::new();
    params.insert(VIDEO_PROJ, video_proj);
    params.insert(TEXT_TABLE, table);
    params.insert(TEXT_PROJ, Array2::eye(d));
    let encoders = ToyEncoders::from_params(params)?;

    let latent = |c: &Concept| {
        let mut z = Array1::zeros(lv + lo);
        z.slice_mut(s![0..lv]).assign(&c.verb_latent);
        z.slice_mut(s![lv..]).assign(&objects[c.object].1);
        z / 2f64.sqrt()
    };
    let draw = |rng: &mut ChaCha8Rng, k: usize, label: usize, tag: &str, n: usize| -> Vec<VideoSample> {
        let proto = a.dot(&latent(&concepts[k]));
        (0..n)
            .map(|i| {
                let noise = Array2::from_shape_simple_fn((config.frames, d), || {
                    let z: f64 = StandardNormal.sample(rng);
                    z * config.noise
                });
                // f32-representable so the on-disk format is lossless
                let features = (noise + proto.view().insert_axis(ndarray::Axis(0))).mapv(|x| f64::from(x as f32));
                VideoSample {
                    clip_id: format!("{tag}-{k:03}-{i:04}"),
                    features,
                    label_index: label,
                }
            })
            .collect()
    };

    let mut train = Vec::new();
    let mut base_test = Vec::new();
    let mut novel_test = Vec::new();
    for k in 0..config.num_base {
        train.extend(draw(&mut rng, k, k, "train", config.train_per_class));
    }
    for k in 0..config.num_base {
        base_test.extend(draw(&mut rng, k, k, "base", config.test_per_class));
    }
    for k in config.num_base..total {
        novel_test.extend(draw(&mut rng, k, k - config.num_base, "novel", config.test_per_class));
    }

    let vocab_of = |range: std::ops::Range<usize>| -> Result<Vocabulary> {
        let actions = range
            .clone()
            .map(|k| ActionLabel::new(concepts[k].tree.root(), &objects[concepts[k].object].0))
            .collect::<Result<Vec<_>>>()?;
        let trees = range
            .map(|k| (concepts[k].tree.root().to_string(), concepts[k].tree.clone()))
            .collect();
        Vocabulary::new(actions, trees)
    };

    Ok(SyntheticDataset {
        config: config.clone(),
        train,
        base_test,
        novel_test,
        base_vocab: vocab_of(0..config.num_base)?,
        novel_vocab: vocab_of(config.num_base..total)?,
        encoders,
    })
}
