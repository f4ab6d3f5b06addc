use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{normalize_backward, Embedding, EncoderPair, ParamStore, VideoSample};
use crate::error::{AceError, Result};

/// Video projection, `D × F`.
pub const VIDEO_PROJ: &str = "video_proj";
/// Token-hash embedding table, `buckets × K`.
pub const TEXT_TABLE: &str = "text_table";
/// Text projection, `D × K`.
pub const TEXT_PROJ: &str = "text_proj";

/// FNV-1a bucket of a token. Stable across platforms and releases.
pub fn token_bucket(token: &str, buckets: usize) -> usize {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    (h % buckets as u64) as usize
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyEncoderConfig {
    pub feature_dim: usize,
    pub dim: usize,
    pub token_dim: usize,
    pub buckets: usize,
    pub seed: u64,
}

impl Default for ToyEncoderConfig {
    fn default() -> Self {
        Self {
            feature_dim: 32,
            dim: 32,
            token_dim: 32,
            buckets: 4096,
            seed: 0,
        }
    }
}

/// Minimal trainable encoders.
///
/// Video: mean over frames, then a linear projection. Text: mean of the
/// hashed token rows of an embedding table, then a linear projection. Both
/// outputs are L2-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoders {
    params: ParamStore,
}

impl ToyEncoders {
    /// Gaussian initialization with `1/sqrt(fan_in)` scale.
    pub fn new(cfg: &ToyEncoderConfig) -> Result<Self> {
        if cfg.feature_dim == 0 || cfg.dim == 0 || cfg.token_dim == 0 || cfg.buckets == 0 {
            return Err(AceError::ConfigError("toy encoder dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut gauss = |rows: usize, cols: usize, scale: f64| {
            let n = Normal::new(0.0, scale).expect("positive scale");
            Array2::from_shape_simple_fn((rows, cols), || n.sample(&mut rng))
        };
        let mut params = ParamStore::new();
        params.insert(
            VIDEO_PROJ,
            gauss(cfg.dim, cfg.feature_dim, (cfg.feature_dim as f64).powf(-0.5)),
        );
        params.insert(TEXT_TABLE, gauss(cfg.buckets, cfg.token_dim, 1.0));
        params.insert(
            TEXT_PROJ,
            gauss(cfg.dim, cfg.token_dim, (cfg.token_dim as f64).powf(-0.5)),
        );
        Ok(Self { params })
    }

    /// Wraps existing parameters after checking their shapes agree.
    pub fn from_params(params: ParamStore) -> Result<Self> {
        let get = |name: &str| {
            params.get(name).ok_or_else(|| AceError::ShapeError {
                expected: format!("parameter block {name}"),
                got: "missing".into(),
            })
        };
        let (d_v, _) = get(VIDEO_PROJ)?.dim();
        let (_, k_t) = get(TEXT_TABLE)?.dim();
        let (d_t, k_p) = get(TEXT_PROJ)?.dim();
        if d_v != d_t || k_t != k_p {
            return Err(AceError::ShapeError {
                expected: format!("video D = text D ({d_v}) and table K = projection K ({k_t})"),
                got: format!("text D {d_t}, projection K {k_p}"),
            });
        }
        Ok(Self { params })
    }

    pub fn feature_dim(&self) -> usize {
        self.params.get(VIDEO_PROJ).expect("video projection").ncols()
    }

    pub fn buckets(&self) -> usize {
        self.params.get(TEXT_TABLE).expect("text table").nrows()
    }

    fn pooled_video(&self, sample: &VideoSample) -> Result<Array1<f64>> {
        let f = self.feature_dim();
        let (frames, cols) = sample.features.dim();
        if frames == 0 || cols != f {
            return Err(AceError::ShapeError {
                expected: format!("frames x {f} with frames >= 1"),
                got: format!("{frames} x {cols}"),
            });
        }
        Ok(sample.features.mean_axis(Axis(0)).expect("non-empty"))
    }

    fn token_rows(&self, text: &str) -> Result<Vec<usize>> {
        let buckets = self.buckets();
        let rows: Vec<usize> = text.split_whitespace().map(|t| token_bucket(t, buckets)).collect();
        if rows.is_empty() {
            return Err(AceError::MalformedLabel(text.to_string()));
        }
        Ok(rows)
    }

    fn pooled_text(&self, rows: &[usize]) -> Array1<f64> {
        let table = self.params.get(TEXT_TABLE).expect("text table");
        let mut u = Array1::zeros(table.ncols());
        for &r in rows {
            u += &table.row(r);
        }
        u / rows.len() as f64
    }
}

impl EncoderPair for ToyEncoders {
    fn dim(&self) -> usize {
        self.params.get(VIDEO_PROJ).expect("video projection").nrows()
    }

    fn encode_video(&self, sample: &VideoSample) -> Result<Embedding> {
        let x = self.pooled_video(sample)?;
        Embedding::normalized(self.params.get(VIDEO_PROJ).expect("video projection").dot(&x))
    }

    fn encode_text(&self, text: &str) -> Result<Embedding> {
        let u = self.pooled_text(&self.token_rows(text)?);
        Embedding::normalized(self.params.get(TEXT_PROJ).expect("text projection").dot(&u))
    }

    fn backward_video(&self, sample: &VideoSample, upstream: ArrayView1<f64>, grads: &mut ParamStore) -> Result<()> {
        let x = self.pooled_video(sample)?;
        let w = self.params.get(VIDEO_PROJ).expect("video projection");
        let gz = normalize_backward(&w.dot(&x), upstream)?;
        let gw = grads.get_mut(VIDEO_PROJ).ok_or_else(|| missing(VIDEO_PROJ))?;
        ndarray::linalg::general_mat_mul(
            1.0,
            &gz.view().insert_axis(Axis(1)),
            &x.view().insert_axis(Axis(0)),
            1.0,
            gw,
        );
        Ok(())
    }

    fn backward_text(&self, text: &str, upstream: ArrayView1<f64>, grads: &mut ParamStore) -> Result<()> {
        let rows = self.token_rows(text)?;
        let u = self.pooled_text(&rows);
        let p = self.params.get(TEXT_PROJ).expect("text projection");
        let gz = normalize_backward(&p.dot(&u), upstream)?;
        let gu = p.t().dot(&gz) / rows.len() as f64;
        {
            let gp = grads.get_mut(TEXT_PROJ).ok_or_else(|| missing(TEXT_PROJ))?;
            ndarray::linalg::general_mat_mul(
                1.0,
                &gz.view().insert_axis(Axis(1)),
                &u.view().insert_axis(Axis(0)),
                1.0,
                gp,
            );
        }
        let gt = grads.get_mut(TEXT_TABLE).ok_or_else(|| missing(TEXT_TABLE))?;
        for r in rows {
            let mut row = gt.row_mut(r);
            row += &gu;
        }
        Ok(())
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

fn missing(name: &str) -> AceError {
    AceError::ShapeError {
        expected: format!("gradient block {name}"),
        got: "missing".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn identity_video(dim: usize) -> ToyEncoders {
        let mut enc = ToyEncoders::new(&ToyEncoderConfig {
            feature_dim: dim,
            dim,
            token_dim: dim,
            buckets: 64,
            seed: 1,
        })
        .unwrap();
        enc.params_mut().insert(VIDEO_PROJ, Array2::eye(dim));
        enc
    }

    fn sample(features: Array2<f64>) -> VideoSample {
        VideoSample {
            clip_id: "c".into(),
            features,
            label_index: 0,
        }
    }

    #[test]
    fn identity_projection_passes_basis_vector() {
        let enc = identity_video(3);
        let e = enc.encode_video(&sample(array![[1.0, 0.0, 0.0]])).unwrap();
        assert_eq!(e.vector().to_vec(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_features_fail_normalization() {
        let enc = identity_video(3);
        assert!(matches!(
            enc.encode_video(&sample(Array2::zeros((2, 3)))),
            Err(AceError::NormalizationError)
        ));
    }

    #[test]
    fn wrong_feature_width_is_shape_error() {
        let enc = identity_video(3);
        assert!(matches!(
            enc.encode_video(&sample(Array2::zeros((2, 4)))),
            Err(AceError::ShapeError { .. })
        ));
    }

    #[test]
    fn encoding_is_deterministic() {
        let enc = ToyEncoders::new(&ToyEncoderConfig::default()).unwrap();
        let s = sample(Array2::from_shape_fn((4, 32), |(i, j)| (i * 7 + j) as f64 * 0.01 - 0.1));
        let a = enc.encode_video(&s).unwrap();
        let b = enc.encode_video(&s).unwrap();
        assert_eq!(a.vector().to_vec(), b.vector().to_vec());
        assert_eq!(
            enc.encode_text("spin block").unwrap(),
            enc.encode_text("spin block").unwrap()
        );
    }

    #[test]
    fn verbs_change_text_embedding() {
        let enc = ToyEncoders::new(&ToyEncoderConfig::default()).unwrap();
        let a = enc.encode_text("spin block").unwrap();
        let b = enc.encode_text("rotate block").unwrap();
        assert!(a.dot(&b) < 1.0 - 1e-6);
        assert!((a.dot(&a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_text_is_rejected() {
        let enc = ToyEncoders::new(&ToyEncoderConfig::default()).unwrap();
        assert!(enc.encode_text("  ").is_err());
    }

    #[test]
    fn bucket_is_stable() {
        // FNV-1a 64 of "a" is 0xaf63dc4c8601ec8c
        assert_eq!(
            token_bucket("a", usize::MAX),
            0xaf63_dc4c_8601_ec8c_u64 as usize % usize::MAX
        );
        assert!(token_bucket("spin", 4096) < 4096);
    }
}
