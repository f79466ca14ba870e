use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tensor_core::Tensor;

use projectors::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureLayer {
    Last,
    SecondLast,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub grid: (usize, usize),
    pub d_v: usize,
    pub feature_layer: FeatureLayer,
    pub seed: u64,
}

/// A frozen stand-in for a pretrained vision tower: a fixed per-layer
/// transform over deterministic per-image base features. Identical
/// (image_id, selector) always yields the identical feature map.
pub struct StubVisionEncoder {
    cfg: EncoderConfig,
    /// One fixed [D_v, D_v] matrix per layer, never trained.
    transforms: Vec<Vec<f64>>,
}

impl StubVisionEncoder {
    pub fn new(cfg: EncoderConfig) -> StubVisionEncoder {
        assert!(cfg.layers >= 2, "need at least 2 layers for second_last");
        let d = cfg.d_v;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let scale = 1.0 / (d as f64).sqrt();
        let transforms = (0..cfg.layers)
            .map(|_| (0..d * d).map(|_| rng.gen_range(-scale..scale)).collect())
            .collect();
        StubVisionEncoder { cfg, transforms }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn num_features(&self) -> usize {
        self.cfg.grid.0 * self.cfg.grid.1
    }

    fn base_features(&self, image_id: &str) -> Vec<f64> {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in image_id.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        let n = self.num_features() * self.cfg.d_v;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ h);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Features from the selected layer; the output tensor does not require
    /// gradients (frozen-encoder contract).
    pub fn features(&self, image_id: &str) -> FeatureMap {
        let d = self.cfg.d_v;
        let n = self.num_features();
        let stop = match self.cfg.feature_layer {
            FeatureLayer::Last => self.cfg.layers,
            FeatureLayer::SecondLast => self.cfg.layers - 1,
        };
        let mut x = self.base_features(image_id);
        for w in &self.transforms[..stop] {
            let mut y = vec![0.0; n * d];
            for r in 0..n {
                for o in 0..d {
                    let mut acc = 0.0;
                    for j in 0..d {
                        acc += w[o * d + j] * x[r * d + j];
                    }
                    y[r * d + o] = acc.tanh();
                }
            }
            x = y;
        }
        FeatureMap::new(Tensor::new(&[n, d], x), self.cfg.grid)
    }

    /// Position-weighted sum over the fixed transforms; any byte change in
    /// the (never-trained) weights moves it.
    pub fn checksum(&self) -> f64 {
        let mut acc = 0.0;
        for (t, w) in self.transforms.iter().enumerate() {
            for (i, v) in w.iter().enumerate() {
                acc += v * ((t * w.len() + i + 1) as f64).sqrt();
            }
        }
        acc
    }
}
