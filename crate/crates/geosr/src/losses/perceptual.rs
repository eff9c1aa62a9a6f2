//! Perceptual distance via a fixed (non-trained) feature extractor.
//!
//! The default extractor is a seeded random conv pyramid: three stride-2
//! convolutions with tanh nonlinearities. Its weights are a pure function of
//! the seed recorded in the run configuration, so runs are reproducible
//! without shipping a pretrained network. Any other extractor can be plugged
//! in through the [`FeatureExtractor`] trait.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// A multi-scale feature pyramid over NCHW image tensors.
pub trait FeatureExtractor {
    fn name(&self) -> String;
    /// Feature maps from coarse conv levels; inputs are [B,3,H,W].
    fn features(&self, g: &Graph, x: Var) -> Vec<Var>;
    /// Smallest input side the pyramid accepts.
    fn min_side(&self) -> usize;
}

pub struct RandomPyramid {
    seed: u64,
    weights: Vec<(ArrayD<f64>, ArrayD<f64>)>,
}

impl RandomPyramid {
    pub const LEVELS: usize = 3;

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels = [3usize, 8, 16, 32];
        let mut weights = Vec::new();
        for lvl in 0..Self::LEVELS {
            let (cin, cout) = (channels[lvl], channels[lvl + 1]);
            let std = (2.0 / (cin * 9) as f64).sqrt();
            let dist = Normal::new(0.0, std).unwrap();
            let w = ArrayD::from_shape_fn(IxDyn(&[cout, cin, 3, 3]), |_| dist.sample(&mut rng));
            let b = ArrayD::zeros(IxDyn(&[cout]));
            weights.push((w, b));
        }
        RandomPyramid { seed, weights }
    }
}

impl FeatureExtractor for RandomPyramid {
    fn name(&self) -> String {
        format!("random-pyramid:{}", self.seed)
    }

    fn features(&self, g: &Graph, x: Var) -> Vec<Var> {
        let mut out = Vec::with_capacity(self.weights.len());
        let mut cur = x;
        for (w, b) in &self.weights {
            let wv = g.constant(w.clone());
            let bv = g.constant(b.clone());
            cur = g.tanh(g.conv2d(cur, wv, bv, 2, 1));
            out.push(cur);
        }
        out
    }

    fn min_side(&self) -> usize {
        1 << Self::LEVELS
    }
}

/// Build an extractor from its spec string (currently `random-pyramid`).
pub fn extractor_from_spec(spec: &str, seed: u64) -> Result<Box<dyn FeatureExtractor>> {
    match spec {
        "random-pyramid" => Ok(Box::new(RandomPyramid::new(seed))),
        other => Err(Error::config(format!(
            "unknown perceptual extractor `{other}` (expected `random-pyramid`)"
        ))),
    }
}

/// Sum over pyramid levels of the mean absolute feature difference.
pub fn perceptual_loss(
    g: &Graph,
    sr: Var,
    hr: Var,
    extractor: &dyn FeatureExtractor,
) -> Result<Var> {
    let (ss, hs) = (g.shape(sr), g.shape(hr));
    if ss != hs {
        return Err(Error::invalid_input(format!(
            "perceptual_loss shape mismatch: {ss:?} vs {hs:?}"
        )));
    }
    if ss[2] < extractor.min_side() || ss[3] < extractor.min_side() {
        return Err(Error::invalid_input(format!(
            "image {}x{} smaller than the extractor's minimum side {}",
            ss[2],
            ss[3],
            extractor.min_side()
        )));
    }
    let fs = extractor.features(g, sr);
    let fh = extractor.features(g, hr);
    let mut total = None;
    for (a, b) in fs.into_iter().zip(fh.into_iter()) {
        let term = g.l1_diff(a, b);
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term),
        });
    }
    Ok(total.expect("extractor produced no levels"))
}
