//! Adversarial critics: a strided patch discriminator over images and a
//! location-matching discriminator in projection form, whose logit is
//! psi(phi(x)) + <V c, phi(x)> for pooled image features phi and a learned
//! linear map V from embedding space to feature space.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::image::ImageBuf;
use crate::location::LocationEmbedding;
use crate::nn::{Conv2d, Init, Linear, ParamId, ParamStore, Session};
use ndarray::{Array2, ArrayD};
use serde::{Deserialize, Serialize};

const LRELU_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PatchDiscriminatorConfig {
    pub base_features: usize,
    pub num_downsamples: usize,
}

impl Default for PatchDiscriminatorConfig {
    fn default() -> Self {
        PatchDiscriminatorConfig {
            base_features: 64,
            num_downsamples: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LocDiscriminatorConfig {
    pub base_features: usize,
    pub num_downsamples: usize,
    pub embed_proj_dim: usize,
}

impl Default for LocDiscriminatorConfig {
    fn default() -> Self {
        LocDiscriminatorConfig {
            base_features: 64,
            num_downsamples: 4,
            embed_proj_dim: 128,
        }
    }
}

fn trunk_channels(base: usize, downsamples: usize) -> Vec<usize> {
    (0..downsamples).map(|i| (base << i.min(3)).min(base * 8)).collect()
}

/// Strided conv stack producing a spatial logit map (no sigmoid).
pub struct PatchDiscriminator {
    pub cfg: PatchDiscriminatorConfig,
    head: Conv2d,
    downs: Vec<Conv2d>,
    out: Conv2d,
}

impl PatchDiscriminator {
    pub fn new(store: &mut ParamStore, init: &mut Init, cfg: &PatchDiscriminatorConfig) -> Result<Self> {
        if cfg.base_features == 0 {
            return Err(Error::config("base_features must be positive"));
        }
        let chans = trunk_channels(cfg.base_features, cfg.num_downsamples);
        let head = Conv2d::new(store, init, "d_img.head", 3, cfg.base_features, 3, 1, 1, 1.0);
        let mut downs = Vec::new();
        let mut prev = cfg.base_features;
        for (i, &c) in chans.iter().enumerate() {
            downs.push(Conv2d::new(
                store,
                init,
                &format!("d_img.down{i}"),
                prev,
                c,
                3,
                2,
                1,
                1.0,
            ));
            prev = c;
        }
        let out = Conv2d::new(store, init, "d_img.out", prev, 1, 3, 1, 1, 1.0);
        Ok(PatchDiscriminator {
            cfg: cfg.clone(),
            head,
            downs,
            out,
        })
    }

    /// [B,3,H,W] -> [B,1,H/2^k,W/2^k] logit map.
    pub fn forward(&self, s: &Session, img: Var) -> Result<Var> {
        let g = s.graph;
        let shape = g.shape(img);
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::invalid_input(format!(
                "expected [B,3,H,W] input, got {shape:?}"
            )));
        }
        let min_side = 1usize << self.cfg.num_downsamples;
        if shape[2] < min_side || shape[3] < min_side {
            return Err(Error::invalid_input(format!(
                "input {}x{} smaller than the discriminator's total stride {min_side}",
                shape[2], shape[3]
            )));
        }
        let mut x = g.leaky_relu(self.head.forward(s, img), LRELU_SLOPE);
        for conv in &self.downs {
            x = g.leaky_relu(conv.forward(s, x), LRELU_SLOPE);
        }
        Ok(self.out.forward(s, x))
    }

    /// Inference helper on one image.
    pub fn discriminate_image(&self, store: &ParamStore, img: &ImageBuf) -> Result<Array2<f64>> {
        let g = Graph::new();
        let s = Session::frozen(&g, store);
        let x = g.constant(img.to_nchw().into_dyn());
        let out = self.forward(&s, x)?;
        let v = g.value(out);
        Ok(v.index_axis(ndarray::Axis(0), 0)
            .index_axis(ndarray::Axis(0), 0)
            .to_owned()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap())
    }
}

/// Projection discriminator over (image, location embedding) pairs.
pub struct LocationDiscriminator {
    pub cfg: LocDiscriminatorConfig,
    pub embed_dim: usize,
    head: Conv2d,
    downs: Vec<Conv2d>,
    to_features: Conv2d,
    psi: Linear,
    /// Linear map from embedding space to feature space, zero-initialized so
    /// the critic starts unconditional.
    v: ParamId,
}

impl LocationDiscriminator {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        cfg: &LocDiscriminatorConfig,
        embed_dim: usize,
    ) -> Result<Self> {
        if cfg.base_features == 0 || cfg.embed_proj_dim == 0 {
            return Err(Error::config("discriminator widths must be positive"));
        }
        let chans = trunk_channels(cfg.base_features, cfg.num_downsamples);
        let head = Conv2d::new(store, init, "d_loc.head", 3, cfg.base_features, 3, 1, 1, 1.0);
        let mut downs = Vec::new();
        let mut prev = cfg.base_features;
        for (i, &c) in chans.iter().enumerate() {
            downs.push(Conv2d::new(
                store,
                init,
                &format!("d_loc.down{i}"),
                prev,
                c,
                3,
                2,
                1,
                1.0,
            ));
            prev = c;
        }
        let to_features = Conv2d::new(
            store,
            init,
            "d_loc.to_features",
            prev,
            cfg.embed_proj_dim,
            3,
            1,
            1,
            1.0,
        );
        let psi = Linear::new(store, init, "d_loc.psi", cfg.embed_proj_dim, 1, 1.0);
        let v = store.add(
            "d_loc.v",
            init.zeros(&[embed_dim, cfg.embed_proj_dim]),
        );
        Ok(LocationDiscriminator {
            cfg: cfg.clone(),
            embed_dim,
            head,
            downs,
            to_features,
            psi,
            v,
        })
    }

    /// phi: conv trunk + global average pooling, [B,3,H,W] -> [B,F].
    pub fn features(&self, s: &Session, img: Var) -> Result<Var> {
        let g = s.graph;
        let shape = g.shape(img);
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::invalid_input(format!(
                "expected [B,3,H,W] input, got {shape:?}"
            )));
        }
        let min_side = 1usize << self.cfg.num_downsamples;
        if shape[2] < min_side || shape[3] < min_side {
            return Err(Error::invalid_input(format!(
                "input {}x{} smaller than the discriminator's total stride {min_side}",
                shape[2], shape[3]
            )));
        }
        let mut x = g.leaky_relu(self.head.forward(s, img), LRELU_SLOPE);
        for conv in &self.downs {
            x = g.leaky_relu(conv.forward(s, x), LRELU_SLOPE);
        }
        let x = g.leaky_relu(self.to_features.forward(s, x), LRELU_SLOPE);
        Ok(g.global_avg_pool(x))
    }

    /// logit = psi(phi) + <V c, phi> given pooled features phi [B,F] and
    /// embeddings c [B,D]; returns [B].
    pub fn logit_from_features(&self, s: &Session, phi: Var, c: Var) -> Result<Var> {
        let g = s.graph;
        let (ps, cs) = (g.shape(phi), g.shape(c));
        if cs.len() != 2 || cs[1] != self.embed_dim {
            return Err(Error::config(format!(
                "embedding shape {cs:?} does not match [B,{}]",
                self.embed_dim
            )));
        }
        if ps[0] != cs[0] {
            return Err(Error::config("feature/embedding batch mismatch"));
        }
        let batch = ps[0];
        let psi = self.psi.forward(s, phi); // [B,1]
        let psi = g.reshape(psi, &[batch]);
        let vc = g.matmul(c, s.param(self.v)); // [B,F]
        let proj = g.sum_last(g.mul(vc, phi)); // [B]
        Ok(g.add(psi, proj))
    }

    /// [B,3,H,W] x [B,D] -> [B] scalar logits.
    pub fn forward(&self, s: &Session, img: Var, c: Var) -> Result<Var> {
        let phi = self.features(s, img)?;
        self.logit_from_features(s, phi, c)
    }

    /// Inference helper for one (image, embedding) pair.
    pub fn discriminate_location(
        &self,
        store: &ParamStore,
        img: &ImageBuf,
        c: &LocationEmbedding,
    ) -> Result<f64> {
        if c.dim() != self.embed_dim {
            return Err(Error::config(format!(
                "embedding dimension {} does not match configured {}",
                c.dim(),
                self.embed_dim
            )));
        }
        let g = Graph::new();
        let s = Session::frozen(&g, store);
        let x = g.constant(img.to_nchw().into_dyn());
        let cv = g.constant(c.vector.clone().insert_axis(ndarray::Axis(0)).into_dyn());
        let logit = self.forward(&s, x, cv)?;
        Ok(g.value(logit)[[0]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_patch_cfg() -> PatchDiscriminatorConfig {
        PatchDiscriminatorConfig {
            base_features: 8,
            num_downsamples: 2,
        }
    }

    fn toy_loc_cfg() -> LocDiscriminatorConfig {
        LocDiscriminatorConfig {
            base_features: 8,
            num_downsamples: 2,
            embed_proj_dim: 8,
        }
    }

    fn rand_img(rng: &mut ChaCha8Rng, side: usize) -> ImageBuf {
        ImageBuf::from_fn(side, side, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn patch_zero_weights_zero_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut init = Init::new(&mut rng);
        let mut store = ParamStore::new();
        let d = PatchDiscriminator::new(&mut store, &mut init, &toy_patch_cfg()).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).fill(0.0);
        }
        let img = rand_img(&mut rng, 16);
        let logits = d.discriminate_image(&store, &img).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn patch_logit_map_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut init = Init::new(&mut rng);
        let mut store = ParamStore::new();
        let cfg = PatchDiscriminatorConfig {
            base_features: 4,
            num_downsamples: 4,
        };
        let d = PatchDiscriminator::new(&mut store, &mut init, &cfg).unwrap();
        let img = rand_img(&mut rng, 256);
        let logits = d.discriminate_image(&store, &img).unwrap();
        assert_eq!(logits.dim(), (16, 16));
    }

    #[test]
    fn patch_rejects_tiny_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut init = Init::new(&mut rng);
        let mut store = ParamStore::new();
        let d = PatchDiscriminator::new(&mut store, &mut init, &toy_patch_cfg()).unwrap();
        let img = ImageBuf::zeros(2, 2);
        assert!(d.discriminate_image(&store, &img).is_err());
    }

    #[test]
    fn loc_zero_v_is_condition_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut init = Init::new(&mut rng);
        let mut store = ParamStore::new();
        let d = LocationDiscriminator::new(&mut store, &mut init, &toy_loc_cfg(), 8).unwrap();
        // v is zero-initialized already
        let img = rand_img(&mut rng, 16);
        let e1 = crate::location::encode_location_sinusoidal(10.0, 20.0, 8).unwrap();
        let e2 = crate::location::encode_location_sinusoidal(-50.0, -60.0, 8).unwrap();
        let l1 = d.discriminate_location(&store, &img, &e1).unwrap();
        let l2 = d.discriminate_location(&store, &img, &e2).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
    }

    #[test]
    fn loc_projection_is_linear_in_condition() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut init = Init::new(&mut rng);
        let mut store = ParamStore::new();
        let d = LocationDiscriminator::new(&mut store, &mut init, &toy_loc_cfg(), 8).unwrap();
        // give v nonzero entries
        let v = store.value_mut(d.v);
        for (i, x) in v.iter_mut().enumerate() {
            *x = ((i * 37) % 11) as f64 * 0.1 - 0.5;
        }
        let img = rand_img(&mut rng, 16);
        let embed = |vals: [f64; 8]| LocationEmbedding {
            vector: ndarray::Array1::from_vec(vals.to_vec()),
            lon: 0.0,
            lat: 0.0,
            source: crate::location::EmbeddingSource::Sinusoidal,
        };
        let c1 = embed([0.3, -0.1, 0.7, 0.2, -0.5, 0.9, 0.0, 0.4]);
        let c2 = embed([-0.2, 0.6, 0.1, -0.8, 0.3, -0.4, 0.5, 0.1]);
        let csum = embed([0.1, 0.5, 0.8, -0.6, -0.2, 0.5, 0.5, 0.5]);
        let zero = embed([0.0; 8]);
        let l = |c: &LocationEmbedding| d.discriminate_location(&store, &img, c).unwrap();
        let lhs = l(&csum) - l(&zero);
        let rhs = (l(&c1) - l(&zero)) + (l(&c2) - l(&zero));
        assert!((lhs - rhs).abs() < 1e-9, "lhs {lhs} rhs {rhs}");
    }

    #[test]
    fn loc_planted_inner_product() {
        // phi = [1, 2], psi = 0, V*c = [3, -1]  =>  logit = 1*3 + 2*(-1) = 1
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut init = Init::new(&mut rng);
        let mut store = ParamStore::new();
        let cfg = LocDiscriminatorConfig {
            base_features: 4,
            num_downsamples: 1,
            embed_proj_dim: 2,
        };
        let d = LocationDiscriminator::new(&mut store, &mut init, &cfg, 2).unwrap();
        store.value_mut(d.psi.w).fill(0.0);
        store.value_mut(d.psi.b).fill(0.0);
        // c = [1, 0] selects the first row of V; plant that row as [3, -1]
        let v = store.value_mut(d.v);
        v[[0, 0]] = 3.0;
        v[[0, 1]] = -1.0;
        let g = Graph::new();
        let s = Session::frozen(&g, &store);
        let phi = g.constant(
            ndarray::arr2(&[[1.0, 2.0]]).into_dyn(),
        );
        let c = g.constant(ndarray::arr2(&[[1.0, 0.0]]).into_dyn());
        let logit = d.logit_from_features(&s, phi, c).unwrap();
        assert!((g.value(logit)[[0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loc_dimension_mismatch_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut init = Init::new(&mut rng);
        let mut store = ParamStore::new();
        let d = LocationDiscriminator::new(&mut store, &mut init, &toy_loc_cfg(), 8).unwrap();
        let img = rand_img(&mut rng, 16);
        let e = crate::location::encode_location_sinusoidal(0.0, 0.0, 16).unwrap();
        assert!(d.discriminate_location(&store, &img, &e).is_err());
    }

    #[test]
    fn both_discriminators_route_gradients_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut init = Init::new(&mut rng);
        let mut store = ParamStore::new();
        let dp = PatchDiscriminator::new(&mut store, &mut init, &toy_patch_cfg()).unwrap();
        let dl = LocationDiscriminator::new(&mut store, &mut init, &toy_loc_cfg(), 8).unwrap();

        let g = Graph::new();
        let s = Session::trainable(&g, &store);
        let img = g.constant(ArrayD::from_shape_fn(IxDyn(&[2, 3, 8, 8]), |_| rng.random::<f64>()));
        let c = g.constant(ArrayD::from_shape_fn(IxDyn(&[2, 8]), |_| {
            rng.random_range(-1.0..1.0)
        }));
        let lp = dp.forward(&s, img).unwrap();
        let ll = dl.forward(&s, img, c).unwrap();
        let loss = g.add(g.mean_all(g.softplus(lp)), g.mean_all(g.softplus(ll)));
        let grads = g.backward(loss);
        for (id, var) in s.bound_params() {
            let grad = grads.get(var);
            assert!(grad.is_some(), "no grad for {}", store.name(id));
            assert!(
                grad.unwrap().iter().any(|&x| x != 0.0),
                "all-zero grad for {}",
                store.name(id)
            );
        }
        assert_eq!(s.bound_params().len(), store.len());
    }
}
