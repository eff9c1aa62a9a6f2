//! Seeded, resumable alternating GAN training.
//!
//! Every step updates the two critics first (shared optimizer settings, one
//! step each) and the generator second. All randomness flows through either
//! the seeded init RNG (stream 0), the training RNG carried in
//! [`TrainState`] (stream 1), or per-epoch shuffle RNGs derived from
//! (seed, epoch), so an interrupted run resumed from a checkpoint reproduces
//! the uninterrupted run bit for bit.

mod adam;
mod checkpoint;
mod config;
mod data;

pub use adam::{adam_step, AdamParams, AdamState, ADAM_EPS};
pub use checkpoint::{load_archive, save_archive, CheckpointData, RngSnapshot};
pub use config::{HookConfig, TrainConfig};
pub use data::{Batch, Dataset};

use crate::autodiff::{Graph, Gradients, Var};
use crate::discriminators::{LocationDiscriminator, PatchDiscriminator};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::location::{
    encoder_from_spec, FalseLocationSampler, LocationEmbedding, LocationEncoder,
};
use crate::losses::{
    extractor_from_spec, gan_losses, loc_match_loss, perceptual_loss, pixel_loss, AuxLoss,
    AuxRegistry, FeatureExtractor,
};
use crate::nn::{Init, ParamStore, Session};
use ndarray::ArrayD;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Networks and pluggable strategies; parameters live in [`TrainState`].
pub struct Models {
    pub generator: Generator,
    pub d_img: PatchDiscriminator,
    pub d_loc: LocationDiscriminator,
    pub extractor: Box<dyn FeatureExtractor>,
    pub encoder: Box<dyn LocationEncoder>,
    pub clip_hook: Box<dyn AuxLoss>,
    pub osm_hook: Box<dyn AuxLoss>,
}

/// Everything that evolves during training.
pub struct TrainState {
    pub step: u64,
    pub g_store: ParamStore,
    pub d_img_store: ParamStore,
    pub d_loc_store: ParamStore,
    pub g_opt: AdamState,
    pub d_img_opt: AdamState,
    pub d_loc_opt: AdamState,
    pub rng: ChaCha8Rng,
}

/// Per-step loss record; the CSV columns come from here.
#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub pix: f64,
    pub perceptual: f64,
    pub gan_g: f64,
    pub gan_d: f64,
    pub loc_match_d: f64,
    pub loc_match_g: f64,
    pub clip: f64,
    pub osm: f64,
    pub total: f64,
}

pub const METRICS_HEADER: &str = "step,pix,perceptual,gan_g,gan_d,loc_match_d,loc_match_g,total";

/// Construct models and a fresh state from the config. Initialization draws
/// from stream 0 of the seed; the training RNG runs on stream 1.
pub fn build_models(cfg: &TrainConfig) -> Result<(Models, TrainState)> {
    cfg.validate()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut init = Init::new(&mut init_rng);

    let mut g_store = ParamStore::new();
    let generator = Generator::new(&mut g_store, &mut init, &cfg.generator)?;
    let mut d_img_store = ParamStore::new();
    let d_img = PatchDiscriminator::new(&mut d_img_store, &mut init, &cfg.img_disc)?;
    let mut d_loc_store = ParamStore::new();
    let d_loc = LocationDiscriminator::new(
        &mut d_loc_store,
        &mut init,
        &cfg.loc_disc,
        cfg.generator.embed_dim,
    )?;

    let extractor = extractor_from_spec(&cfg.perceptual_extractor, cfg.perceptual_seed)?;
    let encoder = encoder_from_spec(&cfg.location_encoder, cfg.generator.embed_dim)?;
    let registry = AuxRegistry::default();
    let clip_hook = registry.build(&cfg.hooks.clip)?;
    let osm_hook = registry.build(&cfg.hooks.osm)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let g_opt = AdamState::zeros_like(&g_store);
    let d_img_opt = AdamState::zeros_like(&d_img_store);
    let d_loc_opt = AdamState::zeros_like(&d_loc_store);
    Ok((
        Models {
            generator,
            d_img,
            d_loc,
            extractor,
            encoder,
            clip_hook,
            osm_hook,
        },
        TrainState {
            step: 0,
            g_store,
            d_img_store,
            d_loc_store,
            g_opt,
            d_img_opt,
            d_loc_opt,
            rng,
        },
    ))
}

fn check_finite(value: f64, component: &str, step: u64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            component: component.to_string(),
            step,
        })
    }
}

fn stack_embeddings(g: &Graph, es: &[LocationEmbedding]) -> Var {
    let dim = es[0].dim();
    let mut arr = ndarray::Array2::<f64>::zeros((es.len(), dim));
    for (i, e) in es.iter().enumerate() {
        arr.row_mut(i).assign(&e.vector);
    }
    g.constant(arr.into_dyn())
}

fn collect_grads(
    store: &ParamStore,
    session: &Session,
    grads: &mut Gradients,
) -> Vec<Option<ArrayD<f64>>> {
    let mut out: Vec<Option<ArrayD<f64>>> = (0..store.len()).map(|_| None).collect();
    for (id, var) in session.bound_params() {
        out[id.index()] = grads.take(var);
    }
    out
}

/// One alternating training step: critics first, generator second.
pub fn train_step(
    models: &Models,
    cfg: &TrainConfig,
    sampler: &FalseLocationSampler,
    state: &mut TrainState,
    batch: &Batch,
) -> Result<StepStats> {
    if batch.coords.is_empty() {
        return Err(Error::invalid_input("empty batch"));
    }
    let step = state.step;
    let w = &cfg.weights;
    let adam = AdamParams {
        lr: cfg.lr,
        beta1: cfg.adam_betas.0,
        beta2: cfg.adam_betas.1,
    };

    // embeddings for the true coordinates and freshly sampled false ones
    let c_true: Vec<LocationEmbedding> = batch
        .coords
        .iter()
        .map(|&(lon, lat)| models.encoder.encode(lon, lat))
        .collect::<Result<_>>()?;
    let c_false: Vec<LocationEmbedding> = batch
        .coords
        .iter()
        .map(|&(lon, lat)| {
            let (flon, flat) = sampler.sample(lon, lat, &mut state.rng)?;
            models.encoder.encode(flon, flat)
        })
        .collect::<Result<_>>()?;

    // ---- critic update -------------------------------------------------
    let (gan_d_val, lm_d_val) = {
        let g = Graph::new();
        let gen_s = Session::frozen(&g, &state.g_store);
        let dimg_s = Session::trainable(&g, &state.d_img_store);
        let dloc_s = Session::trainable(&g, &state.d_loc_store);
        let lr_var = g.constant(batch.lr.clone().into_dyn());
        let hr_var = g.constant(batch.hr.clone().into_dyn());
        let emb = if cfg.generator.cond_enabled {
            Some(stack_embeddings(&g, &c_true))
        } else {
            None
        };
        let sr = models.generator.forward(&gen_s, lr_var, emb)?;
        let real_logits = models.d_img.forward(&dimg_s, hr_var)?;
        let fake_logits = models.d_img.forward(&dimg_s, sr)?;
        let (gan_d, _) = gan_losses(&g, real_logits, fake_logits);
        let lm = loc_match_loss(
            &dloc_s,
            &models.d_loc,
            hr_var,
            sr,
            &c_true,
            &c_false,
            cfg.false_loc_min_sep,
        )?;
        let gan_d_val = check_finite(g.scalar_value(gan_d), "gan_d", step)?;
        let lm_d_val = check_finite(g.scalar_value(lm.d_objective), "loc_match_d", step)?;
        let total = g.add(
            g.scale(gan_d, w.gan),
            g.scale(lm.d_objective, w.loc_match),
        );
        let mut grads = g.backward(total);
        let dimg_grads = collect_grads(&state.d_img_store, &dimg_s, &mut grads);
        let dloc_grads = collect_grads(&state.d_loc_store, &dloc_s, &mut grads);
        adam_step(&adam, &mut state.d_img_store, &mut state.d_img_opt, &dimg_grads);
        adam_step(&adam, &mut state.d_loc_store, &mut state.d_loc_opt, &dloc_grads);
        (gan_d_val, lm_d_val)
    };

    // ---- generator update ----------------------------------------------
    let stats = {
        let g = Graph::new();
        let gen_s = Session::trainable(&g, &state.g_store);
        let dimg_s = Session::frozen(&g, &state.d_img_store);
        let dloc_s = Session::frozen(&g, &state.d_loc_store);
        let lr_var = g.constant(batch.lr.clone().into_dyn());
        let hr_var = g.constant(batch.hr.clone().into_dyn());
        let emb = if cfg.generator.cond_enabled {
            Some(stack_embeddings(&g, &c_true))
        } else {
            None
        };
        let sr = models.generator.forward(&gen_s, lr_var, emb)?;
        let pix = pixel_loss(&g, sr, hr_var)?;
        let perc = perceptual_loss(&g, sr, hr_var, models.extractor.as_ref())?;
        let fake_logits = models.d_img.forward(&dimg_s, sr)?;
        let gan_g = g.mean_all(g.softplus(g.neg(fake_logits)));
        let lm = loc_match_loss(
            &dloc_s,
            &models.d_loc,
            hr_var,
            sr,
            &c_true,
            &c_false,
            cfg.false_loc_min_sep,
        )?;

        let sr_value = g.value(sr);
        let hr_value = g.value(hr_var);
        let zeros = ArrayD::zeros(sr_value.raw_dim());
        let (clip_val, clip_grad) = models.clip_hook.eval(&sr_value, &hr_value)?;
        let (osm_val, osm_grad) = models.osm_hook.eval(&sr_value, &hr_value)?;
        let clip_node = g.injected_scalar(clip_val, sr, clip_grad.unwrap_or_else(|| zeros.clone()));
        let osm_node = g.injected_scalar(osm_val, sr, osm_grad.unwrap_or(zeros));

        let pix_val = check_finite(g.scalar_value(pix), "pix", step)?;
        let perc_val = check_finite(g.scalar_value(perc), "perceptual", step)?;
        let gan_g_val = check_finite(g.scalar_value(gan_g), "gan_g", step)?;
        let lm_g_val = check_finite(g.scalar_value(lm.g_term), "loc_match_g", step)?;
        let clip_val = check_finite(clip_val, "clip", step)?;
        let osm_val = check_finite(osm_val, "osm", step)?;

        let mut total = g.scale(pix, w.pix);
        total = g.add(total, g.scale(perc, w.perceptual));
        total = g.add(total, g.scale(gan_g, w.gan));
        total = g.add(total, g.scale(clip_node, w.clip));
        total = g.add(total, g.scale(osm_node, w.osm));
        if cfg.loc_match_generator_term {
            total = g.add(total, g.scale(lm.g_term, w.loc_match));
        }
        let total_val = check_finite(g.scalar_value(total), "total", step)?;

        let mut grads = g.backward(total);
        let g_grads = collect_grads(&state.g_store, &gen_s, &mut grads);
        adam_step(&adam, &mut state.g_store, &mut state.g_opt, &g_grads);

        StepStats {
            pix: pix_val,
            perceptual: perc_val,
            gan_g: gan_g_val,
            gan_d: gan_d_val,
            loc_match_d: lm_d_val,
            loc_match_g: lm_g_val,
            clip: clip_val,
            osm: osm_val,
            total: total_val,
        }
    };

    state.step += 1;
    state.g_store.check_finite(state.step)?;
    state.d_img_store.check_finite(state.step)?;
    state.d_loc_store.check_finite(state.step)?;
    Ok(stats)
}

/// False-location sampler over the dataset's bounding box, padded so a
/// compliant draw always exists.
pub fn sampler_for_dataset(dataset: &Dataset, cfg: &TrainConfig) -> Result<FalseLocationSampler> {
    let ((lon0, lon1), (lat0, lat1)) = dataset.bounding_box();
    let pad = cfg.false_loc_min_sep * 2.0;
    FalseLocationSampler::new(
        ((lon0 - pad).max(-180.0), (lon1 + pad).min(180.0)),
        ((lat0 - pad).max(-90.0), (lat1 + pad).min(90.0)),
        cfg.false_loc_min_sep,
    )
}

fn epoch_order(seed: u64, epoch: u64, len: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(2);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

fn checkpoint_tensors(state: &TrainState) -> Vec<(String, &ArrayD<f64>)> {
    let mut out = Vec::new();
    for (store, opt) in [
        (&state.g_store, &state.g_opt),
        (&state.d_img_store, &state.d_img_opt),
        (&state.d_loc_store, &state.d_loc_opt),
    ] {
        for (name, value) in store.iter() {
            out.push((name.to_string(), value));
        }
        for (i, (name, _)) in store.iter().enumerate() {
            out.push((format!("adam.m.{name}"), &opt.m[i]));
        }
        for (i, (name, _)) in store.iter().enumerate() {
            out.push((format!("adam.v.{name}"), &opt.v[i]));
        }
    }
    out
}

/// Write the full training state (parameters, moments, RNG, config echo).
pub fn save_checkpoint(path: &Path, cfg: &TrainConfig, state: &TrainState) -> Result<()> {
    let tensors = checkpoint_tensors(state);
    save_archive(
        path,
        cfg,
        state.step,
        &RngSnapshot::capture(&state.rng),
        &tensors,
    )
}

/// Restore `state` in place from an archive, validating the config echo and
/// every tensor shape against the freshly built skeleton.
pub fn restore_checkpoint(path: &Path, cfg: &TrainConfig, state: &mut TrainState) -> Result<()> {
    let data = load_archive(path)?;
    if !cfg.matches_except_steps(&data.config) {
        return Err(Error::Checkpoint(
            "checkpoint config does not match the requested config (only `steps` may differ)"
                .into(),
        ));
    }
    let expected = checkpoint_tensors(state).len();
    if data.tensors.len() != expected {
        return Err(Error::Checkpoint(format!(
            "archive has {} tensors, expected {expected}",
            data.tensors.len()
        )));
    }
    for (name, value) in data.tensors {
        if let Some(param) = name.strip_prefix("adam.m.") {
            load_moment(state, param, value, MomentKind::M)?;
        } else if let Some(param) = name.strip_prefix("adam.v.") {
            load_moment(state, param, value, MomentKind::V)?;
        } else {
            store_for_mut(state, &name)?.load(&name, value)?;
        }
    }
    state.step = data.step;
    state.g_opt.t = data.step;
    state.d_img_opt.t = data.step;
    state.d_loc_opt.t = data.step;
    state.rng = data.rng.restore();
    Ok(())
}

enum MomentKind {
    M,
    V,
}

fn store_for_mut<'a>(state: &'a mut TrainState, name: &str) -> Result<&'a mut ParamStore> {
    if name.starts_with("g.") {
        Ok(&mut state.g_store)
    } else if name.starts_with("d_img.") {
        Ok(&mut state.d_img_store)
    } else if name.starts_with("d_loc.") {
        Ok(&mut state.d_loc_store)
    } else {
        Err(Error::Checkpoint(format!("unknown tensor `{name}`")))
    }
}

fn load_moment(
    state: &mut TrainState,
    param: &str,
    value: ArrayD<f64>,
    kind: MomentKind,
) -> Result<()> {
    let (store, opt) = if param.starts_with("g.") {
        (&state.g_store, &mut state.g_opt)
    } else if param.starts_with("d_img.") {
        (&state.d_img_store, &mut state.d_img_opt)
    } else if param.starts_with("d_loc.") {
        (&state.d_loc_store, &mut state.d_loc_opt)
    } else {
        return Err(Error::Checkpoint(format!("unknown moment `{param}`")));
    };
    let id = store
        .id_of(param)
        .ok_or_else(|| Error::Checkpoint(format!("moment for unknown parameter `{param}`")))?;
    if store.value(id).shape() != value.shape() {
        return Err(Error::Checkpoint(format!(
            "moment shape mismatch for `{param}`"
        )));
    }
    match kind {
        MomentKind::M => opt.m[id.index()] = value,
        MomentKind::V => opt.v[id.index()] = value,
    }
    Ok(())
}

#[derive(Debug)]
pub struct TrainOutputs {
    pub final_checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
}

/// Run (or resume) training against a manifest. Writes `metrics.csv` (one
/// row per executed step), periodic `checkpoint_<step>.ckpt` files, and
/// `checkpoint_final.ckpt`.
pub fn run_training(
    cfg: &TrainConfig,
    manifest: &Path,
    data_root: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutputs> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let records = crate::geodata::read_manifest(manifest)?;
    let train_records: Vec<_> = records
        .iter()
        .filter(|r| r.split == crate::geodata::Split::Train)
        .cloned()
        .collect();
    if train_records.is_empty() {
        return Err(Error::invalid_input("manifest has no train-split records"));
    }
    let dataset = Dataset::load(data_root, &train_records, cfg.grayscale_lr)?;
    if dataset.len() < cfg.batch_size {
        return Err(Error::invalid_input(format!(
            "dataset has {} tiles but batch_size is {}",
            dataset.len(),
            cfg.batch_size
        )));
    }
    if dataset.hr_side() != dataset.lr_side() * cfg.generator.scale_factor {
        return Err(Error::invalid_input(format!(
            "HR side {} is not LR side {} x scale {}",
            dataset.hr_side(),
            dataset.lr_side(),
            cfg.generator.scale_factor
        )));
    }
    let (models, mut state) = build_models(cfg)?;
    if let Some(ckpt) = resume {
        restore_checkpoint(ckpt, cfg, &mut state)?;
    }
    let sampler = sampler_for_dataset(&dataset, cfg)?;

    let metrics_csv = out_dir.join("metrics.csv");
    let mut metrics = std::io::BufWriter::new(std::fs::File::create(&metrics_csv)?);
    writeln!(metrics, "{METRICS_HEADER}")?;

    let batches_per_epoch = (dataset.len() / cfg.batch_size) as u64;
    let mut cached_epoch = u64::MAX;
    let mut order = Vec::new();
    while state.step < cfg.steps {
        let epoch = state.step / batches_per_epoch;
        if epoch != cached_epoch {
            order = epoch_order(cfg.seed, epoch, dataset.len());
            cached_epoch = epoch;
        }
        let pos = (state.step % batches_per_epoch) as usize * cfg.batch_size;
        let indices = &order[pos..pos + cfg.batch_size];
        let batch = dataset.batch(indices);
        let stats = train_step(&models, cfg, &sampler, &mut state, &batch)?;
        writeln!(
            metrics,
            "{},{},{},{},{},{},{},{}",
            state.step,
            stats.pix,
            stats.perceptual,
            stats.gan_g,
            stats.gan_d,
            stats.loc_match_d,
            stats.loc_match_g,
            stats.total
        )?;
        if state.step % cfg.checkpoint_every == 0 {
            let path = out_dir.join(format!("checkpoint_{:06}.ckpt", state.step));
            save_checkpoint(&path, cfg, &state)?;
        }
    }
    metrics.flush()?;
    let final_checkpoint = out_dir.join("checkpoint_final.ckpt");
    save_checkpoint(&final_checkpoint, cfg, &state)?;
    Ok(TrainOutputs {
        final_checkpoint,
        metrics_csv,
    })
}

/// Rebuild models from the config embedded in a checkpoint and load its
/// weights, for the inference-side commands.
pub fn load_for_inference(path: &Path) -> Result<(TrainConfig, Models, TrainState)> {
    let data = load_archive(path)?;
    let cfg = data.config.clone();
    let (models, mut state) = build_models(&cfg)?;
    restore_checkpoint(path, &cfg, &mut state)?;
    Ok((cfg, models, state))
}
