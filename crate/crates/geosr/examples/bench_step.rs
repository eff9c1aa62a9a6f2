// timing probe: toy-ish configs for acceptance experiments
use geosr::discriminators::{LocDiscriminatorConfig, PatchDiscriminatorConfig};
use geosr::generator::GeneratorConfig;
use geosr::geodata::{synthesize_dataset, GeoWorldParams, SynthOptions};
use geosr::training::*;
use std::time::Instant;

fn main() {
    // config A: toy preset trunk (32/16/3), scale 2, LR16->HR32, batch 4
    let cfg_a = TrainConfig {
        generator: GeneratorConfig {
            scale_factor: 2,
            embed_dim: 32,
            d_token: 16,
            n_loc: 4,
            attn_window_threshold: 16,
            ..GeneratorConfig::toy()
        },
        img_disc: PatchDiscriminatorConfig { base_features: 16, num_downsamples: 3 },
        loc_disc: LocDiscriminatorConfig { base_features: 16, num_downsamples: 3, embed_proj_dim: 32 },
        lr: 1e-3, batch_size: 4, steps: 10, seed: 1, checkpoint_every: 1000,
        ..TrainConfig::toy()
    };
    // config B: tiny (16/8/1), scale 2, LR12->HR24, batch 2
    let cfg_b = TrainConfig {
        generator: GeneratorConfig {
            num_features: 16, grow_channels: 8, num_blocks: 1,
            scale_factor: 2, embed_dim: 16, d_token: 8, n_loc: 4, attn_heads: 4,
            attn_window_threshold: 16, max_output_side: 1024,
            attn_enabled: true, cond_enabled: true,
        },
        img_disc: PatchDiscriminatorConfig { base_features: 8, num_downsamples: 2 },
        loc_disc: LocDiscriminatorConfig { base_features: 8, num_downsamples: 2, embed_proj_dim: 16 },
        lr: 1e-3, batch_size: 2, steps: 10, seed: 1, checkpoint_every: 1000,
        ..TrainConfig::toy()
    };
    for (name, cfg, hr, tiles) in [("toy32@hr32b4", cfg_a, 32usize, 8usize), ("tiny16@hr24b2", cfg_b, 24, 8)] {
        let dir = tempfile::tempdir().unwrap();
        let records = synthesize_dataset(dir.path(), &SynthOptions {
            params: GeoWorldParams { hr_size: hr, scale_factor: 2, seed: 5, hue_period_deg: 60.0, ..Default::default() },
            tiles, noise_sigma: 0.01, lon_range: (-30.0, 30.0), lat_range: (-20.0, 20.0),
        }).unwrap();
        let dataset = Dataset::load(dir.path(), &records, true).unwrap();
        let (models, mut state) = build_models(&cfg).unwrap();
        let sampler = sampler_for_dataset(&dataset, &cfg).unwrap();
        let batch = dataset.batch(&(0..cfg.batch_size).collect::<Vec<_>>());
        // warmup
        train_step(&models, &cfg, &sampler, &mut state, &batch).unwrap();
        let t0 = Instant::now();
        let n = 10;
        for _ in 0..n {
            train_step(&models, &cfg, &sampler, &mut state, &batch).unwrap();
        }
        let dt = t0.elapsed().as_secs_f64() / n as f64;
        println!("{name}: {:.1} ms/step -> 1000 steps = {:.1}s", dt * 1e3, dt * 1000.0);
    }
}
