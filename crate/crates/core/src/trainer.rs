//! Episodic training: one sampled episode per step, reverse-mode
//! gradients, and an adaptive-moment update with two learning-rate
//! groups (embedder weights vs everything else).
//!
//! Every iteration derives its episode from `(seed, iteration)`, so a
//! run can stop after any step and resume bit-identically from a saved
//! parameter/optimizer snapshot.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

// Used by the no_std build; the test harness links `std`, whose inherent
// float methods shadow the trait.
#[cfg_attr(test, allow(unused_imports))]
use num_traits::Float;

use crate::autograd::Graph;
use crate::cloud::LabeledCloud;
use crate::error::{Error, Result};
use crate::fewshot::{forward_episode, sample_episode, EpisodeConfig, PipelineConfig};
use crate::params::ParamStore;

/// Optimization schedule and episode stream.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub iterations: u64,
    /// Learning rate of parameters named `embedder.*`.
    pub lr_embedder: f64,
    /// Learning rate of every other parameter group.
    pub lr_rest: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Base seed of the episode stream; iteration `i` uses stream `i`.
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            iterations: 500,
            lr_embedder: 1e-4,
            lr_rest: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        // Zero is allowed (a null update is a legitimate debugging run);
        // negative rates are not.
        if !(self.lr_embedder >= 0.0) || !(self.lr_rest >= 0.0) {
            return Err(Error::Config("learning rates must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// First/second moment estimates per parameter, plus the step counter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One adaptive-moment update over all parameters. `grads` maps each
/// parameter name to its gradient (same layout as the tensor data).
pub fn adam_step(
    store: &mut ParamStore,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut AdamState,
    cfg: &TrainerConfig,
) -> Result<()> {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let names: Vec<String> = grads.keys().cloned().collect();
    for name in names {
        let grad = &grads[&name];
        let lr = if name.starts_with("embedder.") {
            cfg.lr_embedder
        } else {
            cfg.lr_rest
        };
        let tensor = store.get_mut(&name)?;
        let data = tensor.data_mut();
        if data.len() != grad.len() {
            return Err(Error::Contract(format!(
                "gradient for `{name}` has {} values, parameter has {}",
                grad.len(),
                data.len()
            )));
        }
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; grad.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; grad.len()]);
        for i in 0..grad.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Per-iteration training record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainProgress {
    pub iteration: u64,
    pub loss: f64,
    pub episode_seed: (u64, u64),
    pub clamp_warnings: usize,
}

/// Runs episodic training from `start_iteration` (exclusive upper bound
/// `cfg.iterations`), invoking `on_iteration` after every update.
///
/// A non-finite value anywhere in the forward pass aborts with a
/// numeric error naming the offending episode seed.
#[allow(clippy::too_many_arguments)]
pub fn train(
    blocks: &[LabeledCloud],
    pool: &[usize],
    ep_cfg: &EpisodeConfig,
    pipeline: &PipelineConfig,
    cfg: &TrainerConfig,
    store: &mut ParamStore,
    adam: &mut AdamState,
    start_iteration: u64,
    mut on_iteration: impl FnMut(&TrainProgress),
) -> Result<()> {
    cfg.validate()?;
    pipeline.validate()?;
    let tag_episode = |e: Error, it: u64| match e {
        Error::Numeric(msg) => Error::Numeric(format!(
            "{msg} [episode seed ({}, {it})]",
            cfg.seed
        )),
        other => other,
    };
    for it in start_iteration..cfg.iterations {
        let ep = sample_episode(blocks, pool, ep_cfg, cfg.seed, it)?;
        let mut g = Graph::new();
        let binding = store.bind(&mut g)?;
        let fwd = forward_episode(&mut g, &ep, &binding, pipeline)
            .map_err(|e| tag_episode(e, it))?;
        let loss = g.value(fwd.loss)[0];
        let grads = g.backward(fwd.loss).map_err(|e| tag_episode(e, it))?;

        let mut by_name: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (name, id) in binding.iter() {
            let grad = grads.get(id).ok_or_else(|| {
                Error::Contract(format!("missing gradient for parameter `{name}`"))
            })?;
            by_name.insert(String::from(name), grad.to_vec());
        }
        adam_step(store, &by_name, adam, cfg)?;
        on_iteration(&TrainProgress {
            iteration: it,
            loss,
            episode_seed: (cfg.seed, it),
            clamp_warnings: fwd.clamp_warnings,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tensor;
    use crate::cloud::split_blocks;
    use crate::embedder::EmbedderConfig;
    use crate::fewshot::{init_params, Variant};
    use crate::synth::{generate_scene, SceneSpec};

    fn tiny_setup() -> (Vec<LabeledCloud>, EpisodeConfig, PipelineConfig) {
        let mut blocks = Vec::new();
        for s in 0..6 {
            let scene = generate_scene(&SceneSpec::desk(800 + s)).unwrap();
            blocks.extend(split_blocks(&scene.cloud, 4.0).unwrap());
        }
        let ep_cfg = EpisodeConfig {
            way: 2,
            shot: 1,
            n_points: 128,
            min_points: 20,
            jitter_sigma: 0.0,
            rotate: false,
        };
        let pipeline = PipelineConfig {
            embedder: EmbedderConfig {
                input_channels: 6,
                edgeconv_widths: alloc::vec![8, 8],
                knn_k: 4,
                head_widths: alloc::vec![8, 8],
                feature_dim: 8,
                seed: 21,
            },
            k_prototypes: 3,
            variant: Variant::FullBfg,
            ..PipelineConfig::default()
        };
        (blocks, ep_cfg, pipeline)
    }

    #[test]
    fn zero_learning_rates_leave_parameters_untouched() {
        let (blocks, ep_cfg, pipeline) = tiny_setup();
        let mut store = init_params(&pipeline).unwrap();
        let before = store.clone();
        let cfg = TrainerConfig {
            iterations: 10,
            lr_embedder: 0.0,
            lr_rest: 0.0,
            seed: 5,
            ..TrainerConfig::default()
        };
        let mut adam = AdamState::new();
        train(&blocks, &[2, 3], &ep_cfg, &pipeline, &cfg, &mut store, &mut adam, 0, |_| {})
            .unwrap();
        assert_eq!(store, before);
        assert_eq!(adam.t, 10);
    }

    #[test]
    fn adam_moves_parameters_against_the_gradient() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::row(alloc::vec![1.0, -2.0]).unwrap()).unwrap();
        let mut adam = AdamState::new();
        let cfg = TrainerConfig { lr_rest: 0.1, ..TrainerConfig::default() };
        let mut grads = BTreeMap::new();
        grads.insert(String::from("w"), alloc::vec![0.5, -0.5]);
        adam_step(&mut store, &grads, &mut adam, &cfg).unwrap();
        let w = store.get("w").unwrap().data();
        assert!(w[0] < 1.0, "positive gradient must decrease the weight");
        assert!(w[1] > -2.0, "negative gradient must increase the weight");
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn training_resumes_bit_identically_from_a_state_snapshot() {
        let (blocks, ep_cfg, pipeline) = tiny_setup();
        let cfg = TrainerConfig { iterations: 3, seed: 9, ..TrainerConfig::default() };

        let mut store_a = init_params(&pipeline).unwrap();
        let mut adam_a = AdamState::new();
        let mut losses_a = Vec::new();
        train(&blocks, &[2, 3], &ep_cfg, &pipeline, &cfg, &mut store_a, &mut adam_a, 0, |p| {
            losses_a.push(p.loss)
        })
        .unwrap();

        // Same run, interrupted after 2 iterations and resumed.
        let cfg2 = TrainerConfig { iterations: 2, ..cfg.clone() };
        let mut store_b = init_params(&pipeline).unwrap();
        let mut adam_b = AdamState::new();
        train(&blocks, &[2, 3], &ep_cfg, &pipeline, &cfg2, &mut store_b, &mut adam_b, 0, |_| {})
            .unwrap();
        let snapshot_store = store_b.clone();
        let snapshot_adam = adam_b.clone();
        let mut store_c = snapshot_store;
        let mut adam_c = snapshot_adam;
        let mut resumed = Vec::new();
        train(&blocks, &[2, 3], &ep_cfg, &pipeline, &cfg, &mut store_c, &mut adam_c, 2, |p| {
            resumed.push(p.loss)
        })
        .unwrap();
        assert_eq!(resumed.len(), 1);
        assert_eq!(resumed[0].to_bits(), losses_a[2].to_bits());
        assert_eq!(store_c, store_a);
    }

    #[test]
    fn exploding_parameters_abort_with_the_episode_seed() {
        let (blocks, ep_cfg, pipeline) = tiny_setup();
        let mut store = init_params(&pipeline).unwrap();
        // Poison a weight so the forward pass overflows to infinity.
        {
            let w = store.get_mut("embedder.edgeconv0.weight").unwrap();
            for v in w.data_mut() {
                *v = 1e200;
            }
        }
        let cfg = TrainerConfig { iterations: 1, seed: 77, ..TrainerConfig::default() };
        let mut adam = AdamState::new();
        let err = train(&blocks, &[2, 3], &ep_cfg, &pipeline, &cfg, &mut store, &mut adam, 0, |_| {})
            .unwrap_err();
        match err {
            Error::Numeric(msg) => {
                assert!(msg.contains("episode seed (77, 0)"), "{msg}");
            }
            other => panic!("expected numeric error, got {other:?}"),
        }
    }
}
