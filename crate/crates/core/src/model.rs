//! The complete trainable state, partitioned into gradient routes.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, DenoiserState};
use crate::encoders::{Compressor, EncoderConfig, FeatureExtractors, FeatureKind, FrozenEncoders};
use crate::error::{Error, Result};
use crate::nn::{Builder, Group, ParamStore, Route};
use crate::seed;
use crate::thinking::{ContextConfig, ContextEncoder, ProjectionHead, QueryBank};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub init_seed: u64,
    pub encoder: EncoderConfig,
    pub context: ContextConfig,
    pub backbone: BackboneConfig,
    pub head_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            init_seed: 0,
            encoder: EncoderConfig::default(),
            context: ContextConfig::default(),
            backbone: BackboneConfig::default(),
            head_hidden: 64,
        }
    }
}

impl ModelConfig {
    /// A 4x4-pixel instance with under a thousand trainable parameters,
    /// small enough for finite-difference gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            init_seed: 0,
            encoder: EncoderConfig {
                structure_patch: 4,
                texture_patch: 2,
                d: 4,
                k: 2,
                max_frames: 8,
                ..EncoderConfig::default()
            },
            context: ContextConfig {
                d_ctx: 8,
                blocks: 1,
                heads: 1,
                ..ContextConfig::default()
            },
            backbone: BackboneConfig {
                height: 4,
                width_px: 4,
                channels: 3,
                patch: 2,
                width: 4,
                blocks: 1,
                heads: 1,
                mlp_ratio: 1,
                lora_rank: 1,
                lora_alpha: 1.0,
            },
            head_hidden: 4,
        }
    }

    pub fn frame_dims(&self) -> (usize, usize, usize) {
        (
            self.backbone.height,
            self.backbone.width_px,
            self.backbone.channels,
        )
    }
}

#[derive(Debug, Clone)]
pub struct ModelState {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub features: FeatureExtractors,
    pub context: ContextEncoder,
    pub queries: QueryBank,
    pub head_structure: ProjectionHead,
    pub head_texture: ProjectionHead,
    pub denoiser: DenoiserState,
}

impl ModelState {
    pub fn new(cfg: &ModelConfig, device: &Device, dtype: DType) -> Result<Self> {
        let mut store = ParamStore::new(device.clone(), dtype);
        let encoders = FrozenEncoders::new(&cfg.encoder, cfg.frame_dims(), device, dtype)?;
        let context = ContextEncoder::new(&cfg.context, cfg.encoder.d, device, dtype)?;
        let mut rng = seed::rng(seed::derive_str(cfg.init_seed, "model", 0));

        let (structure, texture) = {
            let mut b = Builder::trainable(&mut store, Group::Compressor, "compressor", &mut rng);
            (
                Compressor::new(
                    &mut b,
                    FeatureKind::Structure,
                    &cfg.encoder,
                    encoders.num_tokens(FeatureKind::Structure),
                )?,
                Compressor::new(
                    &mut b,
                    FeatureKind::Texture,
                    &cfg.encoder,
                    encoders.num_tokens(FeatureKind::Texture),
                )?,
            )
        };
        let queries = {
            let mut b = Builder::trainable(&mut store, Group::Query, "queries", &mut rng);
            QueryBank::new(&mut b, cfg.encoder.k, cfg.context.d_ctx)?
        };
        let (head_structure, head_texture) = {
            let mut b = Builder::trainable(&mut store, Group::Head, "head", &mut rng);
            (
                ProjectionHead::new(
                    &mut b,
                    "structure",
                    cfg.context.d_ctx,
                    cfg.head_hidden,
                    cfg.encoder.d,
                )?,
                ProjectionHead::new(
                    &mut b,
                    "texture",
                    cfg.context.d_ctx,
                    cfg.head_hidden,
                    cfg.encoder.d,
                )?,
            )
        };
        let denoiser = {
            let mut b = Builder::trainable(&mut store, Group::Backbone, "backbone", &mut rng);
            DenoiserState::new(
                &mut b,
                &cfg.backbone,
                cfg.context.d_ctx,
                cfg.encoder.d,
                cfg.encoder.k,
            )?
        };
        Ok(ModelState {
            cfg: cfg.clone(),
            store,
            features: FeatureExtractors {
                encoders,
                structure,
                texture,
            },
            context,
            queries,
            head_structure,
            head_texture,
            denoiser,
        })
    }

    pub fn device(&self) -> &Device {
        &self.store.device
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    /// Parameter name to group, for every trainable parameter.
    pub fn route_table(&self) -> BTreeMap<String, Group> {
        self.store
            .iter()
            .map(|(n, _, g)| (n.to_string(), g))
            .collect()
    }

    pub fn route_vars(&self, route: Route) -> Vec<candle_core::Var> {
        let groups: Vec<Group> = Group::ALL
            .into_iter()
            .filter(|g| g.route() == route)
            .collect();
        self.store.vars(&groups)
    }

    /// Both feature predictions (B, K, d) from query embeddings (B, K, d_ctx).
    pub fn project_predictions(&self, query_embeddings: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((
            self.head_structure.forward(query_embeddings)?,
            self.head_texture.forward(query_embeddings)?,
        ))
    }

    /// Copies every trainable parameter value from `other`.
    pub fn copy_params_from(&mut self, other: &ModelState) -> Result<()> {
        for (name, var, _) in self.store.iter() {
            let src = other
                .store
                .get(name)
                .ok_or_else(|| Error::ConfigMismatch(format!("missing parameter `{name}`")))?;
            var.set(src.as_tensor())?;
        }
        Ok(())
    }
}
