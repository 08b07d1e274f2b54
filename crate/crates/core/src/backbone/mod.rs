//! Conditional flow-matching denoiser with low-rank adapters.
//!
//! Convention: t = 1 is pure noise, `x_t = (1 - t) x + t eps`, and the
//! network regresses the velocity `eps - x`. Pixels in [0, 1] map to data
//! values `2p - 1`.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::nn::{sinusoidal, Builder, Init, LayerNorm, Linear, Mlp, MultiHeadAttention, MASKED};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub height: usize,
    pub width_px: usize,
    pub channels: usize,
    pub patch: usize,
    pub width: usize,
    pub blocks: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            height: 32,
            width_px: 32,
            channels: 3,
            patch: 4,
            width: 64,
            blocks: 4,
            heads: 4,
            mlp_ratio: 4,
            lora_rank: 4,
            lora_alpha: 4.0,
        }
    }
}

impl BackboneConfig {
    pub fn num_patches(&self) -> usize {
        (self.height / self.patch) * (self.width_px / self.patch)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }
}

/// Condition tokens for one batch. `source` holds the source image as data
/// patches (B, P, patch_dim); `text` holds context-encoder outputs
/// (B, Lt, d_ctx) right-padded to the longest row; `guidance` is the
/// modulated feature sequence (B, K, d).
#[derive(Debug, Clone)]
pub struct ConditionSet {
    pub source: Tensor,
    pub text: Option<Tensor>,
    pub text_len: Vec<usize>,
    pub guidance: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct DitBlock {
    pub ln1: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ln3: LayerNorm,
    pub mlp: Mlp,
}

impl DitBlock {
    fn linears(&self) -> Vec<(&'static str, &Linear)> {
        let [q, k, v, o] = self.self_attn.linears();
        let [cq, ck, cv, co] = self.cross_attn.linears();
        vec![
            ("self_attn.q", q),
            ("self_attn.k", k),
            ("self_attn.v", v),
            ("self_attn.o", o),
            ("cross_attn.q", cq),
            ("cross_attn.k", ck),
            ("cross_attn.v", cv),
            ("cross_attn.o", co),
            ("mlp.fc1", &self.mlp.fc1),
            ("mlp.fc2", &self.mlp.fc2),
        ]
    }

    fn linears_mut(&mut self) -> Vec<&mut Linear> {
        let mut out: Vec<&mut Linear> = Vec::new();
        out.extend(self.self_attn.linears_mut());
        out.extend(self.cross_attn.linears_mut());
        out.push(&mut self.mlp.fc1);
        out.push(&mut self.mlp.fc2);
        out
    }
}

#[derive(Debug, Clone)]
pub struct DenoiserState {
    pub cfg: BackboneConfig,
    pub patch_embed: Linear,
    pub source_embed: Linear,
    pub pos: Tensor,
    pub time_fc1: Linear,
    pub time_fc2: Linear,
    pub ctx_type: Tensor,
    pub text_proj: Linear,
    pub guide_proj: Linear,
    pub guide_pos: Tensor,
    pub blocks: Vec<DitBlock>,
    pub ln_f: LayerNorm,
    pub unembed: Linear,
    device: Device,
    dtype: DType,
}

impl DenoiserState {
    pub fn new(
        b: &mut Builder,
        cfg: &BackboneConfig,
        d_ctx: usize,
        d_feat: usize,
        k: usize,
    ) -> Result<Self> {
        if !cfg.height.is_multiple_of(cfg.patch) || !cfg.width_px.is_multiple_of(cfg.patch) {
            return Err(Error::Config(format!(
                "patch {} does not tile the image",
                cfg.patch
            )));
        }
        let w = cfg.width;
        let pd = cfg.patch_dim();
        let lora = (cfg.lora_rank > 0).then_some((cfg.lora_rank, cfg.lora_alpha));
        let patch_embed = Linear::new(b, "patch_embed", pd, w, true)?;
        let source_embed = Linear::new(b, "source_embed", pd, w, true)?;
        let pos = b.param("pos", &[cfg.num_patches(), w], Init::Normal(0.02))?;
        let time_fc1 = Linear::new(b, "time_fc1", w, w, true)?;
        let time_fc2 = Linear::new(b, "time_fc2", w, w, true)?;
        let ctx_type = b.param("ctx_type", &[3, w], Init::Normal(0.02))?;
        let text_proj = Linear::new(b, "text_proj", d_ctx, w, true)?;
        let guide_proj = Linear::new(b, "guide_proj", d_feat, w, true)?;
        let guide_pos = b.param("guide_pos", &[k, w], Init::Normal(0.02))?;
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for i in 0..cfg.blocks {
            let mut bb = b.push(&format!("block{i}"));
            blocks.push(DitBlock {
                ln1: LayerNorm::new(&mut bb, "ln1", w)?,
                self_attn: MultiHeadAttention::new(&mut bb, "self_attn", w, w, cfg.heads, lora)?,
                ln2: LayerNorm::new(&mut bb, "ln2", w)?,
                cross_attn: MultiHeadAttention::new(&mut bb, "cross_attn", w, w, cfg.heads, lora)?,
                ln3: LayerNorm::new(&mut bb, "ln3", w)?,
                mlp: Mlp::new(&mut bb, "mlp", w, cfg.mlp_ratio * w, w, lora)?,
            });
        }
        let ln_f = LayerNorm::new(b, "ln_f", w)?;
        let unembed = Linear::new(b, "unembed", w, pd, true)?;
        let device = patch_embed.weight.device().clone();
        let dtype = patch_embed.weight.dtype();
        Ok(DenoiserState {
            cfg: cfg.clone(),
            patch_embed,
            source_embed,
            pos,
            time_fc1,
            time_fc2,
            ctx_type,
            text_proj,
            guide_proj,
            guide_pos,
            blocks,
            ln_f,
            unembed,
            device,
            dtype,
        })
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn time_embedding(&self, t: &[f64]) -> Result<Tensor> {
        let scaled: Vec<f64> = t.iter().map(|x| x * 1000.0).collect();
        let e = sinusoidal(&scaled, self.cfg.width, &self.device, self.dtype)?;
        let h = self.time_fc1.forward(&e)?.silu()?;
        Ok(self.time_fc2.forward(&h)?.unsqueeze(1)?)
    }

    fn type_row(&self, i: usize) -> Result<Tensor> {
        Ok(self.ctx_type.narrow(0, i, 1)?.unsqueeze(0)?)
    }

    /// Cross-attention context and its additive mask.
    fn context(
        &self,
        cond: &ConditionSet,
        src_tokens: &Tensor,
    ) -> Result<(Tensor, Option<Tensor>)> {
        let bsz = src_tokens.dim(0)?;
        let mut parts = vec![src_tokens.broadcast_add(&self.type_row(0)?)?];
        let mut mask_cols: Vec<Vec<f64>> = vec![vec![0.0; src_tokens.dim(1)?]; bsz];
        let mut masked = false;
        if let Some(text) = &cond.text {
            let (tb, lt, _) = text.dims3()?;
            if tb != bsz || cond.text_len.len() != bsz {
                return Err(Error::Shape(
                    "text batch does not match the source batch".into(),
                ));
            }
            parts.push(
                self.text_proj
                    .forward(text)?
                    .broadcast_add(&self.type_row(1)?)?,
            );
            for (row, &len) in mask_cols.iter_mut().zip(&cond.text_len) {
                row.extend((0..lt).map(|j| if j < len { 0.0 } else { MASKED }));
                masked |= len < lt;
            }
        }
        if let Some(g) = &cond.guidance {
            let (gb, k, _) = g.dims3()?;
            if gb != bsz {
                return Err(Error::Shape(
                    "guidance batch does not match the source batch".into(),
                ));
            }
            let tokens = self
                .guide_proj
                .forward(g)?
                .broadcast_add(&self.guide_pos.unsqueeze(0)?)?
                .broadcast_add(&self.type_row(2)?)?;
            parts.push(tokens);
            for row in mask_cols.iter_mut() {
                row.extend(std::iter::repeat_n(0.0, k));
            }
        }
        let ctx = Tensor::cat(&parts, 1)?;
        let mask = if masked {
            let len = mask_cols[0].len();
            let flat: Vec<f64> = mask_cols.into_iter().flatten().collect();
            Some(Tensor::from_vec(flat, (bsz, 1, 1, len), &self.device)?.to_dtype(self.dtype)?)
        } else {
            None
        };
        Ok((ctx, mask))
    }

    /// Velocity prediction for data patches `x_t` (B, P, patch_dim).
    pub fn predict_velocity(&self, x_t: &Tensor, t: &[f64], cond: &ConditionSet) -> Result<Tensor> {
        let (bsz, p, pd) = x_t.dims3()?;
        if p != self.cfg.num_patches() || pd != self.cfg.patch_dim() {
            return Err(Error::Shape(format!(
                "denoiser expects (B, {}, {}), got {:?}",
                self.cfg.num_patches(),
                self.cfg.patch_dim(),
                x_t.dims()
            )));
        }
        if cond.source.dims() != x_t.dims() {
            return Err(Error::Shape(format!(
                "source {:?} does not match x_t {:?}",
                cond.source.dims(),
                x_t.dims()
            )));
        }
        if t.len() != bsz {
            return Err(Error::Shape(format!(
                "{} timesteps for a batch of {bsz}",
                t.len()
            )));
        }
        if let Some(&bad) = t.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Domain(bad));
        }
        let pos = self.pos.unsqueeze(0)?;
        let src = self
            .source_embed
            .forward(&cond.source)?
            .broadcast_add(&pos)?;
        let mut x = (self.patch_embed.forward(x_t)?.broadcast_add(&pos)? + &src)?;
        let (ctx, mask) = self.context(cond, &src)?;
        let temb = self.time_embedding(t)?;
        for blk in &self.blocks {
            x = x.broadcast_add(&temb)?;
            let h = blk.ln1.forward(&x)?;
            x = (&x + blk.self_attn.forward(&h, &h, None)?)?;
            let h = blk.ln2.forward(&x)?;
            x = (&x + blk.cross_attn.forward(&h, &ctx, mask.as_ref())?)?;
            x = (&x + blk.mlp.forward(&blk.ln3.forward(&x)?)?)?;
        }
        self.unembed.forward(&self.ln_f.forward(&x)?)
    }

    /// Every adapted matrix with its adapter folded in.
    pub fn lowrank_effective_weights(&self) -> Result<BTreeMap<String, Tensor>> {
        let mut out = BTreeMap::new();
        for (i, blk) in self.blocks.iter().enumerate() {
            for (name, lin) in blk.linears() {
                out.insert(format!("block{i}.{name}"), lin.effective_weight()?);
            }
        }
        Ok(out)
    }

    /// A copy whose adapted linears carry materialized weights and no
    /// adapter.
    pub fn merged(&self) -> Result<DenoiserState> {
        let mut m = self.clone();
        for blk in &mut m.blocks {
            for lin in blk.linears_mut() {
                *lin = lin.merged()?;
            }
        }
        Ok(m)
    }

    /// A copy with every adapter removed.
    pub fn without_adapters(&self) -> DenoiserState {
        let mut m = self.clone();
        for blk in &mut m.blocks {
            for lin in blk.linears_mut() {
                lin.lora = None;
            }
        }
        m
    }

    pub fn adapters(&self) -> Vec<(String, &crate::nn::LowRank)> {
        let mut out = Vec::new();
        for (i, blk) in self.blocks.iter().enumerate() {
            for (name, lin) in blk.linears() {
                if let Some(l) = &lin.lora {
                    out.push((format!("block{i}.{name}"), l));
                }
            }
        }
        out
    }
}

/// Frames to data patches (B, P, patch_dim) with values `2p - 1`.
pub fn frames_to_data(
    frames: &[&Frame],
    patch: usize,
    device: &Device,
    dtype: DType,
) -> Result<Tensor> {
    let mut data = Vec::new();
    let (mut n, mut dim) = (0, 0);
    for f in frames {
        let (pn, pd, v) = f.patches(patch)?;
        (n, dim) = (pn, pd);
        data.extend(v.into_iter().map(|x| 2.0 * x - 1.0));
    }
    Ok(Tensor::from_vec(data, (frames.len(), n, dim), device)?.to_dtype(dtype)?)
}

/// Inverse of [`frames_to_data`], clamped to [0, 1].
pub fn data_to_frames(x: &Tensor, cfg: &BackboneConfig) -> Result<Vec<Frame>> {
    let bsz = x.dim(0)?;
    let mut out = Vec::with_capacity(bsz);
    for b in 0..bsz {
        let v: Vec<f32> = x.get(b)?.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        let px: Vec<f32> = v
            .into_iter()
            .map(|d| ((d + 1.0) * 0.5).clamp(0.0, 1.0))
            .collect();
        out.push(Frame::from_patches(
            cfg.height,
            cfg.width_px,
            cfg.channels,
            cfg.patch,
            &px,
        )?);
    }
    Ok(out)
}

/// Seeded standard-normal noise shaped like `like`.
pub fn seeded_noise(
    dims: &[usize],
    seed_value: u64,
    device: &Device,
    dtype: DType,
) -> Result<Tensor> {
    let mut rng = seed::rng(seed_value);
    let n: usize = dims.iter().product();
    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Ok(Tensor::from_vec(v, dims, device)?.to_dtype(dtype)?)
}

/// Euler integration of the learned velocity field from t = 1 to t = 0.
/// `cond_at(t)` builds the condition tokens for each step.
pub fn sample_ode<F>(
    state: &DenoiserState,
    batch: usize,
    mut cond_at: F,
    steps: usize,
    seed_value: u64,
) -> Result<Vec<Frame>>
where
    F: FnMut(f64) -> Result<ConditionSet>,
{
    if steps == 0 {
        return Err(Error::InvalidInput(
            "sampling needs at least one step".into(),
        ));
    }
    let dims = [batch, state.cfg.num_patches(), state.cfg.patch_dim()];
    let mut x = seeded_noise(&dims, seed_value, state.device(), state.dtype())?;
    let dt = 1.0 / steps as f64;
    for i in 0..steps {
        let t = 1.0 - i as f64 * dt;
        let cond = cond_at(t)?;
        let v = state.predict_velocity(&x, &vec![t; batch], &cond)?;
        x = (x - (v * dt)?)?;
        let finite = x
            .to_dtype(DType::F64)?
            .flatten_all()?
            .to_vec1::<f64>()?
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Divergence(i));
        }
    }
    data_to_frames(&x, &state.cfg)
}
