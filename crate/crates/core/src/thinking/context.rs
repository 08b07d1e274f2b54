//! Frozen causal context encoder over [image; instruction; reasoning;
//! queries], the shared query bank and the projection heads.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::encoders::FrozenEncoders;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::nn::{
    attention, sinusoidal, Builder, Init, LayerNorm, Linear, Mlp, MultiHeadAttention, MASKED,
};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextConfig {
    pub seed: u64,
    pub d_ctx: usize,
    pub blocks: usize,
    pub heads: usize,
    pub max_len: usize,
    pub vocab_size: usize,
}

impl Default for ContextConfig {
    fn default() -> Self {
        ContextConfig {
            seed: 29,
            d_ctx: 64,
            blocks: 2,
            heads: 4,
            max_len: 128,
            vocab_size: crate::datapipe::vocab::MAX_VOCAB,
        }
    }
}

/// Token-type ids of the four sequence segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Image = 0,
    Instruction = 1,
    Reasoning = 2,
    Query = 3,
}

#[derive(Debug, Clone)]
struct CtxBlock {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    mlp: Mlp,
}

/// Per-layer keys and values of a frozen prefix, plus its text outputs.
#[derive(Debug, Clone)]
pub struct PrefixCache {
    pub len: usize,
    pub keys: Vec<Tensor>,
    pub values: Vec<Tensor>,
    /// Final hidden states at the instruction and reasoning positions.
    pub text: Tensor,
}

#[derive(Debug, Clone)]
pub struct ContextEncoder {
    pub cfg: ContextConfig,
    tok_emb: Tensor,
    type_emb: Tensor,
    img_proj: Linear,
    blocks: Vec<CtxBlock>,
    ln_f: LayerNorm,
    device: Device,
    dtype: DType,
}

fn causal_mask(len: usize, device: &Device, dtype: DType) -> Result<Tensor> {
    let m: Vec<f64> = (0..len)
        .flat_map(|i| (0..len).map(move |j| if j <= i { 0.0 } else { MASKED }))
        .collect();
    Ok(Tensor::from_vec(m, (1, 1, len, len), device)?.to_dtype(dtype)?)
}

impl ContextEncoder {
    /// Every frozen tensor of the encoder, in a fixed order.
    pub fn frozen_tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.tok_emb, &self.type_emb, &self.img_proj.weight];
        for blk in &self.blocks {
            for lin in blk
                .attn
                .linears()
                .into_iter()
                .chain([&blk.mlp.fc1, &blk.mlp.fc2])
            {
                out.push(&lin.weight);
                out.extend(lin.bias.as_ref());
            }
            out.extend([&blk.ln1.gain, &blk.ln1.bias, &blk.ln2.gain, &blk.ln2.bias]);
        }
        out.extend([&self.ln_f.gain, &self.ln_f.bias]);
        out
    }

    pub fn new(cfg: &ContextConfig, d_feat: usize, device: &Device, dtype: DType) -> Result<Self> {
        let mut rng = seed::rng(seed::derive_str(cfg.seed, "context", 0));
        let mut b = Builder::frozen(device, dtype, "context", &mut rng);
        let d = cfg.d_ctx;
        let tok_emb = b.param("tok_emb", &[cfg.vocab_size, d], Init::Normal(1.0))?;
        let type_emb = b.param("type_emb", &[4, d], Init::Normal(1.0))?;
        let img_proj = Linear::new(&mut b, "img_proj", d_feat, d, true)?;
        let mut blocks = Vec::new();
        for i in 0..cfg.blocks {
            let mut bb = b.push(&format!("block{i}"));
            blocks.push(CtxBlock {
                ln1: LayerNorm::new(&mut bb, "ln1", d)?,
                attn: MultiHeadAttention::new(&mut bb, "attn", d, d, cfg.heads, None)?,
                ln2: LayerNorm::new(&mut bb, "ln2", d)?,
                mlp: Mlp::new(&mut bb, "mlp", d, 4 * d, d, None)?,
            });
        }
        let ln_f = LayerNorm::new(&mut b, "ln_f", d)?;
        Ok(ContextEncoder {
            cfg: cfg.clone(),
            tok_emb,
            type_emb,
            img_proj,
            blocks,
            ln_f,
            device: device.clone(),
            dtype,
        })
    }

    fn type_row(&self, seg: Segment) -> Result<Tensor> {
        Ok(self.type_emb.narrow(0, seg as usize, 1)?)
    }

    fn embed_tokens(&self, ids: &[u32], seg: Segment) -> Result<Tensor> {
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.cfg.vocab_size) {
            return Err(Error::InvalidInput(format!(
                "token id {bad} outside the vocabulary"
            )));
        }
        let idx = Tensor::new(ids, &self.device)?;
        Ok(self
            .tok_emb
            .index_select(&idx, 0)?
            .broadcast_add(&self.type_row(seg)?)?)
    }

    /// Prefix embeddings [image; instruction; reasoning] without positions.
    pub fn prefix_embeddings(
        &self,
        encoders: &FrozenEncoders,
        source: &Frame,
        instruction: &[u32],
        reasoning: &[u32],
    ) -> Result<(Tensor, usize)> {
        let img = self
            .img_proj
            .forward(&encoders.encode_structure(source)?)?
            .broadcast_add(&self.type_row(Segment::Image)?)?;
        let n_img = img.dim(0)?;
        let mut parts = vec![img];
        if !instruction.is_empty() {
            parts.push(self.embed_tokens(instruction, Segment::Instruction)?);
        }
        if !reasoning.is_empty() {
            parts.push(self.embed_tokens(reasoning, Segment::Reasoning)?);
        }
        Ok((Tensor::cat(&parts, 0)?, n_img))
    }

    fn positions(&self, start: usize, len: usize) -> Result<Tensor> {
        let p: Vec<f64> = (start..start + len).map(|i| i as f64).collect();
        sinusoidal(&p, self.cfg.d_ctx, &self.device, self.dtype)
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, l, d) = x.dims3()?;
        let h = self.cfg.heads;
        Ok(x.reshape((b, l, h, d / h))?.transpose(1, 2)?)
    }

    fn merge_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, h, l, dh) = x.dims4()?;
        Ok(x.transpose(1, 2)?.contiguous()?.reshape((b, l, h * dh))?)
    }

    /// Causal forward over a whole (1, L, d) sequence. Returns the final
    /// hidden states and the per-layer keys and values.
    fn forward_full(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>, Vec<Tensor>)> {
        let len = x.dim(1)?;
        let mask = causal_mask(len, &self.device, self.dtype)?;
        let mut x = x.clone();
        let (mut keys, mut values) = (Vec::new(), Vec::new());
        for blk in &self.blocks {
            let h = blk.ln1.forward(&x)?;
            let q = self.split_heads(&blk.attn.q.forward(&h)?)?;
            let k = blk.attn.k.forward(&h)?;
            let v = blk.attn.v.forward(&h)?;
            let a = attention(
                &q,
                &self.split_heads(&k)?,
                &self.split_heads(&v)?,
                Some(&mask),
            )?;
            x = (x + blk.attn.o.forward(&self.merge_heads(&a)?)?)?;
            x = (&x + blk.mlp.forward(&blk.ln2.forward(&x)?)?)?;
            keys.push(k.squeeze(0)?);
            values.push(v.squeeze(0)?);
        }
        Ok((self.ln_f.forward(&x)?, keys, values))
    }

    pub fn encode_prefix(
        &self,
        encoders: &FrozenEncoders,
        source: &Frame,
        instruction: &[u32],
        reasoning: &[u32],
        num_queries: usize,
    ) -> Result<PrefixCache> {
        let (emb, n_img) = self.prefix_embeddings(encoders, source, instruction, reasoning)?;
        let len = emb.dim(0)?;
        if len + num_queries > self.cfg.max_len {
            return Err(Error::SequenceTooLong {
                len: len + num_queries,
                max: self.cfg.max_len,
            });
        }
        let x = (emb + self.positions(0, len)?)?.unsqueeze(0)?;
        let (out, keys, values) = self.forward_full(&x)?;
        let text = out.squeeze(0)?.narrow(0, n_img, len - n_img)?;
        Ok(PrefixCache {
            len,
            keys,
            values,
            text,
        })
    }

    /// Query embeddings (B, K, d_ctx) for a batch of cached prefixes.
    pub fn query_forward(&self, prefixes: &[&PrefixCache], bank: &QueryBank) -> Result<Tensor> {
        let bsz = prefixes.len();
        let kq = bank.len()?;
        let d = self.cfg.d_ctx;
        let lmax = prefixes.iter().map(|p| p.len).max().unwrap_or(0);
        if let Some(p) = prefixes.iter().find(|p| p.len + kq > self.cfg.max_len) {
            return Err(Error::SequenceTooLong {
                len: p.len + kq,
                max: self.cfg.max_len,
            });
        }
        let qtype = self.type_row(Segment::Query)?;
        let mut xs = Vec::with_capacity(bsz);
        for p in prefixes {
            xs.push(
                bank.tokens()
                    .broadcast_add(&qtype)?
                    .add(&self.positions(p.len, kq)?)?,
            );
        }
        let mut x = Tensor::stack(&xs, 0)?;

        let mut m = Vec::with_capacity(bsz * kq * (lmax + kq));
        for p in prefixes {
            for i in 0..kq {
                m.extend((0..lmax).map(|j| if j < p.len { 0.0 } else { MASKED }));
                m.extend((0..kq).map(|j| if j <= i { 0.0 } else { MASKED }));
            }
        }
        let mask =
            Tensor::from_vec(m, (bsz, 1, kq, lmax + kq), &self.device)?.to_dtype(self.dtype)?;

        let pad = |t: &Tensor, len: usize| -> Result<Tensor> {
            if len == lmax {
                Ok(t.clone())
            } else {
                Ok(Tensor::cat(
                    &[
                        t,
                        &Tensor::zeros((lmax - len, d), self.dtype, &self.device)?,
                    ],
                    0,
                )?)
            }
        };
        for (layer, blk) in self.blocks.iter().enumerate() {
            let pk = Tensor::stack(
                &prefixes
                    .iter()
                    .map(|p| pad(&p.keys[layer], p.len))
                    .collect::<Result<Vec<_>>>()?,
                0,
            )?;
            let pv = Tensor::stack(
                &prefixes
                    .iter()
                    .map(|p| pad(&p.values[layer], p.len))
                    .collect::<Result<Vec<_>>>()?,
                0,
            )?;
            let h = blk.ln1.forward(&x)?;
            let q = self.split_heads(&blk.attn.q.forward(&h)?)?;
            let k = Tensor::cat(&[&pk, &blk.attn.k.forward(&h)?], 1)?;
            let v = Tensor::cat(&[&pv, &blk.attn.v.forward(&h)?], 1)?;
            let a = attention(
                &q,
                &self.split_heads(&k)?,
                &self.split_heads(&v)?,
                Some(&mask),
            )?;
            x = (x + blk.attn.o.forward(&self.merge_heads(&a)?)?)?;
            x = (&x + blk.mlp.forward(&blk.ln2.forward(&x)?)?)?;
        }
        self.ln_f.forward(&x)
    }

    /// Reference path: one causal pass over the full sequence with the
    /// queries appended, returning the outputs at the query positions.
    pub fn contextualize_full(
        &self,
        encoders: &FrozenEncoders,
        source: &Frame,
        instruction: &[u32],
        reasoning: &[u32],
        bank: &QueryBank,
    ) -> Result<Tensor> {
        let (emb, _) = self.prefix_embeddings(encoders, source, instruction, reasoning)?;
        let len = emb.dim(0)?;
        let kq = bank.len()?;
        if len + kq > self.cfg.max_len {
            return Err(Error::SequenceTooLong {
                len: len + kq,
                max: self.cfg.max_len,
            });
        }
        let q = bank
            .tokens()
            .broadcast_add(&self.type_row(Segment::Query)?)?;
        let x = (Tensor::cat(&[&emb, &q], 0)? + self.positions(0, len + kq)?)?.unsqueeze(0)?;
        let (out, _, _) = self.forward_full(&x)?;
        Ok(out.squeeze(0)?.narrow(0, len, kq)?)
    }
}

/// The K globally shared transition queries.
#[derive(Debug, Clone)]
pub struct QueryBank {
    tokens: Tensor,
}

impl QueryBank {
    pub fn new(b: &mut Builder, k: usize, d_ctx: usize) -> Result<Self> {
        Ok(QueryBank {
            tokens: b.param("tokens", &[k, d_ctx], Init::Normal(1.0))?,
        })
    }

    pub fn tokens(&self) -> &Tensor {
        &self.tokens
    }

    pub fn len(&self) -> Result<usize> {
        Ok(self.tokens.dim(0)?)
    }

    pub fn is_empty(&self) -> Result<bool> {
        Ok(self.len()? == 0)
    }

    /// Identity of the underlying storage, for sharing checks.
    pub fn id(&self) -> candle_core::TensorId {
        self.tokens.id()
    }
}

/// Affine, GELU, affine: K x d_ctx query embeddings to K x d features.
#[derive(Debug, Clone)]
pub struct ProjectionHead {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl ProjectionHead {
    pub fn new(b: &mut Builder, name: &str, d_ctx: usize, hidden: usize, d: usize) -> Result<Self> {
        let mut b = b.push(name);
        Ok(ProjectionHead {
            fc1: Linear::new(&mut b, "fc1", d_ctx, hidden, true)?,
            fc2: Linear::new(&mut b, "fc2", hidden, d, true)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.dims().last() != Some(&self.fc1.d_in()) {
            return Err(Error::Shape(format!(
                "projection head expects width {}, got {:?}",
                self.fc1.d_in(),
                x.dims()
            )));
        }
        self.fc2.forward(&self.fc1.forward(x)?.gelu()?)
    }
}
