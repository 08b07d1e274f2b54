//! Frozen structure/texture encoders, learnable feature compressors and
//! transition deltas.

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::nn::{attention, Builder, Init, Linear};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Structure,
    Texture,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 2] = [FeatureKind::Structure, FeatureKind::Texture];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Structure => "structure",
            FeatureKind::Texture => "texture",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    PseudoTarget,
    Prediction,
}

/// A fixed-length K x d feature sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSeq {
    pub tokens: Vec<f32>,
    pub k: usize,
    pub d: usize,
    pub kind: FeatureKind,
    pub source: FeatureSource,
}

impl FeatureSeq {
    pub fn new(
        tokens: Vec<f32>,
        k: usize,
        d: usize,
        kind: FeatureKind,
        source: FeatureSource,
    ) -> Result<Self> {
        if tokens.len() != k * d {
            return Err(Error::Shape(format!(
                "{} values for a {k}x{d} feature sequence",
                tokens.len()
            )));
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "feature sequence has non-finite values".into(),
            ));
        }
        Ok(FeatureSeq {
            tokens,
            k,
            d,
            kind,
            source,
        })
    }

    pub fn from_tensor(t: &Tensor, kind: FeatureKind, source: FeatureSource) -> Result<Self> {
        let (k, d) = t.dims2()?;
        let tokens = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        Self::new(tokens, k, d, kind, source)
    }

    pub fn to_tensor(&self, device: &Device, dtype: DType) -> Result<Tensor> {
        Ok(Tensor::from_vec(self.tokens.clone(), (self.k, self.d), device)?.to_dtype(dtype)?)
    }

    pub fn sq_norm(&self) -> f64 {
        self.tokens.iter().map(|&v| (v as f64).powi(2)).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.tokens.iter().all(|&v| v == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub seed: u64,
    pub structure_patch: usize,
    pub texture_patch: usize,
    pub d: usize,
    pub k: usize,
    pub freeze: bool,
    pub frame_index_embedding: bool,
    pub max_frames: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            seed: 17,
            structure_patch: 8,
            texture_patch: 4,
            d: 32,
            k: 8,
            freeze: true,
            frame_index_embedding: true,
            max_frames: 8,
        }
    }
}

/// Mean colour of each `patch` x `patch` block, (P, C).
pub fn pooled_patches(frame: &Frame, patch: usize) -> Result<(usize, usize, Vec<f32>)> {
    let (n, dim, raw) = frame.patches(patch)?;
    let c = frame.channels();
    let px = (dim / c) as f32;
    let mut out = vec![0.0f32; n * c];
    for (p, block) in raw.chunks(dim).enumerate() {
        for (i, v) in block.iter().enumerate() {
            out[p * c + i % c] += v / px;
        }
    }
    Ok((n, c, out))
}

/// Pooled patches standardized to zero mean and unit deviation over the
/// whole frame, so a global photometric scale leaves them unchanged.
pub fn standardized_pooled_patches(
    frame: &Frame,
    patch: usize,
) -> Result<(usize, usize, Vec<f32>)> {
    let (n, c, v) = pooled_patches(frame, patch)?;
    let len = v.len() as f64;
    let mean = v.iter().map(|x| *x as f64).sum::<f64>() / len;
    let var = v.iter().map(|x| (*x as f64 - mean).powi(2)).sum::<f64>() / len;
    let scale = 1.0 / (var.sqrt() + 1e-6);
    Ok((
        n,
        c,
        v.iter()
            .map(|x| ((*x as f64 - mean) * scale) as f32)
            .collect(),
    ))
}

/// The two frozen encoder surrogates: a pooled, photometrically
/// standardized (coarse) structure encoder and a raw-patch (fine) texture
/// encoder.
#[derive(Debug, Clone)]
pub struct FrozenEncoders {
    pub cfg: EncoderConfig,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub structure: Linear,
    pub texture: Linear,
    device: Device,
    dtype: DType,
}

impl FrozenEncoders {
    pub fn new(
        cfg: &EncoderConfig,
        dims: (usize, usize, usize),
        device: &Device,
        dtype: DType,
    ) -> Result<Self> {
        let (h, w, c) = dims;
        for p in [cfg.structure_patch, cfg.texture_patch] {
            if p == 0 || h % p != 0 || w % p != 0 {
                return Err(Error::Config(format!("patch {p} does not tile {h}x{w}")));
            }
        }
        let mut rng = seed::rng(seed::derive_str(cfg.seed, "encoders", 0));
        let mut b = Builder::frozen(device, dtype, "encoders", &mut rng);
        let t_in = cfg.texture_patch * cfg.texture_patch * c;
        let mut structure = Linear::new(&mut b, "structure", c, cfg.d, true)?;
        let mut texture = Linear::new(&mut b, "texture", t_in, cfg.d, true)?;
        structure.bias = Some(crate::nn::init_tensor(
            &[cfg.d],
            Init::Normal(0.1),
            b.rng(),
            device,
            dtype,
        )?);
        texture.bias = Some(crate::nn::init_tensor(
            &[cfg.d],
            Init::Normal(0.1),
            b.rng(),
            device,
            dtype,
        )?);
        Ok(FrozenEncoders {
            cfg: cfg.clone(),
            height: h,
            width: w,
            channels: c,
            structure,
            texture,
            device: device.clone(),
            dtype,
        })
    }

    pub fn num_tokens(&self, kind: FeatureKind) -> usize {
        let p = match kind {
            FeatureKind::Structure => self.cfg.structure_patch,
            FeatureKind::Texture => self.cfg.texture_patch,
        };
        (self.height / p) * (self.width / p)
    }

    fn check(&self, frame: &Frame) -> Result<()> {
        if frame.dims() != (self.height, self.width, self.channels) {
            return Err(Error::Shape(format!(
                "encoder expects {}x{}x{}, got {:?}",
                self.height,
                self.width,
                self.channels,
                frame.dims()
            )));
        }
        Ok(())
    }

    fn inputs(&self, kind: FeatureKind, frames: &[&Frame]) -> Result<Tensor> {
        let mut data = Vec::new();
        let (mut n, mut dim) = (0, 0);
        for f in frames {
            self.check(f)?;
            let (pn, pd, v) = match kind {
                FeatureKind::Structure => standardized_pooled_patches(f, self.cfg.structure_patch)?,
                FeatureKind::Texture => f.patches(self.cfg.texture_patch)?,
            };
            (n, dim) = (pn, pd);
            data.extend(v);
        }
        Ok(Tensor::from_vec(data, (frames.len(), n, dim), &self.device)?.to_dtype(self.dtype)?)
    }

    /// Patch tokens of several frames, (F, P, d).
    pub fn encode_many(&self, kind: FeatureKind, frames: &[&Frame]) -> Result<Tensor> {
        if frames.is_empty() {
            return Err(Error::InvalidInput("no frames to encode".into()));
        }
        let x = self.inputs(kind, frames)?;
        match kind {
            FeatureKind::Structure => self.structure.forward(&x),
            FeatureKind::Texture => self.texture.forward(&x),
        }
    }

    pub fn encode(&self, kind: FeatureKind, frame: &Frame) -> Result<Tensor> {
        self.encode_many(kind, &[frame])?
            .squeeze(0)
            .map_err(Into::into)
    }

    pub fn encode_structure(&self, frame: &Frame) -> Result<Tensor> {
        self.encode(FeatureKind::Structure, frame)
    }

    pub fn encode_texture(&self, frame: &Frame) -> Result<Tensor> {
        self.encode(FeatureKind::Texture, frame)
    }
}

/// Cross-attention pooling of many frames' patch tokens into K latents.
#[derive(Debug, Clone)]
pub struct Compressor {
    pub kind: FeatureKind,
    pub latents: Tensor,
    pub patch_pos: Tensor,
    pub frame_pos: Option<Tensor>,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

impl Compressor {
    pub fn new(
        b: &mut Builder,
        kind: FeatureKind,
        cfg: &EncoderConfig,
        num_patches: usize,
    ) -> Result<Self> {
        let mut b = b.push(kind.name());
        let d = cfg.d;
        Ok(Compressor {
            kind,
            latents: b.param("latents", &[cfg.k, d], Init::Normal(1.0))?,
            patch_pos: b.param("patch_pos", &[num_patches, d], Init::Normal(0.1))?,
            frame_pos: if cfg.frame_index_embedding {
                Some(b.param("frame_pos", &[cfg.max_frames, d], Init::Normal(0.1))?)
            } else {
                None
            },
            q: Linear::new(&mut b, "q", d, d, false)?,
            k: Linear::new(&mut b, "k", d, d, false)?,
            v: Linear::new(&mut b, "v", d, d, false)?,
            o: Linear::new(&mut b, "o", d, d, true)?,
        })
    }

    /// `tokens` is (B, N, P, d) for N frames each; returns (B, K, d).
    pub fn forward(&self, tokens: &Tensor) -> Result<Tensor> {
        let (bsz, n, p, d) = tokens.dims4()?;
        if n == 0 {
            return Err(Error::InvalidInput(
                "compressor needs at least one frame".into(),
            ));
        }
        let mut x = tokens.broadcast_add(&self.patch_pos.reshape((1, 1, p, d))?)?;
        if let Some(fp) = &self.frame_pos {
            let max = fp.dim(0)?;
            if n > max {
                return Err(Error::InvalidInput(format!(
                    "{n} frames exceed the frame-index table of {max}"
                )));
            }
            x = x.broadcast_add(&fp.narrow(0, 0, n)?.reshape((1, n, 1, d))?)?;
        }
        let x = x.reshape((bsz, n * p, d))?;
        let kq = self.latents.dim(0)?;
        let q = self
            .q
            .forward(&self.latents)?
            .reshape((1, 1, kq, d))?
            .broadcast_as((bsz, 1, kq, d))?;
        let k = self.k.forward(&x)?.unsqueeze(1)?;
        let v = self.v.forward(&x)?.unsqueeze(1)?;
        let out = attention(&q, &k, &v, None)?.squeeze(1)?;
        self.o.forward(&out)
    }

    /// Pseudo-target deltas: compress(keyframes) minus compress(the source
    /// repeated once per keyframe with the same frame indices).
    /// `keyframes` is (B, N, P, d); `source` is (B, P, d).
    pub fn delta(&self, keyframes: &Tensor, source: &Tensor) -> Result<Tensor> {
        let n = keyframes.dim(1)?;
        let (b, p, d) = source.dims3()?;
        let rep = source
            .unsqueeze(1)?
            .broadcast_as((b, n, p, d))?
            .contiguous()?;
        Ok((self.forward(keyframes)? - self.forward(&rep)?)?)
    }
}

/// Compressors for both kinds with the frozen encoders they read from.
#[derive(Debug, Clone)]
pub struct FeatureExtractors {
    pub encoders: FrozenEncoders,
    pub structure: Compressor,
    pub texture: Compressor,
}

impl FeatureExtractors {
    pub fn compressor(&self, kind: FeatureKind) -> &Compressor {
        match kind {
            FeatureKind::Structure => &self.structure,
            FeatureKind::Texture => &self.texture,
        }
    }

    pub fn compress_features(
        &self,
        per_frame_tokens: &[Tensor],
        kind: FeatureKind,
    ) -> Result<FeatureSeq> {
        if per_frame_tokens.is_empty() {
            return Err(Error::InvalidInput("no frames to compress".into()));
        }
        let d0 = per_frame_tokens[0].dim(D::Minus1)?;
        if per_frame_tokens
            .iter()
            .any(|t| t.dim(D::Minus1).ok() != Some(d0))
        {
            return Err(Error::Shape("frames have different token widths".into()));
        }
        let stacked = Tensor::stack(per_frame_tokens, 0)?.unsqueeze(0)?;
        let out = self.compressor(kind).forward(&stacked)?.squeeze(0)?;
        FeatureSeq::from_tensor(&out, kind, FeatureSource::PseudoTarget)
    }

    pub fn transition_delta(
        &self,
        keyframes: &[Frame],
        source: &Frame,
        kind: FeatureKind,
    ) -> Result<FeatureSeq> {
        if keyframes.is_empty() {
            return Err(Error::InvalidInput("no keyframes".into()));
        }
        let refs: Vec<&Frame> = keyframes.iter().collect();
        let kf = self.encoders.encode_many(kind, &refs)?.unsqueeze(0)?;
        let src = self.encoders.encode_many(kind, &[source])?;
        let out = self.compressor(kind).delta(&kf, &src)?.squeeze(0)?;
        FeatureSeq::from_tensor(&out, kind, FeatureSource::PseudoTarget)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_averages_each_block() {
        let mut f = Frame::zeros(4, 4, 1);
        f.data_mut()[0] = 4.0;
        let (n, c, v) = pooled_patches(&f, 2).unwrap();
        assert_eq!((n, c), (4, 1));
        assert_eq!(v, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn standardized_pooling_ignores_global_scale() {
        let data: Vec<f32> = (0..48).map(|i| (i % 7) as f32 / 7.0).collect();
        let f = Frame::from_vec(4, 4, 3, data.clone()).unwrap();
        let dim = Frame::from_vec(4, 4, 3, data.iter().map(|x| x * 0.25).collect()).unwrap();
        let (_, _, a) = standardized_pooled_patches(&f, 2).unwrap();
        let (_, _, b) = standardized_pooled_patches(&dim, 2).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-4);
        }
        let mean: f32 = a.iter().sum::<f32>() / a.len() as f32;
        assert!(mean.abs() < 1e-5);
    }
}
