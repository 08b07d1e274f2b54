//! Small neural-network building blocks over candle tensors, with seeded
//! initialization and named, grouped parameters.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Trainable parameter groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Backbone,
    Adapter,
    Compressor,
    Query,
    Head,
}

/// The loss whose gradient a parameter group follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Diff,
    Tran,
}

impl Group {
    pub const ALL: [Group; 5] = [
        Group::Backbone,
        Group::Adapter,
        Group::Compressor,
        Group::Query,
        Group::Head,
    ];

    pub fn route(self) -> Route {
        match self {
            Group::Backbone | Group::Adapter | Group::Compressor => Route::Diff,
            Group::Query | Group::Head => Route::Tran,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::Backbone => "backbone",
            Group::Adapter => "adapter",
            Group::Compressor => "compressor",
            Group::Query => "query",
            Group::Head => "head",
        }
    }

    pub fn from_name(s: &str) -> Option<Group> {
        Self::ALL.into_iter().find(|g| g.name() == s)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
    /// Normal with standard deviation 1/sqrt(fan_in).
    FanIn(usize),
}

fn init_values(n: usize, init: Init, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = |std: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let dist = Normal::new(0.0, std).expect("valid std");
        (0..n).map(|_| dist.sample(rng)).collect()
    };
    match init {
        Init::Zeros => vec![0.0; n],
        Init::Ones => vec![1.0; n],
        Init::Normal(std) => normal(std, rng),
        Init::FanIn(fan) => normal(1.0 / (fan as f64).sqrt(), rng),
    }
}

pub fn init_tensor(
    shape: &[usize],
    init: Init,
    rng: &mut ChaCha8Rng,
    device: &Device,
    dtype: DType,
) -> Result<Tensor> {
    let n = shape.iter().product();
    let v = init_values(n, init, rng);
    Ok(Tensor::from_vec(v, shape, device)?.to_dtype(dtype)?)
}

/// Named trainable parameters, each tagged with its group.
#[derive(Debug, Clone)]
pub struct ParamStore {
    pub device: Device,
    pub dtype: DType,
    params: BTreeMap<String, (Var, Group)>,
}

impl ParamStore {
    pub fn new(device: Device, dtype: DType) -> Self {
        ParamStore {
            device,
            dtype,
            params: BTreeMap::new(),
        }
    }

    pub fn add(
        &mut self,
        name: &str,
        group: Group,
        shape: &[usize],
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        if self.params.contains_key(name) {
            return Err(Error::InvalidInput(format!("duplicate parameter `{name}`")));
        }
        let t = init_tensor(shape, init, rng, &self.device, self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let handle = var.as_tensor().clone();
        self.params.insert(name.to_string(), (var, group));
        Ok(handle)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.params.get(name).map(|(v, _)| v)
    }

    pub fn group_of(&self, name: &str) -> Option<Group> {
        self.params.get(name).map(|(_, g)| *g)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var, Group)> {
        self.params.iter().map(|(n, (v, g))| (n.as_str(), v, *g))
    }

    pub fn vars(&self, groups: &[Group]) -> Vec<Var> {
        self.iter()
            .filter(|(_, _, g)| groups.contains(g))
            .map(|(_, v, _)| v.clone())
            .collect()
    }

    pub fn num_params(&self, groups: &[Group]) -> usize {
        self.iter()
            .filter(|(_, _, g)| groups.contains(g))
            .map(|(_, v, _)| v.elem_count())
            .sum()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

/// Builds parameters under a name prefix, either trainable (registered in
/// a store) or frozen (plain tensors).
pub struct Builder<'a> {
    store: Option<&'a mut ParamStore>,
    device: Device,
    dtype: DType,
    prefix: String,
    group: Group,
    rng: &'a mut ChaCha8Rng,
}

impl<'a> Builder<'a> {
    pub fn trainable(
        store: &'a mut ParamStore,
        group: Group,
        prefix: &str,
        rng: &'a mut ChaCha8Rng,
    ) -> Self {
        Builder {
            device: store.device.clone(),
            dtype: store.dtype,
            store: Some(store),
            prefix: prefix.to_string(),
            group,
            rng,
        }
    }

    pub fn frozen(device: &Device, dtype: DType, prefix: &str, rng: &'a mut ChaCha8Rng) -> Self {
        Builder {
            store: None,
            device: device.clone(),
            dtype,
            prefix: prefix.to_string(),
            group: Group::Backbone,
            rng,
        }
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        self.param_in(self.group, name, shape, init)
    }

    pub fn param_in(
        &mut self,
        group: Group,
        name: &str,
        shape: &[usize],
        init: Init,
    ) -> Result<Tensor> {
        let full = format!("{}.{name}", self.prefix);
        match self.store.as_deref_mut() {
            Some(store) => store.add(&full, group, shape, init, self.rng),
            None => init_tensor(shape, init, self.rng, &self.device, self.dtype),
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.store.is_some()
    }

    pub fn push(&mut self, name: &str) -> Builder<'_> {
        Builder {
            store: self.store.as_deref_mut(),
            device: self.device.clone(),
            dtype: self.dtype,
            prefix: format!("{}.{name}", self.prefix),
            group: self.group,
            rng: self.rng,
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }
}

/// Low-rank update `scale * B A` of a linear map.
#[derive(Debug, Clone)]
pub struct LowRank {
    pub a: Tensor,
    pub b: Tensor,
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub lora: Option<LowRank>,
}

impl Linear {
    pub fn new(b: &mut Builder, name: &str, d_in: usize, d_out: usize, bias: bool) -> Result<Self> {
        let mut b = b.push(name);
        let weight = b.param("weight", &[d_out, d_in], Init::FanIn(d_in))?;
        let bias = if bias {
            Some(b.param("bias", &[d_out], Init::Zeros)?)
        } else {
            None
        };
        Ok(Linear {
            weight,
            bias,
            lora: None,
        })
    }

    /// A linear map with a rank-`rank` adapter whose B factor starts at zero.
    pub fn with_lora(
        b: &mut Builder,
        name: &str,
        d_in: usize,
        d_out: usize,
        rank: usize,
        alpha: f64,
    ) -> Result<Self> {
        let mut lin = Self::new(b, name, d_in, d_out, true)?;
        if rank > 0 {
            let mut b = b.push(name);
            let a = b.param_in(Group::Adapter, "lora_a", &[rank, d_in], Init::FanIn(d_in))?;
            let bb = b.param_in(Group::Adapter, "lora_b", &[d_out, rank], Init::Zeros)?;
            lin.lora = Some(LowRank {
                a,
                b: bb,
                scale: alpha / rank as f64,
            });
        }
        Ok(lin)
    }

    pub fn d_in(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn d_out(&self) -> usize {
        self.weight.dims()[0]
    }

    /// Applies the map over the last dimension of `x`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let d_in = *dims
            .last()
            .ok_or_else(|| Error::Shape("linear input is a scalar".into()))?;
        if d_in != self.d_in() {
            return Err(Error::Shape(format!(
                "linear expects {} inputs, got {d_in}",
                self.d_in()
            )));
        }
        let rows = x.elem_count() / d_in;
        let flat = x.reshape((rows, d_in))?;
        let mut y = flat.matmul(&self.weight.t()?)?;
        if let Some(l) = &self.lora {
            let low = flat.matmul(&l.a.t()?)?.matmul(&l.b.t()?)?;
            y = (y + (low * l.scale)?)?;
        }
        if let Some(b) = &self.bias {
            y = y.broadcast_add(b)?;
        }
        let mut out = dims;
        *out.last_mut().expect("non-empty") = self.d_out();
        Ok(y.reshape(out)?)
    }

    /// Base weight plus the materialized low-rank update.
    pub fn effective_weight(&self) -> Result<Tensor> {
        match &self.lora {
            Some(l) => Ok((&self.weight + (l.b.matmul(&l.a)? * l.scale)?)?),
            None => Ok(self.weight.clone()),
        }
    }

    /// The same map with the adapter folded into the base weight.
    pub fn merged(&self) -> Result<Linear> {
        Ok(Linear {
            weight: self.effective_weight()?,
            bias: self.bias.clone(),
            lora: None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(b: &mut Builder, name: &str, dim: usize) -> Result<Self> {
        let mut b = b.push(name);
        Ok(LayerNorm {
            gain: b.param("gain", &[dim], Init::Ones)?,
            bias: b.param("bias", &[dim], Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(&self.gain)?
            .broadcast_add(&self.bias)?)
    }
}

/// Additive attention mask value for disallowed keys.
pub const MASKED: f64 = -1e9;

/// Scaled dot-product attention. `q` is (B, H, Lq, dh), `k` and `v` are
/// (B, H, Lk, dh); `mask` broadcasts to (B, H, Lq, Lk) and is added to the
/// logits.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    let dh = q.dim(D::Minus1)?;
    let logits = (q.contiguous()?.matmul(&k.t()?.contiguous()?)? / (dh as f64).sqrt())?;
    let logits = match mask {
        Some(m) => logits.broadcast_add(m)?,
        None => logits,
    };
    let w = candle_nn::ops::softmax(&logits, D::Minus1)?;
    Ok(w.matmul(&v.contiguous()?)?)
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(
        b: &mut Builder,
        name: &str,
        dim: usize,
        kv_dim: usize,
        heads: usize,
        lora: Option<(usize, f64)>,
    ) -> Result<Self> {
        if !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "width {dim} is not divisible by {heads} heads"
            )));
        }
        let mut b = b.push(name);
        let mk = |b: &mut Builder, n: &str, i: usize, o: usize| match lora {
            Some((r, a)) => Linear::with_lora(b, n, i, o, r, a),
            None => Linear::new(b, n, i, o, true),
        };
        Ok(MultiHeadAttention {
            q: mk(&mut b, "q", dim, dim)?,
            k: mk(&mut b, "k", kv_dim, dim)?,
            v: mk(&mut b, "v", kv_dim, dim)?,
            o: mk(&mut b, "o", dim, dim)?,
            heads,
        })
    }

    fn split(&self, x: &Tensor) -> Result<Tensor> {
        let (b, l, d) = x.dims3()?;
        Ok(x.reshape((b, l, self.heads, d / self.heads))?
            .transpose(1, 2)?)
    }

    /// `x` is (B, Lq, D), `ctx` is (B, Lk, Dkv).
    pub fn forward(&self, x: &Tensor, ctx: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let (b, lq, d) = x.dims3()?;
        let q = self.split(&self.q.forward(x)?)?;
        let k = self.split(&self.k.forward(ctx)?)?;
        let v = self.split(&self.v.forward(ctx)?)?;
        let out = attention(&q, &k, &v, mask)?;
        let out = out.transpose(1, 2)?.contiguous()?.reshape((b, lq, d))?;
        self.o.forward(&out)
    }

    pub fn linears(&self) -> [&Linear; 4] {
        [&self.q, &self.k, &self.v, &self.o]
    }

    pub fn linears_mut(&mut self) -> [&mut Linear; 4] {
        [&mut self.q, &mut self.k, &mut self.v, &mut self.o]
    }
}

/// Two-layer perceptron with GELU.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(
        b: &mut Builder,
        name: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
        lora: Option<(usize, f64)>,
    ) -> Result<Self> {
        let mut b = b.push(name);
        let (fc1, fc2) = match lora {
            Some((r, a)) => (
                Linear::with_lora(&mut b, "fc1", d_in, hidden, r, a)?,
                Linear::with_lora(&mut b, "fc2", hidden, d_out, r, a)?,
            ),
            None => (
                Linear::new(&mut b, "fc1", d_in, hidden, true)?,
                Linear::new(&mut b, "fc2", hidden, d_out, true)?,
            ),
        };
        Ok(Mlp { fc1, fc2 })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu()?)
    }
}

/// Sinusoidal embedding of real-valued positions, (n, dim).
pub fn sinusoidal(positions: &[f64], dim: usize, device: &Device, dtype: DType) -> Result<Tensor> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(positions.len() * dim);
    for &p in positions {
        for i in 0..dim {
            let j = i % half.max(1);
            let freq = (-(10_000f64.ln()) * j as f64 / half.max(1) as f64).exp();
            out.push(if i < half {
                (p * freq).sin()
            } else {
                (p * freq).cos()
            });
        }
    }
    Ok(Tensor::from_vec(out, (positions.len(), dim), device)?.to_dtype(dtype)?)
}

/// Additive key-padding mask (B, 1, 1, Lk) from per-row valid lengths.
pub fn padding_mask(valid: &[usize], len: usize, device: &Device, dtype: DType) -> Result<Tensor> {
    let mut m = Vec::with_capacity(valid.len() * len);
    for &v in valid {
        m.extend((0..len).map(|j| if j < v { 0.0 } else { MASKED }));
    }
    Ok(Tensor::from_vec(m, (valid.len(), 1, 1, len), device)?.to_dtype(dtype)?)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn lora_starts_as_identity_and_merges() {
        let mut store = ParamStore::new(Device::Cpu, DType::F64);
        let mut rng = seed::rng(1);
        let mut b = Builder::trainable(&mut store, Group::Backbone, "t", &mut rng);
        let lin = Linear::with_lora(&mut b, "l", 5, 3, 2, 4.0).unwrap();
        let x = init_tensor(
            &[4, 5],
            Init::Normal(1.0),
            &mut seed::rng(2),
            &Device::Cpu,
            DType::F64,
        )
        .unwrap();
        let base = Linear {
            lora: None,
            ..lin.clone()
        };
        let d = (lin.forward(&x).unwrap() - base.forward(&x).unwrap())
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap();
        assert_eq!(d.to_scalar::<f64>().unwrap(), 0.0);
        assert_eq!(store.group_of("t.l.lora_b"), Some(Group::Adapter));
        assert_eq!(store.group_of("t.l.weight"), Some(Group::Backbone));
    }

    #[test]
    fn layer_norm_normalizes() {
        let mut rng = seed::rng(0);
        let mut b = Builder::frozen(&Device::Cpu, DType::F64, "f", &mut rng);
        let ln = LayerNorm::new(&mut b, "ln", 6).unwrap();
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0, 4.0, 5.0, 9.0]], &Device::Cpu).unwrap();
        let y: Vec<f64> = ln
            .forward(&x)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        let mean: f64 = y.iter().sum::<f64>() / 6.0;
        let var: f64 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn masked_keys_get_no_weight() {
        let dev = Device::Cpu;
        let q = Tensor::ones((1, 1, 1, 2), DType::F64, &dev).unwrap();
        let k = Tensor::new(&[[[[1.0f64, 0.0], [0.0, 1.0]]]], &dev).unwrap();
        let v = Tensor::new(&[[[[1.0f64, 0.0], [100.0, 100.0]]]], &dev).unwrap();
        let m = padding_mask(&[1], 2, &dev, DType::F64).unwrap();
        let out: Vec<f64> = attention(&q, &k, &v, Some(&m))
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        assert_eq!(out, vec![1.0, 0.0]);
    }
}
