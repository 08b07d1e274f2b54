//! Timestep-aware mixing of structure and texture guidance.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::encoders::{FeatureKind, FeatureSeq, FeatureSource};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModulationMode {
    Smooth,
    HardSwitch,
    /// Always the structure features.
    StructureOnly,
    /// Always the texture features.
    TextureOnly,
}

impl std::str::FromStr for ModulationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth" => Ok(ModulationMode::Smooth),
            "hard" | "hard_switch" => Ok(ModulationMode::HardSwitch),
            "structure_only" => Ok(ModulationMode::StructureOnly),
            "texture_only" => Ok(ModulationMode::TextureOnly),
            other => Err(Error::Config(format!("unknown modulation mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModulationConfig {
    pub mode: ModulationMode,
    pub switch_point: f64,
    pub source: FeatureSource,
}

impl Default for ModulationConfig {
    fn default() -> Self {
        ModulationConfig {
            mode: ModulationMode::Smooth,
            switch_point: 0.7,
            source: FeatureSource::PseudoTarget,
        }
    }
}

impl ModulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode == ModulationMode::HardSwitch
            && !(self.switch_point > 0.0 && self.switch_point < 1.0)
        {
            return Err(Error::Config(format!(
                "switch point {} is outside (0, 1)",
                self.switch_point
            )));
        }
        Ok(())
    }

    pub fn with_source(mut self, source: FeatureSource) -> Self {
        self.source = source;
        self
    }

    /// Weight on the structure features at time `t`.
    pub fn structure_weight(&self, t: f64) -> f64 {
        match self.mode {
            ModulationMode::Smooth => t,
            ModulationMode::HardSwitch => {
                if t >= self.switch_point {
                    1.0
                } else {
                    0.0
                }
            }
            ModulationMode::StructureOnly => 1.0,
            ModulationMode::TextureOnly => 0.0,
        }
    }
}

fn check_t(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Domain(t))
    }
}

/// `t * f_struct + (1 - t) * f_tex` (smooth) or a hard selection, tagged
/// with `cfg.source`.
pub fn modulate(
    t: f64,
    f_struct: &FeatureSeq,
    f_tex: &FeatureSeq,
    cfg: &ModulationConfig,
) -> Result<FeatureSeq> {
    check_t(t)?;
    if (f_struct.k, f_struct.d) != (f_tex.k, f_tex.d) {
        return Err(Error::Shape(format!(
            "structure features are {}x{}, texture features {}x{}",
            f_struct.k, f_struct.d, f_tex.k, f_tex.d
        )));
    }
    if f_struct.kind != FeatureKind::Structure || f_tex.kind != FeatureKind::Texture {
        return Err(Error::InvalidInput(
            "modulate takes (structure, texture) features".into(),
        ));
    }
    let w = cfg.structure_weight(t);
    let tokens = if w == 1.0 {
        f_struct.tokens.clone()
    } else if w == 0.0 {
        f_tex.tokens.clone()
    } else {
        f_struct
            .tokens
            .iter()
            .zip(&f_tex.tokens)
            .map(|(&a, &b)| {
                let (a, b) = (a as f64, b as f64);
                let v = (w * a + (1.0 - w) * b) as f32;
                v.clamp(a.min(b) as f32, a.max(b) as f32)
            })
            .collect()
    };
    Ok(FeatureSeq {
        tokens,
        k: f_struct.k,
        d: f_struct.d,
        kind: FeatureKind::Structure,
        source: cfg.source,
    })
}

/// Batched form for training and sampling: `t` holds one timestep per row,
/// features are (B, K, d).
pub fn modulate_tensor(
    t: &[f64],
    f_struct: &Tensor,
    f_tex: &Tensor,
    cfg: &ModulationConfig,
) -> Result<Tensor> {
    t.iter().try_for_each(|&x| check_t(x))?;
    if f_struct.dims() != f_tex.dims() {
        return Err(Error::Shape(format!(
            "{:?} vs {:?}",
            f_struct.dims(),
            f_tex.dims()
        )));
    }
    let b = f_struct.dim(0)?;
    if t.len() != b {
        return Err(Error::Shape(format!(
            "{} timesteps for a batch of {b}",
            t.len()
        )));
    }
    let w: Vec<f64> = t.iter().map(|&x| cfg.structure_weight(x)).collect();
    let dev = f_struct.device();
    let dt = f_struct.dtype();
    let ws = Tensor::from_vec(w.clone(), (b, 1, 1), dev)?.to_dtype(dt)?;
    let wt = Tensor::from_vec(
        w.iter().map(|x| 1.0 - x).collect::<Vec<_>>(),
        (b, 1, 1),
        dev,
    )?
    .to_dtype(dt)?;
    Ok((f_struct.broadcast_mul(&ws)? + f_tex.broadcast_mul(&wt)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seqs(a: Vec<f32>, b: Vec<f32>) -> (FeatureSeq, FeatureSeq) {
        let n = a.len();
        (
            FeatureSeq::new(a, 1, n, FeatureKind::Structure, FeatureSource::Prediction).unwrap(),
            FeatureSeq::new(b, 1, n, FeatureKind::Texture, FeatureSource::Prediction).unwrap(),
        )
    }

    #[test]
    fn documented_values() {
        let cfg = ModulationConfig::default();
        let (s, t) = seqs(vec![2.0; 4], vec![0.0; 4]);
        assert_eq!(modulate(1.0, &s, &t, &cfg).unwrap().tokens, s.tokens);
        assert_eq!(modulate(0.0, &s, &t, &cfg).unwrap().tokens, t.tokens);
        assert_eq!(modulate(0.5, &s, &t, &cfg).unwrap().tokens, vec![1.0; 4]);
        let hard = ModulationConfig {
            mode: ModulationMode::HardSwitch,
            ..cfg
        };
        assert_eq!(modulate(0.7, &s, &t, &hard).unwrap().tokens, s.tokens);
        assert_eq!(modulate(0.699, &s, &t, &hard).unwrap().tokens, t.tokens);
        assert!(matches!(modulate(1.5, &s, &t, &cfg), Err(Error::Domain(_))));
        let (_, short) = seqs(vec![0.0; 3], vec![0.0; 3]);
        assert!(matches!(
            modulate(0.5, &s, &short, &cfg),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn tensor_form_matches() {
        let dev = candle_core::Device::Cpu;
        let a = Tensor::new(&[[[2.0f32, 4.0]], [[1.0, 1.0]]], &dev).unwrap();
        let b = Tensor::new(&[[[0.0f32, 0.0]], [[3.0, 5.0]]], &dev).unwrap();
        let out: Vec<f32> = modulate_tensor(&[0.5, 0.25], &a, &b, &ModulationConfig::default())
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        assert_eq!(out, vec![1.0, 2.0, 2.5, 4.0]);
    }

    proptest! {
        #[test]
        fn smooth_is_convex(t in 0.0f64..=1.0, a in proptest::collection::vec(-10.0f32..10.0, 6), b in proptest::collection::vec(-10.0f32..10.0, 6)) {
            let (s, x) = seqs(a.clone(), b.clone());
            let out = modulate(t, &s, &x, &ModulationConfig::default()).unwrap();
            for ((o, p), q) in out.tokens.iter().zip(&a).zip(&b) {
                prop_assert!(*o >= p.min(*q) && *o <= p.max(*q));
            }
        }
    }
}
