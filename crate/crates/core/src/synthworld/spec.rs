use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datapipe::taxonomy::Taxonomy;
use crate::error::{Error, Result};
use crate::phrases::PhraseBank;
use crate::seed;

pub const MIN_DURATION: usize = 8;
pub const DEFAULT_DURATION: usize = 12;

/// The transitions with executable closed-form laws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    GravityDrop,
    Melting,
    LightDimming,
    DiffusionMixing,
}

impl TransitionKind {
    pub const ALL: [TransitionKind; 4] = [
        TransitionKind::GravityDrop,
        TransitionKind::Melting,
        TransitionKind::LightDimming,
        TransitionKind::DiffusionMixing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransitionKind::GravityDrop => "gravity_drop",
            TransitionKind::Melting => "melting",
            TransitionKind::LightDimming => "light_dimming",
            TransitionKind::DiffusionMixing => "diffusion_mixing",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::UnsupportedTransition(name.to_string()))
    }

    /// Parameter that is zeroed (or set to identity) by a null trigger.
    pub fn trigger_param(self) -> (&'static str, f64) {
        match self {
            TransitionKind::GravityDrop => ("gravity", 0.0),
            TransitionKind::Melting => ("melt_rate", 0.0),
            TransitionKind::LightDimming => ("gamma", 1.0),
            TransitionKind::DiffusionMixing => ("diffusivity", 0.0),
        }
    }

    fn required_params(self) -> &'static [&'static str] {
        match self {
            TransitionKind::GravityDrop => &["x", "y0", "radius", "gravity", "floor"],
            TransitionKind::Melting => &["x", "width", "height", "melt_rate", "floor", "puddle"],
            TransitionKind::LightDimming => &["x", "y", "radius", "gamma"],
            TransitionKind::DiffusionMixing => &["x", "y", "sigma0", "diffusivity", "amplitude"],
        }
    }
}

impl fmt::Display for TransitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One physical transition: where it sits in the taxonomy, what triggers
/// it, its scene parameters and its duration in steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSpec {
    pub domain: String,
    pub subdomain: String,
    pub transition_type: String,
    pub trigger_text: String,
    pub params: BTreeMap<String, f64>,
    pub duration: usize,
}

/// Knobs for [`TransitionSpec::sample`].
#[derive(Debug, Clone, Copy, Default)]
pub struct SpecOptions {
    pub null_trigger: bool,
    /// Camera jitter in whole pixels per step; 0 disables it.
    pub jitter: u32,
}

impl TransitionSpec {
    pub fn kind(&self) -> Result<TransitionKind> {
        TransitionKind::from_name(&self.transition_type)
    }

    pub fn param(&self, name: &str) -> Result<f64> {
        self.params
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidSpec(format!("missing param `{name}`")))
    }

    pub fn param_or(&self, name: &str, default: f64) -> f64 {
        self.params.get(name).copied().unwrap_or(default)
    }

    pub fn jitter(&self) -> u32 {
        self.param_or("jitter", 0.0).max(0.0).round() as u32
    }

    pub fn is_null_trigger(&self) -> bool {
        match self.kind() {
            Ok(kind) => {
                let (p, v) = kind.trigger_param();
                self.params.get(p) == Some(&v)
            }
            Err(_) => false,
        }
    }

    /// Structural validation: taxonomy membership and duration. Does not
    /// require the transition to be implemented.
    pub fn validate(&self) -> Result<()> {
        if self.duration < MIN_DURATION {
            return Err(Error::InvalidSpec(format!(
                "duration {} is below the minimum of {MIN_DURATION}",
                self.duration
            )));
        }
        let tax = Taxonomy::shipped();
        if !tax.contains(&self.domain, &self.subdomain, &self.transition_type) {
            return Err(Error::InvalidSpec(format!(
                "({}, {}, {}) is not in the taxonomy",
                self.domain, self.subdomain, self.transition_type
            )));
        }
        if let Some((k, v)) = self.params.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidSpec(format!("param `{k}` is {v}")));
        }
        Ok(())
    }

    /// Validation plus the implemented-transition check and parameter
    /// presence. This is the precondition of every synthworld operation.
    pub fn validate_executable(&self) -> Result<TransitionKind> {
        let kind = self.kind()?;
        self.validate()?;
        for p in kind.required_params() {
            self.param(p)?;
        }
        Ok(kind)
    }

    /// A spec with every scene parameter drawn from `seed`.
    pub fn sample(
        kind: TransitionKind,
        subject: &str,
        opts: SpecOptions,
        seed: u64,
    ) -> Result<Self> {
        let tax = Taxonomy::shipped();
        let (domain, subdomain) = tax
            .locate(kind.name())
            .ok_or_else(|| Error::Taxonomy(format!("{kind} missing from taxonomy")))?;
        let phrases = PhraseBank::shipped().transition(kind.name())?;
        let trigger_text = if opts.null_trigger {
            phrases.null_triggers.first()
        } else {
            phrases.triggers.first()
        }
        .cloned()
        .unwrap_or_else(|| phrases.trigger_event.clone());

        let mut rng = seed::rng(seed::derive_str(seed, "spec", 0));
        let mut p = BTreeMap::new();
        let bg = [
            rng.random_range(0.45..0.8),
            rng.random_range(0.45..0.8),
            rng.random_range(0.45..0.8),
        ];
        let obj = loop {
            let c: [f64; 3] = [rng.random(), rng.random(), rng.random()];
            let d =
                ((c[0] - bg[0]).powi(2) + (c[1] - bg[1]).powi(2) + (c[2] - bg[2]).powi(2)).sqrt();
            if d >= 0.4 {
                break c;
            }
        };
        for (i, ch) in ["r", "g", "b"].iter().enumerate() {
            p.insert(format!("bg_{ch}"), bg[i]);
            p.insert(format!("obj_{ch}"), obj[i]);
        }
        p.insert(
            "texture_seed".into(),
            rng.random_range(0..1u32 << 24) as f64,
        );
        p.insert("jitter".into(), opts.jitter as f64);
        match kind {
            TransitionKind::GravityDrop => {
                p.insert("radius".into(), rng.random_range(2.5..3.5));
                p.insert("x".into(), rng.random_range(9.0..23.0));
                p.insert("y0".into(), rng.random_range(7.0..10.0));
                p.insert("gravity".into(), 0.5);
                p.insert("floor".into(), 29.0);
            }
            TransitionKind::Melting => {
                let width: f64 = rng.random_range(5.0..7.0);
                let height: f64 = rng.random_range(8.0..10.0);
                p.insert("width".into(), width);
                p.insert("height".into(), height);
                p.insert("x".into(), rng.random_range(14.0..18.0));
                p.insert(
                    "melt_rate".into(),
                    0.4 * height / (DEFAULT_DURATION - 1) as f64,
                );
                p.insert("floor".into(), 29.0);
                p.insert("puddle".into(), 2.0);
            }
            TransitionKind::LightDimming => {
                p.insert("radius".into(), rng.random_range(3.0..5.0));
                p.insert("x".into(), rng.random_range(10.0..22.0));
                p.insert("y".into(), rng.random_range(10.0..22.0));
                p.insert("gamma".into(), 0.8);
            }
            TransitionKind::DiffusionMixing => {
                p.insert("x".into(), rng.random_range(14.0..18.0));
                p.insert("y".into(), rng.random_range(14.0..18.0));
                p.insert("sigma0".into(), rng.random_range(1.2..1.6));
                p.insert("diffusivity".into(), 0.35);
                p.insert("amplitude".into(), rng.random_range(0.7..0.9));
            }
        }
        if opts.null_trigger {
            let (name, v) = kind.trigger_param();
            p.insert(name.into(), v);
        }
        let spec = TransitionSpec {
            domain,
            subdomain,
            transition_type: kind.name().to_string(),
            trigger_text: crate::phrases::fill_subject(&trigger_text, subject),
            params: p,
            duration: DEFAULT_DURATION,
        };
        spec.validate_executable()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_specs_are_valid_and_seeded() {
        for kind in TransitionKind::ALL {
            let a = TransitionSpec::sample(kind, "ball", SpecOptions::default(), 3).unwrap();
            let b = TransitionSpec::sample(kind, "ball", SpecOptions::default(), 3).unwrap();
            let c = TransitionSpec::sample(kind, "ball", SpecOptions::default(), 4).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, c);
            assert!(!a.is_null_trigger());
        }
    }

    #[test]
    fn short_duration_is_invalid() {
        let mut s =
            TransitionSpec::sample(TransitionKind::Melting, "ice", SpecOptions::default(), 0)
                .unwrap();
        s.duration = 7;
        assert!(matches!(s.validate(), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn unknown_taxonomy_triple_is_invalid() {
        let mut s =
            TransitionSpec::sample(TransitionKind::Melting, "ice", SpecOptions::default(), 0)
                .unwrap();
        s.subdomain = "temperature".into();
        assert!(matches!(s.validate(), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn null_trigger_flag() {
        let opts = SpecOptions {
            null_trigger: true,
            jitter: 0,
        };
        for kind in TransitionKind::ALL {
            let s = TransitionSpec::sample(kind, "x", opts, 1).unwrap();
            assert!(s.is_null_trigger(), "{kind}");
        }
    }
}
