//! The full generation funnel: prompt, render, stability filter,
//! verification, annotation.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::annotate::{annotate_sample, AnnotatorClient};
use super::manifest::{build_manifest, write_atomic, DatasetSummary, RetentionStats};
use super::prompt::instantiate_prompt;
use super::sample::EditSample;
use super::stability::camera_stability_filter;
use super::taxonomy::Taxonomy;
use super::verify::{verify_trajectory, VerifierClient};
use crate::error::Result;
use crate::seed;
use crate::synthworld::{generate_trajectory, SpecOptions, TransitionKind, TransitionSpec};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub per_type: usize,
    pub seed: u64,
    pub null_fraction: f64,
    pub jitter_fraction: f64,
    pub jitter_px: u32,
    pub stability_threshold: f64,
    pub relax_types: BTreeSet<String>,
    pub types: Vec<TransitionKind>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            per_type: 16,
            seed: 0,
            null_fraction: 0.125,
            jitter_fraction: 0.05,
            jitter_px: 1,
            stability_threshold: 0.5,
            relax_types: ["melting", "diffusion_mixing"]
                .into_iter()
                .map(String::from)
                .collect(),
            types: TransitionKind::ALL.to_vec(),
        }
    }
}

/// Seed of the `index`-th sample of a transition type.
pub fn sample_seed(base: u64, kind: TransitionKind, index: usize) -> u64 {
    seed::derive_str(base, kind.name(), index as u64)
}

pub fn generate_samples(
    taxonomy: &Taxonomy,
    cfg: &GenConfig,
    verifier: &dyn VerifierClient,
    annotator: &dyn AnnotatorClient,
) -> Result<(Vec<EditSample>, RetentionStats)> {
    let mut samples = Vec::new();
    let mut stats = RetentionStats::default();
    for &kind in &cfg.types {
        let node = taxonomy.transition(kind.name())?;
        for i in 0..cfg.per_type {
            let s = sample_seed(cfg.seed, kind, i);
            let mut rng = seed::rng(seed::derive_str(s, "funnel", 0));
            let opts = SpecOptions {
                null_trigger: rng.random_bool(cfg.null_fraction.clamp(0.0, 1.0)),
                jitter: if rng.random_bool(cfg.jitter_fraction.clamp(0.0, 1.0)) {
                    cfg.jitter_px
                } else {
                    0
                },
            };
            let prompt = instantiate_prompt(&node, s)?;
            let spec = TransitionSpec::sample(kind, &prompt.subject, opts, s)?;
            let traj = generate_trajectory(&spec, s)?;
            stats.generated += 1;
            if !camera_stability_filter(&traj, cfg.stability_threshold, &cfg.relax_types)?.passed {
                continue;
            }
            stats.passed_stability += 1;
            let ids = verifier.propose(&traj)?;
            let record = verify_trajectory(&traj, &ids, verifier)?;
            if !record.retained {
                continue;
            }
            stats.retained += 1;
            let id = format!("{}-{i:04}", kind.name());
            samples.push(annotate_sample(&id, &traj, &prompt, &record, annotator)?);
        }
    }
    Ok((samples, stats))
}

/// Generates a dataset into `out_dir`: `manifest.jsonl`, `summary.json`
/// and the referenced images.
pub fn generate_dataset(
    taxonomy: &Taxonomy,
    cfg: &GenConfig,
    verifier: &dyn VerifierClient,
    annotator: &dyn AnnotatorClient,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetSummary> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let (samples, stats) = generate_samples(taxonomy, cfg, verifier, annotator)?;
    let manifest = build_manifest(&samples, out_dir.join(MANIFEST_FILE))?;
    let summary = DatasetSummary::new(manifest, stats);
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    write_atomic(&out_dir.join(SUMMARY_FILE), json.as_bytes())?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::annotate::OracleAnnotator;
    use crate::datapipe::verify::OracleVerifier;

    #[test]
    fn small_run_counts_partition() {
        let cfg = GenConfig {
            per_type: 3,
            jitter_fraction: 0.0,
            ..GenConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let s = generate_dataset(
            Taxonomy::shipped(),
            &cfg,
            &OracleVerifier,
            &OracleAnnotator,
            dir.path(),
        )
        .unwrap();
        assert_eq!(s.manifest.total, 12);
        assert_eq!(s.manifest.per_domain.values().sum::<usize>(), 12);
        assert_eq!(s.retention.generated, 12);
        assert_eq!(s.retention_rate_over_generated, Some(1.0));
    }
}
