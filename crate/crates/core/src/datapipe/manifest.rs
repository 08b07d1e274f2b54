//! Line-delimited manifest persistence with atomic replacement.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sample::{EditSample, ManifestRecord};
use crate::error::{Error, Result};
use crate::frame::Frame;

pub const IMAGE_DIR: &str = "images";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSummary {
    pub total: usize,
    pub per_domain: BTreeMap<String, usize>,
    pub per_transition: BTreeMap<String, usize>,
    pub null_trigger: usize,
}

/// Counts through the generation funnel. Rates are `None` when their
/// denominator is zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetentionStats {
    pub generated: usize,
    pub passed_stability: usize,
    pub retained: usize,
}

impl RetentionStats {
    pub fn rate_over_generated(&self) -> Option<f64> {
        (self.generated > 0).then(|| self.retained as f64 / self.generated as f64)
    }

    pub fn rate_over_stable(&self) -> Option<f64> {
        (self.passed_stability > 0).then(|| self.retained as f64 / self.passed_stability as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub manifest: ManifestSummary,
    pub retention: RetentionStats,
    pub retention_rate_over_generated: Option<f64>,
    pub retention_rate_over_stable: Option<f64>,
}

impl DatasetSummary {
    pub fn new(manifest: ManifestSummary, retention: RetentionStats) -> Self {
        DatasetSummary {
            manifest,
            retention,
            retention_rate_over_generated: retention.rate_over_generated(),
            retention_rate_over_stable: retention.rate_over_stable(),
        }
    }
}

fn base_dir(out_path: &Path) -> PathBuf {
    match out_path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Writes the sample images under `images/` next to `out_path`, then the
/// manifest itself through a temporary file and an atomic rename.
pub fn build_manifest(
    samples: &[EditSample],
    out_path: impl AsRef<Path>,
) -> Result<ManifestSummary> {
    let out_path = out_path.as_ref();
    let base = base_dir(out_path);
    fs::create_dir_all(&base)?;
    let mut summary = ManifestSummary::default();
    let mut body = String::new();
    for s in samples {
        let rel_dir = format!("{IMAGE_DIR}/{}", s.sample_id);
        fs::create_dir_all(base.join(&rel_dir))?;
        let save = |name: String, f: &Frame| -> Result<String> {
            let rel = format!("{rel_dir}/{name}");
            f.save_png(base.join(&rel))?;
            Ok(rel)
        };
        let source = save("source.png".into(), &s.source)?;
        let target = save("target.png".into(), &s.target)?;
        let keyframes = s
            .keyframes
            .iter()
            .enumerate()
            .map(|(i, f)| save(format!("key_{i}.png"), f))
            .collect::<Result<Vec<_>>>()?;
        let record = ManifestRecord {
            sample_id: s.sample_id.clone(),
            domain: s.spec.domain.clone(),
            subdomain: s.spec.subdomain.clone(),
            transition_type: s.spec.transition_type.clone(),
            seed: s.seed,
            subject: s.subject.clone(),
            spec: s.spec.clone(),
            source,
            target,
            keyframes,
            instruction: s.instruction_text.clone(),
            instruction_tokens: s.instruction.clone(),
            reasoning: s.reasoning.clone(),
            verification: s.verification.clone(),
        };
        body.push_str(&serde_json::to_string(&record)?);
        body.push('\n');
        summary.total += 1;
        *summary.per_domain.entry(s.spec.domain.clone()).or_default() += 1;
        *summary
            .per_transition
            .entry(s.spec.transition_type.clone())
            .or_default() += 1;
        summary.null_trigger += usize::from(s.spec.is_null_trigger());
    }
    write_atomic(out_path, body.as_bytes())?;
    Ok(summary)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = base_dir(path);
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let text = fs::read_to_string(path.as_ref())?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<EditSample>> {
    let path = path.as_ref();
    let base = base_dir(path);
    read_records(path)?
        .into_iter()
        .map(|r| {
            Ok(EditSample {
                source: Frame::load_png(base.join(&r.source))?,
                target: Frame::load_png(base.join(&r.target))?,
                keyframes: r
                    .keyframes
                    .iter()
                    .map(|k| Frame::load_png(base.join(k)))
                    .collect::<Result<Vec<_>>>()?,
                sample_id: r.sample_id,
                spec: r.spec,
                seed: r.seed,
                subject: r.subject,
                instruction_text: r.instruction,
                instruction: r.instruction_tokens,
                reasoning: r.reasoning,
                verification: r.verification,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let s = build_manifest(&[], &path).unwrap();
        assert_eq!(s.total, 0);
        assert_eq!(fs::read_to_string(&path).unwrap(), "");
        let d = DatasetSummary::new(s, RetentionStats::default());
        assert_eq!(d.retention_rate_over_generated, None);
        let json = serde_json::to_value(&d).unwrap();
        assert!(json["retention_rate_over_stable"].is_null());
    }

    #[test]
    fn unwritable_destination_persists_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing").join("deeper");
        fs::write(dir.path().join("missing"), b"a file, not a directory").unwrap();
        assert!(build_manifest(&[], path.join("manifest.jsonl")).is_err());
    }
}
