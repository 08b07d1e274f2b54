//! Principle verification and the retention rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthworld::{check_principle, principles, Trajectory, Verdict};

/// Judges one principle on one trajectory.
pub trait VerifierClient {
    fn judge(&self, traj: &Trajectory, principle_id: &str) -> Result<Verdict>;

    /// The principles to test for a trajectory.
    fn propose(&self, traj: &Trajectory) -> Result<Vec<String>> {
        let kind = traj.spec.kind()?;
        Ok(principles::proposed(kind, traj.spec.is_null_trigger())
            .into_iter()
            .map(String::from)
            .collect())
    }
}

/// Deterministic verifier backed by the synthetic world's frame predicates.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleVerifier;

impl VerifierClient for OracleVerifier {
    fn judge(&self, traj: &Trajectory, principle_id: &str) -> Result<Verdict> {
        check_principle(traj, principle_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub principles: Vec<(String, Verdict)>,
    pub n_align: usize,
    pub n_total: usize,
    pub retained: bool,
    pub negative_evidence: Vec<String>,
}

impl VerificationRecord {
    pub fn from_verdicts(principles: Vec<(String, Verdict)>) -> Self {
        let n_total = principles.len();
        let n_align = principles
            .iter()
            .filter(|(_, v)| *v == Verdict::Align)
            .count();
        let negative_evidence = principles
            .iter()
            .filter(|(_, v)| *v != Verdict::Align)
            .map(|(p, _)| p.clone())
            .collect();
        VerificationRecord {
            principles,
            n_align,
            n_total,
            // S_verify >= 1/2 in exact integer arithmetic.
            retained: n_total > 0 && 2 * n_align >= n_total,
            negative_evidence,
        }
    }

    pub fn s_verify(&self) -> f64 {
        if self.n_total == 0 {
            0.0
        } else {
            self.n_align as f64 / self.n_total as f64
        }
    }

    pub fn aligned(&self) -> impl Iterator<Item = &str> {
        self.principles
            .iter()
            .filter(|(_, v)| *v == Verdict::Align)
            .map(|(p, _)| p.as_str())
    }
}

/// Asks `verifier` about each principle. A verifier error becomes an
/// `Unknown` verdict rather than aborting the record.
pub fn verify_trajectory(
    traj: &Trajectory,
    principle_ids: &[String],
    verifier: &dyn VerifierClient,
) -> Result<VerificationRecord> {
    if principle_ids.is_empty() {
        return Err(Error::InvalidInput(
            "at least one principle is required".into(),
        ));
    }
    let verdicts = principle_ids
        .iter()
        .map(|p| {
            let v = verifier.judge(traj, p).unwrap_or_else(|e| {
                log::warn!("verifier failed on `{p}`: {e}");
                Verdict::Unknown
            });
            (p.clone(), v)
        })
        .collect();
    Ok(VerificationRecord::from_verdicts(verdicts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{generate_trajectory, SpecOptions, TransitionKind, TransitionSpec};

    struct Scripted(Vec<Verdict>);

    impl VerifierClient for Scripted {
        fn judge(&self, _: &Trajectory, p: &str) -> Result<Verdict> {
            let i: usize = p.parse().unwrap();
            match self.0.get(i) {
                Some(v) => Ok(*v),
                None => Err(Error::Verifier("no verdict".into())),
            }
        }
    }

    fn any_traj() -> Trajectory {
        let spec =
            TransitionSpec::sample(TransitionKind::Melting, "ice", SpecOptions::default(), 0)
                .unwrap();
        generate_trajectory(&spec, 0).unwrap()
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    #[test]
    fn documented_cases() {
        use Verdict::*;
        let t = any_traj();
        let r = verify_trajectory(&t, &ids(3), &Scripted(vec![Align, Align, Contradict])).unwrap();
        assert_eq!((r.n_align, r.n_total, r.retained), (2, 3, true));
        let r =
            verify_trajectory(&t, &ids(3), &Scripted(vec![Align, Unknown, Contradict])).unwrap();
        assert_eq!((r.n_align, r.n_total, r.retained), (1, 3, false));
        assert_eq!(r.negative_evidence, vec!["1", "2"]);
        let r = verify_trajectory(&t, &ids(2), &Scripted(vec![Align, Contradict])).unwrap();
        assert_eq!(r.s_verify(), 0.5);
        assert!(r.retained);
    }

    #[test]
    fn failures_become_unknown() {
        let t = any_traj();
        let r = verify_trajectory(&t, &ids(2), &Scripted(vec![Verdict::Align])).unwrap();
        assert_eq!(r.principles[1].1, Verdict::Unknown);
        assert!(verify_trajectory(&t, &[], &OracleVerifier).is_err());
    }

    #[test]
    fn oracle_retains_clean_samples() {
        let t = any_traj();
        let ids = OracleVerifier.propose(&t).unwrap();
        let r = verify_trajectory(&t, &ids, &OracleVerifier).unwrap();
        assert_eq!(r.n_align, 3);
        assert!(r.retained && r.negative_evidence.is_empty());
    }
}
