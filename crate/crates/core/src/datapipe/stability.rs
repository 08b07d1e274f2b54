//! Camera-stability filter: global translation between consecutive frames
//! estimated by integer-shift normalized cross-correlation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::synthworld::Trajectory;

pub const MAX_SHIFT: i64 = 3;
pub const RELAX_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityResult {
    pub passed: bool,
    pub jitter_score: f64,
    pub effective_threshold: f64,
}

fn ncc(a: &Frame, b: &Frame, dy: i64, dx: i64) -> f64 {
    let (h, w, c) = a.dims();
    let mut pairs = Vec::new();
    for i in 0..h as i64 {
        for j in 0..w as i64 {
            let (bi, bj) = (i + dy, j + dx);
            if bi < 0 || bj < 0 || bi >= h as i64 || bj >= w as i64 {
                continue;
            }
            for ch in 0..c {
                pairs.push((
                    a.get(i as usize, j as usize, ch) as f64,
                    b.get(bi as usize, bj as usize, ch) as f64,
                ));
            }
        }
    }
    let n = pairs.len() as f64;
    let (ma, mb) = pairs.iter().fold((0.0, 0.0), |s, p| (s.0 + p.0, s.1 + p.1));
    let (ma, mb) = (ma / n, mb / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return if saa == sbb { 1.0 } else { 0.0 };
    }
    sab / (saa * sbb).sqrt()
}

/// The integer shift (dy, dx) maximizing correlation of `a` with `b`
/// displaced by it. Ties go to the smaller shift.
pub fn estimate_shift(a: &Frame, b: &Frame) -> Result<(i64, i64)> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(
            "frames in a trajectory must share dimensions".into(),
        ));
    }
    let mut best = (f64::NEG_INFINITY, 0i64, (0i64, 0i64));
    for dy in -MAX_SHIFT..=MAX_SHIFT {
        for dx in -MAX_SHIFT..=MAX_SHIFT {
            let score = ncc(a, b, dy, dx);
            let mag = dy * dy + dx * dx;
            if score > best.0 + 1e-12 || ((score - best.0).abs() <= 1e-12 && mag < best.1) {
                best = (score, mag, (dy, dx));
            }
        }
    }
    Ok(best.2)
}

pub fn jitter_score(frames: &[Frame]) -> Result<f64> {
    if frames.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "stability needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    let mut total = 0.0;
    for w in frames.windows(2) {
        let (dy, dx) = estimate_shift(&w[0], &w[1])?;
        total += ((dy * dy + dx * dx) as f64).sqrt();
    }
    Ok(total / (frames.len() - 1) as f64)
}

pub fn camera_stability_filter(
    traj: &Trajectory,
    threshold: f64,
    relax_types: &BTreeSet<String>,
) -> Result<StabilityResult> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "threshold must be positive, got {threshold}"
        )));
    }
    let score = jitter_score(&traj.frames)?;
    let effective = if relax_types.contains(&traj.spec.transition_type) {
        RELAX_FACTOR * threshold
    } else {
        threshold
    };
    Ok(StabilityResult {
        passed: score <= effective,
        jitter_score: score,
        effective_threshold: effective,
    })
}
