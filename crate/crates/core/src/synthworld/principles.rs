//! Frame-only physical predicates and the per-transition principle registry.

use serde::{Deserialize, Serialize};

use super::scene::{Trajectory, BORDER, SIZE};
use super::spec::TransitionKind;
use crate::error::{Error, Result};
use crate::frame::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Align,
    Contradict,
    Unknown,
}

impl Verdict {
    pub const ALL: [Verdict; 3] = [Verdict::Align, Verdict::Contradict, Verdict::Unknown];

    fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Align
        } else {
            Verdict::Contradict
        }
    }
}

pub const SCENE_STATIC: &str = "scene_static";

/// Principles the oracle can evaluate for a transition, including
/// distractors it never proposes by default.
pub fn registered(kind: TransitionKind) -> &'static [&'static str] {
    match kind {
        TransitionKind::GravityDrop => &[
            "com_descends",
            "speed_increases",
            "intensity_conserved",
            SCENE_STATIC,
        ],
        TransitionKind::Melting => &[
            "volume_decreases",
            "liquid_spreads",
            "mass_conserved",
            SCENE_STATIC,
        ],
        TransitionKind::LightDimming => &[
            "brightness_decreases",
            "shape_unchanged",
            "steady_fade",
            "refraction_bends_light",
            SCENE_STATIC,
        ],
        TransitionKind::DiffusionMixing => &[
            "dye_spreads",
            "peak_decreases",
            "dye_conserved",
            SCENE_STATIC,
        ],
    }
}

/// The principles proposed for a sample. A null trigger is judged against
/// stillness plus the transition's conservation law.
pub fn proposed(kind: TransitionKind, null_trigger: bool) -> Vec<&'static str> {
    match (kind, null_trigger) {
        (TransitionKind::GravityDrop, false) => {
            vec!["com_descends", "speed_increases", "intensity_conserved"]
        }
        (TransitionKind::GravityDrop, true) => vec![SCENE_STATIC, "intensity_conserved"],
        (TransitionKind::Melting, false) => {
            vec!["volume_decreases", "liquid_spreads", "mass_conserved"]
        }
        (TransitionKind::Melting, true) => vec![SCENE_STATIC, "mass_conserved"],
        (TransitionKind::LightDimming, false) => {
            vec!["brightness_decreases", "shape_unchanged", "steady_fade"]
        }
        (TransitionKind::LightDimming, true) => vec![SCENE_STATIC, "shape_unchanged"],
        (TransitionKind::DiffusionMixing, false) => {
            vec!["dye_spreads", "peak_decreases", "dye_conserved"]
        }
        (TransitionKind::DiffusionMixing, true) => vec![SCENE_STATIC, "dye_conserved"],
    }
}

pub fn check_principle(traj: &Trajectory, principle_id: &str) -> Result<Verdict> {
    let kind = traj.spec.kind()?;
    if !registered(kind).contains(&principle_id) {
        return Err(Error::UnknownPrinciple {
            principle: principle_id.to_string(),
            transition: kind.name().to_string(),
        });
    }
    Ok(evaluate(&traj.frames, principle_id))
}

const MONO_TOL: f64 = 1e-3;
const MIN_CHANGE: f64 = 0.25;
const CONSERVE_TOL: f64 = 1e-3;
const DYE_CONSERVE_TOL: f64 = 1e-2;
const STATIC_TOL: f64 = 1e-4;
const MIN_CONTRAST: f64 = 0.05;
const MIN_MASS: f64 = 1e-3;

/// Evaluates a registered principle on a frame sequence.
pub fn evaluate(frames: &[Frame], principle_id: &str) -> Verdict {
    if frames.len() < 2 {
        return Verdict::Unknown;
    }
    match principle_id {
        "com_descends" => {
            series(frames, centroid_row).map_or(Verdict::Unknown, |s| increases(&s, MIN_CHANGE))
        }
        "speed_increases" => {
            series(frames, centroid_row).map_or(Verdict::Unknown, |s| accelerates(&s))
        }
        "intensity_conserved" => conserved(
            &frames.iter().map(interior_sum).collect::<Vec<_>>(),
            CONSERVE_TOL,
        ),
        "volume_decreases" => series(frames, tallest_column).map_or(Verdict::Unknown, |s| {
            increases(&s.iter().map(|v| -v).collect::<Vec<_>>(), MIN_CHANGE)
        }),
        "liquid_spreads" => {
            series(frames, floor_row).map_or(Verdict::Unknown, |s| increases(&s, MIN_CHANGE))
        }
        "mass_conserved" => {
            series(frames, mass).map_or(Verdict::Unknown, |s| conserved(&s, CONSERVE_TOL))
        }
        "brightness_decreases" => brightness(frames).map_or(Verdict::Unknown, |s| {
            increases(&s.iter().map(|v| -v).collect::<Vec<_>>(), MIN_CHANGE)
        }),
        "shape_unchanged" => shape_unchanged(frames),
        "steady_fade" => brightness(frames).map_or(Verdict::Unknown, |s| steady_fade(&s)),
        "dye_spreads" => {
            series(frames, spread).map_or(Verdict::Unknown, |s| increases(&s, MIN_CHANGE))
        }
        "peak_decreases" => series(frames, peak).map_or(Verdict::Unknown, |s| {
            increases(&s.iter().map(|v| -v).collect::<Vec<_>>(), 1e-3)
        }),
        "dye_conserved" => {
            series(frames, mass).map_or(Verdict::Unknown, |s| conserved(&s, DYE_CONSERVE_TOL))
        }
        SCENE_STATIC => Verdict::from_bool(
            frames
                .windows(2)
                .all(|w| w[0].max_abs_diff(&w[1]).is_ok_and(|d| d <= STATIC_TOL)),
        ),
        _ => Verdict::Unknown,
    }
}

/// Per-pixel object coverage of every frame, measured along the colour
/// direction from the background to the most distinct pixel of frame 0.
struct CoverageMaps {
    maps: Vec<Vec<f64>>,
}

fn background(f: &Frame) -> [f64; 3] {
    let (lo, hi) = (BORDER, SIZE - BORDER - 1);
    let mut bg = [0.0; 3];
    for (c, b) in bg.iter_mut().enumerate() {
        *b = 0.5 * (f.get(lo, lo, c) as f64 + f.get(lo, hi, c) as f64);
    }
    bg
}

fn coverage_maps(frames: &[Frame]) -> Option<CoverageMaps> {
    if frames.iter().any(|f| f.dims() != (SIZE, SIZE, 3)) {
        return None;
    }
    let bg0 = background(&frames[0]);
    let mut best = (0.0, [0.0; 3]);
    for i in BORDER..SIZE - BORDER {
        for j in BORDER..SIZE - BORDER {
            let d: Vec<f64> = (0..3)
                .map(|c| frames[0].get(i, j, c) as f64 - bg0[c])
                .collect();
            let n2 = d.iter().map(|x| x * x).sum::<f64>();
            if n2 > best.0 {
                best = (n2, [d[0], d[1], d[2]]);
            }
        }
    }
    if best.0.sqrt() < MIN_CONTRAST {
        return None;
    }
    let dir = best.1.map(|x| x / best.0);
    let maps = frames
        .iter()
        .map(|f| {
            let bg = background(f);
            let mut m = vec![0.0; SIZE * SIZE];
            for i in BORDER..SIZE - BORDER {
                for j in BORDER..SIZE - BORDER {
                    m[i * SIZE + j] = (0..3)
                        .map(|c| (f.get(i, j, c) as f64 - bg[c]) * dir[c])
                        .sum();
                }
            }
            m
        })
        .collect();
    Some(CoverageMaps { maps })
}

fn series(frames: &[Frame], measure: fn(&[f64]) -> Option<f64>) -> Option<Vec<f64>> {
    coverage_maps(frames)?
        .maps
        .iter()
        .map(|m| measure(m))
        .collect()
}

fn mass(m: &[f64]) -> Option<f64> {
    let s: f64 = m.iter().sum();
    (s > MIN_MASS).then_some(s)
}

fn centroid_row(m: &[f64]) -> Option<f64> {
    let s = mass(m)?;
    let my: f64 = m
        .iter()
        .enumerate()
        .map(|(p, a)| a * ((p / SIZE) as f64 + 0.5))
        .sum();
    Some(my / s)
}

fn tallest_column(m: &[f64]) -> Option<f64> {
    mass(m)?;
    (0..SIZE)
        .map(|j| (0..SIZE).map(|i| m[i * SIZE + j]).sum::<f64>())
        .reduce(f64::max)
}

fn floor_row(m: &[f64]) -> Option<f64> {
    mass(m)?;
    let i = SIZE - BORDER - 1;
    Some(m[i * SIZE..(i + 1) * SIZE].iter().sum())
}

fn spread(m: &[f64]) -> Option<f64> {
    let s = mass(m)?;
    let (mut ci, mut cj) = (0.0, 0.0);
    for (p, a) in m.iter().enumerate() {
        ci += a * (p / SIZE) as f64;
        cj += a * (p % SIZE) as f64;
    }
    let (ci, cj) = (ci / s, cj / s);
    let v: f64 = m
        .iter()
        .enumerate()
        .map(|(p, a)| a * (((p / SIZE) as f64 - ci).powi(2) + ((p % SIZE) as f64 - cj).powi(2)))
        .sum();
    Some(v / s)
}

fn peak(m: &[f64]) -> Option<f64> {
    mass(m)?;
    m.iter().cloned().reduce(f64::max)
}

fn interior_sum(f: &Frame) -> f64 {
    let mut s = 0.0;
    for i in BORDER..SIZE.min(f.height()) - BORDER {
        for j in BORDER..SIZE.min(f.width()) - BORDER {
            s += f.pixel(i, j).iter().map(|&v| v as f64).sum::<f64>();
        }
    }
    s
}

fn brightness(frames: &[Frame]) -> Option<Vec<f64>> {
    let s: Vec<f64> = frames.iter().map(interior_sum).collect();
    s.iter().all(|&v| v > MIN_MASS).then_some(s)
}

/// Align when the series never drops (beyond tolerance) and rises by more
/// than `min_change` overall.
fn increases(s: &[f64], min_change: f64) -> Verdict {
    let mono = s
        .windows(2)
        .all(|w| w[1] >= w[0] - MONO_TOL * w[0].abs().max(1.0));
    Verdict::from_bool(mono && s[s.len() - 1] - s[0] > min_change)
}

fn accelerates(s: &[f64]) -> Verdict {
    if s.len() < 3 {
        return Verdict::Unknown;
    }
    let v: Vec<f64> = s.windows(2).map(|w| w[1] - w[0]).collect();
    let (imax, vmax) =
        v.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |b, (i, &x)| if x > b.1 { (i, x) } else { b },
        );
    let grows = v[..=imax].windows(2).all(|w| w[1] >= w[0] - MONO_TOL);
    Verdict::from_bool(vmax > MONO_TOL && grows && v[..=imax].len() >= 2)
}

fn conserved(s: &[f64], tol: f64) -> Verdict {
    let base = s[0].abs().max(MIN_MASS);
    Verdict::from_bool(s.iter().all(|v| (v - s[0]).abs() <= tol * base))
}

fn shape_unchanged(frames: &[Frame]) -> Verdict {
    let Some(sums) = brightness(frames) else {
        return Verdict::Unknown;
    };
    let norm = |f: &Frame, s: f64| -> Vec<f64> {
        let mut out = Vec::new();
        for i in BORDER..SIZE - BORDER {
            for j in BORDER..SIZE - BORDER {
                out.extend(f.pixel(i, j).iter().map(|&v| v as f64 / s));
            }
        }
        out
    };
    let n = ((SIZE - 2 * BORDER).pow(2) * 3) as f64;
    let first = norm(&frames[0], sums[0] / n);
    Verdict::from_bool(frames.iter().zip(&sums).all(|(f, &s)| {
        norm(f, s / n)
            .iter()
            .zip(&first)
            .all(|(a, b)| (a - b).abs() <= CONSERVE_TOL)
    }))
}

fn steady_fade(s: &[f64]) -> Verdict {
    if s.len() < 3 {
        return Verdict::Unknown;
    }
    let r: Vec<f64> = s.windows(2).map(|w| w[1] / w[0]).collect();
    Verdict::from_bool(
        r[0] < 1.0 - CONSERVE_TOL && r.iter().all(|x| (x - r[0]).abs() <= CONSERVE_TOL),
    )
}

/// Default state key for each transition before anything happens.
pub fn initial_state_key(kind: TransitionKind) -> &'static str {
    match kind {
        TransitionKind::GravityDrop => "high",
        TransitionKind::Melting => "solid",
        TransitionKind::LightDimming => "bright",
        TransitionKind::DiffusionMixing => "drop",
    }
}

/// Classifies a single frame into one of the transition's state clauses.
pub fn measure_state(kind: TransitionKind, frame: &Frame) -> Option<&'static str> {
    let frames = std::slice::from_ref(frame);
    match kind {
        TransitionKind::GravityDrop => {
            let y = series(frames, centroid_row)?[0];
            Some(if y < 14.0 {
                "high"
            } else if y < 22.0 {
                "mid"
            } else {
                "low"
            })
        }
        TransitionKind::Melting => {
            let m = coverage_maps(frames)?.maps.pop()?;
            mass(&m)?;
            let row = |i: usize| m[i * SIZE..(i + 1) * SIZE].iter().sum::<f64>();
            let floor = SIZE - BORDER - 1;
            Some(if row(floor) - row(floor - 2) > 0.5 {
                "melted"
            } else {
                "solid"
            })
        }
        TransitionKind::LightDimming => {
            let n = ((SIZE - 2 * BORDER).pow(2) * 3) as f64;
            let mean = interior_sum(frame) / n;
            Some(if mean > 0.4 {
                "bright"
            } else if mean > 0.15 {
                "dim"
            } else {
                "dark"
            })
        }
        TransitionKind::DiffusionMixing => {
            let v = series(frames, spread)?[0];
            Some(if v < 10.0 { "drop" } else { "spread" })
        }
    }
}
