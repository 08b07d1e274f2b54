//! Closed-form transition laws and the anti-aliased renderer.
//!
//! Scene coordinates: pixel (i, j) covers [i, i+1) x [j, j+1). The stage is
//! the interior square [BORDER, SIZE-BORDER); everything outside it is a
//! static high-frequency texture so that camera motion is measurable.

use rand::Rng;

use super::spec::{TransitionKind, TransitionSpec};
use crate::error::Result;
use crate::frame::{Frame, DEFAULT_CHANNELS, DEFAULT_SIZE};
use crate::seed;

pub const SIZE: usize = DEFAULT_SIZE;
pub const BORDER: usize = 3;
const DISC_SUBSAMPLES: usize = 32;
const MAX_CAMERA_OFFSET: i64 = 2;

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub spec: TransitionSpec,
    pub frames: Vec<Frame>,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn first(&self) -> &Frame {
        &self.frames[0]
    }

    pub fn last(&self) -> &Frame {
        &self.frames[self.frames.len() - 1]
    }
}

/// Vertical center of a body released at `y0` under constant acceleration
/// `g` (px/step²), resting once it reaches `rest`.
pub fn gravity_center(y0: f64, g: f64, step: usize, rest: f64) -> f64 {
    let k = step as f64;
    (y0 + 0.5 * g * k * k).min(rest.max(y0))
}

/// Height of the solid part and width of each puddle wing after `step`.
pub fn melt_state(height: f64, width: f64, rate: f64, puddle: f64, step: usize) -> (f64, f64) {
    let h = (height - rate * step as f64).max(0.0);
    let wing = (height - h) * width / (2.0 * puddle);
    (h, wing)
}

pub fn diffusion_sigma(sigma0: f64, diffusivity: f64, step: usize) -> f64 {
    (sigma0 * sigma0 + 2.0 * diffusivity * step as f64).sqrt()
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

type Coverage = Vec<f64>;

fn rect_coverage(cov: &mut Coverage, x0: f64, x1: f64, y0: f64, y1: f64) {
    if x1 <= x0 || y1 <= y0 {
        return;
    }
    let (i0, i1) = (y0.floor().max(0.0) as usize, (y1.ceil() as usize).min(SIZE));
    let (j0, j1) = (x0.floor().max(0.0) as usize, (x1.ceil() as usize).min(SIZE));
    for i in i0..i1 {
        let oy = overlap(y0, y1, i as f64, i as f64 + 1.0);
        for j in j0..j1 {
            cov[i * SIZE + j] += oy * overlap(x0, x1, j as f64, j as f64 + 1.0);
        }
    }
}

fn disc_coverage(cov: &mut Coverage, cx: f64, cy: f64, r: f64) {
    let (i0, i1) = (
        ((cy - r).floor().max(0.0)) as usize,
        ((cy + r).ceil() as usize).min(SIZE),
    );
    let (j0, j1) = (
        ((cx - r).floor().max(0.0)) as usize,
        ((cx + r).ceil() as usize).min(SIZE),
    );
    for i in i0..i1 {
        for s in 0..DISC_SUBSAMPLES {
            let y = i as f64 + (s as f64 + 0.5) / DISC_SUBSAMPLES as f64;
            let dy = y - cy;
            if dy.abs() >= r {
                continue;
            }
            let w = (r * r - dy * dy).sqrt();
            for j in j0..j1 {
                cov[i * SIZE + j] +=
                    overlap(cx - w, cx + w, j as f64, j as f64 + 1.0) / DISC_SUBSAMPLES as f64;
            }
        }
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gaussian_mass_1d(center: f64, sigma: f64) -> [f64; SIZE] {
    let mut out = [0.0; SIZE];
    for (j, o) in out.iter_mut().enumerate() {
        *o =
            normal_cdf((j as f64 + 1.0 - center) / sigma) - normal_cdf((j as f64 - center) / sigma);
    }
    out
}

/// Object coverage at `step` in scene coordinates (no camera motion).
fn coverage(spec: &TransitionSpec, kind: TransitionKind, step: usize) -> Result<Coverage> {
    let mut cov = vec![0.0; SIZE * SIZE];
    match kind {
        TransitionKind::GravityDrop => {
            let r = spec.param("radius")?;
            let rest = spec.param("floor")? - r;
            let y = gravity_center(spec.param("y0")?, spec.param("gravity")?, step, rest);
            disc_coverage(&mut cov, spec.param("x")?, y, r);
        }
        TransitionKind::Melting => {
            let (x, w, floor, puddle) = (
                spec.param("x")?,
                spec.param("width")?,
                spec.param("floor")?,
                spec.param("puddle")?,
            );
            let (h, wing) = melt_state(
                spec.param("height")?,
                w,
                spec.param("melt_rate")?,
                puddle,
                step,
            );
            let (left, right) = (x - w / 2.0, x + w / 2.0);
            rect_coverage(&mut cov, left, right, floor - h, floor);
            rect_coverage(&mut cov, left - wing, left, floor - puddle, floor);
            rect_coverage(&mut cov, right, right + wing, floor - puddle, floor);
        }
        TransitionKind::LightDimming => {
            disc_coverage(
                &mut cov,
                spec.param("x")?,
                spec.param("y")?,
                spec.param("radius")?,
            );
        }
        TransitionKind::DiffusionMixing => {
            let (x, y, s0) = (spec.param("x")?, spec.param("y")?, spec.param("sigma0")?);
            let s = diffusion_sigma(s0, spec.param("diffusivity")?, step);
            let peak0 = {
                let gx = gaussian_mass_1d(x, s0);
                let gy = gaussian_mass_1d(y, s0);
                gx.iter().cloned().fold(0.0, f64::max) * gy.iter().cloned().fold(0.0, f64::max)
            };
            let scale = spec.param("amplitude")? / peak0;
            let gx = gaussian_mass_1d(x, s);
            let gy = gaussian_mass_1d(y, s);
            let lo = BORDER;
            let hi = SIZE - BORDER;
            for i in lo..hi {
                for j in lo..hi {
                    cov[i * SIZE + j] = scale * gy[i] * gx[j];
                }
            }
        }
    }
    Ok(cov)
}

fn in_stage(i: i64, j: i64) -> bool {
    let (lo, hi) = (BORDER as i64, (SIZE - BORDER) as i64);
    (lo..hi).contains(&i) && (lo..hi).contains(&j)
}

fn render(
    spec: &TransitionSpec,
    cov: &Coverage,
    offset: (i64, i64),
    brightness: f64,
) -> Result<Frame> {
    let bg = [
        spec.param("bg_r")?,
        spec.param("bg_g")?,
        spec.param("bg_b")?,
    ];
    let obj = [
        spec.param("obj_r")?,
        spec.param("obj_g")?,
        spec.param("obj_b")?,
    ];
    let tex_seed = spec.param_or("texture_seed", 0.0) as u64;
    let mut frame = Frame::zeros(SIZE, SIZE, DEFAULT_CHANNELS);
    for i in 0..SIZE {
        for j in 0..SIZE {
            let (si, sj) = (i as i64 + offset.0, j as i64 + offset.1);
            for c in 0..DEFAULT_CHANNELS {
                let v = if in_stage(si, sj) {
                    let a = cov[si as usize * SIZE + sj as usize];
                    bg[c] + a * (obj[c] - bg[c])
                } else {
                    seed::unit_hash(tex_seed, si, sj, c as u64) as f64
                };
                frame.set(i, j, c, (v * brightness) as f32);
            }
        }
    }
    Ok(frame)
}

fn camera_offsets(len: usize, jitter: u32, seed_value: u64) -> Vec<(i64, i64)> {
    let mut offsets = vec![(0i64, 0i64); len];
    if jitter == 0 {
        return offsets;
    }
    let mut rng = seed::rng(seed::derive_str(seed_value, "camera", 0));
    let step = jitter as i64;
    for k in 1..len {
        let (mut dy, mut dx) = offsets[k - 1];
        let sign = if rng.random_bool(0.5) { 1 } else { -1 };
        let axis = rng.random_bool(0.5);
        let target = if axis { &mut dy } else { &mut dx };
        let mut next = *target + sign * step;
        if next.abs() > MAX_CAMERA_OFFSET.max(step) {
            next = *target - sign * step;
        }
        *target = next;
        offsets[k] = (dy, dx);
    }
    offsets
}

/// Renders the transition described by `spec`. Only camera jitter depends
/// on `seed`; without jitter every seed yields the same frames.
pub fn generate_trajectory(spec: &TransitionSpec, seed_value: u64) -> Result<Trajectory> {
    let kind = spec.validate_executable()?;
    let len = spec.duration;
    let offsets = camera_offsets(len, spec.jitter(), seed_value);
    let gamma = if kind == TransitionKind::LightDimming {
        spec.param("gamma")?
    } else {
        1.0
    };
    let mut frames = Vec::with_capacity(len);
    let mut brightness = 1.0f64;
    let static_cov = if kind == TransitionKind::LightDimming {
        Some(coverage(spec, kind, 0)?)
    } else {
        None
    };
    for (k, offset) in offsets.iter().enumerate() {
        let frame = match &static_cov {
            Some(cov) => render(spec, cov, *offset, brightness)?,
            None => render(spec, &coverage(spec, kind, k)?, *offset, 1.0)?,
        };
        frames.push(frame);
        // Dimming is rolled out step by step; the oracle uses the power law.
        brightness *= gamma;
    }
    Ok(Trajectory {
        spec: spec.clone(),
        frames,
        seed: seed_value,
    })
}

/// The analytic final state S_{T-1} with a still camera.
pub fn oracle_final_frame(spec: &TransitionSpec) -> Result<Frame> {
    let kind = spec.validate_executable()?;
    let last = spec.duration - 1;
    match kind {
        TransitionKind::LightDimming => {
            let b = spec.param("gamma")?.powi(last as i32);
            render(spec, &coverage(spec, kind, 0)?, (0, 0), b)
        }
        _ => render(spec, &coverage(spec, kind, last)?, (0, 0), 1.0),
    }
}
