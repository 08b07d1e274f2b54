#![allow(dead_code)]

use candle_core::{DType, Device, Tensor};
use phystran_core::datapipe::{
    generate_samples, EditSample, GenConfig, OracleAnnotator, OracleVerifier, Taxonomy,
};
use phystran_core::model::{ModelConfig, ModelState};
use phystran_core::nn::Group;
use phystran_core::seed;
use phystran_core::trainer::{prepare_one, PreparedSample};
use phystran_core::Frame;
use rand::Rng;

pub fn random_frame(dims: (usize, usize, usize), seed_value: u64) -> Frame {
    let mut rng = seed::rng(seed_value);
    let n = dims.0 * dims.1 * dims.2;
    Frame::from_vec(
        dims.0,
        dims.1,
        dims.2,
        (0..n).map(|_| rng.random::<f32>()).collect(),
    )
    .unwrap()
}

pub fn tiny_state(dtype: DType) -> ModelState {
    ModelState::new(&ModelConfig::tiny(), &Device::Cpu, dtype).unwrap()
}

/// Random frames and token ids fed through the tiny model's frozen parts.
pub fn tiny_batch(state: &ModelState, n: usize, seed_value: u64) -> Vec<PreparedSample> {
    let dims = state.cfg.frame_dims();
    (0..n)
        .map(|i| {
            let s = seed_value * 1000 + i as u64 * 10;
            let source = random_frame(dims, s);
            let target = random_frame(dims, s + 1);
            let keyframes: Vec<Frame> = (0..4).map(|j| random_frame(dims, s + 2 + j)).collect();
            let mut rng = seed::rng(s + 9);
            let instruction: Vec<u32> = (0..5).map(|_| rng.random_range(2..400)).collect();
            let reasoning: Vec<u32> = (0..3 + i).map(|_| rng.random_range(2..400)).collect();
            prepare_one(
                state,
                &format!("tiny-{i}"),
                &source,
                &target,
                &keyframes,
                &instruction,
                &reasoning,
            )
            .unwrap()
        })
        .collect()
}

/// Overwrites every adapter factor with N(0, 0.5) values.
pub fn randomize_adapters(state: &ModelState, seed_value: u64) {
    let mut rng = seed::rng(seed_value);
    for (_, var, g) in state.store.iter() {
        if g == Group::Adapter {
            let n = var.elem_count();
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
            let t = Tensor::from_vec(v, var.dims(), var.device())
                .unwrap()
                .to_dtype(var.dtype())
                .unwrap();
            var.set(&t).unwrap();
        }
    }
}

pub fn small_dataset(per_type: usize, seed_value: u64) -> Vec<EditSample> {
    let cfg = GenConfig {
        per_type,
        seed: seed_value,
        ..GenConfig::default()
    };
    generate_samples(Taxonomy::shipped(), &cfg, &OracleVerifier, &OracleAnnotator)
        .unwrap()
        .0
}

pub fn to_vec(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64)
        .unwrap()
        .flatten_all()
        .unwrap()
        .to_vec1::<f64>()
        .unwrap()
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    to_vec(a)
        .iter()
        .zip(to_vec(b))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

use phystran_core::trainer::{forward_losses, TrainConfig};

/// Analytic vs central-difference gradients of `L_diff` for `probes`
/// random coordinates of the diffusion-route parameters. Returns the
/// relative errors.
pub fn flow_gradient_check(probes: usize, seed_value: u64) -> Vec<f64> {
    let state = tiny_state(DType::F64);
    randomize_adapters(&state, seed_value);
    let batch = tiny_batch(&state, 2, seed_value);
    let refs: Vec<&PreparedSample> = batch.iter().collect();
    let c = &state.cfg.backbone;
    let noise = phystran_core::backbone::seeded_noise(
        &[2, c.num_patches(), c.patch_dim()],
        seed_value,
        state.device(),
        DType::F64,
    )
    .unwrap();
    let t = [0.37, 0.81];
    let cfg = TrainConfig::default();
    let loss = || -> f64 {
        let g = forward_losses(&state, &refs, &t, &noise, &cfg).unwrap();
        g.l_diff.to_scalar::<f64>().unwrap()
    };
    let graph = forward_losses(&state, &refs, &t, &noise, &cfg).unwrap();
    let grads = graph.l_diff.backward().unwrap();
    let candidates: Vec<(String, candle_core::Var)> = state
        .store
        .iter()
        .filter(|(_, _, g)| g.route() == phystran_core::nn::Route::Diff)
        .map(|(n, v, _)| (n.to_string(), v.clone()))
        .collect();
    let mut rng = seed::rng(seed_value ^ 0xfd);
    let eps = 1e-5;
    let mut errors = Vec::new();
    while errors.len() < probes {
        let (name, var) = &candidates[rng.random_range(0..candidates.len())];
        let idx = rng.random_range(0..var.elem_count());
        let analytic = grads
            .get(var.as_tensor())
            .map(|g| to_vec(g)[idx])
            .unwrap_or(0.0);
        if analytic.abs() < 1e-6 {
            continue;
        }
        let orig = to_vec(var.as_tensor());
        let eval_at = |delta: f64| {
            let mut v = orig.clone();
            v[idx] += delta;
            var.set(&Tensor::from_vec(v, var.dims(), var.device()).unwrap())
                .unwrap();
            loss()
        };
        let fd = (eval_at(eps) - eval_at(-eps)) / (2.0 * eps);
        var.set(&Tensor::from_vec(orig, var.dims(), var.device()).unwrap())
            .unwrap();
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs());
        if std::env::var("PHYSTRAN_GRADCHECK_VERBOSE").is_ok() {
            eprintln!("{name}[{idx}] analytic {analytic:.6e} fd {fd:.6e} rel {rel:.2e}");
        }
        errors.push(rel);
    }
    errors
}
