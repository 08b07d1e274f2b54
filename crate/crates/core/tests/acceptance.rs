mod common;

use std::time::{Duration, Instant};

use candle_core::{DType, Device, Tensor};
use common::*;
use phystran_core::backbone::{seeded_noise, ConditionSet};
use phystran_core::datapipe::{
    generate_dataset, generate_samples, verify_trajectory, GenConfig, OracleAnnotator,
    OracleVerifier, Taxonomy, VerifierClient,
};
use phystran_core::encoders::{FeatureKind, FeatureSeq, FeatureSource};
use phystran_core::guidance::{modulate, ModulationConfig, ModulationMode};
use phystran_core::model::{ModelConfig, ModelState};
use phystran_core::nn::Route;
use phystran_core::pipeline::{
    cell_wins, edit_from_text, run_ablation, AblationConfig, AblationVariant, EditConfig,
};
use phystran_core::seed;
use phystran_core::synthworld::{
    generate_trajectory, SpecOptions, Trajectory, TransitionKind, TransitionSpec, Verdict,
};
use phystran_core::trainer::{
    forward_losses, prepare_samples, train_two_stage, window_mean, PreparedSample, TrainConfig,
    Trainer,
};
use phystran_core::Error;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const ROUTE_BATCHES: usize = 50;
const CONVEXITY_DRAWS: usize = 1000;
const FD_PROBES: usize = 20;
const FD_TOLERANCE: f64 = 1e-3;
const CONVERGENCE_PER_TYPE: usize = 64;
const CONVERGENCE_STEPS_A: usize = 1500;
const CONVERGENCE_STEPS_B: usize = 500;
const CONVERGENCE_DROP: f64 = 0.5;
const DETERMINISM_PREFIX: usize = 50;
const EFFICACY_STEPS_A: usize = 3000;
const EFFICACY_STEPS_B: usize = 1000;
const HELDOUT_PER_TYPE: usize = 8;
const HELDOUT_SEED: u64 = 1_000_003;
const WIN_FRACTION: f64 = 2.0 / 3.0;
const ADAPTER_TOLERANCE: f64 = 1e-6;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn route_exactness() -> Outcome {
    let state = ModelState::new(&ModelConfig::default(), &Device::Cpu, DType::F32).map_err(err)?;
    randomize_adapters(&state, 41);
    let data = tiny_batch(&state, 16, 43);
    let cfg = TrainConfig {
        batch_size: 4,
        ..TrainConfig::default()
    };
    let trainer = Trainer::new(state, cfg.clone()).map_err(err)?;
    let nonzero = |g: Option<&Tensor>| g.is_some_and(|g| to_vec(g).iter().any(|x| *x != 0.0));
    for step in 0..ROUTE_BATCHES {
        let d = trainer.draws(step, data.len()).map_err(err)?;
        let batch: Vec<&PreparedSample> = d.indices.iter().map(|&i| &data[i]).collect();
        let g = forward_losses(&trainer.state, &batch, &d.t, &d.noise, &cfg).map_err(err)?;
        let gd = g.l_diff.backward().map_err(err)?;
        let gt = g
            .l_tran
            .ok_or("no transition loss")?
            .backward()
            .map_err(err)?;
        for (name, var, group) in trainer.state.store.iter() {
            let leak = match group.route() {
                Route::Diff => nonzero(gt.get(var.as_tensor())),
                Route::Tran => nonzero(gd.get(var.as_tensor())),
            };
            check(!leak, format!("batch {step}: gradient crossed into {name}"))?;
        }
    }
    Ok(format!("{ROUTE_BATCHES} batches, no cross-route gradient"))
}

fn feature_pair(rng: &mut impl Rng) -> Result<(FeatureSeq, FeatureSeq), String> {
    let (k, d) = (rng.random_range(1..5), rng.random_range(1..9));
    let mut draw = || {
        (0..k * d)
            .map(|_| rng.random_range(-5.0f32..5.0))
            .collect::<Vec<_>>()
    };
    let s = FeatureSeq::new(
        draw(),
        k,
        d,
        FeatureKind::Structure,
        FeatureSource::PseudoTarget,
    )
    .map_err(err)?;
    let x = FeatureSeq::new(
        draw(),
        k,
        d,
        FeatureKind::Texture,
        FeatureSource::PseudoTarget,
    )
    .map_err(err)?;
    Ok((s, x))
}

fn modulation_identities() -> Outcome {
    let mut rng = seed::rng(2);
    let cfg = ModulationConfig::default();
    let (s, x) = feature_pair(&mut rng)?;
    check(
        modulate(1.0, &s, &x, &cfg).map_err(err)?.tokens == s.tokens,
        "t=1 is not the structure features",
    )?;
    check(
        modulate(0.0, &s, &x, &cfg).map_err(err)?.tokens == x.tokens,
        "t=0 is not the texture features",
    )?;
    for i in 0..CONVEXITY_DRAWS {
        let (s, x) = feature_pair(&mut rng)?;
        let t = rng.random_range(0.0..=1.0);
        let out = modulate(t, &s, &x, &cfg).map_err(err)?;
        for ((o, a), b) in out.tokens.iter().zip(&s.tokens).zip(&x.tokens) {
            check(
                *o >= a.min(*b) && *o <= a.max(*b),
                format!("draw {i}: {o} outside [{a}, {b}] at t={t}"),
            )?;
        }
    }
    let hard = ModulationConfig {
        mode: ModulationMode::HardSwitch,
        ..cfg
    };
    let grid = 100_000;
    let weights: Vec<f64> = (0..=grid)
        .map(|i| hard.structure_weight(i as f64 / grid as f64))
        .collect();
    let jumps = weights.windows(2).filter(|w| w[0] != w[1]).count();
    check(
        jumps == 1,
        format!("hard switch has {jumps} discontinuities"),
    )?;
    Ok(format!(
        "identities exact, {CONVEXITY_DRAWS} convex draws, 1 hard-switch jump"
    ))
}

struct Scripted(Vec<Verdict>);

impl VerifierClient for Scripted {
    fn judge(&self, _: &Trajectory, principle_id: &str) -> phystran_core::Result<Verdict> {
        let i: usize = principle_id[1..]
            .parse()
            .map_err(|_| Error::Verifier(principle_id.into()))?;
        Ok(self.0[i])
    }
}

fn retention_oracle() -> Outcome {
    let spec = TransitionSpec::sample(TransitionKind::Melting, "ice", SpecOptions::default(), 1)
        .map_err(err)?;
    let traj = generate_trajectory(&spec, 1).map_err(err)?;
    let mut cases = 0;
    for len in 1..=4u32 {
        for code in 0..3usize.pow(len) {
            let v: Vec<Verdict> = (0..len)
                .map(|i| Verdict::ALL[code / 3usize.pow(i) % 3])
                .collect();
            let align = v.iter().filter(|x| **x == Verdict::Align).count();
            let expected = align as f64 / v.len() as f64 >= 0.5;
            let ids: Vec<String> = (0..v.len()).map(|i| format!("p{i}")).collect();
            let rec = verify_trajectory(&traj, &ids, &Scripted(v.clone())).map_err(err)?;
            check(
                rec.retained == expected,
                format!("verdicts {v:?}: retained {}", rec.retained),
            )?;
            check(
                rec.n_align == align && rec.n_total == v.len(),
                format!("verdicts {v:?}: wrong counts"),
            )?;
            cases += 1;
        }
    }
    let ids = ["p0".to_string(), "p1".to_string()];
    let boundary = verify_trajectory(
        &traj,
        &ids,
        &Scripted(vec![Verdict::Align, Verdict::Contradict]),
    )
    .map_err(err)?;
    check(
        boundary.s_verify() == 0.5 && boundary.retained,
        "S_verify = 0.5 was not retained",
    )?;
    let len4 = 3usize.pow(4);
    Ok(format!(
        "{cases} verdict vectors ({len4} of length 4) plus the 0.5 boundary"
    ))
}

fn gradient_check() -> Outcome {
    let errs = flow_gradient_check(FD_PROBES, 5);
    check(
        errs.len() == FD_PROBES,
        format!("only {} usable probes", errs.len()),
    )?;
    let worst = errs.iter().copied().fold(0.0, f64::max);
    check(
        worst <= FD_TOLERANCE,
        format!("worst relative error {worst:.2e}"),
    )?;
    Ok(format!(
        "{FD_PROBES} probes, worst relative error {worst:.2e}"
    ))
}

fn toy_convergence() -> Outcome {
    let samples = small_dataset(CONVERGENCE_PER_TYPE, 0);
    let state = ModelState::new(&ModelConfig::default(), &Device::Cpu, DType::F32).map_err(err)?;
    let data = prepare_samples(&state, &samples, true).map_err(err)?;
    let mut trainer = Trainer::new(state, TrainConfig::default()).map_err(err)?;
    let trace = train_two_stage(
        &mut trainer,
        &data,
        CONVERGENCE_STEPS_A,
        CONVERGENCE_STEPS_B,
        |_| {},
    )
    .map_err(err)?;
    let totals: Vec<f64> = trace.iter().map(|l| l.l_total).collect();
    let n = totals.len();
    let start = window_mean(&totals, 0, 10);
    let end = window_mean(&totals, n - 100, n);
    let drop = 1.0 - end / start;
    check(
        drop >= CONVERGENCE_DROP,
        format!("L_total {start:.3} -> {end:.3}, drop {:.0}%", drop * 100.0),
    )?;
    let fresh = ModelState::new(&ModelConfig::default(), &Device::Cpu, DType::F32).map_err(err)?;
    let mut again = Trainer::new(fresh, TrainConfig::default()).map_err(err)?;
    let replay = again.run(&data, DETERMINISM_PREFIX, |_| {}).map_err(err)?;
    check(
        replay[..] == trace[..DETERMINISM_PREFIX],
        "replay diverged from the first run",
    )?;
    Ok(format!(
        "{} samples, {n} steps, L_total {start:.3} -> {end:.3} ({:.0}% drop), replay identical",
        data.len(),
        drop * 100.0
    ))
}

fn heldout() -> Vec<phystran_core::datapipe::EditSample> {
    let cfg = GenConfig {
        per_type: HELDOUT_PER_TYPE,
        seed: HELDOUT_SEED,
        null_fraction: 0.0,
        jitter_fraction: 0.0,
        ..GenConfig::default()
    };
    generate_samples(Taxonomy::shipped(), &cfg, &OracleVerifier, &OracleAnnotator)
        .unwrap()
        .0
}

fn guidance_efficacy() -> Outcome {
    let train = small_dataset(CONVERGENCE_PER_TYPE, 0);
    let held = heldout();
    let cfg = AblationConfig {
        steps_a: EFFICACY_STEPS_A,
        steps_b: EFFICACY_STEPS_B,
        ..AblationConfig::default()
    };
    let report = run_ablation(
        &train,
        &held,
        &[AblationVariant::Full, AblationVariant::SftOnly],
        &cfg,
    )
    .map_err(err)?;
    let full = report
        .row(AblationVariant::Full)
        .ok_or("full variant failed")?;
    let sft = report
        .row(AblationVariant::SftOnly)
        .ok_or("sft_only variant failed")?;
    let (wins, total) = cell_wins(full, sft);
    let summary = format!(
        "full wins {wins}/{total} cells, mean MSE {:.5} vs {:.5}",
        full.mean_oracle_mse, sft.mean_oracle_mse
    );
    check(
        total == 32 && wins as f64 >= WIN_FRACTION * total as f64,
        summary.clone(),
    )?;
    Ok(summary)
}

fn harness_completeness() -> Outcome {
    let train = small_dataset(4, 0);
    let held: Vec<_> = heldout().into_iter().step_by(4).collect();
    let cfg = AblationConfig {
        steps_a: 10,
        steps_b: 5,
        edit: EditConfig {
            sample_steps: 4,
            ..EditConfig::default()
        },
        ..AblationConfig::default()
    };
    let report = run_ablation(&train, &held, &AblationVariant::ALL, &cfg).map_err(err)?;
    check(
        report.rows.len() == 7,
        format!("{} rows", report.rows.len()),
    )?;
    for r in &report.rows {
        let m = r
            .metrics
            .as_ref()
            .ok_or(format!("{} failed: {:?}", r.variant, r.error))?;
        check(
            m.scalars().iter().all(|(_, v)| v.is_finite()),
            format!("{} has a non-finite metric", r.variant),
        )?;
    }
    let lines = report.to_jsonl().map_err(err)?.lines().count();
    Ok(format!("7 rows, {lines} metric records"))
}

fn pipeline_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let cfg = GenConfig::default();
    let mut manifests = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        generate_dataset(
            Taxonomy::shipped(),
            &cfg,
            &OracleVerifier,
            &OracleAnnotator,
            &out,
        )
        .map_err(err)?;
        manifests.push(std::fs::read(out.join("manifest.jsonl")).map_err(err)?);
    }
    check(manifests[0] == manifests[1], "manifests differ")?;
    let state = ModelState::new(&ModelConfig::default(), &Device::Cpu, DType::F32).map_err(err)?;
    let spec = TransitionSpec::sample(
        TransitionKind::GravityDrop,
        "ball",
        SpecOptions::default(),
        3,
    )
    .map_err(err)?;
    let src = generate_trajectory(&spec, 3).map_err(err)?.first().clone();
    let ec = EditConfig::default();
    let a = edit_from_text(&state, &src, "drop it", &ec).map_err(err)?.0;
    let b = edit_from_text(&state, &src, "drop it", &ec).map_err(err)?.0;
    check(a == b, "edits differ")?;
    Ok(format!(
        "manifests byte-identical ({} bytes), edits identical",
        manifests[0].len()
    ))
}

fn zero_delta_and_adapters() -> Outcome {
    let state = ModelState::new(&ModelConfig::default(), &Device::Cpu, DType::F32).map_err(err)?;
    for kind in TransitionKind::ALL {
        let spec = TransitionSpec::sample(kind, "thing", SpecOptions::default(), 9).map_err(err)?;
        let src = generate_trajectory(&spec, 9).map_err(err)?.first().clone();
        for fk in [FeatureKind::Structure, FeatureKind::Texture] {
            let d = state
                .features
                .transition_delta(&vec![src.clone(); 4], &src, fk)
                .map_err(err)?;
            check(d.is_zero(), format!("{kind:?} {fk:?} delta is not zero"))?;
        }
    }
    let batch = tiny_batch(&state, 2, 8);
    let source = Tensor::stack(
        &batch.iter().map(|s| s.source.clone()).collect::<Vec<_>>(),
        0,
    )
    .map_err(err)?;
    let c = &state.cfg.backbone;
    let x = seeded_noise(
        &[2, c.num_patches(), c.patch_dim()],
        3,
        &Device::Cpu,
        DType::F32,
    )
    .map_err(err)?;
    let (k, d) = (state.cfg.encoder.k, state.cfg.encoder.d);
    let cond = ConditionSet {
        source,
        text: None,
        text_len: vec![0, 0],
        guidance: Some(seeded_noise(&[2, k, d], 4, &Device::Cpu, DType::F32).map_err(err)?),
    };
    let with = state
        .denoiser
        .predict_velocity(&x, &[0.3, 0.8], &cond)
        .map_err(err)?;
    let without = state
        .denoiser
        .without_adapters()
        .predict_velocity(&x, &[0.3, 0.8], &cond)
        .map_err(err)?;
    let diff = max_abs_diff(&with, &without);
    check(
        diff <= ADAPTER_TOLERANCE,
        format!("adapter changed outputs by {diff:.2e}"),
    )?;
    Ok(format!("zero deltas exact, adapter difference {diff:.1e}"))
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("PHYSTRAN_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [Criterion; 9] = [
        ("gradient-route exactness", route_exactness),
        ("modulation identities", modulation_identities),
        ("retention-rule oracle equivalence", retention_oracle),
        ("flow-matching gradient check", gradient_check),
        ("toy convergence", toy_convergence),
        ("guidance efficacy", guidance_efficacy),
        ("ablation harness completeness", harness_completeness),
        ("pipeline determinism", pipeline_determinism),
        ("zero-delta and adapter identity", zero_delta_and_adapters),
    ];
    let mut passed = 0;
    let mut run = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        run += 1;
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = Duration::as_secs_f64(&t0.elapsed());
        match outcome {
            Ok(msg) => {
                passed += 1;
                println!("criterion {id} PASS {name}: {msg} [{secs:.1}s]");
            }
            Err(msg) => println!("criterion {id} FAIL {name}: {msg} [{secs:.1}s]"),
        }
    }
    println!("acceptance: {passed}/{run} criteria passed");
}
