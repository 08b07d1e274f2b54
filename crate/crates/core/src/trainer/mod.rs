//! Composite loss, disentangled gradient routing and the training loop.
//!
//! `L_diff` (flow matching) updates the backbone, adapters and
//! compressors; `L_tran` (transition features) updates the query bank and
//! projection heads. Each is back-propagated separately and fed only to
//! its route's optimizer.

pub mod checkpoint;
pub mod optim;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::backbone::{frames_to_data, ConditionSet};
use crate::datapipe::EditSample;
use crate::encoders::FeatureKind;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::guidance::{modulate_tensor, ModulationConfig};
use crate::model::ModelState;
use crate::nn::{Group, Route};
use crate::seed;
use crate::thinking::PrefixCache;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, TrainingState,
};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// Backbone pretraining together with compressors, queries and heads.
    A,
    /// Adapters, compressors, queries and heads over a frozen backbone.
    B,
}

impl Stage {
    pub fn trainable(self) -> &'static [Group] {
        match self {
            Stage::A => &[
                Group::Backbone,
                Group::Compressor,
                Group::Query,
                Group::Head,
            ],
            Stage::B => &[Group::Adapter, Group::Compressor, Group::Query, Group::Head],
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Stage::A),
            "B" | "b" => Ok(Stage::B),
            o => Err(Error::Config(format!("unknown stage `{o}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub stage: Stage,
    pub optimizer: OptimizerConfig,
    pub modulation: ModulationConfig,
    pub use_reasoning: bool,
    pub use_queries: bool,
    pub t_min: f64,
    pub t_max: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            batch_size: 8,
            steps: 500,
            seed: 0,
            stage: Stage::A,
            optimizer: OptimizerConfig::default(),
            modulation: ModulationConfig::default(),
            use_reasoning: true,
            use_queries: true,
            t_min: 0.001,
            t_max: 0.999,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(Error::Config(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(0.0 < self.t_min && self.t_min < self.t_max && self.t_max < 1.0) {
            return Err(Error::Config(
                "timestep range must lie inside (0, 1)".into(),
            ));
        }
        self.modulation.validate()
    }
}

/// A sample with every frozen computation done once: data patches,
/// encoder tokens and the context-encoder prefix.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub sample_id: String,
    pub source: Tensor,
    pub target: Tensor,
    pub keyframe_tokens: [Tensor; 2],
    pub source_tokens: [Tensor; 2],
    pub prefix: PrefixCache,
}

/// Precomputes one sample from raw frames and token ids.
pub fn prepare_one(
    state: &ModelState,
    sample_id: &str,
    source: &Frame,
    target: &Frame,
    keyframes: &[Frame],
    instruction: &[u32],
    reasoning: &[u32],
) -> Result<PreparedSample> {
    let patch = state.cfg.backbone.patch;
    let enc = &state.features.encoders;
    let kf: Vec<&Frame> = keyframes.iter().collect();
    let tokens = |kind| -> Result<(Tensor, Tensor)> {
        Ok((enc.encode_many(kind, &kf)?, enc.encode(kind, source)?))
    };
    let (ks, ss) = tokens(FeatureKind::Structure)?;
    let (kt, st) = tokens(FeatureKind::Texture)?;
    let data = |f: &Frame| -> Result<Tensor> {
        Ok(frames_to_data(&[f], patch, state.device(), state.dtype())?.squeeze(0)?)
    };
    Ok(PreparedSample {
        sample_id: sample_id.to_string(),
        source: data(source)?,
        target: data(target)?,
        keyframe_tokens: [ks, kt],
        source_tokens: [ss, st],
        prefix: state.context.encode_prefix(
            enc,
            source,
            instruction,
            reasoning,
            state.queries.len()?,
        )?,
    })
}

/// Precomputes a dataset; reasoning tokens are dropped when
/// `use_reasoning` is off.
pub fn prepare_samples(
    state: &ModelState,
    samples: &[EditSample],
    use_reasoning: bool,
) -> Result<Vec<PreparedSample>> {
    samples
        .iter()
        .map(|s| {
            let reasoning: &[u32] = if use_reasoning {
                &s.reasoning.tokens
            } else {
                &[]
            };
            prepare_one(
                state,
                &s.sample_id,
                &s.source,
                &s.target,
                &s.keyframes,
                &s.instruction,
                reasoning,
            )
        })
        .collect()
}

/// Right-pads per-sample text states into (B, Lmax, d_ctx).
pub fn pad_text(prefixes: &[&PrefixCache]) -> Result<(Option<Tensor>, Vec<usize>)> {
    let lens: Vec<usize> = prefixes
        .iter()
        .map(|p| p.text.dim(0))
        .collect::<candle_core::Result<_>>()?;
    let lmax = lens.iter().copied().max().unwrap_or(0);
    if lmax == 0 {
        return Ok((None, lens));
    }
    let rows = prefixes
        .iter()
        .zip(&lens)
        .map(|(p, &l)| {
            if l == lmax {
                Ok(p.text.clone())
            } else {
                let d = p.text.dim(1)?;
                let z = Tensor::zeros((lmax - l, d), p.text.dtype(), p.text.device())?;
                Ok(Tensor::cat(&[&p.text, &z], 0)?)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Some(Tensor::stack(&rows, 0)?), lens))
}

/// Mean squared error between predicted and target velocity.
pub fn velocity_mse(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "{:?} vs {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    Ok((pred - target)?.sqr()?.mean_all()?)
}

/// `mean_b [ t_b |F_s - F^_s|^2 + (1 - t_b) |F_t - F^_t|^2 ]` with squared
/// norms summed over K x d. Targets are detached.
pub fn transition_loss(
    t: &[f64],
    targets: (&Tensor, &Tensor),
    preds: (&Tensor, &Tensor),
) -> Result<Tensor> {
    if targets.0.dims() != preds.0.dims() || targets.1.dims() != preds.1.dims() {
        return Err(Error::Shape(
            "prediction and target features differ in shape".into(),
        ));
    }
    let (b, _, _) = preds.0.dims3()?;
    if t.len() != b {
        return Err(Error::Shape(format!(
            "{} timesteps for a batch of {b}",
            t.len()
        )));
    }
    if let Some(&bad) = t.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::Domain(bad));
    }
    let dev = preds.0.device();
    let dt = preds.0.dtype();
    let per = |tgt: &Tensor, pred: &Tensor| -> Result<Tensor> {
        Ok((tgt.detach() - pred)?.sqr()?.sum((1, 2))?)
    };
    let ws = Tensor::from_vec(t.to_vec(), b, dev)?.to_dtype(dt)?;
    let wt =
        Tensor::from_vec(t.iter().map(|x| 1.0 - x).collect::<Vec<_>>(), b, dev)?.to_dtype(dt)?;
    let total = ((per(targets.0, preds.0)? * ws)? + (per(targets.1, preds.1)? * wt)?)?;
    Ok(total.mean_all()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub step: usize,
    pub l_diff: f64,
    pub l_tran: f64,
    pub l_total: f64,
}

/// Per-step random draws: one timestep and one noise tensor per sample.
#[derive(Debug, Clone)]
pub struct StepDraws {
    pub indices: Vec<usize>,
    pub t: Vec<f64>,
    pub noise: Tensor,
}

/// Everything one step computes before back-propagation.
pub struct StepGraph {
    pub l_diff: Tensor,
    pub l_tran: Option<Tensor>,
    /// Timestep fed to `modulate` for each sample.
    pub modulate_t: Vec<f64>,
}

/// Builds both losses for one batch.
pub fn forward_losses(
    state: &ModelState,
    batch: &[&PreparedSample],
    t: &[f64],
    noise: &Tensor,
    cfg: &TrainConfig,
) -> Result<StepGraph> {
    let stack = |f: &dyn Fn(&PreparedSample) -> &Tensor| -> Result<Tensor> {
        Ok(Tensor::stack(
            &batch.iter().map(|s| f(s).clone()).collect::<Vec<_>>(),
            0,
        )?)
    };
    let x = stack(&|s| &s.target)?;
    let source = stack(&|s| &s.source)?;
    let b = batch.len();
    let dev = state.device();
    let dt = state.dtype();
    let tt = Tensor::from_vec(t.to_vec(), (b, 1, 1), dev)?.to_dtype(dt)?;
    let x_t = (x.broadcast_mul(&(1.0 - &tt)?)? + noise.broadcast_mul(&tt)?)?;
    let v_star = (noise - &x)?;

    let prefixes: Vec<&PrefixCache> = batch.iter().map(|s| &s.prefix).collect();
    let (text, text_len) = pad_text(&prefixes)?;

    let (guidance, targets) = if cfg.use_queries {
        let f = |i: usize| -> Result<Tensor> {
            let kf = stack(&|s| &s.keyframe_tokens[i])?;
            let src = stack(&|s| &s.source_tokens[i])?;
            let comp = if i == 0 {
                &state.features.structure
            } else {
                &state.features.texture
            };
            comp.delta(&kf, &src)
        };
        let (fs, ft) = (f(0)?, f(1)?);
        let g = modulate_tensor(t, &fs, &ft, &cfg.modulation)?;
        (Some(g), Some((fs, ft)))
    } else {
        (None, None)
    };
    let cond = ConditionSet {
        source,
        text,
        text_len,
        guidance,
    };
    let v = state.denoiser.predict_velocity(&x_t, t, &cond)?;
    let l_diff = velocity_mse(&v, &v_star)?;

    let l_tran = match targets {
        Some((fs, ft)) => {
            let q = state.context.query_forward(&prefixes, &state.queries)?;
            let (ps, pt) = state.project_predictions(&q)?;
            Some(transition_loss(t, (&fs, &ft), (&ps, &pt))?)
        }
        None => None,
    };
    Ok(StepGraph {
        l_diff,
        l_tran,
        modulate_t: t.to_vec(),
    })
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

pub struct Trainer {
    pub state: ModelState,
    pub cfg: TrainConfig,
    pub opt_diff: Optimizer,
    pub opt_tran: Optimizer,
    pub step: usize,
}

fn route_params(state: &ModelState, route: Route, stage: Stage) -> Vec<(String, candle_core::Var)> {
    state
        .store
        .iter()
        .filter(|(_, _, g)| g.route() == route && stage.trainable().contains(g))
        .map(|(n, v, _)| (n.to_string(), v.clone()))
        .collect()
}

impl Trainer {
    pub fn new(state: ModelState, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let opt_diff = Optimizer::new(cfg.optimizer, route_params(&state, Route::Diff, cfg.stage))?;
        let opt_tran = Optimizer::new(cfg.optimizer, route_params(&state, Route::Tran, cfg.stage))?;
        Ok(Trainer {
            state,
            cfg,
            opt_diff,
            opt_tran,
            step: 0,
        })
    }

    /// Switches stage and starts fresh optimizer state.
    pub fn set_stage(&mut self, stage: Stage) -> Result<()> {
        self.cfg.stage = stage;
        self.opt_diff = Optimizer::new(
            self.cfg.optimizer,
            route_params(&self.state, Route::Diff, stage),
        )?;
        self.opt_tran = Optimizer::new(
            self.cfg.optimizer,
            route_params(&self.state, Route::Tran, stage),
        )?;
        Ok(())
    }

    /// The batch indices, timesteps and noise of step `step`; a pure
    /// function of (seed, step).
    pub fn draws(&self, step: usize, data_len: usize) -> Result<StepDraws> {
        let mut rng = seed::rng(seed::derive_str(self.cfg.seed, "step", step as u64));
        let b = self.cfg.batch_size.min(data_len);
        let mut indices: Vec<usize> = (0..data_len).collect();
        for i in 0..b {
            let j = rng.random_range(i..data_len);
            indices.swap(i, j);
        }
        indices.truncate(b);
        let t: Vec<f64> = (0..b)
            .map(|_| rng.random_range(self.cfg.t_min..self.cfg.t_max))
            .collect();
        let c = &self.state.cfg.backbone;
        let n = b * c.num_patches() * c.patch_dim();
        let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let noise = Tensor::from_vec(
            noise,
            (b, c.num_patches(), c.patch_dim()),
            self.state.device(),
        )?
        .to_dtype(self.state.dtype())?;
        Ok(StepDraws { indices, t, noise })
    }

    /// Computes both losses, back-propagates each separately and applies
    /// each route's update. Returns the gradient stores for inspection.
    pub fn total_step_with_grads(
        &mut self,
        data: &[PreparedSample],
    ) -> Result<(StepLosses, GradStore, Option<GradStore>)> {
        if data.is_empty() {
            return Err(Error::InvalidInput("no training samples".into()));
        }
        let draws = self.draws(self.step, data.len())?;
        let batch: Vec<&PreparedSample> = draws.indices.iter().map(|&i| &data[i]).collect();
        let graph = forward_losses(&self.state, &batch, &draws.t, &draws.noise, &self.cfg)?;
        let ids = || {
            batch
                .iter()
                .map(|s| s.sample_id.as_str())
                .collect::<Vec<_>>()
                .join(",")
        };
        let l_diff = scalar(&graph.l_diff)?;
        if !l_diff.is_finite() {
            return Err(Error::NonFiniteLoss {
                which: "diffusion",
                step: self.step,
                sample_id: ids(),
            });
        }
        let l_tran = match &graph.l_tran {
            Some(l) => scalar(l)?,
            None => 0.0,
        };
        if !l_tran.is_finite() {
            return Err(Error::NonFiniteLoss {
                which: "transition",
                step: self.step,
                sample_id: ids(),
            });
        }
        let g_diff = graph.l_diff.backward()?;
        let g_tran = match &graph.l_tran {
            Some(l) => Some((l * self.cfg.alpha)?.backward()?),
            None => None,
        };
        self.opt_diff.step(&g_diff)?;
        if let Some(g) = &g_tran {
            self.opt_tran.step(g)?;
        }
        let losses = StepLosses {
            step: self.step,
            l_diff,
            l_tran,
            l_total: l_diff + self.cfg.alpha * l_tran,
        };
        self.step += 1;
        Ok((losses, g_diff, g_tran))
    }

    pub fn total_step(&mut self, data: &[PreparedSample]) -> Result<StepLosses> {
        Ok(self.total_step_with_grads(data)?.0)
    }

    /// Runs `steps` steps, calling `on_step` after each.
    pub fn run(
        &mut self,
        data: &[PreparedSample],
        steps: usize,
        mut on_step: impl FnMut(&StepLosses),
    ) -> Result<Vec<StepLosses>> {
        let mut trace = Vec::with_capacity(steps);
        for _ in 0..steps {
            let l = self.total_step(data)?;
            on_step(&l);
            trace.push(l);
        }
        Ok(trace)
    }
}

/// Mean of `values[from..to]`.
pub fn window_mean(values: &[f64], from: usize, to: usize) -> f64 {
    let w = &values[from.min(values.len())..to.min(values.len())];
    w.iter().sum::<f64>() / w.len().max(1) as f64
}

/// Runs `steps_a` steps of stage A followed by `steps_b` of stage B.
pub fn train_two_stage(
    trainer: &mut Trainer,
    data: &[PreparedSample],
    steps_a: usize,
    steps_b: usize,
    mut on_step: impl FnMut(&StepLosses),
) -> Result<Vec<StepLosses>> {
    trainer.set_stage(Stage::A)?;
    let mut trace = trainer.run(data, steps_a, &mut on_step)?;
    trainer.set_stage(Stage::B)?;
    trace.extend(trainer.run(data, steps_b, &mut on_step)?);
    Ok(trace)
}
