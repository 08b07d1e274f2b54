//! Single-file checkpoints: a safetensors archive whose header metadata
//! carries the format version, the config echo, the route-partition table
//! and the training position.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::{Optimizer, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelState};
use crate::nn::Group;

pub const CHECKPOINT_VERSION: u32 = 1;
const PARAM_PREFIX: &str = "param.";
const DIFF_PREFIX: &str = "opt.diff";
const TRAN_PREFIX: &str = "opt.tran";

/// Training position stored next to the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub cfg: TrainConfig,
    pub step: usize,
    pub diff_steps: usize,
    pub tran_steps: usize,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub state: ModelState,
    pub routes: BTreeMap<String, Group>,
    pub training: Option<TrainingState>,
    tensors: HashMap<String, Tensor>,
}

impl Checkpoint {
    /// Rebuilds a trainer that continues exactly where the saved one stopped.
    pub fn into_trainer(self) -> Result<Trainer> {
        let training = self
            .training
            .ok_or_else(|| Error::Checkpoint("checkpoint holds no training state".into()))?;
        let mut trainer = Trainer::new(self.state, training.cfg)?;
        trainer
            .opt_diff
            .load_state(DIFF_PREFIX, &self.tensors, training.diff_steps)?;
        trainer
            .opt_tran
            .load_state(TRAN_PREFIX, &self.tensors, training.tran_steps)?;
        trainer.step = training.step;
        Ok(trainer)
    }
}

fn dtype_name(dt: DType) -> &'static str {
    match dt {
        DType::F64 => "f64",
        _ => "f32",
    }
}

fn write_archive(
    path: &Path,
    state: &ModelState,
    training: Option<(&TrainingState, &Optimizer, &Optimizer)>,
) -> Result<()> {
    let mut tensors: Vec<(String, Tensor)> = state
        .store
        .iter()
        .map(|(n, v, _)| (format!("{PARAM_PREFIX}{n}"), v.as_tensor().clone()))
        .collect();
    let mut meta = HashMap::new();
    meta.insert("format_version".to_string(), CHECKPOINT_VERSION.to_string());
    meta.insert(
        "model_config".to_string(),
        serde_json::to_string(&state.cfg)?,
    );
    meta.insert("dtype".to_string(), dtype_name(state.dtype()).to_string());
    let routes: BTreeMap<String, &str> = state
        .route_table()
        .into_iter()
        .map(|(n, g)| (n, g.name()))
        .collect();
    meta.insert("routes".to_string(), serde_json::to_string(&routes)?);
    if let Some((ts, od, ot)) = training {
        meta.insert("training".to_string(), serde_json::to_string(ts)?);
        tensors.extend(od.state_tensors(DIFF_PREFIX));
        tensors.extend(ot.state_tensors(TRAN_PREFIX));
    }
    let bytes = safetensors::serialize(tensors.iter().map(|(n, t)| (n.as_str(), t)), Some(meta))
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Saves parameters only.
pub fn save_checkpoint(state: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    write_archive(path.as_ref(), state, None)
}

impl Trainer {
    /// Saves parameters, optimizer buffers and the step counter.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let ts = TrainingState {
            cfg: self.cfg.clone(),
            step: self.step,
            diff_steps: self.opt_diff.steps(),
            tran_steps: self.opt_tran.steps(),
        };
        write_archive(
            path.as_ref(),
            &self.state,
            Some((&ts, &self.opt_diff, &self.opt_tran)),
        )
    }
}

/// Loads a checkpoint, rebuilding the frozen parts from the stored config.
pub fn load_checkpoint(path: impl AsRef<Path>, device: &Device) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes =
        std::fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let (_, header) = safetensors::SafeTensors::read_metadata(&bytes)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let meta = header
        .metadata()
        .clone()
        .ok_or_else(|| Error::Checkpoint("archive has no metadata".into()))?;
    let get = |k: &str| {
        meta.get(k)
            .ok_or_else(|| Error::Checkpoint(format!("metadata lacks `{k}`")))
    };
    let version = get("format_version")?;
    if version.parse::<u32>().ok() != Some(CHECKPOINT_VERSION) {
        return Err(Error::CheckpointVersion {
            found: version.clone(),
            expected: CHECKPOINT_VERSION,
        });
    }
    let cfg: ModelConfig = serde_json::from_str(get("model_config")?)?;
    let dtype = if get("dtype")? == "f64" {
        DType::F64
    } else {
        DType::F32
    };
    let routes_raw: BTreeMap<String, String> = serde_json::from_str(get("routes")?)?;
    let routes = routes_raw
        .into_iter()
        .map(|(n, g)| {
            Group::from_name(&g)
                .map(|g| (n, g))
                .ok_or_else(|| Error::Checkpoint(format!("unknown route group `{g}`")))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    let training: Option<TrainingState> = match meta.get("training") {
        Some(s) => Some(serde_json::from_str(s)?),
        None => None,
    };
    let tensors = candle_core::safetensors::load_buffer(&bytes, device)?;
    let state = ModelState::new(&cfg, device, dtype)?;
    if state.route_table() != routes {
        return Err(Error::ConfigMismatch(
            "route table differs from the stored config".into(),
        ));
    }
    for (name, var, _) in state.store.iter() {
        let t = tensors
            .get(&format!("{PARAM_PREFIX}{name}"))
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
        if t.dims() != var.dims() {
            return Err(Error::ConfigMismatch(format!(
                "parameter `{name}` has shape {:?}, expected {:?}",
                t.dims(),
                var.dims()
            )));
        }
        var.set(t)?;
    }
    Ok(Checkpoint {
        state,
        routes,
        training,
        tensors,
    })
}

/// Loads a checkpoint and insists it was produced under `expected`.
pub fn load_checkpoint_for(
    path: impl AsRef<Path>,
    expected: &ModelConfig,
    device: &Device,
) -> Result<Checkpoint> {
    let ck = load_checkpoint(path, device)?;
    if &ck.state.cfg != expected {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint config {} does not match {}",
            serde_json::to_string(&ck.state.cfg)?,
            serde_json::to_string(expected)?
        )));
    }
    Ok(ck)
}
