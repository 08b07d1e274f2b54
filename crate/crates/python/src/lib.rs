use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use candle_core::{DType, Device};
use phystran_core::datapipe::{
    generate_dataset, load_manifest, GenConfig, OracleAnnotator, OracleVerifier, Taxonomy,
    VerificationRecord,
};
use phystran_core::encoders::{FeatureKind, FeatureSeq, FeatureSource};
use phystran_core::guidance::{modulate, ModulationConfig};
use phystran_core::model::{ModelConfig, ModelState};
use phystran_core::pipeline::{edit_from_text, EditConfig};
use phystran_core::synthworld::Verdict;
use phystran_core::trainer::{load_checkpoint, prepare_samples, Stage, TrainConfig, Trainer};
use phystran_core::{Error, Frame};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::UnsupportedTransition(_)
        | Error::InvalidInput(_)
        | Error::InvalidSpec(_)
        | Error::Shape(_)
        | Error::Domain(_)
        | Error::Config(_)
        | Error::ConfigMismatch(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Renders, verifies and annotates a dataset into `out_dir`; returns the
/// summary as a JSON string.
#[pyfunction]
#[pyo3(signature = (out_dir, per_type=16, seed=0))]
fn gen_data(out_dir: PathBuf, per_type: usize, seed: u64) -> PyResult<String> {
    let cfg = GenConfig {
        per_type,
        seed,
        ..GenConfig::default()
    };
    let summary = generate_dataset(
        Taxonomy::shipped(),
        &cfg,
        &OracleVerifier,
        &OracleAnnotator,
        &out_dir,
    )
    .map_err(to_py)?;
    serde_json::to_string(&summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Sample ids of a manifest, in file order.
#[pyfunction]
fn manifest_ids(path: PathBuf) -> PyResult<Vec<String>> {
    Ok(load_manifest(&path)
        .map_err(to_py)?
        .into_iter()
        .map(|s| s.sample_id)
        .collect())
}

/// Whether a verdict list ("align", "contradict", "unknown") is retained.
#[pyfunction]
fn retained(verdicts: Vec<String>) -> PyResult<bool> {
    let parsed = verdicts
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let verdict = match v.as_str() {
                "align" => Verdict::Align,
                "contradict" => Verdict::Contradict,
                "unknown" => Verdict::Unknown,
                o => return Err(PyValueError::new_err(format!("unknown verdict `{o}`"))),
            };
            Ok((format!("p{i}"), verdict))
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok(VerificationRecord::from_verdicts(parsed).retained)
}

/// Smooth timestep-aware mix of two equally long feature vectors.
#[pyfunction]
fn modulate_smooth(t: f64, structure: Vec<f32>, texture: Vec<f32>) -> PyResult<Vec<f32>> {
    let n = structure.len();
    let s = FeatureSeq::new(
        structure,
        1,
        n,
        FeatureKind::Structure,
        FeatureSource::Prediction,
    )
    .map_err(to_py)?;
    let x = FeatureSeq::new(
        texture,
        1,
        n,
        FeatureKind::Texture,
        FeatureSource::Prediction,
    )
    .map_err(to_py)?;
    Ok(modulate(t, &s, &x, &ModulationConfig::default())
        .map_err(to_py)?
        .tokens)
}

/// A model with its training state.
#[pyclass(unsendable)]
struct Model {
    trainer: Trainer,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (seed=0))]
    fn new(seed: u64) -> PyResult<Self> {
        let state =
            ModelState::new(&ModelConfig::default(), &Device::Cpu, DType::F32).map_err(to_py)?;
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        Ok(Model {
            trainer: Trainer::new(state, cfg).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = load_checkpoint(&path, &Device::Cpu).map_err(to_py)?;
        Ok(Model {
            trainer: ckpt.into_trainer().map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.trainer.save(&path).map_err(to_py)
    }

    fn num_parameters(&self) -> usize {
        self.trainer
            .state
            .store
            .iter()
            .map(|(_, v, _)| v.elem_count())
            .sum()
    }

    /// Trains `steps` steps of `stage` ("A" or "B") on a manifest and
    /// returns the per-step total loss.
    fn train(&mut self, manifest: PathBuf, stage: &str, steps: usize) -> PyResult<Vec<f64>> {
        let stage: Stage = stage.parse().map_err(to_py)?;
        if stage != self.trainer.cfg.stage || self.trainer.step == 0 {
            self.trainer.set_stage(stage).map_err(to_py)?;
        }
        let samples = load_manifest(&manifest).map_err(to_py)?;
        let data = prepare_samples(
            &self.trainer.state,
            &samples,
            self.trainer.cfg.use_reasoning,
        )
        .map_err(to_py)?;
        let trace = self.trainer.run(&data, steps, |_| {}).map_err(to_py)?;
        Ok(trace.iter().map(|l| l.l_total).collect())
    }

    /// Edits the PNG at `source` and writes the result to `out`.
    #[pyo3(signature = (source, instruction, out, seed=0, steps=20))]
    fn edit(
        &self,
        source: PathBuf,
        instruction: &str,
        out: PathBuf,
        seed: u64,
        steps: usize,
    ) -> PyResult<()> {
        let frame = Frame::load_png(&source).map_err(to_py)?;
        let cfg = EditConfig {
            seed,
            sample_steps: steps,
            ..EditConfig::default()
        };
        let (edited, _) =
            edit_from_text(&self.trainer.state, &frame, instruction, &cfg).map_err(to_py)?;
        edited.save_png(&out).map_err(to_py)
    }
}

#[pymodule]
fn phystran(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(gen_data, m)?)?;
    m.add_function(wrap_pyfunction!(manifest_ids, m)?)?;
    m.add_function(wrap_pyfunction!(retained, m)?)?;
    m.add_function(wrap_pyfunction!(modulate_smooth, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
