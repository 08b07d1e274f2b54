//! Trains one state per variant under identical seeds and budgets and
//! scores each on a held-out seed split.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use candle_core::{DType, Device};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::edit::EditConfig;
use super::eval::{evaluate_state, CellResult};
use crate::datapipe::EditSample;
use crate::error::{Error, Result};
use crate::guidance::ModulationMode;
use crate::model::{ModelConfig, ModelState};
use crate::trainer::{prepare_samples, train_two_stage, window_mean, TrainConfig, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    SftOnly,
    ReasoningOnly,
    VisualOnly,
    Full,
    HardSwitch,
    DinoOnly,
    VaeOnly,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 7] = [
        AblationVariant::SftOnly,
        AblationVariant::ReasoningOnly,
        AblationVariant::VisualOnly,
        AblationVariant::Full,
        AblationVariant::HardSwitch,
        AblationVariant::DinoOnly,
        AblationVariant::VaeOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::SftOnly => "sft_only",
            AblationVariant::ReasoningOnly => "reasoning_only",
            AblationVariant::VisualOnly => "visual_only",
            AblationVariant::Full => "full",
            AblationVariant::HardSwitch => "hard_switch",
            AblationVariant::DinoOnly => "dino_only",
            AblationVariant::VaeOnly => "vae_only",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown variant `{name}`")))
    }

    pub fn parse_list(list: &str) -> Result<Vec<Self>> {
        list.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(Self::from_name)
            .collect()
    }

    pub fn uses_reasoning(self) -> bool {
        !matches!(self, AblationVariant::SftOnly | AblationVariant::VisualOnly)
    }

    pub fn uses_queries(self) -> bool {
        !matches!(
            self,
            AblationVariant::SftOnly | AblationVariant::ReasoningOnly
        )
    }

    pub fn modulation_mode(self) -> ModulationMode {
        match self {
            AblationVariant::HardSwitch => ModulationMode::HardSwitch,
            AblationVariant::DinoOnly => ModulationMode::StructureOnly,
            AblationVariant::VaeOnly => ModulationMode::TextureOnly,
            _ => ModulationMode::Smooth,
        }
    }

    /// The training and editing configs of this variant.
    pub fn apply(self, train: &TrainConfig, edit: &EditConfig) -> (TrainConfig, EditConfig) {
        let mut t = train.clone();
        t.use_reasoning = self.uses_reasoning();
        t.use_queries = self.uses_queries();
        t.modulation.mode = self.modulation_mode();
        let mut e = edit.clone();
        e.use_reasoning = t.use_reasoning;
        e.use_queries = t.use_queries;
        e.modulation = t.modulation;
        (t, e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub steps_a: usize,
    pub steps_b: usize,
    pub edit: EditConfig,
    pub eval_batch: usize,
    pub f64: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            steps_a: 3000,
            steps_b: 1000,
            edit: EditConfig::default(),
            eval_batch: 16,
            f64: false,
        }
    }
}

impl AblationConfig {
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        Ok(hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantMetrics {
    pub mean_oracle_mse: f64,
    pub predicate_pass_rate: f64,
    pub per_transition_mse: BTreeMap<String, f64>,
    pub per_transition_pass_rate: BTreeMap<String, f64>,
    /// Mean L_total over the last 20 training steps.
    pub final_loss: f64,
    pub cells: Vec<CellResult>,
}

impl VariantMetrics {
    pub fn from_cells(cells: Vec<CellResult>, final_loss: f64) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::InvalidInput(
                "no held-out samples were evaluated".into(),
            ));
        }
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        let mut by_type: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for c in &cells {
            let e = by_type.entry(c.transition.clone()).or_default();
            e.0.push(c.oracle_mse);
            e.1.push(c.pass_rate);
        }
        let mses: Vec<f64> = cells.iter().map(|c| c.oracle_mse).collect();
        let passes: Vec<f64> = cells.iter().map(|c| c.pass_rate).collect();
        let m = VariantMetrics {
            mean_oracle_mse: mean(&mses),
            predicate_pass_rate: mean(&passes),
            per_transition_mse: by_type
                .iter()
                .map(|(k, v)| (k.clone(), mean(&v.0)))
                .collect(),
            per_transition_pass_rate: by_type
                .iter()
                .map(|(k, v)| (k.clone(), mean(&v.1)))
                .collect(),
            final_loss,
            cells,
        };
        if !m.scalars().iter().all(|(_, v)| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite evaluation metric".into()));
        }
        Ok(m)
    }

    /// Every scalar metric as (name, value).
    pub fn scalars(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("mean_oracle_mse".to_string(), self.mean_oracle_mse),
            ("predicate_pass_rate".to_string(), self.predicate_pass_rate),
            ("final_loss".to_string(), self.final_loss),
        ];
        out.extend(
            self.per_transition_mse
                .iter()
                .map(|(k, v)| (format!("oracle_mse/{k}"), *v)),
        );
        out.extend(
            self.per_transition_pass_rate
                .iter()
                .map(|(k, v)| (format!("pass_rate/{k}"), *v)),
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: String,
    pub metrics: Option<VariantMetrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub train_seed: u64,
    pub edit_seed: u64,
    pub init_seed: u64,
    pub heldout_samples: Vec<String>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variants: Vec<String>,
    pub rows: Vec<VariantRow>,
    pub meta: RunMeta,
}

#[derive(Serialize)]
struct MetricRecord<'a> {
    variant: &'a str,
    metric: &'a str,
    value: Option<f64>,
    error: Option<&'a str>,
}

impl EvalReport {
    pub fn row(&self, variant: AblationVariant) -> Option<&VariantMetrics> {
        self.rows
            .iter()
            .find(|r| r.variant == variant.name())
            .and_then(|r| r.metrics.as_ref())
    }

    /// One line-delimited record per (variant, metric); failed variants
    /// get a single record carrying the error.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.rows {
            match (&r.metrics, &r.error) {
                (Some(m), _) => {
                    for (name, v) in m.scalars() {
                        let rec = MetricRecord {
                            variant: &r.variant,
                            metric: &name,
                            value: Some(v),
                            error: None,
                        };
                        out.push_str(&serde_json::to_string(&rec)?);
                        out.push('\n');
                    }
                }
                (None, e) => {
                    let rec = MetricRecord {
                        variant: &r.variant,
                        metric: "error",
                        value: None,
                        error: e.as_deref(),
                    };
                    out.push_str(&serde_json::to_string(&rec)?);
                    out.push('\n');
                }
            }
        }
        Ok(out)
    }

    /// Plain-text table with one row per variant.
    pub fn to_table(&self) -> String {
        let types: Vec<String> = self
            .rows
            .iter()
            .filter_map(|r| r.metrics.as_ref())
            .flat_map(|m| m.per_transition_mse.keys().cloned())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut s = String::new();
        let _ = write!(
            s,
            "{:<16} {:>10} {:>10} {:>10}",
            "variant", "mse", "pass", "loss"
        );
        for t in &types {
            let _ = write!(s, " {:>18}", format!("mse:{t}"));
        }
        s.push('\n');
        for r in &self.rows {
            match &r.metrics {
                Some(m) => {
                    let _ = write!(
                        s,
                        "{:<16} {:>10.5} {:>10.3} {:>10.4}",
                        r.variant, m.mean_oracle_mse, m.predicate_pass_rate, m.final_loss
                    );
                    for t in &types {
                        match m.per_transition_mse.get(t) {
                            Some(v) => {
                                let _ = write!(s, " {v:>18.5}");
                            }
                            None => {
                                let _ = write!(s, " {:>18}", "-");
                            }
                        }
                    }
                }
                None => {
                    let _ = write!(
                        s,
                        "{:<16} failed: {}",
                        r.variant,
                        r.error.as_deref().unwrap_or("unknown")
                    );
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Trains and scores a single variant.
pub fn run_variant(
    variant: AblationVariant,
    train_samples: &[EditSample],
    heldout: &[EditSample],
    cfg: &AblationConfig,
) -> Result<VariantMetrics> {
    let (tc, ec) = variant.apply(&cfg.train, &cfg.edit);
    let dtype = if cfg.f64 { DType::F64 } else { DType::F32 };
    let state = ModelState::new(&cfg.model, &Device::Cpu, dtype)?;
    let data = prepare_samples(&state, train_samples, tc.use_reasoning)?;
    let mut trainer = Trainer::new(state, tc)?;
    let trace = train_two_stage(&mut trainer, &data, cfg.steps_a, cfg.steps_b, |l| {
        if l.step % 100 == 0 {
            log::info!(
                "{} step {} l_diff {:.4} l_tran {:.4}",
                variant.name(),
                l.step,
                l.l_diff,
                l.l_tran
            );
        }
    })?;
    let totals: Vec<f64> = trace.iter().map(|l| l.l_total).collect();
    let n = totals.len();
    let final_loss = window_mean(&totals, n.saturating_sub(20), n);
    let cells = evaluate_state(&trainer.state, heldout, &ec, cfg.eval_batch)?;
    VariantMetrics::from_cells(cells, final_loss)
}

/// Runs every variant; a failing variant yields an error row and never
/// suppresses the others.
pub fn run_ablation(
    train_samples: &[EditSample],
    heldout: &[EditSample],
    variants: &[AblationVariant],
    cfg: &AblationConfig,
) -> Result<EvalReport> {
    if variants.is_empty() {
        return Err(Error::Config("no ablation variants requested".into()));
    }
    let rows = variants
        .iter()
        .map(|&v| match run_variant(v, train_samples, heldout, cfg) {
            Ok(m) => VariantRow {
                variant: v.name().to_string(),
                metrics: Some(m),
                error: None,
            },
            Err(e) => VariantRow {
                variant: v.name().to_string(),
                metrics: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    Ok(EvalReport {
        variants: variants.iter().map(|v| v.name().to_string()).collect(),
        rows,
        meta: RunMeta {
            train_seed: cfg.train.seed,
            edit_seed: cfg.edit.seed,
            init_seed: cfg.model.init_seed,
            heldout_samples: heldout.iter().map(|s| s.sample_id.clone()).collect(),
            config_hash: cfg.hash()?,
        },
    })
}

/// Cells where `a` has strictly lower oracle MSE than `b`, over cells both
/// evaluated.
pub fn cell_wins(a: &VariantMetrics, b: &VariantMetrics) -> (usize, usize) {
    let bm: BTreeMap<&str, f64> = b
        .cells
        .iter()
        .map(|c| (c.sample_id.as_str(), c.oracle_mse))
        .collect();
    let mut wins = 0;
    let mut total = 0;
    for c in &a.cells {
        if let Some(&o) = bm.get(c.sample_id.as_str()) {
            total += 1;
            if c.oracle_mse < o {
                wins += 1;
            }
        }
    }
    (wins, total)
}
