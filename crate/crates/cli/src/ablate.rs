//! Component ablation: starting from one initialization, train the means,
//! the covariance, both, or neither, and compare accuracies.

use std::fmt;
use std::str::FromStr;

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};
use xlda_core::{EmbeddingData, LabeledBatch, LdaModel, Semantics, TrainMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationRow {
    InitOnly,
    MuTrained,
    SigmaTrained,
    BothTrained,
}

impl AblationRow {
    pub const ALL: [AblationRow; 4] = [
        AblationRow::InitOnly,
        AblationRow::MuTrained,
        AblationRow::SigmaTrained,
        AblationRow::BothTrained,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationRow::InitOnly => "init_only",
            AblationRow::MuTrained => "mu_trained",
            AblationRow::SigmaTrained => "sigma_trained",
            AblationRow::BothTrained => "both_trained",
        }
    }

    pub fn trains_mu(self) -> bool {
        matches!(self, AblationRow::MuTrained | AblationRow::BothTrained)
    }

    pub fn trains_sigma(self) -> bool {
        matches!(self, AblationRow::SigmaTrained | AblationRow::BothTrained)
    }
}

impl fmt::Display for AblationRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationRow {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match AblationRow::ALL.into_iter().find(|r| r.name() == s) {
            Some(r) => Ok(r),
            None => bail!("unknown ablation row {s:?}"),
        }
    }
}

/// How the covariance behaves when both components are trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AblationSchedule {
    /// One pass; Σ keeps updating alongside μ.
    Plastic,
    /// A first pass trains Σ alone; Σ is then frozen and a second pass
    /// trains μ.
    Frozen,
}

impl AblationSchedule {
    pub fn name(self) -> &'static str {
        match self {
            AblationSchedule::Plastic => "plastic",
            AblationSchedule::Frozen => "frozen",
        }
    }
}

impl fmt::Display for AblationSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationSchedule {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plastic" => Ok(AblationSchedule::Plastic),
            "frozen" => Ok(AblationSchedule::Frozen),
            other => bail!("unknown ablation schedule {other:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRecord {
    pub record: String,
    pub row: AblationRow,
    pub schedule: AblationSchedule,
    pub train_mu: bool,
    pub train_sigma: bool,
    pub accuracy: f64,
    /// Accuracy minus the init-only accuracy.
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationOptions {
    pub schedule: AblationSchedule,
    pub batch_size: usize,
    pub beta: f64,
    pub semantics: Semantics,
}

fn pass(model: &mut LdaModel, batches: &[LabeledBatch], mode: TrainMode, semantics: Semantics) -> Result<()> {
    model.set_train_mode(mode);
    for b in batches {
        model.ingest_batch(b, semantics)?;
    }
    Ok(())
}

/// Train a copy of `init` for one row of the ablation table.
pub fn train_row(
    init: &LdaModel,
    batches: &[LabeledBatch],
    row: AblationRow,
    options: &AblationOptions,
) -> Result<LdaModel> {
    let mut model = init.clone();
    let sem = options.semantics;
    match (row, options.schedule) {
        (AblationRow::InitOnly, _) => {}
        (AblationRow::MuTrained, _) => pass(&mut model, batches, TrainMode::TrainMuOnly, sem)?,
        (AblationRow::SigmaTrained, _) => pass(&mut model, batches, TrainMode::TrainSigmaOnly, sem)?,
        (AblationRow::BothTrained, AblationSchedule::Plastic) => {
            pass(&mut model, batches, TrainMode::TrainBoth, sem)?
        }
        (AblationRow::BothTrained, AblationSchedule::Frozen) => {
            pass(&mut model, batches, TrainMode::TrainSigmaOnly, sem)?;
            pass(&mut model, batches, TrainMode::TrainMuOnly, sem)?;
        }
    }
    model.set_train_mode(init.train_mode());
    Ok(model)
}

/// Every row of the table, evaluated on `test`.
pub fn run_ablation(
    init: &LdaModel,
    train: &EmbeddingData,
    test: &EmbeddingData,
    options: &AblationOptions,
) -> Result<Vec<AblationRecord>> {
    let batches: Vec<LabeledBatch> = train.batches(options.batch_size).collect::<Result<_, _>>()?;
    let test_x = test.widened();
    let mut records: Vec<AblationRecord> = Vec::new();
    for row in AblationRow::ALL {
        let model = train_row(init, &batches, row, options)?;
        let accuracy = model.translate(options.beta)?.accuracy(test_x.view(), &test.labels)?;
        let base = records.first().map_or(accuracy, |r| r.accuracy);
        records.push(AblationRecord {
            record: "ablate".into(),
            row,
            schedule: options.schedule,
            train_mu: row.trains_mu(),
            train_sigma: row.trains_sigma(),
            accuracy,
            delta: accuracy - base,
        });
    }
    Ok(records)
}

/// Human-readable table: one row per training schedule.
pub fn format_table(records: &[AblationRecord]) -> String {
    let mark = |b: bool| if b { "x" } else { " " };
    let mut out = String::from("train mu | train sigma | accuracy | delta\n");
    for r in records {
        out.push_str(&format!(
            "{:^8} | {:^11} | {:>8.4} | {:+.4}\n",
            mark(r.train_mu),
            mark(r.train_sigma),
            r.accuracy,
            r.delta
        ));
    }
    out
}
