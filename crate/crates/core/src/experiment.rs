//! Nested cross-validation experiment runner.
//!
//! For each outer fold: pre-train on the outer-training subjects (unless
//! running the scratch variant), then for every training fraction fine-tune
//! one model per inner fold, predict the outer-test subjects with each, and
//! ensemble by averaging subject scores. A leakage guard checks the actual
//! subject sets fed to every stage against the fold's test set and aborts
//! on overlap.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LoadedSubject;
use crate::evaluation::{
    auc, confusion_metrics, ensemble_predictions, make_nested_folds, predict_subject,
    subsample_training, FoldPlan, RocPoint, SubjectPrediction,
};
use crate::masking::MaskStrategy;
use crate::model::ModelConfig;
use crate::rng::Rng;
use crate::training::{
    finetune, pretrain, train_scratch, Checkpoint, FinetuneConfig, LossLogRow, PretrainConfig,
};
use crate::{Error, Result};

/// Which model family the experiment evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelVariant {
    /// Masked pre-training on outer-train data, then frozen-encoder
    /// fine-tuning.
    Pretrained(MaskStrategy),
    /// No pre-training; the whole classifier trains on labelled data.
    Scratch,
}

impl ModelVariant {
    pub fn strategy(&self) -> Option<MaskStrategy> {
        match self {
            ModelVariant::Pretrained(s) => Some(*s),
            ModelVariant::Scratch => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CvSpec {
    pub k: usize,
    pub fractions: Vec<f64>,
    pub stride: usize,
    pub seed: u64,
    pub variant: ModelVariant,
    /// Architecture for pre-trained models.
    pub model_cfg: ModelConfig,
    /// Architecture for the scratch baseline (conventionally smaller).
    pub scratch_cfg: ModelConfig,
    pub pretrain_cfg: PretrainConfig,
    pub finetune_cfg: FinetuneConfig,
    /// Parallel outer-fold jobs.
    pub jobs: usize,
    /// Progress lines on stderr.
    pub verbose: bool,
}

/// Metrics of one (fold, fraction) experiment on its outer-test subjects.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub fold: usize,
    pub fraction: f64,
    pub strategy: Option<MaskStrategy>,
    pub auc: f64,
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n_test: usize,
    #[serde(skip)]
    pub roc: Vec<RocPoint>,
    #[serde(skip)]
    pub predictions: Vec<SubjectPrediction>,
}

#[derive(Debug)]
pub struct FoldOutput {
    pub fold: usize,
    pub checkpoint: Option<Checkpoint>,
    pub pretrain_log: Vec<LossLogRow>,
    pub results: Vec<ExperimentResult>,
}

/// Mean ± sample standard deviation of each metric across outer folds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FractionSummary {
    pub fraction: f64,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub sensitivity_mean: Option<f64>,
    pub specificity_mean: Option<f64>,
}

#[derive(Debug)]
pub struct CvOutcome {
    pub plan: FoldPlan,
    pub folds: Vec<FoldOutput>,
    pub summary: Vec<FractionSummary>,
}

/// Abort when any subject id used by `stage` appears in the test set.
pub fn leakage_guard<'a>(
    stage: &str,
    used: impl IntoIterator<Item = &'a str>,
    test: &HashSet<&str>,
) -> Result<()> {
    let leaked: Vec<&str> = used.into_iter().filter(|id| test.contains(id)).collect();
    if leaked.is_empty() {
        Ok(())
    } else {
        Err(Error::Leakage(format!(
            "{stage} saw outer-test subjects: {}",
            leaked.join(", ")
        )))
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

struct FoldContext<'a> {
    spec: &'a CvSpec,
    dataset: &'a [LoadedSubject],
    by_id: &'a HashMap<&'a str, &'a LoadedSubject>,
}

impl FoldContext<'_> {
    fn lookup(&self, ids: &[String]) -> Result<Vec<LoadedSubject>> {
        ids.iter()
            .map(|id| {
                self.by_id
                    .get(id.as_str())
                    .map(|s| (*s).clone())
                    .ok_or_else(|| Error::Data(format!("fold plan names unknown subject `{id}`")))
            })
            .collect()
    }

    fn run_fold(&self, fold_idx: usize, plan: &FoldPlan) -> Result<FoldOutput> {
        let spec = self.spec;
        let outer = &plan.outer[fold_idx];
        let test_ids: HashSet<&str> = outer.test.iter().map(String::as_str).collect();
        let test_subjects = self.lookup(&outer.test)?;
        let root = Rng::new(spec.seed).derive_str(&format!("fold-{fold_idx}"));

        // Outer-train set = every subject outside this fold's test set, in
        // dataset order.
        let outer_train: Vec<LoadedSubject> = self
            .dataset
            .iter()
            .filter(|s| !test_ids.contains(s.record.subject_id.as_str()))
            .cloned()
            .collect();

        let (checkpoint, pretrain_log) = match spec.variant {
            ModelVariant::Pretrained(strategy) => {
                leakage_guard(
                    "pre-training",
                    outer_train.iter().map(|s| s.record.subject_id.as_str()),
                    &test_ids,
                )?;
                let mut cfg = spec.pretrain_cfg.clone();
                cfg.strategy = strategy;
                if spec.verbose {
                    eprintln!("[fold {fold_idx}] pre-training ({strategy}, {} steps)", cfg.steps);
                }
                let out = pretrain(
                    &outer_train,
                    &cfg,
                    &spec.model_cfg,
                    root.derive_str("pretrain").seed(),
                    None,
                )?;
                (Some(out.checkpoint), out.log)
            }
            ModelVariant::Scratch => (None, Vec::new()),
        };

        let test_labels: Vec<u8> = test_subjects.iter().map(|s| s.record.label).collect();
        let mut results = Vec::new();
        for (frac_idx, &fraction) in spec.fractions.iter().enumerate() {
            let mut per_model: Vec<Vec<SubjectPrediction>> = Vec::with_capacity(plan.k);
            for (inner_idx, split) in outer.inner.iter().enumerate() {
                let seed = root
                    .derive_str(&format!("finetune-frac{frac_idx}-inner{inner_idx}"))
                    .seed();
                let inner_train_records: Vec<_> = self
                    .lookup(&split.train)?
                    .into_iter()
                    .map(|s| s.record)
                    .collect();
                let selected = subsample_training(&inner_train_records, fraction, seed)?;
                let train = self.lookup(
                    &selected.iter().map(|r| r.subject_id.clone()).collect::<Vec<_>>(),
                )?;
                let val = self.lookup(&split.val)?;
                leakage_guard(
                    "fine-tuning",
                    train
                        .iter()
                        .chain(val.iter())
                        .map(|s| s.record.subject_id.as_str()),
                    &test_ids,
                )?;
                let fitted = match (&spec.variant, &checkpoint) {
                    (ModelVariant::Pretrained(_), Some(ckpt)) => {
                        finetune(ckpt, &train, &val, &spec.finetune_cfg, seed)?
                    }
                    (ModelVariant::Scratch, _) => {
                        train_scratch(&spec.scratch_cfg, &train, &val, &spec.finetune_cfg, seed)?
                    }
                    _ => unreachable!("pretrained variant always carries a checkpoint"),
                };
                let preds: Vec<SubjectPrediction> = test_subjects
                    .iter()
                    .map(|s| {
                        predict_subject(&fitted.model, s, spec.finetune_cfg.window, spec.stride)
                    })
                    .collect::<Result<_>>()?;
                per_model.push(preds);
                if spec.verbose {
                    eprintln!(
                        "[fold {fold_idx}] fraction {fraction} inner {inner_idx}: val metric {:.3} ({} epochs)",
                        fitted.best_val_metric, fitted.epochs_run
                    );
                }
            }

            // Ensemble the k inner models per subject.
            let ensembled: Vec<SubjectPrediction> = (0..test_subjects.len())
                .map(|si| {
                    let members: Vec<SubjectPrediction> =
                        per_model.iter().map(|m| m[si].clone()).collect();
                    ensemble_predictions(&members)
                })
                .collect::<Result<_>>()?;

            let scores: Vec<f64> = ensembled.iter().map(|p| p.mean_prob).collect();
            let labels_pred: Vec<u8> = ensembled.iter().map(|p| p.voted_label).collect();
            let auc_result = auc(&scores, &test_labels)?;
            let confusion = confusion_metrics(&labels_pred, &test_labels)?;
            results.push(ExperimentResult {
                fold: fold_idx,
                fraction,
                strategy: spec.variant.strategy(),
                auc: auc_result.auc,
                accuracy: confusion.accuracy,
                sensitivity: confusion.sensitivity,
                specificity: confusion.specificity,
                tp: confusion.tp,
                fp: confusion.fp,
                tn: confusion.tn,
                fn_: confusion.fn_,
                n_test: test_subjects.len(),
                roc: auc_result.roc,
                predictions: ensembled,
            });
        }
        Ok(FoldOutput { fold: fold_idx, checkpoint, pretrain_log, results })
    }
}

/// Run the full nested experiment. A caller-supplied plan (for audit or
/// reuse) is validated by the leakage guard exactly like a generated one.
pub fn run_nested_cv(
    dataset: &[LoadedSubject],
    spec: &CvSpec,
    plan: Option<FoldPlan>,
) -> Result<CvOutcome> {
    if spec.fractions.is_empty() {
        return Err(Error::Config("no training fractions given".into()));
    }
    for &f in &spec.fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!("training fraction {f} not in (0, 1]")));
        }
    }
    let records: Vec<_> = dataset.iter().map(|s| s.record.clone()).collect();
    let plan = match plan {
        Some(p) => p,
        None => make_nested_folds(&records, spec.k, spec.seed)?,
    };
    if plan.outer.len() != spec.k {
        return Err(Error::Config(format!(
            "fold plan has {} outer folds, spec expects {}",
            plan.outer.len(),
            spec.k
        )));
    }
    let by_id: HashMap<&str, &LoadedSubject> = dataset
        .iter()
        .map(|s| (s.record.subject_id.as_str(), s))
        .collect();
    let ctx = FoldContext { spec, dataset, by_id: &by_id };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let folds: Vec<FoldOutput> = pool.install(|| {
        (0..plan.outer.len())
            .into_par_iter()
            .map(|i| ctx.run_fold(i, &plan))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut summary = Vec::new();
    for &fraction in &spec.fractions {
        let rows: Vec<&ExperimentResult> = folds
            .iter()
            .flat_map(|f| f.results.iter())
            .filter(|r| r.fraction == fraction)
            .collect();
        let (auc_mean, auc_std) = mean_std(&rows.iter().map(|r| r.auc).collect::<Vec<_>>());
        let (acc_mean, acc_std) = mean_std(&rows.iter().map(|r| r.accuracy).collect::<Vec<_>>());
        let sens: Vec<f64> = rows.iter().filter_map(|r| r.sensitivity).collect();
        let spec_: Vec<f64> = rows.iter().filter_map(|r| r.specificity).collect();
        summary.push(FractionSummary {
            fraction,
            auc_mean,
            auc_std,
            accuracy_mean: acc_mean,
            accuracy_std: acc_std,
            sensitivity_mean: (!sens.is_empty()).then(|| mean_std(&sens).0),
            specificity_mean: (!spec_.is_empty()).then(|| mean_std(&spec_).0),
        });
    }
    Ok(CvOutcome { plan, folds, summary })
}
