//! Evaluation protocol: nested stratified cross-validation plans,
//! sliding-window majority voting, inner-fold ensembling, ROC/AUC,
//! confusion metrics, reconstruction MSE on held-out data, and the paired
//! two-tailed t-test.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::data::{sliding_windows, LoadedSubject, SubjectRecord};
use crate::masking::{apply_mask, make_mask, round_count, sample_ratio, MaskStrategy};
use crate::model::{predict_window, reconstruct_window, Model};
use crate::rng::Rng;
use crate::{Error, Result};

// ── Fold plans ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InnerSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OuterFold {
    pub test: Vec<String>,
    pub inner: Vec<InnerSplit>,
}

/// Subject-id assignments for nested stratified k-fold cross-validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub outer: Vec<OuterFold>,
}

/// Shuffle each class separately, deal the ids round-robin into `k` buckets.
/// Bucket sizes differ by at most one per class. `require_full` demands at
/// least k subjects per class (the outer split); inner splits of small
/// cohorts may leave a class short in some buckets.
fn stratified_buckets(
    subjects: &[&SubjectRecord],
    k: usize,
    rng: &Rng,
    tag: &str,
    require_full: bool,
) -> Result<Vec<Vec<String>>> {
    let mut buckets = vec![Vec::new(); k];
    for class in [1u8, 0u8] {
        let mut ids: Vec<&str> = subjects
            .iter()
            .filter(|s| s.label == class)
            .map(|s| s.subject_id.as_str())
            .collect();
        if require_full && ids.len() < k {
            return Err(Error::Data(format!(
                "{} subjects of class {class}, need at least {k} for {k}-fold stratification",
                ids.len()
            )));
        }
        let mut class_rng = rng.derive_str(&format!("{tag}-class-{class}"));
        class_rng.shuffle(&mut ids);
        for (i, id) in ids.iter().enumerate() {
            buckets[i % k].push((*id).to_string());
        }
    }
    Ok(buckets)
}

/// Build the nested plan: k outer test folds partitioning the subjects, and
/// for each outer fold k inner train/validation splits of its training set.
pub fn make_nested_folds(subjects: &[SubjectRecord], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Param(format!("k-fold needs k >= 2, got {k}")));
    }
    let refs: Vec<&SubjectRecord> = subjects.iter().collect();
    let rng = Rng::new(seed);
    let outer_buckets = stratified_buckets(&refs, k, &rng, "outer", true)?;
    let mut outer = Vec::with_capacity(k);
    for (i, test) in outer_buckets.iter().enumerate() {
        let test_set: HashSet<&str> = test.iter().map(String::as_str).collect();
        let train_refs: Vec<&SubjectRecord> = refs
            .iter()
            .copied()
            .filter(|s| !test_set.contains(s.subject_id.as_str()))
            .collect();
        let inner_buckets = stratified_buckets(&train_refs, k, &rng, &format!("inner-{i}"), false)?;
        let inner = (0..k)
            .map(|j| {
                let val = inner_buckets[j].clone();
                let val_set: HashSet<&str> = val.iter().map(String::as_str).collect();
                let train = train_refs
                    .iter()
                    .map(|s| s.subject_id.clone())
                    .filter(|id| !val_set.contains(id.as_str()))
                    .collect();
                InnerSplit { train, val }
            })
            .collect();
        outer.push(OuterFold { test: test.clone(), inner });
    }
    Ok(FoldPlan { k, seed, outer })
}

/// Stratified subsample preserving the class ratio within ±1 subject.
/// Subsets are nested across fractions for a fixed seed, and the output
/// keeps the original subject order.
pub fn subsample_training(subjects: &[SubjectRecord], fraction: f64, seed: u64) -> Result<Vec<SubjectRecord>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Param(format!("training fraction {fraction} not in (0, 1]")));
    }
    if fraction == 1.0 {
        return Ok(subjects.to_vec());
    }
    let rng = Rng::new(seed);
    let mut keep = vec![false; subjects.len()];
    for class in [1u8, 0u8] {
        let mut idx: Vec<usize> = (0..subjects.len()).filter(|&i| subjects[i].label == class).collect();
        if idx.is_empty() {
            continue;
        }
        let take = round_count(fraction, idx.len());
        if take == 0 {
            return Err(Error::Param(format!(
                "fraction {fraction} yields zero subjects of class {class}"
            )));
        }
        rng.derive_str(&format!("subsample-class-{class}")).shuffle(&mut idx);
        for &i in &idx[..take] {
            keep[i] = true;
        }
    }
    Ok(subjects
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(s, _)| s.clone())
        .collect())
}

// ── Subject-level prediction ───────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectPrediction {
    pub subject_id: String,
    pub window_probs: Vec<f64>,
    pub voted_label: u8,
    pub mean_prob: f64,
}

fn vote(window_probs: &[f64], mean_prob: f64) -> u8 {
    let ones = window_probs.iter().filter(|&&p| p > 0.5).count();
    let zeros = window_probs.len() - ones;
    match ones.cmp(&zeros) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Less => 0,
        // Tie broken by the mean probability; exactly 0.5 maps to 0.
        std::cmp::Ordering::Equal => u8::from(mean_prob > 0.5),
    }
}

/// Classify every sliding window of a subject and vote: label from the
/// majority of per-window (p > 0.5) votes, ties broken by mean probability.
/// The mean probability is retained as the subject's continuous score.
pub fn predict_subject(
    model: &Model,
    subject: &LoadedSubject,
    window: usize,
    stride: usize,
) -> Result<SubjectPrediction> {
    let windows = sliding_windows(&subject.series, window, stride)?;
    let mut probs = Vec::with_capacity(windows.len());
    for w in &windows {
        probs.push(predict_window(model, w)?);
    }
    let mean_prob = probs.iter().sum::<f64>() / probs.len() as f64;
    Ok(SubjectPrediction {
        subject_id: subject.record.subject_id.clone(),
        voted_label: vote(&probs, mean_prob),
        mean_prob,
        window_probs: probs,
    })
}

/// Average the member models' subject scores; label by thresholding the
/// ensemble mean at 0.5. The member means are kept as this prediction's
/// window probabilities.
pub fn ensemble_predictions(per_model: &[SubjectPrediction]) -> Result<SubjectPrediction> {
    let first = per_model
        .first()
        .ok_or_else(|| Error::Param("ensemble of zero predictions".into()))?;
    if per_model.iter().any(|p| p.subject_id != first.subject_id) {
        return Err(Error::Param(format!(
            "ensemble mixes subjects: {:?}",
            per_model.iter().map(|p| p.subject_id.as_str()).collect::<Vec<_>>()
        )));
    }
    let means: Vec<f64> = per_model.iter().map(|p| p.mean_prob).collect();
    let mean = means.iter().sum::<f64>() / means.len() as f64;
    Ok(SubjectPrediction {
        subject_id: first.subject_id.clone(),
        voted_label: u8::from(mean > 0.5),
        mean_prob: mean,
        window_probs: means,
    })
}

// ── ROC / AUC ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AucResult {
    pub auc: f64,
    pub roc: Vec<RocPoint>,
}

/// ROC by descending threshold sweep and AUC as the trapezoid area under
/// it. Tied scores collapse into a single sweep step, which makes the area
/// equal to the tie-aware pair-count (Mann-Whitney) formulation.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<AucResult> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "auc: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes, got {pos} positive / {neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));

    let mut roc = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        // Consume the whole tie group at this threshold.
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = *roc.last().unwrap();
        let point = RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold,
        };
        area += (point.fpr - prev.fpr) * (point.tpr + prev.tpr) / 2.0;
        roc.push(point);
    }
    Ok(AucResult { auc: area, roc })
}

// ── Confusion metrics ──────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    /// Recall on label 1; absent when there are no positives.
    pub sensitivity: Option<f64>,
    /// Recall on label 0; absent when there are no negatives.
    pub specificity: Option<f64>,
}

pub fn confusion_metrics(pred: &[u8], truth: &[u8]) -> Result<Confusion> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "confusion: {} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Param("confusion metrics over an empty set".into()));
    }
    if pred.iter().chain(truth).any(|&v| v > 1) {
        return Err(Error::Param("labels must be binary".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 0) => tn += 1,
            _ => fn_ += 1,
        }
    }
    Ok(Confusion {
        tp,
        fp,
        tn,
        fn_,
        accuracy: (tp + tn) as f64 / pred.len() as f64,
        sensitivity: (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64),
        specificity: (tn + fp > 0).then(|| tn as f64 / (tn + fp) as f64),
    })
}

// ── Reconstruction MSE on held-out data ────────────────────────────────

/// Mean reconstruction MSE over every sliding window of every test subject,
/// masking with the given strategy and per-window ratio draws. With
/// `masked_only` the error is averaged over masked cells only.
#[allow(clippy::too_many_arguments)]
pub fn recon_mse_eval(
    model: &Model,
    test: &[LoadedSubject],
    strategy: MaskStrategy,
    ratio_set: &[f64],
    seed: u64,
    window: usize,
    stride: usize,
    masked_only: bool,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Data("reconstruction evaluation over an empty test set".into()));
    }
    let root = Rng::new(seed);
    let mut total = 0.0;
    let mut count = 0usize;
    for subject in test {
        let mut rng = root.derive_str(&subject.record.subject_id);
        for w in sliding_windows(&subject.series, window, stride)? {
            let ratio = sample_ratio(&mut rng, ratio_set)?;
            let spec = make_mask(strategy, window, w.cols(), ratio, &mut rng)?;
            let masked = apply_mask(&w, &spec)?;
            let pred = reconstruct_window(model, &masked)?;
            let restriction = masked_only.then_some(&spec);
            total += crate::training::mse_value(&pred, &w, restriction)?;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

// ── Paired t-test ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TtestResult {
    pub t: f64,
    pub p: f64,
    pub dof: usize,
    /// Zero-variance, nonzero-mean differences: p forced to 0.
    pub degenerate: bool,
}

/// Paired two-tailed t-test on equal-length samples: t = mean(d)/(sd(d)/√n)
/// over d = a−b, p from the Student-t CDF via the regularized incomplete
/// beta function.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TtestResult> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("paired_ttest: {} vs {} values", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Param(format!("paired_ttest needs n >= 2, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let dof = n - 1;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TtestResult { t: 0.0, p: 1.0, dof, degenerate: false }
        } else {
            TtestResult { t: f64::INFINITY.copysign(mean), p: 0.0, dof, degenerate: true }
        });
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let x = dof as f64 / (dof as f64 + t * t);
    let p = special::inc_beta(dof as f64 / 2.0, 0.5, x);
    Ok(TtestResult { t, p, dof, degenerate: false })
}

/// Log-gamma and the regularized incomplete beta function, the minimal
/// special-function kit behind the t-test p-value.
mod special {
    /// Lanczos approximation (g = 7, n = 9), |error| < 1e-13 for x > 0.
    pub fn ln_gamma(x: f64) -> f64 {
        const COEFFS: [f64; 8] = [
            676.5203681218851,
            -1259.1392167224028,
            771.32342877765313,
            -176.61502916214059,
            12.507343278686905,
            -0.13857109526572012,
            9.9843695780195716e-6,
            1.5056327351493116e-7,
        ];
        if x < 0.5 {
            // Reflection formula.
            return std::f64::consts::PI.ln()
                - (std::f64::consts::PI * x).sin().ln()
                - ln_gamma(1.0 - x);
        }
        let x = x - 1.0;
        let mut acc = 0.99999999999980993;
        for (i, c) in COEFFS.iter().enumerate() {
            acc += c / (x + i as f64 + 1.0);
        }
        let t = x + 7.5;
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
    }

    /// Continued fraction for the incomplete beta (modified Lentz).
    fn betacf(a: f64, b: f64, x: f64) -> f64 {
        const MAX_ITER: usize = 300;
        const EPS: f64 = 3e-16;
        const FPMIN: f64 = 1e-300;
        let qab = a + b;
        let qap = a + 1.0;
        let qam = a - 1.0;
        let mut c = 1.0;
        let mut d = 1.0 - qab * x / qap;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        d = 1.0 / d;
        let mut h = d;
        for m in 1..=MAX_ITER {
            let m = m as f64;
            let m2 = 2.0 * m;
            let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
            d = 1.0 + aa * d;
            if d.abs() < FPMIN {
                d = FPMIN;
            }
            c = 1.0 + aa / c;
            if c.abs() < FPMIN {
                c = FPMIN;
            }
            d = 1.0 / d;
            h *= d * c;
            let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
            d = 1.0 + aa * d;
            if d.abs() < FPMIN {
                d = FPMIN;
            }
            c = 1.0 + aa / c;
            if c.abs() < FPMIN {
                c = FPMIN;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < EPS {
                break;
            }
        }
        h
    }

    /// Regularized incomplete beta I_x(a, b).
    pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let bt = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
            + a * x.ln()
            + b * (1.0 - x).ln())
        .exp();
        if x < (a + 1.0) / (a + b + 2.0) {
            bt * betacf(a, b, x) / a
        } else {
            1.0 - bt * betacf(b, a, 1.0 - x) / b
        }
    }

}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn record(id: &str, label: u8) -> SubjectRecord {
        SubjectRecord {
            subject_id: id.to_string(),
            label,
            site: "synth".into(),
            series_path: PathBuf::from(format!("{id}.csv")),
        }
    }

    fn cohort(n_pos: usize, n_neg: usize) -> Vec<SubjectRecord> {
        let mut v = Vec::new();
        for i in 0..n_pos {
            v.push(record(&format!("p{i}"), 1));
        }
        for i in 0..n_neg {
            v.push(record(&format!("n{i}"), 0));
        }
        v
    }

    fn assert_plan_invariants(plan: &FoldPlan, subjects: &[SubjectRecord]) {
        let k = plan.k;
        let by_id: std::collections::HashMap<&str, u8> =
            subjects.iter().map(|s| (s.subject_id.as_str(), s.label)).collect();
        // Outer tests partition the subject set.
        let mut seen = HashSet::new();
        for fold in &plan.outer {
            for id in &fold.test {
                assert!(seen.insert(id.clone()), "{id} in two outer test folds");
            }
        }
        assert_eq!(seen.len(), subjects.len());
        // Stratification within ±1 per class.
        for class in [0u8, 1u8] {
            let total = subjects.iter().filter(|s| s.label == class).count();
            for fold in &plan.outer {
                let c = fold.test.iter().filter(|id| by_id[id.as_str()] == class).count();
                let lo = total / k;
                let hi = total.div_ceil(k);
                assert!(c >= lo && c <= hi, "class {class}: {c} not in [{lo}, {hi}]");
            }
        }
        // Inner splits: val/train disjoint, cover outer-train, avoid test.
        for fold in &plan.outer {
            let test_set: HashSet<&str> = fold.test.iter().map(String::as_str).collect();
            for split in &fold.inner {
                let val: HashSet<&str> = split.val.iter().map(String::as_str).collect();
                for id in &split.train {
                    assert!(!val.contains(id.as_str()), "{id} in both inner train and val");
                    assert!(!test_set.contains(id.as_str()));
                }
                for id in &split.val {
                    assert!(!test_set.contains(id.as_str()));
                }
                assert_eq!(split.train.len() + split.val.len(), subjects.len() - fold.test.len());
            }
        }
    }

    #[test]
    fn small_balanced_plan() {
        let subjects = cohort(5, 5);
        let plan = make_nested_folds(&subjects, 5, 3).unwrap();
        for fold in &plan.outer {
            assert_eq!(fold.test.len(), 2);
        }
        assert_plan_invariants(&plan, &subjects);
    }

    #[test]
    fn abide_sized_plan_stratification() {
        let subjects = cohort(409, 477);
        let plan = make_nested_folds(&subjects, 5, 7).unwrap();
        assert_plan_invariants(&plan, &subjects);
        // 409/5 = 81.8 and 477/5 = 95.4; each outer fold within ±1.
        let by_id: std::collections::HashMap<&str, u8> =
            subjects.iter().map(|s| (s.subject_id.as_str(), s.label)).collect();
        for fold in &plan.outer {
            let pos = fold.test.iter().filter(|id| by_id[id.as_str()] == 1).count();
            let neg = fold.test.len() - pos;
            assert!(pos == 81 || pos == 82, "pos {pos}");
            assert!(neg == 95 || neg == 96, "neg {neg}");
        }
    }

    #[test]
    fn too_few_subjects_of_a_class() {
        let subjects = cohort(4, 10);
        assert!(make_nested_folds(&subjects, 5, 1).is_err());
    }

    #[test]
    fn plan_is_seed_deterministic() {
        let subjects = cohort(20, 20);
        assert_eq!(make_nested_folds(&subjects, 5, 9).unwrap(), make_nested_folds(&subjects, 5, 9).unwrap());
        assert_ne!(make_nested_folds(&subjects, 5, 9).unwrap(), make_nested_folds(&subjects, 5, 10).unwrap());
    }

    #[test]
    fn subsample_identity_and_counts() {
        let subjects = cohort(50, 50);
        let all = subsample_training(&subjects, 1.0, 4).unwrap();
        assert_eq!(all, subjects);
        let fifth = subsample_training(&subjects, 0.2, 4).unwrap();
        assert_eq!(fifth.iter().filter(|s| s.label == 1).count(), 10);
        assert_eq!(fifth.iter().filter(|s| s.label == 0).count(), 10);
    }

    #[test]
    fn subsample_nesting_across_fractions() {
        let subjects = cohort(23, 31);
        let seed = 11;
        let mut prev: Option<HashSet<String>> = None;
        for fraction in [0.2, 0.4, 0.6, 0.8, 1.0] {
            let ids: HashSet<String> = subsample_training(&subjects, fraction, seed)
                .unwrap()
                .into_iter()
                .map(|s| s.subject_id)
                .collect();
            if let Some(p) = &prev {
                assert!(p.is_subset(&ids), "fraction {fraction} not nested");
            }
            prev = Some(ids);
        }
    }

    #[test]
    fn subsample_rejects_empty_class() {
        let subjects = cohort(1, 30);
        // round(0.2 * 1) = 0 positives.
        assert!(subsample_training(&subjects, 0.2, 1).is_err());
        assert!(subsample_training(&subjects, 0.0, 1).is_err());
        assert!(subsample_training(&subjects, 1.5, 1).is_err());
    }

    #[test]
    fn vote_rules() {
        assert_eq!(vote(&[0.9, 0.8, 0.2], 0.6333), 1);
        // Two windows, tie 1-1, mean exactly 0.5 -> label 0.
        assert_eq!(vote(&[0.9, 0.1], 0.5), 0);
        assert_eq!(vote(&[0.9, 0.3], 0.6), u8::from(0.6 > 0.5));
        assert_eq!(vote(&[0.4], 0.4), 0);
        assert_eq!(vote(&[0.6], 0.6), 1);
        // Permutation invariance.
        assert_eq!(vote(&[0.2, 0.9, 0.8], 0.6333), 1);
    }

    #[test]
    fn ensemble_rules() {
        let probe = |means: &[f64]| {
            let preds: Vec<SubjectPrediction> = means
                .iter()
                .map(|&m| SubjectPrediction {
                    subject_id: "s".into(),
                    window_probs: vec![m],
                    voted_label: u8::from(m > 0.5),
                    mean_prob: m,
                })
                .collect();
            ensemble_predictions(&preds).unwrap()
        };
        let e = probe(&[0.2, 0.4, 0.6, 0.8, 1.0]);
        assert!((e.mean_prob - 0.6).abs() < 1e-12);
        assert_eq!(e.voted_label, 1);
        let e = probe(&[0.3, 0.3, 0.3]);
        assert!((e.mean_prob - 0.3).abs() < 1e-12);
        assert_eq!(e.voted_label, 0);
        let e = probe(&[0.7]);
        assert!((e.mean_prob - 0.7).abs() < 1e-12);

        // Ensemble mean stays inside the member range.
        let e = probe(&[0.1, 0.9, 0.5]);
        assert!(e.mean_prob >= 0.1 && e.mean_prob <= 0.9);

        let mixed = vec![
            SubjectPrediction { subject_id: "a".into(), window_probs: vec![], voted_label: 0, mean_prob: 0.1 },
            SubjectPrediction { subject_id: "b".into(), window_probs: vec![], voted_label: 0, mean_prob: 0.2 },
        ];
        assert!(ensemble_predictions(&mixed).is_err());
    }

    fn brute_force_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] != 1 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] != 0 {
                    continue;
                }
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_worked_example_and_edges() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [0u8, 0, 1, 1];
        let r = auc(&scores, &labels).unwrap();
        assert!((r.auc - 0.75).abs() < 1e-12);
        assert!((brute_force_auc(&scores, &labels) - 0.75).abs() < 1e-12);

        // Perfect separation.
        let r = auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_eq!(r.auc, 1.0);
        // All ties.
        let r = auc(&[0.4; 6], &[0, 1, 0, 1, 0, 1]).unwrap();
        assert!((r.auc - 0.5).abs() < 1e-12);
        // Single class undefined.
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn auc_matches_pair_count_on_random_instances() {
        let mut rng = Rng::new(505);
        for case in 0..200 {
            let n = 5 + rng.gen_range(40);
            let quantize = case % 3 == 0; // force ties in a third of cases
            let scores: Vec<f64> = (0..n)
                .map(|_| {
                    let s = rng.next_f64();
                    if quantize { (s * 8.0).round() / 8.0 } else { s }
                })
                .collect();
            let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.bernoulli(0.5))).collect();
            labels[0] = 1;
            labels[1] = 0;
            let r = auc(&scores, &labels).unwrap();
            let oracle = brute_force_auc(&scores, &labels);
            assert!(
                (r.auc - oracle).abs() < 1e-12,
                "case {case}: trapezoid {} vs pairs {oracle}",
                r.auc
            );
        }
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let mut rng = Rng::new(17);
        let scores: Vec<f64> = (0..30).map(|_| rng.next_f64()).collect();
        let labels: Vec<u8> = (0..30).map(|i| u8::from(i % 3 == 0)).collect();
        let base = auc(&scores, &labels).unwrap().auc;
        let squashed: Vec<f64> = scores.iter().map(|&s| 1.0 / (1.0 + (-(4.0 * s - 1.0)).exp())).collect();
        assert!((auc(&squashed, &labels).unwrap().auc - base).abs() < 1e-12);
    }

    #[test]
    fn roc_points_monotone() {
        let mut rng = Rng::new(23);
        let scores: Vec<f64> = (0..50).map(|_| (rng.next_f64() * 4.0).round() / 4.0).collect();
        let labels: Vec<u8> = (0..50).map(|_| u8::from(rng.bernoulli(0.4))).collect();
        let r = auc(&scores, &labels).unwrap();
        for w in r.roc.windows(2) {
            assert!(w[1].fpr >= w[0].fpr);
            assert!(w[1].tpr >= w[0].tpr);
            assert!(w[1].threshold <= w[0].threshold);
        }
        let last = r.roc.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    }

    #[test]
    fn confusion_examples() {
        let c = confusion_metrics(&[1, 0, 1, 0], &[1, 0, 1, 0]).unwrap();
        assert_eq!((c.accuracy, c.sensitivity.unwrap(), c.specificity.unwrap()), (1.0, 1.0, 1.0));

        let c = confusion_metrics(&[0, 0, 0, 0], &[1, 1, 0, 0]).unwrap();
        assert_eq!(c.accuracy, 0.5);
        assert_eq!(c.sensitivity.unwrap(), 0.0);
        assert_eq!(c.specificity.unwrap(), 1.0);

        let c = confusion_metrics(&[1, 0, 1, 0], &[1, 1, 0, 0]).unwrap();
        assert_eq!(c.accuracy, 0.5);
        assert_eq!(c.sensitivity.unwrap(), 0.5);
        assert_eq!(c.specificity.unwrap(), 0.5);

        // No positives in truth: sensitivity absent, not zero.
        let c = confusion_metrics(&[0, 1], &[0, 0]).unwrap();
        assert!(c.sensitivity.is_none());
        assert_eq!(c.specificity.unwrap(), 0.5);
    }

    #[test]
    fn ttest_trivial_and_worked_cases() {
        let r = paired_ttest(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
        assert!(!r.degenerate);

        // d = (1,2,3,4,5): t = 3/(sqrt(2.5)/sqrt(5)) ≈ 4.2426, p ≈ 0.0132.
        let a = [2.0, 4.0, 6.0, 8.0, 10.0];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = paired_ttest(&a, &b).unwrap();
        assert!((r.t - 3.0 / (2.5f64.sqrt() / 5f64.sqrt())).abs() < 1e-12);
        assert!((r.p - 0.013_235_599_563_682_695).abs() < 1e-9, "p = {}", r.p);

        assert!(paired_ttest(&[1.0], &[2.0]).is_err());

        // Zero-variance nonzero-mean differences.
        let r = paired_ttest(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p, 0.0);
        assert!(r.t.is_infinite() && r.t > 0.0);
    }
}
