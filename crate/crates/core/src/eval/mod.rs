//! Evaluation: three-way closeness classification metrics, two-candidate
//! retrieval metrics, baselines, and report files.

mod experiment;

pub use experiment::{
    affiliation_dump, experiment_inputs, run_experiment, sparsity_sweep, user_type_eval,
    write_affiliations_csv, write_sweep_csv, write_user_type_csv, Experiment, ExperimentResult,
};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CrossGraphDataset;
use crate::model::{classify_score, Label, PccdModel, UserAffiliation};
use crate::train::{label_triplet, user_views, UserTriplet};

/// Classification summary over three-way closeness labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub acc: f64,
    pub f1_macro: f64,
    /// Multiclass Matthews correlation (Gorodkin form), 0 when undefined.
    pub mcc: f64,
    /// `confusion[t][p]` counts triplets with true label index `t` and
    /// predicted label index `p`.
    pub confusion: [[usize; 3]; 3],
}

/// Rank-based summary of the two-candidate comparisons inside triplets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub mrr: f64,
    pub ndcg: f64,
    pub map: f64,
}

/// Combined evaluation of one labeled triplet set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub f1_macro: f64,
    pub mcc: f64,
    pub mrr: f64,
    pub ndcg: f64,
    pub map: f64,
    pub n_triplets: usize,
    pub confusion: [[usize; 3]; 3],
}

/// Accuracy, macro F1, and multiclass Matthews correlation of predicted
/// labels against true labels.
pub fn classification_metrics(pred: &[Label], truth: &[Label]) -> Result<Classification> {
    if pred.is_empty() {
        return Err(Error::InvalidInput(
            "classification metrics need at least one labeled triplet".into(),
        ));
    }
    if pred.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "got {} predictions for {} true labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut confusion = [[0usize; 3]; 3];
    for (&p, &t) in pred.iter().zip(truth) {
        confusion[t.index()][p.index()] += 1;
    }
    Ok(classification_from_confusion(confusion))
}

fn classification_from_confusion(confusion: [[usize; 3]; 3]) -> Classification {
    let total: usize = confusion.iter().flatten().sum();
    let trace: usize = (0..3).map(|k| confusion[k][k]).sum();
    let acc = trace as f64 / total as f64;

    let mut f1_sum = 0.0;
    for k in 0..3 {
        let tp = confusion[k][k];
        let fp: usize = (0..3).map(|t| confusion[t][k]).sum::<usize>() - tp;
        let fn_: usize = confusion[k].iter().sum::<usize>() - tp;
        let denom = 2 * tp + fp + fn_;
        if denom > 0 {
            f1_sum += 2.0 * tp as f64 / denom as f64;
        }
    }
    let f1_macro = f1_sum / 3.0;

    // Gorodkin multiclass correlation; all sums are exact integer counts.
    let n = total as f64;
    let mut pred_count = [0f64; 3];
    let mut true_count = [0f64; 3];
    for t in 0..3 {
        for p in 0..3 {
            true_count[t] += confusion[t][p] as f64;
            pred_count[p] += confusion[t][p] as f64;
        }
    }
    let cross: f64 = (0..3).map(|k| pred_count[k] * true_count[k]).sum();
    let numerator = n * trace as f64 - cross;
    let pred_sq: f64 = pred_count.iter().map(|c| c * c).sum();
    let true_sq: f64 = true_count.iter().map(|c| c * c).sum();
    // single square root keeps perfect predictions at exactly 1
    let denominator = ((n * n - pred_sq) * (n * n - true_sq)).sqrt();
    let mcc = if denominator == 0.0 {
        0.0
    } else {
        numerator / denominator
    };

    Classification {
        acc,
        f1_macro,
        mcc,
        confusion,
    }
}

/// Per-triplet reciprocal rank, NDCG at cutoff 2, and average precision for
/// the two-candidate ranking `(j, k)` implied by the closeness score.
///
/// Candidate `j` outranks `k` exactly when `y_hat >= 0.5` (ties keep the
/// given candidate order). Relevance is 1 for the community-closer
/// candidate and 0 for the other; under a `similar` truth both are 1.
fn triplet_retrieval(y_hat: f64, truth: Label) -> (f64, f64, f64) {
    let relevant_first = match truth {
        Label::Similar => return (1.0, 1.0, 1.0),
        Label::Closer => y_hat >= 0.5,
        Label::Farther => y_hat < 0.5,
    };
    if relevant_first {
        (1.0, 1.0, 1.0)
    } else {
        // The single relevant candidate sits at rank 2 of 2.
        (0.5, 1.0 / 3f64.log2(), 0.5)
    }
}

/// Mean reciprocal rank, NDCG@2, and mean average precision of the
/// two-candidate rankings induced by the per-triplet closeness scores.
pub fn retrieval_metrics(scores: &[f64], truth: &[Label]) -> Result<Retrieval> {
    if scores.is_empty() {
        return Err(Error::InvalidInput(
            "retrieval metrics need at least one scored triplet".into(),
        ));
    }
    if scores.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "got {} scores for {} true labels",
            scores.len(),
            truth.len()
        )));
    }
    let (mut rr, mut ndcg, mut ap) = (0.0, 0.0, 0.0);
    for (&s, &t) in scores.iter().zip(truth) {
        let (r, n, a) = triplet_retrieval(s, t);
        rr += r;
        ndcg += n;
        ap += a;
    }
    let n = scores.len() as f64;
    Ok(Retrieval {
        mrr: rr / n,
        ndcg: ndcg / n,
        map: ap / n,
    })
}

/// Builds a full report from per-triplet scores and true labels; predicted
/// labels come from thresholding the scores at thirds.
pub fn metrics_report(scores: &[f64], truth: &[Label]) -> Result<MetricsReport> {
    let pred: Vec<Label> = scores.iter().map(|&s| classify_score(s)).collect();
    let class = classification_metrics(&pred, truth)?;
    let retrieval = retrieval_metrics(scores, truth)?;
    Ok(MetricsReport {
        acc: class.acc,
        f1_macro: class.f1_macro,
        mcc: class.mcc,
        mrr: retrieval.mrr,
        ndcg: retrieval.ndcg,
        map: retrieval.map,
        n_triplets: truth.len(),
        confusion: class.confusion,
    })
}

/// Scores every triplet with the trained model (affiliations cached per
/// user) and reports classification plus retrieval metrics.
pub fn evaluate_triplets(
    model: &PccdModel,
    dataset: &CrossGraphDataset,
    triplets: &[UserTriplet],
) -> Result<MetricsReport> {
    if triplets.is_empty() {
        return Err(Error::InvalidInput(
            "evaluation needs at least one triplet".into(),
        ));
    }
    let mut affiliations: BTreeMap<&str, UserAffiliation> = BTreeMap::new();
    for t in triplets {
        for id in [&t.i, &t.j, &t.k] {
            if !affiliations.contains_key(id.as_str()) {
                let (main, sparse) = user_views(dataset, &model.partition, id);
                affiliations.insert(id, model.affiliation_for(&main, &sparse));
            }
        }
    }
    let mut scores = Vec::with_capacity(triplets.len());
    let mut truth = Vec::with_capacity(triplets.len());
    for t in triplets {
        let y_hat = model.score_triplet(
            &affiliations[t.i.as_str()],
            &affiliations[t.j.as_str()],
            &affiliations[t.k.as_str()],
        );
        scores.push(y_hat);
        truth.push(t.label());
    }
    metrics_report(&scores, &truth)
}

/// Labels each triplet from a community assignment and scores the labels
/// against the triplets' own truth. Users missing from the assignment get
/// fresh singleton communities (they look "different" to everyone).
pub fn partition_label_baseline(
    assignments: &BTreeMap<String, usize>,
    triplets: &[UserTriplet],
) -> Result<MetricsReport> {
    if triplets.is_empty() {
        return Err(Error::InvalidInput(
            "evaluation needs at least one triplet".into(),
        ));
    }
    let mut map = assignments.clone();
    let mut next = map.values().max().map_or(0, |m| m + 1);
    for t in triplets {
        for id in [&t.i, &t.j, &t.k] {
            map.entry(id.clone()).or_insert_with(|| {
                let c = next;
                next += 1;
                c
            });
        }
    }
    let mut scores = Vec::with_capacity(triplets.len());
    let mut truth = Vec::with_capacity(triplets.len());
    for t in triplets {
        let labeled = label_triplet(&t.i, &t.j, &t.k, &map)?;
        scores.push(labeled.label().target());
        truth.push(t.label());
    }
    metrics_report(&scores, &truth)
}

/// Assigns every user a uniformly random community and labels the triplets
/// from that partition — the floor any learned model must beat.
pub fn random_baseline(
    users: &[String],
    num_communities: usize,
    triplets: &[UserTriplet],
    seed: u64,
) -> Result<MetricsReport> {
    if num_communities < 2 {
        return Err(Error::InvalidInput(format!(
            "random baseline needs at least 2 communities, got {num_communities}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assignments: BTreeMap<String, usize> = users
        .iter()
        .map(|u| (u.clone(), rng.random_range(0..num_communities)))
        .collect();
    partition_label_baseline(&assignments, triplets)
}

/// Two-sided paired t-test over matched samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub t: f64,
    /// Two-sided p-value from the standard-normal approximation.
    pub p: f64,
}

/// Abramowitz–Stegun 7.1.26 rational approximation of the error function
/// (absolute error below 1.5e-7).
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// Paired t-test of matched samples `a` and `b` (positive `t` means `a`
/// runs higher). The p-value uses the normal approximation, so treat it as
/// indicative for small sample counts.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "paired t-test needs equal-length samples, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidInput(
            "paired t-test needs at least 2 pairs".into(),
        ));
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    let t = if se == 0.0 {
        if mean == 0.0 {
            0.0
        } else {
            mean.signum() * f64::INFINITY
        }
    } else {
        mean / se
    };
    let p = if t.is_infinite() {
        0.0
    } else {
        let phi = 0.5 * (1.0 + erf(t.abs() / std::f64::consts::SQRT_2));
        2.0 * (1.0 - phi)
    };
    Ok(PairedTTest { t, p })
}

/// Writes a report as `metric,value` CSV rows.
pub fn write_metrics_csv(path: impl AsRef<Path>, report: &MetricsReport) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("metric,value\n");
    for (name, value) in [
        ("acc", report.acc),
        ("f1_macro", report.f1_macro),
        ("mcc", report.mcc),
        ("mrr", report.mrr),
        ("ndcg", report.ndcg),
        ("map", report.map),
    ] {
        out.push_str(&format!("{name},{value}\n"));
    }
    out.push_str(&format!("n_triplets,{}\n", report.n_triplets));
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes a report as pretty JSON (lossless, reloadable).
pub fn write_metrics_json(path: impl AsRef<Path>, report: &MetricsReport) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Parse(format!("metrics serialization failed: {e}")))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
