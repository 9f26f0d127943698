//! End-to-end experiment orchestration: detection, sampling, training, and
//! evaluation wired together deterministically, plus breakdown reports.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate_triplets, MetricsReport};
use crate::graph::{CrossGraphDataset, UserType};
use crate::mapeq::{detect_communities, CommunityPartition};
use crate::model::{AblationFlags, PccdModel, Side};
use crate::train::{
    sample_triplet_split, sample_triplets, train, user_views, TrainConfig, TrainReport,
    UserTriplet,
};

/// Stream separators for the orchestration-level RNG consumers.
const SEED_DETECT: u64 = 0xC0FF_EE00_0000_0001;
const SEED_VIEW: u64 = 0xC0FF_EE00_0000_0002;
const SEED_SAMPLE: u64 = 0xC0FF_EE00_0000_0003;
const SEED_TYPE: u64 = 0xC0FF_EE00_0000_0004;

/// One full train-and-evaluate run: which view of the sparse graph to use,
/// how many triplets to sample, and how to train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub cfg: TrainConfig,
    pub ablation: AblationFlags,
    /// Fraction of sparse-graph links kept for the training view; 1.0 uses
    /// the sparse graph unchanged.
    pub delta: f64,
    /// Training triplets sampled per label.
    pub train_per_label: usize,
    /// Held-out test triplets sampled per label (disjoint from training).
    pub test_per_label: usize,
    /// Orchestration seed (detection, view sampling, triplet sampling).
    pub seed: u64,
}

impl Experiment {
    /// An experiment with the given training config, full sparse view, and
    /// the config's seed for orchestration.
    pub fn new(cfg: TrainConfig, train_per_label: usize, test_per_label: usize) -> Experiment {
        let seed = cfg.seed;
        Experiment {
            cfg,
            ablation: AblationFlags::none(),
            delta: 1.0,
            train_per_label,
            test_per_label,
            seed,
        }
    }
}

/// Everything a run produces: the trained model, its loss curves, held-out
/// metrics, and the exact inputs needed to reproduce the evaluation.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub model: PccdModel,
    pub train_report: TrainReport,
    pub metrics: MetricsReport,
    /// Community structure detected on the main graph (also stored in the
    /// model).
    pub partition: CommunityPartition,
    /// The dataset actually trained on: full main graph plus the
    /// delta-sparsified sparse view.
    pub view: CrossGraphDataset,
    pub train_triplets: Vec<UserTriplet>,
    pub test_triplets: Vec<UserTriplet>,
}

/// Rebuilds the deterministic inputs of an experiment without training:
/// the delta-sparsified view of the dataset and the disjoint train/test
/// triplet sets. Given the same dataset, truth, and parameters this always
/// returns the same values, which is how a stored checkpoint's held-out
/// test set is recovered later.
pub fn experiment_inputs(
    dataset: &CrossGraphDataset,
    truth: &BTreeMap<String, usize>,
    delta: f64,
    train_per_label: usize,
    test_per_label: usize,
    seed: u64,
) -> Result<(CrossGraphDataset, Vec<UserTriplet>, Vec<UserTriplet>)> {
    if train_per_label == 0 || test_per_label == 0 {
        return Err(Error::InvalidInput(
            "experiments need at least one train and one test triplet per label".into(),
        ));
    }
    let view = dataset.with_sparse_view(delta, seed ^ SEED_VIEW)?;
    let mutual: Vec<String> = dataset.mutual_users().iter().cloned().collect();
    let (train_triplets, test_triplets) =
        sample_triplet_split(&mutual, truth, train_per_label, test_per_label, seed ^ SEED_SAMPLE)?;
    Ok((view, train_triplets, test_triplets))
}

/// Runs one experiment: detect communities on the main graph, sparsify the
/// sparse graph to `delta`, sample disjoint train/test triplets from the
/// mutual users, train, and evaluate on the held-out triplets.
///
/// The detected partition, the triplet split, and the test set depend only
/// on the dataset, truth, and seed — never on `delta` or the ablation — so
/// sweeps and ablation grids compare models on identical footing.
pub fn run_experiment(
    dataset: &CrossGraphDataset,
    truth: &BTreeMap<String, usize>,
    exp: &Experiment,
) -> Result<ExperimentResult> {
    let partition = detect_communities(&dataset.main, exp.seed ^ SEED_DETECT)?;
    let (view, train_triplets, test_triplets) = experiment_inputs(
        dataset,
        truth,
        exp.delta,
        exp.train_per_label,
        exp.test_per_label,
        exp.seed,
    )?;
    let (model, train_report) = train(&view, &train_triplets, &partition, &exp.cfg, exp.ablation)?;
    let metrics = evaluate_triplets(&model, &view, &test_triplets)?;
    Ok(ExperimentResult {
        model,
        train_report,
        metrics,
        partition,
        view,
        train_triplets,
        test_triplets,
    })
}

/// Trains and evaluates once per sparsity level, holding the partition,
/// split, and test triplets fixed so only the sparse view varies.
pub fn sparsity_sweep(
    dataset: &CrossGraphDataset,
    truth: &BTreeMap<String, usize>,
    deltas: &[f64],
    base: &Experiment,
) -> Result<Vec<(f64, MetricsReport)>> {
    if deltas.is_empty() {
        return Err(Error::InvalidInput(
            "sparsity sweep needs at least one delta".into(),
        ));
    }
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let exp = Experiment {
            delta,
            ..base.clone()
        };
        let result = run_experiment(dataset, truth, &exp)?;
        rows.push((delta, result.metrics));
    }
    Ok(rows)
}

/// Writes sweep rows as CSV: `delta,acc,f1,mcc,mrr,ndcg,map`.
pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[(f64, MetricsReport)]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("delta,acc,f1,mcc,mrr,ndcg,map\n");
    for (delta, m) in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            delta, m.acc, m.f1_macro, m.mcc, m.mrr, m.ndcg, m.map
        ));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Evaluates the model on balanced triplet sets drawn separately from each
/// user type (mutual, main-only, sparse-only), in that order. Main-only and
/// sparse-only triplets exercise the cold-start path on the graph the users
/// are missing from.
pub fn user_type_eval(
    model: &PccdModel,
    dataset: &CrossGraphDataset,
    truth: &BTreeMap<String, usize>,
    count_per_label: usize,
    seed: u64,
) -> Result<Vec<(UserType, MetricsReport)>> {
    let mut rows = Vec::with_capacity(3);
    for (idx, ty) in [UserType::Mutual, UserType::MainOnly, UserType::SparseOnly]
        .into_iter()
        .enumerate()
    {
        let users = dataset.users_of_type(ty);
        let triplets = sample_triplets(
            &users,
            truth,
            count_per_label,
            seed ^ SEED_TYPE ^ (idx as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        )
        .map_err(|e| match e {
            Error::Infeasible(msg) => {
                Error::Infeasible(format!("user type {}: {msg}", ty.short()))
            }
            other => other,
        })?;
        rows.push((ty, evaluate_triplets(model, dataset, &triplets)?));
    }
    Ok(rows)
}

/// Writes per-user-type reports as CSV:
/// `user_type,acc,f1,mcc,mrr,ndcg,map,n_triplets`.
pub fn write_user_type_csv(
    path: impl AsRef<Path>,
    rows: &[(UserType, MetricsReport)],
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("user_type,acc,f1,mcc,mrr,ndcg,map,n_triplets\n");
    for (ty, m) in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            ty.short(),
            m.acc,
            m.f1_macro,
            m.mcc,
            m.mrr,
            m.ndcg,
            m.map,
            m.n_triplets
        ));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Per-user community affiliation rows on one graph side: `K` scores in
/// `(0, 1)` per user. Errors on users absent from both graphs.
pub fn affiliation_dump(
    model: &PccdModel,
    dataset: &CrossGraphDataset,
    users: &[String],
    side: Side,
) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rows = Vec::with_capacity(users.len());
    for id in users {
        if dataset.user_type(id).is_none() {
            return Err(Error::InvalidInput(format!("unknown user '{id}'")));
        }
        let (main_view, sparse_view) = user_views(dataset, &model.partition, id);
        let view = match side {
            Side::Main => main_view,
            Side::Sparse => sparse_view,
        };
        rows.push((id.clone(), model.eval_affiliation(side, &view)));
    }
    Ok(rows)
}

/// Writes affiliation rows as CSV with header `user,c0,...,c{K-1}`.
pub fn write_affiliations_csv(
    path: impl AsRef<Path>,
    rows: &[(String, Vec<f64>)],
) -> Result<()> {
    let path = path.as_ref();
    let k = rows.first().map_or(0, |(_, v)| v.len());
    let mut out = String::from("user");
    for c in 0..k {
        out.push_str(&format!(",c{c}"));
    }
    out.push('\n');
    for (id, scores) in rows {
        out.push_str(id);
        for s in scores {
            out.push_str(&format!(",{s}"));
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}
