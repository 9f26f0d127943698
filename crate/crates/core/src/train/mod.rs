//! Training: configuration, synthetic data planting, triplet sampling,
//! masked mini-batch optimization with Adam, and loss-curve reporting.

mod adam;
mod synth;
mod triplet;

pub use adam::AdamState;
pub use synth::plant_synthetic_dataset;
pub use triplet::{
    apply_mask, label_triplet, sample_triplet_split, sample_triplets, sample_triplets_grouped,
    UserTriplet,
};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CrossGraphDataset, UserType};
use crate::mapeq::{detect_communities, CommunityPartition};
use crate::model::{
    cross_entropy, AblationFlags, MemberView, ModelConfig, PccdModel, TripletBatch,
};

/// Stream separators so the init, split, shuffle, and mask RNGs never share
/// a sequence even though they derive from one user-facing seed.
const SEED_INIT: u64 = 0x9E37_79B9_0000_0001;
const SEED_SPLIT: u64 = 0x9E37_79B9_0000_0002;
const SEED_SHUFFLE: u64 = 0x9E37_79B9_0000_0003;
const SEED_MASK: u64 = 0x9E37_79B9_0000_0004;

/// Hyperparameters for model construction and the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Triplets per mini-batch.
    pub batch_size: usize,
    /// Adam learning rate.
    pub learning_rate: f64,
    /// Training epochs over the triplet set.
    pub epochs: usize,
    /// Community-memory rows per graph side.
    pub k: usize,
    /// Weight of the community-memory constraint terms.
    pub alpha: f64,
    /// Per-object drop probability for main-side masked training.
    pub rho: f64,
    /// Adam first-moment decay.
    pub beta1: f64,
    /// Adam second-moment decay.
    pub beta2: f64,
    /// Adam denominator stabilizer.
    pub adam_eps: f64,
    /// Master seed for initialization, splits, shuffling, and masking.
    pub seed: u64,
    /// Object embedding width.
    pub d_e: usize,
    /// Neighbor embedding width.
    pub d_h: usize,
    /// Attention projection width.
    pub d_a: usize,
    /// Per-graph correlation width.
    pub d_r: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 200,
            learning_rate: 0.01,
            epochs: 50,
            k: 8,
            alpha: 0.1,
            rho: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            d_e: 32,
            d_h: 32,
            d_a: 16,
            d_r: 16,
        }
    }
}

impl TrainConfig {
    /// Checks ranges: positive sizes, `rho` in `[0, 1]`, sane Adam betas.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be at least 1".into()));
        }
        for (name, v) in [
            ("k", self.k),
            ("d_e", self.d_e),
            ("d_h", self.d_h),
            ("d_a", self.d_a),
            ("d_r", self.d_r),
        ] {
            if v == 0 {
                return Err(Error::InvalidInput(format!("{name} must be at least 1")));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "learning_rate must be a finite non-negative number, got {}",
                self.learning_rate
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "alpha must be a finite non-negative number, got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidInput(format!(
                "rho must lie in [0, 1], got {}",
                self.rho
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidInput(format!(
                    "{name} must lie in [0, 1), got {b}"
                )));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::InvalidInput("adam_eps must be positive".into()));
        }
        Ok(())
    }

    /// Reads a config from a `key = value` file (`#` comments) or a JSON
    /// object, starting from defaults. Unknown keys are rejected.
    pub fn from_file(path: impl AsRef<Path>) -> Result<TrainConfig> {
        let cfg: TrainConfig = read_config(path.as_ref())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Model shape derived from these hyperparameters for a dataset with the
    /// given raw-community width and object vocabulary sizes.
    pub fn model_config(&self, c_raw: usize, n_main: usize, n_sparse: usize) -> ModelConfig {
        ModelConfig {
            k: self.k,
            d_e: self.d_e,
            d_h: self.d_h,
            d_a: self.d_a,
            d_r: self.d_r,
            c_raw,
            alpha: self.alpha,
            bn_epsilon: 1e-5,
            bn_momentum: 0.9,
            n_objects_main: n_main,
            n_objects_sparse: n_sparse,
        }
    }
}

/// Shape and link probabilities of a planted-community synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    /// Number of planted communities (users and objects round-robin).
    pub num_communities: usize,
    /// Users present in both graphs.
    pub mutual_users: usize,
    /// Users present only in the main graph.
    pub main_only_users: usize,
    /// Users present only in the sparse graph.
    pub sparse_only_users: usize,
    /// Main-graph objects per community.
    pub main_objects_per_community: usize,
    /// Sparse-graph objects per community.
    pub sparse_objects_per_community: usize,
    /// Link probability inside a user's home community.
    pub p_in: f64,
    /// Link probability across communities.
    pub p_out: f64,
    /// Generator seed.
    pub seed: u64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            num_communities: 4,
            mutual_users: 120,
            main_only_users: 40,
            sparse_only_users: 40,
            main_objects_per_community: 15,
            sparse_objects_per_community: 8,
            p_in: 0.3,
            p_out: 0.05,
            seed: 1,
        }
    }
}

impl PlantConfig {
    /// Checks `0 <= p_out <= p_in <= 1` (equality gives the null model) and
    /// that at least one community is requested.
    pub fn validate(&self) -> Result<()> {
        if self.num_communities == 0 {
            return Err(Error::InvalidInput(
                "num_communities must be at least 1".into(),
            ));
        }
        let probs_ok = (0.0..=1.0).contains(&self.p_out)
            && (0.0..=1.0).contains(&self.p_in)
            && self.p_out <= self.p_in;
        if !probs_ok {
            return Err(Error::InvalidInput(format!(
                "link probabilities must satisfy 0 <= p_out <= p_in <= 1, \
                 got p_in = {}, p_out = {}",
                self.p_in, self.p_out
            )));
        }
        Ok(())
    }

    /// Reads a config from a `key = value` file (`#` comments) or a JSON
    /// object, starting from defaults. Unknown keys are rejected.
    pub fn from_file(path: impl AsRef<Path>) -> Result<PlantConfig> {
        let cfg: PlantConfig = read_config(path.as_ref())?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses a config file into `T`: JSON when the first non-blank byte is
/// `{`, otherwise `key = value` lines with `#` comments, converted to a
/// JSON object and deserialized so both formats share one schema.
fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        return serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())));
    }
    let mut object = serde_json::Map::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Parse(format!(
                "{}: line {}: expected 'key = value', got '{line}'",
                path.display(),
                lineno + 1
            ))
        })?;
        let key = key.trim();
        let value = value.trim();
        // Integers must stay integers so unsigned fields deserialize.
        let number: serde_json::Value = if let Ok(u) = value.parse::<u64>() {
            serde_json::Value::Number(u.into())
        } else if let Ok(i) = value.parse::<i64>() {
            serde_json::Value::Number(i.into())
        } else {
            value
                .parse::<f64>()
                .ok()
                .and_then(|v| serde_json::Number::from_f64(v).map(serde_json::Value::Number))
                .ok_or_else(|| {
                    Error::Parse(format!(
                        "{}: line {}: value for '{key}' is not a number: '{value}'",
                        path.display(),
                        lineno + 1
                    ))
                })?
        };
        object.insert(key.to_string(), number);
    }
    serde_json::from_value(serde_json::Value::Object(object))
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Main- and sparse-graph input views of one user: multi-hot neighborhoods
/// plus the raw community id on the main side.
pub fn user_views(
    dataset: &CrossGraphDataset,
    partition: &CommunityPartition,
    user_id: &str,
) -> (MemberView, MemberView) {
    let main = MemberView {
        neigh: dataset.main.multi_hot(user_id).to_vec(),
        comm: partition.community_of_user(user_id),
    };
    let sparse = MemberView {
        neigh: dataset.sparse.multi_hot(user_id).to_vec(),
        comm: None,
    };
    (main, sparse)
}

/// Pseudo ground truth for triplet labeling when no planted truth exists:
/// communities detected on the dataset's (training-view) sparse graph.
pub fn pseudo_truth_from_sparse_view(
    dataset: &CrossGraphDataset,
    seed: u64,
) -> Result<BTreeMap<String, usize>> {
    let partition = detect_communities(&dataset.sparse, seed)?;
    Ok(partition.user_assignments().clone())
}

/// Per-epoch loss traces from a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean total loss over training batches, one entry per epoch.
    pub train_loss: Vec<f64>,
    /// Mean closeness cross-entropy on the held-out 10% split, one entry
    /// per epoch; empty when the split holds no triplets.
    pub val_loss: Vec<f64>,
}

/// Writes a loss curve as CSV with header `epoch,mean_loss` (1-based epochs).
pub fn write_loss_curve(path: impl AsRef<Path>, losses: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,mean_loss\n");
    for (i, loss) in losses.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, loss));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn view_cache<'a>(
    dataset: &CrossGraphDataset,
    partition: &CommunityPartition,
    triplets: impl Iterator<Item = &'a UserTriplet>,
) -> BTreeMap<String, (MemberView, MemberView)> {
    let mut cache = BTreeMap::new();
    for t in triplets {
        for id in [&t.i, &t.j, &t.k] {
            cache
                .entry(id.clone())
                .or_insert_with(|| user_views(dataset, partition, id));
        }
    }
    cache
}

/// Trains a model on user triplets drawn from the mutual users.
///
/// The raw partition must come from community detection on the dataset's
/// main graph; it supplies the raw community inputs and the attention
/// community weights. Each batch runs forward (with fresh main-side
/// masking), backward, an Adam step, and then the community-memory and
/// batch-norm running updates from that batch's forward activations.
/// Deterministic given the config seed.
pub fn train(
    dataset: &CrossGraphDataset,
    triplets: &[UserTriplet],
    raw_partition: &CommunityPartition,
    cfg: &TrainConfig,
    ablation: AblationFlags,
) -> Result<(PccdModel, TrainReport)> {
    cfg.validate()?;
    if triplets.is_empty() {
        return Err(Error::InvalidInput(
            "no training triplets provided".into(),
        ));
    }
    for t in triplets {
        for id in [&t.i, &t.j, &t.k] {
            if dataset.user_type(id) != Some(UserType::Mutual) {
                return Err(Error::InvalidInput(format!(
                    "training triplet uses non-mutual user '{id}'"
                )));
            }
        }
    }

    let config = cfg.model_config(
        raw_partition.num_communities(),
        dataset.main.num_objects(),
        dataset.sparse.num_objects(),
    );
    let mut model = PccdModel::new(
        config,
        ablation,
        raw_partition.clone(),
        dataset.main.object_ids(),
        cfg.seed ^ SEED_INIT,
    )?;

    // 90/10 train/validation split of the provided triplets.
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SEED_SPLIT);
    order.shuffle(&mut split_rng);
    let n_val = triplets.len() / 10;
    let val_idx: Vec<usize> = order[..n_val].to_vec();
    let mut train_idx: Vec<usize> = order[n_val..].to_vec();
    if train_idx.is_empty() {
        return Err(Error::InvalidInput(
            "triplet set too small: the 90% training split is empty".into(),
        ));
    }

    let views = view_cache(dataset, raw_partition, triplets.iter());
    let rho_eff = if ablation.no_mt { 0.0 } else { cfg.rho };
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SEED_SHUFFLE);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SEED_MASK);
    let mut adam = AdamState::new(model.params.len());
    let mut report = TrainReport {
        train_loss: Vec::with_capacity(cfg.epochs),
        val_loss: Vec::with_capacity(cfg.epochs),
    };

    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (batch_no, chunk) in train_idx.chunks(cfg.batch_size).enumerate() {
            let mut batch = TripletBatch {
                main: Vec::with_capacity(3 * chunk.len()),
                sparse: Vec::with_capacity(3 * chunk.len()),
                y: Vec::with_capacity(chunk.len()),
            };
            for &ti in chunk {
                let t = &triplets[ti];
                for id in [&t.i, &t.j, &t.k] {
                    let (main, sparse) = &views[id.as_str()];
                    batch.main.push(apply_mask(main, rho_eff, &mut mask_rng));
                    batch.sparse.push(sparse.clone());
                }
                batch.y.push(t.y);
            }
            let context = |e: Error| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!(
                    "epoch {} batch {}: {msg}",
                    epoch + 1,
                    batch_no + 1
                )),
                other => other,
            };
            let trace = model.forward_train(&batch).map_err(context)?;
            let grads = model.backward(&batch, &trace);
            adam.step(
                &mut model.params,
                &grads,
                cfg.learning_rate,
                cfg.beta1,
                cfg.beta2,
                cfg.adam_eps,
            );
            if !model.params.is_finite() {
                return Err(Error::NonFinite(format!(
                    "epoch {} batch {}: parameters diverged after the optimizer step",
                    epoch + 1,
                    batch_no + 1
                )));
            }
            model.commit_batch(&trace);
            loss_sum += trace.total_loss * chunk.len() as f64;
        }
        report.train_loss.push(loss_sum / train_idx.len() as f64);

        if !val_idx.is_empty() {
            let mut ce_sum = 0.0;
            for &ti in &val_idx {
                let t = &triplets[ti];
                let aff = |id: &str| {
                    let (main, sparse) = &views[id];
                    model.affiliation_for(main, sparse)
                };
                let y_hat = model.score_triplet(&aff(&t.i), &aff(&t.j), &aff(&t.k));
                ce_sum += cross_entropy(y_hat, t.y);
            }
            report.val_loss.push(ce_sum / val_idx.len() as f64);
        }
    }

    model.meta.insert("seed".into(), cfg.seed.to_string());
    model.meta.insert("epochs".into(), cfg.epochs.to_string());
    Ok((model, report))
}
