//! The pairwise cross-graph community network.
//!
//! One model instance covers both graphs: each side owns a propagative
//! representation stack (direct transform of the interaction multi-hot,
//! attentive neighborhood aggregation over learned object embeddings, batch
//! normalization), a community memory read through affiliation scores, and a
//! gated memory update. A shared head turns per-side affiliation differences
//! into a pairwise closeness score for user triplets.

pub mod backward;
pub mod forward;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::mapeq::CommunityPartition;

pub use forward::{
    affiliation_scores, classify_score, community_constraint, cross_entropy, total_loss,
    update_memory, Label, MemberView, TripletBatch, UserAffiliation,
};

/// Version tag stored in every checkpoint file.
pub const CHECKPOINT_FORMAT: &str = "pccd-checkpoint-v1";

/// Numeric clamp applied to predicted probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Which bipartite graph a tensor or view belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Main,
    Sparse,
}

/// Static shape and loss hyperparameters of one model instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of communities tracked per graph (memory rows).
    pub k: usize,
    /// Width of the direct-transform representation.
    pub d_e: usize,
    /// Width of the object embeddings aggregated into the propagation term.
    pub d_h: usize,
    /// Width of the attention projection.
    pub d_a: usize,
    /// Width of one side's correlation representation.
    pub d_r: usize,
    /// Community count of the detected partition on the main graph; the main
    /// representation is prefixed with a one-hot of this length.
    pub c_raw: usize,
    /// Weight of the community-separation constraint in the loss.
    pub alpha: f64,
    /// Batch-norm variance floor.
    pub bn_epsilon: f64,
    /// Batch-norm running-statistics momentum.
    pub bn_momentum: f64,
    /// Object vocabulary size of the main graph.
    pub n_objects_main: usize,
    /// Object vocabulary size of the sparse graph.
    pub n_objects_sparse: usize,
}

impl ModelConfig {
    /// Dimension of the main-side user representation.
    pub fn dim_main(&self) -> usize {
        self.c_raw + self.d_e + self.d_h
    }

    /// Dimension of the sparse-side user representation.
    pub fn dim_sparse(&self) -> usize {
        self.d_e + self.d_h
    }

    /// Representation dimension of a side.
    pub fn dim(&self, side: Side) -> usize {
        match side {
            Side::Main => self.dim_main(),
            Side::Sparse => self.dim_sparse(),
        }
    }

    /// Object vocabulary size of a side.
    pub fn n_objects(&self, side: Side) -> usize {
        match side {
            Side::Main => self.n_objects_main,
            Side::Sparse => self.n_objects_sparse,
        }
    }

    /// Checks the structural invariants every instance must satisfy.
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("k", self.k),
            ("d_e", self.d_e),
            ("d_h", self.d_h),
            ("d_a", self.d_a),
            ("d_r", self.d_r),
            ("c_raw", self.c_raw),
        ];
        for (name, value) in dims {
            if value == 0 {
                return Err(Error::InvalidInput(format!(
                    "model dimension {name} must be at least 1"
                )));
            }
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "constraint weight alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.bn_epsilon > 0.0) {
            return Err(Error::InvalidInput(
                "batch-norm epsilon must be positive".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::InvalidInput(
                "batch-norm momentum must lie in [0, 1)".to_string(),
            ));
        }
        if self.n_objects_main == 0 || self.n_objects_sparse == 0 {
            return Err(Error::InvalidInput(
                "object vocabularies must be non-empty".to_string(),
            ));
        }
        Ok(())
    }
}

/// Switches that disable individual model components for ablation runs. All
/// false reproduces the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AblationFlags {
    /// Zero out the raw-community one-hot prefix of the main representation.
    pub no_rcr: bool,
    /// Zero out the direct-transform term on both sides.
    pub no_dtr: bool,
    /// Replace attention with uniform neighborhood averaging on both sides.
    pub no_nf: bool,
    /// Freeze the community-level attention weights at one.
    pub no_cf: bool,
    /// Drop the community-separation constraint from the loss.
    pub no_cc: bool,
    /// Disable training-time neighborhood masking.
    pub no_mt: bool,
}

impl AblationFlags {
    /// The full model: nothing disabled.
    pub fn none() -> Self {
        Self::default()
    }

    /// Effective constraint weight under these flags.
    pub fn effective_alpha(&self, alpha: f64) -> f64 {
        if self.no_cc {
            0.0
        } else {
            alpha
        }
    }
}

/// Trainable tensors of one graph side. Field order is the canonical tensor
/// order used by the optimizer state and by parameter flattening.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideParams {
    /// Direct transform weight, `d_e x n_objects`.
    pub w_e: Mat,
    /// Direct transform bias, `d_e`.
    pub b_e: Vec<f64>,
    /// Object embeddings, `n_objects x d_h` (one row per object).
    pub h: Mat,
    /// Attention projection, `d_a x d_h`.
    pub w_p: Mat,
    /// Attention projection bias, `d_a`.
    pub b_p: Vec<f64>,
    /// Attention readout vector, `d_a`.
    pub u_p: Vec<f64>,
    /// Affiliation readout vector, `dim`.
    pub u_c: Vec<f64>,
    /// Memory-update gate weight, `dim x 2*dim` (input is `[v, d_k]`).
    pub w_s: Mat,
    /// Memory-update gate bias, `dim`.
    pub b_s: Vec<f64>,
    /// Memory-update candidate weight, `dim x dim`.
    pub w_z: Mat,
    /// Memory-update candidate bias, `dim`.
    pub b_z: Vec<f64>,
    /// Correlation projection, `d_r x k`.
    pub w_r: Mat,
    /// Correlation bias, `d_r`.
    pub b_r: Vec<f64>,
    /// Batch-norm scale, `dim`.
    pub bn_scale: Vec<f64>,
    /// Batch-norm shift, `dim`.
    pub bn_shift: Vec<f64>,
}

impl SideParams {
    /// All-zero tensors with the shapes this config and side require.
    pub fn zeros(config: &ModelConfig, side: Side) -> SideParams {
        let dim = config.dim(side);
        let n_obj = config.n_objects(side);
        SideParams {
            w_e: Mat::zeros(config.d_e, n_obj),
            b_e: vec![0.0; config.d_e],
            h: Mat::zeros(n_obj, config.d_h),
            w_p: Mat::zeros(config.d_a, config.d_h),
            b_p: vec![0.0; config.d_a],
            u_p: vec![0.0; config.d_a],
            u_c: vec![0.0; dim],
            w_s: Mat::zeros(dim, 2 * dim),
            b_s: vec![0.0; dim],
            w_z: Mat::zeros(dim, dim),
            b_z: vec![0.0; dim],
            w_r: Mat::zeros(config.d_r, config.k),
            b_r: vec![0.0; config.d_r],
            bn_scale: vec![0.0; dim],
            bn_shift: vec![0.0; dim],
        }
    }

    fn slices(&self) -> [&[f64]; 15] {
        [
            self.w_e.as_slice(),
            &self.b_e,
            self.h.as_slice(),
            self.w_p.as_slice(),
            &self.b_p,
            &self.u_p,
            &self.u_c,
            self.w_s.as_slice(),
            &self.b_s,
            self.w_z.as_slice(),
            &self.b_z,
            self.w_r.as_slice(),
            &self.b_r,
            &self.bn_scale,
            &self.bn_shift,
        ]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 15] {
        [
            self.w_e.as_mut_slice(),
            &mut self.b_e,
            self.h.as_mut_slice(),
            self.w_p.as_mut_slice(),
            &mut self.b_p,
            &mut self.u_p,
            &mut self.u_c,
            self.w_s.as_mut_slice(),
            &mut self.b_s,
            self.w_z.as_mut_slice(),
            &mut self.b_z,
            self.w_r.as_mut_slice(),
            &mut self.b_r,
            &mut self.bn_scale,
            &mut self.bn_shift,
        ]
    }
}

/// Every trainable tensor of the model. Also serves as the gradient
/// container: gradients mirror parameters shape for shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub main: SideParams,
    pub sparse: SideParams,
    /// Community-level attention weights on the main side, `c_raw`.
    pub w_comm: Vec<f64>,
    /// Pairwise head weight over the concatenated correlation, `2*d_r`.
    pub w_o: Vec<f64>,
    /// Pairwise head bias.
    pub b_o: f64,
}

impl ModelParams {
    /// All-zero parameter set (the gradient identity element).
    pub fn zeros(config: &ModelConfig) -> ModelParams {
        ModelParams {
            main: SideParams::zeros(config, Side::Main),
            sparse: SideParams::zeros(config, Side::Sparse),
            w_comm: vec![0.0; config.c_raw],
            w_o: vec![0.0; 2 * config.d_r],
            b_o: 0.0,
        }
    }

    /// Tensors of a side by kind.
    pub fn side(&self, side: Side) -> &SideParams {
        match side {
            Side::Main => &self.main,
            Side::Sparse => &self.sparse,
        }
    }

    /// Mutable tensors of a side by kind.
    pub fn side_mut(&mut self, side: Side) -> &mut SideParams {
        match side {
            Side::Main => &mut self.main,
            Side::Sparse => &mut self.sparse,
        }
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        let mut n = 0;
        self.for_each(|_| n += 1);
        n
    }

    /// True when the model has no parameters (never, for valid configs).
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Visits every scalar in canonical order.
    pub fn for_each(&self, mut f: impl FnMut(f64)) {
        for slice in self.main.slices() {
            for &x in slice {
                f(x);
            }
        }
        for slice in self.sparse.slices() {
            for &x in slice {
                f(x);
            }
        }
        for &x in &self.w_comm {
            f(x);
        }
        for &x in &self.w_o {
            f(x);
        }
        f(self.b_o);
    }

    /// Mutably visits every scalar in canonical order.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for slice in self.main.slices_mut() {
            for x in slice {
                f(x);
            }
        }
        for slice in self.sparse.slices_mut() {
            for x in slice {
                f(x);
            }
        }
        for x in &mut self.w_comm {
            f(x);
        }
        for x in &mut self.w_o {
            f(x);
        }
        f(&mut self.b_o);
    }

    /// Visits `(self, other)` scalar pairs in canonical order; shapes must
    /// match (they do whenever both sides come from the same config).
    pub fn zip_mut(&mut self, other: &ModelParams, mut f: impl FnMut(&mut f64, f64)) {
        let mut flat = Vec::with_capacity(other.len());
        other.for_each(|x| flat.push(x));
        let mut i = 0;
        self.for_each_mut(|x| {
            f(x, flat[i]);
            i += 1;
        });
        debug_assert_eq!(i, flat.len(), "parameter shapes diverge");
    }

    /// Canonical-order copy of every scalar.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        self.for_each(|x| out.push(x));
        out
    }

    /// True when every scalar is finite.
    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(|x| ok &= x.is_finite());
        ok
    }
}

/// Per-community representation rows for both graphs. A state buffer: it is
/// written by the gated update after each batch, never by gradient descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityMemory {
    /// `k x dim_main` rows.
    pub d_main: Mat,
    /// `k x dim_sparse` rows.
    pub d_sparse: Mat,
}

impl CommunityMemory {
    /// Memory rows of a side.
    pub fn side(&self, side: Side) -> &Mat {
        match side {
            Side::Main => &self.d_main,
            Side::Sparse => &self.d_sparse,
        }
    }
}

/// Batch-norm running statistics of one side, used at inference time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnSide {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BnSide {
    fn new(dim: usize) -> BnSide {
        BnSide {
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
        }
    }
}

/// Batch-norm running statistics for both sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnState {
    pub main: BnSide,
    pub sparse: BnSide,
}

impl BnState {
    /// Fresh running statistics: mean zero, variance one.
    pub fn new(config: &ModelConfig) -> BnState {
        BnState {
            main: BnSide::new(config.dim_main()),
            sparse: BnSide::new(config.dim_sparse()),
        }
    }

    /// Statistics of a side.
    pub fn side(&self, side: Side) -> &BnSide {
        match side {
            Side::Main => &self.main,
            Side::Sparse => &self.sparse,
        }
    }
}

/// Draws one Xavier-uniform sample for a unit with the given fan.
fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> f64 {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    rng.random_range(-limit..limit)
}

fn init_side(rng: &mut ChaCha8Rng, config: &ModelConfig, side: Side) -> SideParams {
    let dim = config.dim(side);
    let n_obj = config.n_objects(side);
    let mut p = SideParams::zeros(config, side);
    p.w_e = Mat::from_fn(config.d_e, n_obj, |_, _| xavier(rng, n_obj, config.d_e));
    // Object embeddings and memory rows are free vectors: fan out of one.
    p.h = Mat::from_fn(n_obj, config.d_h, |_, _| xavier(rng, config.d_h, 1));
    p.w_p = Mat::from_fn(config.d_a, config.d_h, |_, _| {
        xavier(rng, config.d_h, config.d_a)
    });
    for x in &mut p.u_p {
        *x = xavier(rng, config.d_a, 1);
    }
    for x in &mut p.u_c {
        *x = xavier(rng, dim, 1);
    }
    p.w_s = Mat::from_fn(dim, 2 * dim, |_, _| xavier(rng, 2 * dim, dim));
    p.w_z = Mat::from_fn(dim, dim, |_, _| xavier(rng, dim, dim));
    p.w_r = Mat::from_fn(config.d_r, config.k, |_, _| xavier(rng, config.k, config.d_r));
    for x in &mut p.bn_scale {
        *x = 1.0;
    }
    p
}

/// Deterministic parameter and memory initialization: Xavier-uniform weight
/// matrices and readout vectors, zero biases, all-one community weights,
/// batch-norm scale one / shift zero, Xavier memory rows.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<(ModelParams, CommunityMemory)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let main = init_side(&mut rng, config, Side::Main);
    let sparse = init_side(&mut rng, config, Side::Sparse);
    let params = ModelParams {
        main,
        sparse,
        w_comm: vec![1.0; config.c_raw],
        w_o: (0..2 * config.d_r)
            .map(|_| xavier(&mut rng, 2 * config.d_r, 1))
            .collect(),
        b_o: 0.0,
    };
    let memory = CommunityMemory {
        d_main: Mat::from_fn(config.k, config.dim_main(), |_, _| {
            xavier(&mut rng, config.dim_main(), 1)
        }),
        d_sparse: Mat::from_fn(config.k, config.dim_sparse(), |_, _| {
            xavier(&mut rng, config.dim_sparse(), 1)
        }),
    };
    Ok((params, memory))
}

/// A complete trained (or training) model: everything needed to score user
/// triplets against a fixed dataset, including the detected main-graph
/// partition that supplies raw community features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PccdModel {
    pub config: ModelConfig,
    pub ablation: AblationFlags,
    pub params: ModelParams,
    pub memory: CommunityMemory,
    pub bn: BnState,
    /// Detected partition of the main graph, frozen before training.
    pub partition: CommunityPartition,
    /// Community of each main-graph object, indexed like the graph's object
    /// list; `None` for objects missing from the partition.
    pub main_obj_comm: Vec<Option<usize>>,
    /// Free-form provenance entries (seeds, sparsification settings, ...).
    pub meta: BTreeMap<String, String>,
}

impl PccdModel {
    /// Builds a freshly initialized model. `main_object_ids` must be the
    /// object list of the graph the partition was detected on, in graph
    /// index order.
    pub fn new(
        config: ModelConfig,
        ablation: AblationFlags,
        partition: CommunityPartition,
        main_object_ids: &[String],
        seed: u64,
    ) -> Result<PccdModel> {
        if config.c_raw < partition.num_communities() {
            return Err(Error::DimMismatch(format!(
                "raw community width {} is smaller than the partition's {} communities",
                config.c_raw,
                partition.num_communities()
            )));
        }
        if config.n_objects_main != main_object_ids.len() {
            return Err(Error::DimMismatch(format!(
                "config expects {} main objects, graph has {}",
                config.n_objects_main,
                main_object_ids.len()
            )));
        }
        let (params, memory) = init_params(&config, seed)?;
        let bn = BnState::new(&config);
        let main_obj_comm = main_object_ids
            .iter()
            .map(|id| partition.community_of_object(id))
            .collect();
        Ok(PccdModel {
            config,
            ablation,
            params,
            memory,
            bn,
            partition,
            main_obj_comm,
            meta: BTreeMap::new(),
        })
    }

    /// Structural consistency between config and tensors; used after loading
    /// a checkpoint.
    pub fn validate_shapes(&self) -> Result<()> {
        self.config.validate()?;
        let c = &self.config;
        let checks = [
            ("main memory rows", self.memory.d_main.rows(), c.k),
            ("main memory cols", self.memory.d_main.cols(), c.dim_main()),
            ("sparse memory rows", self.memory.d_sparse.rows(), c.k),
            (
                "sparse memory cols",
                self.memory.d_sparse.cols(),
                c.dim_sparse(),
            ),
            ("community weights", self.params.w_comm.len(), c.c_raw),
            ("head weights", self.params.w_o.len(), 2 * c.d_r),
            ("main bn scale", self.params.main.bn_scale.len(), c.dim_main()),
            (
                "sparse bn scale",
                self.params.sparse.bn_scale.len(),
                c.dim_sparse(),
            ),
            (
                "main object communities",
                self.main_obj_comm.len(),
                c.n_objects_main,
            ),
            (
                "main running mean",
                self.bn.main.running_mean.len(),
                c.dim_main(),
            ),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::DimMismatch(format!("{name}: {got} != {want}")));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    model: PccdModel,
}

/// Writes the model to a versioned JSON checkpoint. Serialization is
/// deterministic: identical models produce byte-identical files.
pub fn save_checkpoint(model: &PccdModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        model: model.clone(),
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::InvalidInput(format!("checkpoint serialization failed: {e}")))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint written by [`save_checkpoint`], validating the format
/// tag and tensor shapes.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<PccdModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| {
        Error::Parse(format!("{}: not a valid checkpoint: {e}", path.display()))
    })?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::InvalidInput(format!(
            "unsupported checkpoint format '{}', expected '{CHECKPOINT_FORMAT}'",
            file.format
        )));
    }
    file.model.validate_shapes()?;
    Ok(file.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            k: 3,
            d_e: 3,
            d_h: 4,
            d_a: 3,
            d_r: 2,
            c_raw: 2,
            alpha: 0.1,
            bn_epsilon: 1e-5,
            bn_momentum: 0.9,
            n_objects_main: 5,
            n_objects_sparse: 4,
        }
    }

    fn tiny_partition() -> (CommunityPartition, Vec<String>) {
        let mut b = GraphBuilder::new("main");
        for (u, o) in [
            ("u0", "m0"),
            ("u1", "m0"),
            ("u1", "m1"),
            ("u2", "m2"),
            ("u3", "m3"),
            ("u3", "m4"),
            ("u2", "m3"),
        ] {
            b.add_link(u, o, 1.0).unwrap();
        }
        let g = b.finish();
        let assignment: Vec<usize> = g
            .user_ids()
            .iter()
            .chain(g.object_ids().iter())
            .map(|id| usize::from(matches!(id.as_str(), "u2" | "u3" | "m2" | "m3" | "m4")))
            .collect();
        let p = CommunityPartition::from_assignment(&g, &assignment).unwrap();
        (p, g.object_ids().to_vec())
    }

    pub(crate) fn tiny_model(seed: u64) -> PccdModel {
        let (partition, object_ids) = tiny_partition();
        PccdModel::new(
            tiny_config(),
            AblationFlags::none(),
            partition,
            &object_ids,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let (p1, m1) = init_params(&tiny_config(), 42).unwrap();
        let (p2, m2) = init_params(&tiny_config(), 42).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(m1, m2);
        let (p3, _) = init_params(&tiny_config(), 43).unwrap();
        assert_ne!(p1, p3);

        let cfg = tiny_config();
        assert_eq!(m1.d_sparse.rows(), cfg.k);
        assert_eq!(m1.d_sparse.cols(), cfg.dim_sparse());
        assert_eq!(p1.w_comm, vec![1.0; cfg.c_raw]);
        assert!(p1.main.b_e.iter().all(|&x| x == 0.0));
        assert!(p1.main.bn_scale.iter().all(|&x| x == 1.0));
        assert!(p1.main.bn_shift.iter().all(|&x| x == 0.0));
        assert_eq!(p1.b_o, 0.0);
    }

    #[test]
    fn parameter_iteration_is_stable_and_complete() {
        let (p, _) = init_params(&tiny_config(), 7).unwrap();
        let flat = p.flatten();
        assert_eq!(flat.len(), p.len());
        // round-trip through for_each_mut preserves values and order
        let mut q = p.clone();
        let mut i = 0;
        q.for_each_mut(|x| {
            assert_eq!(*x, flat[i]);
            i += 1;
        });
        assert_eq!(i, flat.len());
        // zip against zeros leaves self unchanged under += pairing
        let mut r = p.clone();
        let zeros = ModelParams::zeros(&tiny_config());
        r.zip_mut(&zeros, |a, b| *a += b);
        assert_eq!(r, p);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = tiny_config();
        cfg.k = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.alpha = -0.5;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.bn_momentum = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn checkpoint_round_trips_byte_identically() {
        let mut model = tiny_model(5);
        model
            .meta
            .insert("note".to_string(), "fixture".to_string());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, model);

        let path2 = dir.path().join("checkpoint2.json");
        save_checkpoint(&loaded, &path2).unwrap();
        let a = std::fs::read(&path).unwrap();
        let b = std::fs::read(&path2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_rejects_foreign_format_tags() {
        let model = tiny_model(5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        let file = CheckpointFile {
            format: "something-else".to_string(),
            model,
        };
        std::fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("unsupported checkpoint format"));
    }

    #[test]
    fn model_rejects_undersized_raw_width() {
        let (partition, object_ids) = tiny_partition();
        let mut cfg = tiny_config();
        cfg.c_raw = 1; // partition has 2 communities
        let err = PccdModel::new(
            cfg,
            AblationFlags::none(),
            partition,
            &object_ids,
            1,
        )
        .unwrap_err();
        assert!(err.to_string().contains("raw community width"));
    }
}
