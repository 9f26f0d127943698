//! Forward computation: user representations, affiliation scores, gated
//! memory updates, the community-separation constraint, and the pairwise
//! triplet head.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, sigmoid, Mat};

use super::{PccdModel, Side, SideParams, PROB_CLAMP};

/// Pairwise closeness classes, ordered farther < similar < closer.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Farther,
    Similar,
    Closer,
}

impl Label {
    /// All labels in canonical (farther, similar, closer) order.
    pub const ALL: [Label; 3] = [Label::Farther, Label::Similar, Label::Closer];

    /// Canonical index: farther 0, similar 1, closer 2.
    pub fn index(self) -> usize {
        match self {
            Label::Farther => 0,
            Label::Similar => 1,
            Label::Closer => 2,
        }
    }

    /// Inverse of [`Label::index`].
    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    /// Regression target encoding: farther 0, similar 0.5, closer 1.
    pub fn target(self) -> f64 {
        match self {
            Label::Farther => 0.0,
            Label::Similar => 0.5,
            Label::Closer => 1.0,
        }
    }

    /// Lower-case label name.
    pub fn name(self) -> &'static str {
        match self {
            Label::Farther => "farther",
            Label::Similar => "similar",
            Label::Closer => "closer",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Thirds-based decision rule over a pairwise score.
pub fn classify_score(y_hat: f64) -> Label {
    if y_hat < 1.0 / 3.0 {
        Label::Farther
    } else if y_hat < 2.0 / 3.0 {
        Label::Similar
    } else {
        Label::Closer
    }
}

/// One user's view of one graph: the (possibly masked) interaction list as
/// `(object index, link weight)` pairs, plus the user's raw community on the
/// main side (`None` on the sparse side and for users absent from the
/// partition).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberView {
    pub neigh: Vec<(usize, f64)>,
    pub comm: Option<usize>,
}

impl MemberView {
    /// A view with no interactions and no raw community (cold start).
    pub fn empty() -> MemberView {
        MemberView {
            neigh: Vec::new(),
            comm: None,
        }
    }
}

/// A training batch of user triplets. Member views are stored flat in
/// `(i, j, k)` order per triplet: member `3t` is the anchor of triplet `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub main: Vec<MemberView>,
    pub sparse: Vec<MemberView>,
    /// Per-triplet closeness target in {0, 0.5, 1}.
    pub y: Vec<f64>,
}

impl TripletBatch {
    /// Number of triplets.
    pub fn len(&self) -> usize {
        self.y.len()
    }

    /// True when the batch holds no triplets.
    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Attention bookkeeping for one neighbor of one member.
#[derive(Debug, Clone)]
pub struct AttEntry {
    /// Object index in this side's vocabulary.
    pub obj: usize,
    /// Attention projection activation (empty under uniform propagation).
    pub t: Vec<f64>,
    /// Raw attention logit before community weighting.
    pub a: f64,
    /// Final propagation weight after the softmax (or uniform weight).
    pub soft: f64,
}

/// Everything one side of the network computed for a batch.
#[derive(Debug, Clone)]
pub struct SideTrace {
    pub v_e: Vec<Vec<f64>>,
    pub att: Vec<Vec<AttEntry>>,
    pub u_pre: Vec<Vec<f64>>,
    pub x_hat: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub tau: Vec<Vec<f64>>,
    /// Affiliation scores per member, length `k` each.
    pub c: Vec<Vec<f64>>,
    /// Memory-update candidate per member, length `dim`.
    pub z: Vec<Vec<f64>>,
    /// Memory-update gates per member, a `k x dim` matrix each.
    pub s: Vec<Mat>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Post-update memory: the mean gated update over all members.
    pub d_star: Mat,
    /// Community-separation constraint evaluated on `d_star`.
    pub l_c: f64,
}

/// Head bookkeeping for one triplet.
#[derive(Debug, Clone)]
pub struct TripletTrace {
    /// Correlation representation of (i, j), post-tanh, length `2*d_r`.
    pub r_ij: Vec<f64>,
    /// Correlation representation of (i, k), post-tanh, length `2*d_r`.
    pub r_ik: Vec<f64>,
    pub y_hat: f64,
    /// True when the prediction hit the probability clamp.
    pub clamped: bool,
}

/// Complete forward record of one batch, sufficient for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub main: SideTrace,
    pub sparse: SideTrace,
    pub triplets: Vec<TripletTrace>,
    pub ce_mean: f64,
    pub total_loss: f64,
}

/// Affiliation scores of one user on both sides, the unit of evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserAffiliation {
    pub main: Vec<f64>,
    pub sparse: Vec<f64>,
}

/// `c_k = sigmoid(u_c . (tanh(v) ⊙ d_k))` for every memory row.
pub fn affiliation_scores(v: &[f64], d: &Mat, u_c: &[f64]) -> Result<Vec<f64>> {
    if v.len() != d.cols() || u_c.len() != v.len() {
        return Err(Error::DimMismatch(format!(
            "affiliation expects v and u_c of length {}, got {} and {}",
            d.cols(),
            v.len(),
            u_c.len()
        )));
    }
    let weighted: Vec<f64> = v
        .iter()
        .zip(u_c)
        .map(|(&vi, &ui)| vi.tanh() * ui)
        .collect();
    Ok((0..d.rows())
        .map(|k| sigmoid(dot(&weighted, d.row(k))))
        .collect())
}

/// Mean pairwise cosine similarity over all ordered memory-row pairs,
/// including the diagonal, scaled by `1/(2K^2)`. Cosines involving a zero row
/// count as zero.
pub fn community_constraint(d: &Mat) -> f64 {
    let k = d.rows();
    if k == 0 {
        return 0.0;
    }
    let norms: Vec<f64> = (0..k).map(|i| crate::linalg::norm(d.row(i))).collect();
    let mut sum = 0.0;
    for i in 0..k {
        if norms[i] == 0.0 {
            continue;
        }
        for j in 0..k {
            if norms[j] == 0.0 {
                continue;
            }
            sum += dot(d.row(i), d.row(j)) / (norms[i] * norms[j]);
        }
    }
    sum / (2.0 * (k * k) as f64)
}

/// Cross entropy against a soft target, with the prediction clamped away
/// from 0 and 1.
pub fn cross_entropy(y_hat: f64, y: f64) -> f64 {
    let p = y_hat.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
}

/// Per-triplet training loss: cross entropy plus the weighted constraint
/// terms of both sides.
pub fn total_loss(y_hat: f64, y: f64, l_c_sparse: f64, l_c_main: f64, alpha: f64) -> f64 {
    cross_entropy(y_hat, y) + alpha * (l_c_sparse + l_c_main)
}

/// Gate pre-activation contribution of the member representation, with bias:
/// `W_s[:, 0..dim] v + b_s`.
pub(super) fn gate_left(p: &SideParams, v: &[f64]) -> Vec<f64> {
    let dim = v.len();
    (0..p.w_s.rows())
        .map(|r| {
            let row = p.w_s.row(r);
            dot(&row[..dim], v) + p.b_s[r]
        })
        .collect()
}

/// Gate pre-activation contribution of a memory row: `W_s[:, dim..] d_k`.
pub(super) fn gate_right(p: &SideParams, d_k: &[f64]) -> Vec<f64> {
    let dim = d_k.len();
    (0..p.w_s.rows())
        .map(|r| {
            let row = p.w_s.row(r);
            dot(&row[dim..], d_k)
        })
        .collect()
}

/// Memory-update candidate `z = tanh(W_z v + b_z)`.
pub(super) fn gate_candidate(p: &SideParams, v: &[f64]) -> Vec<f64> {
    let mut z = p.w_z.matvec(v);
    for (zi, bi) in z.iter_mut().zip(&p.b_z) {
        *zi = (*zi + bi).tanh();
    }
    z
}

/// Gated memory update averaged over a group of member representations:
/// for each member and row, `d* = (1 - s) ⊙ d_k + s ⊙ z`, then the stored
/// row becomes the mean over members. With three members this is the
/// per-triplet update; the batch pass uses all members of the batch.
pub fn update_memory(members: &[&[f64]], d: &Mat, p: &SideParams) -> Mat {
    let k = d.rows();
    let dim = d.cols();
    let mut out = Mat::zeros(k, dim);
    if members.is_empty() {
        return d.clone();
    }
    for &v in members {
        let left = gate_left(p, v);
        let z = gate_candidate(p, v);
        for row in 0..k {
            let d_k = d.row(row);
            let right = gate_right(p, d_k);
            let acc = out.row_mut(row);
            for col in 0..dim {
                let s = sigmoid(left[col] + right[col]);
                acc[col] += (1.0 - s) * d_k[col] + s * z[col];
            }
        }
    }
    let scale = 1.0 / members.len() as f64;
    for x in out.as_mut_slice() {
        *x *= scale;
    }
    out
}

impl PccdModel {
    /// Raw (pre-normalization) representation of one member view: the direct
    /// transform, the attention bookkeeping, and the assembled input row.
    pub(super) fn pre_representation(
        &self,
        side: Side,
        view: &MemberView,
    ) -> (Vec<f64>, Vec<AttEntry>, Vec<f64>) {
        let cfg = &self.config;
        let p = self.params.side(side);
        let abl = &self.ablation;

        // Direct transform of the interaction multi-hot.
        let mut v_e = vec![0.0; cfg.d_e];
        if !abl.no_dtr {
            v_e.copy_from_slice(&p.b_e);
            for &(obj, w) in &view.neigh {
                for r in 0..cfg.d_e {
                    v_e[r] += w * p.w_e.get(r, obj);
                }
            }
            for x in &mut v_e {
                *x = x.tanh();
            }
        }

        // Attentive (or uniform) neighborhood aggregation.
        let mut att = Vec::with_capacity(view.neigh.len());
        let mut v_p = vec![0.0; cfg.d_h];
        if !view.neigh.is_empty() {
            if abl.no_nf {
                let soft = 1.0 / view.neigh.len() as f64;
                for &(obj, _) in &view.neigh {
                    att.push(AttEntry {
                        obj,
                        t: Vec::new(),
                        a: 0.0,
                        soft,
                    });
                    for (acc, &hv) in v_p.iter_mut().zip(p.h.row(obj)) {
                        *acc += soft * hv;
                    }
                }
            } else {
                let mut logits = Vec::with_capacity(view.neigh.len());
                for &(obj, _) in &view.neigh {
                    let mut t = p.w_p.matvec(p.h.row(obj));
                    for (ti, bi) in t.iter_mut().zip(&p.b_p) {
                        *ti = (*ti + bi).tanh();
                    }
                    let a = dot(&p.u_p, &t);
                    let logit = a * self.comm_weight(side, obj);
                    logits.push(logit);
                    att.push(AttEntry {
                        obj,
                        t,
                        a,
                        soft: 0.0,
                    });
                }
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for l in &mut logits {
                    *l = (*l - max).exp();
                    denom += *l;
                }
                for (entry, l) in att.iter_mut().zip(&logits) {
                    entry.soft = l / denom;
                    for (acc, &hv) in v_p.iter_mut().zip(p.h.row(entry.obj)) {
                        *acc += entry.soft * hv;
                    }
                }
            }
        }

        // Assemble the normalization input: [one-hot community | v_e | v_p]
        // on the main side, [v_e | v_p] on the sparse side.
        let dim = cfg.dim(side);
        let mut u_pre = vec![0.0; dim];
        let offset = match side {
            Side::Main => {
                if !abl.no_rcr {
                    if let Some(comm) = view.comm {
                        debug_assert!(comm < cfg.c_raw);
                        u_pre[comm] = 1.0;
                    }
                }
                cfg.c_raw
            }
            Side::Sparse => 0,
        };
        u_pre[offset..offset + cfg.d_e].copy_from_slice(&v_e);
        u_pre[offset + cfg.d_e..].copy_from_slice(&v_p);
        (v_e, att, u_pre)
    }

    /// Community-level attention multiplier of a main-graph object; the
    /// sparse side and unpartitioned objects use weight one.
    pub(super) fn comm_weight(&self, side: Side, obj: usize) -> f64 {
        match side {
            Side::Main => match self.main_obj_comm[obj] {
                Some(c) => self.params.w_comm[c],
                None => 1.0,
            },
            Side::Sparse => 1.0,
        }
    }

    fn side_forward(&self, side: Side, views: &[MemberView]) -> SideTrace {
        let cfg = &self.config;
        let p = self.params.side(side);
        let dim = cfg.dim(side);
        let n = views.len();

        let mut v_e = Vec::with_capacity(n);
        let mut att = Vec::with_capacity(n);
        let mut u_pre = Vec::with_capacity(n);
        for view in views {
            let (e, a, u) = self.pre_representation(side, view);
            v_e.push(e);
            att.push(a);
            u_pre.push(u);
        }

        // Batch normalization with biased batch statistics.
        let inv_n = 1.0 / n as f64;
        let mut batch_mean = vec![0.0; dim];
        for u in &u_pre {
            for (m, &x) in batch_mean.iter_mut().zip(u) {
                *m += x * inv_n;
            }
        }
        let mut batch_var = vec![0.0; dim];
        for u in &u_pre {
            for (vv, (&x, &m)) in batch_var.iter_mut().zip(u.iter().zip(&batch_mean)) {
                let d = x - m;
                *vv += d * d * inv_n;
            }
        }
        let inv_std: Vec<f64> = batch_var
            .iter()
            .map(|&v| 1.0 / (v + cfg.bn_epsilon).sqrt())
            .collect();
        let mut x_hat = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for u in &u_pre {
            let xh: Vec<f64> = u
                .iter()
                .zip(batch_mean.iter().zip(&inv_std))
                .map(|(&x, (&m, &is))| (x - m) * is)
                .collect();
            let vv: Vec<f64> = xh
                .iter()
                .zip(p.bn_scale.iter().zip(&p.bn_shift))
                .map(|(&x, (&g, &b))| g * x + b)
                .collect();
            x_hat.push(xh);
            v.push(vv);
        }

        // Affiliations against the pre-update memory.
        let d_mem = self.memory.side(side);
        let mut tau = Vec::with_capacity(n);
        let mut c = Vec::with_capacity(n);
        for vv in &v {
            let t: Vec<f64> = vv.iter().map(|x| x.tanh()).collect();
            let weighted: Vec<f64> = t.iter().zip(&p.u_c).map(|(&ti, &ui)| ti * ui).collect();
            let scores: Vec<f64> = (0..cfg.k)
                .map(|k| sigmoid(dot(&weighted, d_mem.row(k))))
                .collect();
            tau.push(t);
            c.push(scores);
        }

        // Gated memory update, averaged over every member of the batch.
        let right: Vec<Vec<f64>> = (0..cfg.k).map(|k| gate_right(p, d_mem.row(k))).collect();
        let mut z = Vec::with_capacity(n);
        let mut s = Vec::with_capacity(n);
        let mut d_star = Mat::zeros(cfg.k, dim);
        for vv in &v {
            let left = gate_left(p, vv);
            let zm = gate_candidate(p, vv);
            let mut sm = Mat::zeros(cfg.k, dim);
            for k in 0..cfg.k {
                let d_k = d_mem.row(k);
                let acc = d_star.row_mut(k);
                let s_row = sm.row_mut(k);
                for col in 0..dim {
                    let gate = sigmoid(left[col] + right[k][col]);
                    s_row[col] = gate;
                    acc[col] += (1.0 - gate) * d_k[col] + gate * zm[col];
                }
            }
            z.push(zm);
            s.push(sm);
        }
        for x in d_star.as_mut_slice() {
            *x *= inv_n;
        }
        let l_c = community_constraint(&d_star);

        SideTrace {
            v_e,
            att,
            u_pre,
            x_hat,
            v,
            tau,
            c,
            z,
            s,
            batch_mean,
            batch_var,
            inv_std,
            d_star,
            l_c,
        }
    }

    /// Post-tanh correlation representation of an ordered user pair, built
    /// from both sides' affiliations (sparse half first).
    fn correlation(
        &self,
        c_a_sparse: &[f64],
        c_b_sparse: &[f64],
        c_a_main: &[f64],
        c_b_main: &[f64],
    ) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.config.d_r);
        for (side, (c_a, c_b)) in [
            (Side::Sparse, (c_a_sparse, c_b_sparse)),
            (Side::Main, (c_a_main, c_b_main)),
        ] {
            let p = self.params.side(side);
            let diff: Vec<f64> = c_a.iter().zip(c_b).map(|(&a, &b)| a - b).collect();
            let mut r = p.w_r.matvec(&diff);
            for (ri, bi) in r.iter_mut().zip(&p.b_r) {
                *ri = (*ri + bi).tanh();
            }
            out.extend(r);
        }
        out
    }

    fn head(&self, r_ij: &[f64], r_ik: &[f64]) -> f64 {
        let diff: Vec<f64> = r_ij.iter().zip(r_ik).map(|(&a, &b)| a - b).collect();
        sigmoid(dot(&self.params.w_o, &diff) + self.params.b_o)
    }

    /// Training-mode forward pass over a triplet batch. Uses batch-norm batch
    /// statistics, computes the gated memory update of both sides, and
    /// returns the full trace required by the backward pass. The model itself
    /// is not mutated; commit the trace after the optimizer step.
    pub fn forward_train(&self, batch: &TripletBatch) -> Result<ForwardTrace> {
        let b = batch.y.len();
        if b == 0 {
            return Err(Error::InvalidInput("empty triplet batch".to_string()));
        }
        if batch.main.len() != 3 * b || batch.sparse.len() != 3 * b {
            return Err(Error::DimMismatch(format!(
                "batch with {b} triplets needs {} member views per side, got {} main / {} sparse",
                3 * b,
                batch.main.len(),
                batch.sparse.len()
            )));
        }

        let main = self.side_forward(Side::Main, &batch.main);
        let sparse = self.side_forward(Side::Sparse, &batch.sparse);

        let mut triplets = Vec::with_capacity(b);
        let mut ce_sum = 0.0;
        for t in 0..b {
            let (i, j, k) = (3 * t, 3 * t + 1, 3 * t + 2);
            let r_ij = self.correlation(&sparse.c[i], &sparse.c[j], &main.c[i], &main.c[j]);
            let r_ik = self.correlation(&sparse.c[i], &sparse.c[k], &main.c[i], &main.c[k]);
            let y_hat = self.head(&r_ij, &r_ik);
            let clamped = !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&y_hat);
            ce_sum += cross_entropy(y_hat, batch.y[t]);
            triplets.push(TripletTrace {
                r_ij,
                r_ik,
                y_hat,
                clamped,
            });
        }
        let ce_mean = ce_sum / b as f64;
        let alpha_eff = self.ablation.effective_alpha(self.config.alpha);
        let total_loss = ce_mean + alpha_eff * (sparse.l_c + main.l_c);
        if !total_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss diverged (cross entropy {ce_mean}, constraints {} / {})",
                sparse.l_c, main.l_c
            )));
        }

        Ok(ForwardTrace {
            main,
            sparse,
            triplets,
            ce_mean,
            total_loss,
        })
    }

    /// Commits a batch's side effects after the optimizer step: the memory
    /// becomes the gated update and the batch-norm running statistics absorb
    /// the batch statistics.
    pub fn commit_batch(&mut self, trace: &ForwardTrace) {
        self.memory.d_main = trace.main.d_star.clone();
        self.memory.d_sparse = trace.sparse.d_star.clone();
        let momentum = self.config.bn_momentum;
        for (side, strace) in [(Side::Main, &trace.main), (Side::Sparse, &trace.sparse)] {
            let bn = match side {
                Side::Main => &mut self.bn.main,
                Side::Sparse => &mut self.bn.sparse,
            };
            for (r, &b) in bn.running_mean.iter_mut().zip(&strace.batch_mean) {
                *r = momentum * *r + (1.0 - momentum) * b;
            }
            for (r, &b) in bn.running_var.iter_mut().zip(&strace.batch_var) {
                *r = momentum * *r + (1.0 - momentum) * b;
            }
        }
    }

    /// Inference-mode user representation: identical computation to training
    /// except that normalization uses the running statistics, making members
    /// independent of each other.
    pub fn eval_representation(&self, side: Side, view: &MemberView) -> Vec<f64> {
        let (_, _, u_pre) = self.pre_representation(side, view);
        let p = self.params.side(side);
        let bn = self.bn.side(side);
        u_pre
            .iter()
            .enumerate()
            .map(|(d, &x)| {
                let xh = (x - bn.running_mean[d]) / (bn.running_var[d] + self.config.bn_epsilon).sqrt();
                p.bn_scale[d] * xh + p.bn_shift[d]
            })
            .collect()
    }

    /// Inference-mode affiliation scores of one view against the frozen
    /// memory.
    pub fn eval_affiliation(&self, side: Side, view: &MemberView) -> Vec<f64> {
        let v = self.eval_representation(side, view);
        affiliation_scores(&v, self.memory.side(side), &self.params.side(side).u_c)
            .expect("shapes fixed by construction")
    }

    /// Both sides' inference affiliations of one user.
    pub fn affiliation_for(&self, main_view: &MemberView, sparse_view: &MemberView) -> UserAffiliation {
        UserAffiliation {
            main: self.eval_affiliation(Side::Main, main_view),
            sparse: self.eval_affiliation(Side::Sparse, sparse_view),
        }
    }

    /// Pairwise closeness score of a triplet from cached affiliations:
    /// the probability that `j` is closer to `i` than `k` is.
    pub fn score_triplet(
        &self,
        i: &UserAffiliation,
        j: &UserAffiliation,
        k: &UserAffiliation,
    ) -> f64 {
        let r_ij = self.correlation(&i.sparse, &j.sparse, &i.main, &j.main);
        let r_ik = self.correlation(&i.sparse, &k.sparse, &i.main, &k.main);
        self.head(&r_ij, &r_ik)
    }
}
