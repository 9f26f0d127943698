//! Triplet labeling against a community truth map, balanced sampling, and
//! the training-time neighborhood mask.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Label, MemberView};

/// One labeled user triplet: is `j` closer to `i` than `k` is?
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTriplet {
    pub i: String,
    pub j: String,
    pub k: String,
    /// Relative closeness: +1 closer, 0 similar, -1 farther.
    pub s_jk: i8,
    /// Head target `(1 + s_jk) / 2`.
    pub y: f64,
}

impl UserTriplet {
    /// Classification label corresponding to `s_jk`.
    pub fn label(&self) -> Label {
        match self.s_jk {
            1 => Label::Closer,
            0 => Label::Similar,
            _ => Label::Farther,
        }
    }
}

/// Labels a triplet of distinct users from a community map: closer when `j`
/// shares `i`'s community and `k` does not, farther in the reverse case,
/// similar when both or neither share it.
pub fn label_triplet(
    i: &str,
    j: &str,
    k: &str,
    truth: &BTreeMap<String, usize>,
) -> Result<UserTriplet> {
    if i == j || i == k || j == k {
        return Err(Error::InvalidInput(format!(
            "triplet users must be pairwise distinct, got ({i}, {j}, {k})"
        )));
    }
    let comm = |id: &str| -> Result<usize> {
        truth.get(id).copied().ok_or_else(|| {
            Error::InvalidInput(format!("user '{id}' has no ground-truth community"))
        })
    };
    let (ci, cj, ck) = (comm(i)?, comm(j)?, comm(k)?);
    let s_jk: i8 = match (cj == ci, ck == ci) {
        (true, false) => 1,
        (false, true) => -1,
        _ => 0,
    };
    Ok(UserTriplet {
        i: i.to_string(),
        j: j.to_string(),
        k: k.to_string(),
        s_jk,
        y: (1.0 + s_jk as f64) / 2.0,
    })
}

/// Consecutive rejected draws tolerated before sampling gives up; guards
/// against configurations whose remaining label population is exhausted.
const SAMPLE_ATTEMPT_CAP: usize = 1_000_000;

fn community_counts(users: &[String], truth: &BTreeMap<String, usize>) -> Result<BTreeMap<usize, usize>> {
    let mut counts = BTreeMap::new();
    for u in users {
        let c = truth.get(u).ok_or_else(|| {
            Error::InvalidInput(format!("user '{u}' has no ground-truth community"))
        })?;
        *counts.entry(*c).or_insert(0usize) += 1;
    }
    Ok(counts)
}

fn label_feasible(label: Label, counts: &BTreeMap<usize, usize>, total: usize) -> bool {
    match label {
        // closer/farther need a same-community pair plus an outsider
        Label::Closer | Label::Farther => counts
            .values()
            .any(|&n| n >= 2 && total - n >= 1),
        // similar needs a same-community trio, or an anchor with two users
        // outside its community
        Label::Similar => counts
            .values()
            .any(|&n| n >= 3 || (n >= 1 && total - n >= 2)),
    }
}

/// Samples exactly `count_per_label` distinct triplets of every label from
/// the eligible users, by rejection against the truth map. Output is grouped
/// by label in (farther, similar, closer) order and is deterministic for a
/// given seed.
pub fn sample_triplets(
    users: &[String],
    truth: &BTreeMap<String, usize>,
    count_per_label: usize,
    seed: u64,
) -> Result<Vec<UserTriplet>> {
    sample_triplets_grouped(users, truth, &[count_per_label; 3], seed).map(|mut groups| {
        let mut out = Vec::with_capacity(3 * count_per_label);
        for g in &mut groups {
            out.append(g);
        }
        out
    })
}

/// Samples per-label counts (indexed by [`Label::index`]) and returns the
/// three groups separately. Shared by plain sampling and train/test splits.
pub fn sample_triplets_grouped(
    users: &[String],
    truth: &BTreeMap<String, usize>,
    count_per_label: &[usize; 3],
    seed: u64,
) -> Result<[Vec<UserTriplet>; 3]> {
    if users.len() < 3 {
        return Err(Error::Infeasible(format!(
            "triplet sampling needs at least 3 eligible users, got {}",
            users.len()
        )));
    }
    let counts = community_counts(users, truth)?;
    for label in Label::ALL {
        if count_per_label[label.index()] > 0 && !label_feasible(label, &counts, users.len()) {
            return Err(Error::Infeasible(format!(
                "cannot sample any '{label}' triplet from the eligible users \
                 ({} users across {} communities)",
                users.len(),
                counts.len()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<(usize, usize, usize)> = HashSet::new();
    let mut groups: [Vec<UserTriplet>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for label in Label::ALL {
        let want = count_per_label[label.index()];
        let group = &mut groups[label.index()];
        let mut misses = 0usize;
        while group.len() < want {
            let idx = rand::seq::index::sample(&mut rng, users.len(), 3);
            let (a, b, c) = (idx.index(0), idx.index(1), idx.index(2));
            let triplet = label_triplet(&users[a], &users[b], &users[c], truth)?;
            if triplet.label() == label && seen.insert((a, b, c)) {
                group.push(triplet);
                misses = 0;
            } else {
                misses += 1;
                if misses > SAMPLE_ATTEMPT_CAP {
                    return Err(Error::Infeasible(format!(
                        "exhausted '{label}' triplet sampling after {SAMPLE_ATTEMPT_CAP} \
                         consecutive rejections ({} of {want} found)",
                        group.len()
                    )));
                }
            }
        }
    }
    Ok(groups)
}

/// Samples disjoint train and test triplet sets in one pass: per label,
/// `train_per_label` triplets go to the first set and `test_per_label` to
/// the second, with no duplicates anywhere.
pub fn sample_triplet_split(
    users: &[String],
    truth: &BTreeMap<String, usize>,
    train_per_label: usize,
    test_per_label: usize,
    seed: u64,
) -> Result<(Vec<UserTriplet>, Vec<UserTriplet>)> {
    let groups = sample_triplets_grouped(
        users,
        truth,
        &[train_per_label + test_per_label; 3],
        seed,
    )?;
    let mut train = Vec::with_capacity(3 * train_per_label);
    let mut test = Vec::with_capacity(3 * test_per_label);
    for mut g in groups {
        let tail = g.split_off(train_per_label);
        train.extend(g);
        test.extend(tail);
    }
    Ok((train, test))
}

/// Drops each connected object independently with probability `rho`,
/// preserving order and the raw community. `rho = 0` is the identity.
pub fn apply_mask(view: &MemberView, rho: f64, rng: &mut ChaCha8Rng) -> MemberView {
    if rho <= 0.0 {
        return view.clone();
    }
    let neigh = if rho >= 1.0 {
        Vec::new()
    } else {
        view.neigh
            .iter()
            .filter(|_| rng.random::<f64>() >= rho)
            .cloned()
            .collect()
    };
    MemberView {
        neigh,
        comm: view.comm,
    }
}
