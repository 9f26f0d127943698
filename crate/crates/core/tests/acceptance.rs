//! Acceptance suite: ten end-to-end checks covering gradient correctness,
//! detector optimality, baseline floors, learning signal, sparsity and
//! ablation trends, unit-level identities, head antisymmetry, determinism,
//! and the user-type ordering. Each check prints one `ACCEPTANCE n ...:
//! PASS|FAIL` line (visible under `--nocapture`) before asserting.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pccd_core::eval::{
    partition_label_baseline, random_baseline, run_experiment, sparsity_sweep, user_type_eval,
    write_metrics_json, Experiment,
};
use pccd_core::graph::{BipartiteGraph, CrossGraphDataset, GraphBuilder, UserType};
use pccd_core::mapeq::{detect_communities, CommunityPartition};
use pccd_core::model::{
    classify_score, community_constraint, save_checkpoint, AblationFlags, Label, MemberView,
    PccdModel, TripletBatch, UserAffiliation,
};
use pccd_core::train::{
    apply_mask, label_triplet, plant_synthetic_dataset, pseudo_truth_from_sparse_view,
    sample_triplets, user_views, PlantConfig, TrainConfig, UserTriplet,
};
use pccd_core::linalg::Mat;

/// Prints the per-criterion verdict line, then enforces it.
fn verdict(idx: usize, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {idx:02} {name}: {tag} — {detail}");
    assert!(pass, "acceptance criterion {idx} ({name}) failed: {detail}");
}

fn sorted_mutual(ds: &CrossGraphDataset) -> Vec<String> {
    ds.mutual_users().iter().cloned().collect()
}

/// Unmasked batch over the given triplets, member views in (i, j, k) order.
fn build_batch(
    ds: &CrossGraphDataset,
    partition: &CommunityPartition,
    triplets: &[UserTriplet],
) -> TripletBatch {
    let mut main = Vec::with_capacity(3 * triplets.len());
    let mut sparse = Vec::with_capacity(3 * triplets.len());
    let mut y = Vec::with_capacity(triplets.len());
    for t in triplets {
        for id in [&t.i, &t.j, &t.k] {
            let (m, s) = user_views(ds, partition, id);
            main.push(m);
            sparse.push(s);
        }
        y.push(t.y);
    }
    TripletBatch { main, sparse, y }
}

/// A deliberately tiny world: two planted communities, single-digit widths.
/// Used by the gradient and antisymmetry checks.
fn tiny_world() -> (
    CrossGraphDataset,
    BTreeMap<String, usize>,
    CommunityPartition,
    PccdModel,
) {
    let plant = PlantConfig {
        num_communities: 2,
        mutual_users: 14,
        main_only_users: 2,
        sparse_only_users: 2,
        main_objects_per_community: 3,
        sparse_objects_per_community: 2,
        p_in: 0.9,
        p_out: 0.2,
        seed: 11,
    };
    let (ds, truth) = plant_synthetic_dataset(&plant).expect("planting failed");
    let partition = detect_communities(&ds.main, 5).expect("detection failed");
    let tc = TrainConfig {
        k: 3,
        d_e: 6,
        d_h: 5,
        d_a: 4,
        d_r: 3,
        ..TrainConfig::default()
    };
    let mc = tc.model_config(
        partition.num_communities().max(2),
        ds.main.num_objects(),
        ds.sparse.num_objects(),
    );
    let model = PccdModel::new(
        mc,
        AblationFlags::none(),
        partition.clone(),
        ds.main.object_ids(),
        42,
    )
    .expect("model construction failed");
    (ds, truth, partition, model)
}

/// Adds `delta` to the flattened parameter at `idx`.
fn bump(model: &mut PccdModel, idx: usize, delta: f64) {
    let mut i = 0usize;
    model.params.for_each_mut(|x| {
        if i == idx {
            *x += delta;
        }
        i += 1;
    });
}

// ---------------------------------------------------------------------------
// 1. Analytic gradients match central finite differences.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_01_gradients_match_finite_differences() {
    let started = Instant::now();
    let (ds, truth, partition, model) = tiny_world();

    let users = sorted_mutual(&ds);
    let mut triplets = sample_triplets(&users, &truth, 7, 13).expect("sampling failed");
    triplets.truncate(20);
    assert_eq!(triplets.len(), 20);
    let batch = build_batch(&ds, &partition, &triplets);

    let trace = model.forward_train(&batch).expect("forward failed");
    let grad = model.backward(&batch, &trace);
    let analytic = grad.flatten();
    let n = analytic.len();

    let h = 1e-5;
    let mut probe = model.clone();
    let mut max_rel = 0.0f64;
    let mut worst = 0usize;
    for idx in 0..n {
        bump(&mut probe, idx, h);
        let plus = probe.forward_train(&batch).expect("forward failed").total_loss;
        bump(&mut probe, idx, -2.0 * h);
        let minus = probe.forward_train(&batch).expect("forward failed").total_loss;
        bump(&mut probe, idx, h);
        let numeric = (plus - minus) / (2.0 * h);
        let ga = analytic[idx];
        let rel = (ga - numeric).abs() / ga.abs().max(numeric.abs()).max(1e-3);
        if rel > max_rel {
            max_rel = rel;
            worst = idx;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();

    verdict(
        1,
        "gradient check",
        max_rel < 1e-4 && elapsed < 60.0,
        &format!(
            "{n} parameters, h=1e-5, max relative error {max_rel:.3e} (at flat index {worst}), {elapsed:.1}s"
        ),
    );
}

// ---------------------------------------------------------------------------
// 2. The detector reaches the exhaustive-minimum codelength on small graphs.
// ---------------------------------------------------------------------------

/// Calls `f` with every set partition of `n` items, encoded as a restricted
/// growth string (each item's block id; block ids appear in first-use order).
fn for_each_partition(n: usize, mut f: impl FnMut(&[usize])) {
    assert!(n >= 1);
    let mut a = vec![0usize; n];
    loop {
        f(&a);
        let mut i = n - 1;
        loop {
            if i == 0 {
                return;
            }
            let cap = a[..i].iter().copied().max().unwrap();
            if a[i] <= cap {
                a[i] += 1;
                for x in &mut a[i + 1..] {
                    *x = 0;
                }
                break;
            }
            i -= 1;
        }
    }
}

/// Minimum codelength over every partition of the graph's nodes, computed
/// from first principles (no shared code with the detector's search).
fn exhaustive_best_codelength(graph: &BipartiteGraph) -> f64 {
    let n = graph.num_users() + graph.num_objects();
    let mut best = f64::INFINITY;
    for_each_partition(n, |assignment| {
        let p = CommunityPartition::from_assignment(graph, assignment)
            .expect("assignment covers all nodes");
        best = best.min(p.codelength());
    });
    best
}

/// Random connected-enough bipartite graph with at most 8 nodes.
fn random_small_graph(seed: u64) -> BipartiteGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = rng.random_range(2..=4usize);
    let objects = rng.random_range(2..=4usize).min(8 - users);
    let mut b = GraphBuilder::new("tiny");
    for u in 0..users {
        b.add_user(&format!("u{u}"));
    }
    for o in 0..objects {
        b.add_object(&format!("o{o}"));
    }
    let mut user_deg = vec![0usize; users];
    let mut obj_deg = vec![0usize; objects];
    for u in 0..users {
        for o in 0..objects {
            if rng.random::<f64>() < 0.55 {
                let w = rng.random_range(1..=3) as f64;
                b.add_link(&format!("u{u}"), &format!("o{o}"), w).unwrap();
                user_deg[u] += 1;
                obj_deg[o] += 1;
            }
        }
    }
    // Give every isolated node one link so all nodes carry flow.
    for u in 0..users {
        if user_deg[u] == 0 {
            let o = rng.random_range(0..objects);
            b.add_link(&format!("u{u}"), &format!("o{o}"), 1.0).unwrap();
            obj_deg[o] += 1;
        }
    }
    for o in 0..objects {
        if obj_deg[o] == 0 {
            let u = rng.random_range(0..users);
            b.add_link(&format!("u{u}"), &format!("o{o}"), 1.0).unwrap();
        }
    }
    b.finish()
}

#[test]
fn acceptance_02_detector_matches_exhaustive_codelength() {
    let started = Instant::now();

    let mut worst_gap = 0.0f64;
    let cases = 24usize;
    for case in 0..cases {
        let graph = random_small_graph(100 + case as u64);
        let best = exhaustive_best_codelength(&graph);
        let found = detect_communities(&graph, case as u64)
            .expect("detection failed")
            .codelength();
        worst_gap = worst_gap.max(found - best);
    }

    // Two disconnected three-node components (two users sharing one object
    // each — the smallest closed shapes a bipartite graph allows).
    let mut b = GraphBuilder::new("pair");
    for (u, o) in [("pa", "px"), ("pb", "px"), ("qa", "qx"), ("qb", "qx")] {
        b.add_link(u, o, 1.0).unwrap();
    }
    let pair = b.finish();
    let detected = detect_communities(&pair, 0).expect("detection failed");
    let pair_best = exhaustive_best_codelength(&pair);
    let pair_gap = detected.codelength() - pair_best;
    let pair_ok = detected.num_communities() == 2 && pair_gap.abs() <= 1e-9;

    let elapsed = started.elapsed().as_secs_f64();
    verdict(
        2,
        "detector vs exhaustive optimum",
        worst_gap <= 1e-9 && pair_ok && elapsed < 60.0,
        &format!(
            "{cases} random graphs ≤8 nodes, worst codelength gap {worst_gap:.2e} bits; \
             disconnected pair → {} communities (gap {pair_gap:.2e}); {elapsed:.1}s",
            detected.num_communities()
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. Random-partition labeling sits at chance on balanced triplet sets.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_03_random_baseline_sits_at_chance() {
    let plant = PlantConfig {
        num_communities: 4,
        mutual_users: 200,
        main_only_users: 20,
        sparse_only_users: 20,
        main_objects_per_community: 10,
        sparse_objects_per_community: 6,
        p_in: 0.5,
        p_out: 0.05,
        seed: 3,
    };
    let (ds, truth) = plant_synthetic_dataset(&plant).expect("planting failed");
    let users = sorted_mutual(&ds);
    let triplets = sample_triplets(&users, &truth, 10_000, 77).expect("sampling failed");
    assert_eq!(triplets.len(), 30_000);

    let report = random_baseline(&users, 4, &triplets, 99).expect("baseline failed");
    let acc_gap = (report.acc - 1.0 / 3.0).abs();
    let mcc_gap = report.mcc.abs();

    verdict(
        3,
        "random baseline at chance",
        acc_gap <= 0.02 && mcc_gap <= 0.02,
        &format!(
            "n=30000: ACC {:.4} (|ACC-1/3| = {acc_gap:.4}), MCC {:+.4}",
            report.acc, report.mcc
        ),
    );
}

// ---------------------------------------------------------------------------
// 4. The trained model beats both baselines decisively on easy planted data.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_04_model_beats_baselines_on_planted_data() {
    let started = Instant::now();
    let plant = PlantConfig {
        num_communities: 6,
        mutual_users: 300,
        main_only_users: 60,
        sparse_only_users: 60,
        main_objects_per_community: 15,
        sparse_objects_per_community: 8,
        p_in: 0.6,
        p_out: 0.05,
        seed: 21,
    };
    assert!(plant.p_in / plant.p_out >= 10.0);
    let (ds, truth) = plant_synthetic_dataset(&plant).expect("planting failed");

    let cfg = TrainConfig {
        epochs: 50,
        seed: 404,
        ..TrainConfig::default()
    };
    let mut exp = Experiment::new(cfg, 400, 150);
    exp.delta = 0.5;
    let res = run_experiment(&ds, &truth, &exp).expect("experiment failed");
    let acc = res.metrics.acc;

    let users = sorted_mutual(&ds);
    let rand_acc = random_baseline(&users, plant.num_communities, &res.test_triplets, 515)
        .expect("random baseline failed")
        .acc;
    let pseudo = pseudo_truth_from_sparse_view(&res.view, exp.seed).expect("detection failed");
    let sparse_acc = partition_label_baseline(&pseudo, &res.test_triplets)
        .expect("sparse-view baseline failed")
        .acc;

    let elapsed = started.elapsed().as_secs_f64();
    verdict(
        4,
        "learning signal",
        acc >= 0.85 && acc - rand_acc >= 0.10 && acc - sparse_acc >= 0.10 && elapsed < 900.0,
        &format!(
            "model ACC {acc:.4} vs random {rand_acc:.4} and sparse-view partition {sparse_acc:.4} \
             (450 held-out triplets); {elapsed:.0}s"
        ),
    );
}

// ---------------------------------------------------------------------------
// 5. Accuracy rises as more sparse-graph links are retained.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_05_accuracy_rises_with_link_retention() {
    let plant = PlantConfig {
        num_communities: 4,
        mutual_users: 160,
        main_only_users: 30,
        sparse_only_users: 30,
        main_objects_per_community: 12,
        sparse_objects_per_community: 8,
        p_in: 0.6,
        p_out: 0.05,
        seed: 5,
    };
    let (ds, truth) = plant_synthetic_dataset(&plant).expect("planting failed");
    let deltas = [0.1, 0.5, 0.9];

    let mut mean = [0.0f64; 3];
    let seeds = [201u64, 202, 203];
    for &seed in &seeds {
        let cfg = TrainConfig {
            epochs: 15,
            seed,
            ..TrainConfig::default()
        };
        let base = Experiment::new(cfg, 250, 100);
        let rows = sparsity_sweep(&ds, &truth, &deltas, &base).expect("sweep failed");
        for (slot, (_, report)) in rows.iter().enumerate() {
            mean[slot] += report.acc / seeds.len() as f64;
        }
    }

    verdict(
        5,
        "sparsity trend",
        mean[2] >= mean[1] && mean[1] >= mean[0] - 0.02,
        &format!(
            "mean ACC over {} seeds: δ=0.1 → {:.4}, δ=0.5 → {:.4}, δ=0.9 → {:.4}",
            seeds.len(),
            mean[0],
            mean[1],
            mean[2]
        ),
    );
}

// ---------------------------------------------------------------------------
// 6. Removing the node-level filter hurts accuracy more than any other flag.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_06_attention_ablation_hurts_most() {
    let plant = PlantConfig {
        num_communities: 6,
        mutual_users: 300,
        main_only_users: 60,
        sparse_only_users: 60,
        main_objects_per_community: 15,
        sparse_objects_per_community: 8,
        p_in: 0.6,
        p_out: 0.10,
        seed: 66,
    };
    let (ds, truth) = plant_synthetic_dataset(&plant).expect("planting failed");
    let cfg = TrainConfig {
        epochs: 50,
        seed: 606,
        ..TrainConfig::default()
    };
    let mut base = Experiment::new(cfg, 400, 200);
    base.delta = 0.5;

    let run = |flags: AblationFlags| -> f64 {
        let exp = Experiment {
            ablation: flags,
            ..base.clone()
        };
        run_experiment(&ds, &truth, &exp)
            .expect("experiment failed")
            .metrics
            .acc
    };

    let full = run(AblationFlags::none());
    let mut flagged: Vec<(&str, f64)> = Vec::new();
    let variants: [(&str, fn(&mut AblationFlags)); 6] = [
        ("no_rcr", |f| f.no_rcr = true),
        ("no_dtr", |f| f.no_dtr = true),
        ("no_nf", |f| f.no_nf = true),
        ("no_cf", |f| f.no_cf = true),
        ("no_cc", |f| f.no_cc = true),
        ("no_mt", |f| f.no_mt = true),
    ];
    for (name, set) in variants {
        let mut flags = AblationFlags::none();
        set(&mut flags);
        flagged.push((name, run(flags)));
    }

    let nf_drop = full - flagged.iter().find(|(n, _)| *n == "no_nf").unwrap().1;
    let strictly_largest = flagged
        .iter()
        .filter(|(n, _)| *n != "no_nf")
        .all(|(_, acc)| full - acc < nf_drop);
    let none_helps = flagged.iter().all(|(_, acc)| *acc <= full + 0.01);

    let detail = format!(
        "full {:.4}; {}",
        full,
        flagged
            .iter()
            .map(|(n, a)| format!("{n} {a:.4} (drop {:+.4})", full - a))
            .collect::<Vec<_>>()
            .join(", ")
    );
    verdict(
        6,
        "ablation direction",
        strictly_largest && none_helps,
        &detail,
    );
}

// ---------------------------------------------------------------------------
// 7. Unit-level identities hold exactly.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_07_unit_values_hold_exactly() {
    // Triplet label mapping for all three relations.
    let mut truth = BTreeMap::new();
    for (user, comm) in [("a", 0), ("b", 0), ("c", 1), ("d", 0), ("e", 2)] {
        truth.insert(user.to_string(), comm);
    }
    let closer = label_triplet("a", "b", "c", &truth).unwrap();
    let similar_same = label_triplet("a", "b", "d", &truth).unwrap();
    let similar_diff = label_triplet("a", "c", "e", &truth).unwrap();
    let farther = label_triplet("a", "c", "b", &truth).unwrap();
    let labels_ok = closer.label() == Label::Closer
        && closer.y == 1.0
        && similar_same.label() == Label::Similar
        && similar_same.y == 0.5
        && similar_diff.label() == Label::Similar
        && similar_diff.y == 0.5
        && farther.label() == Label::Farther
        && farther.y == 0.0;

    // Constraint value on identical rows (0.5) and orthonormal rows (1/2K).
    let k = 4;
    let mut same = Mat::zeros(k, 3);
    for r in 0..k {
        same.row_mut(r).copy_from_slice(&[0.3, -0.7, 0.2]);
    }
    let identical_ok = (community_constraint(&same) - 0.5).abs() <= 1e-12;
    let mut ortho = Mat::zeros(k, k);
    for r in 0..k {
        ortho.row_mut(r)[r] = 1.0;
    }
    let ortho_ok = (community_constraint(&ortho) - 1.0 / (2.0 * k as f64)).abs() <= 1e-12;

    // Decision rule at 0.3 and the no-op mask.
    let rule_ok = classify_score(0.3) == Label::Farther;
    let view = MemberView {
        neigh: vec![(0, 1.0), (3, 2.0), (7, 1.0)],
        comm: Some(1),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mask_ok = apply_mask(&view, 0.0, &mut rng) == view;

    verdict(
        7,
        "unit identities",
        labels_ok && identical_ok && ortho_ok && rule_ok && mask_ok,
        &format!(
            "labels {labels_ok}, identical-row constraint {identical_ok}, \
             orthonormal-row constraint {ortho_ok}, decision rule {rule_ok}, zero-mask {mask_ok}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 8. With zero head bias, swapping j and k reflects the score around 1/2.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_08_score_head_is_antisymmetric() {
    let (_, _, _, mut model) = tiny_world();
    let k = model.config.k;
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        model.params.for_each_mut(|x| *x += rng.random_range(-0.3..0.3));
        model.params.b_o = 0.0;
        let mut raff = || UserAffiliation {
            main: (0..k).map(|_| rng.random::<f64>()).collect(),
            sparse: (0..k).map(|_| rng.random::<f64>()).collect(),
        };
        let (i, j, kk) = (raff(), raff(), raff());
        let forward = model.score_triplet(&i, &j, &kk);
        let swapped = model.score_triplet(&i, &kk, &j);
        worst = worst.max((forward + swapped - 1.0).abs());
    }

    verdict(
        8,
        "head antisymmetry",
        worst <= 1e-12,
        &format!("1000 random parameterizations, max |ŷ(i,j,k) + ŷ(i,k,j) − 1| = {worst:.2e}"),
    );
}

// ---------------------------------------------------------------------------
// 9. Identical seeds reproduce byte-identical checkpoints and reports.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_09_same_seed_same_bytes() {
    let plant = PlantConfig {
        num_communities: 3,
        mutual_users: 60,
        main_only_users: 10,
        sparse_only_users: 10,
        main_objects_per_community: 8,
        sparse_objects_per_community: 5,
        p_in: 0.6,
        p_out: 0.1,
        seed: 9,
    };
    let (ds, truth) = plant_synthetic_dataset(&plant).expect("planting failed");
    let cfg = TrainConfig {
        epochs: 4,
        seed: 909,
        ..TrainConfig::default()
    };
    let mut exp = Experiment::new(cfg, 80, 40);
    exp.delta = 0.7;

    let dir = tempfile::tempdir().expect("tempdir failed");
    let mut bytes = Vec::new();
    let mut reports = Vec::new();
    for run in 0..2 {
        let res = run_experiment(&ds, &truth, &exp).expect("experiment failed");
        let ckpt = dir.path().join(format!("ckpt{run}.json"));
        let metrics = dir.path().join(format!("metrics{run}.json"));
        save_checkpoint(&res.model, &ckpt).expect("save failed");
        write_metrics_json(&metrics, &res.metrics).expect("write failed");
        bytes.push((
            std::fs::read(&ckpt).unwrap(),
            std::fs::read(&metrics).unwrap(),
        ));
        reports.push(res.metrics);
    }

    let ckpt_identical = bytes[0].0 == bytes[1].0;
    let metrics_identical = bytes[0].1 == bytes[1].1 && reports[0] == reports[1];
    verdict(
        9,
        "determinism",
        ckpt_identical && metrics_identical,
        &format!(
            "checkpoint bytes identical: {ckpt_identical} ({} bytes); \
             metric reports identical: {metrics_identical}",
            bytes[0].0.len()
        ),
    );
}

// ---------------------------------------------------------------------------
// 10. Mutual users score at least as well as sparse-only users (soft check).
// ---------------------------------------------------------------------------

#[test]
fn acceptance_10_mutual_users_score_at_least_sparse_only() {
    let plant = PlantConfig {
        num_communities: 4,
        mutual_users: 160,
        main_only_users: 36,
        sparse_only_users: 36,
        main_objects_per_community: 12,
        sparse_objects_per_community: 8,
        p_in: 0.6,
        p_out: 0.05,
        seed: 10,
    };
    let (ds, truth) = plant_synthetic_dataset(&plant).expect("planting failed");

    let seeds = [31u64, 32, 33];
    let mut mu_mean = 0.0f64;
    let mut so_mean = 0.0f64;
    for &seed in &seeds {
        let cfg = TrainConfig {
            epochs: 15,
            seed,
            ..TrainConfig::default()
        };
        let mut exp = Experiment::new(cfg, 250, 100);
        exp.delta = 0.6;
        let res = run_experiment(&ds, &truth, &exp).expect("experiment failed");
        let rows =
            user_type_eval(&res.model, &res.view, &truth, 60, seed).expect("type eval failed");
        for (ty, report) in rows {
            match ty {
                UserType::Mutual => mu_mean += report.acc / seeds.len() as f64,
                UserType::SparseOnly => so_mean += report.acc / seeds.len() as f64,
                UserType::MainOnly => {}
            }
        }
    }

    verdict(
        10,
        "user-type ordering",
        mu_mean >= so_mean - 0.03,
        &format!(
            "mean over {} seeds: mutual ACC {mu_mean:.4}, sparse-only ACC {so_mean:.4}",
            seeds.len()
        ),
    );
}
