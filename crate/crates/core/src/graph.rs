//! Bipartite user-object graphs and the two-graph dataset they form.
//!
//! A [`BipartiteGraph`] stores users, objects, and weighted links; indices are
//! assigned in first-appearance order so multi-hot dimensions stay stable
//! across runs. A [`CrossGraphDataset`] pairs a dense "main" graph with a
//! sparse one and classifies every user as mutual, main-only, or sparse-only.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One user-object link with an aggregated positive weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    /// Index into the graph's user id list.
    pub user: usize,
    /// Index into the graph's object id list.
    pub object: usize,
    /// Strictly positive, finite weight.
    pub weight: f64,
}

/// Immutable bipartite graph over opaque string identifiers.
///
/// Duplicate `(user, object)` pairs aggregate additively at construction, so
/// the stored link list has no duplicates and keeps first-appearance order.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    domain_tag: String,
    user_ids: Vec<String>,
    object_ids: Vec<String>,
    user_index: HashMap<String, usize>,
    object_index: HashMap<String, usize>,
    links: Vec<Link>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

/// Incremental constructor for [`BipartiteGraph`].
///
/// Users and objects may be registered ahead of any links so that isolated
/// nodes stay in the id space (needed by sparsification and cold-start users).
#[derive(Debug)]
pub struct GraphBuilder {
    domain_tag: String,
    user_ids: Vec<String>,
    object_ids: Vec<String>,
    user_index: HashMap<String, usize>,
    object_index: HashMap<String, usize>,
    links: Vec<Link>,
    link_slots: HashMap<(usize, usize), usize>,
}

impl GraphBuilder {
    /// Empty builder carrying the graph's domain tag.
    pub fn new(domain_tag: impl Into<String>) -> Self {
        GraphBuilder {
            domain_tag: domain_tag.into(),
            user_ids: Vec::new(),
            object_ids: Vec::new(),
            user_index: HashMap::new(),
            object_index: HashMap::new(),
            links: Vec::new(),
            link_slots: HashMap::new(),
        }
    }

    /// Registers a user, returning its stable index. Idempotent.
    pub fn add_user(&mut self, id: &str) -> usize {
        if let Some(&idx) = self.user_index.get(id) {
            return idx;
        }
        let idx = self.user_ids.len();
        self.user_ids.push(id.to_string());
        self.user_index.insert(id.to_string(), idx);
        idx
    }

    /// Registers an object, returning its stable index. Idempotent.
    pub fn add_object(&mut self, id: &str) -> usize {
        if let Some(&idx) = self.object_index.get(id) {
            return idx;
        }
        let idx = self.object_ids.len();
        self.object_ids.push(id.to_string());
        self.object_index.insert(id.to_string(), idx);
        idx
    }

    /// Adds a link, aggregating the weight into an existing `(user, object)`
    /// pair if one was added before.
    pub fn add_link(&mut self, user: &str, object: &str, weight: f64) -> Result<()> {
        if !weight.is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite link weight for ({user}, {object})"
            )));
        }
        if weight <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "non-positive link weight for ({user}, {object})"
            )));
        }
        let u = self.add_user(user);
        let o = self.add_object(object);
        match self.link_slots.get(&(u, o)) {
            Some(&slot) => self.links[slot].weight += weight,
            None => {
                self.link_slots.insert((u, o), self.links.len());
                self.links.push(Link {
                    user: u,
                    object: o,
                    weight,
                });
            }
        }
        Ok(())
    }

    /// Finalizes the graph and builds per-user adjacency.
    pub fn finish(self) -> BipartiteGraph {
        let mut adjacency = vec![Vec::new(); self.user_ids.len()];
        for link in &self.links {
            adjacency[link.user].push((link.object, link.weight));
        }
        BipartiteGraph {
            domain_tag: self.domain_tag,
            user_ids: self.user_ids,
            object_ids: self.object_ids,
            user_index: self.user_index,
            object_index: self.object_index,
            links: self.links,
            adjacency,
        }
    }
}

impl BipartiteGraph {
    /// Domain tag ("main", "sparse", or free text).
    pub fn domain_tag(&self) -> &str {
        &self.domain_tag
    }

    /// User ids in first-appearance order.
    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    /// Object ids in first-appearance order.
    pub fn object_ids(&self) -> &[String] {
        &self.object_ids
    }

    /// Number of users in the id space (isolated users included).
    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    /// Number of objects in the id space (isolated objects included).
    pub fn num_objects(&self) -> usize {
        self.object_ids.len()
    }

    /// Aggregated links in first-appearance order.
    pub fn links(&self) -> &[Link] {
        &self.links
    }

    /// Index of a user id, if present.
    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    /// Index of an object id, if present.
    pub fn object_index(&self, id: &str) -> Option<usize> {
        self.object_index.get(id).copied()
    }

    /// True when the user id is in this graph's id space.
    pub fn has_user(&self, id: &str) -> bool {
        self.user_index.contains_key(id)
    }

    /// Sparse multi-hot view of a user: `(object_index, weight)` pairs in link
    /// order. Empty for absent or isolated users (the cold-start contract).
    pub fn multi_hot(&self, user_id: &str) -> &[(usize, f64)] {
        match self.user_index.get(user_id) {
            Some(&u) => &self.adjacency[u],
            None => &[],
        }
    }

    /// Sum of all link weights.
    pub fn total_weight(&self) -> f64 {
        self.links.iter().map(|l| l.weight).sum()
    }

    /// Copy of this graph with the same id spaces but only the given links.
    fn with_links(&self, links: Vec<Link>) -> BipartiteGraph {
        let mut adjacency = vec![Vec::new(); self.user_ids.len()];
        for link in &links {
            adjacency[link.user].push((link.object, link.weight));
        }
        BipartiteGraph {
            domain_tag: self.domain_tag.clone(),
            user_ids: self.user_ids.clone(),
            object_ids: self.object_ids.clone(),
            user_index: self.user_index.clone(),
            object_index: self.object_index.clone(),
            links,
            adjacency,
        }
    }
}

/// Parses a tab-separated edge list: `user_id<TAB>object_id[<TAB>weight]` per
/// line, `#`-prefixed comment lines and blank lines ignored, weight default 1.
///
/// Duplicate pairs aggregate. Id indices follow first-appearance order.
pub fn load_edge_list(path: impl AsRef<Path>, domain_tag: &str) -> Result<BipartiteGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let graph = parse_edge_list(&text, domain_tag)
        .map_err(|msg| Error::Parse(format!("{}: {msg}", path.display())))?;
    Ok(graph)
}

fn parse_edge_list(text: &str, domain_tag: &str) -> std::result::Result<BipartiteGraph, String> {
    let mut builder = GraphBuilder::new(domain_tag);
    let mut n_links = 0usize;
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 && fields.len() != 3 {
            return Err(format!(
                "expected 2 or 3 tab-separated fields at line {line_no}, found {}",
                fields.len()
            ));
        }
        let weight = if fields.len() == 3 {
            fields[2]
                .trim()
                .parse::<f64>()
                .map_err(|_| format!("invalid weight '{}' at line {line_no}", fields[2]))?
        } else {
            1.0
        };
        if !weight.is_finite() {
            return Err(format!("non-finite weight at line {line_no}"));
        }
        if weight <= 0.0 {
            return Err(format!("non-positive weight at line {line_no}"));
        }
        builder
            .add_link(fields[0], fields[1], weight)
            .map_err(|e| e.to_string())?;
        n_links += 1;
    }
    if n_links == 0 {
        return Err("empty edge list (no links found)".to_string());
    }
    Ok(builder.finish())
}

/// Writes a graph back to edge-list format. Loading the output reproduces an
/// identical graph: links are emitted in stored (first-appearance) order, so
/// id indices survive the round trip.
pub fn write_edge_list(graph: &BipartiteGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for link in graph.links() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            graph.user_ids[link.user], graph.object_ids[link.object], link.weight
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Keeps `round(delta * |links|)` links sampled uniformly without replacement,
/// deterministic for a given seed. All users and objects stay in the id space
/// even if every link touching them is dropped.
pub fn sparsify(graph: &BipartiteGraph, delta: f64, seed: u64) -> Result<BipartiteGraph> {
    if !(delta > 0.0 && delta <= 1.0) || delta.is_nan() {
        return Err(Error::InvalidInput(format!(
            "sparsify delta must lie in (0, 1], got {delta}"
        )));
    }
    let n = graph.links.len();
    let keep = (delta * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, n, keep.min(n)).into_vec();
    chosen.sort_unstable();
    let links = chosen.into_iter().map(|i| graph.links[i]).collect();
    Ok(graph.with_links(links))
}

/// How a user relates to the two graphs of a [`CrossGraphDataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UserType {
    /// Present in both graphs; the bridge for cross-graph propagation.
    Mutual,
    /// Present only in the main graph.
    MainOnly,
    /// Present only in the sparse graph.
    SparseOnly,
}

impl UserType {
    /// Short display name: MU, MO, or SO.
    pub fn short(&self) -> &'static str {
        match self {
            UserType::Mutual => "MU",
            UserType::MainOnly => "MO",
            UserType::SparseOnly => "SO",
        }
    }
}

/// A dense main graph paired with a sparse graph over a shared user universe.
#[derive(Debug, Clone)]
pub struct CrossGraphDataset {
    /// The dense auxiliary graph.
    pub main: BipartiteGraph,
    /// The sparse target graph (possibly a sparsified training view).
    pub sparse: BipartiteGraph,
    mutual_users: BTreeSet<String>,
    user_type: BTreeMap<String, UserType>,
}

/// Assembles the two graphs into a dataset, classifying every user.
///
/// Errors when either graph has no links or when the two object id spaces
/// overlap. An empty mutual-user set is allowed (training requires mutual
/// users, but evaluating main-only/sparse-only users does not); callers can
/// check [`CrossGraphDataset::mutual_users`] and warn.
pub fn build_cross_dataset(
    main: BipartiteGraph,
    sparse: BipartiteGraph,
) -> Result<CrossGraphDataset> {
    if main.links.is_empty() {
        return Err(Error::InvalidInput(
            "main graph has no links (empty graph)".to_string(),
        ));
    }
    if sparse.links.is_empty() {
        return Err(Error::InvalidInput(
            "sparse graph has no links (empty graph)".to_string(),
        ));
    }
    if let Some(shared) = main
        .object_ids
        .iter()
        .find(|id| sparse.object_index.contains_key(*id))
    {
        return Err(Error::InvalidInput(format!(
            "object id spaces must be disjoint; '{shared}' appears in both graphs"
        )));
    }
    let mut mutual_users = BTreeSet::new();
    let mut user_type = BTreeMap::new();
    for id in &main.user_ids {
        if sparse.user_index.contains_key(id) {
            mutual_users.insert(id.clone());
            user_type.insert(id.clone(), UserType::Mutual);
        } else {
            user_type.insert(id.clone(), UserType::MainOnly);
        }
    }
    for id in &sparse.user_ids {
        user_type
            .entry(id.clone())
            .or_insert(UserType::SparseOnly);
    }
    Ok(CrossGraphDataset {
        main,
        sparse,
        mutual_users,
        user_type,
    })
}

impl CrossGraphDataset {
    /// Users present in both graphs, in lexicographic order.
    pub fn mutual_users(&self) -> &BTreeSet<String> {
        &self.mutual_users
    }

    /// The user's type, if the user exists in either graph.
    pub fn user_type(&self, id: &str) -> Option<UserType> {
        self.user_type.get(id).copied()
    }

    /// All users of one type, in lexicographic order.
    pub fn users_of_type(&self, ty: UserType) -> Vec<String> {
        self.user_type
            .iter()
            .filter(|(_, t)| **t == ty)
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Total number of distinct users across both graphs.
    pub fn num_users(&self) -> usize {
        self.user_type.len()
    }

    /// Same dataset with the sparse side replaced by a sparsified view.
    /// User types are unchanged because sparsification preserves id spaces.
    pub fn with_sparse_view(&self, delta: f64, seed: u64) -> Result<CrossGraphDataset> {
        let view = sparsify(&self.sparse, delta, seed)?;
        Ok(CrossGraphDataset {
            main: self.main.clone(),
            sparse: view,
            mutual_users: self.mutual_users.clone(),
            user_type: self.user_type.clone(),
        })
    }
}

/// One graph entry of a [`DatasetManifest`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Edge-list path, resolved relative to the manifest file's directory.
    pub path: String,
    /// Domain tag to attach on load.
    pub domain_tag: String,
}

/// Small JSON file naming the two edge lists of a dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// The dense main graph.
    pub main: ManifestEntry,
    /// The sparse target graph.
    pub sparse: ManifestEntry,
}

/// Writes a dataset manifest as pretty JSON.
pub fn write_dataset_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::InvalidInput(format!("manifest serialization failed: {e}")))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Reads a manifest and loads both graphs into a dataset. Relative edge-list
/// paths are resolved against the manifest's directory.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<CrossGraphDataset> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", manifest_path.display())))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &str| {
        let candidate = Path::new(p);
        if candidate.is_absolute() {
            candidate.to_path_buf()
        } else {
            base.join(candidate)
        }
    };
    let main = load_edge_list(resolve(&manifest.main.path), &manifest.main.domain_tag)?;
    let sparse = load_edge_list(resolve(&manifest.sparse.path), &manifest.sparse.domain_tag)?;
    build_cross_dataset(main, sparse)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph_from(text: &str, tag: &str) -> BipartiteGraph {
        parse_edge_list(text, tag).expect("parse")
    }

    #[test]
    fn load_counts_users_objects_links() {
        let g = graph_from("a\tx\na\ty\nb\tx\n", "main");
        assert_eq!(g.num_users(), 2);
        assert_eq!(g.num_objects(), 2);
        assert_eq!(g.links().len(), 3);
        assert_eq!(g.user_ids(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn duplicate_links_aggregate_weights() {
        let g = graph_from("a\tx\na\tx\n", "main");
        assert_eq!(g.links().len(), 1);
        assert_eq!(g.links()[0].weight, 2.0);
    }

    #[test]
    fn negative_weight_reports_line_number() {
        let err = parse_edge_list("a\tx\t-1\n", "main").unwrap_err();
        assert_eq!(err, "non-positive weight at line 1");
        let err = parse_edge_list("a\tx\nb\ty\t0\n", "main").unwrap_err();
        assert_eq!(err, "non-positive weight at line 2");
    }

    #[test]
    fn comments_and_blanks_are_skipped_but_count_toward_line_numbers() {
        let g = graph_from("# header\n\na\tx\n", "main");
        assert_eq!(g.links().len(), 1);
        let err = parse_edge_list("# header\na\tx\t-2\n", "main").unwrap_err();
        assert_eq!(err, "non-positive weight at line 2");
    }

    #[test]
    fn malformed_line_is_rejected() {
        let err = parse_edge_list("a\n", "main").unwrap_err();
        assert!(err.contains("line 1"), "{err}");
        let err = parse_edge_list("a\tx\t1\textra\n", "main").unwrap_err();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(parse_edge_list("", "main").is_err());
        assert!(parse_edge_list("# only a comment\n", "main").is_err());
    }

    #[test]
    fn default_weight_is_one_and_explicit_weight_parses() {
        let g = graph_from("a\tx\na\ty\t2.5\n", "main");
        assert_eq!(g.multi_hot("a"), &[(0, 1.0), (1, 2.5)]);
    }

    #[test]
    fn round_trip_preserves_graph_exactly() {
        let g = graph_from("b\ty\t0.5\na\tx\nb\tx\t3\na\tx\n", "main");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.tsv");
        write_edge_list(&g, &path).unwrap();
        let loaded = load_edge_list(&path, "main").unwrap();
        assert_eq!(g, loaded);
    }

    #[test]
    fn multi_hot_is_empty_for_absent_and_isolated_users() {
        let g = graph_from("a\tx\n", "main");
        assert!(g.multi_hot("nobody").is_empty());
        let view = sparsify(&g, 0.4, 1).unwrap(); // round(0.4) = 0 links kept
        assert_eq!(view.links().len(), 0);
        assert!(view.multi_hot("a").is_empty());
        assert!(view.has_user("a"), "isolated user stays in the id space");
    }

    #[test]
    fn sparsify_keeps_rounded_fraction_and_is_deterministic() {
        let mut text = String::new();
        for i in 0..10 {
            text.push_str(&format!("u{i}\to{i}\n"));
        }
        let g = graph_from(&text, "sparse");
        let a = sparsify(&g, 0.5, 7).unwrap();
        let b = sparsify(&g, 0.5, 7).unwrap();
        assert_eq!(a.links().len(), 5);
        assert_eq!(a, b);
        let full = sparsify(&g, 1.0, 7).unwrap();
        assert_eq!(full.links(), g.links());
        assert!(sparsify(&g, 0.0, 7).is_err());
        assert!(sparsify(&g, 1.5, 7).is_err());
    }

    #[test]
    fn sparsify_output_is_a_sub_multiset_in_original_order() {
        let mut text = String::new();
        for i in 0..40 {
            text.push_str(&format!("u{}\to{}\t{}\n", i % 7, i, 1.0 + i as f64));
        }
        let g = graph_from(&text, "sparse");
        for seed in 0..5u64 {
            let view = sparsify(&g, 0.3, seed).unwrap();
            let mut cursor = 0usize;
            for link in view.links() {
                // every kept link appears in the original list, in order
                while cursor < g.links().len() && g.links()[cursor] != *link {
                    cursor += 1;
                }
                assert!(cursor < g.links().len(), "link not found in source order");
                cursor += 1;
            }
        }
    }

    #[test]
    fn cross_dataset_classifies_user_types() {
        let main = graph_from("a\tx\nb\tx\n", "main");
        let sparse = graph_from("b\tp\nc\tp\n", "sparse");
        let ds = build_cross_dataset(main, sparse).unwrap();
        assert_eq!(ds.mutual_users().len(), 1);
        assert!(ds.mutual_users().contains("b"));
        assert_eq!(ds.user_type("a"), Some(UserType::MainOnly));
        assert_eq!(ds.user_type("b"), Some(UserType::Mutual));
        assert_eq!(ds.user_type("c"), Some(UserType::SparseOnly));
        assert_eq!(ds.num_users(), 3);
    }

    #[test]
    fn identical_user_sets_are_all_mutual_and_disjoint_sets_have_none() {
        let main = graph_from("a\tx\nb\tx\n", "main");
        let sparse = graph_from("a\tp\nb\tp\n", "sparse");
        let ds = build_cross_dataset(main, sparse).unwrap();
        assert_eq!(ds.mutual_users().len(), 2);
        assert!(ds.users_of_type(UserType::MainOnly).is_empty());
        assert!(ds.users_of_type(UserType::SparseOnly).is_empty());

        let main = graph_from("a\tx\n", "main");
        let sparse = graph_from("b\tp\n", "sparse");
        let ds = build_cross_dataset(main, sparse).unwrap();
        assert!(ds.mutual_users().is_empty(), "warning case, not an error");
    }

    #[test]
    fn overlapping_object_spaces_are_rejected() {
        let main = graph_from("a\tx\n", "main");
        let sparse = graph_from("a\tx\n", "sparse");
        assert!(build_cross_dataset(main, sparse).is_err());
    }

    #[test]
    fn user_type_partition_covers_every_user_exactly_once() {
        let main = graph_from("a\tx\nb\tx\nc\ty\n", "main");
        let sparse = graph_from("b\tp\nd\tq\n", "sparse");
        let ds = build_cross_dataset(main, sparse).unwrap();
        let mu = ds.users_of_type(UserType::Mutual);
        let mo = ds.users_of_type(UserType::MainOnly);
        let so = ds.users_of_type(UserType::SparseOnly);
        assert_eq!(mu.len() + mo.len() + so.len(), ds.num_users());
        for id in mu.iter().chain(&mo).chain(&so) {
            assert!(ds.user_type(id).is_some());
        }
    }

    #[test]
    fn manifest_round_trip_loads_dataset() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("m.tsv"), "a\tx\nb\tx\n").unwrap();
        fs::write(dir.path().join("s.tsv"), "b\tp\n").unwrap();
        let manifest = DatasetManifest {
            main: ManifestEntry {
                path: "m.tsv".to_string(),
                domain_tag: "main".to_string(),
            },
            sparse: ManifestEntry {
                path: "s.tsv".to_string(),
                domain_tag: "sparse".to_string(),
            },
        };
        let mpath = dir.path().join("dataset.json");
        write_dataset_manifest(&manifest, &mpath).unwrap();
        let ds = load_dataset(&mpath).unwrap();
        assert_eq!(ds.main.domain_tag(), "main");
        assert_eq!(ds.sparse.domain_tag(), "sparse");
        assert!(ds.mutual_users().contains("b"));
    }
}
