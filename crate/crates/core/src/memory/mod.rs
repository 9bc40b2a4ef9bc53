//! The branching episodic memory of a run.
//!
//! Edges are branching decisions (pick a host, a service, an entry point, an
//! exploit); nodes hold the instructions executed while that branch was
//! active. Retrieval walks from a node back to the root and returns exactly
//! the entries on that path, so sibling branches never leak into a prompt.

pub mod paths;

pub use paths::{render_path_guide, PathAnnotation, PathInfo};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::compress::{normalize, Granularity};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub u64);

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct EntryId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for EntryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    TargetHost,
    Service,
    EntryPoint,
    Exploit,
}

impl fmt::Display for BranchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BranchKind::TargetHost => "target_host",
            BranchKind::Service => "service",
            BranchKind::EntryPoint => "entry_point",
            BranchKind::Exploit => "exploit",
        })
    }
}

/// Structured tag identifying where a branch points. Only the applicable
/// fields are set; two loci are the same branch iff all fields agree.
#[derive(
    Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Locus {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub port: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exploit: Option<String>,
}

impl Locus {
    pub fn host(host: impl Into<String>) -> Self {
        Locus {
            host: Some(host.into()),
            ..Locus::default()
        }
    }
}

impl fmt::Display for Locus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(v) = &self.host {
            parts.push(format!("host={v}"));
        }
        if let Some(v) = &self.port {
            parts.push(format!("port={v}"));
        }
        if let Some(v) = &self.service {
            parts.push(format!("service={v}"));
        }
        if let Some(v) = &self.version {
            parts.push(format!("version={v}"));
        }
        if let Some(v) = &self.entry {
            parts.push(format!("entry={v}"));
        }
        if let Some(v) = &self.exploit {
            parts.push(format!("exploit={v}"));
        }
        f.write_str(&parts.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BranchDecision {
    pub kind: BranchKind,
    pub locus: Locus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Unexplored,
    Active,
    Exhausted,
    Succeeded,
}

impl NodeStatus {
    /// Terminal nodes sink to the end of any prioritization and count as
    /// executed in the path guide.
    pub fn is_terminal(self) -> bool {
        matches!(self, NodeStatus::Exhausted | NodeStatus::Succeeded)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryNode {
    pub node_id: NodeId,
    pub parent: Option<NodeId>,
    pub branch: BranchDecision,
    pub entries: Vec<EntryId>,
    pub children: Vec<NodeId>,
    pub status: NodeStatus,
    /// (vuln_likelihood in [0,1], exploit_rank; lower rank is better).
    pub priority_score: Option<(f64, u32)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub entry_id: EntryId,
    pub node_id: NodeId,
    pub instruction: String,
    pub intent: String,
    /// Raw captured bytes. Persisted as a separate blob file, not inside the
    /// tree document.
    #[serde(skip)]
    pub raw_output: Vec<u8>,
    pub fine: String,
    pub coarse: Option<String>,
    pub abstract_fragment: Option<String>,
    pub coarse_degraded: bool,
    pub abstract_degraded: bool,
    pub exit_status: Option<i32>,
    pub wall_time_secs: f64,
    /// Milliseconds since the epoch, strictly increasing across the tree.
    pub created_at_ms: u64,
    /// Tree-wide insertion counter; the chronological order of record().
    pub seq: u64,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown entry {0}")]
    UnknownEntry(EntryId),
}

/// One rendering returned by activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendering {
    pub entry_id: EntryId,
    pub node_id: NodeId,
    pub text: String,
    /// False when the requested granularity was not yet computed and the
    /// text fell back to a clipped fine rendering.
    pub granularity_met: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryTree {
    pub nodes: BTreeMap<NodeId, MemoryNode>,
    pub entries: BTreeMap<EntryId, MemoryEntry>,
    pub root: NodeId,
    next_node: u64,
    next_entry: u64,
    next_seq: u64,
    last_created_ms: u64,
}

impl MemoryTree {
    /// Fresh tree with a single active root node for the target.
    pub fn init(target: &str) -> MemoryTree {
        let root = NodeId(0);
        let mut nodes = BTreeMap::new();
        nodes.insert(
            root,
            MemoryNode {
                node_id: root,
                parent: None,
                branch: BranchDecision {
                    kind: BranchKind::TargetHost,
                    locus: Locus::host(target),
                },
                entries: Vec::new(),
                children: Vec::new(),
                status: NodeStatus::Active,
                priority_score: None,
            },
        );
        MemoryTree {
            nodes,
            entries: BTreeMap::new(),
            root,
            next_node: 1,
            next_entry: 0,
            next_seq: 0,
            last_created_ms: 0,
        }
    }

    pub fn node(&self, id: NodeId) -> Result<&MemoryNode, TreeError> {
        self.nodes.get(&id).ok_or(TreeError::UnknownNode(id))
    }

    pub fn entry(&self, id: EntryId) -> Result<&MemoryEntry, TreeError> {
        self.entries.get(&id).ok_or(TreeError::UnknownEntry(id))
    }

    /// Adds a child under `parent` for the decision, or returns the existing
    /// child that already carries the same decision. New nodes start
    /// unexplored.
    pub fn spawn_child(
        &mut self,
        parent: NodeId,
        decision: BranchDecision,
    ) -> Result<NodeId, TreeError> {
        let parent_node = self.node(parent)?;
        for &child_id in &parent_node.children {
            if self.nodes[&child_id].branch == decision {
                return Ok(child_id);
            }
        }
        let id = NodeId(self.next_node);
        self.next_node += 1;
        self.nodes.insert(
            id,
            MemoryNode {
                node_id: id,
                parent: Some(parent),
                branch: decision,
                entries: Vec::new(),
                children: Vec::new(),
                status: NodeStatus::Unexplored,
                priority_score: None,
            },
        );
        self.nodes.get_mut(&parent).unwrap().children.push(id);
        debug_assert!(self.ancestry_acyclic(id), "spawn created a parent cycle");
        Ok(id)
    }

    /// Appends an executed instruction to the node. The fine rendering is
    /// computed immediately; coarse and abstract arrive later via the
    /// compression setters.
    pub fn record(
        &mut self,
        node_id: NodeId,
        instruction: &str,
        intent: &str,
        raw_output: Vec<u8>,
        exit_status: Option<i32>,
        wall_time_secs: f64,
    ) -> Result<EntryId, TreeError> {
        self.node(node_id)?;
        let id = EntryId(self.next_entry);
        self.next_entry += 1;
        let seq = self.next_seq;
        self.next_seq += 1;
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        // monotone even when the wall clock stalls or steps backwards
        let created_at_ms = now.max(self.last_created_ms + 1);
        self.last_created_ms = created_at_ms;
        let fine = normalize(&raw_output);
        self.entries.insert(
            id,
            MemoryEntry {
                entry_id: id,
                node_id,
                instruction: instruction.to_string(),
                intent: intent.to_string(),
                raw_output,
                fine,
                coarse: None,
                abstract_fragment: None,
                coarse_degraded: false,
                abstract_degraded: false,
                exit_status,
                wall_time_secs,
                created_at_ms,
                seq,
            },
        );
        self.nodes.get_mut(&node_id).unwrap().entries.push(id);
        Ok(id)
    }

    pub fn set_coarse(
        &mut self,
        entry_id: EntryId,
        text: String,
        degraded: bool,
    ) -> Result<(), TreeError> {
        let e = self
            .entries
            .get_mut(&entry_id)
            .ok_or(TreeError::UnknownEntry(entry_id))?;
        e.coarse = Some(text);
        e.coarse_degraded = degraded;
        Ok(())
    }

    pub fn set_abstract_fragment(
        &mut self,
        entry_id: EntryId,
        text: String,
        degraded: bool,
    ) -> Result<(), TreeError> {
        let e = self
            .entries
            .get_mut(&entry_id)
            .ok_or(TreeError::UnknownEntry(entry_id))?;
        e.abstract_fragment = Some(text);
        e.abstract_degraded = degraded;
        Ok(())
    }

    pub fn set_status(&mut self, node_id: NodeId, status: NodeStatus) -> Result<(), TreeError> {
        self.nodes
            .get_mut(&node_id)
            .ok_or(TreeError::UnknownNode(node_id))?
            .status = status;
        Ok(())
    }

    /// Root-to-node path, root first.
    pub fn path_to(&self, node_id: NodeId) -> Result<Vec<NodeId>, TreeError> {
        self.node(node_id)?;
        let mut path = vec![node_id];
        let mut cur = node_id;
        while let Some(parent) = self.nodes[&cur].parent {
            path.push(parent);
            cur = parent;
        }
        path.reverse();
        Ok(path)
    }

    /// Located activation: the renderings of exactly the entries on the
    /// root→node path, in chronological (record) order. Sibling branches are
    /// excluded by construction.
    pub fn activate(
        &self,
        node_id: NodeId,
        granularity: Granularity,
    ) -> Result<Vec<Rendering>, TreeError> {
        let path = self.path_to(node_id)?;
        let mut ids: Vec<EntryId> = path
            .iter()
            .flat_map(|n| self.nodes[n].entries.iter().copied())
            .collect();
        ids.sort_by_key(|id| self.entries[id].seq);
        Ok(ids
            .into_iter()
            .map(|id| {
                let e = &self.entries[&id];
                let (text, met) = match granularity {
                    Granularity::Fine => (e.fine.clone(), true),
                    Granularity::Coarse => match &e.coarse {
                        Some(t) => (t.clone(), true),
                        None => (clip(&e.fine, 512), false),
                    },
                    Granularity::Abstract => match &e.abstract_fragment {
                        Some(t) => (t.clone(), true),
                        None => (clip(&e.fine, 1024), false),
                    },
                };
                Rendering {
                    entry_id: id,
                    node_id: e.node_id,
                    text,
                    granularity_met: met,
                }
            })
            .collect())
    }

    /// All root-to-leaf paths in depth-first order, annotated per node.
    pub fn enumerate_paths(&self) -> Vec<PathInfo> {
        paths::enumerate(self)
    }

    /// Reorders `node_id`'s children: vuln_likelihood descending, then
    /// exploit_rank ascending, insertion order as the tie-break; terminal
    /// children sink to the end regardless of score. Scores are partial;
    /// missing loci keep the zero-likelihood sentinel. Returns the new order.
    pub fn prioritize_children(
        &mut self,
        node_id: NodeId,
        scores: &BTreeMap<Locus, (f64, u32)>,
    ) -> Result<Vec<NodeId>, TreeError> {
        let children = self.node(node_id)?.children.clone();
        for &c in &children {
            if let Some(&score) = scores.get(&self.nodes[&c].branch.locus) {
                self.nodes.get_mut(&c).unwrap().priority_score = Some(score);
            }
        }
        let mut ordered = children;
        // stable sort keeps insertion order among equals
        ordered.sort_by(|a, b| {
            let na = &self.nodes[a];
            let nb = &self.nodes[b];
            let ta = na.status.is_terminal();
            let tb = nb.status.is_terminal();
            if ta != tb {
                return ta.cmp(&tb);
            }
            let (la, ra) = na.priority_score.unwrap_or((0.0, u32::MAX));
            let (lb, rb) = nb.priority_score.unwrap_or((0.0, u32::MAX));
            lb.total_cmp(&la).then(ra.cmp(&rb))
        });
        self.nodes.get_mut(&node_id).unwrap().children = ordered.clone();
        Ok(ordered)
    }

    /// Full structural validation: exactly one root, consistent parent/child
    /// links, acyclic, node count = edge count + 1, entry ownership matches.
    pub fn validate(&self) -> Result<(), String> {
        let roots: Vec<_> = self.nodes.values().filter(|n| n.parent.is_none()).collect();
        if roots.len() != 1 || roots[0].node_id != self.root {
            return Err(format!("expected exactly one root {}, found {}", self.root, roots.len()));
        }
        let mut edge_count = 0usize;
        for node in self.nodes.values() {
            for child in &node.children {
                edge_count += 1;
                let c = self
                    .nodes
                    .get(child)
                    .ok_or_else(|| format!("{} lists missing child {child}", node.node_id))?;
                if c.parent != Some(node.node_id) {
                    return Err(format!("{child} parent link disagrees with {}", node.node_id));
                }
            }
            if let Some(p) = node.parent {
                let parent = self
                    .nodes
                    .get(&p)
                    .ok_or_else(|| format!("{} has missing parent {p}", node.node_id))?;
                if !parent.children.contains(&node.node_id) {
                    return Err(format!("{p} does not list child {}", node.node_id));
                }
            }
            if !self.ancestry_acyclic(node.node_id) {
                return Err(format!("cycle through {}", node.node_id));
            }
            let mut last_seq = None;
            for entry_id in &node.entries {
                let e = self
                    .entries
                    .get(entry_id)
                    .ok_or_else(|| format!("{} lists missing entry {entry_id}", node.node_id))?;
                if e.node_id != node.node_id {
                    return Err(format!("{entry_id} owned by wrong node"));
                }
                if let Some(prev) = last_seq {
                    if e.seq <= prev {
                        return Err(format!("{entry_id} out of order on {}", node.node_id));
                    }
                }
                last_seq = Some(e.seq);
            }
        }
        if self.nodes.len() != edge_count + 1 {
            return Err(format!(
                "{} nodes but {} edges",
                self.nodes.len(),
                edge_count
            ));
        }
        let mut last_created = 0u64;
        let mut by_seq: Vec<&MemoryEntry> = self.entries.values().collect();
        by_seq.sort_by_key(|e| e.seq);
        for e in by_seq {
            if e.created_at_ms <= last_created {
                return Err(format!("{} created_at not strictly increasing", e.entry_id));
            }
            last_created = e.created_at_ms;
        }
        Ok(())
    }

    /// Walks parent links from `node`; true when the walk reaches a root
    /// without revisiting the start (cheap O(depth) guard used on mutation).
    fn ancestry_acyclic(&self, node: NodeId) -> bool {
        let mut cur = node;
        let mut steps = 0usize;
        while let Some(parent) = self.nodes[&cur].parent {
            if parent == node || steps > self.nodes.len() {
                return false;
            }
            cur = parent;
            steps += 1;
        }
        true
    }
}

fn clip(s: &str, n: usize) -> String {
    if s.chars().count() <= n {
        s.to_string()
    } else {
        s.chars().take(n).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn service(port: u16, name: &str) -> BranchDecision {
        BranchDecision {
            kind: BranchKind::Service,
            locus: Locus {
                host: Some("10.0.0.5".into()),
                port: Some(port),
                service: Some(name.into()),
                ..Locus::default()
            },
        }
    }

    fn exploit(id: &str) -> BranchDecision {
        BranchDecision {
            kind: BranchKind::Exploit,
            locus: Locus {
                exploit: Some(id.into()),
                ..Locus::default()
            },
        }
    }

    #[test]
    fn init_gives_single_active_root() {
        let tree = MemoryTree::init("10.10.0.0/24");
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.entries.len(), 0);
        let root = tree.node(tree.root).unwrap();
        assert_eq!(root.branch.kind, BranchKind::TargetHost);
        assert_eq!(root.status, NodeStatus::Active);
        assert!(tree.activate(tree.root, Granularity::Fine).unwrap().is_empty());
        tree.validate().unwrap();
    }

    #[test]
    fn spawn_is_idempotent_per_locus() {
        let mut tree = MemoryTree::init("10.0.0.5");
        let a = tree.spawn_child(tree.root, service(22, "ssh")).unwrap();
        let b = tree.spawn_child(tree.root, service(22, "ssh")).unwrap();
        assert_eq!(a, b);
        assert_eq!(tree.nodes.len(), 2);
    }

    #[test]
    fn two_services_one_exploit_makes_four_nodes_two_leaves() {
        let mut tree = MemoryTree::init("10.0.0.5");
        let s1 = tree.spawn_child(tree.root, service(22, "ssh")).unwrap();
        let _s2 = tree.spawn_child(tree.root, service(5984, "couchdb")).unwrap();
        tree.spawn_child(s1, exploit("EDB-1")).unwrap();
        assert_eq!(tree.nodes.len(), 4);
        let leaves = tree
            .nodes
            .values()
            .filter(|n| n.children.is_empty())
            .count();
        assert_eq!(leaves, 2);
        tree.validate().unwrap();
    }

    #[test]
    fn spawn_under_unknown_node_fails() {
        let mut tree = MemoryTree::init("10.0.0.5");
        let err = tree.spawn_child(NodeId(99), service(22, "ssh")).unwrap_err();
        assert_eq!(err, TreeError::UnknownNode(NodeId(99)));
    }

    #[test]
    fn record_appends_in_order_and_normalizes() {
        let mut tree = MemoryTree::init("10.0.0.5");
        let e1 = tree
            .record(tree.root, "ls", "look", b"\x1b[31mroot\x1b[0m".to_vec(), Some(0), 0.1)
            .unwrap();
        let e2 = tree
            .record(tree.root, "id", "check", b"uid=0\n".to_vec(), Some(0), 0.1)
            .unwrap();
        let root = tree.node(tree.root).unwrap();
        assert_eq!(root.entries, vec![e1, e2]);
        assert_eq!(tree.entry(e1).unwrap().fine, "root");
    }

    #[test]
    fn created_at_strictly_increases_over_many_records() {
        let mut tree = MemoryTree::init("10.0.0.5");
        let mut last = 0u64;
        for i in 0..100 {
            let id = tree
                .record(tree.root, "cmd", "why", format!("out {i}").into_bytes(), Some(0), 0.0)
                .unwrap();
            let at = tree.entry(id).unwrap().created_at_ms;
            assert!(at > last, "created_at must strictly increase");
            last = at;
        }
        tree.validate().unwrap();
    }

    #[test]
    fn activation_covers_exactly_the_path() {
        let mut tree = MemoryTree::init("10.0.0.5");
        let a = tree.spawn_child(tree.root, service(22, "ssh")).unwrap();
        let a_sib = tree.spawn_child(tree.root, service(80, "http")).unwrap();
        let b = tree.spawn_child(a, exploit("EDB-1")).unwrap();
        for _ in 0..2 {
            tree.record(tree.root, "c", "i", b"r".to_vec(), Some(0), 0.0).unwrap();
        }
        tree.record(a, "c", "i", b"a".to_vec(), Some(0), 0.0).unwrap();
        for _ in 0..3 {
            tree.record(b, "c", "i", b"b".to_vec(), Some(0), 0.0).unwrap();
        }
        for _ in 0..5 {
            tree.record(a_sib, "c", "i", b"sib".to_vec(), Some(0), 0.0).unwrap();
        }
        let act = tree.activate(b, Granularity::Fine).unwrap();
        assert_eq!(act.len(), 6, "2 at root + 1 at a + 3 at b, sibling excluded");
        assert!(act.iter().all(|r| r.text != "sib"));
        // chronological order
        let seqs: Vec<u64> = act.iter().map(|r| tree.entry(r.entry_id).unwrap().seq).collect();
        let mut sorted = seqs.clone();
        sorted.sort_unstable();
        assert_eq!(seqs, sorted);
    }

    #[test]
    fn activation_at_root_sees_only_root_entries() {
        let mut tree = MemoryTree::init("10.0.0.5");
        let a = tree.spawn_child(tree.root, service(22, "ssh")).unwrap();
        tree.record(tree.root, "c", "i", b"root-entry".to_vec(), Some(0), 0.0).unwrap();
        tree.record(a, "c", "i", b"child-entry".to_vec(), Some(0), 0.0).unwrap();
        let act = tree.activate(tree.root, Granularity::Fine).unwrap();
        assert_eq!(act.len(), 1);
        assert_eq!(act[0].text, "root-entry");
    }

    #[test]
    fn parent_activation_is_prefix_of_child_activation() {
        let mut tree = MemoryTree::init("10.0.0.5");
        let a = tree.spawn_child(tree.root, service(22, "ssh")).unwrap();
        tree.record(tree.root, "c", "i", b"r1".to_vec(), Some(0), 0.0).unwrap();
        tree.record(a, "c", "i", b"a1".to_vec(), Some(0), 0.0).unwrap();
        let parent: Vec<EntryId> = tree
            .activate(tree.root, Granularity::Fine)
            .unwrap()
            .iter()
            .map(|r| r.entry_id)
            .collect();
        let child: Vec<EntryId> = tree
            .activate(a, Granularity::Fine)
            .unwrap()
            .iter()
            .map(|r| r.entry_id)
            .collect();
        assert!(child.len() >= parent.len());
        assert!(parent.iter().all(|id| child.contains(id)));
    }

    #[test]
    fn coarse_activation_prefers_stored_rendering() {
        let mut tree = MemoryTree::init("10.0.0.5");
        let e = tree
            .record(tree.root, "nmap", "scan", b"lots of output".to_vec(), Some(0), 0.0)
            .unwrap();
        let before = tree.activate(tree.root, Granularity::Coarse).unwrap();
        assert!(!before[0].granularity_met, "no coarse yet: clipped fine fallback");
        tree.set_coarse(e, "scan summary".into(), false).unwrap();
        let after = tree.activate(tree.root, Granularity::Coarse).unwrap();
        assert!(after[0].granularity_met);
        assert_eq!(after[0].text, "scan summary");
    }

    #[test]
    fn prioritize_orders_by_likelihood_then_rank() {
        let mut tree = MemoryTree::init("10.0.0.5");
        let a = tree.spawn_child(tree.root, service(1, "a")).unwrap();
        let b = tree.spawn_child(tree.root, service(2, "b")).unwrap();
        let c = tree.spawn_child(tree.root, service(3, "c")).unwrap();
        let mut scores = BTreeMap::new();
        scores.insert(tree.nodes[&a].branch.locus.clone(), (0.9, 2));
        scores.insert(tree.nodes[&b].branch.locus.clone(), (0.9, 1));
        scores.insert(tree.nodes[&c].branch.locus.clone(), (0.4, 0));
        let order = tree.prioritize_children(tree.root, &scores).unwrap();
        assert_eq!(order, vec![b, a, c]);
    }

    #[test]
    fn prioritize_is_stable_on_equal_scores() {
        let mut tree = MemoryTree::init("10.0.0.5");
        let ids: Vec<NodeId> = (0..4)
            .map(|i| tree.spawn_child(tree.root, service(i, "svc")).unwrap())
            .collect();
        let order = tree.prioritize_children(tree.root, &BTreeMap::new()).unwrap();
        assert_eq!(order, ids, "no scores: insertion order preserved");
    }

    #[test]
    fn terminal_children_sink_even_with_top_scores() {
        let mut tree = MemoryTree::init("10.0.0.5");
        let a = tree.spawn_child(tree.root, service(1, "a")).unwrap();
        let b = tree.spawn_child(tree.root, service(2, "b")).unwrap();
        tree.set_status(a, NodeStatus::Exhausted).unwrap();
        let mut scores = BTreeMap::new();
        scores.insert(tree.nodes[&a].branch.locus.clone(), (1.0, 0));
        scores.insert(tree.nodes[&b].branch.locus.clone(), (0.1, 9));
        let order = tree.prioritize_children(tree.root, &scores).unwrap();
        assert_eq!(order, vec![b, a]);
    }

    #[test]
    fn prioritize_unknown_node_fails() {
        let mut tree = MemoryTree::init("10.0.0.5");
        assert!(tree.prioritize_children(NodeId(7), &BTreeMap::new()).is_err());
    }

    #[test]
    fn serde_round_trip_preserves_structure_and_ids() {
        let mut tree = MemoryTree::init("10.0.0.5");
        let a = tree.spawn_child(tree.root, service(22, "ssh")).unwrap();
        let e = tree.record(a, "id", "check", b"uid=0(root)".to_vec(), Some(0), 0.2).unwrap();
        tree.set_coarse(e, "confirmed root".into(), false).unwrap();
        let json = serde_json::to_string_pretty(&tree).unwrap();
        let back: MemoryTree = serde_json::from_str(&json).unwrap();
        back.validate().unwrap();
        assert_eq!(back.nodes.len(), tree.nodes.len());
        assert_eq!(back.root, tree.root);
        assert_eq!(back.node(a).unwrap().branch, tree.node(a).unwrap().branch);
        let back_entry = back.entry(e).unwrap();
        assert_eq!(back_entry.fine, "uid=0(root)");
        assert_eq!(back_entry.coarse.as_deref(), Some("confirmed root"));
        // raw bytes live in blob files, not the tree document
        assert!(back_entry.raw_output.is_empty());
        // a second spawn after the round trip must not reuse ids
        let mut back = back;
        let fresh = back.spawn_child(back.root, service(80, "http")).unwrap();
        assert_ne!(fresh, a);
    }
}
