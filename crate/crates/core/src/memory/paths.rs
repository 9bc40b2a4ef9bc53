//! Depth-first path enumeration and the textual path guide.

use serde::{Deserialize, Serialize};

use super::{MemoryTree, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathAnnotation {
    Executed,
    Unexecuted,
}

/// One root-to-leaf path with a per-node annotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathInfo {
    pub nodes: Vec<NodeId>,
    pub annotations: Vec<PathAnnotation>,
}

impl PathInfo {
    pub fn fully_executed(&self) -> bool {
        self.annotations.iter().all(|a| *a == PathAnnotation::Executed)
    }
}

/// All root-to-leaf paths, depth-first, respecting the current child order.
/// A node counts as executed once it holds an entry or reached a terminal
/// status.
pub fn enumerate(tree: &MemoryTree) -> Vec<PathInfo> {
    let mut out = Vec::new();
    let mut stack: Vec<NodeId> = Vec::new();
    walk(tree, tree.root, &mut stack, &mut out);
    out
}

fn walk(tree: &MemoryTree, node: NodeId, stack: &mut Vec<NodeId>, out: &mut Vec<PathInfo>) {
    stack.push(node);
    let n = &tree.nodes[&node];
    if n.children.is_empty() {
        let annotations = stack
            .iter()
            .map(|id| {
                let n = &tree.nodes[id];
                if !n.entries.is_empty() || n.status.is_terminal() {
                    PathAnnotation::Executed
                } else {
                    PathAnnotation::Unexecuted
                }
            })
            .collect();
        out.push(PathInfo {
            nodes: stack.clone(),
            annotations,
        });
    } else {
        for child in n.children.clone() {
            walk(tree, child, stack, out);
        }
    }
    stack.pop();
}

/// Renders the enumerated paths for a planning prompt. One line per path;
/// segments carry the branch decision, the executed/unexecuted annotation,
/// terminal statuses, any priority score, and a marker on the current node.
pub fn render_path_guide(tree: &MemoryTree, current: NodeId) -> String {
    let paths = enumerate(tree);
    let mut lines = Vec::with_capacity(paths.len());
    for (i, path) in paths.iter().enumerate() {
        let segments: Vec<String> = path
            .nodes
            .iter()
            .zip(&path.annotations)
            .map(|(id, ann)| {
                let n = &tree.nodes[id];
                let mut tags = vec![match ann {
                    PathAnnotation::Executed => "executed".to_string(),
                    PathAnnotation::Unexecuted => "unexecuted".to_string(),
                }];
                match n.status {
                    super::NodeStatus::Exhausted => tags.push("exhausted".into()),
                    super::NodeStatus::Succeeded => tags.push("succeeded".into()),
                    _ => {}
                }
                if let Some((likelihood, rank)) = n.priority_score {
                    tags.push(format!("likelihood {likelihood:.2}"));
                    if rank != u32::MAX {
                        tags.push(format!("rank {rank}"));
                    }
                }
                if *id == current {
                    tags.push("current".into());
                }
                format!("{} {} [{}]", n.branch.kind, n.branch.locus, tags.join(", "))
            })
            .collect();
        lines.push(format!("path {}: {}", i + 1, segments.join(" -> ")));
    }
    lines.join("\n")
}

#[cfg(test)]
mod tests {
    use super::super::{BranchDecision, BranchKind, Locus, MemoryTree, NodeStatus};
    use super::*;

    fn service(host: &str, port: u16, name: &str) -> BranchDecision {
        BranchDecision {
            kind: BranchKind::Service,
            locus: Locus {
                host: Some(host.into()),
                port: Some(port),
                service: Some(name.into()),
                ..Locus::default()
            },
        }
    }

    #[test]
    fn fresh_tree_has_one_unexecuted_path() {
        let tree = MemoryTree::init("10.0.0.5");
        let paths = tree.enumerate_paths();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].nodes, vec![tree.root]);
        assert_eq!(paths[0].annotations, vec![PathAnnotation::Unexecuted]);
    }

    #[test]
    fn star_tree_gives_one_path_per_leaf() {
        let mut tree = MemoryTree::init("10.0.0.5");
        for port in [21, 22, 80, 443] {
            tree.spawn_child(tree.root, service("10.0.0.5", port, "svc")).unwrap();
        }
        let paths = tree.enumerate_paths();
        assert_eq!(paths.len(), 4);
        assert!(paths.iter().all(|p| p.nodes.len() == 2));
    }

    #[test]
    fn executed_annotation_follows_entries_and_status() {
        let mut tree = MemoryTree::init("10.0.0.5");
        let a = tree.spawn_child(tree.root, service("10.0.0.5", 22, "ssh")).unwrap();
        let b = tree.spawn_child(tree.root, service("10.0.0.5", 80, "http")).unwrap();
        tree.record(tree.root, "scan", "find ports", b"out".to_vec(), Some(0), 0.1)
            .unwrap();
        tree.set_status(a, NodeStatus::Exhausted).unwrap();
        let paths = tree.enumerate_paths();
        // root has an entry; a is terminal; b is untouched
        let path_a = paths.iter().find(|p| p.nodes.contains(&a)).unwrap();
        assert_eq!(
            path_a.annotations,
            vec![PathAnnotation::Executed, PathAnnotation::Executed]
        );
        let path_b = paths.iter().find(|p| p.nodes.contains(&b)).unwrap();
        assert_eq!(
            path_b.annotations,
            vec![PathAnnotation::Executed, PathAnnotation::Unexecuted]
        );
    }

    #[test]
    fn guide_marks_current_and_priorities() {
        let mut tree = MemoryTree::init("10.0.0.5");
        let a = tree.spawn_child(tree.root, service("10.0.0.5", 22, "ssh")).unwrap();
        let mut scores = std::collections::BTreeMap::new();
        scores.insert(tree.nodes[&a].branch.locus.clone(), (0.9, 1));
        tree.prioritize_children(tree.root, &scores).unwrap();
        let guide = render_path_guide(&tree, a);
        assert!(guide.contains("current"));
        assert!(guide.contains("likelihood 0.90"));
        assert!(guide.contains("rank 1"));
        assert!(guide.starts_with("path 1: target_host host=10.0.0.5"));
    }
}
