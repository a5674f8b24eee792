//! Skeleton graphs and semantic keypoint groups.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

/// A predefined group of keypoints treated as one node during inter-part
/// reasoning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hyperedge {
    pub name: String,
    pub members: Vec<usize>,
}

impl Hyperedge {
    pub fn new(name: &str, members: &[usize]) -> Self {
        Self {
            name: name.into(),
            members: members.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NameCount { names: usize, k: usize },
    EdgeOutOfRange { a: usize, b: usize },
    SelfLoop(usize),
    MemberOutOfRange { hyperedge: String, member: usize },
    EmptyHyperedge(String),
    UncoveredKeypoint(usize),
    IsolatedKeypoint(usize),
    Disconnected,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NameCount { names, k } => write!(f, "{names} names for {k} keypoints"),
            Violation::EdgeOutOfRange { a, b } => write!(f, "edge ({a}, {b}) out of range"),
            Violation::SelfLoop(k) => write!(f, "self-loop on keypoint {k}"),
            Violation::MemberOutOfRange { hyperedge, member } => {
                write!(f, "hyperedge {hyperedge} names keypoint {member} out of range")
            }
            Violation::EmptyHyperedge(h) => write!(f, "hyperedge {h} is empty"),
            Violation::UncoveredKeypoint(k) => write!(f, "uncovered keypoint {k}"),
            Violation::IsolatedKeypoint(k) => write!(f, "isolated keypoint {k}"),
            Violation::Disconnected => write!(f, "skeleton edges do not connect all keypoints"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SkeletonError {
    #[error("invalid skeleton: {}", join(.0))]
    Invalid(Vec<Violation>),
    #[error("keypoint {index} out of range for K = {k}")]
    OutOfRange { index: usize, k: usize },
    #[error("permutation is not a bijection on 0..{0}")]
    BadPermutation(usize),
}

fn join(v: &[Violation]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    parts.join("; ")
}

/// Keypoint count, physical edges and semantic hyperedges of a skeleton.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonSpec {
    names: Vec<String>,
    edges: Vec<(usize, usize)>,
    hyperedges: Vec<Hyperedge>,
    adjacency: Vec<Vec<usize>>,
    group_of: Vec<Vec<usize>>,
}

/// Edges as sorted `(low, high)` pairs with duplicates removed.
fn normalize_edges(edges: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let set: BTreeSet<(usize, usize)> = edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    set.into_iter().collect()
}

/// Lists every invariant violation of a candidate skeleton; empty when valid.
pub fn validate(names: &[String], edges: &[(usize, usize)], hyperedges: &[Hyperedge]) -> Vec<Violation> {
    let k = names.len();
    let mut out = Vec::new();
    if k == 0 {
        out.push(Violation::NameCount { names: 0, k: 0 });
        return out;
    }
    let edges = normalize_edges(edges);
    let mut adj = vec![Vec::new(); k];
    for &(a, b) in &edges {
        if a >= k || b >= k {
            out.push(Violation::EdgeOutOfRange { a, b });
        } else if a == b {
            out.push(Violation::SelfLoop(a));
        } else {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut covered = vec![false; k];
    for h in hyperedges {
        if h.members.is_empty() {
            out.push(Violation::EmptyHyperedge(h.name.clone()));
        }
        for &m in &h.members {
            if m >= k {
                out.push(Violation::MemberOutOfRange {
                    hyperedge: h.name.clone(),
                    member: m,
                });
            } else {
                covered[m] = true;
            }
        }
    }
    for (i, c) in covered.iter().enumerate() {
        if !c {
            out.push(Violation::UncoveredKeypoint(i));
        }
    }
    for (i, a) in adj.iter().enumerate() {
        if a.is_empty() {
            out.push(Violation::IsolatedKeypoint(i));
        }
    }
    let mut seen = vec![false; k];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    if seen.iter().any(|s| !s) {
        out.push(Violation::Disconnected);
    }
    out
}

impl SkeletonSpec {
    pub fn new(
        names: Vec<String>,
        edges: &[(usize, usize)],
        hyperedges: Vec<Hyperedge>,
    ) -> Result<Self, SkeletonError> {
        let violations = validate(&names, edges, &hyperedges);
        if !violations.is_empty() {
            return Err(SkeletonError::Invalid(violations));
        }
        let k = names.len();
        let edges = normalize_edges(edges);
        let mut adjacency = vec![Vec::new(); k];
        for &(a, b) in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        adjacency.iter_mut().for_each(|a| {
            a.sort_unstable();
            a.dedup();
        });
        let hyperedges: Vec<Hyperedge> = hyperedges
            .into_iter()
            .map(|mut h| {
                h.members.sort_unstable();
                h.members.dedup();
                h
            })
            .collect();
        let mut group_of = vec![Vec::new(); k];
        for (e, h) in hyperedges.iter().enumerate() {
            for &m in &h.members {
                group_of[m].push(e);
            }
        }
        Ok(Self {
            names,
            edges,
            hyperedges,
            adjacency,
            group_of,
        })
    }

    /// The eight-keypoint figure used by the synthetic benchmark.
    pub fn toy() -> Self {
        let names = [
            "head",
            "neck",
            "l_shoulder",
            "r_shoulder",
            "l_hand",
            "r_hand",
            "l_foot",
            "r_foot",
        ]
        .iter()
        .map(|s| String::from(*s))
        .collect();
        let edges = [(0, 1), (1, 2), (1, 3), (2, 4), (3, 5), (1, 6), (1, 7)];
        let hyperedges = vec![
            Hyperedge::new("head", &[0, 1]),
            Hyperedge::new("arms", &[2, 3, 4, 5]),
            Hyperedge::new("legs", &[6, 7]),
            Hyperedge::new("torso", &[1, 2, 3]),
        ];
        Self::new(names, &edges, hyperedges).expect("toy skeleton is valid")
    }

    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn hyperedges(&self) -> &[Hyperedge] {
        &self.hyperedges
    }

    /// Hyperedges containing keypoint `k`.
    pub fn groups_of(&self, k: usize) -> &[usize] {
        &self.group_of[k]
    }

    /// Sorted, deduplicated neighbours of `k` under the physical edges.
    pub fn neighbors(&self, k: usize) -> Result<&[usize], SkeletonError> {
        self.adjacency
            .get(k)
            .map(Vec::as_slice)
            .ok_or(SkeletonError::OutOfRange { index: k, k: self.k() })
    }

    /// Relabels keypoints: keypoint `i` becomes keypoint `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<SkeletonSpec, SkeletonError> {
        let k = self.k();
        let mut seen = vec![false; k];
        if perm.len() != k || perm.iter().any(|&p| p >= k || core::mem::replace(&mut seen[p], true)) {
            return Err(SkeletonError::BadPermutation(k));
        }
        let mut names = vec![String::new(); k];
        for (i, n) in self.names.iter().enumerate() {
            names[perm[i]] = n.clone();
        }
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let hyperedges = self
            .hyperedges
            .iter()
            .map(|h| Hyperedge {
                name: h.name.clone(),
                members: h.members.iter().map(|&m| perm[m]).collect(),
            })
            .collect();
        SkeletonSpec::new(names, &edges, hyperedges)
    }

    /// A labelling-independent encoding: the lexicographically smallest
    /// structure encoding over all keypoint relabellings. Brute force, so
    /// only available for `K <= 9`.
    pub fn canonical_form(&self) -> Option<Vec<usize>> {
        let k = self.k();
        if k > 9 {
            return None;
        }
        let mut perm: Vec<usize> = (0..k).collect();
        let mut best: Option<Vec<usize>> = None;
        loop {
            let enc = self.encode_under(&perm);
            if best.as_ref().is_none_or(|b| enc < *b) {
                best = Some(enc);
            }
            if !next_permutation(&mut perm) {
                break;
            }
        }
        best
    }

    fn encode_under(&self, perm: &[usize]) -> Vec<usize> {
        let mut edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .map(|&(a, b)| (perm[a].min(perm[b]), perm[a].max(perm[b])))
            .collect();
        edges.sort_unstable();
        let mut groups: Vec<Vec<usize>> = self
            .hyperedges
            .iter()
            .map(|h| {
                let mut m: Vec<usize> = h.members.iter().map(|&x| perm[x]).collect();
                m.sort_unstable();
                m
            })
            .collect();
        groups.sort();
        let mut enc = vec![self.k(), edges.len()];
        for (a, b) in edges {
            enc.push(a);
            enc.push(b);
        }
        enc.push(groups.len());
        for g in groups {
            enc.push(g.len());
            enc.extend(g);
        }
        enc
    }
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| alloc::format!("kp{i}")).collect()
    }

    #[test]
    fn chain_neighbors() {
        let s = SkeletonSpec::new(names(3), &[(0, 1), (1, 2)], vec![Hyperedge::new("all", &[0, 1, 2])]).unwrap();
        assert_eq!(s.neighbors(1).unwrap(), &[0, 2]);
        assert_eq!(s.neighbors(0).unwrap(), &[1]);
        assert_eq!(s.neighbors(3), Err(SkeletonError::OutOfRange { index: 3, k: 3 }));
    }

    #[test]
    fn toy_adjacency_matches_edge_list() {
        let s = SkeletonSpec::toy();
        assert!(validate(s.names(), s.edges(), s.hyperedges()).is_empty());
        for k in 0..s.k() {
            let mut expect: Vec<usize> = s
                .edges()
                .iter()
                .filter_map(|&(a, b)| if a == k { Some(b) } else if b == k { Some(a) } else { None })
                .collect();
            expect.sort_unstable();
            assert_eq!(s.neighbors(k).unwrap(), expect.as_slice());
        }
        assert_eq!(s.groups_of(1), &[0, 3]);
        assert_eq!(s.groups_of(2), &[1, 3]);
    }

    #[test]
    fn uncovered_keypoint_reported() {
        let v = validate(&names(3), &[(0, 1), (1, 2)], &[Hyperedge::new("a", &[0, 1])]);
        assert_eq!(v, vec![Violation::UncoveredKeypoint(2)]);
        assert_eq!(v[0].to_string(), "uncovered keypoint 2");
    }

    #[test]
    fn duplicate_edges_normalized() {
        let e = [(0, 1), (1, 0), (1, 2), (1, 2)];
        let hs = [Hyperedge::new("a", &[0, 1, 2])];
        assert!(validate(&names(3), &e, &hs).is_empty());
        let s = SkeletonSpec::new(names(3), &e, hs.to_vec()).unwrap();
        assert_eq!(s.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(s.neighbors(1).unwrap(), &[0, 2]);
    }

    #[test]
    fn structural_violations() {
        let hs = [Hyperedge::new("a", &[0, 1, 2, 3])];
        let v = validate(&names(4), &[(0, 1), (2, 3), (1, 1)], &hs);
        assert!(v.contains(&Violation::SelfLoop(1)));
        assert!(v.contains(&Violation::Disconnected));
        let v = validate(&names(2), &[(0, 5)], &[Hyperedge::new("a", &[0, 7])]);
        assert!(v.contains(&Violation::EdgeOutOfRange { a: 0, b: 5 }));
        assert!(v.iter().any(|x| matches!(x, Violation::MemberOutOfRange { member: 7, .. })));
    }

    #[test]
    fn relabelling_preserves_canonical_form() {
        let s = SkeletonSpec::toy();
        let perm = [3, 7, 0, 5, 1, 6, 2, 4];
        let p = s.permute(&perm).unwrap();
        assert_ne!(p.edges(), s.edges());
        assert_eq!(p.canonical_form(), s.canonical_form());
        // A genuinely different skeleton differs.
        let other = SkeletonSpec::new(
            s.names().to_vec(),
            &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7)],
            s.hyperedges().to_vec(),
        )
        .unwrap();
        assert_ne!(other.canonical_form(), s.canonical_form());
    }

    #[test]
    fn bad_permutation_rejected() {
        let s = SkeletonSpec::toy();
        assert!(s.permute(&[0, 0, 1, 2, 3, 4, 5, 6]).is_err());
        assert!(s.permute(&[0, 1]).is_err());
    }
}
