//! Directed communication topologies.
//!
//! An edge `(j, i)` means node `j` receives from node `i`, i.e. `i` is an
//! in-neighbor of `j` and `j` is an out-neighbor of `i`. Node ids are dense
//! and 0-based in memory, 1-based in the edge-list file format.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub type NodeId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("graph is not strongly connected")]
    NotStronglyConnected,
    #[error("graph must have at least {min} nodes, got {got}")]
    TooFewNodes { min: usize, got: usize },
    #[error("edge probability must lie in (0, 1], got {0}")]
    BadProbability(f64),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Compressed adjacency: `targets[offsets[v]..offsets[v + 1]]` are the
/// neighbors of `v`, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Csr {
    offsets: Vec<usize>,
    targets: Vec<NodeId>,
}

impl Csr {
    fn from_lists(lists: &[Vec<NodeId>]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut targets = Vec::with_capacity(lists.iter().map(Vec::len).sum());
        offsets.push(0);
        for list in lists {
            targets.extend_from_slice(list);
            offsets.push(targets.len());
        }
        Csr { offsets, targets }
    }

    #[inline]
    fn row(&self, v: usize) -> &[NodeId] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }
}

#[derive(Debug)]
pub struct Digraph {
    n: usize,
    out_adj: Csr,
    in_adj: Csr,
    diameter: OnceLock<Option<u32>>,
}

impl Clone for Digraph {
    fn clone(&self) -> Self {
        Digraph {
            n: self.n,
            out_adj: self.out_adj.clone(),
            in_adj: self.in_adj.clone(),
            diameter: self.diameter.clone(),
        }
    }
}

impl PartialEq for Digraph {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.out_adj == other.out_adj
    }
}

impl Eq for Digraph {}

impl Digraph {
    /// Builds a digraph from `(receiver, sender)` pairs. Duplicates collapse;
    /// self-edges and out-of-range ids are rejected.
    pub fn from_edges(
        n: usize,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self, TopologyError> {
        if n == 0 {
            return Err(TopologyError::TooFewNodes { min: 1, got: 0 });
        }
        let mut out_lists: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        for (idx, (recv, send)) in edges.into_iter().enumerate() {
            if recv as usize >= n || send as usize >= n {
                return Err(TopologyError::Parse {
                    line: idx + 1,
                    reason: format!("edge ({recv}, {send}) out of range for {n} nodes"),
                });
            }
            if recv == send {
                return Err(TopologyError::Parse {
                    line: idx + 1,
                    reason: format!("self-edge on node {recv}"),
                });
            }
            out_lists[send as usize].push(recv);
        }
        for list in &mut out_lists {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self::from_out_lists(out_lists))
    }

    /// `out_lists[i]` must be sorted, deduplicated and free of `i` itself.
    fn from_out_lists(out_lists: Vec<Vec<NodeId>>) -> Self {
        let n = out_lists.len();
        let mut in_lists: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        for (send, outs) in out_lists.iter().enumerate() {
            for &recv in outs {
                in_lists[recv as usize].push(send as NodeId);
            }
        }
        Digraph {
            n,
            out_adj: Csr::from_lists(&out_lists),
            in_adj: Csr::from_lists(&in_lists),
            diameter: OnceLock::new(),
        }
    }

    pub fn complete(n: usize) -> Self {
        let lists = (0..n)
            .map(|i| (0..n as NodeId).filter(|&j| j as usize != i).collect())
            .collect();
        Self::from_out_lists(lists)
    }

    /// Directed ring `0 -> 1 -> ... -> n-1 -> 0`.
    pub fn ring(n: usize) -> Self {
        let lists = (0..n)
            .map(|i| {
                let next = ((i + 1) % n) as NodeId;
                if next as usize == i {
                    Vec::new()
                } else {
                    vec![next]
                }
            })
            .collect();
        Self::from_out_lists(lists)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.out_adj.targets.len()
    }

    pub fn out_neighbors(&self, v: NodeId) -> &[NodeId] {
        self.out_adj.row(v as usize)
    }

    pub fn in_neighbors(&self, v: NodeId) -> &[NodeId] {
        self.in_adj.row(v as usize)
    }

    pub fn out_degree(&self, v: NodeId) -> usize {
        self.out_neighbors(v).len()
    }

    pub fn max_out_degree(&self) -> usize {
        (0..self.n as NodeId)
            .map(|v| self.out_degree(v))
            .max()
            .unwrap_or(0)
    }

    pub fn has_edge(&self, receiver: NodeId, sender: NodeId) -> bool {
        self.out_neighbors(sender).binary_search(&receiver).is_ok()
    }

    /// All `(receiver, sender)` pairs, ordered by sender then receiver.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        (0..self.n as NodeId)
            .flat_map(move |s| self.out_neighbors(s).iter().map(move |&r| (r, s)))
    }

    pub fn is_complete(&self) -> bool {
        self.edge_count() == self.n * (self.n - 1)
    }

    pub fn is_strongly_connected(&self) -> bool {
        let all_reached = |adj: &Csr| {
            let mut seen = vec![false; self.n];
            let mut stack = vec![0usize];
            seen[0] = true;
            let mut count = 1;
            while let Some(v) = stack.pop() {
                for &w in adj.row(v) {
                    if !seen[w as usize] {
                        seen[w as usize] = true;
                        count += 1;
                        stack.push(w as usize);
                    }
                }
            }
            count == self.n
        };
        all_reached(&self.out_adj) && all_reached(&self.in_adj)
    }

    /// Longest shortest directed path over all ordered pairs. Computed once.
    pub fn diameter(&self) -> Result<u32, TopologyError> {
        self.diameter
            .get_or_init(|| {
                if !self.is_strongly_connected() {
                    None
                } else if self.prefers_bitset() {
                    Some(self.diameter_bitset())
                } else {
                    Some(self.diameter_bfs())
                }
            })
            .ok_or(TopologyError::NotStronglyConnected)
    }

    // Word-parallel BFS costs ~n^3/64 regardless of density; plain BFS costs
    // n * (n + m). Dense graphs favor the former.
    fn prefers_bitset(&self) -> bool {
        let n = self.n as u128;
        let bitset_cost = n * n * n / 64;
        let bfs_cost = n * (n + self.edge_count() as u128);
        bitset_cost < bfs_cost
    }

    /// Diameter via one adjacency-list BFS per source. Assumes strong
    /// connectivity.
    pub(crate) fn diameter_bfs(&self) -> u32 {
        let mut dist = vec![u32::MAX; self.n];
        let mut queue = VecDeque::with_capacity(self.n);
        let mut best = 0;
        for src in 0..self.n {
            dist.fill(u32::MAX);
            dist[src] = 0;
            queue.clear();
            queue.push_back(src);
            while let Some(v) = queue.pop_front() {
                let d = dist[v];
                best = best.max(d);
                for &w in self.out_adj.row(v) {
                    if dist[w as usize] == u32::MAX {
                        dist[w as usize] = d + 1;
                        queue.push_back(w as usize);
                    }
                }
            }
        }
        best
    }

    /// Diameter via level-synchronous BFS over bitset rows. Assumes strong
    /// connectivity.
    pub(crate) fn diameter_bitset(&self) -> u32 {
        let words = self.n.div_ceil(64);
        let mut rows = vec![0u64; self.n * words];
        for v in 0..self.n {
            let row = &mut rows[v * words..(v + 1) * words];
            for &w in self.out_adj.row(v) {
                row[w as usize / 64] |= 1 << (w % 64);
            }
        }
        let mut visited = vec![0u64; words];
        let mut frontier = vec![0u64; words];
        let mut next = vec![0u64; words];
        let mut best = 0;
        for src in 0..self.n {
            visited.fill(0);
            frontier.fill(0);
            visited[src / 64] |= 1 << (src % 64);
            frontier[src / 64] |= 1 << (src % 64);
            let mut level = 0;
            loop {
                next.fill(0);
                for (wi, &word) in frontier.iter().enumerate() {
                    let mut bits = word;
                    while bits != 0 {
                        let v = wi * 64 + bits.trailing_zeros() as usize;
                        bits &= bits - 1;
                        let row = &rows[v * words..(v + 1) * words];
                        for (acc, r) in next.iter_mut().zip(row) {
                            *acc |= r;
                        }
                    }
                }
                let mut any = false;
                for ((nx, vis), fr) in next.iter_mut().zip(visited.iter_mut()).zip(frontier.iter_mut())
                {
                    *nx &= !*vis;
                    *vis |= *nx;
                    *fr = *nx;
                    any |= *nx != 0;
                }
                if !any {
                    break;
                }
                level += 1;
            }
            best = best.max(level);
        }
        best
    }

    /// Serializes as `n <count>` followed by one `receiver sender` line per
    /// edge, 1-based, LF-terminated.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::with_capacity(16 + self.edge_count() * 10);
        let _ = writeln!(out, "n {}", self.n);
        for (r, s) in self.edges() {
            let _ = writeln!(out, "{} {}", r + 1, s + 1);
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self, TopologyError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let parse_err = |line: usize, reason: String| TopologyError::Parse { line, reason };

        let (hline, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing `n <count>` header".into()))?;
        let mut parts = header.split_whitespace();
        let n = match (parts.next(), parts.next(), parts.next()) {
            (Some("n"), Some(count), None) => count
                .parse::<usize>()
                .map_err(|e| parse_err(hline, format!("bad node count: {e}")))?,
            _ => return Err(parse_err(hline, format!("expected `n <count>`, got `{header}`"))),
        };
        if n == 0 {
            return Err(parse_err(hline, "node count must be positive".into()));
        }

        let mut out_lists: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        for (lineno, line) in lines {
            let mut parts = line.split_whitespace();
            let (r, s) = match (parts.next(), parts.next(), parts.next()) {
                (Some(r), Some(s), None) => (r, s),
                _ => return Err(parse_err(lineno, format!("expected `receiver sender`, got `{line}`"))),
            };
            let id = |tok: &str| -> Result<NodeId, TopologyError> {
                let v: usize = tok
                    .parse()
                    .map_err(|e| parse_err(lineno, format!("bad node id `{tok}`: {e}")))?;
                if v == 0 || v > n {
                    return Err(parse_err(lineno, format!("node id {v} out of range 1..={n}")));
                }
                Ok((v - 1) as NodeId)
            };
            let (r, s) = (id(r)?, id(s)?);
            if r == s {
                return Err(parse_err(lineno, format!("self-edge on node {}", r + 1)));
            }
            out_lists[s as usize].push(r);
        }
        for list in &mut out_lists {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self::from_out_lists(out_lists))
    }
}

/// Includes each ordered pair `(j, i)`, `j != i`, independently with
/// probability `edge_prob`. Pairs are visited sender-major, so the edge set
/// is a pure function of `(n, edge_prob, seed)`.
pub fn generate_random_digraph(
    n: usize,
    edge_prob: f64,
    seed: u64,
) -> Result<Digraph, TopologyError> {
    if n < 2 {
        return Err(TopologyError::TooFewNodes { min: 2, got: n });
    }
    if !(edge_prob > 0.0 && edge_prob <= 1.0) {
        return Err(TopologyError::BadProbability(edge_prob));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out_lists = (0..n)
        .map(|send| {
            (0..n as NodeId)
                .filter(|&recv| recv as usize != send && rng.gen_bool(edge_prob))
                .collect()
        })
        .collect();
    Ok(Digraph::from_out_lists(out_lists))
}
