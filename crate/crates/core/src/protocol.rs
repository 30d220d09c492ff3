//! Per-node state machine for quantized ratio consensus with a windowed
//! min/max stopping rule.
//!
//! Each node holds an integer mass pair `(y, z)`. While `z > 1` it snapshots
//! `q_s = ceil(y / z)`, cuts the pair into `z` unit-`z` pieces whose `y`
//! values differ by at most one, keeps one piece and routes the rest to
//! uniformly chosen targets among itself and its out-neighbors. Every `D`
//! rounds the nodes run a max/min consensus on `ceil(y/z)` / `floor(y/z)`;
//! once the spread is at most one everywhere they all stop together.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problem::{ProblemInstance, Rational};
use crate::topology::{Digraph, NodeId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("node {0}: state update requires z > 1")]
    EventConditionNotMet(NodeId),
    #[error("node {0} has already terminated")]
    Terminated(NodeId),
    #[error("node {0} has not terminated")]
    NotTerminated(NodeId),
    #[error("termination is only checked at multiples of the window length, got round {round} with window {window}")]
    NotCheckRound { round: u64, window: u32 },
    #[error("node {0} has no out-neighbors")]
    NoOutNeighbors(NodeId),
    #[error("window length must be positive")]
    ZeroWindow,
}

/// Aggregated mass pieces sent to one target in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MassMessage {
    pub c_y: i64,
    pub c_z: i64,
}

/// Window extrema `(M, m)` in transit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtremaMessage {
    pub max: i64,
    pub min: i64,
}

/// Result of one splitting step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    /// Mass the node keeps: the final piece plus every piece drawn to itself.
    pub retained: MassMessage,
    /// Messages to out-neighbors with `c_z > 0`, sorted by target.
    pub outgoing: Vec<(NodeId, MassMessage)>,
}

impl Split {
    pub fn total(&self) -> MassMessage {
        self.outgoing.iter().fold(self.retained, |acc, (_, m)| MassMessage {
            c_y: acc.c_y + m.c_y,
            c_z: acc.c_z + m.c_z,
        })
    }
}

/// One unit-`z` piece produced while splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Piece {
    /// `None` for the self-retained final piece.
    pub target: Option<Route>,
    pub value: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Itself,
    Neighbor(NodeId),
}

/// Integer outputs available once a node has stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalWorkload {
    /// `ceil(q_s * capacity / pi_upper)`.
    pub total_share: i64,
    /// `total_share - u_j`.
    pub incremental: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeState {
    id: NodeId,
    y: i64,
    z: i64,
    y_s: i64,
    z_s: i64,
    q_s: i64,
    max_vote: i64,
    min_vote: i64,
    terminated: bool,
    /// `1 + out-degree`; routing is uniform over self and out-neighbors.
    fanout: u32,
    capacity: u64,
    pi_upper: u64,
    util: u64,
    window: u32,
}

/// Builds node `j`'s initial state. `window` is the diameter (or an upper
/// bound on it) that sets the min/max window length.
pub fn init_node(
    j: NodeId,
    inst: &ProblemInstance,
    g: &Digraph,
    window: u32,
) -> Result<NodeState, ProtocolError> {
    if window == 0 {
        return Err(ProtocolError::ZeroWindow);
    }
    let out_degree = g.out_degree(j);
    if out_degree == 0 && g.node_count() > 1 {
        return Err(ProtocolError::NoOutNeighbors(j));
    }
    let y = inst.initial_y(j);
    let z = inst.capacity(j) as i64;
    let q_s = ceil_div(y, z);
    Ok(NodeState {
        id: j,
        y,
        z,
        y_s: y,
        z_s: z,
        q_s,
        max_vote: q_s,
        min_vote: y.div_euclid(z),
        terminated: false,
        fanout: out_degree as u32 + 1,
        capacity: inst.capacity(j),
        pi_upper: inst.pi_upper(),
        util: inst.util(j),
        window,
    })
}

fn ceil_div(a: i64, b: i64) -> i64 {
    -((-a).div_euclid(b))
}

impl NodeState {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn mass(&self) -> MassMessage {
        MassMessage { c_y: self.y, c_z: self.z }
    }

    /// `(y_s, z_s, q_s)` as of the last refresh.
    pub fn state_vars(&self) -> (i64, i64, i64) {
        (self.y_s, self.z_s, self.q_s)
    }

    pub fn q_s(&self) -> i64 {
        self.q_s
    }

    pub fn extrema(&self) -> ExtremaMessage {
        ExtremaMessage { max: self.max_vote, min: self.min_vote }
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    pub fn window(&self) -> u32 {
        self.window
    }

    /// Event condition C1: the node only refreshes and splits while `z > 1`.
    pub fn event_triggered(&self) -> bool {
        self.z > 1
    }

    /// Routing probabilities over self followed by `out_neighbors`.
    pub fn routing_table(&self, out_neighbors: &[NodeId]) -> Vec<(NodeId, Rational)> {
        let p = Rational::new(1, self.fanout as i128);
        std::iter::once(self.id)
            .chain(out_neighbors.iter().copied())
            .map(|t| (t, p))
            .collect()
    }

    /// Whether round `k` opens a window. Rounds count from 1 and windows
    /// cover rounds `1..=D`, `D+1..=2D`, and so on.
    pub fn is_window_start(&self, k: u64) -> bool {
        k >= 1 && (k - 1) % self.window as u64 == 0
    }

    pub fn is_check_round(&self, k: u64) -> bool {
        k >= 1 && k % self.window as u64 == 0
    }

    /// Re-seeds the votes from the current masses.
    pub fn window_start(&mut self) {
        self.max_vote = ceil_div(self.y, self.z);
        self.min_vote = self.y.div_euclid(self.z);
    }

    pub fn extrema_combine(&mut self, received: impl IntoIterator<Item = ExtremaMessage>) {
        for msg in received {
            self.max_vote = self.max_vote.max(msg.max);
            self.min_vote = self.min_vote.min(msg.min);
        }
    }

    /// Snapshots the masses into the state triple. Returns whether `q_s`
    /// changed.
    pub fn update_state_vars(&mut self) -> Result<bool, ProtocolError> {
        if self.terminated {
            return Err(ProtocolError::Terminated(self.id));
        }
        if !self.event_triggered() {
            return Err(ProtocolError::EventConditionNotMet(self.id));
        }
        let before = self.q_s;
        self.y_s = self.y;
        self.z_s = self.z;
        self.q_s = ceil_div(self.y_s, self.z_s);
        Ok(self.q_s != before)
    }

    /// Cuts the masses into pieces in draw order. With `z > 1` the first
    /// `z - 1` pieces are routed and carry `delta` or `delta + 1`; the last
    /// piece is kept and carries whatever `y` is left. With `z <= 1` the
    /// whole mass is a single kept piece.
    pub fn split_pieces<R: Rng + ?Sized>(
        &self,
        out_neighbors: &[NodeId],
        rng: &mut R,
    ) -> Result<Vec<Piece>, ProtocolError> {
        if self.terminated {
            return Err(ProtocolError::Terminated(self.id));
        }
        debug_assert_eq!(out_neighbors.len() + 1, self.fanout as usize);
        if !self.event_triggered() {
            return Ok(vec![Piece { target: None, value: self.y }]);
        }
        let delta = self.y.div_euclid(self.z);
        let mut rem = self.y - delta * self.z;
        let mut left_y = self.y;
        let mut pieces = Vec::with_capacity(self.z as usize);
        for _ in 1..self.z {
            let pick = rng.gen_range(0..self.fanout);
            let target = if pick == 0 {
                Route::Itself
            } else {
                Route::Neighbor(out_neighbors[pick as usize - 1])
            };
            let mut value = delta;
            // the last remainder unit stays with the kept piece
            if rem > 1 {
                value += 1;
                rem -= 1;
            }
            left_y -= value;
            pieces.push(Piece { target: Some(target), value });
        }
        pieces.push(Piece { target: None, value: left_y });
        Ok(pieces)
    }

    /// Splits and aggregates per target. Conserves `y` and `z` exactly.
    pub fn split_masses<R: Rng + ?Sized>(
        &self,
        out_neighbors: &[NodeId],
        rng: &mut R,
    ) -> Result<Split, ProtocolError> {
        let pieces = self.split_pieces(out_neighbors, rng)?;
        let mut retained = MassMessage { c_y: 0, c_z: 0 };
        let mut sent: Vec<(NodeId, i64)> = Vec::with_capacity(pieces.len());
        for p in pieces {
            match p.target {
                None | Some(Route::Itself) => {
                    retained.c_y += p.value;
                    retained.c_z += 1;
                }
                Some(Route::Neighbor(t)) => sent.push((t, p.value)),
            }
        }
        // z <= 1 keeps the whole (possibly non-unit) z
        if !self.event_triggered() {
            retained.c_z = self.z;
        }
        sent.sort_unstable_by_key(|&(t, _)| t);
        let mut outgoing: Vec<(NodeId, MassMessage)> = Vec::new();
        for (t, v) in sent {
            match outgoing.last_mut() {
                Some((last, msg)) if *last == t => {
                    msg.c_y += v;
                    msg.c_z += 1;
                }
                _ => outgoing.push((t, MassMessage { c_y: v, c_z: 1 })),
            }
        }
        Ok(Split { retained, outgoing })
    }

    /// Replaces the masses with the sum over `inbox`, which must include the
    /// node's own retained message.
    pub fn absorb_masses(
        &mut self,
        inbox: impl IntoIterator<Item = MassMessage>,
    ) -> Result<(), ProtocolError> {
        if self.terminated {
            return Err(ProtocolError::Terminated(self.id));
        }
        let (mut y, mut z) = (0, 0);
        for m in inbox {
            y += m.c_y;
            z += m.c_z;
        }
        self.y = y;
        self.z = z;
        Ok(())
    }

    /// Stopping rule, evaluated at the last round of each window.
    pub fn check_termination(&mut self, k: u64) -> Result<bool, ProtocolError> {
        if !self.is_check_round(k) {
            return Err(ProtocolError::NotCheckRound { round: k, window: self.window });
        }
        if self.max_vote - self.min_vote <= 1 {
            self.terminated = true;
        }
        Ok(self.terminated)
    }

    pub fn final_workload(&self) -> Result<FinalWorkload, ProtocolError> {
        if !self.terminated {
            return Err(ProtocolError::NotTerminated(self.id));
        }
        let total_share = share_of(self.q_s, self.capacity, self.pi_upper);
        Ok(FinalWorkload {
            total_share,
            incremental: total_share - self.util as i64,
        })
    }
}

/// `ceil(q * capacity / pi_upper)` in exact integer arithmetic.
pub fn share_of(q: i64, capacity: u64, pi_upper: u64) -> i64 {
    let num = q as i128 * capacity as i128;
    let den = pi_upper as i128;
    (-((-num).div_euclid(den))) as i64
}
