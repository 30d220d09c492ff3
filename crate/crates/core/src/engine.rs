//! Synchronous round simulator, trial runner and size sweeps.

use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problem::{self, ProblemError, ProblemInstance, ValueSpec};
use crate::protocol::{self, MassMessage, NodeState, ProtocolError};
use crate::topology::{self, Digraph, NodeId, TopologyError};

#[derive(Debug, Error)]
pub enum TrialError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("instance is infeasible: demand exceeds free capacity")]
    Infeasible,
    #[error("no strongly connected graph after {retries} regenerations")]
    Disconnected { retries: u32 },
    #[error("graph has {graph} nodes but instance has {instance}")]
    SizeMismatch { graph: usize, instance: usize },
    #[error("diameter bound {bound} is below the graph diameter {diameter}")]
    DiameterBound { bound: u32, diameter: u32 },
    #[error("max_rounds {max_rounds} is below the window length {window}")]
    RoundCap { max_rounds: u64, window: u32 },
    #[error("round {round}: conservation violated: sum y {sum_y} (expected {expected_y}), sum z {sum_z} (expected {expected_z}); {dump}")]
    Conservation {
        round: u64,
        sum_y: i128,
        sum_z: i128,
        expected_y: i128,
        expected_z: i128,
        dump: String,
    },
    #[error("round {round}: node {node} holds z = {z} < 1")]
    EmptyNode { round: u64, node: NodeId, z: i64 },
    #[error("round {round}: node {node} has extrema ({max}, {min}), window extrema are ({want_max}, {want_min})")]
    WindowMismatch {
        round: u64,
        node: NodeId,
        max: i64,
        min: i64,
        want_max: i64,
        want_min: i64,
    },
    #[error("round {round}: node {node} extrema moved the wrong way within a window")]
    NonMonotoneExtrema { round: u64, node: NodeId },
    #[error("round {round}: only {stopped} of {total} nodes stopped")]
    PartialTermination { round: u64, stopped: usize, total: usize },
}

/// Per-round aggregate masses, counted after delivery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundSums {
    pub round: u64,
    pub sum_y: i64,
    pub sum_z: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundReport {
    pub sums: RoundSums,
    /// Nodes whose `q_s` changed this round, ascending.
    pub changed: Vec<NodeId>,
    pub terminated: bool,
}

/// One trial's protocol state over a fixed graph and instance.
pub struct Simulation<'a> {
    graph: &'a Digraph,
    nodes: Vec<NodeState>,
    rngs: Vec<ChaCha8Rng>,
    window: u32,
    round: u64,
    initial_y: i128,
    initial_z: i128,
    window_extrema: (i64, i64),
    inboxes: Vec<Vec<MassMessage>>,
    converge_round: Vec<u64>,
    stop_round: Vec<Option<u64>>,
    snapshots: Option<Vec<Vec<[i64; 3]>>>,
}

impl<'a> Simulation<'a> {
    /// `window` is the diameter or a valid upper bound on it; `stream_seed`
    /// keys the per-node random streams.
    pub fn new(
        inst: &ProblemInstance,
        graph: &'a Digraph,
        window: u32,
        stream_seed: u64,
    ) -> Result<Self, TrialError> {
        let n = graph.node_count();
        if n != inst.node_count() {
            return Err(TrialError::SizeMismatch { graph: n, instance: inst.node_count() });
        }
        let nodes = (0..n as NodeId)
            .map(|j| protocol::init_node(j, inst, graph, window))
            .collect::<Result<Vec<_>, _>>()?;
        let rngs = (0..n as u64)
            .map(|j| {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
                rng.set_stream(j);
                rng
            })
            .collect();
        let initial_y = nodes.iter().map(|s| s.mass().c_y as i128).sum();
        let initial_z = nodes.iter().map(|s| s.mass().c_z as i128).sum();
        Ok(Simulation {
            graph,
            nodes,
            rngs,
            window,
            round: 0,
            initial_y,
            initial_z,
            window_extrema: (0, 0),
            inboxes: vec![Vec::new(); n],
            converge_round: vec![0; n],
            stop_round: vec![None; n],
            snapshots: None,
        })
    }

    pub fn record_snapshots(&mut self) {
        let first = self.snapshot();
        self.snapshots = Some(vec![first]);
    }

    fn snapshot(&self) -> Vec<[i64; 3]> {
        self.nodes
            .iter()
            .map(|s| {
                let m = s.mass();
                [m.c_y, m.c_z, s.q_s()]
            })
            .collect()
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn window(&self) -> u32 {
        self.window
    }

    pub fn all_terminated(&self) -> bool {
        self.nodes.iter().all(NodeState::is_terminated)
    }

    /// Executes round `k = round() + 1` for every node.
    pub fn run_round(&mut self) -> Result<RoundReport, TrialError> {
        let k = self.round + 1;
        let n = self.nodes.len();
        let graph = self.graph;

        if self.nodes[0].is_window_start(k) {
            for s in &mut self.nodes {
                s.window_start();
            }
            let max = self.nodes.iter().map(|s| s.extrema().max).max().unwrap_or(0);
            let min = self.nodes.iter().map(|s| s.extrema().min).min().unwrap_or(0);
            self.window_extrema = (max, min);
        }

        // broadcast, then combine against the pre-round values
        let sent: Vec<_> = self.nodes.iter().map(NodeState::extrema).collect();
        for (j, s) in self.nodes.iter_mut().enumerate() {
            let before = s.extrema();
            s.extrema_combine(graph.in_neighbors(j as NodeId).iter().map(|&i| sent[i as usize]));
            let after = s.extrema();
            if after.max < before.max || after.min > before.min {
                return Err(TrialError::NonMonotoneExtrema { round: k, node: j as NodeId });
            }
        }

        let mut changed = Vec::new();
        for inbox in &mut self.inboxes {
            inbox.clear();
        }
        for (j, s) in self.nodes.iter_mut().enumerate() {
            if s.event_triggered() && s.update_state_vars()? {
                changed.push(j as NodeId);
                self.converge_round[j] = k;
            }
            let split = s.split_masses(graph.out_neighbors(j as NodeId), &mut self.rngs[j])?;
            self.inboxes[j].push(split.retained);
            for (t, msg) in split.outgoing {
                self.inboxes[t as usize].push(msg);
            }
        }
        for (s, inbox) in self.nodes.iter_mut().zip(&self.inboxes) {
            s.absorb_masses(inbox.iter().copied())?;
        }

        let sums = self.check_conservation(k)?;

        let mut terminated = false;
        if self.nodes[0].is_check_round(k) {
            let (want_max, want_min) = self.window_extrema;
            for (j, s) in self.nodes.iter().enumerate() {
                let e = s.extrema();
                if e.max != want_max || e.min != want_min {
                    return Err(TrialError::WindowMismatch {
                        round: k,
                        node: j as NodeId,
                        max: e.max,
                        min: e.min,
                        want_max,
                        want_min,
                    });
                }
            }
            let mut stopped = 0;
            for (j, s) in self.nodes.iter_mut().enumerate() {
                if s.check_termination(k)? {
                    stopped += 1;
                    self.stop_round[j] = Some(k);
                }
            }
            if stopped > 0 && stopped < n {
                return Err(TrialError::PartialTermination { round: k, stopped, total: n });
            }
            terminated = stopped == n;
        }

        self.round = k;
        if self.snapshots.is_some() {
            let snap = self.snapshot();
            if let Some(snaps) = &mut self.snapshots {
                snaps.push(snap);
            }
        }
        Ok(RoundReport { sums, changed, terminated })
    }

    fn check_conservation(&self, k: u64) -> Result<RoundSums, TrialError> {
        let mut sum_y = 0i128;
        let mut sum_z = 0i128;
        for (j, s) in self.nodes.iter().enumerate() {
            let m = s.mass();
            if m.c_z < 1 {
                return Err(TrialError::EmptyNode { round: k, node: j as NodeId, z: m.c_z });
            }
            sum_y += m.c_y as i128;
            sum_z += m.c_z as i128;
        }
        if sum_y != self.initial_y || sum_z != self.initial_z {
            let dump = self
                .nodes
                .iter()
                .enumerate()
                .map(|(j, s)| format!("{}:({},{})", j + 1, s.mass().c_y, s.mass().c_z))
                .collect::<Vec<_>>()
                .join(" ");
            return Err(TrialError::Conservation {
                round: k,
                sum_y,
                sum_z,
                expected_y: self.initial_y,
                expected_z: self.initial_z,
                dump,
            });
        }
        Ok(RoundSums { round: k, sum_y: sum_y as i64, sum_z: sum_z as i64 })
    }
}

/// Recipe for a generated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecipe {
    pub nodes: usize,
    pub loads: ValueSpec,
    pub utils: ValueSpec,
    pub capacities: ValueSpec,
    /// `None` picks the smallest power of ten covering total capacity.
    pub pi_upper: Option<u64>,
    pub diameter_bound: Option<u32>,
}

impl InstanceRecipe {
    /// The 200-node evaluation scenario: loads uniform in 1..=100,
    /// capacities alternating 100/300, `pi_upper` 1000.
    pub fn evaluation(nodes: usize) -> Self {
        InstanceRecipe {
            nodes,
            loads: ValueSpec::Uniform { lo: 1, hi: 100 },
            utils: ValueSpec::Constant(0),
            capacities: ValueSpec::Alternating { even: 100, odd: 300 },
            pi_upper: Some(1000),
            diameter_bound: None,
        }
    }

    pub fn build(&self, seed: u64) -> Result<ProblemInstance, ProblemError> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, INSTANCE_SALT));
        let loads = self.loads.materialize(self.nodes, &mut rng)?;
        let utils = self.utils.materialize(self.nodes, &mut rng)?;
        let caps = self.capacities.materialize(self.nodes, &mut rng)?;
        let pi_upper = self.pi_upper.unwrap_or_else(|| problem::default_pi_upper(&caps));
        Ok(ProblemInstance::new(loads, utils, caps, pi_upper)?.with_diameter_bound(self.diameter_bound))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InstanceSource {
    Given { instance: ProblemInstance },
    Generated(InstanceRecipe),
}

#[derive(Debug, Clone)]
pub enum GraphSource {
    Given(Arc<Digraph>),
    /// Random digraph; disconnected draws are regenerated with seed + 1.
    Random { edge_prob: f64 },
}

#[derive(Debug, Clone)]
pub struct TrialConfig {
    pub instance: InstanceSource,
    pub graph: GraphSource,
    pub seed: u64,
    /// Defaults to `100 * D * ceil(log2 n)`.
    pub max_rounds: Option<u64>,
    pub snapshots: bool,
    pub max_graph_retries: u32,
}

impl TrialConfig {
    pub fn new(instance: InstanceSource, graph: GraphSource, seed: u64) -> Self {
        TrialConfig {
            instance,
            graph,
            seed,
            max_rounds: None,
            snapshots: false,
            max_graph_retries: 100,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        TrialConfig { seed, ..self.clone() }
    }
}

/// Final per-node outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeOutcome {
    /// 1-based node number.
    pub id: u32,
    pub qs: i64,
    pub total_share: Option<i64>,
    pub incremental: Option<i64>,
    /// Last round in which `qs` changed (0 if never).
    pub converge_round: u64,
    pub stop_round: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub graph_retries: u32,
    pub node_count: usize,
    pub edge_count: usize,
    pub diameter: u32,
    /// Window length actually used (diameter or the supplied bound).
    pub window: u32,
    pub max_out_degree: usize,
    pub max_rounds: u64,
    pub termination_round: Option<u64>,
    pub first_converge: u64,
    pub last_converge: u64,
    pub q_tasks_num: i64,
    pub q_tasks_den: i64,
    pub initial_sum_y: i64,
    pub initial_sum_z: i64,
    pub conservation: Vec<RoundSums>,
    pub nodes: Vec<NodeOutcome>,
    pub instance: ProblemInstance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshots: Option<Vec<Vec<[i64; 3]>>>,
}

impl TrialResult {
    pub fn terminated(&self) -> bool {
        self.termination_round.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStats {
    pub min: u64,
    pub max: u64,
    pub mean: f64,
    pub window: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("trial did not terminate")]
pub struct NotTerminated;

pub fn convergence_stats(result: &TrialResult) -> Result<ConvergenceStats, NotTerminated> {
    if !result.terminated() || result.nodes.is_empty() {
        return Err(NotTerminated);
    }
    let rounds = result.nodes.iter().map(|n| n.converge_round);
    let min = rounds.clone().min().unwrap_or(0);
    let max = rounds.clone().max().unwrap_or(0);
    let mean = rounds.map(|r| r as f64).sum::<f64>() / result.nodes.len() as f64;
    Ok(ConvergenceStats { min, max, mean, window: max - min })
}

const INSTANCE_SALT: u64 = 0x1;
const PROTOCOL_SALT: u64 = 0x2;

/// SplitMix64 finalizer over `seed ^ salt`; decorrelates derived streams.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = (seed ^ salt.wrapping_mul(0xA076_1D64_78BD_642F)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn default_max_rounds(window: u32, n: usize) -> u64 {
    let log2 = (n.max(2) as f64).log2().ceil() as u64;
    100 * window as u64 * log2
}

/// Materializes the instance and graph a config describes. Returns the graph
/// and the number of regenerations needed to reach strong connectivity.
pub fn resolve_inputs(cfg: &TrialConfig) -> Result<(ProblemInstance, Arc<Digraph>, u32), TrialError> {
    let instance = match &cfg.instance {
        InstanceSource::Given { instance } => instance.clone(),
        InstanceSource::Generated(recipe) => recipe.build(cfg.seed)?,
    };
    let n = instance.node_count();
    let (graph, retries) = match &cfg.graph {
        GraphSource::Given(g) => {
            if !g.is_strongly_connected() {
                return Err(TrialError::Topology(TopologyError::NotStronglyConnected));
            }
            (Arc::clone(g), 0)
        }
        GraphSource::Random { edge_prob } => {
            let mut retries = 0;
            loop {
                let g = topology::generate_random_digraph(n, *edge_prob, cfg.seed.wrapping_add(retries as u64))?;
                if g.is_strongly_connected() {
                    break (Arc::new(g), retries);
                }
                if retries >= cfg.max_graph_retries {
                    return Err(TrialError::Disconnected { retries });
                }
                retries += 1;
            }
        }
    };
    if graph.node_count() != n {
        return Err(TrialError::SizeMismatch { graph: graph.node_count(), instance: n });
    }
    Ok((instance, graph, retries))
}

pub fn run_trial(cfg: &TrialConfig) -> Result<TrialResult, TrialError> {
    let (instance, graph, retries) = resolve_inputs(cfg)?;
    run_on(cfg, &instance, &graph, retries)
}

/// Runs one trial on already-materialized inputs.
pub fn run_on(
    cfg: &TrialConfig,
    instance: &ProblemInstance,
    graph: &Digraph,
    graph_retries: u32,
) -> Result<TrialResult, TrialError> {
    if !problem::check_feasibility(instance)? {
        return Err(TrialError::Infeasible);
    }
    let diameter = graph.diameter()?;
    let window = match instance.diameter_bound() {
        Some(bound) if bound < diameter => return Err(TrialError::DiameterBound { bound, diameter }),
        Some(bound) => bound,
        // A lone node has diameter 0 but still needs one round per window.
        None => diameter.max(1),
    };
    let n = graph.node_count();
    let max_rounds = cfg.max_rounds.unwrap_or_else(|| default_max_rounds(window, n));
    if max_rounds < window as u64 {
        return Err(TrialError::RoundCap { max_rounds, window });
    }

    let mut sim = Simulation::new(instance, graph, window, derive_seed(cfg.seed, PROTOCOL_SALT))?;
    if cfg.snapshots {
        sim.record_snapshots();
    }
    let mut conservation = Vec::new();
    let mut termination_round = None;
    while sim.round() < max_rounds {
        let report = sim.run_round()?;
        conservation.push(report.sums);
        if report.terminated {
            termination_round = Some(sim.round());
            break;
        }
    }

    let q = problem::q_tasks(instance);
    let nodes: Vec<NodeOutcome> = sim
        .nodes
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let fw = s.final_workload().ok();
            NodeOutcome {
                id: j as u32 + 1,
                qs: s.q_s(),
                total_share: fw.map(|w| w.total_share),
                incremental: fw.map(|w| w.incremental),
                converge_round: sim.converge_round[j],
                stop_round: sim.stop_round[j],
            }
        })
        .collect();
    let first_converge = nodes.iter().map(|n| n.converge_round).min().unwrap_or(0);
    let last_converge = nodes.iter().map(|n| n.converge_round).max().unwrap_or(0);

    Ok(TrialResult {
        seed: cfg.seed,
        graph_retries,
        node_count: n,
        edge_count: graph.edge_count(),
        diameter,
        window,
        max_out_degree: graph.max_out_degree(),
        max_rounds,
        termination_round,
        first_converge,
        last_converge,
        q_tasks_num: *q.numer() as i64,
        q_tasks_den: *q.denom() as i64,
        initial_sum_y: sim.initial_y as i64,
        initial_sum_z: sim.initial_z as i64,
        conservation,
        nodes,
        instance: instance.clone(),
        snapshots: sim.snapshots.take(),
    })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Summary { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeStats {
    pub size: usize,
    pub trials: usize,
    /// Trials that errored; excluded from every aggregate.
    pub failed: usize,
    /// Trials that hit the round cap; excluded from round aggregates.
    pub capped: usize,
    pub termination: Option<Summary>,
    pub first_converge: Option<Summary>,
    pub last_converge: Option<Summary>,
    pub window: Option<Summary>,
    pub wall_seconds: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepStats {
    pub rows: Vec<SizeStats>,
}

/// Outcome of one sweep trial, kept for callers that want more than the
/// aggregates.
#[derive(Debug)]
pub struct SweepTrial {
    pub size: usize,
    pub seed: u64,
    pub wall_seconds: f64,
    pub outcome: Result<TrialResult, TrialError>,
}

/// Runs `trials_per_size` trials per size with seeds `base.seed ..
/// base.seed + trials_per_size`. Generated instances take their node count
/// from `sizes`. Trials run on the current rayon pool; results come back
/// ordered by `(size, seed)`.
pub fn run_sweep_trials(sizes: &[usize], trials_per_size: usize, base: &TrialConfig) -> Vec<SweepTrial> {
    let jobs: Vec<(usize, u64)> = sizes
        .iter()
        .flat_map(|&size| (0..trials_per_size as u64).map(move |t| (size, t)))
        .collect();
    jobs.into_par_iter()
        .map(|(size, t)| {
            let mut cfg = base.with_seed(base.seed.wrapping_add(t));
            if let InstanceSource::Generated(recipe) = &mut cfg.instance {
                recipe.nodes = size;
            }
            let start = Instant::now();
            let outcome = run_trial(&cfg);
            SweepTrial {
                size,
                seed: cfg.seed,
                wall_seconds: start.elapsed().as_secs_f64(),
                outcome,
            }
        })
        .collect()
}

pub fn aggregate(sizes: &[usize], trials: &[SweepTrial]) -> SweepStats {
    let rows = sizes
        .iter()
        .map(|&size| {
            let mine: Vec<&SweepTrial> = trials.iter().filter(|t| t.size == size).collect();
            let ok: Vec<(&TrialResult, f64)> = mine
                .iter()
                .filter_map(|t| t.outcome.as_ref().ok().map(|r| (r, t.wall_seconds)))
                .collect();
            let done: Vec<&TrialResult> = ok.iter().map(|(r, _)| *r).filter(|r| r.terminated()).collect();
            let collect = |f: &dyn Fn(&TrialResult) -> f64| {
                Summary::of(&done.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            SizeStats {
                size,
                trials: mine.len(),
                failed: mine.len() - ok.len(),
                capped: ok.len() - done.len(),
                termination: collect(&|r| r.termination_round.unwrap_or(0) as f64),
                first_converge: collect(&|r| r.first_converge as f64),
                last_converge: collect(&|r| r.last_converge as f64),
                window: collect(&|r| (r.last_converge - r.first_converge) as f64),
                wall_seconds: Summary::of(&ok.iter().map(|(_, w)| *w).collect::<Vec<_>>()),
            }
        })
        .collect();
    SweepStats { rows }
}

pub fn run_sweep(sizes: &[usize], trials_per_size: usize, base: &TrialConfig) -> SweepStats {
    aggregate(sizes, &run_sweep_trials(sizes, trials_per_size, base))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn given(loads: &[u64], caps: &[u64], pi_upper: u64, g: Digraph, seed: u64) -> TrialConfig {
        let instance =
            ProblemInstance::new(loads.to_vec(), vec![0; loads.len()], caps.to_vec(), pi_upper).unwrap();
        TrialConfig::new(InstanceSource::Given { instance }, GraphSource::Given(Arc::new(g)), seed)
    }

    #[test]
    fn two_node_conservation_every_round() {
        let inst = ProblemInstance::new(vec![3, 1], vec![0, 0], vec![5, 5], 10).unwrap();
        let g = Digraph::complete(2);
        let mut sim = Simulation::new(&inst, &g, 1, 7).unwrap();
        for _ in 0..20 {
            if sim.all_terminated() {
                break;
            }
            let report = sim.run_round().unwrap();
            assert_eq!((report.sums.sum_y, report.sums.sum_z), (40, 10));
        }
        assert!(sim.all_terminated());
        for s in sim.nodes() {
            assert_eq!(s.q_s(), 4);
        }
    }

    #[test]
    fn balanced_start_changes_nothing() {
        // all ratios equal: q_s stays at its initial value
        let inst = ProblemInstance::new(vec![2, 2, 2, 2], vec![0; 4], vec![4; 4], 10).unwrap();
        let g = Digraph::ring(4);
        let mut sim = Simulation::new(&inst, &g, 3, 1).unwrap();
        for _ in 0..3 {
            let report = sim.run_round().unwrap();
            assert!(report.changed.is_empty());
        }
        assert!(sim.all_terminated());
    }

    #[test]
    fn caps_two_instance_reaches_exact_target() {
        for seed in 0..10 {
            let r = run_trial(&given(&[1, 2, 3], &[2, 2, 2], 12, Digraph::complete(3), seed)).unwrap();
            assert!(r.terminated());
            assert_eq!((r.q_tasks_num, r.q_tasks_den), (12, 1));
            for n in &r.nodes {
                assert_eq!(n.qs, 12);
                assert_eq!(n.total_share, Some(2));
                assert_eq!(n.incremental, Some(2));
            }
        }
    }

    #[test]
    fn identical_unit_nodes_stop_at_first_check() {
        let r = run_trial(&given(&[1, 1], &[1, 1], 2, Digraph::complete(2), 3)).unwrap();
        assert_eq!(r.termination_round, Some(1));
        assert!(r.nodes.iter().all(|n| n.qs == 2 && n.converge_round == 0));
        assert_eq!(convergence_stats(&r).unwrap().window, 0);
    }

    #[test]
    fn trials_are_deterministic() {
        let cfg = TrialConfig::new(
            InstanceSource::Generated(InstanceRecipe::evaluation(40)),
            GraphSource::Random { edge_prob: 0.3 },
            11,
        );
        let a = serde_json::to_string(&run_trial(&cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&run_trial(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stop_round_is_a_window_multiple() {
        let g = Digraph::ring(5);
        let r = run_trial(&given(&[9, 0, 4, 1, 7], &[6, 4, 5, 3, 4], 30, g, 5)).unwrap();
        let t = r.termination_round.unwrap();
        assert_eq!(r.window, 4);
        assert_eq!(t % 4, 0);
        assert!(r.nodes.iter().all(|n| n.stop_round == Some(t)));
        assert!(r.last_converge <= t);
        assert_eq!(r.conservation.len() as u64, t);
    }

    #[test]
    fn round_cap_reports_non_termination() {
        let mut cfg = given(&[9, 0, 4, 1, 7], &[6, 4, 5, 3, 4], 30, Digraph::ring(5), 5);
        cfg.max_rounds = Some(4);
        let r = run_trial(&cfg).unwrap();
        // a single window cannot settle this instance
        assert_eq!(r.termination_round, None);
        assert!(r.nodes.iter().all(|n| n.total_share.is_none()));
        assert_eq!(convergence_stats(&r), Err(NotTerminated));
        cfg.max_rounds = Some(3);
        assert!(matches!(run_trial(&cfg), Err(TrialError::RoundCap { .. })));
    }

    #[test]
    fn single_node_stops_after_one_round() {
        let r = run_trial(&given(&[2], &[4], 10, Digraph::from_edges(1, []).unwrap(), 5)).unwrap();
        assert_eq!((r.diameter, r.window, r.termination_round), (0, 1, Some(1)));
        assert_eq!(r.nodes[0].qs, 5);
        assert_eq!(r.nodes[0].total_share, Some(2));
    }

    #[test]
    fn larger_diameter_bound_lengthens_windows() {
        let g = Digraph::complete(3);
        let instance = ProblemInstance::new(vec![1, 2, 3], vec![0; 3], vec![2; 3], 12)
            .unwrap()
            .with_diameter_bound(Some(3));
        let cfg = TrialConfig::new(InstanceSource::Given { instance: instance.clone() }, GraphSource::Given(Arc::new(g)), 2);
        let r = run_trial(&cfg).unwrap();
        assert_eq!((r.diameter, r.window), (1, 3));
        assert_eq!(r.termination_round.unwrap() % 3, 0);

        let bad = TrialConfig::new(
            InstanceSource::Given { instance: instance.with_diameter_bound(Some(1)) },
            GraphSource::Given(Arc::new(Digraph::ring(3))),
            2,
        );
        assert!(matches!(run_trial(&bad), Err(TrialError::DiameterBound { bound: 1, diameter: 2 })));
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = given(&[6, 6], &[5, 5], 10, Digraph::complete(2), 0);
        assert!(matches!(run_trial(&cfg), Err(TrialError::Infeasible)));
        let cfg = given(&[1, 1], &[5, 5], 10, Digraph::from_edges(2, [(1, 0)]).unwrap(), 0);
        assert!(matches!(run_trial(&cfg), Err(TrialError::Topology(TopologyError::NotStronglyConnected))));
        let cfg = given(&[1, 1, 1], &[5, 5, 5], 10, Digraph::complete(2), 0);
        assert!(matches!(run_trial(&cfg), Err(TrialError::SizeMismatch { .. })));
    }

    #[test]
    fn sparse_random_graphs_are_regenerated() {
        let mut cfg = TrialConfig::new(
            InstanceSource::Generated(InstanceRecipe::evaluation(12)),
            GraphSource::Random { edge_prob: 0.25 },
            0,
        );
        let mut saw_retry = false;
        for seed in 0..20 {
            cfg.seed = seed;
            let (_, g, retries) = resolve_inputs(&cfg).unwrap();
            assert!(g.is_strongly_connected());
            saw_retry |= retries > 0;
        }
        assert!(saw_retry);
        cfg.max_graph_retries = 0;
        cfg.graph = GraphSource::Random { edge_prob: 0.01 };
        assert!(matches!(run_trial(&cfg), Err(TrialError::Disconnected { retries: 0 })));
    }

    #[test]
    fn snapshots_track_every_round() {
        let mut cfg = given(&[1, 2, 3], &[2, 2, 2], 12, Digraph::complete(3), 4);
        cfg.snapshots = true;
        let r = run_trial(&cfg).unwrap();
        let snaps = r.snapshots.as_ref().unwrap();
        assert_eq!(snaps.len() as u64, r.termination_round.unwrap() + 1);
        for snap in snaps {
            assert_eq!(snap.iter().map(|s| s[0]).sum::<i64>(), 72);
            assert_eq!(snap.iter().map(|s| s[1]).sum::<i64>(), 6);
        }
    }

    #[test]
    fn convergence_stats_examples() {
        let mut r = run_trial(&given(&[1, 2, 3], &[2, 2, 2], 12, Digraph::complete(3), 4)).unwrap();
        for n in &mut r.nodes {
            n.converge_round = 3;
        }
        let s = convergence_stats(&r).unwrap();
        assert_eq!((s.min, s.max, s.mean, s.window), (3, 3, 3.0, 0));
        r.nodes.truncate(2);
        r.nodes[0].converge_round = 2;
        r.nodes[1].converge_round = 4;
        let s = convergence_stats(&r).unwrap();
        assert_eq!((s.min, s.max, s.mean, s.window), (2, 4, 3.0, 2));
    }

    #[test]
    fn sweep_counts_and_orders() {
        let base = TrialConfig::new(
            InstanceSource::Generated(InstanceRecipe::evaluation(0)),
            GraphSource::Random { edge_prob: 0.5 },
            100,
        );
        let trials = run_sweep_trials(&[20, 30], 5, &base);
        let keys: Vec<(usize, u64)> = trials.iter().map(|t| (t.size, t.seed)).collect();
        let want: Vec<(usize, u64)> =
            [20, 30].iter().flat_map(|&s| (100..105).map(move |seed| (s, seed))).collect();
        assert_eq!(keys, want);
        let stats = aggregate(&[20, 30], &trials);
        assert_eq!(stats.rows.len(), 2);
        assert!(stats.rows.iter().all(|r| r.trials == 5 && r.failed == 0 && r.capped == 0));
        assert!(stats.rows[0].termination.unwrap().mean >= 1.0);
    }

    #[test]
    fn summary_uses_sample_std() {
        let s = Summary::of(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert_eq!(s.mean, 5.0);
        assert!((s.std - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(Summary::of(&[3.0]).unwrap().std, 0.0);
        assert!(Summary::of(&[]).is_none());
    }
}
