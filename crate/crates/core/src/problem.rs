//! Scheduling instances and their closed-form quantities.
//!
//! Everything here is exact: per-node quantities are integers and derived
//! quantities are [`Rational`]s.

use std::fmt::Write as _;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{Signed, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::NodeId;

/// Exact rational in lowest terms with a positive denominator.
pub type Rational = Ratio<i128>;

pub fn floor_int(r: &Rational) -> i128 {
    r.numer().div_euclid(*r.denom())
}

pub fn ceil_int(r: &Rational) -> i128 {
    -((-r.numer()).div_euclid(*r.denom()))
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProblemError {
    #[error("instance has no nodes")]
    Empty,
    #[error("per-node vectors differ in length: loads {loads}, utils {utils}, capacities {caps}")]
    LengthMismatch { loads: usize, utils: usize, caps: usize },
    #[error("node {node}: capacity must be positive")]
    ZeroCapacity { node: usize },
    #[error("pi_upper must be positive")]
    ZeroPiUpper,
    #[error("node {node}: utilization {util} exceeds capacity {cap}")]
    OverUtilized { node: usize, util: u64, cap: u64 },
    #[error("pi_upper {pi_upper} is below total capacity {total}")]
    PiUpperTooSmall { pi_upper: u64, total: u64 },
    #[error("closed-form optimum needs equal-length nonempty inputs with positive weights")]
    BadWeights,
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("bad value spec `{spec}`: {reason}")]
    Spec { spec: String, reason: String },
}

/// One single-step scheduling problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemInstance {
    loads: Vec<u64>,
    utils: Vec<u64>,
    capacities: Vec<u64>,
    pi_upper: u64,
    /// Diameter of the communication graph or an upper bound on it; `None`
    /// lets the engine use the graph's own diameter.
    #[serde(default)]
    diameter_bound: Option<u32>,
}

impl ProblemInstance {
    pub fn new(
        loads: Vec<u64>,
        utils: Vec<u64>,
        capacities: Vec<u64>,
        pi_upper: u64,
    ) -> Result<Self, ProblemError> {
        if loads.is_empty() {
            return Err(ProblemError::Empty);
        }
        if loads.len() != utils.len() || loads.len() != capacities.len() {
            return Err(ProblemError::LengthMismatch {
                loads: loads.len(),
                utils: utils.len(),
                caps: capacities.len(),
            });
        }
        if let Some(node) = capacities.iter().position(|&c| c == 0) {
            return Err(ProblemError::ZeroCapacity { node });
        }
        if pi_upper == 0 {
            return Err(ProblemError::ZeroPiUpper);
        }
        Ok(ProblemInstance {
            loads,
            utils,
            capacities,
            pi_upper,
            diameter_bound: None,
        })
    }

    /// Like [`ProblemInstance::new`] with all utilizations zero and
    /// `pi_upper` defaulted via [`default_pi_upper`].
    pub fn with_default_bound(loads: Vec<u64>, capacities: Vec<u64>) -> Result<Self, ProblemError> {
        let pi_upper = default_pi_upper(&capacities);
        let utils = vec![0; loads.len()];
        Self::new(loads, utils, capacities, pi_upper)
    }

    pub fn with_diameter_bound(mut self, bound: Option<u32>) -> Self {
        self.diameter_bound = bound;
        self
    }

    pub fn node_count(&self) -> usize {
        self.loads.len()
    }

    pub fn loads(&self) -> &[u64] {
        &self.loads
    }

    pub fn utils(&self) -> &[u64] {
        &self.utils
    }

    pub fn capacities(&self) -> &[u64] {
        &self.capacities
    }

    pub fn pi_upper(&self) -> u64 {
        self.pi_upper
    }

    pub fn diameter_bound(&self) -> Option<u32> {
        self.diameter_bound
    }

    pub fn load(&self, j: NodeId) -> u64 {
        self.loads[j as usize]
    }

    pub fn util(&self, j: NodeId) -> u64 {
        self.utils[j as usize]
    }

    pub fn capacity(&self, j: NodeId) -> u64 {
        self.capacities[j as usize]
    }

    /// `l_j + u_j`.
    pub fn demand(&self, j: NodeId) -> u64 {
        self.loads[j as usize] + self.utils[j as usize]
    }

    pub fn total_capacity(&self) -> u64 {
        self.capacities.iter().sum()
    }

    pub fn total_demand(&self) -> u64 {
        (0..self.node_count() as NodeId).map(|j| self.demand(j)).sum()
    }

    /// Initial numerator mass `pi_upper * (l_j + u_j)`.
    pub fn initial_y(&self, j: NodeId) -> i64 {
        (self.pi_upper as i64) * (self.demand(j) as i64)
    }

    /// Whether `pi_upper >= sum of capacities`.
    pub fn satisfies_capacity_bound(&self) -> bool {
        self.pi_upper >= self.total_capacity()
    }

    pub fn check_capacity_bound(&self) -> Result<(), ProblemError> {
        if self.satisfies_capacity_bound() {
            Ok(())
        } else {
            Err(ProblemError::PiUpperTooSmall {
                pi_upper: self.pi_upper,
                total: self.total_capacity(),
            })
        }
    }

    /// Text form: header `nodes <n> pi_upper <P> diameter <D|auto>`, then
    /// `<id> <load> <util> <capacity>` per node with 1-based ids.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let diameter = self
            .diameter_bound
            .map_or_else(|| "auto".to_string(), |d| d.to_string());
        let _ = writeln!(
            out,
            "nodes {} pi_upper {} diameter {}",
            self.node_count(),
            self.pi_upper,
            diameter
        );
        for j in 0..self.node_count() {
            let _ = writeln!(
                out,
                "{} {} {} {}",
                j + 1,
                self.loads[j],
                self.utils[j],
                self.capacities[j]
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ProblemError> {
        let err = |line: usize, reason: String| ProblemError::Parse { line, reason };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let (hline, header) = lines
            .next()
            .ok_or_else(|| err(1, "missing header".into()))?;
        let toks: Vec<&str> = header.split_whitespace().collect();
        let (n, pi_upper, diameter) = match toks.as_slice() {
            ["nodes", n, "pi_upper", p, "diameter", d] => {
                let n: usize = n.parse().map_err(|e| err(hline, format!("bad node count: {e}")))?;
                let p: u64 = p.parse().map_err(|e| err(hline, format!("bad pi_upper: {e}")))?;
                let d = match *d {
                    "auto" => None,
                    d => {
                        let d: u32 = d.parse().map_err(|e| err(hline, format!("bad diameter: {e}")))?;
                        if d == 0 {
                            return Err(err(hline, "diameter must be positive".into()));
                        }
                        Some(d)
                    }
                };
                (n, p, d)
            }
            _ => {
                return Err(err(
                    hline,
                    format!("expected `nodes <n> pi_upper <P> diameter <D>`, got `{header}`"),
                ))
            }
        };

        let mut rows: Vec<Option<(u64, u64, u64)>> = vec![None; n];
        for (lineno, line) in lines {
            let nums: Vec<&str> = line.split_whitespace().collect();
            if nums.len() != 4 {
                return Err(err(lineno, format!("expected `<id> <load> <util> <capacity>`, got `{line}`")));
            }
            let parsed: Result<Vec<u64>, _> = nums.iter().map(|t| t.parse::<u64>()).collect();
            let parsed = parsed.map_err(|e| err(lineno, format!("non-integer field: {e}")))?;
            let id = parsed[0] as usize;
            if id == 0 || id > n {
                return Err(err(lineno, format!("node id {id} out of range 1..={n}")));
            }
            if rows[id - 1].is_some() {
                return Err(err(lineno, format!("duplicate node id {id}")));
            }
            rows[id - 1] = Some((parsed[1], parsed[2], parsed[3]));
        }
        if let Some(missing) = rows.iter().position(Option::is_none) {
            return Err(err(0, format!("node {} has no line", missing + 1)));
        }
        let (mut loads, mut utils, mut caps) = (Vec::new(), Vec::new(), Vec::new());
        for (l, u, c) in rows.into_iter().flatten() {
            loads.push(l);
            utils.push(u);
            caps.push(c);
        }
        Ok(Self::new(loads, utils, caps, pi_upper)?.with_diameter_bound(diameter))
    }
}

/// Smallest power of ten at or above the total capacity.
pub fn default_pi_upper(capacities: &[u64]) -> u64 {
    let total: u64 = capacities.iter().sum();
    let mut p = 1u64;
    while p < total {
        p *= 10;
    }
    p
}

/// Whether total demand fits the free capacity. Fails if any node is
/// utilized beyond its capacity.
pub fn check_feasibility(inst: &ProblemInstance) -> Result<bool, ProblemError> {
    let mut free = 0u64;
    for j in 0..inst.node_count() {
        let (u, cap) = (inst.utils[j], inst.capacities[j]);
        if u > cap {
            return Err(ProblemError::OverUtilized { node: j, util: u, cap });
        }
        free += cap - u;
    }
    let demand: u64 = inst.loads.iter().sum();
    Ok(demand <= free)
}

/// Minimizer of `sum_i alpha_i / 2 * (z - rho_i)^2`: the alpha-weighted mean
/// of the `rho_i`.
pub fn closed_form_optimum(alphas: &[Rational], rhos: &[Rational]) -> Result<Rational, ProblemError> {
    if alphas.is_empty() || alphas.len() != rhos.len() || alphas.iter().any(|a| !a.is_positive()) {
        return Err(ProblemError::BadWeights);
    }
    let weight: Rational = alphas.iter().sum();
    let weighted: Rational = alphas.iter().zip(rhos).map(|(a, r)| a * r).sum();
    Ok(weighted / weight)
}

/// `cap / 2 * (z - load_plus_util / cap)^2`.
pub fn local_cost(capacity: u64, load_plus_util: u64, z: Rational) -> Rational {
    let cap = Rational::from_integer(capacity as i128);
    let gap = z - Rational::new(load_plus_util as i128, capacity as i128);
    cap * gap * gap / 2
}

/// Scaled target ratio `pi_upper * sum(l + u) / sum(cap)`.
pub fn q_tasks(inst: &ProblemInstance) -> Rational {
    Rational::new(
        inst.pi_upper as i128 * inst.total_demand() as i128,
        inst.total_capacity() as i128,
    )
}

/// Workload node `j` should receive so that every node ends at the same
/// utilization fraction.
pub fn optimal_workload(inst: &ProblemInstance, j: NodeId) -> Rational {
    let share = Rational::new(inst.total_demand() as i128, inst.total_capacity() as i128);
    share * inst.capacity(j) as i128 - inst.util(j) as i128
}

/// Total distance of the initial numerators from the band
/// `[floor(q_tasks), ceil(q_tasks)]`.
pub fn y_init(inst: &ProblemInstance) -> u64 {
    let q = q_tasks(inst);
    let (lo, hi) = (floor_int(&q), ceil_int(&q));
    (0..inst.node_count() as NodeId)
        .map(|j| {
            let y0 = inst.initial_y(j) as i128;
            if y0 > hi {
                (y0 - hi) as u64
            } else if y0 < lo {
                (lo - y0) as u64
            } else {
                0
            }
        })
        .sum()
}

/// Declarative per-node value generator used by the CLI and experiments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ValueSpec {
    /// Explicit values, one per node.
    List(Vec<u64>),
    /// Uniform integers in `lo..=hi`.
    Uniform { lo: u64, hi: u64 },
    /// `even` for even 1-based node numbers, `odd` for odd ones.
    Alternating { even: u64, odd: u64 },
    Constant(u64),
}

impl ValueSpec {
    pub fn materialize<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<u64>, ProblemError> {
        match self {
            ValueSpec::List(v) if v.len() == n => Ok(v.clone()),
            ValueSpec::List(v) => Err(ProblemError::Spec {
                spec: self.to_string(),
                reason: format!("{} values given for {n} nodes", v.len()),
            }),
            ValueSpec::Uniform { lo, hi } => Ok((0..n).map(|_| rng.gen_range(*lo..=*hi)).collect()),
            ValueSpec::Alternating { even, odd } => Ok((1..=n)
                .map(|num| if num % 2 == 0 { *even } else { *odd })
                .collect()),
            ValueSpec::Constant(c) => Ok(vec![*c; n]),
        }
    }

    pub fn len_hint(&self) -> Option<usize> {
        match self {
            ValueSpec::List(v) => Some(v.len()),
            _ => None,
        }
    }
}

impl std::fmt::Display for ValueSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ValueSpec::List(v) => {
                let parts: Vec<String> = v.iter().map(u64::to_string).collect();
                write!(f, "list:{}", parts.join(","))
            }
            ValueSpec::Uniform { lo, hi } => write!(f, "uniform:{lo},{hi}"),
            ValueSpec::Alternating { even, odd } => write!(f, "alt:{even},{odd}"),
            ValueSpec::Constant(c) => write!(f, "const:{c}"),
        }
    }
}

impl FromStr for ValueSpec {
    type Err = ProblemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |reason: &str| ProblemError::Spec {
            spec: s.to_string(),
            reason: reason.to_string(),
        };
        let (kind, rest) = s.split_once(':').ok_or_else(|| bad("expected `<kind>:<values>`"))?;
        let nums: Vec<u64> = rest
            .split(',')
            .map(|t| t.trim().parse::<u64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad("values must be nonnegative integers"))?;
        match (kind, nums.as_slice()) {
            ("list", []) => Err(bad("empty list")),
            ("list", _) => Ok(ValueSpec::List(nums)),
            ("uniform", [lo, hi]) if lo <= hi => Ok(ValueSpec::Uniform { lo: *lo, hi: *hi }),
            ("uniform", [_, _]) => Err(bad("lo must not exceed hi")),
            ("alt", [even, odd]) => Ok(ValueSpec::Alternating { even: *even, odd: *odd }),
            ("const", [c]) => Ok(ValueSpec::Constant(*c)),
            ("uniform" | "alt", _) => Err(bad("expected exactly two values")),
            ("const", _) => Err(bad("expected exactly one value")),
            _ => Err(bad("kind must be one of list, uniform, alt, const")),
        }
    }
}

impl From<ValueSpec> for String {
    fn from(v: ValueSpec) -> String {
        v.to_string()
    }
}

impl TryFrom<String> for ValueSpec {
    type Error = ProblemError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// `r` as a decimal, for reporting only.
pub fn to_f64(r: &Rational) -> f64 {
    if r.is_zero() {
        return 0.0;
    }
    *r.numer() as f64 / *r.denom() as f64
}
