//! Independent checks against the closed-form targets and the probabilistic
//! convergence bounds.
//!
//! Nothing here reuses the engine's bookkeeping beyond the recorded trace:
//! targets are recomputed from the instance, and sums from the instance or
//! from snapshots.

use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::TrialResult;
use crate::problem::{self, ceil_int, floor_int, ProblemInstance, Rational};
use crate::protocol::share_of;
use crate::topology::NodeId;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("epsilon must lie strictly between 0 and 1, got {0}")]
    Epsilon(f64),
    #[error("need n >= 2 and max out-degree >= 1, got n = {n}, degree = {degree}")]
    Domain { n: usize, degree: usize },
    #[error("divisor must be positive")]
    ZeroDivisor,
    #[error("(1 + {degree})^{exp} does not fit in 128 bits")]
    Overflow { degree: usize, exp: usize },
}

/// Exact `sum(values) / divisor`.
pub fn real_average(values: &[i64], divisor: u64) -> Result<Rational, OracleError> {
    if divisor == 0 {
        return Err(OracleError::ZeroDivisor);
    }
    let total: i128 = values.iter().map(|&v| v as i128).sum();
    Ok(Rational::new(total, divisor as i128))
}

/// `(1 + d_max)^-(n-1)`: lower bound on the chance that a randomly walking
/// token sits at a given node after `n - 1` steps.
pub fn token_visit_probability_bound(n: usize, d_out_max: usize) -> Result<Rational, OracleError> {
    check_domain(n, d_out_max)?;
    let exp = n - 1;
    let base = d_out_max as i128 + 1;
    let den = u32::try_from(exp)
        .ok()
        .and_then(|e| base.checked_pow(e))
        .ok_or(OracleError::Overflow { degree: d_out_max, exp })?;
    Ok(Rational::new(1, den))
}

fn check_domain(n: usize, d_out_max: usize) -> Result<(), OracleError> {
    if n < 2 || d_out_max < 1 {
        return Err(OracleError::Domain { n, degree: d_out_max });
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<(), OracleError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(OracleError::Epsilon(eps));
    }
    Ok(())
}

/// Ceiling that forgives floating-point noise: values within a relative
/// 1e-9 of an integer snap to it.
fn tolerant_ceil(x: f64) -> f64 {
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * x.abs().max(1.0) {
        nearest
    } else {
        x.ceil()
    }
}

/// Number of `(n - 1)`-step blocks after which a token has missed a given
/// node with probability at most `eps`:
/// `ceil(ln eps / ln(1 - (1 + d_max)^-(n-1)))`. Saturates at `u64::MAX`
/// when the visit probability underflows.
pub fn tau_bound(n: usize, d_out_max: usize, eps: f64) -> Result<u64, OracleError> {
    check_domain(n, d_out_max)?;
    check_eps(eps)?;
    let ln_p = -((n - 1) as f64) * ((d_out_max + 1) as f64).ln();
    let p = ln_p.exp();
    let tau = if p > 0.0 {
        eps.ln() / (-p).ln_1p()
    } else {
        f64::INFINITY
    };
    Ok(tolerant_ceil(tau) as u64)
}

/// `(1 - eps)^(y_init + n)`.
pub fn success_probability_bound(y_init: u64, n: usize, eps: f64) -> Result<f64, OracleError> {
    check_eps(eps)?;
    Ok((1.0 - eps).powf((y_init as f64) + n as f64))
}

/// Round budget paired with [`success_probability_bound`]:
/// `ceil((y_init + n) * tau * (n - 1) / D) * D + D`, saturating.
pub fn step_budget(y_init: u64, n: usize, tau: u64, diameter: u32) -> u64 {
    let d = diameter.max(1) as u128;
    let work = (y_init as u128 + n as u128)
        .saturating_mul(tau as u128)
        .saturating_mul(n.saturating_sub(1) as u128);
    let windows = work.div_ceil(d);
    let total = windows.saturating_mul(d).saturating_add(d);
    u64::try_from(total).unwrap_or(u64::MAX)
}

/// The scaled target computed three ways: directly, as the ratio of initial
/// mass totals, and from the weighted closed-form optimum.
pub fn q_tasks_three_ways(inst: &ProblemInstance) -> [Rational; 3] {
    let direct = problem::q_tasks(inst);
    let n = inst.node_count() as NodeId;
    let y0: Vec<i64> = (0..n).map(|j| inst.initial_y(j)).collect();
    let ratio = real_average(&y0, inst.total_capacity()).expect("capacities are positive");
    let alphas: Vec<Rational> = (0..n)
        .map(|j| Rational::from_integer(inst.capacity(j) as i128))
        .collect();
    let rhos: Vec<Rational> = (0..n)
        .map(|j| Rational::new(inst.demand(j) as i128, inst.capacity(j) as i128))
        .collect();
    let closed = problem::closed_form_optimum(&alphas, &rhos).expect("weights are positive")
        * inst.pi_upper() as i128;
    [direct, ratio, closed]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundContext {
    pub eps: f64,
    pub y_init: u64,
    pub tau: Option<u64>,
    pub success_probability: Option<f64>,
    pub step_budget: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadCheck {
    pub id: u32,
    pub total_share: Option<i64>,
    pub incremental: Option<i64>,
    /// Exact optimum as `(numerator, denominator)`.
    pub optimal_num: i64,
    pub optimal_den: i64,
    /// Shares reachable from the floor and ceiling of the target.
    pub allowed_shares: [i64; 2],
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub seed: u64,
    pub terminated: bool,
    pub exactness_pass: bool,
    pub conservation_pass: bool,
    pub simultaneous_stop_pass: bool,
    pub workload_pass: bool,
    pub pass: bool,
    pub issues: Vec<String>,
    pub workload: Vec<WorkloadCheck>,
    pub bounds: BoundContext,
}

pub const DEFAULT_EPS: f64 = 0.05;

pub fn bound_context(inst: &ProblemInstance, d_out_max: usize, diameter: u32, eps: f64) -> BoundContext {
    let n = inst.node_count();
    let y_init = problem::y_init(inst);
    let tau = tau_bound(n, d_out_max, eps).ok();
    BoundContext {
        eps,
        y_init,
        tau,
        success_probability: success_probability_bound(y_init, n, eps).ok(),
        step_budget: tau.map(|t| step_budget(y_init, n, t, diameter)),
    }
}

/// Checks a finished trial against the instance's closed-form answers.
pub fn verify_trial(result: &TrialResult, inst: &ProblemInstance, eps: f64) -> VerificationReport {
    let mut issues = Vec::new();
    let n = inst.node_count();
    let q = problem::q_tasks(inst);
    let (lo, hi) = (floor_int(&q) as i64, ceil_int(&q) as i64);

    if result.nodes.len() != n {
        issues.push(format!("trace has {} nodes, instance has {n}", result.nodes.len()));
    }
    if Rational::new(result.q_tasks_num as i128, result.q_tasks_den.max(1) as i128) != q {
        issues.push(format!(
            "recorded target {}/{} differs from instance target {q}",
            result.q_tasks_num, result.q_tasks_den
        ));
    }
    let terminated = result.termination_round.is_some();
    if !terminated {
        issues.push("trial did not terminate".into());
    }

    // exactness
    let mut exactness_pass = terminated && result.nodes.len() == n;
    for node in &result.nodes {
        if node.qs != lo && node.qs != hi {
            exactness_pass = false;
            issues.push(format!("node {}: q_s = {} outside {{{lo}, {hi}}}", node.id, node.qs));
        }
    }

    // conservation, against sums recomputed from the instance
    let want_y: i64 = (0..n as NodeId).map(|j| inst.initial_y(j)).sum();
    let want_z = inst.total_capacity() as i64;
    let mut conservation_pass = result.initial_sum_y == want_y && result.initial_sum_z == want_z;
    if !conservation_pass {
        issues.push(format!(
            "recorded initial sums ({}, {}) differ from instance sums ({want_y}, {want_z})",
            result.initial_sum_y, result.initial_sum_z
        ));
    }
    let rounds = result.termination_round.unwrap_or(result.conservation.len() as u64);
    if result.conservation.len() as u64 != rounds {
        conservation_pass = false;
        issues.push(format!(
            "conservation log covers {} rounds, trial ran {rounds}",
            result.conservation.len()
        ));
    }
    for (i, sums) in result.conservation.iter().enumerate() {
        if sums.round != i as u64 + 1 || sums.sum_y != want_y || sums.sum_z != want_z {
            conservation_pass = false;
            issues.push(format!(
                "round {}: sums ({}, {}) expected ({want_y}, {want_z})",
                sums.round, sums.sum_y, sums.sum_z
            ));
        }
    }
    if let Some(snaps) = &result.snapshots {
        if snaps.len() as u64 != rounds + 1 {
            conservation_pass = false;
            issues.push(format!("{} snapshots for {rounds} rounds", snaps.len()));
        }
        for (k, snap) in snaps.iter().enumerate() {
            let y: i64 = snap.iter().map(|s| s[0]).sum();
            let z: i64 = snap.iter().map(|s| s[1]).sum();
            if y != want_y || z != want_z || snap.iter().any(|s| s[1] < 1) {
                conservation_pass = false;
                issues.push(format!("snapshot {k}: sums ({y}, {z}) expected ({want_y}, {want_z})"));
            }
        }
        if let Some(last) = snaps.last() {
            for (node, s) in result.nodes.iter().zip(last) {
                if node.qs != s[2] {
                    exactness_pass = false;
                    issues.push(format!("node {}: reported q_s {} but final snapshot has {}", node.id, node.qs, s[2]));
                }
            }
        }
    }

    // simultaneous stop at a window boundary
    let mut simultaneous_stop_pass = terminated;
    if let Some(t) = result.termination_round {
        let window = result.window.max(1) as u64;
        if t == 0 || t % window != 0 {
            simultaneous_stop_pass = false;
            issues.push(format!("termination round {t} is not a positive multiple of {window}"));
        }
        if result.window < result.diameter {
            simultaneous_stop_pass = false;
            issues.push(format!("window {} shorter than diameter {}", result.window, result.diameter));
        }
        for node in &result.nodes {
            if node.stop_round != Some(t) {
                simultaneous_stop_pass = false;
                issues.push(format!("node {} stopped at {:?}, trial at {t}", node.id, node.stop_round));
            }
            if node.converge_round > t {
                simultaneous_stop_pass = false;
                issues.push(format!("node {} changed q_s at round {} after stop", node.id, node.converge_round));
            }
        }
    }

    // workloads
    let mut workload_pass = terminated && result.nodes.len() == n;
    let mut workload = Vec::with_capacity(n);
    for node in result.nodes.iter().take(n) {
        let j = node.id.saturating_sub(1);
        if j as usize >= n {
            workload_pass = false;
            issues.push(format!("node id {} out of range", node.id));
            continue;
        }
        let cap = inst.capacity(j);
        let util = inst.util(j) as i64;
        let optimal = problem::optimal_workload(inst, j);
        let allowed = [share_of(lo, cap, inst.pi_upper()), share_of(hi, cap, inst.pi_upper())];
        let ok = match (node.total_share, node.incremental) {
            (Some(share), Some(inc)) => {
                // the exact optimum plus u_j lies within one rounding step
                // (plus the floor/ceil spread) of the integer share
                let slack = Rational::new(cap as i128, inst.pi_upper() as i128) + 1;
                let gap = Rational::from_integer(inc as i128) - optimal;
                let gap = if gap < Rational::zero() { -gap } else { gap };
                allowed.contains(&share)
                    && share == share_of(node.qs, cap, inst.pi_upper())
                    && inc == share - util
                    && gap < slack
            }
            _ => false,
        };
        if !ok {
            workload_pass = false;
            issues.push(format!(
                "node {}: share {:?} / incremental {:?} inconsistent with optimum {optimal} (allowed shares {allowed:?})",
                node.id, node.total_share, node.incremental
            ));
        }
        workload.push(WorkloadCheck {
            id: node.id,
            total_share: node.total_share,
            incremental: node.incremental,
            optimal_num: *optimal.numer() as i64,
            optimal_den: *optimal.denom() as i64,
            allowed_shares: allowed,
            ok,
        });
    }

    let pass = exactness_pass && conservation_pass && simultaneous_stop_pass && workload_pass && issues.is_empty();
    VerificationReport {
        seed: result.seed,
        terminated,
        exactness_pass,
        conservation_pass,
        simultaneous_stop_pass,
        workload_pass,
        pass,
        issues,
        workload,
        bounds: bound_context(inst, result.max_out_degree, result.window, eps),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run_trial, GraphSource, InstanceSource, TrialConfig};
    use crate::topology::Digraph;
    use std::sync::Arc;

    fn caps_two() -> ProblemInstance {
        ProblemInstance::new(vec![1, 2, 3], vec![0; 3], vec![2; 3], 12).unwrap()
    }

    fn caps_two_trial(seed: u64, snapshots: bool) -> TrialResult {
        let mut cfg = TrialConfig::new(
            InstanceSource::Given { instance: caps_two() },
            GraphSource::Given(Arc::new(Digraph::complete(3))),
            seed,
        );
        cfg.snapshots = snapshots;
        run_trial(&cfg).unwrap()
    }

    #[test]
    fn real_average_examples() {
        assert_eq!(real_average(&[12, 24, 36], 3), Ok(Rational::from_integer(24)));
        assert_eq!(real_average(&[12, 24, 36], 6), Ok(Rational::from_integer(12)));
        assert_eq!(real_average(&[0, 0], 2), Ok(Rational::zero()));
        assert_eq!(real_average(&[1], 0), Err(OracleError::ZeroDivisor));
    }

    #[test]
    fn visit_probability_examples() {
        assert_eq!(token_visit_probability_bound(3, 2), Ok(Rational::new(1, 9)));
        assert_eq!(token_visit_probability_bound(2, 1), Ok(Rational::new(1, 2)));
        for n in 2..12 {
            for d in 1..6 {
                let p = token_visit_probability_bound(n, d).unwrap();
                assert!(p > Rational::zero() && p <= Rational::from_integer(1));
            }
        }
        assert!(matches!(token_visit_probability_bound(200, 100), Err(OracleError::Overflow { .. })));
        assert!(token_visit_probability_bound(1, 1).is_err());
    }

    #[test]
    fn tau_examples() {
        // ln 0.1 / ln(8/9) = 19.549...
        assert_eq!(tau_bound(3, 2, 0.1), Ok(20));
        assert_eq!(tau_bound(2, 1, 0.5), Ok(1));
        assert!(tau_bound(3, 2, 0.01).unwrap() >= tau_bound(3, 2, 0.1).unwrap());
        assert_eq!(tau_bound(3, 2, 0.0), Err(OracleError::Epsilon(0.0)));
        assert_eq!(tau_bound(3, 2, 1.0), Err(OracleError::Epsilon(1.0)));
        assert_eq!(tau_bound(5000, 2500, 0.05), Ok(u64::MAX));
    }

    #[test]
    fn tau_matches_direct_formula() {
        for (n, d, eps) in [(3usize, 2usize, 0.05f64), (4, 3, 0.2), (6, 1, 0.01), (5, 4, 0.9)] {
            let p = 1.0 / ((1 + d) as f64).powi(n as i32 - 1);
            let direct = (eps.ln() / (1.0 - p).ln()).ceil() as u64;
            assert_eq!(tau_bound(n, d, eps).unwrap(), direct, "n={n} d={d} eps={eps}");
        }
    }

    #[test]
    fn success_probability_examples() {
        let p = success_probability_bound(2, 2, 0.1).unwrap();
        assert!((p - 0.6561).abs() <= 1e-9 * 0.6561);
        let p = success_probability_bound(0, 1, 1e-9).unwrap();
        assert!((p - 1.0).abs() < 1e-6);
        let mut last = 1.0;
        for y in 0..50 {
            let p = success_probability_bound(y, 4, 0.05).unwrap();
            assert!(p < last);
            last = p;
        }
        assert!(success_probability_bound(1, 1, 1.5).is_err());
    }

    #[test]
    fn budget_formula() {
        // ceil(39 * 26 * 2 / 1) * 1 + 1
        assert_eq!(step_budget(36, 3, 26, 1), 2029);
        // ceil((2 + 2) * 1 * 1 / 3) * 3 + 3 = 2 * 3 + 3
        assert_eq!(step_budget(2, 2, 1, 3), 9);
        assert_eq!(step_budget(10, 10, u64::MAX, 2), u64::MAX);
    }

    #[test]
    fn three_way_targets_agree() {
        let [a, b, c] = q_tasks_three_ways(&caps_two());
        assert_eq!(a, Rational::from_integer(12));
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn verified_trial_passes() {
        let r = caps_two_trial(1, true);
        let report = verify_trial(&r, &caps_two(), DEFAULT_EPS);
        assert!(report.pass, "{:?}", report.issues);
        assert!(report.workload.iter().all(|w| w.ok && w.total_share == Some(2)));
        assert_eq!(report.bounds.y_init, 36);
        assert_eq!(report.bounds.tau, Some(26));
    }

    #[test]
    fn injected_faults_are_caught() {
        let inst = caps_two();
        let good = caps_two_trial(2, false);

        let mut bad = good.clone();
        bad.nodes[1].qs = 13;
        let report = verify_trial(&bad, &inst, DEFAULT_EPS);
        assert!(!report.exactness_pass && !report.pass);

        let mut bad = good.clone();
        bad.nodes[0].stop_round = Some(bad.termination_round.unwrap() + 1);
        let report = verify_trial(&bad, &inst, DEFAULT_EPS);
        assert!(!report.simultaneous_stop_pass && !report.pass);

        let mut bad = good.clone();
        if let Some(s) = bad.conservation.last_mut() {
            s.sum_y += 1;
        }
        assert!(!verify_trial(&bad, &inst, DEFAULT_EPS).conservation_pass);

        let mut bad = good.clone();
        bad.nodes[2].total_share = Some(3);
        assert!(!verify_trial(&bad, &inst, DEFAULT_EPS).workload_pass);

        let mut bad = good.clone();
        bad.termination_round = None;
        let report = verify_trial(&bad, &inst, DEFAULT_EPS);
        assert!(!report.terminated && !report.pass);

        let mut bad = caps_two_trial(2, true);
        bad.snapshots.as_mut().unwrap()[1][0][0] += 1;
        assert!(!verify_trial(&bad, &inst, DEFAULT_EPS).conservation_pass);
    }

    #[test]
    fn utilization_is_subtracted() {
        let inst = ProblemInstance::new(vec![1, 2, 3], vec![1, 0, 0], vec![3, 2, 2], 12).unwrap();
        let cfg = TrialConfig::new(
            InstanceSource::Given { instance: inst.clone() },
            GraphSource::Given(Arc::new(Digraph::complete(3))),
            9,
        );
        let r = run_trial(&cfg).unwrap();
        let report = verify_trial(&r, &inst, DEFAULT_EPS);
        assert!(report.pass, "{:?}", report.issues);
        let n0 = &r.nodes[0];
        assert_eq!(n0.incremental, Some(n0.total_share.unwrap() - 1));
    }
}
