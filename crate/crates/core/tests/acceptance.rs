//! Acceptance suite. Runs as a plain binary so every criterion prints its
//! own PASS/FAIL line; exits non-zero if any hard criterion fails.

use std::sync::Arc;
use std::time::Instant;

use qsched_core::cli::{run_cli, OutputRecord};
use qsched_core::engine::{
    self, GraphSource, InstanceRecipe, InstanceSource, TrialConfig, TrialResult,
};
use qsched_core::oracle;
use qsched_core::problem::ProblemInstance;
use qsched_core::topology::{Digraph, NodeId};
use rayon::prelude::*;

struct Outcome {
    hard_failures: usize,
}

impl Outcome {
    fn report(&mut self, name: &str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.hard_failures += 1;
        }
    }
}

/// `(floor, ceil)` of `pi_upper * sum(l + u) / sum(cap)`, by integer division.
fn target_band(inst: &ProblemInstance) -> (i64, i64) {
    let n = inst.node_count() as NodeId;
    let demand: i128 = (0..n).map(|j| (inst.load(j) + inst.util(j)) as i128).sum();
    let cap: i128 = (0..n).map(|j| inst.capacity(j) as i128).sum();
    let num = inst.pi_upper() as i128 * demand;
    ((num / cap) as i64, ((num + cap - 1) / cap) as i64)
}

fn exact(t: &TrialResult) -> bool {
    let (lo, hi) = target_band(&t.instance);
    t.terminated() && t.nodes.iter().all(|n| n.qs == lo || n.qs == hi)
}

fn conserved(t: &TrialResult) -> bool {
    let inst = &t.instance;
    let n = inst.node_count() as NodeId;
    let y0: i64 = (0..n)
        .map(|j| {
            let demand = (inst.load(j) + inst.util(j)) as i64;
            demand * inst.pi_upper() as i64
        })
        .sum();
    let z0: i64 = (0..n).map(|j| inst.capacity(j) as i64).sum();
    let rounds = t.termination_round.unwrap_or(t.max_rounds);
    t.initial_sum_y == y0
        && t.initial_sum_z == z0
        && t.conservation.len() as u64 == rounds
        && t.conservation
            .iter()
            .enumerate()
            .all(|(i, r)| r.round == i as u64 + 1 && r.sum_y == y0 && r.sum_z == z0)
}

fn stopped_together(t: &TrialResult) -> bool {
    let Some(k) = t.termination_round else { return false };
    k > 0
        && k % t.window as u64 == 0
        && t.nodes.iter().all(|n| n.stop_round == Some(k) && n.converge_round <= k)
        && t.last_converge <= k
}

/// `|incremental - w*| <= 1 + cap/pi_upper` and the share matches one of the
/// two band ends.
fn workload_ok(t: &TrialResult) -> bool {
    let inst = &t.instance;
    let n = inst.node_count() as NodeId;
    let pi = inst.pi_upper() as i128;
    let demand: i128 = (0..n).map(|j| (inst.load(j) + inst.util(j)) as i128).sum();
    let s: i128 = (0..n).map(|j| inst.capacity(j) as i128).sum();
    let (lo, hi) = target_band(inst);
    t.nodes.iter().enumerate().all(|(j, node)| {
        let j = j as NodeId;
        let cap = inst.capacity(j) as i128;
        let u = inst.util(j) as i128;
        let share_for = |q: i64| (q as i128 * cap + pi - 1) / pi;
        let (Some(share), Some(inc)) = (node.total_share, node.incremental) else { return false };
        let share = share as i128;
        let inc = inc as i128;
        // w* * s = demand * cap - u * s
        let w_scaled = demand * cap - u * s;
        (share == share_for(lo) || share == share_for(hi))
            && inc == share - u
            && ((inc * s - w_scaled) * pi).abs() <= s * pi + cap * s
    })
}

fn fig2_args(extra: &[&str]) -> Vec<String> {
    let mut args: Vec<String> = [
        "qsched", "run", "--nodes", "200", "--edge-prob", "0.5", "--pi-upper", "1000", "--loads",
        "uniform:1,100", "--capacities", "alt:100,300", "--trials", "50", "--seed", "1",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

fn cli_json(args: &[String]) -> (i32, Vec<u8>) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run_cli(args, &mut out, &mut err);
    if !err.is_empty() {
        eprintln!("{}", String::from_utf8_lossy(&err));
    }
    (code, out)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn fig2(o: &mut Outcome) {
    let start = Instant::now();
    let (code, bytes) = cli_json(&fig2_args(&[]));
    let secs = start.elapsed().as_secs_f64();
    let record: OutputRecord = serde_json::from_slice(&bytes).expect("run record");
    let trials = &record.trials;
    let all = trials.len() == 50 && record.failures.is_empty() && code == 0;

    let exact_count = trials.iter().filter(|t| exact(t)).count();
    o.report(
        "1 exactness",
        all && exact_count == 50,
        format!("{exact_count}/50 trials terminated inside the target band ({secs:.2}s, exit {code})"),
    );

    let rounds: usize = trials.iter().map(|t| t.conservation.len()).sum();
    let conserved_count = trials.iter().filter(|t| conserved(t)).count();
    o.report(
        "2 conservation",
        all && conserved_count == 50,
        format!("{conserved_count}/50 trials conserve sum y and sum z over {rounds} rounds"),
    );

    let stop_count = trials.iter().filter(|t| stopped_together(t)).count();
    o.report(
        "3 stopping rule",
        all && stop_count == 50,
        format!("{stop_count}/50 trials stop together on a window multiple with no later change"),
    );

    let m = mean(trials.iter().map(|t| t.last_converge as f64));
    o.report("4 fig2 speed", all && m <= 15.0, format!("mean last-converge round {m:.2} (bound 15)"));

    let (code2, bytes2) = cli_json(&fig2_args(&["--workers", "1"]));
    let (code3, bytes3) = cli_json(&fig2_args(&["--workers", "3"]));
    let same = bytes == bytes2 && bytes == bytes3;
    o.report(
        "9 determinism",
        same && code2 == code && code3 == code,
        format!("{} byte reruns identical (1 and 3 workers)", bytes.len()),
    );
}

fn sweep(o: &mut Outcome) {
    let sizes = [20, 100, 500, 1000, 5000];
    let base = TrialConfig::new(
        InstanceSource::Generated(InstanceRecipe::evaluation(20)),
        GraphSource::Random { edge_prob: 0.5 },
        1,
    );
    let start = Instant::now();
    let trials = engine::run_sweep_trials(&sizes, 20, &base);
    let secs = start.elapsed().as_secs_f64();

    let mut ok5 = true;
    let mut ok6 = true;
    let mut detail5 = Vec::new();
    let mut detail6 = Vec::new();
    for &size in &sizes {
        let mine: Vec<&TrialResult> = trials
            .iter()
            .filter(|t| t.size == size)
            .filter_map(|t| t.outcome.as_ref().ok())
            .collect();
        let complete = mine.len() == 20 && mine.iter().all(|t| t.terminated() && exact(t));
        let term = mean(mine.iter().map(|t| t.termination_round.unwrap_or(t.max_rounds) as f64));
        let last = mean(mine.iter().map(|t| t.last_converge as f64));
        ok5 &= complete && term < 40.0;
        detail5.push(format!("n={size}:{term:.2}"));
        if size >= 50 {
            ok6 &= complete && last <= 15.0;
            detail6.push(format!("n={size}:{last:.2}"));
        }
    }
    o.report(
        "5 fig3 termination",
        ok5,
        format!("mean termination rounds {} (bound 40, {secs:.1}s)", detail5.join(" ")),
    );
    o.report("6 fig5 convergence", ok6, format!("mean last-converge rounds {} (bound 15)", detail6.join(" ")));
}

fn small_instances(n: usize) -> Vec<ProblemInstance> {
    let take = |v: [u64; 4]| v[..n].to_vec();
    vec![
        ProblemInstance::with_default_bound(take([3, 0, 2, 1]), take([4, 1, 3, 2])).unwrap(),
        ProblemInstance::with_default_bound(take([1, 0, 3, 2]), take([2, 3, 4, 5])).unwrap(),
        ProblemInstance::with_default_bound(take([0, 0, 0, 0]), take([3, 3, 3, 3])).unwrap(),
        ProblemInstance::new(take([1, 4, 2, 6]), take([1, 0, 2, 0]), take([5, 5, 5, 5]), 100).unwrap(),
        ProblemInstance::new(take([17, 90, 3, 55]), take([0; 4]), take([100, 300, 100, 300]), 1000).unwrap(),
    ]
}

/// Every strongly connected labelled digraph on `n` nodes.
fn strongly_connected_digraphs(n: usize) -> Vec<Digraph> {
    let pairs: Vec<(NodeId, NodeId)> = (0..n as NodeId)
        .flat_map(|r| (0..n as NodeId).filter(move |&s| s != r).map(move |s| (r, s)))
        .collect();
    (0u32..1 << pairs.len())
        .filter_map(|mask| {
            let edges = pairs.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &e)| e);
            let g = Digraph::from_edges(n, edges).unwrap();
            g.is_strongly_connected().then_some(g)
        })
        .collect()
}

fn small_exhaustive(o: &mut Outcome) {
    let start = Instant::now();
    let mut jobs = Vec::new();
    let mut graph_count = 0;
    for n in 1..=4 {
        let graphs: Vec<Arc<Digraph>> = strongly_connected_digraphs(n).into_iter().map(Arc::new).collect();
        graph_count += graphs.len();
        for g in &graphs {
            for inst in small_instances(n) {
                for seed in 1..=10 {
                    jobs.push((g.clone(), inst.clone(), seed));
                }
            }
        }
    }
    let failures: Vec<String> = jobs
        .par_iter()
        .filter_map(|(g, inst, seed)| {
            let cfg = TrialConfig::new(
                InstanceSource::Given { instance: inst.clone() },
                GraphSource::Given(g.clone()),
                *seed,
            );
            let t = match engine::run_trial(&cfg) {
                Ok(t) => t,
                Err(e) => return Some(format!("n={} seed {seed}: {e}", g.node_count())),
            };
            let (lo, hi) = target_band(inst);
            let [a, b, c] = oracle::q_tasks_three_ways(inst);
            let agree = a == b
                && b == c
                && a.to_integer() as i64 == lo
                && (a.is_integer() && lo == hi || !a.is_integer() && hi == lo + 1)
                && t.q_tasks_num as i128 * *a.denom() == *a.numer() * t.q_tasks_den as i128;
            let report = oracle::verify_trial(&t, inst, oracle::DEFAULT_EPS);
            (!(exact(&t) && workload_ok(&t) && agree && report.pass && conserved(&t) && stopped_together(&t)))
                .then(|| format!("n={} seed {seed} edges {:?}: {:?}", g.node_count(), g.edges().collect::<Vec<_>>(), report.issues))
        })
        .collect();
    for f in failures.iter().take(5) {
        eprintln!("  {f}");
    }
    o.report(
        "7 small-instance oracle",
        failures.is_empty(),
        format!(
            "{} trials over {graph_count} digraphs x 5 instances x 10 seeds, {} failures ({:.1}s)",
            jobs.len(),
            failures.len(),
            start.elapsed().as_secs_f64()
        ),
    );
}

fn bound_direction(o: &mut Outcome) {
    let eps = 0.05;
    let inst = ProblemInstance::new(vec![1, 2, 3], vec![0; 3], vec![2, 2, 2], 12).unwrap();
    let g = Arc::new(Digraph::complete(3));
    let ctx = oracle::bound_context(&inst, g.max_out_degree(), 1, eps);
    let budget = ctx.step_budget.expect("budget");
    // y0 = 12 * (l + u) = [12, 24, 36] against the band {12}.
    let y_init: i64 = [12i64, 24, 36].iter().map(|y0| y0 - 12).sum();
    let threshold = (1.0 - eps).powi((ctx.y_init + 3) as i32) - 0.1;
    let within = (1..=200u64)
        .into_par_iter()
        .filter(|&seed| {
            let cfg = TrialConfig::new(
                InstanceSource::Given { instance: inst.clone() },
                GraphSource::Given(g.clone()),
                seed,
            );
            let t = engine::run_trial(&cfg).expect("trial");
            t.termination_round.is_some_and(|k| k <= budget)
        })
        .count();
    let frac = within as f64 / 200.0;
    o.report(
        "8 bound direction",
        ctx.y_init as i64 == y_init && frac >= threshold,
        format!("{within}/200 within {budget} rounds, fraction {frac:.3} >= {threshold:.3} (y_init {})", ctx.y_init),
    );
}

fn soft_timing() {
    let cfg = TrialConfig::new(
        InstanceSource::Generated(InstanceRecipe::evaluation(1000)),
        GraphSource::Random { edge_prob: 0.5 },
        1,
    );
    let start = Instant::now();
    let ok = engine::run_trial(&cfg).map(|t| t.terminated()).unwrap_or(false);
    let secs = start.elapsed().as_secs_f64();
    println!(
        "{} soft n=1000 wall clock: {secs:.2}s (bound 10s, not gating)",
        if ok && secs < 10.0 { "PASS" } else { "FAIL" }
    );
}

fn main() {
    let mut o = Outcome { hard_failures: 0 };
    fig2(&mut o);
    small_exhaustive(&mut o);
    bound_direction(&mut o);
    sweep(&mut o);
    soft_timing();
    if o.hard_failures > 0 {
        println!("{} acceptance criteria failed", o.hard_failures);
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
