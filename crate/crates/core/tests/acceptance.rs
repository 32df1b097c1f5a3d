//! Acceptance suite. Run with `cargo test --test acceptance`; pass criterion
//! numbers after `--` to run a subset.

use std::collections::{BTreeMap, HashSet};
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use braidmap::bisect::{allowed_imbalance, bisect_graph, Side, WGraph, Work};
use braidmap::harness::{self, correlation_study, map_factory, Mapped, PipelineParams, Procedure};
use braidmap::igraph::{critical_path, InteractionGraph};
use braidmap::layout::{crossing_count, GridMapping};
use braidmap::meshsim::{simulate, SimParams, SimReport};
use braidmap::protocol::{
    build_error_model, build_factory, code_distance, qubits_per_module, round_error, success_probability,
};
use braidmap::stitch::{assign_terminals, optimize_midpoints, stitch_factory, MidpointMode, StitchParams, Terminal};
use braidmap::{Cell, FactoryConfig, GateKind, QubitRole, ReusePolicy};
use petgraph::algo::toposort;
use petgraph::graph::DiGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Simulates with tracing on and checks the invariants every run must hold:
/// latency at least the critical path, braids disjoint within a timestep and
/// volume equal to area times latency.
fn sim_checked(mapped: &Mapped) -> SimReport {
    let params = SimParams { trace: true, ..SimParams::default() };
    let r = simulate(&mapped.circuit, &mapped.mapping, &mapped.hints, &params).expect("simulation");
    let cp = critical_path(&mapped.circuit);
    assert!(r.latency >= cp, "latency {} below critical path {cp}", r.latency);
    assert_eq!(r.volume, (r.area * r.latency) as u64);
    assert_eq!(r.area, mapped.mapping.width * mapped.mapping.height);
    let mut by_step: BTreeMap<usize, HashSet<Cell>> = BTreeMap::new();
    for row in &r.trace {
        let cells = by_step.entry(row.timestep).or_default();
        let own: HashSet<Cell> = row.path.iter().copied().collect();
        for c in own {
            assert!(cells.insert(c), "cell ({}, {}) claimed twice at timestep {}", c.x, c.y, row.timestep);
        }
        for w in row.path.windows(2) {
            assert_eq!(w[0].manhattan(w[1]), 1, "braid of gate {} is not contiguous", row.gate);
        }
    }
    r
}

fn mapped(k: usize, levels: usize, procedure: Procedure, reuse: ReusePolicy, seed: u64) -> Mapped {
    let config = FactoryConfig { seed, ..FactoryConfig::new(k, levels).with_reuse(reuse) };
    map_factory(&config, procedure, &PipelineParams::default()).expect("mapping")
}

#[derive(Clone, Copy, Debug)]
struct Run {
    latency: usize,
    area: usize,
    volume: u64,
}

fn run(k: usize, levels: usize, procedure: Procedure, reuse: ReusePolicy, seed: u64) -> Run {
    let r = sim_checked(&mapped(k, levels, procedure, reuse, seed));
    Run { latency: r.latency, area: r.area, volume: r.volume }
}

const TWO_LEVEL: [Procedure; 4] = [Procedure::Line, Procedure::FD, Procedure::GP, Procedure::HS];
const POLICIES: [ReusePolicy; 2] = [ReusePolicy::NoReuse, ReusePolicy::Reuse];

/// Every two-level procedure under both policies, computed once per k.
fn two_level(k: usize) -> &'static BTreeMap<(Procedure, ReusePolicy), Run> {
    static K4: OnceLock<BTreeMap<(Procedure, ReusePolicy), Run>> = OnceLock::new();
    static K16: OnceLock<BTreeMap<(Procedure, ReusePolicy), Run>> = OnceLock::new();
    let cell = match k {
        4 => &K4,
        16 => &K16,
        _ => unreachable!(),
    };
    cell.get_or_init(|| {
        let mut t = BTreeMap::new();
        for p in TWO_LEVEL {
            for r in POLICIES {
                t.insert((p, r), run(k, 2, p, r, 0));
            }
        }
        t
    })
}

fn best_volume(table: &BTreeMap<(Procedure, ReusePolicy), Run>, p: Procedure) -> u64 {
    POLICIES.iter().map(|&r| table[&(p, r)].volume).min().unwrap()
}

fn criterion_1() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for k in [2, 4, 8] {
        let cp = critical_path(&build_factory(&FactoryConfig::new(k, 1)).unwrap());
        let best = [Procedure::Line, Procedure::FD, Procedure::GP]
            .into_iter()
            .map(|p| run(k, 1, p, ReusePolicy::NoReuse, 0).latency)
            .min()
            .unwrap();
        let ratio = best as f64 / cp as f64;
        ok &= ratio <= 1.3;
        parts.push(format!("k={k} {best}/{cp}={ratio:.3}"));
    }
    check(ok, format!("best latency / critical path <= 1.3: {}", parts.join(", ")))
}

fn criterion_2() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for k in [2, 4, 8] {
        let mut random: Vec<u64> = (0..5).map(|s| run(k, 1, Procedure::Random, ReusePolicy::NoReuse, s).volume).collect();
        random.sort_unstable();
        let median = random[2];
        let best = TWO_LEVEL.into_iter().map(|p| run(k, 1, p, ReusePolicy::NoReuse, 0).volume).min().unwrap();
        let ratio = median as f64 / best as f64;
        ok &= ratio >= 1.4;
        parts.push(format!("k={k} {median}/{best}={ratio:.2}"));
    }
    check(ok, format!("median Random / best volume >= 1.4: {}", parts.join(", ")))
}

fn criterion_3() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for k in [4, 16] {
        let t = two_level(k);
        let [line, fd, gp, hs] = TWO_LEVEL.map(|p| best_volume(t, p));
        ok &= hs < gp && gp < fd.min(line);
        parts.push(format!("k={k} HS {hs} < GP {gp} < min(FD {fd}, Line {line})"));
    }
    check(ok, format!("best-policy volumes: {}", parts.join("; ")))
}

fn criterion_4() -> Outcome {
    let t = two_level(16);
    let line = t[&(Procedure::Line, ReusePolicy::NoReuse)].volume;
    let hs = best_volume(t, Procedure::HS);
    let ratio = line as f64 / hs as f64;
    check(ratio >= 1.2, format!("k=16 Line(NR) / HS = {line}/{hs} = {ratio:.2} >= 1.2"))
}

fn criterion_5() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for k in [2, 4] {
        for p in [Procedure::GP, Procedure::Line] {
            let (nr, r) = if k == 4 {
                let t = two_level(4);
                (t[&(p, ReusePolicy::NoReuse)], t[&(p, ReusePolicy::Reuse)])
            } else {
                (run(k, 2, p, ReusePolicy::NoReuse, 0), run(k, 2, p, ReusePolicy::Reuse, 0))
            };
            ok &= r.area <= nr.area && r.latency >= nr.latency && r.volume <= nr.volume;
            parts.push(format!(
                "k={k} {}: area {}<={} latency {}>={} volume {}<={}",
                p.name(),
                r.area,
                nr.area,
                r.latency,
                nr.latency,
                r.volume,
                nr.volume
            ));
        }
    }
    check(ok, format!("reuse vs no reuse: {}", parts.join("; ")))
}

fn criterion_6() -> Outcome {
    let c = correlation_study(4, 1, 50, 0, &SimParams::default()).map_err(|e| e.to_string())?;
    let (l, s, x) = (c.r_length, c.r_spacing, c.r_crossings);
    let ok = x.is_some_and(|r| r >= 0.5) && s.is_some_and(|r| r <= -0.3) && l.is_some_and(|r| r >= 0.3);
    let f = |r: Option<f64>| r.map_or("undefined".into(), |v| format!("{v:.3}"));
    check(
        ok,
        format!("50 random k=4 mappings: r(crossings)={} >= 0.5, r(spacing)={} <= -0.3, r(length)={} >= 0.3", f(x), f(s), f(l)),
    )
}

fn criterion_7() -> Outcome {
    let config = FactoryConfig::new(4, 2);
    let params = StitchParams { midpoints: MidpointMode::None, ..StitchParams::default() };
    let mut plan = stitch_factory(&config, &params).map_err(|e| e.to_string())?;
    let latency = |plan: &braidmap::stitch::StitchPlan| {
        let m = Mapped { circuit: plan.circuit.clone(), mapping: plan.mapping.clone(), hints: plan.hints() };
        sim_checked(&m).permutation_latencies[0]
    };
    let none = latency(&plan);
    optimize_midpoints(&mut plan, MidpointMode::ValiantRandom, &params).map_err(|e| e.to_string())?;
    let valiant = latency(&plan);
    optimize_midpoints(&mut plan, MidpointMode::Annealed, &params).map_err(|e| e.to_string())?;
    let annealed = latency(&plan);
    let gain = none as f64 / annealed as f64;
    check(
        gain >= 1.15,
        format!("k=4 permutation latency: none {none}, valiant {valiant}, annealed {annealed}; gain {gain:.3} >= 1.15"),
    )
}

fn brute_crossings(cells: &[Cell], edges: &[(usize, usize)]) -> u64 {
    fn cross(o: Cell, a: Cell, b: Cell) -> i64 {
        (a.x as i64 - o.x as i64) * (b.y as i64 - o.y as i64) - (a.y as i64 - o.y as i64) * (b.x as i64 - o.x as i64)
    }
    fn between(a: Cell, b: Cell, p: Cell) -> bool {
        (a.x.min(b.x)..=a.x.max(b.x)).contains(&p.x) && (a.y.min(b.y)..=a.y.max(b.y)).contains(&p.y)
    }
    let meet = |p1: Cell, p2: Cell, q1: Cell, q2: Cell| {
        let (a, b) = (cross(p1, p2, q1), cross(p1, p2, q2));
        let (c, d) = (cross(q1, q2, p1), cross(q1, q2, p2));
        if ((a > 0 && b < 0) || (a < 0 && b > 0)) && ((c > 0 && d < 0) || (c < 0 && d > 0)) {
            return true;
        }
        (a == 0 && between(p1, p2, q1)) || (b == 0 && between(p1, p2, q2)) || (c == 0 && between(q1, q2, p1)) || (d == 0 && between(q1, q2, p2))
    };
    let mut n = 0;
    for i in 0..edges.len() {
        for j in i + 1..edges.len() {
            let ((a, b), (c, d)) = (edges[i], edges[j]);
            if a == c || a == d || b == c || b == d {
                continue;
            }
            if meet(cells[a], cells[b], cells[c], cells[d]) {
                n += 1;
            }
        }
    }
    n
}

fn oracle_crossings() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for inst in 0..100 {
        let n = rng.gen_range(4..14);
        let (w, h) = (rng.gen_range(4..9), rng.gen_range(4..9));
        let mut free: Vec<Cell> = (0..h).flat_map(|y| (0..w).map(move |x| Cell::new(x, y))).collect();
        let mut cells = Vec::new();
        for _ in 0..n {
            cells.push(free.swap_remove(rng.gen_range(0..free.len())));
        }
        let mut pairs = BTreeMap::new();
        for _ in 0..rng.gen_range(2..3 * n) {
            let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if u != v {
                pairs.insert((u.min(v), u.max(v)), rng.gen_range(1..3u32));
            }
        }
        let list: Vec<(usize, usize, u32)> = pairs.iter().map(|(&(u, v), &m)| (u, v, m)).collect();
        let graph = InteractionGraph::from_edges(n, &list);
        let mut mapping = GridMapping::new(w, h, n);
        for (q, &c) in cells.iter().enumerate() {
            mapping.place(q, c).unwrap();
        }
        let edges: Vec<(usize, usize)> = graph.edges.iter().map(|e| (e.u, e.v)).collect();
        let got = crossing_count(&mapping, &graph).map_err(|e| e.to_string())?;
        let want = brute_crossings(&cells, &edges);
        if got != want {
            return Err(format!("crossings instance {inst}: {got} != {want}"));
        }
    }
    Ok(())
}

fn oracle_ports() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let params = StitchParams::default();
    let mut solved = 0;
    for inst in 0..200 {
        let n = rng.gen_range(1..=4);
        let term = |rng: &mut ChaCha8Rng, modules: usize| Terminal {
            module: rng.gen_range(0..modules),
            cell: Cell::new(rng.gen_range(0..10), rng.gen_range(0..10)),
        };
        let sources: Vec<Terminal> = (0..n).map(|_| term(&mut rng, 3)).collect();
        let sinks: Vec<Terminal> = (0..n).map(|_| term(&mut rng, 3)).collect();
        let relation: std::collections::BTreeSet<(usize, usize)> = (0..3).flat_map(|a| (0..3).map(move |b| (a, b))).filter(|_| rng.gen_bool(0.8)).collect();
        let mut best: Option<f64> = None;
        let mut perm: Vec<usize> = (0..n).collect();
        permute(&mut perm, 0, &mut |p| {
            let mut pairs = HashSet::new();
            let feasible = p.iter().enumerate().all(|(i, &j)| {
                let pair = (sources[i].module, sinks[j].module);
                relation.contains(&pair) && pairs.insert(pair)
            });
            if feasible {
                let cost: f64 = p.iter().enumerate().map(|(i, &j)| sources[i].cell.dist(sinks[j].cell)).sum();
                best = Some(best.map_or(cost, |b: f64| b.min(cost)));
            }
        });
        match (assign_terminals(&sources, &sinks, &relation, None, &params), best) {
            (Ok(a), Some(b)) => {
                let cost: f64 = a.iter().enumerate().map(|(i, &j)| sources[i].cell.dist(sinks[j].cell)).sum();
                if (cost - b).abs() > 1e-6 {
                    return Err(format!("ports instance {inst}: cost {cost} vs optimum {b}"));
                }
                solved += 1;
            }
            (Err(_), None) => {}
            (Ok(_), None) => return Err(format!("ports instance {inst}: assignment for an infeasible instance")),
            (Err(e), Some(_)) => return Err(format!("ports instance {inst}: {e}")),
        }
    }
    if solved < 50 {
        return Err(format!("only {solved} feasible port instances"));
    }
    Ok(())
}

fn permute(v: &mut Vec<usize>, i: usize, f: &mut impl FnMut(&[usize])) {
    if i == v.len() {
        f(v);
        return;
    }
    for j in i..v.len() {
        v.swap(i, j);
        permute(v, i + 1, f);
        v.swap(i, j);
    }
}

fn oracle_critical_path() -> Result<(), String> {
    for (k, levels) in [(1, 1), (2, 1), (3, 1), (8, 1), (2, 2), (4, 2)] {
        for reuse in POLICIES {
            let circuit = build_factory(&FactoryConfig::new(k, levels).with_reuse(reuse)).map_err(|e| e.to_string())?;
            let mut dag = DiGraph::<usize, ()>::new();
            let mut last: Vec<Option<petgraph::graph::NodeIndex>> = vec![None; circuit.num_qubits()];
            for g in &circuit.gates {
                let dur = if matches!(g.kind, GateKind::InjectT | GateKind::InjectTdag) { 2 } else { 1 };
                let node = dag.add_node(dur);
                for &q in &g.operands {
                    if let Some(prev) = last[q] {
                        dag.update_edge(prev, node, ());
                    }
                    last[q] = Some(node);
                }
            }
            let order = toposort(&dag, None).map_err(|_| "cycle".to_string())?;
            let mut finish = vec![0usize; dag.node_count()];
            for n in order {
                let start = dag.neighbors_directed(n, petgraph::Incoming).map(|p| finish[p.index()]).max().unwrap_or(0);
                finish[n.index()] = start + dag[n];
            }
            let want = finish.into_iter().max().unwrap_or(0);
            let got = critical_path(&circuit);
            if got != want {
                return Err(format!("critical path k={k} l={levels}: {got} != {want}"));
            }
        }
    }
    Ok(())
}

fn oracle_code_distance() -> Result<(), String> {
    for &eps in &[1e-3, 5e-4, 1e-4, 2e-3, 9e-3] {
        for exp in 3..30 {
            let budget = 10f64.powi(-exp) * 3.7;
            let scan = (3u32..200).step_by(2).find(|&d| {
                let mut p = 1.0;
                for _ in 0..d.div_ceil(2) {
                    p *= 100.0 * eps;
                }
                d as f64 * p <= budget
            });
            let got = code_distance(budget, eps).ok();
            let want = scan.filter(|&d| d <= braidmap::protocol::MAX_DISTANCE);
            if got != want {
                return Err(format!("distance eps={eps} budget={budget:e}: {got:?} != {want:?}"));
            }
        }
    }
    Ok(())
}

fn oracle_bisection() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for inst in 0..60 {
        let n = rng.gen_range(4..=10);
        let mut edges = Vec::new();
        for v in 1..n {
            edges.push((rng.gen_range(0..v), v, rng.gen_range(1..4u64)));
        }
        for _ in 0..rng.gen_range(0..2 * n) {
            let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if u != v {
                edges.push((u, v, rng.gen_range(1..4)));
            }
        }
        let g = WGraph::from_edges(n, &edges);
        let tolerance = 0.1;
        let allowed = allowed_imbalance(&g, tolerance);
        let mut opt = u64::MAX;
        for mask in 0u32..(1 << n) {
            let side: Vec<Side> = (0..n).map(|v| if mask >> v & 1 == 1 { Side::B } else { Side::A }).collect();
            let b = side.iter().filter(|&&s| s == Side::B).count() as i64;
            if (n as i64 - 2 * b).unsigned_abs() <= allowed {
                opt = opt.min(g.cut(&side));
            }
        }
        let got = bisect_graph(&g, tolerance, &mut Work::default());
        if got.balance > allowed || got.cut != g.cut(&got.side) {
            return Err(format!("bisection instance {inst}: unbalanced or misreported"));
        }
        if got.cut as f64 > 1.5 * opt as f64 {
            return Err(format!("bisection instance {inst}: cut {} vs optimum {opt}", got.cut));
        }
    }
    Ok(())
}

fn criterion_8() -> Outcome {
    let checks: [(&str, fn() -> Result<(), String>); 5] = [
        ("crossings", oracle_crossings),
        ("ports", oracle_ports),
        ("critical path", oracle_critical_path),
        ("code distance", oracle_code_distance),
        ("bisection", oracle_bisection),
    ];
    let mut failed = Vec::new();
    for (name, f) in checks {
        if let Err(e) = f() {
            failed.push(format!("{name}: {e}"));
        }
    }
    check(
        failed.is_empty(),
        if failed.is_empty() { "crossings, ports, critical path, code distance and bisection oracles agree".into() } else { failed.join("; ") },
    )
}

fn criterion_9() -> Outcome {
    let mut runs = 0;
    for (k, levels) in [(1, 1), (2, 1), (4, 1), (2, 2)] {
        for p in Procedure::ALL {
            for reuse in POLICIES {
                let m = mapped(k, levels, p, reuse, 3);
                let a = sim_checked(&m);
                let b = sim_checked(&mapped(k, levels, p, reuse, 3));
                let (ja, jb) = (serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
                if ja != jb {
                    return Err(format!("k={k} l={levels} {} {}: reports differ between runs", p.name(), reuse.label()));
                }
                runs += 1;
            }
        }
    }
    let rows = harness::run(&harness::ExperimentSpec {
        points: vec![(2, 1), (2, 2)],
        procedures: Procedure::ALL.to_vec(),
        reuse: POLICIES.to_vec(),
        seeds: vec![0, 1],
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let bad = rows.iter().filter(|r| r.error.is_some() || r.latency < r.critical_path || r.volume != (r.area * r.latency) as u64).count();
    check(bad == 0, format!("{runs} traced runs repeated bit-identically, {} sweep rows, {bad} violations", rows.len()))
}

fn criterion_10() -> Outcome {
    let mut failed = Vec::new();
    let e1 = round_error(1e-3, 2);
    let e2 = round_error(e1, 2);
    if (e1 - 7e-6).abs() > 1e-18 || (e2 / 3.43e-10 - 1.0).abs() > 1e-9 {
        failed.push(format!("round errors {e1:e}, {e2:e}"));
    }
    let model = build_error_model(&FactoryConfig::new(2, 2)).map_err(|e| e.to_string())?;
    if (model.eps_by_round[0] - 7e-6).abs() > 1e-18 || (model.eps_by_round[1] / 3.43e-10 - 1.0).abs() > 1e-9 {
        failed.push(format!("model errors {:?}", model.eps_by_round));
    }
    for k in [1, 2, 8, 24] {
        let edge = 1.0 / (3 * k + 8) as f64;
        if success_probability(edge, k).is_ok() || success_probability(edge * (1.0 - 1e-9), k).is_err() {
            failed.push(format!("yield boundary at k={k}"));
        }
    }
    for k in 1..=24 {
        let c = build_factory(&FactoryConfig::new(k, 1)).map_err(|e| e.to_string())?;
        let counts = (c.count_role(QubitRole::RawInput), c.count_role(QubitRole::Ancilla), c.count_role(QubitRole::Output));
        if counts != (3 * k + 8, k + 5, k) || c.num_data_qubits() != 5 * k + 13 || qubits_per_module(k) != 5 * k + 13 {
            failed.push(format!("qubit counts at k={k}: {counts:?}"));
        }
        if c.gates.len() != 9 * k + 20 {
            failed.push(format!("gate count at k={k}: {}", c.gates.len()));
        }
    }
    check(
        failed.is_empty(),
        if failed.is_empty() { "error recursion 7e-6 -> 3.43e-10, yield boundary, counts for k=1..24".into() } else { failed.join("; ") },
    )
}

fn main() -> ExitCode {
    let criteria: [fn() -> Outcome; 10] = [
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
        criterion_9,
        criterion_10,
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    for (i, f) in criteria.iter().enumerate() {
        let n = i + 1;
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {n:>2} PASS ({secs:.1}s): {d}"),
            Err(d) => {
                failures += 1;
                println!("criterion {n:>2} FAIL ({secs:.1}s): {d}");
            }
        }
    }
    if failures > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
