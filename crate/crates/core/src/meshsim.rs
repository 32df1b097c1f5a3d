//! Cycle-accurate braid scheduler and router on a 2-D tile mesh.
//!
//! Every logical timestep the simulator walks the ready gates in program
//! order and tries to claim a braid path for each. A braid holds its cells
//! for one timestep only. A gate that cannot be routed stalls and retries on
//! the next timestep.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{Cell, GridMapping};
use crate::protocol::{round_area, Circuit, ErrorModel, FactoryConfig, GateKind, QubitId};

/// Waypoints for directed braids, keyed by `(source, destination)` qubit.
pub type Hints = BTreeMap<(QubitId, QubitId), Cell>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    /// Braids per injection.
    pub injection_cost: u32,
    /// When set, each injection instead takes `1 + Geometric(1/2)` braids
    /// drawn from this seed (mean 2).
    pub stochastic_injection: Option<u64>,
    /// Re-check braid disjointness and path shape every timestep.
    pub verify: bool,
    pub trace: bool,
    /// Fall back to a direct route when the hinted two-hop route is blocked.
    pub hint_fallback: bool,
    pub routing: RoutingMode,
    /// Cells held busy at every timestep.
    pub blocked: Vec<Cell>,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams { injection_cost: 2, stochastic_injection: None, verify: true, trace: false, hint_fallback: true, routing: RoutingMode::default(), blocked: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRow {
    pub timestep: usize,
    pub gate: usize,
    pub kind: GateKind,
    pub path_len: usize,
    pub stalled: bool,
    /// Cells claimed by the braid; empty for stalls.
    pub path: Vec<Cell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub latency: usize,
    pub stalls: u64,
    pub width: usize,
    pub height: usize,
    pub area: usize,
    pub volume: u64,
    pub physical_volume: Option<f64>,
    /// Timestep of each barrier.
    pub barrier_steps: Vec<usize>,
    /// Timesteps strictly between barriers, per round.
    pub round_latencies: Vec<usize>,
    /// Per boundary: last permutation braid completion minus the barrier step.
    pub permutation_latencies: Vec<usize>,
    /// Completion timestep of every gate.
    pub completion: Vec<usize>,
    pub trace: Vec<TraceRow>,
}

impl SimReport {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("timestep,gate,kind,path_len,stalled\n");
        for r in &self.trace {
            let _ = writeln!(s, "{},{},{},{},{}", r.timestep, r.gate, r.kind.name(), r.path_len, r.stalled as u8);
        }
        s
    }
}

const DIRS: [(isize, isize); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

/// Which paths a braid may take.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoutingMode {
    /// Only shortest rectilinear paths (every step closes the distance).
    #[default]
    Geodesic,
    /// Any path around claimed cells.
    Detour,
}

/// Per-timestep cell claims plus BFS scratch space.
pub struct Mesh {
    width: usize,
    height: usize,
    pub mode: RoutingMode,
    claimed: Vec<u32>,
    stamp: u32,
    seen: Vec<u32>,
    search: u32,
    parent: Vec<u32>,
    queue: Vec<u32>,
}

impl Mesh {
    pub fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        Mesh {
            width,
            height,
            mode: RoutingMode::Detour,
            claimed: vec![0; n],
            stamp: 1,
            seen: vec![0; n],
            search: 0,
            parent: vec![0; n],
            queue: Vec::with_capacity(n),
        }
    }

    /// Releases every claim.
    pub fn next_timestep(&mut self) {
        self.stamp += 1;
    }

    fn idx(&self, c: Cell) -> usize {
        c.y * self.width + c.x
    }

    pub fn is_claimed(&self, c: Cell) -> bool {
        self.claimed[self.idx(c)] == self.stamp
    }

    pub fn claim(&mut self, cells: &[Cell]) {
        for &c in cells {
            let i = self.idx(c);
            self.claimed[i] = self.stamp;
        }
    }

    /// Shortest 4-connected path from `src` to `dst` through unclaimed cells,
    /// skipping `avoid` (cells already on the same braid). Neighbours are
    /// expanded east, south, west, north. In geodesic mode only steps toward
    /// `dst` are taken.
    pub fn route(&mut self, src: Cell, dst: Cell, avoid: &[Cell]) -> Option<Vec<Cell>> {
        if self.is_claimed(src) || self.is_claimed(dst) {
            return None;
        }
        self.search = self.search.wrapping_add(1);
        if self.search == 0 {
            self.seen.iter_mut().for_each(|s| *s = 0);
            self.search = 1;
        }
        let tag = self.search;
        for &c in avoid {
            let i = self.idx(c);
            self.seen[i] = tag;
        }
        let (s, t) = (self.idx(src), self.idx(dst));
        if self.seen[t] == tag && s != t {
            return None;
        }
        self.queue.clear();
        self.queue.push(s as u32);
        self.seen[s] = tag;
        let mut head = 0;
        let mut found = s == t;
        let geodesic = self.mode == RoutingMode::Geodesic;
        let (tx, ty) = ((t % self.width) as isize, (t / self.width) as isize);
        while head < self.queue.len() && !found {
            let cur = self.queue[head] as usize;
            head += 1;
            let (x, y) = ((cur % self.width) as isize, (cur / self.width) as isize);
            for (dx, dy) in DIRS {
                let (nx, ny) = (x + dx, y + dy);
                if geodesic && ((dx != 0 && (tx - x).signum() != dx) || (dy != 0 && (ty - y).signum() != dy)) {
                    continue;
                }
                if nx < 0 || ny < 0 || nx >= self.width as isize || ny >= self.height as isize {
                    continue;
                }
                let ni = ny as usize * self.width + nx as usize;
                if self.seen[ni] == tag || self.claimed[ni] == self.stamp {
                    continue;
                }
                self.seen[ni] = tag;
                self.parent[ni] = cur as u32;
                if ni == t {
                    found = true;
                    break;
                }
                self.queue.push(ni as u32);
            }
        }
        if !found {
            return None;
        }
        let mut path = vec![dst];
        let mut cur = t;
        while cur != s {
            cur = self.parent[cur] as usize;
            path.push(Cell::new(cur % self.width, cur / self.width));
        }
        path.reverse();
        Some(path)
    }

    /// Path visiting `stops` in order. Legs first try to share only their
    /// joint cell and to keep clear of later stops; if that fails the braid
    /// may double back over its own cells.
    pub fn route_through(&mut self, stops: &[Cell]) -> Option<Vec<Cell>> {
        self.route_legs(stops, true).or_else(|| self.route_legs(stops, false))
    }

    fn route_legs(&mut self, stops: &[Cell], simple: bool) -> Option<Vec<Cell>> {
        let mut path = vec![stops[0]];
        for i in 0..stops.len() - 1 {
            let mut avoid = Vec::new();
            if simple {
                avoid.extend_from_slice(&path[..path.len() - 1]);
                avoid.extend(stops[i + 2..].iter().filter(|&&c| c != stops[i + 1]));
            }
            let leg = self.route(stops[i], stops[i + 1], &avoid)?;
            path.extend_from_slice(&leg[1..]);
        }
        Some(path)
    }
}

/// Standalone routing query against a claim set.
pub fn route(
    width: usize,
    height: usize,
    src: Cell,
    dst: Cell,
    occupied: &[Cell],
    midpoint: Option<Cell>,
) -> Option<Vec<Cell>> {
    let mut mesh = Mesh::new(width, height);
    mesh.claim(occupied);
    match midpoint {
        Some(m) => mesh.route_through(&[src, m, dst]),
        None => mesh.route(src, dst, &[]),
    }
}

/// Nearest-neighbour visiting order: control first, then the closest
/// unvisited target each time (ties by operand order).
fn greedy_order(cells: &[Cell]) -> Vec<Cell> {
    let mut rest: Vec<Cell> = cells[1..].to_vec();
    let mut order = vec![cells[0]];
    while !rest.is_empty() {
        let last = *order.last().unwrap();
        let (i, _) = rest
            .iter()
            .enumerate()
            .min_by_key(|(i, c)| (c.manhattan(last), *i))
            .unwrap();
        order.push(rest.remove(i));
    }
    order
}

fn check_path(path: &[Cell], ends: &[Cell], w: usize, h: usize, gate: usize) -> Result<()> {
    for c in path {
        if c.x >= w || c.y >= h {
            return Err(Error::Unroutable { gate });
        }
    }
    for p in path.windows(2) {
        if p[0].manhattan(p[1]) != 1 {
            return Err(Error::Unroutable { gate });
        }
    }
    if ends.iter().any(|e| !path.contains(e)) {
        return Err(Error::Unroutable { gate });
    }
    Ok(())
}

pub fn simulate(circuit: &Circuit, mapping: &GridMapping, hints: &Hints, params: &SimParams) -> Result<SimReport> {
    mapping.check_total(circuit)?;
    let n_gates = circuit.gates.len();
    let (w, h) = (mapping.width, mapping.height);

    // Per-qubit gate lists, excluding barrier controls (they never route).
    let mut uses: Vec<Vec<usize>> = vec![Vec::new(); circuit.num_qubits()];
    for (gi, g) in circuit.gates.iter().enumerate() {
        for &q in &g.operands {
            uses[q].push(gi);
        }
    }
    let mut next = vec![0usize; circuit.num_qubits()];
    let is_ready = |gi: usize, next: &[usize], uses: &[Vec<usize>]| {
        circuit.gates[gi].operands.iter().all(|&q| uses[q].get(next[q]) == Some(&gi))
    };

    let mut braids_left: Vec<u32> = Vec::with_capacity(n_gates);
    let mut rng = params.stochastic_injection.map(ChaCha8Rng::seed_from_u64);
    for g in &circuit.gates {
        let b = if g.kind.is_injection() {
            match rng.as_mut() {
                Some(rng) => {
                    let mut b = 1;
                    while rng.gen_bool(0.5) {
                        b += 1;
                    }
                    b
                }
                None => params.injection_cost.max(1),
            }
        } else {
            1
        };
        braids_left.push(b);
    }

    let mut ready: BTreeSet<usize> = (0..n_gates).filter(|&gi| is_ready(gi, &next, &uses)).collect();
    let mut completion = vec![0usize; n_gates];
    let mut mesh = Mesh::new(w, h);
    mesh.mode = params.routing;
    let mut done = 0usize;
    let mut t = 0usize;
    let mut stalls = 0u64;
    let mut trace = Vec::new();
    let mut barrier_steps = Vec::new();
    let mut unlocked = Vec::new();
    let mut step_cells: HashSet<Cell> = HashSet::new();

    while done < n_gates {
        t += 1;
        mesh.next_timestep();
        mesh.claim(&params.blocked);
        step_cells.clear();
        let mut mesh_empty = true;
        let snapshot: Vec<usize> = ready.iter().copied().collect();
        if snapshot.is_empty() {
            return Err(Error::InvalidCircuit("dependency deadlock".into()));
        }
        for gi in snapshot {
            let g = &circuit.gates[gi];
            let path: Option<Vec<Cell>> = match g.kind {
                GateKind::Barrier => Some(Vec::new()),
                k if k.is_single_qubit() => {
                    let c = mapping.cell(g.operands[0])?;
                    (!mesh.is_claimed(c)).then(|| vec![c])
                }
                GateKind::CXX => {
                    let cells: Vec<Cell> = g.operands.iter().map(|&q| mapping.cell(q)).collect::<Result<_>>()?;
                    mesh.route_through(&greedy_order(&cells))
                }
                _ => {
                    let (a, b) = (mapping.cell(g.operands[0])?, mapping.cell(g.operands[1])?);
                    let hinted = hints
                        .get(&(g.operands[0], g.operands[1]))
                        .and_then(|&m| mesh.route_through(&[a, m, b]));
                    match hinted {
                        Some(p) => Some(p),
                        None if params.hint_fallback || !hints.contains_key(&(g.operands[0], g.operands[1])) => {
                            mesh.route(a, b, &[])
                        }
                        None => None,
                    }
                }
            };
            match path {
                Some(path) => {
                    if params.verify && !path.is_empty() {
                        let ends: Vec<Cell> = g.operands.iter().map(|&q| mapping.cell(q)).collect::<Result<_>>()?;
                        check_path(&path, &ends, w, h, gi)?;
                        let own: HashSet<Cell> = path.iter().copied().collect();
                        for c in own {
                            if !step_cells.insert(c) {
                                return Err(Error::BraidConflict { timestep: t, x: c.x, y: c.y });
                            }
                        }
                    }
                    mesh.claim(&path);
                    if !path.is_empty() {
                        mesh_empty = false;
                    }
                    if params.trace {
                        trace.push(TraceRow { timestep: t, gate: gi, kind: g.kind, path_len: path.len(), stalled: false, path: path.clone() });
                    }
                    braids_left[gi] -= 1;
                    if braids_left[gi] == 0 {
                        ready.remove(&gi);
                        completion[gi] = t;
                        done += 1;
                        if g.kind == GateKind::Barrier {
                            barrier_steps.push(t);
                        }
                        for &q in &g.operands {
                            next[q] += 1;
                            if let Some(&cand) = uses[q].get(next[q]) {
                                if is_ready(cand, &next, &uses) {
                                    unlocked.push(cand);
                                }
                            }
                        }
                    }
                }
                None => {
                    if mesh_empty {
                        return Err(Error::Unroutable { gate: gi });
                    }
                    stalls += 1;
                    if params.trace {
                        trace.push(TraceRow { timestep: t, gate: gi, kind: g.kind, path_len: 0, stalled: true, path: Vec::new() });
                    }
                }
            }
        }
        ready.extend(unlocked.drain(..));
    }

    let latency = t;
    let mut round_latencies = Vec::new();
    let mut prev = 0;
    for &b in &barrier_steps {
        round_latencies.push(b - prev - 1);
        prev = b;
    }
    round_latencies.push(latency - prev);
    let permutation_latencies = circuit
        .round_boundaries
        .iter()
        .enumerate()
        .map(|(bi, &b)| {
            let last = circuit
                .gates
                .iter()
                .enumerate()
                .filter(|(_, g)| g.permutation && g.round == bi + 2)
                .map(|(gi, _)| completion[gi])
                .max()
                .unwrap_or(completion[b]);
            last - completion[b]
        })
        .collect();
    let area = w * h;
    Ok(SimReport {
        latency,
        stalls,
        width: w,
        height: h,
        area,
        volume: area as u64 * latency as u64,
        physical_volume: None,
        barrier_steps,
        round_latencies,
        permutation_latencies,
        completion,
        trace,
    })
}

/// Fills the physical space-time volume: physical qubits of each round times
/// that round's latency.
pub fn report(mut sim: SimReport, config: &FactoryConfig, model: &ErrorModel) -> Result<SimReport> {
    let mut total = 0.0;
    for (r, &lat) in sim.round_latencies.iter().enumerate() {
        total += round_area(config, model, r + 1)? as f64 * lat as f64;
    }
    sim.physical_volume = Some(total);
    Ok(sim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::igraph::critical_path;
    use crate::layout::linear_mapping;
    use crate::protocol::{build_factory, build_module, Gate};

    fn toy(gates: Vec<(GateKind, Vec<QubitId>)>, cells: &[(usize, usize)], w: usize, h: usize) -> (Circuit, GridMapping) {
        let mut c = build_module(1).unwrap();
        c.gates = gates.into_iter().map(|(k, ops)| Gate::new(k, ops, 1, Some(0))).collect();
        c.qubits.truncate(cells.len());
        c.aliases.clear();
        c.modules.clear();
        let mut m = GridMapping::new(w, h, cells.len());
        for (q, &(x, y)) in cells.iter().enumerate() {
            m.place(q, Cell::new(x, y)).unwrap();
        }
        (c, m)
    }

    #[test]
    fn adjacent_cnot() {
        let (c, m) = toy(vec![(GateKind::CNOT, vec![0, 1])], &[(0, 0), (1, 0)], 2, 1);
        let r = simulate(&c, &m, &Hints::new(), &SimParams::default()).unwrap();
        assert_eq!((r.latency, r.stalls), (1, 0));
    }

    #[test]
    fn crossing_braids_serialize() {
        // Plus sign on a 3x3 grid: the first braid takes the centre row and
        // walls the second one off.
        let (c, m) = toy(
            vec![(GateKind::CNOT, vec![0, 1]), (GateKind::CNOT, vec![2, 3])],
            &[(0, 1), (2, 1), (1, 0), (1, 2)],
            3,
            3,
        );
        let r = simulate(&c, &m, &Hints::new(), &SimParams::default()).unwrap();
        assert_eq!((r.latency, r.stalls), (2, 1));
    }

    #[test]
    fn parallel_braids() {
        let (c, m) = toy(
            vec![(GateKind::CNOT, vec![0, 1]), (GateKind::CNOT, vec![2, 3])],
            &[(0, 0), (2, 0), (0, 1), (2, 1)],
            3,
            2,
        );
        let r = simulate(&c, &m, &Hints::new(), &SimParams::default()).unwrap();
        assert_eq!((r.latency, r.stalls), (1, 0));
    }

    #[test]
    fn straight_column_route() {
        let p = route(1, 4, Cell::new(0, 0), Cell::new(0, 3), &[], None).unwrap();
        assert_eq!(p, (0..4).map(|y| Cell::new(0, y)).collect::<Vec<_>>());
    }

    #[test]
    fn blocked_corridor() {
        assert!(route(1, 4, Cell::new(0, 0), Cell::new(0, 3), &[Cell::new(0, 2)], None).is_none());
    }

    #[test]
    fn midpoint_route_visits_midpoint() {
        let p = route(5, 5, Cell::new(0, 0), Cell::new(4, 0), &[], Some(Cell::new(2, 3))).unwrap();
        assert!(p.contains(&Cell::new(2, 3)));
        assert_eq!(p.len(), 2 + 3 + 3 + 2 + 1);
    }

    #[test]
    fn injection_takes_two_braids() {
        let (c, m) = toy(vec![(GateKind::InjectT, vec![0, 1])], &[(0, 0), (1, 0)], 2, 1);
        let r = simulate(&c, &m, &Hints::new(), &SimParams::default()).unwrap();
        assert_eq!(r.latency, 2);
        let one = SimParams { injection_cost: 1, ..SimParams::default() };
        assert_eq!(simulate(&c, &m, &Hints::new(), &one).unwrap().latency, 1);
    }

    #[test]
    fn blocking_never_speeds_up() {
        for k in [1, 2] {
            let c = build_module(k).unwrap();
            let m = linear_mapping(&c);
            let free: Vec<Cell> = (0..m.height)
                .flat_map(|y| (0..m.width).map(move |x| Cell::new(x, y)))
                .filter(|&c| m.is_free(c))
                .collect();
            let base = simulate(&c, &m, &Hints::new(), &SimParams::default()).unwrap().latency;
            for stride in [2, 3, 5, 7] {
                let blocked: Vec<Cell> = free.iter().copied().step_by(stride).collect();
                let p = SimParams { blocked, ..SimParams::default() };
                match simulate(&c, &m, &Hints::new(), &p) {
                    Ok(r) => assert!(r.latency >= base, "k={k} stride={stride}"),
                    Err(e) => assert!(matches!(e, Error::Unroutable { .. })),
                }
            }
        }
    }

    #[test]
    fn lower_bound_and_volume_on_module() {
        for k in [1, 2, 4] {
            let c = build_module(k).unwrap();
            let m = linear_mapping(&c);
            let r = simulate(&c, &m, &Hints::new(), &SimParams::default()).unwrap();
            assert!(r.latency >= critical_path(&c));
            assert_eq!(r.volume, (r.area * r.latency) as u64);
            assert_eq!(r, simulate(&c, &m, &Hints::new(), &SimParams::default()).unwrap());
        }
    }

    #[test]
    fn round_latencies_account_for_total() {
        let c = build_factory(&FactoryConfig::new(2, 2)).unwrap();
        let m = linear_mapping(&c);
        let r = simulate(&c, &m, &Hints::new(), &SimParams::default()).unwrap();
        assert_eq!(r.round_latencies.iter().sum::<usize>() + r.barrier_steps.len(), r.latency);
        assert_eq!(r.permutation_latencies.len(), 1);
        assert!(r.permutation_latencies[0] >= 1);
    }

    #[test]
    fn physical_volume_single_level() {
        let cfg = FactoryConfig::new(2, 1);
        let model = crate::protocol::build_error_model(&cfg).unwrap();
        let c = build_factory(&cfg).unwrap();
        let r = simulate(&c, &linear_mapping(&c), &Hints::new(), &SimParams::default()).unwrap();
        let q1 = round_area(&cfg, &model, 1).unwrap() as f64;
        let r = report(r, &cfg, &model).unwrap();
        assert_eq!(r.physical_volume, Some(q1 * r.latency as f64));
    }
}
