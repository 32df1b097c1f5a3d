//! Hierarchical stitching of multi-level factories.
//!
//! Each round is laid out from one embedded module replicated over a
//! near-square tiling. Consecutive rounds are joined by placing the next
//! round (over measured tiles or in fresh rows), choosing output ports by a
//! minimum-distance assignment and giving every permutation braid an
//! intermediate destination.
//!
//! Plan text extends the mapping format with `round r` section markers; a
//! qubit line belongs to the round in which the qubit is first placed.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt::Write as _;

use pathfinding::prelude::{kuhn_munkres_min, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anneal::{self, ForceParams, Problem};
use crate::bisect::{self, Work};
use crate::error::{Error, Result};
use crate::igraph::InteractionGraph;
use crate::layout::{self, compact_dims, Cell, GridMapping};
use crate::meshsim::Hints;
use crate::protocol::{
    self, ancilla_per_module, canonical_wiring, modules_in_round, raw_per_module, Circuit, FactoryChoices,
    FactoryConfig, PortLink, QubitId, QubitRole, ReusePlan, ReusePolicy, SlotKey,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbedMethod {
    #[default]
    GP,
    FD,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MidpointMode {
    None,
    ValiantRandom,
    #[default]
    Annealed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StitchParams {
    pub method: EmbedMethod,
    pub midpoints: MidpointMode,
    /// Used for FD fragments and for midpoint annealing.
    pub force: ForceParams,
    /// Free-cell slack of the GP module grid.
    pub slack: f64,
    /// Empty tiles between neighbouring fragments.
    pub gap: usize,
    /// Port assignments up to this many ports are solved by branch and bound.
    pub exact_ports: usize,
    /// Relaxations solved before branch and bound settles for its incumbent.
    pub node_budget: usize,
    pub seed: u64,
}

impl Default for StitchParams {
    fn default() -> Self {
        StitchParams {
            method: EmbedMethod::GP,
            midpoints: MidpointMode::Annealed,
            force: ForceParams::default(),
            slack: 1.0,
            gap: 0,
            exact_ports: 400,
            node_budget: 2000,
            seed: 0,
        }
    }
}

/// Index of a slot inside one module: raw slots, then ancillas, then outputs.
pub fn local_index(k: usize, role: QubitRole, index: usize) -> usize {
    match role {
        QubitRole::RawInput => index,
        QubitRole::Ancilla => raw_per_module(k) + index,
        QubitRole::Output => raw_per_module(k) + ancilla_per_module(k) + index,
        QubitRole::BarrierControl => panic!("barrier controls have no tile"),
    }
}

pub fn local_slot(k: usize, i: usize) -> (QubitRole, usize) {
    let (raw, anc) = (raw_per_module(k), ancilla_per_module(k));
    if i < raw {
        (QubitRole::RawInput, i)
    } else if i < raw + anc {
        (QubitRole::Ancilla, i - raw)
    } else {
        (QubitRole::Output, i - raw - anc)
    }
}

/// One embedded module; `cells[local_index]` is relative to the fragment
/// origin.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fragment {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<Cell>,
}

pub fn embed_module(k: usize, method: EmbedMethod, params: &StitchParams) -> Result<Fragment> {
    let module = protocol::build_module(k)?;
    let n = module.num_data_qubits();
    let mapping = match method {
        EmbedMethod::GP => {
            let (w, h) = compact_dims(n, params.slack);
            bisect::embed(&InteractionGraph::from_circuit(&module), w, h)?
        }
        EmbedMethod::FD => anneal::anneal(&layout::linear_mapping(&module), &module, &params.force)?.0,
    };
    let cells = (0..n).map(|q| mapping.cell(q)).collect::<Result<_>>()?;
    Ok(Fragment { width: mapping.width, height: mapping.height, cells })
}

/// A round as identical fragments on a near-square tiling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundLayout {
    pub fragment: Fragment,
    pub origins: Vec<Cell>,
    pub width: usize,
    pub height: usize,
}

impl RoundLayout {
    pub fn cell(&self, module: usize, local: usize) -> Cell {
        let o = self.origins[module];
        let c = self.fragment.cells[local];
        Cell::new(o.x + c.x, o.y + c.y)
    }

    fn module_cells(&self, dx: usize, dy: usize) -> Vec<Vec<Cell>> {
        (0..self.origins.len())
            .map(|m| {
                (0..self.fragment.cells.len())
                    .map(|i| {
                        let c = self.cell(m, i);
                        Cell::new(c.x + dx, c.y + dy)
                    })
                    .collect()
            })
            .collect()
    }
}

fn tile_round(k: usize, modules: usize, method: EmbedMethod, params: &StitchParams) -> Result<RoundLayout> {
    let fragment = embed_module(k, method, params)?;
    let cols = (modules as f64).sqrt().ceil().max(1.0) as usize;
    let rows = modules.div_ceil(cols);
    let (pw, ph) = (fragment.width + params.gap, fragment.height + params.gap);
    let origins = (0..modules).map(|m| Cell::new((m % cols) * pw, (m / cols) * ph)).collect();
    Ok(RoundLayout {
        origins,
        width: cols * pw - params.gap,
        height: rows * ph - params.gap,
        fragment,
    })
}

/// Lays out every module of `round` with the same embedded fragment.
pub fn embed_round(circuit: &Circuit, round: usize, method: EmbedMethod, params: &StitchParams) -> Result<RoundLayout> {
    if round == 0 || round > circuit.levels {
        return Err(Error::InvalidConfig(format!("round {round} not in 1..={}", circuit.levels)));
    }
    tile_round(circuit.capacity_k, circuit.modules_in_round(round), method, params)
}

/// One end of a permutation braid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Terminal {
    pub module: usize,
    pub cell: Cell,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortAssignment {
    pub links: Vec<PortLink>,
    pub total_distance: f64,
}

const SCALE: f64 = 1e6;
const FORBIDDEN: i64 = 10_000_000_000_000;

fn scaled(a: Cell, b: Cell) -> i64 {
    (a.dist(b) * SCALE).round() as i64
}

fn hungarian(cost: &Matrix<i64>) -> (i64, Vec<usize>) {
    kuhn_munkres_min(cost)
}

fn assignment_cost(cost: &Matrix<i64>, a: &[usize]) -> i64 {
    a.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum()
}

fn is_feasible(sources: &[Terminal], sinks: &[Terminal], relation: &BTreeSet<(usize, usize)>, a: &[usize]) -> bool {
    let mut pairs = BTreeSet::new();
    let mut used = BTreeSet::new();
    a.iter().enumerate().all(|(i, &j)| {
        let pair = (sources[i].module, sinks[j].module);
        relation.contains(&pair) && pairs.insert(pair) && used.insert(j)
    })
}

/// Local search keeping feasibility: re-matches each source module's ports
/// among its current sinks, then each sink module's slots among its current
/// sources, until neither step improves.
fn alternate(cost: &Matrix<i64>, sources: &[Terminal], sinks: &[Terminal], a: &mut [usize]) {
    let mut by_src: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in sources.iter().enumerate() {
        by_src.entry(s.module).or_default().push(i);
    }
    let mut by_sink: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (j, t) in sinks.iter().enumerate() {
        by_sink.entry(t.module).or_default().push(j);
    }
    let mut current = assignment_cost(cost, a);
    for _ in 0..100 {
        for srcs in by_src.values() {
            let targets: Vec<usize> = srcs.iter().map(|&i| a[i]).collect();
            let m = Matrix::from_fn(srcs.len(), targets.len(), |(r, c)| cost[(srcs[r], targets[c])]);
            let (_, pick) = hungarian(&m);
            for (r, &c) in pick.iter().enumerate() {
                a[srcs[r]] = targets[c];
            }
        }
        let mut owner = vec![usize::MAX; sinks.len()];
        for (i, &j) in a.iter().enumerate() {
            owner[j] = i;
        }
        for slots in by_sink.values() {
            let srcs: Vec<usize> = slots.iter().map(|&j| owner[j]).collect();
            let m = Matrix::from_fn(srcs.len(), slots.len(), |(r, c)| cost[(srcs[r], slots[c])]);
            let (_, pick) = hungarian(&m);
            for (r, &c) in pick.iter().enumerate() {
                a[srcs[r]] = slots[c];
            }
        }
        let next = assignment_cost(cost, a);
        if next >= current {
            break;
        }
        current = next;
    }
}

/// Minimum total distance matching of sources onto sinks in which every
/// source/sink module pair is in `relation` and used at most once.
///
/// `initial` is a feasible assignment to improve on; without one the exact
/// search must find a first solution. Instances with at most
/// `params.exact_ports` sources are solved by branch and bound over the
/// unconstrained matching relaxation.
pub fn assign_terminals(
    sources: &[Terminal],
    sinks: &[Terminal],
    relation: &BTreeSet<(usize, usize)>,
    initial: Option<&[usize]>,
    params: &StitchParams,
) -> Result<Vec<usize>> {
    let n = sources.len();
    if n != sinks.len() {
        return Err(Error::InfeasibleWiring(format!("{n} ports for {} slots", sinks.len())));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let cost = Matrix::from_fn(n, n, |(i, j)| {
        if relation.contains(&(sources[i].module, sinks[j].module)) {
            scaled(sources[i].cell, sinks[j].cell)
        } else {
            FORBIDDEN
        }
    });
    let mut best: Option<(i64, Vec<usize>)> = None;
    if let Some(init) = initial {
        if init.len() != n || !is_feasible(sources, sinks, relation, init) {
            return Err(Error::InfeasibleWiring("initial assignment violates the wiring relation".into()));
        }
        let mut a = init.to_vec();
        alternate(&cost, sources, sinks, &mut a);
        best = Some((assignment_cost(&cost, &a), a));
    }
    if n <= params.exact_ports {
        branch_and_bound(&cost, sources, sinks, params.node_budget, &mut best);
    }
    best.map(|(_, a)| a).ok_or_else(|| Error::InfeasibleWiring("no feasible port assignment found".into()))
}

fn branch_and_bound(
    cost: &Matrix<i64>,
    sources: &[Terminal],
    sinks: &[Terminal],
    budget: usize,
    best: &mut Option<(i64, Vec<usize>)>,
) {
    let n = sources.len();
    let solve = |forbid: &[(usize, usize)]| -> Option<(i64, Vec<usize>)> {
        let mut m = cost.clone();
        for &(i, module) in forbid {
            for j in 0..n {
                if sinks[j].module == module {
                    m[(i, j)] = FORBIDDEN;
                }
            }
        }
        let (total, a) = hungarian(&m);
        (total < FORBIDDEN).then_some((total, a))
    };
    let mut heap: BinaryHeap<Reverse<(i64, usize)>> = BinaryHeap::new();
    let mut nodes: Vec<(Vec<(usize, usize)>, Vec<usize>)> = Vec::new();
    let mut solved = 1;
    if let Some((total, a)) = solve(&[]) {
        heap.push(Reverse((total, 0)));
        nodes.push((Vec::new(), a));
    }
    while let Some(Reverse((bound, id))) = heap.pop() {
        if best.as_ref().is_some_and(|(b, _)| bound >= *b) {
            break;
        }
        let (forbid, a) = std::mem::take(&mut nodes[id]);
        let mut seen: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut conflict = None;
        for (i, &j) in a.iter().enumerate() {
            let pair = (sources[i].module, sinks[j].module);
            if let Some(&prev) = seen.get(&pair) {
                conflict = Some((prev, i, pair.1));
                break;
            }
            seen.insert(pair, i);
        }
        let Some((p, q, module)) = conflict else {
            *best = Some((bound, a));
            continue;
        };
        for src in [p, q] {
            if solved >= budget {
                return;
            }
            let mut child = forbid.clone();
            child.push((src, module));
            solved += 1;
            if let Some((total, ca)) = solve(&child) {
                if best.as_ref().is_none_or(|(b, _)| total < *b) {
                    heap.push(Reverse((total, nodes.len())));
                    nodes.push((child, ca));
                }
            }
        }
    }
}

fn total_distance(links: &[PortLink], prev: &[Vec<Cell>], next: &[Vec<Cell>], k: usize) -> f64 {
    links
        .iter()
        .map(|l| {
            let a = prev[l.src_module][local_index(k, QubitRole::Output, l.src_port)];
            let b = next[l.dst_module][local_index(k, QubitRole::RawInput, l.dst_slot)];
            a.dist(b)
        })
        .sum()
}

/// Chooses which output port of each round-`round` module feeds which input
/// slot of the next round. Never worse than the canonical wiring.
pub fn assign_ports(
    k: usize,
    levels: usize,
    round: usize,
    prev: &[Vec<Cell>],
    next: &[Vec<Cell>],
    params: &StitchParams,
) -> Result<PortAssignment> {
    let canon = canonical_wiring(k, levels, round)?;
    let relation: BTreeSet<(usize, usize)> = canon.iter().map(|l| (l.src_module, l.dst_module)).collect();
    let sources: Vec<Terminal> = (0..prev.len())
        .flat_map(|m| (0..k).map(move |p| (m, p)))
        .map(|(m, p)| Terminal { module: m, cell: prev[m][local_index(k, QubitRole::Output, p)] })
        .collect();
    let raw = raw_per_module(k);
    let sinks: Vec<Terminal> = (0..next.len())
        .flat_map(|d| (0..raw).map(move |t| (d, t)))
        .map(|(d, t)| Terminal { module: d, cell: next[d][local_index(k, QubitRole::RawInput, t)] })
        .collect();
    let mut initial = vec![0; sources.len()];
    for l in &canon {
        initial[l.src_module * k + l.src_port] = l.dst_module * raw + l.dst_slot;
    }
    let a = assign_terminals(&sources, &sinks, &relation, Some(&initial), params)?;
    let mut links: Vec<PortLink> = a
        .iter()
        .enumerate()
        .map(|(i, &j)| PortLink { src_module: i / k, src_port: i % k, dst_module: j / raw, dst_slot: j % raw })
        .collect();
    links.sort_by_key(|l| (l.dst_module, l.dst_slot));
    let total = total_distance(&links, prev, next, k);
    Ok(PortAssignment { links, total_distance: total })
}

/// A stitched factory: slot placements per round, the boundary choices and
/// the resulting circuit and global mapping.
#[derive(Clone, Debug)]
pub struct StitchPlan {
    pub config: FactoryConfig,
    pub width: usize,
    pub height: usize,
    /// `rounds[r - 1][module][local_index]`.
    pub rounds: Vec<Vec<Vec<Cell>>>,
    /// One assignment per round boundary.
    pub ports: Vec<PortAssignment>,
    /// Next-round slot to the measured slot whose tile it takes.
    pub reuse: ReusePlan,
    pub circuit: Circuit,
    /// Global placement; its midpoints are the permutation braid hints.
    pub mapping: GridMapping,
}

impl StitchPlan {
    /// Round 1 only; later rounds are added with [`place_next_round`].
    pub fn start(config: &FactoryConfig, params: &StitchParams) -> Result<StitchPlan> {
        config.validate()?;
        let k = config.capacity_k;
        let first = tile_round(k, modules_in_round(k, config.levels_l, 1)?, params.method, params)?;
        let mut plan = StitchPlan {
            config: config.clone(),
            width: first.width,
            height: first.height,
            rounds: vec![first.module_cells(0, 0)],
            ports: Vec::new(),
            reuse: ReusePlan::new(),
            circuit: protocol::build_module(k)?,
            mapping: GridMapping::new(0, 0, 0),
        };
        if config.levels_l == 1 {
            plan.finish()?;
        }
        Ok(plan)
    }

    pub fn hints(&self) -> Hints {
        self.mapping.midpoints.clone()
    }

    /// Permutation braids as (output qubit, input qubit).
    pub fn permutation_edges(&self) -> Vec<(QubitId, QubitId)> {
        self.circuit
            .gates
            .iter()
            .filter(|g| g.permutation)
            .map(|g| (g.operands[0], g.operands[1]))
            .collect()
    }

    /// Builds the circuit for the chosen ports and reuse plan and places every
    /// qubit identity.
    fn finish(&mut self) -> Result<()> {
        let k = self.config.capacity_k;
        let choices = FactoryChoices {
            reuse: (self.config.reuse_policy == ReusePolicy::Reuse).then(|| self.reuse.clone()),
            ports: Some(self.ports.iter().map(|p| p.links.clone()).collect()),
        };
        self.circuit = protocol::build_factory_with(&self.config, &choices)?;
        let mut mapping = GridMapping::new(self.width, self.height, self.circuit.num_qubits());
        for q in self.circuit.identities() {
            if q.role == QubitRole::BarrierControl {
                continue;
            }
            let cell = self.rounds[q.round - 1][q.module_index][local_index(k, q.role, q.port_index)];
            match mapping.get(q.id) {
                Some(c) if c == cell => {}
                Some(c) => {
                    return Err(Error::InvalidMapping(format!(
                        "qubit {} placed at ({}, {}) and ({}, {})",
                        q.id, c.x, c.y, cell.x, cell.y
                    )))
                }
                None => mapping.place(q.id, cell)?,
            }
        }
        self.mapping = mapping;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "grid {} {}", self.width, self.height);
        for r in 1..=self.config.levels_l {
            let _ = writeln!(s, "round {r}");
            for q in self.circuit.qubits.iter().filter(|q| q.round == r && q.role != QubitRole::BarrierControl) {
                if let Some(c) = self.mapping.get(q.id) {
                    let _ = writeln!(s, "{} {} {}", q.id, c.x, c.y);
                }
            }
        }
        for (&(u, v), c) in &self.mapping.midpoints {
            let _ = writeln!(s, "mid {u} {v} {} {}", c.x, c.y);
        }
        s
    }
}

/// Parses plan text into the global mapping and the qubits first placed in
/// each round.
pub fn parse_plan(text: &str) -> Result<(GridMapping, Vec<Vec<QubitId>>)> {
    let mut rounds: Vec<Vec<QubitId>> = Vec::new();
    let mut body = String::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.split('#').next().unwrap_or("").trim();
        let mut fields = trimmed.split_whitespace();
        match fields.next() {
            Some("round") => {
                let r: usize = fields
                    .next()
                    .and_then(|f| f.parse().ok())
                    .ok_or(Error::Parse { line: i + 1, msg: "expected `round r`".into() })?;
                if r != rounds.len() + 1 {
                    return Err(Error::Parse { line: i + 1, msg: format!("round {r} out of order") });
                }
                rounds.push(Vec::new());
                body.push('\n');
            }
            Some(first) if first != "grid" && first != "mid" => {
                let q = first.parse().map_err(|_| Error::Parse { line: i + 1, msg: format!("bad qubit `{first}`") })?;
                rounds
                    .last_mut()
                    .ok_or(Error::Parse { line: i + 1, msg: "qubit before any round marker".into() })?
                    .push(q);
                body.push_str(line);
                body.push('\n');
            }
            _ => {
                body.push_str(line);
                body.push('\n');
            }
        }
    }
    Ok((GridMapping::from_text(&body)?, rounds))
}

/// Splits `region` into `parts` pieces of at least `need` cells each.
fn partition_region(region: &[Cell], parts: usize, need: usize, out: &mut Vec<Vec<Cell>>) {
    if parts == 1 {
        out.push(region.to_vec());
        return;
    }
    let low = parts / 2;
    let (a, b) = bisect::split_region(region, low * need, (parts - low) * need);
    partition_region(&a, low, need, out);
    partition_region(&b, parts - low, need, out);
}

/// Adds the next round to `plan` and assigns ports across the new boundary.
///
/// With `Reuse`, the modules fed by each group of source modules are embedded
/// into the group's measured raw and ancilla tiles; surviving outputs are
/// never covered. A group without enough measured tiles sends the whole round
/// to fresh rows instead. With `NoReuse`, the round is tiled in fresh rows
/// below the grid.
pub fn place_next_round(plan: &mut StitchPlan, policy: ReusePolicy, params: &StitchParams) -> Result<()> {
    let k = plan.config.capacity_k;
    let levels = plan.config.levels_l;
    let r = plan.rounds.len();
    if r >= levels {
        return Err(Error::InvalidConfig(format!("factory has only {levels} rounds")));
    }
    let next_count = modules_in_round(k, levels, r + 1)?;
    let per_module = raw_per_module(k) + ancilla_per_module(k) + k;

    let mut placed = None;
    if policy == ReusePolicy::Reuse {
        placed = reuse_round(plan, next_count, per_module)?;
        if placed.is_none() {
            log::warn!("round {}: not enough measured tiles for reuse, placing in fresh rows", r + 1);
        }
    }
    let cells = match placed {
        Some((cells, entries)) => {
            plan.reuse.extend(entries);
            cells
        }
        None => {
            let layout = tile_round(k, next_count, params.method, params)?;
            let dx = plan.width.saturating_sub(layout.width) / 2;
            let dy = plan.height + params.gap;
            plan.width = plan.width.max(dx + layout.width);
            plan.height = dy + layout.height;
            layout.module_cells(dx, dy)
        }
    };
    let ports = assign_ports(k, levels, r, &plan.rounds[r - 1], &cells, params)?;
    plan.rounds.push(cells);
    plan.ports.push(ports);
    if plan.rounds.len() == levels {
        plan.finish()?;
    }
    Ok(())
}

type ReuseResult = Option<(Vec<Vec<Cell>>, Vec<(SlotKey, SlotKey)>)>;

fn reuse_round(plan: &StitchPlan, next_count: usize, per_module: usize) -> Result<ReuseResult> {
    let k = plan.config.capacity_k;
    let r = plan.rounds.len();
    let group = raw_per_module(k);
    let measured = raw_per_module(k) + ancilla_per_module(k);
    let module = protocol::build_module(k)?;
    let graph = InteractionGraph::from_circuit(&module);
    let vertices: Vec<QubitId> = (0..per_module).collect();

    let mut slot_at: BTreeMap<Cell, SlotKey> = BTreeMap::new();
    for (m, cells) in plan.rounds[r - 1].iter().enumerate() {
        for (i, &c) in cells.iter().enumerate().take(measured) {
            let (role, index) = local_slot(k, i);
            slot_at.insert(c, SlotKey { round: r, module: m, role, index });
        }
    }
    let mut cells = vec![Vec::new(); next_count];
    let mut entries = Vec::new();
    for g in 0..next_count / k {
        let pool: Vec<Cell> = plan.rounds[r - 1][g * group..(g + 1) * group]
            .iter()
            .flat_map(|m| m[..measured].iter().copied())
            .collect();
        if pool.len() < k * per_module {
            return Ok(None);
        }
        let mut parts = Vec::with_capacity(k);
        partition_region(&pool, k, per_module, &mut parts);
        for (p, part) in parts.iter().enumerate() {
            let d = g * k + p;
            let mut local = GridMapping::new(plan.width, plan.height, per_module);
            bisect::embed_cells(&graph, &vertices, part, &mut local, &mut Work::default())?;
            cells[d] = (0..per_module).map(|i| local.cell(i)).collect::<Result<Vec<_>>>()?;
            for (i, c) in cells[d].iter().enumerate() {
                let (role, index) = local_slot(k, i);
                entries.push((SlotKey { round: r + 1, module: d, role, index }, slot_at[c]));
            }
        }
    }
    Ok(Some((cells, entries)))
}

/// Gives every permutation braid of a finished plan an intermediate
/// destination.
///
/// `ValiantRandom` draws each midpoint uniformly from the bounding box of the
/// braid's endpoints. `Annealed` starts there and runs the force-directed
/// annealer on the graph of half-edges with the endpoints pinned; midpoints
/// may share tiles with qubits and with each other.
pub fn optimize_midpoints(plan: &mut StitchPlan, mode: MidpointMode, params: &StitchParams) -> Result<()> {
    plan.mapping.midpoints.clear();
    if mode == MidpointMode::None {
        return Ok(());
    }
    let edges = plan.permutation_edges();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut mids = Vec::with_capacity(edges.len());
    for &(u, v) in &edges {
        let (a, b) = (plan.mapping.cell(u)?, plan.mapping.cell(v)?);
        let x = rng.gen_range(a.x.min(b.x)..=a.x.max(b.x));
        let y = rng.gen_range(a.y.min(b.y)..=a.y.max(b.y));
        mids.push(Cell::new(x, y));
    }
    if mode == MidpointMode::Annealed && !edges.is_empty() {
        mids = anneal_midpoints(plan, &edges, &mids, params)?;
    }
    for (&e, &c) in edges.iter().zip(&mids) {
        plan.mapping.midpoints.insert(e, c);
    }
    Ok(())
}

fn anneal_midpoints(
    plan: &StitchPlan,
    edges: &[(QubitId, QubitId)],
    start: &[Cell],
    params: &StitchParams,
) -> Result<Vec<Cell>> {
    let mut index: BTreeMap<QubitId, usize> = BTreeMap::new();
    let mut pos: Vec<Option<Cell>> = Vec::new();
    for &(u, v) in edges {
        for q in [u, v] {
            if let std::collections::btree_map::Entry::Vacant(e) = index.entry(q) {
                e.insert(pos.len());
                pos.push(Some(plan.mapping.cell(q)?));
            }
        }
    }
    let pinned = pos.len();
    pos.extend(start.iter().map(|&c| Some(c)));
    let mut half = Vec::with_capacity(2 * edges.len());
    for (e, &(u, v)) in edges.iter().enumerate() {
        half.push((index[&u], pinned + e));
        half.push((pinned + e, index[&v]));
    }
    let problem = Problem {
        width: plan.width,
        height: plan.height,
        movable: (0..pos.len()).map(|i| i >= pinned).collect(),
        pos,
        weights: vec![1.0; half.len()],
        layers: vec![half.clone()],
        edges: half,
        partition: None,
        exclusive: false,
    };
    let mut force = params.force.clone();
    force.seed = params.seed;
    let (out, _) = anneal::anneal_problem(&problem, &force);
    Ok(out[pinned..].iter().map(|c| c.expect("midpoints stay placed")).collect())
}

/// Full hierarchical stitching for `config`: round-by-round placement under
/// the config's reuse policy, port assignment per boundary, then midpoints.
pub fn stitch_factory(config: &FactoryConfig, params: &StitchParams) -> Result<StitchPlan> {
    let mut plan = StitchPlan::start(config, params)?;
    for _ in 1..config.levels_l {
        place_next_round(&mut plan, config.reuse_policy, params)?;
    }
    optimize_midpoints(&mut plan, params.midpoints, params)?;
    Ok(plan)
}
