//! Multilevel recursive bisection: heavy-edge coarsening, BFS region growth,
//! Fiduccia-Mattheyses refinement, and a paired recursive split of the grid.

use std::cmp::Reverse;
use std::collections::{BTreeSet, VecDeque};

use crate::error::{Error, Result};
use crate::igraph::InteractionGraph;
use crate::layout::{Cell, GridMapping};
use crate::protocol::QubitId;

const COARSEST: usize = 24;
const MIN_SHRINK: f64 = 0.9;
const MAX_PASSES: usize = 8;
const INITIAL_TRIES: usize = 8;

/// Vertex- and edge-weighted graph over `0..n`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WGraph {
    pub vwgt: Vec<u64>,
    pub adj: Vec<Vec<(usize, u64)>>,
}

impl WGraph {
    pub fn from_edges(n: usize, edges: &[(usize, usize, u64)]) -> Self {
        let mut g = WGraph { vwgt: vec![1; n], adj: vec![Vec::new(); n]};
        for &(u, v, w) in edges {
            g.add_edge(u, v, w);
        }
        g
    }

    fn add_edge(&mut self, u: usize, v: usize, w: u64) {
        if u == v {
            return;
        }
        match self.adj[u].iter_mut().find(|(x, _)| *x == v) {
            Some(e) => {
                e.1 += w;
                self.adj[v].iter_mut().find(|(x, _)| *x == u).unwrap().1 += w;
            }
            None => {
                self.adj[u].push((v, w));
                self.adj[v].push((u, w));
            }
        }
    }

    pub fn len(&self) -> usize {
        self.vwgt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vwgt.is_empty()
    }

    pub fn total_weight(&self) -> u64 {
        self.vwgt.iter().sum()
    }

    pub fn cut(&self, side: &[Side]) -> u64 {
        let mut c = 0;
        for (u, nb) in self.adj.iter().enumerate() {
            for &(v, w) in nb {
                if u < v && side[u] != side[v] {
                    c += w;
                }
            }
        }
        c
    }
}

/// Edge-visit counter for complexity checks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Work {
    pub edge_visits: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoarseGraph {
    pub level: usize,
    pub graph: WGraph,
    /// Vertex of this level that each vertex of the previous level merged into.
    pub projection: Vec<usize>,
}

/// Heavy-edge matching hierarchy. Level 0 is the input graph.
pub fn coarsen(graph: &WGraph, work: &mut Work) -> Vec<CoarseGraph> {
    let mut levels = vec![CoarseGraph { level: 0, graph: graph.clone(), projection: (0..graph.len()).collect() }];
    loop {
        let g = &levels.last().unwrap().graph;
        let n = g.len();
        let mut edges: Vec<(u64, usize, usize)> = Vec::new();
        for (u, nb) in g.adj.iter().enumerate() {
            work.edge_visits += nb.len() as u64;
            for &(v, w) in nb {
                if u < v {
                    edges.push((w, u, v));
                }
            }
        }
        edges.sort_by_key(|&(w, u, v)| (Reverse(w), u, v));
        let mut mate: Vec<Option<usize>> = vec![None; n];
        for (_, u, v) in edges {
            if mate[u].is_none() && mate[v].is_none() {
                mate[u] = Some(v);
                mate[v] = Some(u);
            }
        }
        let mut projection = vec![usize::MAX; n];
        let mut next = 0;
        for u in 0..n {
            if projection[u] != usize::MAX {
                continue;
            }
            projection[u] = next;
            if let Some(v) = mate[u] {
                projection[v] = next;
            }
            next += 1;
        }
        if next == n {
            break;
        }
        let mut coarse = WGraph { vwgt: vec![0; next], adj: vec![Vec::new(); next]};
        for u in 0..n {
            coarse.vwgt[projection[u]] += g.vwgt[u];
            work.edge_visits += g.adj[u].len() as u64;
            for &(v, w) in &g.adj[u] {
                if u < v {
                    coarse.add_edge(projection[u], projection[v], w);
                }
            }
        }
        let level = levels.len();
        levels.push(CoarseGraph { level, graph: coarse, projection });
        if next < COARSEST || next as f64 > MIN_SHRINK * n as f64 {
            break;
        }
    }
    levels
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    A,
    B,
}

impl Side {
    fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bisection {
    pub side: Vec<Side>,
    pub cut: u64,
    pub balance: u64,
}

/// Largest tolerated `|w(A) - w(B)|`: the fractional tolerance, but never
/// less than the parity of the total weight.
pub fn allowed_imbalance(g: &WGraph, tolerance: f64) -> u64 {
    let total = g.total_weight();
    ((tolerance * total as f64).floor() as u64).max(total % 2)
}

fn weights(g: &WGraph, side: &[Side]) -> (u64, u64) {
    let mut wa = 0;
    let mut wb = 0;
    for (u, &s) in side.iter().enumerate() {
        match s {
            Side::A => wa += g.vwgt[u],
            Side::B => wb += g.vwgt[u],
        }
    }
    (wa, wb)
}

fn region_growth(g: &WGraph, start: usize) -> Vec<Side> {
    let n = g.len();
    let half = g.total_weight().div_ceil(2);
    let mut side = vec![Side::B; n];
    let mut seen = vec![false; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&u| (Reverse(g.vwgt[u]), u));
    let mut wa = 0;
    let mut queue = VecDeque::new();
    let mut starts = std::iter::once(start).chain(order);
    while wa < half {
        let s = match queue.pop_front() {
            Some(s) => s,
            None => match starts.find(|&s| !seen[s]) {
                Some(s) => {
                    seen[s] = true;
                    s
                }
                None => break,
            },
        };
        side[s] = Side::A;
        wa += g.vwgt[s];
        for &(v, _) in &g.adj[s] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    side
}

fn gain_of(g: &WGraph, side: &[Side], u: usize, work: &mut Work) -> i64 {
    work.edge_visits += g.adj[u].len() as u64;
    g.adj[u]
        .iter()
        .map(|&(v, w)| if side[v] == side[u] { -(w as i64) } else { w as i64 })
        .sum()
}

/// Moves vertices off the heavier side until the balance tolerance holds.
fn rebalance(g: &WGraph, side: &mut [Side], allowed: u64, work: &mut Work) {
    loop {
        let (wa, wb) = weights(g, side);
        if wa.abs_diff(wb) <= allowed {
            return;
        }
        let heavy = if wa > wb { Side::A } else { Side::B };
        let diff = wa.abs_diff(wb);
        let best = (0..g.len())
            .filter(|&u| side[u] == heavy && g.vwgt[u] < diff)
            .max_by_key(|&u| (gain_of(g, side, u, work), Reverse(u)));
        match best {
            Some(u) => side[u] = heavy.other(),
            None => return,
        }
    }
}

/// One Fiduccia-Mattheyses pass with rollback to the best prefix. Returns
/// the cut improvement.
fn fm_pass(g: &WGraph, side: &mut [Side], allowed: u64, work: &mut Work) -> u64 {
    let n = g.len();
    let mut gain: Vec<i64> = (0..n).map(|u| gain_of(g, side, u, work)).collect();
    let mut buckets: [BTreeSet<(i64, Reverse<usize>)>; 2] = [BTreeSet::new(), BTreeSet::new()];
    let bi = |s: Side| if s == Side::A { 0 } else { 1 };
    for u in 0..n {
        buckets[bi(side[u])].insert((gain[u], Reverse(u)));
    }
    let (mut wa, mut wb) = weights(g, side);
    let mut locked = vec![false; n];
    let mut moves: Vec<usize> = Vec::new();
    let (mut run, mut best, mut best_len) = (0i64, 0i64, 0usize);
    // Moves may overshoot the tolerance by one vertex; only balanced prefixes
    // are kept.
    let slack = allowed + g.vwgt.iter().copied().max().unwrap_or(0);
    loop {
        let mut pick: Option<(i64, usize)> = None;
        for s in [Side::A, Side::B] {
            for &(gv, Reverse(u)) in buckets[bi(s)].iter().rev() {
                let w = g.vwgt[u];
                let (na, nb) = if s == Side::A { (wa - w, wb + w) } else { (wa + w, wb - w) };
                if na.abs_diff(nb) <= slack {
                    if pick.is_none_or(|(pg, pu)| (gv, Reverse(u)) > (pg, Reverse(pu))) {
                        pick = Some((gv, u));
                    }
                    break;
                }
            }
        }
        let Some((gv, u)) = pick else { break };
        let from = side[u];
        buckets[bi(from)].remove(&(gv, Reverse(u)));
        locked[u] = true;
        side[u] = from.other();
        if from == Side::A {
            wa -= g.vwgt[u];
            wb += g.vwgt[u];
        } else {
            wa += g.vwgt[u];
            wb -= g.vwgt[u];
        }
        run += gv;
        moves.push(u);
        if run > best && wa.abs_diff(wb) <= allowed {
            best = run;
            best_len = moves.len();
        }
        work.edge_visits += g.adj[u].len() as u64;
        for &(v, w) in &g.adj[u] {
            if locked[v] {
                continue;
            }
            let b = bi(side[v]);
            buckets[b].remove(&(gain[v], Reverse(v)));
            // u left v's side -> the edge is now cut, or u joined it.
            let delta = 2 * w as i64;
            gain[v] += if side[v] == from { delta } else { -delta };
            buckets[b].insert((gain[v], Reverse(v)));
        }
    }
    for &u in moves[best_len..].iter().rev() {
        side[u] = side[u].other();
    }
    best as u64
}

fn refine(g: &WGraph, side: &mut [Side], tolerance: f64, work: &mut Work) {
    let allowed = allowed_imbalance(g, tolerance);
    rebalance(g, side, allowed, work);
    for _ in 0..MAX_PASSES {
        if fm_pass(g, side, allowed, work) == 0 {
            break;
        }
    }
}

fn finish(g: &WGraph, side: Vec<Side>) -> Bisection {
    let (wa, wb) = weights(g, &side);
    Bisection { cut: g.cut(&side), balance: wa.abs_diff(wb), side }
}

fn initial(g: &WGraph, tolerance: f64, work: &mut Work) -> Vec<Side> {
    let mut starts: Vec<usize> = (0..g.len()).collect();
    starts.sort_by_key(|&u| (Reverse(g.vwgt[u]), u));
    let mut best: Option<((u64, u64), Vec<Side>)> = None;
    for &s in starts.iter().take(INITIAL_TRIES) {
        let mut side = region_growth(g, s);
        refine(g, &mut side, tolerance, work);
        let key = balance_key(g, &side);
        if best.as_ref().is_none_or(|b| key < b.0) {
            best = Some((key, side));
        }
    }
    best.expect("nonempty graph").1
}

fn balance_key(g: &WGraph, side: &[Side]) -> (u64, u64) {
    let (wa, wb) = weights(g, side);
    (g.cut(side), wa.abs_diff(wb))
}

/// Bisects level 0 of `hierarchy`: region growth on the coarsest graph,
/// then FM refinement at every level on the way back up. Small inputs are
/// also bisected directly and the better result kept.
pub fn bisect(hierarchy: &[CoarseGraph], tolerance: f64, work: &mut Work) -> Bisection {
    let coarsest = &hierarchy.last().expect("nonempty hierarchy").graph;
    if coarsest.is_empty() {
        return Bisection { side: Vec::new(), cut: 0, balance: 0 };
    }
    let mut side = initial(coarsest, tolerance, work);
    for lvl in (1..hierarchy.len()).rev() {
        let proj = &hierarchy[lvl].projection;
        let finer = &hierarchy[lvl - 1].graph;
        side = proj.iter().map(|&c| side[c]).collect();
        refine(finer, &mut side, tolerance, work);
    }
    let fine = &hierarchy[0].graph;
    if hierarchy.len() > 1 && fine.len() <= COARSEST {
        let direct = initial(fine, tolerance, work);
        if balance_key(fine, &direct) < balance_key(fine, &side) {
            side = direct;
        }
    }
    finish(fine, side)
}

pub fn bisect_graph(graph: &WGraph, tolerance: f64, work: &mut Work) -> Bisection {
    let h = coarsen(graph, work);
    bisect(&h, tolerance, work)
}

pub const DEFAULT_TOLERANCE: f64 = 0.1;

/// Recursive embedding of the graph's vertices onto a `width x height` grid.
pub fn embed(graph: &InteractionGraph, width: usize, height: usize) -> Result<GridMapping> {
    let cells: Vec<Cell> = (0..height).flat_map(|y| (0..width).map(move |x| Cell::new(x, y))).collect();
    let mut mapping = GridMapping::new(width, height, graph.num_qubits);
    embed_cells(graph, &graph.vertices, &cells, &mut mapping, &mut Work::default())?;
    Ok(mapping)
}

/// Embeds `vertices` into the free region `cells`. Vertices already placed
/// in `mapping` outside the set act as fixed terminals.
pub fn embed_cells(
    graph: &InteractionGraph,
    vertices: &[QubitId],
    cells: &[Cell],
    mapping: &mut GridMapping,
    work: &mut Work,
) -> Result<()> {
    if cells.len() < vertices.len() {
        return Err(Error::InfeasibleSplit(format!("{} vertices into {} cells", vertices.len(), cells.len())));
    }
    let adj = graph.adjacency();
    let mut center: Vec<Option<(f64, f64)>> = (0..graph.num_qubits.max(mapping.num_qubits()))
        .map(|q| mapping.get(q).map(|c| (c.x as f64, c.y as f64)))
        .collect();
    if center.len() < graph.num_qubits {
        center.resize(graph.num_qubits, None);
    }
    let mut local = vec![usize::MAX; center.len()];
    let mut queue: VecDeque<(Vec<QubitId>, Vec<Cell>)> = VecDeque::new();
    let c0 = centroid(cells);
    for &v in vertices {
        center[v] = Some(c0);
    }
    queue.push_back((vertices.to_vec(), cells.to_vec()));
    while let Some((vs, region)) = queue.pop_front() {
        if vs.is_empty() {
            continue;
        }
        if vs.len() == 1 {
            let v = vs[0];
            let target = neighbour_mean(&adj[v], &center).unwrap_or_else(|| centroid(&region));
            let cell = *region
                .iter()
                .min_by(|a, b| {
                    let da = (a.x as f64 - target.0).powi(2) + (a.y as f64 - target.1).powi(2);
                    let db = (b.x as f64 - target.0).powi(2) + (b.y as f64 - target.1).powi(2);
                    da.total_cmp(&db).then((a.y, a.x).cmp(&(b.y, b.x)))
                })
                .unwrap();
            mapping.place(v, cell)?;
            center[v] = Some((cell.x as f64, cell.y as f64));
            continue;
        }
        // Induced subgraph over vs.
        for (i, &v) in vs.iter().enumerate() {
            local[v] = i;
        }
        let mut sub = WGraph { vwgt: vec![1; vs.len()], adj: vec![Vec::new(); vs.len()] };
        for (i, &v) in vs.iter().enumerate() {
            work.edge_visits += adj[v].len() as u64;
            for &(u, w) in &adj[v] {
                if local[u] != usize::MAX {
                    sub.adj[i].push((local[u], w as u64));
                }
            }
        }
        for &v in &vs {
            local[v] = usize::MAX;
        }
        let bis = bisect_graph(&sub, DEFAULT_TOLERANCE, work);
        let part_a: Vec<QubitId> = vs.iter().zip(&bis.side).filter(|(_, &s)| s == Side::A).map(|(&v, _)| v).collect();
        let part_b: Vec<QubitId> = vs.iter().zip(&bis.side).filter(|(_, &s)| s == Side::B).map(|(&v, _)| v).collect();

        let (lo_a, hi_a) = split_region(&region, part_a.len(), part_b.len());
        let (lo_b, hi_b) = split_region(&region, part_b.len(), part_a.len());
        let pull = |part: &[QubitId], r: &[Cell], center: &[Option<(f64, f64)>]| -> f64 {
            let c = centroid(r);
            let inside: BTreeSet<QubitId> = vs.iter().copied().collect();
            part.iter()
                .flat_map(|&v| adj[v].iter())
                .filter(|(u, _)| !inside.contains(u))
                .filter_map(|&(u, w)| center[u].map(|p| w as f64 * ((p.0 - c.0).powi(2) + (p.1 - c.1).powi(2)).sqrt()))
                .sum()
        };
        let cost_a_low = pull(&part_a, &lo_a, &center) + pull(&part_b, &hi_a, &center);
        let cost_b_low = pull(&part_b, &lo_b, &center) + pull(&part_a, &hi_b, &center);
        let (ra, rb) = if cost_b_low < cost_a_low - 1e-9 { (hi_b, lo_b) } else { (lo_a, hi_a) };
        let (ca, cb) = (centroid(&ra), centroid(&rb));
        for &v in &part_a {
            center[v] = Some(ca);
        }
        for &v in &part_b {
            center[v] = Some(cb);
        }
        queue.push_back((part_a, ra));
        queue.push_back((part_b, rb));
    }
    Ok(())
}

fn centroid(cells: &[Cell]) -> (f64, f64) {
    let n = cells.len().max(1) as f64;
    (
        cells.iter().map(|c| c.x as f64).sum::<f64>() / n,
        cells.iter().map(|c| c.y as f64).sum::<f64>() / n,
    )
}

fn neighbour_mean(nb: &[(QubitId, u32)], center: &[Option<(f64, f64)>]) -> Option<(f64, f64)> {
    let (mut x, mut y, mut w) = (0.0, 0.0, 0.0);
    for &(u, m) in nb {
        if let Some(p) = center[u] {
            x += m as f64 * p.0;
            y += m as f64 * p.1;
            w += m as f64;
        }
    }
    (w > 0.0).then(|| (x / w, y / w))
}

/// Splits a cell set across its longer bounding-box axis. The low part gets
/// room for `n_low` vertices and the cut snaps to a whole grid line when
/// that still fits both sides.
pub(crate) fn split_region(region: &[Cell], n_low: usize, n_high: usize) -> (Vec<Cell>, Vec<Cell>) {
    let (minx, maxx) = (region.iter().map(|c| c.x).min().unwrap(), region.iter().map(|c| c.x).max().unwrap());
    let (miny, maxy) = (region.iter().map(|c| c.y).min().unwrap(), region.iter().map(|c| c.y).max().unwrap());
    let along_x = maxx - minx >= maxy - miny;
    let mut sorted = region.to_vec();
    if along_x {
        sorted.sort_by_key(|c| (c.x, c.y));
    } else {
        sorted.sort_by_key(|c| (c.y, c.x));
    }
    let total = sorted.len();
    let (lo, hi) = (n_low, total - n_high);
    let ideal = if n_low + n_high == 0 {
        total / 2
    } else {
        ((total as f64) * n_low as f64 / (n_low + n_high) as f64).round() as usize
    };
    let ideal = ideal.clamp(lo, hi);
    let key = |c: &Cell| if along_x { c.x } else { c.y };
    let boundaries = (1..total).filter(|&i| key(&sorted[i]) != key(&sorted[i - 1]));
    let cut = boundaries
        .filter(|&i| i >= lo && i <= hi)
        .min_by_key(|&i| (i.abs_diff(ideal), i))
        .unwrap_or(ideal);
    let high = sorted.split_off(cut);
    (sorted, high)
}
