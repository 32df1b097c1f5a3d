//! Force-directed annealing of a placement.
//!
//! Three forces drive proposals: attraction toward the centroid of a
//! vertex's neighbours, inverse-square repulsion between edge midpoints, and
//! a dipole interaction that rotates edges active in the same timestep
//! toward parallel alignment. Moves are kept only when the congestion cost
//! drops. When the search stalls, whole communities are kicked apart or
//! pulled together.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::igraph::{communities, module_hint, CommunityPartition, InjectionCost, InteractionGraph, Layering};
use crate::layout::{metrics, Cell, GridMapping};
use crate::protocol::{Circuit, QubitId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForceParams {
    pub attraction_gain: f64,
    pub repulsion_gain: f64,
    pub dipole_gain: f64,
    pub w_len: f64,
    pub w_space: f64,
    /// `None`: twice the mean edge length of the starting mapping.
    pub w_cross: Option<f64>,
    pub max_iters: usize,
    pub convergence_window: usize,
    /// Community kicks allowed before giving up.
    pub max_kicks: usize,
    /// Cap on move proposals over the whole run.
    pub max_moves: Option<usize>,
    /// Zero keeps acceptance greedy.
    pub temperature: f64,
    pub cooling: f64,
    pub seed: u64,
    /// Distance floor in the inverse-square laws.
    pub delta: f64,
    /// Dipole interaction radius.
    pub cutoff: f64,
    pub move_radius: f64,
    /// Swap with the occupant when the cone holds no free cell.
    pub swap_moves: bool,
}

impl Default for ForceParams {
    fn default() -> Self {
        ForceParams {
            attraction_gain: 1.0,
            repulsion_gain: 1.0,
            dipole_gain: 1.0,
            w_len: 1.0,
            w_space: 1.0,
            w_cross: None,
            max_iters: 60,
            convergence_window: 2,
            max_kicks: 4,
            max_moves: None,
            temperature: 0.0,
            cooling: 0.95,
            seed: 0,
            delta: 0.25,
            cutoff: 6.0,
            move_radius: 3.0,
            swap_moves: false,
        }
    }
}

/// Force vector per vertex, indexed like the placement.
pub type ForceField = Vec<(f64, f64)>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KickMode {
    Separate,
    Gather,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealTraceRow {
    pub iter: usize,
    pub cost: f64,
    pub crossings: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnealStats {
    pub iterations: usize,
    pub proposals: usize,
    pub accepted: usize,
    pub kicks: usize,
    /// Edge pairs touched by the repulsion force, summed over iterations.
    pub repulsion_pairs: u64,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub trace: Vec<AnnealTraceRow>,
}

impl AnnealStats {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iter,cost,crossings\n");
        for r in &self.trace {
            let _ = writeln!(s, "{},{},{}", r.iter, r.cost, r.crossings);
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostWeights {
    pub w_len: f64,
    pub w_space: f64,
    pub w_cross: f64,
}

/// `w_len * length - w_space * spacing + w_cross * crossings`, recomputed
/// from scratch.
pub fn cost(mapping: &GridMapping, graph: &InteractionGraph, w: CostWeights) -> Result<f64> {
    let m = metrics(mapping, graph)?;
    Ok(w.w_len * m.avg_edge_length - w.w_space * m.avg_edge_spacing.unwrap_or(0.0)
        + w.w_cross * m.crossing_count as f64)
}

fn positions(mapping: &GridMapping, n: usize) -> Vec<Option<(f64, f64)>> {
    (0..n).map(|q| mapping.get(q).map(|c| (c.x as f64, c.y as f64))).collect()
}

fn attraction(pos: &[Option<(f64, f64)>], adj: &[Vec<(usize, u32)>], gain: f64, out: &mut ForceField) {
    for (v, nb) in adj.iter().enumerate() {
        let Some(p) = pos[v] else { continue };
        let pts: Vec<(f64, f64)> = nb.iter().filter_map(|&(u, _)| pos[u]).collect();
        if pts.is_empty() {
            continue;
        }
        let cx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let cy = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        out[v].0 += gain * (cx - p.0);
        out[v].1 += gain * (cy - p.1);
    }
}

/// Direction from `b` to `a`, `+x` when they coincide.
fn unit(a: (f64, f64), b: (f64, f64)) -> ((f64, f64), f64) {
    let (dx, dy) = (a.0 - b.0, a.1 - b.1);
    let d = (dx * dx + dy * dy).sqrt();
    if d < 1e-12 {
        ((1.0, 0.0), 0.0)
    } else {
        ((dx / d, dy / d), d)
    }
}

fn repulsion(
    pos: &[Option<(f64, f64)>],
    edges: &[(usize, usize)],
    gain: f64,
    delta: f64,
    out: &mut ForceField,
) -> u64 {
    let mids: Vec<(f64, f64)> = edges
        .iter()
        .map(|&(u, v)| {
            let (a, b) = (pos[u].unwrap(), pos[v].unwrap());
            ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0)
        })
        .collect();
    let mut pairs = 0u64;
    for i in 0..edges.len() {
        for j in i + 1..edges.len() {
            pairs += 1;
            let ((ux, uy), d) = unit(mids[i], mids[j]);
            let mag = gain / d.max(delta).powi(2);
            let (fx, fy) = (0.5 * mag * ux, 0.5 * mag * uy);
            let (a, b) = edges[i];
            let (c, e) = edges[j];
            for v in [a, b] {
                out[v].0 += fx;
                out[v].1 += fy;
            }
            for v in [c, e] {
                out[v].0 -= fx;
                out[v].1 -= fy;
            }
        }
    }
    pairs
}

/// Two-colouring and component id of every vertex of a layer's path forest.
fn colour_layer(layer: &[(usize, usize)]) -> BTreeMap<usize, (bool, usize)> {
    let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(u, v) in layer {
        adj.entry(u).or_default().push(v);
        adj.entry(v).or_default().push(u);
    }
    let mut colour: BTreeMap<usize, (bool, usize)> = BTreeMap::new();
    let keys: Vec<usize> = adj.keys().copied().collect();
    for start in keys {
        if colour.contains_key(&start) {
            continue;
        }
        colour.insert(start, (false, start));
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            let c = colour[&u].0;
            for &v in &adj[&u] {
                if let std::collections::btree_map::Entry::Vacant(e) = colour.entry(v) {
                    e.insert((!c, start));
                    stack.push(v);
                }
            }
        }
    }
    colour
}

fn dipole(
    pos: &[Option<(f64, f64)>],
    layers: &[Vec<(usize, usize)>],
    gain: f64,
    delta: f64,
    cutoff: f64,
    out: &mut ForceField,
) {
    for layer in layers {
        let col: Vec<(usize, bool, usize)> = colour_layer(layer).into_iter().map(|(v, (c, comp))| (v, c, comp)).collect();
        for i in 0..col.len() {
            let (p, cp, gp) = col[i];
            let Some(pp) = pos[p] else { continue };
            for &(q, cq, gq) in &col[i + 1..] {
                if gp == gq {
                    continue;
                }
                let Some(pq) = pos[q] else { continue };
                let ((ux, uy), d) = unit(pp, pq);
                if d > cutoff {
                    continue;
                }
                // Like poles repel, opposite poles attract.
                let sign = if cp == cq { 1.0 } else { -1.0 };
                let mag = sign * gain / d.max(delta).powi(2);
                out[p].0 += mag * ux;
                out[p].1 += mag * uy;
                out[q].0 -= mag * ux;
                out[q].1 -= mag * uy;
            }
        }
    }
}

fn graph_edges(graph: &InteractionGraph) -> Vec<(usize, usize)> {
    graph.edges.iter().map(|e| (e.u, e.v)).collect()
}

pub fn centroid_attraction(mapping: &GridMapping, graph: &InteractionGraph, params: &ForceParams) -> ForceField {
    let mut f = vec![(0.0, 0.0); graph.num_qubits];
    attraction(&positions(mapping, graph.num_qubits), &graph.adjacency(), params.attraction_gain, &mut f);
    f
}

/// Returns the field and the number of edge pairs visited.
pub fn edge_repulsion(mapping: &GridMapping, graph: &InteractionGraph, params: &ForceParams) -> (ForceField, u64) {
    let mut f = vec![(0.0, 0.0); graph.num_qubits];
    let pairs = repulsion(
        &positions(mapping, graph.num_qubits),
        &graph_edges(graph),
        params.repulsion_gain,
        params.delta,
        &mut f,
    );
    (f, pairs)
}

pub fn dipole_rotation(mapping: &GridMapping, circuit: &Circuit, params: &ForceParams) -> ForceField {
    let layers: Vec<Vec<(usize, usize)>> = Layering::compute(circuit, InjectionCost::default().braids())
        .layers(circuit)
        .into_iter()
        .map(|l| l.edges)
        .collect();
    dipole_layers(mapping, &layers, params)
}

pub fn dipole_layers(mapping: &GridMapping, layers: &[Vec<(usize, usize)>], params: &ForceParams) -> ForceField {
    let n = mapping.num_qubits();
    let mut f = vec![(0.0, 0.0); n];
    dipole(&positions(mapping, n), layers, params.dipole_gain, params.delta, params.cutoff, &mut f);
    f
}

fn mean(cells: &[(f64, f64)]) -> (f64, f64) {
    let n = cells.len().max(1) as f64;
    (cells.iter().map(|c| c.0).sum::<f64>() / n, cells.iter().map(|c| c.1).sum::<f64>() / n)
}

fn step_toward(dir: (f64, f64)) -> (isize, isize) {
    let d = (dir.0 * dir.0 + dir.1 * dir.1).sqrt();
    if d < 1e-12 {
        return (0, 0);
    }
    ((dir.0 / d).round() as isize, (dir.1 / d).round() as isize)
}

fn offset(c: Cell, step: (isize, isize), w: usize, h: usize) -> Option<Cell> {
    let (x, y) = (c.x as isize + step.0, c.y as isize + step.1);
    (x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h).then(|| Cell::new(x as usize, y as usize))
}

/// Free cell nearest to `target`, ties by row then column.
fn nearest_free(mapping: &GridMapping, target: Cell) -> Option<Cell> {
    let mut best: Option<(usize, Cell)> = None;
    let max_r = mapping.width.max(mapping.height);
    for r in 0..=max_r {
        for y in target.y.saturating_sub(r)..=(target.y + r).min(mapping.height - 1) {
            for x in target.x.saturating_sub(r)..=(target.x + r).min(mapping.width - 1) {
                let c = Cell::new(x, y);
                if c.manhattan(target) != r || !mapping.is_free(c) {
                    continue;
                }
                let key = (r, c);
                if best.is_none_or(|b| (key.0, (key.1.y, key.1.x)) < (b.0, (b.1.y, b.1.x))) {
                    best = Some(key);
                }
            }
        }
        if best.is_some() {
            break;
        }
    }
    best.map(|b| b.1)
}

/// Moves every listed vertex by its step at once. Vertices whose target is
/// blocked stay put when they can, else take the nearest free cell.
fn translate_all(mapping: &mut GridMapping, moves: &[(QubitId, (isize, isize))]) {
    let old: Vec<(QubitId, Cell)> = moves.iter().filter_map(|&(q, _)| mapping.get(q).map(|c| (q, c))).collect();
    for &(q, _) in &old {
        mapping.unplace(q);
    }
    let mut pending = Vec::new();
    for (&(q, c), &(_, step)) in old.iter().zip(moves) {
        match offset(c, step, mapping.width, mapping.height) {
            Some(t) if mapping.is_free(t) => mapping.place(q, t).unwrap(),
            _ => pending.push((q, c)),
        }
    }
    for (q, c) in pending {
        let t = if mapping.is_free(c) { c } else { nearest_free(mapping, c).expect("grid has room") };
        mapping.place(q, t).unwrap();
    }
}

/// 8-connected spatial components of a cell set.
fn spatial_components(cells: &[Cell]) -> usize {
    let set: std::collections::HashSet<Cell> = cells.iter().copied().collect();
    let mut seen = std::collections::HashSet::new();
    let mut count = 0;
    for &c in cells {
        if !seen.insert(c) {
            continue;
        }
        count += 1;
        let mut stack = vec![c];
        while let Some(p) = stack.pop() {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (x, y) = (p.x as isize + dx, p.y as isize + dy);
                    if x < 0 || y < 0 {
                        continue;
                    }
                    let n = Cell::new(x as usize, y as usize);
                    if set.contains(&n) && seen.insert(n) {
                        stack.push(n);
                    }
                }
            }
        }
    }
    count
}

/// Seeded k-means (k-means++ start, Lloyd iterations). Returns labels.
fn kmeans(points: &[(f64, f64)], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d2 = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2);
    let mut centres = vec![points[rng.gen_range(0..points.len())]];
    while centres.len() < k {
        let w: Vec<f64> = points.iter().map(|&p| centres.iter().map(|&c| d2(p, c)).fold(f64::MAX, f64::min)).collect();
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut r = rng.gen::<f64>() * total;
        let mut pick = points.len() - 1;
        for (i, &wi) in w.iter().enumerate() {
            if r < wi {
                pick = i;
                break;
            }
            r -= wi;
        }
        centres.push(points[pick]);
    }
    let mut labels = vec![0; points.len()];
    for _ in 0..50 {
        let mut changed = false;
        for (i, &p) in points.iter().enumerate() {
            let best = (0..centres.len())
                .min_by(|&a, &b| d2(p, centres[a]).total_cmp(&d2(p, centres[b])))
                .unwrap();
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        for (c, centre) in centres.iter_mut().enumerate() {
            let members: Vec<(f64, f64)> = points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(&p, _)| p).collect();
            if !members.is_empty() {
                *centre = mean(&members);
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

/// Separate pushes every community one tile away from the global centroid;
/// Gather pulls the spatial clusters of each community one tile toward each
/// other.
pub fn community_kick(mapping: &GridMapping, partition: &CommunityPartition, mode: KickMode, seed: u64) -> GridMapping {
    let mut out = mapping.clone();
    let members: Vec<Vec<QubitId>> = partition
        .members()
        .into_iter()
        .map(|m| m.into_iter().filter(|&q| mapping.get(q).is_some()).collect())
        .collect();
    let cell_f = |q: QubitId| {
        let c = mapping.get(q).unwrap();
        (c.x as f64, c.y as f64)
    };
    let mut moves: Vec<(QubitId, (isize, isize))> = Vec::new();
    match mode {
        KickMode::Separate => {
            let all: Vec<(f64, f64)> = members.iter().flatten().map(|&q| cell_f(q)).collect();
            let g = mean(&all);
            let mut zero_dirs = 0;
            for m in members.iter().filter(|m| !m.is_empty()) {
                let c = mean(&m.iter().map(|&q| cell_f(q)).collect::<Vec<_>>());
                let mut step = step_toward((c.0 - g.0, c.1 - g.1));
                if step == (0, 0) {
                    step = if zero_dirs % 2 == 0 { (1, 0) } else { (-1, 0) };
                    zero_dirs += 1;
                }
                moves.extend(m.iter().map(|&q| (q, step)));
            }
        }
        KickMode::Gather => {
            for (ci, m) in members.iter().enumerate() {
                if m.len() < 2 {
                    continue;
                }
                let cells: Vec<Cell> = m.iter().map(|&q| mapping.get(q).unwrap()).collect();
                let k = spatial_components(&cells);
                if k < 2 {
                    continue;
                }
                let pts: Vec<(f64, f64)> = m.iter().map(|&q| cell_f(q)).collect();
                let labels = kmeans(&pts, k, seed.wrapping_add(ci as u64));
                let clusters: Vec<Vec<usize>> =
                    (0..k).map(|c| (0..pts.len()).filter(|&i| labels[i] == c).collect()).collect();
                let cents: Vec<(f64, f64)> = clusters
                    .iter()
                    .filter(|c| !c.is_empty())
                    .map(|c| mean(&c.iter().map(|&i| pts[i]).collect::<Vec<_>>()))
                    .collect();
                let g = mean(&cents);
                for cl in clusters.iter().filter(|c| !c.is_empty()) {
                    let c = mean(&cl.iter().map(|&i| pts[i]).collect::<Vec<_>>());
                    let step = step_toward((g.0 - c.0, g.1 - c.1));
                    if step != (0, 0) {
                        moves.extend(cl.iter().map(|&i| (m[i], step)));
                    }
                }
            }
        }
    }
    // Leading movers first so followers can step into vacated cells.
    translate_all(&mut out, &moves);
    out
}

/// Incrementally maintained congestion cost over a fixed edge list.
struct CostState {
    pos: Vec<(f64, f64)>,
    edges: Vec<(usize, usize)>,
    w: Vec<f64>,
    inc: Vec<Vec<usize>>,
    mid: Vec<(f64, f64)>,
    bbox: Vec<[f64; 4]>,
    len_sum: f64,
    w_sum: f64,
    space_num: f64,
    space_den: f64,
    crossings: i64,
    weights: CostWeights,
    mark: Vec<u32>,
    stamp: u32,
}

/// Change in the cost sums caused by one vertex move.
struct MoveDelta {
    len: f64,
    space: f64,
    cross: i64,
}

fn seg_cross(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let orient = |p: (f64, f64), q: (f64, f64), r: (f64, f64)| {
        let v = (q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0);
        if v > 1e-9 {
            1
        } else if v < -1e-9 {
            -1
        } else {
            0
        }
    };
    let within = |p: (f64, f64), q: (f64, f64), r: (f64, f64)| {
        r.0 >= p.0.min(q.0) - 1e-9 && r.0 <= p.0.max(q.0) + 1e-9 && r.1 >= p.1.min(q.1) - 1e-9 && r.1 <= p.1.max(q.1) + 1e-9
    };
    let (d1, d2, d3, d4) = (orient(c, d, a), orient(c, d, b), orient(a, b, c), orient(a, b, d));
    if d1 * d2 < 0 && d3 * d4 < 0 {
        return true;
    }
    (d1 == 0 && within(c, d, a)) || (d2 == 0 && within(c, d, b)) || (d3 == 0 && within(a, b, c)) || (d4 == 0 && within(a, b, d))
}

impl CostState {
    fn new(pos: Vec<(f64, f64)>, edges: Vec<(usize, usize)>, w: Vec<f64>, weights: CostWeights) -> Self {
        let mut inc = vec![Vec::new(); pos.len()];
        for (i, &(u, v)) in edges.iter().enumerate() {
            inc[u].push(i);
            inc[v].push(i);
        }
        let m = edges.len();
        let mut s = CostState {
            pos,
            edges,
            w,
            inc,
            mid: vec![(0.0, 0.0); m],
            bbox: vec![[0.0; 4]; m],
            len_sum: 0.0,
            w_sum: 0.0,
            space_num: 0.0,
            space_den: 0.0,
            crossings: 0,
            weights,
            mark: vec![0; m],
            stamp: 0,
        };
        for i in 0..m {
            s.refresh_edge(i);
        }
        s.recompute();
        s
    }

    fn refresh_edge(&mut self, i: usize) {
        let (a, b) = (self.pos[self.edges[i].0], self.pos[self.edges[i].1]);
        self.mid[i] = ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0);
        self.bbox[i] = [a.0.min(b.0), a.0.max(b.0), a.1.min(b.1), a.1.max(b.1)];
    }

    fn len(&self, i: usize) -> f64 {
        let (a, b) = (self.pos[self.edges[i].0], self.pos[self.edges[i].1]);
        ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
    }

    fn crosses(&self, i: usize, j: usize) -> bool {
        let (a, b) = self.edges[i];
        let (c, d) = self.edges[j];
        if a == c || a == d || b == c || b == d {
            return false;
        }
        let (bi, bj) = (self.bbox[i], self.bbox[j]);
        if bj[0] > bi[1] + 1e-9 || bi[0] > bj[1] + 1e-9 || bj[2] > bi[3] + 1e-9 || bi[2] > bj[3] + 1e-9 {
            return false;
        }
        seg_cross(self.pos[a], self.pos[b], self.pos[c], self.pos[d])
    }

    fn recompute(&mut self) {
        let m = self.edges.len();
        self.len_sum = (0..m).map(|i| self.w[i] * self.len(i)).sum();
        self.w_sum = self.w.iter().sum();
        self.space_num = 0.0;
        self.space_den = 0.0;
        self.crossings = 0;
        for i in 0..m {
            for j in i + 1..m {
                let ww = self.w[i] * self.w[j];
                self.space_num += ww * dist(self.mid[i], self.mid[j]);
                self.space_den += ww;
                if self.crosses(i, j) {
                    self.crossings += 1;
                }
            }
        }
    }

    fn cost(&self) -> f64 {
        let len = if self.w_sum > 0.0 { self.len_sum / self.w_sum } else { 0.0 };
        let space = if self.space_den > 0.0 { self.space_num / self.space_den } else { 0.0 };
        self.weights.w_len * len - self.weights.w_space * space + self.weights.w_cross * self.crossings as f64
    }

    /// Length, spacing numerator and crossings contributed by the edges at `v`.
    fn local(&self, v: usize) -> (f64, f64, i64) {
        let d = &self.inc[v];
        let mut len = 0.0;
        let mut space = 0.0;
        let mut cross = 0;
        for &e in d {
            len += self.w[e] * self.len(e);
            for f in 0..self.edges.len() {
                if f == e {
                    continue;
                }
                let inside = d.contains(&f);
                if inside && f < e {
                    continue;
                }
                space += self.w[e] * self.w[f] * dist(self.mid[e], self.mid[f]);
                if !inside && self.crosses(e, f) {
                    cross += 1;
                }
            }
        }
        (len, space, cross)
    }

    fn cost_change(&self, d: &MoveDelta) -> f64 {
        let len = if self.w_sum > 0.0 { d.len / self.w_sum } else { 0.0 };
        let space = if self.space_den > 0.0 { d.space / self.space_den } else { 0.0 };
        self.weights.w_len * len - self.weights.w_space * space + self.weights.w_cross * d.cross as f64
    }

    /// Sums change of moving `v` to `to`, in one pass over the edges and
    /// without touching the state.
    fn move_delta(&mut self, v: usize, to: (f64, f64)) -> MoveDelta {
        self.stamp = self.stamp.wrapping_add(1);
        if self.stamp == 0 {
            self.mark.iter_mut().for_each(|m| *m = 0);
            self.stamp = 1;
        }
        let from = self.pos[v];
        // (edge, other endpoint, old mid, new mid, new bbox)
        let moved: Vec<(usize, usize, (f64, f64), (f64, f64), [f64; 4])> = self.inc[v]
            .iter()
            .map(|&e| {
                let (a, b) = self.edges[e];
                let o = if a == v { b } else { a };
                let po = self.pos[o];
                let nm = ((to.0 + po.0) / 2.0, (to.1 + po.1) / 2.0);
                (e, o, self.mid[e], nm, [to.0.min(po.0), to.0.max(po.0), to.1.min(po.1), to.1.max(po.1)])
            })
            .collect();
        for &(e, ..) in &moved {
            self.mark[e] = self.stamp;
        }
        let mut d = MoveDelta { len: 0.0, space: 0.0, cross: 0 };
        for &(e, o, ..) in &moved {
            let po = self.pos[o];
            d.len += self.w[e] * (dist(to, po) - dist(from, po));
        }
        for (i, &(e, _, om, nm, _)) in moved.iter().enumerate() {
            for &(f, _, fom, fnm, _) in &moved[i + 1..] {
                d.space += self.w[e] * self.w[f] * (dist(nm, fnm) - dist(om, fom));
            }
        }
        for f in 0..self.edges.len() {
            if self.mark[f] == self.stamp {
                continue;
            }
            let (c, dd) = self.edges[f];
            let (mf, bf, wf) = (self.mid[f], self.bbox[f], self.w[f]);
            for &(e, o, om, nm, nb) in &moved {
                d.space += self.w[e] * wf * (dist(nm, mf) - dist(om, mf));
                if o == c || o == dd || v == c || v == dd {
                    continue;
                }
                let old = self.crosses(e, f);
                let new = !(bf[0] > nb[1] + 1e-9 || nb[0] > bf[1] + 1e-9 || bf[2] > nb[3] + 1e-9 || nb[2] > bf[3] + 1e-9)
                    && seg_cross(to, self.pos[o], self.pos[c], self.pos[dd]);
                d.cross += new as i64 - old as i64;
            }
        }
        d
    }

    fn apply(&mut self, v: usize, to: (f64, f64), d: &MoveDelta) {
        self.pos[v] = to;
        for i in 0..self.inc[v].len() {
            let e = self.inc[v][i];
            self.refresh_edge(e);
        }
        self.len_sum += d.len;
        self.space_num += d.space;
        self.crossings += d.cross;
    }

    /// Moves `v` and returns the cost change.
    fn shift(&mut self, v: usize, to: (f64, f64)) -> f64 {
        let before = self.cost();
        let (l0, s0, c0) = self.local(v);
        self.pos[v] = to;
        for i in 0..self.inc[v].len() {
            let e = self.inc[v][i];
            self.refresh_edge(e);
        }
        let (l1, s1, c1) = self.local(v);
        self.len_sum += l1 - l0;
        self.space_num += s1 - s0;
        self.crossings += c1 - c0;
        self.cost() - before
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Input to the annealing core: a placement over `0..n` with some vertices
/// pinned.
pub struct Problem {
    pub width: usize,
    pub height: usize,
    pub pos: Vec<Option<Cell>>,
    pub movable: Vec<bool>,
    pub edges: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
    pub layers: Vec<Vec<(usize, usize)>>,
    pub partition: Option<CommunityPartition>,
    /// At most one vertex per cell.
    pub exclusive: bool,
}

fn cone_offsets(radius: f64) -> Vec<(isize, isize, f64)> {
    let r = radius.floor() as isize;
    let mut v: Vec<(isize, isize, f64)> = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let d = ((dx * dx + dy * dy) as f64).sqrt();
            if (dx, dy) != (0, 0) && d <= radius + 1e-9 {
                v.push((dx, dy, d));
            }
        }
    }
    v
}

fn to_mapping(p: &Problem, pos: &[Option<Cell>]) -> GridMapping {
    let mut m = GridMapping::new(p.width, p.height, pos.len());
    for (q, c) in pos.iter().enumerate() {
        if let Some(c) = c {
            m.place(q, *c).expect("exclusive placement");
        }
    }
    m
}

/// Runs the annealer and returns the best placement seen.
pub fn anneal_problem(p: &Problem, params: &ForceParams) -> (Vec<Option<Cell>>, AnnealStats) {
    let n = p.pos.len();
    let fpos = |pos: &[Option<Cell>]| -> Vec<Option<(f64, f64)>> {
        pos.iter().map(|c| c.map(|c| (c.x as f64, c.y as f64))).collect()
    };
    let mut pos = p.pos.clone();
    let mut occ: Vec<Option<usize>> = vec![None; p.width * p.height];
    if p.exclusive {
        for (q, c) in pos.iter().enumerate() {
            if let Some(c) = c {
                occ[c.y * p.width + c.x] = Some(q);
            }
        }
    }
    let mut adj = vec![Vec::new(); n];
    for (&(u, v), &w) in p.edges.iter().zip(&p.weights) {
        adj[u].push((v, w.round().max(1.0) as u32));
        adj[v].push((u, w.round().max(1.0) as u32));
    }
    let mut stats = AnnealStats::default();
    let as_f = |pos: &[Option<Cell>]| -> Vec<(f64, f64)> {
        pos.iter().map(|c| c.map_or((0.0, 0.0), |c| (c.x as f64, c.y as f64))).collect()
    };
    let mut probe = CostState::new(as_f(&pos), p.edges.clone(), p.weights.clone(), CostWeights { w_len: 0.0, w_space: 0.0, w_cross: 0.0 });
    let avg_len = if probe.w_sum > 0.0 { probe.len_sum / probe.w_sum } else { 0.0 };
    let weights = CostWeights {
        w_len: params.w_len,
        w_space: params.w_space,
        w_cross: params.w_cross.unwrap_or(2.0 * avg_len),
    };
    probe.weights = weights;
    let mut state = probe;
    stats.initial_cost = state.cost();
    let mut best = (state.cost(), pos.clone());
    let offsets = cone_offsets(params.move_radius);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut temperature = params.temperature;
    let mut stale = 0;
    let mut next_kick = KickMode::Separate;
    let budget = params.max_moves.unwrap_or(usize::MAX);

    'outer: for iter in 0..params.max_iters {
        stats.iterations = iter + 1;
        let fp = fpos(&pos);
        let mut field: ForceField = vec![(0.0, 0.0); n];
        attraction(&fp, &adj, params.attraction_gain, &mut field);
        stats.repulsion_pairs += repulsion(&fp, &p.edges, params.repulsion_gain, params.delta, &mut field);
        dipole(&fp, &p.layers, params.dipole_gain, params.delta, params.cutoff, &mut field);

        let mut order: Vec<usize> = (0..n)
            .filter(|&v| p.movable[v] && pos[v].is_some())
            .filter(|&v| field[v].0.hypot(field[v].1) > 1e-9)
            .collect();
        order.sort_by(|&a, &b| {
            let (fa, fb) = (field[a].0.hypot(field[a].1), field[b].0.hypot(field[b].1));
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        let mut accepted = 0;
        for v in order {
            if stats.proposals >= budget {
                break 'outer;
            }
            let cur = pos[v].unwrap();
            let f = field[v];
            let fl = f.0.hypot(f.1);
            let mut choice: Option<(f64, f64, Cell, Option<usize>)> = None;
            for &(dx, dy, d) in &offsets {
                let cos = (dx as f64 * f.0 + dy as f64 * f.1) / (d * fl);
                if cos < std::f64::consts::FRAC_1_SQRT_2 - 1e-12 {
                    continue;
                }
                let (x, y) = (cur.x as isize + dx, cur.y as isize + dy);
                if x < 0 || y < 0 || x as usize >= p.width || y as usize >= p.height {
                    continue;
                }
                let c = Cell::new(x as usize, y as usize);
                let holder = if p.exclusive { occ[c.y * p.width + c.x] } else { None };
                if let Some(h) = holder {
                    if !params.swap_moves || !p.movable[h] {
                        continue;
                    }
                }
                let key = (d + if holder.is_some() { 100.0 } else { 0.0 }, -cos);
                if choice.is_none_or(|(bd, bc, bcell, _)| {
                    (key.0, key.1, (c.y, c.x)) < (bd, bc, (bcell.y, bcell.x))
                }) {
                    choice = Some((key.0, key.1, c, holder));
                }
            }
            let Some((_, _, target, holder)) = choice else { continue };
            stats.proposals += 1;
            let to = (target.x as f64, target.y as f64);
            let (delta, single) = match holder {
                None => {
                    let d = state.move_delta(v, to);
                    (state.cost_change(&d), Some(d))
                }
                Some(h) => (state.shift(v, to) + state.shift(h, (cur.x as f64, cur.y as f64)), None),
            };
            let accept = delta < -1e-9
                || (temperature > 0.0 && rng.gen::<f64>() < (-delta / temperature).exp());
            if accept {
                accepted += 1;
                if let Some(d) = &single {
                    state.apply(v, to, d);
                }
                pos[v] = Some(target);
                if p.exclusive {
                    occ[cur.y * p.width + cur.x] = holder;
                    occ[target.y * p.width + target.x] = Some(v);
                }
                if let Some(h) = holder {
                    pos[h] = Some(cur);
                }
                if state.cost() < best.0 - 1e-9 {
                    best = (state.cost(), pos.clone());
                }
            } else if let Some(h) = holder {
                state.shift(h, (target.x as f64, target.y as f64));
                state.shift(v, (cur.x as f64, cur.y as f64));
            }
        }
        stats.accepted += accepted;
        // Drop accumulated rounding.
        state.recompute();
        if state.cost() < best.0 - 1e-9 {
            best = (state.cost(), pos.clone());
        }
        stats.trace.push(AnnealTraceRow { iter, cost: state.cost(), crossings: state.crossings as u64 });
        temperature *= params.cooling;

        if accepted == 0 {
            stale += 1;
        } else {
            stale = 0;
        }
        if stale >= params.convergence_window {
            let Some(partition) = p.partition.as_ref().filter(|_| p.exclusive) else { break };
            if stats.kicks >= params.max_kicks {
                break;
            }
            let kicked = community_kick(&to_mapping(p, &pos), partition, next_kick, params.seed ^ stats.kicks as u64);
            next_kick = match next_kick {
                KickMode::Separate => KickMode::Gather,
                KickMode::Gather => KickMode::Separate,
            };
            stats.kicks += 1;
            stale = 0;
            for q in 0..n {
                if pos[q].is_some() {
                    pos[q] = kicked.get(q);
                }
            }
            occ.iter_mut().for_each(|o| *o = None);
            for (q, c) in pos.iter().enumerate() {
                if let Some(c) = c {
                    occ[c.y * p.width + c.x] = Some(q);
                }
            }
            state.pos = as_f(&pos);
            for e in 0..state.edges.len() {
                state.refresh_edge(e);
            }
            state.recompute();
        }
    }
    stats.final_cost = best.0;
    (best.1, stats)
}

/// Anneals a full-circuit placement on its own grid.
pub fn anneal(mapping: &GridMapping, circuit: &Circuit, params: &ForceParams) -> Result<(GridMapping, AnnealStats)> {
    mapping.check_total(circuit)?;
    let graph = InteractionGraph::from_circuit(circuit);
    let layers: Vec<Vec<(usize, usize)>> = Layering::compute(circuit, InjectionCost::default().braids())
        .layers(circuit)
        .into_iter()
        .map(|l| l.edges)
        .collect();
    let partition = communities(&graph, Some(&module_hint(circuit)), params.seed);
    let n = circuit.num_qubits();
    let problem = Problem {
        width: mapping.width,
        height: mapping.height,
        pos: (0..n).map(|q| mapping.get(q)).collect(),
        movable: (0..n).map(|q| mapping.get(q).is_some()).collect(),
        edges: graph_edges(&graph),
        weights: graph.edges.iter().map(|e| e.multiplicity as f64).collect(),
        layers,
        partition: Some(partition),
        exclusive: true,
    };
    let (pos, stats) = anneal_problem(&problem, params);
    let mut out = to_mapping(&problem, &pos);
    out.midpoints = mapping.midpoints.clone();
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::crossing_count;

    fn mapping_of(cells: &[(usize, usize)], w: usize, h: usize) -> GridMapping {
        let mut m = GridMapping::new(w, h, cells.len());
        for (q, &(x, y)) in cells.iter().enumerate() {
            m.place(q, Cell::new(x, y)).unwrap();
        }
        m
    }

    fn close(a: (f64, f64), b: (f64, f64)) -> bool {
        (a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9
    }

    #[test]
    fn attraction_toward_centroid() {
        let m = mapping_of(&[(0, 0), (2, 0), (0, 2)], 3, 3);
        let g = InteractionGraph::from_edges(3, &[(0, 1, 1), (0, 2, 1)]);
        let f = centroid_attraction(&m, &g, &ForceParams::default());
        assert!(close(f[0], (1.0, 1.0)));
    }

    #[test]
    fn attraction_fixed_point_and_path() {
        let m = mapping_of(&[(0, 0), (1, 0), (2, 0)], 3, 1);
        let g = InteractionGraph::from_edges(3, &[(0, 1, 1), (1, 2, 1)]);
        let f = centroid_attraction(&m, &g, &ForceParams::default());
        assert!(close(f[1], (0.0, 0.0)));
        assert!(close(f[0], (1.0, 0.0)));
        assert!(close(f[2], (-1.0, 0.0)));
        let lonely = InteractionGraph::from_edges(3, &[(0, 1, 1)]);
        assert!(close(centroid_attraction(&m, &lonely, &ForceParams::default())[2], (0.0, 0.0)));
    }

    #[test]
    fn repulsion_coincident_midpoints() {
        let m = mapping_of(&[(0, 0), (2, 2), (0, 2), (2, 0)], 3, 3);
        let g = InteractionGraph::from_edges(4, &[(0, 1, 1), (2, 3, 1)]);
        let (f, pairs) = edge_repulsion(&m, &g, &ForceParams::default());
        assert_eq!(pairs, 1);
        let mag = 1.0 / 0.25f64.powi(2);
        assert!(close(f[0], (mag / 2.0, 0.0)));
        assert!(close(f[2], (-mag / 2.0, 0.0)));
    }

    #[test]
    fn repulsion_at_distance_two() {
        let m = mapping_of(&[(0, 0), (1, 0), (0, 2), (1, 2)], 2, 3);
        let g = InteractionGraph::from_edges(4, &[(0, 1, 1), (2, 3, 1)]);
        let (f, _) = edge_repulsion(&m, &g, &ForceParams::default());
        // Magnitude 1/4 split over two endpoints, pushing edge 0 up (-y).
        assert!(close(f[0], (0.0, -0.125)));
        assert!(close(f[3], (0.0, 0.125)));
    }

    #[test]
    fn repulsion_three_edges_by_hand() {
        let m = mapping_of(&[(0, 0), (2, 0), (0, 2), (2, 2), (4, 0), (4, 4)], 5, 5);
        let g = InteractionGraph::from_edges(6, &[(0, 1, 1), (2, 3, 1), (4, 5, 1)]);
        let (f, pairs) = edge_repulsion(&m, &g, &ForceParams::default());
        assert_eq!(pairs, 3);
        // Midpoints A=(1,0), B=(1,2), C=(4,2). Force on edge A from B and C.
        let from_b = (0.0, -1.0 / 4.0);
        let d_ac = 13f64.sqrt();
        let from_c = (-3.0 / d_ac / 13.0, -2.0 / d_ac / 13.0);
        let half = ((from_b.0 + from_c.0) / 2.0, (from_b.1 + from_c.1) / 2.0);
        assert!(close(f[0], half) && close(f[1], half));
    }

    #[test]
    fn parallel_dipoles_have_no_torque() {
        let m = mapping_of(&[(0, 0), (2, 0), (0, 1), (2, 1)], 3, 2);
        let f = dipole_layers(&m, &[vec![(0, 1), (2, 3)]], &ForceParams::default());
        // Torque about each edge's midpoint.
        let torque = |a: usize, b: usize| {
            let (pa, pb) = (m.get(a).unwrap(), m.get(b).unwrap());
            let c = ((pa.x + pb.x) as f64 / 2.0, (pa.y + pb.y) as f64 / 2.0);
            let r = |p: Cell| (p.x as f64 - c.0, p.y as f64 - c.1);
            let (ra, rb) = (r(pa), r(pb));
            ra.0 * f[a].1 - ra.1 * f[a].0 + rb.0 * f[b].1 - rb.1 * f[b].0
        };
        assert!(torque(0, 1).abs() < 1e-9);
        assert!(torque(2, 3).abs() < 1e-9);
    }

    #[test]
    fn crossing_dipoles_rotate() {
        let m = mapping_of(&[(0, 1), (2, 1), (1, 0), (1, 2)], 3, 3);
        let f = dipole_layers(&m, &[vec![(0, 1), (2, 3)]], &ForceParams::default());
        // a=0 (N) repelled by c=2 (N), attracted by d=3 (S): net +y.
        let g = 1.0 / 2.0;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let expect_a = (-g * s + g * s, g * s + g * s);
        assert!(close(f[0], expect_a), "{:?}", f[0]);
        assert!(f.iter().any(|v| v.0.abs() + v.1.abs() > 1e-9));
    }

    #[test]
    fn single_edge_layer_has_no_dipole_force() {
        let m = mapping_of(&[(0, 0), (3, 0)], 4, 1);
        let f = dipole_layers(&m, &[vec![(0, 1)]], &ForceParams::default());
        assert!(f.iter().all(|v| close(*v, (0.0, 0.0))));
    }

    fn partition(labels: &[usize]) -> CommunityPartition {
        CommunityPartition {
            labels: labels.iter().map(|&l| Some(l)).collect(),
            count: labels.iter().max().map_or(0, |m| m + 1),
        }
    }

    #[test]
    fn gather_contiguous_is_identity() {
        let m = mapping_of(&[(2, 2), (3, 2), (2, 3)], 6, 6);
        let out = community_kick(&m, &partition(&[0, 0, 0]), KickMode::Gather, 1);
        assert_eq!(out, m);
    }

    #[test]
    fn separate_coincident_communities_split_on_x() {
        let m = mapping_of(&[(2, 1), (2, 3), (1, 2), (3, 2)], 6, 6);
        let out = community_kick(&m, &partition(&[0, 0, 1, 1]), KickMode::Separate, 1);
        assert_eq!(out.get(0), Some(Cell::new(3, 1)));
        assert_eq!(out.get(2), Some(Cell::new(0, 2)));
    }

    #[test]
    fn gather_pulls_clusters_together() {
        let m = mapping_of(&[(0, 0), (1, 0), (6, 0), (7, 0)], 8, 1);
        let out = community_kick(&m, &partition(&[0, 0, 0, 0]), KickMode::Gather, 3);
        let gap = |m: &GridMapping| {
            let c = |a: usize, b: usize| (m.get(a).unwrap().x + m.get(b).unwrap().x) as f64 / 2.0;
            c(2, 3) - c(0, 1)
        };
        assert!(gap(&out) < gap(&m));
    }

    fn toy_circuit(n: usize, pairs: &[(usize, usize)]) -> Circuit {
        let mut c = crate::protocol::build_module(1).unwrap();
        c.qubits.truncate(n);
        c.aliases.clear();
        c.modules.clear();
        c.gates = pairs
            .iter()
            .map(|&(a, b)| crate::protocol::Gate::new(crate::GateKind::CNOT, vec![a, b], 1, Some(0)))
            .collect();
        c
    }

    #[test]
    fn optimal_pair_unchanged() {
        let c = toy_circuit(2, &[(0, 1)]);
        let m = mapping_of(&[(1, 1), (2, 1)], 4, 3);
        let (out, _) = anneal(&m, &c, &ForceParams::default()).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn untangles_an_x() {
        let c = toy_circuit(4, &[(0, 1), (2, 3)]);
        let m = mapping_of(&[(1, 1), (3, 3), (1, 3), (3, 1)], 5, 5);
        let g = InteractionGraph::from_circuit(&c);
        assert_eq!(crossing_count(&m, &g).unwrap(), 1);
        let (out, _) = anneal(&m, &c, &ForceParams::default()).unwrap();
        assert_eq!(crossing_count(&out, &g).unwrap(), 0);
    }

    #[test]
    fn greedy_monotone_and_deterministic() {
        let c = crate::protocol::build_module(2).unwrap();
        let m = crate::layout::random_mapping(&c, 7, 6, 5).unwrap();
        let g = InteractionGraph::from_circuit(&c);
        let params = ForceParams { max_iters: 8, ..ForceParams::default() };
        let (a, sa) = anneal(&m, &c, &params).unwrap();
        let (b, _) = anneal(&m, &c, &params).unwrap();
        assert_eq!(a, b);
        let w = CostWeights { w_len: 1.0, w_space: 1.0, w_cross: 2.0 * crate::layout::edge_length(&m, &g).unwrap() };
        assert!(cost(&a, &g, w).unwrap() <= cost(&m, &g, w).unwrap() + 1e-9);
        assert!((sa.final_cost - cost(&a, &g, w).unwrap()).abs() < 1e-6);
        a.check_total(&c).unwrap();
    }

    #[test]
    fn repulsion_counter_is_quadratic() {
        let c = crate::protocol::build_module(2).unwrap();
        let m = crate::layout::linear_mapping(&c);
        let g = InteractionGraph::from_circuit(&c);
        let e = g.edges.len() as u64;
        let params = ForceParams { max_iters: 3, max_kicks: 0, ..ForceParams::default() };
        let (_, stats) = anneal(&m, &c, &params).unwrap();
        assert_eq!(stats.repulsion_pairs, stats.iterations as u64 * e * (e - 1) / 2);
    }
}
