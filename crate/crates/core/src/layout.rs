//! Grid placements, the three congestion metrics and the baseline mappings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::igraph::InteractionGraph;
use crate::protocol::{self, Circuit, FactoryChoices, FactoryConfig, QubitId, QubitRole, ReusePlan, ReusePolicy, SlotKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }

    pub fn dist(self, other: Cell) -> f64 {
        let dx = self.x as f64 - other.x as f64;
        let dy = self.y as f64 - other.y as f64;
        (dx * dx + dy * dy).sqrt()
    }

    pub fn manhattan(self, other: Cell) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

/// Injective placement of qubits on a `width x height` tile grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridMapping {
    pub width: usize,
    pub height: usize,
    placement: Vec<Option<Cell>>,
    occupant: Vec<Option<QubitId>>,
    /// Waypoints for directed braids `(source, destination)`.
    pub midpoints: BTreeMap<(QubitId, QubitId), Cell>,
}

impl GridMapping {
    pub fn new(width: usize, height: usize, num_qubits: usize) -> Self {
        GridMapping {
            width,
            height,
            placement: vec![None; num_qubits],
            occupant: vec![None; width * height],
            midpoints: BTreeMap::new(),
        }
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn num_qubits(&self) -> usize {
        self.placement.len()
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn get(&self, q: QubitId) -> Option<Cell> {
        self.placement.get(q).copied().flatten()
    }

    pub fn cell(&self, q: QubitId) -> Result<Cell> {
        self.get(q).ok_or(Error::Unmapped(q))
    }

    pub fn occupant(&self, c: Cell) -> Option<QubitId> {
        if self.in_bounds(c) {
            self.occupant[c.y * self.width + c.x]
        } else {
            None
        }
    }

    pub fn is_free(&self, c: Cell) -> bool {
        self.in_bounds(c) && self.occupant[c.y * self.width + c.x].is_none()
    }

    pub fn placed(&self) -> impl Iterator<Item = (QubitId, Cell)> + '_ {
        self.placement.iter().enumerate().filter_map(|(q, c)| c.map(|c| (q, c)))
    }

    /// Places or moves `q`; the target cell must be free.
    pub fn place(&mut self, q: QubitId, c: Cell) -> Result<()> {
        if !self.in_bounds(c) {
            return Err(Error::InvalidMapping(format!(
                "cell ({}, {}) outside {}x{} grid",
                c.x, c.y, self.width, self.height
            )));
        }
        if q >= self.placement.len() {
            self.placement.resize(q + 1, None);
        }
        match self.occupant[c.y * self.width + c.x] {
            Some(o) if o == q => return Ok(()),
            Some(o) => {
                return Err(Error::InvalidMapping(format!(
                    "cell ({}, {}) already holds qubit {o}",
                    c.x, c.y
                )))
            }
            None => {}
        }
        if let Some(old) = self.placement[q] {
            self.occupant[old.y * self.width + old.x] = None;
        }
        self.placement[q] = Some(c);
        self.occupant[c.y * self.width + c.x] = Some(q);
        Ok(())
    }

    pub fn unplace(&mut self, q: QubitId) {
        if let Some(Some(old)) = self.placement.get(q).copied() {
            self.occupant[old.y * self.width + old.x] = None;
            self.placement[q] = None;
        }
    }

    pub fn swap(&mut self, a: QubitId, b: QubitId) {
        let (ca, cb) = (self.placement[a], self.placement[b]);
        self.placement[a] = cb;
        self.placement[b] = ca;
        if let Some(c) = cb {
            self.occupant[c.y * self.width + c.x] = Some(a);
        }
        if let Some(c) = ca {
            self.occupant[c.y * self.width + c.x] = Some(b);
        }
    }

    /// Checks that every data qubit of `circuit` is placed.
    pub fn check_total(&self, circuit: &Circuit) -> Result<()> {
        for q in circuit.data_qubits() {
            if self.get(q).is_none() {
                return Err(Error::Unmapped(q));
            }
        }
        for (&(u, v), c) in &self.midpoints {
            if !self.in_bounds(*c) {
                return Err(Error::InvalidMapping(format!("midpoint of ({u}, {v}) out of bounds")));
            }
        }
        Ok(())
    }

    /// Same placement shifted by `(dx, dy)` on a grid grown to fit.
    pub fn translated(&self, dx: usize, dy: usize) -> GridMapping {
        let mut m = GridMapping::new(self.width + dx, self.height + dy, self.num_qubits());
        for (q, c) in self.placed() {
            m.place(q, Cell::new(c.x + dx, c.y + dy)).expect("translation keeps injectivity");
        }
        m.midpoints = self
            .midpoints
            .iter()
            .map(|(&k, c)| (k, Cell::new(c.x + dx, c.y + dy)))
            .collect();
        m
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "grid {} {}", self.width, self.height);
        for (q, c) in self.placed() {
            let _ = writeln!(s, "{q} {} {}", c.x, c.y);
        }
        for (&(u, v), c) in &self.midpoints {
            let _ = writeln!(s, "mid {u} {v} {} {}", c.x, c.y);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<GridMapping> {
        let mut mapping: Option<GridMapping> = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let perr = |msg: &str| Error::Parse { line: i + 1, msg: msg.to_string() };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let nums = |from: usize| -> Result<Vec<usize>> {
                fields[from..]
                    .iter()
                    .map(|f| f.parse::<usize>().map_err(|_| perr(&format!("bad number `{f}`"))))
                    .collect()
            };
            match fields[0] {
                "grid" => {
                    let n = nums(1)?;
                    if n.len() != 2 || mapping.is_some() {
                        return Err(perr("expected a single `grid W H` header"));
                    }
                    mapping = Some(GridMapping::new(n[0], n[1], 0));
                }
                "mid" => {
                    let n = nums(1)?;
                    let m = mapping.as_mut().ok_or_else(|| perr("missing grid header"))?;
                    if n.len() != 4 {
                        return Err(perr("expected `mid u v x y`"));
                    }
                    let c = Cell::new(n[2], n[3]);
                    if !m.in_bounds(c) {
                        return Err(perr("midpoint out of bounds"));
                    }
                    m.midpoints.insert((n[0], n[1]), c);
                }
                _ => {
                    let n = nums(0)?;
                    let m = mapping.as_mut().ok_or_else(|| perr("missing grid header"))?;
                    if n.len() != 3 {
                        return Err(perr("expected `qubit x y`"));
                    }
                    m.place(n[0], Cell::new(n[1], n[2])).map_err(|e| perr(&e.to_string()))?;
                }
            }
        }
        mapping.ok_or(Error::Parse { line: 0, msg: "empty mapping".into() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub avg_edge_length: f64,
    /// `None` with fewer than two edges.
    pub avg_edge_spacing: Option<f64>,
    pub crossing_count: u64,
}

pub fn metrics(mapping: &GridMapping, graph: &InteractionGraph) -> Result<MetricReport> {
    Ok(MetricReport {
        avg_edge_length: edge_length(mapping, graph)?,
        avg_edge_spacing: match edge_spacing(mapping, graph) {
            Ok(s) => Some(s),
            Err(Error::TooFewEdges(_)) => None,
            Err(e) => return Err(e),
        },
        crossing_count: crossing_count(mapping, graph)?,
    })
}

fn endpoints(mapping: &GridMapping, graph: &InteractionGraph) -> Result<Vec<(Cell, Cell)>> {
    graph.edges.iter().map(|e| Ok((mapping.cell(e.u)?, mapping.cell(e.v)?))).collect()
}

/// Multiplicity-weighted mean Euclidean edge length; 0 for an edgeless graph.
pub fn edge_length(mapping: &GridMapping, graph: &InteractionGraph) -> Result<f64> {
    let ends = endpoints(mapping, graph)?;
    let (mut sum, mut w) = (0.0, 0.0);
    for (e, (a, b)) in graph.edges.iter().zip(&ends) {
        sum += e.multiplicity as f64 * a.dist(*b);
        w += e.multiplicity as f64;
    }
    Ok(if w > 0.0 { sum / w } else { 0.0 })
}

/// Mean distance between midpoints over distinct edge pairs, each pair
/// weighted by the product of multiplicities.
pub fn edge_spacing(mapping: &GridMapping, graph: &InteractionGraph) -> Result<f64> {
    if graph.edges.len() < 2 {
        return Err(Error::TooFewEdges(graph.edges.len()));
    }
    let mids: Vec<(f64, f64, f64)> = endpoints(mapping, graph)?
        .iter()
        .zip(&graph.edges)
        .map(|((a, b), e)| {
            ((a.x + b.x) as f64 / 2.0, (a.y + b.y) as f64 / 2.0, e.multiplicity as f64)
        })
        .collect();
    let (mut sum, mut wsum) = (0.0, 0.0);
    for i in 0..mids.len() {
        let (xi, yi, wi) = mids[i];
        for &(xj, yj, wj) in &mids[i + 1..] {
            let w = wi * wj;
            sum += w * ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt();
            wsum += w;
        }
    }
    Ok(sum / wsum)
}

fn orient(a: Cell, b: Cell, c: Cell) -> i64 {
    let (ax, ay) = (a.x as i64, a.y as i64);
    let (bx, by) = (b.x as i64, b.y as i64);
    let (cx, cy) = (c.x as i64, c.y as i64);
    ((bx - ax) * (cy - ay) - (by - ay) * (cx - ax)).signum()
}

fn on_segment(a: Cell, b: Cell, p: Cell) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection, collinear overlap included.
pub fn segments_intersect(p1: Cell, p2: Cell, q1: Cell, q2: Cell) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if d1 * d2 < 0 && d3 * d4 < 0 {
        return true;
    }
    (d1 == 0 && on_segment(q1, q2, p1))
        || (d2 == 0 && on_segment(q1, q2, p2))
        || (d3 == 0 && on_segment(p1, p2, q1))
        || (d4 == 0 && on_segment(p1, p2, q2))
}

/// Pairs of edges whose straight chords intersect, ignoring pairs that share
/// an endpoint qubit.
pub fn crossing_count(mapping: &GridMapping, graph: &InteractionGraph) -> Result<u64> {
    let ends = endpoints(mapping, graph)?;
    let boxes: Vec<[usize; 4]> = ends
        .iter()
        .map(|(a, b)| [a.x.min(b.x), a.x.max(b.x), a.y.min(b.y), a.y.max(b.y)])
        .collect();
    let mut order: Vec<usize> = (0..ends.len()).collect();
    order.sort_by_key(|&i| boxes[i][0]);
    let mut count = 0u64;
    for (oi, &i) in order.iter().enumerate() {
        let (ei, bi) = (&graph.edges[i], boxes[i]);
        for &j in &order[oi + 1..] {
            let bj = boxes[j];
            if bj[0] > bi[1] {
                break;
            }
            if bj[2] > bi[3] || bi[2] > bj[3] {
                continue;
            }
            let ej = &graph.edges[j];
            if ei.u == ej.u || ei.u == ej.v || ei.v == ej.u || ei.v == ej.v {
                continue;
            }
            if segments_intersect(ends[i].0, ends[i].1, ends[j].0, ends[j].1) {
                count += 1;
            }
        }
    }
    Ok(count)
}

/// Near-square grid with `slack` times as many cells as qubits.
pub fn compact_dims(n: usize, slack: f64) -> (usize, usize) {
    let cells = ((n.max(1) as f64) * slack.max(1.0)).ceil() as usize;
    let w = (cells as f64).sqrt().ceil() as usize;
    let h = cells.div_ceil(w);
    (w, h)
}

/// Offset of a module slot inside the linear module template, which is
/// `2k + 5` columns by 3 rows.
pub fn module_template(k: usize, role: QubitRole, index: usize) -> Option<Cell> {
    match role {
        QubitRole::Ancilla => Some(Cell::new(index, 1)),
        QubitRole::Output => Some(Cell::new(k + 5 + index, 1)),
        QubitRole::RawInput if index < 2 * k + 8 => {
            let anc = index / 2 + 1;
            Some(Cell::new(anc, if index.is_multiple_of(2) { 0 } else { 2 }))
        }
        QubitRole::RawInput => Some(Cell::new(k + 5 + (index - 2 * k - 8), 0)),
        QubitRole::BarrierControl => None,
    }
}

/// Columns of module fragments per row for a near-square tiling.
pub fn tiling_columns(modules: usize, pitch_w: usize, pitch_h: usize) -> usize {
    let cols = ((modules as f64) * pitch_h as f64 / pitch_w as f64).sqrt().round() as usize;
    cols.clamp(1, modules.max(1))
}

/// Hand-style layout: each module is a row of ancillas flanked by the raw
/// states they consume, outputs at the end; modules tiled left to right,
/// rounds top to bottom; one spare tile around the bounding box.
pub fn linear_mapping(circuit: &Circuit) -> GridMapping {
    let k = circuit.capacity_k;
    let (pw, ph) = (2 * k + 6, 4);
    let total: usize = circuit.modules.iter().map(|r| r.len()).sum();
    let cols = tiling_columns(total, pw, ph);
    let mut pos: Vec<Option<(usize, usize)>> = vec![None; circuit.num_qubits()];
    let mut row0 = 0;
    for round in &circuit.modules {
        let mut used_rows = 0;
        for (m, mq) in round.iter().enumerate() {
            let (ox, oy) = ((m % cols) * pw, row0 + (m / cols) * ph);
            used_rows = used_rows.max((m / cols + 1) * ph);
            let slots = mq
                .raw
                .iter()
                .enumerate()
                .map(|(i, &q)| (QubitRole::RawInput, i, q))
                .chain(mq.anc.iter().enumerate().map(|(i, &q)| (QubitRole::Ancilla, i, q)))
                .chain(mq.out.iter().enumerate().map(|(i, &q)| (QubitRole::Output, i, q)));
            for (role, i, q) in slots {
                if pos[q].is_some() {
                    continue;
                }
                if let Some(c) = module_template(k, role, i) {
                    pos[q] = Some((ox + c.x, oy + c.y));
                }
            }
        }
        row0 += used_rows;
    }
    // Qubits outside any module table fall back to a row below.
    let mut extra_x = 0;
    for q in circuit.data_qubits() {
        if pos[q].is_none() {
            pos[q] = Some((extra_x, row0));
            extra_x += 1;
        }
    }
    let placed: Vec<(usize, usize)> = pos.iter().flatten().copied().collect();
    let (minx, miny) = (
        placed.iter().map(|p| p.0).min().unwrap_or(0),
        placed.iter().map(|p| p.1).min().unwrap_or(0),
    );
    let (maxx, maxy) = (
        placed.iter().map(|p| p.0).max().unwrap_or(0),
        placed.iter().map(|p| p.1).max().unwrap_or(0),
    );
    let mut mapping = GridMapping::new(maxx - minx + 3, maxy - miny + 3, circuit.num_qubits());
    for (q, p) in pos.iter().enumerate() {
        if let Some((x, y)) = p {
            mapping
                .place(q, Cell::new(x - minx + 1, y - miny + 1))
                .expect("template slots are distinct");
        }
    }
    mapping
}

/// Linear layout of a factory that reuses measured tiles. Each next-round
/// module keeps the template of the previous-round module with the same index
/// and every slot takes the nearest measured tile still free, in slot order.
/// Slots left without a tile go to fresh template rows below.
pub fn linear_reuse_factory(config: &FactoryConfig) -> Result<(Circuit, GridMapping)> {
    let k = config.capacity_k;
    let plain = protocol::build_factory(&config.clone().with_reuse(ReusePolicy::NoReuse))?;
    let base = linear_mapping(&plain);
    let mut at: BTreeMap<SlotKey, Cell> = BTreeMap::new();
    for q in plain.identities().filter(|q| q.round == 1 && q.role != QubitRole::BarrierControl) {
        at.insert(q.slot(), base.cell(q.id)?);
    }
    let mut plan = ReusePlan::new();
    for r in 1..config.levels_l {
        let prev = protocol::modules_in_round(k, config.levels_l, r)?;
        let next = protocol::modules_in_round(k, config.levels_l, r + 1)?;
        let mut pool: Vec<(Cell, SlotKey)> = at
            .iter()
            .filter(|(s, _)| s.round == r && matches!(s.role, QubitRole::RawInput | QubitRole::Ancilla))
            .map(|(&s, &c)| (c, s))
            .collect();
        pool.sort();
        let mut used = vec![false; pool.len()];
        let bottom = at.values().map(|c| c.y).max().unwrap_or(0) + 2;
        let mut fresh_row = bottom;
        for d in 0..next {
            let origin = at
                .iter()
                .filter(|(s, _)| s.round == r && s.module == d % prev)
                .fold(None, |acc: Option<(usize, usize)>, (_, c)| {
                    Some(acc.map_or((c.x, c.y), |(x, y)| (x.min(c.x), y.min(c.y))))
                })
                .unwrap_or((0, 0));
            let mut fresh = false;
            for (role, n) in [
                (QubitRole::RawInput, protocol::raw_per_module(k)),
                (QubitRole::Ancilla, protocol::ancilla_per_module(k)),
                (QubitRole::Output, k),
            ] {
                for index in 0..n {
                    let slot = SlotKey { round: r + 1, module: d, role, index };
                    let t = module_template(k, role, index).unwrap_or(Cell::new(0, 0));
                    let want = Cell::new(origin.0 + t.x, origin.1 + t.y);
                    let best = (0..pool.len()).filter(|&i| !used[i]).min_by_key(|&i| (pool[i].0.manhattan(want), i));
                    match best {
                        Some(i) => {
                            used[i] = true;
                            plan.insert(slot, pool[i].1);
                            at.insert(slot, pool[i].0);
                        }
                        None => {
                            fresh = true;
                            at.insert(slot, Cell::new(origin.0 + t.x, fresh_row + t.y));
                        }
                    }
                }
            }
            if fresh {
                fresh_row += 4;
            }
        }
    }
    let choices = FactoryChoices { reuse: Some(plan), ports: None };
    let circuit = protocol::build_factory_with(&config.clone().with_reuse(ReusePolicy::Reuse), &choices)?;
    let cells: Vec<(QubitId, Cell)> = circuit
        .qubits
        .iter()
        .filter(|q| q.role != QubitRole::BarrierControl)
        .map(|q| (q.id, at[&q.slot()]))
        .collect();
    let (minx, miny) = cells.iter().fold((usize::MAX, usize::MAX), |(x, y), (_, c)| (x.min(c.x), y.min(c.y)));
    let (maxx, maxy) = cells.iter().fold((0, 0), |(x, y), (_, c)| (x.max(c.x), y.max(c.y)));
    let mut mapping = GridMapping::new(maxx - minx + 3, maxy - miny + 3, circuit.num_qubits());
    for (q, c) in cells {
        mapping.place(q, Cell::new(c.x - minx + 1, c.y - miny + 1))?;
    }
    Ok((circuit, mapping))
}

/// Uniformly random injective placement of the data qubits.
pub fn random_mapping(circuit: &Circuit, width: usize, height: usize, seed: u64) -> Result<GridMapping> {
    let qubits: Vec<QubitId> = circuit.data_qubits().collect();
    if width * height < qubits.len() {
        return Err(Error::GridTooSmall { width, height, needed: qubits.len() });
    }
    let mut cells: Vec<Cell> = (0..height).flat_map(|y| (0..width).map(move |x| Cell::new(x, y))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (chosen, _) = cells.partial_shuffle(&mut rng, qubits.len());
    let mut mapping = GridMapping::new(width, height, circuit.num_qubits());
    for (&q, &c) in qubits.iter().zip(chosen.iter()) {
        mapping.place(q, c)?;
    }
    Ok(mapping)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{build_factory, build_module, FactoryConfig};

    fn mapping_of(cells: &[(usize, usize)], w: usize, h: usize) -> GridMapping {
        let mut m = GridMapping::new(w, h, cells.len());
        for (q, &(x, y)) in cells.iter().enumerate() {
            m.place(q, Cell::new(x, y)).unwrap();
        }
        m
    }

    #[test]
    fn three_four_five() {
        let m = mapping_of(&[(0, 0), (3, 4)], 5, 5);
        let g = InteractionGraph::from_edges(2, &[(0, 1, 1)]);
        assert_eq!(edge_length(&m, &g).unwrap(), 5.0);
    }

    #[test]
    fn k4_on_two_by_two() {
        let m = mapping_of(&[(0, 0), (1, 0), (0, 1), (1, 1)], 2, 2);
        let pairs: Vec<_> = (0..4).flat_map(|a| (a + 1..4).map(move |b| (a, b, 1))).collect();
        let g = InteractionGraph::from_edges(4, &pairs);
        let expect = (4.0 + 2.0 * 2f64.sqrt()) / 6.0;
        assert!((edge_length(&m, &g).unwrap() - expect).abs() < 1e-12);
        // The two diagonals cross; side pairs never touch or share endpoints.
        assert_eq!(crossing_count(&m, &g).unwrap(), 1);
    }

    #[test]
    fn spacing_cases() {
        let m = mapping_of(&[(0, 0), (1, 0), (0, 1), (1, 1)], 2, 2);
        let g = InteractionGraph::from_edges(4, &[(0, 1, 1), (2, 3, 1)]);
        assert_eq!(edge_spacing(&m, &g).unwrap(), 1.0);
        let g = InteractionGraph::from_edges(4, &[(0, 3, 1), (1, 2, 1)]);
        assert_eq!(edge_spacing(&m, &g).unwrap(), 0.0);
        let g = InteractionGraph::from_edges(4, &[(0, 1, 1)]);
        assert!(matches!(edge_spacing(&m, &g), Err(Error::TooFewEdges(1))));
    }

    #[test]
    fn spacing_three_edges_by_hand() {
        let m = mapping_of(&[(0, 0), (2, 0), (0, 2), (2, 2), (4, 0), (4, 4)], 5, 5);
        let g = InteractionGraph::from_edges(6, &[(0, 1, 1), (2, 3, 1), (4, 5, 1)]);
        // Midpoints (1,0), (1,2), (4,2).
        let expect = (2.0 + 13f64.sqrt() + 3.0) / 3.0;
        assert!((edge_spacing(&m, &g).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn crossing_cases() {
        let m = mapping_of(&[(0, 0), (2, 2), (0, 2), (2, 0)], 3, 3);
        let g = InteractionGraph::from_edges(4, &[(0, 1, 1), (2, 3, 1)]);
        assert_eq!(crossing_count(&m, &g).unwrap(), 1);
        let m = mapping_of(&[(0, 0), (3, 0), (0, 1), (3, 1)], 4, 2);
        assert_eq!(crossing_count(&m, &InteractionGraph::from_edges(4, &[(0, 1, 1), (2, 3, 1)])).unwrap(), 0);
        // Collinear overlap counts.
        let m = mapping_of(&[(0, 0), (2, 0), (1, 0), (3, 0)], 4, 1);
        assert_eq!(crossing_count(&m, &InteractionGraph::from_edges(4, &[(0, 1, 1), (2, 3, 1)])).unwrap(), 1);
        // Shared endpoint never counts.
        let m = mapping_of(&[(0, 0), (2, 0), (1, 0)], 3, 1);
        assert_eq!(crossing_count(&m, &InteractionGraph::from_edges(3, &[(0, 1, 1), (0, 2, 1)])).unwrap(), 0);
    }

    #[test]
    fn single_module_line_band() {
        let c = build_module(2).unwrap();
        let m = linear_mapping(&c);
        m.check_total(&c).unwrap();
        assert!(m.height <= 5);
        let ys: Vec<usize> = m.placed().map(|(_, c)| c.y).collect();
        assert_eq!(ys.iter().max().unwrap() - ys.iter().min().unwrap(), 2);
        assert_eq!(m.placed().count(), 23);
    }

    #[test]
    fn single_qubit_gets_margin() {
        let mut c = build_module(1).unwrap();
        c.qubits.truncate(1);
        c.modules = vec![vec![crate::protocol::ModuleQubits { raw: vec![0], anc: vec![], out: vec![] }]];
        c.gates.clear();
        let m = linear_mapping(&c);
        assert_eq!((m.width, m.height), (3, 3));
        assert_eq!(m.get(0), Some(Cell::new(1, 1)));
    }

    #[test]
    fn modules_tile_left_to_right() {
        let c = build_factory(&FactoryConfig::new(2, 2)).unwrap();
        let m = linear_mapping(&c);
        m.check_total(&c).unwrap();
        let xs = |mi: usize| -> Vec<usize> { c.modules[0][mi].all().map(|q| m.get(q).unwrap().x).collect() };
        assert!(xs(1).iter().min() > xs(0).iter().max());
    }

    #[test]
    fn random_is_seeded_and_total() {
        let c = build_module(2).unwrap();
        let a = random_mapping(&c, 6, 5, 3).unwrap();
        assert_eq!(a, random_mapping(&c, 6, 5, 3).unwrap());
        assert_ne!(a, random_mapping(&c, 6, 5, 4).unwrap());
        assert!(random_mapping(&c, 4, 5, 3).is_err());
    }

    #[test]
    fn random_fills_exact_grid() {
        let c = build_module(1).unwrap();
        let m = random_mapping(&c, 6, 3, 9).unwrap();
        let mut cells: Vec<Cell> = m.placed().map(|(_, c)| c).collect();
        cells.sort();
        cells.dedup();
        assert_eq!(cells.len(), 18);
    }

    #[test]
    fn random_cells_are_uniform() {
        let c = build_module(1).unwrap();
        let (w, h, n) = (6, 4, 18);
        let trials = 1000;
        let mut hits = vec![0u32; w * h];
        for s in 0..trials {
            for (_, cell) in random_mapping(&c, w, h, s).unwrap().placed() {
                hits[cell.y * w + cell.x] += 1;
            }
        }
        let p = n as f64 / (w * h) as f64;
        let mean = trials as f64 * p;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for &x in &hits {
            assert!((x as f64 - mean).abs() <= 5.0 * sigma, "{x} vs {mean}");
        }
    }

    #[test]
    fn text_round_trip() {
        let c = build_module(2).unwrap();
        let mut m = linear_mapping(&c);
        m.midpoints.insert((3, 4), Cell::new(0, 0));
        let back = GridMapping::from_text(&m.to_text()).unwrap();
        assert_eq!(back.to_text(), m.to_text());
        assert!(GridMapping::from_text("grid 2 2\n0 0 0\n1 0 0\n").is_err());
    }

    #[test]
    fn compact_dims_cover() {
        for n in 1..200 {
            let (w, h) = compact_dims(n, 1.2);
            assert!(w * h >= n);
            assert!(w.abs_diff(h) <= 1);
        }
    }
}
