//! Interaction graphs, ASAP timestep layers, critical path and community
//! structure of a circuit.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::protocol::{Circuit, GateKind, QubitId, QubitRole};

/// Braids spent on one magic-state injection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum InjectionCost {
    /// Two braids, the expected cost of the probabilistic injection circuit.
    #[default]
    Expected,
    /// One braid.
    Optimistic,
}

impl InjectionCost {
    pub fn braids(self) -> u32 {
        match self {
            InjectionCost::Expected => 2,
            InjectionCost::Optimistic => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: QubitId,
    pub v: QubitId,
    pub multiplicity: u32,
    /// ASAP layer of every gate inducing the edge.
    pub timesteps: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionGraph {
    /// Size of the qubit id space the graph indexes into.
    pub num_qubits: usize,
    pub vertices: Vec<QubitId>,
    /// Edges with `u < v`, sorted.
    pub edges: Vec<Edge>,
}

impl InteractionGraph {
    pub fn from_circuit(circuit: &Circuit) -> Self {
        Self::from_circuit_with(circuit, InjectionCost::default())
    }

    pub fn from_circuit_with(circuit: &Circuit, injection: InjectionCost) -> Self {
        let layering = Layering::compute(circuit, injection.braids());
        let mut acc: BTreeMap<(QubitId, QubitId), (u32, Vec<usize>)> = BTreeMap::new();
        let mut add = |a: QubitId, b: QubitId, mult: u32, t: usize| {
            let key = (a.min(b), a.max(b));
            let e = acc.entry(key).or_default();
            e.0 += mult;
            e.1.push(t);
        };
        for (gi, g) in circuit.gates.iter().enumerate() {
            let t = layering.gate_layer[gi];
            match g.kind {
                GateKind::CNOT => add(g.operands[0], g.operands[1], 1, t),
                GateKind::InjectT | GateKind::InjectTdag => {
                    add(g.operands[0], g.operands[1], injection.braids(), t)
                }
                GateKind::CXX => {
                    for &target in &g.operands[1..] {
                        add(g.operands[0], target, 1, t);
                    }
                }
                _ => {}
            }
        }
        InteractionGraph {
            num_qubits: circuit.num_qubits(),
            vertices: circuit.data_qubits().collect(),
            edges: acc
                .into_iter()
                .map(|((u, v), (multiplicity, timesteps))| Edge { u, v, multiplicity, timesteps })
                .collect(),
        }
    }

    /// Graph over explicit weighted pairs; used for synthetic instances.
    pub fn from_edges(num_qubits: usize, pairs: &[(QubitId, QubitId, u32)]) -> Self {
        let mut acc: BTreeMap<(QubitId, QubitId), u32> = BTreeMap::new();
        for &(a, b, w) in pairs {
            assert_ne!(a, b, "self-loop on {a}");
            *acc.entry((a.min(b), a.max(b))).or_default() += w;
        }
        InteractionGraph {
            num_qubits,
            vertices: (0..num_qubits).collect(),
            edges: acc
                .into_iter()
                .map(|((u, v), multiplicity)| Edge { u, v, multiplicity, timesteps: Vec::new() })
                .collect(),
        }
    }

    /// Neighbour lists indexed by qubit id.
    pub fn adjacency(&self) -> Vec<Vec<(QubitId, u32)>> {
        let mut adj = vec![Vec::new(); self.num_qubits];
        for e in &self.edges {
            adj[e.u].push((e.v, e.multiplicity));
            adj[e.v].push((e.u, e.multiplicity));
        }
        adj
    }

    /// Subgraph induced by `keep`, in the same id space.
    pub fn induced(&self, keep: &[QubitId]) -> Self {
        let mut mask = vec![false; self.num_qubits];
        for &q in keep {
            mask[q] = true;
        }
        InteractionGraph {
            num_qubits: self.num_qubits,
            vertices: keep.to_vec(),
            edges: self.edges.iter().filter(|e| mask[e.u] && mask[e.v]).cloned().collect(),
        }
    }

    /// `edge u v multiplicity t1,t2,...` lines.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# u v multiplicity timesteps");
        for e in &self.edges {
            let ts: Vec<String> = e.timesteps.iter().map(|t| t.to_string()).collect();
            let _ = writeln!(s, "edge {} {} {} {}", e.u, e.v, e.multiplicity, ts.join(","));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestepLayer {
    pub layer_index: usize,
    /// Interactions active in this layer. Multi-target CNOTs appear as the
    /// chain control, target_1, target_2, ...
    pub edges: Vec<(QubitId, QubitId)>,
}

/// ASAP schedule of a circuit where injections span several layers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layering {
    /// First layer of each gate (1-based).
    pub gate_start: Vec<usize>,
    /// Last layer of each gate (1-based).
    pub gate_layer: Vec<usize>,
    pub depth: usize,
}

impl Layering {
    pub fn compute(circuit: &Circuit, injection_braids: u32) -> Self {
        let mut last = vec![0usize; circuit.num_qubits()];
        let mut floor = 0usize;
        let mut gate_start = Vec::with_capacity(circuit.gates.len());
        let mut gate_layer = Vec::with_capacity(circuit.gates.len());
        let mut depth = 0;
        for g in &circuit.gates {
            let start = 1 + g.operands.iter().map(|&q| last[q]).max().unwrap_or(0).max(floor);
            let dur = if g.kind.is_injection() { injection_braids.max(1) as usize } else { 1 };
            let end = start + dur - 1;
            for &q in &g.operands {
                last[q] = end;
            }
            if g.kind == GateKind::Barrier {
                floor = end;
            }
            depth = depth.max(end);
            gate_start.push(start);
            gate_layer.push(end);
        }
        Layering { gate_start, gate_layer, depth }
    }

    pub fn layers(&self, circuit: &Circuit) -> Vec<TimestepLayer> {
        let mut layers: Vec<TimestepLayer> =
            (1..=self.depth).map(|i| TimestepLayer { layer_index: i, edges: Vec::new() }).collect();
        for (gi, g) in circuit.gates.iter().enumerate() {
            if !g.kind.is_braid() {
                continue;
            }
            for t in self.gate_start[gi]..=self.gate_layer[gi] {
                let layer = &mut layers[t - 1];
                for w in g.operands.windows(2) {
                    layer.edges.push((w[0], w[1]));
                }
            }
        }
        layers
    }
}

/// ASAP timestep layers with the default (expected) injection cost.
pub fn layers(circuit: &Circuit) -> Vec<TimestepLayer> {
    Layering::compute(circuit, InjectionCost::default().braids()).layers(circuit)
}

/// Length of the longest dependency chain, a lower bound on latency.
pub fn critical_path(circuit: &Circuit) -> usize {
    critical_path_with(circuit, InjectionCost::default())
}

pub fn critical_path_with(circuit: &Circuit, injection: InjectionCost) -> usize {
    Layering::compute(circuit, injection.braids()).depth
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommunityPartition {
    /// Community of each qubit id; `None` for ids outside the graph.
    pub labels: Vec<Option<usize>>,
    pub count: usize,
}

impl CommunityPartition {
    pub fn members(&self) -> Vec<Vec<QubitId>> {
        let mut out = vec![Vec::new(); self.count];
        for (q, l) in self.labels.iter().enumerate() {
            if let Some(l) = l {
                out[*l].push(q);
            }
        }
        out
    }
}

/// Module membership of every data qubit, keyed by its first identity.
pub fn module_hint(circuit: &Circuit) -> Vec<Option<usize>> {
    let mut ids: HashMap<(usize, usize), usize> = HashMap::new();
    circuit
        .qubits
        .iter()
        .map(|q| {
            if q.role == QubitRole::BarrierControl {
                return None;
            }
            let next = ids.len();
            Some(*ids.entry((q.round, q.module_index)).or_insert(next))
        })
        .collect()
}

/// Community structure: the structural hint when given, otherwise seeded
/// label propagation.
pub fn communities(graph: &InteractionGraph, hint: Option<&[Option<usize>]>, seed: u64) -> CommunityPartition {
    let raw: Vec<Option<usize>> = match hint {
        Some(h) => {
            let mut labels = vec![None; graph.num_qubits];
            for &v in &graph.vertices {
                labels[v] = h.get(v).copied().flatten();
            }
            // Unlabelled vertices become singletons.
            let mut next = h.iter().flatten().max().map_or(0, |m| m + 1);
            for &v in &graph.vertices {
                if labels[v].is_none() {
                    labels[v] = Some(next);
                    next += 1;
                }
            }
            labels
        }
        None => label_propagation(graph, seed),
    };
    // Relabel contiguously in order of first appearance by qubit id.
    let mut remap: HashMap<usize, usize> = HashMap::new();
    let labels: Vec<Option<usize>> = raw
        .iter()
        .map(|l| {
            l.map(|l| {
                let next = remap.len();
                *remap.entry(l).or_insert(next)
            })
        })
        .collect();
    CommunityPartition { labels, count: remap.len() }
}

fn label_propagation(graph: &InteractionGraph, seed: u64) -> Vec<Option<usize>> {
    let adj = graph.adjacency();
    let mut labels: Vec<Option<usize>> = vec![None; graph.num_qubits];
    for &v in &graph.vertices {
        labels[v] = Some(v);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = graph.vertices.clone();
    for _ in 0..100 {
        order.shuffle(&mut rng);
        let mut changed = false;
        for &v in &order {
            if adj[v].is_empty() {
                continue;
            }
            let mut score: BTreeMap<usize, u64> = BTreeMap::new();
            for &(u, w) in &adj[v] {
                if let Some(l) = labels[u] {
                    *score.entry(l).or_default() += w as u64;
                }
            }
            let best = score.values().copied().max().unwrap_or(0);
            let current = labels[v].unwrap_or(v);
            let choice = if score.get(&current) == Some(&best) {
                current
            } else {
                // BTreeMap iteration gives the smallest tied label.
                *score.iter().find(|(_, &s)| s == best).map(|(l, _)| l).unwrap_or(&current)
            };
            if choice != current {
                labels[v] = Some(choice);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    labels
}
