//! Gate-level IR for distillation circuits and its line-oriented text form.
//!
//! Text format, one item per line:
//!
//! ```text
//! circuit k=2 levels=1
//! qubit 0 raw round=1 module=0 index=0
//! alias 5 anc round=2 module=0 index=3
//! wire 0 3 1 0 7
//! H 13 # round=1 module=0
//! CNOT 4 40 # round=2 module=1 perm
//! BARRIER 61 0 1 2 # round=1
//! ```
//!
//! `qubit` lines declare the registry (first identity of every qubit id),
//! `alias` lines record additional identities of reused qubits and `wire`
//! lines list `boundary src_module src_port dst_module dst_slot`.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type QubitId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QubitRole {
    RawInput,
    Ancilla,
    Output,
    BarrierControl,
}

impl QubitRole {
    fn tag(self) -> &'static str {
        match self {
            QubitRole::RawInput => "raw",
            QubitRole::Ancilla => "anc",
            QubitRole::Output => "out",
            QubitRole::BarrierControl => "ctl",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        Some(match tag {
            "raw" => QubitRole::RawInput,
            "anc" => QubitRole::Ancilla,
            "out" => QubitRole::Output,
            "ctl" => QubitRole::BarrierControl,
            _ => return None,
        })
    }
}

/// One identity of a qubit. `port_index` is the index within its role
/// (raw slot, ancilla index or output port); rounds count from 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QubitRef {
    pub id: QubitId,
    pub role: QubitRole,
    pub round: usize,
    pub module_index: usize,
    pub port_index: usize,
}

impl QubitRef {
    pub fn slot(&self) -> SlotKey {
        SlotKey {
            round: self.round,
            module: self.module_index,
            role: self.role,
            index: self.port_index,
        }
    }
}

/// Logical position of a qubit inside the factory, independent of the id
/// that ends up holding it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotKey {
    pub round: usize,
    pub module: usize,
    pub role: QubitRole,
    pub index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateKind {
    Init,
    H,
    CNOT,
    CXX,
    InjectT,
    InjectTdag,
    MeasX,
    Barrier,
}

impl GateKind {
    pub fn name(self) -> &'static str {
        match self {
            GateKind::Init => "INIT",
            GateKind::H => "H",
            GateKind::CNOT => "CNOT",
            GateKind::CXX => "CXX",
            GateKind::InjectT => "INJECTT",
            GateKind::InjectTdag => "INJECTTDAG",
            GateKind::MeasX => "MEASX",
            GateKind::Barrier => "BARRIER",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "INIT" => GateKind::Init,
            "H" => GateKind::H,
            "CNOT" => GateKind::CNOT,
            "CXX" => GateKind::CXX,
            "INJECTT" => GateKind::InjectT,
            "INJECTTDAG" => GateKind::InjectTdag,
            "MEASX" => GateKind::MeasX,
            "BARRIER" => GateKind::Barrier,
            _ => return None,
        })
    }

    pub fn is_single_qubit(self) -> bool {
        matches!(self, GateKind::Init | GateKind::H | GateKind::MeasX)
    }

    pub fn is_injection(self) -> bool {
        matches!(self, GateKind::InjectT | GateKind::InjectTdag)
    }

    /// Gates that are realised as a braid between two or more tiles.
    pub fn is_braid(self) -> bool {
        matches!(
            self,
            GateKind::CNOT | GateKind::CXX | GateKind::InjectT | GateKind::InjectTdag
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gate {
    pub kind: GateKind,
    pub operands: Vec<QubitId>,
    pub round: usize,
    pub module: Option<usize>,
    /// Inter-round state transfer from a previous-round output port.
    pub permutation: bool,
}

impl Gate {
    pub fn new(kind: GateKind, operands: Vec<QubitId>, round: usize, module: Option<usize>) -> Self {
        Gate { kind, operands, round, module, permutation: false }
    }
}

/// Source port to destination input slot for one permutation edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PortLink {
    pub src_module: usize,
    pub src_port: usize,
    pub dst_module: usize,
    pub dst_slot: usize,
}

/// Qubit ids holding one module's raw/input slots, ancillas and outputs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleQubits {
    pub raw: Vec<QubitId>,
    pub anc: Vec<QubitId>,
    pub out: Vec<QubitId>,
}

impl ModuleQubits {
    pub fn all(&self) -> impl Iterator<Item = QubitId> + '_ {
        self.raw.iter().chain(&self.anc).chain(&self.out).copied()
    }

    pub fn len(&self) -> usize {
        self.raw.len() + self.anc.len() + self.out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, role: QubitRole, index: usize) -> Option<QubitId> {
        match role {
            QubitRole::RawInput => self.raw.get(index).copied(),
            QubitRole::Ancilla => self.anc.get(index).copied(),
            QubitRole::Output => self.out.get(index).copied(),
            QubitRole::BarrierControl => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    pub capacity_k: usize,
    pub levels: usize,
    /// Registry indexed by id; each entry is the qubit's first identity.
    pub qubits: Vec<QubitRef>,
    /// Later identities of reused qubits.
    pub aliases: Vec<QubitRef>,
    pub gates: Vec<Gate>,
    /// Gate indices of the barriers, one per round boundary.
    pub round_boundaries: Vec<usize>,
    /// `port_wiring[b]` feeds round `b + 2` from round `b + 1`.
    pub port_wiring: Vec<Vec<PortLink>>,
    /// `modules[r - 1][m]`: qubits of module `m` in round `r`.
    pub modules: Vec<Vec<ModuleQubits>>,
}

impl Circuit {
    pub fn num_qubits(&self) -> usize {
        self.qubits.len()
    }

    pub fn qubit(&self, id: QubitId) -> &QubitRef {
        &self.qubits[id]
    }

    /// Every qubit that needs a tile (barrier controls are scheduling-only).
    pub fn data_qubits(&self) -> impl Iterator<Item = QubitId> + '_ {
        self.qubits
            .iter()
            .filter(|q| q.role != QubitRole::BarrierControl)
            .map(|q| q.id)
    }

    pub fn num_data_qubits(&self) -> usize {
        self.data_qubits().count()
    }

    pub fn count_role(&self, role: QubitRole) -> usize {
        self.qubits.iter().filter(|q| q.role == role).count()
    }

    /// Raw magic states injected from outside the factory (round-1 inputs).
    pub fn injected_inputs(&self) -> usize {
        self.modules.first().map_or(0, |ms| ms.iter().map(|m| m.raw.len()).sum())
    }

    /// Distilled states leaving the last round.
    pub fn final_outputs(&self) -> usize {
        self.modules.last().map_or(0, |ms| ms.iter().map(|m| m.out.len()).sum())
    }

    pub fn modules_in_round(&self, round: usize) -> usize {
        self.modules.get(round.wrapping_sub(1)).map_or(0, |m| m.len())
    }

    /// All identities (registry plus aliases) in id order.
    pub fn identities(&self) -> impl Iterator<Item = &QubitRef> {
        self.qubits.iter().chain(&self.aliases)
    }

    /// Structural checks on operands, registry and wiring.
    pub fn validate(&self) -> Result<()> {
        let n = self.qubits.len();
        for (i, q) in self.qubits.iter().enumerate() {
            if q.id != i {
                return Err(Error::InvalidCircuit(format!("registry entry {i} has id {}", q.id)));
            }
        }
        for (gi, g) in self.gates.iter().enumerate() {
            if let Some(&bad) = g.operands.iter().find(|&&q| q >= n) {
                return Err(Error::InvalidCircuit(format!("gate {gi} uses unknown qubit {bad}")));
            }
            let distinct: HashSet<_> = g.operands.iter().collect();
            if distinct.len() != g.operands.len() {
                return Err(Error::InvalidCircuit(format!("gate {gi} repeats an operand")));
            }
            let ok = match g.kind {
                GateKind::CNOT | GateKind::InjectT | GateKind::InjectTdag => g.operands.len() == 2,
                GateKind::CXX => g.operands.len() >= 2,
                GateKind::Init | GateKind::H | GateKind::MeasX => g.operands.len() == 1,
                GateKind::Barrier => {
                    !g.operands.is_empty()
                        && self.qubits[g.operands[0]].role == QubitRole::BarrierControl
                }
            };
            if !ok {
                return Err(Error::InvalidCircuit(format!(
                    "gate {gi} ({}) has an illegal operand list",
                    g.kind.name()
                )));
            }
        }
        for &b in &self.round_boundaries {
            if self.gates.get(b).map(|g| g.kind) != Some(GateKind::Barrier) {
                return Err(Error::InvalidCircuit(format!("boundary {b} is not a barrier")));
            }
        }
        for (b, links) in self.port_wiring.iter().enumerate() {
            let mut pairs = HashSet::new();
            for l in links {
                if !pairs.insert((l.src_module, l.dst_module)) {
                    return Err(Error::InvalidCircuit(format!(
                        "boundary {b}: module {} feeds module {} twice",
                        l.src_module, l.dst_module
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "circuit k={} levels={}", self.capacity_k, self.levels);
        for (tag, list) in [("qubit", &self.qubits), ("alias", &self.aliases)] {
            for q in list {
                let _ = writeln!(
                    s,
                    "{tag} {} {} round={} module={} index={}",
                    q.id,
                    q.role.tag(),
                    q.round,
                    q.module_index,
                    q.port_index
                );
            }
        }
        for (b, links) in self.port_wiring.iter().enumerate() {
            for l in links {
                let _ = writeln!(
                    s,
                    "wire {b} {} {} {} {}",
                    l.src_module, l.src_port, l.dst_module, l.dst_slot
                );
            }
        }
        for g in &self.gates {
            s.push_str(g.kind.name());
            for q in &g.operands {
                let _ = write!(s, " {q}");
            }
            let _ = write!(s, " # round={}", g.round);
            if let Some(m) = g.module {
                let _ = write!(s, " module={m}");
            }
            if g.permutation {
                s.push_str(" perm");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Circuit> {
        let perr = |line: usize, msg: &str| Error::Parse { line, msg: msg.to_string() };
        let mut circuit = Circuit {
            capacity_k: 0,
            levels: 0,
            qubits: Vec::new(),
            aliases: Vec::new(),
            gates: Vec::new(),
            round_boundaries: Vec::new(),
            port_wiring: Vec::new(),
            modules: Vec::new(),
        };
        for (i, raw_line) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw_line.trim();
            if line.is_empty() {
                continue;
            }
            let (body, comment) = match line.split_once('#') {
                Some((b, c)) => (b.trim(), Some(c.trim())),
                None => (line, None),
            };
            let mut words = body.split_whitespace();
            let head = words.next().ok_or_else(|| perr(ln, "empty line"))?;
            match head {
                "circuit" => {
                    for w in words {
                        let (key, val) = parse_kv(w).ok_or_else(|| perr(ln, "bad key=value"))?;
                        match key {
                            "k" => circuit.capacity_k = val,
                            "levels" => circuit.levels = val,
                            _ => return Err(perr(ln, "unknown circuit attribute")),
                        }
                    }
                }
                "qubit" | "alias" => {
                    let id: usize = words
                        .next()
                        .and_then(|w| w.parse().ok())
                        .ok_or_else(|| perr(ln, "missing qubit id"))?;
                    let role = words
                        .next()
                        .and_then(QubitRole::from_tag)
                        .ok_or_else(|| perr(ln, "bad role"))?;
                    let (mut round, mut module, mut index) = (0, 0, 0);
                    for w in words {
                        let (key, val) = parse_kv(w).ok_or_else(|| perr(ln, "bad key=value"))?;
                        match key {
                            "round" => round = val,
                            "module" => module = val,
                            "index" => index = val,
                            _ => return Err(perr(ln, "unknown qubit attribute")),
                        }
                    }
                    let q = QubitRef { id, role, round, module_index: module, port_index: index };
                    if head == "qubit" {
                        if id != circuit.qubits.len() {
                            return Err(perr(ln, "qubit ids must be declared in order"));
                        }
                        circuit.qubits.push(q);
                    } else {
                        circuit.aliases.push(q);
                    }
                }
                "wire" => {
                    let v: Vec<usize> = words
                        .map(|w| w.parse().map_err(|_| perr(ln, "bad wire field")))
                        .collect::<Result<_>>()?;
                    if v.len() != 5 {
                        return Err(perr(ln, "wire needs 5 fields"));
                    }
                    while circuit.port_wiring.len() <= v[0] {
                        circuit.port_wiring.push(Vec::new());
                    }
                    circuit.port_wiring[v[0]].push(PortLink {
                        src_module: v[1],
                        src_port: v[2],
                        dst_module: v[3],
                        dst_slot: v[4],
                    });
                }
                name => {
                    let kind = GateKind::from_name(name).ok_or_else(|| perr(ln, "unknown gate kind"))?;
                    let operands: Vec<QubitId> = words
                        .map(|w| w.parse().map_err(|_| perr(ln, "bad operand")))
                        .collect::<Result<_>>()?;
                    let mut gate = Gate::new(kind, operands, 0, None);
                    for w in comment.unwrap_or("").split_whitespace() {
                        if w == "perm" {
                            gate.permutation = true;
                            continue;
                        }
                        let (key, val) = parse_kv(w).ok_or_else(|| perr(ln, "bad annotation"))?;
                        match key {
                            "round" => gate.round = val,
                            "module" => gate.module = Some(val),
                            _ => return Err(perr(ln, "unknown annotation")),
                        }
                    }
                    if kind == GateKind::Barrier {
                        circuit.round_boundaries.push(circuit.gates.len());
                    }
                    circuit.gates.push(gate);
                }
            }
        }
        circuit.modules = rebuild_modules(&circuit);
        circuit.validate()?;
        Ok(circuit)
    }
}

fn parse_kv(word: &str) -> Option<(&str, usize)> {
    let (k, v) = word.split_once('=')?;
    Some((k, v.parse().ok()?))
}

/// Reconstructs the per-module tables from registry and alias identities.
pub(crate) fn rebuild_modules(c: &Circuit) -> Vec<Vec<ModuleQubits>> {
    let mut modules: Vec<Vec<ModuleQubits>> = Vec::new();
    for q in c.identities() {
        if q.role == QubitRole::BarrierControl || q.round == 0 {
            continue;
        }
        while modules.len() < q.round {
            modules.push(Vec::new());
        }
        let round = &mut modules[q.round - 1];
        while round.len() <= q.module_index {
            round.push(ModuleQubits::default());
        }
        let m = &mut round[q.module_index];
        let list = match q.role {
            QubitRole::RawInput => &mut m.raw,
            QubitRole::Ancilla => &mut m.anc,
            QubitRole::Output => &mut m.out,
            QubitRole::BarrierControl => unreachable!(),
        };
        while list.len() <= q.port_index {
            list.push(usize::MAX);
        }
        list[q.port_index] = q.id;
    }
    modules
}
