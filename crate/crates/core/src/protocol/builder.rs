//! Circuit synthesis for Bravyi-Haah modules and block-code factories.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::circuit::{rebuild_modules, Circuit, Gate, GateKind, ModuleQubits, PortLink, QubitId, QubitRef, QubitRole, SlotKey};
use super::{FactoryConfig, ReusePolicy};
use crate::error::{Error, Result};

/// Raw input states consumed by one module: `3k + 8`.
pub fn raw_per_module(k: usize) -> usize {
    3 * k + 8
}

/// Ancillas of one module: `k + 5`.
pub fn ancilla_per_module(k: usize) -> usize {
    k + 5
}

/// Data-carrying qubits of one module: `5k + 13`.
pub fn qubits_per_module(k: usize) -> usize {
    5 * k + 13
}

/// Modules in round `r` (1-based) of an `levels`-level factory:
/// `(3k+8)^(levels-r) * k^(r-1)`.
pub fn modules_in_round(k: usize, levels: usize, r: usize) -> Result<usize> {
    if r == 0 || r > levels {
        return Err(Error::InvalidConfig(format!("round {r} outside 1..={levels}")));
    }
    let overflow = || Error::InvalidConfig(format!("factory k={k} levels={levels} is too large"));
    let a = checked_pow(raw_per_module(k), levels - r).ok_or_else(overflow)?;
    let b = checked_pow(k, r - 1).ok_or_else(overflow)?;
    a.checked_mul(b).ok_or_else(overflow)
}

fn checked_pow(base: usize, exp: usize) -> Option<usize> {
    (0..exp).try_fold(1usize, |acc, _| acc.checked_mul(base))
}

/// Reuse of measured qubits across a round boundary: each entry maps a
/// next-round slot to the previous-round (raw or ancilla) slot whose qubit it
/// takes over. Slots missing from the plan get fresh qubits.
pub type ReusePlan = BTreeMap<SlotKey, SlotKey>;

/// Mapping-dependent choices the generator cannot make on its own.
#[derive(Clone, Debug, Default)]
pub struct FactoryChoices {
    /// Explicit reuse plan; `None` selects the sequential default when the
    /// config asks for reuse.
    pub reuse: Option<ReusePlan>,
    /// Explicit port wiring per boundary; `None` selects the canonical one.
    pub ports: Option<Vec<Vec<PortLink>>>,
}

/// Single-level Bravyi-Haah module producing `k` output states.
pub fn build_module(k: usize) -> Result<Circuit> {
    if k == 0 {
        return Err(Error::InvalidConfig("capacity k must be at least 1".into()));
    }
    let config = FactoryConfig { capacity_k: k, levels_l: 1, ..FactoryConfig::default() };
    build_with(&config, &FactoryChoices::default(), false)
}

/// Multi-level block-code factory for a validated config.
pub fn build_factory(config: &FactoryConfig) -> Result<Circuit> {
    build_factory_with(config, &FactoryChoices::default())
}

pub fn build_factory_with(config: &FactoryConfig, choices: &FactoryChoices) -> Result<Circuit> {
    build_with(config, choices, true)
}

/// Canonical wiring from round `r` into round `r + 1`: round-`r` modules are
/// grouped in runs of `3k+8`; the `t`-th module of group `g` sends port `p`
/// to slot `t` of next-round module `g*k + p`.
pub fn canonical_wiring(k: usize, levels: usize, r: usize) -> Result<Vec<PortLink>> {
    let src = modules_in_round(k, levels, r)?;
    let group = raw_per_module(k);
    let mut links = Vec::with_capacity(src * k);
    for m in 0..src {
        let (g, t) = (m / group, m % group);
        for p in 0..k {
            links.push(PortLink { src_module: m, src_port: p, dst_module: g * k + p, dst_slot: t });
        }
    }
    links.sort_by_key(|l| (l.dst_module, l.dst_slot));
    Ok(links)
}

/// Next-round slots in allocation order: module, then raw, ancilla, output.
fn round_slots(k: usize, round: usize, modules: usize) -> impl Iterator<Item = SlotKey> {
    (0..modules).flat_map(move |m| {
        let raw = (0..raw_per_module(k)).map(move |i| (QubitRole::RawInput, i));
        let anc = (0..ancilla_per_module(k)).map(move |i| (QubitRole::Ancilla, i));
        let out = (0..k).map(move |i| (QubitRole::Output, i));
        raw.chain(anc).chain(out)
            .map(move |(role, index)| SlotKey { round, module: m, role, index })
    })
}

/// Sequential reuse: next-round slots take measured qubits of the previous
/// round in module order, ancillas before raw slots.
pub fn default_reuse_plan(k: usize, levels: usize, r: usize) -> Result<ReusePlan> {
    let prev = modules_in_round(k, levels, r)?;
    let next = modules_in_round(k, levels, r + 1)?;
    let pool = (0..prev).flat_map(|m| {
        let anc = (0..ancilla_per_module(k)).map(move |i| (m, QubitRole::Ancilla, i));
        let raw = (0..raw_per_module(k)).map(move |i| (m, QubitRole::RawInput, i));
        anc.chain(raw)
    });
    Ok(round_slots(k, r + 1, next)
        .zip(pool)
        .map(|(slot, (m, role, index))| (slot, SlotKey { round: r, module: m, role, index }))
        .collect())
}

fn validate_wiring(k: usize, levels: usize, b: usize, links: &[PortLink]) -> Result<()> {
    let r = b + 1;
    let canon = canonical_wiring(k, levels, r)?;
    let relation: BTreeSet<(usize, usize)> = canon.iter().map(|l| (l.src_module, l.dst_module)).collect();
    let mut pairs = BTreeSet::new();
    let mut ports = BTreeSet::new();
    let mut slots = BTreeSet::new();
    for l in links {
        if !relation.contains(&(l.src_module, l.dst_module)) {
            return Err(Error::InfeasibleWiring(format!(
                "boundary {b}: module {} is not wired to module {}",
                l.src_module, l.dst_module
            )));
        }
        if l.src_port >= k || l.dst_slot >= raw_per_module(k) {
            return Err(Error::InfeasibleWiring(format!("boundary {b}: port or slot out of range")));
        }
        if !pairs.insert((l.src_module, l.dst_module)) {
            return Err(Error::InfeasibleWiring(format!(
                "boundary {b}: module {} feeds module {} more than once",
                l.src_module, l.dst_module
            )));
        }
        if !ports.insert((l.src_module, l.src_port)) || !slots.insert((l.dst_module, l.dst_slot)) {
            return Err(Error::InfeasibleWiring(format!("boundary {b}: port or slot used twice")));
        }
    }
    if pairs.len() != relation.len() {
        return Err(Error::InfeasibleWiring(format!("boundary {b}: wiring is incomplete")));
    }
    Ok(())
}

fn build_with(config: &FactoryConfig, choices: &FactoryChoices, validate_config: bool) -> Result<Circuit> {
    if validate_config {
        config.validate()?;
    } else if config.capacity_k == 0 {
        return Err(Error::InvalidConfig("capacity k must be at least 1".into()));
    }
    let k = config.capacity_k;
    let levels = config.levels_l;
    let counts: Vec<usize> = (1..=levels).map(|r| modules_in_round(k, levels, r)).collect::<Result<_>>()?;

    let wiring: Vec<Vec<PortLink>> = match &choices.ports {
        Some(ports) => {
            if ports.len() != levels - 1 {
                return Err(Error::InfeasibleWiring(format!(
                    "expected {} boundaries, got {}",
                    levels - 1,
                    ports.len()
                )));
            }
            for (b, links) in ports.iter().enumerate() {
                validate_wiring(k, levels, b, links)?;
            }
            ports
                .iter()
                .map(|l| {
                    let mut l = l.clone();
                    l.sort_by_key(|p| (p.dst_module, p.dst_slot));
                    l
                })
                .collect()
        }
        None => (1..levels).map(|r| canonical_wiring(k, levels, r)).collect::<Result<_>>()?,
    };

    // Allocate ids round by round.
    let mut qubits: Vec<QubitRef> = Vec::new();
    let mut aliases: Vec<QubitRef> = Vec::new();
    let mut slot_ids: HashMap<SlotKey, QubitId> = HashMap::new();
    let mut reused_in_round: Vec<Vec<(QubitId, usize)>> = vec![Vec::new(); levels + 1];
    for r in 1..=levels {
        let plan = if r >= 2 && config.reuse_policy == ReusePolicy::Reuse {
            match &choices.reuse {
                Some(p) => Some(p.clone()),
                None => Some(default_reuse_plan(k, levels, r - 1)?),
            }
        } else {
            None
        };
        let mut taken: BTreeSet<QubitId> = BTreeSet::new();
        for slot in round_slots(k, r, counts[r - 1]) {
            let source = plan.as_ref().and_then(|p| p.get(&slot));
            let id = match source {
                Some(src) => {
                    if src.round + 1 != r || !matches!(src.role, QubitRole::RawInput | QubitRole::Ancilla) {
                        return Err(Error::InvalidConfig(format!(
                            "reuse plan maps {slot:?} onto non-measured slot {src:?}"
                        )));
                    }
                    let id = *slot_ids.get(src).ok_or_else(|| {
                        Error::InvalidConfig(format!("reuse plan references unknown slot {src:?}"))
                    })?;
                    if !taken.insert(id) {
                        return Err(Error::InvalidConfig(format!("reuse plan reuses qubit {id} twice")));
                    }
                    aliases.push(QubitRef {
                        id,
                        role: slot.role,
                        round: r,
                        module_index: slot.module,
                        port_index: slot.index,
                    });
                    reused_in_round[r].push((id, slot.module));
                    id
                }
                None => {
                    let id = qubits.len();
                    qubits.push(QubitRef {
                        id,
                        role: slot.role,
                        round: r,
                        module_index: slot.module,
                        port_index: slot.index,
                    });
                    id
                }
            };
            slot_ids.insert(slot, id);
        }
    }
    let data_ids: Vec<QubitId> = (0..qubits.len()).collect();
    let controls: Vec<QubitId> = (1..levels)
        .map(|r| {
            let id = qubits.len();
            qubits.push(QubitRef {
                id,
                role: QubitRole::BarrierControl,
                round: r,
                module_index: 0,
                port_index: r - 1,
            });
            id
        })
        .collect();

    let mut circuit = Circuit {
        capacity_k: k,
        levels,
        qubits,
        aliases,
        gates: Vec::new(),
        round_boundaries: Vec::new(),
        port_wiring: wiring,
        modules: Vec::new(),
    };
    circuit.modules = rebuild_modules(&circuit);

    let mut gates = Vec::new();
    for r in 1..=levels {
        if r >= 2 {
            let ctl = controls[r - 2];
            let mut ops = Vec::with_capacity(data_ids.len() + 1);
            ops.push(ctl);
            ops.extend(&data_ids);
            circuit.round_boundaries.push(gates.len());
            gates.push(Gate::new(GateKind::Barrier, ops, r - 1, None));
            for &(q, m) in &reused_in_round[r] {
                gates.push(Gate::new(GateKind::Init, vec![q], r, Some(m)));
            }
            for l in &circuit.port_wiring[r - 2] {
                let src = circuit.modules[r - 2][l.src_module].out[l.src_port];
                let dst = circuit.modules[r - 1][l.dst_module].raw[l.dst_slot];
                let mut g = Gate::new(GateKind::CNOT, vec![src, dst], r, Some(l.dst_module));
                g.permutation = true;
                gates.push(g);
            }
        }
        for (m, mq) in circuit.modules[r - 1].iter().enumerate() {
            emit_module_body(&mut gates, mq, k, r, m);
        }
    }
    circuit.gates = gates;
    circuit.validate()?;
    Ok(circuit)
}

/// Gate sequence of one module, in listing order with loops unrolled.
fn emit_module_body(gates: &mut Vec<Gate>, q: &ModuleQubits, k: usize, round: usize, module: usize) {
    let (raw, anc, out) = (&q.raw, &q.anc, &q.out);
    let mut push = |kind: GateKind, ops: Vec<QubitId>| gates.push(Gate::new(kind, ops, round, Some(module)));

    for &a in &anc[..3] {
        push(GateKind::H, vec![a]);
    }
    for &o in out.iter() {
        push(GateKind::H, vec![o]);
    }
    push(GateKind::CNOT, vec![anc[1], anc[3]]);
    push(GateKind::CNOT, vec![anc[2], anc[4]]);
    push(GateKind::CXX, anc[..=k].to_vec());
    // tail
    for i in 0..k {
        push(GateKind::CNOT, vec![out[i], anc[5 + i]]);
        push(GateKind::InjectT, vec![raw[2 * k + 8 + i], anc[5 + i]]);
        push(GateKind::CNOT, vec![anc[5 + i], anc[4 + i]]);
        push(GateKind::CNOT, vec![anc[3 + i], anc[5 + i]]);
        push(GateKind::CNOT, vec![anc[4 + i], anc[3 + i]]);
    }
    for i in 1..k + 5 {
        push(GateKind::InjectT, vec![raw[2 * i - 2], anc[i]]);
    }
    push(GateKind::CXX, anc[..k + 5].to_vec());
    for i in 1..k + 5 {
        push(GateKind::InjectTdag, vec![raw[2 * i - 1], anc[i]]);
    }
    for &a in anc.iter() {
        push(GateKind::MeasX, vec![a]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(q: &ModuleQubits, id: QubitId) -> String {
        for (tag, list) in [("r", &q.raw), ("a", &q.anc), ("o", &q.out)] {
            if let Some(i) = list.iter().position(|&x| x == id) {
                return format!("{tag}{i}");
            }
        }
        panic!("qubit {id} not in module");
    }

    #[test]
    fn k2_module_listing() {
        let c = build_module(2).unwrap();
        let q = &c.modules[0][0];
        let got: Vec<String> = c
            .gates
            .iter()
            .map(|g| {
                let ops: Vec<String> = g.operands.iter().map(|&id| label(q, id)).collect();
                format!("{} {}", g.kind.name(), ops.join(" "))
            })
            .collect();
        let want = [
            "H a0", "H a1", "H a2", "H o0", "H o1",
            "CNOT a1 a3", "CNOT a2 a4",
            "CXX a0 a1 a2",
            "CNOT o0 a5", "INJECTT r12 a5", "CNOT a5 a4", "CNOT a3 a5", "CNOT a4 a3",
            "CNOT o1 a6", "INJECTT r13 a6", "CNOT a6 a5", "CNOT a4 a6", "CNOT a5 a4",
            "INJECTT r0 a1", "INJECTT r2 a2", "INJECTT r4 a3", "INJECTT r6 a4", "INJECTT r8 a5", "INJECTT r10 a6",
            "CXX a0 a1 a2 a3 a4 a5 a6",
            "INJECTTDAG r1 a1", "INJECTTDAG r3 a2", "INJECTTDAG r5 a3", "INJECTTDAG r7 a4", "INJECTTDAG r9 a5", "INJECTTDAG r11 a6",
            "MEASX a0", "MEASX a1", "MEASX a2", "MEASX a3", "MEASX a4", "MEASX a5", "MEASX a6",
        ];
        assert_eq!(got, want);
    }

    #[test]
    fn module_registry_sizes() {
        for k in 1..=24 {
            let c = build_module(k).unwrap();
            assert_eq!(c.count_role(QubitRole::RawInput), 3 * k + 8);
            assert_eq!(c.count_role(QubitRole::Ancilla), k + 5);
            assert_eq!(c.count_role(QubitRole::Output), k);
            assert_eq!(c.num_data_qubits(), 5 * k + 13);
            assert_eq!(c.gates.len(), 9 * k + 20);
            // Every raw slot is consumed by exactly one injection.
            let mut used: Vec<QubitId> = c
                .gates
                .iter()
                .filter(|g| g.kind.is_injection())
                .map(|g| g.operands[0])
                .collect();
            used.sort();
            let mut raw = c.modules[0][0].raw.clone();
            raw.sort();
            assert_eq!(used, raw, "k={k}");
        }
    }

    #[test]
    fn block_recursion_counts() {
        for (k, l) in [(1, 2), (2, 2), (3, 2), (2, 3)] {
            let c = build_factory(&FactoryConfig::new(k, l)).unwrap();
            assert_eq!(c.injected_inputs(), (3 * k + 8).pow(l as u32));
            assert_eq!(c.final_outputs(), k.pow(l as u32));
            for r in 1..=l {
                assert_eq!(c.modules_in_round(r), (3 * k + 8).pow((l - r) as u32) * k.pow(r as u32 - 1));
            }
            assert_eq!(c.round_boundaries.len(), l - 1);
            assert_eq!(c.count_role(QubitRole::BarrierControl), l - 1);
        }
    }

    #[test]
    fn canonical_wiring_is_a_legal_permutation() {
        let (k, l) = (3, 2);
        let links = canonical_wiring(k, l, 1).unwrap();
        let ports: BTreeSet<_> = links.iter().map(|x| (x.src_module, x.src_port)).collect();
        let slots: BTreeSet<_> = links.iter().map(|x| (x.dst_module, x.dst_slot)).collect();
        let pairs: BTreeSet<_> = links.iter().map(|x| (x.src_module, x.dst_module)).collect();
        assert_eq!(ports.len(), 17 * 3);
        assert_eq!(slots.len(), 3 * 17);
        assert_eq!(pairs.len(), links.len());
        validate_wiring(k, l, 0, &links).unwrap();
    }

    #[test]
    fn illegal_wiring_rejected() {
        let config = FactoryConfig::new(2, 2);
        let mut links = canonical_wiring(2, 2, 1).unwrap();
        let (a, b) = (links[0], links[1]);
        // Same source module into the same destination twice.
        links[1] = PortLink { src_module: a.src_module, ..b };
        let choices = FactoryChoices { reuse: None, ports: Some(vec![links]) };
        assert!(matches!(build_factory_with(&config, &choices), Err(Error::InfeasibleWiring(_))));
        let choices = FactoryChoices { reuse: None, ports: Some(vec![]) };
        assert!(build_factory_with(&config, &choices).is_err());
    }

    #[test]
    fn barrier_precedes_next_round() {
        let c = build_factory(&FactoryConfig::new(2, 2)).unwrap();
        let b = c.round_boundaries[0];
        assert!(c.gates[..b].iter().all(|g| g.round == 1));
        assert!(c.gates[b + 1..].iter().all(|g| g.round == 2));
        assert_eq!(c.gates[b].operands.len(), c.num_qubits());
        let perms = c.gates.iter().filter(|g| g.permutation).count();
        assert_eq!(perms, 14 * 2);
    }

    #[test]
    fn reuse_takes_only_measured_qubits() {
        let (k, l) = (2, 2);
        let fresh = build_factory(&FactoryConfig::new(k, l)).unwrap();
        let c = build_factory(&FactoryConfig::new(k, l).with_reuse(ReusePolicy::Reuse)).unwrap();
        let next = modules_in_round(k, l, 2).unwrap() * qubits_per_module(k);
        assert_eq!(c.num_data_qubits() + next, fresh.num_data_qubits());
        for a in &c.aliases {
            let first = c.qubit(a.id);
            assert_eq!(first.round, 1);
            assert!(matches!(first.role, QubitRole::RawInput | QubitRole::Ancilla));
        }
        let ids: BTreeSet<_> = c.aliases.iter().map(|a| a.id).collect();
        assert_eq!(ids.len(), c.aliases.len());
        let inits = c.gates.iter().filter(|g| g.kind == GateKind::Init).count();
        assert_eq!(inits, c.aliases.len());
    }

    #[test]
    fn reuse_plan_rejects_outputs_and_repeats() {
        let config = FactoryConfig::new(2, 2).with_reuse(ReusePolicy::Reuse);
        let dst = SlotKey { round: 2, module: 0, role: QubitRole::RawInput, index: 0 };
        let out = SlotKey { round: 1, module: 0, role: QubitRole::Output, index: 0 };
        let plan = ReusePlan::from([(dst, out)]);
        let choices = FactoryChoices { reuse: Some(plan), ports: None };
        assert!(build_factory_with(&config, &choices).is_err());
        let anc = SlotKey { round: 1, module: 0, role: QubitRole::Ancilla, index: 0 };
        let dst2 = SlotKey { index: 1, ..dst };
        let plan = ReusePlan::from([(dst, anc), (dst2, anc)]);
        let choices = FactoryChoices { reuse: Some(plan), ports: None };
        assert!(build_factory_with(&config, &choices).is_err());
    }

    #[test]
    fn build_is_pure() {
        let config = FactoryConfig::new(3, 2).with_reuse(ReusePolicy::Reuse);
        assert_eq!(build_factory(&config).unwrap(), build_factory(&config).unwrap());
    }

    #[test]
    fn text_round_trip() {
        let c = build_factory(&FactoryConfig::new(2, 2).with_reuse(ReusePolicy::Reuse)).unwrap();
        assert_eq!(Circuit::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_empty_configs() {
        assert!(build_module(0).is_err());
        assert!(build_factory(&FactoryConfig::new(2, 0)).is_err());
        assert!(modules_in_round(2, 2, 3).is_err());
        assert!(modules_in_round(1000, 9, 1).is_err());
    }
}
