//! Per-byte shadow-map oracle.
//!
//! Replays the monitor's mutation stream into its own entry list and a
//! byte-granular ownership map, then re-derives every detector verdict
//! by brute force over that map. Diverging bookkeeping (bounds, flush
//! selection, lookup priority) shows up as a mirror or verdict mismatch.

use std::collections::HashMap;

use vrtsim_core::machine::{classify, EventKind, Machine, Segment, StepRecord, REG_FP, REG_SP};
use vrtsim_core::monitor::{MutationKind, VrtMutation};
use vrtsim_core::vrt::{EntryKind, Vrt};
use vrtsim_core::Opcode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct OracleEntry {
    id: usize,
    base: u32,
    bound: u32,
    kind: EntryKind,
    bit: bool,
}

impl OracleEntry {
    fn end(&self) -> u32 {
        self.base + self.bound
    }
}

#[derive(Default)]
pub struct ShadowOracle {
    entries: Vec<OracleEntry>,
    bytes: HashMap<u32, usize>,
    next_id: usize,
    consumed: usize,
}

impl ShadowOracle {
    pub fn new() -> Self {
        Self::default()
    }

    /// Consumes any new mutations from the monitor's log.
    pub fn sync(&mut self, mutations: &[VrtMutation]) {
        let pending: Vec<VrtMutation> = mutations[self.consumed..].to_vec();
        self.consumed = mutations.len();
        for m in pending {
            self.apply(&m);
        }
    }

    fn paint(&mut self, id: usize, base: u32, bound: u32) {
        for addr in base..base + bound {
            self.bytes.insert(addr, id);
        }
    }

    fn unpaint_owned(&mut self, id: usize, base: u32, bound: u32) {
        for addr in base..base + bound {
            if self.bytes.get(&addr) == Some(&id) {
                self.bytes.remove(&addr);
            }
        }
    }

    fn top_stack_bit(&self) -> Option<bool> {
        self.entries
            .iter()
            .rev()
            .find(|e| e.kind == EntryKind::Stack)
            .map(|e| e.bit)
    }

    fn apply(&mut self, m: &VrtMutation) {
        match m.kind {
            MutationKind::PushStack { base, bound, bit } => {
                let id = self.next_id;
                self.next_id += 1;
                self.entries.push(OracleEntry { id, base, bound, kind: EntryKind::Stack, bit });
                self.paint(id, base, bound);
            }
            MutationKind::PushHeap { base, bound } => {
                let id = self.next_id;
                self.next_id += 1;
                self.entries
                    .push(OracleEntry { id, base, bound, kind: EntryKind::Heap, bit: false });
                self.paint(id, base, bound);
            }
            MutationKind::UpdateBound { base, bound } => {
                let bit = self.top_stack_bit().expect("update with no stack entries");
                let entry = self
                    .entries
                    .iter_mut()
                    .rev()
                    .filter(|e| e.kind == EntryKind::Stack)
                    .take_while(|e| e.bit == bit)
                    .find(|e| e.base == base)
                    .expect("update target in top run");
                let (id, old) = (entry.id, entry.bound);
                entry.bound = bound;
                if bound < old {
                    self.unpaint_owned(id, base + bound, old - bound);
                } else {
                    self.paint(id, base + old, bound - old);
                }
            }
            MutationKind::Flush { count } => {
                let bit = self.top_stack_bit().expect("flush with no stack entries");
                let mut victims = Vec::new();
                for (i, e) in self.entries.iter().enumerate().rev() {
                    if e.kind != EntryKind::Stack {
                        continue;
                    }
                    if e.bit != bit {
                        break;
                    }
                    victims.push(i);
                }
                assert_eq!(victims.len(), count, "flush count disagrees with oracle run");
                for i in victims {
                    let e = self.entries.remove(i);
                    self.unpaint_owned(e.id, e.base, e.bound);
                }
            }
            MutationKind::DeleteHeap { base } => {
                let pos = self
                    .entries
                    .iter()
                    .position(|e| e.kind == EntryKind::Heap && e.base == base)
                    .expect("delete of unknown heap entry");
                let e = self.entries.remove(pos);
                self.unpaint_owned(e.id, e.base, e.bound);
            }
            MutationKind::ReplaceHeap { old_base, new_base, bound } => {
                let entry = self
                    .entries
                    .iter_mut()
                    .find(|e| e.kind == EntryKind::Heap && e.base == old_base)
                    .expect("replace of unknown heap entry");
                let (id, old_bound) = (entry.id, entry.bound);
                entry.base = new_base;
                entry.bound = bound;
                self.unpaint_owned(id, old_base, old_bound);
                self.paint(id, new_base, bound);
            }
        }
    }

    /// The replayed table must equal the real one entry for entry.
    pub fn assert_mirror(&self, vrt: &Vrt) {
        let real: Vec<(u32, u32, EntryKind, bool)> = vrt
            .entries()
            .iter()
            .map(|e| (e.base, e.bound, e.kind, e.associated))
            .collect();
        let mine: Vec<(u32, u32, EntryKind, bool)> =
            self.entries.iter().map(|e| (e.base, e.bound, e.kind, e.bit)).collect();
        assert_eq!(mine, real, "oracle table mirror diverged");
    }

    fn find(&self, addr: u32) -> Option<&OracleEntry> {
        let id = self.bytes.get(&addr)?;
        self.entries.iter().find(|e| e.id == *id)
    }

    fn find_closed(&self, addr: u32) -> Option<&OracleEntry> {
        self.find(addr)
            .or_else(|| self.entries.iter().rev().find(|e| e.end() == addr))
    }

    fn owns_range(&self, entry: &OracleEntry, addr: u32, width: u32) -> bool {
        (addr..addr + width).all(|a| self.bytes.get(&a) == Some(&entry.id))
    }

    /// Brute-force verdict for one event: `Some((violation, addr))` when
    /// the event is subject to a check, `None` otherwise. Mirrors the
    /// detector's rules with map lookups in place of table search.
    pub fn verdict(
        &self,
        record: &StepRecord,
        kind: &EventKind,
        machine: &Machine,
    ) -> Option<(bool, u32)> {
        match *kind {
            EventKind::EffectiveAddress { base_reg, base_value, addr, width, .. } => {
                Some((self.check_access(base_reg, base_value, addr, width as u32, machine), addr))
            }
            EventKind::RegWrite { reg, value }
                if matches!(record.instr.opcode, Opcode::Addu | Opcode::Addiu)
                    && reg == arith_dest(record)
                    && !matches!(reg, 0 | REG_SP | REG_FP | 31) =>
            {
                Some((self.check_arith(record, value), value))
            }
            _ => None,
        }
    }

    fn check_access(
        &self,
        base_reg: u8,
        base_value: u32,
        addr: u32,
        width: u32,
        machine: &Machine,
    ) -> bool {
        match classify(addr) {
            Some(Segment::Stack) | Some(Segment::Heap) => {}
            _ => return false,
        }
        if base_reg == REG_SP {
            return false;
        }
        if base_reg == REG_FP {
            let bit = self.top_stack_bit();
            let entry = self
                .entries
                .iter()
                .rev()
                .filter(|e| e.kind == EntryKind::Stack)
                .take_while(|e| Some(e.bit) == bit)
                .filter(|e| e.base <= addr)
                .max_by_key(|e| e.base);
            return !entry.is_some_and(|e| self.owns_range(e, addr, width));
        }
        if let Some(entry) = self.find_closed(base_value) {
            return !self.owns_range(entry, addr, width);
        }
        classify(addr) == Some(Segment::Heap)
            && machine.live_block_containing(addr).is_none()
            && machine.dead_block_containing(addr).is_some()
    }

    fn check_arith(&self, record: &StepRecord, result: u32) -> bool {
        let sources: &[u32] = match record.instr.opcode {
            Opcode::Addu => &[record.rs_value, record.rt_value],
            _ => &[record.rs_value],
        };
        let Some(entry) = sources.iter().find_map(|v| self.find_closed(*v)) else {
            return false;
        };
        !(result >= entry.base && result <= entry.end())
    }
}

fn arith_dest(record: &StepRecord) -> u8 {
    match record.instr.opcode {
        Opcode::Addu => record.instr.rd,
        _ => record.instr.rt,
    }
}
