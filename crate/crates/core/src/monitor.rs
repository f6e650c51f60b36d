//! The extraction unit: watches the instruction stream for function
//! prologues, frame-pointer-relative variable accesses, and the
//! allocator's register conventions, and turns them into table records.
//!
//! Stack side: a recognized prologue ({sp decrement, saves of `$31`/`$30`
//! at sp-relative offsets, `fp <- sp`}) opens a frame. Inside it, every
//! load/store through `$30` and every `addiu rX,$30,imm` contributes a
//! candidate offset. Each new offset becomes a record whose bound runs to
//! the next higher offset, finalizing its predecessor's bound by
//! subtraction; the highest offset's bound runs to the saved-register
//! area until a later candidate supersedes it. Functions without the
//! pattern go unmonitored.
//!
//! Heap side: a call into an allocator intrinsic snapshots the argument
//! registers (`$4`, `$5`); the handler's completion event supplies the
//! return register and maps onto a heap record push, replace, or delete.

use crate::image::IntrinsicKind;
use crate::machine::{EventKind, Machine, StepRecord, REG_A0, REG_A1, REG_FP, REG_SP};
use crate::vrt::{Vrt, VrtEntry};
use std::collections::BTreeSet;
use std::fmt;

/// Per-function extraction state for one open frame.
#[derive(Debug, Clone)]
pub struct FrameContext {
    /// Value of `$30` for this frame.
    pub fp_value: u32,
    /// Bytes the prologue reserved (`addiu $29,$29,-N`).
    pub frame_size: u32,
    /// Lowest sp-relative offset at which `$31`/`$30` were saved; the
    /// upper boundary of the variable area.
    pub saved_area_offset: u32,
    candidates: BTreeSet<u32>,
    assoc_bit: Option<bool>,
    pushed: usize,
}

impl FrameContext {
    /// Distinct fp-relative offsets harvested so far, ascending.
    pub fn candidates(&self) -> impl Iterator<Item = u32> + '_ {
        self.candidates.iter().copied()
    }

    pub fn entries_pushed(&self) -> usize {
        self.pushed
    }
}

/// In-flight allocator call: argument registers captured at the call.
#[derive(Debug, Clone, Copy)]
pub struct PendingHeapCall {
    pub kind: IntrinsicKind,
    pub arg0: u32,
    pub arg1: u32,
    pub return_pc: u32,
}

#[derive(Debug, Clone)]
enum FrameSlot {
    /// Between a call and the point where the prologue pattern either
    /// completes or breaks.
    Scanning { frame_size: Option<u32>, min_save: Option<u32> },
    Open(FrameContext),
    Unmonitored,
}

/// One table mutation, kept for the diagnostic stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VrtMutation {
    pub pc: u32,
    pub kind: MutationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationKind {
    PushStack { base: u32, bound: u32, bit: bool },
    UpdateBound { base: u32, bound: u32 },
    Flush { count: usize },
    PushHeap { base: u32, bound: u32 },
    ReplaceHeap { old_base: u32, new_base: u32, bound: u32 },
    DeleteHeap { base: u32 },
}

impl fmt::Display for VrtMutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PC=0x{:08X} ", self.pc)?;
        match self.kind {
            MutationKind::PushStack { base, bound, .. } => {
                write!(f, "PUSH base=0x{base:08X} bound={bound}")
            }
            MutationKind::UpdateBound { base, bound } => {
                write!(f, "UPDATE base=0x{base:08X} bound={bound}")
            }
            MutationKind::Flush { count } => write!(f, "FLUSH count={count}"),
            MutationKind::PushHeap { base, bound } => {
                write!(f, "HEAP+ base=0x{base:08X} bound={bound}")
            }
            MutationKind::ReplaceHeap { old_base, new_base, bound } => {
                write!(f, "HEAP~ old=0x{old_base:08X} base=0x{new_base:08X} bound={bound}")
            }
            MutationKind::DeleteHeap { base } => write!(f, "HEAP- base=0x{base:08X}"),
        }
    }
}

pub struct Monitor {
    frames: Vec<FrameSlot>,
    pending_heap: Option<PendingHeapCall>,
    mutations: Vec<VrtMutation>,
    diagnostics: Vec<String>,
}

impl Default for Monitor {
    fn default() -> Self {
        Self::new()
    }
}

impl Monitor {
    pub fn new() -> Self {
        Monitor {
            // Program entry behaves like a call: expect main's prologue.
            frames: vec![FrameSlot::Scanning { frame_size: None, min_save: None }],
            pending_heap: None,
            mutations: Vec::new(),
            diagnostics: Vec::new(),
        }
    }

    /// The innermost open frame, if the executing function is monitored.
    pub fn current_frame(&self) -> Option<&FrameContext> {
        match self.frames.last() {
            Some(FrameSlot::Open(frame)) => Some(frame),
            _ => None,
        }
    }

    pub fn mutations(&self) -> &[VrtMutation] {
        &self.mutations
    }

    pub fn diagnostics(&self) -> &[String] {
        &self.diagnostics
    }

    /// Feeds one committed instruction and its events; applies the
    /// resulting table mutations to `vrt` in order.
    pub fn on_step(&mut self, record: &StepRecord, machine: &Machine, vrt: &mut Vrt) {
        self.observe_instruction(record, machine, vrt);
        for event in &record.events {
            self.observe_event(event.pc, &event.kind, machine, vrt);
        }
    }

    fn observe_instruction(&mut self, record: &StepRecord, machine: &Machine, vrt: &mut Vrt) {
        use crate::isa::Opcode;
        let Some(slot) = self.frames.last_mut() else { return };
        match slot {
            FrameSlot::Scanning { frame_size, min_save } => {
                let instr = &record.instr;
                match (frame_size.as_ref(), instr.opcode) {
                    (None, Opcode::Addiu)
                        if instr.rt == REG_SP && instr.rs == REG_SP && instr.imm < 0 =>
                    {
                        *frame_size = Some((-(instr.imm as i32)) as u32);
                    }
                    (Some(_), Opcode::Sw)
                        if instr.rs == REG_SP
                            && (instr.rt == 30 || instr.rt == 31)
                            && instr.imm >= 0 =>
                    {
                        let off = instr.imm as u32;
                        *min_save = Some(min_save.map_or(off, |m: u32| m.min(off)));
                    }
                    (Some(size), Opcode::Addu)
                        if instr.rd == REG_FP && instr.rs == 0 && instr.rt == REG_SP =>
                    {
                        let saved_area_offset = min_save.unwrap_or(*size).min(*size);
                        *slot = FrameSlot::Open(FrameContext {
                            fp_value: machine.reg(REG_SP),
                            frame_size: *size,
                            saved_area_offset,
                            candidates: BTreeSet::new(),
                            assoc_bit: None,
                            pushed: 0,
                        });
                    }
                    // Anything else breaks the pattern; the function runs
                    // unmonitored.
                    _ => *slot = FrameSlot::Unmonitored,
                }
            }
            FrameSlot::Open(_) => {
                if let Some(offset) = harvest_candidate_offset(record) {
                    self.record_candidate(record.pc, offset, vrt);
                }
            }
            FrameSlot::Unmonitored => {}
        }
    }

    fn record_candidate(&mut self, pc: u32, offset: u32, vrt: &mut Vrt) {
        let Some(FrameSlot::Open(frame)) = self.frames.last_mut() else { return };
        if offset >= frame.saved_area_offset || frame.candidates.contains(&offset) {
            return;
        }
        let bit = *frame.assoc_bit.get_or_insert_with(|| {
            vrt.top_stack_bit().is_some_and(|b| !b)
        });
        let predecessor = frame.candidates.range(..offset).next_back().copied();
        let successor = frame.candidates.range(offset + 1..).next().copied();
        frame.candidates.insert(offset);

        let bound = successor.unwrap_or(frame.saved_area_offset) - offset;
        let base = frame.fp_value.wrapping_add(offset);
        vrt.push(VrtEntry::stack(bit, base, bound));
        frame.pushed += 1;
        self.mutations.push(VrtMutation { pc, kind: MutationKind::PushStack { base, bound, bit } });

        if let Some(pred) = predecessor {
            let pred_base = frame.fp_value.wrapping_add(pred);
            let pred_bound = offset - pred;
            match vrt.update_bound(pred_base, pred_bound) {
                Ok(()) => self.mutations.push(VrtMutation {
                    pc,
                    kind: MutationKind::UpdateBound { base: pred_base, bound: pred_bound },
                }),
                Err(e) => self.diagnostics.push(format!("pc 0x{pc:08X}: {e}")),
            }
        }
    }

    fn observe_event(&mut self, pc: u32, kind: &EventKind, machine: &Machine, vrt: &mut Vrt) {
        match *kind {
            EventKind::Call { intrinsic: Some(kind), return_addr, .. } => {
                if self.pending_heap.is_some() {
                    self.diagnostics
                        .push(format!("pc 0x{pc:08X}: allocator call while one is pending"));
                }
                // The handler only writes $2, so the argument registers
                // still hold their call-time values.
                self.pending_heap = Some(PendingHeapCall {
                    kind,
                    arg0: machine.reg(REG_A0),
                    arg1: machine.reg(REG_A1),
                    return_pc: return_addr,
                });
            }
            EventKind::Call { intrinsic: None, .. } => {
                self.frames.push(FrameSlot::Scanning { frame_size: None, min_save: None });
            }
            EventKind::IntrinsicAlloc { .. }
            | EventKind::IntrinsicRealloc { .. }
            | EventKind::IntrinsicFree { .. } => {
                self.on_heap_return(pc, kind, machine, vrt);
            }
            EventKind::Return { .. } => {
                match self.frames.pop() {
                    Some(FrameSlot::Open(frame)) if frame.pushed > 0 => {
                        match vrt.flush_function() {
                            Ok(count) => {
                                self.mutations
                                    .push(VrtMutation { pc, kind: MutationKind::Flush { count } });
                                if count != frame.pushed {
                                    self.diagnostics.push(format!(
                                        "pc 0x{pc:08X}: flushed {count} entries, frame pushed {}",
                                        frame.pushed
                                    ));
                                }
                            }
                            Err(e) => self.diagnostics.push(format!("pc 0x{pc:08X}: {e}")),
                        }
                    }
                    Some(_) => {}
                    None => {
                        self.diagnostics
                            .push(format!("pc 0x{pc:08X}: return with no open frame"));
                    }
                }
            }
            _ => {}
        }
    }

    /// Completion of an allocator call: read the return register, apply
    /// the table mutation the call implies.
    fn on_heap_return(&mut self, pc: u32, kind: &EventKind, machine: &Machine, vrt: &mut Vrt) {
        let pending = self.pending_heap.take();
        let expected = match kind {
            EventKind::IntrinsicAlloc { .. } => IntrinsicKind::Malloc,
            EventKind::IntrinsicRealloc { .. } => IntrinsicKind::Realloc,
            _ => IntrinsicKind::Free,
        };
        match pending {
            Some(p) if p.kind == expected => {}
            _ => {
                self.diagnostics
                    .push(format!("pc 0x{pc:08X}: allocator completion without matching call"));
                return;
            }
        }
        let pending = pending.unwrap();
        let ret = machine.reg(crate::machine::REG_V0);
        match *kind {
            EventKind::IntrinsicAlloc { size, base } => {
                debug_assert_eq!(base, ret);
                debug_assert_eq!(size, pending.arg0);
                if base != 0 && pending.arg0 != 0 {
                    vrt.push(VrtEntry::heap(base, pending.arg0));
                    self.mutations.push(VrtMutation {
                        pc,
                        kind: MutationKind::PushHeap { base, bound: pending.arg0 },
                    });
                }
            }
            EventKind::IntrinsicRealloc { old_base, new_size, new_base } => {
                debug_assert_eq!(old_base, pending.arg0);
                debug_assert_eq!(new_size, pending.arg1);
                if old_base == 0 {
                    if new_base != 0 && new_size != 0 {
                        vrt.push(VrtEntry::heap(new_base, new_size));
                        self.mutations.push(VrtMutation {
                            pc,
                            kind: MutationKind::PushHeap { base: new_base, bound: new_size },
                        });
                    }
                } else if new_size == 0 {
                    match vrt.delete_heap(old_base) {
                        Ok(()) => self.mutations.push(VrtMutation {
                            pc,
                            kind: MutationKind::DeleteHeap { base: old_base },
                        }),
                        Err(e) => self.diagnostics.push(format!("pc 0x{pc:08X}: {e}")),
                    }
                } else {
                    match vrt.replace_heap(old_base, new_base, new_size) {
                        Ok(()) => self.mutations.push(VrtMutation {
                            pc,
                            kind: MutationKind::ReplaceHeap { old_base, new_base, bound: new_size },
                        }),
                        Err(e) => self.diagnostics.push(format!("pc 0x{pc:08X}: {e}")),
                    }
                }
            }
            EventKind::IntrinsicFree { base } => {
                debug_assert_eq!(base, pending.arg0);
                if base != 0 {
                    match vrt.delete_heap(base) {
                        Ok(()) => self
                            .mutations
                            .push(VrtMutation { pc, kind: MutationKind::DeleteHeap { base } }),
                        Err(e) => self.diagnostics.push(format!("pc 0x{pc:08X}: {e}")),
                    }
                }
            }
            _ => unreachable!(),
        }
    }
}

/// Fp-relative offset contributed by this instruction, if any: loads and
/// stores based on `$30`, or an `addiu` that materializes `$30 + imm`
/// into a general register.
fn harvest_candidate_offset(record: &StepRecord) -> Option<u32> {
    use crate::isa::Opcode;
    let instr = &record.instr;
    match instr.opcode {
        Opcode::Lw | Opcode::Sw | Opcode::Lb | Opcode::Sb
            if instr.rs == REG_FP && instr.imm >= 0 =>
        {
            Some(instr.imm as u32)
        }
        Opcode::Addiu
            if instr.rs == REG_FP
                && instr.imm >= 0
                && !matches!(instr.rt, 0 | REG_SP | REG_FP | 31) =>
        {
            Some(instr.imm as u32)
        }
        _ => None,
    }
}
