//! The execution core: segmented byte-addressed memory, a 32-register
//! file, the fetch-decode-execute loop, and the built-in heap handlers
//! that stand in for the C allocator.
//!
//! Every executed instruction produces a [`StepRecord`]: the decoded
//! instruction, its pre-execution source operand values, and the
//! architectural events it caused, in program order. Observers get the
//! record after the step commits, so machine behavior can never depend on
//! who is watching.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::image::{IntrinsicKind, ProgramImage};
use crate::isa::{decode, Instruction, Opcode, INSTR_STRIDE};

pub const TEXT_BASE: u32 = 0x0040_0000;
pub const TEXT_SIZE: u32 = 0x0010_0000; // 1 MiB
pub const DATA_BASE: u32 = 0x1000_0000;
pub const DATA_SIZE: u32 = 0x0004_0000; // 256 KiB, abuts the heap
pub const HEAP_BASE: u32 = 0x1004_0000;
pub const HEAP_SIZE: u32 = 0x0040_0000; // 4 MiB
pub const STACK_LIMIT: u32 = 0x7ff0_0000; // lowest stack byte
pub const STACK_TOP_MAX: u32 = 0x7fff_ffff; // highest stack byte
pub const DEFAULT_STACK_TOP: u32 = 0x7fff_ff00;

/// Jumping here (via `jr`) halts the machine; it is the initial `$31`.
pub const HALT_SENTINEL: u32 = 0xffff_fff8;

pub const REG_V0: u8 = 2;
pub const REG_A0: u8 = 4;
pub const REG_A1: u8 = 5;
pub const REG_SP: u8 = 29;
pub const REG_FP: u8 = 30;
pub const REG_RA: u8 = 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Text,
    Data,
    Heap,
    Stack,
}

/// Maps an address to the segment that owns it, if any.
pub fn classify(addr: u32) -> Option<Segment> {
    if (TEXT_BASE..TEXT_BASE + TEXT_SIZE).contains(&addr) {
        Some(Segment::Text)
    } else if (DATA_BASE..DATA_BASE + DATA_SIZE).contains(&addr) {
        Some(Segment::Data)
    } else if (HEAP_BASE..HEAP_BASE + HEAP_SIZE).contains(&addr) {
        Some(Segment::Heap)
    } else if (STACK_LIMIT..=STACK_TOP_MAX).contains(&addr) {
        Some(Segment::Stack)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MachineError {
    #[error("illegal instruction word {word:#010x} at pc {pc:#010x}")]
    IllegalInstruction { pc: u32, word: u32 },
    #[error("memory fault at {addr:#010x} (pc {pc:#010x})")]
    MemoryFault { pc: u32, addr: u32 },
    #[error("unaligned access at {addr:#010x} (pc {pc:#010x})")]
    UnalignedAccess { pc: u32, addr: u32 },
    #[error("heap exhausted allocating {size} bytes (pc {pc:#010x})")]
    HeapExhausted { pc: u32, size: u32 },
    #[error("realloc of {addr:#010x} which is not a live block base (pc {pc:#010x})")]
    BadRealloc { pc: u32, addr: u32 },
    #[error("free of {addr:#010x} which is not a block base (pc {pc:#010x})")]
    BadFree { pc: u32, addr: u32 },
    #[error("double free of {addr:#010x} (pc {pc:#010x})")]
    DoubleFree { pc: u32, addr: u32 },
    #[error("image [{base:#010x}, {end:#010x}) does not fit in the text segment")]
    ImageTooLarge { base: u32, end: u32 },
    #[error("image has no entry point")]
    MissingEntry,
    #[error("stack top {0:#010x} is not an 8-aligned stack address")]
    InvalidStackTop(u32),
    #[error("step on a halted machine")]
    AlreadyHalted,
}

/// One allocation made by the malloc/realloc intrinsics. Dead blocks are
/// retained so stale pointers can be recognized after free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeapBlock {
    pub base: u32,
    pub size: u32,
    pub live: bool,
}

/// Architectural event emitted during one instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecEvent {
    pub pc: u32,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    RegWrite { reg: u8, value: u32 },
    MemRead { addr: u32, width: u8, value: u32 },
    MemWrite { addr: u32, width: u8, value: u32 },
    /// Emitted once per LW/SW/LB/SB, before its MemRead/MemWrite.
    EffectiveAddress { base_reg: u8, base_value: u32, offset: i16, addr: u32, width: u8, store: bool },
    Call { target: u32, return_addr: u32, intrinsic: Option<IntrinsicKind> },
    Return { target: u32 },
    IntrinsicAlloc { size: u32, base: u32 },
    IntrinsicRealloc { old_base: u32, new_size: u32, new_base: u32 },
    IntrinsicFree { base: u32 },
}

impl fmt::Display for ExecEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PC=0x{:08X} ", self.pc)?;
        match &self.kind {
            EventKind::RegWrite { reg, value } => write!(f, "REGWRITE r{reg}=0x{value:08X}"),
            EventKind::MemRead { addr, width, value } => {
                write!(f, "MEMREAD addr=0x{addr:08X} width={width} value=0x{value:08X}")
            }
            EventKind::MemWrite { addr, width, value } => {
                write!(f, "MEMWRITE addr=0x{addr:08X} width={width} value=0x{value:08X}")
            }
            EventKind::EffectiveAddress { base_reg, offset, addr, width, store, .. } => write!(
                f,
                "EFFADDR base=r{base_reg} offset={offset} addr=0x{addr:08X} width={width} {}",
                if *store { "store" } else { "load" }
            ),
            EventKind::Call { target, intrinsic, .. } => match intrinsic {
                Some(kind) => write!(f, "CALL target=0x{target:08X} intrinsic={}", kind.name()),
                None => write!(f, "CALL target=0x{target:08X}"),
            },
            EventKind::Return { target } => write!(f, "RETURN target=0x{target:08X}"),
            EventKind::IntrinsicAlloc { size, base } => {
                write!(f, "MALLOC size={size} base=0x{base:08X}")
            }
            EventKind::IntrinsicRealloc { old_base, new_size, new_base } => {
                write!(f, "REALLOC old=0x{old_base:08X} size={new_size} base=0x{new_base:08X}")
            }
            EventKind::IntrinsicFree { base } => write!(f, "FREE base=0x{base:08X}"),
        }
    }
}

/// Everything one executed instruction did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepRecord {
    pub pc: u32,
    pub instr: Instruction,
    /// `regs[rs]` before execution.
    pub rs_value: u32,
    /// `regs[rt]` before execution.
    pub rt_value: u32,
    /// Ordinal of this instruction (1-based instruction count).
    pub index: u64,
    pub events: Vec<ExecEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunStatus {
    Halted,
    BudgetExhausted,
    Faulted(MachineError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AllocCounts {
    pub malloc: u64,
    pub realloc: u64,
    pub free: u64,
}

struct Region {
    base: u32,
    bytes: Vec<u8>,
}

impl Region {
    fn new(base: u32, size: u32) -> Self {
        Region { base, bytes: vec![0; size as usize] }
    }

    fn contains(&self, addr: u32, width: u32) -> bool {
        addr >= self.base && (addr - self.base) as u64 + width as u64 <= self.bytes.len() as u64
    }

    fn read(&self, addr: u32, width: u32) -> u32 {
        let off = (addr - self.base) as usize;
        let mut v: u32 = 0;
        for i in 0..width as usize {
            v |= (self.bytes[off + i] as u32) << (8 * i);
        }
        v
    }

    fn write(&mut self, addr: u32, width: u32, value: u32) {
        let off = (addr - self.base) as usize;
        for i in 0..width as usize {
            self.bytes[off + i] = (value >> (8 * i)) as u8;
        }
    }
}

pub struct Machine {
    regs: [u32; 32],
    pc: u32,
    text: Region,
    data: Region,
    heap: Region,
    stack: Region,
    halted: bool,
    instr_count: u64,
    heap_blocks: Vec<HeapBlock>,
    heap_next: u32,
    intrinsic_map: BTreeMap<u32, IntrinsicKind>,
    alloc_counts: AllocCounts,
}

impl Machine {
    /// Loads an image: text bytes written, pc at the entry symbol, `$29`
    /// at `stack_top`, `$31` at the halt sentinel, all else zero.
    pub fn load(image: &ProgramImage, stack_top: u32) -> Result<Self, MachineError> {
        let end = image.end_address();
        if image.base_address < TEXT_BASE || end > TEXT_BASE + TEXT_SIZE {
            return Err(MachineError::ImageTooLarge { base: image.base_address, end });
        }
        let entry = image.entry().ok_or(MachineError::MissingEntry)?;
        if !(STACK_LIMIT..=STACK_TOP_MAX).contains(&stack_top) || !stack_top.is_multiple_of(8) {
            return Err(MachineError::InvalidStackTop(stack_top));
        }

        let mut text = Region::new(TEXT_BASE, TEXT_SIZE);
        for (i, word) in image.words.iter().enumerate() {
            text.write(image.base_address + INSTR_STRIDE * i as u32, 4, *word);
        }
        let mut intrinsic_map = BTreeMap::new();
        for (name, &addr) in &image.intrinsics {
            if let Some(kind) = IntrinsicKind::from_name(name) {
                intrinsic_map.insert(addr, kind);
            }
        }

        let mut regs = [0u32; 32];
        regs[REG_SP as usize] = stack_top;
        regs[REG_RA as usize] = HALT_SENTINEL;
        Ok(Machine {
            regs,
            pc: entry,
            text,
            data: Region::new(DATA_BASE, DATA_SIZE),
            heap: Region::new(HEAP_BASE, HEAP_SIZE),
            stack: Region::new(STACK_LIMIT, STACK_TOP_MAX - STACK_LIMIT + 1),
            halted: false,
            instr_count: 0,
            heap_blocks: Vec::new(),
            heap_next: HEAP_BASE,
            intrinsic_map,
            alloc_counts: AllocCounts::default(),
        })
    }

    pub fn pc(&self) -> u32 {
        self.pc
    }

    pub fn halted(&self) -> bool {
        self.halted
    }

    pub fn instr_count(&self) -> u64 {
        self.instr_count
    }

    /// Register read; index 0 is hard-wired to zero.
    pub fn reg(&self, index: u8) -> u32 {
        if index == 0 {
            0
        } else {
            self.regs[index as usize]
        }
    }

    pub fn heap_blocks(&self) -> &[HeapBlock] {
        &self.heap_blocks
    }

    pub fn alloc_counts(&self) -> AllocCounts {
        self.alloc_counts
    }

    /// Dead block whose `[base, base+size)` range covers `addr`.
    pub fn dead_block_containing(&self, addr: u32) -> Option<&HeapBlock> {
        self.heap_blocks
            .iter()
            .rev()
            .find(|b| !b.live && addr >= b.base && addr - b.base < b.size)
    }

    pub fn live_block_at(&self, base: u32) -> Option<&HeapBlock> {
        self.heap_blocks.iter().find(|b| b.live && b.base == base)
    }

    /// Live block whose `[base, base+size)` range covers `addr`.
    pub fn live_block_containing(&self, addr: u32) -> Option<&HeapBlock> {
        self.heap_blocks
            .iter()
            .find(|b| b.live && addr >= b.base && addr - b.base < b.size)
    }

    /// Non-architectural memory peek for tests and tooling.
    pub fn peek(&self, addr: u32, width: u32) -> Option<u32> {
        let region = self.region_for(addr)?;
        if region.contains(addr, width) {
            Some(region.read(addr, width))
        } else {
            None
        }
    }

    fn region_for(&self, addr: u32) -> Option<&Region> {
        match classify(addr)? {
            Segment::Text => Some(&self.text),
            Segment::Data => Some(&self.data),
            Segment::Heap => Some(&self.heap),
            Segment::Stack => Some(&self.stack),
        }
    }

    fn write_reg(&mut self, pc: u32, reg: u8, value: u32, events: &mut Vec<ExecEvent>) {
        if reg == 0 {
            return;
        }
        self.regs[reg as usize] = value;
        events.push(ExecEvent { pc, kind: EventKind::RegWrite { reg, value } });
    }

    fn load_mem(&self, pc: u32, addr: u32, width: u32) -> Result<u32, MachineError> {
        let region = self.region_for(addr).ok_or(MachineError::MemoryFault { pc, addr })?;
        if !region.contains(addr, width) {
            return Err(MachineError::MemoryFault { pc, addr });
        }
        Ok(region.read(addr, width))
    }

    fn store_mem(&mut self, pc: u32, addr: u32, width: u32, value: u32) -> Result<(), MachineError> {
        let region = match classify(addr) {
            // Text is execute/read-only.
            Some(Segment::Text) | None => return Err(MachineError::MemoryFault { pc, addr }),
            Some(Segment::Data) => &mut self.data,
            Some(Segment::Heap) => &mut self.heap,
            Some(Segment::Stack) => &mut self.stack,
        };
        if !region.contains(addr, width) {
            return Err(MachineError::MemoryFault { pc, addr });
        }
        region.write(addr, width, value);
        Ok(())
    }

    /// Executes one instruction and returns its record.
    pub fn step(&mut self) -> Result<StepRecord, MachineError> {
        if self.halted {
            return Err(MachineError::AlreadyHalted);
        }
        let pc = self.pc;
        debug_assert_eq!(pc % INSTR_STRIDE, 0);
        let word = self.load_mem(pc, pc, 4)?;
        let instr =
            decode(word).map_err(|_| MachineError::IllegalInstruction { pc, word })?;
        let rs_value = self.reg(instr.rs);
        let rt_value = self.reg(instr.rt);
        let mut events = Vec::new();
        let mut next_pc = pc.wrapping_add(INSTR_STRIDE);

        match instr.opcode {
            Opcode::Addiu => {
                let v = rs_value.wrapping_add(instr.imm as i32 as u32);
                self.write_reg(pc, instr.rt, v, &mut events);
            }
            Opcode::Addu => {
                self.write_reg(pc, instr.rd, rs_value.wrapping_add(rt_value), &mut events);
            }
            Opcode::Subu => {
                self.write_reg(pc, instr.rd, rs_value.wrapping_sub(rt_value), &mut events);
            }
            Opcode::Sll => {
                self.write_reg(pc, instr.rd, rt_value << (instr.imm as u32 & 31), &mut events);
            }
            Opcode::Slt => {
                let v = ((rs_value as i32) < (rt_value as i32)) as u32;
                self.write_reg(pc, instr.rd, v, &mut events);
            }
            Opcode::Slti => {
                let v = ((rs_value as i32) < instr.imm as i32) as u32;
                self.write_reg(pc, instr.rt, v, &mut events);
            }
            Opcode::Lui => {
                self.write_reg(pc, instr.rt, ((instr.imm as u16) as u32) << 16, &mut events);
            }
            Opcode::Ori => {
                self.write_reg(pc, instr.rt, rs_value | (instr.imm as u16) as u32, &mut events);
            }
            Opcode::Lw | Opcode::Sw | Opcode::Lb | Opcode::Sb => {
                let width = instr.opcode.mem_width().unwrap() as u32;
                let addr = rs_value.wrapping_add(instr.imm as i32 as u32);
                events.push(ExecEvent {
                    pc,
                    kind: EventKind::EffectiveAddress {
                        base_reg: instr.rs,
                        base_value: rs_value,
                        offset: instr.imm,
                        addr,
                        width: width as u8,
                        store: instr.opcode.is_store(),
                    },
                });
                if width == 4 && !addr.is_multiple_of(4) {
                    return Err(MachineError::UnalignedAccess { pc, addr });
                }
                match instr.opcode {
                    Opcode::Lw => {
                        let v = self.load_mem(pc, addr, 4)?;
                        events.push(ExecEvent { pc, kind: EventKind::MemRead { addr, width: 4, value: v } });
                        self.write_reg(pc, instr.rt, v, &mut events);
                    }
                    Opcode::Lb => {
                        let v = self.load_mem(pc, addr, 1)?;
                        events.push(ExecEvent { pc, kind: EventKind::MemRead { addr, width: 1, value: v } });
                        self.write_reg(pc, instr.rt, v as u8 as i8 as i32 as u32, &mut events);
                    }
                    Opcode::Sw => {
                        self.store_mem(pc, addr, 4, rt_value)?;
                        events.push(ExecEvent { pc, kind: EventKind::MemWrite { addr, width: 4, value: rt_value } });
                    }
                    Opcode::Sb => {
                        let v = rt_value & 0xff;
                        self.store_mem(pc, addr, 1, v)?;
                        events.push(ExecEvent { pc, kind: EventKind::MemWrite { addr, width: 1, value: v } });
                    }
                    _ => unreachable!(),
                }
            }
            Opcode::Beq | Opcode::Bne => {
                let taken = (rs_value == rt_value) == (instr.opcode == Opcode::Beq);
                if taken {
                    let delta = (instr.imm as i32).wrapping_mul(INSTR_STRIDE as i32);
                    next_pc = pc.wrapping_add(INSTR_STRIDE).wrapping_add(delta as u32);
                }
            }
            Opcode::J => {
                next_pc = instr.target;
            }
            Opcode::Jal => {
                let return_addr = pc.wrapping_add(INSTR_STRIDE);
                self.write_reg(pc, REG_RA, return_addr, &mut events);
                let intrinsic = self.intrinsic_map.get(&instr.target).copied();
                events.push(ExecEvent {
                    pc,
                    kind: EventKind::Call { target: instr.target, return_addr, intrinsic },
                });
                match intrinsic {
                    Some(kind) => {
                        self.run_intrinsic(pc, kind, &mut events)?;
                        next_pc = return_addr;
                    }
                    None => next_pc = instr.target,
                }
            }
            Opcode::Jr => {
                let target = rs_value;
                events.push(ExecEvent { pc, kind: EventKind::Return { target } });
                if target == HALT_SENTINEL {
                    self.halted = true;
                } else if !target.is_multiple_of(INSTR_STRIDE) {
                    return Err(MachineError::UnalignedAccess { pc, addr: target });
                }
                next_pc = target;
            }
            Opcode::Halt => {
                self.halted = true;
            }
        }

        self.pc = next_pc;
        self.instr_count += 1;
        Ok(StepRecord { pc, instr, rs_value, rt_value, index: self.instr_count, events })
    }

    fn run_intrinsic(
        &mut self,
        pc: u32,
        kind: IntrinsicKind,
        events: &mut Vec<ExecEvent>,
    ) -> Result<(), MachineError> {
        match kind {
            IntrinsicKind::Malloc => {
                self.alloc_counts.malloc += 1;
                let size = self.reg(REG_A0);
                let base = if size == 0 { 0 } else { self.allocate(pc, size)? };
                events.push(ExecEvent { pc, kind: EventKind::IntrinsicAlloc { size, base } });
                self.write_reg(pc, REG_V0, base, events);
            }
            IntrinsicKind::Realloc => {
                self.alloc_counts.realloc += 1;
                let old_base = self.reg(REG_A0);
                let new_size = self.reg(REG_A1);
                let new_base = if old_base == 0 {
                    if new_size == 0 { 0 } else { self.allocate(pc, new_size)? }
                } else {
                    let old = self
                        .heap_blocks
                        .iter()
                        .position(|b| b.live && b.base == old_base)
                        .ok_or(MachineError::BadRealloc { pc, addr: old_base })?;
                    let old_size = self.heap_blocks[old].size;
                    let new_base = if new_size == 0 { 0 } else { self.allocate(pc, new_size)? };
                    if new_base != 0 {
                        // Contents carry over up to the smaller size.
                        let n = old_size.min(new_size);
                        for i in 0..n {
                            let b = self.heap.read(old_base + i, 1);
                            self.heap.write(new_base + i, 1, b);
                        }
                    }
                    self.heap_blocks[old].live = false;
                    new_base
                };
                events.push(ExecEvent {
                    pc,
                    kind: EventKind::IntrinsicRealloc { old_base, new_size, new_base },
                });
                self.write_reg(pc, REG_V0, new_base, events);
            }
            IntrinsicKind::Free => {
                self.alloc_counts.free += 1;
                let base = self.reg(REG_A0);
                if base != 0 {
                    let block = self
                        .heap_blocks
                        .iter_mut()
                        .find(|b| b.base == base)
                        .ok_or(MachineError::BadFree { pc, addr: base })?;
                    if !block.live {
                        return Err(MachineError::DoubleFree { pc, addr: base });
                    }
                    block.live = false;
                }
                events.push(ExecEvent { pc, kind: EventKind::IntrinsicFree { base } });
            }
        }
        Ok(())
    }

    /// Bump allocation, 8-aligned, never reused.
    fn allocate(&mut self, pc: u32, size: u32) -> Result<u32, MachineError> {
        let base = (self.heap_next + 7) & !7;
        let end = base as u64 + size as u64;
        if end > (HEAP_BASE + HEAP_SIZE) as u64 {
            return Err(MachineError::HeapExhausted { pc, size });
        }
        self.heap_next = end as u32;
        self.heap_blocks.push(HeapBlock { base, size, live: true });
        Ok(base)
    }

    /// Steps until halt, fault, or `max_steps` executed instructions,
    /// handing each record to `sink` as it commits.
    pub fn run_with(
        &mut self,
        max_steps: u64,
        mut sink: impl FnMut(&StepRecord, &Machine),
    ) -> RunStatus {
        for _ in 0..max_steps {
            if self.halted {
                return RunStatus::Halted;
            }
            match self.step() {
                Ok(record) => sink(&record, self),
                Err(e) => return RunStatus::Faulted(e),
            }
        }
        if self.halted {
            RunStatus::Halted
        } else {
            RunStatus::BudgetExhausted
        }
    }

    /// Convenience wrapper collecting the full event trace.
    pub fn run_collect(&mut self, max_steps: u64) -> (RunStatus, Vec<StepRecord>) {
        let mut records = Vec::new();
        let status = self.run_with(max_steps, |r, _| records.push(r.clone()));
        (status, records)
    }
}
