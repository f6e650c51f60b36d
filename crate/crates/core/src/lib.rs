//! An instruction-set simulator for a small MIPS-like RISC subset that
//! builds a table of variable base/bound records at runtime and uses it
//! to catch buffer overflows as they happen.
//!
//! The pieces:
//!
//! * [`isa`] / [`asm`] / [`image`] — the instruction subset, a two-pass
//!   assembler, and assembled program images.
//! * [`machine`] — segmented memory, the register file, the execute loop,
//!   and the built-in malloc/realloc/free handlers.
//! * [`vrt`] — the variable record table: {associated bit, base, bound}
//!   entries with push, bound-update, lookup, and flush.
//! * [`monitor`] — watches prologues, frame-pointer offsets, and
//!   allocator register conventions to populate the table.
//! * [`detector`] — checks every access and address computation against
//!   the table and reports violations.
//! * [`runner`] — wires a machine to the monitor and detector.
//! * [`corpus`] — a generated micro-corpus of overflow programs plus a
//!   checker.

pub mod asm;
pub mod corpus;
pub mod detector;
pub mod image;
pub mod isa;
pub mod machine;
pub mod monitor;
pub mod runner;
pub mod vrt;

pub use asm::{assemble, AsmError};
pub use detector::{
    ArithAction, DetectionPolicy, Detector, Severity, Summary, ViolationKind, ViolationReport,
};
pub use image::{IntrinsicKind, ProgramImage};
pub use isa::{decode, disassemble, encode, Instruction, Opcode};
pub use machine::{
    EventKind, ExecEvent, Machine, MachineError, RunStatus, StepRecord, DEFAULT_STACK_TOP,
};
pub use monitor::{Monitor, MutationKind, VrtMutation};
pub use runner::{run_program, RunConfig, RunOutcome, RunStats, Termination};
pub use vrt::{footprint_bits_for, EntryKind, Vrt, VrtEntry, VrtError};
