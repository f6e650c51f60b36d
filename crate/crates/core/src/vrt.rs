//! The Variable Record Table: an ordered stack of {associated bit, base,
//! bound} records describing live variables' memory, with the operations
//! the monitor needs — push, bound update, containment lookup, whole-
//! function flush, and heap delete/replace.
//!
//! Stack records of one function form a contiguous run at the top sharing
//! one associated bit; adjacent function runs carry opposite bits, which
//! is what lets a single flush remove exactly the returning function's
//! records. Heap records live in the same table but are exempt from
//! flushes: heap blocks outlive the function that allocated them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bits per table record: 1 associated + 32 base + 8 bound.
pub const ENTRY_BITS: u64 = 41;

/// Capacity of the modeled 8-bit bound field. Larger bounds are stored
/// exactly but tallied as saturations.
pub const BOUND_FIELD_MAX: u32 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Stack,
    Heap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VrtEntry {
    pub associated: bool,
    pub base: u32,
    /// Size in bytes; the legal interval is `[base, base + bound)`.
    pub bound: u32,
    pub kind: EntryKind,
}

impl VrtEntry {
    pub fn stack(associated: bool, base: u32, bound: u32) -> Self {
        VrtEntry { associated, base, bound, kind: EntryKind::Stack }
    }

    pub fn heap(base: u32, bound: u32) -> Self {
        VrtEntry { associated: false, base, bound, kind: EntryKind::Heap }
    }

    pub fn contains(&self, addr: u32) -> bool {
        addr >= self.base && (addr - self.base) < self.bound
    }

    /// One past the last legal byte.
    pub fn end(&self) -> u32 {
        self.base.wrapping_add(self.bound)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VrtError {
    #[error("no table entry with base {base:#010x}")]
    NoSuchEntry { base: u32 },
    #[error("flush on a table with no stack entries")]
    EmptyTable,
}

/// The table itself. Newest entry last (top of stack).
#[derive(Debug, Clone, Default)]
pub struct Vrt {
    entries: Vec<VrtEntry>,
    max_occupancy: usize,
    bound_saturations: u64,
}

impl Vrt {
    pub fn new() -> Self {
        Vrt::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// High-water mark of simultaneous entries.
    pub fn max_occupancy(&self) -> usize {
        self.max_occupancy
    }

    /// Times an entry was recorded with a bound too large for the 8-bit
    /// bound field.
    pub fn bound_saturations(&self) -> u64 {
        self.bound_saturations
    }

    /// Entries bottom-up (push order).
    pub fn entries(&self) -> &[VrtEntry] {
        &self.entries
    }

    fn note_bound(&mut self, bound: u32) {
        if bound > BOUND_FIELD_MAX {
            self.bound_saturations += 1;
        }
    }

    pub fn push(&mut self, entry: VrtEntry) {
        self.note_bound(entry.bound);
        self.entries.push(entry);
        self.max_occupancy = self.max_occupancy.max(self.entries.len());
    }

    /// Associated bit of the topmost stack-kind entry.
    pub fn top_stack_bit(&self) -> Option<bool> {
        self.entries
            .iter()
            .rev()
            .find(|e| e.kind == EntryKind::Stack)
            .map(|e| e.associated)
    }

    /// The current function's records: the maximal top run of stack
    /// entries sharing the top stack bit, skipping interleaved heap
    /// entries. Yields top-down.
    pub fn top_run(&self) -> impl Iterator<Item = &VrtEntry> {
        let bit = self.top_stack_bit();
        self.entries
            .iter()
            .rev()
            .filter(|e| e.kind == EntryKind::Stack)
            .take_while(move |e| Some(e.associated) == bit)
    }

    /// Replaces the bound of the entry with `base` in the current top
    /// function run.
    pub fn update_bound(&mut self, base: u32, bound: u32) -> Result<(), VrtError> {
        let bit = self.top_stack_bit().ok_or(VrtError::NoSuchEntry { base })?;
        for entry in self.entries.iter_mut().rev() {
            if entry.kind != EntryKind::Stack {
                continue;
            }
            if entry.associated != bit {
                break;
            }
            if entry.base == base {
                entry.bound = bound;
                self.note_bound(bound);
                return Ok(());
            }
        }
        Err(VrtError::NoSuchEntry { base })
    }

    /// Top-down search for the unique entry whose half-open interval
    /// contains `addr`.
    pub fn find_containing(&self, addr: u32) -> Option<&VrtEntry> {
        self.entries.iter().rev().find(|e| e.contains(addr))
    }

    /// [`Self::find_containing`], falling back to the entry whose
    /// one-past-the-end address equals `addr`. Used for pointer
    /// provenance, where the one-past-end value still belongs to the
    /// variable it walked off.
    pub fn find_containing_closed(&self, addr: u32) -> Option<&VrtEntry> {
        self.find_containing(addr)
            .or_else(|| self.entries.iter().rev().find(|e| e.end() == addr))
    }

    /// Removes the returning function's records: every stack entry above
    /// the first stack entry with the opposite bit, skipping (and
    /// keeping) heap entries. Returns how many were removed.
    pub fn flush_function(&mut self) -> Result<usize, VrtError> {
        let bit = self.top_stack_bit().ok_or(VrtError::EmptyTable)?;
        let mut cut = Vec::new();
        for (i, entry) in self.entries.iter().enumerate().rev() {
            if entry.kind != EntryKind::Stack {
                continue;
            }
            if entry.associated != bit {
                break;
            }
            cut.push(i);
        }
        for i in &cut {
            self.entries.remove(*i); // indices collected top-down
        }
        Ok(cut.len())
    }

    /// Removes the heap entry with `base`, wherever it sits.
    pub fn delete_heap(&mut self, base: u32) -> Result<(), VrtError> {
        let pos = self
            .entries
            .iter()
            .position(|e| e.kind == EntryKind::Heap && e.base == base)
            .ok_or(VrtError::NoSuchEntry { base })?;
        self.entries.remove(pos);
        Ok(())
    }

    /// Rewrites the heap entry with `old_base` in place.
    pub fn replace_heap(&mut self, old_base: u32, new_base: u32, new_bound: u32) -> Result<(), VrtError> {
        let entry = self
            .entries
            .iter_mut()
            .find(|e| e.kind == EntryKind::Heap && e.base == old_base)
            .ok_or(VrtError::NoSuchEntry { base: old_base })?;
        entry.base = new_base;
        entry.bound = new_bound;
        self.note_bound(new_bound);
        Ok(())
    }

    /// Storage the table occupies at 41 bits per entry.
    pub fn footprint_bits(&self) -> u64 {
        footprint_bits_for(self.entries.len())
    }

    /// Table dump, one line per entry top-down.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in self.entries.iter().rev() {
            let kind = match e.kind {
                EntryKind::Stack => "stack",
                EntryKind::Heap => "heap",
            };
            let _ = writeln!(
                out,
                "A={} BASE=0x{:08X} BOUND={} KIND={}",
                e.associated as u8, e.base, e.bound, kind
            );
        }
        out
    }
}

/// Footprint of a table with `count` entries.
pub fn footprint_bits_for(count: usize) -> u64 {
    ENTRY_BITS * count as u64
}
