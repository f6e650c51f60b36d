//! Assembled program images and their on-disk form.
//!
//! An image is a flat list of encoded words starting at `base_address`,
//! plus a symbol table and the set of labels bound to allocation
//! intrinsics. On disk an image is a flat little-endian word file with a
//! text sidecar of `ADDR NAME` lines (`#` comment lines carry the base
//! address and intrinsic bindings).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::isa::INSTR_STRIDE;

/// Heap-management routines the machine implements natively. A `jal` to a
/// bound address runs the handler instead of fetching code there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IntrinsicKind {
    Malloc,
    Realloc,
    Free,
}

impl IntrinsicKind {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "malloc" => Some(IntrinsicKind::Malloc),
            "realloc" => Some(IntrinsicKind::Realloc),
            "free" => Some(IntrinsicKind::Free),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            IntrinsicKind::Malloc => "malloc",
            IntrinsicKind::Realloc => "realloc",
            IntrinsicKind::Free => "free",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramImage {
    pub base_address: u32,
    /// Encoded instruction words, one per 8-byte slot.
    pub words: Vec<u32>,
    /// Label name to address. All symbol addresses lie inside the image.
    pub symbols: BTreeMap<String, u32>,
    /// Intrinsic label name to address. May point outside the image.
    pub intrinsics: BTreeMap<String, u32>,
}

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("binary length {0} is not a multiple of 4")]
    BadBinaryLength(usize),
    #[error("malformed sidecar line {line}: {text:?}")]
    BadSidecarLine { line: usize, text: String },
    #[error("sidecar names unknown intrinsic {0:?}")]
    UnknownIntrinsic(String),
}

impl ProgramImage {
    /// One past the last instruction address.
    pub fn end_address(&self) -> u32 {
        self.base_address + INSTR_STRIDE * self.words.len() as u32
    }

    pub fn contains(&self, addr: u32) -> bool {
        addr >= self.base_address && addr < self.end_address()
    }

    /// Entry point: the `main` symbol when present, otherwise the base
    /// address of a nonempty image.
    pub fn entry(&self) -> Option<u32> {
        if let Some(&addr) = self.symbols.get("main") {
            return Some(addr);
        }
        if self.words.is_empty() {
            None
        } else {
            Some(self.base_address)
        }
    }

    pub fn intrinsic_at(&self, addr: u32) -> Option<IntrinsicKind> {
        self.intrinsics.iter().find_map(|(name, &a)| {
            if a == addr {
                IntrinsicKind::from_name(name)
            } else {
                None
            }
        })
    }

    /// Writes the flat word binary plus its symbol sidecar.
    pub fn write_files(&self, bin: &Path, sym: &Path) -> Result<(), ImageIoError> {
        let mut bytes = Vec::with_capacity(self.words.len() * 4);
        for w in &self.words {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        fs::write(bin, bytes)?;

        let mut out = Vec::new();
        writeln!(out, "# org 0x{:08X}", self.base_address)?;
        for (name, addr) in &self.intrinsics {
            writeln!(out, "# intrinsic {name} 0x{addr:08X}")?;
        }
        for (name, addr) in &self.symbols {
            writeln!(out, "0x{addr:08X} {name}")?;
        }
        fs::write(sym, out)?;
        Ok(())
    }

    /// Reads an image back from [`Self::write_files`] output.
    pub fn read_files(bin: &Path, sym: &Path) -> Result<Self, ImageIoError> {
        let bytes = fs::read(bin)?;
        if bytes.len() % 4 != 0 {
            return Err(ImageIoError::BadBinaryLength(bytes.len()));
        }
        let words = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();

        let mut base_address = 0;
        let mut symbols = BTreeMap::new();
        let mut intrinsics = BTreeMap::new();
        let text = fs::read_to_string(sym)?;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let bad = || ImageIoError::BadSidecarLine { line: idx + 1, text: raw.to_string() };
            if let Some(rest) = line.strip_prefix('#') {
                let mut it = rest.split_whitespace();
                match it.next() {
                    Some("org") => {
                        let addr = it.next().ok_or_else(bad)?;
                        base_address = parse_addr(addr).ok_or_else(bad)?;
                    }
                    Some("intrinsic") => {
                        let name = it.next().ok_or_else(bad)?.to_string();
                        let addr = parse_addr(it.next().ok_or_else(bad)?).ok_or_else(bad)?;
                        if IntrinsicKind::from_name(&name).is_none() {
                            return Err(ImageIoError::UnknownIntrinsic(name));
                        }
                        intrinsics.insert(name, addr);
                    }
                    _ => {} // free-form comment
                }
                continue;
            }
            let mut it = line.split_whitespace();
            let addr = parse_addr(it.next().ok_or_else(bad)?).ok_or_else(bad)?;
            let name = it.next().ok_or_else(bad)?.to_string();
            if it.next().is_some() {
                return Err(bad());
            }
            symbols.insert(name, addr);
        }
        Ok(ProgramImage { base_address, words, symbols, intrinsics })
    }
}

fn parse_addr(s: &str) -> Option<u32> {
    if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u32::from_str_radix(hex, 16).ok()
    } else {
        s.parse().ok()
    }
}
