//! Two-pass assembler for the instruction subset.
//!
//! Grammar, one item per line:
//!
//! ```text
//! # comment to end of line
//! .org ADDR              # base address, before any instruction
//! .intrinsic NAME [ADDR] # bind malloc/realloc/free to a handler
//! label:                 # optionally followed by an instruction
//! mnemonic operands
//! ```
//!
//! Branch targets may be labels or literal slot offsets; jump targets may
//! be labels or absolute addresses. Register operands accept `$0`-`$31`
//! and the aliases `$zero`, `$v0`, `$a0`, `$a1`, `$sp`, `$fp`, `$ra`.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::image::{IntrinsicKind, ProgramImage};
use crate::isa::{encode, Instruction, Opcode, INSTR_STRIDE, MAX_JUMP_TARGET};

pub const DEFAULT_ORG: u32 = 0x0040_0000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmError {
    #[error("line {line}: unknown mnemonic {mnemonic:?}")]
    UnknownMnemonic { line: usize, mnemonic: String },
    #[error("line {line}: unresolved label {label:?}")]
    UnresolvedLabel { line: usize, label: String },
    #[error("line {line}: immediate {value} out of range for {context}")]
    ImmediateOutOfRange { line: usize, value: i64, context: String },
    #[error("line {line}: duplicate label {label:?}")]
    DuplicateLabel { line: usize, label: String },
    #[error("line {line}: syntax error: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown intrinsic {name:?} (expected malloc, realloc, or free)")]
    UnknownIntrinsic { line: usize, name: String },
    #[error("line {line}: .org must appear before any instruction")]
    OrgAfterCode { line: usize },
    #[error("line {line}: jump target 0x{target:08x} is neither a symbol nor inside the image")]
    BadJumpTarget { line: usize, target: u32 },
}

/// Operand that may still reference a label after the first pass.
#[derive(Debug, Clone)]
enum Ref {
    Literal(i64),
    Label(String),
}

#[derive(Debug, Clone)]
enum Pending {
    Done(Instruction),
    Branch { opcode: Opcode, rs: u8, rt: u8, target: Ref },
    Jump { opcode: Opcode, target: Ref },
}

struct Line {
    number: usize,
}

/// Assembles source text into a program image with two passes: the first
/// collects labels and parses instructions, the second resolves label
/// references and encodes.
pub fn assemble(source: &str) -> Result<ProgramImage, AsmError> {
    let mut base: Option<u32> = None;
    let mut items: Vec<(usize, Pending, u32)> = Vec::new(); // (line, instr, index)
    let mut symbols: BTreeMap<String, u32> = BTreeMap::new();
    let mut label_indices: Vec<(String, u32, usize)> = Vec::new(); // name, instr index, line
    let mut intrinsic_decls: Vec<(String, Option<u32>, usize)> = Vec::new();
    let mut index: u32 = 0;

    for (number, raw) in source.lines().enumerate() {
        let number = number + 1;
        let text = raw.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let line = Line { number };

        if let Some(rest) = text.strip_prefix(".org") {
            if index > 0 || base.is_some() {
                return Err(AsmError::OrgAfterCode { line: number });
            }
            let addr = parse_u32(rest.trim(), &line)?;
            if addr % INSTR_STRIDE != 0 {
                return Err(syntax(&line, "base address must be a multiple of 8"));
            }
            base = Some(addr);
            continue;
        }
        if let Some(rest) = text.strip_prefix(".intrinsic") {
            let mut parts = rest.split_whitespace();
            let name = parts
                .next()
                .ok_or_else(|| syntax(&line, "expected intrinsic name"))?
                .to_string();
            if IntrinsicKind::from_name(&name).is_none() {
                return Err(AsmError::UnknownIntrinsic { line: number, name });
            }
            let addr = parts.next().map(|a| parse_u32(a, &line)).transpose()?;
            if parts.next().is_some() {
                return Err(syntax(&line, "trailing tokens after .intrinsic"));
            }
            intrinsic_decls.push((name, addr, number));
            continue;
        }
        if text.starts_with('.') {
            return Err(syntax(&line, "unknown directive"));
        }

        let mut rest = text;
        if let Some(colon) = text.find(':') {
            let (label, after) = text.split_at(colon);
            let label = label.trim();
            if label.is_empty() || !is_label(label) {
                return Err(syntax(&line, "malformed label"));
            }
            if label_indices.iter().any(|(n, _, _)| n == label) {
                return Err(AsmError::DuplicateLabel { line: number, label: label.to_string() });
            }
            label_indices.push((label.to_string(), index, number));
            rest = after[1..].trim();
            if rest.is_empty() {
                continue;
            }
        }

        let pending = parse_instruction(rest, &Line { number })?;
        items.push((number, pending, index));
        index += 1;
    }

    let base = base.unwrap_or(DEFAULT_ORG);
    let end = base + INSTR_STRIDE * index;

    // Symbol addresses are unique and inside the image.
    let mut taken = BTreeMap::new();
    for (name, idx, line) in label_indices {
        let addr = base + INSTR_STRIDE * idx;
        if addr >= end {
            return Err(syntax(
                &Line { number: line },
                &format!("label {name:?} does not precede an instruction"),
            ));
        }
        if let Some(other) = taken.insert(addr, name.clone()) {
            return Err(syntax(
                &Line { number: line },
                &format!("label {name:?} shares an address with {other:?}"),
            ));
        }
        if symbols.insert(name.clone(), addr).is_some() {
            return Err(AsmError::DuplicateLabel { line, label: name });
        }
    }

    let mut intrinsics = BTreeMap::new();
    for (name, addr, line) in intrinsic_decls {
        let addr = match addr {
            Some(a) => a,
            None => *symbols
                .get(&name)
                .ok_or_else(|| AsmError::UnresolvedLabel { line, label: name.clone() })?,
        };
        if addr % INSTR_STRIDE != 0 || addr > MAX_JUMP_TARGET {
            return Err(syntax(
                &Line { number: line },
                "intrinsic address must be 8-aligned and jump-encodable",
            ));
        }
        intrinsics.insert(name, addr);
    }

    // Second pass: resolve label references, encode.
    let mut words = Vec::with_capacity(items.len());
    for (line, pending, idx) in items {
        let pc = base + INSTR_STRIDE * idx;
        let instr = match pending {
            Pending::Done(i) => i,
            Pending::Branch { opcode, rs, rt, target } => {
                let off = match target {
                    Ref::Literal(v) => v,
                    Ref::Label(name) => {
                        let addr = *symbols.get(&name).ok_or(AsmError::UnresolvedLabel {
                            line,
                            label: name.clone(),
                        })?;
                        let delta = addr as i64 - (pc as i64 + INSTR_STRIDE as i64);
                        debug_assert_eq!(delta % INSTR_STRIDE as i64, 0);
                        delta / INSTR_STRIDE as i64
                    }
                };
                let imm = check_i16(off, line, "branch offset")?;
                Instruction::branch(opcode, rs, rt, imm)
            }
            Pending::Jump { opcode, target } => {
                let addr = match target {
                    Ref::Literal(v) => {
                        if v < 0 || v > u32::MAX as i64 {
                            return Err(AsmError::ImmediateOutOfRange {
                                line,
                                value: v,
                                context: "jump target".into(),
                            });
                        }
                        v as u32
                    }
                    Ref::Label(name) => *symbols
                        .get(&name)
                        .or_else(|| intrinsics.get(&name))
                        .ok_or(AsmError::UnresolvedLabel { line, label: name })?,
                };
                if addr % INSTR_STRIDE != 0 || addr > MAX_JUMP_TARGET {
                    return Err(AsmError::BadJumpTarget { line, target: addr });
                }
                let resolves = symbols.values().any(|&a| a == addr)
                    || intrinsics.values().any(|&a| a == addr)
                    || (addr >= base && addr < end);
                if !resolves {
                    return Err(AsmError::BadJumpTarget { line, target: addr });
                }
                Instruction::jump(opcode, addr)
            }
        };
        words.push(encode(&instr));
    }

    Ok(ProgramImage { base_address: base, words, symbols, intrinsics })
}

fn syntax(line: &Line, msg: &str) -> AsmError {
    AsmError::Syntax { line: line.number, msg: msg.to_string() }
}

fn is_label(s: &str) -> bool {
    s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') && !s.starts_with(|c: char| c.is_ascii_digit())
}

fn parse_instruction(text: &str, line: &Line) -> Result<Pending, AsmError> {
    let (mnemonic, rest) = match text.split_once(char::is_whitespace) {
        Some((m, r)) => (m, r.trim()),
        None => (text, ""),
    };
    let ops: Vec<&str> = if rest.is_empty() {
        Vec::new()
    } else {
        rest.split(',').map(str::trim).collect()
    };
    let want = |n: usize| -> Result<(), AsmError> {
        if ops.len() == n {
            Ok(())
        } else {
            Err(syntax(line, &format!("expected {n} operand(s), found {}", ops.len())))
        }
    };

    let done = |i: Instruction| Ok(Pending::Done(i));
    match mnemonic {
        "addiu" | "slti" | "ori" => {
            want(3)?;
            let rt = parse_reg(ops[0], line)?;
            let rs = parse_reg(ops[1], line)?;
            let opcode = match mnemonic {
                "addiu" => Opcode::Addiu,
                "slti" => Opcode::Slti,
                _ => Opcode::Ori,
            };
            let imm = if opcode == Opcode::Ori {
                parse_u16_bits(ops[2], line)?
            } else {
                check_i16(parse_i64(ops[2], line)?, line.number, "immediate")?
            };
            done(Instruction::itype(opcode, rt, rs, imm))
        }
        "addu" | "subu" | "slt" => {
            want(3)?;
            let rd = parse_reg(ops[0], line)?;
            let rs = parse_reg(ops[1], line)?;
            let rt = parse_reg(ops[2], line)?;
            let opcode = match mnemonic {
                "addu" => Opcode::Addu,
                "subu" => Opcode::Subu,
                _ => Opcode::Slt,
            };
            done(Instruction::rtype(opcode, rd, rs, rt))
        }
        "sll" => {
            want(3)?;
            let rd = parse_reg(ops[0], line)?;
            let rt = parse_reg(ops[1], line)?;
            let sh = parse_i64(ops[2], line)?;
            if !(0..=31).contains(&sh) {
                return Err(AsmError::ImmediateOutOfRange {
                    line: line.number,
                    value: sh,
                    context: "shift amount".into(),
                });
            }
            done(Instruction::sll(rd, rt, sh as i16))
        }
        "lw" | "sw" | "lb" | "sb" => {
            want(2)?;
            let rt = parse_reg(ops[0], line)?;
            let (offset, base) = parse_mem_operand(ops[1], line)?;
            let opcode = match mnemonic {
                "lw" => Opcode::Lw,
                "sw" => Opcode::Sw,
                "lb" => Opcode::Lb,
                _ => Opcode::Sb,
            };
            done(Instruction::mem(opcode, rt, base, offset))
        }
        "lui" => {
            want(2)?;
            let rt = parse_reg(ops[0], line)?;
            let imm = parse_u16_bits(ops[1], line)?;
            done(Instruction::lui(rt, imm))
        }
        "beq" | "bne" => {
            want(3)?;
            let rs = parse_reg(ops[0], line)?;
            let rt = parse_reg(ops[1], line)?;
            let opcode = if mnemonic == "beq" { Opcode::Beq } else { Opcode::Bne };
            Ok(Pending::Branch { opcode, rs, rt, target: parse_ref(ops[2], line)? })
        }
        "j" | "jal" => {
            want(1)?;
            let opcode = if mnemonic == "j" { Opcode::J } else { Opcode::Jal };
            Ok(Pending::Jump { opcode, target: parse_ref(ops[0], line)? })
        }
        "jr" => {
            want(1)?;
            done(Instruction::jr(parse_reg(ops[0], line)?))
        }
        "halt" => {
            want(0)?;
            done(Instruction::halt())
        }
        _ => Err(AsmError::UnknownMnemonic { line: line.number, mnemonic: mnemonic.to_string() }),
    }
}

fn parse_reg(token: &str, line: &Line) -> Result<u8, AsmError> {
    let body = token
        .strip_prefix('$')
        .ok_or_else(|| syntax(line, &format!("expected register, found {token:?}")))?;
    let idx = match body {
        "zero" => 0,
        "v0" => 2,
        "a0" => 4,
        "a1" => 5,
        "sp" => 29,
        "fp" => 30,
        "ra" => 31,
        _ => body
            .parse::<u8>()
            .ok()
            .filter(|r| *r < 32)
            .ok_or_else(|| syntax(line, &format!("bad register {token:?}")))?,
    };
    Ok(idx)
}

/// `offset(base)` memory operand.
fn parse_mem_operand(token: &str, line: &Line) -> Result<(i16, u8), AsmError> {
    let open = token
        .find('(')
        .ok_or_else(|| syntax(line, &format!("expected offset(base), found {token:?}")))?;
    if !token.ends_with(')') {
        return Err(syntax(line, "missing closing paren in memory operand"));
    }
    let offset = check_i16(parse_i64(&token[..open], line)?, line.number, "memory offset")?;
    let base = parse_reg(&token[open + 1..token.len() - 1], line)?;
    Ok((offset, base))
}

fn parse_ref(token: &str, line: &Line) -> Result<Ref, AsmError> {
    if token.starts_with('$') {
        return Err(syntax(line, "expected label or literal, found register"));
    }
    if token
        .starts_with(|c: char| c.is_ascii_digit() || c == '-')
    {
        Ok(Ref::Literal(parse_i64(token, line)?))
    } else if is_label(token) {
        Ok(Ref::Label(token.to_string()))
    } else {
        Err(syntax(line, &format!("malformed target {token:?}")))
    }
}

fn parse_i64(token: &str, line: &Line) -> Result<i64, AsmError> {
    let (neg, body) = match token.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, token),
    };
    let magnitude = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(hex, 16).ok()
    } else {
        body.parse::<i64>().ok()
    }
    .ok_or_else(|| syntax(line, &format!("bad number {token:?}")))?;
    Ok(if neg { -magnitude } else { magnitude })
}

fn parse_u32(token: &str, line: &Line) -> Result<u32, AsmError> {
    let v = parse_i64(token, line)?;
    if !(0..=u32::MAX as i64).contains(&v) {
        return Err(AsmError::ImmediateOutOfRange {
            line: line.number,
            value: v,
            context: "address".into(),
        });
    }
    Ok(v as u32)
}

/// Immediates stored as raw 16-bit patterns (lui/ori): accepts 0..=0xFFFF
/// as well as negative values that fit in i16.
fn parse_u16_bits(token: &str, line: &Line) -> Result<i16, AsmError> {
    let v = parse_i64(token, line)?;
    if (0..=0xffff).contains(&v) {
        Ok(v as u16 as i16)
    } else if (i16::MIN as i64..0).contains(&v) {
        Ok(v as i16)
    } else {
        Err(AsmError::ImmediateOutOfRange {
            line: line.number,
            value: v,
            context: "16-bit immediate".into(),
        })
    }
}

fn check_i16(v: i64, line: usize, context: &str) -> Result<i16, AsmError> {
    i16::try_from(v).map_err(|_| AsmError::ImmediateOutOfRange {
        line,
        value: v,
        context: context.to_string(),
    })
}
