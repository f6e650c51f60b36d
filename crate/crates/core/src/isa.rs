//! The instruction subset: decoded form, a fixed 32-bit encoding, and the
//! disassembler.
//!
//! Instructions occupy 8-byte slots; the encoded word sits in the low four
//! bytes of each slot and the upper four are padding. All instruction
//! addresses are therefore multiples of 8.

use std::fmt;
use thiserror::Error;

/// Byte distance between consecutive instructions.
pub const INSTR_STRIDE: u32 = 8;

/// Largest encodable absolute jump target (26-bit field in 8-byte units).
pub const MAX_JUMP_TARGET: u32 = ((1 << 26) - 1) * INSTR_STRIDE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Opcode {
    Addiu,
    Addu,
    Subu,
    Sll,
    Lw,
    Sw,
    Lb,
    Sb,
    Lui,
    Ori,
    Slt,
    Slti,
    Beq,
    Bne,
    J,
    Jal,
    Jr,
    Halt,
}

impl Opcode {
    pub const ALL: [Opcode; 18] = [
        Opcode::Addiu,
        Opcode::Addu,
        Opcode::Subu,
        Opcode::Sll,
        Opcode::Lw,
        Opcode::Sw,
        Opcode::Lb,
        Opcode::Sb,
        Opcode::Lui,
        Opcode::Ori,
        Opcode::Slt,
        Opcode::Slti,
        Opcode::Beq,
        Opcode::Bne,
        Opcode::J,
        Opcode::Jal,
        Opcode::Jr,
        Opcode::Halt,
    ];

    /// True for LW/SW/LB/SB.
    pub fn is_mem(self) -> bool {
        matches!(self, Opcode::Lw | Opcode::Sw | Opcode::Lb | Opcode::Sb)
    }

    /// Byte width of the memory access, if this is a memory opcode.
    pub fn mem_width(self) -> Option<u8> {
        match self {
            Opcode::Lw | Opcode::Sw => Some(4),
            Opcode::Lb | Opcode::Sb => Some(1),
            _ => None,
        }
    }

    pub fn is_store(self) -> bool {
        matches!(self, Opcode::Sw | Opcode::Sb)
    }
}

/// One decoded instruction. Fields not used by the opcode are zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub opcode: Opcode,
    pub rs: u8,
    pub rt: u8,
    pub rd: u8,
    /// Signed 16-bit immediate. Byte units for memory offsets, instruction
    /// slots for branch displacements, shift amount for SLL, raw low half
    /// for LUI/ORI.
    pub imm: i16,
    /// Absolute target address, J/JAL only. Multiple of 8.
    pub target: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IsaError {
    #[error("illegal instruction word {0:#010x}")]
    IllegalInstructionWord(u32),
    #[error("invalid instruction field: {0}")]
    InvalidField(String),
}

impl Instruction {
    fn zeroed(opcode: Opcode) -> Self {
        Instruction { opcode, rs: 0, rt: 0, rd: 0, imm: 0, target: 0 }
    }

    /// ADDU/SUBU/SLT form: `op rd, rs, rt`.
    pub fn rtype(opcode: Opcode, rd: u8, rs: u8, rt: u8) -> Self {
        debug_assert!(matches!(opcode, Opcode::Addu | Opcode::Subu | Opcode::Slt));
        Instruction { rd, rs, rt, ..Self::zeroed(opcode) }
    }

    /// ADDIU/SLTI/ORI form: `op rt, rs, imm`.
    pub fn itype(opcode: Opcode, rt: u8, rs: u8, imm: i16) -> Self {
        debug_assert!(matches!(opcode, Opcode::Addiu | Opcode::Slti | Opcode::Ori));
        Instruction { rt, rs, imm, ..Self::zeroed(opcode) }
    }

    /// LW/SW/LB/SB form: `op rt, offset(base)`.
    pub fn mem(opcode: Opcode, rt: u8, base: u8, offset: i16) -> Self {
        debug_assert!(opcode.is_mem());
        Instruction { rt, rs: base, imm: offset, ..Self::zeroed(opcode) }
    }

    /// BEQ/BNE form: `op rs, rt, slot-offset`.
    pub fn branch(opcode: Opcode, rs: u8, rt: u8, offset: i16) -> Self {
        debug_assert!(matches!(opcode, Opcode::Beq | Opcode::Bne));
        Instruction { rs, rt, imm: offset, ..Self::zeroed(opcode) }
    }

    pub fn sll(rd: u8, rt: u8, shamt: i16) -> Self {
        Instruction { rd, rt, imm: shamt, ..Self::zeroed(Opcode::Sll) }
    }

    pub fn lui(rt: u8, imm: i16) -> Self {
        Instruction { rt, imm, ..Self::zeroed(Opcode::Lui) }
    }

    pub fn jump(opcode: Opcode, target: u32) -> Self {
        debug_assert!(matches!(opcode, Opcode::J | Opcode::Jal));
        Instruction { target, ..Self::zeroed(opcode) }
    }

    pub fn jr(rs: u8) -> Self {
        Instruction { rs, ..Self::zeroed(Opcode::Jr) }
    }

    pub fn halt() -> Self {
        Self::zeroed(Opcode::Halt)
    }

    /// Checks the per-opcode field invariants (register ranges, unused
    /// fields zero, immediates representable).
    pub fn validate(&self) -> Result<(), IsaError> {
        let err = |m: &str| Err(IsaError::InvalidField(m.to_string()));
        if self.rs > 31 || self.rt > 31 || self.rd > 31 {
            return err("register index out of range");
        }
        let used_target = matches!(self.opcode, Opcode::J | Opcode::Jal);
        if !used_target && self.target != 0 {
            return err("target set on non-jump");
        }
        match self.opcode {
            Opcode::Addu | Opcode::Subu | Opcode::Slt => {
                if self.imm != 0 {
                    return err("imm set on register-form instruction");
                }
            }
            Opcode::Sll => {
                if !(0..=31).contains(&self.imm) {
                    return err("shift amount out of range");
                }
                if self.rs != 0 {
                    return err("rs set on sll");
                }
            }
            Opcode::Lui => {
                if self.rs != 0 || self.rd != 0 {
                    return err("unused register field set on lui");
                }
            }
            Opcode::J | Opcode::Jal => {
                if self.rs != 0 || self.rt != 0 || self.rd != 0 || self.imm != 0 {
                    return err("register field set on jump");
                }
                if !self.target.is_multiple_of(INSTR_STRIDE) {
                    return err("jump target not 8-aligned");
                }
                if self.target > MAX_JUMP_TARGET {
                    return err("jump target exceeds encodable range");
                }
            }
            Opcode::Jr => {
                if self.rt != 0 || self.rd != 0 || self.imm != 0 {
                    return err("unused field set on jr");
                }
            }
            Opcode::Halt
                if (self.rs != 0 || self.rt != 0 || self.rd != 0 || self.imm != 0) => {
                    return err("field set on halt");
                }
            _ => {}
        }
        // I-form instructions leave rd clear.
        if matches!(
            self.opcode,
            Opcode::Addiu
                | Opcode::Slti
                | Opcode::Ori
                | Opcode::Lw
                | Opcode::Sw
                | Opcode::Lb
                | Opcode::Sb
                | Opcode::Beq
                | Opcode::Bne
        ) && self.rd != 0
        {
            return err("rd set on immediate-form instruction");
        }
        Ok(())
    }
}

const FUNCT_SLL: u32 = 0x00;
const FUNCT_JR: u32 = 0x08;
const FUNCT_ADDU: u32 = 0x21;
const FUNCT_SUBU: u32 = 0x23;
const FUNCT_SLT: u32 = 0x2a;

const OP_SPECIAL: u32 = 0x00;
const OP_J: u32 = 0x02;
const OP_JAL: u32 = 0x03;
const OP_BEQ: u32 = 0x04;
const OP_BNE: u32 = 0x05;
const OP_ADDIU: u32 = 0x09;
const OP_SLTI: u32 = 0x0a;
const OP_ORI: u32 = 0x0d;
const OP_LUI: u32 = 0x0f;
const OP_LB: u32 = 0x20;
const OP_LW: u32 = 0x23;
const OP_SB: u32 = 0x28;
const OP_SW: u32 = 0x2b;
const OP_HALT: u32 = 0x3f;

/// Encodes a valid instruction into its 32-bit word. Bijective with
/// [`decode`] over the legal subset.
pub fn encode(instr: &Instruction) -> u32 {
    debug_assert!(instr.validate().is_ok(), "encode of invalid instruction: {instr:?}");
    let rs = (instr.rs as u32) << 21;
    let rt = (instr.rt as u32) << 16;
    let rd = (instr.rd as u32) << 11;
    let imm = (instr.imm as u16) as u32;
    match instr.opcode {
        Opcode::Sll => rt | rd | ((instr.imm as u32 & 0x1f) << 6) | FUNCT_SLL,
        Opcode::Jr => rs | FUNCT_JR,
        Opcode::Addu => rs | rt | rd | FUNCT_ADDU,
        Opcode::Subu => rs | rt | rd | FUNCT_SUBU,
        Opcode::Slt => rs | rt | rd | FUNCT_SLT,
        Opcode::J => (OP_J << 26) | (instr.target / INSTR_STRIDE),
        Opcode::Jal => (OP_JAL << 26) | (instr.target / INSTR_STRIDE),
        Opcode::Beq => (OP_BEQ << 26) | rs | rt | imm,
        Opcode::Bne => (OP_BNE << 26) | rs | rt | imm,
        Opcode::Addiu => (OP_ADDIU << 26) | rs | rt | imm,
        Opcode::Slti => (OP_SLTI << 26) | rs | rt | imm,
        Opcode::Ori => (OP_ORI << 26) | rs | rt | imm,
        Opcode::Lui => (OP_LUI << 26) | rt | imm,
        Opcode::Lb => (OP_LB << 26) | rs | rt | imm,
        Opcode::Lw => (OP_LW << 26) | rs | rt | imm,
        Opcode::Sb => (OP_SB << 26) | rs | rt | imm,
        Opcode::Sw => (OP_SW << 26) | rs | rt | imm,
        Opcode::Halt => OP_HALT << 26,
    }
}

/// Decodes a 32-bit word. Words with nonzero bits in unused fields are
/// rejected so that decode is the exact inverse of [`encode`].
pub fn decode(word: u32) -> Result<Instruction, IsaError> {
    let op = word >> 26;
    let rs = ((word >> 21) & 0x1f) as u8;
    let rt = ((word >> 16) & 0x1f) as u8;
    let rd = ((word >> 11) & 0x1f) as u8;
    let shamt = ((word >> 6) & 0x1f) as u8;
    let funct = word & 0x3f;
    let imm = (word & 0xffff) as u16 as i16;
    let illegal = || Err(IsaError::IllegalInstructionWord(word));

    let instr = match op {
        OP_SPECIAL => match funct {
            FUNCT_SLL => {
                if rs != 0 {
                    return illegal();
                }
                Instruction::sll(rd, rt, shamt as i16)
            }
            FUNCT_JR => {
                if rt != 0 || rd != 0 || shamt != 0 {
                    return illegal();
                }
                Instruction::jr(rs)
            }
            FUNCT_ADDU | FUNCT_SUBU | FUNCT_SLT => {
                if shamt != 0 {
                    return illegal();
                }
                let opc = match funct {
                    FUNCT_ADDU => Opcode::Addu,
                    FUNCT_SUBU => Opcode::Subu,
                    _ => Opcode::Slt,
                };
                Instruction::rtype(opc, rd, rs, rt)
            }
            _ => return illegal(),
        },
        OP_J | OP_JAL => {
            let opc = if op == OP_J { Opcode::J } else { Opcode::Jal };
            Instruction::jump(opc, (word & 0x03ff_ffff) * INSTR_STRIDE)
        }
        OP_BEQ => Instruction::branch(Opcode::Beq, rs, rt, imm),
        OP_BNE => Instruction::branch(Opcode::Bne, rs, rt, imm),
        OP_ADDIU => Instruction::itype(Opcode::Addiu, rt, rs, imm),
        OP_SLTI => Instruction::itype(Opcode::Slti, rt, rs, imm),
        OP_ORI => Instruction::itype(Opcode::Ori, rt, rs, imm),
        OP_LUI => {
            if rs != 0 {
                return illegal();
            }
            Instruction::lui(rt, imm)
        }
        OP_LB => Instruction::mem(Opcode::Lb, rt, rs, imm),
        OP_LW => Instruction::mem(Opcode::Lw, rt, rs, imm),
        OP_SB => Instruction::mem(Opcode::Sb, rt, rs, imm),
        OP_SW => Instruction::mem(Opcode::Sw, rt, rs, imm),
        OP_HALT => {
            if word != OP_HALT << 26 {
                return illegal();
            }
            Instruction::halt()
        }
        _ => return illegal(),
    };
    Ok(instr)
}

/// Decodes a word and renders it as assembly text. The text re-assembles
/// to the same instruction (branch displacements print as raw slot
/// offsets, jumps as absolute hex addresses).
pub fn disassemble(word: u32) -> Result<String, IsaError> {
    Ok(decode(word)?.to_string())
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.opcode {
            Opcode::Addiu => write!(f, "addiu ${},${},{}", self.rt, self.rs, self.imm),
            Opcode::Slti => write!(f, "slti ${},${},{}", self.rt, self.rs, self.imm),
            Opcode::Ori => write!(f, "ori ${},${},{}", self.rt, self.rs, self.imm as u16),
            Opcode::Addu => write!(f, "addu ${},${},${}", self.rd, self.rs, self.rt),
            Opcode::Subu => write!(f, "subu ${},${},${}", self.rd, self.rs, self.rt),
            Opcode::Slt => write!(f, "slt ${},${},${}", self.rd, self.rs, self.rt),
            Opcode::Sll => write!(f, "sll ${},${},{}", self.rd, self.rt, self.imm),
            Opcode::Lw => write!(f, "lw ${},{}(${})", self.rt, self.imm, self.rs),
            Opcode::Sw => write!(f, "sw ${},{}(${})", self.rt, self.imm, self.rs),
            Opcode::Lb => write!(f, "lb ${},{}(${})", self.rt, self.imm, self.rs),
            Opcode::Sb => write!(f, "sb ${},{}(${})", self.rt, self.imm, self.rs),
            Opcode::Lui => write!(f, "lui ${},{}", self.rt, self.imm as u16),
            Opcode::Beq => write!(f, "beq ${},${},{}", self.rs, self.rt, self.imm),
            Opcode::Bne => write!(f, "bne ${},${},{}", self.rs, self.rt, self.imm),
            Opcode::J => write!(f, "j 0x{:x}", self.target),
            Opcode::Jal => write!(f, "jal 0x{:x}", self.target),
            Opcode::Jr => write!(f, "jr ${}", self.rs),
            Opcode::Halt => write!(f, "halt"),
        }
    }
}
