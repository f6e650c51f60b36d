//! A bundled micro-corpus: five overflow patterns, each in four classes
//! (`ok`, `min`, `medium`, `large`), plus a manifest of expected outcomes
//! and a checker that replays every case against its expectation.
//!
//! Class semantics: `ok` touches exactly the last legal byte; `min`
//! overruns by a single byte; `medium` overruns by up to eight bytes;
//! `large` overruns by at least four times the buffer (the heap-copy
//! pattern instead copies 1200 bytes into a 1024-byte block).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asm::assemble;
use crate::detector::ViolationKind;
use crate::runner::{run_program, RunConfig, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    ConstantIndexStack,
    LoopPointerStack,
    HeapStrcpy,
    ReallocGrowShrink,
    NestedFrames,
}

impl Pattern {
    pub const ALL: [Pattern; 5] = [
        Pattern::ConstantIndexStack,
        Pattern::LoopPointerStack,
        Pattern::HeapStrcpy,
        Pattern::ReallocGrowShrink,
        Pattern::NestedFrames,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::ConstantIndexStack => "constant_index_stack",
            Pattern::LoopPointerStack => "loop_pointer_stack",
            Pattern::HeapStrcpy => "heap_strcpy",
            Pattern::ReallocGrowShrink => "realloc_grow_shrink",
            Pattern::NestedFrames => "nested_frames",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusClass {
    Ok,
    Min,
    Medium,
    Large,
}

impl CorpusClass {
    pub const ALL: [CorpusClass; 4] =
        [CorpusClass::Ok, CorpusClass::Min, CorpusClass::Medium, CorpusClass::Large];

    pub fn name(self) -> &'static str {
        match self {
            CorpusClass::Ok => "ok",
            CorpusClass::Min => "min",
            CorpusClass::Medium => "medium",
            CorpusClass::Large => "large",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    Clean,
    Violation(ViolationKind),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusCase {
    pub name: String,
    pub pattern: Pattern,
    pub class: CorpusClass,
    pub file: String,
    pub expected: Expected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub cases: Vec<CorpusCase>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("case {name}: {msg}")]
    Case { name: String, msg: String },
}

/// All twenty cases with their program text. Deterministic: two calls
/// produce identical content.
pub fn all_cases() -> Vec<(CorpusCase, String)> {
    let mut out = Vec::new();
    for pattern in Pattern::ALL {
        for class in CorpusClass::ALL {
            let name = format!("{}_{}", pattern.name(), class.name());
            let source = emit(pattern, class);
            let expected = expected_outcome(pattern, class);
            let case = CorpusCase {
                name: name.clone(),
                pattern,
                class,
                file: format!("{name}.s"),
                expected,
            };
            out.push((case, source));
        }
    }
    out
}

fn expected_outcome(pattern: Pattern, class: CorpusClass) -> Expected {
    if class == CorpusClass::Ok {
        return Expected::Clean;
    }
    Expected::Violation(match pattern {
        Pattern::ConstantIndexStack | Pattern::NestedFrames => ViolationKind::ConstantIndex,
        Pattern::LoopPointerStack => ViolationKind::PointerArith,
        Pattern::HeapStrcpy | Pattern::ReallocGrowShrink => ViolationKind::HeapOverflow,
    })
}

/// Writes the twenty programs and `manifest.json` into `dir`.
pub fn generate(dir: &Path) -> Result<Manifest, CorpusError> {
    fs::create_dir_all(dir)?;
    let mut cases = Vec::new();
    for (case, source) in all_cases() {
        fs::write(dir.join(&case.file), source)?;
        cases.push(case);
    }
    let manifest = Manifest { cases };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Result of replaying one case against its manifest expectation.
#[derive(Debug, Clone, Serialize)]
pub struct CaseResult {
    pub name: String,
    pub class: CorpusClass,
    pub instr_count: u64,
    pub expected: Expected,
    pub actual: Expected,
    pub matched: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassRow {
    pub class: CorpusClass,
    pub cases: usize,
    pub avg_instr_count: f64,
    pub all_matched: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub results: Vec<CaseResult>,
    pub rows: Vec<ClassRow>,
}

impl CheckReport {
    pub fn mismatches(&self) -> impl Iterator<Item = &CaseResult> {
        self.results.iter().filter(|r| !r.matched)
    }

    pub fn all_matched(&self) -> bool {
        self.results.iter().all(|r| r.matched)
    }

    /// Per-class table: class, average instruction count, detected as
    /// expected.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str("Class    Cases  Instruction Count (Avg.)  Detected?\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{:<8} {:>5}  {:>24.1}  {}\n",
                row.class.name(),
                row.cases,
                row.avg_instr_count,
                if row.all_matched { "Yes" } else { "NO" }
            ));
        }
        out
    }
}

/// Runs one assembled case and classifies the outcome. Non-halting
/// policy, so instruction counts are comparable across configurations.
pub fn run_case(source: &str, name: &str) -> Result<(Expected, u64), CorpusError> {
    let image = assemble(source)
        .map_err(|e| CorpusError::Case { name: name.to_string(), msg: e.to_string() })?;
    let outcome = run_program(&image, &RunConfig::default())
        .map_err(|e| CorpusError::Case { name: name.to_string(), msg: e.to_string() })?;
    if !matches!(outcome.status, Termination::Halted) {
        return Err(CorpusError::Case {
            name: name.to_string(),
            msg: format!("did not halt: {:?}", outcome.status),
        });
    }
    let actual = match outcome
        .reports
        .iter()
        .find(|r| r.severity == crate::detector::Severity::Violation)
    {
        Some(first) => Expected::Violation(first.kind),
        None => Expected::Clean,
    };
    Ok((actual, outcome.instr_count))
}

/// Replays every manifest case from `dir` and compares outcomes.
pub fn check(dir: &Path) -> Result<CheckReport, CorpusError> {
    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut results = Vec::new();
    for case in &manifest.cases {
        let source = fs::read_to_string(dir.join(&case.file))?;
        let (actual, instr_count) = run_case(&source, &case.name)?;
        results.push(CaseResult {
            name: case.name.clone(),
            class: case.class,
            instr_count,
            expected: case.expected,
            actual,
            matched: actual == case.expected,
        });
    }
    let rows = CorpusClass::ALL
        .iter()
        .map(|&class| {
            let of_class: Vec<_> = results.iter().filter(|r| r.class == class).collect();
            ClassRow {
                class,
                cases: of_class.len(),
                avg_instr_count: of_class.iter().map(|r| r.instr_count as f64).sum::<f64>()
                    / of_class.len().max(1) as f64,
                all_matched: of_class.iter().all(|r| r.matched),
            }
        })
        .collect();
    Ok(CheckReport { results, rows })
}

const INTRINSIC_HEADER: &str = "\
.intrinsic malloc 0x400f98
.intrinsic free 0x400fa0
.intrinsic realloc 0x400fa8
";

fn prologue(frame: u32) -> String {
    format!(
        "    addiu $29,$29,-{frame}
    sw $31,{ra}($29)
    sw $30,{fp}($29)
    addu $30,$0,$29
",
        ra = frame - 4,
        fp = frame - 8,
    )
}

fn epilogue(frame: u32) -> String {
    format!(
        "    addu $29,$0,$30
    lw $31,{ra}($29)
    lw $30,{fp}($29)
    addiu $29,$29,{frame}
    jr $31
",
        ra = frame - 4,
        fp = frame - 8,
    )
}

fn emit(pattern: Pattern, class: CorpusClass) -> String {
    match pattern {
        Pattern::ConstantIndexStack => constant_index_stack(class),
        Pattern::LoopPointerStack => loop_pointer_stack(class),
        Pattern::HeapStrcpy => heap_strcpy(class),
        Pattern::ReallocGrowShrink => realloc_grow_shrink(class),
        Pattern::NestedFrames => nested_frames(class),
    }
}

/// int i, n; int a[6]; a[k] with a constant frame-pointer offset.
/// Variables at 16, 20, 24; the array spans 24..48 up to the saved area.
/// The medium access is a load so the saved return address survives and
/// the program still halts.
fn constant_index_stack(class: CorpusClass) -> String {
    let access = match class {
        CorpusClass::Ok => "sw $0,44($30)",     // a[5], last legal word
        CorpusClass::Min => "sb $0,48($30)",    // one byte past the array
        CorpusClass::Medium => "lw $9,52($30)", // last byte 8 past the bound
        CorpusClass::Large => "sw $0,144($30)", // 96 bytes past = 4x the buffer
    };
    format!(
        "# constant-index overflow, {class} class
.org 0x400000
main:
{prologue}    sw $0,16($30)
    sw $0,20($30)
    addiu $2,$30,24
    sw $0,24($30)
    {access}
{epilogue}",
        class = class.name(),
        prologue = prologue(56),
        epilogue = epilogue(56),
    )
}

/// char X[6] walked by a byte pointer in a counted loop. X sits at 42 so
/// its subtraction bound is exactly 6; the walk runs `n` iterations. The
/// overflow classes shred the saved registers, so the program ends with
/// `halt` rather than an epilogue.
fn loop_pointer_stack(class: CorpusClass) -> String {
    let iterations = match class {
        CorpusClass::Ok => 6,
        CorpusClass::Min => 7,
        CorpusClass::Medium => 14,
        CorpusClass::Large => 30,
    };
    format!(
        "# loop pointer overflow, {class} class
.org 0x400000
main:
{prologue}    addiu $2,$30,42
    sw $2,16($30)
    sw $0,20($30)
loop:
    lw $3,20($30)
    slti $4,$3,{iterations}
    beq $4,$0,done
    lw $2,16($30)
    sb $0,0($2)
    addiu $2,$2,1
    sw $2,16($30)
    lw $3,20($30)
    addiu $3,$3,1
    sw $3,20($30)
    j loop
done:
    halt
",
        class = class.name(),
        prologue = prologue(56),
    )
}

/// Byte copy of `n` bytes from a 1200-byte stack buffer into a
/// malloc(1024) block, then free.
fn heap_strcpy(class: CorpusClass) -> String {
    let copy_len = match class {
        CorpusClass::Ok => 1024,
        CorpusClass::Min => 1025,
        CorpusClass::Medium => 1032,
        CorpusClass::Large => 1200,
    };
    format!(
        "# heap copy overflow, {class} class
.org 0x400000
{INTRINSIC_HEADER}main:
{prologue}    addiu $4,$0,1024
    jal malloc
    sw $2,16($30)
    addiu $6,$30,24
    lw $7,16($30)
    addiu $8,$0,0
copy:
    slti $9,$8,{copy_len}
    beq $9,$0,done
    lb $10,0($6)
    sb $10,0($7)
    addiu $6,$6,1
    addiu $7,$7,1
    addiu $8,$8,1
    j copy
done:
    lw $4,16($30)
    jal free
{epilogue}",
        class = class.name(),
        prologue = prologue(1232),
        epilogue = epilogue(1232),
    )
}

/// malloc(8), grow to 16, shrink back to 8, then store at offset `k` of
/// the final block.
fn realloc_grow_shrink(class: CorpusClass) -> String {
    let offset = match class {
        CorpusClass::Ok => 7,
        CorpusClass::Min => 8,
        CorpusClass::Medium => 15,
        CorpusClass::Large => 40, // 32 bytes past = 4x the final block
    };
    format!(
        "# realloc grow/shrink overflow, {class} class
.org 0x400000
{INTRINSIC_HEADER}main:
{prologue}    addiu $4,$0,8
    jal malloc
    sw $2,16($30)
    sw $0,20($30)
    lw $7,16($30)
    sb $0,0($7)
    sb $0,7($7)
    lw $4,16($30)
    addiu $5,$0,16
    jal realloc
    sw $2,16($30)
    lw $7,16($30)
    sb $0,15($7)
    lw $4,16($30)
    addiu $5,$0,8
    jal realloc
    sw $2,16($30)
    lw $7,16($30)
    sb $0,{offset}($7)
    lw $4,16($30)
    jal free
{epilogue}",
        class = class.name(),
        prologue = prologue(56),
        epilogue = epilogue(56),
    )
}

/// main calls f; f overruns its own top variable toward the saved area.
/// Exercises the associated-bit alternation and per-function flush. The
/// min/medium probes are loads so f's saved registers stay intact.
fn nested_frames(class: CorpusClass) -> String {
    let access = match class {
        CorpusClass::Ok => "sb $0,23($30)",     // last byte of y at 12..24
        CorpusClass::Min => "lb $9,24($30)",    // first saved-area byte
        CorpusClass::Medium => "lb $9,31($30)", // 8 past the bound
        CorpusClass::Large => "sw $0,72($30)",  // 48 past = 4x the 12-byte variable
    };
    format!(
        "# nested-frame overflow, {class} class
.org 0x400000
main:
{main_prologue}    sw $0,16($30)
    sw $0,20($30)
    jal f
    sw $0,16($30)
{main_epilogue}f:
{f_prologue}    sw $0,8($30)
    sw $0,12($30)
    {access}
{f_epilogue}",
        class = class.name(),
        main_prologue = prologue(56),
        main_epilogue = epilogue(56),
        f_prologue = prologue(32),
        f_epilogue = epilogue(32),
    )
}
