//! The overflow-check unit: validates memory accesses and
//! address-producing arithmetic against the record table and emits
//! violation reports. Pure observer — it never touches machine state.
//!
//! Two checks:
//!
//! * Access check, on every effective address in the stack or heap
//!   segment. Frame-pointer-relative accesses are matched against the
//!   current function's run (the record at or below the address must
//!   cover the whole accessed range). Pointer-based accesses resolve
//!   provenance from the base register's value; a one-past-the-end
//!   pointer still attributes to the record it walked off, so the
//!   dereference that steps outside is caught.
//! * Arithmetic check, on ADDU/ADDIU results whose source value lies in a
//!   record. The result may sit anywhere up to and including one past the
//!   end (the loop-exit idiom); beyond that is a report whose severity
//!   follows the policy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::isa::Opcode;
use crate::machine::{classify, EventKind, Machine, Segment, StepRecord, REG_FP, REG_SP};
use crate::vrt::{EntryKind, Vrt, VrtEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArithAction {
    Warn,
    Violate,
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectionPolicy {
    /// Severity of out-of-record arithmetic results. Dereference checks
    /// always report at violation severity.
    pub arith_action: ArithAction,
    pub halt_on_violation: bool,
}

impl Default for DetectionPolicy {
    fn default() -> Self {
        DetectionPolicy { arith_action: ArithAction::Violate, halt_on_violation: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    ConstantIndex,
    PointerArith,
    HeapOverflow,
    UseAfterFree,
}

impl ViolationKind {
    pub const ALL: [ViolationKind; 4] = [
        ViolationKind::ConstantIndex,
        ViolationKind::PointerArith,
        ViolationKind::HeapOverflow,
        ViolationKind::UseAfterFree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ViolationKind::ConstantIndex => "constant_index",
            ViolationKind::PointerArith => "pointer_arith",
            ViolationKind::HeapOverflow => "heap_overflow",
            ViolationKind::UseAfterFree => "use_after_free",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Violation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntrySnapshot {
    pub base: u32,
    pub bound: u32,
    pub kind: EntryKind,
}

impl From<&VrtEntry> for EntrySnapshot {
    fn from(e: &VrtEntry) -> Self {
        EntrySnapshot { base: e.base, bound: e.bound, kind: e.kind }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub pc: u32,
    pub kind: ViolationKind,
    pub addr: u32,
    pub entry: Option<EntrySnapshot>,
    pub severity: Severity,
    pub instr_index: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub total: usize,
    pub by_kind: BTreeMap<String, u64>,
}

pub struct Detector {
    policy: DetectionPolicy,
    reports: Vec<ViolationReport>,
    diagnostics: Vec<String>,
    halt_requested: bool,
}

impl Detector {
    pub fn new(policy: DetectionPolicy) -> Self {
        Detector { policy, reports: Vec::new(), diagnostics: Vec::new(), halt_requested: false }
    }

    pub fn reports(&self) -> &[ViolationReport] {
        &self.reports
    }

    pub fn into_reports(self) -> Vec<ViolationReport> {
        self.reports
    }

    pub fn diagnostics(&self) -> &[String] {
        &self.diagnostics
    }

    /// True once a violation-severity report landed under a halting
    /// policy; the driver stops the run.
    pub fn halt_requested(&self) -> bool {
        self.halt_requested
    }

    pub fn summary(&self) -> Summary {
        let mut by_kind: BTreeMap<String, u64> = ViolationKind::ALL
            .iter()
            .map(|k| (k.name().to_string(), 0))
            .collect();
        for r in &self.reports {
            *by_kind.get_mut(r.kind.name()).expect("all kinds present") += 1;
        }
        Summary { total: self.reports.len(), by_kind }
    }

    pub fn on_step(&mut self, record: &StepRecord, machine: &Machine, vrt: &Vrt) {
        for event in &record.events {
            match event.kind {
                EventKind::EffectiveAddress { base_reg, base_value, addr, width, .. } => {
                    self.check_access(
                        event.pc,
                        record.index,
                        base_reg,
                        base_value,
                        addr,
                        width as u32,
                        vrt,
                        machine,
                    );
                }
                EventKind::RegWrite { reg, value }
                    if matches!(record.instr.opcode, Opcode::Addu | Opcode::Addiu)
                        && reg == arith_dest(&record.instr)
                        && !matches!(reg, 0 | REG_SP | REG_FP | 31) =>
                {
                    self.check_arith(event.pc, record.index, record, value, vrt);
                }
                _ => {}
            }
        }
    }

    /// Validates one memory access of `width` bytes at `addr`.
    #[allow(clippy::too_many_arguments)]
    fn check_access(
        &mut self,
        pc: u32,
        instr_index: u64,
        base_reg: u8,
        base_value: u32,
        addr: u32,
        width: u32,
        vrt: &Vrt,
        machine: &Machine,
    ) {
        match classify(addr) {
            Some(Segment::Stack) | Some(Segment::Heap) => {}
            _ => return, // text/data are not recorded
        }
        // Stack-pointer traffic is frame bookkeeping (register saves and
        // restores), not variable access.
        if base_reg == REG_SP {
            return;
        }

        if base_reg == REG_FP {
            // Constant-index case: the access must land inside the
            // current function's record that starts at or below it.
            let entry = vrt
                .top_run()
                .filter(|e| e.base <= addr)
                .max_by_key(|e| e.base);
            let ok = entry.is_some_and(|e| range_within(addr, width, e));
            if !ok {
                self.report(ViolationReport {
                    pc,
                    kind: ViolationKind::ConstantIndex,
                    addr,
                    entry: entry.map(EntrySnapshot::from),
                    severity: Severity::Violation,
                    instr_index,
                });
            }
            return;
        }

        if let Some(entry) = vrt.find_containing_closed(base_value) {
            if !range_within(addr, width, entry) {
                let kind = match entry.kind {
                    EntryKind::Heap => ViolationKind::HeapOverflow,
                    EntryKind::Stack => ViolationKind::PointerArith,
                };
                self.report(ViolationReport {
                    pc,
                    kind,
                    addr,
                    entry: Some(entry.into()),
                    severity: Severity::Violation,
                    instr_index,
                });
            }
            return;
        }

        // No provenance. A hit inside a retired heap block is a stale
        // pointer; anything else (register save areas, argument slots,
        // never-recorded space) is not ours to judge.
        if classify(addr) == Some(Segment::Heap)
            && machine.live_block_containing(addr).is_none()
            && machine.dead_block_containing(addr).is_some()
        {
            self.report(ViolationReport {
                pc,
                kind: ViolationKind::UseAfterFree,
                addr,
                entry: None,
                severity: Severity::Violation,
                instr_index,
            });
        }
    }

    /// Validates an ADDU/ADDIU result against the record its first
    /// resolving source value belongs to.
    fn check_arith(
        &mut self,
        pc: u32,
        instr_index: u64,
        record: &StepRecord,
        result: u32,
        vrt: &Vrt,
    ) {
        let severity = match self.policy.arith_action {
            ArithAction::Ignore => return,
            ArithAction::Warn => Severity::Warning,
            ArithAction::Violate => Severity::Violation,
        };
        let sources: &[u32] = match record.instr.opcode {
            Opcode::Addu => &[record.rs_value, record.rt_value],
            _ => &[record.rs_value],
        };
        let mut resolved = sources.iter().filter_map(|v| vrt.find_containing_closed(*v));
        let Some(entry) = resolved.next() else { return };
        if resolved.next().is_some() {
            self.diagnostics.push(format!(
                "pc 0x{pc:08X}: both arithmetic sources resolve to records; using the first"
            ));
        }
        // Closed upper end: one past the end is the loop-exit idiom.
        let in_range = result >= entry.base && result <= entry.end();
        if !in_range {
            self.report(ViolationReport {
                pc,
                kind: ViolationKind::PointerArith,
                addr: result,
                entry: Some(entry.into()),
                severity,
                instr_index,
            });
        }
    }

    fn report(&mut self, report: ViolationReport) {
        if self.halt_requested {
            return;
        }
        let halting = self.policy.halt_on_violation && report.severity == Severity::Violation;
        self.reports.push(report);
        if halting {
            self.halt_requested = true;
        }
    }
}

fn arith_dest(instr: &crate::isa::Instruction) -> u8 {
    match instr.opcode {
        Opcode::Addu => instr.rd,
        _ => instr.rt,
    }
}

fn range_within(addr: u32, width: u32, entry: &VrtEntry) -> bool {
    addr >= entry.base && addr as u64 + width as u64 <= entry.base as u64 + entry.bound as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;
    use crate::machine::{Machine, RunStatus, DEFAULT_STACK_TOP, HEAP_BASE};
    use crate::monitor::Monitor;

    fn run_detected(src: &str, policy: DetectionPolicy) -> (Detector, RunStatus, Machine) {
        let image = assemble(src).unwrap();
        let mut machine = Machine::load(&image, DEFAULT_STACK_TOP).unwrap();
        let mut monitor = Monitor::new();
        let mut detector = Detector::new(policy);
        let mut vrt = crate::vrt::Vrt::new();
        let status = loop {
            if machine.halted() {
                break RunStatus::Halted;
            }
            if machine.instr_count() >= 100_000 {
                break RunStatus::BudgetExhausted;
            }
            match machine.step() {
                Ok(record) => {
                    monitor.on_step(&record, &machine, &mut vrt);
                    detector.on_step(&record, &machine, &vrt);
                    if detector.halt_requested() {
                        break RunStatus::Halted;
                    }
                }
                Err(e) => break RunStatus::Faulted(e),
            }
        };
        (detector, status, machine)
    }

    const FRAME: &str = "\
main:
    addiu $29,$29,-56
    sw $31,52($29)
    sw $30,48($29)
    addu $30,$0,$29
    sw $0,16($30)
    sw $0,40($30)
    sw $0,44($30)
";
    const EPILOGUE: &str = "\
    addu $29,$0,$30
    lw $31,52($29)
    lw $30,48($29)
    addiu $29,$29,56
    jr $31
";

    #[test]
    fn constant_offset_beyond_frame_variable_is_flagged() {
        // array at fp+16 bound 24; fp+56 is element 10 of a 6-int array
        let src = format!("{FRAME}    lw $2,56($30)\n{EPILOGUE}");
        let (det, status, _) = run_detected(&src, DetectionPolicy::default());
        assert_eq!(status, RunStatus::Halted);
        assert_eq!(det.reports().len(), 1);
        let r = &det.reports()[0];
        assert_eq!(r.kind, ViolationKind::ConstantIndex);
        assert_eq!(r.addr, DEFAULT_STACK_TOP - 56 + 56);
        assert_eq!(r.severity, Severity::Violation);
    }

    #[test]
    fn in_bounds_element_access_is_clean() {
        let src = format!("{FRAME}    lw $2,20($30)\n{EPILOGUE}");
        let (det, status, _) = run_detected(&src, DetectionPolicy::default());
        assert_eq!(status, RunStatus::Halted);
        assert!(det.reports().is_empty());
        assert_eq!(det.summary().total, 0);
        assert!(det.summary().by_kind.values().all(|&v| v == 0));
    }

    const HEAP_PROG_HEAD: &str = "\
.intrinsic malloc 0x400f98
.intrinsic free 0x400fa0
main:
    addiu $4,$0,1024
    jal malloc
";

    #[test]
    fn heap_store_at_block_end_is_flagged() {
        let src = format!("{HEAP_PROG_HEAD}    addiu $8,$0,1024\n    addu $9,$2,$8\n    sw $0,0($9)\n    halt\n");
        // the addu lands exactly one past the end: allowed; the store is not
        let (det, status, _) = run_detected(&src, DetectionPolicy::default());
        assert_eq!(status, RunStatus::Halted);
        assert_eq!(det.reports().len(), 1);
        let r = &det.reports()[0];
        assert_eq!(r.kind, ViolationKind::HeapOverflow);
        assert_eq!(r.addr, HEAP_BASE + 1024);
        assert_eq!(r.entry.unwrap().bound, 1024);
    }

    #[test]
    fn constant_heap_offset_past_bound_is_flagged() {
        let src = format!("{HEAP_PROG_HEAD}    sw $0,2000($2)\n    halt\n");
        let (det, status, _) = run_detected(&src, DetectionPolicy::default());
        assert_eq!(status, RunStatus::Halted);
        assert_eq!(det.reports().len(), 1);
        assert_eq!(det.reports()[0].kind, ViolationKind::HeapOverflow);
    }

    #[test]
    fn load_from_freed_block_is_use_after_free() {
        let src = format!(
            "{HEAP_PROG_HEAD}    addu $8,$0,$2\n    addu $4,$0,$8\n    jal free\n    lw $9,0($8)\n    halt\n"
        );
        let (det, status, _) = run_detected(&src, DetectionPolicy::default());
        assert_eq!(status, RunStatus::Halted);
        assert_eq!(det.reports().len(), 1);
        assert_eq!(det.reports()[0].kind, ViolationKind::UseAfterFree);
        assert!(det.reports()[0].entry.is_none());
    }

    #[test]
    fn one_past_end_arithmetic_is_allowed_but_not_two() {
        // char X[6] at fp+42 (saved area at 48); walk a pointer up
        let walk = |steps: usize| {
            let mut src = String::from(
                "main:
    addiu $29,$29,-56
    sw $31,52($29)
    sw $30,48($29)
    addu $30,$0,$29
    sw $0,16($30)
    addiu $2,$30,42
",
            );
            for _ in 0..steps {
                src.push_str("    addiu $2,$2,1\n");
            }
            src.push_str(EPILOGUE);
            src
        };
        // X+5 -> X+6: one past the end, fine
        let (det, _, _) = run_detected(&walk(6), DetectionPolicy::default());
        assert!(det.reports().is_empty());
        // the 7th step computes X+7
        let (det, _, _) = run_detected(&walk(7), DetectionPolicy::default());
        assert_eq!(det.reports().len(), 1);
        let r = &det.reports()[0];
        assert_eq!(r.kind, ViolationKind::PointerArith);
        assert_eq!(r.addr, DEFAULT_STACK_TOP - 56 + 42 + 7);
    }

    #[test]
    fn negative_offset_through_one_past_pointer_is_legal() {
        // $9 = block end; the last byte is reachable back through it
        let src = format!(
            "{HEAP_PROG_HEAD}    addiu $8,$0,1024\n    addu $9,$2,$8\n    sb $0,-1($9)\n    halt\n"
        );
        let (det, status, _) = run_detected(&src, DetectionPolicy::default());
        assert_eq!(status, RunStatus::Halted);
        assert!(det.reports().is_empty());
    }

    #[test]
    fn arith_on_plain_integers_never_reports() {
        let src = "\
main:
    addiu $8,$0,100
    addiu $9,$0,28
    addu $10,$8,$9
    jr $31
";
        let (det, status, _) = run_detected(src, DetectionPolicy::default());
        assert_eq!(status, RunStatus::Halted);
        assert!(det.reports().is_empty());
    }

    #[test]
    fn arith_policy_controls_severity() {
        let src = "\
main:
    addiu $29,$29,-56
    sw $31,52($29)
    sw $30,48($29)
    addu $30,$0,$29
    sw $0,16($30)
    addiu $2,$30,16
    addiu $2,$2,40
";
        let full = format!("{src}{EPILOGUE}");
        let warn = DetectionPolicy { arith_action: ArithAction::Warn, ..Default::default() };
        let (det, _, _) = run_detected(&full, warn);
        assert_eq!(det.reports().len(), 1);
        assert_eq!(det.reports()[0].severity, Severity::Warning);

        let ignore = DetectionPolicy { arith_action: ArithAction::Ignore, ..Default::default() };
        let (det, _, _) = run_detected(&full, ignore);
        assert!(det.reports().is_empty());

        let (det, _, _) = run_detected(&full, DetectionPolicy::default());
        assert_eq!(det.reports()[0].severity, Severity::Violation);
    }

    #[test]
    fn halting_policy_stops_after_first_violation() {
        // two bad stores; halting policy records only the first
        let src = format!("{FRAME}    sw $0,100($30)\n    sw $0,104($30)\n{EPILOGUE}");
        let halting = DetectionPolicy { halt_on_violation: true, ..Default::default() };
        let (det, _, machine) = run_detected(&src, halting);
        assert_eq!(det.reports().len(), 1);
        assert!(!machine.halted(), "stopped by the detector, not the program");

        let (det, _, _) = run_detected(&src, DetectionPolicy::default());
        assert_eq!(det.reports().len(), 2);
    }

    #[test]
    fn detector_presence_leaves_architecture_alone() {
        let src = format!("{FRAME}    sw $0,100($30)\n{EPILOGUE}");
        let image = assemble(&src).unwrap();
        let mut bare = Machine::load(&image, DEFAULT_STACK_TOP).unwrap();
        let (status, _) = bare.run_collect(10_000);
        assert_eq!(status, RunStatus::Halted);
        let (_, _, observed) = run_detected(&src, DetectionPolicy::default());
        assert_eq!(observed.instr_count(), bare.instr_count());
    }
}
