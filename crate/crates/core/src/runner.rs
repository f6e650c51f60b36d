//! Drives a program end to end: machine execution with the monitor and
//! detector attached as synchronous observers, collecting reports,
//! statistics, and optional trace streams.
//!
//! Per committed instruction the order is fixed: the monitor applies its
//! table mutations first, then the detector checks the same instruction's
//! accesses. That way a variable's first access both creates its record
//! and validates against it.

use serde::{Deserialize, Serialize};

use crate::detector::{DetectionPolicy, Detector, Severity, Summary, ViolationReport};
use crate::image::ProgramImage;
use crate::machine::{Machine, MachineError, RunStatus, DEFAULT_STACK_TOP};
use crate::monitor::{Monitor, VrtMutation};
use crate::vrt::Vrt;

#[derive(Debug, Clone, Copy)]
pub struct RunConfig {
    pub max_steps: u64,
    pub policy: DetectionPolicy,
    /// With monitoring off neither the monitor nor the detector runs;
    /// execution semantics are identical either way.
    pub monitoring: bool,
    pub stack_top: u32,
    pub collect_trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            max_steps: 1_000_000,
            policy: DetectionPolicy::default(),
            monitoring: true,
            stack_top: DEFAULT_STACK_TOP,
            collect_trace: false,
        }
    }
}

/// How the run ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Halted,
    BudgetExhausted,
    /// Stopped by the detector under a halting policy.
    HaltedOnViolation,
    Faulted { error: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub instr_count: u64,
    pub vrt_max_occupancy: usize,
    /// 41 bits per entry at peak occupancy.
    pub footprint_bits: u64,
    pub malloc_calls: u64,
    pub realloc_calls: u64,
    pub free_calls: u64,
    pub bound_saturations: u64,
    pub violations: Summary,
    pub status: Termination,
}

pub struct RunOutcome {
    pub status: Termination,
    pub instr_count: u64,
    pub reports: Vec<ViolationReport>,
    pub summary: Summary,
    pub stats: RunStats,
    /// Final table state (post-run; a clean exit flushes stack records).
    pub vrt: Vrt,
    pub mutations: Vec<VrtMutation>,
    pub diagnostics: Vec<String>,
    /// Event trace lines, when requested.
    pub trace: Vec<String>,
    pub machine: Machine,
}

impl RunOutcome {
    pub fn has_violation(&self) -> bool {
        self.reports.iter().any(|r| r.severity == Severity::Violation)
    }

    /// The report artifact: violations plus a by-kind summary.
    pub fn report_json(&self) -> serde_json::Value {
        serde_json::json!({
            "violations": self.reports,
            "summary": self.summary,
        })
    }
}

/// Loads and runs an image under `config`.
pub fn run_program(image: &ProgramImage, config: &RunConfig) -> Result<RunOutcome, MachineError> {
    let mut machine = Machine::load(image, config.stack_top)?;
    let mut vrt = Vrt::new();
    let mut monitor = config.monitoring.then(Monitor::new);
    let mut detector = config.monitoring.then(|| Detector::new(config.policy));
    let mut trace: Vec<String> = Vec::new();

    let mut status = None;
    let mut executed = 0u64;
    while executed < config.max_steps {
        if machine.halted() {
            status = Some(Termination::Halted);
            break;
        }
        match machine.step() {
            Ok(record) => {
                executed += 1;
                if config.collect_trace {
                    trace.push(format!("PC=0x{:08X} EXEC {}", record.pc, record.instr));
                    trace.extend(record.events.iter().map(|e| e.to_string()));
                }
                if let Some(m) = monitor.as_mut() {
                    m.on_step(&record, &machine, &mut vrt);
                }
                if let Some(d) = detector.as_mut() {
                    d.on_step(&record, &machine, &vrt);
                    if d.halt_requested() {
                        status = Some(Termination::HaltedOnViolation);
                        break;
                    }
                }
            }
            Err(e) => {
                status = Some(Termination::Faulted { error: e.to_string() });
                break;
            }
        }
    }
    let status = status.unwrap_or(if machine.halted() {
        Termination::Halted
    } else {
        Termination::BudgetExhausted
    });

    let summary = detector.as_ref().map(|d| d.summary()).unwrap_or_default();
    let mut diagnostics: Vec<String> = Vec::new();
    let mutations = match &monitor {
        Some(m) => {
            diagnostics.extend(m.diagnostics().iter().cloned());
            m.mutations().to_vec()
        }
        None => Vec::new(),
    };
    if let Some(d) = &detector {
        diagnostics.extend(d.diagnostics().iter().cloned());
    }
    let reports = detector.map(Detector::into_reports).unwrap_or_default();
    let counts = machine.alloc_counts();
    let stats = RunStats {
        instr_count: machine.instr_count(),
        vrt_max_occupancy: vrt.max_occupancy(),
        footprint_bits: crate::vrt::footprint_bits_for(vrt.max_occupancy()),
        malloc_calls: counts.malloc,
        realloc_calls: counts.realloc,
        free_calls: counts.free,
        bound_saturations: vrt.bound_saturations(),
        violations: summary.clone(),
        status: status.clone(),
    };
    Ok(RunOutcome {
        status,
        instr_count: machine.instr_count(),
        reports,
        summary,
        stats,
        vrt,
        mutations,
        diagnostics,
        trace,
        machine,
    })
}

/// Maps a bare machine run status onto the termination enum.
impl From<RunStatus> for Termination {
    fn from(s: RunStatus) -> Self {
        match s {
            RunStatus::Halted => Termination::Halted,
            RunStatus::BudgetExhausted => Termination::BudgetExhausted,
            RunStatus::Faulted(e) => Termination::Faulted { error: e.to_string() },
        }
    }
}
