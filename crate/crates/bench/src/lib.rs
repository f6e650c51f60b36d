//! Benchmark-only crate. The benchmarks live in `benches/simulator.rs`;
//! this library exposes the fixture programs they share.

use vrtsim_core::corpus::{self, CorpusClass, Pattern};

/// Source text of one bundled corpus case.
pub fn corpus_source(pattern: Pattern, class: CorpusClass) -> String {
    corpus::all_cases()
        .into_iter()
        .find(|(case, _)| case.pattern == pattern && case.class == class)
        .map(|(_, source)| source)
        .expect("case exists")
}
