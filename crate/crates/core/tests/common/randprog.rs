//! Seeded generator of small random programs with known per-access
//! expectations: frames of 1-6 variables (some reached through the frame
//! pointer, some through materialized pointers), in- and out-of-bounds
//! accesses, and malloc/free sequences over up to 16 blocks.
//!
//! Ground rules that keep expectations exact: variables are laid out
//! contiguously so subtraction bounds equal declared sizes; every
//! variable is touched at its base before other accesses; each variable
//! keeps one access width; out-of-bounds probes aim past the saved-area
//! boundary (stack) or past the bump frontier (heap), and are loads so
//! execution always completes.

use rand::Rng;

use vrtsim_core::machine::HEAP_BASE;

const INTRINSIC_HEADER: &str = "\
.intrinsic malloc 0x400f98
.intrinsic free 0x400fa0
";

pub struct GeneratedProgram {
    pub source: String,
    /// Number of accesses the generator intended to be out of bounds.
    pub expected_violations: usize,
}

#[derive(Clone, Copy)]
struct Var {
    offset: u32,
    size: u32,
    width: u32,
    via_pointer: bool,
}

struct Frame {
    frame_size: u32,
    saved_area: u32,
    vars: Vec<Var>,
    slots: usize,
}

#[derive(Clone, Copy)]
struct Block {
    slot: usize,
    base: u32,
    size: u32,
    live: bool,
}

fn build_frame(rng: &mut impl Rng, slots: usize) -> Frame {
    let nvars = rng.gen_range(1..=6);
    let mut offset = 8 + 4 * slots as u32;
    let mut vars = Vec::new();
    for _ in 0..nvars {
        let size = 4 * rng.gen_range(1..=6);
        let width = if rng.gen_bool(0.7) { 4 } else { 1 };
        let via_pointer = rng.gen_bool(0.3);
        vars.push(Var { offset, size, width, via_pointer });
        offset += size;
    }
    Frame { frame_size: offset + 8, saved_area: offset, vars, slots }
}

fn prologue(frame: u32) -> String {
    format!(
        "    addiu $29,$29,-{frame}\n    sw $31,{}($29)\n    sw $30,{}($29)\n    addu $30,$0,$29\n",
        frame - 4,
        frame - 8
    )
}

fn epilogue(frame: u32) -> String {
    format!(
        "    addu $29,$0,$30\n    lw $31,{}($29)\n    lw $30,{}($29)\n    addiu $29,$29,{frame}\n    jr $31\n",
        frame - 4,
        frame - 8
    )
}

/// Emits the base-touch pass that harvests every variable, in random
/// order.
fn emit_init(rng: &mut impl Rng, frame: &Frame, out: &mut String) {
    let mut order: Vec<usize> = (0..frame.vars.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    for idx in order {
        let v = frame.vars[idx];
        if v.via_pointer {
            out.push_str(&format!("    addiu $2,$30,{}\n", v.offset));
        } else if v.width == 4 {
            out.push_str(&format!("    sw $0,{}($30)\n", v.offset));
        } else {
            out.push_str(&format!("    sb $0,{}($30)\n", v.offset));
        }
    }
}

struct HeapState {
    bump: u32,
    blocks: Vec<Block>,
    slots_used: usize,
}

impl HeapState {
    fn alloc(&mut self, size: u32) -> Block {
        let base = (self.bump + 7) & !7;
        self.bump = base + size;
        let block = Block { slot: self.slots_used, base, size, live: true };
        self.slots_used += 1;
        self.blocks.push(block);
        block
    }
}

fn emit_ops(
    rng: &mut impl Rng,
    frame: &Frame,
    heap: Option<&mut HeapState>,
    n_ops: usize,
    out: &mut String,
) -> usize {
    let mut violations = 0;
    let mut heap = heap;
    let fp_vars: Vec<Var> = frame.vars.iter().copied().filter(|v| !v.via_pointer).collect();
    let ptr_vars: Vec<Var> = frame.vars.iter().copied().filter(|v| v.via_pointer).collect();

    for _ in 0..n_ops {
        let mut menu: Vec<u8> = Vec::new();
        if !fp_vars.is_empty() {
            menu.extend([0, 0, 0]);
        }
        menu.push(1); // fp out-of-bounds probe
        if !ptr_vars.is_empty() {
            menu.extend([2, 2, 3]);
        }
        if let Some(h) = heap.as_deref() {
            if h.slots_used < frame.slots {
                menu.extend([4, 4]);
            }
            if h.blocks.iter().any(|b| b.live) {
                menu.extend([5, 5, 6, 7]);
            }
            if h.blocks.iter().any(|b| !b.live) {
                menu.push(8);
            }
        }
        match menu[rng.gen_range(0..menu.len())] {
            0 => {
                let v = fp_vars[rng.gen_range(0..fp_vars.len())];
                let delta = v.width * rng.gen_range(0..v.size / v.width);
                let mn = if v.width == 4 { "sw $0" } else { "sb $0" };
                out.push_str(&format!("    {mn},{}($30)\n", v.offset + delta));
            }
            1 => {
                let offset = frame.saved_area + 4 * rng.gen_range(0..12);
                out.push_str(&format!("    lw $9,{offset}($30)\n"));
                violations += 1;
            }
            2 => {
                let v = ptr_vars[rng.gen_range(0..ptr_vars.len())];
                let delta = v.width * rng.gen_range(0..v.size / v.width);
                let mn = if v.width == 4 { "sw $0" } else { "sb $0" };
                out.push_str(&format!("    addiu $2,$30,{}\n    {mn},{delta}($2)\n", v.offset));
            }
            3 => {
                let v = ptr_vars[rng.gen_range(0..ptr_vars.len())];
                let delta = (frame.saved_area - v.offset) + 4 * rng.gen_range(0..8);
                out.push_str(&format!("    addiu $2,$30,{}\n    lb $9,{delta}($2)\n", v.offset));
                violations += 1;
            }
            4 => {
                let h = heap.as_deref_mut().unwrap();
                let size = 8 * rng.gen_range(1..=8);
                let block = h.alloc(size);
                out.push_str(&format!(
                    "    addiu $4,$0,{size}\n    jal malloc\n    sw $2,{}($30)\n",
                    8 + 4 * block.slot as u32
                ));
            }
            5 => {
                let h = heap.as_deref().unwrap();
                let live: Vec<Block> = h.blocks.iter().copied().filter(|b| b.live).collect();
                let b = live[rng.gen_range(0..live.len())];
                let delta = rng.gen_range(0..b.size);
                out.push_str(&format!(
                    "    lw $2,{}($30)\n    sb $0,{delta}($2)\n",
                    8 + 4 * b.slot as u32
                ));
            }
            6 => {
                let h = heap.as_deref().unwrap();
                let live: Vec<Block> = h.blocks.iter().copied().filter(|b| b.live).collect();
                let b = live[rng.gen_range(0..live.len())];
                let delta = (h.bump - b.base) + rng.gen_range(0..32);
                out.push_str(&format!(
                    "    lw $2,{}($30)\n    lb $9,{delta}($2)\n",
                    8 + 4 * b.slot as u32
                ));
                violations += 1;
            }
            7 => {
                let h = heap.as_deref_mut().unwrap();
                let live: Vec<usize> = h
                    .blocks
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| b.live)
                    .map(|(i, _)| i)
                    .collect();
                let idx = live[rng.gen_range(0..live.len())];
                h.blocks[idx].live = false;
                out.push_str(&format!(
                    "    lw $4,{}($30)\n    jal free\n",
                    8 + 4 * h.blocks[idx].slot as u32
                ));
            }
            8 => {
                let h = heap.as_deref().unwrap();
                let dead: Vec<Block> = h.blocks.iter().copied().filter(|b| !b.live).collect();
                let b = dead[rng.gen_range(0..dead.len())];
                out.push_str(&format!(
                    "    lw $2,{}($30)\n    lb $9,0($2)\n",
                    8 + 4 * b.slot as u32
                ));
                violations += 1;
            }
            _ => unreachable!(),
        }
    }
    violations
}

/// One random program: a main frame with optional heap activity, and
/// half the time a callee frame with its own variables and probes.
pub fn generate_program(rng: &mut impl Rng) -> GeneratedProgram {
    let with_heap = rng.gen_bool(0.6);
    let with_callee = rng.gen_bool(0.5);
    let slots = if with_heap { 16 } else { 0 };
    let main_frame = build_frame(rng, slots);

    let mut heap_state =
        with_heap.then(|| HeapState { bump: HEAP_BASE, blocks: Vec::new(), slots_used: 0 });
    let mut expected = 0;

    let mut main_body = String::new();
    emit_init(rng, &main_frame, &mut main_body);
    let main_ops = rng.gen_range(4..=16);
    let pre_ops = rng.gen_range(0..=main_ops);
    expected += emit_ops(rng, &main_frame, heap_state.as_mut(), pre_ops, &mut main_body);

    let mut callee_text = String::new();
    if with_callee {
        let f_frame = build_frame(rng, 0);
        let mut f_body = String::new();
        emit_init(rng, &f_frame, &mut f_body);
        let f_ops = rng.gen_range(2..=8);
        expected += emit_ops(rng, &f_frame, None, f_ops, &mut f_body);
        callee_text = format!("f:\n{}{f_body}{}", prologue(f_frame.frame_size), epilogue(f_frame.frame_size));
        main_body.push_str("    jal f\n");
    }
    expected +=
        emit_ops(rng, &main_frame, heap_state.as_mut(), main_ops - pre_ops, &mut main_body);

    let source = format!(
        ".org 0x400000\n{INTRINSIC_HEADER}main:\n{}{main_body}{}{callee_text}",
        prologue(main_frame.frame_size),
        epilogue(main_frame.frame_size),
    );
    GeneratedProgram { source, expected_violations: expected }
}
