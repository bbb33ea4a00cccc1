//! Accumulated bounds for cells advanced by concurrent increment chains.
//!
//! A cursor cell is a memory cell whose stores either establish a base
//! value or advance the previous value by a positive constant (a
//! load-increment-store chain). When every chain's increment is a known
//! constant and every executing context has a countable multiplicity
//! (spawns in the entry function, counted loops), the sum A of all
//! increments bounds the cell in every interleaving: any value read from
//! the cell lies within base + [0, A - d], where d is the reader's own
//! not-yet-applied chain increment. The numeric pass consumes these
//! facts; cells that fail the discipline are reported with a reason and
//! analyzed as unbounded.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use uriah_hir::*;

use crate::alias::{AbsObj, CellKey, FieldKey, PointsTo};

#[derive(Debug, Default)]
pub struct SharedInfo {
    /// Validated cursor cells and their accumulated increment total.
    pub cursors: BTreeMap<CellKey, i64>,
    /// Cells with increment chains that could not be bounded.
    pub failed: BTreeMap<CellKey, String>,
    /// For each chain's load and the cell it reads: the chain's own
    /// increment, subtracted from the accumulated bound at that load.
    pub chain_load_delta: HashMap<(InstrRef, CellKey), i64>,
    /// Stores that are part of an increment chain (everything else that
    /// writes a cursor cell establishes its base).
    pub chain_stores: BTreeSet<(InstrRef, CellKey)>,
}

/// The cells a store writes (as opposed to the cells a load may read).
pub fn store_cells(pt: &PointsTo, ptr: Operand) -> BTreeSet<CellKey> {
    let disp = pt.disp_operand(ptr);
    pt.pts_operand(ptr)
        .into_iter()
        .map(|obj| match disp {
            Some(d) if d >= 0 => (obj, FieldKey::Off(d as u64)),
            _ => (obj, FieldKey::Any),
        })
        .collect()
}

/// The cells a load may read.
pub fn load_cells(pt: &PointsTo, ptr: Operand) -> BTreeSet<CellKey> {
    let disp = pt.disp_operand(ptr);
    let mut out = BTreeSet::new();
    for obj in pt.pts_operand(ptr) {
        match disp {
            Some(d) if d >= 0 => {
                out.insert((obj, FieldKey::Off(d as u64)));
                out.insert((obj, FieldKey::Any));
            }
            _ => {
                for key in pt.mem_pts.keys().filter(|(o, _)| *o == obj) {
                    out.insert(*key);
                }
                out.insert((obj, FieldKey::Any));
            }
        }
    }
    out
}

struct ChainEnd {
    delta: i64,
    load: InstrRef,
}

pub fn analyze(prog: &HirProgram, index: &ProgramIndex, pt: &PointsTo) -> SharedInfo {
    let mut info = SharedInfo::default();

    // Execution contexts: the entry function runs once; each spawn in the
    // entry function runs its target with the spawn block's loop
    // multiplicity. Call counts multiply through counted loops along an
    // acyclic call graph.
    let main_counts = call_counts(prog, index, prog.entry);
    let mut spawn_counts: Vec<(InstrRef, Option<u64>, HashMap<FuncId, Option<u64>>)> = Vec::new();
    for sp in &index.spawns {
        let Op::Spawn { func, .. } = &prog.instr(*sp).op else { continue };
        let mult = if sp.func == prog.entry {
            index.func(prog.entry).iteration_multiplicity(sp.block)
        } else {
            None // threads spawned off the entry function are uncountable
        };
        spawn_counts.push((*sp, mult, call_counts(prog, index, *func)));
    }

    // Gather candidate chains per cell.
    struct Chain {
        store: InstrRef,
        cell: CellKey,
        delta: i64,
        load: InstrRef,
    }
    let mut chains: Vec<Chain> = Vec::new();
    let mut failed: BTreeMap<CellKey, String> = BTreeMap::new();
    for (r, ins) in prog.all_instrs() {
        let Op::Store { ptr, value, .. } = &ins.op else { continue };
        for cell in store_cells(pt, *ptr) {
            if !reaches_cell_load(prog, pt, *value, cell, &mut HashSet::new(), 0) {
                continue; // a base store for this cell
            }
            match chain_walk(prog, pt, *value, cell, 0) {
                Some(end) if end.delta >= 0 => {
                    chains.push(Chain { store: r, cell, delta: end.delta, load: end.load });
                }
                _ => {
                    failed.entry(cell).or_insert_with(|| "non-constant-increment".to_string());
                }
            }
        }
    }

    // Sum every chain's contribution across its execution contexts.
    let mut totals: BTreeMap<CellKey, i128> = BTreeMap::new();
    for ch in &chains {
        if failed.contains_key(&ch.cell) {
            continue;
        }
        let f = ch.store.func;
        let local = index.func(f).iteration_multiplicity(ch.store.block);
        let Some(local) = local else {
            failed.insert(ch.cell, "non-constant-increment".to_string());
            continue;
        };
        let mut runs: i128 = 0;
        let mut countable = true;
        if let Some(c) = main_counts.get(&f) {
            match c {
                Some(n) => runs += *n as i128,
                None => countable = false,
            }
        }
        for (_, mult, counts) in &spawn_counts {
            if let Some(c) = counts.get(&f) {
                match (mult, c) {
                    (Some(m), Some(n)) => runs += *m as i128 * *n as i128,
                    _ => countable = false,
                }
            }
        }
        if !countable {
            failed.insert(ch.cell, "thread-count-unknown".to_string());
            continue;
        }
        let add = ch.delta as i128 * local as i128 * runs;
        let t = totals.entry(ch.cell).or_insert(0);
        *t += add;
        if *t > i64::MAX as i128 {
            failed.insert(ch.cell, "non-constant-increment".to_string());
        }
    }

    for ch in &chains {
        if failed.contains_key(&ch.cell) {
            continue;
        }
        info.chain_stores.insert((ch.store, ch.cell));
        let d = info.chain_load_delta.entry((ch.load, ch.cell)).or_insert(ch.delta);
        *d = (*d).min(ch.delta);
    }
    for (cell, total) in totals {
        if !failed.contains_key(&cell) {
            info.cursors.insert(cell, total as i64);
        }
    }
    info.failed = failed;
    info
}

/// How many times each function runs per execution of `root`, following
/// call edges only. `None` per function means uncountable (a call inside
/// an unbounded loop, or call-graph recursion).
fn call_counts(prog: &HirProgram, index: &ProgramIndex, root: FuncId) -> HashMap<FuncId, Option<u64>> {
    // reachable set first
    let mut reach: BTreeSet<FuncId> = BTreeSet::new();
    let mut q = VecDeque::from([root]);
    while let Some(f) = q.pop_front() {
        if !reach.insert(f) {
            continue;
        }
        for (_, ins) in prog.func(f).blocks.iter().flat_map(|b| b.instrs.iter().map(move |i| (b, i))) {
            if let Op::Call { func, .. } = &ins.op {
                q.push_back(*func);
            }
        }
    }
    let mut counts: HashMap<FuncId, Option<u64>> = HashMap::new();
    let mut on_stack: HashSet<FuncId> = HashSet::new();
    count_fn(prog, index, root, root, &reach, &mut counts, &mut on_stack);
    counts
}

fn count_fn(
    prog: &HirProgram,
    index: &ProgramIndex,
    root: FuncId,
    f: FuncId,
    reach: &BTreeSet<FuncId>,
    counts: &mut HashMap<FuncId, Option<u64>>,
    on_stack: &mut HashSet<FuncId>,
) -> Option<u64> {
    if let Some(c) = counts.get(&f) {
        return *c;
    }
    if !on_stack.insert(f) {
        counts.insert(f, None); // recursion
        return None;
    }
    let result = if f == root {
        Some(1)
    } else {
        let mut sum: u64 = 0;
        let mut known = true;
        let callers: Vec<InstrRef> = index.callers.get(&f).cloned().unwrap_or_default();
        for cs in callers {
            if !reach.contains(&cs.func) {
                continue;
            }
            let caller_count = count_fn(prog, index, root, cs.func, reach, counts, on_stack);
            let mult = index.func(cs.func).iteration_multiplicity(cs.block);
            match (caller_count, mult) {
                (Some(c), Some(m)) => sum = sum.saturating_add(c.saturating_mul(m)),
                _ => known = false,
            }
        }
        if known {
            Some(sum)
        } else {
            None
        }
    };
    on_stack.remove(&f);
    counts.insert(f, result);
    result
}

/// Does any derivation path of `op` pass through a load that may read
/// `cell`? Walks defs through copies, arithmetic, geps, and phis; loads
/// of other cells and call results stop the walk (a call that could
/// itself observe the cell shows up through that callee's own chain).
fn reaches_cell_load(
    prog: &HirProgram,
    pt: &PointsTo,
    op: Operand,
    cell: CellKey,
    visited: &mut HashSet<ValueId>,
    depth: u32,
) -> bool {
    if depth > 64 {
        return true; // assume the worst when too deep
    }
    let Some(v) = op.as_value() else { return false };
    if !visited.insert(v) {
        return false;
    }
    let Some(DefSite::Instr(r)) = prog_def(prog, v) else { return false };
    match &prog.instr(r).op {
        Op::Load { ptr, .. } => load_cells(pt, *ptr).contains(&cell),
        Op::Gep { base, offset } => {
            reaches_cell_load(prog, pt, *base, cell, visited, depth + 1)
                || reaches_cell_load(prog, pt, *offset, cell, visited, depth + 1)
        }
        Op::Bin { a, b, .. } => {
            reaches_cell_load(prog, pt, *a, cell, visited, depth + 1)
                || reaches_cell_load(prog, pt, *b, cell, visited, depth + 1)
        }
        Op::Assign { value } | Op::Cast { value, .. } => {
            reaches_cell_load(prog, pt, *value, cell, visited, depth + 1)
        }
        Op::Phi { incoming } => incoming
            .iter()
            .any(|(op, _)| reaches_cell_load(prog, pt, *op, cell, visited, depth + 1)),
        _ => false,
    }
}

/// Strict chain shape: the stored value must be a load of the cell
/// advanced only by constant geps or constant adds/subs through plain
/// copies. Anything else disqualifies the chain.
fn chain_walk(
    prog: &HirProgram,
    pt: &PointsTo,
    op: Operand,
    cell: CellKey,
    depth: u32,
) -> Option<ChainEnd> {
    if depth > 64 {
        return None;
    }
    let v = op.as_value()?;
    let Some(DefSite::Instr(r)) = prog_def(prog, v) else { return None };
    match &prog.instr(r).op {
        Op::Load { ptr, .. } if load_cells(pt, *ptr).contains(&cell) => {
            Some(ChainEnd { delta: 0, load: r })
        }
        Op::Gep { base, offset } => {
            let k = offset.as_const()?;
            let end = chain_walk(prog, pt, *base, cell, depth + 1)?;
            Some(ChainEnd { delta: end.delta.checked_add(k)?, load: end.load })
        }
        Op::Bin { op: BinOp::Add, a, b } => {
            let (inner, k) = match (a.as_const(), b.as_const()) {
                (Some(k), None) => (*b, k),
                (None, Some(k)) => (*a, k),
                _ => return None,
            };
            let end = chain_walk(prog, pt, inner, cell, depth + 1)?;
            Some(ChainEnd { delta: end.delta.checked_add(k)?, load: end.load })
        }
        Op::Bin { op: BinOp::Sub, a, b } => {
            let k = b.as_const()?;
            let end = chain_walk(prog, pt, *a, cell, depth + 1)?;
            Some(ChainEnd { delta: end.delta.checked_sub(k)?, load: end.load })
        }
        Op::Assign { value } => chain_walk(prog, pt, *value, cell, depth + 1),
        Op::Cast { value, target } => match target {
            CastTarget::Int(_) => None,
            _ => chain_walk(prog, pt, *value, cell, depth + 1),
        },
        _ => None,
    }
}

fn prog_def(prog: &HirProgram, v: ValueId) -> Option<DefSite> {
    // local recomputation to avoid threading the def-use index everywhere
    for (r, ins) in prog.all_instrs() {
        if ins.result == Some(v) {
            return Some(DefSite::Instr(r));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alias::points_to;

    fn build(src: &str) -> (HirProgram, ProgramIndex, PointsTo, SharedInfo) {
        let prog = parse_program(src).expect("parse");
        let index = build_indexes(&prog);
        let pt = points_to(&prog, &index);
        let info = analyze(&prog, &index, &pt);
        (prog, index, pt, info)
    }

    const CURSOR_PROG: &str = "type B = { d: i8[9] }\n\
        global cur: ref\n\
        fn adv3() {\nb0:\n  g = global-addr cur\n  p = load ref g\n  p2 = gep p, 3\n  store ref g, p2\n  ret\n}\n\
        fn adv5() {\nb0:\n  g = global-addr cur\n  p = load ref g\n  p2 = gep p, 5\n  store ref g, p2\n  ret\n}\n\
        fn main() {\nb0:\n  b = alloc B\n  g = global-addr cur\n  store ref g, b\n  spawn adv3()\n  spawn adv5()\n  ret\n}\n";

    #[test]
    fn two_thread_increments_accumulate_to_eight() {
        let (_p, _ix, _pt, info) = build(CURSOR_PROG);
        assert_eq!(info.failed, BTreeMap::new());
        let totals: Vec<i64> = info.cursors.values().copied().collect();
        assert_eq!(totals, vec![8], "3 + 5 accumulates to exactly 8");
        assert_eq!(info.chain_stores.len(), 2);
        assert_eq!(info.chain_load_delta.len(), 2);
        let deltas: BTreeSet<i64> = info.chain_load_delta.values().copied().collect();
        assert_eq!(deltas, BTreeSet::from([3, 5]));
    }

    #[test]
    fn spawn_in_counted_loop_multiplies() {
        let (_p, _ix, _pt, info) = build(
            "type B = { d: i8[64] }\n\
             global cur: ref\n\
             fn adv() {\nb0:\n  g = global-addr cur\n  p = load ref g\n  p2 = gep p, 4\n  store ref g, p2\n  ret\n}\n\
             fn main() {\nb0:\n  b = alloc B\n  g = global-addr cur\n  store ref g, b\n  jmp loop\n\
             loop:\n  i = phi [0, b0], [i2, loop]\n  spawn adv()\n  i2 = add i, 1\n  c = cmp lt i2, 3\n  br c, loop, done\n\
             done:\n  ret\n}\n",
        );
        assert!(info.failed.is_empty(), "{:?}", info.failed);
        let totals: Vec<i64> = info.cursors.values().copied().collect();
        assert_eq!(totals, vec![12], "3 spawns of +4");
    }

    #[test]
    fn variable_increment_fails_the_cell() {
        let (_p, _ix, _pt, info) = build(
            "type B = { d: i8[9] }\n\
             global cur: ref\n\
             fn adv(n: i64) {\nb0:\n  g = global-addr cur\n  p = load ref g\n  p2 = gep p, n\n  store ref g, p2\n  ret\n}\n\
             fn main(n: i64 in 0..4) {\nb0:\n  b = alloc B\n  g = global-addr cur\n  store ref g, b\n  spawn adv(n)\n  ret\n}\n",
        );
        assert!(info.cursors.is_empty());
        assert_eq!(info.failed.values().next().map(|s| s.as_str()), Some("non-constant-increment"));
    }

    #[test]
    fn spawn_outside_entry_is_uncountable() {
        let (_p, _ix, _pt, info) = build(
            "type B = { d: i8[9] }\n\
             global cur: ref\n\
             fn adv() {\nb0:\n  g = global-addr cur\n  p = load ref g\n  p2 = gep p, 3\n  store ref g, p2\n  ret\n}\n\
             fn nest() {\nb0:\n  spawn adv()\n  ret\n}\n\
             fn main() {\nb0:\n  b = alloc B\n  g = global-addr cur\n  store ref g, b\n  spawn nest()\n  ret\n}\n",
        );
        assert!(info.cursors.is_empty());
        assert_eq!(info.failed.values().next().map(|s| s.as_str()), Some("thread-count-unknown"));
    }

    #[test]
    fn integer_counter_chain_accumulates() {
        let (_p, _ix, _pt, info) = build(
            "global n: i64 = 0\n\
             fn bump() {\nb0:\n  g = global-addr n\n  x = load i64 g\n  x2 = add x, 2\n  store i64 g, x2\n  ret\n}\n\
             fn main() {\nb0:\n  spawn bump()\n  spawn bump()\n  spawn bump()\n  ret\n}\n",
        );
        assert!(info.failed.is_empty(), "{:?}", info.failed);
        let totals: Vec<i64> = info.cursors.values().copied().collect();
        assert_eq!(totals, vec![6], "three spawned +2 chains");
    }

    #[test]
    fn base_store_is_not_a_chain() {
        let (prog, _ix, pt, info) = build(CURSOR_PROG);
        // main's publishing store roots at the allocation, not a load
        let base_stores: Vec<InstrRef> = prog
            .all_instrs()
            .filter(|(r, ins)| {
                matches!(ins.op, Op::Store { .. })
                    && store_cells(&pt, match &ins.op {
                        Op::Store { ptr, .. } => *ptr,
                        _ => unreachable!(),
                    })
                    .iter()
                    .any(|c| info.cursors.contains_key(c))
                    && !info.chain_stores.iter().any(|(sr, _)| sr == r)
            })
            .map(|(r, _)| r)
            .collect();
        assert_eq!(base_stores.len(), 1);
        assert_eq!(base_stores[0].func, prog.entry);
    }
}
