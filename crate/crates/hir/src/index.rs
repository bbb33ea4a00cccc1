//! Derived program indexes: control-flow graphs, dominators, def-use
//! chains, natural loops with constant trip counts, and the call/spawn
//! graph. Everything here is computed once after parsing and shared by
//! the analyses.

use std::collections::{BTreeSet, HashMap, HashSet};

use crate::program::*;

/// Where a value is defined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DefSite {
    /// The nth parameter of a function; defined at function entry.
    Param(FuncId, usize),
    Instr(InstrRef),
}

/// Definition and use sites for every SSA value; use lists are in program
/// order, so iteration is deterministic.
#[derive(Clone, Debug, Default)]
pub struct DefUse {
    def: Vec<Option<DefSite>>,
    uses: Vec<Vec<InstrRef>>,
}

impl DefUse {
    pub fn def(&self, v: ValueId) -> Option<DefSite> {
        self.def.get(v.0 as usize).copied().flatten()
    }

    pub fn uses(&self, v: ValueId) -> &[InstrRef] {
        self.uses.get(v.0 as usize).map(|u| u.as_slice()).unwrap_or(&[])
    }
}

/// A natural loop: a back edge target plus every block that can reach the
/// back edge without leaving through the header.
#[derive(Clone, Debug)]
pub struct NaturalLoop {
    pub header: BlockId,
    pub latches: Vec<BlockId>,
    /// Includes the header.
    pub body: BTreeSet<BlockId>,
    /// Iteration count when the loop is a canonical counted loop
    /// (`i = phi(const, i + const)` guarding the exit against a constant
    /// bound); `None` otherwise.
    pub trip_count: Option<u64>,
}

/// Per-function control-flow facts.
#[derive(Clone, Debug)]
pub struct FuncIndex {
    pub func: FuncId,
    pub preds: Vec<Vec<BlockId>>,
    pub succs: Vec<Vec<BlockId>>,
    /// Reachable blocks in reverse postorder.
    pub rpo: Vec<BlockId>,
    /// Immediate dominator; the entry block maps to itself, unreachable
    /// blocks to `None`.
    pub idom: Vec<Option<BlockId>>,
    pub loops: Vec<NaturalLoop>,
}

impl FuncIndex {
    pub fn reachable(&self, b: BlockId) -> bool {
        self.idom[b.0 as usize].is_some()
    }

    /// True when `a` dominates `b` (reflexively). Unreachable blocks
    /// dominate nothing and are dominated by nothing.
    pub fn dominates(&self, a: BlockId, b: BlockId) -> bool {
        if !self.reachable(a) || !self.reachable(b) {
            return false;
        }
        let mut at = b;
        loop {
            if at == a {
                return true;
            }
            let up = self.idom[at.0 as usize].unwrap();
            if up == at {
                return false; // reached entry
            }
            at = up;
        }
    }

    /// Loops whose body contains `b`, innermost unspecified order.
    pub fn loops_containing(&self, b: BlockId) -> impl Iterator<Item = &NaturalLoop> {
        self.loops.iter().filter(move |l| l.body.contains(&b))
    }

    /// Product of the trip counts of all loops around `b`; `None` when
    /// any enclosing loop has no constant trip count.
    pub fn iteration_multiplicity(&self, b: BlockId) -> Option<u64> {
        let mut mult = 1u64;
        for l in self.loops_containing(b) {
            mult = mult.saturating_mul(l.trip_count?);
        }
        Some(mult)
    }
}

/// Whole-program index.
#[derive(Clone, Debug)]
pub struct ProgramIndex {
    pub funcs: Vec<FuncIndex>,
    pub defuse: DefUse,
    /// Call instructions targeting each function.
    pub callers: HashMap<FuncId, Vec<InstrRef>>,
    /// Every `spawn` instruction in program order.
    pub spawns: Vec<InstrRef>,
    /// Functions reachable from the entry via calls and spawns.
    pub reachable_funcs: BTreeSet<FuncId>,
    /// Functions reachable from any spawn target via calls: the code that
    /// can run on a non-main thread.
    pub thread_funcs: BTreeSet<FuncId>,
}

impl ProgramIndex {
    pub fn func(&self, f: FuncId) -> &FuncIndex {
        &self.funcs[f.0 as usize]
    }
}

/// Builds all indexes for a parsed program.
pub fn build_indexes(prog: &HirProgram) -> ProgramIndex {
    let funcs: Vec<FuncIndex> =
        (0..prog.funcs.len()).map(|i| build_func_index(prog, FuncId(i as u32))).collect();

    let mut defuse = DefUse {
        def: vec![None; prog.values.len()],
        uses: vec![Vec::new(); prog.values.len()],
    };
    for (fi, f) in prog.funcs.iter().enumerate() {
        for (pi, p) in f.params.iter().enumerate() {
            defuse.def[p.value.0 as usize] = Some(DefSite::Param(FuncId(fi as u32), pi));
        }
    }
    for (r, ins) in prog.all_instrs() {
        if let Some(v) = ins.result {
            defuse.def[v.0 as usize] = Some(DefSite::Instr(r));
        }
        for op in ins.op.operands() {
            if let Operand::Value(v) = op {
                defuse.uses[v.0 as usize].push(r);
            }
        }
    }

    let mut callers: HashMap<FuncId, Vec<InstrRef>> = HashMap::new();
    let mut spawns = Vec::new();
    for (r, ins) in prog.all_instrs() {
        match &ins.op {
            Op::Call { func, .. } => callers.entry(*func).or_default().push(r),
            Op::Spawn { func, .. } => {
                callers.entry(*func).or_default().push(r);
                spawns.push(r);
            }
            _ => {}
        }
    }

    let call_targets = |f: FuncId, include_spawn: bool| -> Vec<FuncId> {
        let mut out = Vec::new();
        for b in &prog.func(f).blocks {
            for ins in &b.instrs {
                match &ins.op {
                    Op::Call { func, .. } => out.push(*func),
                    Op::Spawn { func, .. } if include_spawn => out.push(*func),
                    _ => {}
                }
            }
        }
        out
    };

    let closure = |roots: Vec<FuncId>, include_spawn: bool| -> BTreeSet<FuncId> {
        let mut seen: BTreeSet<FuncId> = BTreeSet::new();
        let mut work = roots;
        while let Some(f) = work.pop() {
            if !seen.insert(f) {
                continue;
            }
            for t in call_targets(f, include_spawn) {
                if !seen.contains(&t) {
                    work.push(t);
                }
            }
        }
        seen
    };

    let reachable_funcs = closure(vec![prog.entry], true);
    let spawn_targets: Vec<FuncId> = prog
        .all_instrs()
        .filter_map(|(_, ins)| match &ins.op {
            Op::Spawn { func, .. } => Some(*func),
            _ => None,
        })
        .collect();
    let thread_funcs = closure(spawn_targets, true);

    ProgramIndex { funcs, defuse, callers, spawns, reachable_funcs, thread_funcs }
}

fn build_func_index(prog: &HirProgram, fid: FuncId) -> FuncIndex {
    let f = prog.func(fid);
    let n = f.blocks.len();
    let mut preds: Vec<Vec<BlockId>> = vec![Vec::new(); n];
    let mut succs: Vec<Vec<BlockId>> = vec![Vec::new(); n];
    for (bi, b) in f.blocks.iter().enumerate() {
        let from = BlockId(bi as u32);
        if let Some(last) = b.instrs.last() {
            let targets: Vec<BlockId> = match &last.op {
                Op::Br { then_to, else_to, .. } => vec![*then_to, *else_to],
                Op::Jmp { to } => vec![*to],
                _ => vec![],
            };
            for t in targets {
                succs[bi].push(t);
                preds[t.0 as usize].push(from);
            }
        }
    }
    // Deduplicate double edges (`br c, x, x`).
    for v in preds.iter_mut().chain(succs.iter_mut()) {
        let mut seen = HashSet::new();
        v.retain(|b| seen.insert(*b));
    }

    // Reverse postorder over reachable blocks.
    let mut rpo = Vec::new();
    let mut state = vec![0u8; n]; // 0 unvisited, 1 in progress, 2 done
    let mut stack: Vec<(BlockId, usize)> = vec![(BlockId(0), 0)];
    state[0] = 1;
    while let Some(&mut (b, ref mut next)) = stack.last_mut() {
        let ss = &succs[b.0 as usize];
        if *next < ss.len() {
            let t = ss[*next];
            *next += 1;
            if state[t.0 as usize] == 0 {
                state[t.0 as usize] = 1;
                stack.push((t, 0));
            }
        } else {
            state[b.0 as usize] = 2;
            rpo.push(b);
            stack.pop();
        }
    }
    rpo.reverse();
    let mut rpo_pos = vec![usize::MAX; n];
    for (i, b) in rpo.iter().enumerate() {
        rpo_pos[b.0 as usize] = i;
    }

    // Iterative dominator computation over the reverse postorder.
    let mut idom: Vec<Option<BlockId>> = vec![None; n];
    idom[0] = Some(BlockId(0));
    let intersect = |idom: &[Option<BlockId>], rpo_pos: &[usize], mut a: BlockId, mut b: BlockId| {
        while a != b {
            while rpo_pos[a.0 as usize] > rpo_pos[b.0 as usize] {
                a = idom[a.0 as usize].unwrap();
            }
            while rpo_pos[b.0 as usize] > rpo_pos[a.0 as usize] {
                b = idom[b.0 as usize].unwrap();
            }
        }
        a
    };
    let mut changed = true;
    while changed {
        changed = false;
        for &b in rpo.iter().skip(1) {
            let mut new_idom: Option<BlockId> = None;
            for &p in &preds[b.0 as usize] {
                if idom[p.0 as usize].is_none() {
                    continue;
                }
                new_idom = Some(match new_idom {
                    None => p,
                    Some(cur) => intersect(&idom, &rpo_pos, cur, p),
                });
            }
            if new_idom.is_some() && idom[b.0 as usize] != new_idom {
                idom[b.0 as usize] = new_idom;
                changed = true;
            }
        }
    }

    let mut fi = FuncIndex { func: fid, preds, succs, rpo, idom, loops: Vec::new() };
    fi.loops = find_loops(prog, f, &fi);
    fi
}

fn find_loops(prog: &HirProgram, f: &Function, fi: &FuncIndex) -> Vec<NaturalLoop> {
    // Back edges grouped by header.
    let mut by_header: HashMap<BlockId, Vec<BlockId>> = HashMap::new();
    for (bi, ss) in fi.succs.iter().enumerate() {
        let b = BlockId(bi as u32);
        if !fi.reachable(b) {
            continue;
        }
        for &h in ss {
            if fi.dominates(h, b) {
                by_header.entry(h).or_default().push(b);
            }
        }
    }
    let mut headers: Vec<BlockId> = by_header.keys().copied().collect();
    headers.sort();

    let mut loops = Vec::new();
    for header in headers {
        let latches = by_header[&header].clone();
        let mut body: BTreeSet<BlockId> = BTreeSet::new();
        body.insert(header);
        let mut work: Vec<BlockId> = latches.clone();
        while let Some(b) = work.pop() {
            if body.insert(b) {
                for &p in &fi.preds[b.0 as usize] {
                    if fi.reachable(p) {
                        work.push(p);
                    }
                }
            }
        }
        let trip_count = counted_loop_trip(prog, f, header, &latches, &body);
        loops.push(NaturalLoop { header, latches, body, trip_count });
    }
    loops
}

/// Recognizes `i = phi [A, pre], [step, latch]; c = cmp i ? K; br c, ...`
/// with constant `A`, `K` and `step = add i, s` for constant `s > 0`, and
/// returns the iteration count of the loop body.
fn counted_loop_trip(
    prog: &HirProgram,
    f: &Function,
    header: BlockId,
    latches: &[BlockId],
    body: &BTreeSet<BlockId>,
) -> Option<u64> {
    if latches.len() != 1 {
        return None;
    }
    let hb = f.block(header);
    let term = hb.instrs.last()?;
    let (cond, then_to, else_to) = match &term.op {
        Op::Br { cond, then_to, else_to } => (*cond, *then_to, *else_to),
        _ => return None,
    };
    let cond_v = cond.as_value()?;
    // The guard must be a comparison computed in this header.
    let cmp_instr = hb.instrs.iter().find(|i| i.result == Some(cond_v))?;
    let (op, a, b) = match &cmp_instr.op {
        Op::Cmp { op, a, b } => (*op, *a, *b),
        _ => return None,
    };
    // Exactly one branch target continues the loop.
    let body_on_true = body.contains(&then_to);
    let body_on_false = body.contains(&else_to);
    if body_on_true == body_on_false {
        return None;
    }
    // Normalize to `continue while i <op> K`.
    let (iv, bound, mut rel) = match (a, b) {
        (Operand::Value(v), Operand::Const(k)) => (v, k, op),
        (Operand::Const(k), Operand::Value(v)) => (
            v,
            k,
            match op {
                CmpOp::Lt => CmpOp::Gt,
                CmpOp::Le => CmpOp::Ge,
                CmpOp::Gt => CmpOp::Lt,
                CmpOp::Ge => CmpOp::Le,
                other => other,
            },
        ),
        _ => return None,
    };
    if body_on_false {
        rel = rel.negate();
    }

    let latch = latches[0];
    // A header phi over (constant init from outside, step from the latch).
    let phi_parts = |phi_v: ValueId| -> Option<(i64, ValueId)> {
        let phi_instr = hb.instrs.iter().find(|i| i.result == Some(phi_v))?;
        let incoming = match &phi_instr.op {
            Op::Phi { incoming } => incoming,
            _ => return None,
        };
        if incoming.len() != 2 {
            return None;
        }
        let (mut init, mut step_op) = (None, None);
        for (v, from) in incoming {
            if *from == latch {
                step_op = Some(*v);
            } else if !body.contains(from) {
                init = Some(*v);
            }
        }
        Some((init?.as_const()?, step_op?.as_value()?))
    };
    // v = add phi, s (constant s) defined inside the loop.
    let step_of = |step_v: ValueId, phi_v: ValueId| -> Option<i64> {
        for &bb in body {
            for ins in &f.block(bb).instrs {
                if ins.result == Some(step_v) {
                    if let Op::Bin { op: BinOp::Add, a, b } = &ins.op {
                        return match (a, b) {
                            (Operand::Value(v), Operand::Const(s)) if *v == phi_v => Some(*s),
                            (Operand::Const(s), Operand::Value(v)) if *v == phi_v => Some(*s),
                            _ => None,
                        };
                    }
                    return None;
                }
            }
        }
        None
    };
    // Iterations of `for (i = init; i rel bound; i += step)`, body-first.
    let count = |init: i64, step: i64| -> Option<u64> {
        if step <= 0 {
            return None;
        }
        let (init, bound, step) = (init as i128, bound as i128, step as i128);
        let trips: i128 = match rel {
            CmpOp::Lt => {
                if bound <= init {
                    0
                } else {
                    (bound - init + step - 1) / step
                }
            }
            CmpOp::Le => {
                if bound < init {
                    0
                } else {
                    (bound - init) / step + 1
                }
            }
            _ => return None,
        };
        u64::try_from(trips).ok()
    };
    let _ = prog;

    // Guard on the phi itself: while (i rel K) { ...; i += s }.
    if let Some((init, step_v)) = phi_parts(iv) {
        let step = step_of(step_v, iv)?;
        return count(init, step);
    }
    // Guard on the stepped value (do-while shape): the body has already
    // run once when the guard first sees init + s.
    for ins in &hb.instrs {
        let Op::Phi { .. } = &ins.op else { continue };
        let Some(phi_v) = ins.result else { continue };
        let Some((init, step_v)) = phi_parts(phi_v) else { continue };
        if step_v != iv {
            continue;
        }
        let step = step_of(iv, phi_v)?;
        return count(init.checked_add(step)?, step).map(|t| t + 1);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_program;

    fn index_of(src: &str) -> (HirProgram, ProgramIndex) {
        let prog = parse_program(src).expect("program should parse");
        let idx = build_indexes(&prog);
        (prog, idx)
    }

    #[test]
    fn diamond_dominators() {
        let (prog, idx) = index_of(
            "fn main(n: i64 in 0..2) {\n\
             b0:\n  c = cmp lt n, 1\n  br c, b1, b2\n\
             b1:\n  jmp b3\n\
             b2:\n  jmp b3\n\
             b3:\n  ret\n}\n",
        );
        let fi = idx.func(prog.entry);
        assert_eq!(fi.idom[3], Some(BlockId(0))); // join dominated by entry
        assert!(fi.dominates(BlockId(0), BlockId(3)));
        assert!(!fi.dominates(BlockId(1), BlockId(3)));
    }

    #[test]
    fn def_use_in_program_order() {
        let (prog, idx) = index_of(
            "type P = { x: i64 }\n\
             fn main() {\n\
             b0:\n  p = alloc P\n  q = gep p, 0\n  store i64 q, 1\n  free p\n  ret\n}\n",
        );
        let p = prog.values.iter().position(|v| v.name == "p").unwrap();
        let uses = idx.defuse.uses(ValueId(p as u32));
        assert_eq!(uses.len(), 2); // gep, free
        assert!(uses[0] < uses[1]);
    }

    #[test]
    fn counted_loop_trip_count() {
        let (prog, idx) = index_of(
            "fn main() {\n\
             b0:\n  jmp b1\n\
             b1:\n  i = phi [0, b0], [i2, b2]\n  c = cmp lt i, 3\n  br c, b2, b3\n\
             b2:\n  i2 = add i, 1\n  jmp b1\n\
             b3:\n  ret\n}\n",
        );
        let fi = idx.func(prog.entry);
        assert_eq!(fi.loops.len(), 1);
        assert_eq!(fi.loops[0].trip_count, Some(3));
        assert_eq!(fi.iteration_multiplicity(BlockId(2)), Some(3));
        assert_eq!(fi.iteration_multiplicity(BlockId(3)), Some(1));
    }

    #[test]
    fn runtime_bound_loop_has_no_trip_count() {
        let (prog, idx) = index_of(
            "fn main(k: i64 in 0..8) {\n\
             b0:\n  jmp b1\n\
             b1:\n  i = phi [0, b0], [i2, b2]\n  c = cmp lt i, k\n  br c, b2, b3\n\
             b2:\n  i2 = add i, 1\n  jmp b1\n\
             b3:\n  ret\n}\n",
        );
        let fi = idx.func(prog.entry);
        assert_eq!(fi.loops.len(), 1);
        assert_eq!(fi.loops[0].trip_count, None);
        assert_eq!(fi.iteration_multiplicity(BlockId(2)), None);
    }

    #[test]
    fn le_bound_counts_inclusive() {
        let (prog, idx) = index_of(
            "fn main() {\n\
             b0:\n  jmp b1\n\
             b1:\n  i = phi [1, b0], [i2, b2]\n  c = cmp le i, 4\n  br c, b2, b3\n\
             b2:\n  i2 = add i, 1\n  jmp b1\n\
             b3:\n  ret\n}\n",
        );
        assert_eq!(idx.func(prog.entry).loops[0].trip_count, Some(4));
    }

    #[test]
    fn thread_funcs_follow_spawn_targets() {
        let (prog, idx) = index_of(
            "type P = { x: i64 }\n\
             fn worker(p: ref) {\nb0:\n  call helper(p)\n  ret\n}\n\
             fn helper(p: ref) {\nb0:\n  ret\n}\n\
             fn main() {\n\
             b0:\n  p = alloc P\n  spawn worker(p)\n  ret\n}\n",
        );
        let worker = prog.func_by_name("worker").unwrap();
        let helper = prog.func_by_name("helper").unwrap();
        assert!(idx.thread_funcs.contains(&worker));
        assert!(idx.thread_funcs.contains(&helper));
        assert!(!idx.thread_funcs.contains(&prog.entry));
        assert_eq!(idx.spawns.len(), 1);
    }
}
