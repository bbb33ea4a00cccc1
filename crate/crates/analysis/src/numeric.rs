//! Whole-program value and pointer-index intervals.
//!
//! One fixpoint covers three families of facts: the interval of every
//! integer value, the byte-index interval of every reference value
//! (relative to the start of whatever it points into), and the interval
//! held by every memory cell (the hull of everything stored there, plus
//! zero for the fresh-memory contract). Dependencies — including the
//! interprocedural argument/return edges and load/store edges through
//! cells — form a graph whose strongly connected components are solved
//! in topological order: an acyclic node applies its transfer function
//! once, a cycle collapses to top unless it is a recognized affine
//! induction (a phi advanced by a constant inside a counted loop), and
//! cursor cells bounded by the accumulation pass break their own cycles.
//!
//! Nodes also carry an optional taint label that explains why a value
//! went imprecise (a failed cursor cell, a lossy integer cast); access
//! checks downstream surface it as the reason for a verdict.

use std::collections::{BTreeSet, HashMap};

use uriah_hir::*;

use crate::alias::{AbsObj, CellKey, FieldKey, PointsTo};
use crate::interval::Interval;
use crate::shared::{load_cells, store_cells, SharedInfo};

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
enum Node {
    Int(ValueId),
    Idx(ValueId),
    Cell(CellKey),
    /// Base hull of a cursor cell (its non-chain stores only).
    CellBase(CellKey),
}

#[derive(Debug, Default)]
pub struct NumEnv {
    int: HashMap<ValueId, Interval>,
    idx: HashMap<ValueId, Interval>,
    taint: HashMap<ValueId, String>,
}

impl NumEnv {
    /// Interval of an integer operand.
    pub fn int_of(&self, op: Operand) -> Interval {
        match op {
            Operand::Const(n) => Interval::point(n),
            Operand::Value(v) => self.int.get(&v).copied().unwrap_or_else(Interval::top),
        }
    }

    /// Byte-index interval of a reference operand, measured from the
    /// start of whatever object it points into.
    pub fn idx_of(&self, op: Operand) -> Interval {
        match op {
            Operand::Const(_) => Interval::point(0),
            Operand::Value(v) => self.idx.get(&v).copied().unwrap_or_else(Interval::top),
        }
    }

    /// Why the operand's interval is imprecise, if a cause was recorded.
    pub fn taint_of(&self, op: Operand) -> Option<&str> {
        op.as_value().and_then(|v| self.taint.get(&v)).map(|s| s.as_str())
    }
}

pub fn analyze(
    prog: &HirProgram,
    index: &ProgramIndex,
    pt: &PointsTo,
    shared: &SharedInfo,
) -> NumEnv {
    let pass = Pass { prog, index, pt, shared };
    pass.run()
}

struct Pass<'a> {
    prog: &'a HirProgram,
    index: &'a ProgramIndex,
    pt: &'a PointsTo,
    shared: &'a SharedInfo,
}

#[derive(Clone)]
struct Out {
    iv: Interval,
    taint: Option<String>,
}

impl Out {
    fn top() -> Out {
        Out { iv: Interval::top(), taint: None }
    }
}

impl<'a> Pass<'a> {
    fn run(&self) -> NumEnv {
        let (nodes, deps) = self.build_graph();
        let order = scc_topo_order(&nodes, &deps);
        let mut env: HashMap<Node, Out> = HashMap::new();
        for comp in order {
            let self_loop =
                comp.len() == 1 && deps.get(&comp[0]).map(|d| d.contains(&comp[0])).unwrap_or(false);
            if comp.len() == 1 && !self_loop {
                let out = self.transfer(comp[0], &env);
                env.insert(comp[0], out);
            } else if let Some(sol) = self.affine_induction(&comp, &env) {
                for (n, out) in sol {
                    env.insert(n, out);
                }
            } else {
                // A dependency cycle with no recognized shape: top. Keep
                // the best explanation available — a failed cursor cell in
                // the cycle, else taint arriving from outside it.
                let mut taint: Option<String> = None;
                for n in &comp {
                    if let Node::Cell(c) | Node::CellBase(c) = n {
                        if let Some(reason) = self.shared.failed.get(c) {
                            taint = Some(reason.clone());
                            break;
                        }
                    }
                }
                if taint.is_none() {
                    'outer: for n in &comp {
                        for d in deps.get(n).into_iter().flatten() {
                            if comp.contains(d) {
                                continue;
                            }
                            if let Some(o) = env.get(d) {
                                if o.taint.is_some() {
                                    taint = o.taint.clone();
                                    break 'outer;
                                }
                            }
                        }
                    }
                }
                for n in &comp {
                    env.insert(*n, Out { iv: Interval::top(), taint: taint.clone() });
                }
            }
        }
        let mut out = NumEnv::default();
        for (node, o) in env {
            match node {
                Node::Int(v) => {
                    out.int.insert(v, o.iv);
                    if let Some(t) = o.taint {
                        out.taint.insert(v, t);
                    }
                }
                Node::Idx(v) => {
                    out.idx.insert(v, o.iv);
                    if let Some(t) = o.taint {
                        out.taint.insert(v, t);
                    }
                }
                _ => {}
            }
        }
        out
    }

    fn is_ref(&self, v: ValueId) -> bool {
        self.prog.value(v).kind.is_ref()
    }

    fn node_of(&self, v: ValueId) -> Node {
        if self.is_ref(v) {
            Node::Idx(v)
        } else {
            Node::Int(v)
        }
    }

    fn operand_dep(&self, op: Operand) -> Option<Node> {
        op.as_value().map(|v| self.node_of(v))
    }

    /// Whether the accumulated-increment bound applies to this load of
    /// this cell; returns (accumulated total, the reader's own
    /// not-yet-applied increment).
    fn cursor_read(&self, load: InstrRef, cell: CellKey) -> Option<(i64, i64)> {
        let total = *self.shared.cursors.get(&cell)?;
        let own = self.shared.chain_load_delta.get(&(load, cell)).copied().unwrap_or(0);
        Some((total, own))
    }

    fn build_graph(&self) -> (Vec<Node>, HashMap<Node, Vec<Node>>) {
        let mut nodes: BTreeSet<Node> = BTreeSet::new();
        let mut deps: HashMap<Node, Vec<Node>> = HashMap::new();
        let mut add =
            |nodes: &mut BTreeSet<Node>, deps: &mut HashMap<Node, Vec<Node>>, n: Node, ds: Vec<Node>| {
                nodes.insert(n);
                for d in &ds {
                    nodes.insert(*d);
                }
                deps.entry(n).or_default().extend(ds);
            };

        for i in 0..self.prog.values.len() {
            nodes.insert(self.node_of(ValueId(i as u32)));
        }

        for (r, ins) in self.prog.all_instrs() {
            let res = ins.result;
            match &ins.op {
                Op::Bin { a, b, .. } => {
                    let ds = [*a, *b].iter().filter_map(|o| self.operand_dep(*o)).collect();
                    add(&mut nodes, &mut deps, Node::Int(res.unwrap()), ds);
                }
                Op::Assign { value } | Op::Cast { value, .. } => {
                    let n = self.node_of(res.unwrap());
                    let ds = self.operand_dep(*value).into_iter().collect();
                    add(&mut nodes, &mut deps, n, ds);
                }
                Op::Phi { incoming } => {
                    let n = self.node_of(res.unwrap());
                    let ds = incoming.iter().filter_map(|(o, _)| self.operand_dep(*o)).collect();
                    add(&mut nodes, &mut deps, n, ds);
                }
                Op::Gep { base, offset } => {
                    let mut ds: Vec<Node> = Vec::new();
                    ds.extend(self.operand_dep(*base));
                    ds.extend(self.operand_dep(*offset));
                    add(&mut nodes, &mut deps, Node::Idx(res.unwrap()), ds);
                }
                Op::Load { ptr, .. } => {
                    let n = self.node_of(res.unwrap());
                    let mut ds: Vec<Node> = Vec::new();
                    for cell in load_cells(self.pt, *ptr) {
                        if self.cursor_read(r, cell).is_some() {
                            ds.push(Node::CellBase(cell));
                        } else {
                            ds.push(Node::Cell(cell));
                        }
                    }
                    add(&mut nodes, &mut deps, n, ds);
                }
                Op::Store { ptr, value, .. } => {
                    let vd = self.operand_dep(*value);
                    for cell in store_cells(self.pt, *ptr) {
                        if self.shared.cursors.contains_key(&cell) {
                            // chain stores are folded into the accumulated
                            // total; everything else feeds the base hull
                            if !self.shared.chain_stores.contains(&(r, cell)) {
                                add(
                                    &mut nodes,
                                    &mut deps,
                                    Node::CellBase(cell),
                                    vd.into_iter().collect(),
                                );
                            }
                            add(&mut nodes, &mut deps, Node::Cell(cell), vec![Node::CellBase(cell)]);
                        } else {
                            add(&mut nodes, &mut deps, Node::Cell(cell), vd.into_iter().collect());
                        }
                    }
                }
                Op::Call { func, args } | Op::Spawn { func, args } => {
                    let callee = self.prog.func(*func);
                    for (p, a) in callee.params.iter().zip(args) {
                        let n = self.node_of(p.value);
                        let ds = self.operand_dep(*a).into_iter().collect();
                        add(&mut nodes, &mut deps, n, ds);
                    }
                }
                _ => {}
            }
        }
        // call results depend on the callee's returned operands
        for (fi, f) in self.prog.funcs.iter().enumerate() {
            let fid = FuncId(fi as u32);
            let rets: Vec<Operand> = f
                .blocks
                .iter()
                .flat_map(|b| &b.instrs)
                .filter_map(|i| match &i.op {
                    Op::Ret { value: Some(op) } => Some(*op),
                    _ => None,
                })
                .collect();
            for call in self.index.callers.get(&fid).into_iter().flatten() {
                if let Some(res) = self.prog.instr(*call).result {
                    let n = self.node_of(res);
                    let ds: Vec<Node> = rets.iter().filter_map(|o| self.operand_dep(*o)).collect();
                    add(&mut nodes, &mut deps, n, ds);
                }
            }
        }
        // cursor cells exist even when every store to them is a chain
        for cell in self.shared.cursors.keys() {
            add(&mut nodes, &mut deps, Node::Cell(*cell), vec![Node::CellBase(*cell)]);
        }
        (nodes.into_iter().collect(), deps)
    }

    fn transfer(&self, node: Node, env: &HashMap<Node, Out>) -> Out {
        let get = |n: Node| env.get(&n).cloned().unwrap_or_else(Out::top);
        let int_op = |op: Operand| -> Out {
            match op {
                Operand::Const(n) => Out { iv: Interval::point(n), taint: None },
                Operand::Value(v) => get(self.node_of(v)),
            }
        };
        let idx_op = |op: Operand| -> Out {
            match op {
                Operand::Const(_) => Out { iv: Interval::point(0), taint: None },
                Operand::Value(v) => get(self.node_of(v)),
            }
        };

        match node {
            Node::Int(v) | Node::Idx(v) => {
                if let Some(DefSite::Param(f, i)) = self.index.defuse.def(v) {
                    return self.param_out(f, i, &int_op, &idx_op);
                }
                let Some(DefSite::Instr(r)) = self.index.defuse.def(v) else {
                    return Out::top();
                };
                let ins = self.prog.instr(r);
                match &ins.op {
                    Op::Bin { op, a, b } => {
                        let (x, y) = (int_op(*a), int_op(*b));
                        let iv = match op {
                            BinOp::Add => x.iv.add(&y.iv),
                            BinOp::Sub => x.iv.sub(&y.iv),
                            BinOp::Mul => x.iv.mul(&y.iv),
                        };
                        Out { iv, taint: x.taint.or(y.taint) }
                    }
                    Op::Cmp { .. } => Out { iv: Interval::range(0, 1), taint: None },
                    Op::Assign { value } => {
                        if self.is_ref(v) {
                            idx_op(*value)
                        } else {
                            int_op(*value)
                        }
                    }
                    Op::Cast { value, target } => match target {
                        CastTarget::Int(p) => {
                            let x = int_op(*value);
                            match p.int_range() {
                                // conversion to the full-width primitive
                                // never loses bits
                                Some((lo, hi)) if *p != PrimType::I64 => {
                                    let target_iv = Interval::range(lo, hi);
                                    if x.iv.is_subset_of(&target_iv) {
                                        x
                                    } else {
                                        // truncation wraps: the result spans
                                        // the whole target range, and the
                                        // loss itself is the explanation
                                        Out {
                                            iv: target_iv,
                                            taint: Some(x.taint.unwrap_or_else(|| {
                                                "lossy-int-cast".to_string()
                                            })),
                                        }
                                    }
                                }
                                _ => x,
                            }
                        }
                        _ => idx_op(*value),
                    },
                    Op::Phi { incoming } => {
                        let mut out = Out { iv: Interval::bottom(), taint: None };
                        for (o, _) in incoming {
                            let c = if self.is_ref(v) { idx_op(*o) } else { int_op(*o) };
                            out.iv = out.iv.join(&c.iv);
                            out.taint = out.taint.or(c.taint);
                        }
                        out
                    }
                    Op::Alloc { .. } | Op::Realloc { .. } | Op::GlobalAddr { .. } => {
                        Out { iv: Interval::point(0), taint: None }
                    }
                    Op::Gep { base, offset } => {
                        let (b, o) = (idx_op(*base), int_op(*offset));
                        Out { iv: b.iv.add(&o.iv), taint: b.taint.or(o.taint) }
                    }
                    Op::Load { ptr, .. } => {
                        let cells = load_cells(self.pt, *ptr);
                        if cells.is_empty() {
                            return Out::top();
                        }
                        let mut out = Out { iv: Interval::bottom(), taint: None };
                        for cell in cells {
                            let contrib = if let Some((total, own)) = self.cursor_read(r, cell) {
                                let base = get(Node::CellBase(cell));
                                Out {
                                    iv: base.iv.add(&Interval::range(0, (total - own).max(0))),
                                    taint: base.taint,
                                }
                            } else {
                                let c = get(Node::Cell(cell));
                                let taint =
                                    c.taint.or_else(|| self.shared.failed.get(&cell).cloned());
                                Out { iv: c.iv, taint }
                            };
                            out.iv = out.iv.join(&contrib.iv);
                            out.taint = out.taint.or(contrib.taint);
                        }
                        out
                    }
                    Op::Call { func, .. } => {
                        let callee = self.prog.func(*func);
                        let mut out = Out { iv: Interval::bottom(), taint: None };
                        let mut any = false;
                        for b in &callee.blocks {
                            for i in &b.instrs {
                                if let Op::Ret { value: Some(o) } = &i.op {
                                    any = true;
                                    let c = if self.is_ref(v) { idx_op(*o) } else { int_op(*o) };
                                    out.iv = out.iv.join(&c.iv);
                                    out.taint = out.taint.or(c.taint);
                                }
                            }
                        }
                        if !any {
                            out.iv = Interval::top();
                        }
                        out
                    }
                    _ => Out::top(),
                }
            }
            Node::Cell(cell) => {
                if let Some(total) = self.shared.cursors.get(&cell) {
                    let base = get(Node::CellBase(cell));
                    return Out { iv: base.iv.add(&Interval::range(0, *total)), taint: base.taint };
                }
                self.cell_hull(cell, env, false)
            }
            Node::CellBase(cell) => self.cell_hull(cell, env, true),
        }
    }

    /// Join over every argument at every call or spawn of the function;
    /// entry parameters take their declared input ranges instead.
    fn param_out(
        &self,
        f: FuncId,
        i: usize,
        int_op: &dyn Fn(Operand) -> Out,
        idx_op: &dyn Fn(Operand) -> Out,
    ) -> Out {
        let p = &self.prog.func(f).params[i];
        if f == self.prog.entry {
            if p.prim == PrimType::Ref {
                return Out { iv: Interval::point(0), taint: None };
            }
            let r = p.range.unwrap_or(InputRange { lo: 0, hi: 2 });
            return Out { iv: Interval::range(r.lo, r.hi - 1), taint: None };
        }
        let mut out = Out { iv: Interval::bottom(), taint: None };
        let mut any = false;
        for (_, ins) in self.prog.all_instrs() {
            if let Op::Call { func: cf, args } | Op::Spawn { func: cf, args } = &ins.op {
                if *cf != f {
                    continue;
                }
                any = true;
                let contrib =
                    if p.prim == PrimType::Ref { idx_op(args[i]) } else { int_op(args[i]) };
                out.iv = out.iv.join(&contrib.iv);
                out.taint = out.taint.or(contrib.taint);
            }
        }
        if !any {
            out.iv = Interval::top();
        }
        out
    }

    /// Hull of everything stored into `cell` (non-chain stores only when
    /// `base_only`), the global initializer if any, and zero for the
    /// fresh-memory contract.
    fn cell_hull(&self, cell: CellKey, env: &HashMap<Node, Out>, base_only: bool) -> Out {
        if let Some(reason) = self.shared.failed.get(&cell) {
            return Out { iv: Interval::top(), taint: Some(reason.clone()) };
        }
        let get = |n: Node| env.get(&n).cloned().unwrap_or_else(Out::top);
        let mut out = Out { iv: Interval::point(0), taint: None };
        if let (AbsObj::Global(g), FieldKey::Off(0) | FieldKey::Any) = cell {
            if let Some(GlobalInit::Int(k)) = &self.prog.global(g).init {
                out.iv = out.iv.join(&Interval::point(*k));
            }
        }
        for (r, ins) in self.prog.all_instrs() {
            let Op::Store { ptr, value, .. } = &ins.op else { continue };
            if !store_cells(self.pt, *ptr).contains(&cell) {
                continue;
            }
            if base_only && self.shared.chain_stores.contains(&(r, cell)) {
                continue;
            }
            let contrib = match value {
                Operand::Const(n) => Out { iv: Interval::point(*n), taint: None },
                Operand::Value(v) => get(self.node_of(*v)),
            };
            out.iv = out.iv.join(&contrib.iv);
            out.taint = out.taint.or(contrib.taint);
        }
        out
    }

    /// Solves a two-node cycle that is an affine induction: a phi over
    /// (outside init, in-cycle step) where the step advances by a
    /// constant and the phi heads a loop with a known trip count.
    ///
    /// With T body trips, any use inside the body observes the phi at
    /// iterations 0..T-1. A guard-first loop evaluates its header once
    /// more on the way out, so uses in the header — or anywhere outside
    /// the loop — can also observe the final stepped value; those widen
    /// the phi's range by one step. Uses whose result is a comparison
    /// don't propagate magnitude and are ignored.
    fn affine_induction(&self, comp: &[Node], env: &HashMap<Node, Out>) -> Option<Vec<(Node, Out)>> {
        if comp.len() != 2 {
            return None;
        }
        let vals: Vec<ValueId> = comp
            .iter()
            .map(|n| match n {
                Node::Int(v) | Node::Idx(v) => Some(*v),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()?;
        for (pi, &phi_v) in vals.iter().enumerate() {
            let step_v = vals[1 - pi];
            let Some(DefSite::Instr(pr)) = self.index.defuse.def(phi_v) else { continue };
            let Op::Phi { incoming } = &self.prog.instr(pr).op else { continue };
            if incoming.len() != 2 {
                continue;
            }
            let mut init: Option<Operand> = None;
            let mut has_step = false;
            for (o, _) in incoming {
                if o.as_value() == Some(step_v) {
                    has_step = true;
                } else {
                    init = Some(*o);
                }
            }
            if !has_step {
                continue;
            }
            let init = init?;
            let Some(DefSite::Instr(sr)) = self.index.defuse.def(step_v) else { continue };
            let step_c = match &self.prog.instr(sr).op {
                Op::Bin { op: BinOp::Add, a, b } => match (a, b) {
                    (Operand::Value(v), Operand::Const(c)) if *v == phi_v => Some(*c),
                    (Operand::Const(c), Operand::Value(v)) if *v == phi_v => Some(*c),
                    _ => None,
                },
                Op::Gep { base, offset } => match (base, offset) {
                    (Operand::Value(v), Operand::Const(c)) if *v == phi_v => Some(*c),
                    _ => None,
                },
                _ => None,
            };
            let c = step_c?;
            let fi = self.index.func(pr.func);
            let lp = fi.loops.iter().find(|l| l.header == pr.block)?;
            let trips = lp.trip_count?;
            if trips > u32::MAX as u64 {
                return None;
            }
            let t = trips as i64;
            // does the header run once more than the body (guard-first)?
            let exit_extra = fi.succs[pr.block.0 as usize].iter().any(|s| !lp.body.contains(s));
            let wide_use = self.index.defuse.uses(phi_v).iter().any(|u| {
                if matches!(self.prog.instr(*u).op, Op::Cmp { .. }) {
                    return false;
                }
                !lp.body.contains(&u.block) || (exit_extra && u.block == lp.header)
            });
            let init_out = match init {
                Operand::Const(n) => Out { iv: Interval::point(n), taint: None },
                Operand::Value(v) => env.get(&self.node_of(v)).cloned().unwrap_or_else(Out::top),
            };
            let span_hull = |steps: i64| -> Option<Interval> {
                if steps <= 0 {
                    return Some(init_out.iv);
                }
                let span = c.checked_mul(steps)?;
                Some(init_out.iv.add(&Interval::range(span.min(0), span.max(0))))
            };
            let body_hull = span_hull(t - 1)?;
            let phi_iv = if wide_use {
                span_hull(if exit_extra { t } else { t - 1 })?
            } else {
                body_hull
            };
            let step_iv = body_hull.add(&Interval::point(c));
            return Some(vec![
                (comp[pi], Out { iv: phi_iv, taint: init_out.taint.clone() }),
                (comp[1 - pi], Out { iv: step_iv, taint: init_out.taint }),
            ]);
        }
        None
    }
}

/// Tarjan strongly connected components. Components complete only after
/// everything they depend on, so the output order is evaluation order.
fn scc_topo_order(nodes: &[Node], deps: &HashMap<Node, Vec<Node>>) -> Vec<Vec<Node>> {
    #[derive(Default)]
    struct St {
        index: HashMap<Node, u32>,
        low: HashMap<Node, u32>,
        on_stack: HashMap<Node, bool>,
        stack: Vec<Node>,
        next: u32,
        out: Vec<Vec<Node>>,
    }
    fn strongconnect(n: Node, deps: &HashMap<Node, Vec<Node>>, st: &mut St) {
        st.index.insert(n, st.next);
        st.low.insert(n, st.next);
        st.next += 1;
        st.stack.push(n);
        st.on_stack.insert(n, true);
        for &d in deps.get(&n).into_iter().flatten() {
            if !st.index.contains_key(&d) {
                strongconnect(d, deps, st);
                let dl = st.low[&d];
                let nl = st.low[&n];
                st.low.insert(n, nl.min(dl));
            } else if st.on_stack.get(&d).copied().unwrap_or(false) {
                let di = st.index[&d];
                let nl = st.low[&n];
                st.low.insert(n, nl.min(di));
            }
        }
        if st.low[&n] == st.index[&n] {
            let mut comp = Vec::new();
            while let Some(top) = st.stack.pop() {
                st.on_stack.insert(top, false);
                comp.push(top);
                if top == n {
                    break;
                }
            }
            st.out.push(comp);
        }
    }
    let mut st = St::default();
    for &n in nodes {
        if !st.index.contains_key(&n) {
            strongconnect(n, deps, &mut st);
        }
    }
    st.out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alias::points_to;
    use crate::shared;

    fn build(src: &str) -> (HirProgram, NumEnv) {
        let prog = parse_program(src).expect("parse");
        let index = build_indexes(&prog);
        let pt = points_to(&prog, &index);
        let sh = shared::analyze(&prog, &index, &pt);
        let env = analyze(&prog, &index, &pt, &sh);
        (prog, env)
    }

    fn v(prog: &HirProgram, name: &str) -> Operand {
        Operand::Value(
            prog.values
                .iter()
                .position(|x| x.name == name)
                .map(|i| ValueId(i as u32))
                .expect("value"),
        )
    }

    #[test]
    fn straight_line_arithmetic() {
        let (p, env) = build(
            "fn main(n: i64 in 0..4) {\nb0:\n  a = add n, 10\n  b = mul a, 2\n  c = sub b, 1\n  ret\n}\n",
        );
        assert_eq!(env.int_of(v(&p, "n")), Interval::range(0, 3));
        assert_eq!(env.int_of(v(&p, "a")), Interval::range(10, 13));
        assert_eq!(env.int_of(v(&p, "b")), Interval::range(20, 26));
        assert_eq!(env.int_of(v(&p, "c")), Interval::range(19, 25));
    }

    #[test]
    fn counted_loop_phi_is_bounded() {
        let (p, env) = build(
            "fn main() {\nb0:\n  jmp b1\n\
             b1:\n  i = phi [0, b0], [i2, b2]\n  c = cmp lt i, 8\n  br c, b2, b3\n\
             b2:\n  i2 = add i, 2\n  jmp b1\n\
             b3:\n  ret\n}\n",
        );
        // four trips: the body observes i at 0, 2, 4, 6; nothing outside
        // the body reads it, so the exit value 8 stays invisible
        assert_eq!(env.int_of(v(&p, "i")), Interval::range(0, 6));
        assert_eq!(env.int_of(v(&p, "i2")), Interval::range(2, 8));
    }

    #[test]
    fn phi_used_after_loop_sees_exit_value() {
        let (p, env) = build(
            "type B = { d: i8[16] }\n\
             fn main() {\nb0:\n  b = alloc B\n  jmp b1\n\
             b1:\n  i = phi [0, b0], [i2, b2]\n  c = cmp lt i, 8\n  br c, b2, b3\n\
             b2:\n  i2 = add i, 2\n  jmp b1\n\
             b3:\n  q = gep b, i\n  ret\n}\n",
        );
        // the gep after the loop observes the final value 8, so the
        // phi's hull must include it
        assert_eq!(env.int_of(v(&p, "i")), Interval::range(0, 8));
        assert_eq!(env.idx_of(v(&p, "q")), Interval::range(0, 8));
    }

    #[test]
    fn runtime_bound_loop_goes_top() {
        let (p, env) = build(
            "fn main(k: i64 in 0..8) {\nb0:\n  jmp b1\n\
             b1:\n  i = phi [0, b0], [i2, b2]\n  c = cmp lt i, k\n  br c, b2, b3\n\
             b2:\n  i2 = add i, 1\n  jmp b1\n\
             b3:\n  ret\n}\n",
        );
        assert_eq!(env.int_of(v(&p, "i")), Interval::top());
    }

    #[test]
    fn pointer_index_through_geps() {
        let (p, env) = build(
            "type B = { d: i8[16] }\n\
             fn main(n: i64 in 0..4) {\nb0:\n  b = alloc B\n  q = gep b, 4\n  r = gep q, n\n  ret\n}\n",
        );
        assert_eq!(env.idx_of(v(&p, "b")), Interval::point(0));
        assert_eq!(env.idx_of(v(&p, "q")), Interval::point(4));
        assert_eq!(env.idx_of(v(&p, "r")), Interval::range(4, 7));
    }

    #[test]
    fn advancing_pointer_in_counted_loop() {
        let (p, env) = build(
            "type B = { d: i8[8] }\n\
             fn main() {\nb0:\n  b = alloc B\n  jmp b1\n\
             b1:\n  q = phi [b, b0], [q2, b2]\n  i = phi [0, b0], [i2, b2]\n  c = cmp lt i, 8\n  br c, b2, b3\n\
             b2:\n  store i8 q, 0\n  q2 = gep q, 1\n  i2 = add i, 1\n  jmp b1\n\
             b3:\n  ret\n}\n",
        );
        // eight trips: the store observes q at offsets 0 through 7
        assert_eq!(env.idx_of(v(&p, "q")), Interval::range(0, 7));
    }

    #[test]
    fn index_travels_through_memory() {
        let (p, env) = build(
            "type B = { d: i8[16] }\n\
             global slot: ref\n\
             fn main() {\nb0:\n  b = alloc B\n  q = gep b, 6\n  g = global-addr slot\n\
               store ref g, q\n  l = load ref g\n  ret\n}\n",
        );
        // hull of the stored index 6 and 0 for fresh memory
        assert_eq!(env.idx_of(v(&p, "l")), Interval::range(0, 6));
    }

    #[test]
    fn global_initializer_feeds_cell_reads() {
        let (p, env) = build(
            "global limit: i64 = 12\n\
             fn main() {\nb0:\n  g = global-addr limit\n  n = load i64 g\n  ret\n}\n",
        );
        assert_eq!(env.int_of(v(&p, "n")), Interval::range(0, 12));
    }

    #[test]
    fn cursor_cell_reads_are_accumulated_not_top() {
        let (p, env) = build(
            "type B = { d: i8[9] }\n\
             global cur: ref\n\
             fn adv3() {\nb0:\n  g = global-addr cur\n  p = load ref g\n  p2 = gep p, 3\n  store ref g, p2\n  ret\n}\n\
             fn adv5() {\nb0:\n  g = global-addr cur\n  p = load ref g\n  p2 = gep p, 5\n  store ref g, p2\n  ret\n}\n\
             fn main() {\nb0:\n  b = alloc B\n  g = global-addr cur\n  store ref g, b\n  spawn adv3()\n  spawn adv5()\n  ret\n}\n",
        );
        // each reader's own pending increment comes off the accumulated
        // total of 8, so every derived pointer stays within 8
        let derived: Vec<Interval> = p
            .values
            .iter()
            .enumerate()
            .filter(|(_, x)| x.name == "p2")
            .map(|(i, _)| env.idx.get(&ValueId(i as u32)).copied().unwrap())
            .collect();
        assert_eq!(derived.len(), 2);
        for h in &derived {
            assert!(h.is_subset_of(&Interval::range(0, 8)), "derived cursor within total: {h}");
        }
        let loads: Vec<Interval> = p
            .values
            .iter()
            .enumerate()
            .filter(|(_, x)| x.name == "p")
            .map(|(i, _)| env.idx.get(&ValueId(i as u32)).copied().unwrap())
            .collect();
        assert_eq!(loads.len(), 2);
        for l in loads {
            assert!(l.is_subset_of(&Interval::range(0, 5)), "loaded cursor bounded: {l}");
        }
    }

    #[test]
    fn lossy_cast_taints_and_widens() {
        let (p, env) = build(
            "fn main(n: i64 in 0..65536) {\nb0:\n  t = cast n, i8\n  u = add t, 0\n  ret\n}\n",
        );
        assert_eq!(env.int_of(v(&p, "t")), Interval::range(-128, 127));
        assert_eq!(env.taint_of(v(&p, "t")), Some("lossy-int-cast"));
        assert_eq!(env.taint_of(v(&p, "u")), Some("lossy-int-cast"), "taint propagates");
    }

    #[test]
    fn lossless_cast_keeps_interval() {
        let (p, env) = build(
            "fn main(n: i64 in 0..100) {\nb0:\n  t = cast n, i8\n  w = cast t, i64\n  ret\n}\n",
        );
        assert_eq!(env.int_of(v(&p, "t")), Interval::range(0, 99));
        assert_eq!(env.taint_of(v(&p, "t")), None);
        assert_eq!(env.int_of(v(&p, "w")), Interval::range(0, 99));
    }

    #[test]
    fn failed_cursor_cell_taints_loads() {
        let (p, env) = build(
            "type B = { d: i8[9] }\n\
             global cur: ref\n\
             fn adv(n: i64) {\nb0:\n  g = global-addr cur\n  p = load ref g\n  p2 = gep p, n\n  store ref g, p2\n  ret\n}\n\
             fn main(n: i64 in 0..4) {\nb0:\n  b = alloc B\n  g = global-addr cur\n  store ref g, b\n  spawn adv(n)\n  ret\n}\n",
        );
        let load = p
            .values
            .iter()
            .position(|x| x.name == "p")
            .map(|i| ValueId(i as u32))
            .unwrap();
        assert_eq!(env.idx.get(&load), Some(&Interval::top()));
        assert_eq!(env.taint.get(&load).map(|s| s.as_str()), Some("non-constant-increment"));
    }

    #[test]
    fn call_results_join_callee_returns() {
        let (p, env) = build(
            "fn pick(a: i64) {\nb0:\n  c = cmp lt a, 1\n  br c, b1, b2\n\
             b1:\n  ret 10\n\
             b2:\n  ret 20\n}\n\
             fn main(n: i64 in 0..2) {\nb0:\n  r = call pick(n)\n  ret\n}\n",
        );
        assert_eq!(env.int_of(v(&p, "r")), Interval::range(10, 20));
        assert_eq!(env.int_of(v(&p, "a")), Interval::range(0, 1));
    }
}
