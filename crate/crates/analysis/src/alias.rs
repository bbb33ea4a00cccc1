//! Inclusion-based points-to analysis.
//!
//! Abstract objects are allocation sites and global cells. Pointer facts
//! live in SSA values and in per-object field cells: a store through a
//! pointer with a known constant displacement updates that field's cell,
//! anything else lands in a per-object summary cell that every read also
//! observes. Call, return, and spawn edges copy facts between functions.
//! The fixpoint is a plain worklist over subset constraints.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use uriah_hir::*;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Hash)]
pub enum AbsObj {
    Site(SiteId),
    Global(GlobalId),
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Hash)]
pub enum FieldKey {
    Off(u64),
    /// Summary cell for stores at statically unknown displacements.
    Any,
}

pub type CellKey = (AbsObj, FieldKey);

#[derive(Debug, Default)]
pub struct PointsTo {
    pub value_pts: BTreeMap<ValueId, BTreeSet<AbsObj>>,
    pub mem_pts: BTreeMap<CellKey, BTreeSet<AbsObj>>,
    /// Constant byte displacement of each ref value from its object start,
    /// when one is statically evident; `None` means variable.
    pub const_disp: HashMap<ValueId, Option<i64>>,
    /// Globals whose cells are stored through at runtime (re-pointed),
    /// as opposed to bound only by their declaration initializer.
    pub stored_globals: BTreeSet<GlobalId>,
}

impl PointsTo {
    pub fn pts(&self, v: ValueId) -> BTreeSet<AbsObj> {
        self.value_pts.get(&v).cloned().unwrap_or_default()
    }

    pub fn pts_operand(&self, op: Operand) -> BTreeSet<AbsObj> {
        match op {
            Operand::Const(_) => BTreeSet::new(),
            Operand::Value(v) => self.pts(v),
        }
    }

    pub fn sites(&self, v: ValueId) -> BTreeSet<SiteId> {
        self.pts(v)
            .into_iter()
            .filter_map(|o| match o {
                AbsObj::Site(s) => Some(s),
                AbsObj::Global(_) => None,
            })
            .collect()
    }

    pub fn disp_operand(&self, op: Operand) -> Option<i64> {
        match op {
            Operand::Const(0) => Some(0),
            Operand::Const(_) => None,
            Operand::Value(v) => self.const_disp.get(&v).copied().flatten(),
        }
    }

    /// The field cells a memory access through `ptr` may touch.
    pub fn cells_of(&self, ptr: Operand) -> BTreeSet<CellKey> {
        let mut out = BTreeSet::new();
        let disp = self.disp_operand(ptr);
        for obj in self.pts_operand(ptr) {
            match disp {
                Some(d) if d >= 0 => {
                    out.insert((obj, FieldKey::Off(d as u64)));
                    out.insert((obj, FieldKey::Any));
                }
                _ => {
                    // unknown displacement: may touch every cell of obj
                    for (key, _) in self.mem_pts.range((obj, FieldKey::Off(0))..=(obj, FieldKey::Any)) {
                        out.insert(*key);
                    }
                    out.insert((obj, FieldKey::Any));
                }
            }
        }
        out
    }
}

/// One subset constraint: everything in `from` flows into `to`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum Cell {
    Val(ValueId),
    Mem(AbsObj, FieldKey),
}

pub fn points_to(prog: &HirProgram, index: &ProgramIndex) -> PointsTo {
    let mut pt = PointsTo::default();
    compute_const_disp(prog, &mut pt);

    let mut sets: HashMap<Cell, BTreeSet<AbsObj>> = HashMap::new();
    // load/store constraints are displacement-dependent, so they re-run as
    // pointer sets grow: keep them as complex constraints.
    #[derive(Clone, Copy)]
    enum Complex {
        /// result ⊇ cells read through ptr
        Load { result: ValueId, ptr: Operand },
        /// cells written through ptr ⊇ value
        Store { ptr: Operand, value: Operand },
    }
    let mut edges: HashMap<Cell, Vec<Cell>> = HashMap::new();
    let mut complex: Vec<Complex> = Vec::new();
    let mut work: VecDeque<Cell> = VecDeque::new();

    let seed = |sets: &mut HashMap<Cell, BTreeSet<AbsObj>>, work: &mut VecDeque<Cell>, c: Cell, o: AbsObj| {
        if sets.entry(c).or_default().insert(o) {
            work.push_back(c);
        }
    };
    let edge = |edges: &mut HashMap<Cell, Vec<Cell>>, work: &mut VecDeque<Cell>, from: Cell, to: Cell| {
        edges.entry(from).or_default().push(to);
        work.push_back(from);
    };

    // Globals initialized by an allocation seed their cell.
    for site in &prog.sites {
        if let SitePlace::GlobalInit(g) = site.place {
            seed(
                &mut sets,
                &mut work,
                Cell::Mem(AbsObj::Global(g), FieldKey::Off(0)),
                AbsObj::Site(site.id),
            );
        }
    }

    for (r, ins) in prog.all_instrs() {
        let res = ins.result;
        match &ins.op {
            Op::Alloc { .. } => {
                let s = prog.site_of_instr(r).expect("alloc site");
                seed(&mut sets, &mut work, Cell::Val(res.unwrap()), AbsObj::Site(s));
            }
            Op::Realloc { ptr, .. } => {
                if let Some(v) = ptr.as_value() {
                    edge(&mut edges, &mut work, Cell::Val(v), Cell::Val(res.unwrap()));
                }
            }
            Op::GlobalAddr { global } => {
                seed(&mut sets, &mut work, Cell::Val(res.unwrap()), AbsObj::Global(*global));
            }
            Op::Gep { base, .. } => {
                if let Some(v) = base.as_value() {
                    edge(&mut edges, &mut work, Cell::Val(v), Cell::Val(res.unwrap()));
                }
            }
            Op::Assign { value } | Op::Cast { value, .. } => {
                if let Some(v) = value.as_value() {
                    if let Some(res) = res {
                        edge(&mut edges, &mut work, Cell::Val(v), Cell::Val(res));
                    }
                }
            }
            Op::Phi { incoming } => {
                for (op, _) in incoming {
                    if let Some(v) = op.as_value() {
                        edge(&mut edges, &mut work, Cell::Val(v), Cell::Val(res.unwrap()));
                    }
                }
            }
            Op::Load { prim, ptr } => {
                if *prim == PrimType::Ref {
                    complex.push(Complex::Load { result: res.unwrap(), ptr: *ptr });
                }
            }
            Op::Store { prim, ptr, value } => {
                if *prim == PrimType::Ref {
                    complex.push(Complex::Store { ptr: *ptr, value: *value });
                }
            }
            Op::Call { func, args } | Op::Spawn { func, args } => {
                let callee = prog.func(*func);
                for (p, a) in callee.params.iter().zip(args) {
                    if let Some(v) = a.as_value() {
                        edge(&mut edges, &mut work, Cell::Val(v), Cell::Val(p.value));
                    }
                }
            }
            _ => {}
        }
    }
    // Return edges: every `ret v` of f flows into every call-of-f result.
    for (fi, f) in prog.funcs.iter().enumerate() {
        let fid = FuncId(fi as u32);
        let rets: Vec<ValueId> = f
            .blocks
            .iter()
            .flat_map(|b| &b.instrs)
            .filter_map(|i| match &i.op {
                Op::Ret { value: Some(Operand::Value(v)) } => Some(*v),
                _ => None,
            })
            .collect();
        for call in index.callers.get(&fid).into_iter().flatten() {
            if let Some(res) = prog.instr(*call).result {
                for rv in &rets {
                    edge(&mut edges, &mut work, Cell::Val(*rv), Cell::Val(res));
                }
            }
        }
    }

    // Worklist: propagate along edges, re-evaluating loads and stores as
    // pointer sets change.
    loop {
        let mut changed = false;
        while let Some(c) = work.pop_front() {
            let Some(objs) = sets.get(&c).cloned() else { continue };
            if let Some(dsts) = edges.get(&c).cloned() {
                for dst in dsts {
                    let set = sets.entry(dst).or_default();
                    let before = set.len();
                    set.extend(objs.iter().copied());
                    if set.len() != before {
                        work.push_back(dst);
                        changed = true;
                    }
                }
            }
        }
        // Re-run the displacement-dependent constraints.
        for cx in &complex {
            match *cx {
                Complex::Load { result, ptr } => {
                    let mut gained: BTreeSet<AbsObj> = BTreeSet::new();
                    let disp = disp_of(&pt, ptr);
                    for obj in objs_of(&sets, &pt, ptr) {
                        match disp {
                            Some(d) if d >= 0 => {
                                for key in [FieldKey::Off(d as u64), FieldKey::Any] {
                                    if let Some(s) = sets.get(&Cell::Mem(obj, key)) {
                                        gained.extend(s.iter().copied());
                                    }
                                }
                            }
                            _ => {
                                for (cell, s) in sets.iter() {
                                    if let Cell::Mem(o, _) = cell {
                                        if *o == obj {
                                            gained.extend(s.iter().copied());
                                        }
                                    }
                                }
                            }
                        }
                    }
                    let set = sets.entry(Cell::Val(result)).or_default();
                    let before = set.len();
                    set.extend(gained);
                    if set.len() != before {
                        work.push_back(Cell::Val(result));
                        changed = true;
                    }
                }
                Complex::Store { ptr, value } => {
                    let vals = objs_of(&sets, &pt, value);
                    if vals.is_empty() {
                        continue;
                    }
                    let disp = disp_of(&pt, ptr);
                    for obj in objs_of(&sets, &pt, ptr) {
                        if let AbsObj::Global(g) = obj {
                            pt.stored_globals.insert(g);
                        }
                        let key = match disp {
                            Some(d) if d >= 0 => FieldKey::Off(d as u64),
                            _ => FieldKey::Any,
                        };
                        let set = sets.entry(Cell::Mem(obj, key)).or_default();
                        let before = set.len();
                        set.extend(vals.iter().copied());
                        if set.len() != before {
                            work.push_back(Cell::Mem(obj, key));
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed && work.is_empty() {
            break;
        }
    }

    for (cell, objs) in sets {
        match cell {
            Cell::Val(v) => {
                pt.value_pts.insert(v, objs);
            }
            Cell::Mem(o, k) => {
                pt.mem_pts.insert((o, k), objs);
            }
        }
    }
    pt
}

fn objs_of(sets: &HashMap<Cell, BTreeSet<AbsObj>>, _pt: &PointsTo, op: Operand) -> BTreeSet<AbsObj> {
    match op {
        Operand::Const(_) => BTreeSet::new(),
        Operand::Value(v) => sets.get(&Cell::Val(v)).cloned().unwrap_or_default(),
    }
}

fn disp_of(pt: &PointsTo, op: Operand) -> Option<i64> {
    pt.disp_operand(op)
}

/// Constant byte displacement of each ref value from its object's start:
/// allocation results and global addresses sit at 0, constant geps add,
/// copies preserve, everything else (variable geps, loads, phis that
/// disagree) is unknown. Computed to a fixpoint so phi cycles settle.
fn compute_const_disp(prog: &HirProgram, pt: &mut PointsTo) {
    // Two-phase lattice per value: Unset -> Known(d) -> Unknown.
    #[derive(Clone, Copy, PartialEq)]
    enum D {
        Unset,
        Known(i64),
        Unknown,
    }
    let mut disp: HashMap<ValueId, D> = HashMap::new();
    let get = |m: &HashMap<ValueId, D>, op: Operand| -> D {
        match op {
            Operand::Const(0) => D::Known(0),
            Operand::Const(_) => D::Unknown,
            Operand::Value(v) => *m.get(&v).unwrap_or(&D::Unset),
        }
    };
    loop {
        let mut changed = false;
        for (_, ins) in prog.all_instrs() {
            let Some(res) = ins.result else { continue };
            let new = match &ins.op {
                Op::Alloc { .. } | Op::Realloc { .. } | Op::GlobalAddr { .. } => D::Known(0),
                Op::Gep { base, offset } => match (get(&disp, *base), *offset) {
                    (D::Known(d), Operand::Const(k)) => D::Known(d.wrapping_add(k)),
                    (D::Unset, _) => D::Unset,
                    _ => D::Unknown,
                },
                Op::Assign { value } => get(&disp, *value),
                Op::Cast { value, target } => match target {
                    CastTarget::Int(_) => continue,
                    _ => get(&disp, *value),
                },
                Op::Load { prim, .. } => {
                    if *prim == PrimType::Ref {
                        D::Unknown // displacement of stored pointers not tracked
                    } else {
                        continue;
                    }
                }
                Op::Phi { incoming } => {
                    let mut acc = D::Unset;
                    for (op, _) in incoming {
                        acc = match (acc, get(&disp, *op)) {
                            (D::Unset, x) | (x, D::Unset) => x,
                            (D::Known(a), D::Known(b)) if a == b => D::Known(a),
                            _ => D::Unknown,
                        };
                    }
                    acc
                }
                Op::Call { .. } => D::Unknown,
                _ => continue,
            };
            let cur = *disp.get(&res).unwrap_or(&D::Unset);
            let joined = match (cur, new) {
                (D::Unset, x) | (x, D::Unset) => x,
                (D::Known(a), D::Known(b)) if a == b => D::Known(a),
                _ => D::Unknown,
            };
            if joined != cur {
                disp.insert(res, joined);
                changed = true;
            }
        }
        // parameters: join over call/spawn arguments
        for (_, ins) in prog.all_instrs() {
            if let Op::Call { func, args } | Op::Spawn { func, args } = &ins.op {
                let callee = prog.func(*func);
                for (p, a) in callee.params.iter().zip(args) {
                    if p.prim != PrimType::Ref {
                        continue;
                    }
                    let cur = *disp.get(&p.value).unwrap_or(&D::Unset);
                    let arg = get(&disp, *a);
                    let joined = match (cur, arg) {
                        (D::Unset, x) | (x, D::Unset) => x,
                        (D::Known(x), D::Known(y)) if x == y => D::Known(x),
                        _ => D::Unknown,
                    };
                    if joined != cur {
                        disp.insert(p.value, joined);
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    for (v, d) in disp {
        pt.const_disp.insert(
            v,
            match d {
                D::Known(k) => Some(k),
                _ => None,
            },
        );
    }
}

/// Sites that escape through globals whose binding discipline cannot be
/// validated: a ref global passes only when it is bound exactly once by
/// its declaration initializer and never stored through afterwards; any
/// global whose layout contains ref fields fails outright. Every site
/// reachable from a failing global's cells is returned with the reason.
pub fn global_alias_unsafe(prog: &HirProgram, pt: &PointsTo) -> BTreeMap<SiteId, String> {
    let mut out = BTreeMap::new();
    for (gi, g) in prog.globals.iter().enumerate() {
        let gid = GlobalId(gi as u32);
        let obj = AbsObj::Global(gid);
        let has_ref_cells = match &g.ty {
            GlobalType::Prim(PrimType::Ref, _) => true,
            GlobalType::Prim(_, _) => false,
            GlobalType::Compound(name) => prog
                .types
                .allocated(name)
                .map(|t| t.fields().iter().any(|f| f.prim == PrimType::Ref))
                .unwrap_or(false),
        };
        if !has_ref_cells {
            continue; // scalar globals hold no pointers
        }
        let singleton_ok = matches!(&g.ty, GlobalType::Prim(PrimType::Ref, _))
            && matches!(g.init, Some(GlobalInit::Alloc(_)))
            && !pt.stored_globals.contains(&gid);
        if singleton_ok {
            continue;
        }
        // every site reachable from this global's cells is tainted
        for ((o, _), objs) in &pt.mem_pts {
            if *o != obj {
                continue;
            }
            for target in objs {
                if let AbsObj::Site(s) = target {
                    out.entry(*s).or_insert_with(|| "global-alias".to_string());
                }
            }
        }
    }
    out
}

/// Stores that publish a site into a failing global, per site: the
/// classification refiner needs them to know what would have to be
/// unreachable for the taint to go away.
pub fn global_alias_contributors(
    prog: &HirProgram,
    pt: &PointsTo,
    tainted: &BTreeMap<SiteId, String>,
) -> BTreeMap<SiteId, Vec<InstrRef>> {
    let mut out: BTreeMap<SiteId, Vec<InstrRef>> = BTreeMap::new();
    for (r, ins) in prog.all_instrs() {
        if let Op::Store { prim: PrimType::Ref, ptr, value } = &ins.op {
            let hits_global = pt.pts_operand(*ptr).iter().any(|o| matches!(o, AbsObj::Global(_)));
            if !hits_global {
                continue;
            }
            for s in pt
                .pts_operand(*value)
                .iter()
                .filter_map(|o| if let AbsObj::Site(s) = o { Some(*s) } else { None })
            {
                if tainted.contains_key(&s) {
                    out.entry(s).or_default().push(r);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(src: &str) -> (HirProgram, ProgramIndex, PointsTo) {
        let prog = parse_program(src).expect("parse");
        let index = build_indexes(&prog);
        let pt = points_to(&prog, &index);
        (prog, index, pt)
    }

    fn vid(prog: &HirProgram, name: &str) -> ValueId {
        prog.values
            .iter()
            .position(|v| v.name == name)
            .map(|i| ValueId(i as u32))
            .expect("value by name")
    }

    #[test]
    fn alloc_gep_and_copy_share_the_site() {
        let (prog, _ix, pt) = build(
            "type P = { x: i64 }\n\
             fn main() {\nb0:\n  p = alloc P\n  q = gep p, 0\n  r = assign q\n  free r\n  ret\n}\n",
        );
        for name in ["p", "q", "r"] {
            assert_eq!(pt.sites(vid(&prog, name)), BTreeSet::from([SiteId(0)]), "{name}");
        }
        assert_eq!(pt.const_disp[&vid(&prog, "q")], Some(0));
    }

    #[test]
    fn store_load_roundtrip_through_global() {
        let (prog, _ix, pt) = build(
            "type P = { x: i64 }\n\
             global slot: ref\n\
             fn main() {\nb0:\n  p = alloc P\n  g = global-addr slot\n  store ref g, p\n  q = load ref g\n  free q\n  ret\n}\n",
        );
        assert_eq!(pt.sites(vid(&prog, "q")), BTreeSet::from([SiteId(0)]));
        assert!(pt.stored_globals.contains(&GlobalId(0)));
    }

    #[test]
    fn field_cells_separate_constant_offsets() {
        let (prog, _ix, pt) = build(
            "type P = { a: i64, b: i64 }\n\
             type A = { x: i64 }\n\
             type B = { x: i64 }\n\
             fn main() {\nb0:\n  p = alloc P\n  u = alloc A\n  v = alloc B\n\
               q = gep p, 8\n  store ref p, u\n  store ref q, v\n\
               lu = load ref p\n  lv = load ref q\n  free lu\n  free lv\n  ret\n}\n",
        );
        assert_eq!(pt.sites(vid(&prog, "lu")), BTreeSet::from([SiteId(1)]));
        assert_eq!(pt.sites(vid(&prog, "lv")), BTreeSet::from([SiteId(2)]));
    }

    #[test]
    fn variable_offset_store_merges_into_summary() {
        let (prog, _ix, pt) = build(
            "type P = { a: i64, b: i64 }\n\
             type A = { x: i64 }\n\
             fn main(n: i64 in 0..2) {\nb0:\n  p = alloc P\n  u = alloc A\n\
               q = gep p, n\n  store ref q, u\n  l = load ref p\n  free l\n  ret\n}\n",
        );
        // stored at unknown offset: a load at offset 0 must still see it
        assert_eq!(pt.sites(vid(&prog, "l")), BTreeSet::from([SiteId(1)]));
    }

    #[test]
    fn calls_copy_arguments_and_returns() {
        let (prog, _ix, pt) = build(
            "type P = { x: i64 }\n\
             fn id(r: ref) {\nb0:\n  ret r\n}\n\
             fn main() {\nb0:\n  p = alloc P\n  q = call id(p)\n  free q\n  ret\n}\n",
        );
        assert_eq!(pt.sites(vid(&prog, "q")), BTreeSet::from([SiteId(0)]));
        assert_eq!(pt.sites(vid(&prog, "r")), BTreeSet::from([SiteId(0)]));
    }

    #[test]
    fn initialized_singleton_global_passes_validation() {
        let (prog, _ix, pt) = build(
            "type P = { x: i64 }\n\
             global slot: ref<P> = alloc P\n\
             fn main() {\nb0:\n  g = global-addr slot\n  p = load ref g\n  store i64 p, 1\n  ret\n}\n",
        );
        assert!(global_alias_unsafe(&prog, &pt).is_empty());
    }

    #[test]
    fn repointed_global_taints_sites() {
        let (prog, _ix, pt) = build(
            "type P = { x: i64 }\n\
             global slot: ref\n\
             fn main() {\nb0:\n  p = alloc P\n  g = global-addr slot\n  store ref g, p\n  ret\n}\n",
        );
        let tainted = global_alias_unsafe(&prog, &pt);
        assert_eq!(tainted.get(&SiteId(0)).map(|s| s.as_str()), Some("global-alias"));
        let contribs = global_alias_contributors(&prog, &pt, &tainted);
        assert_eq!(contribs[&SiteId(0)].len(), 1);
    }

    #[test]
    fn compound_global_with_ref_field_taints() {
        let (prog, _ix, pt) = build(
            "type Pair = { n: i64, p: ref }\n\
             type P = { x: i64 }\n\
             global pair: Pair\n\
             fn main() {\nb0:\n  p = alloc P\n  g = global-addr pair\n  q = gep g, 8\n  store ref q, p\n  ret\n}\n",
        );
        let tainted = global_alias_unsafe(&prog, &pt);
        assert!(tainted.contains_key(&SiteId(0)));
    }
}
