//! Spatial safety: every access through every alias of a site must be
//! provably inside the allocation.
//!
//! The checks run at loads and stores — pointer arithmetic on its own
//! never faults, so a derived out-of-bounds pointer matters exactly when
//! it is dereferenced, and checking there keeps verdicts aligned with
//! what a concrete execution can observe. An access of width w through a
//! pointer whose byte-index interval is [lo, hi] into an object of size
//! R is in bounds when lo ≥ 0 and hi + w ≤ R.
//!
//! Object sizes follow aliases: an allocation seeds its root size, a
//! grow-only realloc reseeds it, and the root flows through copies,
//! pointer arithmetic, phis, calls, and memory cells, taking the minimum
//! wherever lineages merge. Reallocation to a smaller or non-constant
//! size is itself unsafe, which is what makes the minimum sound.

use std::collections::{BTreeSet, HashMap};

use uriah_hir::*;

use crate::alias::{AbsObj, CellKey, PointsTo};
use crate::interval::Bound;
use crate::numeric::NumEnv;
use crate::shared::{load_cells, store_cells};
use crate::{push_reason, Reasons};

#[derive(Debug, Default)]
pub struct SpatialReport {
    pub reasons: Reasons,
}

impl SpatialReport {
    pub fn is_safe(&self, s: SiteId) -> bool {
        !self.reasons.contains_key(&s)
    }
}

pub fn analyze(
    prog: &HirProgram,
    index: &ProgramIndex,
    pt: &PointsTo,
    num: &NumEnv,
    excluded: &BTreeSet<InstrRef>,
) -> SpatialReport {
    let mut reasons = Reasons::new();

    // Static size of each allocation site, where one exists.
    let mut base_size: HashMap<SiteId, u64> = HashMap::new();
    for site in &prog.sites {
        match &site.arg {
            AllocArg::Type(name) => {
                if let Ok(at) = prog.types.allocated(name) {
                    base_size.insert(site.id, at.size());
                }
            }
            AllocArg::Size(op) => {
                if let Some(n) = num.int_of(*op).singleton() {
                    if n >= 0 {
                        base_size.insert(site.id, n as u64);
                    }
                }
            }
        }
    }

    let root = propagate_roots(prog, index, pt, num, &base_size);

    // Grow-only reallocation with a static size.
    for (r, ins) in prog.all_instrs() {
        let Op::Realloc { ptr, arg } = &ins.op else { continue };
        if excluded.contains(&r) {
            continue;
        }
        let new_size = match arg {
            AllocArg::Type(name) => prog.types.allocated(name).ok().map(|at| at.size()),
            AllocArg::Size(op) => num.int_of(*op).singleton().filter(|n| *n >= 0).map(|n| n as u64),
        };
        for obj in pt.pts_operand(*ptr) {
            let AbsObj::Site(s) = obj else { continue };
            match new_size {
                None => push_reason(&mut reasons, s, "realloc-variable", r),
                Some(nz) => {
                    let old = ptr
                        .as_value()
                        .and_then(|v| root.get(&(v, s)).copied())
                        .or_else(|| base_size.get(&s).copied());
                    if let Some(old) = old {
                        if nz < old {
                            push_reason(&mut reasons, s, "realloc-shrink", r);
                        }
                    }
                }
            }
        }
    }

    // Width-aware bounds check at every access.
    for (r, ins) in prog.all_instrs() {
        let (prim, ptr) = match &ins.op {
            Op::Load { prim, ptr } => (*prim, *ptr),
            Op::Store { prim, ptr, .. } => (*prim, *ptr),
            _ => continue,
        };
        if excluded.contains(&r) {
            continue;
        }
        let w = prim.size();
        let iv = num.idx_of(ptr);
        for obj in pt.pts_operand(ptr) {
            let AbsObj::Site(s) = obj else {
                continue; // global cells have no site verdict
            };
            let size = ptr
                .as_value()
                .and_then(|v| root.get(&(v, s)).copied())
                .or_else(|| base_size.get(&s).copied());
            let Some(size) = size else {
                push_reason(&mut reasons, s, "non-constant-size", r);
                continue;
            };
            if !iv.is_finite() {
                let what = num.taint_of(ptr).unwrap_or("non-constant-offset").to_string();
                push_reason(&mut reasons, s, what, r);
                continue;
            }
            let (Bound::Fin(lo), Bound::Fin(hi)) = (iv.lo, iv.hi) else { unreachable!() };
            if lo >= 0 && hi as i128 + w as i128 <= size as i128 {
                continue;
            }
            let what = if hi < 0 { "negative-offset" } else { "oob-access" };
            push_reason(&mut reasons, s, what, r);
        }
    }

    SpatialReport { reasons }
}

/// Per-(value, site) minimum object size along every lineage that could
/// have produced the value, mirroring the points-to edges. Entries only
/// decrease, so the fixpoint terminates.
fn propagate_roots(
    prog: &HirProgram,
    index: &ProgramIndex,
    pt: &PointsTo,
    num: &NumEnv,
    base_size: &HashMap<SiteId, u64>,
) -> HashMap<(ValueId, SiteId), u64> {
    let mut root: HashMap<(ValueId, SiteId), u64> = HashMap::new();
    let mut cellroot: HashMap<(CellKey, SiteId), u64> = HashMap::new();

    // seeds: allocations at their static size, reallocations at theirs
    for (r, ins) in prog.all_instrs() {
        match &ins.op {
            Op::Alloc { .. } => {
                let (Some(v), Some(s)) = (ins.result, prog.site_of_instr(r)) else { continue };
                if let Some(sz) = base_size.get(&s) {
                    root.insert((v, s), *sz);
                }
            }
            Op::Realloc { ptr, arg } => {
                let Some(v) = ins.result else { continue };
                let new_size = match arg {
                    AllocArg::Type(name) => prog.types.allocated(name).ok().map(|at| at.size()),
                    AllocArg::Size(op) => {
                        num.int_of(*op).singleton().filter(|n| *n >= 0).map(|n| n as u64)
                    }
                };
                let Some(nz) = new_size else { continue };
                for obj in pt.pts_operand(*ptr) {
                    if let AbsObj::Site(s) = obj {
                        root.insert((v, s), nz);
                    }
                }
            }
            _ => {}
        }
    }
    // global `= alloc T` cells hold a pointer to a fully sized object
    for site in &prog.sites {
        let SitePlace::GlobalInit(g) = site.place else { continue };
        if let Some(sz) = base_size.get(&site.id) {
            for key in [(AbsObj::Global(g), crate::alias::FieldKey::Off(0))] {
                let e = cellroot.entry((key, site.id)).or_insert(*sz);
                *e = (*e).min(*sz);
            }
        }
    }

    let min_in = |m: &mut HashMap<(ValueId, SiteId), u64>, k: (ValueId, SiteId), v: u64| -> bool {
        match m.get(&k) {
            Some(old) if *old <= v => false,
            _ => {
                m.insert(k, v);
                true
            }
        }
    };

    loop {
        let mut changed = false;
        // value → value copies: collect source entries per destination
        let mut copy = |root: &mut HashMap<(ValueId, SiteId), u64>, dst: ValueId, src: Operand| {
            let Some(sv) = src.as_value() else { return false };
            let entries: Vec<(SiteId, u64)> = root
                .iter()
                .filter(|((v, _), _)| *v == sv)
                .map(|((_, s), sz)| (*s, *sz))
                .collect();
            let mut any = false;
            for (s, sz) in entries {
                any |= min_in(root, (dst, s), sz);
            }
            any
        };
        for (_, ins) in prog.all_instrs() {
            match &ins.op {
                Op::Gep { base, .. } => {
                    changed |= copy(&mut root, ins.result.unwrap(), *base);
                }
                Op::Assign { value } | Op::Cast { value, .. } => {
                    changed |= copy(&mut root, ins.result.unwrap(), *value);
                }
                Op::Phi { incoming } => {
                    for (o, _) in incoming {
                        changed |= copy(&mut root, ins.result.unwrap(), *o);
                    }
                }
                Op::Store { ptr, value, .. } => {
                    let Some(sv) = value.as_value() else { continue };
                    let entries: Vec<(SiteId, u64)> = root
                        .iter()
                        .filter(|((v, _), _)| *v == sv)
                        .map(|((_, s), sz)| (*s, *sz))
                        .collect();
                    for cell in store_cells(pt, *ptr) {
                        for (s, sz) in &entries {
                            let k = (cell, *s);
                            match cellroot.get(&k) {
                                Some(old) if *old <= *sz => {}
                                _ => {
                                    cellroot.insert(k, *sz);
                                    changed = true;
                                }
                            }
                        }
                    }
                }
                Op::Load { ptr, .. } => {
                    let dst = ins.result.unwrap();
                    for cell in load_cells(pt, *ptr) {
                        let entries: Vec<(SiteId, u64)> = cellroot
                            .iter()
                            .filter(|((c, _), _)| *c == cell)
                            .map(|((_, s), sz)| (*s, *sz))
                            .collect();
                        for (s, sz) in entries {
                            changed |= min_in(&mut root, (dst, s), sz);
                        }
                    }
                }
                Op::Call { func, args } | Op::Spawn { func, args } => {
                    let callee = prog.func(*func);
                    for (p, a) in callee.params.iter().zip(args) {
                        changed |= copy(&mut root, p.value, *a);
                    }
                }
                _ => {}
            }
        }
        // returned values flow to call results
        for (fi, f) in prog.funcs.iter().enumerate() {
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
            for call in index.callers.get(&fid).into_iter().flatten() {
                if let Some(res) = prog.instr(*call).result {
                    for o in &rets {
                        changed |= copy(&mut root, res, *o);
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    root
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alias::points_to;
    use crate::{numeric, shared};

    fn run(src: &str) -> (HirProgram, SpatialReport) {
        run_excluding(src, &BTreeSet::new())
    }

    fn run_excluding(src: &str, excluded: &BTreeSet<InstrRef>) -> (HirProgram, SpatialReport) {
        let prog = parse_program(src).expect("parse");
        let index = build_indexes(&prog);
        let pt = points_to(&prog, &index);
        let sh = shared::analyze(&prog, &index, &pt);
        let num = numeric::analyze(&prog, &index, &pt, &sh);
        let rep = analyze(&prog, &index, &pt, &num, excluded);
        (prog, rep)
    }

    fn reason_labels(rep: &SpatialReport, s: SiteId) -> Vec<&str> {
        rep.reasons.get(&s).map(|m| m.keys().map(|k| k.as_str()).collect()).unwrap_or_default()
    }

    #[test]
    fn constant_buffer_walk_is_safe() {
        let (_, rep) = run(
            "type B = { d: i8[8] }\n\
             fn main() {\nb0:\n  b = alloc B\n  jmp b1\n\
             b1:\n  i = phi [0, b0], [i2, b2]\n  c = cmp lt i, 8\n  br c, b2, b3\n\
             b2:\n  q = gep b, i\n  store i8 q, 7\n  i2 = add i, 1\n  jmp b1\n\
             b3:\n  ret\n}\n",
        );
        assert!(rep.reasons.is_empty(), "{:?}", rep.reasons);
    }

    #[test]
    fn unchecked_input_offset_is_unsafe() {
        let (p, rep) = run(
            "type B = { d: i8[8] }\n\
             fn main(n: i64 in 0..16) {\nb0:\n  b = alloc B\n  q = gep b, n\n  x = load i8 q\n  ret\n}\n",
        );
        let s = p.sites[0].id;
        assert_eq!(reason_labels(&rep, s), vec!["oob-access"]);
        // the contributor is the faulting load, not the gep
        let at = rep.reasons[&s]["oob-access"].iter().next().unwrap();
        assert!(matches!(p.instr(*at).op, Op::Load { .. }));
    }

    #[test]
    fn access_width_counts_against_the_bound() {
        let (_, rep) = run(
            "type B = { d: i8[8] }\n\
             fn main() {\nb0:\n  b = alloc B\n  q = gep b, 0\n  store i64 q, 1\n  ret\n}\n",
        );
        assert!(rep.reasons.is_empty(), "8-byte store at offset 0 of 8 fits");
        let (p2, rep2) = run(
            "type B = { d: i8[8] }\n\
             fn main() {\nb0:\n  b = alloc B\n  q = gep b, 1\n  store i64 q, 1\n  ret\n}\n",
        );
        assert_eq!(reason_labels(&rep2, p2.sites[0].id), vec!["oob-access"]);
    }

    #[test]
    fn negative_offset_flagged() {
        let (p, rep) = run(
            "type B = { d: i8[8] }\n\
             fn main() {\nb0:\n  b = alloc B\n  q = gep b, -1\n  x = load i8 q\n  ret\n}\n",
        );
        assert_eq!(reason_labels(&rep, p.sites[0].id), vec!["negative-offset"]);
    }

    #[test]
    fn one_past_end_pointer_without_access_is_safe() {
        let (_, rep) = run(
            "type B = { d: i8[8] }\n\
             fn main() {\nb0:\n  b = alloc B\n  q = gep b, 8\n  ret\n}\n",
        );
        assert!(rep.reasons.is_empty(), "forming the end pointer is not an access");
    }

    const CURSOR_AT: &str = "type B = { d: i8[SIZE] }\n\
        global cur: ref\n\
        fn adv3() {\nb0:\n  g = global-addr cur\n  p = load ref g\n  p2 = gep p, 3\n  store i8 p2, 1\n  store ref g, p2\n  ret\n}\n\
        fn adv5() {\nb0:\n  g = global-addr cur\n  p = load ref g\n  p2 = gep p, 5\n  store i8 p2, 1\n  store ref g, p2\n  ret\n}\n\
        fn main() {\nb0:\n  b = alloc B\n  g = global-addr cur\n  store ref g, b\n  spawn adv3()\n  spawn adv5()\n  ret\n}\n";

    #[test]
    fn accumulated_cursor_flips_between_sizes_eight_and_nine() {
        // total advance is 3 + 5 = 8; the furthest byte written is at
        // offset 8, so nine bytes suffice and eight do not
        let (_, safe) = run(&CURSOR_AT.replace("SIZE", "9"));
        assert!(safe.reasons.is_empty(), "{:?}", safe.reasons);
        let (p, tight) = run(&CURSOR_AT.replace("SIZE", "8"));
        let buf = p.sites[0].id;
        assert_eq!(reason_labels(&tight, buf), vec!["oob-access"]);
    }

    #[test]
    fn realloc_grow_extends_the_root_size() {
        let (_, rep) = run(
            "type B = { d: i8[8] }\n\
             fn main() {\nb0:\n  b = alloc B\n  r = realloc b, 16\n  q = gep r, 15\n  store i8 q, 1\n  ret\n}\n",
        );
        assert!(rep.reasons.is_empty(), "{:?}", rep.reasons);
    }

    #[test]
    fn realloc_shrink_is_unsafe() {
        let (p, rep) = run(
            "type B = { d: i8[8] }\n\
             fn main() {\nb0:\n  b = alloc B\n  r = realloc b, 4\n  ret\n}\n",
        );
        assert_eq!(reason_labels(&rep, p.sites[0].id), vec!["realloc-shrink"]);
    }

    #[test]
    fn realloc_variable_size_is_unsafe() {
        let (p, rep) = run(
            "type B = { d: i8[8] }\n\
             fn main(n: i64 in 8..32) {\nb0:\n  b = alloc B\n  r = realloc b, n\n  ret\n}\n",
        );
        assert_eq!(reason_labels(&rep, p.sites[0].id), vec!["realloc-variable"]);
    }

    #[test]
    fn old_alias_keeps_its_own_bound_after_grow() {
        let (_, rep) = run(
            "type B = { d: i8[8] }\n\
             fn main() {\nb0:\n  b = alloc B\n  r = realloc b, 16\n  q = gep b, 7\n  x = load i8 q\n  ret\n}\n",
        );
        // the stale alias only certifies the original eight bytes
        assert!(rep.reasons.is_empty(), "{:?}", rep.reasons);
    }

    #[test]
    fn variable_size_allocation_access_is_unsafe() {
        let (p, rep) = run(
            "fn main(n: i64 in 1..16) {\nb0:\n  b = alloc n\n  x = load i8 b\n  ret\n}\n",
        );
        assert_eq!(reason_labels(&rep, p.sites[0].id), vec!["non-constant-size"]);
    }

    #[test]
    fn failed_cursor_cell_reason_reaches_the_access() {
        let (p, rep) = run(
            "type B = { d: i8[9] }\n\
             global cur: ref\n\
             fn adv(n: i64) {\nb0:\n  g = global-addr cur\n  p = load ref g\n  p2 = gep p, n\n  store i8 p2, 1\n  store ref g, p2\n  ret\n}\n\
             fn main(n: i64 in 0..4) {\nb0:\n  b = alloc B\n  g = global-addr cur\n  store ref g, b\n  spawn adv(n)\n  ret\n}\n",
        );
        assert_eq!(reason_labels(&rep, p.sites[0].id), vec!["non-constant-increment"]);
    }

    #[test]
    fn size_roots_travel_through_memory() {
        let (_, rep) = run(
            "type B = { d: i8[8] }\n\
             global slot: ref\n\
             fn main() {\nb0:\n  b = alloc B\n  g = global-addr slot\n  store ref g, b\n\
               l = load ref g\n  q = gep l, 7\n  store i8 q, 1\n  ret\n}\n",
        );
        assert!(rep.reasons.is_empty(), "{:?}", rep.reasons);
        let (p2, rep2) = run(
            "type B = { d: i8[8] }\n\
             global slot: ref\n\
             fn main() {\nb0:\n  b = alloc B\n  g = global-addr slot\n  store ref g, b\n\
               l = load ref g\n  q = gep l, 8\n  store i8 q, 1\n  ret\n}\n",
        );
        assert_eq!(reason_labels(&rep2, p2.sites[0].id), vec!["oob-access"]);
    }

    #[test]
    fn initializer_site_is_sized_through_its_global() {
        let (p, rep) = run(
            "type B = { d: i8[4] }\n\
             global buf: ref = alloc B\n\
             fn main() {\nb0:\n  g = global-addr buf\n  l = load ref g\n  q = gep l, 3\n  store i8 q, 1\n  ret\n}\n",
        );
        assert!(rep.reasons.is_empty(), "{:?}", rep.reasons);
        let (p2, rep2) = run(
            "type B = { d: i8[4] }\n\
             global buf: ref = alloc B\n\
             fn main() {\nb0:\n  g = global-addr buf\n  l = load ref g\n  q = gep l, 4\n  store i8 q, 1\n  ret\n}\n",
        );
        assert_eq!(p.sites.len(), 1);
        assert_eq!(reason_labels(&rep2, p2.sites[0].id), vec!["oob-access"]);
    }

    #[test]
    fn excluding_the_only_bad_access_clears_the_site() {
        let src = "type B = { d: i8[8] }\n\
             fn main(n: i64 in 0..16) {\nb0:\n  b = alloc B\n  q = gep b, n\n  x = load i8 q\n  ret\n}\n";
        let (p, rep) = run(src);
        let s = p.sites[0].id;
        let bad: BTreeSet<InstrRef> = rep.reasons[&s]["oob-access"].clone();
        let (_, rep2) = run_excluding(src, &bad);
        assert!(rep2.reasons.is_empty(), "{:?}", rep2.reasons);
    }
}
