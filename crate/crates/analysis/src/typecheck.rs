//! Allocated-type safety: every object has one layout, and every view
//! and access of it must conform to that layout.
//!
//! A typed allocation binds its layout immediately. A raw `alloc n`
//! takes its layout from the casts applied to its aliases: exactly one
//! size-matching layout wins (delayed typing); none at all makes the
//! object a byte blob; anything else leaves the site untypable. A
//! reallocation may retype a site only to a layout that keeps the old
//! one as an exact prefix, or by growing a whole number of trailing
//! elements.
//!
//! Compatibility is structural — flattened (offset, size, primitive)
//! triples — so a cast is legal exactly when its view is a prefix of the
//! bound layout, and an access is legal when it lands on a field of its
//! own width and primitive (or anywhere in a homogeneous object when
//! the offset is not a single point). Bounds are the spatial pass's
//! job; this pass owns shape.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use uriah_hir::*;

use crate::alias::{AbsObj, PointsTo};
use crate::numeric::NumEnv;
use crate::{push_reason, Reasons};

/// The layout bound to a site, after delayed typing and retyping.
#[derive(Clone, Debug)]
pub enum SiteType {
    Known(AllocatedType),
    Unknown,
}

impl SiteType {
    pub fn known(&self) -> Option<&AllocatedType> {
        match self {
            SiteType::Known(t) => Some(t),
            SiteType::Unknown => None,
        }
    }
}

#[derive(Debug, Default)]
pub struct TypeReport {
    pub reasons: Reasons,
    /// Effective layout per site (the largest in its retype chain).
    pub site_types: BTreeMap<SiteId, SiteType>,
}

pub fn analyze(
    prog: &HirProgram,
    pt: &PointsTo,
    num: &NumEnv,
    excluded: &BTreeSet<InstrRef>,
) -> TypeReport {
    let mut reasons = Reasons::new();
    let mut site_types: BTreeMap<SiteId, SiteType> = BTreeMap::new();

    // compound casts seen per site, in program order
    let mut casts: HashMap<SiteId, Vec<(InstrRef, String)>> = HashMap::new();
    for (r, ins) in prog.all_instrs() {
        let Op::Cast { value, target: CastTarget::Compound(name) } = &ins.op else { continue };
        if excluded.contains(&r) {
            continue;
        }
        for obj in pt.pts_operand(*value) {
            if let AbsObj::Site(s) = obj {
                casts.entry(s).or_default().push((r, name.clone()));
            }
        }
    }

    // initial binding per site
    for site in &prog.sites {
        let tb = match &site.arg {
            AllocArg::Type(name) => match prog.types.allocated(name) {
                Ok(t) => SiteType::Known(t),
                Err(_) => SiteType::Unknown,
            },
            AllocArg::Size(op) => match num.int_of(*op).singleton() {
                Some(n) if n > 0 => {
                    delayed_binding(prog, site.id, n as u64, &casts, &mut reasons)
                }
                _ => SiteType::Unknown,
            },
        };
        site_types.insert(site.id, tb);
    }

    // retype chains from reallocations, smallest target first
    let mut retypes: HashMap<SiteId, Vec<(u64, InstrRef, Option<AllocatedType>)>> = HashMap::new();
    for (r, ins) in prog.all_instrs() {
        let Op::Realloc { ptr, arg } = &ins.op else { continue };
        if excluded.contains(&r) {
            continue;
        }
        let target = match arg {
            AllocArg::Type(name) => prog.types.allocated(name).ok().map(|t| (t.size(), Some(t))),
            AllocArg::Size(op) => num
                .int_of(*op)
                .singleton()
                .filter(|n| *n > 0)
                .map(|n| (n as u64, None)),
        };
        let Some((sz, at)) = target else { continue };
        for obj in pt.pts_operand(*ptr) {
            if let AbsObj::Site(s) = obj {
                retypes.entry(s).or_default().push((sz, r, at.clone()));
            }
        }
    }
    for (s, mut events) in retypes {
        let Some(SiteType::Known(mut cur)) = site_types.get(&s).cloned() else { continue };
        events.sort_by_key(|(sz, r, _)| (*sz, *r));
        for (sz, r, at) in events {
            if sz < cur.size() {
                continue; // shrink is the spatial pass's verdict
            }
            match at {
                Some(t) => {
                    if is_layout_prefix(cur.fields(), t.fields()) {
                        cur = t;
                    } else {
                        push_reason(&mut reasons, s, "realloc-retype", r);
                    }
                }
                None => match extend_trailing(&cur, sz) {
                    Some(t) => cur = t,
                    None => push_reason(&mut reasons, s, "realloc-retype", r),
                },
            }
        }
        site_types.insert(s, SiteType::Known(cur));
    }

    // every compound view must be a prefix of the bound layout
    for (s, site_casts) in &casts {
        let Some(SiteType::Known(tb)) = site_types.get(s) else { continue };
        for (r, name) in site_casts {
            let Ok(view) = prog.types.allocated(name) else { continue };
            if !is_layout_prefix(view.fields(), tb.fields()) {
                push_reason(&mut reasons, *s, "incompatible-cast", *r);
            }
        }
    }

    // accesses must land on fields of their own width and primitive
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
        if !iv.is_finite() {
            continue; // the spatial pass flags unbounded offsets
        }
        for obj in pt.pts_operand(ptr) {
            let AbsObj::Site(s) = obj else { continue };
            let Some(SiteType::Known(tb)) = site_types.get(&s) else { continue };
            match iv.singleton() {
                Some(o) => {
                    if o < 0 || (o as u64).saturating_add(w) > tb.size() {
                        continue; // out of bounds is the spatial verdict
                    }
                    let fits = tb
                        .field_at(o as u64)
                        .is_some_and(|f| f.size == w && f.prim == prim);
                    if !fits {
                        push_reason(&mut reasons, s, "access-type-mismatch", r);
                    }
                }
                None => {
                    if !tb.homogeneous(prim) {
                        push_reason(&mut reasons, s, "access-type-mismatch", r);
                    }
                }
            }
        }
    }

    TypeReport { reasons, site_types }
}

/// Binds a raw allocation from the casts over its aliases: one distinct
/// size-matching layout wins; no casts at all means a byte blob.
fn delayed_binding(
    prog: &HirProgram,
    site: SiteId,
    n: u64,
    casts: &HashMap<SiteId, Vec<(InstrRef, String)>>,
    reasons: &mut Reasons,
) -> SiteType {
    let empty = Vec::new();
    let site_casts = casts.get(&site).unwrap_or(&empty);
    if site_casts.is_empty() {
        return SiteType::Known(byte_blob(n));
    }
    // size-matching candidates, deduplicated by layout
    let mut layouts: Vec<(AllocatedType, Vec<InstrRef>)> = Vec::new();
    for (r, name) in site_casts {
        let Ok(t) = prog.types.allocated(name) else { continue };
        if t.size() != n {
            continue;
        }
        match layouts.iter_mut().find(|(l, _)| {
            is_layout_prefix(l.fields(), t.fields()) && l.fields().len() == t.fields().len()
        }) {
            Some((_, rs)) => rs.push(*r),
            None => layouts.push((t, vec![*r])),
        }
    }
    if layouts.len() == 1 {
        return SiteType::Known(layouts.pop().unwrap().0);
    }
    // zero or several size-matching layouts: the site has casts but no
    // unique binding
    for (r, _) in site_casts {
        push_reason(reasons, site, "delayed-type", *r);
    }
    SiteType::Unknown
}

fn byte_blob(n: u64) -> AllocatedType {
    let fields = (0..n)
        .map(|i| FieldDesc { name: format!("[{i}]"), offset: i, size: 1, prim: PrimType::I8 })
        .collect();
    AllocatedType::new(format!("bytes@{n}"), fields)
}

/// Structural prefix: the shorter layout's (offset, size, primitive)
/// triples match the longer's exactly, entry by entry. Field names and
/// tags do not participate.
fn is_layout_prefix(a: &[FieldDesc], b: &[FieldDesc]) -> bool {
    a.len() <= b.len()
        && a.iter().zip(b).all(|(x, y)| x.offset == y.offset && x.size == y.size && x.prim == y.prim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alias::points_to;
    use crate::{numeric, shared};

    fn run(src: &str) -> (HirProgram, TypeReport) {
        let prog = parse_program(src).expect("parse");
        let index = build_indexes(&prog);
        let pt = points_to(&prog, &index);
        let sh = shared::analyze(&prog, &index, &pt);
        let num = numeric::analyze(&prog, &index, &pt, &sh);
        let rep = analyze(&prog, &pt, &num, &BTreeSet::new());
        (prog, rep)
    }

    fn labels(rep: &TypeReport, s: SiteId) -> Vec<&str> {
        rep.reasons.get(&s).map(|m| m.keys().map(|k| k.as_str()).collect()).unwrap_or_default()
    }

    #[test]
    fn typed_fields_accept_exact_access_only() {
        let (p, rep) = run(
            "type Pair = { a: i32, b: i32 }\n\
             fn main() {\nb0:\n  x = alloc Pair\n  q = gep x, 4\n  v = load i32 q\n  ret\n}\n",
        );
        assert!(rep.reasons.is_empty(), "{:?}", rep.reasons);
        assert_eq!(rep.site_types[&p.sites[0].id].known().unwrap().tag(), "Pair");
        let (p2, rep2) = run(
            "type Pair = { a: i32, b: i32 }\n\
             fn main() {\nb0:\n  x = alloc Pair\n  v = load i64 x\n  ret\n}\n",
        );
        assert_eq!(labels(&rep2, p2.sites[0].id), vec!["access-type-mismatch"]);
    }

    #[test]
    fn prefix_view_is_compatible_longer_view_is_not() {
        let (_, rep) = run(
            "type Hdr = { len: i64 }\n\
             type Pkt = { len: i64, body: i8[8] }\n\
             fn main() {\nb0:\n  x = alloc Pkt\n  h = cast x, Hdr\n  v = load i64 h\n  ret\n}\n",
        );
        assert!(rep.reasons.is_empty(), "{:?}", rep.reasons);
        let (p2, rep2) = run(
            "type Hdr = { len: i64 }\n\
             type Pkt = { len: i64, body: i8[8] }\n\
             fn main() {\nb0:\n  x = alloc Hdr\n  k = cast x, Pkt\n  ret\n}\n",
        );
        assert_eq!(labels(&rep2, p2.sites[0].id), vec!["incompatible-cast"]);
    }

    #[test]
    fn delayed_typing_binds_the_single_size_match() {
        let (p, rep) = run(
            "type Pkt = { len: i64, body: i8[8] }\n\
             fn main() {\nb0:\n  x = alloc 16\n  k = cast x, Pkt\n  v = load i64 k\n  ret\n}\n",
        );
        assert!(rep.reasons.is_empty(), "{:?}", rep.reasons);
        assert_eq!(rep.site_types[&p.sites[0].id].known().unwrap().tag(), "Pkt");
    }

    #[test]
    fn delayed_typing_with_conflicting_views_fails() {
        let (p, rep) = run(
            "type A = { x: i64 }\n\
             type B = { y: i32, z: i32 }\n\
             fn main() {\nb0:\n  m = alloc 8\n  a = cast m, A\n  b = cast m, B\n  ret\n}\n",
        );
        assert_eq!(labels(&rep, p.sites[0].id), vec!["delayed-type"]);
        assert!(rep.site_types[&p.sites[0].id].known().is_none());
    }

    #[test]
    fn equal_layouts_under_different_names_still_bind() {
        let (p, rep) = run(
            "type A = { x: i64 }\n\
             type A2 = { w: i64 }\n\
             fn main() {\nb0:\n  m = alloc 8\n  a = cast m, A\n  b = cast m, A2\n  v = load i64 a\n  ret\n}\n",
        );
        assert!(rep.reasons.is_empty(), "{:?}", rep.reasons);
        assert!(rep.site_types[&p.sites[0].id].known().is_some());
    }

    #[test]
    fn castless_raw_allocation_is_a_byte_blob() {
        let (p, rep) = run(
            "fn main() {\nb0:\n  m = alloc 8\n  store i8 m, 1\n  ret\n}\n",
        );
        assert!(rep.reasons.is_empty(), "{:?}", rep.reasons);
        assert_eq!(rep.site_types[&p.sites[0].id].known().unwrap().tag(), "bytes@8");
        let (p2, rep2) = run(
            "fn main() {\nb0:\n  m = alloc 8\n  store i64 m, 1\n  ret\n}\n",
        );
        assert_eq!(labels(&rep2, p2.sites[0].id), vec!["access-type-mismatch"]);
    }

    #[test]
    fn realloc_grows_whole_trailing_elements_only() {
        let (p, rep) = run(
            "type V = { hdr: i64, vals: i64[2] }\n\
             fn main() {\nb0:\n  x = alloc V\n  r = realloc x, 40\n  q = gep r, 32\n  v = load i64 q\n  ret\n}\n",
        );
        assert!(rep.reasons.is_empty(), "{:?}", rep.reasons);
        assert_eq!(rep.site_types[&p.sites[0].id].known().unwrap().tag(), "V@40");
        let (p2, rep2) = run(
            "type V = { hdr: i64, vals: i64[2] }\n\
             fn main() {\nb0:\n  x = alloc V\n  r = realloc x, 28\n  ret\n}\n",
        );
        assert_eq!(labels(&rep2, p2.sites[0].id), vec!["realloc-retype"]);
    }

    #[test]
    fn realloc_retype_requires_the_old_layout_as_prefix() {
        let (_, rep) = run(
            "type Small = { a: i64 }\n\
             type Big = { a: i64, b: i64 }\n\
             fn main() {\nb0:\n  x = alloc Small\n  r = realloc x, Big\n  q = gep r, 8\n  v = load i64 q\n  ret\n}\n",
        );
        assert!(rep.reasons.is_empty(), "{:?}", rep.reasons);
        let (p2, rep2) = run(
            "type Small = { a: i64 }\n\
             type Other = { c: i32, d: i32, e: i64 }\n\
             fn main() {\nb0:\n  x = alloc Small\n  r = realloc x, Other\n  ret\n}\n",
        );
        assert_eq!(labels(&rep2, p2.sites[0].id), vec!["realloc-retype"]);
    }

    #[test]
    fn homogeneous_objects_take_variable_offsets() {
        let (_, rep) = run(
            "type Arr = { vals: i64[4] }\n\
             fn main(n: i64 in 0..25) {\nb0:\n  x = alloc Arr\n  q = gep x, n\n  v = load i64 q\n  ret\n}\n",
        );
        assert!(rep.reasons.is_empty(), "{:?}", rep.reasons);
        let (p2, rep2) = run(
            "type Arr = { vals: i64[4] }\n\
             fn main(n: i64 in 0..25) {\nb0:\n  x = alloc Arr\n  q = gep x, n\n  v = load i32 q\n  ret\n}\n",
        );
        assert_eq!(labels(&rep2, p2.sites[0].id), vec!["access-type-mismatch"]);
    }

    #[test]
    fn ref_fields_are_distinct_from_ints() {
        let (p, rep) = run(
            "type Box = { ptr: ref }\n\
             fn main() {\nb0:\n  x = alloc Box\n  v = load i64 x\n  ret\n}\n",
        );
        assert_eq!(labels(&rep, p.sites[0].id), vec!["access-type-mismatch"]);
    }
}
