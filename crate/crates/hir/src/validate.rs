//! Structural, SSA and kind checks run after parsing.
//!
//! These keep malformed programs out of the analyses: every block ends in
//! exactly one terminator, phis sit at block heads and mirror the
//! predecessor set, every use is dominated by its definition, and operand
//! kinds (integer vs reference) are consistent. Value kinds are inferred
//! here and written back into the program.

use std::collections::HashMap;

use crate::diag::Diagnostic;
use crate::index::{build_indexes, DefSite};
use crate::program::*;
use crate::types::PrimType;

pub fn check_program(prog: &mut HirProgram, diags: &mut Vec<Diagnostic>) {
    check_typedefs(prog, diags);
    check_globals(prog, diags);
    check_blocks(prog, diags);
    infer_kinds(prog, diags);
    check_operand_kinds(prog, diags);
    check_alloc_args(prog, diags);
    check_calls(prog, diags);
    check_ssa(prog, diags);
}

/// Every declared compound must flatten (rejects recursion and unknown
/// field types even for types no instruction mentions).
fn check_typedefs(prog: &HirProgram, diags: &mut Vec<Diagnostic>) {
    for def in prog.types.defs() {
        if let Err(e) = prog.types.allocated(&def.name) {
            diags.push(Diagnostic::new(1, 0, e.to_string()));
        }
    }
}

fn check_globals(prog: &HirProgram, diags: &mut Vec<Diagnostic>) {
    for g in &prog.globals {
        match (&g.ty, &g.init) {
            (GlobalType::Compound(name), init) => {
                if prog.types.get(name).is_none() {
                    diags.push(Diagnostic::new(g.line, 0, format!("unresolved type `{name}`")));
                }
                if init.is_some() {
                    diags.push(Diagnostic::new(
                        g.line,
                        0,
                        format!("compound global `{}` takes no initializer", g.name),
                    ));
                }
            }
            (GlobalType::Prim(PrimType::Ref, asc), Some(GlobalInit::Alloc(t))) => {
                if prog.types.get(t).is_none() {
                    diags.push(Diagnostic::new(g.line, 0, format!("unresolved type `{t}`")));
                }
                if let Some(asc) = asc {
                    if asc != t {
                        diags.push(Diagnostic::new(
                            g.line,
                            0,
                            format!("global `{}` is declared ref<{asc}> but allocates {t}", g.name),
                        ));
                    }
                }
            }
            (GlobalType::Prim(PrimType::Ref, asc), other) => {
                if let Some(asc) = asc {
                    if prog.types.get(asc).is_none() {
                        diags.push(Diagnostic::new(g.line, 0, format!("unresolved type `{asc}`")));
                    }
                }
                if matches!(other, Some(GlobalInit::Int(n)) if *n != 0) {
                    diags.push(Diagnostic::new(
                        g.line,
                        0,
                        format!("ref global `{}` can only be initialized by `alloc` or 0", g.name),
                    ));
                }
            }
            (GlobalType::Prim(_, _), Some(GlobalInit::Alloc(_))) => {
                diags.push(Diagnostic::new(
                    g.line,
                    0,
                    format!("integer global `{}` cannot be initialized by `alloc`", g.name),
                ));
            }
            (GlobalType::Prim(_, _), _) => {}
        }
    }
}

fn check_blocks(prog: &HirProgram, diags: &mut Vec<Diagnostic>) {
    for f in &prog.funcs {
        for b in &f.blocks {
            if b.instrs.is_empty() {
                diags.push(Diagnostic::new(
                    f.line,
                    0,
                    format!("block `{}` in `{}` is empty", b.name, f.name),
                ));
                continue;
            }
            for (i, ins) in b.instrs.iter().enumerate() {
                let last = i + 1 == b.instrs.len();
                if last && !ins.op.is_terminator() {
                    diags.push(Diagnostic::new(
                        ins.line,
                        0,
                        format!("block `{}` does not end in a terminator", b.name),
                    ));
                }
                if !last && ins.op.is_terminator() {
                    diags.push(Diagnostic::new(
                        ins.line,
                        0,
                        format!("terminator in the middle of block `{}`", b.name),
                    ));
                }
                if matches!(ins.op, Op::Phi { .. }) {
                    let at_head = b.instrs[..i].iter().all(|p| matches!(p.op, Op::Phi { .. }));
                    if !at_head {
                        diags.push(Diagnostic::new(ins.line, 0, "phi must be at block head"));
                    }
                }
            }
        }
    }
}

/// Inferred or pending value kind during the fixpoint.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum K {
    Pending,
    Int(PrimType),
    Ref,
    /// Irreconcilable incomings; reported once at the end.
    Conflict,
}

impl K {
    fn known(self) -> Option<ValueKind> {
        match self {
            K::Int(p) => Some(ValueKind::Int(p)),
            K::Ref => Some(ValueKind::Ref),
            _ => None,
        }
    }

    fn join(self, other: K) -> K {
        match (self, other) {
            (K::Pending, o) | (o, K::Pending) => o,
            (K::Conflict, _) | (_, K::Conflict) => K::Conflict,
            (K::Ref, K::Ref) => K::Ref,
            (K::Int(a), K::Int(b)) if a == b => K::Int(a),
            (K::Int(_), K::Int(_)) => K::Int(PrimType::I64),
            (K::Ref, K::Int(_)) | (K::Int(_), K::Ref) => K::Conflict,
        }
    }
}

/// Infers `ValueKind` for every value and the return kind of every
/// function; runs to a fixpoint because kinds only move up the little
/// lattice pending -> known -> conflict.
fn infer_kinds(prog: &mut HirProgram, diags: &mut Vec<Diagnostic>) {
    let nv = prog.values.len();
    let mut kind: Vec<K> = vec![K::Pending; nv];
    for f in &prog.funcs {
        for p in &f.params {
            kind[p.value.0 as usize] =
                if p.prim == PrimType::Ref { K::Ref } else { K::Int(p.prim) };
        }
    }
    // ret[f]: Pending until some `ret` resolves; bare `ret` makes it void.
    #[derive(Clone, Copy, PartialEq)]
    enum Ret {
        Pending,
        Void,
        Value(K),
    }
    let mut ret: Vec<Ret> = vec![Ret::Pending; prog.funcs.len()];

    let operand_kind = |kind: &[K], op: Operand| -> K {
        match op {
            Operand::Const(_) => K::Pending, // polymorphic; adapts to context
            Operand::Value(v) => kind[v.0 as usize],
        }
    };

    let mut changed = true;
    while changed {
        changed = false;
        for (fi, f) in prog.funcs.iter().enumerate() {
            for b in &f.blocks {
                for ins in &b.instrs {
                    if let Op::Ret { value } = &ins.op {
                        let new = match value {
                            None => Ret::Void,
                            Some(op) => match operand_kind(&kind, *op) {
                                K::Pending => {
                                    if let Operand::Const(_) = op {
                                        Ret::Value(K::Int(PrimType::I64))
                                    } else {
                                        continue;
                                    }
                                }
                                k => Ret::Value(k),
                            },
                        };
                        let merged = match (ret[fi], new) {
                            (Ret::Pending, n) => n,
                            (c, Ret::Pending) => c,
                            (Ret::Void, Ret::Void) => Ret::Void,
                            (Ret::Value(a), Ret::Value(b)) => Ret::Value(a.join(b)),
                            _ => Ret::Value(K::Conflict),
                        };
                        if merged != ret[fi] {
                            ret[fi] = merged;
                            changed = true;
                        }
                    }
                    let Some(res) = ins.result else { continue };
                    let new = match &ins.op {
                        Op::Alloc { .. }
                        | Op::Realloc { .. }
                        | Op::Gep { .. }
                        | Op::GlobalAddr { .. } => K::Ref,
                        Op::Cast { target, .. } => match target {
                            CastTarget::Compound(_) | CastTarget::Opaque => K::Ref,
                            CastTarget::Int(p) => K::Int(*p),
                        },
                        Op::Load { prim, .. } => {
                            if *prim == PrimType::Ref {
                                K::Ref
                            } else {
                                K::Int(*prim)
                            }
                        }
                        Op::Assign { value } => match operand_kind(&kind, *value) {
                            K::Pending => {
                                if value.as_const().is_some() {
                                    K::Int(PrimType::I64)
                                } else {
                                    K::Pending
                                }
                            }
                            k => k,
                        },
                        Op::Bin { .. } | Op::Cmp { .. } => K::Int(PrimType::I64),
                        Op::Call { func, .. } => match ret[func.0 as usize] {
                            Ret::Pending => K::Pending,
                            Ret::Void => K::Conflict,
                            Ret::Value(k) => k,
                        },
                        Op::Phi { incoming } => {
                            let mut k = K::Pending;
                            let mut saw_const = false;
                            for (v, _) in incoming {
                                match v {
                                    Operand::Const(_) => saw_const = true,
                                    Operand::Value(_) => k = k.join(operand_kind(&kind, *v)),
                                }
                            }
                            if k == K::Pending && saw_const {
                                K::Int(PrimType::I64)
                            } else {
                                k
                            }
                        }
                        _ => K::Pending,
                    };
                    let merged = kind[res.0 as usize].join(new);
                    if merged != kind[res.0 as usize] {
                        kind[res.0 as usize] = merged;
                        changed = true;
                    }
                }
            }
        }
    }

    for (i, k) in kind.iter().enumerate() {
        match k {
            K::Conflict => {
                let v = &prog.values[i];
                diags.push(Diagnostic::new(
                    1,
                    0,
                    format!("value `{}` in `{}` mixes reference and integer kinds", v.name, prog.funcs[v.func.0 as usize].name),
                ));
            }
            K::Pending => {
                // Unused cyclic definition; default to a 64-bit integer.
                prog.values[i].kind = ValueKind::Int(PrimType::I64);
            }
            _ => prog.values[i].kind = k.known().unwrap(),
        }
    }

    // Calls used as values must target functions that return one.
    for (_, ins) in prog.all_instrs() {
        if let (Some(_), Op::Call { func, .. }) = (ins.result, &ins.op) {
            if ret[func.0 as usize] == Ret::Void {
                diags.push(Diagnostic::new(
                    ins.line,
                    0,
                    format!("function `{}` returns no value", prog.func(*func).name),
                ));
            }
        }
    }
}

fn is_ref_operand(prog: &HirProgram, op: Operand) -> bool {
    match op {
        Operand::Const(c) => c == 0, // null
        Operand::Value(v) => prog.value(v).kind.is_ref(),
    }
}

fn is_int_operand(prog: &HirProgram, op: Operand) -> bool {
    match op {
        Operand::Const(_) => true,
        Operand::Value(v) => !prog.value(v).kind.is_ref(),
    }
}

fn check_operand_kinds(prog: &HirProgram, diags: &mut Vec<Diagnostic>) {
    for (_, ins) in prog.all_instrs() {
        let line = ins.line;
        let mut want_ref = |op: Operand, what: &str| {
            if !is_ref_operand(prog, op) {
                diags.push(Diagnostic::new(line, 0, format!("{what} must be a reference")));
            }
        };
        match &ins.op {
            Op::Gep { base, offset } => {
                want_ref(*base, "gep base");
                if !is_int_operand(prog, *offset) {
                    diags.push(Diagnostic::new(line, 0, "gep offset must be an integer"));
                }
            }
            Op::Load { ptr, .. } => want_ref(*ptr, "load pointer"),
            Op::Store { prim, ptr, value } => {
                want_ref(*ptr, "store pointer");
                let ok = if *prim == PrimType::Ref {
                    is_ref_operand(prog, *value)
                } else {
                    is_int_operand(prog, *value)
                };
                if !ok {
                    diags.push(Diagnostic::new(line, 0, "stored value has the wrong kind"));
                }
            }
            Op::Free { ptr } => want_ref(*ptr, "free pointer"),
            Op::Realloc { ptr, .. } => want_ref(*ptr, "realloc pointer"),
            Op::Cast { value, target } => {
                let ok = match target {
                    CastTarget::Compound(_) | CastTarget::Opaque => is_ref_operand(prog, *value),
                    CastTarget::Int(_) => is_int_operand(prog, *value),
                };
                if !ok {
                    diags.push(Diagnostic::new(line, 0, "cast operand has the wrong kind"));
                }
            }
            Op::Bin { a, b, .. } => {
                if !is_int_operand(prog, *a) || !is_int_operand(prog, *b) {
                    diags.push(Diagnostic::new(line, 0, "arithmetic on references; use gep"));
                }
            }
            Op::Cmp { op, a, b } => {
                let int_ok = is_int_operand(prog, *a) && is_int_operand(prog, *b);
                let ref_ok = is_ref_operand(prog, *a) && is_ref_operand(prog, *b);
                let ok = match op {
                    CmpOp::Eq | CmpOp::Ne => int_ok || ref_ok,
                    _ => int_ok,
                };
                if !ok {
                    diags.push(Diagnostic::new(line, 0, "comparison operands have mixed kinds"));
                }
            }
            Op::Br { cond, .. } => {
                if !is_int_operand(prog, *cond) {
                    diags.push(Diagnostic::new(line, 0, "branch condition must be an integer"));
                }
            }
            // Mixed ref/int phi incomings already surface as a kind
            // conflict on the result during inference.
            _ => {}
        }
    }
}

fn check_alloc_args(prog: &HirProgram, diags: &mut Vec<Diagnostic>) {
    for (_, ins) in prog.all_instrs() {
        let arg = match &ins.op {
            Op::Alloc { arg } => arg,
            Op::Realloc { arg, .. } => arg,
            _ => continue,
        };
        match arg {
            AllocArg::Type(_) => {} // resolved during parsing
            AllocArg::Size(Operand::Const(n)) if *n <= 0 => {
                diags.push(Diagnostic::new(ins.line, 0, "allocation size must be positive"));
            }
            AllocArg::Size(op) => {
                if !is_int_operand(prog, *op) {
                    diags.push(Diagnostic::new(ins.line, 0, "allocation size must be an integer"));
                }
            }
        }
    }
}

fn check_calls(prog: &HirProgram, diags: &mut Vec<Diagnostic>) {
    for (_, ins) in prog.all_instrs() {
        let (func, args, what) = match &ins.op {
            Op::Call { func, args } => (*func, args, "call"),
            Op::Spawn { func, args } => (*func, args, "spawn"),
            _ => continue,
        };
        let callee = prog.func(func);
        if callee.params.len() != args.len() {
            diags.push(Diagnostic::new(
                ins.line,
                0,
                format!(
                    "{what} of `{}` passes {} arguments, expected {}",
                    callee.name,
                    args.len(),
                    callee.params.len()
                ),
            ));
            continue;
        }
        for (arg, param) in args.iter().zip(&callee.params) {
            let ok = if param.prim == PrimType::Ref {
                is_ref_operand(prog, *arg)
            } else {
                is_int_operand(prog, *arg)
            };
            if !ok {
                diags.push(Diagnostic::new(
                    ins.line,
                    0,
                    format!("argument kind mismatch in {what} of `{}`", callee.name),
                ));
            }
        }
    }
}

/// Single definition is guaranteed by parsing; this checks dominance of
/// uses and that phi incomings match predecessors.
fn check_ssa(prog: &HirProgram, diags: &mut Vec<Diagnostic>) {
    let idx = build_indexes(prog);
    // def position per value, for same-block comparisons
    let mut def_pos: HashMap<ValueId, DefSite> = HashMap::new();
    for (i, _) in prog.values.iter().enumerate() {
        let v = ValueId(i as u32);
        if let Some(d) = idx.defuse.def(v) {
            def_pos.insert(v, d);
        }
    }

    for (fid, f) in prog.funcs.iter().enumerate() {
        let fid = FuncId(fid as u32);
        let fi = idx.func(fid);
        for (bi, b) in f.blocks.iter().enumerate() {
            let bid = BlockId(bi as u32);
            // phi incoming blocks must be exactly the predecessors
            for ins in &b.instrs {
                if let Op::Phi { incoming } = &ins.op {
                    let mut inc: Vec<BlockId> = incoming.iter().map(|(_, b)| *b).collect();
                    inc.sort();
                    inc.dedup();
                    let mut preds = fi.preds[bi].clone();
                    preds.sort();
                    if inc != preds || incoming.len() != fi.preds[bi].len() {
                        diags.push(Diagnostic::new(
                            ins.line,
                            0,
                            format!("phi incoming blocks do not match predecessors of `{}`", b.name),
                        ));
                    }
                }
            }
            if !fi.reachable(bid) {
                continue;
            }
            for (ii, ins) in b.instrs.iter().enumerate() {
                let use_point = InstrRef { func: fid, block: bid, idx: ii as u32 };
                let pairs: Vec<(Operand, Option<BlockId>)> = match &ins.op {
                    Op::Phi { incoming } => {
                        incoming.iter().map(|(v, from)| (*v, Some(*from))).collect()
                    }
                    op => op.operands().into_iter().map(|v| (v, None)).collect(),
                };
                for (opnd, via) in pairs {
                    let Operand::Value(v) = opnd else { continue };
                    let info = prog.value(v);
                    if info.func != fid {
                        diags.push(Diagnostic::new(
                            ins.line,
                            0,
                            format!("value `{}` belongs to another function", info.name),
                        ));
                        continue;
                    }
                    let Some(def) = def_pos.get(&v).copied() else {
                        diags.push(Diagnostic::new(
                            ins.line,
                            0,
                            format!("value `{}` is never defined", info.name),
                        ));
                        continue;
                    };
                    let ok = match def {
                        DefSite::Param(..) => true,
                        DefSite::Instr(d) => {
                            // For phi operands the use happens at the end
                            // of the incoming block.
                            let use_block = via.unwrap_or(bid);
                            if !fi.reachable(use_block) {
                                true
                            } else if d.block == use_block {
                                match via {
                                    Some(_) => true, // end of block: any def there precedes it
                                    None => d.idx < use_point.idx,
                                }
                            } else {
                                fi.dominates(d.block, use_block)
                            }
                        }
                    };
                    if !ok {
                        diags.push(Diagnostic::new(
                            ins.line,
                            0,
                            format!("use of `{}` is not dominated by its definition", info.name),
                        ));
                    }
                }
            }
        }
    }
}
