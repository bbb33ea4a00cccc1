//! Canonical text printer. Printing a parsed program and parsing the
//! result yields the same program, and printing is a fixed point: the
//! canonical form of a canonical form is itself.

use std::fmt::Write;

use crate::program::*;
use crate::types::PrimType;

pub fn print_program(prog: &HirProgram) -> String {
    let mut out = String::new();
    for def in prog.types.defs() {
        let fields: Vec<String> =
            def.fields.iter().map(|f| format!("{}: {}", f.name, f.ty)).collect();
        let _ = writeln!(out, "type {} = {{ {} }}", def.name, fields.join(", "));
    }
    if !prog.types.defs().is_empty() {
        out.push('\n');
    }
    for g in &prog.globals {
        let ty = match &g.ty {
            GlobalType::Prim(PrimType::Ref, Some(t)) => format!("ref<{t}>"),
            GlobalType::Prim(p, _) => p.name().to_string(),
            GlobalType::Compound(n) => n.clone(),
        };
        let init = match &g.init {
            None => String::new(),
            Some(GlobalInit::Int(n)) => format!(" = {n}"),
            Some(GlobalInit::Alloc(t)) => format!(" = alloc {t}"),
        };
        let _ = writeln!(out, "global {}: {ty}{init}", g.name);
    }
    if !prog.globals.is_empty() {
        out.push('\n');
    }
    for (i, f) in prog.funcs.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        print_func(prog, f, &mut out);
    }
    out
}

fn print_func(prog: &HirProgram, f: &Function, out: &mut String) {
    let params: Vec<String> = f
        .params
        .iter()
        .map(|p| {
            let name = &prog.value(p.value).name;
            match p.range {
                Some(r) => format!("{name}: {} in {}..{}", p.prim, r.lo, r.hi),
                None => format!("{name}: {}", p.prim),
            }
        })
        .collect();
    let _ = writeln!(out, "fn {}({}) {{", f.name, params.join(", "));
    for b in &f.blocks {
        let _ = writeln!(out, "{}:", b.name);
        for ins in &b.instrs {
            let _ = writeln!(out, "  {}", render_instr(prog, f, ins));
        }
    }
    out.push_str("}\n");
}

fn operand(prog: &HirProgram, op: Operand) -> String {
    match op {
        Operand::Const(n) => n.to_string(),
        Operand::Value(v) => prog.value(v).name.clone(),
    }
}

fn alloc_arg(prog: &HirProgram, arg: &AllocArg) -> String {
    match arg {
        AllocArg::Type(t) => t.clone(),
        AllocArg::Size(op) => operand(prog, *op),
    }
}

fn label(f: &Function, b: BlockId) -> String {
    f.block(b).name.clone()
}

fn render_instr(prog: &HirProgram, f: &Function, ins: &Instruction) -> String {
    let rhs = match &ins.op {
        Op::Alloc { arg } => format!("alloc {}", alloc_arg(prog, arg)),
        Op::Realloc { ptr, arg } => {
            format!("realloc {}, {}", operand(prog, *ptr), alloc_arg(prog, arg))
        }
        Op::Free { ptr } => format!("free {}", operand(prog, *ptr)),
        Op::Gep { base, offset } => {
            format!("gep {}, {}", operand(prog, *base), operand(prog, *offset))
        }
        Op::Cast { value, target } => {
            let t = match target {
                CastTarget::Compound(n) => n.clone(),
                CastTarget::Opaque => "ref".to_string(),
                CastTarget::Int(p) => p.name().to_string(),
            };
            format!("cast {}, {t}", operand(prog, *value))
        }
        Op::Load { prim, ptr } => format!("load {prim} {}", operand(prog, *ptr)),
        Op::Store { prim, ptr, value } => {
            format!("store {prim} {}, {}", operand(prog, *ptr), operand(prog, *value))
        }
        Op::Assign { value } => format!("assign {}", operand(prog, *value)),
        Op::Bin { op, a, b } => {
            format!("{} {}, {}", op.name(), operand(prog, *a), operand(prog, *b))
        }
        Op::Cmp { op, a, b } => {
            format!("cmp {} {}, {}", op.name(), operand(prog, *a), operand(prog, *b))
        }
        Op::Br { cond, then_to, else_to } => format!(
            "br {}, {}, {}",
            operand(prog, *cond),
            label(f, *then_to),
            label(f, *else_to)
        ),
        Op::Jmp { to } => format!("jmp {}", label(f, *to)),
        Op::Call { func, args } => {
            let args: Vec<String> = args.iter().map(|a| operand(prog, *a)).collect();
            format!("call {}({})", prog.func(*func).name, args.join(", "))
        }
        Op::Ret { value } => match value {
            Some(v) => format!("ret {}", operand(prog, *v)),
            None => "ret".to_string(),
        },
        Op::Spawn { func, args } => {
            let args: Vec<String> = args.iter().map(|a| operand(prog, *a)).collect();
            format!("spawn {}({})", prog.func(*func).name, args.join(", "))
        }
        Op::GlobalAddr { global } => format!("global-addr {}", prog.global(*global).name),
        Op::Phi { incoming } => {
            let parts: Vec<String> = incoming
                .iter()
                .map(|(v, b)| format!("[{}, {}]", operand(prog, *v), label(f, *b)))
                .collect();
            format!("phi {}", parts.join(", "))
        }
    };
    match ins.result {
        Some(r) => format!("{} = {rhs}", prog.value(r).name),
        None => rhs,
    }
}
