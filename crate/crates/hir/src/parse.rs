//! Text-format parser.
//!
//! The surface syntax is line-oriented: one instruction per line, `;`
//! starts a comment, block labels end with `:`. Items (`type`, `global`,
//! `fn`) are collected in two passes so that functions and types may be
//! referenced before their declaration; inside a function, block labels
//! and value definitions are pre-scanned so branches and phis can refer
//! forward. The parser accumulates diagnostics instead of stopping at the
//! first error; a program is only produced when there are none.

use std::collections::HashMap;

use crate::diag::Diagnostic;
use crate::program::*;
use crate::types::{DeclField, DeclType, PrimType, TypeDef};
use crate::validate;

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Punct(char),
    /// `..` in range annotations.
    DotDot,
    Newline,
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: u32,
    col: u32,
}

fn lex(src: &str) -> (Vec<Spanned>, Vec<Diagnostic>) {
    let mut toks = Vec::new();
    let mut diags = Vec::new();
    for (lineno, raw) in src.lines().enumerate() {
        let line = lineno as u32 + 1;
        let text = match raw.find(';') {
            Some(i) => &raw[..i],
            None => raw,
        };
        let bytes = text.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            let col = i as u32 + 1;
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if c == '.' && bytes.get(i + 1) == Some(&b'.') {
                toks.push(Spanned { tok: Tok::DotDot, line, col });
                i += 2;
                continue;
            }
            if c.is_ascii_digit()
                || (c == '-' && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit()))
            {
                let start = i;
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                match text[start..i].parse::<i64>() {
                    Ok(n) => toks.push(Spanned { tok: Tok::Int(n), line, col }),
                    Err(_) => diags.push(Diagnostic::new(line, col, "integer literal out of range")),
                }
                continue;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                // `global-addr` is a single keyword; otherwise `-` never
                // appears inside identifiers.
                if text[i..].starts_with("global-addr")
                    && !text[i + 11..]
                        .chars()
                        .next()
                        .is_some_and(|n| n.is_ascii_alphanumeric() || n == '_')
                {
                    toks.push(Spanned { tok: Tok::Ident("global-addr".into()), line, col });
                    i += 11;
                    continue;
                }
                let start = i;
                i += 1;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                toks.push(Spanned { tok: Tok::Ident(text[start..i].to_string()), line, col });
                continue;
            }
            if "={}()[]:,<>".contains(c) {
                toks.push(Spanned { tok: Tok::Punct(c), line, col });
                i += 1;
                continue;
            }
            diags.push(Diagnostic::new(line, col, format!("unexpected character `{c}`")));
            i += 1;
        }
        toks.push(Spanned { tok: Tok::Newline, line, col: text.len() as u32 + 1 });
    }
    (toks, diags)
}

const RESERVED: &[&str] = &[
    "i8", "i16", "i32", "i64", "ref", "type", "global", "fn", "alloc", "realloc", "free", "gep",
    "cast", "load", "store", "assign", "add", "sub", "mul", "cmp", "br", "jmp", "call", "ret",
    "spawn", "global-addr", "phi", "in", "null",
];

fn is_reserved(name: &str) -> bool {
    RESERVED.contains(&name)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    diags: Vec<Diagnostic>,
}

impl Parser {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn skip_newlines(&mut self) {
        while matches!(self.peek().map(|t| &t.tok), Some(Tok::Newline)) {
            self.pos += 1;
        }
    }

    fn here(&self) -> (u32, u32) {
        match self.peek() {
            Some(t) => (t.line, t.col),
            None => {
                let last = self.toks.last();
                (last.map(|t| t.line).unwrap_or(1), last.map(|t| t.col).unwrap_or(1))
            }
        }
    }

    fn error_here(&mut self, msg: impl Into<String>) {
        let (line, col) = self.here();
        self.diags.push(Diagnostic::new(line, col, msg));
    }

    /// Skips to the start of the next line for error recovery.
    fn sync_line(&mut self) {
        while let Some(t) = self.next() {
            if t.tok == Tok::Newline {
                break;
            }
        }
    }

    fn expect_punct(&mut self, c: char) -> bool {
        match self.peek() {
            Some(t) if t.tok == Tok::Punct(c) => {
                self.pos += 1;
                true
            }
            _ => {
                self.error_here(format!("expected `{c}`"));
                false
            }
        }
    }

    fn expect_ident(&mut self) -> Option<(String, u32, u32)> {
        match self.peek().cloned() {
            Some(Spanned { tok: Tok::Ident(s), line, col }) => {
                self.pos += 1;
                Some((s, line, col))
            }
            _ => {
                self.error_here("expected identifier");
                None
            }
        }
    }

    fn expect_int(&mut self) -> Option<i64> {
        match self.peek().cloned() {
            Some(Spanned { tok: Tok::Int(n), .. }) => {
                self.pos += 1;
                Some(n)
            }
            _ => {
                self.error_here("expected integer");
                None
            }
        }
    }

    /// After an instruction, require end of line (or the function's
    /// closing brace, which may share the line).
    fn expect_eol(&mut self) {
        match self.peek().map(|t| &t.tok) {
            None | Some(Tok::Newline) => {
                self.skip_newlines();
            }
            Some(Tok::Punct('}')) => {}
            _ => {
                self.error_here("expected end of line");
                self.sync_line();
            }
        }
    }
}

/// Raw declaration shells gathered in the first pass.
struct FnShell {
    name: String,
    params: Vec<(String, PrimType, Option<InputRange>, u32, u32)>,
    body_start: usize,
    body_end: usize,
    line: u32,
}

/// Parses a whole program. All diagnostics (lexical, syntactic, name
/// resolution, SSA and kind checks) are collected; `Err` carries them in
/// source order.
pub fn parse_program(src: &str) -> Result<HirProgram, Vec<Diagnostic>> {
    let (toks, lex_diags) = lex(src);
    let mut p = Parser { toks, pos: 0, diags: lex_diags };

    let mut prog = HirProgram::default();
    let mut shells: Vec<FnShell> = Vec::new();

    // Pass 1: items. Function bodies are skipped by brace matching and
    // revisited once every signature is known.
    loop {
        p.skip_newlines();
        let Some(t) = p.peek().cloned() else { break };
        match &t.tok {
            Tok::Ident(k) if k == "type" => parse_typedef(&mut p, &mut prog),
            Tok::Ident(k) if k == "global" => parse_global(&mut p, &mut prog),
            Tok::Ident(k) if k == "fn" => {
                if let Some(shell) = parse_fn_header(&mut p) {
                    shells.push(shell);
                }
            }
            _ => {
                p.error_here("expected `type`, `global` or `fn`");
                p.sync_line();
            }
        }
    }

    // Function name table.
    let mut fn_ids: HashMap<String, FuncId> = HashMap::new();
    for (i, s) in shells.iter().enumerate() {
        if fn_ids.contains_key(&s.name) || prog.types.get(&s.name).is_some() {
            p.diags.push(Diagnostic::new(s.line, 0, format!("duplicate definition of `{}`", s.name)));
        } else {
            fn_ids.insert(s.name.clone(), FuncId(i as u32));
        }
    }

    // Pass 2: bodies.
    for (i, shell) in shells.iter().enumerate() {
        let func = parse_fn_body(&mut p, FuncId(i as u32), shell, &prog.globals, &fn_ids, &prog.types, &mut prog.values);
        prog.funcs.push(func);
    }

    match prog.funcs.iter().position(|f| f.name == "main") {
        Some(i) => prog.entry = FuncId(i as u32),
        None => p.diags.push(Diagnostic::new(1, 0, "no `main` function")),
    }

    collect_sites(&mut prog);
    validate::check_program(&mut prog, &mut p.diags);

    if p.diags.is_empty() {
        Ok(prog)
    } else {
        let mut d = p.diags;
        d.sort_by_key(|d| (d.line, d.col));
        d.dedup();
        Err(d)
    }
}

fn parse_type_expr(p: &mut Parser) -> Option<DeclType> {
    let (name, line, col) = p.expect_ident()?;
    let mut ty = match PrimType::from_name(&name) {
        Some(prim) => DeclType::Prim(prim),
        None => {
            if is_reserved(&name) {
                p.diags.push(Diagnostic::new(line, col, format!("`{name}` is reserved")));
                return None;
            }
            DeclType::Named(name)
        }
    };
    while p.peek().map(|t| &t.tok) == Some(&Tok::Punct('[')) {
        p.pos += 1;
        let n = p.expect_int()?;
        if n < 0 {
            p.error_here("negative array length");
            return None;
        }
        p.expect_punct(']');
        ty = DeclType::Array(Box::new(ty), n as u64);
    }
    Some(ty)
}

fn parse_typedef(p: &mut Parser, prog: &mut HirProgram) {
    p.next(); // `type`
    let Some((name, line, col)) = p.expect_ident() else {
        p.sync_line();
        return;
    };
    if is_reserved(&name) {
        p.diags.push(Diagnostic::new(line, col, format!("`{name}` is reserved")));
    }
    if !p.expect_punct('=') || !p.expect_punct('{') {
        p.sync_line();
        return;
    }
    let mut fields = Vec::new();
    loop {
        p.skip_newlines();
        if p.peek().map(|t| &t.tok) == Some(&Tok::Punct('}')) {
            p.pos += 1;
            break;
        }
        let Some((fname, fline, fcol)) = p.expect_ident() else {
            p.sync_line();
            return;
        };
        if is_reserved(&fname) {
            p.diags.push(Diagnostic::new(fline, fcol, format!("`{fname}` is reserved")));
        }
        if fields.iter().any(|f: &DeclField| f.name == fname) {
            p.diags.push(Diagnostic::new(fline, fcol, format!("duplicate field `{fname}`")));
        }
        if !p.expect_punct(':') {
            p.sync_line();
            return;
        }
        let Some(ty) = parse_type_expr(p) else {
            p.sync_line();
            return;
        };
        fields.push(DeclField { name: fname, ty });
        match p.peek().map(|t| &t.tok) {
            Some(Tok::Punct(',')) => {
                p.pos += 1;
            }
            Some(Tok::Punct('}')) => {}
            Some(Tok::Newline) => {}
            _ => {
                p.error_here("expected `,` or `}` in field list");
                p.sync_line();
                return;
            }
        }
    }
    p.expect_eol();
    if fields.is_empty() {
        p.diags.push(Diagnostic::new(line, col, format!("compound type `{name}` has no fields")));
        return;
    }
    if !prog.types.define(TypeDef { name: name.clone(), fields }) {
        p.diags.push(Diagnostic::new(line, col, format!("duplicate definition of `{name}`")));
    }
}

fn parse_global(p: &mut Parser, prog: &mut HirProgram) {
    let gline = p.here().0;
    p.next(); // `global`
    let Some((name, line, col)) = p.expect_ident() else {
        p.sync_line();
        return;
    };
    if is_reserved(&name) {
        p.diags.push(Diagnostic::new(line, col, format!("`{name}` is reserved")));
    }
    if prog.globals.iter().any(|g| g.name == name) {
        p.diags.push(Diagnostic::new(line, col, format!("duplicate definition of `{name}`")));
    }
    if !p.expect_punct(':') {
        p.sync_line();
        return;
    }
    let Some((tyname, tline, tcol)) = p.expect_ident() else {
        p.sync_line();
        return;
    };
    let ty = match PrimType::from_name(&tyname) {
        Some(PrimType::Ref) => {
            // optional pointee ascription `ref<T>`
            let mut ascription = None;
            if p.peek().map(|t| &t.tok) == Some(&Tok::Punct('<')) {
                p.pos += 1;
                if let Some((inner, ..)) = p.expect_ident() {
                    ascription = Some(inner);
                }
                p.expect_punct('>');
            }
            GlobalType::Prim(PrimType::Ref, ascription)
        }
        Some(prim) => GlobalType::Prim(prim, None),
        None => {
            if is_reserved(&tyname) {
                p.diags.push(Diagnostic::new(tline, tcol, format!("`{tyname}` is reserved")));
                p.sync_line();
                return;
            }
            GlobalType::Compound(tyname)
        }
    };
    let mut init = None;
    if p.peek().map(|t| &t.tok) == Some(&Tok::Punct('=')) {
        p.pos += 1;
        match p.peek().cloned().map(|t| t.tok) {
            Some(Tok::Int(n)) => {
                p.pos += 1;
                init = Some(GlobalInit::Int(n));
            }
            Some(Tok::Ident(k)) if k == "alloc" => {
                p.pos += 1;
                if let Some((t, ..)) = p.expect_ident() {
                    init = Some(GlobalInit::Alloc(t));
                }
            }
            _ => {
                p.error_here("expected integer or `alloc T` initializer");
            }
        }
    }
    p.expect_eol();
    prog.globals.push(Global { name, ty, init, line: gline });
}

fn parse_fn_header(p: &mut Parser) -> Option<FnShell> {
    let line = p.here().0;
    p.next(); // `fn`
    let (name, nline, ncol) = p.expect_ident()?;
    if is_reserved(&name) {
        p.diags.push(Diagnostic::new(nline, ncol, format!("`{name}` is reserved")));
    }
    p.expect_punct('(');
    let mut params = Vec::new();
    if p.peek().map(|t| &t.tok) != Some(&Tok::Punct(')')) {
        loop {
            let Some((pname, pline, pcol)) = p.expect_ident() else {
                p.sync_line();
                return None;
            };
            if !p.expect_punct(':') {
                p.sync_line();
                return None;
            }
            let Some((tyname, tline, tcol)) = p.expect_ident() else {
                p.sync_line();
                return None;
            };
            let prim = match PrimType::from_name(&tyname) {
                Some(prim) => prim,
                None => {
                    p.diags.push(Diagnostic::new(tline, tcol, "parameter type must be primitive"));
                    PrimType::I64
                }
            };
            let mut range = None;
            if matches!(p.peek().map(|t| &t.tok), Some(Tok::Ident(k)) if k == "in") {
                p.pos += 1;
                let lo = p.expect_int().unwrap_or(0);
                if !matches!(p.peek().map(|t| &t.tok), Some(Tok::DotDot)) {
                    p.error_here("expected `..` in range");
                } else {
                    p.pos += 1;
                }
                let hi = p.expect_int().unwrap_or(lo + 1);
                if hi <= lo {
                    p.diags.push(Diagnostic::new(pline, pcol, "empty input range"));
                }
                if prim == PrimType::Ref {
                    p.diags.push(Diagnostic::new(pline, pcol, "reference parameters take no range"));
                }
                range = Some(InputRange { lo, hi });
            }
            params.push((pname, prim, range, pline, pcol));
            match p.peek().map(|t| &t.tok) {
                Some(Tok::Punct(',')) => {
                    p.pos += 1;
                }
                _ => break,
            }
        }
    }
    p.expect_punct(')');
    p.expect_punct('{');
    let body_start = p.pos;
    // Skip to the matching `}`; bodies contain no nested braces.
    let body_end;
    loop {
        match p.peek().map(|t| t.tok.clone()) {
            None => {
                p.error_here("unterminated function body");
                body_end = p.pos;
                break;
            }
            Some(Tok::Punct('}')) => {
                body_end = p.pos;
                p.pos += 1;
                break;
            }
            _ => {
                p.pos += 1;
            }
        }
    }
    p.expect_eol();
    Some(FnShell { name, params, body_start, body_end, line })
}

/// Per-function parsing state: complete label and value tables built by
/// pre-scanning the body, so forward references resolve.
struct FnCtx<'a> {
    labels: HashMap<String, BlockId>,
    values: HashMap<String, ValueId>,
    globals: &'a [Global],
    fn_ids: &'a HashMap<String, FuncId>,
    types: &'a crate::types::TypeRegistry,
}

fn parse_fn_body(
    p: &mut Parser,
    func_id: FuncId,
    shell: &FnShell,
    globals: &[Global],
    fn_ids: &HashMap<String, FuncId>,
    types: &crate::types::TypeRegistry,
    values: &mut Vec<ValueInfo>,
) -> Function {
    // Pre-scan: block labels and value definitions, in order. A label is
    // `ident:` in statement position; a definition is `ident =` in
    // statement position (possibly right after a label on the same line).
    let mut labels: HashMap<String, BlockId> = HashMap::new();
    let mut block_names: Vec<String> = Vec::new();
    let mut defs: Vec<(String, u32, u32)> = Vec::new();
    let mut i = shell.body_start;
    let mut stmt_start = true;
    while i < shell.body_end {
        match &p.toks[i].tok {
            Tok::Newline => {
                stmt_start = true;
                i += 1;
                continue;
            }
            Tok::Ident(name) if stmt_start && !is_reserved(name) => {
                match p.toks.get(i + 1).map(|t| &t.tok) {
                    Some(Tok::Punct(':')) => {
                        if labels.contains_key(name) {
                            p.diags.push(Diagnostic::new(
                                p.toks[i].line,
                                p.toks[i].col,
                                format!("duplicate block label `{name}`"),
                            ));
                        } else {
                            labels.insert(name.clone(), BlockId(block_names.len() as u32));
                            block_names.push(name.clone());
                        }
                        i += 2;
                        // stay in statement position: an instruction may
                        // follow the label on the same line
                        stmt_start = true;
                        continue;
                    }
                    Some(Tok::Punct('=')) => {
                        defs.push((name.clone(), p.toks[i].line, p.toks[i].col));
                        stmt_start = false;
                        i += 2;
                        continue;
                    }
                    _ => {}
                }
            }
            _ => {}
        }
        stmt_start = false;
        i += 1;
    }
    if block_names.is_empty() {
        p.diags.push(Diagnostic::new(shell.line, 0, format!("function `{}` has no blocks", shell.name)));
        labels.insert("b0".into(), BlockId(0));
        block_names.push("b0".into());
    }
    let mut ctx = FnCtx { labels, values: HashMap::new(), globals, fn_ids, types };

    // Parameters are the first definitions.
    let mut params = Vec::new();
    for (pname, prim, range, pline, pcol) in &shell.params {
        if is_reserved(pname) {
            p.diags.push(Diagnostic::new(*pline, *pcol, format!("`{pname}` is reserved")));
            continue;
        }
        if ctx.values.contains_key(pname) {
            p.diags.push(Diagnostic::new(*pline, *pcol, format!("duplicate definition of `{pname}`")));
            continue;
        }
        let id = ValueId(values.len() as u32);
        values.push(ValueInfo {
            name: pname.clone(),
            func: func_id,
            kind: if *prim == PrimType::Ref { ValueKind::Ref } else { ValueKind::Int(*prim) },
        });
        ctx.values.insert(pname.clone(), id);
        params.push(Param { value: id, prim: *prim, range: *range });
    }

    for (dname, dline, dcol) in &defs {
        if ctx.values.contains_key(dname) {
            p.diags.push(Diagnostic::new(*dline, *dcol, format!("duplicate definition of `{dname}`")));
            continue;
        }
        let id = ValueId(values.len() as u32);
        values.push(ValueInfo {
            name: dname.clone(),
            func: func_id,
            kind: ValueKind::Int(PrimType::I64),
        });
        ctx.values.insert(dname.clone(), id);
    }

    let mut blocks: Vec<Block> =
        block_names.iter().map(|n| Block { name: n.clone(), instrs: Vec::new() }).collect();

    // Main parse.
    let saved = p.pos;
    p.pos = shell.body_start;
    let mut cur: Option<BlockId> = None;
    while p.pos < shell.body_end {
        p.skip_newlines();
        if p.pos >= shell.body_end {
            break;
        }
        // Label?
        if let (Tok::Ident(name), Some(Tok::Punct(':'))) =
            (&p.toks[p.pos].tok, p.toks.get(p.pos + 1).map(|t| &t.tok))
        {
            if !is_reserved(name) {
                cur = ctx.labels.get(name).copied();
                p.pos += 2;
                continue;
            }
        }
        let line = p.toks[p.pos].line;
        let Some(block) = cur else {
            p.error_here("instruction before first block label");
            p.sync_line();
            continue;
        };
        if let Some(instr) = parse_instr(p, &mut ctx, line) {
            blocks[block.0 as usize].instrs.push(instr);
        }
    }
    p.pos = saved;

    Function { name: shell.name.clone(), params, blocks, line: shell.line }
}

/// Parses one instruction starting at the current token.
fn parse_instr(p: &mut Parser, ctx: &mut FnCtx<'_>, line: u32) -> Option<Instruction> {
    let (first, fline, fcol) = match p.peek().cloned() {
        Some(Spanned { tok: Tok::Ident(s), line, col }) => {
            p.pos += 1;
            (s, line, col)
        }
        _ => {
            p.error_here("expected instruction");
            p.sync_line();
            return None;
        }
    };

    // `name = rhs` or bare statement opcode.
    if p.peek().map(|t| &t.tok) == Some(&Tok::Punct('=')) {
        p.pos += 1;
        if is_reserved(&first) {
            p.diags.push(Diagnostic::new(fline, fcol, format!("`{first}` is reserved")));
            p.sync_line();
            return None;
        }
        let result = ctx.values.get(&first).copied();
        let op = match parse_rhs(p, ctx) {
            Some(op) => op,
            None => {
                p.sync_line();
                return None;
            }
        };
        p.expect_eol();
        // `result` is present unless the definition was a duplicate the
        // pre-scan already reported; drop the instruction in that case.
        return result.map(|id| Instruction { line, result: Some(id), op });
    }

    let op = match first.as_str() {
        "free" => {
            let ptr = parse_operand(p, ctx)?;
            Op::Free { ptr }
        }
        "store" => {
            let prim = parse_prim(p)?;
            let ptr = parse_operand(p, ctx)?;
            p.expect_punct(',');
            let value = parse_operand(p, ctx)?;
            Op::Store { prim, ptr, value }
        }
        "br" => {
            let cond = parse_operand(p, ctx)?;
            p.expect_punct(',');
            let then_to = parse_label(p, ctx)?;
            p.expect_punct(',');
            let else_to = parse_label(p, ctx)?;
            Op::Br { cond, then_to, else_to }
        }
        "jmp" => {
            let to = parse_label(p, ctx)?;
            Op::Jmp { to }
        }
        "ret" => {
            let value = match p.peek().map(|t| &t.tok) {
                Some(Tok::Newline) | Some(Tok::Punct('}')) | None => None,
                _ => Some(parse_operand(p, ctx)?),
            };
            Op::Ret { value }
        }
        "call" => {
            let (func, args) = parse_call(p, ctx)?;
            Op::Call { func, args }
        }
        "spawn" => {
            let (func, args) = parse_call(p, ctx)?;
            Op::Spawn { func, args }
        }
        other => {
            p.diags.push(Diagnostic::new(fline, fcol, format!("unknown instruction `{other}`")));
            p.sync_line();
            return None;
        }
    };
    p.expect_eol();
    Some(Instruction { line, result: None, op })
}

fn parse_rhs(p: &mut Parser, ctx: &mut FnCtx<'_>) -> Option<Op> {
    let (kw, kline, kcol) = p.expect_ident()?;
    let op = match kw.as_str() {
        "alloc" => Op::Alloc { arg: parse_alloc_arg(p, ctx)? },
        "realloc" => {
            let ptr = parse_operand(p, ctx)?;
            p.expect_punct(',');
            Op::Realloc { ptr, arg: parse_alloc_arg(p, ctx)? }
        }
        "gep" => {
            let base = parse_operand(p, ctx)?;
            p.expect_punct(',');
            let offset = parse_operand(p, ctx)?;
            Op::Gep { base, offset }
        }
        "cast" => {
            let value = parse_operand(p, ctx)?;
            p.expect_punct(',');
            let (tname, tl, tc) = p.expect_ident()?;
            let target = match PrimType::from_name(&tname) {
                Some(PrimType::Ref) => CastTarget::Opaque,
                Some(prim) => CastTarget::Int(prim),
                None => {
                    if ctx.types.get(&tname).is_none() {
                        p.diags.push(Diagnostic::new(tl, tc, format!("unresolved type `{tname}`")));
                        return None;
                    }
                    CastTarget::Compound(tname)
                }
            };
            Op::Cast { value, target }
        }
        "load" => {
            let prim = parse_prim(p)?;
            let ptr = parse_operand(p, ctx)?;
            Op::Load { prim, ptr }
        }
        "assign" => Op::Assign { value: parse_operand(p, ctx)? },
        "add" | "sub" | "mul" => {
            let op = match kw.as_str() {
                "add" => BinOp::Add,
                "sub" => BinOp::Sub,
                _ => BinOp::Mul,
            };
            let a = parse_operand(p, ctx)?;
            p.expect_punct(',');
            let b = parse_operand(p, ctx)?;
            Op::Bin { op, a, b }
        }
        "cmp" => {
            let (rel, rl, rc) = p.expect_ident()?;
            let op = match rel.as_str() {
                "lt" => CmpOp::Lt,
                "le" => CmpOp::Le,
                "gt" => CmpOp::Gt,
                "ge" => CmpOp::Ge,
                "eq" => CmpOp::Eq,
                "ne" => CmpOp::Ne,
                _ => {
                    p.diags.push(Diagnostic::new(rl, rc, format!("unknown comparison `{rel}`")));
                    return None;
                }
            };
            let a = parse_operand(p, ctx)?;
            p.expect_punct(',');
            let b = parse_operand(p, ctx)?;
            Op::Cmp { op, a, b }
        }
        "call" => {
            let (func, args) = parse_call(p, ctx)?;
            Op::Call { func, args }
        }
        "global-addr" => {
            let (gname, gl, gc) = p.expect_ident()?;
            match ctx.globals.iter().position(|g| g.name == gname) {
                Some(i) => Op::GlobalAddr { global: GlobalId(i as u32) },
                None => {
                    p.diags.push(Diagnostic::new(gl, gc, format!("unresolved global `{gname}`")));
                    return None;
                }
            }
        }
        "phi" => {
            let mut incoming = Vec::new();
            loop {
                if !p.expect_punct('[') {
                    return None;
                }
                let v = parse_operand(p, ctx)?;
                p.expect_punct(',');
                let b = parse_label(p, ctx)?;
                p.expect_punct(']');
                incoming.push((v, b));
                if p.peek().map(|t| &t.tok) == Some(&Tok::Punct(',')) {
                    p.pos += 1;
                } else {
                    break;
                }
            }
            Op::Phi { incoming }
        }
        other => {
            p.diags.push(Diagnostic::new(kline, kcol, format!("unknown instruction `{other}`")));
            return None;
        }
    };
    Some(op)
}

fn parse_alloc_arg(p: &mut Parser, ctx: &FnCtx<'_>) -> Option<AllocArg> {
    match p.peek().cloned() {
        Some(Spanned { tok: Tok::Int(n), .. }) => {
            p.pos += 1;
            Some(AllocArg::Size(Operand::Const(n)))
        }
        Some(Spanned { tok: Tok::Ident(name), line, col }) => {
            p.pos += 1;
            if ctx.types.get(&name).is_some() {
                Some(AllocArg::Type(name))
            } else if let Some(&v) = ctx.values.get(&name) {
                Some(AllocArg::Size(Operand::Value(v)))
            } else {
                p.diags.push(Diagnostic::new(line, col, format!("unresolved name `{name}`")));
                None
            }
        }
        _ => {
            p.error_here("expected type or size");
            None
        }
    }
}

fn parse_prim(p: &mut Parser) -> Option<PrimType> {
    let (name, line, col) = p.expect_ident()?;
    match PrimType::from_name(&name) {
        Some(prim) => Some(prim),
        None => {
            p.diags.push(Diagnostic::new(line, col, format!("expected primitive type, found `{name}`")));
            None
        }
    }
}

fn parse_operand(p: &mut Parser, ctx: &FnCtx<'_>) -> Option<Operand> {
    match p.peek().cloned() {
        Some(Spanned { tok: Tok::Int(n), .. }) => {
            p.pos += 1;
            Some(Operand::Const(n))
        }
        Some(Spanned { tok: Tok::Ident(name), line, col }) => {
            p.pos += 1;
            if name == "null" {
                return Some(Operand::Const(0));
            }
            match ctx.values.get(&name) {
                Some(&v) => Some(Operand::Value(v)),
                None => {
                    p.diags.push(Diagnostic::new(line, col, format!("unresolved value `{name}`")));
                    None
                }
            }
        }
        _ => {
            p.error_here("expected operand");
            None
        }
    }
}

fn parse_label(p: &mut Parser, ctx: &FnCtx<'_>) -> Option<BlockId> {
    let (name, line, col) = p.expect_ident()?;
    match ctx.labels.get(&name) {
        Some(&b) => Some(b),
        None => {
            p.diags.push(Diagnostic::new(line, col, format!("unresolved block label `{name}`")));
            None
        }
    }
}

fn parse_call(p: &mut Parser, ctx: &FnCtx<'_>) -> Option<(FuncId, Vec<Operand>)> {
    let (name, line, col) = p.expect_ident()?;
    let func = match ctx.fn_ids.get(&name) {
        Some(&f) => f,
        None => {
            p.diags.push(Diagnostic::new(line, col, format!("unresolved function `{name}`")));
            return None;
        }
    };
    p.expect_punct('(');
    let mut args = Vec::new();
    if p.peek().map(|t| &t.tok) != Some(&Tok::Punct(')')) {
        loop {
            args.push(parse_operand(p, ctx)?);
            if p.peek().map(|t| &t.tok) == Some(&Tok::Punct(',')) {
                p.pos += 1;
            } else {
                break;
            }
        }
    }
    p.expect_punct(')');
    Some((func, args))
}

fn collect_sites(prog: &mut HirProgram) {
    let mut sites = Vec::new();
    for (i, g) in prog.globals.iter().enumerate() {
        if let Some(GlobalInit::Alloc(t)) = &g.init {
            sites.push(AllocationSite {
                id: SiteId(sites.len() as u32),
                place: SitePlace::GlobalInit(GlobalId(i as u32)),
                arg: AllocArg::Type(t.clone()),
                in_func: "<global>".into(),
                line: g.line,
            });
        }
    }
    let instr_sites: Vec<(InstrRef, AllocArg, String, u32)> = prog
        .all_instrs()
        .filter_map(|(r, ins)| match &ins.op {
            Op::Alloc { arg } => Some((r, arg.clone(), prog.func(r.func).name.clone(), ins.line)),
            _ => None,
        })
        .collect();
    for (r, arg, in_func, line) in instr_sites {
        sites.push(AllocationSite {
            id: SiteId(sites.len() as u32),
            place: SitePlace::Instr(r),
            arg,
            in_func,
            line,
        });
    }
    prog.sites = sites;
}
