//! Parser round-trip and diagnostic coverage.

use uriah_hir::{parse_program, print_program};

/// Exercises every opcode and declaration form at least once.
const ALL_OPS: &str = r#"
; full surface syntax
type Hdr = { len: i32, kind: i32 }
type Msg = { hdr: Hdr, data: i8[8] }
type Cell = { p: ref }

global counter: i64 = 5
global slot: ref<Msg> = alloc Msg
global bare: ref
global table: Cell

fn worker(p: ref, step: i64) {
b0:
  q = gep p, 8
  store i8 q, 1
  ret
}

fn pick(n: i64) {
b0:
  c = cmp ge n, 1
  br c, yes, no
yes:
  ret 1
no:
  ret 0
}

fn main(n: i64 in 0..4) {
entry:
  m = alloc Msg
  raw = alloc 16
  g = global-addr counter
  k = load i64 g
  kk = cast k, i32
  v = assign kk
  s = add v, 2
  d = sub s, 1
  t = mul d, 3
  chosen = call pick(t)
  cnd = cmp ne chosen, 0
  br cnd, grow, use
grow:
  m2 = realloc m, 24
  jmp join
use:
  o = cast m, Hdr
  jmp join
join:
  i = phi [0, grow], [1, use]
  p = gep m, 4
  store i32 p, 7
  x = load i32 p
  spawn worker(m, n)
  free raw
  ret
}
"#;

#[test]
fn all_opcodes_parse() {
    let prog = parse_program(ALL_OPS).expect("full-syntax program should parse");
    assert_eq!(prog.funcs.len(), 3);
    assert_eq!(prog.globals.len(), 4);
    // sites: global `slot` alloc + two instruction allocs
    assert_eq!(prog.sites.len(), 3);
    assert_eq!(prog.sites[0].in_func, "<global>");
}

#[test]
fn print_parse_is_identity_on_canonical_form() {
    let prog = parse_program(ALL_OPS).unwrap();
    let canon = print_program(&prog);
    let reparsed = parse_program(&canon).expect("canonical form should reparse");
    assert_eq!(print_program(&reparsed), canon);
}

#[test]
fn compressed_block_layout_parses() {
    // label and instruction on one line, closing brace after `ret`
    let src = "type P = { x: i32, y: i32 }\nfn main(){ b0: p = alloc P\n free p\n ret }\n";
    let prog = parse_program(src).expect("compressed layout should parse");
    assert_eq!(prog.sites.len(), 1);
    let canon = print_program(&prog);
    assert_eq!(print_program(&parse_program(&canon).unwrap()), canon);
}

fn errors_of(src: &str) -> Vec<String> {
    parse_program(src).err().expect("program should be rejected").iter().map(|d| d.to_string()).collect()
}

#[test]
fn syntax_error_carries_position() {
    let errs = errors_of("fn main() {\nb0:\n  x = gep\n  ret\n}\n");
    assert!(errs.iter().any(|e| e.starts_with("line 3:") && e.contains("expected operand")), "{errs:?}");
}

#[test]
fn duplicate_value_definition() {
    let errs = errors_of("type P = { x: i32 }\nfn main() {\nb0:\n  p = alloc P\n  p = alloc P\n  ret\n}\n");
    assert!(errs.iter().any(|e| e.contains("duplicate definition of `p`")), "{errs:?}");
}

#[test]
fn duplicate_type_definition() {
    let errs = errors_of("type P = { x: i32 }\ntype P = { y: i64 }\nfn main() {\nb0:\n  ret\n}\n");
    assert!(errs.iter().any(|e| e.contains("duplicate definition of `P`")), "{errs:?}");
}

#[test]
fn unresolved_names_are_reported() {
    let errs = errors_of("fn main() {\nb0:\n  x = load i64 q\n  jmp nowhere\n  ret\n}\n");
    assert!(errs.iter().any(|e| e.contains("unresolved value `q`")), "{errs:?}");
    assert!(errs.iter().any(|e| e.contains("unresolved block label `nowhere`")), "{errs:?}");
}

#[test]
fn use_not_dominated_by_definition() {
    // `x` is defined only on the `yes` path but used at the join
    let src = "fn main(n: i64 in 0..2) {\n\
               b0:\n  c = cmp lt n, 1\n  br c, yes, no\n\
               yes:\n  x = assign 1\n  jmp join\n\
               no:\n  jmp join\n\
               join:\n  y = add x, 1\n  ret\n}\n";
    let errs = errors_of(src);
    assert!(errs.iter().any(|e| e.contains("not dominated")), "{errs:?}");
}

#[test]
fn use_before_definition_in_block() {
    let errs = errors_of("fn main() {\nb0:\n  y = add x, 1\n  x = assign 1\n  ret\n}\n");
    assert!(errs.iter().any(|e| e.contains("not dominated")), "{errs:?}");
}

#[test]
fn missing_main_is_rejected() {
    let errs = errors_of("fn other() {\nb0:\n  ret\n}\n");
    assert!(errs.iter().any(|e| e.contains("no `main` function")), "{errs:?}");
}

#[test]
fn missing_terminator_is_rejected() {
    let errs = errors_of("type P = { x: i32 }\nfn main() {\nb0:\n  p = alloc P\n}\n");
    assert!(errs.iter().any(|e| e.contains("does not end in a terminator")), "{errs:?}");
}

#[test]
fn phi_preds_must_match() {
    let src = "fn main() {\n\
               b0:\n  jmp b1\n\
               b1:\n  i = phi [0, b0], [1, b1]\n  ret\n}\n";
    let errs = errors_of(src);
    assert!(errs.iter().any(|e| e.contains("phi incoming blocks")), "{errs:?}");
}

#[test]
fn kind_mismatches_are_rejected() {
    let errs = errors_of(
        "type P = { x: i32 }\nfn main() {\nb0:\n  p = alloc P\n  q = add p, 1\n  ret\n}\n",
    );
    assert!(errs.iter().any(|e| e.contains("arithmetic on references")), "{errs:?}");

    let errs = errors_of("fn main() {\nb0:\n  x = assign 3\n  y = load i64 x\n  ret\n}\n");
    assert!(errs.iter().any(|e| e.contains("load pointer must be a reference")), "{errs:?}");
}

#[test]
fn recursive_type_is_a_diagnostic() {
    let errs = errors_of("type R = { next: R }\nfn main() {\nb0:\n  ret\n}\n");
    assert!(errs.iter().any(|e| e.contains("recursive type `R`")), "{errs:?}");
}

#[test]
fn call_arity_is_checked() {
    let errs = errors_of(
        "fn f(a: i64) {\nb0:\n  ret\n}\nfn main() {\nb0:\n  call f(1, 2)\n  ret\n}\n",
    );
    assert!(errs.iter().any(|e| e.contains("passes 2 arguments, expected 1")), "{errs:?}");
}

#[test]
fn reserved_names_are_rejected() {
    let errs = errors_of("fn main() {\nb0:\n  cast = assign 1\n  ret\n}\n");
    assert!(errs.iter().any(|e| e.contains("`cast` is reserved")), "{errs:?}");
}

#[test]
fn comments_and_blank_lines_are_ignored() {
    let src = "; leading comment\n\ntype P = { x: i32 } ; trailing\n\nfn main() { ; open\nb0: ; label\n  p = alloc P ; body\n  ret\n}\n";
    assert!(parse_program(src).is_ok());
}
