//! A small heap-oriented SSA intermediate representation.
//!
//! The language has named compound types with packed layouts, global
//! cells, and functions built from basic blocks. Heap objects are created
//! by `alloc`/`realloc`, addressed by byte offsets through `gep`, viewed
//! under different types through `cast`, and accessed by typed
//! `load`/`store`. `spawn` starts a thread running a named function.
//!
//! This crate owns parsing, printing, structural validation and the
//! derived indexes (control flow, dominators, def-use, loops, call
//! graph). The analyses and the runtime live in sibling crates.

pub mod diag;
pub mod index;
pub mod parse;
pub mod print;
pub mod program;
pub mod types;
mod validate;

pub use diag::Diagnostic;
pub use index::{build_indexes, DefSite, DefUse, FuncIndex, NaturalLoop, ProgramIndex};
pub use parse::parse_program;
pub use print::print_program;
pub use program::*;
pub use types::{
    append_fields, extend_trailing, fnv1a_64, AllocatedType, DeclField, DeclType, FieldDesc,
    LayoutError, PrimType, TypeDef, TypeRegistry,
};
