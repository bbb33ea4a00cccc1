//! Program representation.
//!
//! A program is a set of named compound types, global cells, and functions
//! in SSA form. Each function is a control-flow graph of basic blocks; a
//! block is a run of instructions ending in exactly one terminator.
//! Values are defined once and every use is dominated by its definition;
//! merges go through `phi`.

use std::fmt;

use crate::types::{DeclType, PrimType, TypeRegistry};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FuncId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GlobalId(pub u32);

/// Program-wide allocation site number, in declaration order: global
/// initializers first, then `alloc` instructions in function order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SiteId(pub u32);

/// Position of an instruction: function, block, index within the block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InstrRef {
    pub func: FuncId,
    pub block: BlockId,
    pub idx: u32,
}

impl fmt::Display for InstrRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}.b{}.{}", self.func.0, self.block.0, self.idx)
    }
}

/// An instruction operand: an integer literal or an SSA value.
/// The literal `0` doubles as the null reference where a `ref` is
/// expected.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Operand {
    Const(i64),
    Value(ValueId),
}

impl Operand {
    pub fn as_value(self) -> Option<ValueId> {
        match self {
            Operand::Value(v) => Some(v),
            Operand::Const(_) => None,
        }
    }

    pub fn as_const(self) -> Option<i64> {
        match self {
            Operand::Const(c) => Some(c),
            Operand::Value(_) => None,
        }
    }
}

/// Size or type argument of `alloc` / `realloc`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AllocArg {
    /// `alloc T`: statically typed allocation of a named compound.
    Type(String),
    /// `alloc n`: raw allocation of `n` bytes; the object's type is
    /// assigned later, if ever, by the cast discipline.
    Size(Operand),
}

/// Target of a `cast`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CastTarget {
    /// View the operand as a named compound.
    Compound(String),
    /// Forget the compound view (`cast p, ref`), the `void*`/`char*`
    /// analogue.
    Opaque,
    /// Integer conversion to a narrower or wider primitive.
    Int(PrimType),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
}

impl BinOp {
    pub fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn name(self) -> &'static str {
        match self {
            CmpOp::Lt => "lt",
            CmpOp::Le => "le",
            CmpOp::Gt => "gt",
            CmpOp::Ge => "ge",
            CmpOp::Eq => "eq",
            CmpOp::Ne => "ne",
        }
    }

    pub fn eval(self, a: i64, b: i64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }
    }

    pub fn negate(self) -> CmpOp {
        match self {
            CmpOp::Lt => CmpOp::Ge,
            CmpOp::Le => CmpOp::Gt,
            CmpOp::Gt => CmpOp::Le,
            CmpOp::Ge => CmpOp::Lt,
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Op {
    Alloc { arg: AllocArg },
    Realloc { ptr: Operand, arg: AllocArg },
    Free { ptr: Operand },
    /// Byte-offset pointer arithmetic: result points `offset` bytes past
    /// `base` within the same object.
    Gep { base: Operand, offset: Operand },
    Cast { value: Operand, target: CastTarget },
    Load { prim: PrimType, ptr: Operand },
    Store { prim: PrimType, ptr: Operand, value: Operand },
    Assign { value: Operand },
    Bin { op: BinOp, a: Operand, b: Operand },
    Cmp { op: CmpOp, a: Operand, b: Operand },
    Br { cond: Operand, then_to: BlockId, else_to: BlockId },
    Jmp { to: BlockId },
    Call { func: FuncId, args: Vec<Operand> },
    Ret { value: Option<Operand> },
    Spawn { func: FuncId, args: Vec<Operand> },
    GlobalAddr { global: GlobalId },
    Phi { incoming: Vec<(Operand, BlockId)> },
}

impl Op {
    pub fn is_terminator(&self) -> bool {
        matches!(self, Op::Br { .. } | Op::Jmp { .. } | Op::Ret { .. })
    }

    /// Operands read by this instruction, in syntactic order.
    pub fn operands(&self) -> Vec<Operand> {
        match self {
            Op::Alloc { arg } | Op::Realloc { arg, .. } => {
                let mut v = Vec::new();
                if let Op::Realloc { ptr, .. } = self {
                    v.push(*ptr);
                }
                if let AllocArg::Size(s) = arg {
                    v.push(*s);
                }
                v
            }
            Op::Free { ptr } => vec![*ptr],
            Op::Gep { base, offset } => vec![*base, *offset],
            Op::Cast { value, .. } => vec![*value],
            Op::Load { ptr, .. } => vec![*ptr],
            Op::Store { ptr, value, .. } => vec![*ptr, *value],
            Op::Assign { value } => vec![*value],
            Op::Bin { a, b, .. } | Op::Cmp { a, b, .. } => vec![*a, *b],
            Op::Br { cond, .. } => vec![*cond],
            Op::Jmp { .. } => vec![],
            Op::Call { args, .. } | Op::Spawn { args, .. } => args.clone(),
            Op::Ret { value } => value.iter().copied().collect(),
            Op::GlobalAddr { .. } => vec![],
            Op::Phi { incoming } => incoming.iter().map(|(v, _)| *v).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instruction {
    /// 1-based source line.
    pub line: u32,
    pub result: Option<ValueId>,
    pub op: Op,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub instrs: Vec<Instruction>,
}

/// Entry-input range annotation: `fn main(n: i64 in 0..4)` declares `n`
/// as a program input drawn from `[lo, hi)`. Only meaningful on the
/// entry function; the concrete machine enumerates these.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputRange {
    pub lo: i64,
    pub hi: i64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Param {
    pub value: ValueId,
    pub prim: PrimType,
    pub range: Option<InputRange>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub params: Vec<Param>,
    pub blocks: Vec<Block>,
    pub line: u32,
}

impl Function {
    pub fn entry_block(&self) -> BlockId {
        BlockId(0)
    }

    pub fn block(&self, b: BlockId) -> &Block {
        &self.blocks[b.0 as usize]
    }
}

/// Kind of a global cell as declared.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GlobalType {
    /// A single primitive cell; `ref<T>` keeps the ascribed pointee name.
    Prim(PrimType, Option<String>),
    /// A compound cell of a named type.
    Compound(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GlobalInit {
    Int(i64),
    /// `= alloc T`: the cell is initialized at startup with a fresh
    /// allocation; this is an allocation site like any other.
    Alloc(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Global {
    pub name: String,
    pub ty: GlobalType,
    pub init: Option<GlobalInit>,
    pub line: u32,
}

/// Where an allocation site occurs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SitePlace {
    Instr(InstrRef),
    GlobalInit(GlobalId),
}

/// A static allocation site: one `alloc` instruction or one global
/// `= alloc T` initializer. `realloc` does not introduce a new site; it
/// retypes an existing one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AllocationSite {
    pub id: SiteId,
    pub place: SitePlace,
    pub arg: AllocArg,
    /// Enclosing function name, or `<global>` for initializer sites.
    pub in_func: String,
    pub line: u32,
}

/// Metadata for one SSA value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValueInfo {
    pub name: String,
    pub func: FuncId,
    pub kind: ValueKind,
}

/// Inferred kind of an SSA value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueKind {
    /// Integer value; the width records the narrowest primitive it was
    /// produced under (arithmetic is done at 64 bits regardless).
    Int(PrimType),
    Ref,
}

impl ValueKind {
    pub fn is_ref(self) -> bool {
        matches!(self, ValueKind::Ref)
    }
}

#[derive(Clone, Debug, Default)]
pub struct HirProgram {
    pub types: TypeRegistry,
    pub globals: Vec<Global>,
    pub funcs: Vec<Function>,
    pub values: Vec<ValueInfo>,
    pub sites: Vec<AllocationSite>,
    /// Index of the entry function (`main`).
    pub entry: FuncId,
}

impl HirProgram {
    pub fn func(&self, f: FuncId) -> &Function {
        &self.funcs[f.0 as usize]
    }

    pub fn func_by_name(&self, name: &str) -> Option<FuncId> {
        self.funcs.iter().position(|f| f.name == name).map(|i| FuncId(i as u32))
    }

    pub fn global(&self, g: GlobalId) -> &Global {
        &self.globals[g.0 as usize]
    }

    pub fn global_by_name(&self, name: &str) -> Option<GlobalId> {
        self.globals.iter().position(|g| g.name == name).map(|i| GlobalId(i as u32))
    }

    pub fn value(&self, v: ValueId) -> &ValueInfo {
        &self.values[v.0 as usize]
    }

    pub fn instr(&self, r: InstrRef) -> &Instruction {
        &self.funcs[r.func.0 as usize].blocks[r.block.0 as usize].instrs[r.idx as usize]
    }

    pub fn site(&self, s: SiteId) -> &AllocationSite {
        &self.sites[s.0 as usize]
    }

    /// The site defined by an instruction, if it is an `alloc`.
    pub fn site_of_instr(&self, r: InstrRef) -> Option<SiteId> {
        self.sites.iter().find(|s| s.place == SitePlace::Instr(r)).map(|s| s.id)
    }

    /// Iterates all instructions of all functions in program order.
    pub fn all_instrs(&self) -> impl Iterator<Item = (InstrRef, &Instruction)> {
        self.funcs.iter().enumerate().flat_map(|(fi, f)| {
            f.blocks.iter().enumerate().flat_map(move |(bi, b)| {
                b.instrs.iter().enumerate().map(move |(ii, ins)| {
                    (
                        InstrRef {
                            func: FuncId(fi as u32),
                            block: BlockId(bi as u32),
                            idx: ii as u32,
                        },
                        ins,
                    )
                })
            })
        })
    }

    /// Declared size of a global cell in bytes.
    pub fn global_size(&self, g: GlobalId) -> u64 {
        match &self.global(g).ty {
            GlobalType::Prim(p, _) => p.size(),
            GlobalType::Compound(name) => self
                .types
                .allocated(name)
                .map(|t| t.size())
                .unwrap_or(0),
        }
    }

    /// The declared type expression of a global cell.
    pub fn global_decl_type(&self, g: GlobalId) -> DeclType {
        match &self.global(g).ty {
            GlobalType::Prim(p, _) => DeclType::Prim(*p),
            GlobalType::Compound(name) => DeclType::Named(name.clone()),
        }
    }
}
