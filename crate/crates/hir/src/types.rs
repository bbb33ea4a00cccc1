//! Primitive and compound type layout.
//!
//! Compound types use a packed layout: fields sit at consecutive byte
//! offsets with no implicit padding, so a type's total size is the sum of
//! its flattened field sizes. Flattening expands nested compounds and
//! arrays into an ordered list of `(offset, primitive)` entries; that list
//! is the layout identity used everywhere else (pool keys, cast checks,
//! access checks).

use std::collections::HashMap;
use std::fmt;

/// Primitive value types. `Ref` is an 8-byte pointer; the simulated
/// address space is 48 bits wide.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PrimType {
    I8,
    I16,
    I32,
    I64,
    Ref,
}

impl PrimType {
    pub fn size(self) -> u64 {
        match self {
            PrimType::I8 => 1,
            PrimType::I16 => 2,
            PrimType::I32 => 4,
            PrimType::I64 => 8,
            PrimType::Ref => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PrimType::I8 => "i8",
            PrimType::I16 => "i16",
            PrimType::I32 => "i32",
            PrimType::I64 => "i64",
            PrimType::Ref => "ref",
        }
    }

    pub fn from_name(s: &str) -> Option<PrimType> {
        match s {
            "i8" => Some(PrimType::I8),
            "i16" => Some(PrimType::I16),
            "i32" => Some(PrimType::I32),
            "i64" => Some(PrimType::I64),
            "ref" => Some(PrimType::Ref),
            _ => None,
        }
    }

    /// Signed value range of an integer primitive. `Ref` has no range.
    pub fn int_range(self) -> Option<(i64, i64)> {
        Some(match self {
            PrimType::I8 => (i8::MIN as i64, i8::MAX as i64),
            PrimType::I16 => (i16::MIN as i64, i16::MAX as i64),
            PrimType::I32 => (i32::MIN as i64, i32::MAX as i64),
            PrimType::I64 => (i64::MIN, i64::MAX),
            PrimType::Ref => return None,
        })
    }
}

impl fmt::Display for PrimType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A type expression as written in a declaration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DeclType {
    Prim(PrimType),
    Named(String),
    Array(Box<DeclType>, u64),
}

impl fmt::Display for DeclType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeclType::Prim(p) => write!(f, "{p}"),
            DeclType::Named(n) => f.write_str(n),
            DeclType::Array(inner, n) => write!(f, "{inner}[{n}]"),
        }
    }
}

/// One declared field of a compound type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeclField {
    pub name: String,
    pub ty: DeclType,
}

/// A named compound type declaration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TypeDef {
    pub name: String,
    pub fields: Vec<DeclField>,
}

/// One entry of a flattened layout: a primitive slice of the object.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FieldDesc {
    /// Dotted path of the field, e.g. `hdr.len` or `data[3]`.
    pub name: String,
    pub offset: u64,
    pub size: u64,
    pub prim: PrimType,
}

/// Errors found while flattening a type expression.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayoutError {
    UnknownType(String),
    RecursiveType(String),
    EmptyType(String),
    ZeroLengthArray(String),
}

impl fmt::Display for LayoutError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayoutError::UnknownType(n) => write!(f, "unknown type `{n}`"),
            LayoutError::RecursiveType(n) => write!(f, "recursive type `{n}`"),
            LayoutError::EmptyType(n) => write!(f, "compound type `{n}` has no fields"),
            LayoutError::ZeroLengthArray(n) => write!(f, "zero-length array in `{n}`"),
        }
    }
}

/// A concrete object layout: total size, a tag naming the type, and the
/// flattened fields. Fields are contiguous, pairwise disjoint and sorted
/// by ascending offset; the total size equals the sum of field sizes.
/// Equality of layouts (offsets, sizes, primitive kinds) is what the cast
/// and access rules compare; the tag participates only in identity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AllocatedType {
    tag: String,
    size: u64,
    fields: Vec<FieldDesc>,
    hash: u64,
}

impl AllocatedType {
    /// Builds an allocated type and checks the layout invariants.
    ///
    /// Panics if the fields are not packed back-to-back starting at zero;
    /// callers construct the field list via flattening, which guarantees
    /// this, so a violation is a programming error rather than bad input.
    pub fn new(tag: impl Into<String>, fields: Vec<FieldDesc>) -> AllocatedType {
        let tag = tag.into();
        assert!(!fields.is_empty(), "allocated type `{tag}` has no fields");
        let mut end = 0u64;
        for f in &fields {
            assert_eq!(f.offset, end, "field `{}` of `{tag}` is not packed", f.name);
            assert_eq!(f.size, f.prim.size(), "field `{}` of `{tag}` has wrong size", f.name);
            end = f.offset + f.size;
        }
        let size = end;
        let hash = hash_layout(size, &tag, &fields);
        AllocatedType { tag, size, fields, hash }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn fields(&self) -> &[FieldDesc] {
        &self.fields
    }

    /// Stable identity hash; two calls on the same declaration agree
    /// across runs and re-parses.
    pub fn hash(&self) -> u64 {
        self.hash
    }

    /// Flattened layout as `(offset, prim)` pairs.
    pub fn layout(&self) -> impl Iterator<Item = (u64, PrimType)> + '_ {
        self.fields.iter().map(|f| (f.offset, f.prim))
    }

    /// The field entry starting exactly at `offset`, if any.
    pub fn field_at(&self, offset: u64) -> Option<&FieldDesc> {
        self.fields.iter().find(|f| f.offset == offset)
    }

    /// True when every flattened entry is the same primitive, i.e. the
    /// object is a homogeneous array of `prim`.
    pub fn homogeneous(&self, prim: PrimType) -> bool {
        self.fields.iter().all(|f| f.prim == prim)
    }
}

/// FNV-1a over the canonical layout serialization
/// `size|tag|name:offset:size:prim|...`.
fn hash_layout(size: u64, tag: &str, fields: &[FieldDesc]) -> u64 {
    let mut s = format!("{size}|{tag}");
    for f in fields {
        s.push('|');
        s.push_str(&format!("{}:{}:{}:{}", f.name, f.offset, f.size, f.prim.name()));
    }
    fnv1a_64(s.as_bytes())
}

pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Named type table with cached flattening.
#[derive(Clone, Debug, Default)]
pub struct TypeRegistry {
    defs: Vec<TypeDef>,
    by_name: HashMap<String, usize>,
}

impl TypeRegistry {
    pub fn new() -> TypeRegistry {
        TypeRegistry::default()
    }

    /// Adds a definition; returns false if the name is already taken.
    pub fn define(&mut self, def: TypeDef) -> bool {
        if self.by_name.contains_key(&def.name) {
            return false;
        }
        self.by_name.insert(def.name.clone(), self.defs.len());
        self.defs.push(def);
        true
    }

    pub fn get(&self, name: &str) -> Option<&TypeDef> {
        self.by_name.get(name).map(|&i| &self.defs[i])
    }

    pub fn defs(&self) -> &[TypeDef] {
        &self.defs
    }

    /// Flattens a type expression into packed `FieldDesc` entries starting
    /// at offset 0. `prefix` seeds the field names.
    pub fn flatten(&self, ty: &DeclType) -> Result<Vec<FieldDesc>, LayoutError> {
        let mut out = Vec::new();
        let mut stack = Vec::new();
        self.flatten_into(ty, "", 0, &mut out, &mut stack)?;
        Ok(out)
    }

    /// Flattens a named compound into an `AllocatedType` tagged with its
    /// own name.
    pub fn allocated(&self, name: &str) -> Result<AllocatedType, LayoutError> {
        if self.get(name).is_none() {
            return Err(LayoutError::UnknownType(name.to_string()));
        }
        let fields = self.flatten(&DeclType::Named(name.to_string()))?;
        Ok(AllocatedType::new(name, fields))
    }

    fn flatten_into(
        &self,
        ty: &DeclType,
        prefix: &str,
        base: u64,
        out: &mut Vec<FieldDesc>,
        stack: &mut Vec<String>,
    ) -> Result<u64, LayoutError> {
        match ty {
            DeclType::Prim(p) => {
                let name = if prefix.is_empty() { p.name().to_string() } else { prefix.to_string() };
                out.push(FieldDesc { name, offset: base, size: p.size(), prim: *p });
                Ok(base + p.size())
            }
            DeclType::Named(n) => {
                if stack.iter().any(|s| s == n) {
                    return Err(LayoutError::RecursiveType(n.clone()));
                }
                let def = self.get(n).ok_or_else(|| LayoutError::UnknownType(n.clone()))?;
                if def.fields.is_empty() {
                    return Err(LayoutError::EmptyType(n.clone()));
                }
                stack.push(n.clone());
                let mut at = base;
                for f in &def.fields {
                    let child = if prefix.is_empty() {
                        f.name.clone()
                    } else {
                        format!("{prefix}.{}", f.name)
                    };
                    at = self.flatten_into(&f.ty, &child, at, out, stack)?;
                }
                stack.pop();
                Ok(at)
            }
            DeclType::Array(inner, n) => {
                if *n == 0 {
                    return Err(LayoutError::ZeroLengthArray(prefix.to_string()));
                }
                let mut at = base;
                for i in 0..*n {
                    let child =
                        if prefix.is_empty() { format!("[{i}]") } else { format!("{prefix}[{i}]") };
                    at = self.flatten_into(inner, &child, at, out, stack)?;
                }
                Ok(at)
            }
        }
    }
}

/// Grows the last flattened field run of `t` so the total size becomes
/// `new_size`, keeping every existing entry. Succeeds only when the tail
/// of `t` can be extended with copies of its final primitive, i.e. the
/// growth is a whole number of trailing elements. The result carries a
/// derived tag `tag@new_size`.
pub fn extend_trailing(t: &AllocatedType, new_size: u64) -> Option<AllocatedType> {
    if new_size < t.size() {
        return None;
    }
    if new_size == t.size() {
        return Some(t.clone());
    }
    let last = t.fields().last().expect("allocated types are non-empty");
    let elem = last.prim;
    let grow = new_size - t.size();
    if grow % elem.size() != 0 {
        return None;
    }
    let mut fields = t.fields().to_vec();
    let base_name = trailing_base_name(&last.name);
    let mut offset = t.size();
    let mut index = trailing_index(&last.name).map(|i| i + 1).unwrap_or(0);
    for _ in 0..grow / elem.size() {
        fields.push(FieldDesc {
            name: format!("{base_name}[{index}]"),
            offset,
            size: elem.size(),
            prim: elem,
        });
        offset += elem.size();
        index += 1;
    }
    Some(AllocatedType::new(format!("{}@{new_size}", original_tag(t.tag())), fields))
}

/// Appends extra flattened fields after the end of `t`, producing a grown
/// type with derived tag `tag@new_size`.
pub fn append_fields(t: &AllocatedType, extra: &[(String, PrimType)]) -> AllocatedType {
    let mut fields = t.fields().to_vec();
    let mut offset = t.size();
    for (name, prim) in extra {
        fields.push(FieldDesc { name: name.clone(), offset, size: prim.size(), prim: *prim });
        offset += prim.size();
    }
    AllocatedType::new(format!("{}@{offset}", original_tag(t.tag())), fields)
}

fn original_tag(tag: &str) -> &str {
    tag.split('@').next().unwrap_or(tag)
}

fn trailing_base_name(name: &str) -> String {
    match name.rfind('[') {
        Some(i) if name.ends_with(']') => name[..i].to_string(),
        _ => name.to_string(),
    }
}

fn trailing_index(name: &str) -> Option<u64> {
    let open = name.rfind('[')?;
    if !name.ends_with(']') {
        return None;
    }
    name[open + 1..name.len() - 1].parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg(defs: &[(&str, &[(&str, DeclType)])]) -> TypeRegistry {
        let mut r = TypeRegistry::new();
        for (name, fields) in defs {
            let def = TypeDef {
                name: name.to_string(),
                fields: fields
                    .iter()
                    .map(|(n, t)| DeclField { name: n.to_string(), ty: t.clone() })
                    .collect(),
            };
            assert!(r.define(def));
        }
        r
    }

    #[test]
    fn packed_two_field_layout() {
        let r = reg(&[(
            "P",
            &[
                ("x", DeclType::Prim(PrimType::I32)),
                ("y", DeclType::Prim(PrimType::I64)),
            ],
        )]);
        let t = r.allocated("P").unwrap();
        let layout: Vec<_> = t.layout().collect();
        assert_eq!(layout, vec![(0, PrimType::I32), (4, PrimType::I64)]);
        assert_eq!(t.size(), 12);
    }

    #[test]
    fn nested_compound_flattens_in_place() {
        let r = reg(&[
            ("Inner", &[("x", DeclType::Prim(PrimType::I32))]),
            (
                "Outer",
                &[
                    ("a", DeclType::Named("Inner".into())),
                    ("b", DeclType::Prim(PrimType::I8)),
                ],
            ),
        ]);
        let t = r.allocated("Outer").unwrap();
        let layout: Vec<_> = t.layout().collect();
        assert_eq!(layout, vec![(0, PrimType::I32), (4, PrimType::I8)]);
        assert_eq!(t.size(), 5);
        assert_eq!(t.fields()[0].name, "a.x");
    }

    #[test]
    fn single_ref_field() {
        let r = reg(&[("Cell", &[("p", DeclType::Prim(PrimType::Ref))])]);
        let t = r.allocated("Cell").unwrap();
        let layout: Vec<_> = t.layout().collect();
        assert_eq!(layout, vec![(0, PrimType::Ref)]);
        assert_eq!(t.size(), 8);
    }

    #[test]
    fn array_fields_expand_elementwise() {
        let r = reg(&[(
            "Buf",
            &[(
                "d",
                DeclType::Array(Box::new(DeclType::Prim(PrimType::I8)), 3),
            )],
        )]);
        let t = r.allocated("Buf").unwrap();
        assert_eq!(t.size(), 3);
        assert_eq!(t.fields()[2].name, "d[2]");
        assert_eq!(t.fields()[2].offset, 2);
    }

    #[test]
    fn recursive_type_is_rejected() {
        let r = reg(&[("R", &[("next", DeclType::Named("R".into()))])]);
        assert_eq!(
            r.allocated("R"),
            Err(LayoutError::RecursiveType("R".into()))
        );
    }

    #[test]
    fn mutually_recursive_types_are_rejected() {
        let r = reg(&[
            ("A", &[("b", DeclType::Named("B".into()))]),
            ("B", &[("a", DeclType::Named("A".into()))]),
        ]);
        assert!(matches!(r.allocated("A"), Err(LayoutError::RecursiveType(_))));
    }

    #[test]
    fn hash_is_stable_across_reconstruction() {
        let mk = || {
            let r = reg(&[(
                "P",
                &[
                    ("x", DeclType::Prim(PrimType::I32)),
                    ("y", DeclType::Prim(PrimType::I64)),
                ],
            )]);
            r.allocated("P").unwrap().hash()
        };
        assert_eq!(mk(), mk());
    }

    #[test]
    fn hash_separates_tag_and_layout() {
        let fields = vec![FieldDesc { name: "x".into(), offset: 0, size: 4, prim: PrimType::I32 }];
        let a = AllocatedType::new("A", fields.clone());
        let b = AllocatedType::new("B", fields);
        assert_ne!(a.hash(), b.hash());

        let c = AllocatedType::new(
            "A",
            vec![FieldDesc { name: "x".into(), offset: 0, size: 8, prim: PrimType::I64 }],
        );
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn extend_trailing_grows_last_run() {
        let r = reg(&[(
            "Msg",
            &[
                ("len", DeclType::Prim(PrimType::I32)),
                (
                    "data",
                    DeclType::Array(Box::new(DeclType::Prim(PrimType::I8)), 8),
                ),
            ],
        )]);
        let t = r.allocated("Msg").unwrap();
        assert_eq!(t.size(), 12);
        let g = extend_trailing(&t, 20).unwrap();
        assert_eq!(g.size(), 20);
        assert_eq!(g.fields().len(), t.fields().len() + 8);
        // old layout is a strict prefix of the grown layout
        for (a, b) in t.layout().zip(g.layout()) {
            assert_eq!(a, b);
        }
        assert_eq!(g.tag(), "Msg@20");
        // growing again keeps the original tag stem
        let g2 = extend_trailing(&g, 24).unwrap();
        assert_eq!(g2.tag(), "Msg@24");
    }

    #[test]
    fn extend_trailing_rejects_partial_elements() {
        let r = reg(&[("W", &[("v", DeclType::Prim(PrimType::I32))])]);
        let t = r.allocated("W").unwrap();
        assert!(extend_trailing(&t, 6).is_none()); // half an i32
        assert!(extend_trailing(&t, 2).is_none()); // shrink
        assert_eq!(extend_trailing(&t, 4).unwrap(), t);
    }

    #[test]
    fn append_fields_places_after_end() {
        let r = reg(&[("P", &[("x", DeclType::Prim(PrimType::I32))])]);
        let t = r.allocated("P").unwrap();
        let g = append_fields(&t, &[("tail".into(), PrimType::I64)]);
        assert_eq!(g.size(), 12);
        assert_eq!(g.fields()[1].offset, 4);
        assert_eq!(g.tag(), "P@12");
    }
}
