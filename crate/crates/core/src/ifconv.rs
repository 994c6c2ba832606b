//! If-conversion of control hammocks.
//!
//! Hammocks are converted innermost first. After a conversion the head
//! block falls straight through to the join, so an enclosing hammock whose
//! paths only contained that inner region becomes convertible in turn.
//! Conditional stores become load/select/store sequences on the original
//! address; registers written on either path are merged with one `select`
//! per register that is live into the join.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::ir::{Block, BlockId, Function, Inst, Operand, Program, Reg, Terminator};

/// A single-entry, single-exit conditional region. Path block lists name
/// every block of the region in the original function, including blocks of
/// nested hammocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hammock {
    pub head: BlockId,
    pub true_path: Vec<BlockId>,
    pub false_path: Vec<BlockId>,
    pub join: BlockId,
}

impl Hammock {
    pub fn size(&self) -> usize {
        self.true_path.len() + self.false_path.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RejectReason {
    /// A path contains a loop-branch.
    LoopInHammock,
    /// A path returns instead of reaching the join.
    EarlyExit,
    /// A path calls a function that writes memory.
    ImpureCall(String),
    /// The branch does not form a single-entry single-exit region.
    Unstructured,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::LoopInHammock => write!(f, "loop inside conditional region"),
            RejectReason::EarlyExit => write!(f, "return inside conditional region"),
            RejectReason::ImpureCall(c) => {
                write!(f, "conditional call to `{c}`, which writes memory")
            }
            RejectReason::Unstructured => {
                write!(f, "branch does not form a single-entry single-exit region")
            }
        }
    }
}

/// A conditional branch that could not be placed in any convertible hammock.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejection {
    pub block: BlockId,
    pub label: String,
    pub reason: RejectReason,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HammockReport {
    /// Innermost first.
    pub hammocks: Vec<Hammock>,
    pub non_convertible: Vec<Rejection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConvertError {
    #[error("function `{func}`: {}", describe(.sites))]
    NonConvertible { func: String, sites: Vec<Rejection> },
    #[error(transparent)]
    Invalid(#[from] crate::ir::IrError),
}

fn describe(sites: &[Rejection]) -> String {
    sites
        .iter()
        .map(|s| format!("block `{}`: {}", s.label, s.reason))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Decides whether a call to the named function may execute unconditionally.
type Purity<'a> = &'a dyn Fn(&str) -> bool;

struct Work {
    f: Function,
    dead: Vec<bool>,
    next_reg: u32,
}

enum Walk {
    /// Blocks on the path (in order) and the block it reaches.
    Reached(Vec<BlockId>, BlockId),
    Stopped(Option<RejectReason>),
}

impl Work {
    fn new(f: &Function) -> Work {
        Work {
            dead: vec![false; f.blocks.len()],
            next_reg: f.reg_bound(),
            f: f.clone(),
        }
    }

    fn fresh(&mut self) -> Reg {
        self.next_reg += 1;
        Reg(self.next_reg - 1)
    }

    fn preds(&self) -> Vec<Vec<BlockId>> {
        let mut preds = vec![Vec::new(); self.f.blocks.len()];
        for (i, b) in self.f.blocks.iter().enumerate() {
            if self.dead[i] {
                continue;
            }
            for s in b.term.successors() {
                if !preds[s.index()].contains(&BlockId(i as u32)) {
                    preds[s.index()].push(BlockId(i as u32));
                }
            }
        }
        preds
    }

    /// Follows a chain of single-predecessor blocks ending in `br`.
    fn walk(&self, head: BlockId, start: BlockId, preds: &[Vec<BlockId>], pure: Purity) -> Walk {
        let mut path = Vec::new();
        let mut prev = head;
        let mut b = start;
        loop {
            if b == head {
                return Walk::Stopped(Some(RejectReason::Unstructured));
            }
            if preds[b.index()].as_slice() != [prev] || b.index() == 0 {
                return Walk::Reached(path, b);
            }
            let blk = &self.f.blocks[b.index()];
            for i in &blk.insts {
                if let Inst::Call { callee, .. } = i {
                    if !pure(callee) {
                        return Walk::Stopped(Some(RejectReason::ImpureCall(callee.clone())));
                    }
                }
            }
            match &blk.term {
                Terminator::Br(next) => {
                    path.push(b);
                    prev = b;
                    b = *next;
                }
                Terminator::Loop { .. } => return Walk::Stopped(Some(RejectReason::LoopInHammock)),
                Terminator::Ret(_) => return Walk::Stopped(Some(RejectReason::EarlyExit)),
                // nested branch not yet converted
                Terminator::CondBr { .. } => return Walk::Stopped(None),
            }
        }
    }

    /// Finds a hammock convertible right now, smallest region first.
    fn next_hammock(&self, pure: Purity) -> Option<(BlockId, Vec<BlockId>, Vec<BlockId>, BlockId)> {
        let preds = self.preds();
        let mut best: Option<(BlockId, Vec<BlockId>, Vec<BlockId>, BlockId)> = None;
        for (i, b) in self.f.blocks.iter().enumerate() {
            if self.dead[i] {
                continue;
            }
            let Terminator::CondBr {
                if_true, if_false, ..
            } = &b.term
            else {
                continue;
            };
            let h = BlockId(i as u32);
            let cand = if if_true == if_false {
                Some((Vec::new(), Vec::new(), *if_true))
            } else {
                match (
                    self.walk(h, *if_true, &preds, pure),
                    self.walk(h, *if_false, &preds, pure),
                ) {
                    (Walk::Reached(t, jt), Walk::Reached(fp, jf)) if jt == jf && jt != h => {
                        Some((t, fp, jt))
                    }
                    _ => None,
                }
            };
            if let Some((t, fp, j)) = cand {
                let size = t.len() + fp.len();
                if best.as_ref().is_none_or(|b| b.1.len() + b.2.len() > size) {
                    best = Some((h, t, fp, j));
                }
            }
        }
        best
    }

    /// Explains why a remaining conditional branch is not convertible.
    fn reject(&self, h: BlockId, pure: Purity) -> RejectReason {
        let preds = self.preds();
        let Terminator::CondBr {
            if_true, if_false, ..
        } = &self.f.blocks[h.index()].term
        else {
            unreachable!("rejecting a block without a conditional branch")
        };
        for start in [*if_true, *if_false] {
            if let Walk::Stopped(Some(r)) = self.walk(h, start, &preds, pure) {
                return r;
            }
        }
        // look deeper for loops and returns inside the region
        let region = region(&self.f, h, *if_true, *if_false);
        for b in &region {
            match self.f.blocks[b.index()].term {
                Terminator::Loop { .. } => return RejectReason::LoopInHammock,
                Terminator::Ret(_) => return RejectReason::EarlyExit,
                _ => {}
            }
        }
        RejectReason::Unstructured
    }

    fn convert(&mut self, h: BlockId, tpath: &[BlockId], fpath: &[BlockId], j: BlockId) {
        let live = live_in(&self.f, &self.dead, j);
        let Terminator::CondBr { cond, .. } = self.f.blocks[h.index()].term.clone() else {
            unreachable!("hammock head ends in a conditional branch")
        };
        let mut code = Vec::new();
        let fmap = self.emit_path(&mut code, fpath, &cond, false);
        let tmap = self.emit_path(&mut code, tpath, &cond, true);

        let merged: Vec<Reg> = live
            .into_iter()
            .filter(|r| tmap.contains_key(r) || fmap.contains_key(r))
            .collect();
        let mut pred = cond;
        if let Operand::Reg(c) = pred {
            if merged.contains(&c) {
                let snap = self.fresh();
                code.push(Inst::Const {
                    dst: snap,
                    value: Operand::Reg(c),
                });
                pred = Operand::Reg(snap);
            }
        }
        for r in merged {
            let pick = |m: &HashMap<Reg, Reg>| Operand::Reg(*m.get(&r).unwrap_or(&r));
            code.push(Inst::Select {
                dst: r,
                pred: pred.clone(),
                if_true: pick(&tmap),
                if_false: pick(&fmap),
            });
        }

        let head = &mut self.f.blocks[h.index()];
        head.insts.extend(code);
        head.term = Terminator::Br(j);
        for b in tpath.iter().chain(fpath) {
            self.dead[b.index()] = true;
        }

        let preds = self.preds();
        if j.index() != 0 && j != h && preds[j.index()].as_slice() == [h] {
            let joined = std::mem::replace(
                &mut self.f.blocks[j.index()],
                Block {
                    label: String::new(),
                    insts: Vec::new(),
                    term: Terminator::Ret(Vec::new()),
                },
            );
            self.dead[j.index()] = true;
            let head = &mut self.f.blocks[h.index()];
            head.insts.extend(joined.insts);
            head.term = joined.term;
        }
    }

    /// Emits one path with every definition renamed; returns the renaming.
    fn emit_path(
        &mut self,
        code: &mut Vec<Inst>,
        path: &[BlockId],
        pred: &Operand,
        on_true: bool,
    ) -> HashMap<Reg, Reg> {
        let mut map: HashMap<Reg, Reg> = HashMap::new();
        let insts: Vec<Inst> = path
            .iter()
            .flat_map(|b| self.f.blocks[b.index()].insts.clone())
            .collect();
        for mut inst in insts {
            for o in inst.operands_mut() {
                if let Operand::Reg(r) = o {
                    if let Some(n) = map.get(r) {
                        *r = *n;
                    }
                }
            }
            if let Inst::Store {
                space,
                width,
                addr,
                value,
            } = inst
            {
                let old = self.fresh();
                let sel = self.fresh();
                code.push(Inst::Load {
                    dst: old,
                    space,
                    width,
                    addr: addr.clone(),
                });
                let (t, f) = if on_true {
                    (value, Operand::Reg(old))
                } else {
                    (Operand::Reg(old), value)
                };
                code.push(Inst::Select {
                    dst: sel,
                    pred: pred.clone(),
                    if_true: t,
                    if_false: f,
                });
                code.push(Inst::Store {
                    space,
                    width,
                    addr,
                    value: Operand::Reg(sel),
                });
                continue;
            }
            for d in inst.defs_mut() {
                let n = self.fresh();
                map.insert(*d, n);
                *d = n;
            }
            code.push(inst);
        }
        map
    }

    fn finish(self) -> Function {
        let mut remap = vec![0u32; self.f.blocks.len()];
        let mut blocks = Vec::new();
        for (i, b) in self.f.blocks.into_iter().enumerate() {
            if !self.dead[i] {
                remap[i] = blocks.len() as u32;
                blocks.push(b);
            }
        }
        for b in &mut blocks {
            for s in b.term.successors_mut() {
                *s = BlockId(remap[s.index()]);
            }
        }
        Function {
            name: self.f.name,
            params: self.f.params,
            blocks,
        }
    }
}

/// Blocks reachable from either successor of `head` without passing through
/// `head` or the first block reachable from both.
fn region(f: &Function, head: BlockId, t: BlockId, e: BlockId) -> Vec<BlockId> {
    let reach = |start: BlockId| -> BTreeSet<BlockId> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![start];
        while let Some(b) = stack.pop() {
            if b == head || !seen.insert(b) {
                continue;
            }
            stack.extend(f.blocks[b.index()].term.successors());
        }
        seen
    };
    let rt = reach(t);
    let re = reach(e);
    let common: BTreeSet<BlockId> = rt.intersection(&re).copied().collect();
    // the join is the common block that every other common block is reached from
    let join = common
        .iter()
        .copied()
        .find(|j| common.iter().all(|c| reach(*j).contains(c)));
    let stop: BTreeSet<BlockId> = match join {
        Some(j) => reach(j),
        None => BTreeSet::new(),
    };
    rt.union(&re).copied().filter(|b| !stop.contains(b)).collect()
}

/// Region blocks on one side of a hammock in the original function.
fn side(f: &Function, head: BlockId, start: BlockId, join: BlockId) -> Vec<BlockId> {
    let mut seen = BTreeSet::new();
    let mut stack = vec![start];
    while let Some(b) = stack.pop() {
        if b == head || b == join || !seen.insert(b) {
            continue;
        }
        stack.extend(f.blocks[b.index()].term.successors());
    }
    seen.into_iter().collect()
}

/// Registers live on entry to `target`.
fn live_in(f: &Function, dead: &[bool], target: BlockId) -> BTreeSet<Reg> {
    let n = f.blocks.len();
    let mut gen: Vec<HashSet<Reg>> = vec![HashSet::new(); n];
    let mut kill: Vec<HashSet<Reg>> = vec![HashSet::new(); n];
    for (i, b) in f.blocks.iter().enumerate() {
        for inst in &b.insts {
            for u in inst.uses() {
                if !kill[i].contains(&u) {
                    gen[i].insert(u);
                }
            }
            kill[i].extend(inst.defs().iter().copied());
        }
        for u in b.term.uses() {
            if !kill[i].contains(&u) {
                gen[i].insert(u);
            }
        }
    }
    let mut live: Vec<HashSet<Reg>> = vec![HashSet::new(); n];
    let mut changed = true;
    while changed {
        changed = false;
        for i in (0..n).rev() {
            if dead[i] {
                continue;
            }
            let mut out: HashSet<Reg> = HashSet::new();
            for s in f.blocks[i].term.successors() {
                out.extend(live[s.index()].iter().copied());
            }
            let mut inn = gen[i].clone();
            inn.extend(out.into_iter().filter(|r| !kill[i].contains(r)));
            if inn.len() != live[i].len() {
                live[i] = inn;
                changed = true;
            }
        }
    }
    live[target.index()].iter().copied().collect()
}

fn analyse(f: &Function, pure: Purity) -> (Work, HammockReport) {
    let mut w = Work::new(f);
    let mut report = HammockReport::default();
    while let Some((h, t, fp, j)) = w.next_hammock(pure) {
        let Terminator::CondBr {
            if_true, if_false, ..
        } = &f.blocks[h.index()].term
        else {
            unreachable!("hammock heads keep their original branch")
        };
        report.hammocks.push(Hammock {
            head: h,
            true_path: if if_true == if_false {
                Vec::new()
            } else {
                side(f, h, *if_true, j)
            },
            false_path: if if_true == if_false {
                Vec::new()
            } else {
                side(f, h, *if_false, j)
            },
            join: j,
        });
        w.convert(h, &t, &fp, j);
    }
    for (i, b) in w.f.blocks.iter().enumerate() {
        if !w.dead[i] && matches!(b.term, Terminator::CondBr { .. }) {
            let h = BlockId(i as u32);
            report.non_convertible.push(Rejection {
                block: h,
                label: b.label.clone(),
                reason: w.reject(h, pure),
            });
        }
    }
    report.hammocks.sort_by_key(Hammock::size);
    (w, report)
}

fn no_calls(_: &str) -> bool {
    false
}

/// Hammocks of `f`, innermost first, and the conditional branches that
/// belong to none. Without program context every call is assumed to write
/// memory; see [`find_hammocks_in`].
pub fn find_hammocks(f: &Function) -> HammockReport {
    analyse(f, &no_calls).1
}

/// Like [`find_hammocks`], with call purity taken from `p`.
pub fn find_hammocks_in(p: &Program, f: &Function) -> HammockReport {
    let pure = pure_functions(p);
    analyse(f, &|c| pure.contains(c)).1
}

/// Converts every hammock of `f`. Calls inside hammocks are refused; use
/// [`convert_program`] to allow calls to functions that never store.
pub fn if_convert(f: &Function) -> Result<Function, ConvertError> {
    convert_with(f, &no_calls)
}

fn convert_with(f: &Function, pure: Purity) -> Result<Function, ConvertError> {
    let (w, report) = analyse(f, pure);
    if !report.non_convertible.is_empty() {
        return Err(ConvertError::NonConvertible {
            func: f.name.clone(),
            sites: report.non_convertible,
        });
    }
    if report.hammocks.is_empty() {
        return Ok(f.clone());
    }
    Ok(w.finish())
}

/// Names of functions that neither store nor call anything that stores.
pub fn pure_functions(p: &Program) -> HashSet<String> {
    let mut impure: HashSet<&str> = p
        .functions
        .iter()
        .filter(|f| f.contains_stores())
        .map(|f| f.name.as_str())
        .collect();
    loop {
        let before = impure.len();
        for f in &p.functions {
            if f.callees().any(|c| impure.contains(c)) {
                impure.insert(&f.name);
            }
        }
        if impure.len() == before {
            break;
        }
    }
    p.functions
        .iter()
        .filter(|f| !impure.contains(f.name.as_str()))
        .map(|f| f.name.clone())
        .collect()
}

/// If-converts the entry function and every function it reaches through
/// calls. Data and layout are preserved.
pub fn convert_program(p: &Program) -> Result<Program, ConvertError> {
    p.validate()?;
    let pure = pure_functions(p);
    let reach: HashSet<String> = p
        .reachable_functions()
        .into_iter()
        .map(|f| f.name.clone())
        .collect();
    let mut out = p.clone();
    for f in &mut out.functions {
        if reach.contains(&f.name) {
            *f = convert_with(f, &|c| pure.contains(c))?;
        }
    }
    Ok(out)
}
