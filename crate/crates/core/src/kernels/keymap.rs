//! Keyboard code to character lookup over a sorted 784-entry table.

use std::sync::OnceLock;

use super::{obj_bytes, MAIN};
use crate::ir::{sym, BinOp, DataObject, Function, FunctionBuilder, Width};

pub const ENTRIES: usize = 784;
/// Table slots, padded to a power of two with keys that never match.
pub const SLOTS: usize = 1024;
pub const PROBES: u64 = 10;
const PAD_KEY: u32 = u32::MAX;

/// `(key, unicode)` pairs sorted by key, `key[0] == 0`.
pub fn table() -> &'static [(u32, u32); ENTRIES] {
    static T: OnceLock<[(u32, u32); ENTRIES]> = OnceLock::new();
    T.get_or_init(|| {
        let mut t = [(0u32, 0u32); ENTRIES];
        let mut h: u32 = 0x9e37_79b9;
        let mut key = 0u32;
        for (i, e) in t.iter_mut().enumerate() {
            h ^= h << 13;
            h ^= h >> 17;
            h ^= h << 5;
            if i > 0 {
                key += 1 + (h % 61);
            }
            *e = (key, 0x20 + (h >> 8) % 0x2f00);
        }
        t
    })
}

pub fn oracle(code: u64) -> u64 {
    let t = table();
    match t.binary_search_by_key(&code, |e| e.0 as u64) {
        Ok(i) => t[i].1 as u64,
        Err(_) => 0,
    }
}

pub(super) fn data_objects() -> Vec<DataObject> {
    let mut bytes = Vec::with_capacity(SLOTS * 8);
    for i in 0..SLOTS {
        let (k, u) = table().get(i).copied().unwrap_or((PAD_KEY, 0));
        bytes.extend(k.to_le_bytes());
        bytes.extend(u.to_le_bytes());
    }
    vec![obj_bytes("keymap", bytes)]
}

/// Binary search that returns as soon as the key is found.
pub(super) fn baseline_functions() -> Vec<Function> {
    let mut b = FunctionBuilder::new("main");
    let code = b.param();
    let lo = b.konst(0u64);
    let hi = b.konst(ENTRIES as u64);
    let mid = b.reg();
    let search = b.block("search");
    let probe = b.block("probe");
    let cont = b.block("cont");
    let right = b.block("right");
    let left = b.block("left");
    let found = b.block("found");
    let miss = b.block("miss");
    b.br(search);

    b.switch_to(search);
    let more = b.cmp_lt(lo, hi);
    b.cbr(more, probe, miss);

    b.switch_to(probe);
    let s = b.add(lo, hi);
    b.bin_into(mid, BinOp::Shr, s, 1u64);
    let off = b.shl(mid, 3);
    let a = b.add(sym("keymap"), off);
    let k = b.load(MAIN, Width::W32, a);
    let eq = b.cmp_eq(k, code);
    b.cbr(eq, found, cont);

    b.switch_to(cont);
    let lt = b.cmp_lt(k, code);
    b.cbr(lt, right, left);

    b.switch_to(right);
    b.bin_into(lo, BinOp::Add, mid, 1u64);
    b.br(search);

    b.switch_to(left);
    b.mov(hi, mid);
    b.br(search);

    b.switch_to(found);
    let off = b.shl(mid, 3);
    let a = b.add(sym("keymap"), off);
    let a = b.add(a, 4u64);
    let u = b.load(MAIN, Width::W32, a);
    b.ret(vec![u.into()]);

    b.switch_to(miss);
    b.ret(vec![0u64.into()]);
    vec![b.finish()]
}

/// Fixed ladder of probes: the largest slot whose key is not above `code`,
/// then one final compare.
pub(super) fn ozone_functions() -> Vec<Function> {
    let mut b = FunctionBuilder::new("main");
    let code = b.param();
    let pos = b.konst(0u64);
    let step = b.konst(SLOTS as u64 / 2);
    let body = b.block("probe");
    let done = b.block("done");
    b.br(body);

    b.switch_to(body);
    let cand = b.add(pos, step);
    let idx = b.and(cand, SLOTS as u64 - 1);
    let off = b.shl(idx, 3);
    let a = b.add(sym("keymap"), off);
    let k = b.load(MAIN, Width::W32, a);
    let above = b.cmp_lt(code, k);
    b.select_into(pos, above, pos, idx);
    b.bin_into(step, BinOp::Shr, step, 1u64);
    b.loop_fixed(body, done, PROBES);

    b.switch_to(done);
    let idx = b.and(pos, SLOTS as u64 - 1);
    let off = b.shl(idx, 3);
    let a = b.add(sym("keymap"), off);
    let k = b.load(MAIN, Width::W32, a);
    let a = b.add(a, 4u64);
    let u = b.load(MAIN, Width::W32, a);
    let hit = b.cmp_eq(k, code);
    let r = b.select(hit, u, 0u64);
    b.ret(vec![r.into()]);
    vec![b.finish()]
}
