//! SHA-512 of a message of 1..=128 bytes held in 16 big-endian words.

use sha2::{Digest, Sha512};

use super::{le_words64, obj_bytes, obj_zeroed, MAIN};
use crate::ir::{sym, BinOp, DataObject, Function, FunctionBuilder, Operand, Reg, Width};

pub const MAX_LEN: u64 = 128;

const IV: [u64; 8] = [
    0x6a09e667f3bcc908,
    0xbb67ae8584caa73b,
    0x3c6ef372fe94f82b,
    0xa54ff53a5f1d36f1,
    0x510e527fade682d1,
    0x9b05688c2b3e6c1f,
    0x1f83d9abfb41bd6b,
    0x5be0cd19137e2179,
];

const K: [u64; 80] = [
    0x428a2f98d728ae22, 0x7137449123ef65cd, 0xb5c0fbcfec4d3b2f, 0xe9b5dba58189dbbc,
    0x3956c25bf348b538, 0x59f111f1b605d019, 0x923f82a4af194f9b, 0xab1c5ed5da6d8118,
    0xd807aa98a3030242, 0x12835b0145706fbe, 0x243185be4ee4b28c, 0x550c7dc3d5ffb4e2,
    0x72be5d74f27b896f, 0x80deb1fe3b1696b1, 0x9bdc06a725c71235, 0xc19bf174cf692694,
    0xe49b69c19ef14ad2, 0xefbe4786384f25e3, 0x0fc19dc68b8cd5b5, 0x240ca1cc77ac9c65,
    0x2de92c6f592b0275, 0x4a7484aa6ea6e483, 0x5cb0a9dcbd41fbd4, 0x76f988da831153b5,
    0x983e5152ee66dfab, 0xa831c66d2db43210, 0xb00327c898fb213f, 0xbf597fc7beef0ee4,
    0xc6e00bf33da88fc2, 0xd5a79147930aa725, 0x06ca6351e003826f, 0x142929670a0e6e70,
    0x27b70a8546d22ffc, 0x2e1b21385c26c926, 0x4d2c6dfc5ac42aed, 0x53380d139d95b3df,
    0x650a73548baf63de, 0x766a0abb3c77b2a8, 0x81c2c92e47edaee6, 0x92722c851482353b,
    0xa2bfe8a14cf10364, 0xa81a664bbc423001, 0xc24b8b70d0f89791, 0xc76c51a30654be30,
    0xd192e819d6ef5218, 0xd69906245565a910, 0xf40e35855771202a, 0x106aa07032bbd1b8,
    0x19a4c116b8d2d0c8, 0x1e376c085141ab53, 0x2748774cdf8eeb99, 0x34b0bcb5e19b48a8,
    0x391c0cb3c5c95a63, 0x4ed8aa4ae3418acb, 0x5b9cca4f7763e373, 0x682e6ff3d6b2b8a3,
    0x748f82ee5defb2fc, 0x78a5636f43172f60, 0x84c87814a1f0ab72, 0x8cc702081a6439ec,
    0x90befffa23631e28, 0xa4506cebde82bde9, 0xbef9a3f7b2c67915, 0xc67178f2e372532b,
    0xca273eceea26619c, 0xd186b8c721c0c207, 0xeada7dd6cde0eb1e, 0xf57d4f7fee6ed178,
    0x06f067aa72176fba, 0x0a637dc5a2c898a6, 0x113f9804bef90dae, 0x1b710b35131c471b,
    0x28db77f523047d84, 0x32caab7b40c72493, 0x3c9ebe0a15c9bebc, 0x431d67c49c100d4c,
    0x4cc5d4becb3e42b6, 0x597f299cfc657e2a, 0x5fcb6fab3ad6faec, 0x6c44198c4a475817,
];

/// inputs: 16 message words then the length in bytes; outputs: 8 digest
/// words.
pub fn oracle(inputs: &[u64]) -> Vec<u64> {
    let len = inputs[16] as usize;
    let bytes: Vec<u8> = inputs[..16].iter().flat_map(|w| w.to_be_bytes()).collect();
    let d = Sha512::digest(&bytes[..len]);
    d.chunks(8)
        .map(|c| u64::from_be_bytes(c.try_into().unwrap()))
        .collect()
}

pub(super) fn data_objects() -> Vec<DataObject> {
    let mut k = le_words64(&K);
    k.resize(1024, 0);
    vec![
        obj_bytes("sha_k", k),
        obj_zeroed("sha_w", 1024),
        obj_zeroed("sha_blk", 256),
        obj_zeroed("sha_msg", 128),
    ]
}

fn rotr(b: &mut FunctionBuilder, x: Reg, n: u64) -> Reg {
    let r = b.shr(x, n);
    let l = b.shl(x, 64 - n);
    b.or(r, l)
}

fn sigma(b: &mut FunctionBuilder, x: Reg, r1: u64, r2: u64, tail: (u64, bool)) -> Reg {
    let a = rotr(b, x, r1);
    let c = rotr(b, x, r2);
    let d = if tail.1 { rotr(b, x, tail.0) } else { b.shr(x, tail.0) };
    let v = b.xor(a, c);
    b.xor(v, d)
}

/// `word(table, t)`: 64-bit entry `t & 127` of a 1 KiB table.
fn word_at(b: &mut FunctionBuilder, table: &str, t: Reg) -> Reg {
    let i = b.and(t, 127u64);
    let off = b.shl(i, 3);
    b.add(sym(table), off)
}

/// `compress(h0..h7, off) -> h0'..h7'` over the block at `sha_blk + off`.
fn compress_fn() -> Function {
    let mut b = FunctionBuilder::new("sha512_compress");
    let h = b.params(8);
    let off = b.param();
    let off = b.and(off, 128u64);
    let base = b.add(sym("sha_blk"), off);

    let t = b.konst(0u64);
    let load = b.block("load");
    let sched = b.block("schedule");
    let rounds_init = b.block("init");
    let round = b.block("round");
    let fin = b.block("finish");
    b.br(load);

    b.switch_to(load);
    let i = b.and(t, 15u64);
    let o = b.shl(i, 3);
    let a = b.add(base, o);
    let w = b.load(MAIN, Width::W64, a);
    let dst = word_at(&mut b, "sha_w", t);
    b.store(MAIN, Width::W64, dst, w);
    b.bin_into(t, BinOp::Add, t, 1u64);
    b.loop_fixed(load, sched, 16);

    b.switch_to(sched);
    let fetch = |b: &mut FunctionBuilder, back: u64| {
        let j = b.sub(t, back);
        let a = word_at(b, "sha_w", j);
        b.load(MAIN, Width::W64, a)
    };
    let w15 = fetch(&mut b, 15);
    let w2 = fetch(&mut b, 2);
    let w16 = fetch(&mut b, 16);
    let w7 = fetch(&mut b, 7);
    let s0 = sigma(&mut b, w15, 1, 8, (7, false));
    let s1 = sigma(&mut b, w2, 19, 61, (6, false));
    let v = b.add(w16, s0);
    let v = b.add(v, w7);
    let v = b.add(v, s1);
    let dst = word_at(&mut b, "sha_w", t);
    b.store(MAIN, Width::W64, dst, v);
    b.bin_into(t, BinOp::Add, t, 1u64);
    b.loop_fixed(sched, rounds_init, 64);

    b.switch_to(rounds_init);
    let s: Vec<Reg> = (0..8).map(|_| b.reg()).collect();
    for k in 0..8 {
        b.mov(s[k], h[k]);
    }
    b.mov(t, 0u64);
    b.br(round);

    b.switch_to(round);
    let (va, vb, vc, vd, ve, vf, vg, vh) = (s[0], s[1], s[2], s[3], s[4], s[5], s[6], s[7]);
    let big1 = sigma(&mut b, ve, 14, 18, (41, true));
    let ef = b.and(ve, vf);
    let ne = b.xor(ve, u64::MAX);
    let eg = b.and(ne, vg);
    let ch = b.xor(ef, eg);
    let ka = word_at(&mut b, "sha_k", t);
    let k = b.load(MAIN, Width::W64, ka);
    let wa = word_at(&mut b, "sha_w", t);
    let wt = b.load(MAIN, Width::W64, wa);
    let t1 = b.add(vh, big1);
    let t1 = b.add(t1, ch);
    let t1 = b.add(t1, k);
    let t1 = b.add(t1, wt);
    let big0 = sigma(&mut b, va, 28, 34, (39, true));
    let ab = b.and(va, vb);
    let ac = b.and(va, vc);
    let bc = b.and(vb, vc);
    let maj = b.xor(ab, ac);
    let maj = b.xor(maj, bc);
    let t2 = b.add(big0, maj);
    b.mov(vh, vg);
    b.mov(vg, vf);
    b.mov(vf, ve);
    b.bin_into(ve, BinOp::Add, vd, t1);
    b.mov(vd, vc);
    b.mov(vc, vb);
    b.mov(vb, va);
    b.bin_into(va, BinOp::Add, t1, t2);
    b.bin_into(t, BinOp::Add, t, 1u64);
    b.loop_fixed(round, fin, 80);

    b.switch_to(fin);
    let out: Vec<Operand> = (0..8).map(|k| b.add(h[k], s[k]).into()).collect();
    b.ret(out);
    b.finish()
}

/// Stores the message words so that byte `i` of the message sits at
/// `sha_msg + (i ^ 7)`.
fn store_message(b: &mut FunctionBuilder, m: &[Reg]) {
    for (j, w) in m.iter().enumerate() {
        let a = b.add(sym("sha_msg"), 8 * j as u64);
        b.store(MAIN, Width::W64, a, *w);
    }
}

/// Byte position `i` of the padded buffer, as stored.
fn blk_byte(b: &mut FunctionBuilder, i: impl Into<Operand>) -> Reg {
    let x = b.xor(i, 7u64);
    let x = b.and(x, 255u64);
    b.add(sym("sha_blk"), x)
}

fn iv(b: &mut FunctionBuilder) -> Vec<Reg> {
    IV.iter().map(|v| b.konst(*v)).collect()
}

/// Pads to one or two blocks as the length requires and compresses only
/// those.
pub(super) fn baseline_functions() -> Vec<Function> {
    let mut b = FunctionBuilder::new("main");
    let m = b.params(16);
    let len = b.param();
    store_message(&mut b, &m);
    let two = b.cmp_lt(111u64, len);
    let nb = b.add(two, 1u64);
    let total = b.shl(nb, 7);

    let copy = b.block("copy");
    let pad = b.block("pad");
    let zero = b.block("zero");
    let length = b.block("length");
    let comp = b.block("compress");
    let out = b.block("out");

    let i = b.konst(0u64);
    b.br(copy);
    b.switch_to(copy);
    let src = b.xor(i, 7u64);
    let src = b.and(src, 127u64);
    let src = b.add(sym("sha_msg"), src);
    let v = b.load(MAIN, Width::W8, src);
    let dst = blk_byte(&mut b, i);
    b.store(MAIN, Width::W8, dst, v);
    b.bin_into(i, BinOp::Add, i, 1u64);
    b.loop_dyn(copy, pad, len);

    b.switch_to(pad);
    let dst = blk_byte(&mut b, len);
    b.store(MAIN, Width::W8, dst, 0x80u64);
    b.bin_into(i, BinOp::Add, len, 1u64);
    let rest = b.sub(total, i);
    b.br(zero);

    b.switch_to(zero);
    let dst = blk_byte(&mut b, i);
    b.store(MAIN, Width::W8, dst, 0u64);
    b.bin_into(i, BinOp::Add, i, 1u64);
    b.loop_dyn(zero, length, rest);

    b.switch_to(length);
    let bits = b.shl(len, 3);
    let last = b.sub(total, 1u64);
    let dst = blk_byte(&mut b, last);
    let lo = b.and(bits, 0xffu64);
    b.store(MAIN, Width::W8, dst, lo);
    let prev = b.sub(total, 2u64);
    let dst = blk_byte(&mut b, prev);
    let hi = b.shr(bits, 8);
    b.store(MAIN, Width::W8, dst, hi);
    let h = iv(&mut b);
    let blk = b.konst(0u64);
    b.br(comp);

    b.switch_to(comp);
    let off = b.shl(blk, 7);
    let mut args: Vec<Operand> = h.iter().map(|r| (*r).into()).collect();
    args.push(off.into());
    b.call_into("sha512_compress", args, h.clone());
    b.bin_into(blk, BinOp::Add, blk, 1u64);
    b.loop_dyn(comp, out, nb);

    b.switch_to(out);
    b.ret(h.iter().map(|r| (*r).into()).collect());
    vec![b.finish(), compress_fn()]
}

/// Always builds and compresses two blocks, then selects the digest the
/// length calls for.
pub(super) fn ozone_functions() -> Vec<Function> {
    let mut b = FunctionBuilder::new("main");
    let m = b.params(16);
    let len = b.param();
    store_message(&mut b, &m);
    let two = b.cmp_lt(111u64, len);
    let t7 = b.shl(two, 7);
    let last = b.add(t7, 127u64);
    let prev = b.add(t7, 126u64);
    let bits = b.shl(len, 3);
    let bits_lo = b.and(bits, 0xffu64);
    let bits_hi = b.shr(bits, 8);

    let fill = b.block("fill");
    let comp = b.block("compress");
    let i = b.konst(0u64);
    b.br(fill);

    b.switch_to(fill);
    let src = b.xor(i, 7u64);
    let src = b.and(src, 127u64);
    let src = b.add(sym("sha_msg"), src);
    let byte = b.load(MAIN, Width::W8, src);
    let inside = b.cmp_lt(i, len);
    let v = b.select(inside, byte, 0u64);
    let at_end = b.cmp_eq(i, len);
    let v = b.select(at_end, 0x80u64, v);
    let is_last = b.cmp_eq(i, last);
    let v = b.select(is_last, bits_lo, v);
    let is_prev = b.cmp_eq(i, prev);
    let v = b.select(is_prev, bits_hi, v);
    let dst = blk_byte(&mut b, i);
    b.store(MAIN, Width::W8, dst, v);
    b.bin_into(i, BinOp::Add, i, 1u64);
    b.loop_fixed(fill, comp, 256);

    b.switch_to(comp);
    let h = iv(&mut b);
    let mut args: Vec<Operand> = h.iter().map(|r| (*r).into()).collect();
    args.push(0u64.into());
    let h1 = b.call("sha512_compress", args, 8);
    let mut args: Vec<Operand> = h1.iter().map(|r| (*r).into()).collect();
    args.push(128u64.into());
    let h2 = b.call("sha512_compress", args, 8);
    let out: Vec<Operand> = (0..8).map(|k| b.select(two, h2[k], h1[k]).into()).collect();
    b.ret(out);
    vec![b.finish(), compress_fn()]
}
