//! Fixed-window modular exponentiation with a 64-bit odd modulus, using
//! Montgomery multiplication over 16-bit limbs.

use super::{obj_zeroed, MAIN};
use crate::ir::{sym, BinOp, DataObject, Function, FunctionBuilder, Operand, Reg, Width};

pub const WINDOW_BITS: u64 = 4;
const M32: u64 = 0xffff_ffff;

/// `base^exp mod n` by right-to-left square and multiply.
pub fn modexp(base: u64, mut exp: u64, n: u64) -> u64 {
    let n128 = n as u128;
    let mut r: u128 = 1 % n128;
    let mut b = base as u128 % n128;
    while exp != 0 {
        if exp & 1 == 1 {
            r = r * b % n128;
        }
        b = b * b % n128;
        exp >>= 1;
    }
    r as u64
}

/// Whether `(base, exp, n)` is a valid kernel input.
pub fn valid(inputs: &[u64]) -> bool {
    inputs.len() == 3 && inputs[2] & 1 == 1 && inputs[2] >= 3 && inputs[0] < inputs[2]
}

pub fn oracle(inputs: &[u64]) -> Vec<u64> {
    vec![modexp(inputs[0], inputs[1], inputs[2])]
}

pub(super) fn data_objects() -> Vec<DataObject> {
    vec![obj_zeroed("powers", 128)]
}

/// Montgomery limb width; `LIMBS * LIMB_BITS == 64`.
pub const LIMB_BITS: u64 = 16;
const LIMBS: usize = (64 / LIMB_BITS) as usize;
const MASK: u64 = (1 << LIMB_BITS) - 1;

fn limbs(b: &mut FunctionBuilder, x: Reg) -> Vec<Reg> {
    (0..LIMBS)
        .map(|j| {
            let v = b.shr(x, j as u64 * LIMB_BITS);
            b.and(v, MASK)
        })
        .collect()
}

/// `mont_mul(a, b, n, ninv) = a * b / 2^64 mod n` for `a, b < n`, with
/// `ninv = -n^-1 mod 2^LIMB_BITS`.
fn mont_fn() -> Function {
    use BinOp::{And, Shr};
    let mut b = FunctionBuilder::new("mont_mul");
    let p = b.params(4);
    let (x, y, n, ninv) = (p[0], p[1], p[2], p[3]);
    let a = limbs(&mut b, x);
    let nl = limbs(&mut b, n);
    let t: Vec<Reg> = (0..LIMBS + 2).map(|_| b.konst(0u64)).collect();
    let sh = b.konst(0u64);
    let body = b.block("limb");
    let tail = b.block("tail");
    let sub = b.block("sub");
    let done = b.block("done");
    b.br(body);

    b.switch_to(body);
    let bi = b.shr(y, sh);
    let bi = b.and(bi, MASK);
    // t += a * b[i]
    let mut c: Operand = 0u64.into();
    for j in 0..LIMBS {
        let m = b.mul(a[j], bi);
        let m = b.add(m, t[j]);
        let m = b.add(m, c);
        b.bin_into(t[j], And, m, MASK);
        c = b.shr(m, LIMB_BITS).into();
    }
    let top = b.add(t[LIMBS], c);
    b.bin_into(t[LIMBS], And, top, MASK);
    b.bin_into(t[LIMBS + 1], Shr, top, LIMB_BITS);
    // t = (t + m * n) / 2^LIMB_BITS
    let m = b.mul(t[0], ninv);
    let m = b.and(m, MASK);
    let q = b.mul(m, nl[0]);
    let q = b.add(q, t[0]);
    let mut c = b.shr(q, LIMB_BITS);
    for j in 1..LIMBS {
        let q = b.mul(m, nl[j]);
        let q = b.add(q, t[j]);
        let q = b.add(q, c);
        b.bin_into(t[j - 1], And, q, MASK);
        c = b.shr(q, LIMB_BITS);
    }
    let q = b.add(t[LIMBS], c);
    b.bin_into(t[LIMBS - 1], And, q, MASK);
    let c = b.shr(q, LIMB_BITS);
    b.bin_into(t[LIMBS], BinOp::Add, t[LIMBS + 1], c);
    b.bin_into(sh, BinOp::Add, sh, LIMB_BITS);
    b.loop_fixed(body, tail, LIMBS as u64);

    b.switch_to(tail);
    let r = b.konst(t[0]);
    for j in 1..LIMBS {
        let v = b.shl(t[j], j as u64 * LIMB_BITS);
        b.bin_into(r, BinOp::Or, r, v);
    }
    let below = b.cmp_lt(r, n);
    let ge = b.xor(below, 1u64);
    let over = b.or(t[LIMBS], ge);
    b.cbr(over, sub, done);

    b.switch_to(sub);
    b.bin_into(r, BinOp::Sub, r, n);
    b.br(done);

    b.switch_to(done);
    b.ret(vec![r.into()]);
    b.finish()
}

fn mont(b: &mut FunctionBuilder, x: impl Into<Operand>, y: impl Into<Operand>, n: Reg, ninv: Reg) -> Reg {
    b.call("mont_mul", vec![x.into(), y.into(), n.into(), ninv.into()], 1)[0]
}

fn power_slot(b: &mut FunctionBuilder, i: Reg) -> Reg {
    let i = b.and(i, 15u64);
    let off = b.shl(i, 3);
    b.add(sym("powers"), off)
}

/// `main(base, exp, n) -> base^exp mod n`. Zero windows skip their
/// multiply.
pub(super) fn functions() -> Vec<Function> {
    use BinOp::{Add, And, Mul, Sub};
    let mut b = FunctionBuilder::new("main");
    let p = b.params(3);
    let (base, exp, n) = (p[0], p[1], p[2]);

    // -n^-1 mod 2^32 by Newton iteration
    let n0 = b.and(n, M32);
    let x = b.konst(n0);
    for _ in 0..4 {
        let nx = b.mul(n0, x);
        let d = b.sub(2u64, nx);
        b.bin_into(x, Mul, x, d);
        b.bin_into(x, And, x, M32);
    }
    let neg = b.sub(0u64, x);
    let ninv = b.and(neg, MASK);

    // 2^128 mod n by doubling
    let r = b.konst(1u64);
    let dbl = b.block("double");
    let dsub = b.block("double_sub");
    let dnext = b.block("double_next");
    let setup = b.block("setup");
    b.br(dbl);
    b.switch_to(dbl);
    let carry = b.shr(r, 63);
    b.bin_into(r, BinOp::Shl, r, 1u64);
    let below = b.cmp_lt(r, n);
    let ge = b.xor(below, 1u64);
    let over = b.or(carry, ge);
    b.cbr(over, dsub, dnext);
    b.switch_to(dsub);
    b.bin_into(r, Sub, r, n);
    b.br(dnext);
    b.switch_to(dnext);
    b.loop_fixed(dbl, setup, 128);

    b.switch_to(setup);
    let one = mont(&mut b, r, 1u64, n, ninv);
    let bm = mont(&mut b, base, r, n, ninv);
    let s0 = b.add(sym("powers"), 0u64);
    b.store(MAIN, Width::W64, s0, one);
    let s1 = b.add(sym("powers"), 8u64);
    b.store(MAIN, Width::W64, s1, bm);
    let i = b.konst(2u64);
    let prev = b.konst(bm);
    let table = b.block("table");
    let ladder_init = b.block("ladder_init");
    b.br(table);
    b.switch_to(table);
    let v = mont(&mut b, prev, bm, n, ninv);
    b.mov(prev, v);
    let slot = power_slot(&mut b, i);
    b.store(MAIN, Width::W64, slot, v);
    b.bin_into(i, Add, i, 1u64);
    b.loop_fixed(table, ladder_init, 14);

    b.switch_to(ladder_init);
    let acc = b.konst(one);
    let shift = b.konst(64 - WINDOW_BITS);
    let window = b.block("window");
    let mulw = b.block("multiply");
    let next = b.block("next");
    let out = b.block("out");
    b.br(window);

    b.switch_to(window);
    for _ in 0..WINDOW_BITS {
        let sq = mont(&mut b, acc, acc, n, ninv);
        b.mov(acc, sq);
    }
    let d = b.shr(exp, shift);
    let d = b.and(d, 15u64);
    let zero = b.cmp_eq(d, 0u64);
    b.cbr(zero, next, mulw);

    b.switch_to(mulw);
    let slot = power_slot(&mut b, d);
    let pw = b.load(MAIN, Width::W64, slot);
    let v = mont(&mut b, acc, pw, n, ninv);
    b.mov(acc, v);
    b.br(next);

    b.switch_to(next);
    b.bin_into(shift, Sub, shift, WINDOW_BITS);
    b.loop_fixed(window, out, 64 / WINDOW_BITS);

    b.switch_to(out);
    let res = mont(&mut b, acc, 1u64, n, ninv);
    b.ret(vec![res.into()]);
    vec![b.finish(), mont_fn()]
}
