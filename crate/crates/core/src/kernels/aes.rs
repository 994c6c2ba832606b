//! AES-128 with 32-bit T-tables: one CBC block, and two XTS blocks.

use std::sync::OnceLock;

use aes::cipher::{Array, BlockCipherEncrypt, KeyInit};
use aes::Aes128;

use super::{le_words, obj_bytes, obj_zeroed};
use crate::ir::{sym, AddrSpace, DataObject, Function, FunctionBuilder, Operand, Reg, Width};

const M32: u64 = 0xffff_ffff;
const MAIN: AddrSpace = AddrSpace::Main;

fn xtime(x: u8) -> u8 {
    (x << 1) ^ if x & 0x80 != 0 { 0x1b } else { 0 }
}

fn gmul(mut a: u8, mut b: u8) -> u8 {
    let mut r = 0;
    while b != 0 {
        if b & 1 != 0 {
            r ^= a;
        }
        a = xtime(a);
        b >>= 1;
    }
    r
}

/// The AES S-box, from the field inverse and the affine map.
pub fn sbox() -> &'static [u8; 256] {
    static S: OnceLock<[u8; 256]> = OnceLock::new();
    S.get_or_init(|| {
        let mut s = [0u8; 256];
        for (x, out) in s.iter_mut().enumerate() {
            let inv = if x == 0 {
                0
            } else {
                (1..=255u8).find(|&y| gmul(x as u8, y) == 1).unwrap()
            };
            let mut v = inv;
            for k in 1..5 {
                v ^= inv.rotate_left(k);
            }
            *out = v ^ 0x63;
        }
        s
    })
}

/// Encryption tables T0..T3. `T0[x]` packs `2s, s, s, 3s` big-endian with
/// `s = S[x]`; each further table is the previous rotated right a byte.
pub fn te_tables() -> &'static [[u32; 256]; 4] {
    static T: OnceLock<[[u32; 256]; 4]> = OnceLock::new();
    T.get_or_init(|| {
        let s = sbox();
        let mut t = [[0u32; 256]; 4];
        for x in 0..256 {
            let v = s[x];
            let w = u32::from_be_bytes([gmul(v, 2), v, v, gmul(v, 3)]);
            for (k, table) in t.iter_mut().enumerate() {
                table[x] = w.rotate_right(8 * k as u32);
            }
        }
        t
    })
}

const RCON: [u8; 11] = [0, 0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1b, 0x36];

/// 44 round-key words.
pub fn expand_key(key: &[u8; 16]) -> [u32; 44] {
    let s = sbox();
    let mut w = [0u32; 44];
    for i in 0..4 {
        w[i] = u32::from_be_bytes(key[4 * i..4 * i + 4].try_into().unwrap());
    }
    for i in 4..44 {
        let mut t = w[i - 1];
        if i % 4 == 0 {
            let b = t.rotate_left(8).to_be_bytes();
            t = u32::from_be_bytes([s[b[0] as usize], s[b[1] as usize], s[b[2] as usize], s[b[3] as usize]])
                ^ ((RCON[i / 4] as u32) << 24);
        }
        w[i] = w[i - 4] ^ t;
    }
    w
}

/// First-round outputs t0..t3 from the round input bytes `s` and the
/// mixing words `x` (round-key words 4..7).
pub fn first_round(s: &[u8; 16], x: [u32; 4]) -> [u32; 4] {
    let t = te_tables();
    let mut out = [0u32; 4];
    for (c, o) in out.iter_mut().enumerate() {
        *o = t[0][s[4 * c] as usize]
            ^ t[1][s[(4 * c + 5) % 16] as usize]
            ^ t[2][s[(4 * c + 10) % 16] as usize]
            ^ t[3][s[(4 * c + 15) % 16] as usize]
            ^ x[c];
    }
    out
}

/// Block encryption from the tables, for cross-checking the tables against
/// the library cipher.
pub fn encrypt_with_tables(key: &[u8; 16], block: &[u8; 16]) -> [u8; 16] {
    let rk = expand_key(key);
    let t = te_tables();
    let s = sbox();
    let mut st = [0u32; 4];
    for c in 0..4 {
        st[c] = u32::from_be_bytes(block[4 * c..4 * c + 4].try_into().unwrap()) ^ rk[c];
    }
    for r in 1..10 {
        let b: Vec<[u8; 4]> = st.iter().map(|w| w.to_be_bytes()).collect();
        let mut n = [0u32; 4];
        for c in 0..4 {
            n[c] = t[0][b[c][0] as usize]
                ^ t[1][b[(c + 1) % 4][1] as usize]
                ^ t[2][b[(c + 2) % 4][2] as usize]
                ^ t[3][b[(c + 3) % 4][3] as usize]
                ^ rk[4 * r + c];
        }
        st = n;
    }
    let b: Vec<[u8; 4]> = st.iter().map(|w| w.to_be_bytes()).collect();
    let mut out = [0u8; 16];
    for c in 0..4 {
        let w = u32::from_be_bytes([
            s[b[c][0] as usize],
            s[b[(c + 1) % 4][1] as usize],
            s[b[(c + 2) % 4][2] as usize],
            s[b[(c + 3) % 4][3] as usize],
        ]) ^ rk[40 + c];
        out[4 * c..4 * c + 4].copy_from_slice(&w.to_be_bytes());
    }
    out
}

pub fn words_to_block(hi: u64, lo: u64) -> [u8; 16] {
    let mut b = [0u8; 16];
    b[..8].copy_from_slice(&hi.to_be_bytes());
    b[8..].copy_from_slice(&lo.to_be_bytes());
    b
}

pub fn block_to_words(b: &[u8; 16]) -> (u64, u64) {
    (
        u64::from_be_bytes(b[..8].try_into().unwrap()),
        u64::from_be_bytes(b[8..].try_into().unwrap()),
    )
}

fn lib_encrypt(key: &[u8; 16], block: [u8; 16]) -> [u8; 16] {
    let c = Aes128::new(&Array::from(*key));
    let mut b = Array::from(block);
    c.encrypt_block(&mut b);
    b.into()
}

/// inputs: key(2), iv(2), plaintext(2); outputs: ciphertext(2).
pub fn cbc_oracle(inputs: &[u64]) -> Vec<u64> {
    let key = words_to_block(inputs[0], inputs[1]);
    let x = words_to_block(inputs[2] ^ inputs[4], inputs[3] ^ inputs[5]);
    let (a, b) = block_to_words(&lib_encrypt(&key, x));
    vec![a, b]
}

/// Multiplies the tweak by the primitive element, bytes little-endian.
pub fn xts_double(t: [u8; 16]) -> [u8; 16] {
    let v = u128::from_le_bytes(t);
    let carry = v >> 127;
    ((v << 1) ^ (carry * 0x87)).to_le_bytes()
}

/// inputs: data key(2), tweak key(2), tweak(2), two plaintext blocks(4);
/// outputs: two ciphertext blocks(4).
pub fn xts_oracle(inputs: &[u64]) -> Vec<u64> {
    let k1 = words_to_block(inputs[0], inputs[1]);
    let k2 = words_to_block(inputs[2], inputs[3]);
    let mut t = lib_encrypt(&k2, words_to_block(inputs[4], inputs[5]));
    let mut out = Vec::with_capacity(4);
    for blk in 0..2 {
        let p = words_to_block(inputs[6 + 2 * blk], inputs[7 + 2 * blk]);
        let mut x = [0u8; 16];
        for i in 0..16 {
            x[i] = p[i] ^ t[i];
        }
        let mut c = lib_encrypt(&k1, x);
        for i in 0..16 {
            c[i] ^= t[i];
        }
        let (a, b) = block_to_words(&c);
        out.extend([a, b]);
        t = xts_double(t);
    }
    out
}

pub(super) fn data_objects() -> Vec<DataObject> {
    let t = te_tables();
    let mut v: Vec<DataObject> = (0..4)
        .map(|k| obj_bytes(&format!("te{k}"), le_words(&t[k])))
        .collect();
    v.push(obj_bytes("sbox", sbox().to_vec()));
    let mut rcon = vec![0u8; 16];
    rcon[..11].copy_from_slice(&RCON);
    v.push(obj_bytes("rcon", rcon));
    v.push(obj_zeroed("rk", 256));
    v
}

fn byte_of(b: &mut FunctionBuilder, w: Reg, shift: u64) -> Reg {
    let v = if shift == 0 { w } else { b.shr(w, shift) };
    b.and(v, 0xff)
}

/// `table[(w >> shift) & 0xff]`, 32-bit entries.
fn te(b: &mut FunctionBuilder, table: &str, w: Reg, shift: u64) -> Reg {
    let i = byte_of(b, w, shift);
    let off = b.shl(i, 2);
    let a = b.add(sym(table), off);
    b.load(MAIN, Width::W32, a)
}

fn sb(b: &mut FunctionBuilder, w: Reg, shift: u64) -> Reg {
    let i = byte_of(b, w, shift);
    let a = b.add(sym("sbox"), i);
    b.load(MAIN, Width::W8, a)
}

/// `expand(k0, k1)`: round keys into `rk`, 16 bytes per round.
fn expand_fn() -> Function {
    let mut b = FunctionBuilder::new("aes_expand");
    let k = b.params(2);
    let w: Vec<Reg> = (0..4).map(|_| b.reg()).collect();
    b.bin_into(w[0], crate::ir::BinOp::Shr, k[0], 32u64);
    b.bin_into(w[1], crate::ir::BinOp::And, k[0], M32);
    b.bin_into(w[2], crate::ir::BinOp::Shr, k[1], 32u64);
    b.bin_into(w[3], crate::ir::BinOp::And, k[1], M32);
    for (i, wi) in w.iter().enumerate() {
        let a = b.add(sym("rk"), 4 * i as u64);
        b.store(MAIN, Width::W32, a, *wi);
    }
    let i = b.konst(1u64);
    let body = b.block("round");
    let done = b.block("done");
    b.br(body);
    b.switch_to(body);
    // SubWord(RotWord(w3)) ^ rcon
    let hi = b.shl(w[3], 8);
    let lo = b.shr(w[3], 24);
    let rot = b.or(hi, lo);
    let rot = b.and(rot, M32);
    let mut sub = b.konst(0u64);
    for shift in [24u64, 16, 8, 0] {
        let s = sb(&mut b, rot, shift);
        let s = b.shl(s, shift);
        sub = b.or(sub, s);
    }
    let ri = b.and(i, 15);
    let ra = b.add(sym("rcon"), ri);
    let rc = b.load(MAIN, Width::W8, ra);
    let rc = b.shl(rc, 24);
    let x = b.xor(sub, rc);
    b.bin_into(w[0], crate::ir::BinOp::Xor, w[0], x);
    for j in 1..4 {
        b.bin_into(w[j], crate::ir::BinOp::Xor, w[j], w[j - 1]);
    }
    let off = b.shl(ri, 4);
    let base = b.add(sym("rk"), off);
    for (j, wj) in w.iter().enumerate() {
        let a = b.add(base, 4 * j as u64);
        b.store(MAIN, Width::W32, a, *wj);
    }
    b.bin_into(i, crate::ir::BinOp::Add, i, 1u64);
    b.loop_fixed(body, done, 10);
    b.switch_to(done);
    b.ret(vec![]);
    b.finish()
}

fn rk_word(b: &mut FunctionBuilder, base: Operand, j: u64) -> Reg {
    let a = b.add(base, 4 * j);
    b.load(MAIN, Width::W32, a)
}

/// `encrypt(x0, x1) -> (y0, y1)` with the schedule in `rk`.
fn encrypt_fn() -> Function {
    use crate::ir::BinOp::{Or, Xor};
    let mut b = FunctionBuilder::new("aes_encrypt");
    let x = b.params(2);
    let s: Vec<Reg> = (0..4).map(|_| b.reg()).collect();
    let halves = [
        b.shr(x[0], 32),
        b.and(x[0], M32),
        b.shr(x[1], 32),
        b.and(x[1], M32),
    ];
    for c in 0..4 {
        let k = rk_word(&mut b, sym("rk"), c as u64);
        b.bin_into(s[c], Xor, halves[c], k);
    }
    let r = b.konst(1u64);
    let body = b.block("round");
    let last = b.block("last");
    b.br(body);
    b.switch_to(body);
    let ri = b.and(r, 15);
    let off = b.shl(ri, 4);
    let base = b.add(sym("rk"), off);
    let mut t = Vec::with_capacity(4);
    for c in 0..4 {
        let a = te(&mut b, "te0", s[c], 24);
        let bb = te(&mut b, "te1", s[(c + 1) % 4], 16);
        let cc = te(&mut b, "te2", s[(c + 2) % 4], 8);
        let d = te(&mut b, "te3", s[(c + 3) % 4], 0);
        let k = rk_word(&mut b, base.into(), c as u64);
        let v = b.xor(a, bb);
        let v = b.xor(v, cc);
        let v = b.xor(v, d);
        t.push(b.xor(v, k));
    }
    for c in 0..4 {
        b.mov(s[c], t[c]);
    }
    b.bin_into(r, crate::ir::BinOp::Add, r, 1u64);
    b.loop_fixed(body, last, 9);
    b.switch_to(last);
    let base = b.add(sym("rk"), 160u64);
    let mut out = Vec::with_capacity(4);
    for c in 0..4 {
        let mut w = b.konst(0u64);
        for (k, shift) in [24u64, 16, 8, 0].into_iter().enumerate() {
            let v = sb(&mut b, s[(c + k) % 4], shift);
            let v = b.shl(v, shift);
            let nw = b.reg();
            b.bin_into(nw, Or, w, v);
            w = nw;
        }
        let k = rk_word(&mut b, base.into(), c as u64);
        out.push(b.xor(w, k));
    }
    let y0 = b.shl(out[0], 32);
    let y0 = b.or(y0, out[1]);
    let y1 = b.shl(out[2], 32);
    let y1 = b.or(y1, out[3]);
    b.ret(vec![y0.into(), y1.into()]);
    b.finish()
}

fn bswap_fn() -> Function {
    let mut b = FunctionBuilder::new("bswap64");
    let x = b.param();
    let mut v = x;
    for (mask, sh) in [(0x00ff_00ff_00ff_00ffu64, 8u64), (0x0000_ffff_0000_ffff, 16)] {
        let lo = b.and(v, mask);
        let lo = b.shl(lo, sh);
        let hi = b.shr(v, sh);
        let hi = b.and(hi, mask);
        v = b.or(lo, hi);
    }
    let lo = b.shl(v, 32);
    let hi = b.shr(v, 32);
    let v = b.or(lo, hi);
    b.ret(vec![v.into()]);
    b.finish()
}

pub(super) fn cbc_functions() -> Vec<Function> {
    let mut b = FunctionBuilder::new("main");
    let p = b.params(6);
    b.call("aes_expand", vec![p[0].into(), p[1].into()], 0);
    let x0 = b.xor(p[2], p[4]);
    let x1 = b.xor(p[3], p[5]);
    let y = b.call("aes_encrypt", vec![x0.into(), x1.into()], 2);
    b.ret(vec![y[0].into(), y[1].into()]);
    vec![b.finish(), expand_fn(), encrypt_fn()]
}

pub(super) fn xts_functions() -> Vec<Function> {
    use crate::ir::BinOp::{Or, Shl, Xor};
    let mut b = FunctionBuilder::new("main");
    let p = b.params(10);
    b.call("aes_expand", vec![p[2].into(), p[3].into()], 0);
    let t = b.call("aes_encrypt", vec![p[4].into(), p[5].into()], 2);
    b.call("aes_expand", vec![p[0].into(), p[1].into()], 0);
    let mut outs: Vec<Operand> = Vec::new();
    let (t0, t1) = (t[0], t[1]);
    for blk in 0..2 {
        let x0 = b.xor(p[6 + 2 * blk], t0);
        let x1 = b.xor(p[7 + 2 * blk], t1);
        let y = b.call("aes_encrypt", vec![x0.into(), x1.into()], 2);
        outs.push(b.xor(y[0], t0).into());
        outs.push(b.xor(y[1], t1).into());
        if blk == 1 {
            break;
        }
        // tweak times alpha, as a little-endian 128-bit value
        let lo = b.call("bswap64", vec![t0.into()], 1)[0];
        let hi = b.call("bswap64", vec![t1.into()], 1)[0];
        let carry = b.shr(hi, 63);
        let h2 = b.shl(hi, 1);
        let spill = b.shr(lo, 63);
        b.bin_into(hi, Or, h2, spill);
        b.bin_into(lo, Shl, lo, 1u64);
        let poly = b.block("poly");
        let join = b.block("swap");
        b.cbr(carry, poly, join);
        b.switch_to(poly);
        b.bin_into(lo, Xor, lo, 0x87u64);
        b.br(join);
        b.switch_to(join);
        b.call_into("bswap64", vec![lo.into()], vec![t0]);
        b.call_into("bswap64", vec![hi.into()], vec![t1]);
    }
    b.ret(outs);
    vec![b.finish(), expand_fn(), encrypt_fn(), bswap_fn()]
}

/// Inputs for one block under `key` with every plaintext byte given.
pub fn cbc_inputs(key: &[u8; 16], iv: &[u8; 16], pt: &[u8; 16]) -> Vec<u64> {
    let (k0, k1) = block_to_words(key);
    let (i0, i1) = block_to_words(iv);
    let (p0, p1) = block_to_words(pt);
    vec![k0, k1, i0, i1, p0, p1]
}
