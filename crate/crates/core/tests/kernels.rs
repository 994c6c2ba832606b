use ozone_core::ir::{interpret, print_program, Program};
use ozone_core::kernels::aes::{
    self, block_to_words, encrypt_with_tables, expand_key, first_round, sbox, te_tables,
};
use ozone_core::kernels::{
    build_kernel, catalog, check_inputs, footprint, keymap, oracle_eval, random_inputs, rsa,
    sweep_inputs, KernelError, Variant, KERNEL_NAMES,
};
use ozone_core::microsim::{measure_cycles_compiled, simulate_baseline, Compiled, MicroarchConfig};
use ozone_core::verifier::{verify, verify_control, verify_fixed_trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn run(p: &Program, inputs: &[u64]) -> Vec<u64> {
    interpret(p, inputs).unwrap().outputs
}

#[test]
fn sbox_known_values() {
    let s = sbox();
    assert_eq!(s[0x00], 0x63);
    assert_eq!(s[0x01], 0x7c);
    assert_eq!(s[0x53], 0xed);
    assert_eq!(s[0xff], 0x16);
    let mut seen = [false; 256];
    for v in s.iter() {
        seen[*v as usize] = true;
    }
    assert!(seen.iter().all(|x| *x));
}

#[test]
fn te_table_structure() {
    let t = te_tables();
    assert_eq!(t[0][0], 0xc66363a5);
    for x in 0..256 {
        assert_eq!(t[1][x], t[0][x].rotate_right(8));
        assert_eq!(t[3][x], t[0][x].rotate_right(24));
    }
}

#[test]
fn table_cipher_matches_library() {
    // FIPS-197 appendix C.1
    let key: [u8; 16] = core::array::from_fn(|i| i as u8);
    let pt: [u8; 16] = core::array::from_fn(|i| (i as u8) * 0x11);
    let ct = encrypt_with_tables(&key, &pt);
    assert_eq!(
        ct,
        [0x69, 0xc4, 0xe0, 0xd8, 0x6a, 0x7b, 0x04, 0x30, 0xd8, 0xcd, 0xb7, 0x80, 0x70, 0xb4, 0xc5, 0x5a]
    );
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let k: [u8; 16] = rng.random();
        let p: [u8; 16] = rng.random();
        let (k0, k1) = block_to_words(&k);
        let (p0, p1) = block_to_words(&p);
        let want = aes::cbc_oracle(&[k0, k1, 0, 0, p0, p1]);
        let (c0, c1) = block_to_words(&encrypt_with_tables(&k, &p));
        assert_eq!(want, vec![c0, c1]);
    }
}

#[test]
fn first_round_with_key_equal_to_plaintext() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = te_tables();
    for _ in 0..16 {
        let k: [u8; 16] = rng.random();
        let rk = expand_key(&k);
        let x = [rk[4], rk[5], rk[6], rk[7]];
        let s: [u8; 16] = core::array::from_fn(|i| k[i] ^ k[i]);
        let out = first_round(&s, x);
        let zero = t[0][0] ^ t[1][0] ^ t[2][0] ^ t[3][0];
        for c in 0..4 {
            assert_eq!(out[c], zero ^ x[c]);
        }
    }
}

#[test]
fn first_round_matches_full_cipher_state() {
    // round one of the table cipher equals the equations on s = K ^ n
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = te_tables();
    for _ in 0..64 {
        let k: [u8; 16] = rng.random();
        let n: [u8; 16] = rng.random();
        let s: [u8; 16] = core::array::from_fn(|i| k[i] ^ n[i]);
        let rk = expand_key(&k);
        let out = first_round(&s, [rk[4], rk[5], rk[6], rk[7]]);
        let w = |c: usize| u32::from_be_bytes([s[4 * c], s[4 * c + 1], s[4 * c + 2], s[4 * c + 3]]);
        for c in 0..4 {
            let b = |j: usize, sh: u32| ((w((c + j) % 4) >> sh) & 0xff) as usize;
            let want = t[0][b(0, 24)] ^ t[1][b(1, 16)] ^ t[2][b(2, 8)] ^ t[3][b(3, 0)] ^ rk[4 + c];
            assert_eq!(out[c], want);
        }
    }
}

#[test]
fn xts_doubling() {
    let mut t = [0u8; 16];
    t[15] = 0x80;
    let d = aes::xts_double(t);
    let mut want = [0u8; 16];
    want[0] = 0x87;
    assert_eq!(d, want);
    let mut one = [0u8; 16];
    one[0] = 1;
    assert_eq!(aes::xts_double(one)[0], 2);
}

#[test]
fn aes_variants_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for name in ["aes-cbc", "aes-xts"] {
        let b = build_kernel(name, Variant::Baseline).unwrap();
        let o = build_kernel(name, Variant::Ozone).unwrap();
        for _ in 0..1024 {
            let inputs = random_inputs(name, &mut rng).unwrap();
            let want = oracle_eval(name, &inputs).unwrap();
            assert_eq!(run(&b, &inputs), want, "{name} baseline");
            assert_eq!(run(&o, &inputs), want, "{name} ozone");
        }
    }
}

#[test]
fn xts_covers_both_doubling_cases() {
    let name = "aes-xts";
    let b = build_kernel(name, Variant::Baseline).unwrap();
    let o = build_kernel(name, Variant::Ozone).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut carries = [0usize; 2];
    for _ in 0..64 {
        let inputs = random_inputs(name, &mut rng).unwrap();
        let want = oracle_eval(name, &inputs).unwrap();
        assert_eq!(run(&b, &inputs), want);
        assert_eq!(run(&o, &inputs), want);
        // the encrypted tweak's top bit decides the reduction
        let k2 = aes::words_to_block(inputs[2], inputs[3]);
        let tw = encrypt_with_tables(&k2, &aes::words_to_block(inputs[4], inputs[5]));
        carries[(tw[15] >> 7) as usize] += 1;
    }
    assert!(carries[0] > 0 && carries[1] > 0);
}

#[test]
fn keymap_exhaustive() {
    let b = build_kernel("gdk-keymap", Variant::Baseline).unwrap();
    let o = build_kernel("gdk-keymap", Variant::Ozone).unwrap();
    let t = keymap::table();
    assert_eq!(t.len(), 784);
    assert_eq!(t[0].0, 0);
    assert!(t.windows(2).all(|w| w[0].0 < w[1].0));
    assert_eq!(oracle_eval("gdk-keymap", &[0]).unwrap(), vec![t[0].1 as u64]);
    for (k, u) in t.iter() {
        let want = vec![*u as u64];
        assert_eq!(oracle_eval("gdk-keymap", &[*k as u64]).unwrap(), want);
        assert_eq!(run(&b, &[*k as u64]), want);
        assert_eq!(run(&o, &[*k as u64]), want);
    }
    // codes between and beyond table keys map to nothing
    for code in [t[5].0 as u64 + 1, t[783].0 as u64 + 1, u32::MAX as u64, 1 << 40] {
        if t.iter().any(|e| e.0 as u64 == code) {
            continue;
        }
        assert_eq!(run(&b, &[code]), vec![0]);
        assert_eq!(run(&o, &[code]), vec![0]);
    }
}

#[test]
fn sha512_every_length() {
    let b = build_kernel("sha512", Variant::Baseline).unwrap();
    let o = build_kernel("sha512", Variant::Ozone).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for len in 1..=128u64 {
        let mut inputs: Vec<u64> = (0..16).map(|_| rng.random()).collect();
        inputs.push(len);
        let want = oracle_eval("sha512", &inputs).unwrap();
        assert_eq!(run(&b, &inputs), want, "baseline len {len}");
        assert_eq!(run(&o, &inputs), want, "ozone len {len}");
    }
}

#[test]
fn sha512_known_digest() {
    // "abc"
    let mut inputs = vec![0u64; 17];
    inputs[0] = 0x6162_6300_0000_0000;
    inputs[16] = 3;
    let d = oracle_eval("sha512", &inputs).unwrap();
    assert_eq!(d[0], 0xddaf35a193617aba);
    assert_eq!(d[7], 0x2a9ac94fa54ca49f);
    let o = build_kernel("sha512", Variant::Ozone).unwrap();
    assert_eq!(run(&o, &inputs), d);
}

#[test]
fn rsa_oracle_against_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let n = (rng.random_range(3u64..1 << 16)) | 1;
        let base = rng.random_range(0..n);
        let exp = rng.random_range(0u64..4096);
        let mut want = 1 % n;
        for _ in 0..exp {
            want = want * base % n;
        }
        assert_eq!(rsa::modexp(base, exp, n), want);
    }
}

#[test]
fn rsa_kernel_matches_oracle() {
    let b = build_kernel("rsa-modexp", Variant::Baseline).unwrap();
    let o = build_kernel("rsa-modexp", Variant::Ozone).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cases: Vec<Vec<u64>> = (0..48).map(|_| random_inputs("rsa-modexp", &mut rng).unwrap()).collect();
    for _ in 0..48 {
        let n = rng.random_range(3u64..1 << 16) | 1;
        cases.push(vec![rng.random_range(0..n), rng.random(), n]);
    }
    cases.push(vec![0, 0, 3]);
    cases.push(vec![2, 0, u64::MAX]);
    cases.push(vec![u64::MAX - 1, u64::MAX, u64::MAX]);
    cases.push(vec![5, 1 << 63, (1 << 63) + 1]);
    for inputs in cases {
        let want = oracle_eval("rsa-modexp", &inputs).unwrap();
        assert_eq!(run(&b, &inputs), want, "{inputs:?}");
        assert_eq!(run(&o, &inputs), want, "{inputs:?}");
    }
}

#[test]
fn inputs_are_checked() {
    assert!(matches!(oracle_eval("des", &[]), Err(KernelError::Unknown(_))));
    assert!(check_inputs("aes-cbc", &[0; 5]).is_err());
    let mut sha = vec![0u64; 17];
    assert!(check_inputs("sha512", &sha).is_err());
    sha[16] = 129;
    assert!(check_inputs("sha512", &sha).is_err());
    sha[16] = 128;
    assert!(check_inputs("sha512", &sha).is_ok());
    assert!(check_inputs("rsa-modexp", &[1, 1, 10]).is_err());
    assert!(check_inputs("rsa-modexp", &[11, 1, 11]).is_err());
    assert!(check_inputs("rsa-modexp", &[10, 1, 11]).is_ok());
    assert!(build_kernel("nope", Variant::Ozone).is_err());
}

#[test]
fn ozone_variants_pass_the_verifier() {
    for e in catalog().entries() {
        let rep = verify(&e.ozone, &e.layout);
        assert!(rep.passed(), "{}:\n{}", e.name, rep.summary());
        let fp = footprint(&e.ozone).unwrap();
        assert!(fp.code_bytes <= e.layout.ispm.size, "{}", e.name);
        assert!(fp.max_stack <= e.layout.stack.size, "{}", e.name);
        // baselines are not expected to pass
        assert!(!verify(&e.baseline, &e.layout).passed(), "{}", e.name);
    }
}

#[test]
fn baselines_fail_control_rules_where_they_branch() {
    for name in ["aes-xts", "gdk-keymap", "rsa-modexp", "sha512"] {
        let b = build_kernel(name, Variant::Baseline).unwrap();
        assert!(!verify_control(&b).passed(), "{name}");
    }
    assert!(verify_control(&build_kernel("aes-cbc", Variant::Baseline).unwrap()).passed());
}

#[test]
fn ozone_traces_are_fixed() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for e in catalog().entries() {
        let samples: Vec<Vec<u64>> = (0..8).map(|_| random_inputs(e.name, &mut rng).unwrap()).collect();
        let rep = verify_fixed_trace(&e.ozone, &samples);
        assert!(rep.passed(), "{}:\n{}", e.name, rep.summary());
    }
}

#[test]
fn ozone_cycle_counts_do_not_vary() {
    let cfg = MicroarchConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for e in catalog().entries() {
        let prog = Compiled::new(&e.ozone).unwrap();
        let counts: Vec<u64> = (0..16)
            .map(|_| {
                let i = random_inputs(e.name, &mut rng).unwrap();
                measure_cycles_compiled(&prog, &i, &cfg).unwrap()
            })
            .collect();
        assert!(counts.iter().all(|c| *c == counts[0]), "{}: {counts:?}", e.name);
    }
}

#[test]
fn keymap_cycles_identical_for_all_codes() {
    let cfg = MicroarchConfig::default();
    let prog = Compiled::new(&build_kernel("gdk-keymap", Variant::Ozone).unwrap()).unwrap();
    let counts: std::collections::BTreeSet<u64> = keymap::table()
        .iter()
        .map(|(k, _)| measure_cycles_compiled(&prog, &[*k as u64], &cfg).unwrap())
        .collect();
    assert_eq!(counts.len(), 1);
}

#[test]
fn rsa_is_the_longest_kernel() {
    let cfg = MicroarchConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts = Vec::new();
    for name in KERNEL_NAMES {
        let p = build_kernel(name, Variant::Ozone).unwrap();
        let i = random_inputs(name, &mut rng).unwrap();
        counts.push((ozone_core::microsim::measure_cycles(&p, &i, &cfg).unwrap(), name));
    }
    counts.sort();
    assert_eq!(counts.last().unwrap().1, "rsa-modexp", "{counts:?}");
}

#[test]
fn baseline_aes_timing_depends_on_plaintext() {
    let cfg = MicroarchConfig::default();
    let p = build_kernel("aes-cbc", Variant::Baseline).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let key: [u8; 16] = rng.random();
    let counts: std::collections::BTreeSet<u64> = (0..=255u8)
        .map(|v| {
            let i = sweep_inputs("aes-cbc", &key, 0, v, &mut rng).unwrap();
            simulate_baseline(&p, &i, &cfg, true).unwrap().cycles
        })
        .collect();
    assert!(counts.len() > 1);
}

#[test]
fn sweep_inputs_set_the_byte() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let key = [7u8; 16];
    for idx in 0..16 {
        let i = sweep_inputs("aes-cbc", &key, idx, 0xa5, &mut rng).unwrap();
        let pt = aes::words_to_block(i[4], i[5]);
        assert_eq!(pt[idx], 0xa5);
        assert_eq!(aes::words_to_block(i[0], i[1]), key);
    }
    for e in catalog().entries() {
        for v in [0u8, 255] {
            let i = sweep_inputs(e.name, &key, e.sweep_bytes - 1, v, &mut rng).unwrap();
            check_inputs(e.name, &i).unwrap();
        }
        assert!(sweep_inputs(e.name, &key, e.sweep_bytes, 0, &mut rng).is_err());
    }
}

#[test]
fn shipped_ir_files_are_current() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../kernels");
    for name in KERNEL_NAMES {
        for v in [Variant::Baseline, Variant::Ozone] {
            let path = dir.join(format!("{name}.{}.ir", v.name()));
            let text = std::fs::read_to_string(&path)
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            let want = print_program(&build_kernel(name, v).unwrap());
            assert!(text == want, "{} is stale; regenerate with `ozone kernels`", path.display());
        }
    }
}

#[test]
fn footprint_reports_recursion() {
    let p = ozone_core::ir::parse_program(
        ".entry f\nfunc f() {\nentry:\n  call f()\n  ret\n}\n",
    )
    .unwrap();
    assert!(footprint(&p).is_err());
    let e = ozone_core::ir::parse_program(".entry f\nfunc f() {\nentry:\n  ret\n}\n").unwrap();
    let fp = footprint(&e).unwrap();
    assert_eq!((fp.code_bytes, fp.data_bytes), (4, 0));
    assert_eq!(fp.max_stack, ozone_core::kernels::FRAME_OVERHEAD);
}
