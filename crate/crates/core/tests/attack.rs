use ozone_core::attack::{
    leakage_metric, leakage_of, profile_kernel, recover_full_key, recover_key_byte, AttackError,
    AttackSetup, LeakageReport, Profile, TimingProfile,
};
use ozone_core::kernels::KERNEL_NAMES;
use ozone_core::microsim::{MicroarchConfig, Mode, SimResult};
use proptest::prelude::*;

fn synthetic(f: &[f64], key: u8, byte_index: usize) -> Profile {
    TimingProfile {
        kernel: "aes-cbc".into(),
        mode: Mode::Baseline,
        byte_index,
        trials: 1,
        means: (0..256).map(|n| f[n ^ key as usize]).collect(),
        raw_min: 0,
        raw_max: 1,
    }
}

#[test]
fn leakage_examples() {
    let same: LeakageReport<f64> = leakage_of(&[100, 100, 100]);
    assert_eq!(same.spread, 0.0);
    assert_eq!(same.variance, 0.0);
    assert!(same.zero_leakage);
    let two: LeakageReport<f32> = leakage_of(&[100, 101]);
    assert_eq!(two.spread, 1.0);
    assert_eq!(two.variance, 0.25);
    assert!(!two.zero_leakage);
    let rs: Vec<SimResult> = [7u64, 9, 11]
        .iter()
        .map(|c| SimResult {
            cycles: *c,
            ..SimResult::default()
        })
        .collect();
    let r = leakage_metric(&rs);
    assert_eq!(r.samples, 3);
    assert_eq!(r.spread, 4.0);
    assert!((r.variance - 8.0 / 3.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn zero_leakage_iff_all_equal(cycles in prop::collection::vec(0u64..50, 2..40)) {
        let r: LeakageReport<f64> = leakage_of(&cycles);
        prop_assert_eq!(r.zero_leakage, cycles.iter().all(|c| *c == cycles[0]));
        prop_assert_eq!(r.zero_leakage, r.spread == 0.0);
        prop_assert!(r.variance >= 0.0);
    }

    #[test]
    fn xor_shift_recovery_is_reference_invariant(
        f in prop::collection::vec(0.0f64..1000.0, 256),
        k1 in any::<u8>(),
        k2 in any::<u8>(),
        kt in any::<u8>(),
    ) {
        let t = synthetic(&f, kt, 3);
        let r1 = recover_key_byte(&synthetic(&f, k1, 3), k1, &t).unwrap();
        let r2 = recover_key_byte(&synthetic(&f, k2, 3), k2, &t).unwrap();
        prop_assert_eq!(r1.best(), r2.best());
        // a unique maximum pins the key exactly
        let m = f.iter().cloned().fold(f64::MIN, f64::max);
        if f.iter().filter(|x| **x == m).count() == 1 {
            prop_assert_eq!(r1.best(), kt);
            prop_assert_eq!(r1.rank_of(kt), 0);
        }
        let mut sorted = r1.ranking.clone();
        sorted.sort();
        prop_assert_eq!(sorted, (0..=255u8).collect::<Vec<_>>());
    }
}

#[test]
fn argmax_ties_go_to_the_lowest_value() {
    let mut f = vec![1.0; 256];
    f[7] = 5.0;
    f[3] = 5.0;
    let r = synthetic(&f, 0, 0);
    assert_eq!(r.argmax(), 3);
    let t = synthetic(&f, 0, 0);
    assert_eq!(recover_key_byte(&r, 0x40, &t).unwrap().best(), 0x40);
}

#[test]
fn correlation_orders_the_rest() {
    // a smooth bump around 0x80 so neighbours in XOR distance correlate
    let f: Vec<f64> = (0..256).map(|i| -((i as f64) - 128.0).abs()).collect();
    let r = synthetic(&f, 0x11, 0);
    let t = synthetic(&f, 0x22, 0);
    let rk = recover_key_byte(&r, 0x11, &t).unwrap();
    assert_eq!(rk.best(), 0x22);
    assert_eq!(rk.ranking[1], 0x23);
}

#[test]
fn flat_or_mismatched_profiles_are_rejected() {
    let flat = synthetic(&[3.0; 256], 0, 0);
    let f: Vec<f64> = (0..256).map(|i| i as f64).collect();
    let live = synthetic(&f, 0, 0);
    assert_eq!(recover_key_byte(&flat, 0, &live), Err(AttackError::NoSignal));
    assert_eq!(recover_key_byte(&live, 0, &flat), Err(AttackError::NoSignal));
    let other = synthetic(&f, 0, 1);
    assert!(matches!(recover_key_byte(&live, 0, &other), Err(AttackError::Mismatch(_))));
}

#[test]
fn ozone_profiles_are_flat_for_every_kernel() {
    let cfg = MicroarchConfig::default();
    let key = [0x2bu8; 16];
    for name in KERNEL_NAMES {
        let p = profile_kernel(name, Mode::Ozone, &key, 0, 2, &cfg, 5).unwrap();
        assert!(p.is_flat(), "{name}");
        assert!(p.means.iter().all(|m| *m == p.means[0]), "{name}");
        assert_eq!(p.spread(), 0.0);
        assert_eq!(recover_key_byte(&p, key[0], &p), Err(AttackError::NoSignal));
    }
}

#[test]
fn baseline_aes_profile_has_spread() {
    let cfg = MicroarchConfig::default();
    let key: [u8; 16] = core::array::from_fn(|i| (i * 37) as u8);
    let p = profile_kernel("aes-cbc", Mode::Baseline, &key, 0, 64, &cfg, 1).unwrap();
    assert_eq!(p.means.len(), 256);
    assert!(p.spread() > 0.0);
    assert!(!p.is_flat());
    // same key as reference and target
    assert_eq!(recover_key_byte(&p, key[0], &p).unwrap().best(), key[0]);
}

#[test]
fn profiles_are_reproducible() {
    let cfg = MicroarchConfig::default();
    let key = [9u8; 16];
    let a = profile_kernel("aes-xts", Mode::Baseline, &key, 4, 1, &cfg, 77).unwrap();
    let b = profile_kernel("aes-xts", Mode::Baseline, &key, 4, 1, &cfg, 77).unwrap();
    assert_eq!(a, b);
    let c = profile_kernel("aes-xts", Mode::Baseline, &key, 4, 1, &cfg, 78).unwrap();
    assert_ne!(a.means, c.means);
}

#[test]
fn profile_rejects_bad_requests() {
    let cfg = MicroarchConfig::default();
    let key = [0u8; 16];
    assert_eq!(
        profile_kernel("aes-cbc", Mode::Baseline, &key, 0, 0, &cfg, 0),
        Err(AttackError::NoTrials)
    );
    assert!(matches!(
        profile_kernel("aes-cbc", Mode::Baseline, &key, 16, 1, &cfg, 0),
        Err(AttackError::Kernel(_))
    ));
    assert!(profile_kernel("des", Mode::Baseline, &key, 0, 1, &cfg, 0).is_err());
}

#[test]
fn full_key_on_ozone_is_all_no_signal() {
    let cfg = MicroarchConfig::default();
    let setup = AttackSetup {
        kernel: "aes-cbc",
        mode: Mode::Ozone,
        cfg: &cfg,
        trials: 1,
        seed: 3,
    };
    let r = recover_full_key(&setup, &[1; 16], &[2; 16]).unwrap();
    assert_eq!(r.positions.len(), 16);
    assert!(r.all_no_signal());
    assert!(r.best_guess().iter().all(|g| g.is_none()));
}

#[test]
fn full_key_report_is_well_formed_with_one_trial() {
    let cfg = MicroarchConfig::default();
    let setup = AttackSetup {
        kernel: "aes-cbc",
        mode: Mode::Baseline,
        cfg: &cfg,
        trials: 1,
        seed: 4,
    };
    let kt: [u8; 16] = core::array::from_fn(|i| (i * 11 + 5) as u8);
    let r = recover_full_key(&setup, &[0; 16], &kt).unwrap();
    for (i, p) in r.positions.iter().enumerate() {
        assert_eq!(p.byte_index, i);
        assert_eq!(p.true_byte, kt[i]);
        let rk = p.outcome.as_ref().unwrap();
        let mut s = rk.ranking.clone();
        s.sort();
        assert_eq!(s, (0..=255u8).collect::<Vec<_>>());
        assert!(p.rank().unwrap() < 256);
    }
}
