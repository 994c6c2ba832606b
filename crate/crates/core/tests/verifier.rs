mod common;

use common::Shape;
use ozone_core::ifconv::convert_program;
use ozone_core::ir::{interpret, parse_program, Program, Region};
use ozone_core::verifier::{
    verify_control, verify_fixed_trace, verify_memory, LayoutError, Rule, SpmLayout,
};
use proptest::prelude::*;

fn load(name: &str) -> Program {
    let path = format!("{}/tests/data/{name}", env!("CARGO_MANIFEST_DIR"));
    parse_program(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn spm(src: &str) -> Program {
    let head = ".code 0x10000000\n.stack 0x2000e000 0x2000\n";
    parse_program(&format!("{head}{src}")).unwrap()
}

fn rules(r: &ozone_core::verifier::VerifyReport) -> Vec<Rule> {
    r.violations.iter().map(|v| v.rule).collect()
}

#[test]
fn layout_invariants() {
    let d = SpmLayout::default();
    assert_eq!(d.ispm.size, 32 * 1024);
    assert_eq!(d.dspm.size, 64 * 1024);
    assert!(d.dspm.contains_region(&d.stack));
    assert!(matches!(
        SpmLayout::with_sizes(3000, 0x4000, 0x1000),
        Err(LayoutError::NotPowerOfTwo("ispm", 3000))
    ));
    assert!(matches!(
        SpmLayout::new(
            Region::new(0x1000, 0x1000),
            Region::new(0x1800, 0x1000),
            Region::new(0x1800, 0x100)
        ),
        Err(LayoutError::Overlap)
    ));
    assert!(matches!(
        SpmLayout::new(
            Region::new(0x1000, 0x1000),
            Region::new(0x4000, 0x1000),
            Region::new(0x8000, 0x100)
        ),
        Err(LayoutError::StackOutside)
    ));
}

#[test]
fn listing2_passes_listing1_fails_c1() {
    assert!(verify_control(&load("listing2.ir")).passed());
    let r = verify_control(&load("listing1.ir"));
    assert_eq!(rules(&r), vec![Rule::C1]);
    assert_eq!(r.violations[0].block.as_deref(), Some("entry"));
}

#[test]
fn dynamic_trip_count_fails_c2() {
    let p = spm(".entry f\nfunc f(%r0) {\nentry:\n  br l\nl:\n  loop l, e trips=dyn(%r0)\ne:\n  ret\n}\n");
    assert_eq!(rules(&verify_control(&p)), vec![Rule::C2]);
    let p = spm(".entry f\nfunc f(%r0) {\nentry:\n  br l\nl:\n  loop l, e trips=8\ne:\n  ret\n}\n");
    assert!(verify_control(&p).passed());
}

#[test]
fn early_exit_fails_c3() {
    let p = spm("\
.entry f
func f(%r0) {
entry:
  br body
body:
  %r0 = add %r0, 1
  cbr %r0, latch, out
latch:
  loop body, done trips=4
done:
  ret %r0
out:
  ret 0
}
");
    let r = verify_control(&p);
    assert!(r.has(Rule::C1));
    assert!(r.has(Rule::C3));
}

#[test]
fn nested_fixed_loops_pass() {
    let p = spm("\
.entry f
func f() {
entry:
  %r0 = const 0
  br outer
outer:
  br inner
inner:
  %r0 = add %r0, 1
  loop inner, latch trips=4
latch:
  loop outer, done trips=3
done:
  ret %r0
}
");
    assert!(verify_control(&p).passed());
}

#[test]
fn callee_control_is_checked() {
    let p = spm("\
.entry main
func main(%r0) {
entry:
  %r1 = call g(%r0)
  ret %r1
}
func g(%r0) {
entry:
  cbr %r0, a, b
a:
  br b
b:
  ret %r0
}
");
    let r = verify_control(&p);
    assert_eq!(r.violations[0].func, "g");
}

#[test]
fn main_tag_fails_m1() {
    let p = spm(".entry f\n.data b 0x20000000 8\nfunc f() {\nentry:\n  store.main.64 @b, 1\n  ret\n}\n");
    assert_eq!(rules(&verify_memory(&p, &SpmLayout::default())), vec![Rule::M1]);
}

#[test]
fn table_straddling_dspm_end_fails_m2() {
    let layout = SpmLayout::with_sizes(0x4000, 0x4000, 0x1000).unwrap();
    let tab = "00".repeat(32);
    let src = |addr: u64| {
        format!(
            ".entry f\n.code 0x10000000\n.stack 0x20002000 0x1000\n.rodata t {addr:#x} {tab}\nfunc f() {{\nentry:\n  %r0 = load.spm.8 @t\n  ret %r0\n}}\n"
        )
    };
    let inside = parse_program(&src(0x2000_0000)).unwrap();
    assert!(verify_memory(&inside, &layout).passed());
    let on_stack = parse_program(&src(0x2000_3000)).unwrap();
    assert!(verify_memory(&on_stack, &layout).has(Rule::M2));
    let straddle = parse_program(&src(0x2000_3ff0)).unwrap();
    let r = verify_memory(&straddle, &layout);
    assert!(r.has(Rule::M2));
    assert!(r.violations.iter().any(|v| v.message.contains("not inside")));
}

#[test]
fn code_outside_ispm_fails_m3() {
    let p = parse_program(".entry f\n.stack 0x2000e000 0x2000\nfunc f() {\nentry:\n  ret\n}\n").unwrap();
    assert_eq!(rules(&verify_memory(&p, &SpmLayout::default())), vec![Rule::M3]);
    let tiny = SpmLayout::with_sizes(4, 0x1_0000, 0x2000).unwrap();
    let q = spm(".entry f\nfunc f() {\nentry:\n  %r0 = const 1\n  ret %r0\n}\n");
    let r = verify_memory(&q, &tiny);
    assert!(r.has(Rule::M3));
    assert!(r.violations[0].message.contains("exceeds"));
}

#[test]
fn recursion_fails_m4() {
    let p = spm(".entry f\nfunc f(%r0) {\nentry:\n  %r1 = call f(%r0)\n  ret %r1\n}\n");
    assert!(verify_memory(&p, &SpmLayout::default()).has(Rule::M4));
}

#[test]
fn unmasked_address_fails_m5() {
    let src = |mask: &str| {
        format!(
            ".entry f\n.rodata t 0x20000000 {}\nfunc f(%r0) {{\nentry:\n  %r1 = {mask}\n  %r2 = add @t, %r1\n  %r3 = load.spm.8 %r2\n  ret %r3\n}}\n",
            "ab".repeat(256)
        )
    };
    let masked = spm(&src("and %r0, 255"));
    assert!(verify_memory(&masked, &SpmLayout::default()).passed());
    let unmasked = spm(&src("const %r0"));
    assert_eq!(
        rules(&verify_memory(&unmasked, &SpmLayout::default())),
        vec![Rule::M5]
    );
}

#[test]
fn loop_carried_addresses_are_widened() {
    let p = spm("\
.entry f
.data b 0x20000000 64
func f() {
entry:
  %r0 = const @b
  br l
l:
  store.spm.8 %r0, 1
  %r0 = add %r0, 1
  loop l, e trips=64
e:
  ret
}
");
    assert!(verify_memory(&p, &SpmLayout::default()).has(Rule::M5));
    let q = spm("\
.entry f
.data b 0x20000000 64
func f() {
entry:
  %r0 = const 0
  br l
l:
  %r1 = and %r0, 63
  %r2 = add @b, %r1
  store.spm.8 %r2, 1
  %r0 = add %r0, 1
  loop l, e trips=64
e:
  ret
}
");
    assert!(verify_memory(&q, &SpmLayout::default()).passed());
}

#[test]
fn fixed_trace_passes_for_converted_listing() {
    let p = load("listing2.ir");
    let samples: Vec<Vec<u64>> = (0..16).map(|i| vec![i % 3, i * 7, i + 1]).collect();
    let r = verify_fixed_trace(&p, &samples);
    assert!(r.passed());
    assert!(r.warnings.is_empty());
    let r = verify_fixed_trace(&load("listing1.ir"), &samples);
    assert_eq!(rules(&r), vec![Rule::T1]);
}

#[test]
fn input_dependent_load_is_a_warning() {
    let p = spm(&format!(
        ".entry f\n.rodata t 0x20000000 {}\nfunc f(%r0) {{\nentry:\n  %r1 = and %r0, 255\n  %r2 = add @t, %r1\n  %r3 = load.spm.8 %r2\n  ret %r3\n}}\n",
        "01".repeat(256)
    ));
    let r = verify_fixed_trace(&p, &[vec![0], vec![1], vec![2]]);
    assert!(r.passed());
    assert_eq!(r.warnings.len(), 1);
    assert_eq!(r.warnings[0].rule, Rule::W1);
}

#[test]
fn select_derived_store_address_fails_t2() {
    let p = spm("\
.entry f
.data b 0x20000000 16
func f(%r0) {
entry:
  %r1 = add @b, 8
  %r2 = select %r0, @b, %r1
  store.spm.64 %r2, 5
  ret
}
");
    let r = verify_fixed_trace(&p, &[vec![0], vec![1]]);
    assert_eq!(rules(&r), vec![Rule::T2]);
    let r = verify_fixed_trace(&p, &[vec![1], vec![2]]);
    assert!(r.passed());
}

#[test]
fn equal_samples_hide_dynamic_trip_counts() {
    let p = spm(".entry f\nfunc f(%r0) {\nentry:\n  br l\nl:\n  loop l, e trips=dyn(%r0)\ne:\n  ret\n}\n");
    assert!(verify_fixed_trace(&p, &[vec![5], vec![5]]).passed());
    assert!(!verify_fixed_trace(&p, &[vec![5], vec![6]]).passed());
    assert!(!verify_control(&p).passed());
}

#[test]
fn execution_errors_and_sample_count() {
    let p = spm(".entry f\nfunc f(%r0) {\nentry:\n  %r1 = load.spm.8 %r0\n  ret %r1\n}\n");
    let r = verify_fixed_trace(&p, &[vec![0], vec![u64::MAX]]);
    assert!(r.has(Rule::T3));
    assert!(verify_fixed_trace(&p, &[vec![0]]).has(Rule::T3));
}

#[test]
fn report_renders_csv() {
    let r = verify_control(&load("listing1.ir"));
    let csv = r.to_csv();
    assert!(csv.starts_with("rule,severity,location,message\n"));
    assert!(csv.contains("C1,error,main:entry:1,"));
    assert!(r.summary().contains("verdict: FAIL"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn passing_programs_have_fixed_traces(
        p in common::program(Shape::FIXED),
        xs in prop::collection::vec(common::inputs(), 32),
    ) {
        prop_assert!(verify_control(&p).passed());
        let t0 = interpret(&p, &xs[0]).unwrap().trace;
        for x in &xs[1..] {
            prop_assert_eq!(&interpret(&p, x).unwrap().trace, &t0);
        }
        prop_assert!(!verify_fixed_trace(&p, &xs).has(Rule::T1));
    }

    #[test]
    fn converted_programs_pass_control(
        p in common::program(Shape::CONVERTIBLE),
        xs in prop::collection::vec(common::inputs(), 8),
    ) {
        let q = convert_program(&p).unwrap();
        prop_assert!(verify_control(&q).passed());
        // the register-spill stack model can outgrow the generator's stack
        let r = verify_memory(&q, &SpmLayout::default());
        prop_assert!(r.violations.iter().all(|v| v.rule == Rule::M4), "{}", r.summary());
        prop_assert!(!verify_fixed_trace(&q, &xs).has(Rule::T1));
    }

    #[test]
    fn injected_branch_flips_verdict(p in common::program(Shape::FIXED), at in any::<usize>()) {
        prop_assert!(verify_control(&p).passed());
        let q = common::inject_branch(&p, at);
        q.validate().unwrap();
        let r = verify_control(&q);
        prop_assert!(r.has(Rule::C1));
    }

    #[test]
    fn generated_programs_are_scratchpad_confined(p in common::program(Shape::ALL)) {
        prop_assert!(verify_memory(&p, &SpmLayout::default()).passed());
    }
}
