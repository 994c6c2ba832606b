mod common;

use common::{Shape, Stmt};
use ozone_core::ifconv::{
    convert_program, find_hammocks, find_hammocks_in, if_convert, ConvertError, RejectReason,
};
use ozone_core::ir::{
    interpret, parse_program, print_program, structural_equal, AddrSpace, BinOp, Inst, Program,
    Terminator,
};
use proptest::prelude::*;

fn load(name: &str) -> Program {
    let path = format!("{}/tests/data/{name}", env!("CARGO_MANIFEST_DIR"));
    parse_program(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn cond_branches(p: &Program) -> usize {
    p.functions
        .iter()
        .flat_map(|f| &f.blocks)
        .filter(|b| matches!(b.term, Terminator::CondBr { .. }))
        .count()
}

fn count(p: &Program, pred: impl Fn(&Inst) -> bool) -> usize {
    p.functions
        .iter()
        .flat_map(|f| &f.blocks)
        .flat_map(|b| &b.insts)
        .filter(|i| pred(i))
        .count()
}

fn store_addresses(p: &Program, x: &[u64]) -> Vec<u64> {
    interpret(p, x)
        .unwrap()
        .accesses
        .iter()
        .filter(|a| a.store)
        .map(|a| a.addr)
        .collect()
}

#[test]
fn straight_line_has_no_hammocks() {
    let p = parse_program(
        ".entry f\nfunc f(%r0) {\nentry:\n  %r1 = add %r0, 1\n  br b\nb:\n  ret %r1\n}\n",
    )
    .unwrap();
    let r = find_hammocks(p.entry_function());
    assert!(r.hammocks.is_empty());
    assert!(r.non_convertible.is_empty());
    assert!(structural_equal(&convert_program(&p).unwrap(), &p));
}

#[test]
fn listing1_has_one_full_diamond() {
    let p = load("listing1.ir");
    let r = find_hammocks(p.entry_function());
    assert_eq!(r.hammocks.len(), 1);
    let h = &r.hammocks[0];
    assert_eq!(h.head.0, 0);
    assert_eq!(h.join.0, 3);
    assert_eq!(h.true_path.len(), 1);
    assert_eq!(h.false_path.len(), 1);
}

#[test]
fn listing3_has_empty_false_path() {
    let p = load("listing3.ir");
    let r = find_hammocks(p.entry_function());
    assert_eq!(r.hammocks.len(), 1);
    assert_eq!(r.hammocks[0].true_path.len(), 1);
    assert!(r.hammocks[0].false_path.is_empty());
}

#[test]
fn listing1_converts_to_listing2() {
    let p = load("listing1.ir");
    let q = convert_program(&p).unwrap();
    assert!(structural_equal(&q, &load("listing2.ir")), "{}", print_program(&q));
    assert_eq!(cond_branches(&q), 0);
    assert_eq!(count(&q, |i| matches!(i, Inst::Select { .. })), 1);
    assert_eq!(
        count(&q, |i| matches!(i, Inst::Bin { op: BinOp::Mul, .. })),
        3
    );
    for (x, y) in [(0, 9), (1, 45), (7, 45)] {
        assert_eq!(interpret(&q, &[x, 3, 5]).unwrap().outputs, vec![y]);
    }
}

#[test]
fn listing3_converts_to_listing4() {
    let p = load("listing3.ir");
    let q = convert_program(&p).unwrap();
    assert!(structural_equal(&q, &load("listing4.ir")), "{}", print_program(&q));
    for x in [0, 1] {
        let a = [x, 3, 5, 11];
        assert_eq!(interpret(&q, &a).unwrap().outputs, interpret(&p, &a).unwrap().outputs);
        // the store happens on both predicate values, at the same address
        assert_eq!(store_addresses(&q, &a), vec![0x2000_0000, 0x2000_0000]);
    }
}

/// Two-deep nested diamonds over one input byte, with stores and register
/// merges on every path.
fn nested_diamonds() -> Program {
    let body = vec![
        Stmt::Imm(4, 0x1111),
        Stmt::Bin(BinOp::And, 5, 0, 0),
        Stmt::If(
            0,
            vec![
                Stmt::Bin(BinOp::Shr, 1, 0, 4),
                Stmt::If(
                    1,
                    vec![Stmt::Bin(BinOp::Add, 4, 4, 0), Stmt::Store(common_w(), 2, 0)],
                    vec![Stmt::Bin(BinOp::Mul, 4, 0, 0)],
                ),
                Stmt::Table(5, 0),
            ],
            vec![
                Stmt::Bin(BinOp::Shr, 2, 0, 5),
                Stmt::If(
                    2,
                    vec![Stmt::Store(common_w(), 3, 4)],
                    vec![Stmt::Bin(BinOp::Xor, 5, 4, 0), Stmt::Store(common_w(), 3, 0)],
                ),
            ],
        ),
        Stmt::Load(common_w(), 3, 2),
    ];
    common::build(&body)
}

fn common_w() -> ozone_core::ir::Width {
    ozone_core::ir::Width::W16
}

#[test]
fn nested_diamonds_exhaustive() {
    let p = nested_diamonds();
    let r = find_hammocks(p.entry_function());
    assert_eq!(r.hammocks.len(), 3);
    assert!(r.hammocks[0].size() <= r.hammocks[2].size());
    assert!(r.hammocks[2].size() >= 4, "outer region covers the inner ones");
    let q = convert_program(&p).unwrap();
    assert_eq!(cond_branches(&q), 0);
    let trace0 = interpret(&q, &[0, 0, 0, 0]).unwrap().trace;
    for x in 0..256u64 {
        let inputs = [x, x.rotate_left(13), !x, x * 3];
        let a = interpret(&p, &inputs).unwrap();
        let b = interpret(&q, &inputs).unwrap();
        assert_eq!(a.outputs, b.outputs, "input {x}");
        assert_eq!(b.trace, trace0, "input {x}");
    }
}

#[test]
fn callee_hammocks_are_converted() {
    let src = "\
.entry main
func main(%r0) {
entry:
  %r1 = call clamp(%r0)
  ret %r1
}

func clamp(%r0) {
entry:
  %r1 = cmp-lt 100, %r0
  cbr %r1, big, done
big:
  %r0 = const 100
  br done
done:
  ret %r0
}
";
    let p = parse_program(src).unwrap();
    assert_eq!(cond_branches(&p), 1);
    let q = convert_program(&p).unwrap();
    assert_eq!(cond_branches(&q), 0);
    for x in [0, 99, 100, 101, u64::MAX] {
        assert_eq!(
            interpret(&q, &[x]).unwrap().outputs,
            vec![x.min(100)]
        );
    }
}

#[test]
fn conversion_is_idempotent() {
    let p = nested_diamonds();
    let q = convert_program(&p).unwrap();
    assert!(structural_equal(&convert_program(&q).unwrap(), &q));
    let l2 = load("listing2.ir");
    assert!(structural_equal(&convert_program(&l2).unwrap(), &l2));
}

#[test]
fn data_and_layout_are_preserved() {
    let p = load("listing3.ir");
    let q = convert_program(&p).unwrap();
    assert_eq!(p.data, q.data);
    assert_eq!(p.layout, q.layout);
}

#[test]
fn loops_inside_hammocks_are_refused() {
    let src = "\
.entry f
func f(%r0) {
entry:
  cbr %r0, body, done
body:
  %r0 = add %r0, 1
  loop body, done trips=3
done:
  ret %r0
}
";
    let p = parse_program(src).unwrap();
    let r = find_hammocks(p.entry_function());
    assert!(r.hammocks.is_empty());
    assert_eq!(r.non_convertible.len(), 1);
    assert_eq!(r.non_convertible[0].reason, RejectReason::LoopInHammock);
    match convert_program(&p) {
        Err(ConvertError::NonConvertible { func, sites }) => {
            assert_eq!(func, "f");
            assert_eq!(sites[0].label, "entry");
        }
        other => panic!("expected refusal, got {other:?}"),
    }
}

#[test]
fn early_return_is_refused() {
    let src = "\
.entry f
func f(%r0) {
entry:
  cbr %r0, out, more
out:
  ret 1
more:
  ret 2
}
";
    let p = parse_program(src).unwrap();
    let r = find_hammocks(p.entry_function());
    assert_eq!(r.non_convertible[0].reason, RejectReason::EarlyExit);
    assert!(convert_program(&p).is_err());
}

#[test]
fn impure_calls_are_refused_pure_calls_allowed() {
    let src = "\
.entry main
.data buf 0x3000 8
func main(%r0) {
entry:
  %r1 = const 0
  cbr %r0, yes, done
yes:
  %r1 = call CALLEE(%r0)
  br done
done:
  ret %r1
}

func pure(%r0) {
entry:
  %r1 = mul %r0, 3
  ret %r1
}

func writer(%r0) {
entry:
  store.spm.64 @buf, %r0
  ret %r0
}
";
    let pure = parse_program(&src.replace("CALLEE", "pure")).unwrap();
    let q = convert_program(&pure).unwrap();
    assert_eq!(cond_branches(&q), 0);
    assert_eq!(interpret(&q, &[5]).unwrap().outputs, vec![15]);
    assert_eq!(interpret(&q, &[0]).unwrap().outputs, vec![0]);
    // without program context no call is trusted
    assert!(if_convert(pure.entry_function()).is_err());
    assert_eq!(find_hammocks_in(&pure, pure.entry_function()).hammocks.len(), 1);

    let impure = parse_program(&src.replace("CALLEE", "writer")).unwrap();
    let r = find_hammocks_in(&impure, impure.entry_function());
    assert_eq!(
        r.non_convertible[0].reason,
        RejectReason::ImpureCall("writer".into())
    );
}

#[test]
fn same_address_stores_keep_source_order() {
    let src = "\
.entry f
.data y 0x3000 8
func f(%r0) {
entry:
  cbr %r0, t, e
t:
  store.spm.64 @y, 1
  store.spm.64 @y, 2
  br j
e:
  store.spm.64 @y, 3
  br j
j:
  %r1 = load.spm.64 @y
  ret %r1
}
";
    let p = parse_program(src).unwrap();
    let q = convert_program(&p).unwrap();
    assert_eq!(interpret(&q, &[1]).unwrap().outputs, vec![2]);
    assert_eq!(interpret(&q, &[0]).unwrap().outputs, vec![3]);
    assert_eq!(
        count(&q, |i| matches!(i, Inst::Store { space: AddrSpace::Spm, .. })),
        3
    );
}

#[test]
fn predicate_register_rewritten_on_a_path() {
    // the branch condition itself is reassigned inside the region
    let src = "\
.entry f
func f(%r0, %r1) {
entry:
  cbr %r0, t, e
t:
  %r0 = add %r1, 10
  %r1 = const 1
  br j
e:
  %r1 = const 2
  br j
j:
  ret %r0, %r1
}
";
    let p = parse_program(src).unwrap();
    let q = convert_program(&p).unwrap();
    for x in [[0, 5], [1, 5], [9, 0]] {
        assert_eq!(interpret(&q, &x).unwrap().outputs, interpret(&p, &x).unwrap().outputs);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn conversion_preserves_semantics(
        p in common::program(Shape::CONVERTIBLE),
        xs in prop::collection::vec(common::inputs(), 8),
    ) {
        let q = convert_program(&p).unwrap();
        prop_assert_eq!(cond_branches(&q), 0);
        let trace0 = interpret(&q, &xs[0]).unwrap().trace;
        for x in &xs {
            let a = interpret(&p, x).unwrap();
            let b = interpret(&q, x).unwrap();
            prop_assert_eq!(&a.outputs, &b.outputs);
            prop_assert_eq!(&b.trace, &trace0);
        }
        prop_assert!(structural_equal(&convert_program(&q).unwrap(), &q));
    }

    #[test]
    fn converted_store_addresses_are_input_independent(
        p in common::program(Shape::FIXED_ADDRS),
        xs in prop::collection::vec(common::inputs(), 4),
    ) {
        let q = convert_program(&p).unwrap();
        let first = store_addresses(&q, &xs[0]);
        for x in &xs[1..] {
            prop_assert_eq!(&store_addresses(&q, x), &first);
        }
    }

    #[test]
    fn refusal_only_for_loops_in_conditionals(p in common::program(Shape::ALL)) {
        match convert_program(&p) {
            Ok(q) => prop_assert_eq!(cond_branches(&q), 0),
            Err(ConvertError::NonConvertible { sites, .. }) => {
                for s in sites {
                    prop_assert_eq!(s.reason, RejectReason::LoopInHammock);
                }
            }
            Err(e) => prop_assert!(false, "unexpected error {}", e),
        }
    }
}
