use kac_ldp::kac::rate_bounds;
use kac_ldp::kernel::KacKernel;
use kac_ldp::tubelet::{
    move_away, tube_event_ln_prob, DiscretizedPath, SafetyCase, SurgeryScales, TubeEvent, TubeModel,
};

const BETA: f64 = 1.5;
const SITES: usize = 40;
const QUANTUM: f64 = 0.05;
const DELTA: f64 = 0.025;
const DELTA_PRIME: f64 = 0.1;
const DT: f64 = 1.0;
const BLOCK: f64 = 0.5;

fn single_block() -> TubeModel {
    TubeModel::new(KacKernel::default_profile(), -0.25, BLOCK, 1, SITES, BETA).unwrap()
}

fn ln_nu(model: &TubeModel, a: &DiscretizedPath) -> f64 {
    let rates = model.deterministic_rates(a, 0, 1).unwrap();
    let ev = TubeEvent {
        start: Some(a.values[0][0]),
        ..TubeEvent::new(a.slope(0, 1), DELTA)
    };
    tube_event_ln_prob(&rates, &ev).unwrap()
}

fn scales(model: &TubeModel) -> SurgeryScales {
    SurgeryScales {
        sites: SITES,
        dt: DT,
        alpha: 0.1,
        beta: BETA,
        block_length: BLOCK,
        c_min: rate_bounds(BETA, model.profile().sup_norm()).0,
    }
}

fn check(from: f64, to: f64, expected: SafetyCase) {
    let model = single_block();
    let a = DiscretizedPath::new(QUANTUM, DT, vec![vec![from], vec![to]]).unwrap();
    let out = move_away(&a, DELTA_PRIME).unwrap();
    assert_eq!(out.cases[0][0], Some(expected), "{from} -> {to}");
    for row in &out.path.values {
        assert!(1.0 - row[0].abs() >= DELTA_PRIME - 1e-12);
    }
    let la = ln_nu(&model, &a);
    let lb = ln_nu(&model, &out.path);
    assert!(lb.is_finite(), "moved path has an empty tube");
    let m = expected.exponent(DELTA_PRIME, &scales(&model));
    assert!(la - lb <= m, "{expected:?}: ln ratio {} vs exponent {m}", la - lb);
}

#[test]
fn single_block_kernel_is_trivial() {
    assert!((single_block().kernel_matrix[(0, 0)] - 1.0).abs() < 1e-12);
}

#[test]
fn ratio_bounded_inside_the_zone() {
    check(0.95, 0.95, SafetyCase::Inside);
    check(-0.95, -0.95, SafetyCase::Inside);
    check(1.0, 0.95, SafetyCase::Inside);
}

#[test]
fn ratio_bounded_when_entering() {
    check(0.85, 0.95, SafetyCase::Enters);
    check(-0.85, -0.95, SafetyCase::Enters);
    check(0.9, 1.0, SafetyCase::Enters);
}

#[test]
fn ratio_bounded_when_exiting() {
    check(0.95, 0.85, SafetyCase::Exits);
    check(-0.95, -0.85, SafetyCase::Exits);
    check(1.0, 0.9, SafetyCase::Exits);
}

#[test]
fn exponents_are_ordered_by_case() {
    let s = scales(&single_block());
    let inside = SafetyCase::Inside.exponent(DELTA_PRIME, &s);
    assert!(inside > 0.0);
    assert!(SafetyCase::Exits.exponent(DELTA_PRIME, &s) > inside);
    assert!(SafetyCase::Enters.exponent(DELTA_PRIME, &s) > 0.0);
}
