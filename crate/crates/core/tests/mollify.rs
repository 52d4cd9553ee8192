use kac_ldp::cost::{action, translating_path};
use kac_ldp::kernel::KacKernel;
use kac_ldp::mesoscopic::{Grid, InstantonOptions, Mesoscopic};
use kac_ldp::tubelet::mollify;

#[test]
fn mollified_translation_action_converges() {
    let dx = 0.05;
    let profile = KacKernel::default_profile();
    let meso = Mesoscopic::new(profile.as_ref(), dx, 2.0).unwrap();
    let grid = Grid::symmetric(8.0, dx).unwrap();
    let inst = meso.instanton(grid, InstantonOptions::default()).unwrap();
    let path = translating_path(&inst, 0.5, 40).unwrap();
    let base = action(&path, &meso).unwrap().total;
    assert!(base > 0.0);

    let mut prev_gap = f64::INFINITY;
    let mut prev_l1 = f64::INFINITY;
    for r in [4.0 * dx, 2.0 * dx, dx] {
        let m = mollify(&path, r).unwrap();
        assert!(m.path.values.iter().flatten().all(|v| v.abs() < 1.0));
        let gap = (action(&m.path, &meso).unwrap().total - base).abs();
        assert!(m.l1_distance < prev_l1);
        assert!(gap <= prev_gap, "radius {r}: {gap} after {prev_gap}");
        prev_gap = gap;
        prev_l1 = m.l1_distance;
    }
    assert!(prev_gap < 0.01 * base, "{prev_gap} vs {base}");
}
