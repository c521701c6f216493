mod common;

use common::*;
use tagcausal::backbone::BackboneKind;
use tagcausal::estimator::{Strategy, UploaderPool};

#[test]
fn composed_losses_match_finite_differences() {
    let ds = small_dataset(21);
    let pool = UploaderPool::from_dataset(&ds).unwrap();
    for kind in [BackboneKind::Nfm, BackboneKind::Lightgcn] {
        for strategy in Strategy::ALL {
            let (model, mut store) = build_model(&ds, kind, 4, 5);
            let plan = plan_for(&ds, &pool, strategy, 3, 12, 8);
            let err = fd_max_rel_error(&model, &mut store, &ds, &plan, 150, 2);
            println!("{kind} {strategy}: max rel err {err:.3e}");
            assert!(err <= 1e-4, "{kind} {strategy}: {err}");
        }
    }
}
