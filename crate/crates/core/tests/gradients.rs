mod common;

use common::*;

#[test]
fn mi_gradient_matches_central_differences() {
    for seed in 0..10 {
        let c = mi_check(seed, true);
        assert_eq!(c.checked, FD_COMPONENTS);
        assert!(c.max_rel < FD_MAX_REL, "seed {seed}: {c:?}");
        assert!(c.max_off_support < 1e-9, "seed {seed}: {c:?}");
    }
}

#[test]
fn soft_dice_gradient_matches_central_differences() {
    for seed in 0..10 {
        let c = dice_check(seed, true);
        assert_eq!(c.checked, FD_COMPONENTS);
        assert!(c.max_rel < FD_MAX_REL, "seed {seed}: {c:?}");
        assert!(c.max_off_support < 1e-9, "seed {seed}: {c:?}");
    }
}

#[test]
fn bending_gradient_matches_central_differences() {
    for seed in 0..10 {
        let c = bending_check(seed, true);
        assert_eq!(c.checked, FD_COMPONENTS);
        assert!(c.max_rel < FD_MAX_REL, "seed {seed}: {c:?}");
        assert!(c.max_off_support < 1e-9, "seed {seed}: {c:?}");
    }
}
