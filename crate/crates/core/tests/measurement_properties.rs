mod common;

use proptest::prelude::*;

use common::*;
use qtime::clock::{ClockGrid, Envelope};
use qtime::measurement::{
    build_measured_history, build_measured_history_with, joint_prob, marginal_prob, Assignments,
    Completion,
};
use qtime::oracle::DEFAULT_SUBSTEPS;

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(8)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn probabilities_match_the_kraus_chain(seed in any::<u64>()) {
        let grid = ClockGrid::new(64, 0.0, 4.0).unwrap();
        let rs = RandomSchedule::generate(&mut rng(seed), &grid.times(), 3);
        let env = Envelope::flat(&grid);
        let hist = build_measured_history(&rs.schedule(), &rs.psi0_state(), rs.t0, &env, DEFAULT_SUBSTEPS).unwrap();
        let mems = rs.memory_dims();
        for k in (0..grid.len()).step_by(3) {
            let t = grid.time(k);
            let mut total = 0.0;
            for asg in rs.strings(&mems) {
                let p = joint_prob(&hist, &asg, t).unwrap();
                prop_assert!((p - rs.chain_prob(&asg, t)).abs() < 1e-8);
                total += p;
            }
            prop_assert!((total - 1.0).abs() < 1e-10);
            for &(m, d) in &mems {
                for a in 0..d {
                    let asg = Assignments::from([(m, a)]);
                    let p = marginal_prob(&hist, &asg, t).unwrap();
                    prop_assert!((p - rs.chain_prob(&asg, t)).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn statistics_do_not_depend_on_the_dilation_completion(seed in any::<u64>()) {
        let grid = ClockGrid::new(32, 0.0, 4.0).unwrap();
        let rs = RandomSchedule::generate(&mut rng(seed), &grid.times(), 2);
        let env = Envelope::gaussian_at(&grid, 0.5, 2.0).unwrap();
        let build = |c| build_measured_history_with(&rs.schedule(), &rs.psi0_state(), rs.t0, &env, 16, c).unwrap();
        let (fwd, rev) = (build(Completion::Forward), build(Completion::Reverse));
        let mems = rs.memory_dims();
        for k in 0..grid.len() {
            let t = grid.time(k);
            for asg in rs.strings(&mems) {
                let d = joint_prob(&fwd, &asg, t).unwrap() - joint_prob(&rev, &asg, t).unwrap();
                prop_assert!(d.abs() < 1e-12);
            }
        }
    }
}
