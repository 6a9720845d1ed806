use npolab::diffusion::{Condition, EpsArch, MixtureLayout};
use npolab::evalharness::{EvalReport, SweepAxes};
use npolab::guidance::cfg_combine;
use npolab::numcore::DenseTensor;
use npolab::preference::{invert_reward, reverse_pair, PreferencePair, RewardModel};
use npolab::weightalg::{compose_neg, merge_convex, project_offsets, ParamSet};
use proptest::prelude::*;

fn params(values: Vec<f64>) -> ParamSet<f64> {
    let manifest = EpsArch {
        hidden: vec![2],
        cond_embed_dim: 1,
        ..EpsArch::default()
    }
    .manifest()
    .unwrap();
    let n: usize = manifest.iter().map(|s| s.numel()).sum();
    ParamSet::new(manifest, values.into_iter().cycle().take(n).collect()).unwrap()
}

fn scores() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0f64..1.0, n),
            prop::collection::vec(0.0f64..1.0, n),
        )
    })
}

proptest! {
    #[test]
    fn swapping_arms_mirrors_the_report((a, b) in scores()) {
        let r = EvalReport::from_scores(&a, &b).unwrap();
        let s = EvalReport::from_scores(&b, &a).unwrap();
        prop_assert_eq!(s, r.swapped());
        prop_assert!((r.win_ratio + s.win_ratio - 1.0).abs() < 1e-12);
        prop_assert_eq!(r.p_value, s.p_value);
        prop_assert_eq!(r.wins + r.losses + r.ties, r.n);
    }

    #[test]
    fn self_comparison_is_a_coin_flip((a, _) in scores()) {
        let r = EvalReport::from_scores(&a, &a).unwrap();
        prop_assert_eq!(r.win_ratio, 0.5);
        prop_assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn sweep_size_is_the_grid_product(na in 0usize..5, nb in 0usize..5, nw in 0usize..4) {
        let axes = SweepAxes {
            alpha: (0..na).map(|i| i as f64 / 4.0).collect(),
            beta: (0..nb).map(|i| i as f64 / 4.0).collect(),
            gamma: vec![],
            omega: (0..nw).map(|i| 1.0 + i as f64).collect(),
        };
        prop_assert_eq!(axes.cell_count(), na.max(1) * nb.max(1) * nw.max(1));
    }

    #[test]
    fn inverted_scores_stay_in_unit_interval(x in -6.0f64..6.0, y in -6.0f64..6.0, c in 0usize..3) {
        let r = invert_reward(&RewardModel::analytic(MixtureLayout::default()));
        let s = r.score(&[x, y], Condition::Class(c)).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn inversion_reverses_every_ranking(
        p in prop::array::uniform2(-5.0f64..5.0),
        q in prop::array::uniform2(-5.0f64..5.0),
        c in 0usize..3,
    ) {
        let r = RewardModel::analytic(MixtureLayout::default());
        let i = invert_reward(&r);
        let c = Condition::Class(c);
        prop_assert_eq!(r.compare(&p, &q, c).unwrap(), i.compare(&q, &p, c).unwrap());
        // scores may collapse to a tie near 0 or 1 but never flip the wrong way
        let (sp, sq) = (r.score(&p, c).unwrap(), r.score(&q, c).unwrap());
        let (ip, iq) = (i.score(&p, c).unwrap(), i.score(&q, c).unwrap());
        prop_assert!(!(sp > sq && ip > iq) && !(sp < sq && ip < iq));
    }

    #[test]
    fn double_reversal_is_identity(
        w in prop::array::uniform2(-5.0f64..5.0),
        l in prop::array::uniform2(-5.0f64..5.0),
        c in 0usize..3,
    ) {
        let p = PreferencePair { winner: w, loser: l, condition: c };
        prop_assert_eq!(reverse_pair(&reverse_pair(&p)), p);
        prop_assert_ne!(reverse_pair(&p).winner, p.winner.map(|v| v + 1.0));
    }

    #[test]
    fn cfg_at_zero_is_the_conditional_branch(a in prop::array::uniform2(-9.0f64..9.0), b in prop::array::uniform2(-9.0f64..9.0)) {
        let ta = DenseTensor::vector(a.to_vec()).unwrap();
        let tb = DenseTensor::vector(b.to_vec()).unwrap();
        prop_assert_eq!(cfg_combine(&ta, &tb, 0.0).unwrap(), ta);
    }

    #[test]
    fn merge_matches_convex_mix(
        t in prop::collection::vec(-3.0f64..3.0, 1..8),
        e in prop::collection::vec(-3.0f64..3.0, 1..8),
        g in 0.0f64..=1.0,
    ) {
        let (theta, eta) = (params(t), params(e));
        let mixed = theta.add(&eta).unwrap().scale(g).unwrap().add(&theta.scale(1.0 - g).unwrap()).unwrap();
        prop_assert!(merge_convex(&theta, &eta, g).unwrap().max_abs_diff(&mixed).unwrap() < 1e-12);
    }

    #[test]
    fn compose_without_delta_is_a_merge(
        t in prop::collection::vec(-3.0f64..3.0, 1..8),
        e in prop::collection::vec(-3.0f64..3.0, 1..8),
        d in prop::collection::vec(-3.0f64..3.0, 1..8),
        a in 0.0f64..=1.0,
    ) {
        let (theta, eta, delta) = (params(t), params(e), params(d));
        let neg = compose_neg(&theta, &eta, &delta, a, 0.0).unwrap();
        prop_assert!(neg.max_abs_diff(&merge_convex(&theta, &eta, a).unwrap()).unwrap() < 1e-12);
    }

    #[test]
    fn projection_splits_delta(
        e in prop::collection::vec(0.1f64..3.0, 1..8),
        d in prop::collection::vec(-3.0f64..3.0, 1..8),
    ) {
        let (eta, delta) = (params(e), params(d));
        let dec = project_offsets(&eta, &delta).unwrap();
        let recon = dec.parallel.add(&dec.orthogonal).unwrap();
        prop_assert!(recon.max_abs_diff(&delta).unwrap() < 1e-10);
        let scale = eta.norm() * dec.orthogonal.norm();
        prop_assert!(eta.dot(&dec.orthogonal).unwrap().abs() <= 1e-10 * scale.max(1.0));
    }
}
