use interdelivery::bounds::{capacity_bound, default_w_range, lagrangian_bound};
use interdelivery::index::rank_top_k;
use interdelivery::jointmdp::{evaluate_policy, solve_average, JointMdp};
use interdelivery::model::{instantaneous_reward, step};
use interdelivery::sim::{run, Policy};
use interdelivery::singlearm::{renewal_index, threshold_avg_reward, SolverConfig};
use interdelivery::{
    ClientParams, DeliveryOutcome, IndexSource, IndexTable, Mode, Scenario, ScheduleDecision,
    SystemState, TieRule,
};
use proptest::prelude::*;

fn client() -> impl Strategy<Value = ClientParams> {
    (0.05f64..=1.0, 0.1f64..5.0, 0.0f64..10.0)
        .prop_map(|(p, r, t)| ClientParams::new(p, r, t).unwrap())
}

fn reliable_client() -> impl Strategy<Value = ClientParams> {
    (0.5f64..=1.0, 0.2f64..3.0, 0.0f64..6.0)
        .prop_map(|(p, r, t)| ClientParams::new(p, r, t).unwrap())
}

fn index_policy(sc: &Scenario) -> Policy {
    Policy::Index {
        tables: sc
            .clients()
            .iter()
            .map(|c| IndexTable::closed_form(*c, Mode::Average, IndexSource::Renewal, 64))
            .collect(),
        tie: TieRule::LowestIndex,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn step_resets_delivered_and_ages_the_rest(
        elapsed in prop::collection::vec(0u32..1000, 1..6),
        picks in prop::collection::vec(any::<bool>(), 6),
        hits in prop::collection::vec(any::<bool>(), 6),
    ) {
        let n = elapsed.len();
        let active: Vec<usize> = (0..n).filter(|&i| picks[i]).collect();
        let delivered: Vec<usize> = active.iter().copied().filter(|&i| hits[i]).collect();
        let state = SystemState::new(elapsed.clone());
        let next = step(
            &state,
            &ScheduleDecision::from_sorted_unchecked(active),
            &DeliveryOutcome::new(delivered.clone()),
        )
        .unwrap();
        for (i, &e) in elapsed.iter().enumerate() {
            let expected = if delivered.contains(&i) { 0 } else { e + 1 };
            prop_assert_eq!(next.elapsed[i], expected);
        }
    }

    #[test]
    fn step_rejects_deliveries_outside_active_set(elapsed in prop::collection::vec(0u32..50, 2..5)) {
        let state = SystemState::new(elapsed);
        let decision = ScheduleDecision::from_sorted_unchecked(vec![0]);
        prop_assert!(step(&state, &decision, &DeliveryOutcome::new(vec![1])).is_err());
    }

    #[test]
    fn top_k_ignores_constant_shifts(
        values in prop::collection::vec(-100f64..100.0, 1..8),
        shift in -1e3f64..1e3,
        k_frac in 0.0f64..1.0,
    ) {
        let n = values.len();
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let state = SystemState::zeros(n);
        let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        rank_top_k(&values, &state, k, TieRule::LowestIndex, &mut a);
        rank_top_k(&shifted, &state, k, TieRule::LowestIndex, &mut b);
        // Rounding in the shift can only reorder near-ties.
        let kth = {
            let mut sorted = values.clone();
            sorted.sort_by(|x, y| y.total_cmp(x));
            sorted[k - 1]
        };
        let near_tie = values.iter().filter(|v| (*v - kth).abs() < 1e-9).count() > 1;
        prop_assert!(near_tie || a == b);
        prop_assert_eq!(a.len(), k);
    }

    #[test]
    fn renewal_index_is_nondecreasing_and_is_an_indifference_point(c in client(), n in 0u32..60) {
        let w = renewal_index(n, &c);
        prop_assert!(renewal_index(n + 1, &c) >= w - 1e-9 * (1.0 + w.abs()));
        let gap = threshold_avg_reward(n, w, &c) - threshold_avg_reward(n + 1, w, &c);
        prop_assert!(gap.abs() < 1e-9 * (1.0 + w.abs()));
    }

    #[test]
    fn scenario_json_round_trips(clients in prop::collection::vec(client(), 1..5), k_frac in 0.0f64..1.0) {
        let k = 1 + ((clients.len() - 1) as f64 * k_frac) as usize;
        let sc = Scenario::new(clients, k).unwrap();
        prop_assert_eq!(Scenario::from_json(&sc.to_json()).unwrap(), sc);
    }

    #[test]
    fn reward_is_sum_of_client_rewards(elapsed in prop::collection::vec(0u32..100, 1..5)) {
        let c = ClientParams::new(0.5, 2.0, 3.0).unwrap();
        let sc = Scenario::new(vec![c; elapsed.len()], 1).unwrap();
        let state = SystemState::new(elapsed.clone());
        let expected: f64 = elapsed.iter().map(|&s| if s == 0 { 6.0 } else { -2.0 * f64::from(s) }).sum();
        prop_assert_eq!(instantaneous_reward(&state, &sc), expected);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn exact_gains_are_sandwiched(a in reliable_client(), b in reliable_client()) {
        let sc = Scenario::new(vec![a, b], 1).unwrap();
        let mdp = JointMdp::new(&sc, 30).unwrap();
        let cfg = SolverConfig::default();
        let opt = solve_average(&mdp, &cfg).unwrap().gain.unwrap();
        let policy = index_policy(&sc);
        let idx = evaluate_policy(&mdp, &policy.to_table(&mdp).unwrap(), &cfg).unwrap().gain.unwrap();
        prop_assert!(idx <= opt + 1e-8, "index {} > optimal {}", idx, opt);
        let cap = capacity_bound(&sc).unwrap();
        prop_assert!(cap.kkt_residual < 1e-8);
        prop_assert!(cap.bound >= opt - 1e-6, "capacity {} < {}", cap.bound, opt);
        let lag = lagrangian_bound(&sc, default_w_range(&sc), 10).unwrap();
        prop_assert!(lag.bound >= opt - 1e-6, "lagrangian {} < {}", lag.bound, opt);
    }

    #[test]
    fn relabeling_leaves_gain_unchanged(a in reliable_client(), b in reliable_client()) {
        let cfg = SolverConfig::default();
        let gain = |cs: Vec<ClientParams>| {
            let sc = Scenario::new(cs, 1).unwrap();
            solve_average(&JointMdp::new(&sc, 25).unwrap(), &cfg).unwrap().gain.unwrap()
        };
        let (g1, g2) = (gain(vec![a, b]), gain(vec![b, a]));
        prop_assert!((g1 - g2).abs() < 1e-8, "{} vs {}", g1, g2);
    }

    #[test]
    fn simulation_is_reproducible(a in client(), b in client(), seed in any::<u64>()) {
        let sc = Scenario::new(vec![a, b], 1).unwrap();
        let policy = index_policy(&sc);
        let x = run(&sc, &policy, 500, 2, seed).unwrap();
        let y = run(&sc, &policy, 500, 2, seed).unwrap();
        prop_assert_eq!(serde_json::to_string(&x).unwrap(), serde_json::to_string(&y).unwrap());
        for r in &x.runs {
            let gap = r.reward - r.reduced_reward(&sc, 500);
            prop_assert!(gap.abs() <= r.boundary_bound(&sc, 500) + 1e-9);
        }
    }
}
