use proptest::prelude::*;
use tnp_core::harness::{run_bandit_episode, BanditPolicy};
use tnp_core::io::metrics_log::parse_metrics;
use tnp_core::io::{config_hash, write_metrics_record, KvConfig, MetricRecord};
use tnp_core::io::model_file::{model_from_bytes, model_to_bytes};
use tnp_core::mask::build_mask;
use tnp_core::metrics::check_context_invariance;
use tnp_core::model::{Model, ModelConfig, Tnp, Variant};
use tnp_core::tasks::TaskBatch;
use tnp_core::train::cosine_lr;

fn variant() -> impl Strategy<Value = Variant> {
    prop_oneof![
        Just(Variant::Diagonal),
        Just(Variant::NonDiagonal),
        Just(Variant::Autoregressive)
    ]
}

fn task(m: usize, nt: usize) -> impl Strategy<Value = TaskBatch> {
    let n = m + nt;
    (
        prop::collection::vec(-2.0..2.0f64, n),
        prop::collection::vec(-1.0..1.0f64, n),
    )
        .prop_map(move |(x, y)| TaskBatch::single(x, y, m, 1, 1).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn predictions_ignore_context_order(v in variant(), seed in 0u64..1000, t in (1usize..7, 1usize..4).prop_flat_map(|(m, nt)| task(m, nt))) {
        let model = Model::Tnp(Tnp::new(ModelConfig::miniature(v), seed).unwrap());
        let check = check_context_invariance(&model, &t, 3, 1e-9, seed).unwrap();
        prop_assert!(check.passed, "deviation {}", check.max_deviation);
    }

    #[test]
    fn model_bytes_round_trip(v in variant(), seed in 0u64..1000) {
        let model = Model::Tnp(Tnp::new(ModelConfig::miniature(v), seed).unwrap());
        let bytes = model_to_bytes(&model);
        prop_assert_eq!(model_to_bytes(&model_from_bytes(&bytes).unwrap()), bytes);
    }

    #[test]
    fn masks_have_no_empty_rows(v in variant(), m in 1usize..20, nt in 1usize..20) {
        let mask = build_mask(m + nt, m, v).unwrap();
        for i in 0..mask.len() {
            prop_assert!(mask.row(i).iter().any(|&a| a));
        }
    }

    #[test]
    fn regret_is_nonnegative(seed in 0u64..1000, delta in 0.0..1.0f64) {
        let s = run_bandit_episode(BanditPolicy::Uniform, delta, 30, 1.0, seed).unwrap();
        prop_assert!(s.instant_regret.iter().all(|&r| r >= 0.0));
        prop_assert!(s.cumulative_regret >= 0.0);
    }
}

proptest! {
    #[test]
    fn metrics_lines_round_trip(step in any::<u64>(), metric in "[a-z_]{1,12}", value in -1e12..1e12f64, seed in any::<u64>()) {
        let rec = MetricRecord::new(step, &metric, value, seed);
        let mut buf = Vec::new();
        write_metrics_record(&mut buf, &rec).unwrap();
        prop_assert_eq!(parse_metrics(std::str::from_utf8(&buf).unwrap()).unwrap(), vec![rec]);
    }

    #[test]
    fn config_hash_ignores_insertion_order(pairs in prop::collection::btree_map("[a-z]{1,6}\\.[a-z]{1,6}", "[a-z0-9]{1,6}", 1..8)) {
        let mut fwd = KvConfig::new();
        let mut rev = KvConfig::new();
        for (k, v) in &pairs {
            fwd.set(k, v);
        }
        for (k, v) in pairs.iter().rev() {
            rev.set(k, v);
        }
        prop_assert_eq!(config_hash(&fwd), config_hash(&rev));
    }

    #[test]
    fn cosine_schedule_stays_in_range(total in 1usize..10_000, frac in 0.0..1.5f64, lo in 0.0..1e-3f64, span in 0.0..1e-2f64) {
        let step = (frac * total as f64) as usize;
        let hi = lo + span;
        let lr = cosine_lr(step, total, hi, lo);
        prop_assert!(lr >= lo - 1e-15 && lr <= hi + 1e-15);
        prop_assert!(cosine_lr(step + 1, total, hi, lo) <= lr + 1e-15);
    }
}
