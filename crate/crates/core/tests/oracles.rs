use std::rc::Rc;

use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use tnp_core::autodiff::{masked_softmax, AttentionLayout, Graph};
use tnp_core::harness::bo::{ConstantSurrogate, OracleSurrogate};
use tnp_core::harness::{run_bo, run_random_search, ucb_acquisition_select, BoConfig, GridFunction, Objective as BoObjective};
use tnp_core::mask::MaskSpec;
use tnp_core::model::{Model, ModelConfig, Objective, Tnp, Variant};
use tnp_core::nn::{mlp_forward, scaled_dot_attention, Activation, AttentionLayer, Mlp, ParamStore};
use tnp_core::rng;
use tnp_core::tasks::{split_context_target, ContextRule, KernelFamily, KernelSpec, TaskBatch};
use tnp_core::tensor::Tensor;
use tnp_core::train::{reward_dropout_mask, train_run, TaskSource, TrainConfig};
use tnp_core::TnpError;

#[test]
fn softmax_rows() {
    let all = MaskSpec::full(2);
    let p = masked_softmax(&Tensor::matrix(2, 2, vec![0.0, 2f64.ln(), 0.0, 0.0]), &all).unwrap();
    assert!((p.get(0, 0) - 1.0 / 3.0).abs() < 1e-15 && (p.get(0, 1) - 2.0 / 3.0).abs() < 1e-15);
    assert!((p.get(1, 0) - 0.5).abs() < 1e-15);

    let three = masked_softmax(&Tensor::matrix(3, 3, vec![0.0; 9]), &MaskSpec::full(3)).unwrap();
    assert!(three.data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));

    let m = MaskSpec::new(2, vec![true, false, true, true]).unwrap();
    let p = masked_softmax(&Tensor::matrix(2, 2, vec![1.0, 2.0, 0.0, 0.0]), &m).unwrap();
    assert_eq!(p.row(0), &[1.0, 0.0]);

    let empty = MaskSpec::unvalidated(2, vec![false, false, true, true]);
    assert!(matches!(
        masked_softmax(&Tensor::matrix(2, 2, vec![0.0; 4]), &empty),
        Err(TnpError::EmptyAttentionRow { row: 0 })
    ));
}

fn one_head_layer(d: usize) -> (AttentionLayer, ParamStore) {
    let mut store = ParamStore::new();
    let layer = AttentionLayer::new(&mut store, &mut rng::stream(1, 0), "att", d, 1).unwrap();
    (layer, store)
}

#[test]
fn self_only_mask_returns_own_value() {
    let (layer, mut store) = one_head_layer(2);
    // qkv weight: queries and keys zero, values identity; output projection identity.
    let t = store.tensors_mut();
    t[0] = Tensor::matrix(2, 6, vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    t[2] = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
    let tokens = Tensor::matrix(3, 2, vec![1.0, 2.0, -3.0, 0.5, 4.0, 4.0]);
    let eye = MaskSpec::from_fn(3, |i, j| i == j).unwrap();
    let out = scaled_dot_attention(&layer, &store, &tokens, &eye).unwrap();
    assert_eq!(out.data(), tokens.data());
}

#[test]
fn two_token_attention_by_hand() {
    let (layer, store) = one_head_layer(2);
    let tokens = Tensor::matrix(2, 2, vec![0.3, -1.1, 0.8, 0.4]);
    let out = scaled_dot_attention(&layer, &store, &tokens, &MaskSpec::full(2)).unwrap();
    let qkv = tokens.matmul(store.get(layer.qkv.weight)).unwrap();
    let wo = store.get(layer.out.weight);
    let mut attended = vec![0.0; 4];
    for i in 0..2 {
        let s: Vec<f64> = (0..2)
            .map(|j| (qkv.get(i, 0) * qkv.get(j, 2) + qkv.get(i, 1) * qkv.get(j, 3)) / 2f64.sqrt())
            .collect();
        let z = s[0].exp() + s[1].exp();
        for c in 0..2 {
            attended[i * 2 + c] = (s[0].exp() * qkv.get(0, 4 + c) + s[1].exp() * qkv.get(1, 4 + c)) / z;
        }
    }
    let want = Tensor::matrix(2, 2, attended).matmul(wo).unwrap();
    assert!(out.max_abs_diff(&want) < 1e-12);
}

#[test]
fn mlp_cases() {
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, &mut rng::stream(0, 0), "m", &[2, 2], Activation::Relu).unwrap();
    store.tensors_mut()[0] = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
    let x = Tensor::matrix(1, 2, vec![-1.0, 2.0]);
    assert_eq!(mlp_forward(&mlp, &store, &x).unwrap().data(), x.data());

    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, &mut rng::stream(0, 0), "m", &[2, 2, 1], Activation::Relu).unwrap();
    let t = store.tensors_mut();
    t[0] = Tensor::matrix(2, 2, vec![1.0, -1.0, 2.0, 1.0]);
    t[1] = Tensor::new(vec![2], vec![0.5, -4.0]).unwrap();
    t[2] = Tensor::matrix(2, 1, vec![3.0, -2.0]);
    t[3] = Tensor::new(vec![1], vec![0.25]).unwrap();
    // h = relu([1 + 2*2 + 0.5, -1 + 2 - 4]) = [5.5, 0]; out = 16.5 + 0.25
    let out = mlp_forward(&mlp, &store, &Tensor::matrix(1, 2, vec![1.0, 2.0])).unwrap();
    assert_eq!(out.data(), &[16.75]);
    assert!(Activation::parse("gelu").is_err());
}

#[test]
fn elementary_gradients() {
    let w = Tensor::matrix(1, 3, vec![0.5, -2.0, 3.0]);
    let mut g = Graph::new();
    let v = g.param(w.clone());
    let s = g.sum(v);
    assert!(g.backward(s).unwrap().get(v).data().iter().all(|&x| x == 1.0));

    let mut g = Graph::new();
    let v = g.param(w.clone());
    let sq = g.mul(v, v).unwrap();
    let s = g.sum(sq);
    let half = g.scale(s, 0.5);
    assert_eq!(g.backward(half).unwrap().get(v).data(), w.data());

    let mut g = Graph::new();
    let v = g.param(w);
    assert!(matches!(g.backward(v), Err(TnpError::NotScalar(_))));
}

#[test]
fn attention_backward_uses_layout() {
    let mut g = Graph::new();
    let qkv = g.param(Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]));
    let layout = Rc::new(AttentionLayout::single(MaskSpec::from_fn(2, |i, j| j <= i).unwrap()));
    let out = g.attention(qkv, layout, 1).unwrap();
    assert_eq!(g.value(out).get(0, 0), 0.3);
    let s = g.sum(out);
    assert!(g.backward(s).unwrap().get(qkv).all_finite());
}

#[test]
fn kernel_values() {
    let rbf = KernelSpec::new(KernelFamily::Rbf, 1.0, 1.0);
    assert!((rbf.eval(1.0) - (-0.5f64).exp()).abs() < 1e-15);
    for f in [KernelFamily::Rbf, KernelFamily::Matern52, KernelFamily::Periodic] {
        assert_eq!(KernelSpec::new(f, 0.7, 0.3).eval(0.0), 0.09);
    }
    let per = KernelSpec::new(KernelFamily::Periodic, 0.7, 0.5);
    assert!((per.eval(1.0) - 0.25).abs() < 1e-15);
}

#[test]
fn context_split_is_uniform() {
    let mut r = rng::stream(3, 0);
    for _ in 0..100 {
        assert_eq!(split_context_target(&mut r, 6, ContextRule::ONE_D).unwrap(), 3);
    }
    let mut counts = [0usize; 45];
    let draws = 100_000;
    for _ in 0..draws {
        counts[split_context_target(&mut r, 50, ContextRule::ONE_D).unwrap() - 3] += 1;
    }
    let expect = draws as f64 / 45.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    // 99th percentile of chi-square with 44 degrees of freedom.
    assert!(chi2 < 68.7, "chi2 {chi2}");
    assert!(split_context_target(&mut r, 5, ContextRule::ONE_D).is_err());
}

#[test]
fn reward_drop_fraction() {
    let b = TaskBatch::new(vec![0.0; 40_000], vec![1.0; 100_000], 1, 20_000, 20_000 - 1, 2, 5).unwrap();
    let out = reward_dropout_mask(&mut rng::stream(9, 0), &b, 0.5).unwrap();
    let hidden = out.hidden.unwrap();
    let frac = hidden.iter().filter(|&&h| h).count() as f64 / hidden.len() as f64;
    assert!(hidden.len() >= 99_990 && (0.49..=0.51).contains(&frac), "{frac}");
}

fn mini(v: Variant, seed: u64) -> Tnp {
    Tnp::new(ModelConfig::miniature(v), seed).unwrap()
}

#[test]
fn autoregressive_sampling() {
    let model = mini(Variant::Autoregressive, 4);
    let (cx, cy, tx) = (vec![-1.0, 0.2, 1.3], vec![0.5, -0.3, 0.9], vec![0.4, -0.6, 1.8]);
    let greedy = model.sample_targets_autoregressive(&cx, &cy, &tx, &mut rng::stream(0, 0), true).unwrap();
    let mut ys = vec![0.0; 3];
    for i in 0..3 {
        let t = TaskBatch::from_sets(&cx, &cy, &tx, Some(&ys), 1, 1).unwrap();
        ys[i] = model.predict_autoregressive_teacher_forced(&t).unwrap().mu[i];
    }
    assert_eq!(greedy, ys);

    let a = model.sample_targets_autoregressive(&cx, &cy, &tx, &mut rng::stream(5, 0), false).unwrap();
    let b = model.sample_targets_autoregressive(&cx, &cy, &tx, &mut rng::stream(5, 0), false).unwrap();
    assert_eq!(a, b);

    // One target: draws must follow the predicted Gaussian (Kolmogorov-Smirnov).
    let one = [0.4];
    let pred = model
        .predict_autoregressive_teacher_forced(&TaskBatch::from_sets(&cx, &cy, &one, None, 1, 1).unwrap())
        .unwrap();
    let normal = Normal::new(pred.mu[0], pred.sigma[0]).unwrap();
    let mut r = rng::stream(6, 0);
    let n = 10_000;
    let mut draws: Vec<f64> = (0..n)
        .map(|_| model.sample_targets_autoregressive(&cx, &cy, &one, &mut r, false).unwrap()[0])
        .collect();
    draws.sort_by(f64::total_cmp);
    let d = draws
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = normal.cdf(x);
            (c - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - c).abs())
        })
        .fold(0.0, f64::max);
    // Critical value for p = 0.01.
    assert!(d < 1.628 / (n as f64).sqrt(), "KS statistic {d}");
}

#[test]
fn symmetrization_cases() {
    let model = mini(Variant::Autoregressive, 7);
    let mut r = rng::stream(8, 0);
    let x: Vec<f64> = (0..6).map(|_| r.random_range(-2.0..2.0)).collect();
    let y: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();

    let single = TaskBatch::single(x[..4].to_vec(), y[..4].to_vec(), 3, 1, 1).unwrap();
    let plain = model.autoregressive_joint_log_likelihood(&single).unwrap()[0];
    for n in [1, 3, 10] {
        let s = model.symmetrized_log_likelihood(&single, n, 1).unwrap()[0];
        assert!((s - plain).abs() < 1e-12);
    }

    let three = TaskBatch::single(x.clone(), y.clone(), 3, 1, 1).unwrap();
    let eq5 = model.loss(&three, Objective::Meta).unwrap();
    let s1 = model.symmetrized_log_likelihood(&three, 1, 0).unwrap()[0];
    let tf = model.autoregressive_joint_log_likelihood(&three).unwrap()[0] / 3.0;
    assert!((-eq5 - tf).abs() < 1e-12);
    let orders: Vec<f64> = (0..10)
        .map(|s| model.symmetrized_log_likelihood(&three, 1, s).unwrap()[0])
        .collect();
    assert!(orders.contains(&s1));

    let full = model.symmetrized_log_likelihood(&three, 6, 0).unwrap()[0];
    let moved = three.permute_targets(&[2, 0, 1]).unwrap();
    let full_moved = model.symmetrized_log_likelihood(&moved, 6, 0).unwrap()[0];
    assert!((full - full_moved).abs() < 1e-9);
}

#[test]
fn autoregressive_single_target_matches_diagonal_style_loss() {
    let model = mini(Variant::Autoregressive, 2);
    let t = TaskBatch::single(vec![-1.0, 0.0, 1.0], vec![0.3, 0.1, -0.2], 2, 1, 1).unwrap();
    let p = model.predict_autoregressive_teacher_forced(&t).unwrap();
    let z = (-0.2 - p.mu[0]) / p.sigma[0];
    let nll = 0.5 * z * z + p.sigma[0].ln() + 0.5 * (2.0 * std::f64::consts::PI).ln();
    assert!((model.loss(&t, Objective::Meta).unwrap() - nll).abs() < 1e-12);
}

#[test]
fn training_contracts() {
    let mut cfg = tnp_core::tasks::GpTaskConfig::one_d(KernelFamily::Rbf);
    cfg.batch_size = 4;
    let batch = tnp_core::tasks::sample_gp_batch(&mut rng::stream(1, 0), &cfg).unwrap();
    let fixed = TaskSource::Fixed(batch.clone());
    let fresh = || Model::Tnp(mini(Variant::Diagonal, 1));
    let tc = TrainConfig {
        steps: 200,
        lr_max: 3e-3,
        log_interval: 1,
        ..TrainConfig::default()
    };

    let mut m = fresh();
    let initial = m.loss(&batch, Objective::Meta).unwrap();
    let recs = train_run(&mut m, &tc, &fixed).unwrap();
    assert!(m.loss(&batch, Objective::Meta).unwrap() < initial);
    let mut again = fresh();
    let recs2 = train_run(&mut again, &tc, &fixed).unwrap();
    assert_eq!(recs.last().unwrap().loss.to_bits(), recs2.last().unwrap().loss.to_bits());

    let mut z = fresh();
    let before = z.store().tensors().to_vec();
    assert!(train_run(&mut z, &TrainConfig { steps: 0, ..tc }, &fixed).unwrap().is_empty());
    assert_eq!(z.store().tensors(), &before[..]);
}

#[test]
fn perfect_unit_prediction_loss() {
    // A constant model whose mean matches every label with unit sigma.
    let mut m = Model::Tnp(mini(Variant::Diagonal, 0));
    for t in m.store_mut().tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let t = TaskBatch::single(vec![0.0, 1.0, 2.0], vec![0.0; 3], 1, 1, 1).unwrap();
    assert!((m.loss(&t, Objective::Meta).unwrap() - 0.918_938_533_204_672_7).abs() < 1e-12);
}

#[test]
fn bo_acquisition_and_random_search_equivalence() {
    let mut r = rng::stream(0, 0);
    let grid = GridFunction {
        lo: -1.0,
        hi: 1.0,
        values: vec![0.3, -0.2, 0.1, -0.9, 0.4],
    };
    let obj = BoObjective::Grid(grid.clone());
    let cand = grid.grid();
    let mu: Vec<f64> = cand.iter().map(|&x| grid.value(x).unwrap()).collect();
    assert_eq!(ucb_acquisition_select(&mu, &[0.0; 5], 0.0, &mut r).unwrap(), 3);
    let s = run_bo(&OracleSurrogate, &obj, &BoConfig { iterations: 1, ..Default::default() }, 3).unwrap();
    assert_eq!(s.simple_regret(), 0.0);

    // A constant surrogate picks uniformly among the candidates, as random search does.
    let k = KernelSpec::new(KernelFamily::Rbf, 0.5, 1.0);
    let cfg = BoConfig {
        iterations: 30,
        ..Default::default()
    };
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for seed in 0..10 {
        let f = BoObjective::Grid(GridFunction::sample(&mut rng::stream(seed, 1), &k, -2.0, 2.0, 1000).unwrap());
        a.extend(run_bo(&ConstantSurrogate, &f, &cfg, seed).unwrap().ys[5..].to_vec());
        b.extend(run_random_search(&f, &cfg, seed).unwrap().ys[5..].to_vec());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let sd = |v: &[f64]| (v.iter().map(|x| (x - mean(v)).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
    let se = ((sd(&a).powi(2) + sd(&b).powi(2)) / a.len() as f64).sqrt();
    assert!((mean(&a) - mean(&b)).abs() < 4.0 * se, "{} vs {}", mean(&a), mean(&b));
}

fn tnp(args: &[&str]) -> i32 {
    tnp_core::cli::cli_dispatch([&["tnp"], args].concat())
}

#[test]
fn cli_train_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "model.profile=mini\ntrain.steps=10\ntrain.log_interval=2\n").unwrap();
    let out = dir.path().join("out");
    assert_eq!(tnp(&["train", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]), 0);
    for f in ["model.tnpc", "train.jsonl", "train.manifest.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let recs = tnp_core::io::read_metrics(&out.join("train.jsonl")).unwrap();
    assert!(!recs.is_empty() && recs.iter().all(|r| r.value.is_finite()));
}

#[test]
fn cli_rejects_corrupted_model() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tnpc");
    std::fs::write(&bad, b"TNPC\x01\x00\x00\x00garbage").unwrap();
    let out = dir.path().join("out");
    assert_eq!(tnp(&["eval", "--model", bad.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]), 2);
    assert_eq!(tnp(&["eval", "--model", "/nonexistent/m.tnpc", "--out-dir", out.to_str().unwrap()]), 1);
}
