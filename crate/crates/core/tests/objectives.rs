#![allow(clippy::needless_range_loop)]

use emlc::autodiff::{self, Tensor};
use emlc::data::{gen_blobs, Batch, LabeledSet};
use emlc::models::{init_params, Activation, ModelSpec, StudentSpec, TeacherSpec};
use emlc::objectives::{
    adversarial_label, clean_meta_loss, corrupt_adversarial, corrupt_random, gate_bce_grad,
    gate_bce_loss, soft_ce_lower_grad, soft_ce_lower_loss, soft_ce_with_targets, teacher_ce_grad,
    teacher_ce_loss, teacher_total_loss, CorruptionStrategy, GateBce, JointLowerLoss, LossReport,
    LossWeights,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LN4: f64 = 2.0 * std::f64::consts::LN_2;

fn student() -> StudentSpec {
    StudentSpec::new(vec![2, 6, 4], Activation::Tanh).unwrap()
}

fn teacher() -> TeacherSpec {
    TeacherSpec::new(2, vec![6], 4, 3, 5, Activation::Tanh).unwrap()
}

fn batch(n: usize, seed: u64) -> Batch {
    let set = LabeledSet::new(4, gen_blobs(4, 2, n.div_ceil(4), 1.0, seed).unwrap()).unwrap();
    set.batch(&(0..n).collect::<Vec<_>>()).unwrap()
}

fn zero_segments(spec: &impl ModelSpec, params: &mut Tensor, prefix: &str) {
    for s in spec.layout().segments() {
        if s.name.starts_with(prefix) {
            for v in &mut params.data_mut()[s.range()] {
                *v = 0.0;
            }
        }
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn uniform_student_against_uniform_targets() {
    let s = student();
    let b = batch(8, 0);
    let q = Tensor::full(&[8, 4], 0.25);
    let (loss, _) = soft_ce_with_targets(&s, &Tensor::zeros(&[s.param_count()]), &b.x, &q).unwrap();
    assert!((loss - LN4).abs() < 1e-12);
    assert!(
        (clean_meta_loss(&s, &Tensor::zeros(&[s.param_count()]), &b).unwrap() - LN4).abs() < 1e-12
    );
}

#[test]
fn half_confidence_on_target_class() {
    let probe = StudentSpec::new(vec![2, 4], Activation::Tanh).unwrap();
    let mut w = Tensor::zeros(&[probe.param_count()]);
    let bias = probe.layout().segment("layer0.bias").unwrap().offset;
    w.data_mut()[bias + 2] = 3f64.ln();
    let b = batch(4, 1);
    let q = Tensor::matrix(4, 4, [0.0, 0.0, 1.0, 0.0].repeat(4)).unwrap();
    let (loss, _) = soft_ce_with_targets(&probe, &w, &b.x, &q).unwrap();
    assert!((loss - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn batch_loss_is_mean_of_singletons() {
    let (s, t) = (student(), teacher());
    let (w, a) = (init_params(&s, 1), init_params(&t, 2));
    let b = batch(2, 3);
    let pair = soft_ce_lower_loss(&s, &t, &w, &a, &b).unwrap();
    let single = |i: usize| {
        let bi = Batch {
            x: Tensor::matrix(1, 2, b.x.row(i).to_vec()).unwrap(),
            labels: vec![b.labels[i]],
        };
        soft_ce_lower_loss(&s, &t, &w, &a, &bi).unwrap()
    };
    assert!((pair - 0.5 * (single(0) + single(1))).abs() < 1e-14);
}

#[test]
fn meta_loss_is_one_hot_soft_ce() {
    let s = student();
    let w = init_params(&s, 4);
    let b = batch(12, 5);
    let mut q = Tensor::zeros(&[12, 4]);
    for (r, &y) in b.labels.iter().enumerate() {
        q.data_mut()[r * 4 + y] = 1.0;
    }
    let soft = soft_ce_with_targets(&s, &w, &b.x, &q).unwrap().0;
    assert!((soft - clean_meta_loss(&s, &w, &b).unwrap()).abs() < 1e-14);
}

#[test]
fn target_constancy_in_student_gradient() {
    let (s, t) = (student(), teacher());
    let (w, a) = (init_params(&s, 6), init_params(&t, 7));
    let b = batch(10, 8);
    let (_, detached) = soft_ce_lower_grad(&s, &t, &w, &a, &b).unwrap();
    let joint = JointLowerLoss {
        student: &s,
        teacher: &t,
        batch: &b,
    };
    let (_, g) = autodiff::grad(&joint, &[w, a]).unwrap();
    assert_eq!(g[0], detached);
}

#[test]
fn teacher_ce_ignores_gate_and_embedding() {
    let t = teacher();
    let a = init_params(&t, 9);
    let (loss, g) = teacher_ce_grad(&t, &a, &batch(16, 10)).unwrap();
    assert!(loss > 0.0);
    for (group, n) in t.layout().group_norms(&g) {
        match group.as_str() {
            "embed" | "gate" => assert_eq!(n, 0.0, "{group}"),
            _ => assert!(n > 1e-6, "{group}"),
        }
    }
    let mut uniform = a.clone();
    zero_segments(&t, &mut uniform, "classifier");
    assert!((teacher_ce_loss(&t, &uniform, &batch(16, 10)).unwrap() - LN4).abs() < 1e-12);
}

#[test]
fn random_corruption_counts() {
    let mut r = rng(0);
    let two = corrupt_random(&[1, 3], 4, &mut r).unwrap();
    assert_eq!(two.corrupted_count(), 1);
    for b in 2..20 {
        let labels: Vec<usize> = (0..b).map(|i| i % 4).collect();
        let c = corrupt_random(&labels, 4, &mut r).unwrap();
        assert_eq!(c.corrupted_count(), b / 2);
        for i in 0..b {
            if !c.corrupted[i] {
                assert_eq!(c.labels[i], labels[i]);
            }
        }
    }
    assert!(corrupt_random(&[0], 4, &mut r).is_err());
}

#[test]
fn random_corruption_is_uniform() {
    let mut r = rng(1);
    let mut counts = [0usize; 4];
    let draws = 10_000;
    for _ in 0..draws {
        let c = corrupt_random(&[0, 0], 4, &mut r).unwrap();
        let i = c.corrupted.iter().position(|&m| m).unwrap();
        counts[c.labels[i]] += 1;
    }
    let (mean, sigma) = (draws as f64 / 4.0, (draws as f64 * 0.25 * 0.75).sqrt());
    for c in counts {
        assert!((c as f64 - mean).abs() <= 3.0 * sigma, "{counts:?}");
    }
}

#[test]
fn adversarial_picks_strongest_wrong_class() {
    assert_eq!(adversarial_label(&[0.7, 0.2, 0.1], 0), 1);
    assert_eq!(adversarial_label(&[0.2, 0.7, 0.1], 0), 1);
    assert_eq!(adversarial_label(&[0.5, 0.25, 0.25], 0), 1);
    assert_eq!(adversarial_label(&[0.1, 0.3, 0.6], 2), 1);

    let t = teacher();
    let a = init_params(&t, 11);
    let b = batch(10, 12);
    let c = corrupt_adversarial(&t, &a, &b, &mut rng(2)).unwrap();
    assert_eq!(c.corrupted_count(), 5);
    for i in 0..10 {
        assert_eq!(c.labels[i] != b.labels[i], c.corrupted[i]);
    }
}

#[test]
fn gate_bce_at_half_and_saturated() {
    let t = teacher();
    let mut a = init_params(&t, 13);
    zero_segments(&t, &mut a, "gate");
    let b = batch(8, 14);
    for strategy in [CorruptionStrategy::Random, CorruptionStrategy::Adversarial] {
        let v = gate_bce_loss(&t, &a, &b, strategy, &mut rng(3)).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-14);
    }
    assert!(gate_bce_loss(&t, &a, &b, CorruptionStrategy::None, &mut rng(3)).is_err());

    let bias = t.layout().segment("gate.out.bias").unwrap().offset;
    a.data_mut()[bias] = 30.0;
    let clean = vec![1.0; 8];
    let program = GateBce {
        teacher: &t,
        x: &b.x,
        labels: &b.labels,
        targets: &clean,
    };
    let v = autodiff::forward(&program, std::slice::from_ref(&a)).unwrap()[0].item();
    assert!((0.0..1e-12).contains(&v));
}

#[test]
fn gate_bce_reaches_embedding_and_gate() {
    let t = teacher();
    let a = init_params(&t, 15);
    let (_, g) = gate_bce_grad(
        &t,
        &a,
        &batch(16, 16),
        CorruptionStrategy::Adversarial,
        &mut rng(4),
    )
    .unwrap();
    for (group, n) in t.layout().group_norms(&g) {
        if group != "classifier" {
            assert!(n > 1e-8, "{group}");
        }
    }
}

#[test]
fn total_loss_report() {
    let (s, t) = (student(), teacher());
    let (w, a) = (init_params(&s, 17), init_params(&t, 18));
    let b = batch(8, 19);
    let (r, g) = teacher_total_loss(
        &s,
        &t,
        &a,
        &w,
        &b,
        CorruptionStrategy::None,
        LossWeights::default(),
        &mut rng(5),
    )
    .unwrap();
    assert_eq!(r.bce, 0.0);
    assert_eq!(r.total, r.ce + r.meta);
    assert_eq!(g, teacher_ce_grad(&t, &a, &b).unwrap().1);

    let (r, _) = teacher_total_loss(
        &s,
        &t,
        &a,
        &w,
        &b,
        CorruptionStrategy::Random,
        LossWeights::default(),
        &mut rng(5),
    )
    .unwrap();
    assert_eq!(r.total, r.ce + r.bce + r.meta);
    assert!(r.bce > 0.0);
    assert_eq!(
        LossReport::new(0.0, 0.0, 0.0, LossWeights::default()).total,
        0.0
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn losses_are_nonnegative(seed in 0u64..500) {
        let (s, t) = (student(), teacher());
        let (w, a) = (init_params(&s, seed), init_params(&t, seed + 1));
        let b = batch(8, seed);
        prop_assert!(soft_ce_lower_loss(&s, &t, &w, &a, &b).unwrap() >= 0.0);
        prop_assert!(clean_meta_loss(&s, &w, &b).unwrap() >= 0.0);
        prop_assert!(teacher_ce_loss(&t, &a, &b).unwrap() >= 0.0);
        prop_assert!(gate_bce_loss(&t, &a, &b, CorruptionStrategy::Random, &mut rng(seed)).unwrap() >= 0.0);
    }
}
