use emlc::autodiff::{self, Tensor};
use emlc::bilevel::oracle::unroll;
use emlc::bilevel::surrogate::{QuadraticInner, QuadraticOuter};
use emlc::bilevel::{
    clean_feedback_grad, fpmg, inner_step, meta_step, mixed_hessian_dense, one_step_meta_grad,
    unrolled_oracle, AuditRow, BilevelConfig, CleanObjective, GradientAudit, InnerProblem,
    MetaMethod, OuterObjective, SnapshotBuffer,
};
use emlc::data::{LabeledExample, LabeledSet};
use emlc::harness::verify::Fixture;
use emlc::models::{init_params, Activation, ModelSpec, StudentSpec, TeacherSpec};
use emlc::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(k: usize, lr_inner: f64) -> BilevelConfig {
    BilevelConfig {
        k,
        lr_inner,
        lr_meta: 0.1,
        steps: k,
        noisy_batch: 8,
        clean_batch: 8,
    }
}

fn t(v: &[f64]) -> Tensor {
    Tensor::new(vec![v.len()], v.to_vec()).unwrap()
}

fn window<P: InnerProblem>(
    p: &P,
    w: &Tensor,
    a: &Tensor,
    batches: &[Vec<usize>],
    lr: f64,
) -> SnapshotBuffer {
    let mut buf = SnapshotBuffer::new(batches.len(), w.clone());
    for b in batches {
        let next = inner_step(p, buf.head(), a, b, lr).unwrap();
        buf.advance(b.clone(), next);
    }
    buf
}

fn gaussian(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(
        vec![n],
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Contraction is the unit vector of the batch's first index, so each
/// window step's weight shows up in its own coordinate.
struct Marker;

impl InnerProblem for Marker {
    fn student_len(&self) -> usize {
        1
    }
    fn teacher_len(&self) -> usize {
        4
    }
    fn inner_loss(&self, _: &Tensor, _: &Tensor, _: &[usize]) -> emlc::Result<f64> {
        Ok(0.0)
    }
    fn inner_grad(&self, w: &Tensor, _: &Tensor, _: &[usize]) -> emlc::Result<Tensor> {
        Ok(w.zeros_like())
    }
    fn contract(
        &self,
        _: &Tensor,
        _: &Tensor,
        batch: &[usize],
        g: &Tensor,
    ) -> emlc::Result<Tensor> {
        let mut e = Tensor::zeros(&[4]);
        e.data_mut()[batch[0]] = g.data()[0];
        Ok(e)
    }
}

struct Scaled<'a>(CleanObjective<'a>, f64);

impl OuterObjective for Scaled<'_> {
    fn loss(&self, w: &Tensor) -> emlc::Result<f64> {
        Ok(self.1 * self.0.loss(w)?)
    }
    fn grad(&self, w: &Tensor) -> emlc::Result<Tensor> {
        Ok(self.0.grad(w)?.scale(self.1))
    }
}

#[test]
fn inner_step_on_quadratic() {
    let q = QuadraticInner::new(Tensor::zeros(&[1, 1]));
    let a = Tensor::zeros(&[1]);
    assert_eq!(inner_step(&q, &t(&[1.0]), &a, &[], 0.1).unwrap(), t(&[0.9]));
    assert_eq!(inner_step(&q, &t(&[0.0]), &a, &[], 0.1).unwrap(), t(&[0.0]));
}

#[test]
fn inner_step_descends_on_mlp() {
    let fx = Fixture::tiny();
    let p = fx.problem();
    let (w, a) = fx.params(1);
    let b = fx.batches(1, 2).unwrap().remove(0);
    let next = inner_step(&p, &w, &a, &b, 1e-3).unwrap();
    assert!(p.inner_loss(&next, &a, &b).unwrap() < p.inner_loss(&w, &a, &b).unwrap());
}

#[test]
fn inner_step_rejects_non_finite() {
    let q = QuadraticInner::new(Tensor::zeros(&[1, 1]));
    let r = inner_step(&q, &t(&[f64::NAN]), &Tensor::zeros(&[1]), &[], 0.1);
    assert!(matches!(r, Err(Error::NonFinite { .. })));
}

#[test]
fn feedback_gradient_of_perfect_student_vanishes() {
    let s = StudentSpec::new(vec![2, 4], Activation::Tanh).unwrap();
    let mut w = Tensor::zeros(&[s.param_count()]);
    w.data_mut()[s.layout().segment("layer0.bias").unwrap().offset] = 60.0;
    let set = LabeledSet::new(
        4,
        vec![
            LabeledExample {
                x: vec![0.3, -0.2],
                y: 0
            };
            3
        ],
    )
    .unwrap();
    let outer = CleanObjective {
        student: &s,
        batch: set.full_batch().unwrap(),
    };
    let g = clean_feedback_grad(&outer, &w).unwrap();
    assert!(g.norm() < 1e-20);
}

#[test]
fn feedback_gradient_matches_fd_and_scales() {
    let fx = Fixture::tiny();
    let outer = fx.outer();
    let (w, _) = fx.params(4);
    let g = clean_feedback_grad(&outer, &w).unwrap();
    let fd = autodiff::finite_diff_grad(|v: &Tensor| outer.loss(v), &w, 1e-5).unwrap();
    assert!(g.rel_error(&fd) < 1e-6);
    let scaled = clean_feedback_grad(&Scaled(fx.outer(), 3.0), &w).unwrap();
    assert!(scaled.rel_error(&g.scale(3.0)) < 1e-15);
}

#[test]
fn fpmg_zero_feedback_gives_zero() {
    let fx = Fixture::tiny();
    let p = fx.problem();
    let (w, a) = fx.params(5);
    let buf = window(&p, &w, &a, &fx.batches(3, 1).unwrap(), 0.1);
    let (mg, _) = fpmg(
        &p,
        &buf,
        &a,
        &Tensor::zeros(&[p.student_len()]),
        &config(3, 0.1),
    )
    .unwrap();
    assert_eq!(mg.method, MetaMethod::Fpmg);
    assert!(mg.grad.data().iter().all(|&v| v == 0.0));
    let one = one_step_meta_grad(
        &p,
        &w,
        &buf.steps()[1].0,
        &a,
        &buf.steps()[0].1,
        &Tensor::zeros(&[p.student_len()]),
        0.1,
    )
    .unwrap();
    assert!(one.grad.data().iter().all(|&v| v == 0.0));
}

#[test]
fn fpmg_k1_is_one_step() {
    let fx = Fixture::tiny();
    let p = fx.problem();
    let (w, a) = fx.params(6);
    let b = fx.batches(1, 3).unwrap();
    let buf = window(&p, &w, &a, &b, 0.1);
    let g = clean_feedback_grad(&fx.outer(), buf.head()).unwrap();
    let (mg, _) = fpmg(&p, &buf, &a, &g, &config(1, 0.1)).unwrap();
    let one = one_step_meta_grad(&p, &w, buf.head(), &a, &b[0], &g, 0.1).unwrap();
    assert_eq!(one.method, MetaMethod::OneStep);
    assert_eq!(mg.grad, one.grad);
}

#[test]
fn discounts_follow_inner_rate() {
    let lr = 0.02;
    let mut buf = SnapshotBuffer::new(3, t(&[0.0]));
    for i in 0..3 {
        buf.advance(vec![i], t(&[0.0]));
    }
    let (mg, stats) = fpmg(
        &Marker,
        &buf,
        &Tensor::zeros(&[4]),
        &t(&[1.0]),
        &config(3, lr),
    )
    .unwrap();
    // batch 2 is newest
    let want = [lr * 0.98 * 0.98, lr * 0.98, lr, 0.0];
    for (got, want) in mg.grad.data().iter().zip(want) {
        assert!((got - want).abs() < 1e-17, "{got} vs {want}");
    }
    assert_eq!(stats.passes.len(), 3);
    assert_eq!(stats.retained_snapshots, 4);
}

#[test]
fn fpmg_requires_complete_window() {
    let fx = Fixture::tiny();
    let p = fx.problem();
    let (w, a) = fx.params(7);
    let buf = window(&p, &w, &a, &fx.batches(2, 1).unwrap(), 0.1);
    let g = Tensor::zeros(&[p.student_len()]);
    assert!(matches!(
        fpmg(&p, &buf, &a, &g, &config(3, 0.1)),
        Err(Error::IncompleteWindow { have: 2, need: 3 })
    ));
    assert!(matches!(
        fpmg(&p, &buf, &a, &Tensor::zeros(&[3]), &config(2, 0.1)),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn scalar_one_step_example() {
    // L̃ = ½w² − αw, L = ½w′²
    let q = QuadraticInner::new(Tensor::matrix(1, 1, vec![-1.0]).unwrap());
    let outer = QuadraticOuter { target: t(&[0.0]) };
    let (w, a) = (t(&[1.0]), t(&[0.0]));
    let w1 = inner_step(&q, &w, &a, &[], 0.1).unwrap();
    assert!((w1.data()[0] - 0.9).abs() < 1e-15);
    let g = clean_feedback_grad(&outer, &w1).unwrap();
    let mg = one_step_meta_grad(&q, &w, &w1, &a, &[], &g, 0.1).unwrap();
    assert!((mg.grad.data()[0] - 0.09).abs() < 1e-15);
    let oracle = unrolled_oracle(&q, &outer, &w, &a, &[vec![]], 0.1, 1e-2).unwrap();
    assert!((oracle.grad.data()[0] - 0.09).abs() < 1e-12);
}

#[test]
fn contraction_matches_dense_mixed_hessian() {
    let fx = Fixture::tiny();
    let p = fx.problem();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..5 {
        let (w, a) = fx.params(seed);
        let i = seed as usize * 7;
        let e = &fx.pair.noisy.examples[i];
        let h = mixed_hessian_dense(&fx.student, &fx.teacher, &w, &a, &e.x, e.observed).unwrap();
        let u = gaussian(w.len(), &mut rng);
        let uh =
            emlc::autodiff::kernels::matmul_tn(&u.clone().reshape(vec![w.len(), 1]).unwrap(), &h)
                .reshape(vec![a.len()])
                .unwrap();
        let c = p.contract(&w, &a, &[i], &u).unwrap();
        assert!(c.rel_error(&uh.scale(-1.0)) < 1e-10);
    }
}

#[test]
fn zero_teacher_sensitivity_gives_zero_mixed_hessian() {
    let s = StudentSpec::new(vec![2, 5, 3], Activation::Tanh).unwrap();
    let tspec = TeacherSpec::new(2, vec![4], 3, 2, 4, Activation::Tanh).unwrap();
    let w = init_params(&s, 0);
    let mut a = init_params(&tspec, 1);
    let layout = tspec.layout();
    for seg in layout.segments() {
        if seg.name.starts_with("gate.out") {
            let v = if seg.name.ends_with("bias") {
                40.0
            } else {
                0.0
            };
            for p in &mut a.data_mut()[seg.range()] {
                *p = v;
            }
        }
    }
    let h = mixed_hessian_dense(&s, &tspec, &w, &a, &[0.4, -0.3], 1).unwrap();
    assert!(h.data().iter().all(|v| v.abs() < 1e-7));
}

#[test]
fn size_guards() {
    let s = StudentSpec::new(vec![2, 1000, 4], Activation::Tanh).unwrap();
    let tspec = TeacherSpec::new(2, vec![200], 4, 8, 200, Activation::Tanh).unwrap();
    let r = mixed_hessian_dense(
        &s,
        &tspec,
        &init_params(&s, 0),
        &init_params(&tspec, 0),
        &[0.0, 0.0],
        0,
    );
    assert!(matches!(r, Err(Error::SizeGuard { .. })));
    let q = QuadraticInner::new(Tensor::zeros(&[1, 1]));
    let outer = QuadraticOuter { target: t(&[0.0]) };
    let r = unrolled_oracle(
        &q,
        &outer,
        &t(&[1.0]),
        &t(&[0.0]),
        &vec![vec![]; 9],
        0.1,
        1e-3,
    );
    assert!(matches!(r, Err(Error::SizeGuard { .. })));
}

#[test]
fn zero_perturbation_keeps_trajectory() {
    let fx = Fixture::tiny();
    let p = fx.problem();
    let (w, a) = fx.params(9);
    let b = fx.batches(4, 4).unwrap();
    let mut same = a.clone();
    same.axpy(0.0, &a).unwrap();
    assert_eq!(
        unroll(&p, &w, &a, &b, 0.1).unwrap(),
        unroll(&p, &w, &same, &b, 0.1).unwrap()
    );
}

#[test]
fn meta_step_examples() {
    let a = t(&[1.0, -2.0]);
    assert_eq!(meta_step(&a, &Tensor::zeros(&[2]), 0.5).unwrap(), a);
    assert_eq!(meta_step(&a, &t(&[3.0, 4.0]), 0.0).unwrap(), a);
    assert_eq!(
        meta_step(&a, &t(&[1.0, 1.0]), 0.5).unwrap(),
        t(&[0.5, -2.5])
    );
    assert!(meta_step(&a, &t(&[1.0]), 0.5).is_err());
}

#[test]
fn quadratic_bilevel_converges_to_argmin() {
    // w* = −Bα, so L is minimized at α = −B⁻¹ target
    let b = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap();
    let q = QuadraticInner::new(b);
    let outer = QuadraticOuter {
        target: t(&[1.0, -1.0]),
    };
    let cfg = BilevelConfig {
        k: 5,
        lr_inner: 0.5,
        lr_meta: 0.2,
        steps: 5000,
        noisy_batch: 1,
        clean_batch: 1,
    };
    let mut w = Tensor::zeros(&[2]);
    let mut a = Tensor::zeros(&[2]);
    for _ in 0..1000 {
        let buf = window(&q, &w, &a, &vec![vec![]; cfg.k], cfg.lr_inner);
        let g = clean_feedback_grad(&outer, buf.head()).unwrap();
        let (mg, _) = fpmg(&q, &buf, &a, &g, &cfg).unwrap();
        a = meta_step(&a, &mg.grad, cfg.lr_meta).unwrap();
        w = buf.head().clone();
    }
    assert!(a.rel_error(&t(&[-1.0, 0.5])) < 1e-6, "{:?}", a.data());
}

#[test]
fn snapshot_window_lifecycle() {
    let mut buf = SnapshotBuffer::new(3, t(&[0.0]));
    assert!(buf.is_empty());
    assert_eq!(buf.retained(), 1);
    for i in 1..=3 {
        buf.advance(vec![i], t(&[i as f64]));
    }
    assert!(buf.is_complete());
    assert_eq!(buf.retained(), 4);
    assert_eq!(buf.head(), &t(&[3.0]));
    let recorded: Vec<(f64, usize)> = buf
        .steps()
        .iter()
        .map(|(w, b)| (w.data()[0], b[0]))
        .collect();
    assert_eq!(recorded, [(0.0, 1), (1.0, 2), (2.0, 3)]);
    buf.reset();
    assert_eq!(buf.retained(), 1);
    assert_eq!(buf.head(), &t(&[3.0]));
    assert_eq!(buf.peak_retained(), 4);
}

#[test]
#[should_panic(expected = "already holds")]
fn snapshot_overflow_panics() {
    let mut buf = SnapshotBuffer::new(1, t(&[0.0]));
    buf.advance(vec![0], t(&[1.0]));
    buf.advance(vec![1], t(&[2.0]));
}

#[test]
fn audit_csv_rows() {
    let fx = Fixture::tiny();
    let layout = fx.teacher.layout();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.csv");
    let mut audit = GradientAudit::create(&path, &layout).unwrap();
    let (_, a) = fx.params(0);
    audit
        .write(&AuditRow::new(4, &a, Some(&a), &layout))
        .unwrap();
    audit.write(&AuditRow::new(9, &a, None, &layout)).unwrap();
    audit.finish().unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("step,meta_norm,oracle_norm,rel_error,"));
    let cols = lines[0].split(',').count();
    assert!(lines.iter().all(|l| l.split(',').count() == cols));
    let first: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(first[0], "4");
    assert_eq!(first[3].parse::<f64>().unwrap(), 0.0);
    assert_eq!(lines[2].split(',').nth(2), Some(""));
}

#[test]
fn config_validation() {
    assert!(config(5, 0.1).validate().is_ok());
    assert!(config(5, 1.0).validate().is_err());
    assert!(BilevelConfig {
        k: 0,
        ..config(5, 0.1)
    }
    .validate()
    .is_err());
    assert!(BilevelConfig {
        steps: 3,
        ..config(5, 0.1)
    }
    .validate()
    .is_err());
    let c = config(5, 0.1);
    assert_eq!(
        (0..10).filter(|&s| c.is_meta_step(s)).collect::<Vec<_>>(),
        [4, 9]
    );
    assert!((c.gamma() - 0.9).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fpmg_is_linear_in_feedback(seed in 0u64..200, c in -3.0f64..3.0) {
        let fx = Fixture::tiny();
        let p = fx.problem();
        let (w, a) = fx.params(seed);
        let buf = window(&p, &w, &a, &fx.batches(2, seed).unwrap(), 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = gaussian(p.student_len(), &mut rng);
        let (base, _) = fpmg(&p, &buf, &a, &g, &config(2, 0.1)).unwrap();
        let (scaled, _) = fpmg(&p, &buf, &a, &g.scale(c), &config(2, 0.1)).unwrap();
        let diff = scaled.grad.zip_map(&base.grad.scale(c), |x, y| x - y).unwrap();
        prop_assert!(diff.norm() <= 1e-12 * (1.0 + base.grad.norm() * c.abs()));
    }
}
