use emlc::autodiff::{self, Tensor};
use emlc::data::{
    blob_centers, cifar10, gen_blobs, inject, inject_asymmetric, inject_symmetric,
    read_labeled_csv, write_noisy_csv, BatchSampler, DatasetPair, EvalAccess, LabeledExample,
    LabeledSet, NoiseSpec, NoisyExample, NoisySet, TransitionMap,
};
use emlc::models::{init_params, Activation, StudentSpec};
use emlc::objectives::HardCe;
use emlc::Error;
use proptest::prelude::*;

fn wrong_fraction(noisy: &[NoisyExample]) -> f64 {
    let access = EvalAccess::grant();
    noisy.iter().filter(|e| e.is_corrupted(&access)).count() as f64 / noisy.len() as f64
}

fn balanced(classes: usize, per_class: usize) -> Vec<LabeledExample> {
    gen_blobs(classes, 2, per_class, 1.0, 3).unwrap()
}

#[test]
fn zero_spread_gives_centers() {
    let centers = blob_centers(4, 3);
    for e in gen_blobs(4, 3, 5, 0.0, 0).unwrap() {
        assert_eq!(e.x, centers[e.y]);
    }
    assert!(gen_blobs(1, 2, 5, 1.0, 0).is_err());
    assert!(gen_blobs(4, 1, 5, 1.0, 0).is_err());
}

#[test]
fn blobs_are_seeded() {
    assert_eq!(
        gen_blobs(4, 2, 10, 0.5, 7).unwrap(),
        gen_blobs(4, 2, 10, 0.5, 7).unwrap()
    );
    assert_ne!(
        gen_blobs(4, 2, 10, 0.5, 7).unwrap(),
        gen_blobs(4, 2, 10, 0.5, 8).unwrap()
    );
}

#[test]
fn linear_probe_separates_tight_blobs() {
    let train = LabeledSet::new(4, gen_blobs(4, 2, 250, 0.5, 1).unwrap()).unwrap();
    let test = LabeledSet::new(4, gen_blobs(4, 2, 250, 0.5, 2).unwrap()).unwrap();
    let probe = StudentSpec::new(vec![2, 4], Activation::Tanh).unwrap();
    let mut w = init_params(&probe, 0);
    let batch = train.full_batch().unwrap();
    for _ in 0..300 {
        let (_, g) = autodiff::grad(
            &HardCe {
                student: &probe,
                batch: &batch,
            },
            std::slice::from_ref(&w),
        )
        .unwrap();
        w.axpy(-0.5, &g[0]).unwrap();
    }
    let tb = test.full_batch().unwrap();
    let logp = emlc::models::student_forward(&probe, &w, &tb.x).unwrap();
    let correct = (0..tb.len())
        .filter(|&r| emlc::harness::argmax(logp.row(r)) == tb.labels[r])
        .count();
    let acc = correct as f64 / tb.len() as f64;
    assert!(acc >= 0.95, "probe accuracy {acc}");
}

#[test]
fn symmetric_rates() {
    let pool = balanced(4, 2500);
    let clean = inject_symmetric(&pool, 0.0, 4, 0).unwrap();
    assert_eq!(wrong_fraction(&clean), 0.0);
    let noisy = inject_symmetric(&pool, 0.5, 4, 1).unwrap();
    assert!((wrong_fraction(&noisy) - 0.375).abs() < 0.02);
    let access = EvalAccess::grant();
    for (e, n) in pool.iter().zip(&noisy) {
        assert_eq!(n.true_label(&access), e.y);
        assert_eq!(n.x, e.x);
    }
    let ten = gen_blobs(10, 2, 1000, 1.0, 4).unwrap();
    assert!((wrong_fraction(&inject_symmetric(&ten, 1.0, 10, 5).unwrap()) - 0.9).abs() < 0.02);
    assert!(inject_symmetric(&pool, 1.5, 4, 0).is_err());
}

#[test]
fn asymmetric_maps() {
    let pool = balanced(4, 50);
    let access = EvalAccess::grant();
    let map = TransitionMap::circular(4);
    assert_eq!(
        wrong_fraction(&inject_asymmetric(&pool, 0.0, &map, 0).unwrap()),
        0.0
    );
    for n in inject_asymmetric(&pool, 1.0, &map, 0).unwrap() {
        assert_eq!(n.observed, (n.true_label(&access) + 1) % 4);
    }
    let half = inject(&pool, &NoiseSpec::asymmetric(0.5, None), 4, 1).unwrap();
    assert_eq!(half.iter().filter(|e| e.is_corrupted(&access)).count(), 100);

    let c = TransitionMap::cifar10();
    assert_eq!(c.apply(cifar10::TRUCK), cifar10::AUTOMOBILE);
    assert_eq!(c.apply(cifar10::CAT), cifar10::DOG);
    assert_eq!(c.apply(cifar10::DOG), cifar10::CAT);
    assert_eq!(c.apply(cifar10::AIRPLANE), cifar10::AIRPLANE);
    assert!(TransitionMap::new(vec![1, 5]).is_err());
    assert!(inject(&pool, &NoiseSpec::asymmetric(0.5, Some(c)), 4, 0).is_err());
}

#[test]
fn modal_observed_label_is_true_label() {
    let pool = balanced(4, 5000);
    let access = EvalAccess::grant();
    for (spec, label) in [
        (NoiseSpec::symmetric(0.7), "symmetric"),
        (NoiseSpec::asymmetric(0.45, None), "asymmetric"),
    ] {
        let noisy = inject(&pool, &spec, 4, 9).unwrap();
        let mut counts = [[0usize; 4]; 4];
        for e in &noisy {
            counts[e.true_label(&access)][e.observed] += 1;
        }
        for (c, row) in counts.iter().enumerate() {
            assert_eq!(
                emlc::harness::argmax(&row.map(|v| v as f64)),
                c,
                "{label}: {row:?}"
            );
        }
    }
}

#[test]
fn sampler_contract() {
    let mut s = BatchSampler::new(3);
    let mut all = s.sample(12, 12).unwrap();
    all.sort_unstable();
    assert_eq!(all, (0..12).collect::<Vec<_>>());
    let (mut a, mut b) = (BatchSampler::new(5), BatchSampler::new(5));
    for _ in 0..10 {
        assert_eq!(a.sample(100, 7).unwrap(), b.sample(100, 7).unwrap());
    }
    let batch = a.sample(100, 30).unwrap();
    let mut dedup = batch.clone();
    dedup.sort_unstable();
    dedup.dedup();
    assert_eq!(dedup.len(), 30);
    assert!(matches!(a.sample(5, 6), Err(Error::InvalidArgument(_))));
    assert!(a.sample(5, 0).is_err());
}

#[test]
fn sampler_inclusion_is_uniform() {
    let (n, b, draws) = (20usize, 5usize, 10_000usize);
    let mut s = BatchSampler::new(11);
    let mut counts = vec![0usize; n];
    for _ in 0..draws {
        for i in s.sample(n, b).unwrap() {
            counts[i] += 1;
        }
    }
    let p = b as f64 / n as f64;
    let mean = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for (i, &c) in counts.iter().enumerate() {
        assert!(
            (c as f64 - mean).abs() <= 3.0 * sigma,
            "index {i}: {c} vs {mean}±{sigma}"
        );
    }
}

#[test]
fn split_is_disjoint_and_balanced() {
    let pool = balanced(4, 100);
    let pair = DatasetPair::split(&pool, 4, 40, 300, &NoiseSpec::symmetric(0.5), 1).unwrap();
    assert_eq!(pair.clean.len(), 40);
    assert_eq!(pair.noisy.len(), 300);
    let clean: std::collections::HashSet<_> = pair.clean_source.iter().collect();
    assert!(pair.noisy_source.iter().all(|i| !clean.contains(i)));
    for c in 0..4 {
        assert_eq!(pair.clean.examples.iter().filter(|e| e.y == c).count(), 10);
    }
    let access = EvalAccess::grant();
    for (e, &i) in pair.noisy.examples.iter().zip(&pair.noisy_source) {
        assert_eq!(e.true_label(&access), pool[i].y);
    }
    assert!((pair.noisy.corrupted_fraction(&access) - 0.375).abs() < 0.1);
    assert!(DatasetPair::split(&pool, 4, 300, 40, &NoiseSpec::none(), 1).is_err());
    assert!(DatasetPair::split(&pool, 4, 200, 300, &NoiseSpec::none(), 1).is_err());
}

#[test]
fn noisy_batches_carry_observed_labels() {
    let set = NoisySet::new(3, vec![NoisyExample::new(vec![1.0, 2.0], 2, 0)]).unwrap();
    let b = set.full_batch().unwrap();
    assert_eq!(b.labels, vec![2]);
    assert_eq!(b.x, Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
    assert_eq!(
        format!("{:?}", set.examples[0].hidden_label()),
        "HiddenLabel(..)"
    );
    assert!(NoisySet::new(2, vec![NoisyExample::new(vec![0.0], 2, 0)]).is_err());
    assert!(set.batch(&[]).is_err());
}

#[test]
fn csv_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");
    std::fs::write(&p, "a,b,label\n1,2,0\n").unwrap();
    assert!(matches!(read_labeled_csv(&p), Err(Error::Format { .. })));
    std::fs::write(&p, "f0,f1,label\n1,x,0\n").unwrap();
    assert!(read_labeled_csv(&p).is_err());
    std::fs::write(&p, "f0,f1,label\n1,2,-1\n").unwrap();
    assert!(read_labeled_csv(&p).is_err());
    std::fs::write(&p, "f0,f1,label\n1,NaN,1\n").unwrap();
    assert!(read_labeled_csv(&p).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn csv_round_trip(rows in prop::collection::vec((prop::collection::vec(-1e6f64..1e6, 3), 0usize..5, 0usize..5), 1..20)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("round.csv");
        let examples: Vec<NoisyExample> = rows.iter().map(|(x, o, t)| NoisyExample::new(x.clone(), *o, *t)).collect();
        write_noisy_csv(&p, &examples, &EvalAccess::grant()).unwrap();
        let (dim, back) = read_labeled_csv(&p).unwrap();
        prop_assert_eq!(dim, 3);
        prop_assert_eq!(back.len(), examples.len());
        for (b, e) in back.iter().zip(&examples) {
            prop_assert_eq!(&b.x, &e.x);
            prop_assert_eq!(b.y, e.observed);
        }
    }

    #[test]
    fn symmetric_flips_the_budget(n in 1usize..300, rate in 0.0f64..=1.0, seed in 0u64..100) {
        let pool: Vec<LabeledExample> = (0..n).map(|i| LabeledExample { x: vec![i as f64, 0.0], y: i % 3 }).collect();
        let out = inject_symmetric(&pool, rate, 3, seed).unwrap();
        let changed = out.iter().filter(|e| e.is_corrupted(&EvalAccess::grant())).count();
        prop_assert!(changed <= (rate * n as f64).floor() as usize);
        prop_assert!(out.iter().all(|e| e.observed < 3));
    }
}
