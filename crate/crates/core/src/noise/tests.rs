use super::*;
use crate::models::{freeze, BigramTable, UniformModel};
use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn symmetric_flip_entries() {
    let t = make_transition(NoiseKind::SymmetricFlip, 0.3, 4, 0).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let want = if i == j { 0.7 } else { 0.1 };
            assert!(close(t.get(i, j), want, 1e-15));
        }
    }
    assert_eq!(t.kind(), TransitionKind::SymmetricFlip(0.3));
}

#[test]
fn identity_kind_is_exact() {
    let t = make_transition(NoiseKind::Identity, 0.5, 5, 0).unwrap();
    assert_eq!(t, TransitionMatrix::identity(5));
}

#[test]
fn full_strength_rejected() {
    for kind in [NoiseKind::Identity, NoiseKind::SymmetricFlip, NoiseKind::ClassDependent] {
        assert_eq!(make_transition(kind, 1.0, 4, 0), Err(NoiseError::BadStrength(1.0)));
    }
}

#[test]
fn restricted_noise_leaves_reserved_ids() {
    let t = make_transition_on(NoiseKind::SymmetricFlip, 0.3, 7, 3, 0).unwrap();
    for i in 0..3 {
        assert_eq!(t.row(i)[i], 1.0);
    }
    assert!(close(t.get(3, 4), 0.1, 1e-15));
    assert_eq!(t.get(3, 0), 0.0);
}

#[test]
fn class_dependent_rows_respect_diagonal_floor() {
    let t = make_transition(NoiseKind::ClassDependent, 0.4, 10, 7).unwrap();
    for i in 0..10 {
        assert!(t.get(i, i) >= 0.6 - 1e-15);
        assert!(close(t.row(i).iter().sum(), 1.0, 1e-12));
    }
    assert_eq!(t, make_transition(NoiseKind::ClassDependent, 0.4, 10, 7).unwrap());
    assert_ne!(t, make_transition(NoiseKind::ClassDependent, 0.4, 10, 8).unwrap());
}

#[test]
fn corrupt_identity_is_noop() {
    let clean = vec![vec![0, 1, 2, 3], vec![3, 3]];
    let out = corrupt_corpus(&clean, &TransitionMatrix::identity(4), 1).unwrap();
    assert_eq!(out, clean);
}

#[test]
fn corrupt_permutation_relabels() {
    let perm = [2, 0, 3, 1];
    let t = TransitionMatrix::permutation(&perm).unwrap();
    let out = corrupt_corpus(&[vec![0, 1, 2, 3, 0]], &t, 5).unwrap();
    assert_eq!(out, vec![vec![2, 0, 3, 1, 2]]);
}

#[test]
fn corrupt_flip_rate() {
    let t = make_transition(NoiseKind::SymmetricFlip, 0.3, 5, 0).unwrap();
    let clean = vec![vec![2 as TokenId; 10_000]];
    let out = corrupt_corpus(&clean, &t, 3).unwrap();
    let flipped = out[0].iter().filter(|&&x| x != 2).count() as f64 / 10_000.0;
    assert!(close(flipped, 0.3, 0.02), "flip rate {flipped}");
    assert_eq!(out[0].len(), 10_000);
}

#[test]
fn corrupt_rejects_out_of_range() {
    let r = corrupt_corpus(&[vec![9]], &TransitionMatrix::identity(4), 0);
    assert!(matches!(r, Err(NoiseError::VocabMismatch { .. })));
}

#[test]
fn forward_loss_examples() {
    let b = ProbVector::new(vec![0.25, 0.75]).unwrap();
    let id = TransitionMatrix::identity(2);
    let l = forward_corrected_loss(&b, &id, 1).unwrap();
    assert!(close(l, 0.287682, 1e-6));
    let half = TransitionMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
    for bv in [[0.1, 0.9], [0.5, 0.5], [1.0, 0.0]] {
        let b = ProbVector::new(bv.to_vec()).unwrap();
        for target in 0..2 {
            let l = forward_corrected_loss(&b, &half, target).unwrap();
            assert!(close(l, 2f64.ln(), 1e-15));
        }
    }
}

#[test]
fn forward_loss_with_permutation_is_ce_on_permuted_target() {
    let perm = [1, 2, 0];
    let t = TransitionMatrix::permutation(&perm).unwrap();
    let b = ProbVector::new(vec![0.2, 0.3, 0.5]).unwrap();
    for clean in 0..3 {
        let noisy = perm[clean] as TokenId;
        let l = forward_corrected_loss(&b, &t, noisy).unwrap();
        assert!(close(l, -(b.as_slice()[clean]).ln(), 1e-15));
    }
}

#[test]
fn forward_loss_vocab_mismatch() {
    let b = ProbVector::uniform(3);
    let r = forward_corrected_loss(&b, &TransitionMatrix::identity(2), 0);
    assert!(matches!(r, Err(NoiseError::VocabMismatch { .. })));
}

#[test]
fn corrected_probs_gradient() {
    use crate::autodiff::check_gradients;
    let t = make_transition(NoiseKind::ClassDependent, 0.3, 4, 2).unwrap();
    let logits = Tensor::matrix(2, 4, vec![0.1, -0.3, 0.8, 0.0, 1.2, 0.4, -0.5, 0.3]);
    let err = check_gradients(
        |g, p| {
            let s = g.softmax(p[0])?;
            let q = corrected_probs(g, s, &t)?;
            let picked = g.pick(q, &[2, 0])?;
            let l = g.log(picked);
            let total = g.sum(l);
            Ok(g.scale(total, -1.0))
        },
        &[logits],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6);
}

#[test]
fn consistency_two_token_example() {
    let p = [ProbVector::new(vec![0.8, 0.2]).unwrap()];
    let t = make_transition(NoiseKind::SymmetricFlip, 0.3, 2, 0).unwrap();
    let rep = consistency_check(&p, &t, 0.01).unwrap();
    assert!(rep.identifiable);
    assert!(close(rep.clean_argmin[0][0], 0.8, 1e-12));
    assert!(close(rep.corrected_argmin[0][0], 0.8, 1e-12));
    assert!(rep.agrees());
}

#[test]
fn consistency_identity_is_trivial() {
    let p = [
        ProbVector::new(vec![0.33, 0.27, 0.4]).unwrap(),
        ProbVector::new(vec![0.05, 0.9, 0.05]).unwrap(),
    ];
    let rep = consistency_check(&p, &TransitionMatrix::identity(3), 0.01).unwrap();
    assert_eq!(rep.clean_argmin, rep.corrected_argmin);
    assert_eq!(rep.distance, 0.0);
}

#[test]
fn consistency_flags_singular_transition() {
    let t = TransitionMatrix::from_rows(vec![vec![0.6, 0.4], vec![0.6, 0.4]]).unwrap();
    let rep = consistency_check(&[ProbVector::new(vec![0.8, 0.2]).unwrap()], &t, 0.01).unwrap();
    assert!(!rep.identifiable);
}

#[test]
fn consistency_size_limits() {
    let p = [ProbVector::uniform(5)];
    let r = consistency_check(&p, &TransitionMatrix::identity(5), 0.01);
    assert!(matches!(r, Err(NoiseError::InstanceTooLarge { .. })));
    let p = vec![ProbVector::uniform(2); 4];
    let r = consistency_check(&p, &TransitionMatrix::identity(2), 0.01);
    assert!(matches!(r, Err(NoiseError::InstanceTooLarge { .. })));
    let r = consistency_check(&p[..1], &TransitionMatrix::identity(2), 0.03);
    assert_eq!(r, Err(NoiseError::BadGrid));
}

/// Oracle over three words plus reserved ids: contexts are the previous
/// word, each with a dominant successor.
fn oracle(t: &TransitionMatrix, dominant: f64) -> (BigramTable, BigramTable) {
    let v = t.size();
    let rows: Vec<ProbVector> = (0..v)
        .map(|prev| {
            let mut p = vec![0.0; v];
            let words = [3usize, 4, 5];
            let top = words[prev % 3];
            for &w in &words {
                p[w] = if w == top { dominant } else { (1.0 - dominant) / 2.0 };
            }
            ProbVector::new(p).unwrap()
        })
        .collect();
    let noisy: Vec<ProbVector> = rows
        .iter()
        .map(|p| ProbVector::new(t.push_forward(p.as_slice())).unwrap())
        .collect();
    (BigramTable::new(rows).unwrap(), BigramTable::new(noisy).unwrap())
}

#[test]
fn estimator_recovers_identity_for_deterministic_labels() {
    let t = TransitionMatrix::identity(6);
    let (clean, noisy) = oracle(&t, 1.0);
    let mut rng = crate::rng::Stream::new(4);
    let samples: Vec<(Vec<TokenId>, TokenId)> = (0..300)
        .map(|_| {
            let prev = 3 + rng.below(3) as TokenId;
            let x = rng.categorical(clean.row(prev).as_slice()) as TokenId;
            (vec![prev], x)
        })
        .collect();
    let est = estimate_transition(&noisy, &samples).unwrap();
    for i in 3..6 {
        for j in 0..6 {
            assert_eq!(est.matrix.get(i, j), if i == j { 1.0 } else { 0.0 });
        }
    }
    assert_eq!(est.unsupported(), vec![0, 1, 2]);
    for i in 0..3 {
        assert!(est.matrix.row(i).iter().all(|&v| v == 1.0 / 6.0));
    }
}

#[test]
fn estimator_rejects_empty() {
    let m = UniformModel::new(3);
    assert_eq!(estimate_transition(&m, &[]), Err(NoiseError::EmptyData));
}

#[test]
fn diagonal_reweighter_examples() {
    use crate::models::LanguageModel;
    let r = diagonal_reweight_from_T(&[1.0; 4]).unwrap();
    assert_eq!(r.probs(), &ProbVector::uniform(4));
    let r = diagonal_reweight_from_T(&[2.0, 1.0]).unwrap();
    assert!(close(r.probs().as_slice()[0], 2.0 / 3.0, 1e-15));
    assert_eq!(r.next_token_probs(&[0, 1]).unwrap(), r.probs().clone());
    assert_eq!(
        diagonal_reweight_from_T(&[1.0, 0.0]),
        Err(NoiseError::NonPositive { index: 1 })
    );
    let bb = freeze(UniformModel::new(4));
    let _ = bb;
}

#[test]
fn from_diagonal_is_row_stochastic() {
    let t = TransitionMatrix::from_diagonal(&[0.9, 0.5, 1.0]).unwrap();
    assert_eq!(t.diagonal(), vec![0.9, 0.5, 1.0]);
    assert!(close(t.get(1, 0), 0.25, 1e-15));
    assert_eq!(t.kind(), TransitionKind::DiagonalParam);
}

#[test]
fn decay_zero_noise_from_truth_is_zero() {
    let fam = ThetaFamily::logistic(12, 3, 1);
    let cfg = DecayConfig {
        t_max: 200,
        trials: 2,
        noise: ObservationNoise::Exact,
        init: Some(fam.theta_star.clone()),
        ..DecayConfig::default()
    };
    let rep = theorem1_decay(&fam, &cfg).unwrap();
    assert!(rep.mean_excess.iter().all(|&e| e == 0.0));
    assert_eq!(rep.negative, 0);
}

#[test]
fn decay_rank_deficient_features() {
    let mut fam = ThetaFamily::logistic(8, 3, 2);
    for phi in &mut fam.features {
        phi[2] = 2.0 * phi[1];
    }
    let r = theorem1_decay(
        &fam,
        &DecayConfig {
            t_max: 50,
            trials: 1,
            ..DecayConfig::default()
        },
    );
    assert_eq!(r, Err(NoiseError::NonIdentifiable));
}

#[test]
fn derivative_bounds_hold_for_logistic() {
    let fam = ThetaFamily::logistic(10, 3, 0);
    let (l0, l1) = fam.derivative_bounds(200, 1);
    let max_norm = fam
        .features
        .iter()
        .map(|p| p.iter().map(|v| v * v).sum::<f64>())
        .fold(0.0, f64::max);
    assert!(l0 > 0.0 && l0 <= 0.25 * max_norm.sqrt() + 1e-12);
    assert!(l1 > 0.0 && l1 <= 0.1 * max_norm + 1e-12);
}

#[test]
fn smoothing_and_increase_count() {
    let s = [5.0, 4.0, 3.0, 2.0, 6.0, 1.0];
    assert_eq!(DecayReport::smooth(&s, 2), vec![4.5, 3.5, 2.5, 4.0, 3.5]);
    assert_eq!(DecayReport::increases(&s, 2), 1);
    assert_eq!(decay::loglog_fit(&[1.0, 0.5, 1.0 / 3.0, 0.25], 1, 4).0.round(), -1.0);
}

proptest! {
    #[test]
    fn constructors_are_row_stochastic(seed in 0u64..1000, strength in 0.0f64..0.99, v in 2usize..12) {
        for kind in [NoiseKind::Identity, NoiseKind::SymmetricFlip, NoiseKind::ClassDependent] {
            let t = make_transition(kind, strength, v, seed).unwrap();
            for i in 0..v {
                let s: f64 = t.row(i).iter().sum();
                prop_assert!((s - 1.0).abs() <= ROW_TOL);
                prop_assert!(t.row(i).iter().all(|&x| (0.0..=1.0).contains(&x)));
            }
        }
    }

    #[test]
    fn identity_correction_is_plain_ce(raw in proptest::collection::vec(0.0f64..1.0, 2..8), pick in 0usize..8) {
        let total: f64 = raw.iter().sum();
        prop_assume_positive(total)?;
        let b = ProbVector::normalize(raw.clone()).unwrap();
        let target = (pick % raw.len()) as TokenId;
        let t = TransitionMatrix::identity(raw.len());
        let corrected = forward_corrected_loss(&b, &t, target).unwrap();
        let plain = -b.as_slice()[target as usize].max(PROB_FLOOR).ln();
        prop_assert_eq!(corrected.to_bits(), plain.to_bits());
    }

    #[test]
    fn estimator_rows_on_simplex(seed in 0u64..200, n in 1usize..50) {
        let t = make_transition(NoiseKind::ClassDependent, 0.3, 6, seed).unwrap();
        let (clean, noisy) = oracle(&t, 0.7);
        let mut rng = crate::rng::Stream::new(seed);
        let samples: Vec<(Vec<TokenId>, TokenId)> = (0..n)
            .map(|_| {
                let prev = rng.below(6) as TokenId;
                (vec![prev], rng.categorical(clean.row(prev).as_slice()) as TokenId)
            })
            .collect();
        let est = estimate_transition(&noisy, &samples).unwrap();
        for i in 0..6 {
            let s: f64 = est.matrix.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(est.matrix.row(i).iter().all(|&x| x >= 0.0));
        }
    }
}

fn prop_assume_positive(total: f64) -> Result<(), proptest::test_runner::TestCaseError> {
    if total > 1e-6 {
        Ok(())
    } else {
        Err(proptest::test_runner::TestCaseError::reject("zero mass"))
    }
}
