use super::*;
use crate::rng::Stream;
use alloc::vec;
use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

fn w(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// Brute-force oracles: every n-gram list is materialized and counted by
// linear scans; LCS is computed top-down.

fn grams<T: Clone>(s: &[T], n: usize) -> Vec<Vec<T>> {
    if s.len() < n {
        return Vec::new();
    }
    (0..=s.len() - n).map(|i| s[i..i + n].to_vec()).collect()
}

fn count<T: PartialEq>(list: &[Vec<T>], g: &[T]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

fn distinct<T: PartialEq + Clone>(list: &[Vec<T>]) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<T>> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

fn oracle_bleu(c: &[u32], refs: &[Vec<u32>], max_n: usize) -> f64 {
    if c.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cg = grams(c, n);
        let rg: Vec<Vec<Vec<u32>>> = refs.iter().map(|r| grams(r, n)).collect();
        let mut m = 0;
        for g in distinct(&cg) {
            let best = rg.iter().map(|r| count(r, &g)).max().unwrap();
            m += count(&cg, &g).min(best);
        }
        let p = if m == 0 {
            1.0 / (cg.len() + 1) as f64
        } else {
            m as f64 / cg.len() as f64
        };
        log_sum += p.ln();
    }
    let mut r = refs[0].len();
    for x in refs {
        let (dx, dr) = (x.len().abs_diff(c.len()), r.abs_diff(c.len()));
        if dx < dr || (dx == dr && x.len() < r) {
            r = x.len();
        }
    }
    let bp = if c.len() < r {
        (1.0 - r as f64 / c.len() as f64).exp()
    } else {
        1.0
    };
    bp * (log_sum / max_n as f64).exp()
}

fn oracle_lcs(a: &[u32], b: &[u32], memo: &mut Vec<Vec<Option<usize>>>) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    if let Some(v) = memo[a.len()][b.len()] {
        return v;
    }
    let v = if a[a.len() - 1] == b[b.len() - 1] {
        1 + oracle_lcs(&a[..a.len() - 1], &b[..b.len() - 1], memo)
    } else {
        oracle_lcs(&a[..a.len() - 1], b, memo).max(oracle_lcs(a, &b[..b.len() - 1], memo))
    };
    memo[a.len()][b.len()] = Some(v);
    v
}

fn oracle_f1(o: usize, c: usize, r: usize) -> f64 {
    if o == 0 {
        return 0.0;
    }
    let p = o as f64 / c as f64;
    let rr = o as f64 / r as f64;
    2.0 * p * rr / (p + rr)
}

fn oracle_rouge(c: &[u32], r: &[u32], v: RougeVariant) -> f64 {
    match v {
        RougeVariant::RL => {
            let mut memo = vec![vec![None; r.len() + 1]; c.len() + 1];
            oracle_f1(oracle_lcs(c, r, &mut memo), c.len(), r.len())
        }
        _ => {
            let n = if v == RougeVariant::R1 { 1 } else { 2 };
            let (cg, rg) = (grams(c, n), grams(r, n));
            if cg.is_empty() && rg.is_empty() {
                return 1.0;
            }
            let o: usize = distinct(&cg).iter().map(|g| count(&cg, g).min(count(&rg, g))).sum();
            oracle_f1(o, cg.len(), rg.len())
        }
    }
}

fn oracle_nist(c: &[u32], refs: &[Vec<u32>], max_n: usize) -> f64 {
    let words: usize = refs.iter().map(|r| r.len()).sum();
    let corpus_count = |g: &[u32]| refs.iter().map(|r| count(&grams(r, g.len()), g)).sum::<usize>();
    let mut score = 0.0;
    for n in 1..=max_n {
        let cg = grams(c, n);
        if cg.is_empty() {
            continue;
        }
        let mut acc = 0.0;
        for g in distinct(&cg) {
            let best = refs.iter().map(|r| count(&grams(r, n), &g)).max().unwrap();
            let m = count(&cg, &g).min(best);
            if m > 0 {
                let num = if n == 1 { words } else { corpus_count(&g[..n - 1]) };
                acc += m as f64 * (num as f64 / corpus_count(&g) as f64).log2();
            }
        }
        score += acc / cg.len() as f64;
    }
    let r_bar = words as f64 / refs.len() as f64;
    let ratio = (c.len() as f64 / r_bar).min(1.0);
    if ratio <= 0.0 {
        return 0.0;
    }
    let beta = 0.5f64.ln() / (2.0f64 / 3.0).ln().powi(2);
    score * (beta * ratio.ln().powi(2)).exp()
}

fn random_seq(rng: &mut Stream, max_len: usize, alphabet: usize) -> Vec<u32> {
    let len = rng.below(max_len + 1);
    (0..len).map(|_| rng.below(alphabet) as u32).collect()
}

#[test]
fn bleu_examples() {
    let r = [w("the cat sat on the mat")];
    assert_eq!(bleu(&w("the cat sat on the mat"), &r, 4).unwrap(), 1.0);
    let b = bleu(&w("a b c"), &[w("a b d")], 1).unwrap();
    assert!(close(b, 2.0 / 3.0, 1e-12));
    // clipped unigram precision 1/3, lengths equal so no brevity penalty
    let b = bleu(&w("the the the"), &[w("the cat sat")], 1).unwrap();
    assert!(close(b, 1.0 / 3.0, 1e-12));
    assert_eq!(
        bleu::<&str>(&w("a"), &[] as &[Vec<&str>], 4),
        Err(MetricError::EmptyReferences)
    );
}

#[test]
fn bleu_smoothing_and_brevity() {
    // "a b" vs "a b c d": p1 = 1, p2 = 1, BP = exp(1 - 4/2)
    let b = bleu(&w("a b"), &[w("a b c d")], 2).unwrap();
    assert!(close(b, (-1.0f64).exp(), 1e-12));
    // no bigram match: p2 = 1/(2+1)
    let b = bleu(&w("a c b"), &[w("a b c")], 2).unwrap();
    assert!(close(b, (1.0f64 * (1.0 / 3.0)).sqrt(), 1e-12));
    // closest reference length picks 3 over 6
    let b = bleu(&w("x y z"), &[w("x y z q r s"), w("x y z")], 4).unwrap();
    assert_eq!(b, 1.0);
}

#[test]
fn rouge_examples() {
    let s = w("a b c d");
    for v in [RougeVariant::R1, RougeVariant::R2, RougeVariant::RL] {
        assert_eq!(rouge(&s, &s, v).unwrap(), 1.0);
        assert_eq!(rouge(&w("x y"), &w("a b"), v).unwrap(), 0.0);
    }
    let l = rouge(&w("a b c d"), &w("a c b d"), RougeVariant::RL).unwrap();
    assert!(close(l, 0.75, 1e-12));
    assert_eq!(rouge(&w("a"), &[], RougeVariant::R1), Err(MetricError::EmptyReference));
    assert_eq!(rouge(&w("a"), &w("a"), RougeVariant::R2).unwrap(), 1.0);
    assert_eq!(rouge(&w("a"), &w("a b"), RougeVariant::R2).unwrap(), 0.0);
}

#[test]
fn nist_examples() {
    let r = [w("a b")];
    assert!(close(nist(&w("a b"), &r, 5).unwrap(), 1.0, 1e-12));
    assert_eq!(nist(&w("x y"), &r, 5).unwrap(), 0.0);
    let refs = [w("a b c a"), w("b c d")];
    let doubled = [w("a b c a"), w("b c d"), w("a b c a"), w("b c d")];
    let cand = w("a b c d");
    assert_eq!(nist(&cand, &refs, 5).unwrap(), nist(&cand, &doubled, 5).unwrap());
}

#[test]
fn nist_brevity_factor_calibration() {
    let beta = nist_beta();
    let l = (2.0f64 / 3.0).ln();
    assert!(close((beta * l * l).exp(), 0.5, 1e-15));
}

#[test]
fn cider_examples() {
    let cands = [w("a b c d e"), w("f g h i j")];
    let refs = vec![vec![w("a b c d e")], vec![w("f g h i j")]];
    assert!(close(cider(&cands, &refs, 4).unwrap(), 1.0, 1e-12));
    let off = [w("x y z w v"), w("q r s t u")];
    assert_eq!(cider(&off, &refs, 4).unwrap(), 0.0);
    let r = cider(&cands[..1], &refs[..1], 4);
    assert_eq!(r, Err(MetricError::CorpusTooSmall(1)));
}

#[test]
fn oracle_equivalence_on_random_pairs() {
    let mut rng = Stream::new(2024);
    for _ in 0..200 {
        let c = random_seq(&mut rng, 20, 6);
        let refs: Vec<Vec<u32>> = (0..1 + rng.below(3))
            .map(|_| {
                let mut r = random_seq(&mut rng, 20, 6);
                if r.is_empty() {
                    r.push(0);
                }
                r
            })
            .collect();
        assert_eq!(
            bleu(&c, &refs, 4).unwrap().to_bits(),
            oracle_bleu(&c, &refs, 4).to_bits()
        );
        assert_eq!(
            nist(&c, &refs, 5).unwrap().to_bits(),
            oracle_nist(&c, &refs, 5).to_bits()
        );
        for v in [RougeVariant::R1, RougeVariant::R2, RougeVariant::RL] {
            assert_eq!(
                rouge(&c, &refs[0], v).unwrap().to_bits(),
                oracle_rouge(&c, &refs[0], v).to_bits()
            );
        }
    }
}

#[test]
fn fuzz_ranges() {
    let mut rng = Stream::new(99);
    let mut cands = Vec::new();
    let mut all_refs = Vec::new();
    for _ in 0..1000 {
        let c = random_seq(&mut rng, 25, 10);
        let mut r = random_seq(&mut rng, 25, 10);
        r.push(1);
        let refs = vec![r];
        let b = bleu(&c, &refs, 4).unwrap();
        assert!((0.0..=1.0).contains(&b));
        for v in [RougeVariant::R1, RougeVariant::R2, RougeVariant::RL] {
            let s = rouge(&c, &refs[0], v).unwrap();
            assert!((0.0..=1.0).contains(&s));
        }
        let n = nist(&c, &refs, 5).unwrap();
        assert!(n >= 0.0 && n.is_finite());
        cands.push(c);
        all_refs.push(refs);
    }
    for item in cider_per_item(&cands, &all_refs, 4).unwrap() {
        assert!((0.0..=1.0 + 1e-12).contains(&item));
    }
}

#[test]
fn evaluate_all_examples() {
    let refs = vec![vec![w("a b c d")], vec![w("e f g h")]];
    let preds = vec![vec![w("a b c d"), w("e f g h")]];
    let rep = evaluate_all(&preds, &refs, &[0]).unwrap();
    assert_eq!(rep.rows.len(), METRIC_NAMES.len());
    for m in ["bleu", "rouge1", "rouge2", "rougeL"] {
        assert_eq!(rep.get(m).unwrap().mean, 1.0);
    }
    assert!(rep.rows.iter().all(|r| r.std == 0.0));
    assert_eq!(rep.per_example.len(), 2);
    let two = vec![preds[0].clone(), vec![w("a b"), w("x y")]];
    let rep = evaluate_all(&two, &refs, &[0, 1]).unwrap();
    assert!(rep.get("bleu").unwrap().std > 0.0);
    assert!(matches!(
        evaluate_all(&two, &refs, &[0]),
        Err(MetricError::LengthMismatch { .. })
    ));
}

proptest! {
    #[test]
    fn reference_order_is_irrelevant(seed in 0u64..2000) {
        let mut rng = Stream::new(seed);
        let c = random_seq(&mut rng, 15, 5);
        let mut refs: Vec<Vec<u32>> = (0..3).map(|_| { let mut r = random_seq(&mut rng, 15, 5); r.push(0); r }).collect();
        let b0 = bleu(&c, &refs, 4).unwrap();
        let n0 = nist(&c, &refs, 5).unwrap();
        refs.reverse();
        refs.swap(0, 1);
        prop_assert_eq!(b0, bleu(&c, &refs, 4).unwrap());
        prop_assert_eq!(n0, nist(&c, &refs, 5).unwrap());
    }

    #[test]
    fn appending_matching_token_keeps_rouge1_recall(seed in 0u64..2000) {
        let mut rng = Stream::new(seed);
        let c = random_seq(&mut rng, 15, 5);
        let mut r = random_seq(&mut rng, 15, 5);
        r.push(3);
        let before = rouge1_recall(&c, &r).unwrap();
        let mut longer = c.clone();
        longer.push(r[rng.below(r.len())]);
        prop_assert!(rouge1_recall(&longer, &r).unwrap() >= before);
    }
}
