use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn c(groups: &[&[char]]) -> Vec<Vec<char>> {
    groups.iter().map(|g| g.to_vec()).collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

#[test]
fn identical_clusterings_score_one() {
    let g = c(&[&['a', 'b', 'c'], &['d', 'e'], &['f']]);
    for prf in [muc(&g, &g).unwrap(), b_cubed(&g, &g).unwrap(), ceaf_phi4(&g, &g).unwrap()] {
        assert_eq!((prf.precision, prf.recall, prf.f1), (1.0, 1.0, 1.0));
    }
}

#[test]
fn muc_hand_example() {
    // Recall: {a,b,c} splits into 2 parts, {d,e} stays whole:
    // ((3-2) + (2-1)) / (2 + 1). Precision mirrors it: ((2-1) + (3-2)) / (1 + 2).
    let gold = c(&[&['a', 'b', 'c'], &['d', 'e']]);
    let pred = c(&[&['a', 'b'], &['c', 'd', 'e']]);
    let prf = muc(&gold, &pred).unwrap();
    assert!(close(prf.precision, 2.0 / 3.0));
    assert!(close(prf.recall, 2.0 / 3.0));
    assert!(close(prf.f1, 2.0 / 3.0));
}

#[test]
fn muc_all_singletons_has_no_recall() {
    let gold = c(&[&['a', 'b'], &['c', 'd']]);
    let pred = c(&[&['a'], &['b'], &['c'], &['d']]);
    let prf = muc(&gold, &pred).unwrap();
    assert_eq!((prf.recall, prf.f1), (0.0, 0.0));
}

#[test]
fn b_cubed_hand_example() {
    let gold = c(&[&['a', 'b'], &['c']]);
    let pred = c(&[&['a'], &['b'], &['c']]);
    let prf = b_cubed(&gold, &pred).unwrap();
    assert!(close(prf.recall, 2.0 / 3.0));
    assert_eq!(prf.precision, 1.0);
    assert!(close(prf.f1, 0.8));
    let disjoint = b_cubed(&gold, &c(&[&['x', 'y']])).unwrap();
    assert_eq!((disjoint.precision, disjoint.recall), (0.0, 0.0));
}

#[test]
fn ceaf_hand_example() {
    let prf = ceaf_phi4(&c(&[&['a', 'b']]), &c(&[&['a']])).unwrap();
    assert!(close(prf.precision, 2.0 / 3.0));
    assert!(close(prf.recall, 2.0 / 3.0));
    assert!(close(prf.f1, 2.0 / 3.0));
}

#[test]
fn mention_f1_examples() {
    assert_eq!(mention_f1(&[1, 2, 3, 4], &[1, 2, 3, 4]).f1, 1.0);
    let half = mention_f1(&[1, 2, 3, 4], &[1, 2]);
    assert_eq!((half.precision, half.recall), (1.0, 0.5));
    assert!(close(half.f1, 2.0 / 3.0));
    assert_eq!(mention_f1(&[1, 2], &[3]).f1, 0.0);
}

#[test]
fn overlapping_clusters_are_rejected() {
    let bad = c(&[&['a', 'b'], &['b']]);
    assert!(matches!(muc(&bad, &bad), Err(Error::InvalidClustering(_))));
    assert!(b_cubed(&c(&[&['a']]), &bad).is_err());
}

#[test]
fn avg_is_mean_of_three() {
    let gold = Document {
        doc_id: "d".into(),
        tokens: vec!["t".into(); 6],
        sentence_starts: vec![0],
        gold_clusters: vec![vec![(0, 1), (2, 3), (4, 5)], vec![(1, 2)]],
    };
    let pred = vec![vec![(0, 1), (2, 3)], vec![(4, 5), (1, 2)]];
    let r = evaluate(std::slice::from_ref(&gold), &[pred], false).unwrap();
    assert_eq!(r.avg_f1, (r.muc.f1 + r.b3.f1 + r.ceaf.f1) / 3.0);
    assert_eq!(r.mention.f1, 1.0);
}

#[test]
fn micro_average_pools_counts() {
    let mut s = Scorer::new(false);
    s.add(&c(&[&['a', 'b']]), &c(&[&['a', 'b']])).unwrap();
    s.add(&c(&[&['x', 'y', 'z']]), &c(&[&['x'], &['y'], &['z']])).unwrap();
    // MUC recall = (1 + 0) / (1 + 2).
    assert!(close(s.result().muc.recall, 1.0 / 3.0));
}

#[test]
fn strip_singletons_drops_predicted_singletons() {
    let mut s = Scorer::new(true);
    s.add(&c(&[&['a', 'b']]), &c(&[&['a', 'b'], &['q']])).unwrap();
    assert_eq!(s.result().mention.precision, 1.0);
}

/// Random partition of `n` mentions with at least one cluster of size ≥ 2.
fn random_clustering(rng: &mut ChaCha8Rng, n: usize, max_clusters: usize) -> Vec<Vec<u32>> {
    loop {
        let k = rng.gen_range(1..=max_clusters.min(n));
        let mut clusters = vec![Vec::new(); k];
        for m in 0..n as u32 {
            clusters[rng.gen_range(0..k)].push(m);
        }
        clusters.retain(|c| !c.is_empty());
        if clusters.iter().any(|c| c.len() >= 2) {
            return clusters;
        }
    }
}

fn shuffled(rng: &mut ChaCha8Rng, clusters: &[Vec<u32>]) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = clusters.to_vec();
    for c in &mut out {
        c.shuffle(rng);
    }
    out.shuffle(rng);
    out
}

/// Best CEAF similarity by trying every injective map from the smaller side.
fn ceaf_brute_force(gold: &[Vec<u32>], pred: &[Vec<u32>]) -> f64 {
    let phi = |k: &Vec<u32>, r: &Vec<u32>| {
        let shared = k.iter().filter(|m| r.contains(m)).count();
        2.0 * shared as f64 / (k.len() + r.len()) as f64
    };
    let (small, large, flip) = if gold.len() <= pred.len() {
        (gold, pred, false)
    } else {
        (pred, gold, true)
    };
    fn go(i: usize, used: &mut Vec<bool>, score: &dyn Fn(usize, usize) -> f64, n: usize) -> f64 {
        if i == n {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                best = best.max(score(i, j) + go(i + 1, used, score, n));
                used[j] = false;
            }
        }
        best
    }
    let score = |i: usize, j: usize| {
        if flip {
            phi(&large[j], &small[i])
        } else {
            phi(&small[i], &large[j])
        }
    };
    go(0, &mut vec![false; large.len()], &score, small.len())
}

#[test]
fn ceaf_alignment_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let n = rng.gen_range(2..=12);
        let gold = random_clustering(&mut rng, n, 6);
        let pred = random_clustering(&mut rng, n, 6);
        let (fast, _) = max_weight_assignment(&phi4_matrix(&gold, &pred).unwrap());
        assert!((fast - ceaf_brute_force(&gold, &pred)).abs() < 1e-9);
    }
}

#[test]
fn perfect_iff_identical_on_random_clusterings() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..1000 {
        let n = rng.gen_range(2..=15);
        let gold = random_clustering(&mut rng, n, 6);
        let same = shuffled(&mut rng, &gold);
        for prf in [
            muc(&gold, &same).unwrap(),
            b_cubed(&gold, &same).unwrap(),
            ceaf_phi4(&gold, &same).unwrap(),
        ] {
            assert_eq!((prf.precision, prf.recall, prf.f1), (1.0, 1.0, 1.0));
        }
        let other = random_clustering(&mut rng, n, 6);
        let canon = |c: &[Vec<u32>]| {
            let mut v: Vec<Vec<u32>> = c.iter().map(|x| {
                let mut x = x.clone();
                x.sort();
                x
            }).collect();
            v.sort();
            v
        };
        if canon(&other) != canon(&gold) {
            let perfect = |p: Prf| p.precision == 1.0 && p.recall == 1.0;
            assert!(!perfect(b_cubed(&gold, &other).unwrap()));
            assert!(!perfect(ceaf_phi4(&gold, &other).unwrap()));
        }
    }
}

proptest! {
    #[test]
    fn metrics_ignore_cluster_and_mention_order(seed in any::<u64>(), n in 2usize..14) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gold = random_clustering(&mut rng, n, 5);
        let pred = random_clustering(&mut rng, n, 5);
        let gold2 = shuffled(&mut rng, &gold);
        let pred2 = shuffled(&mut rng, &pred);
        prop_assert_eq!(muc(&gold, &pred).unwrap(), muc(&gold2, &pred2).unwrap());
        let b = b_cubed(&gold, &pred).unwrap();
        let b2 = b_cubed(&gold2, &pred2).unwrap();
        prop_assert!(close(b.f1, b2.f1));
        let e = ceaf_phi4(&gold, &pred).unwrap();
        let e2 = ceaf_phi4(&gold2, &pred2).unwrap();
        prop_assert!(close(e.f1, e2.f1));
        for prf in [b, e] {
            prop_assert!((0.0..=1.0).contains(&prf.f1));
        }
    }
}
