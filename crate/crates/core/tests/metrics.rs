//! Ranking metrics against a second, deliberately different implementation
//! on random rank lists.

use cdcca::retrieval::{
    average_precision, map, mrr1, recall_precision_curve, QueryTruth, RankList, RankedVenue,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reference AP: precision at k times rel(k), summed, over the relevant count.
fn reference_ap(categories: &[u32], target: u32) -> Option<f64> {
    let total = categories.iter().filter(|&&c| c == target).count();
    if total == 0 {
        return None;
    }
    let mut acc = 0.0;
    for k in 1..=categories.len() {
        if categories[k - 1] == target {
            let prec = categories[..k].iter().filter(|&&c| c == target).count() as f64 / k as f64;
            acc += prec;
        }
    }
    Some(acc / total as f64)
}

fn reference_rr(ids: &[String], truth: &str) -> f64 {
    for (k, id) in ids.iter().enumerate() {
        if id == truth {
            return 1.0 / (k as f64 + 1.0);
        }
    }
    0.0
}

fn random_list(rng: &mut ChaCha8Rng, q: usize) -> RankList {
    let len = rng.random_range(0..=20usize);
    let mut ids: Vec<String> = (0..30).map(|i| format!("v{i:02}")).collect();
    ids.shuffle(rng);
    let ranked: Vec<RankedVenue> = ids[..len]
        .iter()
        .enumerate()
        .map(|(i, id)| RankedVenue {
            venue_id: id.clone(),
            category: rng.random_range(1..=4),
            score: 1.0 - i as f64 / 32.0,
        })
        .collect();
    // sometimes the true venue is missing from the list
    let truth_venue = ids[rng.random_range(0..ids.len().min(len + 5).max(1))].clone();
    RankList {
        truth: QueryTruth {
            query_id: format!("q{q}"),
            venue_id: truth_venue,
            category: rng.random_range(1..=4),
        },
        empty: ranked.is_empty(),
        ranked,
    }
}

#[test]
fn metrics_match_reference_on_random_lists() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let lists: Vec<RankList> = (0..1000).map(|q| random_list(&mut rng, q)).collect();

    let mut ap_sum = 0.0;
    let mut ap_n = 0usize;
    let mut rr_sum = 0.0;
    for l in &lists {
        let cats: Vec<u32> = l.ranked.iter().map(|r| r.category).collect();
        let ids: Vec<String> = l.ranked.iter().map(|r| r.venue_id.clone()).collect();
        let expected = reference_ap(&cats, l.truth.category);
        match (average_precision(l), expected) {
            (Some(a), Some(b)) => {
                assert!((a - b).abs() < 1e-12);
                ap_sum += b;
                ap_n += 1;
            }
            (None, None) => {}
            other => panic!("AP disagreement {other:?}"),
        }
        rr_sum += reference_rr(&ids, &l.truth.venue_id);
    }
    assert!((mrr1(&lists).unwrap() - rr_sum / lists.len() as f64).abs() < 1e-12);
    let m = map(&lists).unwrap();
    assert!((m.map - ap_sum / ap_n as f64).abs() < 1e-12);
    assert_eq!(m.evaluated + m.skipped, lists.len());

    let cutoffs: Vec<usize> = vec![1, 2, 5, 10, 20, 25];
    let curve = recall_precision_curve(&lists, &cutoffs).unwrap();
    for (p, &c) in curve.points.iter().zip(&cutoffs) {
        let (mut rec, mut prec, mut n) = (0.0, 0.0, 0.0);
        for l in &lists {
            let cats: Vec<u32> = l.ranked.iter().map(|r| r.category).collect();
            let total = cats.iter().filter(|&&x| x == l.truth.category).count();
            if total == 0 {
                continue;
            }
            let top = &cats[..c.min(cats.len())];
            let hits = top.iter().filter(|&&x| x == l.truth.category).count() as f64;
            rec += hits / total as f64;
            prec += hits / top.len() as f64;
            n += 1.0;
        }
        assert!((p.recall - rec / n).abs() < 1e-12);
        assert!((p.precision - prec / n).abs() < 1e-12);
    }
    assert!(curve.points.windows(2).all(|w| w[0].recall <= w[1].recall));
    assert!(curve.clamped);
}

#[test]
fn perfect_rankings_give_unit_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for q in 0..100 {
        let mut l = random_list(&mut rng, q);
        let target = l.truth.category;
        l.ranked.sort_by_key(|r| r.category != target);
        if let Some(ap) = average_precision(&l) {
            assert!((ap - 1.0).abs() < 1e-15);
        }
    }
}
