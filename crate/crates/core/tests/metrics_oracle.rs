use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spancode_core::metrics::{
    code_set_metrics, containment_similarity, evidence_metrics, match_evidence_local, MacroUniverse, MatchCounts,
};
use spancode_core::Code;

const POOL: [&str; 8] = ["A00", "A01", "B20", "B21.1", "C30.22", "D62", "E11.65", "I25.10"];

fn random_set(rng: &mut ChaCha8Rng) -> BTreeSet<Code> {
    POOL.iter()
        .filter(|_| rng.random_bool(0.35))
        .map(|c| Code::parse(c).unwrap())
        .collect()
}

/// Recount everything from scratch with plain loops over the code pool.
fn oracle(pairs: &[(BTreeSet<Code>, BTreeSet<Code>)], gold_only: bool) -> (f64, f64, f64, f64) {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    let mut per: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for (gold, pred) in pairs {
        for code in POOL {
            let g = gold.iter().any(|c| c.as_str() == code);
            let p = pred.iter().any(|c| c.as_str() == code);
            let e = per.entry(code).or_default();
            if g && p {
                tp += 1;
                e.0 += 1;
            } else if p {
                fp += 1;
                e.1 += 1;
            } else if g {
                fn_ += 1;
                e.2 += 1;
            }
        }
    }
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let p = div(tp as f64, (tp + fp) as f64);
    let r = div(tp as f64, (tp + fn_) as f64);
    let f = div(2.0 * p * r, p + r);
    let mut f1s = Vec::new();
    for (t, fpc, fnc) in per.values() {
        let observed = t + fpc + fnc > 0;
        let in_gold = t + fnc > 0;
        if (gold_only && in_gold) || (!gold_only && observed) {
            f1s.push(div(2.0 * *t as f64, (2 * t + fpc + fnc) as f64));
        }
    }
    (p, r, f, div(f1s.iter().sum(), f1s.len() as f64))
}

#[test]
fn code_metrics_match_recount_on_random_corpora() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let docs = rng.random_range(0..6);
        let pairs: Vec<_> = (0..docs).map(|_| (random_set(&mut rng), random_set(&mut rng))).collect();
        for (universe, gold_only) in [(MacroUniverse::Observed, false), (MacroUniverse::GoldOnly, true)] {
            let m = code_set_metrics(&pairs, universe);
            let (p, r, f, mf) = oracle(&pairs, gold_only);
            assert!((m.micro_precision - p).abs() < 1e-12);
            assert!((m.micro_recall - r).abs() < 1e-12);
            assert!((m.micro_f1 - f).abs() < 1e-12);
            assert!((m.macro_f1 - mf).abs() < 1e-12, "{pairs:?}");
        }
    }
}

const WORDS: [&str; 6] = ["chest", "pain", "left", "knee", "fever", "cad"];

fn random_span(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(1..4);
    (0..n)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

fn dedup(spans: &[String]) -> Vec<String> {
    let mut seen = HashSet::new();
    spans
        .iter()
        .filter(|s| seen.insert(s.to_lowercase()))
        .cloned()
        .collect()
}

/// Best assignment by trying every choice for each predicted span.
fn exhaustive(pred: &[String], gold: &[String], tau: f64, i: usize, used: &mut Vec<bool>) -> usize {
    if i == pred.len() {
        return 0;
    }
    let mut best = exhaustive(pred, gold, tau, i + 1, used);
    for j in 0..gold.len() {
        if !used[j] && containment_similarity(&pred[i], &gold[j]) >= tau {
            used[j] = true;
            best = best.max(1 + exhaustive(pred, gold, tau, i + 1, used));
            used[j] = false;
        }
    }
    best
}

#[test]
fn local_matching_is_a_maximum_matching() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let pred: Vec<String> = (0..rng.random_range(0..7)).map(|_| random_span(&mut rng)).collect();
        let gold: Vec<String> = (0..rng.random_range(0..7)).map(|_| random_span(&mut rng)).collect();
        let tau = [0.3, 0.5, 0.67, 1.0][rng.random_range(0..4)];
        let (p, g) = (dedup(&pred), dedup(&gold));
        let want = exhaustive(&p, &g, tau, 0, &mut vec![false; g.len()]);
        let got = match_evidence_local(&pred, &gold, tau);
        assert_eq!(got, MatchCounts::new(g.len(), p.len(), want), "{pred:?} {gold:?} {tau}");
    }
}

#[test]
fn evidence_scores_stay_in_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let counts: Vec<MatchCounts> = (0..rng.random_range(0..5))
            .map(|_| {
                let h = rng.random_range(0..5);
                let p = rng.random_range(0..5);
                MatchCounts::new(h, p, rng.random_range(0..=h.min(p)))
            })
            .collect();
        let s = evidence_metrics(&counts);
        for v in [s.recall, s.precision, s.f1] {
            assert!((0.0..=1.0).contains(&v));
        }
        let m: usize = counts.iter().map(|c| c.matched).sum();
        let h: usize = counts.iter().map(|c| c.human).sum();
        let p: usize = counts.iter().map(|c| c.predicted).sum();
        if h + p > 0 {
            assert!((s.f1 - 2.0 * m as f64 / (h + p) as f64).abs() < 1e-12);
        }
    }
}
