use std::collections::BTreeMap;

use num::rational::BigRational;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dataset::Turn;
use crate::distribution::build_reverse_index;
use crate::entity::EntitySet;
use crate::scalar::Probability;

const ALL: [Perspective; 4] = Perspective::ALL;

fn key(p: Perspective, s: &str) -> EntityKey {
    EntityKey::parse(p, s).unwrap()
}

fn index_with(p: Perspective, sizes: &[(&str, usize)]) -> ReverseIndex {
    let mut idx = ReverseIndex::new(p);
    for (e, n) in sizes {
        idx.postings
            .insert(key(p, e), (0..*n).map(|i| format!("x{i}")).collect());
    }
    idx.corpus_size = sizes.iter().map(|s| s.1).max().unwrap_or(0);
    idx
}

fn instance(id: &str, ents: &[(Perspective, &[&str])]) -> DataInstance {
    let mut i = DataInstance::new(id, None, vec![Turn::human("q")]);
    for p in ALL {
        i.entities.insert(p, EntitySet::new());
    }
    for (p, items) in ents {
        i.entities.insert(*p, items.iter().map(|s| key(*p, s)).collect());
    }
    i
}

fn ratio(n: u64, d: u64) -> BigRational {
    BigRational::from_ratio(n, d)
}

#[test]
fn raw_probabilities() {
    let idx = index_with(Perspective::Token, &[("dog", 600), ("cat", 120), ("gnu", 6)]);
    let d: ProbabilityDictionary<BigRational> = ProbabilityDictionary::build(&idx, 120).unwrap();
    assert_eq!(d.raw_p(&key(Perspective::Token, "dog")), Some(&ratio(1, 5)));
    assert_eq!(d.raw_p(&key(Perspective::Token, "cat")), Some(&ratio(1, 1)));
    assert_eq!(d.sample_p(&key(Perspective::Token, "cat")), ratio(1, 1));
    let f: ProbabilityDictionary<f64> = ProbabilityDictionary::build(&idx, 120).unwrap();
    assert!((f.raw_p(&key(Perspective::Token, "dog")).unwrap() - 0.2).abs() < 1e-12);

    let co = index_with(Perspective::CoOccurrence, &[("a|b", 6)]);
    let d: ProbabilityDictionary<f64> = ProbabilityDictionary::build(&co, 24).unwrap();
    let k = key(Perspective::CoOccurrence, "a|b");
    assert_eq!(d.raw_p(&k), Some(&4.0));
    assert_eq!(d.sample_p(&k), 1.0);

    assert!(ProbabilityDictionary::<f64>::build(&idx, 0).is_err());
    assert!(ProbabilityDictionary::<f64>::build(&ReverseIndex::new(Perspective::Token), 1).is_err());
}

#[test]
fn pass_with_certain_entities_and_empty_sets() {
    let idx = index_with(Perspective::Token, &[("a", 1), ("b", 2)]);
    let d: ProbabilityDictionary<f64> = ProbabilityDictionary::build(&idx, 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..100 {
        let i = instance("i", &[(Perspective::Token, &["a", "b"])]);
        assert!(perspective_pass(&i, &d, &mut rng).unwrap().0);
    }
    let empty = instance("e", &[]);
    assert!(!perspective_pass(&empty, &d, &mut rng).unwrap().0);
}

#[test]
fn missing_entity_is_treated_as_tail() {
    let idx = index_with(Perspective::Token, &[("a", 1000)]);
    let d: ProbabilityDictionary<f64> = ProbabilityDictionary::build(&idx, 1).unwrap();
    let i = instance("i", &[(Perspective::Token, &["unseen"])]);
    let (ok, missing) = perspective_pass(&i, &d, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(ok);
    assert_eq!(missing, 1);
}

/// Two entities at 0.5 each: closed form 1 − 0.5·0.5.
#[test]
fn two_half_entities_monte_carlo() {
    let idx = index_with(Perspective::Token, &[("a", 4), ("b", 4)]);
    let d: ProbabilityDictionary<f64> = ProbabilityDictionary::build(&idx, 2).unwrap();
    let i = instance("i", &[(Perspective::Token, &["a", "b"])]);
    let expect = 1.0 - 0.5 * 0.5;
    let runs = 100_000u64;
    let hits = (0..runs)
        .filter(|s| perspective_pass(&i, &d, &mut rng::stream(*s, "i", "tok")).unwrap().0)
        .count() as f64;
    let se = (expect * (1.0 - expect) / runs as f64).sqrt();
    assert!((hits / runs as f64 - expect).abs() < 3.0 * se);
}

fn all_tail_dicts() -> ProbabilityDicts<f64> {
    ALL.iter()
        .map(|p| {
            let name = if *p == Perspective::CoOccurrence { "a|b" } else { "t" };
            (
                *p,
                ProbabilityDictionary::build(&index_with(*p, &[(name, 1)]), 5).unwrap(),
            )
        })
        .collect()
}

#[test]
fn keep_rule_examples() {
    let dicts = all_tail_dicts();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let one_tail = instance("one", &[(Perspective::Token, &["t"])]);
    let all_four = instance(
        "four",
        &[
            (Perspective::Token, &["t"]),
            (Perspective::Object, &["t"]),
            (Perspective::CoOccurrence, &["a|b"]),
            (Perspective::Interrogation, &["t"]),
        ],
    );
    let three = instance(
        "three",
        &[
            (Perspective::Token, &["t"]),
            (Perspective::Object, &["t"]),
            (Perspective::Interrogation, &["t"]),
        ],
    );
    let r0 = Rebalancer::new(&dicts, RebalanceConfig::new(0, 1.0, 7)).unwrap();
    assert!(r0.decide(&one_tail).unwrap().keep);
    let r3 = Rebalancer::new(&dicts, RebalanceConfig::new(3, 1.0, 7)).unwrap();
    assert!(r3.decide(&all_four).unwrap().keep);
    let d = r3.decide(&three).unwrap();
    assert_eq!(d.pass_count(), 3);
    assert!(!d.keep);

    let res = rebalance(&[one_tail, all_four.clone(), three], &r3, &pool).unwrap();
    assert_eq!(res.kept, ["four"]);
    assert_eq!(res.total, 3);
    assert_eq!(
        res.per_perspective[&Perspective::CoOccurrence],
        PassStats {
            evaluated: 3,
            passed: 1
        }
    );
    assert!((res.retention_rate() - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn config_validation() {
    let dicts = all_tail_dicts();
    assert!(RebalanceConfig::new(4, 1.0, 0).validate().is_err());
    assert!(RebalanceConfig::new(0, 0.0, 0).validate().is_err());
    assert!(RebalanceConfig::new(0, 1.5, 0).validate().is_err());
    let mut c = RebalanceConfig::new(1, 1.0, 0);
    c.perspectives = vec![Perspective::Token];
    assert!(c.validate().is_err());
    c.n_p = 0;
    assert!(Rebalancer::new(&dicts, c).is_ok());
    let mut partial = dicts.clone();
    partial.remove(&Perspective::Object);
    assert!(Rebalancer::new(&partial, RebalanceConfig::new(0, 1.0, 0)).is_err());
}

fn dicts_with_q(q: [(u64, u64); 4]) -> (ProbabilityDicts<BigRational>, DataInstance) {
    // one entity per perspective with raw_p = tau / n
    let mut dicts = BTreeMap::new();
    let mut ents: Vec<(Perspective, &[&str])> = Vec::new();
    for (p, (tau, n)) in ALL.iter().zip(q) {
        let name = if *p == Perspective::CoOccurrence { "a|b" } else { "e" };
        let idx = index_with(*p, &[(name, n as usize)]);
        dicts.insert(*p, ProbabilityDictionary::build(&idx, tau).unwrap());
        ents.push((
            *p,
            if *p == Perspective::CoOccurrence {
                &["a|b"]
            } else {
                &["e"]
            },
        ));
    }
    (dicts, instance("i", &ents))
}

#[test]
fn oracle_examples() {
    let (d, i) = dicts_with_q([(5, 1), (5, 1), (5, 1), (5, 1)]);
    assert_eq!(
        retention_oracle(&i, &d, &RebalanceConfig::new(3, 1.0, 0)).unwrap(),
        ratio(1, 1)
    );

    let (d, mut i) = dicts_with_q([(5, 1), (5, 1), (5, 1), (5, 1)]);
    i.entities.insert(Perspective::CoOccurrence, EntitySet::new());
    i.entities.insert(Perspective::Interrogation, EntitySet::new());
    assert_eq!(
        retention_oracle(&i, &d, &RebalanceConfig::new(2, 1.0, 0)).unwrap(),
        ratio(0, 1)
    );

    let (d, i) = dicts_with_q([(1, 2), (1, 2), (1, 2), (1, 2)]);
    let p = retention_oracle(&i, &d, &RebalanceConfig::new(2, 1.0, 0)).unwrap();
    // P(X >= 3), X ~ Bin(4, 1/2): (C(4,3) + C(4,4)) / 2^4
    let binom = |n: u64, k: u64| (0..k).fold(1u64, |acc, j| acc * (n - j) / (j + 1));
    assert_eq!(p, ratio(binom(4, 3) + binom(4, 4), 16));
    assert_eq!(p, ratio(5, 16));
}

#[test]
fn tail_safety_gives_alpha() {
    let (d, i) = dicts_with_q([(10, 3), (7, 7), (9, 2), (1, 1)]);
    let mut c = RebalanceConfig::new(3, 0.75, 0);
    assert_eq!(retention_oracle(&i, &d, &c).unwrap(), ratio(3, 4));
    c.n_p = 0;
    assert_eq!(retention_oracle(&i, &d, &c).unwrap(), ratio(3, 4));
}

#[test]
fn thread_count_does_not_change_decisions() {
    let mut idx = ReverseIndex::new(Perspective::Token);
    let corpus: Vec<DataInstance> = (0..300)
        .map(|n| {
            let a = format!("e{}", n % 5);
            let b = format!("e{}", n % 17);
            instance(&format!("i{n}"), &[(Perspective::Token, &[a.as_str(), b.as_str()])])
        })
        .collect();
    for i in &corpus {
        idx.add(i).unwrap();
    }
    let mut dicts = BTreeMap::new();
    dicts.insert(
        Perspective::Token,
        ProbabilityDictionary::<f64>::build(&idx, 12).unwrap(),
    );
    let mut c = RebalanceConfig::new(0, 0.9, 42);
    c.perspectives = vec![Perspective::Token];
    let r = Rebalancer::new(&dicts, c).unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let eight = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap();
    let a = rebalance(&corpus, &r, &one).unwrap();
    let b = rebalance(&corpus, &r, &eight).unwrap();
    assert_eq!(a, b);
    assert!(!a.kept.is_empty() && a.kept.len() < corpus.len());
    // subsequence of the input
    let pos: Vec<usize> = a
        .kept
        .iter()
        .map(|id| corpus.iter().position(|i| &i.id == id).unwrap())
        .collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn dicts_from_indexes() {
    let corpus = vec![
        instance("1", &[(Perspective::Token, &["a"])]),
        instance("2", &[(Perspective::Token, &["a", "b"])]),
    ];
    let mut indexes = BTreeMap::new();
    for p in ALL {
        indexes.insert(p, build_reverse_index(&corpus, p).unwrap());
    }
    let taus: BTreeMap<_, _> = ALL.iter().map(|p| (*p, 1)).collect();
    let dicts: ProbabilityDicts<f64> = build_probability_dicts(&indexes, &taus).unwrap();
    assert_eq!(dicts.len(), 1, "empty indexes have no dictionary");
    assert_eq!(
        dicts[&Perspective::Token].raw_p(&key(Perspective::Token, "a")),
        Some(&0.5)
    );
    let mut missing = taus.clone();
    missing.remove(&Perspective::Token);
    assert!(build_probability_dicts::<f64>(&indexes, &missing).is_err());
}

proptest! {
    #[test]
    fn raising_tau_never_lowers_retention(
        sizes in prop::collection::vec(1usize..40, 4),
        taus in prop::collection::vec(1u64..30, 4),
        bump in 0usize..4,
        n_p in 0usize..4,
    ) {
        let mut q = [(0u64, 0u64); 4];
        for k in 0..4 {
            q[k] = (taus[k], sizes[k] as u64);
        }
        let (d0, i) = dicts_with_q(q);
        q[bump].0 += 5;
        let (d1, _) = dicts_with_q(q);
        let c = RebalanceConfig::new(n_p, 1.0, 0);
        let before = retention_oracle(&i, &d0, &c).unwrap();
        let after = retention_oracle(&i, &d1, &c).unwrap();
        prop_assert!(after >= before);
        prop_assert!(after <= ratio(1, 1));
        // the f64 route agrees with the exact one
        let f0: ProbabilityDicts<f64> = ALL.iter().map(|p| {
            let name = if *p == Perspective::CoOccurrence { "a|b" } else { "e" };
            (*p, ProbabilityDictionary::build(&index_with(*p, &[(name, sizes[p.index()])]), taus[p.index()]).unwrap())
        }).collect();
        prop_assert!((retention_oracle(&i, &f0, &c).unwrap() - before.to_f64_lossy()).abs() < 1e-12);
    }
}
