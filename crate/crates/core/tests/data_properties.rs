use std::collections::HashMap;

use proptest::prelude::*;

use pada_core::data::{
    aggregate_ratings, read_csv_with_sidecar, split_indices, write_csv, Domain, DomainMatrix, DomainStandardizer,
    FeatureSchema, GenreAssignment, Rating, SplitSpec,
};
use pada_core::{Class, DenseMatrix};

fn schema(c: usize, s: usize, t: usize) -> FeatureSchema {
    let names = |p: &str, n: usize| (0..n).map(|i| format!("{p}{i}")).collect();
    FeatureSchema {
        common: names("c", c),
        source_specific: names("s", s),
        target_specific: names("t", t),
        label_column: Some("y".into()),
        positive_value: Some("1".into()),
    }
}

fn matrix_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>, Vec<bool>)> {
    (1usize..20, 1usize..4, 1usize..4).prop_flat_map(|(n, c, t)| {
        (
            Just(n),
            Just(c),
            prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, n * c),
            prop::collection::vec(-1e6f64..1e6, n * t),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip_preserves_every_bit((n, c, common, specific, labels) in matrix_strategy()) {
        let t = specific.len() / n;
        let m = DomainMatrix::new(
            Domain::Target,
            schema(c, 2, t),
            DenseMatrix::new(n, c, common).unwrap(),
            DenseMatrix::new(n, t, specific).unwrap(),
            Some(labels.into_iter().map(|b| if b { Class::Positive } else { Class::Negative }).collect()),
        ).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_csv(&m, &path).unwrap();
        let back = read_csv_with_sidecar(&path).unwrap();
        let bits = |x: &DenseMatrix| x.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(back.common()), bits(m.common()));
        prop_assert_eq!(bits(back.specific()), bits(m.specific()));
        prop_assert_eq!(back.labels(), m.labels());
        prop_assert_eq!(back.schema(), m.schema());
    }

    #[test]
    fn split_is_a_stratified_partition(
        labels in prop::collection::vec(any::<bool>(), 30..200),
        seed in any::<u64>(),
    ) {
        let labels: Vec<Class> = labels.into_iter().map(|b| if b { Class::Positive } else { Class::Negative }).collect();
        let positives = labels.iter().filter(|l| **l == Class::Positive).count();
        prop_assume!(positives >= 10 && labels.len() - positives >= 10);
        let spec = SplitSpec { seed, ..SplitSpec::default() };
        let (train, val, test) = split_indices(labels.len(), Some(&labels), &spec).unwrap();
        let mut all: Vec<usize> = train.iter().chain(&val).chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        // each part keeps the class ratio up to rounding of each class separately
        for part in [&train, &val, &test] {
            let p = part.iter().filter(|&&i| labels[i] == Class::Positive).count() as f64;
            let expected = positives as f64 * part.len() as f64 / labels.len() as f64;
            prop_assert!((p - expected).abs() <= 2.0, "{} vs {}", p, expected);
        }
        prop_assert_eq!(split_indices(labels.len(), Some(&labels), &spec).unwrap(), (train, val, test));
    }

    #[test]
    fn aggregation_matches_direct_definition(
        triples in prop::collection::vec((0usize..5, 0usize..6, 1u8..=10), 1..40),
        shuffle_seed in any::<u64>(),
    ) {
        let genre_names = ["g0", "g1", "g2", "g3"];
        // item i carries genres {i mod 4, (i + 1) mod 4}
        let genres: HashMap<String, Vec<String>> = (0..6)
            .map(|i| (format!("i{i}"), vec![genre_names[i % 4].to_string(), genre_names[(i + 1) % 4].to_string()]))
            .collect();
        let assignment = GenreAssignment {
            common: vec!["g0".into(), "g1".into()],
            source_specific: vec!["g2".into()],
            target_specific: vec!["g3".into()],
            label_genre: "g1".into(),
        };
        let mut ratings: Vec<Rating> = triples
            .iter()
            .map(|&(u, i, r)| Rating { user: format!("u{u}"), item: format!("i{i}"), rating: r as f64 / 2.0 })
            .collect();
        let out = aggregate_ratings(&ratings, &genres, &assignment, Domain::Source).unwrap();
        for (row, user) in out.users.iter().enumerate() {
            let mine: Vec<&Rating> = ratings.iter().filter(|r| &r.user == user).collect();
            let overall = mine.iter().map(|r| r.rating).sum::<f64>() / mine.len() as f64;
            let dev = |g: &str| {
                let v: Vec<f64> = mine.iter().filter(|r| genres[&r.item].iter().any(|x| x == g)).map(|r| r.rating).collect();
                if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 - overall }
            };
            prop_assert!((out.matrix.common().get(row, 0) - dev("g0")).abs() < 1e-12);
            prop_assert!((out.matrix.specific().get(row, 0) - dev("g2")).abs() < 1e-12);
            let label = if dev("g1") > 0.0 { Class::Positive } else { Class::Negative };
            prop_assert_eq!(out.matrix.labels().unwrap()[row], label);
        }
        // input order never matters
        let mut rng = pada_core::RngSeed(shuffle_seed).rng();
        rng.shuffle(&mut ratings);
        let again = aggregate_ratings(&ratings, &genres, &assignment, Domain::Source).unwrap();
        prop_assert_eq!(again.matrix, out.matrix);
    }
}

#[test]
fn standardized_target_train_common_block_is_centered() {
    let s = schema(3, 2, 2);
    let mut rng = pada_core::RngSeed(4).rng();
    let mut block = |n: usize, c: usize, shift: f64| {
        DenseMatrix::new(n, c, (0..n * c).map(|_| shift + 3.0 * rng.normal()).collect()).unwrap()
    };
    let source = DomainMatrix::new(Domain::Source, s.clone(), block(50, 3, 5.0), block(50, 2, -1.0), None).unwrap();
    let target = DomainMatrix::new(Domain::Target, s, block(80, 3, -2.0), block(80, 2, 7.0), None).unwrap();
    let st = DomainStandardizer::fit(&source, &target);
    let t = st.apply(&target).unwrap();
    for m in t.common().column_means().iter().chain(&t.specific().column_means()) {
        assert!(m.abs() < 1e-10);
    }
    // source common columns are scaled with target statistics, so the shift survives
    let sc = st.apply(&source).unwrap().common().column_means();
    assert!(sc.iter().all(|m| *m > 1.0));
}
