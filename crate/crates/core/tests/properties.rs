use ldad_core::metrics::{auc, aupr};
use ldad_core::prompting::{compose_condition, select_keywords, similarities, KeywordEntry, KeywordPool};
use ldad_core::scoring::{erode, fit_zstats, ScoreMap, Stage};
use proptest::prelude::*;

fn unit(v: Vec<f64>) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 1e-3).then(|| v.into_iter().map(|x| x / n).collect())
}

fn pool(raw: Vec<Vec<f64>>) -> Option<KeywordPool> {
    let entries = raw
        .into_iter()
        .enumerate()
        .map(|(i, v)| unit(v).map(|embedding| KeywordEntry { keyword: format!("k{i}"), embedding }))
        .collect::<Option<Vec<_>>>()?;
    KeywordPool::new(entries).ok()
}

proptest! {
    #[test]
    fn prompt_is_invariant_to_image_scale(
        raw in proptest::collection::vec(proptest::collection::vec(0.1f64..1.0, 4), 7),
        image in proptest::collection::vec(0.1f64..1.0, 4),
        scale in 0.01f64..100.0,
    ) {
        let Some(pool) = pool(raw) else { return Ok(()); };
        let scaled: Vec<f64> = image.iter().map(|x| x * scale).collect();
        let a = select_keywords(&similarities(&image, &pool).unwrap(), &pool, 5).unwrap();
        let b = select_keywords(&similarities(&scaled, &pool).unwrap(), &pool, 5).unwrap();
        prop_assert_eq!(a.terms.len(), 5);
        prop_assert_eq!(a.terms.iter().filter(|t| t.1 == 1.0).count() >= 1, true);
        for (x, y) in a.terms.iter().zip(&b.terms) {
            prop_assert_eq!(&x.0, &y.0);
            prop_assert!((x.1 - y.1).abs() < 1e-12);
        }
        let ca = compose_condition(&a, &pool).unwrap();
        let cb = compose_condition(&b, &pool).unwrap();
        for (x, y) in ca.values().iter().zip(cb.values()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn ranking_metrics_ignore_monotone_transforms(
        pos in proptest::collection::vec(-3.0f64..3.0, 1..60),
        neg in proptest::collection::vec(-3.0f64..3.0, 1..60),
    ) {
        let f = |x: &f64| (2.0 * x).exp() + 0.5 * x;
        let tp: Vec<f64> = pos.iter().map(f).collect();
        let tn: Vec<f64> = neg.iter().map(f).collect();
        prop_assert_eq!(auc(&pos, &neg).unwrap(), auc(&tp, &tn).unwrap());
        prop_assert_eq!(aupr(&pos, &neg).unwrap(), aupr(&tp, &tn).unwrap());
        let a = auc(&pos, &neg).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((auc(&neg, &pos).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn erosion_contracts_normalised_maps(
        h in 1usize..10,
        w in 1usize..10,
        v in proptest::collection::vec(0.0f64..10.0, 100),
    ) {
        let values: Vec<f64> = v[..h * w].to_vec();
        let stats = fit_zstats(&v, "val");
        prop_assume!(stats.is_ok());
        let raw = ScoreMap::new("s", h, w, values, Stage::Raw).unwrap();
        let z = raw.normalize(&stats.unwrap()).unwrap();
        let e = erode(&z).unwrap();
        prop_assert!(e.values.iter().zip(&z.values).all(|(a, b)| a <= b));
        let twice = erode(&ScoreMap { stage: Stage::Z, ..e.clone() }).unwrap();
        prop_assert!(twice.values.iter().zip(&e.values).all(|(a, b)| a <= b));
    }
}
