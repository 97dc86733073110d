use dba_core::data::{load_embedding_file, EmbeddedDataset};
use dba_core::geometry::project_onto_boundary;
use dba_core::linalg::{dot, norm};
use dba_core::metrics::aulc;
use proptest::prelude::*;

fn vector(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, k)
}

fn plane_and_point() -> impl Strategy<Value = (Vec<f64>, f64, Vec<f64>)> {
    (1usize..12)
        .prop_flat_map(|k| (vector(k), -20.0..20.0f64, vector(k)))
        .prop_filter("nonzero normal", |(w, _, _)| norm(w) > 1e-3)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = 1.0 + norm(a).max(norm(b));
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
}

proptest! {
    #[test]
    fn projection_is_idempotent((w, b, z) in plane_and_point()) {
        let once = project_onto_boundary(&z, &w, b).unwrap();
        let twice = project_onto_boundary(&once, &w, b).unwrap();
        prop_assert!(close(&once, &twice, 1e-12));
    }

    #[test]
    fn projection_ignores_plane_scaling((w, b, z) in plane_and_point(), c in prop_oneof![-1e3..-1e-3f64, 1e-3..1e3f64]) {
        let scaled: Vec<f64> = w.iter().map(|x| c * x).collect();
        let p = project_onto_boundary(&z, &w, b).unwrap();
        let q = project_onto_boundary(&z, &scaled, c * b).unwrap();
        prop_assert!(close(&p, &q, 1e-10));
    }

    #[test]
    fn projection_commutes_with_translation((w, b, z) in plane_and_point(), shift in vector(12)) {
        // Moving space by s moves the plane to w·x + (b - w·s) = 0.
        let s = &shift[..w.len()];
        let moved: Vec<f64> = z.iter().zip(s).map(|(x, d)| x + d).collect();
        let p = project_onto_boundary(&z, &w, b).unwrap();
        let q = project_onto_boundary(&moved, &w, b - dot(&w, s)).unwrap();
        let p_moved: Vec<f64> = p.iter().zip(s).map(|(x, d)| x + d).collect();
        prop_assert!(close(&p_moved, &q, 1e-10));
    }

    #[test]
    fn aulc_is_monotone(acc in prop::collection::vec(0.0..=1.0f64, 2..200), at in any::<prop::sample::Index>(), bump in 0.0..1.0f64) {
        let base = aulc(&acc).unwrap();
        let mut raised = acc.clone();
        let i = at.index(raised.len());
        raised[i] = (raised[i] + bump).min(1.0);
        prop_assert!(aulc(&raised).unwrap() >= base);
        prop_assert!(base <= (acc.len() - 1) as f64);
    }
}

fn check_invariants(d: &EmbeddedDataset) {
    d.validate().unwrap();
    for (z, _) in d.train.iter().chain(&d.test) {
        assert_eq!(z.len(), d.dim);
        assert!(z.iter().all(|x| x.is_finite()));
    }
}

fn token() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("K=2".to_string()),
        Just("n=1".to_string()),
        Just("n=2".to_string()),
        Just("n=18446744073709551615".to_string()),
        Just("split=train".to_string()),
        Just("split=test".to_string()),
        Just("-1".to_string()),
        Just("1".to_string()),
        Just("+1".to_string()),
        Just("2".to_string()),
        Just("0.5".to_string()),
        Just("-3e2".to_string()),
        Just("NaN".to_string()),
        Just("inf".to_string()),
        Just("#".to_string()),
        "[ -~]{0,6}",
    ]
}

fn fuzzed_file() -> impl Strategy<Value = String> {
    let line = prop::collection::vec(token(), 0..5).prop_map(|t| t.join(" "));
    let valid_start = Just("K=2 n=2 split=train\n-1 0 1\n1 1 0\nK=2 n=2 split=test\n-1 0 1\n1 2 2\n".to_string());
    (valid_start, prop::collection::vec(line, 0..10), any::<bool>()).prop_map(|(start, lines, keep)| {
        let noise = lines.join("\n");
        if keep { format!("{start}{noise}") } else { noise }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn loaded_files_satisfy_invariants(text in fuzzed_file()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fuzz.txt");
        std::fs::write(&path, &text).unwrap();
        if let Ok(d) = load_embedding_file(&path) {
            check_invariants(&d);
            // Saving and reloading gives the same dataset.
            let again = dir.path().join("again.txt");
            d.save(&again).unwrap();
            let reloaded = load_embedding_file(&again).unwrap();
            prop_assert_eq!(&reloaded.train, &d.train);
            prop_assert_eq!(&reloaded.test, &d.test);
        }
    }
}
