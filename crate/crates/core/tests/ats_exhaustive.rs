use helmsman_core::ats::{sample, standardize, FrameManifest};

/// Key-frame positions by direct evaluation in floating point, rounded only
/// where the product is within rounding error of an integer.
fn oracle(n: usize, k: usize) -> Vec<usize> {
    if k == 1 {
        return vec![1];
    }
    let mut out: Vec<usize> = Vec::new();
    for step in 1..=k {
        let exact = (step - 1) as f64 * (n - 1) as f64 / (k - 1) as f64;
        let nearest = exact.round();
        let floor = if (exact - nearest).abs() < 1e-9 { nearest } else { exact.floor() };
        let idx = floor as usize + 1;
        if !out.contains(&idx) {
            out.push(idx);
        }
    }
    out
}

#[test]
fn standardize_matches_direct_evaluation_everywhere() {
    for n in 1..=1000 {
        for k in 1..=64 {
            let got = standardize(n, k).unwrap();
            assert_eq!(got.indices, oracle(n, k), "N={n} K={k}");
            assert_eq!(got.requested_k, k);
            assert_eq!(got.len(), k.min(n));
            assert_eq!(got.indices.first(), Some(&1));
            if k >= 2 {
                assert_eq!(got.indices.last(), Some(&n));
            }
        }
    }
}

#[test]
fn spot_values() {
    assert_eq!(standardize(10, 4).unwrap().indices, [1, 4, 7, 10]);
    assert_eq!(standardize(100, 2).unwrap().indices, [1, 100]);
    assert_eq!(standardize(1, 3).unwrap().indices, [1]);
    assert!(standardize(0, 3).is_err());
    assert!(standardize(5, 0).is_err());
}

#[test]
fn sample_returns_frames_in_order() {
    let m = FrameManifest::new("c", (1..=10).map(|i| format!("{i:02}.jpg")).collect()).unwrap();
    let picked: Vec<String> = sample(&m, 4).unwrap().into_iter().map(|f| f.reference).collect();
    assert_eq!(picked, ["01.jpg", "04.jpg", "07.jpg", "10.jpg"]);
}
