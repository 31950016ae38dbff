use fogsim::vivaldi::{estimated_distance, VivaldiCoordinate, VivaldiParams};
use fogsim::RngStream;
use rand::Rng;

/// Planar points plus access heights: `d(i, j) = ‖p_i − p_j‖ + h_i + h_j`
/// is a metric, so the matrix satisfies the triangle inequality.
fn synthetic_matrix(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = RngStream::new(seed, "matrix");
    let pts: Vec<(f64, f64, f64)> = (0..n)
        .map(|_| {
            (
                rng.gen_range(0.0..40.0),
                rng.gen_range(0.0..40.0),
                rng.gen_range(0.5..3.0),
            )
        })
        .collect();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (pts[i], pts[j]);
            m[i][j] = (a.0 - b.0).hypot(a.1 - b.1) + a.2 + b.2;
            m[j][i] = m[i][j];
        }
    }
    m
}

fn median_relative_error(coords: &[VivaldiCoordinate], m: &[Vec<f64>]) -> f64 {
    let mut errs = Vec::new();
    for i in 0..coords.len() {
        for j in i + 1..coords.len() {
            errs.push((estimated_distance(&coords[i], &coords[j]) - m[i][j]).abs() / m[i][j]);
        }
    }
    errs.sort_by(f64::total_cmp);
    errs[errs.len() / 2]
}

/// Runs `updates` random pairwise updates, recording the median error after
/// each count listed in `checkpoints`.
fn converge(m: &[Vec<f64>], seed: u64, checkpoints: &[usize]) -> Vec<f64> {
    let params = VivaldiParams::default();
    let mut coords = vec![VivaldiCoordinate::origin(&params); m.len()];
    let mut pick = RngStream::new(seed, "pairs");
    let mut dir = RngStream::new(seed, "vivaldi-dir");
    let mut out = Vec::new();
    let last = *checkpoints.iter().max().unwrap();
    for step in 1..=last {
        let i = pick.gen_range(0..m.len());
        let mut j = pick.gen_range(0..m.len() - 1);
        if j >= i {
            j += 1;
        }
        let remote = coords[j];
        coords[i].update(&remote, m[i][j], &params, &mut dir).unwrap();
        if checkpoints.contains(&step) {
            out.push(median_relative_error(&coords, m));
        }
    }
    out
}

#[test]
fn synthetic_matrix_is_metric() {
    let m = synthetic_matrix(29, 1);
    for i in 0..29 {
        for j in 0..29 {
            assert_eq!(m[i][j], m[j][i]);
            for k in 0..29 {
                assert!(m[i][k] <= m[i][j] + m[j][k] + 1e-12);
            }
        }
    }
}

#[test]
fn error_falls_with_more_updates() {
    for seed in 0..20 {
        let m = synthetic_matrix(29, seed);
        let e = converge(&m, seed, &[10, 1000, 5000]);
        assert!(e[1] < e[0], "seed {seed}: {e:?}");
        assert!(e[1] < 0.25, "seed {seed}: {e:?}");
        assert!(e[2] <= e[1] + 0.05, "seed {seed}: {e:?}");
    }
}

#[test]
fn two_nodes_converge_quickly() {
    let params = VivaldiParams::default();
    let mut dir = RngStream::new(3, "vivaldi-dir");
    for rtt in [0.5, 4.0, 25.0, 90.0] {
        let mut c = [VivaldiCoordinate::origin(&params); 2];
        let mut first_hit = None;
        for step in 0..200 {
            let (i, j) = (step % 2, 1 - step % 2);
            let remote = c[j];
            c[i].update(&remote, rtt, &params, &mut dir).unwrap();
            let rel = (estimated_distance(&c[0], &c[1]) - rtt).abs() / rtt;
            if rel < 0.01 && first_hit.is_none() {
                first_hit = Some(step + 1);
            }
        }
        let rel = (estimated_distance(&c[0], &c[1]) - rtt).abs() / rtt;
        assert!(rel < 0.01, "rtt {rtt}: final error {rel}");
    }
}
