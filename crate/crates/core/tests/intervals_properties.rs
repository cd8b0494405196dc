mod common;

use common::*;
use perccal::intervals::*;
use perccal::regress::{fit_ols, se_for, Dataset, SeVariant};
use perccal::resample::{derive_stream, draw_index, StreamKey};
use proptest::prelude::*;

/// Closed-form simple-regression slope of the rows `idx`; `None` when every
/// drawn `x` is the same.
fn slope_of(x: &[f64], y: &[f64], idx: &[usize]) -> Option<f64> {
    let m = idx.len() as f64;
    let xbar = idx.iter().map(|&i| x[i]).sum::<f64>() / m;
    let ybar = idx.iter().map(|&i| y[i]).sum::<f64>() / m;
    let sxx: f64 = idx.iter().map(|&i| (x[i] - xbar).powi(2)).sum();
    if idx.iter().all(|&i| x[i] == x[idx[0]]) {
        return None;
    }
    let sxy: f64 = idx.iter().map(|&i| (x[i] - xbar) * (y[i] - ybar)).sum();
    Some(sxy / sxx)
}

/// Walks the tree for `b1 = b2 = 2` by hand: two outer resamples on streams
/// `[1, j]`, each with two inner resamples on `[1, j, k]`, redrawing
/// degenerate draws from the same stream.
#[test]
fn tiny_tree_matches_hand_trace() {
    let x = [0.3, 1.7, -0.4, 2.2, 0.9];
    let y = [1.1, 2.0, -0.2, 3.9, 1.0];
    let data = Dataset::simple(&x, &y).unwrap();
    let seed = 11;
    let cfg = BootConfig::new(2, 2, seed);
    let theta = slope_of(&x, &y, &[0, 1, 2, 3, 4]).unwrap();

    let draw = |stream: &mut perccal::resample::Stream, base: &[usize]| loop {
        let pos: Vec<usize> = (0..5).map(|_| draw_index(stream, 5)).collect();
        let rows: Vec<usize> = pos.iter().map(|&p| base[p]).collect();
        if let Some(t) = slope_of(&x, &y, &rows) {
            return (rows, t);
        }
    };

    let mut first = Vec::new();
    let mut depths = Vec::new();
    for j in 0..2u64 {
        let mut outer = derive_stream(StreamKey::new(seed, &[1, j]));
        let (rows, t) = draw(&mut outer, &[0, 1, 2, 3, 4]);
        first.push(t);
        let mut below = 0;
        for k in 0..2u64 {
            let mut inner = derive_stream(StreamKey::new(seed, &[1, j, k]));
            let (rows2, t2) = draw(&mut inner, &rows);
            let mut counts = [0; 5];
            rows2.iter().for_each(|&r| counts[r] += 1);
            if counts == [1; 5] {
                below += 1;
            } else {
                assert!((t2 - theta).abs() > 1e-9, "near tie; the trace would be ambiguous");
                below += usize::from(t2 <= theta);
            }
        }
        depths.push(below as f64 / 2.0);
    }

    let h = compute_histograms(&data, 1, &cfg).unwrap();
    assert!((h.theta_hat - theta).abs() < 1e-12);
    for (a, b) in h.first_level.iter().zip(&first) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    assert_eq!(h.depths, depths);
}

/// Four rows on `y = 2x` plus one off the line, all in small integers so
/// every fit that leaves out the odd row is exactly 2 with zero residuals.
fn line_plus_outlier() -> Dataset {
    Dataset::simple(&[0.0, 1.0, 2.0, 3.0, 4.0], &[0.0, 2.0, 9.0, 6.0, 8.0]).unwrap()
}

#[test]
fn degenerate_inner_spread_redraws_the_outer_resample() {
    let data = line_plus_outlier();
    let cfg = BootConfig::new(20, 2, 3);
    // Outer draws that miss the odd row have constant inner estimates.
    let misses = (0..cfg.b1 as u64)
        .filter(|&j| {
            let mut s = derive_stream(StreamKey::new(cfg.master_seed, &[1, j]));
            (0..5).all(|_| draw_index(&mut s, 5) != 2)
        })
        .count();
    assert!(misses > 0, "the redraw path is not exercised");

    let est = boot_t_interval(&data, 1, 0.9, &cfg).unwrap();
    assert_eq!((est.lower, est.upper), ref_boot_t(&data, 1, 0.9, &cfg));
    let est = studentized_interval(&data, 1, 0.9, &cfg).unwrap();
    assert_eq!((est.lower, est.upper), ref_studentized(&data, 1, 0.9, &cfg));
    assert!(est.lower < est.upper);
}

#[test]
fn exhausted_redraws_are_reported() {
    // Two covariate values: a third of the resamples are singular.
    let x = [0.0, 0.0, 0.0, 0.0, 1.0];
    let y = [0.1, 0.4, -0.3, 0.2, 2.0];
    let data = Dataset::simple(&x, &y).unwrap();
    let cfg = BootConfig { max_redraws: 0, ..BootConfig::new(200, 2, 1) };
    assert!(matches!(
        percentile_interval(&data, 1, 0.9, &cfg),
        Err(perccal::Error::TooManyDegenerateResamples { .. })
    ));
    let ok = BootConfig::new(200, 2, 1);
    assert!(percentile_interval(&data, 1, 0.9, &ok).is_ok());
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let data = random_dataset(5, 30, 2);
    let cfg = BootConfig::new(40, 30, 8);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| interval_set(&data, &[0, 1, 2], &Method::ALL, 0.9, &cfg).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(7));
    let h1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| compute_histograms(&data, 1, &cfg));
    let h8 = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap().install(|| compute_histograms(&data, 1, &cfg));
    assert_eq!(h1.unwrap(), h8.unwrap());
}

#[test]
fn calibrated_intervals_nest_across_levels() {
    for seed in 0..100 {
        let data = random_dataset(40_000 + seed, 20, 1);
        let cfg = BootConfig::new(40, 40, seed);
        let hist = compute_histograms(&data, 1, &cfg).unwrap();
        for sided in [Sided::Two, Sided::One] {
            let wide = perc_cal_from_histograms(&hist, 0.99, sided, cfg.b2).unwrap();
            let narrow = perc_cal_from_histograms(&hist, 0.90, sided, cfg.b2).unwrap();
            assert!(wide.lower <= narrow.lower && narrow.upper <= wide.upper, "seed {seed}");
            assert!(wide.lambda_hat.unwrap() >= narrow.lambda_hat.unwrap());
        }
    }
}

#[test]
fn shifting_the_response_moves_only_the_intercept() {
    for seed in 0..5 {
        let data = random_dataset(600 + seed, 25, 1);
        let c = 3.25;
        let shifted = data.with_response(data.response().iter().map(|y| y + c).collect()).unwrap();
        let cfg = BootConfig::new(30, 20, seed);
        let a = interval_set(&data, &[0, 1], &Method::ALL, 0.9, &cfg).unwrap();
        let b = interval_set(&shifted, &[0, 1], &Method::ALL, 0.9, &cfg).unwrap();
        for (m, method) in Method::ALL.iter().enumerate() {
            let (i0, i1) = (a[0][m].as_ref().unwrap(), b[0][m].as_ref().unwrap());
            let (s0, s1) = (a[1][m].as_ref().unwrap(), b[1][m].as_ref().unwrap());
            assert!((i1.upper - (i0.upper + c)).abs() < 1e-9, "{method}");
            assert!((s1.upper - s0.upper).abs() < 1e-9, "{method}");
            if !method.is_one_sided() {
                assert!((i1.lower - (i0.lower + c)).abs() < 1e-9, "{method}");
                assert!((s1.lower - s0.lower).abs() < 1e-9, "{method}");
            }
        }
    }
}

#[test]
fn scaling_the_response_scales_slope_intervals() {
    for seed in 0..5 {
        let data = random_dataset(700 + seed, 25, 2);
        let a_scale = 2.5;
        let scaled = data.with_response(data.response().iter().map(|y| a_scale * y).collect()).unwrap();
        let cfg = BootConfig::new(30, 20, seed);
        let a = interval_set(&data, &[1, 2], &Method::ALL, 0.9, &cfg).unwrap();
        let b = interval_set(&scaled, &[1, 2], &Method::ALL, 0.9, &cfg).unwrap();
        for c in 0..2 {
            for (m, method) in Method::ALL.iter().enumerate() {
                let (x, y) = (a[c][m].as_ref().unwrap(), b[c][m].as_ref().unwrap());
                assert!((y.upper - a_scale * x.upper).abs() < 1e-9 * (1.0 + y.upper.abs()), "{method}");
                if !method.is_one_sided() {
                    assert!((y.lower - a_scale * x.lower).abs() < 1e-9 * (1.0 + y.lower.abs()), "{method}");
                }
            }
        }
    }
}

#[test]
fn noiseless_data_gives_points_at_the_slope() {
    let data = noiseless(15);
    let cfg = BootConfig::new(25, 25, 2);
    for (est, method) in interval_set(&data, &[1], &Method::ALL, 0.9, &cfg).unwrap()[0].iter().zip(Method::ALL) {
        let est = est.as_ref().unwrap();
        assert!((est.upper - 2.0).abs() < 1e-12, "{method}");
        assert!(est.contains(2.0) || (est.upper - 2.0).abs() < 1e-12, "{method}");
        if !method.is_one_sided() {
            assert!(est.length().abs() < 1e-12, "{method}");
        }
    }
}

#[test]
fn estimate_lies_inside_percentile_and_calibrated_intervals() {
    let mut findings = Vec::new();
    for seed in 0..60 {
        let data = random_dataset(50_000 + seed, 30, 1);
        let theta = fit_ols(&data).unwrap().beta_hat[1];
        let cfg = BootConfig::new(60, 40, seed);
        let set = interval_set(&data, &[1], &[Method::Perc, Method::PercCal2], 0.9, &cfg).unwrap();
        for est in &set[0] {
            let est = est.as_ref().unwrap();
            if !est.contains(theta) {
                findings.push(format!("seed {seed} {}: [{}, {}] vs {theta}", est.method, est.lower, est.upper));
            }
        }
    }
    for f in &findings {
        eprintln!("finding: {f}");
    }
    assert!(findings.is_empty(), "{} intervals miss the full-sample estimate", findings.len());
}

#[test]
fn sandwich_half_widths_follow_standard_errors() {
    let data = random_dataset(8, 8, 1);
    let fit = fit_ols(&data).unwrap();
    let z = normal_quantile(0.95);
    for (method, variant) in Method::ALL.iter().filter_map(|m| m.se_variant().map(|v| (*m, v))) {
        let est = sandwich_interval(&data, 1, 0.9, variant).unwrap();
        let se = se_for(&fit, &data, variant, 1).unwrap();
        assert!((est.length() / 2.0 - z * se).abs() < 1e-12, "{method}");
    }
    let hc0 = sandwich_interval(&data, 1, 0.9, SeVariant::Hc0).unwrap();
    let hc1 = sandwich_interval(&data, 1, 0.9, SeVariant::Hc1).unwrap();
    assert!((hc1.length() - (8.0f64 / 6.0).sqrt() * hc0.length()).abs() < 1e-12);
}

#[test]
fn bca_without_adjustment_is_the_percentile_interval() {
    let reps: Vec<f64> = (-50..=50).filter(|&v| v != 0).map(f64::from).collect();
    let jack = vec![1.0; 10];
    let (lo, hi, warn) = bca_from_parts(0.0, &reps, &jack, 0.9).unwrap();
    assert_eq!((lo, hi), percentile_from_replicates(&reps, 0.9).unwrap());
    assert!(warn.is_none());
}

proptest! {
    #[test]
    fn lambda_grows_as_alpha_shrinks(
        depths in prop::collection::vec(0.0..=1.0f64, 2..80),
        a1 in 0.01..0.99f64,
        a2 in 0.01..0.99f64,
        two in any::<bool>(),
    ) {
        let hist = BootstrapHistograms { theta_hat: 0.0, first_level: vec![0.0; depths.len()], depths };
        let sided = if two { Sided::Two } else { Sided::One };
        let (small, large) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        let l_small = calibrate_lambda(&hist, small, sided, 50).unwrap();
        let l_large = calibrate_lambda(&hist, large, sided, 50).unwrap();
        prop_assert!(l_small >= l_large);
        prop_assert!((0.51..=0.99).contains(&l_small));
    }

    #[test]
    fn acceleration_is_odd(values in prop::collection::vec(-5.0..5.0f64, 3..30)) {
        let neg: Vec<f64> = values.iter().map(|v| -v).collect();
        let a = jackknife_acceleration(&values);
        let b = jackknife_acceleration(&neg);
        prop_assert!((a + b).abs() < 1e-9);
    }
}
