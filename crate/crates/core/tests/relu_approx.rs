use proptest::prelude::*;
use tfnewton::relu_approx::*;

fn sup_error(p: &PwlApprox, f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> f64 {
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .map(|x| (p.eval(x) - f(x)).abs())
        .fold(0.0, f64::max)
}

fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn linear_functions_are_exact() {
    for pieces in [1, 3, 17] {
        let p = build_pwl(|x| 2.5 * x - 0.75, -3.0, 4.0, pieces).unwrap();
        assert!(sup_error(&p, |x| 2.5 * x - 0.75, -3.0, 4.0, 1001) <= 1e-14);
    }
}

#[test]
fn knots_are_uniform_and_pinned() {
    let p = build_pwl(f64::sin, -1.0, 2.0, 7).unwrap();
    assert_eq!(p.knots[0], -1.0);
    assert_eq!(*p.knots.last().unwrap(), 2.0);
    assert!(p.knots.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(p.pieces(), 7);
}

#[test]
fn build_rejects_bad_arguments() {
    assert!(build_pwl(f64::sin, 1.0, 1.0, 4).is_err());
    assert!(build_pwl(f64::sin, 0.0, 1.0, 0).is_err());
    assert!(build_pwl(|x| 1.0 / x, 0.0, 1.0, 4).is_err());
}

#[test]
fn curvature_weight_error_is_below_four_over_n() {
    for n in [250, 1000, 4000] {
        let p = build_pwl(sigmoid_derivative, -10.0, 10.0, n).unwrap();
        let err = sup_error(&p, sigmoid_derivative, -10.0, 10.0, 100_001);
        assert!(err <= 4.0 / n as f64, "N={n}: {err}");
    }
}

#[test]
fn curvature_weight_error_decays_quadratically() {
    // A smooth target interpolated on uniform knots has error ~ h²; the
    // 4/N envelope above is loose by a full order.
    let ns = [250.0, 500.0, 1000.0, 2000.0, 4000.0];
    let errs: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let p = build_pwl(sigmoid_derivative, -10.0, 10.0, n as usize).unwrap();
            sup_error(&p, sigmoid_derivative, -10.0, 10.0, 100_001)
        })
        .collect();
    let slope = loglog_slope(&ns, &errs);
    assert!((slope + 2.0).abs() <= 0.15, "slope {slope}");
}

#[test]
fn step_size_approximation_is_monotone_with_sqrt_limited_error() {
    let mu = 0.1;
    let g = step_size_fn(mu);
    let (lo, hi, pieces) = (1e-6, 25.0, 2000);
    let p = build_pwl(&g, lo, hi, pieces).unwrap();
    let grid: Vec<f64> = (0..200_001).map(|i| lo + (hi - lo) * i as f64 / 200_000.0).collect();
    let vals: Vec<f64> = grid.iter().map(|&x| p.eval(x)).collect();
    assert!(vals.windows(2).all(|w| w[1] <= w[0]));
    // Near 0, g ≈ 1 − √z/(2√μ) and chord error of √z on [0, h] peaks at
    // √h/4, so the first segment dominates at about √h/(8√μ).
    let h = (hi - lo) / pieces as f64;
    let err_near_zero = grid.iter().zip(&vals).map(|(&x, v)| (v - g(x)).abs()).fold(0.0, f64::max);
    assert!(err_near_zero <= h.sqrt() / (8.0 * mu.sqrt()), "{err_near_zero}");
    assert!(err_near_zero >= 0.9 * h.sqrt() / (8.0 * mu.sqrt()));
    let err_away = grid.iter().zip(&vals).filter(|(&x, _)| x >= 0.1).map(|(&x, v)| (v - g(x)).abs()).fold(0.0, f64::max);
    assert!(err_away <= 2e-3, "{err_away}");
}

#[test]
fn evaluation_at_knots_midpoints_and_outside() {
    let p = build_pwl(|x| x * x * x, -1.0, 1.0, 8).unwrap();
    for (k, v) in p.knots.iter().zip(&p.values) {
        assert_eq!(eval_pwl(&p, *k), *v);
    }
    for i in 0..8 {
        let mid = 0.5 * (p.knots[i] + p.knots[i + 1]);
        let want = 0.5 * (p.values[i] + p.values[i + 1]);
        assert!((eval_pwl(&p, mid) - want).abs() <= 1e-16);
    }
    assert_eq!(eval_pwl(&p, 3.0), *p.values.last().unwrap());
    assert_eq!(eval_pwl(&p, -3.0), p.values[0]);
    let mut q = p.clone();
    q.clamp_outside = false;
    let slope = (q.values[8] - q.values[7]) / (q.knots[8] - q.knots[7]);
    assert!((eval_pwl(&q, 2.0) - (q.values[8] + slope)).abs() <= 1e-14);
}

#[test]
fn signed_copy_cases() {
    assert!((signed_copy(0.3, 1.0).unwrap() - 0.3).abs() <= 1e-15);
    assert!((signed_copy(0.3, -1.0).unwrap() + 0.3).abs() <= 1e-15);
    assert!((signed_copy(0.999, 1.0).unwrap() - 0.999).abs() <= 1e-15);
    assert!(signed_copy(0.3, 0.5).is_err());
    assert!(signed_copy(1.5, 1.0).is_err());
}

#[test]
fn signed_copy_sweep_matches_multiplication() {
    // x/2 + 2 and then − 2 round to the nearest representable value, so the
    // identity holds to a few ulps of 2, not bit for bit.
    for i in 1..10_000 {
        let x = i as f64 / 10_000.0;
        for y in [-1.0, 1.0] {
            let got = signed_copy(x, y).unwrap();
            assert!((got - x * y).abs() <= 1e-15, "x={x} y={y}: {got}");
        }
    }
}

#[test]
fn cleanup_gadget_negates_inside_its_gate() {
    for x in [-9.9, -1.0, 0.0, 0.37, 9.9] {
        assert!((cleanup_gadget(x, 1.0, 5.0) + x).abs() <= 1e-14);
    }
    assert_eq!(cleanup_gadget(0.4, -1.0, 5.0), 0.0);
}

#[test]
fn product_cases() {
    let pieces = 400;
    let r = (-1.1, 1.1);
    let prod = PwlProduct::new(r, r, pieces).unwrap();
    assert!((prod.eval(0.5, 0.5).unwrap() - 0.25).abs() <= 1e-4);
    let sq_err = prod.error_bound();
    for y in [-1.0, -0.3, 0.0, 0.8] {
        assert!(prod.eval(0.0, y).unwrap().abs() <= 2.0 * sq_err, "y={y}");
    }
    assert!(prod.eval(2.0, 0.0).is_err());
    assert!((pwl_product(0.5, 0.5, r, r, pieces).unwrap() - 0.25).abs() <= 1e-4);
}

#[test]
fn product_error_slope_is_minus_two() {
    let ns = [16.0, 32.0, 64.0, 128.0, 256.0];
    let errs: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let p = PwlProduct::new((-1.0, 1.0), (-1.0, 1.0), n as usize).unwrap();
            let mut worst: f64 = 0.0;
            for i in 0..=200 {
                for j in 0..=200 {
                    let (x, y) = (-1.0 + i as f64 / 100.0, -1.0 + j as f64 / 100.0);
                    worst = worst.max((p.eval(x, y).unwrap() - x * y).abs());
                }
            }
            worst
        })
        .collect();
    let slope = loglog_slope(&ns, &errs);
    assert!((slope + 2.0).abs() <= 0.2, "slope {slope}, errors {errs:?}");
}

proptest! {
    #[test]
    fn relu_expansion_reproduces_eval(
        pieces in 1usize..60,
        clamp in any::<bool>(),
        z in -15.0..15.0f64,
    ) {
        let mut p = build_pwl(|x| (0.7 * x).sin() + 0.1 * x * x, -10.0, 10.0, pieces).unwrap();
        p.clamp_outside = clamp;
        let e = p.relu_expansion();
        let scale = 1.0 + p.eval(z).abs();
        prop_assert!((e.eval(z) - p.eval(z)).abs() <= 1e-11 * scale * pieces as f64);
    }

    #[test]
    fn pwl_is_monotone_where_target_is(pieces in 1usize..200, a in -5.0..5.0f64, b in 0.1..5.0f64) {
        let p = build_pwl(|x| x.powi(3) + x, a, a + b, pieces).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=500 {
            let v = p.eval(a + b * i as f64 / 500.0);
            prop_assert!(v >= prev);
            prev = v;
        }
    }
}
