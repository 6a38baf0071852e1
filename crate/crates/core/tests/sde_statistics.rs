//! Monte Carlo sanity checks on the simulator and the estimators.

use heston_hjb::evaluator::{estimate_cost, estimate_policy_cost};
use heston_hjb::model::*;
use heston_hjb::policy::Policy;
use heston_hjb::sde::*;

fn bounds() -> ControlBounds {
    ControlBounds::new(0.1, 0.5).unwrap()
}

fn init() -> InitialState {
    InitialState::new(1.0, 0.09).unwrap()
}

#[test]
fn sup_moment_grows_at_most_linearly_in_the_horizon() {
    let horizons = [0.5, 1.0, 2.0];
    let moments: Vec<f64> = horizons
        .iter()
        .map(|&t| {
            let m = ModelParams::new(0.05, 2.0, 0.09, 0.3, t);
            let sim = SimConfig::new(20_000, (200.0 * t) as usize, 41);
            summarize(&m, &bounds(), &Policy::constant(0.5), &init(), &sim)
                .unwrap()
                .sup_square
                .mean
        })
        .collect();
    assert!(moments.iter().all(|m| m.is_finite() && *m > 0.0), "{moments:?}");
    // Least-squares slope through the three points, and the linear-growth envelope
    // E sup <= m(0) + C T with C fitted from the first two points, allowing 25% slack.
    let n = horizons.len() as f64;
    let (mt, mm) = (horizons.iter().sum::<f64>() / n, moments.iter().sum::<f64>() / n);
    let slope = horizons
        .iter()
        .zip(&moments)
        .map(|(t, m)| (t - mt) * (m - mm))
        .sum::<f64>()
        / horizons.iter().map(|t| (t - mt) * (t - mt)).sum::<f64>();
    assert!(slope.is_finite() && slope > 0.0, "slope {slope}");
    let c = (moments[1] - moments[0]) / (horizons[1] - horizons[0]);
    let start = moments[0] - c * horizons[0];
    let predicted = start + c * horizons[2];
    assert!(
        moments[2] <= 1.25 * predicted,
        "{moments:?} vs linear prediction {predicted}"
    );
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let m = ModelParams::new(0.05, 2.0, 0.09, 0.3, 1.0);
    let sim = SimConfig::new(300, 50, 8);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate(&m, &bounds(), &Policy::constant(0.2), &init(), &sim).unwrap())
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.paths, b.paths);
    assert_eq!(a.clamps, b.clamps);
}

#[test]
fn increments_have_variance_dt() {
    let m = ModelParams::new(0.05, 2.0, 0.09, 0.3, 1.0);
    let sim = SimConfig::new(2_000, 500, 12);
    let batch = simulate(&m, &bounds(), &Policy::constant(0.3), &init(), &sim).unwrap();
    let dt = batch.dt();
    for pick in [|p: &Path| p.dw1.clone(), |p: &Path| p.dw2.clone()] {
        let all: Vec<f64> = batch.paths.iter().flat_map(pick).collect();
        assert_eq!(all.len(), 1_000_000);
        let var = all.iter().map(|v| v * v).sum::<f64>() / all.len() as f64;
        assert!((var / dt - 1.0).abs() < 0.05, "{}", var / dt);
    }
}

#[test]
fn antithetic_pairs_keep_the_mean_and_reduce_variance() {
    let m = ModelParams::new(0.05, 2.0, 0.09, 0.3, 1.0);
    let plain = SimConfig::new(20_000, 100, 5);
    let anti = SimConfig {
        antithetic: true,
        ..plain
    };
    let a = summarize(&m, &bounds(), &Policy::constant(0.3), &init(), &plain).unwrap();
    let b = summarize(&m, &bounds(), &Policy::constant(0.3), &init(), &anti).unwrap();
    // E X2(T) = theta + (x2_0 - theta) e^{-kT} = theta here; the scheme is exact in mean.
    let dt = 1.0 / 100.0;
    assert!((b.x2_terminal.mean - a.x2_terminal.mean).abs() < dt + 3.0 * a.x2_terminal.std_error);
    assert!((b.x2_terminal.mean - 0.09).abs() < 1e-3, "{}", b.x2_terminal.mean);

    // X1(T) is monotone in dW1 to first order, so antithetic pairing shrinks the
    // variance of the pair average. Compare pair averages with independent pairs.
    let batch = simulate(&m, &bounds(), &Policy::constant(0.3), &init(), &anti).unwrap();
    let independent = simulate(&m, &bounds(), &Policy::constant(0.3), &init(), &plain).unwrap();
    let pair_var = |batch: &PathBatch| {
        let avgs: Vec<f64> = batch
            .paths
            .chunks(2)
            .map(|c| 0.5 * (c[0].x1.last().unwrap() + c[1].x1.last().unwrap()))
            .collect();
        let mean = avgs.iter().sum::<f64>() / avgs.len() as f64;
        avgs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (avgs.len() - 1) as f64
    };
    let (va, vi) = (pair_var(&batch), pair_var(&independent));
    assert!(va < 0.2 * vi, "antithetic {va:e} vs independent {vi:e}");
}

#[test]
fn std_error_scales_like_inverse_root_n() {
    let m = ModelParams::new(0.05, 2.0, 0.09, 0.3, 1.0);
    let cost = CostSpec::new(
        RunningCost::QuadraticTracking { c: 0.3 },
        TerminalCost::SquareCall { strike: 1.0 },
    );
    let se = |n| {
        estimate_policy_cost(
            &m,
            &cost,
            &bounds(),
            &init(),
            &Policy::constant(0.5),
            &SimConfig::new(n, 50, 77),
        )
        .unwrap()
        .std_error
    };
    let ratio = se(5_000) / se(20_000);
    assert!((ratio / 2.0 - 1.0).abs() < 0.2, "ratio {ratio}");
}

#[test]
fn zero_initial_state_is_absorbing() {
    let m = ModelParams::new(0.05, 2.0, 0.09, 0.3, 1.0);
    let init = InitialState::new(0.0, 0.09).unwrap();
    let batch = simulate(
        &m,
        &bounds(),
        &Policy::constant(0.3),
        &init,
        &SimConfig::new(100, 20, 1),
    )
    .unwrap();
    assert!(batch.paths.iter().all(|p| p.x1.iter().all(|&v| v == 0.0)));
    let cost = CostSpec::new(
        RunningCost::QuadraticTracking { c: 0.3 },
        TerminalCost::SquareCall { strike: 0.5 },
    );
    let est = estimate_cost(&batch, &cost);
    assert_eq!(est.mean, 0.25);
    assert_eq!(est.std_error, 0.0);
}

#[test]
fn deterministic_variance_follows_the_linear_ode() {
    let m = ModelParams::new(0.05, 1.0, 0.04, 0.0, 1.0);
    let exact = 0.04 + 0.05 * (-1.0f64).exp();
    let mut last_err = f64::INFINITY;
    for n in [50, 100, 200] {
        let batch = simulate(&m, &bounds(), &Policy::constant(0.3), &init(), &SimConfig::new(1, n, 0)).unwrap();
        let err = (batch.paths[0].x2.last().unwrap() - exact).abs();
        assert!(err < 1.0 / n as f64, "n = {n}: {err}");
        assert!(err < last_err);
        last_err = err;
    }
}
