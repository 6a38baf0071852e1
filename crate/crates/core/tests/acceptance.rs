//! Acceptance gate: one test per criterion, each printing a single
//! `criterion N [PASS|FAIL]` line before asserting.
//!
//! Run with `cargo test -p heston-hjb --test acceptance -- --nocapture` to
//! see the report.

use std::sync::Arc;
use std::time::{Duration, Instant};

use heston_hjb::evaluator::{compare_policies, mc_value_oracle};
use heston_hjb::hamiltonian::{brute_force_hamiltonian, hamiltonian, hamiltonian_with_tie, TieRule};
use heston_hjb::hjb::{
    quasi_contraction_rate, random_field_pairs, refinement_study, solve_backward, Grid2D, GridConfig, HjbProblem,
    SchemeConfig, Window, YBoundary,
};
use heston_hjb::model::{ControlBounds, CostSpec, InitialState, ModelParams, RunningCost, TerminalCost};
use heston_hjb::policy::Policy;
use heston_hjb::sde::{
    brownian_increments, positivity_report_streaming, simulate_each, simulate_path_with_increments,
    x1_exponential_oracle, MeanEstimate, SimConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Criterion tolerances and budgets.
const C1_TOL: f64 = 1e-4;
const C1_SAMPLES: usize = 1000;
const C1_GRID: usize = 100_000;
const C1_BUDGET: Duration = Duration::from_secs(5);
const C2_TOL: f64 = 1e-12;
const C2_SAMPLES: usize = 10_000;
const C2_BUDGET: Duration = Duration::from_secs(5);
const C4_REL_TOL: f64 = 0.10;
const C4_BUDGET: Duration = Duration::from_secs(120);
const C5_REL_TOL: f64 = 0.05;
const C5_SE_MULT: f64 = 3.0;
const C5_PATHS: usize = 100_000;
const C5_BUDGET: Duration = Duration::from_secs(300);
const C6_MIN_ORDER: f64 = 0.8;
const C6_BUDGET: Duration = Duration::from_secs(600);
const C7_PAIRS: usize = 20;
const C7_MAX_RATIO: f64 = 2.0;
const C8_PATHS: usize = 10_000;
const C8_REL_BOUND: f64 = 1e-6;
const C8_BUDGET: Duration = Duration::from_secs(60);
const C9_PATHS: usize = 100;
const C9_MIN_FACTOR: f64 = std::f64::consts::SQRT_2 * 0.8;
const C10_PATHS: usize = 100_000;
const C10_SE_MULT: f64 = 3.0;
const C11_PATHS: usize = 100_000;
const C11_BUDGET: Duration = Duration::from_secs(600);
const C12_SE_MULT: f64 = 2.0;

fn report(n: u32, name: &str, pass: bool, detail: String) {
    println!(
        "criterion {n:>2} [{}] {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

fn bounds() -> ControlBounds {
    ControlBounds::new(0.1, 0.5).unwrap()
}

fn heston() -> ModelParams {
    ModelParams::new(0.05, 2.0, 0.09, 0.3, 1.0)
}

const RHO: f64 = 0.005;
const Y_MAX: f64 = 0.8;
const X_MAX: f64 = 4.0;

fn default_grid() -> Grid2D {
    Grid2D::new(&GridConfig {
        x_max: X_MAX,
        rho: RHO,
        y_max: Y_MAX,
        nx: 200,
        ny: 50,
    })
    .unwrap()
}

fn builtin_costs() -> [CostSpec; 2] {
    [
        CostSpec::new(RunningCost::Zero, TerminalCost::Linear),
        CostSpec::new(RunningCost::QuadraticTracking { c: 0.3 }, TerminalCost::Linear),
    ]
}

#[test]
fn criterion_01_hamiltonian_matches_brute_force() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for cost in builtin_costs() {
        for _ in 0..C1_SAMPLES {
            let x = rng.random_range(0.0..5.0);
            let y = rng.random_range(RHO..=Y_MAX);
            let z = rng.random_range(-20.0..20.0);
            let closed = hamiltonian(x, y, z, &cost, &bounds()).unwrap().value;
            let brute = brute_force_hamiltonian(x, y, z, &cost, &bounds(), C1_GRID);
            worst = worst.max((closed - brute).abs());
        }
    }
    let elapsed = start.elapsed();
    let pass = worst <= C1_TOL && elapsed < C1_BUDGET;
    report(
        1,
        "hamiltonian oracle equivalence",
        pass,
        format!("max |closed - brute| = {worst:.2e} (tol {C1_TOL:.0e}), {elapsed:.2?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_02_hamiltonian_monotonicity_and_growth() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let b = bounds();
    let mut worst_slope: f64 = 0.0;
    let mut worst_growth: f64 = 0.0;
    let mut worst_zero: f64 = 0.0;
    for cost in builtin_costs() {
        let mut n = 0;
        while n < C2_SAMPLES {
            let x = rng.random_range(0.0..5.0);
            let y = rng.random_range(RHO..=Y_MAX);
            let z1: f64 = rng.random_range(-20.0..20.0);
            let z2: f64 = rng.random_range(-20.0..20.0);
            // Rounding of the quotient grows like eps |G| / |z2 - z1|.
            if (z2 - z1).abs() < 1e-2 {
                continue;
            }
            n += 1;
            let (lo, hi) = if z1 < z2 { (z1, z2) } else { (z2, z1) };
            let g_lo = hamiltonian(x, y, lo, &cost, &b).unwrap().value;
            let g_hi = hamiltonian(x, y, hi, &cost, &b).unwrap().value;
            let q = (g_hi - g_lo) / (hi - lo);
            let below = (0.5 * b.a() * y - q).max(0.0);
            let above = (q - 0.5 * b.b() * y).max(0.0);
            let decrease = (g_lo - g_hi).max(0.0);
            worst_slope = worst_slope.max(below).max(above).max(decrease);
            for (z, g) in [(lo, g_lo), (hi, g_hi)] {
                worst_growth = worst_growth.max(g.abs() - 0.5 * Y_MAX * b.b() * z.abs());
            }
            worst_zero = worst_zero.max(hamiltonian(x, y, 0.0, &cost, &b).unwrap().value.abs());
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_slope <= C2_TOL && worst_growth <= C2_TOL && worst_zero == 0.0 && elapsed < C2_BUDGET;
    report(
        2,
        "hamiltonian monotonicity and growth",
        pass,
        format!(
            "slope violation {worst_slope:.1e}, growth violation {:.1e}, max |G(.,.,0)| {worst_zero:e} (tol {C2_TOL:.0e}), {elapsed:.2?}",
            worst_growth.max(0.0)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_03_bang_bang_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let cost = CostSpec::new(RunningCost::Zero, TerminalCost::Linear);
    let b = bounds();
    let mut mismatches = 0;
    let mut checked = 0;
    for tie in [TieRule::Lower, TieRule::Upper, TieRule::Midpoint] {
        for stratum in 0..3 {
            for _ in 0..1000 {
                let x = rng.random_range(0.0..5.0);
                let y = rng.random_range(RHO..=Y_MAX);
                let z = match stratum {
                    0 => rng.random_range(1e-300..50.0),
                    1 => -rng.random_range(1e-300..50.0),
                    _ => {
                        if rng.random_bool(0.5) {
                            0.0
                        } else {
                            -0.0
                        }
                    }
                };
                let expected = if z > 0.0 {
                    b.a()
                } else if z < 0.0 {
                    b.b()
                } else {
                    tie.select(&b)
                };
                let r = hamiltonian_with_tie(x, y, z, &cost, &b, tie).unwrap();
                checked += 1;
                if r.minimizer != expected || r.value != 0.5 * expected * y * z {
                    mismatches += 1;
                }
            }
        }
    }
    // Smallest magnitudes, where a sign test is easiest to get wrong.
    for z in [f64::MIN_POSITIVE, -f64::MIN_POSITIVE, 5e-324, -5e-324] {
        let r = hamiltonian(1.0, 0.1, z, &cost, &b).unwrap();
        checked += 1;
        if r.minimizer != if z > 0.0 { b.a() } else { b.b() } {
            mismatches += 1;
        }
    }
    let pass = mismatches == 0;
    report(
        3,
        "bang-bang closed form",
        pass,
        format!("{mismatches} mismatches over {checked} sign-stratified samples"),
    );
    assert!(pass);
}

#[test]
fn criterion_04_linear_pde_matches_analytic_oracle() {
    let start = Instant::now();
    let mut model = heston();
    model.sigma = 0.0;
    let u = 0.2;
    let pinned = ControlBounds::pinned(u).unwrap();
    let cost = CostSpec::new(RunningCost::Zero, TerminalCost::SquareCall { strike: 0.0 });
    let scheme = SchemeConfig {
        n_time_steps: 200,
        y_boundary: YBoundary::NeumannZero,
        ..Default::default()
    };
    let grid = default_grid();
    let sol = solve_backward(&model, &cost, &pinned, &grid, &scheme).unwrap();
    let growth = ((2.0 * model.mu + u * model.theta) * model.horizon).exp();
    let mut worst: f64 = 0.0;
    for k in 0..9 {
        let x = (0.2 + 0.05 * k as f64) * grid.x_max;
        let p = sol.interpolate_p(0, x, model.theta);
        let exact = 2.0 * x * growth;
        worst = worst.max(((p - exact) / exact).abs());
    }
    let elapsed = start.elapsed();
    let pass = worst <= C4_REL_TOL && elapsed < C4_BUDGET;
    report(
        4,
        "linear PDE vs analytic oracle",
        pass,
        format!("max relative error {worst:.2e} at 9 probes (tol {C4_REL_TOL}), {elapsed:.2?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_05_linear_pde_matches_mc_gradient_oracle() {
    let start = Instant::now();
    let model = heston();
    let pinned = ControlBounds::pinned(0.2).unwrap();
    let cost = CostSpec::new(RunningCost::Zero, TerminalCost::GaussianRamp { x0: 1.0, s: 0.5 });
    let grid = default_grid();
    let sol = solve_backward(&model, &cost, &pinned, &grid, &SchemeConfig::default()).unwrap();
    let sim = SimConfig::new(C5_PATHS, 200, 505);
    let delta = 0.01 * grid.x_max;
    let mut failures = Vec::new();
    let mut worst_rel: f64 = 0.0;
    for x in [0.8, 1.0, 1.2] {
        for y in [0.06, 0.09, 0.15] {
            let pde = sol.interpolate_p(0, x, y);
            let mc = mc_value_oracle(&model, &cost, &pinned, 0.0, x, y, delta, &sim).unwrap();
            let err = (pde - mc.gradient.mean).abs();
            let allowed = (C5_REL_TOL * mc.gradient.mean.abs()).max(C5_SE_MULT * mc.gradient.std_error);
            worst_rel = worst_rel.max(err / mc.gradient.mean.abs());
            if err > allowed {
                failures.push(format!(
                    "({x}, {y}): pde {pde:.5} mc {:.5} se {:.1e}",
                    mc.gradient.mean, mc.gradient.std_error
                ));
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < C5_BUDGET;
    report(
        5,
        "linear PDE vs MC gradient oracle",
        pass,
        format!(
            "max relative gap {worst_rel:.2e} at 9 probes (tol max({C5_REL_TOL}, {C5_SE_MULT} se)), {elapsed:.2?} {failures:?}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_scheme_self_convergence() {
    let start = Instant::now();
    let model = heston();
    let cost = CostSpec::new(
        RunningCost::QuadraticTracking { c: 0.3 },
        TerminalCost::GaussianRamp { x0: 1.0, s: 0.5 },
    );
    let base = Grid2D::new(&GridConfig {
        x_max: X_MAX,
        rho: 0.01,
        y_max: Y_MAX,
        nx: 39,
        ny: 15,
    })
    .unwrap();
    let scheme = SchemeConfig {
        n_time_steps: 16,
        ..Default::default()
    };
    // Bulk of the strip, away from the thin layers at the Dirichlet edges.
    let window = Window {
        x_lo: 0.0,
        x_hi: X_MAX,
        y_lo: 0.05,
        y_hi: 0.6,
    };
    let rows = refinement_study(&model, &cost, &bounds(), &base, &scheme, 3, &window).unwrap();
    let diffs: Vec<f64> = rows.iter().filter_map(|r| r.diff_to_next).collect();
    let orders: Vec<f64> = rows.iter().filter_map(|r| r.order).collect();
    let elapsed = start.elapsed();
    let pass = diffs.windows(2).all(|w| w[1] < w[0])
        && !orders.is_empty()
        && orders.iter().all(|&o| o >= C6_MIN_ORDER)
        && elapsed < C6_BUDGET;
    report(
        6,
        "scheme self-convergence",
        pass,
        format!("differences {diffs:.3?}, orders {orders:.3?} (min {C6_MIN_ORDER}), {elapsed:.2?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_07_discrete_quasi_contraction() {
    let model = heston();
    let cost = CostSpec::new(RunningCost::QuadraticTracking { c: 0.3 }, TerminalCost::Linear);
    let grid = Grid2D::new(&GridConfig {
        x_max: X_MAX,
        rho: 0.01,
        y_max: Y_MAX,
        nx: 39,
        ny: 19,
    })
    .unwrap();
    let problem = HjbProblem::new(grid, model, cost, bounds(), YBoundary::DirichletZero);
    let pairs = random_field_pairs(&problem, C7_PAIRS, 707);
    let scheme = SchemeConfig::default();
    let n = 20;
    let h = model.horizon / n as f64;
    let eta_h = quasi_contraction_rate(&problem, &pairs, h, n, &scheme).unwrap();
    let eta_h2 = quasi_contraction_rate(&problem, &pairs, h / 2.0, 2 * n, &scheme).unwrap();
    let ratio = eta_h / eta_h2;
    let pass = eta_h.is_finite() && eta_h2.is_finite() && (1.0 / C7_MAX_RATIO..=C7_MAX_RATIO).contains(&ratio);
    report(
        7,
        "discrete quasi-contraction",
        pass,
        format!("eta(h = {h}) = {eta_h:.4}, eta(h/2) = {eta_h2:.4}, ratio {ratio:.3} (within x{C7_MAX_RATIO})"),
    );
    assert!(pass);
}

#[test]
fn criterion_08_sde_positivity_under_feller() {
    let start = Instant::now();
    let feller = heston();
    assert!(feller.feller_ok());
    let violated = ModelParams::new(0.05, 1.0, 0.02, 0.3, 1.0);
    assert!(!violated.feller_ok());
    let init = InitialState::new(1.0, 0.0).unwrap();
    let policy = Policy::constant(0.3);
    let run = |model: &ModelParams, n_steps: usize| {
        let sim = SimConfig::new(C8_PATHS, n_steps, 808);
        positivity_report_streaming(model, &bounds(), &policy, &init, &sim).unwrap()
    };
    let base = run(&feller, 1000);
    let half = run(&feller, 2000);
    let bad = run(&violated, 1000);
    let bound = C8_REL_BOUND * feller.theta * feller.theta;
    let elapsed = start.elapsed();
    let pass = base.mean_max_negative_square <= bound
        && half.mean_max_negative_square < base.mean_max_negative_square
        && bad.mean_max_negative_square > base.mean_max_negative_square
        && bad.negative_fraction > base.negative_fraction
        && base.min_x1 >= 0.0
        && elapsed < C8_BUDGET;
    report(
        8,
        "SDE positivity under Feller",
        pass,
        format!(
            "E max (X2^-)^2: {:.3e} (dt) -> {:.3e} (dt/2), bound {bound:.2e}; violated batch {:.3e}; negative fractions {:.2e} vs {:.2e}; {elapsed:.2?}",
            base.mean_max_negative_square,
            half.mean_max_negative_square,
            bad.mean_max_negative_square,
            base.negative_fraction,
            bad.negative_fraction
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_exponential_representation() {
    let model = ModelParams::new(0.05, 2.0, 0.09, 0.3, 1.0);
    let init = InitialState::new(1.0, 0.09).unwrap();
    let policy = Policy::constant(0.5);
    let fine_steps = 400;
    let sim = SimConfig::new(C9_PATHS, fine_steps, 909);
    let dt_fine = sim.dt(model.horizon);
    let rms_gap = |paths: &[(Vec<f64>, Vec<f64>)], dt: f64| {
        let mut acc = 0.0;
        let mut n = 0.0;
        for (dw1, dw2) in paths {
            let path = simulate_path_with_increments(&model, &policy, &init, sim.epsilon, dt, dw1.clone(), dw2.clone())
                .unwrap();
            let oracle = x1_exponential_oracle(&path.x2, &path.u, &path.dw1, &model, init.x1, dt);
            for (a, b) in path.x1.iter().zip(&oracle).skip(1) {
                acc += (a / b - 1.0).powi(2);
                n += 1.0;
            }
        }
        (acc / n).sqrt()
    };
    let fine: Vec<(Vec<f64>, Vec<f64>)> = (0..C9_PATHS).map(|p| brownian_increments(&sim, p, dt_fine)).collect();
    let coarse: Vec<(Vec<f64>, Vec<f64>)> = fine
        .iter()
        .map(|(a, b)| {
            let pair_sum = |v: &Vec<f64>| v.chunks(2).map(|c| c[0] + c[1]).collect::<Vec<_>>();
            (pair_sum(a), pair_sum(b))
        })
        .collect();
    let gap_coarse = rms_gap(&coarse, 2.0 * dt_fine);
    let gap_fine = rms_gap(&fine, dt_fine);
    let factor = gap_coarse / gap_fine;
    let pass = factor >= C9_MIN_FACTOR;
    report(
        9,
        "exponential representation",
        pass,
        format!("RMS relative gap {gap_coarse:.3e} (dt) -> {gap_fine:.3e} (dt/2), factor {factor:.3} (min {C9_MIN_FACTOR:.3})"),
    );
    assert!(pass);
}

#[test]
fn criterion_10_martingale_mean() {
    let init = InitialState::new(1.0, 0.09).unwrap();
    let schedule = Policy::piecewise(vec![0.0, 0.25, 0.5, 1.0], vec![0.5, 0.1, 0.3]).unwrap();
    let sim = SimConfig::new(C10_PATHS, 100, 1010);
    let mut lines = Vec::new();
    let mut pass = true;
    for mu in [0.0, 0.05] {
        let model = ModelParams { mu, ..heston() };
        for policy in [Policy::constant(0.5), schedule.clone()] {
            let (terminal, _) =
                simulate_each(&model, &bounds(), &policy, &init, &sim, |p| *p.x1.last().unwrap()).unwrap();
            let est = MeanEstimate::of(terminal);
            let target = init.x1 * (mu * model.horizon).exp();
            let ok = (est.mean - target).abs() <= C10_SE_MULT * est.std_error;
            pass &= ok;
            lines.push(format!(
                "mu={mu} {policy}: {:.5} vs {target:.5} (se {:.1e})",
                est.mean, est.std_error
            ));
        }
    }
    report(10, "martingale mean", pass, lines.join("; "));
    assert!(pass);
}

#[test]
fn criterion_11_closed_loop_quality() {
    let start = Instant::now();
    let model = heston();
    let b = bounds();
    let cost = CostSpec::new(
        RunningCost::QuadraticTracking { c: b.midpoint() },
        TerminalCost::SquareCall { strike: 1.0 },
    );
    let scheme = SchemeConfig::default();
    let solution = Arc::new(solve_backward(&model, &cost, &b, &default_grid(), &scheme).unwrap());
    let init = InitialState::new(1.0, model.theta).unwrap();
    let policies = [
        Policy::constant(b.a()),
        Policy::constant(b.midpoint()),
        Policy::constant(b.b()),
        Policy::feedback(solution, cost, b, scheme.tie_rule),
    ];
    let table = compare_policies(
        &model,
        &cost,
        &b,
        &init,
        &policies,
        &SimConfig::new(C11_PATHS, 200, 1111),
    )
    .unwrap();
    let feedback = table.by_input(3).unwrap();
    let best_const = (0..3)
        .map(|i| table.by_input(i).unwrap())
        .min_by(|x, y| x.estimate.mean.total_cmp(&y.estimate.mean))
        .unwrap();
    let margin = 2.0 * feedback.estimate.combined_std_error(&best_const.estimate);
    let paired = table.paired_difference(3, best_const.input_index).unwrap();
    let elapsed = start.elapsed();
    let pass = feedback.estimate.mean <= best_const.estimate.mean + margin && elapsed < C11_BUDGET;
    report(
        11,
        "closed-loop quality",
        pass,
        format!(
            "feedback {:.6} vs best constant {} {:.6} + {margin:.1e}; paired diff {:.2e} (se {:.1e}); {elapsed:.2?}",
            feedback.estimate.mean, best_const.policy, best_const.estimate.mean, paired.mean, paired.std_error
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_12_convex_terminal_ordering() {
    let model = heston();
    let b = bounds();
    let cost = CostSpec::new(RunningCost::Zero, TerminalCost::SquareCall { strike: 1.0 });
    let init = InitialState::new(1.0, model.theta).unwrap();
    let policies = [Policy::constant(b.a()), Policy::constant(b.b())];
    let table = compare_policies(&model, &cost, &b, &init, &policies, &SimConfig::new(100_000, 100, 1212)).unwrap();
    let (ja, jb) = (table.by_input(0).unwrap().estimate, table.by_input(1).unwrap().estimate);
    let margin = C12_SE_MULT * ja.combined_std_error(&jb);
    let pass = ja.mean <= jb.mean + margin;
    report(
        12,
        "convex-terminal ordering",
        pass,
        format!("J(a) = {:.6}, J(b) = {:.6}, margin {margin:.1e}", ja.mean, jb.mean),
    );
    assert!(pass);
}
