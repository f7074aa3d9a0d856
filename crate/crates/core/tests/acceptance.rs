//! Acceptance criteria, one `criterion N: PASS|FAIL` line each on stderr.
//! Heavy criteria hold a shared lock while they run.

use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use neumann_core::bsde::{
    contraction_constants, picard_solve_mc, solve_linear_mc, solve_penalized_bsde, McConfig,
    McPicardConfig, PicardConfig,
};
use neumann_core::experiment::{compare, TolerancePolicy};
use neumann_core::fd::{
    default_test_bank, picard_solve_fd, solve_linear_fd, weak_residual, FDConfig,
};
use neumann_core::grid::{GridFunction, GridMeta};
use neumann_core::lift::{solve_lift_slice, solve_lift_spacetime, LiftField};
use neumann_core::paths::{
    coupled_sweep, local_time_exp_moment, mean_local_time, realized_quadratic_variation,
    simulate_reflected, star_integral, Noise, PathSpec, ReflectionScheme,
};
use neumann_core::presets::{self, Preset};
use neumann_core::stats::{path_rng, per_path, Estimate, Reduction};
use neumann_core::Point;

static SERIAL: Mutex<()> = Mutex::new(());

const EVAL_X: [f64; 10] = [-1.0, -0.8, -0.6, -0.4, -0.2, 0.2, 0.4, 0.6, 0.8, 1.0];

fn verdict(id: &str, pass: bool, detail: String) {
    let line = format!(
        "criterion {id}: {} | {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {id} failed: {detail}");
}

fn eval_points() -> Vec<Point> {
    EVAL_X.iter().map(|&x| Point::scalar(x)).collect()
}

fn max_exact_error(u: &GridFunction, p: &Preset) -> f64 {
    let exact = p.exact.as_ref().expect("preset has a closed form");
    let mut e: f64 = 0.0;
    for i in 0..u.nt() {
        for j in 0..u.nx() {
            e = e.max((u.value(i, j) - exact(u.t_nodes[i], &u.x_nodes[j])).abs());
        }
    }
    e
}

/// Largest `|u - exact| - (3 SE + 0.01)` over the nodes; nonpositive passes.
fn mc_excess(u: &GridFunction, p: &Preset) -> f64 {
    let exact = p.exact.as_ref().expect("preset has a closed form");
    let mut worst = f64::NEG_INFINITY;
    for j in 0..u.nx() {
        let k = u.index(0, j);
        let e = (u.values[k] - exact(u.t_nodes[0], &u.x_nodes[j])).abs();
        worst = worst.max(e - 3.0 * u.std_errors[k] - 0.01);
    }
    worst
}

fn lift_for(p: &Preset) -> LiftField {
    solve_lift_spacetime(
        &p.coefficients,
        &p.domain,
        2001,
        &GridFunction::uniform_times(0.0, p.coefficients.horizon, 11),
    )
    .expect("lift solves")
}

fn mc_manufactured(p: &Preset, seed: u64) -> (GridFunction, Duration) {
    let cfg = McConfig {
        paths: 200_000,
        dt: 1e-3,
        seed,
        ..McConfig::default()
    };
    let start = Instant::now();
    let lift = lift_for(p);
    let u = solve_linear_mc(
        &p.domain,
        &p.coefficients,
        &lift,
        &[0.0],
        &eval_points(),
        &cfg,
    )
    .expect("mc solves");
    (u, start.elapsed())
}

#[test]
fn criterion_01_constant_exactness() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let p = presets::constant();
    let start = Instant::now();
    let fd = solve_linear_fd(&p.domain, &p.coefficients, &FDConfig::default()).unwrap();
    let fd_err = max_exact_error(&fd, &p);
    let cfg = McConfig {
        paths: 200,
        seed: 1,
        ..McConfig::default()
    };
    let mc = solve_linear_mc(
        &p.domain,
        &p.coefficients,
        &LiftField::zero(1),
        &[0.0, 0.5],
        &eval_points(),
        &cfg,
    )
    .unwrap();
    let mc_err = max_exact_error(&mc, &p);
    let elapsed = start.elapsed();
    verdict(
        "1 constant exactness",
        fd_err <= 1e-12
            && mc.max_std_err() == 0.0
            && mc_err <= 1e-12
            && elapsed < Duration::from_secs(1),
        format!(
            "FD error {fd_err:.2e}, MC error {mc_err:.2e} with SE {:.1e}, {:.2?}",
            mc.max_std_err(),
            elapsed
        ),
    );
}

#[test]
fn criterion_02_manufactured_zero_divergence() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let p = presets::manufactured_g0();
    let fd = solve_linear_fd(&p.domain, &p.coefficients, &FDConfig::default()).unwrap();
    let fd_err = max_exact_error(&fd, &p);
    let (mc, elapsed) = mc_manufactured(&p, 20);
    let excess = mc_excess(&mc, &p);
    verdict(
        "2 manufactured g=0",
        fd_err <= 5e-3 && excess <= 0.0 && elapsed <= Duration::from_secs(300),
        format!(
            "FD error {fd_err:.2e}; MC error {:.2e}, max SE {:.4}, worst excess over 3SE+0.01 {excess:.4}; MC {:.1?}",
            max_exact_error(&mc, &p),
            mc.max_std_err(),
            elapsed
        ),
    );
}

#[test]
fn criterion_03_manufactured_with_divergence() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let p = presets::manufactured_gx();
    let fd = solve_linear_fd(&p.domain, &p.coefficients, &FDConfig::default()).unwrap();
    let fd_err = max_exact_error(&fd, &p);
    let (mc, elapsed) = mc_manufactured(&p, 30);
    let excess = mc_excess(&mc, &p);
    let cmp = compare(&mc, &fd, &TolerancePolicy::default()).unwrap();
    verdict(
        "3 manufactured g=x/2",
        fd_err <= 5e-3 && excess <= 0.0 && cmp.pass && elapsed <= Duration::from_secs(300),
        format!(
            "FD error {fd_err:.2e}; MC error {:.2e}, max SE {:.4}, worst excess {excess:.4}; \
             lift-MC vs weak-form FD max diff {:.4} ({}); MC {:.1?}",
            max_exact_error(&mc, &p),
            mc.max_std_err(),
            cmp.max_diff,
            if cmp.pass { "agree" } else { "disagree" },
            elapsed
        ),
    );
}

#[test]
fn criterion_04_lift_oracle() {
    let exact = |x: f64| x.cosh() / 2f64.cosh() - 1.0;
    let err = |nodes| {
        let s = solve_lift_slice(|x| x, (-2.0, 2.0), nodes).unwrap();
        s.nodes
            .iter()
            .zip(&s.values)
            .map(|(x, g)| (g - exact(*x)).abs())
            .fold(0.0, f64::max)
    };
    let errs: Vec<f64> = [501, 1001, 2001].into_iter().map(err).collect();
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let e = errs[2];
    verdict(
        "4 lift oracle",
        e <= 1e-4 && orders.iter().all(|&q| q >= 1.8),
        format!("error at 2001 nodes {e:.2e}, observed orders {orders:.3?}"),
    );
}

#[test]
fn criterion_05_star_integral() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let dom = presets::constant().domain;
    let paths = 100_000;
    let run = |dt: f64| {
        per_path(paths, |i| {
            let x0 = dom.sample_uniform(&mut path_rng(55, i));
            let spec = PathSpec::new(x0, 0.0, 1.0, dt);
            let b = simulate_reflected(
                &dom,
                None,
                ReflectionScheme::Mirror,
                &spec,
                &mut Noise::stream(5, i),
            )
            .unwrap();
            let c = Point::scalar(0.8);
            let constant = star_integral(|_, _| c, &b).unwrap();
            let scale = b
                .brownian_increments
                .iter()
                .map(|d| d.norm())
                .sum::<f64>()
                .max(1.0);
            (
                constant.abs() / scale,
                star_integral(|_, x| *x, &b).unwrap(),
            )
        })
    };
    let coarse = run(1e-3);
    let fine = run(2.5e-4);
    let null = fine.iter().chain(&coarse).map(|r| r.0).fold(0.0, f64::max);
    let est = |rows: &[(f64, f64)]| {
        Estimate::from_samples(
            &rows.iter().map(|r| r.1).collect::<Vec<_>>(),
            Reduction::Pairwise,
        )
    };
    let (ec, ef) = (est(&coarse), est(&fine));
    let z = (ef.mean + 1.0) / ef.std_err;
    verdict(
        "5 star integral",
        null <= 1e-12 && ef.std_err <= 0.02 && z.abs() <= 3.0,
        format!(
            "constant field max relative {null:.1e}; g=x mean {:.4} +- {:.4} (z {z:.1}) at dt 2.5e-4, \
             {:.4} +- {:.4} at dt 1e-3",
            ef.mean, ef.std_err, ec.mean, ec.std_err
        ),
    );
}

#[test]
fn criterion_06_penalization_convergence() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let dom = presets::constant().domain;
    let levels = [8.0, 32.0, 128.0];
    let sweep = coupled_sweep(
        &dom,
        &levels,
        Point::scalar(0.0),
        1.0,
        1e-4,
        10_000,
        6,
        Reduction::Pairwise,
    )
    .unwrap();
    let dist: Vec<f64> = sweep.iter().map(|s| s.sup_distance_sq.mean).collect();
    let gap: Vec<f64> = sweep.iter().map(|s| s.sup_k_gap.mean).collect();
    let decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);

    let p = presets::manufactured_g0();
    let cfg = McConfig {
        paths: 10_000,
        dt: 1e-3,
        seed: 16,
        ..McConfig::default()
    };
    let lift = lift_for(&p);
    let xs = eval_points();
    let reference = solve_linear_mc(&p.domain, &p.coefficients, &lift, &[0.0], &xs, &cfg).unwrap();
    let bsde: Vec<f64> = levels
        .iter()
        .map(|&n| {
            solve_penalized_bsde(&p.domain, &p.coefficients, &lift, n, &[0.0], &xs, &cfg)
                .unwrap()
                .max_abs_diff(&reference)
        })
        .collect();
    verdict(
        "6 penalization",
        decreasing(&dist) && decreasing(&gap) && decreasing(&bsde),
        format!("E sup|X^n-X|^2 {dist:.4?}; E sup|K^n-K| {gap:.4?}; max |u^n - u| {bsde:.4?}"),
    );
}

#[test]
fn criterion_07_picard_contraction() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let p = presets::nonlinear_small_gamma();
    let constants = contraction_constants(&p.assumptions);
    let rho = constants.analytic.witness().map(|w| w.rho);
    let pc = PicardConfig {
        tol: 1e-10,
        max_iter: 30,
        weight: None,
    };
    let (fd, fd_hist) = picard_solve_fd(
        &p.domain,
        &p.coefficients,
        &p.assumptions,
        &FDConfig::default(),
        &pc,
    )
    .unwrap();
    let fd_ok = rho.is_some_and(|rho| {
        rho < 1.0
            && fd_hist
                .records
                .iter()
                .skip(2)
                .all(|r| r.ratio.is_none_or(|q| q <= rho + 0.1))
    });
    let mut cfg = McPicardConfig::default();
    cfg.mc.seed = 17;
    let (mc, mc_hist) = picard_solve_mc(&p.domain, &p.coefficients, &p.assumptions, &cfg).unwrap();
    let mc_ok = mc_hist.alarm.is_none()
        && mc_hist.records.iter().all(|r| match (r.ratio, r.ratio_se) {
            (Some(q), Some(se)) => q < 1.0 + 3.0 * se,
            _ => true,
        });
    let agree = compare(
        &mc,
        &fd,
        &TolerancePolicy {
            se_multiplier: 3.0,
            bias: 0.02,
        },
    )
    .unwrap();
    verdict(
        "7 picard contraction",
        fd_ok && mc_ok && agree.pass,
        format!(
            "rho {rho:?}; FD ratios {:.4?}; MC ratios {:.4?}; MC vs FD fixed point max diff {:.4}",
            fd_hist.ratios(),
            mc_hist.ratios(),
            agree.max_diff
        ),
    );
}

#[test]
fn criterion_08_local_time_moments() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let dom = presets::constant().domain;
    let scheme = ReflectionScheme::Mirror;
    let x0 = Point::scalar(0.0);
    let paths = 40_000;
    let a = local_time_exp_moment(
        &dom,
        scheme,
        x0,
        1.0,
        1.0,
        1e-3,
        paths,
        8,
        Reduction::Pairwise,
    )
    .unwrap();
    let b = local_time_exp_moment(
        &dom,
        scheme,
        x0,
        1.0,
        1.0,
        5e-4,
        paths,
        8,
        Reduction::Pairwise,
    )
    .unwrap();
    let z = (a.mean - b.mean) / a.joint_se(&b);
    let horizons = [1.0, 2.0, 4.0];
    let l: Vec<f64> = horizons
        .iter()
        .map(|&t| {
            mean_local_time(&dom, scheme, x0, t, 1e-3, paths, 9, Reduction::Pairwise)
                .unwrap()
                .mean
        })
        .collect();
    let early = (l[1] - l[0]) / (horizons[1] - horizons[0]);
    let late = (l[2] - l[1]) / (horizons[2] - horizons[1]);
    verdict(
        "8 local-time moments",
        z.abs() < 3.0 && late <= 1.2 * early,
        format!(
            "E[exp L_1] {:.4} vs {:.4} (z {z:.2}); E[L_T] {l:.4?}, slopes {early:.4} then {late:.4}",
            a.mean, b.mean
        ),
    );
}

#[test]
fn criterion_09_quadratic_variation() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let dom = presets::constant().domain;
    let e1 = Point::scalar(1.0);
    let rows = per_path(1000, |i| {
        let x0 = dom.sample_uniform(&mut path_rng(90, i));
        let spec = PathSpec::new(x0, 0.0, 1.0, 1e-4);
        let b = simulate_reflected(
            &dom,
            None,
            ReflectionScheme::Mirror,
            &spec,
            &mut Noise::stream(9, i),
        )
        .unwrap();
        [0.25, 0.5, 1.0].map(|t| realized_quadratic_variation(|_, _| e1, &b, t))
    });
    let rel: Vec<f64> = [0.25, 0.5, 1.0]
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let mean = rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64;
            (mean - t).abs() / t
        })
        .collect();
    verdict(
        "9 quadratic variation",
        rel.iter().all(|&r| r <= 0.01),
        format!(
            "relative deviation at t = 0.25, 0.5, 1: {:.2e}, {:.2e}, {:.2e}",
            rel[0], rel[1], rel[2]
        ),
    );
}

#[test]
fn criterion_10_weak_residual_detector() {
    let bank = default_test_bank();
    let mut lines = Vec::new();
    let mut pass = true;
    for p in [presets::manufactured_g0(), presets::manufactured_gx()] {
        let u = solve_linear_fd(&p.domain, &p.coefficients, &FDConfig::default()).unwrap();
        let err = max_exact_error(&u, &p);
        let r = weak_residual(&u, &p.coefficients, &p.domain, &bank)
            .unwrap()
            .max;
        let exact = p.exact.clone().unwrap();
        let perturbed = GridFunction::from_fn(
            u.t_nodes.clone(),
            u.x_nodes.clone(),
            GridMeta::default(),
            |t, x| exact(t, x) + 0.1 * (3.0 * t + 2.0 * x.x()).sin(),
        );
        let rp = weak_residual(&perturbed, &p.coefficients, &p.domain, &bank)
            .unwrap()
            .max;
        pass &= r <= 10.0 * err && rp >= 10.0 * r;
        lines.push(format!(
            "{}: error {err:.2e}, residual {r:.2e}, perturbed {rp:.2e}",
            p.name
        ));
    }
    verdict("10 weak residual", pass, lines.join("; "));
}
