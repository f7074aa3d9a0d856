use neumann_core::grid::GridFunction;
use neumann_core::lift::{eval_lift, solve_lift_spacetime};
use neumann_core::paths::{
    backward_integral, forward_integral, simulate_reflected, star_integral, Noise, PathBundle,
    PathSpec, ReflectionScheme,
};
use neumann_core::presets;
use neumann_core::stats::{path_rng, per_path, Estimate, Reduction};
use neumann_core::Point;

fn reflected(seed: u64, i: u64, dt: f64, horizon: f64) -> PathBundle {
    let dom = presets::constant().domain;
    let x0 = dom.sample_uniform(&mut path_rng(seed ^ 0xA5, i));
    let spec = PathSpec::new(x0, 0.0, horizon, dt);
    simulate_reflected(
        &dom,
        None,
        ReflectionScheme::Mirror,
        &spec,
        &mut Noise::stream(seed, i),
    )
    .unwrap()
}

/// `(1 - 4x^2)^4` on `|x| < 1/2`, zero elsewhere.
fn bump(x: f64) -> f64 {
    let s = 1.0 - 4.0 * x * x;
    if s > 0.0 {
        s.powi(4)
    } else {
        0.0
    }
}

fn bump_grad(x: f64) -> f64 {
    let s = 1.0 - 4.0 * x * x;
    if s > 0.0 {
        -32.0 * x * s.powi(3)
    } else {
        0.0
    }
}

fn lyons_zheng(dt: f64) -> Estimate {
    let g = |_: f64, x: &Point| Point::scalar(bump_grad(x.x()));
    let v = per_path(4000, |i| {
        let b = reflected(31, i, dt, 1.0);
        let lhs = bump(b.final_state().x()) - bump(b.states[0].x());
        lhs - 0.5 * forward_integral(g, &b) + 0.5 * backward_integral(g, &b).unwrap()
    });
    Estimate::from_samples(&v, Reduction::Pairwise)
}

#[test]
fn lyons_zheng_decomposition_vanishes_in_mean() {
    let coarse = lyons_zheng(1e-2);
    let fine = lyons_zheng(1e-3);
    println!("coarse {coarse:?}\nfine {fine:?}");
    assert!(fine.mean.abs() <= 3.0 * fine.std_err.max(1e-12), "{fine:?}");
    assert!(fine.std_err < coarse.std_err);
}

fn decomposition(dt: f64) -> Estimate {
    let p = presets::manufactured_gx();
    let lift = solve_lift_spacetime(
        &p.coefficients,
        &p.domain,
        2001,
        &GridFunction::uniform_times(0.0, 1.0, 21),
    )
    .unwrap();
    let lv = |t: f64, x: &Point| eval_lift(&lift, t, x).unwrap();
    let v = per_path(4000, |i| {
        let b = reflected(47, i, dt, 1.0);
        let n = b.steps();
        let t = &b.t_grid;
        let mut drift = 0.0;
        let mut boundary = 0.0;
        for k in 0..n {
            drift += 0.5
                * (lv(t[k], &b.states[k]).dt + lv(t[k + 1], &b.states[k + 1]).dt)
                * (t[k + 1] - t[k]);
            let dl = b.local_time_increments[k];
            if dl > 0.0 {
                boundary += lv(t[k + 1], &b.contact_points[k])
                    .grad
                    .dot(&b.contact_normals[k])
                    * dl;
            }
        }
        let grad = |s: f64, x: &Point| lv(s, x).grad;
        lv(t[n], &b.states[n]).g
            - lv(t[0], &b.states[0]).g
            - drift
            - forward_integral(grad, &b)
            - boundary
            + 0.5 * star_integral(grad, &b).unwrap()
    });
    Estimate::from_samples(&v, Reduction::Pairwise)
}

/// The discrete star integral carries an `O(sqrt dt)` bias from the
/// covariation of local time and noise at boundary steps.
#[test]
fn lift_decomposition_bias_vanishes_like_sqrt_dt() {
    let est: Vec<Estimate> = [1e-2, 1e-3, 1e-4].into_iter().map(decomposition).collect();
    println!("{est:?}");
    for w in est.windows(2) {
        let ratio = w[0].mean.abs() / w[1].mean.abs();
        assert!(ratio >= 2.5, "ratio {ratio}, {w:?}");
    }
    assert!(est[2].mean.abs() < 2e-3, "{:?}", est[2]);
}
