use bilevel_core::harness::study::median;
use bilevel_core::harness::{consistency_study, denoise_study, dimension_study, online_study, sgd_run, Preset, Problem};

fn preset(name: &str, overrides: &[(&str, &str)]) -> Preset {
    let o: Vec<(String, String)> = overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    Preset::load(name).unwrap().resolve(false, &o).unwrap()
}

#[test]
fn single_repetition_has_no_standard_error() {
    let r = consistency_study(&preset("scalar-linear", &[("offline.repetitions", "1")])).unwrap();
    assert!(r.rows.iter().all(|row| row.std_error.is_none() && row.repetitions == 1));
    assert!(r.fit.slope.is_finite());
}

#[test]
fn rate_does_not_depend_on_lambda_star() {
    let base = consistency_study(&preset("scalar-linear", &[])).unwrap().fit;
    let doubled = consistency_study(&preset(
        "scalar-linear",
        &[("model.lambda_star", "2"), ("interval.lower", "0.2"), ("interval.upper", "8"), ("sgd.lambda0", "1")],
    ))
    .unwrap()
    .fit;
    let tol = base.half_width.unwrap() + doubled.half_width.unwrap();
    assert!((base.slope - doubled.slope).abs() <= tol, "{base:?} vs {doubled:?}");
}

#[test]
fn prior_trace_is_mesh_independent() {
    let r = dimension_study(&preset("laplace1d-dim", &[("offline.repetitions", "2")])).unwrap();
    let t: Vec<f64> = r.meshes.iter().map(|m| m.trace).collect();
    for w in t.windows(2) {
        assert!((w[0] / w[1] - 1.0).abs() < 0.05, "{t:?}");
    }
}

#[test]
fn lipschitz_constant_is_mesh_independent() {
    // E w‖u_λ − u_λ*‖² / |λ − λ*|² per mesh
    let p = preset("laplace1d-dim", &[]);
    let family = Problem::dimension_family(&p).unwrap();
    let (ls, lambda) = (1.0, 1.5);
    let consts: Vec<f64> = family
        .iter()
        .take(3)
        .map(|(_, problem)| {
            let solver = problem.solver().unwrap();
            let set = problem.generate_dataset(200, 7, &[]).unwrap();
            let total: f64 = set
                .pairs
                .iter()
                .map(|pair| {
                    let a = solver.solve_u(&pair.y, lambda).unwrap();
                    let b = solver.solve_u(&pair.y, ls).unwrap();
                    problem.loss.value(&a, &b)
                })
                .sum();
            total / set.len() as f64 / (lambda - ls).powi(2)
        })
        .collect();
    let (lo, hi) = consts.iter().fold((f64::INFINITY, 0.0f64), |(l, h), c| (l.min(*c), h.max(*c)));
    assert!(lo > 0.0 && hi / lo <= 2.0, "{consts:?}");
}

#[test]
fn online_traces_replay_exactly() {
    let p = preset("scalar-linear", &[("sgd.seeds", "3"), ("sgd.iterations", "500")]);
    let a = online_study(&p).unwrap();
    let b = online_study(&p).unwrap();
    assert_eq!(a, b);
    let problem = Problem::from_preset(&p).unwrap();
    let solver = problem.solver().unwrap();
    let again = sgd_run(&p, &problem, solver.as_ref(), 1).unwrap();
    assert_eq!(again.bar_lambda, a.runs[1].bar_lambda);
}

#[test]
fn online_example_reaches_lambda_star() {
    let p = preset(
        "scalar-linear",
        &[("sgd.beta0", "8"), ("interval.upper", "3"), ("sgd.iterations", "5000"), ("sgd.seeds", "20")],
    );
    let r = online_study(&p).unwrap();
    assert!(r.median_sq_error.unwrap() <= 1e-3, "{:?}", r.median_sq_error);
}

#[test]
fn denoise_grid_optimum_is_a_local_minimum() {
    let r = denoise_study(&preset("signal-denoise", &[("denoise.instances", "4"), ("sgd.iterations", "100")])).unwrap();
    for row in &r.rows {
        assert!(row.mse_grid <= row.mse_grid_neighbours.0 && row.mse_grid <= row.mse_grid_neighbours.1);
    }
    let learned: Vec<f64> = r.rows.iter().map(|x| x.mse_learned).collect();
    assert!(median(&learned).is_finite());
}
