//! Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below.
//! Runs without the libtest harness so the lines always reach stdout.

mod common;

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use common::{fn_reaction_rk4, layer_grad_error, randomize, random_tensor, rng, spectral_divergence, weighted_sum};
use pdenetpp::autodiff::{check_gradients, Tape};
use pdenetpp::backbone::{Backbone, BackboneConfig};
use pdenetpp::cli::{run, Command, Invocation};
use pdenetpp::hybrid::{HybridModel, Method, ModelConfig};
use num_rational::Ratio;
use pdenetpp::layers::DiffLayer;
use pdenetpp::moment::{
    assemble_constrained_kernel, empirical_order, flip_x, kernel_from_moment, moment_from_kernel, BasisBank, Kernel, MomentMatrix,
    MomentSpec, TestFunction,
};
use pdenetpp::params::{Bound, ParamSet};
use pdenetpp::schemes::{flux_limited, run_demo, total_variation, weno3_step, AdvectionConfig, Limiter, Profile, Scheme};
use pdenetpp::solvers::{
    add_noise, generate_dataset, noise_ratio_std, velocity_from_vorticity, Dataset, PdeConfig, Preset, SpectralSolver,
};
use pdenetpp::tensor::Tensor;
use pdenetpp::training::{evaluate, train, EvalReport, TrainConfig};
use rand::Rng;

const ROUND_TRIP_TOL: f64 = 1e-10;
const BASIS_TOL: f64 = 1e-10;
const MOMENT_TIME: Duration = Duration::from_secs(5);
const CONSTRAINT_TOL: f64 = 1e-10;
const ORDER_SLACK: f64 = 0.3;
const FLIP_TOL: f64 = 1e-12;
const GRAD_TOL: f64 = 1e-5;
const GRAD_TIME: Duration = Duration::from_secs(60);
const REDUCTION_TOL: f64 = 1e-12;
const DIVERGENCE_TOL: f64 = 1e-10;
const ODE_TOL: f64 = 1e-6;
const NOISE_LEVEL: f64 = 1e-3;
const NOISE_REL_TOL: f64 = 0.05;
const ORDERING_FACTOR: f64 = 0.5;
const TRANSPORT_TOL: f64 = 1e-12;
const TVD_TRIALS: usize = 1000;
const WENO_MIN_ORDER: f64 = 2.7;
const MASS_TOL: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_kernel(l: usize, r: &mut rand_chacha::ChaCha8Rng) -> Kernel<f64> {
    let n = (2 * l + 1) * (2 * l + 1);
    Kernel::from_vec(l, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn moment_algebra() -> Outcome {
    let t = Instant::now();
    let mut r = rng(101);
    let mut worst = 0.0f64;
    for i in 0..500 {
        let l = 1 + i % 2;
        let h = if (i / 2) % 2 == 0 { 1.0 } else { TAU / 64.0 };
        let spec = MomentSpec::new(0, 0, 0, l, h, h).unwrap();
        let k = random_kernel(l, &mut r);
        let back = kernel_from_moment(&moment_from_kernel(&k, &spec).unwrap(), &spec).unwrap();
        worst = worst.max(back.max_abs_diff(&k));
    }
    let mut basis = 0.0f64;
    for l in 1..=2 {
        for h in [1.0f64, TAU / 64.0] {
            let bank = BasisBank::new(l, h, h).unwrap();
            let spec = MomentSpec::new(0, 0, 0, l, h, h).unwrap();
            for u in 0..=2 * l {
                for v in 0..=2 * l {
                    // compare in grid units so the h^-(u+v) kernel scale does not count as error
                    let m = moment_from_kernel(bank.get(u, v), &spec).unwrap();
                    let unit = MomentMatrix::<f64>::unit(l, u, v);
                    for a in 0..=2 * l {
                        for b in 0..=2 * l {
                            let scale = h.powi((u + v) as i32 - (a + b) as i32);
                            basis = basis.max((m.get(a, b) - unit.get(a, b)).abs() * scale);
                        }
                    }
                }
            }
        }
    }
    let mut exact = true;
    for l in 1..=2 {
        let h = Ratio::new(1i64, 3);
        let bank = BasisBank::new(l, h, h).unwrap();
        let spec = MomentSpec::new(0, 0, 0, l, h, h).unwrap();
        for u in 0..=2 * l {
            for v in 0..=2 * l {
                exact &= moment_from_kernel(bank.get(u, v), &spec).unwrap() == MomentMatrix::unit(l, u, v);
            }
        }
    }
    let el = t.elapsed();
    outcome(
        worst < ROUND_TRIP_TOL && basis < BASIS_TOL && exact && el < MOMENT_TIME,
        format!("round trip {worst:.2e}, basis {basis:.2e}, rational basis exact {exact}, {:.2}s", el.as_secs_f64()),
    )
}

fn constraint_satisfaction() -> Outcome {
    let mut r = rng(102);
    let h: f64 = 0.1;
    let mut worst = 0.0f64;
    for (p, q) in [(1usize, 0usize), (0, 1), (2, 0), (0, 2)] {
        for order in 1..=2 {
            let spec = MomentSpec::new(p, q, order, 2, h, h).unwrap();
            for _ in 0..100 {
                // dimensionless free moments, scaled to physical units
                let free: Vec<f64> = spec
                    .free_indices()
                    .iter()
                    .map(|&(u, v)| r.random_range(-5.0..5.0) * h.powi(u as i32 - p as i32) * h.powi(v as i32 - q as i32))
                    .collect();
                let k = assemble_constrained_kernel(&spec, &free).unwrap();
                worst = worst.max(moment_from_kernel(&k, &spec).unwrap().constraint_residual(&spec));
            }
        }
    }
    outcome(worst < CONSTRAINT_TOL, format!("max residual {worst:.2e}"))
}

fn convergence_order() -> Outcome {
    let f = |x: f64, y: f64| (2.0 * x).sin() * (3.0 * y).cos();
    let cases: [(usize, usize, fn(f64, f64) -> f64); 4] = [
        (1, 0, |x, y| 2.0 * (2.0 * x).cos() * (3.0 * y).cos()),
        (0, 1, |x, y| -3.0 * (2.0 * x).sin() * (3.0 * y).sin()),
        (2, 0, |x, y| -4.0 * (2.0 * x).sin() * (3.0 * y).cos()),
        (0, 2, |x, y| -9.0 * (2.0 * x).sin() * (3.0 * y).cos()),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (p, q, d) in cases {
        for order in 1..=2 {
            let test = TestFunction { length: TAU, value: f, derivative: d };
            let spec = MomentSpec::new(p, q, order, 2, 1.0, 1.0).unwrap();
            let study =
                empirical_order(&spec, |s| assemble_constrained_kernel(s, &vec![0.0; s.free_param_count()]), &test, &[32, 64, 128]).unwrap();
            let got = study.order.unwrap_or(f64::NAN);
            pass &= got >= order as f64 + 1.0 - ORDER_SLACK;
            parts.push(format!("d{p}{q} r={order}: {got:.2}"));
        }
    }
    outcome(pass, parts.join(", "))
}

fn flip_law() -> Outcome {
    let mut r = rng(104);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let l = 1 + i % 2;
        let h = if i % 4 < 2 { 1.0 } else { TAU / 64.0 };
        let spec = MomentSpec::new(0, 0, 0, l, h, h).unwrap();
        let k = random_kernel(l, &mut r);
        let m = moment_from_kernel(&k, &spec).unwrap();
        let mf = moment_from_kernel(&flip_x(&k), &spec).unwrap();
        for u in 0..=2 * l {
            for v in 0..=2 * l {
                let sign = if u % 2 == 0 { -1.0 } else { 1.0 };
                worst = worst.max((mf.get(u, v) - sign * m.get(u, v)).abs());
            }
        }
    }
    outcome(worst < FLIP_TOL, format!("max deviation {worst:.2e}"))
}

/// Gradient error of one model step. The state passes through unchanged, so
/// the increment `next - state` is differenced to keep it out of the roundoff.
fn step_grad_error(model: &HybridModel<f64>, state: &Tensor<f64>) -> f64 {
    check_gradients(model.params().values(), 1e-5, Some(12), |tape, vars| {
        let bound = Bound::from_vars(vars.to_vec());
        let x = tape.constant(state.clone());
        let out = model.step(&bound, &x)?;
        let mut loss = weighted_sum(&out.next.sub(&x)?, 7);
        if let Some(r) = out.reg {
            loss = loss.add(&r)?;
        }
        Ok(loss)
    })
    .unwrap()
    .max_rel_err
}

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let mut errs = Vec::new();
    let x = random_tensor(&[1, 2, 6, 6], 1.0, &mut rng(105));
    let coeff = random_tensor(&[1, 2, 6, 6], 1.0, &mut rng(106));
    let spec = MomentSpec::new(1, 0, 2, 2, 0.25, 0.25).unwrap();
    for name in ["moment", "tfdl", "tddl"] {
        let mut params = ParamSet::new();
        let layer = match name {
            "moment" => DiffLayer::moment(&mut params, "l", spec.clone()),
            "tfdl" => DiffLayer::tfdl(&mut params, "l", spec.clone()),
            _ => DiffLayer::tddl(&mut params, "l", spec.clone(), 2, 4, &mut rng(107)),
        }
        .unwrap();
        randomize(&mut params, 0.4, &mut rng(108));
        errs.push((name.to_string(), layer_grad_error(&layer, &params, &x, Some(&coeff), true)));
    }
    let x = random_tensor(&[1, 4, 16, 16], 1.0, &mut rng(109));
    for cfg in [BackboneConfig::ConvResnet { width: 4, blocks: 2 }, BackboneConfig::Spectral { width: 4, layers: 2, modes: 3 }] {
        let mut params = ParamSet::new();
        let b = Backbone::new(&mut params, "nn", &cfg, 4, &mut rng(110)).unwrap();
        randomize(&mut params, 0.3, &mut rng(111));
        let report = check_gradients(params.values(), 1e-6, Some(8), |tape, vars| {
            let bound = Bound::from_vars(vars.to_vec());
            Ok(weighted_sum(&b.forward(&bound, &tape.constant(x.clone()))?, 12))
        })
        .unwrap();
        errs.push((format!("{cfg:?}").split_whitespace().next().unwrap_or("").to_string(), report.max_rel_err));
    }
    let n = 8;
    let small = BackboneConfig::ConvResnet { width: 3, blocks: 1 };
    for (preset, method, backbone) in [
        (Preset::Burgers, Method::Tddl, small.clone()),
        (Preset::Burgers, Method::Tfdl, BackboneConfig::Spectral { width: 2, layers: 2, modes: 3 }),
        (Preset::NavierStokes, Method::Moment, small.clone()),
        (Preset::FitzhughNagumo, Method::Blackbox, small),
    ] {
        let mut p = PdeConfig::preset(preset);
        p.fine_grid = n;
        p.coarse_grid = n;
        let mut cfg = ModelConfig::new(method, backbone);
        cfg.hypernet_width = 3;
        let mut m = HybridModel::<f64>::new(&p, &cfg, 2).unwrap();
        randomize(m.params_mut(), 0.3, &mut rng(112));
        let u = random_tensor(&[1, p.kind.channels(), n, n], 1.0, &mut rng(113));
        errs.push((format!("{preset:?}/{method:?} step"), step_grad_error(&m, &u)));
    }
    let el = t.elapsed();
    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    let pass = errs.iter().all(|e| e.1 < GRAD_TOL) && el < GRAD_TIME;
    let bad: Vec<String> = errs.iter().filter(|e| e.1 >= GRAD_TOL).map(|e| format!("{} {:.2e}", e.0, e.1)).collect();
    let mut detail = format!("{} paths, max rel err {worst:.2e}, {:.1}s", errs.len(), el.as_secs_f64());
    if !bad.is_empty() {
        detail += &format!("; over tolerance: {}", bad.join(", "));
    }
    outcome(pass, detail)
}

fn apply(layer: &DiffLayer<f64>, params: &ParamSet<f64>, x: &Tensor<f64>, coeff: Option<&Tensor<f64>>) -> Tensor<f64> {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let v = tape.constant(x.clone());
    let out = layer.apply(&bound, &v, coeff, Some(&v)).unwrap();
    (*out.value.value()).clone()
}

fn reduction_identities() -> Outcome {
    let h = 0.25;
    let x = random_tensor(&[2, 2, 8, 8], 1.0, &mut rng(114));
    let mut worst = 0.0f64;
    for (p, q) in [(1, 0), (0, 1), (2, 0), (0, 2)] {
        let r = if p + q == 1 { 1 } else { 0 };
        let spec = MomentSpec::new(p, q, r, 1, h, h).unwrap();
        let mut params = ParamSet::new();
        let fdm = apply(&DiffLayer::fdm(p, q, h, h).unwrap(), &params, &x, None);
        let moment = DiffLayer::moment(&mut params, "m", spec.clone()).unwrap();
        let tddl = DiffLayer::tddl(&mut params, "t", spec, 2, 4, &mut rng(115)).unwrap();
        worst = worst.max(fdm.max_abs_diff(&apply(&moment, &params, &x, None)).unwrap());
        worst = worst.max(fdm.max_abs_diff(&apply(&tddl, &params, &x, None)).unwrap());
    }
    // TFDL with positive coefficients must be bit-identical to the moment layer
    let x = random_tensor(&[1, 2, 8, 8], 1.0, &mut rng(116));
    let pos = Tensor::from_fn(&[1, 2, 8, 8], |i| 0.1 + (i[2] * i[3]) as f64);
    let mut exact = true;
    for (p, q) in [(1, 0), (0, 1)] {
        let spec = MomentSpec::new(p, q, 2, 2, h, h).unwrap();
        let mut a = ParamSet::new();
        let tfdl = DiffLayer::tfdl(&mut a, "f", spec.clone()).unwrap();
        let mut b = ParamSet::new();
        let moment = DiffLayer::moment(&mut b, "f", spec).unwrap();
        randomize(&mut a, 0.5, &mut rng(117));
        b.load_flat(&a.flatten()).unwrap();
        exact &= apply(&tfdl, &a, &x, Some(&pos)) == apply(&moment, &b, &x, None);
    }
    outcome(worst < REDUCTION_TOL && exact, format!("fdm/moment/tddl {worst:.2e}, tfdl exact {exact}"))
}

fn solver_physics() -> Outcome {
    let mut p = PdeConfig::preset(Preset::NavierStokes);
    p.fine_grid = 64;
    p.coarse_grid = 32;
    let d = generate_dataset(&p, 2, 10, 118).unwrap();
    let mut div = 0.0f64;
    for i in 0..d.len() {
        for t in 0..d.snapshots() {
            let vel = velocity_from_vorticity(&d.snapshot(i, t), p.length).unwrap();
            div = div.max(spectral_divergence(&vel, p.length));
        }
    }

    let mut p = PdeConfig::preset(Preset::Burgers);
    p.fine_grid = 64;
    p.coarse_grid = 64;
    p.forcing = false;
    let d = generate_dataset(&p, 2, 10, 119).unwrap();
    let mut monotone = true;
    for i in 0..d.len() {
        let e: Vec<f64> = (0..d.snapshots()).map(|t| d.snapshot(i, t).l2_norm()).collect();
        monotone &= e.windows(2).all(|w| w[1] <= w[0]);
    }

    let n = 16;
    let mut p = PdeConfig::preset(Preset::FitzhughNagumo);
    p.fine_grid = n;
    p.coarse_grid = n;
    let solver = SpectralSolver::new(&p, n, None).unwrap();
    let (u0, v0) = (0.6, -0.2);
    let mut state: Vec<f64> = [vec![u0; n * n], vec![v0; n * n]].concat();
    let mut ode = 0.0f64;
    for m in 1..=10 {
        state = solver.advance(&state);
        let (u, v) = fn_reaction_rk4(u0, v0, p.alpha, p.beta, p.solver_dt(), m * p.substeps);
        for (j, s) in state.iter().enumerate() {
            ode = ode.max((s - if j < n * n { u } else { v }).abs());
        }
    }
    outcome(
        div < DIVERGENCE_TOL && monotone && ode < ODE_TOL,
        format!("divergence {div:.2e}, burgers energy monotone {monotone}, fn ode {ode:.2e}"),
    )
}

fn noise_model() -> Outcome {
    let mut p = PdeConfig::preset(Preset::Burgers);
    p.fine_grid = 32;
    p.coarse_grid = 32;
    let d = generate_dataset(&p, 20, 10, 120).unwrap();
    let noisy = add_noise(&d.trajectories, NOISE_LEVEL, 121).unwrap();
    let ratio = noise_ratio_std(&d.trajectories, &noisy).unwrap();
    let rel = (ratio - NOISE_LEVEL).abs() / NOISE_LEVEL;
    outcome(rel < NOISE_REL_TOL, format!("std ratio {ratio:.4e} ({:.2}% off)", 100.0 * rel))
}

fn fit(pde: &PdeConfig, method: Method, data: &Dataset, test: &Dataset, epochs: usize) -> EvalReport {
    let mut cfg = ModelConfig::new(method, BackboneConfig::ConvResnet { width: 8, blocks: 2 });
    cfg.hypernet_width = 8;
    let mut model = HybridModel::<f64>::new(pde, &cfg, 7).unwrap();
    let tc = TrainConfig { epochs, batch_size: 16, learning_rate: 5e-3, ..TrainConfig::default() };
    train(&mut model, data, &tc).unwrap();
    evaluate(&model, test, None, 1.0).unwrap()
}

fn burgers_ordering() -> Outcome {
    let t = Instant::now();
    let mut pde = PdeConfig::preset(Preset::Burgers);
    pde.fine_grid = 64;
    pde.coarse_grid = 64;
    let clean = generate_dataset(&pde, 100, 10, 1).unwrap();
    let test = generate_dataset(&pde, 20, 50, 2).unwrap();
    let data = Dataset::new(add_noise(&clean.trajectories, NOISE_LEVEL, 3).unwrap(), None).unwrap();
    let mut reports = Vec::new();
    for m in [Method::Blackbox, Method::Moment, Method::Tfdl, Method::Tddl] {
        reports.push((m, fit(&pde, m, &data, &test, 4)));
    }
    let err = |m: Method| reports.iter().find(|r| r.0 == m).unwrap().1.avg_l2_error;
    let bb = err(Method::Blackbox);
    let ordered = err(Method::Moment) < ORDERING_FACTOR * bb && err(Method::Tddl) < ORDERING_FACTOR * bb;
    let sr = reports.iter().filter(|r| r.0 != Method::Blackbox).all(|r| r.1.sr_percent == 100.0);
    let parts: Vec<String> =
        reports.iter().map(|(m, r)| format!("{m:?} {:.3e}/SR {}", r.avg_l2_error, r.sr_percent)).collect();
    outcome(ordered && sr, format!("{}, {:.0}s", parts.join(", "), t.elapsed().as_secs_f64()))
}

fn data_efficiency() -> Outcome {
    let t = Instant::now();
    let mut pde = PdeConfig::preset(Preset::FitzhughNagumo);
    pde.fine_grid = 32;
    pde.coarse_grid = 32;
    pde.substeps = 20;
    let clean = generate_dataset(&pde, 100, 10, 1).unwrap();
    let test = generate_dataset(&pde, 20, 50, 2).unwrap();
    let data = Dataset::new(add_noise(&clean.trajectories, NOISE_LEVEL, 3).unwrap(), None).unwrap();
    let small = data.take(25).unwrap();
    let bb = fit(&pde, Method::Blackbox, &data, &test, 5).avg_l2_error;
    let moment = fit(&pde, Method::Moment, &small, &test, 5).avg_l2_error;
    let tddl = fit(&pde, Method::Tddl, &small, &test, 5).avg_l2_error;
    outcome(
        moment <= bb && tddl <= bb,
        format!(
            "blackbox N=100 {bb:.3e}, moment N=25 {moment:.3e}, tddl N=25 {tddl:.3e}, {:.0}s",
            t.elapsed().as_secs_f64()
        ),
    )
}

fn sine_averages(n: usize, shift: f64) -> Vec<f64> {
    let h = 1.0 / n as f64;
    (0..n)
        .map(|j| {
            let (a, b) = (j as f64 * h - shift, (j + 1) as f64 * h - shift);
            ((TAU * a).cos() - (TAU * b).cos()) / (TAU * h)
        })
        .collect()
}

fn classical_schemes() -> Outcome {
    let mut transport = 0.0f64;
    for profile in [Profile::Sine, Profile::Square] {
        let rows = run_demo(&AdvectionConfig { cells: 100, mu: 1.0, steps: 100, profile }, Scheme::Upwind1).unwrap();
        transport = rows.iter().map(|r| r.error).fold(transport, f64::max);
    }

    let mut r = rng(122);
    let mut tvd = 0usize;
    for _ in 0..TVD_TRIALS {
        let mut u = Vec::new();
        for _ in 0..r.random_range(2..12) {
            let v: f64 = r.random_range(-2.0..2.0);
            u.extend(std::iter::repeat_n(v, r.random_range(1..6)));
        }
        let mu = r.random_range(0.01..=1.0);
        let next = flux_limited(&u, mu, Limiter::Minmod).unwrap();
        tvd += usize::from(total_variation(&next) <= total_variation(&u) + 1e-12);
    }

    let ns = [320usize, 640, 1280];
    let errs: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let mut u = sine_averages(n, 0.0);
            for _ in 0..n {
                u = weno3_step(&u, 0.5);
            }
            u.iter().zip(sine_averages(n, 0.5)).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64
        })
        .collect();
    let pts: Vec<(f64, f64)> = ns.iter().zip(&errs).map(|(&n, &e)| ((n as f64).ln(), -e.ln())).collect();
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / 3.0, pts.iter().map(|p| p.1).sum::<f64>() / 3.0);
    let order = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();

    let mut mass = 0.0f64;
    for _ in 0..200 {
        let u: Vec<f64> = (0..r.random_range(3..60)).map(|_| r.random_range(-3.0..3.0)).collect();
        let mu = r.random_range(0.01..=1.0);
        let before: f64 = u.iter().sum();
        for scheme in Scheme::ALL {
            let after: f64 = scheme.step(&u, mu).unwrap().iter().sum();
            mass = mass.max((after - before).abs());
        }
    }
    outcome(
        transport < TRANSPORT_TOL && tvd == TVD_TRIALS && order >= WENO_MIN_ORDER && mass < MASS_TOL,
        format!("upwind mu=1 {transport:.1e}, tvd {tvd}/{TVD_TRIALS}, weno3 order {order:.2}, mass drift {mass:.1e}"),
    )
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let cfg = r#"{
        "pde": {"preset": "burgers", "fine_grid": 32, "coarse_grid": 16, "substeps": 4},
        "model": {"method": "tddl", "backbone": {"kind": "conv_resnet", "width": 4, "blocks": 1}, "hypernet_width": 4},
        "train": {"epochs": 2, "batch_size": 4},
        "data": {"train_trajectories": 6, "train_steps": 3, "test_trajectories": 2, "test_steps": 4}
    }"#;
    let cfg_dir = tempfile::tempdir().unwrap();
    let path = cfg_dir.path().join("config.json");
    fs::write(&path, cfg).unwrap();
    let mut runs = Vec::new();
    for _ in 0..2 {
        let out = tempfile::tempdir().unwrap();
        let inv = Invocation::load(&path, Some(out.path()), Some(42)).unwrap();
        run(Command::Generate, &inv).unwrap();
        run(Command::Train, &inv).unwrap();
        runs.push((read_dir_bytes(out.path()), out));
    }
    let names: Vec<&str> = runs[0].0.iter().map(|f| f.0.as_str()).collect();
    let same = runs[0].0 == runs[1].0;
    outcome(same && names.len() >= 5, format!("{} files identical: {same}", names.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("moment algebra round trip and basis bank", moment_algebra),
        ("constrained moments hit their targets", constraint_satisfaction),
        ("assembled kernels converge at order r+1", convergence_order),
        ("flipped kernels obey the sign law", flip_law),
        ("gradient checks on every trainable path", gradient_suite),
        ("reduced layers coincide", reduction_identities),
        ("solver physics", solver_physics),
        ("relative noise level", noise_model),
        ("burgers hybrid beats black box", burgers_ordering),
        ("fitzhugh-nagumo data efficiency", data_efficiency),
        ("classical advection schemes", classical_schemes),
        ("generate and train are deterministic", determinism),
    ];
    // numeric arguments select criteria, e.g. `cargo test --test acceptance -- 1 5`
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        ran += 1;
        let o = f();
        failed += usize::from(!o.pass);
        println!("{} {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("{}/{ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
