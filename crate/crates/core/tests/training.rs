mod common;

use common::{randomize, random_tensor, rng};
use pdenetpp::autodiff::Tape;
use pdenetpp::backbone::BackboneConfig;
use pdenetpp::hybrid::{HybridModel, Method, ModelConfig};
use pdenetpp::layers::DiffLayer;
use pdenetpp::moment::MomentSpec;
use pdenetpp::params::{Adam, ParamSet};
use pdenetpp::solvers::{generate_dataset, Dataset, PdeConfig, Preset, SpectralSolver};
use pdenetpp::tensor::Tensor;
use pdenetpp::training::{evaluate, loss, relative_l2, rollout, summarize, train, Stepper, TrainConfig};
use pdenetpp::Error;

const NET: BackboneConfig = BackboneConfig::ConvResnet { width: 3, blocks: 1 };

fn pde(preset: Preset, n: usize) -> PdeConfig {
    let mut p = PdeConfig::preset(preset);
    p.coarse_grid = n;
    p.fine_grid = n;
    p
}

fn toy_data(p: &PdeConfig, count: usize, steps: usize, seed: u64) -> Dataset {
    let mut q = p.clone();
    q.substeps = 4;
    generate_dataset(&q, count, steps, seed).unwrap()
}

fn batch_loss(model: &HybridModel<f64>, x: &Tensor<f64>, y: &Tensor<f64>, lambda: f64) -> (f64, f64, f64) {
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let t = loss(model, &bound, &tape.constant(x.clone()), y, lambda).unwrap();
    let v = |v: &pdenetpp::autodiff::Var<f64>| v.value().item().unwrap();
    (v(&t.total), v(&t.pred), v(&t.reg))
}

#[test]
fn relative_error_of_a_constructed_perturbation() {
    let y = random_tensor(&[2, 8, 8], 1.0, &mut rng(1));
    let d = random_tensor(&[2, 8, 8], 1.0, &mut rng(2));
    let d = d.scale(0.1 * y.l2_norm() / d.l2_norm());
    assert!((relative_l2(&y.add(&d).unwrap(), &y).unwrap() - 0.1).abs() < 1e-12);
    assert_eq!(relative_l2(&y, &y).unwrap(), 0.0);
}

#[test]
fn untrained_black_box_loss_is_the_persistence_error() {
    let p = pde(Preset::Burgers, 8);
    let model = HybridModel::<f64>::new(&p, &ModelConfig::new(Method::Blackbox, NET), 0).unwrap();
    let x = random_tensor(&[3, 2, 8, 8], 1.0, &mut rng(3));
    let y = random_tensor(&[3, 2, 8, 8], 1.0, &mut rng(4));
    let expected: f64 = (0..3)
        .map(|b| relative_l2(&x.index_outer(b).unwrap(), &y.index_outer(b).unwrap()).unwrap())
        .sum::<f64>()
        / 3.0;
    let (total, pred, reg) = batch_loss(&model, &x, &y, 0.5);
    assert!((pred - expected).abs() < 1e-14);
    assert_eq!(reg, 0.0);
    assert_eq!(total, pred);
    assert!(matches!(
        loss(&model, &model.bind(&Tape::new()), &Tape::new().constant(x.clone()), &Tensor::zeros(&[0, 2, 8, 8]), 0.0),
        Err(Error::EmptyBatch)
    ));
}

#[test]
fn perfect_predictor_pays_only_the_penalty() {
    let mut p = pde(Preset::Burgers, 8);
    p.dt = 0.0;
    let mut model = HybridModel::<f64>::new(&p, &ModelConfig::new(Method::Moment, NET), 0).unwrap();
    let x = random_tensor(&[2, 2, 8, 8], 1.0, &mut rng(5));
    let (_, _, reg0) = batch_loss(&model, &x, &x, 1e-3);
    assert_eq!(reg0, 0.0);
    randomize(model.params_mut(), 0.2, &mut rng(6));
    let l1: f64 = model
        .params()
        .names()
        .iter()
        .filter(|n| n.ends_with(".theta"))
        .map(|n| model.params().get(model.params().id(n).unwrap()).data().iter().map(|v| v.abs()).sum::<f64>())
        .sum();
    let (total, pred, reg) = batch_loss(&model, &x, &x, 1e-3);
    assert_eq!(pred, 0.0);
    assert!((reg - l1).abs() < 1e-12);
    assert!((total - 1e-3 * l1).abs() < 1e-15);
}

#[test]
fn zero_model_loss_is_the_known_part_residual() {
    let p = pde(Preset::FitzhughNagumo, 8);
    let model = HybridModel::<f64>::new(&p, &ModelConfig::new(Method::Moment, NET), 0).unwrap();
    let x = random_tensor(&[2, 2, 8, 8], 1.0, &mut rng(7));
    let y = random_tensor(&[2, 2, 8, 8], 1.0, &mut rng(8));
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let (phi, _) = model.known_part(&bound, &tape.constant(x.clone())).unwrap();
    let next = x.add(&phi.value().scale(p.dt)).unwrap();
    let expected: f64 = (0..2)
        .map(|b| relative_l2(&next.index_outer(b).unwrap(), &y.index_outer(b).unwrap()).unwrap())
        .sum::<f64>()
        / 2.0;
    let (_, pred, _) = batch_loss(&model, &x, &y, 0.0);
    assert!((pred - expected).abs() < 1e-12);
    assert_eq!(pred, batch_loss(&model, &x, &y, 0.0).1);
}

#[test]
fn loss_ignores_batch_order() {
    let p = pde(Preset::Burgers, 8);
    let mut model = HybridModel::<f64>::new(&p, &ModelConfig::new(Method::Tddl, NET), 0).unwrap();
    randomize(model.params_mut(), 0.2, &mut rng(9));
    let x = random_tensor(&[4, 2, 8, 8], 1.0, &mut rng(10));
    let y = random_tensor(&[4, 2, 8, 8], 1.0, &mut rng(11));
    let perm = [2, 0, 3, 1];
    let pick = |t: &Tensor<f64>| Tensor::stack(&perm.map(|i| t.index_outer(i).unwrap())).unwrap();
    let a = batch_loss(&model, &x, &y, 1e-3);
    let b = batch_loss(&model, &pick(&x), &pick(&y), 1e-3);
    assert!((a.0 - b.0).abs() < 1e-12);
}

#[test]
fn training_is_deterministic() {
    let p = pde(Preset::Burgers, 8);
    let data = toy_data(&p, 3, 3, 1);
    let cfg = TrainConfig { epochs: 2, batch_size: 4, seed: 3, ..TrainConfig::default() };
    let fit = |cfg: &TrainConfig| {
        let mut m = HybridModel::<f64>::new(&p, &ModelConfig::new(Method::Tddl, NET), 1).unwrap();
        let h = train(&mut m, &data, cfg).unwrap();
        (m.params().flatten(), h)
    };
    let (a, ha) = fit(&cfg);
    let (b, hb) = fit(&cfg);
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    assert_eq!(ha.len(), 2);
    let (c, _) = fit(&TrainConfig { seed: 4, ..cfg });
    assert_ne!(a, c);
}

#[test]
fn zero_epochs_leave_the_model_alone() {
    let p = pde(Preset::Burgers, 8);
    let data = toy_data(&p, 2, 2, 2);
    let mut m = HybridModel::<f64>::new(&p, &ModelConfig::new(Method::Moment, NET), 1).unwrap();
    let before = m.params().flatten();
    let h = train(&mut m, &data, &TrainConfig { epochs: 0, ..TrainConfig::default() }).unwrap();
    assert!(h.is_empty());
    assert_eq!(m.params().flatten(), before);
}

#[test]
fn training_reduces_the_loss_and_rejects_bad_input() {
    let p = pde(Preset::Burgers, 8);
    let data = toy_data(&p, 4, 4, 3);
    let mut m = HybridModel::<f64>::new(&p, &ModelConfig::new(Method::Blackbox, NET), 1).unwrap();
    let h = train(&mut m, &data, &TrainConfig { epochs: 8, batch_size: 4, learning_rate: 1e-2, ..TrainConfig::default() }).unwrap();
    assert!(h.last().unwrap().loss < h[0].loss);

    let mut bad = data.clone();
    bad.trajectories.data_mut()[0] = f64::NAN;
    assert!(matches!(train(&mut m, &bad, &TrainConfig { epochs: 1, ..TrainConfig::default() }), Err(Error::NanLoss { epoch: 0 })));
    let single = Dataset::new(Tensor::zeros(&[1, 1, 2, 8, 8]), None).unwrap();
    assert!(matches!(train(&mut m, &single, &TrainConfig::default()), Err(Error::EmptyBatch)));
    assert!(TrainConfig { lambda: -1.0, ..TrainConfig::default() }.validate().is_err());
}

#[test]
fn moment_layer_learns_a_derivative() {
    let n = 32;
    let h = 2.0 * std::f64::consts::PI / n as f64;
    let spec = MomentSpec::new(1, 0, 1, 2, h, h).unwrap();
    let mut params = ParamSet::new();
    let layer = DiffLayer::moment(&mut params, "d", spec).unwrap();
    randomize(&mut params, 0.3, &mut rng(12));
    let x = Tensor::from_fn(&[1, 1, n, n], |i| (2.0 * i[2] as f64 * h).sin());
    let y = Tensor::from_fn(&[1, 1, n, n], |i| 2.0 * (2.0 * i[2] as f64 * h).cos());
    let mut opt = Adam::new(1e-2);
    let mut last = f64::INFINITY;
    for _ in 0..500 {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let out = layer.apply(&bound, &tape.constant(x.clone()), None, None).unwrap().value;
        let l = out.add_const(&y.scale(-1.0)).unwrap().l2_norm().scale(1.0 / y.l2_norm());
        last = l.value().item().unwrap();
        let g = bound.grads(&tape.backward(l).unwrap()).unwrap();
        opt.step(&mut params, &g).unwrap();
    }
    assert!(last < 1e-4, "final loss {last}");
}

/// Identity stepper that starts returning NaN on call `after`.
struct Blowup {
    after: usize,
    calls: std::sync::atomic::AtomicUsize,
}

impl Stepper for Blowup {
    fn step_batch(&self, states: &Tensor<f64>) -> pdenetpp::Result<Tensor<f64>> {
        let k = self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        Ok(if k + 1 >= self.after { states.map(|_| f64::NAN) } else { states.clone() })
    }
}

#[test]
fn rollouts_follow_the_bookkeeping() {
    let p = pde(Preset::Burgers, 16);
    let data = toy_data(&p, 1, 5, 4);
    let u0 = data.snapshot(0, 0);
    let traj = data.trajectory(0);

    let mut frozen = p.clone();
    frozen.dt = 0.0;
    let identity = HybridModel::<f64>::new(&frozen, &ModelConfig::new(Method::Fdm, NET), 0).unwrap();
    let r0 = rollout(&identity, &u0, 0, None).unwrap();
    assert_eq!(r0.states.shape(), &[1, 2, 16, 16]);
    assert!(r0.errors.is_empty());
    let r = rollout(&identity, &u0, 5, Some(&traj)).unwrap();
    assert_eq!(r.errors[0], relative_l2(&u0, &data.snapshot(0, 1)).unwrap());
    assert!(r.errors.windows(2).all(|w| w[1] >= w[0]));
    assert!(!r.has_failed());

    let bad = Blowup { after: 3, calls: Default::default() };
    let r = rollout(&bad, &u0, 5, Some(&traj)).unwrap();
    assert_eq!(r.failed, vec![false, false, true, true, true]);
}

#[test]
fn the_generator_is_a_perfect_model() {
    let mut p = pde(Preset::Burgers, 16);
    p.substeps = 4;
    let data = generate_dataset(&p, 2, 50, 5).unwrap();
    let oracle = SpectralSolver::new(&p, 16, None).unwrap();
    let report = evaluate(&oracle, &data, None, 1.0).unwrap();
    assert_eq!(report.sr_percent, 100.0);
    assert!(report.errors.iter().flatten().all(|e| *e < 1e-6));
    assert!(report.avg_l2_error < 1e-6);
}

#[test]
fn duplicated_trajectories_score_like_one() {
    let p = pde(Preset::Burgers, 8);
    let data = toy_data(&p, 1, 6, 6);
    let mut model = HybridModel::<f64>::new(&p, &ModelConfig::new(Method::Moment, NET), 0).unwrap();
    randomize(model.params_mut(), 0.05, &mut rng(13));
    let one = evaluate(&model, &data, None, 1.0).unwrap();
    let t = data.trajectory(0);
    let many = Dataset::new(Tensor::stack(&vec![t; 11]).unwrap(), None).unwrap();
    let rep = evaluate(&model, &many, Some(6), 1.0).unwrap();
    assert_eq!(rep.avg_l2_error, one.avg_l2_error);
    assert_eq!(rep.sr_percent, one.sr_percent);
    assert!(evaluate(&model, &data, Some(7), 1.0).is_err());
}

#[test]
fn success_rate_counts_failures() {
    let runs: Vec<(Vec<f64>, bool)> = (0..100).map(|i| (vec![0.1, 0.2], i % 40 == 7)).collect();
    let r = summarize(runs);
    assert_eq!(r.sr_percent, 97.0);
    assert_eq!(r.failed, vec![7, 47, 87]);
    assert!((r.avg_l2_error - 0.15).abs() < 1e-15);
    let perfect = summarize(vec![(vec![0.0; 3], false); 4]);
    assert_eq!((perfect.avg_l2_error, perfect.sr_percent), (0.0, 100.0));
}
