mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ultrabm::imagedata::PairManifest;
use ultrabm::metrics::{Lpips, MetricRow, NiqeModel};
use ultrabm::nn::Ctx;
use ultrabm::pipeline::*;
use ultrabm::tensor::Tensor;
use ultrabm::Error;

fn conv(ci: usize, co: usize, k: usize) -> usize {
    co * ci * k * k + co
}

fn cu(c: usize) -> usize {
    2 * conv(c, c, 3)
}

fn unet(cin: usize, w: &[usize]) -> usize {
    let n = w.len();
    let mut t = conv(cin, w[0], 3);
    for k in 0..n {
        if k > 0 {
            t += conv(w[k - 1], w[k], 3);
        }
        t += 2 * cu(w[k]);
        if k + 1 < n {
            t += conv(w[k + 1], w[k], 1) + conv(2 * w[k], w[k], 1);
        }
    }
    t
}

fn modulation(c: usize) -> usize {
    let h = (c as f64 * 2.66).floor() as usize;
    let attn = 2 * (2 * c) + 2 * (c * 9 + c);
    attn + conv(c, c, 1) + conv(c, 2 * h, 1) + (2 * h * 9 + 2 * h) + conv(h, c, 1)
}

fn rsmu(c: usize, scale: usize) -> usize {
    let d = (c / 8).max(4);
    let skff = conv(c, d, 1) + 3 * conv(d, c, 1);
    let fsi = 4 * conv(c, c, 3) + 3 * skff;
    let stage = conv(c, c, 1) + conv(c, 4 * c, 1) + conv(c, 16 * c, 1) + fsi + conv(6 * c, c, 1);
    (if scale == 2 { 1 } else { 2 }) * stage + conv(c, 3, 3)
}

/// Parameter count derived from the layer inventory alone.
fn counting_oracle(cfg: &ModelConfig) -> usize {
    let w = cfg.widths();
    let isdm: usize = (0..5).map(|k| 2 * modulation(w[k]) + conv(SEMANTIC_WIDTHS[k], w[k], 1)).sum();
    unet(3, &w) + conv(w[0], 3, 3) + unet(3, &w) + isdm + rsmu(w[0], cfg.scale)
}

#[test]
fn parameter_count_matches_golden_and_oracle() {
    let golden: serde_json::Value = serde_json::from_str(include_str!("golden/param_count.json")).unwrap();
    for (key, scale) in [("scale2", 2), ("scale4", 4)] {
        let cfg = ModelConfig::with_scale(scale);
        let n = build_model::<f32>(&cfg).unwrap().param_count();
        assert_eq!(n, counting_oracle(&cfg), "{key}");
        assert_eq!(n as u64, golden[key].as_u64().unwrap(), "{key}");
    }
}

#[test]
fn same_seed_same_parameters() {
    let cfg = ModelConfig::default();
    let (a, b) = (build_model::<f32>(&cfg).unwrap(), build_model::<f32>(&cfg).unwrap());
    for id in a.params.ids() {
        assert_eq!(a.params.get(id), b.params.get(id));
    }
    let other = build_model::<f32>(&ModelConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.params.get(a.params.ids().next().unwrap()), other.params.get(other.params.ids().next().unwrap()));
}

#[test]
fn ablation_structure() {
    let mut cfg = ModelConfig::default();
    cfg.ablations.disable("isdm").unwrap();
    let m = build_model::<f32>(&cfg).unwrap();
    assert!(m.params.names().iter().all(|n| !n.starts_with("isdm")));
    let mut bad = ModelConfig::default();
    bad.ablations.isdm = false;
    bad.ablations.imu = false;
    assert!(matches!(build_model::<f32>(&bad), Err(Error::Config(_))));
    let mut bil = ModelConfig::default();
    bil.ablations.disable("rsmu").unwrap();
    let m = build_model::<f32>(&bil).unwrap();
    assert!(m.params.names().iter().any(|n| n.starts_with("bilinear")));
    assert!(m.params.names().iter().all(|n| !n.starts_with("rsmu")));
    let y = m.forward(&Tensor::full([1, 3, 16, 16], 0.3)).unwrap().y;
    assert_eq!(y.shape(), [1, 3, 32, 32]);
}

#[test]
fn forward_shapes_and_degenerate_inputs() {
    let m2 = build_model::<f32>(&ModelConfig::with_scale(2)).unwrap();
    let out = m2.forward(&Tensor::full([1, 3, 64, 64], 0.2)).unwrap();
    assert_eq!(out.y.shape(), [1, 3, 128, 128]);
    assert_eq!(out.u_nl.shape(), [1, 3, 64, 64]);
    let m4 = build_model::<f32>(&ModelConfig::with_scale(4)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::from_fn([2, 3, 32, 32], |_| rng.random_range(0.0..1.0));
    assert_eq!(m4.forward(&x).unwrap().y.shape(), [2, 3, 128, 128]);
    for v in [0.0, 1.0] {
        let o = m2.forward(&Tensor::full([1, 3, 32, 32], v)).unwrap();
        assert!(o.y.all_finite() && o.u_nl.all_finite() && o.v_nl.all_finite());
        assert!(o.y.min() >= 0.0 && o.y.max() <= 1.0);
    }
    assert!(matches!(m2.forward(&Tensor::full([1, 3, 24, 24], 0.1)), Err(Error::Shape(_))));
}

#[test]
fn no_nan_in_backward_for_extreme_images() {
    let cfg = TrainConfig { model: ModelConfig::default(), ..TrainConfig::default() };
    let model = build_model::<f32>(&cfg.model).unwrap();
    let obj = Objective::<f32>::new(&cfg);
    for v in [0.0, 1.0] {
        let x = Tensor::full([1, 3, 16, 16], v);
        let r = Tensor::full([1, 3, 32, 32], v);
        let mut cx = Ctx::new(&model.params, true);
        let (_, t) = obj.build(&mut cx, &model, &x, &r).unwrap();
        assert!(cx.g.value(t).all_finite());
        let mut g = cx.g.backward(t).unwrap();
        assert!(cx.param_grads(&mut g).iter().all(|t| t.all_finite()));
    }
}

#[test]
fn without_isdm_output_ignores_semantic_input() {
    let mut cfg = ModelConfig::default();
    cfg.ablations.disable("isdm").unwrap();
    let m = build_model::<f64>(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::from_fn([1, 3, 16, 16], |_| rng.random_range(0.0..1.0));
    let base = m.forward_with(&x, Semantic::Image(&x)).unwrap().y;
    for _ in 0..4 {
        let mut s = x.clone();
        let i = rng.random_range(0..s.numel());
        s.data_mut()[i] += 1e-3;
        assert_eq!(m.forward_with(&x, Semantic::Image(&s)).unwrap().y, base);
    }
    // with ISDM the same perturbation is visible
    let full = build_model::<f64>(&ModelConfig::default()).unwrap();
    let mut full = full;
    let mut rng2 = ChaCha8Rng::seed_from_u64(3);
    for id in full.params.ids().collect::<Vec<_>>() {
        if full.params.name(id).contains("proj_out") || full.params.name(id).contains("head") {
            for v in full.params.get_mut(id).data_mut() {
                *v = rng2.random_range(-0.1..0.1);
            }
        }
    }
    let a = full.forward_with(&x, Semantic::Image(&x)).unwrap().y;
    let s = x.map(|v| 1.0 - v);
    assert!(full.forward_with(&x, Semantic::Image(&s)).unwrap().y.max_abs_diff(&a) > 0.0);
}

/// Small-magnitude random values in the zero-initialized projections so every
/// parameter influences the loss.
fn activate(model: &mut Model<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in model.params.ids().collect::<Vec<_>>() {
        let n = model.params.name(id);
        if n.contains("proj_out") || n.contains("head") {
            for v in model.params.get_mut(id).data_mut() {
                *v = rng.random_range(-0.05..0.05);
            }
        }
    }
}

#[test]
fn train_step_gradient_matches_finite_differences() {
    let cfg = TrainConfig::default();
    let mut model = build_model::<f64>(&cfg.model).unwrap();
    activate(&mut model, 4);
    let data = common::pairs(2, 2, 16);
    let x = Tensor::stack_batch(&[data[0].0.cast::<f64>(), data[1].0.cast()]).unwrap();
    let r = Tensor::stack_batch(&[data[0].1.cast::<f64>(), data[1].1.cast()]).unwrap();
    let obj = Objective::<f64>::new(&cfg);
    let grads = {
        let mut cx = Ctx::new(&model.params, true);
        let (_, t) = obj.build(&mut cx, &model, &x, &r).unwrap();
        let mut g = cx.g.backward(t).unwrap();
        cx.param_grads(&mut g)
    };
    let eval = |model: &Model<f64>| {
        let mut cx = Ctx::new(&model.params, false);
        let (_, t) = obj.build(&mut cx, model, &x, &r).unwrap();
        (cx.g.value(t).item(), cx.g.branch_fingerprint())
    };
    let probes = ["refl.dec1.conv1.weight", "illum.enc2.conv1.weight", "isdm1.imu.ffn.proj_out.weight", "rsmu.head.weight", "isdm2.smu.value.weight"];
    let h = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut checked, mut crossed) = (0, 0);
    for name in probes {
        let id = model.params.find(name).unwrap();
        let g = &grads[id.index()];
        for _ in 0..4 {
            let i = rng.random_range(0..g.numel());
            let orig = model.params.get(id).data()[i];
            model.params.get_mut(id).data_mut()[i] = orig + h;
            let (a, fa) = eval(&model);
            model.params.get_mut(id).data_mut()[i] = orig - h;
            let (b, fb) = eval(&model);
            model.params.get_mut(id).data_mut()[i] = orig;
            let fd = (a - b) / (2.0 * h);
            let an = g.data()[i];
            let ok = (fd - an).abs() <= 1e-2 * fd.abs().max(an.abs()).max(1e-6);
            checked += 1;
            if !ok && fa != fb {
                // the step straddles a rectifier or |·| kink
                crossed += 1;
                continue;
            }
            assert!(ok, "{name}[{i}]: fd {fd} analytic {an}");
        }
    }
    assert!(crossed * 10 < checked, "{crossed} of {checked} probes crossed a kink");
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let cfg = TrainConfig::default();
    let model = build_model::<f32>(&cfg.model).unwrap();
    let before = model.params.clone();
    let mut state = TrainState::new(model);
    let d = common::pairs(2, 2, 16);
    let obj = Objective::new(&cfg);
    let x = Tensor::stack_batch(&[d[0].0.clone(), d[1].0.clone()]).unwrap();
    let r = Tensor::stack_batch(&[d[0].1.clone(), d[1].1.clone()]).unwrap();
    train_step(&mut state, &obj, &cfg.optim, &x, &r, 0.0).unwrap();
    for id in before.ids() {
        assert_eq!(before.get(id).data(), state.model.params.get(id).data(), "{}", before.name(id));
    }
    assert_eq!(state.iter, 1);
    assert!(state.m.iter().any(|m| m.data().iter().any(|v| *v != 0.0)));
}

#[test]
fn non_finite_loss_reports_components() {
    let cfg = TrainConfig::default();
    let mut model = build_model::<f32>(&cfg.model).unwrap();
    let id = model.params.find("rsmu.head.bias").unwrap();
    model.params.get_mut(id).data_mut()[0] = f32::NAN;
    let mut state = TrainState::new(model);
    let d = common::pairs(1, 2, 16);
    let err = train_step(&mut state, &Objective::new(&cfg), &cfg.optim, &d[0].0, &d[0].1, 1e-4).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Numeric(_)));
    for k in ["l_sl", "l_is", "l_r", "l_p", "total"] {
        assert!(msg.contains(k), "{msg}");
    }
}

#[test]
fn frozen_semantic_encoder_is_untouched_by_training() {
    let mut cfg = TrainConfig::default();
    cfg.schedule = Schedule::single(1, 16, 10);
    let data = TrainData::new(common::pairs(2, 2, 16), 2).unwrap();
    let model = build_model::<f32>(&cfg.model).unwrap();
    let before = model.semantic_encoder().clone();
    let (state, log) = train(&cfg, &data, TrainState::new(model), TrainOptions::default()).unwrap();
    assert_eq!(log.len(), 10);
    assert_eq!(*state.model.semantic_encoder(), before);
}

#[test]
fn empty_manifest_and_scale_mismatch_are_validation_errors() {
    assert!(matches!(TrainData::<f32>::from_manifest(&PairManifest::default()), Err(Error::Validation(_))));
    let dir = tempfile::tempdir().unwrap();
    let m = common::write_dataset(dir.path(), 1, 4, 32);
    let model = build_model::<f32>(&ModelConfig::with_scale(2)).unwrap();
    let lp = Lpips::uncalibrated();
    let opts = EvalOptions { lpips: &lp, niqe: None };
    assert!(matches!(evaluate(&model, &m, &opts, |_, _, _, _| Ok(())), Err(Error::Validation(_))));
    let data = TrainData::<f32>::from_manifest(&m).unwrap();
    let cfg = TrainConfig::default();
    let st = TrainState::new(build_model::<f32>(&cfg.model).unwrap());
    assert!(matches!(train(&cfg, &data, st, TrainOptions::default()), Err(Error::Validation(_))));
}

#[test]
fn schedule_stage_boundaries_in_training() {
    let mut cfg = TrainConfig::default();
    cfg.schedule = Schedule { stages: vec![Stage { batch: 2, patch: 16, iterations: 2 }, Stage { batch: 1, patch: 16, iterations: 1 }] };
    let data = TrainData::new(common::pairs(2, 2, 16), 2).unwrap();
    let (x0, _) = data.batch(&cfg.schedule.stage_at(1).1, 0, 1, true).unwrap();
    let (x2, _) = data.batch(&cfg.schedule.stage_at(2).1, 0, 2, true).unwrap();
    assert_eq!((x0.shape()[0], x2.shape()[0]), (2, 1));
    let st = TrainState::new(build_model::<f32>(&cfg.model).unwrap());
    let (_, log) = train(&cfg, &data, st, TrainOptions::default()).unwrap();
    let stages: Vec<usize> = log.iter().map(|r| r.stage).collect();
    assert_eq!(stages, [0, 0, 1]);
    assert_eq!(log.iter().map(|r| r.iter).collect::<Vec<_>>(), [1, 2, 3]);
}

#[test]
fn log_and_checkpoint_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = TrainConfig::default();
    cfg.schedule = Schedule::single(1, 16, 4);
    cfg.checkpoint_every = 2;
    let data = TrainData::new(common::pairs(2, 2, 16), 2).unwrap();
    let st = TrainState::new(build_model::<f32>(&cfg.model).unwrap());
    let (state, log) = train(&cfg, &data, st, TrainOptions { out_dir: Some(dir.path()), ..Default::default() }).unwrap();
    let text = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), LOG_COLUMNS.join(","));
    assert_eq!(lines.count(), 4);
    let mut rdr = csv::Reader::from_path(dir.path().join(LOG_FILE)).unwrap();
    let back: Vec<LossRecord> = rdr.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(back, log);
    for it in [2, 4] {
        assert!(dir.path().join(checkpoint_name(it)).is_file());
    }
    let (loaded, lcfg) = load_checkpoint::<f32>(&dir.path().join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(lcfg, cfg);
    assert_eq!(loaded.iter, 4);
    for id in state.model.params.ids() {
        assert_eq!(loaded.model.params.get(id), state.model.params.get(id));
        assert_eq!(loaded.m[id.index()], state.m[id.index()]);
        assert_eq!(loaded.v[id.index()], state.v[id.index()]);
    }
}

#[test]
fn enhance_pads_and_crops() {
    let m = build_model::<f32>(&ModelConfig::with_scale(2)).unwrap();
    let x = Tensor::from_fn([1, 3, 65, 63], |i| ((i % 97) as f32) / 97.0);
    let y = enhance(&m, &x).unwrap();
    assert_eq!(y.shape(), [1, 3, 130, 126]);
    assert_eq!(enhance(&m, &x).unwrap(), y);
}

#[test]
fn evaluation_rows_aggregate_and_identity() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::write_dataset(dir.path(), 2, 2, 32);
    let model = build_model::<f32>(&ModelConfig::with_scale(2)).unwrap();
    let lp = Lpips::uncalibrated();
    let nq = NiqeModel::bundled();
    let opts = EvalOptions { lpips: &lp, niqe: Some(&nq) };
    let mut seen = 0;
    let report = evaluate(&model, &m, &opts, |_, low, y, r| {
        seen += 1;
        assert_eq!(y.shape(), r.shape());
        assert_eq!(low.shape()[2] * 2, y.shape()[2]);
        Ok(())
    })
    .unwrap();
    assert_eq!((report.rows.len(), seen), (m.len(), m.len()));
    let mean = report.rows.iter().map(|r| r.psnr).sum::<f64>() / report.rows.len() as f64;
    assert!((report.aggregate().psnr - mean).abs() < 1e-9);
    assert!(report.rows.iter().all(|r| r.psnr.is_finite() && r.ssim.is_finite() && r.niqe.is_some()));

    let pairs = common::pairs(2, 2, 32);
    for (_, r) in &pairs {
        let row: MetricRow = score_pair("ref", r, r, r, &opts).unwrap();
        assert_eq!((row.psnr, row.ssim, row.rmse, row.lpips, row.loe), (100.0, 1.0, 0.0, 0.0, 0.0));
    }
}
