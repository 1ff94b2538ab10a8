//! Central-difference checks for every differentiable graph operation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ultrabm_tensor::{ConvSpec, Filter, Graph, Tensor, Unary, Var};

fn random(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Builds `sum(f(inputs) ⊙ R)` for a fixed random `R` so every output
/// element contributes with a distinct weight.
fn scalarize(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random(g.shape(out), &mut rng, -1.0, 1.0);
    let r = g.constant(r);
    let p = g.mul(out, r).unwrap();
    g.sum(p)
}

fn check<F>(name: &str, inputs: Vec<Tensor<f64>>, f: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let eval = |ins: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars);
        let s = scalarize(&mut g, out, 99);
        g.value(s).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars);
    let s = scalarize(&mut g, out, 99);
    let grads = g.backward(s).unwrap();
    let h = 1e-6;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape().to_vec()));
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let an = analytic.data()[i];
            let err = (fd - an).abs() / (1.0 + fd.abs().max(an.abs()));
            assert!(err < 1e-6, "{name}: input {k} elem {i}: fd {fd} vs analytic {an}");
        }
    }
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

#[test]
fn broadcast_arithmetic() {
    let mut r = rng();
    let a = random(&[2, 3, 2, 2], &mut r, -1.0, 1.0);
    let b = random(&[1, 3, 1, 1], &mut r, 0.5, 1.5);
    check("add", vec![a.clone(), b.clone()], |g, v| g.add(v[0], v[1]).unwrap());
    check("sub", vec![a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]).unwrap());
    check("mul", vec![a.clone(), b.clone()], |g, v| g.mul(v[0], v[1]).unwrap());
    check("div", vec![a.clone(), b.clone()], |g, v| g.div(v[0], v[1]).unwrap());
    check("scalar", vec![a], |g, v| {
        let x = g.mul_scalar(v[0], 2.5);
        g.add_scalar(x, -0.3)
    });
}

#[test]
fn unary_ops() {
    let mut r = rng();
    // keep values away from kinks (0, ±1) so central differences are valid
    let x = Tensor::from_fn([2, 6], |i| {
        let v: f64 = r.random_range(0.1..0.9);
        let base = [0.0, 1.0, -1.2, 1.5, -2.0, 0.3][i % 6];
        base + v * if i % 2 == 0 { 0.5 } else { -0.5 }
    });
    for op in [Unary::Sigmoid, Unary::LeakyRelu(0.2), Unary::Gelu, Unary::Exp, Unary::Abs, Unary::Square, Unary::SmoothL1, Unary::Clamp(-1.0, 1.0)] {
        let mut t = x.clone();
        if matches!(op, Unary::Abs | Unary::LeakyRelu(_)) {
            t = t.map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
        }
        if matches!(op, Unary::SmoothL1 | Unary::Clamp(..)) {
            t = t.map(|v| if (v.abs() - 1.0).abs() < 0.05 { v * 1.2 } else { v });
        }
        check(&format!("{op:?}"), vec![t], move |g, v| g.unary(v[0], op));
    }
    let pos = x.map(|v| v.abs() + 0.2);
    check("ln", vec![pos.clone()], |g, v| g.unary(v[0], Unary::Ln));
    check("sqrt", vec![pos], |g, v| g.unary(v[0], Unary::Sqrt));
}

#[test]
fn reductions_and_layout() {
    let mut r = rng();
    let x = random(&[2, 3, 4, 2], &mut r, -1.0, 1.0);
    check("mean_axes", vec![x.clone()], |g, v| g.mean_axes(v[0], &[0, 2, 3]).unwrap());
    check("mean", vec![x.clone()], |g, v| g.mean(v[0]));
    check("narrow", vec![x.clone()], |g, v| g.narrow(v[0], 1, 1, 2).unwrap());
    check("concat", vec![x.clone(), random(&[2, 1, 4, 2], &mut r, -1.0, 1.0)], |g, v| g.concat(&[v[0], v[1]], 1).unwrap());
    check("reshape", vec![x.clone()], |g, v| g.reshape(v[0], &[2, 3, 8]).unwrap());
    check("pad_reflect", vec![x.clone()], |g, v| g.pad_reflect(v[0], 1).unwrap());
    check("shuffle", vec![random(&[1, 8, 2, 3], &mut r, -1.0, 1.0)], |g, v| g.pixel_shuffle(v[0], 2).unwrap());
    check("unshuffle", vec![random(&[1, 2, 4, 6], &mut r, -1.0, 1.0)], |g, v| g.pixel_unshuffle(v[0], 2).unwrap());
    check("max_pool", vec![x], |g, v| g.max_pool2(v[0]).unwrap());
}

#[test]
fn convolutions() {
    let mut r = rng();
    let x = random(&[2, 3, 5, 5], &mut r, -1.0, 1.0);
    let w = random(&[4, 3, 3, 3], &mut r, -0.5, 0.5);
    let b = random(&[4], &mut r, -0.5, 0.5);
    for spec in [ConvSpec { stride: 1, pad: 1, groups: 1 }, ConvSpec { stride: 2, pad: 1, groups: 1 }] {
        check("conv", vec![x.clone(), w.clone(), b.clone()], move |g, v| g.conv2d(v[0], v[1], Some(v[2]), spec).unwrap());
    }
    let wd = random(&[3, 1, 3, 3], &mut r, -0.5, 0.5);
    let bd = random(&[3], &mut r, -0.5, 0.5);
    for spec in [ConvSpec { stride: 1, pad: 1, groups: 3 }, ConvSpec { stride: 2, pad: 1, groups: 3 }] {
        check("depthwise", vec![x.clone(), wd.clone(), bd.clone()], move |g, v| g.conv2d(v[0], v[1], Some(v[2]), spec).unwrap());
    }
    let wp = random(&[5, 3, 1, 1], &mut r, -0.5, 0.5);
    check("pointwise", vec![x, wp], |g, v| g.conv2d(v[0], v[1], None, ConvSpec::default()).unwrap());
}

#[test]
fn resampling() {
    let mut r = rng();
    let x = random(&[1, 2, 3, 4], &mut r, -1.0, 1.0);
    check("bilinear_up", vec![x.clone()], |g, v| g.upsample_bilinear(v[0], 2).unwrap());
    check("bicubic_down", vec![random(&[1, 2, 8, 6], &mut r, -1.0, 1.0)], |g, v| g.resample(v[0], (4, 3), Filter::Bicubic, true).unwrap());
}

#[test]
fn attention_primitives() {
    let mut r = rng();
    let a = random(&[2, 3, 5], &mut r, -1.0, 1.0);
    let b = random(&[2, 4, 5], &mut r, -1.0, 1.0);
    check("bmm_nt", vec![a.clone(), b.clone()], |g, v| g.bmm(v[0], false, v[1], true).unwrap());
    let c = random(&[2, 5, 4], &mut r, -1.0, 1.0);
    check("bmm_nn", vec![a.clone(), c.clone()], |g, v| g.bmm(v[0], false, v[1], false).unwrap());
    check("bmm_tt", vec![random(&[2, 5, 3], &mut r, -1.0, 1.0), b], |g, v| g.bmm(v[0], true, v[1], true).unwrap());
    check("softmax", vec![a.clone()], |g, v| g.softmax(v[0], 2).unwrap());
    check("softmax_mid", vec![a], |g, v| g.softmax(v[0], 1).unwrap());
    let x = random(&[2, 4, 3, 2], &mut r, -1.0, 1.0);
    let gamma = random(&[4], &mut r, 0.5, 1.5);
    let beta = random(&[4], &mut r, -0.5, 0.5);
    check("layer_norm", vec![x, gamma, beta], |g, v| g.layer_norm_channels(v[0], v[1], v[2], 1e-5).unwrap());
}
