//! Finite-difference cases for every differentiable primitive and loss,
//! shared by the gradient tests and the acceptance run.
//!
//! Inputs are drawn away from kinks (|·|, ReLU, soft-threshold, modulus at 0)
//! so the finite differences see a smooth function.

use std::rc::Rc;

use super::*;
use vsharp::autodiff::{Bound, ConvSpec, Tape, Var};
use vsharp::denoise::DenoiserSpec;
use vsharp::mask::MaskKind;
use vsharp::metrics;
use vsharp::nets::{LagrangeInitConfig, UNetConfig};
use vsharp::solver::{EtaScale, ScalarInit, SolverConfig, VSharp};
use vsharp::train::{make_phantom, PhantomSpec};
use vsharp::Tensor;

pub const TOL: f64 = 1e-4;
pub const COORDS: usize = 24;
pub const MIN_COORDS: usize = 10;

type Loss = Box<dyn Fn(&Tape<f64>, &[Var<f64>]) -> Var<f64>>;

pub struct Case {
    pub group: &'static str,
    pub name: String,
    pub inputs: Vec<Tensor<f64>>,
    /// Inputs that are differentiated.
    pub which: Vec<usize>,
    pub f: Loss,
}

pub struct CaseResult {
    pub name: String,
    pub max_rel: f64,
    /// Coordinates checked, summed over the differentiated inputs.
    pub checked: usize,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel < TOL && self.checked >= MIN_COORDS
    }
}

fn case(group: &'static str, name: &str, inputs: Vec<Tensor<f64>>, f: impl Fn(&Tape<f64>, &[Var<f64>]) -> Var<f64> + 'static) -> Case {
    let which = (0..inputs.len()).collect();
    Case { group, name: name.to_string(), inputs, which, f: Box::new(f) }
}

pub fn run(c: &Case) -> CaseResult {
    let mut r = rng(c.name.len() as u64);
    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    for &i in &c.which {
        let res = gradcheck(&c.inputs, i, COORDS, &mut r, &*c.f);
        max_rel = max_rel.max(res.max_rel);
        checked += res.checked;
    }
    CaseResult { name: c.name.clone(), max_rel, checked }
}

fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
    random_tensor(shape, &mut rng(seed))
}

fn off_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    random_away_from_zero(shape, 0.05, &mut rng(seed))
}

fn positive(shape: &[usize], seed: u64) -> Tensor<f64> {
    off_zero(shape, seed).map(f64::abs)
}

/// Target in `[0.2, 1]`, prediction offset from it by at least 0.05 in each
/// pixel so `|v − w|` stays off its kink.
fn image_pair(h: usize, w: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let target = Tensor::from_fn([h, w], |i| 0.2 + 0.8 * ((i * 37 % 101) as f64 / 101.0));
    let pred = target.add(&off_zero(&[h, w], seed).scale(0.3)).unwrap();
    (target, pred)
}

pub fn primitives() -> Vec<Case> {
    let mut out = Vec::new();

    let a = rand(&[3, 5], 1);
    let b = off_zero(&[3, 5], 2);
    let g = "elementwise";
    out.push(case(g, "add", vec![a.clone(), b.clone()], |t, v| weighted_sum(t, &t.add(&v[0], &v[1]).unwrap(), 9)));
    out.push(case(g, "sub", vec![a.clone(), b.clone()], |t, v| weighted_sum(t, &t.sub(&v[0], &v[1]).unwrap(), 9)));
    out.push(case(g, "mul", vec![a.clone(), b.clone()], |t, v| weighted_sum(t, &t.mul(&v[0], &v[1]).unwrap(), 9)));
    out.push(case(g, "div", vec![a, b], |t, v| weighted_sum(t, &t.div(&v[0], &v[1]).unwrap(), 9)));

    let a = rand(&[4, 6], 3);
    let kinky = off_zero(&[4, 6], 4);
    out.push(case(g, "neg", vec![a.clone()], |t, v| weighted_sum(t, &t.neg(&v[0]), 1)));
    out.push(case(g, "scale", vec![a.clone()], |t, v| weighted_sum(t, &t.scale(&v[0], -2.5), 1)));
    out.push(case(g, "add_const", vec![a.clone()], |t, v| weighted_sum(t, &t.sqr(&t.add_const(&v[0], 0.7)), 1)));
    out.push(case(g, "relu", vec![kinky.clone()], |t, v| weighted_sum(t, &t.relu(&v[0]), 1)));
    out.push(case(g, "sqr", vec![a.clone()], |t, v| weighted_sum(t, &t.sqr(&v[0]), 1)));
    out.push(case(g, "sqrt", vec![positive(&[4, 6], 5)], |t, v| weighted_sum(t, &t.sqrt(&v[0]), 1)));
    out.push(case(g, "abs", vec![kinky], |t, v| weighted_sum(t, &t.abs(&v[0]), 1)));
    out.push(case(g, "softplus", vec![a.scale(4.0)], |t, v| weighted_sum(t, &t.softplus(&v[0]), 1)));
    out.push(case(g, "sum", vec![a.clone()], |t, v| t.sqr(&t.sum(&v[0]))));
    out.push(case(g, "mean", vec![a.clone()], |t, v| t.sqr(&t.mean(&v[0]))));
    out.push(case(g, "reshape", vec![a], |t, v| weighted_sum(t, &t.reshape(&v[0], &[6, 4]).unwrap(), 1)));

    let a = rand(&[2, 3, 4], 6);
    let s = Tensor::scalar(0.8);
    out.push(case(g, "scale_by", vec![a.clone(), s.clone()], |t, v| weighted_sum(t, &t.scale_by(&v[0], &v[1]).unwrap(), 2)));
    out.push(case(g, "div_by", vec![a, s], |t, v| weighted_sum(t, &t.div_by(&v[0], &v[1]).unwrap(), 2)));
    // the extra sum gives every coordinate a gradient
    out.push(case(g, "select", vec![positive(&[12], 7)], |t, v| {
        let x = t.select(&v[0], 3).unwrap();
        let y = t.select(&v[0], 1).unwrap();
        t.add(&t.mul(&t.sqr(&x), &y).unwrap(), &weighted_sum(t, &v[0], 2)).unwrap()
    }));

    let g = "fourier";
    for (h, w) in [(4, 4), (5, 7), (8, 6)] {
        let x = rand(&[2, 2, h, w], (h * w) as u64);
        out.push(case(g, &format!("fft2c {h}x{w}"), vec![x.clone()], |t, v| weighted_sum(t, &t.fft2c(&v[0]).unwrap(), 3)));
        out.push(case(g, &format!("ifft2c {h}x{w}"), vec![x], |t, v| weighted_sum(t, &t.ifft2c(&v[0]).unwrap(), 3)));
    }

    let g = "sense";
    let x = rand(&[2, 5, 6], 10);
    let c = rand(&[3, 2, 5, 6], 11);
    let z = rand(&[3, 2, 5, 6], 12);
    out.push(case(g, "expand", vec![x, c.clone()], |t, v| weighted_sum(t, &t.expand(&v[0], &v[1]).unwrap(), 4)));
    out.push(case(g, "reduce", vec![z.clone(), c.clone()], |t, v| weighted_sum(t, &t.reduce(&v[0], &v[1]).unwrap(), 4)));
    let mask = Rc::new(Tensor::from_fn([5, 6], |i| (i % 3 != 0) as u8 as f64));
    out.push(case(g, "apply_mask", vec![z], move |t, v| weighted_sum(t, &t.apply_mask(&v[0], &mask).unwrap(), 4)));
    out.push(case(g, "normalize_coils", vec![c], |t, v| weighted_sum(t, &t.normalize_coils(&v[0], 1e-9).unwrap(), 4)));

    let x = off_zero(&[2, 2, 4, 5], 13);
    out.push(case(g, "cabs", vec![x.clone()], |t, v| weighted_sum(t, &t.cabs(&v[0]).unwrap(), 5)));
    out.push(case(g, "soft_threshold", vec![x, Tensor::scalar(0.4)], |t, v| weighted_sum(t, &t.soft_threshold(&v[0], &v[1]).unwrap(), 5)));

    let g = "conv";
    let x = rand(&[3, 9, 8], 14);
    let b = rand(&[4], 15);
    for (k, spec) in [
        (3, ConvSpec::same(3, 1)),
        (3, ConvSpec::same(3, 2)),
        (1, ConvSpec::default()),
        (3, ConvSpec { stride: 2, dilation: 1, padding: 1 }),
        (2, ConvSpec { stride: 1, dilation: 3, padding: 0 }),
    ] {
        let w = rand(&[4, 3, k, k], 16 + k as u64);
        let name = format!("conv2d k{k} s{} d{} p{}", spec.stride, spec.dilation, spec.padding);
        out.push(case(g, &name, vec![x.clone(), w, b.clone()], move |t, v| weighted_sum(t, &t.conv2d(&v[0], &v[1], Some(&v[2]), spec).unwrap(), 6)));
    }

    let g = "layout";
    let x = rand(&[2, 6, 8], 20);
    let y = rand(&[3, 6, 8], 21);
    out.push(case(g, "replication_pad", vec![x.clone()], |t, v| weighted_sum(t, &t.replication_pad(&v[0], 1, 2, 3, 0).unwrap(), 7)));
    out.push(case(g, "avgpool2", vec![x.clone()], |t, v| weighted_sum(t, &t.avgpool2(&v[0]).unwrap(), 7)));
    out.push(case(g, "upsample2", vec![x.clone()], |t, v| weighted_sum(t, &t.upsample2(&v[0]).unwrap(), 7)));
    out.push(case(g, "concat", vec![x.clone(), y], |t, v| weighted_sum(t, &t.concat(&[&v[0], &v[1]]).unwrap(), 7)));
    out.push(case(g, "crop", vec![x.clone()], |t, v| weighted_sum(t, &t.crop(&v[0], 1, 2, 4, 5).unwrap(), 7)));
    out.push(case(g, "crop_channels", vec![x], |t, v| weighted_sum(t, &t.crop_channels(&v[0], 1, 1).unwrap(), 7)));
    out.push(case(g, "box_mean", vec![rand(&[9, 10], 22)], |t, v| weighted_sum(t, &t.box_mean(&v[0], 4).unwrap(), 7)));
    out
}

pub fn losses() -> Vec<Case> {
    let mut out = Vec::new();
    let g = "loss";
    let (v, w) = image_pair(12, 11, 30);
    let fs: [(&str, fn(&Tape<f64>, &Var<f64>, &Var<f64>) -> vsharp::Result<Var<f64>>); 4] =
        [("l1", metrics::l1), ("ssim_loss", metrics::ssim_loss), ("nmse", metrics::nmse), ("nmae", metrics::nmae)];
    for (name, f) in fs {
        let mut c = case(g, name, vec![v.clone(), w.clone()], move |t, v| f(t, &v[0], &v[1]).unwrap());
        // SSIM divides by the reference peak, held constant: only the
        // prediction is differentiated.
        if name == "ssim_loss" {
            c.which = vec![1];
        }
        out.push(c);
    }
    for order in [1, 2] {
        out.push(case(g, &format!("hfen{order}"), vec![v.clone(), w.clone()], move |t, v| metrics::hfen(t, &v[0], &v[1], order).unwrap()));
    }

    let y = off_zero(&[2, 2, 5, 6], 31);
    let p = y.add(&off_zero(&[2, 2, 5, 6], 32).scale(0.5)).unwrap();
    out.push(case(g, "nmse_complex", vec![y.clone(), p.clone()], |t, v| metrics::nmse(t, &v[0], &v[1]).unwrap()));
    out.push(case(g, "nmae_complex", vec![y, p], |t, v| metrics::nmae_complex(t, &v[0], &v[1]).unwrap()));

    let (h, w) = (10, 9);
    let (target, _) = image_pair(h, w, 40);
    let y = rand(&[2, 2, h, w], 43);
    let ins = vec![
        target,
        off_zero(&[2, h, w], 41),
        off_zero(&[2, h, w], 42),
        y.clone(),
        y.add(&off_zero(&[2, 2, h, w], 44).scale(0.3)).unwrap(),
        y.add(&off_zero(&[2, 2, h, w], 45).scale(0.3)).unwrap(),
    ];
    let mut c = case(g, "weighted_multistep_loss", ins, |t, v| {
        metrics::weighted_multistep_loss(t, &v[0], &[v[1].clone(), v[2].clone()], &v[3], &[v[4].clone(), v[5].clone()]).unwrap().0
    });
    c.which = vec![1, 2, 4, 5];
    out.push(c);
    out
}

/// Gradients of the training loss with respect to stored parameters of a
/// tiny model with every learned component enabled. Returns the worst
/// relative error, the number of coordinates checked, and the name of the
/// worst coordinate.
pub fn full_solver() -> (f64, usize, String) {
    let cfg = SolverConfig {
        blocks: 2,
        dcgd_steps: 2,
        denoiser: DenoiserSpec::Unet { scales: 2, filters: 2, residual: true },
        share_denoiser: false,
        lagrange_init: Some(LagrangeInitConfig { channels: 2, filters: vec![2, 2], dilations: vec![1, 2], hidden: 2 }),
        sensitivity_net: Some(UNetConfig { in_ch: 2, out_ch: 2, scales: 2, filters: 2, residual: true }),
        reduced_blocks: None,
        rho: ScalarInit::TruncatedNormal { lo: 0.1, hi: 2.0 },
        eta: ScalarInit::TruncatedNormal { lo: 0.1, hi: 2.0 },
        eta_scale: EtaScale::Lipschitz,
        divergence_factor: 1e6,
        seed: 3,
    };
    let mut model = VSharp::<f64>::new(cfg).unwrap();
    // Biases start at zero, so a conv fed by a fully dead ReLU neighbourhood
    // sits exactly on the next ReLU's kink. Move off it.
    let mut r = rng(50);
    for p in model.store.iter_mut().filter(|p| p.name.ends_with(".bias")) {
        p.value = random_tensor(p.value.shape(), &mut r).scale(0.05);
    }
    let spec = PhantomSpec { height: 12, width: 12, coils: 2, noise_sigma: 0.0, mask: MaskKind::Equispaced, accel: 2.0, acs_fraction: Some(0.25) };
    let sample = make_phantom::<f64>(5, &spec).unwrap();
    let meas = sample.measurement();

    let loss_of = |m: &VSharp<f64>, tape: &Tape<f64>, p: &Bound<f64>| -> Var<f64> {
        let out = m.forward(p, &meas).unwrap();
        let target = tape.constant(sample.target());
        let y_full = tape.constant(sample.y_full.tensor().clone());
        let ys: Vec<_> = out.xs.iter().map(|x| vsharp::mri::predict_kspace_var(tape, x, &out.maps).unwrap()).collect();
        metrics::weighted_multistep_loss(tape, &target, &out.xs, &y_full, &ys).unwrap().0
    };
    let tape = Tape::new();
    let p = Bound::new(&tape, &model.store);
    let loss = loss_of(&model, &tape, &p);
    let grads = p.collect(&tape.backward(&loss).unwrap());

    let (mut worst, mut worst_name, mut checked) = (0.0f64, String::new(), 0);
    for (k, param) in model.store.iter().enumerate() {
        let Some(g) = &grads[k] else { continue };
        // up to three coordinates per tensor whose gradient is large enough
        // for central differences on an O(100) loss to resolve it
        let big: Vec<usize> = (0..g.len()).filter(|&i| g.data()[i].abs() > 1e-3).collect();
        let picks: Vec<usize> = (0..3.min(big.len())).map(|_| big[rand::Rng::random_range(&mut r, 0..big.len())]).collect();
        for i in picks {
            let eval = |delta: f64| {
                let mut m = model.clone();
                m.store.iter_mut().nth(k).unwrap().value.data_mut()[i] += delta;
                let tape = Tape::inference();
                loss_of(&m, &tape, &Bound::new(&tape, &m.store)).item()
            };
            let h = 1e-6;
            let num = (eval(h) - eval(-h)) / (2.0 * h);
            let ana = g.data()[i];
            let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-6);
            if rel >= worst {
                worst = rel;
                worst_name = format!("{}[{i}]: analytic {ana:.6e} numeric {num:.6e}", param.name);
            }
            checked += 1;
        }
    }
    (worst, checked, worst_name)
}
