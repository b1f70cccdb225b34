//! Training losses and evaluation metrics.
//!
//! Every metric takes the reference first: `metric(v, w)` compares a
//! prediction `w` against the reference `v`. Losses are built from tape ops
//! so they are differentiable; the `*_value` helpers evaluate them on an
//! inference tape.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ConvSpec, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_C1: f64 = 0.01;
pub const SSIM_C2: f64 = 0.03;
pub const LOG_SIZE: usize = 15;
pub const LOG_SIGMA: f64 = 2.5;

fn same<R: Real>(op: &'static str, v: &Var<R>, w: &Var<R>) -> Result<()> {
    if v.shape() != w.shape() {
        return Err(Error::shape(op, v.shape(), w.shape()));
    }
    Ok(())
}

fn image<R: Real>(op: &'static str, v: &Var<R>) -> Result<(usize, usize)> {
    match *v.shape() {
        [h, w] => Ok((h, w)),
        _ => Err(Error::shape(op, "[H, W]", v.shape())),
    }
}

/// `‖v − w‖₁` (a sum, not a mean).
pub fn l1<R: Real>(tape: &Tape<R>, v: &Var<R>, w: &Var<R>) -> Result<Var<R>> {
    same("l1", v, w)?;
    Ok(tape.sum(&tape.abs(&tape.sub(v, w)?)))
}

/// Mean SSIM over all 7×7 windows (stride 1, population statistics) with
/// constants `c₁ = 0.01`, `c₂ = 0.03`. Both images are first divided by the
/// maximum of the reference `v`, treated as a constant.
pub fn ssim<R: Real>(tape: &Tape<R>, v: &Var<R>, w: &Var<R>) -> Result<Var<R>> {
    same("ssim", v, w)?;
    image("ssim", v)?;
    let peak = v.value().max().f64();
    let s = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    let (v, w) = (tape.scale(v, s), tape.scale(w, s));
    let k = SSIM_WINDOW;
    let mu_v = tape.box_mean(&v, k)?;
    let mu_w = tape.box_mean(&w, k)?;
    let vv = tape.box_mean(&tape.sqr(&v), k)?;
    let ww = tape.box_mean(&tape.sqr(&w), k)?;
    let vw = tape.box_mean(&tape.mul(&v, &w)?, k)?;
    let mu_vw = tape.mul(&mu_v, &mu_w)?;
    let var_v = tape.sub(&vv, &tape.sqr(&mu_v))?;
    let var_w = tape.sub(&ww, &tape.sqr(&mu_w))?;
    let cov = tape.sub(&vw, &mu_vw)?;
    let a = tape.add_const(&tape.scale(&mu_vw, 2.0), SSIM_C1);
    let b = tape.add_const(&tape.scale(&cov, 2.0), SSIM_C2);
    let c = tape.add_const(&tape.add(&tape.sqr(&mu_v), &tape.sqr(&mu_w))?, SSIM_C1);
    let d = tape.add_const(&tape.add(&var_v, &var_w)?, SSIM_C2);
    let map = tape.div(&tape.mul(&a, &b)?, &tape.mul(&c, &d)?)?;
    Ok(tape.mean(&map))
}

pub fn ssim_loss<R: Real>(tape: &Tape<R>, v: &Var<R>, w: &Var<R>) -> Result<Var<R>> {
    Ok(tape.add_const(&tape.neg(&ssim(tape, v, w)?), 1.0))
}

/// 15×15 Laplacian-of-Gaussian kernel with σ = 2.5 sampled on the integer
/// grid and shifted to sum to zero.
pub fn log_kernel<R: Real>() -> Tensor<R> {
    let half = (LOG_SIZE / 2) as f64;
    let s2 = LOG_SIGMA * LOG_SIGMA;
    let mut k: Vec<f64> = (0..LOG_SIZE * LOG_SIZE)
        .map(|i| {
            let (y, x) = ((i / LOG_SIZE) as f64 - half, (i % LOG_SIZE) as f64 - half);
            let r2 = (x * x + y * y) / (2.0 * s2);
            -(1.0 - r2) * (-r2).exp() / (std::f64::consts::PI * s2 * s2)
        })
        .collect();
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    k.iter_mut().for_each(|v| *v -= mean);
    Tensor::from_fn([1, 1, LOG_SIZE, LOG_SIZE], |i| R::of(k[i]))
}

/// LoG filtering with zero padding, output the size of the input.
pub fn log_filter<R: Real>(tape: &Tape<R>, v: &Var<R>) -> Result<Var<R>> {
    let (h, w) = image("log_filter", v)?;
    let kernel = tape.constant(log_kernel());
    let x = tape.reshape(v, &[1, h, w])?;
    let y = tape.conv2d(&x, &kernel, None, ConvSpec::same(LOG_SIZE, 1))?;
    tape.reshape(&y, &[h, w])
}

/// `‖LoG(v) − LoG(w)‖_p / ‖LoG(v)‖_p` for `p ∈ {1, 2}`.
pub fn hfen<R: Real>(tape: &Tape<R>, v: &Var<R>, w: &Var<R>, order: u8) -> Result<Var<R>> {
    same("hfen", v, w)?;
    let lv = log_filter(tape, v)?;
    let lw = log_filter(tape, w)?;
    let diff = tape.sub(&lv, &lw)?;
    let (num, den) = match order {
        1 => (tape.sum(&tape.abs(&diff)), tape.sum(&tape.abs(&lv))),
        2 => (tape.sqrt(&tape.sum(&tape.sqr(&diff))), tape.sqrt(&tape.sum(&tape.sqr(&lv)))),
        _ => return Err(Error::InvalidArgument(format!("HFEN order must be 1 or 2, got {order}"))),
    };
    tape.div(&num, &den)
}

/// `‖v − w‖₂² / ‖v‖₂²`. Complex data in the two-plane layout gives the
/// complex norm.
pub fn nmse<R: Real>(tape: &Tape<R>, v: &Var<R>, w: &Var<R>) -> Result<Var<R>> {
    same("nmse", v, w)?;
    let num = tape.sum(&tape.sqr(&tape.sub(v, w)?));
    let den = tape.sum(&tape.sqr(v));
    tape.div(&num, &den)
}

/// `‖v − w‖₁ / ‖v‖₁` on real data.
pub fn nmae<R: Real>(tape: &Tape<R>, v: &Var<R>, w: &Var<R>) -> Result<Var<R>> {
    same("nmae", v, w)?;
    let num = tape.sum(&tape.abs(&tape.sub(v, w)?));
    let den = tape.sum(&tape.abs(v));
    tape.div(&num, &den)
}

/// `‖v − w‖₁ / ‖v‖₁` on complex `[.., 2, H, W]` data, using the modulus of
/// each entry.
pub fn nmae_complex<R: Real>(tape: &Tape<R>, v: &Var<R>, w: &Var<R>) -> Result<Var<R>> {
    same("nmae_complex", v, w)?;
    let num = tape.sum(&tape.cabs(&tape.sub(v, w)?)?);
    let den = tape.sum(&tape.cabs(v)?);
    tape.div(&num, &den)
}

fn eval<R: Real>(v: &Tensor<R>, w: &Tensor<R>, f: impl Fn(&Tape<R>, &Var<R>, &Var<R>) -> Result<Var<R>>) -> Result<f64> {
    let tape = Tape::inference();
    Ok(f(&tape, &tape.constant(v.clone()), &tape.constant(w.clone()))?.item().f64())
}

pub fn l1_value<R: Real>(v: &Tensor<R>, w: &Tensor<R>) -> Result<f64> {
    eval(v, w, l1)
}

pub fn ssim_value<R: Real>(v: &Tensor<R>, w: &Tensor<R>) -> Result<f64> {
    eval(v, w, ssim)
}

pub fn hfen_value<R: Real>(v: &Tensor<R>, w: &Tensor<R>, order: u8) -> Result<f64> {
    eval(v, w, |t, a, b| hfen(t, a, b, order))
}

pub fn nmse_value<R: Real>(v: &Tensor<R>, w: &Tensor<R>) -> Result<f64> {
    eval(v, w, nmse)
}

pub fn nmae_value<R: Real>(v: &Tensor<R>, w: &Tensor<R>) -> Result<f64> {
    eval(v, w, nmae)
}

/// `20 log₁₀(max v) − 10 log₁₀(mean (v − w)²)`.
pub fn psnr<R: Real>(v: &Tensor<R>, w: &Tensor<R>) -> Result<f64> {
    if v.shape() != w.shape() {
        return Err(Error::shape("psnr", v.shape(), w.shape()));
    }
    let mse = v.sub(w)?.norm_sq().f64() / v.len() as f64;
    Ok(20.0 * v.max().f64().log10() - 10.0 * mse.log10())
}

/// `w_t = 10^{(t−T)/(T−1)}` for `t = 1..T`; a single step has weight 1.
pub fn step_weights(t: usize) -> Vec<f64> {
    if t == 1 {
        return vec![1.0];
    }
    (1..=t).map(|s| 10f64.powf((s as f64 - t as f64) / (t as f64 - 1.0))).collect()
}

/// Per-step values of every loss term.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTerms {
    pub l1: f64,
    pub ssim_loss: f64,
    pub hfen1: f64,
    pub hfen2: f64,
    pub nmse: f64,
    pub nmae: f64,
}

impl StepTerms {
    pub fn image_loss(&self) -> f64 {
        self.l1 + self.ssim_loss + self.hfen1 + self.hfen2
    }

    pub fn kspace_loss(&self) -> f64 {
        self.nmse + self.nmae
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub steps: Vec<StepTerms>,
    pub weights: Vec<f64>,
    pub total: f64,
}

/// `Σ_t w_t (L_X(x, |xᵗ|) + L_Y(y, yᵗ))` with
/// `L_X = L1 + SSIMLoss + HFEN₁ + HFEN₂` on magnitude images and
/// `L_Y = NMSE + NMAE` on full multi-coil k-space.
///
/// `x_gt` is a real `[H, W]` image, `xs` complex `[2, H, W]` estimates,
/// `y_gt` and `ys` complex `[nc, 2, H, W]`.
pub fn weighted_multistep_loss<R: Real>(
    tape: &Tape<R>,
    x_gt: &Var<R>,
    xs: &[Var<R>],
    y_gt: &Var<R>,
    ys: &[Var<R>],
) -> Result<(Var<R>, LossReport)> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!(
            "need equally many image and k-space predictions, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let weights = step_weights(xs.len());
    let mut report = LossReport {
        weights: weights.clone(),
        ..Default::default()
    };
    let mut total: Option<Var<R>> = None;
    for ((x, y), &wt) in xs.iter().zip(ys).zip(&weights) {
        let mag = tape.cabs(x)?;
        let terms = [
            l1(tape, x_gt, &mag)?,
            ssim_loss(tape, x_gt, &mag)?,
            hfen(tape, x_gt, &mag, 1)?,
            hfen(tape, x_gt, &mag, 2)?,
            nmse(tape, y_gt, y)?,
            nmae_complex(tape, y_gt, y)?,
        ];
        report.steps.push(StepTerms {
            l1: terms[0].item().f64(),
            ssim_loss: terms[1].item().f64(),
            hfen1: terms[2].item().f64(),
            hfen2: terms[3].item().f64(),
            nmse: terms[4].item().f64(),
            nmae: terms[5].item().f64(),
        });
        let mut step = terms[0].clone();
        for t in &terms[1..] {
            step = tape.add(&step, t)?;
        }
        let weighted = tape.scale(&step, wt);
        total = Some(match total {
            None => weighted,
            Some(acc) => tape.add(&acc, &weighted)?,
        });
    }
    let total = total.unwrap();
    report.total = total.item().f64();
    Ok((total, report))
}

/// Evaluation metrics of one reconstruction against a magnitude reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub ssim: f64,
    pub psnr: f64,
    pub nmse: f64,
    pub nmae: f64,
    pub hfen1: f64,
    pub hfen2: f64,
}

impl MetricReport {
    pub fn evaluate<R: Real>(name: impl Into<String>, reference: &Tensor<R>, pred: &Tensor<R>) -> Result<Self> {
        let (v, w) = (reference.cast::<f64>(), pred.cast::<f64>());
        Ok(Self {
            name: name.into(),
            ssim: ssim_value(&v, &w)?,
            psnr: psnr(&v, &w)?,
            nmse: nmse_value(&v, &w)?,
            nmae: nmae_value(&v, &w)?,
            hfen1: hfen_value(&v, &w, 1)?,
            hfen2: hfen_value(&v, &w, 2)?,
        })
    }

    pub const CSV_HEADER: &'static str = "name,ssim,psnr,nmse,nmae,hfen1,hfen2";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.name, self.ssim, self.psnr, self.nmse, self.nmae, self.hfen1, self.hfen2
        )
    }
}

/// Reports as CSV text with a header line.
pub fn to_csv(reports: &[MetricReport]) -> String {
    let mut s = String::from(MetricReport::CSV_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn to_json(reports: &[MetricReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)?)
}
