//! End-to-end training on simulated acquisitions.

mod optim;
mod phantom;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use optim::{clip_grad_norm, lr_schedule, Adam, Schedule, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use phantom::{acs_fraction_for, make_phantom, simulate, PhantomSample, PhantomSpec};

use crate::autodiff::{Bound, Tape};
use crate::error::{Error, Result};
use crate::io;
use crate::mask::{self, MaskKind, SamplingMask};
use crate::metrics::{self, MetricReport};
use crate::mri;
use crate::solver::VSharp;
use crate::tensor::Real;

/// Salts separating validation and test seeds from training seeds.
const VALIDATION_SALT: u64 = 0x5EED_0F_7E57;
const TEST_SALT: u64 = 0x7E57_5E7_0001;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_iters: usize,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub batch: usize,
    pub iters: usize,
    pub seed: u64,
    /// Accelerations drawn uniformly per sample.
    pub accel_set: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub coils: usize,
    pub noise_sigma: f64,
    pub mask: MaskKind,
    /// Pre-generated masks per acceleration.
    pub mask_pool: usize,
    pub clip_norm: f64,
    /// Validation period in iterations; the last iteration is always validated.
    pub val_every: usize,
    pub val_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            lr: 2e-3,
            warmup_iters: 100,
            decay_every: 800,
            decay_factor: 0.5,
            batch: 2,
            iters: 2000,
            seed: 0,
            accel_set: vec![4.0],
            height: 64,
            width: 64,
            coils: 4,
            noise_sigma: 0.005,
            mask: MaskKind::Equispaced,
            mask_pool: 16,
            clip_norm: 1.0,
            val_every: 250,
            val_size: 8,
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            lr: self.lr,
            warmup_iters: self.warmup_iters,
            decay_every: self.decay_every,
            decay_factor: self.decay_factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("warmup_iters", self.warmup_iters),
            ("decay_every", self.decay_every),
            ("batch", self.batch),
            ("iters", self.iters),
            ("mask_pool", self.mask_pool),
            ("val_every", self.val_every),
            ("val_size", self.val_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::InvalidArgument("lr and clip_norm must be positive".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(Error::InvalidArgument(format!("decay_factor must lie in (0, 1), got {}", self.decay_factor)));
        }
        if self.accel_set.is_empty() || self.accel_set.iter().any(|&a| !(a >= 1.0)) {
            return Err(Error::InvalidArgument("accel_set must be non-empty with entries >= 1".into()));
        }
        self.phantom_spec(self.accel_set[0]).validate()
    }

    pub fn phantom_spec(&self, accel: f64) -> PhantomSpec {
        PhantomSpec {
            height: self.height,
            width: self.width,
            coils: self.coils,
            noise_sigma: self.noise_sigma,
            mask: self.mask,
            accel,
            acs_fraction: None,
        }
    }
}

/// Training and validation data: masks are drawn from a fixed pool per
/// acceleration; images and coils are simulated per sample.
pub struct DataSource {
    cfg: TrainConfig,
    pools: Vec<Vec<SamplingMask>>,
    rng: ChaCha8Rng,
}

impl DataSource {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let pools = cfg
            .accel_set
            .iter()
            .enumerate()
            .map(|(a, &accel)| {
                (0..cfg.mask_pool)
                    .map(|i| {
                        let seed = cfg.seed.wrapping_add((a * cfg.mask_pool + i) as u64);
                        mask::generate(cfg.mask, cfg.height, cfg.width, accel, acs_fraction_for(accel), seed)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            pools,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        })
    }

    /// Next training sample.
    pub fn next<R: Real>(&mut self) -> Result<PhantomSample<R>> {
        let a = self.rng.random_range(0..self.pools.len());
        let m = self.pools[a][self.rng.random_range(0..self.pools[a].len())].clone();
        let seed = self.rng.random::<u64>();
        simulate(seed, &self.cfg.phantom_spec(self.cfg.accel_set[a]), m)
    }

    /// Held-out samples with their own images, coils and masks, cycling
    /// through the acceleration set.
    pub fn validation<R: Real>(&self) -> Result<Vec<PhantomSample<R>>> {
        validation_set(&self.cfg, self.cfg.val_size)
    }
}

/// `n` held-out samples, independent of the training stream. Used for
/// model selection during [`train`].
pub fn validation_set<R: Real>(cfg: &TrainConfig, n: usize) -> Result<Vec<PhantomSample<R>>> {
    salted_set(cfg, n, VALIDATION_SALT)
}

/// `n` samples disjoint from both the training stream and the validation
/// set, for reporting after model selection.
pub fn test_set<R: Real>(cfg: &TrainConfig, n: usize) -> Result<Vec<PhantomSample<R>>> {
    salted_set(cfg, n, TEST_SALT)
}

fn salted_set<R: Real>(cfg: &TrainConfig, n: usize, salt: u64) -> Result<Vec<PhantomSample<R>>> {
    (0..n)
        .map(|i| {
            let accel = cfg.accel_set[i % cfg.accel_set.len()];
            let seed = (cfg.seed ^ salt).wrapping_add(i as u64);
            make_phantom(seed, &cfg.phantom_spec(accel))
        })
        .collect()
}

/// Mean metrics of the zero-filled start `x⁰` and of the last block output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub x0: MetricReport,
    pub xt: MetricReport,
}

fn mean_report(name: &str, rs: &[MetricReport]) -> MetricReport {
    let n = rs.len().max(1) as f64;
    let avg = |f: fn(&MetricReport) -> f64| rs.iter().map(f).sum::<f64>() / n;
    MetricReport {
        name: name.into(),
        ssim: avg(|r| r.ssim),
        psnr: avg(|r| r.psnr),
        nmse: avg(|r| r.nmse),
        nmae: avg(|r| r.nmae),
        hfen1: avg(|r| r.hfen1),
        hfen2: avg(|r| r.hfen2),
    }
}

/// Evaluate a model on samples using the given blocks.
pub fn evaluate<R: Real>(model: &VSharp<R>, samples: &[PhantomSample<R>], blocks: &[usize]) -> Result<EvalSummary> {
    let mut x0 = Vec::with_capacity(samples.len());
    let mut xt = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let rec = model.reconstruct_blocks(&s.measurement(), blocks)?;
        let target = s.target();
        x0.push(MetricReport::evaluate(format!("x0_{i}"), &target, &rec.x0.magnitude())?);
        xt.push(MetricReport::evaluate(format!("xt_{i}"), &target, &rec.last().magnitude())?);
    }
    Ok(EvalSummary {
        x0: mean_report("x0", &x0),
        xt: mean_report("xt", &xt),
    })
}

/// Loss of one sample on a fresh tape; gradients are added to the store.
pub fn accumulate_sample<R: Real>(model: &mut VSharp<R>, s: &PhantomSample<R>, weight: f64) -> Result<f64> {
    let tape = Tape::new();
    let p = Bound::new(&tape, &model.store);
    let out = model.forward(&p, &s.measurement())?;
    let ys = out
        .xs
        .iter()
        .map(|x| mri::predict_kspace_var(&tape, x, &out.maps))
        .collect::<Result<Vec<_>>>()?;
    let x_gt = tape.constant(s.target());
    let y_gt = tape.constant(s.y_full.tensor().clone());
    let (loss, report) = metrics::weighted_multistep_loss(&tape, &x_gt, &out.xs, &y_gt, &ys)?;
    if !report.total.is_finite() {
        return Ok(report.total);
    }
    let scaled = tape.scale(&loss, weight);
    let grads = tape.backward(&scaled)?;
    let per_param = p.collect(&grads);
    model.store.accumulate(&per_param)?;
    Ok(report.total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub val: Option<EvalSummary>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<HistoryRow>,
    /// Iteration whose validation SSIM of `x^T` was best.
    pub best_iter: Option<usize>,
    pub best: Option<EvalSummary>,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str =
        "iter,lr,loss,grad_norm,val_ssim_xt,val_psnr_xt,val_nmse_xt,val_ssim_x0,val_psnr_x0,val_nmse_x0";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.history {
            let _ = write!(s, "{},{},{},{}", r.iter, r.lr, r.loss, r.grad_norm);
            match &r.val {
                Some(v) => {
                    let _ = writeln!(
                        s,
                        ",{},{},{},{},{},{}",
                        v.xt.ssim, v.xt.psnr, v.xt.nmse, v.x0.ssim, v.x0.psnr, v.x0.nmse
                    );
                }
                None => s.push_str(",,,,,,\n"),
            }
        }
        s
    }
}

/// Train `model` in place. Iteration `k` (1-based) uses `lr_schedule(k)`;
/// batch gradients are averaged and clipped to `clip_norm`. The model ends
/// with the parameters of the best validation SSIM. With `out_dir`, writes
/// `best.vshc`, `last.vshc` and `history.csv` there.
pub fn train<R: Real>(model: &mut VSharp<R>, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainReport> {
    let mut data = DataSource::new(cfg)?;
    let val = data.validation::<R>()?;
    let blocks = model.default_blocks();
    let schedule = cfg.schedule();
    let mut adam = Adam::new(&model.store);
    let mut report = TrainReport::default();
    let mut best_values = None;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }

    for iter in 1..=cfg.iters {
        let lr = lr_schedule(iter, &schedule);
        model.store.zero_grad();
        let mut loss = 0.0;
        for _ in 0..cfg.batch {
            let s = data.next::<R>()?;
            loss += accumulate_sample(model, &s, 1.0 / cfg.batch as f64)? / cfg.batch as f64;
        }
        let grad_norm = model.store.grad_norm();
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(Error::NonFiniteLoss { iter, lr, grad_norm });
        }
        clip_grad_norm(&mut model.store, cfg.clip_norm);
        adam.step(&mut model.store, lr)?;

        let mut row = HistoryRow {
            iter,
            lr,
            loss,
            grad_norm,
            val: None,
        };
        if iter % cfg.val_every == 0 || iter == cfg.iters {
            let summary = evaluate(model, &val, &blocks)?;
            log::info!(
                "iter {iter}: loss {loss:.4}, val SSIM x^T {:.4} (x0 {:.4})",
                summary.xt.ssim,
                summary.x0.ssim
            );
            if report.best.as_ref().is_none_or(|b| summary.xt.ssim > b.xt.ssim) {
                report.best_iter = Some(iter);
                report.best = Some(summary.clone());
                best_values = Some(model.store.iter().map(|p| p.value.clone()).collect::<Vec<_>>());
                if let Some(dir) = out_dir {
                    io::save_checkpoint(&dir.join("best.vshc"), model, serde_json::json!({ "iter": iter, "train": cfg }))?;
                }
            }
            row.val = Some(summary);
        } else {
            log::debug!("iter {iter}: loss {loss:.4}, grad norm {grad_norm:.3e}");
        }
        report.history.push(row);
    }

    if let Some(dir) = out_dir {
        io::save_checkpoint(&dir.join("last.vshc"), model, serde_json::json!({ "iter": cfg.iters, "train": cfg }))?;
        fs::write(dir.join("history.csv"), report.to_csv())?;
    }
    if let Some(values) = best_values {
        model.store.load_values(values)?;
    }
    Ok(report)
}
