//! Unrolled half-quadratic-splitting ADMM.
//!
//! Each block `t` performs
//!
//! ```text
//! z^{t+1} = R_θt(zᵗ, xᵗ, uᵗ/ρ_t)                      (denoiser)
//! x^{t+1} = Tx gradient steps on ½‖A x − ỹ‖² + (ρ_t/2)‖x − z^{t+1} + uᵗ/ρ_t‖²
//! u^{t+1} = uᵗ + ρ_t (x^{t+1} − z^{t+1})
//! ```
//!
//! starting from `x⁰ = z⁰ = A*(ỹ)` and `u⁰ = 𝒢ψ(x⁰)`. All steps run on a
//! [`Tape`] so the same code serves inference and training.

pub mod dense;

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, ParamId, ParamStore, Tape, Var};
use crate::coils;
use crate::cplx;
use crate::denoise::{Denoiser, DenoiserSpec};
use crate::error::{Error, Result};
use crate::init::truncated_normal;
use crate::mask::SamplingMask;
use crate::mri::{self, CoilSensitivities, ComplexImage, KSpace};
use crate::nets::{LagrangeInit, LagrangeInitConfig, UNet, UNetConfig};
use crate::tensor::{Real, Tensor};

/// Lower bound added to every effective `ρ` and `η`.
pub const POSITIVITY_FLOOR: f64 = 1e-4;

/// Blocks kept by the reduced inference of the reference 12-block model.
pub const DEFAULT_REDUCED_BLOCKS: [usize; 6] = [1, 2, 6, 10, 11, 12];

/// Initial value of a positive solver scalar.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarInit {
    /// Raw value drawn from `N(0, 1)` truncated to `[lo, hi]`.
    TruncatedNormal { lo: f64, hi: f64 },
    /// Fixed effective value.
    Fixed { value: f64 },
}

/// How the effective DCGD step is formed from its positive parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaScale {
    /// `η_s` is the step itself.
    Absolute,
    /// `η_s / (1 + ρ_t)`, a step relative to the Lipschitz bound of the
    /// x-subproblem gradient (`‖A‖ ≤ 1` for normalised maps and binary masks).
    Lipschitz,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Number of ADMM blocks `T`.
    pub blocks: usize,
    /// DCGD steps `Tx` per x-step.
    pub dcgd_steps: usize,
    pub denoiser: DenoiserSpec,
    /// One denoiser for every block instead of one per block.
    #[serde(default)]
    pub share_denoiser: bool,
    /// `None` starts from `u⁰ = 0`.
    pub lagrange_init: Option<LagrangeInitConfig>,
    /// Sensitivity refinement network; `None` uses the normalised ACS maps.
    pub sensitivity_net: Option<UNetConfig>,
    /// 1-based ascending subset of blocks to run at inference.
    #[serde(default)]
    pub reduced_blocks: Option<Vec<usize>>,
    pub rho: ScalarInit,
    pub eta: ScalarInit,
    pub eta_scale: EtaScale,
    /// DCGD aborts when `‖w‖` exceeds this multiple of its input scale.
    pub divergence_factor: f64,
    pub seed: u64,
}

impl SolverConfig {
    /// Desk-scale learned configuration: 3 blocks, 4 DCGD steps, U-Nets with
    /// 2 scales and 8 filters.
    pub fn desk() -> Self {
        Self {
            blocks: 3,
            dcgd_steps: 4,
            denoiser: DenoiserSpec::Unet {
                scales: 2,
                filters: 8,
                residual: true,
            },
            share_denoiser: false,
            lagrange_init: Some(LagrangeInitConfig::default()),
            sensitivity_net: Some(UNetConfig {
                in_ch: 2,
                out_ch: 2,
                scales: 2,
                filters: 8,
                residual: true,
            }),
            reduced_blocks: None,
            rho: ScalarInit::TruncatedNormal { lo: 0.1, hi: 2.0 },
            eta: ScalarInit::TruncatedNormal { lo: 0.1, hi: 2.0 },
            eta_scale: EtaScale::Lipschitz,
            divergence_factor: 1e6,
            seed: 0,
        }
    }

    /// Full-size configuration: 12 blocks, 10 DCGD steps, 4-scale U-Nets with
    /// 32 filters and a 4-scale, 16-filter sensitivity network.
    pub fn reference() -> Self {
        Self {
            blocks: 12,
            dcgd_steps: 10,
            denoiser: DenoiserSpec::Unet {
                scales: 4,
                filters: 32,
                residual: true,
            },
            sensitivity_net: Some(UNetConfig {
                in_ch: 2,
                out_ch: 2,
                scales: 4,
                filters: 16,
                residual: true,
            }),
            lagrange_init: Some(LagrangeInitConfig {
                channels: 2,
                filters: vec![32, 32, 64, 64],
                dilations: vec![1, 1, 2, 4],
                hidden: 64,
            }),
            ..Self::desk()
        }
    }

    /// Classical ADMM with a fixed penalty and step and no learned parts.
    pub fn classical(blocks: usize, dcgd_steps: usize, denoiser: DenoiserSpec, rho: f64, eta: f64) -> Self {
        Self {
            blocks,
            dcgd_steps,
            denoiser,
            share_denoiser: true,
            lagrange_init: None,
            sensitivity_net: None,
            reduced_blocks: None,
            rho: ScalarInit::Fixed { value: rho },
            eta: ScalarInit::Fixed { value: eta },
            eta_scale: EtaScale::Absolute,
            divergence_factor: 1e6,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::InvalidArgument("at least one ADMM block is required".into()));
        }
        self.denoiser.validate()?;
        if let Some(sub) = &self.reduced_blocks {
            check_blocks(sub, self.blocks)?;
        }
        for (name, init) in [("rho", self.rho), ("eta", self.eta)] {
            match init {
                ScalarInit::TruncatedNormal { lo, hi } if !(lo < hi) => {
                    return Err(Error::InvalidArgument(format!("{name}: empty truncation interval [{lo}, {hi}]")));
                }
                ScalarInit::Fixed { value } if !(value > POSITIVITY_FLOOR) => {
                    return Err(Error::InvalidArgument(format!("{name}: fixed value must exceed {POSITIVITY_FLOOR}")));
                }
                _ => {}
            }
        }
        if !(self.divergence_factor > 0.0) {
            return Err(Error::InvalidArgument("divergence_factor must be positive".into()));
        }
        Ok(())
    }

    /// Number of trainable scalars implied by the configuration.
    pub fn num_params(&self) -> usize {
        let denoisers = if self.share_denoiser { 1 } else { self.blocks };
        self.blocks
            + self.dcgd_steps
            + denoisers * self.denoiser.unet_config().map_or(0, |c| c.num_params())
            + self.lagrange_init.as_ref().map_or(0, |c| c.num_params())
            + self.sensitivity_net.map_or(0, |c| c.num_params())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn check_blocks(sub: &[usize], t: usize) -> Result<()> {
    let ok = !sub.is_empty() && sub.windows(2).all(|w| w[0] < w[1]) && sub.iter().all(|&b| (1..=t).contains(&b));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("block subset {sub:?} must be ascending within 1..={t}")))
    }
}

/// Positive map `floor + softplus(raw)`.
pub fn effective(raw: f64) -> f64 {
    POSITIVITY_FLOOR + crate::autodiff::softplus(raw)
}

/// Raw value whose effective value is `v`.
pub fn raw_for(v: f64) -> f64 {
    let s = v - POSITIVITY_FLOOR;
    if s > 30.0 {
        s
    } else {
        s.exp_m1().ln()
    }
}

/// `(x, z, u)` threaded through the blocks; `t` counts completed blocks.
#[derive(Clone, Debug)]
pub struct State<R: Real> {
    pub x: Var<R>,
    pub z: Var<R>,
    pub u: Var<R>,
    pub t: usize,
}

/// Tensor snapshot of a [`State`].
#[derive(Clone, Debug, PartialEq)]
pub struct SolverState<R: Real> {
    pub x: ComplexImage<R>,
    pub z: ComplexImage<R>,
    pub u: ComplexImage<R>,
    pub t: usize,
}

impl<R: Real> State<R> {
    pub fn snapshot(&self) -> Result<SolverState<R>> {
        Ok(SolverState {
            x: ComplexImage::new(self.x.to_tensor())?,
            z: ComplexImage::new(self.z.to_tensor())?,
            u: ComplexImage::new(self.u.to_tensor())?,
            t: self.t,
        })
    }
}

/// Measured data and operator pieces for one reconstruction on a tape.
#[derive(Clone)]
pub struct Problem<R: Real> {
    pub y_tilde: Var<R>,
    pub maps: Var<R>,
    pub mask: Rc<Tensor<R>>,
}

impl<R: Real> Problem<R> {
    pub fn constant(tape: &Tape<R>, y_tilde: &KSpace<R>, maps: &CoilSensitivities<R>, mask: &Tensor<R>) -> Result<Self> {
        if y_tilde.tensor().shape() != maps.tensor().shape() {
            return Err(Error::shape("Problem", maps.tensor().shape(), y_tilde.tensor().shape()));
        }
        mask.expect_shape("Problem mask", &[maps.dims().0, maps.dims().1])?;
        Ok(Self {
            y_tilde: tape.constant(y_tilde.tensor().clone()),
            maps: tape.constant(maps.tensor().clone()),
            mask: Rc::new(mask.clone()),
        })
    }

    pub fn adjoint(&self, tape: &Tape<R>, y: &Var<R>) -> Result<Var<R>> {
        mri::adjoint_a_var(tape, y, &self.maps, &self.mask)
    }

    pub fn forward(&self, tape: &Tape<R>, x: &Var<R>) -> Result<Var<R>> {
        mri::forward_a_var(tape, x, &self.maps, &self.mask)
    }
}

/// `x⁰ = z⁰ = A*(ỹ)`, `u⁰ = 𝒢ψ(x⁰)` (zero without an initialiser).
pub fn init_state<R: Real>(p: &Bound<R>, prob: &Problem<R>, lagrange: Option<&LagrangeInit>) -> Result<State<R>> {
    let tape = p.tape;
    let x0 = prob.adjoint(tape, &prob.y_tilde)?;
    let u0 = match lagrange {
        Some(g) => g.forward(p, &x0)?,
        None => tape.constant(Tensor::zeros(x0.shape().to_vec())),
    };
    Ok(State {
        x: x0.clone(),
        z: x0,
        u: u0,
        t: 0,
    })
}

/// `z^{t+1} = R_θt(zᵗ, xᵗ, uᵗ/ρ_t)`.
pub fn z_step<R: Real>(p: &Bound<R>, state: &State<R>, denoiser: &Denoiser, rho: &Var<R>) -> Result<Var<R>> {
    let u_over_rho = p.tape.div_by(&state.u, rho)?;
    denoiser.apply(p, &state.z, &state.x, &u_over_rho, rho)
}

/// Gradient of the x-subproblem at `w`:
/// `A*(A w − ỹ) + ρ(w − z) + u`.
pub fn x_gradient<R: Real>(tape: &Tape<R>, prob: &Problem<R>, w: &Var<R>, z_next: &Var<R>, u: &Var<R>, rho: &Var<R>) -> Result<Var<R>> {
    let resid = tape.sub(&prob.forward(tape, w)?, &prob.y_tilde)?;
    let data = prob.adjoint(tape, &resid)?;
    let prox = tape.scale_by(&tape.sub(w, z_next)?, rho)?;
    tape.add(&tape.add(&data, &prox)?, u)
}

/// Data consistency by gradient descent: `Tx = etas.len()` steps
/// `w ← w − η_s ∇`, from `w⁰ = xᵗ`.
///
/// Fails with [`Error::Divergence`] once `‖w‖` exceeds `guard` times
/// `max(‖xᵗ‖, ‖ỹ‖)`.
pub fn dcgd_x_step<R: Real>(
    tape: &Tape<R>,
    prob: &Problem<R>,
    state: &State<R>,
    z_next: &Var<R>,
    rho: &Var<R>,
    etas: &[Var<R>],
    guard: f64,
) -> Result<Var<R>> {
    let scale = state.x.value().norm().f64().max(prob.y_tilde.value().norm().f64());
    let limit = guard * scale;
    let mut w = state.x.clone();
    for (s, eta) in etas.iter().enumerate() {
        let g = x_gradient(tape, prob, &w, z_next, &state.u, rho)?;
        w = tape.sub(&w, &tape.scale_by(&g, eta)?)?;
        let norm = w.value().norm().f64();
        if !norm.is_finite() || norm > limit {
            return Err(Error::Divergence {
                step: s + 1,
                norm,
                limit,
            });
        }
    }
    Ok(w)
}

/// `u^{t+1} = uᵗ + ρ_t (x^{t+1} − z^{t+1})`.
pub fn u_step<R: Real>(tape: &Tape<R>, u: &Var<R>, x_next: &Var<R>, z_next: &Var<R>, rho: &Var<R>) -> Result<Var<R>> {
    let diff = tape.sub(x_next, z_next)?;
    tape.add(u, &tape.scale_by(&diff, rho)?)
}

/// Terms of the augmented Lagrangian
/// `L_ρ = ½‖A x − ỹ‖² + λR(z) + Re⟨u, x − z⟩ + (ρ/2)‖x − z‖²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub data_fidelity: f64,
    /// `(ρ/2)‖x − z + u/ρ‖²`.
    pub penalty: f64,
    /// `Re⟨u, x − z⟩`.
    pub inner: f64,
    /// `λR(z)` when the regulariser is known.
    pub regularizer: Option<f64>,
    pub lagrangian: f64,
}

impl ObjectiveReport {
    pub fn evaluate<R: Real>(
        state: &SolverState<R>,
        rho: f64,
        y_tilde: &KSpace<R>,
        maps: &CoilSensitivities<R>,
        mask: &Tensor<R>,
        regularizer: Option<f64>,
    ) -> Result<Self> {
        let ax = mri::forward_a(&state.x, maps, mask)?;
        let data_fidelity = 0.5 * ax.tensor().sub(y_tilde.tensor())?.norm_sq().f64();
        let d = state.x.tensor().sub(state.z.tensor())?;
        let inner = cplx::inner_re(state.u.tensor(), &d)?.f64();
        let dn = d.norm_sq().f64();
        let shifted = d.add(&state.u.tensor().scale(R::of(1.0 / rho)))?;
        let penalty = 0.5 * rho * shifted.norm_sq().f64();
        Ok(Self {
            data_fidelity,
            penalty,
            inner,
            regularizer,
            lagrangian: data_fidelity + regularizer.unwrap_or(0.0) + inner + 0.5 * rho * dn,
        })
    }
}

/// Input to a reconstruction.
#[derive(Clone, Debug)]
pub struct Measurement<R: Real> {
    pub y_tilde: KSpace<R>,
    pub mask: SamplingMask,
    /// Known maps; `None` estimates them from the ACS region and refines them.
    pub maps: Option<CoilSensitivities<R>>,
}

/// Tape-level result of a forward pass.
pub struct Output<R: Real> {
    pub x0: Var<R>,
    pub xs: Vec<Var<R>>,
    pub maps: Var<R>,
    pub states: Vec<State<R>>,
}

/// Tensor-level result of [`VSharp::reconstruct`].
#[derive(Clone, Debug)]
pub struct Reconstruction<R: Real> {
    pub x0: ComplexImage<R>,
    /// One image per executed block.
    pub xs: Vec<ComplexImage<R>>,
    /// Blocks that produced `xs`, 1-based.
    pub blocks: Vec<usize>,
    pub maps: CoilSensitivities<R>,
}

impl<R: Real> Reconstruction<R> {
    pub fn last(&self) -> &ComplexImage<R> {
        self.xs.last().expect("at least one block")
    }
}

/// A configured unrolled solver together with its trainable parameters.
#[derive(Clone, Debug)]
pub struct VSharp<R: Real> {
    pub config: SolverConfig,
    pub store: ParamStore<R>,
    rho: ParamId,
    eta: ParamId,
    denoisers: Vec<Denoiser>,
    lagrange: Option<LagrangeInit>,
    sens: Option<UNet>,
}

impl<R: Real> VSharp<R> {
    pub fn new(config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let scalars = |n: usize, init: ScalarInit, rng: &mut ChaCha8Rng| -> Result<Tensor<R>> {
            match init {
                ScalarInit::TruncatedNormal { lo, hi } => truncated_normal(&[n], lo, hi, rng),
                ScalarInit::Fixed { value } => Ok(Tensor::full([n], R::of(raw_for(value)))),
            }
        };
        let rho_raw = scalars(config.blocks, config.rho, &mut rng)?;
        let eta_raw = scalars(config.dcgd_steps, config.eta, &mut rng)?;
        let rho = store.add("rho.raw", rho_raw);
        let eta = store.add("eta.raw", eta_raw);
        let n_den = if config.share_denoiser { 1 } else { config.blocks };
        let denoisers = (0..n_den)
            .map(|t| config.denoiser.build(&mut store, &format!("denoiser{t}"), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let lagrange = match &config.lagrange_init {
            Some(c) => Some(LagrangeInit::new(&mut store, "lagrange", c.clone(), &mut rng)?),
            None => None,
        };
        let sens = match config.sensitivity_net {
            Some(c) => Some(UNet::new(&mut store, "sens", c, &mut rng)?),
            None => None,
        };
        Ok(Self {
            config,
            store,
            rho,
            eta,
            denoisers,
            lagrange,
            sens,
        })
    }

    pub fn rho_id(&self) -> ParamId {
        self.rho
    }

    pub fn eta_id(&self) -> ParamId {
        self.eta
    }

    pub fn lagrange(&self) -> Option<&LagrangeInit> {
        self.lagrange.as_ref()
    }

    pub fn denoiser(&self, block: usize) -> &Denoiser {
        &self.denoisers[if self.config.share_denoiser { 0 } else { block - 1 }]
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Effective `ρ_t` for every block.
    pub fn rho_values(&self) -> Vec<f64> {
        self.store.get(self.rho).value.data().iter().map(|r| effective(r.f64())).collect()
    }

    /// Effective `η_s` parameters (before any Lipschitz scaling).
    pub fn eta_values(&self) -> Vec<f64> {
        self.store.get(self.eta).value.data().iter().map(|r| effective(r.f64())).collect()
    }

    pub fn set_rho(&mut self, values: &[f64]) -> Result<()> {
        self.set_scalars(self.rho, values)
    }

    pub fn set_eta(&mut self, values: &[f64]) -> Result<()> {
        self.set_scalars(self.eta, values)
    }

    fn set_scalars(&mut self, id: ParamId, values: &[f64]) -> Result<()> {
        let p = self.store.get_mut(id);
        if values.len() != p.value.len() || values.iter().any(|&v| !(v > POSITIVITY_FLOOR)) {
            return Err(Error::InvalidArgument(format!("{}: need {} values above {POSITIVITY_FLOOR}", p.name, p.value.len())));
        }
        p.value = Tensor::from_fn([values.len()], |i| R::of(raw_for(values[i])));
        Ok(())
    }

    /// Blocks run by default: the configured subset or all of them.
    pub fn default_blocks(&self) -> Vec<usize> {
        self.config
            .reduced_blocks
            .clone()
            .unwrap_or_else(|| (1..=self.config.blocks).collect())
    }

    /// Coil maps on the tape: given maps pass through unchanged; otherwise
    /// ACS estimation followed by refinement.
    pub fn maps_var(&self, p: &Bound<R>, m: &Measurement<R>) -> Result<Var<R>> {
        match &m.maps {
            Some(c) => Ok(p.tape.constant(c.tensor().clone())),
            None => {
                let est = coils::estimate_acs(&m.y_tilde, &m.mask)?;
                let raw = p.tape.constant(est.maps);
                coils::refine_var(p, &raw, self.sens.as_ref())
            }
        }
    }

    /// Forward pass through the given 1-based blocks, in order.
    pub fn forward_blocks(&self, p: &Bound<R>, m: &Measurement<R>, blocks: &[usize]) -> Result<Output<R>> {
        check_blocks(blocks, self.config.blocks)?;
        let tape = p.tape;
        let maps = self.maps_var(p, m)?;
        let prob = Problem {
            y_tilde: tape.constant(m.y_tilde.tensor().clone()),
            maps: maps.clone(),
            mask: Rc::new(m.mask.to_tensor()),
        };
        if m.y_tilde.tensor().shape() != maps.shape() {
            return Err(Error::shape("forward", maps.shape(), m.y_tilde.tensor().shape()));
        }
        let rho_all = tape.add_const(&tape.softplus(&p.param(self.rho)), POSITIVITY_FLOOR);
        let eta_all = tape.add_const(&tape.softplus(&p.param(self.eta)), POSITIVITY_FLOOR);
        let etas_base = (0..self.config.dcgd_steps)
            .map(|s| tape.select(&eta_all, s))
            .collect::<Result<Vec<_>>>()?;

        let mut state = init_state(p, &prob, self.lagrange.as_ref())?;
        let x0 = state.x.clone();
        let mut xs = Vec::with_capacity(blocks.len());
        let mut states = Vec::with_capacity(blocks.len());
        for &t in blocks {
            let rho = tape.select(&rho_all, t - 1)?;
            let z_next = z_step(p, &state, self.denoiser(t), &rho)?;
            let etas = match self.config.eta_scale {
                EtaScale::Absolute => etas_base.clone(),
                EtaScale::Lipschitz => {
                    let l = tape.add_const(&rho, 1.0);
                    etas_base.iter().map(|e| tape.div(e, &l)).collect::<Result<Vec<_>>>()?
                }
            };
            let x_next = dcgd_x_step(tape, &prob, &state, &z_next, &rho, &etas, self.config.divergence_factor)?;
            let u_next = u_step(tape, &state.u, &x_next, &z_next, &rho)?;
            state = State {
                x: x_next.clone(),
                z: z_next,
                u: u_next,
                t,
            };
            xs.push(x_next);
            states.push(state.clone());
        }
        Ok(Output { x0, xs, maps, states })
    }

    pub fn forward(&self, p: &Bound<R>, m: &Measurement<R>) -> Result<Output<R>> {
        self.forward_blocks(p, m, &self.default_blocks())
    }

    /// Inference with the default blocks.
    pub fn reconstruct(&self, m: &Measurement<R>) -> Result<Reconstruction<R>> {
        self.reconstruct_blocks(m, &self.default_blocks())
    }

    pub fn reconstruct_blocks(&self, m: &Measurement<R>, blocks: &[usize]) -> Result<Reconstruction<R>> {
        let tape = Tape::inference();
        let p = Bound::new(&tape, &self.store);
        let out = self.forward_blocks(&p, m, blocks)?;
        Ok(Reconstruction {
            x0: ComplexImage::new(out.x0.to_tensor())?,
            xs: out
                .xs
                .iter()
                .map(|x| ComplexImage::new(x.to_tensor()))
                .collect::<Result<Vec<_>>>()?,
            blocks: blocks.to_vec(),
            maps: CoilSensitivities::new(out.maps.to_tensor())?,
        })
    }

    /// Reconstruction keeping every intermediate `(x, z, u)`.
    pub fn trace(&self, m: &Measurement<R>) -> Result<Vec<SolverState<R>>> {
        let tape = Tape::inference();
        let p = Bound::new(&tape, &self.store);
        let out = self.forward(&p, m)?;
        out.states.iter().map(State::snapshot).collect()
    }
}
