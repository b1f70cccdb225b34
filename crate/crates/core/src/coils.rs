//! Coil sensitivity estimation from the autocalibration region and its
//! learned refinement.

use crate::autodiff::{Bound, Tape, Var};
use crate::error::{Error, Result};
use crate::fft::ifft2c;
use crate::mask::SamplingMask;
use crate::mri::{CoilSensitivities, KSpace};
use crate::nets::UNet;
use crate::tensor::{Real, Tensor};

/// Guard added to the RSS before dividing.
pub const RSS_EPS: f64 = 1e-9;

/// Initial maps `C̃` built from the ACS lines only.
#[derive(Clone, Debug)]
pub struct AcsEstimate<R: Real> {
    pub maps: Tensor<R>,
    pub source_mask: SamplingMask,
}

/// Zero every non-ACS k-space sample, transform each coil back to image
/// space and divide by the RSS of those low-pass images.
///
/// Fails with [`Error::EmptyAcs`] when the mask has no ACS region and with
/// [`Error::EmptySupport`] when the ACS data is identically zero.
pub fn estimate_acs<R: Real>(y_masked: &KSpace<R>, mask: &SamplingMask) -> Result<AcsEstimate<R>> {
    let (h, w) = y_masked.dims();
    if (mask.height, mask.width) != (h, w) {
        return Err(Error::shape("estimate_acs", [h, w], [mask.height, mask.width]));
    }
    if mask.acs.is_empty() || !mask.acs_fully_sampled() {
        return Err(Error::EmptyAcs);
    }
    let acs = mask.acs_only().to_tensor::<R>();
    let low = ifft2c(&crate::cplx::apply_mask(y_masked.tensor(), &acs)?)?;
    if low.data().iter().all(|&v| v == R::zero()) {
        return Err(Error::EmptySupport);
    }
    let rss = crate::cplx::coil_rss(&low)?;
    let n = h * w;
    let eps = R::of(RSS_EPS);
    let mut maps = low;
    for plane in maps.data_mut().chunks_exact_mut(n) {
        for (v, &s) in plane.iter_mut().zip(rss.data()) {
            *v /= s + eps;
        }
    }
    Ok(AcsEstimate {
        maps,
        source_mask: mask.clone(),
    })
}

/// Apply `S_net` to every coil map (shared weights) and renormalise so that
/// `Σ_k |C_k|² = 1` wherever the refined maps are nonzero. `None` stands for
/// the identity network.
pub fn refine_var<R: Real>(p: &Bound<R>, maps: &Var<R>, net: Option<&UNet>) -> Result<Var<R>> {
    let tape = p.tape;
    crate::cplx::check_coils("refine", maps.value())?;
    let refined = match net {
        None => maps.clone(),
        Some(net) => {
            let nc = maps.shape()[0];
            let (h, w) = (maps.shape()[2], maps.shape()[3]);
            let flat = tape.reshape(maps, &[2 * nc, h, w])?;
            let mut outs = Vec::with_capacity(nc);
            for k in 0..nc {
                let coil = tape.crop_channels(&flat, 2 * k, 2)?;
                outs.push(net.forward(p, &coil)?);
            }
            let refs: Vec<&Var<R>> = outs.iter().collect();
            let stacked = tape.concat(&refs)?;
            tape.reshape(&stacked, &[nc, 2, h, w])?
        }
    };
    tape.normalize_coils(&refined, RSS_EPS)
}

/// Inference-only refinement.
pub fn refine<R: Real>(est: &AcsEstimate<R>, net: Option<(&UNet, &crate::autodiff::ParamStore<R>)>) -> Result<CoilSensitivities<R>> {
    let tape = Tape::inference();
    let empty = crate::autodiff::ParamStore::new();
    let store = net.map(|(_, s)| s).unwrap_or(&empty);
    let p = Bound::new(&tape, store);
    let maps = tape.constant(est.maps.clone());
    let out = refine_var(&p, &maps, net.map(|(n, _)| n))?;
    CoilSensitivities::new(out.to_tensor())
}
