//! Retrospective k-space undersampling masks.
//!
//! Both generators keep a fully sampled, centered autocalibration (ACS)
//! region and are deterministic for a given seed. Acceleration is reported
//! as `H·W / #sampled`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Equispaced,
    Poisson,
    Full,
}

impl std::str::FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equispaced" => Ok(Self::Equispaced),
            "poisson" => Ok(Self::Poisson),
            "full" => Ok(Self::Full),
            other => Err(Error::InvalidArgument(format!("unknown mask type {other:?}"))),
        }
    }
}

/// Half-open rectangle of k-space indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

impl Region {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        (self.row0..self.row1).contains(&r) && (self.col0..self.col1).contains(&c)
    }

    pub fn is_empty(&self) -> bool {
        self.row0 >= self.row1 || self.col0 >= self.col1
    }
}

/// Centered index range of length `n` in `0..len`, aligned with the DC bin
/// at `len / 2`.
fn centered(len: usize, n: usize) -> (usize, usize) {
    let start = (len / 2).saturating_sub(n / 2).min(len - n);
    (start, start + n)
}

/// Binary sampling pattern with its ACS region and acceleration bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingMask {
    pub kind: MaskKind,
    pub height: usize,
    pub width: usize,
    grid: Vec<u8>,
    pub acs: Region,
    pub acs_fraction: f64,
    pub requested_accel: f64,
    pub achieved_accel: f64,
    pub seed: u64,
}

impl SamplingMask {
    fn finish(kind: MaskKind, height: usize, width: usize, grid: Vec<u8>, acs: Region, acs_fraction: f64, accel: f64, seed: u64) -> Self {
        let ones = grid.iter().filter(|&&v| v != 0).count().max(1);
        Self {
            kind,
            height,
            width,
            achieved_accel: (height * width) as f64 / ones as f64,
            grid,
            acs,
            acs_fraction,
            requested_accel: accel,
            seed,
        }
    }

    /// Every location sampled; the ACS region is the whole grid.
    pub fn full(height: usize, width: usize) -> Self {
        let acs = Region {
            row0: 0,
            row1: height,
            col0: 0,
            col1: width,
        };
        Self::finish(MaskKind::Full, height, width, vec![1; height * width], acs, 1.0, 1.0, 0)
    }

    /// Wrap an externally supplied binary grid. The ACS region is the
    /// largest centered fully sampled rectangle.
    pub fn from_grid(height: usize, width: usize, grid: Vec<u8>) -> Result<Self> {
        if grid.len() != height * width || height == 0 || width == 0 {
            return Err(Error::shape("SamplingMask::from_grid", height * width, grid.len()));
        }
        if grid.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument("mask entries must be 0 or 1".into()));
        }
        let mut best = Region {
            row0: 0,
            row1: 0,
            col0: 0,
            col1: 0,
        };
        for nh in 1..=height {
            let (row0, row1) = centered(height, nh);
            let col_full: Vec<bool> = (0..width)
                .map(|c| (row0..row1).all(|r| grid[r * width + c] == 1))
                .collect();
            let nw = (1..=width)
                .take_while(|&nw| {
                    let (c0, c1) = centered(width, nw);
                    col_full[c0..c1].iter().all(|&f| f)
                })
                .last()
                .unwrap_or(0);
            if nw == 0 {
                break;
            }
            if nh * nw > (best.row1 - best.row0) * (best.col1 - best.col0) {
                let (col0, col1) = centered(width, nw);
                best = Region { row0, row1, col0, col1 };
            }
        }
        let frac = ((best.col1 - best.col0) as f64 / width as f64).min((best.row1 - best.row0) as f64 / height as f64);
        let mut m = Self::finish(MaskKind::Full, height, width, grid, best, frac, 1.0, 0);
        m.requested_accel = m.achieved_accel;
        Ok(m)
    }

    pub fn grid(&self) -> &[u8] {
        &self.grid
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.grid[r * self.width + c] != 0
    }

    pub fn num_sampled(&self) -> usize {
        self.grid.iter().filter(|&&v| v != 0).count()
    }

    /// The mask as a real `[H, W]` tensor of zeros and ones.
    pub fn to_tensor<R: Real>(&self) -> Tensor<R> {
        Tensor::from_fn([self.height, self.width], |i| if self.grid[i] != 0 { R::one() } else { R::zero() })
    }

    /// Keep only the ACS region.
    pub fn acs_only(&self) -> Self {
        let grid = (0..self.height * self.width)
            .map(|i| u8::from(self.acs.contains(i / self.width, i % self.width)))
            .collect();
        Self::finish(self.kind, self.height, self.width, grid, self.acs, self.acs_fraction, self.requested_accel, self.seed)
    }

    pub fn acs_fully_sampled(&self) -> bool {
        (self.acs.row0..self.acs.row1).all(|r| (self.acs.col0..self.acs.col1).all(|c| self.get(r, c)))
    }

    /// Relative deviation `|achieved − requested| / requested`.
    pub fn accel_error(&self) -> f64 {
        (self.achieved_accel - self.requested_accel).abs() / self.requested_accel
    }
}

fn check_args(height: usize, width: usize, accel: f64, acs_fraction: f64) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("mask dimensions must be positive".into()));
    }
    if !(accel >= 1.0) || !accel.is_finite() {
        return Err(Error::InvalidArgument(format!("acceleration must be >= 1, got {accel}")));
    }
    if !(acs_fraction > 0.0 && acs_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("ACS fraction must lie in (0, 1), got {acs_fraction}")));
    }
    if accel > 1.0 && acs_fraction * accel >= 1.0 {
        return Err(Error::MaskUnreachable(format!(
            "ACS fraction {acs_fraction} alone exceeds the sampling budget 1/{accel}"
        )));
    }
    Ok(())
}

/// Full columns: the centered `⌈acs_fraction·W⌉` ACS columns plus columns
/// spread at equal spacing over the remaining ones, starting at a seeded
/// random offset.
pub fn equispaced(height: usize, width: usize, accel: f64, acs_fraction: f64, seed: u64) -> Result<SamplingMask> {
    check_args(height, width, accel, acs_fraction)?;
    let n_acs = ((acs_fraction * width as f64).ceil() as usize).max(1);
    // column count whose achieved acceleration is closest to the request
    let ideal = width as f64 / accel;
    let target = [ideal.floor(), ideal.ceil()]
        .into_iter()
        .map(|n| (n as usize).clamp(1, width))
        .min_by(|&a, &b| {
            let err = |n: usize| ((width as f64 / n as f64) - accel).abs();
            err(a).total_cmp(&err(b))
        })
        .unwrap();
    if n_acs > target {
        return Err(Error::MaskUnreachable(format!(
            "{n_acs} ACS columns exceed the {target} columns allowed at acceleration {accel}"
        )));
    }
    let (c0, c1) = centered(width, n_acs);
    let rest: Vec<usize> = (0..width).filter(|c| !(c0..c1).contains(c)).collect();
    let m = target - n_acs;
    let mut cols = vec![false; width];
    cols[c0..c1].fill(true);
    if m > 0 {
        let step = rest.len() as f64 / m as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let offset = rng.random_range(0.0..step);
        for i in 0..m {
            let idx = ((offset + i as f64 * step).floor() as usize).min(rest.len() - 1);
            cols[rest[idx]] = true;
        }
    }
    let grid = (0..height * width).map(|i| u8::from(cols[i % width])).collect();
    let acs = Region {
        row0: 0,
        row1: height,
        col0: c0,
        col1: c1,
    };
    Ok(SamplingMask::finish(MaskKind::Equispaced, height, width, grid, acs, acs_fraction, accel, seed))
}

/// Radius profile `r(d) = r₀ (1 + α d / d_max)` of the variable-density
/// Poisson-disc sampler, with `d` the distance from the k-space center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiusProfile {
    pub r0: f64,
    pub alpha: f64,
    pub center: (f64, f64),
    pub d_max: f64,
}

impl RadiusProfile {
    pub const ALPHA: f64 = 1.0;

    pub fn new(height: usize, width: usize, r0: f64) -> Self {
        let center = ((height / 2) as f64 + 0.5, (width / 2) as f64 + 0.5);
        let d_max = center.0.max(height as f64 - center.0).hypot(center.1.max(width as f64 - center.1));
        Self {
            r0,
            alpha: Self::ALPHA,
            center,
            d_max,
        }
    }

    pub fn at(&self, p: (f64, f64)) -> f64 {
        let d = (p.0 - self.center.0).hypot(p.1 - self.center.1);
        self.r0 * (1.0 + self.alpha * d / self.d_max)
    }
}

/// Variable-radius Bridson sampling on the continuous `[0, H) × [0, W)`
/// plane. Every accepted point `p` keeps a distance of at least `r(p)` from
/// all points accepted before it.
pub fn bridson(height: usize, width: usize, profile: &RadiusProfile, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    const CANDIDATES: usize = 30;
    let (hf, wf) = (height as f64, width as f64);
    let cell = profile.r0 / std::f64::consts::SQRT_2;
    let (gh, gw) = ((hf / cell).ceil() as usize + 1, (wf / cell).ceil() as usize + 1);
    let mut grid: Vec<u32> = vec![u32::MAX; gh * gw];
    let mut points: Vec<(f64, f64)> = Vec::new();
    let mut active: Vec<usize> = Vec::new();

    let fits = |p: (f64, f64), points: &[(f64, f64)], grid: &[u32]| {
        let r = profile.at(p);
        let reach = (r / cell).ceil() as isize;
        let (cy, cx) = ((p.0 / cell) as isize, (p.1 / cell) as isize);
        for gy in (cy - reach).max(0)..=(cy + reach).min(gh as isize - 1) {
            for gx in (cx - reach).max(0)..=(cx + reach).min(gw as isize - 1) {
                let id = grid[gy as usize * gw + gx as usize];
                if id != u32::MAX {
                    let q = points[id as usize];
                    if (p.0 - q.0).hypot(p.1 - q.1) < r {
                        return false;
                    }
                }
            }
        }
        true
    };

    let first = (rng.random_range(0.0..hf), rng.random_range(0.0..wf));
    let insert = |p: (f64, f64), points: &mut Vec<(f64, f64)>, grid: &mut [u32], active: &mut Vec<usize>| {
        grid[(p.0 / cell) as usize * gw + (p.1 / cell) as usize] = points.len() as u32;
        active.push(points.len());
        points.push(p);
    };
    insert(first, &mut points, &mut grid, &mut active);

    while !active.is_empty() {
        let slot = rng.random_range(0..active.len());
        let p = points[active[slot]];
        let r = profile.at(p);
        let mut placed = false;
        for _ in 0..CANDIDATES {
            let rad = r * (1.0 + 3.0 * rng.random::<f64>()).sqrt();
            let ang = rng.random_range(0.0..std::f64::consts::TAU);
            let q = (p.0 + rad * ang.sin(), p.1 + rad * ang.cos());
            if !(0.0..hf).contains(&q.0) || !(0.0..wf).contains(&q.1) {
                continue;
            }
            if fits(q, &points, &grid) {
                insert(q, &mut points, &mut grid, &mut active);
                placed = true;
                break;
            }
        }
        if !placed {
            active.swap_remove(slot);
        }
    }
    points
}

/// Poisson-disc mask together with the continuous sample positions that
/// fall outside the ACS rectangle.
#[derive(Clone, Debug)]
pub struct PoissonMask {
    pub mask: SamplingMask,
    pub profile: RadiusProfile,
    pub points: Vec<(f64, f64)>,
}

/// Maximum number of radius-scale bisection steps.
pub const POISSON_MAX_ITERS: usize = 40;

/// Variable-density Poisson-disc mask with a centered
/// `⌈f·H⌉ × ⌈f·W⌉` ACS rectangle. The base radius `r₀` is found by
/// bisection so that the achieved acceleration matches the request.
pub fn poisson_disc(height: usize, width: usize, accel: f64, acs_fraction: f64, seed: u64) -> Result<SamplingMask> {
    poisson_disc_detailed(height, width, accel, acs_fraction, seed).map(|p| p.mask)
}

pub fn poisson_disc_detailed(height: usize, width: usize, accel: f64, acs_fraction: f64, seed: u64) -> Result<PoissonMask> {
    check_args(height, width, accel, acs_fraction)?;
    let (r0, r1) = centered(height, ((acs_fraction * height as f64).ceil() as usize).max(1));
    let (c0, c1) = centered(width, ((acs_fraction * width as f64).ceil() as usize).max(1));
    let acs = Region {
        row0: r0,
        row1: r1,
        col0: c0,
        col1: c1,
    };
    let build = |radius: f64| {
        let profile = RadiusProfile::new(height, width, radius);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let all = bridson(height, width, &profile, &mut rng);
        let mut grid = vec![0u8; height * width];
        for r in r0..r1 {
            grid[r * width + c0..r * width + c1].fill(1);
        }
        let mut points = Vec::new();
        for p in all {
            let (r, c) = (p.0 as usize, p.1 as usize);
            if !acs.contains(r, c) {
                grid[r * width + c] = 1;
                points.push(p);
            }
        }
        let mask = SamplingMask::finish(MaskKind::Poisson, height, width, grid, acs, acs_fraction, accel, seed);
        PoissonMask { mask, profile, points }
    };
    if accel == 1.0 {
        let mut m = SamplingMask::full(height, width);
        m.kind = MaskKind::Poisson;
        m.acs = acs;
        m.acs_fraction = acs_fraction;
        m.seed = seed;
        return Ok(PoissonMask {
            mask: m,
            profile: RadiusProfile::new(height, width, 0.0),
            points: Vec::new(),
        });
    }

    // bisection in log r₀; larger radii give sparser masks
    let (mut lo, mut hi) = (0.05f64.ln(), (height.max(width) as f64).ln());
    let mut best: Option<PoissonMask> = None;
    for _ in 0..POISSON_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        let cand = build(mid.exp());
        if best.as_ref().is_none_or(|b| cand.mask.accel_error() < b.mask.accel_error()) {
            best = Some(cand.clone());
        }
        if cand.mask.accel_error() < 0.01 {
            break;
        }
        if cand.mask.achieved_accel < accel {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let best = best.unwrap();
    if best.mask.accel_error() > 0.1 {
        return Err(Error::MaskUnreachable(format!(
            "radius bisection reached acceleration {:.3} for requested {accel}",
            best.mask.achieved_accel
        )));
    }
    Ok(best)
}

/// Generate a mask of the given kind.
pub fn generate(kind: MaskKind, height: usize, width: usize, accel: f64, acs_fraction: f64, seed: u64) -> Result<SamplingMask> {
    match kind {
        MaskKind::Equispaced => equispaced(height, width, accel, acs_fraction, seed),
        MaskKind::Poisson => poisson_disc(height, width, accel, acs_fraction, seed),
        MaskKind::Full => Ok(SamplingMask::full(height, width)),
    }
}
