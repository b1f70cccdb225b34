//! Image-network primitives on `[C, H, W]` tensors.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Stride, dilation and symmetric zero padding of a 2D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            dilation: 1,
            padding: 0,
        }
    }
}

impl ConvSpec {
    /// Zero padding that keeps the spatial size for an odd kernel at stride 1.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self {
            stride: 1,
            dilation,
            padding: dilation * (kernel - 1) / 2,
        }
    }

    fn out_len(&self, n: usize, k: usize) -> Option<usize> {
        let span = self.dilation * (k - 1) + 1;
        (n + 2 * self.padding).checked_sub(span).map(|v| v / self.stride + 1)
    }
}

/// Output indices `o` in `lo..hi` for which `o * s + off` lies in `0..n_in`.
fn span(n_in: usize, n_out: usize, off: isize, s: usize) -> (usize, usize) {
    let s = s as isize;
    let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
    let last = n_in as isize - 1 - off;
    let hi = if last < 0 { 0 } else { (last / s + 1).min(n_out as isize) };
    (lo as usize, hi.max(lo) as usize)
}

struct ConvGeom {
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    spec: ConvSpec,
}

impl ConvGeom {
    /// Visit every (output row, input row, column span) triple touched by
    /// kernel tap `(ky, kx)`.
    #[inline]
    fn for_taps(&self, ky: usize, kx: usize, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        let s = self.spec.stride;
        let d = self.spec.dilation as isize;
        let p = self.spec.padding as isize;
        let (ylo, yhi) = span(self.h, self.ho, ky as isize * d - p, s);
        let xoff = kx as isize * d - p;
        let (xlo, xhi) = span(self.w, self.wo, xoff, s);
        if xlo >= xhi {
            return;
        }
        for oy in ylo..yhi {
            let iy = (oy * s) as isize + ky as isize * d - p;
            let ix0 = (xlo * s) as isize + xoff;
            f(oy, iy as usize, xlo, xhi, ix0 as usize);
        }
    }
}

fn conv_forward<R: Real>(x: &[R], wt: &[R], bias: Option<&[R]>, g: &ConvGeom) -> Vec<R> {
    let (ho, wo, s) = (g.ho, g.wo, g.spec.stride);
    let mut out = vec![R::zero(); g.co * ho * wo];
    for o in 0..g.co {
        let plane = &mut out[o * ho * wo..(o + 1) * ho * wo];
        if let Some(b) = bias {
            plane.fill(b[o]);
        }
        for i in 0..g.ci {
            let xin = &x[i * g.h * g.w..(i + 1) * g.h * g.w];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wv = wt[((o * g.ci + i) * g.kh + ky) * g.kw + kx];
                    if wv == R::zero() {
                        continue;
                    }
                    g.for_taps(ky, kx, |oy, iy, xlo, xhi, ix0| {
                        let orow = &mut plane[oy * wo + xlo..oy * wo + xhi];
                        let irow = &xin[iy * g.w..(iy + 1) * g.w];
                        let len = orow.len();
                        if s == 1 {
                            for (o, &v) in orow.iter_mut().zip(&irow[ix0..ix0 + len]) {
                                *o += wv * v;
                            }
                        } else {
                            for (j, o) in orow.iter_mut().enumerate() {
                                *o += wv * irow[ix0 + j * s];
                            }
                        }
                    });
                }
            }
        }
    }
    out
}

fn conv_grad_input<R: Real>(gout: &[R], wt: &[R], g: &ConvGeom) -> Vec<R> {
    let (ho, wo, s) = (g.ho, g.wo, g.spec.stride);
    let mut gx = vec![R::zero(); g.ci * g.h * g.w];
    for o in 0..g.co {
        let gplane = &gout[o * ho * wo..(o + 1) * ho * wo];
        for i in 0..g.ci {
            let gin = &mut gx[i * g.h * g.w..(i + 1) * g.h * g.w];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wv = wt[((o * g.ci + i) * g.kh + ky) * g.kw + kx];
                    if wv == R::zero() {
                        continue;
                    }
                    g.for_taps(ky, kx, |oy, iy, xlo, xhi, ix0| {
                        let grow = &gplane[oy * wo + xlo..oy * wo + xhi];
                        let irow = &mut gin[iy * g.w..(iy + 1) * g.w];
                        if s == 1 {
                            for (d, &v) in irow[ix0..ix0 + grow.len()].iter_mut().zip(grow) {
                                *d += wv * v;
                            }
                        } else {
                            for (j, &v) in grow.iter().enumerate() {
                                irow[ix0 + j * s] += wv * v;
                            }
                        }
                    });
                }
            }
        }
    }
    gx
}

fn conv_grad_weight<R: Real>(gout: &[R], x: &[R], g: &ConvGeom) -> Vec<R> {
    let (ho, wo, s) = (g.ho, g.wo, g.spec.stride);
    let mut gw = vec![R::zero(); g.co * g.ci * g.kh * g.kw];
    for o in 0..g.co {
        let gplane = &gout[o * ho * wo..(o + 1) * ho * wo];
        for i in 0..g.ci {
            let xin = &x[i * g.h * g.w..(i + 1) * g.h * g.w];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let mut acc = R::zero();
                    g.for_taps(ky, kx, |oy, iy, xlo, xhi, ix0| {
                        let grow = &gplane[oy * wo + xlo..oy * wo + xhi];
                        let irow = &xin[iy * g.w..(iy + 1) * g.w];
                        if s == 1 {
                            acc += grow
                                .iter()
                                .zip(&irow[ix0..ix0 + grow.len()])
                                .map(|(&a, &b)| a * b)
                                .sum::<R>();
                        } else {
                            for (j, &v) in grow.iter().enumerate() {
                                acc += v * irow[ix0 + j * s];
                            }
                        }
                    });
                    gw[((o * g.ci + i) * g.kh + ky) * g.kw + kx] = acc;
                }
            }
        }
    }
    gw
}

/// Separable linear interpolation weights for x2 bilinear upsampling with
/// half-pixel centres (`align_corners = false`): `(i0, i1, t)` per output.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn chw<R: Real>(op: &'static str, x: &Var<R>) -> Result<(usize, usize, usize)> {
    match x.shape() {
        &[c, h, w] => Ok((c, h, w)),
        s => Err(Error::shape(op, "[C, H, W]", s)),
    }
}

impl<R: Real> Tape<R> {
    /// 2D cross-correlation with optional bias: `x: [Ci, H, W]`,
    /// `w: [Co, Ci, kh, kw]`, `b: [Co]`.
    pub fn conv2d(&self, x: &Var<R>, w: &Var<R>, b: Option<&Var<R>>, spec: ConvSpec) -> Result<Var<R>> {
        let (ci, h, wd) = chw("conv2d", x)?;
        let &[co, wci, kh, kw] = w.shape() else {
            return Err(Error::shape("conv2d weight", "[Co, Ci, kh, kw]", w.shape()));
        };
        if wci != ci {
            return Err(Error::shape("conv2d channels", ci, wci));
        }
        if let Some(b) = b {
            b.value().expect_shape("conv2d bias", &[co])?;
        }
        if spec.stride == 0 || spec.dilation == 0 {
            return Err(Error::InvalidArgument("conv2d stride and dilation must be >= 1".into()));
        }
        let (Some(ho), Some(wo)) = (spec.out_len(h, kh), spec.out_len(wd, kw)) else {
            return Err(Error::shape("conv2d input too small", [kh, kw], [h, wd]));
        };
        let geom = ConvGeom {
            ci,
            h,
            w: wd,
            co,
            kh,
            kw,
            ho,
            wo,
            spec,
        };
        let out = conv_forward(x.value().data(), w.value().data(), b.map(|b| b.value().data()), &geom);
        let out = Tensor::new([co, ho, wo], out)?;
        let (xv, wv) = (x.value.clone(), w.value.clone());
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(&inputs, out, move |g, need| {
            let gd = g.data();
            let mut res = vec![
                need[0].then(|| Tensor::new([ci, h, wd], conv_grad_input(gd, wv.data(), &geom)).unwrap()),
                need[1].then(|| {
                    Tensor::new([co, ci, kh, kw], conv_grad_weight(gd, xv.data(), &geom)).unwrap()
                }),
            ];
            if need.len() == 3 {
                res.push(need[2].then(|| {
                    Tensor::from_fn([co], |o| gd[o * ho * wo..(o + 1) * ho * wo].iter().copied().sum())
                }));
            }
            res
        }))
    }

    /// Replication (edge) padding of a `[C, H, W]` tensor.
    pub fn replication_pad(&self, x: &Var<R>, top: usize, bottom: usize, left: usize, right: usize) -> Result<Var<R>> {
        let (c, h, w) = chw("replication_pad", x)?;
        if h == 0 || w == 0 {
            return Err(Error::shape("replication_pad", "non-empty", x.shape()));
        }
        let (ho, wo) = (h + top + bottom, w + left + right);
        let src = move |oy: usize, ox: usize| {
            let iy = oy.saturating_sub(top).min(h - 1);
            let ix = ox.saturating_sub(left).min(w - 1);
            iy * w + ix
        };
        let mut out = Tensor::zeros([c, ho, wo]);
        {
            let xd = x.value().data();
            let od = out.data_mut();
            for ch in 0..c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        od[(ch * ho + oy) * wo + ox] = xd[ch * h * w + src(oy, ox)];
                    }
                }
            }
        }
        Ok(self.push(&[x], out, move |g, _| {
            let mut gx = Tensor::zeros([c, h, w]);
            let gd = g.data();
            let d = gx.data_mut();
            for ch in 0..c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        d[ch * h * w + src(oy, ox)] += gd[(ch * ho + oy) * wo + ox];
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// 2x2 average pooling with stride 2. Spatial dims must be even.
    pub fn avgpool2(&self, x: &Var<R>) -> Result<Var<R>> {
        let (c, h, w) = chw("avgpool2", x)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("avgpool2", "even H, W", x.shape()));
        }
        let (ho, wo) = (h / 2, w / 2);
        let q = R::of(0.25);
        let xd = x.value().data();
        let out = Tensor::from_fn([c, ho, wo], |i| {
            let (ch, r) = (i / (ho * wo), i % (ho * wo));
            let (oy, ox) = (r / wo, r % wo);
            let base = ch * h * w + 2 * oy * w + 2 * ox;
            (xd[base] + xd[base + 1] + xd[base + w] + xd[base + w + 1]) * q
        });
        Ok(self.push(&[x], out, move |g, _| {
            let gd = g.data();
            let gx = Tensor::from_fn([c, h, w], |i| {
                let (ch, r) = (i / (h * w), i % (h * w));
                let (y, xx) = (r / w, r % w);
                gd[(ch * ho + y / 2) * wo + xx / 2] * q
            });
            vec![Some(gx)]
        }))
    }

    /// Bilinear x2 upsampling, half-pixel centres (`align_corners = false`),
    /// edge-clamped.
    pub fn upsample2(&self, x: &Var<R>) -> Result<Var<R>> {
        let (c, h, w) = chw("upsample2", x)?;
        let (ty, tx) = (Rc::new(upsample_taps(h)), Rc::new(upsample_taps(w)));
        let (ho, wo) = (2 * h, 2 * w);
        let xd = x.value().data();
        let mut out = Tensor::zeros([c, ho, wo]);
        {
            let od = out.data_mut();
            for ch in 0..c {
                let plane = &xd[ch * h * w..(ch + 1) * h * w];
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    let fy = R::of(fy);
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let fx = R::of(fx);
                        let top = plane[y0 * w + x0] * (R::one() - fx) + plane[y0 * w + x1] * fx;
                        let bot = plane[y1 * w + x0] * (R::one() - fx) + plane[y1 * w + x1] * fx;
                        od[(ch * ho + oy) * wo + ox] = top * (R::one() - fy) + bot * fy;
                    }
                }
            }
        }
        Ok(self.push(&[x], out, move |g, _| {
            let gd = g.data();
            let mut gx = Tensor::zeros([c, h, w]);
            let d = gx.data_mut();
            for ch in 0..c {
                let plane = &mut d[ch * h * w..(ch + 1) * h * w];
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    let fy = R::of(fy);
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let fx = R::of(fx);
                        let v = gd[(ch * ho + oy) * wo + ox];
                        let (vt, vb) = (v * (R::one() - fy), v * fy);
                        plane[y0 * w + x0] += vt * (R::one() - fx);
                        plane[y0 * w + x1] += vt * fx;
                        plane[y1 * w + x0] += vb * (R::one() - fx);
                        plane[y1 * w + x1] += vb * fx;
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Concatenate along the leading axis; trailing dims must agree.
    pub fn concat(&self, parts: &[&Var<R>]) -> Result<Var<R>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let tail = first.shape().get(1..).unwrap_or(&[]).to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.value().rank() == 0 || p.shape()[1..] != tail[..] {
                return Err(Error::shape("concat", &tail, p.shape()));
            }
            lead += p.shape()[0];
            data.extend_from_slice(p.value().data());
        }
        let mut shape = vec![lead];
        shape.extend(&tail);
        let sizes: Vec<usize> = parts.iter().map(|p| p.value().len()).collect();
        let shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape().to_vec()).collect();
        Ok(self.push(parts, Tensor::new(shape, data)?, move |g, need| {
            let mut off = 0;
            sizes
                .iter()
                .zip(&shapes)
                .zip(need)
                .map(|((&n, s), &nd)| {
                    let part = nd.then(|| Tensor::new(s.clone(), g.data()[off..off + n].to_vec()).unwrap());
                    off += n;
                    part
                })
                .collect()
        }))
    }

    /// Leading-axis slice `[start..start+len]`.
    pub fn crop_channels(&self, x: &Var<R>, start: usize, len: usize) -> Result<Var<R>> {
        let lead = x.shape().first().copied().unwrap_or(0);
        if start + len > lead {
            return Err(Error::shape("crop_channels", lead, start + len));
        }
        let inner: usize = x.shape()[1..].iter().product();
        let mut shape = x.shape().to_vec();
        shape[0] = len;
        let full = x.shape().to_vec();
        let out = Tensor::new(shape, x.value().data()[start * inner..(start + len) * inner].to_vec())?;
        Ok(self.push(&[x], out, move |g, _| {
            let mut gx = Tensor::zeros(full.clone());
            gx.data_mut()[start * inner..(start + len) * inner].copy_from_slice(g.data());
            vec![Some(gx)]
        }))
    }

    /// Spatial window `[y0..y0+h, x0..x0+w]` of a `[C, H, W]` tensor.
    pub fn crop(&self, x: &Var<R>, y0: usize, x0: usize, h: usize, w: usize) -> Result<Var<R>> {
        let (c, hi, wi) = chw("crop", x)?;
        if y0 + h > hi || x0 + w > wi {
            return Err(Error::shape("crop", [hi, wi], [y0 + h, x0 + w]));
        }
        let xd = x.value().data();
        let out = Tensor::from_fn([c, h, w], |i| {
            let (ch, r) = (i / (h * w), i % (h * w));
            xd[(ch * hi + y0 + r / w) * wi + x0 + r % w]
        });
        Ok(self.push(&[x], out, move |g, _| {
            let mut gx = Tensor::zeros([c, hi, wi]);
            let d = gx.data_mut();
            for (i, &v) in g.data().iter().enumerate() {
                let (ch, r) = (i / (h * w), i % (h * w));
                d[(ch * hi + y0 + r / w) * wi + x0 + r % w] = v;
            }
            vec![Some(gx)]
        }))
    }

    /// Mean over every `k × k` window that fits inside an `[H, W]` image
    /// (stride 1, no padding), giving `[H−k+1, W−k+1]`.
    pub fn box_mean(&self, x: &Var<R>, k: usize) -> Result<Var<R>> {
        let &[h, w] = x.shape() else {
            return Err(Error::shape("box_mean", "[H, W]", x.shape()));
        };
        if k == 0 || k > h || k > w {
            return Err(Error::shape("box_mean window", [h, w], k));
        }
        let (ho, wo) = (h - k + 1, w - k + 1);
        let inv = R::one() / R::of((k * k) as f64);
        let xd = x.value().data();
        // row sums first, then column sums
        let mut rows = vec![R::zero(); h * wo];
        for y in 0..h {
            for ox in 0..wo {
                rows[y * wo + ox] = xd[y * w + ox..y * w + ox + k].iter().copied().sum();
            }
        }
        let out = Tensor::from_fn([ho, wo], |i| {
            let (oy, ox) = (i / wo, i % wo);
            (0..k).map(|dy| rows[(oy + dy) * wo + ox]).sum::<R>() * inv
        });
        Ok(self.push(&[x], out, move |g, _| {
            let gd = g.data();
            let mut cols = vec![R::zero(); h * wo];
            for oy in 0..ho {
                for ox in 0..wo {
                    let v = gd[oy * wo + ox] * inv;
                    for dy in 0..k {
                        cols[(oy + dy) * wo + ox] += v;
                    }
                }
            }
            let mut gx = Tensor::zeros([h, w]);
            let d = gx.data_mut();
            for y in 0..h {
                for ox in 0..wo {
                    let v = cols[y * wo + ox];
                    for dx in 0..k {
                        d[y * w + ox + dx] += v;
                    }
                }
            }
            vec![Some(gx)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn span_matches_bruteforce() {
        for n_in in 1..9usize {
            for n_out in 1..9usize {
                for off in -5isize..5 {
                    for s in 1..4usize {
                        let want: Vec<usize> = (0..n_out)
                            .filter(|&o| {
                                let i = (o * s) as isize + off;
                                i >= 0 && i < n_in as isize
                            })
                            .collect();
                        let (lo, hi) = span(n_in, n_out, off, s);
                        assert_eq!((lo..hi).collect::<Vec<_>>(), want, "{n_in} {n_out} {off} {s}");
                    }
                }
            }
        }
    }

    #[test]
    fn identity_1x1_kernel_is_identity() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn([3, 5, 4], |i| i as f64 * 0.1 - 2.0));
        let w = tape.constant(Tensor::from_fn([3, 3, 1, 1], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let y = tape.conv2d(&x, &w, None, ConvSpec::default()).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn replication_pad_2x2() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new([1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = tape.replication_pad(&x, 1, 1, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 4, 4]);
        #[rustfmt::skip]
        let want = [
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(y.value().data(), &want);
    }

    #[test]
    fn upsample_of_constant_is_constant() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full([2, 3, 5], 1.5));
        let y = tape.upsample2(&x).unwrap();
        assert_eq!(y.shape(), &[2, 6, 10]);
        assert!(y.value().data().iter().all(|&v| (v - 1.5).abs() < 1e-15));
    }

    #[test]
    fn upsample_matches_half_pixel_reference() {
        // 1D profile [0, 1] upsampled: outputs at source coords -0.25 (clamped to 0), 0.25, 0.75, 1.25 (clamped)
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new([1, 1, 2], vec![0.0, 1.0]).unwrap());
        let y = tape.upsample2(&x).unwrap();
        assert_eq!(y.value().data(), &[0.0, 0.25, 0.75, 1.0, 0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn conv_shape_errors() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros([2, 4, 4]));
        let w = tape.constant(Tensor::zeros([1, 3, 3, 3]));
        assert!(tape.conv2d(&x, &w, None, ConvSpec::default()).is_err());
        let w = tape.constant(Tensor::zeros([1, 2, 5, 5]));
        assert!(tape.conv2d(&x, &w, None, ConvSpec::default()).is_err());
        assert!(tape.avgpool2(&tape.constant(Tensor::zeros([1, 3, 4]))).is_err());
    }
}
