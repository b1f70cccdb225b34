use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn same_shape<R: Real>(op: &'static str, a: &Var<R>, b: &Var<R>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn scalar<R: Real>(op: &'static str, s: &Var<R>) -> Result<()> {
    if s.value().len() != 1 {
        return Err(Error::shape(op, "scalar", s.shape()));
    }
    Ok(())
}

impl<R: Real> Tape<R> {
    pub fn add(&self, a: &Var<R>, b: &Var<R>) -> Result<Var<R>> {
        same_shape("add", a, b)?;
        let out = a.value().add(b.value())?;
        Ok(self.push(&[a, b], out, |g, _| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&self, a: &Var<R>, b: &Var<R>) -> Result<Var<R>> {
        same_shape("sub", a, b)?;
        let out = a.value().sub(b.value())?;
        Ok(self.push(&[a, b], out, |g, need| {
            vec![Some(g.clone()), need[1].then(|| g.map(|v| -v))]
        }))
    }

    pub fn mul(&self, a: &Var<R>, b: &Var<R>) -> Result<Var<R>> {
        same_shape("mul", a, b)?;
        let out = a.value().zip_map(b.value(), |x, y| x * y)?;
        let (av, bv) = (a.value.clone(), b.value.clone());
        Ok(self.push(&[a, b], out, move |g, need| {
            vec![
                need[0].then(|| g.zip_map(&bv, |g, b| g * b).unwrap()),
                need[1].then(|| g.zip_map(&av, |g, a| g * a).unwrap()),
            ]
        }))
    }

    pub fn div(&self, a: &Var<R>, b: &Var<R>) -> Result<Var<R>> {
        same_shape("div", a, b)?;
        let out = a.value().zip_map(b.value(), |x, y| x / y)?;
        let (bv, ov) = (b.value.clone(), std::rc::Rc::new(out.clone()));
        Ok(self.push(&[a, b], out, move |g, need| {
            let ga = g.zip_map(&bv, |g, b| g / b).unwrap();
            let gb = need[1].then(|| ga.zip_map(&ov, |ga, o| -ga * o).unwrap());
            vec![need[0].then_some(ga), gb]
        }))
    }

    pub fn neg(&self, a: &Var<R>) -> Var<R> {
        self.scale(a, -1.0)
    }

    pub fn scale(&self, a: &Var<R>, c: f64) -> Var<R> {
        let c = R::of(c);
        self.push(&[a], a.value().scale(c), move |g, _| vec![Some(g.scale(c))])
    }

    pub fn add_const(&self, a: &Var<R>, c: f64) -> Var<R> {
        let c = R::of(c);
        self.push(&[a], a.value().map(|v| v + c), |g, _| vec![Some(g.clone())])
    }

    /// `max(x, 0)`; the subgradient at exactly zero is taken as zero.
    pub fn relu(&self, a: &Var<R>) -> Var<R> {
        let av = a.value.clone();
        self.push(&[a], a.value().map(|v| v.max(R::zero())), move |g, _| {
            vec![Some(
                g.zip_map(&av, |g, x| if x > R::zero() { g } else { R::zero() })
                    .unwrap(),
            )]
        })
    }

    pub fn sqr(&self, a: &Var<R>) -> Var<R> {
        let av = a.value.clone();
        self.push(&[a], a.value().map(|v| v * v), move |g, _| {
            vec![Some(g.zip_map(&av, |g, x| R::of(2.0) * g * x).unwrap())]
        })
    }

    /// Square root; gradient is zero where the output is zero.
    pub fn sqrt(&self, a: &Var<R>) -> Var<R> {
        let out = a.value().map(|v| v.max(R::zero()).sqrt());
        let ov = std::rc::Rc::new(out.clone());
        self.push(&[a], out, move |g, _| {
            vec![Some(
                g.zip_map(&ov, |g, o| {
                    if o > R::zero() {
                        g / (R::of(2.0) * o)
                    } else {
                        R::zero()
                    }
                })
                .unwrap(),
            )]
        })
    }

    /// `|x|` with subgradient zero at zero.
    pub fn abs(&self, a: &Var<R>) -> Var<R> {
        let av = a.value.clone();
        self.push(&[a], a.value().map(|v| v.abs()), move |g, _| {
            vec![Some(
                g.zip_map(&av, |g, x| {
                    if x > R::zero() {
                        g
                    } else if x < R::zero() {
                        -g
                    } else {
                        R::zero()
                    }
                })
                .unwrap(),
            )]
        })
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&self, a: &Var<R>) -> Var<R> {
        let av = a.value.clone();
        self.push(&[a], a.value().map(softplus), move |g, _| {
            vec![Some(g.zip_map(&av, |g, x| g * sigmoid(x)).unwrap())]
        })
    }

    pub fn sum(&self, a: &Var<R>) -> Var<R> {
        let shape = a.shape().to_vec();
        self.push(&[a], Tensor::scalar(a.value().sum()), move |g, _| {
            vec![Some(Tensor::full(shape.clone(), g.item()))]
        })
    }

    pub fn mean(&self, a: &Var<R>) -> Var<R> {
        let n = a.value().len() as f64;
        let s = self.sum(a);
        self.scale(&s, 1.0 / n)
    }

    /// Multiply every element of `a` by the scalar var `s`.
    pub fn scale_by(&self, a: &Var<R>, s: &Var<R>) -> Result<Var<R>> {
        scalar("scale_by", s)?;
        let sv = s.item();
        let av = a.value.clone();
        Ok(self.push(&[a, s], a.value().scale(sv), move |g, need| {
            vec![
                need[0].then(|| g.scale(sv)),
                need[1].then(|| Tensor::scalar(g.dot(&av).unwrap())),
            ]
        }))
    }

    /// Divide every element of `a` by the scalar var `s`.
    pub fn div_by(&self, a: &Var<R>, s: &Var<R>) -> Result<Var<R>> {
        scalar("div_by", s)?;
        let sv = s.item();
        let av = a.value.clone();
        Ok(self.push(&[a, s], a.value().scale(R::one() / sv), move |g, need| {
            vec![
                need[0].then(|| g.scale(R::one() / sv)),
                need[1].then(|| Tensor::scalar(-g.dot(&av).unwrap() / (sv * sv))),
            ]
        }))
    }

    /// Element `i` of a flat vector as a scalar var.
    pub fn select(&self, v: &Var<R>, i: usize) -> Result<Var<R>> {
        let n = v.value().len();
        if i >= n {
            return Err(Error::InvalidArgument(format!("select index {i} out of {n}")));
        }
        let shape = v.shape().to_vec();
        Ok(self.push(&[v], Tensor::scalar(v.value().data()[i]), move |g, _| {
            let mut out = Tensor::zeros(shape.clone());
            out.data_mut()[i] = g.item();
            vec![Some(out)]
        }))
    }

    pub fn reshape(&self, a: &Var<R>, shape: &[usize]) -> Result<Var<R>> {
        let out = a.to_tensor().reshape(shape.to_vec())?;
        let orig = a.shape().to_vec();
        Ok(self.push(&[a], out, move |g, _| {
            vec![Some(g.clone().reshape(orig.clone()).unwrap())]
        }))
    }
}

pub(crate) fn softplus<R: Real>(x: R) -> R {
    if x > R::of(30.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid<R: Real>(x: R) -> R {
    R::one() / (R::one() + (-x).exp())
}
