//! Differentiable ops used by the head.
//!
//! Each op validates shapes, computes its value in `f64` and registers the
//! vector-Jacobian product for its inputs.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Norms below this are treated as zero by [`Tape::cosine`].
pub const NORM_FLOOR: f64 = 1e-12;

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn same_shape(tape: &Tape, op: &'static str, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::shape(op, format!("{:?} vs {:?}", tape.shape(a), tape.shape(b))));
    }
    Ok(())
}

fn scalar_arg(tape: &Tape, op: &'static str, s: Var) -> Result<f64> {
    let v = tape.value(s);
    if !v.is_scalar() {
        return Err(Error::shape(op, format!("expected scalar, got {:?}", v.shape())));
    }
    Ok(v.item())
}

fn map_unary(
    tape: &mut Tape,
    op: &'static str,
    x: Var,
    f: impl Fn(f64) -> f64,
    // derivative given (input, output)
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Result<Var> {
    let input = tape.value(x).clone();
    let out: Vec<f64> = input.data().iter().map(|&v| f(v)).collect();
    let value = Tensor::new(input.shape().to_vec(), out)?;
    let saved_out = value.data().to_vec();
    tape.push(op, value, &[x], move || {
        move |g: &[f64], sink: &mut super::GradSink<'_>| {
            sink.accumulate(x, |gx| {
                for (i, gi) in g.iter().enumerate() {
                    gx[i] += gi * df(input.data()[i], saved_out[i]);
                }
            });
        }
    })
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "add", a, b)?;
        let av = self.value(a);
        let out: Vec<f64> = av.data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), out)?;
        self.push("add", value, &[a, b], move || {
            move |g: &[f64], sink: &mut super::GradSink<'_>| {
                sink.accumulate(a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                sink.accumulate(b, |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
        })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "sub", a, b)?;
        let av = self.value(a);
        let out: Vec<f64> = av.data().iter().zip(self.value(b).data()).map(|(x, y)| x - y).collect();
        let value = Tensor::new(av.shape().to_vec(), out)?;
        self.push("sub", value, &[a, b], move || {
            move |g: &[f64], sink: &mut super::GradSink<'_>| {
                sink.accumulate(a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                sink.accumulate(b, |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
        })
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "mul", a, b)?;
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let out: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), out)?;
        self.push("mul", value, &[a, b], move || {
            move |g: &[f64], sink: &mut super::GradSink<'_>| {
                sink.accumulate(a, |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv.data()[i];
                    }
                });
                sink.accumulate(b, |gb| {
                    for i in 0..g.len() {
                        gb[i] += g[i] * av.data()[i];
                    }
                });
            }
        })
    }

    /// Multiplies by a fixed constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let xv = self.value(x);
        let value = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| v * c).collect())?;
        self.push("scale", value, &[x], move || {
            move |g: &[f64], sink: &mut super::GradSink<'_>| {
                sink.accumulate(x, |gx| gx.iter_mut().zip(g).for_each(|(a, b)| *a += b * c));
            }
        })
    }

    /// Multiplies every element of `x` by the scalar node `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = scalar_arg(self, "mul_scalar", s)?;
        let xv = self.value(x).clone();
        let value = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| v * sv).collect())?;
        self.push("mul_scalar", value, &[x, s], move || {
            move |g: &[f64], sink: &mut super::GradSink<'_>| {
                sink.accumulate(x, |gx| gx.iter_mut().zip(g).for_each(|(a, b)| *a += b * sv));
                sink.accumulate(s, |gs| {
                    gs[0] += g.iter().zip(xv.data()).map(|(a, b)| a * b).sum::<f64>();
                });
            }
        })
    }

    /// Divides every element of `x` by the scalar node `s`.
    pub fn div_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = scalar_arg(self, "div_scalar", s)?;
        let xv = self.value(x).clone();
        let value = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| v / sv).collect())?;
        self.push("div_scalar", value, &[x, s], move || {
            move |g: &[f64], sink: &mut super::GradSink<'_>| {
                sink.accumulate(x, |gx| gx.iter_mut().zip(g).for_each(|(a, b)| *a += b / sv));
                sink.accumulate(s, |gs| {
                    let dot: f64 = g.iter().zip(xv.data()).map(|(a, b)| a * b).sum();
                    gs[0] -= dot / (sv * sv);
                });
            }
        })
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        map_unary(self, "exp", x, f64::exp, |_, y| y)
    }

    /// Elementwise logistic function, `1 / (1 + e^-x)`.
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        map_unary(self, "sigmoid", x, sigmoid_scalar, |_, y| y * (1.0 - y))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        map_unary(self, "abs", x, f64::abs, |v, _| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        map_unary(
            self,
            "clamp",
            x,
            move |v| v.clamp(lo, hi),
            move |v, _| {
                if (lo..=hi).contains(&v) {
                    1.0
                } else {
                    0.0
                }
            },
        )
    }

    /// `y[i] = x[i]` clamped into `[lo[i], hi[i]]`, routing the gradient to
    /// whichever of the three operands is selected.
    pub fn clamp_between(&mut self, x: Var, lo: Var, hi: Var) -> Result<Var> {
        same_shape(self, "clamp_between", x, lo)?;
        same_shape(self, "clamp_between", x, hi)?;
        let n = self.value(x).len();
        // 0 = x, 1 = lo, 2 = hi
        let mut source = vec![0u8; n];
        let mut out = vec![0.0; n];
        {
            let (xv, lv, hv) = (self.value(x).data(), self.value(lo).data(), self.value(hi).data());
            for i in 0..n {
                if xv[i] < lv[i] {
                    out[i] = lv[i];
                    source[i] = 1;
                } else if xv[i] > hv[i] {
                    out[i] = hv[i];
                    source[i] = 2;
                } else {
                    out[i] = xv[i];
                }
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        self.push("clamp_between", value, &[x, lo, hi], move || {
            move |g: &[f64], sink: &mut super::GradSink<'_>| {
                for (target, tag) in [(x, 0u8), (lo, 1), (hi, 2)] {
                    sink.accumulate(target, |gt| {
                        for i in 0..g.len() {
                            if source[i] == tag {
                                gt[i] += g[i];
                            }
                        }
                    });
                }
            }
        })
    }

    /// `y[r, c] = x[r, c] - v[r]` for `x: [R, C]`, `v: [R]`.
    pub fn sub_rows(&mut self, x: Var, v: Var) -> Result<Var> {
        let (rows, cols) = match self.shape(x) {
            [r, c] => (*r, *c),
            s => return Err(Error::shape("sub_rows", format!("x must be 2-D, got {s:?}"))),
        };
        if self.shape(v) != [rows] {
            return Err(Error::shape(
                "sub_rows",
                format!("v shape {:?}, rows {rows}", self.shape(v)),
            ));
        }
        let xv = self.value(x).data();
        let vv = self.value(v).data();
        let out: Vec<f64> = (0..rows * cols).map(|i| xv[i] - vv[i / cols]).collect();
        let value = Tensor::new(vec![rows, cols], out)?;
        self.push("sub_rows", value, &[x, v], move || {
            move |g: &[f64], sink: &mut super::GradSink<'_>| {
                sink.accumulate(x, |gx| gx.iter_mut().zip(g).for_each(|(a, b)| *a += b));
                sink.accumulate(v, |gv| {
                    for (i, gi) in g.iter().enumerate() {
                        gv[i / cols] -= gi;
                    }
                });
            }
        })
    }

    /// Broadcast product over a trailing axis: `a` has shape `S`, `b` has
    /// shape `S ++ [k]`, and `y[s, j] = a[s] * b[s, j]`.
    pub fn mul_broadcast_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sb.len() != sa.len() + 1 || sb[..sa.len()] != sa[..] {
            return Err(Error::shape("mul_broadcast_last", format!("{sa:?} vs {sb:?}")));
        }
        let k = *sb.last().unwrap();
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let out: Vec<f64> = bv
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * av.data()[i / k])
            .collect();
        let value = Tensor::new(sb, out)?;
        self.push("mul_broadcast_last", value, &[a, b], move || {
            move |g: &[f64], sink: &mut super::GradSink<'_>| {
                sink.accumulate(a, |ga| {
                    for (i, gi) in g.iter().enumerate() {
                        ga[i / k] += gi * bv.data()[i];
                    }
                });
                sink.accumulate(b, |gb| {
                    for (i, gi) in g.iter().enumerate() {
                        gb[i] += gi * av.data()[i / k];
                    }
                });
            }
        })
    }

    /// Softmax along `axis`, computed with max-subtraction.
    pub fn softmax_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::shape("softmax", format!("axis {axis} of {shape:?}")));
        }
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| xv[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..n {
                    let e = (xv[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    out[idx(j)] /= total;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        let y = value.data().to_vec();
        self.push("softmax", value, &[x], move || {
            move |g: &[f64], sink: &mut super::GradSink<'_>| {
                sink.accumulate(x, |gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| (o * n + j) * inner + i;
                            let dot: f64 = (0..n).map(|j| g[idx(j)] * y[idx(j)]).sum();
                            for j in 0..n {
                                gx[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                });
            }
        })
    }

    /// Temperature softmax over the last axis: `exp(x/tau) / sum exp(x/tau)`.
    pub fn softmax_temp(&mut self, x: Var, tau: Var) -> Result<Var> {
        let t = scalar_arg(self, "softmax_temp", tau)?;
        if t <= 0.0 {
            return Err(Error::NonPositiveTemperature(t));
        }
        let scaled = self.div_scalar(x, tau)?;
        let last = self.shape(x).len().saturating_sub(1);
        self.softmax_axis(scaled, last)
    }

    fn reduce_rows(&mut self, x: Var, op: &'static str, pick_max: bool) -> Result<Var> {
        let (rows, cols) = match self.shape(x) {
            [r, c] if *c > 0 => (*r, *c),
            s => return Err(Error::shape(op, format!("expected non-empty 2-D, got {s:?}"))),
        };
        let xv = self.value(x).data();
        let mut arg = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                let better = if pick_max { v > row[best] } else { v < row[best] };
                if better {
                    best = c;
                }
            }
            arg.push(r * cols + best);
            out.push(row[best]);
        }
        let value = Tensor::new(vec![rows], out)?;
        self.push(op, value, &[x], move || {
            move |g: &[f64], sink: &mut super::GradSink<'_>| {
                sink.accumulate(x, |gx| {
                    for (r, &i) in arg.iter().enumerate() {
                        gx[i] += g[r];
                    }
                });
            }
        })
    }

    /// Row maximum of a 2-D tensor; the gradient goes to the first maximiser.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        self.reduce_rows(x, "max_rows", true)
    }

    pub fn min_rows(&mut self, x: Var) -> Result<Var> {
        self.reduce_rows(x, "min_rows", false)
    }

    /// Sums over the leading axis.
    pub fn sum_axis0(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let Some((&lead, rest)) = shape.split_first() else {
            return Err(Error::shape("sum_axis0", "scalar input"));
        };
        let inner: usize = rest.iter().product();
        let xv = self.value(x).data();
        let mut out = vec![0.0; inner];
        for l in 0..lead {
            for (o, v) in out.iter_mut().zip(&xv[l * inner..(l + 1) * inner]) {
                *o += v;
            }
        }
        let value = Tensor::new(rest.to_vec(), out)?;
        self.push("sum_axis0", value, &[x], move || {
            move |g: &[f64], sink: &mut super::GradSink<'_>| {
                sink.accumulate(x, |gx| {
                    for (i, v) in gx.iter_mut().enumerate() {
                        *v += g[i % inner];
                    }
                });
            }
        })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total: f64 = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(total), &[x], move || {
            move |g: &[f64], sink: &mut super::GradSink<'_>| {
                sink.accumulate(x, |gx| gx.iter_mut().for_each(|v| *v += g[0]));
            }
        })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let total = self.sum(x)?;
        self.scale(total, 1.0 / n as f64)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        self.push("reshape", value, &[x], move || {
            move |g: &[f64], sink: &mut super::GradSink<'_>| {
                sink.accumulate(x, |gx| gx.iter_mut().zip(g).for_each(|(a, b)| *a += b));
            }
        })
    }

    /// Selects entry `index` of the leading axis.
    pub fn slice_axis0(&mut self, x: Var, index: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || index >= shape[0] {
            return Err(Error::shape("slice_axis0", format!("index {index} of {shape:?}")));
        }
        let inner: usize = shape[1..].iter().product();
        let start = index * inner;
        let value = Tensor::new(shape[1..].to_vec(), self.value(x).data()[start..start + inner].to_vec())?;
        self.push("slice_axis0", value, &[x], move || {
            move |g: &[f64], sink: &mut super::GradSink<'_>| {
                sink.accumulate(x, |gx| {
                    gx[start..start + inner].iter_mut().zip(g).for_each(|(a, b)| *a += b);
                });
            }
        })
    }

    /// Cosine similarity of two equal-length vectors, as a scalar.
    pub fn cosine(&mut self, u: Var, v: Var) -> Result<Var> {
        let d = match self.shape(u) {
            [d] if *d >= 1 => *d,
            s => return Err(Error::shape("cosine", format!("u must be 1-D, got {s:?}"))),
        };
        if self.shape(v) != [d] {
            return Err(Error::shape(
                "cosine",
                format!("{:?} vs {:?}", self.shape(u), self.shape(v)),
            ));
        }
        let u3 = self.reshape(u, &[1, 1, d])?;
        let v3 = self.reshape(v, &[1, 1, d])?;
        let c = self.cosine_grouped(u3, v3)?;
        self.reshape(c, &[])
    }

    /// Grouped cosine similarities: `a: [B, G, d]`, `b: [G, K, d]` gives
    /// `y[n, g, j] = cos(a[n, g], b[g, j])`.
    pub fn cosine_grouped(&mut self, a: Var, b: Var) -> Result<Var> {
        let (batch, groups, d) = match self.shape(a) {
            [n, g, d] => (*n, *g, *d),
            s => return Err(Error::shape("cosine", format!("a must be 3-D, got {s:?}"))),
        };
        let k = match self.shape(b) {
            [g, k, d2] if *g == groups && *d2 == d => *k,
            s => {
                return Err(Error::shape(
                    "cosine",
                    format!("b shape {s:?} incompatible with a [{batch}, {groups}, {d}]"),
                ))
            }
        };
        let av = self.value(a).data().to_vec();
        let bv = self.value(b).data().to_vec();
        let norm = |row: &[f64]| row.iter().map(|x| x * x).sum::<f64>().sqrt();
        let a_norms: Vec<f64> = av.chunks_exact(d.max(1)).map(norm).collect();
        let b_norms: Vec<f64> = bv.chunks_exact(d.max(1)).map(norm).collect();
        if d == 0 || a_norms.iter().chain(&b_norms).any(|&n| n < NORM_FLOOR) {
            return Err(Error::ZeroNorm { op: "cosine" });
        }
        let mut out = vec![0.0; batch * groups * k];
        for n in 0..batch {
            for g in 0..groups {
                let ai = n * groups + g;
                let arow = &av[ai * d..(ai + 1) * d];
                for j in 0..k {
                    let bi = g * k + j;
                    let brow = &bv[bi * d..(bi + 1) * d];
                    let dot: f64 = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    out[(n * groups + g) * k + j] = dot / (a_norms[ai] * b_norms[bi]);
                }
            }
        }
        let value = Tensor::new(vec![batch, groups, k], out)?;
        let cos = value.data().to_vec();
        self.push("cosine", value, &[a, b], move || {
            move |g: &[f64], sink: &mut super::GradSink<'_>| {
                sink.accumulate(a, |ga| {
                    for n in 0..batch {
                        for gr in 0..groups {
                            let ai = n * groups + gr;
                            let na = a_norms[ai];
                            for j in 0..k {
                                let oi = ai * k + j;
                                let bi = gr * k + j;
                                let nb = b_norms[bi];
                                let (go, c) = (g[oi], cos[oi]);
                                for t in 0..d {
                                    ga[ai * d + t] +=
                                        go * (bv[bi * d + t] / (na * nb) - c * av[ai * d + t] / (na * na));
                                }
                            }
                        }
                    }
                });
                sink.accumulate(b, |gb| {
                    for n in 0..batch {
                        for gr in 0..groups {
                            let ai = n * groups + gr;
                            let na = a_norms[ai];
                            for j in 0..k {
                                let oi = ai * k + j;
                                let bi = gr * k + j;
                                let nb = b_norms[bi];
                                let (go, c) = (g[oi], cos[oi]);
                                for t in 0..d {
                                    gb[bi * d + t] +=
                                        go * (av[ai * d + t] / (na * nb) - c * bv[bi * d + t] / (nb * nb));
                                }
                            }
                        }
                    }
                });
            }
        })
    }

    /// Mean over contiguous segments of the middle axis: `x: [B, N, d]` and
    /// boundaries `0 = b_0 <= ... <= b_m = N` give `[B, m, d]`.
    pub fn segment_mean(&mut self, x: Var, bounds: &[usize]) -> Result<Var> {
        let (batch, tokens, d) = match self.shape(x) {
            [b, n, d] => (*b, *n, *d),
            s => return Err(Error::shape("segment_mean", format!("x must be 3-D, got {s:?}"))),
        };
        let valid = bounds.len() >= 2
            && bounds[0] == 0
            && *bounds.last().unwrap() == tokens
            && bounds.windows(2).all(|w| w[0] < w[1]);
        if !valid {
            return Err(Error::shape(
                "segment_mean",
                format!("bounds {bounds:?} do not partition {tokens} tokens into non-empty segments"),
            ));
        }
        let segments = bounds.len() - 1;
        let xv = self.value(x).data();
        let mut out = vec![0.0; batch * segments * d];
        for n in 0..batch {
            for s in 0..segments {
                let count = (bounds[s + 1] - bounds[s]) as f64;
                let dst = &mut out[(n * segments + s) * d..(n * segments + s + 1) * d];
                for t in bounds[s]..bounds[s + 1] {
                    let src = &xv[(n * tokens + t) * d..(n * tokens + t + 1) * d];
                    dst.iter_mut().zip(src).for_each(|(o, v)| *o += v);
                }
                dst.iter_mut().for_each(|o| *o /= count);
            }
        }
        let value = Tensor::new(vec![batch, segments, d], out)?;
        let bounds = bounds.to_vec();
        self.push("segment_mean", value, &[x], move || {
            move |g: &[f64], sink: &mut super::GradSink<'_>| {
                sink.accumulate(x, |gx| {
                    for n in 0..batch {
                        for s in 0..segments {
                            let count = (bounds[s + 1] - bounds[s]) as f64;
                            let src = &g[(n * segments + s) * d..(n * segments + s + 1) * d];
                            for t in bounds[s]..bounds[s + 1] {
                                let dst = &mut gx[(n * tokens + t) * d..(n * tokens + t + 1) * d];
                                dst.iter_mut().zip(src).for_each(|(o, v)| *o += v / count);
                            }
                        }
                    }
                });
            }
        })
    }

    /// `W x + b` for `W: [o, n]`, `x: [n]`, `b: [o]`.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let (o, n) = match self.shape(w) {
            [o, n] => (*o, *n),
            s => return Err(Error::shape("affine", format!("W must be 2-D, got {s:?}"))),
        };
        if self.shape(x) != [n] || self.shape(b) != [o] {
            return Err(Error::shape(
                "affine",
                format!("W [{o}, {n}], x {:?}, b {:?}", self.shape(x), self.shape(b)),
            ));
        }
        let wv = self.value(w).data().to_vec();
        let xv = self.value(x).data().to_vec();
        let bv = self.value(b).data();
        let out: Vec<f64> = (0..o)
            .map(|r| bv[r] + wv[r * n..(r + 1) * n].iter().zip(&xv).map(|(a, c)| a * c).sum::<f64>())
            .collect();
        let value = Tensor::new(vec![o], out)?;
        self.push("affine", value, &[w, x, b], move || {
            move |g: &[f64], sink: &mut super::GradSink<'_>| {
                sink.accumulate(w, |gw| {
                    for r in 0..o {
                        for c in 0..n {
                            gw[r * n + c] += g[r] * xv[c];
                        }
                    }
                });
                sink.accumulate(x, |gx| {
                    for r in 0..o {
                        for c in 0..n {
                            gx[c] += g[r] * wv[r * n + c];
                        }
                    }
                });
                sink.accumulate(b, |gb| gb.iter_mut().zip(g).for_each(|(a, v)| *a += v));
            }
        })
    }

    /// Softmax cross-entropy of one logit vector against a class index.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let c = match self.shape(logits) {
            [c] => *c,
            s => return Err(Error::shape("cross_entropy", format!("logits must be 1-D, got {s:?}"))),
        };
        let as_rows = self.reshape(logits, &[1, c])?;
        let per_row = self.cross_entropy_rows(as_rows, &[label])?;
        self.reshape(per_row, &[])
    }

    /// Row-wise softmax cross-entropy: `logits: [R, C]`, one label per row.
    pub fn cross_entropy_rows(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (rows, classes) = match self.shape(logits) {
            [r, c] if *c > 0 => (*r, *c),
            s => {
                return Err(Error::shape(
                    "cross_entropy",
                    format!("logits must be [R, C], got {s:?}"),
                ))
            }
        };
        if labels.len() != rows {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} labels for {rows} rows", labels.len()),
            ));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let xv = self.value(logits).data();
        let mut probs = vec![0.0; rows * classes];
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xv[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + total.ln();
            for c in 0..classes {
                probs[r * classes + c] = (row[c] - log_z).exp();
            }
            out.push(log_z - row[labels[r]]);
        }
        let value = Tensor::new(vec![rows], out)?;
        let labels = labels.to_vec();
        self.push("cross_entropy", value, &[logits], move || {
            move |g: &[f64], sink: &mut super::GradSink<'_>| {
                sink.accumulate(logits, |gl| {
                    for r in 0..rows {
                        for c in 0..classes {
                            let target = if c == labels[r] { 1.0 } else { 0.0 };
                            gl[r * classes + c] += g[r] * (probs[r * classes + c] - target);
                        }
                    }
                });
            }
        })
    }
}
