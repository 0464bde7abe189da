//! Layer kernels over `(batch, channels, time, height, width)` tensors.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array4, Array5, ArrayView1, ArrayView2, ArrayView4, ArrayView5, Axis, Zip};
use rayon::prelude::*;

use super::{Geometry, LrnParams, Real};

fn out_dims(g: &Geometry, dims: [usize; 3]) -> [usize; 3] {
    g.output(dims)
}

/// Unfolds one sample `(C, T, H, W)` into a `(C*kt*kh*kw, To*Ho*Wo)` matrix.
pub(crate) fn im2col<A: Real>(x: ArrayView4<A>, g: &Geometry) -> Array2<A> {
    let (c_in, t_in, h_in, w_in) = x.dim();
    let [to, ho, wo] = out_dims(g, [t_in, h_in, w_in]);
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.pad;
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let p = to * ho * wo;
    let mut cols = Array2::<A>::zeros((c_in * kt * kh * kw, p));
    let cs = cols.as_slice_mut().expect("fresh array");
    let mut r = 0;
    for c in 0..c_in {
        for dt in 0..kt {
            for dy in 0..kh {
                for dx in 0..kw {
                    let row = &mut cs[r * p..(r + 1) * p];
                    r += 1;
                    for ot in 0..to {
                        let it = (ot * st + dt) as isize - pt as isize;
                        if it < 0 || it >= t_in as isize {
                            continue;
                        }
                        for oy in 0..ho {
                            let iy = (oy * sh + dy) as isize - ph as isize;
                            if iy < 0 || iy >= h_in as isize {
                                continue;
                            }
                            let base = ((c * t_in + it as usize) * h_in + iy as usize) * w_in;
                            let dst = &mut row[(ot * ho + oy) * wo..(ot * ho + oy + 1) * wo];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * sw + dx) as isize - pw as isize;
                                if ix >= 0 && ix < w_in as isize {
                                    *d = xs[base + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto a sample.
pub(crate) fn col2im<A: Real>(cols: ArrayView2<A>, g: &Geometry, dims: [usize; 4]) -> Array4<A> {
    let [c_in, t_in, h_in, w_in] = dims;
    let [to, ho, wo] = out_dims(g, [t_in, h_in, w_in]);
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.pad;
    let p = to * ho * wo;
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().expect("standard layout");
    let mut x = Array4::<A>::zeros((c_in, t_in, h_in, w_in));
    let xs = x.as_slice_mut().expect("fresh array");
    let mut r = 0;
    for c in 0..c_in {
        for dt in 0..kt {
            for dy in 0..kh {
                for dx in 0..kw {
                    let row = &cs[r * p..(r + 1) * p];
                    r += 1;
                    for ot in 0..to {
                        let it = (ot * st + dt) as isize - pt as isize;
                        if it < 0 || it >= t_in as isize {
                            continue;
                        }
                        for oy in 0..ho {
                            let iy = (oy * sh + dy) as isize - ph as isize;
                            if iy < 0 || iy >= h_in as isize {
                                continue;
                            }
                            let base = ((c * t_in + it as usize) * h_in + iy as usize) * w_in;
                            let src = &row[(ot * ho + oy) * wo..(ot * ho + oy + 1) * wo];
                            for (ox, &v) in src.iter().enumerate() {
                                let ix = (ox * sw + dx) as isize - pw as isize;
                                if ix >= 0 && ix < w_in as isize {
                                    xs[base + ix as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `w` is `(filters, C*kt*kh*kw)`.
pub(crate) fn conv_forward<A: Real>(x: ArrayView5<A>, w: ArrayView2<A>, b: ArrayView1<A>, g: &Geometry) -> Array5<A> {
    let (n, _, t, h, wd) = x.dim();
    let [to, ho, wo] = out_dims(g, [t, h, wd]);
    let f = w.nrows();
    let mut y = Array5::<A>::zeros((n, f, to, ho, wo));
    Zip::from(y.outer_iter_mut()).and(x.outer_iter()).par_for_each(|mut ys, xs| {
        let cols = im2col(xs, g);
        let mut out = ys.view_mut().into_shape_with_order((f, to * ho * wo)).expect("contiguous");
        for (mut row, &bias) in out.outer_iter_mut().zip(b.iter()) {
            row.fill(bias);
        }
        general_mat_mul(A::one(), &w, &cols, A::one(), &mut out);
    });
    y
}

pub(crate) struct ConvGrads<A> {
    pub dw: Array2<A>,
    pub db: Array1<A>,
    pub dx: Option<Array5<A>>,
}

pub(crate) fn conv_backward<A: Real>(
    x: ArrayView5<A>,
    w: ArrayView2<A>,
    dy: ArrayView5<A>,
    g: &Geometry,
    need_dx: bool,
) -> ConvGrads<A> {
    let (n, c, t, h, wd) = x.dim();
    let (_, f, to, ho, wo) = dy.dim();
    let p = to * ho * wo;
    let per_sample: Vec<(Array2<A>, Array1<A>, Option<Array4<A>>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let cols = im2col(x.index_axis(Axis(0), i), g);
            let dys = dy.index_axis(Axis(0), i);
            let dys = dys.as_standard_layout();
            let d = dys.view().into_shape_with_order((f, p)).expect("contiguous");
            let mut dw = Array2::<A>::zeros(w.raw_dim());
            general_mat_mul(A::one(), &d, &cols.t(), A::zero(), &mut dw);
            let db = d.sum_axis(Axis(1));
            let dx = need_dx.then(|| {
                let mut dcols = Array2::<A>::zeros(cols.raw_dim());
                general_mat_mul(A::one(), &w.t(), &d, A::zero(), &mut dcols);
                col2im(dcols.view(), g, [c, t, h, wd])
            });
            (dw, db, dx)
        })
        .collect();
    let mut dw = Array2::<A>::zeros(w.raw_dim());
    let mut db = Array1::<A>::zeros(f);
    let mut dx = need_dx.then(|| Array5::<A>::zeros((n, c, t, h, wd)));
    for (i, (sdw, sdb, sdx)) in per_sample.into_iter().enumerate() {
        dw += &sdw;
        db += &sdb;
        if let (Some(dx), Some(sdx)) = (dx.as_mut(), sdx) {
            dx.index_axis_mut(Axis(0), i).assign(&sdx);
        }
    }
    ConvGrads { dw, db, dx }
}

/// Max pooling without padding; returns outputs and flat argmax offsets
/// within each `(T, H, W)` channel volume.
pub(crate) fn pool_forward<A: Real>(x: ArrayView5<A>, g: &Geometry) -> (Array5<A>, Array5<u32>) {
    let (n, c, t, h, w) = x.dim();
    let [to, ho, wo] = out_dims(g, [t, h, w]);
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let x = x.as_standard_layout();
    let mut y = Array5::<A>::zeros((n, c, to, ho, wo));
    let mut arg = Array5::<u32>::zeros((n, c, to, ho, wo));
    let vol = t * h * w;
    let xs = x.as_slice().expect("standard layout");
    let ys = y.as_slice_mut().expect("fresh");
    let args = arg.as_slice_mut().expect("fresh");
    let out_vol = to * ho * wo;
    ys.par_chunks_mut(out_vol)
        .zip(args.par_chunks_mut(out_vol))
        .enumerate()
        .for_each(|(nc, (yc, ac))| {
            let src = &xs[nc * vol..(nc + 1) * vol];
            let mut o = 0;
            for ot in 0..to {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut best = A::neg_infinity();
                        let mut best_i = 0usize;
                        for dt in 0..kt {
                            for dy in 0..kh {
                                let row = ((ot * st + dt) * h + oy * sh + dy) * w + ox * sw;
                                for dx in 0..kw {
                                    let v = src[row + dx];
                                    if v > best {
                                        best = v;
                                        best_i = row + dx;
                                    }
                                }
                            }
                        }
                        yc[o] = best;
                        ac[o] = best_i as u32;
                        o += 1;
                    }
                }
            }
        });
    (y, arg)
}

pub(crate) fn pool_backward<A: Real>(dy: ArrayView5<A>, arg: &Array5<u32>, in_dims: [usize; 5]) -> Array5<A> {
    let [n, c, t, h, w] = in_dims;
    let vol = t * h * w;
    let mut dx = Array5::<A>::zeros((n, c, t, h, w));
    let dy = dy.as_standard_layout();
    let dys = dy.as_slice().expect("standard layout");
    let args = arg.as_slice().expect("standard layout");
    let out_vol = dys.len() / (n * c).max(1);
    dx.as_slice_mut()
        .expect("fresh")
        .par_chunks_mut(vol)
        .enumerate()
        .for_each(|(nc, dst)| {
            for o in nc * out_vol..(nc + 1) * out_vol {
                dst[args[o] as usize] += dys[o];
            }
        });
    dx
}

/// Cached quantities of a training-mode batch normalization.
pub(crate) struct BnCache<A> {
    pub xhat: Array5<A>,
    pub inv_std: Array1<A>,
    pub mean: Array1<A>,
    pub var: Array1<A>,
}

fn channel_sums<A: Real>(x: &ArrayView5<A>, f: impl Fn(A, usize) -> f64 + Sync) -> Vec<f64> {
    (0..x.dim().1)
        .into_par_iter()
        .map(|c| x.index_axis(Axis(1), c).iter().map(|&v| f(v, c)).sum())
        .collect()
}

pub(crate) fn bn_forward_train<A: Real>(
    x: ArrayView5<A>,
    gamma: ArrayView1<A>,
    beta: ArrayView1<A>,
    eps: f64,
) -> (Array5<A>, BnCache<A>) {
    let (n, c, t, h, w) = x.dim();
    let m = (n * t * h * w) as f64;
    let mean: Vec<f64> = channel_sums(&x, |v, _| v.as_f64()).into_iter().map(|s| s / m).collect();
    let var: Vec<f64> = channel_sums(&x, |v, c| (v.as_f64() - mean[c]).powi(2))
        .into_iter()
        .map(|s| s / m)
        .collect();
    let inv_std: Array1<A> = var.iter().map(|&v| A::of(1.0 / (v + eps).sqrt())).collect();
    let mut xhat = Array5::<A>::zeros((n, c, t, h, w));
    let mut y = Array5::<A>::zeros((n, c, t, h, w));
    for ch in 0..c {
        let mu = A::of(mean[ch]);
        let is = inv_std[ch];
        let (g, b) = (gamma[ch], beta[ch]);
        Zip::from(xhat.index_axis_mut(Axis(1), ch))
            .and(y.index_axis_mut(Axis(1), ch))
            .and(x.index_axis(Axis(1), ch))
            .for_each(|xh, yv, &xv| {
                *xh = (xv - mu) * is;
                *yv = g * *xh + b;
            });
    }
    let cache = BnCache {
        xhat,
        inv_std,
        mean: mean.iter().map(|&v| A::of(v)).collect(),
        var: var.iter().map(|&v| A::of(v)).collect(),
    };
    (y, cache)
}

pub(crate) fn bn_forward_eval<A: Real>(
    mut y: Array5<A>,
    gamma: ArrayView1<A>,
    beta: ArrayView1<A>,
    mean: ArrayView1<A>,
    var: ArrayView1<A>,
    eps: f64,
) -> Array5<A> {
    for ch in 0..y.dim().1 {
        let scale = gamma[ch] / (var[ch] + A::of(eps)).sqrt();
        let shift = beta[ch] - mean[ch] * scale;
        y.index_axis_mut(Axis(1), ch).mapv_inplace(|v| v * scale + shift);
    }
    y
}

pub(crate) fn bn_backward<A: Real>(
    dy: ArrayView5<A>,
    cache: &BnCache<A>,
    gamma: ArrayView1<A>,
) -> (Array5<A>, Array1<A>, Array1<A>) {
    let (n, c, t, h, w) = dy.dim();
    let m = (n * t * h * w) as f64;
    let mut dx = Array5::<A>::zeros(dy.raw_dim());
    let mut dgamma = Array1::<A>::zeros(c);
    let mut dbeta = Array1::<A>::zeros(c);
    for ch in 0..c {
        let dyc = dy.index_axis(Axis(1), ch);
        let xh = cache.xhat.index_axis(Axis(1), ch);
        let mut sum_dy = 0.0;
        let mut sum_dy_xh = 0.0;
        Zip::from(&dyc).and(&xh).for_each(|&d, &x| {
            sum_dy += d.as_f64();
            sum_dy_xh += (d * x).as_f64();
        });
        dgamma[ch] = A::of(sum_dy_xh);
        dbeta[ch] = A::of(sum_dy);
        let g = gamma[ch].as_f64();
        let k = A::of(g * cache.inv_std[ch].as_f64() / m);
        let (mean_dy, mean_dy_xh) = (A::of(sum_dy), A::of(sum_dy_xh));
        let mf = A::of(m);
        Zip::from(dx.index_axis_mut(Axis(1), ch))
            .and(&dyc)
            .and(&xh)
            .for_each(|o, &d, &x| *o = k * (mf * d - mean_dy - x * mean_dy_xh));
    }
    (dx, dgamma, dbeta)
}

/// Cross-channel local response normalization; returns outputs and the
/// per-element denominators before exponentiation.
pub(crate) fn lrn_forward<A: Real>(x: ArrayView5<A>, p: &LrnParams) -> (Array5<A>, Array5<A>) {
    let (_, c, ..) = x.dim();
    let half = p.size / 2;
    let coef = A::of(p.alpha / p.size as f64);
    let mut scale = Array5::<A>::from_elem(x.raw_dim(), A::of(p.k));
    for ch in 0..c {
        let lo = ch.saturating_sub(half);
        let hi = (ch + half).min(c - 1);
        let mut s = scale.index_axis_mut(Axis(1), ch);
        for other in lo..=hi {
            Zip::from(&mut s)
                .and(x.index_axis(Axis(1), other))
                .for_each(|s, &v| *s += coef * v * v);
        }
    }
    let beta = A::of(p.beta);
    let mut y = x.to_owned();
    Zip::from(&mut y).and(&scale).for_each(|y, &s| *y = *y * s.powf(-beta));
    (y, scale)
}

pub(crate) fn lrn_backward<A: Real>(x: ArrayView5<A>, dy: ArrayView5<A>, scale: &Array5<A>, p: &LrnParams) -> Array5<A> {
    let (_, c, ..) = x.dim();
    let half = p.size / 2;
    let beta = A::of(p.beta);
    let coef = A::of(2.0 * p.alpha * p.beta / p.size as f64);
    // r = dy * x * scale^(-beta - 1)
    let mut r = Array5::<A>::zeros(x.raw_dim());
    Zip::from(&mut r)
        .and(&dy)
        .and(&x)
        .and(scale)
        .for_each(|r, &d, &v, &s| *r = d * v * s.powf(-beta - A::one()));
    let mut dx = Array5::<A>::zeros(x.raw_dim());
    Zip::from(&mut dx)
        .and(&dy)
        .and(scale)
        .for_each(|o, &d, &s| *o = d * s.powf(-beta));
    for ch in 0..c {
        let lo = ch.saturating_sub(half);
        let hi = (ch + half).min(c - 1);
        let mut acc = Array4::<A>::zeros(r.index_axis(Axis(1), ch).raw_dim());
        for other in lo..=hi {
            acc += &r.index_axis(Axis(1), other);
        }
        Zip::from(dx.index_axis_mut(Axis(1), ch))
            .and(x.index_axis(Axis(1), ch))
            .and(&acc)
            .for_each(|o, &v, &a| *o = *o - coef * v * a);
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    /// Direct nested-loop convolution used as an oracle.
    fn naive_conv(x: &Array5<f64>, w: &Array2<f64>, b: &Array1<f64>, g: &Geometry) -> Array5<f64> {
        let (n, c, t, h, wd) = x.dim();
        let [to, ho, wo] = g.output([t, h, wd]);
        let f = w.nrows();
        let [kt, kh, kw] = g.kernel;
        let mut y = Array5::zeros((n, f, to, ho, wo));
        for ((i, fi, ot, oy, ox), v) in y.indexed_iter_mut() {
            let mut s = b[fi];
            for ci in 0..c {
                for dt in 0..kt {
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let it = (ot * g.stride[0] + dt) as isize - g.pad[0] as isize;
                            let iy = (oy * g.stride[1] + dy) as isize - g.pad[1] as isize;
                            let ix = (ox * g.stride[2] + dx) as isize - g.pad[2] as isize;
                            if it < 0 || iy < 0 || ix < 0 || it >= t as isize || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            let wi = ((ci * kt + dt) * kh + dy) * kw + dx;
                            s += w[[fi, wi]] * x[[i, ci, it as usize, iy as usize, ix as usize]];
                        }
                    }
                }
            }
            *v = s;
        }
        y
    }

    fn ramp5(shape: (usize, usize, usize, usize, usize)) -> Array5<f64> {
        let len = shape.0 * shape.1 * shape.2 * shape.3 * shape.4;
        Array::from_iter((0..len).map(|i| ((i * 37 % 101) as f64 - 50.0) / 25.0))
            .into_shape_with_order(shape)
            .unwrap()
    }

    #[test]
    fn conv_matches_naive_loops() {
        let g = Geometry::new([3, 3, 3], [1, 2, 2], [1, 2, 1]);
        let x = ramp5((2, 3, 5, 9, 8));
        let w = Array2::from_shape_fn((4, 81), |(i, j)| ((i * 81 + j) % 13) as f64 / 13.0 - 0.5);
        let b = Array1::from_vec(vec![0.1, -0.2, 0.3, 0.0]);
        let fast = conv_forward(x.view(), w.view(), b.view(), &g);
        let slow = naive_conv(&x, &w, &b, &g);
        assert_eq!(fast.dim(), slow.dim());
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)> for any x and c.
        let g = Geometry::new([3, 3, 3], [1, 2, 2], [1, 1, 2]);
        let x = ramp5((1, 2, 4, 7, 6)).index_axis_move(Axis(0), 0);
        let cols = im2col(x.view(), &g);
        let c = Array2::from_shape_fn(cols.raw_dim(), |(i, j)| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let lhs: f64 = (&cols * &c).sum();
        let back = col2im(c.view(), &g, [2, 4, 7, 6]);
        let rhs: f64 = (&x * &back).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn pool_picks_maxima() {
        let g = Geometry::new([3, 2, 2], [1, 2, 2], [0, 0, 0]);
        let x = ramp5((1, 2, 4, 4, 4));
        let (y, arg) = pool_forward(x.view(), &g);
        assert_eq!(y.dim(), (1, 2, 2, 2, 2));
        for ((i, c, t, yy, xx), &v) in y.indexed_iter() {
            let mut best = f64::NEG_INFINITY;
            for dt in 0..3 {
                for dy in 0..2 {
                    for dx in 0..2 {
                        best = best.max(x[[i, c, t + dt, yy * 2 + dy, xx * 2 + dx]]);
                    }
                }
            }
            assert_eq!(v, best);
        }
        let dx = pool_backward(Array5::<f64>::ones(y.raw_dim()).view(), &arg, [1, 2, 4, 4, 4]);
        assert_eq!(dx.sum(), y.len() as f64);
    }

    #[test]
    fn batch_norm_normalizes() {
        let x = ramp5((3, 2, 2, 3, 3));
        let gamma = Array1::from_vec(vec![1.0, 2.0]);
        let beta = Array1::from_vec(vec![0.0, 1.0]);
        let (y, cache) = bn_forward_train(x.view(), gamma.view(), beta.view(), 1e-5);
        let c0 = y.index_axis(Axis(1), 0);
        assert!(c0.mean().unwrap().abs() < 1e-10);
        assert!((c0.mapv(|v| v * v).mean().unwrap() - 1.0).abs() < 1e-3);
        let eval = bn_forward_eval(x.clone(), gamma.view(), beta.view(), cache.mean.view(), cache.var.view(), 1e-5);
        for (a, b) in y.iter().zip(eval.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn lrn_with_zero_alpha_is_identity() {
        let x = ramp5((1, 6, 2, 2, 2));
        let p = LrnParams { alpha: 0.0, ..LrnParams::default() };
        let (y, _) = lrn_forward(x.view(), &p);
        assert_eq!(y, x);
    }
}
