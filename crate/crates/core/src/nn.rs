//! Network building blocks with explicit forward and backward passes.
//!
//! Convolutions run as im2col plus GEMM over fixed-size example chunks (see
//! [`crate::parallel`]); everything is generic over [`Real`] so the same
//! layer code trains in `f32` and gradient-checks in `f64`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayViewMut2};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::parallel::{self, EXAMPLES_PER_CHUNK};
use crate::params::ParamStore;

/// Scalar type the numeric stack is generic over.
pub trait Real:
    ndarray::LinalgScalar
    + num_traits::Float
    + num_traits::FromPrimitive
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

// ---------------------------------------------------------------------------
// im2col / col2im
// ---------------------------------------------------------------------------

/// Expands one image (`c_in * h * w`, NCHW slice) into the patch matrix
/// `col[k_index, out_pos]`. Every element of `col` is written.
#[allow(clippy::too_many_arguments)]
fn im2col<F: Real>(
    x: &[F],
    col: &mut [F],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) {
    let l = ho * wo;
    for cin in 0..c_in {
        let plane = &x[cin * h * w..(cin + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut col[(cin * k * k + ki * k + kj) * l..][..l];
                for oh in 0..ho {
                    let ih = (oh * stride + ki) as isize - pad as isize;
                    let seg = &mut row[oh * wo..(oh + 1) * wo];
                    if ih < 0 || ih >= h as isize {
                        seg.fill(F::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * w..(ih as usize + 1) * w];
                    if stride == 1 {
                        // iw = ow + kj - pad stays contiguous: one slice copy.
                        let shift = kj as isize - pad as isize;
                        let start = (-shift).max(0) as usize;
                        let end = ((w as isize - shift).min(wo as isize)).max(0) as usize;
                        seg[..start.min(wo)].fill(F::zero());
                        if end > start {
                            seg[start..end]
                                .copy_from_slice(&src[(start as isize + shift) as usize..][..end - start]);
                        }
                        seg[end.max(start)..].fill(F::zero());
                    } else {
                        for (ow, v) in seg.iter_mut().enumerate() {
                            let iw = (ow * stride + kj) as isize - pad as isize;
                            *v = if iw < 0 || iw >= w as isize {
                                F::zero()
                            } else {
                                src[iw as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds the patch matrix gradient back onto the image gradient.
#[allow(clippy::too_many_arguments)]
fn col2im_add<F: Real>(
    dcol: &[F],
    dx: &mut [F],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) {
    let l = ho * wo;
    for cin in 0..c_in {
        let plane = &mut dx[cin * h * w..(cin + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &dcol[(cin * k * k + ki * k + kj) * l..][..l];
                for oh in 0..ho {
                    let ih = (oh * stride + ki) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * w..(ih as usize + 1) * w];
                    let seg = &row[oh * wo..(oh + 1) * wo];
                    for (ow, &v) in seg.iter().enumerate() {
                        let iw = (ow * stride + kj) as isize - pad as isize;
                        if iw >= 0 && iw < w as isize {
                            dst[iw as usize] = dst[iw as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

/// Bias-free 2-D convolution, square kernel, zero padding.
pub struct Conv2d {
    pub w: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// He-normal initialization (fan-out mode), deterministic in `rng`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let std = (2.0 / (k * k * c_out) as f64).sqrt();
        let dist = Normal::new(0.0, std).unwrap();
        let mut value = ndarray::ArrayD::<F>::zeros(vec![c_out, c_in, k, k]);
        for v in value.iter_mut() {
            *v = F::from_f64(dist.sample(rng));
        }
        let w = store.register(format!("{name}.w"), value, true, true);
        Conv2d {
            w,
            c_in,
            c_out,
            k,
            stride,
            pad,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn weight_mat<'a, F: Real>(&self, store: &'a ParamStore<F>) -> ArrayView2<'a, F> {
        store
            .entry(self.w)
            .value
            .view()
            .into_shape_with_order((self.c_out, self.c_in * self.k * self.k))
            .unwrap()
    }

    pub fn forward<F: Real>(&self, store: &ParamStore<F>, x: &Array4<F>) -> Array4<F> {
        let (n, c_in, h, w) = x.dim();
        assert_eq!(c_in, self.c_in, "conv input channels");
        let (ho, wo) = self.out_hw(h, w);
        let l = ho * wo;
        let kdim = self.c_in * self.k * self.k;
        let mut y = Array4::<F>::zeros((n, self.c_out, ho, wo));
        let w2 = self.weight_mat(store);
        let xs = x.as_slice().unwrap();
        let in_stride = c_in * h * w;
        let out_stride = self.c_out * l;
        let ys = y.as_slice_mut().unwrap();
        parallel::map_chunks_mut(ys, EXAMPLES_PER_CHUNK * out_stride, |ci, slab| {
            let base = ci * EXAMPLES_PER_CHUNK;
            let mut col = Array2::<F>::zeros((kdim, l));
            for (e, y_slab) in slab.chunks_mut(out_stride).enumerate() {
                let xe = &xs[(base + e) * in_stride..][..in_stride];
                im2col(
                    xe,
                    col.as_slice_mut().unwrap(),
                    c_in,
                    h,
                    w,
                    self.k,
                    self.stride,
                    self.pad,
                    ho,
                    wo,
                );
                let mut y_n = ArrayViewMut2::from_shape((self.c_out, l), y_slab).unwrap();
                general_mat_mul(F::one(), &w2, &col.view(), F::zero(), &mut y_n);
            }
        });
        y
    }

    /// Returns the input gradient and accumulates the weight gradient.
    pub fn backward<F: Real>(
        &self,
        store: &mut ParamStore<F>,
        x: &Array4<F>,
        dy: &Array4<F>,
    ) -> Array4<F> {
        let (n, c_in, h, w) = x.dim();
        let (ho, wo) = self.out_hw(h, w);
        let l = ho * wo;
        let kdim = self.c_in * self.k * self.k;
        let mut dx = Array4::<F>::zeros((n, c_in, h, w));
        let w2 = self
            .weight_mat(store)
            .to_owned();
        let xs = x.as_slice().unwrap();
        let dys = dy.as_slice().unwrap();
        let in_stride = c_in * h * w;
        let out_stride = self.c_out * l;
        let dxs = dx.as_slice_mut().unwrap();
        let partials = parallel::map_chunks_mut(dxs, EXAMPLES_PER_CHUNK * in_stride, |ci, slab| {
            let base = ci * EXAMPLES_PER_CHUNK;
            let mut col = Array2::<F>::zeros((kdim, l));
            let mut dcol = Array2::<F>::zeros((kdim, l));
            let mut dw = Array2::<F>::zeros((self.c_out, kdim));
            for (e, dx_slab) in slab.chunks_mut(in_stride).enumerate() {
                let idx = base + e;
                let dy_n =
                    ArrayView2::from_shape((self.c_out, l), &dys[idx * out_stride..][..out_stride])
                        .unwrap();
                general_mat_mul(F::one(), &w2.t(), &dy_n, F::zero(), &mut dcol.view_mut());
                col2im_add(
                    dcol.as_slice().unwrap(),
                    dx_slab,
                    c_in,
                    h,
                    w,
                    self.k,
                    self.stride,
                    self.pad,
                    ho,
                    wo,
                );
                im2col(
                    &xs[idx * in_stride..][..in_stride],
                    col.as_slice_mut().unwrap(),
                    c_in,
                    h,
                    w,
                    self.k,
                    self.stride,
                    self.pad,
                    ho,
                    wo,
                );
                general_mat_mul(F::one(), &dy_n, &col.t(), F::one(), &mut dw.view_mut());
            }
            dw
        });
        let entry = store.entry_mut(self.w);
        let mut grad = entry
            .grad
            .view_mut()
            .into_shape_with_order((self.c_out, kdim))
            .unwrap();
        for p in partials {
            grad += &p;
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// BatchNorm2d
// ---------------------------------------------------------------------------

pub struct BatchNorm2d {
    pub g: usize,
    pub b: usize,
    pub rm: usize,
    pub rv: usize,
    pub c: usize,
    pub eps: f64,
    pub momentum: f64,
}

pub struct BnCache<F> {
    pub mean: Array1<F>,
    pub invstd: Array1<F>,
}

impl BatchNorm2d {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, c: usize) -> Self {
        let g = store.register(
            format!("{name}.gamma"),
            ndarray::ArrayD::from_elem(vec![c], F::one()),
            true,
            true,
        );
        let b = store.register(
            format!("{name}.beta"),
            ndarray::ArrayD::zeros(vec![c]),
            true,
            true,
        );
        let rm = store.register(
            format!("{name}.running_mean"),
            ndarray::ArrayD::zeros(vec![c]),
            false,
            false,
        );
        let rv = store.register(
            format!("{name}.running_var"),
            ndarray::ArrayD::from_elem(vec![c], F::one()),
            false,
            false,
        );
        BatchNorm2d {
            g,
            b,
            rm,
            rv,
            c,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward_train<F: Real>(
        &self,
        store: &mut ParamStore<F>,
        x: &Array4<F>,
    ) -> (Array4<F>, BnCache<F>) {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.c, "bn channels");
        let l = h * w;
        let count = n * l;
        let mut mean = Array1::<F>::zeros(c);
        let mut invstd = Array1::<F>::zeros(c);
        let mut var_b = Array1::<F>::zeros(c);
        let xs = x.as_slice().unwrap();
        for ch in 0..c {
            let mut s = F::zero();
            for ni in 0..n {
                let plane = &xs[(ni * c + ch) * l..][..l];
                s = s + plane.iter().copied().sum::<F>();
            }
            let m = s / F::from_usize(count.max(1)).unwrap();
            let mut v = F::zero();
            for ni in 0..n {
                let plane = &xs[(ni * c + ch) * l..][..l];
                v = v + plane.iter().map(|&e| (e - m) * (e - m)).sum::<F>();
            }
            let v = v / F::from_usize(count.max(1)).unwrap();
            mean[ch] = m;
            var_b[ch] = v;
            invstd[ch] = F::one() / (v + F::from_f64(self.eps)).sqrt();
        }
        let mut y = Array4::<F>::zeros((n, c, h, w));
        {
            let gamma = store.entry(self.g).value.clone();
            let beta = store.entry(self.b).value.clone();
            let ys = y.as_slice_mut().unwrap();
            for ni in 0..n {
                for ch in 0..c {
                    let m = mean[ch];
                    let is = invstd[ch];
                    let ga = gamma[ch];
                    let be = beta[ch];
                    let src = &xs[(ni * c + ch) * l..][..l];
                    let dst = &mut ys[(ni * c + ch) * l..][..l];
                    for (d, &s) in dst.iter_mut().zip(src.iter()) {
                        *d = ga * (s - m) * is + be;
                    }
                }
            }
        }
        if count > 0 {
            let unbias = if count > 1 {
                F::from_usize(count).unwrap() / F::from_usize(count - 1).unwrap()
            } else {
                F::one()
            };
            let mom = F::from_f64(self.momentum);
            let one_m = F::one() - mom;
            let rm = &mut store.entry_mut(self.rm).value;
            for (r, &m) in rm.iter_mut().zip(mean.iter()) {
                *r = one_m * *r + mom * m;
            }
            let rv = &mut store.entry_mut(self.rv).value;
            for (r, &v) in rv.iter_mut().zip(var_b.iter()) {
                *r = one_m * *r + mom * v * unbias;
            }
        }
        (y, BnCache { mean, invstd })
    }

    pub fn forward_eval<F: Real>(&self, store: &ParamStore<F>, x: &Array4<F>) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        let l = h * w;
        let gamma = &store.entry(self.g).value;
        let beta = &store.entry(self.b).value;
        let rm = &store.entry(self.rm).value;
        let rv = &store.entry(self.rv).value;
        let mut y = Array4::<F>::zeros((n, c, h, w));
        let xs = x.as_slice().unwrap();
        let ys = y.as_slice_mut().unwrap();
        for ni in 0..n {
            for ch in 0..c {
                let is = F::one() / (rv[ch] + F::from_f64(self.eps)).sqrt();
                let m = rm[ch];
                let ga = gamma[ch];
                let be = beta[ch];
                let src = &xs[(ni * c + ch) * l..][..l];
                let dst = &mut ys[(ni * c + ch) * l..][..l];
                for (d, &s) in dst.iter_mut().zip(src.iter()) {
                    *d = ga * (s - m) * is + be;
                }
            }
        }
        y
    }

    pub fn backward<F: Real>(
        &self,
        store: &mut ParamStore<F>,
        x: &Array4<F>,
        cache: &BnCache<F>,
        dy: &Array4<F>,
    ) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        let l = h * w;
        let count = F::from_usize((n * l).max(1)).unwrap();
        let xs = x.as_slice().unwrap();
        let dys = dy.as_slice().unwrap();
        let gamma = store.entry(self.g).value.clone();
        let mut dgamma = Array1::<F>::zeros(c);
        let mut dbeta = Array1::<F>::zeros(c);
        let mut dx = Array4::<F>::zeros((n, c, h, w));
        {
            let dxs = dx.as_slice_mut().unwrap();
            for ch in 0..c {
                let m = cache.mean[ch];
                let is = cache.invstd[ch];
                let mut s1 = F::zero();
                let mut s2 = F::zero();
                for ni in 0..n {
                    let xp = &xs[(ni * c + ch) * l..][..l];
                    let dp = &dys[(ni * c + ch) * l..][..l];
                    for (&xv, &dv) in xp.iter().zip(dp.iter()) {
                        s1 = s1 + dv;
                        s2 = s2 + dv * (xv - m) * is;
                    }
                }
                dgamma[ch] = s2;
                dbeta[ch] = s1;
                let scale = gamma[ch] * is / count;
                for ni in 0..n {
                    let xp = &xs[(ni * c + ch) * l..][..l];
                    let dp = &dys[(ni * c + ch) * l..][..l];
                    let dst = &mut dxs[(ni * c + ch) * l..][..l];
                    for ((o, &xv), &dv) in dst.iter_mut().zip(xp.iter()).zip(dp.iter()) {
                        let xhat = (xv - m) * is;
                        *o = scale * (count * dv - s1 - xhat * s2);
                    }
                }
            }
        }
        for (g, &v) in store
            .entry_mut(self.g)
            .grad
            .iter_mut()
            .zip(dgamma.iter())
        {
            *g = *g + v;
        }
        for (g, &v) in store.entry_mut(self.b).grad.iter_mut().zip(dbeta.iter()) {
            *g = *g + v;
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = (1.0 / d_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).unwrap();
        let mut wv = ndarray::ArrayD::<F>::zeros(vec![d_out, d_in]);
        for v in wv.iter_mut() {
            *v = F::from_f64(dist.sample(rng));
        }
        let mut bv = ndarray::ArrayD::<F>::zeros(vec![d_out]);
        for v in bv.iter_mut() {
            *v = F::from_f64(dist.sample(rng));
        }
        let w = store.register(format!("{name}.w"), wv, true, true);
        let b = store.register(format!("{name}.b"), bv, true, true);
        Linear { w, b, d_in, d_out }
    }

    pub fn forward<F: Real>(&self, store: &ParamStore<F>, x: &Array2<F>) -> Array2<F> {
        let n = x.nrows();
        let w = store
            .entry(self.w)
            .value
            .view()
            .into_shape_with_order((self.d_out, self.d_in))
            .unwrap();
        let bias = &store.entry(self.b).value;
        let mut y = Array2::<F>::zeros((n, self.d_out));
        general_mat_mul(F::one(), &x.view(), &w.t(), F::zero(), &mut y.view_mut());
        for mut row in y.rows_mut() {
            for (v, b) in row.iter_mut().zip(bias.iter()) {
                *v = *v + *b;
            }
        }
        y
    }

    pub fn backward<F: Real>(
        &self,
        store: &mut ParamStore<F>,
        x: &Array2<F>,
        dy: &Array2<F>,
    ) -> Array2<F> {
        let w = store
            .entry(self.w)
            .value
            .view()
            .into_shape_with_order((self.d_out, self.d_in))
            .unwrap()
            .to_owned();
        let mut dx = Array2::<F>::zeros(x.raw_dim());
        general_mat_mul(F::one(), &dy.view(), &w.view(), F::zero(), &mut dx.view_mut());
        {
            let entry = store.entry_mut(self.w);
            let mut gw = entry
                .grad
                .view_mut()
                .into_shape_with_order((self.d_out, self.d_in))
                .unwrap();
            general_mat_mul(F::one(), &dy.t(), &x.view(), F::one(), &mut gw);
        }
        {
            let entry = store.entry_mut(self.b);
            for (i, g) in entry.grad.iter_mut().enumerate() {
                let mut s = F::zero();
                for r in 0..dy.nrows() {
                    s = s + dy[[r, i]];
                }
                *g = *g + s;
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Activations and pooling
// ---------------------------------------------------------------------------

pub fn relu_inplace<F: Real>(x: &mut Array4<F>) {
    for v in x.iter_mut() {
        if *v < F::zero() {
            *v = F::zero();
        }
    }
}

/// Masks `dy` by the post-activation output `y` (in place).
pub fn relu_backward_inplace<F: Real>(y: &Array4<F>, dy: &mut Array4<F>) {
    for (d, &o) in dy.iter_mut().zip(y.iter()) {
        if o <= F::zero() {
            *d = F::zero();
        }
    }
}

pub fn global_avg_pool<F: Real>(x: &Array4<F>) -> Array2<F> {
    let (n, c, h, w) = x.dim();
    let scale = F::one() / F::from_usize((h * w).max(1)).unwrap();
    let mut y = Array2::<F>::zeros((n, c));
    let xs = x.as_slice().unwrap();
    for ni in 0..n {
        for ch in 0..c {
            let plane = &xs[(ni * c + ch) * h * w..][..h * w];
            y[[ni, ch]] = plane.iter().copied().sum::<F>() * scale;
        }
    }
    y
}

pub fn global_avg_pool_backward<F: Real>(dp: &Array2<F>, h: usize, w: usize) -> Array4<F> {
    let (n, c) = dp.dim();
    let scale = F::one() / F::from_usize((h * w).max(1)).unwrap();
    let mut dx = Array4::<F>::zeros((n, c, h, w));
    for ni in 0..n {
        for ch in 0..c {
            let g = dp[[ni, ch]] * scale;
            dx.slice_mut(ndarray::s![ni, ch, .., ..]).fill(g);
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// Classification losses on logits
// ---------------------------------------------------------------------------

/// Mean cross entropy over the batch; returns the loss and `d(loss)/d(logits)`.
pub fn cross_entropy<F: Real>(logits: &Array2<F>, labels: &[usize]) -> (f64, Array2<F>) {
    let (n, c) = logits.dim();
    assert_eq!(n, labels.len());
    let mut dlogits = Array2::<F>::zeros((n, c));
    if n == 0 {
        return (0.0, dlogits);
    }
    let mut loss = 0.0f64;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v.to_f64()));
        let mut denom = 0.0f64;
        for &v in row.iter() {
            denom += (v.to_f64() - max).exp();
        }
        let log_denom = denom.ln() + max;
        loss += (log_denom - logits[[i, labels[i]]].to_f64()) * inv_n;
        for j in 0..c {
            let p = (logits[[i, j]].to_f64() - log_denom).exp();
            let target = if j == labels[i] { 1.0 } else { 0.0 };
            dlogits[[i, j]] = F::from_f64((p - target) * inv_n);
        }
    }
    (loss, dlogits)
}

pub fn count_correct<F: Real>(logits: &Array2<F>, labels: &[usize]) -> usize {
    logits
        .rows()
        .into_iter()
        .zip(labels.iter())
        .filter(|(row, &lab)| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best == lab
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array4};
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn conv_identity_kernel() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let conv = Conv2d::new(&mut store, "c", 1, 1, 3, 1, 1, &mut rng());
        // center-tap kernel copies the input
        {
            let e = store.entry_mut(conv.w);
            e.value.fill(0.0);
            e.value[ndarray::IxDyn(&[0, 0, 1, 1])] = 1.0;
        }
        let x = Array4::from_shape_fn((2, 1, 4, 4), |(n, _, i, j)| (n * 16 + i * 4 + j) as f64);
        let y = conv.forward(&store, &x);
        assert_eq!(y, x);
    }

    #[test]
    fn conv_matches_naive_loop() {
        let mut r = rng();
        let mut store: ParamStore<f64> = ParamStore::new();
        let conv = Conv2d::new(&mut store, "c", 3, 4, 3, 2, 1, &mut r);
        let x = Array4::from_shape_fn((3, 3, 5, 5), |(n, c, i, j)| {
            ((n + 1) as f64 * 0.3) - (c as f64 * 0.11) + (i as f64 * 0.07) - (j as f64 * 0.05)
        });
        let y = conv.forward(&store, &x);
        let wv = store.entry(conv.w).value.clone();
        let (ho, wo) = conv.out_hw(5, 5);
        assert_eq!(y.dim(), (3, 4, ho, wo));
        for n in 0..3 {
            for co in 0..4 {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..3 {
                            for ki in 0..3 {
                                for kj in 0..3 {
                                    let ih = (oh * 2 + ki) as isize - 1;
                                    let iw = (ow * 2 + kj) as isize - 1;
                                    if ih >= 0 && ih < 5 && iw >= 0 && iw < 5 {
                                        acc += wv[ndarray::IxDyn(&[co, ci, ki, kj])]
                                            * x[[n, ci, ih as usize, iw as usize]];
                                    }
                                }
                            }
                        }
                        assert!((y[[n, co, oh, ow]] - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn bn_normalizes_batch() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 2);
        let x = Array4::from_shape_fn((4, 2, 3, 3), |(n, c, i, j)| {
            (n as f64) + (c as f64) * 10.0 + (i * 3 + j) as f64 * 0.5
        });
        let (y, _) = bn.forward_train(&mut store, &x);
        for c in 0..2 {
            let mut s = 0.0;
            let mut s2 = 0.0;
            for n in 0..4 {
                for i in 0..3 {
                    for j in 0..3 {
                        s += y[[n, c, i, j]];
                        s2 += y[[n, c, i, j]].powi(2);
                    }
                }
            }
            let count = 36.0;
            assert!((s / count).abs() < 1e-10);
            assert!((s2 / count - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn linear_forward_bias() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let lin = Linear::new(&mut store, "fc", 2, 2, &mut rng());
        {
            let e = store.entry_mut(lin.w);
            e.value
                .assign(&ndarray::arr2(&[[1.0, 2.0], [3.0, 4.0]]).into_dyn());
        }
        {
            let e = store.entry_mut(lin.b);
            e.value.assign(&ndarray::arr1(&[0.5, -0.5]).into_dyn());
        }
        let x = arr2(&[[1.0, 1.0]]);
        let y = lin.forward(&store, &x);
        assert_eq!(y, arr2(&[[3.5, 6.5]]));
    }

    #[test]
    fn cross_entropy_uniform() {
        let logits = arr2(&[[0.0f64, 0.0, 0.0, 0.0]]);
        let (loss, d) = cross_entropy(&logits, &[1]);
        assert!((loss - (4.0f64).ln()).abs() < 1e-12);
        assert!((d[[0, 1]] - (0.25 - 1.0)).abs() < 1e-12);
        assert!((d[[0, 0]] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_passes_through() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let conv = Conv2d::new(&mut store, "c", 3, 4, 3, 1, 1, &mut rng());
        let x = Array4::<f64>::zeros((0, 3, 8, 8));
        let y = conv.forward(&store, &x);
        assert_eq!(y.dim(), (0, 4, 8, 8));
        let (loss, d) = cross_entropy(&Array2::<f64>::zeros((0, 10)), &[]);
        assert_eq!(loss, 0.0);
        assert_eq!(d.dim(), (0, 10));
    }
}
