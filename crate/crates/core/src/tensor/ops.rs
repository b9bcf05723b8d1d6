use super::{numel, Tensor};

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            panic!("cannot broadcast shapes {a:?} and {b:?}");
        };
    }
    out
}

fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i] = acc;
        acc *= shape[i];
    }
    strides
}

/// Input strides aligned to `target`, zero on broadcast axes.
fn broadcast_strides(src: &[usize], target: &[usize]) -> Vec<usize> {
    let offset = target.len() - src.len();
    let src_strides = contiguous_strides(src);
    (0..target.len())
        .map(|i| {
            if i < offset || src[i - offset] == 1 {
                0
            } else {
                src_strides[i - offset]
            }
        })
        .collect()
}

/// Calls `f(out_index, src_index)` for every element of `target`, where
/// `src_index` addresses `src` broadcast to `target`.
fn for_each_broadcast(src: &[usize], target: &[usize], mut f: impl FnMut(usize, usize)) {
    let n = numel(target);
    if n == 0 {
        return;
    }
    let strides = broadcast_strides(src, target);
    let nd = target.len();
    if nd == 0 {
        f(0, 0);
        return;
    }
    let last = nd - 1;
    let inner = target[last];
    let inner_stride = strides[last];
    let mut idx = vec![0usize; nd];
    let mut base = 0usize;
    let mut out = 0usize;
    loop {
        for j in 0..inner {
            f(out + j, base + j * inner_stride);
        }
        out += inner;
        if out >= n {
            break;
        }
        // advance the odometer over the outer axes
        let mut axis = last;
        loop {
            axis -= 1;
            idx[axis] += 1;
            base += strides[axis];
            if idx[axis] < target[axis] {
                break;
            }
            base -= strides[axis] * idx[axis];
            idx[axis] = 0;
        }
    }
}

impl Tensor {
    /// Broadcast to `shape` (numpy rules), materializing the result.
    pub fn expand(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let target = broadcast_shape(self.shape(), shape);
        assert_eq!(target, shape, "cannot expand {:?} to {:?}", self.shape(), shape);
        let src = self.data();
        let mut out = vec![0.0; numel(shape)];
        for_each_broadcast(self.shape(), shape, |o, s| out[o] = src[s]);
        let orig = self.shape().to_vec();
        Tensor::from_op(out, shape.to_vec(), vec![self.clone()], move |g, _, _| {
            vec![Some(g.sum_to(&orig))]
        })
    }

    /// Sum over broadcast axes so the result has `shape`; adjoint of `expand`.
    pub fn sum_to(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let target = broadcast_shape(shape, self.shape());
        assert_eq!(target, self.shape(), "cannot sum {:?} to {:?}", self.shape(), shape);
        let src = self.data();
        let mut out = vec![0.0; numel(shape)];
        for_each_broadcast(shape, self.shape(), |o, s| out[s] += src[o]);
        let orig = self.shape().to_vec();
        Tensor::from_op(out, shape.to_vec(), vec![self.clone()], move |g, _, _| {
            vec![Some(g.expand(&orig))]
        })
    }

    fn broadcast_pair(&self, other: &Tensor) -> (Tensor, Tensor) {
        if self.shape() == other.shape() {
            return (self.clone(), other.clone());
        }
        let shape = broadcast_shape(self.shape(), other.shape());
        (self.expand(&shape), other.expand(&shape))
    }

    fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.data().iter().map(|&x| f(x)).collect()
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        let (a, b) = self.broadcast_pair(other);
        let out = Tensor::zip_map(&a, &b, |x, y| x + y);
        Tensor::from_op(out, a.shape().to_vec(), vec![a, b], |g, _, _| {
            vec![Some(g.clone()), Some(g.clone())]
        })
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        let (a, b) = self.broadcast_pair(other);
        let out = Tensor::zip_map(&a, &b, |x, y| x - y);
        Tensor::from_op(out, a.shape().to_vec(), vec![a, b], |g, _, _| {
            vec![Some(g.clone()), Some(g.neg())]
        })
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        let (a, b) = self.broadcast_pair(other);
        let out = Tensor::zip_map(&a, &b, |x, y| x * y);
        Tensor::from_op(out, a.shape().to_vec(), vec![a, b], |g, inp, _| {
            vec![
                inp[0].requires_grad().then(|| g.mul(&inp[1])),
                inp[1].requires_grad().then(|| g.mul(&inp[0])),
            ]
        })
    }

    pub fn div(&self, other: &Tensor) -> Tensor {
        let (a, b) = self.broadcast_pair(other);
        let out = Tensor::zip_map(&a, &b, |x, y| x / y);
        Tensor::from_op(out, a.shape().to_vec(), vec![a, b], |g, inp, out| {
            vec![
                inp[0].requires_grad().then(|| g.div(&inp[1])),
                // d(a/b)/db = -(a/b)/b
                inp[1].requires_grad().then(|| g.mul(out).div(&inp[1]).neg()),
            ]
        })
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let out = self.map(|x| x * c);
        Tensor::from_op(out, self.shape().to_vec(), vec![self.clone()], move |g, _, _| {
            vec![Some(g.scale(c))]
        })
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let out = self.map(|x| x + c);
        Tensor::from_op(out, self.shape().to_vec(), vec![self.clone()], |g, _, _| {
            vec![Some(g.clone())]
        })
    }

    pub fn square(&self) -> Tensor {
        let out = self.map(|x| x * x);
        Tensor::from_op(out, self.shape().to_vec(), vec![self.clone()], |g, inp, _| {
            vec![Some(g.mul(&inp[0]).scale(2.0))]
        })
    }

    pub fn sqrt(&self) -> Tensor {
        let out = self.map(f64::sqrt);
        Tensor::from_op(out, self.shape().to_vec(), vec![self.clone()], |g, _, out| {
            vec![Some(g.div(out).scale(0.5))]
        })
    }

    pub fn tanh(&self) -> Tensor {
        let out = self.map(f64::tanh);
        Tensor::from_op(out, self.shape().to_vec(), vec![self.clone()], |g, _, out| {
            let one_minus_sq = out.square().neg().add_scalar(1.0);
            vec![Some(g.mul(&one_minus_sq))]
        })
    }

    /// `max(x, 0) + slope * min(x, 0)`. The derivative is piecewise constant,
    /// so its own derivative is zero almost everywhere.
    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        let out = self.map(|x| if x > 0.0 { x } else { slope * x });
        Tensor::from_op(out, self.shape().to_vec(), vec![self.clone()], move |g, inp, _| {
            let mask = Tensor::new(
                inp[0].map(|x| if x > 0.0 { 1.0 } else { slope }),
                inp[0].shape(),
            );
            vec![Some(g.mul(&mask))]
        })
    }

    pub fn relu(&self) -> Tensor {
        self.leaky_relu(0.0)
    }

    /// Sum of all elements as a scalar tensor.
    pub fn sum(&self) -> Tensor {
        self.sum_to(&[])
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(
            numel(shape),
            self.numel(),
            "cannot reshape {:?} to {:?}",
            self.shape(),
            shape
        );
        if self.shape() == shape {
            return self.clone();
        }
        let orig = self.shape().to_vec();
        Tensor::from_op(self.to_vec(), shape.to_vec(), vec![self.clone()], move |g, _, _| {
            vec![Some(g.reshape(&orig))]
        })
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Tensor {
        let nd = self.ndim();
        assert_eq!(axes.len(), nd);
        let in_shape = self.shape();
        let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
        let in_strides = contiguous_strides(in_shape);
        let permuted_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let src = self.data();
        let mut out = Vec::with_capacity(self.numel());
        if nd > 0 && self.numel() > 0 {
            let mut idx = vec![0usize; nd];
            let last = nd - 1;
            let mut base = 0usize;
            loop {
                let s = permuted_strides[last];
                for j in 0..out_shape[last] {
                    out.push(src[base + j * s]);
                }
                if out.len() == self.numel() {
                    break;
                }
                let mut axis = last;
                loop {
                    axis -= 1;
                    idx[axis] += 1;
                    base += permuted_strides[axis];
                    if idx[axis] < out_shape[axis] {
                        break;
                    }
                    base -= permuted_strides[axis] * idx[axis];
                    idx[axis] = 0;
                }
            }
        } else {
            out.extend_from_slice(src);
        }
        let mut inverse = vec![0; nd];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        Tensor::from_op(out, out_shape, vec![self.clone()], move |g, _, _| {
            vec![Some(g.permute(&inverse))]
        })
    }

    pub fn transpose(&self) -> Tensor {
        assert_eq!(self.ndim(), 2);
        self.permute(&[1, 0])
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        self.matmul_t(other, false, false)
    }

    /// `op(self) @ op(other)` for 2-D tensors, where `op` optionally
    /// transposes without copying.
    pub fn matmul_t(&self, other: &Tensor, trans_a: bool, trans_b: bool) -> Tensor {
        assert_eq!(self.ndim(), 2, "matmul lhs must be 2-D, got {:?}", self.shape());
        assert_eq!(other.ndim(), 2, "matmul rhs must be 2-D, got {:?}", other.shape());
        let (ar, ac) = (self.dim(0), self.dim(1));
        let (br, bc) = (other.dim(0), other.dim(1));
        let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
        assert_eq!(k, k2, "matmul inner dims differ: {:?} x {:?}", self.shape(), other.shape());
        let (rsa, csa) = if trans_a { (1, ac as isize) } else { (ac as isize, 1) };
        let (rsb, csb) = if trans_b { (1, bc as isize) } else { (bc as isize, 1) };
        let mut out = vec![0.0; m * n];
        if m > 0 && n > 0 && k > 0 {
            // SAFETY: the pointers and strides describe the full extents of
            // `self`, `other` and `out`, which outlive the call.
            unsafe {
                matrixmultiply::dgemm(
                    m,
                    k,
                    n,
                    1.0,
                    self.data().as_ptr(),
                    rsa,
                    csa,
                    other.data().as_ptr(),
                    rsb,
                    csb,
                    0.0,
                    out.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
        Tensor::from_op(
            out,
            vec![m, n],
            vec![self.clone(), other.clone()],
            move |g, inp, _| {
                let (a, b) = (&inp[0], &inp[1]);
                let ga = a.requires_grad().then(|| {
                    if trans_a {
                        b.matmul_t(g, trans_b, true)
                    } else {
                        g.matmul_t(b, false, !trans_b)
                    }
                });
                let gb = b.requires_grad().then(|| {
                    if trans_b {
                        g.matmul_t(a, true, trans_a)
                    } else {
                        a.matmul_t(g, !trans_a, false)
                    }
                });
                vec![ga, gb]
            },
        )
    }

    /// Rows `start..start + len` along axis 0.
    pub fn narrow0(&self, start: usize, len: usize) -> Tensor {
        let total = self.dim(0);
        assert!(start + len <= total, "narrow0 out of range");
        let row = self.numel() / total.max(1);
        let out = self.data()[start * row..(start + len) * row].to_vec();
        let mut shape = self.shape().to_vec();
        shape[0] = len;
        Tensor::from_op(out, shape, vec![self.clone()], move |g, _, _| {
            vec![Some(g.pad0(start, total))]
        })
    }

    /// Places `self` at rows `start..` of a zero tensor with `total` rows;
    /// adjoint of [`Tensor::narrow0`].
    pub fn pad0(&self, start: usize, total: usize) -> Tensor {
        let len = self.dim(0);
        assert!(start + len <= total);
        let row = self.numel() / len.max(1);
        let mut out = vec![0.0; total * row];
        out[start * row..(start + len) * row].copy_from_slice(self.data());
        let mut shape = self.shape().to_vec();
        shape[0] = total;
        Tensor::from_op(out, shape, vec![self.clone()], move |g, _, _| {
            vec![Some(g.narrow0(start, len))]
        })
    }

    /// Concatenate along axis 0.
    pub fn cat0(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty());
        let tail = &parts[0].shape()[1..];
        let mut rows = 0;
        let mut out = Vec::new();
        for p in parts {
            assert_eq!(&p.shape()[1..], tail, "cat0 shape mismatch");
            rows += p.dim(0);
            out.extend_from_slice(p.data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(tail);
        let lens: Vec<usize> = parts.iter().map(|p| p.dim(0)).collect();
        Tensor::from_op(out, shape, parts.to_vec(), move |g, _, _| {
            let mut start = 0;
            lens.iter()
                .map(|&l| {
                    let s = g.narrow0(start, l);
                    start += l;
                    Some(s)
                })
                .collect()
        })
    }

    /// Nearest-neighbour 2x upsampling of an `[N, C, H, W]` tensor.
    pub fn upsample2(&self) -> Tensor {
        let [n, c, h, w] = self.shape4();
        let src = self.data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0; n * c * oh * ow];
        for plane in 0..n * c {
            let s = &src[plane * h * w..(plane + 1) * h * w];
            let o = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for y in 0..oh {
                for x in 0..ow {
                    o[y * ow + x] = s[(y / 2) * w + x / 2];
                }
            }
        }
        Tensor::from_op(out, vec![n, c, oh, ow], vec![self.clone()], |g, _, _| {
            vec![Some(g.sum_pool2())]
        })
    }

    /// Sums each 2x2 block of an `[N, C, H, W]` tensor; adjoint of
    /// [`Tensor::upsample2`].
    pub fn sum_pool2(&self) -> Tensor {
        let [n, c, h, w] = self.shape4();
        assert!(h % 2 == 0 && w % 2 == 0, "sum_pool2 needs even spatial dims");
        let (oh, ow) = (h / 2, w / 2);
        let src = self.data();
        let mut out = vec![0.0; n * c * oh * ow];
        for plane in 0..n * c {
            let s = &src[plane * h * w..(plane + 1) * h * w];
            let o = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for y in 0..h {
                for x in 0..w {
                    o[(y / 2) * ow + x / 2] += s[y * w + x];
                }
            }
        }
        Tensor::from_op(out, vec![n, c, oh, ow], vec![self.clone()], |g, _, _| {
            vec![Some(g.upsample2())]
        })
    }

    pub fn avg_pool2(&self) -> Tensor {
        self.sum_pool2().scale(0.25)
    }

    pub(crate) fn shape4(&self) -> [usize; 4] {
        let s = self.shape();
        assert_eq!(s.len(), 4, "expected an NCHW tensor, got {s:?}");
        [s[0], s[1], s[2], s[3]]
    }
}
