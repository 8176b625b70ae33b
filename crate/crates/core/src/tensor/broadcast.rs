use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Numpy-style broadcast of two shapes (right-aligned, extent-1 axes stretch).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let pa = padded(a, rank);
    let pb = padded(b, rank);
    pa.iter()
        .zip(&pb)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Some(x),
            (1, _) => Some(y),
            (_, 1) => Some(x),
            _ => None,
        })
        .collect()
}

fn padded(shape: &[usize], rank: usize) -> Vec<usize> {
    let mut out = vec![1; rank - shape.len()];
    out.extend_from_slice(shape);
    out
}

/// Row-major strides of `shape` as seen from `out`, with 0 on stretched axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let p = padded(shape, out.len());
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for ax in (0..out.len()).rev() {
        strides[ax] = if p[ax] == 1 && out[ax] != 1 { 0 } else { acc };
        acc *= p[ax];
    }
    strides
}

/// Iteration plan over an output shape with two strided operands; adjacent
/// axes are merged whenever both operands traverse them contiguously (or both
/// stretch them), so the innermost run is as long as possible.
struct Plan {
    dims: Vec<usize>,
    sa: Vec<usize>,
    sb: Vec<usize>,
}

impl Plan {
    fn new(out: &[usize], sa: Vec<usize>, sb: Vec<usize>) -> Plan {
        let mut dims: Vec<usize> = Vec::new();
        let mut a: Vec<usize> = Vec::new();
        let mut b: Vec<usize> = Vec::new();
        for ax in 0..out.len() {
            if out[ax] == 1 {
                continue;
            }
            if let Some(last) = dims.len().checked_sub(1) {
                if a[last] == sa[ax] * out[ax] && b[last] == sb[ax] * out[ax] {
                    dims[last] *= out[ax];
                    a[last] = sa[ax];
                    b[last] = sb[ax];
                    continue;
                }
            }
            dims.push(out[ax]);
            a.push(sa[ax]);
            b.push(sb[ax]);
        }
        if dims.is_empty() {
            dims.push(1);
            a.push(0);
            b.push(0);
        }
        Plan { dims, sa: a, sb: b }
    }

    /// Calls `f(offset_a, offset_b, stride_a, stride_b, out_offset, run)` for
    /// every innermost run.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
        let r = self.dims.len();
        let run = self.dims[r - 1];
        let (ia, ib) = (self.sa[r - 1], self.sb[r - 1]);
        let outer: usize = self.dims[..r - 1].iter().product();
        let mut idx = vec![0usize; r - 1];
        let (mut oa, mut ob) = (0usize, 0usize);
        for o in 0..outer {
            f(oa, ob, ia, ib, o * run, run);
            for ax in (0..r - 1).rev() {
                idx[ax] += 1;
                oa += self.sa[ax];
                ob += self.sb[ax];
                if idx[ax] < self.dims[ax] {
                    break;
                }
                oa -= self.sa[ax] * self.dims[ax];
                ob -= self.sb[ax] * self.dims[ax];
                idx[ax] = 0;
            }
        }
    }
}

/// Elementwise binary map under mutual broadcasting.
pub fn zip_with(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(Scalar, Scalar) -> Scalar,
) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape().to_vec(), data));
    }
    let out = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| Error::shape(op, a.shape(), b.shape()))?;
    let plan = Plan::new(&out, broadcast_strides(a.shape(), &out), broadcast_strides(b.shape(), &out));
    let n: usize = out.iter().product();
    let mut data = vec![0.0; n];
    let (ad, bd) = (a.data(), b.data());
    plan.for_each_run(|oa, ob, ia, ib, o, run| {
        let dst = &mut data[o..o + run];
        match (ia, ib) {
            (1, 1) => {
                for ((d, &x), &y) in dst.iter_mut().zip(&ad[oa..oa + run]).zip(&bd[ob..ob + run]) {
                    *d = f(x, y);
                }
            }
            (1, 0) => {
                let y = bd[ob];
                for (d, &x) in dst.iter_mut().zip(&ad[oa..oa + run]) {
                    *d = f(x, y);
                }
            }
            (0, 1) => {
                let x = ad[oa];
                for (d, &y) in dst.iter_mut().zip(&bd[ob..ob + run]) {
                    *d = f(x, y);
                }
            }
            _ => {
                for (k, d) in dst.iter_mut().enumerate() {
                    *d = f(ad[oa + k * ia], bd[ob + k * ib]);
                }
            }
        }
    });
    Ok(Tensor::from_parts(out, data))
}

/// `a ⊙ b` with broadcasting (e.g. a `1×C×H×W` kernel across a batch).
pub fn ew_mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("ew_mul", a, b, |x, y| x * y)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("sub", a, b, |x, y| x - y)
}

/// Sums `t` down to `shape`, the adjoint of broadcasting `shape` up to
/// `t.shape()`.
pub fn reduce_to_shape(t: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if t.shape() == shape {
        return Ok(t.clone());
    }
    match broadcast_shape(shape, t.shape()) {
        Some(s) if s == t.shape() => {}
        _ => return Err(Error::shape("reduce_to_shape", t.shape(), shape)),
    }
    let out = t.shape();
    let ones: Vec<usize> = {
        let mut acc = 1;
        let mut s = vec![0; out.len()];
        for ax in (0..out.len()).rev() {
            s[ax] = acc;
            acc *= out[ax];
        }
        s
    };
    let plan = Plan::new(out, broadcast_strides(shape, out), ones);
    let mut acc = vec![0.0 as Scalar; shape.iter().product()];
    let src = t.data();
    plan.for_each_run(|oa, ob, ia, ib, _o, run| {
        debug_assert_eq!(ib, 1);
        let s = &src[ob..ob + run];
        if ia == 0 {
            acc[oa] += s.iter().sum::<Scalar>();
        } else if ia == 1 {
            for (d, &v) in acc[oa..oa + run].iter_mut().zip(s) {
                *d += v;
            }
        } else {
            for (k, &v) in s.iter().enumerate() {
                acc[oa + k * ia] += v;
            }
        }
    });
    Ok(Tensor::from_parts(shape.to_vec(), acc))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_broadcast_mul(a: &Tensor, b: &Tensor) -> Tensor {
        let out = broadcast_shape(a.shape(), b.shape()).unwrap();
        let rank = out.len();
        let pa = padded(a.shape(), rank);
        let pb = padded(b.shape(), rank);
        let ta = a.reshape(&pa).unwrap();
        let tb = b.reshape(&pb).unwrap();
        Tensor::from_fn(&out, |idx| {
            let ia: Vec<usize> = idx.iter().zip(&pa).map(|(&i, &d)| if d == 1 { 0 } else { i }).collect();
            let ib: Vec<usize> = idx.iter().zip(&pb).map(|(&i, &d)| if d == 1 { 0 } else { i }).collect();
            ta.get(&ia) * tb.get(&ib)
        })
    }

    #[test]
    fn annihilator() {
        let a = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let b = Tensor::zeros(&[3]);
        assert_eq!(ew_mul(&a, &b).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn batch_broadcast_shape() {
        let a = Tensor::ones(&[2, 3, 4, 4]);
        let b = Tensor::ones(&[1, 3, 4, 4]);
        assert_eq!(ew_mul(&a, &b).unwrap().shape(), &[2, 3, 4, 4]);
    }

    #[test]
    fn matches_double_loop() {
        let a = Tensor::new(&[2, 2], vec![0.3, -1.2, 2.5, 0.7]).unwrap();
        let b = Tensor::new(&[2, 2], vec![1.1, 0.4, -0.9, 3.0]).unwrap();
        let out = ew_mul(&a, &b).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(out.get(&[i, j]), a.get(&[i, j]) * b.get(&[i, j]));
            }
        }
    }

    #[test]
    fn incompatible_shapes_rejected() {
        let a = Tensor::ones(&[2, 3]);
        let b = Tensor::ones(&[2, 4]);
        assert!(matches!(ew_mul(&a, &b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn mutual_broadcast() {
        let a = Tensor::from_fn(&[2, 3, 1, 1], |i| (i[0] * 3 + i[1]) as Scalar);
        let b = Tensor::from_fn(&[2, 1, 2, 2], |i| (i[2] * 2 + i[3]) as Scalar + 0.5);
        assert_eq!(ew_mul(&a, &b).unwrap(), naive_broadcast_mul(&a, &b));
    }

    #[test]
    fn reduce_is_adjoint_of_broadcast() {
        let g = Tensor::from_fn(&[2, 3, 4], |i| (i[0] + 2 * i[1] + 3 * i[2]) as Scalar);
        let r = reduce_to_shape(&g, &[1, 3, 1]).unwrap();
        for c in 0..3 {
            let mut s = 0.0;
            for b in 0..2 {
                for l in 0..4 {
                    s += g.get(&[b, c, l]);
                }
            }
            assert_eq!(r.get(&[0, c, 0]), s);
        }
        let r = reduce_to_shape(&g, &[4]).unwrap();
        assert_eq!(r.sum(), g.sum());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn shape_pair() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
            (1usize..=4)
                .prop_flat_map(|rank| {
                    (
                        proptest::collection::vec(1usize..=5, rank),
                        proptest::collection::vec(any::<bool>(), rank),
                    )
                })
                .prop_map(|(a, mask)| {
                    let b = a.iter().zip(&mask).map(|(&d, &m)| if m { 1 } else { d }).collect();
                    (a, b)
                })
        }

        proptest! {
            #[test]
            fn broadcast_equals_explicit_tiling((sa, sb) in shape_pair(), seed in any::<u64>()) {
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let a = Tensor::uniform(&sa, -2.0, 2.0, &mut rng);
                let b = Tensor::uniform(&sb, -2.0, 2.0, &mut rng);
                let out = ew_mul(&a, &b).unwrap();
                prop_assert_eq!(out.shape(), a.shape());
                prop_assert_eq!(&out, &naive_broadcast_mul(&a, &b));
                // reversed operand order broadcasts the other way round
                prop_assert_eq!(&ew_mul(&b, &a).unwrap(), &out);
            }
        }
    }
}
