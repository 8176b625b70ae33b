use super::broadcast::{reduce_to_shape, zip_with};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    /// Biased (population) variance, `Σ(x − μ)² / n`.
    Var,
}

pub(crate) fn kept_shape(shape: &[usize], axes: &[usize]) -> Result<Vec<usize>> {
    let mut out = shape.to_vec();
    for &a in axes {
        if a >= shape.len() {
            return Err(Error::InvalidAxis { axis: a, rank: shape.len() });
        }
        out[a] = 1;
    }
    Ok(out)
}

/// Reduces over `axes`, keeping them with extent 1.
pub fn reduce(x: &Tensor, axes: &[usize], kind: ReduceKind) -> Result<Tensor> {
    let kept = kept_shape(x.shape(), axes)?;
    let n = (x.numel() / kept.iter().product::<usize>()) as Scalar;
    let sum = reduce_to_shape(x, &kept)?;
    match kind {
        ReduceKind::Sum => Ok(sum),
        ReduceKind::Mean => Ok(sum.scale(1.0 / n)),
        ReduceKind::Var => {
            let mean = sum.scale(1.0 / n);
            let sq = zip_with("var", x, &mean, |v, m| (v - m) * (v - m))?;
            Ok(reduce_to_shape(&sq, &kept)?.scale(1.0 / n))
        }
    }
}

/// z-score over `axes`: `(x − E[x]) / √(Var[x] + ε)`, no affine terms.
///
/// Returns the standardized tensor and `1/√(Var + ε)` with the reduced axes
/// kept, which the backward pass reuses.
pub fn z_score(x: &Tensor, axes: &[usize], eps: Scalar) -> Result<(Tensor, Tensor)> {
    let mean = reduce(x, axes, ReduceKind::Mean)?;
    let centered = zip_with("z_score", x, &mean, |v, m| v - m)?;
    let kept = mean.shape().to_vec();
    let n = (x.numel() / mean.numel()) as Scalar;
    // Second pass removes the rounding left in the mean, so constant regions
    // center to exactly zero.
    let residual = reduce_to_shape(&centered, &kept)?.scale(1.0 / n);
    let centered = zip_with("z_score", &centered, &residual, |c, r| c - r)?;
    let var = reduce_to_shape(&centered.map(|v| v * v), &kept)?.scale(1.0 / n);
    let inv_std = var.map(|v| 1.0 / (v + eps).sqrt());
    let out = zip_with("z_score", &centered, &inv_std, |c, s| c * s)?;
    Ok((out, inv_std))
}

/// Gradient of [`z_score`] through both the mean and the variance:
/// `dx = σ⁻¹ (g − mean(g) − x̂·mean(g ⊙ x̂))` per reduction region.
pub fn z_score_backward(out: &Tensor, inv_std: &Tensor, g: &Tensor) -> Result<Tensor> {
    let kept = inv_std.shape();
    let n = (out.numel() / inv_std.numel()) as Scalar;
    let mean_g = reduce_to_shape(g, kept)?.scale(1.0 / n);
    let gx = zip_with("z_score_backward", g, out, |a, b| a * b)?;
    let mean_gx = reduce_to_shape(&gx, kept)?.scale(1.0 / n);
    let t = zip_with("z_score_backward", g, &mean_g, |a, m| a - m)?;
    let t = {
        let xm = zip_with("z_score_backward", out, &mean_gx, |x, m| x * m)?;
        zip_with("z_score_backward", &t, &xm, |a, b| a - b)?
    };
    zip_with("z_score_backward", &t, inv_std, |a, s| a * s)
}

/// `x / (‖x‖₂ + ε)` with the norm taken over `axes`. Also returns the norms.
pub fn l2_normalize(x: &Tensor, axes: &[usize], eps: Scalar) -> Result<(Tensor, Tensor)> {
    let kept = kept_shape(x.shape(), axes)?;
    let norm = reduce_to_shape(&x.map(|v| v * v), &kept)?.map(|s| s.sqrt());
    let out = zip_with("l2_normalize", x, &norm, |v, n| v / (n + eps))?;
    Ok((out, norm))
}

/// Gradient of [`l2_normalize`]:
/// `dx = g/(n+ε) − x·Σ(g⊙x) / ((n+ε)²·n)`, the second term dropped where `n = 0`.
pub fn l2_normalize_backward(x: &Tensor, norm: &Tensor, eps: Scalar, g: &Tensor) -> Result<Tensor> {
    let gx = zip_with("l2_normalize_backward", g, x, |a, b| a * b)?;
    let dot = reduce_to_shape(&gx, norm.shape())?;
    let coef = zip_with("l2_normalize_backward", &dot, norm, |d, n| {
        if n > 0.0 {
            d / ((n + eps) * (n + eps) * n)
        } else {
            0.0
        }
    })?;
    let first = zip_with("l2_normalize_backward", g, norm, |a, n| a / (n + eps))?;
    let second = zip_with("l2_normalize_backward", x, &coef, |a, c| a * c)?;
    zip_with("l2_normalize_backward", &first, &second, |a, b| a - b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_biased_variance() {
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(reduce(&x, &[0], ReduceKind::Mean).unwrap().item(), 2.0);
        assert!((reduce(&x, &[0], ReduceKind::Var).unwrap().item() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn spatial_sum_keeps_axes() {
        let x = Tensor::ones(&[1, 2, 4, 4]);
        let s = reduce(&x, &[2, 3], ReduceKind::Sum).unwrap();
        assert_eq!(s.shape(), &[1, 2, 1, 1]);
        assert_eq!(s.data(), &[16.0, 16.0]);
    }

    #[test]
    fn constant_tensor_stats() {
        let x = Tensor::full(&[3, 2, 5], 4.25);
        assert!(reduce(&x, &[0, 2], ReduceKind::Mean).unwrap().data().iter().all(|&m| m == 4.25));
        assert!(reduce(&x, &[0, 1, 2], ReduceKind::Var).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_axis() {
        assert!(matches!(
            reduce(&Tensor::ones(&[2, 2]), &[2], ReduceKind::Sum),
            Err(Error::InvalidAxis { axis: 2, rank: 2 })
        ));
    }

    #[test]
    fn l2_normalize_unit_rows() {
        let x = Tensor::new(&[2, 2], vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        let (y, n) = l2_normalize(&x, &[1], 0.0).unwrap();
        assert_eq!(n.data(), &[5.0, 0.0]);
        assert!((y.data()[0] - 0.6).abs() < 1e-15 && (y.data()[1] - 0.8).abs() < 1e-15);
        let (z, _) = l2_normalize(&x, &[1], 1e-8).unwrap();
        assert_eq!(&z.data()[2..], &[0.0, 0.0]);
    }

    #[test]
    fn z_score_example() {
        let (out, _) = z_score(&Tensor::from_vec(vec![1.0, 2.0, 3.0]), &[0], 0.0).unwrap();
        let e = (1.5 as Scalar).sqrt();
        assert!(out.max_abs_diff(&Tensor::from_vec(vec![-e, 0.0, e])) < 1e-12);
    }
}
