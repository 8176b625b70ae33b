use super::{Scalar, Tensor};

/// Pointwise nonlinearities used across the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    /// Exact `x·Φ(x)`.
    Gelu,
    Sin,
    Square,
    /// `σ(x)·x`, parameter free.
    SiGlu,
}

#[inline]
pub fn sigmoid(x: Scalar) -> Scalar {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn std_normal_cdf(x: Scalar) -> Scalar {
    0.5 * (1.0 + libm::erf(x as f64 / std::f64::consts::SQRT_2) as Scalar)
}

#[inline]
fn std_normal_pdf(x: Scalar) -> Scalar {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    (INV_SQRT_2PI * (-0.5 * (x as f64) * (x as f64)).exp()) as Scalar
}

#[inline]
pub fn gelu(x: Scalar) -> Scalar {
    x * std_normal_cdf(x)
}

impl Unary {
    #[inline]
    pub fn apply(self, x: Scalar) -> Scalar {
        match self {
            Unary::Sigmoid => sigmoid(x),
            Unary::Gelu => gelu(x),
            Unary::Sin => x.sin(),
            Unary::Square => x * x,
            Unary::SiGlu => sigmoid(x) * x,
        }
    }

    #[inline]
    pub fn derivative(self, x: Scalar) -> Scalar {
        match self {
            Unary::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Unary::Gelu => std_normal_cdf(x) + x * std_normal_pdf(x),
            Unary::Sin => x.cos(),
            Unary::Square => 2.0 * x,
            Unary::SiGlu => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
        }
    }
}

pub fn pointwise(x: &Tensor, f: Unary) -> Tensor {
    x.map(|v| f.apply(v))
}
