use crate::tensor::{Matrix, Real};

/// Pointwise nonlinearity applied after convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// ELU with α = 1.
    Elu,
    Identity,
}

impl Activation {
    pub fn apply<F: Real>(self, x: F) -> F {
        match self {
            Activation::Elu if x < F::zero() => x.exp_m1(),
            _ => x,
        }
    }

    /// d(apply)/dx at `x`.
    pub fn derivative<F: Real>(self, x: F) -> F {
        match self {
            Activation::Elu if x < F::zero() => x.exp(),
            _ => F::one(),
        }
    }

    pub fn forward<F: Real>(self, x: &Matrix<F>) -> Matrix<F> {
        x.map(|v| self.apply(v))
    }

    /// Multiplies `grad_out` by the activation derivative evaluated at the pre-activation `x`.
    pub fn backward<F: Real>(self, x: &Matrix<F>, grad_out: &Matrix<F>) -> Matrix<F> {
        debug_assert_eq!(x.shape(), grad_out.shape());
        let data = x
            .as_slice()
            .iter()
            .zip(grad_out.as_slice())
            .map(|(&v, &g)| g * self.derivative(v))
            .collect();
        Matrix::from_vec(x.rows(), x.cols(), data).expect("shape preserved")
    }
}
