use crate::error::{Error, Result};
use crate::numkernel::Rng;
use crate::tensor::{Matrix, Real};

/// Shape of a 1D convolution over a `T × c_in` frame sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub has_bias: bool,
}

impl ConvLayerSpec {
    /// Stride-1 layer with bias.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            has_bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("convolution channels must be positive".into()));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "convolution kernel must be odd, got {}",
                self.kernel
            )));
        }
        if self.stride != 1 {
            return Err(Error::Config(format!(
                "only stride 1 is supported, got {}",
                self.stride
            )));
        }
        Ok(())
    }

    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + if self.has_bias { self.out_channels } else { 0 }
    }

    fn padding(&self) -> usize {
        (self.kernel - 1) / 2
    }
}

/// Weights laid out `[out][in][tap]`, plus one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams<F> {
    pub weights: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Real> ConvLayerParams<F> {
    pub fn zeros(spec: &ConvLayerSpec) -> Self {
        Self {
            weights: vec![F::zero(); spec.weight_count()],
            bias: vec![F::zero(); spec.out_channels],
        }
    }

    pub fn weight(&self, spec: &ConvLayerSpec, out: usize, inp: usize, tap: usize) -> F {
        self.weights[(out * spec.in_channels + inp) * spec.kernel + tap]
    }

    pub fn check(&self, spec: &ConvLayerSpec) -> Result<()> {
        if self.weights.len() != spec.weight_count() || self.bias.len() != spec.out_channels {
            return Err(Error::Contract(format!(
                "conv params hold {} weights / {} biases, spec needs {} / {}",
                self.weights.len(),
                self.bias.len(),
                spec.weight_count(),
                spec.out_channels
            )));
        }
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> ConvLayerParams<G> {
        let conv = |v: &[F]| v.iter().map(|&x| G::from_f64_lossy(x.to_f64_lossy())).collect();
        ConvLayerParams {
            weights: conv(&self.weights),
            bias: conv(&self.bias),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<F> {
    pub grad_input: Matrix<F>,
    /// Same `[out][in][tap]` layout as [`ConvLayerParams::weights`].
    pub grad_weights: Vec<F>,
    pub grad_bias: Vec<F>,
}

fn check_input<F: Real>(input: &Matrix<F>, spec: &ConvLayerSpec) -> Result<()> {
    if input.cols() != spec.in_channels {
        return Err(Error::Contract(format!(
            "conv input has {} channels, layer expects {}",
            input.cols(),
            spec.in_channels
        )));
    }
    Ok(())
}

/// Repacks `[out][in][tap]` weights so that the innermost run is contiguous
/// over the channel indexed by `inner_is_out`.
fn repack<F: Real>(spec: &ConvLayerSpec, weights: &[F], inner_is_out: bool) -> Vec<F> {
    let (cin, cout, k) = (spec.in_channels, spec.out_channels, spec.kernel);
    let mut packed = vec![F::zero(); weights.len()];
    for o in 0..cout {
        for i in 0..cin {
            for j in 0..k {
                let dst = if inner_is_out {
                    (j * cin + i) * cout + o
                } else {
                    (j * cout + o) * cin + i
                };
                packed[dst] = weights[(o * cin + i) * k + j];
            }
        }
    }
    packed
}

/// Same-length convolution: `(k-1)/2` zero frames pad each end, so
/// `out[t][o] = bias[o] + Σ_{i,j} w[o][i][j] · padded[t + j][i]`.
pub fn conv1d_forward<F: Real>(
    input: &Matrix<F>,
    spec: &ConvLayerSpec,
    params: &ConvLayerParams<F>,
) -> Result<Matrix<F>> {
    spec.validate()?;
    params.check(spec)?;
    check_input(input, spec)?;
    let (len, cin, cout, k) = (input.rows(), spec.in_channels, spec.out_channels, spec.kernel);
    let pad = spec.padding();
    let packed = repack(spec, &params.weights, true);

    let mut out = Matrix::zeros(len, cout);
    for t in 0..len {
        let row = out.row_mut(t);
        row.copy_from_slice(&params.bias);
        for j in 0..k {
            let Some(src) = (t + j).checked_sub(pad).filter(|&s| s < len) else {
                continue;
            };
            let x = input.row(src);
            for (i, &xv) in x.iter().enumerate() {
                let w = &packed[(j * cin + i) * cout..][..cout];
                for (acc, &wv) in row.iter_mut().zip(w) {
                    *acc += xv * wv;
                }
            }
        }
    }
    Ok(out)
}

/// Exact gradients of a scalar loss through [`conv1d_forward`], given
/// `grad_output = ∂loss/∂output` and the input of the forward call.
pub fn conv1d_backward<F: Real>(
    grad_output: &Matrix<F>,
    cached_input: &Matrix<F>,
    spec: &ConvLayerSpec,
    params: &ConvLayerParams<F>,
) -> Result<ConvGrads<F>> {
    spec.validate()?;
    params.check(spec)?;
    check_input(cached_input, spec)?;
    let (len, cin, cout, k) = (
        cached_input.rows(),
        spec.in_channels,
        spec.out_channels,
        spec.kernel,
    );
    grad_output.ensure_shape(len, cout, "conv grad_output")?;
    let pad = spec.padding();
    let packed = repack(spec, &params.weights, false);

    let mut grad_input = Matrix::zeros(len, cin);
    // [tap][out][in]
    let mut packed_grad = vec![F::zero(); packed.len()];
    let mut grad_bias = vec![F::zero(); cout];

    for t in 0..len {
        let g = grad_output.row(t);
        if spec.has_bias {
            for (b, &gv) in grad_bias.iter_mut().zip(g) {
                *b += gv;
            }
        }
        for j in 0..k {
            let Some(src) = (t + j).checked_sub(pad).filter(|&s| s < len) else {
                continue;
            };
            let x = cached_input.row(src);
            let gin = grad_input.row_mut(src);
            for (o, &gv) in g.iter().enumerate() {
                let base = (j * cout + o) * cin;
                for ((gw, gi), (&xv, &wv)) in packed_grad[base..base + cin]
                    .iter_mut()
                    .zip(gin.iter_mut())
                    .zip(x.iter().zip(&packed[base..base + cin]))
                {
                    *gw += gv * xv;
                    *gi += gv * wv;
                }
            }
        }
    }

    let mut grad_weights = vec![F::zero(); packed.len()];
    for o in 0..cout {
        for i in 0..cin {
            for j in 0..k {
                grad_weights[(o * cin + i) * k + j] = packed_grad[(j * cout + o) * cin + i];
            }
        }
    }
    Ok(ConvGrads {
        grad_input,
        grad_weights,
        grad_bias,
    })
}

/// Fan-in uniform initialization: weights in `[-a, a]` with `a = 1/sqrt(c_in·k)`,
/// drawn in `[out][in][tap]` order (one draw each); bias zero.
pub fn init_conv_params<F: Real>(spec: &ConvLayerSpec, rng: &mut Rng) -> Result<ConvLayerParams<F>> {
    spec.validate()?;
    let bound = 1.0 / ((spec.in_channels * spec.kernel) as f64).sqrt();
    let weights = (0..spec.weight_count())
        .map(|_| F::from_f64_lossy(rng.uniform(-bound, bound)))
        .collect();
    Ok(ConvLayerParams {
        weights,
        bias: vec![F::zero(); spec.out_channels],
    })
}
