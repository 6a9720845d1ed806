use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numcore::tensor::{check_finite, DenseTensor};
use crate::scalar::Scalar;
use crate::weightalg::{ParamSet, TensorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Silu,
}

impl Activation {
    fn apply<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Silu => z / (S::one() + (-z).exp()),
        }
    }

    /// Derivative given the pre-activation `z` and output `a`.
    fn derivative<S: Scalar>(self, z: S, a: S) -> S {
        match self {
            Activation::Tanh => S::one() - a * a,
            Activation::Silu => {
                let s = S::one() / (S::one() + (-z).exp());
                s * (S::one() + z * (S::one() - s))
            }
        }
    }
}

/// Fully connected network: affine layers with the activation between them
/// and a linear output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_dims: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

/// Intermediate values of one forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct MlpCache<S> {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Vec<S>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<S>>,
}

impl MlpSpec {
    pub fn new(layer_dims: Vec<usize>, activation: Activation) -> Result<Self> {
        let spec = Self {
            layer_dims,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 || self.layer_dims.iter().any(|&d| d == 0) {
            return Err(LabError::config(format!(
                "MLP needs at least two positive layer dims, got {:?}",
                self.layer_dims
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Tensor names `{prefix}.{l}.weight` (out x in) and `{prefix}.{l}.bias`.
    pub fn manifest(&self, prefix: &str) -> Vec<TensorSpec> {
        self.layer_dims
            .windows(2)
            .enumerate()
            .flat_map(|(l, w)| {
                [
                    TensorSpec::new(format!("{prefix}.{l}.weight"), vec![w[1], w[0]]),
                    TensorSpec::new(format!("{prefix}.{l}.bias"), vec![w[1]]),
                ]
            })
            .collect()
    }

    /// Scaled-normal weights (std `1/sqrt(fan_in)`) and zero biases. With
    /// `zero_output` the last layer starts at zero so the network is constant.
    pub fn init_values<S: Scalar>(&self, rng: &mut impl Rng, zero_output: bool) -> Vec<S> {
        let mut values = Vec::with_capacity(self.param_count());
        let last = self.num_layers() - 1;
        for (l, w) in self.layer_dims.windows(2).enumerate() {
            let std = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] {
                let z: f64 = rng.sample(StandardNormal);
                values.push(if zero_output && l == last {
                    S::zero()
                } else {
                    S::of(z * std)
                });
            }
            values.extend(std::iter::repeat(S::zero()).take(w[1]));
        }
        values
    }

    fn check_lengths<S>(&self, params: &[S], input: &[S]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(LabError::Shape {
                context: "mlp parameters",
                expected: vec![self.param_count()],
                actual: vec![params.len()],
            });
        }
        if input.len() != self.input_dim() {
            return Err(LabError::Shape {
                context: "mlp input",
                expected: vec![self.input_dim()],
                actual: vec![input.len()],
            });
        }
        Ok(())
    }

    /// Single-sample forward pass over a flat parameter slice.
    pub fn forward<S: Scalar>(&self, params: &[S], input: &[S]) -> Result<Vec<S>> {
        self.check_lengths(params, input)?;
        let mut a = input.to_vec();
        let mut off = 0;
        let last = self.num_layers() - 1;
        for (l, w) in self.layer_dims.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weight = &params[off..off + n_in * n_out];
            let bias = &params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let mut z = affine(weight, bias, &a, n_in);
            if l != last {
                for v in z.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            }
            a = z;
        }
        Ok(a)
    }

    pub fn forward_cached<S: Scalar>(
        &self,
        params: &[S],
        input: &[S],
    ) -> Result<(Vec<S>, MlpCache<S>)> {
        self.check_lengths(params, input)?;
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.num_layers()),
            pre: Vec::with_capacity(self.num_layers() - 1),
        };
        let mut a = input.to_vec();
        let mut off = 0;
        let last = self.num_layers() - 1;
        for (l, w) in self.layer_dims.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weight = &params[off..off + n_in * n_out];
            let bias = &params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let z = affine(weight, bias, &a, n_in);
            cache.inputs.push(a);
            if l != last {
                let act = z.iter().map(|&v| self.activation.apply(v)).collect();
                cache.pre.push(z);
                a = act;
            } else {
                a = z;
            }
        }
        Ok((a, cache))
    }

    /// Accumulates `d loss / d params` into `grad_params` given `d loss / d output`,
    /// and returns `d loss / d input`.
    pub fn backward<S: Scalar>(
        &self,
        params: &[S],
        cache: &MlpCache<S>,
        grad_out: &[S],
        grad_params: &mut [S],
    ) -> Vec<S> {
        debug_assert_eq!(grad_params.len(), params.len());
        debug_assert_eq!(grad_out.len(), self.output_dim());
        let mut offsets = Vec::with_capacity(self.num_layers());
        let mut off = 0;
        for w in self.layer_dims.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut g = grad_out.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let off = offsets[l];
            let x = &cache.inputs[l];
            let weight = &params[off..off + n_in * n_out];
            {
                let (gw, gb) = grad_params[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let go = g[o];
                    gb[o] += go;
                    let row = &mut gw[o * n_in..(o + 1) * n_in];
                    for (r, &xi) in row.iter_mut().zip(x) {
                        *r += go * xi;
                    }
                }
            }
            let mut gx = vec![S::zero(); n_in];
            for o in 0..n_out {
                let go = g[o];
                let row = &weight[o * n_in..(o + 1) * n_in];
                for (acc, &w) in gx.iter_mut().zip(row) {
                    *acc += go * w;
                }
            }
            if l > 0 {
                let pre = &cache.pre[l - 1];
                for ((gi, &z), &a) in gx.iter_mut().zip(pre).zip(x) {
                    *gi *= self.activation.derivative(z, a);
                }
            }
            g = gx;
        }
        g
    }
}

fn affine<S: Scalar>(weight: &[S], bias: &[S], x: &[S], n_in: usize) -> Vec<S> {
    bias.iter()
        .enumerate()
        .map(|(o, &b)| {
            let row = &weight[o * n_in..(o + 1) * n_in];
            row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi)
        })
        .collect()
}

/// Batched forward pass: `input` is `[n, in]` (or a single `[in]` vector).
pub fn mlp_forward<S: Scalar>(
    params: &ParamSet<S>,
    spec: &MlpSpec,
    input: &DenseTensor<S>,
) -> Result<DenseTensor<S>> {
    spec.validate()?;
    if params.len() != spec.param_count() {
        return Err(LabError::Shape {
            context: "mlp parameters",
            expected: vec![spec.param_count()],
            actual: vec![params.len()],
        });
    }
    if input.cols() != spec.input_dim() {
        return Err(LabError::Shape {
            context: "mlp input",
            expected: vec![spec.input_dim()],
            actual: vec![input.cols()],
        });
    }
    let rows = input.rows();
    let mut out = Vec::with_capacity(rows * spec.output_dim());
    for i in 0..rows {
        out.extend(spec.forward(params.values(), input.row(i))?);
    }
    check_finite("mlp output", &out)?;
    let shape = if input.shape().len() == 1 {
        vec![spec.output_dim()]
    } else {
        vec![rows, spec.output_dim()]
    };
    Ok(DenseTensor::from_parts_unchecked(shape, out))
}
