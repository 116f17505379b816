use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ParamSet, Tape, Var};
use crate::array::DenseArray;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    v
                } else {
                    0.0
                }
            }
            Activation::Tanh => v.tanh(),
        }
    }
}

/// FNV-1a, used to derive per-network init streams from names.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Fully connected network: linear layers with an activation between them
/// and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    name: String,
    params: ParamSet,
    activation: Activation,
}

impl Mlp {
    /// Uniform(−1/√fan_in, 1/√fan_in) init for weights and biases, seeded by
    /// `seed` and the network name.
    pub fn new(name: &str, dims: &[usize], activation: Activation, seed: u64) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(name));
        let mut params = ParamSet::new();
        for (l, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut sample = |n: usize| -> Vec<f64> {
                (0..n)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect()
            };
            let w = DenseArray::from_vec(fan_in, fan_out, sample(fan_in * fan_out))
                .expect("sized by construction");
            let b = DenseArray::from_vec(1, fan_out, sample(fan_out)).expect("sized");
            params.push(format!("{name}.{l}.w"), w);
            params.push(format!("{name}.{l}.b"), b);
        }
        Self {
            name: name.into(),
            params,
            activation,
        }
    }

    /// Wrap existing parameters, laid out as `[w0, b0, w1, b1, ...]`.
    pub fn from_params(name: &str, params: ParamSet, activation: Activation) -> Result<Self> {
        if params.is_empty() || params.len() % 2 != 0 {
            return Err(Error::Config(format!(
                "network {name}: expected weight/bias pairs, got {} arrays",
                params.len()
            )));
        }
        let mlp = Self {
            name: name.into(),
            params,
            activation,
        };
        mlp.check_layers()?;
        Ok(mlp)
    }

    fn check_layers(&self) -> Result<()> {
        let mut width = self.input_dim();
        for l in 0..self.num_layers() {
            let (w, b) = (self.params.value(2 * l), self.params.value(2 * l + 1));
            if w.rows() != width {
                return Err(Error::LayerDimension {
                    layer: l,
                    expected: w.rows(),
                    found: width,
                });
            }
            if b.shape() != (1, w.cols()) {
                return Err(Error::Shape {
                    context: "bias",
                    expected: (1, w.cols()),
                    found: b.shape(),
                });
            }
            width = w.cols();
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_layers(&self) -> usize {
        self.params.len() / 2
    }

    pub fn input_dim(&self) -> usize {
        self.params.value(0).rows()
    }

    pub fn output_dim(&self) -> usize {
        self.params.value(self.params.len() - 2).cols()
    }

    /// Register the parameters on `tape`, as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let layers = (0..self.num_layers())
            .map(|l| {
                let (wn, w) = (self.params.name(2 * l), self.params.value(2 * l));
                let (bn, b) = (self.params.name(2 * l + 1), self.params.value(2 * l + 1));
                if trainable {
                    (tape.param(wn, w.clone()), tape.param(bn, b.clone()))
                } else {
                    (tape.constant(w.clone()), tape.constant(b.clone()))
                }
            })
            .collect();
        BoundMlp {
            layers,
            activation: self.activation,
        }
    }

    /// Tape-free evaluation, used for rollouts and metrics.
    pub fn forward(&self, input: &DenseArray) -> Result<DenseArray> {
        self.check_layers()?;
        if input.cols() != self.input_dim() {
            return Err(Error::LayerDimension {
                layer: 0,
                expected: self.input_dim(),
                found: input.cols(),
            });
        }
        let last = self.num_layers() - 1;
        let mut h = input.clone();
        for l in 0..=last {
            let mut next = h.matmul(self.params.value(2 * l))?;
            let b = self.params.value(2 * l + 1);
            for r in 0..next.rows() {
                for (o, bv) in next.row_mut(r).iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
            if l < last {
                let act = self.activation;
                next.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
            }
            h = next;
        }
        Ok(h)
    }
}

/// An [`Mlp`] whose parameters live on a tape.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
    activation: Activation,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        let mut h = input;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let expected = tape.value(w).rows();
            let found = tape.value(h).cols();
            if expected != found {
                return Err(Error::LayerDimension {
                    layer: l,
                    expected,
                    found,
                });
            }
            let z = tape.matmul(h, w)?;
            h = tape.add_row(z, b)?;
            if l < last {
                h = match self.activation {
                    Activation::Relu => tape.relu(h),
                    Activation::Tanh => tape.tanh(h),
                };
            }
        }
        Ok(h)
    }
}

/// Forward pass of the network described by `params` (layout
/// `[w0, b0, w1, b1, ...]`), returning the output and a tape whose output
/// node is the network output.
pub fn forward_mlp(
    params: &ParamSet,
    input: &DenseArray,
    nonlinearity: Activation,
) -> Result<(DenseArray, Tape)> {
    let mlp = Mlp::from_params("mlp", params.clone(), nonlinearity)?;
    if input.cols() != mlp.input_dim() {
        return Err(Error::LayerDimension {
            layer: 0,
            expected: mlp.input_dim(),
            found: input.cols(),
        });
    }
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let layers = (0..mlp.num_layers())
        .map(|l| {
            (
                tape.param(params.name(2 * l), params.value(2 * l).clone()),
                tape.param(params.name(2 * l + 1), params.value(2 * l + 1).clone()),
            )
        })
        .collect();
    let bound = BoundMlp {
        layers,
        activation: nonlinearity,
    };
    let out = bound.forward(&mut tape, x)?;
    tape.set_output(out);
    Ok((tape.value(out).clone(), tape))
}
