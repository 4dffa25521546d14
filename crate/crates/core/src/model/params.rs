use super::Hyperparams;
use crate::numerics::{LstmWeights, ParamId, Rng, Scalar, Tensor};
use crate::{Error, Result};

/// Where each parameter group lives in [`Parameters::tensors`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub embedding: ParamId,
    /// `[layer][direction]`, direction 0 is left-to-right.
    pub encoder: [[LstmWeights; 2]; 2],
    pub bridge_h: (ParamId, ParamId),
    pub bridge_c: (ParamId, ParamId),
    pub decoder: LstmWeights,
    pub att_w_eh: ParamId,
    pub att_w_sh: ParamId,
    pub att_w_cv: ParamId,
    pub att_b: ParamId,
    pub att_v: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub gate_c: ParamId,
    pub gate_s: ParamId,
    pub gate_x: ParamId,
    pub gate_b: ParamId,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    bias: bool,
}

fn layout_and_specs(h: &Hyperparams) -> (Layout, Vec<Spec>) {
    let (e, hd, v) = (h.embed_dim, h.hidden, h.vocab_size);
    let att = hd;
    let mut specs: Vec<Spec> = Vec::new();
    let mut add = |name: String, shape: &[usize], bias: bool| {
        specs.push(Spec {
            name,
            shape: shape.to_vec(),
            bias,
        });
        ParamId(specs.len() - 1)
    };
    let embedding = add("embedding".into(), &[v, e], false);
    let mut lstm = |name: &str, input: usize| LstmWeights {
        w: add(format!("{name}.w"), &[4 * hd, input + hd], false),
        b: add(format!("{name}.b"), &[4 * hd], true),
    };
    let encoder = [
        [lstm("encoder.l1.fw", e), lstm("encoder.l1.bw", e)],
        [lstm("encoder.l2.fw", 2 * hd), lstm("encoder.l2.bw", 2 * hd)],
    ];
    let decoder = lstm("decoder", e);
    let layout = Layout {
        embedding,
        encoder,
        decoder,
        bridge_h: (
            add("bridge.h.w".into(), &[hd, 2 * hd], false),
            add("bridge.h.b".into(), &[hd], true),
        ),
        bridge_c: (
            add("bridge.c.w".into(), &[hd, 2 * hd], false),
            add("bridge.c.b".into(), &[hd], true),
        ),
        att_w_eh: add("attention.w_eh".into(), &[att, 2 * hd], false),
        att_w_sh: add("attention.w_sh".into(), &[att, hd], false),
        att_w_cv: add("attention.w_cv".into(), &[att], false),
        att_b: add("attention.b".into(), &[att], true),
        att_v: add("attention.v".into(), &[att], false),
        out_w: add("output.w".into(), &[v, 3 * hd], false),
        out_b: add("output.b".into(), &[v], true),
        gate_c: add("copy_gate.w_c".into(), &[2 * hd], false),
        gate_s: add("copy_gate.w_s".into(), &[hd], false),
        gate_x: add("copy_gate.w_x".into(), &[e], false),
        gate_b: add("copy_gate.b".into(), &[1], true),
    };
    (layout, specs)
}

/// Every learnable tensor of the model, in a fixed manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T> {
    tensors: Vec<Tensor<T>>,
    names: Vec<String>,
    layout: Layout,
}

impl<T: Scalar> Parameters<T> {
    /// Weights drawn from `uniform(-r, r)` with `r = hyper.init_range`, biases zero.
    pub fn init(hyper: &Hyperparams, rng: &mut Rng) -> Result<Self> {
        hyper.validate()?;
        let (layout, specs) = layout_and_specs(hyper);
        let tensors = specs
            .iter()
            .map(|s| {
                if s.bias {
                    Tensor::zeros(&s.shape)
                } else {
                    Tensor::uniform(&s.shape, -hyper.init_range, hyper.init_range, rng)
                }
            })
            .collect();
        Ok(Parameters {
            tensors,
            names: specs.into_iter().map(|s| s.name).collect(),
            layout,
        })
    }

    pub fn zeros(hyper: &Hyperparams) -> Result<Self> {
        hyper.validate()?;
        let (layout, specs) = layout_and_specs(hyper);
        Ok(Parameters {
            tensors: specs.iter().map(|s| Tensor::zeros(&s.shape)).collect(),
            names: specs.into_iter().map(|s| s.name).collect(),
            layout,
        })
    }

    /// Rebuilds parameters from named tensors, checking names and shapes against `hyper`.
    pub fn from_named(hyper: &Hyperparams, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let expected = Self::zeros(hyper)?;
        if named.len() != expected.tensors.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {}",
                expected.tensors.len(),
                named.len()
            )));
        }
        for ((name, t), (want_name, want)) in named.iter().zip(expected.names.iter().zip(&expected.tensors)) {
            if name != want_name || t.shape() != want.shape() {
                return Err(Error::Format(format!(
                    "tensor {name} {:?} does not match expected {want_name} {:?}",
                    t.shape(),
                    want.shape()
                )));
            }
        }
        Ok(Parameters {
            tensors: named.into_iter().map(|(_, t)| t).collect(),
            ..expected
        })
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Zero tensors shaped like the parameters, for gradient accumulation.
    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        Parameters {
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            names: self.names.clone(),
            layout: self.layout.clone(),
        }
    }

    /// All parameters as one flat vector, in manifest order.
    pub fn flatten(&self) -> Vec<T> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::Shape {
                op: "assign_flat",
                left: vec![flat.len()],
                right: vec![self.num_scalars()],
            });
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}
