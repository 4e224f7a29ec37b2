//! Feedforward ReLU networks: JSON schema, compilation into a DAG of affine,
//! ReLU and addition nodes, concrete evaluation and interval propagation.
//!
//! Schema:
//!
//! ```json
//! {"input_shape": [C, H, W],
//!  "layers": [{"kind": "conv2d", "weights": [[[[...]]]], "bias": [...], "stride": 1, "padding": 0},
//!             {"kind": "relu"},
//!             {"kind": "flatten"},
//!             {"kind": "dense", "weights": [[...]], "bias": [...]},
//!             {"kind": "residual_add", "from": 2}]}
//! ```
//!
//! Dense weights are `[out][in]`; convolution kernels `[out][in][kh][kw]`.
//! Values are laid out channel-major (`c·H·W + y·W + x`). `residual_add`
//! adds the output of node `from` to the running value, where node `0` is the
//! network input and node `k ≥ 1` is the output of layer `k − 1`.
//! `input_shape` may be omitted when the first layer is dense.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
    },
    Relu,
    Conv2d {
        weights: Vec<Vec<Vec<Vec<f64>>>>,
        bias: Vec<f64>,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Flatten,
    ResidualAdd {
        from: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_shape: Option<[usize; 3]>,
    pub layers: Vec<LayerSpec>,
}

/// Sparse affine map `y_r = bias_r + Σ w · x_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input,
    Affine { src: usize, map: Affine },
    Relu { src: usize },
    Add { a: usize, b: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub op: Op,
    pub len: usize,
    pub shape: Option<[usize; 3]>,
}

/// A compiled network. Node `0` is the input; every other node depends only
/// on lower-numbered nodes, and the last node holds the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    nodes: Vec<Node>,
}

impl Network {
    pub fn from_spec(spec: NetworkSpec) -> Result<Self> {
        let fail = |layer: usize, msg: String| Error::format("network", format!("layer {layer}: {msg}"));
        if spec.layers.is_empty() {
            return Err(Error::format("network", "empty layer list"));
        }
        let (input_len, input_shape) = match (&spec.input_shape, spec.layers.first()) {
            (Some(s), _) => {
                if s.iter().any(|&d| d == 0) {
                    return Err(Error::format("network", "input_shape entries must be positive"));
                }
                (s[0] * s[1] * s[2], Some(*s))
            }
            (None, Some(LayerSpec::Dense { weights, .. })) => {
                (weights.first().map_or(0, Vec::len), None)
            }
            (None, _) => {
                return Err(Error::format("network", "input_shape is required unless the first layer is dense"))
            }
        };
        if input_len == 0 {
            return Err(Error::format("network", "network input is empty"));
        }
        let mut nodes = vec![Node {
            op: Op::Input,
            len: input_len,
            shape: input_shape,
        }];
        // layer_node[k] = compiled node holding the output of node id k
        // (0 = input, k = output of layer k-1).
        let mut layer_node = vec![0usize];
        let mut layer_shape = vec![input_shape];
        for (li, layer) in spec.layers.iter().enumerate() {
            let cur = *layer_node.last().unwrap();
            let (len, shape) = (nodes[cur].len, *layer_shape.last().unwrap());
            let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
            let node = match layer {
                LayerSpec::Dense { weights, bias } => {
                    if weights.len() != bias.len() || weights.is_empty() {
                        return Err(fail(li, format!("{} weight rows but {} biases", weights.len(), bias.len())));
                    }
                    if let Some(r) = weights.iter().position(|row| row.len() != len) {
                        return Err(fail(li, format!("weight row {r} has {} entries, expected {len}", weights[r].len())));
                    }
                    if !weights.iter().all(|r| finite(r)) || !finite(bias) {
                        return Err(fail(li, "non-finite parameter".into()));
                    }
                    let rows = weights
                        .iter()
                        .map(|row| row.iter().copied().enumerate().filter(|&(_, w)| w != 0.0).collect())
                        .collect();
                    Some(Node {
                        op: Op::Affine {
                            src: cur,
                            map: Affine {
                                rows,
                                bias: bias.clone(),
                            },
                        },
                        len: bias.len(),
                        shape: None,
                    })
                }
                LayerSpec::Relu => Some(Node {
                    op: Op::Relu { src: cur },
                    len,
                    shape,
                }),
                LayerSpec::Flatten => None,
                LayerSpec::Conv2d {
                    weights,
                    bias,
                    stride,
                    padding,
                } => {
                    let Some([c_in, h, w]) = shape else {
                        return Err(fail(li, "convolution needs a shaped (C, H, W) input".into()));
                    };
                    let (map, out_shape) = lower_conv(weights, bias, *stride, *padding, [c_in, h, w])
                        .map_err(|m| fail(li, m))?;
                    Some(Node {
                        op: Op::Affine { src: cur, map },
                        len: out_shape[0] * out_shape[1] * out_shape[2],
                        shape: Some(out_shape),
                    })
                }
                LayerSpec::ResidualAdd { from } => {
                    if *from > li {
                        return Err(fail(li, format!("residual source {from} is not an earlier node")));
                    }
                    let other = layer_node[*from];
                    if nodes[other].len != len {
                        return Err(fail(
                            li,
                            format!("residual source has {} values, expected {len}", nodes[other].len),
                        ));
                    }
                    Some(Node {
                        op: Op::Add { a: cur, b: other },
                        len,
                        shape,
                    })
                }
            };
            match node {
                Some(n) => {
                    layer_shape.push(n.shape);
                    nodes.push(n);
                    layer_node.push(nodes.len() - 1);
                }
                // Flatten only forgets the shape.
                None => {
                    layer_shape.push(None);
                    layer_node.push(cur);
                }
            }
        }
        if nodes.len() == 1 {
            return Err(Error::format("network", "network has no computing layer"));
        }
        Ok(Network { spec, nodes })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: NetworkSpec = serde_json::from_str(&text).map_err(|e| Error::format(&name, e.to_string()))?;
        Network::from_spec(spec).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(name, message),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.spec).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn input_len(&self) -> usize {
        self.nodes[0].len
    }

    pub fn output_len(&self) -> usize {
        self.nodes.last().unwrap().len
    }

    pub fn output_node(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Number of ReLU neurons.
    pub fn relu_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n.op, Op::Relu { .. })).map(|n| n.len).sum()
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_len() {
            return Err(Error::Contract(format!(
                "network expects {} inputs, got {len}",
                self.input_len()
            )));
        }
        Ok(())
    }

    /// Values of every node for a concrete input.
    pub fn activations(&self, input: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(input.len())?;
        let mut vals: Vec<Vec<f64>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Input => input.to_vec(),
                Op::Affine { src, map } => {
                    let x = &vals[*src];
                    map.rows
                        .iter()
                        .zip(&map.bias)
                        .map(|(row, &b)| row.iter().fold(b, |acc, &(k, w)| acc + w * x[k]))
                        .collect()
                }
                Op::Relu { src } => vals[*src].iter().map(|&z| z.max(0.0)).collect(),
                Op::Add { a, b } => vals[*a].iter().zip(&vals[*b]).map(|(x, y)| x + y).collect(),
            };
            vals.push(v);
        }
        Ok(vals)
    }

    /// Logits for a concrete input (channel-major).
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.activations(input)?.pop().unwrap())
    }

    /// Interval bounds of every node by interval arithmetic.
    pub fn interval_bounds(&self, lower: &[f64], upper: &[f64]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        self.check_input(lower.len())?;
        self.check_input(upper.len())?;
        let mut out: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let b = match &node.op {
                Op::Input => (lower.to_vec(), upper.to_vec()),
                Op::Affine { src, map } => {
                    let (l, u) = &out[*src];
                    let mut lo = map.bias.clone();
                    let mut hi = map.bias.clone();
                    for (r, row) in map.rows.iter().enumerate() {
                        for &(k, w) in row {
                            if w >= 0.0 {
                                lo[r] += w * l[k];
                                hi[r] += w * u[k];
                            } else {
                                lo[r] += w * u[k];
                                hi[r] += w * l[k];
                            }
                        }
                    }
                    (lo, hi)
                }
                Op::Relu { src } => {
                    let (l, u) = &out[*src];
                    (l.iter().map(|v| v.max(0.0)).collect(), u.iter().map(|v| v.max(0.0)).collect())
                }
                Op::Add { a, b } => {
                    let (la, ua) = &out[*a];
                    let (lb, ub) = &out[*b];
                    (
                        la.iter().zip(lb).map(|(x, y)| x + y).collect(),
                        ua.iter().zip(ub).map(|(x, y)| x + y).collect(),
                    )
                }
            };
            out.push(b);
        }
        Ok(out)
    }
}

fn lower_conv(
    weights: &[Vec<Vec<Vec<f64>>>],
    bias: &[f64],
    stride: usize,
    padding: usize,
    [c_in, h, w]: [usize; 3],
) -> std::result::Result<(Affine, [usize; 3]), String> {
    let c_out = weights.len();
    if c_out == 0 || bias.len() != c_out {
        return Err(format!("{c_out} kernels but {} biases", bias.len()));
    }
    if stride == 0 {
        return Err("stride must be positive".into());
    }
    let kh = weights[0].first().map_or(0, Vec::len);
    let kw = weights[0].first().and_then(|k| k.first()).map_or(0, Vec::len);
    if kh == 0 || kw == 0 {
        return Err("empty convolution kernel".into());
    }
    for (o, kernel) in weights.iter().enumerate() {
        if kernel.len() != c_in {
            return Err(format!("kernel {o} has {} input channels, expected {c_in}", kernel.len()));
        }
        if kernel.iter().any(|k| k.len() != kh || k.iter().any(|r| r.len() != kw || r.iter().any(|v| !v.is_finite())))
        {
            return Err(format!("kernel {o} is ragged or non-finite"));
        }
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err("kernel larger than the padded input".into());
    }
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut rows = Vec::with_capacity(c_out * oh * ow);
    let mut out_bias = Vec::with_capacity(c_out * oh * ow);
    for (o, kernel) in weights.iter().enumerate() {
        for y in 0..oh {
            for x in 0..ow {
                let mut row = Vec::new();
                for (c, plane) in kernel.iter().enumerate() {
                    for (ky, krow) in plane.iter().enumerate() {
                        let iy = (y * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for (kx, &wgt) in krow.iter().enumerate() {
                            let ix = (x * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize || wgt == 0.0 {
                                continue;
                            }
                            row.push((c * h * w + iy as usize * w + ix as usize, wgt));
                        }
                    }
                }
                rows.push(row);
                out_bias.push(bias[o]);
            }
        }
    }
    Ok((Affine { rows, bias: out_bias }, [c_out, oh, ow]))
}
