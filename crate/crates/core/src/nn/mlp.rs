use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{accumulate_gt_x, matmul_g_wcols, matmul_xwt, Matrix};
use crate::error::{Error, Result};

/// How the last affine layer's output is transformed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputActivation {
    /// Identity; critics.
    Linear,
    /// `scale * tanh(z)`; deterministic actors.
    ScaledTanh { scale: f64 },
    /// First half of the outputs is a mean, second half a log-std clamped to
    /// `[log_std_min, log_std_max]`; stochastic actors.
    MeanLogStd { log_std_min: f64, log_std_max: f64 },
}

/// Architecture of a tanh multilayer perceptron.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub output: OutputActivation,
}

impl PolicySpec {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize, output: OutputActivation) -> Self {
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            output,
        }
    }

    /// `(fan_in, fan_out)` for each affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        match self.output {
            OutputActivation::MeanLogStd {
                log_std_min,
                log_std_max,
            } => {
                if self.output_dim % 2 != 0 || log_std_min >= log_std_max {
                    return Err(Error::InvalidConfig(
                        "mean/log-std head needs an even width and min < max".into(),
                    ));
                }
            }
            OutputActivation::ScaledTanh { scale } if !(scale > 0.0) => {
                return Err(Error::InvalidConfig("tanh scale must be positive".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct LayerView {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

fn layer_views(spec: &PolicySpec) -> Vec<LayerView> {
    let mut offset = 0;
    spec.layer_dims()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let view = LayerView {
                fan_in,
                fan_out,
                w: offset,
                b: offset + fan_in * fan_out,
            };
            offset += fan_in * fan_out + fan_out;
            view
        })
        .collect()
}

/// Network architecture plus its flat parameter vector. Each layer stores its
/// weight matrix (`fan_out × fan_in`, row-major) followed by its bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub spec: PolicySpec,
    pub values: Vec<f64>,
}

impl NetParams {
    pub fn zeros(spec: PolicySpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.param_count();
        Ok(Self {
            spec,
            values: vec![0.0; n],
        })
    }

    pub fn from_values(spec: PolicySpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.param_count() {
            return Err(Error::DimensionMismatch {
                expected: spec.param_count(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(Self { spec, values })
    }

    /// Fan-in uniform initialisation; the output layer uses `±final_scale`.
    pub fn init<R: Rng + ?Sized>(spec: PolicySpec, final_scale: f64, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(spec)?;
        let views = layer_views(&p.spec);
        let last = views.len() - 1;
        for (idx, v) in views.iter().enumerate() {
            let bound = if idx == last {
                final_scale
            } else {
                1.0 / (v.fan_in as f64).sqrt()
            };
            for x in &mut p.values[v.w..v.b + v.fan_out] {
                *x = rng.random_range(-bound..=bound);
            }
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Weight matrix and bias of layer `idx`.
    pub fn layer(&self, idx: usize) -> (&[f64], &[f64]) {
        let v = layer_views(&self.spec)[idx];
        (&self.values[v.w..v.b], &self.values[v.b..v.b + v.fan_out])
    }

    pub fn layer_mut(&mut self, idx: usize) -> (&mut [f64], &mut [f64]) {
        let v = layer_views(&self.spec)[idx];
        let (w, rest) = self.values[v.w..v.b + v.fan_out].split_at_mut(v.b - v.w);
        (w, rest)
    }

    /// Polyak average `self ← tau·source + (1 − tau)·self`.
    pub fn soft_update_from(&mut self, source: &NetParams, tau: f64) {
        debug_assert_eq!(self.values.len(), source.values.len());
        for (t, &s) in self.values.iter_mut().zip(&source.values) {
            *t = tau * s + (1.0 - tau) * *t;
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Affine { layer: usize, src: usize },
    Tanh { src: usize },
    ScaledTanh { src: usize, scale: f64 },
    ClampTail { src: usize, from: usize, lo: f64, hi: f64 },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Matrix,
}

/// Which columns of the input gradient `backward` should produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputGrad {
    None,
    All,
    Columns(usize, usize),
}

#[derive(Debug)]
pub struct Gradients {
    /// Same layout as [`NetParams::values`].
    pub params: Vec<f64>,
    /// Present when requested; covers only the requested columns.
    pub input: Option<Matrix>,
}

/// Operation graph recorded during one forward pass. Consumed by
/// [`Tape::backward`], so a tape cannot be replayed twice.
#[derive(Debug)]
pub struct Tape<'a> {
    params: &'a NetParams,
    nodes: Vec<Node>,
}

fn check_input(params: &NetParams, input: &Matrix) -> Result<()> {
    if input.cols() != params.spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: params.spec.input_dim,
            got: input.cols(),
        });
    }
    Ok(())
}

fn affine(params: &NetParams, view: LayerView, x: &Matrix) -> Matrix {
    let rows = x.rows();
    let mut out = Matrix::zeros(rows, view.fan_out);
    let w = &params.values[view.w..view.b];
    let b = &params.values[view.b..view.b + view.fan_out];
    matmul_xwt(x.as_slice(), w, out.as_mut_slice(), rows, view.fan_in, view.fan_out);
    for r in 0..rows {
        for (o, &bias) in out.row_mut(r).iter_mut().zip(b) {
            *o += bias;
        }
    }
    out
}

fn apply_output(act: &OutputActivation, z: &Matrix) -> Matrix {
    match *act {
        OutputActivation::Linear => z.clone(),
        OutputActivation::ScaledTanh { scale } => z.map(|v| scale * v.tanh()),
        OutputActivation::MeanLogStd {
            log_std_min,
            log_std_max,
        } => {
            let half = z.cols() / 2;
            let mut out = z.clone();
            for r in 0..out.rows() {
                for v in &mut out.row_mut(r)[half..] {
                    *v = v.clamp(log_std_min, log_std_max);
                }
            }
            out
        }
    }
}

/// Batched forward pass without recording; rows of `input` are samples.
pub fn mlp_predict(params: &NetParams, input: &Matrix) -> Result<Matrix> {
    check_input(params, input)?;
    let views = layer_views(&params.spec);
    let mut h = affine(params, views[0], input);
    for &v in views.iter().skip(1) {
        h = h.map(f64::tanh);
        h = affine(params, v, &h);
    }
    Ok(apply_output(&params.spec.output, &h))
}

/// Batched forward pass that records a [`Tape`] for reverse-mode differentiation.
pub fn mlp_forward_batch<'a>(params: &'a NetParams, input: Matrix) -> Result<(Matrix, Tape<'a>)> {
    check_input(params, &input)?;
    let views = layer_views(&params.spec);
    let last = views.len() - 1;
    let mut nodes = vec![Node {
        op: Op::Input,
        value: input,
    }];
    for (idx, &v) in views.iter().enumerate() {
        let src = nodes.len() - 1;
        let z = affine(params, v, &nodes[src].value);
        nodes.push(Node {
            op: Op::Affine { layer: idx, src },
            value: z,
        });
        let src = nodes.len() - 1;
        if idx < last {
            let h = nodes[src].value.map(f64::tanh);
            nodes.push(Node {
                op: Op::Tanh { src },
                value: h,
            });
        } else {
            match params.spec.output {
                OutputActivation::Linear => {}
                OutputActivation::ScaledTanh { scale } => {
                    let y = nodes[src].value.map(|z| scale * z.tanh());
                    nodes.push(Node {
                        op: Op::ScaledTanh { src, scale },
                        value: y,
                    });
                }
                OutputActivation::MeanLogStd {
                    log_std_min,
                    log_std_max,
                } => {
                    let y = apply_output(&params.spec.output, &nodes[src].value);
                    nodes.push(Node {
                        op: Op::ClampTail {
                            src,
                            from: params.spec.output_dim / 2,
                            lo: log_std_min,
                            hi: log_std_max,
                        },
                        value: y,
                    });
                }
            }
        }
    }
    let out = nodes.last().expect("non-empty tape").value.clone();
    Ok((out, Tape { params, nodes }))
}

/// Single-sample forward pass.
pub fn mlp_forward<'a>(params: &'a NetParams, input: &[f64]) -> Result<(Vec<f64>, Tape<'a>)> {
    let x = Matrix::from_vec(1, input.len(), input.to_vec())?;
    let (y, tape) = mlp_forward_batch(params, x)?;
    Ok((y.into_vec(), tape))
}

impl<'a> Tape<'a> {
    /// Gradient of `Σ output_grad ⊙ output` with respect to the parameters.
    pub fn backward(self, output_grad: &[f64]) -> Result<Vec<f64>> {
        let g = Matrix::from_vec(1, output_grad.len(), output_grad.to_vec())?;
        Ok(self.backward_batch(&g, InputGrad::None)?.params)
    }

    /// Reverse sweep over the recorded graph; each node is visited once, in
    /// reverse recording order (which is a topological order).
    pub fn backward_batch(self, output_grad: &Matrix, want_input: InputGrad) -> Result<Gradients> {
        self.sweep(output_grad, want_input, true)
    }

    /// Input-gradient columns `[c0, c1)` only; parameter gradients are skipped.
    pub fn backward_inputs(self, output_grad: &Matrix, c0: usize, c1: usize) -> Result<Matrix> {
        let g = self.sweep(output_grad, InputGrad::Columns(c0, c1), false)?;
        Ok(g.input.expect("input gradient requested"))
    }

    fn sweep(self, output_grad: &Matrix, want_input: InputGrad, want_params: bool) -> Result<Gradients> {
        let Tape { params, nodes } = self;
        let out = &nodes.last().expect("non-empty tape").value;
        if output_grad.rows() != out.rows() || output_grad.cols() != out.cols() {
            return Err(Error::DimensionMismatch {
                expected: out.rows() * out.cols(),
                got: output_grad.rows() * output_grad.cols(),
            });
        }
        let views = layer_views(&params.spec);
        let mut grad_params = vec![0.0; if want_params { params.values.len() } else { 0 }];
        let mut grads: Vec<Option<Matrix>> = (0..nodes.len()).map(|_| None).collect();
        *grads.last_mut().expect("non-empty") = Some(output_grad.clone());
        let mut input_grad = None;

        for idx in (0..nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match nodes[idx].op {
                Op::Input => {
                    input_grad = Some(g);
                }
                Op::Tanh { src } => {
                    let y = &nodes[idx].value;
                    let mut d = g;
                    for (dv, &yv) in d.as_mut_slice().iter_mut().zip(y.as_slice()) {
                        *dv *= 1.0 - yv * yv;
                    }
                    grads[src] = Some(d);
                }
                Op::ScaledTanh { src, scale } => {
                    let y = &nodes[idx].value;
                    let mut d = g;
                    for (dv, &yv) in d.as_mut_slice().iter_mut().zip(y.as_slice()) {
                        let t = yv / scale;
                        *dv *= scale * (1.0 - t * t);
                    }
                    grads[src] = Some(d);
                }
                Op::ClampTail { src, from, lo, hi } => {
                    let z = &nodes[src].value;
                    let mut d = g;
                    for r in 0..d.rows() {
                        let zr = z.row(r);
                        for (c, dv) in d.row_mut(r).iter_mut().enumerate().skip(from) {
                            if zr[c] < lo || zr[c] > hi {
                                *dv = 0.0;
                            }
                        }
                    }
                    grads[src] = Some(d);
                }
                Op::Affine { layer, src } => {
                    let v = views[layer];
                    let x = &nodes[src].value;
                    let rows = x.rows();
                    if want_params {
                        accumulate_gt_x(
                            g.as_slice(),
                            x.as_slice(),
                            &mut grad_params[v.w..v.b],
                            rows,
                            v.fan_out,
                            v.fan_in,
                        );
                        let db = &mut grad_params[v.b..v.b + v.fan_out];
                        for r in 0..rows {
                            for (acc, &gv) in db.iter_mut().zip(g.row(r)) {
                                *acc += gv;
                            }
                        }
                    }
                    let is_input = matches!(nodes[src].op, Op::Input);
                    let (c0, c1) = match (is_input, want_input) {
                        (false, _) => (0, v.fan_in),
                        (true, InputGrad::None) => continue,
                        (true, InputGrad::All) => (0, v.fan_in),
                        (true, InputGrad::Columns(a, b)) => {
                            if a > b || b > v.fan_in {
                                return Err(Error::DimensionMismatch {
                                    expected: v.fan_in,
                                    got: b,
                                });
                            }
                            (a, b)
                        }
                    };
                    let w = &params.values[v.w..v.b];
                    let mut dx = Matrix::zeros(rows, c1 - c0);
                    matmul_g_wcols(g.as_slice(), w, dx.as_mut_slice(), rows, v.fan_out, v.fan_in, c0, c1);
                    grads[src] = Some(dx);
                }
            }
        }
        Ok(Gradients {
            params: grad_params,
            input: input_grad,
        })
    }
}
