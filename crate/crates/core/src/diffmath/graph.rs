//! Scalar losses over network outputs, differentiated in reverse mode.
//!
//! A [`LossGraph`] is a DAG over a closed set of primitives: data columns,
//! constants, free trainable scalars, network applications, `+ - *`,
//! `square`, `mean`, `relu`, `tanh`, `logistic`, `detach` (identity with a
//! blocked gradient), and the squared weight norm of a network. Each node holds either a scalar or a column with one
//! entry per row of a data batch; scalars broadcast against columns.
//!
//! Graphs can be built programmatically through [`LossGraphBuilder`] or from
//! an s-expression such as
//!
//! ```text
//! (mean (square (sub (net 0 0 (col 0 0) (col 0 1)) (col 0 2))))
//! ```

use super::{activation_buffers, check_len, forward_row_into, GradVector, LayerShape, MlpSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Scalar,
    Column(usize),
}

impl Shape {
    fn len(self) -> usize {
        match self {
            Shape::Scalar => 1,
            Shape::Column(n) => n,
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Column {
        batch: usize,
        col: usize,
    },
    Const(f64),
    Scalar(usize),
    Net {
        net: usize,
        output: usize,
        inputs: Vec<NodeId>,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Square(NodeId),
    Mean(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Logistic(NodeId),
    Detach(NodeId),
    WeightNormSq(usize),
}

#[derive(Debug, Clone)]
struct GraphNode {
    op: Op,
    shape: Shape,
}

/// Incremental constructor; every method validates its arguments so a
/// finished graph is always well-formed.
#[derive(Debug, Clone)]
pub struct LossGraphBuilder {
    specs: Vec<MlpSpec>,
    n_scalars: usize,
    batches: Vec<Vec<Vec<f64>>>,
    nodes: Vec<GraphNode>,
}

impl LossGraphBuilder {
    pub fn new(specs: Vec<MlpSpec>, n_scalars: usize) -> Result<Self> {
        for spec in &specs {
            spec.validate()?;
        }
        Ok(LossGraphBuilder {
            specs,
            n_scalars,
            batches: Vec::new(),
            nodes: Vec::new(),
        })
    }

    /// Register a data batch given as columns of equal length.
    pub fn add_batch(&mut self, columns: Vec<Vec<f64>>) -> Result<usize> {
        let rows = columns
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Expression("batch has no columns".into()))?;
        if rows == 0 {
            return Err(Error::Expression("batch has no rows".into()));
        }
        for (c, column) in columns.iter().enumerate() {
            check_len(&format!("batch column {c}"), rows, column.len())?;
            super::check_finite(&format!("batch column {c}"), column)?;
        }
        self.batches.push(columns);
        Ok(self.batches.len() - 1)
    }

    fn push(&mut self, op: Op, shape: Shape) -> NodeId {
        self.nodes.push(GraphNode { op, shape });
        NodeId(self.nodes.len() - 1)
    }

    fn shape_of(&self, id: NodeId) -> Result<Shape> {
        self.nodes
            .get(id.0)
            .map(|n| n.shape)
            .ok_or_else(|| Error::Expression(format!("unknown node {}", id.0)))
    }

    fn broadcast(&self, a: NodeId, b: NodeId) -> Result<Shape> {
        match (self.shape_of(a)?, self.shape_of(b)?) {
            (Shape::Scalar, s) | (s, Shape::Scalar) => Ok(s),
            (Shape::Column(n), Shape::Column(m)) if n == m => Ok(Shape::Column(n)),
            (Shape::Column(n), Shape::Column(m)) => Err(Error::Expression(format!(
                "cannot combine columns of {n} and {m} rows"
            ))),
        }
    }

    pub fn column(&mut self, batch: usize, col: usize) -> Result<NodeId> {
        let columns = self
            .batches
            .get(batch)
            .ok_or_else(|| Error::Expression(format!("unknown batch {batch}")))?;
        let rows = columns
            .get(col)
            .ok_or_else(|| Error::Expression(format!("batch {batch} has no column {col}")))?
            .len();
        Ok(self.push(Op::Column { batch, col }, Shape::Column(rows)))
    }

    pub fn constant(&mut self, value: f64) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::Expression(format!("constant {value} is not finite")));
        }
        Ok(self.push(Op::Const(value), Shape::Scalar))
    }

    pub fn scalar(&mut self, index: usize) -> Result<NodeId> {
        if index >= self.n_scalars {
            return Err(Error::Expression(format!(
                "scalar parameter {index} out of range ({} declared)",
                self.n_scalars
            )));
        }
        Ok(self.push(Op::Scalar(index), Shape::Scalar))
    }

    /// Output component `output` of network `net` applied rowwise to
    /// `inputs` (one node per input dimension).
    pub fn net(&mut self, net: usize, output: usize, inputs: &[NodeId]) -> Result<NodeId> {
        let spec = self
            .specs
            .get(net)
            .ok_or_else(|| Error::Expression(format!("unknown network {net}")))?;
        check_len(
            &format!("inputs of network {net}"),
            spec.input_dim,
            inputs.len(),
        )?;
        if output >= spec.output_dim {
            return Err(Error::Expression(format!(
                "network {net} has no output {output}"
            )));
        }
        let mut shape = Shape::Scalar;
        for &input in inputs {
            match (shape, self.shape_of(input)?) {
                (_, Shape::Scalar) => {}
                (Shape::Scalar, s) => shape = s,
                (Shape::Column(n), Shape::Column(m)) if n == m => {}
                (Shape::Column(n), Shape::Column(m)) => {
                    return Err(Error::Expression(format!(
                        "network {net} inputs have {n} and {m} rows"
                    )))
                }
            }
        }
        Ok(self.push(
            Op::Net {
                net,
                output,
                inputs: inputs.to_vec(),
            },
            shape,
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.broadcast(a, b)?;
        Ok(self.push(Op::Add(a, b), s))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.broadcast(a, b)?;
        Ok(self.push(Op::Sub(a, b), s))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.broadcast(a, b)?;
        Ok(self.push(Op::Mul(a, b), s))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape_of(a)?;
        Ok(self.push(Op::Square(a), s))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.shape_of(a)?;
        Ok(self.push(Op::Mean(a), Shape::Scalar))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape_of(a)?;
        Ok(self.push(Op::Relu(a), s))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape_of(a)?;
        Ok(self.push(Op::Tanh(a), s))
    }

    pub fn logistic(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape_of(a)?;
        Ok(self.push(Op::Logistic(a), s))
    }

    /// Passes values through; no gradient flows back to `a`.
    pub fn detach(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape_of(a)?;
        Ok(self.push(Op::Detach(a), s))
    }

    /// Sum of squared weights (biases excluded) of network `net`.
    pub fn weight_norm_sq(&mut self, net: usize) -> Result<NodeId> {
        if net >= self.specs.len() {
            return Err(Error::Expression(format!("unknown network {net}")));
        }
        Ok(self.push(Op::WeightNormSq(net), Shape::Scalar))
    }

    /// Parse an s-expression and append its nodes.
    pub fn parse(&mut self, src: &str) -> Result<NodeId> {
        let tokens = tokenize(src);
        let mut pos = 0;
        let root = self.parse_expr(&tokens, &mut pos)?;
        if pos != tokens.len() {
            return Err(Error::Expression(format!(
                "unexpected trailing token `{}`",
                tokens[pos]
            )));
        }
        Ok(root)
    }

    fn parse_expr(&mut self, tokens: &[String], pos: &mut usize) -> Result<NodeId> {
        let tok = tokens
            .get(*pos)
            .ok_or_else(|| Error::Expression("unexpected end of input".into()))?;
        *pos += 1;
        if tok == ")" {
            return Err(Error::Expression("unexpected `)`".into()));
        }
        if tok != "(" {
            let value: f64 = tok
                .parse()
                .map_err(|_| Error::Expression(format!("bare atom `{tok}` is not a number")))?;
            return self.constant(value);
        }

        let head = tokens
            .get(*pos)
            .ok_or_else(|| Error::Expression("unexpected end of input".into()))?
            .clone();
        *pos += 1;

        // Integer arguments come first for col/scalar/net/wsq.
        let int_arg = |pos: &mut usize| -> Result<usize> {
            let t = tokens
                .get(*pos)
                .ok_or_else(|| Error::Expression(format!("`{head}` is missing an argument")))?;
            *pos += 1;
            t.parse()
                .map_err(|_| Error::Expression(format!("`{head}` expects an index, got `{t}`")))
        };

        let node = match head.as_str() {
            "col" => {
                let b = int_arg(pos)?;
                let c = int_arg(pos)?;
                self.column(b, c)?
            }
            "scalar" => {
                let i = int_arg(pos)?;
                self.scalar(i)?
            }
            "wsq" => {
                let n = int_arg(pos)?;
                self.weight_norm_sq(n)?
            }
            "net" => {
                let n = int_arg(pos)?;
                let o = int_arg(pos)?;
                let mut inputs = Vec::new();
                while tokens.get(*pos).is_some_and(|t| t != ")") {
                    inputs.push(self.parse_expr(tokens, pos)?);
                }
                self.net(n, o, &inputs)?
            }
            "add" | "sub" | "mul" => {
                let a = self.parse_expr(tokens, pos)?;
                let b = self.parse_expr(tokens, pos)?;
                match head.as_str() {
                    "add" => self.add(a, b)?,
                    "sub" => self.sub(a, b)?,
                    _ => self.mul(a, b)?,
                }
            }
            "square" | "mean" | "relu" | "tanh" | "logistic" | "detach" => {
                let a = self.parse_expr(tokens, pos)?;
                match head.as_str() {
                    "square" => self.square(a)?,
                    "mean" => self.mean(a)?,
                    "relu" => self.relu(a)?,
                    "tanh" => self.tanh(a)?,
                    "logistic" => self.logistic(a)?,
                    _ => self.detach(a)?,
                }
            }
            other => return Err(Error::UnsupportedPrimitive(other.to_string())),
        };

        match tokens.get(*pos).map(String::as_str) {
            Some(")") => {
                *pos += 1;
                Ok(node)
            }
            Some(t) => Err(Error::Expression(format!(
                "too many arguments to `{head}` at `{t}`"
            ))),
            None => Err(Error::Expression(format!("unclosed `({head}`"))),
        }
    }

    /// Seal the graph with `root` as the loss. The root must be a scalar.
    pub fn finish(self, root: NodeId) -> Result<LossGraph> {
        if self.shape_of(root)? != Shape::Scalar {
            return Err(Error::Expression("loss root must be a scalar".into()));
        }
        let shapes = self.specs.iter().map(MlpSpec::layer_shapes).collect();
        Ok(LossGraph {
            specs: self.specs,
            shapes,
            n_scalars: self.n_scalars,
            batches: self.batches,
            nodes: self.nodes,
            root,
        })
    }
}

fn tokenize(src: &str) -> Vec<String> {
    src.replace('(', " ( ")
        .replace(')', " ) ")
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// A validated loss expression bound to its data batches.
#[derive(Debug, Clone)]
pub struct LossGraph {
    specs: Vec<MlpSpec>,
    shapes: Vec<Vec<LayerShape>>,
    n_scalars: usize,
    batches: Vec<Vec<Vec<f64>>>,
    nodes: Vec<GraphNode>,
    root: NodeId,
}

#[derive(Debug, Clone)]
struct NetCache {
    rows: usize,
    /// Row-major `(rows, input_dim)` input matrix.
    input: Vec<f64>,
    /// Per layer, row-major `(rows, fan_out)` post-activation outputs.
    acts: Vec<Vec<f64>>,
}

/// Node values from one forward pass.
#[derive(Debug, Clone)]
pub struct Evaluation {
    values: Vec<Vec<f64>>,
    caches: Vec<Option<NetCache>>,
    root: NodeId,
}

impl Evaluation {
    pub fn loss(&self) -> f64 {
        self.values[self.root.0][0]
    }

    pub fn value(&self, node: NodeId) -> &[f64] {
        &self.values[node.0]
    }
}

/// Gradients of the loss with respect to every network and free scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub nets: Vec<GradVector>,
    pub scalars: Vec<f64>,
}

#[inline]
fn at(values: &[f64], r: usize) -> f64 {
    if values.len() == 1 {
        values[0]
    } else {
        values[r]
    }
}

/// Add `f(r)` into `adj` for each row `r < rows`, summing when `adj` is a
/// broadcast scalar.
#[inline]
fn accumulate(adj: &mut [f64], rows: usize, f: impl Fn(usize) -> f64) {
    if adj.len() == 1 && rows != 1 {
        adj[0] += (0..rows).map(f).sum::<f64>();
    } else {
        for (r, a) in adj.iter_mut().enumerate() {
            *a += f(r);
        }
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LossGraph {
    pub fn specs(&self) -> &[MlpSpec] {
        &self.specs
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    fn check_params(&self, nets: &[&[f64]], scalars: &[f64]) -> Result<()> {
        check_len("network parameter list", self.specs.len(), nets.len())?;
        for (spec, p) in self.specs.iter().zip(nets) {
            check_len("parameter vector", spec.param_count(), p.len())?;
        }
        check_len("scalar parameter list", self.n_scalars, scalars.len())
    }

    pub fn evaluate(&self, nets: &[&[f64]], scalars: &[f64]) -> Result<Evaluation> {
        self.check_params(nets, scalars)?;
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(self.nodes.len());
        let mut caches: Vec<Option<NetCache>> = vec![None; self.nodes.len()];

        for (k, node) in self.nodes.iter().enumerate() {
            let rows = node.shape.len();
            let unary = |a: NodeId, f: &dyn Fn(f64) -> f64| -> Vec<f64> {
                values[a.0].iter().map(|&v| f(v)).collect()
            };
            let binary = |a: NodeId, b: NodeId, f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
                (0..rows)
                    .map(|r| f(at(&values[a.0], r), at(&values[b.0], r)))
                    .collect()
            };
            let value = match &node.op {
                Op::Column { batch, col } => self.batches[*batch][*col].clone(),
                Op::Const(c) => vec![*c],
                Op::Scalar(i) => vec![scalars[*i]],
                Op::Add(a, b) => binary(*a, *b, &|x, y| x + y),
                Op::Sub(a, b) => binary(*a, *b, &|x, y| x - y),
                Op::Mul(a, b) => binary(*a, *b, &|x, y| x * y),
                Op::Square(a) => unary(*a, &|x| x * x),
                Op::Relu(a) => unary(*a, &|x| if x > 0.0 { x } else { 0.0 }),
                Op::Tanh(a) => unary(*a, &f64::tanh),
                Op::Logistic(a) => unary(*a, &logistic),
                Op::Detach(a) => values[a.0].clone(),
                Op::Mean(a) => {
                    let v = &values[a.0];
                    vec![v.iter().sum::<f64>() / v.len() as f64]
                }
                Op::WeightNormSq(net) => {
                    let p = nets[*net];
                    vec![self.specs[*net].weight_indices().map(|i| p[i] * p[i]).sum()]
                }
                Op::Net {
                    net,
                    output,
                    inputs,
                } => {
                    let spec = &self.specs[*net];
                    let shapes = &self.shapes[*net];
                    let params = nets[*net];
                    let in_dim = spec.input_dim;
                    let mut input = vec![0.0; rows * in_dim];
                    for (j, src) in inputs.iter().enumerate() {
                        for r in 0..rows {
                            input[r * in_dim + j] = at(&values[src.0], r);
                        }
                    }
                    let mut row_acts = activation_buffers(shapes);
                    let mut acts: Vec<Vec<f64>> = shapes
                        .iter()
                        .map(|s| Vec::with_capacity(rows * s.fan_out))
                        .collect();
                    for r in 0..rows {
                        let x = &input[r * in_dim..(r + 1) * in_dim];
                        forward_row_into(spec, shapes, params, x, &mut row_acts);
                        for (dst, src) in acts.iter_mut().zip(&row_acts) {
                            dst.extend_from_slice(src);
                        }
                    }
                    let out = &acts[shapes.len() - 1];
                    let value = (0..rows)
                        .map(|r| out[r * spec.output_dim + output])
                        .collect();
                    caches[k] = Some(NetCache { rows, input, acts });
                    value
                }
            };
            values.push(value);
        }
        Ok(Evaluation {
            values,
            caches,
            root: self.root,
        })
    }

    /// Reverse pass over a forward evaluation made with the same parameters.
    pub fn backward(
        &self,
        eval: &Evaluation,
        nets: &[&[f64]],
        scalars: &[f64],
    ) -> Result<Gradients> {
        self.check_params(nets, scalars)?;
        check_len("evaluation", self.nodes.len(), eval.values.len())?;

        let values = &eval.values;
        let mut adjoint: Vec<Vec<f64>> = values.iter().map(|v| vec![0.0; v.len()]).collect();
        adjoint[self.root.0][0] = 1.0;

        let mut grads = Gradients {
            nets: self
                .specs
                .iter()
                .map(|s| GradVector(vec![0.0; s.param_count()]))
                .collect(),
            scalars: vec![0.0; self.n_scalars],
        };

        for k in (0..=self.root.0).rev() {
            let (lower, upper) = adjoint.split_at_mut(k);
            let adj = &upper[0];
            let rows = adj.len();
            match &self.nodes[k].op {
                Op::Column { .. } | Op::Const(_) => {}
                Op::Scalar(i) => grads.scalars[*i] += adj[0],
                Op::Add(a, b) => {
                    accumulate(&mut lower[a.0], rows, |r| adj[r]);
                    accumulate(&mut lower[b.0], rows, |r| adj[r]);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut lower[a.0], rows, |r| adj[r]);
                    accumulate(&mut lower[b.0], rows, |r| -adj[r]);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&values[a.0], &values[b.0]);
                    accumulate(&mut lower[a.0], rows, |r| adj[r] * at(vb, r));
                    accumulate(&mut lower[b.0], rows, |r| adj[r] * at(va, r));
                }
                Op::Square(a) => {
                    let va = &values[a.0];
                    accumulate(&mut lower[a.0], rows, |r| 2.0 * va[r] * adj[r]);
                }
                Op::Relu(a) => {
                    let va = &values[a.0];
                    accumulate(&mut lower[a.0], rows, |r| {
                        if va[r] > 0.0 {
                            adj[r]
                        } else {
                            0.0
                        }
                    });
                }
                Op::Tanh(a) => {
                    let y = &values[k];
                    accumulate(&mut lower[a.0], rows, |r| adj[r] * (1.0 - y[r] * y[r]));
                }
                Op::Logistic(a) => {
                    let y = &values[k];
                    accumulate(&mut lower[a.0], rows, |r| adj[r] * y[r] * (1.0 - y[r]));
                }
                Op::Detach(_) => {}
                Op::Mean(a) => {
                    let n = lower[a.0].len();
                    let g = adj[0] / n as f64;
                    for v in lower[a.0].iter_mut() {
                        *v += g;
                    }
                }
                Op::WeightNormSq(net) => {
                    let p = nets[*net];
                    let g = &mut grads.nets[*net].0;
                    for i in self.specs[*net].weight_indices() {
                        g[i] += 2.0 * p[i] * adj[0];
                    }
                }
                Op::Net {
                    net,
                    output,
                    inputs,
                } => {
                    let cache = eval.caches[k]
                        .as_ref()
                        .expect("network node evaluated with cache");
                    let spec = &self.specs[*net];
                    let mut d_out = vec![0.0; cache.rows * spec.output_dim];
                    for r in 0..cache.rows {
                        d_out[r * spec.output_dim + output] = adj[r];
                    }
                    let d_input = net_backward(
                        spec,
                        &self.shapes[*net],
                        nets[*net],
                        cache,
                        d_out,
                        &mut grads.nets[*net].0,
                    );
                    let in_dim = spec.input_dim;
                    for (j, src) in inputs.iter().enumerate() {
                        accumulate(&mut lower[src.0], cache.rows, |r| d_input[r * in_dim + j]);
                    }
                }
            }
        }
        Ok(grads)
    }
}

/// Backpropagate `d_out` (row-major `(rows, output_dim)`) through one
/// network, accumulating parameter gradients into `grad` and returning the
/// row-major gradient with respect to the network input.
fn net_backward(
    spec: &MlpSpec,
    shapes: &[LayerShape],
    params: &[f64],
    cache: &NetCache,
    d_out: Vec<f64>,
    grad: &mut [f64],
) -> Vec<f64> {
    let rows = cache.rows;
    let mut delta = d_out;
    for l in (0..shapes.len()).rev() {
        let shape = shapes[l];
        let (fi, fo) = (shape.fan_in, shape.fan_out);
        let x: &[f64] = if l == 0 {
            &cache.input
        } else {
            &cache.acts[l - 1]
        };
        let w = shape.weights(params);

        let (gw, gb) = grad[shape.weight_offset..shape.bias_offset + fo].split_at_mut(fi * fo);
        let mut dx = vec![0.0; rows * fi];
        for r in 0..rows {
            let xr = &x[r * fi..(r + 1) * fi];
            let dxr = &mut dx[r * fi..(r + 1) * fi];
            for o in 0..fo {
                let d = delta[r * fo + o];
                gb[o] += d;
                let wrow = &w[o * fi..(o + 1) * fi];
                let grow = &mut gw[o * fi..(o + 1) * fi];
                for i in 0..fi {
                    grow[i] += d * xr[i];
                    dxr[i] += wrow[i] * d;
                }
            }
        }
        if l > 0 {
            for (d, &y) in dx.iter_mut().zip(x) {
                *d *= spec.activation.derivative_from_output(y);
            }
        }
        delta = dx;
    }
    delta
}

/// Loss value and exact gradients in one call.
pub fn grad_scalar(
    graph: &LossGraph,
    nets: &[&[f64]],
    scalars: &[f64],
) -> Result<(f64, Gradients)> {
    let eval = graph.evaluate(nets, scalars)?;
    let grads = graph.backward(&eval, nets, scalars)?;
    Ok((eval.loss(), grads))
}
