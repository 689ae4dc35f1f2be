//! Network representations and forward evaluation.
//!
//! Two forms are supported: a plain layer chain (`Network`) and a general
//! feedforward DAG (`DagNetwork`) whose edges connect lower-indexed nodes to
//! higher-indexed ones, which makes the graph acyclic by construction. Node
//! indices are 1-based everywhere a DAG is involved, matching the on-disk
//! format.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Elementwise activation applied to hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Pointwise derivative. For ReLU the value at 0 is taken as 0.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn apply_vec(self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.apply(x)).collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidModel(format!("unknown activation {other:?}"))),
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One affine stage of a chain network.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Fully-connected chain network. The activation acts on every hidden layer;
/// the last affine stage produces raw logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    sizes: Vec<usize>,
    layers: Vec<Layer>,
    activation: Activation,
}

impl Network {
    pub fn new(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidModel("network needs at least one layer".into()));
        }
        let mut sizes = vec![layers[0].weight.cols()];
        for (i, layer) in layers.iter().enumerate() {
            if layer.weight.cols() != *sizes.last().unwrap() {
                return Err(Error::InvalidModel(format!(
                    "layer {} weight has {} columns, expected {}",
                    i,
                    layer.weight.cols(),
                    sizes.last().unwrap()
                )));
            }
            if layer.bias.len() != layer.weight.rows() {
                return Err(Error::InvalidModel(format!(
                    "layer {} bias length {} != weight rows {}",
                    i,
                    layer.bias.len(),
                    layer.weight.rows()
                )));
            }
            sizes.push(layer.weight.rows());
        }
        Ok(Self { sizes, layers, activation })
    }

    /// Number of node levels, input and output included.
    pub fn depth(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Output logits for one input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_preacts(x)?.pop().unwrap())
    }

    /// Pre-activation values of every level after the input.
    pub fn forward_preacts(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.input_size() {
            return Err(Error::DimMismatch(format!(
                "input length {} != {}",
                x.len(),
                self.input_size()
            )));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                cur = self.activation.apply_vec(&cur);
            }
            let mut z = layer.weight.matvec(&cur);
            crate::linalg::vadd_assign(&mut z, &layer.bias);
            pre.push(z.clone());
            cur = z;
        }
        Ok(pre)
    }

    /// Equivalent DAG with edges (i, i+1) only.
    pub fn to_dag(&self) -> DagNetwork {
        let edges = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| DagEdge { from: i + 1, to: i + 2, weight: layer.weight.clone() })
            .collect();
        let biases = self.layers.iter().map(|l| l.bias.clone()).collect();
        DagNetwork::new(self.sizes.clone(), edges, biases, self.activation)
            .expect("chain network is a valid DAG")
    }
}

/// Weighted connection between two node levels, `from < to`, both 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct DagEdge {
    pub from: usize,
    pub to: usize,
    pub weight: Matrix,
}

/// General feedforward network as a DAG over node levels 1..=N.
///
/// Node 1 is the input; node N carries the output logits. `biases[k]` belongs
/// to node k+2. The activation acts on every internal node.
#[derive(Debug, Clone, PartialEq)]
pub struct DagNetwork {
    sizes: Vec<usize>,
    edges: Vec<DagEdge>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

impl DagNetwork {
    pub fn new(
        sizes: Vec<usize>,
        mut edges: Vec<DagEdge>,
        biases: Vec<Vec<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        let n = sizes.len();
        if n < 2 {
            return Err(Error::InvalidModel("DAG needs at least two nodes".into()));
        }
        if biases.len() != n - 1 {
            return Err(Error::InvalidModel(format!(
                "expected {} bias vectors, got {}",
                n - 1,
                biases.len()
            )));
        }
        for (k, b) in biases.iter().enumerate() {
            if b.len() != sizes[k + 1] {
                return Err(Error::InvalidModel(format!(
                    "bias for node {} has length {}, expected {}",
                    k + 2,
                    b.len(),
                    sizes[k + 1]
                )));
            }
        }
        for e in &edges {
            if e.from == 0 || e.to > n || e.from >= e.to {
                return Err(Error::InvalidModel(format!(
                    "edge ({}, {}) violates 1 <= from < to <= {}",
                    e.from, e.to, n
                )));
            }
            if e.weight.rows() != sizes[e.to - 1] || e.weight.cols() != sizes[e.from - 1] {
                return Err(Error::InvalidModel(format!(
                    "edge ({}, {}) weight is {}x{}, expected {}x{}",
                    e.from,
                    e.to,
                    e.weight.rows(),
                    e.weight.cols(),
                    sizes[e.to - 1],
                    sizes[e.from - 1]
                )));
            }
        }
        edges.sort_by_key(|e| (e.to, e.from));
        for pair in edges.windows(2) {
            if pair[0].to == pair[1].to && pair[0].from == pair[1].from {
                return Err(Error::InvalidModel(format!(
                    "duplicate edge ({}, {})",
                    pair[0].from, pair[0].to
                )));
            }
        }
        Ok(Self { sizes, edges, biases, activation })
    }

    pub fn depth(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn edges(&self) -> &[DagEdge] {
        &self.edges
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Bias vector of a node (1-based, node >= 2).
    pub fn bias(&self, node: usize) -> &[f64] {
        &self.biases[node - 2]
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    /// Incoming edges of each node, grouped by target (sorted by source).
    pub fn incoming(&self) -> Vec<Vec<&DagEdge>> {
        let mut inc = vec![Vec::new(); self.sizes.len() + 1];
        for e in &self.edges {
            inc[e.to].push(e);
        }
        inc
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_preacts(x)?.pop().unwrap())
    }

    /// Pre-activation values of nodes 2..=N.
    pub fn forward_preacts(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.input_size() {
            return Err(Error::DimMismatch(format!(
                "input length {} != {}",
                x.len(),
                self.input_size()
            )));
        }
        topo_paths_check(self)?;
        let n = self.sizes.len();
        let inc = self.incoming();
        // post[j] is the value each outgoing edge of node j+1 consumes
        let mut post: Vec<Vec<f64>> = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(n - 1);
        for node in 2..=n {
            let mut z = self.bias(node).to_vec();
            for e in &inc[node] {
                crate::linalg::vadd_assign(&mut z, &e.weight.matvec(&post[e.from - 1]));
            }
            post.push(if node < n { self.activation.apply_vec(&z) } else { Vec::new() });
            pre.push(z);
        }
        Ok(pre)
    }
}

/// Checks that every node is reachable from the input and returns the node
/// indices in evaluation order.
pub fn topo_paths_check(dag: &DagNetwork) -> Result<Vec<usize>> {
    let n = dag.depth();
    let mut reachable = vec![false; n + 1];
    reachable[1] = true;
    // edges only point forward, so one increasing sweep settles reachability
    for node in 2..=n {
        if dag.edges.iter().any(|e| e.to == node && reachable[e.from]) {
            reachable[node] = true;
        }
    }
    if let Some(node) = (2..=n).find(|&i| !reachable[i]) {
        return Err(Error::InvalidModel(format!(
            "node {node} is not reachable from the input"
        )));
    }
    Ok((1..=n).collect())
}

/// Either network form, as read from a model document.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Chain(Network),
    Dag(DagNetwork),
}

impl Model {
    pub fn input_size(&self) -> usize {
        match self {
            Model::Chain(n) => n.input_size(),
            Model::Dag(d) => d.input_size(),
        }
    }

    pub fn output_size(&self) -> usize {
        match self {
            Model::Chain(n) => n.output_size(),
            Model::Dag(d) => d.output_size(),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Model::Chain(n) => n.forward(x),
            Model::Dag(d) => d.forward(x),
        }
    }

    pub fn as_chain(&self) -> Result<&Network> {
        match self {
            Model::Chain(n) => Ok(n),
            Model::Dag(_) => Err(Error::InvalidArg(
                "operation requires a chain model, got a DAG".into(),
            )),
        }
    }

    pub fn to_dag(&self) -> DagNetwork {
        match self {
            Model::Chain(n) => n.to_dag(),
            Model::Dag(d) => d.clone(),
        }
    }
}

/// Anything that maps an input vector to logits.
pub trait ForwardModel {
    fn input_size(&self) -> usize;
    fn output_size(&self) -> usize;
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl ForwardModel for Network {
    fn input_size(&self) -> usize {
        Network::input_size(self)
    }
    fn output_size(&self) -> usize {
        Network::output_size(self)
    }
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Network::forward(self, x)
    }
}

impl ForwardModel for DagNetwork {
    fn input_size(&self) -> usize {
        DagNetwork::input_size(self)
    }
    fn output_size(&self) -> usize {
        DagNetwork::output_size(self)
    }
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        DagNetwork::forward(self, x)
    }
}

impl ForwardModel for Model {
    fn input_size(&self) -> usize {
        Model::input_size(self)
    }
    fn output_size(&self) -> usize {
        Model::output_size(self)
    }
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Model::forward(self, x)
    }
}

/// Axis-aligned perturbation box: inputs range over `x[j] +- eps[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Budget {
    x: Vec<f64>,
    eps: Vec<f64>,
}

impl Budget {
    pub fn new(x: Vec<f64>, eps: Vec<f64>) -> Result<Self> {
        if x.len() != eps.len() {
            return Err(Error::DimMismatch(format!(
                "anchor length {} != eps length {}",
                x.len(),
                eps.len()
            )));
        }
        if eps.iter().any(|&e| !(e >= 0.0) || !e.is_finite()) {
            return Err(Error::InvalidArg("eps must be finite and nonnegative".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArg("anchor must be finite".into()));
        }
        Ok(Self { x, eps })
    }

    /// Same radius `gamma` for every feature.
    pub fn uniform(x: Vec<f64>, gamma: f64) -> Result<Self> {
        let eps = vec![gamma; x.len()];
        Self::new(x, eps)
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// Labeled feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub features: Vec<f64>,
    pub label: usize,
}

/// In-memory dataset with uniform feature length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub points: Vec<DataPoint>,
}

impl Dataset {
    pub fn new(points: Vec<DataPoint>) -> Result<Self> {
        if let Some(first) = points.first() {
            let len = first.features.len();
            if points.iter().any(|p| p.features.len() != len) {
                return Err(Error::InvalidArg("non-uniform feature lengths".into()));
            }
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn feature_len(&self) -> usize {
        self.points.first().map_or(0, |p| p.features.len())
    }
}
