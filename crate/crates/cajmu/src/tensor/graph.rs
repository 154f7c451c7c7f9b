use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{Error, Result};

use super::data::{GradRecord, ParamSet, TensorData};
use super::prpool;

type Id = usize;

// Evaluation is eager, so some metadata fields are only consulted while the
// node is built; they stay on the variants for Debug output.
#[derive(Debug, Clone)]
#[allow(dead_code)]
pub(crate) enum Op {
    Leaf,
    Add(Id, Id),
    Sub(Id, Id),
    Mul(Id, Id),
    Neg(Id),
    AddScalar(Id, f64),
    MulScalar(Id, f64),
    Recip(Id),
    Sqrt(Id),
    Relu(Id),
    Sigmoid(Id),
    SumAll(Id),
    BroadcastScalar(Id),
    ChannelMean(Id),
    BroadcastChannel(Id),
    ScaleByScalar { x: Id, s: Id },
    Reshape(Id),
    Concat(Id, Id),
    Slice { x: Id, start: Id2 },
    PadSlice { x: Id, start: Id2, total: Id2 },
    AvgPool2(Id),
    Upsample2(Id),
    ConvFwd { x: Id, k: Id },
    ConvDx { g: Id, k: Id },
    ConvDk { g: Id, x: Id, ksize: usize },
    MatVec { w: Id, x: Id },
    MatVecT { w: Id, x: Id },
    Outer { a: Id, b: Id },
    PrPool { feat: Id, coords: [Id; 4], bins: (usize, usize) },
    PrPoolGradFeat { g: Id, coords: [Id; 4], bins: (usize, usize) },
    PrPoolGradCoords { g: Id, feat: Id, coords: [Id; 4], bins: (usize, usize) },
}

// Plain usize metadata (not a node id); aliased to keep the enum readable.
type Id2 = usize;

pub(crate) struct Node {
    pub op: Op,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub requires_grad: bool,
}

struct GraphInner {
    nodes: Vec<Node>,
}

/// Arena computation graph; values are computed eagerly on node creation.
#[derive(Clone)]
pub struct Graph {
    inner: Rc<RefCell<GraphInner>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node in a [`Graph`]. Cheap to clone.
#[derive(Clone)]
pub struct Tensor {
    graph: Graph,
    id: Id,
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            inner: Rc::new(RefCell::new(GraphInner { nodes: Vec::new() })),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn same_graph(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    fn push(&self, op: Op, shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            op,
            shape,
            values,
            requires_grad,
        });
        Tensor {
            graph: self.clone(),
            id,
        }
    }

    /// Leaf tensor that participates in gradient computation.
    pub fn leaf(&self, data: &TensorData) -> Tensor {
        self.push(Op::Leaf, data.shape.clone(), data.values.clone(), true)
    }

    /// Leaf tensor treated as a constant.
    pub fn constant(&self, data: &TensorData) -> Tensor {
        self.push(Op::Leaf, data.shape.clone(), data.values.clone(), false)
    }

    pub fn scalar(&self, v: f64) -> Tensor {
        self.constant(&TensorData::scalar(v))
    }

    pub fn zeros(&self, shape: Vec<usize>) -> Tensor {
        self.constant(&TensorData::zeros(shape))
    }

    /// Bind every parameter in `params` as a gradient-tracked leaf.
    pub fn bind(&self, params: &ParamSet) -> BoundParams {
        let map = params
            .iter()
            .map(|(k, v)| (k.clone(), self.leaf(v)))
            .collect();
        BoundParams { map }
    }

    /// Bind parameters as constants (frozen).
    pub fn bind_frozen(&self, params: &ParamSet) -> BoundParams {
        let map = params
            .iter()
            .map(|(k, v)| (k.clone(), self.constant(v)))
            .collect();
        BoundParams { map }
    }

    fn node_requires_grad(&self, id: Id) -> bool {
        self.inner.borrow().nodes[id].requires_grad
    }

    fn with_node<R>(&self, id: Id, f: impl FnOnce(&Node) -> R) -> R {
        f(&self.inner.borrow().nodes[id])
    }
}

/// Parameters bound into one graph as leaves.
#[derive(Clone)]
pub struct BoundParams {
    map: BTreeMap<String, Tensor>,
}

impl BoundParams {
    pub fn get(&self, path: &str) -> Result<Tensor> {
        self.map
            .get(path)
            .cloned()
            .ok_or_else(|| Error::UnknownParam(path.to_string()))
    }

    pub fn insert(&mut self, path: impl Into<String>, t: Tensor) {
        self.map.insert(path.into(), t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn paths(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    /// Current node values snapshotted back into a plain ParamSet.
    pub fn snapshot(&self) -> ParamSet {
        self.map
            .iter()
            .map(|(k, t)| (k.clone(), t.data()))
            .collect()
    }
}

impl Tensor {
    pub fn shape(&self) -> Vec<usize> {
        self.graph.with_node(self.id, |n| n.shape.clone())
    }

    pub fn numel(&self) -> usize {
        self.graph.with_node(self.id, |n| n.values.len())
    }

    pub fn values(&self) -> Vec<f64> {
        self.graph.with_node(self.id, |n| n.values.clone())
    }

    pub fn data(&self) -> TensorData {
        self.graph.with_node(self.id, |n| TensorData {
            shape: n.shape.clone(),
            values: n.values.clone(),
        })
    }

    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.numel()));
        }
        Ok(self.graph.with_node(self.id, |n| n.values[0]))
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.node_requires_grad(self.id)
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    fn check_same_graph(&self, other: &Tensor) -> Result<()> {
        if !self.graph.same_graph(&other.graph) {
            return Err(Error::GraphMismatch);
        }
        Ok(())
    }

    fn binary_elementwise(
        &self,
        other: &Tensor,
        op: fn(Id, Id) -> Op,
        f: fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        self.check_same_graph(other)?;
        let (shape, values, rg) = self.graph.with_node(self.id, |a| {
            self.graph.with_node(other.id, |b| {
                if a.shape != b.shape {
                    return Err(Error::shape(format!(
                        "elementwise op on {:?} vs {:?}",
                        a.shape, b.shape
                    )));
                }
                let values: Vec<f64> = a
                    .values
                    .iter()
                    .zip(&b.values)
                    .map(|(&x, &y)| f(x, y))
                    .collect();
                Ok((a.shape.clone(), values, a.requires_grad || b.requires_grad))
            })
        })?;
        Ok(self.graph.push(op(self.id, other.id), shape, values, rg))
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
        let (shape, values, rg) = self.graph.with_node(self.id, |n| {
            (
                n.shape.clone(),
                n.values.iter().map(|&x| f(x)).collect::<Vec<f64>>(),
                n.requires_grad,
            )
        });
        self.graph.push(op, shape, values, rg)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(other, Op::Mul, |a, b| a * b)
    }

    pub fn neg(&self) -> Tensor {
        self.unary(Op::Neg(self.id), |x| -x)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(Op::AddScalar(self.id, c), |x| x + c)
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        self.unary(Op::MulScalar(self.id, c), |x| x * c)
    }

    pub fn recip(&self) -> Tensor {
        self.unary(Op::Recip(self.id), |x| 1.0 / x)
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary(Op::Sqrt(self.id), |x| x.sqrt())
    }

    pub fn relu(&self) -> Tensor {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(Op::Sigmoid(self.id), |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn sum_all(&self) -> Tensor {
        let (sum, rg) = self
            .graph
            .with_node(self.id, |n| (n.values.iter().sum::<f64>(), n.requires_grad));
        self.graph.push(Op::SumAll(self.id), vec![1], vec![sum], rg)
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum_all().mul_scalar(1.0 / n)
    }

    /// Broadcast a scalar to `shape`.
    pub fn broadcast_scalar(&self, shape: Vec<usize>) -> Result<Tensor> {
        if self.numel() != 1 {
            return Err(Error::shape("broadcast_scalar needs a scalar".to_string()));
        }
        let (v, rg) = self
            .graph
            .with_node(self.id, |n| (n.values[0], n.requires_grad));
        let count = shape.iter().product();
        Ok(self
            .graph
            .push(Op::BroadcastScalar(self.id), shape, vec![v; count], rg))
    }

    /// Per-channel spatial mean: `[C,H,W] -> [C]`.
    pub fn channel_mean(&self) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 3 {
            return Err(Error::shape(format!("channel_mean on {shape:?}")));
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let (values, rg) = self.graph.with_node(self.id, |n| {
            let hw = h * w;
            let mut out = vec![0.0; c];
            for ch in 0..c {
                out[ch] = n.values[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64;
            }
            (out, n.requires_grad)
        });
        Ok(self
            .graph
            .push(Op::ChannelMean(self.id), vec![c], values, rg))
    }

    /// Broadcast `[C]` to `[C,H,W]`.
    pub fn broadcast_channel(&self, h: usize, w: usize) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 1 {
            return Err(Error::shape(format!("broadcast_channel on {shape:?}")));
        }
        let c = shape[0];
        let (values, rg) = self.graph.with_node(self.id, |n| {
            let mut out = Vec::with_capacity(c * h * w);
            for ch in 0..c {
                out.extend(std::iter::repeat(n.values[ch]).take(h * w));
            }
            (out, n.requires_grad)
        });
        Ok(self
            .graph
            .push(Op::BroadcastChannel(self.id), vec![c, h, w], values, rg))
    }

    /// Multiply every element by a scalar graph node.
    pub fn scale_by(&self, s: &Tensor) -> Result<Tensor> {
        self.check_same_graph(s)?;
        if s.numel() != 1 {
            return Err(Error::shape("scale_by needs a scalar".to_string()));
        }
        let sv = s.graph.with_node(s.id, |n| n.values[0]);
        let (shape, values, rg) = self.graph.with_node(self.id, |n| {
            (
                n.shape.clone(),
                n.values.iter().map(|&x| x * sv).collect::<Vec<f64>>(),
                n.requires_grad,
            )
        });
        let rg = rg || s.requires_grad();
        Ok(self.graph.push(
            Op::ScaleByScalar { x: self.id, s: s.id },
            shape,
            values,
            rg,
        ))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::shape(format!(
                "reshape {:?} -> {:?}",
                self.shape(),
                shape
            )));
        }
        let (values, rg) = self
            .graph
            .with_node(self.id, |nd| (nd.values.clone(), nd.requires_grad));
        Ok(self.graph.push(Op::Reshape(self.id), shape, values, rg))
    }

    /// Concatenate two rank-1 tensors.
    pub fn concat(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_graph(other)?;
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 1 || sb.len() != 1 {
            return Err(Error::shape(format!("concat on {sa:?} and {sb:?}")));
        }
        let mut values = self.values();
        values.extend(other.values());
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.graph.push(
            Op::Concat(self.id, other.id),
            vec![sa[0] + sb[0]],
            values,
            rg,
        ))
    }

    /// Contiguous slice of a rank-1 tensor.
    pub fn slice(&self, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 1 || start + len > shape[0] {
            return Err(Error::shape(format!(
                "slice [{start}, {start}+{len}) of {shape:?}"
            )));
        }
        let (values, rg) = self.graph.with_node(self.id, |n| {
            (n.values[start..start + len].to_vec(), n.requires_grad)
        });
        Ok(self.graph.push(
            Op::Slice {
                x: self.id,
                start,
            },
            vec![len],
            values,
            rg,
        ))
    }

    /// Embed a rank-1 tensor into a zero vector of length `total` at `start`.
    pub fn pad_slice(&self, start: usize, total: usize) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 1 || start + shape[0] > total {
            return Err(Error::shape(format!(
                "pad_slice {shape:?} at {start} into {total}"
            )));
        }
        let (values, rg) = self.graph.with_node(self.id, |n| {
            let mut out = vec![0.0; total];
            out[start..start + n.values.len()].copy_from_slice(&n.values);
            (out, n.requires_grad)
        });
        Ok(self.graph.push(
            Op::PadSlice {
                x: self.id,
                start,
                total,
            },
            vec![total],
            values,
            rg,
        ))
    }

    /// Non-overlapping 2x2 mean pooling on `[C,H,W]`; H and W must be even.
    pub fn avgpool2(&self) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 3 || shape[1] % 2 != 0 || shape[2] % 2 != 0 {
            return Err(Error::shape(format!("avgpool2 on {shape:?}")));
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let (oh, ow) = (h / 2, w / 2);
        let (values, rg) = self.graph.with_node(self.id, |n| {
            let mut out = vec![0.0; c * oh * ow];
            for ch in 0..c {
                for i in 0..oh {
                    for j in 0..ow {
                        let base = ch * h * w;
                        let s = n.values[base + 2 * i * w + 2 * j]
                            + n.values[base + 2 * i * w + 2 * j + 1]
                            + n.values[base + (2 * i + 1) * w + 2 * j]
                            + n.values[base + (2 * i + 1) * w + 2 * j + 1];
                        out[ch * oh * ow + i * ow + j] = 0.25 * s;
                    }
                }
            }
            (out, n.requires_grad)
        });
        Ok(self
            .graph
            .push(Op::AvgPool2(self.id), vec![c, oh, ow], values, rg))
    }

    /// Nearest-neighbour 2x upsampling on `[C,H,W]`.
    pub fn upsample2(&self) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 3 {
            return Err(Error::shape(format!("upsample2 on {shape:?}")));
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let (oh, ow) = (h * 2, w * 2);
        let (values, rg) = self.graph.with_node(self.id, |n| {
            let mut out = vec![0.0; c * oh * ow];
            for ch in 0..c {
                for i in 0..oh {
                    for j in 0..ow {
                        out[ch * oh * ow + i * ow + j] =
                            n.values[ch * h * w + (i / 2) * w + j / 2];
                    }
                }
            }
            (out, n.requires_grad)
        });
        Ok(self
            .graph
            .push(Op::Upsample2(self.id), vec![c, oh, ow], values, rg))
    }

    /// Same-padding cross-correlation: input `[C,H,W]`, kernel `[O,C,k,k]`
    /// with odd k, output `[O,H,W]`.
    pub fn conv2d(&self, kernel: &Tensor) -> Result<Tensor> {
        self.check_same_graph(kernel)?;
        let xs = self.shape();
        let ks = kernel.shape();
        if xs.len() != 3 || ks.len() != 4 {
            return Err(Error::shape(format!("conv2d on {xs:?} with {ks:?}")));
        }
        if ks[1] != xs[0] {
            return Err(Error::shape(format!(
                "conv2d channel mismatch: input {} vs kernel {}",
                xs[0], ks[1]
            )));
        }
        if ks[2] != ks[3] || ks[2] % 2 == 0 {
            return Err(Error::invalid(format!(
                "conv2d kernel must be square with odd size, got {}x{}",
                ks[2], ks[3]
            )));
        }
        let (o, c, h, w, k) = (ks[0], xs[0], xs[1], xs[2], ks[2]);
        let values = self.graph.with_node(self.id, |xn| {
            kernel
                .graph
                .with_node(kernel.id, |kn| conv_fwd(&xn.values, &kn.values, o, c, h, w, k))
        });
        let rg = self.requires_grad() || kernel.requires_grad();
        Ok(self.graph.push(
            Op::ConvFwd {
                x: self.id,
                k: kernel.id,
            },
            vec![o, h, w],
            values,
            rg,
        ))
    }

    fn conv_dx(&self, kernel: &Tensor) -> Result<Tensor> {
        // self: upstream grad [O,H,W]; kernel: [O,C,k,k]; out [C,H,W].
        let gs = self.shape();
        let ks = kernel.shape();
        let (o, c, h, w, k) = (ks[0], ks[1], gs[1], gs[2], ks[2]);
        let values = self.graph.with_node(self.id, |gn| {
            kernel
                .graph
                .with_node(kernel.id, |kn| conv_dx(&gn.values, &kn.values, o, c, h, w, k))
        });
        let rg = self.requires_grad() || kernel.requires_grad();
        Ok(self.graph.push(
            Op::ConvDx {
                g: self.id,
                k: kernel.id,
            },
            vec![c, h, w],
            values,
            rg,
        ))
    }

    fn conv_dk(&self, input: &Tensor, ksize: usize) -> Result<Tensor> {
        // self: upstream grad [O,H,W]; input: [C,H,W]; out [O,C,k,k].
        let gs = self.shape();
        let xs = input.shape();
        let (o, c, h, w) = (gs[0], xs[0], gs[1], gs[2]);
        let values = self.graph.with_node(self.id, |gn| {
            input
                .graph
                .with_node(input.id, |xn| conv_dk(&gn.values, &xn.values, o, c, h, w, ksize))
        });
        let rg = self.requires_grad() || input.requires_grad();
        Ok(self.graph.push(
            Op::ConvDk {
                g: self.id,
                x: input.id,
                ksize,
            },
            vec![o, c, ksize, ksize],
            values,
            rg,
        ))
    }

    /// Matrix-vector product: `[M,N] . [N] -> [M]`.
    pub fn matvec(&self, x: &Tensor) -> Result<Tensor> {
        self.check_same_graph(x)?;
        let ws = self.shape();
        let xs = x.shape();
        if ws.len() != 2 || xs.len() != 1 || ws[1] != xs[0] {
            return Err(Error::shape(format!("matvec {ws:?} . {xs:?}")));
        }
        let (m, n) = (ws[0], ws[1]);
        let values = self.graph.with_node(self.id, |wn| {
            x.graph.with_node(x.id, |xn| {
                (0..m)
                    .map(|i| {
                        (0..n)
                            .map(|j| wn.values[i * n + j] * xn.values[j])
                            .sum::<f64>()
                    })
                    .collect::<Vec<f64>>()
            })
        });
        let rg = self.requires_grad() || x.requires_grad();
        Ok(self.graph.push(
            Op::MatVec {
                w: self.id,
                x: x.id,
            },
            vec![m],
            values,
            rg,
        ))
    }

    /// Transposed matrix-vector product: `[M,N]^T . [M] -> [N]`.
    pub fn matvec_t(&self, x: &Tensor) -> Result<Tensor> {
        self.check_same_graph(x)?;
        let ws = self.shape();
        let xs = x.shape();
        if ws.len() != 2 || xs.len() != 1 || ws[0] != xs[0] {
            return Err(Error::shape(format!("matvec_t {ws:?}^T . {xs:?}")));
        }
        let (m, n) = (ws[0], ws[1]);
        let values = self.graph.with_node(self.id, |wn| {
            x.graph.with_node(x.id, |xn| {
                (0..n)
                    .map(|j| {
                        (0..m)
                            .map(|i| wn.values[i * n + j] * xn.values[i])
                            .sum::<f64>()
                    })
                    .collect::<Vec<f64>>()
            })
        });
        let rg = self.requires_grad() || x.requires_grad();
        Ok(self.graph.push(
            Op::MatVecT {
                w: self.id,
                x: x.id,
            },
            vec![n],
            values,
            rg,
        ))
    }

    /// Outer product `[M] x [N] -> [M,N]`.
    pub fn outer(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_graph(other)?;
        let sa = self.shape();
        let sb = other.shape();
        if sa.len() != 1 || sb.len() != 1 {
            return Err(Error::shape(format!("outer {sa:?} x {sb:?}")));
        }
        let (m, n) = (sa[0], sb[0]);
        let values = self.graph.with_node(self.id, |an| {
            other.graph.with_node(other.id, |bn| {
                let mut out = Vec::with_capacity(m * n);
                for i in 0..m {
                    for j in 0..n {
                        out.push(an.values[i] * bn.values[j]);
                    }
                }
                out
            })
        });
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.graph.push(
            Op::Outer {
                a: self.id,
                b: other.id,
            },
            vec![m, n],
            values,
            rg,
        ))
    }

    /// Affine map: `weight [M,N] . self [N] + bias [M]`.
    pub fn linear(&self, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        weight.matvec(self)?.add(bias)
    }

    /// Scale each channel plane of `[C,H,W]` by the matching entry of `[C]`.
    pub fn channel_scale(&self, affinity: &Tensor) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 3 {
            return Err(Error::shape(format!("channel_scale on {shape:?}")));
        }
        let a = affinity.shape();
        if a != vec![shape[0]] {
            return Err(Error::shape(format!(
                "channel_scale: feature has {} channels, affinity {:?}",
                shape[0], a
            )));
        }
        self.mul(&affinity.broadcast_channel(shape[1], shape[2])?)
    }

    /// Single-map correlation: feature `[C,H,W]` with filter `[C,f,f]`
    /// summed over channels, output `[H,W]`.
    pub fn cross_correlate(&self, filter: &Tensor) -> Result<Tensor> {
        let fs = filter.shape();
        if fs.len() != 3 {
            return Err(Error::shape(format!("cross_correlate filter {fs:?}")));
        }
        let k4 = filter.reshape(vec![1, fs[0], fs[1], fs[2]])?;
        let out = self.conv2d(&k4)?;
        let os = out.shape();
        out.reshape(vec![os[1], os[2]])
    }

    /// Precise ROI pooling: exact per-bin integral of the bilinear
    /// interpolant over the box, divided by bin area. Feature `[C,H,W]`,
    /// corner coordinates as scalar nodes, output `[C,bh,bw]`.
    pub fn prpool(
        &self,
        x0: &Tensor,
        y0: &Tensor,
        x1: &Tensor,
        y1: &Tensor,
        bins: (usize, usize),
    ) -> Result<Tensor> {
        for c in [x0, y0, x1, y1] {
            self.check_same_graph(c)?;
            if c.numel() != 1 {
                return Err(Error::shape("prpool coordinates must be scalars".to_string()));
            }
        }
        let shape = self.shape();
        if shape.len() != 3 {
            return Err(Error::shape(format!("prpool on {shape:?}")));
        }
        let (bh, bw) = bins;
        if bh == 0 || bw == 0 {
            return Err(Error::invalid("prpool bins must be positive".to_string()));
        }
        let (cx0, cy0, cx1, cy1) = (x0.item()?, y0.item()?, x1.item()?, y1.item()?);
        if !(cx1 > cx0 && cy1 > cy0) {
            return Err(Error::DegenerateBox {
                w: cx1 - cx0,
                h: cy1 - cy0,
            });
        }
        let values = self.graph.with_node(self.id, |n| {
            prpool::forward(&n.values, shape[0], shape[1], shape[2], cx0, cy0, cx1, cy1, bh, bw)
        });
        let rg = self.requires_grad()
            || [x0, y0, x1, y1].iter().any(|c| c.requires_grad());
        Ok(self.graph.push(
            Op::PrPool {
                feat: self.id,
                coords: [x0.id, y0.id, x1.id, y1.id],
                bins,
            },
            vec![shape[0], bh, bw],
            values,
            rg,
        ))
    }
}

fn conv_fwd(x: &[f64], k: &[f64], o: usize, c: usize, h: usize, w: usize, ks: usize) -> Vec<f64> {
    let p = (ks as isize - 1) / 2;
    let mut out = vec![0.0; o * h * w];
    for oc in 0..o {
        for ch in 0..c {
            let kbase = (oc * c + ch) * ks * ks;
            let xbase = ch * h * w;
            for i in 0..h as isize {
                for j in 0..w as isize {
                    let mut acc = 0.0;
                    for di in 0..ks as isize {
                        let ii = i + di - p;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for dj in 0..ks as isize {
                            let jj = j + dj - p;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            acc += x[xbase + (ii * w as isize + jj) as usize]
                                * k[kbase + (di * ks as isize + dj) as usize];
                        }
                    }
                    out[oc * h * w + (i * w as isize + j) as usize] += acc;
                }
            }
        }
    }
    out
}

fn conv_dx(g: &[f64], k: &[f64], o: usize, c: usize, h: usize, w: usize, ks: usize) -> Vec<f64> {
    let p = (ks as isize - 1) / 2;
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for oc in 0..o {
            let kbase = (oc * c + ch) * ks * ks;
            let gbase = oc * h * w;
            for a in 0..h as isize {
                for b in 0..w as isize {
                    let mut acc = 0.0;
                    for di in 0..ks as isize {
                        let i = a - di + p;
                        if i < 0 || i >= h as isize {
                            continue;
                        }
                        for dj in 0..ks as isize {
                            let j = b - dj + p;
                            if j < 0 || j >= w as isize {
                                continue;
                            }
                            acc += g[gbase + (i * w as isize + j) as usize]
                                * k[kbase + (di * ks as isize + dj) as usize];
                        }
                    }
                    out[ch * h * w + (a * w as isize + b) as usize] += acc;
                }
            }
        }
    }
    out
}

fn conv_dk(g: &[f64], x: &[f64], o: usize, c: usize, h: usize, w: usize, ks: usize) -> Vec<f64> {
    let p = (ks as isize - 1) / 2;
    let mut out = vec![0.0; o * c * ks * ks];
    for oc in 0..o {
        for ch in 0..c {
            for di in 0..ks as isize {
                for dj in 0..ks as isize {
                    let mut acc = 0.0;
                    for i in 0..h as isize {
                        let ii = i + di - p;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for j in 0..w as isize {
                            let jj = j + dj - p;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            acc += g[oc * h * w + (i * w as isize + j) as usize]
                                * x[ch * h * w + (ii * w as isize + jj) as usize];
                        }
                    }
                    out[(oc * c + ch) * ks * ks + (di * ks as isize + dj) as usize] = acc;
                }
            }
        }
    }
    out
}

impl Graph {
    /// Reverse-mode gradients of a scalar `loss` w.r.t. each tensor in
    /// `wrt`. Gradient nodes are built from ordinary ops, so the returned
    /// tensors can themselves be differentiated by a later call.
    ///
    /// Tensors in `wrt` that the loss does not depend on get zero
    /// gradients of matching shape.
    pub fn grad(&self, loss: &Tensor, wrt: &[Tensor]) -> Result<Vec<Tensor>> {
        if loss.numel() != 1 {
            return Err(Error::NonScalarLoss(loss.numel()));
        }
        for t in wrt {
            if !self.same_graph(&t.graph) {
                return Err(Error::GraphMismatch);
            }
        }
        let loss_id = loss.id;
        // Mark ancestors of the loss (only those that require grad matter).
        let mut active = vec![false; loss_id + 1];
        active[loss_id] = true;
        {
            let inner = self.inner.borrow();
            for id in (0..=loss_id).rev() {
                if !active[id] || !inner.nodes[id].requires_grad {
                    continue;
                }
                for input in op_inputs(&inner.nodes[id].op) {
                    active[input] = true;
                }
            }
        }
        let mut grads: BTreeMap<Id, Tensor> = BTreeMap::new();
        grads.insert(loss_id, self.scalar(1.0));
        for id in (0..=loss_id).rev() {
            if !active[id] || !self.node_requires_grad(id) {
                continue;
            }
            let g = match grads.get(&id) {
                Some(g) => g.clone(),
                None => continue,
            };
            let op = self.with_node(id, |n| n.op.clone());
            self.accumulate_vjps(id, &op, &g, &mut grads)?;
        }
        Ok(wrt
            .iter()
            .map(|t| match grads.get(&t.id) {
                Some(g) => g.clone(),
                None => self.zeros(t.shape()),
            })
            .collect())
    }

    fn tensor(&self, id: Id) -> Tensor {
        Tensor {
            graph: self.clone(),
            id,
        }
    }

    fn add_grad(&self, grads: &mut BTreeMap<Id, Tensor>, id: Id, g: Tensor) -> Result<()> {
        if !self.node_requires_grad(id) {
            return Ok(());
        }
        let merged = match grads.remove(&id) {
            Some(existing) => existing.add(&g)?,
            None => g,
        };
        grads.insert(id, merged);
        Ok(())
    }

    fn accumulate_vjps(
        &self,
        id: Id,
        op: &Op,
        g: &Tensor,
        grads: &mut BTreeMap<Id, Tensor>,
    ) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_grad(grads, a, g.clone())?;
                self.add_grad(grads, b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.add_grad(grads, a, g.clone())?;
                self.add_grad(grads, b, g.neg())?;
            }
            Op::Mul(a, b) => {
                if self.node_requires_grad(a) {
                    self.add_grad(grads, a, g.mul(&self.tensor(b))?)?;
                }
                if self.node_requires_grad(b) {
                    self.add_grad(grads, b, g.mul(&self.tensor(a))?)?;
                }
            }
            Op::Neg(a) => self.add_grad(grads, a, g.neg())?,
            Op::AddScalar(a, _) => self.add_grad(grads, a, g.clone())?,
            Op::MulScalar(a, c) => self.add_grad(grads, a, g.mul_scalar(c))?,
            Op::Recip(a) => {
                // d(1/x)/dx = -y^2
                let y = self.tensor(id);
                self.add_grad(grads, a, g.mul(&y.mul(&y)?)?.neg())?;
            }
            Op::Sqrt(a) => {
                let y = self.tensor(id);
                self.add_grad(grads, a, g.mul(&y.recip().mul_scalar(0.5))?)?;
            }
            Op::Relu(a) => {
                let mask = self.with_node(a, |n| TensorData {
                    shape: n.shape.clone(),
                    values: n
                        .values
                        .iter()
                        .map(|&x| if x > 0.0 { 1.0 } else { 0.0 })
                        .collect(),
                });
                self.add_grad(grads, a, g.mul(&self.constant(&mask))?)?;
            }
            Op::Sigmoid(a) => {
                let y = self.tensor(id);
                let gy = g.mul(&y)?;
                self.add_grad(grads, a, gy.sub(&gy.mul(&y)?)?)?;
            }
            Op::SumAll(a) => {
                let shape = self.with_node(a, |n| n.shape.clone());
                self.add_grad(grads, a, g.broadcast_scalar(shape)?)?;
            }
            Op::BroadcastScalar(a) => self.add_grad(grads, a, g.sum_all())?,
            Op::ChannelMean(a) => {
                let (h, w) = self.with_node(a, |n| (n.shape[1], n.shape[2]));
                self.add_grad(
                    grads,
                    a,
                    g.broadcast_channel(h, w)?.mul_scalar(1.0 / (h * w) as f64),
                )?;
            }
            Op::BroadcastChannel(a) => {
                let hw = self.with_node(id, |n| n.shape[1] * n.shape[2]);
                self.add_grad(grads, a, g.channel_mean()?.mul_scalar(hw as f64))?;
            }
            Op::ScaleByScalar { x, s } => {
                if self.node_requires_grad(x) {
                    self.add_grad(grads, x, g.scale_by(&self.tensor(s))?)?;
                }
                if self.node_requires_grad(s) {
                    self.add_grad(grads, s, g.mul(&self.tensor(x))?.sum_all())?;
                }
            }
            Op::Reshape(a) => {
                let shape = self.with_node(a, |n| n.shape.clone());
                self.add_grad(grads, a, g.reshape(shape)?)?;
            }
            Op::Concat(a, b) => {
                let la = self.with_node(a, |n| n.values.len());
                let lb = self.with_node(b, |n| n.values.len());
                self.add_grad(grads, a, g.slice(0, la)?)?;
                self.add_grad(grads, b, g.slice(la, lb)?)?;
            }
            Op::Slice { x, start } => {
                let total = self.with_node(x, |n| n.values.len());
                self.add_grad(grads, x, g.pad_slice(start, total)?)?;
            }
            Op::PadSlice { x, start, .. } => {
                let len = self.with_node(x, |n| n.values.len());
                self.add_grad(grads, x, g.slice(start, len)?)?;
            }
            Op::AvgPool2(a) => self.add_grad(grads, a, g.upsample2()?.mul_scalar(0.25))?,
            Op::Upsample2(a) => self.add_grad(grads, a, g.avgpool2()?.mul_scalar(4.0))?,
            Op::ConvFwd { x, k } => {
                if self.node_requires_grad(x) {
                    self.add_grad(grads, x, g.conv_dx(&self.tensor(k))?)?;
                }
                if self.node_requires_grad(k) {
                    let ks = self.with_node(k, |n| n.shape[2]);
                    self.add_grad(grads, k, g.conv_dk(&self.tensor(x), ks)?)?;
                }
            }
            Op::ConvDx { g: g0, k } => {
                if self.node_requires_grad(g0) {
                    self.add_grad(grads, g0, g.conv2d(&self.tensor(k))?)?;
                }
                if self.node_requires_grad(k) {
                    let ks = self.with_node(k, |n| n.shape[2]);
                    self.add_grad(grads, k, self.tensor(g0).conv_dk(g, ks)?)?;
                }
            }
            Op::ConvDk { g: g0, x, ksize } => {
                if self.node_requires_grad(g0) {
                    self.add_grad(grads, g0, self.tensor(x).conv2d(g)?)?;
                }
                if self.node_requires_grad(x) {
                    let _ = ksize;
                    self.add_grad(grads, x, self.tensor(g0).conv_dx(g)?)?;
                }
            }
            Op::MatVec { w, x } => {
                if self.node_requires_grad(w) {
                    self.add_grad(grads, w, g.outer(&self.tensor(x))?)?;
                }
                if self.node_requires_grad(x) {
                    self.add_grad(grads, x, self.tensor(w).matvec_t(g)?)?;
                }
            }
            Op::MatVecT { w, x } => {
                if self.node_requires_grad(w) {
                    self.add_grad(grads, w, self.tensor(x).outer(g)?)?;
                }
                if self.node_requires_grad(x) {
                    self.add_grad(grads, x, self.tensor(w).matvec(g)?)?;
                }
            }
            Op::Outer { a, b } => {
                if self.node_requires_grad(a) {
                    self.add_grad(grads, a, g.matvec(&self.tensor(b))?)?;
                }
                if self.node_requires_grad(b) {
                    self.add_grad(grads, b, g.matvec_t(&self.tensor(a))?)?;
                }
            }
            Op::PrPool { feat, coords, bins } => {
                if self.node_requires_grad(feat) {
                    let feat_grad = self.prpool_grad_feat(g, feat, coords, bins)?;
                    self.add_grad(grads, feat, feat_grad)?;
                }
                if coords.iter().any(|&c| self.node_requires_grad(c)) {
                    let cg = self.prpool_grad_coords(g, feat, coords, bins)?;
                    for (idx, &cid) in coords.iter().enumerate() {
                        if self.node_requires_grad(cid) {
                            self.add_grad(grads, cid, cg.slice(idx, 1)?)?;
                        }
                    }
                }
            }
            Op::PrPoolGradFeat { .. } | Op::PrPoolGradCoords { .. } => {
                return Err(Error::invalid(
                    "second-order differentiation through prpool is not supported".to_string(),
                ));
            }
        }
        Ok(())
    }

    fn prpool_grad_feat(
        &self,
        g: &Tensor,
        feat: Id,
        coords: [Id; 4],
        bins: (usize, usize),
    ) -> Result<Tensor> {
        let (shape, _) = self.with_node(feat, |n| (n.shape.clone(), ()));
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let co: Vec<f64> = coords
            .iter()
            .map(|&cid| self.with_node(cid, |n| n.values[0]))
            .collect();
        let values = self.with_node(g.id, |gn| {
            prpool::grad_feat(&gn.values, c, h, w, co[0], co[1], co[2], co[3], bins.0, bins.1)
        });
        let rg = g.requires_grad();
        Ok(self.push(
            Op::PrPoolGradFeat {
                g: g.id,
                coords,
                bins,
            },
            vec![c, h, w],
            values,
            rg,
        ))
    }

    fn prpool_grad_coords(
        &self,
        g: &Tensor,
        feat: Id,
        coords: [Id; 4],
        bins: (usize, usize),
    ) -> Result<Tensor> {
        let shape = self.with_node(feat, |n| n.shape.clone());
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let co: Vec<f64> = coords
            .iter()
            .map(|&cid| self.with_node(cid, |n| n.values[0]))
            .collect();
        let values = self.with_node(g.id, |gn| {
            self.with_node(feat, |fnode| {
                prpool::grad_coords(
                    &gn.values,
                    &fnode.values,
                    c,
                    h,
                    w,
                    co[0],
                    co[1],
                    co[2],
                    co[3],
                    bins.0,
                    bins.1,
                )
            })
        });
        let rg = g.requires_grad();
        Ok(self.push(
            Op::PrPoolGradCoords {
                g: g.id,
                feat,
                coords,
                bins,
            },
            vec![4],
            values,
            rg,
        ))
    }

    /// Gradients of a scalar loss w.r.t. every parameter in `bound`,
    /// snapshotted into a [`GradRecord`]. Parameters off the compute path
    /// get zero gradients.
    pub fn backward(&self, loss: &Tensor, bound: &BoundParams) -> Result<GradRecord> {
        let wrt: Vec<Tensor> = bound.iter().map(|(_, t)| t.clone()).collect();
        let grads = self.grad(loss, &wrt)?;
        let mut record = GradRecord::default();
        for ((path, _), g) in bound.iter().zip(grads) {
            record.insert(path.clone(), g.data());
        }
        Ok(record)
    }
}

fn op_inputs(op: &Op) -> Vec<Id> {
    match *op {
        Op::Leaf => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Concat(a, b) => vec![a, b],
        Op::Neg(a)
        | Op::AddScalar(a, _)
        | Op::MulScalar(a, _)
        | Op::Recip(a)
        | Op::Sqrt(a)
        | Op::Relu(a)
        | Op::Sigmoid(a)
        | Op::SumAll(a)
        | Op::BroadcastScalar(a)
        | Op::ChannelMean(a)
        | Op::BroadcastChannel(a)
        | Op::Reshape(a)
        | Op::AvgPool2(a)
        | Op::Upsample2(a) => vec![a],
        Op::Slice { x, .. } | Op::PadSlice { x, .. } => vec![x],
        Op::ScaleByScalar { x, s } => vec![x, s],
        Op::ConvFwd { x, k } => vec![x, k],
        Op::ConvDx { g, k } => vec![g, k],
        Op::ConvDk { g, x, .. } => vec![g, x],
        Op::MatVec { w, x } | Op::MatVecT { w, x } => vec![w, x],
        Op::Outer { a, b } => vec![a, b],
        Op::PrPool { feat, coords, .. } => {
            let mut v = vec![feat];
            v.extend_from_slice(&coords);
            v
        }
        Op::PrPoolGradFeat { g, coords, .. } => {
            let mut v = vec![g];
            v.extend_from_slice(&coords);
            v
        }
        Op::PrPoolGradCoords { g, feat, coords, .. } => {
            let mut v = vec![g, feat];
            v.extend_from_slice(&coords);
            v
        }
    }
}
