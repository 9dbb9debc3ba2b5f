//! Tensor-valued reverse-mode tape.
//!
//! Every operation appends a node holding its forward value. Because inputs
//! are always recorded before the nodes that use them, a single reverse sweep
//! over the node list visits every node after all of its consumers.

use ndarray::{Array3, ArrayD, Axis, IxDyn, Zip};

use crate::inference_t1::FIRING_EPS;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddScalar(usize),
    Scale(usize, f64),
    Exp(usize),
    Square(usize),
    Abs(usize),
    Sigmoid(usize),
    ClampMin(usize, f64),
    SumAxis(usize, usize),
    SumAll(usize),
    ProdLastAxis(usize),
    Broadcast(usize, Vec<usize>),
    /// Min or max over switching vectors, differentiated through the
    /// attaining vector only.
    TypeReduce {
        lower: usize,
        upper: usize,
        consequents: usize,
        switches: Array3<bool>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: ArrayD<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Adjoints(Vec<Option<ArrayD<f64>>>);

impl Adjoints {
    /// Gradient for `v`, or `None` when the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.0[v.0].as_ref()
    }
}

fn accumulate(slot: &mut Option<ArrayD<f64>>, grad: ArrayD<f64>) {
    match slot {
        Some(existing) => *existing += &grad,
        None => *slot = Some(grad),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: ArrayD<f64>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    /// Input or constant.
    pub fn leaf(&mut self, value: ArrayD<f64>) -> Var {
        self.push(Op::Leaf, value)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> ArrayD<f64> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(x.shape(), y.shape(), "elementwise operands must share a shape");
        Zip::from(x).and(y).map_collect(|&p, &q| f(p, q))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |p, q| p + q);
        self.push(Op::Add(a.0, b.0), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |p, q| p - q);
        self.push(Op::Sub(a.0, b.0), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |p, q| p * q);
        self.push(Op::Mul(a.0, b.0), v)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |p, q| p / q);
        self.push(Op::Div(a.0, b.0), v)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).mapv(|x| x + k);
        self.push(Op::AddScalar(a.0), v)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).mapv(|x| x * k);
        self.push(Op::Scale(a.0, k), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(Op::Exp(a.0), v)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(Op::Square(a.0), v)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::abs);
        self.push(Op::Abs(a.0), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(crate::params::sigmoid);
        self.push(Op::Sigmoid(a.0), v)
    }

    /// `max(a, floor)`; gradient is zero wherever the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let v = self.value(a).mapv(|x| x.max(floor));
        self.push(Op::ClampMin(a.0, floor), v)
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Var {
        let v = self.value(a).sum_axis(Axis(axis));
        self.push(Op::SumAxis(a.0, axis), v)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let total = self.value(a).iter().fold(0.0, |acc, &x| acc + x);
        self.push(Op::SumAll(a.0), ArrayD::from_elem(IxDyn(&[]), total))
    }

    /// Product over the last axis, accumulated in index order.
    pub fn prod_last_axis(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let last = Axis(x.ndim() - 1);
        let v = x.map_axis(last, |lane| lane.iter().fold(1.0, |acc, &g| acc * g));
        self.push(Op::ProdLastAxis(a.0), v)
    }

    /// Broadcasts `a` to `shape`, where input axis `i` lands on output axis
    /// `axes[i]` (strictly increasing) and every other output axis repeats.
    pub fn broadcast(&mut self, a: Var, shape: &[usize], axes: &[usize]) -> Var {
        let x = self.value(a);
        assert_eq!(x.ndim(), axes.len(), "one target axis per input axis");
        assert!(axes.windows(2).all(|w| w[0] < w[1]), "target axes must increase");
        let mut expanded = vec![1; shape.len()];
        for (i, &ax) in axes.iter().enumerate() {
            assert_eq!(x.shape()[i], shape[ax], "broadcast extent mismatch");
            expanded[ax] = shape[ax];
        }
        let v = x
            .to_shape(IxDyn(&expanded))
            .expect("contiguous reshape")
            .broadcast(IxDyn(shape))
            .expect("valid broadcast")
            .to_owned();
        self.push(Op::Broadcast(a.0, axes.to_vec()), v)
    }

    /// Records a type-reduction endpoint.
    ///
    /// `lower`/`upper` are firings `[B, P]`, `consequents` is `[B, D, P]`,
    /// and `value` is the reducer's endpoint `[B, D]` attained by `switches`
    /// (`true` selects the upper firing).
    pub fn type_reduce(
        &mut self,
        lower: Var,
        upper: Var,
        consequents: Var,
        value: ArrayD<f64>,
        switches: Array3<bool>,
    ) -> Var {
        self.push(
            Op::TypeReduce {
                lower: lower.0,
                upper: upper.0,
                consequents: consequents.0,
                switches,
            },
            value,
        )
    }

    /// Reverse sweep seeded with `d output / d output = 1`.
    pub fn backward(&self, output: Var) -> Adjoints {
        let mut adj: Vec<Option<ArrayD<f64>>> = vec![None; self.nodes.len()];
        adj[output.0] = Some(ArrayD::ones(self.nodes[output.0].value.raw_dim()));

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    adj[idx] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj[*a], g.clone());
                    accumulate(&mut adj[*b], g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj[*a], g.clone());
                    accumulate(&mut adj[*b], g.mapv(|v| -v));
                }
                Op::Mul(a, b) => {
                    let (x, y) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    accumulate(&mut adj[*a], &g * y);
                    accumulate(&mut adj[*b], &g * x);
                }
                Op::Div(a, b) => {
                    let y = &self.nodes[*b].value;
                    let ga = &g / y;
                    let gb = Zip::from(&ga)
                        .and(&node.value)
                        .map_collect(|&q, &out| -q * out);
                    accumulate(&mut adj[*a], ga);
                    accumulate(&mut adj[*b], gb);
                }
                Op::AddScalar(a) => accumulate(&mut adj[*a], g.clone()),
                Op::Scale(a, k) => accumulate(&mut adj[*a], g.mapv(|v| v * k)),
                Op::Exp(a) => accumulate(&mut adj[*a], &g * &node.value),
                Op::Square(a) => {
                    let x = &self.nodes[*a].value;
                    accumulate(&mut adj[*a], Zip::from(&g).and(x).map_collect(|&q, &v| 2.0 * v * q));
                }
                Op::Abs(a) => {
                    let x = &self.nodes[*a].value;
                    let sign = |v: f64| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
                    accumulate(&mut adj[*a], Zip::from(&g).and(x).map_collect(|&q, &v| q * sign(v)));
                }
                Op::Sigmoid(a) => {
                    let s = &node.value;
                    accumulate(&mut adj[*a], Zip::from(&g).and(s).map_collect(|&q, &v| q * v * (1.0 - v)));
                }
                Op::ClampMin(a, floor) => {
                    let x = &self.nodes[*a].value;
                    accumulate(
                        &mut adj[*a],
                        Zip::from(&g).and(x).map_collect(|&q, &v| if v < *floor { 0.0 } else { q }),
                    );
                }
                Op::SumAxis(a, axis) => {
                    let shape = self.nodes[*a].value.raw_dim();
                    let spread = g
                        .insert_axis(Axis(*axis))
                        .broadcast(shape)
                        .expect("sum-axis adjoint broadcast")
                        .to_owned();
                    accumulate(&mut adj[*a], spread);
                }
                Op::SumAll(a) => {
                    let shape = self.nodes[*a].value.raw_dim();
                    accumulate(&mut adj[*a], ArrayD::from_elem(shape, g.sum()));
                }
                Op::ProdLastAxis(a) => {
                    let x = &self.nodes[*a].value;
                    let last = x.ndim() - 1;
                    let n = x.shape()[last];
                    let mut grad = ArrayD::zeros(x.raw_dim());
                    let mut prefix = vec![1.0; n + 1];
                    let mut suffix = vec![1.0; n + 1];
                    for ((lane, mut out), &q) in x
                        .lanes(Axis(last))
                        .into_iter()
                        .zip(grad.lanes_mut(Axis(last)))
                        .zip(g.iter())
                    {
                        for i in 0..n {
                            prefix[i + 1] = prefix[i] * lane[i];
                            suffix[n - 1 - i] = suffix[n - i] * lane[n - 1 - i];
                        }
                        for i in 0..n {
                            out[i] = q * prefix[i] * suffix[i + 1];
                        }
                    }
                    accumulate(&mut adj[*a], grad);
                }
                Op::Broadcast(a, axes) => {
                    let mut reduced = g;
                    for ax in (0..reduced.ndim()).rev() {
                        if !axes.contains(&ax) {
                            reduced = reduced.sum_axis(Axis(ax));
                        }
                    }
                    accumulate(&mut adj[*a], reduced);
                }
                Op::TypeReduce {
                    lower,
                    upper,
                    consequents,
                    switches,
                } => {
                    let fl = &self.nodes[*lower].value;
                    let fu = &self.nodes[*upper].value;
                    let yp = &self.nodes[*consequents].value;
                    let (b, d, p) = switches.dim();
                    let mut g_lower = ArrayD::zeros(fl.raw_dim());
                    let mut g_upper = ArrayD::zeros(fu.raw_dim());
                    let mut g_yp = ArrayD::zeros(yp.raw_dim());
                    for bi in 0..b {
                        for di in 0..d {
                            let q = g[[bi, di]];
                            if q == 0.0 {
                                continue;
                            }
                            let y = node.value[[bi, di]];
                            let mut z = 0.0;
                            for pi in 0..p {
                                z += if switches[[bi, di, pi]] { fu[[bi, pi]] } else { fl[[bi, pi]] };
                            }
                            let inv = q / (z + FIRING_EPS);
                            for pi in 0..p {
                                let on = switches[[bi, di, pi]];
                                let f = if on { fu[[bi, pi]] } else { fl[[bi, pi]] };
                                g_yp[[bi, di, pi]] += f * inv;
                                let df = (yp[[bi, di, pi]] - y) * inv;
                                if on {
                                    g_upper[[bi, pi]] += df;
                                } else {
                                    g_lower[[bi, pi]] += df;
                                }
                            }
                        }
                    }
                    accumulate(&mut adj[*lower], g_lower);
                    accumulate(&mut adj[*upper], g_upper);
                    accumulate(&mut adj[*consequents], g_yp);
                }
            }
        }
        Adjoints(adj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, ArrayD};

    fn leaf(t: &mut Tape, v: ArrayD<f64>) -> Var {
        t.leaf(v)
    }

    fn scalar_fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn elementwise_chain() {
        // f(x) = sum(exp(-(x^2) / 2) * sigmoid(x))
        let xs = array![0.3, -1.2, 2.0].into_dyn();
        let mut t = Tape::new();
        let x = leaf(&mut t, xs.clone());
        let sq = t.square(x);
        let e = t.scale(sq, -0.5);
        let e = t.exp(e);
        let s = t.sigmoid(x);
        let prod = t.mul(e, s);
        let out = t.sum_all(prod);
        let adj = t.backward(out);
        let g = adj.get(x).unwrap();
        for (i, &xi) in xs.iter().enumerate() {
            let fd = scalar_fd(|v| (-(v * v) / 2.0).exp() * crate::params::sigmoid(v), xi);
            assert!((g[i] - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn abs_subgradient_at_zero() {
        let mut t = Tape::new();
        let x = leaf(&mut t, array![0.0, -2.0, 3.0].into_dyn());
        let a = t.abs(x);
        let out = t.sum_all(a);
        let adj = t.backward(out);
        assert_eq!(adj.get(x).unwrap(), &array![0.0, -1.0, 1.0].into_dyn());
    }

    #[test]
    fn clamp_blocks_gradient_below_floor() {
        let mut t = Tape::new();
        let x = leaf(&mut t, array![-1.0, 0.5].into_dyn());
        let c = t.clamp_min(x, 1e-6);
        let out = t.sum_all(c);
        let adj = t.backward(out);
        assert_eq!(adj.get(x).unwrap(), &array![0.0, 1.0].into_dyn());
    }

    #[test]
    fn product_gradient_with_zero_factor() {
        let mut t = Tape::new();
        let x = leaf(&mut t, array![[2.0, 0.0, 3.0]].into_dyn());
        let p = t.prod_last_axis(x);
        let out = t.sum_all(p);
        let adj = t.backward(out);
        assert_eq!(adj.get(x).unwrap(), &array![[0.0, 6.0, 0.0]].into_dyn());
    }

    #[test]
    fn broadcast_then_reduce() {
        let mut t = Tape::new();
        let a = leaf(&mut t, array![1.0, 2.0].into_dyn());
        let b = t.broadcast(a, &[3, 2, 4], &[1]);
        assert_eq!(t.value(b).shape(), &[3, 2, 4]);
        assert_eq!(t.value(b)[[2, 1, 3]], 2.0);
        let out = t.sum_all(b);
        let adj = t.backward(out);
        assert_eq!(adj.get(a).unwrap(), &array![12.0, 12.0].into_dyn());
    }

    #[test]
    fn division_and_sum_axis() {
        // f(a, b) = sum_j (a_j / b_j) over axis 0 of a 2x2
        let mut t = Tape::new();
        let a = leaf(&mut t, array![[1.0, 2.0], [3.0, 4.0]].into_dyn());
        let b = leaf(&mut t, array![[2.0, 4.0], [5.0, 8.0]].into_dyn());
        let q = t.div(a, b);
        let s = t.sum_axis(q, 0);
        let out = t.sum_all(s);
        let adj = t.backward(out);
        let ga = adj.get(a).unwrap();
        let gb = adj.get(b).unwrap();
        assert!((ga[[1, 0]] - 0.2).abs() < 1e-15);
        assert!((gb[[1, 0]] + 3.0 / 25.0).abs() < 1e-15);
    }

    #[test]
    fn unused_leaf_has_no_adjoint() {
        let mut t = Tape::new();
        let a = leaf(&mut t, array![1.0].into_dyn());
        let unused = leaf(&mut t, array![5.0].into_dyn());
        let out = t.sum_all(a);
        assert!(t.backward(out).get(unused).is_none());
    }
}
