//! Minimal reverse-mode differentiation over 2-D `f64` matrices.
//!
//! Every forward computation in [`crate::model`] is recorded on a [`Graph`];
//! [`Graph::backward`] then walks the nodes in reverse creation order. Vectors
//! are `1 × n` matrices and scalars are `1 × 1`.

use ndarray::{concatenate, s, Array2, Axis};

pub type Tensor = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    Tanh(Var),
    Sigmoid(Var),
    ColSlice(Var, usize),
    RowSlice(Var, usize),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    MeanRows(Var),
    LogSoftmax(Var),
    Im2Col {
        input: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Gather(Var, Vec<usize>),
    /// Loss node whose gradient w.r.t. the input was computed in the forward pass.
    PrecomputedGrad(Var, Tensor),
    WeightedSum(Vec<(Var, f64)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar root w.r.t. every node that influences it.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Numerically stable log-softmax over each row.
pub fn log_softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a` (r × c) plus the row vector `b` (1 × c) broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::AddRow(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 1.0 - x);
        self.push(v, Op::OneMinus(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn col_slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::ColSlice(a, start))
    }

    pub fn row_slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(v, Op::RowSlice(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("row counts must agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("column counts must agree");
        self.push(v, Op::StackRows(parts.to_vec()))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = x
            .mean_axis(Axis(0))
            .expect("mean over zero rows")
            .insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let v = log_softmax_rows(self.value(a));
        self.push(v, Op::LogSoftmax(a))
    }

    /// Unfolds a `T × C` sequence into `T_out × (kernel · C)` patches so a
    /// strided 1-D convolution becomes one matrix product. Out-of-range rows
    /// are zero padding.
    pub fn im2col(&mut self, input: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let x = self.value(input);
        let (t, c) = x.dim();
        let t_out = (t + 2 * pad - kernel) / stride + 1;
        let mut out = Array2::zeros((t_out, kernel * c));
        for o in 0..t_out {
            for j in 0..kernel {
                let src = (o * stride + j) as isize - pad as isize;
                if src >= 0 && (src as usize) < t {
                    out.slice_mut(s![o, j * c..(j + 1) * c])
                        .assign(&x.row(src as usize));
                }
            }
        }
        self.push(
            out,
            Op::Im2Col {
                input,
                kernel,
                stride,
                pad,
            },
        )
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather(&mut self, table: Var, idx: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Array2::zeros((idx.len(), t.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).assign(&t.row(i));
        }
        self.push(out, Op::Gather(table, idx.to_vec()))
    }

    /// Records a scalar loss whose gradient w.r.t. `input` is already known.
    pub fn precomputed_loss(&mut self, input: Var, loss: f64, grad: Tensor) -> Var {
        debug_assert_eq!(grad.dim(), self.value(input).dim());
        self.push(Array2::from_elem((1, 1), loss), Op::PrecomputedGrad(input, grad))
    }

    /// Σ wᵢ·xᵢ over same-shape inputs.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let mut acc = Array2::zeros(self.value(terms[0].0).dim());
        for &(v, w) in terms {
            acc.scaled_add(w, self.value(v));
        }
        self.push(acc, Op::WeightedSum(terms.to_vec()))
    }

    /// Reverse pass from a scalar `root` with seed gradient 1.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Array2::ones(self.value(root).dim()));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::AddRow(a, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[b.0], gb);
                    accumulate(&mut grads[a.0], g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[b.0], g.clone());
                    accumulate(&mut grads[a.0], g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::OneMinus(a) => accumulate(&mut grads[a.0], -g),
                Op::Tanh(a) => {
                    let y = &node.value;
                    let ga = ndarray::Zip::from(&g)
                        .and(y)
                        .map_collect(|g, y| g * (1.0 - y * y));
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let ga = ndarray::Zip::from(&g)
                        .and(y)
                        .map_collect(|g, y| g * y * (1.0 - y));
                    accumulate(&mut grads[a.0], ga);
                }
                Op::ColSlice(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::RowSlice(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        accumulate(&mut grads[p.0], g.slice(s![.., col..col + w]).to_owned());
                        col += w;
                    }
                }
                Op::StackRows(parts) => {
                    let mut row = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        accumulate(&mut grads[p.0], g.slice(s![row..row + h, ..]).to_owned());
                        row += h;
                    }
                }
                Op::MeanRows(a) => {
                    let rows = self.value(*a).nrows();
                    let row = g.row(0).mapv(|v| v / rows as f64);
                    let ga = row.broadcast((rows, row.len())).unwrap().to_owned();
                    accumulate(&mut grads[a.0], ga);
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    for (mut grow, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let total: f64 = grow.sum();
                        grow.zip_mut_with(&yrow, |gv, yv| *gv -= yv.exp() * total);
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Im2Col {
                    input,
                    kernel,
                    stride,
                    pad,
                } => {
                    let (t, c) = self.value(*input).dim();
                    let mut ga = Array2::zeros((t, c));
                    for o in 0..g.nrows() {
                        for j in 0..*kernel {
                            let src = (o * stride + j) as isize - *pad as isize;
                            if src >= 0 && (src as usize) < t {
                                let mut dst = ga.row_mut(src as usize);
                                dst += &g.slice(s![o, j * c..(j + 1) * c]);
                            }
                        }
                    }
                    accumulate(&mut grads[input.0], ga);
                }
                Op::Gather(table, idx) => {
                    let mut ga = Array2::zeros(self.value(*table).dim());
                    for (r, &i) in idx.iter().enumerate() {
                        let mut dst = ga.row_mut(i);
                        dst += &g.row(r);
                    }
                    accumulate(&mut grads[table.0], ga);
                }
                Op::PrecomputedGrad(a, local) => {
                    let seed = g[[0, 0]];
                    accumulate(&mut grads[a.0], local * seed);
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        accumulate(&mut grads[v.0], &g * w);
                    }
                }
            }
        }
        Gradients { grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central differences of `f` w.r.t. every entry of `x`.
    fn numeric(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Tensor {
        let eps = 1e-6;
        let mut out = Array2::zeros(x.dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut p = x.clone();
            p[[r, c]] += eps;
            let mut m = x.clone();
            m[[r, c]] -= eps;
            out[[r, c]] = (f(&p) - f(&m)) / (2.0 * eps);
        }
        out
    }

    fn assert_close(a: &Tensor, b: &Tensor) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-6 * (1.0 + x.abs()), "{a} vs {b}");
        }
    }

    /// Builds a small composite expression exercising every op and returns
    /// the scalar result.
    fn composite(g: &mut Graph, x: Var, w: Var) -> Var {
        let patches = g.im2col(x, 3, 2, 1);
        let h = g.matmul(patches, w);
        let b = g.row_slice(h, 0, 1);
        let h = g.add_row(h, b);
        let t = g.tanh(h);
        let sg = g.sigmoid(h);
        let om = g.one_minus(sg);
        let m = g.mul(t, om);
        let left = g.col_slice(m, 0, 1);
        let right = g.col_slice(m, 1, 1);
        let sum = g.add(left, right);
        let cat = g.concat_cols(&[sum, left, right]);
        let stacked = g.stack_rows(&[cat, cat]);
        let picked = g.gather(stacked, &[0, 1, 0]);
        let ls = g.log_softmax(picked);
        let mean = g.mean_rows(ls);
        let first = g.col_slice(mean, 0, 1);
        let second = g.col_slice(mean, 2, 1);
        g.weighted_sum(&[(first, 0.7), (second, -1.3)])
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let x0 = array![[0.3, -0.2], [0.1, 0.5], [-0.4, 0.2], [0.25, 0.05], [0.6, -0.1]];
        let w0 = array![[0.2, -0.1], [0.4, 0.3], [-0.5, 0.2], [0.1, 0.1], [0.3, -0.2], [0.05, 0.4]];
        let eval = |x: &Tensor, w: &Tensor| {
            let mut g = Graph::new();
            let xv = g.leaf(x.clone());
            let wv = g.leaf(w.clone());
            let out = composite(&mut g, xv, wv);
            g.scalar(out)
        };
        let mut g = Graph::new();
        let xv = g.leaf(x0.clone());
        let wv = g.leaf(w0.clone());
        let out = composite(&mut g, xv, wv);
        let grads = g.backward(out);
        assert_close(grads.get(xv).unwrap(), &numeric(&x0, |x| eval(x, &w0)));
        assert_close(grads.get(wv).unwrap(), &numeric(&w0, |w| eval(&x0, w)));
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let ls = log_softmax_rows(&array![[1.0, 2.0, 3.0], [1000.0, 0.0, -1000.0]]);
        for row in ls.rows() {
            let total: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn im2col_output_length_halves_with_ceiling() {
        for t in 1..20 {
            let mut g = Graph::new();
            let x = g.leaf(Array2::zeros((t, 2)));
            let p = g.im2col(x, 3, 2, 1);
            assert_eq!(g.value(p).nrows(), t.div_ceil(2));
        }
    }

    #[test]
    fn precomputed_loss_scales_with_seed() {
        let mut g = Graph::new();
        let x = g.leaf(array![[1.0, 2.0]]);
        let l = g.precomputed_loss(x, 5.0, array![[0.5, -0.5]]);
        let s = g.weighted_sum(&[(l, 3.0)]);
        let grads = g.backward(s);
        assert_eq!(grads.get(x).unwrap(), &array![[1.5, -1.5]]);
    }
}
