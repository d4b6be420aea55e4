//! A small reverse-mode tape over [`Mat`] values, enough for the transformer,
//! the positional MLPs and the sparse token embedding.

use crate::tensor::{gelu, gelu_grad, Mat};

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulNT(Var, Var),
    Add(Var, Var),
    /// Broadcast a `1 x c` row over every row.
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    /// Per-row standardization; keeps `1 / sigma` per row for the backward pass.
    LayerNorm(Var, Vec<f64>),
    /// Row-wise softmax over the columns marked valid; masked columns and
    /// invalid rows get exactly zero weight.
    MaskedSoftmax { x: Var, rows: Vec<bool> },
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    /// Each output row is a copy of some row of some input, or zeros.
    Rows(Vec<Option<(Var, usize)>>),
    /// `out[r] = sum_k val * w[col]` for a sparse row list.
    SparseMatMul { w: Var, rows: Vec<Vec<(usize, f64)>> },
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_nt(self.value(b));
        self.push(out, Op::MatMulNT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!((r.rows(), r.cols()), (1, self.value(x).cols()), "add_row shape");
        let r = r.row(0).to_vec();
        let mut out = self.value(x).clone();
        for i in 0..out.rows() {
            out.row_mut(i).iter_mut().zip(&r).for_each(|(v, b)| *v += b);
        }
        self.push(out, Op::AddRow(x, row))
    }

    pub fn mul_row(&mut self, x: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!((r.rows(), r.cols()), (1, self.value(x).cols()), "mul_row shape");
        let r = r.row(0).to_vec();
        let mut out = self.value(x).clone();
        for i in 0..out.rows() {
            out.row_mut(i).iter_mut().zip(&r).for_each(|(v, g)| *v *= g);
        }
        self.push(out, Op::MulRow(x, row))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let mut out = self.value(x).clone();
        out.scale(s);
        self.push(out, Op::Scale(x, s))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
        self.push(out, Op::Gelu(x))
    }

    /// `x W + b`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let h = self.matmul(x, w);
        self.add_row(h, b)
    }

    pub fn layer_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.cols() as f64;
        let mut out = xv.clone();
        let mut inv = Vec::with_capacity(xv.rows());
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let mean = row.iter().sum::<f64>() / c;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * r);
            inv.push(r);
        }
        self.push(out, Op::LayerNorm(x, inv))
    }

    pub fn masked_softmax(&mut self, x: Var, rows: &[bool], cols: &[bool]) -> Var {
        let xv = self.value(x);
        assert_eq!((xv.rows(), xv.cols()), (rows.len(), cols.len()), "masked_softmax shape");
        let mut out = Mat::zeros(xv.rows(), xv.cols());
        for i in 0..xv.rows() {
            if !rows[i] {
                continue;
            }
            let src = xv.row(i);
            let max = src
                .iter()
                .zip(cols)
                .filter(|(_, &ok)| ok)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let dst = out.row_mut(i);
            let mut sum = 0.0;
            for j in 0..cols.len() {
                if cols[j] {
                    dst[j] = (src[j] - max).exp();
                    sum += dst[j];
                }
            }
            dst.iter_mut().for_each(|v| *v /= sum);
        }
        self.push(
            out,
            Op::MaskedSoftmax {
                x,
                rows: rows.to_vec(),
            },
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let mut out = Mat::zeros(xv.rows(), len);
        for i in 0..xv.rows() {
            out.row_mut(i).copy_from_slice(&xv.row(i)[start..start + len]);
        }
        self.push(out, Op::SliceCols(x, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Mat::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(i);
                out.row_mut(i)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Gathers rows from any inputs into a new `sources.len() x cols` matrix;
    /// `None` rows are zero.
    pub fn rows(&mut self, sources: Vec<Option<(Var, usize)>>, cols: usize) -> Var {
        let mut out = Mat::zeros(sources.len(), cols);
        for (i, s) in sources.iter().enumerate() {
            if let Some((v, r)) = *s {
                out.row_mut(i).copy_from_slice(self.value(v).row(r));
            }
        }
        self.push(out, Op::Rows(sources))
    }

    pub fn sparse_matmul(&mut self, rows: Vec<Vec<(usize, f64)>>, w: Var) -> Var {
        let wv = self.value(w);
        let mut out = Mat::zeros(rows.len(), wv.cols());
        for (i, entries) in rows.iter().enumerate() {
            let dst = out.row_mut(i);
            for &(k, a) in entries {
                dst.iter_mut().zip(wv.row(k)).for_each(|(o, b)| *o += a * b);
            }
        }
        self.push(out, Op::SparseMatMul { w, rows })
    }

    /// Reverse pass from the given output gradients. Returns the gradient of
    /// every node (`None` where nothing flowed).
    pub fn backward(&self, seeds: Vec<(Var, Mat)>) -> Vec<Option<Mat>> {
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            accumulate(&mut grads, v, g);
        }
        for i in (0..self.nodes.len()).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }
        grads
    }

    fn backward_node(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                accumulate(grads, a, g.matmul_nt(self.value(b)));
                accumulate(grads, b, self.value(a).matmul_tn(g));
            }
            &Op::MatMulNT(a, b) => {
                accumulate(grads, a, g.matmul(self.value(b)));
                accumulate(grads, b, g.matmul_tn(self.value(a)));
            }
            &Op::Add(a, b) => {
                accumulate(grads, a, g.clone());
                accumulate(grads, b, g.clone());
            }
            &Op::AddRow(x, row) => {
                accumulate(grads, x, g.clone());
                accumulate(grads, row, column_sums(g));
            }
            &Op::MulRow(x, row) => {
                let r = self.value(row).row(0);
                let xv = self.value(x);
                let mut gx = g.clone();
                let mut gr = Mat::zeros(1, r.len());
                for i in 0..g.rows() {
                    for j in 0..r.len() {
                        gr.data_mut()[j] += g.get(i, j) * xv.get(i, j);
                    }
                    gx.row_mut(i).iter_mut().zip(r).for_each(|(v, s)| *v *= s);
                }
                accumulate(grads, x, gx);
                accumulate(grads, row, gr);
            }
            &Op::Scale(x, s) => {
                let mut gx = g.clone();
                gx.scale(s);
                accumulate(grads, x, gx);
            }
            &Op::Gelu(x) => {
                let mut gx = g.clone();
                gx.data_mut()
                    .iter_mut()
                    .zip(self.value(x).data())
                    .for_each(|(d, &v)| *d *= gelu_grad(v));
                accumulate(grads, x, gx);
            }
            Op::LayerNorm(x, inv) => {
                let y = &node.value;
                let c = y.cols() as f64;
                let mut gx = Mat::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (gr, yr) = (g.row(i), y.row(i));
                    let mg = gr.iter().sum::<f64>() / c;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c;
                    for (j, d) in gx.row_mut(i).iter_mut().enumerate() {
                        *d = inv[i] * (gr[j] - mg - yr[j] * mgy);
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::MaskedSoftmax { x, rows } => {
                let a = &node.value;
                let mut gx = Mat::zeros(a.rows(), a.cols());
                for i in 0..a.rows() {
                    if !rows[i] {
                        continue;
                    }
                    let (ar, gr) = (a.row(i), g.row(i));
                    let s: f64 = ar.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for (j, d) in gx.row_mut(i).iter_mut().enumerate() {
                        *d = ar[j] * (gr[j] - s);
                    }
                }
                accumulate(grads, *x, gx);
            }
            &Op::SliceCols(x, start) => {
                let xv = self.value(x);
                let mut gx = Mat::zeros(xv.rows(), xv.cols());
                for i in 0..g.rows() {
                    gx.row_mut(i)[start..start + g.cols()].copy_from_slice(g.row(i));
                }
                accumulate(grads, x, gx);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut gp = Mat::zeros(g.rows(), w);
                    for i in 0..g.rows() {
                        gp.row_mut(i).copy_from_slice(&g.row(i)[off..off + w]);
                    }
                    accumulate(grads, p, gp);
                    off += w;
                }
            }
            Op::Rows(sources) => {
                for (i, s) in sources.iter().enumerate() {
                    if let Some((v, r)) = *s {
                        let shape = self.value(v).shape();
                        let slot = grads[v.0].get_or_insert_with(|| Mat::zeros(shape.0, shape.1));
                        slot.row_mut(r).iter_mut().zip(g.row(i)).for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::SparseMatMul { w, rows } => {
                let shape = self.value(*w).shape();
                let slot = grads[w.0].get_or_insert_with(|| Mat::zeros(shape.0, shape.1));
                for (i, entries) in rows.iter().enumerate() {
                    for &(k, a) in entries {
                        slot.row_mut(k).iter_mut().zip(g.row(i)).for_each(|(d, s)| *d += a * s);
                    }
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn column_sums(g: &Mat) -> Mat {
    let mut out = Mat::zeros(1, g.cols());
    for i in 0..g.rows() {
        out.data_mut().iter_mut().zip(g.row(i)).for_each(|(o, v)| *o += v);
    }
    out
}
