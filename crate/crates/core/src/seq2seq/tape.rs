//! Reverse-mode differentiation over dense row-major matrices.
//!
//! Every value is a 2-D `f64` array; scalars are `1 x 1`. Nodes are appended in
//! evaluation order and `backward` walks them in reverse.

use ndarray::{s, Array2, Axis};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    ColSlice(Var, usize),
    ConcatCols(Vec<Var>),
    /// Stacks `kernel` time-shifted copies of the input side by side ("same" zero padding).
    Im2Col(Var, usize),
    /// Scalar with a precomputed local gradient for its single input.
    ScalarWithGrad(Var, Array2<f64>),
    /// Weighted sum of scalars.
    Combine(Vec<(Var, f64)>),
}

#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Array2<f64>>,
    ops: Vec<Op>,
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v.0][[0, 0]]
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, index: usize, value: &Array2<f64>) -> Var {
        self.push(value.clone(), Op::Param(index))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// `x + bias` with a `1 x m` bias broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let v = self.value(x) + self.value(bias);
        self.push(v, Op::AddRow(x, bias))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x) * c;
        self.push(v, Op::Scale(x, c))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|a| a.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let h = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / h;
            row.mapv_inplace(|a| a - mean);
            let var = row.iter().map(|a| a * a).sum::<f64>() / h;
            let is = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|a| a * is);
            inv_std.push(is);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|a| (a - m).exp());
            let z = row.sum();
            row.mapv_inplace(|a| a / z);
        }
        self.push(v, Op::Softmax(x))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let v = log_softmax_rows(self.value(x));
        self.push(v, Op::LogSoftmax(x))
    }

    pub fn col_slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::ColSlice(x, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("equal row counts");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn im2col(&mut self, x: Var, kernel: usize) -> Var {
        let xv = self.value(x);
        let (t, c) = xv.dim();
        let half = (kernel / 2) as isize;
        let mut out = Array2::zeros((t, kernel * c));
        for p in 0..kernel {
            let off = p as isize - half;
            for r in 0..t {
                let src = r as isize + off;
                if src >= 0 && (src as usize) < t {
                    out.slice_mut(s![r, p * c..(p + 1) * c]).assign(&xv.row(src as usize));
                }
            }
        }
        self.push(out, Op::Im2Col(x, kernel))
    }

    /// Records a scalar computed outside the tape together with its gradient
    /// with respect to `input`.
    pub fn scalar_with_grad(&mut self, input: Var, value: f64, grad: Array2<f64>) -> Var {
        debug_assert_eq!(grad.dim(), self.value(input).dim());
        self.push(Array2::from_elem((1, 1), value), Op::ScalarWithGrad(input, grad))
    }

    pub fn combine(&mut self, terms: &[(Var, f64)]) -> Var {
        let v: f64 = terms.iter().map(|(t, w)| w * self.scalar(*t)).sum();
        self.push(Array2::from_elem((1, 1), v), Op::Combine(terms.to_vec()))
    }

    /// Gradients of scalar `root` with respect to every parameter leaf, indexed
    /// by parameter index. Parameters that do not influence `root` get `None`.
    pub fn backward(&self, root: Var, n_params: usize) -> Vec<Option<Array2<f64>>> {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.values.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones((1, 1)));
        let mut out: Vec<Option<Array2<f64>>> = (0..n_params).map(|_| None).collect();
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.ops[i] {
                Op::Leaf => {}
                Op::Param(p) => accumulate(&mut out[*p], g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.values[b.0].t());
                    let gb = self.values[a.0].t().dot(&g);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(&self.values[b.0]);
                    let gb = g.t().dot(&self.values[a.0]);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[b.0], g.clone());
                    accumulate(&mut grads[a.0], g);
                }
                Op::AddRow(x, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[b.0], gb);
                    accumulate(&mut grads[x.0], g);
                }
                Op::Scale(x, c) => accumulate(&mut grads[x.0], g * *c),
                Op::Relu(x) => {
                    let mut gx = g;
                    ndarray::Zip::from(&mut gx).and(&self.values[x.0]).for_each(|gv, &xv| {
                        if xv <= 0.0 {
                            *gv = 0.0
                        }
                    });
                    accumulate(&mut grads[x.0], gx);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    accumulate(&mut grads[beta.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut grads[gamma.0], (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let gxhat = &g * &self.values[gamma.0];
                    let h = gxhat.ncols() as f64;
                    let mut gx = Array2::zeros(gxhat.raw_dim());
                    for r in 0..gxhat.nrows() {
                        let gr = gxhat.row(r);
                        let xr = xhat.row(r);
                        let sum_g = gr.sum();
                        let sum_gx = gr.dot(&xr);
                        let is = inv_std[r];
                        for c in 0..gr.len() {
                            gx[[r, c]] = is / h * (h * gr[c] - sum_g - xr[c] * sum_gx);
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Softmax(x) => {
                    let sm = &self.values[i];
                    let mut gx = &g * sm;
                    for (mut row, srow) in gx.rows_mut().into_iter().zip(sm.rows()) {
                        let dot = row.sum();
                        row.zip_mut_with(&srow, |a, &s| *a -= s * dot);
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::LogSoftmax(x) => {
                    let ls = &self.values[i];
                    let mut gx = g.clone();
                    for ((mut row, grow), lrow) in gx.rows_mut().into_iter().zip(g.rows()).zip(ls.rows()) {
                        let total = grow.sum();
                        row.zip_mut_with(&lrow, |a, &l| *a -= l.exp() * total);
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::ColSlice(x, start) => {
                    let mut gx = Array2::zeros(self.values[x.0].raw_dim());
                    gx.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads[x.0], gx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.values[p.0].ncols();
                        accumulate(&mut grads[p.0], g.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::Im2Col(x, kernel) => {
                    let (t, c) = self.values[x.0].dim();
                    let half = (*kernel / 2) as isize;
                    let mut gx = Array2::zeros((t, c));
                    for p in 0..*kernel {
                        let off = p as isize - half;
                        for r in 0..t {
                            let src = r as isize + off;
                            if src >= 0 && (src as usize) < t {
                                let mut dst = gx.row_mut(src as usize);
                                dst += &g.slice(s![r, p * c..(p + 1) * c]);
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::ScalarWithGrad(x, local) => {
                    accumulate(&mut grads[x.0], local * g[[0, 0]]);
                }
                Op::Combine(terms) => {
                    for (t, w) in terms {
                        accumulate(&mut grads[t.0], Array2::from_elem((1, 1), w * g[[0, 0]]));
                    }
                }
            }
        }
        out
    }
}

/// Row-wise `x - logsumexp(x)`.
pub fn log_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut v = x.clone();
    for mut row in v.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|a| (a - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|a| a - lse);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Central differences of `f` against the tape gradient for every entry of every parameter.
    fn check(params: &[Array2<f64>], f: impl Fn(&mut Tape, &[Var]) -> Var) {
        let build = |ps: &[Array2<f64>]| {
            let mut t = Tape::new();
            let vars: Vec<Var> = ps.iter().enumerate().map(|(i, p)| t.param(i, p)).collect();
            let root = f(&mut t, &vars);
            (t, root)
        };
        let (tape, root) = build(params);
        let grads = tape.backward(root, params.len());
        let eps = 1e-6;
        for (pi, p) in params.iter().enumerate() {
            for idx in 0..p.len() {
                let (r, c) = (idx / p.ncols(), idx % p.ncols());
                let mut plus = params.to_vec();
                plus[pi][[r, c]] += eps;
                let mut minus = params.to_vec();
                minus[pi][[r, c]] -= eps;
                let (tp, rp) = build(&plus);
                let (tm, rm) = build(&minus);
                let fd = (tp.scalar(rp) - tm.scalar(rm)) / (2.0 * eps);
                let an = grads[pi].as_ref().map_or(0.0, |g| g[[r, c]]);
                assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "param {pi}[{r},{c}]: fd {fd} vs analytic {an}");
            }
        }
    }

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    /// Reduces a matrix to a scalar through a fixed random weighting so every
    /// entry's gradient is exercised.
    fn reduce(t: &mut Tape, x: Var, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, c) = t.value(x).dim();
        let w = t.leaf(rand_mat(&mut rng, c, 1));
        let y = t.matmul(x, w);
        let ones = t.leaf(Array2::ones((1, r)));
        t.matmul(ones, y)
    }

    #[test]
    fn matmul_and_friends() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ps = vec![rand_mat(&mut rng, 4, 3), rand_mat(&mut rng, 3, 5), rand_mat(&mut rng, 1, 5)];
        check(&ps, |t, v| {
            let m = t.matmul(v[0], v[1]);
            let b = t.add_row(m, v[2]);
            let r = t.relu(b);
            let s = t.scale(r, 0.7);
            reduce(t, s, 9)
        });
    }

    #[test]
    fn attention_pieces() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ps = vec![rand_mat(&mut rng, 5, 4), rand_mat(&mut rng, 5, 4)];
        check(&ps, |t, v| {
            let q = t.col_slice(v[0], 0, 2);
            let k = t.col_slice(v[1], 2, 2);
            let sc = t.matmul_t(q, k);
            let a = t.softmax(sc);
            let o = t.matmul(a, v[1]);
            let cat = t.concat_cols(&[o, q]);
            reduce(t, cat, 3)
        });
    }

    #[test]
    fn norm_conv_and_logsoftmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ps = vec![
            rand_mat(&mut rng, 6, 3),
            rand_mat(&mut rng, 1, 3),
            rand_mat(&mut rng, 1, 3),
            rand_mat(&mut rng, 9, 4),
        ];
        check(&ps, |t, v| {
            let n = t.layer_norm(v[0], v[1], v[2], 1e-5);
            let cols = t.im2col(n, 3);
            let h = t.matmul(cols, v[3]);
            let l = t.log_softmax(h);
            let a = reduce(t, l, 4);
            let b = reduce(t, n, 5);
            t.combine(&[(a, 0.3), (b, 2.0)])
        });
    }
}
