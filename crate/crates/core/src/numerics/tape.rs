use super::{axpy, dot, sigmoid, softmax, Scalar, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Index of a parameter tensor in the slice the tape was created over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Weight matrix `[4H, in + H]` (gate order i, f, g, o) and bias `[4H]` of one LSTM.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmWeights {
    pub w: ParamId,
    pub b: ParamId,
}

enum Op<T> {
    Leaf,
    Param(usize),
    MatMulNt(Var, Var),
    MatMulNn(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    Scale(Var, Var),
    Affine(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Ln(Var, T),
    Concat(Vec<Var>),
    Slice(Var, usize),
    StackRows(Vec<Var>),
    Reshape(Var),
    EmbedRow(Var, usize),
    Outer(Var, Var),
    Softmax(Var),
    Sum(Var),
    Pick(Var, usize),
    ScatterAdd(Var, Vec<usize>),
    Pad(Var),
}

struct Node<T> {
    op: Op<T>,
    rows: usize,
    cols: usize,
    value: Vec<T>,
}

/// Records a computation over matrices (vectors are `1 x n` rows) so that
/// gradients can be accumulated by a single reverse sweep.
///
/// Parameters are read through the borrowed slice and never copied; their
/// gradients are accumulated straight into the caller's gradient tensors.
pub struct Tape<'p, T: Scalar> {
    params: &'p [Tensor<T>],
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape {
        op,
        left: vec![a.0, a.1],
        right: vec![b.0, b.1],
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p [Tensor<T>]) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(1024),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, rows: usize, cols: usize, value: Vec<T>) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == rows * cols);
        self.nodes.push(Node { op, rows, cols, value });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[T] {
        let n = &self.nodes[v.0];
        match n.op {
            Op::Param(p) => self.params[p].data(),
            _ => &n.value,
        }
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Var> {
        if data.len() != rows * cols {
            return Err(shape_err("constant", (rows, cols), (data.len(), 1)));
        }
        Ok(self.push(Op::Leaf, rows, cols, data))
    }

    pub fn row_vector(&mut self, data: Vec<T>) -> Var {
        let n = data.len();
        self.push(Op::Leaf, 1, n, data)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.push(Op::Leaf, rows, cols, vec![T::zero(); rows * cols])
    }

    /// Leaf referring to a parameter tensor. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let (rows, cols) = self.params[id.0].matrix_dims();
        let v = self.push(Op::Param(id.0), rows, cols, Vec::new());
        self.param_vars[id.0] = Some(v);
        v
    }

    /// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(shape_err("matmul_nt", sa, sb));
        }
        let (m, k, n) = (sa.0, sa.1, sb.0);
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let ai = &av[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] = dot(ai, &bv[j * k..(j + 1) * k]);
            }
        }
        Ok(self.push(Op::MatMulNt(a, b), m, n, out))
    }

    /// `a · b` for `a: [m, k]`, `b: [k, n]`.
    pub fn matmul_nn(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul_nn", sa, sb));
        }
        let (m, k, n) = (sa.0, sa.1, sb.1);
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let oi = &mut out[i * n..(i + 1) * n];
            for l in 0..k {
                axpy(av[i * k + l], &bv[l * n..(l + 1) * n], oi);
            }
        }
        Ok(self.push(Op::MatMulNn(a, b), m, n, out))
    }

    /// `y = W x + b` with `x` a `1 x in` row, `W: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let wv = self.param(w);
        let bv = self.param(b);
        let y = self.matmul_nt(x, wv)?;
        self.add(y, bv)
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Vec<T>, usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok((out, sa.0, sa.1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, r, c) = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), r, c, v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, r, c) = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), r, c, v))
    }

    /// Elementwise minimum; on ties the gradient flows to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, r, c) = self.zip_same("minimum", a, b, |x, y| if x <= y { x } else { y })?;
        Ok(self.push(Op::Minimum(a, b), r, c, v))
    }

    /// Adds the row vector `b: [1, n]` to every row of `a: [m, n]`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.0 != 1 || sa.1 != sb.1 {
            return Err(shape_err("add_row", sa, sb));
        }
        let bv = self.value(b).to_vec();
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(sa.1) {
            for (o, x) in row.iter_mut().zip(&bv) {
                *o += *x;
            }
        }
        Ok(self.push(Op::AddRow(a, b), sa.0, sa.1, out))
    }

    /// `a * s` for a `1 x 1` node `s`.
    pub fn scale(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return Err(shape_err("scale", self.shape(a), self.shape(s)));
        }
        let k = self.scalar(s);
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| x * k).collect();
        Ok(self.push(Op::Scale(a, s), r, c, out))
    }

    /// `alpha * a + beta`
    pub fn affine(&mut self, a: Var, alpha: T, beta: T) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| alpha * x + beta).collect();
        self.push(Op::Affine(a, alpha), r, c, out)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine(a, -T::one(), T::one())
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(op, r, c, out)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    /// `ln(max(a, floor))`; the gradient is zero where the floor is active.
    pub fn ln(&mut self, a: Var, floor: T) -> Var {
        self.map(a, move |x| x.max(floor).ln(), Op::Ln(a, floor))
    }

    /// Joins row vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.0 != 1 {
                return Err(shape_err("concat", s, (1, s.1)));
            }
            out.extend_from_slice(self.value(p));
        }
        let n = out.len();
        Ok(self.push(Op::Concat(parts.to_vec()), 1, n, out))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.0 != 1 || start + len > s.1 {
            return Err(shape_err("slice", s, (start, len)));
        }
        let out = self.value(a)[start..start + len].to_vec();
        Ok(self.push(Op::Slice(a, start), 1, len, out))
    }

    /// Stacks `1 x n` rows into an `m x n` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = rows
            .first()
            .map(|&r| self.shape(r))
            .ok_or_else(|| Error::InvalidInput("stack_rows of nothing".into()))?;
        let mut out = Vec::with_capacity(rows.len() * first.1);
        for &r in rows {
            let s = self.shape(r);
            if s != (1, first.1) {
                return Err(shape_err("stack_rows", first, s));
            }
            out.extend_from_slice(self.value(r));
        }
        Ok(self.push(Op::StackRows(rows.to_vec()), rows.len(), first.1, out))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.0 * s.1 != rows * cols {
            return Err(shape_err("reshape", s, (rows, cols)));
        }
        let out = self.value(a).to_vec();
        Ok(self.push(Op::Reshape(a), rows, cols, out))
    }

    /// Row `index` of `table` as a `1 x cols` vector.
    pub fn embed_row(&mut self, table: Var, index: usize) -> Result<Var> {
        let (rows, cols) = self.shape(table);
        if index >= rows {
            return Err(Error::IdOutOfRange { id: index, limit: rows });
        }
        let out = self.value(table)[index * cols..(index + 1) * cols].to_vec();
        Ok(self.push(Op::EmbedRow(table, index), 1, cols, out))
    }

    /// Outer product of two row vectors: `[1, m] x [1, n] -> [m, n]`.
    pub fn outer(&mut self, u: Var, w: Var) -> Result<Var> {
        let (su, sw) = (self.shape(u), self.shape(w));
        if su.0 != 1 || sw.0 != 1 {
            return Err(shape_err("outer", su, sw));
        }
        let (uv, wv) = (self.value(u), self.value(w));
        let mut out = Vec::with_capacity(su.1 * sw.1);
        for &x in uv {
            out.extend(wv.iter().map(|&y| x * y));
        }
        Ok(self.push(Op::Outer(u, w), su.1, sw.1, out))
    }

    /// Softmax of a row vector over the `valid` positions.
    pub fn softmax(&mut self, a: Var, valid: Option<&[bool]>) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r != 1 {
            return Err(shape_err("softmax", (r, c), (1, c)));
        }
        let out = softmax(self.value(a), valid)?;
        Ok(self.push(Op::Softmax(a), 1, c, out))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).iter().copied().sum();
        self.push(Op::Sum(a), 1, 1, vec![total])
    }

    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let n = self.value(a).len();
        if index >= n {
            return Err(Error::IdOutOfRange { id: index, limit: n });
        }
        let x = self.value(a)[index];
        Ok(self.push(Op::Pick(a, index), 1, 1, vec![x]))
    }

    /// `out[index[i]] += a[i]` into a fresh `1 x size` row.
    pub fn scatter_add(&mut self, a: Var, index: &[usize], size: usize) -> Result<Var> {
        let av = self.value(a);
        if av.len() != index.len() {
            return Err(shape_err("scatter_add", self.shape(a), (1, index.len())));
        }
        let mut out = vec![T::zero(); size];
        for (&x, &i) in av.iter().zip(index) {
            if i >= size {
                return Err(Error::IdOutOfRange { id: i, limit: size });
            }
            out[i] += x;
        }
        Ok(self.push(Op::ScatterAdd(a, index.to_vec()), 1, size, out))
    }

    /// Extends a row vector with zeros up to `size` entries.
    pub fn pad(&mut self, a: Var, size: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.0 != 1 || s.1 > size {
            return Err(shape_err("pad", s, (1, size)));
        }
        let mut out = self.value(a).to_vec();
        out.resize(size, T::zero());
        Ok(self.push(Op::Pad(a), 1, size, out))
    }

    /// One step of a standard LSTM: `i, f, o = σ(·)`, `g = tanh(·)`,
    /// `c = f⊙c_prev + i⊙g`, `h = o⊙tanh(c)`.
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, w: LstmWeights) -> Result<(Var, Var)> {
        let hidden = self.shape(h).1;
        if self.shape(c) != (1, hidden) {
            return Err(shape_err("lstm_cell", self.shape(h), self.shape(c)));
        }
        let xh = self.concat(&[x, h])?;
        let z = self.linear(xh, w.w, w.b)?;
        if self.shape(z).1 != 4 * hidden {
            return Err(shape_err("lstm_cell", self.shape(z), (1, 4 * hidden)));
        }
        let zi = self.slice(z, 0, hidden)?;
        let zf = self.slice(z, hidden, hidden)?;
        let zg = self.slice(z, 2 * hidden, hidden)?;
        let zo = self.slice(z, 3 * hidden, hidden)?;
        let i = self.sigmoid(zi);
        let f = self.sigmoid(zf);
        let g = self.tanh(zg);
        let o = self.sigmoid(zo);
        let fc = self.mul(f, c)?;
        let ig = self.mul(i, g)?;
        let c_new = self.add(fc, ig)?;
        let tc = self.tanh(c_new);
        let h_new = self.mul(o, tc)?;
        Ok((h_new, c_new))
    }

    /// Reverse sweep from the `1 x 1` node `root`, seeding its adjoint with
    /// `seed` and accumulating (never overwriting) into `grads`, which must be
    /// shaped like the parameter slice.
    pub fn backward(&self, root: Var, seed: T, grads: &mut [Tensor<T>]) -> Result<()> {
        if self.shape(root) != (1, 1) {
            return Err(shape_err("backward", self.shape(root), (1, 1)));
        }
        if grads.len() != self.params.len() {
            return Err(Error::InvalidInput(format!(
                "{} gradient tensors for {} parameters",
                grads.len(),
                self.params.len()
            )));
        }
        let mut adj: Vec<Vec<T>> = (0..=root.0).map(|_| Vec::new()).collect();
        adj[root.0] = vec![seed];
        for i in (0..=root.0).rev() {
            let g = std::mem::take(&mut adj[i]);
            if g.is_empty() {
                continue;
            }
            let node = &self.nodes[i];
            let out = &node.value;
            match &node.op {
                Op::Leaf | Op::Param(_) => {}
                Op::MatMulNt(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = self.shape(*b).0;
                    let (av, bv) = (self.value(*a), self.value(*b));
                    {
                        let da = self.slot(&mut adj, grads, *a);
                        for r in 0..m {
                            let dr = &mut da[r * k..(r + 1) * k];
                            for j in 0..n {
                                axpy(g[r * n + j], &bv[j * k..(j + 1) * k], dr);
                            }
                        }
                    }
                    let db = self.slot(&mut adj, grads, *b);
                    for j in 0..n {
                        let dj = &mut db[j * k..(j + 1) * k];
                        for r in 0..m {
                            axpy(g[r * n + j], &av[r * k..(r + 1) * k], dj);
                        }
                    }
                }
                Op::MatMulNn(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = self.shape(*b).1;
                    let (av, bv) = (self.value(*a), self.value(*b));
                    {
                        let da = self.slot(&mut adj, grads, *a);
                        for r in 0..m {
                            for l in 0..k {
                                da[r * k + l] += dot(&g[r * n..(r + 1) * n], &bv[l * n..(l + 1) * n]);
                            }
                        }
                    }
                    let db = self.slot(&mut adj, grads, *b);
                    for l in 0..k {
                        for r in 0..m {
                            axpy(av[r * k + l], &g[r * n..(r + 1) * n], &mut db[l * n..(l + 1) * n]);
                        }
                    }
                }
                Op::Add(a, b) => {
                    axpy(T::one(), &g, self.slot(&mut adj, grads, *a));
                    axpy(T::one(), &g, self.slot(&mut adj, grads, *b));
                }
                Op::AddRow(a, b) => {
                    axpy(T::one(), &g, self.slot(&mut adj, grads, *a));
                    let n = self.shape(*b).1;
                    let db = self.slot(&mut adj, grads, *b);
                    for row in g.chunks(n) {
                        axpy(T::one(), row, db);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = self.slot(&mut adj, grads, *a);
                    for j in 0..g.len() {
                        da[j] += g[j] * bv[j];
                    }
                    let db = self.slot(&mut adj, grads, *b);
                    for j in 0..g.len() {
                        db[j] += g[j] * av[j];
                    }
                }
                Op::Minimum(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let first: Vec<bool> = av.iter().zip(bv).map(|(x, y)| x <= y).collect();
                    let da = self.slot(&mut adj, grads, *a);
                    for j in 0..g.len() {
                        if first[j] {
                            da[j] += g[j];
                        }
                    }
                    let db = self.slot(&mut adj, grads, *b);
                    for j in 0..g.len() {
                        if !first[j] {
                            db[j] += g[j];
                        }
                    }
                }
                Op::Scale(a, s) => {
                    let k = self.scalar(*s);
                    let av = self.value(*a);
                    let ds = dot(&g, av);
                    axpy(k, &g, self.slot(&mut adj, grads, *a));
                    self.slot(&mut adj, grads, *s)[0] += ds;
                }
                Op::Affine(a, alpha) => {
                    axpy(*alpha, &g, self.slot(&mut adj, grads, *a));
                }
                Op::Tanh(a) => {
                    let da = self.slot(&mut adj, grads, *a);
                    for j in 0..g.len() {
                        da[j] += g[j] * (T::one() - out[j] * out[j]);
                    }
                }
                Op::Sigmoid(a) => {
                    let da = self.slot(&mut adj, grads, *a);
                    for j in 0..g.len() {
                        da[j] += g[j] * out[j] * (T::one() - out[j]);
                    }
                }
                Op::Ln(a, floor) => {
                    let av = self.value(*a);
                    let da = self.slot(&mut adj, grads, *a);
                    for j in 0..g.len() {
                        if av[j] > *floor {
                            da[j] += g[j] / av[j];
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.shape(*p).1;
                        axpy(T::one(), &g[off..off + n], self.slot(&mut adj, grads, *p));
                        off += n;
                    }
                }
                Op::Slice(a, start) => {
                    let da = self.slot(&mut adj, grads, *a);
                    axpy(T::one(), &g, &mut da[*start..*start + g.len()]);
                }
                Op::StackRows(rows) => {
                    let n = node.cols;
                    for (r, v) in rows.iter().enumerate() {
                        axpy(T::one(), &g[r * n..(r + 1) * n], self.slot(&mut adj, grads, *v));
                    }
                }
                Op::Reshape(a) => {
                    axpy(T::one(), &g, self.slot(&mut adj, grads, *a));
                }
                Op::EmbedRow(table, index) => {
                    let n = node.cols;
                    let dt = self.slot(&mut adj, grads, *table);
                    axpy(T::one(), &g, &mut dt[index * n..(index + 1) * n]);
                }
                Op::Outer(u, w) => {
                    let (uv, wv) = (self.value(*u), self.value(*w));
                    let n = wv.len();
                    {
                        let du = self.slot(&mut adj, grads, *u);
                        for i in 0..uv.len() {
                            du[i] += dot(&g[i * n..(i + 1) * n], wv);
                        }
                    }
                    let dw = self.slot(&mut adj, grads, *w);
                    for i in 0..uv.len() {
                        axpy(uv[i], &g[i * n..(i + 1) * n], dw);
                    }
                }
                Op::Softmax(a) => {
                    let s = dot(&g, out);
                    let da = self.slot(&mut adj, grads, *a);
                    for j in 0..g.len() {
                        da[j] += out[j] * (g[j] - s);
                    }
                }
                Op::Sum(a) => {
                    let da = self.slot(&mut adj, grads, *a);
                    for d in da.iter_mut() {
                        *d += g[0];
                    }
                }
                Op::Pick(a, index) => {
                    self.slot(&mut adj, grads, *a)[*index] += g[0];
                }
                Op::Pad(a) => {
                    let da = self.slot(&mut adj, grads, *a);
                    let n = da.len();
                    axpy(T::one(), &g[..n], da);
                }
                Op::ScatterAdd(a, index) => {
                    let da = self.slot(&mut adj, grads, *a);
                    for (d, &ix) in da.iter_mut().zip(index) {
                        *d += g[ix];
                    }
                }
            }
        }
        Ok(())
    }

    /// Adjoint buffer of `v`: the parameter gradient for parameter leaves,
    /// otherwise a lazily zeroed per-node buffer.
    fn slot<'a>(&self, adj: &'a mut [Vec<T>], grads: &'a mut [Tensor<T>], v: Var) -> &'a mut [T] {
        let node = &self.nodes[v.0];
        if let Op::Param(p) = node.op {
            return grads[p].data_mut();
        }
        let buf = &mut adj[v.0];
        if buf.is_empty() {
            buf.resize(node.rows * node.cols, T::zero());
        }
        buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, Rng};
    use approx::assert_abs_diff_eq;

    fn params_from(shapes: &[&[usize]], seed: u64) -> Vec<Tensor<f64>> {
        let mut rng = Rng::new(seed);
        shapes.iter().map(|s| Tensor::uniform(s, -1.0, 1.0, &mut rng)).collect()
    }

    fn flat(params: &[Tensor<f64>]) -> Vec<f64> {
        params.iter().flat_map(|t| t.data().to_vec()).collect()
    }

    fn unflat(template: &[Tensor<f64>], x: &[f64]) -> Vec<Tensor<f64>> {
        let mut off = 0;
        template
            .iter()
            .map(|t| {
                let n = t.len();
                let out = Tensor::from_vec(t.shape(), x[off..off + n].to_vec()).unwrap();
                off += n;
                out
            })
            .collect()
    }

    /// Checks the tape gradient of `f` over all parameters against central differences.
    fn check(params: Vec<Tensor<f64>>, f: impl Fn(&mut Tape<f64>) -> Var) -> f64 {
        let mut grads: Vec<Tensor<f64>> = params.iter().map(|t| Tensor::zeros(t.shape())).collect();
        {
            let mut tape = Tape::new(&params);
            let root = f(&mut tape);
            tape.backward(root, 1.0, &mut grads).unwrap();
        }
        let analytic = flat(&grads);
        let report = finite_diff_check(&flat(&params), &analytic, 1e-6, 1e-6, |x| {
            let ps = unflat(&params, x);
            let mut tape = Tape::new(&ps);
            let root = f(&mut tape);
            Ok(tape.scalar(root))
        })
        .unwrap();
        report.max_rel_error
    }

    #[test]
    fn linear_forward_examples() {
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.0, 1.0]).unwrap();
        let params = vec![w, b];
        let mut tape = Tape::new(&params);
        let x = tape.row_vector(vec![1.0f64, 2.0]);
        let y = tape.linear(x, ParamId(0), ParamId(1)).unwrap();
        assert_eq!(tape.value(y), &[3.0, 3.0]);

        let eye = vec![
            Tensor::from_vec(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::zeros(&[3]),
        ];
        let mut tape = Tape::new(&eye);
        let x = tape.row_vector(vec![0.5f64, -2.0, 7.0]);
        let y = tape.linear(x, ParamId(0), ParamId(1)).unwrap();
        assert_eq!(tape.value(y), &[0.5, -2.0, 7.0]);
    }

    #[test]
    fn linear_shape_mismatch_names_both_shapes() {
        let params = vec![Tensor::<f32>::zeros(&[2, 3]), Tensor::zeros(&[2])];
        let mut tape = Tape::new(&params);
        let x = tape.row_vector(vec![1.0, 2.0]);
        match tape.linear(x, ParamId(0), ParamId(1)) {
            Err(Error::Shape { left, right, .. }) => {
                assert_eq!(left, vec![1, 2]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("expected shape error, got {other:?}", other = other.map(|_| ())),
        }
    }

    #[test]
    fn linear_backward_is_outer_product_and_accumulates() {
        let params = vec![
            Tensor::from_vec(&[2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap(),
            Tensor::zeros(&[2]),
        ];
        let mut grads = vec![Tensor::zeros(&[2, 3]), Tensor::zeros(&[2])];
        let mut tape = Tape::new(&params);
        let x = tape.row_vector(vec![1.0f64, 2.0, 3.0]);
        let y = tape.linear(x, ParamId(0), ParamId(1)).unwrap();
        let upstream = tape.row_vector(vec![2.0, -1.0]);
        let prod = tape.mul(y, upstream).unwrap();
        let s = tape.sum(prod);
        tape.backward(s, 1.0, &mut grads).unwrap();
        assert_eq!(grads[0].data(), &[2.0, 4.0, 6.0, -1.0, -2.0, -3.0]);
        assert_eq!(grads[1].data(), &[2.0, -1.0]);
        tape.backward(s, 1.0, &mut grads).unwrap();
        assert_eq!(grads[0].data(), &[4.0, 8.0, 12.0, -2.0, -4.0, -6.0]);
    }

    #[test]
    fn lstm_cell_zero_case() {
        let params = vec![Tensor::<f64>::zeros(&[16, 8]), Tensor::zeros(&[16])];
        let mut tape = Tape::new(&params);
        let x = tape.zeros(1, 4);
        let h = tape.zeros(1, 4);
        let c = tape.zeros(1, 4);
        let w = LstmWeights {
            w: ParamId(0),
            b: ParamId(1),
        };
        let (h1, c1) = tape.lstm_cell(x, h, c, w).unwrap();
        assert!(tape.value(h1).iter().all(|&v| v == 0.0));
        assert!(tape.value(c1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_cell_with_zero_previous_cell_is_input_times_candidate() {
        let params = params_from(&[&[12, 6], &[12]], 5);
        let mut tape = Tape::new(&params);
        let x = tape.row_vector(vec![0.3, -0.2, 0.9]);
        let h = tape.row_vector(vec![0.1, 0.5, -0.4]);
        let c = tape.zeros(1, 3);
        let (_, c1) = tape
            .lstm_cell(
                x,
                h,
                c,
                LstmWeights {
                    w: ParamId(0),
                    b: ParamId(1),
                },
            )
            .unwrap();
        let z: Vec<f64> = {
            let xh = [0.3, -0.2, 0.9, 0.1, 0.5, -0.4];
            (0..12)
                .map(|r| params[1].data()[r] + (0..6).map(|k| params[0].row(r)[k] * xh[k]).sum::<f64>())
                .collect()
        };
        for j in 0..3 {
            let i = sigmoid(z[j]);
            let g = z[6 + j].tanh();
            assert_abs_diff_eq!(tape.value(c1)[j], i * g, epsilon = 1e-12);
        }
    }

    #[test]
    fn lstm_cell_gradients_match_finite_differences() {
        for seed in 0..5 {
            let params = params_from(&[&[16, 8], &[16], &[1, 4], &[1, 4], &[1, 4]], seed);
            let err = check(params, |t| {
                let x = t.param(ParamId(2));
                let h = t.param(ParamId(3));
                let c = t.param(ParamId(4));
                let w = LstmWeights {
                    w: ParamId(0),
                    b: ParamId(1),
                };
                let (h1, c1) = t.lstm_cell(x, h, c, w).unwrap();
                let (h2, _) = t.lstm_cell(h1, h1, c1, w).unwrap();
                let s = t.mul(h2, h2).unwrap();
                t.sum(s)
            });
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn composed_ops_match_finite_differences() {
        let params = params_from(&[&[3, 4], &[2, 4], &[1, 3], &[1, 2], &[1, 4]], 11);
        let err = check(params, |t| {
            let m = t.param(ParamId(0));
            let w = t.param(ParamId(1));
            let u = t.param(ParamId(2));
            let v = t.param(ParamId(3));
            let b = t.param(ParamId(4));
            let mw = t.matmul_nt(m, w).unwrap(); // [3,2]
            let ov = t.outer(u, v).unwrap(); // [3,2]
            let pre = t.add(mw, ov).unwrap();
            let th = t.tanh(pre);
            let col = t.matmul_nt(th, v).unwrap(); // [3,1]
            let row = t.reshape(col, 1, 3).unwrap();
            let a = t.softmax(row, Some(&[true, true, false])).unwrap();
            let ctx = t.matmul_nn(a, m).unwrap(); // [1,4]
            let shifted = t.add_row(m, ctx).unwrap();
            let sg = t.sigmoid(shifted);
            let total = t.sum(sg);
            let p = t.pick(ctx, 2).unwrap();
            let sc = t.scale(b, p).unwrap();
            let sc = t.concat(&[sc, a]).unwrap();
            let sl = t.slice(sc, 1, 4).unwrap();
            let sp = t.scatter_add(sl, &[0, 2, 0, 1], 3).unwrap();
            let sp = t.pad(sp, 5).unwrap();
            let pos = t.affine(sp, 0.5, 3.0);
            let lg = t.ln(pos, 1e-12);
            let s2 = t.sum(lg);
            let both = t.concat(&[total, s2]).unwrap();
            let st = t.stack_rows(&[both, both]).unwrap();
            let e = t.embed_row(st, 1).unwrap();
            let mins = t.minimum(e, both).unwrap();
            t.sum(mins)
        });
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn minimum_routes_gradient_to_smaller_input() {
        let params = vec![
            Tensor::from_vec(&[2], vec![0.2, 0.9]).unwrap(),
            Tensor::from_vec(&[2], vec![0.5, 0.1]).unwrap(),
        ];
        let mut grads = vec![Tensor::zeros(&[2]), Tensor::zeros(&[2])];
        let mut tape = Tape::new(&params);
        let (a, b) = (tape.param(ParamId(0)), tape.param(ParamId(1)));
        let m = tape.minimum(a, b).unwrap();
        let s = tape.sum(m);
        tape.backward(s, 1.0f64, &mut grads).unwrap();
        assert_eq!(grads[0].data(), &[1.0, 0.0]);
        assert_eq!(grads[1].data(), &[0.0, 1.0]);
    }
}
