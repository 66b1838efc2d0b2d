//! Reverse-mode differentiation over a recorded graph of vector-valued
//! nodes.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatVec { w: Var, x: Var, rows: usize, cols: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sum(Var),
    Min(Var, Var),
    Clamp(Var, f64, f64),
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Gradients of one scalar output with respect to every recorded node.
#[derive(Debug)]
pub struct Gradients(Vec<Option<Vec<f64>>>);

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the
    /// output.
    pub fn get(&self, v: Var, len: usize) -> Vec<f64> {
        self.0[v.0].clone().unwrap_or_else(|| vec![0.0; len])
    }
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn leaf(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.leaf(value)
    }

    /// `W x` with `W` stored row-major as `rows x cols`.
    pub fn matvec(&mut self, w: Var, rows: usize, cols: usize, x: Var) -> Var {
        let (wv, xv) = (&self.nodes[w.0].value, &self.nodes[x.0].value);
        debug_assert_eq!(wv.len(), rows * cols);
        debug_assert_eq!(xv.len(), cols);
        let y = (0..rows)
            .map(|r| {
                wv[r * cols..(r + 1) * cols]
                    .iter()
                    .zip(xv)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        self.push(y, Op::MatVec { w, x, rows, cols })
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.len(), bv.len(), "operand lengths differ");
        av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect()
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes[a.0].value.iter().map(|x| f(*x)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// Vector `a` times the single-element `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.scalar(s);
        let v = self.map(a, |x| x * sv);
        self.push(v, Op::MulScalar(a, s))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.map(a, |x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let v = self.map(a, |x| x + c);
        self.push(v, Op::Offset(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.map(a, sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::ln);
        self.push(v, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        self.push(vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, f64::min);
        self.push(v, Op::Min(a, b))
    }

    /// Elementwise clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.map(a, |x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    /// Sum of a list of single-element nodes.
    pub fn add_all(&mut self, xs: &[Var]) -> Var {
        let mut acc = xs[0];
        for &x in &xs[1..] {
            acc = self.add(acc, x);
        }
        acc
    }

    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.nodes[out.0].value.len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(vec![1.0]);
        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: impl Iterator<Item = f64>) {
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(g).for_each(|(e, x)| *e += x),
                slot @ None => *slot = Some(g.collect()),
            }
        }
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let val = |v: Var| &self.nodes[v.0].value;
            match node.op {
                Op::Leaf => {}
                Op::MatVec { w, x, rows, cols } => {
                    let (wv, xv) = (val(w), val(x));
                    let gw = (0..rows * cols).map(|k| g[k / cols] * xv[k % cols]);
                    acc(&mut grads, w, gw);
                    let gx = (0..cols).map(|c| (0..rows).map(|r| g[r] * wv[r * cols + c]).sum());
                    acc(&mut grads, x, gx);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, a, g.iter().copied());
                    acc(&mut grads, b, g.iter().copied());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, a, g.iter().copied());
                    acc(&mut grads, b, g.iter().map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(a), val(b));
                    acc(&mut grads, a, g.iter().zip(bv).map(|(x, y)| x * y));
                    acc(&mut grads, b, g.iter().zip(av).map(|(x, y)| x * y));
                }
                Op::MulScalar(a, s) => {
                    let (av, sv) = (val(a), val(s)[0]);
                    acc(&mut grads, a, g.iter().map(|x| x * sv));
                    let gs: f64 = g.iter().zip(av).map(|(x, y)| x * y).sum();
                    acc(&mut grads, s, std::iter::once(gs));
                }
                Op::Scale(a, c) => acc(&mut grads, a, g.iter().map(|x| x * c)),
                Op::Offset(a) => acc(&mut grads, a, g.iter().copied()),
                Op::Relu(a) => {
                    let av = val(a);
                    acc(&mut grads, a, g.iter().zip(av).map(|(x, y)| if *y > 0.0 { *x } else { 0.0 }));
                }
                Op::Sigmoid(a) => {
                    let yv = &node.value;
                    acc(&mut grads, a, g.iter().zip(yv).map(|(x, y)| x * y * (1.0 - y)));
                }
                Op::Exp(a) => {
                    let yv = &node.value;
                    acc(&mut grads, a, g.iter().zip(yv).map(|(x, y)| x * y));
                }
                Op::Log(a) => {
                    let av = val(a);
                    acc(&mut grads, a, g.iter().zip(av).map(|(x, y)| x / y));
                }
                Op::Square(a) => {
                    let av = val(a);
                    acc(&mut grads, a, g.iter().zip(av).map(|(x, y)| 2.0 * x * y));
                }
                Op::Sum(a) => {
                    let n = val(a).len();
                    acc(&mut grads, a, std::iter::repeat_n(g[0], n));
                }
                Op::Min(a, b) => {
                    let (av, bv) = (val(a), val(b));
                    let take_a: Vec<bool> = av.iter().zip(bv).map(|(x, y)| x <= y).collect();
                    acc(&mut grads, a, g.iter().zip(&take_a).map(|(x, t)| if *t { *x } else { 0.0 }));
                    acc(&mut grads, b, g.iter().zip(&take_a).map(|(x, t)| if *t { 0.0 } else { *x }));
                }
                Op::Clamp(a, lo, hi) => {
                    let av = val(a);
                    acc(
                        &mut grads,
                        a,
                        g.iter().zip(av).map(|(x, y)| if *y >= lo && *y <= hi { *x } else { 0.0 }),
                    );
                }
            }
            grads[i] = Some(g);
        }
        Gradients(grads)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
