//! Scalar computation tape with one forward tangent channel and a reverse
//! sweep over both channels.
//!
//! Every node carries its value and its derivative with respect to the single
//! seeded input (time). The reverse pass propagates adjoints for the value and
//! the tangent together, so a loss built from tangents (for example `dx/dt`
//! residuals) still differentiates correctly with respect to the parameters.
//!
//! For an edge from parent `p` to child `y` the tape stores
//! `j = d value(y) / d value(p)` and `h = d tangent(y) / d value(p)`.
//! The tangent channel is linear in parent tangents with the same `j`, so the
//! reverse step is
//!
//! ```text
//! vbar(p) += j * vbar(y) + h * tbar(y)
//! tbar(p) += j * tbar(y)
//! ```
//!
//! A loss reads `dy/dt` through [`Tape::derivative`], a node whose value is
//! the tangent of `y`; its value adjoint lands in `tbar(y)`.

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::scalar::Scalar;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TapeError {
    #[error("division by a node whose value is zero")]
    DivisionByZero,
    #[error("node belongs to a different tape")]
    ForeignNode,
    #[error("tape edge points forward (node {child} -> parent {parent})")]
    Cycle { child: usize, parent: usize },
    #[error("finite difference step must be positive")]
    InvalidStep,
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

/// Read-only view of a tape node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TapeNode<T> {
    pub value: T,
    pub tangent: T,
}

#[derive(Debug, Clone, Copy)]
struct Edge<T> {
    parent: u32,
    d_value: T,
    d_cross: T,
}

#[derive(Debug, Clone, Copy)]
struct Node<T> {
    value: T,
    tangent: T,
    arity: u8,
    // Value of this node is the tangent of its single parent.
    lifts_tangent: bool,
    edges: [Edge<T>; 2],
}

/// One adjoint per registered parameter, in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector<T>(Vec<T>);

impl<T: Scalar> GradientVector<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

impl<T> std::ops::Index<usize> for GradientVector<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

#[derive(Debug)]
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
    params: Vec<u32>,
    fault: Option<TapeError>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self::with_capacity(0)
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::with_capacity(nodes),
            params: Vec::new(),
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn push(&mut self, value: T, tangent: T, edges: &[Edge<T>]) -> Var {
        let index = u32::try_from(self.nodes.len()).expect("tape exceeds u32 nodes");
        let blank = Edge {
            parent: 0,
            d_value: T::zero(),
            d_cross: T::zero(),
        };
        let mut slots = [blank; 2];
        slots[..edges.len()].copy_from_slice(edges);
        self.nodes.push(Node {
            value,
            tangent,
            arity: edges.len() as u8,
            lifts_tangent: false,
            edges: slots,
        });
        Var {
            tape: self.id,
            index,
        }
    }

    fn check(&mut self, v: Var) -> Node<T> {
        if v.tape != self.id || v.index() >= self.nodes.len() {
            self.fault.get_or_insert(TapeError::ForeignNode);
            return Node {
                value: T::zero(),
                tangent: T::zero(),
                arity: 0,
                lifts_tangent: false,
                edges: [Edge {
                    parent: 0,
                    d_value: T::zero(),
                    d_cross: T::zero(),
                }; 2],
            };
        }
        self.nodes[v.index()]
    }

    /// The differentiation variable: tangent seeded to one.
    pub fn lift_input(&mut self, t: T) -> Var {
        self.push(t, T::one(), &[])
    }

    /// A trainable parameter: tangent zero, registered for `reverse`.
    pub fn lift_param(&mut self, w: T) -> Var {
        let v = self.push(w, T::zero(), &[]);
        self.params.push(v.index);
        v
    }

    pub fn constant(&mut self, c: T) -> Var {
        self.push(c, T::zero(), &[])
    }

    pub fn node(&self, v: Var) -> TapeNode<T> {
        let n = &self.nodes[v.index()];
        TapeNode {
            value: n.value,
            tangent: n.tangent,
        }
    }

    pub fn value(&self, v: Var) -> T {
        self.nodes[v.index()].value
    }

    pub fn tangent(&self, v: Var) -> T {
        self.nodes[v.index()].tangent
    }

    fn unary(&mut self, x: Var, value: T, d1: T, d2: T) -> Var {
        let n = self.check(x);
        self.push(
            value,
            d1 * n.tangent,
            &[Edge {
                parent: x.index,
                d_value: d1,
                d_cross: d2 * n.tangent,
            }],
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (na, nb) = (self.check(a), self.check(b));
        let one = T::one();
        self.push(
            na.value + nb.value,
            na.tangent + nb.tangent,
            &[
                Edge {
                    parent: a.index,
                    d_value: one,
                    d_cross: T::zero(),
                },
                Edge {
                    parent: b.index,
                    d_value: one,
                    d_cross: T::zero(),
                },
            ],
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (na, nb) = (self.check(a), self.check(b));
        self.push(
            na.value - nb.value,
            na.tangent - nb.tangent,
            &[
                Edge {
                    parent: a.index,
                    d_value: T::one(),
                    d_cross: T::zero(),
                },
                Edge {
                    parent: b.index,
                    d_value: -T::one(),
                    d_cross: T::zero(),
                },
            ],
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (na, nb) = (self.check(a), self.check(b));
        self.push(
            na.value * nb.value,
            na.tangent * nb.value + na.value * nb.tangent,
            &[
                Edge {
                    parent: a.index,
                    d_value: nb.value,
                    d_cross: nb.tangent,
                },
                Edge {
                    parent: b.index,
                    d_value: na.value,
                    d_cross: na.tangent,
                },
            ],
        )
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let (na, nb) = (self.check(a), self.check(b));
        if nb.value == T::zero() {
            return Err(TapeError::DivisionByZero);
        }
        let inv = nb.value.recip();
        let inv2 = inv * inv;
        let value = na.value * inv;
        let tangent = na.tangent * inv - na.value * nb.tangent * inv2;
        let two = T::lit(2.0);
        Ok(self.push(
            value,
            tangent,
            &[
                Edge {
                    parent: a.index,
                    d_value: inv,
                    d_cross: -nb.tangent * inv2,
                },
                Edge {
                    parent: b.index,
                    d_value: -na.value * inv2,
                    d_cross: -na.tangent * inv2 + two * na.value * nb.tangent * inv2 * inv,
                },
            ],
        ))
    }

    pub fn sin(&mut self, x: Var) -> Var {
        let v = self.check(x).value;
        let (s, c) = v.sin_cos();
        self.unary(x, s, c, -s)
    }

    pub fn cos(&mut self, x: Var) -> Var {
        let v = self.check(x).value;
        let (s, c) = v.sin_cos();
        self.unary(x, c, -s, -c)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let e = self.check(x).value.exp();
        self.unary(x, e, e, e)
    }

    /// `x^k` for integer `k`; `k = 0` yields the constant one.
    pub fn pow_int(&mut self, x: Var, k: i32) -> Var {
        let v = self.check(x).value;
        if k == 0 {
            return self.constant(T::one());
        }
        let kk = T::lit(f64::from(k));
        let d1 = kk * v.powi(k - 1);
        let d2 = kk * T::lit(f64::from(k - 1)) * v.powi(k - 2);
        // powi(-1) at zero is inf; 0 * inf would poison k = 1.
        let d2 = if k == 1 { T::zero() } else { d2 };
        self.unary(x, v.powi(k), d1, d2)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        let v = self.check(x).value;
        self.unary(x, -v, -T::one(), T::zero())
    }

    /// Node whose value is `d y / dt`, so a loss may depend on derivatives.
    ///
    /// The value adjoint of the returned node flows into the tangent adjoint
    /// of `y`. Second time derivatives are not tracked: the returned node has
    /// tangent zero.
    pub fn derivative(&mut self, y: Var) -> Var {
        let n = self.check(y);
        let v = self.push(
            n.tangent,
            T::zero(),
            &[Edge {
                parent: y.index,
                d_value: T::zero(),
                d_cross: T::zero(),
            }],
        );
        self.nodes[v.index()].lifts_tangent = true;
        v
    }

    pub fn sum(&mut self, terms: &[Var]) -> Var {
        match terms.split_first() {
            None => self.constant(T::zero()),
            Some((&first, rest)) => rest.iter().fold(first, |acc, &t| self.add(acc, t)),
        }
    }

    /// Adjoint of `loss` with respect to every registered parameter.
    pub fn reverse(&self, loss: Var) -> Result<GradientVector<T>, TapeError> {
        if let Some(err) = &self.fault {
            return Err(err.clone());
        }
        if loss.tape != self.id || loss.index() >= self.nodes.len() {
            return Err(TapeError::ForeignNode);
        }
        let n = loss.index() + 1;
        let mut vbar = vec![T::zero(); n];
        let mut tbar = vec![T::zero(); n];
        vbar[loss.index()] = T::one();
        for i in (0..n).rev() {
            let (gv, gt) = (vbar[i], tbar[i]);
            if gv == T::zero() && gt == T::zero() {
                continue;
            }
            let node = &self.nodes[i];
            if node.lifts_tangent {
                let p = node.edges[0].parent as usize;
                if p >= i {
                    return Err(TapeError::Cycle {
                        child: i,
                        parent: p,
                    });
                }
                tbar[p] += gv;
                continue;
            }
            for e in &node.edges[..node.arity as usize] {
                let p = e.parent as usize;
                if p >= i {
                    return Err(TapeError::Cycle {
                        child: i,
                        parent: p,
                    });
                }
                vbar[p] += e.d_value * gv + e.d_cross * gt;
                tbar[p] += e.d_value * gt;
            }
        }
        Ok(GradientVector(
            self.params
                .iter()
                .map(|&p| {
                    let p = p as usize;
                    if p < n {
                        vbar[p]
                    } else {
                        T::zero()
                    }
                })
                .collect(),
        ))
    }
}

/// Central-difference gradient `(L(w + h e_i) - L(w - h e_i)) / 2h`.
pub fn finite_difference_gradient<T, F>(
    mut loss_fn: F,
    params: &[T],
    step: T,
) -> Result<GradientVector<T>, TapeError>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    finite_difference_partials(&mut loss_fn, params, step, 0..params.len())
}

/// Central differences for a subset of coordinates; the result is ordered
/// like `indices`.
pub fn finite_difference_partials<T, F, I>(
    mut loss_fn: F,
    params: &[T],
    step: T,
    indices: I,
) -> Result<GradientVector<T>, TapeError>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
    I: IntoIterator<Item = usize>,
{
    if !(step > T::zero()) {
        return Err(TapeError::InvalidStep);
    }
    let mut probe = params.to_vec();
    let two_h = step + step;
    let grad = indices
        .into_iter()
        .map(|i| {
            let w = probe[i];
            probe[i] = w + step;
            let up = loss_fn(&probe);
            probe[i] = w - step;
            let down = loss_fn(&probe);
            probe[i] = w;
            (up - down) / two_h
        })
        .collect();
    Ok(GradientVector(grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn lifted_input_is_the_seed() {
        let mut tape = Tape::<f64>::new();
        let t = tape.lift_input(0.0);
        assert_eq!(tape.node(t), TapeNode { value: 0.0, tangent: 1.0 });
        let t = tape.lift_input(4.0 * std::f64::consts::PI);
        assert!(close(tape.value(t), 12.566, 1e-3));
        assert_eq!(tape.tangent(t), 1.0);
        let t0 = tape.lift_input(0.0);
        let s = tape.sin(t0);
        assert_eq!(tape.node(s), TapeNode { value: 0.0, tangent: 1.0 });
    }

    #[test]
    fn params_have_zero_tangent() {
        let mut tape = Tape::<f64>::new();
        let w = tape.lift_param(0.5);
        assert_eq!(tape.node(w), TapeNode { value: 0.5, tangent: 0.0 });
        let t = tape.lift_input(2.0);
        let y = tape.mul(w, t);
        assert_eq!(tape.node(y), TapeNode { value: 1.0, tangent: 0.5 });
        let z = tape.lift_param(0.0);
        assert_eq!(tape.node(z), TapeNode { value: 0.0, tangent: 0.0 });
    }

    #[test]
    fn primitive_examples() {
        let mut tape = Tape::<f64>::new();
        let t = tape.lift_input(2.0);
        let c = tape.pow_int(t, 3);
        assert_eq!(tape.node(c), TapeNode { value: 8.0, tangent: 12.0 });
        let t0 = tape.lift_input(0.0);
        let m = tape.neg(t0);
        let e = tape.exp(m);
        assert_eq!(tape.node(e), TapeNode { value: 1.0, tangent: -1.0 });
    }

    #[test]
    fn tangents_match_finite_differences_in_time() {
        // Each primitive's tangent against a central difference of its value
        // channel over the input.
        type Build = fn(&mut Tape<f64>, Var) -> Var;
        let cases: [(&str, Build); 8] = [
            ("add", |tp, t| {
                let c = tp.constant(0.3);
                let s = tp.sin(t);
                tp.add(s, c)
            }),
            ("sub", |tp, t| {
                let c = tp.exp(t);
                tp.sub(t, c)
            }),
            ("mul", |tp, t| {
                let s = tp.sin(t);
                tp.mul(s, t)
            }),
            ("div", |tp, t| {
                let e = tp.exp(t);
                let s = tp.sin(t);
                tp.div(s, e).unwrap()
            }),
            ("sin", |tp, t| tp.sin(t)),
            ("cos", |tp, t| tp.cos(t)),
            ("exp", |tp, t| tp.exp(t)),
            ("pow", |tp, t| tp.pow_int(t, 5)),
        ];
        for (name, build) in cases {
            for &t0 in &[-1.3, 0.2, 0.7, 2.9] {
                let mut tape = Tape::new();
                let t = tape.lift_input(t0);
                let y = build(&mut tape, t);
                let h = 1e-6;
                let eval = |x: f64| {
                    let mut tp = Tape::new();
                    let t = tp.lift_input(x);
                    let y = build(&mut tp, t);
                    tp.value(y)
                };
                let fd = (eval(t0 + h) - eval(t0 - h)) / (2.0 * h);
                let got = tape.tangent(y);
                assert!(
                    (got - fd).abs() < 1e-7 * (1.0 + fd.abs()),
                    "{name} at {t0}: {got} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn division_by_zero_is_a_domain_error() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(1.0);
        let b = tape.constant(0.0);
        assert_eq!(tape.div(a, b), Err(TapeError::DivisionByZero));
    }

    #[test]
    fn reverse_of_square() {
        let mut tape = Tape::<f64>::new();
        let p = tape.lift_param(3.0);
        let l = tape.pow_int(p, 2);
        assert_eq!(tape.reverse(l).unwrap().as_slice(), &[6.0]);
    }

    #[test]
    fn gradient_through_the_tangent_channel() {
        for &t0 in &[0.0, 0.9, 5.0] {
            let mut tape = Tape::<f64>::new();
            let p = tape.lift_param(2.5);
            let t = tape.lift_input(t0);
            let y = tape.mul(p, t);
            let dy = tape.derivative(y);
            assert_eq!(tape.value(dy), 2.5);
            let g = tape.reverse(dy).unwrap();
            assert_eq!(g.as_slice(), &[1.0]);
        }
    }

    #[test]
    fn cross_term_of_a_derivative_loss() {
        // L = (d/dt sin(w t))^2 = w^2 cos^2(w t), dL/dw = 2w cos^2 - 2 w^2 t cos sin
        let (w0, t0) = (0.8_f64, 1.7_f64);
        let mut tape = Tape::new();
        let w = tape.lift_param(w0);
        let t = tape.lift_input(t0);
        let z = tape.mul(w, t);
        let s = tape.sin(z);
        let ds = tape.derivative(s);
        let l = tape.mul(ds, ds);
        let g = tape.reverse(l).unwrap()[0];
        let (sn, cs) = (w0 * t0).sin_cos();
        let want = 2.0 * w0 * cs * cs - 2.0 * w0 * w0 * t0 * cs * sn;
        assert!(close(g, want, 1e-14), "{g} vs {want}");
    }

    #[test]
    fn reverse_matches_finite_differences_on_a_composite() {
        fn build(tape: &mut Tape<f64>, w: &[f64], t0: f64) -> Var {
            let t = tape.lift_input(t0);
            let a = tape.lift_param(w[0]);
            let b = tape.lift_param(w[1]);
            let c = tape.lift_param(w[2]);
            let at = tape.mul(a, t);
            let s = tape.sin(at);
            let bs = tape.mul(b, s);
            let e = tape.exp(bs);
            let q = tape.pow_int(c, 3);
            let d = tape.add(q, e);
            let r = tape.div(e, d).unwrap();
            let cr = tape.cos(r);
            let y = tape.mul(cr, e);
            let dy = tape.derivative(y);
            let res = tape.sub(dy, r);
            tape.mul(res, res)
        }
        let w = [0.7, -1.3, 2.1];
        let mut tape = Tape::new();
        let l = build(&mut tape, &w, 0.6);
        let g = tape.reverse(l).unwrap();
        let fd = finite_difference_gradient(
            |p: &[f64]| {
                let mut tp = Tape::new();
                let l = build(&mut tp, p, 0.6);
                tp.value(l)
            },
            &w,
            1e-6,
        )
        .unwrap();
        for i in 0..3 {
            let rel = (g[i] - fd[i]).abs() / fd[i].abs().max(1e-12);
            assert!(rel < 1e-5, "param {i}: {} vs {}", g[i], fd[i]);
        }
    }

    #[test]
    fn reverse_ignores_unrelated_parameters() {
        let mut tape = Tape::<f64>::new();
        let a = tape.lift_param(1.0);
        let _b = tape.lift_param(2.0);
        let l = tape.sin(a);
        let g = tape.reverse(l).unwrap();
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn foreign_nodes_are_rejected() {
        let mut t1 = Tape::<f64>::new();
        let mut t2 = Tape::<f64>::new();
        let a = t1.lift_param(1.0);
        let b = t2.lift_param(1.0);
        assert_eq!(t1.reverse(b), Err(TapeError::ForeignNode));
        let c = t1.add(a, b);
        assert_eq!(t1.reverse(c), Err(TapeError::ForeignNode));
    }

    #[test]
    fn finite_difference_examples() {
        let g = finite_difference_gradient(|w: &[f64]| w[0] * w[0], &[1.0], 1e-4).unwrap();
        assert!(close(g[0], 2.0, 1e-7));
        let g = finite_difference_gradient(|w: &[f64]| w[0].sin(), &[0.0], 1e-4).unwrap();
        assert!(close(g[0], 1.0, 1e-7));
        assert_eq!(
            finite_difference_gradient(|w: &[f64]| w[0], &[0.0], 0.0),
            Err(TapeError::InvalidStep)
        );
    }

    #[test]
    fn evaluation_is_bit_deterministic() {
        let run = || {
            let mut tape = Tape::<f64>::new();
            let t = tape.lift_input(1.234);
            let w = tape.lift_param(-0.77);
            let z = tape.mul(w, t);
            let s = tape.sin(z);
            let d = tape.derivative(s);
            let l = tape.mul(d, s);
            let g = tape.reverse(l).unwrap();
            (tape.value(l).to_bits(), tape.tangent(s).to_bits(), g[0].to_bits())
        };
        assert_eq!(run(), run());
    }
}
