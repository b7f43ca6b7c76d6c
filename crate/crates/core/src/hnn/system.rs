//! The two Hamiltonian systems and their equations of motion.

use std::fmt;
use std::str::FromStr;

use crate::diffengine::{Tape, Var};
use crate::scalar::Scalar;

/// Right-hand side of a first-order autonomous ODE with a conserved energy.
pub trait Dynamics<T: Scalar> {
    fn dim(&self) -> usize;
    /// `out <- f(state)`.
    fn rhs_into(&self, state: &[T], out: &mut [T]);
    fn energy(&self, state: &[T]) -> T;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SystemKind {
    /// `H = p^2/2 + x^2/2 + x^4/4`, state `(x, p)`.
    NonlinearOscillator,
    /// `H = (px^2 + py^2)/2 + (x^2 + y^2)/2 + x^2 y - y^3/3`, state
    /// `(x, y, px, py)`.
    HenonHeiles,
}

impl SystemKind {
    pub fn dim(self) -> usize {
        match self {
            SystemKind::NonlinearOscillator => 2,
            SystemKind::HenonHeiles => 4,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            SystemKind::NonlinearOscillator => "NLO",
            SystemKind::HenonHeiles => "HH",
        }
    }

    pub fn default_initial_state(self) -> Vec<f64> {
        match self {
            SystemKind::NonlinearOscillator => vec![1.3, 1.0],
            SystemKind::HenonHeiles => vec![0.3, -0.3, 0.3, 0.15],
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for SystemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "nlo" | "nonlinear_oscillator" => Ok(SystemKind::NonlinearOscillator),
            "hh" | "henon_heiles" | "henon-heiles" => Ok(SystemKind::HenonHeiles),
            other => Err(format!("unknown system `{other}` (expected NLO or HH)")),
        }
    }
}

/// A Hamiltonian system with a fixed initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec<T> {
    pub kind: SystemKind,
    pub initial_state: Vec<T>,
}

impl<T: Scalar> SystemSpec<T> {
    pub fn new(kind: SystemKind, initial_state: Vec<T>) -> Option<Self> {
        let spec = Self {
            kind,
            initial_state,
        };
        let ok = spec.initial_state.len() == kind.dim()
            && spec.energy(&spec.initial_state).is_finite();
        ok.then_some(spec)
    }

    pub fn with_default_state(kind: SystemKind) -> Self {
        let ic = kind
            .default_initial_state()
            .into_iter()
            .map(T::lit)
            .collect();
        Self::new(kind, ic).expect("default initial state is valid")
    }

    pub fn nonlinear_oscillator() -> Self {
        Self::with_default_state(SystemKind::NonlinearOscillator)
    }

    pub fn henon_heiles() -> Self {
        Self::with_default_state(SystemKind::HenonHeiles)
    }

    pub fn name(&self) -> &'static str {
        self.kind.tag()
    }

    pub fn rhs(&self, state: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.kind.dim()];
        self.rhs_into(state, &mut out);
        out
    }

    /// `J_f(state)^T * cotangent`.
    pub fn rhs_vjp(&self, state: &[T], cot: &[T], out: &mut [T]) {
        let two = T::lit(2.0);
        match self.kind {
            SystemKind::NonlinearOscillator => {
                let x = state[0];
                out[0] = -(T::one() + T::lit(3.0) * x * x) * cot[1];
                out[1] = cot[0];
            }
            SystemKind::HenonHeiles => {
                let (x, y) = (state[0], state[1]);
                out[0] = -(T::one() + two * y) * cot[2] - two * x * cot[3];
                out[1] = -two * x * cot[2] + (two * y - T::one()) * cot[3];
                out[2] = cot[0];
                out[3] = cot[1];
            }
        }
    }

    /// Residuals of Hamilton's equations on the tape, given state estimates
    /// and their time derivatives (as value nodes).
    pub fn residual_terms(&self, tape: &mut Tape<T>, state: &[Var], deriv: &[Var]) -> Vec<Var> {
        match self.kind {
            SystemKind::NonlinearOscillator => {
                let (x, p) = (state[0], state[1]);
                let (dx, dp) = (deriv[0], deriv[1]);
                // dx - p, dp + x + x^3
                let r1 = tape.sub(dx, p);
                let x3 = tape.pow_int(x, 3);
                let a = tape.add(dp, x);
                let r2 = tape.add(a, x3);
                vec![r1, r2]
            }
            SystemKind::HenonHeiles => {
                let (x, y, px, py) = (state[0], state[1], state[2], state[3]);
                let two = tape.constant(T::lit(2.0));
                // dx - px, dy - py, dpx + x + 2xy, dpy + y + x^2 - y^2
                let r1 = tape.sub(deriv[0], px);
                let r2 = tape.sub(deriv[1], py);
                let xy = tape.mul(x, y);
                let xy2 = tape.mul(two, xy);
                let a = tape.add(deriv[2], x);
                let r3 = tape.add(a, xy2);
                let x2 = tape.pow_int(x, 2);
                let y2 = tape.pow_int(y, 2);
                let b = tape.add(deriv[3], y);
                let c = tape.add(b, x2);
                let r4 = tape.sub(c, y2);
                vec![r1, r2, r3, r4]
            }
        }
    }
}

impl<T: Scalar> Dynamics<T> for SystemSpec<T> {
    fn dim(&self) -> usize {
        self.kind.dim()
    }

    fn rhs_into(&self, s: &[T], out: &mut [T]) {
        match self.kind {
            SystemKind::NonlinearOscillator => {
                let x = s[0];
                out[0] = s[1];
                out[1] = -(x + x * x * x);
            }
            SystemKind::HenonHeiles => {
                let (x, y) = (s[0], s[1]);
                let two = T::lit(2.0);
                out[0] = s[2];
                out[1] = s[3];
                out[2] = -(x + two * x * y);
                out[3] = -(y + x * x - y * y);
            }
        }
    }

    fn energy(&self, s: &[T]) -> T {
        let half = T::lit(0.5);
        match self.kind {
            SystemKind::NonlinearOscillator => {
                let (x, p) = (s[0], s[1]);
                half * p * p + half * x * x + T::lit(0.25) * x.powi(4)
            }
            SystemKind::HenonHeiles => {
                let (x, y, px, py) = (s[0], s[1], s[2], s[3]);
                half * (px * px + py * py) + half * (x * x + y * y) + x * x * y
                    - y.powi(3) / T::lit(3.0)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_examples() {
        let nlo = SystemSpec::<f64>::nonlinear_oscillator();
        assert_eq!(nlo.energy(&[1.0, 0.0]), 0.75);
        let hh = SystemSpec::<f64>::henon_heiles();
        assert_eq!(hh.energy(&[0.0; 4]), 0.0);
        assert!((hh.energy(&[0.0, 1.0, 0.0, 0.0]) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn default_hh_state_is_bounded() {
        let hh = SystemSpec::<f64>::henon_heiles();
        let e = hh.energy(&hh.initial_state);
        assert!(e > 0.0 && e < 1.0 / 6.0, "energy {e}");
    }

    #[test]
    fn wrong_dimension_rejected() {
        assert!(SystemSpec::<f64>::new(SystemKind::HenonHeiles, vec![0.0; 2]).is_none());
        assert!(SystemSpec::<f64>::new(SystemKind::NonlinearOscillator, vec![f64::NAN, 0.0]).is_none());
    }

    #[test]
    fn parse_names() {
        assert_eq!("NLO".parse::<SystemKind>(), Ok(SystemKind::NonlinearOscillator));
        assert_eq!("hh".parse::<SystemKind>(), Ok(SystemKind::HenonHeiles));
        assert!("ising".parse::<SystemKind>().is_err());
    }

    fn sample_states(dim: usize) -> Vec<Vec<f64>> {
        (0..25)
            .map(|i| (0..dim).map(|j| ((i * 7 + j * 3) as f64 * 0.37).sin() * 1.4).collect())
            .collect()
    }

    #[test]
    fn tape_residual_vanishes_on_exact_derivatives() {
        for kind in [SystemKind::NonlinearOscillator, SystemKind::HenonHeiles] {
            let sys = SystemSpec::<f64>::with_default_state(kind);
            for s in sample_states(kind.dim()) {
                let f = sys.rhs(&s);
                let mut tape = Tape::new();
                let sv: Vec<_> = s.iter().map(|&v| tape.constant(v)).collect();
                let dv: Vec<_> = f.iter().map(|&v| tape.constant(v)).collect();
                for r in sys.residual_terms(&mut tape, &sv, &dv) {
                    assert!(tape.value(r).abs() < 1e-14, "{kind}: residual {}", tape.value(r));
                }
            }
        }
    }

    #[test]
    fn rhs_is_hamiltons_equations() {
        // dx/dt = dH/dp and dp/dt = -dH/dx, checked by central differences.
        for kind in [SystemKind::NonlinearOscillator, SystemKind::HenonHeiles] {
            let sys = SystemSpec::<f64>::with_default_state(kind);
            let n = kind.dim() / 2;
            for s in sample_states(kind.dim()) {
                let f = sys.rhs(&s);
                for i in 0..kind.dim() {
                    let h = 1e-6;
                    let mut up = s.clone();
                    let mut dn = s.clone();
                    up[i] += h;
                    dn[i] -= h;
                    let dh = (sys.energy(&up) - sys.energy(&dn)) / (2.0 * h);
                    // coordinate i pairs with momentum i+n
                    let want = if i < n { -dh } else { dh };
                    let slot = if i < n { i + n } else { i - n };
                    assert!((f[slot] - want).abs() < 1e-6, "{kind} slot {slot}");
                }
            }
        }
    }

    #[test]
    fn vjp_matches_jacobian_differences() {
        for kind in [SystemKind::NonlinearOscillator, SystemKind::HenonHeiles] {
            let sys = SystemSpec::<f64>::with_default_state(kind);
            let d = kind.dim();
            for s in sample_states(d) {
                let cot: Vec<f64> = (0..d).map(|j| 0.3 + j as f64).collect();
                let mut got = vec![0.0; d];
                sys.rhs_vjp(&s, &cot, &mut got);
                for i in 0..d {
                    let h = 1e-6;
                    let mut up = s.clone();
                    let mut dn = s.clone();
                    up[i] += h;
                    dn[i] -= h;
                    let (fu, fd) = (sys.rhs(&up), sys.rhs(&dn));
                    let want: f64 = (0..d).map(|j| cot[j] * (fu[j] - fd[j]) / (2.0 * h)).sum();
                    assert!((got[i] - want).abs() < 1e-6);
                }
            }
        }
    }
}
