//! Time-dependent Lindblad master-equation integrator:
//! drho/dt = -i[H(t), rho] + sum_k (L_k rho L_k^dag - 1/2 {L_k^dag L_k, rho}),
//! where both Hamiltonian terms and collapse-operator prefactors follow
//! time schedules. Integration uses an adaptive embedded Dormand-Prince 5(4)
//! scheme stepping exactly onto the requested output times; a dense
//! superoperator exponential serves as a brute-force oracle for
//! time-independent systems.
//!
//! Units: seconds for time, rad/s for all angular-frequency coefficients.
//! H(t) is assembled as sum_i coeff_i(t) op_i + h.c. (half is stored, the
//! conjugate is always added), so it is Hermitian by construction.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::linalg::expm;
use crate::{Error, Result, C64};

/// Time-dependent complex coefficient: a constant, linear interpolation on a
/// uniform sample grid (clamped outside), or an arbitrary closed form.
#[derive(Clone)]
pub enum Schedule {
    Constant(C64),
    Sampled {
        start: f64,
        dt: f64,
        values: Vec<C64>,
    },
    Func(Arc<dyn Fn(f64) -> C64 + Send + Sync>),
}

impl fmt::Debug for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Constant(z) => write!(f, "Schedule::Constant({z})"),
            Schedule::Sampled { start, dt, values } => write!(
                f,
                "Schedule::Sampled {{ start: {start:e}, dt: {dt:e}, n: {} }}",
                values.len()
            ),
            Schedule::Func(_) => write!(f, "Schedule::Func(..)"),
        }
    }
}

impl Schedule {
    /// Constant real coefficient.
    pub fn constant(value: f64) -> Self {
        Schedule::Constant(C64::from(value))
    }

    /// Build from an explicit uniform time grid; validates uniform spacing.
    pub fn from_samples(times: &[f64], values: Vec<C64>) -> Result<Self> {
        if times.len() < 2 || times.len() != values.len() {
            return Err(Error::Dimension(format!(
                "schedule needs >= 2 samples with matching grid ({} times, {} values)",
                times.len(),
                values.len()
            )));
        }
        let dt = times[1] - times[0];
        if dt <= 0.0 {
            return Err(Error::Domain("schedule grid must be increasing".into()));
        }
        for w in times.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt {
                return Err(Error::Domain("schedule grid must be uniform".into()));
            }
        }
        Ok(Schedule::Sampled {
            start: times[0],
            dt,
            values,
        })
    }

    /// Real-valued samples on a uniform grid.
    pub fn from_real_samples(times: &[f64], values: &[f64]) -> Result<Self> {
        Self::from_samples(times, values.iter().map(|&v| C64::from(v)).collect())
    }

    /// Arbitrary closed-form coefficient.
    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(f64) -> C64 + Send + Sync + 'static,
    {
        Schedule::Func(Arc::new(f))
    }

    /// Evaluate at time `t`; sampled schedules clamp to endpoint values.
    pub fn value(&self, t: f64) -> C64 {
        match self {
            Schedule::Constant(z) => *z,
            Schedule::Sampled { start, dt, values } => {
                let x = (t - start) / dt;
                if x <= 0.0 {
                    return values[0];
                }
                let last = values.len() - 1;
                if x >= last as f64 {
                    return values[last];
                }
                let i = x.floor() as usize;
                let w = x - i as f64;
                values[i] * C64::from(1.0 - w) + values[i + 1] * C64::from(w)
            }
            Schedule::Func(f) => f(t),
        }
    }

    /// The constant value, if this schedule is time-independent.
    pub fn as_constant(&self) -> Option<C64> {
        match self {
            Schedule::Constant(z) => Some(*z),
            _ => None,
        }
    }

    /// Schedule scaled by a complex factor.
    pub fn scaled(&self, z: C64) -> Schedule {
        match self {
            Schedule::Constant(c) => Schedule::Constant(c * z),
            other => {
                let s = other.clone();
                Schedule::from_fn(move |t| s.value(t) * z)
            }
        }
    }

    /// Pointwise product of two schedules.
    pub fn product(&self, other: &Schedule) -> Schedule {
        match (self, other) {
            (Schedule::Constant(a), Schedule::Constant(b)) => Schedule::Constant(a * b),
            _ => {
                let (a, b) = (self.clone(), other.clone());
                Schedule::from_fn(move |t| a.value(t) * b.value(t))
            }
        }
    }

    /// Complex conjugate of the schedule.
    pub fn conj(&self) -> Schedule {
        match self {
            Schedule::Constant(c) => Schedule::Constant(c.conj()),
            other => {
                let s = other.clone();
                Schedule::from_fn(move |t| s.value(t).conj())
            }
        }
    }

    /// sqrt(max(Re f(t), 0)), used to turn rate schedules into amplitudes.
    pub fn sqrt_re(&self) -> Schedule {
        match self {
            Schedule::Constant(c) => Schedule::Constant(C64::from(c.re.max(0.0).sqrt())),
            other => {
                let s = other.clone();
                Schedule::from_fn(move |t| C64::from(s.value(t).re.max(0.0).sqrt()))
            }
        }
    }
}

/// One Hamiltonian contribution coeff(t)·op; the Hermitian conjugate is
/// always added during assembly.
#[derive(Clone, Debug)]
pub struct HTerm {
    pub coeff: Schedule,
    pub op: DMatrix<C64>,
}

/// One collapse operator L(t) = sum_i f_i(t)·op_i. Multiple scheduled parts
/// form a single jump channel (they interfere), e.g. a resonator decay
/// amplitude summed with a virtual-cavity coupling.
#[derive(Clone, Debug)]
pub struct CollapseTerm {
    pub parts: Vec<(Schedule, DMatrix<C64>)>,
}

impl CollapseTerm {
    pub fn single(coeff: Schedule, op: DMatrix<C64>) -> Self {
        CollapseTerm {
            parts: vec![(coeff, op)],
        }
    }

    /// Assemble L(t).
    pub fn operator(&self, t: f64) -> DMatrix<C64> {
        let n = self.parts[0].1.nrows();
        let mut l = DMatrix::<C64>::zeros(n, n);
        for (sched, op) in &self.parts {
            let f = sched.value(t);
            if f != C64::from(0.0) {
                l += op * f;
            }
        }
        l
    }

    fn is_constant(&self) -> bool {
        self.parts.iter().all(|(s, _)| s.as_constant().is_some())
    }
}

/// A complete open-system model on one Hilbert space.
#[derive(Clone, Debug)]
pub struct LindbladSystem {
    pub dim: usize,
    pub h_terms: Vec<HTerm>,
    pub collapse: Vec<CollapseTerm>,
    /// Integration window (start, end) in seconds.
    pub t_span: (f64, f64),
}

impl LindbladSystem {
    pub fn new(dim: usize, t_span: (f64, f64)) -> Self {
        LindbladSystem {
            dim,
            h_terms: Vec::new(),
            collapse: Vec::new(),
            t_span,
        }
    }

    pub fn add_h_term(&mut self, coeff: Schedule, op: DMatrix<C64>) -> &mut Self {
        self.h_terms.push(HTerm { coeff, op });
        self
    }

    pub fn add_collapse(&mut self, term: CollapseTerm) -> &mut Self {
        self.collapse.push(term);
        self
    }

    /// Check that every operator matches the declared dimension.
    pub fn validate(&self) -> Result<()> {
        if self.t_span.1 <= self.t_span.0 {
            return Err(Error::Domain(format!(
                "t_span must be increasing, got ({:e}, {:e})",
                self.t_span.0, self.t_span.1
            )));
        }
        let check = |op: &DMatrix<C64>| -> Result<()> {
            if op.nrows() != self.dim || op.ncols() != self.dim {
                return Err(Error::Dimension(format!(
                    "operator is {}x{}, system dimension is {}",
                    op.nrows(),
                    op.ncols(),
                    self.dim
                )));
            }
            Ok(())
        };
        for term in &self.h_terms {
            check(&term.op)?;
        }
        for term in &self.collapse {
            if term.parts.is_empty() {
                return Err(Error::Dimension("collapse term with no parts".into()));
            }
            for (_, op) in &term.parts {
                check(op)?;
            }
        }
        Ok(())
    }

    /// H(t) = sum coeff_i(t)·op_i + h.c.
    pub fn hamiltonian(&self, t: f64) -> DMatrix<C64> {
        let mut half = DMatrix::<C64>::zeros(self.dim, self.dim);
        for term in &self.h_terms {
            let c = term.coeff.value(t);
            if c != C64::from(0.0) {
                half += &term.op * c;
            }
        }
        let adj = half.adjoint();
        half + adj
    }

    /// Right-hand side of the master equation at time `t`.
    pub fn rhs(&self, t: f64, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let h = self.hamiltonian(t);
        let mut d = (&h * rho - rho * &h) * C64::new(0.0, -1.0);
        for term in &self.collapse {
            let l = term.operator(t);
            let ld = l.adjoint();
            let lr = &l * rho;
            d += &lr * &ld;
            let ll = &ld * &l;
            d -= (&ll * rho + rho * &ll) * C64::from(0.5);
        }
        d
    }
}

/// Relative/absolute error control for the adaptive integrator.
#[derive(Clone, Copy, Debug)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rel: 1e-8,
            abs: 1e-10,
        }
    }
}

/// Solution states sampled at the requested output times.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DMatrix<C64>>,
    pub observables: Vec<(String, Vec<f64>)>,
}

impl Trajectory {
    /// Real expectation value tr(rho op) along the trajectory.
    pub fn expectation(&self, op: &DMatrix<C64>) -> Vec<f64> {
        self.states.iter().map(|s| (op * s).trace().re).collect()
    }

    pub fn final_state(&self) -> &DMatrix<C64> {
        self.states.last().expect("trajectory has no states")
    }

    /// Compute and store a named observable series.
    pub fn record_observable(&mut self, name: &str, op: &DMatrix<C64>) {
        let series = self.expectation(op);
        self.observables.push((name.to_string(), series));
    }
}

// Dormand-Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Error weights: b(5th) - b(4th).
const E1: f64 = B1 - 5179.0 / 57600.0;
const E3: f64 = B3 - 7571.0 / 16695.0;
const E4: f64 = B4 - 393.0 / 640.0;
const E5: f64 = B5 + 92097.0 / 339200.0;
const E6: f64 = B6 - 187.0 / 2100.0;
const E7: f64 = -1.0 / 40.0;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

fn scaled_err_norm(
    err: &DMatrix<C64>,
    y: &DMatrix<C64>,
    ynew: &DMatrix<C64>,
    tol: Tolerances,
) -> f64 {
    let n = err.len() as f64;
    let mut acc = 0.0;
    for ((e, a), b) in err.iter().zip(y.iter()).zip(ynew.iter()) {
        let sc = tol.abs + tol.rel * a.norm().max(b.norm());
        let r = e.norm() / sc;
        acc += r * r;
    }
    (acc / n).sqrt()
}

/// Integrate the master equation from rho0 at t_span.0, returning the state
/// at each requested output time. Output times must be nondecreasing and lie
/// inside the system's t_span.
pub fn evolve(
    sys: &LindbladSystem,
    rho0: &DMatrix<C64>,
    output_times: &[f64],
    tol: Tolerances,
) -> Result<Trajectory> {
    sys.validate()?;
    if rho0.nrows() != sys.dim || rho0.ncols() != sys.dim {
        return Err(Error::Dimension(format!(
            "initial state is {}x{}, system dimension is {}",
            rho0.nrows(),
            rho0.ncols(),
            sys.dim
        )));
    }
    if output_times.is_empty() {
        return Err(Error::Domain("no output times requested".into()));
    }
    let span = sys.t_span.1 - sys.t_span.0;
    let mut prev = sys.t_span.0;
    for &t in output_times {
        if t < prev - 1e-12 * span.abs() {
            return Err(Error::Domain("output times must be nondecreasing".into()));
        }
        if t < sys.t_span.0 - 1e-12 * span.abs() || t > sys.t_span.1 + 1e-12 * span.abs() {
            return Err(Error::Domain(format!(
                "output time {t:e} outside t_span ({:e}, {:e})",
                sys.t_span.0, sys.t_span.1
            )));
        }
        prev = t;
    }

    let tiny = span * 1e-14;
    let mut t = sys.t_span.0;
    let mut y = rho0.clone();
    let mut k1 = sys.rhs(t, &y);
    let mut h = span * 1e-3;
    let mut states = Vec::with_capacity(output_times.len());
    let mut n_steps: u64 = 0;
    const MAX_STEPS: u64 = 20_000_000;

    for &t_out in output_times {
        while t < t_out - tiny {
            n_steps += 1;
            if n_steps > MAX_STEPS {
                return Err(Error::NonConvergence(format!(
                    "step budget exhausted at t = {t:.6e} s"
                )));
            }
            let hs = h.min(t_out - t);
            let c = C64::from(hs);

            let y2 = &y + &k1 * (c * C64::from(A21));
            let k2 = sys.rhs(t + C2 * hs, &y2);
            let y3 = &y + &k1 * (c * C64::from(A31)) + &k2 * (c * C64::from(A32));
            let k3 = sys.rhs(t + C3 * hs, &y3);
            let y4 = &y
                + &k1 * (c * C64::from(A41))
                + &k2 * (c * C64::from(A42))
                + &k3 * (c * C64::from(A43));
            let k4 = sys.rhs(t + C4 * hs, &y4);
            let y5 = &y
                + &k1 * (c * C64::from(A51))
                + &k2 * (c * C64::from(A52))
                + &k3 * (c * C64::from(A53))
                + &k4 * (c * C64::from(A54));
            let k5 = sys.rhs(t + C5 * hs, &y5);
            let y6 = &y
                + &k1 * (c * C64::from(A61))
                + &k2 * (c * C64::from(A62))
                + &k3 * (c * C64::from(A63))
                + &k4 * (c * C64::from(A64))
                + &k5 * (c * C64::from(A65));
            let k6 = sys.rhs(t + hs, &y6);
            let ynew = &y
                + &k1 * (c * C64::from(B1))
                + &k3 * (c * C64::from(B3))
                + &k4 * (c * C64::from(B4))
                + &k5 * (c * C64::from(B5))
                + &k6 * (c * C64::from(B6));
            let k7 = sys.rhs(t + hs, &ynew);
            let err = &k1 * (c * C64::from(E1))
                + &k3 * (c * C64::from(E3))
                + &k4 * (c * C64::from(E4))
                + &k5 * (c * C64::from(E5))
                + &k6 * (c * C64::from(E6))
                + &k7 * (c * C64::from(E7));

            let err_norm = scaled_err_norm(&err, &y, &ynew, tol);
            if err_norm <= 1.0 {
                t += hs;
                y = ynew;
                k1 = k7; // first-same-as-last
                let fac = if err_norm == 0.0 {
                    5.0
                } else {
                    (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
                };
                h = hs * fac;
            } else {
                let fac = (0.9 * err_norm.powf(-0.2)).clamp(0.2, 0.9);
                h = hs * fac;
                if h < span * 1e-14 {
                    return Err(Error::NonConvergence(format!(
                        "step size underflow at t = {t:.6e} s (last good state kept)"
                    )));
                }
            }
        }
        states.push(y.clone());
    }

    Ok(Trajectory {
        times: output_times.to_vec(),
        states,
        observables: Vec::new(),
    })
}

/// Dense Liouvillian matrix for a time-independent system, acting on the
/// column-stacked vectorization of rho:
/// Lsup = -i(I (x) H - H^T (x) I) + sum_k [conj(L) (x) L
///        - 1/2 I (x) L^dag L - 1/2 (L^dag L)^T (x) I].
pub fn liouvillian_matrix(sys: &LindbladSystem) -> Result<DMatrix<C64>> {
    sys.validate()?;
    let n = sys.dim;
    let id = DMatrix::<C64>::identity(n, n);

    let mut half = DMatrix::<C64>::zeros(n, n);
    for term in &sys.h_terms {
        let c = term.coeff.as_constant().ok_or_else(|| {
            Error::Invalid("superoperator oracle requires constant schedules".into())
        })?;
        half += &term.op * c;
    }
    let h = &half + half.adjoint();

    let mut sup = (id.kronecker(&h) - h.transpose().kronecker(&id)) * C64::new(0.0, -1.0);
    for term in &sys.collapse {
        if !term.is_constant() {
            return Err(Error::Invalid(
                "superoperator oracle requires constant schedules".into(),
            ));
        }
        let l = term.operator(0.0);
        let ld = l.adjoint();
        let ll = &ld * &l;
        sup += l.map(|z| z.conj()).kronecker(&l);
        sup -= id.kronecker(&ll) * C64::from(0.5);
        sup -= ll.transpose().kronecker(&id) * C64::from(0.5);
    }
    Ok(sup)
}

/// Brute-force reference: rho(t) = unvec(exp(Lsup t) vec(rho0)) for a
/// time-independent system. Requires dim^2 <= 4096.
pub fn evolve_superoperator_reference(
    sys: &LindbladSystem,
    rho0: &DMatrix<C64>,
    t: f64,
) -> Result<DMatrix<C64>> {
    let n = sys.dim;
    if n * n > 4096 {
        return Err(Error::Dimension(format!(
            "superoperator dimension {} exceeds 4096",
            n * n
        )));
    }
    if rho0.nrows() != n || rho0.ncols() != n {
        return Err(Error::Dimension(format!(
            "initial state is {}x{}, system dimension is {n}",
            rho0.nrows(),
            rho0.ncols()
        )));
    }
    let sup = liouvillian_matrix(sys)? * C64::from(t);
    let u = expm(&sup);
    let v = DVector::<C64>::from_column_slice(rho0.as_slice());
    let w = u * v;
    Ok(DMatrix::<C64>::from_column_slice(n, n, w.as_slice()))
}
