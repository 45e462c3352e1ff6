//! Numerical realization of the flow: adaptive Dormand-Prince 5(4)
//! integration with 4th-order dense output, tangent-vector propagation by
//! the variational equation, and flow-map Jacobians.
//!
//! One integrator is used project-wide so that chain defects and verdicts
//! are reproducible bit-for-bit given a seed.

use nalgebra::{Matrix3, SVector, Vector3};

use crate::error::{Error, Result};

pub type State = Vector3<f64>;

/// A named smooth vector field on R^3 with analytic Jacobian.
pub struct VectorField {
    pub name: String,
    /// Canonical parameter string, embedded in file headers.
    pub params: String,
    pub singularities: Vec<State>,
    /// Box used for random-state checks and membership heuristics.
    pub bounding_box: (State, State),
    eval_fn: Box<dyn Fn(&State) -> State + Send + Sync>,
    jac_fn: Box<dyn Fn(&State) -> Matrix3<f64> + Send + Sync>,
}

impl VectorField {
    pub fn new(
        name: impl Into<String>,
        params: impl Into<String>,
        eval_fn: impl Fn(&State) -> State + Send + Sync + 'static,
        jac_fn: impl Fn(&State) -> Matrix3<f64> + Send + Sync + 'static,
        singularities: Vec<State>,
        bounding_box: (State, State),
    ) -> Self {
        Self {
            name: name.into(),
            params: params.into(),
            singularities,
            bounding_box,
            eval_fn: Box::new(eval_fn),
            jac_fn: Box::new(jac_fn),
        }
    }

    #[inline]
    pub fn eval(&self, x: &State) -> State {
        (self.eval_fn)(x)
    }

    #[inline]
    pub fn jacobian(&self, x: &State) -> Matrix3<f64> {
        (self.jac_fn)(x)
    }

    /// Field with time reversed; singularities and box carry over.
    pub fn reversed(&self) -> VectorFieldRef<'_> {
        VectorFieldRef { inner: self, sign: -1.0 }
    }

    /// Max relative error between the analytic Jacobian and central finite
    /// differences of `eval` at `n` seeded random states in the box.
    pub fn jacobian_vs_finite_difference(&self, seed: u64, n: usize) -> f64 {
        use rand::Rng;
        let mut rng = crate::rng::stream(seed, "jacobian-check", 0);
        let (lo, hi) = self.bounding_box;
        let mut worst: f64 = 0.0;
        for _ in 0..n {
            let x = State::new(
                rng.gen_range(lo.x..hi.x),
                rng.gen_range(lo.y..hi.y),
                rng.gen_range(lo.z..hi.z),
            );
            let jac = self.jacobian(&x);
            let scale = jac.norm().max(1.0);
            for j in 0..3 {
                let h = 1e-5 * (1.0 + x[j].abs());
                let mut xp = x;
                let mut xm = x;
                xp[j] += h;
                xm[j] -= h;
                let col = (self.eval(&xp) - self.eval(&xm)) / (2.0 * h);
                for i in 0..3 {
                    worst = worst.max((col[i] - jac[(i, j)]).abs() / scale);
                }
            }
        }
        worst
    }
}

/// Borrowed sign-flipped view used for backward integration.
pub struct VectorFieldRef<'a> {
    inner: &'a VectorField,
    sign: f64,
}

impl VectorFieldRef<'_> {
    #[inline]
    pub fn eval(&self, x: &State) -> State {
        self.inner.eval(x) * self.sign
    }

    #[inline]
    pub fn jacobian(&self, x: &State) -> Matrix3<f64> {
        self.inner.jacobian(x) * self.sign
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IntegrateOpts {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step: f64,
    /// Hard bound on the base-state norm; exceeding it aborts with
    /// `Error::Escaped`.
    pub escape_norm: f64,
    /// Step cap proportional to the local speed, so passages near a
    /// singularity keep temporal resolution. `cap = clamp(scale * |X|,
    /// floor, max_step)`. Set `speed_cap_scale <= 0` to disable.
    pub speed_cap_scale: f64,
    pub speed_cap_floor: f64,
    pub max_steps: usize,
}

impl Default for IntegrateOpts {
    fn default() -> Self {
        Self {
            abs_tol: 1e-9,
            rel_tol: 1e-9,
            max_step: 0.5,
            escape_norm: 1e4,
            speed_cap_scale: 0.05,
            speed_cap_floor: 1e-3,
            max_steps: 20_000_000,
        }
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
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// Error coefficients (5th minus embedded 4th order weights).
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Dense-output coefficients.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone)]
struct DenseStep<const N: usize> {
    t0: f64,
    h: f64,
    r1: SVector<f64, N>,
    r2: SVector<f64, N>,
    r3: SVector<f64, N>,
    r4: SVector<f64, N>,
    r5: SVector<f64, N>,
}

impl<const N: usize> DenseStep<N> {
    #[inline]
    fn eval(&self, t: f64) -> SVector<f64, N> {
        let theta = (t - self.t0) / self.h;
        let theta1 = 1.0 - theta;
        self.r1 + (self.r2 + (self.r3 + (self.r4 + self.r5 * theta1) * theta) * theta1) * theta
    }
}

/// A densely evaluable solution curve of an N-dimensional autonomous system
/// on [0, t_end].
#[derive(Debug, Clone)]
pub struct DenseCurve<const N: usize> {
    pub t_end: f64,
    y0: SVector<f64, N>,
    y_end: SVector<f64, N>,
    steps: Vec<DenseStep<N>>,
}

impl<const N: usize> DenseCurve<N> {
    /// Interpolated state; exact at step nodes and both span ends.
    pub fn eval(&self, t: f64) -> Result<SVector<f64, N>> {
        if !(0.0..=self.t_end).contains(&t) {
            return Err(Error::OutOfSpan { t, t_end: self.t_end });
        }
        if self.steps.is_empty() || t == 0.0 {
            return Ok(self.y0);
        }
        if t == self.t_end {
            return Ok(self.y_end);
        }
        // Last step with t0 <= t.
        let idx = self.steps.partition_point(|s| s.t0 <= t) - 1;
        let step = &self.steps[idx];
        if t == step.t0 {
            return Ok(step.r1);
        }
        Ok(step.eval(t))
    }

    pub fn start(&self) -> SVector<f64, N> {
        self.y0
    }

    pub fn end(&self) -> SVector<f64, N> {
        self.y_end
    }

    /// Step start times plus the final time; strictly increasing.
    pub fn node_times(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.steps.iter().map(|s| s.t0).collect();
        if out.is_empty() {
            out.push(0.0);
        }
        out.push(self.t_end);
        out
    }
}

/// Integrate `rhs` from `y0` over [0, t_end].
///
/// `weights` scale the absolute-error components; keeping a tangent
/// column's weight at its initial magnitude makes the error control, and
/// hence the step sequence, invariant under rescaling that column.
/// `escape_dims` components (the base state) are checked against the
/// escape bound; extra components may grow exponentially by design.
pub fn integrate_core<const N: usize>(
    rhs: &(impl Fn(&SVector<f64, N>) -> SVector<f64, N> + ?Sized),
    y0: SVector<f64, N>,
    t_end: f64,
    opts: &IntegrateOpts,
    weights: &SVector<f64, N>,
    escape_dims: usize,
) -> Result<DenseCurve<N>> {
    assert!(t_end >= 0.0, "integration span must be nonnegative");
    let mut curve = DenseCurve { t_end, y0, y_end: y0, steps: Vec::new() };
    if t_end == 0.0 {
        return Ok(curve);
    }

    let err_norm = |e: &SVector<f64, N>, a: &SVector<f64, N>, b: &SVector<f64, N>| -> f64 {
        let mut sum = 0.0;
        for i in 0..N {
            let sc = opts.abs_tol * weights[i] + opts.rel_tol * a[i].abs().max(b[i].abs());
            let q = e[i] / sc;
            sum += q * q;
        }
        (sum / N as f64).sqrt()
    };

    let base_norm = |y: &SVector<f64, N>| -> f64 {
        let mut s = 0.0;
        for i in 0..escape_dims.min(N) {
            s += y[i] * y[i];
        }
        s.sqrt()
    };

    let mut t = 0.0;
    let mut y = y0;
    let mut k1 = rhs(&y);

    // Initial step heuristic.
    let d0 = err_norm(&y, &y, &y).max(1e-10);
    let d1 = err_norm(&k1, &y, &y).max(1e-10);
    let mut h = (0.01 * d0 / d1).clamp(1e-10, opts.max_step).min(t_end);

    let mut rejected = false;
    for _ in 0..opts.max_steps {
        if t >= t_end {
            curve.y_end = y;
            return Ok(curve);
        }
        // Speed-proportional cap keeps resolution through slow passages.
        if opts.speed_cap_scale > 0.0 {
            let speed = base_norm(&k1);
            let cap = (opts.speed_cap_scale * speed)
                .clamp(opts.speed_cap_floor, opts.max_step);
            h = h.min(cap);
        }
        h = h.min(opts.max_step).min(t_end - t);
        if h < 1e-14 * t_end.max(1.0) {
            return Err(Error::StepUnderflow { t });
        }

        let k2 = rhs(&(y + k1 * (A21 * h)));
        let k3 = rhs(&(y + (k1 * A31 + k2 * A32) * h));
        let k4 = rhs(&(y + (k1 * A41 + k2 * A42 + k3 * A43) * h));
        let k5 = rhs(&(y + (k1 * A51 + k2 * A52 + k3 * A53 + k4 * A54) * h));
        let k6 = rhs(&(y + (k1 * A61 + k2 * A62 + k3 * A63 + k4 * A64 + k5 * A65) * h));
        let y1 = y + (k1 * A71 + k3 * A73 + k4 * A74 + k5 * A75 + k6 * A76) * h;
        let k7 = rhs(&y1);
        let err_vec = (k1 * E1 + k3 * E3 + k4 * E4 + k5 * E5 + k6 * E6 + k7 * E7) * h;
        let err = err_norm(&err_vec, &y, &y1);

        if err <= 1.0 {
            let dy = y1 - y;
            let r3 = k1 * h - dy;
            let r4 = dy - k7 * h - r3;
            let r5 = (k1 * D1 + k3 * D3 + k4 * D4 + k5 * D5 + k6 * D6 + k7 * D7) * h;
            curve.steps.push(DenseStep { t0: t, h, r1: y, r2: dy, r3, r4, r5 });
            t += h;
            y = y1;
            k1 = k7; // FSAL
            if base_norm(&y) > opts.escape_norm {
                return Err(Error::Escaped { last_time: t, bound: opts.escape_norm });
            }
            let facmax = if rejected { 1.0 } else { 5.0 };
            h *= (0.9 * err.powf(-0.2)).clamp(0.2, facmax);
            rejected = false;
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            rejected = true;
        }
    }
    Err(Error::StepUnderflow { t })
}

/// A densely sampled numerical solution segment of a 3-D field.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub x0: State,
    pub t_end: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Order of the dense-output interpolant.
    pub interpolation_order: usize,
    curve: DenseCurve<3>,
}

impl Trajectory {
    /// Interpolated state at `t`; exact at nodes.
    pub fn flow_at(&self, t: f64) -> Result<State> {
        self.curve.eval(t)
    }

    pub fn end(&self) -> State {
        self.curve.end()
    }

    pub fn node_times(&self) -> Vec<f64> {
        self.curve.node_times()
    }

    /// Sample the curve at spatial resolution `arc_step`: consecutive
    /// returned points are at most `arc_step` apart (plus both span ends).
    pub fn arc_resample(&self, arc_step: f64) -> Vec<(f64, State)> {
        assert!(arc_step > 0.0);
        let mut out = vec![(0.0, self.x0)];
        if self.t_end == 0.0 {
            return out;
        }
        // Walk nodes, subdividing any segment that moves farther than the
        // step; dense output makes subdivision cheap.
        let nodes = self.node_times();
        let mut last = self.x0;
        let mut last_t = 0.0;
        for &tn in nodes.iter().skip(1) {
            let mut stack = vec![(last_t, last, tn, self.flow_at(tn).unwrap())];
            let mut pieces: Vec<(f64, State)> = Vec::new();
            while let Some((ta, ya, tb, yb)) = stack.pop() {
                if (yb - ya).norm() <= arc_step || tb - ta < 1e-12 {
                    pieces.push((tb, yb));
                } else {
                    let tm = 0.5 * (ta + tb);
                    let ym = self.flow_at(tm).unwrap();
                    stack.push((tm, ym, tb, yb));
                    stack.push((ta, ya, tm, ym));
                }
            }
            out.extend(pieces.iter());
            last_t = tn;
            last = self.flow_at(tn).unwrap();
            let _ = last_t;
        }
        out
    }
}

/// Integrate `field` from `x0` for time `t_end >= 0`.
pub fn integrate(
    field: &VectorField,
    x0: &State,
    t_end: f64,
    opts: &IntegrateOpts,
) -> Result<Trajectory> {
    let rhs = |y: &SVector<f64, 3>| field.eval(y);
    let curve = integrate_core(&rhs, *x0, t_end, opts, &SVector::repeat(1.0), 3)?;
    Ok(Trajectory {
        x0: *x0,
        t_end,
        abs_tol: opts.abs_tol,
        rel_tol: opts.rel_tol,
        interpolation_order: 4,
        curve,
    })
}

/// Integrate the reversed field (i.e. follow the backward orbit of `x0`).
pub fn integrate_backward(
    field: &VectorField,
    x0: &State,
    t_end: f64,
    opts: &IntegrateOpts,
) -> Result<Trajectory> {
    let rev = field.reversed();
    let rhs = |y: &SVector<f64, 3>| rev.eval(y);
    let curve = integrate_core(&rhs, *x0, t_end, opts, &SVector::repeat(1.0), 3)?;
    Ok(Trajectory {
        x0: *x0,
        t_end,
        abs_tol: opts.abs_tol,
        rel_tol: opts.rel_tol,
        interpolation_order: 4,
        curve,
    })
}

/// Endpoint of the flow map X_T(x0).
pub fn flow_to(field: &VectorField, x0: &State, t_end: f64, opts: &IntegrateOpts) -> Result<State> {
    Ok(integrate(field, x0, t_end, opts)?.end())
}

/// Tangent vectors propagated along a trajectory by the variational
/// equation v' = J(x(t)) v, recorded at the base trajectory's nodes.
pub struct TangentFrame {
    pub k: usize,
    pub times: Vec<f64>,
    /// `vectors[n]` holds the k tangent vectors at node n.
    pub vectors: Vec<Vec<State>>,
}

impl TangentFrame {
    pub fn at_end(&self) -> &[State] {
        self.vectors.last().expect("frame has at least the initial node")
    }
}

fn split6(y: &SVector<f64, 6>) -> (State, State) {
    (State::new(y[0], y[1], y[2]), State::new(y[3], y[4], y[5]))
}

fn split9(y: &SVector<f64, 9>) -> (State, State, State) {
    (
        State::new(y[0], y[1], y[2]),
        State::new(y[3], y[4], y[5]),
        State::new(y[6], y[7], y[8]),
    )
}

/// Propagate k in {1,2} tangent vectors along `traj`'s base orbit.
///
/// For k = 2, a conditioning check runs at every node; a collapsed pair
/// (nearly parallel beyond `COLLAPSE_COND`) means the caller must
/// re-orthonormalize over shorter intervals.
pub fn propagate_frame(
    field: &VectorField,
    traj: &Trajectory,
    initial: &[State],
    opts: &IntegrateOpts,
) -> Result<TangentFrame> {
    const COLLAPSE_COND: f64 = 1e-10;
    let times = traj.node_times();
    match initial.len() {
        1 => {
            let v0 = initial[0];
            let w = v0.norm().max(1e-300);
            let mut y0 = SVector::<f64, 6>::zeros();
            y0.fixed_rows_mut::<3>(0).copy_from(&traj.x0);
            y0.fixed_rows_mut::<3>(3).copy_from(&v0);
            let mut weights = SVector::<f64, 6>::repeat(1.0);
            for i in 3..6 {
                weights[i] = w;
            }
            let rhs = |y: &SVector<f64, 6>| {
                let (x, v) = split6(y);
                let dx = field.eval(&x);
                let dv = field.jacobian(&x) * v;
                let mut out = SVector::<f64, 6>::zeros();
                out.fixed_rows_mut::<3>(0).copy_from(&dx);
                out.fixed_rows_mut::<3>(3).copy_from(&dv);
                out
            };
            let curve = integrate_core(&rhs, y0, traj.t_end, opts, &weights, 3)?;
            let vectors = times
                .iter()
                .map(|&t| {
                    let y = curve.eval(t)?;
                    Ok(vec![split6(&y).1])
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TangentFrame { k: 1, times, vectors })
        }
        2 => {
            let (a0, b0) = (initial[0], initial[1]);
            let cross0 = a0.cross(&b0).norm();
            if cross0 <= COLLAPSE_COND * a0.norm() * b0.norm() {
                return Err(Error::BadParameter(
                    "initial tangent vectors must be linearly independent".into(),
                ));
            }
            let (wa, wb) = (a0.norm().max(1e-300), b0.norm().max(1e-300));
            let mut y0 = SVector::<f64, 9>::zeros();
            y0.fixed_rows_mut::<3>(0).copy_from(&traj.x0);
            y0.fixed_rows_mut::<3>(3).copy_from(&a0);
            y0.fixed_rows_mut::<3>(6).copy_from(&b0);
            let mut weights = SVector::<f64, 9>::repeat(1.0);
            for i in 3..6 {
                weights[i] = wa;
            }
            for i in 6..9 {
                weights[i] = wb;
            }
            let rhs = |y: &SVector<f64, 9>| {
                let (x, a, b) = split9(y);
                let dx = field.eval(&x);
                let jac = field.jacobian(&x);
                let (da, db) = (jac * a, jac * b);
                let mut out = SVector::<f64, 9>::zeros();
                out.fixed_rows_mut::<3>(0).copy_from(&dx);
                out.fixed_rows_mut::<3>(3).copy_from(&da);
                out.fixed_rows_mut::<3>(6).copy_from(&db);
                out
            };
            let curve = integrate_core(&rhs, y0, traj.t_end, opts, &weights, 3)?;
            let mut vectors = Vec::with_capacity(times.len());
            for &t in &times {
                let y = curve.eval(t)?;
                let (_, a, b) = split9(&y);
                let cond = a.cross(&b).norm() / (a.norm() * b.norm()).max(1e-300);
                if cond < COLLAPSE_COND {
                    return Err(Error::FrameCollapse { t, cond });
                }
                vectors.push(vec![a, b]);
            }
            Ok(TangentFrame { k: 2, times, vectors })
        }
        k => Err(Error::BadParameter(format!("frame size must be 1 or 2, got {k}"))),
    }
}

fn pack12(x: &State, m: &Matrix3<f64>) -> SVector<f64, 12> {
    let mut y = SVector::<f64, 12>::zeros();
    y.fixed_rows_mut::<3>(0).copy_from(x);
    for j in 0..3 {
        for i in 0..3 {
            y[3 + 3 * j + i] = m[(i, j)];
        }
    }
    y
}

fn unpack12(y: &SVector<f64, 12>) -> (State, Matrix3<f64>) {
    let x = State::new(y[0], y[1], y[2]);
    let mut m = Matrix3::zeros();
    for j in 0..3 {
        for i in 0..3 {
            m[(i, j)] = y[3 + 3 * j + i];
        }
    }
    (x, m)
}

/// Flow-map differential DX_T(x0) via the variational equation on the
/// full fundamental matrix. Also returns the endpoint X_T(x0).
pub fn flow_jacobian(
    field: &VectorField,
    x0: &State,
    t_end: f64,
    opts: &IntegrateOpts,
) -> Result<(State, Matrix3<f64>)> {
    let y0 = pack12(x0, &Matrix3::identity());
    let rhs = |y: &SVector<f64, 12>| {
        let (x, m) = unpack12(y);
        let dx = field.eval(&x);
        let dm = field.jacobian(&x) * m;
        pack12(&dx, &dm)
    };
    let curve = integrate_core(&rhs, y0, t_end, opts, &SVector::repeat(1.0), 3)?;
    Ok(unpack12(&curve.end()))
}

/// Same as [`flow_jacobian`] for the reversed field (DX_{-T}).
pub fn flow_jacobian_backward(
    field: &VectorField,
    x0: &State,
    t_end: f64,
    opts: &IntegrateOpts,
) -> Result<(State, Matrix3<f64>)> {
    let rev = field.reversed();
    let y0 = pack12(x0, &Matrix3::identity());
    let rhs = |y: &SVector<f64, 12>| {
        let (x, m) = unpack12(y);
        let dx = rev.eval(&x);
        let dm = rev.jacobian(&x) * m;
        pack12(&dx, &dm)
    };
    let curve = integrate_core(&rhs, y0, t_end, opts, &SVector::repeat(1.0), 3)?;
    Ok(unpack12(&curve.end()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn linear_decay() -> VectorField {
        VectorField::new(
            "linear-decay",
            "",
            |x: &State| -x,
            |_: &State| -Matrix3::identity(),
            vec![State::zeros()],
            (State::new(-2.0, -2.0, -2.0), State::new(2.0, 2.0, 2.0)),
        )
    }

    #[test]
    fn linear_field_endpoint() {
        let f = linear_decay();
        let opts = IntegrateOpts::default();
        let traj = integrate(&f, &State::new(1.0, 0.0, 0.0), 1.0, &opts).unwrap();
        let e = traj.end();
        assert_relative_eq!(e.x, (-1.0f64).exp(), epsilon = 1e-8);
        assert_eq!(e.y, 0.0);
        assert_eq!(e.z, 0.0);
    }

    #[test]
    fn zero_span_single_node() {
        let f = linear_decay();
        let x0 = State::new(0.3, -0.2, 0.9);
        let traj = integrate(&f, &x0, 0.0, &IntegrateOpts::default()).unwrap();
        assert_eq!(traj.node_times(), vec![0.0, 0.0]);
        assert_eq!(traj.flow_at(0.0).unwrap(), x0);
    }

    #[test]
    fn flow_at_exact_at_nodes_and_midpoint() {
        let f = linear_decay();
        let x0 = State::new(1.0, 2.0, -1.0);
        let traj = integrate(&f, &x0, 1.0, &IntegrateOpts::default()).unwrap();
        assert_eq!(traj.flow_at(0.0).unwrap(), x0);
        // Node values are returned bit-exactly.
        let nodes = traj.node_times();
        let tn = nodes[nodes.len() / 2];
        let at_node = traj.flow_at(tn).unwrap();
        assert_eq!(traj.flow_at(tn).unwrap(), at_node);
        // Closed form at an off-node time.
        let v = traj.flow_at(0.5).unwrap();
        assert_relative_eq!(v.x, 1.0 * (-0.5f64).exp(), epsilon = 1e-8);
        assert_relative_eq!(v.y, 2.0 * (-0.5f64).exp(), epsilon = 1e-8);
    }

    #[test]
    fn out_of_span_errors() {
        let f = linear_decay();
        let traj = integrate(&f, &State::new(1.0, 0.0, 0.0), 1.0, &IntegrateOpts::default())
            .unwrap();
        assert!(traj.flow_at(-0.1).is_err());
        assert!(traj.flow_at(1.1).is_err());
    }

    #[test]
    fn escape_reports_last_time() {
        let grow = VectorField::new(
            "linear-grow",
            "",
            |x: &State| *x,
            |_: &State| Matrix3::identity(),
            vec![State::zeros()],
            (State::new(-2.0, -2.0, -2.0), State::new(2.0, 2.0, 2.0)),
        );
        let mut opts = IntegrateOpts::default();
        opts.escape_norm = 10.0;
        let err = integrate(&grow, &State::new(1.0, 0.0, 0.0), 10.0, &opts).unwrap_err();
        match err {
            Error::Escaped { last_time, .. } => {
                assert!(last_time > 2.0 && last_time < 3.0, "t = {last_time}")
            }
            other => panic!("expected escape, got {other}"),
        }
    }

    #[test]
    fn constant_jacobian_frame() {
        // J = diag(-2, 1, 3), v0 = e1, t = 1 -> e^{-2} e1.
        let f = VectorField::new(
            "diag",
            "",
            |x: &State| State::new(-2.0 * x.x, x.y, 3.0 * x.z),
            |_: &State| Matrix3::from_diagonal(&State::new(-2.0, 1.0, 3.0)),
            vec![State::zeros()],
            (State::new(-2.0, -2.0, -2.0), State::new(2.0, 2.0, 2.0)),
        );
        let opts = IntegrateOpts::default();
        let traj = integrate(&f, &State::new(0.1, 0.1, 0.1), 1.0, &opts).unwrap();
        let frame = propagate_frame(&f, &traj, &[State::new(1.0, 0.0, 0.0)], &opts).unwrap();
        let v = frame.at_end()[0];
        assert_relative_eq!(v.x, (-2.0f64).exp(), epsilon = 1e-7);
        assert!(v.y.abs() < 1e-10 && v.z.abs() < 1e-10);
    }

    #[test]
    fn frame_linearity_under_rescaling() {
        let f = linear_decay();
        let opts = IntegrateOpts::default();
        let traj = integrate(&f, &State::new(1.0, 1.0, 1.0), 2.0, &opts).unwrap();
        let v0 = State::new(0.3, -0.7, 0.2);
        let a = propagate_frame(&f, &traj, &[v0], &opts).unwrap();
        let b = propagate_frame(&f, &traj, &[v0 * 1e3], &opts).unwrap();
        let (va, vb) = (a.at_end()[0], b.at_end()[0]);
        assert!((vb / 1e3 - va).norm() <= 1e-8 * va.norm());
    }

    #[test]
    fn frame_requires_independent_pair() {
        let f = linear_decay();
        let opts = IntegrateOpts::default();
        let traj = integrate(&f, &State::new(1.0, 1.0, 1.0), 1.0, &opts).unwrap();
        let v = State::new(1.0, 2.0, 3.0);
        assert!(propagate_frame(&f, &traj, &[v, v * 2.0], &opts).is_err());
    }

    #[test]
    fn jacobian_check_on_linear_field() {
        let f = linear_decay();
        assert!(f.jacobian_vs_finite_difference(7, 100) <= 1e-6);
    }
}
