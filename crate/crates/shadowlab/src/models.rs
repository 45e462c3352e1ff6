//! The concrete vector fields all experiments run on, plus the exact 1-D
//! interval-map oracle for the quotient dynamics near the singular leaf.

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::flow::{State, VectorField};

/// Canonical model descriptions; `build` produces the runnable field.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Lorenz { sigma: f64, rho: f64, beta: f64 },
    Saddle { ls1: f64, ls2: f64, lu: f64 },
    LimitCycle { a: f64 },
}

impl ModelSpec {
    pub fn classical_lorenz() -> Self {
        ModelSpec::Lorenz { sigma: 10.0, rho: 28.0, beta: 8.0 / 3.0 }
    }

    pub fn build(&self) -> Result<VectorField> {
        match *self {
            ModelSpec::Lorenz { sigma, rho, beta } => lorenz(sigma, rho, beta),
            ModelSpec::Saddle { ls1, ls2, lu } => saddle(ls1, ls2, lu),
            ModelSpec::LimitCycle { a } => limit_cycle(a),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Lorenz { .. } => "lorenz",
            ModelSpec::Saddle { .. } => "saddle",
            ModelSpec::LimitCycle { .. } => "limit-cycle",
        }
    }
}

/// Build a model by name with positional parameters (CLI surface).
pub fn make_model(name: &str, params: &[f64]) -> Result<VectorField> {
    match name {
        "lorenz" => {
            let p = defaults(params, &[10.0, 28.0, 8.0 / 3.0])?;
            lorenz(p[0], p[1], p[2])
        }
        "saddle" => {
            let p = defaults(params, &[2.0, 3.0, 1.0])?;
            saddle(p[0], p[1], p[2])
        }
        "limit-cycle" => {
            let p = defaults(params, &[1.0])?;
            limit_cycle(p[0])
        }
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

fn defaults(given: &[f64], def: &[f64]) -> Result<Vec<f64>> {
    if given.len() > def.len() {
        return Err(Error::BadParameter(format!(
            "expected at most {} parameters, got {}",
            def.len(),
            given.len()
        )));
    }
    let mut out = def.to_vec();
    out[..given.len()].copy_from_slice(given);
    Ok(out)
}

pub fn lorenz(sigma: f64, rho: f64, beta: f64) -> Result<VectorField> {
    if sigma <= 0.0 || beta <= 0.0 || rho <= 1.0 {
        return Err(Error::BadParameter(format!(
            "lorenz requires sigma, beta > 0 and rho > 1; got ({sigma}, {rho}, {beta})"
        )));
    }
    let s = (beta * (rho - 1.0)).sqrt();
    let singularities = vec![
        State::zeros(),
        State::new(s, s, rho - 1.0),
        State::new(-s, -s, rho - 1.0),
    ];
    Ok(VectorField::new(
        "lorenz",
        format!("sigma={sigma} rho={rho} beta={beta}"),
        move |x: &State| {
            State::new(
                sigma * (x.y - x.x),
                x.x * (rho - x.z) - x.y,
                x.x * x.y - beta * x.z,
            )
        },
        move |x: &State| {
            Matrix3::new(
                -sigma, sigma, 0.0, //
                rho - x.z, -1.0, -x.x, //
                x.y, x.x, -beta,
            )
        },
        singularities,
        (State::new(-30.0, -30.0, -5.0), State::new(30.0, 30.0, 60.0)),
    ))
}

/// Linear saddle field diag(-ls1, -ls2, lu); the hyperbolic positive
/// control with known closed-form flow.
pub fn saddle(ls1: f64, ls2: f64, lu: f64) -> Result<VectorField> {
    if ls1 <= 0.0 || ls2 <= 0.0 || lu <= 0.0 {
        return Err(Error::BadParameter(format!(
            "saddle rates must be positive; got ({ls1}, {ls2}, {lu})"
        )));
    }
    Ok(VectorField::new(
        "saddle",
        format!("ls1={ls1} ls2={ls2} lu={lu}"),
        move |x: &State| State::new(-ls1 * x.x, -ls2 * x.y, lu * x.z),
        move |_: &State| Matrix3::from_diagonal(&State::new(-ls1, -ls2, lu)),
        vec![State::zeros()],
        (State::new(-2.0, -2.0, -2.0), State::new(2.0, 2.0, 2.0)),
    ))
}

/// Planar limit-cycle normal form (r' = a r (1 - r^2), theta' = 1)
/// embedded in R^3 with contracting z' = -z.
pub fn limit_cycle(a: f64) -> Result<VectorField> {
    if a <= 0.0 {
        return Err(Error::BadParameter(format!("limit-cycle rate must be positive; got {a}")));
    }
    Ok(VectorField::new(
        "limit-cycle",
        format!("a={a}"),
        move |x: &State| {
            let r2 = x.x * x.x + x.y * x.y;
            State::new(
                a * x.x * (1.0 - r2) - x.y,
                a * x.y * (1.0 - r2) + x.x,
                -x.z,
            )
        },
        move |x: &State| {
            let r2 = x.x * x.x + x.y * x.y;
            Matrix3::new(
                a * (1.0 - r2) - 2.0 * a * x.x * x.x,
                -2.0 * a * x.x * x.y - 1.0,
                0.0,
                -2.0 * a * x.x * x.y + 1.0,
                a * (1.0 - r2) - 2.0 * a * x.y * x.y,
                0.0,
                0.0,
                0.0,
                -1.0,
            )
        },
        vec![State::zeros()],
        (State::new(-2.0, -2.0, -2.0), State::new(2.0, 2.0, 2.0)),
    ))
}

/// Closed-form saddle flow, for oracles.
pub fn saddle_flow(ls1: f64, ls2: f64, lu: f64, x0: &State, t: f64) -> State {
    State::new(
        x0.x * (-ls1 * t).exp(),
        x0.y * (-ls2 * t).exp(),
        x0.z * (lu * t).exp(),
    )
}

/// Closed-form limit-cycle flow, for oracles.
pub fn limit_cycle_flow(a: f64, x0: &State, t: f64) -> State {
    let r0 = (x0.x * x0.x + x0.y * x0.y).sqrt();
    let theta0 = x0.y.atan2(x0.x);
    let r = if r0 == 0.0 {
        0.0
    } else {
        let e = (2.0 * a * t).exp();
        (r0 * r0 * e / (1.0 - r0 * r0 + r0 * r0 * e)).sqrt()
    };
    let theta = theta0 + t;
    State::new(r * theta.cos(), r * theta.sin(), x0.z * (-t).exp())
}

/// Eigenstructure of the Lorenz origin, closed form.
///
/// `lu > 0 > lweak = -beta > lss`, with the weak stable direction along
/// the z-axis and the strong pair in the z = 0 plane.
#[derive(Debug, Clone, Copy)]
pub struct LorenzOriginEigen {
    pub lu: f64,
    pub lweak: f64,
    pub lss: f64,
    pub vu: State,
    pub vss: State,
    pub vweak: State,
}

pub fn lorenz_origin_eigen(sigma: f64, rho: f64, beta: f64) -> LorenzOriginEigen {
    let disc = ((sigma + 1.0) * (sigma + 1.0) + 4.0 * sigma * (rho - 1.0)).sqrt();
    let lu = 0.5 * (-(sigma + 1.0) + disc);
    let lss = 0.5 * (-(sigma + 1.0) - disc);
    let vu = State::new(sigma, lu + sigma, 0.0).normalize();
    let vss = State::new(sigma, lss + sigma, 0.0).normalize();
    LorenzOriginEigen { lu, lweak: -beta, lss, vu, vss, vweak: State::new(0.0, 0.0, 1.0) }
}

/// Expanding interval map on [-1, 1] with a single discontinuity at 0 and
/// boundary normalization f(0-) = +1, f(0+) = -1: the exact quotient
/// oracle for the non-tracing mechanism.
///
/// f(x) = -sign(x) (1 - c |x|^alpha). With the default c = 2, alpha = 1
/// the map is f(x) = 2x - sign(x): slope 2 >= sqrt(2) everywhere and the
/// endpoints +-1 are the branch fixed points.
#[derive(Debug, Clone, Copy)]
pub struct LorenzMapOracle {
    pub c: f64,
    pub alpha: f64,
}

impl Default for LorenzMapOracle {
    fn default() -> Self {
        Self { c: 2.0, alpha: 1.0 }
    }
}

/// Distance to 0 below which an iterate counts as hitting the
/// discontinuity ("boundary itinerary").
pub const ORACLE_BOUNDARY_EPS: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct Itinerary {
    /// x_0 .. x_n.
    pub points: Vec<f64>,
    /// sign(x_k) for each entry of `points`.
    pub symbols: Vec<i8>,
    /// Some iterate hit the discontinuity within machine precision.
    pub boundary: bool,
}

impl LorenzMapOracle {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        debug_assert!((-1.0..=1.0).contains(&x));
        -x.signum() * (1.0 - self.c * x.abs().powf(self.alpha))
    }

    #[inline]
    pub fn derivative_abs(&self, x: f64) -> f64 {
        self.c * self.alpha * x.abs().powf(self.alpha - 1.0)
    }

    /// Fixed point of the branch containing `sign` (requires c >= 2).
    pub fn branch_fixed_point(&self, sign: f64) -> f64 {
        // Secant iteration on f(x) - x from the outer end of the branch.
        let mut a = sign * 0.75;
        let mut b = sign * 1.0;
        for _ in 0..200 {
            let (fa, fb) = (self.eval(a) - a, self.eval(b) - b);
            if (fb - fa).abs() < 1e-300 {
                break;
            }
            let c = b - fb * (b - a) / (fb - fa);
            let c = c.clamp(-1.0, 1.0);
            a = b;
            b = c;
            if (b - a).abs() < 1e-15 {
                break;
            }
        }
        b
    }
}

/// Iterate the oracle n times from x, recording points and sign symbols.
///
/// Fails soft: when an iterate lands on the discontinuity at machine
/// precision, iteration continues on the positive branch and the result
/// carries the `boundary` flag.
pub fn oracle_iterate(oracle: &LorenzMapOracle, x: f64, n: usize) -> Result<Itinerary> {
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::BadParameter(format!("oracle state {x} outside [-1, 1]")));
    }
    let mut points = Vec::with_capacity(n + 1);
    let mut symbols = Vec::with_capacity(n + 1);
    let mut boundary = false;
    let mut cur = x;
    for _ in 0..=n {
        if cur.abs() < ORACLE_BOUNDARY_EPS {
            boundary = true;
        }
        points.push(cur);
        symbols.push(if cur >= 0.0 { 1 } else { -1 });
        cur = oracle.eval(cur).clamp(-1.0, 1.0);
    }
    points.truncate(n + 1);
    symbols.truncate(n + 1);
    Ok(Itinerary { points, symbols, boundary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{integrate, IntegrateOpts};
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn lorenz_singularities_are_zeros() {
        let f = ModelSpec::classical_lorenz().build().unwrap();
        assert_eq!(f.singularities.len(), 3);
        let s = (8.0 / 3.0 * 27.0f64).sqrt();
        assert_relative_eq!(f.singularities[1].x, s, epsilon = 1e-12);
        for q in &f.singularities {
            assert!(f.eval(q).norm() <= 1e-12, "X({q:?}) != 0");
        }
    }

    #[test]
    fn lorenz_origin_eigen_ordering() {
        let e = lorenz_origin_eigen(10.0, 28.0, 8.0 / 3.0);
        // One weak negative real eigenvalue separated from the strong one.
        assert!(e.lu > 0.0);
        assert!(e.lweak < 0.0 && e.lweak > e.lss);
        assert_relative_eq!(e.lu, 11.827723451163457, epsilon = 1e-9);
        assert_relative_eq!(e.lss, -22.827723451163457, epsilon = 1e-9);
        // Verify against the closed-form Jacobian numerically.
        let f = ModelSpec::classical_lorenz().build().unwrap();
        let jac = f.jacobian(&State::zeros());
        for (l, v) in [(e.lu, e.vu), (e.lss, e.vss), (e.lweak, e.vweak)] {
            assert!((jac * v - v * l).norm() < 1e-9);
        }
    }

    #[test]
    fn unstable_direction_transverse_to_stable_plane() {
        let e = lorenz_origin_eigen(10.0, 28.0, 8.0 / 3.0);
        let normal = e.vss.cross(&e.vweak).normalize();
        let angle_to_plane = (e.vu.dot(&normal).abs()).asin().to_degrees();
        assert!(angle_to_plane >= 10.0, "angle {angle_to_plane} deg");
    }

    #[test]
    fn saddle_closed_form_flow() {
        let f = saddle(2.0, 3.0, 1.0).unwrap();
        let traj =
            integrate(&f, &State::new(1.0, 1.0, 1.0), 1.0, &IntegrateOpts::default()).unwrap();
        let e = traj.end();
        assert_relative_eq!(e.x, (-2.0f64).exp(), epsilon = 1e-8);
        assert_relative_eq!(e.y, (-3.0f64).exp(), epsilon = 1e-8);
        assert_relative_eq!(e.z, 1.0f64.exp(), epsilon = 1e-8);
    }

    #[test]
    fn limit_cycle_period_return() {
        let f = limit_cycle(1.0).unwrap();
        let x0 = State::new(1.0, 0.0, 0.0);
        let traj =
            integrate(&f, &x0, 2.0 * std::f64::consts::PI, &IntegrateOpts::default()).unwrap();
        assert!((traj.end() - x0).norm() < 1e-7);
        // Closed form agrees off the cycle too.
        let y0 = State::new(0.4, -0.2, 0.3);
        let traj = integrate(&f, &y0, 2.5, &IntegrateOpts::default()).unwrap();
        assert!((traj.end() - limit_cycle_flow(1.0, &y0, 2.5)).norm() < 1e-7);
    }

    #[test]
    fn model_jacobians_match_finite_differences() {
        for spec in [
            ModelSpec::classical_lorenz(),
            ModelSpec::Saddle { ls1: 2.0, ls2: 3.0, lu: 1.0 },
            ModelSpec::LimitCycle { a: 1.0 },
        ] {
            let f = spec.build().unwrap();
            let worst = f.jacobian_vs_finite_difference(11, 100);
            assert!(worst <= 1e-6, "{}: jacobian mismatch {worst:.3e}", f.name);
        }
    }

    #[test]
    fn unknown_model_and_bad_params() {
        assert!(make_model("roessler", &[]).is_err());
        assert!(make_model("lorenz", &[10.0, 0.5, 2.6]).is_err());
        assert!(make_model("saddle", &[-1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn lorenz_stays_in_desk_scale_box() {
        let f = ModelSpec::classical_lorenz().build().unwrap();
        let traj =
            integrate(&f, &State::new(1.0, 1.0, 1.0), 200.0, &IntegrateOpts::default()).unwrap();
        let mut t = 10.0;
        while t <= 200.0 {
            let p = traj.flow_at(t).unwrap();
            assert!(p.x.abs() <= 30.0 && p.y.abs() <= 30.0, "xy escape at t={t}: {p:?}");
            assert!((0.0..=60.0).contains(&p.z), "z escape at t={t}: {p:?}");
            t += 0.05;
        }
    }

    #[test]
    fn oracle_boundary_normalization_and_expansion() {
        let m = LorenzMapOracle::default();
        assert_relative_eq!(m.eval(1e-12), -1.0, epsilon = 1e-9);
        assert_relative_eq!(m.eval(-1e-12), 1.0, epsilon = 1e-9);
        // |f'| >= sqrt(2) on a 10^4 grid excluding 0.
        let n = 10_000;
        for i in 0..n {
            let x = -1.0 + 2.0 * (i as f64 + 0.5) / n as f64;
            if x.abs() < 1e-6 {
                continue;
            }
            assert!(m.derivative_abs(x) >= std::f64::consts::SQRT_2);
        }
    }

    #[test]
    fn oracle_branch_fixed_points_constant_itinerary() {
        let m = LorenzMapOracle::default();
        let xp = m.branch_fixed_point(1.0);
        let xm = m.branch_fixed_point(-1.0);
        assert_relative_eq!(xp, 1.0, epsilon = 1e-12);
        assert_relative_eq!(xm, -1.0, epsilon = 1e-12);
        let it = oracle_iterate(&m, xp, 12).unwrap();
        assert!(it.symbols.iter().all(|&s| s == 1));
        assert!(it.points.iter().all(|&p| (p - xp).abs() < 1e-9));
    }

    #[test]
    fn oracle_near_zero_first_iterate_near_minus_one() {
        let m = LorenzMapOracle::default();
        let it = oracle_iterate(&m, 1e-9, 1).unwrap();
        assert!((it.points[1] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn oracle_expansion_while_itineraries_agree() {
        let m = LorenzMapOracle::default();
        let mut rng = crate::rng::stream(5, "oracle-expansion", 0);
        let sqrt2 = std::f64::consts::SQRT_2;
        for _ in 0..200 {
            let x: f64 = rng.gen_range(-1.0..1.0);
            let y = (x + rng.gen_range(-1e-4..1e-4)).clamp(-1.0, 1.0);
            let (ix, iy) =
                (oracle_iterate(&m, x, 20).unwrap(), oracle_iterate(&m, y, 20).unwrap());
            for n in 1..=20 {
                if ix.symbols[..n] != iy.symbols[..n] {
                    break;
                }
                let d0 = (x - y).abs();
                let dn = (ix.points[n] - iy.points[n]).abs();
                assert!(
                    dn + 1e-12 >= sqrt2.powi(n as i32) * d0,
                    "expansion bound failed at n={n}: {dn} < {} * {d0}",
                    sqrt2.powi(n as i32)
                );
            }
        }
    }

    #[test]
    fn oracle_shadowing_bound_same_itinerary_implies_close() {
        // Same length-n itinerary forces |x - y| <= C (sqrt 2)^-n, C = 2.
        let m = LorenzMapOracle::default();
        let mut rng = crate::rng::stream(6, "oracle-shadow", 0);
        let sqrt2 = std::f64::consts::SQRT_2;
        for _ in 0..500 {
            let x: f64 = rng.gen_range(-1.0..1.0);
            let y: f64 = rng.gen_range(-1.0..1.0);
            let n = 14;
            let (ix, iy) =
                (oracle_iterate(&m, x, n).unwrap(), oracle_iterate(&m, y, n).unwrap());
            if ix.boundary || iy.boundary {
                continue;
            }
            if ix.symbols[..=n] == iy.symbols[..=n] {
                assert!((x - y).abs() <= 2.0 * sqrt2.powi(-(n as i32)) + 1e-12);
            }
        }
    }
}
