//! Adversarial chain constructions near a Lorenz-like singularity: ride a
//! singularity-bound orbit into B_{delta/4}(sigma), then jump to the
//! chosen unstable branch and ride out to its landmark. No true orbit can
//! follow the jump to the wrong side, and no sampled orbit descends as
//! deep as the chain does.

use crate::chain::FiniteChain;
use crate::error::{Error, Result};
use crate::flow::{integrate, IntegrateOpts, State, VectorField};
use crate::section::{branch_exit_sign, LorenzLikeEigen, UnstableBranches};

/// First time (>= t_min) at which the orbit of `p` enters
/// B_target(sigma), located by bisection on the dense output.
pub fn first_singular_approach(
    field: &VectorField,
    p: &State,
    sigma: &State,
    target: f64,
    t_min: f64,
    budget: f64,
    opts: &IntegrateOpts,
) -> Result<f64> {
    let traj = integrate(field, p, budget, opts).map_err(|e| match e {
        Error::Escaped { last_time, .. } => Error::NotSingularApproach(format!(
            "orbit escaped at t = {last_time} before approaching the singularity"
        )),
        other => other,
    })?;
    let dist = |t: f64| -> Result<f64> { Ok((traj.flow_at(t)? - sigma).norm()) };
    let nodes = traj.node_times();
    let mut prev_t = t_min;
    if dist(t_min)? <= target {
        return Ok(t_min);
    }
    for &t in nodes.iter().filter(|&&t| t > t_min) {
        if dist(t)? <= target {
            let (mut lo, mut hi) = (prev_t, t);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if dist(mid)? <= target {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(hi);
        }
        prev_t = t;
    }
    Err(Error::NotSingularApproach(format!(
        "orbit of {p:?} does not enter B_{target}({sigma:?}) within t = {budget}"
    )))
}

/// Time at which the orbit of `x` passes closest to `y`, within [0, cap];
/// requires the closest pass to be within `hit_tol`.
fn landmark_hit_time(
    field: &VectorField,
    x: &State,
    y: &State,
    cap: f64,
    hit_tol: f64,
    opts: &IntegrateOpts,
) -> Result<f64> {
    let traj = integrate(field, x, cap, opts)?;
    // Coarse scan, then golden-section refinement around the best node.
    let mut best_t = 0.0;
    let mut best_d = f64::INFINITY;
    for (t, q) in traj.arc_resample(hit_tol.max(1e-4) * 50.0) {
        let d = (q - y).norm();
        if d < best_d {
            best_d = d;
            best_t = t;
        }
    }
    let (mut lo, mut hi) = ((best_t - 0.2).max(0.0), (best_t + 0.2).min(cap));
    for _ in 0..200 {
        let m1 = lo + (hi - lo) * 0.381966;
        let m2 = hi - (hi - lo) * 0.381966;
        let d1 = (traj.flow_at(m1)? - y).norm();
        let d2 = (traj.flow_at(m2)? - y).norm();
        if d1 < d2 {
            hi = m2;
        } else {
            lo = m1;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    let t = 0.5 * (lo + hi);
    let d = (traj.flow_at(t)? - y).norm();
    if d > hit_tol {
        return Err(Error::Geometry(format!(
            "orbit from {x:?} misses the landmark by {d:.3e} (tolerance {hit_tol:.1e})"
        )));
    }
    Ok(t)
}

/// Two-leg adversarial chain: {(p, t_0), (x_1, t_1)} with X_{t_0}(p)
/// inside B_{delta/4}(sigma), x_1 on the requested branch inside
/// B_{delta/4}(sigma), and X_{t_1}(x_1) on the branch landmark. The single
/// junction defect is about delta/4 + |x_1|, well under delta.
pub fn build_adversarial_chain(
    field: &VectorField,
    p: &State,
    branch: i8,
    branches: &UnstableBranches,
    delta: f64,
    t_min: f64,
    opts: &IntegrateOpts,
) -> Result<FiniteChain> {
    let sigma = branches.sigma;
    let t0 = first_singular_approach(field, p, &sigma, delta / 4.0, t_min, 1e3, opts)?;

    // Deep branch point whose ride to the landmark takes at least t_min.
    let curve = branches.branch(branch);
    let arc_y = 2.0 * branches.beta_sigma;
    let t_target = t_min * 1.05 + 0.05;
    let mut a_target = arc_y * (-branches.unstable_rate * t_target).exp();
    a_target = a_target.min(0.9 * delta / 4.0);
    a_target = a_target.max(curve.points[0].0);
    let x1 = curve.point_at_arclength(a_target);
    if (x1 - sigma).norm() > delta / 4.0 {
        return Err(Error::Geometry(format!(
            "no branch point deep enough for delta = {delta}"
        )));
    }
    let y = branches.landmark(branch);
    let t1 = landmark_hit_time(field, &x1, &y, t_target * 3.0 + 2.0, 1e-6, opts)?;
    if t1 < t_min {
        return Err(Error::Geometry(format!(
            "landmark flight time {t1} fell below the floor {t_min}"
        )));
    }
    FiniteChain::new(field, vec![*p, x1], vec![t0, t1], delta, t_min, None, opts)
}

/// Three-leg chain: ride p to a bi-side point q = X_{t0}(p), jump to the
/// sigma-bound point x1 next to q (caller locates it; see
/// `locate_stable_transversal`), ride x1 into B_{delta/4}(sigma), then
/// jump to the branch opposite x1's exit side and ride to that landmark.
pub fn build_three_leg_chain(
    field: &VectorField,
    p: &State,
    t0: f64,
    x1: &State,
    branches: &UnstableBranches,
    eigen: &LorenzLikeEigen,
    delta: f64,
    t_min: f64,
    opts: &IntegrateOpts,
) -> Result<FiniteChain> {
    let sigma = branches.sigma;
    let t1 = first_singular_approach(field, x1, &sigma, delta / 4.0, t_min, 1e3, opts)?;
    // Which way does x1's orbit leave the singularity after the approach?
    let deep = integrate(field, x1, t1, opts)?.end();
    let (exit_side, _) =
        branch_exit_sign(field, eigen, &sigma, &deep, branches.gamma.min(0.5), 100.0, opts)?;
    let branch = -exit_side;

    let curve = branches.branch(branch);
    let arc_y = 2.0 * branches.beta_sigma;
    let t_target = t_min * 1.05 + 0.05;
    let mut a_target = arc_y * (-branches.unstable_rate * t_target).exp();
    a_target = a_target.min(0.9 * delta / 4.0).max(curve.points[0].0);
    let x2 = curve.point_at_arclength(a_target);
    let y = branches.landmark(branch);
    let t2 = landmark_hit_time(field, &x2, &y, t_target * 3.0 + 2.0, 1e-6, opts)?;
    FiniteChain::new(
        field,
        vec![*p, *x1, x2],
        vec![t0, t1, t2],
        delta,
        t_min,
        None,
        opts,
    )
}

/// Bisect along `from + s * dir`, s in (0, span], for the boundary between
/// next-passage branch exits: the returned point's forward orbit rides
/// into the singularity as deep as the computed flow can resolve.
pub fn locate_stable_transversal(
    field: &VectorField,
    eigen: &LorenzLikeEigen,
    sigma: &State,
    from: &State,
    dir: &State,
    span: f64,
    skip_time: f64,
    opts: &IntegrateOpts,
) -> Result<State> {
    let dir = dir.normalize();
    let decide = |s: f64| -> Result<i8> {
        let start = integrate(field, &(from + dir * s), skip_time, opts)?.end();
        let (sign, _) = branch_exit_sign(field, eigen, sigma, &start, 1.0, 200.0, opts)?;
        Ok(sign)
    };
    let n_scan = 24;
    let mut prev_s = span / n_scan as f64;
    let mut prev_sign = decide(prev_s)?;
    for k in 2..=n_scan {
        let s = span * k as f64 / n_scan as f64;
        let sign = decide(s)?;
        if sign != prev_sign {
            let (mut lo, mut hi) = (prev_s, s);
            for _ in 0..90 {
                let mid = 0.5 * (lo + hi);
                if decide(mid)? == prev_sign {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-15 * span.max(1.0) {
                    break;
                }
            }
            return Ok(from + dir * (0.5 * (lo + hi)));
        }
        prev_s = s;
        prev_sign = sign;
    }
    Err(Error::Geometry(
        "no branch-exit flip along the transversal: no stable-set crossing here".into(),
    ))
}

/// Deepest singularity approach of the orbit of `p` after `skip_time`,
/// within the budget. Returns (approach time, distance).
pub fn deepest_approach_after(
    field: &VectorField,
    p: &State,
    sigma: &State,
    skip_time: f64,
    budget: f64,
    opts: &IntegrateOpts,
) -> Result<(f64, f64)> {
    let traj = integrate(field, p, budget, opts)?;
    let mut best = (skip_time, f64::INFINITY);
    for (t, q) in traj.arc_resample(0.02) {
        if t < skip_time {
            continue;
        }
        let d = (q - sigma).norm();
        if d < best.1 {
            best = (t, d);
        }
    }
    // Golden refinement around the best node.
    let (mut lo, mut hi) = ((best.0 - 0.1).max(skip_time), (best.0 + 0.1).min(budget));
    for _ in 0..120 {
        let m1 = lo + (hi - lo) * 0.381966;
        let m2 = hi - (hi - lo) * 0.381966;
        let d1 = (traj.flow_at(m1)? - sigma).norm();
        let d2 = (traj.flow_at(m2)? - sigma).norm();
        if d1 < d2 {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let t = 0.5 * (lo + hi);
    Ok((t, (traj.flow_at(t)? - sigma).norm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpec;

    #[test]
    fn saddle_orbit_never_approaches() {
        let f = ModelSpec::Saddle { ls1: 2.0, ls2: 3.0, lu: 1.0 }.build().unwrap();
        let mut opts = IntegrateOpts::default();
        opts.escape_norm = 1e3;
        let err = first_singular_approach(
            &f,
            &State::new(1.0, 1.0, 0.5),
            &State::zeros(),
            1e-3,
            1.0,
            50.0,
            &opts,
        );
        assert!(matches!(err, Err(Error::NotSingularApproach(_))), "{err:?}");
    }
}
