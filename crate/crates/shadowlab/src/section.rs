//! Cross sections near a Lorenz-like singularity, the distinguished leaf,
//! unstable-branch landmarks with their separation certificates, strong
//! stable direction estimation, and side/bi-side classification.

use nalgebra::Matrix3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{
    flow_jacobian, integrate, integrate_backward, IntegrateOpts, State, VectorField,
};
use crate::sample::AttractorSample;

/// Real eigen-structure of a Lorenz-like singularity:
/// lu > 0 > lweak > lss with |lweak| < lu and |lweak| < |lss|.
#[derive(Debug, Clone, Copy)]
pub struct LorenzLikeEigen {
    pub lu: f64,
    pub lweak: f64,
    pub lss: f64,
    pub vu: State,
    pub vweak: State,
    pub vss: State,
}

impl LorenzLikeEigen {
    /// Coefficients of `p - sigma` in the eigenbasis (u, ss, weak).
    pub fn coords(&self, sigma: &State, p: &State) -> (f64, f64, f64) {
        let basis = Matrix3::from_columns(&[self.vu, self.vss, self.vweak]);
        let c = basis.lu().solve(&(p - sigma)).expect("eigenbasis is invertible");
        (c.x, c.y, c.z)
    }
}

fn eigenvector_for(jac: &Matrix3<f64>, lambda: f64) -> Result<State> {
    let m = jac - Matrix3::identity() * lambda;
    let svd = m.svd(true, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Geometry("SVD failed".into()))?;
    let v = v_t.row(2).transpose();
    if svd.singular_values[2] > 1e-6 * svd.singular_values[0].max(1.0) {
        return Err(Error::Geometry(format!(
            "eigenvalue {lambda} has no near-null direction (residual {:.3e})",
            svd.singular_values[2]
        )));
    }
    Ok(v.normalize())
}

/// Check the Lorenz-like eigenvalue ordering at `sigma` and extract the
/// eigenbasis. Fails for complex spectra or the wrong ordering (e.g. a
/// plain saddle whose expansion does not dominate the weak contraction).
pub fn lorenz_like_eigen(field: &VectorField, sigma: &State) -> Result<LorenzLikeEigen> {
    if field.eval(sigma).norm() > 1e-9 {
        return Err(Error::Geometry(format!("{sigma:?} is not a singularity")));
    }
    let jac = field.jacobian(sigma);
    let eig = jac.complex_eigenvalues();
    let scale = jac.norm();
    let mut real = Vec::new();
    for i in 0..3 {
        if eig[i].im.abs() > 1e-9 * scale.max(1.0) {
            return Err(Error::Geometry("complex spectrum at the singularity".into()));
        }
        real.push(eig[i].re);
    }
    real.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let (lu, lweak, lss) = (real[0], real[1], real[2]);
    if !(lu > 0.0 && lweak < 0.0 && lss < lweak) {
        return Err(Error::Geometry(format!(
            "eigenvalues ({lu}, {lweak}, {lss}) are not saddle-ordered"
        )));
    }
    if lu <= -lweak {
        return Err(Error::Geometry(format!(
            "expansion {lu} does not dominate the weak contraction {lweak}: not Lorenz-like"
        )));
    }
    Ok(LorenzLikeEigen {
        lu,
        lweak,
        lss,
        vu: eigenvector_for(&jac, lu)?,
        vweak: eigenvector_for(&jac, lweak)?,
        vss: eigenvector_for(&jac, lss)?,
    })
}

/// Finite-time strong-stable direction at `x`: the most contracted right
/// singular direction of DX_h(x), accepted once doubling the horizon
/// rotates the line by at most one degree.
pub fn estimate_stable_direction(
    field: &VectorField,
    x: &State,
    horizon: f64,
    opts: &IntegrateOpts,
) -> Result<State> {
    const MIN_GAP: f64 = 2.0;
    let estimate = |h: f64| -> Result<State> {
        let (_, m) = flow_jacobian(field, x, h, opts)?;
        let svd = m.svd(false, true);
        let sv = svd.singular_values;
        if sv[1] < MIN_GAP * sv[2].max(f64::MIN_POSITIVE) {
            return Err(Error::Inconclusive(format!(
                "degenerate contraction contrast at horizon {h}: sigma2/sigma3 = {:.3}",
                sv[1] / sv[2]
            )));
        }
        let v_t = svd.v_t.ok_or_else(|| Error::Inconclusive("SVD failed".into()))?;
        Ok(v_t.row(2).transpose().normalize())
    };

    let mut h = (horizon * 0.5).max(1e-3);
    let mut prev = estimate(h)?;
    for _ in 0..4 {
        let h2 = h * 2.0;
        match estimate(h2) {
            Ok(v) => {
                let angle = prev.dot(&v).abs().clamp(0.0, 1.0).acos().to_degrees();
                if angle <= 1.0 && h2 >= horizon {
                    return Ok(v);
                }
                prev = v;
                h = h2;
            }
            // The orbit may escape the integrable window (e.g. linear
            // models); accept the last estimate if it was already stable.
            Err(Error::Escaped { .. }) if h >= horizon => return Ok(prev),
            Err(e) => return Err(e),
        }
    }
    Err(Error::Inconclusive("stable direction did not settle under horizon doubling".into()))
}

/// One transverse rectangle with its leaf structure.
#[derive(Debug, Clone)]
pub struct CrossSection {
    pub center: State,
    pub normal: State,
    /// In-plane leaf (stable) direction.
    pub axis_leaf: State,
    /// In-plane transversal, normal x axis_leaf.
    pub axis_trans: State,
    pub half_leaf: f64,
    pub half_trans: f64,
    /// Distinguished leaf l*: (leaf coordinate b, transversal a*(b)).
    pub lstar: Vec<(f64, f64)>,
    /// Branch sign (+1 right, -1 left) reached from a > a*(b).
    pub branch_of_positive: i8,
    pub transversality_min: f64,
    pub leaf_angle_spread_deg: f64,
}

impl CrossSection {
    /// Chart coordinates (a = transversal, b = leafwise, h = off-plane).
    pub fn chart(&self, p: &State) -> (f64, f64, f64) {
        let d = p - self.center;
        (d.dot(&self.axis_trans), d.dot(&self.axis_leaf), d.dot(&self.normal))
    }

    pub fn point_at(&self, a: f64, b: f64) -> State {
        self.center + self.axis_trans * a + self.axis_leaf * b
    }

    /// Interpolated transversal coordinate of l* at leaf coordinate b.
    pub fn lstar_at(&self, b: f64) -> f64 {
        let pts = &self.lstar;
        if b <= pts[0].0 {
            return pts[0].1;
        }
        if b >= pts[pts.len() - 1].0 {
            return pts[pts.len() - 1].1;
        }
        let i = pts.partition_point(|&(bb, _)| bb <= b) - 1;
        let (b0, a0) = pts[i];
        let (b1, a1) = pts[i + 1];
        a0 + (a1 - a0) * (b - b0) / (b1 - b0)
    }

    /// Distance from a point to the (solid) rectangle.
    pub fn distance_to_rectangle(&self, p: &State) -> f64 {
        let (a, b, h) = self.chart(p);
        let da = (a.abs() - self.half_trans).max(0.0);
        let db = (b.abs() - self.half_leaf).max(0.0);
        (da * da + db * db + h * h).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct SingularSectionPair {
    pub sigma: State,
    pub eigen: LorenzLikeEigen,
    pub top: CrossSection,
    pub bottom: CrossSection,
    /// Longest observed first-branch-decision flight time from the
    /// sections (the section time horizon).
    pub t_horizon: f64,
}

/// First branch decision of the orbit of `x`: the sign of the unstable
/// eigen-coordinate once its magnitude exceeds `u_escape`.
pub fn branch_exit_sign(
    field: &VectorField,
    eigen: &LorenzLikeEigen,
    sigma: &State,
    x: &State,
    u_escape: f64,
    t_cap: f64,
    opts: &IntegrateOpts,
) -> Result<(i8, f64)> {
    let traj = integrate(field, x, t_cap, opts)?;
    // Walk nodes; refine the crossing with dense output.
    let times = traj.node_times();
    let ucoord = |p: &State| eigen.coords(sigma, p).0;
    let mut prev_t = 0.0;
    let mut prev_u = ucoord(x);
    for &t in &times[1..] {
        let p = traj.flow_at(t)?;
        let u = ucoord(&p);
        if u.abs() >= u_escape {
            let (mut lo, mut hi) = (prev_t, t);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if ucoord(&traj.flow_at(mid)?).abs() >= u_escape {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let uc = ucoord(&traj.flow_at(hi)?);
            return Ok((if uc >= 0.0 { 1 } else { -1 }, hi));
        }
        prev_t = t;
        prev_u = u;
    }
    let _ = (prev_t, prev_u);
    Err(Error::Geometry(format!(
        "orbit made no branch decision within t = {t_cap} (|u| stayed below {u_escape})"
    )))
}

#[derive(Debug, Clone, Copy)]
pub struct SectionConfig {
    /// Offset of each rectangle center from sigma along the weak axis.
    pub offset: f64,
    pub half_leaf: f64,
    pub half_trans: f64,
    /// Minimal |<X, n>| allowed on the rectangle.
    pub transversality_floor: f64,
    /// |u| threshold declaring a branch decision.
    pub u_escape: f64,
    pub decision_t_cap: f64,
    /// Number of leaf-offsets at which l* is bisected.
    pub lstar_samples: usize,
}

impl Default for SectionConfig {
    fn default() -> Self {
        Self {
            offset: 1.0,
            half_leaf: 0.5,
            half_trans: 0.5,
            transversality_floor: 0.1,
            u_escape: 1.0,
            decision_t_cap: 80.0,
            lstar_samples: 9,
        }
    }
}

/// Build the pair of rectangles straddling the local stable manifold
/// along the weak axis, and locate the distinguished leaf on each by
/// bisection on the first-branch-decision sign.
pub fn build_singular_sections(
    field: &VectorField,
    sigma: &State,
    cfg: &SectionConfig,
    opts: &IntegrateOpts,
) -> Result<SingularSectionPair> {
    if cfg.half_leaf <= 0.0 || cfg.half_trans <= 0.0 || cfg.offset <= 0.0 {
        return Err(Error::Geometry("degenerate section extents".into()));
    }
    let eigen = lorenz_like_eigen(field, sigma)?;
    let mut t_horizon = 0.0f64;
    let mut build_one = |side: f64| -> Result<CrossSection> {
        let center = sigma + eigen.vweak * (side * cfg.offset);
        let normal = eigen.vweak;
        let axis_leaf = (eigen.vss - normal * eigen.vss.dot(&normal)).normalize();
        let axis_trans = normal.cross(&axis_leaf);
        // Transversality scan.
        let mut sign = 0.0f64;
        let mut min_abs = f64::INFINITY;
        let mut spread: f64 = 0.0;
        let mut ref_leaf: Option<State> = None;
        for ia in -5..=5 {
            for ib in -5..=5 {
                let p = center
                    + axis_trans * (cfg.half_trans * ia as f64 / 5.0)
                    + axis_leaf * (cfg.half_leaf * ib as f64 / 5.0);
                let dot = field.eval(&p).dot(&normal);
                if sign == 0.0 {
                    sign = dot.signum();
                } else if dot.signum() != sign {
                    return Err(Error::Geometry(format!(
                        "flow tangency on the section at {p:?}"
                    )));
                }
                min_abs = min_abs.min(dot.abs());
                // Leaf field sanity at a coarse subgrid.
                if ia % 5 == 0 && ib % 5 == 0 {
                    if let Ok(s) = estimate_stable_direction(field, &p, 4.0, opts) {
                        let in_plane = (s - normal * s.dot(&normal)).normalize();
                        match ref_leaf {
                            None => ref_leaf = Some(in_plane),
                            Some(r) => {
                                let ang =
                                    r.dot(&in_plane).abs().clamp(0.0, 1.0).acos().to_degrees();
                                spread = spread.max(ang);
                            }
                        }
                    }
                }
            }
        }
        if min_abs < cfg.transversality_floor {
            return Err(Error::Geometry(format!(
                "transversality floor violated: min |<X,n>| = {min_abs:.3e}"
            )));
        }
        // l* bisection at several leaf offsets.
        let mut lstar = Vec::new();
        let mut branch_pos = 0i8;
        let nb = cfg.lstar_samples.max(1);
        for ib in 0..nb {
            let b = if nb == 1 {
                0.0
            } else {
                -0.8 * cfg.half_leaf + 1.6 * cfg.half_leaf * ib as f64 / (nb - 1) as f64
            };
            let at = |a: f64| -> Result<(i8, f64)> {
                branch_exit_sign(
                    field,
                    &eigen,
                    sigma,
                    &(center + axis_trans * a + axis_leaf * b),
                    cfg.u_escape,
                    cfg.decision_t_cap,
                    opts,
                )
            };
            let (mut lo, mut hi) = (-cfg.half_trans, cfg.half_trans);
            let (s_lo, t_lo) = at(lo)?;
            let (s_hi, t_hi) = at(hi)?;
            t_horizon = t_horizon.max(t_lo).max(t_hi);
            if s_lo == s_hi {
                return Err(Error::Geometry(format!(
                    "no leaf crossing inside the section at leaf offset {b}"
                )));
            }
            let mut exact_hit = None;
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                match at(mid) {
                    Ok((s_mid, t_mid)) => {
                        t_horizon = t_horizon.max(t_mid);
                        if s_mid == s_hi {
                            hi = mid;
                        } else {
                            lo = mid;
                        }
                    }
                    // No decision at all: the midpoint orbit never leaves
                    // the stable set, i.e. we hit l* exactly (the weak
                    // axis is exactly invariant, numerically too).
                    Err(Error::Geometry(_)) => {
                        exact_hit = Some(mid);
                        break;
                    }
                    Err(e) => return Err(e),
                }
                if hi - lo <= 1e-13 * cfg.half_trans.max(1.0) {
                    break;
                }
            }
            lstar.push((b, exact_hit.unwrap_or(0.5 * (lo + hi))));
            branch_pos = s_hi;
        }
        Ok(CrossSection {
            center,
            normal,
            axis_leaf,
            axis_trans,
            half_leaf: cfg.half_leaf,
            half_trans: cfg.half_trans,
            lstar,
            branch_of_positive: branch_pos,
            transversality_min: min_abs,
            leaf_angle_spread_deg: spread,
        })
    };
    let top = build_one(1.0)?;
    let bottom = build_one(-1.0)?;
    Ok(SingularSectionPair { sigma: *sigma, eigen, top, bottom, t_horizon })
}

/// Minimal distance from the orbit of the central l* point to sigma;
/// used to check that the distinguished leaf meets the stable manifold.
pub fn leaf_approach_distance(
    field: &VectorField,
    pair: &SingularSectionPair,
    section: &CrossSection,
    opts: &IntegrateOpts,
) -> Result<f64> {
    let p = section.point_at(section.lstar_at(0.0), 0.0);
    let traj = integrate(field, &p, pair.t_horizon.max(10.0), opts)?;
    let mut best = f64::INFINITY;
    for (_, q) in traj.arc_resample(0.05) {
        best = best.min((q - pair.sigma).norm());
    }
    Ok(best)
}

// ---------------------------------------------------------------------
// Side / bi-side classification
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SideVerdict {
    /// The attractor meets only one component; `positive` tells which side
    /// of the oriented cut plane.
    Side { positive: bool },
    BiSide,
    Neither,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SideClassification {
    pub point: [f64; 3],
    pub verdict: SideVerdict,
    pub plane_normal: Option<[f64; 3]>,
    /// (radius, hits on positive side, hits on negative side).
    pub counts: Vec<(f64, usize, usize)>,
}

#[derive(Debug, Clone, Copy)]
pub struct SideConfig {
    pub probe_radius: f64,
    pub probe_levels: usize,
    /// Sample hits required to call a component occupied.
    pub hit_threshold: usize,
    /// Half-thickness of the excluded leaf slab, as a fraction of the
    /// probe radius.
    pub slab_fraction: f64,
    pub stable_horizon: f64,
}

impl Default for SideConfig {
    fn default() -> Self {
        Self {
            probe_radius: 0.3,
            probe_levels: 3,
            hit_threshold: 3,
            slab_fraction: 0.1,
            stable_horizon: 5.0,
        }
    }
}

/// Classify `x` by splitting its ball with the local stable-plane
/// surrogate (span of the stable direction and the flow) and counting
/// attractor-sample hits per side over the halving radius schedule.
pub fn classify_side(
    field: &VectorField,
    x: &State,
    sample: &AttractorSample,
    cfg: &SideConfig,
    opts: &IntegrateOpts,
) -> SideClassification {
    let point = [x.x, x.y, x.z];
    let flow = field.eval(x);
    let stable = match estimate_stable_direction(field, x, cfg.stable_horizon, opts) {
        Ok(s) => s,
        Err(_) => {
            return SideClassification {
                point,
                verdict: SideVerdict::Inconclusive,
                plane_normal: None,
                counts: Vec::new(),
            }
        }
    };
    if flow.norm() < 1e-8 {
        return SideClassification {
            point,
            verdict: SideVerdict::Inconclusive,
            plane_normal: None,
            counts: Vec::new(),
        };
    }
    let n = stable.cross(&flow.normalize());
    if n.norm() < 1e-6 {
        return SideClassification {
            point,
            verdict: SideVerdict::Inconclusive,
            plane_normal: None,
            counts: Vec::new(),
        };
    }
    let n = n.normalize();
    let mut counts = Vec::new();
    for level in 0..cfg.probe_levels {
        let r = cfg.probe_radius / (1 << level) as f64;
        let slab = cfg.slab_fraction * r;
        let (mut plus, mut minus) = (0usize, 0usize);
        for idx in sample.indices_within(x, r) {
            let h = (sample.points[idx as usize] - x).dot(&n);
            if h > slab {
                plus += 1;
            } else if h < -slab {
                minus += 1;
            }
        }
        counts.push((r, plus, minus));
    }
    let t = cfg.hit_threshold;
    let side_pos = counts.iter().all(|&(_, p, m)| p >= t && m == 0);
    let side_neg = counts.iter().all(|&(_, p, m)| m >= t && p == 0);
    let biside = counts.iter().all(|&(_, p, m)| p >= t && m >= t);
    let neither = counts.first().map(|&(_, p, m)| p == 0 && m == 0).unwrap_or(true);
    let verdict = if side_pos {
        SideVerdict::Side { positive: true }
    } else if side_neg {
        SideVerdict::Side { positive: false }
    } else if biside {
        SideVerdict::BiSide
    } else if neither {
        SideVerdict::Neither
    } else {
        SideVerdict::Inconclusive
    };
    SideClassification { point, verdict, plane_normal: Some([n.x, n.y, n.z]), counts }
}

// ---------------------------------------------------------------------
// Unstable branches and landmarks
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BranchCurve {
    /// +1 along +vu ("right"), -1 along -vu ("left").
    pub sign: i8,
    /// (arclength from sigma, position), strictly increasing arclength.
    pub points: Vec<(f64, State)>,
}

impl BranchCurve {
    pub fn total_arclength(&self) -> f64 {
        self.points.last().map(|&(l, _)| l).unwrap_or(0.0)
    }

    pub fn point_at_arclength(&self, l: f64) -> State {
        let pts = &self.points;
        if l <= pts[0].0 {
            return pts[0].1;
        }
        if l >= pts[pts.len() - 1].0 {
            return pts[pts.len() - 1].1;
        }
        let i = pts.partition_point(|&(ll, _)| ll <= l) - 1;
        let (l0, p0) = pts[i];
        let (l1, p1) = pts[i + 1];
        p0 + (p1 - p0) * ((l - l0) / (l1 - l0))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LandmarkCertificates {
    pub launches_per_side: usize,
    pub violations: usize,
    pub max_first_hit_time: f64,
    pub landmark_separation: f64,
    pub min_section_clearance: f64,
    pub min_axis_clearance: f64,
    pub leaf_orbit_min_clearance: f64,
    pub min_wrong_ball_distance: f64,
    pub condition1_ok: bool,
    pub condition23_ok: bool,
}

#[derive(Debug, Clone)]
pub struct UnstableBranches {
    pub sigma: State,
    pub gamma: f64,
    pub beta_sigma: f64,
    /// Unstable eigenvalue at sigma; sizes flight-time targets.
    pub unstable_rate: f64,
    pub left: BranchCurve,
    pub right: BranchCurve,
    pub y_left: State,
    pub y_right: State,
    pub t_sigma: f64,
    pub certificates: LandmarkCertificates,
}

impl UnstableBranches {
    pub fn branch(&self, sign: i8) -> &BranchCurve {
        if sign >= 0 {
            &self.right
        } else {
            &self.left
        }
    }

    pub fn landmark(&self, sign: i8) -> State {
        if sign >= 0 {
            self.y_right
        } else {
            self.y_left
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LandmarkConfig {
    /// Branch containment radius; shrunk automatically if the traced
    /// curve fails backward containment.
    pub gamma: f64,
    pub seed_offset: f64,
    pub launches_per_side: usize,
    /// Log-uniform leaf-distance range for certification launches.
    pub eta_min: f64,
    pub eta_max: f64,
    pub launch_t_cap: f64,
    /// Wrong-ball exclusion window after the first correct hit.
    pub post_hit_margin: f64,
    pub leaf_orbit_samples: usize,
    /// Unstable-coordinate size at which a computed stable-leaf orbit is
    /// considered to have leaked off the stable manifold.
    pub leak_floor: f64,
}

impl Default for LandmarkConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            seed_offset: 1e-7,
            launches_per_side: 100,
            eta_min: 1e-7,
            eta_max: 1e-4,
            launch_t_cap: 15.0,
            post_hit_margin: 0.25,
            leaf_orbit_samples: 12,
            leak_floor: 0.02,
        }
    }
}

fn trace_branch(
    field: &VectorField,
    sigma: &State,
    vu: &State,
    sign: f64,
    gamma: f64,
    seed_offset: f64,
    opts: &IntegrateOpts,
) -> Result<BranchCurve> {
    let seed = sigma + vu * (sign * seed_offset);
    let traj = integrate(field, &seed, 120.0, opts)?;
    let mut points = vec![(seed_offset, seed)];
    let mut arclen = seed_offset;
    let mut prev = seed;
    let step = (gamma / 400.0).max(1e-4);
    for (_, p) in traj.arc_resample(step).into_iter().skip(1) {
        arclen += (p - prev).norm();
        prev = p;
        points.push((arclen, p));
        if (p - sigma).norm() > gamma {
            return Ok(BranchCurve { sign: if sign >= 0.0 { 1 } else { -1 }, points });
        }
    }
    Err(Error::Geometry(format!(
        "branch trace did not exit B_gamma (gamma = {gamma}) within the time budget"
    )))
}

fn backward_containment_ok(
    field: &VectorField,
    sigma: &State,
    curve: &BranchCurve,
    gamma: f64,
    opts: &IntegrateOpts,
) -> bool {
    let n = curve.points.len();
    for k in 1..=8 {
        let (_, p) = curve.points[(n - 1) * k / 8];
        match integrate_backward(field, &p, 10.0, opts) {
            Ok(traj) => {
                for (_, q) in traj.arc_resample(gamma / 50.0) {
                    if (q - sigma).norm() > gamma * (1.0 + 1e-9) {
                        return false;
                    }
                }
            }
            Err(_) => return false,
        }
    }
    true
}

/// Distance from p to the weak-axis segments sigma +/- [0, len] vweak
/// (the local stable regular orbits, the asymptote of the leaf orbits).
fn axis_distance(sigma: &State, vweak: &State, len: f64, p: &State) -> f64 {
    let d = p - sigma;
    let t = d.dot(vweak).clamp(-len, len);
    (d - vweak * t).norm()
}

/// Trace both unstable branches out to the containment radius, pick the
/// largest landmark radius beta satisfying the separation conditions, and
/// certify the branch-selection conditions by Monte Carlo launches from
/// the leaf bands of both sections.
pub fn branch_landmarks(
    field: &VectorField,
    pair: &SingularSectionPair,
    cfg: &LandmarkConfig,
    seed: u64,
    opts: &IntegrateOpts,
) -> Result<UnstableBranches> {
    let sigma = pair.sigma;
    let eigen = pair.eigen;

    // Containment-validated branch tracing with automatic gamma shrink.
    let mut gamma = cfg.gamma;
    let (left, right) = loop {
        let l = trace_branch(field, &sigma, &eigen.vu, -1.0, gamma, cfg.seed_offset, opts);
        let r = trace_branch(field, &sigma, &eigen.vu, 1.0, gamma, cfg.seed_offset, opts);
        match (l, r) {
            (Ok(l), Ok(r))
                if backward_containment_ok(field, &sigma, &l, gamma, opts)
                    && backward_containment_ok(field, &sigma, &r, gamma, opts) =>
            {
                break (l, r);
            }
            _ => {
                gamma *= 0.8;
                if gamma < 1e-3 {
                    return Err(Error::Geometry(
                        "no containment radius found for the unstable branches".into(),
                    ));
                }
            }
        }
    };

    let axis_len = 2.0 * (pair.top.center - sigma).norm();
    let available = left.total_arclength().min(right.total_arclength());
    let feasible = |beta: f64| -> bool {
        if beta <= 0.0 || 2.0 * beta > 0.98 * available {
            return false;
        }
        let yl = left.point_at_arclength(2.0 * beta);
        let yr = right.point_at_arclength(2.0 * beta);
        if (yl - yr).norm() <= 2.0 * beta {
            return false;
        }
        for y in [yl, yr] {
            if pair.top.distance_to_rectangle(&y) <= beta {
                return false;
            }
            if pair.bottom.distance_to_rectangle(&y) <= beta {
                return false;
            }
            if axis_distance(&sigma, &eigen.vweak, axis_len, &y) <= beta {
                return false;
            }
        }
        true
    };
    let mut lo = 0.0;
    let mut hi = 0.49 * available;
    if !feasible(hi) {
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if feasible(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi = lo;
    }
    let beta = hi;
    if beta <= 0.0 {
        return Err(Error::Geometry("no positive landmark radius satisfies separation".into()));
    }
    let y_left = left.point_at_arclength(2.0 * beta);
    let y_right = right.point_at_arclength(2.0 * beta);

    // Separation numbers for the certificate.
    let landmark_separation = (y_left - y_right).norm();
    let min_section_clearance = [y_left, y_right]
        .iter()
        .map(|y| pair.top.distance_to_rectangle(y).min(pair.bottom.distance_to_rectangle(y)))
        .fold(f64::INFINITY, f64::min);
    let min_axis_clearance = [y_left, y_right]
        .iter()
        .map(|y| axis_distance(&sigma, &eigen.vweak, axis_len, y))
        .fold(f64::INFINITY, f64::min);

    // Condition (1) surrogate: computed stable-leaf orbits stay clear of
    // both landmark balls while they remain credibly on the stable set
    // (before the unstable coordinate leaks past the floor).
    let mut leaf_orbit_min = f64::INFINITY;
    for section in [&pair.top, &pair.bottom] {
        let ns = cfg.leaf_orbit_samples.max(2);
        for k in 0..ns {
            let b = -0.7 * section.half_leaf
                + 1.4 * section.half_leaf * k as f64 / (ns - 1) as f64;
            let p = section.point_at(section.lstar_at(b), b);
            let traj = integrate(field, &p, 40.0, opts)?;
            for (_, q) in traj.arc_resample(beta / 8.0) {
                let (u, _, _) = eigen.coords(&sigma, &q);
                if u.abs() > cfg.leak_floor {
                    break;
                }
                leaf_orbit_min =
                    leaf_orbit_min.min((q - y_left).norm()).min((q - y_right).norm());
            }
        }
    }
    let condition1_ok = leaf_orbit_min > beta
        && landmark_separation > 2.0 * beta
        && min_section_clearance > beta
        && min_axis_clearance > beta;

    // Conditions (2)-(3): launches from the V bands on each side of each
    // section's leaf must reach the matching landmark ball and stay clear
    // of the other one until past the hit.
    let mut rng = crate::rng::stream(seed, "landmark-cert", 0);
    let mut violations = 0usize;
    let mut max_hit = 0.0f64;
    let mut min_wrong = f64::INFINITY;
    for section in [&pair.top, &pair.bottom] {
        for branch_sign in [-1i8, 1i8] {
            let a_side = branch_sign as f64 * section.branch_of_positive as f64;
            for _ in 0..cfg.launches_per_side {
                let b = rng.gen_range(-0.7 * section.half_leaf..0.7 * section.half_leaf);
                let eta = 10f64.powf(
                    rng.gen_range(cfg.eta_min.log10()..cfg.eta_max.log10()),
                );
                let p = section.point_at(section.lstar_at(b) + a_side * eta, b);
                let traj = integrate(field, &p, cfg.launch_t_cap, opts)?;
                let y_good = if branch_sign > 0 { y_right } else { y_left };
                let y_bad = if branch_sign > 0 { y_left } else { y_right };
                let mut hit_time = None;
                let mut wrong_before = false;
                let mut local_min_wrong = f64::INFINITY;
                for (t, q) in traj.arc_resample(beta / 8.0) {
                    let dw = (q - y_bad).norm();
                    if hit_time.is_none() || t <= hit_time.unwrap() + cfg.post_hit_margin {
                        local_min_wrong = local_min_wrong.min(dw);
                        if dw <= beta {
                            wrong_before = true;
                        }
                    }
                    if hit_time.is_none() && (q - y_good).norm() <= beta {
                        hit_time = Some(t);
                    }
                    if let Some(h) = hit_time {
                        if t > h + cfg.post_hit_margin {
                            break;
                        }
                    }
                }
                min_wrong = min_wrong.min(local_min_wrong);
                match hit_time {
                    Some(h) if !wrong_before => max_hit = max_hit.max(h),
                    _ => violations += 1,
                }
            }
        }
    }
    let condition23_ok = violations == 0;
    let t_sigma = max_hit + 0.5;

    Ok(UnstableBranches {
        sigma,
        gamma,
        beta_sigma: beta,
        unstable_rate: eigen.lu,
        left,
        right,
        y_left,
        y_right,
        t_sigma,
        certificates: LandmarkCertificates {
            launches_per_side: cfg.launches_per_side,
            violations,
            max_first_hit_time: max_hit,
            landmark_separation,
            min_section_clearance,
            min_axis_clearance,
            leaf_orbit_min_clearance: leaf_orbit_min,
            min_wrong_ball_distance: min_wrong,
            condition1_ok,
            condition23_ok,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{lorenz_origin_eigen, ModelSpec};

    fn lorenz_field() -> VectorField {
        ModelSpec::classical_lorenz().build().unwrap()
    }

    #[test]
    fn lorenz_origin_is_lorenz_like() {
        let f = lorenz_field();
        let e = lorenz_like_eigen(&f, &State::zeros()).unwrap();
        let closed = lorenz_origin_eigen(10.0, 28.0, 8.0 / 3.0);
        assert!((e.lu - closed.lu).abs() < 1e-6);
        assert!((e.lweak - closed.lweak).abs() < 1e-6);
        assert!((e.lss - closed.lss).abs() < 1e-6);
        assert!(e.vu.dot(&closed.vu).abs() > 1.0 - 1e-8);
        assert!(e.vweak.dot(&closed.vweak).abs() > 1.0 - 1e-8);
    }

    #[test]
    fn saddle_is_not_lorenz_like() {
        let f = ModelSpec::Saddle { ls1: 2.0, ls2: 3.0, lu: 1.0 }.build().unwrap();
        assert!(lorenz_like_eigen(&f, &State::zeros()).is_err());
    }

    #[test]
    fn stable_direction_on_saddle_is_strongest_contraction() {
        let f = ModelSpec::Saddle { ls1: 2.0, ls2: 3.0, lu: 1.0 }.build().unwrap();
        let opts = IntegrateOpts::default();
        for x in [State::new(1.0, 1.0, 1e-3), State::new(-0.5, 0.2, 1e-3)] {
            let v = estimate_stable_direction(&f, &x, 4.0, &opts).unwrap();
            assert!(v.y.abs() > 1.0 - 1e-8, "expected e2, got {v:?}");
        }
    }

    #[test]
    fn isotropic_contraction_is_inconclusive() {
        let f = VectorField::new(
            "isotropic",
            "",
            |x: &State| -x,
            |_: &State| -Matrix3::identity(),
            vec![State::zeros()],
            (State::new(-2.0, -2.0, -2.0), State::new(2.0, 2.0, 2.0)),
        );
        let err =
            estimate_stable_direction(&f, &State::new(1.0, 0.5, 0.2), 4.0, &IntegrateOpts::default());
        assert!(matches!(err, Err(Error::Inconclusive(_))));
    }

    #[test]
    fn stable_direction_varies_continuously_along_lorenz_orbit() {
        let f = lorenz_field();
        let opts = IntegrateOpts::default();
        let x0 = State::new(1.0, 1.0, 1.0);
        let base = integrate(&f, &x0, 30.0, &opts).unwrap();
        let start = base.end();
        let seg = integrate(&f, &start, 0.2, &opts).unwrap();
        let mut prev: Option<State> = None;
        for k in 0..=20 {
            let t = 0.01 * k as f64;
            let v = estimate_stable_direction(&f, &seg.flow_at(t).unwrap(), 5.0, &opts).unwrap();
            if let Some(p) = prev {
                let ang = p.dot(&v).abs().clamp(0.0, 1.0).acos().to_degrees();
                assert!(ang <= 5.0, "stable line jumped {ang} deg over dt = 0.01");
            }
            prev = Some(v);
        }
    }

    #[test]
    fn degenerate_extent_is_rejected() {
        let f = lorenz_field();
        let cfg = SectionConfig { half_leaf: 0.0, ..SectionConfig::default() };
        assert!(matches!(
            build_singular_sections(&f, &State::zeros(), &cfg, &IntegrateOpts::default()),
            Err(Error::Geometry(_))
        ));
    }
}
