//! Finite (δ,T)-chains: construction, validation, evaluation of the
//! concatenated pseudo-orbit, and the flat record-file format.

use rand::Rng;

use crate::error::{Error, Result};
use crate::flow::{integrate, IntegrateOpts, State, Trajectory, VectorField};

/// Partial sums S_0 = 0, S_{i+1} = S_i + t_i of the segment durations.
#[derive(Debug, Clone)]
pub struct ChainClock {
    pub sums: Vec<f64>,
}

impl ChainClock {
    pub fn from_durations(durations: &[f64]) -> Self {
        let mut sums = Vec::with_capacity(durations.len() + 1);
        sums.push(0.0);
        let mut acc = 0.0;
        for &t in durations {
            acc += t;
            sums.push(acc);
        }
        ChainClock { sums }
    }

    pub fn total(&self) -> f64 {
        *self.sums.last().unwrap()
    }

    /// Index i with S_i <= t < S_{i+1}; the final instant belongs to the
    /// last segment.
    pub fn segment_of(&self, t: f64) -> Option<usize> {
        if !(0.0..=self.total()).contains(&t) {
            return None;
        }
        if t == self.total() {
            return Some(self.sums.len() - 2);
        }
        Some(self.sums.partition_point(|&s| s <= t) - 1)
    }
}

/// The chain {x_i; t_i}_0^k with jump bound delta and duration floor T.
///
/// Immutable after construction; the per-segment trajectories are
/// integrated once and shared read-only.
pub struct FiniteChain {
    pub points: Vec<State>,
    pub durations: Vec<f64>,
    pub delta: f64,
    pub t_min: f64,
    pub field_name: String,
    pub field_params: String,
    pub seed: Option<u64>,
    pub clock: ChainClock,
    segments: Vec<Trajectory>,
}

impl FiniteChain {
    pub fn new(
        field: &VectorField,
        points: Vec<State>,
        durations: Vec<f64>,
        delta: f64,
        t_min: f64,
        seed: Option<u64>,
        opts: &IntegrateOpts,
    ) -> Result<Self> {
        if points.is_empty() || points.len() != durations.len() {
            return Err(Error::BadParameter(format!(
                "chain needs matching nonempty points/durations, got {}/{}",
                points.len(),
                durations.len()
            )));
        }
        if let Some(&t) = durations.iter().find(|&&t| !(t >= t_min)) {
            return Err(Error::BadParameter(format!(
                "segment duration {t} below the floor T = {t_min}"
            )));
        }
        let segments = points
            .iter()
            .zip(&durations)
            .map(|(x, &t)| integrate(field, x, t, opts))
            .collect::<Result<Vec<_>>>()?;
        let clock = ChainClock::from_durations(&durations);
        Ok(FiniteChain {
            points,
            durations,
            delta,
            t_min,
            field_name: field.name.clone(),
            field_params: field.params.clone(),
            seed,
            clock,
            segments,
        })
    }

    pub fn segment_count(&self) -> usize {
        self.points.len()
    }

    pub fn total_duration(&self) -> f64 {
        self.clock.total()
    }

    pub fn segment(&self, i: usize) -> &Trajectory {
        &self.segments[i]
    }

    /// The concatenated pseudo-orbit x_0 * t = X_{t - S_i}(x_i).
    pub fn eval(&self, t: f64) -> Result<State> {
        let i = self
            .clock
            .segment_of(t)
            .ok_or(Error::ChainTimeOutOfRange { t, total: self.total_duration() })?;
        self.segments[i].flow_at(t - self.clock.sums[i])
    }

    /// Flowed endpoint X_{t_i}(x_i) of segment i.
    pub fn segment_end(&self, i: usize) -> State {
        self.segments[i].end()
    }

    /// Junction defects d(X_{t_i}(x_i), x_{i+1}) for 0 <= i <= k-1.
    pub fn defects(&self) -> Vec<f64> {
        (0..self.segment_count() - 1)
            .map(|i| (self.segment_end(i) - self.points[i + 1]).norm())
            .collect()
    }

    /// Per-junction validation against delta plus an integrator margin.
    pub fn validate(&self, opts: &IntegrateOpts) -> ChainValidation {
        let defects = self.defects();
        let scale = self
            .points
            .iter()
            .map(|p| p.norm())
            .fold(1.0f64, f64::max);
        let margin = 10.0 * (opts.abs_tol + opts.rel_tol * scale);
        let worst = defects.iter().cloned().fold(0.0f64, f64::max);
        ChainValidation { pass: worst <= self.delta + margin, defects, margin, delta: self.delta }
    }

    /// Flat record format: header then one `x y z t` line per segment.
    /// Floats print in shortest round-trip form, so parsing is bit-exact.
    pub fn to_record_string(&self) -> String {
        let mut out = String::new();
        out.push_str("# shadowlab-chain v1\n");
        out.push_str(&format!("# field = {}\n", self.field_name));
        out.push_str(&format!("# params = {}\n", self.field_params));
        out.push_str(&format!("# delta = {}\n", self.delta));
        out.push_str(&format!("# t_min = {}\n", self.t_min));
        if let Some(seed) = self.seed {
            out.push_str(&format!("# seed = {seed}\n"));
        }
        for (x, t) in self.points.iter().zip(&self.durations) {
            out.push_str(&format!("{} {} {} {}\n", x.x, x.y, x.z, t));
        }
        out
    }

    /// Parse a record file and rebuild the chain on `field`.
    pub fn from_record_string(
        field: &VectorField,
        text: &str,
        opts: &IntegrateOpts,
    ) -> Result<Self> {
        let mut delta = None;
        let mut t_min = None;
        let mut seed = None;
        let mut field_name = None;
        let mut points = Vec::new();
        let mut durations = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if let Some((key, value)) = rest.split_once('=') {
                    let (key, value) = (key.trim(), value.trim());
                    match key {
                        "delta" => delta = Some(parse_f64(value)?),
                        "t_min" => t_min = Some(parse_f64(value)?),
                        "seed" => {
                            seed = Some(value.parse::<u64>().map_err(|e| {
                                Error::Parse(format!("bad seed `{value}`: {e}"))
                            })?)
                        }
                        "field" => field_name = Some(value.to_string()),
                        _ => {}
                    }
                }
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 4 {
                return Err(Error::Parse(format!("expected 4 columns, got: `{line}`")));
            }
            points.push(State::new(parse_f64(cols[0])?, parse_f64(cols[1])?, parse_f64(cols[2])?));
            durations.push(parse_f64(cols[3])?);
        }
        if let Some(name) = field_name {
            if name != field.name {
                return Err(Error::Parse(format!(
                    "chain was recorded on `{name}`, not `{}`",
                    field.name
                )));
            }
        }
        let delta = delta.ok_or_else(|| Error::Parse("missing `# delta`".into()))?;
        let t_min = t_min.ok_or_else(|| Error::Parse("missing `# t_min`".into()))?;
        FiniteChain::new(field, points, durations, delta, t_min, seed, opts)
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|e| Error::Parse(format!("bad float `{s}`: {e}")))
}

#[derive(Debug, Clone)]
pub struct ChainValidation {
    pub pass: bool,
    pub defects: Vec<f64>,
    pub margin: f64,
    pub delta: f64,
}

/// Generic pseudo-orbit: follow the true flow, kicking each junction by a
/// uniform perturbation of norm <= noise. Validates with delta = 2 noise.
pub fn build_perturbed_chain(
    field: &VectorField,
    x0: &State,
    durations: &[f64],
    noise: f64,
    t_min: f64,
    seed: u64,
    opts: &IntegrateOpts,
) -> Result<FiniteChain> {
    if noise < 0.0 {
        return Err(Error::BadParameter(format!("noise must be nonnegative, got {noise}")));
    }
    let mut rng = crate::rng::stream(seed, "perturbed-chain", 0);
    let mut points = vec![*x0];
    for (i, &t) in durations.iter().enumerate() {
        if i + 1 == durations.len() {
            break;
        }
        let end = integrate(field, &points[i], t, opts)?.end();
        let kick = if noise > 0.0 {
            let mut dir = State::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            while dir.norm() < 1e-9 {
                dir = State::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
            }
            let radius = noise * rng.gen_range(0.0f64..1.0).cbrt();
            dir.normalize() * radius
        } else {
            State::zeros()
        };
        points.push(end + kick);
    }
    FiniteChain::new(
        field,
        points,
        durations.to_vec(),
        2.0 * noise,
        t_min,
        Some(seed),
        opts,
    )
}
