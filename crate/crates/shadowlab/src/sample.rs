//! Long-orbit attractor sampling with a uniform-grid spatial index, plus
//! the packed binary point-cloud cache.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::flow::{integrate, IntegrateOpts, State, VectorField};

/// Attractor stand-in: `count` states sampled at uniform time spacing from
/// one long orbit after a transient discard. Membership queries are
/// proximity queries against this cloud.
pub struct AttractorSample {
    pub field_name: String,
    pub field_params: String,
    pub transient: f64,
    pub duration: f64,
    pub points: Vec<State>,
    cell: f64,
    grid: HashMap<(i64, i64, i64), Vec<u32>>,
}

const MAGIC: &[u8] = b"SHADOWCLOUD1\n";

impl AttractorSample {
    pub fn build(
        field: &VectorField,
        seed: u64,
        transient: f64,
        duration: f64,
        count: usize,
        opts: &IntegrateOpts,
    ) -> Result<Self> {
        if count == 0 || duration <= 0.0 || transient < 0.0 {
            return Err(Error::BadParameter("sample spec must be positive".into()));
        }
        let mut rng = crate::rng::stream(seed, "attractor-x0", 0);
        let x0 = State::new(
            1.0 + rng.gen_range(-0.1..0.1),
            1.0 + rng.gen_range(-0.1..0.1),
            1.0 + rng.gen_range(-0.1..0.1),
        );
        let settled = integrate(field, &x0, transient, opts)?.end();
        let traj = integrate(field, &settled, duration, opts)?;
        let dt = duration / count as f64;
        let points: Vec<State> =
            (0..count).map(|i| traj.flow_at(i as f64 * dt)).collect::<Result<_>>()?;
        Ok(Self::from_points(
            field.name.clone(),
            field.params.clone(),
            transient,
            duration,
            points,
        ))
    }

    pub fn from_points(
        field_name: String,
        field_params: String,
        transient: f64,
        duration: f64,
        points: Vec<State>,
    ) -> Self {
        // Cell size tuned to typical query radii; correctness does not
        // depend on it.
        let cell = 0.5;
        let mut grid: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            grid.entry(Self::key(p, cell)).or_default().push(i as u32);
        }
        AttractorSample { field_name, field_params, transient, duration, points, cell, grid }
    }

    fn key(p: &State, cell: f64) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of sample points within `r` of `p`, ascending.
    pub fn indices_within(&self, p: &State, r: f64) -> Vec<u32> {
        let rc = (r / self.cell).ceil() as i64;
        let (cx, cy, cz) = Self::key(p, self.cell);
        let mut out = Vec::new();
        for dx in -rc..=rc {
            for dy in -rc..=rc {
                for dz in -rc..=rc {
                    if let Some(idxs) = self.grid.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &i in idxs {
                            if (self.points[i as usize] - p).norm() <= r {
                                out.push(i);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn count_within(&self, p: &State, r: f64) -> usize {
        self.indices_within(p, r).len()
    }

    /// Distance from `p` to the nearest sample point.
    pub fn nearest_distance(&self, p: &State) -> f64 {
        let mut r = self.cell;
        for _ in 0..64 {
            let hits = self.indices_within(p, r);
            if let Some(best) = hits
                .iter()
                .map(|&i| (self.points[i as usize] - p).norm())
                .min_by(|a, b| a.partial_cmp(b).unwrap())
            {
                // A hit within r is final only once r covers it.
                if best <= r {
                    return best;
                }
            }
            r *= 2.0;
        }
        f64::INFINITY
    }

    /// k nearest sample indices, ties broken by index.
    pub fn k_nearest(&self, p: &State, k: usize) -> Vec<u32> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut r = self.cell;
        loop {
            let hits = self.indices_within(p, r);
            if hits.len() >= k.min(self.points.len()) {
                let mut scored: Vec<(f64, u32)> =
                    hits.iter().map(|&i| ((self.points[i as usize] - p).norm(), i)).collect();
                scored.sort_by(|a, b| a.partial_cmp(b).unwrap());
                if scored[k.min(scored.len()) - 1].0 <= r || hits.len() == self.points.len() {
                    return scored.into_iter().take(k).map(|(_, i)| i).collect();
                }
            }
            if r > 1e6 {
                return Vec::new();
            }
            r *= 2.0;
        }
    }

    /// Packed cache: text header (field name, params, counts), then
    /// little-endian f64 triples.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(MAGIC)?;
        let header = format!(
            "field={}\nparams={}\ntransient={}\nduration={}\ncount={}\nEND\n",
            self.field_name,
            self.field_params,
            self.transient,
            self.duration,
            self.points.len()
        );
        f.write_all(header.as_bytes())?;
        let mut buf = Vec::with_capacity(self.points.len() * 24);
        for p in &self.points {
            buf.extend_from_slice(&p.x.to_le_bytes());
            buf.extend_from_slice(&p.y.to_le_bytes());
            buf.extend_from_slice(&p.z.to_le_bytes());
        }
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut raw = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut raw)?;
        if raw.len() < MAGIC.len() || &raw[..MAGIC.len()] != MAGIC {
            return Err(Error::Parse("not a shadowlab point-cloud file".into()));
        }
        let body_at = raw
            .windows(4)
            .position(|w| w == b"END\n")
            .ok_or_else(|| Error::Parse("missing END marker".into()))?
            + 4;
        let header = std::str::from_utf8(&raw[MAGIC.len()..body_at])
            .map_err(|e| Error::Parse(e.to_string()))?;
        let mut field_name = String::new();
        let mut field_params = String::new();
        let mut transient = 0.0;
        let mut duration = 0.0;
        let mut count = 0usize;
        for line in header.lines() {
            if let Some((k, v)) = line.split_once('=') {
                match k {
                    "field" => field_name = v.to_string(),
                    "params" => field_params = v.to_string(),
                    "transient" => transient = v.parse().map_err(|_| bad(v))?,
                    "duration" => duration = v.parse().map_err(|_| bad(v))?,
                    "count" => count = v.parse().map_err(|_| bad(v))?,
                    _ => {}
                }
            }
        }
        let body = &raw[body_at..];
        if body.len() != count * 24 {
            return Err(Error::Parse(format!(
                "expected {} bytes of points, got {}",
                count * 24,
                body.len()
            )));
        }
        let mut points = Vec::with_capacity(count);
        for c in body.chunks_exact(24) {
            points.push(State::new(
                f64::from_le_bytes(c[0..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..16].try_into().unwrap()),
                f64::from_le_bytes(c[16..24].try_into().unwrap()),
            ));
        }
        Ok(Self::from_points(field_name, field_params, transient, duration, points))
    }
}

fn bad(v: &str) -> Error {
    Error::Parse(format!("bad header value `{v}`"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpec;

    fn small_sample() -> AttractorSample {
        let f = ModelSpec::classical_lorenz().build().unwrap();
        AttractorSample::build(&f, 42, 20.0, 100.0, 5_000, &IntegrateOpts::default()).unwrap()
    }

    #[test]
    fn sample_is_deterministic_and_on_attractor_scale() {
        let f = ModelSpec::classical_lorenz().build().unwrap();
        let a = AttractorSample::build(&f, 7, 20.0, 50.0, 1000, &IntegrateOpts::default()).unwrap();
        let b = AttractorSample::build(&f, 7, 20.0, 50.0, 1000, &IntegrateOpts::default()).unwrap();
        assert_eq!(a.points, b.points);
        for p in &a.points {
            assert!(p.x.abs() <= 30.0 && p.y.abs() <= 30.0 && (-1.0..=60.0).contains(&p.z));
        }
    }

    #[test]
    fn neighborhood_queries_agree_with_brute_force() {
        let s = small_sample();
        let probes =
            [State::new(0.0, 0.0, 25.0), State::new(-10.0, -10.0, 25.0), State::new(3.0, 3.0, 9.0)];
        for p in probes {
            for r in [0.5, 2.0] {
                let brute: Vec<u32> = s
                    .points
                    .iter()
                    .enumerate()
                    .filter(|(_, q)| (*q - p).norm() <= r)
                    .map(|(i, _)| i as u32)
                    .collect();
                assert_eq!(s.indices_within(&p, r), brute);
            }
            let brute_nearest = s
                .points
                .iter()
                .map(|q| (q - p).norm())
                .min_by(|a, b| a.partial_cmp(b).unwrap())
                .unwrap();
            assert_eq!(s.nearest_distance(&p), brute_nearest);
            let kn = s.k_nearest(&p, 10);
            assert_eq!(kn.len(), 10);
            let mut scored: Vec<(f64, u32)> = s
                .points
                .iter()
                .enumerate()
                .map(|(i, q)| ((q - p).norm(), i as u32))
                .collect();
            scored.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let brute_k: Vec<u32> = scored.into_iter().take(10).map(|(_, i)| i).collect();
            assert_eq!(kn, brute_k);
        }
    }

    #[test]
    fn cache_round_trip() {
        let s = small_sample();
        let dir = std::env::temp_dir().join("shadowlab-test-cache");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cloud.bin");
        s.save(&path).unwrap();
        let loaded = AttractorSample::load(&path).unwrap();
        assert_eq!(loaded.points, s.points);
        assert_eq!(loaded.field_name, s.field_name);
        assert_eq!(loaded.field_params, s.field_params);
        std::fs::remove_file(&path).ok();
    }
}
