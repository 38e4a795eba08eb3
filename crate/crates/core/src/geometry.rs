//! Synthetic spherical source spaces, lead fields and extended-source growth.

use std::collections::VecDeque;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, EsiError, Result};
use crate::io;
use crate::tensor::Tensor;

pub const SOURCE_RADIUS_MM: f64 = 80.0;
pub const SENSOR_RADIUS_MM: f64 = 100.0;
const ORIENTATION_JITTER: f64 = 0.05;

pub type Point = [f64; 3];

pub fn distance(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Region centroids plus a symmetric neighbour graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceSpace {
    pub centroids: Vec<Point>,
    pub adjacency: Vec<Vec<usize>>,
}

impl SourceSpace {
    /// Builds a space from explicit parts, checking every invariant.
    pub fn new(centroids: Vec<Point>, adjacency: Vec<Vec<usize>>) -> Result<Self> {
        let s = SourceSpace {
            centroids,
            adjacency,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn n_regions(&self) -> usize {
        self.centroids.len()
    }

    pub fn neighbors(&self, region: usize) -> &[usize] {
        &self.adjacency[region]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.centroids.len();
        if self.adjacency.len() != n {
            return Err(EsiError::Format(format!(
                "{} centroids but {} adjacency lists",
                n,
                self.adjacency.len()
            )));
        }
        for (a, nbrs) in self.adjacency.iter().enumerate() {
            if nbrs.is_empty() {
                return Err(EsiError::Format(format!("region {a} has no neighbours")));
            }
            for &b in nbrs {
                if b >= n || b == a {
                    return Err(EsiError::Format(format!("bad edge {a} -> {b}")));
                }
                if !self.adjacency[b].contains(&a) {
                    return Err(EsiError::Format(format!(
                        "edge {a} -> {b} is not symmetric"
                    )));
                }
            }
        }
        if self.centroids.iter().flatten().any(|v| !v.is_finite()) {
            return Err(EsiError::Format("non-finite centroid".into()));
        }
        Ok(())
    }

    /// Regions reachable from `center` within `max_hops`, with their hop count,
    /// in breadth-first order.
    pub fn hop_distances(&self, center: usize, max_hops: usize) -> Vec<(usize, usize)> {
        let mut hops = vec![usize::MAX; self.n_regions()];
        let mut order = Vec::new();
        let mut queue = VecDeque::new();
        hops[center] = 0;
        queue.push_back(center);
        while let Some(r) = queue.pop_front() {
            order.push((r, hops[r]));
            if hops[r] == max_hops {
                continue;
            }
            for &nb in &self.adjacency[r] {
                if hops[nb] == usize::MAX {
                    hops[nb] = hops[r] + 1;
                    queue.push_back(nb);
                }
            }
        }
        order
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        io::write_json(self, path)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let s: SourceSpace = io::read_json(path)?;
        s.validate()?;
        Ok(s)
    }
}

/// Sorted, duplicate-free set of region indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegionSet(Vec<usize>);

impl RegionSet {
    pub fn new(mut regions: Vec<usize>, n_regions: usize) -> Result<Self> {
        regions.sort_unstable();
        regions.dedup();
        if regions.is_empty() {
            return param_err("region set must not be empty");
        }
        if let Some(&r) = regions.iter().find(|&&r| r >= n_regions) {
            return param_err(format!("region {r} out of range (n_regions = {n_regions})"));
        }
        Ok(RegionSet(regions))
    }

    /// Builds a set without validation; callers guarantee the invariants.
    pub(crate) fn from_sorted(regions: Vec<usize>) -> Self {
        RegionSet(regions)
    }

    pub fn regions(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, r: usize) -> bool {
        self.0.binary_search(&r).is_ok()
    }

    pub fn intersection_len(&self, other: &RegionSet) -> usize {
        self.0.iter().filter(|r| other.contains(**r)).count()
    }

    pub fn is_disjoint(&self, other: &RegionSet) -> bool {
        self.intersection_len(other) == 0
    }

    pub fn is_subset(&self, other: &RegionSet) -> bool {
        self.0.iter().all(|r| other.contains(*r))
    }

    pub fn union_all<'a>(sets: impl IntoIterator<Item = &'a RegionSet>) -> Option<RegionSet> {
        let mut all: Vec<usize> = sets.into_iter().flat_map(|s| s.0.iter().copied()).collect();
        all.sort_unstable();
        all.dedup();
        (!all.is_empty()).then_some(RegionSet(all))
    }
}

fn fibonacci_sphere(n: usize, radius: f64) -> Vec<Point> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let phi = golden * i as f64;
            [radius * r * phi.cos(), radius * y, radius * r * phi.sin()]
        })
        .collect()
}

/// Uniformly random rotation (Shoemake's quaternion method).
fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (
        a * (tau * u2).sin(),
        a * (tau * u2).cos(),
        b * (tau * u3).sin(),
        b * (tau * u3).cos(),
    );
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
        ],
        [
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
        ],
        [
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

fn rotate(m: &[[f64; 3]; 3], p: &Point) -> Point {
    [
        m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2],
        m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2],
        m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2],
    ]
}

/// Fibonacci-lattice centroids on an 80 mm sphere (randomly rotated by
/// `seed`) joined by a symmetrised k-nearest-neighbour graph.
pub fn build_synthetic_source_space(
    n_regions: usize,
    k_neighbors: usize,
    seed: u64,
) -> Result<SourceSpace> {
    if n_regions < 8 {
        return param_err(format!("n_regions must be >= 8, got {n_regions}"));
    }
    if k_neighbors < 1 || k_neighbors >= n_regions {
        return param_err(format!(
            "k_neighbors must be in [1, {}), got {k_neighbors}",
            n_regions
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rot = random_rotation(&mut rng);
    let centroids: Vec<Point> = fibonacci_sphere(n_regions, SOURCE_RADIUS_MM)
        .iter()
        .map(|p| rotate(&rot, p))
        .collect();

    let mut adjacency = vec![Vec::new(); n_regions];
    for a in 0..n_regions {
        let mut others: Vec<(f64, usize)> = (0..n_regions)
            .filter(|&b| b != a)
            .map(|b| (distance(&centroids[a], &centroids[b]), b))
            .collect();
        others.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        for &(_, b) in others.iter().take(k_neighbors) {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
    }
    for nbrs in &mut adjacency {
        nbrs.sort_unstable();
        nbrs.dedup();
    }
    SourceSpace::new(centroids, adjacency)
}

/// Breadth-first growth: extent 1 is the centre alone, extent k adds every
/// region within k - 1 hops.
pub fn grow_patch(space: &SourceSpace, center: usize, extent: usize) -> Result<RegionSet> {
    if center >= space.n_regions() {
        return param_err(format!("center {center} out of range"));
    }
    if extent < 1 {
        return param_err("extent must be >= 1");
    }
    let mut regions: Vec<usize> = space
        .hop_distances(center, extent - 1)
        .into_iter()
        .map(|(r, _)| r)
        .collect();
    regions.sort_unstable();
    Ok(RegionSet::from_sorted(regions))
}

/// Sensor-by-region gain matrix with unit-norm columns.
#[derive(Clone, Debug, PartialEq)]
pub struct LeadField {
    matrix: Tensor,
}

impl LeadField {
    pub fn from_matrix(matrix: Tensor) -> Result<Self> {
        if matrix.rank() != 2 {
            return Err(EsiError::Format(format!(
                "lead field must be rank 2, got dims {:?}",
                matrix.dims()
            )));
        }
        if !matrix.is_finite() {
            return Err(EsiError::Format("lead field has non-finite entries".into()));
        }
        for s in 0..matrix.cols() {
            if (0..matrix.rows()).all(|c| matrix.at(c, s) == 0.0) {
                return Err(EsiError::Format(format!(
                    "lead field column {s} is all zero"
                )));
            }
        }
        Ok(LeadField { matrix })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn n_channels(&self) -> usize {
        self.matrix.rows()
    }

    pub fn n_regions(&self) -> usize {
        self.matrix.cols()
    }

    pub fn column(&self, s: usize) -> Vec<f64> {
        (0..self.n_channels())
            .map(|c| self.matrix.at(c, s))
            .collect()
    }
}

/// Sensor positions used by [`build_lead_field`]: a Fibonacci lattice on the
/// 100 mm sphere, rotated by `seed`.
pub fn sensor_positions(n_channels: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e45_0a5e_45e4_50a5);
    let rot = random_rotation(&mut rng);
    fibonacci_sphere(n_channels, SENSOR_RADIUS_MM)
        .iter()
        .map(|p| rotate(&rot, p))
        .collect()
}

/// Dipole gain `o·(r_c - r_s) / |r_c - r_s|^3` for a near-radial unit
/// orientation `o` (radial plus seeded jitter), columns scaled to unit norm.
pub fn build_lead_field(space: &SourceSpace, n_channels: usize, seed: u64) -> Result<LeadField> {
    if n_channels < 2 {
        return param_err(format!("n_channels must be >= 2, got {n_channels}"));
    }
    let sensors = sensor_positions(n_channels, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_s = space.n_regions();
    let mut g = Tensor::zeros(&[n_channels, n_s]);
    for (s, c) in space.centroids.iter().enumerate() {
        let norm = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        let mut o = [0.0; 3];
        for k in 0..3 {
            let jitter: f64 = rng.sample(StandardNormal);
            o[k] = c[k] / norm + ORIENTATION_JITTER * jitter;
        }
        let on = (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt();
        o.iter_mut().for_each(|v| *v /= on);

        for (ch, p) in sensors.iter().enumerate() {
            let d = distance(p, c);
            if d < 1e-9 {
                return Err(EsiError::Construction(format!(
                    "sensor {ch} coincides with region {s}"
                )));
            }
            let proj = o[0] * (p[0] - c[0]) + o[1] * (p[1] - c[1]) + o[2] * (p[2] - c[2]);
            g.set(ch, s, proj / (d * d * d));
        }
        let col_norm = (0..n_channels)
            .map(|ch| g.at(ch, s).powi(2))
            .sum::<f64>()
            .sqrt();
        if col_norm == 0.0 || !col_norm.is_finite() {
            return Err(EsiError::Construction(format!(
                "region {s} is invisible to every sensor"
            )));
        }
        for ch in 0..n_channels {
            g.set(ch, s, g.at(ch, s) / col_norm);
        }
    }
    LeadField::from_matrix(g)
}

pub fn save_lead_field(lf: &LeadField, path: &Path) -> Result<()> {
    io::save_tensor(&lf.matrix, path)
}

pub fn load_lead_field(path: &Path) -> Result<LeadField> {
    LeadField::from_matrix(io::load_tensor(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ring(n: usize) -> SourceSpace {
        let centroids = (0..n)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / n as f64;
                [80.0 * a.cos(), 80.0 * a.sin(), 0.0]
            })
            .collect();
        let adjacency = (0..n).map(|i| {
            let mut v = vec![(i + n - 1) % n, (i + 1) % n];
            v.sort_unstable();
            v
        });
        SourceSpace::new(centroids, adjacency.collect()).unwrap()
    }

    /// Plain BFS over an explicit ring, independent of `hop_distances`.
    fn ring_ball(n: usize, c: usize, radius: usize) -> Vec<usize> {
        let mut out: Vec<usize> = (0..n)
            .filter(|&r| {
                let d = (r as isize - c as isize).unsigned_abs();
                d.min(n - d) <= radius
            })
            .collect();
        out.sort_unstable();
        out
    }

    #[test]
    fn small_space_is_symmetric_with_min_degree() {
        let s = build_synthetic_source_space(8, 2, 0).unwrap();
        assert_eq!(s.n_regions(), 8);
        for (a, nbrs) in s.adjacency.iter().enumerate() {
            assert!(nbrs.len() >= 2);
            for &b in nbrs {
                assert!(s.adjacency[b].contains(&a));
            }
        }
        for c in &s.centroids {
            let r = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
            assert!((r - SOURCE_RADIUS_MM).abs() < 1e-9);
        }
    }

    #[test]
    fn full_scale_region_count() {
        let s = build_synthetic_source_space(998, 6, 1).unwrap();
        assert_eq!(s.n_regions(), 998);
    }

    #[test]
    fn construction_is_deterministic() {
        let a = build_synthetic_source_space(64, 4, 7).unwrap();
        let b = build_synthetic_source_space(64, 4, 7).unwrap();
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
        let c = build_synthetic_source_space(64, 4, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_counts() {
        assert!(build_synthetic_source_space(7, 2, 0).is_err());
        assert!(build_synthetic_source_space(8, 0, 0).is_err());
        assert!(build_synthetic_source_space(8, 8, 0).is_err());
    }

    #[test]
    fn lead_field_shapes_and_norms() {
        let s = build_synthetic_source_space(8, 2, 0).unwrap();
        let lf = build_lead_field(&s, 4, 0).unwrap();
        assert_eq!(lf.matrix().dims(), &[4, 8]);
        for col in 0..8 {
            let n: f64 = lf.column(col).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
        assert_eq!(lf, build_lead_field(&s, 4, 0).unwrap());
        assert!(build_lead_field(&s, 1, 0).is_err());
    }

    #[test]
    fn full_scale_lead_field_shape() {
        let s = build_synthetic_source_space(998, 6, 1).unwrap();
        let lf = build_lead_field(&s, 306, 1).unwrap();
        assert_eq!(lf.matrix().dims(), &[306, 998]);
    }

    #[test]
    fn coincident_sensor_is_a_construction_error() {
        let sensors = sensor_positions(4, 3);
        let centroids: Vec<Point> = (0..8)
            .map(|i| {
                if i == 0 {
                    sensors[2]
                } else {
                    [0.0, 0.0, 10.0 + i as f64]
                }
            })
            .collect();
        let adjacency = (0..8).map(|i| vec![(i + 1) % 8, (i + 7) % 8]).collect();
        let mut space = SourceSpace {
            centroids,
            adjacency,
        };
        for v in &mut space.adjacency {
            v.sort_unstable();
        }
        assert!(matches!(
            build_lead_field(&space, 4, 3),
            Err(EsiError::Construction(_))
        ));
    }

    #[test]
    fn grow_patch_on_ring() {
        let s = ring(8);
        assert_eq!(grow_patch(&s, 3, 1).unwrap().regions(), &[3]);
        for c in 0..8 {
            for extent in 1..=5 {
                let got = grow_patch(&s, c, extent).unwrap();
                assert_eq!(got.regions(), ring_ball(8, c, extent - 1).as_slice());
            }
        }
        assert_eq!(grow_patch(&s, 0, 2).unwrap().regions(), &[0, 1, 7]);
        assert!(grow_patch(&s, 8, 1).is_err());
        assert!(grow_patch(&s, 0, 0).is_err());
    }

    #[test]
    fn lead_field_file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let s = build_synthetic_source_space(8, 2, 0).unwrap();
        let lf = build_lead_field(&s, 4, 0).unwrap();
        let path = dir.path().join("g.esit");
        save_lead_field(&lf, &path).unwrap();
        let back = load_lead_field(&path).unwrap();
        // f32 storage: saving the loaded field reproduces the file bit-for-bit
        let path2 = dir.path().join("g2.esit");
        save_lead_field(&back, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
        for (a, b) in back.matrix().data().iter().zip(lf.matrix().data()) {
            assert_eq!(*a, *b as f32 as f64);
        }

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[1] = b'Z';
        std::fs::write(&path2, &bytes).unwrap();
        assert!(matches!(load_lead_field(&path2), Err(EsiError::Format(_))));

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path2, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load_lead_field(&path2)
            .unwrap_err()
            .to_string()
            .contains("truncated"));
    }

    #[test]
    fn source_space_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = build_synthetic_source_space(16, 3, 2).unwrap();
        let p = dir.path().join("space.json");
        s.save_json(&p).unwrap();
        assert_eq!(SourceSpace::load_json(&p).unwrap(), s);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn growth_is_monotone(n in 8usize..80, k in 1usize..6, seed in 0u64..1000, c in 0usize..1000, e in 1usize..5) {
            let k = k.min(n - 1);
            let s = build_synthetic_source_space(n, k, seed).unwrap();
            let c = c % n;
            let small = grow_patch(&s, c, e).unwrap();
            let big = grow_patch(&s, c, e + 1).unwrap();
            prop_assert!(small.is_subset(&big));
            prop_assert!(small.len() <= big.len());
            prop_assert!(small.contains(c));
        }
    }
}
