//! Implements the level-set representation of yield surfaces on the
//! pi-plane: sampled surface snapshots, signed distances to densified
//! boundary polylines, polar-grid distance fields with fast-marching
//! reinitialization, and the sampling conventions of level-set training
//! sets (auxiliary radii along rays and hardening velocities between
//! consecutive snapshots).
//!
//! Signs follow the yield-function convention: positive outside the
//! surface, negative inside, zero on the boundary. All surfaces are
//! star-shaped with respect to the origin, which both the inside test and
//! the polar parametrization rely on.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::TAU;

/// Number of interpolated boundary points used when a snapshot polyline is
/// densified for distance queries
pub const DENSIFY_POINTS: usize = 4096;

/// Default radial resolution of a polar distance field
pub const DEFAULT_N_RHO: usize = 128;

/// Default angular resolution of a polar distance field
pub const DEFAULT_N_THETA: usize = 256;

/// Number of auxiliary sample radii per ray in a level-set training set
pub const AUX_POINTS_PER_RAY: usize = 14;

/// Holds one sampled yield surface: the hardening level and the boundary
/// radius at strictly increasing angles in [0, 2 pi)
#[derive(Clone, Debug)]
pub struct YieldSurfaceSnapshot {
    pub xi: f64,
    pub points: Vec<(f64, f64)>,
}

impl YieldSurfaceSnapshot {
    /// Samples a radius function at n uniform angles
    pub fn from_radius_fn(xi: f64, n: usize, radius: impl Fn(f64) -> f64) -> Self {
        assert!(n >= 3, "a closed surface needs at least three samples");
        let points = (0..n)
            .map(|k| {
                let theta = TAU * k as f64 / n as f64;
                (theta, radius(theta))
            })
            .collect();
        YieldSurfaceSnapshot { xi, points }
    }

    /// Returns the boundary radius at an angle by periodic linear
    /// interpolation
    pub fn radius_at(&self, theta: f64) -> f64 {
        let t = theta.rem_euclid(TAU);
        let pts = &self.points;
        let n = pts.len();
        // find the segment [k, k+1) containing t
        let k = match pts.binary_search_by(|p| p.0.partial_cmp(&t).unwrap()) {
            Ok(exact) => return pts[exact].1,
            Err(0) => n - 1, // before the first sample: wrap segment
            Err(after) => after - 1,
        };
        let (t0, r0) = pts[k];
        let (t1, r1) = if k + 1 < n { pts[k + 1] } else { (pts[0].0 + TAU, pts[0].1) };
        let mut t_local = t;
        if t_local < t0 {
            t_local += TAU;
        }
        let w = (t_local - t0) / (t1 - t0);
        r0 + w * (r1 - r0)
    }

    /// Returns the mean boundary radius over the samples
    pub fn mean_radius(&self) -> f64 {
        self.points.iter().map(|p| p.1).sum::<f64>() / self.points.len() as f64
    }

    /// Returns the largest sampled boundary radius
    pub fn max_radius(&self) -> f64 {
        self.points.iter().map(|p| p.1).fold(0.0, f64::max)
    }
}

/// Holds a densified closed boundary polyline for exact point-to-segment
/// distance queries, together with the snapshot for the star-shaped
/// inside test
#[derive(Clone, Debug)]
pub struct BoundaryPolyline {
    snapshot: YieldSurfaceSnapshot,
    vertices: Vec<(f64, f64)>,
}

impl BoundaryPolyline {
    /// Densifies a snapshot to n interpolated boundary vertices
    pub fn from_snapshot(snapshot: &YieldSurfaceSnapshot, n: usize) -> Self {
        let vertices = (0..n)
            .map(|k| {
                let theta = TAU * k as f64 / n as f64;
                let r = snapshot.radius_at(theta);
                (r * theta.cos(), r * theta.sin())
            })
            .collect();
        BoundaryPolyline { snapshot: snapshot.clone(), vertices }
    }

    /// Calculates the signed distance of a polar point to the boundary:
    /// positive outside, negative inside
    pub fn signed_distance(&self, rho: f64, theta: f64) -> f64 {
        let (px, py) = (rho * theta.cos(), rho * theta.sin());
        let n = self.vertices.len();
        let mut best = f64::INFINITY;
        for k in 0..n {
            let a = self.vertices[k];
            let b = self.vertices[(k + 1) % n];
            best = best.min(point_segment_distance(px, py, a, b));
        }
        if rho < self.snapshot.radius_at(theta) {
            -best
        } else {
            best
        }
    }
}

/// Returns the Euclidean distance from a point to a segment
fn point_segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let (apx, apy) = (px - a.0, py - a.1);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 { ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (cx, cy) = (a.0 + t * abx, a.1 + t * aby);
    (px - cx).hypot(py - cy)
}

/// Convenience wrapper: densifies the snapshot and returns one signed
/// distance
pub fn signed_distance(snapshot: &YieldSurfaceSnapshot, rho: f64, theta: f64) -> f64 {
    BoundaryPolyline::from_snapshot(snapshot, DENSIFY_POINTS).signed_distance(rho, theta)
}

/// Holds a field on a polar grid: radii (i+1) h_rho for i < n_rho (the
/// origin is excluded) and angles j h_theta for j < n_theta (periodic)
#[derive(Clone, Debug)]
pub struct SignedDistanceField {
    pub n_rho: usize,
    pub n_theta: usize,
    pub rho_max: f64,
    pub values: Vec<f64>,
}

impl SignedDistanceField {
    /// Evaluates a function of (rho, theta) at every grid node
    pub fn from_fn(
        n_rho: usize,
        n_theta: usize,
        rho_max: f64,
        f: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let h_rho = rho_max / n_rho as f64;
        let h_theta = TAU / n_theta as f64;
        let mut values = Vec::with_capacity(n_rho * n_theta);
        for i in 0..n_rho {
            let rho = (i + 1) as f64 * h_rho;
            for j in 0..n_theta {
                values.push(f(rho, j as f64 * h_theta));
            }
        }
        SignedDistanceField { n_rho, n_theta, rho_max, values }
    }

    /// Returns the radial grid spacing
    pub fn h_rho(&self) -> f64 {
        self.rho_max / self.n_rho as f64
    }

    /// Returns the angular grid spacing
    pub fn h_theta(&self) -> f64 {
        TAU / self.n_theta as f64
    }

    /// Returns the radius of grid row i
    pub fn rho_at(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.h_rho()
    }

    /// Returns the angle of grid column j
    pub fn theta_at(&self, j: usize) -> f64 {
        j as f64 * self.h_theta()
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.n_theta + j
    }

    /// Interpolates the field bilinearly; the radius is clamped to the grid
    /// range and the angle wraps
    pub fn sample(&self, rho: f64, theta: f64) -> f64 {
        let (i, j, wr, wt) = self.locate(rho, theta);
        let jn = (j + 1) % self.n_theta;
        let v00 = self.values[self.idx(i, j)];
        let v01 = self.values[self.idx(i, jn)];
        let v10 = self.values[self.idx(i + 1, j)];
        let v11 = self.values[self.idx(i + 1, jn)];
        (1.0 - wr) * ((1.0 - wt) * v00 + wt * v01) + wr * ((1.0 - wt) * v10 + wt * v11)
    }

    /// Interpolates the polar gradient (d phi / d rho, (1/rho) d phi /
    /// d theta) bilinearly from central-difference node gradients
    pub fn gradient(&self, rho: f64, theta: f64) -> (f64, f64) {
        let (i, j, wr, wt) = self.locate(rho, theta);
        let jn = (j + 1) % self.n_theta;
        let g00 = self.node_gradient(i, j);
        let g01 = self.node_gradient(i, jn);
        let g10 = self.node_gradient(i + 1, j);
        let g11 = self.node_gradient(i + 1, jn);
        let mix = |a: f64, b: f64, c: f64, d: f64| {
            (1.0 - wr) * ((1.0 - wt) * a + wt * b) + wr * ((1.0 - wt) * c + wt * d)
        };
        (mix(g00.0, g01.0, g10.0, g11.0), mix(g00.1, g01.1, g10.1, g11.1))
    }

    /// Returns the cell and interpolation weights of a polar point
    fn locate(&self, rho: f64, theta: f64) -> (usize, usize, f64, f64) {
        let h_rho = self.h_rho();
        let r = (rho / h_rho - 1.0).clamp(0.0, (self.n_rho - 1) as f64 - 1e-12);
        let i = (r.floor() as usize).min(self.n_rho - 2);
        let wr = r - i as f64;
        let t = theta.rem_euclid(TAU) / self.h_theta();
        let j = (t.floor() as usize).min(self.n_theta - 1);
        let wt = t - j as f64;
        (i, j, wr, wt)
    }

    /// Returns the central-difference polar gradient at a node (one-sided
    /// at the radial edges, periodic in the angle)
    pub fn node_gradient(&self, i: usize, j: usize) -> (f64, f64) {
        let h_rho = self.h_rho();
        let g_rho = if i == 0 {
            (self.values[self.idx(1, j)] - self.values[self.idx(0, j)]) / h_rho
        } else if i == self.n_rho - 1 {
            (self.values[self.idx(i, j)] - self.values[self.idx(i - 1, j)]) / h_rho
        } else {
            (self.values[self.idx(i + 1, j)] - self.values[self.idx(i - 1, j)]) / (2.0 * h_rho)
        };
        let jp = (j + 1) % self.n_theta;
        let jm = (j + self.n_theta - 1) % self.n_theta;
        let g_theta = (self.values[self.idx(i, jp)] - self.values[self.idx(i, jm)])
            / (2.0 * self.rho_at(i) * self.h_theta());
        (g_rho, g_theta)
    }

    /// Calculates the median of | |grad phi| - 1 | over the interior nodes
    /// by central differences (the radial edge rows are excluded)
    pub fn median_eikonal_residual(&self) -> f64 {
        let mut residuals = Vec::with_capacity((self.n_rho - 2) * self.n_theta);
        for i in 1..self.n_rho - 1 {
            for j in 0..self.n_theta {
                let (gr, gt) = self.node_gradient(i, j);
                residuals.push((gr.hypot(gt) - 1.0).abs());
            }
        }
        residuals.sort_by(|a, b| a.total_cmp(b));
        residuals[residuals.len() / 2]
    }

    /// Reinitializes the field to a signed distance function of its own
    /// zero level set by fast marching: the interface band is seeded from
    /// linear interpolation along sign-change edges, then the positive and
    /// negative sides are marched separately with an upwind quadratic
    /// update on the polar grid (radial spacing h_rho, angular spacing
    /// rho h_theta)
    pub fn fast_march_reinitialize(&self) -> SignedDistanceField {
        let n = self.n_rho * self.n_theta;
        let mut dist = vec![f64::INFINITY; n];
        let mut band = vec![false; n];
        let h_rho = self.h_rho();
        let h_theta = self.h_theta();
        // seed the interface band
        for i in 0..self.n_rho {
            let arc = self.rho_at(i) * h_theta;
            for j in 0..self.n_theta {
                let here = self.values[self.idx(i, j)];
                if here == 0.0 {
                    dist[self.idx(i, j)] = 0.0;
                    band[self.idx(i, j)] = true;
                    continue;
                }
                let mut d_r = f64::INFINITY;
                let mut d_t = f64::INFINITY;
                for ni in [i.wrapping_sub(1), i + 1] {
                    if ni >= self.n_rho {
                        continue;
                    }
                    let other = self.values[self.idx(ni, j)];
                    if here.signum() != other.signum() {
                        d_r = d_r.min(h_rho * here.abs() / (here.abs() + other.abs()));
                    }
                }
                for nj in [(j + self.n_theta - 1) % self.n_theta, (j + 1) % self.n_theta] {
                    let other = self.values[self.idx(i, nj)];
                    if here.signum() != other.signum() {
                        d_t = d_t.min(arc * here.abs() / (here.abs() + other.abs()));
                    }
                }
                let d = if d_r.is_finite() && d_t.is_finite() {
                    d_r * d_t / d_r.hypot(d_t)
                } else {
                    d_r.min(d_t)
                };
                if d.is_finite() {
                    dist[self.idx(i, j)] = d;
                    band[self.idx(i, j)] = true;
                }
            }
        }
        // march each side of the interface
        self.march_side(&mut dist, &band, 1.0);
        self.march_side(&mut dist, &band, -1.0);
        let values = (0..n)
            .map(|k| if self.values[k] < 0.0 { -dist[k] } else { dist[k] })
            .collect();
        SignedDistanceField {
            n_rho: self.n_rho,
            n_theta: self.n_theta,
            rho_max: self.rho_max,
            values,
        }
    }

    /// Marches the unsigned distance over the nodes whose original value
    /// has the given sign, starting from the accepted interface band
    fn march_side(&self, dist: &mut [f64], band: &[bool], side: f64) {
        let in_side =
            |k: usize| !band[k] && self.values[k] != 0.0 && self.values[k].signum() == side;
        let mut accepted = vec![false; dist.len()];
        let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::new();
        // band nodes are sources
        for k in 0..dist.len() {
            if band[k] {
                accepted[k] = true;
            }
        }
        // seed the trial set
        for i in 0..self.n_rho {
            for j in 0..self.n_theta {
                let k = self.idx(i, j);
                if in_side(k) && self.has_accepted_neighbor(&accepted, i, j) {
                    let u = self.upwind_update(dist, &accepted, i, j);
                    if u < dist[k] {
                        dist[k] = u;
                        heap.push(HeapEntry { dist: u, index: k });
                    }
                }
            }
        }
        while let Some(entry) = heap.pop() {
            let k = entry.index;
            if accepted[k] || entry.dist > dist[k] {
                continue; // stale entry
            }
            accepted[k] = true;
            let (i, j) = (k / self.n_theta, k % self.n_theta);
            for (ni, nj) in self.neighbors(i, j) {
                let nk = self.idx(ni, nj);
                if !in_side(nk) || accepted[nk] {
                    continue;
                }
                let u = self.upwind_update(dist, &accepted, ni, nj);
                if u < dist[nk] {
                    dist[nk] = u;
                    heap.push(HeapEntry { dist: u, index: nk });
                }
            }
        }
    }

    fn neighbors(&self, i: usize, j: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(4);
        if i > 0 {
            out.push((i - 1, j));
        }
        if i + 1 < self.n_rho {
            out.push((i + 1, j));
        }
        out.push((i, (j + 1) % self.n_theta));
        out.push((i, (j + self.n_theta - 1) % self.n_theta));
        out
    }

    fn has_accepted_neighbor(&self, accepted: &[bool], i: usize, j: usize) -> bool {
        self.neighbors(i, j).into_iter().any(|(ni, nj)| accepted[self.idx(ni, nj)])
    }

    /// Solves the upwind quadratic | grad u | = 1 at a node from its
    /// accepted neighbors
    fn upwind_update(&self, dist: &[f64], accepted: &[bool], i: usize, j: usize) -> f64 {
        let h_a = self.h_rho();
        let h_b = self.rho_at(i) * self.h_theta();
        let mut a = f64::INFINITY;
        for ni in [i.wrapping_sub(1), i + 1] {
            if ni < self.n_rho && accepted[self.idx(ni, j)] {
                a = a.min(dist[self.idx(ni, j)]);
            }
        }
        let mut b = f64::INFINITY;
        for nj in [(j + self.n_theta - 1) % self.n_theta, (j + 1) % self.n_theta] {
            if accepted[self.idx(i, nj)] {
                b = b.min(dist[self.idx(i, nj)]);
            }
        }
        if a.is_finite() && b.is_finite() {
            // (u-a)^2/h_a^2 + (u-b)^2/h_b^2 = 1
            let (ia, ib) = (1.0 / (h_a * h_a), 1.0 / (h_b * h_b));
            let s = a * ia + b * ib;
            let q = ia + ib;
            let disc = s * s - q * (a * a * ia + b * b * ib - 1.0);
            if disc >= 0.0 {
                let u = (s + disc.sqrt()) / q;
                if u >= a.max(b) {
                    return u;
                }
            }
            (a + h_a).min(b + h_b)
        } else if a.is_finite() {
            a + h_a
        } else if b.is_finite() {
            b + h_b
        } else {
            f64::INFINITY
        }
    }
}

/// Min-heap entry ordered by distance with the node index as a
/// deterministic tie breaker
struct HeapEntry {
    dist: f64,
    index: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed so the binary max-heap pops the smallest distance first
        other.dist.total_cmp(&self.dist).then_with(|| other.index.cmp(&self.index))
    }
}

/// Returns the auxiliary sample radii of one ray: uniform on
/// (0, 2 rho_outer] so that the 7th of the 14 radii is exactly the
/// boundary radius rho_outer and the last is twice it
pub fn auxiliary_radii(rho_outer: f64) -> Vec<f64> {
    (1..=AUX_POINTS_PER_RAY)
        .map(|j| j as f64 / AUX_POINTS_PER_RAY as f64 * 2.0 * rho_outer)
        .collect()
}

/// Returns the outward hardening velocity between two snapshots from the
/// signed distances of one fixed point: positive when the surface expands
/// toward the point as xi grows
pub fn hardening_velocity(phi_a: f64, phi_b: f64, xi_a: f64, xi_b: f64) -> f64 {
    (phi_a - phi_b) / (xi_b - xi_a)
}

////////////////////////////////////////////////////////////////////////////////
