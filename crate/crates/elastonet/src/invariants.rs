//! Implements symmetric second-order tensors, spectral decomposition, and
//! the invariant/pi-plane coordinate charts used by isotropic models.
//!
//! Conventions: tension and dilation are positive. Strain splits into the
//! volumetric invariant `eps_v = tr(eps)` and the deviatoric invariant
//! `eps_s = sqrt(2/3) ||e||` with `e = eps - (eps_v/3) 1`. The conjugate
//! stress invariants are the mean stress `p = tr(sigma)/3` and the
//! equivalent shear stress `q = sqrt(3/2) ||s||`. Principal stresses map to
//! pi-plane coordinates through the fixed rotation `sigma'' = Q^T sigma`
//! whose third axis is the hydrostatic direction; the polar pair
//! `(rho, theta)` with `rho = sqrt(s1''^2 + s2''^2) = sqrt(2 J2)` and
//! `theta = atan2(s2'', s1'') in [0, 2 pi)` is the Lode chart.

use thiserror::Error;

/// Relative tolerance below which the deviatoric radius is treated as zero
/// and the Lode angle is reported as undefined (hydrostatic axis)
pub const RHO_TOL: f64 = 1e-12;

/// Tolerance for unit-norm and traceless checks on deviatoric directions
pub const DIR_TOL: f64 = 1e-9;

/// Convergence tolerance of the Jacobi eigenvalue sweeps (relative to the
/// largest entry of the input tensor)
const JACOBI_TOL: f64 = 1e-15;

/// Maximum number of cyclic Jacobi sweeps (3x3 converges in a handful)
const MAX_JACOBI_SWEEPS: usize = 32;

/// Returns the fixed rotation from principal axes to the pi-plane frame:
/// columns are the two in-plane directions and the hydrostatic axis, so that
/// `sigma'' = Q^T sigma`
#[inline]
pub(crate) fn q_matrix() -> [[f64; 3]; 3] {
    let a = std::f64::consts::FRAC_1_SQRT_2;
    let b = 1.0 / 6.0_f64.sqrt();
    let c = 1.0 / 3.0_f64.sqrt();
    [[a, -b, c], [0.0, 2.0 * b, c], [-a, -b, c]]
}

/// Holds a symmetric second-order tensor in 3D through its six components
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SymTensor3 {
    pub xx: f64,
    pub yy: f64,
    pub zz: f64,
    pub xy: f64,
    pub yz: f64,
    pub xz: f64,
}

/// Holds the spectral decomposition of a symmetric tensor: eigenvalues in
/// descending order and matching unit eigenvectors (rows)
#[derive(Clone, Copy, Debug)]
pub struct SpectralDecomposition {
    pub values: [f64; 3],
    pub directions: [[f64; 3]; 3],
}

/// Holds the volumetric and deviatoric strain invariants
#[derive(Clone, Copy, Debug)]
pub struct StrainInvariants {
    pub eps_v: f64,
    pub eps_s: f64,
}

/// Holds the mean and equivalent shear stress invariants
#[derive(Clone, Copy, Debug)]
pub struct StressInvariants {
    pub p: f64,
    pub q: f64,
}

/// Holds polar coordinates on the pi-plane: deviatoric radius and Lode angle
#[derive(Clone, Copy, Debug)]
pub struct LodePoint {
    pub rho: f64,
    pub theta: f64,
}

/// Holds rotated (double-primed) coordinates: two in-plane components and
/// the hydrostatic height
#[derive(Clone, Copy, Debug)]
pub struct PiPlaneCoords {
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

/// Indicates an invalid invariant-chart operation
#[derive(Debug, Error)]
pub enum InvariantError {
    #[error("deviatoric radius {rho:.3e} is below tolerance {tol:.3e}: the Lode angle is undefined on the hydrostatic axis")]
    HydrostaticPoint { rho: f64, tol: f64 },
    #[error("deviatoric direction must be unit and traceless: norm = {norm}, trace = {trace}")]
    InvalidDirection { norm: f64, trace: f64 },
}

impl SymTensor3 {
    /// Returns a new tensor from its six independent components
    pub fn new(xx: f64, yy: f64, zz: f64, xy: f64, yz: f64, xz: f64) -> Self {
        SymTensor3 { xx, yy, zz, xy, yz, xz }
    }

    /// Returns the zero tensor
    pub fn zero() -> Self {
        SymTensor3::default()
    }

    /// Returns the identity tensor
    pub fn identity() -> Self {
        SymTensor3::new(1.0, 1.0, 1.0, 0.0, 0.0, 0.0)
    }

    /// Returns a diagonal tensor from its principal values on fixed axes
    pub fn diagonal(a: f64, b: f64, c: f64) -> Self {
        SymTensor3::new(a, b, c, 0.0, 0.0, 0.0)
    }

    /// Calculates the trace
    pub fn trace(&self) -> f64 {
        self.xx + self.yy + self.zz
    }

    /// Returns the deviatoric part
    pub fn dev(&self) -> Self {
        let m = self.trace() / 3.0;
        SymTensor3::new(self.xx - m, self.yy - m, self.zz - m, self.xy, self.yz, self.xz)
    }

    /// Calculates the double contraction with another tensor
    pub fn dot(&self, other: &SymTensor3) -> f64 {
        self.xx * other.xx
            + self.yy * other.yy
            + self.zz * other.zz
            + 2.0 * (self.xy * other.xy + self.yz * other.yz + self.xz * other.xz)
    }

    /// Calculates the Frobenius norm
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Calculates the determinant
    pub fn det(&self) -> f64 {
        self.xx * (self.yy * self.zz - self.yz * self.yz)
            - self.xy * (self.xy * self.zz - self.yz * self.xz)
            + self.xz * (self.xy * self.yz - self.yy * self.xz)
    }

    /// Returns the sum with another tensor
    pub fn add(&self, other: &SymTensor3) -> Self {
        SymTensor3::new(
            self.xx + other.xx,
            self.yy + other.yy,
            self.zz + other.zz,
            self.xy + other.xy,
            self.yz + other.yz,
            self.xz + other.xz,
        )
    }

    /// Returns the difference with another tensor
    pub fn sub(&self, other: &SymTensor3) -> Self {
        self.add(&other.scale(-1.0))
    }

    /// Returns the tensor scaled by a factor
    pub fn scale(&self, factor: f64) -> Self {
        SymTensor3::new(
            factor * self.xx,
            factor * self.yy,
            factor * self.zz,
            factor * self.xy,
            factor * self.yz,
            factor * self.xz,
        )
    }

    /// Returns the six components as an array (xx, yy, zz, xy, yz, xz)
    pub fn as_array(&self) -> [f64; 6] {
        [self.xx, self.yy, self.zz, self.xy, self.yz, self.xz]
    }

    /// Returns a tensor from a component array (xx, yy, zz, xy, yz, xz)
    pub fn from_array(a: [f64; 6]) -> Self {
        SymTensor3::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    /// Returns the full 3x3 matrix representation
    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        [
            [self.xx, self.xy, self.xz],
            [self.xy, self.yy, self.yz],
            [self.xz, self.yz, self.zz],
        ]
    }

    /// Assembles a tensor from principal values and unit directions (rows)
    pub fn from_principal(values: [f64; 3], directions: &[[f64; 3]; 3]) -> Self {
        let mut m = [[0.0; 3]; 3];
        for a in 0..3 {
            let n = directions[a];
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += values[a] * n[i] * n[j];
                }
            }
        }
        SymTensor3::new(m[0][0], m[1][1], m[2][2], m[0][1], m[1][2], m[0][2])
    }
}

/// Calculates eigenvalues and eigenvectors of a symmetric 3x3 matrix with
/// cyclic Jacobi rotations (deterministic sweep order)
fn eig_sym3(m: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut a = m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let scale = m
        .iter()
        .flatten()
        .fold(0.0_f64, |acc, x| acc.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    for _ in 0..MAX_JACOBI_SWEEPS {
        let off = (a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2]).sqrt();
        if off <= JACOBI_TOL * scale {
            break;
        }
        for &(p, q) in &[(0_usize, 1_usize), (0, 2), (1, 2)] {
            let apq = a[p][q];
            if apq == 0.0 {
                continue;
            }
            // rotation angle that annihilates the (p, q) entry
            let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let tau = s / (1.0 + c);
            let r = 3 - p - q;
            let (app, aqq) = (a[p][p], a[q][q]);
            a[p][p] = app - t * apq;
            a[q][q] = aqq + t * apq;
            a[p][q] = 0.0;
            a[q][p] = 0.0;
            let (arp, arq) = (a[r][p], a[r][q]);
            a[r][p] = arp - s * (arq + tau * arp);
            a[p][r] = a[r][p];
            a[r][q] = arq + s * (arp - tau * arq);
            a[q][r] = a[r][q];
            for row in v.iter_mut() {
                let (vp, vq) = (row[p], row[q]);
                row[p] = vp - s * (vq + tau * vp);
                row[q] = vq + s * (vp - tau * vq);
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2]], v)
}

/// Calculates the spectral decomposition with eigenvalues sorted in
/// descending order and a fixed eigenvector sign convention (the component
/// of largest magnitude is positive)
pub fn spectral_decompose(t: &SymTensor3) -> SpectralDecomposition {
    let (vals, vecs) = eig_sym3(t.to_matrix());
    let mut order = [0_usize, 1, 2];
    // stable selection sort, descending
    for i in 0..2 {
        let mut best = i;
        for j in (i + 1)..3 {
            if vals[order[j]] > vals[order[best]] {
                best = j;
            }
        }
        order.swap(i, best);
    }
    let mut values = [0.0; 3];
    let mut directions = [[0.0; 3]; 3];
    for (slot, &col) in order.iter().enumerate() {
        values[slot] = vals[col];
        let mut n = [vecs[0][col], vecs[1][col], vecs[2][col]];
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        let mut largest = 0;
        for k in 1..3 {
            if n[k].abs() > n[largest].abs() {
                largest = k;
            }
        }
        let sign = if n[largest] < 0.0 { -1.0 } else { 1.0 };
        for comp in n.iter_mut() {
            *comp *= sign / len;
        }
        directions[slot] = n;
    }
    SpectralDecomposition { values, directions }
}

/// Calculates the volumetric and deviatoric strain invariants
pub fn strain_invariants(eps: &SymTensor3) -> StrainInvariants {
    let eps_v = eps.trace();
    let eps_s = (2.0 / 3.0_f64).sqrt() * eps.dev().norm();
    StrainInvariants { eps_v, eps_s }
}

/// Calculates the mean and equivalent shear stress invariants
pub fn stress_invariants(sig: &SymTensor3) -> StressInvariants {
    let p = sig.trace() / 3.0;
    let q = (3.0 / 2.0_f64).sqrt() * sig.dev().norm();
    StressInvariants { p, q }
}

/// Calculates the second and third deviatoric invariants (J2, J3) from
/// principal values
pub fn deviatoric_invariants(principal: [f64; 3]) -> (f64, f64) {
    let m = (principal[0] + principal[1] + principal[2]) / 3.0;
    let s = [principal[0] - m, principal[1] - m, principal[2] - m];
    let j2 = 0.5 * (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]);
    let j3 = s[0] * s[1] * s[2];
    (j2, j3)
}

/// Rotates principal values into the pi-plane frame (sigma'' = Q^T sigma)
pub fn principal_to_pi_plane(principal: [f64; 3]) -> PiPlaneCoords {
    let q = q_matrix();
    let mut s = [0.0; 3];
    for (j, out) in s.iter_mut().enumerate() {
        *out = q[0][j] * principal[0] + q[1][j] * principal[1] + q[2][j] * principal[2];
    }
    PiPlaneCoords { s1: s[0], s2: s[1], s3: s[2] }
}

/// Rotates pi-plane coordinates back to principal values (sigma = Q sigma'')
pub fn principal_from_pi_plane(coords: &PiPlaneCoords) -> [f64; 3] {
    let q = q_matrix();
    let s = [coords.s1, coords.s2, coords.s3];
    let mut p = [0.0; 3];
    for (i, out) in p.iter_mut().enumerate() {
        *out = q[i][0] * s[0] + q[i][1] * s[1] + q[i][2] * s[2];
    }
    p
}

/// Calculates the polar Lode chart from principal values; fails on the
/// hydrostatic axis where the angle is undefined
pub fn lode_from_principal(principal: [f64; 3]) -> Result<LodePoint, InvariantError> {
    let pi = principal_to_pi_plane(principal);
    let rho = pi.s1.hypot(pi.s2);
    let norm = (principal[0] * principal[0]
        + principal[1] * principal[1]
        + principal[2] * principal[2])
        .sqrt();
    let tol = RHO_TOL * (1.0 + norm);
    if rho < tol {
        return Err(InvariantError::HydrostaticPoint { rho, tol });
    }
    let mut theta = pi.s2.atan2(pi.s1);
    if theta < 0.0 {
        theta += 2.0 * std::f64::consts::PI;
    }
    if theta >= 2.0 * std::f64::consts::PI {
        theta = 0.0;
    }
    Ok(LodePoint { rho, theta })
}

/// Converts a Lode point and hydrostatic height to pi-plane coordinates
pub fn pi_plane_from_lode(lode: &LodePoint, s3: f64) -> PiPlaneCoords {
    PiPlaneCoords {
        s1: lode.rho * lode.theta.cos(),
        s2: lode.rho * lode.theta.sin(),
        s3,
    }
}

/// Assembles a stress tensor from invariants and a unit deviatoric
/// direction: sigma = p 1 + sqrt(2/3) q n
pub fn stress_from_invariants(
    p: f64,
    q: f64,
    dir: &SymTensor3,
) -> Result<SymTensor3, InvariantError> {
    if q != 0.0 {
        let norm = dir.norm();
        let trace = dir.trace();
        if (norm - 1.0).abs() > DIR_TOL || trace.abs() > DIR_TOL {
            return Err(InvariantError::InvalidDirection { norm, trace });
        }
    }
    let iso = SymTensor3::identity().scale(p);
    Ok(iso.add(&dir.scale((2.0 / 3.0_f64).sqrt() * q)))
}

////////////////////////////////////////////////////////////////////////////////
