//! Implements closed-form reference materials: linear isotropic elasticity,
//! a modified Cam-Clay hyperelastic energy, J2 plasticity with linear
//! hardening (including its radial-return solution), fictitious nonlinear
//! laws for stress-testing, analytic hardening transforms of the Lode
//! radius, and a synthetic hexagonal-to-circular yield surface.
//!
//! Everything here has hand-derivable derivatives, so these materials act as
//! oracles for the trained networks and for the implicit return mapping.
//! Energies are functions of the strain invariants `(eps_v, eps_s)`;
//! stresses are `p = d psi / d eps_v` and `q = d psi / d eps_s`. Units are
//! kPa throughout.

use crate::autodiff::{Graph, NodeId};
use crate::invariants::{strain_invariants, StrainInvariants, SymTensor3};
use thiserror::Error;

/// Number of quadrature points used to normalize the synthetic surface
/// gauge to unit mean radius (fixed so results are reproducible)
const GAUGE_QUADRATURE_POINTS: usize = 2048;

/// Indicates an invalid material-law evaluation
#[derive(Debug, Error)]
pub enum MatError {
    #[error("fictitious hardening transform saturates at eps_bar_p = 1: got {eps_bar_p}")]
    FictitiousSaturated { eps_bar_p: f64 },
    #[error("radial return requires a non-negative trial shear stress: got {q_trial}")]
    NegativeTrialShear { q_trial: f64 },
}

/// Holds Young's modulus and Poisson's ratio of linear isotropic elasticity
#[derive(Clone, Copy, Debug)]
pub struct LinearElasticParams {
    pub young: f64,
    pub poisson: f64,
}

impl LinearElasticParams {
    /// Calculates the bulk modulus K = E / (3 (1 - 2 nu))
    pub fn bulk(&self) -> f64 {
        self.young / (3.0 * (1.0 - 2.0 * self.poisson))
    }

    /// Calculates the shear modulus G = E / (2 (1 + nu))
    pub fn shear(&self) -> f64 {
        self.young / (2.0 * (1.0 + self.poisson))
    }
}

/// Holds an energy value with its first and second invariant derivatives
#[derive(Clone, Copy, Debug, Default)]
pub struct EnergyEval {
    pub psi: f64,
    pub p: f64,
    pub q: f64,
    pub d_vv: f64,
    pub d_ss: f64,
    pub d_vs: f64,
}

/// Calculates the linear elastic energy psi = K eps_v^2 / 2 + 3 G eps_s^2 / 2
/// and its derivatives
pub fn linear_elastic_eval(inv: &StrainInvariants, par: &LinearElasticParams) -> EnergyEval {
    let (k, g) = (par.bulk(), par.shear());
    EnergyEval {
        psi: 0.5 * k * inv.eps_v * inv.eps_v + 1.5 * g * inv.eps_s * inv.eps_s,
        p: k * inv.eps_v,
        q: 3.0 * g * inv.eps_s,
        d_vv: k,
        d_ss: 3.0 * g,
        d_vs: 0.0,
    }
}

/// Holds the modified Cam-Clay hyperelastic parameters: reference mean
/// stress and volumetric strain, shear multiplier, and the elastic
/// compressibility index
#[derive(Clone, Copy, Debug)]
pub struct MccParams {
    pub p0: f64,
    pub eps_v0: f64,
    pub c_mu: f64,
    pub xi_c: f64,
}

impl MccParams {
    /// Returns the benchmark parameter set (kPa units)
    pub fn benchmark() -> Self {
        MccParams { p0: -100.0, eps_v0: 0.0, c_mu: 5.4, xi_c: 0.018 }
    }
}

/// Calculates the modified Cam-Clay energy
/// psi = -p0 xi_c ex - (3/2) c_mu p0 ex eps_s^2 with
/// ex = exp((eps_v0 - eps_v) / xi_c), and its derivatives
pub fn mcc_eval(inv: &StrainInvariants, par: &MccParams) -> EnergyEval {
    let ex = ((par.eps_v0 - inv.eps_v) / par.xi_c).exp();
    let es2 = inv.eps_s * inv.eps_s;
    let shear_factor = 1.5 * par.c_mu * par.p0;
    EnergyEval {
        psi: -par.p0 * par.xi_c * ex - shear_factor * ex * es2,
        p: par.p0 * (1.0 + 1.5 * par.c_mu / par.xi_c * es2) * ex,
        q: -3.0 * par.c_mu * par.p0 * ex * inv.eps_s,
        d_vv: -par.p0 / par.xi_c * (1.0 + 1.5 * par.c_mu / par.xi_c * es2) * ex,
        d_ss: -3.0 * par.c_mu * par.p0 * ex,
        d_vs: 3.0 * par.p0 * par.c_mu / par.xi_c * ex * inv.eps_s,
    }
}

/// Builds the modified Cam-Clay energy as an expression graph with two
/// leaves (eps_v, eps_s); used to cross-check the closed-form derivatives
pub fn mcc_graph(par: &MccParams) -> (Graph, NodeId) {
    let mut g = Graph::new();
    let eps_v = g.leaf();
    let eps_s = g.leaf();
    let eps_v0 = g.constant(par.eps_v0);
    let inv_xi = g.constant(1.0 / par.xi_c);
    let diff = g.sub(eps_v0, eps_v);
    let arg = g.mul(diff, inv_xi);
    let ex = g.exp(arg);
    let c1 = g.constant(-par.p0 * par.xi_c);
    let volumetric = g.mul(c1, ex);
    let c2 = g.constant(-1.5 * par.c_mu * par.p0);
    let es2 = g.square(eps_s);
    let exs = g.mul(ex, es2);
    let shear = g.mul(c2, exs);
    let psi = g.add(volumetric, shear);
    (g, psi)
}

/// Calculates the fictitious nonlinear energy
/// psi = K eps_v^2 / 2 + (3/2) G eps_s^4 and its derivatives (its shear
/// stiffness vanishes at eps_s = 0, which stresses the solvers)
pub fn fictitious_eval(inv: &StrainInvariants, par: &LinearElasticParams) -> EnergyEval {
    let (k, g) = (par.bulk(), par.shear());
    let es = inv.eps_s;
    EnergyEval {
        psi: 0.5 * k * inv.eps_v * inv.eps_v + 1.5 * g * es.powi(4),
        p: k * inv.eps_v,
        q: 6.0 * g * es.powi(3),
        d_vv: k,
        d_ss: 18.0 * g * es * es,
        d_vs: 0.0,
    }
}

/// Holds the J2 parameters: initial uniaxial yield stress and linear
/// hardening modulus (in terms of the equivalent plastic strain)
#[derive(Clone, Copy, Debug)]
pub struct J2Params {
    pub sigma_y0: f64,
    pub hardening: f64,
}

impl J2Params {
    /// Calculates the uniaxial yield stress at the given equivalent plastic
    /// strain
    pub fn yield_stress(&self, eps_bar_p: f64) -> f64 {
        self.sigma_y0 + self.hardening * eps_bar_p
    }
}

/// Holds the outcome of the closed-form radial return
#[derive(Clone, Copy, Debug)]
pub struct RadialReturn {
    pub q: f64,
    pub delta_gamma: f64,
    pub eps_bar_p: f64,
    pub yielded: bool,
}

/// Calculates the closed-form J2 radial return for a trial equivalent shear
/// stress: delta_gamma = (q_trial - sigma_y) / (3 G + H) when yielding
pub fn j2_radial_return_oracle(
    q_trial: f64,
    eps_bar_p: f64,
    elastic: &LinearElasticParams,
    par: &J2Params,
) -> Result<RadialReturn, MatError> {
    if q_trial < 0.0 {
        return Err(MatError::NegativeTrialShear { q_trial });
    }
    let sigma_y = par.yield_stress(eps_bar_p);
    if q_trial <= sigma_y {
        return Ok(RadialReturn { q: q_trial, delta_gamma: 0.0, eps_bar_p, yielded: false });
    }
    let g = elastic.shear();
    let delta_gamma = (q_trial - sigma_y) / (3.0 * g + par.hardening);
    Ok(RadialReturn {
        q: q_trial - 3.0 * g * delta_gamma,
        delta_gamma,
        eps_bar_p: eps_bar_p + delta_gamma,
        yielded: true,
    })
}

/// Holds the oracle state for closed-form J2 stress paths
#[derive(Clone, Copy, Debug)]
pub struct J2OracleState {
    pub eps_e: SymTensor3,
    pub eps_bar_p: f64,
}

impl J2OracleState {
    /// Returns the initial (stress-free) state
    pub fn initial() -> Self {
        J2OracleState { eps_e: SymTensor3::zero(), eps_bar_p: 0.0 }
    }
}

/// Advances the J2 oracle by one strain increment, returning the new state
/// and the updated stress tensor
pub fn j2_oracle_step(
    state: &J2OracleState,
    deps: &SymTensor3,
    elastic: &LinearElasticParams,
    par: &J2Params,
) -> Result<(J2OracleState, SymTensor3), MatError> {
    let (k, g) = (elastic.bulk(), elastic.shear());
    let eps_tr = state.eps_e.add(deps);
    let inv = strain_invariants(&eps_tr);
    let q_trial = 3.0 * g * inv.eps_s;
    let ret = j2_radial_return_oracle(q_trial, state.eps_bar_p, elastic, par)?;
    let dev = eps_tr.dev();
    let eps_e = if ret.yielded {
        // scale the elastic deviator radially so that q = 3 G eps_s matches
        let scale = ret.q / q_trial;
        dev.scale(scale).add(&SymTensor3::identity().scale(inv.eps_v / 3.0))
    } else {
        eps_tr
    };
    let stress = SymTensor3::identity().scale(k * inv.eps_v).add(&eps_e.dev().scale(2.0 * g));
    Ok((J2OracleState { eps_e, eps_bar_p: ret.eps_bar_p }, stress))
}

/// Identifies a hardening transform that pulls the current Lode radius back
/// to the initial yield surface
#[derive(Clone, Copy, Debug)]
pub enum HardeningTransform {
    /// Uniform radial shift rho - sqrt(2/3) h eps_bar_p
    Isotropic { h: f64 },
    /// Lode-dependent shift rho - sqrt(2/3) h eps_bar_p (1 + cos^2(theta - pi/6))
    Mixed { h: f64 },
    /// Multiplicative shrink rho (1 - eps_bar_p^2)^6 (rejects eps_bar_p >= 1)
    Fictitious,
}

/// Holds the transformed radius and its partial derivatives with respect to
/// (rho, theta, eps_bar_p), first and second order
#[derive(Clone, Copy, Debug)]
pub struct TransformEval {
    pub rho_bar: f64,
    pub d: [f64; 3],
    pub dd: [[f64; 3]; 3],
}

/// Calculates a hardening transform of the Lode radius together with its
/// derivatives; every transform is the identity at eps_bar_p = 0
pub fn hardening_transform(
    rho: f64,
    theta: f64,
    eps_bar_p: f64,
    kind: &HardeningTransform,
) -> Result<TransformEval, MatError> {
    let c = (2.0 / 3.0_f64).sqrt();
    let mut out = TransformEval { rho_bar: rho, d: [1.0, 0.0, 0.0], dd: [[0.0; 3]; 3] };
    match *kind {
        HardeningTransform::Isotropic { h } => {
            out.rho_bar = rho - c * h * eps_bar_p;
            out.d[2] = -c * h;
        }
        HardeningTransform::Mixed { h } => {
            let t = theta - std::f64::consts::PI / 6.0;
            let shape = 1.0 + t.cos() * t.cos();
            out.rho_bar = rho - c * h * eps_bar_p * shape;
            out.d[1] = c * h * eps_bar_p * (2.0 * t).sin();
            out.d[2] = -c * h * shape;
            out.dd[1][1] = 2.0 * c * h * eps_bar_p * (2.0 * t).cos();
            out.dd[1][2] = c * h * (2.0 * t).sin();
            out.dd[2][1] = out.dd[1][2];
        }
        HardeningTransform::Fictitious => {
            if eps_bar_p >= 1.0 {
                return Err(MatError::FictitiousSaturated { eps_bar_p });
            }
            let w = 1.0 - eps_bar_p * eps_bar_p;
            let g = w.powi(6);
            let gp = -12.0 * eps_bar_p * w.powi(5);
            let gpp = -12.0 * w.powi(5) + 120.0 * eps_bar_p * eps_bar_p * w.powi(4);
            out.rho_bar = rho * g;
            out.d[0] = g;
            out.d[2] = rho * gp;
            out.dd[0][2] = gp;
            out.dd[2][0] = gp;
            out.dd[2][2] = rho * gpp;
        }
    }
    Ok(out)
}

/// Holds the synthetic surface parameters: initial mean radius, hardening
/// slope of the mean radius, the internal variable at which the shape
/// becomes a circle, and the gauge sharpness exponent
#[derive(Clone, Copy, Debug)]
pub struct SyntheticSurfaceParams {
    pub r0: f64,
    pub hs: f64,
    pub xi_star: f64,
    pub sharpness: f64,
    gauge_norm: f64,
}

impl SyntheticSurfaceParams {
    /// Returns a parameter set, precomputing the gauge normalization so the
    /// hexagonal shape has unit mean radius
    pub fn new(r0: f64, hs: f64, xi_star: f64, sharpness: f64) -> Self {
        let mut mean = 0.0;
        for i in 0..GAUGE_QUADRATURE_POINTS {
            let theta = 2.0 * std::f64::consts::PI * (i as f64) / (GAUGE_QUADRATURE_POINTS as f64);
            mean += 1.0 / hexagon_gauge(theta, sharpness);
        }
        mean /= GAUGE_QUADRATURE_POINTS as f64;
        SyntheticSurfaceParams { r0, hs, xi_star, sharpness, gauge_norm: mean }
    }

    /// Returns the benchmark parameter set (kPa units)
    pub fn benchmark() -> Self {
        SyntheticSurfaceParams::new(100.0, 250.0, 0.3, 8.0)
    }
}

/// Calculates the smooth hexagonal gauge G(theta) whose unit ball is convex:
/// the l^m norm of the positive parts of six rotated direction cosines
fn hexagon_gauge(theta: f64, m: f64) -> f64 {
    let mut acc = 0.0;
    for k in 0..6 {
        let c = (theta - (k as f64) * std::f64::consts::PI / 3.0).cos();
        if c > 0.0 {
            acc += c.powf(m);
        }
    }
    acc.powf(1.0 / m)
}

/// Calculates the synthetic yield radius at a Lode angle and internal
/// variable: the mean radius grows linearly while the shape morphs from a
/// smooth hexagon to a circle by gauge interpolation (convex at every stage)
pub fn synthetic_surface_radius(theta: f64, xi: f64, par: &SyntheticSurfaceParams) -> f64 {
    let w = (xi / par.xi_star).clamp(0.0, 1.0);
    let hexagon = 1.0 / (hexagon_gauge(theta, par.sharpness) * par.gauge_norm);
    let shape = 1.0 / ((1.0 - w) / hexagon + w);
    (par.r0 + par.hs * xi) * shape
}

/// Calculates the angle of the outward normal of the synthetic surface at a
/// boundary point (the associative flow direction on the pi-plane)
pub fn synthetic_surface_flow_angle(theta: f64, xi: f64, par: &SyntheticSurfaceParams) -> f64 {
    // central difference of the radius is exact enough for data generation
    let h = 1e-6;
    let r = synthetic_surface_radius(theta, xi, par);
    let rp = synthetic_surface_radius(theta + h, xi, par);
    let rm = synthetic_surface_radius(theta - h, xi, par);
    let dr = (rp - rm) / (2.0 * h);
    let (s, c) = theta.sin_cos();
    let mut angle = (r * s - dr * c).atan2(dr * s + r * c);
    if angle < 0.0 {
        angle += 2.0 * std::f64::consts::PI;
    }
    angle
}

////////////////////////////////////////////////////////////////////////////////

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::evaluate_with_hessian;

    fn approx_eq(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{} != {} (tol = {})", a, b, tol);
    }

    /// Returns the benchmark elastic constants (kPa)
    fn elastic() -> LinearElasticParams {
        LinearElasticParams { young: 2079.9, poisson: 0.3 }
    }

    #[test]
    fn elastic_moduli_match_hand_values() {
        let par = elastic();
        approx_eq(par.shear(), 799.9615384615385, 1e-9);
        approx_eq(par.bulk(), 1733.25, 1e-9);
    }

    #[test]
    fn linear_elastic_derivatives_are_exact() {
        let par = elastic();
        let inv = StrainInvariants { eps_v: 0.004, eps_s: 0.011 };
        let eval = linear_elastic_eval(&inv, &par);
        approx_eq(eval.p, par.bulk() * 0.004, 1e-12);
        approx_eq(eval.q, 3.0 * par.shear() * 0.011, 1e-12);
        approx_eq(eval.d_vv, par.bulk(), 0.0);
        approx_eq(eval.d_ss, 3.0 * par.shear(), 0.0);
        approx_eq(eval.d_vs, 0.0, 0.0);
    }

    #[test]
    fn mcc_shear_stiffness_matches_hand_value_at_the_origin() {
        let par = MccParams::benchmark();
        let eval = mcc_eval(&StrainInvariants { eps_v: 0.0, eps_s: 0.0 }, &par);
        approx_eq(eval.d_ss, 1620.0, 1e-9);
        approx_eq(eval.p, -100.0, 1e-12);
        approx_eq(eval.q, 0.0, 0.0);
    }

    #[test]
    fn mcc_closed_form_matches_the_expression_graph() {
        let par = MccParams::benchmark();
        let (graph, psi) = mcc_graph(&par);
        let points = [[0.0, 0.0], [0.01, 0.02], [-0.015, 0.005], [0.02, 0.0]];
        for point in points {
            let inv = StrainInvariants { eps_v: point[0], eps_s: point[1] };
            let eval = mcc_eval(&inv, &par);
            let bundle = evaluate_with_hessian(&graph, psi, &point);
            let hess = bundle.hessian.unwrap();
            let scale = 1.0 + bundle.value.abs();
            approx_eq(eval.psi, bundle.value, 1e-10 * scale);
            approx_eq(eval.p, bundle.gradient[0], 1e-10 * (1.0 + eval.p.abs()));
            approx_eq(eval.q, bundle.gradient[1], 1e-10 * (1.0 + eval.q.abs()));
            approx_eq(eval.d_vv, hess[0][0], 1e-10 * (1.0 + eval.d_vv.abs()));
            approx_eq(eval.d_ss, hess[1][1], 1e-10 * (1.0 + eval.d_ss.abs()));
            approx_eq(eval.d_vs, hess[0][1], 1e-10 * (1.0 + eval.d_vs.abs()));
        }
    }

    #[test]
    fn fictitious_energy_has_vanishing_initial_shear_stiffness() {
        let par = elastic();
        let at_origin = fictitious_eval(&StrainInvariants { eps_v: 0.0, eps_s: 0.0 }, &par);
        approx_eq(at_origin.d_ss, 0.0, 0.0);
        let inv = StrainInvariants { eps_v: 0.001, eps_s: 0.02 };
        let eval = fictitious_eval(&inv, &par);
        approx_eq(eval.q, 6.0 * par.shear() * 0.02_f64.powi(3), 1e-12);
        approx_eq(eval.d_ss, 18.0 * par.shear() * 0.02 * 0.02, 1e-12);
    }

    #[test]
    fn radial_return_matches_an_independent_newton_solve() {
        let el = elastic();
        let par = J2Params { sigma_y0: 100.0, hardening: 207.99 };
        let g = el.shear();
        let cases = [(150.0, 0.0), (101.0, 0.0), (250.0, 0.05), (99.0, 0.0)];
        for (q_trial, e0) in cases {
            let ret = j2_radial_return_oracle(q_trial, e0, &el, &par).unwrap();
            if !ret.yielded {
                assert!(q_trial <= par.yield_stress(e0));
                continue;
            }
            // independent solve of r(dg) = q_trial - 3 G dg - sigma_y(e0 + dg) = 0
            let mut dg = 0.0;
            for _ in 0..50 {
                let r = q_trial - 3.0 * g * dg - par.yield_stress(e0 + dg);
                let dr = -3.0 * g - par.hardening;
                let step = r / dr;
                dg -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            approx_eq(ret.delta_gamma, dg, 1e-10 * (1.0 + dg.abs()));
            // consistency: the final stress sits on the updated yield surface
            approx_eq(ret.q, par.yield_stress(ret.eps_bar_p), 1e-10 * ret.q);
        }
    }

    #[test]
    fn oracle_step_stays_elastic_below_yield_and_hardens_above() {
        let el = elastic();
        let par = J2Params { sigma_y0: 100.0, hardening: 207.99 };
        let state = J2OracleState::initial();
        // small deviatoric increment stays elastic
        let small = SymTensor3::diagonal(0.01, -0.005, -0.005);
        let (s1, sig1) = j2_oracle_step(&state, &small, &el, &par).unwrap();
        assert_eq!(s1.eps_bar_p, 0.0);
        let q1 = crate::invariants::stress_invariants(&sig1).q;
        approx_eq(q1, 3.0 * el.shear() * strain_invariants(&small).eps_s, 1e-10);
        // large increment yields and lands on the hardened surface
        let large = SymTensor3::diagonal(0.08, -0.04, -0.04);
        let (s2, sig2) = j2_oracle_step(&s1, &large.sub(&small), &el, &par).unwrap();
        assert!(s2.eps_bar_p > 0.0);
        let q2 = crate::invariants::stress_invariants(&sig2).q;
        approx_eq(q2, par.yield_stress(s2.eps_bar_p), 1e-9);
        // plastic flow is deviatoric: mean stress stays purely elastic
        let p2 = crate::invariants::stress_invariants(&sig2).p;
        approx_eq(p2, el.bulk() * strain_invariants(&large).eps_v / 3.0 * 3.0, 1e-9);
    }

    #[test]
    fn hardening_transforms_are_identities_at_zero_plastic_strain() {
        let kinds = [
            HardeningTransform::Isotropic { h: 207.99 },
            HardeningTransform::Mixed { h: 207.99 },
            HardeningTransform::Fictitious,
        ];
        for kind in kinds {
            let eval = hardening_transform(77.7, 1.234, 0.0, &kind).unwrap();
            assert_eq!(eval.rho_bar, 77.7);
        }
    }

    #[test]
    fn mixed_transform_doubles_the_shift_at_the_reference_angle() {
        let h = 207.99;
        let rho = 120.0;
        let e = 0.04;
        let iso = hardening_transform(rho, 0.9, e, &HardeningTransform::Isotropic { h }).unwrap();
        let mixed = hardening_transform(
            rho,
            std::f64::consts::PI / 6.0,
            e,
            &HardeningTransform::Mixed { h },
        )
        .unwrap();
        let iso_shift = rho - iso.rho_bar;
        let mixed_shift = rho - mixed.rho_bar;
        approx_eq(mixed_shift, 2.0 * iso_shift, 1e-12);
    }

    #[test]
    fn fictitious_transform_rejects_saturation_and_differentiates() {
        assert!(hardening_transform(10.0, 0.0, 1.0, &HardeningTransform::Fictitious).is_err());
        let rho = 80.0;
        let e = 0.3;
        let eval = hardening_transform(rho, 0.0, e, &HardeningTransform::Fictitious).unwrap();
        let g = (1.0 - e * e).powi(6);
        approx_eq(eval.rho_bar, rho * g, 1e-12);
        // finite-difference check of the eps_bar_p derivatives
        let h = 1e-6;
        let fp = hardening_transform(rho, 0.0, e + h, &HardeningTransform::Fictitious).unwrap();
        let fm = hardening_transform(rho, 0.0, e - h, &HardeningTransform::Fictitious).unwrap();
        approx_eq(eval.d[2], (fp.rho_bar - fm.rho_bar) / (2.0 * h), 1e-4);
        approx_eq(eval.dd[2][2], (fp.d[2] - fm.d[2]) / (2.0 * h), 1e-4);
    }

    #[test]
    fn synthetic_surface_is_sixfold_symmetric_and_becomes_a_circle() {
        let par = SyntheticSurfaceParams::benchmark();
        for i in 0..50 {
            let theta = 0.13 + (i as f64) * 0.11;
            let r = synthetic_surface_radius(theta, 0.0, &par);
            let r_rot = synthetic_surface_radius(theta + std::f64::consts::PI / 3.0, 0.0, &par);
            approx_eq(r, r_rot, 1e-12 * r);
            // past xi_star the shape is a circle
            let r_c = synthetic_surface_radius(theta, par.xi_star, &par);
            approx_eq(r_c, par.r0 + par.hs * par.xi_star, 1e-12 * r_c);
        }
    }

    #[test]
    fn synthetic_surface_mean_radius_is_normalized() {
        let par = SyntheticSurfaceParams::benchmark();
        let n = 4096;
        let mut mean = 0.0;
        for i in 0..n {
            let theta = 2.0 * std::f64::consts::PI * (i as f64) / (n as f64);
            mean += synthetic_surface_radius(theta, 0.0, &par);
        }
        mean /= n as f64;
        approx_eq(mean, par.r0, 1e-4 * par.r0);
    }

    #[test]
    fn synthetic_surface_is_convex_at_sampled_angles() {
        let par = SyntheticSurfaceParams::benchmark();
        let n = 10_000;
        for level in 0..5 {
            let xi = 2.0 * par.xi_star * (level as f64) / 4.0;
            let mut pts = Vec::with_capacity(n);
            for i in 0..n {
                let theta = 2.0 * std::f64::consts::PI * (i as f64) / (n as f64);
                let r = synthetic_surface_radius(theta, xi, &par);
                pts.push((r * theta.cos(), r * theta.sin()));
            }
            for i in 0..n {
                let a = pts[i];
                let b = pts[(i + 1) % n];
                let c = pts[(i + 2) % n];
                let cross = (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0);
                assert!(cross > -1e-9, "concavity at sample {} of level {}", i, level);
            }
        }
    }

    #[test]
    fn synthetic_flow_angle_is_radial_for_the_circle() {
        let par = SyntheticSurfaceParams::benchmark();
        for i in 0..12 {
            let theta = (i as f64) * 0.5;
            let wrapped = theta.rem_euclid(2.0 * std::f64::consts::PI);
            let angle = synthetic_surface_flow_angle(theta, 2.0 * par.xi_star, &par);
            approx_eq(angle, wrapped, 1e-6);
        }
    }
}
