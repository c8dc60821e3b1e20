//! Implicit stress integration in principal space.
//!
//! The integrator works on the spectral decomposition of the trial elastic
//! strain: because the stored energy is isotropic the eigenvector triad stays
//! fixed over the local iteration, so the unknowns reduce to the three
//! principal elastic strains and the plastic multiplier increment. Yield
//! functions live on the polar Lode chart and are pulled back to principal
//! stresses through the pi-plane rotation.

use crate::invariants::{q_matrix, spectral_decompose, StrainInvariants, SymTensor3};
use crate::matlib::{
    fictitious_eval, hardening_transform, linear_elastic_eval, mcc_eval, EnergyEval,
    HardeningTransform, J2Params, LinearElasticParams, MatError, MccParams,
};
use crate::network::NetworkModel;
use crate::training::{helper_offset, helper_offset_ddtheta, helper_offset_dtheta};

/// Convergence tolerance for the scaled local residual
pub const NEWTON_TOL: f64 = 1e-10;

/// Maximum number of local Newton iterations
pub const MAX_NEWTON_ITERATIONS: usize = 50;

/// Relative spread below which two trial principal strains are treated as
/// equal when assembling the spectral tangent
pub const DEGENERATE_PAIR_TOL: f64 = 1e-8;

/// Relative deviatoric strain norm below which the deviatoric direction is
/// taken as undefined and the isotropic limit of the energy chain applies
const DIRECTION_TOL: f64 = 1e-12;

/// Relative pi-plane radius below which a stress state counts as hydrostatic
const HYDROSTATIC_TOL: f64 = 1e-10;

/// Smallest admissible line-search step factor
const MIN_LINE_SEARCH_STEP: f64 = 1e-12;

/// Identifies a failure of the local stress update
#[derive(Debug, thiserror::Error)]
pub enum ReturnMapError {
    #[error("local iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("singular local system in the return mapping")]
    SingularSystem,
    #[error("yield function evaluated at a hydrostatic stress state")]
    HydrostaticYield,
    #[error("material evaluation failed: {0}")]
    Material(#[from] MatError),
}

/// Holds the stored energy, principal stresses, and the principal stiffness
/// block at a principal elastic strain state
#[derive(Clone, Copy, Debug)]
pub struct EnergyPrincipal {
    pub psi: f64,
    pub sigma: [f64; 3],
    pub stiffness: [[f64; 3]; 3],
}

/// Holds a yield function value and its derivatives on the Lode chart
/// (rho, theta, xi); `d` and `dd` are indexed in that coordinate order
#[derive(Clone, Copy, Debug)]
pub struct LodeDerivatives {
    pub f: f64,
    pub d: [f64; 3],
    pub dd: [[f64; 3]; 3],
}

/// Holds a yield evaluation pulled back to principal stress space
#[derive(Clone, Copy, Debug)]
pub struct YieldEval {
    pub f: f64,
    pub grad: [f64; 3],
    pub hess: [[f64; 3]; 3],
    pub d_xi: f64,
    pub grad_xi: [f64; 3],
}

/// Holds a plastic flow direction with its derivatives in principal stress
/// space
#[derive(Clone, Copy, Debug)]
pub struct FlowEval {
    pub dir: [f64; 3],
    pub jac: [[f64; 3]; 3],
    pub d_xi: [f64; 3],
}

/// Evaluates a two-invariant stored energy together with first and second
/// derivatives in (eps_v, eps_s)
pub trait EnergyLaw {
    /// Calculates the energy derivatives at the given strain invariants
    fn eval(&self, inv: &StrainInvariants) -> EnergyEval;
}

/// Holds the closed-form energy laws available to the integrator
#[derive(Clone, Copy, Debug)]
pub enum EnergyFunction {
    Linear(LinearElasticParams),
    Mcc(MccParams),
    Fictitious(LinearElasticParams),
}

impl EnergyLaw for EnergyFunction {
    fn eval(&self, inv: &StrainInvariants) -> EnergyEval {
        match self {
            EnergyFunction::Linear(par) => linear_elastic_eval(inv, par),
            EnergyFunction::Mcc(par) => mcc_eval(inv, par),
            EnergyFunction::Fictitious(par) => fictitious_eval(inv, par),
        }
    }
}

/// Holds a trained energy network evaluated as a stored energy law
#[derive(Clone, Debug)]
pub struct NetworkEnergy {
    pub net: NetworkModel,
}

impl EnergyLaw for NetworkEnergy {
    fn eval(&self, inv: &StrainInvariants) -> EnergyEval {
        let t = self.net.taylor_eval(&[inv.eps_v, inv.eps_s], 2);
        let h = t.hessian.as_ref().expect("second-order taylor evaluation");
        EnergyEval {
            psi: t.value[0],
            p: t.jacobian[0][0],
            q: t.jacobian[0][1],
            d_vv: h[0][0][0],
            d_ss: h[0][1][1],
            d_vs: h[0][0][1],
        }
    }
}

/// Evaluates a yield function on the polar Lode chart
pub trait LodeChart {
    /// Calculates the chart value and derivatives at (rho, theta, xi)
    fn eval(&self, rho: f64, theta: f64, xi: f64) -> Result<LodeDerivatives, ReturnMapError>;
}

/// Holds the closed-form von Mises chart with linear hardening,
/// f = rho - sqrt(2/3) sigma_y0 - (2/3) H xi
#[derive(Clone, Copy, Debug)]
pub struct J2Chart {
    pub par: J2Params,
}

impl LodeChart for J2Chart {
    fn eval(&self, rho: f64, _theta: f64, xi: f64) -> Result<LodeDerivatives, ReturnMapError> {
        let c = (2.0 / 3.0_f64).sqrt();
        let slope = 2.0 / 3.0 * self.par.hardening;
        Ok(LodeDerivatives {
            f: rho - c * self.par.sigma_y0 - slope * xi,
            d: [1.0, 0.0, -slope],
            dd: [[0.0; 3]; 3],
        })
    }
}

/// Holds a trained yield network evaluated as a chart; the helper offset
/// added during training is removed again here
#[derive(Debug)]
pub struct NetworkChart {
    pub net: NetworkModel,
    pub helper_amplitude: f64,
    warned: std::sync::atomic::AtomicBool,
}

impl Clone for NetworkChart {
    fn clone(&self) -> Self {
        NetworkChart::new(self.net.clone(), self.helper_amplitude)
    }
}

impl NetworkChart {
    /// Builds a chart around a trained yield network
    pub fn new(net: NetworkModel, helper_amplitude: f64) -> Self {
        NetworkChart { net, helper_amplitude, warned: std::sync::atomic::AtomicBool::new(false) }
    }
}

impl LodeChart for NetworkChart {
    fn eval(&self, rho: f64, theta: f64, xi: f64) -> Result<LodeDerivatives, ReturnMapError> {
        // queries beyond the training range of xi extrapolate linearly
        // through the scaler; note it once
        let mins = &self.net.input_scaler.mins;
        let ranges = &self.net.input_scaler.ranges;
        if mins.len() == 3
            && (xi < mins[2] || xi > mins[2] + ranges[2])
            && !self.warned.swap(true, std::sync::atomic::Ordering::Relaxed)
        {
            eprintln!(
                "note: yield chart queried at xi = {xi:.6e}, outside its training range; extrapolating"
            );
        }
        let t = self.net.taylor_eval(&[rho, theta, xi], 2);
        let h = t.hessian.as_ref().expect("second-order taylor evaluation");
        let a = self.helper_amplitude;
        let mut dd = [[0.0; 3]; 3];
        for (i, row) in dd.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = h[0][i][j];
            }
        }
        dd[1][1] -= helper_offset_ddtheta(theta, a);
        Ok(LodeDerivatives {
            f: t.value[0] - helper_offset(theta, a),
            d: [
                t.jacobian[0][0],
                t.jacobian[0][1] - helper_offset_dtheta(theta, a),
                t.jacobian[0][2],
            ],
            dd,
        })
    }
}

/// Chains a hardening transform of the Lode radius in front of a base chart
/// that only sees the initial surface: f(rho, theta, xi) =
/// f0(rho_bar(rho, theta, xi), theta)
#[derive(Clone, Debug)]
pub struct ChainedYield<C: LodeChart> {
    pub base: C,
    pub transform: HardeningTransform,
}

impl<C: LodeChart> LodeChart for ChainedYield<C> {
    fn eval(&self, rho: f64, theta: f64, xi: f64) -> Result<LodeDerivatives, ReturnMapError> {
        // the transforms are parameterized by eps_bar_p = sqrt(2/3) xi
        let c = (2.0 / 3.0_f64).sqrt();
        let te = hardening_transform(rho, theta, c * xi, &self.transform)?;
        let b = self.base.eval(te.rho_bar, theta, 0.0)?;
        // chart jacobian of (rho_bar, theta) with respect to (rho, theta, xi)
        let j0 = [te.d[0], te.d[1], c * te.d[2]];
        let j1 = [0.0, 1.0, 0.0];
        let mut h0 = [[0.0; 3]; 3];
        for (i, row) in h0.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let si = if i == 2 { c } else { 1.0 };
                let sj = if j == 2 { c } else { 1.0 };
                *v = te.dd[i][j] * si * sj;
            }
        }
        let mut out = LodeDerivatives { f: b.f, d: [0.0; 3], dd: [[0.0; 3]; 3] };
        for i in 0..3 {
            out.d[i] = b.d[0] * j0[i] + b.d[1] * j1[i];
            for j in 0..3 {
                out.dd[i][j] = b.dd[0][0] * j0[i] * j0[j]
                    + b.dd[0][1] * (j0[i] * j1[j] + j1[i] * j0[j])
                    + b.dd[1][1] * j1[i] * j1[j]
                    + b.d[0] * h0[i][j];
            }
        }
        Ok(out)
    }
}

/// Identifies how the plastic flow direction is obtained
#[derive(Clone, Debug)]
pub enum FlowRule {
    /// Flow along the yield gradient
    Associative,
    /// Flow read from a trained direction network mapping principal stresses
    /// to an unnormalized direction
    Network(NetworkModel),
}

/// Provides the pieces the implicit integrator needs: a stored energy in
/// principal space and a yield function with a flow direction
pub trait MaterialModel {
    /// Calculates energy, principal stresses, and the principal stiffness at
    /// the given principal elastic strains
    fn energy(&self, eps: [f64; 3]) -> EnergyPrincipal;

    /// Calculates the yield function and its derivatives at the given
    /// principal stresses and internal variable
    fn yield_eval(&self, sigma: [f64; 3], xi: f64) -> Result<YieldEval, ReturnMapError>;

    /// Calculates the plastic flow direction; the default is the associative
    /// rule
    fn flow_eval(&self, sigma: [f64; 3], xi: f64) -> Result<FlowEval, ReturnMapError> {
        let y = self.yield_eval(sigma, xi)?;
        Ok(FlowEval { dir: y.grad, jac: y.hess, d_xi: y.grad_xi })
    }
}

/// Combines an energy law, a yield chart, and a flow rule into a material
pub struct CompositeModel {
    pub energy: Box<dyn EnergyLaw>,
    pub chart: Box<dyn LodeChart>,
    pub flow: FlowRule,
}

impl MaterialModel for CompositeModel {
    fn energy(&self, eps: [f64; 3]) -> EnergyPrincipal {
        let inv = invariants_of(eps);
        principal_energy_chain(&self.energy.eval(&inv), eps)
    }

    fn yield_eval(&self, sigma: [f64; 3], xi: f64) -> Result<YieldEval, ReturnMapError> {
        let (rho, theta) = lode_coordinates(sigma)?;
        let ld = self.chart.eval(rho, theta, xi)?;
        Ok(lode_chain(&ld, sigma))
    }

    fn flow_eval(&self, sigma: [f64; 3], xi: f64) -> Result<FlowEval, ReturnMapError> {
        match &self.flow {
            FlowRule::Associative => {
                let y = self.yield_eval(sigma, xi)?;
                Ok(FlowEval { dir: y.grad, jac: y.hess, d_xi: y.grad_xi })
            }
            FlowRule::Network(net) => {
                let t = net.taylor_eval(&sigma, 1);
                let mut dir = [0.0; 3];
                let mut jac = [[0.0; 3]; 3];
                for i in 0..3 {
                    dir[i] = t.value[i];
                    for j in 0..3 {
                        jac[i][j] = t.jacobian[i][j];
                    }
                }
                Ok(FlowEval { dir, jac, d_xi: [0.0; 3] })
            }
        }
    }
}

/// Builds the von Mises reference material with linear elasticity
pub fn j2_model(elastic: LinearElasticParams, plastic: J2Params) -> CompositeModel {
    CompositeModel {
        energy: Box::new(EnergyFunction::Linear(elastic)),
        chart: Box::new(J2Chart { par: plastic }),
        flow: FlowRule::Associative,
    }
}

/// Calculates the strain invariants of a principal strain triple
pub fn invariants_of(eps: [f64; 3]) -> StrainInvariants {
    let eps_v = eps[0] + eps[1] + eps[2];
    let m = eps_v / 3.0;
    let e = [eps[0] - m, eps[1] - m, eps[2] - m];
    let norm_e = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
    StrainInvariants { eps_v, eps_s: (2.0 / 3.0_f64).sqrt() * norm_e }
}

/// Calculates principal stresses and the principal stiffness block from an
/// invariant-space energy evaluation at the same strains
pub fn principal_energy_chain(ev: &EnergyEval, eps: [f64; 3]) -> EnergyPrincipal {
    let c = (2.0 / 3.0_f64).sqrt();
    let eps_v = eps[0] + eps[1] + eps[2];
    let m = eps_v / 3.0;
    let e = [eps[0] - m, eps[1] - m, eps[2] - m];
    let norm_e = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
    let mag = (eps[0] * eps[0] + eps[1] * eps[1] + eps[2] * eps[2]).sqrt();
    let mut out =
        EnergyPrincipal { psi: ev.psi, sigma: [ev.p; 3], stiffness: [[0.0; 3]; 3] };
    if norm_e <= DIRECTION_TOL * (1.0 + mag) {
        // isotropic limit: the deviatoric direction drops out
        for a in 0..3 {
            for b in 0..3 {
                let delta = if a == b { 1.0 } else { 0.0 };
                out.stiffness[a][b] = ev.d_vv + 2.0 / 3.0 * ev.d_ss * (delta - 1.0 / 3.0);
            }
        }
        return out;
    }
    let eps_s = c * norm_e;
    let ehat = [e[0] / norm_e, e[1] / norm_e, e[2] / norm_e];
    for a in 0..3 {
        out.sigma[a] = ev.p + c * ev.q * ehat[a];
        for b in 0..3 {
            let delta = if a == b { 1.0 } else { 0.0 };
            out.stiffness[a][b] = ev.d_vv
                + c * ev.d_vs * (ehat[a] + ehat[b])
                + 2.0 / 3.0 * ev.d_ss * ehat[a] * ehat[b]
                + ev.q * 2.0 / 3.0 * ((delta - 1.0 / 3.0) - ehat[a] * ehat[b]) / eps_s;
        }
    }
    out
}

/// Calculates the polar Lode coordinates of a principal stress triple,
/// failing on the hydrostatic axis where the angle is undefined
pub fn lode_coordinates(sigma: [f64; 3]) -> Result<(f64, f64), ReturnMapError> {
    let qm = q_matrix();
    let u = qm[0][0] * sigma[0] + qm[1][0] * sigma[1] + qm[2][0] * sigma[2];
    let v = qm[0][1] * sigma[0] + qm[1][1] * sigma[1] + qm[2][1] * sigma[2];
    let rho = u.hypot(v);
    let mag = (sigma[0] * sigma[0] + sigma[1] * sigma[1] + sigma[2] * sigma[2]).sqrt();
    if rho <= HYDROSTATIC_TOL * (1.0 + mag) {
        return Err(ReturnMapError::HydrostaticYield);
    }
    let mut theta = v.atan2(u);
    if theta < 0.0 {
        theta += 2.0 * std::f64::consts::PI;
    }
    if theta >= 2.0 * std::f64::consts::PI {
        theta = 0.0;
    }
    Ok((rho, theta))
}

/// Maps chart derivatives at (rho, theta, xi) to principal stress space
/// through the pi-plane rotation; the caller guarantees a non-hydrostatic
/// stress state
pub fn lode_chain(ld: &LodeDerivatives, sigma: [f64; 3]) -> YieldEval {
    let qm = q_matrix();
    let mut ua = [0.0; 3];
    let mut va = [0.0; 3];
    for a in 0..3 {
        ua[a] = qm[a][0];
        va[a] = qm[a][1];
    }
    let u = ua[0] * sigma[0] + ua[1] * sigma[1] + ua[2] * sigma[2];
    let v = va[0] * sigma[0] + va[1] * sigma[1] + va[2] * sigma[2];
    let rho = u.hypot(v);
    let r2 = rho * rho;
    let mut rho_a = [0.0; 3];
    let mut th_a = [0.0; 3];
    for a in 0..3 {
        rho_a[a] = (u * ua[a] + v * va[a]) / rho;
        th_a[a] = (u * va[a] - v * ua[a]) / r2;
    }
    let mut rho_ab = [[0.0; 3]; 3];
    let mut th_ab = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            rho_ab[a][b] = (ua[a] * ua[b] + va[a] * va[b]) / rho - rho_a[a] * rho_a[b] / rho;
            th_ab[a][b] = (ua[b] * va[a] - va[b] * ua[a]) / r2 - 2.0 * th_a[a] * rho_a[b] / rho;
        }
    }
    // the angle hessian is symmetric; symmetrize away roundoff
    for a in 0..3 {
        for b in (a + 1)..3 {
            let s = 0.5 * (th_ab[a][b] + th_ab[b][a]);
            th_ab[a][b] = s;
            th_ab[b][a] = s;
        }
    }
    let mut out = YieldEval {
        f: ld.f,
        grad: [0.0; 3],
        hess: [[0.0; 3]; 3],
        d_xi: ld.d[2],
        grad_xi: [0.0; 3],
    };
    for a in 0..3 {
        out.grad[a] = ld.d[0] * rho_a[a] + ld.d[1] * th_a[a];
        out.grad_xi[a] = ld.dd[0][2] * rho_a[a] + ld.dd[1][2] * th_a[a];
        for b in 0..3 {
            out.hess[a][b] = ld.dd[0][0] * rho_a[a] * rho_a[b]
                + ld.dd[0][1] * (rho_a[a] * th_a[b] + th_a[a] * rho_a[b])
                + ld.dd[1][1] * th_a[a] * th_a[b]
                + ld.d[0] * rho_ab[a][b]
                + ld.d[1] * th_ab[a][b];
        }
    }
    out
}

/// Holds the persistent state of an elastoplastic material point
#[derive(Clone, Copy, Debug)]
pub struct MaterialState {
    pub eps_e: SymTensor3,
    pub xi: f64,
}

impl MaterialState {
    /// Returns the stress-free initial state
    pub fn initial() -> Self {
        MaterialState { eps_e: SymTensor3::zero(), xi: 0.0 }
    }
}

/// Holds the fourth-order consistent tangent in full component form
pub type Tangent4 = [[[[f64; 3]; 3]; 3]; 3];

/// Holds the elastic trial state of a strain increment: the trial elastic
/// strain tensor, its spectral data, and the trial energy response
#[derive(Clone, Copy, Debug)]
pub struct TrialState {
    pub eps_e: SymTensor3,
    pub eps: [f64; 3],
    pub directions: [[f64; 3]; 3],
    pub energy: EnergyPrincipal,
}

/// Calculates the elastic trial state for a strain increment; the stress
/// directions coincide with the trial strain directions by isotropy
pub fn trial_state(
    model: &dyn MaterialModel,
    state: &MaterialState,
    deps: &SymTensor3,
) -> TrialState {
    let eps_e = state.eps_e.add(deps);
    let dec = spectral_decompose(&eps_e);
    let energy = model.energy(dec.values);
    TrialState { eps_e, eps: dec.values, directions: dec.directions, energy }
}

/// Holds the outcome of one implicit stress update
#[derive(Clone, Debug)]
pub struct StepResult {
    pub state: MaterialState,
    pub stress: SymTensor3,
    pub tangent: Tangent4,
    pub plastic: bool,
    pub delta_lambda: f64,
    pub iterations: usize,
    /// Final scaled residual norm of the local iteration; zero for elastic
    /// steps
    pub residual: f64,
    pub dissipation: f64,
    /// Yield value at the trial state (elastic steps) or at the converged
    /// state (plastic steps); negative infinity when the trial state is
    /// hydrostatic and the chart cannot be evaluated
    pub yield_value: f64,
}

/// Contracts a fourth-order tangent with a symmetric strain increment
pub fn contract_tangent(c: &Tangent4, deps: &SymTensor3) -> SymTensor3 {
    let d = deps.to_matrix();
    let mut s = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    s[i][j] += c[i][j][k][l] * d[k][l];
                }
            }
        }
    }
    SymTensor3::new(
        s[0][0],
        s[1][1],
        s[2][2],
        0.5 * (s[0][1] + s[1][0]),
        0.5 * (s[1][2] + s[2][1]),
        0.5 * (s[0][2] + s[2][0]),
    )
}

/// Advances the material state over a total strain increment and returns the
/// stress, the updated state, and the consistent tangent
pub fn integrate_step(
    model: &dyn MaterialModel,
    state: &MaterialState,
    deps: &SymTensor3,
) -> Result<StepResult, ReturnMapError> {
    let trial = trial_state(model, state, deps);
    let eps_tr = trial.eps;
    let en_tr = trial.energy;
    let sig_scale = 1.0 + norm3(en_tr.sigma);
    // trial yield check; hydrostatic trial states are always elastic because
    // every admissible surface encloses the hydrostatic axis
    let f_tr = match model.yield_eval(en_tr.sigma, state.xi) {
        Ok(y) => y.f,
        Err(ReturnMapError::HydrostaticYield) => {
            return Ok(elastic_result(state.xi, &trial, f64::NEG_INFINITY));
        }
        Err(e) => return Err(e),
    };
    if f_tr <= NEWTON_TOL * sig_scale {
        return Ok(elastic_result(state.xi, &trial, f_tr));
    }

    // plastic corrector: unknowns are the principal elastic strains and the
    // plastic multiplier increment
    let eps_scale = 1.0 + norm3(eps_tr);
    let mut eps = eps_tr;
    let mut dl = 0.0;
    let mut iterations = 0;
    loop {
        let xi = state.xi + dl;
        let en = model.energy(eps);
        let ye = model.yield_eval(en.sigma, xi)?;
        let fe = model.flow_eval(en.sigma, xi)?;
        let r = [
            eps[0] - eps_tr[0] + dl * fe.dir[0],
            eps[1] - eps_tr[1] + dl * fe.dir[1],
            eps[2] - eps_tr[2] + dl * fe.dir[2],
            ye.f,
        ];
        let residual = ((r[0] * r[0] + r[1] * r[1] + r[2] * r[2]) / (eps_scale * eps_scale)
            + r[3] * r[3] / (sig_scale * sig_scale))
            .sqrt();
        if residual < NEWTON_TOL {
            let amat = local_system(&en, &ye, &fe, dl);
            let tangent =
                plastic_tangent(&amat, &en.stiffness, eps_tr, en.sigma, &trial.directions)?;
            let diss = dl * (en.sigma[0] * fe.dir[0] + en.sigma[1] * fe.dir[1] + en.sigma[2] * fe.dir[2]);
            return Ok(StepResult {
                state: MaterialState {
                    eps_e: SymTensor3::from_principal(eps, &trial.directions),
                    xi,
                },
                stress: SymTensor3::from_principal(en.sigma, &trial.directions),
                tangent,
                plastic: true,
                delta_lambda: dl,
                iterations,
                residual,
                dissipation: diss,
                yield_value: ye.f,
            });
        }
        if iterations >= MAX_NEWTON_ITERATIONS {
            return Err(ReturnMapError::NonConvergence { iterations, residual });
        }
        iterations += 1;
        let amat = local_system(&en, &ye, &fe, dl);
        let dx = solve4(amat, [-r[0], -r[1], -r[2], -r[3]])?;
        // keep the multiplier nonnegative by halving the step
        let mut step = 1.0;
        while dl + step * dx[3] < 0.0 && step > MIN_LINE_SEARCH_STEP {
            step *= 0.5;
        }
        for i in 0..3 {
            eps[i] += step * dx[i];
        }
        dl = (dl + step * dx[3]).max(0.0);
    }
}

/// Assembles the 4x4 jacobian of the local residual
fn local_system(en: &EnergyPrincipal, ye: &YieldEval, fe: &FlowEval, dl: f64) -> [[f64; 4]; 4] {
    let mut a = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            let mut gij = 0.0;
            for k in 0..3 {
                gij += fe.jac[i][k] * en.stiffness[k][j];
            }
            a[i][j] = if i == j { 1.0 } else { 0.0 } + dl * gij;
        }
        a[i][3] = fe.dir[i] + dl * fe.d_xi[i];
    }
    for j in 0..3 {
        let mut s = 0.0;
        for k in 0..3 {
            s += ye.grad[k] * en.stiffness[k][j];
        }
        a[3][j] = s;
    }
    a[3][3] = ye.d_xi;
    a
}

/// Builds the elastic step outcome from the trial evaluation
fn elastic_result(xi: f64, trial: &TrialState, yield_value: f64) -> StepResult {
    let en = &trial.energy;
    StepResult {
        state: MaterialState { eps_e: trial.eps_e, xi },
        stress: SymTensor3::from_principal(en.sigma, &trial.directions),
        tangent: spectral_tangent(&en.stiffness, trial.eps, en.sigma, &trial.directions),
        plastic: false,
        delta_lambda: 0.0,
        iterations: 0,
        residual: 0.0,
        dissipation: 0.0,
        yield_value,
    }
}

/// Calculates the plastic consistent tangent a = psi A^-1 in principal space
/// and assembles the spectral fourth-order tensor
fn plastic_tangent(
    amat: &[[f64; 4]; 4],
    stiffness: &[[f64; 3]; 3],
    eps_tr: [f64; 3],
    sigma: [f64; 3],
    directions: &[[f64; 3]; 3],
) -> Result<Tangent4, ReturnMapError> {
    // columns of A^-1 restricted to the strain block
    let mut ainv = [[0.0; 3]; 3];
    for b in 0..3 {
        let mut rhs = [0.0; 4];
        rhs[b] = 1.0;
        let z = solve4(*amat, rhs)?;
        for cidx in 0..3 {
            ainv[cidx][b] = z[cidx];
        }
    }
    let mut a = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                a[i][j] += stiffness[i][k] * ainv[k][j];
            }
        }
    }
    Ok(spectral_tangent(&a, eps_tr, sigma, directions))
}

/// Assembles a fourth-order tangent from principal moduli and the trial
/// spectral data; coinciding trial strains use the derivative limit of the
/// stress-difference quotient
fn spectral_tangent(
    a: &[[f64; 3]; 3],
    eps_tr: [f64; 3],
    sigma: [f64; 3],
    directions: &[[f64; 3]; 3],
) -> Tangent4 {
    let n = directions;
    let scale = 1.0 + norm3(eps_tr);
    let mut c = [[[[0.0; 3]; 3]; 3]; 3];
    for p in 0..3 {
        for q in 0..3 {
            let coef = a[p][q];
            if coef != 0.0 {
                for i in 0..3 {
                    for j in 0..3 {
                        for k in 0..3 {
                            for l in 0..3 {
                                c[i][j][k][l] += coef * n[p][i] * n[p][j] * n[q][k] * n[q][l];
                            }
                        }
                    }
                }
            }
            if p == q {
                continue;
            }
            let gap = eps_tr[q] - eps_tr[p];
            let w = if gap.abs() <= DEGENERATE_PAIR_TOL * scale {
                a[q][q] - a[p][q]
            } else {
                (sigma[q] - sigma[p]) / gap
            };
            let half = 0.5 * w;
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        for l in 0..3 {
                            c[i][j][k][l] += half
                                * n[p][i]
                                * n[q][j]
                                * (n[p][k] * n[q][l] + n[q][k] * n[p][l]);
                        }
                    }
                }
            }
        }
    }
    c
}

/// Solves a dense 4x4 system with partial pivoting
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Result<[f64; 4], ReturnMapError> {
    let mut scale = 0.0_f64;
    for row in &a {
        for v in row {
            scale = scale.max(v.abs());
        }
    }
    if scale == 0.0 {
        return Err(ReturnMapError::SingularSystem);
    }
    for col in 0..4 {
        let mut piv = col;
        for r in (col + 1)..4 {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col].abs() < 1e-14 * scale {
            return Err(ReturnMapError::SingularSystem);
        }
        if piv != col {
            a.swap(piv, col);
            b.swap(piv, col);
        }
        for r in (col + 1)..4 {
            let m = a[r][col] / a[col][col];
            if m == 0.0 {
                continue;
            }
            for cc in col..4 {
                a[r][cc] -= m * a[col][cc];
            }
            b[r] -= m * b[col];
        }
    }
    let mut x = [0.0; 4];
    for col in (0..4).rev() {
        let mut s = b[col];
        for cc in (col + 1)..4 {
            s -= a[col][cc] * x[cc];
        }
        x[col] = s / a[col][col];
    }
    Ok(x)
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

////////////////////////////////////////////////////////////////////////////////

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matlib::{j2_oracle_step, J2OracleState};
    use crate::network::{Activation, NetworkModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn approx_eq(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn approx_rel(a: f64, b: f64, tol: f64) {
        let scale = 1.0 + a.abs().max(b.abs());
        assert!((a - b).abs() <= tol * scale, "{a} vs {b} (rel tol {tol})");
    }

    fn appendix_elastic() -> LinearElasticParams {
        LinearElasticParams { young: 2079.9, poisson: 0.3 }
    }

    fn appendix_plastic() -> J2Params {
        J2Params { sigma_y0: 100.0, hardening: 207.99 }
    }

    #[test]
    fn linear_energy_chain_is_exact() {
        let par = appendix_elastic();
        let (k, g) = (par.bulk(), par.shear());
        let cases = [
            [0.01_f64, -0.004, 0.002],
            [-0.02, -0.02, 0.015],
            [0.003, 0.003, 0.003],
            [0.0, 0.0, 0.0],
        ];
        for eps in cases {
            let inv = invariants_of(eps);
            let en = principal_energy_chain(&linear_elastic_eval(&inv, &par), eps);
            let m = inv.eps_v / 3.0;
            for a in 0..3 {
                approx_eq(en.sigma[a], k * inv.eps_v + 2.0 * g * (eps[a] - m), 1e-9);
                for b in 0..3 {
                    let delta = if a == b { 1.0 } else { 0.0 };
                    approx_eq(en.stiffness[a][b], k + 2.0 * g * (delta - 1.0 / 3.0), 1e-9);
                }
            }
        }
    }

    #[test]
    fn mcc_energy_chain_matches_finite_differences() {
        let par = MccParams::benchmark();
        let psi = |eps: [f64; 3]| mcc_eval(&invariants_of(eps), &par).psi;
        let h = 1e-5;
        let cases = [[-0.011_f64, -0.018, -0.004], [-0.002, -0.009, -0.013]];
        for eps in cases {
            let en = principal_energy_chain(&mcc_eval(&invariants_of(eps), &par), eps);
            for a in 0..3 {
                let mut ep = eps;
                let mut em = eps;
                ep[a] += h;
                em[a] -= h;
                let grad = (psi(ep) - psi(em)) / (2.0 * h);
                approx_rel(en.sigma[a], grad, 1e-7);
                for b in 0..3 {
                    let mut epp = eps;
                    let mut epm = eps;
                    let mut emp = eps;
                    let mut emm = eps;
                    epp[a] += h;
                    epp[b] += h;
                    epm[a] += h;
                    epm[b] -= h;
                    emp[a] -= h;
                    emp[b] += h;
                    emm[a] -= h;
                    emm[b] -= h;
                    let hess =
                        (psi(epp) - psi(epm) - psi(emp) + psi(emm)) / (4.0 * h * h);
                    approx_rel(en.stiffness[a][b], hess, 1e-4);
                }
            }
        }
    }

    #[test]
    fn energy_chain_is_continuous_at_isotropic_states() {
        let par = MccParams::benchmark();
        let base = [-0.004_f64, -0.004, -0.004];
        let at = principal_energy_chain(&mcc_eval(&invariants_of(base), &par), base);
        let mut near = base;
        near[0] += 1e-9;
        let close = principal_energy_chain(&mcc_eval(&invariants_of(near), &par), near);
        for a in 0..3 {
            approx_rel(at.sigma[a], close.sigma[a], 1e-5);
            for b in 0..3 {
                approx_rel(at.stiffness[a][b], close.stiffness[a][b], 1e-4);
            }
        }
    }

    #[test]
    fn j2_yield_chain_matches_finite_differences() {
        let model = j2_model(appendix_elastic(), appendix_plastic());
        let sigma = [130.0_f64, -20.0, 45.0];
        let xi = 0.07;
        let y = model.yield_eval(sigma, xi).unwrap();
        let h = 1e-4;
        for a in 0..3 {
            let mut sp = sigma;
            let mut sm = sigma;
            sp[a] += h;
            sm[a] -= h;
            let fp = model.yield_eval(sp, xi).unwrap();
            let fm = model.yield_eval(sm, xi).unwrap();
            approx_rel(y.grad[a], (fp.f - fm.f) / (2.0 * h), 1e-7);
            for b in 0..3 {
                approx_rel(y.hess[a][b], (fp.grad[b] - fm.grad[b]) / (2.0 * h), 1e-6);
            }
            approx_rel(y.grad_xi[a], 0.0, 1e-12);
        }
        let yp = model.yield_eval(sigma, xi + h).unwrap();
        let ym = model.yield_eval(sigma, xi - h).unwrap();
        approx_rel(y.d_xi, (yp.f - ym.f) / (2.0 * h), 1e-9);
        // the gradient of a distance-like function has unit in-plane norm
        let g2 = y.grad[0] * y.grad[0] + y.grad[1] * y.grad[1] + y.grad[2] * y.grad[2];
        approx_eq(g2, 1.0, 1e-12);
        approx_eq(y.grad[0] + y.grad[1] + y.grad[2], 0.0, 1e-12);
    }

    #[test]
    fn chained_chart_matches_finite_differences() {
        let chart = ChainedYield {
            base: J2Chart { par: J2Params { sigma_y0: 100.0, hardening: 0.0 } },
            transform: HardeningTransform::Mixed { h: 150.0 },
        };
        let (rho, theta, xi) = (95.0_f64, 1.3_f64, 0.08_f64);
        let ld = chart.eval(rho, theta, xi).unwrap();
        let h = 1e-5;
        let at = |r: f64, t: f64, x: f64| chart.eval(r, t, x).unwrap();
        let args = [(rho + h, theta, xi), (rho, theta + h, xi), (rho, theta, xi + h)];
        let argsm = [(rho - h, theta, xi), (rho, theta - h, xi), (rho, theta, xi - h)];
        for i in 0..3 {
            let p = at(args[i].0, args[i].1, args[i].2);
            let m = at(argsm[i].0, argsm[i].1, argsm[i].2);
            approx_rel(ld.d[i], (p.f - m.f) / (2.0 * h), 1e-7);
            for j in 0..3 {
                approx_rel(ld.dd[j][i], (p.d[j] - m.d[j]) / (2.0 * h), 1e-6);
            }
        }
    }

    #[test]
    fn chained_chart_is_identity_at_zero_xi() {
        let base = J2Chart { par: J2Params { sigma_y0: 80.0, hardening: 0.0 } };
        for transform in [
            HardeningTransform::Isotropic { h: 120.0 },
            HardeningTransform::Mixed { h: 120.0 },
            HardeningTransform::Fictitious,
        ] {
            let chart = ChainedYield { base, transform };
            for (rho, theta) in [(40.0_f64, 0.3_f64), (110.0, 4.9)] {
                let ld = chart.eval(rho, theta, 0.0).unwrap();
                let b = base.eval(rho, theta, 0.0).unwrap();
                assert_eq!(ld.f, b.f);
                assert_eq!(ld.d[0], b.d[0]);
                assert_eq!(ld.d[1], b.d[1]);
            }
        }
    }

    #[test]
    fn j2_return_matches_radial_oracle() {
        let elastic = appendix_elastic();
        let plastic = appendix_plastic();
        let model = j2_model(elastic, plastic);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut state = MaterialState::initial();
        let mut oracle = J2OracleState::initial();
        let mut plastic_steps = 0;
        for _ in 0..120 {
            let deps = SymTensor3::new(
                0.008 * (2.0 * rng.gen::<f64>() - 1.0),
                0.008 * (2.0 * rng.gen::<f64>() - 1.0),
                0.008 * (2.0 * rng.gen::<f64>() - 1.0),
                0.004 * (2.0 * rng.gen::<f64>() - 1.0),
                0.004 * (2.0 * rng.gen::<f64>() - 1.0),
                0.004 * (2.0 * rng.gen::<f64>() - 1.0),
            );
            let res = integrate_step(&model, &state, &deps).unwrap();
            let (next, stress) = j2_oracle_step(&oracle, &deps, &elastic, &plastic).unwrap();
            let scale = 1.0 + stress.norm();
            assert!(res.stress.sub(&stress).norm() <= 1e-8 * scale);
            approx_eq(res.state.xi, (3.0 / 2.0_f64).sqrt() * next.eps_bar_p, 1e-10);
            assert!(res.state.xi >= state.xi);
            assert!(res.dissipation >= -1e-10);
            if res.plastic {
                plastic_steps += 1;
            }
            state = res.state;
            oracle = next;
        }
        assert!(plastic_steps >= 20, "only {plastic_steps} plastic steps");
    }

    #[test]
    fn on_surface_step_converges_quickly() {
        let model = j2_model(appendix_elastic(), appendix_plastic());
        let mut state = MaterialState::initial();
        // load well past first yield, then continue from the converged
        // on-surface state
        let deps = SymTensor3::diagonal(0.06, -0.02, -0.01);
        let first = integrate_step(&model, &state, &deps).unwrap();
        assert!(first.plastic);
        state = first.state;
        let further = SymTensor3::diagonal(0.004, -0.001, -0.0005);
        let res = integrate_step(&model, &state, &further).unwrap();
        assert!(res.plastic);
        assert!(res.iterations <= 2, "took {} iterations", res.iterations);
        approx_eq(res.yield_value, 0.0, 1e-8);
    }

    #[test]
    fn consistent_tangent_matches_finite_differences() {
        let model = j2_model(appendix_elastic(), appendix_plastic());
        let state = MaterialState::initial();
        let deps = SymTensor3::new(0.05, -0.015, -0.008, 0.012, -0.004, 0.006);
        let res = integrate_step(&model, &state, &deps).unwrap();
        assert!(res.plastic);
        let h = 1e-7;
        let probes = [
            SymTensor3::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0),
            SymTensor3::new(0.0, 1.0, -0.3, 0.0, 0.0, 0.0),
            SymTensor3::new(0.0, 0.0, 0.0, 1.0, 0.0, 0.0),
            SymTensor3::new(0.4, -0.2, 0.7, 0.3, -0.5, 0.1),
        ];
        for probe in probes {
            let dp = integrate_step(&model, &state, &deps.add(&probe.scale(h))).unwrap();
            let dm = integrate_step(&model, &state, &deps.add(&probe.scale(-h))).unwrap();
            let fd = dp.stress.sub(&dm.stress).scale(1.0 / (2.0 * h));
            let ct = contract_tangent(&res.tangent, &probe);
            let scale = 1.0 + fd.norm();
            assert!(
                ct.sub(&fd).norm() <= 1e-4 * scale,
                "tangent mismatch: {:?} vs {:?}",
                ct,
                fd
            );
        }
    }

    #[test]
    fn elastic_tangent_equals_hyperelastic_moduli() {
        let par = appendix_elastic();
        let (k, g) = (par.bulk(), par.shear());
        let model = j2_model(par, appendix_plastic());
        let state = MaterialState::initial();
        let deps = SymTensor3::new(0.01, -0.004, 0.002, 0.003, -0.001, 0.002);
        let res = integrate_step(&model, &state, &deps).unwrap();
        assert!(!res.plastic);
        let probe = SymTensor3::new(0.3, -0.1, 0.5, 0.2, -0.4, 0.1);
        let ct = contract_tangent(&res.tangent, &probe);
        let expect = SymTensor3::identity()
            .scale(k * probe.trace())
            .add(&probe.dev().scale(2.0 * g));
        assert!(ct.sub(&expect).norm() <= 1e-9 * (1.0 + expect.norm()));
    }

    #[test]
    fn tangent_handles_equal_trial_eigenvalues() {
        let model = j2_model(appendix_elastic(), appendix_plastic());
        let state = MaterialState::initial();
        // two coinciding trial principal strains
        let deps = SymTensor3::diagonal(0.05, 0.05, -0.03);
        let res = integrate_step(&model, &state, &deps).unwrap();
        assert!(res.plastic);
        for x in res.tangent.iter().flatten().flatten().flatten() {
            assert!(x.is_finite());
        }
        let h = 1e-7;
        let probe = SymTensor3::new(0.2, -0.6, 0.3, 0.5, 0.1, -0.2);
        let dp = integrate_step(&model, &state, &deps.add(&probe.scale(h))).unwrap();
        let dm = integrate_step(&model, &state, &deps.add(&probe.scale(-h))).unwrap();
        let fd = dp.stress.sub(&dm.stress).scale(1.0 / (2.0 * h));
        let ct = contract_tangent(&res.tangent, &probe);
        assert!(ct.sub(&fd).norm() <= 5e-4 * (1.0 + fd.norm()));
    }

    #[test]
    fn hydrostatic_trial_is_elastic() {
        let par = appendix_elastic();
        let model = j2_model(par, appendix_plastic());
        let state = MaterialState::initial();
        let deps = SymTensor3::identity().scale(0.01);
        let res = integrate_step(&model, &state, &deps).unwrap();
        assert!(!res.plastic);
        assert_eq!(res.yield_value, f64::NEG_INFINITY);
        let expect = SymTensor3::identity().scale(par.bulk() * 0.03);
        assert!(res.stress.sub(&expect).norm() <= 1e-9 * (1.0 + expect.norm()));
    }

    #[test]
    fn mcc_composite_converges_on_the_surface() {
        let model = CompositeModel {
            energy: Box::new(EnergyFunction::Mcc(MccParams::benchmark())),
            chart: Box::new(J2Chart { par: J2Params { sigma_y0: 30.0, hardening: 80.0 } }),
            flow: FlowRule::Associative,
        };
        let mut state = MaterialState::initial();
        let mut plastic_steps = 0;
        for n in 0..40 {
            // drained-compression style path with growing shear
            let deps = SymTensor3::diagonal(-0.0012 - 0.0002 * (n as f64 / 40.0), -0.0002, 0.0004);
            let res = integrate_step(&model, &state, &deps).unwrap();
            if res.plastic {
                plastic_steps += 1;
                let scale = 1.0 + res.stress.norm();
                assert!(res.yield_value.abs() <= 1e-7 * scale);
                assert!(res.dissipation >= -1e-10);
            }
            assert!(res.state.xi >= state.xi);
            state = res.state;
        }
        assert!(plastic_steps >= 5, "only {plastic_steps} plastic steps");
    }

    #[test]
    fn network_energy_chain_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net =
            NetworkModel::from_code("dmdd", 2, 1, 8, Activation::Tanh, &mut rng).unwrap();
        let law = NetworkEnergy { net };
        let model = CompositeModel {
            energy: Box::new(law),
            chart: Box::new(J2Chart { par: appendix_plastic() }),
            flow: FlowRule::Associative,
        };
        let eps = [0.013_f64, -0.006, 0.002];
        let en = model.energy(eps);
        let psi = |e: [f64; 3]| model.energy(e).psi;
        let h = 1e-6;
        for a in 0..3 {
            let mut ep = eps;
            let mut em = eps;
            ep[a] += h;
            em[a] -= h;
            approx_rel(en.sigma[a], (psi(ep) - psi(em)) / (2.0 * h), 1e-5);
            for b in 0..3 {
                let gp = model.energy(ep).sigma[b];
                let gm = model.energy(em).sigma[b];
                approx_rel(en.stiffness[a][b], (gp - gm) / (2.0 * h), 1e-4);
            }
        }
    }

    #[test]
    fn network_chart_removes_the_helper_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net =
            NetworkModel::from_code("dmdd", 3, 1, 8, Activation::Tanh, &mut rng).unwrap();
        let amp = 2.0;
        let chart = NetworkChart::new(net.clone(), amp);
        let (rho, theta, xi) = (1.2_f64, 2.4_f64, 0.3_f64);
        let ld = chart.eval(rho, theta, xi).unwrap();
        let t = net.taylor_eval(&[rho, theta, xi], 2);
        let h = t.hessian.as_ref().unwrap();
        approx_eq(ld.f, t.value[0] - amp * (theta / 3.0).cos(), 1e-12);
        approx_eq(ld.d[0], t.jacobian[0][0], 1e-15);
        approx_eq(ld.d[1], t.jacobian[0][1] + amp / 3.0 * (theta / 3.0).sin(), 1e-12);
        approx_eq(ld.d[2], t.jacobian[0][2], 1e-15);
        approx_eq(ld.dd[1][1], h[0][1][1] + amp / 9.0 * (theta / 3.0).cos(), 1e-12);
        approx_eq(ld.dd[0][2], h[0][0][2], 1e-15);
    }

    #[test]
    fn network_flow_rule_reads_the_direction_net() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let net =
            NetworkModel::from_code("ddd", 3, 3, 8, Activation::Tanh, &mut rng).unwrap();
        let model = CompositeModel {
            energy: Box::new(EnergyFunction::Linear(appendix_elastic())),
            chart: Box::new(J2Chart { par: appendix_plastic() }),
            flow: FlowRule::Network(net.clone()),
        };
        let sigma = [120.0_f64, 35.0, -40.0];
        let fe = model.flow_eval(sigma, 0.1).unwrap();
        let value = net.forward(&sigma);
        let jac = net.input_jacobian(&sigma);
        for i in 0..3 {
            approx_eq(fe.dir[i], value[i], 1e-15);
            approx_eq(fe.d_xi[i], 0.0, 1e-15);
            for j in 0..3 {
                approx_eq(fe.jac[i][j], jac[i][j], 1e-15);
            }
        }
    }
}
