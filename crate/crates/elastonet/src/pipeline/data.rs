//! Dataset generation: elastic invariant grids, radial yield-surface
//! exploration with level-set sampling, and plastic flow tables.

use crate::invariants::{q_matrix, SymTensor3};
use crate::levelset::{auxiliary_radii, BoundaryPolyline, SignedDistanceField, YieldSurfaceSnapshot, DENSIFY_POINTS};
use crate::matlib::{synthetic_surface_flow_angle, synthetic_surface_radius, SyntheticSurfaceParams};
use crate::pipeline::io::CsvTable;
use crate::pipeline::PipelineError;
use crate::returnmap::{integrate_step, EnergyLaw, MaterialModel, MaterialState};
use crate::training::{EnergySample, FlowSample, YieldDataset, YieldSample};

/// Internal-variable level that counts as first contact with the initial
/// yield surface during exploration
pub const XI_CONTACT: f64 = 1e-8;

/// Largest shear-strain coordinate the yield exploration is willing to reach
const MAX_EXPLORE_S: f64 = 1.0;

/// Relative step used for finite-difference gradients of sampled signed
/// distance fields; kept well above the chord error of the densified
/// boundary polyline so facet noise does not leak into the gradients
const SDF_GRADIENT_STEP: f64 = 1e-3;

/// Holds the invariant-space bounds and resolution of an elastic dataset
#[derive(Clone, Copy, Debug)]
pub struct ElasticDatasetSpec {
    pub eps_v_min: f64,
    pub eps_v_max: f64,
    pub eps_s_min: f64,
    pub eps_s_max: f64,
    pub n_v: usize,
    pub n_s: usize,
}

impl Default for ElasticDatasetSpec {
    fn default() -> Self {
        ElasticDatasetSpec {
            eps_v_min: -0.02,
            eps_v_max: 0.02,
            eps_s_min: 0.0,
            eps_s_max: 0.03,
            n_v: 50,
            n_s: 50,
        }
    }
}

/// Samples an energy law on a uniform invariant grid; rows iterate eps_v in
/// the outer loop and eps_s in the inner loop
pub fn gen_elastic_dataset(spec: &ElasticDatasetSpec, law: &dyn EnergyLaw) -> Vec<EnergySample> {
    let mut out = Vec::with_capacity(spec.n_v * spec.n_s);
    for i in 0..spec.n_v {
        let fv = if spec.n_v > 1 { i as f64 / (spec.n_v - 1) as f64 } else { 0.0 };
        let eps_v = spec.eps_v_min + fv * (spec.eps_v_max - spec.eps_v_min);
        for j in 0..spec.n_s {
            let fs = if spec.n_s > 1 { j as f64 / (spec.n_s - 1) as f64 } else { 0.0 };
            let eps_s = spec.eps_s_min + fs * (spec.eps_s_max - spec.eps_s_min);
            let ev = law.eval(&crate::invariants::StrainInvariants { eps_v, eps_s });
            out.push(EnergySample {
                eps_v,
                eps_s,
                psi: ev.psi,
                p: ev.p,
                q: ev.q,
                d_vv: ev.d_vv,
                d_ss: ev.d_ss,
                d_vs: ev.d_vs,
            });
        }
    }
    out
}

/// Converts energy samples to their CSV table form
pub fn elastic_table(samples: &[EnergySample], seed: u64, oracle: &str) -> CsvTable {
    let mut t = CsvTable::new(&["eps_v", "eps_s", "psi", "p", "q", "d_vv", "d_ss", "d_vs"])
        .with_meta("kind", "elastic-energy")
        .with_meta("oracle", oracle)
        .with_meta("seed", &seed.to_string())
        .with_meta("units", "kPa, strain dimensionless");
    for s in samples {
        t.push_row_f64(&[s.eps_v, s.eps_s, s.psi, s.p, s.q, s.d_vv, s.d_ss, s.d_vs]);
    }
    t
}

/// Reads energy samples back from a CSV table
pub fn elastic_from_table(table: &CsvTable) -> Result<Vec<EnergySample>, PipelineError> {
    let mut out = Vec::with_capacity(table.rows.len());
    for row in 0..table.rows.len() {
        let f = |name: &str| table.f64_cell(row, name);
        out.push(EnergySample {
            eps_v: f("eps_v")?,
            eps_s: f("eps_s")?,
            psi: f("psi")?,
            p: f("p")?,
            q: f("q")?,
            d_vv: f("d_vv")?,
            d_ss: f("d_ss")?,
            d_vs: f("d_vs")?,
        });
    }
    Ok(out)
}

/// Identifies how signed distances to a sampled surface are computed
#[derive(Clone, Copy, Debug)]
pub enum SdfSource {
    /// Exact distance to the densified boundary polyline
    Polyline,
    /// Bilinear samples of a fast-marched polar field
    FastMarch { n_rho: usize, n_theta: usize },
}

/// Holds the yield exploration setup
#[derive(Clone, Copy, Debug)]
pub struct YieldGenSpec {
    pub n_angles: usize,
    pub n_snapshots: usize,
    pub xi_max: f64,
    pub sdf: SdfSource,
}

impl Default for YieldGenSpec {
    fn default() -> Self {
        YieldGenSpec { n_angles: 140, n_snapshots: 10, xi_max: 0.2, sdf: SdfSource::Polyline }
    }
}

impl YieldGenSpec {
    /// Returns the snapshot targets of the internal variable; the first entry
    /// is the initial surface
    pub fn xi_targets(&self) -> Vec<f64> {
        let n = self.n_snapshots.max(2);
        (0..n).map(|k| self.xi_max * k as f64 / (n - 1) as f64).collect()
    }
}

/// Holds a generated yield dataset: level-set rows, flow rows, and the raw
/// surface snapshots
#[derive(Clone, Debug)]
pub struct YieldGenResult {
    pub dataset: YieldDataset,
    pub flow: Vec<FlowSample>,
    pub snapshots: Vec<YieldSurfaceSnapshot>,
}

/// Samples the synthetic evolving surface into a yield dataset; flow
/// directions come from the surface normal chart
pub fn gen_yield_dataset_synthetic(
    par: &SyntheticSurfaceParams,
    spec: &YieldGenSpec,
) -> YieldGenResult {
    let qm = q_matrix();
    let mut snapshots = Vec::new();
    let mut flow = Vec::new();
    for xi in spec.xi_targets() {
        let snap = YieldSurfaceSnapshot::from_radius_fn(xi, spec.n_angles, |theta| {
            synthetic_surface_radius(theta, xi, par)
        });
        for (theta, rho) in &snap.points {
            let sigma = [
                qm[0][0] * rho * theta.cos() + qm[0][1] * rho * theta.sin(),
                qm[1][0] * rho * theta.cos() + qm[1][1] * rho * theta.sin(),
                qm[2][0] * rho * theta.cos() + qm[2][1] * rho * theta.sin(),
            ];
            let beta = synthetic_surface_flow_angle(*theta, xi, par);
            let dir = [
                qm[0][0] * beta.cos() + qm[0][1] * beta.sin(),
                qm[1][0] * beta.cos() + qm[1][1] * beta.sin(),
                qm[2][0] * beta.cos() + qm[2][1] * beta.sin(),
            ];
            flow.push(FlowSample { sigma, flow: dir });
        }
        snapshots.push(snap);
    }
    YieldGenResult { dataset: rows_from_snapshots(&snapshots, spec), flow, snapshots }
}

/// Holds one elastic-bound probe along a principal stress axis
#[derive(Clone, Copy, Debug)]
pub struct ElasticProbe {
    pub theta: f64,
    pub rho: f64,
    pub s_contact: f64,
}

/// Probes the elastic region along the three principal stress axes and
/// returns the contact radius of each probe
pub fn bootstrap_probes(model: &dyn MaterialModel) -> Result<[ElasticProbe; 3], PipelineError> {
    // pi-plane angles of the positive principal axes
    let axes = [
        11.0 * std::f64::consts::PI / 6.0,
        std::f64::consts::FRAC_PI_2,
        7.0 * std::f64::consts::PI / 6.0,
    ];
    let mut out = [ElasticProbe { theta: 0.0, rho: 0.0, s_contact: 0.0 }; 3];
    for (k, theta) in axes.into_iter().enumerate() {
        let state = MaterialState::initial();
        let (landed, step) = land_on_xi(model, &state, theta, 0.0, XI_CONTACT, 0.01)?;
        let lode = crate::returnmap::lode_coordinates(diagonal_of(&step.stress))
            .map_err(|source| PipelineError::Step { step: 0, source })?;
        out[k] = ElasticProbe { theta, rho: lode.0, s_contact: landed.1 };
    }
    Ok(out)
}

/// Returns the diagonal of a coaxial (axis-aligned) tensor as the principal
/// triple in chart order; valid because the exploration drives diagonal
/// strain paths, so stresses never rotate off the coordinate axes
fn diagonal_of(t: &SymTensor3) -> [f64; 3] {
    let a = t.as_array();
    [a[0], a[1], a[2]]
}

/// Explores an evolving yield surface by driving a material model radially at
/// each chart angle and landing on uniform internal-variable snapshots;
/// records each landing as a boundary point plus the trial-minus-final flow
/// direction
pub fn gen_yield_dataset_driver(
    model: &dyn MaterialModel,
    spec: &YieldGenSpec,
) -> Result<YieldGenResult, PipelineError> {
    let probes = bootstrap_probes(model)?;
    let s_hint = probes.iter().map(|p| p.s_contact).fold(0.0_f64, f64::max).max(1e-4);
    let targets = spec.xi_targets();
    let mut per_snapshot: Vec<Vec<(f64, f64)>> = vec![Vec::new(); targets.len()];
    let mut flow = Vec::new();
    for ray in 0..spec.n_angles {
        let theta = 2.0 * std::f64::consts::PI * ray as f64 / spec.n_angles as f64;
        let mut state = MaterialState::initial();
        let mut s = 0.0;
        for (k, xi_target) in targets.iter().enumerate() {
            // the initial surface is recorded at first plastic contact
            let goal = if k == 0 { XI_CONTACT } else { *xi_target };
            let ((next, s_next), step) =
                land_on_xi(model, &state, theta, s, goal, s_hint).map_err(|e| match e {
                    PipelineError::NoYield { .. } => PipelineError::NoYield {
                        detail: format!("ray {ray} (theta {theta:.4}) never reaches xi {goal:e}"),
                    },
                    other => other,
                })?;
            // the trial stress of the landing increment, in the same
            // axis-aligned chart order as the converged stress
            let trial_eps = state.eps_e.add(&super::driver::strain_at(theta, s_next))
                .sub(&super::driver::strain_at(theta, s));
            let trial_sigma = model.energy(diagonal_of(&trial_eps)).sigma;
            let sigma = diagonal_of(&step.stress);
            let lode = crate::returnmap::lode_coordinates(sigma)
                .map_err(|source| PipelineError::Step { step: ray, source })?;
            per_snapshot[k].push((lode.1, lode.0));
            // normalized difference between the trial and converged stress
            let mut dir = [0.0; 3];
            let mut norm = 0.0;
            for a in 0..3 {
                dir[a] = trial_sigma[a] - sigma[a];
                norm += dir[a] * dir[a];
            }
            let norm = norm.sqrt().max(1e-300);
            for d in &mut dir {
                *d /= norm;
            }
            flow.push(FlowSample { sigma, flow: dir });
            state = next;
            s = s_next;
        }
    }
    let mut snapshots = Vec::with_capacity(targets.len());
    for (k, xi) in targets.iter().enumerate() {
        let mut points = std::mem::take(&mut per_snapshot[k]);
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        snapshots.push(YieldSurfaceSnapshot { xi: *xi, points });
    }
    Ok(YieldGenResult { dataset: rows_from_snapshots(&snapshots, spec), flow, snapshots })
}

type Landing = ((MaterialState, f64), crate::returnmap::StepResult);

/// Advances the state along the ray until the internal variable lands on the
/// target (bracket expansion plus bisection on a single increment), returning
/// the new state with its path coordinate and the landing step
fn land_on_xi(
    model: &dyn MaterialModel,
    state: &MaterialState,
    theta: f64,
    s_current: f64,
    xi_target: f64,
    s_hint: f64,
) -> Result<Landing, PipelineError> {
    let probe = |ds: f64| -> Result<crate::returnmap::StepResult, PipelineError> {
        let deps = super::driver::strain_at(theta, s_current + ds)
            .sub(&super::driver::strain_at(theta, s_current));
        integrate_step(model, state, &deps)
            .map_err(|source| PipelineError::Step { step: 0, source })
    };
    // bracket: expand until the target is crossed
    let mut hi = s_hint.max(1e-6);
    let mut lo = 0.0;
    loop {
        let res = probe(hi)?;
        if res.state.xi >= xi_target {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if s_current + hi > MAX_EXPLORE_S {
            return Err(PipelineError::NoYield {
                detail: format!("exploration exceeded eps_s {MAX_EXPLORE_S}"),
            });
        }
    }
    // bisect the increment to land on the target
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let res = probe(mid)?;
        if res.state.xi >= xi_target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let res = probe(hi)?;
    Ok(((res.state, s_current + hi), res))
}

/// Builds level-set training rows from surface snapshots: for every snapshot
/// angle, auxiliary radii bracket the boundary and each point records the
/// signed distance and its gradient direction
pub fn rows_from_snapshots(snapshots: &[YieldSurfaceSnapshot], spec: &YieldGenSpec) -> YieldDataset {
    let mut samples = Vec::new();
    let mut radius_sum = 0.0;
    let mut radius_count = 0usize;
    for snap in snapshots {
        let sd: Box<dyn Fn(f64, f64) -> f64> = match spec.sdf {
            SdfSource::Polyline => {
                let poly = BoundaryPolyline::from_snapshot(snap, DENSIFY_POINTS);
                Box::new(move |rho, theta| poly.signed_distance(rho, theta))
            }
            SdfSource::FastMarch { n_rho, n_theta } => {
                let rho_max = 2.2 * snap.max_radius();
                let snap_clone = snap.clone();
                let field = SignedDistanceField::from_fn(n_rho, n_theta, rho_max, |rho, theta| {
                    rho - snap_clone.radius_at(theta)
                })
                .fast_march_reinitialize();
                Box::new(move |rho, theta| field.sample(rho, theta))
            }
        };
        for (theta, rho_outer) in &snap.points {
            radius_sum += rho_outer;
            radius_count += 1;
            let radii = auxiliary_radii(*rho_outer);
            let h_rho = SDF_GRADIENT_STEP * rho_outer;
            for (j, r) in radii.iter().enumerate() {
                let phi = sd(*r, *theta);
                let grad_rho = (sd(r + h_rho, *theta) - sd(r - h_rho, *theta)) / (2.0 * h_rho);
                let grad_theta_hat = (sd(*r, theta + SDF_GRADIENT_STEP)
                    - sd(*r, theta - SDF_GRADIENT_STEP))
                    / (2.0 * SDF_GRADIENT_STEP * r);
                samples.push(YieldSample {
                    rho: *r,
                    theta: *theta,
                    xi: snap.xi,
                    phi,
                    grad_rho,
                    grad_theta_hat,
                    boundary: j == 6,
                });
            }
        }
    }
    let rho_bar = if radius_count > 0 { radius_sum / radius_count as f64 } else { 1.0 };
    YieldDataset { samples, rho_bar }
}

/// Converts a yield dataset to its CSV table form
pub fn yield_table(dataset: &YieldDataset, seed: u64, source: &str) -> CsvTable {
    let mut t = CsvTable::new(&["rho", "theta", "xi", "phi", "grad_rho", "grad_theta_hat", "boundary"])
        .with_meta("kind", "yield-sdf")
        .with_meta("source", source)
        .with_meta("rho_bar", &super::io::fmt_f64(dataset.rho_bar))
        .with_meta("seed", &seed.to_string())
        .with_meta("units", "kPa");
    for s in &dataset.samples {
        t.push_row_f64(&[
            s.rho,
            s.theta,
            s.xi,
            s.phi,
            s.grad_rho,
            s.grad_theta_hat,
            if s.boundary { 1.0 } else { 0.0 },
        ]);
    }
    t
}

/// Reads a yield dataset back from a CSV table; external surface data can be
/// imported through this same format
pub fn yield_from_table(table: &CsvTable) -> Result<YieldDataset, PipelineError> {
    let rho_bar = table
        .meta_value("rho_bar")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| PipelineError::Invalid("yield table lacks a rho_bar meta entry".into()))?;
    let mut samples = Vec::with_capacity(table.rows.len());
    for row in 0..table.rows.len() {
        let f = |name: &str| table.f64_cell(row, name);
        samples.push(YieldSample {
            rho: f("rho")?,
            theta: f("theta")?,
            xi: f("xi")?,
            phi: f("phi")?,
            grad_rho: f("grad_rho")?,
            grad_theta_hat: f("grad_theta_hat")?,
            boundary: f("boundary")? != 0.0,
        });
    }
    Ok(YieldDataset { samples, rho_bar })
}

/// Converts flow samples to their CSV table form
pub fn flow_table(samples: &[FlowSample], seed: u64, source: &str) -> CsvTable {
    let mut t =
        CsvTable::new(&["sigma_1", "sigma_2", "sigma_3", "flow_1", "flow_2", "flow_3"])
            .with_meta("kind", "flow")
            .with_meta("source", source)
            .with_meta("seed", &seed.to_string())
            .with_meta("units", "kPa, direction dimensionless");
    for s in samples {
        t.push_row_f64(&[s.sigma[0], s.sigma[1], s.sigma[2], s.flow[0], s.flow[1], s.flow[2]]);
    }
    t
}

/// Reads flow samples back from a CSV table
pub fn flow_from_table(table: &CsvTable) -> Result<Vec<FlowSample>, PipelineError> {
    let mut out = Vec::with_capacity(table.rows.len());
    for row in 0..table.rows.len() {
        let f = |name: &str| table.f64_cell(row, name);
        out.push(FlowSample {
            sigma: [f("sigma_1")?, f("sigma_2")?, f("sigma_3")?],
            flow: [f("flow_1")?, f("flow_2")?, f("flow_3")?],
        });
    }
    Ok(out)
}

////////////////////////////////////////////////////////////////////////////////
