//! Strain-controlled loading protocols and the material-point path driver.

use rand::Rng;

use crate::invariants::{
    lode_from_principal, q_matrix, spectral_decompose, strain_invariants, stress_invariants,
    SymTensor3,
};
use crate::pipeline::io::CsvTable;
use crate::pipeline::PipelineError;
use crate::returnmap::{integrate_step, EnergyLaw, MaterialModel, MaterialState};

/// Default number of increments per loading path
pub const DEFAULT_INCREMENTS: usize = 300;

/// Relative stress departure that flags the onset of yielding
pub const YIELD_DETECT_TOL: f64 = 1e-3;

/// Plastic-multiplier threshold that flags the onset of yielding on paths
/// with a recorded internal variable
pub const YIELD_DETECT_XI: f64 = 1e-8;

/// Identifies a strain-controlled loading protocol: deviatoric strain along a
/// fixed pi-plane direction, parameterized by the signed shear coordinate s
/// with |s| = eps_s
#[derive(Clone, Debug)]
pub enum StressPathProtocol {
    /// Radial loading from zero to the full amplitude
    MonotonicRadial { theta: f64, eps_s_max: f64, increments: usize },
    /// Radial loading interrupted by unload/reload excursions; each entry is
    /// (peak fraction of the amplitude, unload-to fraction of that peak)
    LoadUnload {
        theta: f64,
        eps_s_max: f64,
        increments: usize,
        unloads: Vec<(f64, f64)>,
    },
    /// Signed amplitude schedule visited in order, as fractions of the
    /// amplitude
    Cyclic { theta: f64, eps_s_max: f64, increments: usize, amplitudes: Vec<f64> },
}

impl StressPathProtocol {
    /// Returns the protocol family name used in artifact file names
    pub fn name(&self) -> &'static str {
        match self {
            StressPathProtocol::MonotonicRadial { .. } => "monotonic",
            StressPathProtocol::LoadUnload { .. } => "load-unload",
            StressPathProtocol::Cyclic { .. } => "cyclic",
        }
    }

    /// Returns the pi-plane angle of the strain direction
    pub fn theta(&self) -> f64 {
        match self {
            StressPathProtocol::MonotonicRadial { theta, .. }
            | StressPathProtocol::LoadUnload { theta, .. }
            | StressPathProtocol::Cyclic { theta, .. } => *theta,
        }
    }

    /// Returns the nominal increment count
    pub fn increments(&self) -> usize {
        match self {
            StressPathProtocol::MonotonicRadial { increments, .. }
            | StressPathProtocol::LoadUnload { increments, .. }
            | StressPathProtocol::Cyclic { increments, .. } => *increments,
        }
    }

    /// Returns the signed breakpoints of the s coordinate, not including the
    /// initial zero
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            StressPathProtocol::MonotonicRadial { eps_s_max, .. } => vec![*eps_s_max],
            StressPathProtocol::LoadUnload { eps_s_max, unloads, .. } => {
                let mut out = Vec::new();
                for (peak, down) in unloads {
                    out.push(peak * eps_s_max);
                    out.push(down * peak * eps_s_max);
                }
                out.push(*eps_s_max);
                out
            }
            StressPathProtocol::Cyclic { eps_s_max, amplitudes, .. } => {
                amplitudes.iter().map(|a| a * eps_s_max).collect()
            }
        }
    }

    /// Expands the breakpoints into a per-step schedule of s values with a
    /// uniform base step size; returns the schedule and the inclusive step
    /// range of every monotone leg
    pub fn schedule(&self) -> (Vec<f64>, Vec<(usize, usize)>) {
        let (max, increments) = match self {
            StressPathProtocol::MonotonicRadial { eps_s_max, increments, .. }
            | StressPathProtocol::LoadUnload { eps_s_max, increments, .. }
            | StressPathProtocol::Cyclic { eps_s_max, increments, .. } => {
                (*eps_s_max, *increments)
            }
        };
        let ds = max / increments.max(1) as f64;
        let mut schedule = Vec::new();
        let mut legs = Vec::new();
        let mut current = 0.0;
        for target in self.breakpoints() {
            let gap = target - current;
            if gap == 0.0 {
                continue;
            }
            let n = (gap.abs() / ds).ceil().max(1.0) as usize;
            let start = schedule.len() + 1;
            for k in 1..=n {
                schedule.push(current + gap * k as f64 / n as f64);
            }
            legs.push((start, schedule.len()));
            current = target;
        }
        (schedule, legs)
    }

    /// Draws a load-unload protocol with 1 to 3 unload points at random peaks
    pub fn random_load_unload(
        theta: f64,
        eps_s_max: f64,
        increments: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let count = rng.gen_range(1..=3_usize);
        let mut peaks: Vec<f64> = (0..count).map(|_| rng.gen_range(0.35..0.9)).collect();
        peaks.sort_by(f64::total_cmp);
        let unloads = peaks
            .into_iter()
            .map(|p| (p, rng.gen_range(0.1..0.7)))
            .collect();
        StressPathProtocol::LoadUnload { theta, eps_s_max, increments, unloads }
    }
}

/// Returns the unit deviatoric principal direction at a pi-plane angle
pub fn deviatoric_direction(theta: f64) -> [f64; 3] {
    let qm = q_matrix();
    let (c, s) = (theta.cos(), theta.sin());
    [
        qm[0][0] * c + qm[0][1] * s,
        qm[1][0] * c + qm[1][1] * s,
        qm[2][0] * c + qm[2][1] * s,
    ]
}

/// Returns the diagonal strain tensor with eps_s = |s| along the direction at
/// the given pi-plane angle
pub fn strain_at(theta: f64, s: f64) -> SymTensor3 {
    let n = deviatoric_direction(theta);
    let f = (3.0 / 2.0_f64).sqrt() * s;
    SymTensor3::diagonal(f * n[0], f * n[1], f * n[2])
}

/// Holds one recorded step of a driven path
#[derive(Clone, Copy, Debug)]
pub struct PathStep {
    pub step: usize,
    pub s: f64,
    pub eps: SymTensor3,
    pub stress: SymTensor3,
    pub eps_v: f64,
    pub eps_s: f64,
    pub p: f64,
    pub q: f64,
    pub rho: f64,
    pub theta: f64,
    pub xi: f64,
    pub delta_lambda: f64,
    pub plastic: bool,
    pub dissipation: f64,
}

/// Holds a driven path: the initial state row, every converged step, and the
/// inclusive step ranges of the monotone legs
#[derive(Clone, Debug)]
pub struct PathRecord {
    pub description: String,
    pub steps: Vec<PathStep>,
    pub legs: Vec<(usize, usize)>,
}

impl PathRecord {
    /// Returns the (eps_s coordinate, q) series of the path
    pub fn s_q(&self) -> Vec<(f64, f64)> {
        self.steps.iter().map(|st| (st.s, st.q)).collect()
    }

    /// Returns the final internal variable
    pub fn final_xi(&self) -> f64 {
        self.steps.last().map(|s| s.xi).unwrap_or(0.0)
    }
}

fn record_step(step: usize, s: f64, eps: SymTensor3, stress: SymTensor3, xi: f64, delta_lambda: f64, plastic: bool, dissipation: f64) -> PathStep {
    let ei = strain_invariants(&eps);
    let si = stress_invariants(&stress);
    let dec = spectral_decompose(&stress);
    let (rho, theta) = match lode_from_principal(dec.values) {
        Ok(lp) => (lp.rho, lp.theta),
        Err(_) => (0.0, f64::NAN),
    };
    PathStep {
        step,
        s,
        eps,
        stress,
        eps_v: ei.eps_v,
        eps_s: ei.eps_s,
        p: si.p,
        q: si.q,
        rho,
        theta,
        xi,
        delta_lambda,
        plastic,
        dissipation,
    }
}

/// Drives a material model along a protocol and records every step
pub fn run_path_driver(
    model: &dyn MaterialModel,
    protocol: &StressPathProtocol,
) -> Result<PathRecord, PipelineError> {
    let (schedule, legs) = protocol.schedule();
    let mut state = MaterialState::initial();
    let mut steps = Vec::with_capacity(schedule.len() + 1);
    steps.push(record_step(0, 0.0, SymTensor3::zero(), SymTensor3::zero(), 0.0, 0.0, false, 0.0));
    let mut prev = 0.0;
    for (idx, s) in schedule.iter().enumerate() {
        let deps = strain_at(protocol.theta(), *s).sub(&strain_at(protocol.theta(), prev));
        let res = integrate_step(model, &state, &deps)
            .map_err(|source| PipelineError::Step { step: idx + 1, source })?;
        steps.push(record_step(
            idx + 1,
            *s,
            strain_at(protocol.theta(), *s),
            res.stress,
            res.state.xi,
            res.delta_lambda,
            res.plastic,
            res.dissipation,
        ));
        state = res.state;
        prev = *s;
    }
    Ok(PathRecord {
        description: format!("{} theta={:.6} amp={:.6}", protocol.name(), protocol.theta(), {
            let b = protocol.breakpoints();
            b.last().copied().unwrap_or(0.0)
        }),
        steps,
        legs,
    })
}

/// Holds the detected onset of plastic yielding on a path
#[derive(Clone, Copy, Debug)]
pub struct YieldOnset {
    pub index: usize,
    pub q: f64,
    pub rho: f64,
}

/// Detects the first step whose stress departs from the elastic prediction of
/// the given energy law by more than `tol_rel` in relative norm
pub fn detect_initial_yield(
    record: &PathRecord,
    elastic: &dyn EnergyLaw,
    tol_rel: f64,
) -> Result<YieldOnset, PipelineError> {
    for st in &record.steps {
        let inv = strain_invariants(&st.eps);
        let ev = elastic.eval(&inv);
        // coaxial elastic prediction: p from the volumetric response, the
        // deviator along the strain deviator
        let dev = st.eps.dev();
        let norm = dev.norm();
        let pred = if norm == 0.0 {
            SymTensor3::identity().scale(ev.p)
        } else {
            SymTensor3::identity()
                .scale(ev.p)
                .add(&dev.scale((2.0 / 3.0_f64).sqrt() * ev.q / norm))
        };
        let departure = st.stress.sub(&pred).norm();
        if departure > tol_rel * st.stress.norm().max(1e-12) {
            return Ok(YieldOnset { index: st.step, q: st.q, rho: st.rho });
        }
    }
    Err(PipelineError::NoYield { detail: format!("no departure beyond {tol_rel:e} on `{}`", record.description) })
}

/// Detects the first step whose recorded internal variable exceeds the
/// threshold
pub fn detect_initial_yield_by_xi(
    record: &PathRecord,
    tol: f64,
) -> Result<YieldOnset, PipelineError> {
    for st in &record.steps {
        if st.xi > tol {
            return Ok(YieldOnset { index: st.step, q: st.q, rho: st.rho });
        }
    }
    Err(PipelineError::NoYield {
        detail: format!("internal variable stays below {tol:e} on `{}`", record.description),
    })
}

/// Fits the least-squares slope dy/dx of a point series
pub fn fit_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in points {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Fits the unloading slope dq/d(eps_s) over one leg of a record, skipping
/// points whose shear coordinate is below a floor fraction of the leg peak;
/// the floor must be high enough that the kept window ends before the
/// deviatoric stress reverses (q folds at zero and the fit would straddle
/// the fold)
pub fn unloading_slope(record: &PathRecord, leg: (usize, usize), floor: f64) -> Option<f64> {
    let peak = record.steps[leg.0.saturating_sub(1)].s.abs().max(record.steps[leg.1].s.abs());
    let pts: Vec<(f64, f64)> = record.steps[leg.0 - 1..=leg.1]
        .iter()
        .filter(|st| st.s.abs() >= floor * peak)
        .map(|st| (st.eps_s, st.q))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    Some(fit_slope(&pts))
}

/// Calculates the root-mean-square difference of the q invariant between two
/// step-aligned records
pub fn rms_q_error(a: &PathRecord, b: &PathRecord) -> f64 {
    assert_eq!(a.steps.len(), b.steps.len(), "records must be step-aligned");
    let mut acc = 0.0;
    for (sa, sb) in a.steps.iter().zip(&b.steps) {
        let d = sa.q - sb.q;
        acc += d * d;
    }
    (acc / a.steps.len() as f64).sqrt()
}

/// Calculates the root-mean-square difference of q between a record and a
/// predicted stress series aligned with its steps
pub fn rms_q_error_vs(a: &PathRecord, stresses: &[SymTensor3]) -> f64 {
    assert_eq!(a.steps.len(), stresses.len(), "series must be step-aligned");
    let mut acc = 0.0;
    for (sa, sb) in a.steps.iter().zip(stresses) {
        let d = sa.q - stress_invariants(sb).q;
        acc += d * d;
    }
    (acc / a.steps.len() as f64).sqrt()
}

/// Converts a path record into its CSV table form
pub fn path_table(record: &PathRecord, seed: u64) -> CsvTable {
    let mut t = CsvTable::new(&[
        "step", "s", "eps_xx", "eps_yy", "eps_zz", "eps_xy", "eps_yz", "eps_xz", "sig_xx",
        "sig_yy", "sig_zz", "sig_xy", "sig_yz", "sig_xz", "eps_v", "eps_s", "p", "q", "rho",
        "theta", "xi", "delta_lambda", "plastic", "dissipation",
    ])
    .with_meta("kind", "path")
    .with_meta("protocol", &record.description)
    .with_meta("legs", &legs_text(&record.legs))
    .with_meta("seed", &seed.to_string())
    .with_meta("units", "kPa, strain dimensionless");
    for st in &record.steps {
        let e = st.eps.as_array();
        let sg = st.stress.as_array();
        t.push_row_f64(&[
            st.step as f64,
            st.s,
            e[0],
            e[1],
            e[2],
            e[3],
            e[4],
            e[5],
            sg[0],
            sg[1],
            sg[2],
            sg[3],
            sg[4],
            sg[5],
            st.eps_v,
            st.eps_s,
            st.p,
            st.q,
            st.rho,
            st.theta,
            st.xi,
            st.delta_lambda,
            if st.plastic { 1.0 } else { 0.0 },
            st.dissipation,
        ]);
    }
    t
}

/// Reconstructs a path record from its CSV table form
pub fn path_from_table(table: &CsvTable) -> Result<PathRecord, PipelineError> {
    let mut steps = Vec::with_capacity(table.rows.len());
    for row in 0..table.rows.len() {
        let f = |name: &str| table.f64_cell(row, name);
        let eps = SymTensor3::from_array([
            f("eps_xx")?,
            f("eps_yy")?,
            f("eps_zz")?,
            f("eps_xy")?,
            f("eps_yz")?,
            f("eps_xz")?,
        ]);
        let stress = SymTensor3::from_array([
            f("sig_xx")?,
            f("sig_yy")?,
            f("sig_zz")?,
            f("sig_xy")?,
            f("sig_yz")?,
            f("sig_xz")?,
        ]);
        steps.push(PathStep {
            step: f("step")? as usize,
            s: f("s")?,
            eps,
            stress,
            eps_v: f("eps_v")?,
            eps_s: f("eps_s")?,
            p: f("p")?,
            q: f("q")?,
            rho: f("rho")?,
            theta: f("theta")?,
            xi: f("xi")?,
            delta_lambda: f("delta_lambda")?,
            plastic: f("plastic")? != 0.0,
            dissipation: f("dissipation")?,
        });
    }
    let legs = table
        .meta_value("legs")
        .map(parse_legs)
        .transpose()?
        .unwrap_or_default();
    Ok(PathRecord {
        description: table.meta_value("protocol").unwrap_or("imported").to_string(),
        steps,
        legs,
    })
}

fn legs_text(legs: &[(usize, usize)]) -> String {
    legs.iter()
        .map(|(a, b)| format!("{a}-{b}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_legs(text: &str) -> Result<Vec<(usize, usize)>, PipelineError> {
    text.split_whitespace()
        .map(|item| {
            item.split_once('-')
                .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                .ok_or_else(|| PipelineError::Invalid(format!("bad leg range `{item}`")))
        })
        .collect()
}

////////////////////////////////////////////////////////////////////////////////
