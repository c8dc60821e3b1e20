//! Implements the training stack: Sobolev-style losses on values, first
//! derivatives, and second derivatives of energy networks, level-set losses
//! on yield networks (value, gradient rotation, Eikonal residual, convexity
//! penalty), flow-direction losses with a plastic-work penalty, and a Nadam
//! optimizer driving seeded, bit-reproducible mini-batch loops.
//!
//! All targets are compared in scaled space: inputs and primary outputs are
//! min-max scaled to [0, 1] on the training split, and derivative
//! predictions are converted to physical units through the scaler chain
//! rule and then divided by the min-max range of the corresponding target
//! column, so every residual is dimensionless and O(1).
//!
//! Yield networks optionally learn the helper-shifted field
//! `phi + A cos(theta/3)` (amplitude `A` is twice the mean surface radius);
//! the loss module consistently shifts the value targets and corrects the
//! angular derivative before forming rotation and Eikonal terms.

use crate::network::{channel_count, pair_index, NetworkModel};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Training is aborted when the epoch loss exceeds this multiple of the
/// first epoch loss (or stops being finite)
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Lower clamp applied inside rotation-distance derivatives to keep the
/// cusp at perfect alignment from producing unbounded adjoints
const ROTATION_DERIVATIVE_CLAMP: f64 = 1e-9;

/// Gradient norms below this are treated as having no direction at all:
/// the rotation distance defaults to its right-angle value with no adjoint
const DIRECTION_NORM_FLOOR: f64 = 1e-12;

/// Holds the Nadam hyperparameters (Dozat variant with the Keras-legacy
/// momentum schedule)
#[derive(Clone, Copy, Debug)]
pub struct NadamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub schedule_decay: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        NadamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            schedule_decay: 0.004,
        }
    }
}

/// Holds the Nadam running state (first and second moments plus the
/// momentum schedule product)
#[derive(Clone, Debug)]
pub struct NadamState {
    m: Vec<f64>,
    v: Vec<f64>,
    m_schedule: f64,
    t: u64,
}

impl NadamState {
    /// Returns a fresh state for the given parameter count
    pub fn new(n: usize) -> Self {
        NadamState { m: vec![0.0; n], v: vec![0.0; n], m_schedule: 1.0, t: 0 }
    }

    /// Applies one Nadam update in place
    pub fn step(&mut self, cfg: &NadamConfig, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let t = self.t as f64;
        let mu_t = cfg.beta1 * (1.0 - 0.5 * 0.96_f64.powf(t * cfg.schedule_decay));
        let mu_next = cfg.beta1 * (1.0 - 0.5 * 0.96_f64.powf((t + 1.0) * cfg.schedule_decay));
        let m_sched_t = self.m_schedule * mu_t;
        let m_sched_next = m_sched_t * mu_next;
        self.m_schedule = m_sched_t;
        let bias2 = 1.0 - cfg.beta2.powi(self.t.min(i32::MAX as u64) as i32);
        for i in 0..params.len() {
            let g = grads[i];
            let g_prime = g / (1.0 - m_sched_t);
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            let m_hat = self.m[i] / (1.0 - m_sched_next);
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let v_hat = self.v[i] / bias2;
            let m_bar = (1.0 - mu_t) * g_prime + mu_next * m_hat;
            params[i] -= cfg.learning_rate * m_bar / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Holds the generic mini-batch training configuration
#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    pub nadam: NadamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            seed: 0,
            validation_fraction: 0.1,
            nadam: NadamConfig::default(),
        }
    }
}

/// Holds the losses of one epoch (training losses are the running means
/// over the mini-batches, validation losses a full pass over the held-out
/// split; NaN when there is no validation split)
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_total: f64,
    pub val_total: f64,
    pub train_components: Vec<f64>,
    pub val_components: Vec<f64>,
}

/// Holds the full per-epoch history of one training run
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub component_names: Vec<String>,
    pub history: Vec<EpochRecord>,
    pub diverged: bool,
}

impl TrainReport {
    /// Returns the final training loss (NaN for an empty history)
    pub fn final_train_loss(&self) -> f64 {
        self.history.last().map(|r| r.train_total).unwrap_or(f64::NAN)
    }

    /// Returns the final validation loss (NaN for an empty history)
    pub fn final_val_loss(&self) -> f64 {
        self.history.last().map(|r| r.val_total).unwrap_or(f64::NAN)
    }
}

/// Identifies how many derivative orders an energy loss supervises
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SobolevOrder {
    L2,
    H1,
    H2,
}

impl SobolevOrder {
    /// Returns the derivative order carried through the network channels
    pub fn derivative_order(&self) -> usize {
        match self {
            SobolevOrder::L2 => 0,
            SobolevOrder::H1 => 1,
            SobolevOrder::H2 => 2,
        }
    }

    /// Returns the lowercase name used in configs
    pub fn name(&self) -> &'static str {
        match self {
            SobolevOrder::L2 => "l2",
            SobolevOrder::H1 => "h1",
            SobolevOrder::H2 => "h2",
        }
    }
}

/// Holds the weights of the energy loss: value, first-derivative (pressure
/// and shear), and second-derivative (stiffness) terms
#[derive(Clone, Copy, Debug)]
pub struct EnergyLossSpec {
    pub order: SobolevOrder,
    pub gamma_value: f64,
    pub gamma_p: f64,
    pub gamma_q: f64,
    pub gamma_stiffness: f64,
}

impl EnergyLossSpec {
    /// Returns the value-only loss
    pub fn l2() -> Self {
        EnergyLossSpec {
            order: SobolevOrder::L2,
            gamma_value: 1.0,
            gamma_p: 1.0,
            gamma_q: 1.0,
            gamma_stiffness: 1.0,
        }
    }

    /// Returns the loss that adds first derivatives
    pub fn h1() -> Self {
        EnergyLossSpec { order: SobolevOrder::H1, ..EnergyLossSpec::l2() }
    }

    /// Returns the loss that adds first and second derivatives
    pub fn h2() -> Self {
        EnergyLossSpec { order: SobolevOrder::H2, ..EnergyLossSpec::l2() }
    }
}

/// Holds one row of an energy training set: invariant strains, energy, its
/// first derivatives, and the three distinct stiffness entries
#[derive(Clone, Copy, Debug)]
pub struct EnergySample {
    pub eps_v: f64,
    pub eps_s: f64,
    pub psi: f64,
    pub p: f64,
    pub q: f64,
    pub d_vv: f64,
    pub d_ss: f64,
    pub d_vs: f64,
}

/// Holds the scaler constants the energy loss needs to convert the physical
/// targets into the scaled space of the network channels. All residuals are
/// compared there: the feature scaling keeps every component O(1), so the
/// unit default weights stay balanced even when a derivative target is
/// constant over the dataset (its min-max range would be degenerate).
#[derive(Clone, Copy, Debug)]
pub struct EnergyLossContext {
    pub in_ranges: [f64; 2],
    pub out_min: f64,
    pub out_range: f64,
}

impl EnergyLossContext {
    /// Returns the identity context (everything in physical units)
    pub fn identity() -> Self {
        EnergyLossContext { in_ranges: [1.0, 1.0], out_min: 0.0, out_range: 1.0 }
    }
}

/// Holds the energy loss split into its weighted components
#[derive(Clone, Copy, Debug, Default)]
pub struct EnergyLossParts {
    pub value: f64,
    pub grad_p: f64,
    pub grad_q: f64,
    pub stiffness: f64,
    pub total: f64,
}

/// Calculates the energy loss over a batch and, if requested, the adjoints
/// of the network output channels. `out` is the channel-major batch output
/// of the network (value, then derivative channels per sample); `rows`
/// selects the samples.
pub fn loss_energy(
    out: &[f64],
    data: &[EnergySample],
    rows: &[usize],
    ctx: &EnergyLossContext,
    spec: &EnergyLossSpec,
    mut adj: Option<&mut [f64]>,
) -> EnergyLossParts {
    let b = rows.len();
    assert!(b > 0, "empty batch");
    let c = channel_count(2, spec.order.derivative_order());
    assert_eq!(out.len(), b * c, "output channel layout mismatch");
    if let Some(a) = adj.as_deref_mut() {
        assert_eq!(a.len(), b * c);
    }
    let bf = b as f64;
    let first = spec.order != SobolevOrder::L2;
    let second = spec.order == SobolevOrder::H2;
    // physical-to-channel conversion factors for the derivative targets
    let cp = ctx.out_range / ctx.in_ranges[0];
    let cq = ctx.out_range / ctx.in_ranges[1];
    let cvv = ctx.out_range / (ctx.in_ranges[0] * ctx.in_ranges[0]);
    let cvs = ctx.out_range / (ctx.in_ranges[0] * ctx.in_ranges[1]);
    let css = ctx.out_range / (ctx.in_ranges[1] * ctx.in_ranges[1]);
    let mut parts = EnergyLossParts::default();
    for (s, &row) in rows.iter().enumerate() {
        let d = &data[row];
        let base = s * c;
        let target_sc = (d.psi - ctx.out_min) / ctx.out_range;
        let rv = out[base] - target_sc;
        parts.value += rv * rv;
        if let Some(a) = adj.as_deref_mut() {
            a[base] += spec.gamma_value * 2.0 * rv / bf;
        }
        if first {
            let rp = out[base + 1] - d.p / cp;
            let rq = out[base + 2] - d.q / cq;
            parts.grad_p += rp * rp;
            parts.grad_q += rq * rq;
            if let Some(a) = adj.as_deref_mut() {
                a[base + 1] += spec.gamma_p * 2.0 * rp / bf;
                a[base + 2] += spec.gamma_q * 2.0 * rq / bf;
            }
        }
        if second {
            let ivv = base + 3 + pair_index(2, 0, 0);
            let ivs = base + 3 + pair_index(2, 0, 1);
            let iss = base + 3 + pair_index(2, 1, 1);
            let rvv = out[ivv] - d.d_vv / cvv;
            let rvs = out[ivs] - d.d_vs / cvs;
            let rss = out[iss] - d.d_ss / css;
            // the mixed entry appears twice in the symmetric stiffness
            parts.stiffness += rvv * rvv + 2.0 * rvs * rvs + rss * rss;
            if let Some(a) = adj.as_deref_mut() {
                a[ivv] += spec.gamma_stiffness * 2.0 * rvv / bf;
                a[ivs] += spec.gamma_stiffness * 4.0 * rvs / bf;
                a[iss] += spec.gamma_stiffness * 2.0 * rss / bf;
            }
        }
    }
    parts.value *= spec.gamma_value / bf;
    parts.grad_p *= spec.gamma_p / bf;
    parts.grad_q *= spec.gamma_q / bf;
    parts.stiffness *= spec.gamma_stiffness / bf;
    parts.total = parts.value + parts.grad_p + parts.grad_q + parts.stiffness;
    parts
}

/// Holds the weights of the level-set yield loss
#[derive(Clone, Copy, Debug)]
pub struct YieldLossSpec {
    pub gamma_value: f64,
    pub gamma_gradient: f64,
    pub gamma_rotation: f64,
    pub eikonal_weight: f64,
    pub boundary_weight: f64,
    pub convexity_weight: f64,
    pub sharpness: f64,
    pub helper_amplitude: f64,
}

impl Default for YieldLossSpec {
    fn default() -> Self {
        YieldLossSpec {
            gamma_value: 1.0,
            gamma_gradient: 0.0,
            gamma_rotation: 1.0,
            eikonal_weight: 0.1,
            boundary_weight: 5.0,
            convexity_weight: 1.0,
            sharpness: 50.0,
            helper_amplitude: 0.0,
        }
    }
}

/// Holds one row of a level-set yield training set: polar point, hardening
/// variable, signed distance, and its polar gradient (d phi / d rho and
/// (1/rho) d phi / d theta)
#[derive(Clone, Copy, Debug)]
pub struct YieldSample {
    pub rho: f64,
    pub theta: f64,
    pub xi: f64,
    pub phi: f64,
    pub grad_rho: f64,
    pub grad_theta_hat: f64,
    pub boundary: bool,
}

/// Holds a level-set yield training set together with the mean boundary
/// radius used for normalization and the helper shift
#[derive(Clone, Debug)]
pub struct YieldDataset {
    pub samples: Vec<YieldSample>,
    pub rho_bar: f64,
}

/// Holds the scaler constants of the yield loss
#[derive(Clone, Copy, Debug)]
pub struct YieldLossContext {
    pub in_ranges: [f64; 3],
    pub out_min: f64,
    pub out_range: f64,
    pub rho_bar: f64,
}

impl YieldLossContext {
    /// Returns the identity context with unit mean radius
    pub fn identity() -> Self {
        YieldLossContext { in_ranges: [1.0, 1.0, 1.0], out_min: 0.0, out_range: 1.0, rho_bar: 1.0 }
    }
}

/// Holds the yield loss split into its weighted components
#[derive(Clone, Copy, Debug, Default)]
pub struct YieldLossParts {
    pub value: f64,
    pub gradient: f64,
    pub rotation: f64,
    pub eikonal: f64,
    pub convexity: f64,
    pub total: f64,
}

/// Returns the helper offset `A cos(theta/3)` added to signed distances so
/// the learned field is better conditioned across the angular chart
pub fn helper_offset(theta: f64, amplitude: f64) -> f64 {
    amplitude * (theta / 3.0).cos()
}

/// Returns the derivative of the helper offset with respect to theta
pub fn helper_offset_dtheta(theta: f64, amplitude: f64) -> f64 {
    -(amplitude / 3.0) * (theta / 3.0).sin()
}

/// Returns the second derivative of the helper offset with respect to theta
pub fn helper_offset_ddtheta(theta: f64, amplitude: f64) -> f64 {
    -(amplitude / 9.0) * (theta / 3.0).cos()
}

/// Returns the rotation distance `2 sqrt(1 - cos(delta))` between the
/// directions of two in-plane vectors; equals `2 sqrt(2) |sin(delta/2)|`
/// for the angle `delta` between them, and defaults to the right-angle
/// value 2 when either vector has no direction
pub fn rotation_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let na = a.0.hypot(a.1);
    let nb = b.0.hypot(b.1);
    if na < DIRECTION_NORM_FLOOR || nb < DIRECTION_NORM_FLOOR {
        return 2.0;
    }
    // the half-angle form stays accurate for nearly aligned directions
    let cross = a.0 * b.1 - a.1 * b.0;
    let dot = a.0 * b.0 + a.1 * b.1;
    let delta = cross.atan2(dot);
    2.0 * 2.0_f64.sqrt() * (0.5 * delta).sin().abs()
}

/// Returns the smooth non-negativity penalty `w (1/2 + 1/2 tanh(-k s))`:
/// close to `w` for clearly negative arguments, `w/2` at zero, and close
/// to 0 for clearly positive arguments
pub fn smooth_step_penalty(s: f64, weight: f64, sharpness: f64) -> f64 {
    weight * (0.5 + 0.5 * (-sharpness * s).tanh())
}

/// Returns the Eikonal residual `|grad phi|^2 - 1` of a polar gradient
/// (d phi / d rho, d phi / d theta) at radius rho
pub fn eikonal_residual(grad_rho: f64, grad_theta: f64, rho: f64) -> f64 {
    grad_rho * grad_rho + (grad_theta / rho) * (grad_theta / rho) - 1.0
}

/// Calculates the level-set yield loss over a batch and, if requested, the
/// adjoints of the network output channels (value plus three first-order
/// channels per sample)
pub fn loss_yield(
    out: &[f64],
    data: &[YieldSample],
    rows: &[usize],
    ctx: &YieldLossContext,
    spec: &YieldLossSpec,
    mut adj: Option<&mut [f64]>,
) -> YieldLossParts {
    let b = rows.len();
    assert!(b > 0, "empty batch");
    let c = channel_count(3, 1);
    assert_eq!(out.len(), b * c, "output channel layout mismatch");
    if let Some(a) = adj.as_deref_mut() {
        assert_eq!(a.len(), b * c);
    }
    let bf = b as f64;
    let c_rho = ctx.out_range / ctx.in_ranges[0];
    let c_theta = ctx.out_range / ctx.in_ranges[1];
    let mut parts = YieldLossParts::default();
    // value term uses a weighted mean with up-weighted boundary rows
    let mut weight_sum = 0.0;
    for &row in rows {
        weight_sum += if data[row].boundary { spec.boundary_weight } else { 1.0 };
    }
    for (s, &row) in rows.iter().enumerate() {
        let d = &data[row];
        let base = s * c;
        // value residual in scaled space against the helper-shifted target
        let target = d.phi + helper_offset(d.theta, spec.helper_amplitude);
        let target_sc = (target - ctx.out_min) / ctx.out_range;
        let w = if d.boundary { spec.boundary_weight } else { 1.0 };
        let rv = out[base] - target_sc;
        parts.value += w * rv * rv;
        if let Some(a) = adj.as_deref_mut() {
            a[base] += spec.gamma_value * 2.0 * w * rv / weight_sum;
        }
        // physical polar gradient of the learned signed distance, with the
        // helper contribution removed from the angular derivative
        let f_rho = out[base + 1] * c_rho;
        let f_theta = out[base + 2] * c_theta;
        let phi_rho = f_rho;
        let phi_theta = f_theta - helper_offset_dtheta(d.theta, spec.helper_amplitude);
        let u_rho = phi_rho;
        let u_theta = phi_theta / d.rho;
        // direct gradient supervision (off by default)
        if spec.gamma_gradient != 0.0 {
            let rr = u_rho - d.grad_rho;
            let rt = u_theta - d.grad_theta_hat;
            parts.gradient += rr * rr + rt * rt;
            if let Some(a) = adj.as_deref_mut() {
                a[base + 1] += spec.gamma_gradient * 2.0 * rr * c_rho / bf;
                a[base + 2] += spec.gamma_gradient * 2.0 * rt * c_theta / (d.rho * bf);
            }
        }
        // rotation distance between predicted and target directions
        let n = u_rho.hypot(u_theta);
        let tn = d.grad_rho.hypot(d.grad_theta_hat);
        if n < DIRECTION_NORM_FLOOR || tn < DIRECTION_NORM_FLOOR {
            parts.rotation += 2.0;
        } else {
            let (t_rho, t_theta) = (d.grad_rho / tn, d.grad_theta_hat / tn);
            let cosd = ((u_rho * t_rho + u_theta * t_theta) / n).clamp(-1.0, 1.0);
            parts.rotation += 2.0 * (1.0 - cosd).max(0.0).sqrt();
            if let Some(a) = adj.as_deref_mut() {
                let dphi_dcos = -1.0 / (1.0 - cosd).max(ROTATION_DERIVATIVE_CLAMP).sqrt();
                let dcos_du_rho = t_rho / n - u_rho * cosd / (n * n);
                let dcos_du_theta = t_theta / n - u_theta * cosd / (n * n);
                let k = spec.gamma_rotation * dphi_dcos / bf;
                a[base + 1] += k * dcos_du_rho * c_rho;
                a[base + 2] += k * dcos_du_theta * c_theta / d.rho;
            }
        }
        // Eikonal residual of the polar gradient
        let res = u_rho * u_rho + u_theta * u_theta - 1.0;
        parts.eikonal += res * res;
        if let Some(a) = adj.as_deref_mut() {
            let k = spec.eikonal_weight * 4.0 * res / bf;
            a[base + 1] += k * u_rho * c_rho;
            a[base + 2] += k * u_theta * c_theta / d.rho;
        }
        // convexity surrogate: penalize a negative radial derivative, which
        // for a pressure-insensitive surface equals sigma . grad f < 0
        let s_tilde = d.rho * phi_rho / ctx.rho_bar;
        parts.convexity += 0.5 + 0.5 * (-spec.sharpness * s_tilde).tanh();
        if let Some(a) = adj.as_deref_mut() {
            let th = (-spec.sharpness * s_tilde).tanh();
            let dpen = -0.5 * spec.sharpness * (1.0 - th * th);
            a[base + 1] +=
                spec.convexity_weight * dpen * d.rho * c_rho / (ctx.rho_bar * bf);
        }
    }
    parts.value *= spec.gamma_value / weight_sum;
    parts.gradient *= spec.gamma_gradient / bf;
    parts.rotation *= spec.gamma_rotation / bf;
    parts.eikonal *= spec.eikonal_weight / bf;
    parts.convexity *= spec.convexity_weight / bf;
    parts.total =
        parts.value + parts.gradient + parts.rotation + parts.eikonal + parts.convexity;
    parts
}

/// Holds the weights of the flow-direction loss
#[derive(Clone, Copy, Debug)]
pub struct FlowLossSpec {
    pub gamma_value: f64,
    pub work_weight: f64,
    pub sharpness: f64,
}

impl Default for FlowLossSpec {
    fn default() -> Self {
        FlowLossSpec { gamma_value: 1.0, work_weight: 1.0, sharpness: 50.0 }
    }
}

/// Holds one row of a flow training set: principal stresses and the
/// plastic flow direction at that state
#[derive(Clone, Copy, Debug)]
pub struct FlowSample {
    pub sigma: [f64; 3],
    pub flow: [f64; 3],
}

/// Holds the scaler constants of the flow loss
#[derive(Clone, Copy, Debug)]
pub struct FlowLossContext {
    pub out_mins: [f64; 3],
    pub out_ranges: [f64; 3],
    pub sigma_norm: f64,
}

impl FlowLossContext {
    /// Returns the identity context with unit stress normalization
    pub fn identity() -> Self {
        FlowLossContext { out_mins: [0.0; 3], out_ranges: [1.0; 3], sigma_norm: 1.0 }
    }
}

/// Holds the flow loss split into its weighted components
#[derive(Clone, Copy, Debug, Default)]
pub struct FlowLossParts {
    pub value: f64,
    pub plastic_work: f64,
    pub total: f64,
}

/// Calculates the flow-direction loss over a batch (value MSE in scaled
/// space plus a smooth plastic-work penalty) and, if requested, the
/// adjoints of the network outputs (value channel only)
pub fn loss_flow(
    out: &[f64],
    data: &[FlowSample],
    rows: &[usize],
    ctx: &FlowLossContext,
    spec: &FlowLossSpec,
    mut adj: Option<&mut [f64]>,
) -> FlowLossParts {
    let b = rows.len();
    assert!(b > 0, "empty batch");
    assert_eq!(out.len(), b * 3, "output layout mismatch");
    if let Some(a) = adj.as_deref_mut() {
        assert_eq!(a.len(), b * 3);
    }
    let bf = b as f64;
    let mut parts = FlowLossParts::default();
    for (s, &row) in rows.iter().enumerate() {
        let d = &data[row];
        let base = s * 3;
        let mut work = 0.0;
        for o in 0..3 {
            let target_sc = (d.flow[o] - ctx.out_mins[o]) / ctx.out_ranges[o];
            let r = out[base + o] - target_sc;
            parts.value += r * r;
            if let Some(a) = adj.as_deref_mut() {
                a[base + o] += spec.gamma_value * 2.0 * r / bf;
            }
            let pred = out[base + o] * ctx.out_ranges[o] + ctx.out_mins[o];
            work += d.sigma[o] * pred;
        }
        let s_tilde = work / ctx.sigma_norm;
        parts.plastic_work += 0.5 + 0.5 * (-spec.sharpness * s_tilde).tanh();
        if let Some(a) = adj.as_deref_mut() {
            let th = (-spec.sharpness * s_tilde).tanh();
            let dpen = -0.5 * spec.sharpness * (1.0 - th * th) / ctx.sigma_norm;
            for o in 0..3 {
                a[base + o] += spec.work_weight * dpen * d.sigma[o] * ctx.out_ranges[o] / bf;
            }
        }
    }
    parts.value *= spec.gamma_value / bf;
    parts.plastic_work *= spec.work_weight / bf;
    parts.total = parts.value + parts.plastic_work;
    parts
}

/// Splits row indices into a shuffled training set and a held-out
/// validation set
pub(crate) fn split_indices(
    n: usize,
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_val = ((n as f64) * fraction).round() as usize;
    let n_val = n_val.min(n.saturating_sub(1));
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Builds the scaled Taylor-channel seed blocks for every dataset row
pub(crate) fn precompute_seeds(scaled_rows: &[Vec<f64>], n: usize, channels: usize) -> Vec<f64> {
    let block = channels * n;
    let mut seeds = vec![0.0; scaled_rows.len() * block];
    for (r, row) in scaled_rows.iter().enumerate() {
        let base = r * block;
        seeds[base..base + n].copy_from_slice(row);
        for k in 0..n.min(channels.saturating_sub(1)) {
            seeds[base + (1 + k) * n + k] = 1.0;
        }
    }
    seeds
}

/// Runs the seeded mini-batch loop shared by all trainers
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_fit(
    net: &mut NetworkModel,
    cfg: &TrainConfig,
    channels: usize,
    seeds: &[f64],
    mut train_idx: Vec<usize>,
    val_idx: Vec<usize>,
    rng: &mut ChaCha8Rng,
    component_names: &[&str],
    loss_fn: &mut dyn FnMut(&[f64], &[usize], Option<&mut [f64]>) -> (f64, Vec<f64>),
) -> TrainReport {
    assert!(cfg.batch_size > 0, "batch size must be positive");
    assert!(!train_idx.is_empty(), "empty training split");
    let n_in = net.input_dim();
    let n_out = net.output_dim();
    let block = channels * n_in;
    let n_comp = component_names.len();
    let mut params = net.params_flat();
    let mut opt = NadamState::new(params.len());
    let mut grads = vec![0.0; params.len()];
    let mut history: Vec<EpochRecord> = Vec::with_capacity(cfg.epochs);
    let mut diverged = false;
    // baseline for the divergence guard: the very first batch loss, taken
    // before any parameter update
    let mut initial_loss = f64::NAN;
    let gather = |rows: &[usize], buf: &mut Vec<f64>| {
        buf.clear();
        for &r in rows {
            buf.extend_from_slice(&seeds[r * block..(r + 1) * block]);
        }
    };
    let mut buf: Vec<f64> = Vec::new();
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(rng);
        let mut train_total = 0.0;
        let mut train_comps = vec![0.0; n_comp];
        let mut seen = 0usize;
        for chunk in train_idx.chunks(cfg.batch_size) {
            gather(chunk, &mut buf);
            let tape = net.forward_batch(&buf, chunk.len(), channels);
            let mut adj = vec![0.0; chunk.len() * channels * n_out];
            let (total, comps) = loss_fn(&tape.output, chunk, Some(&mut adj));
            if initial_loss.is_nan() {
                initial_loss = total;
            }
            grads.fill(0.0);
            net.backward_batch(&tape, &adj, &mut grads);
            opt.step(&cfg.nadam, &mut params, &grads);
            net.set_params_flat(&params);
            let w = chunk.len() as f64;
            train_total += w * total;
            for (acc, c) in train_comps.iter_mut().zip(comps.iter()) {
                *acc += w * c;
            }
            seen += chunk.len();
        }
        train_total /= seen as f64;
        for c in train_comps.iter_mut() {
            *c /= seen as f64;
        }
        // full pass over the held-out split, no updates
        let (mut val_total, mut val_comps) = (f64::NAN, vec![f64::NAN; n_comp]);
        if !val_idx.is_empty() {
            val_total = 0.0;
            val_comps.fill(0.0);
            let mut val_seen = 0usize;
            for chunk in val_idx.chunks(cfg.batch_size) {
                gather(chunk, &mut buf);
                let tape = net.forward_batch(&buf, chunk.len(), channels);
                let (total, comps) = loss_fn(&tape.output, chunk, None);
                let w = chunk.len() as f64;
                val_total += w * total;
                for (acc, c) in val_comps.iter_mut().zip(comps.iter()) {
                    *acc += w * c;
                }
                val_seen += chunk.len();
            }
            val_total /= val_seen as f64;
            for c in val_comps.iter_mut() {
                *c /= val_seen as f64;
            }
        }
        history.push(EpochRecord {
            epoch,
            train_total,
            val_total,
            train_components: train_comps,
            val_components: val_comps,
        });
        // check divergence against the pristine first batch
        if !train_total.is_finite()
            || train_total > DIVERGENCE_FACTOR * initial_loss.max(f64::MIN_POSITIVE)
        {
            diverged = true;
            break;
        }
    }
    TrainReport {
        component_names: component_names.iter().map(|s| s.to_string()).collect(),
        history,
        diverged,
    }
}

/// Trains an energy network (inputs eps_v, eps_s; output psi) with the
/// requested Sobolev loss; fits the scalers on the training split
pub fn fit_energy(
    net: &mut NetworkModel,
    data: &[EnergySample],
    spec: &EnergyLossSpec,
    cfg: &TrainConfig,
) -> TrainReport {
    assert_eq!(net.input_dim(), 2, "energy networks take (eps_v, eps_s)");
    assert_eq!(net.output_dim(), 1, "energy networks predict psi");
    assert!(!data.is_empty(), "empty dataset");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (train_idx, val_idx) = split_indices(data.len(), cfg.validation_fraction, &mut rng);
    let in_rows: Vec<Vec<f64>> =
        train_idx.iter().map(|&r| vec![data[r].eps_v, data[r].eps_s]).collect();
    let out_rows: Vec<Vec<f64>> = train_idx.iter().map(|&r| vec![data[r].psi]).collect();
    net.input_scaler = crate::network::MinMaxScaler::fit(&in_rows);
    net.output_scaler = crate::network::MinMaxScaler::fit(&out_rows);
    let ctx = EnergyLossContext {
        in_ranges: [net.input_scaler.ranges[0], net.input_scaler.ranges[1]],
        out_min: net.output_scaler.mins[0],
        out_range: net.output_scaler.ranges[0],
    };
    let channels = channel_count(2, spec.order.derivative_order());
    let scaled: Vec<Vec<f64>> = data
        .iter()
        .map(|d| {
            let mut s = vec![0.0; 2];
            net.input_scaler.apply(&[d.eps_v, d.eps_s], &mut s);
            s
        })
        .collect();
    let seeds = precompute_seeds(&scaled, 2, channels);
    let spec = *spec;
    let mut loss_fn = move |out: &[f64], rows: &[usize], adj: Option<&mut [f64]>| {
        let p = loss_energy(out, data, rows, &ctx, &spec, adj);
        (p.total, vec![p.value, p.grad_p, p.grad_q, p.stiffness])
    };
    run_fit(
        net,
        cfg,
        channels,
        &seeds,
        train_idx,
        val_idx,
        &mut rng,
        &["value", "grad_p", "grad_q", "stiffness"],
        &mut loss_fn,
    )
}

/// Trains a yield network (inputs rho, theta, xi; output the helper-shifted
/// signed distance) with the level-set loss; fits the scalers on the
/// training split
pub fn fit_yield(
    net: &mut NetworkModel,
    data: &YieldDataset,
    spec: &YieldLossSpec,
    cfg: &TrainConfig,
) -> TrainReport {
    assert_eq!(net.input_dim(), 3, "yield networks take (rho, theta, xi)");
    assert_eq!(net.output_dim(), 1, "yield networks predict one signed distance");
    assert!(!data.samples.is_empty(), "empty dataset");
    let samples = &data.samples;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (train_idx, val_idx) = split_indices(samples.len(), cfg.validation_fraction, &mut rng);
    let in_rows: Vec<Vec<f64>> =
        train_idx.iter().map(|&r| vec![samples[r].rho, samples[r].theta, samples[r].xi]).collect();
    let out_rows: Vec<Vec<f64>> = train_idx
        .iter()
        .map(|&r| vec![samples[r].phi + helper_offset(samples[r].theta, spec.helper_amplitude)])
        .collect();
    net.input_scaler = crate::network::MinMaxScaler::fit(&in_rows);
    net.output_scaler = crate::network::MinMaxScaler::fit(&out_rows);
    let ctx = YieldLossContext {
        in_ranges: [
            net.input_scaler.ranges[0],
            net.input_scaler.ranges[1],
            net.input_scaler.ranges[2],
        ],
        out_min: net.output_scaler.mins[0],
        out_range: net.output_scaler.ranges[0],
        rho_bar: data.rho_bar,
    };
    let channels = channel_count(3, 1);
    let scaled: Vec<Vec<f64>> = samples
        .iter()
        .map(|d| {
            let mut s = vec![0.0; 3];
            net.input_scaler.apply(&[d.rho, d.theta, d.xi], &mut s);
            s
        })
        .collect();
    let seeds = precompute_seeds(&scaled, 3, channels);
    let spec = *spec;
    let mut loss_fn = move |out: &[f64], rows: &[usize], adj: Option<&mut [f64]>| {
        let p = loss_yield(out, samples, rows, &ctx, &spec, adj);
        (p.total, vec![p.value, p.gradient, p.rotation, p.eikonal, p.convexity])
    };
    run_fit(
        net,
        cfg,
        channels,
        &seeds,
        train_idx,
        val_idx,
        &mut rng,
        &["value", "gradient", "rotation", "eikonal", "convexity"],
        &mut loss_fn,
    )
}

/// Trains a flow network (inputs the principal stresses, outputs the flow
/// direction components); fits the scalers on the training split
pub fn fit_flow(
    net: &mut NetworkModel,
    data: &[FlowSample],
    spec: &FlowLossSpec,
    cfg: &TrainConfig,
) -> TrainReport {
    assert_eq!(net.input_dim(), 3, "flow networks take the principal stresses");
    assert_eq!(net.output_dim(), 3, "flow networks predict three components");
    assert!(!data.is_empty(), "empty dataset");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (train_idx, val_idx) = split_indices(data.len(), cfg.validation_fraction, &mut rng);
    let in_rows: Vec<Vec<f64>> = train_idx.iter().map(|&r| data[r].sigma.to_vec()).collect();
    let out_rows: Vec<Vec<f64>> = train_idx.iter().map(|&r| data[r].flow.to_vec()).collect();
    net.input_scaler = crate::network::MinMaxScaler::fit(&in_rows);
    net.output_scaler = crate::network::MinMaxScaler::fit(&out_rows);
    let mut sigma_norm = 0.0;
    for &r in &train_idx {
        let s = &data[r].sigma;
        sigma_norm += (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
    }
    sigma_norm /= train_idx.len() as f64;
    let ctx = FlowLossContext {
        out_mins: [
            net.output_scaler.mins[0],
            net.output_scaler.mins[1],
            net.output_scaler.mins[2],
        ],
        out_ranges: [
            net.output_scaler.ranges[0],
            net.output_scaler.ranges[1],
            net.output_scaler.ranges[2],
        ],
        sigma_norm: if sigma_norm > 0.0 { sigma_norm } else { 1.0 },
    };
    let channels = 1;
    let scaled: Vec<Vec<f64>> = data
        .iter()
        .map(|d| {
            let mut s = vec![0.0; 3];
            net.input_scaler.apply(&d.sigma, &mut s);
            s
        })
        .collect();
    let seeds = precompute_seeds(&scaled, 3, channels);
    let spec = *spec;
    let mut loss_fn = move |out: &[f64], rows: &[usize], adj: Option<&mut [f64]>| {
        let p = loss_flow(out, data, rows, &ctx, &spec, adj);
        (p.total, vec![p.value, p.plastic_work])
    };
    run_fit(
        net,
        cfg,
        channels,
        &seeds,
        train_idx,
        val_idx,
        &mut rng,
        &["value", "plastic_work"],
        &mut loss_fn,
    )
}

////////////////////////////////////////////////////////////////////////////////
