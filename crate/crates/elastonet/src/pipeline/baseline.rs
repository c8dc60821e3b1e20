//! Direct stress-update baseline: a plain dense network mapping the current
//! strain and previous stress to the current stress, trained teacher-forced
//! on recorded paths and evaluated in closed-loop rollout.

use crate::invariants::SymTensor3;
use crate::network::{Activation, MinMaxScaler, NetworkModel};
use crate::pipeline::driver::PathRecord;
use crate::training::{precompute_seeds, run_fit, split_indices, TrainConfig, TrainReport};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Holds one teacher-forced training row: (strain, previous stress) as two
/// Voigt blocks mapped to the current stress
#[derive(Clone, Copy, Debug)]
pub struct StepSample {
    pub input: [f64; 12],
    pub target: [f64; 6],
}

/// Extracts teacher-forced rows from recorded paths; row n pairs the strain
/// at step n with the stress at step n-1
pub fn step_samples(records: &[PathRecord]) -> Vec<StepSample> {
    let mut out = Vec::new();
    for rec in records {
        for n in 1..rec.steps.len() {
            let eps = rec.steps[n].eps.as_array();
            let prev = rec.steps[n - 1].stress.as_array();
            let target = rec.steps[n].stress.as_array();
            let mut input = [0.0; 12];
            input[..6].copy_from_slice(&eps);
            input[6..].copy_from_slice(&prev);
            out.push(StepSample { input, target });
        }
    }
    out
}

/// Holds the direct baseline network
#[derive(Clone, Debug)]
pub struct StepDenseBaseline {
    pub net: NetworkModel,
}

impl StepDenseBaseline {
    /// Builds the untrained baseline: three hidden dense layers of the given
    /// width with a linear output head
    pub fn new(hidden_width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = NetworkModel::from_code("dddd", 12, 6, hidden_width, Activation::Relu, &mut rng)
            .expect("fixed baseline architecture");
        StepDenseBaseline { net }
    }

    /// Fits the baseline to teacher-forced rows with a plain mean squared
    /// error in scaled output space
    pub fn fit(&mut self, data: &[StepSample], cfg: &TrainConfig) -> TrainReport {
        assert!(!data.is_empty(), "empty dataset");
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (train_idx, val_idx) = split_indices(data.len(), cfg.validation_fraction, &mut rng);
        let in_rows: Vec<Vec<f64>> = train_idx.iter().map(|&r| data[r].input.to_vec()).collect();
        let out_rows: Vec<Vec<f64>> = train_idx.iter().map(|&r| data[r].target.to_vec()).collect();
        self.net.input_scaler = MinMaxScaler::fit(&in_rows);
        self.net.output_scaler = MinMaxScaler::fit(&out_rows);
        let scaled: Vec<Vec<f64>> = data
            .iter()
            .map(|d| {
                let mut s = vec![0.0; 12];
                self.net.input_scaler.apply(&d.input, &mut s);
                s
            })
            .collect();
        let seeds = precompute_seeds(&scaled, 12, 1);
        let mins = self.net.output_scaler.mins.clone();
        let ranges = self.net.output_scaler.ranges.clone();
        let mut loss_fn = move |out: &[f64], rows: &[usize], mut adj: Option<&mut [f64]>| {
            let b = rows.len() as f64;
            let mut value = 0.0;
            for (s, &row) in rows.iter().enumerate() {
                for o in 0..6 {
                    let target_sc = (data[row].target[o] - mins[o]) / ranges[o];
                    let r = out[s * 6 + o] - target_sc;
                    value += r * r;
                    if let Some(a) = adj.as_deref_mut() {
                        a[s * 6 + o] += 2.0 * r / b;
                    }
                }
            }
            value /= b;
            (value, vec![value])
        };
        run_fit(
            &mut self.net,
            cfg,
            1,
            &seeds,
            train_idx,
            val_idx,
            &mut rng,
            &["value"],
            &mut loss_fn,
        )
    }

    /// Predicts the next stress from the current strain and previous stress
    pub fn predict(&self, eps: &SymTensor3, prev_stress: &SymTensor3) -> SymTensor3 {
        let mut input = [0.0; 12];
        input[..6].copy_from_slice(&eps.as_array());
        input[6..].copy_from_slice(&prev_stress.as_array());
        let out = self.net.forward(&input);
        SymTensor3::from_array([out[0], out[1], out[2], out[3], out[4], out[5]])
    }

    /// Replays a recorded strain history closed-loop, feeding the model its
    /// own previous prediction, and returns the stress sequence including
    /// the recorded initial stress
    pub fn rollout(&self, record: &PathRecord) -> Vec<SymTensor3> {
        let mut out = Vec::with_capacity(record.steps.len());
        let mut prev = record.steps[0].stress;
        out.push(prev);
        for step in &record.steps[1..] {
            let next = self.predict(&step.eps, &prev);
            out.push(next);
            prev = next;
        }
        out
    }

    /// Replays a strain history teacher-forced, feeding the model the
    /// recorded previous stress at every step
    pub fn teacher_forced(&self, record: &PathRecord) -> Vec<SymTensor3> {
        let mut out = Vec::with_capacity(record.steps.len());
        out.push(record.steps[0].stress);
        for n in 1..record.steps.len() {
            out.push(self.predict(&record.steps[n].eps, &record.steps[n - 1].stress));
        }
        out
    }
}

/// Calculates the root mean square error between predicted and recorded
/// stresses over a path (Frobenius norm per step)
pub fn rollout_rms(record: &PathRecord, predicted: &[SymTensor3]) -> f64 {
    assert_eq!(record.steps.len(), predicted.len());
    let mut acc = 0.0;
    for (step, pred) in record.steps.iter().zip(predicted) {
        let d = pred.sub(&step.stress);
        acc += d.dot(&d);
    }
    (acc / record.steps.len() as f64).sqrt()
}

////////////////////////////////////////////////////////////////////////////////

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matlib::{J2Params, LinearElasticParams};
    use crate::pipeline::driver::{run_path_driver, StressPathProtocol};
    use crate::returnmap::j2_model;

    fn record() -> PathRecord {
        let model = j2_model(
            LinearElasticParams { young: 2079.9, poisson: 0.3 },
            J2Params { sigma_y0: 100.0, hardening: 207.99 },
        );
        let protocol = StressPathProtocol::MonotonicRadial {
            theta: 0.3,
            eps_s_max: 0.15,
            increments: 60,
        };
        run_path_driver(&model, &protocol).unwrap()
    }

    #[test]
    fn step_samples_pair_strains_with_lagged_stresses() {
        let rec = record();
        let rows = step_samples(std::slice::from_ref(&rec));
        assert_eq!(rows.len(), rec.steps.len() - 1);
        assert_eq!(rows[0].input[..6], rec.steps[1].eps.as_array());
        assert_eq!(rows[0].input[6..], rec.steps[0].stress.as_array());
        assert_eq!(rows[0].target, rec.steps[1].stress.as_array());
    }

    #[test]
    fn training_reduces_the_loss_and_rollout_tracks_the_teacher() {
        let rec = record();
        let rows = step_samples(std::slice::from_ref(&rec));
        let mut baseline = StepDenseBaseline::new(24, 7);
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 16,
            seed: 7,
            validation_fraction: 0.0,
            ..TrainConfig::default()
        };
        let report = baseline.fit(&rows, &cfg);
        assert!(!report.diverged);
        let first = report.history.first().unwrap().train_total;
        let last = report.final_train_loss();
        assert!(last < 0.2 * first, "loss {first} -> {last}");
        // teacher-forced error never exceeds the closed-loop rollout error
        let teacher = baseline.teacher_forced(&rec);
        let rolled = baseline.rollout(&rec);
        let rms_teacher = rollout_rms(&rec, &teacher);
        let rms_rolled = rollout_rms(&rec, &rolled);
        assert!(rms_teacher <= rms_rolled * (1.0 + 1e-9), "{rms_teacher} vs {rms_rolled}");
        // the trained model is at least loosely accurate teacher-forced
        let scale = rec.steps.iter().map(|s| s.q).fold(0.0_f64, f64::max);
        assert!(rms_teacher < 0.5 * scale, "rms {rms_teacher} vs scale {scale}");
    }

    #[test]
    fn rollout_starts_from_the_recorded_initial_stress() {
        let rec = record();
        let baseline = StepDenseBaseline::new(8, 1);
        let rolled = baseline.rollout(&rec);
        assert_eq!(rolled.len(), rec.steps.len());
        assert_eq!(rolled[0].as_array(), rec.steps[0].stress.as_array());
    }
}
