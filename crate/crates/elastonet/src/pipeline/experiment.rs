//! Experiment orchestration: named presets, staged execution over a shared
//! output directory, metric collection, and plot export.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::invariants::{stress_invariants, SymTensor3};
use crate::matlib::{
    synthetic_surface_radius, HardeningTransform, J2Params, LinearElasticParams,
    SyntheticSurfaceParams,
};
use crate::network::{Activation, NetworkModel};
use crate::pipeline::baseline::{step_samples, StepDenseBaseline};
use crate::pipeline::config::Config;
use crate::pipeline::data::{
    elastic_from_table, elastic_table, flow_from_table, flow_table, gen_elastic_dataset,
    gen_yield_dataset_driver, gen_yield_dataset_synthetic, yield_from_table, yield_table,
    ElasticDatasetSpec, SdfSource, YieldGenSpec,
};
use crate::pipeline::driver::{
    path_from_table, path_table, rms_q_error, run_path_driver, unloading_slope, PathRecord,
    PathStep, StressPathProtocol,
};
use crate::pipeline::io::{fmt_f64, CsvTable, LineChart, Series};
use crate::pipeline::PipelineError;
use crate::returnmap::{
    j2_model, lode_chain, ChainedYield, CompositeModel, EnergyFunction, FlowRule, J2Chart,
    NetworkChart, NetworkEnergy,
};
use crate::training::{
    fit_energy, fit_flow, fit_yield, EnergyLossSpec, FlowLossSpec, TrainConfig, TrainReport,
    YieldLossSpec,
};

/// Names of the built-in presets
pub const PRESETS: &[&str] = &["benchmark1", "polycrystal", "eikonal", "appendixD", "fictitious"];

/// Identifies one stage of an experiment; stages share the output directory
/// and communicate through the files they write
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    GenData,
    TrainEnergy,
    TrainYield,
    TrainFlow,
    Simulate,
    Compare,
    Export,
}

impl Stage {
    /// Returns every stage in execution order
    pub fn all() -> [Stage; 7] {
        [
            Stage::GenData,
            Stage::TrainEnergy,
            Stage::TrainYield,
            Stage::TrainFlow,
            Stage::Simulate,
            Stage::Compare,
            Stage::Export,
        ]
    }

    /// Returns the stage name as used by the command line
    pub fn name(&self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::TrainEnergy => "train-energy",
            Stage::TrainYield => "train-yield",
            Stage::TrainFlow => "train-flow",
            Stage::Simulate => "simulate",
            Stage::Compare => "compare",
            Stage::Export => "export",
        }
    }
}

/// Returns the fully-populated configuration of a named preset
pub fn preset_config(name: &str) -> Result<Config, PipelineError> {
    let mut c = Config::new();
    let set = |c: &mut Config, section: &str, pairs: &[(&str, &str)]| {
        for (k, v) in pairs {
            c.set(section, k, v);
        }
    };
    set(&mut c, "experiment", &[("kind", name), ("seed", "1"), ("smoke", "false")]);
    match name {
        "benchmark1" => {
            set(
                &mut c,
                "elastic",
                &[
                    ("eps_v_min", "-0.02"),
                    ("eps_v_max", "0.02"),
                    ("eps_s_min", "0.0"),
                    ("eps_s_max", "0.03"),
                    ("n_v", "50"),
                    ("n_s", "50"),
                ],
            );
            set(&mut c, "material", &[("young", "2079.9"), ("poisson", "0.3")]);
            set(
                &mut c,
                "train_energy",
                &[
                    ("width", "100"),
                    ("epochs", "250"),
                    ("batch", "32"),
                    ("arch_dataset", "linear"),
                    ("order_dataset", "mcc"),
                ],
            );
        }
        "polycrystal" => {
            set(
                &mut c,
                "surface",
                &[("r0", "100.0"), ("hs", "250.0"), ("xi_star", "0.3"), ("sharpness", "8.0")],
            );
            set(&mut c, "material", &[("young", "2079.9"), ("poisson", "0.3")]);
            set(
                &mut c,
                "yield_data",
                &[
                    ("n_angles", "140"),
                    ("n_snapshots", "10"),
                    ("xi_max", "0.2"),
                    ("sdf", "polyline"),
                ],
            );
            set(
                &mut c,
                "train_yield",
                &[
                    ("code", "dmmdd"),
                    ("width", "100"),
                    ("epochs", "400"),
                    ("batch", "128"),
                    ("eikonal_weight", "0.1"),
                    ("helper_rel", "0.3"),
                ],
            );
            set(
                &mut c,
                "train_flow",
                &[("code", "ddd"), ("width", "100"), ("epochs", "300"), ("batch", "128")],
            );
            set(&mut c, "thermo", &[("n_states", "10000")]);
            set(
                &mut c,
                "paths",
                &[("eps_s_max", "0.1"), ("increments", "200"), ("flow", "network")],
            );
        }
        "eikonal" => {
            set(
                &mut c,
                "surface",
                &[("r0", "100.0"), ("hs", "250.0"), ("xi_star", "0.3"), ("sharpness", "8.0")],
            );
            set(
                &mut c,
                "yield_data",
                &[
                    ("n_angles", "64"),
                    ("n_snapshots", "4"),
                    ("xi_max", "0.12"),
                    ("sdf", "fast-march"),
                    ("n_rho", "128"),
                    ("n_theta", "256"),
                ],
            );
            set(
                &mut c,
                "train_yield",
                &[
                    ("code", "dmmdd"),
                    ("width", "100"),
                    ("epochs", "400"),
                    ("batch", "128"),
                    ("eikonal_weight", "0.1"),
                    ("helper_rel", "0.3"),
                ],
            );
        }
        "appendixD" => {
            set(
                &mut c,
                "material",
                &[
                    ("young", "2079.9"),
                    ("poisson", "0.3"),
                    ("sigma_y0", "100.0"),
                    ("hardening", "207.99"),
                ],
            );
            set(
                &mut c,
                "elastic",
                &[
                    ("eps_v_min", "-0.02"),
                    ("eps_v_max", "0.02"),
                    ("eps_s_min", "0.0"),
                    ("eps_s_max", "0.14"),
                    ("n_v", "50"),
                    ("n_s", "50"),
                ],
            );
            set(
                &mut c,
                "yield_data",
                &[
                    ("n_angles", "140"),
                    ("n_snapshots", "10"),
                    ("xi_max", "0.12"),
                    ("sdf", "polyline"),
                ],
            );
            set(
                &mut c,
                "train_energy",
                &[
                    ("code", "dmmdmd"),
                    ("width", "100"),
                    ("order", "h2"),
                    ("epochs", "300"),
                    ("batch", "32"),
                ],
            );
            set(
                &mut c,
                "train_yield",
                &[
                    ("code", "dmmdd"),
                    ("width", "100"),
                    ("epochs", "500"),
                    ("batch", "128"),
                    ("eikonal_weight", "0.1"),
                    ("helper_rel", "0.3"),
                ],
            );
            set(
                &mut c,
                "train_flow",
                &[("code", "ddd"), ("width", "100"), ("epochs", "300"), ("batch", "128")],
            );
            set(&mut c, "baseline", &[("width", "100"), ("epochs", "500"), ("batch", "64")]);
            set(
                &mut c,
                "paths",
                &[
                    ("n_train", "24"),
                    ("eps_s_max", "0.12"),
                    ("increments", "300"),
                    ("theta_eval", "0.35"),
                    ("flow", "network"),
                ],
            );
        }
        "fictitious" => {
            set(
                &mut c,
                "material",
                &[
                    ("young", "2079.9"),
                    ("poisson", "0.3"),
                    ("sigma_y0", "100.0"),
                    ("hardening", "0.0"),
                ],
            );
            set(&mut c, "paths", &[("eps_s_max", "0.3"), ("increments", "300")]);
        }
        other => return Err(PipelineError::UnknownPreset(other.to_string())),
    }
    Ok(c)
}

/// Holds a validated experiment: the resolved configuration and the output
/// directory all stages share
pub struct Experiment {
    pub cfg: Config,
    pub out: PathBuf,
}

impl Experiment {
    /// Validates the configuration and binds it to an output directory
    pub fn new(cfg: Config, out: &Path) -> Result<Self, PipelineError> {
        let exp = Experiment { cfg, out: out.to_path_buf() };
        exp.plan()?;
        Ok(exp)
    }

    /// Returns the experiment kind
    pub fn kind(&self) -> Result<String, PipelineError> {
        let kind = self.cfg.require("experiment", "kind")?;
        if !PRESETS.contains(&kind.as_str()) {
            return Err(PipelineError::UnknownPreset(kind.to_string()));
        }
        Ok(kind.to_string())
    }

    fn seed(&self) -> Result<u64, PipelineError> {
        Ok(self.cfg.u64_or("experiment", "seed", 1)?)
    }

    fn smoke(&self) -> Result<bool, PipelineError> {
        Ok(self.cfg.bool_or("experiment", "smoke", false)?)
    }

    /// Reads a count key and applies smoke-mode reduction (divide, clamp)
    fn count(
        &self,
        section: &str,
        key: &str,
        default: usize,
        div: usize,
        min: usize,
    ) -> Result<usize, PipelineError> {
        let raw = self.cfg.usize_or(section, key, default)?;
        if self.smoke()? {
            Ok((raw / div).max(min.min(raw)))
        } else {
            Ok(raw)
        }
    }

    fn dir(&self, sub: &str) -> PathBuf {
        self.out.join(sub)
    }

    fn file(&self, sub: &str, name: &str) -> PathBuf {
        self.dir(sub).join(name)
    }

    /// Validates the configuration and returns the humanreadable stage plan
    /// without touching the filesystem
    pub fn plan(&self) -> Result<Vec<String>, PipelineError> {
        let kind = self.kind()?;
        let seed = self.seed()?;
        let smoke = self.smoke()?;
        let mut plan = vec![format!("experiment {kind} (seed {seed}, smoke {smoke})")];
        match kind.as_str() {
            "benchmark1" => {
                let spec = self.elastic_spec()?;
                self.elastic_material()?;
                let epochs = self.count("train_energy", "epochs", 250, 50, 2)?;
                plan.push(format!(
                    "gen-data: linear and mcc energy grids ({} x {})",
                    spec.n_v, spec.n_s
                ));
                plan.push(format!(
                    "train-energy: 4 architectures (h2) + 3 objectives (dmmdmd), {epochs} epochs"
                ));
                plan.push("compare: stiffness-loss reduction and objective ordering".into());
            }
            "polycrystal" => {
                self.surface_params()?;
                let y = self.yield_spec()?;
                plan.push(format!(
                    "gen-data: synthetic surface, {} angles x {} snapshots",
                    y.n_angles, y.n_snapshots
                ));
                plan.push("train-yield + train-flow on the sampled tables".into());
                let n = self.count("thermo", "n_states", 10000, 50, 200)?;
                plan.push(format!("simulate: {n} thermodynamic spot checks + driver paths"));
            }
            "eikonal" => {
                self.surface_params()?;
                self.yield_spec()?;
                plan.push("gen-data: fast-marched surface tables".into());
                plan.push("train-yield twice (with and without the eikonal penalty)".into());
            }
            "appendixD" => {
                self.elastic_spec()?;
                self.j2_material()?;
                self.yield_spec()?;
                let n_train = self.count("paths", "n_train", 24, 8, 3)?;
                plan.push(format!("gen-data: energy grid, yield exploration, {n_train} rays"));
                plan.push("train-energy/train-yield/train-flow + baseline".into());
                plan.push("simulate: framework and baseline on held-out protocols".into());
                plan.push("compare: rms q errors and unloading slopes".into());
            }
            "fictitious" => {
                self.j2_material()?;
                plan.push("simulate: chained fictitious-transform driver paths".into());
            }
            _ => unreachable!("kind is validated"),
        }
        plan.push("export: svg plots for every report table".into());
        Ok(plan)
    }

    /// Runs every stage in order, echoing the resolved configuration first
    pub fn run_all(&self) -> Result<(), PipelineError> {
        self.prepare_dirs()?;
        std::fs::write(self.out.join("config_echo.cfg"), self.cfg.to_text())?;
        for stage in Stage::all() {
            self.run_stage(stage)?;
        }
        Ok(())
    }

    /// Creates the shared output layout
    pub fn prepare_dirs(&self) -> Result<(), PipelineError> {
        for sub in ["datasets", "checkpoints", "paths", "reports", "plots"] {
            std::fs::create_dir_all(self.dir(sub))?;
        }
        Ok(())
    }

    /// Runs one stage; stages not used by the preset are no-ops
    pub fn run_stage(&self, stage: Stage) -> Result<(), PipelineError> {
        self.prepare_dirs()?;
        match stage {
            Stage::GenData => self.gen_data(),
            Stage::TrainEnergy => self.train_energy(),
            Stage::TrainYield => self.train_yield(),
            Stage::TrainFlow => self.train_flow(),
            Stage::Simulate => self.simulate(),
            Stage::Compare => self.compare(),
            Stage::Export => self.export(),
        }
    }

    ////////////////////////////////////////////////////////////////////////
    // config readers

    fn elastic_spec(&self) -> Result<ElasticDatasetSpec, PipelineError> {
        let d = ElasticDatasetSpec::default();
        Ok(ElasticDatasetSpec {
            eps_v_min: self.cfg.f64_or("elastic", "eps_v_min", d.eps_v_min)?,
            eps_v_max: self.cfg.f64_or("elastic", "eps_v_max", d.eps_v_max)?,
            eps_s_min: self.cfg.f64_or("elastic", "eps_s_min", d.eps_s_min)?,
            eps_s_max: self.cfg.f64_or("elastic", "eps_s_max", d.eps_s_max)?,
            n_v: self.count("elastic", "n_v", d.n_v, 8, 6)?,
            n_s: self.count("elastic", "n_s", d.n_s, 8, 6)?,
        })
    }

    fn elastic_material(&self) -> Result<LinearElasticParams, PipelineError> {
        Ok(LinearElasticParams {
            young: self.cfg.f64_or("material", "young", 2079.9)?,
            poisson: self.cfg.f64_or("material", "poisson", 0.3)?,
        })
    }

    fn j2_material(&self) -> Result<(LinearElasticParams, J2Params), PipelineError> {
        Ok((
            self.elastic_material()?,
            J2Params {
                sigma_y0: self.cfg.f64_or("material", "sigma_y0", 100.0)?,
                hardening: self.cfg.f64_or("material", "hardening", 207.99)?,
            },
        ))
    }

    fn surface_params(&self) -> Result<SyntheticSurfaceParams, PipelineError> {
        Ok(SyntheticSurfaceParams::new(
            self.cfg.f64_or("surface", "r0", 100.0)?,
            self.cfg.f64_or("surface", "hs", 250.0)?,
            self.cfg.f64_or("surface", "xi_star", 0.3)?,
            self.cfg.f64_or("surface", "sharpness", 8.0)?,
        ))
    }

    fn yield_spec(&self) -> Result<YieldGenSpec, PipelineError> {
        let sdf = match self.cfg.str_or("yield_data", "sdf", "polyline").as_str() {
            "polyline" => SdfSource::Polyline,
            "fast-march" => SdfSource::FastMarch {
                n_rho: self.count("yield_data", "n_rho", 128, 4, 24)?,
                n_theta: self.count("yield_data", "n_theta", 256, 4, 48)?,
            },
            other => {
                return Err(PipelineError::Invalid(format!("unknown sdf source {other:?}")))
            }
        };
        Ok(YieldGenSpec {
            n_angles: self.count("yield_data", "n_angles", 140, 10, 12)?,
            n_snapshots: self.count("yield_data", "n_snapshots", 10, 3, 3)?,
            xi_max: self.cfg.f64_or("yield_data", "xi_max", 0.2)?,
            sdf,
        })
    }

    fn train_cfg(&self, section: &str, default_epochs: usize) -> Result<TrainConfig, PipelineError> {
        let mut cfg = TrainConfig {
            epochs: self.count(section, "epochs", default_epochs, 50, 2)?,
            batch_size: self.cfg.usize_or(section, "batch", 32)?,
            seed: self.seed()?,
            validation_fraction: self.cfg.f64_or(section, "validation_fraction", 0.1)?,
            ..TrainConfig::default()
        };
        cfg.nadam.learning_rate = self.cfg.f64_or(section, "learning_rate", 0.001)?;
        Ok(cfg)
    }

    fn increments(&self) -> Result<usize, PipelineError> {
        self.count("paths", "increments", 300, 7, 40)
    }

    /// Returns the held-out evaluation protocols of the appendixD preset
    fn eval_protocols(&self) -> Result<Vec<(&'static str, StressPathProtocol)>, PipelineError> {
        let theta = self.cfg.f64_or("paths", "theta_eval", 0.35)?;
        let eps_s_max = self.cfg.f64_or("paths", "eps_s_max", 0.12)?;
        let increments = self.increments()?;
        Ok(vec![
            ("monotonic", StressPathProtocol::MonotonicRadial { theta, eps_s_max, increments }),
            (
                "unload",
                StressPathProtocol::LoadUnload {
                    theta,
                    eps_s_max,
                    increments,
                    unloads: vec![(0.55, 0.2), (0.85, 0.45)],
                },
            ),
            (
                "cyclic",
                StressPathProtocol::Cyclic {
                    theta,
                    eps_s_max,
                    increments,
                    amplitudes: vec![0.6, 0.12, 0.85, 0.2, 1.0],
                },
            ),
        ])
    }

    ////////////////////////////////////////////////////////////////////////
    // stages

    fn gen_data(&self) -> Result<(), PipelineError> {
        let seed = self.seed()?;
        match self.kind()?.as_str() {
            "benchmark1" => {
                let spec = self.elastic_spec()?;
                let lin = EnergyFunction::Linear(self.elastic_material()?);
                elastic_table(&gen_elastic_dataset(&spec, &lin), seed, "linear")
                    .save(&self.file("datasets", "elastic_linear.csv"))?;
                let mcc = EnergyFunction::Mcc(crate::matlib::MccParams::benchmark());
                elastic_table(&gen_elastic_dataset(&spec, &mcc), seed, "mcc")
                    .save(&self.file("datasets", "elastic_mcc.csv"))?;
            }
            "polycrystal" | "eikonal" => {
                let par = self.surface_params()?;
                let res = gen_yield_dataset_synthetic(&par, &self.yield_spec()?);
                yield_table(&res.dataset, seed, "synthetic")
                    .save(&self.file("datasets", "yield.csv"))?;
                flow_table(&res.flow, seed, "synthetic")
                    .save(&self.file("datasets", "flow.csv"))?;
            }
            "appendixD" => {
                let (elastic, plastic) = self.j2_material()?;
                let lin = EnergyFunction::Linear(elastic);
                elastic_table(&gen_elastic_dataset(&self.elastic_spec()?, &lin), seed, "linear")
                    .save(&self.file("datasets", "elastic_linear.csv"))?;
                let model = j2_model(elastic, plastic);
                let res = gen_yield_dataset_driver(&model, &self.yield_spec()?)?;
                yield_table(&res.dataset, seed, "driver")
                    .save(&self.file("datasets", "yield.csv"))?;
                flow_table(&res.flow, seed, "driver").save(&self.file("datasets", "flow.csv"))?;
                // monotonic training paths plus the held-out oracle paths
                let n_train = self.count("paths", "n_train", 24, 8, 3)?;
                let eps_s_max = self.cfg.f64_or("paths", "eps_s_max", 0.12)?;
                let increments = self.increments()?;
                for i in 0..n_train {
                    let theta = 2.0 * std::f64::consts::PI * i as f64 / n_train as f64;
                    let protocol =
                        StressPathProtocol::MonotonicRadial { theta, eps_s_max, increments };
                    let rec = run_path_driver(&model, &protocol)?;
                    path_table(&rec, seed).save(&self.file("paths", &format!("train_{i:02}.csv")))?;
                }
                for (name, protocol) in self.eval_protocols()? {
                    let rec = run_path_driver(&model, &protocol)?;
                    path_table(&rec, seed)
                        .save(&self.file("paths", &format!("eval_{name}.csv")))?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn train_energy(&self) -> Result<(), PipelineError> {
        let seed = self.seed()?;
        match self.kind()?.as_str() {
            "benchmark1" => {
                let arch_data = self.load_elastic(&format!(
                    "elastic_{}.csv",
                    self.cfg.str_or("train_energy", "arch_dataset", "linear")
                ))?;
                let order_data = self.load_elastic(&format!(
                    "elastic_{}.csv",
                    self.cfg.str_or("train_energy", "order_dataset", "mcc")
                ))?;
                let width = self.cfg.usize_or("train_energy", "width", 100)?;
                let cfg = self.train_cfg("train_energy", 250)?;
                for (i, code) in ["ddd", "dmdd", "dmdmd", "dmmdmd"].iter().enumerate() {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
                    let mut net =
                        NetworkModel::from_code(code, 2, 1, width, Activation::Relu, &mut rng)?;
                    let report = fit_energy(&mut net, &arch_data, &EnergyLossSpec::h2(), &cfg);
                    self.save_training(&format!("energy_arch_{code}"), &net, &report)?;
                }
                for (i, (tag, spec)) in [
                    ("l2", EnergyLossSpec::l2()),
                    ("h1", EnergyLossSpec::h1()),
                    ("h2", EnergyLossSpec::h2()),
                ]
                .iter()
                .enumerate()
                {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(100 + i as u64));
                    let mut net =
                        NetworkModel::from_code("dmmdmd", 2, 1, width, Activation::Relu, &mut rng)?;
                    let report = fit_energy(&mut net, &order_data, spec, &cfg);
                    self.save_training(&format!("energy_order_{tag}"), &net, &report)?;
                }
            }
            "appendixD" => {
                let data = self.load_elastic("elastic_linear.csv")?;
                let code = self.cfg.str_or("train_energy", "code", "dmmdmd");
                let width = self.cfg.usize_or("train_energy", "width", 100)?;
                let order = match self.cfg.str_or("train_energy", "order", "h2").as_str() {
                    "l2" => EnergyLossSpec::l2(),
                    "h1" => EnergyLossSpec::h1(),
                    "h2" => EnergyLossSpec::h2(),
                    other => {
                        return Err(PipelineError::Invalid(format!("unknown order {other:?}")))
                    }
                };
                let cfg = self.train_cfg("train_energy", 300)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut net =
                    NetworkModel::from_code(&code, 2, 1, width, Activation::Relu, &mut rng)?;
                let report = fit_energy(&mut net, &data, &order, &cfg);
                self.save_training("energy", &net, &report)?;
            }
            _ => {}
        }
        Ok(())
    }

    fn train_yield(&self) -> Result<(), PipelineError> {
        let kind = self.kind()?;
        if !matches!(kind.as_str(), "polycrystal" | "eikonal" | "appendixD") {
            return Ok(());
        }
        let seed = self.seed()?;
        let data = yield_from_table(&CsvTable::load(&self.file("datasets", "yield.csv"))?)?;
        let code = self.cfg.str_or("train_yield", "code", "dmmdd");
        let width = self.cfg.usize_or("train_yield", "width", 100)?;
        let cfg = self.train_cfg("train_yield", 400)?;
        let mut spec = YieldLossSpec {
            eikonal_weight: self.cfg.f64_or("train_yield", "eikonal_weight", 0.1)?,
            helper_amplitude: self.cfg.f64_or("train_yield", "helper_rel", 0.3)? * data.rho_bar,
            ..YieldLossSpec::default()
        };
        if kind == "eikonal" {
            // twin runs differing only in the eikonal penalty
            for (tag, weight) in [("plain", 0.0), ("eikonal", spec.eikonal_weight)] {
                spec.eikonal_weight = weight;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut net =
                    NetworkModel::from_code(&code, 3, 1, width, Activation::Relu, &mut rng)?;
                let report = fit_yield(&mut net, &data, &spec, &cfg);
                self.save_training(&format!("yield_{tag}"), &net, &report)?;
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net = NetworkModel::from_code(&code, 3, 1, width, Activation::Relu, &mut rng)?;
            let report = fit_yield(&mut net, &data, &spec, &cfg);
            self.save_training("yield", &net, &report)?;
        }
        Ok(())
    }

    fn train_flow(&self) -> Result<(), PipelineError> {
        let kind = self.kind()?;
        let seed = self.seed()?;
        if matches!(kind.as_str(), "polycrystal" | "appendixD") {
            let data = flow_from_table(&CsvTable::load(&self.file("datasets", "flow.csv"))?)?;
            let code = self.cfg.str_or("train_flow", "code", "ddd");
            let width = self.cfg.usize_or("train_flow", "width", 100)?;
            let cfg = self.train_cfg("train_flow", 300)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(7));
            let mut net = NetworkModel::from_code(&code, 3, 3, width, Activation::Relu, &mut rng)?;
            let report = fit_flow(&mut net, &data, &FlowLossSpec::default(), &cfg);
            self.save_training("flow", &net, &report)?;
        }
        if kind == "appendixD" {
            // the black-box baseline trains on the same monotonic paths
            let records = self.load_train_paths()?;
            let rows = step_samples(&records);
            let width = self.cfg.usize_or("baseline", "width", 100)?;
            let mut baseline = StepDenseBaseline::new(width, seed.wrapping_add(11));
            let cfg = TrainConfig {
                epochs: self.count("baseline", "epochs", 500, 50, 2)?,
                batch_size: self.cfg.usize_or("baseline", "batch", 64)?,
                seed,
                validation_fraction: 0.1,
                ..TrainConfig::default()
            };
            let report = baseline.fit(&rows, &cfg);
            self.save_training("baseline", &baseline.net, &report)?;
        }
        Ok(())
    }

    fn simulate(&self) -> Result<(), PipelineError> {
        let seed = self.seed()?;
        match self.kind()?.as_str() {
            "polycrystal" => {
                let chart = self.load_network_chart("yield.json")?;
                let flow_net =
                    NetworkModel::load_checkpoint(&self.file("checkpoints", "flow.json"))?;
                self.thermo_report(&chart)?;
                let model = CompositeModel {
                    energy: Box::new(EnergyFunction::Linear(self.elastic_material()?)),
                    chart: Box::new(chart),
                    flow: self.flow_rule(flow_net)?,
                };
                let eps_s_max = self.cfg.f64_or("paths", "eps_s_max", 0.1)?;
                let increments = self.increments()?;
                for (i, theta) in [0.2, 1.2, 2.5].into_iter().enumerate() {
                    let protocol =
                        StressPathProtocol::MonotonicRadial { theta, eps_s_max, increments };
                    self.try_sim_path(&model, &protocol, &format!("sim_ray{i}"), seed)?;
                }
                self.predicted_surface_report(&self.load_network_chart("yield.json")?)?;
            }
            "appendixD" => {
                let energy =
                    NetworkModel::load_checkpoint(&self.file("checkpoints", "energy.json"))?;
                let chart = self.load_network_chart("yield.json")?;
                let flow_net =
                    NetworkModel::load_checkpoint(&self.file("checkpoints", "flow.json"))?;
                let model = CompositeModel {
                    energy: Box::new(NetworkEnergy { net: energy }),
                    chart: Box::new(chart),
                    flow: self.flow_rule(flow_net)?,
                };
                for (name, protocol) in self.eval_protocols()? {
                    self.try_sim_path(&model, &protocol, &format!("sim_{name}"), seed)?;
                }
                // closed-loop baseline rollouts over the oracle strain paths
                let bl = StepDenseBaseline {
                    net: NetworkModel::load_checkpoint(&self.file("checkpoints", "baseline.json"))?,
                };
                for (name, _) in self.eval_protocols()? {
                    let oracle = self.load_path(&format!("eval_{name}.csv"))?;
                    let predicted = bl.rollout(&oracle);
                    let rec = synthesize_record(&oracle, &predicted);
                    path_table(&rec, seed)
                        .save(&self.file("paths", &format!("baseline_{name}.csv")))?;
                }
            }
            "fictitious" => {
                let (elastic, plastic) = self.j2_material()?;
                let model = CompositeModel {
                    energy: Box::new(EnergyFunction::Linear(elastic)),
                    chart: Box::new(ChainedYield {
                        base: J2Chart { par: plastic },
                        transform: HardeningTransform::Fictitious,
                    }),
                    flow: FlowRule::Associative,
                };
                let eps_s_max = self.cfg.f64_or("paths", "eps_s_max", 0.3)?;
                let increments = self.increments()?;
                let runs = [
                    (
                        "monotonic",
                        StressPathProtocol::MonotonicRadial { theta: 0.0, eps_s_max, increments },
                    ),
                    (
                        "cyclic",
                        StressPathProtocol::Cyclic {
                            theta: std::f64::consts::FRAC_PI_6,
                            eps_s_max,
                            increments,
                            amplitudes: vec![0.6, 0.15, 1.0],
                        },
                    ),
                ];
                let mut rows: Vec<(String, f64)> = Vec::new();
                for (name, protocol) in runs {
                    let rec = run_path_driver(&model, &protocol)?;
                    let plastic_steps = rec.steps.iter().filter(|s| s.plastic).count();
                    rows.push((format!("plastic_steps.{name}"), plastic_steps as f64));
                    rows.push((format!("final_xi.{name}"), rec.final_xi()));
                    let min_diss =
                        rec.steps.iter().map(|s| s.dissipation).fold(f64::INFINITY, f64::min);
                    rows.push((format!("min_dissipation.{name}"), min_diss));
                    path_table(&rec, seed).save(&self.file("paths", &format!("sim_{name}.csv")))?;
                }
                metric_table(&rows, seed).save(&self.file("reports", "sim_metrics.csv"))?;
            }
            _ => {}
        }
        Ok(())
    }

    fn compare(&self) -> Result<(), PipelineError> {
        let seed = self.seed()?;
        let mut rows: Vec<(String, f64)> = Vec::new();
        match self.kind()?.as_str() {
            "benchmark1" => {
                for code in ["ddd", "dmdd", "dmdmd", "dmmdmd"] {
                    let t =
                        CsvTable::load(&self.file("reports", &format!("energy_arch_{code}_loss.csv")))?;
                    let stiff = t.f64_column("train_stiffness")?;
                    let first = stiff.first().copied().unwrap_or(f64::NAN);
                    let last = stiff.last().copied().unwrap_or(f64::NAN);
                    rows.push((format!("stiffness_reduction.{code}"), first / last));
                    let total = t.f64_column("train_total")?;
                    rows.push((
                        format!("final_train_total.{code}"),
                        total.last().copied().unwrap_or(f64::NAN),
                    ));
                }
                for tag in ["l2", "h1", "h2"] {
                    let t = CsvTable::load(
                        &self.file("reports", &format!("energy_order_{tag}_loss.csv")),
                    )?;
                    let total = t.f64_column("val_total")?;
                    rows.push((
                        format!("final_val_total.{tag}"),
                        total.last().copied().unwrap_or(f64::NAN),
                    ));
                }
            }
            "eikonal" => {
                for tag in ["plain", "eikonal"] {
                    let t =
                        CsvTable::load(&self.file("reports", &format!("yield_{tag}_loss.csv")))?;
                    for comp in ["train_value", "train_eikonal"] {
                        let col = t.f64_column(comp)?;
                        rows.push((
                            format!("final_{comp}.{tag}"),
                            col.last().copied().unwrap_or(f64::NAN),
                        ));
                    }
                }
            }
            "polycrystal" => {
                let t = CsvTable::load(&self.file("reports", "thermo.csv"))?;
                for (name, value) in read_metric_table(&t)? {
                    rows.push((name, value));
                }
            }
            "appendixD" => {
                let (elastic, plastic) = self.j2_material()?;
                let shear = elastic.shear();
                let sigma_y0 = plastic.sigma_y0;
                for (name, _) in self.eval_protocols()? {
                    let oracle = self.load_path(&format!("eval_{name}.csv"))?;
                    for variant in ["sim", "baseline"] {
                        let path = self.file("paths", &format!("{variant}_{name}.csv"));
                        if !path.exists() {
                            continue;
                        }
                        let rec = path_from_table(&CsvTable::parse(
                            &std::fs::read_to_string(&path)?,
                        )?)?;
                        let rms = rms_q_error(&oracle, &rec);
                        rows.push((format!("rms_q.{variant}.{name}"), rms));
                        rows.push((
                            format!("rms_q_rel_yield.{variant}.{name}"),
                            rms / sigma_y0,
                        ));
                        if name == "unload" && oracle.legs.len() > 1 {
                            // first unloading branch, fitted above the
                            // deviatoric stress reversal
                            if let Some(slope) = unloading_slope(&rec, oracle.legs[1], 0.6) {
                                rows.push((
                                    format!("unload_slope_err.{variant}"),
                                    (slope - 3.0 * shear).abs() / (3.0 * shear),
                                ));
                            }
                        }
                    }
                }
            }
            "fictitious" => {
                let t = CsvTable::load(&self.file("reports", "sim_metrics.csv"))?;
                for (name, value) in read_metric_table(&t)? {
                    rows.push((name, value));
                }
                rows.push(("newton_failures".into(), 0.0));
            }
            _ => {}
        }
        metric_table(&rows, seed).save(&self.file("reports", "metrics.csv"))?;
        Ok(())
    }

    fn export(&self) -> Result<(), PipelineError> {
        // loss histories become log-scale convergence plots
        let reports = self.dir("reports");
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&reports)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for path in &entries {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if let Some(stem) = name.strip_suffix("_loss.csv") {
                let t = CsvTable::parse(&std::fs::read_to_string(path)?)?;
                let epochs = t.f64_column("epoch")?;
                let mut chart =
                    LineChart::new(&format!("{stem} training"), "epoch", "loss").with_log_y();
                for col in ["train_total", "val_total"] {
                    let ys = t.f64_column(col)?;
                    let pts: Vec<(f64, f64)> = epochs
                        .iter()
                        .zip(&ys)
                        .filter(|(_, y)| y.is_finite())
                        .map(|(&x, &y)| (x, y))
                        .collect();
                    if !pts.is_empty() {
                        chart.add(Series::new(col, pts));
                    }
                }
                chart.save(&self.file("plots", &format!("{stem}_loss.svg")))?;
            }
        }
        // paths: stress measure against the drive coordinate, oracle overlaid
        // with whichever predictions exist
        let mut path_files: Vec<PathBuf> = std::fs::read_dir(self.dir("paths"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        path_files.sort();
        for path in &path_files {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            let base = match name.strip_prefix("eval_").or(name.strip_prefix("sim_")) {
                Some(b) => b.trim_end_matches(".csv").to_string(),
                None => continue,
            };
            let svg = self.file("plots", &format!("path_{base}.svg"));
            if svg.exists() {
                continue;
            }
            let mut chart = LineChart::new(
                &format!("{base} path"),
                "deviatoric strain coordinate",
                "q (kPa)",
            );
            for (label, file) in [
                ("oracle", format!("eval_{base}.csv")),
                ("framework", format!("sim_{base}.csv")),
                ("baseline", format!("baseline_{base}.csv")),
            ] {
                let p = self.file("paths", &file);
                if !p.exists() {
                    continue;
                }
                let rec = self.load_path(&file)?;
                chart.add(Series::new(label, rec.s_q()));
            }
            chart.save(&svg)?;
        }
        // predicted-surface tables become pi-plane charts
        let surface = self.file("reports", "surfaces.csv");
        if surface.exists() {
            let t = CsvTable::parse(&std::fs::read_to_string(&surface)?)?;
            let xi = t.f64_column("xi")?;
            let theta = t.f64_column("theta")?;
            let truth = t.f64_column("rho_truth")?;
            let pred = t.f64_column("rho_pred")?;
            let mut chart = LineChart::new("yield surfaces", "s1 (kPa)", "s2 (kPa)");
            let mut k = 0;
            while k < xi.len() {
                let level = xi[k];
                let mut truth_pts = Vec::new();
                let mut pred_pts = Vec::new();
                let mut j = k;
                while j < xi.len() && xi[j] == level {
                    truth_pts.push((truth[j] * theta[j].cos(), truth[j] * theta[j].sin()));
                    pred_pts.push((pred[j] * theta[j].cos(), pred[j] * theta[j].sin()));
                    j += 1;
                }
                let (t0, p0) = (truth_pts[0], pred_pts[0]);
                truth_pts.push(t0);
                pred_pts.push(p0);
                chart.add(Series::new(&format!("truth xi={level:.3}"), truth_pts));
                chart.add(Series::new(&format!("pred xi={level:.3}"), pred_pts));
                k = j;
            }
            chart.save(&self.file("plots", "surfaces.svg"))?;
        }
        Ok(())
    }

    ////////////////////////////////////////////////////////////////////////
    // shared helpers

    fn load_elastic(&self, name: &str) -> Result<Vec<crate::training::EnergySample>, PipelineError> {
        elastic_from_table(&CsvTable::load(&self.file("datasets", name))?)
    }

    fn load_path(&self, name: &str) -> Result<PathRecord, PipelineError> {
        path_from_table(&CsvTable::load(&self.file("paths", name))?)
    }

    fn load_train_paths(&self) -> Result<Vec<PathRecord>, PipelineError> {
        let mut out = Vec::new();
        let mut files: Vec<PathBuf> = std::fs::read_dir(self.dir("paths"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("train_") && n.ends_with(".csv"))
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(PipelineError::Invalid("no training paths found; run gen-data".into()));
        }
        for f in files {
            out.push(path_from_table(&CsvTable::parse(&std::fs::read_to_string(f)?)?)?);
        }
        Ok(out)
    }

    fn load_network_chart(&self, checkpoint: &str) -> Result<NetworkChart, PipelineError> {
        let net = NetworkModel::load_checkpoint(&self.file("checkpoints", checkpoint))?;
        // the helper amplitude is re-derived from the same dataset the
        // trainer used, keeping checkpoint and chart consistent
        let data = yield_from_table(&CsvTable::load(&self.file("datasets", "yield.csv"))?)?;
        let amplitude = self.cfg.f64_or("train_yield", "helper_rel", 0.3)? * data.rho_bar;
        Ok(NetworkChart::new(net, amplitude))
    }

    fn flow_rule(&self, net: NetworkModel) -> Result<FlowRule, PipelineError> {
        match self.cfg.str_or("paths", "flow", "network").as_str() {
            "network" => Ok(FlowRule::Network(net)),
            "associative" => Ok(FlowRule::Associative),
            other => Err(PipelineError::Invalid(format!("unknown flow rule {other:?}"))),
        }
    }

    fn save_training(
        &self,
        stem: &str,
        net: &NetworkModel,
        report: &TrainReport,
    ) -> Result<(), PipelineError> {
        net.save_checkpoint(&self.file("checkpoints", &format!("{stem}.json")))?;
        loss_history_table(report, self.seed()?)
            .save(&self.file("reports", &format!("{stem}_loss.csv")))?;
        Ok(())
    }

    /// Runs one framework path; a non-converged step is recorded as a metric
    /// instead of aborting the experiment
    fn try_sim_path(
        &self,
        model: &CompositeModel,
        protocol: &StressPathProtocol,
        stem: &str,
        seed: u64,
    ) -> Result<(), PipelineError> {
        match run_path_driver(model, protocol) {
            Ok(rec) => {
                path_table(&rec, seed).save(&self.file("paths", &format!("{stem}.csv")))?;
                Ok(())
            }
            Err(PipelineError::Step { step, source }) => {
                let rows = vec![(format!("failed_at_step.{stem}"), step as f64)];
                metric_table(&rows, seed)
                    .save(&self.file("reports", &format!("{stem}_failed.csv")))?;
                eprintln!("warning: {stem} stopped at step {step}: {source}");
                Ok(())
            }
            Err(other) => Err(other),
        }
    }

    /// Spot-checks the trained yield chart: the fraction of admissible
    /// states with non-negative stress-gradient contraction
    fn thermo_report(&self, chart: &NetworkChart) -> Result<(), PipelineError> {
        let seed = self.seed()?;
        let par = self.surface_params()?;
        let xi_max = self.cfg.f64_or("yield_data", "xi_max", 0.2)?;
        let n = self.count("thermo", "n_states", 10000, 50, 200)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(23));
        let mut ok = 0usize;
        let mut checked = 0usize;
        for _ in 0..n {
            let theta = rng.gen::<f64>() * std::f64::consts::TAU;
            let xi = rng.gen::<f64>() * xi_max;
            let rho = (0.2 + 0.78 * rng.gen::<f64>()) * synthetic_surface_radius(theta, xi, &par);
            let sigma = crate::invariants::principal_from_pi_plane(&crate::invariants::PiPlaneCoords {
                s1: rho * theta.cos(),
                s2: rho * theta.sin(),
                s3: 0.0,
            });
            let ld = match crate::returnmap::LodeChart::eval(chart, rho, theta, xi) {
                Ok(ld) => ld,
                Err(_) => continue,
            };
            let ev = lode_chain(&ld, sigma);
            checked += 1;
            let work: f64 = (0..3).map(|a| sigma[a] * ev.grad[a]).sum();
            if work >= 0.0 {
                ok += 1;
            }
        }
        let rows = vec![
            ("thermo_states_checked".to_string(), checked as f64),
            ("thermo_nonneg_fraction".to_string(), ok as f64 / checked.max(1) as f64),
        ];
        metric_table(&rows, seed).save(&self.file("reports", "thermo.csv"))?;
        Ok(())
    }

    /// Extracts the predicted zero level set along each sampled ray and
    /// tabulates it against the synthetic truth
    fn predicted_surface_report(&self, chart: &NetworkChart) -> Result<(), PipelineError> {
        let seed = self.seed()?;
        let par = self.surface_params()?;
        let spec = self.yield_spec()?;
        let mut t = CsvTable::new(&["xi", "theta", "rho_truth", "rho_pred"])
            .with_meta("kind", "surface-comparison")
            .with_meta("seed", &seed.to_string())
            .with_meta("units", "kPa");
        let mut err_acc = 0.0;
        let mut count = 0usize;
        for xi in spec.xi_targets() {
            for i in 0..spec.n_angles {
                let theta = std::f64::consts::TAU * i as f64 / spec.n_angles as f64;
                let truth = synthetic_surface_radius(theta, xi, &par);
                let pred = zero_crossing(chart, theta, xi, 2.0 * truth).unwrap_or(f64::NAN);
                if pred.is_finite() {
                    err_acc += (pred - truth).abs() / truth;
                    count += 1;
                }
                t.push_row_f64(&[xi, theta, truth, pred]);
            }
        }
        t.save(&self.file("reports", "surfaces.csv"))?;
        let rows = vec![(
            "surface_mean_rel_radius_error".to_string(),
            if count > 0 { err_acc / count as f64 } else { f64::NAN },
        )];
        metric_table(&rows, seed).save(&self.file("reports", "surface_metrics.csv"))?;
        Ok(())
    }
}

/// Runs a preset end to end in a fresh output directory
pub fn run_preset(name: &str, seed: u64, smoke: bool, out: &Path) -> Result<(), PipelineError> {
    let mut cfg = preset_config(name)?;
    cfg.set("experiment", "seed", &seed.to_string());
    cfg.set("experiment", "smoke", if smoke { "true" } else { "false" });
    Experiment::new(cfg, out)?.run_all()
}

/// Finds the radius where the chart value crosses zero along a ray by
/// bisection; None when the bracket never straddles zero
fn zero_crossing(chart: &NetworkChart, theta: f64, xi: f64, rho_max: f64) -> Option<f64> {
    use crate::returnmap::LodeChart;
    let f = |rho: f64| chart.eval(rho, theta, xi).map(|ld| ld.f).unwrap_or(f64::NAN);
    let mut lo = 1e-6 * rho_max;
    let mut hi = rho_max;
    let (flo, fhi) = (f(lo), f(hi));
    if !(flo < 0.0 && fhi > 0.0) {
        return None;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Rebuilds a path record from predicted stresses over a recorded strain
/// history; history-variable columns are zeroed since the predictor has none
fn synthesize_record(oracle: &PathRecord, predicted: &[SymTensor3]) -> PathRecord {
    let mut steps = Vec::with_capacity(oracle.steps.len());
    for (o, sig) in oracle.steps.iter().zip(predicted) {
        let si = stress_invariants(sig);
        let principal = crate::invariants::spectral_decompose(sig).values;
        let (rho, theta) = crate::returnmap::lode_coordinates(principal).unwrap_or((0.0, f64::NAN));
        steps.push(PathStep {
            step: o.step,
            s: o.s,
            eps: o.eps,
            stress: *sig,
            eps_v: o.eps_v,
            eps_s: o.eps_s,
            p: si.p,
            q: si.q,
            rho,
            theta,
            xi: 0.0,
            delta_lambda: 0.0,
            plastic: false,
            dissipation: 0.0,
        });
    }
    PathRecord {
        description: format!("baseline rollout of {}", oracle.description),
        steps,
        legs: oracle.legs.clone(),
    }
}

/// Converts a training report to its CSV table form
pub fn loss_history_table(report: &TrainReport, seed: u64) -> CsvTable {
    let mut columns = vec!["epoch".to_string(), "train_total".to_string(), "val_total".to_string()];
    for c in &report.component_names {
        columns.push(format!("train_{c}"));
    }
    for c in &report.component_names {
        columns.push(format!("val_{c}"));
    }
    let refs: Vec<&str> = columns.iter().map(|s| s.as_str()).collect();
    let mut t = CsvTable::new(&refs)
        .with_meta("kind", "loss-history")
        .with_meta("diverged", if report.diverged { "true" } else { "false" })
        .with_meta("seed", &seed.to_string());
    for rec in &report.history {
        let mut row = vec![rec.epoch as f64, rec.train_total, rec.val_total];
        row.extend_from_slice(&rec.train_components);
        row.extend_from_slice(&rec.val_components);
        t.push_row_f64(&row);
    }
    t
}

/// Converts (name, value) metric rows to their CSV table form
pub fn metric_table(rows: &[(String, f64)], seed: u64) -> CsvTable {
    let mut t = CsvTable::new(&["name", "value"])
        .with_meta("kind", "metrics")
        .with_meta("seed", &seed.to_string());
    for (name, value) in rows {
        t.push_row(&[name, &fmt_f64(*value)]);
    }
    t
}

/// Reads (name, value) metric rows back from a CSV table
pub fn read_metric_table(table: &CsvTable) -> Result<Vec<(String, f64)>, PipelineError> {
    let name_col = table.column("name")?;
    let mut out = Vec::with_capacity(table.rows.len());
    for row in 0..table.rows.len() {
        out.push((table.rows[row][name_col].clone(), table.f64_cell(row, "value")?));
    }
    Ok(out)
}

////////////////////////////////////////////////////////////////////////////////
