use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::certify::{self, Certificate, ResidualReport};
use crate::mpc_expert::{discretize, generate_dataset, Dataset, MpcController};
use crate::nn_policy::{Policy, WeightsFile};
use crate::sim::{self, ModalPlant, PlotData, RoaValidation, Series, TimingReport};
use crate::train::{self, current_sector, ntilde, Remedy, TrainContext, TrainReport};

use super::config::{ExperimentConfig, Resolved};
use super::manifest::{hash_file, Manifest, StageEntry};
use super::CliError;

/// A validated configuration bound to its output directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub out: PathBuf,
    pub resolved: Resolved,
}

impl Run {
    /// Applies the overrides, validates, and fixes the output directory.
    pub fn new(mut cfg: ExperimentConfig, out: Option<PathBuf>, seed: Option<u64>) -> Result<Self, CliError> {
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(o) = out {
            cfg.out = Some(o);
        }
        let resolved = cfg.resolve()?;
        let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(&cfg.scenario));
        Ok(Self { hash: cfg.hash(), cfg, out, resolved })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn manifest(&self) -> Result<Manifest, CliError> {
        Manifest::read(&self.out)?.ok_or_else(|| CliError::Upstream(format!("no manifest in {}; run the model stage first", self.out.display())))
    }

    /// Upstream hashes plus the config hash, after the consistency checks.
    fn inputs(&self, deps: &[&str]) -> Result<BTreeMap<String, String>, CliError> {
        let m = self.manifest()?;
        let mut inputs = BTreeMap::new();
        inputs.insert("config".to_string(), self.hash.clone());
        for d in deps {
            inputs.extend(m.upstream(&self.out, d, &self.hash)?);
        }
        Ok(inputs)
    }

    fn record(&self, stage: &str, inputs: BTreeMap<String, String>, outputs: &[&str], volatile: &[&str], start: Instant) -> Result<(), CliError> {
        let mut m = match Manifest::read(&self.out)? {
            Some(m) if m.config_hash == self.hash => m,
            _ => Manifest::new(&self.cfg.scenario, &self.hash, self.cfg.seed),
        };
        let outputs = outputs.iter().map(|n| Ok((n.to_string(), hash_file(&self.path(n))?))).collect::<Result<_, CliError>>()?;
        let entry = StageEntry {
            stage: stage.into(),
            config_hash: self.hash.clone(),
            seed: self.cfg.seed,
            inputs,
            outputs,
            volatile: volatile.iter().map(|s| s.to_string()).collect(),
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        m.stages.insert(stage.into(), entry);
        m.write(&self.out)
    }

    fn write_json<T: Serialize>(&self, name: &str, v: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Stage(e.into()))?;
        std::fs::write(self.path(name), text + "\n").map_err(|e| CliError::Stage(e.into()))
    }

    fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T, CliError> {
        let text = std::fs::read_to_string(self.path(name)).map_err(|e| CliError::Upstream(format!("cannot read {name}: {e}")))?;
        serde_json::from_str(&text).map_err(|e| CliError::Upstream(format!("corrupt {name}: {e}")))
    }

    fn policy(&self) -> Result<Policy, CliError> {
        Ok(Policy::from_file(&self.read_json::<WeightsFile>(WEIGHTS)?)?)
    }

    fn controller(&self) -> Result<MpcController, CliError> {
        let sys = discretize(&self.resolved.sys, self.cfg.mpc.dt)?;
        Ok(MpcController::new(self.cfg.mpc.clone(), sys)?)
    }
}

pub const MODEL: &str = "model.json";
pub const MODES: &str = "modes.csv";
pub const DATASET: &str = "dataset.csv";
pub const DATASET_META: &str = "dataset_meta.json";
pub const WEIGHTS: &str = "weights.json";
pub const TRAIN_CERTIFICATE: &str = "train_certificate.json";
pub const HISTORY: &str = "history.csv";
pub const TRAIN_REPORT: &str = "train_report.json";
pub const CERTIFICATE: &str = "certificate.json";
pub const VERIFICATION: &str = "verification.json";
pub const ROA: &str = "roa.json";
pub const TRAJECTORY: &str = "trajectory.csv";
pub const FIELD: &str = "field.csv";
pub const V_PLOT: &str = "v_plot.json";
pub const PHASE_PLOT: &str = "phase_plot.json";
pub const U_PLOT: &str = "u_plot.json";
pub const TIMING: &str = "timing.json";
pub const REPORT: &str = "report.json";
pub const REPORT_V: &str = "report_v.svg";
pub const REPORT_PHASE: &str = "report_phase.svg";
pub const REPORT_U: &str = "report_u.svg";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Stage(e.into()))
}

/// Spectral model JSON and a mode table.
pub fn cmd_model(run: &Run) -> Result<(), CliError> {
    let start = Instant::now();
    create_dir(&run.out)?;
    let r = &run.resolved;
    run.write_json(MODEL, &r.model.export(run.cfg.spectral.delta)?)?;
    let mut w = csv::Writer::from_path(run.path(MODES)).map_err(|e| crate::Error::Artifact(e.to_string()))?;
    let row = |w: &mut csv::Writer<std::fs::File>, rec: Vec<String>| w.write_record(rec).map_err(|e| crate::Error::Artifact(e.to_string()));
    row(&mut w, ["n", "mu", "lambda", "a", "b", "beta", "rate", "retained"].map(String::from).to_vec())?;
    for m in &r.model.modes {
        let vals = [m.mu, m.lambda, m.a, m.b, m.beta, m.drift(r.model.q_c)].map(|v| format!("{v:e}"));
        let mut rec = vec![m.n.to_string()];
        rec.extend(vals);
        rec.push((m.n <= r.n0).to_string());
        row(&mut w, rec)?;
    }
    w.flush().map_err(|e| CliError::Stage(e.into()))?;
    let mut inputs = BTreeMap::new();
    inputs.insert("config".to_string(), run.hash.clone());
    run.record("model", inputs, &[MODEL, MODES], &[], start)
}

/// MPC expert data on the configured grid.
pub fn cmd_dataset(run: &Run) -> Result<(), CliError> {
    let start = Instant::now();
    let inputs = run.inputs(&["model"])?;
    let data = generate_dataset(&run.controller()?, &run.cfg.dataset.grid)?;
    data.write(&run.path(DATASET), &run.path(DATASET_META))?;
    run.record("dataset", inputs, &[DATASET, DATASET_META], &[], start)
}

fn dataset(run: &Run) -> Result<Dataset, CliError> {
    Ok(Dataset::read(&run.path(DATASET), &run.path(DATASET_META))?)
}

/// Safe imitation training from a seeded initialization.
pub fn cmd_train(run: &Run) -> Result<(), CliError> {
    let start = Instant::now();
    let inputs = run.inputs(&["model", "dataset"])?;
    let data = dataset(run)?;
    let r = &run.resolved;
    let tc = &run.cfg.train;
    let init = Policy::random(r.n0, &tc.hidden, &mut ChaCha8Rng::seed_from_u64(run.cfg.seed))?;
    let ctx = TrainContext { sys: &r.sys, state_box: &run.cfg.mpc.state_box, data: &data, tail_norm2: r.tail_norm2 };
    let out = train::train(tc, ctx, init)?;
    run.write_json(WEIGHTS, &out.policy.to_file())?;
    run.write_json(TRAIN_CERTIFICATE, &out.certificate)?;
    run.write_json(TRAIN_REPORT, &out.report)?;
    train::write_history(&run.path(HISTORY), &out.history)?;
    run.record("train", inputs, &[WEIGHTS, TRAIN_CERTIFICATE, TRAIN_REPORT, HISTORY], &[], start)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    /// All of the checks below hold.
    pub certified: bool,
    pub lmi_margin: f64,
    pub lmi_margin_ok: bool,
    /// Largest eigenvalue of the theorem form rebuilt from the weights.
    pub audit_max_eig: f64,
    pub theorem_negative_definite: bool,
    pub containment_margins: Vec<f64>,
    pub containment_ok: bool,
    /// `‖𝓕(N)H − L‖_F` of the stored variables.
    pub consistency: f64,
    pub residual: ResidualReport,
    pub remedy: Option<Remedy>,
    pub roa_semi_axes: Vec<f64>,
    pub logdet_h1: f64,
}

/// Independent audit of the trained network and its certificate.
pub fn cmd_certify(run: &Run) -> Result<(), CliError> {
    let start = Instant::now();
    let inputs = run.inputs(&["model", "train"])?;
    let r = &run.resolved;
    let tc = &run.cfg.train;
    let sb = &run.cfg.mpc.state_box;
    let policy = run.policy()?;
    let stored: Certificate = run.read_json(TRAIN_CERTIFICATE)?;
    let nt = ntilde(&policy, &current_sector(&policy, &sb.hypercube()?)?)?;
    let delta = r.sys.delta;
    let mut cert = Certificate::new(&r.sys, sb, &nt, stored.vars, delta, tc.tau, tc.gamma)?;
    let residual = certify::verify_residual_search(&r.sys, &nt, &cert.p, &cert.lambda, delta, tc.gamma, r.tail_norm2, r.sys.lambda_next, &tc.verify)?;
    cert.gamma = residual.gamma;
    cert.alpha = residual.alpha_star;
    let audit_max_eig = train::audit(&policy, &r.sys, sb, &cert)?;
    let roa = cert.roa()?;
    let lmi_margin_ok = cert.psd_margins.lmi >= 1e-7;
    let theorem_negative_definite = audit_max_eig < 0.0;
    let containment_ok = cert.psd_margins.containment.iter().all(|&m| m >= 0.0);
    let v = Verification {
        certified: lmi_margin_ok && theorem_negative_definite && containment_ok && residual.feasible,
        lmi_margin: cert.psd_margins.lmi,
        lmi_margin_ok,
        audit_max_eig,
        theorem_negative_definite,
        containment_margins: cert.psd_margins.containment.clone(),
        containment_ok,
        consistency: cert.vars.consistency(&nt),
        remedy: train::recommend(&residual),
        residual,
        roa_semi_axes: roa.semi_axes.clone(),
        logdet_h1: cert.logdet,
    };
    run.write_json(CERTIFICATE, &cert)?;
    run.write_json(VERIFICATION, &v)?;
    run.record("certify", inputs, &[CERTIFICATE, VERIFICATION], &[], start)
}

fn every<T: Clone>(v: &[T], k: usize) -> Vec<T> {
    v.iter().step_by(k.max(1)).cloned().collect()
}

/// ROA sampling on the many-mode plant, one field reconstruction and the
/// timing comparison against the expert.
pub fn cmd_simulate(run: &Run) -> Result<(), CliError> {
    let start = Instant::now();
    let inputs = run.inputs(&["model", "dataset", "train", "certify"])?;
    let r = &run.resolved;
    let sc = &run.cfg.sim;
    let policy = run.policy()?;
    let cert: Certificate = run.read_json(CERTIFICATE)?;
    let plant = ModalPlant::new(&r.model, r.n0, sc.n_sim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.cfg.seed);
    rng.set_stream(1);
    let roa = sim::roa_validation(&plant, &policy, &cert.p, cert.gamma, r.sys.delta, sc, &mut rng)?;
    run.write_json(ROA, &roa)?;

    let first = roa.trajectories.first().ok_or_else(|| CliError::Config("sim.roa_samples must be positive".into()))?;
    first.write_csv(&run.path(TRAJECTORY))?;
    let x: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let last = first.len() - 1;
    let steps: Vec<usize> = (0..=5).map(|i| i * last / 5).collect();
    sim::write_field_csv(&run.path(FIELD), &sim::reconstruct_field(&plant, first, &x, &steps)?)?;

    let thin = (first.len() / 400).max(1);
    let series = |f: &dyn Fn(&sim::Trajectory) -> Vec<f64>| -> Vec<Series> {
        roa.trajectories
            .iter()
            .enumerate()
            .map(|(i, t)| Series { label: format!("sample {}", i + 1), x: every(&t.t, thin), y: every(&f(t), thin) })
            .collect()
    };
    let v_plot = PlotData {
        title: format!("Lyapunov function, scenario {}", run.cfg.scenario),
        x_label: "t".into(),
        y_label: "V(t)".into(),
        log_y: true,
        series: series(&|t| t.v()),
    };
    let u_plot = PlotData {
        title: format!("Boundary control, scenario {}", run.cfg.scenario),
        x_label: "t".into(),
        y_label: "u(t)".into(),
        log_y: false,
        series: series(&|t| t.u.clone()),
    };
    run.write_json(V_PLOT, &v_plot)?;
    run.write_json(U_PLOT, &u_plot)?;
    run.write_json(PHASE_PLOT, &phase_plot(run, &cert.p, &roa)?)?;

    let data = dataset(run)?;
    let states = every(&data.states, (data.len() / 100).max(1));
    let nn_reps = 1000usize.div_ceil(states.len()).max(10);
    let mpc_reps = 100usize.div_ceil(states.len()).max(1);
    let timing = sim::timing_benchmark(&policy, &run.controller()?, &states, nn_reps, mpc_reps)?;
    run.write_json(TIMING, &timing)?;
    run.record("simulate", inputs, &[ROA, TRAJECTORY, FIELD, V_PLOT, U_PLOT, PHASE_PLOT], &[TIMING], start)
}

/// `z₁`–`z₂` plane: the slice of `E(P)`, the box and the sampled paths.
fn phase_plot(run: &Run, p: &DMatrix<f64>, roa: &RoaValidation) -> Result<PlotData, CliError> {
    let p2 = p.view((0, 0), (2.min(p.nrows()), 2.min(p.ncols()))).into_owned();
    let mut series = Vec::new();
    if p2.nrows() == 2 {
        let e = certify::roa(&p2)?;
        let (xs, ys): (Vec<f64>, Vec<f64>) = (0..=200)
            .map(|i| {
                let th = i as f64 / 200.0 * std::f64::consts::TAU;
                let z = e.boundary_point(&DVector::from_vec(vec![th.cos(), th.sin()]));
                (z[0], z[1])
            })
            .unzip();
        series.push(Series { label: "E(P)".into(), x: xs, y: ys });
        let s = &run.cfg.mpc.state_box.s;
        series.push(Series {
            label: "box".into(),
            x: vec![-s[0], s[0], s[0], -s[0], -s[0]],
            y: vec![-s[1], -s[1], s[1], s[1], -s[1]],
        });
    }
    for (i, t) in roa.trajectories.iter().enumerate().take(8) {
        let thin = (t.len() / 400).max(1);
        let z1 = every(&t.z.iter().map(|z| z[0]).collect::<Vec<_>>(), thin);
        let z2 = every(&t.z.iter().map(|z| z.get(1).copied().unwrap_or(0.0)).collect::<Vec<_>>(), thin);
        series.push(Series { label: format!("path {}", i + 1), x: z1, y: z2 });
    }
    Ok(PlotData {
        title: format!("Phase portrait, scenario {}", run.cfg.scenario),
        x_label: "z1".into(),
        y_label: "z2".into(),
        log_y: false,
        series,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub n0: usize,
    pub delta: f64,
    pub dataset_size: usize,
    pub training: TrainReport,
    pub certified: bool,
    pub alpha_star: Option<f64>,
    pub remedy: Option<Remedy>,
    /// Convex LMI, `H₁`, containment rows and the theorem form.
    pub lmi_margins: certify::PsdMargins,
    pub verification: Verification,
    pub roa_fraction: f64,
    pub roa_decay_satisfied: bool,
    pub timing: TimingReport,
}

/// Aggregates every stage into one JSON document and three SVG plots.
pub fn cmd_report(run: &Run) -> Result<(), CliError> {
    let start = Instant::now();
    let inputs = run.inputs(&["model", "dataset", "train", "certify", "simulate"])?;
    let m = run.manifest()?;
    // Each stage must have consumed the artifacts now on disk.
    for e in m.stages.values() {
        for (name, h) in &e.inputs {
            if name != "config" && inputs.get(name).is_some_and(|cur| cur != h) {
                return Err(CliError::Upstream(format!("stage '{}' used a different {name}", e.stage)));
            }
        }
    }
    let meta: crate::mpc_expert::DatasetMeta = run.read_json(DATASET_META)?;
    let training: TrainReport = run.read_json(TRAIN_REPORT)?;
    let cert: Certificate = run.read_json(CERTIFICATE)?;
    let verification: Verification = run.read_json(VERIFICATION)?;
    let roa: RoaValidation = run.read_json(ROA)?;
    let timing: TimingReport = run.read_json(TIMING)?;
    let report = Report {
        scenario: run.cfg.scenario.clone(),
        config_hash: run.hash.clone(),
        seed: run.cfg.seed,
        n0: run.resolved.n0,
        delta: run.resolved.sys.delta,
        dataset_size: meta.feasible,
        training,
        certified: verification.certified,
        alpha_star: verification.residual.alpha_star,
        remedy: verification.remedy,
        lmi_margins: cert.psd_margins.clone(),
        roa_fraction: roa.fraction_converged,
        roa_decay_satisfied: roa.all_decay_satisfied,
        verification,
        timing,
    };
    run.write_json(REPORT, &report)?;
    for (src, dst) in [(V_PLOT, REPORT_V), (PHASE_PLOT, REPORT_PHASE), (U_PLOT, REPORT_U)] {
        run.read_json::<PlotData>(src)?.write_svg(&run.path(dst))?;
    }
    run.record("report", inputs, &[REPORT_V, REPORT_PHASE, REPORT_U], &[REPORT], start)
}
