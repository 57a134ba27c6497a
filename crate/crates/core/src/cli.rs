//! Command-line front end: configuration loading, the five subcommands and
//! the run manifest written next to every output.
//!
//! Configuration is TOML with these tables, all optional:
//!
//! ```toml
//! seed = 7                      # campaign seed, overridden by --seed
//!
//! [params]                      # SimParams, units of g
//! model = "dispersive"          # jc | dispersive | multilevel-rwa
//! delta = 10.0
//! kappa = 0.2
//! omega_c = 0.1
//! t_meas = 50.0
//! fock_cutoff = 8
//!
//! [protocol]                    # ProtocolConfig
//! trajectories_per_cell = 1000
//! gate_set = "half-pi"          # half-pi | pi
//! reset = { mode = "free-decay" }
//!
//! [mle]                         # FitOptions
//! starts = 3
//!
//! [bootstrap]
//! resamples = 100               # overridden by --bootstrap
//! seed = 11
//!
//! [backend]
//! kind = "dispersive"           # jc | dispersive | multilevel | mock
//! discriminator = "calibrated"  # simple | calibrated
//! shot_noise = true
//! mock_epsilon = 0.0            # phase-flip strength of the mock detector
//!
//! [sweep]
//! deltas = [7.7, 19.2, 40.0]
//! long_format = true
//! ```
//!
//! Trajectory CSV schema (`simulate --trajectories N`): one row per time
//! step with columns `input,trajectory,seed,stream,param_hash,step,t,signal,dw`,
//! where `signal` is √κ⟨a+a†⟩_c and `dw` the Wiener increment of that step
//! (empty on the final sample).

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytics::{fidelity_analytic, snr_dispersive};
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::mle::{ChoiSet, FitOptions, FitReport, Povm};
use crate::model::{ModelKind, SimParams};
use crate::protocol::{run_campaign, Backend, KrausSet, ProtocolConfig, ShotDataset};
use crate::quantifiers::{
    computational_projectors, destructiveness, qndness, quantify, readout_fidelity, QuantifierReport,
};
use crate::sme::{calibrate_discriminator, trajectory_rng, DiscriminatorMode, Engine, QuantumState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Jc,
    Dispersive,
    Multilevel,
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DiscriminatorArg {
    Simple,
    Calibrated,
}

impl From<DiscriminatorArg> for DiscriminatorMode {
    fn from(d: DiscriminatorArg) -> Self {
        match d {
            DiscriminatorArg::Simple => DiscriminatorMode::Simple,
            DiscriminatorArg::Calibrated => DiscriminatorMode::Calibrated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    /// Falls back to `params.model` when absent.
    pub kind: Option<BackendKind>,
    pub discriminator: DiscriminatorMode,
    pub shot_noise: bool,
    pub mock_epsilon: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig { kind: None, discriminator: DiscriminatorMode::Calibrated, shot_noise: true, mock_epsilon: 0.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub resamples: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub deltas: Vec<f64>,
    pub long_format: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub params: SimParams,
    pub protocol: ProtocolConfig,
    pub mle: FitOptions,
    pub bootstrap: BootstrapConfig,
    pub backend: BackendConfig,
    pub sweep: SweepConfig,
}

impl RunConfig {
    /// Parse errors carry the line, column and offending key.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Applies command-line overrides; flags win over the file.
    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(s) = ov.seed {
            self.seed = Some(s);
        }
        if let Some(b) = ov.bootstrap {
            self.bootstrap.resamples = Some(b);
        }
        if let Some(k) = ov.backend {
            self.backend.kind = Some(k);
        }
        if let Some(d) = ov.discriminator {
            self.backend.discriminator = d.into();
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn bootstrap_resamples(&self) -> usize {
        self.bootstrap.resamples.unwrap_or(self.protocol.bootstrap_resamples)
    }

    /// Defaults to a fixed offset of the campaign seed so resamples never
    /// share streams with trajectories.
    pub fn bootstrap_seed(&self) -> u64 {
        self.bootstrap.seed.unwrap_or(self.seed() ^ 0x5eed_b007)
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.kind.unwrap_or(match self.params.model {
            ModelKind::Jc => BackendKind::Jc,
            ModelKind::Dispersive => BackendKind::Dispersive,
            ModelKind::MultilevelRwa => BackendKind::Multilevel,
        })
    }

    /// Physical parameters with the backend kind and seed folded in; `None`
    /// for the mock backend.
    pub fn effective_params(&self) -> Option<SimParams> {
        let model = match self.backend_kind() {
            BackendKind::Jc => ModelKind::Jc,
            BackendKind::Dispersive => ModelKind::Dispersive,
            BackendKind::Multilevel => ModelKind::MultilevelRwa,
            BackendKind::Mock => return None,
        };
        Some(SimParams { model, seed: self.seed(), ..self.params.clone() })
    }

    pub fn build_backend(&self) -> Result<Backend> {
        match self.effective_params() {
            None => {
                let eps = self.backend.mock_epsilon;
                let k = if eps == 0.0 { KrausSet::ideal(2) } else { KrausSet::phase_flip(eps)? };
                Ok(Backend::Mock(k))
            }
            Some(p) => {
                let engine = Engine::new(&p)?;
                let disc = calibrate_discriminator(&engine, self.backend.discriminator, self.backend.shot_noise)?;
                Ok(Backend::Sme { engine: Box::new(engine), disc })
            }
        }
    }

    /// Hash identifying everything that determines a campaign and its
    /// quantification.
    pub fn hash(&self) -> String {
        let canonical = RunConfig {
            seed: Some(self.seed()),
            bootstrap: BootstrapConfig {
                resamples: Some(self.bootstrap_resamples()),
                seed: Some(self.bootstrap_seed()),
            },
            backend: BackendConfig { kind: Some(self.backend_kind()), ..self.backend.clone() },
            sweep: SweepConfig::default(),
            ..self.clone()
        };
        sha256_hex(&serde_json::to_vec(&canonical).expect("config serializes"))
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Bootstrap resamples for error bars (0 disables them).
    #[arg(long, global = true)]
    pub bootstrap: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    pub output_dir: PathBuf,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long, global = true, value_enum)]
    pub discriminator: Option<DiscriminatorArg>,
}

#[derive(Debug, Parser)]
#[command(name = "qndtomo", version, about = "Simulate and characterize QND qubit readout")]
pub struct Cli {
    #[command(flatten)]
    pub common: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a two-readout campaign and write the shot dataset.
    Simulate {
        /// Also dump this many raw trajectories per basis state as CSV.
        #[arg(long, default_value_t = 0)]
        trajectories: usize,
    },
    /// Reconstruct the POVM and Choi matrices from a dataset.
    Tomo { dataset: PathBuf },
    /// Evaluate F, Q and D from a dataset, or from POVM and Choi files.
    Quantify {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Simulate and quantify at each detuning in `[sweep] deltas`.
    Sweep,
    /// Collect report.json files under the given paths into one table.
    Report {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
}

/// Emitted artifacts and their SHA-256 hashes; contains no timestamps so
/// identical reruns give identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub config_hash: Option<String>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    fn new(command: &str, ov: &Overrides, cfg: Option<&RunConfig>) -> Self {
        RunManifest {
            command: command.into(),
            config_path: ov.config.clone(),
            config_hash: cfg.map(RunConfig::hash),
            seed: cfg.map(RunConfig::seed).unwrap_or(0),
            output_dir: ov.output_dir.clone(),
            artifacts: BTreeMap::new(),
        }
    }

    /// Writes `bytes` under the output directory and records the hash.
    fn emit(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.output_dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.artifacts.insert(rel.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    fn finish(&self) -> Result<PathBuf> {
        let path = self.output_dir.join("manifest.json");
        fs::create_dir_all(&self.output_dir)?;
        fs::write(&path, serde_json::to_vec_pretty(self)?)?;
        Ok(path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Rounds to 12 significant digits and prints the shortest decimal that
/// reads back as the rounded value.
pub fn fmt12(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    rounded.to_string()
}

fn load_config(ov: &Overrides) -> Result<RunConfig> {
    let mut cfg = match &ov.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(ov);
    cfg.protocol.validate().map_err(|e| Error::Config(e.to_string()))?;
    if let Some(p) = cfg.effective_params() {
        p.validate().map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(cfg)
}

fn dataset_bytes(ds: &ShotDataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    ds.write(&mut buf)?;
    Ok(buf)
}

pub fn read_dataset(path: &Path) -> Result<ShotDataset> {
    let f = fs::File::open(path)?;
    ShotDataset::read(BufReader::new(f))
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

/// Simulates a campaign for `cfg`.
pub fn simulate(cfg: &RunConfig) -> Result<ShotDataset> {
    let backend = cfg.build_backend()?;
    run_campaign(&backend, cfg.effective_params().as_ref(), &cfg.protocol, cfg.seed())
}

fn trajectory_csv(cfg: &RunConfig, n: usize) -> Result<Vec<u8>> {
    let Backend::Sme { engine, disc } = cfg.build_backend()? else {
        return Err(Error::Config("trajectory dumps need a physical backend".into()));
    };
    let p = engine.params();
    let param_hash = &sha256_hex(&serde_json::to_vec(p)?)[..16];
    // streams above the campaign range (cell index < 2^31)
    let base = 1u64 << 63;
    let mut out = String::from("input,trajectory,seed,stream,param_hash,step,t,signal,dw\n");
    for q in 0..2 {
        let mut psi = vec![crate::linalg::ZERO; p.qubit_dim];
        psi[q] = crate::linalg::ONE;
        for t in 0..n {
            let stream = base | ((q as u64) << 32) | t as u64;
            let mut rng = trajectory_rng(cfg.seed(), stream);
            let rec = engine.simulate_trajectory(QuantumState::product_vacuum(&psi, p.fock_cutoff), &disc, &mut rng)?;
            for (i, (time, s)) in rec.times().iter().zip(&rec.signal).enumerate() {
                let dw = rec.dw.get(i).map(|d| fmt12(*d)).unwrap_or_default();
                out.push_str(&format!(
                    "{},{t},{},{stream},{param_hash},{i},{},{},{dw}\n",
                    ["g", "e"][q],
                    cfg.seed(),
                    fmt12(*time),
                    fmt12(*s)
                ));
            }
        }
    }
    Ok(out.into_bytes())
}

pub fn cmd_simulate(ov: &Overrides, trajectories: usize) -> Result<RunManifest> {
    let cfg = load_config(ov)?;
    let ds = simulate(&cfg)?;
    let mut man = RunManifest::new("simulate", ov, Some(&cfg));
    man.emit("dataset.txt", &dataset_bytes(&ds)?)?;
    if trajectories > 0 {
        man.emit("trajectories.csv", &trajectory_csv(&cfg, trajectories)?)?;
    }
    if ds.meta.truncation_warnings > 0 {
        eprintln!(
            "warning: {} shots exceeded the top-Fock population limit (max {:.3e}); raise fock_cutoff",
            ds.meta.truncation_warnings, ds.meta.max_top_fock_population
        );
    }
    man.finish()?;
    Ok(man)
}

/// Constraint residuals and provenance of a reconstruction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TomoReport {
    pub dataset_hash: String,
    pub shots: u64,
    pub params: Option<SimParams>,
    pub povm_completeness_residual: f64,
    pub choi_min_eigenvalue: f64,
    pub choi_completeness_residual: f64,
    pub povm_fit: FitReport,
    pub choi_fits: Vec<FitReport>,
}

pub fn cmd_tomo(ov: &Overrides, dataset: &Path) -> Result<RunManifest> {
    let cfg = load_config(ov)?;
    let ds = read_dataset(dataset)?;
    let probs = crate::protocol::empirical_probabilities(&ds)?;
    let inputs: Vec<CMatrix> = ds.meta.protocol.inputs().iter().map(|v| CMatrix::outer(v)).collect();
    let gates = ds.meta.protocol.gates();
    let (povm, povm_fit) = crate::mle::fit_povm(&probs, &inputs, &cfg.mle)?;
    let (chois, choi_fits) = crate::mle::fit_choi(&probs, &povm, &gates, &inputs, &cfg.mle)?;
    let diag = chois.diagnostics()?;
    let report = TomoReport {
        dataset_hash: ds.meta.config_hash(),
        shots: ds.total_shots(),
        params: ds.meta.params.clone(),
        povm_completeness_residual: povm.completeness_residual(),
        choi_min_eigenvalue: diag.min_eigenvalue,
        choi_completeness_residual: diag.completeness_residual,
        povm_fit,
        choi_fits,
    };
    let mut man = RunManifest::new("tomo", ov, Some(&cfg));
    man.emit("povm.json", &json_bytes(&povm.to_json())?)?;
    man.emit("choi.json", &json_bytes(&chois.to_json())?)?;
    man.emit("tomo_report.json", &json_bytes(&report)?)?;
    man.finish()?;
    Ok(man)
}

/// JSON form of a report; bootstrap spreads are omitted when no resamples
/// were drawn.
pub fn report_json(r: &QuantifierReport) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(r)?;
    if r.bootstrap_resamples == 0 {
        let obj = v.as_object_mut().expect("report is an object");
        for k in ["std_f", "std_q", "std_d"] {
            obj.remove(k);
        }
    }
    Ok(v)
}

pub fn report_csv(r: &QuantifierReport) -> String {
    format!("{}\n{}\n", QuantifierReport::CSV_HEADER, r.csv_row())
}

enum QuantifyInput {
    Dataset(ShotDataset),
    Reconstruction { povm: Povm, chois: ChoiSet, tomo: Option<TomoReport> },
}

fn classify_inputs(paths: &[PathBuf]) -> Result<QuantifyInput> {
    if paths.len() == 1 {
        let head = fs::read(&paths[0])?;
        if head.starts_with(crate::protocol::DATASET_MAGIC.as_bytes()) {
            return Ok(QuantifyInput::Dataset(ShotDataset::read(&head[..])?));
        }
    }
    let (mut povm, mut chois, mut tomo) = (None, None, None);
    for p in paths {
        let v: serde_json::Value = serde_json::from_slice(&fs::read(p)?)
            .map_err(|e| Error::Schema(format!("{}: {e}", p.display())))?;
        match v.get("kind").and_then(|k| k.as_str()) {
            Some("povm") => povm = Some(Povm::from_json(&v)?),
            Some("choi-set") => chois = Some(ChoiSet::from_json(&v)?),
            _ if v.get("povm_fit").is_some() => tomo = Some(serde_json::from_value(v)?),
            _ => return Err(Error::Schema(format!("{}: not a dataset, POVM, Choi or tomo report", p.display()))),
        }
    }
    match (povm, chois) {
        (Some(povm), Some(chois)) => Ok(QuantifyInput::Reconstruction { povm, chois, tomo }),
        _ => Err(Error::Schema("quantify needs a dataset file, or both povm.json and choi.json".into())),
    }
}

pub fn cmd_quantify(ov: &Overrides, inputs: &[PathBuf]) -> Result<RunManifest> {
    let cfg = load_config(ov)?;
    let report = match classify_inputs(inputs)? {
        QuantifyInput::Dataset(ds) => {
            quantify(&ds, cfg.bootstrap_resamples(), cfg.bootstrap_seed(), &cfg.mle)?.report
        }
        QuantifyInput::Reconstruction { povm, chois, tomo } => {
            chois.validate(Some(&povm))?;
            QuantifierReport {
                f: readout_fidelity(&povm),
                q: qndness(&chois),
                d: destructiveness(&chois, &computational_projectors(povm.dim))?,
                std_f: 0.0,
                std_q: 0.0,
                std_d: 0.0,
                bootstrap_resamples: 0,
                shots: tomo.as_ref().map_or(0, |t| t.shots),
                dataset_hash: tomo.as_ref().map(|t| t.dataset_hash.clone()).unwrap_or_default(),
                params: tomo.and_then(|t| t.params),
            }
        }
    };
    let mut man = RunManifest::new("quantify", ov, Some(&cfg));
    man.emit("report.json", &json_bytes(&report_json(&report)?)?)?;
    man.emit("report.csv", report_csv(&report).as_bytes())?;
    man.finish()?;
    Ok(man)
}

/// Simulation plus quantification of one configuration: the unit of work
/// of a sweep.
pub fn simulate_and_quantify(cfg: &RunConfig) -> Result<QuantifierReport> {
    let ds = simulate(cfg)?;
    Ok(quantify(&ds, cfg.bootstrap_resamples(), cfg.bootstrap_seed(), &cfg.mle)?.report)
}

pub const SWEEP_HEADER: &str = "delta,F,std_F,Q,std_Q,D,std_D,F_analytic,status,point_hash";

fn analytic_column(p: Option<&SimParams>) -> String {
    match p {
        Some(p) if p.model == ModelKind::Dispersive => snr_dispersive(p)
            .and_then(fidelity_analytic)
            .map(fmt12)
            .unwrap_or_default(),
        _ => String::new(),
    }
}

fn sweep_row(delta: f64, hash: &str, r: &Result<QuantifierReport>) -> String {
    match r {
        Ok(r) => format!(
            "{},{},{},{},{},{},{},{},ok,{hash}",
            fmt12(delta),
            fmt12(r.f),
            fmt12(r.std_f),
            fmt12(r.q),
            fmt12(r.std_q),
            fmt12(r.d),
            fmt12(r.std_d),
            analytic_column(r.params.as_ref())
        ),
        Err(e) => {
            let msg = e.to_string().replace([',', '\n'], ";");
            format!("{},,,,,,,,failed: {msg},{hash}", fmt12(delta))
        }
    }
}

/// Runs every sweep point not already present under `points/<hash>/`.
/// Failures are recorded in the table and the sweep carries on; the
/// returned flag reports whether any point failed.
pub fn cmd_sweep(ov: &Overrides) -> Result<(RunManifest, bool)> {
    let cfg = load_config(ov)?;
    if cfg.sweep.deltas.is_empty() {
        return Err(Error::Config("[sweep] deltas must list at least one detuning".into()));
    }
    let mut man = RunManifest::new("sweep", ov, Some(&cfg));
    let mut rows = vec![SWEEP_HEADER.to_string()];
    let mut long = vec!["delta,quantity,value,std".to_string()];
    let mut any_failed = false;
    for &delta in &cfg.sweep.deltas {
        let point = RunConfig { params: SimParams { delta, ..cfg.params.clone() }, ..cfg.clone() };
        let hash = point.hash();
        let rel = format!("points/{}/report.json", &hash[..16]);
        let cached = fs::read(ov.output_dir.join(&rel))
            .ok()
            .and_then(|b| serde_json::from_slice::<QuantifierReport>(&b).ok().map(|r| (r, b)));
        let result = match cached {
            Some((r, bytes)) => {
                eprintln!("delta = {delta}: reusing {rel}");
                man.artifacts.insert(rel.clone(), sha256_hex(&bytes));
                Ok(r)
            }
            None => {
                eprintln!("delta = {delta}: running");
                let r = simulate_and_quantify(&point);
                if let Ok(rep) = &r {
                    man.emit(&rel, &json_bytes(rep)?)?;
                }
                r
            }
        };
        if let Err(e) = &result {
            eprintln!("delta = {delta}: failed: {e}");
            any_failed = true;
        }
        rows.push(sweep_row(delta, &hash[..16], &result));
        if let Ok(r) = &result {
            for (name, v, s) in [("F", r.f, r.std_f), ("Q", r.q, r.std_q), ("D", r.d, r.std_d)] {
                long.push(format!("{},{name},{},{}", fmt12(delta), fmt12(v), fmt12(s)));
            }
        }
    }
    man.emit("sweep.csv", (rows.join("\n") + "\n").as_bytes())?;
    if cfg.sweep.long_format {
        man.emit("sweep_long.csv", (long.join("\n") + "\n").as_bytes())?;
    }
    man.finish()?;
    Ok((man, any_failed))
}

fn collect_reports(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
        entries.sort();
        for e in entries {
            collect_reports(&e, out)?;
        }
    } else if path.file_name().is_some_and(|n| n == "report.json") {
        out.push(path.to_path_buf());
    }
    Ok(())
}

pub const SUMMARY_HEADER: &str =
    "model,delta,g,kappa,gamma,gamma_phi,omega_c,t_meas,shots,F,std_F,Q,std_Q,D,std_D,F_analytic,source";

/// Plot-ready table of every report found under `paths`, sorted by model
/// and detuning.
pub fn cmd_report(ov: &Overrides, paths: &[PathBuf]) -> Result<(RunManifest, String)> {
    let mut files = Vec::new();
    for p in paths {
        if !p.exists() {
            return Err(Error::Config(format!("{} does not exist", p.display())));
        }
        collect_reports(p, &mut files)?;
    }
    let mut rows = Vec::new();
    for f in &files {
        let r: QuantifierReport = serde_json::from_slice(&fs::read(f)?)
            .or_else(|_| {
                // reports written without bootstrap spreads
                let mut v: serde_json::Value = serde_json::from_slice(&fs::read(f)?)?;
                if let Some(o) = v.as_object_mut() {
                    for k in ["std_f", "std_q", "std_d"] {
                        o.entry(k).or_insert(0.0.into());
                    }
                }
                serde_json::from_value(v).map_err(Error::from)
            })
            .map_err(|e| Error::Schema(format!("{}: {e}", f.display())))?;
        let p = r.params.clone();
        let model = match &p {
            Some(p) => serde_json::to_value(p.model)?.as_str().unwrap_or_default().to_string(),
            None => "mock".into(),
        };
        let (phys, delta) = match &p {
            Some(p) => (
                [p.delta, p.g, p.kappa, p.gamma, p.gamma_phi, p.omega_c, p.t_meas].map(fmt12).join(","),
                p.delta,
            ),
            None => (",,,,,,".to_string(), f64::NAN),
        };
        let row = format!(
            "{model},{phys},{},{},{},{},{},{},{},{},{}",
            r.shots,
            fmt12(r.f),
            fmt12(r.std_f),
            fmt12(r.q),
            fmt12(r.std_q),
            fmt12(r.d),
            fmt12(r.std_d),
            analytic_column(p.as_ref()),
            f.display()
        );
        let key = (model, delta);
        rows.push((key, row));
    }
    rows.sort_by(|a, b| a.0 .0.cmp(&b.0 .0).then(a.0 .1.total_cmp(&b.0 .1)));
    let table = std::iter::once(SUMMARY_HEADER.to_string()).chain(rows.into_iter().map(|r| r.1)).collect::<Vec<_>>().join("\n") + "\n";
    let mut man = RunManifest::new("report", ov, None);
    man.emit("summary.csv", table.as_bytes())?;
    man.finish()?;
    Ok((man, table))
}

/// Dispatches a parsed command line inside a worker pool of `--jobs`
/// threads. Returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.common.jobs.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 2;
        }
    };
    let ov = cli.common;
    let result = pool.install(|| -> Result<i32> {
        let man = match &cli.command {
            Command::Simulate { trajectories } => cmd_simulate(&ov, *trajectories)?,
            Command::Tomo { dataset } => cmd_tomo(&ov, dataset)?,
            Command::Quantify { inputs } => cmd_quantify(&ov, inputs)?,
            Command::Sweep => {
                let (man, failed) = cmd_sweep(&ov)?;
                print_manifest(&man);
                return Ok(if failed { 3 } else { 0 });
            }
            Command::Report { paths } => {
                let (man, table) = cmd_report(&ov, paths)?;
                print!("{table}");
                let _ = std::io::stdout().flush();
                eprintln!("wrote {}", man.output_dir.join("summary.csv").display());
                return Ok(0);
            }
        };
        print_manifest(&man);
        Ok(0)
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn print_manifest(man: &RunManifest) {
    for (name, hash) in &man.artifacts {
        println!("{}  {}", &hash[..16], man.output_dir.join(name).display());
    }
}
