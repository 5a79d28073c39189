//! File formats, run configuration, and the command entry points.
//!
//! Data files are plain CSV: a Q-matrix file has an `item` column followed
//! by one column per dimension (blank cells mean zero); response and RT
//! files have a `person` column followed by one column per item, with blank
//! cells marking missing values. RTs are stored in seconds and logged
//! internally; an RT of exactly zero is treated as missing. Output files
//! carry the hash of the configuration that produced them and the seed, as
//! a `meta` object in JSON files and a leading `#` comment line in CSVs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write as _};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{
    compute_fit_summary, default_param_count, FitSummary,
};
use crate::error::{Error, Result};
use crate::model::{ModelStructure, ObservedData, QMatrix};
use crate::recovery::{run_replications, RecoveryReport};
use crate::sampler::{JointModel, PosteriorDraws, PriorSpec, SamplerConfig};
use crate::sim::{simulate_dataset, block_sigma_person, OmegaMode, SimDesign, SimulatedDataset};
use crate::stats::{Rng, SpdMatrix};

/// Rng stream reserved for posterior predictive replication (chains use
/// streams `0..n_chains`).
pub const PPMC_STREAM: u64 = 1 << 32;

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader)
}

/// Loads a Q-matrix CSV: header `item,<dim labels...>`, one row per item,
/// entries 0/1 with blank meaning zero.
pub fn load_qmatrix(path: &Path) -> Result<QMatrix> {
    let file = File::open(path)
        .map_err(|e| Error::InvalidData(format!("cannot open {}: {e}", path.display())))?;
    load_qmatrix_from(BufReader::new(file))
}

pub fn load_qmatrix_from<R: Read>(reader: R) -> Result<QMatrix> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::InvalidData(
            "Q-matrix needs an item column and at least one dimension column".into(),
        ));
    }
    let dim_labels: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut item_ids = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let item = record
            .get(0)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::InvalidData("Q-matrix row without an item id".into()))?
            .to_string();
        let mut row = Vec::with_capacity(dim_labels.len());
        for (k, cell) in record.iter().skip(1).enumerate() {
            let value = match cell {
                "" => 0.0,
                "0" => 0.0,
                "1" => 1.0,
                other => {
                    return Err(Error::InvalidData(format!(
                        "Q-matrix entry for item '{item}', dimension '{}' is '{other}'; expected 0, 1, or blank",
                        dim_labels[k]
                    )))
                }
            };
            row.push(value);
        }
        item_ids.push(item);
        rows.push(row);
    }
    let n_items = rows.len();
    let entries = DMatrix::from_fn(n_items, dim_labels.len(), |i, k| rows[i][k]);
    QMatrix::new(entries, item_ids, dim_labels)
}

/// The released PISA 2012 computer-based mathematics Q-matrix: ten items
/// over the four content dimensions, shipped as `fixtures/pisa2012_qmatrix.csv`.
pub fn pisa_qmatrix() -> QMatrix {
    load_qmatrix_from(include_str!("../fixtures/pisa2012_qmatrix.csv").as_bytes())
        .expect("shipped fixture is valid")
}

struct CsvTable {
    headers: Vec<String>,
    row_labels: Vec<String>,
    cells: Vec<Vec<String>>,
}

fn load_table<R: Read>(reader: R, what: &str) -> Result<CsvTable> {
    let mut rdr = csv_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers.len() < 2 {
        return Err(Error::InvalidData(format!(
            "{what} file needs a person column and at least one item column"
        )));
    }
    let mut row_labels = Vec::new();
    let mut cells = Vec::new();
    for record in rdr.records() {
        let record = record?;
        row_labels.push(record.get(0).unwrap_or("").to_string());
        cells.push(record.iter().skip(1).map(str::to_string).collect());
    }
    Ok(CsvTable {
        headers,
        row_labels,
        cells,
    })
}

/// Loads paired response and RT files into an [`ObservedData`].
///
/// Blank response cells are missing; RT cells that are blank *or exactly
/// zero* are missing. Negative RTs, non-binary responses, and any shape or
/// header mismatch between the two files are errors.
pub fn load_data(responses_path: &Path, rts_path: &Path) -> Result<ObservedData> {
    let resp_file = File::open(responses_path).map_err(|e| {
        Error::InvalidData(format!("cannot open {}: {e}", responses_path.display()))
    })?;
    let rt_file = File::open(rts_path)
        .map_err(|e| Error::InvalidData(format!("cannot open {}: {e}", rts_path.display())))?;
    load_data_from(BufReader::new(resp_file), BufReader::new(rt_file))
}

pub fn load_data_from<R1: Read, R2: Read>(responses: R1, rts: R2) -> Result<ObservedData> {
    let resp = load_table(responses, "response")?;
    let rt = load_table(rts, "RT")?;
    if resp.headers != rt.headers {
        return Err(Error::InvalidData(
            "response and RT files have different headers".into(),
        ));
    }
    if resp.row_labels != rt.row_labels {
        return Err(Error::InvalidData(
            "response and RT files list different persons".into(),
        ));
    }
    let n_persons = resp.cells.len();
    let n_items = resp.headers.len() - 1;
    let mut responses = Vec::with_capacity(n_persons * n_items);
    let mut times = Vec::with_capacity(n_persons * n_items);
    for (r, (resp_row, rt_row)) in resp.cells.iter().zip(&rt.cells).enumerate() {
        let who = &resp.row_labels[r];
        for (c, cell) in resp_row.iter().enumerate() {
            let item = &resp.headers[c + 1];
            responses.push(match cell.as_str() {
                "" => None,
                "0" => Some(false),
                "1" => Some(true),
                other => {
                    return Err(Error::InvalidData(format!(
                        "response for person '{who}', item '{item}' is '{other}'; expected 0, 1, or blank"
                    )))
                }
            });
        }
        for (c, cell) in rt_row.iter().enumerate() {
            let item = &rt.headers[c + 1];
            times.push(match cell.as_str() {
                "" => None,
                text => {
                    let value: f64 = text.parse().map_err(|_| {
                        Error::InvalidData(format!(
                            "RT for person '{who}', item '{item}' is '{text}'; expected a number or blank"
                        ))
                    })?;
                    if !value.is_finite() || value < 0.0 {
                        return Err(Error::InvalidData(format!(
                            "RT for person '{who}', item '{item}' is {value}; RTs must be nonnegative"
                        )));
                    }
                    if value == 0.0 {
                        None // zero RTs are treated as missing
                    } else {
                        Some(value)
                    }
                }
            });
        }
    }
    ObservedData::new(n_persons, n_items, responses, times)
}

// ---------------------------------------------------------------------------
// Saving
// ---------------------------------------------------------------------------

/// Provenance attached to every output file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta {
    pub config_hash: String,
    pub seed: u64,
}

impl Meta {
    fn comment_line(&self) -> String {
        format!("# config_hash={} seed={}", self.config_hash, self.seed)
    }
}

fn create_csv(path: &Path, meta: &Meta) -> Result<csv::Writer<BufWriter<File>>> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "{}", meta.comment_line())?;
    Ok(csv::Writer::from_writer(file))
}

/// Writes a response matrix, persons labeled `p1..pN`, blank for missing.
pub fn save_responses(path: &Path, data: &ObservedData, item_ids: &[String], meta: &Meta) -> Result<()> {
    let mut w = create_csv(path, meta)?;
    let mut header = vec!["person".to_string()];
    header.extend_from_slice(item_ids);
    w.write_record(&header)?;
    for n in 0..data.n_persons() {
        let mut row = vec![format!("p{}", n + 1)];
        for i in 0..data.n_items() {
            row.push(match data.response(n, i) {
                None => String::new(),
                Some(true) => "1".into(),
                Some(false) => "0".into(),
            });
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes an RT matrix in seconds, blank for missing.
pub fn save_rts(path: &Path, data: &ObservedData, item_ids: &[String], meta: &Meta) -> Result<()> {
    let mut w = create_csv(path, meta)?;
    let mut header = vec!["person".to_string()];
    header.extend_from_slice(item_ids);
    w.write_record(&header)?;
    for n in 0..data.n_persons() {
        let mut row = vec![format!("p{}", n + 1)];
        for i in 0..data.n_items() {
            row.push(match data.rt(n, i) {
                None => String::new(),
                Some(t) => format!("{t}"),
            });
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a Q-matrix with blank cells for zeros.
pub fn save_qmatrix(path: &Path, q: &QMatrix, meta: &Meta) -> Result<()> {
    let mut w = create_csv(path, meta)?;
    let mut header = vec!["item".to_string()];
    header.extend_from_slice(q.dim_labels());
    w.write_record(&header)?;
    for i in 0..q.n_items() {
        let mut row = vec![q.item_ids()[i].clone()];
        for k in 0..q.n_dims() {
            row.push(if q.entries()[(i, k)] == 1.0 {
                "1".into()
            } else {
                String::new()
            });
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn save_draws(path: &Path, draws: &PosteriorDraws, chain: usize, meta: &Meta) -> Result<()> {
    let mut w = create_csv(path, meta)?;
    let mut header = draws.layout().names();
    header.push("deviance".into());
    w.write_record(&header)?;
    let n_params = draws.n_params();
    let chain_draws = &draws.chains()[chain];
    for d in 0..chain_draws.n_kept {
        let mut row: Vec<String> = chain_draws.values[d * n_params..(d + 1) * n_params]
            .iter()
            .map(|v| format!("{v}"))
            .collect();
        row.push(format!("{}", chain_draws.deviance[d]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct WithMeta<T: Serialize> {
    meta: Meta,
    #[serde(flatten)]
    payload: T,
}

fn save_json<T: Serialize>(path: &Path, meta: &Meta, payload: T) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(
        file,
        &WithMeta {
            meta: meta.clone(),
            payload,
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Simulation-design section of the configuration. `sigma_person` may be
/// given explicitly; otherwise it is assembled from the block variances and
/// correlations.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub n_persons: usize,
    /// Item count for the generated balanced Q-matrix (ignored when
    /// `qmatrix` points at a file).
    pub n_items: usize,
    pub n_dims: usize,
    pub qmatrix: Option<PathBuf>,
    pub theta_variance: f64,
    pub tau_variance: f64,
    /// Per-dimension overrides; empty means "use the scalar value".
    pub theta_variances: Vec<f64>,
    pub tau_variances: Vec<f64>,
    pub within_theta_corr: f64,
    pub within_tau_corr: f64,
    pub cross_corr: f64,
    pub sigma_person: Option<Vec<Vec<f64>>>,
    pub mu_d: f64,
    pub mu_xi: f64,
    pub sigma_item: Vec<Vec<f64>>,
    pub omega: OmegaMode,
    pub missing_rate: f64,
    /// Seed for the `simulate` command (stream 0).
    pub seed: u64,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            n_persons: 500,
            n_items: 20,
            n_dims: 2,
            qmatrix: None,
            theta_variance: 1.0,
            tau_variance: 0.3,
            theta_variances: Vec::new(),
            tau_variances: Vec::new(),
            within_theta_corr: 0.7,
            within_tau_corr: 0.7,
            cross_corr: -0.3,
            sigma_person: None,
            mu_d: 0.0,
            mu_xi: 4.3,
            sigma_item: vec![vec![1.0, 0.0], vec![0.0, 0.25]],
            omega: OmegaMode::Constant(2.0),
            missing_rate: 0.0,
            seed: 42,
        }
    }
}

fn vecs_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidConfig(format!("{what} must be a square matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl DesignConfig {
    pub fn build(&self, structure: ModelStructure) -> Result<SimDesign> {
        let q = match &self.qmatrix {
            Some(path) => load_qmatrix(path)?,
            None => QMatrix::balanced(self.n_items, self.n_dims)?,
        };
        let k_theta = match structure {
            ModelStructure::UaUs => 1,
            _ => q.n_dims(),
        };
        let k_tau = match structure {
            ModelStructure::MaMs => q.n_dims(),
            _ => 1,
        };
        let sigma_person = match &self.sigma_person {
            Some(rows) => SpdMatrix::new(vecs_to_matrix(rows, "sigma_person")?)?,
            None => {
                let theta_vars = if self.theta_variances.is_empty() {
                    vec![self.theta_variance; k_theta]
                } else if self.theta_variances.len() == k_theta {
                    self.theta_variances.clone()
                } else {
                    return Err(Error::InvalidConfig(format!(
                        "theta_variances has {} entries but the structure implies {k_theta} ability dimensions",
                        self.theta_variances.len()
                    )));
                };
                let tau_vars = if self.tau_variances.is_empty() {
                    vec![self.tau_variance; k_tau]
                } else if self.tau_variances.len() == k_tau {
                    self.tau_variances.clone()
                } else {
                    return Err(Error::InvalidConfig(format!(
                        "tau_variances has {} entries but the structure implies {k_tau} speed dimensions",
                        self.tau_variances.len()
                    )));
                };
                block_sigma_person(
                    &theta_vars,
                    &tau_vars,
                    self.within_theta_corr,
                    self.within_tau_corr,
                    self.cross_corr,
                )?
            }
        };
        let design = SimDesign {
            n_persons: self.n_persons,
            q,
            structure,
            sigma_person,
            mu_d: self.mu_d,
            mu_xi: self.mu_xi,
            sigma_item: SpdMatrix::new(vecs_to_matrix(&self.sigma_item, "sigma_item")?)?,
            omega_mode: self.omega,
            missing_rate: self.missing_rate,
        };
        design.validate()?;
        Ok(design)
    }
}

/// Input file locations for `fit` and `compare`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub responses: Option<PathBuf>,
    pub rts: Option<PathBuf>,
    pub qmatrix: Option<PathBuf>,
}

/// Full configuration; every key has a default and can be overridden from
/// the command line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub structure: ModelStructure,
    pub sampler: SamplerConfig,
    pub priors: PriorSpec,
    pub design: DesignConfig,
    pub data: DataPaths,
    pub output_dir: PathBuf,
    /// Posterior predictive checks use every this-many-th retained draw.
    pub ppmc_thin: usize,
    pub replications: usize,
    pub base_seed: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            structure: ModelStructure::MaMs,
            sampler: SamplerConfig::default(),
            priors: PriorSpec::default(),
            design: DesignConfig::default(),
            data: DataPaths::default(),
            output_dir: PathBuf::from("lnirt-out"),
            ppmc_thin: 10,
            replications: 10,
            base_seed: 2018,
        }
    }
}

impl Settings {
    pub fn from_file(path: &Path) -> Result<Self> {
        let file = File::open(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot open {}: {e}", path.display())))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Simulate,
    Fit,
    Compare,
    Recover,
}

/// A command plus its settings.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub settings: Settings,
}

/// Hex-encoded SHA-256 (first 16 characters) of the canonical JSON of the
/// run configuration.
pub fn config_hash(config: &RunConfig) -> Result<String> {
    let canonical = serde_json::to_string(config)?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(hex_prefix(&digest, 16))
}

fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut out = String::with_capacity(chars);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
        if out.len() >= chars {
            break;
        }
    }
    out.truncate(chars);
    out
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// Executes a command, writing its artifacts under `output_dir`.
///
/// - `simulate` writes `responses.csv`, `rts.csv`, `qmatrix.csv`, and
///   `truth.json`.
/// - `fit` writes `draws_chain<k>.csv` per chain, `summary.json`, and
///   `convergence.csv`.
/// - `compare` fits all three structures on the same data and writes
///   `comparison.csv` / `comparison.json` plus one summary per structure.
/// - `recover` writes `recovery.csv` / `recovery.json`.
pub fn run_command(config: &RunConfig) -> Result<()> {
    let out = &config.settings.output_dir;
    std::fs::create_dir_all(out)?;
    match config.command {
        Command::Simulate => run_simulate(config),
        Command::Fit => run_fit(config),
        Command::Compare => run_compare(config),
        Command::Recover => run_recover(config),
    }
}

#[derive(Serialize)]
struct TruthFile<'a> {
    structure: &'a str,
    design: &'a SimDesign,
    persons: &'a crate::model::PersonParams,
    items: &'a crate::model::ItemParams,
}

fn run_simulate(config: &RunConfig) -> Result<()> {
    let settings = &config.settings;
    let design = settings.design.build(settings.structure)?;
    let meta = Meta {
        config_hash: config_hash(config)?,
        seed: settings.design.seed,
    };
    let mut rng = Rng::new(settings.design.seed, 0);
    let ds: SimulatedDataset = simulate_dataset(&design, &mut rng)?;
    let out = &settings.output_dir;
    let item_ids = design.q.item_ids().to_vec();
    save_responses(&out.join("responses.csv"), &ds.data, &item_ids, &meta)?;
    save_rts(&out.join("rts.csv"), &ds.data, &item_ids, &meta)?;
    save_qmatrix(&out.join("qmatrix.csv"), &design.q, &meta)?;
    save_json(
        &out.join("truth.json"),
        &meta,
        TruthFile {
            structure: design.structure.label(),
            design: &design,
            persons: &ds.persons,
            items: &ds.items,
        },
    )?;
    println!(
        "simulated {} persons x {} items ({}) -> {}",
        design.n_persons,
        design.n_items(),
        design.structure,
        out.display()
    );
    Ok(())
}

fn load_inputs(settings: &Settings) -> Result<(ObservedData, QMatrix)> {
    let responses = settings.data.responses.as_ref().ok_or_else(|| {
        Error::InvalidConfig("a responses file is required (data.responses or --responses)".into())
    })?;
    let rts = settings.data.rts.as_ref().ok_or_else(|| {
        Error::InvalidConfig("an RT file is required (data.rts or --rts)".into())
    })?;
    let qmatrix = settings.data.qmatrix.as_ref().ok_or_else(|| {
        Error::InvalidConfig("a Q-matrix file is required (data.qmatrix or --qmatrix)".into())
    })?;
    let q = load_qmatrix(qmatrix)?;
    let data = load_data(responses, rts)?;
    Ok((data, q))
}

fn fit_once(
    settings: &Settings,
    data: &ObservedData,
    q: &QMatrix,
    structure: ModelStructure,
) -> Result<(PosteriorDraws, FitSummary)> {
    let model = JointModel::new(data, q, structure, settings.priors.clone())?;
    let draws = model.run_chains(&settings.sampler)?;
    let param_count = default_param_count(model.n_items(), model.k_star());
    let mut ppmc_rng = Rng::new(settings.sampler.seed, PPMC_STREAM);
    let summary = compute_fit_summary(&model, &draws, param_count, settings.ppmc_thin, &mut ppmc_rng)?;
    Ok((draws, summary))
}

fn save_convergence(path: &Path, summary: &FitSummary, meta: &Meta) -> Result<()> {
    let mut w = create_csv(path, meta)?;
    w.write_record(["parameter", "mean", "sd", "psrf"])?;
    for p in &summary.parameters {
        w.write_record([
            p.name.clone(),
            format!("{}", p.mean),
            format!("{}", p.sd),
            p.psrf.map(|v| format!("{v}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn run_fit(config: &RunConfig) -> Result<()> {
    let settings = &config.settings;
    settings.sampler.validate()?;
    let (data, q) = load_inputs(settings)?;
    let meta = Meta {
        config_hash: config_hash(config)?,
        seed: settings.sampler.seed,
    };
    let (draws, summary) = fit_once(settings, &data, &q, settings.structure)?;
    let out = &settings.output_dir;
    for c in 0..draws.n_chains() {
        save_draws(&out.join(format!("draws_chain{}.csv", c + 1)), &draws, c, &meta)?;
    }
    save_json(&out.join("summary.json"), &meta, &summary)?;
    save_convergence(&out.join("convergence.csv"), &summary, &meta)?;
    println!(
        "fit {} on {} persons x {} items: D_bar={:.1} DIC={:.1} ppp_RA={:.3} ppp_RT={:.3} max PSRF={}",
        summary.structure,
        summary.n_persons,
        summary.n_items,
        summary.criteria.d_bar,
        summary.criteria.dic,
        summary.ppp_ra,
        summary.ppp_rt,
        summary
            .max_psrf
            .map(|v| format!("{v:.3}"))
            .unwrap_or_else(|| "n/a".into()),
    );
    println!("wrote {}", out.join("summary.json").display());
    Ok(())
}

/// One row of the model-comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub structure: String,
    pub aic: f64,
    pub bic: f64,
    pub dic: f64,
    pub ppp_ra: f64,
    pub ppp_rt: f64,
}

fn run_compare(config: &RunConfig) -> Result<()> {
    let settings = &config.settings;
    settings.sampler.validate()?;
    let (data, q) = load_inputs(settings)?;
    let meta = Meta {
        config_hash: config_hash(config)?,
        seed: settings.sampler.seed,
    };
    let out = &settings.output_dir;
    let mut rows = Vec::new();
    for structure in [
        ModelStructure::MaMs,
        ModelStructure::MaUs,
        ModelStructure::UaUs,
    ] {
        let (_, summary) = fit_once(settings, &data, &q, structure)?;
        save_json(
            &out.join(format!("summary_{}.json", structure.label())),
            &meta,
            &summary,
        )?;
        rows.push(ComparisonRow {
            structure: structure.label().to_string(),
            aic: summary.criteria.aic,
            bic: summary.criteria.bic,
            dic: summary.criteria.dic,
            ppp_ra: summary.ppp_ra,
            ppp_rt: summary.ppp_rt,
        });
    }
    let mut w = create_csv(&out.join("comparison.csv"), &meta)?;
    w.write_record(["structure", "AIC", "BIC", "DIC", "ppp_RA", "ppp_RT"])?;
    for row in &rows {
        w.write_record([
            row.structure.clone(),
            format!("{}", row.aic),
            format!("{}", row.bic),
            format!("{}", row.dic),
            format!("{}", row.ppp_ra),
            format!("{}", row.ppp_rt),
        ])?;
    }
    w.flush()?;
    #[derive(Serialize)]
    struct ComparisonFile {
        rows: Vec<ComparisonRow>,
    }
    save_json(&out.join("comparison.json"), &meta, ComparisonFile { rows: rows.clone() })?;
    println!("structure   AIC        BIC        DIC        ppp_RA  ppp_RT");
    for row in &rows {
        println!(
            "{:<10} {:<10.1} {:<10.1} {:<10.1} {:<7.3} {:<7.3}",
            row.structure, row.aic, row.bic, row.dic, row.ppp_ra, row.ppp_rt
        );
    }
    Ok(())
}

fn run_recover(config: &RunConfig) -> Result<()> {
    let settings = &config.settings;
    settings.sampler.validate()?;
    let design = settings.design.build(settings.structure)?;
    let meta = Meta {
        config_hash: config_hash(config)?,
        seed: settings.base_seed,
    };
    let report: RecoveryReport = run_replications(
        &design,
        &settings.sampler,
        &settings.priors,
        settings.replications,
        settings.base_seed,
    )?;
    let out = &settings.output_dir;
    let mut w = create_csv(&out.join("recovery.csv"), &meta)?;
    w.write_record(["family", "bias", "mean_abs_bias", "rmse", "cor"])?;
    for family in &report.families {
        w.write_record([
            family.family.clone(),
            format!("{}", family.bias),
            format!("{}", family.mean_abs_bias),
            format!("{}", family.rmse),
            family.cor.map(|v| format!("{v}")).unwrap_or_else(|| "NA".into()),
        ])?;
    }
    w.flush()?;
    save_json(&out.join("recovery.json"), &meta, &report)?;
    println!(
        "recovery over {} replications ({} excluded):",
        report.n_replications, report.n_excluded
    );
    println!("{:<14} {:>9} {:>9} {:>7}", "family", "bias", "rmse", "cor");
    for family in &report.families {
        println!(
            "{:<14} {:>9.4} {:>9.4} {:>7}",
            family.family,
            family.bias,
            family.rmse,
            family.cor.map(|v| format!("{v:.3}")).unwrap_or_else(|| "NA".into()),
        );
    }
    Ok(())
}
