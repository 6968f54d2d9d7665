//! Seeded Monte-Carlo runs and their artifact directories.

use std::path::{Path, PathBuf};
use std::time::Instant;

use fdelay_core::delay::{solve_delay, SolveReport, SolveSummary};
use fdelay_core::fbm::{build_kstar, FbmSampler, HurstParams};
use fdelay_core::io::{write_density_csv, write_fde1, write_field_csv, write_json, write_path_csv, Fde1};
use fdelay_core::malliavin::{
    density_estimate, detq_tail_report, lower_bound_lt, malliavin_matrix, DetQReport, MalliavinMatrix,
};
use fdelay_core::sensitivity::{
    directional_derivative, finite_difference_check, hurst_threshold, solve_field, FdCheck, GradCoefficient,
};
use fdelay_core::{GridPath, UniformGrid};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{Experiment, ExperimentConfig};
use crate::error::{CliError, Tag};

/// Runs `f` on a dedicated pool of `threads` workers (rayon's default when `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub verb: String,
    pub version: String,
    pub seed: u64,
    pub threads: Option<usize>,
    pub regime: String,
    pub hurst_threshold: f64,
    /// SHA-256 over the per-file blob hashes, in path order.
    pub content_hash: String,
    pub files: Vec<FileEntry>,
    pub wall_time_seconds: f64,
    pub config: ExperimentConfig,
    /// Verbatim TOML; feeding it back reproduces the run.
    pub config_toml: String,
}

/// Output files collected in memory and written together with the manifest.
/// The config echo is written but kept out of the content hash.
struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    fn new() -> Self {
        Self { files: Vec::new() }
    }

    fn add(&mut self, path: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((path.into(), bytes));
    }

    fn add_json<T: Serialize>(&mut self, path: &str, value: &T) -> Result<(), CliError> {
        let mut buf = Vec::new();
        write_json(&mut buf, value).tag("experiment_cli")?;
        self.add(path, buf);
        Ok(())
    }

    fn finish(
        mut self,
        verb: &str,
        exp: &Experiment,
        threads: Option<usize>,
        started: Instant,
    ) -> Result<RunOutput, CliError> {
        let cfg = &exp.config;
        let dir = cfg.output_dir.clone();
        self.files.sort_by(|a, b| a.0.cmp(&b.0));
        let mut entries = Vec::new();
        let mut tree = Sha256::new();
        for (path, bytes) in &self.files {
            let mut blob = Sha256::new();
            blob.update(format!("blob {}\0", bytes.len()).as_bytes());
            blob.update(bytes);
            let h = hex::encode(blob.finalize());
            tree.update(format!("{h}  {path}\n").as_bytes());
            entries.push(FileEntry {
                path: path.clone(),
                sha256: h,
            });
            let full = dir.join(path);
            if let Some(parent) = full.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(full, bytes)?;
        }
        let manifest = Manifest {
            verb: verb.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            threads,
            regime: cfg.regime().into(),
            hurst_threshold: hurst_threshold(),
            content_hash: hex::encode(tree.finalize()),
            files: entries,
            wall_time_seconds: started.elapsed().as_secs_f64(),
            config: cfg.clone(),
            config_toml: cfg.to_toml(),
        };
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("config.toml"), &manifest.config_toml)?;
        let mut buf = Vec::new();
        write_json(&mut buf, &manifest).tag("experiment_cli")?;
        std::fs::write(dir.join("manifest.json"), buf)?;
        Ok(RunOutput { dir, manifest })
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

fn sampler(exp: &Experiment) -> Result<FbmSampler, CliError> {
    FbmSampler::new(exp.grid, exp.config.hurst, exp.method).tag("fbm_gaussian")
}

fn driver_dim(exp: &Experiment) -> usize {
    exp.sigma.dims().1
}

fn csv_bytes(path: &GridPath) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_path_csv(&mut buf, path).tag("experiment_cli")?;
    Ok(buf)
}

/// Driver and solution of one Monte-Carlo path.
fn solve_path(exp: &Experiment, s: &FbmSampler, p: usize) -> Result<(GridPath, SolveReport), CliError> {
    let x = s.sample_path(driver_dim(exp), exp.config.seed, p as u64);
    let rep = solve_delay(&x, &exp.xi, exp.sigma.as_ref(), &exp.kernel, &exp.opts).tag("delay_solver")?;
    Ok((x, rep))
}

fn terminal_csv(n: usize, rows: &[Vec<f64>]) -> Vec<u8> {
    let mut out = String::from("path");
    for c in 0..n {
        out.push_str(&format!(",y{c}"));
    }
    out.push('\n');
    for (p, row) in rows.iter().enumerate() {
        out.push_str(&p.to_string());
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out.into_bytes()
}

#[derive(Serialize)]
struct PathSummary {
    path: usize,
    #[serde(flatten)]
    solve: SolveSummary,
}

/// Samples drivers, solves each path and writes `paths/path_NNNNN.csv`
/// (solution on `[-h, T]`), `terminal.csv`, `solves.json` and the manifest.
pub fn run_simulate(exp: &Experiment, threads: Option<usize>) -> Result<RunOutput, CliError> {
    let started = Instant::now();
    let s = sampler(exp)?;
    let results: Vec<Result<SolveReport, CliError>> = with_threads(threads, || {
        (0..exp.config.mc_paths)
            .into_par_iter()
            .map(|p| solve_path(exp, &s, p).map(|(_, r)| r))
            .collect()
    })?;
    let reports = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut art = Artifacts::new();
    let mut terminal = Vec::with_capacity(reports.len());
    let mut summaries = Vec::with_capacity(reports.len());
    for (p, rep) in reports.iter().enumerate() {
        art.add(format!("paths/path_{p:05}.csv"), csv_bytes(&rep.y)?);
        terminal.push(rep.y.last().to_vec());
        summaries.push(PathSummary {
            path: p,
            solve: rep.summary(),
        });
    }
    art.add("terminal.csv", terminal_csv(exp.xi.dim(), &terminal));
    art.add_json("solves.json", &summaries)?;
    art.finish("simulate", exp, threads, started)
}

#[derive(Clone, Debug, Serialize)]
pub struct LowerBoundSummary {
    pub eps: f64,
    pub checked: usize,
    pub passed: usize,
    /// Smallest `lambda_min(L_t) / bound` seen.
    pub min_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TimeReport {
    pub t: f64,
    pub report: DetQReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct KdeSummary {
    pub dim: usize,
    pub sample_count: usize,
    pub bandwidth: Vec<f64>,
    pub integral: Option<f64>,
    pub halving_sup_change: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DensityReport {
    pub regime: String,
    pub hurst: f64,
    pub hurst_threshold: f64,
    pub kstar_cells: usize,
    pub overall: DetQReport,
    pub per_time: Vec<TimeReport>,
    pub lower_bound: Option<LowerBoundSummary>,
    pub kde: KdeSummary,
}

struct PathDensity {
    terminal: Vec<f64>,
    matrices: Vec<MalliavinMatrix>,
    bounds: Vec<(bool, f64)>,
}

/// Simulation, sensitivity field, Malliavin matrices at the configured times,
/// KDE of `y_T` and the tail report. Writes `density.csv` (for `n <= 2`),
/// `q_summary.json`, `q_matrices.json` and the manifest.
pub fn run_density(exp: &Experiment, threads: Option<usize>) -> Result<(RunOutput, DensityReport), CliError> {
    let started = Instant::now();
    let cfg = &exp.config;
    let s = sampler(exp)?;
    let cells = cfg.density_cells;
    let stride = cfg.n_steps / cells;
    let kgrid = UniformGrid::new(0.0, cfg.horizon, cells).tag("fbm_gaussian")?;
    let params = HurstParams::new(cfg.hurst).tag("fbm_gaussian")?;
    let kstar = build_kstar(kgrid, &params).tag("fbm_gaussian")?;
    let nodes = cfg.density_nodes();
    let eps = exp.sigma.nondeg_eps();
    let n = exp.xi.dim();

    let per_path: Vec<Result<PathDensity, CliError>> = with_threads(threads, || {
        (0..cfg.mc_paths)
            .into_par_iter()
            .map(|p| {
                let (x, rep) = solve_path(exp, &s, p)?;
                let field =
                    solve_field(&rep, &x, exp.sigma.as_ref(), &exp.kernel, stride).tag("sensitivity")?;
                let mut matrices = Vec::with_capacity(nodes.len());
                for &t in &nodes {
                    matrices.push(malliavin_matrix(&field, t, &kstar).tag("malliavin_density")?);
                }
                let mut bounds = Vec::new();
                if eps > 0.0 {
                    let q = GradCoefficient::along(&rep, exp.sigma.as_ref(), &exp.kernel)
                        .and_then(|gc| gc.q_path())
                        .tag("sensitivity")?;
                    for &t in &nodes {
                        let lb = lower_bound_lt(&q, n, &kstar, t, eps).tag("malliavin_density")?;
                        bounds.push((lb.pass, lb.lambda_min / lb.bound));
                    }
                }
                Ok(PathDensity {
                    terminal: rep.y.last().to_vec(),
                    matrices,
                    bounds,
                })
            })
            .collect()
    })?;
    let per_path = per_path.into_iter().collect::<Result<Vec<_>, _>>()?;

    let samples: Vec<f64> = per_path.iter().flat_map(|p| p.terminal.iter().copied()).collect();
    let est = density_estimate(&samples, n, None).tag("malliavin_density")?;
    let all: Vec<MalliavinMatrix> = per_path.iter().flat_map(|p| p.matrices.iter().cloned()).collect();
    let overall = detq_tail_report(&all).tag("malliavin_density")?;
    let mut per_time = Vec::new();
    for (k, &t) in nodes.iter().enumerate() {
        let batch: Vec<MalliavinMatrix> = per_path.iter().map(|p| p.matrices[k].clone()).collect();
        per_time.push(TimeReport {
            t: exp.grid.node(t),
            report: detq_tail_report(&batch).tag("malliavin_density")?,
        });
    }
    let lower_bound = (eps > 0.0).then(|| {
        let flat: Vec<(bool, f64)> = per_path.iter().flat_map(|p| p.bounds.iter().copied()).collect();
        LowerBoundSummary {
            eps,
            checked: flat.len(),
            passed: flat.iter().filter(|b| b.0).count(),
            min_ratio: flat.iter().map(|b| b.1).fold(f64::INFINITY, f64::min),
        }
    });
    let gridded = n <= 2;
    let halving = if gridded {
        Some(est.sup_change(&est.halved().tag("malliavin_density")?))
    } else {
        None
    };
    let report = DensityReport {
        regime: cfg.regime().into(),
        hurst: cfg.hurst,
        hurst_threshold: hurst_threshold(),
        kstar_cells: cells,
        overall,
        per_time,
        lower_bound,
        kde: KdeSummary {
            dim: n,
            sample_count: est.sample_count,
            bandwidth: est.bandwidth.clone(),
            integral: gridded.then(|| est.integral()),
            halving_sup_change: halving,
        },
    };

    let mut art = Artifacts::new();
    if gridded {
        let mut buf = Vec::new();
        write_density_csv(&mut buf, &est).tag("malliavin_density")?;
        art.add("density.csv", buf);
    }
    art.add_json("q_summary.json", &report)?;
    art.add_json("q_matrices.json", &all)?;
    let terminal: Vec<Vec<f64>> = per_path.iter().map(|p| p.terminal.clone()).collect();
    art.add("terminal.csv", terminal_csv(n, &terminal));
    Ok((art.finish("density", exp, threads, started)?, report))
}

#[derive(Clone, Debug, Serialize)]
pub struct SensitivityReport {
    pub stride: usize,
    pub columns: usize,
    /// Perturbation direction `k(t) = t` in every driver component.
    pub fd_check: FdCheck,
    /// `sup_i |z_T^i - sum_r Phi_T(r) dk_r| / |z_T|`, with a full r-grid.
    pub representation_error: Option<f64>,
}

/// Sensitivity field of path 0: `sensitivity.csv`, `sensitivity.bin`,
/// `sensitivity.json` and the manifest.
pub fn run_sensitivity(exp: &Experiment, threads: Option<usize>) -> Result<(RunOutput, SensitivityReport), CliError> {
    let started = Instant::now();
    let cfg = &exp.config;
    let s = sampler(exp)?;
    let (x, rep) = solve_path(exp, &s, 0)?;
    let sigma = exp.sigma.as_ref();
    let field = with_threads(threads, || solve_field(&rep, &x, sigma, &exp.kernel, cfg.sensitivity_stride))?
        .tag("sensitivity")?;
    let d = driver_dim(exp);
    let k = GridPath::from_fn(exp.grid, d, |t, o| o.fill(t));
    let fd = finite_difference_check(&x, &k, &exp.xi, sigma, &exp.kernel, &exp.opts, 1e-4, 1e-2)
        .tag("sensitivity")?;
    let representation_error = if cfg.sensitivity_stride == 1 {
        let z = directional_derivative(&rep, &x, &k, sigma, &exp.kernel, &exp.opts).tag("sensitivity")?;
        let t = exp.grid.n_steps();
        let r = field.represent(&k, t).tag("sensitivity")?;
        let zt = z.at(t);
        let scale = zt.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        Some(zt.iter().zip(&r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale)
    } else {
        None
    };
    let report = SensitivityReport {
        stride: cfg.sensitivity_stride,
        columns: field.r_nodes.len(),
        fd_check: fd,
        representation_error,
    };

    let mut art = Artifacts::new();
    let mut csv = Vec::new();
    write_field_csv(&mut csv, &field).tag("sensitivity")?;
    art.add("sensitivity.csv", csv);
    let mut bin = Vec::new();
    write_fde1(&mut bin, &Fde1::from_field(cfg.hurst, &field)).tag("sensitivity")?;
    art.add("sensitivity.bin", bin);
    art.add("path.csv", csv_bytes(&rep.y)?);
    art.add_json("sensitivity.json", &report)?;
    Ok((art.finish("sensitivity", exp, threads, started)?, report))
}

#[derive(Clone, Debug, Serialize)]
pub struct FbmReport {
    pub paths: usize,
    pub d: usize,
    pub method: String,
    /// Empirical `E[x_T^2]` over paths and components.
    pub terminal_second_moment: f64,
    /// `T^{2H}`.
    pub expected_second_moment: f64,
}

/// Writes `fbm/path_NNNNN.bin` (FDE1), `fbm_summary.json` and the manifest.
pub fn run_fbm_sample(exp: &Experiment, threads: Option<usize>) -> Result<(RunOutput, FbmReport), CliError> {
    let started = Instant::now();
    let cfg = &exp.config;
    let s = sampler(exp)?;
    let d = driver_dim(exp);
    let paths = with_threads(threads, || s.sample_batch(d, cfg.seed, cfg.mc_paths))?;
    let mut art = Artifacts::new();
    let mut second = 0.0;
    for (p, path) in paths.iter().enumerate() {
        second += path.last().iter().map(|v| v * v).sum::<f64>();
        let mut buf = Vec::new();
        write_fde1(&mut buf, &Fde1::from_path(cfg.hurst, path)).tag("fbm_gaussian")?;
        art.add(format!("fbm/path_{p:05}.bin"), buf);
    }
    let report = FbmReport {
        paths: paths.len(),
        d,
        method: format!("{:?}", exp.method).to_lowercase(),
        terminal_second_moment: second / (paths.len() * d) as f64,
        expected_second_moment: cfg.horizon.powf(2.0 * cfg.hurst),
    };
    art.add_json("fbm_summary.json", &report)?;
    Ok((art.finish("fbm-sample", exp, threads, started)?, report))
}

/// Loads, applies overrides, and validates.
pub fn prepare(config: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<Experiment, CliError> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.output_dir = o.to_path_buf();
    }
    cfg.validate()
}
