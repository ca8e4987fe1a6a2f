//! Configuration files, run manifests and result emission.
//!
//! Configurations are TOML. Every key is optional except `seed`; omitted
//! keys take the values of [`StudyConfig::default`]:
//!
//! ```toml
//! seed = 20240601
//! M_grid = [8, 16, 32, 64]
//! M_ref = 256
//! T = 0.5
//! dt = 3.0517578125e-5
//! samples = 1000
//! scheme = "accelerated-exponential-euler"
//!
//! [covariance]
//! rho = 2.0
//! c = 1.0
//! K = 256
//! rotations = []            # [[i, j, angle], ...]
//!
//! [x0]
//! kind = "coefficients"
//! values = [0.5, 0.25]
//!
//! [functional]
//! kind = "cosine"
//! v = [1.0]
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::{
    derivative_report, run_study, DerivativeReport, InitialData, LevelMoments, RateEstimate, StudyConfig,
    StudyKind, StudyOutput,
};
use crate::integrator::{evolve, ObservableRequest, TrajectoryRecord, Tracking};
use crate::invariants::{run_battery, InvariantReport};
use crate::noise::NoiseStream;
use crate::observables::{BoundScan, ScanRow};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SBURGERS_OUT";

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("results"))
}

/// Parses and validates a TOML configuration.
pub fn parse_config_str(text: &str) -> Result<StudyConfig> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config("<document>", e.to_string()))?;
    if !table.contains_key("seed") {
        return Err(Error::config("seed", "a seed is required"));
    }
    let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<document>", e.to_string()))?;
    let cfg: StudyConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        Error::config(key, e.into_inner().message().trim().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads `path`; the literal `default` selects the built-in configuration.
pub fn parse_config(path: impl AsRef<Path>) -> Result<StudyConfig> {
    let path = path.as_ref();
    if path.as_os_str() == "default" {
        return Ok(StudyConfig::default());
    }
    let text = fs::read_to_string(path)?;
    parse_config_str(&text)
}

/// SHA-256 of the canonical JSON form of the configuration.
pub fn config_hash(cfg: &StudyConfig) -> String {
    let canonical = serde_json::to_vec(cfg).expect("configs serialize");
    hex::encode(Sha256::digest(&canonical))
}

/// What a run computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// One trajectory on sample path `sample`, at dimension `M`
    /// (largest grid dimension when absent).
    Simulate {
        sample: u64,
        #[serde(rename = "M")]
        m: Option<usize>,
    },
    StrongRate,
    WeakRate,
    DerivativeCheck,
    Invariants { trials: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyCount {
    pub study: String,
    pub samples: usize,
    pub failures: usize,
}

/// Everything needed to rerun a command bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    /// Seconds since the Unix epoch; informational only.
    pub timestamp: u64,
    pub config_hash: String,
    pub seed: u64,
    pub command: Command,
    pub config: StudyConfig,
    pub counts: Vec<StudyCount>,
}

/// Results of one command, without provenance.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Results {
    pub kinds: Vec<StudyKind>,
    pub strong: Option<RateEstimate>,
    pub weak: Option<RateEstimate>,
    pub moments: Option<Vec<LevelMoments>>,
    pub scan: Option<BoundScan>,
    pub derivatives: Option<DerivativeReport>,
    pub trajectory: Option<TrajectoryRecord<f64>>,
    pub invariants: Option<InvariantReport>,
    pub diagnostics: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub manifest: RunManifest,
    pub results: Results,
}

impl ResultBundle {
    /// Byte-level comparison of the results and everything in the
    /// manifest except the timestamp.
    pub fn same_as(&self, other: &ResultBundle) -> bool {
        let strip = |b: &ResultBundle| {
            let mut b = b.clone();
            b.manifest.timestamp = 0;
            serde_json::to_string(&b).expect("bundles serialize")
        };
        strip(self) == strip(other)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn study_counts(out: &StudyOutput) -> Vec<StudyCount> {
    let mut counts: Vec<StudyCount> = out
        .kinds
        .iter()
        .filter(|k| **k != StudyKind::DerivativeScan)
        .map(|k| StudyCount { study: kind_name(*k).into(), samples: out.samples, failures: out.failures })
        .collect();
    if let Some(scan) = &out.scan {
        let n = scan.first.first().map_or(0, |r| r.value.n + r.value.failures);
        counts.push(StudyCount { study: "derivative-scan".into(), samples: n, failures: scan.failures });
    }
    counts
}

fn kind_name(k: StudyKind) -> &'static str {
    match k {
        StudyKind::StrongRate => "strong-rate",
        StudyKind::WeakRate => "weak-rate",
        StudyKind::Moments => "moments",
        StudyKind::DerivativeScan => "derivative-scan",
    }
}

/// One trajectory on the noise path of `sample`, with mesh observables.
pub fn simulate(cfg: &StudyConfig, sample: u64, m: Option<usize>) -> Result<TrajectoryRecord<f64>> {
    cfg.validate()?;
    let m = m.unwrap_or_else(|| *cfg.m_grid.last().expect("validated"));
    if m == 0 {
        return Err(Error::config("M", "dimension must be positive"));
    }
    let stream = NoiseStream::new(cfg.seed, sample);
    let x0 = cfg.x0.realize(cfg.m_ref.max(m), stream);
    let req = ObservableRequest {
        record_every: cfg.steps() / cfg.mesh_intervals,
        grid_sup: true,
        ito_accumulator: true,
        ..Default::default()
    };
    evolve(&x0, &cfg.scheme_for(m), &cfg.covariance.truncated_for(m), stream, &Tracking::none(), &req)
}

/// Runs `command` on `cfg` and packages the outcome with its manifest.
pub fn execute(command: Command, cfg: &StudyConfig) -> Result<ResultBundle> {
    cfg.validate()?;
    let mut results = Results::default();
    let mut counts = Vec::new();
    match &command {
        Command::Simulate { sample, m } => {
            results.trajectory = Some(simulate(cfg, *sample, *m)?);
            counts.push(StudyCount { study: "simulate".into(), samples: 1, failures: 0 });
        }
        Command::StrongRate | Command::WeakRate => {
            let kinds = if command == Command::StrongRate {
                vec![StudyKind::StrongRate, StudyKind::Moments]
            } else {
                vec![StudyKind::WeakRate]
            };
            let out = run_study(cfg, &kinds)?;
            counts = study_counts(&out);
            results.kinds = out.kinds;
            results.strong = out.strong;
            results.weak = out.weak;
            results.moments = out.moments;
            results.diagnostics = out.diagnostics;
        }
        Command::DerivativeCheck => {
            let report = derivative_report(cfg, true)?;
            let v = &cfg.variations;
            counts.push(StudyCount { study: "pathwise-variations".into(), samples: v.paths, failures: 0 });
            counts.push(StudyCount { study: "derivative-mc".into(), samples: v.samples, failures: report.du.estimate.failures });
            if let Some(scan) = &report.scan {
                counts.push(StudyCount { study: "derivative-scan".into(), samples: cfg.scan.samples, failures: scan.failures });
            }
            results.kinds = vec![StudyKind::DerivativeScan];
            results.derivatives = Some(report);
        }
        Command::Invariants { trials } => {
            let report = run_battery(cfg, *trials)?;
            counts.push(StudyCount { study: "invariants".into(), samples: *trials, failures: report.failed().len() });
            results.invariants = Some(report);
        }
    }
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").into(),
        timestamp: now(),
        config_hash: config_hash(cfg),
        seed: cfg.seed,
        command,
        config: cfg.clone(),
        counts,
    };
    Ok(ResultBundle { manifest, results })
}

/// Reruns the command recorded in `manifest`.
pub fn reproduce(manifest: &RunManifest) -> Result<ResultBundle> {
    if config_hash(&manifest.config) != manifest.config_hash {
        return Err(Error::config("config_hash", "manifest config does not match its hash"));
    }
    execute(manifest.command.clone(), &manifest.config)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
    Both,
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn csv_line(fields: &[String]) -> String {
    let mut s = fields.join(",");
    s.push('\n');
    s
}

fn rate_csv(est: &RateEstimate) -> String {
    let mut s = csv_line(&["M".into(), "estimate".into(), "ci_lo".into(), "ci_hi".into()]);
    for p in &est.points {
        s += &csv_line(&[p.m.to_string(), fmt_f64(p.estimate), fmt_f64(p.ci_lo), fmt_f64(p.ci_hi)]);
    }
    s
}

fn rate_dat(est: &RateEstimate) -> String {
    est.points.iter().map(|p| format!("{} {}\n", p.m, fmt_f64(p.estimate))).collect()
}

fn scan_csv(rows: &[ScanRow]) -> String {
    let head = ["t", "k", "alpha", "beta", "value", "ci_lo", "ci_hi", "ratio", "ratio_half_width", "ratio_power0"];
    let mut s = csv_line(&head.map(String::from));
    for r in rows {
        let (lo, hi) = r.value.ci();
        s += &csv_line(&[
            fmt_f64(r.t),
            r.k.to_string(),
            fmt_f64(r.alpha),
            fmt_f64(r.beta),
            fmt_f64(r.value.estimate),
            fmt_f64(lo),
            fmt_f64(hi),
            fmt_f64(r.ratio),
            fmt_f64(r.ratio_half_width),
            fmt_f64(r.ratio_power0),
        ]);
    }
    s
}

fn slug(name: &str) -> String {
    let mut s: String = name.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect();
    while s.contains("__") {
        s = s.replace("__", "_");
    }
    s.trim_matches('_').to_string()
}

/// Files produced by [`emit`], as `(name, contents)`.
pub fn render(bundle: &ResultBundle, format: Format) -> Result<Vec<(String, String)>> {
    let mut files = Vec::new();
    let r = &bundle.results;
    if matches!(format, Format::Json | Format::Both) {
        files.push(("results.json".into(), bundle.to_json()?));
    } else {
        files.push(("manifest.json".into(), serde_json::to_string_pretty(&bundle.manifest)?));
    }
    if !matches!(format, Format::Csv | Format::Both) {
        return Ok(files);
    }
    for (name, est) in [("strong_error", &r.strong), ("weak_error", &r.weak)] {
        if let Some(est) = est {
            files.push((format!("{name}.csv"), rate_csv(est)));
            files.push((format!("{name}.dat"), rate_dat(est)));
        }
    }
    if let Some(levels) = &r.moments {
        let names: Vec<String> = levels.first().map(|l| l.reports.iter().map(|m| m.name.clone()).collect()).unwrap_or_default();
        for (i, name) in names.iter().enumerate() {
            let mut csv = csv_line(&["M".into(), "estimate".into(), "ci_lo".into(), "ci_hi".into()]);
            let mut dat = String::new();
            for l in levels {
                let rep = &l.reports[i];
                let (lo, hi) = rep.ci();
                csv += &csv_line(&[l.m.to_string(), fmt_f64(rep.estimate), fmt_f64(lo), fmt_f64(hi)]);
                dat += &format!("{} {}\n", l.m, fmt_f64(rep.estimate));
            }
            files.push((format!("moment_{}.csv", slug(name)), csv));
            files.push((format!("moment_{}.dat", slug(name)), dat));
        }
    }
    let scan = r.scan.as_ref().or(r.derivatives.as_ref().and_then(|d| d.scan.as_ref()));
    if let Some(scan) = scan {
        files.push(("scan_first.csv".into(), scan_csv(&scan.first)));
        files.push(("scan_second.csv".into(), scan_csv(&scan.second)));
    }
    if let Some(d) = &r.derivatives {
        let mut csv = csv_line(&["sample".into(), "first_rel_err".into(), "second_rel_err".into()]);
        for p in &d.pathwise {
            csv += &csv_line(&[p.sample.to_string(), fmt_f64(p.first_rel_err), fmt_f64(p.second_rel_err)]);
        }
        files.push(("variations_pathwise.csv".into(), csv));
        let mut csv = csv_line(&["statistic".into(), "estimate".into(), "ci_lo".into(), "ci_hi".into()]);
        for c in [&d.du, &d.d2u] {
            for rep in [&c.estimate, &c.finite_difference, &c.paired_difference] {
                let (lo, hi) = rep.ci();
                csv += &csv_line(&[slug(&rep.name), fmt_f64(rep.estimate), fmt_f64(lo), fmt_f64(hi)]);
            }
        }
        files.push(("derivatives.csv".into(), csv));
    }
    if let Some(t) = &r.trajectory {
        let head = ["step", "time", "l2", "grad", "grid_sup", "dissipation", "ito"];
        let mut csv = csv_line(&head.map(String::from));
        let mut dat = String::new();
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for p in &t.mesh {
            csv += &csv_line(&[
                p.step.to_string(),
                fmt_f64(p.time),
                fmt_f64(p.l2),
                fmt_f64(p.grad),
                opt(p.grid_sup),
                fmt_f64(p.dissipation),
                fmt_f64(p.ito),
            ]);
            dat += &format!("{} {}\n", fmt_f64(p.time), fmt_f64(p.l2));
        }
        files.push(("trajectory.csv".into(), csv));
        files.push(("trajectory_l2.dat".into(), dat));
        let n = 8 * t.m;
        let profile: String = t
            .terminal
            .x
            .eval_on_grid(n)
            .iter()
            .enumerate()
            .map(|(j, v)| format!("{} {}\n", fmt_f64(j as f64 / n as f64), fmt_f64(*v)))
            .collect();
        files.push(("terminal_profile.dat".into(), profile));
    }
    if let Some(inv) = &r.invariants {
        let mut csv = csv_line(&["name".into(), "passed".into(), "worst".into(), "tolerance".into(), "trials".into()]);
        for c in &inv.checks {
            csv += &csv_line(&[c.name.clone(), c.passed.to_string(), fmt_f64(c.worst), fmt_f64(c.tolerance), c.trials.to_string()]);
        }
        files.push(("invariants.csv".into(), csv));
    }
    Ok(files)
}

/// Refuses bundles that summarize no samples.
pub fn check_emittable(bundle: &ResultBundle) -> Result<()> {
    if bundle.manifest.config.samples == 0 {
        return Err(Error::config("samples", "empty study (N_mc = 0)"));
    }
    if let Some(c) = bundle.manifest.counts.iter().find(|c| c.samples == 0) {
        return Err(Error::Study(format!("empty study `{}` (no samples)", c.study)));
    }
    Ok(())
}

/// Writes the bundle into `dir`. Files are staged in a hidden directory and
/// moved into place only after every write succeeded; on failure nothing
/// new is left behind.
pub fn emit(bundle: &ResultBundle, dir: impl AsRef<Path>, format: Format) -> Result<Vec<PathBuf>> {
    check_emittable(bundle)?;
    let files = render(bundle, format)?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let staging = dir.join(format!(".staging-{}", std::process::id()));
    let staged = (|| -> Result<()> {
        fs::create_dir_all(&staging)?;
        for (name, body) in &files {
            fs::write(staging.join(name), body)?;
        }
        Ok(())
    })();
    if let Err(e) = staged {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    let mut written = Vec::new();
    for (name, _) in &files {
        let dst = dir.join(name);
        if let Err(e) = fs::rename(staging.join(name), &dst) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            let _ = fs::remove_dir_all(&staging);
            return Err(e.into());
        }
        written.push(dst);
    }
    fs::remove_dir_all(&staging)?;
    Ok(written)
}

/// Reads back a `results.json` document.
pub fn load_bundle(path: impl AsRef<Path>) -> Result<ResultBundle> {
    ResultBundle::from_json(&fs::read_to_string(path)?)
}

/// Example configuration text with every documented key.
pub fn example_config() -> String {
    let cfg = StudyConfig { x0: InitialData::default(), ..Default::default() };
    toml::to_string(&cfg).expect("configs serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_of(text: &str) -> String {
        match parse_config_str(text) {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config_str("seed = 7\n").unwrap();
        assert_eq!(cfg, StudyConfig { seed: 7, ..Default::default() });
    }

    #[test]
    fn seed_is_mandatory() {
        assert_eq!(key_of("samples = 10\n"), "seed");
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(key_of("seed = 1\nM_grid = [8, 12]\n"), "M_grid");
        assert_eq!(key_of("seed = 1\nM_ref = \"big\"\n"), "M_ref");
        assert_eq!(key_of("seed = 1\nM_ref = 128\n"), "M_ref");
        assert_eq!(key_of("seed = 1\n[covariance]\nK = -3\n"), "covariance.K");
        assert_eq!(key_of("seed = 1\nsampels = 3\n"), "sampels");
    }

    #[test]
    fn rejects_non_trace_class_noise() {
        let err = parse_config_str("seed = 1\n[covariance]\nrho = 0.9\n").unwrap_err().to_string();
        assert!(err.contains("covariance.rho") && err.contains("Σ q_k < ∞"), "{err}");
    }

    #[test]
    fn example_config_parses_back() {
        let cfg = parse_config_str(&example_config()).unwrap();
        assert_eq!(cfg, StudyConfig::default());
    }

    #[test]
    fn shortest_round_trip_numbers() {
        for x in [0.1, 1.0 / 3.0, 2.5e-300, 123456789.0, -7.25e-8] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(0.1), "0.1");
    }

    #[test]
    fn hash_tracks_the_config() {
        let a = StudyConfig::default();
        let b = StudyConfig { seed: 1, ..Default::default() };
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
