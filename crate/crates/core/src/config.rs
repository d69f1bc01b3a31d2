//! Run configuration, run metadata and atomic file output.
//!
//! A run is described by a TOML file whose keys mirror [`RunConfig`]; any key
//! can be overridden on the command line by a flag of the same name with
//! dashes for underscores.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::connectedness::TciDenominator;
use crate::error::{Error, Result};
use crate::frequency::{frequency_grid, FrequencyBand, DEFAULT_GRID_SIZE};
use crate::portfolio::Strategy;
use crate::qvar::{BicVariant, CovarianceKind};
use crate::rolling::{tau_grid, LagPolicy, RollingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    #[default]
    Prices,
    Returns,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LagMode {
    Fixed,
    #[default]
    Bic,
    BicPerWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub label: String,
    /// Lower edge in radians (exclusive).
    pub a: f64,
    /// Upper edge in radians (inclusive).
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub input_kind: InputKind,
    pub date_column: String,
    pub series: Option<Vec<String>>,
    pub break_date: Option<NaiveDate>,
    pub window: usize,
    pub horizon: usize,
    pub lag_mode: LagMode,
    pub lag: usize,
    pub p_max: usize,
    pub bic_variant: BicVariant,
    pub taus: Vec<f64>,
    pub surface_taus: Vec<f64>,
    pub bands: Vec<BandSpec>,
    pub step: usize,
    pub grid_size: usize,
    pub tci_denominator: TciDenominator,
    pub covariance: CovarianceKind,
    pub strategies: Vec<Strategy>,
    pub var_alpha: f64,
    pub significance: f64,
    pub network_threshold: f64,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            input_kind: InputKind::Prices,
            date_column: "date".into(),
            series: None,
            break_date: None,
            window: 200,
            horizon: 20,
            lag_mode: LagMode::Bic,
            lag: 1,
            p_max: 5,
            bic_variant: BicVariant::Ols,
            taus: vec![0.05, 0.5, 0.95],
            surface_taus: tau_grid(),
            bands: FrequencyBand::defaults()
                .into_iter()
                .map(|b| BandSpec {
                    label: b.label,
                    a: b.a,
                    b: b.b,
                })
                .collect(),
            step: 1,
            grid_size: DEFAULT_GRID_SIZE,
            tci_denominator: TciDenominator::N,
            covariance: CovarianceKind::Uncentered,
            strategies: vec![Strategy::Mvp, Strategy::Mcp, Strategy::Mcop],
            var_alpha: 0.05,
            significance: 0.05,
            network_threshold: 0.0,
            output_dir: PathBuf::from("out"),
            seed: 42,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn lag_policy(&self) -> LagPolicy {
        match self.lag_mode {
            LagMode::Fixed => LagPolicy::Fixed { p: self.lag },
            LagMode::Bic => LagPolicy::Bic {
                p_max: self.p_max,
                variant: self.bic_variant,
            },
            LagMode::BicPerWindow => LagPolicy::BicPerWindow {
                p_max: self.p_max,
                variant: self.bic_variant,
            },
        }
    }

    pub fn frequency_bands(&self) -> Result<Vec<FrequencyBand>> {
        self.bands
            .iter()
            .map(|b| FrequencyBand::new(&b.label, b.a, b.b))
            .collect()
    }

    pub fn rolling(&self, taus: &[f64]) -> Result<RollingConfig> {
        Ok(RollingConfig {
            window: self.window,
            horizon: self.horizon,
            lag: self.lag_policy(),
            taus: taus.to_vec(),
            bands: self.frequency_bands()?,
            step: self.step,
            grid_size: self.grid_size,
            denominator: self.tci_denominator,
            covariance: self.covariance,
        })
    }

    /// Checks every constraint and reports all violations together.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.date_column.trim().is_empty() {
            errs.push("date_column must not be empty".to_string());
        }
        if self.window < 12 {
            errs.push(format!("window {} is too short", self.window));
        }
        if self.lag == 0 {
            errs.push("lag must be at least 1".into());
        }
        if self.p_max == 0 {
            errs.push("p_max must be at least 1".into());
        }
        if self.taus.is_empty() {
            errs.push("taus must not be empty".into());
        }
        for (key, list) in [("taus", &self.taus), ("surface_taus", &self.surface_taus)] {
            for t in list.iter() {
                if !(*t > 0.0 && *t < 1.0) {
                    errs.push(format!("{key}: level {t} outside (0, 1)"));
                }
            }
            let mut sorted = list.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            sorted.dedup();
            if sorted.len() != list.len() {
                errs.push(format!("{key} contains duplicates"));
            }
        }
        if self.surface_taus.len() < 3 {
            errs.push("surface_taus needs at least 3 levels".into());
        }
        if self.step == 0 {
            errs.push("step must be at least 1".into());
        }
        if self.grid_size == 0 {
            errs.push("grid_size must be at least 1".into());
        } else if self.horizon >= 2 * self.grid_size {
            errs.push(format!(
                "grid_size {} is too small for horizon {}",
                self.grid_size, self.horizon
            ));
        }
        if !(self.var_alpha > 0.0 && self.var_alpha < 0.5) {
            errs.push(format!("var_alpha {} outside (0, 0.5)", self.var_alpha));
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            errs.push(format!("significance {} outside (0, 1)", self.significance));
        }
        if !(self.network_threshold >= 0.0) {
            errs.push(format!("network_threshold {} must be nonnegative", self.network_threshold));
        }
        if self.strategies.is_empty() {
            errs.push("strategies must not be empty".into());
        }
        errs.extend(self.band_errors());
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    fn band_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.bands.is_empty() {
            return vec!["bands must not be empty".into()];
        }
        let mut bands = Vec::new();
        for b in &self.bands {
            match FrequencyBand::new(&b.label, b.a, b.b) {
                Ok(f) => bands.push(f),
                Err(e) => errs.push(format!("bands: {e}")),
            }
        }
        for (i, b) in bands.iter().enumerate() {
            if b.label == crate::connectedness::TOTAL_BAND || bands[..i].iter().any(|o| o.label == b.label) {
                errs.push(format!("bands: label {:?} is reserved or repeated", b.label));
            }
        }
        if !errs.is_empty() || self.grid_size == 0 {
            return errs;
        }
        let mut empty: Vec<&str> = bands.iter().map(|b| b.label.as_str()).collect();
        for w in frequency_grid(self.grid_size) {
            let hits: Vec<&FrequencyBand> = bands.iter().filter(|b| b.contains(w)).collect();
            match hits.len() {
                0 => {
                    errs.push(format!("bands do not cover frequency {w:.6} of (0, pi]"));
                    break;
                }
                1 => empty.retain(|l| *l != hits[0].label),
                _ => {
                    errs.push(format!("bands overlap at frequency {w:.6}"));
                    break;
                }
            }
        }
        for l in empty {
            errs.push(format!("band {l:?} contains no grid frequency"));
        }
        errs
    }
}

/// Parses `label:a:b` band specifications; edges may be written as
/// multiples of pi such as `pi/5`.
pub fn parse_band(spec: &str) -> std::result::Result<BandSpec, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("band {spec:?} must look like label:a:b"));
    }
    Ok(BandSpec {
        label: parts[0].to_string(),
        a: parse_angle(parts[1])?,
        b: parse_angle(parts[2])?,
    })
}

fn parse_angle(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    let bad = || format!("cannot read frequency {s:?}");
    if let Some(rest) = s.strip_prefix("pi") {
        return match rest.strip_prefix('/') {
            Some(d) => d.trim().parse::<f64>().map(|d| PI / d).map_err(|_| bad()),
            None if rest.is_empty() => Ok(PI),
            None => Err(bad()),
        };
    }
    s.parse::<f64>().map_err(|_| bad())
}

/// Record of one run: the full configuration plus every methodological
/// switch in force and the files produced.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub methods: Methods,
    pub outputs: Vec<String>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Methods {
    pub tci_denominator: TciDenominator,
    pub normalization: &'static str,
    pub band_normalization: &'static str,
    pub lag_policy: LagPolicy,
    pub bic_variant: BicVariant,
    pub residual_covariance: CovarianceKind,
    pub quantile_solver: &'static str,
    pub frequency_grid: &'static str,
    pub frequency_grid_size: usize,
    pub ma_truncation: usize,
    pub surface_taus: Vec<f64>,
    pub non_convergence: &'static str,
    pub long_only: &'static str,
    pub portfolio_moments: &'static str,
    pub hedging_test: &'static str,
    pub var_definition: &'static str,
    pub var_alpha: f64,
    pub chow_model: &'static str,
    pub wilcoxon: &'static str,
    pub network_threshold: f64,
}

impl RunMetadata {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            methods: Methods {
                tci_denominator: config.tci_denominator,
                normalization: "rows of the generalized FEVD divided by their sums",
                band_normalization: "band aggregates divided by whole-range row sums",
                lag_policy: config.lag_policy(),
                bic_variant: config.bic_variant,
                residual_covariance: config.covariance,
                quantile_solver: "Frisch-Newton interior point with vertex polish",
                frequency_grid: "midpoints (k - 1/2) pi / N, equal weights",
                frequency_grid_size: config.grid_size,
                ma_truncation: config.horizon,
                surface_taus: config.surface_taus.clone(),
                non_convergence: "flag and skip",
                long_only: "clip negatives, re-solve, then active-set refinement",
                portfolio_moments: "sample moments on the rolling window",
                hedging_test: "two-sided F-test, (T-1, T-1) degrees of freedom",
                var_definition: "inverse empirical CDF at var_alpha",
                var_alpha: config.var_alpha,
                chow_model: "intercept only, F(1, T-2)",
                wilcoxon: "rank sum minus n1(n1+1)/2, tie and continuity corrected normal",
                network_threshold: config.network_threshold,
            },
            outputs: Vec::new(),
            notes: Vec::new(),
        }
    }
}

/// Writes a file through a sibling temporary file and a rename, so readers
/// never observe a partial file.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        fill(&mut w)?;
        let file = w.into_inner().map_err(|e| Error::io(&tmp, e.into_error()))?;
        file.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn write_metadata(path: &Path, meta: &RunMetadata) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, meta)
            .map_err(|e| Error::io("metadata", std::io::Error::other(e)))?;
        writeln!(w).map_err(|e| Error::io("metadata", e))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.window, 200);
        assert_eq!(c.horizon, 20);
        assert_eq!(c.taus, vec![0.05, 0.5, 0.95]);
        let back = RunConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = RunConfig::from_toml_str("window = 150\ntaus = [0.1, 0.9]\ntci_denominator = \"n_minus_one\"\n").unwrap();
        assert_eq!(c.window, 150);
        assert_eq!(c.horizon, 20);
        assert_eq!(c.tci_denominator, TciDenominator::NMinusOne);
        assert!(RunConfig::from_toml_str("windw = 3").is_err());
    }

    #[test]
    fn every_violation_is_reported() {
        let c = RunConfig {
            window: 3,
            taus: vec![1.2],
            step: 0,
            var_alpha: 0.7,
            network_threshold: -1.0,
            ..RunConfig::default()
        };
        match c.validate() {
            Err(Error::Config(m)) => assert_eq!(m.len(), 5, "{m:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn band_partition_checked() {
        let mut c = RunConfig::default();
        c.bands.pop();
        assert!(c.validate().is_err());
        c.bands = vec![parse_band("all:0:pi").unwrap()];
        c.validate().unwrap();
        c.bands = vec![parse_band("lo:0:pi/2").unwrap(), parse_band("hi:pi/3:pi").unwrap()];
        assert!(c.validate().is_err());
    }

    #[test]
    fn band_parser() {
        let b = parse_band("short:pi/5:pi").unwrap();
        assert_eq!((b.a, b.b), (PI / 5.0, PI));
        assert_eq!(parse_band("x:0:1.5").unwrap().b, 1.5);
        assert!(parse_band("x:0").is_err());
        assert!(parse_band("x:pq:1").is_err());
    }

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("a.txt");
        write_atomic(&p, |w| w.write_all(b"one").map_err(|e| Error::io("t", e))).unwrap();
        write_atomic(&p, |w| w.write_all(b"two").map_err(|e| Error::io("t", e))).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        let failed = write_atomic(&p, |_| Err(Error::InvalidArgument("boom".into())));
        assert!(failed.is_err());
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn metadata_lists_switches() {
        let meta = RunMetadata::new("connectedness", &RunConfig::default());
        let v = serde_json::to_value(&meta).unwrap();
        for key in ["tci_denominator", "normalization", "bic_variant", "frequency_grid_size", "ma_truncation", "residual_covariance"] {
            assert!(v["methods"].get(key).is_some(), "{key}");
        }
    }
}
