//! Flags shared by every command, their TOML mirror and the merge rule.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Deserializer};

use poolsmooth::estimators::linspace;
use poolsmooth::io::Format;
use poolsmooth::simulation::{Curve, LawKind, SimulationModel};
use poolsmooth::{BandwidthRule, BandwidthSearch, BinExponent, EstimatorTag, Kernel, SmootherSpec};

/// `fixed:H`, `cv` or `plugin`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthChoice {
    Fixed(f64),
    Cv,
    Plugin,
}

impl FromStr for BandwidthChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        if let Some(h) = lower.strip_prefix("fixed:") {
            let h: f64 = h
                .parse()
                .map_err(|_| format!("bad bandwidth '{h}' in '{s}'"))?;
            if !(h.is_finite() && h > 0.0) {
                return Err(format!("fixed bandwidth must be positive, got {h}"));
            }
            return Ok(BandwidthChoice::Fixed(h));
        }
        match lower.as_str() {
            "cv" => Ok(BandwidthChoice::Cv),
            "plugin" | "plug-in" => Ok(BandwidthChoice::Plugin),
            _ => Err(format!(
                "unknown bandwidth rule '{s}' (expected fixed:H, cv or plugin)"
            )),
        }
    }
}

impl BandwidthChoice {
    pub fn rule(self) -> BandwidthRule {
        match self {
            BandwidthChoice::Fixed(h) => BandwidthRule::Fixed(h),
            BandwidthChoice::Cv => BandwidthRule::CrossValidation(BandwidthSearch::default()),
            BandwidthChoice::Plugin => BandwidthRule::Plugin(BandwidthSearch::default()),
        }
    }
}

/// `N` points over the default range, or `a:b:N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridSpec {
    Count(usize),
    Range { a: f64, b: f64, n: usize },
}

impl FromStr for GridSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let count = |t: &str| -> Result<usize, String> {
            match t.parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(format!("bad grid size '{t}' in '{s}'")),
            }
        };
        match parts.as_slice() {
            [n] => Ok(GridSpec::Count(count(n)?)),
            [a, b, n] => {
                let a: f64 = a.parse().map_err(|_| format!("bad grid start in '{s}'"))?;
                let b: f64 = b.parse().map_err(|_| format!("bad grid end in '{s}'"))?;
                if !(a.is_finite() && b.is_finite() && a <= b) {
                    return Err(format!("grid '{s}' needs a <= b"));
                }
                Ok(GridSpec::Range { a, b, n: count(n)? })
            }
            _ => Err(format!("bad grid '{s}' (expected N or a:b:N)")),
        }
    }
}

impl GridSpec {
    /// Points along one axis, `default` supplying the range for a bare count.
    pub fn axis(self, default: (f64, f64)) -> Vec<f64> {
        match self {
            GridSpec::Count(n) => linspace(default.0, default.1, n),
            GridSpec::Range { a, b, n } => linspace(a, b, n),
        }
    }

    /// Row-major product grid over `dim` axes.
    pub fn product(self, default: (f64, f64), dim: usize) -> Vec<f64> {
        let axis = self.axis(default);
        let mut rows: Vec<Vec<f64>> = vec![Vec::new()];
        for _ in 0..dim {
            rows = rows
                .into_iter()
                .flat_map(|r| {
                    axis.iter().map(move |&v| {
                        let mut next = r.clone();
                        next.push(v);
                        next
                    })
                })
                .collect();
        }
        rows.into_iter().flatten().collect()
    }
}

/// Accepts either a TOML string or number and parses it with `FromStr`.
fn parsed<'de, D, T>(d: D) -> Result<Option<T>, D::Error>
where
    D: Deserializer<'de>,
    T: FromStr,
    T::Err: fmt::Display,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        S(String),
        I(i64),
        F(f64),
    }
    let text = match Raw::deserialize(d)? {
        Raw::S(s) => s,
        Raw::I(i) => i.to_string(),
        Raw::F(f) => f.to_string(),
    };
    text.parse().map(Some).map_err(serde::de::Error::custom)
}

/// A single value or a list.
fn one_or_many<'de, D, T>(d: D) -> Result<Option<Vec<T>>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(Some(match Raw::deserialize(d)? {
        Raw::One(v) => vec![v],
        Raw::Many(v) => v,
    }))
}

/// Every option of every command. Commands read the ones they need.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Options {
    /// Input CSV: individual records (x[,y] or x1..xd[,y]) or pooled
    /// records (group_id, x.., group_result).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Estimator(s): DH, DM, LL, DH_binned (comma-separated where a list is accepted).
    #[arg(long, value_delimiter = ',')]
    #[serde(deserialize_with = "one_or_many")]
    pub estimator: Option<Vec<String>>,
    /// Pool size(s).
    #[arg(long, value_delimiter = ',')]
    #[serde(deserialize_with = "one_or_many")]
    pub nu: Option<Vec<f64>>,
    /// Local polynomial degree.
    #[arg(long)]
    pub degree: Option<usize>,
    /// gaussian, epanechnikov or uniform.
    #[arg(long)]
    pub kernel: Option<String>,
    /// fixed:H, cv or plugin.
    #[arg(long)]
    #[serde(deserialize_with = "parsed")]
    pub bandwidth: Option<BandwidthChoice>,
    /// Retry failed fits with a doubled bandwidth, up to three times.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub widen: Option<bool>,
    /// Evaluation grid: N points, or a:b:N.
    #[arg(long)]
    #[serde(deserialize_with = "parsed")]
    pub grid: Option<GridSpec>,
    /// Master seed for every random draw.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format(s): csv, json.
    #[arg(long, value_delimiter = ',')]
    #[serde(deserialize_with = "one_or_many")]
    pub format: Option<Vec<String>>,
    /// Simulation model(s): i, ii, iii, iv or constant:P.
    #[arg(long, value_delimiter = ',')]
    #[serde(deserialize_with = "one_or_many")]
    pub model: Option<Vec<String>>,
    /// Covariate law for simulation models: uniform or normal.
    #[arg(long)]
    pub law: Option<String>,
    /// Multiplier applied to the prevalence curve.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Sample size(s).
    #[arg(long, value_delimiter = ',')]
    #[serde(deserialize_with = "one_or_many")]
    pub n: Option<Vec<usize>>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Keep per-replicate ISE values in JSON tables.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub traces: Option<bool>,
    /// Run replicates on one thread.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub sequential: Option<bool>,
    /// Rate experiment bandwidth: oracle (N^-1/5 scaled) or smoother.
    #[arg(long)]
    pub rate_bandwidth: Option<String>,
    /// Bootstrap resamples for the rate slope band.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Add the ungrouped fit to the over-pooling table.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub include_ll: Option<bool>,
    /// Root exponent of the binned estimator: local or smoothed.
    #[arg(long)]
    pub bin_exponent: Option<String>,
}

macro_rules! overlay {
    ($hi:expr, $lo:expr, $($f:ident),* $(,)?) => {
        Options { $($f: $hi.$f.or($lo.$f)),* }
    };
}

impl Options {
    /// Fields set here win; unset ones fall back to `lower`.
    pub fn over(self, lower: Options) -> Options {
        overlay!(
            self,
            lower,
            input,
            estimator,
            nu,
            degree,
            kernel,
            bandwidth,
            widen,
            grid,
            seed,
            out,
            format,
            model,
            law,
            delta,
            n,
            replicates,
            traces,
            sequential,
            rate_bandwidth,
            bootstrap,
            include_ll,
            bin_exponent,
        )
    }

    /// Reads a TOML config. Top-level keys apply to every command; a table
    /// named after the command overrides them.
    pub fn from_config(path: &Path, command: &str) -> Result<Options> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut table: toml::Table =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let section = table.remove(command);
        for name in ["estimate", "simulate", "rate", "overpool", "diagnostics"] {
            table.remove(name);
        }
        let base: Options = toml::Value::Table(table)
            .try_into()
            .with_context(|| format!("config {}", path.display()))?;
        let specific: Options = match section {
            Some(v @ toml::Value::Table(_)) => v
                .try_into()
                .with_context(|| format!("config {} [{command}]", path.display()))?,
            Some(_) => bail!("config {}: '{command}' must be a table", path.display()),
            None => Options::default(),
        };
        Ok(specific.over(base))
    }

    pub fn estimators(&self, default: &[EstimatorTag]) -> Result<Vec<EstimatorTag>> {
        match &self.estimator {
            None => Ok(default.to_vec()),
            Some(v) => v
                .iter()
                .map(|s| s.parse().map_err(anyhow::Error::msg))
                .collect(),
        }
    }

    pub fn single_estimator(&self, default: EstimatorTag) -> Result<EstimatorTag> {
        let v = self.estimators(&[default])?;
        match v.as_slice() {
            [e] => Ok(*e),
            _ => bail!("this command takes one estimator, got {}", v.len()),
        }
    }

    pub fn nus(&self, default: &[f64]) -> Vec<f64> {
        self.nu.clone().unwrap_or_else(|| default.to_vec())
    }

    pub fn single_nu(&self) -> Result<Option<f64>> {
        match self.nu.as_deref() {
            None => Ok(None),
            Some([v]) => Ok(Some(*v)),
            Some(v) => bail!("this command takes one pool size, got {}", v.len()),
        }
    }

    pub fn kernel(&self) -> Result<Kernel> {
        match &self.kernel {
            None => Ok(Kernel::Gaussian),
            Some(k) => k.parse().map_err(anyhow::Error::msg),
        }
    }

    /// Smoother spec; `fallback` is the rule used when none was given.
    pub fn smoother(&self, fallback: BandwidthChoice) -> Result<SmootherSpec> {
        let spec = SmootherSpec {
            kernel: self.kernel()?,
            degree: self.degree.unwrap_or(1),
            bandwidth: self.bandwidth.unwrap_or(fallback).rule(),
            widen_on_failure: self.widen.unwrap_or(false),
        };
        spec.validate().context("smoother settings")?;
        Ok(spec)
    }

    pub fn formats(&self) -> Result<Vec<Format>> {
        match &self.format {
            None => Ok(vec![Format::Csv]),
            Some(v) => v
                .iter()
                .map(|s| s.parse().map_err(anyhow::Error::msg))
                .collect(),
        }
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(dir)
    }

    /// The seed, which random commands cannot run without.
    pub fn required_seed(&self, command: &str) -> Result<u64> {
        self.seed
            .with_context(|| format!("{command} needs --seed (or `seed` in the config); runs are never seeded implicitly"))
    }

    pub fn models(&self, default: &[&str]) -> Result<Vec<SimulationModel>> {
        let kind = match self.law.as_deref().map(str::to_ascii_lowercase).as_deref() {
            None | Some("uniform") => LawKind::Uniform,
            Some("normal") => LawKind::Normal,
            Some(other) => bail!("unknown law '{other}' (expected uniform or normal)"),
        };
        let names: Vec<String> = match &self.model {
            Some(v) => v.clone(),
            None => default.iter().map(|s| s.to_string()).collect(),
        };
        names
            .iter()
            .map(|name| {
                let curve: Curve = name.parse().map_err(anyhow::Error::msg)?;
                let model =
                    SimulationModel::standard(curve, kind).with_delta(self.delta.unwrap_or(1.0));
                model.validate().with_context(|| format!("model {name}"))?;
                Ok(model)
            })
            .collect()
    }

    pub fn bin_exponent(&self) -> Result<BinExponent> {
        match &self.bin_exponent {
            None => Ok(BinExponent::LocalCount),
            Some(s) => s.parse().map_err(anyhow::Error::msg),
        }
    }
}
