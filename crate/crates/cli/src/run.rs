use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};

use poolsmooth::estimators::{
    asymptotic_diagnostics, individual_data_diagnostics, pooled_data_diagnostics,
};
use poolsmooth::io::{
    emit_diagnostics, emit_estimate, emit_table, read_individual_csv, read_pooled_csv, write_json,
    write_overpool_csv, DiagnosticsRow, Format,
};
use poolsmooth::simulation::{
    overpooling_experiment, rate_experiment, OverpoolSpec, RateBandwidth, RateSpec, TableSpec,
};
use poolsmooth::{
    estimate_dh, estimate_dh_binned_with, estimate_dm, estimate_ll, pool_binned, pool_homogeneous,
    pool_random, EstimateResult, EstimatorTag, Execution, PooledDataset, RawDataset,
};

use crate::options::{BandwidthChoice, GridSpec, Options};

const DEFAULT_GRID: GridSpec = GridSpec::Count(201);
const OVERPOOL_NEGATIVE_FLOOR: f64 = 0.1;

enum Input {
    Individual(RawDataset),
    Pooled(PooledDataset),
}

/// A `group_id` column marks pooled records.
fn is_pooled_file(path: &Path) -> Result<bool> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut header = String::new();
    BufReader::new(file)
        .read_line(&mut header)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(header
        .trim_start_matches('\u{feff}')
        .split(',')
        .any(|c| c.trim().eq_ignore_ascii_case("group_id")))
}

fn read_input(path: &Path) -> Result<Input> {
    if is_pooled_file(path)? {
        Ok(Input::Pooled(read_pooled_csv(path)?))
    } else {
        Ok(Input::Individual(read_individual_csv(path)?))
    }
}

fn whole_nu(v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v <= usize::MAX as f64 {
        Ok(v as usize)
    } else {
        bail!("pool size must be a positive integer here, got {v}")
    }
}

fn whole_nus(v: &[f64]) -> Result<Vec<usize>> {
    v.iter().map(|&x| whole_nu(x)).collect()
}

fn execution(opts: &Options) -> Execution {
    if opts.sequential.unwrap_or(false) {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

/// Plug-in where it is defined (one covariate, local linear), cross-validation otherwise.
fn default_rule(opts: &Options, dim: usize) -> BandwidthChoice {
    if dim == 1 && opts.degree.unwrap_or(1) == 1 {
        BandwidthChoice::Plugin
    } else {
        BandwidthChoice::Cv
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn warn_estimate(r: &EstimateResult) {
    let clamped = r.clamped_count();
    if clamped > 0 {
        warn!("event=clamped estimator={} points={clamped}", r.estimator);
    }
    if !r.failures.is_empty() {
        let first = &r.failures[0];
        warn!(
            "event=point_failures estimator={} points={} first_index={} first_issue=\"{}\"",
            r.estimator,
            r.failures.len(),
            first.index,
            first.issue
        );
    }
    if !r.widened.is_empty() {
        warn!(
            "event=widened estimator={} points={}",
            r.estimator,
            r.widened.len()
        );
    }
}

pub fn estimate(opts: &Options) -> Result<()> {
    let path = opts.input.as_deref().context("estimate needs --input")?;
    let tag = opts.single_estimator(EstimatorTag::Dh)?;
    let formats = opts.formats()?;
    let grid_spec = opts.grid.unwrap_or(DEFAULT_GRID);
    let result = match read_input(path)? {
        Input::Pooled(pooled) => {
            if opts.nu.is_some() {
                warn!("event=ignored option=nu reason=\"pool sizes come from the pooled file\"");
            }
            let spec = opts.smoother(default_rule(opts, pooled.dim))?;
            let covs = pooled
                .groups
                .iter()
                .flat_map(|g| g.member_covariates.iter().copied());
            let grid = grid_spec.axis(range(covs));
            match tag {
                EstimatorTag::Dh => estimate_dh(&pooled, &spec, &grid)?,
                EstimatorTag::Dm => estimate_dm(&pooled, &spec, &grid)?,
                EstimatorTag::Ll => bail!(
                    "LL needs individual outcomes, but {} holds pooled results",
                    path.display()
                ),
                EstimatorTag::DhBinned => bail!(
                    "DH_binned forms its own bins; pass individual records with --nu instead of {}",
                    path.display()
                ),
            }
        }
        Input::Individual(raw) => {
            if !raw.has_responses() {
                bail!(
                    "{} has no y column; {tag} needs individual outcomes Y to form pools on the fly (or to fit directly)",
                    path.display()
                );
            }
            let spec = opts.smoother(default_rule(opts, raw.dim()))?;
            let nu = opts.single_nu()?;
            let need_nu = || nu.with_context(|| format!("{tag} on individual records needs --nu"));
            match tag {
                EstimatorTag::Ll => {
                    let grid = grid_spec.axis(range(raw.covariates().iter().copied()));
                    estimate_ll(&raw, &spec, &grid)?
                }
                EstimatorTag::Dh => {
                    let grid = grid_spec.axis(range(raw.covariates().iter().copied()));
                    let pooled = pool_homogeneous(&raw, whole_nu(need_nu()?)?)?;
                    estimate_dh(&pooled, &spec, &grid)?
                }
                EstimatorTag::Dm => {
                    let seed = opts
                        .seed
                        .context("DM pools individuals at random and needs --seed")?;
                    let grid = grid_spec.axis(range(raw.covariates().iter().copied()));
                    let pooled = pool_random(&raw, whole_nu(need_nu()?)?, seed)?;
                    estimate_dm(&pooled, &spec, &grid)?
                }
                EstimatorTag::DhBinned => {
                    let grid = grid_spec.product((0.0, 1.0), raw.dim());
                    let pooled = pool_binned(&raw, need_nu()?)?;
                    estimate_dh_binned_with(&pooled, &spec, &grid, opts.bin_exponent()?)?
                }
            }
        }
    };
    info!(
        "event=estimated estimator={} nu={} bandwidth={} points={}",
        result.estimator,
        result.nu,
        result.bandwidth_used,
        result.len()
    );
    warn_estimate(&result);
    report(&emit_estimate(
        &result,
        &formats,
        &opts.out_dir()?,
        "estimate",
    )?);
    Ok(())
}

pub fn simulate(opts: &Options) -> Result<()> {
    let seed = opts.required_seed("simulate")?;
    let spec = TableSpec {
        models: opts.models(&["i", "ii", "iii", "iv"])?,
        sizes: opts.n.clone().unwrap_or_else(|| vec![5000]),
        nus: whole_nus(&opts.nus(&[5.0, 10.0]))?,
        estimators: opts.estimators(&[EstimatorTag::Ll, EstimatorTag::Dh, EstimatorTag::Dm])?,
        replicates: opts.replicates.unwrap_or(200),
        smoother: opts.smoother(default_rule(opts, 1))?,
        seed,
        execution: execution(opts),
        keep_traces: opts.traces.unwrap_or(false),
        bin_exponent: opts.bin_exponent()?,
    };
    spec.validate()?;
    let cells = poolsmooth::simulation::run_table(&spec)?;
    for c in cells.iter().filter(|c| c.flagged) {
        warn!(
            "event=cell_flagged cell=\"{}\" failed={}/{} first_failure=\"{}\"",
            c.key(),
            c.n_failed_reps,
            c.replicates,
            c.first_failure.as_deref().unwrap_or("")
        );
    }
    report(&emit_table(
        &cells,
        &opts.formats()?,
        &opts.out_dir()?,
        "table",
    )?);
    Ok(())
}

pub fn rate(opts: &Options) -> Result<()> {
    let seed = opts.required_seed("rate")?;
    let models = opts.models(&["iii"])?;
    let [model] = models.as_slice() else {
        bail!("rate takes one model, got {}", models.len());
    };
    let bandwidth = match opts
        .rate_bandwidth
        .as_deref()
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        None | Some("oracle") => RateBandwidth::Oracle,
        Some("smoother") => RateBandwidth::Smoother,
        Some(other) => bail!("unknown rate bandwidth '{other}' (expected oracle or smoother)"),
    };
    if bandwidth == RateBandwidth::Smoother && opts.bandwidth == Some(BandwidthChoice::Cv) {
        warn!(
            "event=rate_with_cv reason=\"cross-validated bandwidths make the fitted slope noisy\""
        );
    }
    let nu = whole_nu(opts.single_nu()?.unwrap_or(5.0))?;
    let spec = RateSpec {
        model: *model,
        estimator: opts.single_estimator(EstimatorTag::Dh)?,
        nu,
        sizes: opts.n.clone().unwrap_or_else(|| vec![1000, 4000, 16000]),
        replicates: opts.replicates.unwrap_or(100),
        smoother: opts.smoother(BandwidthChoice::Plugin)?,
        bandwidth,
        seed,
        execution: execution(opts),
        bootstrap: opts.bootstrap.unwrap_or(400),
    };
    let result = rate_experiment(&spec)?;
    info!(
        "event=rate slope={} band_lo={} band_hi={}",
        result.slope, result.band.0, result.band.1
    );
    let out = opts.out_dir()?;
    let mut written = Vec::new();
    for f in opts.formats()? {
        match f {
            Format::Csv => {
                let cells: Vec<_> = result
                    .points
                    .iter()
                    .map(|p| {
                        let mut c = p.cell.clone();
                        c.traces = None;
                        c
                    })
                    .collect();
                written.extend(emit_table(&cells, &[Format::Csv], &out, "rate")?);
            }
            Format::Json => {
                let path = out.join("rate.json");
                write_json(&result, "rate", &path)?;
                written.push(path);
            }
        }
    }
    report(&written);
    println!(
        "slope {:.4} [{:.4}, {:.4}]",
        result.slope, result.band.0, result.band.1
    );
    Ok(())
}

pub fn overpool(opts: &Options) -> Result<()> {
    let seed = opts.required_seed("overpool")?;
    let models = opts.models(&["constant:0.1"])?;
    let [model] = models.as_slice() else {
        bail!("overpool takes one model, got {}", models.len());
    };
    let n = match opts.n.as_deref() {
        None => 10_000,
        Some([n]) => *n,
        Some(v) => bail!("overpool takes one sample size, got {}", v.len()),
    };
    let spec = OverpoolSpec {
        model: *model,
        n,
        nus: whole_nus(&opts.nus(&[5.0, 10.0, 20.0, 40.0]))?,
        replicates: opts.replicates.unwrap_or(200),
        smoother: opts.smoother(BandwidthChoice::Plugin)?,
        seed,
        execution: execution(opts),
        include_ll: opts.include_ll.unwrap_or(false),
    };
    let rows = overpooling_experiment(&spec)?;
    // λ_N⁻⁵ is the chance a pool tests negative at the interval midpoint.
    for r in rows.iter() {
        if let Some(l) = r.lambda_n.filter(|l| l.powi(-5) < OVERPOOL_NEGATIVE_FLOOR) {
            warn!(
                "event=overpooled cell=\"{}\" lambda_n={l} pool_negative_probability={}",
                r.cell.key(),
                l.powi(-5)
            );
        }
    }
    let out = opts.out_dir()?;
    let mut written = Vec::new();
    for f in opts.formats()? {
        let path = match f {
            Format::Csv => {
                let p = out.join("overpool.csv");
                write_overpool_csv(&rows, &p)?;
                p
            }
            Format::Json => {
                let p = out.join("overpool.json");
                write_json(&rows, "overpool", &p)?;
                p
            }
        };
        written.push(path);
    }
    report(&written);
    Ok(())
}

pub fn diagnostics(opts: &Options) -> Result<()> {
    let kernel = opts.kernel()?;
    let grid_spec = opts.grid.unwrap_or(DEFAULT_GRID);
    let rows: Vec<DiagnosticsRow> = match (&opts.input, &opts.model) {
        (Some(_), Some(_)) => {
            bail!("diagnostics takes either --input (data mode) or --model, not both")
        }
        (None, None) => bail!("diagnostics needs --input or --model"),
        (None, Some(_)) => {
            let models = opts.models(&[])?;
            let [model] = models.as_slice() else {
                bail!("diagnostics takes one model, got {}", models.len());
            };
            let nu = opts.single_nu()?.context("model diagnostics need --nu")?;
            let n = match opts.n.as_deref() {
                Some([n]) => *n as f64,
                _ => bail!("model diagnostics need a single --n"),
            };
            let Some(BandwidthChoice::Fixed(h)) = opts.bandwidth else {
                bail!("model diagnostics need --bandwidth fixed:H");
            };
            grid_spec
                .axis(model.ise_interval())
                .into_iter()
                .map(|x| DiagnosticsRow::new(x, asymptotic_diagnostics(model, kernel, nu, n, h, x)))
                .collect()
        }
        (Some(path), None) => match read_input(path)? {
            Input::Pooled(pooled) => {
                let covs = pooled
                    .groups
                    .iter()
                    .flat_map(|g| g.member_covariates.iter().copied());
                let grid = grid_spec.axis(range(covs));
                let h = match opts.bandwidth {
                    Some(BandwidthChoice::Fixed(h)) => h,
                    _ => {
                        let spec = opts.smoother(default_rule(opts, pooled.dim))?;
                        estimate_dh(&pooled, &spec, &grid)?.bandwidth_used
                    }
                };
                info!("event=diagnostics mode=pooled bandwidth={h}");
                grid.iter()
                    .zip(pooled_data_diagnostics(&pooled, kernel, h, &grid)?)
                    .map(|(&x, r)| DiagnosticsRow::new(x, r))
                    .collect()
            }
            Input::Individual(raw) => {
                if !raw.has_responses() {
                    bail!(
                        "{} has no y column; diagnostics need individual outcomes",
                        path.display()
                    );
                }
                let nu = opts.single_nu()?.context(
                    "diagnostics on individual records need --nu (the pool size to evaluate)",
                )?;
                let grid = grid_spec.axis(range(raw.covariates().iter().copied()));
                let h = match opts.bandwidth {
                    Some(BandwidthChoice::Fixed(h)) => h,
                    _ => {
                        let spec = opts.smoother(default_rule(opts, raw.dim()))?;
                        estimate_ll(&raw, &spec, &grid)?.bandwidth_used
                    }
                };
                info!("event=diagnostics mode=individual bandwidth={h}");
                grid.iter()
                    .zip(individual_data_diagnostics(&raw, kernel, nu, h, &grid)?)
                    .map(|(&x, r)| DiagnosticsRow::new(x, r))
                    .collect()
            }
        },
    };
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        warn!("event=diagnostics_undefined points={failed}");
    }
    report(&emit_diagnostics(
        &rows,
        &opts.formats()?,
        &opts.out_dir()?,
        "diagnostics",
    )?);
    Ok(())
}
