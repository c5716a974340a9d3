use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use weighted_conformal::conformal::{
    full_conformal, split_conformal, weighted_full_conformal, weighted_split_conformal, GridSet,
    SplitInterval, YGrid,
};
use weighted_conformal::harness::validate::run_validation;
use weighted_conformal::harness::{
    emit_report, ingest_covariates, ingest_csv_with, run_experiment_on, summarize,
    threads_from_env, write_report, DataSource, ExperimentConfig, HeteroskedasticModel,
    IngestOptions, ReportFormat, ResponseColumn,
};
use weighted_conformal::localcov::{local_conformal, Kernel};
use weighted_conformal::scores::{fit_linear, ScoreFn};
use weighted_conformal::shiftweights::{fit_logistic, Clip, ProbabilisticClassifier, WeightFn};
use weighted_conformal::{Covariates, Dataset};

use crate::{
    BandArgs, EstimateArgs, LocalBandArgs, SimulateArgs, SplitBandArgs, TableArgs, ValidateArgs,
    WeightArgs, WeightedBandArgs,
};

fn ingest_options(table: &TableArgs) -> Result<IngestOptions> {
    ensure!(table.delimiter.is_ascii(), "delimiter must be a single ASCII character");
    Ok(IngestOptions {
        response: ResponseColumn::Last,
        delimiter: table.delimiter as u8,
        has_header: !table.no_header,
    })
}

fn read_data(path: &Path, table: &TableArgs) -> Result<Dataset> {
    ingest_csv_with(path, &ingest_options(table)?)
        .with_context(|| format!("reading {}", path.display()))
}

struct Query {
    x: Covariates,
    y: Option<Vec<f64>>,
}

/// A query table has either `dim` covariate columns or `dim + 1` columns
/// with the response last.
fn read_query(path: &Path, dim: usize) -> Result<Query> {
    let (table, _) =
        ingest_covariates(path).with_context(|| format!("reading {}", path.display()))?;
    let width = table.dim();
    if width == dim {
        return Ok(Query { x: table, y: None });
    }
    ensure!(
        width == dim + 1,
        "{} has {width} columns; expected {dim} covariates, optionally followed by a response",
        path.display()
    );
    let mut x = Vec::with_capacity(table.len() * dim);
    let mut y = Vec::with_capacity(table.len());
    for row in table.rows() {
        x.extend_from_slice(&row[..dim]);
        y.push(row[dim]);
    }
    Ok(Query {
        x: Covariates::new(x, dim)?,
        y: Some(y),
    })
}

fn read_shift_weight(args: &WeightArgs, train: &Covariates) -> Result<Option<WeightFn>> {
    if let Some(beta) = &args.tilt {
        ensure!(
            beta.len() == train.dim(),
            "tilt has {} coefficients but the data has {} covariates",
            beta.len(),
            train.dim()
        );
        return Ok(Some(WeightFn::OracleTilt(beta.clone())));
    }
    let Some(path) = &args.shift else {
        return Ok(None);
    };
    let (shift, _) =
        ingest_covariates(path).with_context(|| format!("reading {}", path.display()))?;
    ensure!(
        shift.dim() == train.dim(),
        "{} has {} columns but the data has {} covariates",
        path.display(),
        shift.dim(),
        train.dim()
    );
    let clf = fit_logistic(train, &shift)?;
    if clf.separable() {
        eprintln!("warning: the classes are separable; weights rely on clipping");
    }
    Ok(Some(WeightFn::estimated(clf, Clip::new(args.clip_lo, args.clip_hi)?)))
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn covered_field(y: Option<f64>, inside: impl FnOnce(f64) -> bool) -> (String, String) {
    match y {
        Some(v) => (v.to_string(), (inside(v) as u8).to_string()),
        None => (String::new(), String::new()),
    }
}

fn write_split_rows(out: &mut dyn Write, query: &Query, intervals: &[SplitInterval]) -> Result<()> {
    writeln!(out, "row,lower,upper,y,covered")?;
    for (i, iv) in intervals.iter().enumerate() {
        let (y, covered) = covered_field(query.y.as_ref().map(|y| y[i]), |v| iv.contains(v));
        writeln!(out, "{i},{},{},{y},{covered}", iv.lower(), iv.upper())?;
    }
    out.flush()?;
    Ok(())
}

fn write_grid_rows(out: &mut dyn Write, query: &Query, sets: &[GridSet]) -> Result<()> {
    writeln!(out, "row,interval,lower,upper,boundary,y,covered")?;
    let mut warned = false;
    for (i, set) in sets.iter().enumerate() {
        let (y, covered) = covered_field(query.y.as_ref().map(|y| y[i]), |v| set.contains(v));
        let boundary = set.touches_boundary() as u8;
        if set.touches_boundary() && !warned {
            eprintln!("warning: some bands reach the grid edge; widen it with --grid-lo/--grid-hi");
            warned = true;
        }
        if set.is_empty() {
            writeln!(out, "{i},,,,{boundary},{y},{covered}")?;
        }
        for (k, (lo, hi)) in set.intervals().iter().enumerate() {
            writeln!(out, "{i},{k},{lo},{hi},{boundary},{y},{covered}")?;
        }
    }
    out.flush()?;
    Ok(())
}

fn grid_for(args: &BandArgs, train: &Dataset) -> Result<YGrid> {
    Ok(match (args.grid_lo, args.grid_hi) {
        (Some(lo), Some(hi)) => YGrid::new(lo, hi, args.grid)?,
        _ => YGrid::spanning(train.y(), args.grid)?,
    })
}

fn run_bands<F>(args: &BandArgs, band: F) -> Result<()>
where
    F: Fn(&Dataset, &[f64], &YGrid, &ScoreFn, f64) -> weighted_conformal::Result<GridSet>,
{
    let train = read_data(&args.train, &args.table)?;
    let query = read_query(&args.query, train.dim())?;
    let grid = grid_for(args, &train)?;
    let score = ScoreFn::refit_least_squares();
    let sets = query
        .x
        .rows()
        .enumerate()
        .map(|(i, x)| {
            band(&train, x, &grid, &score, args.alpha).with_context(|| format!("query row {i}"))
        })
        .collect::<Result<Vec<_>>>()?;
    write_grid_rows(&mut *output(&args.out)?, &query, &sets)
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let (source, dim) = match (&args.data, args.synthetic) {
        (Some(path), _) => {
            let data = read_data(path, &args.table)?;
            let dim = data.dim();
            (DataSource::Fixed(data), dim)
        }
        (None, Some(pool_size)) => {
            let model = HeteroskedasticModel::new(args.dim, 0.5)?;
            (DataSource::Synthetic { model, pool_size }, args.dim)
        }
        (None, None) => bail!("pass --data or --synthetic"),
    };
    let defaults = ExperimentConfig::default();
    let tilt = match args.tilt {
        Some(t) => t,
        None if args.synthetic.is_some() => {
            let mut t = vec![0.0; dim];
            t[0] = 1.0;
            t
        }
        None if defaults.tilt.len() == dim => defaults.tilt.clone(),
        None => bail!("--tilt is required for data with {dim} covariates"),
    };
    ensure!(
        tilt.len() == dim,
        "tilt has {} coefficients but the data has {dim} covariates",
        tilt.len()
    );
    let mut methods = args.methods;
    methods.sort();
    methods.dedup();
    let config = ExperimentConfig {
        trials: args.trials,
        alpha: args.alpha,
        shift_fraction: args.shift_fraction,
        tilt,
        methods,
        seed: args.seed,
        ..defaults
    };
    let reports = run_experiment_on(&config, &source, threads_from_env())?;
    match &args.out {
        Some(path) => {
            let format = args.format.unwrap_or_else(|| ReportFormat::from_path(path));
            emit_report(&config, &reports, format, path)
                .with_context(|| format!("writing {}", path.display()))?;
        }
        None => write_report(
            &config,
            &reports,
            args.format.unwrap_or(ReportFormat::Csv),
            io::stdout().lock(),
        )?,
    }
    eprintln!("method     test   trials  coverage (sd)       mean median length");
    for s in summarize(&reports) {
        eprintln!(
            "{:<10} {:<6} {:>6}  {:.4} ({:.4})    {:.4}",
            s.method.to_string(),
            s.test_set.to_string(),
            s.trials,
            s.mean_coverage,
            s.sd_coverage,
            s.mean_median_length
        );
    }
    Ok(())
}

pub fn split_band(args: SplitBandArgs) -> Result<()> {
    let fit = read_data(&args.fit, &args.table)?;
    let cal = read_data(&args.calibration, &args.table)?;
    ensure!(
        fit.dim() == cal.dim(),
        "fit and calibration data have different covariate counts"
    );
    let mu0 = fit_linear(&fit)?;
    let query = read_query(&args.query, cal.dim())?;
    let weight = read_shift_weight(&args.weights, cal.x())?;
    let intervals = query
        .x
        .rows()
        .map(|x| match &weight {
            Some(w) => weighted_split_conformal(&cal, &mu0, x, args.alpha, w),
            None => split_conformal(&cal, &mu0, x, args.alpha),
        })
        .collect::<weighted_conformal::Result<Vec<_>>>()?;
    write_split_rows(&mut *output(&args.out)?, &query, &intervals)
}

pub fn full_band(args: BandArgs) -> Result<()> {
    run_bands(&args, full_conformal)
}

pub fn weighted_band(args: WeightedBandArgs) -> Result<()> {
    let train = read_data(&args.band.train, &args.band.table)?;
    let Some(w) = read_shift_weight(&args.weights, train.x())? else {
        bail!("pass --tilt or --shift to define the weights");
    };
    run_bands(&args.band, |train, x, grid, score, alpha| {
        weighted_full_conformal(train, x, grid, score, alpha, &w)
    })
}

pub fn local_band(args: LocalBandArgs) -> Result<()> {
    let kernel = Kernel::new(args.kernel, args.bandwidth)?;
    let center = args.center;
    run_bands(&args.band, |train, x, grid, score, alpha| {
        local_conformal(train, &center, x, grid, score, alpha, &kernel)
    })
}

pub fn estimate_weights(args: EstimateArgs) -> Result<()> {
    let (train, _) = ingest_covariates(&args.train)
        .with_context(|| format!("reading {}", args.train.display()))?;
    let (test, _) = ingest_covariates(&args.test)
        .with_context(|| format!("reading {}", args.test.display()))?;
    ensure!(
        train.dim() == test.dim(),
        "train and test tables have different column counts"
    );
    let clip = Clip::new(args.clip_lo, args.clip_hi)?;
    let clf = fit_logistic(&train, &test)?;
    eprintln!(
        "logistic fit: {} iterations, converged {}, separable {}",
        clf.iterations(),
        clf.converged(),
        clf.separable()
    );
    let mut out = output(&args.out)?;
    writeln!(out, "set,row,prob,weight")?;
    for (name, table) in [("train", &train), ("test", &test)] {
        for (i, x) in table.rows().enumerate() {
            let p = clf.probability(x);
            writeln!(out, "{name},{i},{p},{}", clip.odds(p))?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn validate(args: ValidateArgs) -> Result<()> {
    let checks = run_validation(args.seed, args.quick)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&checks)?);
    } else {
        for c in &checks {
            println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    ensure!(failed == 0, "{failed} of {} checks failed", checks.len());
    Ok(())
}

