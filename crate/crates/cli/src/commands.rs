use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use shadowtail::calibrate::{calibrate_lambda, CalibrationConfig, CalibrationResult, DEFAULT_RANKS};
use shadowtail::dataset::{load_snapshot, SectorClassifier, Snapshot};
use shadowtail::export::{self, SeriesRow};
use shadowtail::kernelreg::{nw_regress, returns_on_assets, size_transition_points, Bandwidth};
use shadowtail::prgsim::{simulate_replica, SimConfig};
use shadowtail::sbindex::compute_index;
use shadowtail::tailfit::{empirical_ccdf, fit_pareto, suggest_range, ParetoFit};

use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::{Cli, CliError, Command, RangeArgs, SectorArg, SnapshotArgs};

type Result<T> = std::result::Result<T, CliError>;

/// Billions to trillions.
const TRILLIONS: f64 = 1e-3;

struct Ctx {
    out: PathBuf,
    dry_run: bool,
    strict: bool,
    classifier: SectorClassifier,
    manifest: RunManifest,
}

impl Ctx {
    fn output(&mut self, name: &str, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let path = self.out.join(name);
        let file = File::create(&path).map_err(|source| CliError::Output {
            path: path.clone(),
            source,
        })?;
        let mut w = BufWriter::new(file);
        write(&mut w)?;
        w.flush().map_err(|source| CliError::Output {
            path: path.clone(),
            source,
        })?;
        self.manifest.outputs.push(path);
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value).expect("output serialises");
        self.output(name, |w| {
            writeln!(w, "{text}").map_err(|source| CliError::Output {
                path: name.into(),
                source,
            })
        })
    }

    fn snapshot(&mut self, path: &Path, year: Option<i32>) -> Result<Snapshot> {
        let year = match year {
            Some(y) => y,
            None => year_from_path(path)?,
        };
        self.manifest.inputs.push(path.to_path_buf());
        let loaded = load_snapshot(path, year)?;
        for r in &loaded.rejected {
            self.manifest
                .warnings
                .push(format!("{}:{}: skipped row: {}", path.display(), r.line, r.reason));
        }
        if self.strict {
            for f in loaded.snapshot.firms() {
                self.classifier.classify_strict(&f.industry)?;
            }
        }
        Ok(loaded.snapshot)
    }

    fn sector(&self, s: &Snapshot, sector: SectorArg) -> Result<Snapshot> {
        match sector {
            SectorArg::All => Ok(s.clone()),
            SectorArg::Financial => {
                s.filter(|f| self.classifier.is_financial(f))
                    .ok_or(CliError::Core(shadowtail::Error::EmptyInput(
                        "no financial firms in snapshot",
                    )))
            }
        }
    }
}

/// First run of four digits in the file name.
fn year_from_path(path: &Path) -> Result<i32> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let bytes = name.as_bytes();
    (0..bytes.len().saturating_sub(3))
        .find(|&i| {
            bytes[i..i + 4].iter().all(u8::is_ascii_digit)
                && !bytes.get(i + 4).is_some_and(u8::is_ascii_digit)
                && (i == 0 || !bytes[i - 1].is_ascii_digit())
        })
        .and_then(|i| name[i..i + 4].parse().ok())
        .ok_or_else(|| CliError::Usage(format!("cannot tell the list year of {}; pass --year", path.display())))
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "snake_case")]
enum RangeSource {
    Given,
    Suggested,
}

fn fit_snapshot(s: &Snapshot, range: &RangeArgs) -> Result<(ParetoFit, RangeSource, Vec<f64>)> {
    let sizes = s.sizes_desc();
    let points = empirical_ccdf(&sizes)?;
    let (lo, hi, source) = match (range.smin, range.smax) {
        (Some(lo), Some(hi)) => (lo, hi, RangeSource::Given),
        (None, None) => {
            let (lo, hi) = suggest_range(&points, range.max_rms)?;
            (lo, hi, RangeSource::Suggested)
        }
        _ => return Err(CliError::Usage("give both --smin and --smax, or neither".into())),
    };
    Ok((fit_pareto(&points, lo, hi)?, source, sizes))
}

pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || CliError::Usage(format!("invalid --grid {spec:?}; use start:end[:step] or a comma list"));
    let num = |t: &str| t.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad);
    let grid: Vec<f64> = if spec.contains(':') {
        let parts: Vec<f64> = spec.split(':').map(num).collect::<Result<_>>()?;
        let (start, end, step) = match parts[..] {
            [a, b] => (a, b, 1.0),
            [a, b, c] => (a, b, c),
            _ => return Err(bad()),
        };
        if !(step > 0.0) || end < start {
            return Err(bad());
        }
        let n = ((end - start) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| start + step * i as f64).collect()
    } else {
        spec.split(',').map(num).collect::<Result<_>>()?
    };
    if grid.is_empty() || grid.iter().any(|&l| l < 0.0) {
        return Err(bad());
    }
    Ok(grid)
}

/// Observed sizes from a `rank,size` file or a snapshot CSV, descending.
fn read_observed(ctx: &mut Ctx, path: &Path) -> Result<Vec<f64>> {
    let mut head = String::new();
    File::open(path)
        .and_then(|f| f.take(4096).read_to_string(&mut head))
        .map_err(|e| {
            CliError::Core(shadowtail::Error::Io {
                path: path.to_path_buf(),
                source: e,
            })
        })?;
    let header = head.lines().next().unwrap_or_default().to_ascii_lowercase();
    if header.split(',').any(|c| c.trim() == "size") {
        ctx.manifest.inputs.push(path.to_path_buf());
        let file = File::open(path).map_err(|e| {
            CliError::Core(shadowtail::Error::Io {
                path: path.to_path_buf(),
                source: e,
            })
        })?;
        Ok(export::read_size_rank(file)?)
    } else {
        let year = year_from_path(path).unwrap_or(0);
        Ok(ctx.snapshot(path, Some(year))?.sizes_desc())
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let seed = g.seed.unwrap_or_else(rand::random);
    let classifier = match &g.classifier {
        Some(p) => SectorClassifier::from_file(p)?,
        None => SectorClassifier::default(),
    };
    std::fs::create_dir_all(&g.out).map_err(|source| CliError::Output {
        path: g.out.clone(),
        source,
    })?;
    let name = cli.command.name();
    let mut ctx = Ctx {
        out: g.out.clone(),
        dry_run: g.dry_run,
        strict: g.strict,
        classifier,
        manifest: RunManifest::new(name, seed, g.seed.is_some(), g.dry_run),
    };
    if let Some(p) = &g.classifier {
        ctx.manifest.inputs.push(p.clone());
    }
    match &cli.command {
        Command::Fit { input, range } => fit(&mut ctx, input, range)?,
        Command::Index { input, range, ntop } => index(&mut ctx, input, range, *ntop)?,
        Command::Simulate { config, replica } => simulate(&mut ctx, config, *replica, seed)?,
        Command::Calibrate {
            config,
            observed,
            grid,
            replicas,
            epsilon,
            ranks,
        } => calibrate(&mut ctx, config, observed, grid, *replicas, *epsilon, *ranks, seed)?,
        Command::Regress {
            input,
            next,
            next_year,
            bandwidth,
            grid_size,
        } => regress(&mut ctx, input, next.as_deref(), *next_year, bandwidth, *grid_size)?,
        Command::Rankplot { input } => rankplot(&mut ctx, input)?,
        Command::Series {
            snapshots,
            range,
            ntop,
            compare,
        } => series(&mut ctx, snapshots, range, *ntop, compare.as_deref())?,
    }
    ctx.manifest.write(&ctx.out)?;
    Ok(())
}

fn fit(ctx: &mut Ctx, input: &SnapshotArgs, range: &RangeArgs) -> Result<()> {
    ctx.manifest.params = json!({ "snapshot": input, "range": range });
    let snap = ctx.snapshot(&input.snapshot, input.year)?;
    let sub = ctx.sector(&snap, range.sector)?;
    if ctx.dry_run {
        return Ok(());
    }
    let (fit, source, sizes) = fit_snapshot(&sub, range)?;
    ctx.json(
        "fit.json",
        &json!({
            "list_year": snap.list_year(),
            "data_year": snap.data_year(),
            "sector": range.sector,
            "range_source": source,
            "fit": fit,
        }),
    )?;
    let points = empirical_ccdf(&sizes)?;
    ctx.output("ccdf.csv", |w| Ok(export::write_ccdf(w, &points)?))
}

fn index(ctx: &mut Ctx, input: &SnapshotArgs, range: &RangeArgs, ntop: usize) -> Result<()> {
    ctx.manifest.params = json!({ "snapshot": input, "range": range, "ntop": ntop });
    let snap = ctx.snapshot(&input.snapshot, input.year)?;
    let sub = ctx.sector(&snap, range.sector)?;
    if ntop > sub.len() {
        return Err(shadowtail::Error::TopExceedsSize {
            n_top: ntop,
            available: sub.len(),
        }
        .into());
    }
    if ctx.dry_run {
        return Ok(());
    }
    let (fit, source, sizes) = fit_snapshot(&sub, range)?;
    let r = compute_index(&sizes, &fit, ntop)?;
    ctx.json(
        "index.json",
        &json!({
            "list_year": snap.list_year(),
            "data_year": snap.data_year(),
            "sector": range.sector,
            "range_source": source,
            "n_top": r.n_top,
            "i_sb": r.i_sb,
            "band_low": r.band_low,
            "band_high": r.band_high,
            "i_sb_trillions": r.i_sb * TRILLIONS,
            "band_low_trillions": r.band_low * TRILLIONS,
            "band_high_trillions": r.band_high * TRILLIONS,
            "fit": fit,
        }),
    )?;
    ctx.output("rank_gaps.csv", |w| Ok(export::write_rank_gaps(w, &r.per_rank_gap)?))
}

fn load_config(ctx: &mut Ctx, path: &Path) -> Result<RunConfig> {
    ctx.manifest.inputs.push(path.to_path_buf());
    let cfg = RunConfig::load(path)?;
    cfg.params().validate()?;
    cfg.sim(0).validate(&cfg.params())?;
    Ok(cfg)
}

fn simulate(ctx: &mut Ctx, config: &Path, replica: u64, seed: u64) -> Result<()> {
    let cfg = load_config(ctx, config)?;
    ctx.manifest.params = json!({ "config": cfg, "replica": replica });
    let (params, sim) = (cfg.params(), cfg.sim(seed));
    if let Some(w) = sim.relaxation_warning(&params) {
        ctx.manifest.warnings.push(w);
    }
    if ctx.dry_run {
        return Ok(());
    }
    let r = simulate_replica(&params, &sim, replica)?;
    ctx.json(
        "simulate.json",
        &json!({
            "shed_total": r.shed_total,
            "n_events": r.n_events,
            "population": r.population,
            "gamma_theory": params.gamma().ok(),
        }),
    )?;
    ctx.output("size_rank.csv", |w| Ok(export::write_size_rank(w, &r.sizes_top)?))
}

#[derive(Serialize)]
struct CalibrationOutput<'a> {
    #[serde(flatten)]
    result: &'a CalibrationResult,
    n_ranks: usize,
}

#[allow(clippy::too_many_arguments)]
fn calibrate(
    ctx: &mut Ctx,
    config: &Path,
    observed: &Path,
    grid: &str,
    replicas: usize,
    epsilon: Option<f64>,
    ranks: Option<usize>,
    seed: u64,
) -> Result<()> {
    let grid = parse_grid(grid)?;
    let mut cfg = load_config(ctx, config)?;
    if let Some(e) = epsilon {
        cfg.epsilon = e;
    }
    let obs = read_observed(ctx, observed)?;
    let n_ranks = ranks.unwrap_or_else(|| DEFAULT_RANKS.min(cfg.keep_top).min(obs.len()));
    ctx.manifest.params = json!({
        "config": cfg,
        "grid": grid,
        "replicas": replicas,
        "n_ranks": n_ranks,
    });
    let params = cfg.params();
    params.validate()?;
    let sim: SimConfig = cfg.sim(seed);
    for &l in &grid {
        sim.validate(&params.with_lambda(l))?;
    }
    if let Some(w) = sim.relaxation_warning(&params) {
        ctx.manifest.warnings.push(w);
    }
    if ctx.dry_run {
        return Ok(());
    }
    let cal_cfg = CalibrationConfig {
        sim,
        n_replicas: replicas,
        n_ranks,
    };
    let result = calibrate_lambda(&params, &cal_cfg, &obs, &grid)?;
    ctx.json(
        "calibration.json",
        &CalibrationOutput {
            result: &result,
            n_ranks,
        },
    )?;
    ctx.output("objective.csv", |w| {
        Ok(export::write_objective(w, &result.objective_curve)?)
    })
}

fn regress(
    ctx: &mut Ctx,
    input: &SnapshotArgs,
    next: Option<&Path>,
    next_year: Option<i32>,
    bandwidth: &str,
    grid_size: usize,
) -> Result<()> {
    let bw: Bandwidth = bandwidth.parse()?;
    ctx.manifest.params = json!({
        "snapshot": input,
        "next": next,
        "next_year": next_year,
        "bandwidth": bw,
        "grid_size": grid_size,
    });
    let snap = ctx.snapshot(&input.snapshot, input.year)?;
    let (points, dropped, mode) = match next {
        Some(p) => {
            let later = ctx.snapshot(p, next_year)?;
            (size_transition_points(&snap, &later), 0, "size_transition")
        }
        None => {
            let roa = returns_on_assets(&snap)?;
            (roa.points, roa.dropped, "return_on_assets")
        }
    };
    if ctx.dry_run {
        return Ok(());
    }
    let curve = nw_regress(&points, bw, grid_size)?;
    ctx.json(
        "regress.json",
        &json!({
            "mode": mode,
            "n_points": points.len(),
            "dropped": dropped,
            "bandwidth": curve.bandwidth,
        }),
    )?;
    ctx.output("curve.csv", |w| Ok(export::write_curve(w, &curve)?))
}

fn rankplot(ctx: &mut Ctx, input: &SnapshotArgs) -> Result<()> {
    ctx.manifest.params = json!({ "snapshot": input });
    let snap = ctx.snapshot(&input.snapshot, input.year)?;
    if ctx.dry_run {
        return Ok(());
    }
    let classifier = ctx.classifier.clone();
    ctx.output("rank.csv", |w| Ok(export::write_rank_table(w, &snap, &classifier)?))
}

fn series(ctx: &mut Ctx, paths: &[PathBuf], range: &RangeArgs, ntop: usize, compare: Option<&Path>) -> Result<()> {
    ctx.manifest.params = json!({ "snapshots": paths, "range": range, "ntop": ntop, "compare": compare });
    let mut snaps = Vec::with_capacity(paths.len());
    for p in paths {
        let s = ctx.snapshot(p, None)?;
        snaps.push(ctx.sector(&s, range.sector)?);
    }
    snaps.sort_by_key(Snapshot::list_year);
    if let Some(w) = snaps.windows(2).find(|w| w[0].list_year() == w[1].list_year()) {
        return Err(CliError::Usage(format!(
            "two snapshots for list year {}",
            w[0].list_year()
        )));
    }
    let comparison = match compare {
        Some(p) => {
            ctx.manifest.inputs.push(p.to_path_buf());
            let f = File::open(p).map_err(|e| {
                CliError::Core(shadowtail::Error::Io {
                    path: p.to_path_buf(),
                    source: e,
                })
            })?;
            export::read_comparison(f)?
        }
        None => Vec::new(),
    };
    if ctx.dry_run {
        return Ok(());
    }
    let mut rows = Vec::with_capacity(snaps.len());
    for s in &snaps {
        let (fit, _, sizes) = fit_snapshot(s, range)?;
        let r = compute_index(&sizes, &fit, ntop.min(sizes.len()))?;
        rows.push(SeriesRow {
            list_year: s.list_year(),
            data_year: s.data_year(),
            gamma_hat: fit.gamma_hat,
            se_gamma: fit.se_gamma,
            s_minus: fit.s_minus,
            s_plus: fit.s_plus,
            i_sb_trillions: r.i_sb * TRILLIONS,
            band_low_trillions: r.band_low * TRILLIONS,
            band_high_trillions: r.band_high * TRILLIONS,
            // comparison series are indexed by the year the data describe
            compare_trillions: comparison
                .iter()
                .find(|c| c.year == s.data_year())
                .map(|c| c.value_trillions),
        });
    }
    ctx.output("series.csv", |w| Ok(export::write_series(w, &rows)?))
}
