//! One function per subcommand, plus the comparison pipeline they share
//! with library callers.

use std::path::Path;
use std::thread;

use yodo_core::baseline::{sweep_point_config, train_fixed};
use yodo_core::checkpoint::{encode_fixed, encode_subspace, SavedModel};
use yodo_core::data::FeatureEncoder;
use yodo_core::eval::{evaluate_fixed, format_report, format_sig9, MetricsRecord};
use yodo_core::{
    alpha_sweep, frontier_gap, pareto, synth_biased, train_yodo_with, Dataset, EpochStats, FairnessField, FixedModel,
    ParetoFrontier, SubspaceModel, SynthParams, TrainConfig, TrainMeta,
};

use crate::cli::{CompareArgs, SweepArgs, SynthArgs, TrainFixedArgs, TrainYodoArgs};
use crate::error::{Error, Result};
use crate::io::{self, Prepared};
use crate::timing::timed;

pub fn synth(args: &SynthArgs) -> Result<()> {
    let ds = synth_biased(&SynthParams {
        n: args.n,
        d: args.d,
        group_fraction: args.group_fraction,
        base_rate_gap: args.gap,
        noise: args.noise,
        seed: args.seed,
    })?;
    io::write_dataset_csv(&ds, &args.out)?;
    eprintln!("wrote {} rows to {}", ds.len(), args.out.display());
    Ok(())
}

fn log_epoch(total: usize) -> impl FnMut(&EpochStats) {
    move |s| {
        eprintln!(
            "epoch {}/{total} ce={:.6} fairness={:.6} reg={:.6} fairness_skips={}",
            s.epoch + 1,
            s.mean_ce,
            s.mean_fairness,
            s.reg,
            s.fairness_skips
        )
    }
}

fn warn_skips(meta: &TrainMeta) {
    if meta.skip_warning() {
        eprintln!(
            "warning: {} of {} batches lacked a sensitive group and trained without the fairness term",
            meta.fairness_skips, meta.batches
        );
    }
}

fn load_prepared(data: &crate::cli::DataArgs, seed: u64) -> Result<Prepared> {
    let table = io::read_table(&data.data)?;
    io::prepare(&table, &data.schema(), data.test_fraction, seed)
}

fn write_test_rows(prep: &Prepared, path: Option<&Path>) -> Result<()> {
    if let Some(p) = path {
        io::write_table(&prep.test_rows, p)?;
        eprintln!("wrote {} held-out rows to {}", prep.test_rows.rows.len(), p.display());
    }
    Ok(())
}

pub fn train_yodo(args: &TrainYodoArgs) -> Result<()> {
    let config = args.config();
    let prep = load_prepared(&args.data, config.seed)?;
    let mut model = train_yodo_with(&prep.train, &config, log_epoch(config.epochs))?;
    warn_skips(&model.meta);
    model.meta.extra.extend(prep.encoder.to_meta());
    io::save_checkpoint(&encode_subspace(&model)?, &args.out)?;
    eprintln!("saved subspace checkpoint to {}", args.out.display());
    write_test_rows(&prep, args.test_out.as_deref())
}

pub fn train_fixed_cmd(args: &TrainFixedArgs) -> Result<()> {
    let config = args.train.config();
    let prep = load_prepared(&args.data, config.seed)?;
    let mut model =
        yodo_core::train_fixed_with(&prep.train, &config, config.fairness_weight, log_epoch(config.epochs))?;
    warn_skips(&model.meta);
    model.meta.extra.extend(prep.encoder.to_meta());
    io::save_checkpoint(&encode_fixed(&model)?, &args.out)?;
    eprintln!("saved fixed checkpoint to {}", args.out.display());
    write_test_rows(&prep, args.test_out.as_deref())
}

fn stored_encoder(meta: &TrainMeta, path: &Path) -> Result<FeatureEncoder> {
    FeatureEncoder::from_meta(&meta.extra)?.ok_or_else(|| {
        Error::Core(yodo_core::Error::Checkpoint(format!(
            "{} carries no feature encoder",
            path.display()
        )))
    })
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    let model = io::load_checkpoint(&args.checkpoint)?;
    let table = io::read_table(&args.test)?;
    let records = match &model {
        SavedModel::Subspace(m) => {
            let test = stored_encoder(&m.meta, &args.checkpoint)?.transform(&table)?;
            alpha_sweep(m, &test, &args.grid.0)?
        }
        SavedModel::Fixed(m) => {
            let test = stored_encoder(&m.meta, &args.checkpoint)?.transform(&table)?;
            vec![evaluate_fixed(m, &test)?]
        }
    };
    io::write_output(&format_report(&records), args.out.as_deref())
}

/// Everything a comparison report shows.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub yodo_records: Vec<MetricsRecord>,
    pub fixed_records: Vec<MetricsRecord>,
    pub yodo_frontier: ParetoFrontier,
    pub fixed_frontier: ParetoFrontier,
    /// `None` when the frontiers share no error-rate range.
    pub frontier_gap: Option<f64>,
    /// Subspace training time over the mean fixed-model training time;
    /// `None` when the subspace model was loaded rather than trained.
    pub time_ratio: Option<f64>,
}

/// Trains one fixed model per grid value on `jobs` threads. Results come
/// back in grid order with each run's wall time; seeds follow the grid
/// index, so the models do not depend on `jobs`.
pub fn train_fixed_grid(
    train: &Dataset,
    config: &TrainConfig,
    grid: &[f64],
    jobs: usize,
) -> Result<Vec<(FixedModel, f64)>> {
    let jobs = jobs.clamp(1, grid.len().max(1));
    let run = |i: usize| {
        let (m, t) = timed(|| train_fixed(train, &sweep_point_config(config, i), grid[i]));
        m.map(|m| (m, t))
    };
    let mut results: Vec<(usize, yodo_core::Result<(FixedModel, f64)>)> = if jobs == 1 {
        (0..grid.len()).map(|i| (i, run(i))).collect()
    } else {
        thread::scope(|scope| {
            let workers: Vec<_> = (0..jobs)
                .map(|w| {
                    let run = &run;
                    scope.spawn(move || (w..grid.len()).step_by(jobs).map(|i| (i, run(i))).collect::<Vec<_>>())
                })
                .collect();
            workers
                .into_iter()
                .flat_map(|h| h.join().expect("training worker panicked"))
                .collect()
        })
    };
    results.sort_by_key(|(i, _)| *i);
    results.into_iter().map(|(_, r)| r.map_err(Error::from)).collect()
}

/// Sweeps `yodo` over `alpha_grid` and trains the fixed grid, all evaluated on `test`.
#[allow(clippy::too_many_arguments)]
pub fn compare_models(
    yodo: &SubspaceModel,
    yodo_time: Option<f64>,
    train: &Dataset,
    test: &Dataset,
    a_grid: &[f64],
    alpha_grid: &[f64],
    field: FairnessField,
    jobs: usize,
) -> Result<Comparison> {
    let mut yodo_records = alpha_sweep(yodo, test, alpha_grid)?;
    for r in &mut yodo_records {
        r.wall_time_s = yodo_time;
    }
    let fixed = train_fixed_grid(train, &yodo.meta.config, a_grid, jobs)?;
    let mut fixed_records = Vec::with_capacity(fixed.len());
    let mut fixed_total = 0.0;
    for (m, t) in &fixed {
        fixed_total += t;
        fixed_records.push(MetricsRecord {
            wall_time_s: Some(*t),
            ..evaluate_fixed(m, test)?
        });
    }
    let yodo_frontier = pareto(&yodo_records, field);
    let fixed_frontier = pareto(&fixed_records, field);
    let frontier_gap = match frontier_gap(&yodo_frontier, &fixed_frontier) {
        Ok(g) => Some(g),
        Err(yodo_core::Error::Range(msg)) => {
            eprintln!("warning: no frontier gap: {msg}");
            None
        }
        Err(e) => return Err(e.into()),
    };
    let time_ratio = yodo_time.map(|t| t / (fixed_total / fixed.len() as f64));
    Ok(Comparison {
        yodo_records,
        fixed_records,
        yodo_frontier,
        fixed_frontier,
        frontier_gap,
        time_ratio,
    })
}

/// Plain-text report: summary lines, then the four tables as report CSV
/// under `[section]` headings.
pub fn format_comparison(c: &Comparison, omit_timing: bool) -> String {
    let strip = |records: &[MetricsRecord]| -> Vec<MetricsRecord> {
        records
            .iter()
            .map(|r| MetricsRecord {
                wall_time_s: if omit_timing { None } else { r.wall_time_s },
                ..r.clone()
            })
            .collect()
    };
    let opt = |v: Option<f64>| v.map(format_sig9).unwrap_or_default();
    let time_ratio = if omit_timing { None } else { c.time_ratio };
    let mut out = format!(
        "frontier_gap={}\ntime_ratio={}\nfrontier_metric={}\n",
        opt(c.frontier_gap),
        opt(time_ratio),
        c.yodo_frontier.field.name()
    );
    for (name, records) in [
        ("yodo_frontier", &c.yodo_frontier.points),
        ("fixed_frontier", &c.fixed_frontier.points),
        ("yodo_sweep", &c.yodo_records),
        ("fixed_sweep", &c.fixed_records),
    ] {
        out.push_str(&format!("\n[{name}]\n"));
        out.push_str(&format_report(&strip(records)));
    }
    out
}

pub fn compare(args: &CompareArgs) -> Result<()> {
    let table = io::read_table(&args.data.data)?;
    let (prep, yodo, yodo_time) = match &args.yodo_checkpoint {
        Some(path) => {
            let SavedModel::Subspace(model) = io::load_checkpoint(path)? else {
                return Err(Error::Usage(format!("{} is not a subspace checkpoint", path.display())));
            };
            let encoder = stored_encoder(&model.meta, path)?;
            let schema = encoder.schema.clone();
            let prep = io::prepare_with(&table, schema, args.data.test_fraction, args.train.seed, Some(encoder))?;
            eprintln!("loaded subspace model from {}; time ratio unavailable", path.display());
            (prep, model, None)
        }
        None => {
            let config = TrainConfig {
                beta: args.beta,
                ..args.train.config()
            };
            let prep = io::prepare(&table, &args.data.schema(), args.data.test_fraction, config.seed)?;
            let (model, t) = timed(|| train_yodo_with(&prep.train, &config, log_epoch(config.epochs)));
            let model = model?;
            warn_skips(&model.meta);
            (prep, model, Some(t))
        }
    };
    eprintln!("training {} fixed-penalty models", args.a_grid.0.len());
    let c = compare_models(
        &yodo,
        yodo_time,
        &prep.train,
        &prep.test,
        &args.a_grid.0,
        &args.alpha_grid.0,
        args.frontier_metric,
        args.jobs,
    )?;
    io::write_output(&format_comparison(&c, args.omit_timing), args.out.as_deref())
}
