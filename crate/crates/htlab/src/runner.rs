//! The `gen`, `run` and `report` commands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use htlab_core::data::{HTScenario, ToxicityMap};
use htlab_core::eval::{aggregate_seeds, default_k, evaluate, evaluate_scores, EvalReport, Metrics, SeedResult};
use htlab_core::model::{MlpSpec, ModelParams};
use htlab_core::transfer::{pretrain_source, run_protocol, se_predict, wise_merge, Protocol, ProtocolKind, RunOptions};
use htlab_core::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{ExperimentConfig, ScenarioKind, ScenarioSection};
use crate::error::{Error, Result};
use crate::scenario_io::{self, StorageFormat};

pub const CURVES_FILE: &str = "curves.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const REPORT_FILE: &str = "report.json";
pub const STATUS_OK: &str = "ok";
pub const STATUS_FAILED: &str = "FAILED";

/// 17 significant digits, enough to read back the identical double.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(Error::io(path))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(Error::io(path))
}

// ---------------------------------------------------------------- gen

/// Arguments of [`cmd_gen`].
#[derive(Clone, Debug)]
pub struct GenArgs {
    pub scenario: ScenarioSection,
    pub seed: u64,
    pub out: PathBuf,
    pub force: bool,
    pub format: StorageFormat,
}

/// Generates a scenario and writes it to `args.out`. Returns the one-line
/// summary.
pub fn cmd_gen(args: &GenArgs) -> Result<String> {
    if args.scenario.kind == ScenarioKind::Import {
        return Err(Error::Usage("gen needs a synthetic or paired scenario".into()));
    }
    let (scenario, toxicity) = args.scenario.build(args.seed)?;
    scenario_io::prepare_dir(&args.out, args.force)?;
    scenario_io::export_scenario(&args.out, &scenario, toxicity.as_ref(), args.format)?;
    Ok(format!(
        "{} classes ({} seen), dim {}: source_train {}, target_train {}, target_test {} -> {}",
        scenario.num_classes(),
        scenario.seen_classes().len(),
        scenario.dim(),
        scenario.source_train.len(),
        scenario.target_train.len(),
        scenario.target_test.len(),
        args.out.display()
    ))
}

// ---------------------------------------------------------------- run

pub fn curves_header(k: usize) -> Vec<String> {
    let fixed = [
        "scenario_id",
        "protocol",
        "seed",
        "epoch",
        "overall",
        "seen",
        "unseen",
        "seen_chopped",
        "fnr",
        "effective_rank",
    ];
    fixed
        .iter()
        .map(|s| s.to_string())
        .chain((1..=k).map(|i| format!("sv_{i}")))
        .collect()
}

pub const SUMMARY_HEADER: [&str; 10] = [
    "scenario_id",
    "protocol",
    "seed",
    "status",
    "overall",
    "seen",
    "unseen",
    "seen_chopped",
    "fnr",
    "effective_rank",
];

/// Metric columns shared by curve and summary rows.
fn metric_fields(r: &EvalReport, with_rank: bool) -> [String; 6] {
    [
        fmt_float(r.overall_acc),
        fmt_float(r.seen_acc),
        fmt_float(r.unseen_acc),
        fmt_float(r.seen_chopped_acc),
        fmt_opt(r.false_negative_rate),
        if with_rank {
            r.effective_rank.to_string()
        } else {
            String::new()
        },
    ]
}

/// One `curves.csv` record.
pub fn curve_record(scenario_id: &str, protocol: &str, seed: u64, epoch: usize, r: &EvalReport, k: usize) -> Vec<String> {
    let mut row = vec![scenario_id.to_string(), protocol.to_string(), seed.to_string(), epoch.to_string()];
    row.extend(metric_fields(r, true));
    let sv = r.spectrum.values();
    row.extend((0..k).map(|i| sv.get(i).copied().map(fmt_float).unwrap_or_default()));
    row
}

fn summary_record(scenario_id: &str, protocol: &str, seed: u64, r: Option<(&EvalReport, bool)>) -> Vec<String> {
    let mut row = vec![scenario_id.to_string(), protocol.to_string(), seed.to_string()];
    match r {
        Some((r, with_rank)) => {
            row.push(STATUS_OK.into());
            row.extend(metric_fields(r, with_rank));
        }
        None => {
            row.push(STATUS_FAILED.into());
            row.extend(std::iter::repeat_n(String::new(), 6));
        }
    }
    row
}

fn records_to_csv(records: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in records {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::Usage(e.to_string()))
}

/// Per-seed inputs shared by all protocols of that seed.
struct SeedContext {
    scenario: HTScenario,
    toxicity: Option<ToxicityMap>,
    source: ModelParams,
}

fn source_path(out: &Path, seed: u64) -> PathBuf {
    out.join("sources").join(format!("seed-{seed}.ckpt"))
}

/// Loads the cached source model for `seed` if it was trained under the
/// same settings, otherwise trains and caches it.
fn prepare_seed(cfg: &ExperimentConfig, spec: &MlpSpec, seed: u64) -> Result<SeedContext> {
    let (scenario, toxicity) = cfg.scenario.build(seed)?;
    let path = source_path(&cfg.output_dir, seed);
    let fingerprint = cfg.source_fingerprint(seed);
    let cached = match checkpoint::load(&path) {
        Ok((params, header)) if header.fingerprint == fingerprint && params.spec() == spec => Some(params),
        _ => None,
    };
    let source = match cached {
        Some(p) => p,
        None => {
            let p = pretrain_source(&scenario.source_train, spec, &cfg.source.sgd(), &Rng::new(seed, 1))?;
            checkpoint::save(&path, &p, &fingerprint)?;
            p
        }
    };
    Ok(SeedContext {
        scenario,
        toxicity,
        source,
    })
}

struct CellOutput {
    curves: Vec<Vec<String>>,
    summary: Vec<Vec<String>>,
}

struct Cell<'a> {
    index: usize,
    protocol: &'a Protocol,
    seed: u64,
}

impl Cell<'_> {
    fn stem(&self) -> String {
        format!("{:03}-{}-seed{}", self.index, self.protocol.name(), self.seed)
    }
}

fn run_cell(cfg: &ExperimentConfig, ctx: &SeedContext, cell: &Cell<'_>, k: usize) -> Result<CellOutput> {
    let id = cfg.scenario_id();
    let view = ctx.scenario.target_view(ctx.toxicity.as_ref());
    let opts = RunOptions {
        scenario_id: id.clone(),
        retain_checkpoints: cfg.retain_checkpoints,
        k_spectrum: k,
    };
    let run = run_protocol(&view, &ctx.source, cell.protocol, cell.seed, &opts)?;
    let name = cell.protocol.name();
    let curves = run
        .curve
        .iter()
        .enumerate()
        .map(|(e, r)| curve_record(&id, name, cell.seed, e, r, k))
        .collect();
    let last = run.curve.last().expect("curve holds epoch 0");
    let mut summary = vec![summary_record(&id, name, cell.seed, Some((last, true)))];
    if cell.protocol.kind != ProtocolKind::SourceOnly {
        let test = view.test;
        for &alpha in &cfg.ensemble_alphas {
            let probs = se_predict(&run.source_params, &run.final_params, test.features(), alpha)?;
            let se = evaluate_scores(&probs, test.labels(), view.seen_mask, view.toxicity)?;
            summary.push(summary_record(&id, &format!("{name}+SE@{alpha}"), cell.seed, Some((&se, false))));
            let merged = wise_merge(&run.source_params, &run.final_params, alpha)?;
            let wise = evaluate(&merged, test, view.seen_mask, view.toxicity, k)?;
            summary.push(summary_record(&id, &format!("{name}+WiSE@{alpha}"), cell.seed, Some((&wise, true))));
        }
    }
    if let Some(ckpts) = &run.checkpoints {
        let dir = cfg.output_dir.join("checkpoints").join(cell.stem());
        create_dir(&dir)?;
        for (e, p) in ckpts.iter().enumerate() {
            checkpoint::save(&dir.join(format!("epoch-{e:03}.ckpt")), p, &cell.stem())?;
        }
    }
    Ok(CellOutput { curves, summary })
}

/// Outcome of [`cmd_run`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunSummary {
    pub cells: usize,
    pub failed: Vec<String>,
    pub out_dir: PathBuf,
}

/// Spectrum length written to `curves.csv` for this configuration.
pub fn spectrum_k(cfg: &ExperimentConfig, spec: &MlpSpec) -> usize {
    let width = spec.layer_widths[spec.layer_widths.len() - 2];
    cfg.k_spectrum.unwrap_or_else(|| default_k(width))
}

/// Runs every (protocol, seed) cell on up to `jobs` threads and writes
/// `curves.csv` and `summary.csv` under the output directory.
///
/// Configuration problems are returned as errors before any training.
/// Failed cells do not abort the others; they get a `FAILED` summary row
/// and are listed in the returned summary.
pub fn cmd_run(cfg: &ExperimentConfig, jobs: usize) -> Result<RunSummary> {
    let protocols = cfg.build_protocols()?;
    let (probe, _) = cfg.scenario.build(cfg.seeds[0])?;
    let spec = cfg.model.spec(probe.dim(), probe.num_classes())?;
    for p in &protocols {
        p.validate(&spec)?;
    }
    let k = spectrum_k(cfg, &spec);
    let out = &cfg.output_dir;
    let cells_dir = out.join("cells");
    if cells_dir.exists() {
        fs::remove_dir_all(&cells_dir).map_err(Error::io(&cells_dir))?;
    }
    create_dir(&cells_dir)?;
    create_dir(&out.join("sources"))?;
    write_file(&out.join("config.toml"), cfg.to_toml().as_bytes())?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Usage(e.to_string()))?;
    let contexts: Vec<Result<SeedContext>> =
        pool.install(|| cfg.seeds.par_iter().map(|&s| prepare_seed(cfg, &spec, s)).collect());

    let cells: Vec<Cell<'_>> = protocols
        .iter()
        .enumerate()
        .flat_map(|(index, protocol)| cfg.seeds.iter().map(move |&seed| Cell { index, protocol, seed }))
        .collect();
    let seed_pos: BTreeMap<u64, usize> = cfg.seeds.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let outcomes: Vec<std::result::Result<(), String>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let ctx = contexts[seed_pos[&cell.seed]].as_ref().map_err(|e| format!("source model: {e}"))?;
                let stem = cells_dir.join(cell.stem());
                let result = run_cell(cfg, ctx, cell, k).and_then(|o| {
                    write_file(&stem.with_extension("curves.csv"), &records_to_csv(&o.curves)?)?;
                    write_file(&stem.with_extension("summary.csv"), &records_to_csv(&o.summary)?)
                });
                result.map_err(|e| e.to_string())
            })
            .collect()
    });

    // Single-writer merge in protocol-then-seed order.
    let id = cfg.scenario_id();
    let mut curves = records_to_csv(&[curves_header(k)])?;
    let mut summary = records_to_csv(&[SUMMARY_HEADER.map(String::from).to_vec()])?;
    let mut failed = Vec::new();
    for (cell, outcome) in cells.iter().zip(&outcomes) {
        let stem = cells_dir.join(cell.stem());
        match outcome {
            Ok(()) => {
                for (buf, ext) in [(&mut curves, "curves.csv"), (&mut summary, "summary.csv")] {
                    let path = stem.with_extension(ext);
                    buf.extend(fs::read(&path).map_err(Error::io(&path))?);
                }
            }
            Err(msg) => {
                let line = format!("{} seed {}: {msg}", cell.protocol.name(), cell.seed);
                write_file(&stem.with_extension("error.txt"), line.as_bytes())?;
                summary.extend(records_to_csv(&[summary_record(&id, cell.protocol.name(), cell.seed, None)])?);
                failed.push(line);
            }
        }
    }
    write_file(&out.join(CURVES_FILE), &curves)?;
    write_file(&out.join(SUMMARY_FILE), &summary)?;
    Ok(RunSummary {
        cells: cells.len(),
        failed,
        out_dir: out.clone(),
    })
}

// ---------------------------------------------------------------- report

/// One parsed `summary.csv` row.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct SummaryRow {
    pub scenario_id: String,
    pub protocol: String,
    pub seed: u64,
    pub status: String,
    pub overall: Option<f64>,
    pub seen: Option<f64>,
    pub unseen: Option<f64>,
    pub seen_chopped: Option<f64>,
    pub fnr: Option<f64>,
    pub effective_rank: Option<f64>,
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::format(path, format!("{other:?}")),
    })?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<SummaryRow>, _>>()?;
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub overall: f64,
    pub seen: f64,
    pub unseen: f64,
    pub seen_chopped: f64,
    pub fnr: Option<f64>,
    pub effective_rank: Option<f64>,
}

impl MetricValues {
    fn from_row(row: &SummaryRow) -> Result<Self, String> {
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| format!("{} seed {}: missing {name}", row.protocol, row.seed));
        Ok(Self {
            overall: need(row.overall, "overall")?,
            seen: need(row.seen, "seen")?,
            unseen: need(row.unseen, "unseen")?,
            seen_chopped: need(row.seen_chopped, "seen_chopped")?,
            fnr: row.fnr,
            effective_rank: row.effective_rank,
        })
    }

    /// Rows without an effective rank (prediction ensembles) carry NaN
    /// through aggregation.
    fn to_metrics(self) -> Metrics {
        Metrics {
            overall: self.overall,
            seen: self.seen,
            unseen: self.unseen,
            seen_chopped: self.seen_chopped,
            fnr: self.fnr,
            effective_rank: self.effective_rank.unwrap_or(f64::NAN),
        }
    }

    fn from_metrics(m: &Metrics) -> Self {
        Self {
            overall: m.overall,
            seen: m.seen,
            unseen: m.unseen,
            seen_chopped: m.seen_chopped,
            fnr: m.fnr,
            effective_rank: (!m.effective_rank.is_nan()).then_some(m.effective_rank),
        }
    }

    fn minus(&self, other: &Self) -> Self {
        let opt = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| a - b);
        Self {
            overall: self.overall - other.overall,
            seen: self.seen - other.seen,
            unseen: self.unseen - other.unseen,
            seen_chopped: self.seen_chopped - other.seen_chopped,
            fnr: opt(self.fnr, other.fnr),
            effective_rank: opt(self.effective_rank, other.effective_rank),
        }
    }

    fn accuracy(&self, metric: &str) -> f64 {
        match metric {
            "overall" => self.overall,
            "seen" => self.seen,
            "unseen" => self.unseen,
            "seen_chopped" => self.seen_chopped,
            _ => unreachable!("unknown accuracy metric"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolStats {
    pub scenario_id: String,
    pub protocol: String,
    pub seeds: Vec<u64>,
    pub mean: MetricValues,
    /// Population variance; absent for a single seed.
    pub variance: Option<MetricValues>,
}

/// Protocol mean minus the naive fine-tuning mean of the same scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub scenario_id: String,
    pub protocol: String,
    pub delta: MetricValues,
}

/// Largest improvement over naive fine-tuning for one accuracy view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestDelta {
    pub scenario_id: String,
    pub metric: String,
    pub protocol: String,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub protocols: Vec<ProtocolStats>,
    pub delta_over_naive: Vec<DeltaRow>,
    pub best_delta: Vec<BestDelta>,
    pub failed_rows: usize,
}

const ACCURACY_VIEWS: [&str; 4] = ["overall", "seen", "unseen", "seen_chopped"];

/// Aggregates summary rows by (scenario, protocol) in order of first
/// appearance. `FAILED` rows are counted and skipped.
pub fn build_report(rows: &[SummaryRow]) -> Result<Report> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<SeedResult>> = BTreeMap::new();
    let mut failed_rows = 0;
    for row in rows {
        if row.status != STATUS_OK {
            failed_rows += 1;
            continue;
        }
        let key = (row.scenario_id.clone(), row.protocol.clone());
        let metrics = MetricValues::from_row(row).map_err(Error::Usage)?.to_metrics();
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(SeedResult {
                scenario_id: row.scenario_id.clone(),
                protocol: row.protocol.clone(),
                seed: row.seed,
                metrics,
            });
    }
    let mut protocols = Vec::with_capacity(order.len());
    for key in &order {
        let results = &groups[key];
        let seeds = results.iter().map(|r| r.seed).collect();
        let (mean, variance) = if results.len() >= 2 {
            let agg = aggregate_seeds(results)?;
            (MetricValues::from_metrics(&agg.mean), Some(MetricValues::from_metrics(&agg.variance)))
        } else {
            (MetricValues::from_metrics(&results[0].metrics), None)
        };
        protocols.push(ProtocolStats {
            scenario_id: key.0.clone(),
            protocol: key.1.clone(),
            seeds,
            mean,
            variance,
        });
    }
    let naive = ProtocolKind::NaiveFt.as_str();
    let mut delta_over_naive = Vec::new();
    let mut best_delta: Vec<BestDelta> = Vec::new();
    for base in protocols.iter().filter(|p| p.protocol == naive) {
        let rows: Vec<DeltaRow> = protocols
            .iter()
            .filter(|p| p.scenario_id == base.scenario_id && p.protocol != naive)
            .map(|p| DeltaRow {
                scenario_id: p.scenario_id.clone(),
                protocol: p.protocol.clone(),
                delta: p.mean.minus(&base.mean),
            })
            .collect();
        for metric in ACCURACY_VIEWS {
            // Earliest protocol wins ties.
            let best = rows.iter().fold(None::<&DeltaRow>, |acc, r| match acc {
                Some(a) if a.delta.accuracy(metric) >= r.delta.accuracy(metric) => Some(a),
                _ => Some(r),
            });
            if let Some(b) = best {
                best_delta.push(BestDelta {
                    scenario_id: b.scenario_id.clone(),
                    metric: metric.to_string(),
                    protocol: b.protocol.clone(),
                    delta: b.delta.accuracy(metric),
                });
            }
        }
        delta_over_naive.extend(rows);
    }
    Ok(Report {
        protocols,
        delta_over_naive,
        best_delta,
        failed_rows,
    })
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Plain-text table of means (and standard deviations when available),
    /// accuracies in percent.
    pub fn render(&self) -> String {
        let pct = |v: f64| format!("{:6.2}", 100.0 * v);
        let mut out = format!(
            "{:<12} {:<28} {:>5} {:>15} {:>15} {:>15} {:>15} {:>7} {:>6}\n",
            "scenario", "protocol", "seeds", "overall", "seen", "unseen", "seen_chopped", "fnr", "erank"
        );
        for p in &self.protocols {
            let cell = |mean: f64, var: Option<f64>| match var {
                Some(v) => format!("{} ±{:6.2}", pct(mean), 100.0 * v.sqrt()),
                None => format!("{}        ", pct(mean)),
            };
            let v = p.variance.as_ref();
            out.push_str(&format!(
                "{:<12} {:<28} {:>5} {:>15} {:>15} {:>15} {:>15} {:>7} {:>6}\n",
                p.scenario_id,
                p.protocol,
                p.seeds.len(),
                cell(p.mean.overall, v.map(|v| v.overall)),
                cell(p.mean.seen, v.map(|v| v.seen)),
                cell(p.mean.unseen, v.map(|v| v.unseen)),
                cell(p.mean.seen_chopped, v.map(|v| v.seen_chopped)),
                p.mean.fnr.map(pct).unwrap_or_else(|| "-".into()),
                p.mean.effective_rank.map(|r| format!("{r:.1}")).unwrap_or_else(|| "-".into()),
            ));
        }
        if !self.best_delta.is_empty() {
            out.push_str("\nbest delta over naive_ft (points)\n");
            for b in &self.best_delta {
                out.push_str(&format!(
                    "{:<12} {:<14} {:<28} {:+7.2}\n",
                    b.scenario_id,
                    b.metric,
                    b.protocol,
                    100.0 * b.delta
                ));
            }
        }
        if self.failed_rows > 0 {
            out.push_str(&format!("\n{} FAILED row(s) skipped\n", self.failed_rows));
        }
        out
    }
}

/// Aggregates `dir/summary.csv` into `dir/report.json` and returns the
/// report. Without a summary, an existing `report.json` is read and
/// rewritten instead.
pub fn cmd_report(dir: &Path) -> Result<Report> {
    let summary = dir.join(SUMMARY_FILE);
    let json = dir.join(REPORT_FILE);
    let report = if summary.exists() {
        build_report(&read_summary(&summary)?)?
    } else if json.exists() {
        Report::from_json(&fs::read_to_string(&json).map_err(Error::io(&json))?)?
    } else {
        return Err(Error::Usage(format!("no {SUMMARY_FILE} or {REPORT_FILE} in {}", dir.display())));
    };
    write_file(&json, report.to_json().as_bytes())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(protocol: &str, seed: u64, overall: f64, unseen: f64) -> SummaryRow {
        SummaryRow {
            scenario_id: "s".into(),
            protocol: protocol.into(),
            seed,
            status: STATUS_OK.into(),
            overall: Some(overall),
            seen: Some(0.5),
            unseen: Some(unseen),
            seen_chopped: Some(0.75),
            fnr: None,
            effective_rank: Some(10.0),
        }
    }

    #[test]
    fn floats_round_trip_through_text() {
        for v in [0.1, 1.0 / 3.0, 2.0f64.sqrt(), 1e-300, 0.0, 123456.789] {
            let s = fmt_float(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }

    #[test]
    fn deltas_are_exact_differences() {
        let rows = [
            row("naive_ft", 0, 0.4, 0.2),
            row("naive_ft", 1, 0.6, 0.3),
            row("lolsgd", 0, 0.7, 0.6),
            row("lolsgd", 1, 0.8, 0.7),
            row("frozen_ft", 0, 0.9, 0.5),
            row("frozen_ft", 1, 0.5, 0.4),
        ];
        let rep = build_report(&rows).unwrap();
        let naive = &rep.protocols[0];
        assert_eq!(naive.mean.overall, 0.5);
        assert!((naive.variance.unwrap().overall - 0.01).abs() < 1e-15);
        let d = &rep.delta_over_naive[0];
        assert_eq!(d.protocol, "lolsgd");
        assert_eq!(d.delta.unseen, rep.protocols[1].mean.unseen - naive.mean.unseen);
        let best_unseen = rep.best_delta.iter().find(|b| b.metric == "unseen").unwrap();
        assert_eq!(best_unseen.protocol, "lolsgd");
        let best_overall = rep.best_delta.iter().find(|b| b.metric == "overall").unwrap();
        assert_eq!(best_overall.protocol, "lolsgd");
    }

    #[test]
    fn single_seed_reports_raw_values() {
        let rep = build_report(&[row("naive_ft", 3, 0.25, 0.125)]).unwrap();
        assert_eq!(rep.protocols[0].mean.overall, 0.25);
        assert!(rep.protocols[0].variance.is_none());
    }

    #[test]
    fn failed_rows_are_skipped() {
        let mut bad = row("lolsgd", 0, 0.0, 0.0);
        bad.status = STATUS_FAILED.into();
        bad.overall = None;
        let rep = build_report(&[row("naive_ft", 0, 0.5, 0.5), bad]).unwrap();
        assert_eq!(rep.failed_rows, 1);
        assert_eq!(rep.protocols.len(), 1);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let rows = [row("naive_ft", 0, 0.1, 1.0 / 3.0), row("naive_ft", 1, 0.7, 0.2), row("lolsgd", 0, 2.0f64.sqrt() / 2.0, 0.3), row("lolsgd", 1, 0.3, 0.9)];
        let rep = build_report(&rows).unwrap();
        let text = rep.to_json();
        let back = Report::from_json(&text).unwrap();
        assert_eq!(back, rep);
        assert_eq!(back.to_json(), text);
    }
}
