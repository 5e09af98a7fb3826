use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use flowinvert::aggregate::FlowAggregator;
use flowinvert::csvio::{PacketCsvReader, PacketCsvWriter};
use flowinvert::inversion::report::{ccdf_grid, write_points_tsv};
use flowinvert::inversion::{invert, rescale_tail, InversionConfig, InversionReport};
use flowinvert::score::{score, Truth};
use flowinvert::synth::{interleave, interleavers, IndexSampler, SamplingConfig};
use flowinvert::{draw_flow_sizes, histogram_ccdf, FlowHistogram, FlowSizeModel};

/// Flow-size distribution recovery from 1-in-k packet-sampled traffic.
///
/// Stages hand off through files: generate writes packets, sample thins
/// them, aggregate builds a flow-size histogram, invert recovers the
/// original distribution and score compares a report with ground truth.
#[derive(Parser)]
#[command(name = "flowinvert", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw flow sizes from a model and write an interleaved packet trace.
    Generate(GenerateArgs),
    /// Keep one packet out of every k.
    Sample(SampleArgs),
    /// Count packets per flow and write the flow-size histogram.
    Aggregate(AggregateArgs),
    /// Recover the original flow-size law and flow counts.
    Invert(InvertArgs),
    /// Relative errors of an inversion report against ground truth.
    Score(ScoreArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Flow-size model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Number of flows.
    #[arg(long)]
    flows: usize,
    #[arg(long)]
    seed: u64,
    /// Packet ordering across flows.
    #[arg(long, default_value = "shuffle")]
    interleave: String,
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    /// Packet CSV.
    #[arg(long = "in")]
    input: PathBuf,
    /// Sampling period.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    /// Index of the first selected packet, below k.
    #[arg(long, default_value_t = 0)]
    phase: u64,
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct AggregateArgs {
    /// Packet CSV, raw or sampled.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TailCorrectionArg {
    Off,
    Fitted,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeEstimatorArg {
    Discrete,
    Hill,
}

#[derive(Args)]
struct InvertArgs {
    /// Sampled flow-size histogram TSV.
    #[arg(long = "in")]
    input: PathBuf,
    /// Sampling period the histogram was taken with.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long, default_value_t = 20)]
    b0: u64,
    /// Number of tail segments; chosen among 1..=3 when omitted.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    m: Option<u64>,
    /// Smallest sampled size considered for the tail.
    #[arg(long, default_value_t = 1)]
    jmin: u64,
    #[arg(long, value_enum, default_value = "off")]
    tail_correction: TailCorrectionArg,
    #[arg(long, value_enum, default_value = "discrete")]
    shape_estimator: ShapeEstimatorArg,
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Writes `<prefix>.score.json`; prints to stdout when omitted.
    #[arg(long)]
    out_prefix: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FLOWINVERT_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Sample(a) => sample(a),
        Command::Aggregate(a) => aggregate(a),
        Command::Invert(a) => run_invert(a),
        Command::Score(a) => run_score(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn output(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn check_input(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("input {} does not exist or is not a file", path.display());
    }
    Ok(())
}

fn check_prefix(prefix: &Path) -> Result<()> {
    let dir = match prefix.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    if !dir.is_dir() {
        bail!("output directory {} does not exist", dir.display());
    }
    if prefix.file_name().is_none() {
        bail!("output prefix {} has no file name part", prefix.display());
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    check_input(&a.model)?;
    check_prefix(&a.out_prefix)?;
    interleavers().get(&a.interleave)?;
    let model: FlowSizeModel = serde_json::from_reader(open(&a.model)?)
        .with_context(|| format!("invalid model {}", a.model.display()))?;

    let sizes = draw_flow_sizes(&model, a.flows, a.seed)?;
    let stream = interleave(&sizes, &a.interleave, a.seed)?;
    info!(
        "{} flows, {} packets",
        stream.flow_count(),
        stream.total_packets()
    );

    let path = output(&a.out_prefix, ".packets.csv");
    let mut w = PacketCsvWriter::flow_ids(create(&path)?)?;
    for &id in stream.packets() {
        w.write_flow_id(id)?;
    }
    w.finish()?.flush()?;

    let mut out = create(&output(&a.out_prefix, ".truth.hist.tsv"))?;
    FlowHistogram::from_flow_sizes(&sizes).write_tsv(&mut out)?;
    out.flush()?;

    let truth = Truth::from_sizes(&model, &sizes, a.seed, a.run_id);
    write_json(&output(&a.out_prefix, ".truth.json"), &truth)
}

fn sample(a: SampleArgs) -> Result<()> {
    check_input(&a.input)?;
    check_prefix(&a.out_prefix)?;
    let cfg = SamplingConfig::new(a.k, a.phase, 0)?;
    let mut reader = PacketCsvReader::new(open(&a.input)?);
    reader.start()?;
    let path = output(&a.out_prefix, ".sampled.csv");
    let mut writer = PacketCsvWriter::new(create(&path)?, reader.header())?;
    let mut sampler = IndexSampler::new(&cfg);
    let (mut seen, mut kept) = (0u64, 0u64);
    while let Some(row) = reader.next_row()? {
        if let Err(reason) = &row.key {
            warn!(
                "{}: line {}: {reason}; skipped",
                a.input.display(),
                row.line
            );
            continue;
        }
        seen += 1;
        if sampler.select() {
            writer.write_fields(&row.fields)?;
            kept += 1;
        }
    }
    writer.finish()?.flush()?;
    info!("kept {kept} of {seen} packets");
    Ok(())
}

fn aggregate(a: AggregateArgs) -> Result<()> {
    check_input(&a.input)?;
    check_prefix(&a.out_prefix)?;
    let mut reader = PacketCsvReader::new(open(&a.input)?);
    let mut agg = FlowAggregator::new();
    while let Some(row) = reader.next_row()? {
        match row.key {
            Ok(key) => agg.push(key),
            Err(reason) => {
                warn!(
                    "{}: line {}: {reason}; skipped",
                    a.input.display(),
                    row.line
                );
                agg.push_malformed();
            }
        }
    }
    if agg.malformed() > 0 {
        warn!("{} malformed lines skipped", agg.malformed());
    }
    let hist = agg.finish();
    info!(
        "{} flows, {} packets",
        hist.total_flows(),
        hist.total_packets()
    );
    let mut out = create(&output(&a.out_prefix, ".hist.tsv"))?;
    hist.write_tsv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn run_invert(a: InvertArgs) -> Result<()> {
    check_input(&a.input)?;
    check_prefix(&a.out_prefix)?;
    let hist = FlowHistogram::read_tsv(open(&a.input)?)
        .with_context(|| format!("invalid histogram {}", a.input.display()))?;

    let mut cfg = InversionConfig::new(a.k);
    cfg.b0 = a.b0;
    cfg.j_min = a.jmin;
    cfg.detect.segments = a.m.map(|m| m as usize);
    cfg.tail_correction = match a.tail_correction {
        TailCorrectionArg::Off => "off",
        TailCorrectionArg::Fitted => "fitted",
    }
    .into();
    cfg.shape_estimator = match a.shape_estimator {
        ShapeEstimatorArg::Discrete => "discrete",
        ShapeEstimatorArg::Hill => "hill",
    }
    .into();
    cfg.run_id = a.run_id;

    let report_path = output(&a.out_prefix, ".report.json");
    let report = match invert(&hist, &cfg) {
        Ok(r) => r,
        Err(failure) => {
            let mut out = create(&report_path)?;
            failure.draft.write_json(&mut out)?;
            out.flush()?;
            return Err(failure.into());
        }
    };
    let mut out = create(&report_path)?;
    report.write_json(&mut out)?;
    out.flush()?;

    write_curves(&hist, &report, &a.out_prefix)
}

/// Recovered ccdf and the rescaled sampled ccdf, for plotting.
fn write_curves(hist: &FlowHistogram, report: &InversionReport, prefix: &Path) -> Result<()> {
    let model = report.recovered()?;
    let max_sampled = hist.max_size().unwrap_or(1);
    let top = ((max_sampled as f64 / report.p).ceil() as u64).max(10_000);
    let points = ccdf_grid(model.b0(), top, 20)
        .into_iter()
        .map(|j| Ok((j as f64, model.ccdf(j)?)))
        .collect::<flowinvert::Result<Vec<_>>>()?;
    let mut out = create(&output(prefix, ".ccdf.tsv"))?;
    write_points_tsv(&points, &mut out)?;
    out.flush()?;

    let ccdf = histogram_ccdf(hist)?;
    let overlay = rescale_tail(&ccdf, report.p, report.nu_hat)?;
    let mut out = create(&output(prefix, ".overlay.tsv"))?;
    write_points_tsv(&overlay, &mut out)?;
    out.flush()?;
    Ok(())
}

fn run_score(a: ScoreArgs) -> Result<()> {
    check_input(&a.truth)?;
    check_input(&a.report)?;
    if let Some(p) = &a.out_prefix {
        check_prefix(p)?;
    }
    let truth: Truth = serde_json::from_reader(open(&a.truth)?)
        .with_context(|| format!("invalid truth file {}", a.truth.display()))?;
    let raw: serde_json::Value = serde_json::from_reader(open(&a.report)?)
        .with_context(|| format!("invalid report {}", a.report.display()))?;
    if raw.get("status").and_then(|s| s.as_str()) != Some("ok") {
        bail!("report {} is from a failed inversion", a.report.display());
    }
    let report: InversionReport = serde_json::from_value(raw)
        .with_context(|| format!("invalid report {}", a.report.display()))?;
    let s = score(&truth, &report)?;
    match &a.out_prefix {
        Some(p) => write_json(&output(p, ".score.json"), &s),
        None => {
            let mut out = io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, &s)?;
            writeln!(out)?;
            Ok(())
        }
    }
}
