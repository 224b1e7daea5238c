use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{Context, Result};
use chrono::NaiveDate;
use clap::{Parser, Subcommand};

use titant::detect::Model;
use titant::embed::{generate_walks, train_skipgram, train_skipgram_distributed, SkipGramConfig, WalkConfig};
use titant::graph::{build_network, TransactionNetwork};
use titant::ingest::{
    generate_synthetic, parse_labels, parse_records, serialize_labels, serialize_records, slice_windows, LabelRecord,
    SyntheticConfig, WindowSpec,
};
use titant::pipeline::{
    evaluate, read_labeled_features, run_t_plus_1, sweep, write_labeled_features, write_sweep_table, EvalReport,
    PipelineConfig, SweepAxis, ThresholdMode, DEFAULT_THRESHOLD,
};
use titant::serve::{serve_loop, Scorer};
use titant::store::FeatureStore;

#[derive(Parser)]
#[command(
    name = "titant",
    version,
    about = "Transaction-network fraud detection: train, store, serve"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic record file and label file.
    Generate {
        /// TOML with the generator settings, top level or under `[data.synthetic]`.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split records into the network, train and test windows for one test day.
    Slice {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        test_date: NaiveDate,
        #[arg(long, default_value_t = 90)]
        network_days: u32,
        #[arg(long, default_value_t = 14)]
        train_days: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed an edge list with random walks and skip-gram.
    Embed {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 50)]
        walk_len: usize,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = 5)]
        window: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        version_date: Option<NaiveDate>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one T+1 cycle: embed, train, score the test day, publish features.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Feature store directory; defaults to `<out>/store`.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Score a labelled feature file with a saved model.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Report F1 at the best threshold instead of the fixed one.
        #[arg(long)]
        best_threshold: bool,
        #[arg(long, value_delimiter = ',', default_value = "0.01")]
        top_fracs: Vec<f64>,
    },
    /// Repeat the pipeline over values of one hyperparameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        repetitions: usize,
        /// Output table; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve JSON-lines scoring requests over TCP until interrupted.
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = 8)]
        concurrency: usize,
    },
    /// Score a file of JSON request lines offline, one response per line.
    Score {
        #[arg(long)]
        one_shot: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn synthetic_config(path: &Path) -> Result<SyntheticConfig> {
    #[derive(serde::Deserialize)]
    struct Wrapped {
        data: Data,
    }
    #[derive(serde::Deserialize)]
    struct Data {
        synthetic: SyntheticConfig,
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(c) = toml::from_str::<SyntheticConfig>(&text) {
        return Ok(c);
    }
    let w: Wrapped = toml::from_str(&text).context("config has no synthetic generator settings")?;
    Ok(w.data.synthetic)
}

fn write_report<W: Write>(r: &EvalReport, mut out: W) -> Result<()> {
    let mut header = vec!["f1", "precision", "recall", "threshold", "tp", "fp", "fn", "tn"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    header.extend(r.rec_at_top_frac.keys().map(|k| format!("rec@top_{k}")));
    writeln!(out, "{}", header.join("\t"))?;
    let c = r.counts;
    let mut row = vec![
        format!("{:.6}", r.f1),
        format!("{:.6}", r.precision),
        format!("{:.6}", r.recall),
        format!("{:.6}", r.threshold),
        c.tp.to_string(),
        c.fp.to_string(),
        c.fn_.to_string(),
        c.tn.to_string(),
    ];
    row.extend(r.rec_at_top_frac.values().map(|v| format!("{v:.6}")));
    writeln!(out, "{}", row.join("\t"))?;
    Ok(())
}

fn scorer(store: &Path, model: &Path, threshold: f64) -> Result<Arc<Scorer>> {
    let store = Arc::new(FeatureStore::open(store)?);
    let scorer = Arc::new(Scorer::new(store));
    scorer
        .load_model(model, threshold)
        .with_context(|| format!("loading {}", model.display()))?;
    Ok(scorer)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out } => {
            let cfg = synthetic_config(&config)?;
            let data = generate_synthetic(&cfg)?;
            fs::create_dir_all(&out)?;
            serialize_records(&data.records, create(&out.join("records.csv"))?)?;
            serialize_labels(&data.labels, create(&out.join("labels.csv"))?)?;
            log::info!("{} records, {} labels", data.records.len(), data.labels.len());
        }
        Command::Slice {
            records,
            labels,
            test_date,
            network_days,
            train_days,
            out,
        } => {
            let records = parse_records(open(&records)?)?;
            let labels = parse_labels(open(&labels)?)?;
            let w = slice_windows(
                &records,
                &labels,
                &WindowSpec {
                    test_date,
                    network_days,
                    train_days,
                },
            )?;
            fs::create_dir_all(&out)?;
            build_network(w.network.iter().copied())?.write_edge_list(create(&out.join("network.edges"))?)?;
            for (name, rows) in [("train", &w.train), ("test", &w.test)] {
                let recs: Vec<_> = rows.iter().map(|r| r.record.clone()).collect();
                serialize_records(&recs, create(&out.join(format!("{name}.csv")))?)?;
                let ids: HashSet<&str> = recs.iter().map(|r| r.txn_id.as_str()).collect();
                let ls: Vec<LabelRecord> = labels
                    .iter()
                    .filter(|l| ids.contains(l.txn_id.as_str()))
                    .cloned()
                    .collect();
                serialize_labels(&ls, create(&out.join(format!("{name}_labels.csv")))?)?;
            }
            log::info!(
                "network {} train {} test {} discarded {}",
                w.network.len(),
                w.train.len(),
                w.test.len(),
                w.discarded
            );
        }
        Command::Embed {
            graph,
            walk_len,
            samples,
            dim,
            workers,
            window,
            seed,
            version_date,
            out,
        } => {
            let net = TransactionNetwork::read_edge_list(open(&graph)?)?;
            let walk = WalkConfig {
                walk_length: walk_len,
                samples_per_node: samples,
                seed,
            };
            let corpus = generate_walks(&net, &walk)?;
            let sg = SkipGramConfig {
                dim,
                context_window: window,
                seed: seed.wrapping_add(1),
                ..SkipGramConfig::default()
            };
            let mut m = if workers <= 1 {
                train_skipgram(&corpus, &sg)?
            } else {
                train_skipgram_distributed(&corpus, &sg, workers)?
            };
            if let Some(d) = version_date {
                m = m.with_version(d);
            }
            m.write_text(create(&out)?)?;
        }
        Command::Train { config, out, store } => {
            let cfg = PipelineConfig::load(&config)?;
            let base = config.parent().unwrap_or(Path::new("."));
            let (records, labels) = cfg.data.load(base)?;
            fs::create_dir_all(&out)?;
            let store = FeatureStore::open(store.unwrap_or_else(|| out.join("store")))?;
            let run = run_t_plus_1(&records, &labels, &cfg, Some(&store))?;
            run.model.write(create(&out.join("model.txt"))?)?;
            if let Some(e) = &run.embeddings {
                e.write_text(create(&out.join("embeddings.txt"))?)?;
            }
            write_labeled_features(&run.test, create(&out.join("test_features.tsv"))?)?;
            write_report(&run.report, create(&out.join("report.tsv"))?)?;
            write_report(&run.report, io::stdout().lock())?;
        }
        Command::Evaluate {
            model,
            test,
            threshold,
            best_threshold,
            top_fracs,
        } => {
            let model = Model::read(open(&model)?)?;
            let test = read_labeled_features(open(&test)?)?;
            let scores = model.predict_matrix(&test)?;
            let labels = test.labels().context("test file has no labels")?;
            let mode = if best_threshold {
                ThresholdMode::Best
            } else {
                ThresholdMode::Fixed
            };
            write_report(
                &evaluate(&scores, labels, threshold, mode, &top_fracs)?,
                io::stdout().lock(),
            )?;
        }
        Command::Sweep {
            config,
            axis,
            values,
            repetitions,
            out,
        } => {
            let cfg = PipelineConfig::load(&config)?;
            let (records, labels) = cfg.data.load(config.parent().unwrap_or(Path::new(".")))?;
            let rows = sweep(&records, &labels, &cfg, axis, &values, repetitions)?;
            match out {
                Some(p) => write_sweep_table(axis, &rows, create(&p)?)?,
                None => write_sweep_table(axis, &rows, io::stdout().lock())?,
            }
        }
        Command::Serve {
            store,
            model,
            bind,
            threshold,
            concurrency,
        } => {
            let scorer = scorer(&store, &model, threshold)?;
            let stop = Arc::new(AtomicBool::new(false));
            let flag = Arc::clone(&stop);
            ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst))?;
            serve_loop(scorer, &bind, concurrency, stop)?;
        }
        Command::Score {
            one_shot,
            store,
            model,
            threshold,
        } => {
            let scorer = scorer(&store, &model, threshold)?;
            let mut out = io::stdout().lock();
            for line in open(&one_shot)?.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                serde_json::to_writer(&mut out, &scorer.score_line(&line))?;
                out.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
