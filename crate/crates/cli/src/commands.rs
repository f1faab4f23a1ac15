use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;
use wavetree_core::export::{
    c_node_array_bytes, emit_c99_header, generate_test_vectors, read_feature_rows,
    write_test_vectors,
};
use wavetree_core::features::{extract_features, FEATURE_NAMES};
use wavetree_core::pipeline::{
    benchmark_latency, generate_dataset, iq_from_f32, pair_confusion_by_snr, read_dataset,
    stratified_split, write_dataset, ChannelFamily, Dataset, DatasetSpec, LatencyConfig,
    DATASET_VERSION,
};
use wavetree_core::ztree::{
    deserialize, feature_importance, fit, predict, predict_f32, serialize, Criterion, Normalizer,
    TrainConfig, ZTreeModel, FORMAT_VERSION,
};
use wavetree_core::{Error, FeatureVector, FEATURE_DIM, SEGMENT_LEN};

use crate::{
    BenchArgs, ChannelArg, Cli, Command, CriterionArg, EvalArgs, ExportArgs, ExportFormat,
    PredictArgs, StoreArg, SynthArgs, TrainArgs,
};

pub struct CliError {
    pub kind: &'static str,
    pub message: String,
    pub code: u8,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (kind, code) = match &e {
            Error::Usage(_) | Error::IllegalPairing { .. } => ("usage", 2),
            Error::Io { .. } => ("io", 3),
            Error::Format(_) => ("format", 4),
            Error::Input(_) => ("input", 1),
            Error::Numeric(_) => ("numeric", 1),
            Error::Training(_) => ("training", 1),
        };
        CliError {
            kind,
            message: e.to_string(),
            code,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) {
    use std::io::Write as _;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn usage(message: impl Into<String>) -> CliError {
    CliError {
        kind: "usage",
        message: message.into(),
        code: 2,
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e).into())
}

fn load_model(path: &Path) -> Result<(ZTreeModel, Normalizer)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    deserialize(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())).into(),
        other => other.into(),
    })
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("cannot configure thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&cli.out_dir).map_err(|e| Error::io(&cli.out_dir, e))?;
    let (name, outputs) = match &cli.command {
        Command::Synth(a) => ("synth", synth(cli, a)?),
        Command::Train(a) => ("train", train(cli, a)?),
        Command::Eval(a) => ("eval", eval(cli, a)?),
        Command::Predict(a) => ("predict", predict_cmd(a)?),
        Command::Bench(a) => ("bench", bench(cli, a)?),
        Command::Export(a) => ("export", export(cli, a)?),
    };
    let manifest = json!({
        "tool": "wavetree",
        "version": env!("CARGO_PKG_VERSION"),
        "model_format_version": FORMAT_VERSION,
        "dataset_format_version": DATASET_VERSION,
        "seed": cli.seed,
        "threads": rayon::current_num_threads(),
        "out_dir": cli.out_dir,
        "command": cli.command,
        "outputs": outputs,
    });
    let path = cli.out_dir.join(format!("manifest-{name}.json"));
    write_file(&path, serde_json::to_string_pretty(&manifest).unwrap() + "\n")
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<Vec<PathBuf>> {
    let channel = match a.channel {
        ChannelArg::Awgn => ChannelFamily::Awgn,
        ChannelArg::Tdlc => ChannelFamily::Tdlc {
            speeds_kmh: a.speeds.clone(),
            delay_spreads_ns: a.delay_spreads.clone(),
        },
    };
    let mut spec = if a.full_grid {
        DatasetSpec::full_grid(channel, cli.seed)
    } else {
        DatasetSpec {
            snr_list_db: a.snr_list.clone(),
            segments_per_class_per_snr: a.segments,
            ..DatasetSpec::desk(channel, cli.seed)
        }
    };
    spec.store_iq = matches!(a.store, StoreArg::Iq | StoreArg::Both);
    spec.store_features = matches!(a.store, StoreArg::Features | StoreArg::Both);
    let ds = generate_dataset(&spec)?;
    let path = cli.out_dir.join(&a.output);
    write_dataset(&path, &ds)?;
    println!("wrote {} records to {}", ds.len(), path.display());
    Ok(vec![path])
}

fn split_ids(cli: &Cli, ds: &Dataset, ratio: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    let s = stratified_split(&ds.metas(), ratio, cli.seed)?;
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
    Ok((s.train, s.test))
}

fn gather<T: Clone>(v: &[T], ids: &[usize]) -> Vec<T> {
    ids.iter().map(|&i| v[i].clone()).collect()
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<Vec<PathBuf>> {
    let ds = read_dataset(&a.dataset)?;
    let rows = ds.feature_rows()?;
    let labels = ds.labels();
    let (train_ids, test_ids) = split_ids(cli, &ds, a.split.split_ratio)?;
    let config = TrainConfig {
        k_folds: a.k_folds,
        repeats: a.repeats,
        n_min: a.n_min,
        tau_sig: a.tau_sig,
        max_thresholds: a.max_thresholds,
        criterion: match a.criterion {
            CriterionArg::Ztest => Criterion::Ztest,
            CriterionArg::Gini => Criterion::Gini,
        },
        seed: cli.seed,
    };
    let x = gather(&rows, &train_ids);
    let y = gather(&labels, &train_ids);
    let (model, norm) = fit(&x, &y, &config)?;
    let bytes = serialize(&model, &norm);
    let model_path = cli.out_dir.join(&a.output);
    write_file(&model_path, &bytes)?;

    let train_acc = x
        .iter()
        .zip(&y)
        .filter(|(r, &l)| predict(&model, &norm, r) == l as u16)
        .count() as f64
        / x.len() as f64;
    let importance = feature_importance(&model);
    let mut ranked: Vec<(usize, u32)> =
        importance.iter().copied().enumerate().filter(|&(_, c)| c > 0).collect();
    ranked.sort_by(|p, q| q.1.cmp(&p.1).then(p.0.cmp(&q.0)));

    let mut text = String::new();
    writeln!(text, "train records      {}", train_ids.len()).unwrap();
    writeln!(text, "held-out records   {}", test_ids.len()).unwrap();
    writeln!(text, "nodes              {}", model.node_count()).unwrap();
    writeln!(text, "internal nodes     {}", model.internal_count()).unwrap();
    writeln!(text, "leaves             {}", model.leaf_count()).unwrap();
    writeln!(text, "depth              {}", model.depth()).unwrap();
    writeln!(text, "model bytes        {}", bytes.len()).unwrap();
    writeln!(text, "c node array bytes {}", c_node_array_bytes(&model)).unwrap();
    writeln!(text, "train accuracy     {train_acc:.4}").unwrap();
    writeln!(text).unwrap();
    writeln!(text, "{:>5}  {:<18}  {:>6}", "index", "feature", "splits").unwrap();
    for &(f, c) in &ranked {
        writeln!(text, "{f:>5}  {:<18}  {c:>6}", FEATURE_NAMES[f]).unwrap();
    }
    let log_json = json!({
        "train_records": train_ids.len(),
        "held_out_records": test_ids.len(),
        "node_count": model.node_count(),
        "internal_count": model.internal_count(),
        "leaf_count": model.leaf_count(),
        "depth": model.depth(),
        "model_bytes": bytes.len(),
        "c_node_array_bytes": c_node_array_bytes(&model),
        "train_accuracy": train_acc,
        "config": config,
        "importance": ranked.iter().map(|&(f, c)| json!({"index": f, "name": FEATURE_NAMES[f], "splits": c})).collect::<Vec<_>>(),
    });
    let txt_path = cli.out_dir.join("training_log.txt");
    let json_path = cli.out_dir.join("training_log.json");
    write_file(&txt_path, &text)?;
    write_file(&json_path, serde_json::to_string_pretty(&log_json).unwrap() + "\n")?;
    emit(&text);
    Ok(vec![model_path, txt_path, json_path])
}

fn class_code(model: &ZTreeModel, name: &str) -> Result<u8> {
    model
        .class_names
        .iter()
        .position(|c| c.eq_ignore_ascii_case(name))
        .map(|i| i as u8)
        .ok_or_else(|| usage(format!("unknown class {name:?}")))
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<Vec<PathBuf>> {
    let (model, norm) = load_model(&a.model)?;
    let ds = read_dataset(&a.dataset)?;
    let ids = if a.all {
        (0..ds.len()).collect()
    } else {
        split_ids(cli, &ds, a.split.split_ratio)?.1
    };
    if ids.is_empty() {
        return Err(usage("evaluation set is empty"));
    }
    let rows = gather(&ds.feature_rows()?, &ids);
    let labels = gather(&ds.labels(), &ids);
    let snr = gather(&ds.snrs(), &ids);
    let pred: Vec<u16> = rows.iter().map(|r| predict(&model, &norm, r)).collect();
    let mut report = wavetree_core::pipeline::evaluate_predictions(
        &labels,
        &pred,
        Some(&snr),
        &model.class_names,
    )?;
    let (ca, cb) = (class_code(&model, &a.pair[0])?, class_code(&model, &a.pair[1])?);
    let series = pair_confusion_by_snr(&labels, &pred, &snr, ca, cb)?;
    let key = format!("{}<->{}", model.class_names[ca as usize], model.class_names[cb as usize]);
    let mut csv = String::from("snr_db,n_a,a_to_b,n_b,b_to_a\n");
    for r in &series {
        writeln!(csv, "{},{},{},{},{}", r.snr_db, r.n_a, r.a_to_b, r.n_b, r.b_to_a).unwrap();
    }
    report.pair_series.insert(key, series);
    let json_path = cli.out_dir.join("eval_report.json");
    let txt_path = cli.out_dir.join("eval_report.txt");
    let csv_path = cli.out_dir.join("pair_series.csv");
    write_file(&json_path, report.to_json() + "\n")?;
    write_file(&txt_path, report.to_text())?;
    write_file(&csv_path, csv)?;
    emit(&report.to_text());
    Ok(vec![json_path, txt_path, csv_path])
}

fn read_iq_segments(path: &Path) -> Result<Vec<Vec<f32>>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let seg_bytes = 2 * SEGMENT_LEN * 4;
    if bytes.is_empty() || bytes.len() % seg_bytes != 0 {
        return Err(Error::Format(format!(
            "{}: {} bytes is not a positive multiple of {seg_bytes}",
            path.display(),
            bytes.len()
        ))
        .into());
    }
    Ok(bytes
        .chunks_exact(seg_bytes)
        .map(|c| c.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
        .collect())
}

fn predict_cmd(a: &PredictArgs) -> Result<Vec<PathBuf>> {
    let (model, norm) = load_model(&a.model)?;
    let labels: Vec<u16> = match (&a.input.iq_file, &a.input.features_file) {
        (Some(p), None) => read_iq_segments(p)?
            .iter()
            .map(|seg| Ok(predict(&model, &norm, &extract_features(&iq_from_f32(seg))?)))
            .collect::<std::result::Result<_, Error>>()?,
        (None, Some(p)) => read_feature_rows(p)?
            .iter()
            .map(|row| predict_f32(&model, &norm, row))
            .collect(),
        _ => return Err(usage("exactly one of --iq-file or --features-file is required")),
    };
    let mut out = String::new();
    for l in labels {
        writeln!(out, "{l}\t{}", model.class_names[l as usize]).unwrap();
    }
    emit(&out);
    Ok(Vec::new())
}

fn bench(cli: &Cli, a: &BenchArgs) -> Result<Vec<PathBuf>> {
    let (model, norm) = load_model(&a.model)?;
    let ds = read_dataset(&a.dataset)?;
    let rows = ds.feature_rows()?;
    let segments: Vec<_> = ds.records.iter().filter_map(|r| r.samples()).collect();
    if segments.is_empty() {
        eprintln!("warning: dataset has no IQ; end-to-end latency skipped");
    }
    let config = LatencyConfig {
        walk_repetitions: a.reps,
        end_to_end_repetitions: a.e2e_reps,
        ..LatencyConfig::default()
    };
    let report = benchmark_latency(&model, &norm, &rows, &segments, &config)?;
    let path = cli.out_dir.join("bench_report.json");
    write_file(&path, serde_json::to_string_pretty(&report).unwrap() + "\n")?;
    println!(
        "walk: median {:.4} us  p99 {:.4} us  ({} walks, {} nodes, depth {})",
        report.walk.median_us, report.walk.p99_us, report.walk_repetitions, report.node_count, report.depth
    );
    if let Some(e) = &report.end_to_end {
        println!(
            "extract+walk: median {:.2} us  p99 {:.2} us  ({} passes)",
            e.median_us, e.p99_us, e.samples
        );
    }
    Ok(vec![path])
}

fn export(cli: &Cli, a: &ExportArgs) -> Result<Vec<PathBuf>> {
    let ExportFormat::C99 = a.format;
    let (model, norm) = load_model(&a.model)?;
    let header = emit_c99_header(&model, &norm)?;
    let header_path = cli.out_dir.join(&a.output);
    write_file(&header_path, &header)?;
    let mut outputs = vec![header_path.clone()];
    println!("wrote {} ({} nodes)", header_path.display(), model.node_count());
    if a.test_vectors > 0 {
        let base: Vec<FeatureVector> = match &a.dataset {
            Some(p) => read_dataset(p)?.feature_rows()?,
            None => Vec::new(),
        };
        let tv = generate_test_vectors(&model, &norm, &base, a.test_vectors, cli.seed)?;
        let vp = cli.out_dir.join("test_vectors.f32");
        let lp = cli.out_dir.join("test_labels.u16");
        write_test_vectors(&tv, &vp, &lp)?;
        println!(
            "wrote {} test vectors of {FEATURE_DIM} f32 ({} threshold-adjacent) and labels",
            tv.vectors.len(),
            tv.threshold_adjacent
        );
        outputs.extend([vp, lp]);
    }
    Ok(outputs)
}
