mod args;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use icq::train::EpochRecord;
use icq::{
    generate, load_dataset, load_index, run_benchmark, save_dataset, save_index, search_bruteforce,
    search_exact, search_two_step, train, unseen_class_split, BenchmarkSpec, Config, EmbeddedDataset, FastSet,
    QueryResult, SearchIndex, SynthSpec, TrainOptions, TruthSource,
};

use args::{BenchArgs, Cli, Command, GenArgs, InspectArgs, Mode, SearchArgs, TrainArgs, Truth};

enum Failure {
    Usage(String),
    Runtime(String),
}

type CmdResult = Result<(), Failure>;

fn runtime(stage: &str) -> impl Fn(icq::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{stage}: {e}"))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{}: {e}", path.display()))
}

fn write_output(path: Option<&Path>, text: &str) -> CmdResult {
    match path {
        Some(p) => fs::write(p, text).map_err(io_err(p)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Runtime(format!("stdout: {e}"))),
    }
}

fn resolved_config(cfg: &Config) -> CmdResult {
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    eprintln!("config: {cfg}");
    Ok(())
}

fn cmd_gen(a: &GenArgs) -> CmdResult {
    let mut spec = SynthSpec::new(a.n_train, a.n_test, a.d, a.informative);
    if let Some(r) = a.redundant {
        spec.n_redundant = r;
    }
    spec.n_classes = a.classes;
    spec.class_sep = a.class_sep;
    spec.noise_sigma = a.noise;
    spec.seed = a.seed;
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    eprintln!(
        "gen: n_train={} n_test={} d={} informative={} redundant={} classes={} class_sep={} noise={} seed={}",
        spec.n_train,
        spec.n_test,
        spec.d,
        spec.n_informative,
        spec.n_redundant,
        spec.n_classes,
        spec.class_sep,
        spec.noise_sigma,
        spec.seed
    );
    let data = generate(&spec).map_err(runtime("gen"))?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    save_dataset(&data.train, a.out.join("train.icqd")).map_err(runtime("gen"))?;
    save_dataset(&data.test, a.out.join("test.icqd")).map_err(runtime("gen"))?;
    icq::datagen::write_dims(&data.informative_dims, a.out.join("informative_dims.txt")).map_err(runtime("gen"))?;
    Ok(())
}

fn epoch_csv(records: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,L_C,L_P,L_ICQ,L_E,psi,K_fast\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.epoch, r.quantization_loss, r.prior_loss, r.penalty, r.embedding_loss, r.psi_dim, r.fast_count
        );
    }
    s
}

fn log_epochs(records: &[EpochRecord]) {
    for r in records {
        eprintln!(
            "epoch {}: L_C={:.6} L_P={:.4} L_ICQ={:.6} L_E={:.4} |psi|={} |K_fast|={}",
            r.epoch, r.quantization_loss, r.prior_loss, r.penalty, r.embedding_loss, r.psi_dim, r.fast_count
        );
    }
}

fn cmd_train(a: &TrainArgs) -> CmdResult {
    let cfg = a.config.resolve();
    resolved_config(&cfg)?;
    let ds = load_dataset(&a.input).map_err(runtime("load"))?;
    let out = train(&ds, &cfg, &TrainOptions::default()).map_err(runtime("train"))?;
    log_epochs(&out.report.epochs);
    save_index(&out.index, &a.out).map_err(runtime("save"))?;
    write_output(a.report.as_deref(), &epoch_csv(&out.report.epochs))
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn cmd_search(a: &SearchArgs) -> CmdResult {
    let queries = load_dataset(&a.queries).map_err(runtime("load"))?;
    let index = match &a.index {
        Some(p) => {
            let mut idx = load_index(p).map_err(runtime("load"))?;
            if a.all_fast {
                idx = idx.with_fast_set(FastSet::all(idx.config().k)).map_err(runtime("index"))?;
            }
            if let Some(s) = a.sigma_scale {
                if !(s >= 0.0 && s.is_finite()) {
                    return Err(Failure::Usage(format!("--sigma-scale must be nonnegative, got {s}")));
                }
                idx = idx.with_sigma_scale(s).map_err(runtime("index"))?;
            }
            Some(idx)
        }
        None if a.mode != Mode::Brute => return Err(Failure::Usage("--index is required for this mode".into())),
        None => None,
    };
    let database = match (&a.database, a.mode) {
        (Some(p), _) => Some(load_dataset(p).map_err(runtime("load"))?),
        (None, Mode::Brute) => return Err(Failure::Usage("--mode brute needs --database".into())),
        (None, _) => None,
    };
    let n = match (a.mode, &index, &database) {
        (Mode::Brute, _, Some(db)) => db.len(),
        (_, Some(idx), _) => idx.len(),
        _ => unreachable!(),
    };
    if a.k == 0 || a.k > n {
        return Err(Failure::Usage(format!("--k must be in [1, {n}], got {}", a.k)));
    }
    match &index {
        Some(idx) => eprintln!(
            "search: mode={:?} k={} |K_fast|={} sigma={} queries={}",
            a.mode,
            a.k,
            idx.fast_count(),
            idx.sigma(),
            queries.len()
        ),
        None => eprintln!("search: mode={:?} k={} queries={}", a.mode, a.k, queries.len()),
    }
    let run = |q: &[f32]| -> icq::Result<QueryResult> {
        match a.mode {
            Mode::TwoStep => search_two_step(index.as_ref().unwrap(), q, a.k),
            Mode::Exact => search_exact(index.as_ref().unwrap(), q, a.k),
            Mode::Brute => search_bruteforce(database.as_ref().unwrap(), q, a.k),
        }
    };
    let mut csv = String::from("query,ids,scores,ops\n");
    for (qi, q) in queries.rows().enumerate() {
        let r = run(q).map_err(runtime("search"))?;
        let _ = writeln!(csv, "{qi},{},{},{}", join(&r.ids), join(&r.scores), r.ops.search_ops());
    }
    write_output(a.out.as_deref(), &csv)
}

fn rows_of_classes(ds: &EmbeddedDataset, classes: &[u32]) -> Result<EmbeddedDataset, Failure> {
    let keep: HashSet<u32> = classes.iter().copied().collect();
    let labels = ds
        .labels()
        .ok_or_else(|| Failure::Usage("--unseen-fraction needs labelled queries".into()))?;
    let idx: Vec<usize> = (0..ds.len()).filter(|&i| keep.contains(&labels[i])).collect();
    Ok(ds.select(&idx))
}

fn cmd_bench(a: &BenchArgs) -> CmdResult {
    let cfg = a.config.resolve();
    resolved_config(&cfg)?;
    if let Some(f) = a.unseen_fraction {
        if !(f > 0.0 && f < 1.0) {
            return Err(Failure::Usage(format!("--unseen-fraction must be in (0, 1), got {f}")));
        }
    }
    let spec = BenchmarkSpec {
        depth: a.depth,
        recall_at: a.recall_at.clone(),
        truth: match a.truth {
            Truth::Brute => TruthSource::BruteForce,
            Truth::Exact => TruthSource::Exact,
            Truth::Labels => TruthSource::Labels,
        },
    };
    eprintln!("bench: depth={} recall_at={:?} truth={:?}", spec.depth, spec.recall_at, spec.truth);

    let train_ds = load_dataset(&a.train).map_err(runtime("load"))?;
    let test_ds = match &a.test {
        Some(p) => Some(load_dataset(p).map_err(runtime("load"))?),
        None => None,
    };
    let (fit_on, mut database, mut queries) = match a.unseen_fraction {
        Some(f) => {
            let split = unseen_class_split(&train_ds, f, cfg.seed).map_err(runtime("split"))?;
            eprintln!("split: train classes {:?}, unseen classes {:?}", split.train_classes, split.test_classes);
            let queries = match &test_ds {
                Some(t) => rows_of_classes(t, &split.test_classes)?,
                None => split.test.clone(),
            };
            (split.train, split.test, queries)
        }
        None => {
            let queries = test_ds.ok_or_else(|| Failure::Usage("--test is required without --unseen-fraction".into()))?;
            (train_ds.clone(), train_ds, queries)
        }
    };
    if queries.is_empty() {
        return Err(Failure::Usage("no queries to evaluate".into()));
    }
    if spec.depth == 0 || spec.depth > database.len() {
        return Err(Failure::Usage(format!(
            "--depth must be in [1, {}], got {}",
            database.len(),
            spec.depth
        )));
    }

    let index: SearchIndex = match &a.index {
        Some(p) => load_index(p).map_err(runtime("load"))?,
        None => {
            let opts = TrainOptions {
                with_embedder: a.with_embedder,
                embed_dim: a.embed_dim,
            };
            let out = train(&fit_on, &cfg, &opts).map_err(runtime("train"))?;
            log_epochs(&out.report.epochs);
            if let Some(e) = &out.embedder {
                database = e.embed(&database).map_err(runtime("embed"))?;
                queries = e.embed(&queries).map_err(runtime("embed"))?;
            }
            if a.unseen_fraction.is_some() {
                out.index.reencode(&database).map_err(runtime("encode"))?
            } else {
                out.index
            }
        }
    };
    if let Some(p) = &a.save_index {
        save_index(&index, p).map_err(runtime("save"))?;
    }
    let bench = run_benchmark(&index, &database, &queries, &spec).map_err(runtime("search"))?;
    eprintln!("{bench}");
    if let Some(p) = &a.counters {
        let f = fs::File::create(p).map_err(io_err(p))?;
        bench.write_counters_csv(std::io::BufWriter::new(f)).map_err(io_err(p))?;
    }
    if let Some(p) = &a.rankings {
        let f = fs::File::create(p).map_err(io_err(p))?;
        bench.write_rankings_csv(std::io::BufWriter::new(f)).map_err(io_err(p))?;
    }
    write_output(a.out.as_deref(), &bench.to_csv())
}

fn inspect_text(index: &SearchIndex) -> String {
    let cfg = index.config();
    let (k, m, d) = (cfg.k, cfg.m, index.dim());
    let mask = index.mask();
    let nf = index.fast_count();
    let mut s = String::new();
    let _ = writeln!(s, "K={k} m={m} d={d} n={} bits={}", index.len(), cfg.code_length_bits());
    let _ = writeln!(s, "|K_fast|={nf} |K_slow|={} |psi|={} sigma={}", k - nf, mask.dim_psi(), index.sigma());
    let _ = writeln!(s, "config: {cfg}");
    let _ = writeln!(s, "codebook,fast,in_psi,out_psi");
    for b in 0..k {
        let (mut inside, mut outside) = (0.0f64, 0.0f64);
        for c in index.books().codebook(b).chunks_exact(d) {
            for (&v, &bit) in c.iter().zip(mask.bits()) {
                let v2 = (v as f64) * (v as f64);
                if bit {
                    inside += v2;
                } else {
                    outside += v2;
                }
            }
        }
        let _ = writeln!(s, "{b},{},{inside},{outside}", index.fast().contains(b) as u8);
    }
    s
}

fn cmd_inspect(a: &InspectArgs) -> CmdResult {
    let index = load_index(&a.index).map_err(runtime("load"))?;
    write_output(None, &inspect_text(&index))
}

fn configure_threads() -> CmdResult {
    let Ok(v) = std::env::var("ICQ_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("ICQ_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Search(a) => cmd_search(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Inspect(a) => cmd_inspect(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
