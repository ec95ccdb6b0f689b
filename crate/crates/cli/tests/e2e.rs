use std::path::Path;
use std::process::{Command, Output};

fn icq(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icq"))
        .current_dir(dir)
        .args(args)
        .env_remove("ICQ_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn gen(dir: &Path, out: &str, seed: &str) {
    let o = icq(
        dir,
        &["gen", "--n-train", "1500", "--n-test", "60", "--d", "24", "--informative", "5", "--seed", seed, "--out", out],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

const TRAIN: &[&str] = &["--K", "4", "--m", "32", "--epochs", "2", "--seed", "3"];

fn train(dir: &Path, out: &str) -> Output {
    let mut args = vec!["train", "--in", "data/train.icqd", "--out", out, "--report", "epochs.csv"];
    args.extend_from_slice(TRAIN);
    icq(dir, &args)
}

#[test]
fn full_pipeline_and_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    gen(dir, "data", "1");
    gen(dir, "again", "1");
    for f in ["train.icqd", "test.icqd", "informative_dims.txt"] {
        assert_eq!(
            std::fs::read(dir.join("data").join(f)).unwrap(),
            std::fs::read(dir.join("again").join(f)).unwrap()
        );
    }
    let dims = std::fs::read_to_string(dir.join("data/informative_dims.txt")).unwrap();
    assert_eq!(dims.lines().count(), 5);

    let o = train(dir, "a.icqi");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config: K=4 m=32"));
    assert_eq!(code(&train(dir, "b.icqi")), 0);
    assert_eq!(std::fs::read(dir.join("a.icqi")).unwrap(), std::fs::read(dir.join("b.icqi")).unwrap());
    let report = std::fs::read_to_string(dir.join("epochs.csv")).unwrap();
    assert!(report.starts_with("epoch,L_C,L_P,L_ICQ,L_E,psi,K_fast\n"));
    assert_eq!(report.lines().count(), 3);

    let o = icq(dir, &["inspect", "--index", "a.icqi"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let line = text.lines().find(|l| l.starts_with("|K_fast|=")).unwrap();
    let nums: Vec<usize> = line
        .split_whitespace()
        .take(2)
        .map(|t| t.split('=').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(nums[0] + nums[1], 4);
    assert_eq!(icq(dir, &["inspect", "--index", "a.icqi"]).stdout, text.as_bytes());

    let search = |extra: &[&str]| {
        let mut args = vec!["search", "--index", "a.icqi", "--queries", "data/test.icqd", "--k", "5"];
        args.extend_from_slice(extra);
        let o = icq(dir, &args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    let degenerate = search(&["--mode", "two-step", "--sigma-scale", "0", "--all-fast"]);
    let exact_all = search(&["--mode", "exact", "--all-fast"]);
    assert_eq!(degenerate, exact_all);
    let two = search(&["--mode", "two-step"]);
    let exact = search(&["--mode", "exact"]);
    for (a, b) in two.lines().skip(1).zip(exact.lines().skip(1)) {
        let ops = |l: &str| l.rsplit(',').next().unwrap().parse::<u64>().unwrap();
        assert!(ops(a) <= ops(b));
    }

    let o = icq(
        dir,
        &["search", "--mode", "brute", "--database", "data/train.icqd", "--queries", "data/train.icqd", "--k", "1"],
    );
    assert_eq!(code(&o), 0);
    for (i, l) in String::from_utf8(o.stdout).unwrap().lines().skip(1).take(50).enumerate() {
        assert_eq!(l.split(',').nth(1).unwrap(), i.to_string());
    }

    let bench = |out: &str| {
        let mut args = vec![
            "bench", "--train", "data/train.icqd", "--unseen-fraction", "0.7", "--truth", "labels", "--depth", "50",
            "--recall-at", "1,10", "--out", out,
        ];
        args.extend_from_slice(TRAIN);
        let o = icq(dir, &args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stderr).unwrap()
    };
    let log = bench("b1.csv");
    assert!(log.contains("split: train classes"));
    let split_line = log.lines().find(|l| l.starts_with("split:")).unwrap();
    let unseen = split_line.split("unseen classes").nth(1).unwrap();
    assert_eq!(unseen.matches(',').count() + 1, 3);
    bench("b2.csv");
    let b1 = std::fs::read_to_string(dir.join("b1.csv")).unwrap();
    assert_eq!(b1, std::fs::read_to_string(dir.join("b2.csv")).unwrap());
    let header = b1.lines().next().unwrap();
    for col in ["map", "recall@10", "avg_ops", "effective_code_length"] {
        assert!(header.split(',').any(|c| c == col));
    }

    // Usage errors.
    assert_eq!(code(&icq(dir, &["gen", "--n-train", "10"])), 2);
    assert_eq!(code(&icq(dir, &["inspect", "--index", "a.icqi", "--bogus"])), 2);
    assert_eq!(code(&icq(dir, &["search", "--index", "a.icqi", "--queries", "data/test.icqd", "--k", "100000"])), 2);
    let mut bad = vec!["train", "--in", "data/train.icqd", "--out", "c.icqi"];
    bad.extend_from_slice(&["--K", "0"]);
    assert_eq!(code(&icq(dir, &bad)), 2);

    // Runtime errors.
    let mut corrupt = std::fs::read(dir.join("a.icqi")).unwrap();
    corrupt.truncate(corrupt.len() / 2);
    std::fs::write(dir.join("broken.icqi"), corrupt).unwrap();
    let o = icq(dir, &["inspect", "--index", "broken.icqi"]);
    assert_eq!(code(&o), 1);
    assert!(o.stdout.is_empty());
    assert_eq!(code(&icq(dir, &["inspect", "--index", "missing.icqi"])), 1);
}

#[test]
fn plain_additive_quantization_run_completes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen(dir, "data", "2");
    let mut args = vec!["train", "--in", "data/train.icqd", "--out", "plain.icqi", "--gamma1", "0", "--gamma2", "0"];
    args.extend_from_slice(TRAIN);
    let o = icq(dir, &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}
