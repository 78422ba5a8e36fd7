//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use tabaudit_core::backend::BackendSpec;
use tabaudit_core::confound::{classify_predictable_columns, ColumnClass, Thresholds, VerdictLevel};
use tabaudit_core::ingest::read_dataset_file;
use tabaudit_core::manifest::{DatasetSpec, InputFile, RunManifest};
use tabaudit_core::pipeline::{baseline, prepare_dataset, run_audit, run_dataset, transcripts_for, PreparedDataset};
use tabaudit_core::prompt::{Role, SYSTEM_MESSAGE};
use tabaudit_core::report::{
    ansi_row, diff_row_with, load_results, AuditReport, Granularity, ReportConfig, SUMMARY_FILE,
};
use tabaudit_core::rng::SplitMix64;
use tabaudit_core::sampler::AuditConfig;
use tabaudit_core::scoring::{levenshtein_distance, levenshtein_ratio};

// Pinned limits and tolerances.
const EXHAUSTIVE_MAX_LEN: usize = 6;
const NAIVE_MAX_TOTAL: usize = 8;
const EXHAUSTIVE_TIME_LIMIT: Duration = Duration::from_secs(60);
const METRIC_PAIRS: usize = 10_000;
const RATIO_PAIRS: usize = 1_000;
const SYNTHETIC_ROWS: usize = 5_000;
const SYNTHETIC_TIME_LIMIT: Duration = Duration::from_secs(10);
const RANDOM_MARGIN: f64 = 0.05;
const COPY_SEEDS: u64 = 20;
const DUP_LEVELS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
const NOISE_LEVELS: [f64; 4] = [0.0, 0.05, 0.2, 0.5];
const DIFF_PAIRS: usize = 1_000;
const REFERENCE_MEANS: [(&str, f64); 5] = [
    ("capture24", 0.9357),
    ("hhar", 0.863),
    ("mhealth", 0.7789),
    ("daphnet_fog", 0.8074),
    ("pamap2", 0.7417),
];
const EXPECTED_SYSTEM_MESSAGE: &str = "You are a helpful autocomplete bot for wearable sensor datasets. Your task is to provide rows as they are contained in sensor datasets. The user provides a number of contiguous rows from a sensor dataset. You then provide the next row from the dataset.";

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Independent edit-distance oracles.

/// Textbook recursion without memoization.
fn naive_distance(a: &[u8], b: &[u8]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            if x == y {
                naive_distance(ra, rb)
            } else {
                1 + naive_distance(ra, b).min(naive_distance(a, rb)).min(naive_distance(ra, rb))
            }
        }
    }
}

/// The same recursion over suffixes, memoized.
fn memo_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn go<T: PartialEq>(a: &[T], b: &[T], i: usize, j: usize, memo: &mut [Option<usize>], w: usize) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(v) = memo[i * w + j] {
            return v;
        }
        let v = if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo, w)
        } else {
            1 + go(a, b, i + 1, j, memo, w)
                .min(go(a, b, i, j + 1, memo, w))
                .min(go(a, b, i + 1, j + 1, memo, w))
        };
        memo[i * w + j] = Some(v);
        v
    }
    let w = b.len() + 1;
    let mut memo = vec![None; (a.len() + 1) * w];
    go(a, b, 0, 0, &mut memo, w)
}

const ALPHABET: [u8; 5] = [b'a', b'b', b'0', b'1', b','];

/// Visits every pair (a, b) with |a|, |b| <= max_len over `ALPHABET`, up to a
/// consistent relabeling of symbols. Edit distance is invariant under
/// relabeling, so every pair has the distance of its canonical representative.
fn for_each_canonical_pair(max_len: usize, mut f: impl FnMut(&[u8], &[u8])) -> usize {
    fn rgs(buf: &mut Vec<u8>, n: usize, la: usize, used: u8, f: &mut impl FnMut(&[u8], &[u8]), count: &mut usize) {
        if buf.len() == n {
            *count += 1;
            f(&buf[..la], &buf[la..]);
            return;
        }
        for sym in 0..(used + 1).min(ALPHABET.len() as u8) {
            buf.push(ALPHABET[sym as usize]);
            rgs(buf, n, la, used.max(sym + 1), f, count);
            buf.pop();
        }
    }
    let mut count = 0;
    let mut buf = Vec::new();
    for la in 0..=max_len {
        for lb in 0..=max_len {
            rgs(&mut buf, la + lb, la, 0, &mut f, &mut count);
        }
    }
    count
}

fn as_str(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).expect("ascii")
}

fn random_string(rng: &mut SplitMix64, alphabet: &[char], max_len: usize) -> String {
    let len = rng.below(max_len as u64 + 1) as usize;
    (0..len).map(|_| alphabet[rng.below(alphabet.len() as u64) as usize]).collect()
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut mismatches = 0usize;
    let mut first = None;
    let count = for_each_canonical_pair(EXHAUSTIVE_MAX_LEN, |a, b| {
        let expected = memo_distance(a, b);
        let got = levenshtein_distance(as_str(a), as_str(b));
        if expected != got {
            mismatches += 1;
            first.get_or_insert_with(|| format!("{:?} vs {:?}: {got} != {expected}", as_str(a), as_str(b)));
        }
        if a.len() + b.len() <= NAIVE_MAX_TOTAL && naive_distance(a, b) != expected {
            mismatches += 1;
            first.get_or_insert_with(|| format!("oracles disagree on {:?} vs {:?}", as_str(a), as_str(b)));
        }
    });
    let exhaustive_time = started.elapsed();
    ensure(mismatches == 0, || format!("{mismatches} mismatches, first {}", first.unwrap_or_default()))?;
    ensure(exhaustive_time <= EXHAUSTIVE_TIME_LIMIT, || {
        format!("exhaustive check took {exhaustive_time:?}")
    })?;

    let mut rng = SplitMix64::new(11);
    let alphabet: Vec<char> = "0123456789.,-é".chars().collect();
    for _ in 0..METRIC_PAIRS {
        let a = random_string(&mut rng, &alphabet, 12);
        let b = random_string(&mut rng, &alphabet, 12);
        let c = random_string(&mut rng, &alphabet, 12);
        let ab = levenshtein_distance(&a, &b);
        ensure(levenshtein_distance(&a, &a) == 0, || format!("d({a:?},{a:?}) != 0"))?;
        ensure((ab == 0) == (a == b), || format!("identity fails on {a:?} {b:?}"))?;
        ensure(ab == levenshtein_distance(&b, &a), || format!("asymmetric on {a:?} {b:?}"))?;
        ensure(
            levenshtein_distance(&a, &c) <= ab + levenshtein_distance(&b, &c),
            || format!("triangle fails on {a:?} {b:?} {c:?}"),
        )?;
    }
    Ok(format!(
        "{count} canonical pairs up to length {EXHAUSTIVE_MAX_LEN} match the memoized oracle, naive recursion agrees up to total length {NAIVE_MAX_TOTAL} ({:.1}s); metric axioms hold on {METRIC_PAIRS} random triples",
        exhaustive_time.as_secs_f64()
    ))
}

fn criterion_2() -> Outcome {
    let mut rng = SplitMix64::new(22);
    let alphabet: Vec<char> = "0123456789.,- é".chars().collect();
    for _ in 0..RATIO_PAIRS {
        let a = random_string(&mut rng, &alphabet, 30);
        let b = random_string(&mut rng, &alphabet, 30);
        let ca: Vec<char> = a.chars().collect();
        let cb: Vec<char> = b.chars().collect();
        let total = ca.len() + cb.len();
        let expected = if total == 0 {
            1.0
        } else {
            1.0 - memo_distance(&ca, &cb) as f64 / total as f64
        };
        let got = levenshtein_ratio(&a, &b);
        ensure(got.to_bits() == expected.to_bits(), || format!("ratio({a:?}, {b:?}) = {got}, expected {expected}"))?;
    }
    ensure(levenshtein_ratio("", "") == 1.0, || "ratio of two empty strings is not 1".into())?;
    Ok(format!("{RATIO_PAIRS} random pairs bit-equal to 1 - d/(|a|+|b|); empty pair gives 1.0"))
}

// ---------------------------------------------------------------------------
// Synthetic datasets.

fn write_file(dir: &Path, name: &str, rows: &[String]) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, rows.join("\n")).expect("write dataset");
    path
}

fn unique_rows(n: usize, seed: u64) -> Vec<String> {
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|i| {
            let mut row = format!("{}", 1000 + i * 20);
            for _ in 0..4 {
                row.push_str(&format!(",{:.4}", rng.unit() * 2.0 - 1.0));
            }
            row
        })
        .collect()
}

fn prepare(name: &str, paths: &[PathBuf], audit: &AuditConfig) -> Result<PreparedDataset, String> {
    let inputs: Vec<InputFile> = paths
        .iter()
        .map(|p| InputFile {
            path: p.clone(),
            parse: None,
        })
        .collect();
    prepare_dataset(name, &inputs, audit).map_err(|e| e.to_string())
}

async fn run_with(prepared: &PreparedDataset, spec: BackendSpec, config: &ReportConfig) -> Result<AuditReport, String> {
    let backend = spec.build(prepared.file_index(), None).map_err(|e| e.to_string())?;
    run_dataset(prepared, backend.as_ref(), config, 4, None)
        .await
        .map_err(|e| e.to_string())
}

async fn criterion_3(dir: &Path) -> Outcome {
    let rows = unique_rows(SYNTHETIC_ROWS, 33);
    let distinct_successors = rows.windows(2).all(|w| w[0] != w[1]);
    ensure(distinct_successors, || "fixture has duplicated successors".into())?;
    let path = write_file(dir, "synthetic.csv", &rows);
    let started = Instant::now();
    let config = ReportConfig::default();
    let prepared = prepare("synthetic", &[path], &config.audit)?;
    let memo = run_with(&prepared, BackendSpec::Memorizer, &config).await?;
    let random = run_with(&prepared, BackendSpec::Random { seed: 3 }, &config).await?;
    let elapsed = started.elapsed();

    let m = &memo.dataset_score;
    ensure(m.dataset_mean == 1.0, || format!("memorizer mean {}", m.dataset_mean))?;
    ensure(memo.verdict.level == VerdictLevel::StrongEvidence, || {
        format!("memorizer verdict {}", memo.verdict.level)
    })?;
    let copy = random.confound.copy_baseline_mean;
    let r = random.dataset_score.dataset_mean;
    ensure(r < copy + RANDOM_MARGIN, || format!("random mean {r} not below copy {copy} + {RANDOM_MARGIN}"))?;
    ensure(
        matches!(random.verdict.level, VerdictLevel::NoEvidence | VerdictLevel::WeakEvidence),
        || format!("random verdict {}", random.verdict.level),
    )?;
    ensure(elapsed <= SYNTHETIC_TIME_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "memorizer 1.0 strong_evidence; random {r:.4} vs copy {copy:.4} -> {}; {:.2}s",
        random.verdict.level,
        elapsed.as_secs_f64()
    ))
}

async fn criterion_4(dir: &Path) -> Outcome {
    let a = write_file(dir, "copy_a.csv", &unique_rows(400, 41));
    let b = write_file(dir, "copy_b.csv", &unique_rows(250, 42));
    for seed in 0..COPY_SEEDS {
        let config = ReportConfig {
            audit: AuditConfig {
                seed,
                ..AuditConfig::default()
            },
            ..ReportConfig::default()
        };
        let prepared = prepare("copy", &[a.clone(), b.clone()], &config.audit)?;
        let report = run_with(&prepared, BackendSpec::Copy, &config).await?;
        let score = report.dataset_score.dataset_mean;
        let copy = report.confound.copy_baseline_mean;
        ensure(score.to_bits() == copy.to_bits(), || format!("seed {seed}: copy_last {score} != baseline {copy}"))?;
    }
    Ok(format!("copy_last equals the copy baseline bit for bit on {COPY_SEEDS} seeds"))
}

async fn criterion_5(dir: &Path) -> Outcome {
    let n = 600;
    let base = unique_rows(n, 51);
    let mut rng = SplitMix64::new(52);
    let uniforms: Vec<f64> = (0..n).map(|_| rng.unit()).collect();
    let mut means = Vec::new();
    let mut last_report = None;
    for (k, &d) in DUP_LEVELS.iter().enumerate() {
        let mut rows: Vec<String> = Vec::with_capacity(n);
        for i in 0..n {
            let row = if i > 0 && uniforms[i] < d { rows[i - 1].clone() } else { base[i].clone() };
            rows.push(row);
        }
        let path = write_file(dir, &format!("dup_{k}.csv"), &rows);
        let config = ReportConfig::default();
        let prepared = prepare("dup", &[path], &config.audit)?;
        let b = baseline(&prepared, &config.audit, &config.thresholds, &config.scoring);
        means.push(b.confound.copy_baseline_mean);
        if d == 1.0 {
            last_report = Some(run_with(&prepared, BackendSpec::Copy, &config).await?);
        }
    }
    ensure(means.windows(2).all(|w| w[0] <= w[1]), || format!("copy means not monotone: {means:?}"))?;
    ensure(means[means.len() - 1] == 1.0, || format!("full duplication copy mean {}", means[means.len() - 1]))?;
    let report = last_report.expect("d = 1 ran");
    ensure(report.verdict.level == VerdictLevel::Confounded, || {
        format!("full duplication verdict {}", report.verdict.level)
    })?;
    let shown: Vec<String> = means.iter().map(|m| format!("{m:.4}")).collect();
    Ok(format!("copy baseline over d={DUP_LEVELS:?}: [{}]; d=1 confounded", shown.join(", ")))
}

async fn criterion_6(dir: &Path) -> Outcome {
    let path = write_file(dir, "noisy.csv", &unique_rows(800, 61));
    let config = ReportConfig::default();
    let prepared = prepare("noisy", &[path], &config.audit)?;
    let mut means = Vec::new();
    for p in NOISE_LEVELS {
        let report = run_with(&prepared, BackendSpec::Noisy { p, seed: 7 }, &config).await?;
        means.push(report.dataset_score.dataset_mean);
    }
    ensure(means[0] == 1.0, || format!("p=0 mean {}", means[0]))?;
    ensure(means.windows(2).all(|w| w[0] > w[1]), || format!("means not decreasing: {means:?}"))?;
    let shown: Vec<String> = means.iter().map(|m| format!("{m:.4}")).collect();
    Ok(format!("means over p={NOISE_LEVELS:?}: [{}]", shown.join(", ")))
}

fn criterion_7(dir: &Path) -> Outcome {
    let mut rng = SplitMix64::new(71);
    let mut t = 0u64;
    let mut label = 0u64;
    let mut block_left = 0u64;
    let rows: Vec<String> = (0..2000)
        .map(|_| {
            t += 15 + rng.below(2);
            if block_left == 0 {
                label = rng.below(3);
                block_left = 100 + rng.below(200);
            }
            block_left -= 1;
            let mut row = format!("1,{t},{label}");
            for _ in 0..5 {
                row.push_str(&format!(",{:.4}", rng.unit() * 20.0 - 10.0));
            }
            row
        })
        .collect();
    let path = write_file(dir, "columns.csv", &rows);
    let file = read_dataset_file(&path, None).map_err(|e| e.to_string())?;
    let found: Vec<(usize, ColumnClass)> = classify_predictable_columns(&file, &Thresholds::default())
        .into_iter()
        .map(|c| (c.index, c.class))
        .collect();
    let expected = vec![
        (0, ColumnClass::Constant),
        (1, ColumnClass::FixedIncrementTimestamp),
        (2, ColumnClass::LowCardinalityLabel),
    ];
    ensure(found == expected, || format!("flagged {found:?}"))?;
    Ok("constant, timestamp and label columns flagged; 5 i.i.d. columns left alone".into())
}

fn escape_codes(s: &str) -> BTreeSet<String> {
    let mut codes = BTreeSet::new();
    let mut rest = s;
    while let Some(pos) = rest.find('\x1b') {
        let tail = &rest[pos..];
        let end = tail.find('m').map(|e| e + 1).unwrap_or(tail.len());
        codes.insert(tail[..end].to_string());
        rest = &tail[end..];
    }
    codes
}

fn criterion_8() -> Outcome {
    let mut rng = SplitMix64::new(81);
    let allowed: BTreeSet<String> = ["\x1b[32m", "\x1b[31m", "\x1b[35m", "\x1b[0m"].iter().map(|s| s.to_string()).collect();
    let mut equal_pairs = 0;
    for i in 0..DIFF_PAIRS {
        let cells = 1 + rng.below(6) as usize;
        let gt: Vec<String> = (0..cells).map(|_| format!("{}", rng.below(30))).collect();
        let mut gen = gt.clone();
        if rng.below(2) == 0 {
            match rng.below(3) {
                0 => gen.push(format!("{}", rng.below(30))),
                1 if gen.len() > 1 => {
                    gen.pop();
                }
                _ => {
                    let j = rng.below(gen.len() as u64) as usize;
                    gen[j] = format!("{}", 30 + rng.below(30));
                }
            }
        }
        let extra: Vec<String> = if rng.below(10) == 0 { vec!["7,7".into()] } else { Vec::new() };
        let gt_row = gt.join(",");
        let gen_row = gen.join(",");
        let granularity = if i % 2 == 0 { Granularity::Cell } else { Granularity::Char };
        let diff = diff_row_with(&gt_row, &gen_row, &extra, ',', granularity);
        let equal = gt_row == gen_row && extra.is_empty();
        equal_pairs += usize::from(equal);
        ensure(diff.is_all_green() == equal, || {
            format!("{gt_row:?} vs {gen_row:?} (extra {extra:?}): all green {}", diff.is_all_green())
        })?;
        let codes = escape_codes(&ansi_row(&diff));
        ensure(codes.is_subset(&allowed), || format!("unexpected escape codes {codes:?}"))?;
    }
    let sample = ansi_row(&diff_row_with("1,2,3", "1,9,3,4", &[], ',', Granularity::Cell));
    let colors: Vec<String> = escape_codes(&sample).into_iter().filter(|c| c != "\x1b[0m").collect();
    ensure(colors.len() == 3, || format!("mixed diff uses {colors:?}"))?;
    Ok(format!("{DIFF_PAIRS} pairs ({equal_pairs} equal): all-green iff equal; only codes 31/32/35 plus reset"))
}

async fn criterion_9(dir: &Path) -> Outcome {
    let path = write_file(dir, "replay.csv", &unique_rows(300, 91));
    let cache = dir.join("replay_cache.jsonl");
    let manifest = |backend: BackendSpec, out: &str| RunManifest {
        datasets: vec![DatasetSpec {
            name: "replayed".into(),
            paths: vec![path.to_string_lossy().into_owned()],
            parse: Default::default(),
        }],
        backend: Some(backend),
        out: Some(dir.join(out)),
        cache: Some(cache.clone()),
        ..RunManifest::default()
    };
    run_audit(&manifest(BackendSpec::Memorizer, "recorded"), None)
        .await
        .map_err(|e| e.to_string())?;
    run_audit(&manifest(BackendSpec::Replay, "replayed_run"), None)
        .await
        .map_err(|e| e.to_string())?;
    let read = |p: PathBuf| std::fs::read(&p).map_err(|e| format!("{}: {e}", p.display()));
    let recorded = read(dir.join("recorded/replayed").join(SUMMARY_FILE))?;
    let replayed = read(dir.join("replayed_run/replayed").join(SUMMARY_FILE))?;
    ensure(recorded == replayed, || "replayed summary differs from the recording".into())?;

    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/reference");
    let mut loaded = HashMap::new();
    for (slug, expected) in REFERENCE_MEANS {
        let report = load_results(&fixtures.join(slug)).map_err(|e| format!("{slug}: {e}"))?;
        let got = report.dataset_score.dataset_mean;
        ensure(got.to_bits() == expected.to_bits(), || format!("{slug}: {got} != {expected}"))?;
        loaded.insert(slug, got);
    }
    Ok(format!(
        "replay summary byte-identical ({} bytes); {} reference result files reproduce their means exactly",
        recorded.len(),
        loaded.len()
    ))
}

fn criterion_10(dir: &Path) -> Outcome {
    ensure(SYSTEM_MESSAGE == EXPECTED_SYSTEM_MESSAGE, || "system message drifted".into())?;
    let path = write_file(dir, "prompt.csv", &unique_rows(300, 101));
    let config = ReportConfig::default();
    let prepared = prepare("prompt", &[path], &config.audit)?;
    let planned = &prepared.files[0];
    let transcripts = transcripts_for(planned, &config).map_err(|e| e.to_string())?;
    for (trial, transcript) in planned.plan.trials.iter().zip(&transcripts) {
        let m = &transcript.messages;
        ensure(m.len() == 16, || format!("trial {} has {} messages", trial.trial_id, m.len()))?;
        ensure(m[0].role == Role::System && m[0].content == EXPECTED_SYSTEM_MESSAGE, || "first message is not the system message".into())?;
        ensure(m[15].role == Role::User, || "last message is not the test prefix".into())?;
        let target = &trial.test.target_row;
        ensure(m.iter().all(|msg| !msg.content.contains(target.as_str())), || {
            format!("trial {}: target row {target:?} leaks into the prompt", trial.trial_id)
        })?;
    }
    Ok(format!(
        "system message pinned ({} bytes); {} transcripts of 16 messages with no target leakage",
        SYSTEM_MESSAGE.len(),
        transcripts.len()
    ))
}

fn main() {
    // Accept libtest flags so `cargo test` filters do not break the target.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance criterion".contains(a.as_str())) {
        return;
    }
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("runtime");
    let dir = tempfile::tempdir().expect("temp dir");
    let d = dir.path();
    let results: Vec<(&str, Outcome)> = vec![
        ("edit distance matches independent oracles", criterion_1()),
        ("ratio formula", criterion_2()),
        ("memorizer and random controls", runtime.block_on(criterion_3(d))),
        ("copy_last equals copy baseline", runtime.block_on(criterion_4(d))),
        ("copy baseline tracks duplication", runtime.block_on(criterion_5(d))),
        ("noisy memorizer degrades with noise", runtime.block_on(criterion_6(d))),
        ("predictable column detection", criterion_7(d)),
        ("diff colouring", criterion_8()),
        ("replay and reference results", runtime.block_on(criterion_9(d))),
        ("prompt layout", criterion_10(d)),
    ];
    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("{}/{} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
