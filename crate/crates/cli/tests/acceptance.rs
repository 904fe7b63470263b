//! Acceptance suite. Each test checks one criterion and prints a single
//! `PASS` or `FAIL` line with its measurements. Timed criteria run one at a
//! time so their wall-clock budgets are measured without contention.
//!
//! Run with `cargo test -p mise-lab --test acceptance -- --nocapture`.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use mise_core::crf::{log_partition, path_score, viterbi, Transitions};
use mise_core::data::{generate_corpus, parse_corpus, render_corpus, CorpusFormat, FieldMap, SynthConfig};
use mise_core::encoder::{EncoderConfig, Vocabulary};
use mise_core::episodes::{split_periods, Corpus};
use mise_core::meta::{
    adapt_with_inheritance, fine_tune, gradient_suite, ki_loss, meta_train, soft_labels, softmax_rows, tiny_model,
    total_loss, train_scratch_baseline, AdaptOptions, Dataset, Instance, ModelConfig, Sealed, Tagger, TrainConfig,
};
use mise_core::metrics::{forgetting_study, kshot_eval, Adaptation, EvalConfig, ForgetConfig};
use mise_core::numcore::rng::rng_from;
use mise_core::tagging::{decode_tags, encode_spans, is_valid, Span, Tag, NUM_TAGS};
use mise_core::Tensor;
use mise_lab::{Flags, Report, RunConfig};
use rand::Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Whether a failing criterion also fails the test run.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Gate {
    /// Exact or deterministic properties: a failure is a defect.
    Hard,
    /// Directional experimental trends: the verdict is printed and the
    /// run continues.
    Reported,
}

/// Prints the verdict line outside the test harness's output capture.
fn verdict(criterion: u32, gate: Gate, pass: bool, detail: String) {
    let line = format!("{} criterion {criterion}: {detail}", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").ok();
    out.flush().ok();
    assert!(pass || gate == Gate::Reported, "{line}");
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

fn all_sequences(n: usize) -> impl Iterator<Item = Vec<Tag>> {
    (0..NUM_TAGS.pow(n as u32)).map(move |mut code| {
        (0..n)
            .map(|_| {
                let t = Tag::ALL[code % NUM_TAGS];
                code /= NUM_TAGS;
                t
            })
            .collect()
    })
}

fn random_tensor(rng: &mut impl Rng, shape: Vec<usize>, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

#[test]
fn criterion_1_crf_matches_brute_force() {
    let _guard = serial();
    let start = Instant::now();
    let mut worst_lz = 0.0f64;
    let mut worst_vit = 0.0f64;
    for f in 0..500u64 {
        let mut rng = rng_from(1, &[f]);
        let n = 1 + (f as usize % 6);
        let em = random_tensor(&mut rng, vec![n, NUM_TAGS], 3.0);
        let tm = random_tensor(&mut rng, vec![NUM_TAGS, NUM_TAGS], 3.0);
        let st = random_tensor(&mut rng, vec![NUM_TAGS], 3.0);
        let en = random_tensor(&mut rng, vec![NUM_TAGS], 3.0);
        let tr = if f % 2 == 0 {
            Transitions::new(&tm)
        } else {
            Transitions::with_boundaries(&tm, &st, &en)
        };
        let scores: Vec<(Vec<Tag>, f64)> = all_sequences(n).map(|s| {
            let v = path_score(&em, &tr, &s).unwrap();
            (s, v)
        }).collect();
        let max = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let brute_lz = max + scores.iter().map(|s| (s.1 - max).exp()).sum::<f64>().ln();
        worst_lz = worst_lz.max((log_partition(&em, &tr).unwrap() - brute_lz).abs());

        let (path, score) = viterbi(&em, &tr, false).unwrap();
        worst_vit = worst_vit.max((score - max).abs()).max((path_score(&em, &tr, &path).unwrap() - max).abs());

        let valid_max = scores.iter().filter(|s| is_valid(&s.0)).map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let (cpath, cscore) = viterbi(&em, &tr, true).unwrap();
        assert!(is_valid(&cpath));
        worst_vit = worst_vit.max((cscore - valid_max).abs());
    }
    let elapsed = start.elapsed();
    let pass = worst_lz < 1e-9 && worst_vit < 1e-9 && elapsed < Duration::from_secs(30);
    verdict(
        1,
        Gate::Hard,
        pass,
        format!(
            "500 fixtures, max |log Z - brute| = {worst_lz:.2e}, max viterbi gap = {worst_vit:.2e}, {}",
            secs(elapsed)
        ),
    );
}

#[test]
fn criterion_2_gradient_suite() {
    let _guard = serial();
    let start = Instant::now();
    let suite = gradient_suite(20, 2024).unwrap();
    let elapsed = start.elapsed();
    let max_params = suite.rows.iter().map(|r| r.params).max().unwrap_or(0);
    let pass = suite.rows.len() == 20 && suite.max_rel_error < 1e-4 && elapsed < Duration::from_secs(60);
    verdict(
        2,
        Gate::Hard,
        pass,
        format!(
            "20 models of at most {max_params} parameters, max_rel_error = {:.2e} over nll, ki and total, {}",
            suite.max_rel_error,
            secs(elapsed)
        ),
    );
}

fn small_corpus(seed: u64) -> Corpus {
    generate_corpus(&SynthConfig {
        posts_per_period: 60,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn encoder_setup(corpus: &Corpus) -> (Tagger, Dataset) {
    let vocab = Vocabulary::build(corpus.posts.iter().flat_map(|p| p.tokens.iter().map(String::as_str)));
    let data = Dataset::from_corpus(corpus, &vocab).unwrap();
    (Tagger::new(ModelConfig::encoder(vocab.len(), EncoderConfig::default())), data)
}

#[test]
fn criterion_3_distillation_identities() {
    let corpus = small_corpus(3);
    let (tagger, data) = encoder_setup(&corpus);
    let teacher = tagger.init_params(1).unwrap();
    let query: Vec<&Instance> = data.instances.iter().take(15).collect();
    let sealed = Sealed::new(&query);

    let mut self_ki = 0.0f64;
    let mut worst_sum = 0.0f64;
    for t in [1.0, 5.0, 9.0] {
        let grid = soft_labels(&tagger, &teacher, sealed, t).unwrap();
        self_ki = self_ki.max(ki_loss(&tagger, &teacher, sealed, &grid).unwrap().abs());
        for m in &grid.rows {
            for r in 0..m.rows() {
                worst_sum = worst_sum.max((m.row(r).iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    let small = tiny_model();
    let tiny_teacher = small.init_params(2).unwrap();
    let tiny_post = Instance::new(mise_core::meta::Input::Ids(vec![2, 3, 4, 5]), None).unwrap();
    let tiny_refs = [&tiny_post];
    let tiny_grid = soft_labels(&small, &tiny_teacher, Sealed::new(&tiny_refs), 3.0).unwrap();
    self_ki = self_ki.max(ki_loss(&small, &tiny_teacher, Sealed::new(&tiny_refs), &tiny_grid).unwrap().abs());

    let mut worst_uniform = 0.0f64;
    for post in &query {
        let logits = tagger.emissions(&teacher, &post.input).unwrap();
        let soft = softmax_rows(&logits, 1e6);
        for &p in soft.data() {
            worst_uniform = worst_uniform.max((p - 1.0 / NUM_TAGS as f64).abs());
        }
    }

    let mut rng = rng_from(3, &[]);
    let mut endpoints = true;
    for _ in 0..1000 {
        let (crf, ki) = (rng.gen_range(0.0..50.0), rng.gen_range(0.0..50.0));
        endpoints &= total_loss(crf, ki, 0.0).unwrap().to_bits() == crf.to_bits();
        endpoints &= total_loss(crf, ki, 1.0).unwrap().to_bits() == ki.to_bits();
    }
    let pass = self_ki < 1e-12 && worst_sum < 1e-9 && worst_uniform < 1e-5 && endpoints;
    verdict(
        3,
        Gate::Hard,
        pass,
        format!(
            "ki(teacher, teacher) = {self_ki:e}, max |row sum - 1| = {worst_sum:.1e}, t=1e6 max |p - 1/5| = {worst_uniform:.1e}, λ endpoints exact: {endpoints}"
        ),
    );
}

#[test]
fn criterion_4_lambda_zero_matches_the_no_inheritance_path() {
    let corpus = small_corpus(4);
    let (tagger, data) = encoder_setup(&corpus);
    let split = split_periods(&corpus).unwrap();
    let meta = tagger.init_params(5).unwrap();
    let mut identical = 0;
    let mut compared = 0;
    for (seed, dropout) in [(1u64, false), (2, false), (3, true), (4, true)] {
        let cfg = TrainConfig {
            lambda: 0.0,
            adapt_dropout: dropout,
            seed,
            ..TrainConfig::default()
        };
        let (_, task) = mise_core::metrics::episode_task(&split, 5, 15, seed, 0).unwrap();
        let support = data.select(&task.support);
        let query = data.select(&task.eval);
        let opts = AdaptOptions { seed, record: true };
        let mise = adapt_with_inheritance(&tagger, &meta, &support, Sealed::new(&query), &cfg, opts).unwrap();
        let plain = fine_tune(&tagger, &meta, &support, &cfg, opts).unwrap();
        compared += 1;
        let same_path = mise.trajectory.len() == cfg.adapt_steps + 1
            && mise.trajectory.len() == plain.trajectory.len()
            && mise.trajectory.iter().zip(&plain.trajectory).all(|(a, b)| a.bit_eq(b));
        if same_path && mise.params.bit_eq(&plain.params) {
            identical += 1;
        }
    }
    verdict(
        4,
        Gate::Hard,
        identical == compared,
        format!("{identical} of {compared} seeded adaptations bit-identical at every step (two with dropout on)"),
    );
}

/// Training steps used by the trend experiments. The protocol's 5000-step
/// cap does not fit the time budget on one core.
const TREND_STEPS: usize = 300;

#[test]
fn criterion_5_shot_and_ablation_trends() {
    let _guard = serial();
    let start = Instant::now();
    let corpus = generate_corpus(&SynthConfig::default()).unwrap();
    let (tagger, data) = encoder_setup(&corpus);
    let split = split_periods(&corpus).unwrap();
    let train = TrainConfig {
        max_steps: TREND_STEPS,
        snapshot_every: 0,
        ..TrainConfig::default()
    };
    let init = tagger.init_params(train.seed).unwrap();
    let meta = meta_train(&tagger, &data, &split, &train, init.clone(), &mut |_| {}).unwrap().params;
    let scratch = train_scratch_baseline(&tagger, &data, &split, &train, init, &mut |_| {}).unwrap().params;
    let ec = EvalConfig {
        train,
        ..EvalConfig::default()
    };
    let plain = EvalConfig {
        adaptation: Adaptation::FineTune,
        ..ec
    };
    let f1 = |start, k, cfg: &EvalConfig| kshot_eval(&tagger, start, &data, &split, k, cfg).unwrap().mean.f1;
    let (k3, k5, k10) = (f1(&meta, 3, &ec), f1(&meta, 5, &ec), f1(&meta, 10, &ec));
    let without_i = f1(&meta, 5, &plain);
    let without_m = f1(&scratch, 5, &plain);
    let elapsed = start.elapsed();
    let shots = k10 >= k5 && k5 >= k3;
    let ablation = k5 >= without_i && without_i >= without_m;
    let pass = shots && ablation && elapsed < Duration::from_secs(600);
    verdict(
        5,
        Gate::Reported,
        pass,
        format!(
            "{} episodes, F1 K=3 {k3:.4}, K=5 {k5:.4}, K=10 {k10:.4} (ordered: {shots}); K=5 MISE {k5:.4}, w/o I {without_i:.4}, w/o M {without_m:.4} (ordered: {ablation}); {}",
            ec.episodes,
            secs(elapsed)
        ),
    );
}

#[test]
fn criterion_6_forgetting_gap() {
    let _guard = serial();
    let start = Instant::now();
    let corpus = generate_corpus(&SynthConfig::default()).unwrap();
    let (tagger, data) = encoder_setup(&corpus);
    let split = split_periods(&corpus).unwrap();
    let cfg = ForgetConfig {
        eval: EvalConfig {
            train: TrainConfig {
                max_steps: TREND_STEPS,
                snapshot_every: 0,
                ..TrainConfig::default()
            },
            ..EvalConfig::default()
        },
        ..ForgetConfig::default()
    };
    let report = forgetting_study(&tagger, &data, &split, &cfg).unwrap();
    let elapsed = start.elapsed();
    let gap = 100.0 * (report.mean_mise.f1 - report.mean_fine_tune.f1);
    let pass = report.repeats.len() == 5 && gap >= 2.0 && elapsed < Duration::from_secs(600);
    verdict(
        6,
        Gate::Reported,
        pass,
        format!(
            "5 repeats, retained F1 MISE {:.4} vs λ=0 {:.4}, gap {gap:.2} points (need 2.00), {}",
            report.mean_mise.f1,
            report.mean_fine_tune.f1,
            secs(elapsed)
        ),
    );
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mise-lab"))
}

fn run(dir: &Path, args: &[&str]) {
    let out = bin().current_dir(dir).env_remove(mise_lab::SEED_ENV).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "mise-lab {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn workspace(name: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::Builder::new().prefix(name).tempdir().unwrap();
    let path = dir.path().to_path_buf();
    run(&path, &["synth", "--out", "corpus.jsonl", "--posts-per-period", "60"]);
    run(
        &path,
        &["train", "--data", "corpus.jsonl", "--checkpoint", "meta.ckpt", "--max-steps", "20", "--out", "train.json"],
    );
    (dir, path)
}

#[test]
fn criterion_7_protocol_defaults_are_used_and_echoed() {
    let defaults = RunConfig::resolve(Flags::default(), None, true).unwrap();
    let t = defaults.train;
    let protocol = defaults.shots == [3, 5, 10]
        && t.eval_size == 15
        && defaults.episodes == 50
        && t.lambda == 0.2
        && t.temperature == 5.0
        && t.max_steps == 5000;

    let (_dir, path) = workspace("criterion7");
    run(&path, &["eval", "--data", "corpus.jsonl", "--checkpoint", "meta.ckpt", "--out", "eval.json"]);
    let eval = Report::from_json(&fs::read_to_string(path.join("eval.json")).unwrap()).unwrap();
    let train = Report::from_json(&fs::read_to_string(path.join("train.json")).unwrap()).unwrap();
    let echoed = |r: &Report| {
        let c = &r.config;
        c.episodes == 50
            && c.train.eval_size == 15
            && c.train.lambda == 0.2
            && c.train.temperature == 5.0
            && c.train.max_steps == 5000
    };
    let mut runs_ok = false;
    if let mise_lab::Outcome::Eval(suite) = &eval.result {
        runs_ok = suite.runs.iter().map(|r| r.k).collect::<Vec<_>>() == [3, 5, 10]
            && suite.runs.iter().all(|r| {
                r.episodes.len() == 50
                    && r.episodes.iter().all(|e| e.query.len() == 15 && e.support.len() == r.k)
                    && r.config.episodes == 50
                    && r.config.train.lambda == 0.2
                    && r.config.train.temperature == 5.0
                    && r.config.train.eval_size == 15
                    && r.is_consistent()
            });
    }
    let train_echo = train.config.train.lambda == 0.2 && train.config.train.temperature == 5.0 && train.config.train.eval_size == 15;
    let pass = protocol && eval.config.shots == [3, 5, 10] && echoed(&eval) && runs_ok && train_echo;
    verdict(
        7,
        Gate::Hard,
        pass,
        format!(
            "defaults K=[3,5,10] |Q|=15 episodes=50 λ=0.2 t=5 max_steps=5000: {protocol}; eval report echo and per-run shape: {}; train report echo: {train_echo}",
            echoed(&eval) && runs_ok
        ),
    );
}

#[test]
fn criterion_8_codec_and_corpus_round_trips() {
    let mut rng = rng_from(8, &[]);
    let mut codec_ok = 0;
    for _ in 0..10_000 {
        let len = rng.gen_range(1..30);
        let mut spans = Vec::new();
        let mut i = 0;
        while i < len {
            if rng.gen_bool(0.3) {
                let end = (i + rng.gen_range(0..4)).min(len - 1);
                spans.push(Span::new(i, end));
                i = end + 1 + rng.gen_range(0..3);
            } else {
                i += 1;
            }
        }
        let tags = encode_spans(&spans, len).unwrap();
        if is_valid(&tags) && decode_tags(&tags).spans == spans && !decode_tags(&tags).repaired {
            codec_ok += 1;
        }
    }

    let mut tokens = 0usize;
    let mut invalid = 0usize;
    for seed in [13, 1, 2] {
        let corpus = generate_corpus(&SynthConfig {
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        for post in &corpus.posts {
            tokens += 1;
            invalid += usize::from(!is_valid(post.tags.as_ref().unwrap()));
        }
    }

    let corpus = small_corpus(8);
    let mut stable = true;
    for format in [CorpusFormat::Jsonl, CorpusFormat::Conll] {
        let first = render_corpus(&corpus, format).unwrap();
        let back = parse_corpus(&first, format, &FieldMap::default(), "memory").unwrap();
        stable &= back == corpus && render_corpus(&back, format).unwrap() == first;
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    mise_core::data::save_corpus(&corpus, &path, CorpusFormat::Jsonl).unwrap();
    let (loaded, _) = mise_core::data::load_corpus(&path, CorpusFormat::Jsonl).unwrap();
    let again = dir.path().join("d.jsonl");
    mise_core::data::save_corpus(&loaded, &again, CorpusFormat::Jsonl).unwrap();
    stable &= fs::read(&path).unwrap() == fs::read(&again).unwrap();

    let pass = codec_ok == 10_000 && invalid == 0 && stable;
    verdict(
        8,
        Gate::Hard,
        pass,
        format!(
            "{codec_ok}/10000 span sets round trip; {}/{tokens} generated posts pass transition validation; save/load byte-stable: {stable}",
            tokens - invalid
        ),
    );
}

fn same_file(a: &Path, b: &Path, name: &str) -> bool {
    fs::read(a.join(name)).unwrap() == fs::read(b.join(name)).unwrap()
}

/// Runs `args` in two separate directories holding identical inputs, once
/// with one worker and once with `workers`, and compares the outputs.
fn rerun_matches(a: &Path, b: &Path, args: &[&str], workers: &str, outputs: &[&str]) -> bool {
    run(a, &[args, &["--workers", "1"]].concat());
    run(b, &[args, &["--workers", workers]].concat());
    outputs.iter().all(|o| same_file(a, b, o))
}

#[test]
fn criterion_9_reruns_are_byte_identical_across_worker_counts() {
    let _guard = serial();
    let (_da, a) = workspace("criterion9a");
    let (_db, b) = workspace("criterion9b");
    let (a, b) = (a.as_path(), b.as_path());
    let mut checks: Vec<(&str, bool)> = Vec::new();

    checks.push(("synth", same_file(a, b, "corpus.jsonl")));
    checks.push(("train", same_file(a, b, "train.json") && same_file(a, b, "meta.ckpt")));
    let scratch = [
        "train", "--no-meta", "--data", "corpus.jsonl", "--checkpoint", "s.ckpt", "--max-steps", "10", "--out", "s.json",
    ];
    checks.push(("train --no-meta", rerun_matches(a, b, &scratch, "3", &["s.json", "s.ckpt"])));

    let model = ["--data", "corpus.jsonl", "--checkpoint", "meta.ckpt"];
    let eval = [&model[..], &["eval", "--episodes", "8", "--out", "e.json"]].concat();
    let eval_text = [&model[..], &["eval", "--episodes", "8", "--report-format", "text", "--out", "e.txt"]].concat();
    checks.push((
        "eval",
        rerun_matches(a, b, &eval, "3", &["e.json"]) && rerun_matches(a, b, &eval_text, "2", &["e.txt"]),
    ));
    let adapt = [&model[..], &["adapt", "--out", "a.json", "--save", "a.ckpt"]].concat();
    checks.push(("adapt", rerun_matches(a, b, &adapt, "4", &["a.json", "a.ckpt"])));
    let decode = [&model[..], &["decode", "--out", "d.jsonl"]].concat();
    checks.push(("decode", rerun_matches(a, b, &decode, "2", &["d.jsonl"])));
    let sweep = [&model[..], &["sweep", "--episodes", "1", "--k", "3", "--out", "w.json"]].concat();
    let sweep_ok = rerun_matches(a, b, &sweep, "3", &["w.json"]);
    let report = Report::from_json(&fs::read_to_string(a.join("w.json")).unwrap()).unwrap();
    let cells = match &report.result {
        mise_lab::Outcome::Sweep(s) => s.cells.len(),
        _ => 0,
    };
    checks.push(("sweep", sweep_ok && cells == 45));
    let forget = [
        "forget", "--data", "corpus.jsonl", "--max-steps", "10", "--repeats", "2", "--snapshot-every", "0", "--out",
        "f.json",
    ];
    checks.push(("forget", rerun_matches(a, b, &forget, "2", &["f.json"])));
    checks.push(("gradcheck", rerun_matches(a, b, &["gradcheck", "--out", "g.json"], "2", &["g.json"])));

    let env_seed = bin()
        .current_dir(b)
        .env(mise_lab::SEED_ENV, "42")
        .args(["synth", "--out", "corpus3.jsonl", "--posts-per-period", "60"])
        .status()
        .unwrap()
        .success();
    checks.push((
        "seed from environment",
        env_seed && fs::read(a.join("corpus.jsonl")).unwrap() == fs::read(b.join("corpus3.jsonl")).unwrap(),
    ));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let names: Vec<&str> = checks.iter().map(|c| c.0).collect();
    verdict(
        9,
        Gate::Hard,
        failed.is_empty(),
        format!(
            "byte-identical reruns for [{}] with worker counts 1 to 4; differing: {failed:?}; sweep cells: {cells}",
            names.join(", ")
        ),
    );
}

#[test]
fn decode_of_an_unlabeled_corpus_emits_spans_and_tags() {
    let (_dir, p) = workspace("decode");
    let text = fs::read_to_string(p.join("corpus.jsonl")).unwrap();
    let unlabeled: String = text
        .lines()
        .take(5)
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("tags");
            v.to_string() + "\n"
        })
        .collect();
    fs::write(p.join("unlabeled.jsonl"), unlabeled).unwrap();
    run(&p, &["decode", "--data", "unlabeled.jsonl", "--checkpoint", "meta.ckpt", "--out", "tags.jsonl", "--constrain-decode"]);
    let lines: Vec<serde_json::Value> = fs::read_to_string(p.join("tags.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 5);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["post_index"], i);
        let tags: Vec<String> = serde_json::from_value(l["tags"].clone()).unwrap();
        let parsed = mise_core::tagging::parse_tags(&tags).unwrap();
        assert!(is_valid(&parsed));
        let spans: Vec<[usize; 2]> = serde_json::from_value(l["spans"].clone()).unwrap();
        let want: Vec<[usize; 2]> = decode_tags(&parsed).spans.iter().map(|s| [s.start, s.end]).collect();
        assert_eq!(spans, want);
    }
}

#[test]
fn failures_exit_with_their_class_and_a_json_record() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.cfg"), "lambda = 0.2\nlamda = 0.3\n").unwrap();
    fs::write(dir.path().join("broken.jsonl"), "{not json}\n").unwrap();
    for (args, code) in [
        (vec!["eval", "--lambda", "1.5"], 2),
        (vec!["eval", "--no-such-flag"], 2),
        (vec!["frobnicate"], 2),
        (vec!["eval", "--config", "bad.cfg"], 2),
        (vec!["train", "--checkpoint", "m.ckpt"], 2),
        (vec!["train", "--data", "broken.jsonl", "--checkpoint", "m.ckpt"], 3),
        (vec!["eval", "--data", "missing.jsonl", "--checkpoint", "missing.ckpt"], 3),
    ] {
        let out = bin().current_dir(dir.path()).args(&args).output().unwrap();
        assert_eq!(out.status.code(), Some(code), "{args:?}");
        let stderr = String::from_utf8_lossy(&out.stderr);
        let record: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
        assert_eq!(record["code"], code);
        assert!(record["message"].as_str().is_some_and(|m| !m.is_empty()));
    }
}
