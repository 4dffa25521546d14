//! The `code2title` command line: one binary, one subcommand per pipeline stage.

use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::{self, Lang, QcPair, RawPost, SplitSpec};
use crate::decode::{generate_all, DecodeOptions};
use crate::io::{check_unique_ids, read_jsonl, read_to_string, write_atomic, write_jsonl};
use crate::metrics;
use crate::model::{EncodedExample, Hyperparams, Parameters};
use crate::numerics::{Real, Rng, Tensor};
use crate::retrieval::{self, Document, IrResult, TfidfIndex};
use crate::train::{self, load_checkpoint, CheckpointTarget};
use crate::vocab::{build_vocab, Vocabulary};
use crate::{Error, Result};

const SUBCOMMANDS: [(&str, &str); 8] = [
    (
        "preprocess",
        "raw post JSONL -> tokenized, filtered pairs and train/val/test splits",
    ),
    ("build-vocab", "build the vocabulary file from training pairs"),
    ("train", "train a model and write the best-validation checkpoint"),
    ("generate", "generate titles for code snippets (file or standard input)"),
    ("evaluate", "score generated or given titles against test references"),
    ("ir-baseline", "TF-IDF nearest-neighbour titles and their scores"),
    ("dedup", "remove test snippets that clone a training snippet"),
    ("retrieve", "list the questions whose code is most similar to a snippet"),
];

const SWITCHES: [&str; 2] = ["greedy", "raw_embeddings"];

fn command() -> Command {
    let mut root = Command::new("code2title")
        .about("Generate question titles from code snippets")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in SUBCOMMANDS {
        let mut sub = Command::new(name).about(about).arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .help("flat key = value file; flags win"),
        );
        for key in RunConfig::KEYS {
            let flag = key.replace('_', "-");
            let arg = Arg::new(*key).long(flag);
            sub = sub.arg(if SWITCHES.contains(key) {
                arg.action(ArgAction::SetTrue)
            } else {
                arg.value_name("VALUE")
            });
        }
        root = root.subcommand(sub);
    }
    root
}

fn resolve_config(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        let path = Path::new(path);
        let text = read_to_string(path)?;
        cfg.apply_file_text(&text, &path.display().to_string(), path.parent())?;
    }
    for key in RunConfig::KEYS {
        if SWITCHES.contains(key) {
            if m.get_flag(key) {
                cfg.set(key, "true")?;
            }
        } else if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

/// Runs the command line `argv` (program name first) and returns the exit code:
/// 0 on success, 1 on usage errors, 2 on data or format errors.
pub fn run(argv: &[String]) -> i32 {
    if let Some(n) = std::env::var("C2Q_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                eprint!("{e}");
                return 1;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return 1;
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let result = resolve_config(sub).and_then(|cfg| match name {
        "preprocess" => preprocess(&cfg),
        "build-vocab" => build_vocab_cmd(&cfg),
        "train" => train_cmd(&cfg),
        "generate" => generate_cmd(&cfg),
        "evaluate" => evaluate_cmd(&cfg),
        "ir-baseline" => ir_baseline_cmd(&cfg),
        "dedup" => dedup_cmd(&cfg),
        "retrieve" => retrieve_cmd(&cfg),
        _ => unreachable!("clap only accepts known subcommands"),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.code());
            if matches!(e, Error::Config(_)) {
                1
            } else {
                2
            }
        }
    }
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("missing --{}", key.replace('_', "-"))))
}

/// An existing input file.
fn input<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    let path = required(p, key)?;
    if !path.is_file() {
        return Err(Error::Config(format!(
            "--{} {}: no such file",
            key.replace('_', "-"),
            path.display()
        )));
    }
    Ok(path)
}

/// An output file whose directory exists.
fn output<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    let path = required(p, key)?;
    check_output(path, key)?;
    Ok(path)
}

fn check_output(path: &Path, key: &str) -> Result<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() && !d.is_dir() => Err(Error::Config(format!(
            "--{}: directory {} does not exist",
            key.replace('_', "-"),
            d.display()
        ))),
        _ => Ok(()),
    }
}

fn optional_output<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<Option<&'a Path>> {
    if let Some(path) = p.as_deref() {
        check_output(path, key)?;
    }
    Ok(p.as_deref())
}

fn optional_input<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<Option<&'a Path>> {
    p.as_ref().map(|_| input(p, key)).transpose()
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// Writes `text` to `path`, or to standard output.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_pairs(path: &Path) -> Result<Vec<QcPair>> {
    let pairs: Vec<QcPair> = read_jsonl(path)?;
    check_unique_ids(pairs.iter().map(|p| p.id), &path.display().to_string())?;
    Ok(pairs)
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    Vocabulary::from_file_string(&read_to_string(path)?)
}

#[derive(Serialize)]
struct PreprocessReport {
    posts: usize,
    skipped: corpus::SkipReport,
    tokenizer_warnings: usize,
    filter: corpus::FilterReport,
    train: usize,
    val: usize,
    test: usize,
}

fn preprocess(cfg: &RunConfig) -> Result<()> {
    let src = input(&cfg.input, "input")?;
    let out_dir = required(&cfg.out_dir, "out_dir")?;
    let mut posts: Vec<RawPost> = read_jsonl(src)?;
    check_unique_ids(posts.iter().map(|p| p.id), &src.display().to_string())?;
    if let Some(lang) = cfg.lang {
        posts.retain(|p| p.lang == lang);
    }
    let (candidates, skipped) = corpus::extract_pairs(&posts, cfg.min_score);
    let (pairs, warnings) = corpus::tokenize_candidates(&candidates);
    let (pairs, filter) = corpus::filter_pairs(pairs);
    let tenth = pairs.len() / 10;
    let spec = SplitSpec {
        val_count: cfg.val_count.unwrap_or(tenth),
        test_count: cfg.test_count.unwrap_or(tenth),
        seed: cfg.seed,
    };
    let splits = corpus::split_dataset(pairs.clone(), spec)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_jsonl(&out_dir.join("pairs.jsonl"), &pairs)?;
    write_jsonl(&out_dir.join("train.jsonl"), &splits.train)?;
    write_jsonl(&out_dir.join("val.jsonl"), &splits.val)?;
    write_jsonl(&out_dir.join("test.jsonl"), &splits.test)?;
    let report = PreprocessReport {
        posts: posts.len(),
        skipped,
        tokenizer_warnings: warnings.len(),
        filter,
        train: splits.train.len(),
        val: splits.val.len(),
        test: splits.test.len(),
    };
    let text = to_json(&report)?;
    write_atomic(&out_dir.join("preprocess_report.json"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn build_vocab_cmd(cfg: &RunConfig) -> Result<()> {
    let train_path = input(&cfg.train, "train")?;
    let out = output(&cfg.vocab, "vocab")?;
    let pairs = read_pairs(train_path)?;
    let streams = pairs
        .iter()
        .flat_map(|p| [p.code_tokens.as_slice(), p.title_tokens.as_slice()]);
    let vocab = build_vocab(streams, cfg.vocab_min_freq, cfg.vocab_max_size);
    write_atomic(out, vocab.to_file_string().as_bytes())?;
    println!("{}", serde_json::json!({ "size": vocab.len(), "hash": vocab.hash() }));
    Ok(())
}

fn encode_all(pairs: &[QcPair], vocab: &Vocabulary) -> Vec<EncodedExample> {
    pairs.iter().map(|p| EncodedExample::from_pair(p, vocab)).collect()
}

fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let train_path = input(&cfg.train, "train")?;
    let val_path = optional_input(&cfg.val, "val")?;
    let vocab_path = input(&cfg.vocab, "vocab")?;
    let model_path = output(&cfg.model, "model")?;
    let log_path = optional_output(&cfg.log, "log")?;

    let vocab = load_vocab(vocab_path)?;
    let hyper = cfg.hyperparams(vocab.len());
    hyper.validate()?;
    let tc = cfg.train_config();
    tc.validate()?;
    let train_set = encode_all(&read_pairs(train_path)?, &vocab);
    let val_set = match val_path {
        Some(p) => encode_all(&read_pairs(p)?, &vocab),
        None => Vec::new(),
    };
    let init: Parameters<Real> = Parameters::init(&hyper, &mut Rng::new(cfg.seed))?;
    let target = CheckpointTarget {
        path: model_path.to_path_buf(),
        vocab_hash: vocab.hash(),
    };
    let outcome = train::train(init, &hyper, &tc, &train_set, &val_set, Some(&target), |e| {
        if let Ok(line) = serde_json::to_string(e) {
            eprintln!("{line}");
        }
    })?;
    if let Some(p) = log_path {
        write_jsonl(p, &outcome.log)?;
    }
    let summary = serde_json::json!({
        "steps": outcome.steps,
        "best_val_loss": outcome.best.as_ref().map(|b| b.1),
        "final_train_loss": outcome.log.last().map(|e| e.train_loss),
        "parameters": outcome.params.num_scalars(),
        "model": model_path.display().to_string(),
    });
    println!("{summary}");
    Ok(())
}

/// Loads a checkpoint bound to `vocab`, optionally switching mechanisms off.
fn load_model(cfg: &RunConfig, vocab: &Vocabulary) -> Result<(Parameters<Real>, Hyperparams)> {
    let ck = load_checkpoint(input(&cfg.model, "model")?, Some(&vocab.hash()))?;
    let mut hyper = ck.hyper;
    if let Some(requested) = cfg.ablation {
        let trained = hyper.ablation;
        let subset = (!requested.attention || trained.attention)
            && (!requested.copy || trained.copy)
            && (!requested.coverage || trained.coverage);
        if !subset {
            return Err(Error::Config(format!(
                "model was trained as {}, cannot decode as {}",
                trained.name(),
                requested.name()
            )));
        }
        hyper.ablation = requested;
    }
    Ok((ck.params, hyper))
}

fn decode_options(cfg: &RunConfig) -> Result<DecodeOptions> {
    if cfg.beam == 0 || cfg.max_len == 0 {
        return Err(Error::Config("--beam and --max-len must be at least 1".into()));
    }
    Ok(DecodeOptions {
        beam: cfg.beam,
        greedy: cfg.greedy,
        max_len: cfg.max_len,
    })
}

#[derive(Deserialize)]
struct SnippetLine {
    #[serde(default)]
    code: Option<String>,
    #[serde(default)]
    code_tokens: Option<Vec<String>>,
}

/// Snippets from `--input` or standard input. JSON-lines input holds one
/// object per snippet with `code` or `code_tokens`; any other text is one snippet.
fn read_snippets(cfg: &RunConfig) -> Result<Vec<Vec<String>>> {
    let (text, origin) = match optional_input(&cfg.input, "input")? {
        Some(p) => (read_to_string(p)?, p.display().to_string()),
        None => {
            let mut s = String::new();
            std::io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| Error::io("<stdin>", e))?;
            (s, "<stdin>".to_string())
        }
    };
    let lang = cfg.lang.unwrap_or(Lang::Python);
    let is_jsonl = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .is_some_and(|l| l.trim_start().starts_with('{'));
    let snippets: Vec<Vec<String>> = if is_jsonl {
        crate::io::parse_jsonl::<SnippetLine>(&text, &origin)?
            .into_iter()
            .enumerate()
            .map(|(i, s)| match (s.code_tokens, s.code) {
                (Some(t), _) => Ok(t),
                (None, Some(code)) => Ok(corpus::tokenize_code(&code, lang).tokens),
                (None, None) => Err(Error::Parse {
                    path: origin.clone(),
                    line: i + 1,
                    msg: "expected a code or code_tokens field".into(),
                }),
            })
            .collect::<Result<_>>()?
    } else {
        vec![corpus::tokenize_code(&text, lang).tokens]
    };
    if let Some(i) = snippets.iter().position(Vec::is_empty) {
        return Err(Error::InvalidInput(format!(
            "{origin}: snippet {} has no code tokens",
            i + 1
        )));
    }
    Ok(snippets)
}

fn generate_cmd(cfg: &RunConfig) -> Result<()> {
    let vocab = load_vocab(input(&cfg.vocab, "vocab")?)?;
    let out = optional_output(&cfg.output, "output")?;
    let (params, hyper) = load_model(cfg, &vocab)?;
    let opts = decode_options(cfg)?;
    let snippets = read_snippets(cfg)?;
    let titles = generate_all(&params, &hyper, &vocab, &snippets, opts)?;
    let text: String = titles.iter().map(|g| g.tokens.join(" ") + "\n").collect();
    emit(out, &text)
}

#[derive(Serialize, Deserialize)]
struct Prediction {
    id: u64,
    title_tokens: Vec<String>,
}

fn evaluate_cmd(cfg: &RunConfig) -> Result<()> {
    let test = read_pairs(input(&cfg.test, "test")?)?;
    let report_path = optional_output(&cfg.report, "report")?;
    let predictions_path = optional_output(&cfg.output, "output")?;
    let candidates: Vec<Vec<String>> = match optional_input(&cfg.candidates, "candidates")? {
        Some(path) => {
            let given: Vec<Prediction> = read_jsonl(path)?;
            check_unique_ids(given.iter().map(|p| p.id), &path.display().to_string())?;
            let mut by_id: HashMap<u64, Vec<String>> = given.into_iter().map(|p| (p.id, p.title_tokens)).collect();
            test.iter()
                .map(|p| {
                    by_id
                        .remove(&p.id)
                        .ok_or_else(|| Error::InvalidInput(format!("no candidate for test id {}", p.id)))
                })
                .collect::<Result<_>>()?
        }
        None => {
            let vocab = load_vocab(input(&cfg.vocab, "vocab")?)?;
            let (params, hyper) = load_model(cfg, &vocab)?;
            let code: Vec<Vec<String>> = test.iter().map(|p| p.code_tokens.clone()).collect();
            generate_all(&params, &hyper, &vocab, &code, decode_options(cfg)?)?
                .into_iter()
                .map(|g| g.tokens)
                .collect()
        }
    };
    if let Some(p) = predictions_path {
        let preds: Vec<Prediction> = test
            .iter()
            .zip(&candidates)
            .map(|(t, c)| Prediction {
                id: t.id,
                title_tokens: c.clone(),
            })
            .collect();
        write_jsonl(p, &preds)?;
    }
    let references: Vec<Vec<String>> = test.iter().map(|p| p.title_tokens.clone()).collect();
    emit(report_path, &to_json(&metrics::score(&candidates, &references)?)?)
}

fn ir_baseline_cmd(cfg: &RunConfig) -> Result<()> {
    let train_pairs = read_pairs(input(&cfg.train, "train")?)?;
    let test = read_pairs(input(&cfg.test, "test")?)?;
    let report_path = optional_output(&cfg.report, "report")?;
    let predictions_path = optional_output(&cfg.output, "output")?;
    let docs: Vec<Document> = train_pairs.iter().map(Document::from).collect();
    let index = TfidfIndex::build(&docs)?;
    let titles: HashMap<u64, &Vec<String>> = train_pairs.iter().map(|p| (p.id, &p.title_tokens)).collect();
    let mut no_match = 0;
    let candidates: Vec<Vec<String>> = test
        .iter()
        .map(|p| match index.query(&p.code_tokens) {
            IrResult::Match { id, .. } => titles[&id].clone(),
            IrResult::NoMatch => {
                no_match += 1;
                Vec::new()
            }
        })
        .collect();
    if let Some(p) = predictions_path {
        let preds: Vec<Prediction> = test
            .iter()
            .zip(&candidates)
            .map(|(t, c)| Prediction {
                id: t.id,
                title_tokens: c.clone(),
            })
            .collect();
        write_jsonl(p, &preds)?;
    }
    let references: Vec<Vec<String>> = test.iter().map(|p| p.title_tokens.clone()).collect();
    let scores = metrics::score(&candidates, &references)?;
    let mut report = serde_json::to_value(&scores)?;
    report["no_match"] = no_match.into();
    emit(report_path, &to_json(&report)?)
}

/// The trained input embedding matrix, or a seeded random one without `--model`.
fn embedding_table(cfg: &RunConfig, vocab: &Vocabulary) -> Result<Tensor<Real>> {
    match optional_input(&cfg.model, "model")? {
        Some(_) => {
            let (params, _) = load_model(cfg, vocab)?;
            Ok(params.get(params.layout().embedding).clone())
        }
        None => {
            let mut rng = Rng::new(cfg.seed);
            Ok(Tensor::uniform(
                &[vocab.len(), cfg.embed_dim],
                -cfg.init_range,
                cfg.init_range,
                &mut rng,
            ))
        }
    }
}

fn dedup_cmd(cfg: &RunConfig) -> Result<()> {
    let train_pairs = read_pairs(input(&cfg.train, "train")?)?;
    let test = read_pairs(input(&cfg.test, "test")?)?;
    let vocab = load_vocab(input(&cfg.vocab, "vocab")?)?;
    let clean_path = optional_output(&cfg.output, "output")?;
    let report_path = optional_output(&cfg.report, "report")?;
    let table = embedding_table(cfg, &vocab)?;
    let normalize = !cfg.raw_embeddings;
    let train_emb = retrieval::embed_corpus(&train_pairs, &table, &vocab, normalize)?;
    let test_emb = retrieval::embed_corpus(&test, &table, &vocab, normalize)?;
    let delta = if normalize || cfg.delta <= 1.0 {
        cfg.delta
    } else {
        return Err(Error::Config("--delta must be at most 1".into()));
    };
    let out = retrieval::dedup_testset(&train_emb, &test_emb, delta)?;
    if let Some(p) = clean_path {
        let kept: Vec<QcPair> = out.kept.iter().map(|&i| test[i].clone()).collect();
        write_jsonl(p, &kept)?;
    }
    emit(report_path, &to_json(&out.report)?)
}

fn retrieve_cmd(cfg: &RunConfig) -> Result<()> {
    if cfg.top == 0 {
        return Err(Error::Config("--top must be at least 1".into()));
    }
    let corpus_path = input(&cfg.corpus, "corpus")?;
    let vocab = load_vocab(input(&cfg.vocab, "vocab")?)?;
    let out = optional_output(&cfg.output, "output")?;
    let pairs = read_pairs(corpus_path)?;
    let table = embedding_table(cfg, &vocab)?;
    let normalize = !cfg.raw_embeddings;
    let index = retrieval::embed_corpus(&pairs, &table, &vocab, normalize)?;
    let mut text = String::new();
    for (n, snippet) in read_snippets(cfg)?.iter().enumerate() {
        if n > 0 {
            text.push('\n');
        }
        let q = retrieval::embed_code(snippet, &table, &vocab, normalize)?;
        for hit in retrieval::topk_similar(&q, &index, cfg.top)? {
            text.push_str(&format!("{:.6}\t{}\t{}\n", hit.similarity, hit.id, hit.title));
        }
    }
    emit(out, &text)
}
