use std::fs;
use std::io::{self, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ianmt::data::{encode_corpus, gen_toy_task, tokenize, ParallelCorpus, TaskKind, Vocabulary, EOS};
use ianmt::eval::{bleu4, length_bucket_report, sentence_bleu_smoothed, sign_test};
use ianmt::gradcheck::random_instance;
use ianmt::memory::write_trace_csv;
use ianmt::model::Variant;
use ianmt::search::{beam_search, trace_decode, write_nbest};
use ianmt::train::{default_max_len, init_params_with_std, train, transfer_init, Checkpoint, DevSet};
use ianmt::Error;

mod config;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "ianmt", version, about = "Interactive-attention neural machine translation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic parallel corpus.
    GenData(GenDataArgs),
    /// Train a model and write the best checkpoint.
    Train(TrainArgs),
    /// Translate a file of source sentences.
    Translate(TranslateArgs),
    /// BLEU, length buckets and an optional sign test.
    Score(ScoreArgs),
    /// Finite-difference check of the analytic gradients.
    Gradcheck(GradcheckArgs),
    /// Per-step attention weights and memory changes for one sentence.
    Trace(TraceArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value = "copy")]
    task: TaskKind,
    #[arg(long, default_value_t = 1000)]
    pairs: usize,
    #[arg(long, default_value_t = 5)]
    min_len: usize,
    #[arg(long, default_value_t = 15)]
    max_len: usize,
    #[arg(long, default_value_t = 20)]
    vocab_size: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    src_out: PathBuf,
    #[arg(long)]
    tgt_out: PathBuf,
}

/// Every run-config key is also a flag; flags override the config file.
#[derive(Args)]
struct TrainArgs {
    /// `key=value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    d_emb: Option<String>,
    #[arg(long)]
    d_enc: Option<String>,
    #[arg(long)]
    d_s: Option<String>,
    #[arg(long)]
    d_a: Option<String>,
    #[arg(long)]
    d_readout: Option<String>,
    #[arg(long)]
    src_vocab_cap: Option<String>,
    #[arg(long)]
    tgt_vocab_cap: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    max_sentence_length: Option<String>,
    #[arg(long)]
    dropout_rate: Option<String>,
    #[arg(long)]
    max_epochs: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    clip_norm: Option<String>,
    #[arg(long)]
    init_std: Option<String>,
    #[arg(long)]
    log_timing: Option<String>,
    #[arg(long)]
    beam_size: Option<String>,
    #[arg(long)]
    train_src: Option<String>,
    #[arg(long)]
    train_tgt: Option<String>,
    #[arg(long)]
    dev_src: Option<String>,
    #[arg(long)]
    dev_tgt: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    log: Option<String>,
    #[arg(long)]
    init_checkpoint: Option<String>,
}

impl TrainArgs {
    fn overrides(&self) -> [(&'static str, &Option<String>); 25] {
        [
            ("variant", &self.variant),
            ("d_emb", &self.d_emb),
            ("d_enc", &self.d_enc),
            ("d_s", &self.d_s),
            ("d_a", &self.d_a),
            ("d_readout", &self.d_readout),
            ("src_vocab_cap", &self.src_vocab_cap),
            ("tgt_vocab_cap", &self.tgt_vocab_cap),
            ("batch_size", &self.batch_size),
            ("max_sentence_length", &self.max_sentence_length),
            ("dropout_rate", &self.dropout_rate),
            ("max_epochs", &self.max_epochs),
            ("patience", &self.patience),
            ("seed", &self.seed),
            ("clip_norm", &self.clip_norm),
            ("init_std", &self.init_std),
            ("log_timing", &self.log_timing),
            ("beam_size", &self.beam_size),
            ("train_src", &self.train_src),
            ("train_tgt", &self.train_tgt),
            ("dev_src", &self.dev_src),
            ("dev_tgt", &self.dev_tgt),
            ("out", &self.out),
            ("log", &self.log),
            ("init_checkpoint", &self.init_checkpoint),
        ]
    }

    fn run_config(&self) -> ianmt::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for (key, value) in self.overrides() {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TranslateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// One whitespace-tokenized source sentence per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Run config supplying `beam_size` when the flag is absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    beam_size: Option<usize>,
    /// Maximum output length; defaults to twice the source length plus 10.
    #[arg(long)]
    max_len: Option<usize>,
    /// Also write every finished hypothesis as `score ||| tokens`, with a
    /// blank line after each sentence.
    #[arg(long)]
    nbest: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Source file; enables the length-bucket report.
    #[arg(long)]
    src: Option<PathBuf>,
    /// Where to write the bucket CSV (stdout when omitted).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Second hypothesis file for a sign test against `--hyp`.
    #[arg(long)]
    compare: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Defaults to all three variants.
    #[arg(long)]
    variant: Option<Variant>,
    /// Largest width of any layer.
    #[arg(long, default_value_t = 8)]
    dims: usize,
    #[arg(long, default_value_t = 12)]
    vocab: usize,
    #[arg(long, default_value_t = 5)]
    instances: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Source sentence (whitespace tokenized).
    #[arg(long)]
    source: String,
    /// Teacher-force this target instead of decoding greedily.
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    max_len: Option<usize>,
}

/// Failure classes mapped to process exit codes.
enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::NonFinite { .. } => Failure::Numeric(msg),
            Error::Config(_) | Error::InvalidArgument { .. } => Failure::Usage(msg),
            _ => Failure::Data(msg),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

fn read_lines(path: &Path) -> Result<Vec<Vec<String>>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(tokenize).collect())
}

fn vocab_paths(checkpoint: &Path) -> (PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut s = checkpoint.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".src.vocab"), with(".tgt.vocab"))
}

fn load_model(checkpoint: &Path) -> Result<(Checkpoint, Vocabulary, Vocabulary), Failure> {
    let ck = Checkpoint::load(checkpoint)?;
    let (s, t) = vocab_paths(checkpoint);
    Ok((ck, Vocabulary::load(&s)?, Vocabulary::load(&t)?))
}

fn encode_source(vocab: &Vocabulary, words: &[String]) -> Vec<usize> {
    let mut ids = vocab.encode(words);
    ids.push(EOS);
    ids
}

fn gen_data(a: GenDataArgs) -> CliResult {
    let corpus = gen_toy_task(a.task, a.pairs, a.min_len..=a.max_len, a.vocab_size, a.seed)?;
    corpus.save(&a.src_out, &a.tgt_out)?;
    eprintln!("wrote {} {} pairs", corpus.len(), a.task);
    Ok(())
}

fn run_train(a: TrainArgs) -> CliResult {
    let rc = a.run_config()?;
    let tc = rc.train_config()?;
    let out = rc.require_path("out")?;
    let corpus = ParallelCorpus::load(&rc.require_path("train_src")?, &rc.require_path("train_tgt")?)?;
    let dev_corpus = ParallelCorpus::load(&rc.require_path("dev_src")?, &rc.require_path("dev_tgt")?)?;
    let corpus = corpus.filter_by_length(tc.max_sentence_length);
    if corpus.is_empty() {
        return Err(Failure::Data(format!(
            "no training pairs left at max_sentence_length {}",
            tc.max_sentence_length
        )));
    }

    let (init, src_vocab, tgt_vocab) = match rc.path("init_checkpoint") {
        Some(p) => {
            let (base, sv, tv) = load_model(&p)?;
            let variant = rc.variant()?;
            let params = if variant == Variant::Interactive && base.params.config.variant == Variant::Improved {
                let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
                let (params, report) = transfer_init(&base.params, &mut rng)?;
                eprintln!("transfer: {} tensors copied, fresh {:?}", report.copied.len(), report.fresh);
                params
            } else if variant == base.params.config.variant {
                base.params
            } else {
                return Err(Failure::Usage(format!(
                    "cannot continue a {} checkpoint as {variant}",
                    base.params.config.variant
                )));
            };
            (params, sv, tv)
        }
        None => {
            let sv = Vocabulary::build(corpus.sources(), rc.get("src_vocab_cap")?)?;
            let tv = Vocabulary::build(corpus.targets(), rc.get("tgt_vocab_cap")?)?;
            let mc = rc.model_config(sv.len(), tv.len())?;
            let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
            (init_params_with_std(mc, rc.init_std()?, &mut rng)?, sv, tv)
        }
    };

    let pairs = encode_corpus(&corpus, &src_vocab, &tgt_vocab);
    let dev = DevSet {
        sources: dev_corpus.sources().map(|s| encode_source(&src_vocab, s)).collect(),
        references: dev_corpus.targets().cloned().collect(),
        vocab: tgt_vocab.clone(),
    };
    let outcome = train(init, &pairs, &dev, &tc, |r, _| {
        eprintln!(
            "epoch {} loss {:.4} dev BLEU {:.2} accuracy {:.3}",
            r.epoch, r.mean_train_loss, r.dev_bleu, r.dev_accuracy
        );
        ControlFlow::Continue(())
    })?;

    let echo = rc.effective();
    let mut best = outcome.best;
    best.extra = echo.iter().map(|(k, v)| (format!("run.{k}"), v.clone())).collect();
    best.save(&out)?;
    let (sv_path, tv_path) = vocab_paths(&out);
    src_vocab.save(&sv_path)?;
    tgt_vocab.save(&tv_path)?;

    let log_path = rc.path("log").unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".log.csv");
        PathBuf::from(s)
    });
    let mut log = Vec::new();
    outcome.log.write_csv(&mut log)?;
    fs::write(&log_path, log)?;
    let mut echo_path = log_path.into_os_string();
    echo_path.push(".config");
    let text: String = echo.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    fs::write(PathBuf::from(echo_path), text)?;
    eprintln!("best epoch {} dev BLEU {:.2} -> {}", best.epoch, best.dev_bleu, out.display());
    Ok(())
}

fn translate(a: TranslateArgs) -> CliResult {
    let beam_size = match (a.beam_size, &a.config) {
        (Some(0), _) => return Err(Failure::Usage("--beam-size must be at least 1".into())),
        (Some(b), _) => b,
        (None, Some(p)) => RunConfig::load(p)?.beam_size()?,
        (None, None) => RunConfig::default().beam_size()?,
    };
    let (ck, sv, tv) = load_model(&a.checkpoint)?;
    let lines = read_lines(&a.input)?;
    let mut out = Vec::new();
    let mut nbest = Vec::new();
    for words in &lines {
        if words.is_empty() {
            writeln!(out)?;
            if a.nbest.is_some() {
                writeln!(nbest)?;
            }
            continue;
        }
        let src = encode_source(&sv, words);
        let max_len = a.max_len.unwrap_or_else(|| default_max_len(src.len()));
        let result = beam_search(&ck.params, &src, beam_size, max_len)?;
        writeln!(out, "{}", tv.decode(result.best.content()).join(" "))?;
        if a.nbest.is_some() {
            write_nbest(&mut nbest, &result.finished, |ids| tv.decode(ids).join(" "))?;
            writeln!(nbest)?;
        }
    }
    fs::write(&a.output, out)?;
    if let Some(p) = a.nbest {
        fs::write(p, nbest)?;
    }
    Ok(())
}

fn score(a: ScoreArgs) -> CliResult {
    let hyps = read_lines(&a.hyp)?;
    let refs = read_lines(&a.reference)?;
    if hyps.len() != refs.len() {
        return Err(Failure::Data(format!("{} hypotheses but {} references", hyps.len(), refs.len())));
    }
    let stdout = io::stdout();
    let mut so = stdout.lock();
    writeln!(so, "BLEU\t{:.4}", bleu4(&hyps, &refs)?)?;
    if let Some(src) = &a.src {
        let lens: Vec<usize> = read_lines(src)?.iter().map(Vec::len).collect();
        let report = length_bucket_report(&lens, &hyps, &refs)?;
        match &a.report {
            Some(p) => {
                let mut buf = Vec::new();
                report.write_csv(&mut buf)?;
                fs::write(p, buf)?;
            }
            None => report.write_csv(&mut so)?,
        }
    }
    if let Some(other) = &a.compare {
        let b = read_lines(other)?;
        if b.len() != refs.len() {
            return Err(Failure::Data(format!("{} comparison hypotheses but {} references", b.len(), refs.len())));
        }
        let sa: Vec<f64> = hyps.iter().zip(&refs).map(|(h, r)| sentence_bleu_smoothed(h, r)).collect();
        let sb: Vec<f64> = b.iter().zip(&refs).map(|(h, r)| sentence_bleu_smoothed(h, r)).collect();
        let t = sign_test(&sa, &sb)?;
        writeln!(
            so,
            "sign_test\twins={}\tlosses={}\tties={}\tp={:.6}{}",
            t.wins,
            t.losses,
            t.ties,
            t.p_value,
            if t.all_ties { "\tall_ties" } else { "" }
        )?;
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CliResult {
    let variants: Vec<Variant> = match a.variant {
        Some(v) => vec![v],
        None => Variant::ALL.to_vec(),
    };
    let stdout = io::stdout();
    let mut so = stdout.lock();
    writeln!(so, "variant,instances,max_rel_error")?;
    let mut worst = 0.0f64;
    for v in variants {
        let mut max = 0.0f64;
        for k in 0..a.instances {
            let inst = random_instance(v, a.seed + k, a.dims, a.vocab)?;
            let check = inst.params.loss_gradcheck(&inst.src, &inst.tgt, a.step)?;
            max = max.max(check.max_rel_error);
        }
        writeln!(so, "{v},{},{max:.3e}", a.instances)?;
        worst = worst.max(max);
    }
    if worst > a.tolerance {
        return Err(Failure::Numeric(format!(
            "max relative error {worst:.3e} exceeds {:.1e}",
            a.tolerance
        )));
    }
    Ok(())
}

fn trace(a: TraceArgs) -> CliResult {
    let (ck, sv, tv) = load_model(&a.checkpoint)?;
    let words = tokenize(&a.source);
    if words.is_empty() {
        return Err(Failure::Data("empty source sentence".into()));
    }
    let src = encode_source(&sv, &words);
    let forced = a.target.as_deref().map(|t| {
        let mut ids = tv.encode(&tokenize(t));
        ids.push(EOS);
        ids
    });
    let max_len = a
        .max_len
        .unwrap_or_else(|| forced.as_ref().map_or(default_max_len(src.len()), Vec::len));
    let (hyp, rows) = trace_decode(&ck.params, &src, forced.as_deref(), max_len)?;
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, &rows)?;
    match a.output {
        Some(p) => fs::write(p, buf)?,
        None => io::stdout().write_all(&buf)?,
    }
    eprintln!("output: {}", tv.decode(&hyp.tokens).join(" "));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => run_train(a),
        Command::Translate(a) => translate(a),
        Command::Score(a) => score(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Trace(a) => trace(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
