use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use pairdisc_core::metrics::{corpus_report, MetricReport, Smoothing, DEFAULT_ROUGE_ORDER};
use pairdisc_core::run::{resume_run, sha256_file, train_run, RunSummary};
use pairdisc_core::sentiment::{
    cross_entropy, embed_phrases, error_rate, predict, train_logreg, LogRegParams, ProbeConfig,
};
use pairdisc_core::text::{load_pairs, load_phrases, tokenize, LabeledPhrase};
use pairdisc_core::trainer::{
    check_model_gradients, evaluate, paraphrase, EpochLog, GradCheckSpec,
};
use pairdisc_core::{Checkpoint, KeyValues, ModelDims, TrainConfig, Trainer, Variant};
use serde_json::{json, Map, Value};

use crate::{
    EvalArgs, Failure, GenerateArgs, GradcheckArgs, SentimentEvalArgs, SentimentTrainArgs,
    SmoothingArg, TrainArgs,
};

pub const SEED_ENV: &str = "PAIRDISC_SEED";

type CliResult = Result<(), Failure>;

/// Reads the config file and applies the seed override from the environment.
pub fn load_config(path: &Path, seed_override: Option<&str>) -> Result<TrainConfig, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))?;
    let mut config = TrainConfig::from_key_values(&KeyValues::parse(&text)?)?;
    if let Some(raw) = seed_override {
        config.seed = raw.trim().parse().map_err(|_| {
            Failure::usage(format!("{SEED_ENV}={raw:?} is not a non-negative integer"))
        })?;
    }
    Ok(config)
}

fn print_epoch(log: &EpochLog) {
    let val = log
        .val_total
        .map_or_else(|| "NA".to_string(), |v| format!("{v:.5}"));
    eprintln!(
        "epoch {:>4}  lr {:.3e}  local {:.5}  global {:.5}  total {:.5}  val {}  clipped {}/{}",
        log.epoch,
        log.learning_rate,
        log.train_local,
        log.train_global,
        log.train_total,
        val,
        log.clipped_batches,
        log.batches
    );
}

fn print_summary(s: &RunSummary) {
    println!("final checkpoint\t{}", s.final_checkpoint.display());
    println!("seed\t{}", s.manifest.seed);
    println!("vocabulary\t{}", s.vocab_size);
    println!("train pairs\t{}", s.train_pairs);
    if let Some(last) = s.logs.last() {
        println!("epochs\t{}", last.epoch);
        println!("train_total\t{:.6}", last.train_total);
    }
}

pub fn train(args: &TrainArgs) -> CliResult {
    let summary = if args.resume {
        resume_run(&args.out, print_epoch)?
    } else {
        let (Some(config), Some(data)) = (&args.config, &args.data) else {
            return Err(Failure::usage("train needs --config and --data"));
        };
        let seed = std::env::var(SEED_ENV).ok();
        let config = load_config(config, seed.as_deref())?;
        train_run(config, data, &args.out, print_epoch)?
    };
    print_summary(&summary);
    Ok(())
}

fn load_trainer(path: &Path) -> Result<Trainer, Failure> {
    Ok(Trainer::from_checkpoint(Checkpoint::load(path)?)?)
}

pub fn generate(args: &GenerateArgs) -> CliResult {
    let t = load_trainer(&args.ckpt)?;
    let reader = BufReader::new(
        File::open(&args.input)
            .map_err(|e| Failure::data(format!("{}: {e}", args.input.display())))?,
    );
    let mut out = BufWriter::new(File::create(&args.out)?);
    let mut count = 0;
    for line in reader.lines() {
        let words = tokenize(&line?);
        let generated = if words.is_empty() {
            Vec::new()
        } else {
            paraphrase(&t.model, &t.store, &t.vocab, &words)?
        };
        writeln!(out, "{}", generated.join(" "))?;
        count += 1;
    }
    out.flush()?;
    eprintln!("wrote {count} paraphrases to {}", args.out.display());
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<Vec<String>>, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(tokenize).collect())
}

fn smoothing(arg: SmoothingArg) -> Smoothing {
    match arg {
        SmoothingArg::None => Smoothing::None,
        SmoothingArg::AddOne => Smoothing::AddOne,
    }
}

/// The JSON block printed after the TSV table.
pub fn report_json(report: &MetricReport) -> Value {
    let mut map = Map::new();
    for (name, value) in report.fields() {
        map.insert(name, json!(value));
    }
    map.insert("sentences".into(), json!(report.sentences));
    map.insert(
        "bleu_smoothing".into(),
        json!(match report.smoothing {
            Smoothing::None => "none",
            Smoothing::AddOne => "add-one",
        }),
    );
    map.insert(
        "meteor_variant".into(),
        json!("exact + suffix-stem stages, no synonyms"),
    );
    Value::Object(map)
}

fn print_report(report: &MetricReport) -> CliResult {
    print!("{}", report.to_tsv());
    let json = serde_json::to_string_pretty(&report_json(report))
        .map_err(|e| Failure::data(e.to_string()))?;
    println!("{json}");
    Ok(())
}

pub fn eval(args: &EvalArgs) -> CliResult {
    let smoothing = smoothing(args.smoothing);
    if let (Some(ckpt), Some(test)) = (&args.ckpt, &args.test) {
        let t = load_trainer(ckpt)?;
        let pairs = load_pairs(test)?;
        let evaluation = evaluate(&t.model, &t.store, &t.vocab, &pairs, smoothing)?;
        if let Some(path) = &args.hyp_out {
            let mut w = BufWriter::new(File::create(path)?);
            for h in &evaluation.hypotheses {
                writeln!(w, "{}", h.join(" "))?;
            }
            w.flush()?;
        }
        return print_report(&evaluation.report);
    }
    let (Some(hyp), Some(reference)) = (&args.hyp, &args.reference) else {
        return Err(Failure::usage(
            "eval needs either --ckpt and --test, or --hyp and --ref",
        ));
    };
    let hyps = read_lines(hyp)?;
    let refs = read_lines(reference)?;
    if hyps.len() != refs.len() {
        return Err(Failure::data(format!(
            "{} has {} lines but {} has {}",
            hyp.display(),
            hyps.len(),
            reference.display(),
            refs.len()
        )));
    }
    if let Some(i) = refs.iter().position(Vec::is_empty) {
        return Err(Failure::data(format!(
            "{}: line {} is empty",
            reference.display(),
            i + 1
        )));
    }
    print_report(&corpus_report(
        &hyps,
        &refs,
        DEFAULT_ROUGE_ORDER,
        smoothing,
    )?)
}

fn phrase_words(phrases: &[LabeledPhrase]) -> (Vec<Vec<String>>, Vec<usize>) {
    (
        phrases.iter().map(|p| p.words.clone()).collect(),
        phrases.iter().map(|p| p.label).collect(),
    )
}

fn load_labeled(path: &Path) -> Result<Vec<LabeledPhrase>, Failure> {
    let phrases = load_phrases(path)?;
    if phrases.is_empty() {
        return Err(Failure::data(format!("{} has no phrases", path.display())));
    }
    Ok(phrases)
}

const PROBE_ENCODER_PATH: &str = "encoder_checkpoint";
const PROBE_ENCODER_SHA: &str = "encoder_sha256";

pub fn sentiment_train(args: &SentimentTrainArgs) -> CliResult {
    let t = load_trainer(&args.ckpt)?;
    let before = t.store.checksum("enc.");
    let (words, labels) = phrase_words(&load_labeled(&args.data)?);
    let x = embed_phrases(&t.model.encoder, &t.store, &t.vocab, &words)?;
    let mut cfg = ProbeConfig {
        batch_size: args.batch_size,
        epochs: args.epochs,
        seed: args.seed,
        ..ProbeConfig::default()
    };
    if let Some(lr) = args.learning_rate {
        cfg.rmsprop.learning_rate = lr;
    }
    let trained = train_logreg(&x, &labels, &cfg)?;
    for w in &trained.warnings {
        eprintln!("warning: {w}");
    }
    if t.store.checksum("enc.") != before {
        return Err(Failure::data(
            "encoder parameters changed during probe training",
        ));
    }
    let train_err = error_rate(&predict(&trained.params, &x)?.labels, &labels)?;
    println!("train_phrases\t{}", labels.len());
    println!(
        "train_loss\t{:.6}",
        trained.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    println!("train_error_rate\t{:.4}", 100.0 * train_err);
    if let Some(val) = &args.val {
        let (vw, vl) = phrase_words(&load_labeled(val)?);
        let vx = embed_phrases(&t.model.encoder, &t.store, &t.vocab, &vw)?;
        println!("val_loss\t{:.6}", cross_entropy(&trained.params, &vx, &vl)?);
        let verr = error_rate(&predict(&trained.params, &vx)?.labels, &vl)?;
        println!("val_error_rate\t{:.4}", 100.0 * verr);
    }
    let out = args.out.clone().unwrap_or_else(|| {
        args.ckpt
            .parent()
            .unwrap_or(Path::new("."))
            .join("probe.ckpt")
    });
    let mut ck = trained.params.to_checkpoint();
    ck.meta.set(PROBE_ENCODER_PATH, args.ckpt.display());
    ck.meta.set(PROBE_ENCODER_SHA, sha256_file(&args.ckpt)?);
    ck.meta.set("epochs", cfg.epochs);
    ck.save(&out)?;
    println!("probe\t{}", out.display());
    Ok(())
}

pub fn sentiment_eval(args: &SentimentEvalArgs) -> CliResult {
    let probe_ck = Checkpoint::load(&args.probe)?;
    let params = LogRegParams::from_checkpoint(&probe_ck)?;
    let encoder_path = match (&args.ckpt, probe_ck.meta.get(PROBE_ENCODER_PATH)) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => {
            return Err(Failure::usage(
                "the probe does not record its encoder; pass --ckpt",
            ))
        }
    };
    if let Some(expected) = probe_ck.meta.get(PROBE_ENCODER_SHA) {
        let actual = sha256_file(&encoder_path)?;
        if actual != expected {
            return Err(Failure::data(format!(
                "{} is not the encoder this probe was trained on",
                encoder_path.display()
            )));
        }
    }
    let t = load_trainer(&encoder_path)?;
    let (words, labels) = phrase_words(&load_labeled(&args.data)?);
    let x = embed_phrases(&t.model.encoder, &t.store, &t.vocab, &words)?;
    let err = error_rate(&predict(&params, &x)?.labels, &labels)?;
    println!("phrases\t{}", labels.len());
    println!("loss\t{:.6}", cross_entropy(&params, &x, &labels)?);
    println!("error_rate\t{:.4}", 100.0 * err);
    Ok(())
}

pub fn parse_dims(s: &str) -> Result<ModelDims, Failure> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::usage(format!("--dims {s:?}: expected V,E,D,T")))?;
    let [vocab, embed_dim, hidden_dim, t_max] = parts[..] else {
        return Err(Failure::usage(format!(
            "--dims {s:?}: expected four values V,E,D,T"
        )));
    };
    let dims = ModelDims {
        vocab,
        embed_dim,
        hidden_dim,
        conv_width: None,
        t_max,
    };
    dims.validate()
        .map_err(|e| Failure::usage(format!("--dims {s:?}: {e}")))?;
    Ok(dims)
}

pub fn gradcheck(args: &GradcheckArgs) -> CliResult {
    let dims = parse_dims(&args.dims)?;
    let variant: Variant = args
        .variant
        .parse()
        .map_err(|e: pairdisc_core::Error| Failure::usage(e.to_string()))?;
    if !(args.step > 0.0 && args.tolerance > 0.0) {
        return Err(Failure::usage("--step and --tolerance must be positive"));
    }
    let spec = GradCheckSpec {
        dims,
        variant,
        batch: args.batch,
        max_len: dims.t_max,
        coordinates: args.coordinates,
        h: args.step,
        seed: args.seed,
    };
    let report = check_model_gradients(&spec)?;
    println!("variant\t{variant}");
    println!("checked\t{}", report.checked);
    println!("excluded_near_kink\t{}", report.excluded);
    println!("max_rel_error\t{:.6e}", report.max_rel_error);
    println!("max_abs_error\t{:.6e}", report.max_abs_error);
    if let Some(w) = &report.worst {
        println!(
            "worst\t{}[{}]\tanalytic {:.6e}\tnumeric {:.6e}",
            w.param, w.flat_index, w.analytic, w.numeric
        );
    }
    let pass = report.passes(args.tolerance);
    println!(
        "{} at tolerance {:e}",
        if pass { "PASS" } else { "FAIL" },
        args.tolerance
    );
    if pass {
        Ok(())
    } else {
        Err(Failure {
            code: crate::EXIT_NUMERIC,
            message: format!(
                "{} of {} coordinates exceed relative error {:e}",
                report.failures(args.tolerance).count(),
                report.checked,
                args.tolerance
            ),
        })
    }
}
