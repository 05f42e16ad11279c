//! `ctxbias`: command-line surface of the contextual-biasing toolkit.
//!
//! Every command reads and writes the formats in `ctxbias::files`, emits a
//! run manifest with digests of all inputs and outputs, and is bit-for-bit
//! reproducible: `replay` re-runs any manifest and verifies the digests.
//!
//! Exit codes: 0 success, 1 domain or validation error, 2 usage error.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ctxbias::ctc::{greedy_decode, prefix_beam_decode, BoostTrie};
use ctxbias::eval::{phrase_hits, score_utterance};
use ctxbias::files::{self, RunManifest, ScoreSummary};
use ctxbias::filter::{filter_list, FilterConfig};
use ctxbias::model::{forward, AudioEmbeddingSeq};
use ctxbias::selfcheck::{all_passed, SelfCheckOptions};
use ctxbias::synth::{generate, write_scenario, SynthConfig};
use ctxbias::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ctxbias",
    version,
    about = "Deterministic contextual-biasing toolkit for CTC speech recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the biasing forward pass: encode the list, attend, combine, CTC head.
    Forward(ForwardArgs),
    /// Filter a biasing list in two stages against a first-pass posterior.
    Filter(FilterArgs),
    /// Decode posterior files greedily or with a prefix beam.
    Decode(DecodeArgs),
    /// Score hypotheses against references, split by list membership.
    Score(ScoreArgs),
    /// Generate a synthetic scenario: posteriors, references and lists.
    Synth(SynthArgs),
    /// Run the oracle suites against the library.
    Selfcheck(SelfcheckArgs),
    /// Re-run a recorded manifest and verify every digest.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct ForwardArgs {
    /// Weight bundle.
    #[arg(long)]
    weights: PathBuf,
    /// Vocabulary file, blank token first.
    #[arg(long)]
    vocab: PathBuf,
    /// Audio embeddings (CFEAT1).
    #[arg(long)]
    features: PathBuf,
    /// Biasing list; a file with zero phrases gives a no-bias run.
    #[arg(long)]
    list: PathBuf,
    /// Output posterior (CPOST1).
    #[arg(long)]
    out: PathBuf,
    /// Also write the mean attention matrix, T x (K+1), as a CFEAT1 file.
    #[arg(long)]
    dump_attn: Option<PathBuf>,
    /// Manifest path; defaults to `<out>.manifest`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct FilterArgs {
    /// First-pass posterior (CPOST1).
    #[arg(long)]
    posterior: PathBuf,
    /// Biasing list to filter.
    #[arg(long)]
    list: PathBuf,
    /// Vocabulary file used to tokenize the list.
    #[arg(long)]
    vocab: PathBuf,
    /// Filter report output.
    #[arg(long)]
    report: PathBuf,
    /// Filtered list output.
    #[arg(long)]
    out_list: PathBuf,
    /// Stage-one threshold on the windowed presence score.
    #[arg(long, default_value_t = 0.3, value_parser = parse_unit_interval)]
    psc_th: f64,
    /// Stage-two threshold on the order-aware score.
    #[arg(long, default_value_t = 0.4, value_parser = parse_unit_interval)]
    soc_th: f64,
    /// Window width as a multiple of the phrase token count.
    #[arg(long, default_value_t = 2.0, value_parser = parse_positive_f64)]
    window_scale: f64,
    /// Frames between window starts.
    #[arg(long, default_value_t = 1, value_parser = parse_nonzero_usize)]
    stride: usize,
    /// Keep at most this many phrases, best order score first.
    #[arg(long, default_value_t = 100)]
    max_kept: usize,
    /// Manifest path; defaults to `<report>.manifest`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    /// Posterior files; one hypothesis line per file, keyed by file stem.
    #[arg(required = true)]
    posteriors: Vec<PathBuf>,
    /// Vocabulary file for detokenization.
    #[arg(long)]
    vocab: PathBuf,
    /// Hypothesis TSV output.
    #[arg(long)]
    out: PathBuf,
    /// Beam width.
    #[arg(long, default_value_t = 8, value_parser = parse_nonzero_usize)]
    beam: usize,
    /// Use greedy best-path decoding instead of the beam.
    #[arg(long, conflicts_with_all = ["beam", "boost_list", "boost_weight"])]
    greedy: bool,
    /// Biasing list whose phrases earn a score boost during the search.
    #[arg(long)]
    boost_list: Option<PathBuf>,
    /// Boost per matched phrase token.
    #[arg(long, default_value_t = 1.0, value_parser = parse_finite_f64, requires = "boost_list")]
    boost_weight: f64,
    /// Manifest path; defaults to `<out>.manifest`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Reference TSV (`utt_id<TAB>text`).
    #[arg(long)]
    refs: PathBuf,
    /// Hypothesis TSV (`utt_id<TAB>text`).
    #[arg(long)]
    hyps: PathBuf,
    /// Biasing list defining which words count as biased.
    #[arg(long)]
    list: PathBuf,
    /// Vocabulary file used to tokenize the list.
    #[arg(long)]
    vocab: PathBuf,
    /// Score report output.
    #[arg(long)]
    report: PathBuf,
    /// Manifest path; defaults to `<report>.manifest`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory for the generated scenario files.
    #[arg(long)]
    out_dir: PathBuf,
    /// Scenario seed; falls back to CTXBIAS_SEED, then to 7.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of utterances.
    #[arg(long, default_value_t = 30, value_parser = parse_nonzero_usize)]
    utterances: usize,
    /// Minimum words per utterance.
    #[arg(long, default_value_t = 6, value_parser = parse_nonzero_usize)]
    min_words: usize,
    /// Maximum words per utterance.
    #[arg(long, default_value_t = 10, value_parser = parse_nonzero_usize)]
    max_words: usize,
    /// Rare words planted per utterance.
    #[arg(long, default_value_t = 2)]
    rare_per_utt: usize,
    /// Multiplier on the true-token mass inside rare words.
    #[arg(long, default_value_t = 0.4, value_parser = parse_positive_f64)]
    attenuation: f64,
    /// True-token mass on ordinary frames.
    #[arg(long, default_value_t = 0.85)]
    peak: f64,
    /// Uniform log-domain noise bound per frame.
    #[arg(long, default_value_t = 0.02)]
    jitter: f64,
    /// Frames emitted per token.
    #[arg(long, default_value_t = 1, value_parser = parse_nonzero_usize)]
    frames_per_token: usize,
    /// Distractor phrases added to the stressed list.
    #[arg(long, default_value_t = 0)]
    distractors: usize,
    /// Manifest path; defaults to `<out-dir>/manifest.txt`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct SelfcheckArgs {
    /// Suite seed; falls back to CTXBIAS_SEED, then to 1.
    #[arg(long)]
    seed: Option<u64>,
    /// Report output.
    #[arg(long, default_value = "selfcheck.report")]
    out: PathBuf,
    /// Offset added inside the CTC recursion, to prove the suites notice.
    #[arg(long, hide = true)]
    perturb_ctc: Option<f64>,
    /// Manifest path; defaults to `<out>.manifest`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Manifest to re-run.
    manifest: PathBuf,
}

fn parse_unit_interval(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{s} is outside [0, 1]"))
    }
}

fn parse_positive_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("{s} is not a positive number"))
    }
}

fn parse_finite_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{s} is not finite"))
    }
}

fn parse_nonzero_usize(s: &str) -> std::result::Result<usize, String> {
    let v: usize = s.parse().map_err(|e| format!("{e}"))?;
    if v == 0 {
        Err("must be at least 1".into())
    } else {
        Ok(v)
    }
}

fn arg_str(p: &Path) -> String {
    p.display().to_string()
}

/// `--seed` wins, then CTXBIAS_SEED, then the command's default.
fn resolve_seed(flag: Option<u64>, default: u64) -> Result<u64> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var("CTXBIAS_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("CTXBIAS_SEED {v:?} is not a valid seed"))),
        Err(_) => Ok(default),
    }
}

fn default_manifest(explicit: &Option<PathBuf>, primary_out: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        let mut s = primary_out.as_os_str().to_owned();
        s.push(".manifest");
        PathBuf::from(s)
    })
}

/// Digest all inputs and outputs and write the manifest. `args` must
/// re-parse into the same run, so callers pin resolved seeds and the
/// manifest path itself.
fn emit_manifest(
    path: &Path,
    command: &str,
    seed: Option<u64>,
    args: Vec<String>,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<()> {
    let digest = |paths: &[&Path]| -> Result<Vec<(String, String)>> {
        paths
            .iter()
            .map(|p| Ok((files::sha256_file(p)?, arg_str(p))))
            .collect()
    };
    let m = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        seed,
        args,
        inputs: digest(inputs)?,
        outputs: digest(outputs)?,
    };
    files::write_manifest(path, &m)
}

fn cmd_forward(a: &ForwardArgs) -> Result<()> {
    let weights = files::read_weights(&a.weights)?;
    let vocab = files::read_vocab(&a.vocab)?;
    if weights.config.vocab_size != vocab.size() {
        return Err(Error::Config(format!(
            "weight bundle expects vocab size {}, vocab file has {}",
            weights.config.vocab_size,
            vocab.size()
        )));
    }
    let feats = files::read_features(&a.features)?;
    let list = files::read_list(&a.list, &vocab)?;

    let pass = forward(&feats, &list, &weights)?;
    files::write_posterior(&a.out, &pass.posterior)?;
    let mut outputs: Vec<&Path> = vec![&a.out];
    if let Some(attn_path) = &a.dump_attn {
        let mean = pass.attention.mean_attention();
        files::write_features(attn_path, &AudioEmbeddingSeq::new(mean))?;
        outputs.push(attn_path);
    }

    let manifest = default_manifest(&a.manifest, &a.out);
    let mut args = vec![
        "--weights".into(),
        arg_str(&a.weights),
        "--vocab".into(),
        arg_str(&a.vocab),
        "--features".into(),
        arg_str(&a.features),
        "--list".into(),
        arg_str(&a.list),
        "--out".into(),
        arg_str(&a.out),
    ];
    if let Some(p) = &a.dump_attn {
        args.push("--dump-attn".into());
        args.push(arg_str(p));
    }
    args.push("--manifest".into());
    args.push(arg_str(&manifest));
    emit_manifest(
        &manifest,
        "forward",
        None,
        args,
        &[&a.weights, &a.vocab, &a.features, &a.list],
        &outputs,
    )?;
    println!(
        "forward: {} frames, {} phrases -> {}",
        feats.frames(),
        list.num_phrases(),
        a.out.display()
    );
    Ok(())
}

fn cmd_filter(a: &FilterArgs) -> Result<()> {
    let vocab = files::read_vocab(&a.vocab)?;
    let post = files::read_posterior(&a.posterior)?;
    let list = files::read_list(&a.list, &vocab)?;
    let config = FilterConfig {
        window_scale: a.window_scale,
        stride: a.stride,
        psc_threshold: a.psc_th,
        soc_threshold: a.soc_th,
        max_kept: a.max_kept,
    };

    let (report, filtered) = filter_list(&post, &list, &config)?;
    files::write_filter_report(&a.report, &report, &config)?;
    files::write_list(&a.out_list, &filtered)?;

    let manifest = default_manifest(&a.manifest, &a.report);
    let args = vec![
        "--posterior".into(),
        arg_str(&a.posterior),
        "--list".into(),
        arg_str(&a.list),
        "--vocab".into(),
        arg_str(&a.vocab),
        "--report".into(),
        arg_str(&a.report),
        "--out-list".into(),
        arg_str(&a.out_list),
        "--psc-th".into(),
        a.psc_th.to_string(),
        "--soc-th".into(),
        a.soc_th.to_string(),
        "--window-scale".into(),
        a.window_scale.to_string(),
        "--stride".into(),
        a.stride.to_string(),
        "--max-kept".into(),
        a.max_kept.to_string(),
        "--manifest".into(),
        arg_str(&manifest),
    ];
    emit_manifest(
        &manifest,
        "filter",
        None,
        args,
        &[&a.posterior, &a.list, &a.vocab],
        &[&a.report, &a.out_list],
    )?;
    println!(
        "filter: kept {} of {} phrases",
        report.kept,
        list.num_phrases()
    );
    Ok(())
}

fn cmd_decode(a: &DecodeArgs) -> Result<()> {
    let vocab = files::read_vocab(&a.vocab)?;
    let boost_trie = match &a.boost_list {
        Some(p) => {
            let list = files::read_list(p, &vocab)?;
            Some(BoostTrie::from_list(&list)?)
        }
        None => None,
    };

    let mut rows: Vec<(String, String)> = Vec::new();
    let mut seen = HashSet::new();
    for path in &a.posteriors {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| {
                Error::Domain(format!(
                    "cannot derive an utterance id from {}",
                    path.display()
                ))
            })?;
        if !seen.insert(stem.clone()) {
            return Err(Error::Domain(format!(
                "two posterior files share the utterance id {stem}"
            )));
        }
        let post = files::read_posterior(path)?;
        if post.vocab_size() != vocab.size() {
            return Err(Error::Config(format!(
                "{}: posterior vocab {} does not match vocab file ({})",
                path.display(),
                post.vocab_size(),
                vocab.size()
            )));
        }
        let tokens = if a.greedy {
            greedy_decode(&post)
        } else {
            let boost = boost_trie.as_ref().map(|t| (t, a.boost_weight));
            prefix_beam_decode(&post, a.beam, boost)?
                .into_iter()
                .next()
                .map(|h| h.tokens)
                .unwrap_or_default()
        };
        rows.push((stem, vocab.detokenize(&tokens)?));
    }
    files::write_transcripts(&a.out, &rows)?;

    let manifest = default_manifest(&a.manifest, &a.out);
    let mut args: Vec<String> = a.posteriors.iter().map(|p| arg_str(p)).collect();
    args.push("--vocab".into());
    args.push(arg_str(&a.vocab));
    args.push("--out".into());
    args.push(arg_str(&a.out));
    if a.greedy {
        args.push("--greedy".into());
    } else {
        args.push("--beam".into());
        args.push(a.beam.to_string());
        if let Some(p) = &a.boost_list {
            args.push("--boost-list".into());
            args.push(arg_str(p));
            args.push("--boost-weight".into());
            args.push(a.boost_weight.to_string());
        }
    }
    args.push("--manifest".into());
    args.push(arg_str(&manifest));
    let mut inputs: Vec<&Path> = vec![&a.vocab];
    if let Some(p) = &a.boost_list {
        inputs.push(p);
    }
    inputs.extend(a.posteriors.iter().map(PathBuf::as_path));
    emit_manifest(&manifest, "decode", None, args, &inputs, &[&a.out])?;
    println!("decode: {} utterances -> {}", rows.len(), a.out.display());
    Ok(())
}

/// Both files must cover exactly the same utterance ids, each once.
fn check_id_sets(refs: &[(String, String)], hyps: &[(String, String)]) -> Result<()> {
    for (name, rows) in [("reference", refs), ("hypothesis", hyps)] {
        let mut seen = HashSet::new();
        for (id, _) in rows {
            if !seen.insert(id.as_str()) {
                return Err(Error::Domain(format!(
                    "{name} file repeats utterance id {id}"
                )));
            }
        }
    }
    let ref_ids: BTreeSet<&str> = refs.iter().map(|(id, _)| id.as_str()).collect();
    let hyp_ids: BTreeSet<&str> = hyps.iter().map(|(id, _)| id.as_str()).collect();
    if ref_ids != hyp_ids {
        let missing: Vec<&str> = ref_ids.difference(&hyp_ids).copied().collect();
        let extra: Vec<&str> = hyp_ids.difference(&ref_ids).copied().collect();
        let mut msg = String::from("utterance ids differ between references and hypotheses");
        if !missing.is_empty() {
            msg.push_str(&format!("; missing from hypotheses: {}", missing.join(" ")));
        }
        if !extra.is_empty() {
            msg.push_str(&format!("; only in hypotheses: {}", extra.join(" ")));
        }
        return Err(Error::Domain(msg));
    }
    Ok(())
}

fn cmd_score(a: &ScoreArgs) -> Result<()> {
    let vocab = files::read_vocab(&a.vocab)?;
    let list = files::read_list(&a.list, &vocab)?;
    let refs = files::read_transcripts(&a.refs)?;
    let hyps = files::read_transcripts(&a.hyps)?;
    check_id_sets(&refs, &hyps)?;
    let hyp_by_id: HashMap<&str, &str> = hyps
        .iter()
        .map(|(id, text)| (id.as_str(), text.as_str()))
        .collect();

    let mut summary = ScoreSummary::default();
    let mut per_utt = Vec::with_capacity(refs.len());
    for (id, ref_text) in &refs {
        let hyp_text = hyp_by_id[id.as_str()];
        let utt = score_utterance(ref_text, hyp_text, &list);
        summary.corpus.absorb(&utt);
        summary
            .phrases
            .absorb(&phrase_hits(ref_text, hyp_text, &list));
        per_utt.push((id.clone(), utt));
    }
    files::write_score_report(&a.report, &summary, &per_utt)?;

    let manifest = default_manifest(&a.manifest, &a.report);
    let args = vec![
        "--refs".into(),
        arg_str(&a.refs),
        "--hyps".into(),
        arg_str(&a.hyps),
        "--list".into(),
        arg_str(&a.list),
        "--vocab".into(),
        arg_str(&a.vocab),
        "--report".into(),
        arg_str(&a.report),
        "--manifest".into(),
        arg_str(&manifest),
    ];
    emit_manifest(
        &manifest,
        "score",
        None,
        args,
        &[&a.refs, &a.hyps, &a.list, &a.vocab],
        &[&a.report],
    )?;
    println!("{}", summary.headline());
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let seed = resolve_seed(a.seed, SynthConfig::default().seed)?;
    let cfg = SynthConfig {
        seed,
        n_utterances: a.utterances,
        words_per_utt: (a.min_words, a.max_words),
        rare_per_utt: a.rare_per_utt,
        attenuation: a.attenuation,
        peak: a.peak,
        jitter: a.jitter,
        frames_per_token: a.frames_per_token,
        n_distractors: a.distractors,
    };
    let scenario = generate(&cfg)?;
    let written = write_scenario(&a.out_dir, &scenario)?;

    let manifest = a
        .manifest
        .clone()
        .unwrap_or_else(|| a.out_dir.join("manifest.txt"));
    let args = vec![
        "--out-dir".into(),
        arg_str(&a.out_dir),
        "--seed".into(),
        seed.to_string(),
        "--utterances".into(),
        a.utterances.to_string(),
        "--min-words".into(),
        a.min_words.to_string(),
        "--max-words".into(),
        a.max_words.to_string(),
        "--rare-per-utt".into(),
        a.rare_per_utt.to_string(),
        "--attenuation".into(),
        a.attenuation.to_string(),
        "--peak".into(),
        a.peak.to_string(),
        "--jitter".into(),
        a.jitter.to_string(),
        "--frames-per-token".into(),
        a.frames_per_token.to_string(),
        "--distractors".into(),
        a.distractors.to_string(),
        "--manifest".into(),
        arg_str(&manifest),
    ];
    let outputs: Vec<&Path> = written.iter().map(PathBuf::as_path).collect();
    emit_manifest(&manifest, "synth", Some(seed), args, &[], &outputs)?;
    println!(
        "synth: {} utterances, {} true phrases, {} stress phrases -> {}",
        scenario.utterances.len(),
        scenario.true_list.num_phrases(),
        scenario.stress_list.num_phrases(),
        a.out_dir.display()
    );
    Ok(())
}

fn cmd_selfcheck(a: &SelfcheckArgs) -> Result<()> {
    let seed = resolve_seed(a.seed, 1)?;
    let results = ctxbias::selfcheck::run(&SelfCheckOptions {
        seed,
        perturb_ctc: a.perturb_ctc,
    })?;

    let mut text = String::new();
    for r in &results {
        let mut line = format!(
            "suite {}: {} cases, {} failures",
            r.name, r.cases, r.failures
        );
        if let Some(detail) = &r.detail {
            line.push_str(&format!(" ({detail})"));
        }
        println!("{line}");
        text.push_str(&line);
        text.push('\n');
    }
    let verdict = if all_passed(&results) {
        "selfcheck PASS"
    } else {
        "selfcheck FAIL"
    };
    println!("{verdict}");
    text.push_str(verdict);
    text.push('\n');
    files::atomic_write(&a.out, text.as_bytes())?;

    let manifest = default_manifest(&a.manifest, &a.out);
    let mut args = vec![
        "--seed".into(),
        seed.to_string(),
        "--out".into(),
        arg_str(&a.out),
    ];
    if let Some(p) = a.perturb_ctc {
        args.push("--perturb-ctc".into());
        args.push(p.to_string());
    }
    args.push("--manifest".into());
    args.push(arg_str(&manifest));
    emit_manifest(&manifest, "selfcheck", Some(seed), args, &[], &[&a.out])?;

    if all_passed(&results) {
        Ok(())
    } else {
        let failed = results.iter().filter(|r| !r.passed()).count();
        Err(Error::Domain(format!(
            "{failed} of {} suites failed",
            results.len()
        )))
    }
}

fn cmd_replay(a: &ReplayArgs) -> Result<()> {
    let m = files::read_manifest(&a.manifest)?;
    for (digest, path) in &m.inputs {
        let actual = files::sha256_file(Path::new(path))?;
        if actual != *digest {
            return Err(Error::Domain(format!(
                "input {path} no longer matches the manifest (digest {actual}, recorded {digest})"
            )));
        }
    }

    let argv = ["ctxbias".to_string(), m.command.clone()]
        .into_iter()
        .chain(m.args.iter().cloned());
    let cli = Cli::try_parse_from(argv)
        .map_err(|e| Error::Domain(format!("manifest arguments do not parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Error::Domain(
            "manifest records a replay command; refusing to recurse".into(),
        ));
    }
    execute(&cli.command)?;

    for (digest, path) in &m.outputs {
        let actual = files::sha256_file(Path::new(path))?;
        if actual != *digest {
            return Err(Error::Domain(format!(
                "replayed output {path} differs from the manifest (digest {actual}, recorded {digest})"
            )));
        }
    }
    println!(
        "replay of {}: {} inputs and {} outputs verified",
        m.command,
        m.inputs.len(),
        m.outputs.len()
    );
    Ok(())
}

fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Forward(a) => cmd_forward(a),
        Command::Filter(a) => cmd_filter(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Score(a) => cmd_score(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Selfcheck(a) => cmd_selfcheck(a),
        Command::Replay(a) => cmd_replay(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
