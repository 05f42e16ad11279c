//! End-to-end tests driving the compiled `ctxbias` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctxbias::files;
use tempfile::TempDir;

fn ctxbias() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ctxbias"));
    cmd.env_remove("CTXBIAS_SEED");
    cmd
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        stdout_of(out),
        stderr_of(out)
    );
}

fn run_forward(list: &Path, out: &Path) -> Output {
    ctxbias()
        .arg("forward")
        .arg("--weights")
        .arg(fixture("tiny.weights"))
        .arg("--vocab")
        .arg(fixture("tiny.vocab"))
        .arg("--features")
        .arg(fixture("tiny.feats"))
        .arg("--list")
        .arg(list)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn sorted_posteriors(dir: &Path) -> Vec<PathBuf> {
    let mut posts: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    posts.sort();
    posts
}

#[test]
fn forward_on_the_desk_fixture_reproduces_the_golden_posterior() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("tiny.cpost");
    assert_exit(&run_forward(&fixture("tiny.list"), &out), 0);
    assert_eq!(
        fs::read(&out).unwrap(),
        fs::read(fixture("tiny.cpost")).unwrap()
    );
    let manifest = files::read_manifest(&dir.path().join("tiny.cpost.manifest")).unwrap();
    assert_eq!(manifest.command, "forward");
    assert_eq!(manifest.inputs.len(), 4);
    assert_eq!(manifest.outputs.len(), 1);
}

#[test]
fn dumped_attention_rows_are_distributions_over_the_list() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("tiny.cpost");
    let attn = dir.path().join("attn.feats");
    let run = ctxbias()
        .arg("forward")
        .arg("--weights")
        .arg(fixture("tiny.weights"))
        .arg("--vocab")
        .arg(fixture("tiny.vocab"))
        .arg("--features")
        .arg(fixture("tiny.feats"))
        .arg("--list")
        .arg(fixture("tiny.list"))
        .arg("--out")
        .arg(&out)
        .arg("--dump-attn")
        .arg(&attn)
        .output()
        .unwrap();
    assert_exit(&run, 0);

    let mean = files::read_features(&attn).unwrap();
    assert_eq!(mean.frames(), 5);
    assert_eq!(mean.dim(), 5);
    for t in 0..mean.frames() {
        let mass: f64 = mean.frame(t).iter().sum();
        assert!((mass - 1.0).abs() < 1e-4, "frame {t} sums to {mass}");
    }
}

#[test]
fn an_emptied_list_reproduces_the_no_bias_posterior_bit_for_bit() {
    let dir = TempDir::new().unwrap();
    let empty_list = dir.path().join("empty.list");
    fs::write(&empty_list, "# no phrases\n").unwrap();

    let first = dir.path().join("first.cpost");
    assert_exit(&run_forward(&empty_list, &first), 0);

    let biased = dir.path().join("biased.cpost");
    assert_exit(&run_forward(&fixture("tiny.list"), &biased), 0);
    assert_ne!(fs::read(&first).unwrap(), fs::read(&biased).unwrap());

    let report = dir.path().join("filter.report");
    let kept = dir.path().join("kept.list");
    let run = ctxbias()
        .arg("filter")
        .arg("--posterior")
        .arg(&first)
        .arg("--list")
        .arg(fixture("tiny.list"))
        .arg("--vocab")
        .arg(fixture("tiny.vocab"))
        .arg("--report")
        .arg(&report)
        .arg("--out-list")
        .arg(&kept)
        .arg("--psc-th")
        .arg("0.99")
        .arg("--soc-th")
        .arg("0.99")
        .output()
        .unwrap();
    assert_exit(&run, 0);
    assert!(stdout_of(&run).contains("kept 0 of 4"));

    let second = dir.path().join("second.cpost");
    assert_exit(&run_forward(&kept, &second), 0);
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
}

#[test]
fn zero_thresholds_keep_every_phrase() {
    let dir = TempDir::new().unwrap();
    let report = dir.path().join("filter.report");
    let kept = dir.path().join("kept.list");
    let run = ctxbias()
        .arg("filter")
        .arg("--posterior")
        .arg(fixture("tiny.cpost"))
        .arg("--list")
        .arg(fixture("tiny.list"))
        .arg("--vocab")
        .arg(fixture("tiny.vocab"))
        .arg("--report")
        .arg(&report)
        .arg("--out-list")
        .arg(&kept)
        .arg("--psc-th")
        .arg("0")
        .arg("--soc-th")
        .arg("0")
        .output()
        .unwrap();
    assert_exit(&run, 0);
    assert!(stdout_of(&run).contains("kept 4 of 4"));

    let vocab = files::read_vocab(&fixture("tiny.vocab")).unwrap();
    let list = files::read_list(&kept, &vocab).unwrap();
    assert_eq!(list.num_phrases(), 4);
}

#[test]
fn threshold_flags_outside_the_unit_interval_are_usage_errors() {
    for flag_pair in [vec!["--psc-th", "1.01"], vec!["--soc-th=-0.2"]] {
        let run = ctxbias()
            .arg("filter")
            .arg("--posterior")
            .arg(fixture("tiny.cpost"))
            .arg("--list")
            .arg(fixture("tiny.list"))
            .arg("--vocab")
            .arg(fixture("tiny.vocab"))
            .arg("--report")
            .arg("r")
            .arg("--out-list")
            .arg("k")
            .args(flag_pair)
            .output()
            .unwrap();
        assert_exit(&run, 2);
        assert!(stderr_of(&run).contains("outside [0, 1]"));
    }
}

#[test]
fn decode_without_a_vocabulary_is_a_usage_error() {
    let run = ctxbias()
        .arg("decode")
        .arg(fixture("tiny.cpost"))
        .arg("--out")
        .arg("hyp.tsv")
        .output()
        .unwrap();
    assert_exit(&run, 2);
    assert!(stderr_of(&run).contains("--vocab"));
}

#[test]
fn greedy_and_beam_flags_reject_each_other() {
    let run = ctxbias()
        .arg("decode")
        .arg(fixture("tiny.cpost"))
        .arg("--vocab")
        .arg(fixture("tiny.vocab"))
        .arg("--out")
        .arg("hyp.tsv")
        .arg("--greedy")
        .arg("--beam")
        .arg("4")
        .output()
        .unwrap();
    assert_exit(&run, 2);
}

#[test]
fn a_truncated_posterior_names_the_byte_offset() {
    let dir = TempDir::new().unwrap();
    let broken = dir.path().join("broken.cpost");
    let bytes = fs::read(fixture("tiny.cpost")).unwrap();
    fs::write(&broken, &bytes[..20]).unwrap();

    let run = ctxbias()
        .arg("decode")
        .arg(&broken)
        .arg("--vocab")
        .arg(fixture("tiny.vocab"))
        .arg("--out")
        .arg(dir.path().join("hyp.tsv"))
        .arg("--greedy")
        .output()
        .unwrap();
    assert_exit(&run, 1);
    let err = stderr_of(&run);
    assert!(err.contains("parse error"), "stderr: {err}");
    assert!(err.contains("offset"), "stderr: {err}");
}

#[test]
fn decode_rejects_two_posteriors_with_the_same_stem() {
    let dir = TempDir::new().unwrap();
    let run = ctxbias()
        .arg("decode")
        .arg(fixture("tiny.cpost"))
        .arg(fixture("tiny.cpost"))
        .arg("--vocab")
        .arg(fixture("tiny.vocab"))
        .arg("--out")
        .arg(dir.path().join("hyp.tsv"))
        .arg("--greedy")
        .output()
        .unwrap();
    assert_exit(&run, 1);
    assert!(stderr_of(&run).contains("utterance id"));
}

#[test]
fn scoring_reports_rates_in_the_wer_table_format() {
    let dir = TempDir::new().unwrap();
    let refs = dir.path().join("refs.tsv");
    let hyps = dir.path().join("hyps.tsv");
    fs::write(&refs, "u1\tcat klenix\n").unwrap();
    fs::write(&hyps, "u1\tcat zubur\n").unwrap();

    let report = dir.path().join("score.report");
    let run = ctxbias()
        .arg("score")
        .arg("--refs")
        .arg(&refs)
        .arg("--hyps")
        .arg(&hyps)
        .arg("--list")
        .arg(fixture("tiny.list"))
        .arg("--vocab")
        .arg(fixture("tiny.vocab"))
        .arg("--report")
        .arg(&report)
        .output()
        .unwrap();
    assert_exit(&run, 0);
    assert!(stdout_of(&run).contains("WER (U-WER/B-WER): 50.00 (0.00/100.00)"));

    let text = fs::read_to_string(&report).unwrap();
    assert!(
        text.contains("corpus 50.00 (0.00/100.00)"),
        "report:\n{text}"
    );
    assert!(
        text.contains("utt u1 50.00 (0.00/100.00)"),
        "report:\n{text}"
    );
}

#[test]
fn mismatched_utterance_ids_list_the_difference() {
    let dir = TempDir::new().unwrap();
    let refs = dir.path().join("refs.tsv");
    let hyps = dir.path().join("hyps.tsv");
    fs::write(&refs, "u1\tcat\nu2\tdog\n").unwrap();
    fs::write(&hyps, "u1\tcat\nu3\tdog\n").unwrap();

    let run = ctxbias()
        .arg("score")
        .arg("--refs")
        .arg(&refs)
        .arg("--hyps")
        .arg(&hyps)
        .arg("--list")
        .arg(fixture("tiny.list"))
        .arg("--vocab")
        .arg(fixture("tiny.vocab"))
        .arg("--report")
        .arg(dir.path().join("score.report"))
        .output()
        .unwrap();
    assert_exit(&run, 1);
    let err = stderr_of(&run);
    assert!(err.contains("missing from hypotheses: u2"), "stderr: {err}");
    assert!(err.contains("only in hypotheses: u3"), "stderr: {err}");
}

#[test]
fn synth_without_attenuation_greedy_decodes_back_to_the_references() {
    let dir = TempDir::new().unwrap();
    let scenario = dir.path().join("scn");
    let run = ctxbias()
        .arg("synth")
        .arg("--out-dir")
        .arg(&scenario)
        .arg("--seed")
        .arg("11")
        .arg("--utterances")
        .arg("5")
        .arg("--attenuation")
        .arg("1.0")
        .output()
        .unwrap();
    assert_exit(&run, 0);

    let hyp = dir.path().join("hyp.tsv");
    let mut decode = ctxbias();
    decode.arg("decode");
    for post in sorted_posteriors(&scenario.join("post")) {
        decode.arg(post);
    }
    let run = decode
        .arg("--vocab")
        .arg(scenario.join("vocab.txt"))
        .arg("--out")
        .arg(&hyp)
        .arg("--greedy")
        .output()
        .unwrap();
    assert_exit(&run, 0);
    assert_eq!(
        fs::read(&hyp).unwrap(),
        fs::read(scenario.join("refs.tsv")).unwrap()
    );
}

#[test]
fn the_same_seed_rebuilds_an_identical_scenario() {
    let dir = TempDir::new().unwrap();
    for sub in ["a", "b"] {
        let run = ctxbias()
            .arg("synth")
            .arg("--out-dir")
            .arg(dir.path().join(sub))
            .arg("--seed")
            .arg("404")
            .arg("--utterances")
            .arg("4")
            .output()
            .unwrap();
        assert_exit(&run, 0);
    }
    for name in ["vocab.txt", "refs.tsv", "list_true.txt", "list_stress.txt"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(name)).unwrap(),
            fs::read(dir.path().join("b").join(name)).unwrap(),
            "{name} differs between equal-seed runs"
        );
    }
    for post in sorted_posteriors(&dir.path().join("a/post")) {
        let twin = dir.path().join("b/post").join(post.file_name().unwrap());
        assert_eq!(fs::read(&post).unwrap(), fs::read(&twin).unwrap());
    }
}

#[test]
fn the_seed_falls_back_to_the_environment() {
    let dir = TempDir::new().unwrap();
    let run = ctxbias()
        .env("CTXBIAS_SEED", "99")
        .arg("synth")
        .arg("--out-dir")
        .arg(dir.path().join("scn"))
        .arg("--utterances")
        .arg("3")
        .output()
        .unwrap();
    assert_exit(&run, 0);
    let manifest = files::read_manifest(&dir.path().join("scn/manifest.txt")).unwrap();
    assert_eq!(manifest.seed, Some(99));

    let run = ctxbias()
        .env("CTXBIAS_SEED", "banana")
        .arg("synth")
        .arg("--out-dir")
        .arg(dir.path().join("bad"))
        .output()
        .unwrap();
    assert_exit(&run, 1);
    assert!(stderr_of(&run).contains("CTXBIAS_SEED"));
}

#[test]
fn replaying_a_manifest_restores_deleted_outputs() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("tiny.cpost");
    assert_exit(&run_forward(&fixture("tiny.list"), &out), 0);
    let golden = fs::read(&out).unwrap();
    fs::remove_file(&out).unwrap();

    let run = ctxbias()
        .arg("replay")
        .arg(dir.path().join("tiny.cpost.manifest"))
        .output()
        .unwrap();
    assert_exit(&run, 0);
    assert!(stdout_of(&run).contains("replay of forward"));
    assert_eq!(fs::read(&out).unwrap(), golden);
}

#[test]
fn replay_refuses_when_an_input_has_drifted() {
    let dir = TempDir::new().unwrap();
    for name in ["tiny.weights", "tiny.vocab", "tiny.feats", "tiny.list"] {
        fs::copy(fixture(name), dir.path().join(name)).unwrap();
    }
    let run = ctxbias()
        .current_dir(dir.path())
        .arg("forward")
        .arg("--weights")
        .arg("tiny.weights")
        .arg("--vocab")
        .arg("tiny.vocab")
        .arg("--features")
        .arg("tiny.feats")
        .arg("--list")
        .arg("tiny.list")
        .arg("--out")
        .arg("out.cpost")
        .output()
        .unwrap();
    assert_exit(&run, 0);

    let mut list = fs::read(dir.path().join("tiny.list")).unwrap();
    list.extend_from_slice(b"# drift\n");
    fs::write(dir.path().join("tiny.list"), list).unwrap();

    let run = ctxbias()
        .current_dir(dir.path())
        .arg("replay")
        .arg("out.cpost.manifest")
        .output()
        .unwrap();
    assert_exit(&run, 1);
    assert!(stderr_of(&run).contains("no longer matches"));
}

#[test]
fn selfcheck_passes_clean_and_fails_when_perturbed() {
    let dir = TempDir::new().unwrap();
    let run = ctxbias()
        .arg("selfcheck")
        .arg("--seed")
        .arg("1")
        .arg("--out")
        .arg(dir.path().join("check.report"))
        .output()
        .unwrap();
    assert_exit(&run, 0);
    let text = stdout_of(&run);
    assert!(text.contains("selfcheck PASS"));
    assert!(text.lines().filter(|l| l.starts_with("suite ")).count() >= 4);

    let run = ctxbias()
        .arg("selfcheck")
        .arg("--seed")
        .arg("1")
        .arg("--out")
        .arg(dir.path().join("perturbed.report"))
        .arg("--perturb-ctc")
        .arg("0.001")
        .output()
        .unwrap();
    assert_exit(&run, 1);
    assert!(stdout_of(&run).contains("selfcheck FAIL"));
}
