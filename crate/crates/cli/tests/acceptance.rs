//! Release gate for the toolkit. One test per criterion; each prints a
//! single PASS line with its measured numbers once every assertion holds,
//! so `--nocapture` shows the whole scorecard at a glance.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use ctxbias::ctc::{ctc_loss, ctc_loss_oracle, prefix_beam_decode, BoostTrie, LabelSeq};
use ctxbias::eval::{score_utterance, CorpusScore, RateStat};
use ctxbias::files;
use ctxbias::filter::{filter_list, psc, soc, soc_oracle, FilterConfig};
use ctxbias::model::forward;
use ctxbias::nn::Matrix;
use ctxbias::posterior::PosteriorMatrix;
use ctxbias::synth::{generate, SynthConfig, SynthScenario};
use ctxbias::vocab::{BiasingList, ContextPhrase, Provenance, Vocab, BLANK_TOKEN};
use ctxbias::Error;

fn chacha(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_posterior(rng: &mut ChaCha8Rng, frames: usize, vocab: usize) -> PosteriorMatrix {
    let mut logits = Matrix::zeros(frames, vocab);
    for t in 0..frames {
        for v in 0..vocab {
            logits.set(t, v, rng.random_range(-2.0..2.0));
        }
    }
    PosteriorMatrix::from_logits(&logits).unwrap()
}

/// Every label sequence over tokens `1..v` with length `0..=max_len`.
fn label_seqs_up_to(v: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut all: Vec<Vec<usize>> = vec![Vec::new()];
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for seq in &frontier {
            for tok in 1..v {
                let mut longer = seq.clone();
                longer.push(tok);
                next.push(longer);
            }
        }
        all.extend(next.iter().cloned());
        frontier = next;
    }
    all
}

fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

#[test]
fn a1_ctc_loss_agrees_with_full_path_enumeration() {
    let started = Instant::now();
    let mut rng = chacha(0xAC01);
    let mut worst = 0.0f64;
    let mut compared = 0usize;
    let mut infeasible = 0usize;
    for _ in 0..200 {
        let t = rng.random_range(1..=5);
        let v = rng.random_range(2..=4);
        let post = random_posterior(&mut rng, t, v);
        for ids in label_seqs_up_to(v, 3) {
            let labels = LabelSeq::new(ids, v).unwrap();
            match ctc_loss(&post, &labels, false) {
                Ok(out) => {
                    let oracle = ctc_loss_oracle(&post, &labels).unwrap();
                    worst = worst.max((out.loss - oracle).abs());
                    compared += 1;
                }
                Err(Error::InfeasibleAlignment { .. }) => {
                    assert_eq!(ctc_loss_oracle(&post, &labels).unwrap(), f64::INFINITY);
                    infeasible += 1;
                }
                Err(e) => panic!("unexpected ctc_loss error: {e}"),
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(worst < 1e-9, "max |loss - oracle| = {worst:e}");
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    println!(
        "PASS ctc loss vs path enumeration: 200 posteriors, {compared} feasible and \
         {infeasible} infeasible label pairs, max |diff| {worst:.2e}, {elapsed:.2?}"
    );
}

#[test]
fn a2_analytic_gradient_matches_central_differences() {
    let started = Instant::now();
    let mut rng = chacha(0xAC02);
    let h = 1e-5;
    let (t, v) = (4, 4);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let mut logits = Matrix::zeros(t, v);
        for r in 0..t {
            for c in 0..v {
                logits.set(r, c, rng.random_range(-1.5..1.5));
            }
        }
        let labels = loop {
            let n = rng.random_range(0..=3);
            let ids: Vec<usize> = (0..n).map(|_| rng.random_range(1..v)).collect();
            let labels = LabelSeq::new(ids, v).unwrap();
            if labels.min_frames() <= t {
                break labels;
            }
        };
        let post = PosteriorMatrix::from_logits(&logits).unwrap();
        let grad = ctc_loss(&post, &labels, true).unwrap().grad.unwrap();
        for r in 0..t {
            for c in 0..v {
                let mut plus = logits.clone();
                plus.set(r, c, plus.get(r, c) + h);
                let mut minus = logits.clone();
                minus.set(r, c, minus.get(r, c) - h);
                let lp = ctc_loss(
                    &PosteriorMatrix::from_logits(&plus).unwrap(),
                    &labels,
                    false,
                )
                .unwrap()
                .loss;
                let lm = ctc_loss(
                    &PosteriorMatrix::from_logits(&minus).unwrap(),
                    &labels,
                    false,
                )
                .unwrap()
                .loss;
                let fd = (lp - lm) / (2.0 * h);
                let analytic = grad.get(r, c);
                let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(worst < 1e-4, "max relative gradient error = {worst:e}");
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    println!(
        "PASS gradient vs central differences: 50 4x4 instances at h = 1e-5, \
         max relative error {worst:.2e}, {elapsed:.2?}"
    );
}

#[test]
fn a3_order_score_agrees_with_exhaustive_assignments() {
    let mut rng = chacha(0xAC03);
    let scales = [1.0, 1.5, 2.0, 3.0];
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let t = rng.random_range(1..=8);
        let v = rng.random_range(2..=4);
        let post = random_posterior(&mut rng, t, v);
        let u = rng.random_range(1..=3);
        let tokens: Vec<usize> = (0..u).map(|_| rng.random_range(1..v)).collect();
        let cfg = FilterConfig {
            window_scale: scales[rng.random_range(0..scales.len())],
            stride: rng.random_range(1..=3),
            ..FilterConfig::default()
        };
        let fast = soc(&post, &tokens, &cfg).unwrap();
        let slow = soc_oracle(&post, &tokens, &cfg).unwrap();
        worst = worst.max((fast - slow).abs());
        let presence = psc(&post, &tokens, &cfg).unwrap();
        assert!(fast <= presence + 1e-12, "soc {fast} > psc {presence}");
    }
    assert!(worst < 1e-12, "max |soc - oracle| = {worst:e}");
    println!(
        "PASS order score vs exhaustive assignments: 500 matrices, \
         max |diff| {worst:.2e}, soc <= psc throughout"
    );
}

#[test]
fn a4_filter_fixture_scores_and_survivor_set() {
    let post = PosteriorMatrix::from_linear_rows(&[
        vec![0.8, 0.1, 0.1],
        vec![0.1, 0.7, 0.2],
        vec![0.1, 0.2, 0.7],
    ])
    .unwrap();
    let cfg = FilterConfig::default();
    assert!((psc(&post, &[1, 2], &cfg).unwrap() - 0.7).abs() < 1e-12);
    assert!((psc(&post, &[2, 1], &cfg).unwrap() - 0.7).abs() < 1e-12);
    assert!((soc(&post, &[1, 2], &cfg).unwrap() - 0.7).abs() < 1e-12);
    assert!((soc(&post, &[2, 1], &cfg).unwrap() - 0.4).abs() < 1e-12);

    let vocab = Vocab::new(vec![BLANK_TOKEN.into(), "a".into(), "b".into()]).unwrap();
    let list = BiasingList::new(vec![
        (
            ContextPhrase::new("ab", &vocab).unwrap(),
            Provenance::TrueBias,
        ),
        (
            ContextPhrase::new("ba", &vocab).unwrap(),
            Provenance::Distractor,
        ),
    ])
    .unwrap();
    let cfg = FilterConfig {
        psc_threshold: 0.5,
        soc_threshold: 0.5,
        ..FilterConfig::default()
    };
    let (report, filtered) = filter_list(&post, &list, &cfg).unwrap();
    assert_eq!(report.kept, 1);
    let survivors: Vec<&str> = filtered.real_phrases().map(|(_, p)| p.text()).collect();
    assert_eq!(survivors, ["ab"]);
    println!(
        "PASS filter fixture: psc 0.70 both orders, soc 0.70 vs 0.40, \
         thresholds (0.5, 0.5) keep exactly the ordered phrase"
    );
}

#[test]
fn a5_second_pass_with_an_emptied_list_is_bit_identical() {
    let weights = files::read_weights(&fixture_path("tiny.weights")).unwrap();
    let vocab = files::read_vocab(&fixture_path("tiny.vocab")).unwrap();
    let feats = files::read_features(&fixture_path("tiny.feats")).unwrap();
    let shipped = files::read_list(&fixture_path("tiny.list"), &vocab).unwrap();

    let first = forward(&feats, &BiasingList::no_bias_only(), &weights).unwrap();
    let cfg = FilterConfig {
        psc_threshold: 0.9,
        soc_threshold: 0.9,
        ..FilterConfig::default()
    };
    let (report, filtered) = filter_list(&first.posterior, &shipped, &cfg).unwrap();
    assert_eq!(report.kept, 0);
    assert_eq!(filtered.num_phrases(), 0);

    let second = forward(&feats, &filtered, &weights).unwrap();
    assert_eq!(first.posterior.frames(), second.posterior.frames());
    for (a, b) in first
        .posterior
        .log_data()
        .iter()
        .zip(second.posterior.log_data())
    {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    println!(
        "PASS second pass idempotence: all {} log probabilities bit-identical \
         after the list emptied out",
        first.posterior.log_data().len()
    );
}

/// Plain unit-cost edit distance, written independently of the library.
fn edit_distance(reference: &[&str], hypothesis: &[&str]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    for (i, r) in reference.iter().enumerate() {
        let mut cur = vec![i + 1; hypothesis.len() + 1];
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[hypothesis.len()]
}

#[test]
fn a6_error_counts_reconcile_and_match_the_dp_oracle() {
    let mut rng = chacha(0xAC06);
    let vocab = Vocab::ascii_lowercase();
    let lexicon = [
        "play", "stop", "music", "light", "timer", "branix", "zudul", "shamar", "klevek", "trifet",
        "on", "the",
    ];
    for _ in 0..1000 {
        let draw = |rng: &mut ChaCha8Rng, n: usize| -> Vec<&str> {
            (0..n)
                .map(|_| lexicon[rng.random_range(0..lexicon.len())])
                .collect()
        };
        let n_ref = rng.random_range(0..=8);
        let ref_words = draw(&mut rng, n_ref);
        let n_hyp = rng.random_range(0..=8);
        let hyp_words = draw(&mut rng, n_hyp);

        let mut list = BiasingList::no_bias_only();
        let mut used = BTreeSet::new();
        let n_phrases = rng.random_range(0..=3);
        for _ in 0..n_phrases {
            let n_words = rng.random_range(1..=2);
            let phrase = draw(&mut rng, n_words).join(" ");
            if used.insert(phrase.clone()) {
                list.push(
                    ContextPhrase::new(&phrase, &vocab).unwrap(),
                    Provenance::TrueBias,
                )
                .unwrap();
            }
        }

        let reference = ref_words.join(" ");
        let hypothesis = hyp_words.join(" ");
        let score = score_utterance(&reference, &hypothesis, &list);
        assert_eq!(
            score.overall.errors,
            score.unbiased.errors + score.biased.errors
        );
        assert_eq!(
            score.overall.denominator,
            score.unbiased.denominator + score.biased.denominator
        );
        assert_eq!(score.overall.denominator, ref_words.len());
        assert_eq!(
            score.overall.errors,
            score.substitutions + score.deletions + score.insertions
        );
        assert_eq!(score.overall.errors, edit_distance(&ref_words, &hyp_words));
    }
    println!(
        "PASS metric bookkeeping: 1000 random triples split exactly into \
         biased plus unbiased and match the edit-distance oracle"
    );
}

#[test]
fn a7_boosting_and_filtering_trend_on_the_synthetic_corpus() {
    const BEAM: usize = 8;
    const WEIGHT: f64 = 2.0;
    let base = SynthConfig {
        seed: 7,
        n_utterances: 8,
        rare_per_utt: 1,
        attenuation: 0.4,
        ..SynthConfig::default()
    };
    let clean = generate(&base).unwrap();
    let n_true = clean.true_list.num_phrases();
    let stress = generate(&SynthConfig {
        n_distractors: 10 * n_true,
        ..base
    })
    .unwrap();
    assert_eq!(stress.stress_list.num_phrases(), 11 * n_true);

    let tag_list = &clean.true_list;
    let decode_pool = |scenario: &SynthScenario, boost: Option<(&BoostTrie, f64)>| {
        let mut pooled = CorpusScore::default();
        for utt in &scenario.utterances {
            let hyps = prefix_beam_decode(&utt.posterior, BEAM, boost).unwrap();
            let text = scenario.vocab.detokenize(&hyps[0].tokens).unwrap();
            pooled.absorb(&score_utterance(&utt.reference, &text, tag_list));
        }
        pooled
    };
    let rate = |s: &RateStat| s.rate().expect("nonzero denominator");

    let unbiased = decode_pool(&clean, None);
    let trie = BoostTrie::from_list(&clean.true_list).unwrap();
    let boosted = decode_pool(&clean, Some((&trie, WEIGHT)));

    let b_unbiased = rate(&unbiased.biased);
    let b_boosted = rate(&boosted.biased);
    assert!(
        b_unbiased > 0.0,
        "attenuation left no biased errors to recover"
    );
    let rel_drop = (b_unbiased - b_boosted) / b_unbiased;
    assert!(rel_drop >= 0.30, "relative B-WER drop {rel_drop:.3} < 0.30");
    let u_delta = (rate(&boosted.unbiased) - rate(&unbiased.unbiased)).abs();
    assert!(u_delta <= 0.02, "U-WER moved by {u_delta:.3} points");

    let fcfg = FilterConfig {
        psc_threshold: 0.3,
        soc_threshold: 0.3,
        ..FilterConfig::default()
    };
    let mut filtered_pool = CorpusScore::default();
    let mut kept_max = 0usize;
    for utt in &stress.utterances {
        let (report, kept) = filter_list(&utt.posterior, &stress.stress_list, &fcfg).unwrap();
        assert!(report.kept <= fcfg.max_kept);
        kept_max = kept_max.max(report.kept);
        let trie = BoostTrie::from_list(&kept).unwrap();
        let hyps = prefix_beam_decode(&utt.posterior, BEAM, Some((&trie, WEIGHT))).unwrap();
        let text = stress.vocab.detokenize(&hyps[0].tokens).unwrap();
        filtered_pool.absorb(&score_utterance(&utt.reference, &text, tag_list));
    }
    let gain_clean = b_unbiased - b_boosted;
    let gain_filtered = b_unbiased - rate(&filtered_pool.biased);
    assert!(
        gain_filtered >= 0.9 * gain_clean,
        "filtered gain {gain_filtered:.3} < 90% of clean gain {gain_clean:.3}"
    );
    println!(
        "PASS synthetic biasing trend: B-WER {:.3} -> {:.3} with the true list \
         ({:.0}% relative drop), U-WER delta {:.3}; with {} distractors the filtered \
         list restores {:.0}% of the gain, kept at most {} of cap {}",
        b_unbiased,
        b_boosted,
        100.0 * rel_drop,
        u_delta,
        10 * n_true,
        100.0 * gain_filtered / gain_clean,
        kept_max,
        fcfg.max_kept
    );
}

fn run_in(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_ctxbias"))
        .current_dir(dir)
        .env_remove("CTXBIAS_SEED")
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "ctxbias {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut map = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(dir)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                map.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    map
}

fn assert_trees_match(
    left: &BTreeMap<String, Vec<u8>>,
    right: &BTreeMap<String, Vec<u8>>,
    what: &str,
) {
    assert_eq!(
        left.keys().collect::<Vec<_>>(),
        right.keys().collect::<Vec<_>>(),
        "{what}: file sets differ"
    );
    for (name, bytes) in left {
        assert!(right[name] == *bytes, "{what}: {name} differs");
    }
}

#[test]
fn a8_every_command_is_byte_deterministic() {
    // Relative paths keep the trees comparable and the manifests replayable.
    let script: Vec<Vec<&str>> = vec![
        vec![
            "synth",
            "--out-dir",
            "scn",
            "--seed",
            "5",
            "--utterances",
            "3",
        ],
        vec![
            "forward",
            "--weights",
            "fix/tiny.weights",
            "--vocab",
            "fix/tiny.vocab",
            "--features",
            "fix/tiny.feats",
            "--list",
            "fix/tiny.list",
            "--out",
            "out.cpost",
            "--dump-attn",
            "attn.feats",
        ],
        vec![
            "filter",
            "--posterior",
            "out.cpost",
            "--list",
            "fix/tiny.list",
            "--vocab",
            "fix/tiny.vocab",
            "--report",
            "filter.report",
            "--out-list",
            "kept.list",
        ],
        vec![
            "decode",
            "scn/post/utt_0000.cpost",
            "scn/post/utt_0001.cpost",
            "scn/post/utt_0002.cpost",
            "--vocab",
            "scn/vocab.txt",
            "--out",
            "hyp.tsv",
            "--beam",
            "8",
            "--boost-list",
            "scn/list_true.txt",
        ],
        vec![
            "score",
            "--refs",
            "scn/refs.tsv",
            "--hyps",
            "hyp.tsv",
            "--list",
            "scn/list_true.txt",
            "--vocab",
            "scn/vocab.txt",
            "--report",
            "score.report",
        ],
        vec!["selfcheck", "--seed", "1", "--out", "selfcheck.report"],
        vec!["replay", "out.cpost.manifest"],
    ];

    let root = TempDir::new().unwrap();
    let mut snaps = Vec::new();
    for name in ["a", "b"] {
        let dir = root.path().join(name);
        fs::create_dir_all(dir.join("fix")).unwrap();
        for f in ["tiny.weights", "tiny.vocab", "tiny.feats", "tiny.list"] {
            fs::copy(fixture_path(f), dir.join("fix").join(f)).unwrap();
        }
        for args in &script {
            run_in(&dir, args);
        }
        snaps.push(snapshot(&dir));
    }
    assert_trees_match(&snaps[0], &snaps[1], "fresh tree vs fresh tree");

    let dir = root.path().join("a");
    for args in &script {
        run_in(&dir, args);
    }
    assert_trees_match(&snaps[0], &snapshot(&dir), "first run vs rerun in place");
    println!(
        "PASS determinism: {} commands, three full runs, {} files byte-identical",
        script.len(),
        snaps[0].len()
    );
}
