//! Deterministic synthetic decoding scenarios.
//!
//! Each utterance mixes everyday words with planted rare words. Frames for
//! ordinary characters put most of their mass on the true token; frames
//! inside rare words are attenuated, moving enough mass onto a confusion
//! token that plain decoding misreads them. Phrase boosting (and, under
//! list stress, filtering) can then be measured against known ground truth.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::files;
use crate::nn::log_softmax;
use crate::posterior::PosteriorMatrix;
use crate::vocab::{
    tokenize, BiasingList, ContextPhrase, Provenance, UnknownPolicy, Vocab, BLANK_ID,
};

/// Scenario shape and acoustic knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_utterances: usize,
    /// Inclusive bounds on words per utterance.
    pub words_per_utt: (usize, usize),
    /// Rare words planted per utterance.
    pub rare_per_utt: usize,
    /// Multiplier on the true-token mass inside rare words; below roughly
    /// 0.55 the confusion token overtakes the true one.
    pub attenuation: f64,
    /// True-token mass on ordinary frames.
    pub peak: f64,
    /// Uniform log-domain noise bound applied to every frame.
    pub jitter: f64,
    /// Frames emitted per token.
    pub frames_per_token: usize,
    /// Distractor phrases added to the stressed list.
    pub n_distractors: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            n_utterances: 30,
            words_per_utt: (6, 10),
            rare_per_utt: 2,
            attenuation: 0.4,
            peak: 0.85,
            jitter: 0.02,
            frames_per_token: 1,
            n_distractors: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_utterances == 0 {
            return Err(Error::Config("need at least one utterance".into()));
        }
        let (lo, hi) = self.words_per_utt;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!(
                "bad words_per_utt bounds ({lo}, {hi})"
            )));
        }
        if self.rare_per_utt > lo {
            return Err(Error::Config(
                "rare_per_utt cannot exceed the minimum words per utterance".into(),
            ));
        }
        if !(self.peak > 0.0 && self.peak < 1.0) {
            return Err(Error::Config("peak must lie in (0, 1)".into()));
        }
        if !(self.attenuation > 0.0 && self.attenuation <= 1.0) {
            return Err(Error::Config("attenuation must lie in (0, 1]".into()));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::Config("jitter must be non-negative".into()));
        }
        if self.frames_per_token == 0 {
            return Err(Error::Config("frames_per_token must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everyday filler vocabulary.
pub fn common_lexicon() -> Vec<String> {
    [
        "the", "play", "music", "stop", "next", "song", "call", "home", "light", "turn", "open",
        "close", "read", "news", "tell", "time", "set", "timer", "alarm", "what", "is", "on",
        "off", "my", "now",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Rare-word inventory: onset-coda products, disjoint from the common
/// lexicon and from each other.
pub fn rare_lexicon() -> Vec<String> {
    let onsets = [
        "bra", "kle", "tri", "vlo", "zu", "gri", "sha", "plo", "dre", "kwi",
    ];
    let codas = [
        "nix", "mar", "vek", "dul", "rop", "zan", "fet", "gos", "lim", "bur",
    ];
    let mut out = Vec::with_capacity(onsets.len() * codas.len());
    for o in &onsets {
        for c in &codas {
            out.push(format!("{o}{c}"));
        }
    }
    out
}

/// One generated utterance: its transcript and synthetic frame posteriors.
#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub utt_id: String,
    pub reference: String,
    /// Planted rare words, in reading order.
    pub rare_words: Vec<String>,
    pub posterior: PosteriorMatrix,
}

/// A full scenario: utterances plus the matching biasing lists.
#[derive(Debug, Clone)]
pub struct SynthScenario {
    pub vocab: Vocab,
    pub utterances: Vec<SynthUtterance>,
    /// Exactly the planted rare words, first-encounter order.
    pub true_list: BiasingList,
    /// The true list plus sampled distractor words that appear in no
    /// reference.
    pub stress_list: BiasingList,
}

fn confusion_token(vocab: &Vocab, tok: usize) -> usize {
    // Letters shift cyclically; the space token confuses toward 'a'.
    let a = vocab.id("a").expect("lowercase vocab");
    let z = vocab.id("z").expect("lowercase vocab");
    if (a..=z).contains(&tok) {
        a + (tok - a + 1) % (z - a + 1)
    } else {
        a
    }
}

fn frame_log_probs(
    vocab_size: usize,
    tok: usize,
    conf: usize,
    p_true: f64,
    jitter: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut p = vec![0.0f64; vocab_size];
    if tok == BLANK_ID {
        p[BLANK_ID] = p_true;
        let rest = (1.0 - p_true) / (vocab_size - 1) as f64;
        for (i, slot) in p.iter_mut().enumerate() {
            if i != BLANK_ID {
                *slot = rest;
            }
        }
    } else {
        p[tok] = p_true;
        p[conf] = 0.91 * (1.0 - p_true);
        let rest = (1.0 - p[tok] - p[conf]) / (vocab_size - 2) as f64;
        for (i, slot) in p.iter_mut().enumerate() {
            if i != tok && i != conf {
                *slot = rest;
            }
        }
    }
    let logits: Vec<f64> = p
        .iter()
        .map(|&x| x.ln() + rng.random_range(-jitter..=jitter))
        .collect();
    log_softmax(&logits).expect("finite logits")
}

/// Generate a scenario. The same configuration always produces the same
/// bytes: words, frames and lists are drawn in a fixed order from one
/// seeded stream.
pub fn generate(cfg: &SynthConfig) -> Result<SynthScenario> {
    cfg.validate()?;
    let vocab = Vocab::ascii_lowercase();
    let common = common_lexicon();
    let rare = rare_lexicon();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut utterances = Vec::with_capacity(cfg.n_utterances);
    let mut planted: Vec<String> = Vec::new();
    let mut planted_set: HashSet<String> = HashSet::new();

    for u in 0..cfg.n_utterances {
        let n_words = rng.random_range(cfg.words_per_utt.0..=cfg.words_per_utt.1);
        // Choose distinct rare positions via a partial shuffle.
        let mut positions: Vec<usize> = (0..n_words).collect();
        for i in 0..cfg.rare_per_utt {
            let j = rng.random_range(i..positions.len());
            positions.swap(i, j);
        }
        let rare_positions: HashSet<usize> =
            positions[..cfg.rare_per_utt].iter().copied().collect();

        let mut word_list: Vec<(String, bool)> = Vec::with_capacity(n_words);
        for pos in 0..n_words {
            if rare_positions.contains(&pos) {
                let w = rare[rng.random_range(0..rare.len())].clone();
                word_list.push((w, true));
            } else {
                let w = common[rng.random_range(0..common.len())].clone();
                word_list.push((w, false));
            }
        }
        let reference = word_list
            .iter()
            .map(|(w, _)| w.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        let rare_words: Vec<String> = word_list
            .iter()
            .filter(|(_, r)| *r)
            .map(|(w, _)| w.clone())
            .collect();
        for w in &rare_words {
            if planted_set.insert(w.clone()) {
                planted.push(w.clone());
            }
        }

        // Token stream with per-token attenuation flags, blank separators
        // between equal consecutive tokens so alignments stay feasible.
        let space = vocab.id(crate::vocab::SPACE_TOKEN).unwrap();
        let mut stream: Vec<(usize, bool)> = Vec::new();
        for (wi, (word, is_rare)) in word_list.iter().enumerate() {
            if wi > 0 {
                stream.push((space, false));
            }
            let ids = tokenize(word, &vocab, UnknownPolicy::Strict)?;
            for id in ids {
                stream.push((id, *is_rare));
            }
        }

        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut prev_tok: Option<usize> = None;
        for &(tok, attenuated) in &stream {
            if prev_tok == Some(tok) {
                for _ in 0..cfg.frames_per_token {
                    rows.push(frame_log_probs(
                        vocab.size(),
                        BLANK_ID,
                        BLANK_ID,
                        cfg.peak,
                        cfg.jitter,
                        &mut rng,
                    ));
                }
            }
            let p_true = if attenuated {
                cfg.peak * cfg.attenuation
            } else {
                cfg.peak
            };
            let conf = confusion_token(&vocab, tok);
            for _ in 0..cfg.frames_per_token {
                rows.push(frame_log_probs(
                    vocab.size(),
                    tok,
                    conf,
                    p_true,
                    cfg.jitter,
                    &mut rng,
                ));
            }
            prev_tok = Some(tok);
        }

        let frames = rows.len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let posterior = PosteriorMatrix::from_log_rows(
            frames,
            vocab.size(),
            flat,
            crate::posterior::F64_ROW_TOL,
        )?;
        utterances.push(SynthUtterance {
            utt_id: format!("utt_{u:04}"),
            reference,
            rare_words,
            posterior,
        });
    }

    let mut true_list = BiasingList::no_bias_only();
    for w in &planted {
        true_list.push(ContextPhrase::new(w, &vocab)?, Provenance::TrueBias)?;
    }

    let mut stress_list = true_list.clone();
    let mut pool: Vec<&String> = rare.iter().filter(|w| !planted_set.contains(*w)).collect();
    if pool.len() < cfg.n_distractors {
        return Err(Error::Config(format!(
            "rare lexicon leaves {} distractor candidates, {} requested",
            pool.len(),
            cfg.n_distractors
        )));
    }
    for i in 0..cfg.n_distractors {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
        stress_list.push(ContextPhrase::new(pool[i], &vocab)?, Provenance::Distractor)?;
    }

    Ok(SynthScenario {
        vocab,
        utterances,
        true_list,
        stress_list,
    })
}

/// Write a scenario under `dir`: `vocab.txt`, `refs.tsv`, `list_true.txt`,
/// `list_stress.txt` and one `post/<utt_id>.cpost` per utterance. Returns
/// the created paths in a fixed order.
pub fn write_scenario(dir: &Path, scenario: &SynthScenario) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir.join("post"))?;
    let mut written = Vec::new();

    let vocab_path = dir.join("vocab.txt");
    files::write_vocab(&vocab_path, &scenario.vocab)?;
    written.push(vocab_path);

    let refs: Vec<(String, String)> = scenario
        .utterances
        .iter()
        .map(|u| (u.utt_id.clone(), u.reference.clone()))
        .collect();
    let refs_path = dir.join("refs.tsv");
    files::write_transcripts(&refs_path, &refs)?;
    written.push(refs_path);

    let true_path = dir.join("list_true.txt");
    files::write_list(&true_path, &scenario.true_list)?;
    written.push(true_path);

    let stress_path = dir.join("list_stress.txt");
    files::write_list(&stress_path, &scenario.stress_list)?;
    written.push(stress_path);

    for u in &scenario.utterances {
        let p = dir.join("post").join(format!("{}.cpost", u.utt_id));
        files::write_posterior(&p, &u.posterior)?;
        written.push(p);
    }
    Ok(written)
}
