//! Transcript evaluation: word alignment, error rates split by biasing-list
//! membership, phrase-level precision/recall, and the construction of
//! per-utterance biasing lists for experiments.

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vocab::{BiasingList, ContextPhrase, Provenance, Vocab};

/// Lowercased whitespace-separated words of a transcript.
pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(|w| w.to_lowercase()).collect()
}

/// One step of a word alignment. Indices refer to the reference and
/// hypothesis word vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignOp {
    Match { r: usize, h: usize },
    Substitute { r: usize, h: usize },
    Delete { r: usize },
    Insert { h: usize },
}

/// Minimum-edit-distance alignment with unit costs. When several
/// alignments tie, the backtrace prefers substitutions over deletions over
/// insertions, so the result is deterministic.
pub fn align(reference: &[String], hypothesis: &[String]) -> Vec<AlignOp> {
    let n = reference.len();
    let m = hypothesis.len();
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub_cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i][j] = (d[i - 1][j - 1] + sub_cost)
                .min(d[i - 1][j] + 1)
                .min(d[i][j - 1] + 1);
        }
    }

    let mut ops = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let sub_cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if d[i][j] == d[i - 1][j - 1] + sub_cost {
                ops.push(if sub_cost == 0 {
                    AlignOp::Match { r: i - 1, h: j - 1 }
                } else {
                    AlignOp::Substitute { r: i - 1, h: j - 1 }
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            ops.push(AlignOp::Delete { r: i - 1 });
            i -= 1;
            continue;
        }
        ops.push(AlignOp::Insert { h: j - 1 });
        j -= 1;
    }
    ops.reverse();
    ops
}

/// Error count over a word population. The rate is undefined (not zero)
/// when the population is empty; errors can still accrue there through
/// insertions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RateStat {
    pub errors: usize,
    pub denominator: usize,
}

impl RateStat {
    pub fn rate(&self) -> Option<f64> {
        (self.denominator > 0).then(|| self.errors as f64 / self.denominator as f64)
    }

    pub fn absorb(&mut self, other: &RateStat) {
        self.errors += other.errors;
        self.denominator += other.denominator;
    }
}

/// Per-utterance scoring result. The overall numbers always equal the sum
/// of the biased and unbiased splits, by construction.
#[derive(Debug, Clone)]
pub struct UtteranceScore {
    pub ops: Vec<AlignOp>,
    pub overall: RateStat,
    pub unbiased: RateStat,
    pub biased: RateStat,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

/// Align and score one utterance. A word counts as biased when it appears
/// in any list phrase (every word of a multi-word phrase counts).
/// Substitutions and deletions follow the reference word's tag; insertions
/// follow the inserted hypothesis word's tag.
pub fn score_utterance(reference: &str, hypothesis: &str, list: &BiasingList) -> UtteranceScore {
    let ref_words = words(reference);
    let hyp_words = words(hypothesis);
    let bias_words = list.word_set();
    let is_biased = |w: &String| bias_words.contains(w);

    let ops = align(&ref_words, &hyp_words);
    let mut unbiased = RateStat::default();
    let mut biased = RateStat::default();
    for w in &ref_words {
        if is_biased(w) {
            biased.denominator += 1;
        } else {
            unbiased.denominator += 1;
        }
    }

    let (mut subs, mut dels, mut inss) = (0usize, 0usize, 0usize);
    for op in &ops {
        match *op {
            AlignOp::Match { .. } => {}
            AlignOp::Substitute { r, .. } => {
                subs += 1;
                if is_biased(&ref_words[r]) {
                    biased.errors += 1;
                } else {
                    unbiased.errors += 1;
                }
            }
            AlignOp::Delete { r } => {
                dels += 1;
                if is_biased(&ref_words[r]) {
                    biased.errors += 1;
                } else {
                    unbiased.errors += 1;
                }
            }
            AlignOp::Insert { h } => {
                inss += 1;
                if is_biased(&hyp_words[h]) {
                    biased.errors += 1;
                } else {
                    unbiased.errors += 1;
                }
            }
        }
    }

    let overall = RateStat {
        errors: biased.errors + unbiased.errors,
        denominator: biased.denominator + unbiased.denominator,
    };
    UtteranceScore {
        ops,
        overall,
        unbiased,
        biased,
        substitutions: subs,
        deletions: dels,
        insertions: inss,
    }
}

/// Error counts pooled over utterances (micro average: sum errors and
/// denominators, then divide).
#[derive(Debug, Clone, Copy, Default)]
pub struct CorpusScore {
    pub overall: RateStat,
    pub unbiased: RateStat,
    pub biased: RateStat,
    pub utterances: usize,
}

impl CorpusScore {
    pub fn absorb(&mut self, utt: &UtteranceScore) {
        self.overall.absorb(&utt.overall);
        self.unbiased.absorb(&utt.unbiased);
        self.biased.absorb(&utt.biased);
        self.utterances += 1;
    }
}

/// Occurrence counts of whole phrases, pooled over utterances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PhraseMatchStat {
    /// Sum over utterances and phrases of min(ref count, hyp count).
    pub matched: usize,
    pub in_reference: usize,
    pub in_hypothesis: usize,
}

impl PhraseMatchStat {
    pub fn precision(&self) -> Option<f64> {
        (self.in_hypothesis > 0).then(|| self.matched as f64 / self.in_hypothesis as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        (self.in_reference > 0).then(|| self.matched as f64 / self.in_reference as f64)
    }

    pub fn f1(&self) -> Option<f64> {
        let denom = self.in_reference + self.in_hypothesis;
        (denom > 0).then(|| 2.0 * self.matched as f64 / denom as f64)
    }

    pub fn absorb(&mut self, other: &PhraseMatchStat) {
        self.matched += other.matched;
        self.in_reference += other.in_reference;
        self.in_hypothesis += other.in_hypothesis;
    }
}

/// Count word-level occurrences of `needle` in `haystack`; overlapping
/// occurrences count once per start position.
fn count_occurrences(haystack: &[String], needle: &[String]) -> usize {
    if needle.is_empty() || haystack.len() < needle.len() {
        return 0;
    }
    (0..=haystack.len() - needle.len())
        .filter(|&i| haystack[i..i + needle.len()] == needle[..])
        .count()
}

/// Phrase-level hit statistics for one utterance: how often each real list
/// phrase occurs in the reference and the hypothesis, and how many
/// occurrences line up.
pub fn phrase_hits(reference: &str, hypothesis: &str, list: &BiasingList) -> PhraseMatchStat {
    let ref_words = words(reference);
    let hyp_words = words(hypothesis);
    let mut stat = PhraseMatchStat::default();
    for (_, phrase) in list.real_phrases() {
        let pw = phrase.words();
        let r = count_occurrences(&ref_words, &pw);
        let h = count_occurrences(&hyp_words, &pw);
        stat.matched += r.min(h);
        stat.in_reference += r;
        stat.in_hypothesis += h;
    }
    stat
}

/// Settings for sampling training-style biasing phrases out of a reference.
#[derive(Debug, Clone, Copy)]
pub struct TrainListConfig {
    pub phrases_per_utterance: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Real-phrase count the list is padded to with distractors (the no-bias
    /// entry does not count toward it).
    pub target_size: usize,
}

impl Default for TrainListConfig {
    fn default() -> Self {
        TrainListConfig {
            phrases_per_utterance: 3,
            min_words: 1,
            max_words: 3,
            target_size: 60,
        }
    }
}

/// Build one biasing list for a training batch: sample short word spans of
/// every reference (length drawn uniformly first, then start; clamped for
/// short utterances), pool them, then pad with distractor words until the
/// list holds `cfg.target_size` real phrases. Duplicate texts collapse to
/// one entry, and empty references contribute nothing.
pub fn build_train_list(
    references: &[String],
    vocab: &Vocab,
    cfg: &TrainListConfig,
    distractor_pool: &[String],
    rng: &mut ChaCha8Rng,
) -> Result<BiasingList> {
    if cfg.min_words == 0 || cfg.min_words > cfg.max_words {
        return Err(Error::Config(format!(
            "bad span bounds [{}, {}]",
            cfg.min_words, cfg.max_words
        )));
    }
    let mut list = BiasingList::no_bias_only();
    let mut seen = HashSet::new();
    for reference in references {
        let ref_words = words(reference);
        if ref_words.is_empty() {
            continue;
        }
        for _ in 0..cfg.phrases_per_utterance {
            let max_len = cfg.max_words.min(ref_words.len());
            let min_len = cfg.min_words.min(max_len);
            let len = rng.random_range(min_len..=max_len);
            let start = rng.random_range(0..=ref_words.len() - len);
            let text = ref_words[start..start + len].join(" ");
            if seen.insert(text.clone()) {
                list.push(ContextPhrase::new(&text, vocab)?, Provenance::TrueBias)?;
            }
        }
    }

    if list.num_phrases() < cfg.target_size {
        let mut candidates: Vec<&String> = distractor_pool
            .iter()
            .filter(|w| !w.is_empty() && seen.insert((*w).clone()))
            .collect();
        let missing = cfg.target_size - list.num_phrases();
        if candidates.len() < missing {
            return Err(Error::Config(format!(
                "pool has {} usable distractors, {missing} needed to reach {}",
                candidates.len(),
                cfg.target_size
            )));
        }
        // Partial shuffle: draw each pick uniformly from the remaining tail.
        for i in 0..missing {
            let j = rng.random_range(i..candidates.len());
            candidates.swap(i, j);
            list.push(
                ContextPhrase::new(candidates[i], vocab)?,
                Provenance::Distractor,
            )?;
        }
    }
    Ok(list)
}

/// Build a test-style biasing list: every reference word found in the rare
/// lexicon becomes a true phrase (first-occurrence order, deduplicated),
/// then `n_distractors` pool words that do not occur in the reference are
/// added, sampled without replacement.
pub fn build_test_list(
    reference: &str,
    rare_lexicon: &HashSet<String>,
    distractor_pool: &[String],
    n_distractors: usize,
    vocab: &Vocab,
    rng: &mut ChaCha8Rng,
) -> Result<BiasingList> {
    let ref_words = words(reference);
    let ref_set: HashSet<&String> = ref_words.iter().collect();

    let mut list = BiasingList::no_bias_only();
    let mut seen = HashSet::new();
    for w in &ref_words {
        if rare_lexicon.contains(w) && seen.insert(w.clone()) {
            list.push(ContextPhrase::new(w, vocab)?, Provenance::TrueBias)?;
        }
    }

    let mut pool_seen = HashSet::new();
    let mut candidates: Vec<&String> = distractor_pool
        .iter()
        .filter(|w| !ref_set.contains(*w) && !w.is_empty() && pool_seen.insert(w.as_str()))
        .collect();
    if candidates.len() < n_distractors {
        return Err(Error::Config(format!(
            "pool has {} usable distractors, {n_distractors} requested",
            candidates.len()
        )));
    }
    // Partial shuffle: draw each pick uniformly from the remaining tail.
    for i in 0..n_distractors {
        let j = rng.random_range(i..candidates.len());
        candidates.swap(i, j);
        list.push(
            ContextPhrase::new(candidates[i], vocab)?,
            Provenance::Distractor,
        )?;
    }
    Ok(list)
}
