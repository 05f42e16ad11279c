//! CTC: alignment loss with analytic gradients, a brute-force
//! path-enumeration oracle, greedy and prefix beam-search decoding, and
//! trie-driven shallow-fusion boosting of phrase hypotheses.
//!
//! Everything works in the log domain on [`PosteriorMatrix`] inputs.

use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::posterior::PosteriorMatrix;
use crate::vocab::{BiasingList, BLANK_ID};

/// Label sequence for CTC training: token ids without blanks.
/// May be empty (the target then collapses to silence).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSeq(Vec<usize>);

impl LabelSeq {
    pub fn new(ids: Vec<usize>, vocab_size: usize) -> Result<Self> {
        for &id in &ids {
            if id == BLANK_ID {
                return Err(Error::domain("label sequences must not contain blank"));
            }
            if id >= vocab_size {
                return Err(Error::domain(format!(
                    "label id {id} out of range for vocab size {vocab_size}"
                )));
            }
        }
        Ok(LabelSeq(ids))
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Fewest frames any alignment needs: one per label plus one separating
    /// blank per adjacent repeated label.
    pub fn min_frames(&self) -> usize {
        let repeats = self.0.windows(2).filter(|w| w[0] == w[1]).count();
        self.0.len() + repeats
    }
}

/// Loss value and, when requested, the gradient of the loss with respect to
/// the per-frame logits that produced the posterior.
#[derive(Debug, Clone)]
pub struct CtcLoss {
    /// Negative log probability of the label sequence.
    pub loss: f64,
    /// T x V matrix of d(loss)/d(logit); each row sums to zero.
    pub grad: Option<Matrix>,
}

/// Negative log likelihood of `labels` under the posterior, computed with
/// the blank-interleaved forward-backward recursion. The gradient comes from
/// state-occupancy sums, so no numeric differentiation is involved.
pub fn ctc_loss(post: &PosteriorMatrix, labels: &LabelSeq, want_grad: bool) -> Result<CtcLoss> {
    ctc_loss_impl(post, labels, want_grad, None)
}

/// Implementation with an optional fault injection used by the self-check
/// machinery: `perturb` adds its value to the first forward-variable slot on
/// every frame, which must make verification suites fail.
pub(crate) fn ctc_loss_impl(
    post: &PosteriorMatrix,
    labels: &LabelSeq,
    want_grad: bool,
    perturb: Option<f64>,
) -> Result<CtcLoss> {
    let t_frames = post.frames();
    let v = post.vocab_size();
    if t_frames == 0 {
        return Err(Error::shape("ctc_loss needs at least one frame"));
    }
    for &id in labels.ids() {
        if id >= v {
            return Err(Error::domain(format!(
                "label id {id} out of range for posterior vocab {v}"
            )));
        }
    }
    let min_frames = labels.min_frames();
    if t_frames < min_frames {
        return Err(Error::InfeasibleAlignment {
            label_len: labels.len(),
            min_frames,
            frames: t_frames,
        });
    }

    // Blank-interleaved state sequence: blank, l1, blank, l2, ..., blank.
    let l = labels.len();
    let s_len = 2 * l + 1;
    let state_token = |s: usize| -> usize {
        if s.is_multiple_of(2) {
            BLANK_ID
        } else {
            labels.ids()[s / 2]
        }
    };
    // A state may also be entered from s-2 when it is a label state and not
    // a repeat of the label two states back.
    let allows_skip =
        |s: usize| -> bool { s >= 2 && s % 2 == 1 && state_token(s) != state_token(s - 2) };

    let neg_inf = f64::NEG_INFINITY;
    let mut alpha = vec![vec![neg_inf; s_len]; t_frames];
    alpha[0][0] = post.get(0, BLANK_ID);
    if s_len > 1 {
        alpha[0][1] = post.get(0, state_token(1));
    }
    if let Some(eps) = perturb {
        alpha[0][0] += eps;
    }
    for t in 1..t_frames {
        for s in 0..s_len {
            let mut acc = alpha[t - 1][s];
            if s >= 1 {
                acc = log_add(acc, alpha[t - 1][s - 1]);
            }
            if allows_skip(s) {
                acc = log_add(acc, alpha[t - 1][s - 2]);
            }
            if acc > neg_inf {
                alpha[t][s] = acc + post.get(t, state_token(s));
            }
        }
        if let Some(eps) = perturb {
            alpha[t][0] += eps;
        }
    }

    let mut log_p = alpha[t_frames - 1][s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[t_frames - 1][s_len - 2]);
    }
    if log_p == neg_inf {
        return Err(Error::InfeasibleAlignment {
            label_len: labels.len(),
            min_frames,
            frames: t_frames,
        });
    }
    let loss = (-log_p).max(0.0);
    if !want_grad {
        return Ok(CtcLoss { loss, grad: None });
    }

    let mut beta = vec![vec![neg_inf; s_len]; t_frames];
    beta[t_frames - 1][s_len - 1] = post.get(t_frames - 1, BLANK_ID);
    if s_len > 1 {
        beta[t_frames - 1][s_len - 2] = post.get(t_frames - 1, state_token(s_len - 2));
    }
    for t in (0..t_frames - 1).rev() {
        for s in 0..s_len {
            let mut acc = beta[t + 1][s];
            if s + 1 < s_len {
                acc = log_add(acc, beta[t + 1][s + 1]);
            }
            if s + 2 < s_len && allows_skip(s + 2) {
                acc = log_add(acc, beta[t + 1][s + 2]);
            }
            if acc > neg_inf {
                beta[t][s] = acc + post.get(t, state_token(s));
            }
        }
    }

    // Occupancy of token k at frame t, relative to the sequence probability:
    // both alpha and beta include the frame's own emission, so divide it out
    // once. The logit gradient is then posterior minus occupancy.
    let mut grad = Matrix::zeros(t_frames, v);
    for t in 0..t_frames {
        let mut occ = vec![neg_inf; v];
        for s in 0..s_len {
            let joint = alpha[t][s] + beta[t][s];
            if joint == neg_inf {
                continue;
            }
            let k = state_token(s);
            occ[k] = log_add(occ[k], joint - post.get(t, k));
        }
        for (k, &occ_k) in occ.iter().enumerate() {
            let gamma = if occ_k == neg_inf {
                0.0
            } else {
                (occ_k - log_p).exp()
            };
            grad.set(t, k, post.get(t, k).exp() - gamma);
        }
    }
    Ok(CtcLoss {
        loss,
        grad: Some(grad),
    })
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Collapse a frame-level path: merge consecutive repeats, then drop blanks.
pub fn collapse_path(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &tok in path {
        if Some(tok) != prev {
            if tok != BLANK_ID {
                out.push(tok);
            }
            prev = Some(tok);
        }
    }
    out
}

/// Budget guard for [`ctc_loss_oracle`]: at most this many paths.
pub const ORACLE_PATH_BUDGET: f64 = 1e7;

/// Independent reference for [`ctc_loss`]: enumerate every frame-level path,
/// collapse each one, and sum the probability of those matching the labels.
/// Returns positive infinity when no path matches. Refuses inputs whose
/// V^T path count exceeds [`ORACLE_PATH_BUDGET`].
pub fn ctc_loss_oracle(post: &PosteriorMatrix, labels: &LabelSeq) -> Result<f64> {
    let t_frames = post.frames();
    let v = post.vocab_size();
    if t_frames == 0 {
        return Err(Error::shape("oracle needs at least one frame"));
    }
    let n_paths = (v as f64).powi(t_frames as i32);
    if n_paths > ORACLE_PATH_BUDGET {
        return Err(Error::OracleRefused(format!(
            "{v}^{t_frames} paths exceed the {ORACLE_PATH_BUDGET:.0} budget"
        )));
    }

    let mut path = vec![0usize; t_frames];
    // Streaming log-sum-exp over matching paths.
    let mut run_max = f64::NEG_INFINITY;
    let mut run_sum = 0.0f64;
    loop {
        if collapse_path(&path) == labels.ids() {
            let lp: f64 = path.iter().enumerate().map(|(t, &k)| post.get(t, k)).sum();
            if lp > run_max {
                run_sum = run_sum * (run_max - lp).exp() + 1.0;
                run_max = lp;
            } else {
                run_sum += (lp - run_max).exp();
            }
        }
        // Next path in base-V counting order.
        let mut pos = t_frames;
        while pos > 0 {
            pos -= 1;
            path[pos] += 1;
            if path[pos] < v {
                break;
            }
            path[pos] = 0;
            if pos == 0 {
                let log_p = if run_max == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    run_max + run_sum.ln()
                };
                return Ok(-log_p);
            }
        }
    }
}

/// Frame-wise argmax decode with collapse. Ties go to the lowest token id.
pub fn greedy_decode(post: &PosteriorMatrix) -> Vec<usize> {
    let mut path = Vec::with_capacity(post.frames());
    for t in 0..post.frames() {
        let row = post.row(t);
        let mut best = 0usize;
        for (k, &lp) in row.iter().enumerate().skip(1) {
            if lp > row[best] {
                best = k;
            }
        }
        path.push(best);
    }
    collapse_path(&path)
}

/// One ranked decoding hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    /// Log probability mass the posterior assigns to this label sequence
    /// (summed over its alignments that survived the beam).
    pub log_prob: f64,
    /// `log_prob` plus the boost contribution; equals `log_prob` when
    /// decoding without a trie.
    pub score: f64,
}

#[derive(Clone)]
struct BeamEntry {
    p_blank: f64,
    p_token: f64,
    node: usize,
    boost: f64,
}

impl BeamEntry {
    fn total(&self) -> f64 {
        log_add(self.p_blank, self.p_token)
    }
}

/// Prefix beam search over label sequences. Each kept prefix tracks separate
/// blank-final and token-final path masses so alignments merge exactly.
///
/// With `boost = Some((trie, weight))` every prefix additionally walks the
/// phrase trie and pruning uses the boosted score, so partially matched
/// phrases survive pruning they would otherwise lose. A `weight` of zero
/// reproduces the unboosted result bit for bit.
///
/// Ties are broken toward the lexicographically smaller token sequence, so
/// results are deterministic. Only prefixes holding nonzero mass occupy beam
/// slots or appear in the result.
pub fn prefix_beam_decode(
    post: &PosteriorMatrix,
    beam_width: usize,
    boost: Option<(&BoostTrie, f64)>,
) -> Result<Vec<Hypothesis>> {
    if beam_width == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }

    let mut beams: BTreeMap<Vec<usize>, BeamEntry> = BTreeMap::new();
    beams.insert(
        Vec::new(),
        BeamEntry {
            p_blank: 0.0,
            p_token: f64::NEG_INFINITY,
            node: BoostTrie::ROOT,
            boost: 0.0,
        },
    );

    for t in 0..post.frames() {
        let row = post.row(t);
        let mut next: BTreeMap<Vec<usize>, BeamEntry> = BTreeMap::new();

        for (prefix, entry) in &beams {
            let total = entry.total();

            // Blank keeps the prefix and moves all mass to blank-final.
            let slot = next.entry(prefix.clone()).or_insert_with(|| BeamEntry {
                p_blank: f64::NEG_INFINITY,
                p_token: f64::NEG_INFINITY,
                node: entry.node,
                boost: entry.boost,
            });
            slot.p_blank = log_add(slot.p_blank, total + row[BLANK_ID]);

            for (k, &lp) in row.iter().enumerate().skip(1) {
                if prefix.last() == Some(&k) {
                    // Repeating the final token without a blank stays the
                    // same prefix; only token-final mass can do it.
                    let slot = next.entry(prefix.clone()).or_insert_with(|| BeamEntry {
                        p_blank: f64::NEG_INFINITY,
                        p_token: f64::NEG_INFINITY,
                        node: entry.node,
                        boost: entry.boost,
                    });
                    slot.p_token = log_add(slot.p_token, entry.p_token + lp);

                    // Emitting the same token again needs a blank in between,
                    // so only blank-final mass extends the prefix.
                    let mut extended = prefix.clone();
                    extended.push(k);
                    let (node, boost) = advance_boost(entry, k, boost);
                    let slot = next.entry(extended).or_insert_with(|| BeamEntry {
                        p_blank: f64::NEG_INFINITY,
                        p_token: f64::NEG_INFINITY,
                        node,
                        boost,
                    });
                    slot.p_token = log_add(slot.p_token, entry.p_blank + lp);
                } else {
                    let mut extended = prefix.clone();
                    extended.push(k);
                    let (node, boost) = advance_boost(entry, k, boost);
                    let slot = next.entry(extended).or_insert_with(|| BeamEntry {
                        p_blank: f64::NEG_INFINITY,
                        p_token: f64::NEG_INFINITY,
                        node,
                        boost,
                    });
                    slot.p_token = log_add(slot.p_token, total + lp);
                }
            }
        }

        let mut ranked: Vec<(Vec<usize>, BeamEntry)> = next.into_iter().collect();
        // Prefixes left with zero mass are dropped; a live parent recreates
        // the entry if a later extension reaches the prefix again.
        ranked.retain(|(_, e)| e.total() > f64::NEG_INFINITY);
        ranked.sort_by(|a, b| {
            let sa = a.1.total() + a.1.boost;
            let sb = b.1.total() + b.1.boost;
            sb.total_cmp(&sa).then_with(|| a.0.cmp(&b.0))
        });
        ranked.truncate(beam_width);
        beams = ranked.into_iter().collect();
    }

    let mut out: Vec<Hypothesis> = beams
        .into_iter()
        .map(|(tokens, entry)| {
            let log_prob = entry.total();
            // A partial phrase match earns nothing once decoding ends.
            let dangling = match boost {
                Some((trie, weight)) => weight * trie.depth(entry.node) as f64,
                None => 0.0,
            };
            Hypothesis {
                tokens,
                log_prob,
                score: log_prob + entry.boost - dangling,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    Ok(out)
}

fn advance_boost(
    entry: &BeamEntry,
    token: usize,
    boost: Option<(&BoostTrie, f64)>,
) -> (usize, f64) {
    match boost {
        Some((trie, weight)) => {
            let step = trie.advance(entry.node, token);
            (step.node, entry.boost + weight * step.delta as f64)
        }
        None => (entry.node, entry.boost),
    }
}

/// Result of one trie transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrieStep {
    /// State after consuming the token (root again after a completion).
    pub node: usize,
    /// Change in matched depth, in tokens. Negative when a mismatch falls
    /// back along failure links, which takes back credit the partial match
    /// had earned.
    pub delta: i64,
    /// True when the token completed a phrase. The credit earned so far is
    /// kept and the state resets to root.
    pub completed: bool,
}

#[derive(Debug, Clone)]
struct TrieNode {
    children: BTreeMap<usize, usize>,
    fail: usize,
    depth: usize,
    is_end: bool,
}

/// Token trie over biasing phrases with failure links, used to score
/// partially matched phrases during decoding.
///
/// Walking the trie accrues one unit of credit per matched token. A
/// mismatch follows failure links (longest proper suffix that is still a
/// trie prefix) and returns the credit difference, so abandoned partial
/// matches are paid back. Completing a phrase keeps its full credit and
/// resets to the root: the shortest phrase ending at a token wins, and
/// longer phrases sharing that prefix are not pursued past the reset.
#[derive(Debug, Clone)]
pub struct BoostTrie {
    nodes: Vec<TrieNode>,
}

impl BoostTrie {
    pub const ROOT: usize = 0;

    /// Build from token sequences. Phrases must be non-empty and blank-free.
    pub fn from_phrases<'a, I>(phrases: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [usize]>,
    {
        let mut nodes = vec![TrieNode {
            children: BTreeMap::new(),
            fail: 0,
            depth: 0,
            is_end: false,
        }];
        for phrase in phrases {
            if phrase.is_empty() {
                return Err(Error::domain("boost phrases must be non-empty"));
            }
            let mut node = 0usize;
            for &tok in phrase {
                if tok == BLANK_ID {
                    return Err(Error::domain("boost phrases must not contain blank"));
                }
                let next_id = nodes.len();
                let depth = nodes[node].depth + 1;
                node = *nodes[node].children.entry(tok).or_insert_with(|| next_id);
                if node == next_id {
                    nodes.push(TrieNode {
                        children: BTreeMap::new(),
                        fail: 0,
                        depth,
                        is_end: false,
                    });
                }
            }
            nodes[node].is_end = true;
        }

        let mut trie = BoostTrie { nodes };
        trie.link_failures();
        Ok(trie)
    }

    /// Build from the real phrases of a biasing list (the no-bias entry
    /// carries no tokens to match).
    pub fn from_list(list: &BiasingList) -> Result<Self> {
        Self::from_phrases(list.real_phrases().map(|(_, p)| p.token_ids()))
    }

    fn link_failures(&mut self) {
        let mut queue = VecDeque::new();
        let root_children: Vec<usize> = self.nodes[0].children.values().copied().collect();
        for c in root_children {
            self.nodes[c].fail = 0;
            queue.push_back(c);
        }
        while let Some(u) = queue.pop_front() {
            let children: Vec<(usize, usize)> = self.nodes[u]
                .children
                .iter()
                .map(|(&tok, &v)| (tok, v))
                .collect();
            for (tok, child) in children {
                let mut f = self.nodes[u].fail;
                let fail = loop {
                    if let Some(&w) = self.nodes[f].children.get(&tok) {
                        break w;
                    }
                    if f == 0 {
                        break 0;
                    }
                    f = self.nodes[f].fail;
                };
                self.nodes[child].fail = fail;
                queue.push_back(child);
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth(&self, node: usize) -> usize {
        self.nodes[node].depth
    }

    /// Consume one token from `node`.
    pub fn advance(&self, node: usize, token: usize) -> TrieStep {
        let old_depth = self.nodes[node].depth as i64;
        let mut cur = node;
        loop {
            if let Some(&child) = self.nodes[cur].children.get(&token) {
                let delta = self.nodes[child].depth as i64 - old_depth;
                if self.nodes[child].is_end {
                    return TrieStep {
                        node: Self::ROOT,
                        delta,
                        completed: true,
                    };
                }
                return TrieStep {
                    node: child,
                    delta,
                    completed: false,
                };
            }
            if cur == Self::ROOT {
                return TrieStep {
                    node: Self::ROOT,
                    delta: -old_depth,
                    completed: false,
                };
            }
            cur = self.nodes[cur].fail;
        }
    }

    /// Total boost a whole token sequence earns at unit weight: locked
    /// phrase credit, with any dangling partial match paid back.
    pub fn score_sequence(&self, tokens: &[usize]) -> i64 {
        let mut node = Self::ROOT;
        let mut credit = 0i64;
        for &tok in tokens {
            let step = self.advance(node, tok);
            node = step.node;
            credit += step.delta;
        }
        credit - self.nodes[node].depth as i64
    }
}

/// Walk reference words and collect the token ids of list phrases found in
/// them, longest match first (ties to the earlier list entry), in reading
/// order. The result is the label sequence for the bias-prediction loss; it
/// is empty when no phrase occurs.
pub fn extract_bias_targets(reference: &str, list: &BiasingList) -> Vec<usize> {
    let words: Vec<String> = reference
        .split_whitespace()
        .map(|w| w.to_lowercase())
        .collect();
    let phrase_words: Vec<(usize, Vec<String>)> =
        list.real_phrases().map(|(i, p)| (i, p.words())).collect();

    let mut out = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let mut best: Option<(usize, usize)> = None; // (len, list index)
        for &(idx, ref pw) in &phrase_words {
            if pw.is_empty() || i + pw.len() > words.len() {
                continue;
            }
            if words[i..i + pw.len()] == pw[..] {
                let better = match best {
                    None => true,
                    Some((blen, bidx)) => pw.len() > blen || (pw.len() == blen && idx < bidx),
                };
                if better {
                    best = Some((pw.len(), idx));
                }
            }
        }
        match best {
            Some((len, idx)) => {
                out.extend_from_slice(list.get(idx).token_ids());
                i += len;
            }
            None => i += 1,
        }
    }
    out
}

/// Which end-to-end objective the CTC and bias losses feed into.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossMode {
    /// Pure CTC model: `ctc + lambda_cpp * cpp`.
    Ctc,
    /// Joint CTC/attention model with the given attention loss:
    /// `lambda_ctc * ctc + (1 - lambda_ctc) * attention + lambda_ctc * lambda_cpp * cpp`.
    AttentionEncoderDecoder { attention_loss: f64 },
    /// CTC-assisted transducer, weighted the same way as the attention case.
    Transducer { transducer_loss: f64 },
}

/// Interpolation weights for [`compose_loss`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Weight on the CTC branch in joint models (lambda_1).
    pub lambda_ctc: f64,
    /// Weight on the bias-prediction loss (lambda_2).
    pub lambda_cpp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_ctc: 0.3,
            lambda_cpp: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("lambda_ctc", self.lambda_ctc),
            ("lambda_cpp", self.lambda_cpp),
        ] {
            if !(w.is_finite() && (0.0..=1.0).contains(&w)) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Combine the CTC loss, the bias-prediction loss and any second-branch
/// loss into the training objective for the chosen architecture.
pub fn compose_loss(mode: LossMode, ctc: f64, cpp: f64, w: LossWeights) -> Result<f64> {
    w.validate()?;
    Ok(match mode {
        LossMode::Ctc => ctc + w.lambda_cpp * cpp,
        LossMode::AttentionEncoderDecoder { attention_loss } => {
            w.lambda_ctc * ctc
                + (1.0 - w.lambda_ctc) * attention_loss
                + w.lambda_ctc * w.lambda_cpp * cpp
        }
        LossMode::Transducer { transducer_loss } => {
            w.lambda_ctc * ctc
                + (1.0 - w.lambda_ctc) * transducer_loss
                + w.lambda_ctc * w.lambda_cpp * cpp
        }
    })
}
