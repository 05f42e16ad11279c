//! Character-level vocabulary, phrase tokenization and biasing lists.
//!
//! Token 0 is always the CTC blank. Text is lowercased before lookup and
//! whitespace maps to the dedicated `<space>` token, so tokenization is
//! injective over the covered alphabet.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Name of the mandatory blank token (index 0 of every vocabulary).
pub const BLANK_TOKEN: &str = "<blank>";
/// Name of the token that text-level whitespace maps to.
pub const SPACE_TOKEN: &str = "<space>";

/// Index of the CTC blank.
pub const BLANK_ID: usize = 0;

#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl Vocab {
    /// Build a vocabulary from an ordered token list. The first token must be
    /// [`BLANK_TOKEN`] and tokens must be unique.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::domain(
                "vocabulary needs the blank plus at least one token",
            ));
        }
        if tokens[0] != BLANK_TOKEN {
            return Err(Error::domain(format!(
                "vocabulary token 0 must be {BLANK_TOKEN}, got {:?}",
                tokens[0]
            )));
        }
        let mut lookup = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(Error::domain(format!("vocabulary token {i} is empty")));
            }
            if lookup.insert(tok.clone(), i).is_some() {
                return Err(Error::domain(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Vocab { tokens, lookup })
    }

    /// Blank, `<space>` and lowercase a..z — the vocabulary used by the
    /// synthetic generator and most tests.
    pub fn ascii_lowercase() -> Self {
        let mut tokens = vec![BLANK_TOKEN.to_string(), SPACE_TOKEN.to_string()];
        tokens.extend(('a'..='z').map(|c| c.to_string()));
        Vocab::new(tokens).expect("static vocab is valid")
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.lookup.get(token).copied()
    }

    /// Render a token id sequence back to text (`<space>` becomes ' ').
    pub fn detokenize(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            match self.token(id) {
                Some(SPACE_TOKEN) => out.push(' '),
                Some(BLANK_TOKEN) => return Err(Error::domain("blank token in a label sequence")),
                Some(tok) => out.push_str(tok),
                None => {
                    return Err(Error::domain(format!(
                        "token id {id} out of range for vocabulary of size {}",
                        self.size()
                    )))
                }
            }
        }
        Ok(out)
    }
}

/// What to do with characters outside the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnknownPolicy {
    /// Fail with a tokenization error naming the character.
    #[default]
    Strict,
    /// Silently drop unmappable characters.
    Drop,
}

/// Character-level tokenization: lowercase, whitespace to `<space>`, every
/// other character looked up verbatim.
pub fn tokenize(text: &str, vocab: &Vocab, policy: UnknownPolicy) -> Result<Vec<usize>> {
    let mut ids = Vec::with_capacity(text.len());
    for ch in text.chars().flat_map(|c| c.to_lowercase()) {
        let id = if ch.is_whitespace() {
            vocab.id(SPACE_TOKEN)
        } else {
            vocab.id(&ch.to_string())
        };
        match id {
            Some(id) => ids.push(id),
            None => match policy {
                UnknownPolicy::Strict => return Err(Error::Tokenize { ch }),
                UnknownPolicy::Drop => {}
            },
        }
    }
    Ok(ids)
}

/// A phrase on the biasing list, tokenized and ready for the context encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextPhrase {
    text: String,
    token_ids: Vec<usize>,
    is_no_bias: bool,
}

impl ContextPhrase {
    pub fn new(text: &str, vocab: &Vocab) -> Result<Self> {
        let token_ids = tokenize(text, vocab, UnknownPolicy::Strict)?;
        if token_ids.is_empty() {
            return Err(Error::domain("context phrase tokenizes to nothing"));
        }
        Ok(ContextPhrase {
            text: text.to_string(),
            token_ids,
            is_no_bias: false,
        })
    }

    /// The sentinel entry holding only the blank token. Attention settles on
    /// it when no phrase in the list matches the audio.
    pub fn no_bias() -> Self {
        ContextPhrase {
            text: String::new(),
            token_ids: vec![BLANK_ID],
            is_no_bias: true,
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn token_ids(&self) -> &[usize] {
        &self.token_ids
    }

    pub fn is_no_bias(&self) -> bool {
        self.is_no_bias
    }

    /// Lowercased words of the phrase text.
    pub fn words(&self) -> Vec<String> {
        self.text
            .split_whitespace()
            .map(|w| w.to_lowercase())
            .collect()
    }
}

/// Where a list entry came from, for scoring purposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    TrueBias,
    Distractor,
}

/// An ordered biasing list. Index 0 is always the no-bias sentinel; real
/// phrases follow with their provenance.
#[derive(Debug, Clone)]
pub struct BiasingList {
    phrases: Vec<ContextPhrase>,
    provenance: Vec<Option<Provenance>>,
}

impl BiasingList {
    /// A list holding only the no-bias sentinel.
    pub fn no_bias_only() -> Self {
        BiasingList {
            phrases: vec![ContextPhrase::no_bias()],
            provenance: vec![None],
        }
    }

    pub fn new(entries: Vec<(ContextPhrase, Provenance)>) -> Result<Self> {
        let mut list = BiasingList::no_bias_only();
        for (phrase, prov) in entries {
            list.push(phrase, prov)?;
        }
        Ok(list)
    }

    pub fn push(&mut self, phrase: ContextPhrase, prov: Provenance) -> Result<()> {
        if phrase.is_no_bias() {
            return Err(Error::domain("the no-bias entry is added automatically"));
        }
        self.phrases.push(phrase);
        self.provenance.push(Some(prov));
        Ok(())
    }

    /// Total number of entries including the no-bias sentinel (K + 1).
    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the no-bias sentinel is always present
    }

    /// Number of real phrases (K).
    pub fn num_phrases(&self) -> usize {
        self.phrases.len() - 1
    }

    pub fn get(&self, i: usize) -> &ContextPhrase {
        &self.phrases[i]
    }

    pub fn provenance(&self, i: usize) -> Option<Provenance> {
        self.provenance[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ContextPhrase> {
        self.phrases.iter()
    }

    /// Real phrases with their list index (no-bias excluded).
    pub fn real_phrases(&self) -> impl Iterator<Item = (usize, &ContextPhrase)> {
        self.phrases
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.is_no_bias())
    }

    /// All distinct lowercased words across real phrases. This is the word
    /// set used for biased/unbiased attribution in scoring.
    pub fn word_set(&self) -> std::collections::HashSet<String> {
        let mut set = std::collections::HashSet::new();
        for (_, phrase) in self.real_phrases() {
            for w in phrase.words() {
                set.insert(w);
            }
        }
        set
    }
}
