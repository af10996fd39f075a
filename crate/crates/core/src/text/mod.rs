//! Tweet-aware preprocessing: tokenization, stopword filtering, stemming and
//! sentence splitting.

mod porter;

use std::collections::HashSet;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use crate::error::{Error, Result};

pub use porter::{porter_stem, porter_step2};

const BUILTIN_STOPWORDS: &str = include_str!("../../data/stopwords.txt");
const BUILTIN_EMOTICONS: &str = include_str!("../../data/emoticons.txt");

/// First-person pronouns kept by the default stopword policy.
pub const RETAINED_PRONOUNS: [&str; 5] = ["i", "me", "my", "mine", "myself"];

/// Parse a one-entry-per-line inventory. Blank lines are skipped.
pub fn parse_word_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn load_word_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    Ok(parse_word_list(&text))
}

/// A post together with its normalized tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessedText {
    pub raw: String,
    pub tokens: Vec<String>,
}

impl ProcessedText {
    pub fn new(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let tokens = tokenize_tweet(&raw);
        ProcessedText { raw, tokens }
    }
}

/// Tokenizer that keeps emoticons, hashtags, mentions and URLs whole.
///
/// Input is lowercased before scanning. At every position the scanner tries,
/// in order: URL, emoticon (longest match), hashtag, mention, word (with
/// internal apostrophes and hyphens), ellipsis, and finally any single
/// non-whitespace character.
pub struct TweetTokenizer {
    emoticons: Vec<String>,
    url: Regex,
    hashtag: Regex,
    mention: Regex,
    word: Regex,
    ellipsis: Regex,
}

impl TweetTokenizer {
    pub fn new(emoticons: impl IntoIterator<Item = String>) -> Self {
        let mut emoticons: Vec<String> = emoticons
            .into_iter()
            .map(|e| e.to_lowercase())
            .filter(|e| !e.is_empty() && !e.chars().any(char::is_whitespace))
            .collect();
        emoticons.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        emoticons.dedup();
        TweetTokenizer {
            emoticons,
            url: Regex::new(r"^(?:https?://|www\.)\S+").unwrap(),
            hashtag: Regex::new(r"^#[\p{L}\p{N}_]+").unwrap(),
            mention: Regex::new(r"^@[\p{L}\p{N}_]+").unwrap(),
            word: Regex::new(r"^[\p{L}\p{N}_]+(?:['’\-][\p{L}\p{N}_]+)*").unwrap(),
            ellipsis: Regex::new(r"^\.{2,}").unwrap(),
        }
    }

    /// The shared tokenizer built from the bundled emoticon inventory.
    pub fn builtin() -> &'static TweetTokenizer {
        static TOKENIZER: OnceLock<TweetTokenizer> = OnceLock::new();
        TOKENIZER.get_or_init(|| TweetTokenizer::new(parse_word_list(BUILTIN_EMOTICONS)))
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let lower = text.to_lowercase();
        let mut tokens = Vec::new();
        let mut rest = lower.as_str();
        loop {
            rest = rest.trim_start();
            if rest.is_empty() {
                return tokens;
            }
            let len = self.match_len(rest);
            tokens.push(rest[..len].to_string());
            rest = &rest[len..];
        }
    }

    fn match_len(&self, s: &str) -> usize {
        if let Some(m) = self.url.find(s) {
            let url = m.as_str().trim_end_matches(['.', ',', '!', '?', ';', ':', '"', '\'', ')']);
            if !url.is_empty() {
                return url.len();
            }
        }
        if let Some(len) = self.emoticon_len(s) {
            return len;
        }
        for re in [&self.hashtag, &self.mention, &self.word, &self.ellipsis] {
            if let Some(m) = re.find(s) {
                return m.end();
            }
        }
        s.chars().next().map_or(s.len(), char::len_utf8)
    }

    fn emoticon_len(&self, s: &str) -> Option<usize> {
        self.emoticons.iter().find_map(|e| {
            if !s.starts_with(e.as_str()) {
                return None;
            }
            // An emoticon ending in a letter or digit must not run into a word (":do", "xdoor").
            let ends_alnum = e.chars().last().is_some_and(char::is_alphanumeric);
            let next_alnum = s[e.len()..].chars().next().is_some_and(char::is_alphanumeric);
            (!(ends_alnum && next_alnum)).then_some(e.len())
        })
    }
}

/// Lowercase and tokenize a tweet with the bundled emoticon inventory.
pub fn tokenize_tweet(text: &str) -> Vec<String> {
    TweetTokenizer::builtin().tokenize(text)
}

#[derive(Clone, Debug)]
pub struct StopwordPolicy {
    pub stopword_set: HashSet<String>,
    pub retained_pronouns: HashSet<String>,
}

impl StopwordPolicy {
    pub fn new(
        stopwords: impl IntoIterator<Item = String>,
        retained: impl IntoIterator<Item = String>,
    ) -> Self {
        StopwordPolicy {
            stopword_set: stopwords.into_iter().map(|w| w.to_lowercase()).collect(),
            retained_pronouns: retained.into_iter().map(|w| w.to_lowercase()).collect(),
        }
    }

    pub fn removes(&self, token: &str) -> bool {
        self.stopword_set.contains(token) && !self.retained_pronouns.contains(token)
    }
}

impl Default for StopwordPolicy {
    /// Bundled English stopword list with first-person pronouns retained.
    fn default() -> Self {
        StopwordPolicy::new(
            parse_word_list(BUILTIN_STOPWORDS),
            RETAINED_PRONOUNS.iter().map(|s| s.to_string()),
        )
    }
}

pub fn filter_stopwords(tokens: &[String], policy: &StopwordPolicy) -> Vec<String> {
    tokens
        .iter()
        .filter(|t| !policy.removes(t))
        .cloned()
        .collect()
}

/// Full bag-of-words preprocessing: stopword removal followed by stemming.
pub fn bow_terms(tokens: &[String], policy: &StopwordPolicy) -> Vec<String> {
    tokens
        .iter()
        .filter(|t| !policy.removes(t))
        .map(|t| porter_stem(t))
        .collect()
}

/// Split a post into sentences on `.`, `?`, `!` and `…`.
pub fn split_sentences(post: &str) -> Vec<String> {
    post.split(['.', '?', '!', '…'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}
