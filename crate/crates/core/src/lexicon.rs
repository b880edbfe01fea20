//! Gendered-word resources and token classification.
//!
//! A [`GenderLexicon`] holds three disjoint maps (pronouns, gendered nouns and
//! first names). Model tokens are normalized before lookup, so `"ĠShe"`,
//! `" she"` and `"SHE"` all resolve to the same entry.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Names read from each name file before ambiguity filtering.
pub const MAX_NAMES_PER_GENDER: usize = 1000;

const FEMALE_PRONOUNS: [&str; 4] = ["she", "her", "hers", "herself"];
const MALE_PRONOUNS: [&str; 4] = ["he", "him", "his", "himself"];

/// Leading subword-boundary markers emitted by byte-level BPE (`Ġ`, `Ċ`) and
/// sentencepiece (`▁`) tokenizers.
const BOUNDARY_MARKERS: [char; 3] = ['\u{0120}', '\u{010A}', '\u{2581}'];

pub(crate) const BUNDLED_NOUNS: &str = include_str!("../data/gendered_nouns.csv");
pub(crate) const BUNDLED_FEMALE_NAMES: &str = include_str!("../data/female_names.txt");
pub(crate) const BUNDLED_MALE_NAMES: &str = include_str!("../data/male_names.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GenderLabel {
    Female,
    Male,
    Unspecified,
}

impl GenderLabel {
    pub fn short(self) -> &'static str {
        match self {
            GenderLabel::Female => "F",
            GenderLabel::Male => "M",
            GenderLabel::Unspecified => "U",
        }
    }
}

impl fmt::Display for GenderLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GenderLabel::Female => "female",
            GenderLabel::Male => "male",
            GenderLabel::Unspecified => "unspecified",
        };
        f.write_str(s)
    }
}

/// Which of the three word sources an entry came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexiconSource {
    Pronoun,
    Noun,
    Name,
}

impl fmt::Display for LexiconSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LexiconSource::Pronoun => "pronoun",
            LexiconSource::Noun => "noun",
            LexiconSource::Name => "name",
        })
    }
}

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Malformed {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{file}:{line}: '{word}' already defined as a {existing}")]
    Collision {
        file: String,
        line: usize,
        word: String,
        existing: LexiconSource,
    },
}

/// Counts gathered while loading, reported by `validate-lexicon`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LexiconStats {
    pub pronouns: usize,
    pub nouns: usize,
    pub female_names: usize,
    pub male_names: usize,
    /// Names present in both source lists, sorted.
    pub dropped_ambiguous: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct GenderLexicon {
    pronouns: HashMap<String, GenderLabel>,
    nouns: HashMap<String, GenderLabel>,
    names: HashMap<String, GenderLabel>,
    stats: LexiconStats,
}

/// Strips surrounding whitespace and leading subword markers, then lowercases.
pub fn normalize_token(raw: &str) -> String {
    raw.trim_start_matches(|c: char| c.is_whitespace() || BOUNDARY_MARKERS.contains(&c))
        .trim_end()
        .to_lowercase()
}

/// Like [`normalize_token`] but keeps the model's casing. Used when a
/// generated token is written back into a prompt.
pub fn surface_form(raw: &str) -> &str {
    raw.trim_start_matches(|c: char| c.is_whitespace() || BOUNDARY_MARKERS.contains(&c))
        .trim_end()
}

fn is_word(s: &str) -> bool {
    !s.is_empty() && s.chars().all(char::is_alphabetic)
}

impl GenderLexicon {
    /// Loads the three lexicon files from disk.
    pub fn load(
        nouns: impl AsRef<Path>,
        female_names: impl AsRef<Path>,
        male_names: impl AsRef<Path>,
    ) -> Result<Self, LexiconError> {
        let read = |p: &Path| {
            fs::read_to_string(p).map_err(|source| LexiconError::Io {
                path: p.to_path_buf(),
                source,
            })
        };
        let (n, f, m) = (nouns.as_ref(), female_names.as_ref(), male_names.as_ref());
        Self::from_sources(
            (&n.display().to_string(), &read(n)?),
            (&f.display().to_string(), &read(f)?),
            (&m.display().to_string(), &read(m)?),
        )
    }

    /// The lexicon shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_sources(
            ("gendered_nouns.csv", BUNDLED_NOUNS),
            ("female_names.txt", BUNDLED_FEMALE_NAMES),
            ("male_names.txt", BUNDLED_MALE_NAMES),
        )
        .expect("bundled lexicon is valid")
    }

    /// Builds a lexicon from in-memory file contents, each paired with a
    /// display name used in diagnostics.
    pub fn from_sources(
        nouns: (&str, &str),
        female_names: (&str, &str),
        male_names: (&str, &str),
    ) -> Result<Self, LexiconError> {
        let mut pronouns = HashMap::new();
        for w in FEMALE_PRONOUNS {
            pronouns.insert(w.to_string(), GenderLabel::Female);
        }
        for w in MALE_PRONOUNS {
            pronouns.insert(w.to_string(), GenderLabel::Male);
        }

        let (noun_file, noun_text) = nouns;
        let mut noun_map = HashMap::new();
        for (idx, line) in noun_text.lines().enumerate() {
            let line_no = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let malformed = |message: String| LexiconError::Malformed {
                file: noun_file.to_string(),
                line: line_no,
                message,
            };
            let mut fields = trimmed.split(',');
            let (word, label) = match (fields.next(), fields.next(), fields.next()) {
                (Some(w), Some(l), None) => (w.trim(), l.trim()),
                _ => return Err(malformed(format!("expected 'word,label', got '{trimmed}'"))),
            };
            let label = match label {
                "F" | "f" => GenderLabel::Female,
                "M" | "m" => GenderLabel::Male,
                other => return Err(malformed(format!("label must be F or M, got '{other}'"))),
            };
            let key = normalize_token(word);
            if !is_word(&key) {
                return Err(malformed(format!(
                    "'{word}' is not a single alphabetic word"
                )));
            }
            if pronouns.contains_key(&key) {
                return Err(collision(noun_file, line_no, key, LexiconSource::Pronoun));
            }
            if noun_map.insert(key.clone(), label).is_some() {
                return Err(collision(noun_file, line_no, key, LexiconSource::Noun));
            }
        }

        let female = read_names(female_names)?;
        let male = read_names(male_names)?;
        let female_keys: HashSet<&str> = female.iter().map(|(k, _)| k.as_str()).collect();
        let male_keys: HashSet<&str> = male.iter().map(|(k, _)| k.as_str()).collect();
        let mut dropped: Vec<String> = female_keys
            .intersection(&male_keys)
            .map(|s| s.to_string())
            .collect();
        dropped.sort();

        let mut names = HashMap::new();
        let mut counts = [0usize; 2];
        for ((file, _), list, label, slot) in [
            (female_names, &female, GenderLabel::Female, 0),
            (male_names, &male, GenderLabel::Male, 1),
        ] {
            for (key, line_no) in list {
                if dropped.binary_search(key).is_ok() {
                    continue;
                }
                if pronouns.contains_key(key) {
                    return Err(collision(
                        file,
                        *line_no,
                        key.clone(),
                        LexiconSource::Pronoun,
                    ));
                }
                if noun_map.contains_key(key) {
                    return Err(collision(file, *line_no, key.clone(), LexiconSource::Noun));
                }
                names.insert(key.clone(), label);
                counts[slot] += 1;
            }
        }

        let stats = LexiconStats {
            pronouns: pronouns.len(),
            nouns: noun_map.len(),
            female_names: counts[0],
            male_names: counts[1],
            dropped_ambiguous: dropped,
        };
        Ok(Self {
            pronouns,
            nouns: noun_map,
            names,
            stats,
        })
    }

    pub fn stats(&self) -> &LexiconStats {
        &self.stats
    }

    /// Classifies a raw model token. Lookup order is pronouns, nouns, names.
    pub fn classify(&self, raw: &str) -> GenderLabel {
        self.classify_with_order(
            raw,
            &[
                LexiconSource::Pronoun,
                LexiconSource::Noun,
                LexiconSource::Name,
            ],
        )
    }

    /// Classification with an explicit lookup order. On a valid lexicon the
    /// maps are disjoint, so every order gives the same answer.
    pub fn classify_with_order(&self, raw: &str, order: &[LexiconSource]) -> GenderLabel {
        let key = normalize_token(raw);
        if !is_word(&key) {
            return GenderLabel::Unspecified;
        }
        order
            .iter()
            .find_map(|src| self.map(*src).get(&key).copied())
            .unwrap_or(GenderLabel::Unspecified)
    }

    /// Which source a normalized word belongs to, if any.
    pub fn source_of(&self, word: &str) -> Option<LexiconSource> {
        let key = normalize_token(word);
        [
            LexiconSource::Pronoun,
            LexiconSource::Noun,
            LexiconSource::Name,
        ]
        .into_iter()
        .find(|src| self.map(*src).contains_key(&key))
    }

    pub fn entries(&self, source: LexiconSource) -> impl Iterator<Item = (&str, GenderLabel)> {
        self.map(source).iter().map(|(k, v)| (k.as_str(), *v))
    }

    fn map(&self, source: LexiconSource) -> &HashMap<String, GenderLabel> {
        match source {
            LexiconSource::Pronoun => &self.pronouns,
            LexiconSource::Noun => &self.nouns,
            LexiconSource::Name => &self.names,
        }
    }
}

fn collision(file: &str, line: usize, word: String, existing: LexiconSource) -> LexiconError {
    LexiconError::Collision {
        file: file.to_string(),
        line,
        word,
        existing,
    }
}

/// Reads up to [`MAX_NAMES_PER_GENDER`] names, returning normalized keys with
/// their line numbers. Repeats within one file keep the first occurrence.
fn read_names((file, text): (&str, &str)) -> Result<Vec<(String, usize)>, LexiconError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut taken = 0;
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if taken == MAX_NAMES_PER_GENDER {
            break;
        }
        taken += 1;
        let key = normalize_token(trimmed);
        if !is_word(&key) {
            return Err(LexiconError::Malformed {
                file: file.to_string(),
                line: idx + 1,
                message: format!("'{trimmed}' is not a single alphabetic name"),
            });
        }
        if seen.insert(key.clone()) {
            out.push((key, idx + 1));
        }
    }
    Ok(out)
}
