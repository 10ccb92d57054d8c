//! Clinical named entity recognition for angiography sentences.
//!
//! Five entity types are recognized by dictionary longest-match plus a
//! percentage pattern: lumen (artery branches, tagged left/right), modifier
//! (normal/stenosis/occlusion findings), negative markers, positions along a
//! vessel, and stenosis percentages. Tokenization and recognition are purely
//! lexical; interpreting the values is the scorer's job.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("duplicate {kind} term {term:?}")]
    DuplicateTerm { kind: &'static str, term: String },
    #[error("empty {kind} term")]
    EmptyTerm { kind: &'static str },
    #[error("failed to read lexicon {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse lexicon {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
}

/// The five clinical entity types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityType {
    Lumen,
    Modifier,
    Negative,
    Position,
    Percentage,
}

/// Per-token entity-type tag fed to the model; `None` marks plain context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TypeTag {
    #[default]
    None,
    Lumen,
    Modifier,
    Negative,
    Position,
    Percentage,
}

impl TypeTag {
    /// Stable row index into the type-embedding matrix.
    pub fn index(self) -> usize {
        match self {
            TypeTag::None => 0,
            TypeTag::Lumen => 1,
            TypeTag::Modifier => 2,
            TypeTag::Negative => 3,
            TypeTag::Position => 4,
            TypeTag::Percentage => 5,
        }
    }

    pub const COUNT: usize = 6;
}

impl From<EntityType> for TypeTag {
    fn from(t: EntityType) -> TypeTag {
        match t {
            EntityType::Lumen => TypeTag::Lumen,
            EntityType::Modifier => TypeTag::Modifier,
            EntityType::Negative => TypeTag::Negative,
            EntityType::Position => TypeTag::Position,
            EntityType::Percentage => TypeTag::Percentage,
        }
    }
}

/// Which coronary tree a lumen belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Left => write!(f, "left"),
            Side::Right => write!(f, "right"),
        }
    }
}

/// What a modifier term asserts about a lumen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModifierKind {
    Normal,
    Stenosis,
    Occlusion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LumenTerm {
    pub term: String,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModifierTerm {
    pub term: String,
    pub kind: ModifierKind,
}

/// Term lists backing tokenization and entity recognition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub lumen: Vec<LumenTerm>,
    pub modifier: Vec<ModifierTerm>,
    pub negative: Vec<String>,
    pub position: Vec<String>,
}

impl Lexicon {
    pub fn from_json(json: &str, origin: &str) -> Result<Lexicon, LexiconError> {
        let lex: Lexicon = serde_json::from_str(json).map_err(|source| LexiconError::Parse {
            path: origin.to_string(),
            source,
        })?;
        lex.validate()?;
        Ok(lex)
    }

    pub fn from_path(path: &Path) -> Result<Lexicon, LexiconError> {
        let json = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Lexicon::from_json(&json, &path.display().to_string())
    }

    /// The Chinese lexicon shipped with the crate.
    pub fn builtin_chinese() -> Lexicon {
        Lexicon::from_json(include_str!("../data/lexicon.json"), "builtin chinese")
            .expect("builtin lexicon is valid")
    }

    /// Transliterated ASCII lexicon for environments without CJK rendering.
    pub fn builtin_ascii() -> Lexicon {
        Lexicon::from_json(include_str!("../data/lexicon_ascii.json"), "builtin ascii")
            .expect("builtin lexicon is valid")
    }

    fn validate(&self) -> Result<(), LexiconError> {
        fn check<'a>(
            kind: &'static str,
            terms: impl Iterator<Item = &'a str>,
        ) -> Result<(), LexiconError> {
            let mut seen = HashSet::new();
            for t in terms {
                if t.is_empty() {
                    return Err(LexiconError::EmptyTerm { kind });
                }
                if !seen.insert(t) {
                    return Err(LexiconError::DuplicateTerm {
                        kind,
                        term: t.to_string(),
                    });
                }
            }
            Ok(())
        }
        check("lumen", self.lumen.iter().map(|t| t.term.as_str()))?;
        check("modifier", self.modifier.iter().map(|t| t.term.as_str()))?;
        check("negative", self.negative.iter().map(String::as_str))?;
        check("position", self.position.iter().map(String::as_str))?;
        Ok(())
    }

    fn all_terms(&self) -> impl Iterator<Item = &str> {
        self.lumen
            .iter()
            .map(|t| t.term.as_str())
            .chain(self.modifier.iter().map(|t| t.term.as_str()))
            .chain(self.negative.iter().map(String::as_str))
            .chain(self.position.iter().map(String::as_str))
    }

    /// Entity type of an exact term, lumen taking precedence over modifier,
    /// negative, then position if a term were ever listed twice.
    pub fn term_type(&self, surface: &str) -> Option<EntityType> {
        if self.lumen.iter().any(|t| t.term == surface) {
            return Some(EntityType::Lumen);
        }
        if self.modifier.iter().any(|t| t.term == surface) {
            return Some(EntityType::Modifier);
        }
        if self.negative.iter().any(|t| t == surface) {
            return Some(EntityType::Negative);
        }
        if self.position.iter().any(|t| t == surface) {
            return Some(EntityType::Position);
        }
        None
    }

    pub fn lumen_side(&self, surface: &str) -> Option<Side> {
        self.lumen
            .iter()
            .find(|t| t.term == surface)
            .map(|t| t.side)
    }

    pub fn modifier_kind(&self, surface: &str) -> Option<ModifierKind> {
        self.modifier
            .iter()
            .find(|t| t.term == surface)
            .map(|t| t.kind)
    }
}

/// One token with character offsets into the source sentence
/// (`start..end`, end exclusive).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub start: usize,
    pub end: usize,
}

/// A recognized entity over a token range (inclusive on both ends).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    /// Inclusive token index range `[first, last]`.
    pub span: [usize; 2],
    #[serde(rename = "type")]
    pub ty: EntityType,
    pub surface: String,
}

/// Length in chars of a percentage literal starting at `chars[at]`:
/// one to three digits, an optional fractional part, then a percent sign.
fn match_percentage(chars: &[char], at: usize) -> Option<usize> {
    let mut i = at;
    let mut digits = 0;
    while i < chars.len() && chars[i].is_ascii_digit() && digits < 3 {
        digits += 1;
        i += 1;
    }
    if digits == 0 || (i < chars.len() && chars[i].is_ascii_digit()) {
        return None;
    }
    if i < chars.len() && chars[i] == '.' {
        let mut frac = 0;
        let mut j = i + 1;
        while j < chars.len() && chars[j].is_ascii_digit() {
            frac += 1;
            j += 1;
        }
        if frac > 0 {
            i = j;
        }
    }
    if i < chars.len() && chars[i] == '%' {
        Some(i + 1 - at)
    } else {
        None
    }
}

/// Parse a percentage surface like `40%` or `99.5%` into its numeric value.
pub fn parse_percentage(surface: &str) -> Option<f64> {
    let chars: Vec<char> = surface.chars().collect();
    if match_percentage(&chars, 0) != Some(chars.len()) {
        return None;
    }
    surface.trim_end_matches('%').parse().ok()
}

fn longest_term_at(chars: &[char], at: usize, lexicon: &Lexicon) -> Option<usize> {
    let mut best = 0;
    for term in lexicon.all_terms() {
        let len = term.chars().count();
        if len > best
            && at + len <= chars.len()
            && term.chars().zip(&chars[at..at + len]).all(|(a, &b)| a == b)
    {
            best = len;
        }
    }
    (best > 0).then_some(best)
}

/// Greedy longest-match tokenization against lexicon terms and the
/// percentage pattern. Unmatched maximal runs become single tokens;
/// whitespace separates tokens and is dropped. Offsets are character
/// positions, and token surfaces tile the non-whitespace input exactly.
pub fn tokenize(sentence: &str, lexicon: &Lexicon) -> Vec<Token> {
    let chars: Vec<char> = sentence.chars().collect();
    let mut tokens = Vec::new();
    let mut run_start: Option<usize> = None;

    let flush = |tokens: &mut Vec<Token>, run_start: &mut Option<usize>, end: usize| {
        if let Some(start) = run_start.take() {
            tokens.push(Token {
                surface: chars_range(&chars, start, end),
                start,
                end,
            });
        }
    };

    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            flush(&mut tokens, &mut run_start, i);
            i += 1;
            continue;
        }
        // Earlier start wins; at equal start the longer match wins.
        let term = longest_term_at(&chars, i, lexicon);
        let pct = match_percentage(&chars, i);
        let hit = term.max(pct);
        if let Some(len) = hit {
            flush(&mut tokens, &mut run_start, i);
            tokens.push(Token {
                surface: chars_range(&chars, i, i + len),
                start: i,
                end: i + len,
            });
            i += len;
        } else {
            run_start.get_or_insert(i);
            i += 1;
        }
    }
    flush(&mut tokens, &mut run_start, chars.len());
    tokens
}

fn chars_range(chars: &[char], start: usize, end: usize) -> String {
    chars[start..end].iter().collect()
}

/// Mark every token that is a lexicon term or a percentage literal as an
/// entity. Output is ordered by token position; zero entities is legal.
pub fn recognize_entities(tokens: &[Token], lexicon: &Lexicon) -> Vec<Entity> {
    let mut entities = Vec::new();
    for (i, tok) in tokens.iter().enumerate() {
        let ty = lexicon.term_type(&tok.surface).or_else(|| {
            let chars: Vec<char> = tok.surface.chars().collect();
            (match_percentage(&chars, 0) == Some(chars.len())).then_some(EntityType::Percentage)
        });
        if let Some(ty) = ty {
            entities.push(Entity {
                span: [i, i],
                ty,
                surface: tok.surface.clone(),
            });
        }
    }
    entities
}

/// Tokenize and recognize in one step.
pub fn annotate(sentence: &str, lexicon: &Lexicon) -> (Vec<Token>, Vec<Entity>) {
    let tokens = tokenize(sentence, lexicon);
    let entities = recognize_entities(&tokens, lexicon);
    (tokens, entities)
}

/// Per-token type tags induced by a set of entities.
pub fn type_tags(token_count: usize, entities: &[Entity]) -> Vec<TypeTag> {
    let mut tags = vec![TypeTag::None; token_count];
    for e in entities {
        for tag in tags.iter_mut().take(e.span[1] + 1).skip(e.span[0]) {
            *tag = e.ty.into();
        }
    }
    tags
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG1: &str = "左前降支中段40%狭窄，右前降支、右回旋支未见明显狭窄。";

    fn lex() -> Lexicon {
        Lexicon::builtin_chinese()
    }

    fn surfaces(tokens: &[Token]) -> Vec<&str> {
        tokens.iter().map(|t| t.surface.as_str()).collect()
    }

    #[test]
    fn stenosis_clause_tokenizes_to_four_tokens() {
        let tokens = tokenize("左前降支中段40%狭窄", &lex());
        assert_eq!(surfaces(&tokens), ["左前降支", "中段", "40%", "狭窄"]);
        assert_eq!(tokens[2].start, 6);
        assert_eq!(tokens[2].end, 9);
    }

    #[test]
    fn full_report_sentence_recognizes_eight_entities() {
        let (tokens, entities) = annotate(FIG1, &lex());
        assert_eq!(
            surfaces(&tokens),
            [
                "左前降支",
                "中段",
                "40%",
                "狭窄",
                "，",
                "右前降支",
                "、",
                "右回旋支",
                "未见",
                "明显",
                "狭窄",
                "。"
            ]
        );
        let kinds: Vec<(&str, EntityType)> =
            entities.iter().map(|e| (e.surface.as_str(), e.ty)).collect();
        assert_eq!(
            kinds,
            [
                ("左前降支", EntityType::Lumen),
                ("中段", EntityType::Position),
                ("40%", EntityType::Percentage),
                ("狭窄", EntityType::Modifier),
                ("右前降支", EntityType::Lumen),
                ("右回旋支", EntityType::Lumen),
                ("未见", EntityType::Negative),
                ("狭窄", EntityType::Modifier),
            ]
        );
    }

    #[test]
    fn single_term_sentence_is_one_token() {
        let tokens = tokenize("左主干", &lex());
        assert_eq!(surfaces(&tokens), ["左主干"]);
    }

    #[test]
    fn unmatched_text_round_trips() {
        let text = "血管造影术后复查结果";
        let tokens = tokenize(text, &lex());
        assert_eq!(tokens.len(), 1);
        let joined: String = tokens.iter().map(|t| t.surface.as_str()).collect();
        assert_eq!(joined, text);
    }

    #[test]
    fn whitespace_is_dropped_but_tiling_holds() {
        let text = "LAD proximal 40% stenosis";
        let tokens = tokenize(text, &Lexicon::builtin_ascii());
        assert_eq!(surfaces(&tokens), ["LAD", "proximal", "40%", "stenosis"]);
        let joined: String = tokens.iter().map(|t| t.surface.as_str()).collect();
        let no_ws: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        assert_eq!(joined, no_ws);
    }

    #[test]
    fn percentage_boundaries() {
        let (_, e) = annotate("100%", &lex());
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].ty, EntityType::Percentage);

        let (_, e) = annotate("40", &lex());
        assert!(e.is_empty());

        let (_, e) = annotate("99.5%", &lex());
        assert_eq!(e[0].ty, EntityType::Percentage);
        assert_eq!(parse_percentage(&e[0].surface), Some(99.5));

        // Lexically valid but clinically out of range; the scorer rejects it.
        let (_, e) = annotate("150%", &lex());
        assert_eq!(e.len(), 1);
        assert_eq!(parse_percentage("150%"), Some(150.0));

        // Four digits never match as one percentage.
        assert_eq!(parse_percentage("1000%"), None);
    }

    #[test]
    fn recognition_is_idempotent_and_round_trips() {
        let (tokens, entities) = annotate(FIG1, &lex());
        assert_eq!(recognize_entities(&tokens, &lex()), entities);
        let chars: Vec<char> = FIG1.chars().collect();
        for e in &entities {
            let tok = &tokens[e.span[0]];
            let from_offsets: String = chars[tok.start..tok.end].iter().collect();
            assert_eq!(from_offsets, e.surface);
        }
    }

    #[test]
    fn longest_match_beats_prefix_terms() {
        // 未 and 未见 are both negatives; 右冠 is a prefix of 右冠状动脉.
        let tokens = tokenize("右冠状动脉未见狭窄", &lex());
        assert_eq!(surfaces(&tokens), ["右冠状动脉", "未见", "狭窄"]);
    }

    #[test]
    fn type_tags_mark_entity_tokens() {
        let (tokens, entities) = annotate("左前降支中段40%狭窄", &lex());
        let tags = type_tags(tokens.len(), &entities);
        assert_eq!(
            tags,
            [
                TypeTag::Lumen,
                TypeTag::Position,
                TypeTag::Percentage,
                TypeTag::Modifier
            ]
        );
    }

    #[test]
    fn duplicate_terms_rejected() {
        let json = r#"{"lumen":[{"term":"左主干","side":"left"},{"term":"左主干","side":"right"}],
                       "modifier":[],"negative":[],"position":[]}"#;
        assert!(matches!(
            Lexicon::from_json(json, "test"),
            Err(LexiconError::DuplicateTerm { .. })
        ));
    }
}
