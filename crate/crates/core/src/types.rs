//! Domain types shared across the crate: vocabularies, label specs, prompt
//! templates and samples.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Token inventory of a backend. Every id in `[0, size)` has a surface string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    placeholder_id: TokenId,
    surfaces: Vec<String>,
}

impl Vocab {
    pub fn new(surfaces: Vec<String>, placeholder_id: TokenId) -> Result<Self> {
        if surfaces.is_empty() {
            return Err(Error::InvalidVocab("vocabulary is empty".into()));
        }
        if placeholder_id as usize >= surfaces.len() {
            return Err(Error::InvalidVocab(format!(
                "placeholder id {placeholder_id} outside vocabulary of size {}",
                surfaces.len()
            )));
        }
        Ok(Self {
            placeholder_id,
            surfaces,
        })
    }

    /// `size` tokens named `<unk>`, `t1`, `t2`, ... with id 0 as placeholder.
    pub fn synthetic(size: usize) -> Result<Self> {
        let surfaces = (0..size)
            .map(|i| {
                if i == 0 {
                    "<unk>".to_string()
                } else {
                    format!("t{i}")
                }
            })
            .collect();
        Self::new(surfaces, 0)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let vocab: Vocab = serde_json::from_str(&raw)?;
        Self::new(vocab.surfaces, vocab.placeholder_id)
    }

    pub fn size(&self) -> usize {
        self.surfaces.len()
    }

    pub fn placeholder_id(&self) -> TokenId {
        self.placeholder_id
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.surfaces.get(id as usize).map(String::as_str)
    }

    pub fn surfaces(&self) -> &[String] {
        &self.surfaces
    }

    pub fn placeholder_surface(&self) -> &str {
        &self.surfaces[self.placeholder_id as usize]
    }

    pub fn check_token(&self, id: TokenId) -> Result<()> {
        if (id as usize) < self.size() {
            Ok(())
        } else {
            Err(Error::TokenOutOfRange {
                id,
                vocab: self.size(),
            })
        }
    }

    pub fn id_of(&self, surface: &str) -> Option<TokenId> {
        self.surfaces
            .iter()
            .position(|s| s == surface)
            .map(|i| i as TokenId)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub tokens: Vec<TokenId>,
    pub surfaces: Vec<String>,
}

/// Ordered set of classes, each scored by the summed probability of its
/// class tokens and matched in generated text by its surface forms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpec {
    classes: Vec<ClassSpec>,
}

#[derive(Deserialize)]
struct ClassEntry {
    tokens: Vec<TokenId>,
    surfaces: Vec<String>,
}

impl LabelSpec {
    pub fn new(classes: Vec<ClassSpec>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::InvalidLabelSpec(format!(
                "need at least 2 classes, got {}",
                classes.len()
            )));
        }
        let mut names = HashSet::new();
        let mut owner: HashMap<TokenId, &str> = HashMap::new();
        for class in &classes {
            if !names.insert(class.name.as_str()) {
                return Err(Error::InvalidLabelSpec(format!(
                    "duplicate class name {:?}",
                    class.name
                )));
            }
            if class.tokens.is_empty() {
                return Err(Error::InvalidLabelSpec(format!(
                    "class {:?} has no tokens",
                    class.name
                )));
            }
            if class.surfaces.is_empty() {
                return Err(Error::InvalidLabelSpec(format!(
                    "class {:?} has no surface forms",
                    class.name
                )));
            }
            for &tok in &class.tokens {
                if let Some(other) = owner.insert(tok, &class.name) {
                    if other != class.name {
                        return Err(Error::InvalidLabelSpec(format!(
                            "token {tok} belongs to both {other:?} and {:?}",
                            class.name
                        )));
                    }
                }
            }
        }
        Ok(Self { classes })
    }

    /// Convenience constructor for single-token classes whose surface is the
    /// class name.
    pub fn single_tokens<S: AsRef<str>>(pairs: &[(S, TokenId)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|(name, tok)| ClassSpec {
                    name: name.as_ref().to_string(),
                    tokens: vec![*tok],
                    surfaces: vec![name.as_ref().to_string()],
                })
                .collect(),
        )
    }

    /// Parses `{class_name: {"tokens": [...], "surfaces": [...]}}`, keeping
    /// the object's key order as class order.
    pub fn from_json_str(raw: &str) -> Result<Self> {
        let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(raw)?;
        let mut classes = Vec::with_capacity(map.len());
        for (name, value) in map {
            let entry: ClassEntry = serde_json::from_value(value)?;
            classes.push(ClassSpec {
                name,
                tokens: entry.tokens,
                surfaces: entry.surfaces,
            });
        }
        Self::new(classes)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&raw)
    }

    pub fn to_json_string(&self) -> String {
        let map: serde_json::Map<String, serde_json::Value> = self
            .classes
            .iter()
            .map(|c| {
                (
                    c.name.clone(),
                    serde_json::json!({ "tokens": c.tokens, "surfaces": c.surfaces }),
                )
            })
            .collect();
        serde_json::Value::Object(map).to_string()
    }

    pub fn check_vocab(&self, vocab: &Vocab) -> Result<()> {
        for class in &self.classes {
            for &tok in &class.tokens {
                if tok as usize >= vocab.size() {
                    return Err(Error::InvalidLabelSpec(format!(
                        "class {:?} token {tok} outside vocabulary of size {}",
                        class.name,
                        vocab.size()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[ClassSpec] {
        &self.classes
    }

    pub fn name(&self, class: usize) -> &str {
        &self.classes[class].name
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }

    /// Per-class sum of `row` over each class's token set.
    pub fn class_scores(&self, row: &[f64]) -> Vec<f64> {
        self.classes
            .iter()
            .map(|c| c.tokens.iter().map(|&t| row[t as usize]).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Text,
    Title,
}

/// A prompt with `{text}` and `{title}` slots. Any other `{identifier}` is
/// rejected; braces around non-identifiers are kept literally.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PromptTemplate {
    source: String,
}

impl PromptTemplate {
    pub fn parse(source: &str) -> Result<Self> {
        segments(source)?;
        Ok(Self {
            source: source.to_string(),
        })
    }

    pub fn null(with_title: bool) -> Self {
        let source = if with_title {
            "{title} {text}"
        } else {
            "{text}"
        };
        Self {
            source: source.to_string(),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }

    pub fn uses_title(&self) -> bool {
        segments(&self.source)
            .expect("validated at construction")
            .contains(&Segment::Title)
    }

    pub fn render(&self, sample: &Sample) -> Result<String> {
        render_prompt(self, sample)
    }
}

impl fmt::Display for PromptTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

fn segments(source: &str) -> Result<Vec<Segment>> {
    let mut out = Vec::new();
    let mut literal = String::new();
    let mut rest = source;
    while let Some(open) = rest.find('{') {
        literal.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let slot = after.find('}').map(|close| &after[..close]).filter(|name| {
            !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        });
        match slot {
            Some(name) => {
                let seg = match name {
                    "text" => Segment::Text,
                    "title" => Segment::Title,
                    other => return Err(Error::UnknownSlot(other.to_string())),
                };
                if !literal.is_empty() {
                    out.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                out.push(seg);
                rest = &after[name.len() + 1..];
            }
            None => {
                literal.push('{');
                rest = after;
            }
        }
    }
    literal.push_str(rest);
    if !literal.is_empty() {
        out.push(Segment::Literal(literal));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, rename = "label", skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<String>,
}

impl Sample {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            title: None,
            gold_label: None,
        }
    }

    pub fn with_title(mut self, title: impl Into<String>) -> Self {
        self.title = Some(title.into());
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.gold_label = Some(label.into());
        self
    }
}

pub fn render_prompt(template: &PromptTemplate, sample: &Sample) -> Result<String> {
    let mut out = String::with_capacity(template.source.len() + sample.text.len());
    for seg in segments(&template.source)? {
        match seg {
            Segment::Literal(s) => out.push_str(&s),
            Segment::Text => out.push_str(&sample.text),
            Segment::Title => match &sample.title {
                Some(title) => out.push_str(title),
                None => return Err(Error::MissingSlotValue("title".into())),
            },
        }
    }
    Ok(out)
}

/// One template per line; a blank line stands for the null template.
pub fn parse_prompt_set(raw: &str, with_title: bool) -> Result<Vec<PromptTemplate>> {
    raw.lines()
        .map(|line| {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() {
                Ok(PromptTemplate::null(with_title))
            } else {
                PromptTemplate::parse(line)
            }
        })
        .collect()
}

pub fn load_prompt_set(path: impl AsRef<Path>, with_title: bool) -> Result<Vec<PromptTemplate>> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_prompt_set(&raw, with_title)
}
