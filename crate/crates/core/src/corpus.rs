//! Mention-annotated corpora, document stores and the type ontology.
//!
//! Mentions are stored one per line as JSON:
//!
//! ```text
//! {"tokens":["Monopoly","is","played"],"mention":{"start":0,"end":1},"types":["/other/product/game"],"doc_id":"d1"}
//! ```
//!
//! Documents live in a separate JSON-lines store keyed by `doc_id`.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Dense type ids.
pub type TypeId = usize;

/// A set of type ids, ordered so that iteration is deterministic.
pub type TypeSet = BTreeSet<TypeId>;

/// Ordered list of type paths with a dense id for each.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TypeOntology {
    types: Vec<String>,
    index: HashMap<String, TypeId>,
}

impl TypeOntology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_paths<I, S>(paths: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut ontology = Self::new();
        for path in paths {
            let path = path.as_ref();
            if ontology.id(path).is_some() {
                return Err(Error::InvalidTypePath(format!("{path} (duplicate)")));
            }
            ontology.insert(path)?;
        }
        Ok(ontology)
    }

    /// Returns the id of `path`, adding it if it is new.
    pub fn insert(&mut self, path: &str) -> Result<TypeId> {
        if let Some(&id) = self.index.get(path) {
            return Ok(id);
        }
        validate_type_path(path)?;
        let id = self.types.len();
        self.types.push(path.to_owned());
        self.index.insert(path.to_owned(), id);
        Ok(id)
    }

    pub fn id(&self, path: &str) -> Option<TypeId> {
        self.index.get(path).copied()
    }

    pub fn path(&self, id: TypeId) -> Option<&str> {
        self.types.get(id).map(String::as_str)
    }

    pub fn paths(&self) -> &[String] {
        &self.types
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    /// Newline-separated type paths in id order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.types {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_paths(text.lines().filter(|l| !l.is_empty()))
    }

    /// Hex SHA-256 of the saved form; identifies the label space of a model.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, |w| w.write_all(self.to_text().as_bytes()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn validate_type_path(path: &str) -> Result<()> {
    let ok = path.len() > 1
        && path.starts_with('/')
        && path[1..].split('/').all(|segment| !segment.is_empty());
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidTypePath(path.to_owned()))
    }
}

/// Half-open token interval `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

/// One entity mention with its sentence and gold types.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mention {
    pub tokens: Vec<String>,
    pub span: Span,
    pub gold: TypeSet,
    /// Gold labels outside the training ontology (kept only when loading
    /// evaluation splits leniently). They can never be predicted.
    pub unknown_types: Vec<String>,
    pub doc_id: Option<String>,
}

impl Mention {
    pub fn mention_tokens(&self) -> &[String] {
        &self.tokens[self.span.range()]
    }

    /// Gold set used for scoring: known ids plus one id past the ontology
    /// for each unknown type, so that unknown labels count as misses.
    pub fn scoring_gold(&self, num_types: usize) -> TypeSet {
        let mut gold = self.gold.clone();
        gold.extend((0..self.unknown_types.len()).map(|k| num_types + k));
        gold
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MentionRecord {
    tokens: Vec<String>,
    mention: Span,
    #[serde(default)]
    types: Vec<String>,
    #[serde(default)]
    doc_id: Option<String>,
}

/// How to treat gold type paths that are not yet in the ontology.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TypePolicy {
    /// Add them (training split).
    Extend,
    /// Fail with [`Error::UnknownType`].
    Reject,
    /// Keep them on the mention as unscoreable labels.
    Unscoreable,
}

pub fn parse_mention_record(
    line: &str,
    ontology: &mut TypeOntology,
    policy: TypePolicy,
) -> Result<Mention> {
    let record: MentionRecord =
        serde_json::from_str(line).map_err(|e| Error::InvalidMention(e.to_string()))?;
    if record.tokens.is_empty() {
        return Err(Error::InvalidMention("empty tokens".into()));
    }
    let span = record.mention;
    if span.is_empty() {
        return Err(Error::InvalidMention(format!(
            "span empty: [{}, {})",
            span.start, span.end
        )));
    }
    if span.end > record.tokens.len() {
        return Err(Error::InvalidMention(format!(
            "span [{}, {}) out of bounds for {} tokens",
            span.start,
            span.end,
            record.tokens.len()
        )));
    }

    let mut gold = TypeSet::new();
    let mut unknown_types = Vec::new();
    for path in &record.types {
        match (ontology.id(path), policy) {
            (Some(id), _) => {
                gold.insert(id);
            }
            (None, TypePolicy::Extend) => {
                gold.insert(ontology.insert(path)?);
            }
            (None, TypePolicy::Reject) => return Err(Error::UnknownType(path.clone())),
            (None, TypePolicy::Unscoreable) => {
                validate_type_path(path)?;
                if !unknown_types.contains(path) {
                    unknown_types.push(path.clone());
                }
            }
        }
    }

    Ok(Mention {
        tokens: record.tokens,
        span,
        gold,
        unknown_types,
        doc_id: record.doc_id,
    })
}

/// Serializes a mention back into its JSON-lines form.
pub fn mention_to_record(mention: &Mention, ontology: &TypeOntology) -> String {
    let mut types: Vec<String> = mention
        .gold
        .iter()
        .map(|&id| ontology.path(id).unwrap_or_default().to_owned())
        .collect();
    types.extend(mention.unknown_types.iter().cloned());
    let record = MentionRecord {
        tokens: mention.tokens.clone(),
        mention: mention.span,
        types,
        doc_id: mention.doc_id.clone(),
    };
    serde_json::to_string(&record).expect("mention record serializes")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub tokens: Vec<String>,
}

/// Reads mentions from a JSON-lines file. Blank lines are skipped.
pub fn read_mentions(
    path: &Path,
    ontology: &mut TypeOntology,
    policy: TypePolicy,
    require_gold: bool,
) -> Result<Vec<Mention>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut mentions = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |e: Error| Error::Record {
            line: i + 1,
            message: e.to_string(),
        };
        let mention = parse_mention_record(&line, ontology, policy).map_err(at)?;
        if require_gold && mention.gold.is_empty() {
            return Err(at(Error::InvalidMention(
                "training mention has no gold types".into(),
            )));
        }
        mentions.push(mention);
    }
    Ok(mentions)
}

/// Reads a document store; doc ids must be unique and documents nonempty.
pub fn read_documents(path: &Path) -> Result<HashMap<String, DocumentRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |message: String| Error::Record {
            line: i + 1,
            message,
        };
        let doc: DocumentRecord = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        if doc.tokens.is_empty() {
            return Err(at(format!("document `{}` has no tokens", doc.doc_id)));
        }
        if docs.contains_key(&doc.doc_id) {
            return Err(at(format!("duplicate doc_id `{}`", doc.doc_id)));
        }
        docs.insert(doc.doc_id.clone(), doc);
    }
    Ok(docs)
}

#[derive(Clone, Debug)]
pub struct DatasetPaths {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: Option<PathBuf>,
    pub docs: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug)]
pub struct LoadOptions {
    /// Policy for dev/test labels outside the training ontology.
    pub unknown_types: TypePolicy,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            unknown_types: TypePolicy::Reject,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub types: usize,
    pub documents: usize,
    /// Distinct dev/test type paths that are not in the training ontology.
    pub unknown_types: Vec<String>,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub train: Vec<Mention>,
    pub dev: Vec<Mention>,
    pub test: Vec<Mention>,
    pub documents: HashMap<String, DocumentRecord>,
    pub ontology: TypeOntology,
}

impl Dataset {
    pub fn report(&self) -> LoadReport {
        let mut unknown: BTreeSet<String> = BTreeSet::new();
        for m in self.dev.iter().chain(&self.test) {
            unknown.extend(m.unknown_types.iter().cloned());
        }
        LoadReport {
            train: self.train.len(),
            dev: self.dev.len(),
            test: self.test.len(),
            types: self.ontology.len(),
            documents: self.documents.len(),
            unknown_types: unknown.into_iter().collect(),
        }
    }

    pub fn all_mentions(&self) -> impl Iterator<Item = &Mention> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }
}

/// Loads train/dev/test splits and the optional document store. The
/// ontology is built from the training labels.
pub fn load_dataset(paths: &DatasetPaths, options: LoadOptions) -> Result<Dataset> {
    let mut ontology = TypeOntology::new();
    let train = read_mentions(&paths.train, &mut ontology, TypePolicy::Extend, true)?;
    let eval_policy = match options.unknown_types {
        TypePolicy::Extend => TypePolicy::Unscoreable,
        p => p,
    };
    let dev = read_mentions(&paths.dev, &mut ontology, eval_policy, false)?;
    let test = match &paths.test {
        Some(p) => read_mentions(p, &mut ontology, eval_policy, false)?,
        None => Vec::new(),
    };
    for (name, split) in [("train", &train), ("dev", &dev)] {
        if split.is_empty() {
            warn!("{name} split is empty");
        }
    }

    let documents = match &paths.docs {
        Some(p) => read_documents(p)?,
        None => HashMap::new(),
    };
    let dataset = Dataset {
        train,
        dev,
        test,
        documents,
        ontology,
    };
    if paths.docs.is_some() {
        check_documents(&dataset)?;
    }

    let report = dataset.report();
    log::info!(
        "loaded {} train / {} dev / {} test mentions, {} types, {} documents",
        report.train,
        report.dev,
        report.test,
        report.types,
        report.documents
    );
    if !report.unknown_types.is_empty() {
        warn!(
            "{} dev/test type(s) outside the training ontology are unscoreable: {:?}",
            report.unknown_types.len(),
            report.unknown_types
        );
    }
    Ok(dataset)
}

fn check_documents(dataset: &Dataset) -> Result<()> {
    let mut dangling: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    for m in dataset.all_mentions() {
        if let Some(id) = &m.doc_id {
            if !dataset.documents.contains_key(id) && seen.insert(id.clone()) {
                dangling.push(id.clone());
            }
        }
    }
    if dangling.is_empty() {
        return Ok(());
    }
    let count = dangling.len();
    dangling.truncate(10);
    Err(Error::DanglingDocuments {
        count,
        ids: dangling,
    })
}

/// Binary encoding `y ∈ {0,1}^|T|` of a gold type set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVector {
    bits: Vec<bool>,
}

impl LabelVector {
    pub fn from_set(gold: &TypeSet, num_types: usize) -> Self {
        let mut bits = vec![false; num_types];
        for &t in gold {
            assert!(t < num_types, "type id {t} outside ontology of size {num_types}");
            bits[t] = true;
        }
        LabelVector { bits }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, t: TypeId) -> bool {
        self.bits[t]
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn to_set(&self) -> TypeSet {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(t, &b)| b.then_some(t))
            .collect()
    }
}

pub fn label_vector(mention: &Mention, ontology: &TypeOntology) -> LabelVector {
    LabelVector::from_set(&mention.gold, ontology.len())
}

/// Token range of a context window and the mention span re-based into it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextWindow {
    pub range: Range<usize>,
    pub span: Span,
}

impl ContextWindow {
    pub fn tokens<'a>(&self, mention: &'a Mention) -> &'a [String] {
        &mention.tokens[self.range.clone()]
    }
}

/// Keeps at most `window` tokens on each side of the mention. `None` passes
/// the whole sentence through.
pub fn context_window(mention: &Mention, window: Option<usize>) -> ContextWindow {
    let n = mention.tokens.len();
    let (start, end) = match window {
        None => (0, n),
        Some(w) => (
            mention.span.start.saturating_sub(w),
            (mention.span.end + w).min(n),
        ),
    };
    ContextWindow {
        range: start..end,
        span: Span::new(mention.span.start - start, mention.span.end - start),
    }
}
