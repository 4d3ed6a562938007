//! Guideline corpus ingestion and BM25 passage retrieval.
//!
//! Documents are split into paragraphs on blank lines; each paragraph is one
//! retrievable passage. Tokens are Unicode words, lowercased, unstemmed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::codec;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
pub const DEFAULT_TOP_K: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub title: String,
    pub body: String,
    pub source_tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedCriterion {
    pub doc_id: String,
    pub passage: String,
    pub score: f64,
    /// Character offsets `[start, end)` into the document body.
    pub span: (usize, usize),
}

#[derive(Debug, thiserror::Error)]
pub enum KnowledgeError {
    #[error("duplicate doc_id `{0}`")]
    DuplicateDocId(String),
    #[error("document `{0}` has an empty body")]
    EmptyBody(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Codec(#[from] codec::CodecError),
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.unicode_words().map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct Passage {
    doc_id: String,
    text: String,
    span: (usize, usize),
    len: usize,
}

/// Paragraphs of `body` with their character spans; surrounding whitespace trimmed.
pub fn split_paragraphs(body: &str) -> Vec<(String, (usize, usize))> {
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let mut start_char = 0usize;
    let mut char_pos = 0usize;
    let mut para_start = None;

    let flush = |lines: &mut Vec<&str>, start: Option<usize>, out: &mut Vec<(String, (usize, usize))>| {
        if let Some(start) = start {
            let raw = lines.join("\n");
            let lead = raw.chars().take_while(|c| c.is_whitespace()).count();
            let trimmed = raw.trim();
            if !trimmed.is_empty() {
                let s = start + lead;
                out.push((trimmed.to_string(), (s, s + trimmed.chars().count())));
            }
        }
        lines.clear();
    };

    for line in body.split('\n') {
        let line_chars = line.chars().count();
        if line.trim().is_empty() {
            flush(&mut current, para_start.take(), &mut out);
        } else {
            if para_start.is_none() {
                para_start = Some(start_char);
            }
            current.push(line);
        }
        char_pos += line_chars + 1;
        start_char = char_pos;
    }
    flush(&mut current, para_start.take(), &mut out);
    out
}

/// Inverted index over paragraph passages. Built by [`KnowledgeIndex::ingest`],
/// read-only afterwards.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeIndex {
    docs: BTreeMap<String, DocumentRecord>,
    passages: Vec<Passage>,
    postings: HashMap<String, Vec<(usize, u32)>>,
    total_len: usize,
}

impl KnowledgeIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_documents(documents: Vec<DocumentRecord>) -> Result<Self, KnowledgeError> {
        let mut index = Self::new();
        index.ingest(documents)?;
        Ok(index)
    }

    /// Adds documents. Re-ingesting an identical document is a no-op; a
    /// different document under an existing id is rejected.
    pub fn ingest(&mut self, documents: Vec<DocumentRecord>) -> Result<(), KnowledgeError> {
        let mut seen = BTreeSet::new();
        for doc in &documents {
            if !seen.insert(doc.doc_id.as_str()) {
                return Err(KnowledgeError::DuplicateDocId(doc.doc_id.clone()));
            }
            if doc.body.trim().is_empty() {
                return Err(KnowledgeError::EmptyBody(doc.doc_id.clone()));
            }
            if let Some(existing) = self.docs.get(&doc.doc_id) {
                if existing != doc {
                    return Err(KnowledgeError::DuplicateDocId(doc.doc_id.clone()));
                }
            }
        }
        let mut changed = false;
        for doc in documents {
            if !self.docs.contains_key(&doc.doc_id) {
                self.docs.insert(doc.doc_id.clone(), doc);
                changed = true;
            }
        }
        if changed {
            self.rebuild();
        }
        Ok(())
    }

    fn rebuild(&mut self) {
        self.passages.clear();
        self.postings.clear();
        self.total_len = 0;
        for doc in self.docs.values() {
            for (text, span) in split_paragraphs(&doc.body) {
                let tokens = tokenize(&text);
                let idx = self.passages.len();
                let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
                for t in &tokens {
                    *tf.entry(t).or_default() += 1;
                }
                for (term, count) in tf {
                    self.postings.entry(term.to_string()).or_default().push((idx, count));
                }
                self.total_len += tokens.len();
                self.passages.push(Passage { doc_id: doc.doc_id.clone(), text, span, len: tokens.len() });
            }
        }
    }

    pub fn passage_count(&self) -> usize {
        self.passages.len()
    }

    pub fn document_count(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    /// SHA-256 over the passages and their term postings in canonical order.
    pub fn checksum(&self) -> String {
        let postings: BTreeMap<&String, &Vec<(usize, u32)>> = self.postings.iter().collect();
        codec::json_digest(&(&self.passages, postings))
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.passages.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Top `k` passages by BM25 score; zero-score passages are never returned.
    /// Ties break by (doc_id, span start).
    pub fn retrieve(&self, query: &str, k: usize) -> Vec<RetrievedCriterion> {
        if k == 0 || self.passages.is_empty() {
            return Vec::new();
        }
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        let avgdl = self.total_len as f64 / self.passages.len() as f64;
        let mut scores: BTreeMap<usize, f64> = BTreeMap::new();
        for term in &terms {
            let Some(list) = self.postings.get(term) else { continue };
            let idf = self.idf(list.len());
            for &(idx, tf) in list {
                let tf = f64::from(tf);
                let norm = 1.0 - BM25_B + BM25_B * self.passages[idx].len as f64 / avgdl;
                *scores.entry(idx).or_default() += idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * norm);
            }
        }
        let mut ranked: Vec<(usize, f64)> = scores.into_iter().filter(|&(_, s)| s > 0.0).collect();
        ranked.sort_by(|a, b| {
            let (pa, pb) = (&self.passages[a.0], &self.passages[b.0]);
            b.1.total_cmp(&a.1)
                .then_with(|| pa.doc_id.cmp(&pb.doc_id))
                .then_with(|| pa.span.0.cmp(&pb.span.0))
        });
        ranked
            .into_iter()
            .take(k)
            .map(|(idx, score)| {
                let p = &self.passages[idx];
                RetrievedCriterion { doc_id: p.doc_id.clone(), passage: p.text.clone(), score, span: p.span }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Deserialize)]
struct ManifestEntry {
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    source_tag: Option<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Reads every `*.txt` file in `dir` as one document (doc_id = file stem).
/// An optional `manifest.json` maps doc_id to `{title, source_tag}`.
pub fn load_corpus_dir(dir: &Path) -> Result<Vec<DocumentRecord>, KnowledgeError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| KnowledgeError::Io { path, source }
    };
    let manifest: BTreeMap<String, ManifestEntry> = {
        let path = dir.join(MANIFEST_FILE);
        if path.is_file() {
            codec::read_json(&path, codec::ParseMode::Lenient)?
        } else {
            BTreeMap::new()
        }
    };
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "txt"))
        .collect();
    files.sort();
    let mut docs = Vec::with_capacity(files.len());
    for path in files {
        let doc_id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let body = std::fs::read_to_string(&path).map_err(io(&path))?;
        let entry = manifest.get(&doc_id);
        docs.push(DocumentRecord {
            title: entry.and_then(|e| e.title.clone()).unwrap_or_else(|| doc_id.clone()),
            source_tag: entry.and_then(|e| e.source_tag.clone()).unwrap_or_else(|| "local".into()),
            doc_id,
            body,
        });
    }
    Ok(docs)
}

/// Small reference corpus shipped with the crate, used when no criteria
/// directory is configured.
pub fn bundled_corpus() -> Vec<DocumentRecord> {
    let doc = |doc_id: &str, title: &str, body: &str| DocumentRecord {
        doc_id: doc_id.into(),
        title: title.into(),
        body: body.into(),
        source_tag: "bundled".into(),
    };
    vec![
        doc(
            "diabetic_retinopathy",
            "Diabetic retinopathy grading",
            include_str!("../data/criteria/diabetic_retinopathy.txt"),
        ),
        doc("glaucoma", "Optic nerve assessment for glaucoma", include_str!("../data/criteria/glaucoma.txt")),
        doc(
            "heart_failure",
            "Echocardiographic assessment of left ventricular function",
            include_str!("../data/criteria/heart_failure.txt"),
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, body: &str) -> DocumentRecord {
        DocumentRecord { doc_id: id.into(), title: id.into(), body: body.into(), source_tag: "test".into() }
    }

    #[test]
    fn bundled_matches_directory() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/criteria");
        assert_eq!(load_corpus_dir(&dir).unwrap(), bundled_corpus());
    }

    #[test]
    fn paragraphs_and_spans() {
        let body = "First para\nstill first.\n\n  Second é para  \n\n\n\nThird";
        let paras = split_paragraphs(body);
        assert_eq!(paras.len(), 3);
        let chars: Vec<char> = body.chars().collect();
        for (text, (s, e)) in &paras {
            let slice: String = chars[*s..*e].iter().collect();
            assert_eq!(&slice, text);
        }
        assert_eq!(paras[1].0, "Second é para");
    }

    #[test]
    fn counts_passages() {
        let idx = KnowledgeIndex::from_documents(vec![
            doc("a", "one\n\ntwo\n\nthree"),
            doc("b", "four\n\nfive"),
        ])
        .unwrap();
        assert_eq!(idx.passage_count(), 5);
    }

    #[test]
    fn empty_corpus() {
        let idx = KnowledgeIndex::from_documents(vec![]).unwrap();
        assert!(idx.is_empty());
        assert!(idx.retrieve("glaucoma", 5).is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = KnowledgeIndex::from_documents(vec![doc("a", "x"), doc("a", "y")]).unwrap_err();
        assert!(matches!(err, KnowledgeError::DuplicateDocId(ref id) if id == "a"));
        let mut idx = KnowledgeIndex::from_documents(vec![doc("a", "x")]).unwrap();
        assert!(idx.ingest(vec![doc("a", "changed")]).is_err());
    }

    #[test]
    fn reingest_is_idempotent() {
        let docs = vec![doc("a", "cup disc\n\nratio"), doc("b", "heart")];
        let mut idx = KnowledgeIndex::from_documents(docs.clone()).unwrap();
        let before = idx.checksum();
        idx.ingest(docs).unwrap();
        assert_eq!(idx.checksum(), before);
    }

    #[test]
    fn k_zero_and_no_overlap() {
        let idx = KnowledgeIndex::from_documents(vec![doc("a", "cup disc ratio")]).unwrap();
        assert!(idx.retrieve("cup", 0).is_empty());
        assert!(idx.retrieve("zebra", 3).is_empty());
    }

    #[test]
    fn k_clamps_to_scoring_passages() {
        let idx = KnowledgeIndex::from_documents(vec![doc("a", "cup one\n\ncup two\n\nnothing here")]).unwrap();
        assert_eq!(idx.retrieve("cup", 10).len(), 2);
    }

    #[test]
    fn corpus_dir_with_manifest() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("b.txt"), "beta body").unwrap();
        std::fs::write(dir.path().join("a.txt"), "alpha body").unwrap();
        std::fs::write(dir.path().join("ignored.md"), "nope").unwrap();
        std::fs::write(dir.path().join(MANIFEST_FILE), r#"{"a": {"title": "Alpha", "source_tag": "guideline"}}"#)
            .unwrap();
        let docs = load_corpus_dir(dir.path()).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].doc_id, "a");
        assert_eq!(docs[0].title, "Alpha");
        assert_eq!(docs[1].source_tag, "local");
    }
}
