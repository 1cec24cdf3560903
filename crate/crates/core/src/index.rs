//! Inverted index and collection statistics.
//!
//! Internal document ids are assigned in ingestion order. Posting lists are
//! keyed by term in a `BTreeMap`, which keeps the persisted form
//! byte-identical across rebuilds of the same input.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::{PipelineConfig, Term};

const MAGIC: &[u8; 8] = b"DRQRIDX\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub docno: String,
    pub terms: Vec<Term>,
}

impl Document {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Document frequency `N_t` and collection frequency `F_t` of one term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TermStats {
    pub doc_freq: u64,
    pub coll_freq: u64,
}

/// Corpus-level counts feeding every predictor and ranking model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CollectionStats {
    num_docs: u64,
    total_terms: u64,
    terms: HashMap<String, TermStats>,
}

impl CollectionStats {
    /// Assemble statistics from raw counts. Used by tests and by callers that
    /// hold statistics without a full index.
    pub fn from_counts(
        num_docs: u64,
        total_terms: u64,
        terms: impl IntoIterator<Item = (String, TermStats)>,
    ) -> Self {
        CollectionStats {
            num_docs,
            total_terms,
            terms: terms.into_iter().collect(),
        }
    }

    pub fn from_documents<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let mut stats = CollectionStats::default();
        for doc in docs {
            stats.num_docs += 1;
            stats.total_terms += doc.terms.len() as u64;
            let mut seen = HashSet::new();
            for t in &doc.terms {
                let e = stats.terms.entry(t.as_str().to_owned()).or_default();
                e.coll_freq += 1;
                if seen.insert(t.as_str()) {
                    e.doc_freq += 1;
                }
            }
        }
        stats
    }

    /// `N`
    pub fn num_docs(&self) -> u64 {
        self.num_docs
    }

    /// `|D|`, the number of tokens in the collection.
    pub fn total_terms(&self) -> u64 {
        self.total_terms
    }

    pub fn average_doc_length(&self) -> f64 {
        if self.num_docs == 0 {
            0.0
        } else {
            self.total_terms as f64 / self.num_docs as f64
        }
    }

    /// `(0, 0)` for unseen terms.
    pub fn term(&self, term: &str) -> TermStats {
        self.terms.get(term).copied().unwrap_or_default()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &TermStats)> {
        self.terms.iter().map(|(k, v)| (k.as_str(), v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocEntry {
    pub docno: String,
    pub length: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    stats: CollectionStats,
    postings: BTreeMap<String, Vec<Posting>>,
    docs: Vec<DocEntry>,
    docno_ids: HashMap<String, u32>,
}

impl InvertedIndex {
    /// Process raw `(docno, text)` pairs with `config` and index them.
    pub fn build<I, S, T>(docs: I, config: &PipelineConfig) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        Self::from_documents(docs.into_iter().map(|(docno, text)| Document {
            docno: docno.into(),
            terms: config.process(text.as_ref()),
        }))
    }

    pub fn from_documents(docs: impl IntoIterator<Item = Document>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        for doc in docs {
            if !seen.insert(doc.docno.clone()) {
                return Err(Error::DuplicateDocno(doc.docno));
            }
            let id = entries.len() as u32;
            let mut tfs: BTreeMap<&str, u32> = BTreeMap::new();
            for t in &doc.terms {
                *tfs.entry(t.as_str()).or_default() += 1;
            }
            for (t, tf) in tfs {
                postings
                    .entry(t.to_owned())
                    .or_default()
                    .push(Posting { doc: id, tf });
            }
            entries.push(DocEntry {
                length: doc.terms.len() as u32,
                docno: doc.docno,
            });
        }
        Ok(Self::assemble(postings, entries))
    }

    fn assemble(postings: BTreeMap<String, Vec<Posting>>, docs: Vec<DocEntry>) -> Self {
        let terms = postings.iter().map(|(t, ps)| {
            (
                t.clone(),
                TermStats {
                    doc_freq: ps.len() as u64,
                    coll_freq: ps.iter().map(|p| u64::from(p.tf)).sum(),
                },
            )
        });
        let stats = CollectionStats::from_counts(
            docs.len() as u64,
            docs.iter().map(|d| u64::from(d.length)).sum(),
            terms,
        );
        let docno_ids = docs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.docno.clone(), i as u32))
            .collect();
        InvertedIndex {
            stats,
            postings,
            docs,
            docno_ids,
        }
    }

    pub fn stats(&self) -> &CollectionStats {
        &self.stats
    }

    /// `(N_t, F_t)`; `(0, 0)` when the term was never indexed.
    pub fn term_statistics(&self, term: &str) -> (u64, u64) {
        let s = self.stats.term(term);
        (s.doc_freq, s.coll_freq)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &[Posting])> {
        self.postings
            .iter()
            .map(|(t, p)| (t.as_str(), p.as_slice()))
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn doc(&self, id: u32) -> &DocEntry {
        &self.docs[id as usize]
    }

    pub fn doc_id(&self, docno: &str) -> Option<u32> {
        self.docno_ids.get(docno).copied()
    }

    pub fn docs(&self) -> &[DocEntry] {
        &self.docs
    }

    /// Within-document frequency of `term`, 0 if absent.
    pub fn tf(&self, term: &str, doc: u32) -> u32 {
        let ps = self.postings(term);
        ps.binary_search_by_key(&doc, |p| p.doc)
            .map(|i| ps[i].tf)
            .unwrap_or(0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.docs.len() as u64).to_le_bytes());
        for d in &self.docs {
            put_str(&mut out, &d.docno);
            out.extend_from_slice(&d.length.to_le_bytes());
        }
        out.extend_from_slice(&(self.postings.len() as u64).to_le_bytes());
        for (term, ps) in &self.postings {
            put_str(&mut out, term);
            out.extend_from_slice(&(ps.len() as u32).to_le_bytes());
            for p in ps {
                out.extend_from_slice(&p.doc.to_le_bytes());
                out.extend_from_slice(&p.tf.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { buf: bytes, pos: 0 };
        if r.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let num_docs = r.u64("document count")?;
        let mut docs = Vec::new();
        let mut seen = HashSet::new();
        for _ in 0..num_docs {
            let docno = r.string("docno")?;
            let length = r.u32("document length")?;
            if !seen.insert(docno.clone()) {
                return Err(Error::DuplicateDocno(docno));
            }
            docs.push(DocEntry { docno, length });
        }
        let num_terms = r.u64("term count")?;
        let mut postings = BTreeMap::new();
        let mut cf_total = 0u64;
        for _ in 0..num_terms {
            let term = r.string("term")?;
            let n = r.u32("posting count")? as usize;
            let mut ps = Vec::with_capacity(n.min(docs.len()));
            for _ in 0..n {
                let doc = r.u32("posting doc")?;
                let tf = r.u32("posting tf")?;
                if doc as usize >= docs.len() || tf == 0 {
                    return Err(Error::Format(format!("bad posting for `{term}`")));
                }
                if ps.last().is_some_and(|p: &Posting| p.doc >= doc) {
                    return Err(Error::Format(format!("unsorted postings for `{term}`")));
                }
                cf_total += u64::from(tf);
                ps.push(Posting { doc, tf });
            }
            if ps.is_empty() || postings.insert(term.clone(), ps).is_some() {
                return Err(Error::Format(format!("bad term entry `{term}`")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes".into()));
        }
        let index = Self::assemble(postings, docs);
        if cf_total != index.stats.total_terms {
            return Err(Error::Format(
                "collection frequencies do not sum to document lengths".into(),
            ));
        }
        Ok(index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Truncated(format!("while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }
}

/// A corpus line that could not be split into `docno<TAB>text`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedLine {
    pub line: usize,
    pub content: String,
}

/// Read a `docno<TAB>text` corpus. Malformed lines are returned separately
/// with their 1-based line numbers.
pub fn read_corpus_tsv(
    path: impl AsRef<Path>,
) -> Result<(Vec<(String, String)>, Vec<SkippedLine>)> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match line.split_once('\t') {
            Some((docno, text)) if !docno.trim().is_empty() => {
                docs.push((docno.trim().to_owned(), text.to_owned()))
            }
            _ => skipped.push(SkippedLine {
                line: i + 1,
                content: line,
            }),
        }
    }
    Ok((docs, skipped))
}
