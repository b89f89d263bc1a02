//! N-gram vocabulary: counting, top-k selection, persistence.
//!
//! Counting is streaming over documents. The distinct-n-gram table is held in
//! memory until it exceeds [`VocabConfig::spill_threshold`], at which point it
//! is written out as a key-sorted run file; runs are k-way merged at the end,
//! so counts stay exact for corpora whose n-gram table does not fit in memory.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::codec::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::text::{for_each_ngram, ngram_order, tokenize_into};

const VOCAB_MAGIC: &[u8; 8] = b"SDVOCAB\0";
pub const VOCAB_VERSION: u32 = 1;

/// Which documents the stored frequencies were counted over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FrequencySource {
    /// Only the labeled task training set.
    #[default]
    TrainOnly,
    /// The unlabeled corpus plus the training set, weighted equally.
    CorpusAndTrain,
}

impl FrequencySource {
    fn tag(self) -> u8 {
        match self {
            FrequencySource::TrainOnly => 0,
            FrequencySource::CorpusAndTrain => 1,
        }
    }

    fn from_tag(tag: u8, offset: usize) -> Result<Self> {
        match tag {
            0 => Ok(FrequencySource::TrainOnly),
            1 => Ok(FrequencySource::CorpusAndTrain),
            t => Err(Error::integrity(offset, format!("unknown frequency source tag {t}"))),
        }
    }
}

/// Ordering among n-grams of equal frequency at the top-k boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Byte-wise ascending n-gram string.
    #[default]
    Lexicographic,
    /// Byte-wise descending n-gram string.
    ReverseLexicographic,
}

impl TieBreak {
    /// `Less` when `a` ranks ahead of `b`.
    pub fn rank(self, a: (u64, &str), b: (u64, &str)) -> Ordering {
        b.0.cmp(&a.0).then_with(|| match self {
            TieBreak::Lexicographic => a.1.cmp(b.1),
            TieBreak::ReverseLexicographic => b.1.cmp(a.1),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub top_k: usize,
    pub tiebreak: TieBreak,
    pub source: FrequencySource,
    /// Distinct in-memory n-grams before counts are spilled to a run file.
    /// `None` keeps everything in memory.
    pub spill_threshold: Option<usize>,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            n_min: 1,
            n_max: 4,
            top_k: 1_000_000,
            tiebreak: TieBreak::Lexicographic,
            source: FrequencySource::TrainOnly,
            spill_threshold: None,
        }
    }
}

impl VocabConfig {
    pub fn new(n_min: usize, n_max: usize, top_k: usize) -> Self {
        VocabConfig {
            n_min,
            n_max,
            top_k,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_min < 1 || self.n_min > self.n_max {
            return Err(Error::config(format!(
                "invalid n-gram range ({}, {})",
                self.n_min, self.n_max
            )));
        }
        if self.n_max > u8::MAX as usize {
            return Err(Error::config("n_max must fit in a byte"));
        }
        if self.top_k == 0 {
            return Err(Error::config("top_k must be at least 1"));
        }
        if self.spill_threshold == Some(0) {
            return Err(Error::config("spill threshold must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub document_count: u64,
    pub token_count: u64,
    pub distinct_ngrams_per_order: BTreeMap<usize, u64>,
}

/// Streaming n-gram counter.
pub struct NgramCounter {
    n_min: usize,
    n_max: usize,
    spill_threshold: Option<usize>,
    counts: HashMap<String, u64>,
    runs: Vec<NamedTempFile>,
    documents: u64,
    tokens: u64,
    scratch: String,
}

impl NgramCounter {
    pub fn new(config: &VocabConfig) -> Result<Self> {
        config.validate()?;
        Ok(NgramCounter {
            n_min: config.n_min,
            n_max: config.n_max,
            spill_threshold: config.spill_threshold,
            counts: HashMap::new(),
            runs: Vec::new(),
            documents: 0,
            tokens: 0,
            scratch: String::new(),
        })
    }

    pub fn add_document(&mut self, text: &str) -> Result<()> {
        let mut scratch = std::mem::take(&mut self.scratch);
        {
            let tokens = tokenize_into(text, &mut scratch);
            self.documents += 1;
            self.tokens += tokens.len() as u64;
            let counts = &mut self.counts;
            for_each_ngram(&tokens, self.n_min, self.n_max, |_, key| {
                match counts.get_mut(key) {
                    Some(c) => *c += 1,
                    None => {
                        counts.insert(key.to_owned(), 1);
                    }
                }
            });
        }
        self.scratch = scratch;
        if let Some(limit) = self.spill_threshold {
            if self.counts.len() > limit {
                self.spill()?;
            }
        }
        Ok(())
    }

    pub fn document_count(&self) -> u64 {
        self.documents
    }

    /// Folds another counter's counts into this one.
    pub fn merge(&mut self, mut other: NgramCounter) -> Result<()> {
        if (other.n_min, other.n_max) != (self.n_min, self.n_max) {
            return Err(Error::config("cannot merge counters with different n-gram ranges"));
        }
        self.documents += other.documents;
        self.tokens += other.tokens;
        self.runs.append(&mut other.runs);
        for (k, c) in other.counts.drain() {
            *self.counts.entry(k).or_insert(0) += c;
        }
        if let Some(limit) = self.spill_threshold {
            if self.counts.len() > limit {
                self.spill()?;
            }
        }
        Ok(())
    }

    fn spill(&mut self) -> Result<()> {
        let mut entries: Vec<(String, u64)> = self.counts.drain().collect();
        entries.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        let file = NamedTempFile::new()?;
        {
            let mut w = BufWriter::new(file.as_file());
            for (k, c) in &entries {
                w.write_all(&(k.len() as u32).to_le_bytes())?;
                w.write_all(k.as_bytes())?;
                w.write_all(&c.to_le_bytes())?;
            }
            w.flush()?;
        }
        log::debug!("spilled {} n-grams to run {}", entries.len(), self.runs.len());
        self.runs.push(file);
        Ok(())
    }

    /// Visits every distinct n-gram with its total count. Order is
    /// unspecified.
    fn drain_totals<F: FnMut(String, u64)>(mut self, mut f: F) -> Result<Self> {
        if self.runs.is_empty() {
            for (k, c) in self.counts.drain() {
                f(k, c);
            }
            return Ok(self);
        }
        if !self.counts.is_empty() {
            self.spill()?;
        }
        let mut readers = Vec::with_capacity(self.runs.len());
        for run in &self.runs {
            readers.push(RunReader::open(run)?);
        }
        let mut heap = BinaryHeap::new();
        for (i, r) in readers.iter_mut().enumerate() {
            if let Some((k, c)) = r.next_entry()? {
                heap.push(Reverse((k, i, c)));
            }
        }
        let mut current: Option<(String, u64)> = None;
        while let Some(Reverse((k, i, c))) = heap.pop() {
            if let Some((nk, nc)) = readers[i].next_entry()? {
                heap.push(Reverse((nk, i, nc)));
            }
            match &mut current {
                Some((ck, cc)) if *ck == k => *cc += c,
                _ => {
                    if let Some((ck, cc)) = current.take() {
                        f(ck, cc);
                    }
                    current = Some((k, c));
                }
            }
        }
        if let Some((ck, cc)) = current {
            f(ck, cc);
        }
        self.runs.clear();
        Ok(self)
    }

    /// Selects the top-k n-grams and returns the vocabulary with corpus
    /// statistics.
    pub fn finish(self, config: &VocabConfig) -> Result<(NgramVocab, CorpusStats)> {
        config.validate()?;
        if self.documents == 0 {
            return Err(Error::EmptyCorpus);
        }
        let (n_min, n_max) = (self.n_min, self.n_max);
        let mut stats = CorpusStats {
            document_count: self.documents,
            token_count: self.tokens,
            distinct_ngrams_per_order: BTreeMap::new(),
        };
        let mut top = TopK::new(config.top_k, config.tiebreak);
        let per_order = &mut stats.distinct_ngrams_per_order;
        self.drain_totals(|k, c| {
            *per_order.entry(ngram_order(&k)).or_insert(0) += 1;
            top.push(k, c);
        })?;
        let vocab = NgramVocab::from_ranked(top.into_sorted(), (n_min, n_max), config.source)?;
        Ok((vocab, stats))
    }
}

struct RunReader {
    reader: BufReader<File>,
}

impl RunReader {
    fn open(run: &NamedTempFile) -> Result<Self> {
        Ok(RunReader {
            reader: BufReader::new(run.reopen()?),
        })
    }

    fn next_entry(&mut self) -> Result<Option<(String, u64)>> {
        let mut len = [0u8; 4];
        match self.reader.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        }
        let mut key = vec![0u8; u32::from_le_bytes(len) as usize];
        self.reader.read_exact(&mut key)?;
        let mut count = [0u8; 8];
        self.reader.read_exact(&mut count)?;
        let key = String::from_utf8(key)
            .map_err(|_| Error::integrity(0, "spill run holds invalid UTF-8"))?;
        Ok(Some((key, u64::from_le_bytes(count))))
    }
}

/// Bounded top-k selection with amortized linear cost: candidates
/// accumulate until twice the bound, then get cut back with a partial sort.
struct TopK {
    k: usize,
    tiebreak: TieBreak,
    items: Vec<(String, u64)>,
}

impl TopK {
    fn new(k: usize, tiebreak: TieBreak) -> Self {
        TopK {
            k,
            tiebreak,
            items: Vec::new(),
        }
    }

    fn cmp(&self) -> impl Fn(&(String, u64), &(String, u64)) -> Ordering {
        let tb = self.tiebreak;
        move |a, b| tb.rank((a.1, &a.0), (b.1, &b.0))
    }

    fn push(&mut self, key: String, count: u64) {
        self.items.push((key, count));
        if self.items.len() >= self.k.saturating_mul(2).max(1024) {
            self.truncate();
        }
    }

    fn truncate(&mut self) {
        if self.items.len() > self.k {
            let cmp = self.cmp();
            self.items.select_nth_unstable_by(self.k, &cmp);
            self.items.truncate(self.k);
        }
    }

    fn into_sorted(mut self) -> Vec<(String, u64)> {
        self.truncate();
        let cmp = self.cmp();
        self.items.sort_unstable_by(&cmp);
        self.items
    }
}

/// Ordered n-gram vocabulary. Ids are dense in `[0, len)` and follow rank
/// order: most frequent first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgramVocab {
    ngrams: Vec<String>,
    freqs: Vec<u64>,
    index: HashMap<String, u32>,
    n_min: usize,
    n_max: usize,
    source: FrequencySource,
}

impl NgramVocab {
    /// Builds a vocabulary from entries already in id order.
    pub fn from_ranked(
        entries: Vec<(String, u64)>,
        n_range: (usize, usize),
        source: FrequencySource,
    ) -> Result<Self> {
        let (n_min, n_max) = n_range;
        if n_min < 1 || n_min > n_max {
            return Err(Error::config(format!("invalid n-gram range ({n_min}, {n_max})")));
        }
        if entries.len() > u32::MAX as usize {
            return Err(Error::config("vocabulary exceeds u32 id space"));
        }
        let mut ngrams = Vec::with_capacity(entries.len());
        let mut freqs = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        for (id, (ngram, freq)) in entries.into_iter().enumerate() {
            let order = ngram_order(&ngram);
            if ngram.is_empty() || order < n_min || order > n_max {
                return Err(Error::config(format!(
                    "n-gram {ngram:?} has order {order} outside ({n_min}, {n_max})"
                )));
            }
            if index.insert(ngram.clone(), id as u32).is_some() {
                return Err(Error::config(format!("duplicate n-gram {ngram:?}")));
            }
            ngrams.push(ngram);
            freqs.push(freq);
        }
        Ok(NgramVocab {
            ngrams,
            freqs,
            index,
            n_min,
            n_max,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.ngrams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ngrams.is_empty()
    }

    pub fn n_range(&self) -> (usize, usize) {
        (self.n_min, self.n_max)
    }

    pub fn source(&self) -> FrequencySource {
        self.source
    }

    #[inline]
    pub fn get(&self, ngram: &str) -> Option<u32> {
        self.index.get(ngram).copied()
    }

    pub fn ngram(&self, id: u32) -> &str {
        &self.ngrams[id as usize]
    }

    pub fn frequency(&self, id: u32) -> u64 {
        self.freqs[id as usize]
    }

    pub fn frequencies(&self) -> &[u64] {
        &self.freqs
    }

    pub fn order(&self, id: u32) -> usize {
        ngram_order(&self.ngrams[id as usize])
    }

    /// `(ngram, frequency)` pairs in id order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, u64)> + '_ {
        self.ngrams.iter().map(String::as_str).zip(self.freqs.iter().copied())
    }

    /// Number of entries whose order is at most `cutoff`.
    pub fn effective_size(&self, cutoff: usize) -> usize {
        self.ngrams.iter().filter(|g| ngram_order(g) <= cutoff).count()
    }

    pub(crate) fn encode_body(&self, enc: &mut Encoder) {
        enc.u32(self.n_min as u32);
        enc.u32(self.n_max as u32);
        enc.u8(self.source.tag());
        enc.u64(self.ngrams.len() as u64);
        for (g, f) in self.ngrams.iter().zip(&self.freqs) {
            enc.str(g);
            enc.u64(*f);
        }
    }

    pub(crate) fn decode_body(dec: &mut Decoder<'_>) -> Result<Self> {
        let n_min = dec.u32()? as usize;
        let n_max = dec.u32()? as usize;
        let at = dec.offset();
        let source = FrequencySource::from_tag(dec.u8()?, at)?;
        let count_at = dec.offset();
        let count = dec.u64()? as usize;
        // A corrupt count fails on the first short read; cap the preallocation.
        let mut entries = Vec::with_capacity(count.min(1 << 24));
        for _ in 0..count {
            let ngram = dec.str()?.to_owned();
            entries.push((ngram, dec.u64()?));
        }
        NgramVocab::from_ranked(entries, (n_min, n_max), source)
            .map_err(|e| Error::integrity(count_at, e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::with_header(VOCAB_MAGIC, VOCAB_VERSION);
        self.encode_body(&mut enc);
        enc.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut dec = Decoder::open(bytes, VOCAB_MAGIC, "vocab", VOCAB_VERSION)?;
        let vocab = NgramVocab::decode_body(&mut dec)?;
        dec.finish()?;
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        NgramVocab::from_bytes(&std::fs::read(path)?)
    }
}

/// Builds a vocabulary from a document stream.
pub fn build_vocab<I, S>(documents: I, config: &VocabConfig) -> Result<NgramVocab>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    build_vocab_with_stats(documents, config).map(|(v, _)| v)
}

pub fn build_vocab_with_stats<I, S>(
    documents: I,
    config: &VocabConfig,
) -> Result<(NgramVocab, CorpusStats)>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counter = NgramCounter::new(config)?;
    for doc in documents {
        counter.add_document(doc.as_ref())?;
    }
    counter.finish(config)
}

/// Sharded counting over `workers` threads; the result equals
/// [`build_vocab_with_stats`] on the same documents.
pub fn build_vocab_parallel<S>(
    documents: &[S],
    config: &VocabConfig,
    workers: usize,
) -> Result<(NgramVocab, CorpusStats)>
where
    S: AsRef<str> + Sync,
{
    let shard = documents.len().div_ceil(workers.max(1)).max(1);
    let counters = documents
        .par_chunks(shard)
        .map(|chunk| {
            let mut c = NgramCounter::new(config)?;
            for doc in chunk {
                c.add_document(doc.as_ref())?;
            }
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut merged = NgramCounter::new(config)?;
    for c in counters {
        merged.merge(c)?;
    }
    merged.finish(config)
}

/// Counts every vocab entry over exactly `documents`. Index is the id;
/// entries that never occur stay 0.
pub fn ngram_frequencies<I, S>(documents: I, vocab: &NgramVocab) -> Vec<u64>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts = vec![0u64; vocab.len()];
    let mut scratch = String::new();
    let (n_min, n_max) = vocab.n_range();
    for doc in documents {
        let tokens = tokenize_into(doc.as_ref(), &mut scratch);
        for_each_ngram(&tokens, n_min, n_max, |_, key| {
            if let Some(id) = vocab.get(key) {
                counts[id as usize] += 1;
            }
        });
    }
    counts
}
