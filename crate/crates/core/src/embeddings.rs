//! Fixed word vectors. Two sources: a pretrained word-vector file extended
//! with hashed character n-gram vectors, or seeded random rows for runs
//! without external files. Rows are never trained.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Corpus;
use crate::data_model::tokenize;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PAD: &str = "<pad>";
pub const GO: &str = "<go>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const GO_ID: usize = 1;
pub const UNK_ID: usize = 2;

const NGRAM_BUCKETS: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Reserved tokens first, then `tokens` in the given order (duplicates of
    /// earlier entries are dropped).
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in [PAD, GO, UNK].into_iter().map(str::to_owned).chain(tokens) {
            if !v.index.contains_key(&t) {
                v.index.insert(t.clone(), v.tokens.len());
                v.tokens.push(t);
            }
        }
        v
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Hex SHA-256 of the newline-joined token list.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.tokens.join("\n").as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Every token of every utterance, system action and ontology value across
/// all splits, ordered by frequency (descending) then lexicographically.
pub fn build_vocab(c: &Corpus) -> Vocabulary {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut add = |toks: Vec<String>| {
        for t in toks {
            *counts.entry(t).or_default() += 1;
        }
    };
    for d in c.dialogues() {
        for turn in &d.turns {
            add(turn.user_utterance.clone());
            for a in &turn.system_actions {
                add(a.tokens());
            }
        }
    }
    for spec in &c.ontology.slots {
        for v in spec.values.iter().chain(&spec.specials) {
            add(tokenize(v));
        }
    }
    let mut ordered: Vec<(String, usize)> = counts.into_iter().collect();
    ordered.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_tokens(ordered.into_iter().map(|(t, _)| t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingSource {
    PretrainedNgram { pretrained_dim: usize, ngram_dim: usize, seed: u64 },
    SeededRandom { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub vocab: Vocabulary,
    pub matrix: Tensor,
    pub source: EmbeddingSource,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Character n-grams (n = 2, 3, 4) of `<token>`.
pub fn char_ngrams(token: &str) -> Vec<String> {
    let chars: Vec<char> = format!("<{token}>").chars().collect();
    let mut out = Vec::new();
    for n in 2..=4 {
        for w in chars.windows(n) {
            out.push(w.iter().collect());
        }
    }
    out
}

pub fn ngram_bucket(ngram: &str) -> u64 {
    fnv1a(ngram.as_bytes()) % NGRAM_BUCKETS
}

/// Unit-variance vector of a hash bucket, a pure function of `(seed, bucket)`.
pub fn bucket_vector(seed: u64, bucket: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ bucket);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Mean of the bucket vectors of the token's character n-grams.
pub fn ngram_vector(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let grams = char_ngrams(token);
    let mut out = vec![0.0; dim];
    for g in &grams {
        for (o, x) in out.iter_mut().zip(bucket_vector(seed, ngram_bucket(g), dim)) {
            *o += x;
        }
    }
    let n = grams.len().max(1) as f64;
    out.iter_mut().for_each(|x| *x /= n);
    out
}

/// Parses a word-vector text file into a token → vector map.
pub fn read_word_vectors(text: &str, source: &str) -> Result<(usize, HashMap<String, Vec<f64>>)> {
    let mut dim: Option<usize> = None;
    let mut out = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            location: format!("{source}:{}", lineno + 1),
            message,
        };
        let mut parts = line.split(' ');
        let token = parts.next().filter(|t| !t.is_empty()).ok_or_else(|| err("missing token".into()))?;
        let vec: Vec<f64> = parts
            .map(|p| p.parse::<f64>().map_err(|_| err(format!("bad float '{p}'"))))
            .collect::<Result<_>>()?;
        if vec.is_empty() {
            return Err(err(format!("no vector for '{token}'")));
        }
        match dim {
            None => dim = Some(vec.len()),
            Some(d) if d != vec.len() => {
                return Err(err(format!("vector has {} dimensions, earlier lines have {d}", vec.len())));
            }
            _ => {}
        }
        out.insert(token.to_owned(), vec);
    }
    let dim = dim.ok_or_else(|| Error::Parse {
        location: source.to_owned(),
        message: "no word vectors".into(),
    })?;
    Ok((dim, out))
}

impl EmbeddingTable {
    /// N(0, 1) rows from `seed`; PAD is zero.
    pub fn seeded_random(vocab: Vocabulary, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut matrix = Tensor::zeros(vocab.len(), dim);
        for r in 0..vocab.len() {
            for x in matrix.row_mut(r) {
                *x = StandardNormal.sample(&mut rng);
            }
        }
        matrix.row_mut(PAD_ID).iter_mut().for_each(|x| *x = 0.0);
        EmbeddingTable {
            vocab,
            matrix,
            source: EmbeddingSource::SeededRandom { seed },
        }
    }

    /// Pretrained prefix (zeros when absent) followed by the character n-gram
    /// vector. PAD is zero.
    pub fn from_word_vectors(vocab: Vocabulary, vectors: &HashMap<String, Vec<f64>>, pretrained_dim: usize, ngram_dim: usize, seed: u64) -> Self {
        let dim = pretrained_dim + ngram_dim;
        let mut matrix = Tensor::zeros(vocab.len(), dim);
        for (r, tok) in vocab.tokens().iter().enumerate() {
            if r == PAD_ID {
                continue;
            }
            let row = matrix.row_mut(r);
            if let Some(v) = vectors.get(tok) {
                row[..pretrained_dim].copy_from_slice(v);
            }
            row[pretrained_dim..].copy_from_slice(&ngram_vector(tok, ngram_dim, seed));
        }
        EmbeddingTable {
            vocab,
            matrix,
            source: EmbeddingSource::PretrainedNgram {
                pretrained_dim,
                ngram_dim,
                seed,
            },
        }
    }

    pub fn load_pretrained(path: impl AsRef<Path>, vocab: Vocabulary, ngram_dim: usize, seed: u64) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let (dim, vectors) = read_word_vectors(&text, &path.display().to_string())?;
        Ok(Self::from_word_vectors(vocab, &vectors, dim, ngram_dim, seed))
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols
    }

    fn row_for(&self, token: &str) -> Vec<f64> {
        match (self.vocab.id(token), self.source) {
            (Some(i), _) => self.matrix.row(i).to_vec(),
            (None, EmbeddingSource::SeededRandom { .. }) => self.matrix.row(UNK_ID).to_vec(),
            (
                None,
                EmbeddingSource::PretrainedNgram {
                    pretrained_dim,
                    ngram_dim,
                    seed,
                },
            ) => {
                let mut row = vec![0.0; pretrained_dim];
                row.extend(ngram_vector(token, ngram_dim, seed));
                row
            }
        }
    }

    /// One row per token.
    pub fn embed<S: AsRef<str>>(&self, tokens: &[S]) -> Tensor {
        let mut data = Vec::with_capacity(tokens.len() * self.dim());
        for t in tokens {
            data.extend(self.row_for(t.as_ref()));
        }
        Tensor::from_vec(tokens.len(), self.dim(), data)
    }

    pub fn go_row(&self) -> Tensor {
        Tensor::row_vector(self.matrix.row(GO_ID).to_vec())
    }
}
