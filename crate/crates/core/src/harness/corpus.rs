use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{io_error, HarnessError};
use crate::trace::{tokenize, Token};

/// One whitespace-tokenized sentence per line.
pub fn read_corpus(path: &Path) -> Result<Vec<Vec<Token>>, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let corpus_error = |message: String| HarnessError::Corpus {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let tokens = tokenize(line).map_err(|e| corpus_error(e.to_string()))?;
            if tokens.is_empty() {
                return Err(corpus_error("empty sentence".into()));
            }
            Ok(tokens)
        })
        .collect()
}

/// Source sentences with one or more aligned reference sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub sources: Vec<Vec<Token>>,
    /// `references[i]` holds every reference of sentence `i`.
    pub references: Vec<Vec<Vec<Token>>>,
}

impl Corpus {
    pub fn load(source: &Path, reference_files: &[PathBuf]) -> Result<Self, HarnessError> {
        let sources = read_corpus(source)?;
        let mut references = vec![Vec::with_capacity(reference_files.len()); sources.len()];
        for path in reference_files {
            let refs = read_corpus(path)?;
            if refs.len() != sources.len() {
                return Err(HarnessError::LineCountMismatch {
                    path: path.clone(),
                    expected: sources.len(),
                    found: refs.len(),
                });
            }
            for (slot, r) in references.iter_mut().zip(refs) {
                slot.push(r);
            }
        }
        Ok(Corpus {
            sources,
            references,
        })
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn source_vocabulary(&self) -> Vec<Token> {
        let mut vocab: Vec<Token> = self.sources.iter().flatten().cloned().collect();
        vocab.sort();
        vocab.dedup();
        vocab
    }
}

/// Reads `source<TAB>target` lines.
pub fn load_table(path: &Path) -> Result<BTreeMap<Token, Token>, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    let mut table = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let bad = |message: String| HarnessError::Corpus {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        if line.trim().is_empty() {
            continue;
        }
        let (src, tgt) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected source<TAB>target".into()))?;
        let src = Token::new(src.trim()).map_err(|e| bad(e.to_string()))?;
        let tgt = Token::new(tgt.trim()).map_err(|e| bad(e.to_string()))?;
        if table.insert(src.clone(), tgt).is_some() {
            return Err(bad(format!("duplicate entry for {src}")));
        }
    }
    Ok(table)
}

pub fn write_table(path: &Path, table: &BTreeMap<Token, Token>) -> Result<(), HarnessError> {
    let mut text = String::new();
    for (src, tgt) in table {
        writeln!(text, "{src}\t{tgt}").expect("writing to a String");
    }
    fs::write(path, text).map_err(io_error(path))
}

/// Paths and contents of a generated corpus.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub source_path: PathBuf,
    pub reference_path: PathBuf,
    pub table_path: PathBuf,
    pub table: BTreeMap<Token, Token>,
    pub corpus: Corpus,
}

/// Writes `source.txt`, `reference.txt` and `table.tsv` into `dir`.
///
/// Each source token maps to the upper-cased form of a seeded permutation of
/// the alphabet; references are the table image of their source, which is
/// what the lookahead transducer produces on a complete source.
pub fn gen_synthetic_corpus(
    dir: &Path,
    seed: u64,
    sentences: usize,
    len_range: (usize, usize),
    alphabet: &[String],
) -> Result<SyntheticCorpus, HarnessError> {
    let (min_len, max_len) = len_range;
    if sentences == 0 || min_len == 0 || min_len > max_len {
        return Err(HarnessError::Config(
            "synthetic corpus needs sentences >= 1 and 1 <= min_len <= max_len".into(),
        ));
    }
    let mut alphabet: Vec<Token> = alphabet
        .iter()
        .map(|a| Token::new(a).map_err(|e| HarnessError::Config(e.to_string())))
        .collect::<Result<_, _>>()?;
    alphabet.sort();
    alphabet.dedup();
    if alphabet.is_empty() {
        return Err(HarnessError::Config("synthetic alphabet is empty".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = alphabet.clone();
    images.shuffle(&mut rng);
    let table: BTreeMap<Token, Token> = alphabet
        .iter()
        .zip(&images)
        .map(|(src, img)| {
            let upper = img.as_str().to_uppercase();
            (src.clone(), Token::new(&upper).expect("upper-cased token stays valid"))
        })
        .collect();

    let mut sources = Vec::with_capacity(sentences);
    for _ in 0..sentences {
        let len = rng.gen_range(min_len..=max_len);
        let sentence: Vec<Token> = (0..len)
            .map(|_| alphabet[rng.gen_range(0..alphabet.len())].clone())
            .collect();
        sources.push(sentence);
    }
    let references: Vec<Vec<Vec<Token>>> = sources
        .iter()
        .map(|s| vec![s.iter().map(|x| table[x].clone()).collect()])
        .collect();

    fs::create_dir_all(dir).map_err(io_error(dir))?;
    let join = |lines: &mut dyn Iterator<Item = &Vec<Token>>| {
        let mut text = String::new();
        for line in lines {
            let words: Vec<&str> = line.iter().map(Token::as_str).collect();
            text.push_str(&words.join(" "));
            text.push('\n');
        }
        text
    };
    let source_path = dir.join("source.txt");
    let reference_path = dir.join("reference.txt");
    let table_path = dir.join("table.tsv");
    fs::write(&source_path, join(&mut sources.iter())).map_err(io_error(&source_path))?;
    fs::write(&reference_path, join(&mut references.iter().map(|r| &r[0])))
        .map_err(io_error(&reference_path))?;
    write_table(&table_path, &table)?;

    Ok(SyntheticCorpus {
        source_path,
        reference_path,
        table_path,
        table,
        corpus: Corpus {
            sources,
            references,
        },
    })
}
