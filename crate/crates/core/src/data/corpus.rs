//! Sentence pairs and the plain-text corpus format: one sentence per line,
//! token ids separated by single spaces. An empty line is an empty sentence.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::TokenSequence;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub src: TokenSequence,
    pub tgt: TokenSequence,
}

impl Pair {
    pub fn new(src: TokenSequence, tgt: TokenSequence) -> Self {
        Pair { src, tgt }
    }
}

pub fn format_line(seq: &[usize]) -> String {
    let mut s = String::with_capacity(seq.len() * 3);
    for (i, t) in seq.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{t}").expect("writing to a String cannot fail");
    }
    s
}

pub fn parse_line(line: &str) -> Result<TokenSequence> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<usize>()
                .map_err(|_| Error::invalid(format!("not a token id: {tok:?}")))
        })
        .collect()
}

pub fn format_corpus<S: AsRef<[usize]>>(sents: &[S]) -> String {
    let mut out = String::new();
    for s in sents {
        out.push_str(&format_line(s.as_ref()));
        out.push('\n');
    }
    out
}

pub fn parse_corpus(text: &str) -> Result<Vec<TokenSequence>> {
    text.lines().map(parse_line).collect()
}

pub fn write_sentences<S: AsRef<[usize]>>(path: &Path, sents: &[S]) -> Result<()> {
    std::fs::write(path, format_corpus(sents))?;
    Ok(())
}

pub fn read_sentences(path: &Path) -> Result<Vec<TokenSequence>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Missing(format!("{}: {e}", path.display())))?;
    parse_corpus(&text)
}

/// Writes sources and targets to two line-aligned files.
pub fn write_pairs(src_path: &Path, tgt_path: &Path, pairs: &[Pair]) -> Result<()> {
    let srcs: Vec<&[usize]> = pairs.iter().map(|p| p.src.as_slice()).collect();
    let tgts: Vec<&[usize]> = pairs.iter().map(|p| p.tgt.as_slice()).collect();
    write_sentences(src_path, &srcs)?;
    write_sentences(tgt_path, &tgts)
}

pub fn read_pairs(src_path: &Path, tgt_path: &Path) -> Result<Vec<Pair>> {
    let srcs = read_sentences(src_path)?;
    let tgts = read_sentences(tgt_path)?;
    zip_pairs(srcs, tgts)
}

pub fn zip_pairs(srcs: Vec<TokenSequence>, tgts: Vec<TokenSequence>) -> Result<Vec<Pair>> {
    if srcs.len() != tgts.len() {
        return Err(Error::invalid(format!(
            "line count mismatch: {} sources, {} targets",
            srcs.len(),
            tgts.len()
        )));
    }
    Ok(srcs.into_iter().zip(tgts).map(|(s, t)| Pair::new(s, t)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let sents = vec![vec![4, 17, 35], vec![], vec![9]];
        let text = format_corpus(&sents);
        assert_eq!(text, "4 17 35\n\n9\n");
        assert_eq!(parse_corpus(&text).unwrap(), sents);
    }

    #[test]
    fn bad_token_is_reported() {
        let err = parse_line("4 x 5").unwrap_err().to_string();
        assert!(err.contains("\"x\""), "{err}");
    }

    #[test]
    fn mismatched_files_are_rejected() {
        assert!(zip_pairs(vec![vec![4]], vec![]).is_err());
    }
}
