//! Shared source/target vocabulary with four reserved ids.

use serde::{Deserialize, Serialize};

pub type TokenSequence = Vec<usize>;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NUM_RESERVED: usize = 4;

/// Ordered token list: `<pad> <s> </s> <unk>` followed by content tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Reserved tokens plus `content` synthetic tokens named `w4`, `w5`, ...
    pub fn synthetic(content: usize) -> Self {
        let mut tokens: Vec<String> = ["<pad>", "<s>", "</s>", "<unk>"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        tokens.extend((NUM_RESERVED..NUM_RESERVED + content).map(|i| format!("w{i}")));
        Vocabulary { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn content_ids(&self) -> std::ops::Range<usize> {
        NUM_RESERVED..self.tokens.len()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn is_reserved(id: usize) -> bool {
        id < NUM_RESERVED
    }
}

/// Right-padded batch of token sequences, row-major `[batch, width]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Padded {
    pub ids: Vec<usize>,
    pub lens: Vec<usize>,
    pub width: usize,
}

impl Padded {
    pub fn new<S: AsRef<[usize]>>(seqs: &[S]) -> Self {
        let width = seqs.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * width);
        for s in seqs {
            let s = s.as_ref();
            ids.extend_from_slice(s);
            ids.extend(std::iter::repeat_n(PAD, width - s.len()));
        }
        Padded {
            ids,
            lens: seqs.iter().map(|s| s.as_ref().len()).collect(),
            width,
        }
    }

    pub fn batch(&self) -> usize {
        self.lens.len()
    }

    pub fn row(&self, b: usize) -> &[usize] {
        &self.ids[b * self.width..b * self.width + self.lens[b]]
    }

    /// Number of non-padding tokens.
    pub fn tokens(&self) -> usize {
        self.lens.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_come_first() {
        let v = Vocabulary::synthetic(32);
        assert_eq!(v.len(), 36);
        assert_eq!(v.token(PAD), Some("<pad>"));
        assert_eq!(v.token(EOS), Some("</s>"));
        assert_eq!(v.content_ids(), 4..36);
        assert!(Vocabulary::is_reserved(UNK));
        assert!(!Vocabulary::is_reserved(4));
    }

    #[test]
    fn padding_fills_to_width() {
        let p = Padded::new(&[vec![5, 6, 7], vec![8]]);
        assert_eq!(p.width, 3);
        assert_eq!(p.ids, vec![5, 6, 7, 8, PAD, PAD]);
        assert_eq!(p.row(1), &[8]);
        assert_eq!(p.tokens(), 4);
    }
}
