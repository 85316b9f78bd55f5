use crate::error::{Error, Result};

/// Boolean `[batch, queries, keys]` attention pattern; `true` = attend allowed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    batch: usize,
    queries: usize,
    keys: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn from_fn(batch: usize, queries: usize, keys: usize, f: impl Fn(usize, usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(batch * queries * keys);
        for b in 0..batch {
            for q in 0..queries {
                for k in 0..keys {
                    allowed.push(f(b, q, k));
                }
            }
        }
        AttentionMask {
            batch,
            queries,
            keys,
            allowed,
        }
    }

    /// Every query sees every non-padding key.
    pub fn padding(key_lens: &[usize], queries: usize, keys: usize) -> Self {
        Self::from_fn(key_lens.len(), queries, keys, |b, _, k| k < key_lens[b])
    }

    /// Decoder self-attention for the teacher: keys up to and including the query.
    pub fn causal(lens: &[usize], width: usize) -> Self {
        Self::from_fn(lens.len(), width, width, |b, q, k| k <= q && k < lens[b])
    }

    /// Decoder self-attention for the student: future positions stay visible.
    pub fn non_causal(lens: &[usize], width: usize) -> Self {
        Self::padding(lens, width, width)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.batch, self.queries, self.keys)
    }

    pub fn allowed(&self, b: usize, q: usize, k: usize) -> bool {
        self.allowed[(b * self.queries + q) * self.keys + k]
    }

    /// Blocked positions repeated for each head, laid out `[batch, heads, queries, keys]`.
    pub fn blocked_per_head(&self, heads: usize) -> Vec<bool> {
        let plane = self.queries * self.keys;
        let mut out = Vec::with_capacity(self.allowed.len() * heads);
        for b in 0..self.batch {
            let slab = &self.allowed[b * plane..(b + 1) * plane];
            for _ in 0..heads {
                out.extend(slab.iter().map(|a| !a));
            }
        }
        out
    }

    pub fn check_rows_nonempty(&self) -> Result<()> {
        for row in self.allowed.chunks(self.keys) {
            if !row.iter().any(|&a| a) {
                return Err(Error::invalid("attention row with no visible keys"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn causal_hides_future_and_padding() {
        let m = AttentionMask::causal(&[3, 2], 3);
        assert!(m.allowed(0, 2, 2) && m.allowed(0, 2, 0));
        assert!(!m.allowed(0, 0, 1));
        assert!(!m.allowed(1, 2, 2), "padding key");
        assert!(m.allowed(1, 2, 1));
    }

    #[test]
    fn non_causal_sees_future() {
        let m = AttentionMask::non_causal(&[3], 3);
        assert!(m.allowed(0, 0, 2));
        let m = AttentionMask::non_causal(&[2], 3);
        assert!(!m.allowed(0, 0, 2));
        m.check_rows_nonempty().unwrap();
    }

    #[test]
    fn per_head_expansion_repeats_each_sentence() {
        let m = AttentionMask::padding(&[1, 2], 1, 2);
        assert_eq!(
            m.blocked_per_head(2),
            vec![false, true, false, true, false, false, false, false]
        );
    }
}
