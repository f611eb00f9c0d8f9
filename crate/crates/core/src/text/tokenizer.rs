use serde::{Deserialize, Serialize};

pub const VOCAB_SIZE: u32 = 1 << 16;
pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const SEP_ID: u32 = 2;
/// Ids below this are reserved for special tokens.
pub const FIRST_REGULAR_ID: u32 = 4;
pub const MIN_SEQUENCE_LEN: usize = 8;

/// Fixed-length token ids with attention mask and segment ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
    pub segment: Vec<u8>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of unpadded positions.
    pub fn active_len(&self) -> usize {
        self.mask.iter().filter(|m| **m != 0).count()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Stable 16-bit bucket of a token string, outside the reserved range.
pub fn token_id(token: &str) -> u32 {
    let span = u64::from(VOCAB_SIZE - FIRST_REGULAR_ID);
    FIRST_REGULAR_ID + (fnv1a(token.as_bytes()) % span) as u32
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // hiragana, katakana
        | 0x3400..=0x4DBF    // CJK extension A
        | 0x4E00..=0x9FFF    // CJK unified
        | 0xAC00..=0xD7AF    // hangul syllables
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0x20000..=0x2FA1F)
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c, '。' | '，' | '、' | '；' | '：' | '？' | '！' | '（' | '）' | '“' | '”' | '‘' | '’' | '《' | '》' | '．' | '…' | '—')
}

/// Splits text into token strings: lowercase alphanumeric words, one token
/// per punctuation mark, one per CJK character, and `<0xNN>` byte tokens
/// for everything else that is not whitespace.
pub fn pieces(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut Vec<String>| {
        if !word.is_empty() {
            out.push(std::mem::take(word));
        }
    };
    for c in text.chars() {
        if c.is_whitespace() {
            flush(&mut word, &mut out);
        } else if is_cjk(c) {
            flush(&mut word, &mut out);
            out.push(c.to_string());
        } else if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
        } else if is_punct(c) {
            flush(&mut word, &mut out);
            out.push(c.to_string());
        } else {
            flush(&mut word, &mut out);
            let mut buf = [0u8; 4];
            for b in c.encode_utf8(&mut buf).bytes() {
                out.push(format!("<0x{b:02X}>"));
            }
        }
    }
    flush(&mut word, &mut out);
    out
}

/// Trims the longer segment (the second on ties) one token at a time until
/// both fit in `budget`.
pub fn truncate_longest_first(a: &mut Vec<u32>, b: &mut Vec<u32>, budget: usize) {
    while a.len() + b.len() > budget {
        if a.len() > b.len() {
            a.pop();
        } else {
            b.pop();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tokenizer {
    max_len: usize,
}

impl Tokenizer {
    /// `max_len` below 8 is raised to 8.
    pub fn new(max_len: usize) -> Self {
        Self { max_len: max_len.max(MIN_SEQUENCE_LEN) }
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn ids(text: &str) -> Vec<u32> {
        pieces(text).iter().map(|p| token_id(p)).collect()
    }

    /// `[CLS] a [SEP]` or `[CLS] a [SEP] b [SEP]`, truncated longest-first
    /// and padded to the fixed length.
    pub fn encode(&self, text_a: &str, text_b: Option<&str>) -> TokenSequence {
        let l = self.max_len;
        let mut a = Self::ids(text_a);
        let mut b = text_b.map(Self::ids).unwrap_or_default();
        match text_b {
            Some(_) => truncate_longest_first(&mut a, &mut b, l - 3),
            None => a.truncate(l - 2),
        }
        let mut ids = Vec::with_capacity(l);
        let mut segment = Vec::with_capacity(l);
        ids.push(CLS_ID);
        ids.extend(&a);
        ids.push(SEP_ID);
        segment.resize(ids.len(), 0);
        if text_b.is_some() {
            ids.extend(&b);
            ids.push(SEP_ID);
            segment.resize(ids.len(), 1);
        }
        let mut mask = vec![1u8; ids.len()];
        ids.resize(l, PAD_ID);
        mask.resize(l, 0);
        segment.resize(l, 0);
        TokenSequence { ids, mask, segment }
    }
}

/// Convenience wrapper around [`Tokenizer::encode`].
pub fn tokenize(text_a: &str, text_b: Option<&str>, max_len: usize) -> TokenSequence {
    Tokenizer::new(max_len).encode(text_a, text_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pair_layout() {
        let s = tokenize("a b", Some("c d"), 8);
        let (a, b, c, d) = (token_id("a"), token_id("b"), token_id("c"), token_id("d"));
        assert_eq!(s.ids, vec![CLS_ID, a, b, SEP_ID, c, d, SEP_ID, PAD_ID]);
        assert_eq!(s.mask, vec![1, 1, 1, 1, 1, 1, 1, 0]);
        assert_eq!(s.segment, vec![0, 0, 0, 0, 1, 1, 1, 0]);
    }

    #[test]
    fn single_segment_layout() {
        let s = tokenize("x", None, 8);
        assert_eq!(&s.ids[..3], &[CLS_ID, token_id("x"), SEP_ID]);
        assert!(s.ids[3..].iter().all(|i| *i == PAD_ID));
        assert_eq!(s.active_len(), 3);
        assert!(s.segment.iter().all(|x| *x == 0));
    }

    /// Independent simulation of the trim loop on lengths only.
    fn simulate(mut la: usize, mut lb: usize, budget: usize) -> (usize, usize) {
        loop {
            if la + lb <= budget {
                return (la, lb);
            }
            if la > lb {
                la -= 1
            } else {
                lb -= 1
            }
        }
    }

    #[test]
    fn longest_first_on_long_pairs() {
        assert_eq!(simulate(100, 100, 125), (63, 62));
        let a: String = (0..100).map(|i| format!("a{i} ")).collect();
        let b: String = (0..100).map(|i| format!("b{i} ")).collect();
        let s = tokenize(&a, Some(&b), 128);
        assert_eq!(s.active_len(), 128);
        let seg1 = s.segment.iter().filter(|x| **x == 1).count();
        assert_eq!(seg1 - 1, 62);
        assert_eq!(128 - 3 - 62, 63);
    }

    #[test]
    fn cjk_and_bytes() {
        assert_eq!(pieces("局域网LAN!"), vec!["局", "域", "网", "lan", "!"]);
        assert_eq!(pieces("a🙂"), vec!["a", "<0xF0>", "<0x9F>", "<0x99>", "<0x82>"]);
        assert!(pieces("  \n ").is_empty());
    }

    proptest! {
        #[test]
        fn every_input_yields_a_valid_sequence(a in "\\PC*", b in proptest::option::of("\\PC*"), l in 8usize..64) {
            let s = tokenize(&a, b.as_deref(), l);
            prop_assert_eq!(s.ids.len(), l);
            prop_assert_eq!(s.mask.len(), l);
            prop_assert_eq!(s.segment.len(), l);
            prop_assert_eq!(s.ids[0], CLS_ID);
            let active = s.active_len();
            prop_assert!(s.mask[..active].iter().all(|m| *m == 1));
            for i in active..l {
                prop_assert_eq!(s.ids[i], PAD_ID);
                prop_assert_eq!(s.mask[i], 0);
            }
            prop_assert!(s.ids.iter().all(|id| *id < VOCAB_SIZE));
        }

        #[test]
        fn truncation_respects_budget(la in 0usize..300, lb in 0usize..300, budget in 0usize..300) {
            let mut a = vec![7u32; la];
            let mut b = vec![9u32; lb];
            truncate_longest_first(&mut a, &mut b, budget);
            prop_assert!(a.len() + b.len() <= budget.max(0));
            prop_assert_eq!((a.len(), b.len()), simulate(la, lb, budget));
        }
    }
}
