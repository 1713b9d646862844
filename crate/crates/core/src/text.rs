//! Word tokenization shared by the embedding trainer and the feature extractors.
//!
//! Tokens are lowercase, with punctuation removed except hyphens that sit
//! between two alphanumeric characters. Offsets are byte offsets into the
//! original text, the same convention mention offsets use.

/// One token and the byte offset of the whitespace-delimited chunk it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub offset: usize,
}

/// Tokenize `text` keeping offsets.
pub fn tokenize_with_offsets(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut chunk_start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some(start) = chunk_start.take() {
                push_chunk(&text[start..i], start, &mut out);
            }
        } else if chunk_start.is_none() {
            chunk_start = Some(i);
        }
    }
    if let Some(start) = chunk_start {
        push_chunk(&text[start..], start, &mut out);
    }
    out
}

/// Tokenize `text` into bare lowercase words.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_offsets(text).into_iter().map(|t| t.text).collect()
}

fn push_chunk(chunk: &str, start: usize, out: &mut Vec<Token>) {
    let chars: Vec<(usize, char)> = chunk.char_indices().collect();
    let mut word = String::new();
    let mut first: Option<usize> = None;
    for (k, &(pos, ch)) in chars.iter().enumerate() {
        let keep = if ch.is_alphanumeric() {
            true
        } else if ch == '-' {
            let prev = k > 0 && chars[k - 1].1.is_alphanumeric();
            let next = chars.get(k + 1).is_some_and(|&(_, c)| c.is_alphanumeric());
            prev && next
        } else {
            false
        };
        if keep {
            first.get_or_insert(pos);
            word.extend(ch.to_lowercase());
        }
    }
    if let Some(pos) = first {
        out.push(Token {
            text: word,
            offset: start + pos,
        });
    }
}
