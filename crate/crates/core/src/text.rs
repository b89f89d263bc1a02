//! Tokenization and n-gram enumeration.
//!
//! Text is lowercased and split on runs of Unicode whitespace; nothing else is
//! normalized. An n-gram is keyed by its tokens joined with a single ASCII
//! space, which is unambiguous because tokens never contain whitespace.

/// Lowercases `text` into `scratch` and returns the whitespace-delimited
/// tokens borrowed from it.
pub fn tokenize_into<'a>(text: &str, scratch: &'a mut String) -> Vec<&'a str> {
    scratch.clear();
    for c in text.chars() {
        scratch.extend(c.to_lowercase());
    }
    scratch.split_whitespace().collect()
}

/// Owned tokenization, convenient outside hot loops.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut scratch = String::new();
    tokenize_into(text, &mut scratch)
        .into_iter()
        .map(str::to_owned)
        .collect()
}

/// Number of tokens in an n-gram key.
pub fn ngram_order(key: &str) -> usize {
    key.bytes().filter(|&b| b == b' ').count() + 1
}

/// Calls `f(order, key)` for every n-gram with `n_min <= order <= n_max`,
/// all n-grams of one order before the next, left to right within an order.
///
/// The key is built in a reused buffer, so `f` must copy it if it needs to
/// keep it.
pub fn for_each_ngram<F>(tokens: &[&str], n_min: usize, n_max: usize, mut f: F)
where
    F: FnMut(usize, &str),
{
    let mut key = String::with_capacity(64);
    for n in n_min.max(1)..=n_max {
        if n > tokens.len() {
            break;
        }
        for window in tokens.windows(n) {
            key.clear();
            key.push_str(window[0]);
            for tok in &window[1..] {
                key.push(' ');
                key.push_str(tok);
            }
            f(n, &key);
        }
    }
}

/// Total number of n-grams `for_each_ngram` would produce.
pub fn ngram_count(n_tokens: usize, n_min: usize, n_max: usize) -> usize {
    (n_min.max(1)..=n_max)
        .map(|n| n_tokens.saturating_sub(n - 1))
        .sum()
}
