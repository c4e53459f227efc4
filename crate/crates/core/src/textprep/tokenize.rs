//! Tweet tokenizer.
//!
//! Rules, applied left to right over each whitespace-separated chunk of the
//! lowercased input:
//!
//! * a chunk starting with `http://`, `https://` or `www.` becomes `<url>`;
//! * `@name` becomes `<user>`;
//! * `#tag` becomes `<hashtag>` followed by `tag`;
//! * a run of digits, optionally with `.`/`,` between digits, becomes `<number>`;
//! * any other run of word characters (alphanumerics, `_`, and `'` between
//!   letters) is a token, with characters repeated three or more times
//!   collapsed to two (`soooo` -> `soo`);
//! * every remaining non-space character is a token of its own (`!!!` is three
//!   `!` tokens).

pub const URL_TOKEN: &str = "<url>";
pub const USER_TOKEN: &str = "<user>";
pub const NUMBER_TOKEN: &str = "<number>";
pub const HASHTAG_TOKEN: &str = "<hashtag>";

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn collapse_repeats(word: &str) -> String {
    let mut out = String::with_capacity(word.len());
    let mut prev = None;
    let mut run = 0;
    for c in word.chars() {
        if Some(c) == prev {
            run += 1;
        } else {
            prev = Some(c);
            run = 1;
        }
        if run <= 2 {
            out.push(c);
        }
    }
    out
}

/// Consumes a word starting at `start`; returns (end index, word).
fn scan_word(chars: &[char], start: usize) -> (usize, String) {
    let mut end = start;
    while end < chars.len() {
        let c = chars[end];
        let between = |pred: fn(char) -> bool| {
            end > start && end + 1 < chars.len() && pred(chars[end - 1]) && pred(chars[end + 1])
        };
        if is_word_char(c)
            || (c == '\'' && between(char::is_alphabetic))
            || ((c == '.' || c == ',') && between(|d| d.is_ascii_digit()))
        {
            end += 1;
        } else {
            break;
        }
    }
    (end, chars[start..end].iter().collect())
}

fn is_number(word: &str) -> bool {
    word.starts_with(|c: char| c.is_ascii_digit())
        && word.chars().all(|c| c.is_ascii_digit() || c == '.' || c == ',')
}

fn push_word(tokens: &mut Vec<String>, word: &str) {
    if is_number(word) {
        tokens.push(NUMBER_TOKEN.to_string());
    } else {
        tokens.push(collapse_repeats(word));
    }
}

fn tokenize_chunk(chunk: &str, tokens: &mut Vec<String>) {
    if chunk.starts_with("http://") || chunk.starts_with("https://") || chunk.starts_with("www.") {
        tokens.push(URL_TOKEN.to_string());
        return;
    }
    let chars: Vec<char> = chunk.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let next_is_word = chars.get(i + 1).copied().is_some_and(is_word_char);
        if (c == '@' || c == '#') && next_is_word {
            let (end, word) = scan_word(&chars, i + 1);
            if c == '@' {
                tokens.push(USER_TOKEN.to_string());
            } else {
                tokens.push(HASHTAG_TOKEN.to_string());
                push_word(tokens, &word);
            }
            i = end;
        } else if is_word_char(c) {
            let (end, word) = scan_word(&chars, i);
            push_word(tokens, &word);
            i = end;
        } else {
            tokens.push(c.to_string());
            i += 1;
        }
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let mut tokens = Vec::new();
    for chunk in lowered.split_whitespace() {
        tokenize_chunk(chunk, &mut tokens);
    }
    tokens
}
