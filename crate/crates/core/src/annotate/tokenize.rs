use super::Token;

/// Words after which a period does not end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "st", "jr", "sr", "gen", "col", "lt", "capt", "sgt", "gov", "sen",
    "rep", "rev", "prof", "vs", "etc", "inc", "co", "corp", "ltd", "no", "mt", "ft", "u.s", "jan",
    "feb", "aug", "sept", "oct", "nov", "dec", "a.m", "p.m",
];

const SYMBOLS: &[char] = &['%', '$', '£', '€'];

fn is_numeric_text(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_digit() || c == ',' || c == '.')
        && s.chars().any(|c| c.is_ascii_digit())
}

fn is_abbreviation(word: &str) -> bool {
    let lower = word.to_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
        || (word.chars().count() == 1 && word.chars().all(char::is_uppercase))
}

struct Builder<'a> {
    chars: &'a [char],
    tokens: Vec<Token>,
    start: Option<usize>,
    sentence: usize,
}

impl Builder<'_> {
    fn flush(&mut self, end: usize) {
        if let Some(start) = self.start.take() {
            if end > start {
                self.tokens.push(Token {
                    text: self.chars[start..end].iter().collect(),
                    char_start: start,
                    char_end: end,
                    sentence_id: self.sentence,
                });
            }
        }
    }

    fn single(&mut self, at: usize, len: usize) {
        self.tokens.push(Token {
            text: self.chars[at..at + len].iter().collect(),
            char_start: at,
            char_end: at + len,
            sentence_id: self.sentence,
        });
    }

    fn current(&self, end: usize) -> String {
        match self.start {
            Some(s) => self.chars[s..end].iter().collect(),
            None => String::new(),
        }
    }
}

/// Splits text into word, number and unit-symbol tokens with sentence ids.
///
/// Punctuation delimits tokens and is not emitted, except the hyphen of a
/// number-unit compound (`45-yard` gives `45`, `-`, `yard`), currency and
/// percent symbols, and the possessive `'s`. Offsets count Unicode scalar
/// values, not bytes.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut b = Builder {
        chars: &chars,
        tokens: Vec::new(),
        start: None,
        sentence: 0,
    };
    let n = chars.len();
    let at = |i: usize| chars.get(i).copied();
    let mut i = 0;
    while i < n {
        let c = chars[i];
        let prev = if i > 0 { at(i - 1) } else { None };
        let next = at(i + 1);
        if c.is_alphanumeric() {
            if b.start.is_none() {
                b.start = Some(i);
            }
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            b.flush(i);
            i += 1;
            continue;
        }
        if SYMBOLS.contains(&c) {
            b.flush(i);
            b.single(i, 1);
            i += 1;
            continue;
        }
        let in_token = b.start.is_some();
        let digit_both_sides =
            prev.is_some_and(|p| p.is_ascii_digit()) && next.is_some_and(|q| q.is_ascii_digit());
        match c {
            ',' | ':' | '/' if in_token && digit_both_sides => {
                i += 1;
                continue;
            }
            '.' if in_token && digit_both_sides => {
                i += 1;
                continue;
            }
            '.' if in_token
                && prev.is_some_and(char::is_alphabetic)
                && next.is_some_and(char::is_alphabetic) =>
            {
                // dotted abbreviations such as U.S or p.m
                i += 1;
                continue;
            }
            '-' | '\u{2010}' | '\u{2013}'
                if in_token && next.is_some_and(char::is_alphanumeric) =>
            {
                if is_numeric_text(&b.current(i)) {
                    b.flush(i);
                    b.single(i, 1);
                }
                i += 1;
                continue;
            }
            '\'' | '\u{2019}'
                if in_token
                    && next.is_some_and(|q| q == 's' || q == 'S')
                    && !at(i + 2).is_some_and(char::is_alphanumeric) =>
            {
                b.flush(i);
                b.single(i, 2);
                i += 2;
                continue;
            }
            '\'' | '\u{2019}' if in_token && next.is_some_and(char::is_alphabetic) => {
                i += 1;
                continue;
            }
            _ => {}
        }
        // any other punctuation delimits
        let word = b.current(i);
        b.flush(i);
        if matches!(c, '.' | '!' | '?') && !(c == '.' && is_abbreviation(&word)) {
            let mut j = i + 1;
            let mut saw_space = false;
            while j < n && chars[j].is_whitespace() {
                saw_space = true;
                j += 1;
            }
            if saw_space
                && j < n
                && (chars[j].is_uppercase() || chars[j].is_ascii_digit())
                && !b.tokens.is_empty()
            {
                b.sentence += 1;
            }
        }
        i += 1;
    }
    b.flush(n);
    b.tokens
}
