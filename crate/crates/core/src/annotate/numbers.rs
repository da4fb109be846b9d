use std::sync::LazyLock;

use regex::Regex;

use super::{AnnotationWarning, DateParts, NumberMention, NumberType, Token};

static PLAIN_NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(\d{1,3}(,\d{3})+|\d+)(\.\d+)?$").unwrap());
static ORDINAL_DIGITS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(\d+)(st|nd|rd|th)$").unwrap());
static CLOCK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(\d{1,2}):(\d{2})$").unwrap());
static MONTH_YEAR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(\d{1,2})/(\d{4})$").unwrap());
static MONTH_DAY_YEAR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(\d{1,2})/(\d{1,2})/(\d{4}|\d{2})$").unwrap());

const MONTHS: [&str; 12] = [
    "january",
    "february",
    "march",
    "april",
    "may",
    "june",
    "july",
    "august",
    "september",
    "october",
    "november",
    "december",
];

const ORDINAL_WORDS: [&str; 10] = [
    "first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth",
];

const DURATION_UNITS: &[&str] = &[
    "minute", "minutes", "hour", "hours", "day", "days", "week", "weeks", "month", "months",
    "year", "years",
];
const CURRENCY_PREFIX: &[&str] = &["$", "£", "€", "US$"];
const CURRENCY_SUFFIX: &[&str] = &["dollar", "dollars", "euro", "euros", "pound", "pounds"];
const CLOCK_SUFFIX: &[&str] = &["a.m", "p.m", "am", "pm"];

fn unit_word(w: &str) -> Option<u64> {
    Some(match w {
        "zero" => 0,
        "one" => 1,
        "two" => 2,
        "three" => 3,
        "four" => 4,
        "five" => 5,
        "six" => 6,
        "seven" => 7,
        "eight" => 8,
        "nine" => 9,
        "ten" => 10,
        "eleven" => 11,
        "twelve" => 12,
        "thirteen" => 13,
        "fourteen" => 14,
        "fifteen" => 15,
        "sixteen" => 16,
        "seventeen" => 17,
        "eighteen" => 18,
        "nineteen" => 19,
        _ => return None,
    })
}

fn tens_word(w: &str) -> Option<u64> {
    Some(match w {
        "twenty" => 20,
        "thirty" => 30,
        "forty" => 40,
        "fifty" => 50,
        "sixty" => 60,
        "seventy" => 70,
        "eighty" => 80,
        "ninety" => 90,
        _ => return None,
    })
}

/// Value of a single number-word token, including `twenty-one` forms.
fn simple_word(w: &str) -> Option<u64> {
    if let Some(v) = unit_word(w).or_else(|| tens_word(w)) {
        return Some(v);
    }
    let (tens, unit) = w.split_once('-')?;
    Some(tens_word(tens)? + unit_word(unit).filter(|&u| (1..10).contains(&u))?)
}

fn is_number_word(w: &str) -> bool {
    simple_word(w).is_some() || matches!(w, "hundred" | "thousand" | "million" | "billion")
}

/// Parses a run of English number words; `None` when the run is not a
/// well-formed number at or below 999,999.
pub(crate) fn parse_number_words(words: &[&str]) -> Option<u64> {
    let mut total = 0u64;
    let mut current = 0u64;
    let mut seen_thousand = false;
    let mut prev_was_scale = false;
    for (k, &w) in words.iter().enumerate() {
        match w {
            "and" => {
                if !prev_was_scale || k + 1 == words.len() {
                    return None;
                }
                continue;
            }
            "hundred" => {
                if current == 0 || current >= 100 {
                    return None;
                }
                current *= 100;
                prev_was_scale = true;
            }
            "thousand" => {
                if seen_thousand || current == 0 {
                    return None;
                }
                total = current * 1000;
                current = 0;
                seen_thousand = true;
                prev_was_scale = true;
            }
            _ => {
                let v = simple_word(w)?;
                // "twenty five" is fine, "five twenty" is not
                if !current.is_multiple_of(100)
                    && !(current.is_multiple_of(10) && current % 100 >= 20 && v < 10)
                {
                    return None;
                }
                if current % 100 >= 20 && v >= 10 {
                    return None;
                }
                current += v;
                prev_was_scale = false;
            }
        }
    }
    Some(total + current)
}

fn month_index(token: &Token) -> Option<u32> {
    let first_upper = token.text.chars().next().is_some_and(char::is_uppercase);
    if !first_upper {
        return None;
    }
    let lower = token.text.to_lowercase();
    MONTHS
        .iter()
        .position(|m| *m == lower)
        .map(|i| i as u32 + 1)
}

fn plain_int(token: &Token) -> Option<u64> {
    if token.text.chars().all(|c| c.is_ascii_digit()) && token.text.len() <= 9 {
        token.text.parse().ok()
    } else {
        None
    }
}

fn is_year(token: &Token) -> Option<i32> {
    if token.text.len() == 4 {
        plain_int(token)
            .filter(|y| (1000..=2100).contains(y))
            .map(|y| y as i32)
    } else {
        None
    }
}

fn is_day(token: &Token) -> Option<u32> {
    if token.text.len() <= 2 {
        plain_int(token)
            .filter(|d| (1..=31).contains(d))
            .map(|d| d as u32)
    } else {
        None
    }
}

fn lower(tokens: &[Token], i: Option<usize>) -> Option<String> {
    i.and_then(|i| tokens.get(i)).map(|t| t.text.to_lowercase())
}

/// Unit-driven type for a numeric candidate spanning `[s, e]`, following the
/// fixed priority order. `year` tells whether the candidate may be a year.
fn classify(tokens: &[Token], s: usize, e: usize, year: bool) -> NumberType {
    let prev = lower(tokens, s.checked_sub(1));
    let next = lower(tokens, Some(e + 1));
    let next2 = lower(tokens, Some(e + 2));
    let next_is = |set: &[&str]| next.as_deref().is_some_and(|n| set.contains(&n));
    let hyphen_unit = |set: &[&str]| {
        next.as_deref() == Some("-") && next2.as_deref().is_some_and(|n| set.contains(&n))
    };

    if next_is(&["%", "percent"])
        || (next.as_deref() == Some("per") && next2.as_deref() == Some("cent"))
    {
        NumberType::Percent
    } else if prev.as_deref().is_some_and(|p| {
        CURRENCY_PREFIX.contains(&p.to_uppercase().as_str()) || CURRENCY_PREFIX.contains(&p)
    }) || next_is(CURRENCY_SUFFIX)
    {
        NumberType::Money
    } else if next_is(&["yard", "yards"]) || hyphen_unit(&["yard", "yards"]) {
        NumberType::Yard
    } else if year {
        NumberType::Date
    } else if next_is(CLOCK_SUFFIX) {
        NumberType::Time
    } else if next_is(DURATION_UNITS) || hyphen_unit(DURATION_UNITS) {
        NumberType::Duration
    } else {
        NumberType::Number
    }
}

fn mention(span: (usize, usize), value: f64, ntype: NumberType) -> NumberMention {
    NumberMention {
        token_span: span,
        value,
        ntype,
        date: None,
    }
}

fn date_mention(span: (usize, usize), parts: DateParts) -> NumberMention {
    NumberMention {
        token_span: span,
        value: parts.projection(),
        ntype: NumberType::Date,
        date: Some(parts),
    }
}

/// Month-name date patterns starting at `i`; returns the mention and the
/// index one past its last token.
fn month_name_date(tokens: &[Token], i: usize) -> Option<(NumberMention, usize)> {
    let same_sentence = |a: usize, b: usize| {
        tokens
            .get(b)
            .is_some_and(|t| t.sentence_id == tokens[a].sentence_id)
    };
    let unit_follows = |e: usize| {
        !matches!(
            classify(tokens, e, e, false),
            NumberType::Number | NumberType::Duration
        )
    };
    // Month [Day] [Year]
    if let Some(month) = month_index(&tokens[i]) {
        if same_sentence(i, i + 1) {
            if let Some(day) = tokens.get(i + 1).and_then(is_day) {
                if same_sentence(i, i + 2) {
                    if let Some(year) = tokens.get(i + 2).and_then(is_year) {
                        if !unit_follows(i + 2) {
                            let parts = DateParts::new(Some(year), Some(month), Some(day));
                            return Some((date_mention((i, i + 2), parts), i + 3));
                        }
                    }
                }
                if !unit_follows(i + 1) {
                    let parts = DateParts::new(None, Some(month), Some(day));
                    return Some((date_mention((i, i + 1), parts), i + 2));
                }
            }
            if let Some(year) = tokens.get(i + 1).and_then(is_year) {
                if !unit_follows(i + 1) {
                    let parts = DateParts::new(Some(year), Some(month), None);
                    return Some((date_mention((i, i + 1), parts), i + 2));
                }
            }
        }
        return None;
    }
    // Day Month [Year]
    let day = is_day(&tokens[i])?;
    if !same_sentence(i, i + 1) {
        return None;
    }
    let month = tokens.get(i + 1).and_then(month_index)?;
    if same_sentence(i, i + 2) {
        if let Some(year) = tokens.get(i + 2).and_then(is_year) {
            if !unit_follows(i + 2) {
                let parts = DateParts::new(Some(year), Some(month), Some(day));
                return Some((date_mention((i, i + 2), parts), i + 3));
            }
        }
    }
    let parts = DateParts::new(None, Some(month), Some(day));
    Some((date_mention((i, i + 1), parts), i + 2))
}

/// Extracts typed number mentions, left to right, without overlaps.
pub fn extract_numbers(tokens: &[Token]) -> (Vec<NumberMention>, Vec<AnnotationWarning>) {
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let tok = &tokens[i];
        let text = tok.text.as_str();
        let low = text.to_lowercase();

        if let Some((m, next)) = month_name_date(tokens, i) {
            out.push(m);
            i = next;
            continue;
        }

        if let Some(c) = ORDINAL_DIGITS.captures(text) {
            if let Ok(v) = c[1].parse::<u64>() {
                out.push(mention((i, i), v as f64, NumberType::Ordinal));
            }
            i += 1;
            continue;
        }
        if let Some(pos) = ORDINAL_WORDS.iter().position(|w| *w == low) {
            out.push(mention((i, i), (pos + 1) as f64, NumberType::Ordinal));
            i += 1;
            continue;
        }
        if let Some(c) = CLOCK.captures(text) {
            let h: f64 = c[1].parse().unwrap_or(0.0);
            let m: f64 = c[2].parse().unwrap_or(0.0);
            if h < 24.0 && m < 60.0 {
                out.push(mention((i, i), h + m / 60.0, NumberType::Time));
            } else {
                warnings.push(AnnotationWarning::new(i, text, "clock value out of range"));
            }
            i += 1;
            continue;
        }
        if let Some(c) = MONTH_YEAR.captures(text) {
            let month: u32 = c[1].parse().unwrap_or(0);
            let year: i32 = c[2].parse().unwrap_or(0);
            if (1..=12).contains(&month) {
                out.push(date_mention(
                    (i, i),
                    DateParts::new(Some(year), Some(month), None),
                ));
            } else {
                warnings.push(AnnotationWarning::new(i, text, "month out of range"));
            }
            i += 1;
            continue;
        }
        if let Some(c) = MONTH_DAY_YEAR.captures(text) {
            let month: u32 = c[1].parse().unwrap_or(0);
            let day: u32 = c[2].parse().unwrap_or(0);
            let mut year: i32 = c[3].parse().unwrap_or(0);
            if c[3].len() == 2 {
                year += if year <= 30 { 2000 } else { 1900 };
            }
            if (1..=12).contains(&month) && (1..=31).contains(&day) {
                out.push(date_mention(
                    (i, i),
                    DateParts::new(Some(year), Some(month), Some(day)),
                ));
            } else {
                warnings.push(AnnotationWarning::new(i, text, "date field out of range"));
            }
            i += 1;
            continue;
        }

        if text.chars().any(|c| c.is_ascii_digit()) {
            if PLAIN_NUMBER.is_match(text) {
                let value: f64 = text.replace(',', "").parse().expect("regex-checked");
                let year = is_year(tok).is_some();
                let ntype = classify(tokens, i, i, year);
                if ntype == NumberType::Date {
                    let parts = DateParts::new(Some(value as i32), None, None);
                    out.push(date_mention((i, i), parts));
                } else {
                    out.push(mention((i, i), value, ntype));
                }
            } else if text
                .chars()
                .all(|c| c.is_ascii_digit() || c == ',' || c == '.')
            {
                warnings.push(AnnotationWarning::new(i, text, "unparseable number"));
            }
            i += 1;
            continue;
        }

        if is_number_word(&low) {
            // maximal run of number words, allowing "and" after a scale word
            let mut j = i;
            let mut words = vec![low.clone()];
            while j + 1 < tokens.len() && tokens[j + 1].sentence_id == tok.sentence_id {
                let w = tokens[j + 1].text.to_lowercase();
                let joining_and = w == "and"
                    && matches!(
                        words.last().map(String::as_str),
                        Some("hundred" | "thousand")
                    )
                    && tokens
                        .get(j + 2)
                        .is_some_and(|t| simple_word(&t.text.to_lowercase()).is_some());
                if is_number_word(&w) || joining_and {
                    words.push(w);
                    j += 1;
                } else {
                    break;
                }
            }
            let refs: Vec<&str> = words.iter().map(String::as_str).collect();
            if refs.iter().any(|w| matches!(*w, "million" | "billion")) {
                warnings.push(AnnotationWarning::new(
                    i,
                    &refs.join(" "),
                    "number words beyond 999,999 are not supported",
                ));
            } else if let Some(v) = parse_number_words(&refs) {
                let ntype = classify(tokens, i, j, false);
                out.push(mention((i, j), v as f64, ntype));
            } else {
                warnings.push(AnnotationWarning::new(
                    i,
                    &refs.join(" "),
                    "malformed number words",
                ));
            }
            i = j + 1;
            continue;
        }
        i += 1;
    }
    (out, warnings)
}
