//! Tokenization and rule-based extraction of typed numbers and entities.

mod entities;
mod io;
mod numbers;
mod tokenize;

use serde::{Deserialize, Serialize};

pub use entities::extract_entities;
pub use io::{load_annotations, parse_annotations, save_annotations, to_json_string};
pub use numbers::extract_numbers;
pub use tokenize::tokenize;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
    pub sentence_id: usize,
}

/// The eight number types. Declaration order is the relation index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum NumberType {
    Number,
    Percent,
    Money,
    Time,
    Date,
    Duration,
    Ordinal,
    Yard,
}

impl NumberType {
    pub const ALL: [NumberType; 8] = [
        NumberType::Number,
        NumberType::Percent,
        NumberType::Money,
        NumberType::Time,
        NumberType::Date,
        NumberType::Duration,
        NumberType::Ordinal,
        NumberType::Yard,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NumberType::Number => "NUMBER",
            NumberType::Percent => "PERCENT",
            NumberType::Money => "MONEY",
            NumberType::Time => "TIME",
            NumberType::Date => "DATE",
            NumberType::Duration => "DURATION",
            NumberType::Ordinal => "ORDINAL",
            NumberType::Yard => "YARD",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

/// Calendar fields of a date mention; absent fields default to 1 in the
/// scalar projection and the year to 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateParts {
    pub year: Option<i32>,
    pub month: Option<u32>,
    pub day: Option<u32>,
}

impl DateParts {
    pub fn new(year: Option<i32>, month: Option<u32>, day: Option<u32>) -> Self {
        Self { year, month, day }
    }

    pub fn triple(&self) -> (i32, u32, u32) {
        (
            self.year.unwrap_or(0),
            self.month.unwrap_or(1),
            self.day.unwrap_or(1),
        )
    }

    /// `year * 10000 + month * 100 + day`, used for equality and ordering.
    pub fn projection(&self) -> f64 {
        let (y, m, d) = self.triple();
        y as f64 * 10000.0 + m as f64 * 100.0 + d as f64
    }

    /// The finest field written in the text: day, else month, else year.
    pub fn finest_field(&self) -> f64 {
        self.day
            .map(f64::from)
            .or(self.month.map(f64::from))
            .or(self.year.map(f64::from))
            .unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumberMention {
    /// Inclusive `(first, last)` token indices.
    pub token_span: (usize, usize),
    pub value: f64,
    pub ntype: NumberType,
    pub date: Option<DateParts>,
}

impl NumberMention {
    /// Operand used by signed-sum arithmetic. Dates contribute their finest
    /// written field so that `04/1977 - 02/1977` counts months.
    pub fn arithmetic_value(&self) -> f64 {
        match (&self.ntype, &self.date) {
            (NumberType::Date, Some(parts)) => parts.finest_field(),
            _ => self.value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub token_span: (usize, usize),
}

impl EntityMention {
    pub const LABEL: &'static str = "ENTITY";

    pub fn label(&self) -> &'static str {
        Self::LABEL
    }
}

/// A token span that looked numeric but could not be typed or parsed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationWarning {
    pub token_index: usize,
    pub text: String,
    pub reason: String,
}

impl AnnotationWarning {
    pub(crate) fn new(token_index: usize, text: &str, reason: &str) -> Self {
        Self {
            token_index,
            text: text.to_string(),
            reason: reason.to_string(),
        }
    }
}

/// Tokens and mentions of a single text.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TextAnnotation {
    pub tokens: Vec<Token>,
    pub numbers: Vec<NumberMention>,
    pub entities: Vec<EntityMention>,
}

impl TextAnnotation {
    pub fn span_text(&self, span: (usize, usize)) -> String {
        self.tokens[span.0..=span.1]
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedPassage {
    pub question: TextAnnotation,
    pub passage: TextAnnotation,
}

impl AnnotatedPassage {
    pub fn question_tokens(&self) -> &[Token] {
        &self.question.tokens
    }

    pub fn passage_tokens(&self) -> &[Token] {
        &self.passage.tokens
    }

    /// Checks every structural invariant; the error names the offending span.
    pub fn validate(&self) -> crate::Result<()> {
        io::validate_text("question", &self.question)?;
        io::validate_text("passage", &self.passage)
    }
}

/// Runs the full rule pipeline on one text.
pub fn annotate_text(text: &str) -> (TextAnnotation, Vec<AnnotationWarning>) {
    let tokens = tokenize(text);
    let (numbers, warnings) = extract_numbers(&tokens);
    let entities = extract_entities(&tokens, &numbers);
    (
        TextAnnotation {
            tokens,
            numbers,
            entities,
        },
        warnings,
    )
}

/// Annotates a question/passage pair.
pub fn annotate(question: &str, passage: &str) -> (AnnotatedPassage, Vec<AnnotationWarning>) {
    let (q, mut wq) = annotate_text(question);
    let (p, wp) = annotate_text(passage);
    wq.extend(wp);
    (
        AnnotatedPassage {
            question: q,
            passage: p,
        },
        wq,
    )
}
