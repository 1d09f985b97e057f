//! Temporal-QA corpora and L1 month/year arithmetic.
//!
//! Corpora are line-delimited JSON, one record per line:
//!
//! ```text
//! {"id": "l1-000001", "language": "en", "level": "L1", "question": "...", "answers": ["Mar, 1192"]}
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::RangeInclusive;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed JSON: {message}")]
    MalformedJson { line: usize, message: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: field `{field}` is empty")]
    EmptyField { line: usize, field: &'static str },
    #[error("line {line}: language `{found}` does not match expected `{expected}`")]
    LanguageMismatch { line: usize, expected: String, found: String },
    #[error("line {line}: level {found} does not match expected {expected}")]
    LevelMismatch { line: usize, expected: TaskLevel, found: TaskLevel },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: {source}")]
    Io { line: usize, source: std::io::Error },
    #[error("unknown split name `{0}`")]
    UnknownSplit(String),
    #[error("unknown task level `{0}`")]
    UnknownLevel(String),
    #[error("cannot parse month/year from `{0}`")]
    BadMonthYear(String),
    #[error("result of month arithmetic falls before year 1")]
    BeforeYearOne,
    #[error("empty year range")]
    EmptyYearRange,
    #[error("unsupported language `{0}`")]
    UnsupportedLanguage(String),
}

/// Time-time (L1), time-event (L2) or event-event (L3).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskLevel {
    L1,
    L2,
    L3,
}

impl TaskLevel {
    pub const ALL: [TaskLevel; 3] = [TaskLevel::L1, TaskLevel::L2, TaskLevel::L3];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskLevel::L1 => "L1",
            TaskLevel::L2 => "L2",
            TaskLevel::L3 => "L3",
        }
    }
}

impl fmt::Display for TaskLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskLevel {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "L1" => Ok(TaskLevel::L1),
            "L2" => Ok(TaskLevel::L2),
            "L3" => Ok(TaskLevel::L3),
            _ => Err(CorpusError::UnknownLevel(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(SplitName::Train),
            "dev" => Ok(SplitName::Dev),
            "test" => Ok(SplitName::Test),
            _ => Err(CorpusError::UnknownSplit(s.to_string())),
        }
    }
}

/// One temporal question with its gold answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub language: String,
    pub level: TaskLevel,
    pub question: String,
    pub answers: Vec<String>,
}

impl QueryRecord {
    /// Parses the L1 answers of this record. L2/L3 records carry entity
    /// answers and are never date-parsed.
    pub fn month_year_answers(&self) -> Vec<Result<MonthYear, CorpusError>> {
        self.answers
            .iter()
            .map(|a| MonthYear::parse(a, &self.language))
            .collect()
    }
}

/// A validated corpus split: every record shares language, level and split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplit {
    pub language: String,
    pub level: TaskLevel,
    pub split: SplitName,
    pub records: Vec<QueryRecord>,
}

impl CorpusSplit {
    pub fn new(language: impl Into<String>, level: TaskLevel, split: SplitName) -> Self {
        Self { language: language.into(), level, split, records: Vec::new() }
    }

    /// Pool size (`m` for the rich pool, `n` for the low-resource pool).
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&QueryRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Id to record lookup table.
    pub fn index(&self) -> BTreeMap<&str, &QueryRecord> {
        self.records.iter().map(|r| (r.id.as_str(), r)).collect()
    }

    /// Writes the split as JSONL. `parse_corpus` on the output yields `self`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    language: Option<String>,
    level: Option<TaskLevel>,
    question: Option<String>,
    answers: Option<Vec<String>>,
}

/// Parses and validates a JSONL corpus. Any bad line rejects the whole input.
/// Blank lines are skipped.
pub fn parse_corpus<R: BufRead>(
    reader: R,
    expected_language: &str,
    expected_level: TaskLevel,
    split: SplitName,
) -> Result<CorpusSplit, CorpusError> {
    let mut out = CorpusSplit::new(expected_language, expected_level, split);
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io { line: line_no, source })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| {
            CorpusError::MalformedJson { line: line_no, message: e.to_string() }
        })?;
        let missing = |field| CorpusError::MissingField { line: line_no, field };
        let id = raw.id.ok_or_else(|| missing("id"))?;
        let question = raw.question.ok_or_else(|| missing("question"))?;
        let answers = raw.answers.ok_or_else(|| missing("answers"))?;
        let level = raw.level.ok_or_else(|| missing("level"))?;
        let language = raw.language.ok_or_else(|| missing("language"))?;

        if id.is_empty() {
            return Err(CorpusError::EmptyField { line: line_no, field: "id" });
        }
        if question.trim().is_empty() {
            return Err(CorpusError::EmptyField { line: line_no, field: "question" });
        }
        if answers.is_empty() {
            return Err(CorpusError::EmptyField { line: line_no, field: "answers" });
        }
        if !language.eq_ignore_ascii_case(expected_language) {
            return Err(CorpusError::LanguageMismatch {
                line: line_no,
                expected: expected_language.to_string(),
                found: language,
            });
        }
        if level != expected_level {
            return Err(CorpusError::LevelMismatch {
                line: line_no,
                expected: expected_level,
                found: level,
            });
        }
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId { line: line_no, id });
        }
        out.records.push(QueryRecord { id, language, level, question, answers });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub count: usize,
    pub per_level: BTreeMap<TaskLevel, usize>,
    /// Earliest and latest answer year over parseable L1 answers.
    pub year_range: Option<(i64, i64)>,
    /// L1 answers that could not be read as a month/year.
    pub unparsed_answers: usize,
}

pub fn corpus_stats(split: &CorpusSplit) -> CorpusStats {
    let mut per_level = BTreeMap::new();
    let mut year_range: Option<(i64, i64)> = None;
    let mut unparsed = 0;
    for r in &split.records {
        *per_level.entry(r.level).or_insert(0) += 1;
        if r.level != TaskLevel::L1 {
            continue;
        }
        for parsed in r.month_year_answers() {
            match parsed {
                Ok(my) => {
                    year_range = Some(match year_range {
                        None => (my.year, my.year),
                        Some((lo, hi)) => (lo.min(my.year), hi.max(my.year)),
                    });
                }
                Err(_) => unparsed += 1,
            }
        }
    }
    CorpusStats { count: split.records.len(), per_level, year_range, unparsed_answers: unparsed }
}

// ---------------------------------------------------------------------------
// Month/year values

/// A calendar month. Ordering is chronological.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MonthYear {
    pub year: i64,
    pub month: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    After,
    Before,
}

const ENGLISH_FULL: [&str; 12] = [
    "january", "february", "march", "april", "may", "june", "july", "august", "september",
    "october", "november", "december",
];
const ENGLISH_SHORT: [&str; 12] =
    ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"];

// (token, month) pairs per language. Tokens are lowercase.
const MONTHS_EN: &[(&str, u8)] = &[
    ("january", 1), ("jan", 1), ("february", 2), ("feb", 2), ("march", 3), ("mar", 3),
    ("april", 4), ("apr", 4), ("may", 5), ("june", 6), ("jun", 6), ("july", 7), ("jul", 7),
    ("august", 8), ("aug", 8), ("september", 9), ("sep", 9), ("sept", 9), ("october", 10),
    ("oct", 10), ("november", 11), ("nov", 11), ("december", 12), ("dec", 12),
];
const MONTHS_FR: &[(&str, u8)] = &[
    ("janvier", 1), ("janv", 1), ("février", 2), ("fevrier", 2), ("févr", 2), ("fevr", 2),
    ("mars", 3), ("avril", 4), ("avr", 4), ("mai", 5), ("juin", 6), ("juillet", 7),
    ("juil", 7), ("août", 8), ("aout", 8), ("septembre", 9), ("sept", 9), ("octobre", 10),
    ("oct", 10), ("novembre", 11), ("nov", 11), ("décembre", 12), ("decembre", 12),
    ("déc", 12), ("dec", 12),
];
const MONTHS_DE: &[(&str, u8)] = &[
    ("januar", 1), ("jan", 1), ("februar", 2), ("feb", 2), ("märz", 3), ("maerz", 3),
    ("mär", 3), ("april", 4), ("apr", 4), ("mai", 5), ("juni", 6), ("jun", 6), ("juli", 7),
    ("jul", 7), ("august", 8), ("aug", 8), ("september", 9), ("sep", 9), ("sept", 9),
    ("oktober", 10), ("okt", 10), ("november", 11), ("nov", 11), ("dezember", 12),
    ("dez", 12),
];
const MONTHS_RO: &[(&str, u8)] = &[
    ("ianuarie", 1), ("ian", 1), ("februarie", 2), ("feb", 2), ("martie", 3), ("mar", 3),
    ("aprilie", 4), ("apr", 4), ("mai", 5), ("iunie", 6), ("iun", 6), ("iulie", 7),
    ("iul", 7), ("august", 8), ("aug", 8), ("septembrie", 9), ("sep", 9), ("sept", 9),
    ("octombrie", 10), ("oct", 10), ("noiembrie", 11), ("noi", 11), ("nov", 11),
    ("decembrie", 12), ("dec", 12),
];

/// Canonical full month names used when rendering questions per language.
const NAMES_FR: [&str; 12] = [
    "janvier", "février", "mars", "avril", "mai", "juin", "juillet", "août", "septembre",
    "octobre", "novembre", "décembre",
];
const NAMES_DE: [&str; 12] = [
    "Januar", "Februar", "März", "April", "Mai", "Juni", "Juli", "August", "September",
    "Oktober", "November", "Dezember",
];
const NAMES_RO: [&str; 12] = [
    "ianuarie", "februarie", "martie", "aprilie", "mai", "iunie", "iulie", "august",
    "septembrie", "octombrie", "noiembrie", "decembrie",
];

fn primary_subtag(language: &str) -> String {
    language.split(['-', '_']).next().unwrap_or("").to_ascii_lowercase()
}

fn month_table(language: &str) -> Option<&'static [(&'static str, u8)]> {
    match primary_subtag(language).as_str() {
        "en" => Some(MONTHS_EN),
        "fr" => Some(MONTHS_FR),
        "de" => Some(MONTHS_DE),
        "ro" => Some(MONTHS_RO),
        _ => None,
    }
}

/// Looks up a month token (case-insensitive) in the table for `language`.
pub fn lookup_month(token: &str, language: &str) -> Option<u8> {
    let token = token.to_lowercase();
    month_table(language)?.iter().find(|(name, _)| *name == token).map(|&(_, m)| m)
}

/// Lowercase English month name for `month` in 1..=12.
pub fn english_month_name(month: u8) -> &'static str {
    ENGLISH_FULL[(month - 1) as usize]
}

impl MonthYear {
    pub fn new(year: i64, month: u8) -> Result<Self, CorpusError> {
        if !(1..=12).contains(&month) || year < 1 {
            return Err(CorpusError::BadMonthYear(format!("{month}/{year}")));
        }
        Ok(Self { year, month })
    }

    fn ordinal(self) -> i64 {
        self.year * 12 + i64::from(self.month) - 1
    }

    fn from_ordinal(ord: i64) -> Result<Self, CorpusError> {
        let year = ord.div_euclid(12);
        let month = ord.rem_euclid(12) as u8 + 1;
        if year < 1 {
            return Err(CorpusError::BeforeYearOne);
        }
        Ok(Self { year, month })
    }

    /// Parses `"Mar, 1192"`, `"martie 1192"`, `"1192 März"` and similar, using
    /// the month table of `language`. Unknown month names are rejected.
    pub fn parse(text: &str, language: &str) -> Result<Self, CorpusError> {
        let bad = || CorpusError::BadMonthYear(text.to_string());
        let mut month = None;
        let mut year = None;
        for token in text
            .split(|c: char| c.is_whitespace() || c == ',' || c == '.' || c == '/')
            .filter(|t| !t.is_empty())
        {
            if token.chars().all(|c| c.is_ascii_digit()) {
                if year.is_some() || token.len() > 6 {
                    return Err(bad());
                }
                year = Some(token.parse::<i64>().map_err(|_| bad())?);
            } else {
                if month.is_some() {
                    return Err(bad());
                }
                month = Some(lookup_month(token, language).ok_or_else(bad)?);
            }
        }
        match (month, year) {
            (Some(m), Some(y)) => Self::new(y, m).map_err(|_| bad()),
            _ => Err(bad()),
        }
    }

    /// Renders the month in `language`, e.g. `"Mar, 1192"` for English.
    pub fn render(self, language: &str) -> Result<String, CorpusError> {
        let i = (self.month - 1) as usize;
        Ok(match primary_subtag(language).as_str() {
            "en" => format!("{}, {}", ENGLISH_SHORT[i], self.year),
            "fr" => format!("{} {}", NAMES_FR[i], self.year),
            "de" => format!("{} {}", NAMES_DE[i], self.year),
            "ro" => format!("{} {}", NAMES_RO[i], self.year),
            _ => return Err(CorpusError::UnsupportedLanguage(language.to_string())),
        })
    }
}

impl fmt::Display for MonthYear {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, {}", ENGLISH_SHORT[(self.month - 1) as usize], self.year)
    }
}

/// Shifts `anchor` by `years` and `months` in `direction`.
pub fn l1_offset(
    anchor: MonthYear,
    years: u32,
    months: u32,
    direction: Direction,
) -> Result<MonthYear, CorpusError> {
    let delta = 12 * i64::from(years) + i64::from(months);
    let ord = match direction {
        Direction::After => anchor.ordinal() + delta,
        Direction::Before => anchor.ordinal() - delta,
    };
    MonthYear::from_ordinal(ord)
}

// ---------------------------------------------------------------------------
// Synthetic L1 data

/// Parameters of one generated L1 question.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct L1Params {
    pub anchor: MonthYear,
    pub years: u32,
    pub months: u32,
    pub direction: Direction,
}

impl L1Params {
    pub fn answer(&self) -> Result<MonthYear, CorpusError> {
        l1_offset(self.anchor, self.years, self.months, self.direction)
    }

    /// Question text in `language` (en, fr, de, ro).
    pub fn question(&self, language: &str) -> Result<String, CorpusError> {
        let anchor = self.anchor.render(language)?;
        let (y, m) = (self.years, self.months);
        Ok(match (primary_subtag(language).as_str(), self.direction) {
            ("en", Direction::After) => {
                format!("What is the time {y} years and {m} months after {anchor}")
            }
            ("en", Direction::Before) => {
                format!("What is the time {y} years and {m} months before {anchor}")
            }
            ("fr", Direction::After) => format!("Quelle heure est-il {y} ans et {m} mois après {anchor}"),
            ("fr", Direction::Before) => format!("Quelle heure est-il {y} ans et {m} mois avant {anchor}"),
            ("de", Direction::After) => format!("Was ist die Zeit {y} Jahre und {m} Monate nach {anchor}"),
            ("de", Direction::Before) => format!("Was ist die Zeit {y} Jahre und {m} Monate vor {anchor}"),
            ("ro", Direction::After) => format!("Care este timpul cu {y} ani și {m} luni după {anchor}"),
            ("ro", Direction::Before) => {
                format!("Care este timpul cu {y} ani și {m} luni înainte de {anchor}")
            }
            _ => return Err(CorpusError::UnsupportedLanguage(language.to_string())),
        })
    }

    pub fn to_record(&self, id: String, language: &str) -> Result<QueryRecord, CorpusError> {
        Ok(QueryRecord {
            id,
            language: language.to_string(),
            level: TaskLevel::L1,
            question: self.question(language)?,
            answers: vec![self.answer()?.render(language)?],
        })
    }
}

/// Draws `count` question parameters with anchors in `years`. Offsets are
/// 0-19 years and 0-11 months; a "before" offset that would cross year 1 is
/// flipped to "after".
pub fn synth_l1_params(
    count: usize,
    years: RangeInclusive<i64>,
    seed: u64,
) -> Result<Vec<L1Params>, CorpusError> {
    if years.is_empty() || *years.start() < 1 {
        return Err(CorpusError::EmptyYearRange);
    }
    let mut rng = rng::seeded(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let anchor = MonthYear::new(rng.random_range(years.clone()), rng.random_range(1..=12))?;
        let y = rng.random_range(0..20u32);
        let m = rng.random_range(0..12u32);
        let mut direction = if rng.random_bool(0.5) { Direction::After } else { Direction::Before };
        if l1_offset(anchor, y, m, direction).is_err() {
            direction = Direction::After;
        }
        out.push(L1Params { anchor, years: y, months: m, direction });
    }
    Ok(out)
}

/// Generates an English L1 train split of `count` records.
pub fn synth_l1_corpus(
    count: usize,
    years: RangeInclusive<i64>,
    seed: u64,
) -> Result<CorpusSplit, CorpusError> {
    synth_l1_corpus_in(count, years, seed, "en", "l1-")
}

/// Like [`synth_l1_corpus`] but rendered in `language` with ids
/// `{id_prefix}{index:06}`. Equal seeds give parallel corpora across languages.
pub fn synth_l1_corpus_in(
    count: usize,
    years: RangeInclusive<i64>,
    seed: u64,
    language: &str,
    id_prefix: &str,
) -> Result<CorpusSplit, CorpusError> {
    let params = synth_l1_params(count, years, seed)?;
    let mut split = CorpusSplit::new(language, TaskLevel::L1, SplitName::Train);
    for (i, p) in params.iter().enumerate() {
        split.records.push(p.to_record(format!("{id_prefix}{i:06}"), language)?);
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn my(year: i64, month: u8) -> MonthYear {
        MonthYear::new(year, month).unwrap()
    }

    const TWO_L1: &str = concat!(
        r#"{"id":"a","language":"en","level":"L1","question":"What is the time 6 years and 4 months after Nov, 1185","answers":["Mar, 1192"]}"#,
        "\n",
        r#"{"id":"b","language":"en","level":"L1","question":"What is the time 1 years and 0 months before Jan, 1200","answers":["Jan, 1199"]}"#,
        "\n"
    );

    #[test]
    fn parses_two_records() {
        let split = parse_corpus(TWO_L1.as_bytes(), "en", TaskLevel::L1, SplitName::Train).unwrap();
        assert_eq!(split.len(), 2);
        assert_eq!(split.records[0].answers, vec!["Mar, 1192"]);
    }

    #[test]
    fn missing_answers_names_line() {
        let input = format!(
            "{}\n{}\n",
            r#"{"id":"a","language":"en","level":"L1","question":"q","answers":["x"]}"#,
            r#"{"id":"b","language":"en","level":"L1","question":"q"}"#
        );
        let err = parse_corpus(input.as_bytes(), "en", TaskLevel::L1, SplitName::Dev).unwrap_err();
        assert!(matches!(err, CorpusError::MissingField { line: 2, field: "answers" }), "{err}");
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn duplicate_id_rejected() {
        let line = r#"{"id":"a","language":"en","level":"L1","question":"q","answers":["x"]}"#;
        let input = format!("{line}\n{line}\n");
        let err = parse_corpus(input.as_bytes(), "en", TaskLevel::L1, SplitName::Test).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { line: 2, .. }));
    }

    #[test]
    fn mismatches_and_malformed_rejected() {
        let l2 = r#"{"id":"a","language":"en","level":"L2","question":"q","answers":["x"]}"#;
        assert!(matches!(
            parse_corpus(l2.as_bytes(), "en", TaskLevel::L1, SplitName::Train),
            Err(CorpusError::LevelMismatch { line: 1, .. })
        ));
        assert!(matches!(
            parse_corpus(l2.as_bytes(), "fr", TaskLevel::L2, SplitName::Train),
            Err(CorpusError::LanguageMismatch { line: 1, .. })
        ));
        assert!(matches!(
            parse_corpus("{not json".as_bytes(), "en", TaskLevel::L1, SplitName::Train),
            Err(CorpusError::MalformedJson { line: 1, .. })
        ));
        let empty = r#"{"id":"a","language":"en","level":"L1","question":"q","answers":[]}"#;
        assert!(matches!(
            parse_corpus(empty.as_bytes(), "en", TaskLevel::L1, SplitName::Train),
            Err(CorpusError::EmptyField { field: "answers", .. })
        ));
    }

    #[test]
    fn stats_empty_and_year_range() {
        let empty = CorpusSplit::new("en", TaskLevel::L1, SplitName::Train);
        let s = corpus_stats(&empty);
        assert_eq!(s.count, 0);
        assert_eq!(s.year_range, None);

        // Hand-scanned fixture: years 1232, 1190, 1205.
        let input = concat!(
            r#"{"id":"a","language":"en","level":"L1","question":"q1","answers":["May, 1232"]}"#, "\n",
            r#"{"id":"b","language":"en","level":"L1","question":"q2","answers":["Jan, 1190"]}"#, "\n",
            r#"{"id":"c","language":"en","level":"L1","question":"q3","answers":["October 1205"]}"#, "\n",
        );
        let split = parse_corpus(input.as_bytes(), "en", TaskLevel::L1, SplitName::Train).unwrap();
        let s = corpus_stats(&split);
        assert_eq!(s.count, 3);
        assert_eq!(s.per_level[&TaskLevel::L1], 3);
        assert_eq!(s.year_range, Some((1190, 1232)));
        assert_eq!(s.unparsed_answers, 0);
    }

    #[test]
    fn worked_example_offset() {
        let r = l1_offset(my(1185, 11), 6, 4, Direction::After).unwrap();
        assert_eq!(r, my(1192, 3));
        assert_eq!(r.to_string(), "Mar, 1192");
    }

    /// Steps one month at a time; independent of the ordinal arithmetic.
    fn brute_force_offset(anchor: MonthYear, years: u32, months: u32, dir: Direction) -> MonthYear {
        let (mut y, mut m) = (anchor.year, anchor.month);
        for _ in 0..(12 * years + months) {
            match dir {
                Direction::After => {
                    if m == 12 { m = 1; y += 1; } else { m += 1; }
                }
                Direction::Before => {
                    if m == 1 { m = 12; y -= 1; } else { m -= 1; }
                }
            }
        }
        MonthYear { year: y, month: m }
    }

    #[test]
    fn romanian_example_before() {
        let anchor = MonthYear::parse("august 1240", "ro").unwrap();
        let r = l1_offset(anchor, 8, 3, Direction::Before).unwrap();
        assert_eq!(r, my(1232, 5));
        assert_eq!(r, brute_force_offset(anchor, 8, 3, Direction::Before));
    }

    #[test]
    fn zero_offset_is_identity_and_year_one_guard() {
        assert_eq!(l1_offset(my(900, 6), 0, 0, Direction::After).unwrap(), my(900, 6));
        assert!(matches!(
            l1_offset(my(1, 3), 0, 3, Direction::Before),
            Err(CorpusError::BeforeYearOne)
        ));
        assert_eq!(l1_offset(my(1, 3), 0, 2, Direction::Before).unwrap(), my(1, 1));
    }

    #[test]
    fn month_parsing_per_language() {
        assert_eq!(MonthYear::parse("Nov, 1185", "en").unwrap(), my(1185, 11));
        assert_eq!(MonthYear::parse("mars 1192", "fr").unwrap(), my(1192, 3));
        assert_eq!(MonthYear::parse("MÄRZ 1192", "de").unwrap(), my(1192, 3));
        assert_eq!(MonthYear::parse("1192 martie", "ro").unwrap(), my(1192, 3));
        assert_eq!(MonthYear::parse("août 1500", "fr-FR").unwrap(), my(1500, 8));
        assert!(MonthYear::parse("Brumaire 1192", "fr").is_err());
        assert!(MonthYear::parse("martie 1192", "en").is_err());
        assert!(MonthYear::parse("Mar", "en").is_err());
        assert!(MonthYear::parse("Mar 12 1192", "en").is_err());
    }

    #[test]
    fn synth_corpus_deterministic_and_self_consistent() {
        assert!(synth_l1_corpus(0, 1000..=1100, 1).unwrap().is_empty());
        let a = synth_l1_corpus(100, 1000..=2000, 7).unwrap();
        let b = synth_l1_corpus(100, 1000..=2000, 7).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        let params = synth_l1_params(100, 1000..=2000, 7).unwrap();
        for (r, p) in a.records.iter().zip(&params) {
            let expected = l1_offset(p.anchor, p.years, p.months, p.direction).unwrap();
            assert_eq!(MonthYear::parse(&r.answers[0], "en").unwrap(), expected);
            assert_eq!(r.question, p.question("en").unwrap());
        }
        assert!(matches!(
            synth_l1_corpus(1, 10..=5, 1),
            Err(CorpusError::EmptyYearRange)
        ));
    }

    #[test]
    fn synth_parallel_languages_share_answers() {
        let en = synth_l1_corpus_in(20, 1100..=1300, 3, "en", "en-").unwrap();
        let ro = synth_l1_corpus_in(20, 1100..=1300, 3, "ro", "ro-").unwrap();
        for (a, b) in en.records.iter().zip(&ro.records) {
            assert_eq!(
                MonthYear::parse(&a.answers[0], "en").unwrap(),
                MonthYear::parse(&b.answers[0], "ro").unwrap()
            );
        }
        let text = ro.to_jsonl();
        let back = parse_corpus(&text[..], "ro", TaskLevel::L1, SplitName::Train).unwrap();
        assert_eq!(back, ro);
    }

    #[test]
    fn full_scale_train_count() {
        let split = synth_l1_corpus(400_000, 1014..=2022, 11).unwrap();
        assert_eq!(corpus_stats(&split).count, 400_000);
    }

    fn arb_month_year() -> impl Strategy<Value = MonthYear> {
        (1i64..5000, 1u8..=12).prop_map(|(y, m)| MonthYear { year: y, month: m })
    }

    proptest! {
        #[test]
        fn offset_round_trip(x in arb_month_year(), y in 0u32..500, m in 0u32..400) {
            let fwd = l1_offset(x, y, m, Direction::After).unwrap();
            prop_assert_eq!(l1_offset(fwd, y, m, Direction::Before).unwrap(), x);
        }

        #[test]
        fn offset_matches_brute_force(x in arb_month_year(), y in 0u32..30, m in 0u32..30) {
            prop_assert_eq!(
                l1_offset(x, y, m, Direction::After).unwrap(),
                brute_force_offset(x, y, m, Direction::After)
            );
        }

        #[test]
        fn offset_monotone(x in arb_month_year(), a in 0u32..1000, b in 0u32..1000) {
            prop_assume!(a != b);
            let fa = l1_offset(x, 0, a, Direction::After).unwrap();
            let fb = l1_offset(x, 0, b, Direction::After).unwrap();
            prop_assert_eq!(a < b, fa < fb);
        }

        #[test]
        fn serialize_parse_identity(n in 0usize..30, seed in any::<u64>()) {
            let split = synth_l1_corpus(n, 1..=3000, seed).unwrap();
            let back = parse_corpus(&split.to_jsonl()[..], "en", TaskLevel::L1, SplitName::Train).unwrap();
            prop_assert_eq!(back, split);
        }
    }
}
