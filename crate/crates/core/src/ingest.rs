//! Event extraction from device logs.
//!
//! A log line is a timestamp followed by free text. The rules file gives the
//! timestamp format and an ordered list of `{event, pattern}` pairs; the
//! first pattern that matches the text names the event.
//!
//! ```toml
//! timestamp_format = "%Y-%m-%dT%H:%M:%S"
//!
//! [[rule]]
//! event = "E1"
//! pattern = "clock drift .* exceed"
//! ```

use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;
use std::thread;
use std::time::Duration;

use chrono::{NaiveDateTime, TimeDelta};
use regex::Regex;
use serde::Deserialize;
use thiserror::Error;

use crate::model::{EventFailureMatrix, EventId, FailureId, MatrixError};

pub const DEFAULT_TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// How long follow mode sleeps at end of input before polling again.
pub const FOLLOW_POLL: Duration = Duration::from_millis(100);

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("rules file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("rule {index} for event {event}: {source}")]
    Pattern {
        index: usize,
        event: String,
        #[source]
        source: regex::Error,
    },
    #[error("rule {index}: {source}")]
    Event {
        index: usize,
        #[source]
        source: MatrixError,
    },
    #[error("timestamp format is empty")]
    EmptyFormat,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct EventRule {
    pub event: EventId,
    pub label: String,
    pub pattern: Regex,
}

#[derive(Debug, Clone)]
pub struct RuleSet {
    timestamp_format: String,
    timestamp_tokens: usize,
    rules: Vec<EventRule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRules {
    timestamp_format: Option<String>,
    #[serde(default, rename = "rule")]
    rules: Vec<RawRule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    event: String,
    pattern: String,
}

impl RuleSet {
    /// Compiles `(event label, pattern)` pairs against the matrix's events.
    pub fn new<S: AsRef<str>>(
        m: &EventFailureMatrix,
        timestamp_format: &str,
        rules: &[(S, S)],
    ) -> Result<Self, IngestError> {
        let timestamp_tokens = timestamp_format.split_whitespace().count();
        if timestamp_tokens == 0 {
            return Err(IngestError::EmptyFormat);
        }
        let rules = rules
            .iter()
            .enumerate()
            .map(|(i, (label, pattern))| {
                let label = label.as_ref();
                let event = m
                    .event(label)
                    .map_err(|source| IngestError::Event { index: i + 1, source })?;
                let pattern = Regex::new(pattern.as_ref()).map_err(|source| IngestError::Pattern {
                    index: i + 1,
                    event: label.to_string(),
                    source,
                })?;
                Ok(EventRule {
                    event,
                    label: label.to_string(),
                    pattern,
                })
            })
            .collect::<Result<_, IngestError>>()?;
        Ok(Self {
            timestamp_format: timestamp_format.to_string(),
            timestamp_tokens,
            rules,
        })
    }

    pub fn from_toml(text: &str, m: &EventFailureMatrix) -> Result<Self, IngestError> {
        let raw: RawRules = toml::from_str(text)?;
        let pairs: Vec<(String, String)> = raw.rules.into_iter().map(|r| (r.event, r.pattern)).collect();
        Self::new(
            m,
            raw.timestamp_format.as_deref().unwrap_or(DEFAULT_TIMESTAMP_FORMAT),
            &pairs,
        )
    }

    pub fn load(path: &Path, m: &EventFailureMatrix) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, m)
    }

    pub fn timestamp_format(&self) -> &str {
        &self.timestamp_format
    }

    pub fn rules(&self) -> &[EventRule] {
        &self.rules
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    /// `None` when the leading tokens do not parse with the configured format.
    pub timestamp: Option<NaiveDateTime>,
    pub message: String,
    pub event: Option<EventId>,
}

impl LogRecord {
    pub fn timestamp_ok(&self) -> bool {
        self.timestamp.is_some()
    }
}

/// Splits off the timestamp and applies the first matching rule. Never
/// fails: an unparsable timestamp leaves the whole line as the message.
pub fn parse_line(line: &str, rules: &RuleSet) -> LogRecord {
    let line = line.trim_end_matches(['\r', '\n']);
    let mut head = line.trim_start();
    let mut stamp_end = 0;
    for _ in 0..rules.timestamp_tokens {
        let token_start = head.len() - head.trim_start().len();
        let rest = &head[token_start..];
        let token_len = rest.find(char::is_whitespace).unwrap_or(rest.len());
        stamp_end += token_start + token_len;
        head = &rest[token_len..];
    }
    let offset = line.len() - line.trim_start().len();
    let stamp = &line[offset..offset + stamp_end];

    let (timestamp, message) = match NaiveDateTime::parse_from_str(stamp, &rules.timestamp_format) {
        Ok(t) => (Some(t), head.trim()),
        Err(_) => (None, line.trim()),
    };
    let event = rules
        .rules
        .iter()
        .find(|r| r.pattern.is_match(message))
        .map(|r| r.event);
    LogRecord {
        timestamp,
        message: message.to_string(),
        event,
    }
}

/// An extracted event with its source line number (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct LogEvent {
    pub line: usize,
    pub timestamp: Option<NaiveDateTime>,
    pub event: EventId,
}

/// Iterator over the events of a log source, in line order.
///
/// With `follow` set, end of input is not the end of the stream: the reader
/// sleeps and polls for appended lines until the process is interrupted.
pub struct EventStream<R> {
    reader: R,
    rules: RuleSet,
    follow: bool,
    buf: Vec<u8>,
    reset: Option<Regex>,
    reset_pending: bool,
    lines_read: usize,
    lines_matched: usize,
    unparsed_timestamps: usize,
}

impl<R: BufRead> EventStream<R> {
    pub fn new(reader: R, rules: RuleSet, follow: bool) -> Self {
        Self {
            reader,
            rules,
            follow,
            buf: Vec::new(),
            reset: None,
            reset_pending: false,
            lines_read: 0,
            lines_matched: 0,
            unparsed_timestamps: 0,
        }
    }

    /// Lines whose message matches `pattern` are session-reset markers, not
    /// events. See [`EventStream::take_reset`].
    pub fn with_reset(mut self, pattern: Regex) -> Self {
        self.reset = Some(pattern);
        self
    }

    /// True once per reset marker seen before the event just returned.
    pub fn take_reset(&mut self) -> bool {
        std::mem::take(&mut self.reset_pending)
    }

    pub fn lines_read(&self) -> usize {
        self.lines_read
    }

    pub fn lines_matched(&self) -> usize {
        self.lines_matched
    }

    pub fn unparsed_timestamps(&self) -> usize {
        self.unparsed_timestamps
    }

    /// Next complete line, or `None` at end of input (never in follow mode).
    fn next_line(&mut self) -> io::Result<Option<String>> {
        loop {
            let n = self.reader.read_until(b'\n', &mut self.buf)?;
            let complete = self.buf.last() == Some(&b'\n');
            if complete || (n == 0 && !self.follow && !self.buf.is_empty()) {
                let line = String::from_utf8_lossy(&self.buf).into_owned();
                self.buf.clear();
                return Ok(Some(line));
            }
            if n == 0 {
                if !self.follow {
                    return Ok(None);
                }
                thread::sleep(FOLLOW_POLL);
            }
        }
    }
}

impl<R: BufRead> Iterator for EventStream<R> {
    type Item = io::Result<LogEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.next_line() {
                Ok(Some(line)) => line,
                Ok(None) => return None,
                Err(e) => return Some(Err(e)),
            };
            self.lines_read += 1;
            let record = parse_line(&line, &self.rules);
            if !record.timestamp_ok() {
                self.unparsed_timestamps += 1;
            }
            if self.reset.as_ref().is_some_and(|r| r.is_match(&record.message)) {
                self.reset_pending = true;
                continue;
            }
            if let Some(event) = record.event {
                self.lines_matched += 1;
                return Some(Ok(LogEvent {
                    line: self.lines_read,
                    timestamp: record.timestamp,
                    event,
                }));
            }
        }
    }
}

/// Opens a log file, or standard input for `-`.
pub fn open_source(path: &Path) -> Result<Box<dyn BufRead>, IngestError> {
    if path == Path::new("-") {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(Box::new(BufReader::new(file)))
}

pub fn stream(path: &Path, rules: RuleSet, follow: bool) -> Result<EventStream<Box<dyn BufRead>>, IngestError> {
    Ok(EventStream::new(open_source(path)?, rules, follow))
}

const DESCRIPTIONS: [&str; 5] = [
    "clock drift exceeding threshold",
    "temperature rising above limit",
    "OSNR below lower threshold",
    "no signal received from peer",
    "loss of frame alignment",
];

/// Log message [`synth_log`] writes for `e`.
pub fn synthetic_message(m: &EventFailureMatrix, e: EventId) -> String {
    let text = DESCRIPTIONS.get(e.0).copied().unwrap_or("condition asserted");
    format!("{text} [{}]", m.event_label(e))
}

/// One rule per event matching its bracketed label tag, the layout
/// [`synth_log`] writes.
pub fn default_rules(m: &EventFailureMatrix) -> RuleSet {
    let rules: Vec<(String, String)> = m
        .event_labels()
        .iter()
        .map(|l| (l.clone(), format!(r"\[{}\]$", regex::escape(l))))
        .collect();
    RuleSet::new(m, DEFAULT_TIMESTAMP_FORMAT, &rules).expect("escaped labels compile")
}

/// A log whose events are exactly the sequence of failure `f`, one line per
/// event, `spacing` apart.
pub fn synth_log(
    m: &EventFailureMatrix,
    f: FailureId,
    base_time: NaiveDateTime,
    spacing: TimeDelta,
) -> Result<String, MatrixError> {
    let mut out = String::new();
    let mut t = base_time;
    for e in m.event_sequence(f)? {
        out.push_str(&format!(
            "{} {}\n",
            t.format(DEFAULT_TIMESTAMP_FORMAT),
            synthetic_message(m, e)
        ));
        t += spacing;
    }
    Ok(out)
}
