//! QA instances, SRL annotations, and their line-delimited file formats.
//!
//! Instance file: one JSON object per line,
//!
//! ```text
//! {"id": "b0001",
//!  "question": ["who", "is", ...],
//!  "contexts": [{"title": ["ent0001"], "sentences": [["ent0001", "starred", ...], ...]}, ...],
//!  "answer": {"type": "span", "text": "ent0042"}        // or {"type": "yes"} / {"type": "no"}
//!  "supporting_facts": [["ent0001", 0], ["ent0002", 1]],
//!  "gold_titles": ["ent0001", "ent0002"]}
//! ```
//!
//! Titles are referenced by their tokens joined with a single space. Tokens never
//! contain whitespace, so the join is lossless. The order of `supporting_facts` is
//! the reasoning order used for teacher forcing when it forms a chain.
//!
//! SRL file: one JSON object per (instance, sentence) group,
//!
//! ```text
//! {"id": "b0001", "sentence": "question",
//!  "frames": [{"predicate": 1, "arguments": [{"role": "ARG0", "start": 0, "end": 1}]}]}
//! {"id": "b0001", "sentence": [0, 2], "frames": [...]}
//! ```
//!
//! `sentence` is either the string `"question"` or `[paragraph_index, sentence_index]`.
//! Argument spans are half-open token ranges.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("supporting fact ({title:?}, {sentence}) names no sentence in the contexts")]
    DanglingSupportingFact { title: String, sentence: usize },
    #[error("span [{start}, {end}) out of range for {sentence} of length {len}")]
    SpanOutOfRange {
        sentence: SentenceRef,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("unknown sentence reference {0}")]
    UnknownSentenceRef(SentenceRef),
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<DataError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DataError {
    fn at_line(self, line: usize) -> Self {
        DataError::AtLine {
            line,
            source: Box::new(self),
        }
    }
}

/// A title plus sentences, every piece pre-tokenized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub title: Vec<String>,
    pub sentences: Vec<Vec<String>>,
}

impl Paragraph {
    pub fn title_text(&self) -> String {
        self.title.join(" ")
    }

    pub fn token_count(&self) -> usize {
        self.title.len() + self.sentences.iter().map(Vec::len).sum::<usize>()
    }

    /// Title followed by every sentence, flattened.
    pub fn flat_tokens(&self) -> Vec<String> {
        let mut out = self.title.clone();
        for s in &self.sentences {
            out.extend(s.iter().cloned());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "text", rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
    Span(String),
}

/// Answer class index used by the type classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerType {
    Yes,
    No,
    Span,
}

impl AnswerType {
    pub const ALL: [AnswerType; 3] = [AnswerType::Yes, AnswerType::No, AnswerType::Span];

    pub fn index(self) -> usize {
        match self {
            AnswerType::Yes => 0,
            AnswerType::No => 1,
            AnswerType::Span => 2,
        }
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }
}

impl Answer {
    pub fn kind(&self) -> AnswerType {
        match self {
            Answer::Yes => AnswerType::Yes,
            Answer::No => AnswerType::No,
            Answer::Span(_) => AnswerType::Span,
        }
    }

    pub fn text(&self) -> &str {
        match self {
            Answer::Yes => "yes",
            Answer::No => "no",
            Answer::Span(t) => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAInstance {
    pub id: String,
    pub question: Vec<String>,
    pub contexts: Vec<Paragraph>,
    pub answer: Answer,
    pub supporting_facts: Vec<(String, usize)>,
    pub gold_titles: Vec<String>,
}

impl QAInstance {
    /// Index of the first paragraph carrying `title`.
    pub fn paragraph_by_title(&self, title: &str) -> Option<usize> {
        self.contexts.iter().position(|p| p.title_text() == title)
    }

    pub fn sentence(&self, r: SentenceRef) -> Option<&[String]> {
        match r {
            SentenceRef::Question => Some(&self.question),
            SentenceRef::Sentence {
                paragraph,
                sentence,
            } => self
                .contexts
                .get(paragraph)
                .and_then(|p| p.sentences.get(sentence))
                .map(Vec::as_slice),
        }
    }

    /// Gold supporting facts resolved to sentence references, in file order.
    pub fn gold_sentence_refs(&self) -> Vec<SentenceRef> {
        self.supporting_facts
            .iter()
            .filter_map(|(t, s)| {
                self.paragraph_by_title(t).map(|p| SentenceRef::Sentence {
                    paragraph: p,
                    sentence: *s,
                })
            })
            .collect()
    }

    /// The two gold paragraph indices in context order, when exactly two are named.
    pub fn gold_pair(&self) -> Option<(usize, usize)> {
        let mut idx: Vec<usize> = self
            .gold_titles
            .iter()
            .filter_map(|t| self.paragraph_by_title(t))
            .collect();
        idx.sort_unstable();
        idx.dedup();
        match idx.as_slice() {
            [a, b] => Some((*a, *b)),
            _ => None,
        }
    }

    fn validate(mut self) -> Result<Self, DataError> {
        if self.id.is_empty() {
            return Err(DataError::MalformedRecord("empty id".into()));
        }
        if self.question.is_empty() {
            return Err(DataError::MalformedRecord(format!("{}: empty question", self.id)));
        }
        check_tokens(&self.id, "question", &self.question)?;
        if self.contexts.is_empty() {
            return Err(DataError::MalformedRecord(format!("{}: empty contexts", self.id)));
        }
        for (pi, p) in self.contexts.iter().enumerate() {
            if p.sentences.is_empty() {
                return Err(DataError::MalformedRecord(format!(
                    "{}: paragraph {pi} has no sentences",
                    self.id
                )));
            }
            check_tokens(&self.id, "title", &p.title)?;
            for s in &p.sentences {
                check_tokens(&self.id, "sentence", s)?;
            }
        }
        if let Answer::Span(t) = &self.answer {
            if t.trim().is_empty() {
                return Err(DataError::MalformedRecord(format!(
                    "{}: empty answer span text",
                    self.id
                )));
            }
        }
        for (title, sentence) in &self.supporting_facts {
            let ok = self
                .paragraph_by_title(title)
                .is_some_and(|p| *sentence < self.contexts[p].sentences.len());
            if !ok {
                return Err(DataError::DanglingSupportingFact {
                    title: title.clone(),
                    sentence: *sentence,
                });
            }
        }
        for t in &self.gold_titles {
            if self.paragraph_by_title(t).is_none() {
                return Err(DataError::MalformedRecord(format!(
                    "{}: gold title {t:?} names no paragraph",
                    self.id
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        self.supporting_facts.retain(|sf| seen.insert(sf.clone()));
        Ok(self)
    }
}

fn check_tokens(id: &str, what: &str, toks: &[String]) -> Result<(), DataError> {
    if let Some(bad) = toks
        .iter()
        .find(|t| t.is_empty() || t.chars().any(char::is_whitespace))
    {
        return Err(DataError::MalformedRecord(format!(
            "{id}: {what} contains invalid token {bad:?}"
        )));
    }
    Ok(())
}

/// Parse and validate one instance record.
pub fn parse_instance(raw: &str) -> Result<QAInstance, DataError> {
    let inst: QAInstance =
        serde_json::from_str(raw).map_err(|e| DataError::MalformedRecord(e.to_string()))?;
    inst.validate()
}

pub fn serialize_instance(inst: &QAInstance) -> String {
    serde_json::to_string(inst).expect("instance serializes")
}

/// Identity of a sentence inside an instance. The question is a sentence too.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "SentenceRefRepr", into = "SentenceRefRepr")]
pub enum SentenceRef {
    Question,
    Sentence { paragraph: usize, sentence: usize },
}

impl fmt::Display for SentenceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SentenceRef::Question => write!(f, "question"),
            SentenceRef::Sentence {
                paragraph,
                sentence,
            } => write!(f, "[{paragraph}, {sentence}]"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SentenceRefRepr {
    Tag(String),
    Pair(usize, usize),
}

impl TryFrom<SentenceRefRepr> for SentenceRef {
    type Error = String;

    fn try_from(r: SentenceRefRepr) -> Result<Self, Self::Error> {
        match r {
            SentenceRefRepr::Tag(t) if t == "question" => Ok(SentenceRef::Question),
            SentenceRefRepr::Tag(t) => Err(format!("unknown sentence tag {t:?}")),
            SentenceRefRepr::Pair(paragraph, sentence) => Ok(SentenceRef::Sentence {
                paragraph,
                sentence,
            }),
        }
    }
}

impl From<SentenceRef> for SentenceRefRepr {
    fn from(r: SentenceRef) -> Self {
        match r {
            SentenceRef::Question => SentenceRefRepr::Tag("question".into()),
            SentenceRef::Sentence {
                paragraph,
                sentence,
            } => SentenceRefRepr::Pair(paragraph, sentence),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrlArgument {
    pub role: String,
    pub start: usize,
    pub end: usize,
}

/// One predicate with its labeled argument spans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrlFrame {
    #[serde(skip)]
    pub sentence: Option<SentenceRef>,
    pub predicate: usize,
    pub arguments: Vec<SrlArgument>,
}

impl SrlFrame {
    pub fn new(sentence: SentenceRef, predicate: usize, arguments: Vec<SrlArgument>) -> Self {
        SrlFrame {
            sentence: Some(sentence),
            predicate,
            arguments,
        }
    }

    pub fn sentence_ref(&self) -> SentenceRef {
        self.sentence.expect("frame attached to a sentence")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct SrlRecord {
    id: String,
    sentence: SentenceRef,
    frames: Vec<SrlFrame>,
}

/// All SRL frames of one instance, grouped by sentence and ordered by predicate.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SrlAnnotation {
    groups: BTreeMap<SentenceRef, Vec<SrlFrame>>,
}

impl SrlAnnotation {
    pub fn frames(&self, r: SentenceRef) -> &[SrlFrame] {
        self.groups.get(&r).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn groups(&self) -> impl Iterator<Item = (SentenceRef, &[SrlFrame])> {
        self.groups.iter().map(|(r, f)| (*r, f.as_slice()))
    }

    pub fn frame_count(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }

    /// Build from loose frames, validating each against `inst`.
    pub fn from_frames(
        frames: impl IntoIterator<Item = SrlFrame>,
        inst: &QAInstance,
    ) -> Result<Self, DataError> {
        let mut groups: BTreeMap<SentenceRef, Vec<SrlFrame>> = BTreeMap::new();
        for f in frames {
            validate_frame(&f, inst)?;
            groups.entry(f.sentence_ref()).or_default().push(f);
        }
        for g in groups.values_mut() {
            g.sort_by_key(|f| f.predicate);
        }
        Ok(SrlAnnotation { groups })
    }

    /// Keep only frames for which `keep` returns true.
    pub fn filter_frames(&self, mut keep: impl FnMut(&SrlFrame) -> bool) -> Self {
        let groups = self
            .groups
            .iter()
            .map(|(r, fs)| (*r, fs.iter().filter(|f| keep(f)).cloned().collect::<Vec<_>>()))
            .filter(|(_, fs)| !fs.is_empty())
            .collect();
        SrlAnnotation { groups }
    }
}

fn validate_frame(f: &SrlFrame, inst: &QAInstance) -> Result<(), DataError> {
    let r = f.sentence_ref();
    let toks = inst.sentence(r).ok_or(DataError::UnknownSentenceRef(r))?;
    let len = toks.len();
    if f.predicate >= len {
        return Err(DataError::SpanOutOfRange {
            sentence: r,
            start: f.predicate,
            end: f.predicate + 1,
            len,
        });
    }
    for a in &f.arguments {
        if a.role.trim().is_empty() {
            return Err(DataError::MalformedRecord(format!(
                "{}: empty argument role in {r}",
                inst.id
            )));
        }
        if a.start >= a.end || a.end > len {
            return Err(DataError::SpanOutOfRange {
                sentence: r,
                start: a.start,
                end: a.end,
                len,
            });
        }
    }
    Ok(())
}

/// Parse the SRL record lines of one instance (blank lines ignored).
pub fn parse_srl(raw: &str, inst: &QAInstance) -> Result<SrlAnnotation, DataError> {
    let mut seen = std::collections::HashSet::new();
    let mut frames = Vec::new();
    for line in raw.lines().filter(|l| !l.trim().is_empty()) {
        let rec = parse_srl_record(line)?;
        if rec.id != inst.id {
            return Err(DataError::MalformedRecord(format!(
                "SRL record for {:?} given to instance {:?}",
                rec.id, inst.id
            )));
        }
        if inst.sentence(rec.sentence).is_none() {
            return Err(DataError::UnknownSentenceRef(rec.sentence));
        }
        if !seen.insert(rec.sentence) {
            return Err(DataError::MalformedRecord(format!(
                "{}: duplicate SRL group for {}",
                inst.id, rec.sentence
            )));
        }
        frames.extend(rec.frames);
    }
    SrlAnnotation::from_frames(frames, inst)
}

fn parse_srl_record(line: &str) -> Result<SrlRecord, DataError> {
    let mut rec: SrlRecord =
        serde_json::from_str(line).map_err(|e| DataError::MalformedRecord(e.to_string()))?;
    for f in &mut rec.frames {
        f.sentence = Some(rec.sentence);
    }
    Ok(rec)
}

/// SRL record lines for one instance, one per sentence group.
pub fn serialize_srl(id: &str, srl: &SrlAnnotation) -> Vec<String> {
    srl.groups
        .iter()
        .map(|(r, frames)| {
            serde_json::to_string(&SrlRecord {
                id: id.to_string(),
                sentence: *r,
                frames: frames.clone(),
            })
            .expect("srl serializes")
        })
        .collect()
}

/// Cut a paragraph down to at most `max_tokens` tokens across title and sentences.
///
/// Whole trailing sentences go first, then the tail of the last kept sentence.
/// The title is never dropped, only shortened when it alone exceeds the limit.
pub fn truncate_paragraph(p: &Paragraph, max_tokens: usize) -> Paragraph {
    assert!(max_tokens >= 1, "max_tokens must be positive");
    if p.token_count() <= max_tokens {
        return p.clone();
    }
    let title: Vec<String> = p.title.iter().take(max_tokens).cloned().collect();
    let mut budget = max_tokens - title.len();
    let mut sentences = Vec::new();
    for s in &p.sentences {
        if budget == 0 {
            break;
        }
        let take = s.len().min(budget);
        sentences.push(s[..take].to_vec());
        budget -= take;
    }
    Paragraph { title, sentences }
}

/// An instance together with its SRL annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub instance: QAInstance,
    pub srl: SrlAnnotation,
}

pub fn read_instances(r: impl BufRead) -> Result<Vec<QAInstance>, DataError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_instance(&line).map_err(|e| e.at_line(i + 1))?);
    }
    Ok(out)
}

/// Read an SRL file and attach annotations to `instances`. Instances without
/// records get an empty annotation.
pub fn read_examples(
    instances: Vec<QAInstance>,
    srl: impl BufRead,
) -> Result<Vec<Example>, DataError> {
    let index: HashMap<&str, usize> = instances
        .iter()
        .enumerate()
        .map(|(i, x)| (x.id.as_str(), i))
        .collect();
    let mut lines: Vec<Vec<(usize, String)>> = vec![Vec::new(); instances.len()];
    for (i, line) in srl.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_srl_record(&line).map_err(|e| e.at_line(i + 1))?;
        let slot = *index.get(rec.id.as_str()).ok_or_else(|| {
            DataError::MalformedRecord(format!("SRL record for unknown instance {:?}", rec.id))
                .at_line(i + 1)
        })?;
        lines[slot].push((i + 1, line));
    }
    instances
        .into_iter()
        .zip(lines)
        .map(|(instance, recs)| {
            let first_line = recs.first().map(|(l, _)| *l).unwrap_or(0);
            let raw: Vec<String> = recs.into_iter().map(|(_, l)| l).collect();
            let srl = parse_srl(&raw.join("\n"), &instance).map_err(|e| e.at_line(first_line))?;
            Ok(Example { instance, srl })
        })
        .collect()
}

pub fn write_instances<'a>(
    mut w: impl Write,
    instances: impl IntoIterator<Item = &'a QAInstance>,
) -> std::io::Result<()> {
    for x in instances {
        writeln!(w, "{}", serialize_instance(x))?;
    }
    Ok(())
}

pub fn write_srl<'a>(
    mut w: impl Write,
    examples: impl IntoIterator<Item = &'a Example>,
) -> std::io::Result<()> {
    for ex in examples {
        for line in serialize_srl(&ex.instance.id, &ex.srl) {
            writeln!(w, "{line}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn fixture_json(sf_idx: usize) -> String {
        format!(
            r#"{{"id":"x1","question":["is","a","b"],
            "contexts":[{{"title":["A"],"sentences":[["a","one"],["a","two"]]}},
                        {{"title":["B"],"sentences":[["b","one"],["b","two"]]}}],
            "answer":{{"type":"yes"}},
            "supporting_facts":[["A",0],["B",{sf_idx}]],
            "gold_titles":["A","B"]}}"#
        )
        .replace('\n', " ")
    }

    #[test]
    fn parses_two_paragraph_record() {
        let inst = parse_instance(&fixture_json(1)).unwrap();
        assert_eq!(inst.answer, Answer::Yes);
        let n: usize = inst.contexts.iter().map(|p| p.sentences.len()).sum();
        assert_eq!(n, 4);
        assert_eq!(inst.gold_pair(), Some((0, 1)));
    }

    #[test]
    fn dangling_supporting_fact_rejected() {
        let err = parse_instance(&fixture_json(9)).unwrap_err();
        assert!(matches!(err, DataError::DanglingSupportingFact { sentence: 9, .. }));
    }

    #[test]
    fn empty_contexts_rejected() {
        let raw = r#"{"id":"x","question":["q"],"contexts":[],"answer":{"type":"no"},
                      "supporting_facts":[],"gold_titles":[]}"#;
        assert!(matches!(parse_instance(raw), Err(DataError::MalformedRecord(_))));
    }

    #[test]
    fn missing_field_and_empty_span_rejected() {
        let raw = r#"{"id":"x","question":["q"]}"#;
        assert!(matches!(parse_instance(raw), Err(DataError::MalformedRecord(_))));
        let raw = fixture_json(0).replace(r#"{"type":"yes"}"#, r#"{"type":"span","text":""}"#);
        assert!(matches!(parse_instance(&raw), Err(DataError::MalformedRecord(_))));
    }

    fn four_token_instance() -> QAInstance {
        QAInstance {
            id: "s".into(),
            question: toks("who did it"),
            contexts: vec![
                Paragraph {
                    title: toks("T1"),
                    sentences: vec![toks("w x y z")],
                },
                Paragraph {
                    title: toks("T2"),
                    sentences: vec![toks("p q")],
                },
            ],
            answer: Answer::Span("x".into()),
            supporting_facts: vec![],
            gold_titles: vec![],
        }
    }

    #[test]
    fn srl_frame_in_range_accepted() {
        let inst = four_token_instance();
        let raw = r#"{"id":"s","sentence":[0,0],"frames":[{"predicate":1,"arguments":[{"role":"ARG0","start":0,"end":1},{"role":"ARG1","start":2,"end":4}]}]}"#;
        let srl = parse_srl(raw, &inst).unwrap();
        let r = SentenceRef::Sentence {
            paragraph: 0,
            sentence: 0,
        };
        assert_eq!(srl.frames(r).len(), 1);
        assert_eq!(srl.frames(r)[0].arguments[1].end, 4);
        assert_eq!(serialize_srl("s", &srl), vec![raw.to_string()]);
    }

    #[test]
    fn empty_span_is_out_of_range() {
        let inst = four_token_instance();
        let raw = r#"{"id":"s","sentence":[0,0],"frames":[{"predicate":1,"arguments":[{"role":"ARG0","start":3,"end":3}]}]}"#;
        assert!(matches!(
            parse_srl(raw, &inst),
            Err(DataError::SpanOutOfRange { start: 3, end: 3, .. })
        ));
    }

    #[test]
    fn unknown_paragraph_ref_rejected() {
        let inst = four_token_instance();
        let raw = r#"{"id":"s","sentence":[7,0],"frames":[]}"#;
        assert!(matches!(
            parse_srl(raw, &inst),
            Err(DataError::UnknownSentenceRef(_))
        ));
    }

    #[test]
    fn question_ref_round_trips() {
        let inst = four_token_instance();
        let raw = r#"{"id":"s","sentence":"question","frames":[{"predicate":1,"arguments":[{"role":"ARG0","start":0,"end":1}]}]}"#;
        let srl = parse_srl(raw, &inst).unwrap();
        assert_eq!(srl.frames(SentenceRef::Question).len(), 1);
        assert_eq!(serialize_srl("s", &srl), vec![raw.to_string()]);
    }

    #[test]
    fn truncation_examples() {
        let p = Paragraph {
            title: toks("t1 t2 t3 t4"),
            sentences: vec![
                (0..10).map(|i| format!("a{i}")).collect(),
                (0..10).map(|i| format!("b{i}")).collect(),
                (0..10).map(|i| format!("c{i}")).collect(),
            ],
        };
        let t = truncate_paragraph(&p, 20);
        assert_eq!(t.title, p.title);
        assert_eq!(t.sentences.len(), 2);
        assert_eq!(t.sentences[0], p.sentences[0]);
        assert_eq!(t.sentences[1], p.sentences[1][..6].to_vec());
        assert_eq!(t.token_count(), 20);

        assert_eq!(truncate_paragraph(&p, 256), p);

        let tiny = Paragraph {
            title: toks("A B"),
            sentences: vec![toks("x y")],
        };
        let t = truncate_paragraph(&tiny, 1);
        assert_eq!(t.title, toks("A"));
        assert!(t.sentences.is_empty());
    }

    #[test]
    fn file_round_trip() {
        let inst = parse_instance(&fixture_json(1)).unwrap();
        let mut buf = Vec::new();
        write_instances(&mut buf, [&inst]).unwrap();
        let back = read_instances(buf.as_slice()).unwrap();
        assert_eq!(back, vec![inst]);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn token() -> impl Strategy<Value = String> {
            "[a-z0-9]{1,5}"
        }

        fn paragraph() -> impl Strategy<Value = Paragraph> {
            (
                prop::collection::vec(token(), 1..4),
                prop::collection::vec(prop::collection::vec(token(), 1..8), 1..5),
            )
                .prop_map(|(title, sentences)| Paragraph { title, sentences })
        }

        fn instance() -> impl Strategy<Value = QAInstance> {
            (
                prop::collection::vec(token(), 1..8),
                prop::collection::vec(paragraph(), 1..4),
                prop_oneof![
                    Just(Answer::Yes),
                    Just(Answer::No),
                    token().prop_map(Answer::Span)
                ],
                any::<u64>(),
            )
                .prop_map(|(question, mut contexts, answer, pick)| {
                    for (i, c) in contexts.iter_mut().enumerate() {
                        c.title.push(format!("p{i}"));
                    }
                    let p = (pick as usize) % contexts.len();
                    let title = contexts[p].title_text();
                    let s = (pick as usize / 7) % contexts[p].sentences.len();
                    QAInstance {
                        id: format!("i{pick}"),
                        question,
                        answer,
                        supporting_facts: vec![(title.clone(), s)],
                        gold_titles: vec![title],
                        contexts,
                    }
                })
        }

        proptest! {
            #[test]
            fn instance_round_trip(x in instance()) {
                let back = parse_instance(&serialize_instance(&x)).unwrap();
                prop_assert_eq!(back, x);
            }

            #[test]
            fn truncation_is_idempotent(p in paragraph(), max in 1usize..30) {
                let once = truncate_paragraph(&p, max);
                prop_assert!(once.token_count() <= max);
                prop_assert_eq!(truncate_paragraph(&once, max), once);
            }
        }
    }
}
