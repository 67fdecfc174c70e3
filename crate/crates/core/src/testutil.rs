//! Shared fixtures for unit tests.

use proptest::prelude::*;

use crate::data::{Answer, Paragraph, QAInstance, SentenceRef, SrlAnnotation, SrlArgument, SrlFrame};
use crate::graph::{build_graph, GraphConfig, GraphInput, HeteroGraph};

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

pub fn arg(role: &str, start: usize, end: usize) -> SrlArgument {
    SrlArgument {
        role: role.into(),
        start,
        end,
    }
}

pub fn sent(paragraph: usize, sentence: usize) -> SentenceRef {
    SentenceRef::Sentence {
        paragraph,
        sentence,
    }
}

/// Two players, a shared occupation, and birth years.
pub fn fig3_instance() -> QAInstance {
    QAInstance {
        id: "fig3".into(),
        question: toks("who is younger william or jerry"),
        contexts: vec![
            Paragraph {
                title: toks("william"),
                sentences: vec![
                    toks("william was born in 1960"),
                    toks("william is a former football player"),
                ],
            },
            Paragraph {
                title: toks("jerry"),
                sentences: vec![
                    toks("jerry was born in 1970"),
                    toks("jerry a former football player played and became coach"),
                ],
            },
            Paragraph {
                title: toks("elsewhere"),
                sentences: vec![toks("nothing to see here")],
            },
        ],
        answer: Answer::Span("jerry".into()),
        supporting_facts: vec![("william".into(), 0), ("jerry".into(), 0)],
        gold_titles: vec!["william".into(), "jerry".into()],
    }
}

pub fn fig3_srl(inst: &QAInstance) -> SrlAnnotation {
    let frames = vec![
        SrlFrame::new(
            SentenceRef::Question,
            2,
            vec![arg("ARG1", 3, 4), arg("ARG1", 5, 6)],
        ),
        SrlFrame::new(sent(0, 0), 2, vec![arg("ARG1", 0, 1), arg("TMP", 4, 5)]),
        SrlFrame::new(sent(0, 1), 1, vec![arg("ARG1", 0, 1), arg("ARG", 2, 6)]),
        SrlFrame::new(sent(1, 0), 2, vec![arg("ARG1", 0, 1), arg("TMP", 4, 5)]),
        SrlFrame::new(sent(1, 1), 5, vec![arg("ARG0", 0, 1), arg("ARG", 1, 5)]),
        SrlFrame::new(sent(1, 1), 7, vec![arg("ARG0", 0, 1), arg("ARG", 1, 5), arg("ARG2", 8, 9)]),
    ];
    SrlAnnotation::from_frames(frames, inst).unwrap()
}

pub fn fig3_graph() -> HeteroGraph {
    let inst = fig3_instance();
    let srl = fig3_srl(&inst);
    build_graph(
        &GraphInput {
            instance: &inst,
            paragraphs: [0, 1],
            srl: &srl,
        },
        &GraphConfig::default(),
    )
}

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["a", "b", "c", "d", "e", "f"]).prop_map(String::from)
}

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(word(), 2..7)
}

fn frames_for(r: SentenceRef, len: usize) -> impl Strategy<Value = Vec<SrlFrame>> {
    let frame = (0..len, prop::collection::vec((0..len, 1..3usize, 0..2usize), 0..4)).prop_map(
        move |(pred, args)| {
            let arguments = args
                .into_iter()
                .map(|(s, w, role)| arg(["ARG0", "ARG1"][role], s, (s + w).min(len)))
                .collect();
            SrlFrame::new(r, pred, arguments)
        },
    );
    prop::collection::vec(frame, 0..3)
}

/// Random instance with two or three paragraphs and random SRL over every sentence.
pub fn arb_example() -> impl Strategy<Value = (QAInstance, SrlAnnotation)> {
    let para = (word(), prop::collection::vec(sentence(), 1..4));
    (sentence(), prop::collection::vec(para, 2..4))
        .prop_map(|(question, paras)| QAInstance {
            id: "rand".into(),
            question,
            contexts: paras
                .into_iter()
                .enumerate()
                .map(|(i, (t, sentences))| Paragraph {
                    title: vec![format!("{t}{i}")],
                    sentences,
                })
                .collect(),
            answer: Answer::Yes,
            supporting_facts: vec![],
            gold_titles: vec![],
        })
        .prop_flat_map(|inst| {
            let mut refs = vec![(SentenceRef::Question, inst.question.len())];
            for (p, para) in inst.contexts.iter().enumerate() {
                for (s, t) in para.sentences.iter().enumerate() {
                    refs.push((sent(p, s), t.len()));
                }
            }
            let strategies: Vec<_> = refs.into_iter().map(|(r, len)| frames_for(r, len)).collect();
            (Just(inst), strategies)
        })
        .prop_map(|(inst, frames)| {
            let srl = SrlAnnotation::from_frames(frames.into_iter().flatten(), &inst).unwrap();
            (inst, srl)
        })
}
