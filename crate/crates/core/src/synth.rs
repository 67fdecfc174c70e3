//! Synthetic bridge and comparison corpora with complete SRL annotations.
//!
//! Every token is a synthetic word (`ent0042`, `rel03`, `yr1951`, ...) or one
//! of a handful of fixed function words, so answers match exactly.
//!
//! Bridge: "who is REL of film X starred in". Paragraph X holds
//! `X starred in E`; paragraph E holds `E has REL ANS` and `ANS won PRIZE`,
//! next to a confuser `E has REL' OTHER`. The gold chain is those three
//! sentences and the answer is ANS.
//!
//! Comparison: "who is younger X or Y". Paragraph X holds
//! `X was born in YR in C1`, paragraph Y holds `Y was born in YR' in C2`, and
//! one of them also holds the link `C1 is near C2`. Each entity occurs once
//! in the chain; the answer is the one with the later year.
//!
//! Both templates may add a filler sentence that stays off the chain.

use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::answer::locate_answer;
use crate::data::{
    Answer, DataError, Example, Paragraph, QAInstance, SentenceRef, SrlAnnotation, SrlArgument,
    SrlFrame,
};
use crate::graph::{build_graph, GraphConfig, GraphInput};
use crate::train::{graph_coverage, is_covered};

/// Supporting facts per generated instance.
pub const CHAIN_LEN: usize = 3;
const RELATIONS: usize = 8;
const YEARS: usize = 2;
const FIRST_YEAR: usize = 1950;
const SMALL_POOL: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_instances: usize,
    pub n_distractors: usize,
    pub bridge_fraction: f64,
    /// Size of the entity pool.
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_instances: 250,
            n_distractors: 2,
            bridge_fraction: 0.5,
            vocab_size: 400,
            seed: 7,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl SynthConfig {
    fn entities_per_instance(&self) -> usize {
        4 + 2 * self.n_distractors
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(0.0..=1.0).contains(&self.bridge_fraction) {
            return Err(SynthError::Config("bridge_fraction must lie in [0, 1]".into()));
        }
        if self.vocab_size < self.entities_per_instance() {
            return Err(SynthError::Config(format!(
                "vocab_size must be at least {} for {} distractors",
                self.entities_per_instance(),
                self.n_distractors
            )));
        }
        Ok(())
    }
}

/// A sentence with frames given as (predicate, [(role, start, end)]).
struct Sent {
    tokens: Vec<String>,
    frames: Vec<(usize, Vec<(&'static str, usize, usize)>)>,
    gold: Option<usize>,
}

fn sent(words: &[&str], frames: Vec<(usize, Vec<(&'static str, usize, usize)>)>) -> Sent {
    Sent {
        tokens: words.iter().map(|w| w.to_string()).collect(),
        frames,
        gold: None,
    }
}

fn gold(mut s: Sent, rank: usize) -> Sent {
    s.gold = Some(rank);
    s
}

struct Para {
    title: String,
    sentences: Vec<Sent>,
    is_gold: bool,
}

struct Draft {
    question: Sent,
    paragraphs: Vec<Para>,
    answer: String,
}

fn frames_of(r: SentenceRef, s: &Sent) -> impl Iterator<Item = SrlFrame> + '_ {
    s.frames.iter().map(move |(pred, args)| {
        SrlFrame::new(
            r,
            *pred,
            args.iter()
                .map(|&(role, start, end)| SrlArgument {
                    role: role.to_string(),
                    start,
                    end,
                })
                .collect(),
        )
    })
}

impl Draft {
    /// Shuffle sentences and paragraphs, then lay out the instance.
    fn finish(mut self, id: String, rng: &mut ChaCha8Rng) -> Result<Example, SynthError> {
        for p in &mut self.paragraphs {
            p.sentences.shuffle(rng);
        }
        self.paragraphs.shuffle(rng);
        let mut sf: Vec<(usize, String, usize)> = Vec::new();
        for p in &self.paragraphs {
            for (i, s) in p.sentences.iter().enumerate() {
                if let Some(rank) = s.gold {
                    sf.push((rank, p.title.clone(), i));
                }
            }
        }
        sf.sort();
        let inst = QAInstance {
            id,
            question: self.question.tokens.clone(),
            contexts: self
                .paragraphs
                .iter()
                .map(|p| Paragraph {
                    title: vec![p.title.clone()],
                    sentences: p.sentences.iter().map(|s| s.tokens.clone()).collect(),
                })
                .collect(),
            answer: Answer::Span(self.answer),
            supporting_facts: sf.into_iter().map(|(_, t, i)| (t, i)).collect(),
            gold_titles: self
                .paragraphs
                .iter()
                .filter(|p| p.is_gold)
                .map(|p| p.title.clone())
                .collect(),
        };
        let mut frames: Vec<SrlFrame> = frames_of(SentenceRef::Question, &self.question).collect();
        for (pi, p) in self.paragraphs.iter().enumerate() {
            for (si, s) in p.sentences.iter().enumerate() {
                let r = SentenceRef::Sentence {
                    paragraph: pi,
                    sentence: si,
                };
                frames.extend(frames_of(r, s));
            }
        }
        let srl = SrlAnnotation::from_frames(frames, &inst)?;
        Ok(Example {
            instance: inst,
            srl,
        })
    }
}

fn pick(rng: &mut ChaCha8Rng, prefix: &str, n: usize) -> String {
    format!("{prefix}{:02}", rng.random_range(0..n))
}

fn pick_other(rng: &mut ChaCha8Rng, prefix: &str, n: usize, not: &str) -> String {
    loop {
        let s = pick(rng, prefix, n);
        if s != not {
            return s;
        }
    }
}

fn pick_avoiding(rng: &mut ChaCha8Rng, prefix: &str, n: usize, avoid: &BTreeSet<String>) -> String {
    loop {
        let s = pick(rng, prefix, n);
        if !avoid.contains(&s) {
            return s;
        }
    }
}

/// `avoid` holds every token of the question and gold paragraphs, so the
/// distractor shares no argument with them.
fn distractor(rng: &mut ChaCha8Rng, d: &str, o: &str, avoid: &BTreeSet<String>) -> Para {
    let rel = pick_avoiding(rng, "rel", RELATIONS, avoid);
    let prize = pick_avoiding(rng, "prize", SMALL_POOL, avoid);
    let mut sentences = vec![
        sent(&[d, "has", &rel, o], vec![(1, vec![("ARG1", 0, 1), ("ARG2", 2, 3), ("ARG0", 3, 4)])]),
        sent(&[o, "won", &prize], vec![(1, vec![("ARG0", 0, 1), ("ARG1", 2, 3)])]),
    ];
    if rng.random_bool(0.5) {
        let team = pick_avoiding(rng, "team", SMALL_POOL, avoid);
        sentences.push(sent(&[d, "played", "for", &team], vec![(1, vec![("ARG0", 0, 1), ("ARG1", 3, 4)])]));
    }
    Para {
        title: d.to_string(),
        sentences,
        is_gold: false,
    }
}

fn bridge(rng: &mut ChaCha8Rng, ents: &[String]) -> (Draft, usize) {
    let (x, e, ans, other) = (&ents[0], &ents[1], &ents[2], &ents[3]);
    let rel = pick(rng, "rel", RELATIONS);
    let rel_alt = pick_other(rng, "rel", RELATIONS, &rel);
    let prize = pick(rng, "prize", SMALL_POOL);
    let question = sent(
        &["who", "is", &rel, "of", "film", x, "starred", "in"],
        vec![(1, vec![("ARG0", 0, 1), ("ARG2", 2, 3)]), (6, vec![("ARG0", 5, 6)])],
    );
    let mut pa = vec![gold(
        sent(&[x, "starred", "in", e], vec![(1, vec![("ARG0", 0, 1), ("ARG1", 3, 4)])]),
        0,
    )];
    if rng.random_bool(0.5) {
        let city = pick(rng, "city", SMALL_POOL);
        pa.push(sent(&[x, "lives", "in", &city], vec![(1, vec![("ARG0", 0, 1), ("LOC", 3, 4)])]));
    }
    let has = |who: &str, r: &str, what: &str| {
        sent(&[who, "has", r, what], vec![(1, vec![("ARG1", 0, 1), ("ARG2", 2, 3), ("ARG0", 3, 4)])])
    };
    let pb = vec![
        gold(has(e, &rel, ans), 1),
        gold(sent(&[ans, "won", &prize], vec![(1, vec![("ARG0", 0, 1), ("ARG1", 2, 3)])]), 2),
        has(e, &rel_alt, other),
    ];
    let paragraphs = vec![
        Para {
            title: x.clone(),
            sentences: pa,
            is_gold: true,
        },
        Para {
            title: e.clone(),
            sentences: pb,
            is_gold: true,
        },
    ];
    let draft = Draft {
        question,
        paragraphs,
        answer: ans.clone(),
    };
    (draft, 4)
}

fn comparison(rng: &mut ChaCha8Rng, ents: &[String]) -> (Draft, usize) {
    let (x, y) = (&ents[0], &ents[1]);
    let years = index::sample(rng, YEARS, 2);
    let (yx, yy) = (FIRST_YEAR + years.index(0), FIRST_YEAR + years.index(1));
    let (yr_x, yr_y) = (format!("yr{yx}"), format!("yr{yy}"));
    let cities: Vec<String> = index::sample(rng, SMALL_POOL, 3)
        .into_iter()
        .map(|k| format!("city{k:02}"))
        .collect();
    let question = sent(
        &["who", "is", "younger", x, "or", y],
        vec![(2, vec![("ARG1", 3, 4), ("ARG1", 5, 6)])],
    );
    let born = |who: &str, yr: &str, city: &str| {
        sent(
            &[who, "was", "born", "in", yr, "in", city],
            vec![(2, vec![("ARG1", 0, 1), ("TEMPORAL", 4, 5), ("LOC", 6, 7)])],
        )
    };
    let near = sent(
        &[&cities[0], "is", "near", &cities[1]],
        vec![(2, vec![("LOC", 0, 1), ("LOC", 3, 4)])],
    );
    let mut px = vec![gold(born(x, &yr_x, &cities[0]), 0)];
    let mut py = vec![gold(born(y, &yr_y, &cities[1]), 2)];
    if rng.random_bool(0.5) {
        px.push(gold(near, 1));
    } else {
        py.push(gold(near, 1));
    }
    // fillers share no argument with the chain
    for p in [&mut px, &mut py] {
        if rng.random_bool(0.5) {
            let team = pick(rng, "team", SMALL_POOL);
            p.push(sent(&[&team, "played", "in", &cities[2]], vec![(1, vec![("ARG0", 0, 1), ("LOC", 3, 4)])]));
        }
    }
    let answer = if yx > yy { x } else { y };
    let paragraphs = vec![
        Para {
            title: x.clone(),
            sentences: px,
            is_gold: true,
        },
        Para {
            title: y.clone(),
            sentences: py,
            is_gold: true,
        },
    ];
    let draft = Draft {
        question,
        paragraphs,
        answer: answer.clone(),
    };
    (draft, 2)
}

/// Generate `cfg.n_instances` examples; a pure function of `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<Example>, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.n_instances);
    for i in 0..cfg.n_instances {
        let ents: Vec<String> = index::sample(&mut rng, cfg.vocab_size, cfg.entities_per_instance())
            .into_iter()
            .map(|k| format!("ent{k:04}"))
            .collect();
        let is_bridge = rng.random_bool(cfg.bridge_fraction);
        let (mut draft, used) = if is_bridge {
            bridge(&mut rng, &ents)
        } else {
            comparison(&mut rng, &ents)
        };
        let mut avoid: BTreeSet<String> = draft.question.tokens.iter().cloned().collect();
        for p in &draft.paragraphs {
            avoid.extend(p.sentences.iter().flat_map(|s| s.tokens.iter().cloned()));
        }
        for k in 0..cfg.n_distractors {
            let (d, o) = (&ents[used + 2 * k], &ents[used + 2 * k + 1]);
            draft.paragraphs.push(distractor(&mut rng, d, o, &avoid));
        }
        out.push(draft.finish(format!("syn{:05}", i), &mut rng)?);
    }
    Ok(out)
}

/// Outcome of a passing audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub instances: usize,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("audit failed for {}: {}", ids.join(", "), reasons.join("; "))]
pub struct AuditFailure {
    pub ids: Vec<String>,
    pub reasons: Vec<String>,
}

fn audit_one(ex: &Example, cfg: &GraphConfig, max_hops: usize) -> Result<f64, String> {
    let inst = &ex.instance;
    let (a, b) = inst.gold_pair().ok_or("gold titles do not name two paragraphs")?;
    if inst.supporting_facts.len() != CHAIN_LEN {
        return Err(format!(
            "{} supporting facts, expected {CHAIN_LEN}",
            inst.supporting_facts.len()
        ));
    }
    let gold_titles: BTreeSet<&str> = inst.gold_titles.iter().map(String::as_str).collect();
    let sf_titles: BTreeSet<&str> = inst.supporting_facts.iter().map(|(t, _)| t.as_str()).collect();
    if gold_titles != sf_titles {
        return Err("supporting facts do not span both gold paragraphs".into());
    }
    let g = build_graph(
        &GraphInput {
            instance: inst,
            paragraphs: [a, b],
            srl: &ex.srl,
        },
        cfg,
    );
    if !is_covered(&g, inst, max_hops) {
        return Err("gold chain not connected in the graph".into());
    }
    let (context, owner) = g.answer_context();
    let gold_nodes: Vec<usize> = inst
        .gold_sentence_refs()
        .iter()
        .filter_map(|&r| g.doc_node(r))
        .collect();
    let answer: Vec<String> = inst.answer.text().split_whitespace().map(String::from).collect();
    match locate_answer(&context, &answer, |i| gold_nodes.contains(&owner[i].0)) {
        Some((i, _)) if gold_nodes.contains(&owner[i].0) => Ok(1.0),
        Some(_) => Err("answer not inside a supporting fact".into()),
        None => Err("answer is not a span of the gold paragraphs".into()),
    }
}

/// Check the generator contract on every instance: two gold paragraphs, a
/// connected chain of [`CHAIN_LEN`] supporting facts within `max_hops`, and an
/// answer span inside the chain.
pub fn audit(
    examples: &[Example],
    cfg: &GraphConfig,
    max_hops: usize,
) -> Result<AuditReport, AuditFailure> {
    let mut failure = AuditFailure {
        ids: Vec::new(),
        reasons: Vec::new(),
    };
    let mut graphs = Vec::new();
    for ex in examples {
        match audit_one(ex, cfg, max_hops) {
            Ok(_) => {}
            Err(r) => {
                failure.ids.push(ex.instance.id.clone());
                failure.reasons.push(format!("{}: {r}", ex.instance.id));
            }
        }
        if let Some((a, b)) = ex.instance.gold_pair() {
            let g = build_graph(
                &GraphInput {
                    instance: &ex.instance,
                    paragraphs: [a, b],
                    srl: &ex.srl,
                },
                cfg,
            );
            graphs.push((g, &ex.instance));
        }
    }
    if !failure.ids.is_empty() {
        return Err(failure);
    }
    Ok(AuditReport {
        instances: examples.len(),
        coverage: graph_coverage(graphs.iter().map(|(g, i)| (g, *i)), max_hops),
    })
}
