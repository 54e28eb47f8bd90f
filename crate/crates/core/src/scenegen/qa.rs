//! Templated questions over scene ground truth.
//!
//! Every template is answered from the structured scene directly. The
//! token-level interpreter in [`super::interpret`] re-derives the same
//! answers from the question text alone.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::{Action, Color, SceneObject, SceneSpec, Shape, Size};
use crate::error::{OcrlError, Result};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Exist,
    Count,
    AttributeQuery,
    IntegerComparison,
    AttributeComparison,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Exist,
        Category::Count,
        Category::AttributeQuery,
        Category::IntegerComparison,
        Category::AttributeComparison,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Exist => "exist",
            Category::Count => "count",
            Category::AttributeQuery => "attribute_query",
            Category::IntegerComparison => "integer_comparison",
            Category::AttributeComparison => "attribute_comparison",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    ExistAttr,
    ExistEvent,
    CountAttr,
    CountEvent,
    QueryAttr,
    QueryFirstEvent,
    CompareCount,
    EventOrder,
    SameAttr,
}

impl Template {
    pub const ALL: [Template; 9] = [
        Template::ExistAttr,
        Template::ExistEvent,
        Template::CountAttr,
        Template::CountEvent,
        Template::QueryAttr,
        Template::QueryFirstEvent,
        Template::CompareCount,
        Template::EventOrder,
        Template::SameAttr,
    ];

    /// Templates that need object relations or event timing.
    pub const RELATIONAL_TEMPORAL: [Template; 6] = [
        Template::ExistEvent,
        Template::CountEvent,
        Template::QueryFirstEvent,
        Template::CompareCount,
        Template::EventOrder,
        Template::SameAttr,
    ];

    pub fn category(self) -> Category {
        match self {
            Template::ExistAttr | Template::ExistEvent => Category::Exist,
            Template::CountAttr | Template::CountEvent => Category::Count,
            Template::QueryAttr | Template::QueryFirstEvent => Category::AttributeQuery,
            Template::CompareCount | Template::EventOrder => Category::IntegerComparison,
            Template::SameAttr => Category::AttributeComparison,
        }
    }
}

const FIXED_WORDS: [&str; 30] = [
    "?", "a", "after", "and", "are", "as", "before", "color", "does", "fewer", "first", "how",
    "is", "many", "more", "moving", "number", "object", "objects", "of", "rotating", "same",
    "shape", "size", "start", "starts", "stop", "stops", "than", "that",
];

/// Closed question vocabulary.
pub fn vocabulary() -> Vec<String> {
    let mut words: Vec<String> = FIXED_WORDS.iter().map(|s| s.to_string()).collect();
    words.extend(["the", "there", "what"].map(String::from));
    words.extend(Color::ALL.iter().map(|c| c.word().to_string()));
    words.extend(Shape::ALL.iter().map(|s| s.word().to_string()));
    words.extend(Shape::ALL.iter().map(|s| s.plural().to_string()));
    words.extend(Size::ALL.iter().map(|s| s.word().to_string()));
    words
}

/// The closed answer label set: yes, no, counts `0..=max_count`, then
/// colors, shapes and sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSpace {
    pub labels: Vec<String>,
}

impl AnswerSpace {
    pub fn new(max_count: usize) -> Self {
        let mut labels = vec!["yes".to_string(), "no".to_string()];
        labels.extend((0..=max_count).map(|c| c.to_string()));
        labels.extend(Color::ALL.iter().map(|c| c.word().to_string()));
        labels.extend(Shape::ALL.iter().map(|s| s.word().to_string()));
        labels.extend(Size::ALL.iter().map(|s| s.word().to_string()));
        Self { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub tokens: Vec<String>,
    pub category: Category,
    pub template: Template,
    pub answer: usize,
}

impl QaItem {
    pub fn question(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaConfig {
    pub per_category: usize,
    pub max_count: usize,
    pub templates: Vec<Template>,
}

impl Default for QaConfig {
    fn default() -> Self {
        Self {
            per_category: 1,
            max_count: 6,
            templates: Template::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct Filter {
    size: Option<Size>,
    color: Option<Color>,
    shape: Option<Shape>,
}

impl Filter {
    fn matches(&self, o: &SceneObject) -> bool {
        self.size.is_none_or(|s| s == o.size)
            && self.color.is_none_or(|c| c == o.color)
            && self.shape.is_none_or(|s| s == o.shape)
    }

    fn phrase(&self, plural: bool) -> Vec<String> {
        let mut t = Vec::new();
        if let Some(s) = self.size {
            t.push(s.word().to_string());
        }
        if let Some(c) = self.color {
            t.push(c.word().to_string());
        }
        t.push(match (self.shape, plural) {
            (Some(s), false) => s.word().to_string(),
            (Some(s), true) => s.plural().to_string(),
            (None, false) => "object".to_string(),
            (None, true) => "objects".to_string(),
        });
        t
    }

    fn count(&self, scene: &SceneSpec) -> usize {
        scene.objects.iter().filter(|o| self.matches(o)).count()
    }

    fn random(rng: &mut impl Rng) -> Self {
        Self {
            size: rng.random_bool(0.3).then(|| *Size::ALL.choose(rng).expect("nonempty")),
            color: rng.random_bool(0.5).then(|| *Color::ALL.choose(rng).expect("nonempty")),
            shape: rng.random_bool(0.7).then(|| *Shape::ALL.choose(rng).expect("nonempty")),
        }
    }

    /// A filter that picks out exactly `target`, with a randomly chosen
    /// minimal-ish set of attributes.
    fn unique_for(scene: &SceneSpec, target: usize, rng: &mut impl Rng) -> Option<Self> {
        let o = &scene.objects[target];
        let mut subsets: Vec<u8> = (1..8).collect();
        subsets.shuffle(rng);
        subsets.sort_by_key(|m| m.count_ones());
        subsets.into_iter().find_map(|m| {
            let f = Filter {
                size: (m & 1 != 0).then_some(o.size),
                color: (m & 2 != 0).then_some(o.color),
                shape: (m & 4 != 0).then_some(o.shape),
            };
            (f.count(scene) == 1).then_some(f)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Attr {
    Color,
    Shape,
    Size,
}

impl Attr {
    const ALL: [Attr; 3] = [Attr::Color, Attr::Shape, Attr::Size];

    fn word(self) -> &'static str {
        match self {
            Attr::Color => "color",
            Attr::Shape => "shape",
            Attr::Size => "size",
        }
    }

    fn value(self, o: &SceneObject) -> &'static str {
        match self {
            Attr::Color => o.color.word(),
            Attr::Shape => o.shape.word(),
            Attr::Size => o.size.word(),
        }
    }

    fn named_by(self, f: &Filter) -> bool {
        match self {
            Attr::Color => f.color.is_some(),
            Attr::Shape => f.shape.is_some(),
            Attr::Size => f.size.is_some(),
        }
    }
}

fn event_words(action: Action, third_person: bool) -> [&'static str; 2] {
    let verb = match (action, third_person) {
        (Action::StartMoving | Action::StartRotating, true) => "starts",
        (Action::StartMoving | Action::StartRotating, false) => "start",
        (Action::StopMoving | Action::StopRotating, true) => "stops",
        (Action::StopMoving | Action::StopRotating, false) => "stop",
    };
    let what = match action {
        Action::StartMoving | Action::StopMoving => "moving",
        Action::StartRotating | Action::StopRotating => "rotating",
    };
    [verb, what]
}

const ACTIONS: [Action; 4] = [
    Action::StartMoving,
    Action::StopMoving,
    Action::StartRotating,
    Action::StopRotating,
];

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|s| s.to_string()).collect()
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// One attempt at instantiating `template`; `None` when the sampled
/// instance is unsatisfiable for this scene.
fn instantiate(
    template: Template,
    scene: &SceneSpec,
    max_count: usize,
    rng: &mut impl Rng,
) -> Option<(Vec<String>, String)> {
    let n = scene.objects.len();
    match template {
        Template::ExistAttr => {
            let f = Filter::random(rng);
            let mut t = words(&["is", "there", "a"]);
            t.extend(f.phrase(false));
            t.push("?".into());
            Some((t, yes_no(f.count(scene) > 0).into()))
        }
        Template::ExistEvent => {
            let f = Filter::random(rng);
            let action = *ACTIONS.choose(rng)?;
            let mut t = words(&["is", "there", "a"]);
            t.extend(f.phrase(false));
            t.push("that".into());
            t.extend(words(&event_words(action, true)));
            t.push("?".into());
            let hit = scene
                .objects
                .iter()
                .any(|o| f.matches(o) && o.event_frame(action).is_some());
            Some((t, yes_no(hit).into()))
        }
        Template::CountAttr => {
            let f = Filter::random(rng);
            let mut t = words(&["how", "many"]);
            t.extend(f.phrase(true));
            t.extend(words(&["are", "there", "?"]));
            let c = f.count(scene);
            (c <= max_count).then(|| (t, c.to_string()))
        }
        Template::CountEvent => {
            let f = Filter::random(rng);
            let action = *ACTIONS.choose(rng)?;
            let mut t = words(&["how", "many"]);
            t.extend(f.phrase(true));
            t.extend(words(&event_words(action, false)));
            t.push("?".into());
            let c = scene
                .objects
                .iter()
                .filter(|o| f.matches(o) && o.event_frame(action).is_some())
                .count();
            (c <= max_count).then(|| (t, c.to_string()))
        }
        Template::QueryAttr => {
            if n == 0 {
                return None;
            }
            let target = rng.random_range(0..n);
            let attr = *Attr::ALL.choose(rng)?;
            let f = Filter::unique_for(scene, target, rng)?;
            if attr.named_by(&f) {
                return None;
            }
            let mut t = words(&["what", attr.word(), "is", "the"]);
            t.extend(f.phrase(false));
            t.push("?".into());
            Some((t, attr.value(&scene.objects[target]).into()))
        }
        Template::QueryFirstEvent => {
            let action = *ACTIONS.choose(rng)?;
            let attr = *Attr::ALL.choose(rng)?;
            let timed: Vec<(usize, &SceneObject)> = scene
                .objects
                .iter()
                .filter_map(|o| o.event_frame(action).map(|f| (f, o)))
                .collect();
            let first = timed.iter().map(|(f, _)| *f).min()?;
            let winners: Vec<_> = timed.iter().filter(|(f, _)| *f == first).collect();
            if winners.len() != 1 {
                return None;
            }
            let mut t = words(&["what", attr.word(), "is", "the", "object", "that"]);
            t.extend(words(&event_words(action, true)));
            t.extend(words(&["first", "?"]));
            Some((t, attr.value(winners[0].1).into()))
        }
        Template::CompareCount => {
            let a = Filter::random(rng);
            let b = Filter::random(rng);
            if a == b {
                return None;
            }
            let (ca, cb) = (a.count(scene), b.count(scene));
            let mode = rng.random_range(0..3);
            let mut t = words(&["are", "there"]);
            let answer = match mode {
                0 => {
                    t.push("more".into());
                    ca > cb
                }
                1 => {
                    t.push("fewer".into());
                    ca < cb
                }
                _ => {
                    t.extend(words(&["the", "same", "number", "of"]));
                    ca == cb
                }
            };
            t.extend(a.phrase(true));
            t.push(if mode == 2 { "and" } else { "than" }.into());
            t.extend(b.phrase(true));
            t.push("?".into());
            Some((t, yes_no(answer).into()))
        }
        Template::EventOrder => {
            if n < 2 {
                return None;
            }
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i == j {
                return None;
            }
            let (ai, aj) = (*ACTIONS.choose(rng)?, *ACTIONS.choose(rng)?);
            let fi = scene.objects[i].event_frame(ai)?;
            let fj = scene.objects[j].event_frame(aj)?;
            if fi == fj {
                return None;
            }
            let pi = Filter::unique_for(scene, i, rng)?;
            let pj = Filter::unique_for(scene, j, rng)?;
            let before = rng.random_bool(0.5);
            let mut t = words(&["does", "the"]);
            t.extend(pi.phrase(false));
            t.extend(words(&event_words(ai, false)));
            t.push(if before { "before" } else { "after" }.into());
            t.push("the".into());
            t.extend(pj.phrase(false));
            t.extend(words(&event_words(aj, true)));
            t.push("?".into());
            let answer = if before { fi < fj } else { fi > fj };
            Some((t, yes_no(answer).into()))
        }
        Template::SameAttr => {
            if n < 2 {
                return None;
            }
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i == j {
                return None;
            }
            let attr = *Attr::ALL.choose(rng)?;
            let pi = Filter::unique_for(scene, i, rng)?;
            let pj = Filter::unique_for(scene, j, rng)?;
            if attr.named_by(&pi) || attr.named_by(&pj) {
                return None;
            }
            let mut t = words(&["is", "the"]);
            t.extend(pi.phrase(false));
            t.extend(words(&["the", "same", attr.word(), "as", "the"]));
            t.extend(pj.phrase(false));
            t.push("?".into());
            let same = attr.value(&scene.objects[i]) == attr.value(&scene.objects[j]);
            Some((t, yes_no(same).into()))
        }
    }
}

const ATTEMPTS: usize = 60;

/// Up to `per_category` questions for every category that has an enabled
/// template. Yes/no answers alternate within a category; a question that
/// cannot be instantiated for the scene is skipped.
pub fn generate_qa(scene: &SceneSpec, seed: u64, config: &QaConfig) -> Result<Vec<QaItem>> {
    if config.templates.is_empty() {
        return Err(OcrlError::Config("no question templates enabled".into()));
    }
    let answers = AnswerSpace::new(config.max_count);
    let mut rng = seeds::rng(seed);
    let mut seen: HashSet<Vec<String>> = HashSet::new();
    let mut out = Vec::new();
    for category in Category::ALL {
        let pool: Vec<Template> = config
            .templates
            .iter()
            .copied()
            .filter(|t| t.category() == category)
            .collect();
        if pool.is_empty() {
            continue;
        }
        let mut want_yes = rng.random_bool(0.5);
        for _ in 0..config.per_category {
            let mut chosen = None;
            for _ in 0..ATTEMPTS {
                let template = *pool.choose(&mut rng).expect("nonempty pool");
                let Some((tokens, answer)) = instantiate(template, scene, config.max_count, &mut rng)
                else {
                    continue;
                };
                if seen.contains(&tokens) {
                    continue;
                }
                let is_binary = answer == "yes" || answer == "no";
                if is_binary && (answer == "yes") != want_yes {
                    continue;
                }
                chosen = Some((template, tokens, answer, is_binary));
                break;
            }
            if let Some((template, tokens, answer, is_binary)) = chosen {
                if is_binary {
                    want_yes = !want_yes;
                }
                let label = answers
                    .index(&answer)
                    .ok_or_else(|| OcrlError::Generation(format!("answer `{answer}` not in label set")))?;
                seen.insert(tokens.clone());
                out.push(QaItem {
                    tokens,
                    category,
                    template,
                    answer: label,
                });
            }
        }
    }
    Ok(out)
}
