//! Parses a question back from its tokens and evaluates it on a scene.
//!
//! Shares no code with the generator beyond the attribute enums, so a
//! disagreement between the two points at a bug in one of them.

use super::scene::{Action, Color, SceneObject, SceneSpec, Shape, Size};
use crate::error::{OcrlError, Result};

struct Cursor<'a> {
    toks: &'a [String],
    pos: usize,
}

fn err(msg: impl Into<String>) -> OcrlError {
    OcrlError::Input(msg.into())
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a str> {
        self.toks.get(self.pos).map(String::as_str)
    }

    fn next(&mut self) -> Result<&'a str> {
        let t = self.peek().ok_or_else(|| err("question ended early"))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, words: &str) -> Result<()> {
        for w in words.split(' ') {
            let got = self.next()?;
            if got != w {
                return Err(err(format!("expected `{w}`, found `{got}`")));
            }
        }
        Ok(())
    }

    fn accept(&mut self, w: &str) -> bool {
        if self.peek() == Some(w) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn finish(&mut self) -> Result<()> {
        self.expect("?")?;
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(err(format!("trailing token `{t}`"))),
        }
    }
}

/// A parsed noun phrase: attribute constraints as words.
#[derive(Default)]
struct Np {
    size: Option<Size>,
    color: Option<Color>,
    shape: Option<Shape>,
}

impl Np {
    fn parse(c: &mut Cursor, plural: bool) -> Result<Self> {
        let mut np = Np::default();
        if let Some(s) = c.peek().and_then(|t| Size::ALL.into_iter().find(|s| s.word() == t)) {
            np.size = Some(s);
            c.pos += 1;
        }
        if let Some(col) = c.peek().and_then(|t| Color::ALL.into_iter().find(|x| x.word() == t)) {
            np.color = Some(col);
            c.pos += 1;
        }
        let head = c.next()?;
        let generic = if plural { "objects" } else { "object" };
        if head != generic {
            let shape = Shape::ALL
                .into_iter()
                .find(|s| (if plural { s.plural() } else { s.word() }) == head)
                .ok_or_else(|| err(format!("`{head}` is not a noun")))?;
            np.shape = Some(shape);
        }
        Ok(np)
    }

    fn holds(&self, o: &SceneObject) -> bool {
        self.size.map_or(true, |s| o.size == s)
            && self.color.map_or(true, |c| o.color == c)
            && self.shape.map_or(true, |s| o.shape == s)
    }

    fn select<'s>(&self, scene: &'s SceneSpec) -> Vec<&'s SceneObject> {
        scene.objects.iter().filter(|o| self.holds(o)).collect()
    }

    fn the<'s>(&self, scene: &'s SceneSpec) -> Result<&'s SceneObject> {
        match self.select(scene).as_slice() {
            [o] => Ok(o),
            v => Err(err(format!("definite reference matches {} objects", v.len()))),
        }
    }
}

/// `start|starts|stop|stops` followed by `moving|rotating`.
fn parse_event(c: &mut Cursor) -> Result<Action> {
    let verb = c.next()?;
    let what = c.next()?;
    let start = match verb {
        "start" | "starts" => true,
        "stop" | "stops" => false,
        v => return Err(err(format!("`{v}` is not an event verb"))),
    };
    match (start, what) {
        (true, "moving") => Ok(Action::StartMoving),
        (false, "moving") => Ok(Action::StopMoving),
        (true, "rotating") => Ok(Action::StartRotating),
        (false, "rotating") => Ok(Action::StopRotating),
        (_, w) => Err(err(format!("`{w}` is not an event kind"))),
    }
}

fn when(o: &SceneObject, a: Action) -> Option<usize> {
    o.events.iter().find(|e| e.action == a).map(|e| e.frame)
}

fn attribute_of(attr: &str, o: &SceneObject) -> Result<&'static str> {
    Ok(match attr {
        "color" => o.color.word(),
        "shape" => o.shape.word(),
        "size" => o.size.word(),
        a => return Err(err(format!("`{a}` is not an attribute"))),
    })
}

fn yn(b: bool) -> String {
    (if b { "yes" } else { "no" }).to_string()
}

/// Answer label for `tokens` on `scene`, or an error when the question is
/// malformed or its presuppositions fail.
pub fn answer(tokens: &[String], scene: &SceneSpec) -> Result<String> {
    let mut c = Cursor { toks: tokens, pos: 0 };
    let out = match c.next()? {
        "is" => {
            if c.accept("there") {
                c.expect("a")?;
                let np = Np::parse(&mut c, false)?;
                let ev = if c.accept("that") { Some(parse_event(&mut c)?) } else { None };
                let hit = np
                    .select(scene)
                    .iter()
                    .any(|o| ev.map_or(true, |a| when(o, a).is_some()));
                yn(hit)
            } else {
                c.expect("the")?;
                let a = Np::parse(&mut c, false)?.the(scene)?;
                c.expect("the same")?;
                let attr = c.next()?;
                c.expect("as the")?;
                let b = Np::parse(&mut c, false)?.the(scene)?;
                if std::ptr::eq(a, b) {
                    return Err(err("comparison of an object with itself"));
                }
                yn(attribute_of(attr, a)? == attribute_of(attr, b)?)
            }
        }
        "how" => {
            c.expect("many")?;
            let np = Np::parse(&mut c, true)?;
            let n = if c.accept("are") {
                c.expect("there")?;
                np.select(scene).len()
            } else {
                let a = parse_event(&mut c)?;
                np.select(scene).iter().filter(|o| when(o, a).is_some()).count()
            };
            n.to_string()
        }
        "what" => {
            let attr = c.next()?;
            c.expect("is the")?;
            let np = Np::parse(&mut c, false)?;
            if c.accept("that") {
                let a = parse_event(&mut c)?;
                c.expect("first")?;
                let mut timed: Vec<(usize, &SceneObject)> = np
                    .select(scene)
                    .into_iter()
                    .filter_map(|o| when(o, a).map(|f| (f, o)))
                    .collect();
                timed.sort_by_key(|(f, _)| *f);
                match timed.as_slice() {
                    [] => return Err(err("no object has that event")),
                    [(f0, _), (f1, _), ..] if f0 == f1 => return Err(err("no unique first object")),
                    [(_, o), ..] => attribute_of(attr, o)?.to_string(),
                }
            } else {
                attribute_of(attr, np.the(scene)?)?.to_string()
            }
        }
        "are" => {
            c.expect("there")?;
            let mode = c.next()?;
            if mode == "the" {
                c.expect("same number of")?;
            }
            let a = Np::parse(&mut c, true)?.select(scene).len();
            c.expect(if mode == "the" { "and" } else { "than" })?;
            let b = Np::parse(&mut c, true)?.select(scene).len();
            match mode {
                "more" => yn(a > b),
                "fewer" => yn(a < b),
                "the" => yn(a == b),
                m => return Err(err(format!("`{m}` is not a comparison"))),
            }
        }
        "does" => {
            c.expect("the")?;
            let a = Np::parse(&mut c, false)?.the(scene)?;
            let ea = parse_event(&mut c)?;
            let order = c.next()?;
            c.expect("the")?;
            let b = Np::parse(&mut c, false)?.the(scene)?;
            let eb = parse_event(&mut c)?;
            let fa = when(a, ea).ok_or_else(|| err("first event never happens"))?;
            let fb = when(b, eb).ok_or_else(|| err("second event never happens"))?;
            match order {
                "before" => yn(fa < fb),
                "after" => yn(fa > fb),
                o => return Err(err(format!("`{o}` is not an ordering"))),
            }
        }
        w => return Err(err(format!("cannot parse a question starting with `{w}`"))),
    };
    c.finish()?;
    Ok(out)
}
