//! The eleven-verb textual action grammar.
//!
//! Every action an agent, a dataset or a human intervener produces travels as
//! a single line in this grammar:
//!
//! ```text
//! CLICK <point>[[540, 1200]]</point>
//! TYPE [hotels in Paris]
//! SCROLL [UP]
//! OPEN_APP [Chrome]
//! LONG_PRESS <point>[[10, 20]]</point>
//! PRESS_BACK | PRESS_HOME | ENTER | WAIT | COMPLETE | IMPOSSIBLE
//! ```
//!
//! [`Action`] makes illegal argument combinations unrepresentable, apart from
//! the non-empty text requirement which [`Action::typed`] and
//! [`Action::open_app`] check.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("malformed action {input:?}: {reason}")]
    Malformed { input: String, reason: String },
}

impl ActionError {
    fn malformed(input: &str, reason: impl Into<String>) -> Self {
        ActionError::Malformed {
            input: input.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ActionKind {
    Click,
    Type,
    Scroll,
    PressBack,
    PressHome,
    Enter,
    OpenApp,
    Wait,
    LongPress,
    Complete,
    Impossible,
}

impl ActionKind {
    pub const ALL: [ActionKind; 11] = [
        ActionKind::Click,
        ActionKind::Type,
        ActionKind::Scroll,
        ActionKind::PressBack,
        ActionKind::PressHome,
        ActionKind::Enter,
        ActionKind::OpenApp,
        ActionKind::Wait,
        ActionKind::LongPress,
        ActionKind::Complete,
        ActionKind::Impossible,
    ];

    pub fn verb(self) -> &'static str {
        match self {
            ActionKind::Click => "CLICK",
            ActionKind::Type => "TYPE",
            ActionKind::Scroll => "SCROLL",
            ActionKind::PressBack => "PRESS_BACK",
            ActionKind::PressHome => "PRESS_HOME",
            ActionKind::Enter => "ENTER",
            ActionKind::OpenApp => "OPEN_APP",
            ActionKind::Wait => "WAIT",
            ActionKind::LongPress => "LONG_PRESS",
            ActionKind::Complete => "COMPLETE",
            ActionKind::Impossible => "IMPOSSIBLE",
        }
    }

    pub fn from_verb(verb: &str) -> Option<Self> {
        ActionKind::ALL.into_iter().find(|k| k.verb() == verb)
    }

    /// COMPLETE and IMPOSSIBLE end an episode.
    pub fn is_terminal(self) -> bool {
        matches!(self, ActionKind::Complete | ActionKind::Impossible)
    }

    pub fn has_point(self) -> bool {
        matches!(self, ActionKind::Click | ActionKind::LongPress)
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.verb())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "UP",
            Direction::Down => "DOWN",
            Direction::Left => "LEFT",
            Direction::Right => "RIGHT",
        }
    }
}

/// Absolute pixel position on the screenshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Point {
    pub x: u32,
    pub y: u32,
}

impl Point {
    pub fn new(x: u32, y: u32) -> Self {
        Point { x, y }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Click(Point),
    Type(String),
    Scroll(Direction),
    PressBack,
    PressHome,
    Enter,
    OpenApp(String),
    Wait,
    LongPress(Point),
    Complete,
    Impossible,
}

impl Action {
    pub fn click(x: u32, y: u32) -> Self {
        Action::Click(Point::new(x, y))
    }

    pub fn long_press(x: u32, y: u32) -> Self {
        Action::LongPress(Point::new(x, y))
    }

    /// A TYPE action; the text must be non-empty and single-line.
    pub fn typed(text: impl Into<String>) -> Result<Self, ActionError> {
        let text = text.into();
        check_text("TYPE", &text)?;
        Ok(Action::Type(text))
    }

    /// An OPEN_APP action; the name must be non-empty and single-line.
    pub fn open_app(name: impl Into<String>) -> Result<Self, ActionError> {
        let name = name.into();
        check_text("OPEN_APP", &name)?;
        Ok(Action::OpenApp(name))
    }

    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Click(_) => ActionKind::Click,
            Action::Type(_) => ActionKind::Type,
            Action::Scroll(_) => ActionKind::Scroll,
            Action::PressBack => ActionKind::PressBack,
            Action::PressHome => ActionKind::PressHome,
            Action::Enter => ActionKind::Enter,
            Action::OpenApp(_) => ActionKind::OpenApp,
            Action::Wait => ActionKind::Wait,
            Action::LongPress(_) => ActionKind::LongPress,
            Action::Complete => ActionKind::Complete,
            Action::Impossible => ActionKind::Impossible,
        }
    }

    pub fn point(&self) -> Option<Point> {
        match self {
            Action::Click(p) | Action::LongPress(p) => Some(*p),
            _ => None,
        }
    }

    pub fn text(&self) -> Option<&str> {
        match self {
            Action::Type(t) | Action::OpenApp(t) => Some(t),
            _ => None,
        }
    }

    pub fn direction(&self) -> Option<Direction> {
        match self {
            Action::Scroll(d) => Some(*d),
            _ => None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.kind().is_terminal()
    }

    /// Canonical single-line form.
    pub fn serialize(&self) -> String {
        self.to_string()
    }
}

fn check_text(verb: &str, text: &str) -> Result<(), ActionError> {
    if text.is_empty() {
        return Err(ActionError::malformed(text, format!("{verb} requires non-empty text")));
    }
    if text.contains(['\n', '\r']) {
        return Err(ActionError::malformed(text, format!("{verb} text must be a single line")));
    }
    Ok(())
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verb = self.kind().verb();
        match self {
            Action::Click(p) | Action::LongPress(p) => {
                write!(f, "{verb} <point>[[{}, {}]]</point>", p.x, p.y)
            }
            Action::Type(t) | Action::OpenApp(t) => write!(f, "{verb} [{t}]"),
            Action::Scroll(d) => write!(f, "{verb} [{}]", d.as_str()),
            _ => f.write_str(verb),
        }
    }
}

impl FromStr for Action {
    type Err = ActionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_action(s)
    }
}

/// Parses one action line. Surrounding whitespace is ignored; verbs are
/// case-sensitive.
pub fn parse_action(raw: &str) -> Result<Action, ActionError> {
    let line = raw.trim();
    if line.is_empty() {
        return Err(ActionError::malformed(raw, "empty input"));
    }
    if line.contains(['\n', '\r']) {
        return Err(ActionError::malformed(raw, "action must be a single line"));
    }

    let (verb, rest) = match line.find(char::is_whitespace) {
        Some(i) => (&line[..i], Some(line[i..].trim_start())),
        None => (line, None),
    };
    let kind = ActionKind::from_verb(verb)
        .ok_or_else(|| ActionError::malformed(raw, format!("unknown verb {verb:?}")))?;

    match (kind, rest) {
        (ActionKind::Click, Some(arg)) => Ok(Action::Click(parse_point(raw, arg)?)),
        (ActionKind::LongPress, Some(arg)) => Ok(Action::LongPress(parse_point(raw, arg)?)),
        (ActionKind::Type, Some(arg)) => {
            let text = bracketed(raw, arg)?;
            check_text("TYPE", text).map_err(|_| ActionError::malformed(raw, "TYPE requires non-empty text"))?;
            Ok(Action::Type(text.to_string()))
        }
        (ActionKind::OpenApp, Some(arg)) => {
            let name = bracketed(raw, arg)?;
            check_text("OPEN_APP", name)
                .map_err(|_| ActionError::malformed(raw, "OPEN_APP requires a non-empty app name"))?;
            Ok(Action::OpenApp(name.to_string()))
        }
        (ActionKind::Scroll, Some(arg)) => {
            let token = bracketed(raw, arg)?;
            Direction::ALL
                .into_iter()
                .find(|d| d.as_str() == token)
                .map(Action::Scroll)
                .ok_or_else(|| ActionError::malformed(raw, format!("unknown scroll direction {token:?}")))
        }
        (k, None) if k.has_point() || matches!(k, ActionKind::Type | ActionKind::OpenApp | ActionKind::Scroll) => {
            Err(ActionError::malformed(raw, format!("{verb} requires an argument")))
        }
        (_, Some(_)) => Err(ActionError::malformed(raw, format!("{verb} takes no arguments"))),
        (ActionKind::PressBack, None) => Ok(Action::PressBack),
        (ActionKind::PressHome, None) => Ok(Action::PressHome),
        (ActionKind::Enter, None) => Ok(Action::Enter),
        (ActionKind::Wait, None) => Ok(Action::Wait),
        (ActionKind::Complete, None) => Ok(Action::Complete),
        (ActionKind::Impossible, None) => Ok(Action::Impossible),
        (_, None) => unreachable!("argument-taking verbs handled above"),
    }
}

/// `[...]` argument; the text runs greedily to the final `]`.
fn bracketed<'a>(raw: &str, arg: &'a str) -> Result<&'a str, ActionError> {
    arg.strip_prefix('[')
        .and_then(|a| a.strip_suffix(']'))
        .ok_or_else(|| ActionError::malformed(raw, "expected a [bracketed] argument"))
}

fn parse_point(raw: &str, arg: &str) -> Result<Point, ActionError> {
    let inner = arg
        .strip_prefix("<point>")
        .and_then(|a| a.strip_suffix("</point>"))
        .map(str::trim)
        .and_then(|a| a.strip_prefix("[["))
        .and_then(|a| a.strip_suffix("]]"))
        .ok_or_else(|| ActionError::malformed(raw, "expected <point>[[x, y]]</point>"))?;
    let mut parts = inner.split(',');
    let (Some(x), Some(y), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(ActionError::malformed(raw, "point needs exactly two coordinates"));
    };
    Ok(Point::new(coordinate(raw, x)?, coordinate(raw, y)?))
}

fn coordinate(raw: &str, token: &str) -> Result<u32, ActionError> {
    let token = token.trim();
    if token.is_empty() || !token.bytes().all(|b| b.is_ascii_digit()) {
        return Err(ActionError::malformed(raw, format!("coordinate {token:?} is not a non-negative integer")));
    }
    token
        .parse()
        .map_err(|_| ActionError::malformed(raw, format!("coordinate {token:?} out of range")))
}

/// Inverse of [`parse_action`].
pub fn serialize_action(action: &Action) -> String {
    action.to_string()
}

// Actions are stored as grammar strings in every file format.
impl Serialize for Action {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        parse_action(&raw).map_err(serde::de::Error::custom)
    }
}
