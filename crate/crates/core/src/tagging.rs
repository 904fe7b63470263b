//! BIOES label codec.
//!
//! Tags are stored as integers `O=0, B=1, I=2, E=3, S=4`. That assignment is
//! written into checkpoints and must not change.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_TAGS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Tag {
    O = 0,
    B = 1,
    I = 2,
    E = 3,
    S = 4,
}

impl Tag {
    pub const ALL: [Tag; NUM_TAGS] = [Tag::O, Tag::B, Tag::I, Tag::E, Tag::S];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Tag> {
        Tag::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tag::O => "O",
            Tag::B => "B",
            Tag::I => "I",
            Tag::E => "E",
            Tag::S => "S",
        }
    }

    /// May a sequence start with this tag?
    pub fn can_start(self) -> bool {
        matches!(self, Tag::O | Tag::B | Tag::S)
    }

    /// May a sequence end with this tag?
    pub fn can_end(self) -> bool {
        matches!(self, Tag::O | Tag::E | Tag::S)
    }

    /// Is `self → next` allowed by the BIOES grammar?
    pub fn can_precede(self, next: Tag) -> bool {
        match self {
            Tag::O | Tag::E | Tag::S => matches!(next, Tag::O | Tag::B | Tag::S),
            Tag::B | Tag::I => matches!(next, Tag::I | Tag::E),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "O" => Ok(Tag::O),
            "B" => Ok(Tag::B),
            "I" => Ok(Tag::I),
            "E" => Ok(Tag::E),
            "S" => Ok(Tag::S),
            other => Err(Error::Data(format!("unknown tag `{other}`"))),
        }
    }
}

/// The tag mapping persisted alongside model parameters.
pub fn tag_mapping() -> Vec<(String, usize)> {
    Tag::ALL
        .iter()
        .map(|t| (t.as_str().to_string(), t.index()))
        .collect()
}

pub type TagSequence = Vec<Tag>;

pub fn parse_tags<S: AsRef<str>>(tags: &[S]) -> Result<TagSequence> {
    tags.iter().map(|t| t.as_ref().parse()).collect()
}

pub fn format_tags(tags: &[Tag]) -> String {
    tags.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(",")
}

/// Inclusive token range `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Encodes disjoint spans over a post of `length` tokens.
pub fn encode_spans(spans: &[Span], length: usize) -> Result<TagSequence> {
    let mut sorted = spans.to_vec();
    sorted.sort();
    for s in &sorted {
        if s.start > s.end || s.end >= length {
            return Err(Error::InvalidSpan {
                start: s.start,
                end: s.end,
                len: length,
            });
        }
    }
    for w in sorted.windows(2) {
        if w[1].start <= w[0].end {
            return Err(Error::OverlappingSpans(format!(
                "{}..={} and {}..={}",
                w[0].start, w[0].end, w[1].start, w[1].end
            )));
        }
    }
    let mut tags = vec![Tag::O; length];
    for s in sorted {
        if s.start == s.end {
            tags[s.start] = Tag::S;
        } else {
            tags[s.start] = Tag::B;
            tags[s.start + 1..s.end].fill(Tag::I);
            tags[s.end] = Tag::E;
        }
    }
    Ok(tags)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Decoded {
    pub spans: Vec<Span>,
    /// Set when the input was not a valid BIOES sequence and tokens were
    /// dropped.
    pub repaired: bool,
}

/// Extracts spans. Invalid input is repaired conservatively: a maximal
/// `B I* E` run is a span, a lone `S` is a span, and every other non-`O`
/// token is dropped.
pub fn decode_tags(tags: &[Tag]) -> Decoded {
    let mut out = Decoded::default();
    let mut i = 0;
    while i < tags.len() {
        match tags[i] {
            Tag::O => i += 1,
            Tag::S => {
                out.spans.push(Span::new(i, i));
                i += 1;
            }
            Tag::B => {
                let mut j = i + 1;
                while j < tags.len() && tags[j] == Tag::I {
                    j += 1;
                }
                if j < tags.len() && tags[j] == Tag::E {
                    out.spans.push(Span::new(i, j));
                    i = j + 1;
                } else {
                    out.repaired = true;
                    i += 1;
                }
            }
            Tag::I | Tag::E => {
                out.repaired = true;
                i += 1;
            }
        }
    }
    out
}

/// A grammar violation. `from` is `None` for a bad first tag and `to` is
/// `None` for a bad last tag; `position` is the index of `from` (or 0 for a
/// bad start).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub position: usize,
    pub from: Option<Tag>,
    pub to: Option<Tag>,
}

pub fn validate_transitions(tags: &[Tag]) -> Vec<Violation> {
    let mut out = Vec::new();
    let (Some(&first), Some(&last)) = (tags.first(), tags.last()) else {
        return out;
    };
    if !first.can_start() {
        out.push(Violation {
            position: 0,
            from: None,
            to: Some(first),
        });
    }
    for (i, w) in tags.windows(2).enumerate() {
        if !w[0].can_precede(w[1]) {
            out.push(Violation {
                position: i,
                from: Some(w[0]),
                to: Some(w[1]),
            });
        }
    }
    if !last.can_end() {
        out.push(Violation {
            position: tags.len() - 1,
            from: Some(last),
            to: None,
        });
    }
    out
}

pub fn is_valid(tags: &[Tag]) -> bool {
    validate_transitions(tags).is_empty()
}
