use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::episodes::{Corpus, Post};
use crate::error::{Error, Result};
use crate::tagging::{decode_tags, parse_tags, Tag, TagSequence, NUM_TAGS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Conll,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "conll" => Ok(CorpusFormat::Conll),
            other => Err(Error::InvalidArgument(format!(
                "unknown corpus format `{other}` (expected jsonl or conll)"
            ))),
        }
    }
}

impl CorpusFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            CorpusFormat::Jsonl => "jsonl",
            CorpusFormat::Conll => "conll",
        }
    }
}

/// JSONL field names. Released corpora may name their fields differently.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldMap {
    pub tokens: String,
    pub tags: String,
    pub period: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        FieldMap {
            tokens: "tokens".into(),
            tags: "tags".into(),
            period: "period".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub posts: usize,
    pub labeled_posts: usize,
    pub posts_per_period: BTreeMap<String, usize>,
    pub span_count: usize,
    /// Token counts per tag, in `O, B, I, E, S` order.
    pub tag_histogram: [usize; NUM_TAGS],
}

pub fn summarize(corpus: &Corpus) -> CorpusSummary {
    let mut s = CorpusSummary {
        posts: corpus.len(),
        ..Default::default()
    };
    for post in &corpus.posts {
        *s.posts_per_period.entry(post.period.clone()).or_default() += 1;
        if let Some(tags) = &post.tags {
            s.labeled_posts += 1;
            s.span_count += decode_tags(tags).spans.len();
            for t in tags {
                s.tag_histogram[t.index()] += 1;
            }
        }
    }
    s
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<(Corpus, CorpusSummary)> {
    load_corpus_with(path, format, &FieldMap::default())
}

pub fn load_corpus_with(path: &Path, format: CorpusFormat, fields: &FieldMap) -> Result<(Corpus, CorpusSummary)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let corpus = parse_corpus(&text, format, fields, &path.display().to_string())?;
    let summary = summarize(&corpus);
    Ok((corpus, summary))
}

/// Parses corpus text. `source` labels error messages.
pub fn parse_corpus(text: &str, format: CorpusFormat, fields: &FieldMap, source: &str) -> Result<Corpus> {
    match format {
        CorpusFormat::Jsonl => parse_jsonl(text, fields, source),
        CorpusFormat::Conll => parse_conll(text, source),
    }
}

fn parse_err(source: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: source.to_string(),
        line,
        message: message.into(),
    }
}

fn check_post(post: &Post, source: &str, line: usize) -> Result<()> {
    if post.tokens.is_empty() {
        return Err(parse_err(source, line, "post has no tokens"));
    }
    if let Some(tags) = &post.tags {
        if tags.len() != post.tokens.len() {
            return Err(parse_err(
                source,
                line,
                format!("{} tokens but {} tags", post.tokens.len(), tags.len()),
            ));
        }
    }
    Ok(())
}

fn parse_jsonl(text: &str, fields: &FieldMap, source: &str) -> Result<Corpus> {
    let mut posts = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| parse_err(source, line, e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| parse_err(source, line, "record is not a JSON object"))?;
        let strings = |key: &str| -> Result<Option<Vec<String>>> {
            match obj.get(key) {
                None | Some(Value::Null) => Ok(None),
                Some(Value::Array(items)) => items
                    .iter()
                    .map(|v| {
                        v.as_str()
                            .map(str::to_string)
                            .ok_or_else(|| parse_err(source, line, format!("`{key}` must hold strings")))
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(Some),
                Some(_) => Err(parse_err(source, line, format!("`{key}` must be an array"))),
            }
        };
        let tokens = strings(&fields.tokens)?
            .ok_or_else(|| parse_err(source, line, format!("missing `{}`", fields.tokens)))?;
        let tags = match strings(&fields.tags)? {
            Some(t) => Some(parse_tags(&t).map_err(|e| parse_err(source, line, e.to_string()))?),
            None => None,
        };
        let period = obj
            .get(&fields.period)
            .and_then(Value::as_str)
            .ok_or_else(|| parse_err(source, line, format!("missing string `{}`", fields.period)))?
            .to_string();
        let post = Post { tokens, tags, period };
        check_post(&post, source, line)?;
        posts.push(post);
    }
    Ok(Corpus::new(posts))
}

fn parse_conll(text: &str, source: &str) -> Result<Corpus> {
    struct Pending {
        period: Option<String>,
        tokens: Vec<String>,
        tags: Vec<Tag>,
        labeled: Option<bool>,
        first_line: usize,
    }
    impl Pending {
        fn new(line: usize) -> Self {
            Pending {
                period: None,
                tokens: Vec::new(),
                tags: Vec::new(),
                labeled: None,
                first_line: line,
            }
        }
    }

    let mut posts = Vec::new();
    let mut cur = Pending::new(1);
    let flush = |cur: &mut Pending, posts: &mut Vec<Post>, next_line: usize| -> Result<()> {
        let done = std::mem::replace(cur, Pending::new(next_line));
        if done.tokens.is_empty() {
            if done.period.is_some() {
                return Err(parse_err(source, done.first_line, "period header without tokens"));
            }
            return Ok(());
        }
        let period = done
            .period
            .ok_or_else(|| parse_err(source, done.first_line, "post lacks a `# period:` header"))?;
        let post = Post {
            tokens: done.tokens,
            tags: if done.labeled == Some(true) { Some(done.tags) } else { None },
            period,
        };
        check_post(&post, source, done.first_line)?;
        posts.push(post);
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            flush(&mut cur, &mut posts, line + 1)?;
            continue;
        }
        if let Some(rest) = raw.strip_prefix('#') {
            let label = rest
                .trim()
                .strip_prefix("period:")
                .ok_or_else(|| parse_err(source, line, "unknown comment (expected `# period: <label>`)"))?
                .trim();
            if !cur.tokens.is_empty() {
                return Err(parse_err(source, line, "period header inside a post"));
            }
            cur.period = Some(label.to_string());
            cur.first_line = line;
            continue;
        }
        let mut cols = raw.split('\t');
        let token = cols.next().unwrap_or_default();
        let tag = cols.next();
        if cols.next().is_some() {
            return Err(parse_err(source, line, "expected `token<TAB>tag`"));
        }
        if token.is_empty() {
            return Err(parse_err(source, line, "empty token"));
        }
        let labeled = tag.is_some();
        if *cur.labeled.get_or_insert(labeled) != labeled {
            return Err(parse_err(source, line, "post mixes tagged and untagged lines"));
        }
        cur.tokens.push(token.to_string());
        if let Some(t) = tag {
            cur.tags.push(t.parse().map_err(|e: Error| parse_err(source, line, e.to_string()))?);
        }
    }
    let end = text.lines().count() + 1;
    flush(&mut cur, &mut posts, end)?;
    Ok(Corpus::new(posts))
}

#[derive(Serialize)]
struct JsonRecord<'a> {
    tokens: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    tags: Option<Vec<&'static str>>,
    period: &'a str,
}

fn tag_strings(tags: &TagSequence) -> Vec<&'static str> {
    tags.iter().map(|t| t.as_str()).collect()
}

/// Canonical text of a corpus in either format.
pub fn render_corpus(corpus: &Corpus, format: CorpusFormat) -> Result<String> {
    let mut out = String::new();
    for (i, post) in corpus.posts.iter().enumerate() {
        if post.tokens.iter().any(|t| t.is_empty() || t.contains(['\t', '\n', '\r'])) {
            return Err(Error::Data(format!("post {i} has a token that cannot be serialized")));
        }
        match format {
            CorpusFormat::Jsonl => {
                let rec = JsonRecord {
                    tokens: &post.tokens,
                    tags: post.tags.as_ref().map(tag_strings),
                    period: &post.period,
                };
                out.push_str(&serde_json::to_string(&rec)?);
                out.push('\n');
            }
            CorpusFormat::Conll => {
                let _ = writeln!(out, "# period: {}", post.period);
                for (j, tok) in post.tokens.iter().enumerate() {
                    match &post.tags {
                        Some(tags) => {
                            let _ = writeln!(out, "{tok}\t{}", tags[j]);
                        }
                        None => {
                            let _ = writeln!(out, "{tok}");
                        }
                    }
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}

pub fn save_corpus(corpus: &Corpus, path: &Path, format: CorpusFormat) -> Result<()> {
    let text = render_corpus(corpus, format)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One line of `decode` output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodedPost {
    pub post_index: usize,
    pub spans: Vec<[usize; 2]>,
    pub tags: Vec<String>,
}

impl DecodedPost {
    pub fn new(post_index: usize, tags: &[Tag]) -> Self {
        DecodedPost {
            post_index,
            spans: decode_tags(tags).spans.iter().map(|s| [s.start, s.end]).collect(),
            tags: tags.iter().map(|t| t.as_str().to_string()).collect(),
        }
    }
}
