// SPDX-License-Identifier: Apache-2.0

//! Device-tree source reader for the flattened subset produced by
//! decompiling a blob: nodes, properties, comments and labels.
//!
//! Headers (`/dts-v1/`), includes, overlays and delete directives are
//! rejected. Property values whose shape is not one of the typed forms
//! (for example cells holding `&label` references) are kept verbatim.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PropValue {
    Empty,
    Cells(Vec<u32>),
    String(String),
    StringList(Vec<String>),
    Bytes(Vec<u8>),
    /// Unrecognised shape, stored as the source text between `=` and `;`.
    Raw(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DtsProperty {
    pub name: String,
    pub value: PropValue,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DtsNode {
    pub name: String,
    pub properties: Vec<DtsProperty>,
    pub children: Vec<DtsNode>,
    pub phandle: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("unexpected end of input inside a node (missing '}}')")]
    UnclosedNode,
    #[error("unexpected '}}' with no open node")]
    UnexpectedClose,
    #[error("unterminated string")]
    UnterminatedString,
    #[error("unterminated comment")]
    UnterminatedComment,
    #[error("malformed cell list: {0}")]
    MalformedCells(String),
    #[error("malformed byte list: {0}")]
    MalformedBytes(String),
    #[error("unexpected {0}")]
    Unexpected(String),
    #[error("{0} is not supported")]
    Unsupported(&'static str),
    #[error("phandle {0:#x} is already used by another node")]
    DuplicatePhandle(u32),
    #[error("phandle and linux,phandle disagree")]
    ConflictingPhandle,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

impl PropValue {
    pub fn cells(&self) -> Option<&[u32]> {
        match self {
            Self::Cells(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Self::String(s) => Some(s),
            _ => None,
        }
    }
}

impl DtsNode {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), ..Self::default() }
    }

    pub fn property(&self, name: &str) -> Option<&DtsProperty> {
        self.properties.iter().find(|p| p.name == name)
    }

    pub fn value(&self, name: &str) -> Option<&PropValue> {
        self.property(name).map(|p| &p.value)
    }

    pub fn has(&self, name: &str) -> bool {
        self.property(name).is_some()
    }

    pub fn cells(&self, name: &str) -> Option<&[u32]> {
        self.value(name).and_then(PropValue::cells)
    }

    pub fn string(&self, name: &str) -> Option<&str> {
        self.value(name).and_then(PropValue::as_str)
    }

    pub fn child(&self, name: &str) -> Option<&DtsNode> {
        self.children.iter().find(|c| c.name == name)
    }

    /// Name without the unit address: `dma` for `dma@fd500000`.
    pub fn base_name(&self) -> &str {
        self.name.split('@').next().unwrap_or("")
    }

    /// First address in `reg`, assuming two address cells when the
    /// property holds three or more cells.
    pub fn reg_base(&self) -> Option<u64> {
        match self.cells("reg")? {
            [] => None,
            [a] | [a, _] => Some(u64::from(*a)),
            [hi, lo, ..] => Some((u64::from(*hi) << 32) | u64::from(*lo)),
        }
    }

    /// Pre-order traversal including `self`.
    pub fn descendants(&self) -> Descendants<'_> {
        Descendants { stack: vec![self] }
    }

    pub fn find_by_phandle(&self, phandle: u32) -> Option<&DtsNode> {
        self.descendants().find(|n| n.phandle == Some(phandle))
    }

    /// First node (pre-order) carrying property `name`.
    pub fn find_with(&self, name: &str) -> Option<&DtsNode> {
        self.descendants().find(|n| n.has(name))
    }
}

pub struct Descendants<'a> {
    stack: Vec<&'a DtsNode>,
}

impl<'a> Iterator for Descendants<'a> {
    type Item = &'a DtsNode;

    fn next(&mut self) -> Option<Self::Item> {
        let n = self.stack.pop()?;
        self.stack.extend(n.children.iter().rev());
        Some(n)
    }
}

fn write_escaped(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("\"")?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            '\t' => f.write_str("\\t")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

impl fmt::Display for PropValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Empty => Ok(()),
            Self::Cells(cells) => {
                f.write_str("<")?;
                for (i, c) in cells.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{c:#x}")?;
                }
                f.write_str(">")
            }
            Self::String(s) => write_escaped(f, s),
            Self::StringList(list) => {
                for (i, s) in list.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write_escaped(f, s)?;
                }
                Ok(())
            }
            Self::Bytes(bytes) => {
                f.write_str("[")?;
                for (i, b) in bytes.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{b:02x}")?;
                }
                f.write_str("]")
            }
            Self::Raw(text) => f.write_str(text),
        }
    }
}

impl fmt::Display for DtsProperty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value {
            PropValue::Empty => write!(f, "{};", self.name),
            ref v => write!(f, "{} = {v};", self.name),
        }
    }
}

impl DtsNode {
    fn write_body(&self, f: &mut fmt::Formatter<'_>, depth: usize) -> fmt::Result {
        let pad = "\t".repeat(depth);
        for p in &self.properties {
            writeln!(f, "{pad}{p}")?;
        }
        for c in &self.children {
            writeln!(f, "{pad}{} {{", c.name)?;
            c.write_body(f, depth + 1)?;
            writeln!(f, "{pad}}};")?;
        }
        Ok(())
    }
}

/// Serializes the root's contents at top level; reparsing yields an equal tree.
impl fmt::Display for DtsNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.name.is_empty() {
            self.write_body(f, 0)
        } else {
            writeln!(f, "{} {{", self.name)?;
            self.write_body(f, 1)?;
            writeln!(f, "}};")
        }
    }
}

/// Parses a source text into an unnamed root node. Top-level `/ { ... };`
/// blocks merge into the root.
pub fn parse_dts(text: &str) -> Result<DtsNode, ParseError> {
    let mut p = Parser { src: text, pos: 0, phandles: BTreeMap::new() };
    let mut root = DtsNode::default();
    p.body(&mut root, true)?;
    root.phandle = p.node_phandle(&root, 0)?;
    Ok(root)
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || ",._+*#?@-".contains(c)
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    phandles: BTreeMap<u32, usize>,
}

impl<'a> Parser<'a> {
    fn error_at(&self, pos: usize, kind: ParseErrorKind) -> ParseError {
        let before = &self.src[..pos.min(self.src.len())];
        let line = before.matches('\n').count() + 1;
        let col = before.rfind('\n').map_or(before.len(), |nl| before.len() - nl - 1) + 1;
        ParseError { line, col, kind }
    }

    fn error(&self, kind: ParseErrorKind) -> ParseError {
        self.error_at(self.pos, kind)
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) {
        if let Some(c) = self.peek() {
            self.pos += c.len_utf8();
        }
    }

    fn skip_ws(&mut self) -> Result<(), ParseError> {
        loop {
            let rest = self.rest();
            let trimmed = rest.trim_start();
            self.pos += rest.len() - trimmed.len();
            if trimmed.starts_with("//") {
                self.pos += trimmed.find('\n').unwrap_or(trimmed.len());
            } else if let Some(body) = trimmed.strip_prefix("/*") {
                let end = body
                    .find("*/")
                    .ok_or_else(|| self.error(ParseErrorKind::UnterminatedComment))?;
                self.pos += end + 4;
            } else {
                return Ok(());
            }
        }
    }

    fn name(&mut self) -> &'a str {
        let rest = self.rest();
        let len = rest.find(|c: char| !is_name_char(c)).unwrap_or(rest.len());
        self.pos += len;
        &rest[..len]
    }

    fn unexpected(&self) -> ParseError {
        let what = match self.peek() {
            Some(c) => format!("'{c}'"),
            None => "end of input".to_string(),
        };
        self.error(ParseErrorKind::Unexpected(what))
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.peek() == Some(c) {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected())
        }
    }

    fn directive(&self) -> Option<&'static str> {
        const DIRECTIVES: [(&str, &str); 7] = [
            ("/dts-v1/", "the /dts-v1/ header"),
            ("/include/", "/include/"),
            ("#include", "#include"),
            ("/plugin/", "overlay (/plugin/)"),
            ("/delete-node/", "/delete-node/"),
            ("/delete-property/", "/delete-property/"),
            ("/memreserve/", "/memreserve/"),
        ];
        DIRECTIVES.iter().find(|(d, _)| self.rest().starts_with(d)).map(|&(_, what)| what)
    }

    fn body(&mut self, node: &mut DtsNode, top: bool) -> Result<(), ParseError> {
        loop {
            self.skip_ws()?;
            if let Some(what) = self.directive() {
                return Err(self.error(ParseErrorKind::Unsupported(what)));
            }
            let start = self.pos;
            match self.peek() {
                None if top => return Ok(()),
                None => return Err(self.error(ParseErrorKind::UnclosedNode)),
                Some('}') if top => return Err(self.error(ParseErrorKind::UnexpectedClose)),
                Some('}') => {
                    self.bump();
                    self.skip_ws()?;
                    if self.peek() == Some(';') {
                        self.bump();
                    }
                    return Ok(());
                }
                Some('&') if top => {
                    return Err(self.error(ParseErrorKind::Unsupported("overlay (&label { ... })")))
                }
                Some('/') if top => {
                    self.bump();
                    self.skip_ws()?;
                    self.expect('{')?;
                    self.body(node, false)?;
                }
                _ => {
                    let name = self.name();
                    if name.is_empty() {
                        return Err(self.unexpected());
                    }
                    self.skip_ws()?;
                    match self.peek() {
                        // Labels are accepted and dropped.
                        Some(':') => self.bump(),
                        Some('{') => {
                            self.bump();
                            let mut child = DtsNode::new(name);
                            self.body(&mut child, false)?;
                            child.phandle = self.node_phandle(&child, start)?;
                            node.children.push(child);
                        }
                        Some('=') => {
                            self.bump();
                            let value = self.value()?;
                            node.properties.push(DtsProperty { name: name.to_string(), value });
                        }
                        Some(';') => {
                            self.bump();
                            node.properties
                                .push(DtsProperty { name: name.to_string(), value: PropValue::Empty });
                        }
                        _ => return Err(self.unexpected()),
                    }
                }
            }
        }
    }

    fn node_phandle(&mut self, node: &DtsNode, start: usize) -> Result<Option<u32>, ParseError> {
        let single = |name| match node.cells(name) {
            Some([v]) => Some(*v),
            _ => None,
        };
        let phandle = match (single("phandle"), single("linux,phandle")) {
            (Some(a), Some(b)) if a != b => {
                return Err(self.error_at(start, ParseErrorKind::ConflictingPhandle))
            }
            (a, b) => a.or(b),
        };
        if let Some(ph) = phandle {
            if self.phandles.insert(ph, start).is_some() {
                return Err(self.error_at(start, ParseErrorKind::DuplicatePhandle(ph)));
            }
        }
        Ok(phandle)
    }

    /// Parses everything up to and including the terminating `;`.
    fn value(&mut self) -> Result<PropValue, ParseError> {
        enum Item {
            Cells(Vec<u32>),
            Str(String),
            Bytes(Vec<u8>),
        }
        self.skip_ws()?;
        let start = self.pos;
        let mut items = Vec::new();
        let mut raw = false;
        loop {
            self.skip_ws()?;
            match self.peek() {
                Some('<') => match self.cells()? {
                    Some(c) => items.push(Item::Cells(c)),
                    None => raw = true,
                },
                Some('"') => items.push(Item::Str(self.string()?)),
                Some('[') => items.push(Item::Bytes(self.bytes()?)),
                None => return Err(self.unexpected()),
                Some(_) => {
                    raw = true;
                    self.skip_raw_item()?;
                }
            }
            self.skip_ws()?;
            match self.peek() {
                Some(',') => self.bump(),
                Some(';') => break,
                _ if raw => self.skip_raw_item()?,
                _ => return Err(self.unexpected()),
            }
        }
        let end = self.pos;
        self.bump();

        let text = self.src[start..end].trim_end();
        let all_cells = items.iter().all(|i| matches!(i, Item::Cells(_)));
        let all_strs = items.iter().all(|i| matches!(i, Item::Str(_)));
        let all_bytes = items.iter().all(|i| matches!(i, Item::Bytes(_)));
        Ok(if raw || items.is_empty() {
            PropValue::Raw(text.to_string())
        } else if all_cells {
            PropValue::Cells(
                items.into_iter().flat_map(|i| if let Item::Cells(c) = i { c } else { vec![] }).collect(),
            )
        } else if all_strs {
            let mut list: Vec<String> =
                items.into_iter().filter_map(|i| if let Item::Str(s) = i { Some(s) } else { None }).collect();
            if list.len() == 1 {
                PropValue::String(list.remove(0))
            } else {
                PropValue::StringList(list)
            }
        } else if all_bytes {
            PropValue::Bytes(
                items.into_iter().flat_map(|i| if let Item::Bytes(b) = i { b } else { vec![] }).collect(),
            )
        } else {
            PropValue::Raw(text.to_string())
        })
    }

    /// Advances past one token of an unrecognised value, stopping before
    /// `,` or `;`. Quoted strings are skipped whole.
    fn skip_raw_item(&mut self) -> Result<(), ParseError> {
        let mut depth = 0usize;
        loop {
            match self.peek() {
                None => return Err(self.unexpected()),
                Some('"') => {
                    self.string()?;
                }
                Some('<' | '(' | '[') => {
                    depth += 1;
                    self.bump();
                }
                Some('>' | ')' | ']') => {
                    depth = depth.saturating_sub(1);
                    self.bump();
                }
                Some(',' | ';') if depth == 0 => return Ok(()),
                Some('/') if self.rest().starts_with("/*") || self.rest().starts_with("//") => {
                    self.skip_ws()?
                }
                Some(_) => self.bump(),
            }
        }
    }

    /// `<...>`; `None` when the list holds references or expressions.
    fn cells(&mut self) -> Result<Option<Vec<u32>>, ParseError> {
        let open = self.pos;
        self.bump();
        let mut out = Vec::new();
        loop {
            self.skip_ws()?;
            let at = self.pos;
            match self.peek() {
                Some('>') => {
                    self.bump();
                    return Ok(Some(out));
                }
                Some('&' | '(' | '\'') => {
                    self.pos = open;
                    return Ok(None);
                }
                Some(c) if c.is_ascii_digit() => {
                    let tok = self.name();
                    let parsed = match tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")) {
                        Some(hex) => u32::from_str_radix(hex, 16),
                        None => tok.parse::<u32>(),
                    };
                    match parsed {
                        Ok(v) => out.push(v),
                        Err(_) => {
                            return Err(self.error_at(
                                at,
                                ParseErrorKind::MalformedCells(format!("bad cell '{tok}'")),
                            ))
                        }
                    }
                }
                None => {
                    return Err(self.error_at(
                        open,
                        ParseErrorKind::MalformedCells("missing '>'".to_string()),
                    ))
                }
                Some(c) => {
                    return Err(self.error(ParseErrorKind::MalformedCells(format!(
                        "unexpected '{c}'"
                    ))))
                }
            }
        }
    }

    fn string(&mut self) -> Result<String, ParseError> {
        let open = self.pos;
        self.bump();
        let mut out = String::new();
        loop {
            match self.peek() {
                None | Some('\n') => return Err(self.error_at(open, ParseErrorKind::UnterminatedString)),
                Some('"') => {
                    self.bump();
                    return Ok(out);
                }
                Some('\\') => {
                    self.bump();
                    match self.peek() {
                        None => return Err(self.error_at(open, ParseErrorKind::UnterminatedString)),
                        Some(c) => {
                            out.push(match c {
                                'n' => '\n',
                                't' => '\t',
                                c => c,
                            });
                            self.bump();
                        }
                    }
                }
                Some(c) => {
                    out.push(c);
                    self.bump();
                }
            }
        }
    }

    fn bytes(&mut self) -> Result<Vec<u8>, ParseError> {
        let open = self.pos;
        self.bump();
        let mut digits = String::new();
        loop {
            let run_start = self.pos;
            self.skip_ws()?;
            // Every whitespace-separated run must hold whole bytes.
            if !digits.len().is_multiple_of(2) && self.pos != run_start {
                return Err(self.error_at(run_start, ParseErrorKind::MalformedBytes("odd number of hex digits".into())));
            }
            match self.peek() {
                Some(']') => {
                    self.bump();
                    break;
                }
                Some(c) if c.is_ascii_hexdigit() => {
                    digits.push(c);
                    self.bump();
                }
                None => {
                    return Err(self.error_at(open, ParseErrorKind::MalformedBytes("missing ']'".into())))
                }
                Some(c) => {
                    return Err(self.error(ParseErrorKind::MalformedBytes(format!("unexpected '{c}'"))))
                }
            }
        }
        if !digits.len().is_multiple_of(2) {
            return Err(self.error_at(open, ParseErrorKind::MalformedBytes("odd number of hex digits".into())));
        }
        Ok((0..digits.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&digits[i..i + 2], 16).expect("hex digits"))
            .collect())
    }
}
