//! Small owned XML element tree with a canonical writer.
//!
//! Parsing is delegated to `roxmltree`; this module adds a nesting guard in
//! front of it (deeply nested input would otherwise exhaust the stack) and a
//! deterministic emitter used by the network view, config documents and
//! manifests. Attributes are always written in lexicographic order.

use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Element nesting accepted by [`parse_document`].
pub const MAX_ELEMENT_DEPTH: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed XML: {0}")]
pub struct XmlError(pub String);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Element(Element),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Element {
    pub name: String,
    pub attrs: BTreeMap<String, String>,
    pub children: Vec<Node>,
}

impl Element {
    pub fn new(name: impl Into<String>) -> Self {
        Element {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn attr(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attrs.insert(key.into(), value.into());
        self
    }

    pub fn child(mut self, child: Element) -> Self {
        self.children.push(Node::Element(child));
        self
    }

    pub fn text(mut self, text: impl Into<String>) -> Self {
        let text = text.into();
        if !text.is_empty() {
            self.children.push(Node::Text(text));
        }
        self
    }

    pub fn push(&mut self, child: Element) {
        self.children.push(Node::Element(child));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).map(String::as_str)
    }

    pub fn elements(&self) -> impl Iterator<Item = &Element> {
        self.children.iter().filter_map(|n| match n {
            Node::Element(e) => Some(e),
            Node::Text(_) => None,
        })
    }

    pub fn elements_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Element> + 'a {
        self.elements().filter(move |e| e.name == name)
    }

    /// Concatenated text of the direct text children.
    pub fn text_content(&self) -> String {
        self.children
            .iter()
            .filter_map(|n| match n {
                Node::Text(t) => Some(t.as_str()),
                Node::Element(_) => None,
            })
            .collect()
    }

    /// Writes the element in indented canonical form.
    ///
    /// Elements holding only text are written inline. Empty elements with
    /// attributes self-close; empty elements without attributes are written
    /// as an open/close pair.
    pub fn to_pretty_string(&self) -> String {
        let mut out = String::new();
        self.write_pretty(&mut out, 0);
        out
    }

    fn write_pretty(&self, out: &mut String, indent: usize) {
        for _ in 0..indent {
            out.push_str("  ");
        }
        out.push('<');
        out.push_str(&self.name);
        for (k, v) in &self.attrs {
            let _ = write!(out, " {}=\"{}\"", k, escape_attr(v));
        }
        if self.children.is_empty() {
            if self.attrs.is_empty() {
                let _ = write!(out, "></{}>", self.name);
            } else {
                out.push_str("/>");
            }
            return;
        }
        out.push('>');
        let element_only = self.children.iter().all(|n| matches!(n, Node::Element(_)));
        if element_only {
            for child in self.elements() {
                out.push('\n');
                child.write_pretty(out, indent + 1);
            }
            out.push('\n');
            for _ in 0..indent {
                out.push_str("  ");
            }
        } else {
            for child in &self.children {
                match child {
                    Node::Text(t) => out.push_str(&escape_text(t)),
                    Node::Element(e) => e.write_compact(out),
                }
            }
        }
        let _ = write!(out, "</{}>", self.name);
    }

    fn write_compact(&self, out: &mut String) {
        out.push('<');
        out.push_str(&self.name);
        for (k, v) in &self.attrs {
            let _ = write!(out, " {}=\"{}\"", k, escape_attr(v));
        }
        if self.children.is_empty() && !self.attrs.is_empty() {
            out.push_str("/>");
            return;
        }
        out.push('>');
        for child in &self.children {
            match child {
                Node::Text(t) => out.push_str(&escape_text(t)),
                Node::Element(e) => e.write_compact(out),
            }
        }
        let _ = write!(out, "</{}>", self.name);
    }

    fn from_node(node: roxmltree::Node<'_, '_>, keep_whitespace: bool) -> Element {
        let mut element = Element::new(node.tag_name().name());
        for attr in node.attributes() {
            element.attrs.insert(attr.name().to_string(), attr.value().to_string());
        }
        for child in node.children() {
            if child.is_element() {
                element
                    .children
                    .push(Node::Element(Element::from_node(child, keep_whitespace)));
            } else if child.is_text() {
                let text = child.text().unwrap_or_default();
                if keep_whitespace || !text.trim().is_empty() {
                    match element.children.last_mut() {
                        Some(Node::Text(prev)) => prev.push_str(text),
                        _ => element.children.push(Node::Text(text.to_string())),
                    }
                }
            }
        }
        element
    }
}

/// Parses `text` into an owned tree, dropping whitespace-only text nodes.
pub fn parse_element(text: &str) -> Result<Element, XmlError> {
    let doc = parse_document(text)?;
    Ok(Element::from_node(doc.root_element(), false))
}

/// Parses with the nesting guard applied first.
pub fn parse_document(text: &str) -> Result<roxmltree::Document<'_>, XmlError> {
    check_depth(text, MAX_ELEMENT_DEPTH)?;
    roxmltree::Document::parse(text).map_err(|e| XmlError(e.to_string()))
}

/// Conservative scan of element nesting that runs before the real parser.
pub fn check_depth(text: &str, limit: usize) -> Result<(), XmlError> {
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'<' {
            i += 1;
            continue;
        }
        let rest = &bytes[i..];
        if rest.starts_with(b"<!--") {
            i += find(rest, b"-->").map_or(bytes.len(), |p| p + 3);
            continue;
        }
        if rest.starts_with(b"<![CDATA[") {
            i += find(rest, b"]]>").map_or(bytes.len(), |p| p + 3);
            continue;
        }
        if rest.starts_with(b"<?") || rest.starts_with(b"<!") {
            i += find(rest, b">").map_or(bytes.len(), |p| p + 1);
            continue;
        }
        let closing = rest.get(1) == Some(&b'/');
        // find the end of the tag, skipping quoted attribute values
        let mut j = 1;
        let mut quote: Option<u8> = None;
        while j < rest.len() {
            let c = rest[j];
            match quote {
                Some(q) if c == q => quote = None,
                Some(_) => {}
                None if c == b'"' || c == b'\'' => quote = Some(c),
                None if c == b'>' => break,
                None => {}
            }
            j += 1;
        }
        let self_closing = j > 1 && rest.get(j - 1) == Some(&b'/');
        if closing {
            depth = depth.saturating_sub(1);
        } else if !self_closing {
            depth += 1;
            if depth > limit {
                return Err(XmlError(format!("nesting deeper than {limit}")));
            }
        }
        i += j + 1;
    }
    Ok(())
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

pub fn escape_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '\r' => out.push_str("&#13;"),
            _ => out.push(c),
        }
    }
    out
}

pub fn escape_attr(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\r' => out.push_str("&#13;"),
            '\n' => out.push_str("&#10;"),
            '\t' => out.push_str("&#9;"),
            _ => out.push(c),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pretty_round_trip_is_a_fixpoint() {
        let e = Element::new("network")
            .child(
                Element::new("service")
                    .attr("kind", "echo")
                    .attr("id", "A")
                    .child(Element::new("meta").attr("key", "k").text("a < b")),
            )
            .child(Element::new("link").attr("from", "A").attr("to", "B"));
        let text = e.to_pretty_string();
        let back = parse_element(&text).unwrap();
        assert_eq!(back, e);
        assert_eq!(back.to_pretty_string(), text);
    }

    #[test]
    fn empty_without_attrs_uses_pair() {
        assert_eq!(Element::new("network").to_pretty_string(), "<network></network>");
        assert_eq!(Element::new("x").attr("a", "1").to_pretty_string(), "<x a=\"1\"/>");
    }

    #[test]
    fn depth_guard_rejects_deep_nesting() {
        let deep = "<a>".repeat(300) + &"</a>".repeat(300);
        assert!(parse_document(&deep).is_err());
        let ok = "<a>".repeat(100) + &"</a>".repeat(100);
        assert!(parse_document(&ok).is_ok());
    }

    #[test]
    fn depth_guard_ignores_markup_in_attributes_and_comments() {
        let s = r#"<a x="<b>"><!-- <c><c><c> --><d/></a>"#;
        check_depth(s, 2).unwrap();
    }

    #[test]
    fn attribute_whitespace_survives() {
        let e = Element::new("m").attr("k", "a\tb\nc\rd");
        let back = parse_element(&e.to_pretty_string()).unwrap();
        assert_eq!(back.get("k"), Some("a\tb\nc\rd"));
    }
}
