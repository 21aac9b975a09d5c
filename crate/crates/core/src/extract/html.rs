//! HTML cleaning and snippet indexing.
//!
//! Parsing is delegated to html5ever (through `scraper`), whose tree builder
//! repairs malformed markup the way browsers do. The parsed tree is reduced to
//! a plain element/text tree with no attributes, scripts, styles, comments or
//! head content, and serialized back to markup. Snippets are read from that
//! cleaned markup so every XPath refers to the cleaned document.

use std::fmt::Write as _;

use ego_tree::NodeRef;
use scraper::{Html, Node};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalize_whitespace;

/// Maximum element nesting accepted before a document counts as unrecoverable.
pub const MAX_DEPTH: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HtmlError {
    #[error("document nesting exceeds {MAX_DEPTH} levels")]
    TooDeep,
    #[error("document contains binary content")]
    Binary,
}

/// Elements removed together with their whole subtree.
const DROPPED: &[&str] = &[
    "head", "script", "style", "noscript", "template", "iframe", "svg", "math", "canvas", "object", "embed", "link",
    "meta", "base", "title", "img", "picture", "video", "audio", "source", "track", "map", "input", "select", "option",
    "textarea",
];

const VOID: &[&str] = &["br", "hr", "wbr"];

/// Elements that own a snippet. Everything else is treated as inline and its
/// text is folded into the nearest enclosing block.
const BLOCKS: &[&str] = &[
    "html",
    "body",
    "div",
    "p",
    "li",
    "ol",
    "ul",
    "dl",
    "dt",
    "dd",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "table",
    "thead",
    "tbody",
    "tfoot",
    "tr",
    "td",
    "th",
    "caption",
    "pre",
    "blockquote",
    "section",
    "article",
    "aside",
    "header",
    "footer",
    "nav",
    "main",
    "figure",
    "figcaption",
    "address",
    "details",
    "summary",
    "form",
    "fieldset",
    "legend",
    "menu",
];

pub(crate) fn is_block(tag: &str) -> bool {
    BLOCKS.contains(&tag)
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum CleanChild {
    Element(CleanNode),
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct CleanNode {
    pub tag: String,
    pub children: Vec<CleanChild>,
}

impl CleanNode {
    pub fn elements(&self) -> impl Iterator<Item = &CleanNode> {
        self.children.iter().filter_map(|c| match c {
            CleanChild::Element(e) => Some(e),
            CleanChild::Text(_) => None,
        })
    }

    /// Text of this element and its inline descendants, stopping at nested blocks.
    pub fn own_text(&self) -> String {
        let mut out = String::new();
        self.collect_inline(&mut out);
        normalize_whitespace(&out)
    }

    /// All descendant text, blocks included.
    pub fn own_text_deep(&self) -> String {
        fn rec(n: &CleanNode, out: &mut String) {
            for c in &n.children {
                match c {
                    CleanChild::Text(t) => {
                        out.push(' ');
                        out.push_str(t);
                    }
                    CleanChild::Element(e) => rec(e, out),
                }
            }
        }
        let mut out = String::new();
        rec(self, &mut out);
        normalize_whitespace(&out)
    }

    fn collect_inline(&self, out: &mut String) {
        for child in &self.children {
            match child {
                CleanChild::Text(t) => out.push_str(t),
                CleanChild::Element(e) if e.tag == "br" => out.push(' '),
                CleanChild::Element(e) if !is_block(&e.tag) => e.collect_inline(out),
                CleanChild::Element(_) => out.push(' '),
            }
        }
    }
}

/// Sanitized markup that keeps the element hierarchy of the body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanedHtml {
    pub text: String,
    pub source_page_id: String,
}

/// One text-bearing block of a cleaned document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub index: usize,
    pub text: String,
    pub xpath: String,
}

fn convert(node: NodeRef<'_, Node>, depth: usize) -> Result<Option<CleanChild>, HtmlError> {
    if depth > MAX_DEPTH {
        return Err(HtmlError::TooDeep);
    }
    match node.value() {
        Node::Text(t) => {
            let text: &str = t;
            if text.trim().is_empty() {
                Ok(None)
            } else {
                Ok(Some(CleanChild::Text(text.to_string())))
            }
        }
        Node::Element(el) => {
            let tag = el.name().to_ascii_lowercase();
            if DROPPED.contains(&tag.as_str()) {
                return Ok(None);
            }
            let mut children = Vec::new();
            for child in node.children() {
                if let Some(c) = convert(child, depth + 1)? {
                    children.push(c);
                }
            }
            Ok(Some(CleanChild::Element(CleanNode { tag, children })))
        }
        _ => Ok(None),
    }
}

/// Parses markup into the reduced tree rooted at `<html>`.
pub(crate) fn parse_clean_tree(markup: &str) -> Result<CleanNode, HtmlError> {
    if markup.contains('\0') {
        return Err(HtmlError::Binary);
    }
    let doc = Html::parse_document(markup);
    let root = doc.root_element();
    let mut body = CleanNode { tag: "body".into(), children: Vec::new() };
    // html5ever always produces <html><head/><body/></html>; anything the tree
    // builder left outside <body> is folded into it.
    for child in root.children() {
        match convert(child, 1)? {
            Some(CleanChild::Element(e)) if e.tag == "body" => body.children.extend(e.children),
            Some(other) => body.children.push(other),
            None => {}
        }
    }
    Ok(CleanNode { tag: "html".into(), children: vec![CleanChild::Element(body)] })
}

fn escape_text(text: &str, out: &mut String) {
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            _ => out.push(c),
        }
    }
}

fn serialize(node: &CleanNode, out: &mut String) {
    let _ = write!(out, "<{}>", node.tag);
    if VOID.contains(&node.tag.as_str()) {
        return;
    }
    for child in &node.children {
        match child {
            CleanChild::Text(t) => escape_text(t, out),
            CleanChild::Element(e) => serialize(e, out),
        }
    }
    let _ = write!(out, "</{}>", node.tag);
}

pub fn clean_html(raw_html: &str, source_page_id: &str) -> Result<CleanedHtml, HtmlError> {
    let tree = parse_clean_tree(raw_html)?;
    let mut text = String::with_capacity(raw_html.len() / 2);
    serialize(&tree, &mut text);
    Ok(CleanedHtml { text, source_page_id: source_page_id.to_string() })
}

fn segment(parent: &CleanNode, child: &CleanNode) -> String {
    let same: Vec<&CleanNode> = parent.elements().filter(|e| e.tag == child.tag).collect();
    if same.len() > 1 {
        let pos = same.iter().position(|e| std::ptr::eq(*e, child)).expect("child of parent") + 1;
        format!("{}[{pos}]", child.tag)
    } else {
        child.tag.clone()
    }
}

/// Visits every element in document order with its absolute XPath.
pub(crate) fn walk_elements<'a>(root: &'a CleanNode, visit: &mut dyn FnMut(&'a CleanNode, &str)) {
    fn rec<'a>(node: &'a CleanNode, path: &str, visit: &mut dyn FnMut(&'a CleanNode, &str)) {
        visit(node, path);
        for child in node.elements() {
            let child_path = format!("{path}/{}", segment(node, child));
            rec(child, &child_path, visit);
        }
    }
    let path = format!("/{}", root.tag);
    rec(root, &path, visit);
}

fn snippets_of_tree(tree: &CleanNode) -> Vec<Snippet> {
    let mut snippets = Vec::new();
    walk_elements(tree, &mut |node, path| {
        if !is_block(&node.tag) {
            return;
        }
        let text = node.own_text();
        if !text.is_empty() {
            snippets.push(Snippet { index: snippets.len(), text, xpath: path.to_string() });
        }
    });
    snippets
}

/// One snippet per text-bearing block element, in document order.
pub fn index_snippets(doc: &CleanedHtml) -> Vec<Snippet> {
    match parse_clean_tree(&doc.text) {
        Ok(tree) => snippets_of_tree(&tree),
        // cleaned markup is produced by `clean_html` and always reparses
        Err(_) => Vec::new(),
    }
}

/// Number of elements of the cleaned document matched by an absolute XPath
/// of the form produced by [`index_snippets`].
pub fn count_xpath_matches(doc: &CleanedHtml, xpath: &str) -> usize {
    let Ok(tree) = parse_clean_tree(&doc.text) else { return 0 };
    let mut segments = xpath.trim_start_matches('/').split('/');
    let Some(first) = segments.next() else { return 0 };
    if first != tree.tag {
        return 0;
    }
    let mut current: Vec<&CleanNode> = vec![&tree];
    for seg in segments {
        let (tag, pos) = match seg.split_once('[') {
            Some((t, rest)) => (t, rest.trim_end_matches(']').parse::<usize>().ok()),
            None => (seg, None),
        };
        let mut next = Vec::new();
        for node in current {
            let same: Vec<&CleanNode> = node.elements().filter(|e| e.tag == tag).collect();
            match pos {
                Some(p) if p >= 1 && p <= same.len() => next.push(same[p - 1]),
                Some(_) => {}
                None => next.extend(same),
            }
        }
        current = next;
    }
    current.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clean(raw: &str) -> CleanedHtml {
        clean_html(raw, "p").unwrap()
    }

    #[test]
    fn scripts_and_head_are_removed() {
        let doc = clean("<html><head><script>x</script></head><body><ol><li>Tap A</li></ol></body></html>");
        assert_eq!(doc.text, "<html><body><ol><li>Tap A</li></ol></body></html>");
    }

    #[test]
    fn comments_styles_and_attributes_are_removed() {
        let doc = clean(
            "<body class='x'><!-- c --><style>p{}</style><div id=a><p style='y'>Hi <b>there</b></p></div></body>",
        );
        assert_eq!(doc.text, "<html><body><div><p>Hi <b>there</b></p></div></body></html>");
    }

    #[test]
    fn nested_hierarchy_is_preserved() {
        let doc = clean("<div><ol><li>One</li><li>Two</li></ol></div>");
        let snippets = index_snippets(&doc);
        let paths: Vec<&str> = snippets.iter().map(|s| s.xpath.as_str()).collect();
        assert_eq!(paths, vec!["/html/body/div/ol/li[1]", "/html/body/div/ol/li[2]"]);
    }

    #[test]
    fn empty_body_has_no_snippets() {
        assert!(index_snippets(&clean("<html><body></body></html>")).is_empty());
        assert!(index_snippets(&clean("")).is_empty());
    }

    #[test]
    fn three_list_items_get_positional_xpaths() {
        let doc = clean("<ol><li>Open Settings</li><li>Tap Sound</li><li>Tap Ringtone</li></ol>");
        let snippets = index_snippets(&doc);
        assert_eq!(snippets.len(), 3);
        for (i, s) in snippets.iter().enumerate() {
            assert_eq!(s.index, i);
            assert_eq!(s.xpath, format!("/html/body/ol/li[{}]", i + 1));
            assert_eq!(count_xpath_matches(&doc, &s.xpath), 1);
        }
    }

    #[test]
    fn inline_children_are_consolidated_into_their_block() {
        // Hand walk of the fixture DOM:
        //   body/div          -> "Intro" (its own text, the <p> is a nested block)
        //   body/div/p[1]     -> "Tap " + "Sound" + " now"
        //   body/div/p[2]     -> "Then " + "pick " + "Chime"
        //   body/div/p[2]/... inline only, no snippets of their own
        let doc = clean("<div>Intro<p>Tap <b>Sound</b> now</p><p>Then <span>pick <a href=x>Chime</a></span></p></div>");
        let got: Vec<(String, String)> = index_snippets(&doc).into_iter().map(|s| (s.xpath, s.text)).collect();
        let want = vec![
            ("/html/body/div".to_string(), "Intro".to_string()),
            ("/html/body/div/p[1]".to_string(), "Tap Sound now".to_string()),
            ("/html/body/div/p[2]".to_string(), "Then pick Chime".to_string()),
        ];
        assert_eq!(got, want);
    }

    #[test]
    fn malformed_markup_is_repaired() {
        let doc = clean("<ol><li>One<li>Two</ol><p>unclosed");
        let texts: Vec<String> = index_snippets(&doc).into_iter().map(|s| s.text).collect();
        assert_eq!(texts, vec!["One", "Two", "unclosed"]);
    }

    #[test]
    fn binary_and_pathologically_deep_input_fail() {
        assert_eq!(clean_html("a\0b", "p"), Err(HtmlError::Binary));
        let deep = "<div>".repeat(MAX_DEPTH + 10);
        assert_eq!(clean_html(&deep, "p"), Err(HtmlError::TooDeep));
    }

    #[test]
    fn cleaning_is_idempotent_on_a_table_document() {
        let raw = "<table><tr><td>A &amp; B</td><td>C</td></tr></table><p>x &lt; y</p>";
        let once = clean(raw);
        let twice = clean(&once.text);
        assert_eq!(once.text, twice.text);
        assert_eq!(index_snippets(&once), index_snippets(&twice));
    }
}
