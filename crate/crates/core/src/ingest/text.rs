use scraper::node::Node;
use scraper::{ElementRef, Html};

/// Character budget for stored report text.
pub const REPORT_CHAR_LIMIT: usize = 4000;

/// First `limit` Unicode scalar values of `text`, and whether anything was cut.
pub fn truncate_text(text: &str, limit: usize) -> (String, bool) {
    match text.char_indices().nth(limit) {
        Some((byte, _)) => (text[..byte].to_string(), true),
        None => (text.to_string(), false),
    }
}

const SKIPPED: &[&str] = &[
    "script", "style", "noscript", "template", "head", "nav", "header", "footer", "aside",
    "iframe", "svg", "button", "select", "form",
];

const BLOCKS: &[&str] = &[
    "address", "article", "blockquote", "body", "br", "caption", "dd", "div", "dl", "dt",
    "fieldset", "h1", "h2", "h3", "h4", "h5", "h6", "hr", "li", "main", "ol", "p", "pre",
    "section", "table", "tbody", "td", "tfoot", "th", "thead", "tr", "ul",
];

/// Visible text of an HTML document: scripts, styles and page chrome removed,
/// one line per block element, whitespace inside a line collapsed.
pub fn visible_text(html: &str) -> String {
    let doc = Html::parse_document(html);
    let mut buf = String::new();
    walk(doc.root_element(), &mut buf);
    buf.lines()
        .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

fn walk(el: ElementRef<'_>, buf: &mut String) {
    let name = el.value().name();
    if SKIPPED.contains(&name) || el.value().attr("role") == Some("navigation") {
        return;
    }
    let block = BLOCKS.contains(&name);
    if block {
        buf.push('\n');
    }
    for child in el.children() {
        match child.value() {
            Node::Text(t) if name == "pre" => buf.push_str(t),
            Node::Text(t) => buf.extend(t.chars().map(|c| if c.is_whitespace() { ' ' } else { c })),
            Node::Element(_) => {
                if let Some(e) = ElementRef::wrap(child) {
                    walk(e, buf);
                }
            }
            _ => {}
        }
    }
    if block {
        buf.push('\n');
    } else if matches!(name, "span" | "a" | "b" | "i" | "em" | "strong" | "label") {
        // inline boundaries between adjacent cells of text
        if !buf.ends_with(char::is_whitespace) {
            buf.push(' ');
        }
    }
}
