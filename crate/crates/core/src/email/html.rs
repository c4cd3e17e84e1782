/// Tags whose open or close emits a line break.
const BLOCK_TAGS: &[&str] = &[
    "p",
    "div",
    "br",
    "tr",
    "li",
    "ul",
    "ol",
    "table",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "blockquote",
    "hr",
    "section",
    "article",
    "header",
    "footer",
];

/// Elements dropped together with their content.
const SKIP_TAGS: &[&str] = &["script", "style", "head", "title"];

fn tag_name(inner: &str) -> (bool, String) {
    let inner = inner.trim_start();
    let (closing, rest) = match inner.strip_prefix('/') {
        Some(r) => (true, r),
        None => (false, inner),
    };
    let name: String = rest
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase();
    (closing, name)
}

/// Converts HTML to plain text: tags stripped, `<script>`/`<style>` subtrees
/// dropped, block elements turned into newlines, entities unescaped and
/// non-breaking spaces folded into ordinary spaces.
pub fn html_to_text(html: &str) -> String {
    let mut out = String::with_capacity(html.len());
    let mut rest = html;
    let mut skipping: Option<String> = None;

    loop {
        if let Some(name) = skipping.take() {
            // Raw-text element: everything up to the matching close tag is dropped.
            let lower = rest.to_ascii_lowercase();
            let close = format!("</{name}");
            rest = match lower.find(&close) {
                Some(pos) => match rest[pos..].find('>') {
                    Some(gt) => &rest[pos + gt + 1..],
                    None => "",
                },
                None => "",
            };
            continue;
        }
        let Some(lt) = rest.find('<') else {
            out.push_str(rest);
            break;
        };
        out.push_str(&rest[..lt]);
        rest = &rest[lt..];

        if let Some(after) = rest.strip_prefix("<!--") {
            rest = match after.find("-->") {
                Some(end) => &after[end + 3..],
                None => "",
            };
            continue;
        }

        let Some(gt) = rest.find('>') else {
            // Unterminated tag: treat the remainder as markup.
            break;
        };
        let inner = &rest[1..gt];
        rest = &rest[gt + 1..];

        let (closing, name) = tag_name(inner);
        if !closing && SKIP_TAGS.contains(&name.as_str()) && !inner.trim_end().ends_with('/') {
            skipping = Some(name);
            continue;
        }
        if BLOCK_TAGS.contains(&name.as_str()) {
            out.push('\n');
        }
    }

    let unescaped = html_escape::decode_html_entities(&out).replace('\u{a0}', " ");
    let mut lines: Vec<&str> = unescaped.lines().map(str::trim_end).collect();
    // Collapse blank runs so block markup doesn't leave tall gaps.
    lines.dedup_by(|a, b| a.trim().is_empty() && b.trim().is_empty());
    lines.join("\n").trim().to_string()
}
