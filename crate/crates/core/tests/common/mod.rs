#![allow(dead_code)]

use std::collections::BTreeMap;

use licas::query::{CmpOp, Expr, Mode, Operand, Query, Step};
use licas::solver::{fitness, Dataset};
use licas::{MethodCall, ServicePath, Value};
use proptest::prelude::*;

// ---------------------------------------------------------------- wire generators

/// Characters XML 1.0 can carry.
pub fn xml_char() -> impl Strategy<Value = char> {
    any::<char>().prop_filter("xml char", |c| {
        matches!(*c, '\t' | '\n' | '\r' | '\u{20}'..='\u{D7FF}' | '\u{E000}'..='\u{FFFD}' | '\u{10000}'..='\u{10FFFF}')
    })
}

pub fn xml_string(max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(xml_char(), 0..max).prop_map(|v| v.into_iter().collect())
}

pub fn leaf_value() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(Value::Int),
        any::<f64>()
            .prop_filter("not NaN", |f| !f.is_nan())
            .prop_map(Value::Real),
        xml_string(12).prop_map(Value::Text),
        prop::collection::vec(any::<u8>(), 0..16).prop_map(Value::Binary),
        Just(Value::Null),
    ]
}

/// Values nesting lists and maps up to `depth` levels.
pub fn value(depth: u32) -> impl Strategy<Value = Value> {
    leaf_value().prop_recursive(depth, 64, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(Value::List),
            prop::collection::btree_map(xml_string(6), inner, 0..4).prop_map(Value::Map),
        ]
    })
}

pub fn segment() -> impl Strategy<Value = String> {
    "[A-Za-z0-9_.~é -]{1,8}".prop_filter("not a dot segment", |s| s != "." && s != "..")
}

pub fn method_call(depth: u32) -> impl Strategy<Value = MethodCall> {
    (
        prop::collection::vec(segment(), 1..4),
        "[a-zA-Z][a-zA-Z0-9_]{0,10}",
        xml_string(10),
        prop::collection::vec(value(depth), 0..4),
    )
        .prop_map(|(segs, method, password, args)| {
            MethodCall::new(ServicePath::from_segments(segs).unwrap(), method)
                .password(password)
                .args(args)
        })
}

/// Nesting depth of a value; scalars are depth 0.
pub fn depth(v: &Value) -> usize {
    match v {
        Value::List(items) => 1 + items.iter().map(depth).max().unwrap_or(0),
        Value::Map(m) => 1 + m.values().map(depth).max().unwrap_or(0),
        _ => 0,
    }
}

// ---------------------------------------------------------------- query oracle

/// A document tree owned by the test, rendered to XML for the library.
#[derive(Debug, Clone)]
pub struct Node {
    pub name: String,
    pub attrs: BTreeMap<String, String>,
    pub content: Vec<Content>,
}

#[derive(Debug, Clone)]
pub enum Content {
    Text(String),
    Child(Node),
}

pub const NAMES: [&str; 3] = ["a", "b", "c"];
pub const TEXTS: [&str; 9] = ["1", "2.5", "-3", "10", "abc", "Cat", "x1", " 7 ", "1e1"];
pub const ATTRS: [&str; 2] = ["k", "n"];

impl Node {
    pub fn to_xml(&self) -> String {
        let mut s = format!("<{}", self.name);
        for (k, v) in &self.attrs {
            s.push_str(&format!(
                " {k}=\"{}\"",
                v.replace('&', "&amp;").replace('<', "&lt;").replace('"', "&quot;")
            ));
        }
        s.push('>');
        for c in &self.content {
            match c {
                Content::Text(t) => s.push_str(&t.replace('&', "&amp;").replace('<', "&lt;")),
                Content::Child(n) => s.push_str(&n.to_xml()),
            }
        }
        s.push_str(&format!("</{}>", self.name));
        s
    }

    pub fn text(&self) -> String {
        self.content
            .iter()
            .map(|c| match c {
                Content::Text(t) => t.clone(),
                Content::Child(n) => n.text(),
            })
            .collect()
    }

    pub fn count(&self) -> usize {
        1 + self
            .content
            .iter()
            .map(|c| match c {
                Content::Child(n) => n.count(),
                Content::Text(_) => 0,
            })
            .sum::<usize>()
    }
}

fn node_strategy() -> impl Strategy<Value = Node> {
    let attrs = prop::collection::btree_map(
        prop::sample::select(ATTRS.to_vec()).prop_map(str::to_string),
        prop::sample::select(TEXTS.to_vec()).prop_map(str::to_string),
        0..2,
    );
    let leaf = (
        prop::sample::select(NAMES.to_vec()),
        attrs.clone(),
        prop::option::of(prop::sample::select(TEXTS.to_vec())),
    )
        .prop_map(|(name, attrs, text)| Node {
            name: name.to_string(),
            attrs,
            content: text.into_iter().map(|t| Content::Text(t.to_string())).collect(),
        });
    leaf.prop_recursive(3, 30, 4, move |inner| {
        (
            prop::sample::select(NAMES.to_vec()),
            attrs.clone(),
            prop::collection::vec(
                prop_oneof![
                    3 => inner.prop_map(Content::Child),
                    1 => prop::sample::select(TEXTS.to_vec()).prop_map(|t| Content::Text(t.to_string())),
                ],
                0..4,
            ),
        )
            .prop_map(|(name, attrs, content)| Node {
                name: name.to_string(),
                attrs,
                content,
            })
    })
}

/// Documents with at most 30 elements and depth at most 4.
pub fn document() -> impl Strategy<Value = Node> {
    node_strategy().prop_filter("at most 30 elements", |n| n.count() <= 30)
}

fn operand_src(attrs: bool) -> impl Strategy<Value = String> {
    let mut pool = vec![
        ".".to_string(),
        "1".into(),
        "2.5".into(),
        "-3".into(),
        "10".into(),
        "0".into(),
    ];
    pool.extend(TEXTS.iter().map(|t| format!("\"{t}\"")));
    if attrs {
        pool.extend(ATTRS.iter().map(|a| format!("@{a}")));
    }
    prop::sample::select(pool)
}

fn expr_src(attrs: bool) -> impl Strategy<Value = String> {
    let atom = prop_oneof![
        (
            operand_src(attrs),
            prop::sample::select(vec!["=", "!=", "<", "<=", ">", ">="]),
            operand_src(attrs)
        )
            .prop_map(|(a, op, b)| format!("{a} {op} {b}")),
        (operand_src(attrs), operand_src(attrs)).prop_map(|(a, b)| format!("CONTAINS({a}, {b})")),
    ];
    atom.prop_recursive(3, 12, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) AND ({b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) OR ({b})")),
            inner.prop_map(|a| format!("NOT ({a})")),
        ]
    })
}

/// Query source text in MATCH form.
pub fn xml_query_src() -> impl Strategy<Value = String> {
    (
        prop::collection::vec(
            prop_oneof![
                prop::sample::select(NAMES.to_vec()).prop_map(str::to_string),
                Just("*".to_string())
            ],
            1..5,
        ),
        prop::option::of(expr_src(true)),
    )
        .prop_map(|(steps, expr)| {
            let mut q = format!("MATCH /{}", steps.join("/"));
            if let Some(e) = expr {
                q.push_str(&format!(" WHERE {e}"));
            }
            q
        })
}

/// Query source text in LINES form.
pub fn text_query_src() -> impl Strategy<Value = String> {
    prop::option::of(expr_src(false)).prop_map(|e| match e {
        Some(e) => format!("LINES WHERE {e}"),
        None => "LINES".to_string(),
    })
}

struct Ctx<'a> {
    text: String,
    attrs: Option<&'a BTreeMap<String, String>>,
}

fn oracle_number(op: &Operand, s: &str) -> Option<f64> {
    if let Operand::Num(n) = op {
        return Some(*n);
    }
    let t = s.trim();
    if t.is_empty() || t.chars().any(|c| c.is_ascii_alphabetic() && c != 'e' && c != 'E') {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn oracle_operand(op: &Operand, ctx: &Ctx) -> Option<String> {
    match op {
        Operand::Context => Some(ctx.text.clone()),
        Operand::Attr(a) => ctx.attrs.and_then(|m| m.get(a).cloned()),
        Operand::Str(s) => Some(s.clone()),
        Operand::Num(n) => Some(format!("{n:?}")),
    }
}

/// Independent evaluator: `Err(())` stands for a type mismatch.
fn oracle_expr(e: &Expr, ctx: &Ctx) -> Result<bool, ()> {
    match e {
        Expr::And(a, b) => Ok(oracle_expr(a, ctx)? && oracle_expr(b, ctx)?),
        Expr::Or(a, b) => Ok(oracle_expr(a, ctx)? || oracle_expr(b, ctx)?),
        Expr::Not(a) => Ok(!oracle_expr(a, ctx)?),
        Expr::Contains(a, b) => match (oracle_operand(a, ctx), oracle_operand(b, ctx)) {
            (Some(h), Some(n)) => Ok(h.to_lowercase().contains(&n.to_lowercase())),
            _ => Ok(false),
        },
        Expr::Compare(a, op, b) => {
            let (Some(l), Some(r)) = (oracle_operand(a, ctx), oracle_operand(b, ctx)) else {
                return Ok(false);
            };
            let (x, y) = (oracle_number(a, &l), oracle_number(b, &r));
            match op {
                CmpOp::Eq | CmpOp::Ne => {
                    let eq = match (x, y) {
                        (Some(x), Some(y)) => x == y,
                        _ => l == r,
                    };
                    Ok((*op == CmpOp::Eq) == eq)
                }
                _ => {
                    let (Some(x), Some(y)) = (x, y) else { return Err(()) };
                    Ok(match op {
                        CmpOp::Lt => x < y,
                        CmpOp::Le => x <= y,
                        CmpOp::Gt => x > y,
                        _ => x >= y,
                    })
                }
            }
        }
    }
}

/// Enumerate every element with its root-to-element name path and
/// positional path, then filter.
pub fn oracle_xml(q: &Query, doc: &Node) -> Result<Vec<(String, String)>, ()> {
    assert_eq!(q.mode, Mode::Xml);
    fn walk<'a>(n: &'a Node, names: &mut Vec<String>, pos: String, out: &mut Vec<(Vec<String>, String, &'a Node)>) {
        names.push(n.name.clone());
        out.push((names.clone(), pos.clone(), n));
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for c in &n.content {
            if let Content::Child(child) = c {
                let i = seen.entry(child.name.as_str()).or_insert(0);
                *i += 1;
                walk(child, names, format!("{pos}/{}[{}]", child.name, i), out);
            }
        }
        names.pop();
    }
    let mut all = Vec::new();
    walk(doc, &mut Vec::new(), format!("/{}[1]", doc.name), &mut all);
    let mut out = Vec::new();
    for (names, pos, node) in all {
        let matches = names.len() == q.pattern.len()
            && names.iter().zip(&q.pattern).all(|(n, s)| match s {
                Step::Any => true,
                Step::Name(x) => x == n,
            });
        if !matches {
            continue;
        }
        let ctx = Ctx {
            text: node.text(),
            attrs: Some(&node.attrs),
        };
        let keep = match &q.constraint {
            None => true,
            Some(e) => oracle_expr(e, &ctx)?,
        };
        if keep {
            out.push((pos, ctx.text));
        }
    }
    Ok(out)
}

pub fn oracle_lines(q: &Query, lines: &[&str]) -> Result<Vec<(usize, String)>, ()> {
    let mut out = Vec::new();
    for (i, l) in lines.iter().enumerate() {
        let ctx = Ctx {
            text: l.to_string(),
            attrs: None,
        };
        let keep = match &q.constraint {
            None => true,
            Some(e) => oracle_expr(e, &ctx)?,
        };
        if keep {
            out.push((i + 1, l.to_string()));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- solver oracle

pub const WORDS: [&str; 6] = ["red", "blue", "apple", "sky", "stone", "river"];

/// Bag-of-words cosine, computed without the library.
pub fn oracle_similarity(a: &str, b: &str) -> f64 {
    let bag = |s: &str| {
        let mut m: BTreeMap<String, f64> = BTreeMap::new();
        for w in s.split_whitespace() {
            *m.entry(w.to_lowercase()).or_insert(0.0) += 1.0;
        }
        m
    };
    let (x, y) = (bag(a), bag(b));
    let dot: f64 = x.iter().map(|(k, v)| v * y.get(k).copied().unwrap_or(0.0)).sum();
    let nx = x.values().map(|v| v * v).sum::<f64>().sqrt();
    let ny = y.values().map(|v| v * v).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        0.0
    } else {
        dot / (nx * ny)
    }
}

pub fn oracle_fitness(assignment: &[usize], texts: &[String]) -> f64 {
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0, 0.0, 0);
    for i in 0..texts.len() {
        for j in i + 1..texts.len() {
            let s = oracle_similarity(&texts[i], &texts[j]);
            if assignment[i] == assignment[j] {
                intra += s;
                ni += 1;
            } else {
                inter += s;
                nx += 1;
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    mean(intra, ni) - mean(inter, nx)
}

/// Every assignment of `n` entries to `groups` groups.
pub fn all_assignments(n: usize, groups: usize) -> Vec<Vec<usize>> {
    let total = groups.pow(n as u32);
    (0..total)
        .map(|mut k| {
            (0..n)
                .map(|_| {
                    let g = k % groups;
                    k /= groups;
                    g
                })
                .collect()
        })
        .collect()
}

/// Exhaustive optimum, scored with the library's fitness so that GA and
/// optimum are compared on identical arithmetic.
pub fn brute_force_optimum(dataset: &Dataset, groups: usize) -> f64 {
    all_assignments(dataset.len(), groups)
        .iter()
        .map(|a| fitness(a, dataset).unwrap())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Random dataset of `n` texts with 1 to 4 words each.
pub fn random_texts(rng: &mut impl rand::Rng, n: usize) -> Vec<String> {
    (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=4);
            (0..len)
                .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

// ---------------------------------------------------------------- services

pub fn path(s: &str) -> ServicePath {
    ServicePath::parse(s).unwrap()
}

pub fn call(p: &str, method: &str) -> MethodCall {
    MethodCall::new(path(p), method)
}

// ---------------------------------------------------------------- networks

pub const CATALOGUE_MANIFEST: &str = r#"<module>
  <kind name="catalogue" base="information">
    <meta key="topic" value="pets"/>
    <container kind="id"><resource id="r1" kind="text">cat and dog</resource></container>
  </kind>
</module>"#;

/// Twelve services (one an unknown-kind placeholder), nesting depth 3,
/// all three link kinds, autonomic slots, a file root and a peer.
pub fn rich_network(files: &std::path::Path) -> (licas::Registry, licas::admin::ServiceFactory) {
    use licas::admin::{apply_config, ConfigDocument, Declaration, ServiceFactory};
    use licas::autonomic::{SlotSpec, Stage};
    use licas::links::{LinkDynamics, LinkKind};
    use licas::xml::Element;

    let registry = licas::Registry::new();
    let mut factory = ServiceFactory::new();
    factory.load_manifest_text(CATALOGUE_MANIFEST).unwrap();

    let placeholder = ConfigDocument::parse(
        r#"<licasNetwork version="1"><service id="Exotic" kind="exotic"><meta key="note" value="from elsewhere"/></service></licasNetwork>"#,
    )
    .unwrap();
    let report = apply_config(&placeholder, &registry, &factory);
    assert_eq!(report.placeholders.len(), 1);

    registry
        .set_dynamics(LinkDynamics {
            decay_factor: 0.8,
            ..LinkDynamics::default()
        })
        .unwrap();
    registry.file_roots().write().add("pub", files).unwrap();
    registry.register_peer("http://127.0.0.1:9").unwrap();

    let top = [
        Declaration::new("Echo", "echo").meta("owner", "ops & \"friends\""),
        Declaration::new("Count", "counter"),
        Declaration::new("Beh", "behaviour").config(Element::new("text").text("red sky")),
        Declaration::new("Info", "catalogue").meta("topic", "animals"),
        Declaration::new("Files", "file"),
        Declaration::new("Table", "table").config(Element::new("op").attr("name", "greet").attr("returns", "s:hi")),
        Declaration::new("Hub", "echo"),
        Declaration::new("Other", "echo"),
        Declaration::new("Extra", "counter").meta("colour", "blue"),
    ];
    for mut d in top {
        if d.id == "Echo" {
            d.password = licas::registry::PasswordDigest::from_plain("s3cret");
        }
        registry
            .add_service(factory.instantiate(&d, &registry).unwrap())
            .unwrap();
    }
    let hub = path("Hub");
    let mid = registry
        .nest_service(
            &hub,
            factory
                .instantiate(&Declaration::new("Mid", "counter"), &registry)
                .unwrap(),
        )
        .unwrap();
    registry
        .nest_service(
            &mid,
            factory
                .instantiate(&Declaration::new("Leaf", "echo"), &registry)
                .unwrap(),
        )
        .unwrap();

    let manager = registry.manager(&path("Beh")).unwrap();
    manager.install_slot(
        Stage::Monitor,
        SlotSpec::new("threshold").attr("limit", "5").build().unwrap(),
    );
    manager.install_slot(
        Stage::Plan,
        SlotSpec::new("rule")
            .attr("action", "adjust-metadata")
            .attr("param-key", "state")
            .attr("param-value", "busy")
            .build()
            .unwrap(),
    );
    manager.install_slot(Stage::Execute, SlotSpec::new("whitelist").build().unwrap());

    registry.add_link(LinkKind::Permanent, "Echo", "Count").unwrap();
    registry
        .add_link(LinkKind::Association, "Hub/Mid/Leaf", "Info")
        .unwrap();
    registry
        .add_link(LinkKind::Association, "Echo", "http://127.0.0.1:9/service/Far/Away")
        .unwrap();
    for _ in 0..4 {
        registry.record_use("Hub", "Other").unwrap();
    }
    registry.record_use("Other", "Hub").unwrap();
    registry.decay_epoch();
    registry.restore_dynamic_link("Info", "Exotic", 4.5).unwrap();
    (registry, factory)
}

// ---------------------------------------------------------------- file confinement

pub const SECRET: &str = "TOP-SECRET-OUTSIDE";

/// `<tmp>/root` (registered as `pub`) next to `<tmp>/outside`, with a
/// symlink inside the root pointing out.
pub fn sandbox() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("root");
    std::fs::create_dir_all(root.join("sub")).unwrap();
    std::fs::write(root.join("inside.txt"), "inside").unwrap();
    std::fs::write(root.join("sub/deep.txt"), "deep").unwrap();
    std::fs::create_dir_all(tmp.path().join("outside")).unwrap();
    std::fs::write(tmp.path().join("outside/secret.txt"), SECRET).unwrap();
    std::fs::write(tmp.path().join("secret.txt"), SECRET).unwrap();
    #[cfg(unix)]
    std::os::unix::fs::symlink(tmp.path().join("outside"), root.join("link")).unwrap();
    tmp
}

/// Pieces that traversal attempts are assembled from.
pub const PIECES: [&str; 24] = [
    "..",
    "%2e%2e",
    "%2E%2E",
    ".%2e",
    "%2e.",
    "%2f",
    "%2F",
    "%5c",
    "..%2f",
    "..%5c",
    "%2e%2e%2f",
    "",
    ".",
    "sub",
    "inside.txt",
    "secret.txt",
    "outside",
    "link",
    "%00",
    "..\\..",
    "%252e%252e",
    "/etc/passwd",
    "~",
    "C:",
];

pub fn traversal() -> impl Strategy<Value = String> {
    (
        prop::sample::select(vec!["pub/", "pub", "", "/", "nope/", "pub//", "%70ub/"]),
        prop::collection::vec(prop::sample::select(PIECES.to_vec()), 1..7),
    )
        .prop_map(|(alias, parts)| format!("{alias}{}", parts.join("/")))
}

pub fn assert_confined(bytes: &[u8]) {
    let text = String::from_utf8_lossy(bytes);
    assert!(!text.contains(SECRET), "escaped the root");
    assert!(text == "inside" || text == "deep", "unexpected content {text:?}");
}
