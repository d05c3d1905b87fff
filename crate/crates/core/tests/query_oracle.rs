mod common;

use licas::query::{eval_text, eval_xml, parse_query, Location, Mode, QueryError};
use proptest::prelude::*;

use common::*;

fn library_xml(q: &str, doc: &Node) -> Result<Vec<(String, String)>, ()> {
    let query = parse_query(q).unwrap();
    match eval_xml(&query, &doc.to_xml()) {
        Ok(r) => Ok(r
            .matches
            .into_iter()
            .map(|m| match m.location {
                Location::Element { path, .. } => (path, m.content),
                Location::Line(_) => unreachable!(),
            })
            .collect()),
        Err(QueryError::TypeMismatch(_)) => Err(()),
        Err(e) => panic!("unexpected error {e}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn xml_matches_oracle(doc in document(), q in xml_query_src()) {
        let query = parse_query(&q).unwrap();
        prop_assert_eq!(library_xml(&q, &doc), oracle_xml(&query, &doc), "query {}", q);
    }

    #[test]
    fn lines_match_oracle(lines in prop::collection::vec(prop::sample::select(TEXTS.to_vec()), 0..8), q in text_query_src()) {
        let query = parse_query(&q).unwrap();
        let lib = eval_text(&query, &lines).map(|r| {
            r.matches.into_iter().map(|m| match m.location {
                Location::Line(n) => (n, m.content),
                Location::Element { .. } => unreachable!(),
            }).collect::<Vec<_>>()
        }).map_err(|_| ());
        prop_assert_eq!(lib, oracle_lines(&query, &lines));
    }

    #[test]
    fn print_then_parse_is_identity(q in xml_query_src()) {
        let query = parse_query(&q).unwrap();
        prop_assert_eq!(parse_query(&query.to_string()).unwrap(), query);
    }

    /// AND never adds matches, OR never removes them.
    #[test]
    fn monotonicity(doc in document(), base in xml_query_src(), extra in "CONTAINS\\(\\., \"[a1c]\"\\)") {
        let base_q = if base.contains(" WHERE ") { base.clone() } else { format!("{base} WHERE CONTAINS(., \"\")") };
        let (head, cond) = base_q.split_once(" WHERE ").unwrap();
        let narrowed = format!("{head} WHERE ({cond}) AND {extra}");
        let widened = format!("{head} WHERE ({cond}) OR {extra}");
        if let (Ok(b), Ok(n), Ok(w)) = (library_xml(&base_q, &doc), library_xml(&narrowed, &doc), library_xml(&widened, &doc)) {
            prop_assert!(n.iter().all(|m| b.contains(m)));
            prop_assert!(b.iter().all(|m| w.contains(m)));
        }
    }
}

#[test]
fn examples() {
    let q = parse_query("MATCH /doc/item WHERE . > 3").unwrap();
    assert_eq!(q.mode, Mode::Xml);
    assert_eq!(q.pattern.len(), 2);
    assert_eq!(
        parse_query(r#"LINES WHERE CONTAINS(., "cat")"#).unwrap().mode,
        Mode::Text
    );
    assert!(matches!(parse_query("MATCH WHERE"), Err(QueryError::Syntax { .. })));

    let doc = "<doc><item>1</item><item>2</item></doc>";
    let all = eval_xml(&parse_query("MATCH /doc/item").unwrap(), doc).unwrap();
    assert_eq!(all.contents(), ["1", "2"]);
    let some = eval_xml(&parse_query("MATCH /doc/item WHERE . > 1").unwrap(), doc).unwrap();
    assert_eq!(some.contents(), ["2"]);
    let nested = "<doc><item>x</item><a><b>y</b></a></doc>";
    let star = eval_xml(&parse_query("MATCH /doc/*").unwrap(), nested).unwrap();
    assert_eq!(star.contents(), ["x", "y"]);
    assert!(!star.contents().contains(&"y") || star.matches.len() == 2);
    let deep = eval_xml(&parse_query("MATCH /doc/*/b").unwrap(), nested).unwrap();
    assert_eq!(deep.contents(), ["y"]);

    let lines = ["a cat", "dog", "CATS"];
    let cats = eval_text(&parse_query(r#"LINES WHERE CONTAINS(., "cat")"#).unwrap(), &lines).unwrap();
    assert_eq!(
        cats.matches.iter().map(|m| m.location.clone()).collect::<Vec<_>>(),
        [Location::Line(1), Location::Line(3)]
    );
    let dog = eval_text(&parse_query(r#"LINES WHERE . = "dog""#).unwrap(), &lines).unwrap();
    assert_eq!(dog.contents(), ["dog"]);
    let empty: [&str; 0] = [];
    assert!(eval_text(&parse_query("LINES").unwrap(), &empty).unwrap().is_empty());
    assert!(matches!(
        eval_xml(
            &parse_query("MATCH /doc/item WHERE . > 1").unwrap(),
            "<doc><item>x</item></doc>"
        ),
        Err(QueryError::TypeMismatch(_))
    ));
    assert!(matches!(
        eval_xml(&parse_query("MATCH /doc").unwrap(), "<doc>"),
        Err(QueryError::MalformedXml(_))
    ));
}
