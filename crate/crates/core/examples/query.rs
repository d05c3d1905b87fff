//! The query language over XML documents and over plain text lines.

use licas::query::{eval_text, eval_xml, parse_query};

fn main() {
    let doc = r#"<shop><item price="3">tea</item><item price="12">teapot</item><item price="7">cup</item></shop>"#;
    for q in [
        "MATCH /shop/item WHERE @price >= 5",
        "MATCH /shop/* WHERE CONTAINS(., \"TEA\")",
        "MATCH /shop/item WHERE NOT (@price < 10) OR . = \"cup\"",
    ] {
        let query = parse_query(q).unwrap();
        let result = eval_xml(&query, doc).unwrap();
        println!("{q}");
        for m in result.matches {
            println!("  {:?} {}", m.location, m.content);
        }
    }

    let lines = ["error: disk full", "info: ok", "error: retry 3"];
    let query = parse_query("LINES WHERE CONTAINS(., \"error\") AND NOT CONTAINS(., \"retry\")").unwrap();
    println!("{:?}", eval_text(&query, &lines).unwrap().contents());

    match eval_xml(&parse_query("MATCH /shop/item WHERE . > 1").unwrap(), doc) {
        Ok(r) => println!("{:?}", r.contents()),
        Err(e) => println!("type error: {e}"),
    }
    println!("{}", parse_query("MATCH /shop[").unwrap_err());
}
