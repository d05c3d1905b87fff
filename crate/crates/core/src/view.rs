//! The `<network>` metadata document: services with their metadata and
//! nesting, plus every link. It is all a console or a peer ever sees of a
//! node.

use std::collections::BTreeMap;

use crate::links::{Link, LinkKind};
use crate::wire::format_real;
use crate::xml::{self, Element, XmlError};

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceView {
    pub id: String,
    pub kind: String,
    pub metadata: BTreeMap<String, String>,
    pub children: Vec<ServiceView>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetworkView {
    pub services: Vec<ServiceView>,
    pub links: Vec<Link>,
}

impl NetworkView {
    pub fn to_element(&self) -> Element {
        let mut root = Element::new("network");
        for s in &self.services {
            root.push(service_element(s));
        }
        for l in &self.links {
            let mut el = Element::new("link")
                .attr("kind", l.kind.as_str())
                .attr("from", &l.source)
                .attr("to", &l.target);
            if l.kind == LinkKind::Dynamic {
                el = el.attr("weight", format_real(l.weight));
            }
            root.push(el);
        }
        root
    }

    pub fn to_xml(&self) -> String {
        self.to_element().to_pretty_string()
    }

    pub fn parse(text: &str) -> Result<NetworkView, XmlError> {
        let root = xml::parse_element(text)?;
        if root.name != "network" {
            return Err(XmlError(format!("expected <network>, found <{}>", root.name)));
        }
        let mut view = NetworkView::default();
        for el in root.elements() {
            match el.name.as_str() {
                "service" => view.services.push(parse_service(el)?),
                "link" => view.links.push(parse_link(el)?),
                other => return Err(XmlError(format!("unexpected <{other}>"))),
            }
        }
        Ok(view)
    }

    /// Full paths of every service, depth first.
    pub fn service_paths(&self) -> Vec<String> {
        fn walk(prefix: &str, services: &[ServiceView], out: &mut Vec<String>) {
            for s in services {
                let path = if prefix.is_empty() {
                    s.id.clone()
                } else {
                    format!("{prefix}/{}", s.id)
                };
                out.push(path.clone());
                walk(&path, &s.children, out);
            }
        }
        let mut out = Vec::new();
        walk("", &self.services, &mut out);
        out
    }

    pub fn find(&self, path: &str) -> Option<&ServiceView> {
        let mut level = &self.services;
        let mut found = None;
        for seg in path.split('/') {
            let s = level.iter().find(|s| s.id == seg)?;
            level = &s.children;
            found = Some(s);
        }
        found
    }
}

fn service_element(s: &ServiceView) -> Element {
    let mut el = Element::new("service").attr("id", &s.id).attr("kind", &s.kind);
    for (k, v) in &s.metadata {
        el.push(Element::new("meta").attr("key", k).attr("value", v));
    }
    for c in &s.children {
        el.push(service_element(c));
    }
    el
}

fn required<'a>(el: &'a Element, key: &str) -> Result<&'a str, XmlError> {
    el.get(key)
        .ok_or_else(|| XmlError(format!("<{}> lacks attribute {key:?}", el.name)))
}

fn parse_service(el: &Element) -> Result<ServiceView, XmlError> {
    let mut view = ServiceView {
        id: required(el, "id")?.to_string(),
        kind: required(el, "kind")?.to_string(),
        metadata: BTreeMap::new(),
        children: Vec::new(),
    };
    for child in el.elements() {
        match child.name.as_str() {
            "meta" => {
                view.metadata.insert(
                    required(child, "key")?.to_string(),
                    required(child, "value")?.to_string(),
                );
            }
            "service" => view.children.push(parse_service(child)?),
            other => return Err(XmlError(format!("unexpected <{other}> in <service>"))),
        }
    }
    Ok(view)
}

fn parse_link(el: &Element) -> Result<Link, XmlError> {
    let kind: LinkKind = required(el, "kind")?.parse().map_err(|e| XmlError(format!("{e}")))?;
    let weight = match el.get("weight") {
        Some(w) => w
            .parse::<f64>()
            .map_err(|_| XmlError(format!("bad link weight {w:?}")))?,
        None => 1.0,
    };
    Ok(Link {
        kind,
        source: required(el, "from")?.to_string(),
        target: required(el, "to")?.to_string(),
        weight,
    })
}
