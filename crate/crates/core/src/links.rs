//! Permanent, dynamic and association links between services.
//!
//! Dynamic links are never added directly. Each `record_use(source, target)`
//! adds `reinforce` to the pair's accumulator (capped at `weight_cap`); once
//! the accumulator reaches `create_threshold` a dynamic link with that
//! weight appears. `decay_epoch` multiplies every accumulator by
//! `decay_factor` and forgets pairs that fall below `exist_threshold`,
//! removing their link along with them.
//!
//! The table itself does not know which services exist; the registry checks
//! endpoints before calling in.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LinkKind {
    Permanent,
    Dynamic,
    Association,
}

impl LinkKind {
    pub const ALL: [LinkKind; 3] = [LinkKind::Permanent, LinkKind::Dynamic, LinkKind::Association];

    pub fn as_str(self) -> &'static str {
        match self {
            LinkKind::Permanent => "permanent",
            LinkKind::Dynamic => "dynamic",
            LinkKind::Association => "association",
        }
    }
}

impl fmt::Display for LinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LinkKind {
    type Err = LinkError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "permanent" => Ok(LinkKind::Permanent),
            "dynamic" => Ok(LinkKind::Dynamic),
            "association" => Ok(LinkKind::Association),
            other => Err(LinkError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub kind: LinkKind,
    pub source: String,
    pub target: String,
    /// Usage weight for dynamic links; 1.0 for the fixed kinds.
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkDynamics {
    pub reinforce: f64,
    pub decay_factor: f64,
    pub create_threshold: f64,
    pub exist_threshold: f64,
    pub weight_cap: f64,
}

impl Default for LinkDynamics {
    fn default() -> Self {
        LinkDynamics {
            reinforce: 1.0,
            decay_factor: 0.9,
            create_threshold: 3.0,
            exist_threshold: 1.0,
            weight_cap: 100.0,
        }
    }
}

impl LinkDynamics {
    pub fn validate(&self) -> Result<(), LinkError> {
        let ok = self.reinforce > 0.0
            && self.decay_factor > 0.0
            && self.decay_factor < 1.0
            && self.exist_threshold <= self.create_threshold
            && self.create_threshold <= self.weight_cap
            && [
                self.reinforce,
                self.create_threshold,
                self.exist_threshold,
                self.weight_cap,
            ]
            .iter()
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(LinkError::BadConfig(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LinkError {
    #[error("no such service: {0}")]
    NoSuchService(String),
    #[error("duplicate {kind} link {from} -> {to}")]
    DuplicateLink { kind: LinkKind, from: String, to: String },
    #[error("dynamic links are created by use, not added")]
    WrongKind,
    #[error("unknown link kind {0:?}")]
    UnknownKind(String),
    #[error("invalid link dynamics {0}")]
    BadConfig(String),
}

type Pair = (String, String);

#[derive(Debug, Clone, Default)]
pub struct LinkTable {
    dynamics: LinkDynamics,
    fixed: BTreeSet<(LinkKind, String, String)>,
    accumulators: BTreeMap<Pair, f64>,
    dynamic: BTreeSet<Pair>,
}

impl LinkTable {
    pub fn new(dynamics: LinkDynamics) -> Result<Self, LinkError> {
        dynamics.validate()?;
        Ok(LinkTable {
            dynamics,
            ..Default::default()
        })
    }

    pub fn dynamics(&self) -> LinkDynamics {
        self.dynamics
    }

    pub fn set_dynamics(&mut self, dynamics: LinkDynamics) -> Result<(), LinkError> {
        dynamics.validate()?;
        self.dynamics = dynamics;
        Ok(())
    }

    pub fn add(&mut self, kind: LinkKind, source: &str, target: &str) -> Result<Link, LinkError> {
        if kind == LinkKind::Dynamic {
            return Err(LinkError::WrongKind);
        }
        let key = (kind, source.to_string(), target.to_string());
        if !self.fixed.insert(key) {
            return Err(LinkError::DuplicateLink {
                kind,
                from: source.to_string(),
                to: target.to_string(),
            });
        }
        Ok(Link {
            kind,
            source: source.to_string(),
            target: target.to_string(),
            weight: 1.0,
        })
    }

    /// Reinforces the pair and returns its accumulated weight.
    pub fn record_use(&mut self, source: &str, target: &str) -> f64 {
        let pair = (source.to_string(), target.to_string());
        let cap = self.dynamics.weight_cap;
        let acc = self.accumulators.entry(pair.clone()).or_insert(0.0);
        *acc = (*acc + self.dynamics.reinforce).min(cap);
        let weight = *acc;
        if weight >= self.dynamics.create_threshold {
            self.dynamic.insert(pair);
        }
        weight
    }

    /// Restores a dynamic link with a known weight (config loading).
    pub fn restore_dynamic(&mut self, source: &str, target: &str, weight: f64) -> Result<Link, LinkError> {
        let pair = (source.to_string(), target.to_string());
        if self.dynamic.contains(&pair) {
            return Err(LinkError::DuplicateLink {
                kind: LinkKind::Dynamic,
                from: pair.0,
                to: pair.1,
            });
        }
        let weight = weight.min(self.dynamics.weight_cap);
        self.accumulators.insert(pair.clone(), weight);
        self.dynamic.insert(pair);
        Ok(Link {
            kind: LinkKind::Dynamic,
            source: source.to_string(),
            target: target.to_string(),
            weight,
        })
    }

    /// Applies one decay step and returns how many dynamic links vanished.
    pub fn decay_epoch(&mut self) -> usize {
        let factor = self.dynamics.decay_factor;
        let exist = self.dynamics.exist_threshold;
        let mut removed = 0;
        self.accumulators.retain(|pair, acc| {
            *acc *= factor;
            if *acc < exist {
                if self.dynamic.remove(pair) {
                    removed += 1;
                }
                false
            } else {
                true
            }
        });
        removed
    }

    /// Current accumulator for a pair, whether or not a link exists yet.
    pub fn weight(&self, source: &str, target: &str) -> Option<f64> {
        self.accumulators
            .get(&(source.to_string(), target.to_string()))
            .copied()
    }

    pub fn has_dynamic(&self, source: &str, target: &str) -> bool {
        self.dynamic.contains(&(source.to_string(), target.to_string()))
    }

    /// Every link in (kind, source, target) order.
    pub fn all(&self) -> Vec<Link> {
        let mut out: Vec<Link> = self
            .fixed
            .iter()
            .map(|(kind, s, t)| Link {
                kind: *kind,
                source: s.clone(),
                target: t.clone(),
                weight: 1.0,
            })
            .chain(self.dynamic.iter().map(|(s, t)| Link {
                kind: LinkKind::Dynamic,
                source: s.clone(),
                target: t.clone(),
                weight: self.accumulators.get(&(s.clone(), t.clone())).copied().unwrap_or(0.0),
            }))
            .collect();
        out.sort_by(|a, b| (a.kind, &a.source, &a.target).cmp(&(b.kind, &b.source, &b.target)));
        out
    }

    pub fn links_of(&self, endpoint: &str, kind: Option<LinkKind>) -> Vec<Link> {
        self.all()
            .into_iter()
            .filter(|l| l.source == endpoint || l.target == endpoint)
            .filter(|l| kind.map_or(true, |k| l.kind == k))
            .collect()
    }

    /// Drops every link and accumulator touching an endpoint matched by `pred`.
    pub fn remove_incident(&mut self, pred: impl Fn(&str) -> bool) -> usize {
        let before = self.fixed.len() + self.dynamic.len();
        self.fixed.retain(|(_, s, t)| !pred(s) && !pred(t));
        self.dynamic.retain(|(s, t)| !pred(s) && !pred(t));
        self.accumulators.retain(|(s, t), _| !pred(s) && !pred(t));
        before - self.fixed.len() - self.dynamic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixed.is_empty() && self.dynamic.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> LinkTable {
        LinkTable::new(LinkDynamics::default()).unwrap()
    }

    #[test]
    fn link_appears_on_third_use() {
        let mut t = table();
        assert_eq!(t.record_use("A", "B"), 1.0);
        assert_eq!(t.record_use("A", "B"), 2.0);
        assert!(!t.has_dynamic("A", "B"));
        assert_eq!(t.record_use("A", "B"), 3.0);
        assert!(t.has_dynamic("A", "B"));
        assert!(!t.has_dynamic("B", "A"));
    }

    #[test]
    fn decays_away_after_eleven_epochs() {
        let mut t = table();
        for _ in 0..3 {
            t.record_use("A", "B");
        }
        // 3.0 * 0.9^10 = 1.046..., 3.0 * 0.9^11 = 0.941...
        for _ in 0..10 {
            assert_eq!(t.decay_epoch(), 0);
        }
        assert!(t.has_dynamic("A", "B"));
        assert_eq!(t.decay_epoch(), 1);
        assert!(t.all().is_empty());
    }

    #[test]
    fn weight_is_capped() {
        let mut t = table();
        let mut w = 0.0;
        for _ in 0..1_000_000 {
            w = t.record_use("A", "B");
        }
        assert_eq!(w, 100.0);
    }

    #[test]
    fn fixed_links_ignore_decay() {
        let mut t = table();
        t.add(LinkKind::Permanent, "A", "B").unwrap();
        t.add(LinkKind::Association, "A", "C").unwrap();
        for _ in 0..500 {
            t.decay_epoch();
        }
        assert_eq!(t.all().len(), 2);
        assert_eq!(table().decay_epoch(), 0);
    }

    #[test]
    fn add_rules() {
        let mut t = table();
        t.add(LinkKind::Association, "A", "B").unwrap();
        assert!(matches!(
            t.add(LinkKind::Association, "A", "B"),
            Err(LinkError::DuplicateLink { .. })
        ));
        t.add(LinkKind::Permanent, "A", "B").unwrap();
        assert_eq!(t.add(LinkKind::Dynamic, "A", "B"), Err(LinkError::WrongKind));
        assert_eq!(t.links_of("B", Some(LinkKind::Permanent)).len(), 1);
        assert!(t.links_of("B", Some(LinkKind::Dynamic)).is_empty());
    }

    #[test]
    fn remove_incident_clears_everything() {
        let mut t = table();
        t.add(LinkKind::Permanent, "A", "B").unwrap();
        for _ in 0..3 {
            t.record_use("C", "A");
        }
        t.add(LinkKind::Permanent, "C", "D").unwrap();
        assert_eq!(t.remove_incident(|p| p == "A"), 2);
        assert_eq!(t.all().len(), 1);
        assert_eq!(t.weight("C", "A"), None);
    }

    #[test]
    fn rejects_inconsistent_dynamics() {
        let bad = LinkDynamics {
            exist_threshold: 5.0,
            ..Default::default()
        };
        assert!(LinkTable::new(bad).is_err());
        let bad = LinkDynamics {
            decay_factor: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
