//! Grouping services by the text they hold.
//!
//! A [`Mediator`] gathers text from services (local or on peers) into a
//! [`Dataset`] of term vectors. [`run_ga`] searches for the assignment of
//! entries to groups that maximizes [`fitness`], and [`Mediator::apply_solution`]
//! writes the result back as link reinforcement plus a `group` metadata key.
//! [`Mediator::distributed_link_pass`] is the lightweight alternative that
//! only ever compares two entries at a time.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::registry::{Registry, ServiceRef};
use crate::wire::{ServicePath, Value};
use crate::xml::{self, Element};

pub type TermVector = BTreeMap<String, u32>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("no source produced any text")]
    EmptyDataset,
    #[error("assignment has {got} genes, dataset has {expected} entries")]
    LengthMismatch { expected: usize, got: usize },
    #[error("bad solver config: {0}")]
    BadConfig(String),
    #[error("script error: {0}")]
    Script(String),
}

/// Lowercased alphanumeric runs; everything else separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn term_vector(text: &str) -> TermVector {
    let mut v = TermVector::new();
    for t in tokenize(text) {
        *v.entry(t).or_insert(0) += 1;
    }
    v
}

/// Cosine similarity of term counts; 0 when either side is empty.
pub fn similarity(a: &TermVector, b: &TermVector) -> f64 {
    let dot: f64 = a
        .iter()
        .filter_map(|(k, x)| b.get(k).map(|y| f64::from(*x) * f64::from(*y)))
        .sum();
    let squares = |v: &TermVector| v.values().map(|x| f64::from(*x).powi(2)).sum::<f64>();
    let (na, nb) = (squares(a), squares(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb).sqrt()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    /// Service reference, or `text:<n>` for inline texts.
    pub label: String,
    pub service: Option<ServiceRef>,
    pub password: String,
    pub terms: TermVector,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub entries: Vec<Entry>,
}

impl Dataset {
    /// Builds a dataset of inline texts labelled `text:0`, `text:1`, ...
    pub fn from_texts<S: AsRef<str>>(texts: &[S]) -> Self {
        Dataset {
            entries: texts
                .iter()
                .enumerate()
                .map(|(i, t)| Entry {
                    label: format!("text:{i}"),
                    service: None,
                    password: String::new(),
                    terms: term_vector(t.as_ref()),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn similarity_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let s = similarity(&self.entries[i].terms, &self.entries[j].terms);
                m[i][j] = s;
                m[j][i] = s;
            }
        }
        m
    }
}

/// Mean within-group pair similarity minus mean across-group pair
/// similarity. A side with no pairs counts as 0.
pub fn fitness(assignment: &[usize], dataset: &Dataset) -> Result<f64, SolverError> {
    if assignment.len() != dataset.len() {
        return Err(SolverError::LengthMismatch {
            expected: dataset.len(),
            got: assignment.len(),
        });
    }
    Ok(fitness_with(assignment, &dataset.similarity_matrix()))
}

fn fitness_with(assignment: &[usize], sims: &[Vec<f64>]) -> f64 {
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..assignment.len() {
        for j in i + 1..assignment.len() {
            if assignment[i] == assignment[j] {
                intra += sims[i][j];
                n_intra += 1;
            } else {
                inter += sims[i][j];
                n_inter += 1;
            }
        }
    }
    let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
    mean(intra, n_intra) - mean(inter, n_inter)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub tournament_k: usize,
    pub group_count: usize,
    pub seed: u64,
    pub elitism: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            population_size: 40,
            generations: 200,
            crossover_rate: 0.8,
            mutation_rate: 0.05,
            tournament_k: 3,
            group_count: 2,
            seed: 0,
            elitism: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::BadConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.crossover_rate) || !(0.0..=1.0).contains(&self.mutation_rate) {
            return bad("rates must lie in [0, 1]");
        }
        if self.population_size < 2 || self.population_size < 2 * self.elitism {
            return bad("population must be at least 2 and at least twice the elitism");
        }
        if self.tournament_k == 0 {
            return bad("tournament size must be positive");
        }
        if self.group_count < 2 {
            return bad("at least 2 groups");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub best: Vec<usize>,
    pub fitness: f64,
    /// Best fitness of the initial population, then of each generation.
    pub history: Vec<f64>,
}

impl Solution {
    pub fn groups(&self) -> usize {
        self.best.iter().max().map_or(0, |m| m + 1)
    }
}

/// Deterministic for a given config (including seed) and dataset.
pub fn run_ga(config: &SolverConfig, dataset: &Dataset) -> Result<Solution, SolverError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(SolverError::EmptyDataset);
    }
    if config.group_count > dataset.len() {
        return Err(SolverError::BadConfig(format!(
            "{} groups for {} entries",
            config.group_count,
            dataset.len()
        )));
    }
    let sims = dataset.similarity_matrix();
    let n = dataset.len();
    let g = config.group_count;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut population: Vec<(Vec<usize>, f64)> = (0..config.population_size)
        .map(|_| {
            let genes: Vec<usize> = (0..n).map(|_| rng.gen_range(0..g)).collect();
            let f = fitness_with(&genes, &sims);
            (genes, f)
        })
        .collect();
    let best_of = |pop: &[(Vec<usize>, f64)]| {
        pop.iter()
            .fold(None::<&(Vec<usize>, f64)>, |best, c| match best {
                Some(b) if b.1 >= c.1 => Some(b),
                _ => Some(c),
            })
            .cloned()
            .expect("population is never empty")
    };
    let mut best = best_of(&population);
    let mut history = vec![best.1];

    for _ in 0..config.generations {
        let mut ranked: Vec<usize> = (0..population.len()).collect();
        ranked.sort_by(|&a, &b| population[b].1.total_cmp(&population[a].1));
        let mut next: Vec<(Vec<usize>, f64)> = ranked[..config.elitism]
            .iter()
            .map(|&i| population[i].clone())
            .collect();

        while next.len() < config.population_size {
            let p1 = tournament(&population, config.tournament_k, &mut rng);
            let p2 = tournament(&population, config.tournament_k, &mut rng);
            let (mut c1, mut c2) = (population[p1].0.clone(), population[p2].0.clone());
            if n > 1 && rng.gen_bool(config.crossover_rate) {
                let point = rng.gen_range(1..n);
                for i in point..n {
                    std::mem::swap(&mut c1[i], &mut c2[i]);
                }
            }
            for child in [c1, c2] {
                if next.len() == config.population_size {
                    break;
                }
                let mut child = child;
                for gene in child.iter_mut() {
                    if rng.gen_bool(config.mutation_rate) {
                        // uniform over the other groups
                        let other = rng.gen_range(0..g - 1);
                        *gene = if other >= *gene { other + 1 } else { other };
                    }
                }
                let f = fitness_with(&child, &sims);
                next.push((child, f));
            }
        }
        population = next;
        let generation_best = best_of(&population);
        if generation_best.1 > best.1 {
            best = generation_best.clone();
        }
        history.push(generation_best.1);
    }
    Ok(Solution {
        best: best.0,
        fitness: best.1,
        history,
    })
}

fn tournament(population: &[(Vec<usize>, f64)], k: usize, rng: &mut ChaCha8Rng) -> usize {
    let mut winner = rng.gen_range(0..population.len());
    for _ in 1..k {
        let c = rng.gen_range(0..population.len());
        if population[c].1 > population[winner].1 {
            winner = c;
        }
    }
    winner
}

// ---------------------------------------------------------------- mediator

/// Where an entry's text comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Service {
        target: ServiceRef,
        password: String,
        /// Overrides the mediator's default method.
        method: Option<String>,
    },
    Text(String),
}

impl Source {
    pub fn service(target: ServiceRef, password: impl Into<String>) -> Self {
        Source::Service {
            target,
            password: password.into(),
            method: None,
        }
    }

    pub fn local(path: &str, password: impl Into<String>) -> Result<Self, SolverError> {
        let p = ServicePath::parse(path).map_err(|e| SolverError::Script(format!("{path:?}: {e}")))?;
        Ok(Self::service(ServiceRef::Local(p), password))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gathered {
    pub dataset: Dataset,
    /// Sources that produced no text, with the reason.
    pub report: Vec<(String, String)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkReport {
    /// Successful `record_use` calls, local or remote.
    pub calls: usize,
    pub skipped: Vec<(String, String)>,
}

/// Gathers text from services and pushes organization back to them.
#[derive(Debug, Clone)]
pub struct Mediator {
    registry: Registry,
    method: String,
    self_url: Option<String>,
}

impl Mediator {
    pub fn new(registry: Registry) -> Self {
        Mediator {
            registry,
            method: "getText".into(),
            self_url: None,
        }
    }

    /// Default text-yielding method (`getText` unless changed).
    pub fn with_method(mut self, method: impl Into<String>) -> Self {
        self.method = method.into();
        self
    }

    /// Public URL of this node, needed when a remote service must link back
    /// to a local one.
    pub fn with_self_url(mut self, url: impl Into<String>) -> Self {
        self.self_url = Some(url.into().trim_end_matches('/').to_string());
        self
    }

    /// Fetches every source concurrently. Failed sources are reported and
    /// left out.
    pub fn gather(&self, sources: &[Source]) -> Result<Gathered, SolverError> {
        let results: Vec<Result<Entry, (String, String)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = sources
                .iter()
                .enumerate()
                .map(|(i, s)| scope.spawn(move || self.fetch(i, s)))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(("?".into(), "gather thread panicked".into())))
                })
                .collect()
        });
        let mut gathered = Gathered {
            dataset: Dataset::default(),
            report: Vec::new(),
        };
        for r in results {
            match r {
                Ok(e) => gathered.dataset.entries.push(e),
                Err(failure) => gathered.report.push(failure),
            }
        }
        if gathered.dataset.is_empty() {
            return Err(SolverError::EmptyDataset);
        }
        Ok(gathered)
    }

    fn fetch(&self, index: usize, source: &Source) -> Result<Entry, (String, String)> {
        match source {
            Source::Text(t) => Ok(Entry {
                label: format!("text:{index}"),
                service: None,
                password: String::new(),
                terms: term_vector(t),
            }),
            Source::Service {
                target,
                password,
                method,
            } => {
                let label = target.to_string();
                let method = method.as_deref().unwrap_or(&self.method);
                let value = self
                    .registry
                    .call_ref(target, method, password, Vec::new())
                    .map_err(|e| (label.clone(), e.to_string()))?;
                let text = match value {
                    Value::Binary(_) => return Err((label, "returned binary content".into())),
                    v => v.to_display_string(),
                };
                Ok(Entry {
                    label,
                    service: Some(target.clone()),
                    password: password.clone(),
                    terms: term_vector(&text),
                })
            }
        }
    }

    /// One `record_use(from, to)`, executed on whichever node hosts `from`.
    fn reinforce(&self, from: &Entry, to: &Entry) -> Result<(), String> {
        let (Some(src), Some(dst)) = (&from.service, &to.service) else {
            return Err("inline texts cannot be linked".into());
        };
        match src {
            ServiceRef::Local(p) => self
                .registry
                .record_use(&p.to_string(), &dst.to_string())
                .map(|_| ())
                .map_err(|e| e.to_string()),
            ServiceRef::Remote { peer, path } => {
                let target = match dst {
                    ServiceRef::Remote { peer: p2, path: d } if p2 == peer => d.to_string(),
                    ServiceRef::Remote { .. } => dst.to_string(),
                    ServiceRef::Local(d) => match &self.self_url {
                        Some(url) => format!("{url}/service/{d}"),
                        None => return Err("remote service cannot link back without a self url".into()),
                    },
                };
                let call = crate::wire::MethodCall::new(path.clone(), "recordUse")
                    .password(from.password.clone())
                    .arg(target);
                self.registry
                    .call_remote(peer, &call)
                    .map(|_| ())
                    .map_err(|e| e.to_string())
            }
        }
    }

    fn reinforce_pair(&self, a: &Entry, b: &Entry, report: &mut LinkReport) {
        for (x, y) in [(a, b), (b, a)] {
            match self.reinforce(x, y) {
                Ok(()) => report.calls += 1,
                Err(e) => report.skipped.push((format!("{} -> {}", x.label, y.label), e)),
            }
        }
    }

    /// Reinforces every same-group pair in both directions and stores the
    /// group index as metadata `group` on local services.
    pub fn apply_solution(&self, solution: &Solution, dataset: &Dataset) -> Result<LinkReport, SolverError> {
        if solution.best.len() != dataset.len() {
            return Err(SolverError::LengthMismatch {
                expected: dataset.len(),
                got: solution.best.len(),
            });
        }
        let mut report = LinkReport::default();
        for (entry, group) in dataset.entries.iter().zip(&solution.best) {
            match &entry.service {
                Some(ServiceRef::Local(p)) => {
                    if let Err(e) = self.registry.set_metadata(p, "group", &group.to_string()) {
                        report.skipped.push((entry.label.clone(), e.to_string()));
                    }
                }
                Some(ServiceRef::Remote { .. }) => {
                    report
                        .skipped
                        .push((entry.label.clone(), "metadata of remote services is not written".into()));
                }
                None => {}
            }
        }
        let entries = &dataset.entries;
        for i in 0..entries.len() {
            for j in i + 1..entries.len() {
                if solution.best[i] == solution.best[j] {
                    self.reinforce_pair(&entries[i], &entries[j], &mut report);
                }
            }
        }
        Ok(report)
    }

    /// Gathers, then reinforces both directions of every pair whose
    /// similarity reaches `threshold`.
    pub fn distributed_link_pass(&self, sources: &[Source], threshold: f64) -> Result<LinkReport, SolverError> {
        let gathered = self.gather(sources)?;
        let entries = &gathered.dataset.entries;
        let mut report = LinkReport {
            calls: 0,
            skipped: gathered.report.clone(),
        };
        for i in 0..entries.len() {
            for j in i + 1..entries.len() {
                if similarity(&entries[i].terms, &entries[j].terms) >= threshold {
                    self.reinforce_pair(&entries[i], &entries[j], &mut report);
                }
            }
        }
        Ok(report)
    }
}

// ---------------------------------------------------------------- scripts

/// A parsed solver script.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveScript {
    pub config: SolverConfig,
    pub sources: Vec<Source>,
    pub method: Option<String>,
    /// Whether to push the solution back to the services.
    pub apply: bool,
}

impl SolveScript {
    /// `<solve seed= groups= population= generations= crossover= mutation=
    /// tournament= elitism= method= apply=>` with `<source path= password=
    /// method=/>` and `<source text=/>` (or element text) children.
    pub fn parse(text: &str) -> Result<Self, SolverError> {
        let root = xml::parse_element(text).map_err(|e| SolverError::Script(e.to_string()))?;
        Self::from_element(&root)
    }

    pub fn from_element(root: &Element) -> Result<Self, SolverError> {
        if root.name != "solve" {
            return Err(SolverError::Script(format!("expected <solve>, found <{}>", root.name)));
        }
        let mut config = SolverConfig::default();
        fn num<T: std::str::FromStr>(el: &Element, key: &str, slot: &mut T) -> Result<(), SolverError> {
            if let Some(v) = el.get(key) {
                *slot = v
                    .trim()
                    .parse()
                    .map_err(|_| SolverError::Script(format!("<{}> attribute {key}={v:?} is not a number", el.name)))?;
            }
            Ok(())
        }
        num(root, "seed", &mut config.seed)?;
        num(root, "groups", &mut config.group_count)?;
        num(root, "population", &mut config.population_size)?;
        num(root, "generations", &mut config.generations)?;
        num(root, "crossover", &mut config.crossover_rate)?;
        num(root, "mutation", &mut config.mutation_rate)?;
        num(root, "tournament", &mut config.tournament_k)?;
        num(root, "elitism", &mut config.elitism)?;
        config.validate()?;
        let apply = match root.get("apply") {
            None | Some("true") => true,
            Some("false") => false,
            Some(other) => return Err(SolverError::Script(format!("apply={other:?} is not true/false"))),
        };

        let mut sources = Vec::new();
        for (i, el) in root.elements().enumerate() {
            let at = || format!("<{}> #{}", el.name, i + 1);
            if el.name != "source" {
                return Err(SolverError::Script(format!("unexpected {}", at())));
            }
            let source = match (el.get("path"), el.get("text")) {
                (Some(p), None) => {
                    let target: ServiceRef = p.parse().map_err(|e| SolverError::Script(format!("{}: {e}", at())))?;
                    Source::Service {
                        target,
                        password: el.get("password").unwrap_or_default().to_string(),
                        method: el.get("method").map(str::to_string),
                    }
                }
                (None, Some(t)) => Source::Text(t.to_string()),
                (None, None) if !el.text_content().is_empty() => Source::Text(el.text_content()),
                _ => {
                    return Err(SolverError::Script(format!(
                        "{} needs exactly one of path or text",
                        at()
                    )))
                }
            };
            sources.push(source);
        }
        if sources.is_empty() {
            return Err(SolverError::Script("<solve> has no sources".into()));
        }
        Ok(SolveScript {
            config,
            sources,
            method: root.get("method").map(str::to_string),
            apply,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    /// Effective configuration, defaults filled in.
    pub config: SolverConfig,
    pub solution: Solution,
    pub labels: Vec<String>,
    pub gather_report: Vec<(String, String)>,
    pub applied: Option<LinkReport>,
}

/// Runs gather, the GA and (if any service sources exist) apply_solution.
pub fn solve_script(script: &SolveScript, registry: &Registry) -> Result<SolveOutcome, SolverError> {
    let mut mediator = Mediator::new(registry.clone());
    if let Some(m) = &script.method {
        mediator = mediator.with_method(m.clone());
    }
    let gathered = mediator.gather(&script.sources)?;
    let solution = run_ga(&script.config, &gathered.dataset)?;
    let has_services = gathered.dataset.entries.iter().any(|e| e.service.is_some());
    let applied = if script.apply && has_services {
        Some(mediator.apply_solution(&solution, &gathered.dataset)?)
    } else {
        None
    };
    Ok(SolveOutcome {
        config: script.config,
        labels: gathered.dataset.entries.iter().map(|e| e.label.clone()).collect(),
        solution,
        gather_report: gathered.report,
        applied,
    })
}

pub fn solve_from_script(path: &Path, registry: &Registry) -> Result<SolveOutcome, SolverError> {
    let text = std::fs::read_to_string(path).map_err(|e| SolverError::Script(format!("{}: {e}", path.display())))?;
    solve_script(&SolveScript::parse(&text)?, registry)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn tokenizing() {
        assert_eq!(tokenize("Hello, hello WORLD!"), ["hello", "hello", "world"]);
        assert_eq!(term_vector("a b a")["a"], 2);
        assert!(tokenize("...").is_empty());
    }

    #[test]
    fn cosine() {
        let a = term_vector("a b");
        assert!(close(similarity(&a, &a), 1.0));
        assert_eq!(similarity(&a, &term_vector("c d")), 0.0);
        assert!(close(similarity(&a, &term_vector("a")), 1.0 / 2f64.sqrt()));
        assert_eq!(similarity(&TermVector::new(), &TermVector::new()), 0.0);
    }

    #[test]
    fn fitness_cases() {
        let d = Dataset::from_texts(&["x y", "x y", "p q"]);
        assert!(close(fitness(&[0, 0, 1], &d).unwrap(), 1.0));
        assert_eq!(
            fitness(&[0, 0], &d),
            Err(SolverError::LengthMismatch { expected: 3, got: 2 })
        );
        let same = Dataset::from_texts(&["a", "a", "a"]);
        assert!(close(fitness(&[0, 1, 0], &same).unwrap(), 0.0));
        assert!(close(fitness(&[0, 0, 0], &same).unwrap(), 1.0));
        assert!(close(
            fitness(&[1, 1, 0], &d).unwrap(),
            fitness(&[0, 0, 1], &d).unwrap()
        ));
    }

    #[test]
    fn ga_separates_pairs() {
        let d = Dataset::from_texts(&["red apple", "blue sky", "red apple", "blue sky"]);
        let config = SolverConfig {
            seed: 3,
            ..Default::default()
        };
        let s = run_ga(&config, &d).unwrap();
        assert!(close(s.fitness, 1.0));
        assert_eq!(s.best[0], s.best[2]);
        assert_ne!(s.best[0], s.best[1]);
        assert_eq!(s.history.len(), 201);
        assert!(s.history.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(run_ga(&config, &d).unwrap(), s);
        let zero = run_ga(
            &SolverConfig {
                generations: 0,
                ..config
            },
            &d,
        )
        .unwrap();
        assert_eq!(zero.history.len(), 1);
    }

    #[test]
    fn config_checks() {
        let d = Dataset::from_texts(&["a"]);
        assert!(matches!(
            run_ga(&SolverConfig::default(), &d),
            Err(SolverError::BadConfig(_))
        ));
        let bad = SolverConfig {
            mutation_rate: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            population_size: 3,
            elitism: 2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn scripts() {
        let s = SolveScript::parse(r#"<solve groups="2"><source text="a b"/><source>c d</source></solve>"#).unwrap();
        assert_eq!(s.config.seed, 0);
        assert_eq!(s.sources, vec![Source::Text("a b".into()), Source::Text("c d".into())]);
        assert!(SolveScript::parse("<solve seed=\"x\"><source text=\"a\"/></solve>").is_err());
        assert!(SolveScript::parse("<solve><source/></solve>").is_err());
        assert!(SolveScript::parse("<solve>").is_err());
        let registry = Registry::new();
        let out = solve_script(&s, &registry).unwrap();
        let direct = run_ga(&s.config, &Dataset::from_texts(&["a b", "c d"])).unwrap();
        assert_eq!(out.solution, direct);
        assert!(out.applied.is_none());
    }
}
