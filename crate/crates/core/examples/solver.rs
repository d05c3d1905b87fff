//! Group information services by content with the genetic algorithm and
//! let the result reinforce links between group members.

use std::sync::Arc;

use licas::resources::{InformationService, Resource, ResourceContainer};
use licas::solver::{run_ga, Mediator, SolverConfig, Source};
use licas::{Registry, ServiceSpec};

fn main() {
    let registry = Registry::new();
    let texts = [
        ("Astro", "stars planets telescope orbit"),
        ("Sky", "telescope stars night sky"),
        ("Bake", "flour bread oven yeast"),
        ("Cake", "oven sugar flour cake"),
        ("Orbit", "orbit planets rocket"),
    ];
    for (id, text) in texts {
        let container = ResourceContainer::by_id(vec![Resource::text("t", text)]).unwrap();
        registry
            .add_service(ServiceSpec::new(id, "information").handler(Arc::new(InformationService::new(container))))
            .unwrap();
    }

    let mediator = Mediator::new(registry.clone());
    let sources: Vec<Source> = texts.iter().map(|(id, _)| Source::local(id, "").unwrap()).collect();
    let gathered = mediator.gather(&sources).unwrap();
    let solution = run_ga(
        &SolverConfig {
            seed: 11,
            ..SolverConfig::default()
        },
        &gathered.dataset,
    )
    .unwrap();
    println!(
        "fitness {:.4} after {} generations",
        solution.fitness,
        solution.history.len() - 1
    );
    for (entry, group) in gathered.dataset.entries.iter().zip(&solution.best) {
        println!("{} -> group {group}", entry.label);
    }

    for _ in 0..3 {
        mediator.apply_solution(&solution, &gathered.dataset).unwrap();
    }
    for l in registry.links() {
        println!("link {} -> {} weight {}", l.source, l.target, l.weight);
    }
}
