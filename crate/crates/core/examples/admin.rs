//! Build a network from the service factory, save it, and load it into a
//! fresh registry.

use licas::admin::{load_config, save_config, Declaration, ServiceFactory, NETWORK_FILE};
use licas::links::LinkKind;
use licas::Registry;

const MODULE: &str = r#"<module>
  <kind name="faq" base="information">
    <meta key="topic" value="help"/>
    <container kind="id"><resource id="q1" kind="text">How do I reset?</resource></container>
  </kind>
</module>"#;

fn main() {
    let mut factory = ServiceFactory::new();
    println!("loaded kinds {:?}", factory.load_manifest_text(MODULE).unwrap());
    println!("all kinds {:?}", factory.kinds());

    let registry = Registry::new();
    for decl in [
        Declaration::new("Help", "faq"),
        Declaration::new("Hits", "counter").meta("owner", "ops"),
    ] {
        registry
            .add_service(factory.instantiate(&decl, &registry).unwrap())
            .unwrap();
    }
    registry.add_link(LinkKind::Permanent, "Help", "Hits").unwrap();

    let dir = std::env::temp_dir().join(format!("licas-admin-{}", std::process::id()));
    save_config(&registry, &factory, &dir).unwrap();
    println!("{}", std::fs::read_to_string(dir.join(NETWORK_FILE)).unwrap());

    let restored = Registry::new();
    let mut fresh = ServiceFactory::new();
    let report = load_config(&restored, &mut fresh, &dir).unwrap();
    println!("restored {} services, failures {:?}", report.services, report.failures);
    assert_eq!(restored.view(), registry.view());
    std::fs::remove_dir_all(dir).ok();
}
