//! Resource containers behind an information service, plus confined file
//! serving.

use std::sync::Arc;

use licas::query::parse_query;
use licas::resources::{FileService, InformationService, Resource, ResourceContainer};
use licas::{MethodCall, Registry, ServicePath, ServiceSpec, Value};

fn main() {
    let resources = vec![
        Resource::text("note", "cats sleep\ndogs bark\ncats purr"),
        Resource::number("answer", 42i64).unwrap(),
        Resource::xml(
            "shelf",
            "<shelf><book year=\"1999\">Old</book><book year=\"2021\">New</book></shelf>",
        )
        .unwrap(),
    ];
    let by_id = ResourceContainer::by_id(resources.clone()).unwrap();
    println!("ids {:?}", by_id.ids());
    println!("answer {:?}", by_id.get_by_id("answer").unwrap());

    let recent =
        ResourceContainer::query(resources, parse_query("MATCH /shelf/book WHERE @year > 2000").unwrap()).unwrap();
    println!(
        "matching {:?} skipped {:?}",
        recent.get_matching().unwrap().values,
        recent.get_matching().unwrap().skipped
    );

    let registry = Registry::new();
    registry
        .add_service(ServiceSpec::new("Info", "information").handler(Arc::new(InformationService::new(by_id))))
        .unwrap();
    let text = registry
        .invoke(&MethodCall::new(ServicePath::parse("Info").unwrap(), "getText"))
        .unwrap();
    println!("getText {}", text.to_display_string());

    let dir = tempfile_dir();
    std::fs::write(dir.join("hello.txt"), "hello from disk").unwrap();
    registry.file_roots().write().add("pub", &dir).unwrap();
    registry
        .add_service(ServiceSpec::new("Files", "file").handler(Arc::new(FileService::new(registry.file_roots()))))
        .unwrap();
    let files = ServicePath::parse("Files").unwrap();
    for name in ["pub/hello.txt", "pub/../../etc/passwd"] {
        let r = registry.invoke(&MethodCall::new(files.clone(), "fetch").arg(name));
        match r {
            Ok(Value::Binary(b)) => println!("{name}: {}", String::from_utf8_lossy(&b)),
            Ok(v) => println!("{name}: {v:?}"),
            Err(f) => println!("{name}: refused ({})", f.message),
        }
    }
    std::fs::remove_dir_all(dir).ok();
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("licas-resources-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
