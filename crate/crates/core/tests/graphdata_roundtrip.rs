use trussmodal_core::fem::SimulationConfig;
use trussmodal_core::graphdata::{self, DatasetInfo, Split};
use trussmodal_core::population::TrapezoidSpec;
use trussmodal_core::sensing::SensingConfig;
use trussmodal_core::Error;

fn info() -> DatasetInfo {
    DatasetInfo { population_seed: 17, boundary: TrapezoidSpec::default(), simulation: SimulationConfig::with_steps(256), sensing: SensingConfig::default() }
}

#[test]
fn save_load_is_bit_exact() {
    let graphs = graphdata::build(&info(), 4, [0.5, 0.25, 0.25]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pop.tmg");
    let manifest = graphdata::save(&graphs, &info(), &path).unwrap();
    assert_eq!(manifest.counts.total(), 4);
    let (loaded, m2) = graphdata::load(&path).unwrap();
    assert_eq!(manifest, m2);
    for (a, b) in graphs.iter().zip(&loaded) {
        assert_eq!(a.truss, b.truss);
        assert_eq!(a.split, b.split);
        let bits = |m: &nalgebra::DMatrix<f64>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.signals.signals), bits(&b.signals.signals));
        assert_eq!(a.signals.mask, b.signals.mask);
        assert_eq!(a.reference(), b.reference());
    }
    assert_eq!(graphdata::read_manifest(&path).unwrap(), manifest);
}

#[test]
fn truncated_file_reports_graph() {
    let graphs = graphdata::build(&info(), 2, [0.5, 0.5, 0.0]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pop.tmg");
    graphdata::save(&graphs, &info(), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 20]).unwrap();
    match graphdata::load(&path) {
        Err(Error::Checksum { graph_id }) => assert_eq!(graph_id, 1),
        other => panic!("expected checksum failure, got {other:?}"),
    }
}

#[test]
fn corrupted_payload_and_version_rejected() {
    let graphs = graphdata::build(&info(), 1, [1.0, 0.0, 0.0]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pop.tmg");
    graphdata::save(&graphs, &info(), &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 3] ^= 0x40;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(graphdata::load(&path), Err(Error::Checksum { graph_id: 0 })));

    let text = String::from_utf8_lossy(&std::fs::read(&path).unwrap()).into_owned();
    let bumped = text.replacen("\"schema_version\":1", "\"schema_version\":9", 1);
    let mut raw = std::fs::read(&path).unwrap();
    let pos = text.find("\"schema_version\":1").unwrap();
    raw[pos..pos + bumped[pos..].find(',').unwrap()].copy_from_slice(bumped[pos..pos + bumped[pos..].find(',').unwrap()].as_bytes());
    std::fs::write(&path, &raw).unwrap();
    assert!(matches!(graphdata::load(&path), Err(Error::Version { found: 9, .. })));
}

#[test]
fn hundred_graph_manifest_counts() {
    // Split tags only; simulating 100 trusses is not needed for the counts.
    let tags = graphdata::split(100, [0.8, 0.05, 0.15], 1).unwrap();
    let count = |s| tags.iter().filter(|t| **t == s).count();
    assert_eq!((count(Split::Train), count(Split::Validation), count(Split::Test)), (80, 5, 15));
}

#[test]
fn reference_reads_are_audited() {
    let graphs = graphdata::build(&info(), 1, [1.0, 0.0, 0.0]).unwrap();
    assert_eq!(graphs[0].reference_reads(), 0);
    let _ = graphs[0].reference();
    assert_eq!(graphs[0].reference_reads(), 1);
}
