use roomsdf::extraction::read_ply;
use roomsdf::pipeline::{read_run_info, run_pipeline, PipelineConfig, PipelineReport};

fn tiny(seed: u64) -> PipelineConfig {
    let mut c = PipelineConfig::default().with_seed(seed);
    c.synth.views = 3;
    c.synth.width = 24;
    c.synth.height = 18;
    c.gt_resolution = 64;
    c.train.iterations = 6;
    c.train.rays_per_batch = 16;
    c.extract.resolution = 32;
    c.eval.voxel = 0.02;
    c
}

#[test]
fn short_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_pipeline(&tiny(0), dir.path()).unwrap();
    for rel in ["scene/scene.json", "scene/gt/mesh.ply", "raw_mesh.ply", "mesh.ply", "metrics.json"] {
        assert!(dir.path().join(rel).exists(), "{rel}");
    }
    assert_eq!(report.steps, 6);
    let m = &report.metrics;
    assert!((0.0..=100.0).contains(&m.fscore) && m.overall.is_finite());
    assert_eq!(read_ply(&dir.path().join("mesh.ply")).unwrap().vertices.len(), report.mesh_vertices);
    assert!(read_run_info(&dir.path().join("run")).is_ok());
    let saved: PipelineReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(saved.metrics, report.metrics);
}

#[test]
fn runs_repeat_exactly() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(&tiny(3), a.path()).unwrap();
    run_pipeline(&tiny(3), b.path()).unwrap();
    let read = |d: &std::path::Path| std::fs::read(d.join("metrics.json")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}
