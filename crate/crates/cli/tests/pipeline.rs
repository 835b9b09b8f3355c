use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use evrecon::artifact::{InputHash, StageArtifact};
use evrecon::config::{MvsConfig, PipelineConfig, ReconstructionConfig, WindowConfig};
use evrecon::evaluate::evaluate_poses;
use evrecon::pipeline::{Pipeline, Stage, StageStatus, DENSE_PLY, SFM_TEXT_FILES, SPARSE_PLY};
use evrecon::simulate::{read_views, write_simulation, CONFIG_FILE};
use evrecon::CliError;
use evrecon_core::ply::read_ply;
use evrecon_core::sim::{OrbitScene, SimulatorConfig};
use evrecon_sfm::reconstruction::read_text;

/// Simulated orbit shared by the tests in this file.
fn dataset() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        write_simulation(&dir, &OrbitScene::default(), 1000.0, &SimulatorConfig::default(), 0).unwrap();
        dir
    })
}

/// The dataset's config with a cheaper dense stage, writing into `out`.
fn quick_config(out: &Path) -> PipelineConfig {
    let mut config = PipelineConfig::load(&dataset().join(CONFIG_FILE)).unwrap();
    config.output.dir = out.to_path_buf();
    config.mvs = MvsConfig {
        neighbors: 2,
        window_radius: 3,
        window_step: 1,
        iterations: 2,
        ..config.mvs
    };
    config
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_evrecon"))
}

#[test]
fn minimal_config_fills_defaults() {
    let config = PipelineConfig::from_toml(
        r#"
        [input]
        events = "ev.txt"
        format = "text-us"
        width = 346
        height = 260
        "#,
    )
    .unwrap();
    assert_eq!(config.seed, 0);
    assert_eq!(config.windows, WindowConfig::Count { events: None });
    assert!(matches!(config.reconstruction, ReconstructionConfig::Integrator { contrast, .. } if contrast == 0.1));
    assert!(config.camera.is_none());
    assert!(config.mvs.enabled);
    let geometry = config.input.geometry().unwrap();
    assert_eq!(config.windows.policy(&geometry), evrecon::run::WindowPolicy::Count(geometry.default_window_count()));
    let again = PipelineConfig::from_toml(&config.to_toml()).unwrap();
    assert_eq!(again, config);
}

#[test]
fn unknown_keys_and_bad_values_are_config_errors() {
    let base = "[input]\nevents = \"ev.txt\"\nformat = \"binary\"\nwidth = 8\nheight = 8\n";
    let typo = format!("{base}[sfm]\nmin_2d3 = 5\n");
    assert!(matches!(PipelineConfig::from_toml(&typo), Err(CliError::Config(_))));
    let format = base.replace("binary", "hdf5");
    assert!(matches!(PipelineConfig::from_toml(&format), Err(CliError::Config(_))));

    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ev.txt"), "").unwrap();
    let write = |extra: &str| {
        let path = dir.path().join("c.toml");
        std::fs::write(&path, format!("{base}{extra}")).unwrap();
        PipelineConfig::load(&path)
    };
    let ok = write("").unwrap();
    assert_eq!(ok.input.events, dir.path().join("ev.txt"));
    assert_eq!(ok.output.dir, dir.path().join("out"));
    for bad in [
        "[reconstruction]\nmethod = \"integrator\"\nlow_percentile = 0.9\nhigh_percentile = 0.1\n",
        "[windows]\npolicy = \"duration\"\nduration_us = 0\n",
        "[mvs]\nmin_support = 1\n",
        "[camera]\nfx = -1.0\nfy = 1.0\ncx = 4.0\ncy = 4.0\n",
        "[reconstruction]\nmethod = \"external\"\nmanifest = \"absent.txt\"\n",
    ] {
        let err = write(bad).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{bad}: {err}");
    }
}

#[test]
fn input_hash_separates_chunks() {
    let h = |parts: &[&str]| {
        let mut h = InputHash::new();
        for p in parts {
            h.text(p);
        }
        h.finish()
    };
    assert_eq!(h(&["ab", "c"]), h(&["ab", "c"]));
    assert_ne!(h(&["ab", "c"]), h(&["a", "bc"]));
    assert_ne!(h(&["ab"]), h(&["ab", ""]));
}

#[test]
fn artifact_manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    assert!(StageArtifact::read(dir.path()).unwrap().is_none());
    std::fs::write(dir.path().join("a.bin"), [1u8, 2]).unwrap();
    let art = StageArtifact::new("features", 0xdead_beef, vec![PathBuf::from("a.bin")]);
    art.write(dir.path()).unwrap();
    let back = StageArtifact::read(dir.path()).unwrap().unwrap();
    assert_eq!(back, art);
    assert!(back.is_current(dir.path(), 0xdead_beef));
    assert!(!back.is_current(dir.path(), 0xdead_bee0));
    std::fs::remove_file(dir.path().join("a.bin")).unwrap();
    assert!(!back.is_current(dir.path(), 0xdead_beef));
}

/// Distance from `p` to the surface of the axis-aligned cube `[-h, h]³`.
fn distance_to_cube(p: &[f64; 3], h: f64) -> f64 {
    let q: Vec<f64> = p.iter().map(|c| c.abs() - h).collect();
    let outside = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
    let inside = q.iter().copied().fold(f64::NEG_INFINITY, f64::max).min(0.0);
    outside + inside.abs()
}

#[test]
fn synthetic_run_produces_outputs_and_resumes() {
    let out = tempfile::tempdir().unwrap();
    let pipeline = Pipeline::new(quick_config(out.path()));
    let first = pipeline.run().unwrap();
    assert!(first.stages.iter().all(|s| s.status == StageStatus::Ran));

    let sfm = out.path().join("sfm");
    for name in SFM_TEXT_FILES.iter().chain(&[SPARSE_PLY]) {
        assert!(sfm.join(name).is_file(), "{name}");
    }
    let dense_path = out.path().join("mvs").join(DENSE_PLY);
    let dense = read_ply(std::fs::File::open(&dense_path).unwrap()).unwrap();
    let sparse = read_ply(std::fs::File::open(sfm.join(SPARSE_PLY)).unwrap()).unwrap();
    assert!(sparse.positions.len() >= 100, "{} sparse points", sparse.positions.len());
    assert!(dense.positions.len() > 10 * sparse.positions.len(), "{} dense points", dense.positions.len());
    assert!(dense.normals.is_some() && dense.colors.is_some());

    let recon = read_text(&sfm).unwrap();
    let truth = read_views(&dataset().join("views.txt")).unwrap();
    let eval = evaluate_poses(&recon.poses, &truth).unwrap();
    assert_eq!(eval.registered, (0..8).collect::<Vec<_>>());
    let orbit = OrbitScene::default();
    assert!(eval.max_rotation_error_deg() < 2.0, "{:?}", eval.rotation_errors_deg);
    assert!(eval.max_center_error() < 0.02 * orbit.scene_diameter(), "{:?}", eval.center_errors);

    // Fused points, mapped into the ground-truth frame, lie on the box.
    let mut d: Vec<f64> = dense
        .positions
        .iter()
        .map(|p| {
            let q = eval.alignment.apply(&nalgebra::Point3::new(f64::from(p[0]), f64::from(p[1]), f64::from(p[2])));
            distance_to_cube(&[q.x, q.y, q.z], orbit.box_half_extent.x)
        })
        .collect();
    d.sort_by(f64::total_cmp);
    let median = d[d.len() / 2];
    let p90 = d[d.len() * 9 / 10];
    assert!(median < 0.01 * orbit.scene_diameter(), "median surface distance {median}");
    assert!(p90 < 0.03 * orbit.scene_diameter(), "90th percentile surface distance {p90}");

    let dense_bytes = std::fs::read(&dense_path).unwrap();
    let second = pipeline.run().unwrap();
    assert!(second.stages.iter().all(|s| s.status == StageStatus::Skipped));

    // Dropping one stage's manifest reruns only that stage, identically.
    std::fs::remove_file(out.path().join("mvs").join("artifact.toml")).unwrap();
    let third = pipeline.run().unwrap();
    assert_eq!(third.status(Stage::Sfm), Some(StageStatus::Skipped));
    assert_eq!(third.status(Stage::Mvs), Some(StageStatus::Ran));
    assert_eq!(std::fs::read(&dense_path).unwrap(), dense_bytes);

    // A changed downstream parameter invalidates only what depends on it.
    let mut changed = quick_config(out.path());
    changed.mvs.cost_threshold = 0.5;
    let fourth = Pipeline::new(changed).run().unwrap();
    assert_eq!(fourth.status(Stage::Matching), Some(StageStatus::Skipped));
    assert_eq!(fourth.status(Stage::Mvs), Some(StageStatus::Ran));
}

#[test]
fn stage_only_requires_upstream_artifacts() {
    let out = tempfile::tempdir().unwrap();
    let pipeline = Pipeline::new(quick_config(out.path()));
    let err = pipeline.run_stage(Stage::Sfm).unwrap_err();
    assert!(matches!(err, CliError::Stage { stage: "sfm", .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
    assert_eq!(pipeline.run_stage(Stage::Frames).unwrap().status, StageStatus::Ran);
    assert_eq!(pipeline.run_stage(Stage::Frames).unwrap().status, StageStatus::Skipped);
    assert!(out.path().join("frames").join("frames.txt").is_file());
}

#[test]
fn missing_event_file_exits_with_config_status() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    std::fs::write(&config, "[input]\nevents = \"missing.bin\"\nformat = \"binary\"\nwidth = 240\nheight = 180\n").unwrap();
    let out = bin().args(["pipeline", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.bin"));
    assert!(!dir.path().join("out").exists(), "no stage may run");
}

#[test]
fn unknown_stage_name_is_rejected() {
    let out = bin()
        .args(["pipeline", "--config"])
        .arg(dataset().join(CONFIG_FILE))
        .args(["--stage-only", "meshing", "--out"])
        .arg(tempfile::tempdir().unwrap().path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn debugging_subcommands_write_images() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("ev.txt");
    let lines: String = (0..400).map(|i| format!("{} {} {} {}\n", i * 10, i % 8, (i / 8) % 6, i % 2)).collect();
    std::fs::write(&events, lines).unwrap();
    let common = |sub: &str, out: &Path| {
        let mut c = bin();
        c.args([sub, "--format", "text-us", "--width", "8", "--height", "6", "--count", "100", "--events"])
            .arg(&events)
            .arg("--out")
            .arg(out);
        c
    };
    let frames = dir.path().join("frames");
    assert!(common("events-to-frames", &frames).status().unwrap().success());
    assert_eq!(std::fs::read_dir(&frames).unwrap().count(), 4);
    let voxels = dir.path().join("voxels");
    assert!(common("events-to-voxel", &voxels).status().unwrap().success());
    assert_eq!(std::fs::read_dir(&voxels).unwrap().count(), 4 * 5);
    let grid = evrecon_core::image_io::read_pfm::<f32>(&voxels.join("voxel_0001_b2.pfm")).unwrap();
    assert_eq!((grid.width(), grid.height()), (8, 6));
    let images = dir.path().join("images");
    assert!(common("reconstruct", &images).status().unwrap().success());
    let manifest = images.join("frames.txt");
    assert_eq!(std::fs::read_to_string(&manifest).unwrap().lines().count(), 4);

    let bad = common("events-to-voxel", &voxels).args(["--bins", "0"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    let out_of_range = bin()
        .args(["events-to-frames", "--format", "text-us", "--width", "4", "--height", "4", "--events"])
        .arg(&events)
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out_of_range.status.code(), Some(3));
}
