mod common;

use std::path::Path;
use std::process::Command;

use common::*;
use stainloop::layout::Outcome;
use stainloop::provenance::{sha256_file, sidecar_path, Provenance};

fn provenance(path: &Path) -> Provenance {
    serde_json::from_value(read_json(&sidecar_path(path))).unwrap()
}

#[test]
fn extract_writes_both_stain_states_per_core() {
    let ds = Dataset::new(2, 96, 1);
    let out = ds.run_dir("run");
    assert_eq!(stage("extract", &ds.manifest, None, &out, &[]), 0);
    for id in ["core01", "core02"] {
        for role in ["GUS", "GHE"] {
            let p = out.join(format!("extracted/{id}_{role}.png"));
            let img = png(&p);
            // the ROI disc spans 98% of the core edge
            let (w, h) = img.dimensions();
            assert!((92..=96).contains(&w) && (92..=96).contains(&h), "{}: {w}x{h}", p.display());
            let prov = provenance(&p);
            assert_eq!(prov.sha256, sha256_file(&p).unwrap());
            assert_eq!(prov.core_id.as_deref(), Some(id));
            let names: Vec<&str> = prov.inputs.iter().map(|i| i.path.as_str()).collect();
            assert!(names.contains(&format!("slides/{id}_stained.png").as_str()), "{names:?}");
            assert!(names.contains(&format!("rois/{id}_unstained.geojson").as_str()), "{names:?}");
            assert_eq!(prov.params["mpp_chain"], serde_json::json!([0.25, 0.5]));
        }
    }
    assert_eq!(std::fs::read_dir(out.join("extracted")).unwrap().count(), 8);
}

#[test]
fn missing_roi_flags_only_that_core() {
    let ds = Dataset::new(3, 96, 2);
    std::fs::remove_file(ds.path("rois/core02_stained.geojson")).unwrap();
    let out = ds.run_dir("run");
    assert_eq!(stage("extract", &ds.manifest, None, &out, &[]), 2);
    let st = status(&out, "extract");
    let failed: Vec<_> = st.failures().map(|c| c.core_id.as_str()).collect();
    assert_eq!(failed, ["core02"]);
    let reason = st.cores[1].reason.as_deref().unwrap();
    assert!(reason.contains("roi_stained") && reason.contains("core02_stained.geojson"), "{reason}");
    assert!(out.join("extracted/core01_GHE.png").is_file());
    assert!(out.join("extracted/core03_GUS.png").is_file());
    assert!(!out.join("extracted/core02_GUS.png").exists());

    // the whole pipeline carries the exclusion through to the report
    let cfg = ds.mock_config(32);
    assert_eq!(stage("all", &ds.manifest, Some(&cfg), &out, &[]), 2);
    let summary = read_json(&out.join("evaluation/summary.json"));
    let excluded = summary["excluded_cores"].as_array().unwrap();
    assert!(excluded.iter().any(|e| e["core_id"] == "core02" && e["stage"] == "extract"), "{excluded:?}");
    let metrics = read_csv(&out.join("evaluation/metrics.csv"));
    assert!(metrics.iter().all(|r| r["core_id"] != "core02"));
    assert!(metrics.iter().any(|r| r["core_id"] == "core03"));
    let report = std::fs::read_to_string(out.join("report.md")).unwrap();
    let section = report.split("## Skipped cores").nth(1).expect("skipped-core section");
    assert!(section.lines().take(4).any(|l| l.starts_with("- core02 (extract)")), "{report}");
}

#[test]
fn rerun_skips_by_checksum() {
    let ds = Dataset::new(2, 96, 3);
    let out = ds.run_dir("run");
    assert_eq!(stage("extract", &ds.manifest, None, &out, &[]), 0);
    let first = snapshot(&out.join("extracted"));
    assert!(status(&out, "extract").cores.iter().all(|c| c.outcome == Outcome::Ok));

    assert_eq!(stage("extract", &ds.manifest, None, &out, &[]), 0);
    assert!(status(&out, "extract").cores.iter().all(|c| c.outcome == Outcome::Cached));
    assert_eq!(snapshot(&out.join("extracted")), first);

    // a damaged output no longer matches its sidecar and is rebuilt
    let victim = out.join("extracted/core02_GHE.png");
    std::fs::write(&victim, b"not a png").unwrap();
    assert_eq!(stage("extract", &ds.manifest, None, &out, &[]), 0);
    let st = status(&out, "extract");
    assert_eq!(st.cores[0].outcome, Outcome::Cached);
    assert_eq!(st.cores[1].outcome, Outcome::Ok);
    assert_eq!(snapshot(&out.join("extracted")), first);

    // a changed parameter invalidates the key
    let cfg = ds.write("strip.toml", "strip_height = 7\n");
    assert_eq!(stage("extract", &ds.manifest, Some(&cfg), &out, &[]), 0);
    assert!(status(&out, "extract").cores.iter().all(|c| c.outcome == Outcome::Ok));
    for (name, bytes) in snapshot(&out.join("extracted")) {
        if name.ends_with(".png") {
            assert_eq!(bytes, first[&name], "{name}: strip height must not change pixels");
        }
    }

    assert_eq!(stage("extract", &ds.manifest, Some(&cfg), &out, &["--force"]), 0);
    assert!(status(&out, "extract").cores.iter().all(|c| c.outcome == Outcome::Ok));
}

#[test]
fn harmonize_against_itself_is_near_identity() {
    let ds = Dataset::new(1, 128, 4);
    let out = ds.run_dir("run");
    assert_eq!(stage("extract", &ds.manifest, None, &out, &[]), 0);
    let text = std::fs::read_to_string(&ds.manifest).unwrap();
    let text = text
        .replace("reference/he_reference.png", "run/extracted/core01_GHE.png")
        .replace("reference/unstained_reference.png", "run/extracted/core01_GUS.png");
    let manifest = ds.write("self.toml", &text);
    assert_eq!(stage("harmonize", &manifest, None, &out, &[]), 0);
    for role in ["GHE", "GUS"] {
        let before = png(&out.join(format!("extracted/core01_{role}.png")));
        let after = png(&out.join(format!("harmonized/core01_{role}.png")));
        let mad = mean_abs_diff(&before, &after);
        assert!(mad <= 3.0, "{role}: mean abs diff {mad}");
    }
}

#[test]
fn blank_core_is_flagged_and_excluded() {
    let ds = Dataset::new(3, 96, 5);
    let slide = ds.path("slides/core02_stained.png");
    let (w, h) = png(&slide).dimensions();
    image::RgbImage::from_pixel(w, h, image::Rgb([255, 255, 255])).save(&slide).unwrap();
    let cfg = ds.mock_config(32);
    let out = ds.run_dir("run");
    assert_eq!(stage("extract", &ds.manifest, Some(&cfg), &out, &[]), 0);
    assert_eq!(stage("harmonize", &ds.manifest, Some(&cfg), &out, &[]), 2);
    let st = status(&out, "harmonize");
    let bad = st.cores.iter().find(|c| c.core_id == "core02").unwrap();
    assert_eq!(bad.outcome, Outcome::Failed);
    assert!(bad.reason.as_deref().unwrap().to_lowercase().contains("tissue"), "{bad:?}");

    assert_eq!(stage("infer", &ds.manifest, Some(&cfg), &out, &[]), 2);
    assert_eq!(stage("evaluate", &ds.manifest, Some(&cfg), &out, &[]), 2);
    let summary = read_json(&out.join("evaluation/summary.json"));
    assert!(summary["excluded_cores"]
        .as_array()
        .unwrap()
        .iter()
        .any(|e| e["core_id"] == "core02" && e["stage"] == "harmonize"));
    for file in ["metrics.csv", "intensity.csv"] {
        let rows = read_csv(&out.join("evaluation").join(file));
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|r| r["core_id"] != "core02"), "{file}");
    }
    let agg = read_json(&out.join("evaluation/aggregate.json"));
    assert!(agg["metrics"].as_array().unwrap().iter().all(|r| r["n"] == 2));
}

#[test]
fn harmonize_and_infer_are_deterministic() {
    let ds = Dataset::new(2, 96, 6);
    let cfg = ds.mock_config(32);
    let out = ds.run_dir("run");
    for cmd in ["extract", "harmonize", "infer"] {
        assert_eq!(stage(cmd, &ds.manifest, Some(&cfg), &out, &[]), 0, "{cmd}");
    }
    let harmonized = snapshot(&out.join("harmonized"));
    let inferred = snapshot(&out.join("inferred"));
    assert_eq!(stage("harmonize", &ds.manifest, Some(&cfg), &out, &["--force"]), 0);
    assert_eq!(stage("infer", &ds.manifest, Some(&cfg), &out, &["--force"]), 0);
    assert_eq!(snapshot(&out.join("harmonized")), harmonized);
    assert_eq!(snapshot(&out.join("inferred")), inferred);
}

#[test]
fn identity_backends_reproduce_the_harmonized_core() {
    let ds = Dataset::new(2, 80, 7);
    let cfg = ds.write("identity.toml", "patch_size = 32\ntissue_min = 0.0\n");
    let out = ds.run_dir("run");
    for cmd in ["extract", "harmonize", "infer"] {
        assert_eq!(stage(cmd, &ds.manifest, Some(&cfg), &out, &[]), 0, "{cmd}");
    }
    for id in ["core01", "core02"] {
        let ghe = png(&out.join(format!("harmonized/{id}_GHE.png")));
        let gus = png(&out.join(format!("harmonized/{id}_GUS.png")));
        assert_eq!(png(&out.join(format!("inferred/{id}_VDS.png"))), ghe);
        assert_eq!(png(&out.join(format!("inferred/{id}_VHER.png"))), ghe);
        assert_eq!(png(&out.join(format!("inferred/{id}_VHE.png"))), gus);
    }
}

#[test]
fn destain_restain_writes_both_outputs() {
    let ds = Dataset::new(2, 96, 8);
    let cfg = ds.mock_config(32);
    let out = ds.run_dir("run");
    for cmd in ["extract", "harmonize"] {
        assert_eq!(stage(cmd, &ds.manifest, Some(&cfg), &out, &[]), 0);
    }
    assert_eq!(stage("infer", &ds.manifest, Some(&cfg), &out, &["--pathway", "destain_restain"]), 0);
    for id in ["core01", "core02"] {
        let vds = out.join(format!("inferred/{id}_VDS.png"));
        let vher = out.join(format!("inferred/{id}_VHER.png"));
        assert!(vds.is_file() && vher.is_file());
        assert!(!out.join(format!("inferred/{id}_VHE.png")).exists());
        let grid = read_json(&out.join(format!("inferred/{id}_destain_restain.grid.json")));
        assert_eq!(grid["grid"]["patch_size"], 32, "{grid}");
        assert_eq!(grid["pathway"], "destain_restain");

        // the restain input is the VDS just written
        let prov = provenance(&vher);
        let ghe = out.join(format!("harmonized/{id}_GHE.png"));
        assert!(prov.inputs.iter().any(|i| i.sha256 == sha256_file(&ghe).unwrap()));
        // loop through mutually inverse mocks returns the harmonized core on tissue
        let mad = mean_abs_diff(&png(&ghe), &png(&vher));
        assert!(mad < 1.0, "{id}: {mad}");
    }
}

#[test]
fn self_comparison_gives_perfect_scores() {
    let ds = Dataset::new(3, 96, 9);
    let text = std::fs::read_to_string(&ds.manifest).unwrap()
        + "\n[[comparisons]]\nid = \"GHE_self\"\nfirst = \"GHE\"\nsecond = \"GHE\"\n";
    let manifest = ds.write("self.toml", &text);
    let out = ds.run_dir("run");
    for cmd in ["extract", "harmonize", "evaluate"] {
        assert_eq!(stage(cmd, &manifest, None, &out, &[]), 0, "{cmd}");
    }
    let rows = read_csv(&out.join("evaluation/metrics.csv"));
    assert_eq!(rows.len(), 3);
    for r in &rows {
        let pcc: f64 = r["pcc"].parse().unwrap();
        assert!((pcc - 1.0).abs() < 1e-12, "{pcc}");
        assert_eq!(r["mse"], "0");
        assert_eq!(r["psnr_db"], "inf");
        assert_eq!(r["ssim"], "1");
    }
    for r in read_csv(&out.join("evaluation/intensity.csv")) {
        assert_eq!(r["overall"], "0");
    }
    let agg = read_json(&out.join("evaluation/aggregate.json"));
    let row = &agg["metrics"][0];
    assert_eq!(row["infinite_psnr"], 3);
    assert!(row["stats"].get("psnr").is_none());
    assert!((row["stats"]["pcc"]["mean"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(row["stats"]["mse"]["sd"], 0.0);
}

#[test]
fn single_core_aggregates_have_zero_sd() {
    let ds = Dataset::new(1, 96, 10);
    let cfg = ds.mock_config(32);
    let out = ds.run_dir("run");
    assert_eq!(stage("all", &ds.manifest, Some(&cfg), &out, &[]), 0);
    let agg = read_json(&out.join("evaluation/aggregate.json"));
    let mut seen = 0;
    for section in ["metrics", "intensity"] {
        for row in agg[section].as_array().unwrap() {
            assert_eq!(row["n"], 1);
            for (_, v) in row["stats"].as_object().unwrap() {
                assert_eq!(v["sd"], 0.0);
                assert_eq!(v["n"], 1);
                seen += 1;
            }
        }
    }
    assert_eq!(seen, 4 * 4 + 8 * 4);
    let stats = read_json(&out.join("evaluation/stats.json"));
    for e in stats["metric_tests"].as_array().unwrap() {
        assert!(e["result"].is_null() && e["skipped"].is_string(), "{e}");
    }
}

#[test]
fn no_align_leaves_transform_columns_empty() {
    let ds = Dataset::new(2, 96, 11);
    let cfg = ds.mock_config(32);
    let out = ds.run_dir("run");
    assert_eq!(stage("all", &ds.manifest, Some(&cfg), &out, &["--no-align"]), 0);
    for r in read_csv(&out.join("evaluation/metrics.csv")) {
        assert_eq!(r["align_theta_deg"], "");
        assert_eq!(r["align_converged"], "");
        let ecc: f64 = r["align_ecc"].parse().unwrap();
        assert!((-1.0..=1.0).contains(&ecc));
    }
    let summary = read_json(&out.join("evaluation/summary.json"));
    assert!(summary["flagged_alignments"].as_array().unwrap().is_empty());
}

#[test]
fn report_lists_every_configured_comparison() {
    let ds = Dataset::new(2, 96, 12);
    let cfg = ds.mock_config(32);
    let out = ds.run_dir("run");
    assert_eq!(stage("all", &ds.manifest, Some(&cfg), &out, &[]), 0);
    let report = std::fs::read_to_string(out.join("report.md")).unwrap();
    let pixel: Vec<&str> = report
        .split("## Pixel metrics")
        .nth(1)
        .unwrap()
        .lines()
        .filter(|l| l.starts_with("| "))
        .collect();
    for id in ["GUS_vs_VDS", "GHE_vs_VHER", "GHE_vs_VHE", "VHE_vs_VHER"] {
        assert!(pixel.iter().any(|l| l.starts_with(&format!("| {id} | 2 |"))), "{id}\n{report}");
    }
    let intensity_block = report.split("## Masked intensity").nth(1).unwrap().split("## Statistics").next().unwrap();
    let rows: Vec<&str> = intensity_block.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| Comparison")).collect();
    assert_eq!(rows.len(), 8, "{intensity_block}");
    for l in &rows {
        assert!(l.contains(" | 2 | "), "{l}");
    }

    // the report subcommand re-renders the same text
    assert_eq!(stainloop(&["report", "--out", s(&out)]), 0);
    assert_eq!(std::fs::read_to_string(out.join("report.md")).unwrap(), report);
}

#[test]
fn report_on_empty_dir_names_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let res = Command::new(BIN).args(["report", "--out", s(dir.path())]).output().unwrap();
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    for f in stainloop::layout::EVALUATION_FILES {
        assert!(err.contains(&format!("evaluation/{f}")), "{err}");
    }
}

#[test]
fn exit_codes_for_config_errors() {
    let ds = Dataset::new(1, 64, 13);
    let out = ds.run_dir("run");
    let bad = ds.write("bad.toml", "patch_sise = 32\n");
    assert_eq!(stage("extract", &ds.manifest, Some(&bad), &out, &[]), 1);
    let range = ds.write("range.toml", "tissue_min = 1.5\n");
    assert_eq!(stage("extract", &ds.manifest, Some(&range), &out, &[]), 1);
    assert_eq!(stainloop(&["extract", "--manifest", s(&ds.manifest)]), 1, "no run directory");
    let missing_ref = std::fs::read_to_string(&ds.manifest).unwrap().replace("he_reference.png", "nope.png");
    let m = ds.write("m2.toml", &missing_ref);
    assert_eq!(stage("extract", &m, None, &out, &[]), 1);
    let narrow = ds.write("narrow.toml", "pathways = [\"destain\"]\n");
    assert_eq!(stage("extract", &ds.manifest, Some(&narrow), &out, &[]), 1, "VHE is not producible");
    assert!(!out.exists());
}

#[test]
fn all_cores_failing_exits_one() {
    let ds = Dataset::new(2, 64, 14);
    for id in ["core01", "core02"] {
        std::fs::remove_file(ds.path(&format!("slides/{id}_unstained.png"))).unwrap();
    }
    let out = ds.run_dir("run");
    assert_eq!(stage("extract", &ds.manifest, None, &out, &[]), 1);
}

fn external_config(ds: &Dataset, name: &str, timeout: Option<u64>) -> std::path::PathBuf {
    let cmd = |role: &str| format!("[\"{BIN}\", \"mock-backend\", \"--role\", \"{role}\", \"{{in_dir}}\", \"{{out_dir}}\"]");
    let t = timeout.map_or(String::new(), |t| format!("timeout_secs = {t}\n"));
    ds.write(
        name,
        &format!(
            "patch_size = 32\n\n[backends.destain]\nkind = \"external_command\"\ncommand = {}\n{t}\n\
             [backends.stain]\nkind = \"external_command\"\ncommand = {}\n{t}",
            cmd("destain"),
            cmd("stain")
        ),
    )
}

#[test]
fn external_command_backend_matches_in_process_mock() {
    let ds = Dataset::new(2, 96, 15);
    let affine = ds.mock_config(32);
    let external = external_config(&ds, "external.toml", Some(60));
    let a = ds.run_dir("affine");
    let b = ds.run_dir("external");
    for cmd in ["extract", "harmonize", "infer"] {
        assert_eq!(stage(cmd, &ds.manifest, Some(&affine), &a, &[]), 0);
        assert_eq!(stage(cmd, &ds.manifest, Some(&external), &b, &[]), 0);
    }
    for id in ["core01", "core02"] {
        for role in ["VDS", "VHE", "VHER"] {
            let rel = format!("inferred/{id}_{role}.png");
            assert_eq!(png(&a.join(&rel)), png(&b.join(&rel)), "{rel}");
        }
    }
}

#[test]
fn timeout_variable_overrides_config() {
    let ds = Dataset::new(2, 64, 16);
    let slow = ds.write(
        "slow.toml",
        "patch_size = 32\npathways = [\"destain\", \"direct_stain\"]\n\n\
         [backends.destain]\nkind = \"external_command\"\ncommand = [\"sh\", \"-c\", \"exec sleep 30\", \"{in_dir}\", \"{out_dir}\"]\ntimeout_secs = 600\n\n\
         [backends.stain]\nkind = \"identity\"\n",
    );
    let text = "comparisons = [\"GUS_vs_VDS\"]\n".to_owned() + &std::fs::read_to_string(&ds.manifest).unwrap();
    let manifest = ds.write("m.toml", &text);
    let out = ds.run_dir("run");
    for cmd in ["extract", "harmonize"] {
        assert_eq!(stage(cmd, &manifest, Some(&slow), &out, &[]), 0);
    }
    let run = |env: &str| {
        let started = std::time::Instant::now();
        let res = Command::new(BIN)
            .args(["infer", "--manifest", s(&manifest), "--config", s(&slow), "--out", s(&out), "--force", "-j", "2"])
            .env(stainloop::config::TIMEOUT_ENV, env)
            .output()
            .unwrap();
        (res.status.code(), started.elapsed())
    };
    let (code, elapsed) = run("1");
    assert_eq!(code, Some(1));
    assert!(elapsed.as_secs() < 20, "{elapsed:?}");
    let st = status(&out, "infer");
    assert!(st.cores.iter().all(|c| c.reason.as_deref().unwrap_or("").contains("timed out")), "{st:?}");

    let (code, _) = run("soon");
    assert_eq!(code, Some(1));
}
