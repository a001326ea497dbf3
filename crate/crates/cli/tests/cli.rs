use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn spikeplace(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikeplace")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = spikeplace(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist01")
}

#[test]
fn legal_placement_verifies_with_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["build", "relnet", "--M", "3", "--vocab", "20", "--small", "-o", "g.json"]);
    ok(d, &["place", "-g", "g.json", "-o", "p.json"]);
    let out = spikeplace(d, &["verify", "-p", "p.json", "-g", "p.json.graph.json"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("no violations"));
}

#[test]
fn unrelayed_naive_m20_fails_verification_on_fanout() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let built = ok(d, &["build", "relnet", "--M", "20", "--vocab", "180", "--sidecar", "-o", "g.json"]);
    assert!(built.contains("g_theta instances: 210"));
    assert!(built.contains("neurons with relays: 238604"));
    ok(d, &["place", "-g", "g.json", "--strategy", "naive", "--no-relays", "-o", "p.json"]);
    let out = spikeplace(d, &["verify", "-p", "p.json", "-g", "g.json"]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stdout).unwrap();
    let line = text.lines().find(|l| l.starts_with("fanout:")).expect("fanout violation listed");
    assert!(line.contains("> 512") && line.contains("840 outside its population"), "{line}");
}

#[test]
fn placement_must_match_its_graph() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["build", "relnet", "--M", "2", "--vocab", "20", "--small", "-o", "g.json"]);
    ok(d, &["place", "-g", "g.json", "-o", "p.json"]);
    // the placement refers to the relayed graph, not the one it was read from
    let out = spikeplace(d, &["verify", "-p", "p.json", "-g", "g.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different graph"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["frobnicate"][..], &["place", "--bogus"], &["place", "-g", "x", "--strategy", "random", "-o", "y"], &[]] {
        assert_eq!(spikeplace(dir.path(), args).status.code(), Some(2), "{args:?}");
    }
    assert_eq!(spikeplace(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn bench_writes_one_row_per_m() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["bench", "--M", "2,6,10,16,20", "--samples", "1", "-o", "bench.csv", "--report", "r.json", "--plot", "plot.json"]);
    let text = fs::read_to_string(d.join("bench.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# spikeplace "));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "edp_ratio").expect("edp_ratio column");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 5);
    for r in &rows {
        let ratio: f64 = r[col].parse().unwrap();
        assert!(ratio > 0.0 && ratio.is_finite());
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 5);
    assert!(report["config_hash"].as_str().unwrap().len() == 64);
}

#[test]
fn reruns_are_byte_identical_and_threads_do_not_matter() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = data_dir();
    let data = data.to_str().unwrap();
    ok(d, &["encode", "mnist", "-i", data, "--limit", "2", "-o", "enc"]);
    assert!(fs::read_to_string(d.join("enc/labels.csv")).unwrap().lines().count() == 3);
    ok(d, &["build", "smnist", "--small", "--seed", "3", "-o", "s.json"]);
    let input = "enc/sample_00000.raster";
    for mode in ["real", "fixed"] {
        ok(d, &["simulate", "-g", "s.json", "-r", input, "--mode", mode, "--threads", "1", "-o", "a.raster"]);
        ok(d, &["simulate", "-g", "s.json", "-r", input, "--mode", mode, "--threads", "2", "-o", "b.raster", "--metrics", "m.json"]);
        let a = fs::read(d.join("a.raster")).unwrap();
        assert_eq!(a, fs::read(d.join("b.raster")).unwrap(), "{mode}");
        let text = String::from_utf8(a).unwrap();
        assert!(text.lines().any(|l| l.starts_with("config ") && l.len() == 7 + 64));
        assert!(text.contains("tool spikeplace "));
    }

    ok(d, &["build", "relnet", "--M", "3", "--vocab", "20", "--small", "-o", "g.json"]);
    ok(d, &["place", "-g", "g.json", "-o", "p1.json", "--threads", "1"]);
    ok(d, &["place", "-g", "g.json", "-o", "p2.json", "--threads", "2"]);
    assert_eq!(fs::read(d.join("p1.json")).unwrap(), fs::read(d.join("p2.json")).unwrap());
}

#[test]
fn story_pipeline_to_cost_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("qa.txt"),
        "1 Mary went to the kitchen.\n2 John moved to the garden.\n3 Where is Mary?\tkitchen\t1\n",
    )
    .unwrap();
    ok(d, &["encode", "stories", "-i", "qa.txt", "-o", "st"]);
    ok(d, &["build", "relnet", "--M", "2", "--vocab", "20", "--small", "-o", "g.json"]);
    ok(d, &["place", "-g", "g.json", "-o", "opt.json"]);
    ok(d, &["place", "-g", "g.json", "--strategy", "naive", "-o", "naive.json"]);
    let relayed = "opt.json.graph.json";
    // same relayed network; only the embedded run hash differs
    let read = |f: &str| spikeplace::io::read_graph(&d.join(f)).unwrap().hash();
    assert_eq!(read(relayed), read("naive.json.graph.json"));
    let sim = ok(d, &["simulate", "-g", relayed, "--stories", "st/stories.json", "-o", "story.raster"]);
    assert!(sim.contains("answer: "));
    ok(d, &["cost", "-g", relayed, "-p", "opt.json", "--baseline", "naive.json", "-r", "story.raster", "-o", "cmp.json"]);
    ok(d, &["cost", "-g", relayed, "-p", "opt.json", "-r", "story.raster", "-o", "one.json"]);
    let cmp: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("cmp.json")).unwrap()).unwrap();
    let row = &cmp["rows"][0];
    assert!(row["optimized"]["inter_chip"].as_f64().unwrap() <= row["naive"]["inter_chip"].as_f64().unwrap());
    let one: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("one.json")).unwrap()).unwrap();
    assert_eq!(one["cost"]["strategy"], "optimized");
}

#[test]
fn relnet_training_writes_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(d, &["train", "relnet", "--M", "2", "--stories", "8", "--epochs", "1", "-o", "ck.json", "--save-config", "run.json"]);
    assert!(out.contains("epoch 0"));
    let ck = spikeplace::io::Checkpoint::read(&d.join("ck.json")).unwrap();
    let run = spikeplace::config::RunConfig::read(&d.join("run.json")).unwrap();
    assert_eq!(ck.config_hash, run.hash());
}
