use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn solver(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_solver")).args(args).output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn diagnostic(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(stderr.lines().last().unwrap()).unwrap()
}

const SMALL_SOD: &str = r#"
scenario = "sod2d"
final_time = 0.02
cells = [8, 8]

[output]
snapshots = false
probe_samples = 21
"#;

#[test]
fn missing_config_is_a_config_error() {
    let out = solver(&["run", "/nonexistent/run.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(diagnostic(&out)["error"], "config");
}

#[test]
fn invalid_config_is_a_config_error() {
    let dir = scratch("invalid");
    for (name, text) in [
        ("scheme.toml", "scenario = \"vortex\"\n[[levels]]\nscheme = \"dg-two\"\n"),
        ("boundary.toml", "scenario = \"vortex\"\n[boundary]\nx_lo = \"wall\"\n"),
        ("unknown.toml", "scenario = \"vortex\"\nresolution = 3\n"),
        ("time.toml", "scenario = \"vortex\"\nfinal_time = -1.0\n"),
    ] {
        let path = write(&dir, name, text);
        let out = solver(&["run", &path]);
        assert_eq!(out.status.code(), Some(2), "{name}");
        assert_eq!(diagnostic(&out)["error"], "config", "{name}");
    }
}

#[test]
fn runtime_failure_exits_with_three() {
    let dir = scratch("runtime");
    // the output directory cannot be created below a regular file
    let blocker = write(&dir, "file", "");
    let path = write(&dir, "sod.toml", SMALL_SOD);
    let out = solver(&["run", &path, "--out", &format!("{blocker}/sub")]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(diagnostic(&out)["error"], "io");
}

#[test]
fn mesh_dump_lists_the_cut_cells() {
    let dir = scratch("dump");
    let path = write(&dir, "vortex.toml", "scenario = \"vortex\"\ncells = [8, 8]\n");
    let out = solver(&["mesh-dump", &path]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("i1,i2,class,nu,target_i1,target_i2"));
    assert!(lines.count() > 10);
}

#[test]
fn runs_write_tables_and_are_reproducible() {
    let dir = scratch("repro");
    let path = write(&dir, "sod.toml", SMALL_SOD);
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out_dir = dir.join(format!("run{k}"));
        let out = solver(&["run", &path, "--out", out_dir.to_str().unwrap(), "--threads", "2"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(out_dir);
    }
    for name in ["conservation.csv", "probe_centerline.csv", "probe_wall.csv"] {
        let a = std::fs::read(outputs[0].join(name)).unwrap();
        let b = std::fs::read(outputs[1].join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    let header = std::fs::read_to_string(outputs[0].join("conservation.csv")).unwrap();
    assert!(header.starts_with("step,t,mass,momentum_x,momentum_y,energy\n"));
}

#[test]
fn snapshots_and_step_limit() {
    let dir = scratch("snap");
    let path = write(&dir, "sod.toml", "scenario = \"sod2d\"\nfinal_time = 0.02\ncells = [8, 8]\n");
    let out_dir = dir.join("out");
    let out = solver(&[
        "run",
        &path,
        "--out",
        out_dir.to_str().unwrap(),
        "--max-steps",
        "3",
        "--snapshot-every",
        "0.005",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let vtk = std::fs::read_to_string(out_dir.join("snapshot_0000.vtk")).unwrap();
    assert!(vtk.starts_with("# vtk DataFile Version 3.0\n"));
    assert!(vtk.contains("SCALARS density double 1"));
    let rows = std::fs::read_to_string(out_dir.join("conservation.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 1 + 3);
}
