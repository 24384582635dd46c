use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tvflow_core::datagen::{render, ShapeSpec};
use tvflow_core::io::{read_fields, read_image, read_npy, read_stack, read_vector, write_image, write_stack, write_vector};
use tvflow_core::spacetime::SpaceTimeState;
use tvflow_core::Image;

fn tvflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvflow"))
        .args(args)
        .current_dir(dir)
        .env_remove("TVFLOW_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&o.stdout)))
}

fn schema_check(name: &str, v: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(format!("{name}.schema.json"));
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(v).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}\n{v:#}");
}

fn disk(dir: &Path, n: usize, r: f64, name: &str) -> PathBuf {
    let p = dir.join(name);
    write_image(&p, &render(&[ShapeSpec::centered_disk(n, r, 1.0)], n, n, 0.0, false).unwrap()).unwrap();
    p
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    if let Ok(rd) = std::fs::read_dir(dir) {
        for e in rd.flatten() {
            let p = e.path();
            if p.is_dir() {
                out.extend(files_under(&p));
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_then_eigen_fit_is_linear() {
    let dir = tempfile::tempdir().unwrap();
    let g = tvflow(dir.path(), &["gen", "--disk", "r=8", "c=1", "--size", "32"]);
    assert_eq!(code(&g), 0, "{}", String::from_utf8_lossy(&g.stderr));
    let gj = stdout_json(&g);
    schema_check("gen", &gj);
    assert_eq!(gj["outputs"][0]["path"], "./u0.npy");
    let u0 = read_image(&dir.path().join("u0.npy")).unwrap();
    assert_eq!(u0, render(&[ShapeSpec::centered_disk(32, 8.0, 1.0)], 32, 32, 0.0, false).unwrap());

    let e = tvflow(dir.path(), &["eval", "--eigen", "--input", "u0.npy"]);
    assert_eq!(code(&e), 0, "{}", String::from_utf8_lossy(&e.stderr));
    let ej = stdout_json(&e);
    schema_check("eval_eigen", &ej);
    assert!(ej["fit"]["r_squared"].as_f64().unwrap() >= 0.999, "{ej:#}");
    assert!(ej["fit"]["slope"].as_f64().unwrap() < 0.0);
    assert!(dir.path().join("eval_eigen.json").exists());
}

#[test]
fn implicit_flow_example_conserves_mean() {
    let dir = tempfile::tempdir().unwrap();
    disk(dir.path(), 32, 8.0, "disk.npy");
    let o = tvflow(dir.path(), &["flow", "--input", "disk.npy", "--scheme", "implicit", "--dt", "0.02", "--T", "1", "--nt", "50", "--out-dir", "out"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let j = stdout_json(&o);
    schema_check("flow", &j);
    assert_eq!(j["converged"], true);
    assert_eq!(j["settings"]["substeps"], 2);

    let out = dir.path().join("out");
    let frames = read_stack(&out.join("trajectory.npy")).unwrap();
    let times = read_vector(&out.join("times.npy")).unwrap();
    let phi = read_fields(&out.join("phi.npy")).unwrap();
    assert_eq!((frames.len(), times.len(), phi.len()), (50, 50, 50));
    assert_eq!(times[49], 1.0);
    let m0 = frames[0].mean();
    for f in &frames {
        assert!((f.mean() - m0).abs() <= 1e-8 * m0.abs());
    }
    let (shape, _) = read_npy(&out.join("phi.npy")).unwrap();
    assert_eq!(shape, vec![50, 2, 32, 32]);
}

#[test]
fn constant_image_frames_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_image(&dir.path().join("c.npy"), &Image::filled(12, 9, 0.375).unwrap()).unwrap();
    for scheme in ["implicit", "explicit", "lagged"] {
        let o = tvflow(dir.path(), &["flow", "-i", "c.npy", "--scheme", scheme, "--nt", "6", "--T", "0.05", "--out-dir", scheme]);
        assert_eq!(code(&o), 0, "{scheme}: {}", String::from_utf8_lossy(&o.stderr));
        let frames = read_stack(&dir.path().join(scheme).join("trajectory.npy")).unwrap();
        let bits = |f: &Image| f.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert!(frames.iter().all(|f| bits(f) == bits(&frames[0])), "{scheme}");
    }
}

#[test]
fn missing_input_is_io_error_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = tvflow(dir.path(), &["flow", "--input", "nope.npy", "--out-dir", "out"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.npy"));
    assert!(!dir.path().join("out").exists());

    let s = tvflow(dir.path(), &["spacetime", "--input", "nope.npy", "--out-dir", "out"]);
    assert_eq!(code(&s), 3);
    assert!(files_under(dir.path()).is_empty());
}

#[test]
fn unwritable_output_leaves_no_partial_files() {
    let dir = tempfile::tempdir().unwrap();
    disk(dir.path(), 8, 2.0, "d.npy");
    std::fs::write(dir.path().join("blocker"), b"x").unwrap();
    let o = tvflow(dir.path(), &["flow", "-i", "d.npy", "--nt", "3", "--out-dir", "out", "--report", "blocker/flow.json"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!dir.path().join("out").join("trajectory.npy").exists());
    assert!(!dir.path().join("out").join("times.npy").exists());
}

#[test]
fn unknown_flag_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    for args in [vec!["flow", "--bogus"], vec!["nonsense"], vec!["eval"]] {
        let o = tvflow(dir.path(), &args);
        assert_eq!(code(&o), 2, "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"), "{args:?}");
    }
    let o = tvflow(dir.path(), &["flow", "-i", "x.npy", "--scheme", "magic"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("possible values"));
}

#[test]
fn invalid_values_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    disk(dir.path(), 8, 2.0, "d.npy");
    for args in [
        vec!["flow", "-i", "d.npy", "--nt", "1"],
        vec!["flow", "-i", "d.npy", "--T", "-1"],
        vec!["flow", "-i", "d.npy", "--scheme", "explicit", "--dt", "0.1"],
        vec!["flow", "-i", "d.npy", "--tol", "0"],
        vec!["spacetime", "-i", "d.npy", "--lr", "-1"],
        vec!["gen", "--disk", "c=1"],
        vec!["gen", "--disk", "r=2", "q=1"],
        vec!["gen", "--size", "1"],
    ] {
        let o = tvflow(dir.path(), &args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(files_under(dir.path()), vec![dir.path().join("d.npy")]);
}

#[test]
fn non_convergence_keeps_flagged_outputs() {
    let dir = tempfile::tempdir().unwrap();
    disk(dir.path(), 16, 4.0, "d.npy");
    let o = tvflow(dir.path(), &["flow", "-i", "d.npy", "--nt", "4", "--max-iter", "1", "--out-dir", "out"]);
    assert_eq!(code(&o), 4);
    let j = stdout_json(&o);
    schema_check("flow", &j);
    assert_eq!(j["converged"], false);
    assert!(j["runs"][0]["unconverged_steps"].as_u64().unwrap() > 0);
    assert_eq!(read_stack(&dir.path().join("out/trajectory.npy")).unwrap().len(), 4);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/flow.json")).unwrap()).unwrap();
    assert_eq!(report, j);
}

#[test]
fn spacetime_defaults_and_history() {
    let dir = tempfile::tempdir().unwrap();
    disk(dir.path(), 6, 1.5, "d.npy");
    let o = tvflow(dir.path(), &["spacetime", "-i", "d.npy", "--out-dir", "st"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let j = stdout_json(&o);
    schema_check("spacetime", &j);
    let s = &j["settings"];
    assert_eq!((s["nt"].as_u64(), s["t_end"].as_f64()), (Some(50), Some(1.0)));
    assert_eq!((s["adam"]["lr"].as_f64(), s["adam"]["epochs"].as_u64()), (Some(5e-3), Some(2000)));
    assert_eq!((s["weights"]["alpha1"].as_f64(), s["weights"]["alpha2"].as_f64()), (Some(1e-4), Some(1e-4)));

    let history: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("st/history.json")).unwrap()).unwrap();
    schema_check("history", &history);
    assert_eq!(history.as_array().unwrap().len(), 2000);
    assert_eq!(read_stack(&dir.path().join("st/u_stack.npy")).unwrap().len(), 50);
    let (shape, _) = read_npy(&dir.path().join("st/phi_stack.npy")).unwrap();
    assert_eq!(shape, vec![50, 2, 6, 6]);
}

#[test]
fn spacetime_zero_epochs_returns_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let u0_path = disk(dir.path(), 10, 3.0, "d.npy");
    let o = tvflow(dir.path(), &["spacetime", "-i", "d.npy", "--epochs", "0", "--nt", "7", "--T", "0.5", "--out-dir", "st"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let u0 = read_image(&u0_path).unwrap();
    let init = SpaceTimeState::initial(&u0, 7, 0.5, 1e-3).unwrap();
    assert_eq!(read_stack(&dir.path().join("st/u_stack.npy")).unwrap(), init.u());
    assert_eq!(read_fields(&dir.path().join("st/phi_stack.npy")).unwrap(), init.phi());
    assert_eq!(read_vector(&dir.path().join("st/times.npy")).unwrap(), init.times());
    let history: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("st/history.json")).unwrap()).unwrap();
    assert_eq!(history, Value::Array(vec![]));

    let o = tvflow(dir.path(), &["spacetime", "-i", "d.npy", "--epochs", "13", "--nt", "7", "--out-dir", "st13"]);
    assert_eq!(code(&o), 0);
    let history: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("st13/history.json")).unwrap()).unwrap();
    assert_eq!(history.as_array().unwrap().len(), 13);
}

#[test]
fn spacetime_blow_up_exits_five() {
    let dir = tempfile::tempdir().unwrap();
    disk(dir.path(), 6, 1.5, "d.npy");
    let o = tvflow(dir.path(), &["spacetime", "-i", "d.npy", "--epochs", "5", "--nt", "4", "--lr", "1e300", "--out-dir", "st"]);
    assert_eq!(code(&o), 5, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!dir.path().join("st").exists());
}

#[test]
fn spectral_constant_trajectory_is_sentinel() {
    let dir = tempfile::tempdir().unwrap();
    let c = Image::filled(12, 12, 0.25).unwrap();
    write_stack(&dir.path().join("t.npy"), &vec![c; 5]).unwrap();
    write_vector(&dir.path().join("times.npy"), &[0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
    let o = tvflow(dir.path(), &["spectral", "--trajectory", "t.npy", "--times", "times.npy", "--reconstruct", "--band", "0:0.5", "--band", "0.5:1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let j = stdout_json(&o);
    schema_check("spectral", &j);
    assert_eq!(j["reconstruction"]["psnr"], Value::Null);
    assert_eq!(j["reconstruction"]["identical"], true);
    assert_eq!(j["bands"].as_array().unwrap().len(), 2);
    assert_eq!(read_image(&dir.path().join("band_01.npy")).unwrap().max_abs(), 0.0);

    let bad = tvflow(dir.path(), &["spectral", "--trajectory", "t.npy", "--times", "times.npy", "--band", "0.5:0.2", "--out-dir", "b"]);
    assert_eq!(code(&bad), 2);
    let outside = tvflow(dir.path(), &["spectral", "--trajectory", "t.npy", "--times", "times.npy", "--band", "0.5:2", "--out-dir", "b"]);
    assert_eq!(code(&outside), 2);
    assert!(!dir.path().join("b").exists());
}

#[test]
fn spectral_reconstruction_of_flow_output() {
    let dir = tempfile::tempdir().unwrap();
    disk(dir.path(), 32, 8.0, "d.npy");
    let f = tvflow(dir.path(), &["flow", "-i", "d.npy", "--out-dir", "f"]);
    assert_eq!(code(&f), 0, "{}", String::from_utf8_lossy(&f.stderr));
    let o = tvflow(dir.path(), &["spectral", "--trajectory", "f/trajectory.npy", "--times", "f/times.npy", "--reconstruct", "--u0", "d.npy", "--out-dir", "s"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let j = stdout_json(&o);
    schema_check("spectral", &j);
    assert_eq!(j["nt"], 50);
    assert!(j["reconstruction"]["psnr"].as_f64().unwrap() >= 50.0, "{j:#}");
    assert_eq!(j["spectrum"].as_array().unwrap().len(), 50);
    let (shape, _) = read_npy(&dir.path().join("s/responses.npy")).unwrap();
    assert_eq!(shape, vec![50, 32, 32]);
}

#[test]
fn compare_identical_is_sentinel() {
    let dir = tempfile::tempdir().unwrap();
    let frames: Vec<Image> = (0..4).map(|k| Image::filled(12, 12, 0.1 * k as f64).unwrap()).collect();
    write_stack(&dir.path().join("a.npy"), &frames).unwrap();
    let o = tvflow(dir.path(), &["eval", "--compare", "a.npy", "a.npy"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let j = stdout_json(&o);
    schema_check("eval_compare", &j);
    let r = &j["report"];
    assert_eq!(r["identical_nodes"], 4);
    assert_eq!(r["psnr"]["mean"], Value::Null);
    assert_eq!(r["psnr"]["count"], 0);
    assert!(r["nodes"].as_array().unwrap().iter().all(|n| n["psnr"].is_null() && n["identical"] == true));

    let mut other = frames.clone();
    other[2] = Image::filled(12, 12, 0.3).unwrap();
    write_stack(&dir.path().join("b.npy"), &other).unwrap();
    let o = tvflow(dir.path(), &["eval", "--compare", "a.npy", "b.npy"]);
    let j = stdout_json(&o);
    // 0.2 vs 0.3 everywhere: PSNR = -10 log10(0.01) = 20 dB.
    assert!((j["report"]["nodes"][2]["psnr"].as_f64().unwrap() - 20.0).abs() < 1e-9);
    assert_eq!(j["report"]["psnr"]["count"], 1);

    write_vector(&dir.path().join("t3.npy"), &[0.0, 0.5, 1.0]).unwrap();
    let mismatched = tvflow(dir.path(), &["eval", "--compare", "a.npy", "b.npy", "--times", "t3.npy"]);
    assert_eq!(code(&mismatched), 2);
    let not_a_vector = tvflow(dir.path(), &["eval", "--compare", "a.npy", "b.npy", "--times", "a.npy"]);
    assert_eq!(code(&not_a_vector), 3);
}

#[test]
fn homogeneity_report() {
    let dir = tempfile::tempdir().unwrap();
    disk(dir.path(), 16, 4.0, "d.npy");
    let o = tvflow(dir.path(), &["eval", "--homogeneity", "--input", "d.npy", "--c", "3", "--nt", "6", "--T", "0.5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let j = stdout_json(&o);
    schema_check("eval_homogeneity", &j);
    assert_eq!(j["method"], "implicit");
    assert!(j["report"]["psnr"]["mean"].as_f64().unwrap_or(f64::INFINITY) >= 45.0, "{j:#}");
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let snapshot = |d: &Path| files_under(d).into_iter().map(|p| (p.clone(), std::fs::read(p).unwrap())).collect::<Vec<_>>();
    let runs: [&[&str]; 3] = [
        &["gen", "--random-shapes", "3", "--seed", "7", "--size", "24", "--preview", "--out-dir", "g"],
        &["flow", "-i", "g/u0.npy", "--nt", "5", "--T", "0.2", "--preview", "--out-dir", "f"],
        &["spacetime", "-i", "g/u0.npy", "--nt", "5", "--epochs", "20", "--out-dir", "s"],
    ];
    // The flow may stop at max_iter on this image; the exit code must repeat too.
    let codes: Vec<i32> = runs.iter().map(|args| code(&tvflow(dir.path(), args))).collect();
    assert!(codes.iter().all(|&c| c == 0 || c == 4), "{codes:?}");
    let first = snapshot(dir.path());
    let again: Vec<i32> = runs.iter().map(|args| code(&tvflow(dir.path(), args))).collect();
    assert_eq!(codes, again);
    assert_eq!(first, snapshot(dir.path()));
    assert!(dir.path().join("f/preview/frame_004.pgm").exists());
    assert!(dir.path().join("g/u0.pgm").exists());
}

#[test]
fn out_dir_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_tvflow"))
        .args(["gen", "--texture", "smooth", "--size", "8", "--seed", "3"])
        .current_dir(dir.path())
        .env("TVFLOW_OUT_DIR", "from_env")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("from_env/u0.npy").exists());
    assert!(dir.path().join("from_env/gen.json").exists());
}

#[test]
fn config_file_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    disk(dir.path(), 8, 2.0, "d.npy");
    std::fs::write(dir.path().join("c.toml"), "[flow]\nnt = 4\nt_end = 0.3\n").unwrap();
    let o = tvflow(dir.path(), &["flow", "-i", "d.npy", "--config", "c.toml"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let j = stdout_json(&o);
    assert_eq!((j["settings"]["nt"].as_u64(), j["settings"]["t_end"].as_f64()), (Some(4), Some(0.3)));
    let o = tvflow(dir.path(), &["flow", "-i", "d.npy", "--config", "c.toml", "--nt", "3"]);
    assert_eq!(stdout_json(&o)["settings"]["nt"], 3);

    std::fs::write(dir.path().join("bad.toml"), "[flow]\nsolver = \"newton\"\n").unwrap();
    assert_eq!(code(&tvflow(dir.path(), &["flow", "-i", "d.npy", "--config", "bad.toml"])), 2);
    assert_eq!(code(&tvflow(dir.path(), &["flow", "-i", "d.npy", "--config", "absent.toml"])), 3);
}

#[test]
fn several_inputs_run_in_parallel() {
    let dir = tempfile::tempdir().unwrap();
    disk(dir.path(), 10, 2.0, "a.npy");
    disk(dir.path(), 10, 3.0, "b.npy");
    let o = tvflow(dir.path(), &["flow", "-i", "a.npy", "-i", "b.npy", "--nt", "4", "--jobs", "2", "--out-dir", "par"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let j = stdout_json(&o);
    schema_check("flow", &j);
    assert_eq!(j["runs"].as_array().unwrap().len(), 2);
    for name in ["a", "b"] {
        let single = tvflow(dir.path(), &["flow", "-i", &format!("{name}.npy"), "--nt", "4", "--out-dir", &format!("one_{name}")]);
        assert_eq!(code(&single), 0);
        assert_eq!(
            std::fs::read(dir.path().join(format!("par/{name}/trajectory.npy"))).unwrap(),
            std::fs::read(dir.path().join(format!("one_{name}/trajectory.npy"))).unwrap()
        );
    }
}

#[test]
fn gen_modes() {
    let dir = tempfile::tempdir().unwrap();
    let o = tvflow(dir.path(), &["gen", "--suite", "2", "3", "--size", "16", "--seed", "11", "--name", "s"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let j = stdout_json(&o);
    schema_check("gen", &j);
    assert_eq!(j["outputs"].as_array().unwrap().len(), 5);
    let suite = tvflow_core::datagen::synthetic_suite(16, 2, 3, 11).unwrap();
    for (k, img) in suite.iter().enumerate() {
        assert_eq!(&read_image(&dir.path().join(format!("s_{k:03}.npy"))).unwrap(), img);
    }

    let o = tvflow(dir.path(), &["gen", "--disk", "r=3", "c=0.5", "x=4", "y=5", "--ellipse", "rx=4", "ry=2", "angle=0.5", "--height", "12", "--width", "14", "--background", "0.1", "--name", "e"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let expected = render(
        &[ShapeSpec::disk(4.0, 5.0, 3.0, 0.5), ShapeSpec::ellipse(6.5, 5.5, 4.0, 2.0, 0.5, 1.0)],
        12,
        14,
        0.1,
        false,
    )
    .unwrap();
    assert_eq!(read_image(&dir.path().join("e.npy")).unwrap(), expected);
    assert_eq!(stdout_json(&o)["shapes"].as_array().unwrap().len(), 2);
}

/// The files must load in numpy with the documented dtype and shapes.
#[test]
fn numpy_reads_outputs() {
    let probe = Command::new("python3").args(["-c", "import numpy"]).output();
    if !probe.map(|o| o.status.success()).unwrap_or(false) {
        eprintln!("python3 with numpy not available; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    disk(dir.path(), 9, 2.0, "d.npy");
    assert_eq!(code(&tvflow(dir.path(), &["flow", "-i", "d.npy", "--nt", "4", "--out-dir", "f"])), 0);
    let script = r#"
import numpy as np
t = np.load("f/trajectory.npy"); s = np.load("f/times.npy"); p = np.load("f/phi.npy"); u = np.load("d.npy")
assert t.dtype == np.dtype("<f8") and t.shape == (4, 9, 9), (t.dtype, t.shape)
assert s.shape == (4,) and p.shape == (4, 2, 9, 9)
assert np.array_equal(t[0], u)
assert np.all(p[:, 0, :, -1] == 0) and np.all(p[:, 1, -1, :] == 0)
# u_{k+1} = u_k + dt div phi_k with the backward-difference divergence
def div(px, py):
    d = np.zeros_like(px)
    d[:, 0] += px[:, 0]; d[:, 1:-1] += px[:, 1:-1] - px[:, :-2]; d[:, -1] -= px[:, -2]
    d[0, :] += py[0, :]; d[1:-1, :] += py[1:-1, :] - py[:-2, :]; d[-1, :] -= py[-2, :]
    return d
dt = s[1] - s[0]
for k in range(3):
    # holds to inner-solver accuracy
    assert np.abs(t[k] + dt * div(p[k, 0], p[k, 1]) - t[k + 1]).max() < 1e-3
np.save("from_numpy.npy", np.arange(6, dtype=np.float32).reshape(2, 3))
"#;
    let o = Command::new("python3").args(["-c", script]).current_dir(dir.path()).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let img = read_image(&dir.path().join("from_numpy.npy")).unwrap();
    assert_eq!(img.as_slice(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
}
