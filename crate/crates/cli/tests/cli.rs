use std::process::Command;

fn weightlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_weightlab"))
}

#[test]
fn list_builtins_names_the_gallery() {
    let out = weightlab().arg("list-builtins").output().unwrap();
    assert!(out.status.success());
    let s = String::from_utf8(out.stdout).unwrap();
    assert!(s.contains("hilbert") && s.contains("exp-directional"), "{s}");
}

#[test]
fn bad_scenario_reports_a_line_and_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\n  \"schema\": 1,\n  \"name\": \"bad\",\n  \"mode\": \"ap\",\n  \"bogus\": 3\n}\n").unwrap();
    let out = weightlab().arg("run").arg(&path).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("bad.json:5:"), "{err}");
}

#[test]
fn run_writes_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let scen = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/ap-constant.json");
    let out = weightlab().arg("run").arg(scen).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let names: Vec<String> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    assert!(names.iter().any(|n| n.ends_with(".json")) && names.iter().any(|n| n.ends_with(".csv")), "{names:?}");
    let csv = std::fs::read_to_string(dir.path().join(names.iter().find(|n| n.ends_with(".csv")).unwrap())).unwrap();
    assert!(csv.starts_with("scenario,mode,p,level,family,constant,witness,pass"), "{csv}");
}
