use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use ordutil_service::cli::{run, EXIT_INFEASIBLE, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION};

const SCHEMA: &str = r#"{"attributes":[{"name":"X1"},{"name":"X2"},{"name":"X3"},{"name":"X4"}]}"#;
const CATALOG: &str = "\
id,X1,X2,X3,X4
e,true,true,false,false
a,true,false,true,false
g,false,false,false,true
c,false,false,true,false
b,true,true,true,false
f,true,true,false,true
d,true,true,true,true
";
const WORKED: &str =
    "# worked example\nprefer (X1 or X2) over (not X3)\nprefer X3 over X4\nprefer X1 over X2\n";

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Fixture {
            dir: tempfile::tempdir().unwrap(),
        };
        f.write("schema.json", SCHEMA);
        f.write("catalog.csv", CATALOG);
        f.write("worked.txt", WORKED);
        f.write("contradict.txt", "prefer X1 over X2\nprefer X2 over X1\n");
        f
    }

    fn write(&self, name: &str, body: &str) -> PathBuf {
        let p = self.dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).display().to_string()
    }

    fn run(&self, args: &[&str]) -> (i32, String) {
        let mut out = Vec::new();
        let code = run(
            std::iter::once("ordutil").chain(args.iter().copied()),
            &mut out,
        );
        (code, String::from_utf8(out).unwrap())
    }

    fn solve_args<'a>(&'a self, paths: &'a [String; 3]) -> Vec<&'a str> {
        vec![
            "solve",
            "--schema",
            &paths[0],
            "--catalog",
            &paths[1],
            "--statements",
            &paths[2],
        ]
    }
}

fn paths(f: &Fixture, statements: &str) -> [String; 3] {
    [
        f.path("schema.json"),
        f.path("catalog.csv"),
        f.path(statements),
    ]
}

#[test]
fn solve_prints_the_ranking() {
    let f = Fixture::new();
    let p = paths(&f, "worked.txt");
    let mut args = f.solve_args(&p);
    args.extend(["--unweighted", "--explain"]);
    let (code, out) = f.run(&args);
    assert_eq!(code, EXIT_OK, "{out}");
    let ids: Vec<&str> = out
        .lines()
        .skip(2)
        .take(7)
        .map(|l| l.split('\t').nth(1).unwrap())
        .collect();
    assert_eq!(ids, vec!["a", "b", "c", "d", "e", "f", "g"]);
    assert!(out.contains("verdict: optimal"));
    assert!(out.contains("0.400000\tX1=false and X2=true"), "{out}");
}

#[test]
fn solve_json_and_top() {
    let f = Fixture::new();
    let p = paths(&f, "worked.txt");
    let mut args = f.solve_args(&p);
    args.extend(["--degree", "2", "--top", "2", "--json"]);
    let (code, out) = f.run(&args);
    assert_eq!(code, EXIT_OK);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["verdict"], "optimal");
    assert_eq!(v["ranking"]["items"].as_array().unwrap().len(), 2);
    assert_eq!(
        v["kernel"]["lambdas"],
        serde_json::json!([1.0, 1.0, 0.0, 0.0])
    );
    assert!(v.get("weights").is_none());
}

#[test]
fn infeasible_and_soft_exit_codes() {
    let f = Fixture::new();
    let p = paths(&f, "contradict.txt");
    let (code, out) = f.run(&f.solve_args(&p));
    assert_eq!(code, EXIT_INFEASIBLE);
    assert!(out.contains("likely inconsistent"));
    let mut args = f.solve_args(&p);
    args.extend(["--soft", "1"]);
    assert_eq!(f.run(&args).0, EXIT_OK);
}

#[test]
fn validation_failures() {
    let f = Fixture::new();
    f.write("bad.txt", "prefer X1 over X2\nprefer X1 over X9\n");
    f.write("syntax.txt", "prefer X1 beyond X2\n");
    for name in ["bad.txt", "syntax.txt", "missing.txt"] {
        let p = paths(&f, name);
        assert_eq!(f.run(&f.solve_args(&p)).0, EXIT_VALIDATION, "{name}");
    }
    let p = paths(&f, "worked.txt");
    let mut args = f.solve_args(&p);
    args.extend(["--degree", "9"]);
    assert_eq!(f.run(&args).0, EXIT_VALIDATION);
}

#[test]
fn check_parses_and_compiles() {
    let f = Fixture::new();
    let stmts = f.path("worked.txt");
    let (code, out) = f.run(&["check", "--statements", &stmts]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.trim(), "3 statements parsed");
    let schema = f.path("schema.json");
    let (code, out) = f.run(&["check", "--statements", &stmts, "--schema", &schema]);
    assert_eq!(code, EXIT_OK);
    assert!(
        out.contains("line 2: 3 constraints: prefer X1 or X2 over not X3"),
        "{out}"
    );
    assert!(out.ends_with("3 statements, 5 constraints\n"));
    f.write("syntax.txt", "good X1\n");
    assert_eq!(
        f.run(&["check", "--statements", &f.path("syntax.txt")]).0,
        EXIT_VALIDATION
    );
}

#[test]
fn sweep_writes_rows() {
    let f = Fixture::new();
    f.write(
        "sweep.toml",
        "attributes = 5\ncatalog_size = 60\nbudgets = [0, 10]\ndegrees = [1, 2]\ntrials = 2\n\n[margin]\nkind = \"soft\"\nc = 10.0\n",
    );
    let out_path = f.path("curve.csv");
    let (code, out) = f.run(&[
        "sweep",
        "--config",
        &f.path("sweep.toml"),
        "--out",
        &out_path,
    ]);
    assert_eq!(code, EXIT_OK, "{out}");
    let csv = fs::read_to_string(&out_path).unwrap();
    assert!(csv.starts_with("degree,k,mean_error,std,trials\n"));
    assert_eq!(csv.lines().count(), 5);

    f.write("sweep.json", r#"{"attributes": 3, "truth_order": 5}"#);
    assert_eq!(
        f.run(&[
            "sweep",
            "--config",
            &f.path("sweep.json"),
            "--out",
            &out_path
        ])
        .0,
        EXIT_VALIDATION
    );
}

#[test]
fn usage_errors() {
    let f = Fixture::new();
    assert_eq!(f.run(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(f.run(&["solve", "--schema", "x"]).0, EXIT_USAGE);
    assert_eq!(f.run(&["--help"]).0, EXIT_OK);
}

#[test]
fn binary_exit_codes() {
    let f = Fixture::new();
    let bin = Path::new(env!("CARGO_BIN_EXE_ordutil"));
    let status = |args: &[&str]| {
        Command::new(bin)
            .args(args)
            .output()
            .unwrap()
            .status
            .code()
            .unwrap()
    };
    let p = paths(&f, "worked.txt");
    assert_eq!(status(&f.solve_args(&p)), 0);
    let p = paths(&f, "contradict.txt");
    assert_eq!(status(&f.solve_args(&p)), 3);
    assert_eq!(status(&["check"]), 1);
    assert_eq!(status(&["check", "--statements", "/nonexistent"]), 2);
}
