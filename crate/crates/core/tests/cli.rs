use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_hyfuzz");

fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn hyfuzz(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn symex_solves_the_nested_check() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w");
    fs::write(&w, [0x41, 0x00]).unwrap();
    let o = hyfuzz(&[
        "symex",
        &fixture("checks.s"),
        "--witness",
        p(&w),
        "--src",
        "0x10",
        "--dst",
        "0x18",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    assert!(s.contains("(eq (byte 1) 66)"), "{s}");
    assert!(s.contains("input: 41 42"), "{s}");
    assert!(s.contains("validated: reached 0x18"), "{s}");
}

#[test]
fn asm_cfg_run_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("checks.bin");
    let o = hyfuzz(&["asm", &fixture("checks.s"), "-o", p(&bin)]);
    assert!(o.status.success());

    let o = hyfuzz(&["cfg", p(&bin)]);
    assert!(o.status.success());
    let o = hyfuzz(&["cfg", p(&bin), "--export", "dot"]);
    assert!(stdout(&o).starts_with("digraph"));

    let input = dir.path().join("in");
    fs::write(&input, [0x41, 0x42]).unwrap();
    let o = hyfuzz(&["run", p(&bin), "--input", p(&input), "--trace"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("0x18"), "{}", stdout(&o));
}

#[test]
fn fuzz_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = dir.path().join("seeds");
    fs::create_dir(&seeds).unwrap();
    fs::write(seeds.join("a"), [0u8; 2]).unwrap();
    let out = dir.path().join("out");
    let o = Command::new(BIN)
        .args(["fuzz", &fixture("checks.s"), "--seeds", p(&seeds)])
        .args(["--iterations", "30", "--batch-size", "8", "-W", "3"])
        .env("HYFUZZ_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "coverage.csv",
        "crashes.json",
        "symbolic.json",
        "summary.txt",
        "config.txt",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("edges_covered: 6"), "{summary}");

    let o = hyfuzz(&["report", p(&out)]);
    assert!(o.status.success());
    assert!(
        stdout(&o).contains("stop_reason: full_coverage"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hyfuzz(&["--bogus"]).status.code(), Some(1));
    assert_eq!(hyfuzz(&["--help"]).status.code(), Some(0));
    assert_eq!(hyfuzz(&["cfg", "/nonexistent/file"]).status.code(), Some(1));

    let bad = dir.path().join("bad.s");
    fs::write(&bad, "FROB r1\n").unwrap();
    let o = hyfuzz(&["asm", p(&bad), "-o", p(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());

    let bin = dir.path().join("checks.bin");
    assert!(hyfuzz(&["asm", &fixture("checks.s"), "-o", p(&bin)])
        .status
        .success());
    let mut bytes = fs::read(&bin).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xFF;
    fs::write(&bin, &bytes).unwrap();
    assert_eq!(hyfuzz(&["cfg", p(&bin)]).status.code(), Some(2));

    let o = hyfuzz(&["report", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}
