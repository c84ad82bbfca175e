use std::path::{Path, PathBuf};
use std::process::Command;

const DRIVER: &str = r#"
#include <stdio.h>
#include <string.h>
#include "hyfuzz.h"

int main(void) {
    const char *src = ".input 1\nIN r0, 0\nBEQ r0, 7, win\nHALT\nwin: HALT\n";
    HfProgram *p = NULL;
    if (hf_program_from_source(src, &p) != HF_STATUS_OK) return 1;
    HfConfig *c = NULL;
    hf_config_new(&c);
    hf_config_set(c, "batch_size", "16");
    hf_config_set(c, "iterations", "50");
    const uint8_t seed[1] = {0};
    const uint8_t *seeds[1] = {seed};
    size_t lens[1] = {1};
    HfReport *r = NULL;
    if (hf_campaign_run(p, c, seeds, lens, 1, &r) != HF_STATUS_OK) return 2;
    printf("%zu/%zu\n", hf_report_covered_edges(r), hf_report_reachable_edges(r));
    if (hf_program_from_source("NOPE", &p) != HF_STATUS_ASSEMBLY) return 3;
    if (hf_last_error() == NULL) return 4;
    hf_report_free(r);
    hf_config_free(c);
    hf_program_free(p);
    return 0;
}
"#;

fn staticlib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let profile_dir = exe.parent()?.parent()?;
    let lib = profile_dir.join("libhyfuzz_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn header_compiles_and_links_from_c() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(include.join("hyfuzz.h").exists());
    let Some(lib) = staticlib() else {
        eprintln!("static library not built; skipping C link check");
        return;
    };
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("driver.c");
    std::fs::write(&c, DRIVER).unwrap();
    let exe = dir.path().join("driver");
    let status = Command::new("cc")
        .args(["-std=c11", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&c)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "2/2");
}
