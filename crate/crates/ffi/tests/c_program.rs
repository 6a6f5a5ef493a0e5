//! Compiles a small C program against the generated header and static
//! library. Skipped when no C compiler is on the path.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "nlsescat.h"

int main(void) {
    NlsPotential *p = NULL;
    if (nls_potential_rectangular_well(50.0, 20.0, &p) != NLS_STATUS_OK) return 1;
    NlsParams params = {1.0, 1.0, 0.0, 1.3};
    NlsScatterResult r;
    if (nls_solve_transmission(p, &params, 1.0, 0.0, NLS_LEFT_TO_RIGHT, &r) != NLS_STATUS_OK) return 2;
    double t = 0.0;
    nls_rect_well_transmission(1.3, 50.0, 20.0, 1.0, 1.0, &t);
    if (fabs(r.transmission - t) > 1e-8) return 3;
    params.g = 2.0;
    if (nls_solve_transmission(p, &params, 1.0, 0.0, NLS_LEFT_TO_RIGHT, &r) != NLS_STATUS_NEGATIVE_RADICAND) return 4;
    printf("%s|%s\n", nls_version(), nls_last_error());
    nls_potential_free(p);
    return 0;
}
"#;

#[test]
fn c_program_links_and_runs() {
    let Some(cc) = ["cc", "gcc", "clang"].into_iter().find(|c| Command::new(c).arg("--version").output().is_ok()) else {
        eprintln!("no C compiler; skipped");
        return;
    };
    // target/<profile>/deps/<test> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libnlsescat_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipped", lib.display());
        return;
    }
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let out = Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert_eq!(run.status.code(), Some(0));
    let text = String::from_utf8(run.stdout).unwrap();
    assert!(text.starts_with(env!("CARGO_PKG_VERSION")));
    assert!(text.contains("radicand"));
}
