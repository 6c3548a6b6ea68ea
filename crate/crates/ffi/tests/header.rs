//! Compiles and runs a C client against the generated header and static library.

use std::path::{Path, PathBuf};
use std::process::Command;

const CLIENT: &str = r#"
#include <stdio.h>
#include "driftgp.h"

int main(void) {
    double x[40], y[20];
    for (int i = 0; i < 20; i++) {
        x[2 * i] = (i % 7) * 0.5 - 1.5;
        x[2 * i + 1] = (i % 5) * 0.6 - 1.2;
        y[i] = x[2 * i] - 0.5 * x[2 * i + 1];
    }
    DriftGpConfig cfg = driftgp_config_default();
    DriftGpModel *m = NULL;
    if (driftgp_model_new(&cfg, x, y, 20, 2, &m) != DRIFT_GP_STATUS_OK) return 1;
    double mean[1];
    if (driftgp_model_predict(m, x, 1, 2, mean, NULL) != DRIFT_GP_STATUS_OK) return 2;
    if (driftgp_model_new(&cfg, x, y, 20, 2, NULL) != DRIFT_GP_STATUS_NULL_POINTER) return 3;
    if (driftgp_last_error() == NULL) return 4;
    printf("%zu\n", driftgp_model_inducing_count(m));
    driftgp_model_free(m);
    return 0;
}
"#;

fn cc() -> Option<&'static str> {
    ["cc", "gcc", "clang"].into_iter().find(|c| Command::new(c).arg("--version").output().is_ok())
}

/// `target/<profile>`, found from this test binary's location in `deps/`.
fn profile_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_client_links_and_runs() {
    let Some(cc) = cc() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let lib = profile_dir().join("libdriftgp_ffi.a");
    let dir = tempfile_dir();
    let src = dir.join("client.c");
    std::fs::write(&src, CLIENT).unwrap();

    if !lib.exists() {
        let out = Command::new(cc).args(["-fsyntax-only", "-Wall", "-Werror", "-I"]).arg(&include).arg(&src).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        return;
    }
    let bin = dir.join("client");
    let out = Command::new(cc)
        .args(["-Wall", "-Werror", "-std=c11", "-I"])
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "client exited with {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "16");
}

fn tempfile_dir() -> PathBuf {
    let d = std::env::temp_dir().join(format!("driftgp-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}
