//! Compiles a C program against the generated header and, when the static
//! library is present, links and runs it. Skipped without a C compiler.

use std::path::{Path, PathBuf};
use std::process::Command;

fn compiler() -> Option<String> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    Command::new(&cc).arg("--version").output().ok().filter(|o| o.status.success()).map(|_| cc)
}

fn static_lib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let profile_dir = exe.parent()?.parent()?;
    let lib = profile_dir.join("libpp_reparam_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn header_compiles_and_runs() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler; skipped");
        return;
    };
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let include = root.join("include");
    let src = root.join("tests/smoke.c");
    let st = Command::new(&cc).args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"]).arg(&include).arg(&src).status().unwrap();
    assert!(st.success(), "header does not compile");
    let Some(lib) = static_lib() else {
        eprintln!("static library not built; link step skipped");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let st = Command::new(&cc)
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(st.success(), "link failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}
