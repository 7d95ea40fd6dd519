//! Builds `tests/smoke.c` against the generated header and the shared
//! library, then runs it. Skipped when no C compiler is on the path.

use std::path::{Path, PathBuf};
use std::process::Command;

fn lib_dir() -> PathBuf {
    // test binaries live in <target>/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let libs = lib_dir();
    if !libs.join("libkdgm_ffi.so").exists() && !libs.join("libkdgm_ffi.dylib").exists() {
        eprintln!("shared library not built next to the tests; skipping");
        return;
    }
    let out = tempfile::tempdir().unwrap();
    let exe = out.path().join("smoke");
    let compiled = match Command::new("cc")
        .arg(manifest.join("tests/smoke.c"))
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg("-L")
        .arg(&libs)
        .arg("-lkdgm_ffi")
        .arg("-o")
        .arg(&exe)
        .output()
    {
        Ok(o) => o,
        Err(_) => {
            eprintln!("no C compiler; skipping");
            return;
        }
    };
    assert!(
        compiled.status.success(),
        "{}",
        String::from_utf8_lossy(&compiled.stderr)
    );

    let run = Command::new(&exe)
        .env("LD_LIBRARY_PATH", &libs)
        .env("DYLD_LIBRARY_PATH", &libs)
        .output()
        .unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let price: f64 = String::from_utf8_lossy(&run.stdout).trim().parse().unwrap();
    assert!((price - 0.0994764497).abs() < 1e-9);
}
