//! Writes the four bundled n=1944 matrices (and their untainted sidecars)
//! as alist files, the format every CLI subcommand consumes.
//!
//! Usage: cargo run -p reconcile-core --example export_alists -- <dir>

use std::fs;
use std::path::PathBuf;

use reconcile_core::codes::wifi::{standard_code, Rate};
use reconcile_core::codes::{write_alist, write_untainted_sidecar};

fn main() {
    let dir: PathBuf = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "data/alists".into())
        .into();
    fs::create_dir_all(&dir).expect("create output dir");
    for rate in Rate::ALL {
        let code = standard_code(rate);
        let alist_path = dir.join(format!("{}.alist", code.id));
        fs::write(&alist_path, write_alist(&code)).expect("write alist");
        let sidecar_path = dir.join(format!("{}.untainted", code.id));
        fs::write(&sidecar_path, write_untainted_sidecar(&code)).expect("write sidecar");
        println!(
            "{}: n={} m={} |U|={}",
            alist_path.display(),
            code.n,
            code.m,
            code.untainted.len()
        );
    }
}
