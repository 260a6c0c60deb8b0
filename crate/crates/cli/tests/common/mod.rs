#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Writes `body` plus a `[paths]` section rooted at `root` and returns the
/// config path.
pub fn write_config(root: &Path, name: &str, body: &str) -> PathBuf {
    let path = root.join(name);
    let text = format!(
        "{body}\n[paths]\ndata = \"{d}\"\ncheckpoints = \"{c}\"\nreports = \"{r}\"\n",
        d = root.join("data").display(),
        c = root.join("ck").display(),
        r = root.join("reports").display(),
    );
    fs::write(&path, text).unwrap();
    path
}

/// Runs the binary with one thread so reductions are reproducible.
pub fn nowcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nowcast"))
        .args(args)
        .env("RAYON_NUM_THREADS", "1")
        .output()
        .expect("spawn nowcast")
}

pub fn run_ok(args: &[&str]) -> String {
    let out = nowcast(args);
    assert!(
        out.status.success(),
        "nowcast {args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn cmd(command: &str, cfg: &Path, out: &Path) -> Vec<String> {
    let mut args: Vec<String> = command.split_whitespace().map(String::from).collect();
    args.extend(["--config".into(), cfg.display().to_string(), "--out".into(), out.display().to_string()]);
    args
}

pub fn run_cmd(command: &str, cfg: &Path, out: &Path) -> String {
    let args = cmd(command, cfg, out);
    run_ok(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

pub fn run_cmd_status(command: &str, cfg: &Path, out: &Path) -> (Option<i32>, String) {
    let args = cmd(command, cfg, out);
    let o = nowcast(&args.iter().map(String::as_str).collect::<Vec<_>>());
    (o.status.code(), String::from_utf8_lossy(&o.stderr).into_owned())
}

pub fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

/// Every regular file under `dir` with its bytes, sorted by name.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

/// Parses a `lead,...,n` table into rows of optional cells, dropping the
/// lead and count columns.
pub fn table(csv: &str) -> Vec<Vec<Option<f64>>> {
    csv.lines()
        .skip(1)
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            cells[1..cells.len() - 1]
                .iter()
                .map(|c| if c.is_empty() { None } else { Some(c.parse().unwrap()) })
                .collect()
        })
        .collect()
}
