#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use plkg_core::annotation::LabelAssignment;
use plkg_core::features::ImageRaster;
use plkg_core::Annotation;

pub const SCHEMA: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/plkg-schema.json");

pub struct Run {
    pub code: i32,
    pub stdout: Vec<u8>,
    pub stderr: String,
}

impl Run {
    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.stdout).into_owned()
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.stdout).unwrap_or_else(|e| panic!("{e}: {}", self.text()))
    }
}

pub fn plkg<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Run {
    let out =
        Command::new(env!("CARGO_BIN_EXE_plkg")).args(args).env_remove("PLKG_SCHEMA").output().expect("plkg runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: out.stdout,
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn write_json(dir: &Path, name: &str, ann: &Annotation) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, ann.to_json_pretty()).unwrap();
    path
}

pub fn write_png(dir: &Path, name: &str, img: &ImageRaster) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, img.to_png_bytes()).unwrap();
    path
}

/// One annotation of `image` by `annotator` carrying exactly `nodes`.
pub fn labelled(image: &str, annotator: &str, nodes: &[&str]) -> Annotation {
    let mut ann = Annotation::new(format!("{annotator}-{image}"), format!("images/{image}.png"), annotator, "1.0.0");
    ann.created_at = "2024-01-01T00:00:00Z".parse().unwrap();
    for (i, n) in nodes.iter().enumerate() {
        ann.assignments.push(LabelAssignment::new(format!("a{i}"), *n));
    }
    ann
}

pub fn last_supper_with_scattered() -> Annotation {
    let mut ann = Annotation::last_supper();
    ann.assignments.push(LabelAssignment::new("injected", "comp.viewpoint.scattered"));
    ann
}

/// `head`, then `paths`, then `tail`, as one argument list.
pub fn args(head: &[&str], paths: &[&Path], tail: &[&str]) -> Vec<std::ffi::OsString> {
    head.iter()
        .map(Into::into)
        .chain(paths.iter().map(|p| p.as_os_str().to_owned()))
        .chain(tail.iter().map(Into::into))
        .collect()
}
