#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{GrayImage, Luma, Rgb, RgbImage};

pub fn matting(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_matting")).args(args).output().expect("spawn matting")
}

/// Runs and panics with stderr on a nonzero exit.
pub fn ok(args: &[&str]) -> Output {
    let out = matting(args);
    assert!(out.status.success(), "matting {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Runs, expects failure and returns stderr.
pub fn fails(args: &[&str]) -> String {
    let out = matting(args);
    assert!(!out.status.success(), "matting {args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn mkdir(root: &Path, name: &str) -> PathBuf {
    let d = root.join(name);
    fs::create_dir_all(&d).unwrap();
    d
}

pub fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

pub fn gray(p: &Path) -> GrayImage {
    image::open(p).unwrap().into_luma8()
}

/// A `w×h` foreground set: noisy colours, a square matte with a soft rim
/// (binary when `soft` is false), and backgrounds of assorted sizes.
pub fn write_set(root: &Path, n_fg: usize, n_bg: usize, w: u32, h: u32, soft: bool) -> (PathBuf, PathBuf, PathBuf) {
    let (fg, al, bg) = (mkdir(root, "fg"), mkdir(root, "alpha"), mkdir(root, "bg"));
    for i in 0..n_fg as u32 {
        let img = RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 + i * 31) as u8, (y * 5 + i) as u8, (x ^ y) as u8]));
        img.save(fg.join(format!("fg{i}.png"))).unwrap();
        let (x0, x1, y0, y1) = (w / 4, 3 * w / 4, h / 4, 3 * h / 4);
        let a = GrayImage::from_fn(w, h, |x, y| {
            let inside = (x0..x1).contains(&x) && (y0..y1).contains(&y);
            let rim = x == x0 || x + 1 == x1 || y == y0 || y + 1 == y1;
            Luma([match (inside, soft && rim) {
                (true, true) => 100 + (i as u8) * 10,
                (true, false) => 255,
                _ => 0,
            }])
        });
        a.save(al.join(format!("fg{i}.png"))).unwrap();
    }
    for j in 0..n_bg as u32 {
        let (bw, bh) = (w + 3 * j, h + 2 * (j % 3));
        RgbImage::from_fn(bw, bh, |x, y| Rgb([(x + j * 40) as u8, (y * 3) as u8, (200 - j * 9) as u8]))
            .save(bg.join(format!("bg{j:02}.png")))
            .unwrap();
    }
    (fg, al, bg)
}

pub fn files(dir: &Path, ext: &str) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}
