#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use mfp::harness::image_io::save_image;
use mfp::rng::{seeded, SeededRng};
use mfp::spectral::{Image, Plane};
use num_complex::Complex64;
use rand::Rng;
use serde_json::json;

pub fn mfp_exe() -> &'static str {
    env!("CARGO_BIN_EXE_mfp")
}

pub fn random_plane(r: &mut SeededRng, h: usize, w: usize) -> Plane<f64> {
    Plane::from_fn(h, w, |_, _| r.gen::<f64>()).unwrap()
}

pub fn random_image(r: &mut SeededRng, h: usize, w: usize) -> Image<f64> {
    let planes = [random_plane(r, h, w), random_plane(r, h, w), random_plane(r, h, w)];
    Image::new(planes).unwrap()
}

/// Textbook O(n^4) DFT, unnormalized, row-major, DC at index 0.
pub fn naive_dft(plane: &Plane<f64>) -> Vec<Complex64> {
    let (h, w) = plane.dims();
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for u in 0..h {
        for v in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let turns = ((u * y) % h) as f64 / h as f64 + ((v * x) % w) as f64 / w as f64;
                    acc += Complex64::from_polar(plane.get(y, x), -2.0 * std::f64::consts::PI * turns);
                }
            }
            out[u * w + v] = acc;
        }
    }
    out
}

/// Horizontal sinusoid around mid-gray with `cycles` periods across the width.
pub fn sinusoid(h: usize, w: usize, amplitude: f64, cycles: usize) -> Image<f64> {
    Image::from_fn(h, w, |_, x, _| {
        0.5 + amplitude * (2.0 * std::f64::consts::PI * (cycles * x) as f64 / w as f64).sin()
    })
    .unwrap()
}

pub const SURFACES: &[(&str, &str)] = &[
    ("dog", "dog"),
    ("puppy", "dog"),
    ("hot dog", "hot_dog"),
    ("cat", "cat"),
    ("kitten", "cat"),
    ("car", "car"),
    ("traffic light", "traffic_light"),
    ("giraffe", "giraffe"),
    ("surfboard", "surfboard"),
    ("person", "person"),
    ("man", "person"),
];

pub const CLASSES: &[&str] = &["dog", "hot_dog", "cat", "car", "traffic_light", "giraffe", "surfboard", "person"];

/// Words that never start, end or continue a table surface.
pub const FILLER: &[&str] = &["a", "the", "next", "to", "near", "sunny", "with", "and", "photo"];

pub fn synonyms_json() -> String {
    let map: serde_json::Map<_, _> = SURFACES.iter().map(|(s, c)| (s.to_string(), json!(c))).collect();
    serde_json::Value::Object(map).to_string()
}

/// A caption assembled from filler words and table surfaces, with the set of
/// classes it was built from.
pub fn random_caption(r: &mut SeededRng) -> (String, BTreeSet<String>) {
    let mut words = Vec::new();
    let mut classes = BTreeSet::new();
    for _ in 0..r.gen_range(0..12) {
        if r.gen_bool(0.3) {
            let (s, c) = SURFACES[r.gen_range(0..SURFACES.len())];
            let s = if r.gen_bool(0.2) { s.to_uppercase() } else { s.to_owned() };
            words.push(s);
            classes.insert(c.to_owned());
        } else {
            words.push(FILLER[r.gen_range(0..FILLER.len())].to_owned());
        }
    }
    let mut caption = words.join(" ");
    if r.gen_bool(0.5) {
        caption.push('.');
    }
    (caption, classes)
}

pub fn random_truth(r: &mut SeededRng) -> Vec<String> {
    CLASSES.iter().filter(|_| r.gen_bool(0.35)).map(|c| c.to_string()).collect()
}

/// Counts by linear scans over plain vectors.
#[derive(Debug, PartialEq)]
pub struct ChairRecount {
    pub captions: usize,
    pub hallucinated_captions: usize,
    pub mentions: usize,
    pub hallucinated_mentions: usize,
    pub ground_truth: usize,
}

pub fn recount_chair(records: &[(Vec<String>, Vec<String>)]) -> ChairRecount {
    let mut c = ChairRecount {
        captions: records.len(),
        hallucinated_captions: 0,
        mentions: 0,
        hallucinated_mentions: 0,
        ground_truth: 0,
    };
    for (mentioned, truth) in records {
        let mut seen: Vec<&String> = Vec::new();
        let mut bad = 0;
        for m in mentioned {
            if seen.contains(&m) {
                continue;
            }
            seen.push(m);
            if !truth.contains(m) {
                bad += 1;
            }
        }
        let mut gt_seen: Vec<&String> = Vec::new();
        for t in truth {
            if !gt_seen.contains(&t) {
                gt_seen.push(t);
            }
        }
        c.mentions += seen.len();
        c.hallucinated_mentions += bad;
        c.ground_truth += gt_seen.len();
        if bad > 0 {
            c.hallucinated_captions += 1;
        }
    }
    c
}

pub fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

pub fn jsonl(values: &[serde_json::Value]) -> String {
    values.iter().map(|v| format!("{v}\n")).collect()
}

pub fn quote(path: &Path) -> String {
    format!("'{}'", path.display())
}

/// A sweep directory: images, ground truth, synonyms and a config file.
pub struct SweepFixture {
    pub dir: tempfile::TempDir,
    pub config: PathBuf,
    pub ground_truth: PathBuf,
}

pub struct SweepSpec<'a> {
    pub mode: &'a str,
    pub cutoffs: &'a [f64],
    /// Arguments after `mfp mock-oracle`; `{gt}` becomes the ground-truth path.
    pub mock_args: &'a str,
    pub images: Vec<(String, Image<f64>, Vec<&'a str>)>,
    pub workers: usize,
}

pub fn sweep_fixture(spec: SweepSpec<'_>) -> SweepFixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let synonyms = root.join("synonyms.json");
    write(&synonyms, &synonyms_json());
    let ground_truth = root.join("gt.jsonl");
    let gt_lines: Vec<_> = spec
        .images
        .iter()
        .map(|(id, _, gt)| json!({"id": id, "ground_truth": gt}))
        .collect();
    write(&ground_truth, &jsonl(&gt_lines));
    let mut images = Vec::new();
    for (id, image, _) in &spec.images {
        let name = format!("{id}.png");
        save_image(image, root.join(&name)).unwrap();
        images.push(name);
    }
    let oracle = format!(
        "{} mock-oracle {}",
        quote(Path::new(mfp_exe())),
        spec.mock_args.replace("{gt}", &quote(&ground_truth))
    );
    let config = root.join("sweep.json");
    let cfg = json!({
        "mode": spec.mode,
        "cutoffs": spec.cutoffs,
        "images": images,
        "oracle": oracle,
        "synonyms": "synonyms.json",
        "ground_truth": "gt.jsonl",
        "seed": 7,
        "workers": spec.workers,
    });
    write(&config, &serde_json::to_string_pretty(&cfg).unwrap());
    SweepFixture { dir, config, ground_truth }
}

/// Five smooth sinusoids of increasing frequency, each showing a dog.
pub fn sinusoid_images() -> Vec<(String, Image<f64>, Vec<&'static str>)> {
    [2usize, 4, 8, 16, 24]
        .iter()
        .map(|&k| (format!("wave-{k:02}"), sinusoid(64, 64, 0.4, k), vec!["dog"]))
        .collect()
}

pub fn seeded_rng(seed: u64) -> SeededRng {
    seeded(seed)
}
