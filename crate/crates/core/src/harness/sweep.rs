//! Cutoff-frequency sweep: keep only one frequency branch of every image,
//! caption it with an external oracle and score the captions with CHAIR.
//!
//! A cutoff of exactly `0` is the `D0 -> 0+` limit of the Gaussian filter:
//! the low branch keeps only the DC bin and the high branch keeps everything
//! else.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::formats::{read_ground_truth, read_synonyms, read_text};
use crate::harness::image_io::{load_image, save_image};
use crate::harness::oracle::{caption_batch, CaptionRequest, OracleConfig, DEFAULT_PROMPT};
use crate::metrics::{chair, CaptionRecord};
use crate::spectral::{
    dc_split_masks, decompose, decompose_attenuated, decompose_attenuated_with_masks, decompose_with_masks,
    AttenuationMode, AttenuationSpec, CutoffFrequency, Image,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    LowOnly,
    HighOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepAttenuation {
    pub gamma: f64,
    #[serde(default)]
    pub mode: AttenuationMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub mode: SweepMode,
    pub cutoffs: Vec<f64>,
    pub images: Vec<PathBuf>,
    /// Shell command for the captioner.
    pub oracle: String,
    pub synonyms: PathBuf,
    pub ground_truth: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Damp the kept branch as at inference time; image `i` uses `seed + i`.
    #[serde(default)]
    pub attenuation: Option<SweepAttenuation>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub timeout_secs: Option<f64>,
    #[serde(default)]
    pub prompt: Option<String>,
}

fn default_workers() -> usize {
    1
}

impl SweepConfig {
    /// Reads a JSON config; relative paths are taken from the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::data(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.images.iter_mut().for_each(resolve);
        resolve(&mut cfg.synonyms);
        resolve(&mut cfg.ground_truth);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cutoffs.is_empty() {
            return Err(Error::InvalidArgument("sweep needs at least one cutoff".into()));
        }
        if let Some(c) = self.cutoffs.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::InvalidArgument(format!("cutoff {c} is not a finite non-negative number")));
        }
        let increasing = self.cutoffs.windows(2).all(|w| w[0] < w[1]);
        let decreasing = self.cutoffs.windows(2).all(|w| w[0] > w[1]);
        if !(increasing || decreasing) {
            return Err(Error::InvalidArgument("cutoffs must be strictly monotone".into()));
        }
        if self.images.is_empty() {
            return Err(Error::InvalidArgument("sweep needs at least one image".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidArgument("workers must be at least 1".into()));
        }
        if let Some(a) = &self.attenuation {
            AttenuationSpec::random(a.gamma, 0).validate()?;
        }
        if let Some(t) = self.timeout_secs {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::InvalidArgument(format!("timeout_secs must be positive, got {t}")));
            }
        }
        Ok(())
    }

    fn oracle_config(&self) -> OracleConfig {
        let mut oc = OracleConfig::new(self.oracle.clone());
        if let Some(t) = self.timeout_secs {
            oc.timeout = Duration::from_secs_f64(t);
        }
        oc.prompt = self.prompt.clone().unwrap_or_else(|| DEFAULT_PROMPT.to_owned());
        oc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub cutoff: f64,
    pub chair_i: f64,
    pub chair_s: f64,
    pub images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// `cutoff,chair_i,chair_s,n`, rates with six decimals.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("cutoff,chair_i,chair_s,n\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.6},{:.6},{}", r.cutoff, r.chair_i, r.chair_s, r.images);
        }
        s
    }
}

/// The image id sent to the oracle and looked up in the ground truth.
pub fn image_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// The branch of `image` that `mode` keeps at `cutoff`.
pub fn filtered_branch(
    image: &Image<f64>,
    mode: SweepMode,
    cutoff: f64,
    attenuation: Option<AttenuationSpec>,
) -> Result<Image<f64>> {
    let (low, high) = if cutoff == 0.0 {
        let (h, w) = image.dims();
        let (lm, hm) = dc_split_masks::<f64>(h, w)?;
        match attenuation {
            Some(spec) => decompose_attenuated_with_masks(image, &lm, &hm, &spec)?,
            None => decompose_with_masks(image, &lm, &hm)?,
        }
    } else {
        let d0 = CutoffFrequency::new(cutoff)?;
        match attenuation {
            Some(spec) => decompose_attenuated(image, d0, &spec)?,
            None => decompose(image, d0)?,
        }
    };
    Ok(match mode {
        SweepMode::LowOnly => low,
        SweepMode::HighOnly => high,
    })
}

/// Runs the whole sweep; fails without partial output on any error.
pub fn sweep(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let table = read_synonyms(&config.synonyms)?;
    let gt = read_ground_truth(&config.ground_truth)?;

    let mut seen = BTreeMap::new();
    let mut inputs = Vec::with_capacity(config.images.len());
    for (i, path) in config.images.iter().enumerate() {
        let id = image_id(path);
        if let Some(prev) = seen.insert(id.clone(), path.clone()) {
            return Err(Error::InvalidArgument(format!(
                "images {} and {} share id {id:?}",
                prev.display(),
                path.display()
            )));
        }
        let labels = gt
            .get(&id)
            .ok_or_else(|| Error::data(&config.ground_truth, format!("no ground truth for image id {id:?}")))?
            .clone();
        let image = load_image::<f64>(path)?;
        inputs.push((i, id, image, labels));
    }

    let scratch = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let oracle = config.oracle_config();
    let mut rows = Vec::with_capacity(config.cutoffs.len());

    for (k, &cutoff) in config.cutoffs.iter().enumerate() {
        let dir = scratch.path().join(format!("cutoff-{k}"));
        std::fs::create_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let requests = export_branches(config, &inputs, cutoff, &dir)?;
        let captions = caption_batch(&oracle, &requests)?;
        let records = inputs
            .iter()
            .map(|(_, id, _, labels)| CaptionRecord::from_caption(id.clone(), &captions[id], labels, &table))
            .collect::<Result<Vec<_>>>()?;
        let report = chair(&records)?;
        rows.push(SweepRow {
            cutoff,
            chair_i: report.chair_i,
            chair_s: report.chair_s,
            images: records.len(),
        });
    }
    Ok(SweepResult { rows })
}

type SweepInput = (usize, String, Image<f64>, Vec<String>);

fn export_branches(config: &SweepConfig, inputs: &[SweepInput], cutoff: f64, dir: &Path) -> Result<Vec<CaptionRequest>> {
    let export = |(i, id, image, _): &SweepInput| -> Result<CaptionRequest> {
        let attenuation = config.attenuation.map(|a| AttenuationSpec {
            gamma: a.gamma,
            mode: a.mode,
            seed: config.seed.wrapping_add(*i as u64),
            ..AttenuationSpec::default()
        });
        let branch = filtered_branch(image, config.mode, cutoff, attenuation)?;
        let path = dir.join(format!("{id}.png"));
        save_image(&branch, &path)?;
        Ok(CaptionRequest { id: id.clone(), image: path })
    };

    let chunk = inputs.len().div_ceil(config.workers).max(1);
    thread::scope(|s| {
        let handles: Vec<_> = inputs
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(export).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(inputs.len());
        for h in handles {
            out.extend(h.join().expect("export worker panicked")?);
        }
        Ok(out)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SweepConfig {
        SweepConfig {
            mode: SweepMode::HighOnly,
            cutoffs: vec![0.0, 30.0],
            images: vec!["a.png".into()],
            oracle: "true".into(),
            synonyms: "s.json".into(),
            ground_truth: "g.jsonl".into(),
            seed: 0,
            attenuation: None,
            workers: 1,
            timeout_secs: None,
            prompt: None,
        }
    }

    #[test]
    fn validation() {
        assert!(cfg().validate().is_ok());
        let bad = |f: fn(&mut SweepConfig)| {
            let mut c = cfg();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.cutoffs.clear()));
        assert!(bad(|c| c.cutoffs = vec![30.0, 30.0]));
        assert!(bad(|c| c.cutoffs = vec![10.0, 30.0, 20.0]));
        assert!(bad(|c| c.cutoffs = vec![-1.0]));
        assert!(bad(|c| c.images.clear()));
        assert!(bad(|c| c.workers = 0));
        assert!(bad(|c| {
            c.attenuation = Some(SweepAttenuation {
                gamma: 3.0,
                mode: AttenuationMode::Constant,
            })
        }));
        let mut c = cfg();
        c.cutoffs = vec![120.0, 60.0, 30.0];
        assert!(c.validate().is_ok());
    }

    #[test]
    fn zero_cutoff_high_branch_removes_only_the_mean() {
        let img = Image::from_fn(4, 6, |y, x, c| ((y + 2 * x + c) % 5) as f64 / 5.0).unwrap();
        let high = filtered_branch(&img, SweepMode::HighOnly, 0.0, None).unwrap();
        let low = filtered_branch(&img, SweepMode::LowOnly, 0.0, None).unwrap();
        for ch in 0..3 {
            let mean = img.plane(ch).as_slice().iter().sum::<f64>() / 24.0;
            assert!(low.plane(ch).as_slice().iter().all(|v| (v - mean).abs() < 1e-12));
        }
        assert!(low.add(&high).unwrap().max_abs_diff(&img).unwrap() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let r = SweepResult {
            rows: vec![SweepRow {
                cutoff: 30.0,
                chair_i: 1.0 / 3.0,
                chair_s: 0.5,
                images: 2,
            }],
        };
        assert_eq!(r.to_csv(), "cutoff,chair_i,chair_s,n\n30,0.333333,0.500000,2\n");
    }

    #[test]
    fn config_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sweep.json");
        std::fs::write(
            &p,
            r#"{"mode":"low_only","cutoffs":[5],"images":["img/a.png"],"oracle":"x","synonyms":"s.json","ground_truth":"/abs/g.jsonl"}"#,
        )
        .unwrap();
        let c = SweepConfig::load(&p).unwrap();
        assert_eq!(c.images[0], dir.path().join("img/a.png"));
        assert_eq!(c.ground_truth, PathBuf::from("/abs/g.jsonl"));
        assert_eq!(c.workers, 1);
        assert_eq!(c.mode, SweepMode::LowOnly);
    }
}
