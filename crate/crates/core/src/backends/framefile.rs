//! Vision port over precomputed per-frame vectors.
//!
//! A directory holds `manifest.json`:
//!
//! ```json
//! { "videos": { "clip01": { "fps": 1.0, "vectors": "clip01.json",
//!                           "captions": [{"interval": {"start_s": 0, "end_s": 12}, "text": "..."}] } } }
//! ```
//!
//! where each vectors file is a JSON array of per-frame embeddings indexed by
//! frame number.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PortError, VisionPort};
use crate::error::{Error, Result};
use crate::model::TemporalInterval;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Caption {
    pub interval: TemporalInterval,
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub fps: f64,
    pub vectors: PathBuf,
    #[serde(default)]
    pub captions: Vec<Caption>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub videos: BTreeMap<String, ManifestEntry>,
}

struct LoadedVideo {
    fps: f64,
    frames: Vec<Vec<f64>>,
    captions: Vec<Caption>,
}

pub struct FrameFileVision {
    videos: BTreeMap<String, LoadedVideo>,
}

impl FrameFileVision {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest_path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&manifest_path, e))?;
        let mut videos = BTreeMap::new();
        for (id, entry) in manifest.videos {
            let path = dir.join(&entry.vectors);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let frames: Vec<Vec<f64>> = serde_json::from_str(&text).map_err(|e| Error::format(&path, e))?;
            if frames.is_empty() {
                return Err(Error::Invalid(format!("{}: no frames", path.display())));
            }
            videos.insert(
                id,
                LoadedVideo {
                    fps: entry.fps,
                    frames,
                    captions: entry.captions,
                },
            );
        }
        Ok(FrameFileVision { videos })
    }

    fn video(&self, id: &str) -> Result<&LoadedVideo, PortError> {
        self.videos.get(id).ok_or_else(|| PortError::UnknownVideo(id.to_string()))
    }
}

impl VisionPort for FrameFileVision {
    fn embed(&self, video_id: &str, time_s: f64) -> Result<Vec<f64>, PortError> {
        let v = self.video(video_id)?;
        let idx = ((time_s * v.fps).round().max(0.0) as usize).min(v.frames.len() - 1);
        Ok(v.frames[idx].clone())
    }

    fn describe(&self, video_id: &str, interval: &TemporalInterval) -> Result<String, PortError> {
        let v = self.video(video_id)?;
        let parts: Vec<&str> = v
            .captions
            .iter()
            .filter(|c| c.interval.intersection_len(interval) > 0.0)
            .map(|c| c.text.as_str())
            .collect();
        Ok(if parts.is_empty() {
            "no caption available for this clip".to_string()
        } else {
            parts.join("; ")
        })
    }
}

/// External frame-extraction command, e.g.
/// `ffmpeg -ss {time} -i {video} -frames:v 1 {out}`.
///
/// Only renders the argument vector; running it is left to the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeCommand {
    pub template: String,
}

impl DecodeCommand {
    pub fn render(&self, video: &str, time_s: f64, out: &str) -> Vec<String> {
        self.template
            .split_whitespace()
            .map(|tok| {
                tok.replace("{video}", video)
                    .replace("{time}", &format!("{time_s:.3}"))
                    .replace("{out}", out)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_manifest_and_serves_frames() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("manifest.json"),
            r#"{"videos":{"c1":{"fps":1.0,"vectors":"c1.json","captions":[{"interval":{"start_s":0,"end_s":2},"text":"a cat"}]}}}"#,
        )
        .unwrap();
        std::fs::write(dir.path().join("c1.json"), "[[1,0],[0,1],[1,1]]").unwrap();
        let vision = FrameFileVision::load(dir.path()).unwrap();
        assert_eq!(vision.embed("c1", 1.2).unwrap(), vec![0.0, 1.0]);
        assert_eq!(vision.embed("c1", 99.0).unwrap(), vec![1.0, 1.0]);
        assert_eq!(
            vision.describe("c1", &TemporalInterval::new(1.0, 3.0)).unwrap(),
            "a cat"
        );
        assert!(vision.embed("zz", 0.0).is_err());
    }

    #[test]
    fn decode_template_renders() {
        let cmd = DecodeCommand {
            template: "ffmpeg -ss {time} -i {video} -frames:v 1 {out}".into(),
        };
        assert_eq!(
            cmd.render("in.mp4", 1.5, "f.png"),
            vec!["ffmpeg", "-ss", "1.500", "-i", "in.mp4", "-frames:v", "1", "f.png"]
        );
    }
}
