//! CSV manifest of user-supplied clips: `id,speaker,wav_path,frames_dir,label`.
//!
//! Relative paths are resolved against the manifest's directory. Frames are
//! `00000.ppm` (or `.png`), `00001.ppm`, … inside `frames_dir`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::avdata::media::{read_frame, read_wav};
use crate::avdata::{window_audio, AlignedSample, SpeakerId, VideoClip, FPS};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize, Serialize)]
struct Row {
    id: String,
    speaker: String,
    wav_path: String,
    frames_dir: String,
    label: Option<usize>,
}

/// A manifest entry whose media has been located but not decoded.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleDescriptor {
    pub id: String,
    pub speaker: String,
    pub wav_path: PathBuf,
    pub frames_dir: PathBuf,
    pub label: Option<usize>,
}

impl SpeakerId for SampleDescriptor {
    fn speaker(&self) -> &str {
        &self.speaker
    }
}

pub fn load_manifest(path: &Path) -> Result<Vec<SampleDescriptor>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_reader(file);
    let row_err = |row: usize, msg: String| Error::Manifest {
        path: path.to_path_buf(),
        row,
        msg,
    };
    {
        let headers = reader.headers().map_err(|e| row_err(0, e.to_string()))?;
        let want = ["id", "speaker", "wav_path", "frames_dir", "label"];
        if headers.iter().ne(want.iter().copied()) {
            return Err(row_err(0, format!("header must be `{}`", want.join(","))));
        }
    }
    let mut out = Vec::new();
    for (i, rec) in reader.deserialize::<Row>().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| row_err(row, e.to_string()))?;
        if rec.id.is_empty() || rec.speaker.is_empty() {
            return Err(row_err(row, "id and speaker must be non-empty".into()));
        }
        let wav_path = base.join(&rec.wav_path);
        if !wav_path.is_file() {
            return Err(row_err(row, format!("missing wav file {}", wav_path.display())));
        }
        let frames_dir = base.join(&rec.frames_dir);
        if !frames_dir.is_dir() {
            return Err(row_err(row, format!("missing frames directory {}", frames_dir.display())));
        }
        out.push(SampleDescriptor {
            id: rec.id,
            speaker: rec.speaker,
            wav_path,
            frames_dir,
            label: rec.label,
        });
    }
    Ok(out)
}

/// Writes descriptors with paths relative to the manifest directory where possible.
pub fn write_manifest(path: &Path, samples: &[SampleDescriptor]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).to_string_lossy().into_owned();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for s in samples {
        w.serialize(Row {
            id: s.id.clone(),
            speaker: s.speaker.clone(),
            wav_path: rel(&s.wav_path),
            frames_dir: rel(&s.frames_dir),
            label: s.label,
        })
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn frame_path(dir: &Path, i: usize) -> Option<PathBuf> {
    ["ppm", "png"]
        .iter()
        .map(|ext| dir.join(format!("{i:05}.{ext}")))
        .find(|p| p.is_file())
}

impl SampleDescriptor {
    /// Decodes audio and frames. Audio and video may disagree by one frame, in
    /// which case the longer stream is truncated.
    pub fn load(&self) -> Result<AlignedSample> {
        let waveform = read_wav(&self.wav_path)?;
        let t_audio = window_audio(&waveform)?.shape()[0];
        let mut frames = Vec::new();
        let mut count = 0;
        while let Some(p) = frame_path(&self.frames_dir, count) {
            frames.extend(read_frame(&p)?);
            count += 1;
        }
        if count == 0 {
            return Err(Error::Media {
                path: self.frames_dir.clone(),
                msg: "no frames named 00000.ppm/.png".into(),
            });
        }
        if count.abs_diff(t_audio) > 1 {
            return Err(Error::Media {
                path: self.frames_dir.clone(),
                msg: format!("{count} video frames vs {t_audio} audio frames (more than one frame of drift)"),
            });
        }
        let t = count.min(t_audio);
        let mut video = VideoClip::new(frames, FPS)?;
        video.truncate(t);
        let mut waveform = waveform;
        if t_audio > t {
            // drop trailing samples so the last window is not emitted
            waveform.samples.truncate(t * crate::avdata::HOP + crate::avdata::HOP / 2 - 1);
        }
        AlignedSample::new(self.id.clone(), self.speaker.clone(), waveform, video, self.label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::avdata::media::{write_frame, write_wav};
    use crate::avdata::{Waveform, FRAME_LEN, SAMPLE_RATE};

    fn write_clip(dir: &Path, name: &str, n_samples: usize, n_frames: usize) {
        let w = Waveform::new(vec![0.1; n_samples], SAMPLE_RATE).unwrap();
        write_wav(&dir.join(format!("{name}.wav")), &w).unwrap();
        let fd = dir.join(name);
        std::fs::create_dir_all(&fd).unwrap();
        for i in 0..n_frames {
            write_frame(&fd.join(format!("{i:05}.ppm")), &vec![0.0; FRAME_LEN]).unwrap();
        }
    }

    const HEADER: &str = "id,speaker,wav_path,frames_dir,label\n";

    #[test]
    fn empty_manifest_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, HEADER).unwrap();
        assert!(load_manifest(&p).unwrap().is_empty());
    }

    #[test]
    fn three_rows_preserve_order() {
        let dir = tempfile::tempdir().unwrap();
        for n in ["a", "b", "c"] {
            write_clip(dir.path(), n, 3200, 5);
        }
        let p = dir.path().join("m.csv");
        std::fs::write(&p, format!("{HEADER}c,s1,c.wav,c,2\na,s1,a.wav,a,\nb,s2,b.wav,b,0\n")).unwrap();
        let rows = load_manifest(&p).unwrap();
        let ids: Vec<_> = rows.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
        assert_eq!(rows[1].label, None);
        assert_eq!(rows[0].label, Some(2));
        let s = rows[0].load().unwrap();
        assert_eq!(s.frames(), 5);
        assert_eq!(s.windows.shape(), &[5, 3200]);
    }

    #[test]
    fn missing_wav_names_path_and_row() {
        let dir = tempfile::tempdir().unwrap();
        write_clip(dir.path(), "a", 3200, 5);
        let p = dir.path().join("m.csv");
        std::fs::write(&p, format!("{HEADER}a,s1,a.wav,a,\nb,s1,nope.wav,a,\n")).unwrap();
        let msg = load_manifest(&p).unwrap_err().to_string();
        assert!(msg.contains("nope.wav") && msg.contains("row 2"), "{msg}");
    }

    #[test]
    fn malformed_row_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_clip(dir.path(), "a", 3200, 5);
        let p = dir.path().join("m.csv");
        std::fs::write(&p, format!("{HEADER}a,s1,a.wav,a,notanumber\n")).unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::Manifest { row: 1, .. })));
        std::fs::write(&p, "id,spk\n").unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::Manifest { row: 0, .. })));
    }

    #[test]
    fn one_frame_drift_is_truncated_two_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_clip(dir.path(), "extra_video", 3200, 6);
        write_clip(dir.path(), "extra_audio", 3200, 4);
        write_clip(dir.path(), "drift", 3200, 7);
        let p = dir.path().join("m.csv");
        std::fs::write(
            &p,
            format!("{HEADER}v,s,extra_video.wav,extra_video,\na,s,extra_audio.wav,extra_audio,\nd,s,drift.wav,drift,\n"),
        )
        .unwrap();
        let rows = load_manifest(&p).unwrap();
        assert_eq!(rows[0].load().unwrap().frames(), 5);
        let a = rows[1].load().unwrap();
        assert_eq!(a.frames(), 4);
        assert_eq!(a.windows.shape()[0], 4);
        assert!(rows[2].load().is_err());
    }
}
