//! Corpus manifests, frame stores and speaker-disjoint splits.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::audio::{frames_from_audio, AudioBuffer, SpeechFrame};
use crate::error::{DvError, Result};
use crate::wav;

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub speaker_id: String,
    pub duration_s: f64,
}

impl ManifestEntry {
    /// Utterance id: the relative path without its extension.
    pub fn utterance_id(&self) -> String {
        self.path.with_extension("").to_string_lossy().replace('\\', "/")
    }
}

/// UTF-8 listing, one `path,speaker_id,duration` line per audio file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(DvError::Format(format!(
                    "manifest line {}: expected path,speaker_id,duration",
                    i + 1
                )));
            }
            let duration_s = parts[2]
                .trim()
                .parse()
                .map_err(|e| DvError::Format(format!("manifest line {}: {e}", i + 1)))?;
            entries.push(ManifestEntry {
                path: parts[0].trim().into(),
                speaker_id: parts[1].trim().to_owned(),
                duration_s,
            });
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{},{},{:.3}\n", e.path.display(), e.speaker_id, e.duration_s))
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.entries.iter().map(|e| e.speaker_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }
}

/// One utterance reduced to its speech frames.
#[derive(Clone, Debug)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    pub frames: Vec<SpeechFrame>,
}

pub fn utterance_from_audio(id: &str, speaker_id: &str, audio: &AudioBuffer) -> Result<Utterance> {
    Ok(Utterance {
        id: id.to_owned(),
        speaker_id: speaker_id.to_owned(),
        frames: frames_from_audio(audio, speaker_id, id)?,
    })
}

/// Reads every file of a manifest and frames it.
pub fn load_utterances(manifest_path: &Path) -> Result<Vec<Utterance>> {
    let manifest = Manifest::read(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    ndcore::par::try_map_indexed(manifest.entries.len(), |i| {
        let e = &manifest.entries[i];
        let audio = wav::read_wav(root.join(&e.path))?;
        utterance_from_audio(&e.utterance_id(), &e.speaker_id, &audio)
    })
}

/// Speaker-disjoint train / held-out partition. The last `held_out` speakers in
/// sorted id order are held out.
pub fn split_by_speaker(utts: &[Utterance], held_out: usize) -> Result<(Vec<Utterance>, Vec<Utterance>)> {
    let mut speakers: Vec<&str> = utts.iter().map(|u| u.speaker_id.as_str()).collect();
    speakers.sort();
    speakers.dedup();
    if held_out >= speakers.len() {
        return Err(DvError::Insufficient(format!(
            "cannot hold out {held_out} of {} speakers",
            speakers.len()
        )));
    }
    let cut = speakers.len() - held_out;
    let eval: Vec<&str> = speakers[cut..].to_vec();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for u in utts {
        if eval.contains(&u.speaker_id.as_str()) {
            test.push(u.clone());
        } else {
            train.push(u.clone());
        }
    }
    Ok((train, test))
}

/// Flat frame list with integer subject labels, the unit of training batches.
#[derive(Clone, Debug, Default)]
pub struct FrameSet {
    pub frames: Vec<SpeechFrame>,
    pub labels: Vec<usize>,
    pub subjects: Vec<String>,
}

impl FrameSet {
    pub fn from_utterances(utts: &[Utterance]) -> Self {
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        for u in utts {
            let n = index.len();
            index.entry(u.speaker_id.as_str()).or_insert(n);
        }
        // relabel in sorted order so labels do not depend on utterance order
        let subjects: Vec<String> = index.keys().map(|s| s.to_string()).collect();
        let mut set = FrameSet {
            subjects: subjects.clone(),
            ..Default::default()
        };
        for u in utts {
            let label = subjects.iter().position(|s| s == &u.speaker_id).unwrap();
            for f in &u.frames {
                set.frames.push(f.clone());
                set.labels.push(label);
            }
        }
        set
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn num_subjects(&self) -> usize {
        self.subjects.len()
    }
}
