//! On-disk raw datasets and sRGB frame directories.
//!
//! A raw dataset is a directory holding `dataset.json` and 16-bit PGM
//! frames at `<sequence id>/<index>.pgm`. Writers stage everything in a
//! sibling directory and rename it into place, so a failed run never
//! leaves a partial dataset behind.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::frame::{normalize_unclamped, to_codes, CfaPattern, Levels, RawFrame, VideoSequence};
use crate::pnm;
use crate::unprocess::SrgbFrame;

pub const DESCRIPTOR: &str = "dataset.json";
pub const MANIFEST: &str = "manifest.json";

/// Contents of `dataset.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub cfa: CfaPattern,
    pub black_level: u32,
    pub white_level: u32,
    pub width: usize,
    pub height: usize,
    pub frame_rate: f64,
    /// Frame paths relative to the dataset root, grouped by sequence.
    pub frames: Vec<String>,
}

fn frame_path(seq: &str, index: usize) -> String {
    format!("{seq}/{index:05}.pgm")
}

fn check_sequence_id(id: &str) -> Result<()> {
    let ok =
        !id.is_empty() && id != "." && id != ".." && !id.contains(['/', '\\']) && !id.chars().any(char::is_control);
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "sequence id {id:?} is not a valid directory name"
        )))
    }
}

/// Split a relative frame path into (sequence id, file name). Frames at
/// the dataset root belong to a sequence named after the root itself.
fn split_frame_path<'a>(rel: &'a str, root_name: &'a str) -> Result<(&'a str, &'a str)> {
    let parts: Vec<&str> = rel.split('/').collect();
    match parts.as_slice() {
        [file] => Ok((root_name, file)),
        [seq, file] if !seq.is_empty() && *seq != ".." && *seq != "." => Ok((seq, file)),
        _ => Err(Error::InvalidParameter(format!(
            "frame path {rel:?} must be <sequence>/<file>"
        ))),
    }
}

/// Group of raw sequences sharing one descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub sequences: Vec<VideoSequence<RawFrame>>,
}

impl RawDataset {
    pub fn new(sequences: Vec<VideoSequence<RawFrame>>) -> Result<Self> {
        let first = sequences
            .iter()
            .flat_map(|s| s.frames.first())
            .next()
            .ok_or_else(|| Error::Degenerate("dataset without frames".into()))?;
        let mut seen = std::collections::HashSet::new();
        for s in &sequences {
            check_sequence_id(&s.id)?;
            if !seen.insert(s.id.as_str()) {
                return Err(Error::InvalidParameter(format!("duplicate sequence id {:?}", s.id)));
            }
            if s.frame_rate != sequences[0].frame_rate {
                return Err(Error::Mismatch("sequences with different frame rates".into()));
            }
            for f in &s.frames {
                first.same_layout(f)?;
                if f.levels != first.levels {
                    return Err(Error::Mismatch("frames with different levels".into()));
                }
            }
        }
        Ok(RawDataset { sequences })
    }

    fn first_frame(&self) -> &RawFrame {
        self.sequences
            .iter()
            .flat_map(|s| s.frames.first())
            .next()
            .expect("validated non-empty")
    }

    pub fn descriptor(&self) -> DatasetDescriptor {
        let f = self.first_frame();
        DatasetDescriptor {
            cfa: f.cfa,
            black_level: f.levels.black,
            white_level: f.levels.white,
            width: f.width(),
            height: f.height(),
            frame_rate: self.sequences[0].frame_rate,
            frames: self
                .sequences
                .iter()
                .flat_map(|s| (0..s.len()).map(move |i| frame_path(&s.id, i)))
                .collect(),
        }
    }

    pub fn frame_count(&self) -> usize {
        self.sequences.iter().map(VideoSequence::len).sum()
    }

    pub fn sequence(&self, id: &str) -> Option<&VideoSequence<RawFrame>> {
        self.sequences.iter().find(|s| s.id == id)
    }

    /// Round every frame through the 16-bit codes it is stored as.
    pub fn quantized(&self) -> RawDataset {
        let sequences = self
            .sequences
            .iter()
            .map(|s| VideoSequence {
                id: s.id.clone(),
                frame_rate: s.frame_rate,
                frames: s.frames.iter().map(quantize_frame).collect(),
            })
            .collect();
        RawDataset { sequences }
    }
}

/// Normalized values exactly as they read back after a write.
pub fn quantize_frame(f: &RawFrame) -> RawFrame {
    RawFrame {
        data: normalize_unclamped(&to_codes(&f.data, f.levels), f.levels),
        cfa: f.cfa,
        levels: f.levels,
    }
}

/// Load a dataset. Values are normalized without clamping.
pub fn read_raw_dataset(dir: &Path) -> Result<RawDataset> {
    let desc_path = dir.join(DESCRIPTOR);
    let text = fs::read_to_string(&desc_path).map_err(|e| Error::io(&desc_path, e))?;
    let desc: DatasetDescriptor = serde_json::from_str(&text).map_err(|e| Error::format(&desc_path, e.to_string()))?;
    let levels = Levels::new(desc.black_level, desc.white_level)?;
    let root_name = dir
        .canonicalize()
        .ok()
        .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "sequence".to_string());
    let mut sequences: Vec<VideoSequence<RawFrame>> = Vec::new();
    for rel in &desc.frames {
        let (seq, _) = split_frame_path(rel, &root_name)?;
        let path = dir.join(rel);
        let (codes, _) = pnm::read_pgm(&path)?;
        if (codes.width(), codes.height()) != (desc.width, desc.height) {
            return Err(Error::format(
                &path,
                format!(
                    "{}x{} frame in a {}x{} dataset",
                    codes.width(),
                    codes.height(),
                    desc.width,
                    desc.height
                ),
            ));
        }
        let frame = RawFrame::new(normalize_unclamped(&codes, levels), desc.cfa, levels)?;
        match sequences.last_mut() {
            Some(s) if s.id == seq => s.frames.push(frame),
            _ => {
                if sequences.iter().any(|s| s.id == seq) {
                    return Err(Error::format(
                        &desc_path,
                        format!("frames of sequence {seq:?} are not contiguous"),
                    ));
                }
                sequences.push(VideoSequence {
                    id: seq.to_string(),
                    frame_rate: desc.frame_rate,
                    frames: vec![frame],
                });
            }
        }
    }
    RawDataset::new(sequences)
}

fn staging_dir(dest: &Path) -> Result<PathBuf> {
    let name = dest
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("bad output path {}", dest.display())))?;
    let parent = match dest.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    Ok(parent.join(format!(".{}.staging-{}", name.to_string_lossy(), std::process::id())))
}

/// Build a directory through `fill` in a staging area, then move it to
/// `dest`. An existing `dest` is an error; nothing is left behind when
/// `fill` fails.
pub fn write_atomically(dest: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if dest.exists() {
        return Err(Error::InvalidParameter(format!("{} already exists", dest.display())));
    }
    let staging = staging_dir(dest)?;
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir(&staging).map_err(|e| Error::io(&staging, e))?;
    let outcome = fill(&staging).and_then(|()| fs::rename(&staging, dest).map_err(|e| Error::io(dest, e)));
    if outcome.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    outcome
}

fn write_dataset_into(dir: &Path, dataset: &RawDataset) -> Result<()> {
    let desc = dataset.descriptor();
    for s in &dataset.sequences {
        let seq_dir = dir.join(&s.id);
        fs::create_dir_all(&seq_dir).map_err(|e| Error::io(&seq_dir, e))?;
        for (i, f) in s.frames.iter().enumerate() {
            pnm::write_pgm16(&dir.join(frame_path(&s.id, i)), &to_codes(&f.data, f.levels))?;
        }
    }
    let path = dir.join(DESCRIPTOR);
    let text = serde_json::to_string_pretty(&desc)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Write a dataset to a new directory `dest`.
pub fn write_raw_dataset(dest: &Path, dataset: &RawDataset) -> Result<()> {
    write_atomically(dest, |dir| write_dataset_into(dir, dataset))
}

/// Write several datasets as named subdirectories of a new directory.
pub fn write_raw_datasets(dest: &Path, parts: &[(&str, &RawDataset)]) -> Result<()> {
    write_atomically(dest, |dir| {
        for (name, ds) in parts {
            let sub = dir.join(name);
            fs::create_dir(&sub).map_err(|e| Error::io(&sub, e))?;
            write_dataset_into(&sub, ds)?;
        }
        Ok(())
    })
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// SHA-256 over `dataset.json` and every listed frame, each prefixed by
/// its relative path and length. The manifest is not covered.
pub fn dataset_digest(dir: &Path) -> Result<String> {
    let desc_path = dir.join(DESCRIPTOR);
    let text = fs::read(&desc_path).map_err(|e| Error::io(&desc_path, e))?;
    let desc: DatasetDescriptor =
        serde_json::from_slice(&text).map_err(|e| Error::format(&desc_path, e.to_string()))?;
    let mut hasher = Sha256::new();
    let mut feed = |name: &str, bytes: &[u8]| {
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    };
    feed(DESCRIPTOR, &text);
    for rel in &desc.frames {
        let path = dir.join(rel);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        feed(rel, &bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Digest of a path: a dataset directory, any other directory (every
/// regular file in sorted order, manifests excluded) or a single file.
pub fn path_digest(path: &Path) -> Result<String> {
    if path.is_file() {
        return file_digest(path);
    }
    if path.join(DESCRIPTOR).is_file() {
        return dataset_digest(path);
    }
    let mut files = Vec::new();
    collect_files(path, path, &mut files)?;
    files.sort();
    let mut hasher = Sha256::new();
    for rel in files {
        let full = path.join(&rel);
        let bytes = fs::read(&full).map_err(|e| Error::io(&full, e))?;
        let name = rel.to_string_lossy();
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let p = entry.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else if p.file_name().is_some_and(|n| n != MANIFEST) {
            out.push(p.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn is_ppm(p: &Path) -> bool {
    p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm"))
}

fn read_srgb_frame(path: &Path) -> Result<SrgbFrame> {
    let (planes, maxval) = pnm::read_ppm(path)?;
    if maxval != 255 {
        return Err(Error::format(path, format!("expected 8-bit sRGB, maxval is {maxval}")));
    }
    Ok(planes.map(|p| p.map(|v| v as u8)))
}

fn read_srgb_sequence(dir: &Path, id: String, frame_rate: f64) -> Result<VideoSequence<SrgbFrame>> {
    let frames = sorted_entries(dir)?
        .into_iter()
        .filter(|p| is_ppm(p))
        .map(|p| read_srgb_frame(&p))
        .collect::<Result<Vec<_>>>()?;
    if let Some(first) = frames.first() {
        for f in &frames[1..] {
            first[0].ensure_same_dims(&f[0])?;
        }
    }
    Ok(VideoSequence { id, frame_rate, frames })
}

/// Read 8-bit PPM frames. A directory holding `.ppm` files is a single
/// sequence named after it; otherwise every subdirectory is a sequence.
/// Frames are ordered by file name.
pub fn read_srgb_sequences(dir: &Path, frame_rate: f64) -> Result<Vec<VideoSequence<SrgbFrame>>> {
    let entries = sorted_entries(dir)?;
    let sequences = if entries.iter().any(|p| is_ppm(p)) {
        let id = dir
            .canonicalize()
            .ok()
            .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "sequence".into());
        vec![read_srgb_sequence(dir, id, frame_rate)?]
    } else {
        entries
            .iter()
            .filter(|p| p.is_dir())
            .map(|p| {
                let id = p.file_name().expect("entry name").to_string_lossy().into_owned();
                read_srgb_sequence(p, id, frame_rate)
            })
            .filter(|s| s.as_ref().map_or(true, |s| !s.is_empty()))
            .collect::<Result<Vec<_>>>()?
    };
    if sequences.is_empty() {
        return Err(Error::Degenerate(format!("no .ppm frames under {}", dir.display())));
    }
    Ok(sequences)
}

/// Write sRGB sequences as `<dir>/<id>/<index>.ppm` (used for fixtures).
pub fn write_srgb_sequences(dest: &Path, sequences: &[VideoSequence<SrgbFrame>]) -> Result<()> {
    write_atomically(dest, |dir| {
        for s in sequences {
            check_sequence_id(&s.id)?;
            let seq_dir = dir.join(&s.id);
            fs::create_dir(&seq_dir).map_err(|e| Error::io(&seq_dir, e))?;
            for (i, [r, g, b]) in s.frames.iter().enumerate() {
                pnm::write_ppm8(&seq_dir.join(format!("{i:05}.ppm")), [r, g, b])?;
            }
        }
        Ok(())
    })
}

/// Write `text` to `path` via a temporary file and rename.
pub fn write_file_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_file_name(format!(
        ".{}.tmp-{}",
        path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default(),
        std::process::id()
    ));
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
