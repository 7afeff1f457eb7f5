use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FrameSequence, SampleMeta, StepSequence};
use crate::distributions::ElementKind;
use crate::{Error, Result};

pub const PIANO_KEYS: usize = 88;

/// Read a mono 16-bit PCM WAV file; samples are divided by 32768.
pub fn load_wav(path: impl AsRef<Path>) -> Result<FrameSequence> {
    let path = path.as_ref();
    let format_err = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => format_err(other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(format_err(format!("{} channels, expected mono", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(format_err(format!(
            "unsupported encoding: {:?} {}-bit",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let frames = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| format_err(e.to_string()))?;
    let n = frames.len();
    FrameSequence::new(
        frames,
        SampleMeta {
            source: path.display().to_string(),
            original_len: n,
        },
    )
}

pub fn write_wav(path: impl AsRef<Path>, samples: &[i16], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in samples {
        w.write_sample(s).map_err(to_err)?;
    }
    w.finalize().map_err(to_err)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-blank lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_row(line_no: usize, line: &str, width: usize) -> Result<Vec<f64>> {
    let row = line
        .split(',')
        .map(|tok| {
            tok.trim().parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("invalid number {:?}", tok.trim()),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    if row.len() != width {
        return Err(Error::Parse {
            line: line_no,
            msg: format!("expected {width} values, found {}", row.len()),
        });
    }
    Ok(row)
}

/// One step per line, 88 comma-separated values in `{0, 1}`.
pub fn load_pianoroll(path: impl AsRef<Path>) -> Result<StepSequence> {
    let text = read_text(path.as_ref())?;
    let mut rows = Vec::new();
    for (line_no, line) in data_lines(&text) {
        let row = parse_row(line_no, line, PIANO_KEYS)?;
        if let Some(v) = row.iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("non-binary value {v}"),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptySequence);
    }
    StepSequence::from_rows(&rows, vec![ElementKind::Binary; PIANO_KEYS])
}

/// One step per line: `pen,x,y` with `pen` in `{0, 1}`.
pub fn load_trajectory(path: impl AsRef<Path>) -> Result<StepSequence> {
    let text = read_text(path.as_ref())?;
    let mut rows = Vec::new();
    for (line_no, line) in data_lines(&text) {
        let row = parse_row(line_no, line, 3)?;
        if row[0] != 0.0 && row[0] != 1.0 {
            return Err(Error::Parse {
                line: line_no,
                msg: "pen dimension not binary".into(),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptySequence);
    }
    StepSequence::from_rows(
        &rows,
        vec![ElementKind::Binary, ElementKind::Continuous, ElementKind::Continuous],
    )
}

/// Generic comma-separated steps. Width is taken from the first line; kinds
/// default to continuous.
pub fn load_steps_csv(path: impl AsRef<Path>, kinds: Option<&[ElementKind]>) -> Result<StepSequence> {
    let text = read_text(path.as_ref())?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = kinds.map(|k| k.len());
    for (line_no, line) in data_lines(&text) {
        let w = *width.get_or_insert_with(|| line.split(',').count());
        rows.push(parse_row(line_no, line, w)?);
    }
    let width = match width {
        Some(w) if !rows.is_empty() => w,
        _ => return Err(Error::EmptySequence),
    };
    let kinds = kinds
        .map(|k| k.to_vec())
        .unwrap_or_else(|| vec![ElementKind::Continuous; width]);
    StepSequence::from_rows(&rows, kinds).map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::Parse { line: 0, msg },
        other => other,
    })
}

/// Write one step per line using the shortest round-trip float formatting.
pub fn write_steps_csv(path: impl AsRef<Path>, seq: &StepSequence) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(seq.num_elements() * 12);
    for t in 0..seq.steps() {
        for (i, v) in seq.step(t).iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Wav,
    Pianoroll,
    Trajectory,
    Steps,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// File listing with split assignment. Relative paths resolve against the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: SourceFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kinds: Option<Vec<ElementKind>>,
    pub train: Vec<PathBuf>,
    pub valid: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(serde_json::from_str(&read_text(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn files(&self, split: Split) -> &[PathBuf] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn wav_endpoints_and_length() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_wav(&p, &[0, 32767, -32768], 16000).unwrap();
        let seq = load_wav(&p).unwrap();
        assert_eq!(seq.len(), 3);
        assert_eq!(seq.frames()[0], 0.0);
        assert!((seq.frames()[1] - 1.0).abs() < 1e-4);
        assert_eq!(seq.frames()[2], -1.0);
    }

    #[test]
    fn wav_rejects_empty_and_stereo() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.wav");
        write_wav(&p, &[], 16000).unwrap();
        assert!(matches!(load_wav(&p), Err(Error::EmptySequence)));

        let stereo = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
        w.write_sample(1i16).unwrap();
        w.write_sample(1i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&stereo), Err(Error::Format { .. })));
        assert!(load_wav(dir.path().join("missing.wav")).is_err());
    }

    #[test]
    fn pianoroll_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let zeros = vec!["0"; 88].join(",");
        let p = write(dir.path(), "ok.csv", &format!("{zeros}\n{zeros}\n"));
        let s = load_pianoroll(&p).unwrap();
        assert_eq!((s.steps(), s.width()), (2, 88));
        assert!(s.values().iter().all(|v| *v == 0.0));
        assert!(s.kinds().iter().all(|k| *k == ElementKind::Binary));

        let short = vec!["0"; 87].join(",");
        let p = write(dir.path(), "short.csv", &format!("{zeros}\n{short}\n"));
        assert!(matches!(load_pianoroll(&p), Err(Error::Parse { line: 2, .. })));

        let mut two = vec!["0"; 88];
        two[5] = "2";
        let p = write(dir.path(), "two.csv", &two.join(","));
        match load_pianoroll(&p) {
            Err(Error::Parse { line: 1, msg }) => assert!(msg.contains("non-binary value")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn trajectory_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "t.csv", "1,0.5,-0.25\n");
        let s = load_trajectory(&p).unwrap();
        assert_eq!(s.step(0), &[1.0, 0.5, -0.25]);
        assert_eq!(s.kinds()[0], ElementKind::Binary);

        let p = write(dir.path(), "bad.csv", "0.5,0,0\n");
        match load_trajectory(&p) {
            Err(Error::Parse { msg, .. }) => assert_eq!(msg, "pen dimension not binary"),
            other => panic!("{other:?}"),
        }
        let p = write(dir.path(), "empty.csv", "");
        assert!(matches!(load_trajectory(&p), Err(Error::EmptySequence)));
    }

    #[test]
    fn steps_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = StepSequence::continuous(vec![0.1, -2.5, 1e-9, 3.0, 0.0, -0.0], 3, 2).unwrap();
        let p = dir.path().join("s.csv");
        write_steps_csv(&p, &s).unwrap();
        let back = load_steps_csv(&p, None).unwrap();
        assert_eq!(back, s);
    }
}
