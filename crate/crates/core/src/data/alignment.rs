use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::feature::FeatureSequence;
use crate::error::{AlignmentIssue, Error, Result};

/// Tone label reserved for toneless (consonant) segments.
pub const NULL_TONE: &str = "T0";

pub const ALIGNMENT_HEADER: &str = "utterance_id\tstart_frame\tend_frame\tphone\ttone\tis_vowel";

/// A labelled frame span `[start_frame, end_frame)` from a forced alignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhoneSegment {
    pub utterance_id: String,
    pub start_frame: usize,
    pub end_frame: usize,
    pub phone: String,
    pub tone: String,
    pub is_vowel: bool,
}

impl PhoneSegment {
    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        self.end_frame <= self.start_frame
    }

    /// The tone label, or `None` for the reserved null tone.
    pub fn tone_label(&self) -> Option<&str> {
        (self.tone != NULL_TONE).then_some(self.tone.as_str())
    }
}

/// Parses an alignment TSV for `seq`, returning segments sorted by start frame.
pub fn load_alignments(path: &Path, seq: &FeatureSequence) -> Result<Vec<PhoneSegment>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_alignments(&text, path, &seq.utterance_id, seq.num_frames())
}

pub(crate) fn parse_alignments(
    text: &str,
    path: &Path,
    utterance_id: &str,
    num_frames: usize,
) -> Result<Vec<PhoneSegment>> {
    let err = |line: usize, issue: AlignmentIssue| Error::Alignment {
        path: path.to_path_buf(),
        line,
        issue,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end_matches('\r') == ALIGNMENT_HEADER => {}
        _ => {
            return Err(err(
                1,
                AlignmentIssue::Malformed("missing or unexpected header".into()),
            ))
        }
    }

    let mut rows: Vec<(usize, PhoneSegment)> = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(err(
                line_no,
                AlignmentIssue::Malformed(format!("expected 6 fields, found {}", fields.len())),
            ));
        }
        let parse_frame = |s: &str, what: &str| {
            s.parse::<usize>().map_err(|_| {
                err(
                    line_no,
                    AlignmentIssue::Malformed(format!("{what} {s:?} is not a frame index")),
                )
            })
        };
        let start = parse_frame(fields[1], "start_frame")?;
        let end = parse_frame(fields[2], "end_frame")?;
        let is_vowel = match fields[5] {
            "1" => true,
            "0" => false,
            other => {
                return Err(err(
                    line_no,
                    AlignmentIssue::Malformed(format!("is_vowel must be 0 or 1, got {other:?}")),
                ))
            }
        };
        if fields[0] != utterance_id {
            return Err(err(
                line_no,
                AlignmentIssue::Malformed(format!(
                    "utterance id {:?} does not match {utterance_id:?}",
                    fields[0]
                )),
            ));
        }
        if fields[3].is_empty() || fields[4].is_empty() {
            return Err(err(
                line_no,
                AlignmentIssue::Malformed("empty phone or tone label".into()),
            ));
        }
        if end <= start {
            return Err(err(
                line_no,
                AlignmentIssue::Malformed(format!("empty span [{start}, {end})")),
            ));
        }
        if end > num_frames {
            return Err(err(
                line_no,
                AlignmentIssue::OutOfRange { end, num_frames },
            ));
        }
        rows.push((
            line_no,
            PhoneSegment {
                utterance_id: fields[0].to_string(),
                start_frame: start,
                end_frame: end,
                phone: fields[3].to_string(),
                tone: fields[4].to_string(),
                is_vowel,
            },
        ));
    }

    rows.sort_by_key(|(_, s)| s.start_frame);
    for pair in rows.windows(2) {
        let (_, prev) = &pair[0];
        let (line, cur) = &pair[1];
        if cur.start_frame < prev.end_frame {
            return Err(err(
                *line,
                AlignmentIssue::Overlap {
                    previous_end: prev.end_frame,
                    start: cur.start_frame,
                },
            ));
        }
    }
    Ok(rows.into_iter().map(|(_, s)| s).collect())
}

pub fn format_alignments(segments: &[PhoneSegment]) -> String {
    let mut out = String::with_capacity(32 * (segments.len() + 1));
    out.push_str(ALIGNMENT_HEADER);
    out.push('\n');
    for s in segments {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            s.utterance_id,
            s.start_frame,
            s.end_frame,
            s.phone,
            s.tone,
            u8::from(s.is_vowel)
        );
    }
    out
}

pub fn save_alignments(path: &Path, segments: &[PhoneSegment]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, format_alignments(segments)).map_err(|e| Error::io(path, e))
}
