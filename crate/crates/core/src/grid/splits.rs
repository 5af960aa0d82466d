use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

/// Counts per split: sequences for a corpus, time steps for a single sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// `input_len` conditioning frames followed by `horizon` frames to predict,
/// starting at `start` within sequence `sequence`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub sequence: usize,
    pub start: usize,
    pub input_len: usize,
    pub horizon: usize,
}

impl Window {
    pub fn end(&self) -> usize {
        self.start + self.input_len + self.horizon
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSet {
    pub tag: SplitTag,
    pub windows: Vec<Window>,
}

impl WindowSet {
    /// Re-cut every window into consecutive pieces of `input_len + horizon`
    /// frames advancing by `stride`. Pieces that would overrun are dropped.
    pub fn chop(&self, input_len: usize, horizon: usize, stride: usize) -> Result<WindowSet> {
        if input_len == 0 || stride == 0 {
            return Err(Error::config("window length and stride must be positive"));
        }
        let mut windows = Vec::new();
        for w in &self.windows {
            let mut start = w.start;
            while start + input_len + horizon <= w.end() {
                windows.push(Window {
                    sequence: w.sequence,
                    start,
                    input_len,
                    horizon,
                });
                start += stride;
            }
        }
        Ok(WindowSet {
            tag: self.tag,
            windows,
        })
    }
}

/// Split a corpus described by its per-sequence frame counts.
///
/// With several sequences the split is by whole sequences, in order.
/// A single sequence is cut chronologically into contiguous
/// train | val | test ranges.
pub fn make_splits(frames_per_sequence: &[usize], spec: SplitSpec) -> Result<[WindowSet; 3]> {
    let whole = |tag, range: std::ops::Range<usize>| WindowSet {
        tag,
        windows: range
            .map(|s| Window {
                sequence: s,
                start: 0,
                input_len: frames_per_sequence[s],
                horizon: 0,
            })
            .collect(),
    };
    let need = spec.train + spec.val + spec.test;
    match frames_per_sequence {
        [] => Err(Error::config("empty corpus")),
        [frames] => {
            if need > *frames || spec.train == 0 {
                return Err(Error::config(format!(
                    "split {need} steps of a {frames}-step sequence"
                )));
            }
            let range = |tag, start: usize, len: usize| WindowSet {
                tag,
                windows: if len == 0 {
                    Vec::new()
                } else {
                    vec![Window {
                        sequence: 0,
                        start,
                        input_len: len,
                        horizon: 0,
                    }]
                },
            };
            Ok([
                range(SplitTag::Train, 0, spec.train),
                range(SplitTag::Val, spec.train, spec.val),
                range(SplitTag::Test, spec.train + spec.val, spec.test),
            ])
        }
        many => {
            if need > many.len() || spec.train == 0 {
                return Err(Error::config(format!(
                    "split {need} sequences of a {}-sequence corpus",
                    many.len()
                )));
            }
            let (a, b) = (spec.train, spec.train + spec.val);
            Ok([
                whole(SplitTag::Train, 0..a),
                whole(SplitTag::Val, a..b),
                whole(SplitTag::Test, b..need),
            ])
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    #[test]
    fn corpus_split_is_disjoint_cover() {
        let frames = vec![40; 80];
        let [tr, va, te] = make_splits(
            &frames,
            SplitSpec {
                train: 57,
                val: 7,
                test: 16,
            },
        )
        .unwrap();
        assert_eq!(
            (tr.windows.len(), va.windows.len(), te.windows.len()),
            (57, 7, 16)
        );
        let all: HashSet<usize> = [&tr, &va, &te]
            .iter()
            .flat_map(|s| s.windows.iter().map(|w| w.sequence))
            .collect();
        assert_eq!(all.len(), 80);
    }

    #[test]
    fn single_sequence_split_is_chronological() {
        let [tr, va, te] = make_splits(
            &[1810],
            SplitSpec {
                train: 1466,
                val: 163,
                test: 181,
            },
        )
        .unwrap();
        let (tr, va, te) = (tr.windows[0], va.windows[0], te.windows[0]);
        assert!(tr.end() <= va.start && va.end() <= te.start);
        assert_eq!(te.end(), 1810);
        assert_eq!(tr.input_len + va.input_len + te.input_len, 1810);
    }

    #[test]
    fn oversized_spec_rejected() {
        assert!(matches!(
            make_splits(
                &[10],
                SplitSpec {
                    train: 8,
                    val: 2,
                    test: 1
                }
            ),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            make_splits(
                &[5, 5],
                SplitSpec {
                    train: 2,
                    val: 1,
                    test: 0
                }
            ),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn chop_cuts_fixed_windows() {
        let [tr, ..] = make_splits(
            &[100],
            SplitSpec {
                train: 50,
                val: 20,
                test: 30,
            },
        )
        .unwrap();
        let c = tr.chop(10, 5, 15).unwrap();
        assert!(c.windows.iter().all(|w| w.end() <= 50));
        assert_eq!(c.windows.len(), 3);
    }
}
