//! Flat parameter storage with a named segment layout.
//!
//! Every learnable quantity of the agent (online and target TOLD networks,
//! inverse model, action encoder, contrastive matrix) lives in one flat
//! `f64` buffer. Segments are addressed by dotted names such as
//! `encoder.0.weight`; a *group* is every segment sharing a prefix
//! (`encoder.` selects the online encoder but not `target_encoder.`).

use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Layout {
    segments: Vec<Segment>,
    len: usize,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a segment and returns its offset.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<usize> {
        let name = name.into();
        if self.find(&name).is_some() {
            return Err(Error::Layout(format!("duplicate segment `{name}`")));
        }
        if shape.contains(&0) {
            return Err(Error::Layout(format!("segment `{name}` has a zero dimension")));
        }
        let offset = self.len;
        let seg = Segment {
            name,
            shape: shape.to_vec(),
            offset,
        };
        self.len += seg.len();
        self.segments.push(seg);
        Ok(offset)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn find(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Ranges of all segments whose name starts with `prefix`.
    pub fn group(&self, prefix: &str) -> Vec<Range<usize>> {
        self.segments
            .iter()
            .filter(|s| s.name.starts_with(prefix))
            .map(Segment::range)
            .collect()
    }

    /// Checks the segment-size invariant.
    pub fn validate(&self) -> Result<()> {
        let mut expected = 0;
        for s in &self.segments {
            if s.offset != expected {
                return Err(Error::Layout(format!(
                    "segment `{}` at offset {} but expected {}",
                    s.name, s.offset, expected
                )));
            }
            expected += s.len();
        }
        if expected != self.len {
            return Err(Error::Layout(format!(
                "segments cover {expected} values but layout length is {}",
                self.len
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let values = vec![0.0; layout.len()];
        Self { layout, values }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Layout(format!(
                "{} values for a layout of length {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn segment(&self, name: &str) -> Result<&[f64]> {
        let seg = self
            .layout
            .find(name)
            .ok_or_else(|| Error::Layout(format!("no segment `{name}`")))?;
        Ok(&self.values[seg.range()])
    }

    pub fn segment_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let range = self
            .layout
            .find(name)
            .ok_or_else(|| Error::Layout(format!("no segment `{name}`")))?
            .range();
        Ok(&mut self.values[range])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// First non-finite segment, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.layout
            .segments()
            .iter()
            .find(|s| self.values[s.range()].iter().any(|v| !v.is_finite()))
            .map(|s| s.name.as_str())
    }

    /// True when every value in the group is exactly `0.0`.
    pub fn group_is_zero(&self, prefix: &str) -> bool {
        self.layout
            .group(prefix)
            .into_iter()
            .all(|r| self.values[r].iter().all(|&v| v == 0.0))
    }

    pub fn group_norm(&self, prefix: &str) -> f64 {
        self.layout
            .group(prefix)
            .into_iter()
            .flat_map(|r| self.values[r].iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn fill(&mut self, v: f64) {
        self.values.iter_mut().for_each(|x| *x = v);
    }

    /// Zeroes every value outside the given groups.
    pub fn retain_groups(&mut self, prefixes: &[&str]) {
        let mut keep = vec![false; self.values.len()];
        for p in prefixes {
            for r in self.layout.group(p) {
                keep[r].iter_mut().for_each(|k| *k = true);
            }
        }
        for (v, k) in self.values.iter_mut().zip(keep) {
            if !k {
                *v = 0.0;
            }
        }
    }

    pub fn add_scaled(&mut self, other: &ParamVector, scale: f64) -> Result<()> {
        self.check_same_layout(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn check_same_layout(&self, other: &ParamVector) -> Result<()> {
        if Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout {
            Ok(())
        } else {
            Err(Error::Layout("parameter vectors have different layouts".into()))
        }
    }

    /// Pairs each segment of group `dst` with the segment of group `src`
    /// carrying the same suffix. Shapes must agree.
    pub fn paired_ranges(&self, dst: &str, src: &str) -> Result<Vec<(Range<usize>, Range<usize>)>> {
        let mut pairs = Vec::new();
        for d in self.layout.segments().iter().filter(|s| s.name.starts_with(dst)) {
            let suffix = &d.name[dst.len()..];
            let src_name = format!("{src}{suffix}");
            let s = self
                .layout
                .find(&src_name)
                .ok_or_else(|| Error::Layout(format!("no segment `{src_name}` to pair with `{}`", d.name)))?;
            if s.shape != d.shape {
                return Err(Error::Layout(format!(
                    "`{}` has shape {:?} but `{}` has {:?}",
                    d.name, d.shape, s.name, s.shape
                )));
            }
            pairs.push((d.range(), s.range()));
        }
        if pairs.is_empty() {
            return Err(Error::Layout(format!("empty group `{dst}`")));
        }
        Ok(pairs)
    }

    /// Copies group `src` into group `dst`.
    pub fn copy_group(&mut self, dst: &str, src: &str) -> Result<()> {
        for (d, s) in self.paired_ranges(dst, src)? {
            self.values.copy_within(s, d.start);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> Arc<Layout> {
        let mut l = Layout::new();
        l.push("encoder.0.weight", &[2, 3]).unwrap();
        l.push("encoder.0.bias", &[2]).unwrap();
        l.push("target_encoder.0.weight", &[2, 3]).unwrap();
        l.push("target_encoder.0.bias", &[2]).unwrap();
        Arc::new(l)
    }

    #[test]
    fn length_is_sum_of_segments() {
        let l = layout();
        assert_eq!(l.len(), 16);
        l.validate().unwrap();
    }

    #[test]
    fn group_prefix_does_not_capture_target() {
        let l = layout();
        assert_eq!(l.group("encoder."), vec![0..6, 6..8]);
        assert_eq!(l.group("target_encoder."), vec![8..14, 14..16]);
    }

    #[test]
    fn copy_group_pairs_by_suffix() {
        let mut p = ParamVector::zeros(layout());
        for (i, v) in p.values_mut()[..8].iter_mut().enumerate() {
            *v = i as f64;
        }
        p.copy_group("target_encoder.", "encoder.").unwrap();
        assert_eq!(&p.values()[8..], &p.values()[..8]);
    }

    #[test]
    fn duplicate_and_empty_segments_rejected() {
        let mut l = Layout::new();
        l.push("a", &[1]).unwrap();
        assert!(l.push("a", &[1]).is_err());
        assert!(l.push("b", &[0, 2]).is_err());
    }

    #[test]
    fn retain_groups_zeroes_the_rest() {
        let mut p = ParamVector::zeros(layout());
        p.fill(1.0);
        p.retain_groups(&["target_encoder."]);
        assert!(p.group_is_zero("encoder."));
        assert!(!p.group_is_zero("target_encoder."));
    }
}
