use std::ops::Range;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// A named block of a flat parameter vector, viewed with `shape`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
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

    /// First component of a dotted name (`"gate.out.bias"` → `"gate"`).
    pub fn group(&self) -> &str {
        self.name.split('.').next().unwrap_or(&self.name)
    }
}

/// Segment table for a flat parameter vector. Segments are laid out back to
/// back in insertion order, so they are disjoint and cover the vector.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParamLayout {
    segments: Vec<Segment>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>) {
        let seg = Segment {
            name: name.into(),
            offset: self.total,
            shape,
        };
        self.total += seg.len();
        self.segments.push(seg);
    }

    /// Rebuild from an explicit table, checking that it tiles `[0, total)`.
    pub fn from_segments(segments: Vec<Segment>) -> Result<Self> {
        let mut total = 0;
        for s in &segments {
            if s.offset != total || s.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "segment {} does not tile the parameter vector",
                    s.name
                )));
            }
            total += s.len();
        }
        Ok(ParamLayout { segments, total })
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub(crate) fn expect(&self, name: &str) -> &Segment {
        self.segment(name)
            .unwrap_or_else(|| panic!("layout has no segment {name}"))
    }

    /// Distinct top-level groups in layout order.
    pub fn groups(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for s in &self.segments {
            if out.last() != Some(&s.group()) {
                out.push(s.group());
            }
        }
        out
    }

    /// Contiguous index range covered by a top-level group.
    pub fn group_range(&self, group: &str) -> Option<Range<usize>> {
        let mut it = self.segments.iter().filter(|s| s.group() == group);
        let first = it.next()?;
        let end = it.next_back().unwrap_or(first).range().end;
        Some(first.offset..end)
    }

    /// L2 norm of each group's slice of `params`.
    pub fn group_norms(&self, params: &Tensor) -> Vec<(String, f64)> {
        self.groups()
            .into_iter()
            .map(|g| {
                let r = self.group_range(g).expect("group exists");
                let n = params.data()[r].iter().map(|v| v * v).sum::<f64>().sqrt();
                (g.to_string(), n)
            })
            .collect()
    }
}
