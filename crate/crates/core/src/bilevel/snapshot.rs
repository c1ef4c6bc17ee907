use crate::autodiff::Tensor;

/// The student parameter versions of one look-ahead window.
///
/// Holds `w^(τ)` together with the noisy batch consumed at step τ, for the
/// steps of the current window, plus the newest parameters `head`. At
/// meta-update time a full window retains exactly `k + 1` versions.
#[derive(Clone, Debug)]
pub struct SnapshotBuffer {
    capacity: usize,
    entries: Vec<(Tensor, Vec<usize>)>,
    head: Tensor,
    peak: usize,
}

impl SnapshotBuffer {
    /// Start a window of `k` steps at parameters `start`.
    pub fn new(k: usize, start: Tensor) -> Self {
        assert!(k >= 1, "window needs k >= 1");
        SnapshotBuffer {
            capacity: k,
            entries: Vec::with_capacity(k),
            head: start,
            peak: 1,
        }
    }

    pub fn k(&self) -> usize {
        self.capacity
    }

    /// Record one inner step: the current head was updated on `batch` to
    /// give `next`. Panics if the window is already full.
    pub fn advance(&mut self, batch: Vec<usize>, next: Tensor) {
        assert!(
            self.entries.len() < self.capacity,
            "snapshot window already holds {} steps",
            self.capacity
        );
        let prev = std::mem::replace(&mut self.head, next);
        self.entries.push((prev, batch));
        self.peak = self.peak.max(self.retained());
    }

    /// Newest parameters, `w^(t+1)` once the window is complete.
    pub fn head(&self) -> &Tensor {
        &self.head
    }

    /// `(w^(τ), batch^(τ))`, oldest first.
    pub fn steps(&self) -> &[(Tensor, Vec<usize>)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.entries.len() == self.capacity
    }

    /// Student copies currently held.
    pub fn retained(&self) -> usize {
        self.entries.len() + 1
    }

    /// Largest number of student copies held at once.
    pub fn peak_retained(&self) -> usize {
        self.peak
    }

    /// Begin the next window at the current head.
    pub fn reset(&mut self) {
        self.entries.clear();
    }
}
