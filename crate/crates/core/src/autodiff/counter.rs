//! Per-thread tallies of evaluation passes, used to audit the cost of
//! meta-gradient computations.

use std::cell::Cell;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PassCounts {
    /// Taped forward evaluations.
    pub forward: usize,
    /// Forward-mode (primal + tangent) passes.
    pub jvp: usize,
    /// Reverse sweeps over a record.
    pub vjp: usize,
}

impl PassCounts {
    pub fn total(&self) -> usize {
        self.forward + self.jvp + self.vjp
    }

    /// Passes that propagate derivatives (JVP and VJP).
    pub fn differentiation(&self) -> usize {
        self.jvp + self.vjp
    }
}

impl std::ops::Add for PassCounts {
    type Output = PassCounts;
    fn add(self, o: PassCounts) -> PassCounts {
        PassCounts {
            forward: self.forward + o.forward,
            jvp: self.jvp + o.jvp,
            vjp: self.vjp + o.vjp,
        }
    }
}

thread_local! {
    static COUNTS: Cell<PassCounts> = const { Cell::new(PassCounts { forward: 0, jvp: 0, vjp: 0 }) };
}

pub(crate) fn bump(f: impl FnOnce(&mut PassCounts)) {
    COUNTS.with(|c| {
        let mut v = c.get();
        f(&mut v);
        c.set(v);
    });
}

/// Run `f` and report the passes it performed on this thread.
pub fn count_passes<T>(f: impl FnOnce() -> T) -> (T, PassCounts) {
    let before = COUNTS.with(|c| c.get());
    let out = f();
    let after = COUNTS.with(|c| c.get());
    (
        out,
        PassCounts {
            forward: after.forward - before.forward,
            jvp: after.jvp - before.jvp,
            vjp: after.vjp - before.vjp,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_are_scoped_to_the_closure() {
        bump(|c| c.vjp += 5);
        let ((), counts) = count_passes(|| {
            bump(|c| c.forward += 1);
            bump(|c| c.jvp += 2);
        });
        assert_eq!(
            counts,
            PassCounts {
                forward: 1,
                jvp: 2,
                vjp: 0
            }
        );
        assert_eq!(counts.total(), 3);
        assert_eq!(counts.differentiation(), 2);
        assert_eq!((counts + counts).jvp, 4);
    }
}
