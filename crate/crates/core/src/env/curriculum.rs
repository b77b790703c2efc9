//! Five-level curriculum driven by a rolling success window.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

pub const MAX_LEVEL: u8 = 4;
pub const NUM_LEVELS: usize = MAX_LEVEL as usize + 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    level: u8,
    window: VecDeque<bool>,
    capacity: usize,
    threshold: f64,
    /// Fixed level: outcomes are still recorded but never advance.
    pinned: bool,
}

impl Default for CurriculumState {
    fn default() -> Self {
        Self::new(0, 1000, 0.8)
    }
}

impl CurriculumState {
    pub fn new(level: u8, capacity: usize, threshold: f64) -> Self {
        Self {
            level: level.min(MAX_LEVEL),
            window: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
            threshold,
            pinned: false,
        }
    }

    pub fn pinned(level: u8, capacity: usize, threshold: f64) -> Self {
        Self {
            pinned: true,
            ..Self::new(level, capacity, threshold)
        }
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    pub fn is_pinned(&self) -> bool {
        self.pinned
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn success_rate(&self) -> f64 {
        if self.window.is_empty() {
            return 0.0;
        }
        self.window.iter().filter(|&&s| s).count() as f64 / self.window.len() as f64
    }

    /// Record one finished episode; returns true when the level advanced.
    pub fn update(&mut self, success: bool) -> bool {
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(success);
        let full = self.window.len() == self.capacity;
        if !self.pinned && full && self.success_rate() > self.threshold && self.level < MAX_LEVEL {
            self.level += 1;
            self.window.clear();
            return true;
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fill(c: &mut CurriculumState, successes: usize, total: usize) -> bool {
        let mut advanced = false;
        for i in 0..total {
            advanced |= c.update(i < successes);
        }
        advanced
    }

    #[test]
    fn strictly_greater_than_threshold_advances() {
        let mut c = CurriculumState::default();
        assert!(fill(&mut c, 801, 1000));
        assert_eq!(c.level(), 1);
        assert_eq!(c.window_len(), 0);
        let mut c = CurriculumState::default();
        assert!(!fill(&mut c, 800, 1000));
        assert_eq!(c.level(), 0);
    }

    #[test]
    fn top_level_is_a_ceiling() {
        let mut c = CurriculumState::new(4, 10, 0.8);
        fill(&mut c, 10, 10);
        assert_eq!(c.level(), 4);
    }

    #[test]
    fn pinned_never_moves() {
        let mut c = CurriculumState::pinned(0, 10, 0.8);
        fill(&mut c, 10, 10);
        assert_eq!(c.level(), 0);
        assert_eq!(c.success_rate(), 1.0);
    }

    proptest! {
        #[test]
        fn level_monotone_and_window_bounded(outcomes in proptest::collection::vec(any::<bool>(), 0..400), cap in 1usize..50) {
            let mut c = CurriculumState::new(0, cap, 0.8);
            let mut last = 0;
            for o in outcomes {
                c.update(o);
                prop_assert!(c.level() >= last);
                prop_assert!(c.window_len() <= cap);
                last = c.level();
            }
        }
    }
}
