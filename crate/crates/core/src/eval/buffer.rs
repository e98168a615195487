use std::collections::VecDeque;

use crate::env::{Action, Observation};

/// Rolling window of the most recent `(observation, action)` pairs.
#[derive(Clone, Debug)]
pub struct ContextBuffer {
    capacity: usize,
    steps: VecDeque<(Observation, Action)>,
}

impl ContextBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        ContextBuffer {
            capacity,
            steps: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Appends a new step, evicting the oldest when full. The action is a
    /// placeholder until [`ContextBuffer::set_last_action`].
    pub fn push(&mut self, obs: Observation) {
        if self.steps.len() == self.capacity {
            self.steps.pop_front();
        }
        self.steps.push_back((obs, Action::Stop));
    }

    pub fn set_last_action(&mut self, action: Action) {
        if let Some(last) = self.steps.back_mut() {
            last.1 = action;
        }
    }

    pub fn contents(&self) -> (Vec<Observation>, Vec<Action>) {
        self.steps.iter().cloned().unzip()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(v: f64) -> Observation {
        let mut d = vec![0.0; Observation::LEN];
        d[0] = v;
        Observation::from_data(d).unwrap()
    }

    #[test]
    fn evicts_oldest_in_arrival_order() {
        let mut b = ContextBuffer::new(3);
        for i in 0..5 {
            b.push(obs(i as f64));
            b.set_last_action(Action::TurnLeft);
            assert!(b.len() <= 3);
        }
        let (o, a) = b.contents();
        assert_eq!(
            o.iter().map(|x| x.depth(0)).collect::<Vec<_>>(),
            vec![2.0, 3.0, 4.0]
        );
        assert_eq!(a, vec![Action::TurnLeft; 3]);
    }
}
