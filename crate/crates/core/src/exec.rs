//! Per-item fan-out used by the batch loops.
//!
//! With the `parallel` feature, [`Execution::Parallel`] runs on the rayon
//! pool; otherwise it falls back to a plain loop. Results are always
//! returned in input order, so reductions over them stay deterministic.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
            }
            _ => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
        }
    }

    pub fn map_mut<T, R, F>(self, items: &mut [T], f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(usize, &mut T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                items.par_iter_mut().enumerate().map(|(i, t)| f(i, t)).collect()
            }
            _ => items.iter_mut().enumerate().map(|(i, t)| f(i, t)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_preserve_order() {
        let items: Vec<u32> = (0..100).collect();
        let seq = Execution::Sequential.map(&items, |i, v| (i as u32) * 1000 + v);
        let par = Execution::Parallel.map(&items, |i, v| (i as u32) * 1000 + v);
        assert_eq!(seq, par);
    }
}
