//! Fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mlcheck_core::harness::Task;
use mlcheck_core::LabeledSet;

/// `n` random rows labelled by the task's model.
pub fn labelled_rows(task: &Task, n: usize, seed: u64) -> LabeledSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = task.mut_();
    let xs: Vec<_> = (0..n).map(|_| task.schema.random_instance(&mut rng)).collect();
    let zs = m.predict(&xs).expect("builtin models answer");
    xs.into_iter().zip(zs).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use mlcheck_core::harness::planted_trojan;

    #[test]
    fn rows_follow_the_model() {
        let task = planted_trojan(true);
        let data = labelled_rows(&task, 50, 1);
        assert!(!data.is_empty());
        for (x, z) in data.rows() {
            assert_eq!(&task.model.predict(x).unwrap(), z);
        }
        assert_eq!(data.rows(), labelled_rows(&task, 50, 1).rows());
    }
}
