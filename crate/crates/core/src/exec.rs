//! Execution mode for data-parallel kernels.
//!
//! With the `parallel` feature the [`Exec::Parallel`] mode dispatches to rayon;
//! without it every mode runs sequentially. Kernels only split work into
//! independent output chunks, so results never depend on the mode.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// True when work will actually be spread over the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Runs `f(chunk_index, chunk)` over consecutive `chunk_len` sized chunks.
    pub(crate) fn for_each_chunk<T, F>(self, data: &mut [T], chunk_len: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        let chunk_len = chunk_len.max(1);
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            data.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
        data.chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }

    /// Maps `f` over `items`, keeping input order.
    pub(crate) fn map<I, T, F>(self, items: &[I], f: F) -> Vec<T>
    where
        I: Sync,
        T: Send,
        F: Fn(&I) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let mut a = vec![0u32; 1000];
        let mut b = a.clone();
        let fill = |i: usize, c: &mut [u32]| {
            for (j, v) in c.iter_mut().enumerate() {
                *v = (i * 7 + j) as u32;
            }
        };
        Exec::Sequential.for_each_chunk(&mut a, 33, fill);
        Exec::Parallel.for_each_chunk(&mut b, 33, fill);
        assert_eq!(a, b);

        let items: Vec<u64> = (0..100).collect();
        assert_eq!(
            Exec::Sequential.map(&items, |x| x * x),
            Exec::Parallel.map(&items, |x| x * x)
        );
    }
}
