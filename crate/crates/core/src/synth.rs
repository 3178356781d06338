//! Seeded synthetic data: toy corpora with Markov structure, random edit
//! sets, and the language models trained on them. Used by the timing
//! benchmark and by randomized tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scorer::NGramLm;
use crate::types::{Edit, EditSet, Sentence};

pub struct Synth {
    rng: ChaCha8Rng,
    vocab: Vec<String>,
    successors: Vec<[usize; 3]>,
}

impl Synth {
    pub fn new(seed: u64, vocab_size: usize) -> Self {
        let vocab_size = vocab_size.max(4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab = (0..vocab_size).map(|i| format!("w{i}")).collect();
        let successors = (0..vocab_size)
            .map(|_| {
                [
                    rng.random_range(0..vocab_size),
                    rng.random_range(0..vocab_size),
                    rng.random_range(0..vocab_size),
                ]
            })
            .collect();
        Synth { rng, vocab, successors }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn word(&mut self) -> usize {
        self.rng.random_range(0..self.vocab.len())
    }

    /// A sentence from the Markov chain: usually one of the current word's
    /// three preferred successors, sometimes any word.
    pub fn sentence(&mut self, len: usize) -> Sentence {
        let mut ids = Vec::with_capacity(len);
        let mut cur = self.word();
        for _ in 0..len {
            ids.push(cur);
            cur = if self.rng.random_bool(0.8) {
                self.successors[cur][self.rng.random_range(0..3)]
            } else {
                self.word()
            };
        }
        let words: Vec<&str> = ids.iter().map(|&i| self.vocab[i].as_str()).collect();
        Sentence::parse(&words.join(" "))
    }

    pub fn corpus(&mut self, sentences: usize) -> Vec<Sentence> {
        (0..sentences)
            .map(|_| {
                let len = self.rng.random_range(4..=12);
                self.sentence(len)
            })
            .collect()
    }

    pub fn ngram_model(&mut self, order: usize, alpha: f64, sentences: usize) -> NGramLm {
        let corpus = self.corpus(sentences);
        NGramLm::new(order, alpha)
            .expect("valid order and alpha")
            .train(&corpus)
    }

    /// A fresh source sentence with `n` random non-overlapping edits
    /// (replacements, deletions, insertions and two-token rewrites).
    pub fn edit_set(&mut self, n: usize) -> EditSet {
        let len = 2 * n + 3;
        let source = self.sentence(len);
        let mut slots: Vec<usize> = (0..len).collect();
        for i in (1..slots.len()).rev() {
            let j = self.rng.random_range(0..=i);
            slots.swap(i, j);
        }
        let mut positions = slots[..n].to_vec();
        positions.sort_unstable();
        let edits = positions
            .iter()
            .map(|&p| {
                let here = source.tokens()[p].as_str().to_owned();
                let kind = self.rng.random_range(0..4);
                let mut other = || loop {
                    let w = self.vocab[self.rng.random_range(0..self.vocab.len())].clone();
                    if w != here {
                        return w;
                    }
                };
                match kind {
                    0 => Edit::new(p, p + 1, &other()),
                    1 => Edit::new(p, p + 1, ""),
                    2 => Edit::new(p, p, &other()),
                    _ => {
                        let (a, b) = (other(), other());
                        Edit::new(p, p + 1, &format!("{a} {b}"))
                    }
                }
            })
            .collect();
        EditSet::new(source, edits).expect("distinct slots never overlap")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edit_sets_have_requested_size() {
        let mut s = Synth::new(1, 30);
        for n in 0..=14 {
            let es = s.edit_set(n);
            assert_eq!(es.num_players(), n);
        }
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let a = Synth::new(5, 20).edit_set(6);
        let b = Synth::new(5, 20).edit_set(6);
        assert_eq!(a, b);
    }
}
