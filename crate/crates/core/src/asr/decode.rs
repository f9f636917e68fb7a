use crate::autodiff::{Binding, Tape, Var};
use crate::{Error, Result};

use super::model::{log_softmax, AsrModel};
use super::{EOS, SOS};

/// A finished decode: transcript token ids (start/end markers stripped)
/// and the raw cumulative log-probability of every generated token,
/// including the end marker when one was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub ids: Vec<usize>,
    pub log_prob: f64,
}

/// Finished hypothesis plus the number of generation steps behind its
/// score, which the length-normalized ranking divides by.
struct Finished {
    hyp: Hypothesis,
    steps: usize,
}

impl Finished {
    fn normalized(&self) -> f64 {
        self.hyp.log_prob / self.steps.max(1) as f64
    }
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

impl AsrModel {
    /// Longest `[SOS, tokens...]` prefix generation may reach: every
    /// emitted token needs at least one frame of acoustic evidence, so
    /// hypotheses are cut at the encoder frame count even when max_len
    /// would allow more.
    fn decode_limit(&self, tape: &Tape, memory: Var) -> usize {
        self.cfg.max_len.min(tape.shape(memory)[0] + 1)
    }

    /// Greedy argmax decode; ties pick the lowest token id. Generation
    /// stops at the end marker or at the length limit.
    pub fn greedy_decode(&self, tape: &mut Tape, bound: &Binding, features: Var) -> Result<Hypothesis> {
        let mut rng = rand::SeedableRng::seed_from_u64(0);
        let memory = self.encode(tape, bound, features, false, &mut rng)?;
        self.greedy_from_memory(tape, bound, memory)
    }

    fn greedy_from_memory(&self, tape: &mut Tape, bound: &Binding, memory: Var) -> Result<Hypothesis> {
        let limit = self.decode_limit(tape, memory);
        let mut input = vec![SOS];
        let mut log_prob = 0.0;
        loop {
            let lp = self.next_token_log_probs(tape, bound, memory, &input)?;
            let tok = argmax_lowest(&lp);
            log_prob += lp[tok];
            if tok == EOS {
                return Ok(Hypothesis { ids: input[1..].to_vec(), log_prob });
            }
            input.push(tok);
            if input.len() >= limit {
                return Ok(Hypothesis { ids: input[1..].to_vec(), log_prob });
            }
        }
    }

    /// Best hypothesis under beam search: beams are pruned by raw
    /// cumulative log-probability, finished beams retire to a pool that
    /// always contains the greedy rollout, and the pool is ranked by
    /// length-normalized score with lexicographic token-id tie-breaks.
    pub fn beam_decode(
        &self,
        tape: &mut Tape,
        bound: &Binding,
        features: Var,
        beam: usize,
    ) -> Result<Hypothesis> {
        let mut pool = self.beam_decode_all(tape, bound, features, beam)?;
        Ok(pool.remove(0))
    }

    /// Every finished hypothesis the beam search produced, best first.
    /// The raw log-probabilities of the pool bound the greedy score from
    /// above regardless of which entry ranks first after normalization.
    pub fn beam_decode_all(
        &self,
        tape: &mut Tape,
        bound: &Binding,
        features: Var,
        beam: usize,
    ) -> Result<Vec<Hypothesis>> {
        if beam == 0 {
            return Err(Error::invalid("beam_decode", "beam width must be at least 1"));
        }
        let mut rng = rand::SeedableRng::seed_from_u64(0);
        let memory = self.encode(tape, bound, features, false, &mut rng)?;
        let limit = self.decode_limit(tape, memory);
        let greedy = self.greedy_from_memory(tape, bound, memory)?;
        let greedy_steps = greedy.ids.len() + usize::from(greedy.ids.len() + 1 < limit);
        let mut pool = vec![Finished { hyp: greedy, steps: greedy_steps }];

        let mut active: Vec<(Vec<usize>, f64)> = vec![(vec![SOS], 0.0)];
        while !active.is_empty() {
            let mut expansions: Vec<(Vec<usize>, f64)> = Vec::new();
            for (input, base) in &active {
                let lp = self.next_token_log_probs(tape, bound, memory, input)?;
                for (tok, tok_lp) in lp.iter().enumerate() {
                    let mut next = input.clone();
                    next.push(tok);
                    expansions.push((next, base + tok_lp));
                }
            }
            expansions.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            expansions.truncate(beam);
            active.clear();
            for (input, log_prob) in expansions {
                let steps = input.len() - 1;
                if *input.last().expect("expansion is nonempty") == EOS {
                    pool.push(Finished {
                        hyp: Hypothesis { ids: input[1..input.len() - 1].to_vec(), log_prob },
                        steps,
                    });
                } else if input.len() >= limit {
                    pool.push(Finished {
                        hyp: Hypothesis { ids: input[1..].to_vec(), log_prob },
                        steps,
                    });
                } else {
                    active.push((input, log_prob));
                }
            }
        }
        pool.sort_by(|a, b| {
            b.normalized()
                .total_cmp(&a.normalized())
                .then_with(|| a.hyp.ids.cmp(&b.hyp.ids))
        });
        Ok(pool.into_iter().map(|f| f.hyp).collect())
    }

    /// Raw log-probability of generating exactly `ids` (and, when asked,
    /// the closing end marker) under teacher forcing.
    pub fn score_sequence(
        &self,
        tape: &mut Tape,
        bound: &Binding,
        features: Var,
        ids: &[usize],
        include_eos: bool,
    ) -> Result<f64> {
        let mut rng = rand::SeedableRng::seed_from_u64(0);
        let memory = self.encode(tape, bound, features, false, &mut rng)?;
        let mut input = Vec::with_capacity(ids.len() + 1);
        input.push(SOS);
        input.extend_from_slice(ids);
        let logits = self.decoder_logits(tape, bound, memory, &input, false, &mut rng)?;
        let values = tape.value(logits).data.clone();
        let v = self.cfg.vocab;
        let mut labels = ids.to_vec();
        if include_eos {
            labels.push(EOS);
        }
        let mut total = 0.0;
        for (t, &label) in labels.iter().enumerate() {
            let row = log_softmax(&values[t * v..(t + 1) * v]);
            total += row[label];
        }
        Ok(total)
    }
}
