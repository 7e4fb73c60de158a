use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng;

use super::{RoundConfig, SelfInstructError, SelfInstructTask, NO_INPUT};
use crate::corpus::LanguageTag;

/// Requirements block of the generation prompt. `{total}` is the number of
/// demonstrations plus requested tasks and `{language}` the target
/// language name.
pub const PROMPT_HEADER: &str = "You are asked to come up with a set of {total} diverse task instructions. These task instructions will be given to a GPT model and we will evaluate the GPT model for completing the instructions.

Here are the requirements:
1. Try not to repeat the verb for each instruction to maximize diversity.
2. The language used for the instruction also should be diverse. For example, you should combine questions with imperative instructions.
3. The type of instructions should be diverse. The list should include diverse types of tasks like open-ended generation, classification, editing, etc.
4. A GPT language model should be able to complete the instruction. For example, do not ask the assistant to create any visual or audio output. For another example, do not ask the assistant to wake you up at 5pm or set a reminder because it cannot perform any action.
5. The instructions should be in {language}.
6. The instructions should be 1 to 2 sentences long. Either an imperative sentence or a question is permitted.
7. You should generate an appropriate input to the instruction. The input field should contain a specific example provided for the instruction. It should involve realistic data and should not contain simple placeholders. The input should provide substantial content to make the instruction challenging but should ideally not exceed 100 words.
8. Not all instructions require input. For example, when an instruction asks about some general information, \"what is the highest peak in the world\", it is not necessary to provide a specific context. In this case, we simply put \"<noinput>\" in the input field.
9. The output should be an appropriate response to the instruction and the input. Make sure the output is less than 200 words.
";

/// Picks demonstrations and renders the generation prompt.
///
/// `cfg.seed_demos` come from `seeds`; `cfg.pool_demos` come from `pool`,
/// topped up from the remaining seeds while the pool is too small.
pub fn build_prompt<R: Rng>(
    lang: LanguageTag,
    seeds: &[SelfInstructTask],
    pool: &[SelfInstructTask],
    cfg: &RoundConfig,
    rng: &mut R,
) -> Result<String, SelfInstructError> {
    let from_pool = if pool.len() >= cfg.pool_demos { cfg.pool_demos } else { 0 };
    let from_seeds = cfg.seed_demos + cfg.pool_demos - from_pool;
    if seeds.len() < from_seeds {
        return Err(SelfInstructError::InsufficientSeeds {
            lang: lang.code().into(),
            have: seeds.len(),
            need: from_seeds,
        });
    }
    let mut demos: Vec<&SelfInstructTask> =
        sample(rng, seeds.len(), from_seeds).into_iter().map(|i| &seeds[i]).collect();
    demos.extend(sample(rng, pool.len(), from_pool).into_iter().map(|i| &pool[i]));

    let n = demos.len();
    let mut out =
        PROMPT_HEADER.replace("{total}", &(n + cfg.tasks_per_prompt).to_string()).replace("{language}", lang.name());
    let _ = write!(out, "\nThere are {n} examples.\n\n");
    for (i, d) in demos.iter().enumerate() {
        let k = i + 1;
        let input = if d.has_input() { d.input.trim() } else { NO_INPUT };
        let _ = write!(
            out,
            "{k}. Instruction: {}\n{k}. Input:\n{input}\n{k}. Output:\n{}\n\n",
            d.instruction.trim(),
            d.output.trim()
        );
    }
    let _ = writeln!(
        out,
        "Please generate the following {} tasks that are similar to the above examples.",
        cfg.tasks_per_prompt
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tasks(prefix: &str, n: usize) -> Vec<SelfInstructTask> {
        (0..n)
            .map(|i| SelfInstructTask::new(LanguageTag::Fr, &format!("{prefix} instruction {i}"), NO_INPUT, "sortie"))
            .collect()
    }

    #[test]
    fn first_round_uses_three_seeds() {
        let seeds = tasks("seed", 5);
        let p = build_prompt(LanguageTag::Fr, &seeds, &[], &RoundConfig::default(), &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(p.matches("seed instruction").count(), 3);
        assert!(p.contains("The instructions should be in French."));
        assert!(p.starts_with("You are asked to come up with a set of 20 diverse task instructions."));
        assert!(p.contains("There are 3 examples.\n\n1. Instruction: "));
        assert!(p.ends_with("Please generate the following 17 tasks that are similar to the above examples.\n"));
    }

    #[test]
    fn later_rounds_take_one_pool_demo() {
        let seeds = tasks("seed", 5);
        let pool = tasks("pool", 4);
        let p =
            build_prompt(LanguageTag::Fr, &seeds, &pool, &RoundConfig::default(), &mut ChaCha8Rng::seed_from_u64(1))
                .unwrap();
        assert_eq!(p.matches("seed instruction").count(), 2);
        assert_eq!(p.matches("pool instruction").count(), 1);
        assert!(p.contains("3. Instruction: pool instruction"));
    }

    #[test]
    fn deterministic_for_fixed_rng() {
        let seeds = tasks("seed", 30);
        let cfg = RoundConfig::default();
        let a = build_prompt(LanguageTag::Fr, &seeds, &[], &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = build_prompt(LanguageTag::Fr, &seeds, &[], &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_seeds() {
        let err = build_prompt(
            LanguageTag::Fr,
            &tasks("s", 2),
            &[],
            &RoundConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert!(matches!(err, Err(SelfInstructError::InsufficientSeeds { have: 2, need: 3, .. })));
    }
}
