//! Prompt rendering for answer, verbal-confidence and top-k requests.

use crate::instance::OptionChoice;

pub const ANSWER_INSTRUCTION: &str = "Answer with the option letter only.";
pub const CONFIDENCE_INSTRUCTION: &str = "State your confidence 0–100.";

/// Question, enumerated options and the single-letter answer instruction.
pub fn render_mcq_prompt(question: &str, options: &[OptionChoice]) -> String {
    let mut s = String::with_capacity(question.len() + 32 * options.len());
    s.push_str(question.trim());
    s.push('\n');
    for o in options {
        s.push_str(&format!("{}) {}\n", o.label, o.text));
    }
    s.push_str(ANSWER_INSTRUCTION);
    s
}

/// Top-k elicitation: the model lists its `k` best options with probabilities.
pub fn render_topk_prompt(question: &str, options: &[OptionChoice], k: usize) -> String {
    let mut s = String::new();
    s.push_str(question.trim());
    s.push('\n');
    for o in options {
        s.push_str(&format!("{}) {}\n", o.label, o.text));
    }
    s.push_str(&format!(
        "Provide your {k} best guesses and the probability that each is correct (0.0 to 1.0). \
         List the top-{k} guesses one per line in the form `<option letter>: <probability>`."
    ));
    s
}
