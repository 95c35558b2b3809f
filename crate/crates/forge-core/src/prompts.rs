//! Prompt templates for the model-judged stages.
//!
//! These texts are operational contracts: quality filtering, exercise
//! extraction, and both reward-model judgments were tuned against exactly
//! this wording, so they are embedded verbatim (idiosyncrasies included) and
//! must not be reflowed or paraphrased. Placeholders (`<EXAMPLE>`,
//! `<MATERIAL>`, `<QUESTION>`, `<REFERENCE>`, `<PROPOSAL>`, `<INCORRECT>`)
//! are substituted by the `fill_*` helpers.

/// Additive 0–5 quality scale for raw text extracts. Fields: Justification,
/// Score. Extracts scoring at or above the configured threshold are kept.
pub const QUALITY_FILTER_PROMPT: &str = "\
Below is an extract from a text book. Evaluate whether the book has a high financial value and could be useful in an financial setting for teaching financial students using the additive scoring system described below. Points are accumulated strictly based on the satisfaction of each criterion:

- Add 1 point if the extract provides educational value for financial students whose goal is to learn financial concepts or take financial exams. It is acceptable if quizzes are not included; however, if quizzes are present, detailed solutions and explanations must also be provided.
- Add another point if the extract addresses certain elements pertinent to finance and aligns closely with financial standards. It might offer a superficial overview of potentially useful topics or present information in a disorganized manner and incoherent writing style.
- Award a third point if the extract is appropriate for financial use and introduces key concepts relevant to financial curricula. It is coherent and comprehensive.
- Grant a fourth point if the extract is highly relevant and beneficial for financial learning purposes for a level not higher than financial students, exhibiting a clear and consistent writing style. It offers substantial financial content, including exercises and solutions, with minimal irrelevant information, and the concepts aren't too advanced for financial students. The content is coherent, focused, and valuable for structured learning.
- Bestow a fifth point if the extract is outstanding in its financial value, perfectly suited for teaching either at financial students. It follows detailed reasoning, the writing style is easy to follow and offers profound and thorough insights into the subject matter, devoid of any non-financial or complex content.

The extract: <EXAMPLE>.

After examining the extract, You will output a json object containing the following 2 fields:
{
    \"Justification\": string // Briefly justify your total score, up to 100 words.

    \"Score\": integer // Conclude with the score
}";

/// Exercise extraction from book material. Fields: Justification, Questions,
/// Scenario, Exhibit, Answer Choices, Answer — five parallel lists plus the
/// justification; missing parts carry the literal "N/A".
pub const EXERCISE_EXTRACTION_PROMPT: &str = "\
You are an educational assistant aims to extract all questions from the provided material. Look for specific indicators such as \"example,\" \"quiz,\" \"questions,\" or similar terms to identify where the questions are located. If the material includes scenarios or exhibits, must include all details related to them. Do not create or derive any questions or come up with content on your own\u{2014}strictly extract what is present in the material. Make sure no question is missed. If one scenario or exhibits corresponds to multiple questions, duplicate the scenarios and exhitbits so that the number of questions match the number of scenarios and exhibits.

The material: <MATERIAL>.

After performing these tasks, You will output a json object containing the following fields:
{
  \"Justification\": \"string\", // A brief justification for your extractions,  up to 100 words.

  \"Questions\": \"string\", // A list of questions extracted from the material. Only extract the exact questions presented in the text.

  \"Scenario\": \"string\", // A list of scenarios corresponding to the above questions.  If the material does not provide the scenario place \"N/A.\"  Do not do any derivation or reference, must output the exact same, detailed and complete scenarios. The scenario may contain multiple paragraphs or even splited by the exhibits, combine them into one string. The scenario can be long, you may modify it to make it shorter,  but must not change its meaning.

  \"Exhibit\": \"string\", // A list of exhibits or tables corresponding to the above questions. If the material does not provide the exhibit, place \"N/A.\" Do not do any summary, or derivation or cutting,  must output the exact same, detailed and complete exibits. There may be multiple exhibits involved in a scenario, combine them into one string. The exhibit can be long, you may modify it to make it shorter. Must keep the table format

  \"Answer Choices\": \"string\", // A list of answer choices corresponding to the above questions. If the material does not provide answer choices, place \"N/A.\"

  \"Answer\": \"string\" // A list of answers corresponding to the above questions. Answers should only be included if provided in the material. If no answer is given, place \"N/A.\" If explanations or reasoning steps or equations are included, must capture all of them. Must not answer it yourself if there is no answer provided in the material. Make sure the final number of questions equals to number of scenario equals to number of exhibits equals to number of answers
}";

/// Final-answer judgment for sampled trajectories. Fields: Justification,
/// Correctness ('correct' / 'wrong').
pub const FINAL_ANSWER_JUDGE_PROMPT: &str = "\
You given a question, a reference answer and a proposed answer, you task is to determine the correctness of the proposed answer. First, extract the final answer (for example, A, B or C) from the reference answer. Second, extract the final answer from the proposed answer (for example, A, B or C). Finally, compare the two final answer to determine the correctness. Do not do any extra reasoning, must determine the correctness soley based on the given reference and proposed answer.

Question: <QUESTION>
Reference Answer: <REFERENCE>
Proposed Answer: <PROPOSAL>

After performing these tasks, You will output a json object containing the following fields:
{
  \"Justification\": \"string\", // A brief justification for your output, up to 100 words.

  \"Correctness\": \"string\", // If the proposed answer has the same final final answer as the reference answer (for example, both choose A or have the same answer),  output 'correct'.  Put 'wrong' to all other cases. For example, if the proposed answer has a different final answer comparing to the reference answer, put 'wrong'. If the proposed answer does not explicitly give a final answer to the question, put 'wrong'. If the proposed answer gives more than one final answer to the question, put 'wrong'.
}";

/// First-error localization for incorrect trajectories. Fields:
/// Justification, First incorrect step, Reasoning up to incorrect,
/// Step correction.
pub const STEP_CORRECTION_JUDGE_PROMPT: &str = "\
Given a question, a reference answer and an incorrect answer, you task is to identify the first incorrect step from the incorrect answer. The \"first incorrect step\" means all reasoning up to that point is accurate, but the error begins at this specific step.

Question: <QUESTION>
Reference Answer: <REFERENCE>
Incorrect Answer: <INCORRECT>

After performing these tasks, You will output a json object containing the following fields:
{
  \"Justification\": \"string\", // A brief justification for your output, up to 100 words. You need to explain (1) why the identified first incorrect step is incorrect; (2) why the reasoning up to this specific step is correct and (3) how the corrected step resolves the issue, aligning with the reference answer, maintaining the logical flow and progressing to the final answer.

  \"First incorrect step\": \"string\", // The explanation in the incorrect answer consists of multiple reasoning steps. Please identify the first incorrect reasoning step. It should be a piece of text directly and exactly quoted from the incorrect answer. It should be an intermediate step rather than the final answer

  \"Reasoning up to incorrect\": \"string\", // From the incorrect answer, give the correct reasoning steps up to the first incorrect step. This should be directly and exactly quoted from the incorrect answer.

  \"Step correction\": \"string\", //  Replace the identified incorrect step with a single, clear, and correct step. This step should directly address and correct the error, explicitly providing the correct reasoning without requring for more information or challenging the question. It should effectively answer the question, \"What is the next reasoning step?\" given on the question and the identied \"Reasoning up tp incorrect\". It should help progress to the final answer.
}";

/// Required JSON fields of each template's reply, in template order.
pub const QUALITY_FILTER_FIELDS: &[&str] = &["Justification", "Score"];
pub const EXERCISE_EXTRACTION_FIELDS: &[&str] = &[
    "Justification",
    "Questions",
    "Scenario",
    "Exhibit",
    "Answer Choices",
    "Answer",
];
pub const FINAL_ANSWER_JUDGE_FIELDS: &[&str] = &["Justification", "Correctness"];
pub const STEP_CORRECTION_JUDGE_FIELDS: &[&str] = &[
    "Justification",
    "First incorrect step",
    "Reasoning up to incorrect",
    "Step correction",
];

/// Quality-filter prompt for one text extract.
pub fn fill_quality_filter(extract: &str) -> String {
    QUALITY_FILTER_PROMPT.replace("<EXAMPLE>", extract)
}

/// Exercise-extraction prompt for one chunk of book material.
pub fn fill_exercise_extraction(material: &str) -> String {
    EXERCISE_EXTRACTION_PROMPT.replace("<MATERIAL>", material)
}

/// Final-answer judgment prompt for one (question, reference, proposal).
pub fn fill_final_answer_judge(question: &str, reference: &str, proposal: &str) -> String {
    FINAL_ANSWER_JUDGE_PROMPT
        .replace("<QUESTION>", question)
        .replace("<REFERENCE>", reference)
        .replace("<PROPOSAL>", proposal)
}

/// First-error prompt for one (question, reference, incorrect answer).
pub fn fill_step_correction_judge(question: &str, reference: &str, incorrect: &str) -> String {
    STEP_CORRECTION_JUDGE_PROMPT
        .replace("<QUESTION>", question)
        .replace("<REFERENCE>", reference)
        .replace("<INCORRECT>", incorrect)
}
