use serde::{Deserialize, Serialize};

pub const TEMPLATE_VERSION: &str = "rulevqa-v1";

/// Substituted with the rule line in every template.
pub const RULE_LINE: &str = "{RULE_LINE}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyRule {
    pub rule_id: String,
    pub rule_line: String,
}

impl SafetyRule {
    /// Basic PPE on foot, the only rule with a prompt set.
    pub fn ppe() -> Self {
        Self {
            rule_id: "1".into(),
            rule_line: "Use of basic PPE when on foot at construction sites.".into(),
        }
    }
}

pub fn known_rules() -> Vec<SafetyRule> {
    vec![SafetyRule::ppe()]
}

pub fn find_rule(rule_id: &str) -> Option<SafetyRule> {
    known_rules().into_iter().find(|r| r.rule_id == rule_id.trim())
}

pub const PPE_TEMPLATES: [&str; 10] = [
    "In the image, is anyone not wearing basic PPE?\n{RULE_LINE}\nAnswer only: Yes or No.",
    "Is anyone in this image violating basic PPE?\n{RULE_LINE}\nAnswer only: Yes or No.",
    "Does the image show any person missing required PPE?\n{RULE_LINE}\nAnswer one word: Yes or No.",
    "Is there at least one PPE wearing violation in the image?\n{RULE_LINE}\nAnswer only: Yes or No.",
    "Are any people on foot not wearing basic PPE?\n{RULE_LINE}\nAnswer only Yes or No.",
    "Check all visible people on the image for wearing the basic PPE.\n{RULE_LINE}\nAny violation present?\nAnswer only: Yes or No.",
    "Scan left-to-right: any person without basic PPE?\n{RULE_LINE}\nAnswer only: Yes or No.",
    "Evaluate PPE compliance for people in the image.\n{RULE_LINE}\nAny violation? \nAnswer only: Yes or No.",
    "Check the image carefully and answer if anyone is not wearing basic PPE.\n{RULE_LINE}\nIs there a violation? \nAnswer only: Yes or No.",
    "Your task is to check whether any worker in the construction site is missing basic PPE.\n{RULE_LINE}\nAnswer only: Yes or No.",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub rule: SafetyRule,
    pub templates: Vec<String>,
}

impl PromptSet {
    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// Prompt `index`, counting from 1.
    pub fn prompt(&self, index: usize) -> Option<String> {
        index
            .checked_sub(1)
            .and_then(|i| self.templates.get(i))
            .map(|t| t.replace(RULE_LINE, &self.rule.rule_line))
    }

    pub fn prompts(&self) -> Vec<String> {
        (1..=self.len()).filter_map(|i| self.prompt(i)).collect()
    }
}

pub fn build_prompt_set(rule: &SafetyRule) -> PromptSet {
    PromptSet {
        rule: rule.clone(),
        templates: PPE_TEMPLATES.iter().map(|t| t.to_string()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "answer", content = "raw")]
pub enum AnswerOutcome {
    Yes,
    No,
    Invalid(String),
}

/// First word decides; failing that, a reply mentioning exactly one of the
/// standalone words yes/no counts as that word.
pub fn normalize_answer(raw: &str) -> AnswerOutcome {
    let words: Vec<String> = raw
        .split(|c: char| !c.is_alphanumeric() && c != '\'')
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    match words.first().map(String::as_str) {
        Some("yes") => return AnswerOutcome::Yes,
        Some("no") => return AnswerOutcome::No,
        _ => {}
    }
    let has_yes = words.iter().any(|w| w == "yes");
    let has_no = words.iter().any(|w| w == "no");
    match (has_yes, has_no) {
        (true, false) => AnswerOutcome::Yes,
        (false, true) => AnswerOutcome::No,
        _ => AnswerOutcome::Invalid(raw.to_string()),
    }
}
