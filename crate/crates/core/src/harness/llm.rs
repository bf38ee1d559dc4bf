//! The language-model participant: prompts, quiz loop and the tool-calling
//! trial loop.
//!
//! A session's instructions, optional few-shot examples and quiz exchange
//! form a preamble. Every trial then runs as its own conversation that
//! starts from that preamble, which keeps context bounded over hundreds of
//! trials.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::agents::{Agent, PlayResult, SessionStart, TrialContext};
use super::chat::{parse_tool_call, tools_for, ChatMessage};
use super::protocol::{grade, parse_quiz_answers, Protocol};
use super::transport::{ChatRequest, ChatTransport, TokenUsage, TransportError};
use super::HarnessError;
use crate::experiment::{Condition, Experiment};
use crate::game::{render_final, render_table, Event, TrialState};
use crate::nudge::NudgeVariant;
use crate::record::{AgentKind, AgentSummary};

pub const DEFAULT_TEMPERATURE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub model: String,
    pub temperature: f64,
    pub condition: Condition,
    /// Model requests allowed per trial; at least cells + 3 is enforced.
    pub max_turns: Option<usize>,
    pub quiz_attempts: usize,
    /// Consecutive malformed or illegal tool calls before a trial is aborted.
    pub max_malformed: usize,
    /// Consecutive replies without a tool call before a trial is aborted.
    pub max_reprompts: usize,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            model: String::new(),
            temperature: DEFAULT_TEMPERATURE,
            condition: Condition::Base,
            max_turns: None,
            quiz_attempts: 3,
            max_malformed: 3,
            max_reprompts: 3,
        }
    }
}

impl LlmConfig {
    pub fn new(model: impl Into<String>, condition: Condition) -> Self {
        LlmConfig { model: model.into(), condition, ..Self::default() }
    }

    pub fn turn_limit(&self, n_cells: usize) -> usize {
        let floor = n_cells + 3;
        self.max_turns.unwrap_or(floor + self.max_malformed + self.max_reprompts).max(floor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuizResult {
    pub attempts: usize,
    pub passed: bool,
    /// Parsed answer per question, for each attempt.
    pub answers: Vec<Vec<Option<String>>>,
}

/// Messages exchanged for one trial (or for the session preamble when
/// `trial_index` is `None`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTranscript {
    #[serde(default)]
    pub id: String,
    pub trial_index: Option<usize>,
    pub messages: Vec<ChatMessage>,
    pub usage: TokenUsage,
    pub requests: usize,
}

impl AgentTranscript {
    pub fn assistant_turns(&self) -> impl Iterator<Item = &ChatMessage> {
        self.messages.iter().filter(|m| m.role == super::chat::Role::Assistant)
    }
}

/// A running chat: accumulates messages and token usage.
pub struct Conversation<'a> {
    transport: &'a dyn ChatTransport,
    model: &'a str,
    temperature: f64,
    pub messages: Vec<ChatMessage>,
    pub usage: TokenUsage,
    pub requests: usize,
}

impl<'a> Conversation<'a> {
    pub fn new(transport: &'a dyn ChatTransport, config: &'a LlmConfig, messages: Vec<ChatMessage>) -> Self {
        Conversation {
            transport,
            model: &config.model,
            temperature: config.temperature,
            messages,
            usage: TokenUsage::default(),
            requests: 0,
        }
    }

    pub fn push(&mut self, message: ChatMessage) {
        self.messages.push(message);
    }

    /// Sends the conversation and appends the reply.
    pub fn send(&mut self, tools: &[Value]) -> Result<ChatMessage, TransportError> {
        let request = ChatRequest {
            model: self.model.to_string(),
            messages: self.messages.clone(),
            tools: tools.to_vec(),
            temperature: self.temperature,
        };
        self.requests += 1;
        let response = self.transport.complete(&request)?;
        self.usage += response.usage;
        self.messages.push(response.message.clone());
        Ok(response.message)
    }

    fn transcript(&self, from: usize, trial_index: Option<usize>) -> AgentTranscript {
        AgentTranscript {
            id: String::new(),
            trial_index,
            messages: self.messages[from..].to_vec(),
            usage: self.usage,
            requests: self.requests,
        }
    }
}

/// Opening messages of a session: instructions, then (few-shot only) the
/// example games.
pub fn build_prompts(
    protocol: &Protocol,
    experiment: Experiment,
    condition: Condition,
    fewshot: Option<&[String]>,
) -> Result<Vec<ChatMessage>, HarnessError> {
    if fewshot.is_some() != (condition == Condition::FewShot) {
        return Err(HarnessError::FewShotMismatch);
    }
    let mut messages = vec![ChatMessage::system(protocol.experiment(experiment).instructions.clone())];
    if let Some(examples) = fewshot {
        messages.push(ChatMessage::user(protocol.fewshot_intro.clone()));
        for (i, example) in examples.iter().enumerate() {
            messages.push(ChatMessage::user(format!("Example game {}:\n\n{example}", i + 1)));
        }
    }
    Ok(messages)
}

/// Poses the quiz, re-sending the failure info and the quiz after each
/// failed attempt but the last.
pub fn quiz_loop(
    conversation: &mut Conversation<'_>,
    protocol: &Protocol,
    experiment: Experiment,
    max_attempts: usize,
) -> Result<QuizResult, TransportError> {
    let texts = protocol.experiment(experiment);
    let prompt = format!("{}\n\n{}", protocol.quiz_text(experiment), protocol.quiz_format);
    conversation.push(ChatMessage::user(prompt.clone()));
    let mut result = QuizResult { attempts: 0, passed: false, answers: Vec::new() };
    let max_attempts = max_attempts.max(1);
    while result.attempts < max_attempts {
        result.attempts += 1;
        let reply = conversation.send(&[])?;
        let answers = parse_quiz_answers(reply.content_str(), &texts.quiz);
        result.passed = grade(&texts.quiz, &answers).iter().all(|&ok| ok);
        result.answers.push(answers);
        if result.passed {
            break;
        }
        if result.attempts < max_attempts {
            conversation.push(ChatMessage::user(format!("{}\n\n{prompt}", texts.quiz_failure)));
        }
    }
    Ok(result)
}

/// Plays through a chat-completion transport using tool calls.
#[derive(Clone)]
pub struct LlmAgent {
    transport: Arc<dyn ChatTransport>,
    config: LlmConfig,
    protocol: Arc<Protocol>,
    fewshot: Option<Vec<String>>,
    preamble: Vec<ChatMessage>,
    quiz: Option<QuizResult>,
}

impl LlmAgent {
    pub fn new(transport: Arc<dyn ChatTransport>, config: LlmConfig) -> Self {
        LlmAgent {
            transport,
            config,
            protocol: Arc::new(Protocol::builtin().clone()),
            fewshot: None,
            preamble: Vec::new(),
            quiz: None,
        }
    }

    pub fn with_protocol(mut self, protocol: Protocol) -> Self {
        self.protocol = Arc::new(protocol);
        self
    }

    /// Rendered example games for the few-shot condition.
    pub fn with_fewshot(mut self, examples: Vec<String>) -> Self {
        self.fewshot = Some(examples);
        self
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    pub fn quiz(&self) -> Option<&QuizResult> {
        self.quiz.as_ref()
    }

    fn decision(&self, text: String) -> String {
        if self.config.condition == Condition::Cot {
            format!("{text}\n\n{}", self.protocol.cot_directive)
        } else {
            text
        }
    }

    fn opening(&self, ctx: &TrialContext<'_>, state: &TrialState) -> String {
        let texts = self.protocol.experiment(ctx.spec.experiment);
        let mut out = String::new();
        if ctx.first_in_phase {
            out.push_str(if ctx.spec.practice { &texts.practice } else { &texts.test });
            out.push_str("\n\n");
        }
        if let Some(basket) = state.default_offer() {
            out.push_str(&self.protocol.default_offer_text(basket));
            out.push_str("\n\n");
        } else if let (NudgeVariant::SuggestionEarly, Some(s)) = (state.nudge().variant, state.visible_suggestion()) {
            out.push_str(&self.protocol.suggestion_text(s));
            out.push_str("\n\n");
        }
        out.push_str(&render_table(state));
        self.decision(out)
    }

    fn after_event(&self, state: &TrialState, event: Event) -> Result<String, HarnessError> {
        if state.is_done() {
            return Ok(render_final(state)?);
        }
        let table = render_table(state);
        Ok(self.decision(match (event, state.visible_suggestion()) {
            (Event::SuggestionShown { .. }, Some(s)) => format!("{}\n\n{table}", self.protocol.suggestion_text(s)),
            _ => table,
        }))
    }
}

impl Agent for LlmAgent {
    fn summary(&self) -> AgentSummary {
        AgentSummary {
            kind: AgentKind::Llm,
            model_name: Some(self.config.model.clone()),
            condition: self.config.condition,
            temperature: Some(self.config.temperature),
        }
    }

    fn begin_session(&mut self, experiment: Experiment) -> Result<SessionStart, HarnessError> {
        let messages = build_prompts(&self.protocol, experiment, self.config.condition, self.fewshot.as_deref())?;
        let mut conversation = Conversation::new(self.transport.as_ref(), &self.config, messages);
        let quiz = quiz_loop(&mut conversation, &self.protocol, experiment, self.config.quiz_attempts)?;
        let transcript = conversation.transcript(0, None);
        self.preamble = conversation.messages;
        self.quiz = Some(quiz.clone());
        Ok(SessionStart { quiz: Some(quiz), transcript: Some(transcript) })
    }

    fn fork(&self) -> Box<dyn Agent> {
        Box::new(self.clone())
    }

    fn play(&mut self, ctx: &TrialContext<'_>, mut state: TrialState) -> Result<PlayResult, HarnessError> {
        let mut flags = Vec::new();
        if self.quiz.as_ref().is_some_and(|q| !q.passed) {
            flags.push("quiz_failed".to_string());
        }
        let mut conversation = Conversation::new(self.transport.as_ref(), &self.config, self.preamble.clone());
        let start = conversation.messages.len();
        conversation.push(ChatMessage::user(self.opening(ctx, &state)));

        let limit = self.config.turn_limit(state.game().config.n_cells());
        let (mut malformed, mut reprompts) = (0, 0);
        while !state.is_done() {
            if conversation.requests >= limit {
                flags.push("max_turns".to_string());
                break;
            }
            let obs = state.observation();
            let reply = match conversation.send(&tools_for(&obs)) {
                Ok(reply) => reply,
                Err(TransportError::ContextLength(msg)) => {
                    log::warn!("context length exceeded: {msg}");
                    flags.push("context_length".to_string());
                    break;
                }
                Err(e) => {
                    flags.push(format!("transport_error: {e}"));
                    break;
                }
            };
            let Some(call) = reply.tool_calls.first() else {
                reprompts += 1;
                if reprompts > self.config.max_reprompts {
                    flags.push("no_tool_call".to_string());
                    break;
                }
                conversation.push(ChatMessage::user(self.protocol.tool_required.clone()));
                continue;
            };
            reprompts = 0;
            let applied = parse_tool_call(&call.function, &obs)
                .and_then(|action| state.apply(action).map_err(|e| e.to_string()));
            let content = match applied {
                Ok(event) => {
                    malformed = 0;
                    self.after_event(&state, event)?
                }
                Err(msg) => {
                    malformed += 1;
                    self.decision(format!("Error: {msg}"))
                }
            };
            conversation.push(ChatMessage::tool_result(call.id.clone(), content));
            for extra in &reply.tool_calls[1..] {
                conversation.push(ChatMessage::tool_result(
                    extra.id.clone(),
                    "Ignored: only the first tool call of a turn is carried out.",
                ));
            }
            if malformed >= self.config.max_malformed {
                flags.push("malformed_tool_calls".to_string());
                break;
            }
        }
        let transcript = conversation.transcript(start, Some(ctx.spec.trial_index));
        Ok(PlayResult { state, transcript: Some(transcript), flags })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::transport::{ChatResponse, ScriptedTransport};

    #[test]
    fn prompts_follow_condition() {
        let p = Protocol::builtin();
        let base = build_prompts(p, Experiment::Default, Condition::Base, None).unwrap();
        assert_eq!(base.len(), 1);
        assert!(base[0].content_str().ends_with("30 points equal to $0.01."));
        let examples: Vec<String> = (0..12).map(|i| format!("game {i}")).collect();
        let few = build_prompts(p, Experiment::Default, Condition::FewShot, Some(&examples)).unwrap();
        assert_eq!(few.iter().filter(|m| m.content_str().starts_with("Example game")).count(), 12);
        assert!(build_prompts(p, Experiment::Default, Condition::Base, Some(&examples)).is_err());
        assert!(build_prompts(p, Experiment::Default, Condition::FewShot, None).is_err());
    }

    #[test]
    fn quiz_passes_first_time_with_key() {
        let p = Protocol::builtin();
        let key: Vec<String> =
            p.experiment(Experiment::Default).quiz.iter().enumerate().map(|(i, q)| format!("{}. {}", i + 1, q.answer)).collect();
        let t = ScriptedTransport::new([Ok(ChatResponse::text(key.join("\n")))]);
        let config = LlmConfig::default();
        let mut c = Conversation::new(&t, &config, build_prompts(p, Experiment::Default, Condition::Base, None).unwrap());
        let r = quiz_loop(&mut c, p, Experiment::Default, 3).unwrap();
        assert!(r.passed);
        assert_eq!(r.attempts, 1);
    }

    #[test]
    fn quiz_gives_up_after_limit() {
        let p = Protocol::builtin();
        let t = ScriptedTransport::new((0..3).map(|_| Ok(ChatResponse::text("I am not sure."))));
        let config = LlmConfig::default();
        let mut c = Conversation::new(&t, &config, Vec::new());
        let r = quiz_loop(&mut c, p, Experiment::Highlight, 3).unwrap();
        assert!(!r.passed);
        assert_eq!(r.attempts, 3);
        let failure = &p.experiment(Experiment::Highlight).quiz_failure;
        assert_eq!(c.messages.iter().filter(|m| m.content_str().starts_with(failure.as_str())).count(), 2);
    }
}
