//! Chat messages in the common chat-completions wire shape, the three game
//! tools, and translation of tool calls into game actions.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::game::{prize_index, prize_letter, Action, CellRef, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionCall {
    pub name: String,
    /// JSON-encoded arguments, as sent by the model.
    pub arguments: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    #[serde(rename = "type", default = "function_type")]
    pub kind: String,
    pub function: FunctionCall,
}

fn function_type() -> String {
    "function".to_string()
}

impl ToolCall {
    pub fn new(id: impl Into<String>, name: impl Into<String>, arguments: Value) -> Self {
        ToolCall {
            id: id.into(),
            kind: function_type(),
            function: FunctionCall { name: name.into(), arguments: arguments.to_string() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    /// Text content; assistant turns that only call tools may have none.
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    fn text(role: Role, content: impl Into<String>) -> Self {
        ChatMessage { role, content: Some(content.into()), tool_calls: Vec::new(), tool_call_id: None }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::text(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::text(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::text(Role::Assistant, content)
    }

    pub fn assistant_tool_calls(content: Option<String>, tool_calls: Vec<ToolCall>) -> Self {
        ChatMessage { role: Role::Assistant, content, tool_calls, tool_call_id: None }
    }

    pub fn tool_result(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Tool,
            content: Some(content.into()),
            tool_calls: Vec::new(),
            tool_call_id: Some(call_id.into()),
        }
    }

    pub fn content_str(&self) -> &str {
        self.content.as_deref().unwrap_or("")
    }
}

/// Checks that every tool message answers a tool call made earlier.
pub fn check_tool_references(messages: &[ChatMessage]) -> Result<(), String> {
    let mut open: Vec<&str> = Vec::new();
    for (i, m) in messages.iter().enumerate() {
        open.extend(m.tool_calls.iter().map(|c| c.id.as_str()));
        if m.role == Role::Tool {
            let id = m.tool_call_id.as_deref().ok_or_else(|| format!("tool message {i} has no call id"))?;
            if !open.contains(&id) {
                return Err(format!("tool message {i} answers unknown call {id:?}"));
            }
        }
    }
    Ok(())
}

/// The reveal / select / default tools, with enums for the visible grid.
pub fn tool_schemas(n_prizes: usize, n_baskets: usize) -> Vec<Value> {
    let prizes: Vec<String> = (0..n_prizes).map(|p| prize_letter(p).to_string()).collect();
    let baskets: Vec<usize> = (1..=n_baskets).collect();
    vec![
        json!({
            "type": "function",
            "function": {
                "name": "reveal",
                "strict": true,
                "description": "Call this whenever you choose to reveal the value of a box.",
                "parameters": {
                    "type": "object",
                    "properties": {
                        "prize": {
                            "type": "string",
                            "enum": prizes,
                            "description": "The prize's letter corresponding to the box.",
                        },
                        "basket": {
                            "type": "integer",
                            "enum": baskets,
                            "description": "The basket's number corresponding to the box.",
                        },
                    },
                    "required": ["prize", "basket"],
                    "additionalProperties": false,
                },
            }
        }),
        json!({
            "type": "function",
            "function": {
                "name": "select",
                "strict": true,
                "description": "Call this whenever you choose to select a basket.",
                "parameters": {
                    "type": "object",
                    "properties": {
                        "basket": {
                            "type": "integer",
                            "enum": baskets,
                            "description": "The basket's number.",
                        },
                    },
                    "required": ["basket"],
                    "additionalProperties": false,
                },
            }
        }),
        json!({
            "type": "function",
            "function": {
                "name": "default",
                "strict": true,
                "description": "Call this to accept or decline the default basket.",
                "parameters": {
                    "type": "object",
                    "properties": {
                        "decision": {
                            "type": "boolean",
                            "description": "Accept or decline the default basket.",
                        },
                    },
                    "required": ["decision"],
                    "additionalProperties": false,
                },
            }
        }),
    ]
}

/// Tool schemas for what the player currently sees.
pub fn tools_for(obs: &Observation) -> Vec<Value> {
    tool_schemas(obs.n_prizes(), obs.visible_baskets())
}

fn basket_arg(args: &Value, n_baskets: usize) -> Result<usize, String> {
    let raw = args.get("basket").ok_or("missing argument \"basket\"")?;
    let n = raw
        .as_u64()
        .or_else(|| raw.as_str().and_then(|s| s.trim().parse().ok()))
        .ok_or_else(|| format!("basket must be an integer between 1 and {n_baskets}, got {raw}"))?;
    if n == 0 || n as usize > n_baskets {
        return Err(format!("basket must be an integer between 1 and {n_baskets}, got {n}"));
    }
    Ok(n as usize - 1)
}

/// Converts a tool call into an action for the observed game. The error
/// message is meant to be sent back to the model as the tool result.
pub fn parse_tool_call(call: &FunctionCall, obs: &Observation) -> Result<Action, String> {
    let args: Value = if call.arguments.trim().is_empty() {
        json!({})
    } else {
        serde_json::from_str(&call.arguments).map_err(|e| format!("arguments are not valid JSON: {e}"))?
    };
    if !args.is_object() {
        return Err("arguments must be a JSON object".into());
    }
    let n_baskets = obs.visible_baskets();
    match call.function_name() {
        "reveal" => {
            let letters: Vec<String> = (0..obs.n_prizes()).map(|p| prize_letter(p).to_string()).collect();
            let prize = args
                .get("prize")
                .and_then(Value::as_str)
                .and_then(prize_index)
                .filter(|&p| p < obs.n_prizes())
                .ok_or_else(|| format!("prize must be one of {}", letters.join(", ")))?;
            let basket = basket_arg(&args, n_baskets)?;
            Ok(Action::Reveal { cell: CellRef::new(prize, basket) })
        }
        "select" => Ok(Action::Select { basket: basket_arg(&args, n_baskets)? }),
        "default" => {
            let accept = args
                .get("decision")
                .and_then(Value::as_bool)
                .ok_or("decision must be true (accept) or false (decline)")?;
            Ok(Action::DefaultDecision { accept })
        }
        other => Err(format!("unknown tool {other:?}; use reveal, select or default")),
    }
}

impl FunctionCall {
    fn function_name(&self) -> &str {
        self.name.trim()
    }
}

/// The tool call a model would make for `action` (used to render examples
/// and to script mock transports).
pub fn action_call(action: Action) -> (String, Value) {
    match action {
        Action::Reveal { cell } => (
            "reveal".into(),
            json!({"prize": prize_letter(cell.prize).to_string(), "basket": cell.basket + 1}),
        ),
        Action::Select { basket } => ("select".into(), json!({"basket": basket + 1})),
        Action::DefaultDecision { accept } => ("default".into(), json!({"decision": accept})),
    }
}
