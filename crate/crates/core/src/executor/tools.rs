use std::collections::BTreeMap;
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

pub type Args = Map<String, Value>;

pub const DEFAULT_TIMEOUT_MS: u64 = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldType {
    String,
    Integer,
    Number,
    Boolean,
    Array,
    Object,
}

impl FieldType {
    fn accepts(self, v: &Value) -> bool {
        match self {
            FieldType::String => v.is_string(),
            FieldType::Integer => v.is_i64() || v.is_u64(),
            FieldType::Number => v.is_number(),
            FieldType::Boolean => v.is_boolean(),
            FieldType::Array => v.is_array(),
            FieldType::Object => v.is_object(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    #[serde(rename = "type")]
    pub ty: FieldType,
    #[serde(default)]
    pub required: bool,
}

/// Flat object schema: every field typed, unknown fields rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema(pub BTreeMap<String, FieldSpec>);

impl Schema {
    pub fn validate(&self, obj: &Args) -> Result<(), String> {
        for (name, spec) in &self.0 {
            match obj.get(name) {
                None | Some(Value::Null) if spec.required => {
                    return Err(format!("missing required field '{name}'"))
                }
                Some(v) if !v.is_null() && !spec.ty.accepts(v) => {
                    return Err(format!("field '{name}' is not of type {:?}", spec.ty))
                }
                _ => {}
            }
        }
        if let Some(extra) = obj.keys().find(|k| !self.0.contains_key(*k)) {
            return Err(format!("unexpected field '{extra}'"));
        }
        Ok(())
    }

    fn of(fields: &[(&str, FieldType, bool)]) -> Self {
        Schema(
            fields
                .iter()
                .map(|&(n, ty, required)| (n.to_string(), FieldSpec { ty, required }))
                .collect(),
        )
    }
}

/// Registry entry as it appears in the tool config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub args: Schema,
    pub result: Schema,
    /// Name of the handler binding.
    pub handler: String,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}

pub trait ToolHandler: Send + Sync {
    fn call(&self, args: &Args) -> Result<Args, String>;
}

impl<F> ToolHandler for F
where
    F: Fn(&Args) -> Result<Args, String> + Send + Sync,
{
    fn call(&self, args: &Args) -> Result<Args, String> {
        self(args)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolError {
    #[error("unknown tool '{0}'")]
    UnknownTool(String),
    #[error("invalid arguments: {0}")]
    InvalidArguments(String),
    #[error("timeout after {0} ms")]
    Timeout(u64),
    #[error("schema-invalid output: {0}")]
    InvalidOutput(String),
    #[error("handler failed: {0}")]
    Handler(String),
    #[error("tool config: {0}")]
    Config(String),
}

struct Entry {
    spec: ToolSpec,
    handler: Arc<dyn ToolHandler>,
}

#[derive(Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, Entry>,
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.tools.keys()).finish()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        spec: ToolSpec,
        handler: Arc<dyn ToolHandler>,
    ) -> Result<(), ToolError> {
        if self.tools.contains_key(&spec.name) {
            return Err(ToolError::Config(format!(
                "tool '{}' registered twice",
                spec.name
            )));
        }
        self.tools
            .insert(spec.name.clone(), Entry { spec, handler });
        Ok(())
    }

    /// Builds a registry from config specs, resolving each `handler` name
    /// against `bindings`.
    pub fn from_specs(
        specs: Vec<ToolSpec>,
        bindings: &BTreeMap<String, Arc<dyn ToolHandler>>,
    ) -> Result<Self, ToolError> {
        let mut reg = Self::new();
        for spec in specs {
            let handler = bindings.get(&spec.handler).cloned().ok_or_else(|| {
                ToolError::Config(format!("no handler bound to '{}'", spec.handler))
            })?;
            reg.register(spec, handler)?;
        }
        Ok(reg)
    }

    /// The shipped stub tools: `weather`, `logistics_eta`, `price_history`.
    pub fn builtin() -> Self {
        Self::from_specs(builtin_specs(), &stub_bindings(StubTables::shipped()))
            .expect("builtin tool specs are consistent")
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.keys().map(String::as_str)
    }

    pub fn spec(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.get(name).map(|e| &e.spec)
    }

    pub fn invoke(&self, name: &str, args: &Args) -> Result<Args, ToolError> {
        let entry = self
            .tools
            .get(name)
            .ok_or_else(|| ToolError::UnknownTool(name.to_string()))?;
        entry
            .spec
            .args
            .validate(args)
            .map_err(ToolError::InvalidArguments)?;

        let (tx, rx) = mpsc::channel();
        let handler = entry.handler.clone();
        let owned = args.clone();
        // a hung handler is abandoned, not joined
        thread::spawn(move || {
            let _ = tx.send(handler.call(&owned));
        });
        let timeout = entry.spec.timeout_ms;
        let out = match rx.recv_timeout(Duration::from_millis(timeout)) {
            Ok(r) => r.map_err(ToolError::Handler)?,
            Err(_) => return Err(ToolError::Timeout(timeout)),
        };
        entry
            .spec
            .result
            .validate(&out)
            .map_err(ToolError::InvalidOutput)?;
        Ok(out)
    }
}

pub fn builtin_specs() -> Vec<ToolSpec> {
    use FieldType::*;
    vec![
        ToolSpec {
            name: "logistics_eta".into(),
            description: "Estimated delivery days to a postal code".into(),
            args: Schema::of(&[("zip", String, false), ("deadline", String, false)]),
            result: Schema::of(&[
                ("eta_days", Integer, true),
                ("zip", String, true),
                ("deadline", String, false),
            ]),
            handler: "logistics_eta_stub".into(),
            timeout_ms: DEFAULT_TIMEOUT_MS,
        },
        ToolSpec {
            name: "price_history".into(),
            description: "Recent price points for a product".into(),
            args: Schema::of(&[("product_id", String, false), ("products", Array, false)]),
            result: Schema::of(&[
                ("product_id", String, true),
                ("current_price", Number, true),
                ("history", Array, true),
                ("trend", String, true),
            ]),
            handler: "price_history_stub".into(),
            timeout_ms: DEFAULT_TIMEOUT_MS,
        },
        ToolSpec {
            name: "weather".into(),
            description: "Current conditions for a city".into(),
            args: Schema::of(&[("city", String, false)]),
            result: Schema::of(&[
                ("city", String, true),
                ("condition", String, true),
                ("temp_c", Number, true),
            ]),
            handler: "weather_stub".into(),
            timeout_ms: DEFAULT_TIMEOUT_MS,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct StubTables {
    pub weather: BTreeMap<String, Value>,
    pub logistics_eta: BTreeMap<String, u64>,
    pub price_history: PriceHistoryTable,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PriceHistoryTable {
    pub multipliers: Vec<f64>,
}

const SHIPPED_STUBS: &str = include_str!("../../fixtures/tool_stubs.json");

impl StubTables {
    pub fn shipped() -> Self {
        serde_json::from_str(SHIPPED_STUBS).expect("shipped stub tables parse")
    }
}

fn lookup<'a, T>(table: &'a BTreeMap<String, T>, key: &str) -> Option<&'a T> {
    table.get(key).or_else(|| table.get("*"))
}

fn str_arg<'a>(args: &'a Args, name: &str) -> Option<&'a str> {
    args.get(name).and_then(Value::as_str)
}

fn to_map(v: Value) -> Args {
    match v {
        Value::Object(m) => m,
        _ => Args::new(),
    }
}

pub fn stub_bindings(tables: StubTables) -> BTreeMap<String, Arc<dyn ToolHandler>> {
    let tables = Arc::new(tables);
    let mut out: BTreeMap<String, Arc<dyn ToolHandler>> = BTreeMap::new();

    let t = tables.clone();
    out.insert(
        "weather_stub".into(),
        Arc::new(move |args: &Args| {
            let city = str_arg(args, "city").unwrap_or("unknown").to_lowercase();
            let row = lookup(&t.weather, &city).ok_or("no weather row")?;
            let mut m = to_map(row.clone());
            m.insert("city".into(), json!(city));
            Ok(m)
        }),
    );

    let t = tables.clone();
    out.insert(
        "logistics_eta_stub".into(),
        Arc::new(move |args: &Args| {
            let zip = str_arg(args, "zip").unwrap_or("").to_string();
            let eta = *lookup(&t.logistics_eta, &zip).ok_or("no eta row")?;
            let mut m = to_map(json!({ "eta_days": eta, "zip": zip }));
            if let Some(d) = str_arg(args, "deadline") {
                m.insert("deadline".into(), json!(d));
            }
            Ok(m)
        }),
    );

    let t = tables;
    out.insert(
        "price_history_stub".into(),
        Arc::new(move |args: &Args| {
            let first = args
                .get("products")
                .and_then(Value::as_array)
                .and_then(|a| a.first());
            let (id, price) = match (str_arg(args, "product_id"), first) {
                (Some(id), _) => (id.to_string(), None),
                (None, Some(p)) => (
                    p.get("id")
                        .and_then(Value::as_str)
                        .unwrap_or_default()
                        .to_string(),
                    p.get("price").and_then(Value::as_f64),
                ),
                (None, None) => return Err("no product to look up".to_string()),
            };
            let current = price.unwrap_or(100.0);
            let history: Vec<f64> = t
                .price_history
                .multipliers
                .iter()
                .map(|m| (current * m * 100.0).round() / 100.0)
                .collect();
            let oldest = history.first().copied().unwrap_or(current);
            let trend = if current < oldest * 0.98 {
                "falling"
            } else if current > oldest * 1.02 {
                "rising"
            } else {
                "flat"
            };
            Ok(to_map(json!({
                "product_id": id,
                "current_price": current,
                "history": history,
                "trend": trend,
            })))
        }),
    );
    out
}
